//! System parameters and the flat `key = value` config file.
//!
//! Powers and noise levels are held in linear watts. The config file speaks
//! dBm/dB; conversion happens in [`SystemConfig::from_kv_str`] and
//! [`SystemConfig::to_kv_string`] only.

use std::fmt::Write as _;
use std::ops::Deref;

use crate::channel::{Geometry, Point};
use crate::error::{Error, Result};
use crate::units::{db_to_linear, dbm_to_watts, linear_to_db, watts_to_dbm};

/// Path-loss exponents of the four link classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossExponents {
    pub bs_ris: f64,
    pub ris_user: f64,
    pub bs_user: f64,
    pub user_user: f64,
}

impl Default for PathLossExponents {
    fn default() -> Self {
        Self { bs_ris: 2.1, ris_user: 2.2, bs_user: 4.0, user_user: 3.1 }
    }
}

/// Stopping tolerances.
///
/// `eps1` stops the WMMSE loop, `eps2` the successive-convex-approximation
/// re-expansion loop, `eps3` the ES/TS outer loop and the MS binarity test,
/// `eps4` the MS outer loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub eps4: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { eps1: 1e-3, eps2: 1e-3, eps3: 1e-4, eps4: 1e-3 }
    }
}

/// Every scalar parameter of the system. Construct freely, then call
/// [`validate_config`] to obtain a [`ValidatedConfig`], which is what every
/// algorithm takes.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// BS antenna count.
    pub n_t: usize,
    /// STAR-RIS element count.
    pub m: usize,
    /// Downlink user count. The model is fixed at two.
    pub k_dl: usize,
    /// Uplink user count. The model is fixed at two.
    pub l_ul: usize,
    /// Max BS transmit power, W.
    pub p_max_bs: f64,
    /// Max transmit power of each uplink user, W.
    pub p_max_ul: f64,
    /// Noise power at either downlink user, W.
    pub sigma2_dl: f64,
    /// Noise power per BS antenna, W.
    pub sigma2_ul: f64,
    /// Residual self-interference channel variance (linear).
    pub sigma2_rsi: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Rician factor (linear).
    pub kappa: f64,
    pub path_loss: PathLossExponents,
    pub geometry: Geometry,
    /// Element spacing over wavelength.
    pub spacing_ratio: f64,
    pub tolerances: Tolerances,
    /// Initial binary-penalty factor for mode selection.
    pub mu0: f64,
    /// Penalty growth factor.
    pub omega: f64,
    pub max_outer: usize,
    /// Cap for the WMMSE loop and the re-expansion (SCA) loop.
    pub max_inner: usize,
    pub seed: u64,
    /// Simplex spacing of the time-fraction search.
    pub ts_grid_step: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_t: 4,
            m: 16,
            k_dl: 2,
            l_ul: 2,
            p_max_bs: dbm_to_watts(35.0),
            p_max_ul: dbm_to_watts(11.0),
            sigma2_dl: dbm_to_watts(-100.0),
            sigma2_ul: dbm_to_watts(-110.0),
            sigma2_rsi: dbm_to_watts(-95.0),
            alpha1: 0.5,
            alpha2: 0.5,
            kappa: db_to_linear(4.0),
            path_loss: PathLossExponents::default(),
            geometry: Geometry {
                bs: Point::new(0.0, 0.0),
                ris: Point::new(120.0, 0.0),
                u1: Point::new(120.0, 5.0),
                u2: Point::new(120.0, -5.0),
            },
            spacing_ratio: 0.5,
            tolerances: Tolerances::default(),
            mu0: 0.01,
            omega: 10.0,
            max_outer: 100,
            max_inner: 500,
            seed: 1,
            ts_grid_step: 0.05,
        }
    }
}

/// A [`SystemConfig`] whose invariants have been checked.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig(SystemConfig);

impl Deref for ValidatedConfig {
    type Target = SystemConfig;

    fn deref(&self) -> &SystemConfig {
        &self.0
    }
}

impl ValidatedConfig {
    pub fn into_inner(self) -> SystemConfig {
        self.0
    }

    /// Clone, edit, and re-validate.
    pub fn with(&self, edit: impl FnOnce(&mut SystemConfig)) -> Result<ValidatedConfig> {
        let mut raw = self.0.clone();
        edit(&mut raw);
        validate_config(raw)
    }
}

impl Default for ValidatedConfig {
    fn default() -> Self {
        validate_config(SystemConfig::default()).expect("default config is valid")
    }
}

fn positive(field: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be finite and > 0, got {value}")))
    }
}

/// Checks every invariant and returns the config on success. The error names
/// the first violated field.
pub fn validate_config(cfg: SystemConfig) -> Result<ValidatedConfig> {
    if cfg.n_t < 1 {
        return Err(Error::config("nt", "at least one BS antenna required"));
    }
    if cfg.m < 1 {
        return Err(Error::config("m", "at least one STAR-RIS element required"));
    }
    if cfg.k_dl != 2 {
        return Err(Error::config("k_dl", format!("model has exactly 2 downlink users, got {}", cfg.k_dl)));
    }
    if cfg.l_ul != 2 {
        return Err(Error::config("l_ul", format!("model has exactly 2 uplink users, got {}", cfg.l_ul)));
    }
    positive("pmax_bs", cfg.p_max_bs)?;
    positive("pmax_ul", cfg.p_max_ul)?;
    positive("noise_dl", cfg.sigma2_dl)?;
    positive("noise_ul", cfg.sigma2_ul)?;
    positive("rsi", cfg.sigma2_rsi)?;
    positive("rician", cfg.kappa)?;
    for (field, a) in [("alpha1", cfg.alpha1), ("alpha2", cfg.alpha2)] {
        if !(a.is_finite() && a >= 0.0) {
            return Err(Error::config(field, format!("weight must be finite and >= 0, got {a}")));
        }
    }
    if cfg.alpha1 == 0.0 && cfg.alpha2 == 0.0 {
        return Err(Error::config("alpha1", "weights both zero"));
    }
    let ple = cfg.path_loss;
    for (field, e) in [
        ("ple_bs_ris", ple.bs_ris),
        ("ple_ris_user", ple.ris_user),
        ("ple_bs_user", ple.bs_user),
        ("ple_user_user", ple.user_user),
    ] {
        if !(e.is_finite() && e >= 0.0) {
            return Err(Error::config(field, format!("exponent must be finite and >= 0, got {e}")));
        }
    }
    cfg.geometry.validate()?;
    positive("spacing_ratio", cfg.spacing_ratio)?;
    let t = cfg.tolerances;
    positive("eps1", t.eps1)?;
    positive("eps2", t.eps2)?;
    positive("eps3", t.eps3)?;
    positive("eps4", t.eps4)?;
    if !(cfg.mu0.is_finite() && cfg.mu0 > 0.0) {
        return Err(Error::config("mu0", format!("penalty factor must be > 0, got {}", cfg.mu0)));
    }
    if !(cfg.omega.is_finite() && cfg.omega > 1.0) {
        return Err(Error::config("omega", "penalty growth must exceed 1"));
    }
    if cfg.max_outer < 1 {
        return Err(Error::config("max_outer", "must be >= 1"));
    }
    if cfg.max_inner < 1 {
        return Err(Error::config("max_inner", "must be >= 1"));
    }
    if !(cfg.ts_grid_step > 0.0 && cfg.ts_grid_step <= 0.5) {
        return Err(Error::config("grid_step", format!("must lie in (0, 0.5], got {}", cfg.ts_grid_step)));
    }
    Ok(ValidatedConfig(cfg))
}

/// Keys accepted by the config file, in canonical output order.
pub const CONFIG_KEYS: [&str; 31] = [
    "nt",
    "m",
    "pmax_bs_dbm",
    "pmax_ul_dbm",
    "noise_dl_dbm",
    "noise_ul_dbm",
    "rsi_dbm",
    "rician_db",
    "alpha1",
    "alpha2",
    "ple_bs_ris",
    "ple_ris_user",
    "ple_bs_user",
    "ple_user_user",
    "bs_x",
    "bs_y",
    "ris_x",
    "ris_y",
    "u1_x",
    "u1_y",
    "u2_x",
    "u2_y",
    "eps1",
    "eps2",
    "eps3",
    "eps4",
    "mu0",
    "omega",
    "max_outer",
    "max_inner",
    "seed",
];

fn parse_f64(line: usize, key: &str, value: &str) -> Result<f64> {
    value.parse::<f64>().map_err(|_| Error::Parse { line, reason: format!("`{key}` expects a number, got `{value}`") })
}

fn parse_usize(line: usize, key: &str, value: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| Error::Parse { line, reason: format!("`{key}` expects a non-negative integer, got `{value}`") })
}

impl SystemConfig {
    /// Applies one `key = value` assignment. Values use the file's units (dBm, dB).
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_key_at(0, key, value)
    }

    fn set_key_at(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        let f = |v: &str| parse_f64(line, key, v);
        match key {
            "nt" => self.n_t = parse_usize(line, key, value)?,
            "m" => self.m = parse_usize(line, key, value)?,
            "pmax_bs_dbm" => self.p_max_bs = dbm_to_watts(f(value)?),
            "pmax_ul_dbm" => self.p_max_ul = dbm_to_watts(f(value)?),
            "noise_dl_dbm" => self.sigma2_dl = dbm_to_watts(f(value)?),
            "noise_ul_dbm" => self.sigma2_ul = dbm_to_watts(f(value)?),
            "rsi_dbm" => self.sigma2_rsi = dbm_to_watts(f(value)?),
            "rician_db" => self.kappa = db_to_linear(f(value)?),
            "alpha1" => self.alpha1 = f(value)?,
            "alpha2" => self.alpha2 = f(value)?,
            "ple_bs_ris" => self.path_loss.bs_ris = f(value)?,
            "ple_ris_user" => self.path_loss.ris_user = f(value)?,
            "ple_bs_user" => self.path_loss.bs_user = f(value)?,
            "ple_user_user" => self.path_loss.user_user = f(value)?,
            "bs_x" => self.geometry.bs.x = f(value)?,
            "bs_y" => self.geometry.bs.y = f(value)?,
            "ris_x" => self.geometry.ris.x = f(value)?,
            "ris_y" => self.geometry.ris.y = f(value)?,
            "u1_x" => self.geometry.u1.x = f(value)?,
            "u1_y" => self.geometry.u1.y = f(value)?,
            "u2_x" => self.geometry.u2.x = f(value)?,
            "u2_y" => self.geometry.u2.y = f(value)?,
            "eps1" => self.tolerances.eps1 = f(value)?,
            "eps2" => self.tolerances.eps2 = f(value)?,
            "eps3" => self.tolerances.eps3 = f(value)?,
            "eps4" => self.tolerances.eps4 = f(value)?,
            "mu0" => self.mu0 = f(value)?,
            "omega" => self.omega = f(value)?,
            "max_outer" => self.max_outer = parse_usize(line, key, value)?,
            "max_inner" => self.max_inner = parse_usize(line, key, value)?,
            "seed" => {
                self.seed = value.parse::<u64>().map_err(|_| Error::Parse {
                    line,
                    reason: format!("`seed` expects an unsigned integer, got `{value}`"),
                })?
            }
            _ => return Err(Error::Parse { line, reason: format!("unknown key `{key}`") }),
        }
        Ok(())
    }

    /// Parses the flat config format on top of the defaults. Blank lines and
    /// `#` comments (whole-line or trailing) are ignored; later assignments win.
    pub fn from_kv_str(text: &str) -> Result<SystemConfig> {
        let mut cfg = SystemConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set_key_at(line_no, key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<SystemConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_kv_str(&text)
    }

    /// Serializes to the config file format.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("nt", self.n_t.to_string());
        put("m", self.m.to_string());
        put("pmax_bs_dbm", format!("{}", watts_to_dbm(self.p_max_bs)));
        put("pmax_ul_dbm", format!("{}", watts_to_dbm(self.p_max_ul)));
        put("noise_dl_dbm", format!("{}", watts_to_dbm(self.sigma2_dl)));
        put("noise_ul_dbm", format!("{}", watts_to_dbm(self.sigma2_ul)));
        put("rsi_dbm", format!("{}", watts_to_dbm(self.sigma2_rsi)));
        put("rician_db", format!("{}", linear_to_db(self.kappa)));
        put("alpha1", format!("{}", self.alpha1));
        put("alpha2", format!("{}", self.alpha2));
        put("ple_bs_ris", format!("{}", self.path_loss.bs_ris));
        put("ple_ris_user", format!("{}", self.path_loss.ris_user));
        put("ple_bs_user", format!("{}", self.path_loss.bs_user));
        put("ple_user_user", format!("{}", self.path_loss.user_user));
        let g = &self.geometry;
        put("bs_x", format!("{}", g.bs.x));
        put("bs_y", format!("{}", g.bs.y));
        put("ris_x", format!("{}", g.ris.x));
        put("ris_y", format!("{}", g.ris.y));
        put("u1_x", format!("{}", g.u1.x));
        put("u1_y", format!("{}", g.u1.y));
        put("u2_x", format!("{}", g.u2.x));
        put("u2_y", format!("{}", g.u2.y));
        put("eps1", format!("{}", self.tolerances.eps1));
        put("eps2", format!("{}", self.tolerances.eps2));
        put("eps3", format!("{}", self.tolerances.eps3));
        put("eps4", format!("{}", self.tolerances.eps4));
        put("mu0", format!("{}", self.mu0));
        put("omega", format!("{}", self.omega));
        put("max_outer", self.max_outer.to_string());
        put("max_inner", self.max_inner.to_string());
        put("seed", self.seed.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_defaults_accepted() {
        let cfg = validate_config(SystemConfig::default()).unwrap();
        assert!((cfg.p_max_bs - 3.162).abs() < 1e-3);
        assert!((cfg.p_max_ul - 12.59e-3).abs() < 1e-5);
        assert!((cfg.kappa - 2.512).abs() < 1e-3);
        assert_eq!(cfg.sigma2_dl, dbm_to_watts(-100.0));
        assert_eq!(cfg.tolerances, Tolerances { eps1: 1e-3, eps2: 1e-3, eps3: 1e-4, eps4: 1e-3 });
    }

    #[test]
    fn zero_weights_rejected() {
        let cfg = SystemConfig { alpha1: 0.0, alpha2: 0.0, ..Default::default() };
        let err = validate_config(cfg).unwrap_err();
        assert!(err.to_string().contains("weights both zero"), "{err}");
    }

    #[test]
    fn slow_penalty_growth_rejected() {
        let cfg = SystemConfig { omega: 0.5, ..Default::default() };
        let err = validate_config(cfg).unwrap_err();
        assert!(err.to_string().contains("penalty growth must exceed 1"), "{err}");
    }

    #[test]
    fn first_violation_is_named() {
        let cfg = SystemConfig { n_t: 0, sigma2_ul: -1.0, ..Default::default() };
        match validate_config(cfg).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "nt"),
            other => panic!("unexpected {other:?}"),
        }
        let cfg = SystemConfig { sigma2_rsi: 0.0, ..Default::default() };
        match validate_config(cfg).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "rsi"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = SystemConfig { m: 32, ..SystemConfig::default() };
        cfg.geometry.ris.x = 80.0;
        cfg.seed = 99;
        let text = cfg.to_kv_string();
        let back = SystemConfig::from_kv_str(&text).unwrap();
        assert_eq!(back.m, 32);
        assert_eq!(back.seed, 99);
        assert_eq!(back.geometry.ris.x, 80.0);
        assert!(((back.p_max_bs - cfg.p_max_bs) / cfg.p_max_bs).abs() < 1e-12);
        assert!(((back.sigma2_rsi - cfg.sigma2_rsi) / cfg.sigma2_rsi).abs() < 1e-12);
    }

    #[test]
    fn kv_comments_and_errors() {
        let cfg = SystemConfig::from_kv_str("# header\n\nm = 8  # trailing\npmax_bs_dbm=30\n").unwrap();
        assert_eq!(cfg.m, 8);
        assert!((cfg.p_max_bs - 1.0).abs() < 1e-12);
        assert!(matches!(SystemConfig::from_kv_str("bogus = 1"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(SystemConfig::from_kv_str("m = 4\nnt = four"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(SystemConfig::from_kv_str("m 4"), Err(Error::Parse { .. })));
    }
}
