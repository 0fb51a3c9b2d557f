//! Large-scale path loss, ULA steering vectors and Rician/Rayleigh fading.

use crate::config::ValidatedConfig;
use crate::error::{Error, Result};
use crate::linalg::{cvec_from_fn, CMatrix, CVector, C64};
use crate::model::ChannelSet;
use crate::rng::StreamRng;

/// Distances below this are treated as co-located nodes.
pub const MIN_DISTANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Node positions in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub bs: Point,
    pub ris: Point,
    pub u1: Point,
    pub u2: Point,
}

impl Geometry {
    /// Rejects non-finite coordinates and any pair of nodes closer than
    /// [`MIN_DISTANCE`].
    pub fn validate(&self) -> Result<()> {
        let nodes = [("bs", self.bs), ("ris", self.ris), ("u1", self.u1), ("u2", self.u2)];
        for (name, p) in nodes {
            if !(p.x.is_finite() && p.y.is_finite()) {
                return Err(Error::Domain(format!("{name} position is not finite")));
            }
        }
        for i in 0..nodes.len() {
            for j in i + 1..nodes.len() {
                let d = nodes[i].1.distance(&nodes[j].1);
                if d < MIN_DISTANCE {
                    return Err(Error::Domain(format!(
                        "{} and {} are {d:e} m apart (minimum {MIN_DISTANCE} m)",
                        nodes[i].0, nodes[j].0
                    )));
                }
            }
        }
        Ok(())
    }

    /// Moves each user to a uniform point of a disc of `radius` around its
    /// current position.
    pub fn scatter_users(&self, radius: f64, rng: &mut StreamRng) -> Geometry {
        let mut jitter = |c: Point| {
            let r = radius * rng.uniform().sqrt();
            let (s, co) = rng.angle().sin_cos();
            Point::new(c.x + r * co, c.y + r * s)
        };
        let u1 = jitter(self.u1);
        let u2 = jitter(self.u2);
        Geometry { u1, u2, ..*self }
    }
}

/// Large-scale gain in dB: `−35.6 − 10·α·log10(d)`.
pub fn path_loss_db(d: f64, alpha: f64) -> Result<f64> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::Domain(format!("distance must be > 0, got {d}")));
    }
    Ok(-35.6 - 10.0 * alpha * d.log10())
}

/// Amplitude factor `√(10^{PL/10})`.
pub fn path_loss_amplitude(d: f64, alpha: f64) -> Result<f64> {
    Ok(10f64.powf(path_loss_db(d, alpha)? / 20.0))
}

/// ULA response: entry `i` is `exp(j 2π · spacing · i · sin θ)`.
pub fn steering_vector(n: usize, theta: f64, spacing_ratio: f64) -> Result<CVector> {
    if n == 0 {
        return Err(Error::Domain("steering vector needs n >= 1".into()));
    }
    let k = std::f64::consts::TAU * spacing_ratio * theta.sin();
    Ok(cvec_from_fn(n, |i| if i == 0 { C64::new(1.0, 0.0) } else { C64::from_polar(1.0, k * i as f64) }))
}

fn rician_weights(kappa: f64) -> Result<(f64, f64)> {
    if kappa.is_nan() || kappa < 0.0 {
        return Err(Error::Domain(format!("Rician factor must be >= 0, got {kappa}")));
    }
    if kappa.is_infinite() {
        return Ok((1.0, 0.0));
    }
    Ok(((kappa / (1.0 + kappa)).sqrt(), (1.0 / (1.0 + kappa)).sqrt()))
}

/// `√(κ/(1+κ))·b_rows(θ_A)·b_colsᴴ(θ_D) + √(1/(1+κ))·NLOS` with both angles
/// uniform on `[0, 2π)`. Draws the arrival angle, the departure angle, then the
/// NLOS entries in row-major order.
pub fn rician_matrix(rows: usize, cols: usize, kappa: f64, spacing_ratio: f64, rng: &mut StreamRng) -> Result<CMatrix> {
    let (los_w, nlos_w) = rician_weights(kappa)?;
    let a = steering_vector(rows, rng.angle(), spacing_ratio)?;
    let d = steering_vector(cols, rng.angle(), spacing_ratio)?;
    let mut out = CMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let nlos = rng.complex_normal();
            out[(i, j)] = a[i] * d[j].conj() * los_w + nlos * nlos_w;
        }
    }
    Ok(out)
}

/// Vector variant of [`rician_matrix`] without the departure factor.
pub fn rician_vector(n: usize, kappa: f64, spacing_ratio: f64, rng: &mut StreamRng) -> Result<CVector> {
    let (los_w, nlos_w) = rician_weights(kappa)?;
    let a = steering_vector(n, rng.angle(), spacing_ratio)?;
    Ok(cvec_from_fn(n, |i| a[i] * los_w + rng.complex_normal() * nlos_w))
}

/// i.i.d. CN(0, 1) entries.
pub fn rayleigh_vector(n: usize, rng: &mut StreamRng) -> CVector {
    cvec_from_fn(n, |_| rng.complex_normal())
}

/// Draws every link for `geometry`.
///
/// The first draw of `rng` seeds a child stream for the direct links
/// `f1, f2, f3`, so they do not depend on `M`; the surface links follow from
/// `rng` in the order `h_d, h_u, v_d, v_u, g_d, g_u`.
pub fn generate_channel_set(geometry: &Geometry, cfg: &ValidatedConfig, rng: &mut StreamRng) -> Result<ChannelSet> {
    geometry.validate()?;
    let (m, n_t) = (cfg.m, cfg.n_t);
    let ple = cfg.path_loss;
    let sp = cfg.spacing_ratio;
    let k = cfg.kappa;
    let g = geometry;

    let c_bs_ris = C64::from(path_loss_amplitude(g.bs.distance(&g.ris), ple.bs_ris)?);
    let c_ris_u1 = C64::from(path_loss_amplitude(g.ris.distance(&g.u1), ple.ris_user)?);
    let c_ris_u2 = C64::from(path_loss_amplitude(g.ris.distance(&g.u2), ple.ris_user)?);
    let c_bs_u1 = C64::from(path_loss_amplitude(g.bs.distance(&g.u1), ple.bs_user)?);
    let c_bs_u2 = C64::from(path_loss_amplitude(g.bs.distance(&g.u2), ple.bs_user)?);
    let c_u1_u2 = C64::from(path_loss_amplitude(g.u1.distance(&g.u2), ple.user_user)?);

    let mut direct = StreamRng::new(rng.next_u64());
    let h_d = rician_matrix(m, n_t, k, sp, rng)? * c_bs_ris;
    let h_u = rician_matrix(m, n_t, k, sp, rng)? * c_bs_ris;
    let v_d = rician_vector(m, k, sp, rng)? * c_ris_u1;
    let v_u = rician_vector(m, k, sp, rng)? * c_ris_u1;
    let g_d = rician_vector(m, k, sp, rng)? * c_ris_u2;
    let g_u = rician_vector(m, k, sp, rng)? * c_ris_u2;
    let f1 = rayleigh_vector(n_t, &mut direct) * c_bs_u1;
    let f2 = rayleigh_vector(n_t, &mut direct) * c_bs_u2;
    let f3 = direct.complex_normal() * c_u1_u2;
    ChannelSet::new(h_d, v_d, g_d, v_u, g_u, h_u, f1, f2, f3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_loss_hand_values() {
        assert_eq!(path_loss_db(1.0, 2.1).unwrap(), -35.6);
        assert!((path_loss_db(10.0, 4.0).unwrap() + 75.6).abs() < 1e-12);
        let expected = -35.6 - 21.0 * 120f64.log10();
        assert!((path_loss_db(120.0, 2.1).unwrap() - expected).abs() < 1e-12);
        assert!((expected + 79.263).abs() < 1e-3);
        assert!(matches!(path_loss_db(0.0, 2.0), Err(Error::Domain(_))));
        assert!(matches!(path_loss_db(-1.0, 2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn steering_examples() {
        let one = steering_vector(1, 0.7, 0.5).unwrap();
        assert_eq!(one[0], C64::new(1.0, 0.0));
        let flat = steering_vector(4, 0.0, 0.5).unwrap();
        assert!(flat.iter().all(|z| (z - C64::new(1.0, 0.0)).norm() < 1e-15));
        let b = steering_vector(2, std::f64::consts::FRAC_PI_2, 0.5).unwrap();
        assert!((b[1] - C64::new(-1.0, 0.0)).norm() < 1e-15);
        assert!(steering_vector(0, 0.0, 0.5).is_err());
    }

    #[test]
    fn pure_los_has_unit_modulus_entries() {
        let mut rng = StreamRng::new(3);
        let h = rician_matrix(5, 3, f64::INFINITY, 0.5, &mut rng).unwrap();
        assert!(h.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        let v = rician_vector(5, f64::INFINITY, 0.5, &mut rng).unwrap();
        assert!(v.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        assert!(rician_matrix(2, 2, -1.0, 0.5, &mut rng).is_err());
    }

    #[test]
    fn geometry_guards() {
        let cfg = ValidatedConfig::default();
        let mut g = cfg.geometry;
        assert!(g.validate().is_ok());
        g.u1 = Point::new(g.ris.x + 1e-9, g.ris.y);
        assert!(matches!(g.validate(), Err(Error::Domain(_))));
        let mut rng = StreamRng::new(1);
        assert!(generate_channel_set(&g, &cfg, &mut rng).is_err());
    }

    #[test]
    fn scatter_stays_in_disc() {
        let cfg = ValidatedConfig::default();
        let mut rng = StreamRng::new(9);
        for _ in 0..1000 {
            let g = cfg.geometry.scatter_users(10.0, &mut rng);
            assert!(g.u1.distance(&cfg.geometry.u1) <= 10.0);
            assert!(g.u2.distance(&cfg.geometry.u2) <= 10.0);
            assert_eq!(g.ris, cfg.geometry.ris);
        }
    }

    #[test]
    fn shapes_and_determinism() {
        let cfg = ValidatedConfig::default();
        let a = generate_channel_set(&cfg.geometry, &cfg, &mut StreamRng::new(42)).unwrap();
        let b = generate_channel_set(&cfg.geometry, &cfg, &mut StreamRng::new(42)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.h_d().shape(), (cfg.m, cfg.n_t));
        assert_eq!(a.h_u().shape(), (cfg.m, cfg.n_t));
        assert_eq!(a.f1().len(), cfg.n_t);
        let c = generate_channel_set(&cfg.geometry, &cfg, &mut StreamRng::new(43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rayleigh_limit_has_unit_power() {
        let mut rng = StreamRng::new(17);
        let n = 100_000;
        let p: Vec<f64> = (0..n).map(|_| rician_matrix(1, 2, 0.0, 0.5, &mut rng).unwrap()[(0, 1)].norm_sqr()).collect();
        let mean = p.iter().sum::<f64>() / n as f64;
        let se = (p.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0) / n as f64).sqrt();
        assert!((mean - 1.0).abs() <= 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn line_of_sight_fraction_is_recovered() {
        let kappa = 10f64.powf(0.4);
        let mut rng = StreamRng::new(23);
        let n = 100_000;
        let h: Vec<C64> = (0..n).map(|_| rician_vector(1, kappa, 0.5, &mut rng).unwrap()[0]).collect();
        let mean = h.iter().sum::<C64>() / n as f64;
        let re: Vec<f64> = h.iter().map(|z| z.re).collect();
        let se = (re.iter().map(|x| (x - mean.re).powi(2)).sum::<f64>() / (n as f64 - 1.0) / n as f64).sqrt();
        let los = (kappa / (1.0 + kappa)).sqrt();
        assert!((mean.re - los).abs() <= 3.0 * se, "mean {mean}, los amplitude {los}, se {se}");
        assert!((los * los - 0.715).abs() < 1e-3);
    }
}
