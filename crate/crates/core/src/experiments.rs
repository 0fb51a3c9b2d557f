//! Seeded sweeps producing CSV tables.
//!
//! Every cell is one `(scheme, sweep value, seed index)` triple. Its random
//! streams are keyed from the master seed `s` (the config's `seed`) as
//!
//! ```text
//! placement = derive_seed(s, [label_hash("place"), seed_index])
//! channels  = derive_seed(s, [label_hash("channel"), seed_index])
//! algorithm = derive_seed(s, [label_hash("algorithm"), label_hash(scheme), seed_index])
//! ```
//!
//! The sweep value is deliberately not a key, so all values of a sweep see the
//! same realizations and starting points. Cells run concurrently; rows are
//! emitted in scheme order, then sweep value, then seed.
//!
//! Numbers are written with 12 significant digits. Every table ends with a
//! `status` column (`ok`, `cap` or `error`) and a `detail` column holding the
//! error text for failed cells.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::channel::{generate_channel_set, Geometry, Point};
use crate::config::ValidatedConfig;
use crate::error::{Error, Result};
use crate::protocols::{optimize_scheme, Optimized, Scheme};
use crate::rng::{label_hash, StreamRng};
use crate::units::dbm_to_watts;

/// Radius of the user discs in the randomized placements.
pub const USER_DISC_RADIUS: f64 = 10.0;

/// Fixed user positions of the location sweep.
pub const LOCATION_U1: Point = Point::new(120.0, 20.0);
pub const LOCATION_U2: Point = Point::new(120.0, -20.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerAxis {
    Bs,
    Ul,
}

impl std::str::FromStr for PowerAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bs" => Ok(PowerAxis::Bs),
            "ul" => Ok(PowerAxis::Ul),
            other => Err(Error::config("axis", format!("expected bs or ul, got {other:?}"))),
        }
    }
}

/// A CSV table with its cell outcome counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Rows whose run hit an iteration cap.
    pub capped: usize,
    /// Rows recording a failed cell.
    pub errors: usize,
}

impl Table {
    fn new(header: &[&str]) -> Table {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new(), capped: 0, errors: 0 }
    }

    fn push(&mut self, row: Vec<String>) {
        match row[row.len() - 2].as_str() {
            "cap" => self.capped += 1,
            "error" => self.errors += 1,
            _ => {}
        }
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Twelve significant digits.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.11e}")
    }
}

fn sanitize(msg: &str) -> String {
    msg.chars().map(|c| if c == ',' || c == '\n' || c == '"' { ';' } else { c }).collect()
}

fn status_of(o: &Optimized) -> &'static str {
    if o.caps.any() {
        "cap"
    } else {
        "ok"
    }
}

/// Random streams of one cell.
pub fn cell_streams(master: u64, scheme: Scheme, seed_index: usize) -> (StreamRng, StreamRng, StreamRng) {
    let i = seed_index as u64;
    (
        StreamRng::derived(master, &[label_hash("place"), i]),
        StreamRng::derived(master, &[label_hash("channel"), i]),
        StreamRng::derived(master, &[label_hash("algorithm"), label_hash(scheme.name()), i]),
    )
}

/// Places the users, draws the channels and runs `scheme`.
pub fn run_cell(cfg: &ValidatedConfig, scheme: Scheme, seed_index: usize, scatter: bool) -> Result<Optimized> {
    let (mut place, mut chan, mut algo) = cell_streams(cfg.seed, scheme, seed_index);
    let geometry = if scatter { cfg.geometry.scatter_users(USER_DISC_RADIUS, &mut place) } else { cfg.geometry };
    let ch = generate_channel_set(&geometry, cfg, &mut chan)?;
    optimize_scheme(scheme, &ch, cfg, None, &mut algo)
}

fn check_seeds(seeds: usize) -> Result<()> {
    if seeds == 0 {
        return Err(Error::config("seeds", "at least one seed is required"));
    }
    Ok(())
}

/// Outer-iteration WSR traces with users scattered in their discs.
pub fn run_convergence(cfg: &ValidatedConfig, schemes: &[Scheme], seeds: usize) -> Result<Table> {
    check_seeds(seeds)?;
    let cells: Vec<(Scheme, usize)> = schemes.iter().flat_map(|&s| (0..seeds).map(move |i| (s, i))).collect();
    let results: Vec<Result<Optimized>> = cells.par_iter().map(|&(s, i)| run_cell(cfg, s, i, true)).collect();
    let mut t = Table::new(&["scheme", "seed", "outer_iteration", "wsr_bpcu", "status", "detail"]);
    for (&(s, i), r) in cells.iter().zip(results) {
        match r {
            Ok(o) => {
                let st = status_of(&o);
                for &(it, v) in &o.report.trace {
                    t.push(vec![s.name().into(), i.to_string(), it.to_string(), fmt_num(v), st.into(), String::new()]);
                }
            }
            Err(e) => t.push(vec![
                s.name().into(),
                i.to_string(),
                String::new(),
                "nan".into(),
                "error".into(),
                sanitize(&e.to_string()),
            ]),
        }
    }
    Ok(t)
}

const SWEEP_TAIL: [&str; 7] =
    ["seed", "wsr_bpcu", "dl_sum_bpcu", "ul_sum_bpcu", "outer_iterations", "status", "detail"];

fn sweep<V: Sync>(
    schemes: &[Scheme],
    seeds: usize,
    value_column: &str,
    values: &[V],
    fmt_value: impl Fn(&V) -> String,
    cell_config: impl Fn(&V) -> Result<ValidatedConfig> + Sync,
    scatter: bool,
) -> Result<Table> {
    check_seeds(seeds)?;
    let mut cells = Vec::new();
    for &s in schemes {
        for vi in 0..values.len() {
            for i in 0..seeds {
                cells.push((s, vi, i));
            }
        }
    }
    let results: Vec<Result<Optimized>> = cells
        .par_iter()
        .map(|&(s, vi, i)| {
            let c = cell_config(&values[vi])?;
            run_cell(&c, s, i, scatter)
        })
        .collect();
    let mut header = vec!["scheme", value_column];
    header.extend(SWEEP_TAIL);
    let mut t = Table::new(&header);
    for (&(s, vi, i), r) in cells.iter().zip(results) {
        let mut row = vec![s.name().to_string(), fmt_value(&values[vi]), i.to_string()];
        match r {
            Ok(o) => {
                row.extend([
                    fmt_num(o.report.wsr),
                    fmt_num(o.report.dl_sum),
                    fmt_num(o.report.ul_sum),
                    o.outer_iterations.to_string(),
                    status_of(&o).to_string(),
                    String::new(),
                ]);
            }
            Err(e) => {
                row.extend(["nan", "nan", "nan", ""].map(String::from));
                row.push("error".into());
                row.push(sanitize(&e.to_string()));
            }
        }
        t.push(row);
    }
    Ok(t)
}

/// WSR against the number of surface elements, users scattered in their discs.
pub fn sweep_elements(cfg: &ValidatedConfig, m_values: &[usize], schemes: &[Scheme], seeds: usize) -> Result<Table> {
    sweep(schemes, seeds, "m", m_values, |m| m.to_string(), |&m| cfg.with(|c| c.m = m), true)
}

/// WSR against the surface position `(x, 0)` with the users fixed at
/// `(120, ±20)`.
pub fn sweep_location(cfg: &ValidatedConfig, x_values: &[f64], schemes: &[Scheme], seeds: usize) -> Result<Table> {
    let base = Geometry { u1: LOCATION_U1, u2: LOCATION_U2, ..cfg.geometry };
    sweep(
        schemes,
        seeds,
        "x",
        x_values,
        |x| fmt_num(*x),
        |&x| {
            let g = Geometry { ris: Point::new(x, 0.0), ..base };
            g.validate()?;
            cfg.with(|c| c.geometry = g)
        },
        false,
    )
}

/// WSR and per-direction sums against the BS or uplink power budget in dBm,
/// users scattered in their discs.
pub fn sweep_power(
    cfg: &ValidatedConfig,
    axis: PowerAxis,
    dbm_values: &[f64],
    schemes: &[Scheme],
    seeds: usize,
) -> Result<Table> {
    sweep(
        schemes,
        seeds,
        "dbm",
        dbm_values,
        |v| fmt_num(*v),
        |&v| {
            cfg.with(|c| match axis {
                PowerAxis::Bs => c.p_max_bs = dbm_to_watts(v),
                PowerAxis::Ul => c.p_max_ul = dbm_to_watts(v),
            })
        },
        true,
    )
}

/// Column means of `column` per `(scheme, value)` group over seeds, skipping
/// failed rows; keyed by the scheme name and the formatted value.
pub fn group_means(t: &Table, value_column: &str, column: &str) -> Vec<(String, String, f64)> {
    let idx = |name: &str| t.header.iter().position(|h| h == name);
    let (Some(vi), Some(ci)) = (idx(value_column), idx(column)) else {
        return Vec::new();
    };
    let mut out: Vec<(String, String, f64, usize)> = Vec::new();
    for r in &t.rows {
        let Ok(v) = r[ci].parse::<f64>() else { continue };
        if v.is_nan() {
            continue;
        }
        match out.iter_mut().find(|e| e.0 == r[0] && e.1 == r[vi]) {
            Some(e) => {
                e.2 += v;
                e.3 += 1;
            }
            None => out.push((r[0].clone(), r[vi].clone(), v, 1)),
        }
    }
    out.into_iter().map(|(s, v, sum, n)| (s, v, sum / n as f64)).collect()
}

/// Human-readable one-line summary of a table.
pub fn summary(t: &Table) -> String {
    let mut s = String::new();
    let _ = write!(s, "{} rows, {} capped, {} errors", t.rows.len(), t.capped, t.errors);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(1.0), "1.00000000000e0");
        assert_eq!(fmt_num(-0.000123456789012345), "-1.23456789012e-4");
        assert_eq!(fmt_num(f64::NAN), "nan");
    }

    #[test]
    fn empty_scheme_list_gives_header_only() {
        let cfg = ValidatedConfig::default();
        let t = run_convergence(&cfg, &[], 3).unwrap();
        assert_eq!(t.to_csv(), "scheme,seed,outer_iteration,wsr_bpcu,status,detail\n");
        assert!(run_convergence(&cfg, &[Scheme::Es], 0).is_err());
    }

    #[test]
    fn streams_ignore_the_sweep_value() {
        let (mut a, _, mut c) = cell_streams(5, Scheme::Es, 2);
        let (mut b, _, mut d) = cell_streams(5, Scheme::Es, 2);
        assert_eq!(a.next_u64(), b.next_u64());
        assert_eq!(c.next_u64(), d.next_u64());
        let (_, _, mut e) = cell_streams(5, Scheme::Ms, 2);
        assert_ne!(cell_streams(5, Scheme::Es, 2).2.next_u64(), e.next_u64());
    }

    #[test]
    fn odd_m_conventional_row_is_an_error_record() {
        let cfg = ValidatedConfig::default().with(|c| c.max_outer = 3).unwrap();
        let t = sweep_elements(&cfg, &[3, 4], &[Scheme::ConventionalRis], 1).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0][7], "error");
        assert_ne!(t.rows[1][7], "error");
        assert_eq!(t.errors, 1);
    }

    #[test]
    fn means_by_group() {
        let mut t = Table::new(&["scheme", "m", "seed", "wsr_bpcu", "status", "detail"]);
        for (m, v) in [("8", "1"), ("8", "3"), ("16", "5")] {
            t.push(vec!["es".into(), m.into(), "0".into(), v.into(), "ok".into(), String::new()]);
        }
        let g = group_means(&t, "m", "wsr_bpcu");
        assert_eq!(g, vec![("es".into(), "8".into(), 2.0), ("es".into(), "16".into(), 5.0)]);
    }
}
