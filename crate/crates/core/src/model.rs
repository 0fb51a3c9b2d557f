//! Validated value types shared by every stage: channels, surface
//! coefficients, allocation state, and rate reports.

use crate::config::ValidatedConfig;
use crate::error::{Error, Result};
use crate::linalg::{all_finite_mat, all_finite_vec, cvec_zeros, norm_sqr, CMatrix, CVector, C64, ZERO};

const FEAS_SLACK: f64 = 1e-9;

/// One realization of every propagation link.
///
/// `h_d` (BS→RIS) and `h_u` (BS-side uplink RIS link) are both `M × N_t`; the
/// uplink cascade uses `h_uᴴ`. Vectors `v_*`, `g_*` have length `M`, the
/// direct links `f1`, `f2` have length `N_t`, and `f3` is the user-to-user gain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub(crate) h_d: CMatrix,
    pub(crate) v_d: CVector,
    pub(crate) g_d: CVector,
    pub(crate) v_u: CVector,
    pub(crate) g_u: CVector,
    pub(crate) h_u: CMatrix,
    pub(crate) f1: CVector,
    pub(crate) f2: CVector,
    pub(crate) f3: C64,
}

impl ChannelSet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        h_d: CMatrix,
        v_d: CVector,
        g_d: CVector,
        v_u: CVector,
        g_u: CVector,
        h_u: CMatrix,
        f1: CVector,
        f2: CVector,
        f3: C64,
    ) -> Result<ChannelSet> {
        let (m, n_t) = h_d.shape();
        if m == 0 || n_t == 0 {
            return Err(Error::Shape("h_d must be non-empty".into()));
        }
        if h_u.shape() != (m, n_t) {
            return Err(Error::Shape(format!("h_u is {:?}, expected {:?}", h_u.shape(), (m, n_t))));
        }
        for (name, v) in [("v_d", &v_d), ("g_d", &g_d), ("v_u", &v_u), ("g_u", &g_u)] {
            if v.len() != m {
                return Err(Error::Shape(format!("{name} has length {}, expected {m}", v.len())));
            }
        }
        for (name, v) in [("f1", &f1), ("f2", &f2)] {
            if v.len() != n_t {
                return Err(Error::Shape(format!("{name} has length {}, expected {n_t}", v.len())));
            }
        }
        let finite = all_finite_mat(&h_d)
            && all_finite_mat(&h_u)
            && [&v_d, &g_d, &v_u, &g_u, &f1, &f2].iter().all(|v| all_finite_vec(v))
            && f3.re.is_finite()
            && f3.im.is_finite();
        if !finite {
            return Err(Error::Domain("channel entries must be finite".into()));
        }
        Ok(ChannelSet { h_d, v_d, g_d, v_u, g_u, h_u, f1, f2, f3 })
    }

    /// All links zero.
    pub fn zeros(n_t: usize, m: usize) -> ChannelSet {
        ChannelSet {
            h_d: CMatrix::zeros(m, n_t),
            v_d: cvec_zeros(m),
            g_d: cvec_zeros(m),
            v_u: cvec_zeros(m),
            g_u: cvec_zeros(m),
            h_u: CMatrix::zeros(m, n_t),
            f1: cvec_zeros(n_t),
            f2: cvec_zeros(n_t),
            f3: ZERO,
        }
    }

    /// The same direct links with every link through the surface removed.
    pub fn without_ris(&self) -> ChannelSet {
        let mut out = ChannelSet::zeros(self.n_t(), self.m());
        out.f1 = self.f1.clone();
        out.f2 = self.f2.clone();
        out.f3 = self.f3;
        out
    }

    pub fn n_t(&self) -> usize {
        self.h_d.ncols()
    }
    pub fn m(&self) -> usize {
        self.h_d.nrows()
    }
    pub fn h_d(&self) -> &CMatrix {
        &self.h_d
    }
    pub fn v_d(&self) -> &CVector {
        &self.v_d
    }
    pub fn g_d(&self) -> &CVector {
        &self.g_d
    }
    pub fn v_u(&self) -> &CVector {
        &self.v_u
    }
    pub fn g_u(&self) -> &CVector {
        &self.g_u
    }
    pub fn h_u(&self) -> &CMatrix {
        &self.h_u
    }
    pub fn f1(&self) -> &CVector {
        &self.f1
    }
    pub fn f2(&self) -> &CVector {
        &self.f2
    }
    pub fn f3(&self) -> C64 {
        self.f3
    }
}

/// Operating protocol of the surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protocol {
    Es,
    Ms,
    Ts,
    EqualEs,
    ConventionalRis,
    None,
}

/// Per-element transmission and reflection coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct StarCoefficients {
    pub(crate) q_t: CVector,
    pub(crate) q_r: CVector,
    pub(crate) protocol: Protocol,
}

impl StarCoefficients {
    /// Checks lengths, finiteness and the per-element energy budget: the pair
    /// sum `|q_t|² + |q_r|² ≤ 1` for simultaneous protocols, `|q| ≤ 1` per
    /// side under time switching.
    pub fn new(q_t: CVector, q_r: CVector, protocol: Protocol) -> Result<StarCoefficients> {
        if q_t.len() != q_r.len() {
            return Err(Error::Shape(format!("q_t has {} entries, q_r has {}", q_t.len(), q_r.len())));
        }
        if !all_finite_vec(&q_t) || !all_finite_vec(&q_r) {
            return Err(Error::Domain("coefficients must be finite".into()));
        }
        for (m, (t, r)) in q_t.iter().zip(q_r.iter()).enumerate() {
            let ok = match protocol {
                Protocol::Ts => t.norm_sqr() <= 1.0 + FEAS_SLACK && r.norm_sqr() <= 1.0 + FEAS_SLACK,
                _ => t.norm_sqr() + r.norm_sqr() <= 1.0 + FEAS_SLACK,
            };
            if !ok {
                return Err(Error::Domain(format!("element {m} exceeds the energy budget")));
            }
        }
        Ok(StarCoefficients { q_t, q_r, protocol })
    }

    /// The absent surface.
    pub fn zeros(m: usize) -> StarCoefficients {
        StarCoefficients { q_t: cvec_zeros(m), q_r: cvec_zeros(m), protocol: Protocol::None }
    }

    pub fn q_t(&self) -> &CVector {
        &self.q_t
    }
    pub fn q_r(&self) -> &CVector {
        &self.q_r
    }
    pub fn protocol(&self) -> Protocol {
        self.protocol
    }
    pub fn m(&self) -> usize {
        self.q_t.len()
    }

    /// `(β_t, β_r)` per element.
    pub fn amplitudes_sq(&self) -> Vec<(f64, f64)> {
        self.q_t.iter().zip(self.q_r.iter()).map(|(t, r)| (t.norm_sqr(), r.norm_sqr())).collect()
    }

    /// Largest deviation of any amplitude from {0, 1} and of any pair sum from 1.
    pub fn binarity_gap(&self) -> f64 {
        self.q_t
            .iter()
            .zip(self.q_r.iter())
            .map(|(t, r)| {
                let (a, b) = (t.norm(), r.norm());
                let off = |x: f64| x.min((1.0 - x).abs());
                off(a).max(off(b)).max((t.norm_sqr() + r.norm_sqr() - 1.0).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Decision variables of the inner problem.
///
/// `tau` is `Some` only under time switching, in which case the budgets are
/// checked in scaled form: `Σ τ_k ‖w_k‖² ≤ P`, `τ_l ρ_l ≤ P_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationState {
    pub(crate) w: [CVector; 2],
    pub(crate) rho: [f64; 2],
    pub(crate) u_comb: [CVector; 2],
    pub(crate) u_det: [C64; 2],
    pub(crate) mu_dl: [f64; 2],
    pub(crate) mu_ul: [f64; 2],
    pub(crate) tau: Option<[f64; 4]>,
}

impl AllocationState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        w: [CVector; 2],
        rho: [f64; 2],
        u_comb: [CVector; 2],
        u_det: [C64; 2],
        mu_dl: [f64; 2],
        mu_ul: [f64; 2],
        tau: Option<[f64; 4]>,
        cfg: &ValidatedConfig,
    ) -> Result<AllocationState> {
        let n_t = cfg.n_t;
        for v in w.iter().chain(u_comb.iter()) {
            if v.len() != n_t {
                return Err(Error::Shape(format!("vector of length {} where N_t = {n_t}", v.len())));
            }
            if !all_finite_vec(v) {
                return Err(Error::Domain("allocation vectors must be finite".into()));
            }
        }
        if rho.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
            return Err(Error::Domain("uplink powers must be finite and >= 0".into()));
        }
        if mu_dl.iter().chain(mu_ul.iter()).any(|&m| !(m.is_finite() && m > 0.0)) {
            return Err(Error::Domain("MMSE weights must be > 0".into()));
        }
        if u_det.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::Domain("detectors must be finite".into()));
        }
        let scale = match tau {
            None => [1.0; 4],
            Some(t) => {
                if t.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                    return Err(Error::Domain("time fractions must lie in [0, 1]".into()));
                }
                if (t.iter().sum::<f64>() - 1.0).abs() > FEAS_SLACK {
                    return Err(Error::Domain("time fractions must sum to 1".into()));
                }
                t
            }
        };
        let bs = scale[0] * norm_sqr(&w[0]) + scale[1] * norm_sqr(&w[1]);
        if bs > cfg.p_max_bs * (1.0 + FEAS_SLACK) {
            return Err(Error::Domain(format!("BS power {bs} exceeds budget {}", cfg.p_max_bs)));
        }
        for l in 0..2 {
            if scale[2 + l] * rho[l] > cfg.p_max_ul * (1.0 + FEAS_SLACK) {
                return Err(Error::Domain(format!("uplink user {} exceeds its power budget", l + 1)));
            }
        }
        Ok(AllocationState { w, rho, u_comb, u_det, mu_dl, mu_ul, tau })
    }

    /// Everything zero, unit weights.
    pub fn silent(n_t: usize) -> AllocationState {
        AllocationState {
            w: [cvec_zeros(n_t), cvec_zeros(n_t)],
            rho: [0.0; 2],
            u_comb: [cvec_zeros(n_t), cvec_zeros(n_t)],
            u_det: [ZERO; 2],
            mu_dl: [1.0; 2],
            mu_ul: [1.0; 2],
            tau: None,
        }
    }

    pub fn w(&self) -> &[CVector; 2] {
        &self.w
    }
    pub fn rho(&self) -> [f64; 2] {
        self.rho
    }
    pub fn u_comb(&self) -> &[CVector; 2] {
        &self.u_comb
    }
    pub fn u_det(&self) -> [C64; 2] {
        self.u_det
    }
    pub fn mu_dl(&self) -> [f64; 2] {
        self.mu_dl
    }
    pub fn mu_ul(&self) -> [f64; 2] {
        self.mu_ul
    }
    pub fn tau(&self) -> Option<[f64; 4]> {
        self.tau
    }
    pub fn bs_power(&self) -> f64 {
        norm_sqr(&self.w[0]) + norm_sqr(&self.w[1])
    }
}

/// Per-stream SINRs and rates, in stream order (DL₁, DL₂, UL₁, UL₂).
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub sinr: [f64; 4],
    pub rates: [f64; 4],
    pub dl_sum: f64,
    pub ul_sum: f64,
    pub wsr: f64,
    /// `(outer iteration, wsr)` pairs; empty for a one-shot evaluation.
    pub trace: Vec<(usize, f64)>,
}

impl RateReport {
    /// Assembles a report from per-stream rates; `wsr = α₁·DL + α₂·UL`.
    pub fn from_rates(sinr: [f64; 4], rates: [f64; 4], alpha1: f64, alpha2: f64) -> RateReport {
        let dl_sum = rates[0] + rates[1];
        let ul_sum = rates[2] + rates[3];
        RateReport { sinr, rates, dl_sum, ul_sum, wsr: alpha1 * dl_sum + alpha2 * ul_sum, trace: Vec::new() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ONE;

    fn cfg() -> ValidatedConfig {
        ValidatedConfig::default()
    }

    #[test]
    fn channel_shapes_are_checked() {
        let ok = ChannelSet::zeros(4, 8);
        assert_eq!((ok.n_t(), ok.m()), (4, 8));
        let bad = ChannelSet::new(
            CMatrix::zeros(8, 4),
            cvec_zeros(7),
            cvec_zeros(8),
            cvec_zeros(8),
            cvec_zeros(8),
            CMatrix::zeros(8, 4),
            cvec_zeros(4),
            cvec_zeros(4),
            ZERO,
        );
        assert!(matches!(bad, Err(Error::Shape(_))));
        let nan = ChannelSet::new(
            CMatrix::zeros(2, 1),
            cvec_zeros(2),
            cvec_zeros(2),
            cvec_zeros(2),
            cvec_zeros(2),
            CMatrix::zeros(2, 1),
            cvec_zeros(1),
            cvec_zeros(1),
            C64::new(f64::NAN, 0.0),
        );
        assert!(matches!(nan, Err(Error::Domain(_))));
    }

    #[test]
    fn star_energy_budget() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v = CVector::from_element(3, C64::new(h, 0.0));
        assert!(StarCoefficients::new(v.clone(), v.clone(), Protocol::Es).is_ok());
        let one = CVector::from_element(3, ONE);
        assert!(StarCoefficients::new(one.clone(), v.clone(), Protocol::Es).is_err());
        assert!(StarCoefficients::new(one.clone(), one.clone(), Protocol::Ts).is_ok());
        assert!(StarCoefficients::new(one.clone(), cvec_zeros(2), Protocol::Ms).is_err());
    }

    #[test]
    fn binarity_gap_of_binary_and_split() {
        let one = CVector::from_element(2, ONE);
        let zero = cvec_zeros(2);
        let s = StarCoefficients::new(one, zero, Protocol::Ms).unwrap();
        assert!(s.binarity_gap() < 1e-15);
        let h = CVector::from_element(2, C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0));
        let s = StarCoefficients::new(h.clone(), h, Protocol::Es).unwrap();
        assert!(s.binarity_gap() > 0.29);
    }

    #[test]
    fn allocation_budgets() {
        let c = cfg();
        let n = c.n_t;
        let w = CVector::from_element(n, C64::new((c.p_max_bs / (2.0 * n as f64)).sqrt(), 0.0));
        let z = cvec_zeros(n);
        let good = AllocationState::new(
            [w.clone(), w.clone()],
            [c.p_max_ul, 0.0],
            [z.clone(), z.clone()],
            [ZERO; 2],
            [1.0; 2],
            [1.0; 2],
            None,
            &c,
        );
        assert!(good.is_ok());
        let hot = AllocationState::new(
            [w.clone() * C64::new(1.01, 0.0), w.clone()],
            [0.0, 0.0],
            [z.clone(), z.clone()],
            [ZERO; 2],
            [1.0; 2],
            [1.0; 2],
            None,
            &c,
        );
        assert!(hot.is_err());
        // Under time switching a quarter slot admits four times the power.
        let ts = AllocationState::new(
            [w.clone() * C64::new(2.0f64.sqrt(), 0.0), w.clone() * C64::new(2.0f64.sqrt(), 0.0)],
            [4.0 * c.p_max_ul, 4.0 * c.p_max_ul],
            [z.clone(), z.clone()],
            [ZERO; 2],
            [1.0; 2],
            [1.0; 2],
            Some([0.25; 4]),
            &c,
        );
        assert!(ts.is_ok());
        let bad_tau = AllocationState::new(
            [z.clone(), z.clone()],
            [0.0; 2],
            [z.clone(), z.clone()],
            [ZERO; 2],
            [1.0; 2],
            [1.0; 2],
            Some([0.5; 4]),
            &c,
        );
        assert!(bad_tau.is_err());
        let bad_mu = AllocationState::new(
            [z.clone(), z.clone()],
            [0.0; 2],
            [z.clone(), z],
            [ZERO; 2],
            [0.0, 1.0],
            [1.0; 2],
            None,
            &c,
        );
        assert!(bad_mu.is_err());
    }

    #[test]
    fn report_weights() {
        let r = RateReport::from_rates([0.0; 4], [1.0, 2.0, 3.0, 4.0], 0.25, 0.75);
        assert_eq!(r.dl_sum, 3.0);
        assert_eq!(r.ul_sum, 7.0);
        assert!((r.wsr - (0.75 + 5.25)).abs() < 1e-12);
    }
}
