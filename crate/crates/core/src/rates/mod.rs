//! Effective channels, SINRs, rates and MSEs.
//!
//! Streams are indexed `0 = DL₁, 1 = DL₂, 2 = UL₁, 3 = UL₂` throughout.
//! Row channels (`H_r1`, `H_r2`) are stored as vectors and applied with the
//! unconjugated product, so `H_r1 w₁` is `h_r1.dot(&w1)`.

pub mod montecarlo;
pub mod surrogate;

use nalgebra::Cholesky;

use crate::config::ValidatedConfig;
use crate::error::{Error, Result};
use crate::linalg::{cvec_zeros, norm_sqr, CMatrix, CVector, C64};
use crate::model::{AllocationState, ChannelSet, RateReport, StarCoefficients};

/// Stream slots whose time fraction falls below this carry no traffic.
pub const TAU_EPS: f64 = 1e-12;

/// Which streams exist, which interference couplings are present, and how
/// rates and power budgets are scaled. Every scheme is one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateModel {
    /// Rate pre-log factor per stream.
    pub prelog: [f64; 4],
    pub active: [bool; 4],
    /// Uplink transmissions reach the downlink users.
    pub ul_to_dl: bool,
    /// Each downlink user hears the other user's beam.
    pub dl_cross: bool,
    /// The two uplink users interfere at the BS.
    pub ul_cross: bool,
    /// Residual self-interference at the BS.
    pub rsi: bool,
    /// BS budget reads `Σ_k c_k ‖w_k‖² ≤ P`.
    pub bs_budget_scale: [f64; 2],
    /// Uplink budget reads `c_l ρ_l ≤ P_l`.
    pub ul_budget_scale: [f64; 2],
}

impl RateModel {
    pub fn full_duplex() -> RateModel {
        RateModel {
            prelog: [1.0; 4],
            active: [true; 4],
            ul_to_dl: true,
            dl_cross: true,
            ul_cross: true,
            rsi: true,
            bs_budget_scale: [1.0; 2],
            ul_budget_scale: [1.0; 2],
        }
    }

    /// Full duplex with uplink-to-downlink interference, uplink co-channel
    /// interference and self-interference removed.
    pub fn upper_bound() -> RateModel {
        RateModel { ul_to_dl: false, ul_cross: false, rsi: false, ..RateModel::full_duplex() }
    }

    /// Both users receive only, in one of two equal slots.
    pub fn dl_half_duplex() -> RateModel {
        RateModel {
            prelog: [0.5; 4],
            active: [true, true, false, false],
            ul_to_dl: false,
            rsi: false,
            ul_cross: false,
            ..RateModel::full_duplex()
        }
    }

    /// Both users transmit only, in one of two equal slots.
    pub fn ul_half_duplex() -> RateModel {
        RateModel {
            prelog: [0.5; 4],
            active: [false, false, true, true],
            ul_to_dl: false,
            dl_cross: false,
            rsi: false,
            ..RateModel::full_duplex()
        }
    }

    /// U₁ receives in one slot, U₂ transmits in the other.
    pub fn half_duplex() -> RateModel {
        RateModel {
            prelog: [0.5; 4],
            active: [true, false, false, true],
            ul_to_dl: false,
            dl_cross: false,
            ul_cross: false,
            rsi: false,
            ..RateModel::full_duplex()
        }
    }

    /// Interference-free slots of lengths `tau`, with the time-scaled budgets.
    pub fn time_switching(tau: [f64; 4]) -> RateModel {
        RateModel {
            prelog: tau,
            active: tau.map(|t| t > TAU_EPS),
            ul_to_dl: false,
            dl_cross: false,
            ul_cross: false,
            rsi: false,
            bs_budget_scale: [tau[0], tau[1]],
            ul_budget_scale: [tau[2], tau[3]],
        }
    }

    /// `α·prelog` for active streams, zero otherwise.
    pub fn weights(&self, cfg: &ValidatedConfig) -> [f64; 4] {
        let alpha = [cfg.alpha1, cfg.alpha1, cfg.alpha2, cfg.alpha2];
        std::array::from_fn(|i| if self.active[i] { alpha[i] * self.prelog[i] } else { 0.0 })
    }

    /// Largest admissible `ρ_l`.
    pub fn ul_power_cap(&self, cfg: &ValidatedConfig, l: usize) -> f64 {
        if !self.active[2 + l] {
            0.0
        } else {
            cfg.p_max_ul / self.ul_budget_scale[l]
        }
    }
}

/// The composite channels of the coefficient-vector form.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    /// `diag(v̄_d) h_d`, `M × N_t`.
    pub h1: CMatrix,
    /// `v̄_d ∘ g_u`, length `M`.
    pub h2: CVector,
    /// `diag(ḡ_d) h_d`, `M × N_t`.
    pub h3: CMatrix,
    /// `ḡ_d ∘ v_u`, length `M`.
    pub h4: CVector,
    /// `h_uᴴ diag(v_u)`, `N_t × M`.
    pub h5: CMatrix,
    /// `h_uᴴ diag(g_u)`, `N_t × M`.
    pub h6: CMatrix,
}

impl Composite {
    pub fn new(ch: &ChannelSet) -> Composite {
        let vd = ch.v_d.map(|z| z.conj());
        let gd = ch.g_d.map(|z| z.conj());
        let scale_rows = |d: &CVector| {
            let mut out = ch.h_d.clone();
            for (i, mut row) in out.row_iter_mut().enumerate() {
                row *= d[i];
            }
            out
        };
        let scale_cols = |d: &CVector| {
            let mut out = ch.h_u.adjoint();
            for (j, mut col) in out.column_iter_mut().enumerate() {
                col *= d[j];
            }
            out
        };
        Composite {
            h1: scale_rows(&vd),
            h2: vd.component_mul(&ch.g_u),
            h3: scale_rows(&gd),
            h4: gd.component_mul(&ch.v_u),
            h5: scale_cols(&ch.v_u),
            h6: scale_cols(&ch.g_u),
        }
    }
}

/// Effective end-to-end channels for one surface configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannels {
    pub h_r1: CVector,
    pub g_t1: C64,
    pub h_r2: CVector,
    pub g_t2: C64,
    pub h_r3: CVector,
    pub g_t3: CVector,
}

impl EffectiveChannels {
    /// The uplink signature of stream `l`: `H_r3` or `G_t3`.
    pub fn ul_channel(&self, l: usize) -> &CVector {
        if l == 0 {
            &self.h_r3
        } else {
            &self.g_t3
        }
    }

    /// The downlink row channel of user `k`.
    pub fn dl_channel(&self, k: usize) -> &CVector {
        if k == 0 {
            &self.h_r1
        } else {
            &self.h_r2
        }
    }

    /// Gain from the uplink interferer into downlink user `k`.
    pub fn dl_interferer_gain(&self, k: usize) -> C64 {
        if k == 0 {
            self.g_t1
        } else {
            self.g_t2
        }
    }

    pub fn max_abs_diff(&self, other: &EffectiveChannels) -> f64 {
        use crate::linalg::max_abs_diff;
        [
            max_abs_diff(&self.h_r1, &other.h_r1),
            max_abs_diff(&self.h_r2, &other.h_r2),
            max_abs_diff(&self.h_r3, &other.h_r3),
            max_abs_diff(&self.g_t3, &other.g_t3),
            (self.g_t1 - other.g_t1).norm(),
            (self.g_t2 - other.g_t2).norm(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// The uplink user that interferes with downlink user `k`: U₂ for DL₁, U₁ for DL₂.
pub const fn dl_interferer(k: usize) -> usize {
    1 - k
}

fn check_shapes(ch: &ChannelSet, star: &StarCoefficients) -> Result<()> {
    if star.m() != ch.m() {
        return Err(Error::Shape(format!("surface has {} elements, channels have {}", star.m(), ch.m())));
    }
    Ok(())
}

/// Effective channels through the diagonal surface matrices `Φ_t`, `Φ_r`.
pub fn effective_channels(ch: &ChannelSet, star: &StarCoefficients) -> Result<EffectiveChannels> {
    check_shapes(ch, star)?;
    let phi_t = CMatrix::from_diagonal(&star.q_t);
    let phi_r = CMatrix::from_diagonal(&star.q_r);
    let vd_h = ch.v_d.adjoint();
    let gd_h = ch.g_d.adjoint();
    let hu_h = ch.h_u.adjoint();
    let h_r1 = (&vd_h * &phi_r * &ch.h_d).transpose() + &ch.f1;
    let g_t1 = (&vd_h * &phi_t * &ch.g_u)[(0, 0)] + ch.f3;
    let h_r2 = (&gd_h * &phi_t * &ch.h_d).transpose() + &ch.f2;
    let g_t2 = (&gd_h * &phi_t * &ch.v_u)[(0, 0)] + ch.f3;
    let h_r3 = &hu_h * &phi_r * &ch.v_u + ch.f1.map(|z| z.conj());
    let g_t3 = &hu_h * &phi_t * &ch.g_u + ch.f2.map(|z| z.conj());
    Ok(EffectiveChannels { h_r1, g_t1, h_r2, g_t2, h_r3, g_t3 })
}

/// Effective channels from the composite vectors and the coefficient vectors.
pub fn effective_channels_composite(
    comp: &Composite,
    ch: &ChannelSet,
    star: &StarCoefficients,
) -> Result<EffectiveChannels> {
    check_shapes(ch, star)?;
    effective_from_q(comp, ch, &star.q_t, &star.q_r)
}

pub fn effective_from_q(comp: &Composite, ch: &ChannelSet, q_t: &CVector, q_r: &CVector) -> Result<EffectiveChannels> {
    if q_t.len() != ch.m() || q_r.len() != ch.m() {
        return Err(Error::Shape("coefficient vectors do not match M".into()));
    }
    Ok(EffectiveChannels {
        h_r1: comp.h1.tr_mul(q_r) + &ch.f1,
        g_t1: q_t.dot(&comp.h2) + ch.f3,
        h_r2: comp.h3.tr_mul(q_t) + &ch.f2,
        g_t2: q_t.dot(&comp.h4) + ch.f3,
        h_r3: &comp.h5 * q_r + ch.f1.map(|z| z.conj()),
        g_t3: &comp.h6 * q_t + ch.f2.map(|z| z.conj()),
    })
}

/// Total received power minus the desired signal at DL user `k`, i.e. the
/// interference-plus-noise power under `model`.
pub fn dl_interference_plus_noise(
    eff: &EffectiveChannels,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
    k: usize,
) -> f64 {
    let h = eff.dl_channel(k);
    let mut d = cfg.sigma2_dl;
    if model.dl_cross {
        d += h.dot(&state.w[1 - k]).norm_sqr();
    }
    if model.ul_to_dl {
        d += state.rho[dl_interferer(k)] * eff.dl_interferer_gain(k).norm_sqr();
    }
    d
}

/// Scalar noise floor on every BS antenna: `[rsi] σ̂² Σ‖w‖² + σ²_UL`.
pub fn ul_noise_floor(state: &AllocationState, cfg: &ValidatedConfig, model: &RateModel) -> f64 {
    let mut n = cfg.sigma2_ul;
    if model.rsi {
        n += cfg.sigma2_rsi * state.bs_power();
    }
    n
}

/// Receive covariance seen by the combiner of stream `l`.
pub fn ul_covariance(
    eff: &EffectiveChannels,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
    l: usize,
) -> CMatrix {
    let n = eff.h_r3.len();
    let mut cov = CMatrix::identity(n, n) * C64::from(ul_noise_floor(state, cfg, model));
    let s = eff.ul_channel(l);
    cov += s * s.adjoint() * C64::from(state.rho[l]);
    if model.ul_cross {
        let o = eff.ul_channel(1 - l);
        cov += o * o.adjoint() * C64::from(state.rho[1 - l]);
    }
    cov
}

/// SINRs of all four streams under `model`; inactive streams report 0.
pub fn sinrs(eff: &EffectiveChannels, state: &AllocationState, cfg: &ValidatedConfig, model: &RateModel) -> [f64; 4] {
    let mut out = [0.0; 4];
    for k in 0..2 {
        if model.active[k] {
            let sig = eff.dl_channel(k).dot(&state.w[k]).norm_sqr();
            out[k] = sig / dl_interference_plus_noise(eff, state, cfg, model, k);
        }
    }
    let floor = ul_noise_floor(state, cfg, model);
    for l in 0..2 {
        if !model.active[2 + l] {
            continue;
        }
        let u = &state.u_comb[l];
        let un = norm_sqr(u);
        if un == 0.0 {
            continue;
        }
        let sig = state.rho[l] * u.dotc(eff.ul_channel(l)).norm_sqr();
        let mut den = un * floor;
        if model.ul_cross {
            den += state.rho[1 - l] * u.dotc(eff.ul_channel(1 - l)).norm_sqr();
        }
        out[2 + l] = sig / den;
    }
    out
}

/// Rates `prelog·log2(1+γ)` and the weighted sum.
pub fn evaluate(
    eff: &EffectiveChannels,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
) -> RateReport {
    let sinr = sinrs(eff, state, cfg, model);
    let rates = std::array::from_fn(|i| if model.active[i] { model.prelog[i] * (1.0 + sinr[i]).log2() } else { 0.0 });
    RateReport::from_rates(sinr, rates, cfg.alpha1, cfg.alpha2)
}

/// `2∂/∂w̄_k` of the weighted sum-rate `Σ weightᵢ·log2(1+γᵢ)` with the
/// uplink combiners held fixed; `weights` come from [`RateModel::weights`].
pub fn wsr_beamformer_grad(
    eff: &EffectiveChannels,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
) -> [CVector; 2] {
    let n = state.w[0].len();
    let mut g = [cvec_zeros(n), cvec_zeros(n)];
    let gamma = sinrs(eff, state, cfg, model);
    let weights = model.weights(cfg);
    let slope = |i: usize| weights[i] / ((1.0 + gamma[i]) * std::f64::consts::LN_2);
    for k in 0..2 {
        if !model.active[k] {
            continue;
        }
        let h = eff.dl_channel(k);
        let hc = h.map(|z| z.conj());
        let d = dl_interference_plus_noise(eff, state, cfg, model, k);
        let a = h.dot(&state.w[k]);
        let c = slope(k);
        g[k] += &hc * (a * (2.0 * c / d));
        if model.dl_cross {
            let b = h.dot(&state.w[1 - k]);
            g[1 - k] -= &hc * (b * (2.0 * c * a.norm_sqr() / (d * d)));
        }
    }
    if model.rsi {
        let floor = ul_noise_floor(state, cfg, model);
        for l in 0..2 {
            let u = &state.u_comb[l];
            let un = norm_sqr(u);
            if !model.active[2 + l] || un == 0.0 {
                continue;
            }
            let u = u / C64::from(un.sqrt());
            let mut den = floor;
            if model.ul_cross {
                den += state.rho[1 - l] * u.dotc(eff.ul_channel(1 - l)).norm_sqr();
            }
            let scale = 2.0 * slope(2 + l) * gamma[2 + l] * cfg.sigma2_rsi / den;
            for (gk, wk) in g.iter_mut().zip(&state.w) {
                *gk -= wk * C64::from(scale);
            }
        }
    }
    g
}

/// Full-duplex rates with every interference term and the self-interference.
pub fn sinr_and_rates_fd(eff: &EffectiveChannels, state: &AllocationState, cfg: &ValidatedConfig) -> RateReport {
    evaluate(eff, state, cfg, &RateModel::full_duplex())
}

/// Time-switching rates; requires the state to carry time fractions.
pub fn rates_ts(eff: &EffectiveChannels, state: &AllocationState, cfg: &ValidatedConfig) -> Result<RateReport> {
    let tau = state.tau.ok_or_else(|| Error::Domain("time-switching rates need time fractions".into()))?;
    if tau.iter().any(|t| !(0.0..=1.0).contains(t)) || (tau.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Domain("time fractions must lie on the simplex".into()));
    }
    Ok(evaluate(eff, state, cfg, &RateModel::time_switching(tau)))
}

/// MSE of downlink stream `k` for the detector in `state`.
pub fn mse_dl(
    eff: &EffectiveChannels,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
    k: usize,
) -> f64 {
    let h = eff.dl_channel(k);
    let hw = h.dot(&state.w[k]);
    let total = hw.norm_sqr() + dl_interference_plus_noise(eff, state, cfg, model, k);
    let u = state.u_det[k];
    u.norm_sqr() * total - 2.0 * (u * hw).re + 1.0
}

/// MSE of uplink stream `l` for the combiner in `state`:
/// `UᴴΣU − 2Re(Uᴴs)√ρ + 1`.
pub fn mse_ul(
    eff: &EffectiveChannels,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
    l: usize,
) -> f64 {
    let u = &state.u_comb[l];
    let cov = ul_covariance(eff, state, cfg, model, l);
    let quad = u.dotc(&(&cov * u)).re;
    let lin = u.dotc(eff.ul_channel(l)).re * state.rho[l].sqrt();
    quad - 2.0 * lin + 1.0
}

/// All four MSEs; inactive streams report 1.
pub fn mses(eff: &EffectiveChannels, state: &AllocationState, cfg: &ValidatedConfig, model: &RateModel) -> [f64; 4] {
    std::array::from_fn(|i| {
        if !model.active[i] {
            1.0
        } else if i < 2 {
            mse_dl(eff, state, cfg, model, i)
        } else {
            mse_ul(eff, state, cfg, model, i - 2)
        }
    })
}

/// MMSE detector `u_k = (H_rk w_k)* / (total received power)`.
pub fn mmse_detector(
    eff: &EffectiveChannels,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
    k: usize,
) -> C64 {
    if !model.active[k] {
        return C64::new(0.0, 0.0);
    }
    let hw = eff.dl_channel(k).dot(&state.w[k]);
    let total = hw.norm_sqr() + dl_interference_plus_noise(eff, state, cfg, model, k);
    hw.conj() / total
}

/// MMSE combiner `U_l = Σ⁻¹ s_l √ρ_l`.
pub fn mmse_combiner(
    eff: &EffectiveChannels,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
    l: usize,
) -> Result<CVector> {
    let n = eff.h_r3.len();
    if !model.active[2 + l] || state.rho[l] == 0.0 {
        return Ok(cvec_zeros(n));
    }
    let cov = ul_covariance(eff, state, cfg, model, l);
    let chol = Cholesky::new(cov).ok_or_else(|| Error::Kernel("uplink covariance is not positive definite".into()))?;
    let rhs = eff.ul_channel(l) * C64::from(state.rho[l].sqrt());
    Ok(chol.solve(&rhs))
}
