//! Block-coordinate WMMSE loop for a fixed surface.
//!
//! The objective is `Σ_i wt_i (μ_i e_i − ln μ_i)` over active streams, with
//! `wt_i = α_i·prelog_i`. Each block update below is an exact minimization, so
//! the objective never increases, and after the detector and weight updates it
//! equals `Σ wt_i − ln2·WSR`.

use std::f64::consts::LN_2;

use crate::config::ValidatedConfig;
use crate::error::{Error, Result};
use crate::kernels::{min_quadratic_ball, min_scalar_quadratic_box, SolveStatus};
use crate::linalg::{cvec_zeros, norm_sqr, CMatrix, CVector, C64};
use crate::model::{AllocationState, ChannelSet, StarCoefficients};
use crate::rates::{self, dl_interferer, effective_channels, EffectiveChannels, RateModel};

/// WMMSE objective; errors if any weight of an active stream is not positive.
pub fn wmmse_objective(
    eff: &EffectiveChannels,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
) -> Result<f64> {
    let wt = model.weights(cfg);
    let e = rates::mses(eff, state, cfg, model);
    let mu = [state.mu_dl[0], state.mu_dl[1], state.mu_ul[0], state.mu_ul[1]];
    let mut total = 0.0;
    for i in 0..4 {
        if wt[i] == 0.0 {
            continue;
        }
        if !(mu[i] > 0.0) {
            return Err(Error::Domain(format!("MMSE weight of stream {i} must be > 0")));
        }
        total += wt[i] * (mu[i] * e[i] - mu[i].ln());
    }
    Ok(total)
}

/// `Σ wt_i`, the objective value of a silent system.
pub fn weight_total(cfg: &ValidatedConfig, model: &RateModel) -> f64 {
    model.weights(cfg).iter().sum()
}

/// Exact minimization over both beamformers under the shared BS budget.
pub fn update_beamformers(
    eff: &EffectiveChannels,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
) -> Result<[CVector; 2]> {
    let n = eff.h_r1.len();
    let wt = model.weights(cfg);
    let mut rsi_load = 0.0;
    if model.rsi {
        for l in 0..2 {
            if wt[2 + l] > 0.0 {
                rsi_load += wt[2 + l] * state.mu_ul[l] * norm_sqr(&state.u_comb[l]);
            }
        }
        rsi_load *= cfg.sigma2_rsi;
    }
    let active: Vec<usize> = (0..2).filter(|&k| model.active[k]).collect();
    let mut out = [cvec_zeros(n), cvec_zeros(n)];
    if active.is_empty() {
        return Ok(out);
    }
    let dim = n * active.len();
    let mut a = CMatrix::zeros(dim, dim);
    let mut b = CVector::zeros(dim);
    for (blk, &k) in active.iter().enumerate() {
        let mut ak = CMatrix::identity(n, n) * C64::from(rsi_load);
        for j in 0..2 {
            if wt[j] == 0.0 || !(j == k || model.dl_cross) {
                continue;
            }
            let h = eff.dl_channel(j);
            let hc = h.map(|z| z.conj());
            let coef = wt[j] * state.mu_dl[j] * state.u_det[j].norm_sqr();
            ak += &hc * h.transpose() * C64::from(coef);
        }
        let hk = eff.dl_channel(k).map(|z| z.conj());
        let bk = hk * (state.u_det[k].conj() * (wt[k] * state.mu_dl[k]));
        let c = model.bs_budget_scale[k];
        a.view_mut((blk * n, blk * n), (n, n)).copy_from(&(ak / C64::from(c)));
        b.rows_mut(blk * n, n).copy_from(&(bk / C64::from(c.sqrt())));
    }
    let sol = min_quadratic_ball(&a, &b, cfg.p_max_bs)?;
    for (blk, &k) in active.iter().enumerate() {
        let c = model.bs_budget_scale[k];
        out[k] = sol.x.rows(blk * n, n).into_owned() / C64::from(c.sqrt());
    }
    Ok(out)
}

/// Exact minimization over `p_l = √ρ_l` on `[0, √cap_l]`, per uplink user.
pub fn update_ul_powers(
    eff: &EffectiveChannels,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
) -> Result<[f64; 2]> {
    let wt = model.weights(cfg);
    let mut out = [0.0; 2];
    for l in 0..2 {
        let cap = model.ul_power_cap(cfg, l);
        if !model.active[2 + l] || cap <= 0.0 {
            continue;
        }
        let s_l = eff.ul_channel(l);
        let mut a = 0.0;
        let k = 1 - l;
        debug_assert_eq!(dl_interferer(k), l);
        if model.ul_to_dl && wt[k] > 0.0 {
            a += wt[k] * state.mu_dl[k] * state.u_det[k].norm_sqr() * eff.dl_interferer_gain(k).norm_sqr();
        }
        for j in 0..2 {
            if wt[2 + j] == 0.0 || !(j == l || model.ul_cross) {
                continue;
            }
            a += wt[2 + j] * state.mu_ul[j] * state.u_comb[j].dotc(s_l).norm_sqr();
        }
        let b = wt[2 + l] * state.mu_ul[l] * state.u_comb[l].dotc(s_l).re;
        let p = if a > 0.0 {
            min_scalar_quadratic_box(a, b, cap)?
        } else if b > 0.0 {
            cap.sqrt()
        } else {
            0.0
        };
        out[l] = p * p;
    }
    Ok(out)
}

/// MMSE combiners for both uplink streams.
pub fn update_combiners(
    eff: &EffectiveChannels,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
) -> Result<[CVector; 2]> {
    Ok([rates::mmse_combiner(eff, state, cfg, model, 0)?, rates::mmse_combiner(eff, state, cfg, model, 1)?])
}

/// MMSE detectors `u_k = (H_rk w_k)* / (total received power at user k)`.
pub fn update_detectors(
    eff: &EffectiveChannels,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
) -> [C64; 2] {
    [rates::mmse_detector(eff, state, cfg, model, 0), rates::mmse_detector(eff, state, cfg, model, 1)]
}

/// `μ = 1/e` per stream; inactive streams keep weight 1.
pub fn update_weights(
    eff: &EffectiveChannels,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
) -> Result<([f64; 2], [f64; 2])> {
    let e = rates::mses(eff, state, cfg, model);
    let mut mu = [1.0; 4];
    for i in 0..4 {
        if !model.active[i] {
            continue;
        }
        if !(e[i] > 0.0) {
            return Err(Error::Domain(format!("MSE of stream {i} is {} (must be > 0)", e[i])));
        }
        mu[i] = 1.0 / e[i];
    }
    Ok(([mu[0], mu[1]], [mu[2], mu[3]]))
}

/// Re-derives combiners, detectors and weights from the current `w`, `ρ`.
pub fn refresh_receivers(
    eff: &EffectiveChannels,
    state: &mut AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
) -> Result<()> {
    state.u_comb = update_combiners(eff, state, cfg, model)?;
    state.u_det = update_detectors(eff, state, cfg, model);
    let (dl, ul) = update_weights(eff, state, cfg, model)?;
    state.mu_dl = dl;
    state.mu_ul = ul;
    Ok(())
}

/// Matched-filter beams with `‖w_k‖² = P/(2 N_t c_k)`, half the uplink budget,
/// then one round of closed-form receivers.
pub fn initial_allocation(
    eff: &EffectiveChannels,
    cfg: &ValidatedConfig,
    model: &RateModel,
) -> Result<AllocationState> {
    let n = eff.h_r1.len();
    let mut st = AllocationState::silent(n);
    for k in 0..2 {
        if !model.active[k] {
            continue;
        }
        let h = eff.dl_channel(k);
        let nh = h.norm();
        let amp = (cfg.p_max_bs / (2.0 * n as f64 * model.bs_budget_scale[k])).sqrt();
        st.w[k] = if nh > 0.0 {
            h.map(|z| z.conj()) * C64::from(amp / nh)
        } else {
            CVector::from_element(n, C64::from(amp / (n as f64).sqrt()))
        };
    }
    for l in 0..2 {
        st.rho[l] = 0.5 * model.ul_power_cap(cfg, l);
    }
    if model.bs_budget_scale != [1.0; 2] || model.ul_budget_scale != [1.0; 2] {
        st.tau = Some(model.prelog);
    }
    refresh_receivers(eff, &mut st, cfg, model)?;
    Ok(st)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WmmseOptions {
    pub eps1: f64,
    pub max_iter: usize,
}

impl WmmseOptions {
    pub fn from_config(cfg: &ValidatedConfig) -> Self {
        Self { eps1: cfg.tolerances.eps1, max_iter: cfg.max_inner }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WmmseOutcome {
    pub state: AllocationState,
    /// WSR at entry (after the receiver refresh) and after each iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub status: SolveStatus,
}

/// One full sweep of the seven block updates.
pub fn wmmse_step(
    eff: &EffectiveChannels,
    state: &mut AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
) -> Result<()> {
    state.w = update_beamformers(eff, state, cfg, model)?;
    state.rho = update_ul_powers(eff, state, cfg, model)?;
    state.u_comb[0] = rates::mmse_combiner(eff, state, cfg, model, 0)?;
    state.u_comb[1] = rates::mmse_combiner(eff, state, cfg, model, 1)?;
    state.u_det = update_detectors(eff, state, cfg, model);
    let (dl, ul) = update_weights(eff, state, cfg, model)?;
    state.mu_dl = dl;
    state.mu_ul = ul;
    Ok(())
}

/// Runs the loop until successive WSR values differ by less than `eps1`.
pub fn run_wmmse_model(
    eff: &EffectiveChannels,
    init: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
    opts: &WmmseOptions,
) -> Result<WmmseOutcome> {
    let mut state = init.clone();
    refresh_receivers(eff, &mut state, cfg, model)?;
    let mut prev = rates::evaluate(eff, &state, cfg, model).wsr;
    let mut trace = vec![prev];
    for it in 1..=opts.max_iter {
        wmmse_step(eff, &mut state, cfg, model)?;
        let wsr = rates::evaluate(eff, &state, cfg, model).wsr;
        trace.push(wsr);
        if (wsr - prev).abs() < opts.eps1 {
            return Ok(WmmseOutcome { state, trace, iterations: it, status: SolveStatus::Converged });
        }
        prev = wsr;
    }
    Ok(WmmseOutcome { state, trace, iterations: opts.max_iter, status: SolveStatus::CapReached })
}

/// Full-duplex WMMSE for the surface `star`.
pub fn run_wmmse(
    ch: &ChannelSet,
    star: &StarCoefficients,
    init: &AllocationState,
    cfg: &ValidatedConfig,
) -> Result<WmmseOutcome> {
    let eff = effective_channels(ch, star)?;
    run_wmmse_model(&eff, init, cfg, &RateModel::full_duplex(), &WmmseOptions::from_config(cfg))
}

/// `objective − (Σ wt − ln2·WSR)`; zero right after a detector/weight refresh.
pub fn identity_gap(
    eff: &EffectiveChannels,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
) -> Result<f64> {
    let obj = wmmse_objective(eff, state, cfg, model)?;
    let wsr = rates::evaluate(eff, state, cfg, model).wsr;
    Ok(obj - (weight_total(cfg, model) - LN_2 * wsr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_channel_set;
    use crate::linalg::{ONE, ZERO};
    use crate::rng::StreamRng;

    fn unit_cfg() -> ValidatedConfig {
        ValidatedConfig::default()
            .with(|c| {
                c.n_t = 1;
                c.sigma2_dl = 1.0;
                c.sigma2_ul = 1.0;
            })
            .unwrap()
    }

    #[test]
    fn unit_weights_and_errors() {
        let cfg = unit_cfg();
        let z = cvec_zeros(1);
        let eff =
            EffectiveChannels { h_r1: z.clone(), g_t1: ZERO, h_r2: z.clone(), g_t2: ZERO, h_r3: z.clone(), g_t3: z };
        let st = AllocationState::silent(1);
        let m = RateModel::full_duplex();
        let obj = wmmse_objective(&eff, &st, &cfg, &m).unwrap();
        assert!((obj - 2.0 * (cfg.alpha1 + cfg.alpha2)).abs() < 1e-15);
        let mut bad = st.clone();
        bad.mu_dl[0] = 0.0;
        assert!(wmmse_objective(&eff, &bad, &cfg, &m).is_err());
    }

    #[test]
    fn detector_hand_value() {
        let cfg = unit_cfg();
        let one = CVector::from_element(1, ONE);
        let z = cvec_zeros(1);
        let eff = EffectiveChannels {
            h_r1: one.clone(),
            g_t1: ZERO,
            h_r2: z.clone(),
            g_t2: ZERO,
            h_r3: z.clone(),
            g_t3: z.clone(),
        };
        let mut st = AllocationState::silent(1);
        st.w[0] = one;
        let u = update_detectors(&eff, &st, &cfg, &RateModel::full_duplex());
        assert!((u[0] - C64::new(0.5, 0.0)).norm() < 1e-15);
        assert_eq!(u[1], ZERO);
    }

    #[test]
    fn weights_are_reciprocal_mse() {
        let cfg = unit_cfg();
        let one = CVector::from_element(1, ONE);
        let z = cvec_zeros(1);
        let eff =
            EffectiveChannels { h_r1: one.clone(), g_t1: ZERO, h_r2: z.clone(), g_t2: ZERO, h_r3: z.clone(), g_t3: z };
        let mut st = AllocationState::silent(1);
        st.w[0] = one;
        st.u_det[0] = C64::new(0.5, 0.0);
        let (dl, ul) = update_weights(&eff, &st, &cfg, &RateModel::full_duplex()).unwrap();
        assert!((dl[0] - 2.0).abs() < 1e-12);
        assert_eq!(dl[1], 1.0);
        assert_eq!(ul, [1.0, 1.0]);
    }

    #[test]
    fn zero_channels_give_zero_trace() {
        let cfg = ValidatedConfig::default();
        let ch = ChannelSet::zeros(cfg.n_t, cfg.m);
        let star = StarCoefficients::zeros(cfg.m);
        let eff = effective_channels(&ch, &star).unwrap();
        let init = initial_allocation(&eff, &cfg, &RateModel::full_duplex()).unwrap();
        let out = run_wmmse(&ch, &star, &init, &cfg).unwrap();
        assert!(out.trace.iter().all(|&w| w == 0.0));
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn random_instance_monotone_and_converges() {
        let cfg = ValidatedConfig::default();
        let mut rng = StreamRng::new(4);
        for _ in 0..5 {
            let ch = generate_channel_set(&cfg.geometry, &cfg, &mut rng).unwrap();
            let star = StarCoefficients::zeros(cfg.m);
            let eff = effective_channels(&ch, &star).unwrap();
            let m = RateModel::full_duplex();
            let init = initial_allocation(&eff, &cfg, &m).unwrap();
            let opts = WmmseOptions { eps1: 1e-3, max_iter: 200 };
            let out = run_wmmse_model(&eff, &init, &cfg, &m, &opts).unwrap();
            assert_eq!(out.status, SolveStatus::Converged);
            assert!(out.trace.windows(2).all(|w| w[1] >= w[0] - 1e-9), "{:?}", out.trace);
            assert!(identity_gap(&eff, &out.state, &cfg, &m).unwrap().abs() < 1e-9);
        }
    }

    fn random_vec(n: usize, rng: &mut StreamRng) -> CVector {
        CVector::from_fn(n, |_, _| rng.complex_normal())
    }

    #[test]
    fn single_stream_beam_is_a_matched_filter() {
        let cfg = ValidatedConfig::default().with(|c| c.p_max_bs = 1e3).unwrap();
        let mut rng = StreamRng::new(12);
        let n = cfg.n_t;
        let h = random_vec(n, &mut rng) * C64::from(1e-4);
        let z = cvec_zeros(n);
        let eff =
            EffectiveChannels { h_r1: h.clone(), g_t1: ZERO, h_r2: z.clone(), g_t2: ZERO, h_r3: z.clone(), g_t3: z };
        let m = RateModel::upper_bound();
        let mut st = AllocationState::silent(n);
        st.w[0] = random_vec(n, &mut rng) * C64::from(0.1);
        refresh_receivers(&eff, &mut st, &cfg, &m).unwrap();
        let w = update_beamformers(&eff, &st, &cfg, &m).unwrap();
        let target = h.map(|x| x.conj());
        let cosine = target.dotc(&w[0]).norm() / (target.norm() * w[0].norm());
        assert!(cosine > 1.0 - 1e-9, "cosine {cosine}");
        assert_eq!(norm_sqr(&w[1]), 0.0);
    }

    #[test]
    fn tiny_budget_is_respected() {
        let cfg = ValidatedConfig::default().with(|c| c.p_max_bs = 1e-12).unwrap();
        let mut rng = StreamRng::new(2);
        let ch = generate_channel_set(&cfg.geometry, &cfg, &mut rng).unwrap();
        let eff = effective_channels(&ch, &StarCoefficients::zeros(cfg.m)).unwrap();
        let m = RateModel::full_duplex();
        let st = initial_allocation(&eff, &cfg, &m).unwrap();
        let w = update_beamformers(&eff, &st, &cfg, &m).unwrap();
        assert!(norm_sqr(&w[0]) + norm_sqr(&w[1]) <= 1e-12 * (1.0 + 1e-9));
    }

    #[test]
    fn uplink_power_without_benefit_is_zero() {
        let cfg = ValidatedConfig::default();
        let n = cfg.n_t;
        let z = cvec_zeros(n);
        let eff =
            EffectiveChannels { h_r1: z.clone(), g_t1: ZERO, h_r2: z.clone(), g_t2: ZERO, h_r3: z.clone(), g_t3: z };
        let mut st = AllocationState::silent(n);
        st.rho = [cfg.p_max_ul; 2];
        let rho = update_ul_powers(&eff, &st, &cfg, &RateModel::full_duplex()).unwrap();
        assert_eq!(rho, [0.0, 0.0]);
    }

    #[test]
    fn combiner_special_cases() {
        let cfg = ValidatedConfig::default();
        let mut rng = StreamRng::new(8);
        let n = cfg.n_t;
        let z = cvec_zeros(n);
        let h3 = random_vec(n, &mut rng) * C64::from(1e-5);
        let eff = EffectiveChannels {
            h_r1: z.clone(),
            g_t1: ZERO,
            h_r2: z.clone(),
            g_t2: ZERO,
            h_r3: h3.clone(),
            g_t3: random_vec(n, &mut rng) * C64::from(1e-5),
        };
        let m = RateModel::upper_bound();
        let mut st = AllocationState::silent(n);
        st.rho = [cfg.p_max_ul, 0.0];
        let u = update_combiners(&eff, &st, &cfg, &m).unwrap();
        let cosine = h3.dotc(&u[0]).norm() / (h3.norm() * u[0].norm());
        assert!(cosine > 1.0 - 1e-12, "cosine {cosine}");
        assert_eq!(norm_sqr(&u[1]), 0.0);

        st.rho = [0.0, cfg.p_max_ul];
        let u = update_combiners(&eff, &st, &cfg, &RateModel::full_duplex()).unwrap();
        assert_eq!(norm_sqr(&u[0]), 0.0);
    }

    #[test]
    fn silent_beams_give_zero_detectors() {
        let cfg = ValidatedConfig::default();
        let mut rng = StreamRng::new(5);
        let ch = generate_channel_set(&cfg.geometry, &cfg, &mut rng).unwrap();
        let eff = effective_channels(&ch, &StarCoefficients::zeros(cfg.m)).unwrap();
        let mut st = AllocationState::silent(cfg.n_t);
        st.rho = [cfg.p_max_ul; 2];
        assert_eq!(update_detectors(&eff, &st, &cfg, &RateModel::full_duplex()), [ZERO, ZERO]);
    }

    #[test]
    fn converged_input_stops_after_one_sweep() {
        let cfg = ValidatedConfig::default();
        let mut rng = StreamRng::new(31);
        let ch = generate_channel_set(&cfg.geometry, &cfg, &mut rng).unwrap();
        let star = StarCoefficients::zeros(cfg.m);
        let eff = effective_channels(&ch, &star).unwrap();
        let m = RateModel::full_duplex();
        let init = initial_allocation(&eff, &cfg, &m).unwrap();
        let opts = WmmseOptions { eps1: 1e-6, max_iter: 2000 };
        let first = run_wmmse_model(&eff, &init, &cfg, &m, &opts).unwrap();
        assert_eq!(first.status, SolveStatus::Converged);
        let loose = WmmseOptions { eps1: 1e-4, max_iter: 2000 };
        let again = run_wmmse_model(&eff, &first.state, &cfg, &m, &loose).unwrap();
        assert_eq!(again.iterations, 1);
    }
}
