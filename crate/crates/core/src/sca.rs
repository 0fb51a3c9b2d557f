//! Surface-coefficient subproblems built on the rate minorants.
//!
//! Auxiliary rate variables are eliminated: each subproblem maximizes
//! `Σ α_i · bound_i(q)` directly by projected gradient ascent over the real
//! packing `[Re q_t, Im q_t, Re q_r, Im q_r]` (mode selection appends the
//! amplitude variables `φ_t, φ_r`).

use nalgebra::DVector;
use rayon::prelude::*;

use crate::config::ValidatedConfig;
use crate::error::{Error, Result};
use crate::kernels::{
    project_fixed_modulus, project_ms_element, project_pair_ball, project_unit_disc, projected_gradient_ascent,
    PgaOptions, SolveStatus,
};
use crate::linalg::{norm_sqr, CVector, C64};
use crate::model::{AllocationState, ChannelSet};
use crate::rates::surrogate::SurrogateExpansion;
use crate::rates::{effective_from_q, Composite, EffectiveChannels, RateModel, TAU_EPS};
use crate::wmmse::{refresh_receivers, update_combiners};

const HALF_POWER: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Feasible set of the coefficients for a scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceKind {
    /// `|q_t|² + |q_r|² ≤ 1` per element.
    Es,
    /// `|q_t| = |q_r| = 1/√2`, phases free.
    EqualEs,
    /// First half of the elements reflect only, second half transmit only,
    /// unit modulus.
    ConventionalRis,
    /// Binary amplitudes through the penalty loop.
    Ms,
    /// `|q| ≤ 1` per side.
    Ts,
    /// Not optimized.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaOptions {
    /// Stop re-expanding once the fractional objective increase is below this.
    pub eps2: f64,
    pub max_iter: usize,
    pub pga: PgaOptions,
    /// Re-match the MMSE receivers to the coefficients after every accepted
    /// expansion.
    pub refresh_receivers: bool,
    /// Extend each accepted step while the true objective keeps rising.
    pub extrapolate: bool,
}

impl ScaOptions {
    pub fn from_config(cfg: &ValidatedConfig) -> Self {
        Self {
            eps2: cfg.tolerances.eps2,
            max_iter: cfg.max_inner,
            pga: PgaOptions::default(),
            refresh_receivers: true,
            extrapolate: true,
        }
    }
}

/// Penalty factor state for the mode-selection loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySchedule {
    mu: f64,
    omega: f64,
    binary_tol: f64,
}

impl PenaltySchedule {
    pub fn new(mu: f64, omega: f64, binary_tol: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::config("mu0", "penalty factor must be > 0"));
        }
        if !(omega.is_finite() && omega > 1.0) {
            return Err(Error::config("omega", "penalty growth must exceed 1"));
        }
        if !(binary_tol > 0.0) {
            return Err(Error::config("eps3", "binary tolerance must be > 0"));
        }
        Ok(Self { mu, omega, binary_tol })
    }

    pub fn from_config(cfg: &ValidatedConfig) -> Self {
        Self { mu: cfg.mu0, omega: cfg.omega, binary_tol: cfg.tolerances.eps3 }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn omega(&self) -> f64 {
        self.omega
    }
    pub fn binary_tol(&self) -> f64 {
        self.binary_tol
    }
    pub fn escalate(&mut self) {
        self.mu *= self.omega;
    }
}

/// `[α₁, α₁, α₂, α₂]`; the bounds already carry the pre-log factors.
pub fn stream_alphas(cfg: &ValidatedConfig) -> [f64; 4] {
    [cfg.alpha1, cfg.alpha1, cfg.alpha2, cfg.alpha2]
}

pub(crate) fn pack(q_t: &CVector, q_r: &CVector, extra: &[f64]) -> DVector<f64> {
    let m = q_t.len();
    let mut x = DVector::zeros(4 * m + extra.len());
    for i in 0..m {
        x[i] = q_t[i].re;
        x[m + i] = q_t[i].im;
        x[2 * m + i] = q_r[i].re;
        x[3 * m + i] = q_r[i].im;
    }
    for (i, &e) in extra.iter().enumerate() {
        x[4 * m + i] = e;
    }
    x
}

pub(crate) fn unpack(x: &DVector<f64>, m: usize) -> (CVector, CVector) {
    let q_t = CVector::from_fn(m, |i, _| C64::new(x[i], x[m + i]));
    let q_r = CVector::from_fn(m, |i, _| C64::new(x[2 * m + i], x[3 * m + i]));
    (q_t, q_r)
}

/// Applies the per-element projection of `kind` to coefficient vectors.
pub fn project_coefficients(kind: SurfaceKind, q_t: &CVector, q_r: &CVector) -> (CVector, CVector) {
    let m = q_t.len();
    let mut t = q_t.clone();
    let mut r = q_r.clone();
    for i in 0..m {
        let (a, b) = match kind {
            SurfaceKind::Es | SurfaceKind::Ms => project_pair_ball(q_t[i], q_r[i]),
            SurfaceKind::EqualEs => {
                (project_fixed_modulus(q_t[i], HALF_POWER), project_fixed_modulus(q_r[i], HALF_POWER))
            }
            SurfaceKind::ConventionalRis => {
                if i < m / 2 {
                    (C64::new(0.0, 0.0), project_fixed_modulus(q_r[i], 1.0))
                } else {
                    (project_fixed_modulus(q_t[i], 1.0), C64::new(0.0, 0.0))
                }
            }
            SurfaceKind::Ts => (project_unit_disc(q_t[i]), project_unit_disc(q_r[i])),
            SurfaceKind::Fixed => (q_t[i], q_r[i]),
        };
        t[i] = a;
        r[i] = b;
    }
    (t, r)
}

fn project_packed(kind: SurfaceKind, x: &DVector<f64>, m: usize) -> DVector<f64> {
    let (q_t, q_r) = unpack(x, m);
    let (t, r) = project_coefficients(kind, &q_t, &q_r);
    pack(&t, &r, &[])
}

/// Result of one surrogate maximization.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub q_t: CVector,
    pub q_r: CVector,
    /// Surrogate objective at the returned point.
    pub objective: f64,
    /// Surrogate objective at the expansion point.
    pub start_objective: f64,
    pub status: SolveStatus,
    /// For energy splitting: whether every element was moved onto
    /// `|q_t|² + |q_r|² = 1` without lowering the objective.
    pub boundary_tight: bool,
}

fn surrogate_value(exp: &SurrogateExpansion, w: &[f64; 4], x: &DVector<f64>) -> f64 {
    let (q_t, q_r) = unpack(x, exp.m());
    exp.weighted_value_grad(w, &q_t, &q_r).0
}

fn surrogate_grad(exp: &SurrogateExpansion, w: &[f64; 4], x: &DVector<f64>) -> DVector<f64> {
    let (q_t, q_r) = unpack(x, exp.m());
    let (_, g_t, g_r) = exp.weighted_value_grad(w, &q_t, &q_r);
    pack(&g_t, &g_r, &[])
}

/// Maximizes `Σ weights_i·bound_i` over the feasible set of `kind`, starting
/// at the expansion point.
pub fn solve_surface_subproblem(
    exp: &SurrogateExpansion,
    weights: &[f64; 4],
    kind: SurfaceKind,
    opts: &ScaOptions,
) -> SubproblemSolution {
    let m = exp.m();
    let x0 = pack(&exp.q_t, &exp.q_r, &[]);
    let start_objective = surrogate_value(exp, weights, &x0);
    if kind == SurfaceKind::Fixed {
        return SubproblemSolution {
            q_t: exp.q_t.clone(),
            q_r: exp.q_r.clone(),
            objective: start_objective,
            start_objective,
            status: SolveStatus::Converged,
            boundary_tight: false,
        };
    }
    let res = projected_gradient_ascent(
        |x| surrogate_value(exp, weights, x),
        |x| surrogate_grad(exp, weights, x),
        |x| project_packed(kind, x, m),
        &x0,
        &opts.pga,
    );
    let (mut q_t, mut q_r) = unpack(&res.x, m);
    let mut objective = res.value;
    if objective < start_objective {
        q_t = exp.q_t.clone();
        q_r = exp.q_r.clone();
        objective = start_objective;
    }
    let boundary_tight = kind == SurfaceKind::Es && {
        let (bt, br) = scale_to_boundary(&q_t, &q_r);
        let v = exp.weighted_value_grad(weights, &bt, &br).0;
        let tight = v >= objective;
        if v > objective {
            q_t = bt;
            q_r = br;
            objective = v;
        }
        tight
    };
    SubproblemSolution { q_t, q_r, objective, start_objective, status: res.status, boundary_tight }
}

/// Scales each nonzero element pair onto `|q_t|² + |q_r|² = 1`.
pub fn scale_to_boundary(q_t: &CVector, q_r: &CVector) -> (CVector, CVector) {
    let mut t = q_t.clone();
    let mut r = q_r.clone();
    for i in 0..t.len() {
        let n = (t[i].norm_sqr() + r[i].norm_sqr()).sqrt();
        if n > 0.0 {
            t[i] /= n;
            r[i] /= n;
        }
    }
    (t, r)
}

/// Energy-splitting subproblem.
pub fn solve_es_subproblem(exp: &SurrogateExpansion, cfg: &ValidatedConfig, opts: &ScaOptions) -> SubproblemSolution {
    solve_surface_subproblem(exp, &stream_alphas(cfg), SurfaceKind::Es, opts)
}

/// Time-switching subproblem: the reflection side (DL₁, UL₁) and the
/// transmission side (DL₂, UL₂) are solved separately under `|q| ≤ 1`.
pub fn solve_ts_subproblem(exp: &SurrogateExpansion, cfg: &ValidatedConfig, opts: &ScaOptions) -> SubproblemSolution {
    let a = stream_alphas(cfg);
    let r_side = solve_surface_subproblem(exp, &[a[0], 0.0, a[2], 0.0], SurfaceKind::Ts, opts);
    let t_side = solve_surface_subproblem(exp, &[0.0, a[1], 0.0, a[3]], SurfaceKind::Ts, opts);
    let q_t = t_side.q_t;
    let q_r = r_side.q_r;
    let objective = exp.weighted_value_grad(&a, &q_t, &q_r).0;
    let status = if r_side.status == SolveStatus::Converged && t_side.status == SolveStatus::Converged {
        SolveStatus::Converged
    } else {
        SolveStatus::CapReached
    };
    SubproblemSolution {
        q_t,
        q_r,
        objective,
        start_objective: r_side.start_objective + t_side.start_objective,
        status,
        boundary_tight: false,
    }
}

/// Mode-selection subproblem result; `φ` are the amplitude variables.
#[derive(Debug, Clone, PartialEq)]
pub struct MsSolution {
    pub q_t: CVector,
    pub q_r: CVector,
    pub phi_t: Vec<f64>,
    pub phi_r: Vec<f64>,
    /// Surrogate minus penalty at the returned point.
    pub objective: f64,
    pub start_objective: f64,
    pub status: SolveStatus,
}

/// Linearized penalty `Σ_m Σ_w (φ⁰)² + (1 − 2φ⁰)φ`.
pub fn penalty_bound(phi0_t: &[f64], phi0_r: &[f64], phi_t: &[f64], phi_r: &[f64]) -> f64 {
    let side = |p0: &[f64], p: &[f64]| p0.iter().zip(p).map(|(&a, &b)| a * a + (1.0 - 2.0 * a) * b).sum::<f64>();
    side(phi0_t, phi_t) + side(phi0_r, phi_r)
}

/// `Σ φ − φ²`, zero exactly at binary amplitudes.
pub fn binary_penalty(phi_t: &[f64], phi_r: &[f64]) -> f64 {
    phi_t.iter().chain(phi_r).map(|&p| p - p * p).sum()
}

/// Mode-selection subproblem: surrogate minus `μ·Δ` over `(q, φ)` with
/// `|q_w| ≤ φ_w` and `φ_t² + φ_r² ≤ 1`, the amplitude bound made tight at exit.
pub fn solve_ms_subproblem(
    exp: &SurrogateExpansion,
    phi0_t: &[f64],
    phi0_r: &[f64],
    schedule: &PenaltySchedule,
    cfg: &ValidatedConfig,
    opts: &ScaOptions,
) -> MsSolution {
    let m = exp.m();
    let w = stream_alphas(cfg);
    let mu = schedule.mu();
    let split = |x: &DVector<f64>| -> (CVector, CVector, Vec<f64>, Vec<f64>) {
        let (q_t, q_r) = unpack(x, m);
        let pt = (0..m).map(|i| x[4 * m + i]).collect();
        let pr = (0..m).map(|i| x[5 * m + i]).collect();
        (q_t, q_r, pt, pr)
    };
    let value = |q_t: &CVector, q_r: &CVector, pt: &[f64], pr: &[f64]| -> f64 {
        exp.weighted_value_grad(&w, q_t, q_r).0 - mu * penalty_bound(phi0_t, phi0_r, pt, pr)
    };
    let obj = |x: &DVector<f64>| {
        let (q_t, q_r, pt, pr) = split(x);
        value(&q_t, &q_r, &pt, &pr)
    };
    let grad = |x: &DVector<f64>| {
        let (q_t, q_r) = unpack(x, m);
        let (_, g_t, g_r) = exp.weighted_value_grad(&w, &q_t, &q_r);
        let extra: Vec<f64> = phi0_t.iter().chain(phi0_r).map(|&p0| -mu * (1.0 - 2.0 * p0)).collect();
        pack(&g_t, &g_r, &extra)
    };
    let project = |x: &DVector<f64>| {
        let (q_t, q_r, pt, pr) = split(x);
        let mut t = q_t.clone();
        let mut r = q_r.clone();
        let mut ft = pt.clone();
        let mut fr = pr.clone();
        for i in 0..m {
            let (a, b, c, d) = project_ms_element(q_t[i], q_r[i], pt[i], pr[i]);
            t[i] = a;
            r[i] = b;
            ft[i] = c;
            fr[i] = d;
        }
        let extra: Vec<f64> = ft.into_iter().chain(fr).collect();
        pack(&t, &r, &extra)
    };
    let extra0: Vec<f64> = phi0_t.iter().chain(phi0_r).copied().collect();
    let x0 = project(&pack(&exp.q_t, &exp.q_r, &extra0));
    let start_objective = obj(&x0);
    let res = projected_gradient_ascent(obj, grad, project, &x0, &opts.pga);
    let (q_t, q_r, pt, pr) = split(&res.x);

    // Tighten |q| = φ either by stretching q or by shrinking φ.
    let stretch = |q: &CVector, p: &[f64]| -> CVector {
        CVector::from_fn(m, |i, _| {
            let n = q[i].norm();
            if n > 0.0 {
                q[i] * (p[i] / n)
            } else {
                C64::new(p[i], 0.0)
            }
        })
    };
    let a_t = stretch(&q_t, &pt);
    let a_r = stretch(&q_r, &pr);
    let val_a = value(&a_t, &a_r, &pt, &pr);
    let b_pt: Vec<f64> = q_t.iter().map(|z| z.norm()).collect();
    let b_pr: Vec<f64> = q_r.iter().map(|z| z.norm()).collect();
    let val_b = value(&q_t, &q_r, &b_pt, &b_pr);
    let (sel, sel_val) = if val_a >= val_b { ((a_t, a_r, pt, pr), val_a) } else { ((q_t, q_r, b_pt, b_pr), val_b) };
    if sel_val >= start_objective {
        MsSolution {
            q_t: sel.0,
            q_r: sel.1,
            phi_t: sel.2,
            phi_r: sel.3,
            objective: sel_val,
            start_objective,
            status: res.status,
        }
    } else {
        let (q_t, q_r, pt, pr) = split(&x0);
        MsSolution { q_t, q_r, phi_t: pt, phi_r: pr, objective: start_objective, start_objective, status: res.status }
    }
}

/// Outcome of a re-expansion loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaOutcome {
    pub q_t: CVector,
    pub q_r: CVector,
    /// The allocation with receivers matched to the returned coefficients when
    /// [`ScaOptions::refresh_receivers`] is set, otherwise the input allocation.
    pub state: AllocationState,
    /// True weighted objective at the start and after each accepted expansion.
    pub history: Vec<f64>,
    pub status: SolveStatus,
    /// Any inner gradient solve hit its cap.
    pub kernel_cap: bool,
}

/// Doubles the step from `q` to the subproblem solution while the projected
/// point keeps raising the true objective.
#[allow(clippy::too_many_arguments)]
fn extrapolate(
    exp: &SurrogateExpansion,
    w: &[f64; 4],
    kind: SurfaceKind,
    q_t: &CVector,
    q_r: &CVector,
    s_t: CVector,
    s_r: CVector,
    f_sol: f64,
) -> (CVector, CVector, f64) {
    let d_t = &s_t - q_t;
    let d_r = &s_r - q_r;
    let mut best = (s_t, s_r, f_sol);
    let mut t = 2.0;
    for _ in 0..MAX_EXTRAPOLATION {
        let c_t = q_t + &d_t * C64::from(t);
        let c_r = q_r + &d_r * C64::from(t);
        let (c_t, c_r) = project_coefficients(kind, &c_t, &c_r);
        let f = exp.weighted_true(w, &c_t, &c_r);
        if f <= best.2 {
            break;
        }
        best = (c_t, c_r, f);
        t *= 2.0;
    }
    best
}

const MAX_EXTRAPOLATION: usize = 12;

fn frac_increase(new: f64, old: f64) -> f64 {
    (new - old) / old.abs().max(1e-12)
}

/// Re-expands and re-solves until the fractional increase of the true
/// weighted rate drops below `eps2`.
#[allow(clippy::too_many_arguments)]
pub fn run_sca_loop(
    comp: &Composite,
    ch: &ChannelSet,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
    kind: SurfaceKind,
    q_t: &CVector,
    q_r: &CVector,
    opts: &ScaOptions,
) -> Result<ScaOutcome> {
    let w = stream_alphas(cfg);
    let mut q_t = q_t.clone();
    let mut q_r = q_r.clone();
    let mut state = state.clone();
    let mut history = Vec::new();
    let mut kernel_cap = false;
    let mut status = SolveStatus::CapReached;
    for it in 0..=opts.max_iter {
        let exp = SurrogateExpansion::build(comp, ch, &state, cfg, model, &q_t, &q_r);
        let f = exp.weighted_true(&w, &q_t, &q_r);
        history.push(f);
        if kind == SurfaceKind::Fixed || it == opts.max_iter {
            status = if kind == SurfaceKind::Fixed { SolveStatus::Converged } else { status };
            break;
        }
        let sol = match kind {
            SurfaceKind::Ts => solve_ts_subproblem(&exp, cfg, opts),
            _ => solve_surface_subproblem(&exp, &w, kind, opts),
        };
        kernel_cap |= sol.status == SolveStatus::CapReached;
        let f_sol = exp.weighted_true(&w, &sol.q_t, &sol.q_r);
        if f_sol < f {
            status = SolveStatus::Converged;
            break;
        }
        let (et, er, f_new) = if opts.extrapolate {
            extrapolate(&exp, &w, kind, &q_t, &q_r, sol.q_t, sol.q_r, f_sol)
        } else {
            (sol.q_t, sol.q_r, f_sol)
        };
        q_t = et;
        q_r = er;
        if opts.refresh_receivers {
            let eff = effective_from_q(comp, ch, &q_t, &q_r)?;
            refresh_receivers(&eff, &mut state, cfg, model)?;
        }
        if frac_increase(f_new, f) < opts.eps2 {
            let exp = SurrogateExpansion::build(comp, ch, &state, cfg, model, &q_t, &q_r);
            history.push(exp.weighted_true(&w, &q_t, &q_r));
            status = SolveStatus::Converged;
            break;
        }
    }
    Ok(ScaOutcome { q_t, q_r, state, history, status, kernel_cap })
}

/// Result of [`polish_matched`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolishOutcome {
    pub q_t: CVector,
    pub q_r: CVector,
    /// Input allocation with combiners matched to the returned coefficients.
    pub state: AllocationState,
    pub start_value: f64,
    pub value: f64,
    pub status: SolveStatus,
}

fn matched_state(
    comp: &Composite,
    ch: &ChannelSet,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
    q_t: &CVector,
    q_r: &CVector,
) -> Result<AllocationState> {
    let eff = effective_from_q(comp, ch, q_t, q_r)?;
    let mut st = state.clone();
    st.u_comb = update_combiners(&eff, &st, cfg, model)?;
    Ok(st)
}

/// Projected gradient ascent of the weighted sum-rate in the coefficients with
/// beamformers and powers fixed and the combiners re-matched (MMSE) at every
/// trial point. The combiners maximize each uplink SINR separately, so the
/// fixed-combiner gradient at the matched combiners is the exact gradient.
///
/// `project` must map onto the scheme's feasible set; `q` must already be
/// feasible.
#[allow(clippy::too_many_arguments)]
pub fn polish_matched(
    comp: &Composite,
    ch: &ChannelSet,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
    project: impl Fn(&CVector, &CVector) -> (CVector, CVector),
    q_t: &CVector,
    q_r: &CVector,
    opts: &PgaOptions,
) -> Result<PolishOutcome> {
    let m = q_t.len();
    let w = stream_alphas(cfg);
    let eval = |x: &DVector<f64>, grad: bool| -> Option<(f64, DVector<f64>)> {
        let (qt, qr) = unpack(x, m);
        let st = matched_state(comp, ch, state, cfg, model, &qt, &qr).ok()?;
        let exp = SurrogateExpansion::build(comp, ch, &st, cfg, model, &qt, &qr);
        if grad {
            let (v, g_t, g_r) = exp.weighted_true_grad(&w, &qt, &qr);
            Some((v, pack(&g_t, &g_r, &[])))
        } else {
            Some((exp.weighted_true(&w, &qt, &qr), DVector::zeros(0)))
        }
    };
    let x0 = pack(q_t, q_r, &[]);
    let start_value = eval(&x0, false).map_or(f64::NEG_INFINITY, |r| r.0);
    let res = projected_gradient_ascent(
        |x| eval(x, false).map_or(f64::NEG_INFINITY, |r| r.0),
        |x| eval(x, true).map_or_else(|| DVector::zeros(x.len()), |r| r.1),
        |x| {
            let (qt, qr) = unpack(x, m);
            let (a, b) = project(&qt, &qr);
            pack(&a, &b, &[])
        },
        &x0,
        opts,
    );
    let (mut pt, mut pr) = unpack(&res.x, m);
    let mut value = res.value;
    if !(value >= start_value) {
        pt = q_t.clone();
        pr = q_r.clone();
        value = start_value;
    }
    let state = matched_state(comp, ch, state, cfg, model, &pt, &pr)?;
    Ok(PolishOutcome { q_t: pt, q_r: pr, state, start_value, value, status: res.status })
}

/// Whether [`polish_joint`] applies: both beams share one budget scale.
pub fn joint_polish_applies(model: &RateModel) -> bool {
    let [a, b] = model.bs_budget_scale;
    a == b && a > 0.0
}

/// Like [`polish_matched`] but ascends the beamformers together with the
/// coefficients, keeping their shared power budget. Uplink powers stay fixed.
/// Requires [`joint_polish_applies`].
#[allow(clippy::too_many_arguments)]
pub fn polish_joint(
    comp: &Composite,
    ch: &ChannelSet,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
    project: impl Fn(&CVector, &CVector) -> (CVector, CVector),
    q_t: &CVector,
    q_r: &CVector,
    opts: &PgaOptions,
) -> Result<PolishOutcome> {
    if !joint_polish_applies(model) {
        return Err(Error::config("bs_budget_scale", "joint polish needs equal beam budget scales"));
    }
    let m = q_t.len();
    let n = state.w[0].len();
    let radius2 = cfg.p_max_bs / model.bs_budget_scale[0];
    let alphas = stream_alphas(cfg);
    let split = |x: &DVector<f64>| -> (CVector, CVector, [CVector; 2]) {
        let (qt, qr) = unpack(x, m);
        let o = 4 * m;
        let w = std::array::from_fn(|k| {
            CVector::from_fn(n, |i, _| C64::new(x[o + 2 * k * n + i], x[o + (2 * k + 1) * n + i]))
        });
        (qt, qr, w)
    };
    let join = |qt: &CVector, qr: &CVector, w: &[CVector; 2]| -> DVector<f64> {
        let extra: Vec<f64> = w.iter().flat_map(|wk| wk.iter().map(|z| z.re).chain(wk.iter().map(|z| z.im))).collect();
        pack(qt, qr, &extra)
    };
    let at = |x: &DVector<f64>| -> Option<(CVector, CVector, AllocationState)> {
        let (qt, qr, w) = split(x);
        let mut st = state.clone();
        st.w = w;
        let st = matched_state(comp, ch, &st, cfg, model, &qt, &qr).ok()?;
        Some((qt, qr, st))
    };
    let value = |x: &DVector<f64>| -> f64 {
        at(x).map_or(f64::NEG_INFINITY, |(qt, qr, st)| {
            SurrogateExpansion::build(comp, ch, &st, cfg, model, &qt, &qr).weighted_true(&alphas, &qt, &qr)
        })
    };
    let grad = |x: &DVector<f64>| -> DVector<f64> {
        let Some((qt, qr, st)) = at(x) else { return DVector::zeros(x.len()) };
        let exp = SurrogateExpansion::build(comp, ch, &st, cfg, model, &qt, &qr);
        let (_, g_t, g_r) = exp.weighted_true_grad(&alphas, &qt, &qr);
        let Ok(eff) = effective_from_q(comp, ch, &qt, &qr) else { return DVector::zeros(x.len()) };
        let mut g_w = crate::rates::wsr_beamformer_grad(&eff, &st, cfg, model);
        for (k, gk) in g_w.iter_mut().enumerate() {
            if !model.active[k] {
                gk.fill(C64::new(0.0, 0.0));
            }
        }
        join(&g_t, &g_r, &g_w)
    };
    let proj = |x: &DVector<f64>| -> DVector<f64> {
        let (qt, qr, mut w) = split(x);
        let (a, b) = project(&qt, &qr);
        let p = norm_sqr(&w[0]) + norm_sqr(&w[1]);
        if p > radius2 {
            let s = (radius2 / p).sqrt();
            for wk in &mut w {
                *wk *= C64::from(s);
            }
        }
        join(&a, &b, &w)
    };
    let x0 = join(q_t, q_r, &state.w);
    let start_value = value(&x0);
    let res = projected_gradient_ascent(value, grad, proj, &x0, opts);
    let (mut pt, mut pr, mut w) = split(&res.x);
    let mut best = res.value;
    if !(best >= start_value) {
        pt = q_t.clone();
        pr = q_r.clone();
        w = state.w.clone();
        best = start_value;
    }
    let mut st = state.clone();
    st.w = w;
    let state = matched_state(comp, ch, &st, cfg, model, &pt, &pr)?;
    Ok(PolishOutcome { q_t: pt, q_r: pr, state, start_value, value: best, status: res.status })
}

/// Phase levels tried per element by [`refine_modes`].
pub const MODE_PHASE_GRID: usize = 16;

/// Passes over the surface before [`refine_modes`] stops.
pub const MAX_MODE_PASSES: usize = 10;

/// Greedy single-element search over binary modes: each element in turn is
/// tried on either side at [`MODE_PHASE_GRID`] phases (and its current
/// phase), and the best assignment by true weighted sum-rate with matched
/// combiners is kept. `q` must be binary with unit modulus. Returns the
/// refined coefficients and their value.
#[allow(clippy::too_many_arguments)]
pub fn refine_modes(
    comp: &Composite,
    ch: &ChannelSet,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
    q_t: &CVector,
    q_r: &CVector,
) -> Result<(CVector, CVector, f64)> {
    let m = q_t.len();
    let alphas = stream_alphas(cfg);
    let value = |qt: &CVector, qr: &CVector| -> Result<f64> {
        let st = matched_state(comp, ch, state, cfg, model, qt, qr)?;
        Ok(SurrogateExpansion::build(comp, ch, &st, cfg, model, qt, qr).weighted_true(&alphas, qt, qr))
    };
    let zero = C64::new(0.0, 0.0);
    let (mut t, mut r) = (q_t.clone(), q_r.clone());
    let mut best = value(&t, &r)?;
    for _ in 0..MAX_MODE_PASSES {
        let mut improved = false;
        for i in 0..m {
            let current = if t[i].norm_sqr() > 0.5 { t[i] } else { r[i] };
            let phases = (0..MODE_PHASE_GRID)
                .map(|k| C64::from_polar(1.0, std::f64::consts::TAU * k as f64 / MODE_PHASE_GRID as f64))
                .chain(std::iter::once(current));
            let (t0, r0) = (t[i], r[i]);
            let mut choice = None;
            for z in phases {
                for transmit in [true, false] {
                    (t[i], r[i]) = if transmit { (z, zero) } else { (zero, z) };
                    let v = value(&t, &r)?;
                    if v > best + 1e-12 * best.abs().max(1.0) {
                        best = v;
                        choice = Some((t[i], r[i]));
                    }
                }
            }
            match choice {
                Some((a, b)) => {
                    (t[i], r[i]) = (a, b);
                    improved = true;
                }
                None => (t[i], r[i]) = (t0, r0),
            }
        }
        if !improved {
            break;
        }
    }
    Ok((t, r, best))
}

/// Penalty escalations before the mode-selection loop gives up.
pub const MAX_PENALTY_ROUNDS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct MsOutcome {
    /// Binary-rounded coefficients.
    pub q_t: CVector,
    pub q_r: CVector,
    /// Amplitudes before rounding.
    pub phi_t: Vec<f64>,
    pub phi_r: Vec<f64>,
    /// `max_m,w (φ − φ²)` before rounding.
    pub binarity: f64,
    pub rounds: usize,
    pub status: SolveStatus,
    pub kernel_cap: bool,
}

/// Largest `φ − φ²` over all amplitudes.
pub fn max_binarity_gap(phi_t: &[f64], phi_r: &[f64]) -> f64 {
    phi_t.iter().chain(phi_r).map(|&p| p - p * p).fold(0.0, f64::max)
}

/// Unit-modulus projection with element `i` transmitting when `transmit[i]`
/// and reflecting otherwise.
pub fn project_modes(transmit: &[bool], q_t: &CVector, q_r: &CVector) -> (CVector, CVector) {
    let zero = C64::new(0.0, 0.0);
    let t = CVector::from_fn(q_t.len(), |i, _| if transmit[i] { project_fixed_modulus(q_t[i], 1.0) } else { zero });
    let r = CVector::from_fn(q_r.len(), |i, _| if transmit[i] { zero } else { project_fixed_modulus(q_r[i], 1.0) });
    (t, r)
}

/// Assigns each element wholly to its dominant side, keeping phases.
pub fn round_to_modes(q_t: &CVector, q_r: &CVector, phi_t: &[f64], phi_r: &[f64]) -> (CVector, CVector) {
    let m = q_t.len();
    let unit = |z: C64| {
        let n = z.norm();
        if n > 0.0 {
            z / n
        } else {
            C64::new(1.0, 0.0)
        }
    };
    let zero = C64::new(0.0, 0.0);
    let mut t = CVector::from_element(m, zero);
    let mut r = CVector::from_element(m, zero);
    for i in 0..m {
        if phi_t[i] >= phi_r[i] {
            t[i] = unit(q_t[i]);
        } else {
            r[i] = unit(q_r[i]);
        }
    }
    (t, r)
}

/// Penalty loop: re-expanded mode-selection subproblems at the current `μ`
/// until the fractional increase is below `eps2`, then `μ ← ωμ`, until every
/// amplitude is within the schedule's tolerance of binary. `schedule` keeps its
/// escalated value for the caller's next outer iteration.
#[allow(clippy::too_many_arguments)]
pub fn run_ms_penalty_loop(
    comp: &Composite,
    ch: &ChannelSet,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
    q_t: &CVector,
    q_r: &CVector,
    schedule: &mut PenaltySchedule,
    opts: &ScaOptions,
) -> MsOutcome {
    let w = stream_alphas(cfg);
    let (mut q_t, mut q_r) = project_coefficients(SurfaceKind::Es, q_t, q_r);
    let mut phi_t: Vec<f64> = q_t.iter().map(|z| z.norm()).collect();
    let mut phi_r: Vec<f64> = q_r.iter().map(|z| z.norm()).collect();
    let mut kernel_cap = false;
    let mut status = SolveStatus::CapReached;
    let mut rounds = 0;
    for _ in 0..MAX_PENALTY_ROUNDS {
        rounds += 1;
        let mu = schedule.mu();
        let true_obj = |exp: &SurrogateExpansion, qt: &CVector, qr: &CVector, pt: &[f64], pr: &[f64]| {
            exp.weighted_true(&w, qt, qr) - mu * binary_penalty(pt, pr)
        };
        let exp = SurrogateExpansion::build(comp, ch, state, cfg, model, &q_t, &q_r);
        let mut f = true_obj(&exp, &q_t, &q_r, &phi_t, &phi_r);
        for _ in 0..opts.max_iter {
            let exp = SurrogateExpansion::build(comp, ch, state, cfg, model, &q_t, &q_r);
            let sol = solve_ms_subproblem(&exp, &phi_t, &phi_r, schedule, cfg, opts);
            kernel_cap |= sol.status == SolveStatus::CapReached;
            let f_new = true_obj(&exp, &sol.q_t, &sol.q_r, &sol.phi_t, &sol.phi_r);
            if f_new < f {
                break;
            }
            let inc = (f_new - f) / f.abs().max(1e-12);
            q_t = sol.q_t;
            q_r = sol.q_r;
            phi_t = sol.phi_t;
            phi_r = sol.phi_r;
            f = f_new;
            if inc < opts.eps2 {
                break;
            }
        }
        schedule.escalate();
        if max_binarity_gap(&phi_t, &phi_r) <= schedule.binary_tol() {
            status = SolveStatus::Converged;
            break;
        }
    }
    let binarity = max_binarity_gap(&phi_t, &phi_r);
    let (rt, rr) = round_to_modes(&q_t, &q_r, &phi_t, &phi_r);
    MsOutcome { q_t: rt, q_r: rr, phi_t, phi_r, binarity, rounds, status, kernel_cap }
}

/// Outcome of the time-fraction grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct TauSearch {
    pub tau: [f64; 4],
    pub wsr: f64,
    /// Every candidate with its WSR, in lexicographic order of `τ`.
    pub table: Vec<([f64; 4], f64)>,
    /// Allocation achieving `wsr` at `tau`.
    pub w: [CVector; 2],
    pub rho: [f64; 2],
}

/// All points of the 3-simplex with spacing `1/n`.
pub fn simplex_grid(n: usize) -> Vec<[f64; 4]> {
    let mut out = Vec::new();
    let nf = n as f64;
    for a in 0..=n {
        for b in 0..=n - a {
            for c in 0..=n - a - b {
                let d = n - a - b - c;
                out.push([a as f64 / nf, b as f64 / nf, c as f64 / nf, d as f64 / nf]);
            }
        }
    }
    out
}

struct TsDirections {
    dl_dir: [CVector; 2],
    dl_gain: [f64; 2],
    ul_gain: [f64; 2],
}

fn ts_directions(eff: &EffectiveChannels, state: &AllocationState, cfg: &ValidatedConfig) -> TsDirections {
    let dl = |k: usize| {
        let h = eff.dl_channel(k);
        let w = &state.w[k];
        let nw = w.norm();
        let d = if nw > 0.0 {
            w / C64::from(nw)
        } else {
            let nh = h.norm();
            if nh > 0.0 {
                h.map(|z| z.conj()) / C64::from(nh)
            } else {
                w.clone()
            }
        };
        let g = h.dot(&d).norm_sqr() / cfg.sigma2_dl;
        (d, g)
    };
    let (d0, g0) = dl(0);
    let (d1, g1) = dl(1);
    TsDirections {
        dl_dir: [d0, d1],
        dl_gain: [g0, g1],
        ul_gain: [norm_sqr(&eff.h_r3) / cfg.sigma2_ul, norm_sqr(&eff.g_t3) / cfg.sigma2_ul],
    }
}

/// Per-slot powers `e_k` maximizing `Σ τ_k log(1 + g_k e_k)` s.t. `Σ τ_k e_k ≤ P`.
fn water_fill(tau: [f64; 2], gain: [f64; 2], p: f64) -> [f64; 2] {
    let mut idx: Vec<usize> = (0..2).filter(|&k| tau[k] > TAU_EPS && gain[k] > 0.0).collect();
    idx.sort_by(|&a, &b| gain[b].partial_cmp(&gain[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = [0.0; 2];
    while !idx.is_empty() {
        let t: f64 = idx.iter().map(|&k| tau[k]).sum();
        let level = (p + idx.iter().map(|&k| tau[k] / gain[k]).sum::<f64>()) / t;
        let last = *idx.last().unwrap();
        if level > 1.0 / gain[last] {
            for &k in &idx {
                out[k] = level - 1.0 / gain[k];
            }
            return out;
        }
        idx.pop();
    }
    out
}

fn ts_candidate(dirs: &TsDirections, tau: [f64; 4], cfg: &ValidatedConfig) -> (f64, [f64; 2], [f64; 2]) {
    let e = water_fill([tau[0], tau[1]], dirs.dl_gain, cfg.p_max_bs);
    let mut dl = 0.0;
    for k in 0..2 {
        if tau[k] > TAU_EPS {
            dl += tau[k] * (1.0 + dirs.dl_gain[k] * e[k]).log2();
        }
    }
    let mut rho = [0.0; 2];
    let mut ul = 0.0;
    for l in 0..2 {
        let t = tau[2 + l];
        if t > TAU_EPS {
            rho[l] = cfg.p_max_ul / t;
            ul += t * (1.0 + rho[l] * dirs.ul_gain[l]).log2();
        }
    }
    (cfg.alpha1 * dl + cfg.alpha2 * ul, e, rho)
}

/// Grid search over the time fractions with optimal per-slot powers along the
/// current beam directions; ties go to the lexicographically smallest `τ`.
pub fn search_time_fractions(
    eff: &EffectiveChannels,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    grid_step: f64,
) -> Result<TauSearch> {
    if !(grid_step > 0.0 && grid_step <= 0.5) {
        return Err(Error::config("grid_step", format!("must lie in (0, 0.5], got {grid_step}")));
    }
    let n = (1.0 / grid_step).round() as usize;
    if n == 0 || ((n as f64) * grid_step - 1.0).abs() > 1e-9 {
        return Err(Error::config("grid_step", format!("1/{grid_step} is not an integer")));
    }
    let mut cands = simplex_grid(n);
    if cands.is_empty() {
        return Err(Error::Kernel("empty time-fraction grid".into()));
    }
    if let Some(cur) = state.tau {
        if !cands.contains(&cur) {
            cands.push(cur);
            cands.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        }
    }
    let dirs = ts_directions(eff, state, cfg);
    let evals: Vec<(f64, [f64; 2], [f64; 2])> = cands.par_iter().map(|&t| ts_candidate(&dirs, t, cfg)).collect();
    let mut best = 0usize;
    for i in 1..evals.len() {
        if evals[i].0 > evals[best].0 * (1.0 + 1e-12) + 1e-300 {
            best = i;
        }
    }
    let (wsr, e, rho) = evals[best];
    let w = [&dirs.dl_dir[0] * C64::from(e[0].sqrt()), &dirs.dl_dir[1] * C64::from(e[1].sqrt())];
    let table = cands.iter().copied().zip(evals.iter().map(|e| e.0)).collect();
    Ok(TauSearch { tau: cands[best], wsr, table, w, rho })
}
