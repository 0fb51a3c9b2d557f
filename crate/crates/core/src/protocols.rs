//! Outer orchestration: alternate the surface stage and the WMMSE loop.
//!
//! All schemes share one loop. A scheme fixes the feasible set of the
//! coefficients ([`SurfaceKind`]) and the rate model; time switching adds the
//! time-fraction search to its surface stage.

use std::fmt;
use std::str::FromStr;

use crate::config::ValidatedConfig;
use crate::error::{Error, Result};
use crate::kernels::PgaOptions;
use crate::kernels::SolveStatus;
use crate::linalg::{CVector, C64};
use crate::model::{AllocationState, ChannelSet, Protocol, RateReport, StarCoefficients};
use crate::rates::{self, effective_from_q, Composite, RateModel};
use crate::rng::StreamRng;
use crate::sca::{
    joint_polish_applies, polish_joint, polish_matched, project_coefficients, project_modes, refine_modes,
    run_ms_penalty_loop, run_sca_loop, search_time_fractions, PenaltySchedule, PolishOutcome, ScaOptions, SurfaceKind,
};
use crate::wmmse::{initial_allocation, refresh_receivers, run_wmmse_model, WmmseOptions};

/// Relative slack on the outer WSR trace.
pub const MONOTONE_SLACK: f64 = 1e-6;

const SAFEGUARD_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Es,
    Ms,
    Ts,
    EqualEs,
    ConventionalRis,
    DlHd,
    UlHd,
    Hd,
    NoRis,
    UpperBound,
}

impl Scheme {
    pub const ALL: [Scheme; 10] = [
        Scheme::Es,
        Scheme::Ms,
        Scheme::Ts,
        Scheme::EqualEs,
        Scheme::ConventionalRis,
        Scheme::DlHd,
        Scheme::UlHd,
        Scheme::Hd,
        Scheme::NoRis,
        Scheme::UpperBound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Es => "es",
            Scheme::Ms => "ms",
            Scheme::Ts => "ts",
            Scheme::EqualEs => "equal-es",
            Scheme::ConventionalRis => "conventional-ris",
            Scheme::DlHd => "dl-hd",
            Scheme::UlHd => "ul-hd",
            Scheme::Hd => "hd",
            Scheme::NoRis => "no-ris",
            Scheme::UpperBound => "upper-bound",
        }
    }

    pub fn is_baseline(self) -> bool {
        !matches!(self, Scheme::Es | Scheme::Ms | Scheme::Ts)
    }

    pub fn surface_kind(self) -> SurfaceKind {
        match self {
            Scheme::Es | Scheme::DlHd | Scheme::UlHd | Scheme::Hd | Scheme::UpperBound => SurfaceKind::Es,
            Scheme::Ms => SurfaceKind::Ms,
            Scheme::Ts => SurfaceKind::Ts,
            Scheme::EqualEs => SurfaceKind::EqualEs,
            Scheme::ConventionalRis => SurfaceKind::ConventionalRis,
            Scheme::NoRis => SurfaceKind::Fixed,
        }
    }

    pub fn protocol(self) -> Protocol {
        match self {
            Scheme::Ms => Protocol::Ms,
            Scheme::Ts => Protocol::Ts,
            Scheme::EqualEs => Protocol::EqualEs,
            Scheme::ConventionalRis => Protocol::ConventionalRis,
            Scheme::NoRis => Protocol::None,
            _ => Protocol::Es,
        }
    }

    /// Rate model; `tau` is used only by time switching.
    pub fn rate_model(self, tau: [f64; 4]) -> RateModel {
        match self {
            Scheme::Ts => RateModel::time_switching(tau),
            Scheme::DlHd => RateModel::dl_half_duplex(),
            Scheme::UlHd => RateModel::ul_half_duplex(),
            Scheme::Hd => RateModel::half_duplex(),
            Scheme::UpperBound => RateModel::upper_bound(),
            _ => RateModel::full_duplex(),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Scheme> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.name() == key || sc.name().replace('-', "") == key)
            .ok_or_else(|| Error::UnknownScheme(s.to_string()))
    }
}

/// Warm start for an orchestrator run.
#[derive(Debug, Clone, PartialEq)]
pub struct Init {
    pub star: StarCoefficients,
    /// Allocation to start the first WMMSE run from; matched-filter default.
    pub state: Option<AllocationState>,
    /// Time fractions for time switching; uniform default.
    pub tau: Option<[f64; 4]>,
}

impl Init {
    pub fn from_star(star: StarCoefficients) -> Init {
        Init { star, state: None, tau: None }
    }
}

/// Which stages hit an iteration cap at any point of the run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CapFlags {
    pub outer: bool,
    pub wmmse: bool,
    pub sca: bool,
    /// A surface subproblem solver ran out of iterations.
    pub kernel: bool,
    pub penalty: bool,
    /// The polish ascent used its whole budget. Its iterate is still an
    /// improvement and the next outer iteration resumes it, so this flag is
    /// informational and not part of [`CapFlags::any`].
    pub polish: bool,
}

impl CapFlags {
    /// Any solver cap other than the polish budget.
    pub fn any(&self) -> bool {
        self.outer || self.wmmse || self.sca || self.kernel || self.penalty
    }
}

/// Final iterate of an orchestrator run.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub scheme: Scheme,
    pub star: StarCoefficients,
    pub state: AllocationState,
    /// Rates at the final iterate; `trace` holds `(outer_iteration, wsr)`.
    pub report: RateReport,
    pub tau: Option<[f64; 4]>,
    pub outer_iterations: usize,
    pub status: SolveStatus,
    pub caps: CapFlags,
    /// An outer iterate lowered the WSR and was discarded.
    pub safeguard_triggered: bool,
    /// Mode selection: `max (φ − φ²)` before the final rounding.
    pub binarity: Option<f64>,
}

impl Optimized {
    pub fn wsr(&self) -> f64 {
        self.report.wsr
    }
    pub fn trace_values(&self) -> Vec<f64> {
        self.report.trace.iter().map(|&(_, v)| v).collect()
    }
}

/// Starting coefficients for `scheme` drawn from `rng`: random phases with
/// amplitude `1/√2` for the simultaneous schemes, unit modulus for time
/// switching and the conventional surface, zeros without a surface.
pub fn initial_coefficients(scheme: Scheme, m: usize, rng: &mut StreamRng) -> Result<StarCoefficients> {
    let zero = C64::new(0.0, 0.0);
    let draw = |rng: &mut StreamRng, amp: f64| -> CVector { CVector::from_fn(m, |_, _| rng.unit_phasor() * amp) };
    let protocol = scheme.protocol();
    match scheme.surface_kind() {
        SurfaceKind::Fixed => Ok(StarCoefficients::zeros(m)),
        SurfaceKind::Ts => {
            let t = draw(rng, 1.0);
            let r = draw(rng, 1.0);
            StarCoefficients::new(t, r, protocol)
        }
        SurfaceKind::ConventionalRis => {
            if !m.is_multiple_of(2) {
                return Err(Error::config("m", format!("conventional RIS needs an even element count, got {m}")));
            }
            let mut t = draw(rng, 1.0);
            let mut r = draw(rng, 1.0);
            for i in 0..m {
                if i < m / 2 {
                    t[i] = zero;
                } else {
                    r[i] = zero;
                }
            }
            StarCoefficients::new(t, r, protocol)
        }
        _ => {
            let a = std::f64::consts::FRAC_1_SQRT_2;
            let t = draw(rng, a);
            let r = draw(rng, a);
            StarCoefficients::new(t, r, protocol)
        }
    }
}

fn check_init(scheme: Scheme, ch: &ChannelSet, cfg: &ValidatedConfig, init: &Init) -> Result<()> {
    if init.star.m() != ch.m() {
        return Err(Error::Shape(format!("surface has {} elements, channels {}", init.star.m(), ch.m())));
    }
    if ch.n_t() != cfg.n_t {
        return Err(Error::Shape(format!("channels have {} antennas, config {}", ch.n_t(), cfg.n_t)));
    }
    if scheme == Scheme::ConventionalRis && !ch.m().is_multiple_of(2) {
        return Err(Error::config("m", format!("conventional RIS needs an even element count, got {}", ch.m())));
    }
    if let Some(st) = &init.state {
        if st.w[0].len() != cfg.n_t {
            return Err(Error::Shape("initial allocation has the wrong antenna count".into()));
        }
    }
    Ok(())
}

/// Runs the shared orchestrator for `scheme` from `init` (drawn from `rng`
/// when absent).
pub fn optimize_scheme(
    scheme: Scheme,
    ch: &ChannelSet,
    cfg: &ValidatedConfig,
    init: Option<&Init>,
    rng: &mut StreamRng,
) -> Result<Optimized> {
    let owned;
    let init = match init {
        Some(i) => i,
        None => {
            owned = Init::from_star(initial_coefficients(scheme, ch.m(), rng)?);
            &owned
        }
    };
    check_init(scheme, ch, cfg, init)?;
    orchestrate(scheme, ch, cfg, init)
}

/// Energy splitting.
pub fn optimize_es(
    ch: &ChannelSet,
    cfg: &ValidatedConfig,
    init: Option<&Init>,
    rng: &mut StreamRng,
) -> Result<Optimized> {
    optimize_scheme(Scheme::Es, ch, cfg, init, rng)
}

/// Mode selection.
pub fn optimize_ms(
    ch: &ChannelSet,
    cfg: &ValidatedConfig,
    init: Option<&Init>,
    rng: &mut StreamRng,
) -> Result<Optimized> {
    optimize_scheme(Scheme::Ms, ch, cfg, init, rng)
}

/// Time switching; the final fractions are in [`Optimized::tau`].
pub fn optimize_ts(
    ch: &ChannelSet,
    cfg: &ValidatedConfig,
    init: Option<&Init>,
    rng: &mut StreamRng,
) -> Result<Optimized> {
    optimize_scheme(Scheme::Ts, ch, cfg, init, rng)
}

/// Any of the baseline schemes.
pub fn run_baseline(
    scheme: Scheme,
    ch: &ChannelSet,
    cfg: &ValidatedConfig,
    init: Option<&Init>,
    rng: &mut StreamRng,
) -> Result<Optimized> {
    if !scheme.is_baseline() {
        return Err(Error::UnknownScheme(format!("{scheme} is not a baseline")));
    }
    optimize_scheme(scheme, ch, cfg, init, rng)
}

struct Iterate {
    q_t: CVector,
    q_r: CVector,
    tau: [f64; 4],
    state: AllocationState,
    wsr: f64,
}

fn orchestrate(scheme: Scheme, ch: &ChannelSet, cfg: &ValidatedConfig, init: &Init) -> Result<Optimized> {
    let kind = scheme.surface_kind();
    let comp = Composite::new(ch);
    let wopts = WmmseOptions::from_config(cfg);
    let sopts = ScaOptions::from_config(cfg);
    let mut schedule = PenaltySchedule::from_config(cfg);
    let mut caps = CapFlags::default();
    let mut binarity = None;

    let tau0 = if kind == SurfaceKind::Ts { init.tau.unwrap_or([0.25; 4]) } else { [1.0; 4] };
    let model0 = scheme.rate_model(tau0);
    let eff = effective_from_q(&comp, ch, &init.star.q_t, &init.star.q_r)?;
    let state0 = match &init.state {
        Some(s) => {
            let mut s = s.clone();
            if kind == SurfaceKind::Ts {
                s.tau = Some(tau0);
            }
            s
        }
        None => initial_allocation(&eff, cfg, &model0)?,
    };
    let wm = run_wmmse_model(&eff, &state0, cfg, &model0, &wopts)?;
    caps.wmmse |= wm.status == SolveStatus::CapReached;
    let mut cur = Iterate {
        q_t: init.star.q_t.clone(),
        q_r: init.star.q_r.clone(),
        tau: tau0,
        wsr: *wm.trace.last().unwrap_or(&0.0),
        state: wm.state,
    };

    // The relaxed mode-selection start is not binary, so its trace begins
    // after the first penalty loop.
    let mut warming = kind == SurfaceKind::Ms;
    let eps_outer =
        if kind == SurfaceKind::Ms { cfg.tolerances.eps3.min(cfg.tolerances.eps4) } else { cfg.tolerances.eps3 };
    let mut trace = if warming { Vec::new() } else { vec![(0usize, cur.wsr)] };
    let mut status = SolveStatus::CapReached;
    let mut safeguard = false;
    let mut iterations = 0;

    for it in 1..=cfg.max_outer {
        iterations = it;
        let model = scheme.rate_model(cur.tau);
        let (q_t, q_r, tau, pre_state) = match kind {
            SurfaceKind::Ms => {
                let out =
                    run_ms_penalty_loop(&comp, ch, &cur.state, cfg, &model, &cur.q_t, &cur.q_r, &mut schedule, &sopts);
                caps.kernel |= out.kernel_cap;
                caps.penalty |= out.status == SolveStatus::CapReached;
                binarity = Some(out.binarity);
                let (rt, rr, _) = refine_modes(&comp, ch, &cur.state, cfg, &model, &out.q_t, &out.q_r)?;
                let modes: Vec<bool> = rt.iter().map(|z| z.norm_sqr() > 0.5).collect();
                let p = polish(
                    &comp,
                    ch,
                    &cur.state,
                    cfg,
                    &model,
                    |t, r| project_modes(&modes, t, r),
                    &rt,
                    &rr,
                    &sopts.pga,
                )?;
                caps.polish |= p.status == SolveStatus::CapReached;
                (p.q_t, p.q_r, cur.tau, p.state)
            }
            SurfaceKind::Ts => ts_stage(&comp, ch, cfg, &cur, &sopts, &mut caps)?,
            _ => {
                let out = run_sca_loop(&comp, ch, &cur.state, cfg, &model, kind, &cur.q_t, &cur.q_r, &sopts)?;
                caps.kernel |= out.kernel_cap;
                caps.sca |= out.status == SolveStatus::CapReached;
                if kind == SurfaceKind::Fixed {
                    (out.q_t, out.q_r, cur.tau, out.state)
                } else {
                    let p = polish(
                        &comp,
                        ch,
                        &out.state,
                        cfg,
                        &model,
                        |t, r| project_coefficients(kind, t, r),
                        &out.q_t,
                        &out.q_r,
                        &sopts.pga,
                    )?;
                    caps.polish |= p.status == SolveStatus::CapReached;
                    (p.q_t, p.q_r, cur.tau, p.state)
                }
            }
        };
        let model = scheme.rate_model(tau);
        let eff = effective_from_q(&comp, ch, &q_t, &q_r)?;
        let wm = run_wmmse_model(&eff, &pre_state, cfg, &model, &wopts)?;
        caps.wmmse |= wm.status == SolveStatus::CapReached;
        let wsr = *wm.trace.last().unwrap_or(&0.0);
        let next = Iterate { q_t, q_r, tau, state: wm.state, wsr };

        if warming {
            warming = false;
            cur = next;
            trace.push((it, cur.wsr));
            continue;
        }
        let slack = SAFEGUARD_SLACK * cur.wsr.abs().max(1.0);
        if wsr < cur.wsr - slack {
            safeguard = true;
            status = SolveStatus::Converged;
            break;
        }
        let delta = (wsr - cur.wsr).abs();
        cur = next;
        trace.push((it, cur.wsr));
        if delta < eps_outer {
            status = SolveStatus::Converged;
            break;
        }
    }
    caps.outer = status == SolveStatus::CapReached;

    let model = scheme.rate_model(cur.tau);
    let eff = effective_from_q(&comp, ch, &cur.q_t, &cur.q_r)?;
    let mut report = rates::evaluate(&eff, &cur.state, cfg, &model);
    report.trace = trace;
    let star = StarCoefficients::new(cur.q_t, cur.q_r, scheme.protocol())?;
    Ok(Optimized {
        scheme,
        star,
        state: cur.state,
        report,
        tau: (kind == SurfaceKind::Ts).then_some(cur.tau),
        outer_iterations: iterations,
        status,
        caps,
        safeguard_triggered: safeguard,
        binarity,
    })
}

/// Joint coefficient and beamformer polish where the budget allows it,
/// coefficients alone otherwise.
#[allow(clippy::too_many_arguments)]
fn polish(
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
    if joint_polish_applies(model) {
        polish_joint(comp, ch, state, cfg, model, project, q_t, q_r, opts)
    } else {
        polish_matched(comp, ch, state, cfg, model, project, q_t, q_r, opts)
    }
}

/// Alternates the per-side coefficient update and the time-fraction search
/// until the fractional WSR increase drops below `eps2`.
fn ts_stage(
    comp: &Composite,
    ch: &ChannelSet,
    cfg: &ValidatedConfig,
    cur: &Iterate,
    sopts: &ScaOptions,
    caps: &mut CapFlags,
) -> Result<(CVector, CVector, [f64; 4], AllocationState)> {
    let mut q_t = cur.q_t.clone();
    let mut q_r = cur.q_r.clone();
    let mut tau = cur.tau;
    let mut state = cur.state.clone();
    let mut f = cur.wsr;
    let mut converged = false;
    for _ in 0..sopts.max_iter {
        let model = RateModel::time_switching(tau);
        let out = run_sca_loop(comp, ch, &state, cfg, &model, SurfaceKind::Ts, &q_t, &q_r, sopts)?;
        caps.kernel |= out.kernel_cap;
        caps.sca |= out.status == SolveStatus::CapReached;
        let p = polish_matched(
            comp,
            ch,
            &out.state,
            cfg,
            &model,
            |t, r| project_coefficients(SurfaceKind::Ts, t, r),
            &out.q_t,
            &out.q_r,
            &sopts.pga,
        )?;
        caps.polish |= p.status == SolveStatus::CapReached;
        let (out_t, out_r) = (p.q_t, p.q_r);
        let eff = effective_from_q(comp, ch, &out_t, &out_r)?;
        state = p.state;
        refresh_receivers(&eff, &mut state, cfg, &model)?;
        let search = search_time_fractions(&eff, &state, cfg, cfg.ts_grid_step)?;
        let mut next = state.clone();
        next.w = search.w.clone();
        next.rho = search.rho;
        next.tau = Some(search.tau);
        let model = RateModel::time_switching(search.tau);
        refresh_receivers(&eff, &mut next, cfg, &model)?;
        let f_new = rates::evaluate(&eff, &next, cfg, &model).wsr;
        if f_new < f {
            converged = true;
            break;
        }
        let inc = (f_new - f) / f.abs().max(1e-12);
        q_t = out_t;
        q_r = out_r;
        tau = search.tau;
        state = next;
        f = f_new;
        if inc < sopts.eps2 {
            converged = true;
            break;
        }
    }
    caps.sca |= !converged;
    Ok((q_t, q_r, tau, state))
}
