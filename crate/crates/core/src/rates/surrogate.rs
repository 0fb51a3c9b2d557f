//! Concave minorants of the per-stream rates in the surface coefficients.
//!
//! With the allocation fixed, each stream's rate is
//! `prelog·log2(1 + |χ(q)|²/ζ(q))` where `χ` is affine in `q` and
//! `ζ(q) = Σ_j |a_j(q)|² + n` sums squared affine interference amplitudes and
//! a positive noise power. Around an expansion point `(χ̃, ζ̃)`,
//!
//! ```text
//! ln(1 + |χ|²/ζ) ≥ ln(1 + x̃) − x̃ + 2Re{χ̃* χ}/ζ̃ − K (|χ|² + ζ),
//! x̃ = |χ̃|²/ζ̃,   K = |χ̃|² / (ζ̃ (ζ̃ + |χ̃|²)),
//! ```
//!
//! with equality at the expansion point. Gradients use the `2∂/∂q̄`
//! convention, which equals the real gradient packed as `re + j·im`.

use std::f64::consts::LN_2;

use crate::config::ValidatedConfig;
use crate::linalg::{cvec_zeros, norm_sqr, CVector, C64};
use crate::model::{AllocationState, ChannelSet};
use crate::rates::{dl_interferer, ul_noise_floor, Composite, RateModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    T,
    R,
}

/// `coefᵀ q_side + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub side: Side,
    pub coef: CVector,
    pub offset: C64,
}

impl Affine {
    pub fn eval(&self, q_t: &CVector, q_r: &CVector) -> C64 {
        let q = match self.side {
            Side::T => q_t,
            Side::R => q_r,
        };
        self.coef.dot(q) + self.offset
    }

    fn scaled(mut self, s: f64) -> Affine {
        self.coef *= C64::from(s);
        self.offset *= s;
        self
    }

    /// Adds `c · conj(coef)` to the gradient of the matching side.
    fn add_grad(&self, c: C64, g_t: &mut CVector, g_r: &mut CVector) {
        let g = match self.side {
            Side::T => g_t,
            Side::R => g_r,
        };
        for (gi, ai) in g.iter_mut().zip(self.coef.iter()) {
            *gi += c * ai.conj();
        }
    }
}

/// A stream's rate as a function of the coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamForm {
    pub signal: Affine,
    pub interference: Vec<Affine>,
    pub noise: f64,
    pub prelog: f64,
}

impl StreamForm {
    pub fn zeta(&self, q_t: &CVector, q_r: &CVector) -> f64 {
        self.noise + self.interference.iter().map(|a| a.eval(q_t, q_r).norm_sqr()).sum::<f64>()
    }

    /// True rate in bpcu.
    pub fn rate(&self, q_t: &CVector, q_r: &CVector) -> f64 {
        if self.noise <= 0.0 || self.prelog == 0.0 {
            return 0.0;
        }
        let chi = self.signal.eval(q_t, q_r);
        self.prelog * (1.0 + chi.norm_sqr() / self.zeta(q_t, q_r)).log2()
    }

    fn is_flat(&self) -> bool {
        self.noise <= 0.0 || self.prelog == 0.0
    }
}

/// Builds the four stream forms for the allocation in `state`.
pub fn stream_forms(
    comp: &Composite,
    ch: &ChannelSet,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    model: &RateModel,
) -> [StreamForm; 4] {
    let m = ch.m();
    let w = &state.w;
    let rho = state.rho;
    let flat = || StreamForm {
        signal: Affine { side: Side::R, coef: cvec_zeros(m), offset: C64::new(0.0, 0.0) },
        interference: Vec::new(),
        noise: 0.0,
        prelog: 0.0,
    };
    let dl_beam = |k: usize, j: usize| -> Affine {
        if k == 0 {
            Affine { side: Side::R, coef: &comp.h1 * &w[j], offset: ch.f1.dot(&w[j]) }
        } else {
            Affine { side: Side::T, coef: &comp.h3 * &w[j], offset: ch.f2.dot(&w[j]) }
        }
    };
    let ul_to_dl = |k: usize| -> Affine {
        let coef = if k == 0 { comp.h2.clone() } else { comp.h4.clone() };
        Affine { side: Side::T, coef, offset: ch.f3 }.scaled(rho[dl_interferer(k)].sqrt())
    };
    let unit_comb: [CVector; 2] = std::array::from_fn(|l| {
        let n = norm_sqr(&state.u_comb[l]).sqrt();
        if n > 0.0 {
            &state.u_comb[l] / C64::from(n)
        } else {
            state.u_comb[l].clone()
        }
    });
    let ul_seen = |l: usize, by: usize| -> Affine {
        let u = &unit_comb[by];
        let uc = u.map(|z| z.conj());
        let a = if l == 0 {
            Affine { side: Side::R, coef: comp.h5.tr_mul(&uc), offset: u.dotc(&ch.f1.map(|z| z.conj())) }
        } else {
            Affine { side: Side::T, coef: comp.h6.tr_mul(&uc), offset: u.dotc(&ch.f2.map(|z| z.conj())) }
        };
        a.scaled(rho[l].sqrt())
    };

    let floor = ul_noise_floor(state, cfg, model);
    std::array::from_fn(|i| {
        if !model.active[i] {
            return flat();
        }
        if i < 2 {
            let k = i;
            let mut interference = Vec::new();
            if model.dl_cross {
                interference.push(dl_beam(k, 1 - k));
            }
            if model.ul_to_dl {
                interference.push(ul_to_dl(k));
            }
            StreamForm { signal: dl_beam(k, k), interference, noise: cfg.sigma2_dl, prelog: model.prelog[k] }
        } else {
            let l = i - 2;
            let mut interference = Vec::new();
            if model.ul_cross {
                interference.push(ul_seen(1 - l, l));
            }
            StreamForm {
                signal: ul_seen(l, l),
                interference,
                noise: norm_sqr(&unit_comb[l]) * floor,
                prelog: model.prelog[i],
            }
        }
    })
}

/// One stream's expansion data.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamExpansion {
    pub form: StreamForm,
    /// Signal amplitude at the expansion point.
    pub chi: C64,
    /// Interference-plus-noise power at the expansion point.
    pub zeta: f64,
}

/// First-order expansion of all four streams around `(q_t, q_r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateExpansion {
    pub streams: [StreamExpansion; 4],
    pub q_t: CVector,
    pub q_r: CVector,
}

impl SurrogateExpansion {
    pub fn new(forms: [StreamForm; 4], q_t: &CVector, q_r: &CVector) -> SurrogateExpansion {
        let streams = forms.map(|form| {
            let chi = form.signal.eval(q_t, q_r);
            let zeta = form.zeta(q_t, q_r);
            StreamExpansion { form, chi, zeta }
        });
        SurrogateExpansion { streams, q_t: q_t.clone(), q_r: q_r.clone() }
    }

    /// Expansion for the allocation in `state` at the point `(q_t, q_r)`.
    pub fn build(
        comp: &Composite,
        ch: &ChannelSet,
        state: &AllocationState,
        cfg: &ValidatedConfig,
        model: &RateModel,
        q_t: &CVector,
        q_r: &CVector,
    ) -> SurrogateExpansion {
        SurrogateExpansion::new(stream_forms(comp, ch, state, cfg, model), q_t, q_r)
    }

    pub fn m(&self) -> usize {
        self.q_t.len()
    }

    /// Value and `2∂/∂q̄` gradients of `Σ_i weights[i]·bound_i`.
    pub fn weighted_value_grad(&self, weights: &[f64; 4], q_t: &CVector, q_r: &CVector) -> (f64, CVector, CVector) {
        let m = self.m();
        let mut g_t = cvec_zeros(m);
        let mut g_r = cvec_zeros(m);
        let mut total = 0.0;
        for (s, &wt) in self.streams.iter().zip(weights.iter()) {
            if wt == 0.0 || s.form.is_flat() {
                continue;
            }
            let (x0, k) = coefficients(s);
            let scale = wt * s.form.prelog / LN_2;
            let chi = s.form.signal.eval(q_t, q_r);
            let mut zeta_var = 0.0;
            let mut amps = Vec::with_capacity(s.form.interference.len());
            for a in &s.form.interference {
                let z = a.eval(q_t, q_r);
                zeta_var += z.norm_sqr();
                amps.push(z);
            }
            let zeta = zeta_var + s.form.noise;
            let inner = (1.0 + x0).ln() - x0 + 2.0 * (s.chi.conj() * chi).re / s.zeta - k * (chi.norm_sqr() + zeta);
            total += scale * inner;
            let lin = s.chi * (2.0 / s.zeta) - chi * (2.0 * k);
            s.form.signal.add_grad(lin * scale, &mut g_t, &mut g_r);
            for (a, z) in s.form.interference.iter().zip(amps) {
                a.add_grad(z * (-2.0 * k * scale), &mut g_t, &mut g_r);
            }
        }
        (total, g_t, g_r)
    }

    /// `Σ_i weights[i]·R_i(q)` with the true rates.
    pub fn weighted_true(&self, weights: &[f64; 4], q_t: &CVector, q_r: &CVector) -> f64 {
        self.streams
            .iter()
            .zip(weights.iter())
            .filter(|(_, &w)| w != 0.0)
            .map(|(s, &w)| w * s.form.rate(q_t, q_r))
            .sum()
    }
}

impl SurrogateExpansion {
    /// Value and `2∂/∂q̄` gradients of `Σ_i weights[i]·R_i(q)` with the true rates.
    pub fn weighted_true_grad(&self, weights: &[f64; 4], q_t: &CVector, q_r: &CVector) -> (f64, CVector, CVector) {
        let m = self.m();
        let mut g_t = cvec_zeros(m);
        let mut g_r = cvec_zeros(m);
        let mut total = 0.0;
        for (s, &wt) in self.streams.iter().zip(weights.iter()) {
            if wt == 0.0 || s.form.is_flat() {
                continue;
            }
            let scale = wt * s.form.prelog / LN_2;
            let chi = s.form.signal.eval(q_t, q_r);
            let amps: Vec<C64> = s.form.interference.iter().map(|a| a.eval(q_t, q_r)).collect();
            let zeta = s.form.noise + amps.iter().map(|z| z.norm_sqr()).sum::<f64>();
            let tot = zeta + chi.norm_sqr();
            total += scale * (tot / zeta).ln();
            s.form.signal.add_grad(chi * (2.0 * scale / tot), &mut g_t, &mut g_r);
            for (a, z) in s.form.interference.iter().zip(amps) {
                a.add_grad(z * (2.0 * scale * (1.0 / tot - 1.0 / zeta)), &mut g_t, &mut g_r);
            }
        }
        (total, g_t, g_r)
    }
}

fn coefficients(s: &StreamExpansion) -> (f64, f64) {
    let c2 = s.chi.norm_sqr();
    (c2 / s.zeta, c2 / (s.zeta * (s.zeta + c2)))
}

/// The lower bound on stream `stream` (0..4) in bpcu, prelog included.
pub fn surrogate_lower_bound(exp: &SurrogateExpansion, q_t: &CVector, q_r: &CVector, stream: usize) -> f64 {
    let mut w = [0.0; 4];
    w[stream] = 1.0;
    exp.weighted_value_grad(&w, q_t, q_r).0
}

/// True rate of stream `stream` under the expansion's allocation.
pub fn stream_rate(exp: &SurrogateExpansion, q_t: &CVector, q_r: &CVector, stream: usize) -> f64 {
    exp.streams[stream].form.rate(q_t, q_r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cvec_from_fn, ONE, ZERO};

    fn toy(chi_off: C64, sig: f64, noise: f64) -> SurrogateExpansion {
        let m = 3;
        let form = StreamForm {
            signal: Affine { side: Side::R, coef: CVector::from_element(m, C64::new(sig, 0.3)), offset: chi_off },
            interference: vec![Affine {
                side: Side::T,
                coef: CVector::from_element(m, C64::new(0.2, -0.1)),
                offset: ONE,
            }],
            noise,
            prelog: 1.0,
        };
        let flat = StreamForm { signal: form.signal.clone(), interference: vec![], noise: 0.0, prelog: 0.0 };
        let q = cvec_from_fn(m, |i| C64::new(0.1 * i as f64, -0.2));
        SurrogateExpansion::new([form, flat.clone(), flat.clone(), flat], &q, &q)
    }

    #[test]
    fn tight_at_expansion() {
        let e = toy(C64::new(0.5, 0.5), 1.0, 0.7);
        let lb = surrogate_lower_bound(&e, &e.q_t, &e.q_r, 0);
        let r = stream_rate(&e, &e.q_t, &e.q_r, 0);
        assert!((lb - r).abs() < 1e-12, "{lb} vs {r}");
    }

    #[test]
    fn zero_signal_bound_is_nonpositive() {
        let m = 3;
        let form = StreamForm {
            signal: Affine { side: Side::R, coef: CVector::from_element(m, ONE), offset: ZERO },
            interference: vec![],
            noise: 1.0,
            prelog: 1.0,
        };
        let flat = StreamForm { noise: 0.0, prelog: 0.0, ..form.clone() };
        let z = cvec_zeros(m);
        let e = SurrogateExpansion::new([form, flat.clone(), flat.clone(), flat], &z, &z);
        let q = CVector::from_element(m, C64::new(0.3, 0.4));
        assert!(surrogate_lower_bound(&e, &q, &q, 0) <= 0.0);
        assert_eq!(surrogate_lower_bound(&e, &z, &z, 0), 0.0);
    }

    #[test]
    fn below_true_rate_elsewhere() {
        let e = toy(C64::new(0.5, 0.5), 1.0, 0.7);
        for i in 0..200 {
            let q_t = cvec_from_fn(3, |j| C64::from_polar(0.9, 0.37 * (i * 3 + j) as f64));
            let q_r = cvec_from_fn(3, |j| C64::from_polar(0.4, 1.1 * (i + j) as f64));
            let lb = surrogate_lower_bound(&e, &q_t, &q_r, 0);
            assert!(lb <= stream_rate(&e, &q_t, &q_r, 0) + 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        check_gradient(|e, w, t, r| e.weighted_value_grad(w, t, r));
    }

    #[test]
    fn true_rate_gradient_matches_finite_differences() {
        check_gradient(|e, w, t, r| e.weighted_true_grad(w, t, r));
        let e = toy(C64::new(0.1, 0.3), 0.6, 0.2);
        let q = cvec_from_fn(3, |j| C64::new(0.3, -0.2 * j as f64));
        let w = [1.0, 0.0, 0.0, 0.0];
        assert!((e.weighted_true_grad(&w, &q, &q).0 - e.weighted_true(&w, &q, &q)).abs() < 1e-12);
    }

    fn check_gradient(f: impl Fn(&SurrogateExpansion, &[f64; 4], &CVector, &CVector) -> (f64, CVector, CVector)) {
        let e = toy(C64::new(0.5, -0.2), 0.8, 0.3);
        let w = [1.0, 0.0, 0.0, 0.0];
        let q_t = cvec_from_fn(3, |j| C64::new(0.2, 0.1 * j as f64));
        let q_r = cvec_from_fn(3, |j| C64::new(-0.3 * j as f64, 0.25));
        let (_, g_t, g_r) = f(&e, &w, &q_t, &q_r);
        let h = 1e-6;
        for side in 0..2 {
            for j in 0..3 {
                for part in 0..2 {
                    let bump = if part == 0 { C64::new(h, 0.0) } else { C64::new(0.0, h) };
                    let (mut tp, mut rp, mut tm, mut rm) = (q_t.clone(), q_r.clone(), q_t.clone(), q_r.clone());
                    if side == 0 {
                        tp[j] += bump;
                        tm[j] -= bump;
                    } else {
                        rp[j] += bump;
                        rm[j] -= bump;
                    }
                    let fd = (f(&e, &w, &tp, &rp).0 - f(&e, &w, &tm, &rm).0) / (2.0 * h);
                    let g = if side == 0 { g_t[j] } else { g_r[j] };
                    let an = if part == 0 { g.re } else { g.im };
                    assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "side {side} j {j} part {part}: {fd} vs {an}");
                }
            }
        }
    }
}
