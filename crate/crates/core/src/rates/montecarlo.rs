//! Sample-level simulation of the transmit/receive signal model.
//!
//! Each sample draws unit-power data symbols, receiver noise and a fresh
//! self-interference matrix with i.i.d. CN(0, σ̂²) entries, forms the three
//! received signals, and splits each into its desired part and the rest. The
//! empirical ratio of those powers estimates the SINR; the empirical squared
//! error of the detector/combiner output estimates the MSE.

use rayon::prelude::*;

use crate::config::ValidatedConfig;
use crate::error::Result;
use crate::linalg::{CMatrix, CVector, C64};
use crate::model::{AllocationState, ChannelSet, StarCoefficients};
use crate::rates::effective_channels;
use crate::rng::StreamRng;

const SHARDS: usize = 16;

/// Empirical estimates per stream (DL₁, DL₂, UL₁, UL₂).
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloEstimate {
    pub n_samples: usize,
    /// Mean power of the desired component.
    pub signal_power: [f64; 4],
    /// Mean power of the interference components, noise excluded.
    pub interference_power: [f64; 4],
    pub sinr: [f64; 4],
    pub sinr_se: [f64; 4],
    pub mse: [f64; 4],
    pub mse_se: [f64; 4],
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    a: f64,
    b: f64,
    aa: f64,
    bb: f64,
    ab: f64,
    c: f64,
    e: f64,
    ee: f64,
}

impl Moments {
    fn push(&mut self, sig: f64, rest: f64, interf: f64, err: f64) {
        self.a += sig;
        self.b += rest;
        self.aa += sig * sig;
        self.bb += rest * rest;
        self.ab += sig * rest;
        self.c += interf;
        self.e += err;
        self.ee += err * err;
    }

    fn merge(&mut self, o: &Moments) {
        self.a += o.a;
        self.b += o.b;
        self.aa += o.aa;
        self.bb += o.bb;
        self.ab += o.ab;
        self.c += o.c;
        self.e += o.e;
        self.ee += o.ee;
    }
}

struct Setup {
    h: [CVector; 2],
    g: [C64; 2],
    s: [CVector; 2],
    w: [CVector; 2],
    rho_sqrt: [f64; 2],
    u_det: [C64; 2],
    u_comb: [CVector; 2],
    sd_dl: f64,
    sd_ul: f64,
    sd_si: f64,
}

fn run_shard(setup: &Setup, n: usize, rng: &mut StreamRng) -> [Moments; 4] {
    let n_t = setup.w[0].len();
    let mut acc = [Moments::default(); 4];
    let mut h_si = CMatrix::zeros(n_t, n_t);
    for _ in 0..n {
        let s = [rng.complex_normal(), rng.complex_normal()];
        let q = [rng.complex_normal(), rng.complex_normal()];
        let n_dl = [rng.complex_normal() * setup.sd_dl, rng.complex_normal() * setup.sd_dl];
        let n_bs = CVector::from_fn(n_t, |_, _| rng.complex_normal() * setup.sd_ul);
        for z in h_si.iter_mut() {
            *z = rng.complex_normal() * setup.sd_si;
        }
        let x = &setup.w[0] * s[0] + &setup.w[1] * s[1];

        for k in 0..2 {
            let sig = setup.h[k].dot(&setup.w[k]) * s[k];
            let cross = setup.h[k].dot(&setup.w[1 - k]) * s[1 - k];
            let ul = setup.g[k] * setup.rho_sqrt[1 - k] * q[1 - k];
            let y = sig + cross + ul + n_dl[k];
            let err = (setup.u_det[k] * y - s[k]).norm_sqr();
            acc[k].push(sig.norm_sqr(), (y - sig).norm_sqr(), (cross + ul).norm_sqr(), err);
        }

        let r0 = &setup.s[0] * (q[0] * setup.rho_sqrt[0]);
        let r1 = &setup.s[1] * (q[1] * setup.rho_sqrt[1]);
        let si = &h_si * &x;
        let y = &r0 + &r1 + &si + &n_bs;
        for l in 0..2 {
            let u = &setup.u_comb[l];
            let z = u.dotc(&y);
            let sig = if l == 0 { u.dotc(&r0) } else { u.dotc(&r1) };
            let other = if l == 0 { u.dotc(&r1) } else { u.dotc(&r0) };
            let interf = other + u.dotc(&si);
            let err = (z - q[l]).norm_sqr();
            acc[2 + l].push(sig.norm_sqr(), (z - sig).norm_sqr(), interf.norm_sqr(), err);
        }
    }
    acc
}

/// Simulates `n_samples` symbol periods with the configured self-interference variance.
pub fn simulate_signal_model(
    ch: &ChannelSet,
    star: &StarCoefficients,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    n_samples: usize,
    rng: &mut StreamRng,
) -> Result<MonteCarloEstimate> {
    simulate_signal_model_with_rsi(ch, star, state, cfg, cfg.sigma2_rsi, n_samples, rng)
}

/// As [`simulate_signal_model`] with an explicit self-interference variance
/// (which may be zero).
pub fn simulate_signal_model_with_rsi(
    ch: &ChannelSet,
    star: &StarCoefficients,
    state: &AllocationState,
    cfg: &ValidatedConfig,
    sigma2_rsi: f64,
    n_samples: usize,
    rng: &mut StreamRng,
) -> Result<MonteCarloEstimate> {
    let n_samples = n_samples.max(1);
    let eff = effective_channels(ch, star)?;
    let setup = Setup {
        h: [eff.h_r1.clone(), eff.h_r2.clone()],
        g: [eff.g_t1, eff.g_t2],
        s: [eff.h_r3.clone(), eff.g_t3.clone()],
        w: state.w.clone(),
        rho_sqrt: state.rho.map(f64::sqrt),
        u_det: state.u_det,
        u_comb: state.u_comb.clone(),
        sd_dl: cfg.sigma2_dl.sqrt(),
        sd_ul: cfg.sigma2_ul.sqrt(),
        sd_si: sigma2_rsi.max(0.0).sqrt(),
    };
    let seeds: Vec<u64> = (0..SHARDS).map(|_| rng.next_u64()).collect();
    let per = n_samples / SHARDS;
    let extra = n_samples % SHARDS;
    let shards: Vec<[Moments; 4]> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let n = per + usize::from(i < extra);
            run_shard(&setup, n, &mut StreamRng::new(seed))
        })
        .collect();
    let mut tot = [Moments::default(); 4];
    for shard in &shards {
        for (t, s) in tot.iter_mut().zip(shard.iter()) {
            t.merge(s);
        }
    }

    let nf = n_samples as f64;
    let mut out = MonteCarloEstimate {
        n_samples,
        signal_power: [0.0; 4],
        interference_power: [0.0; 4],
        sinr: [0.0; 4],
        sinr_se: [0.0; 4],
        mse: [0.0; 4],
        mse_se: [0.0; 4],
    };
    for (i, m) in tot.iter().enumerate() {
        let a = m.a / nf;
        let b = m.b / nf;
        let var_a = (m.aa / nf - a * a).max(0.0);
        let var_b = (m.bb / nf - b * b).max(0.0);
        let cov = m.ab / nf - a * b;
        out.signal_power[i] = a;
        out.interference_power[i] = m.c / nf;
        if b > 0.0 {
            let r = a / b;
            out.sinr[i] = r;
            let var_r = (var_a - 2.0 * r * cov + r * r * var_b) / (b * b);
            out.sinr_se[i] = (var_r.max(0.0) / nf).sqrt();
        }
        let e = m.e / nf;
        out.mse[i] = e;
        out.mse_se[i] = ((m.ee / nf - e * e).max(0.0) / nf).sqrt();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cvec_zeros;

    #[test]
    fn zero_channels_give_zero_component_powers() {
        let cfg = ValidatedConfig::default();
        let ch = ChannelSet::zeros(cfg.n_t, cfg.m);
        let star = StarCoefficients::zeros(cfg.m);
        let mut st = AllocationState::silent(cfg.n_t);
        st.w[0] = CVector::from_element(cfg.n_t, C64::new(0.5, 0.0));
        st.rho = [1e-3, 1e-3];
        st.u_comb = [CVector::from_element(cfg.n_t, C64::new(1.0, 0.0)), cvec_zeros(cfg.n_t)];
        let est = simulate_signal_model_with_rsi(&ch, &star, &st, &cfg, 0.0, 1000, &mut StreamRng::new(1)).unwrap();
        assert_eq!(est.signal_power, [0.0; 4]);
        assert_eq!(est.interference_power, [0.0; 4]);
    }

    #[test]
    fn seeded_runs_repeat() {
        let cfg = ValidatedConfig::default();
        let ch = crate::channel::generate_channel_set(&cfg.geometry, &cfg, &mut StreamRng::new(2)).unwrap();
        let star = StarCoefficients::zeros(cfg.m);
        let mut st = AllocationState::silent(cfg.n_t);
        st.w[1] = CVector::from_element(cfg.n_t, C64::new(0.3, 0.1));
        let a = simulate_signal_model(&ch, &star, &st, &cfg, 5000, &mut StreamRng::new(8)).unwrap();
        let b = simulate_signal_model(&ch, &star, &st, &cfg, 5000, &mut StreamRng::new(8)).unwrap();
        assert_eq!(a, b);
    }
}
