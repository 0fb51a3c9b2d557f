use starfd_core::channel::generate_channel_set;
use starfd_core::protocols::{optimize_scheme, Scheme};
use starfd_core::rates::effective_channels;
use starfd_core::rng::StreamRng;
use starfd_core::sca::search_time_fractions;
use starfd_core::{AllocationState, ChannelSet, StarCoefficients, ValidatedConfig};

fn cfg(m: usize) -> ValidatedConfig {
    ValidatedConfig::default().with(|c| c.m = m).unwrap()
}

fn draw(cfg: &ValidatedConfig, seed: u64) -> ChannelSet {
    generate_channel_set(&cfg.geometry, cfg, &mut StreamRng::new(seed)).unwrap()
}

#[test]
fn silent_surface_matches_the_no_ris_baseline() {
    let c = cfg(4);
    let ch = draw(&c, 5).without_ris();
    let es = optimize_scheme(Scheme::Es, &ch, &c, None, &mut StreamRng::new(1)).unwrap();
    let none = optimize_scheme(Scheme::NoRis, &ch, &c, None, &mut StreamRng::new(1)).unwrap();
    assert!((es.wsr() - none.wsr()).abs() <= 1e-9 * none.wsr().max(1.0), "{} vs {}", es.wsr(), none.wsr());
}

#[test]
fn no_links_give_zero_rate() {
    let c = cfg(4);
    let ch = ChannelSet::zeros(c.n_t, c.m);
    let o = optimize_scheme(Scheme::NoRis, &ch, &c, None, &mut StreamRng::new(3)).unwrap();
    assert_eq!(o.wsr(), 0.0);
}

#[test]
fn mode_switching_output_is_binary() {
    let c = cfg(6);
    for seed in 0..3 {
        let ch = draw(&c, 100 + seed);
        let o = optimize_scheme(Scheme::Ms, &ch, &c, None, &mut StreamRng::new(seed)).unwrap();
        for (t, r) in o.star.amplitudes_sq() {
            assert!((t + r - 1.0).abs() <= 1e-9);
            assert!(t.min(1.0 - t) <= 1e-3, "amplitude {t}");
        }
    }
}

#[test]
fn equal_split_keeps_fixed_amplitudes() {
    let c = cfg(6);
    let ch = draw(&c, 7);
    let o = optimize_scheme(Scheme::EqualEs, &ch, &c, None, &mut StreamRng::new(7)).unwrap();
    let half = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..c.m {
        assert!((o.star.q_t()[i].norm() - half).abs() <= 1e-9);
        assert!((o.star.q_r()[i].norm() - half).abs() <= 1e-9);
    }
}

#[test]
fn time_fractions_sum_to_one_and_budgets_hold() {
    let c = cfg(4);
    let ch = draw(&c, 11);
    let o = optimize_scheme(Scheme::Ts, &ch, &c, None, &mut StreamRng::new(11)).unwrap();
    let tau = o.tau.expect("time switching reports its fractions");
    assert!((tau.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    assert!(tau.iter().all(|&t| t >= 0.0));
    let w = o.state.w();
    let energy = tau[0] * w[0].norm_squared() + tau[1] * w[1].norm_squared();
    assert!(energy <= c.p_max_bs * (1.0 + 1e-9), "{energy} > {}", c.p_max_bs);
    let rho = o.state.rho();
    assert!((0..2).all(|l| tau[2 + l] * rho[l] <= c.p_max_ul * (1.0 + 1e-9)));
    for i in 0..c.m {
        assert!(o.star.q_t()[i].norm() <= 1.0 + 1e-9);
        assert!(o.star.q_r()[i].norm() <= 1.0 + 1e-9);
    }
}

#[test]
fn half_duplex_baselines_silence_the_absent_direction() {
    let c = cfg(4);
    let ch = draw(&c, 21);
    let dl = optimize_scheme(Scheme::DlHd, &ch, &c, None, &mut StreamRng::new(2)).unwrap();
    assert_eq!(dl.report.ul_sum, 0.0);
    let ul = optimize_scheme(Scheme::UlHd, &ch, &c, None, &mut StreamRng::new(2)).unwrap();
    assert_eq!(ul.report.dl_sum, 0.0);
}

#[test]
fn odd_conventional_surface_is_an_error() {
    let c = cfg(5);
    let ch = draw(&c, 1);
    assert!(optimize_scheme(Scheme::ConventionalRis, &ch, &c, None, &mut StreamRng::new(1)).is_err());
}

#[test]
fn runs_are_reproducible() {
    let c = cfg(4);
    let ch = draw(&c, 40);
    for scheme in [Scheme::Es, Scheme::Ms, Scheme::Ts] {
        let a = optimize_scheme(scheme, &ch, &c, None, &mut StreamRng::new(9)).unwrap();
        let b = optimize_scheme(scheme, &ch, &c, None, &mut StreamRng::new(9)).unwrap();
        assert_eq!(a.wsr().to_bits(), b.wsr().to_bits());
        assert_eq!(a.trace_values(), b.trace_values());
    }
}

/// Identical direct links, no surface, equal noise and a BS budget equal to
/// the two uplink budgets together: every slot is worth the same.
fn symmetric(c: &ValidatedConfig, seed: u64) -> ChannelSet {
    let ch = draw(c, seed);
    ChannelSet::new(
        ch.h_d().clone(),
        ch.v_d().clone(),
        ch.v_d().clone(),
        ch.v_u().clone(),
        ch.v_u().clone(),
        ch.h_u().clone(),
        ch.f1().clone(),
        ch.f1().clone(),
        ch.f3(),
    )
    .unwrap()
    .without_ris()
}

#[test]
fn symmetric_slots_split_time_uniformly() {
    let c = cfg(4)
        .with(|s| {
            s.p_max_bs = 2.0 * s.p_max_ul;
            s.sigma2_dl = s.sigma2_ul;
            s.ts_grid_step = 0.05;
        })
        .unwrap();
    let step = c.ts_grid_step;
    for seed in 0..4 {
        let ch = symmetric(&c, 500 + seed);
        let eff = effective_channels(&ch, &StarCoefficients::zeros(c.m)).unwrap();
        let found = search_time_fractions(&eff, &AllocationState::silent(c.n_t), &c, step).unwrap();
        let tau = found.tau;
        assert!((tau[2] - 0.25).abs() <= step + 1e-12, "{tau:?}");
        assert!((tau[3] - 0.25).abs() <= step + 1e-12, "{tau:?}");
        assert!((tau[0] + tau[1] - 0.5).abs() <= step + 1e-12, "{tau:?}");

        let o = optimize_scheme(Scheme::Ts, &ch, &c, None, &mut StreamRng::new(seed)).unwrap();
        let tau = o.tau.unwrap();
        assert!((tau[2] - tau[3]).abs() <= step + 1e-12, "{tau:?}");
        assert!((tau[2] + tau[3] - 0.5).abs() <= 2.0 * step + 1e-12, "{tau:?}");
    }
}
