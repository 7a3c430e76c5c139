//! Module invariants as property tests over random states and setups.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use eos_lab::eos_core::{
    count_distribution, derive_setup, moments, symmetric_xy, ChannelSpec, EosSetup, OutcomeSet, OutcomeWindow,
};
use eos_lab::phase_space::{qpd_eval, qpd_grid, OrderingParams, Quadrature, StateModel, Window};
use eos_lab::post_measurement::{post_gaussian, PostMap, PostState};
use eos_lab::quad::{gauss_hermite, simpson_weights};
use eos_lab::reconstruction::{bayes_update, trial_rng, ParameterFamily, PosteriorGrid, StageSampler};
use eos_lab::skellam::{skellam_pmf_gaussian, skellam_pmf_range, SkellamParams};
use eos_lab::C64;
use proptest::prelude::*;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn state_strategy() -> impl Strategy<Value = StateModel> {
    prop_oneof![
        Just(StateModel::Vacuum),
        (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(x, y)| StateModel::Coherent(c(x, y))),
        (0u32..5).prop_map(StateModel::Fock),
        (0.5..2.2f64, -PI..PI, any::<bool>()).prop_map(|(r, t, even)| StateModel::Cat { alpha: C64::from_polar(r, t), even }),
        (0.05..0.6f64, -PI..PI).prop_map(|(r, phase)| StateModel::Squeezed { r, phase }),
    ]
}

fn pure_gaussianish() -> impl Strategy<Value = StateModel> {
    prop_oneof![
        (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(x, y)| StateModel::Coherent(c(x, y))),
        (0.05..0.6f64, -PI..PI).prop_map(|(r, phase)| StateModel::Squeezed { r, phase }),
        (0u32..3).prop_map(StateModel::Fock),
    ]
}

fn setup_strategy() -> impl Strategy<Value = EosSetup> {
    setup_strategy_up_to(3, 20.0)
}

/// 2..=`max_channels` channels with random pumps, probes in [5, `max_probe`) and both quadratures present.
fn setup_strategy_up_to(max_channels: usize, max_probe: f64) -> impl Strategy<Value = EosSetup> {
    (
        0.1..2.5f64,
        -PI..PI,
        prop::collection::vec((0.2..1.0f64, -PI..PI, 5.0..max_probe), 2..=max_channels),
    )
        .prop_map(|(z, zp, chans)| {
            let specs: Vec<ChannelSpec> = chans
                .iter()
                .enumerate()
                .map(|(i, &(a, p, b))| ChannelSpec {
                    pump: C64::from_polar(a, p),
                    probe: b,
                    quadrature: if i % 2 == 0 { Quadrature::X } else { Quadrature::Y },
                })
                .collect();
            derive_setup(C64::from_polar(z, zp), &specs).expect("valid setup")
        })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn qpd_grids_are_normalized(state in state_strategy(), sx in -1.5..0.0f64, sy in -1.5..0.0f64) {
        // smoothing widens the distribution beyond the Wigner-sized default window
        let g = qpd_grid(&state, &Window::square(state.extent() + 3.0, 257), OrderingParams::new(sx, sy)).unwrap();
        prop_assert!((g.integral() - 1.0).abs() <= 1e-4, "integral {}", g.integral());
    }

    #[test]
    fn smoothing_is_a_gaussian_convolution_of_wigner(
        state in state_strategy(),
        sx in -1.5..-0.05f64,
        sy in -1.5..-0.05f64,
        x in -2.0..2.0f64,
        y in -2.0..2.0f64,
    ) {
        // kernel variance −s/4 per axis; s_X smooths Re z
        let gh = gauss_hermite(64);
        let (hx, hy) = ((-sx / 2.0).sqrt(), (-sy / 2.0).sqrt());
        let mut conv = 0.0;
        for (tx, wx) in gh.nodes.iter().zip(&gh.weights) {
            for (ty, wy) in gh.nodes.iter().zip(&gh.weights) {
                conv += wx * wy * qpd_eval(&state, c(x - hx * tx, y - hy * ty), OrderingParams::wigner()).unwrap();
            }
        }
        conv /= PI;
        let direct = qpd_eval(&state, c(x, y), OrderingParams::new(sx, sy)).unwrap();
        prop_assert!((conv - direct).abs() <= 1e-6, "{conv} vs {direct}");
    }

    #[test]
    fn wigner_marginal_matches_quadrature_distribution(state in state_strategy(), q in -2.5..2.5f64) {
        let (n, half) = (801, 9.0);
        let h = 2.0 * half / (n - 1) as f64;
        let w = simpson_weights(n, h);
        let along = |f: &dyn Fn(f64) -> C64| -> f64 {
            (0..n).map(|k| w[k] * qpd_eval(&state, f(-half + k as f64 * h), OrderingParams::wigner()).unwrap()).sum()
        };
        let mx = along(&|t| c(q, t));
        let my = along(&|t| c(t, q));
        prop_assert!((mx - state.marginal(Quadrature::X, q)).abs() <= 1e-6);
        prop_assert!((my - state.marginal(Quadrature::Y, q)).abs() <= 1e-6);
    }

    #[test]
    fn husimi_is_nonnegative(state in state_strategy(), x in -5.0..5.0f64, y in -5.0..5.0f64) {
        prop_assert!(qpd_eval(&state, c(x, y), OrderingParams::husimi()).unwrap() >= -1e-12);
    }

    #[test]
    fn skellam_normalization_and_moments(m1 in 0.05..300.0f64, m2 in 0.05..300.0f64) {
        let p = SkellamParams::new(m1, m2);
        let s = m1 + m2;
        let n = (s + 12.0 * s.sqrt()).ceil() as i64;
        let pmf = skellam_pmf_range(-n, n, p).unwrap();
        let total: f64 = pmf.iter().sum();
        let mean: f64 = pmf.iter().enumerate().map(|(i, q)| (i as i64 - n) as f64 * q).sum();
        let var: f64 = pmf.iter().enumerate().map(|(i, q)| ((i as i64 - n) as f64 - mean).powi(2) * q).sum();
        prop_assert!((total - 1.0).abs() <= 1e-10, "total {total}");
        prop_assert!((mean - (m1 - m2)).abs() <= 1e-9, "mean {mean}");
        prop_assert!((var - s).abs() <= 1e-8, "var {var}");
    }

    #[test]
    fn setup_invariants(setup in setup_strategy()) {
        prop_assert!((setup.mu * setup.mu - setup.nu.norm_sqr() - 1.0).abs() <= 1e-12 * setup.mu * setup.mu);
        prop_assert!((setup.pumps.iter().map(|p| p.norm_sqr()).sum::<f64>() - 1.0).abs() <= 1e-12);
        let a = |q: Quadrature| -> f64 {
            2.0 * setup.nu.norm_sqr()
                * setup.channels.iter().zip(&setup.pumps).filter(|(ch, _)| ch.quadrature == q).map(|(_, p)| p.norm_sqr()).sum::<f64>()
        };
        prop_assert!((setup.a_x - a(Quadrature::X)).abs() <= 1e-12 * setup.a_x);
        prop_assert!((setup.a_y - a(Quadrature::Y)).abs() <= 1e-12 * setup.a_y);
        prop_assert!((setup.s_x - (-1.0 - 2.0 / setup.a_x)).abs() <= 1e-12 * setup.s_x.abs());
        prop_assert!(setup.s_x <= -1.0 && setup.s_y <= -1.0);
        for (i, ch) in setup.channels.iter().enumerate() {
            let want = match ch.quadrature { Quadrature::X => c(1.0, 0.0), Quadrature::Y => c(0.0, 1.0) };
            prop_assert!((setup.phase(i) - want).norm() <= 1e-10);
            prop_assert!(ch.phi >= PI / 2.0 && ch.phi <= 1.5 * PI);
        }
    }

    #[test]
    fn vacuum_signal_is_balanced(setup in setup_strategy_up_to(2, 12.0)) {
        let t = count_distribution(&setup, &StateModel::Vacuum, &OutcomeWindow::for_state(&setup, &StateModel::Vacuum)).unwrap();
        for (m, _) in t.channel_moments() {
            prop_assert!(m.abs() <= 1e-9, "mean {m}");
        }
    }

    #[test]
    fn count_tables_are_complete_and_moments_agree(state in pure_gaussianish(), z in 0.3..2.5f64) {
        let setup = symmetric_xy(z, 10.0);
        let t = count_distribution(&setup, &state, &OutcomeWindow::for_state(&setup, &state)).unwrap();
        prop_assert!((t.total() - 1.0).abs() <= 1e-3);
        let want = moments(&setup, &state).unwrap();
        for ((m, v), (wm, wv)) in t.channel_moments().into_iter().zip(want) {
            prop_assert!((m - wm).abs() <= 0.02 * wv.sqrt(), "mean {m} vs {wm}");
            prop_assert!((v - wv).abs() <= 0.02 * wv, "var {v} vs {wv}");
        }
        // Arthurs–Kelly: product of rescaled variances stays above 1/4
        let scale = 2.0 * setup.nu.norm_sqr() * 100.0;
        let m = t.channel_moments();
        prop_assert!(m[0].1 / scale * (m[1].1 / scale) >= 0.25 * 0.98);
    }

    #[test]
    fn probe_scaling_keeps_the_continuous_density(x in -2.0..2.0f64, y in -2.0..2.0f64, z in 0.5..2.0f64) {
        let state = StateModel::Coherent(c(x, y));
        let (a, b) = (symmetric_xy(z, 10.0), symmetric_xy(z, 20.0));
        prop_assert_eq!(a.ordering(), b.ordering());
        let ta = count_distribution(&a, &state, &OutcomeWindow::for_state(&a, &state)).unwrap().channel_moments();
        let tb = count_distribution(&b, &state, &OutcomeWindow::for_state(&b, &state)).unwrap().channel_moments();
        for (ma, mb) in ta.iter().zip(&tb) {
            prop_assert!((mb.0 - 2.0 * ma.0).abs() <= 0.02 * mb.1.sqrt());
            prop_assert!((mb.1 / (4.0 * ma.1) - 1.0).abs() <= 0.02);
        }
    }

    #[test]
    fn post_states_are_normalized_and_physical(state in pure_gaussianish(), z in 0.3..2.0f64, dx in -25i64..25, dy in -25i64..25) {
        let setup = symmetric_xy(z, 10.0);
        let o = OutcomeSet(vec![dx, dy]);
        let map = PostMap::wigner(&setup, &o).unwrap();
        let post = PostState::new(&map, &state).unwrap();
        prop_assume!(post.probability > 1e-8);
        let g = post.grid(&Window::square(4.0 + state.extent(), 201)).unwrap();
        prop_assert!((g.integral() - 1.0).abs() <= 1e-3, "integral {}", g.integral());
        prop_assert!(g.purity() <= 1.0 + 1e-3);
    }

    #[test]
    fn coherent_post_state_matches_gaussian_product(setup in setup_strategy(), ax in -2.0..2.0f64, ay in -2.0..2.0f64, k in 0usize..4) {
        let alpha = c(ax, ay);
        let state = StateModel::Coherent(alpha);
        // an outcome near the sampled mean
        let o = OutcomeSet(eos_lab::eos_core::channel_moments(&setup, &state).iter().map(|(m, v)| (m + (k as f64 - 1.5) * 0.5 * v.sqrt()).round() as i64).collect());
        let map = PostMap::wigner(&setup, &o).unwrap();
        let g = post_gaussian(&setup, &o, &state.gaussian_moments().unwrap());
        let post = PostState::new(&map, &state).unwrap();
        for j in 0..10 {
            let w = g.mean + C64::from_polar(0.3 * j as f64 / 3.0, j as f64);
            let a = post.eval(w).unwrap();
            let b = g.qpd(w, OrderingParams::wigner()).unwrap();
            prop_assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn posterior_stays_normalized(z in 0.3..2.0f64, outs in prop::collection::vec((-30i64..30, -30i64..30), 1..4)) {
        let setup = symmetric_xy(z, 10.0);
        let mut post = PosteriorGrid::uniform(Arc::new(ParameterFamily::coherent(4.0, 21)));
        for (x, y) in outs {
            post = bayes_update(&post, &setup, &OutcomeSet(vec![x, y])).unwrap();
            prop_assert!((post.total() - 1.0).abs() < 1e-10);
            prop_assert!(post.weights.iter().all(|&w| w >= 0.0));
        }
    }
}

#[test]
fn gaussian_skellam_error_shrinks_with_rate() {
    let mut last = f64::INFINITY;
    for m in [25.0, 100.0, 400.0] {
        let p = SkellamParams::new(m, m);
        let n = (2.0 * m + 12.0 * (2.0 * m).sqrt()).ceil() as i64;
        let exact = skellam_pmf_range(-n, n, p).unwrap();
        let sup = (-n..=n).map(|d| (skellam_pmf_gaussian(d, p).unwrap() - exact[(d + n) as usize]).abs()).fold(0.0, f64::max);
        assert!(sup < last, "m = {m}: {sup} !< {last}");
        last = sup;
    }
}

#[test]
fn zero_coupling_leaves_states_unchanged() {
    let setup = symmetric_xy(1e-9, 10.0);
    let win = Window::square(5.0, 41);
    for state in [StateModel::Coherent(c(1.0, -0.5)), StateModel::Fock(2), StateModel::Cat { alpha: c(1.5, 0.0), even: true }] {
        let map = PostMap::wigner(&setup, &OutcomeSet(vec![3, -2])).unwrap();
        let post = PostState::new(&map, &state).unwrap().grid(&win).unwrap();
        let pre = qpd_grid(&state, &win, OrderingParams::wigner()).unwrap();
        let sup = post.values.iter().zip(&pre.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(sup < 1e-6, "{state:?}: {sup}");
    }
}

/// Entropy after two records is below entropy after one in most trials
/// (one-sided sign test at 5%: at least 112 of 200).
#[test]
fn posterior_entropy_sign_test() {
    let setup = symmetric_xy(0.6, 10.0);
    let family = Arc::new(ParameterFamily::coherent(4.0, 31));
    let truth = StateModel::Coherent(c(0.8, -0.4));
    let sampler = StageSampler::new(&setup).unwrap();
    let table = sampler.table(&truth).unwrap();
    let prior = PosteriorGrid::uniform(family);
    let mut decreases = 0;
    for k in 0..200 {
        let mut rng = trial_rng(0x05EE_DE05, k);
        let p1 = bayes_update(&prior, &setup, &table.sample(&mut rng)).unwrap();
        let p2 = bayes_update(&p1, &setup, &table.sample(&mut rng)).unwrap();
        assert!(p1.entropy() <= prior.entropy() + 1e-12);
        if p2.entropy() < p1.entropy() {
            decreases += 1;
        }
    }
    assert!(decreases >= 112, "{decreases} of 200");
}

#[test]
fn outcome_point_scales_with_inverse_probe() {
    let a = symmetric_xy(1.0, 10.0);
    let b = symmetric_xy(1.0, 20.0);
    let za = eos_lab::eos_core::outcome_to_point(&a, &OutcomeSet(vec![10, -4]));
    let zb = eos_lab::eos_core::outcome_to_point(&b, &OutcomeSet(vec![20, -8]));
    assert!((za - zb).norm() < 1e-12);
    assert!((a.nu.norm() * SQRT_2 - 2.0 * a.nu.norm() * a.pumps[0].norm()).abs() < 1e-12);
}
