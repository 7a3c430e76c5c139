use std::sync::Arc;

use eos_lab::eos_core::symmetric_xy;
use eos_lab::phase_space::StateModel;
use eos_lab::reconstruction::{avg_fidelity_mc, avg_post_fidelity_mc, ParameterFamily, Scheme, DEFAULT_SEED};
use eos_lab::C64;

#[test]
fn xy_and_xyxy_coincide_for_coherent_inputs() {
    let family = Arc::new(ParameterFamily::coherent(5.0, 51));
    let state = StateModel::Coherent(C64::new(1.0, -0.5));
    for z in [0.5, 1.5] {
        let a = avg_fidelity_mc(&state, &Scheme::xy(z, 10.0), &family, 2000, DEFAULT_SEED).unwrap();
        let b = avg_fidelity_mc(&state, &Scheme::xyxy(z, 10.0), &family, 2000, DEFAULT_SEED + 1).unwrap();
        let k = (a.mean - b.mean).abs() / (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        assert!(k < 3.0, "zeta {z}: {} vs {} ({k:.2} SE)", a.mean, b.mean);
    }
}

#[test]
fn post_measurement_fidelity_decays_with_squeezing() {
    let states = [
        (StateModel::Coherent(C64::new(1.0, 0.0)), 2000),
        (StateModel::Squeezed { r: 0.4, phase: 0.0 }, 2000),
        (StateModel::Fock(1), 150),
    ];
    for (state, n) in states {
        let est: Vec<_> = [0.25, 0.5, 1.0, 2.0]
            .iter()
            .map(|&z| avg_post_fidelity_mc(&state, &symmetric_xy(z, 10.0), n, DEFAULT_SEED).unwrap())
            .collect();
        for w in est.windows(2) {
            let tol = 3.0 * (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
            assert!(w[1].mean <= w[0].mean + tol, "{state:?}: {:?}", est.iter().map(|e| e.mean).collect::<Vec<_>>());
        }
        assert!(est[3].mean < est[0].mean, "{state:?}");
    }
}
