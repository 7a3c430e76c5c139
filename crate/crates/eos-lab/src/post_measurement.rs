//! Post-measurement quasiprobability distributions and consecutive measurements.
//!
//! With the Skellam law replaced by its normal limit, the post-state Husimi function is
//! Q′(w) = Q_in(w/μ) G(w) / (μ² p), where G is a Gaussian likelihood with precision
//! A_Q/μ² and linear coefficient 2h_Q, h_Q = |ν| S_Q / μ, on each axis. Removing the
//! (1+s_Q)/4 smoothing axis by axis gives
//!
//!   ρ′(z; s_X, s_Y) = E(z) ρ(z′(z); s′_X, s′_Y),   z′_Q = λ_Q z_Q + κ_Q,
//!
//! with, for d = (1+s)/4 and D = μ² − 2dA:
//!   s′ = 4d/D − 1,  λ = μ/D,  κ = −2hμ d/D,
//!   E = Π gauss(Δn_i) / p · Π_Q D_Q^{−1/2} exp(−2h²μ² d/D − A z²/D + 2hμ² z/D).
//! For A_X = A_Y these reduce to the familiar symmetric-configuration expressions.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eos_core::{count_distribution, count_probability, EosSetup, OutcomeSet, OutcomeWindow};
use crate::error::{Error, Result};
use crate::skellam::{skellam_pmf_exact, skellam_pmf_range, SkellamParams};
use crate::phase_space::{
    qpd_grid, GaussianMoments, NumericState, OrderingParams, QpdGrid, Quadrature, StateModel, Window, DEFAULT_GRID, DEFAULT_N_MAX,
};

/// Per-axis constants of the post-measurement map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisMap {
    pub s_prime: f64,
    pub lambda: f64,
    pub kappa: f64,
    /// Curvature A/D and linear coefficient hμ²/D of the envelope exponent.
    pub curv: f64,
    pub lin: f64,
    /// −½ ln D − 2h²μ² d/D.
    pub log_const: f64,
}

/// Post-measurement map for one outcome and one requested ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct PostMap {
    pub setup: EosSetup,
    pub outcomes: OutcomeSet,
    pub ordering: OrderingParams,
    pub s_prime_x: f64,
    pub s_prime_y: f64,
    /// ỹ = Σ_X (|α̃|/|β|)Δn + i Σ_Y (|α̃|/|β|)Δn.
    pub y_tilde: C64,
    /// z̃ = (|ν|/μ) ỹ.
    pub z_tilde: C64,
    pub x: AxisMap,
    pub y: AxisMap,
}

fn axis(mu: f64, a: f64, h: f64, s: f64) -> Result<AxisMap> {
    let d = (1.0 + s) / 4.0;
    let den = mu * mu - 2.0 * d * a;
    let c = d / den;
    let s_prime = 4.0 * c - 1.0;
    if den <= 0.0 || s_prime >= 1.0 {
        return Err(Error::OrderingOutOfRange { s_x: s, s_y: s });
    }
    Ok(AxisMap {
        s_prime,
        lambda: mu / den,
        kappa: -2.0 * h * c * mu,
        curv: a / den,
        lin: h * mu * mu / den,
        log_const: -0.5 * den.ln() - 2.0 * h * h * mu * mu * c,
    })
}

/// Largest admissible s_Q, 2μ²/(1+A_Q) − 1.
pub fn ordering_limit(setup: &EosSetup, quad: Quadrature) -> f64 {
    let a = match quad {
        Quadrature::X => setup.a_x,
        Quadrature::Y => setup.a_y,
    };
    2.0 * setup.mu * setup.mu / (1.0 + a) - 1.0
}

fn check_ordering(setup: &EosSetup, s_x: f64, s_y: f64) -> Result<()> {
    if s_x >= ordering_limit(setup, Quadrature::X) || s_y >= ordering_limit(setup, Quadrature::Y) {
        return Err(Error::OrderingOutOfRange { s_x, s_y });
    }
    Ok(())
}

/// (s′_X, s′_Y) of the initial-state distribution that the post-state samples.
pub fn prime_params(setup: &EosSetup, s_x: f64, s_y: f64) -> Result<(f64, f64)> {
    check_ordering(setup, s_x, s_y)?;
    let x = axis(setup.mu, setup.a_x, 0.0, s_x).map_err(|_| Error::OrderingOutOfRange { s_x, s_y })?;
    let y = axis(setup.mu, setup.a_y, 0.0, s_y).map_err(|_| Error::OrderingOutOfRange { s_x, s_y })?;
    Ok((x.s_prime, y.s_prime))
}

impl PostMap {
    pub fn new(setup: &EosSetup, outcomes: &OutcomeSet, ordering: OrderingParams) -> Result<Self> {
        if outcomes.0.len() != setup.len() {
            return Err(Error::OutcomeLength { expected: setup.len(), got: outcomes.0.len() });
        }
        check_ordering(setup, ordering.s_x, ordering.s_y)?;
        let y_tilde = setup.outcome_sum(outcomes);
        let nu = setup.nu.norm();
        let mu = setup.mu;
        let err = |_| Error::OrderingOutOfRange { s_x: ordering.s_x, s_y: ordering.s_y };
        let x = axis(mu, setup.a_x, nu * y_tilde.re / mu, ordering.s_x).map_err(err)?;
        let y = axis(mu, setup.a_y, nu * y_tilde.im / mu, ordering.s_y).map_err(err)?;
        Ok(Self {
            setup: setup.clone(),
            outcomes: outcomes.clone(),
            ordering,
            s_prime_x: x.s_prime,
            s_prime_y: y.s_prime,
            y_tilde,
            z_tilde: y_tilde * (nu / mu),
            x,
            y,
        })
    }

    pub fn wigner(setup: &EosSetup, outcomes: &OutcomeSet) -> Result<Self> {
        Self::new(setup, outcomes, OrderingParams::wigner())
    }

    pub fn prime_ordering(&self) -> OrderingParams {
        OrderingParams::new(self.s_prime_x, self.s_prime_y)
    }

    /// ln E(z) without the −ln p term.
    fn log_envelope_unnormalized(&self, z: C64) -> f64 {
        self.setup.log_gauss_product(&self.outcomes) + self.x.log_const + self.y.log_const - self.x.curv * z.re * z.re
            + 2.0 * self.x.lin * z.re
            - self.y.curv * z.im * z.im
            + 2.0 * self.y.lin * z.im
    }

    /// Renormalization envelope N′(z) for outcome probability `p`.
    pub fn envelope(&self, z: C64, p: f64) -> f64 {
        (self.log_envelope_unnormalized(z) - p.ln()).exp()
    }
}

/// Affine argument z′(z) of the initial-state distribution.
pub fn prime_map(pm: &PostMap, z: C64) -> C64 {
    C64::new(pm.x.lambda * z.re + pm.x.kappa, pm.y.lambda * z.im + pm.y.kappa)
}

/// A state together with the probability of the conditioning outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct PostState<'a> {
    pub map: &'a PostMap,
    pub state: &'a StateModel,
    pub probability: f64,
}

impl<'a> PostState<'a> {
    pub fn new(map: &'a PostMap, state: &'a StateModel) -> Result<Self> {
        let probability = count_probability(&map.setup, state, &map.outcomes)?;
        if !(probability > 1e-300) {
            return Err(Error::VanishingOutcomeProbability(probability));
        }
        Ok(Self { map, state, probability })
    }

    pub fn eval(&self, z: C64) -> Result<f64> {
        let rho = self.state.qpd_eval(prime_map(self.map, z), self.map.prime_ordering())?;
        Ok(self.map.envelope(z, self.probability) * rho)
    }

    pub fn grid(&self, win: &Window) -> Result<QpdGrid> {
        QpdGrid::from_fn(win, self.map.ordering, |z| self.eval(z))
    }
}

/// ρ′(z; s_X, s_Y) = N′(z) ρ(z′(z); s′_X, s′_Y).
pub fn post_qpd(pm: &PostMap, state: &StateModel, z: C64) -> Result<f64> {
    PostState::new(pm, state)?.eval(z)
}

/// Post-state of a Gaussian input, exactly Gaussian in this approximation.
pub fn post_gaussian(setup: &EosSetup, outcomes: &OutcomeSet, g: &GaussianMoments) -> GaussianMoments {
    let mu = setup.mu;
    let nu = setup.nu.norm();
    let y = setup.outcome_sum(outcomes);
    // Husimi covariance of Q_in(w/μ) in w; the likelihood is exp(−A w²/μ² + 2h w) per axis
    let cov_in = Matrix2::new(g.vxx + 0.25, g.vxy, g.vxy, g.vyy + 0.25) * (mu * mu);
    let prec_in = cov_in.try_inverse().expect("Husimi covariance is positive definite");
    let prec = prec_in + Matrix2::new(setup.a_x, 0.0, 0.0, setup.a_y) * (2.0 / (mu * mu));
    let cov = prec.try_inverse().expect("posterior precision is positive definite");
    let lin = prec_in * Vector2::new(g.mean.re, g.mean.im) * mu + Vector2::new(nu * y.re / mu, nu * y.im / mu) * 2.0;
    let m = cov * lin;
    GaussianMoments { mean: C64::new(m[0], m[1]), vxx: cov[(0, 0)] - 0.25, vxy: cov[(0, 1)], vyy: cov[(1, 1)] - 0.25 }
}

/// Limit of the post-state Wigner function as |ζ| → ∞.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrongLimit {
    pub center: C64,
    /// r = ½ ln(Σ_X|α̃|² / Σ_Y|α̃|²).
    pub r: f64,
}

impl StrongLimit {
    pub fn wigner(&self, z: C64) -> f64 {
        let d = z - self.center;
        let e = (2.0 * self.r).exp();
        2.0 / PI * (-2.0 * e * d.re * d.re - 2.0 / e * d.im * d.im).exp()
    }
}

/// Displaced squeezed Wigner function at ỹ; DegeneratePartition when one quadrature
/// set carries no pump (a quadrature eigenstate, not a density).
pub fn strong_limit_qpd(y_tilde: C64, weight_x: f64, weight_y: f64) -> Result<StrongLimit> {
    if !(weight_x > 0.0 && weight_y > 0.0) {
        return Err(Error::DegeneratePartition);
    }
    Ok(StrongLimit { center: y_tilde, r: 0.5 * (weight_x / weight_y).ln() })
}

/// Quadrature weights Σ_X|α̃|² and Σ_Y|α̃|² of a setup.
pub fn pump_split(setup: &EosSetup) -> (f64, f64) {
    let w = |q: Quadrature| -> f64 {
        setup.channels.iter().zip(&setup.pumps).filter(|(c, _)| c.quadrature == q).map(|(_, p)| p.norm_sqr()).sum()
    };
    (w(Quadrature::X), w(Quadrature::Y))
}

/// Strong-squeezing limit for an outcome: the center is the unbiased estimate
/// S_Q/(2 Σ_Q|α̃|²), equal to ỹ for a symmetric split.
pub fn strong_limit_for(setup: &EosSetup, outcomes: &OutcomeSet) -> Result<StrongLimit> {
    let (wx, wy) = pump_split(setup);
    let y = setup.outcome_sum(outcomes);
    let mut lim = strong_limit_qpd(y, wx, wy)?;
    lim.center = C64::new(y.re / (2.0 * wx), y.im / (2.0 * wy));
    Ok(lim)
}

/// One stage of a consecutive-measurement run.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainStage {
    pub setup: EosSetup,
    /// `None` draws the outcome from the stage distribution.
    pub outcomes: Option<OutcomeSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOptions {
    pub window: Window,
    pub n_max: usize,
    pub seed: u64,
}

impl Default for ChainOptions {
    fn default() -> Self {
        let half = 4.0 + (DEFAULT_N_MAX as f64).sqrt();
        Self { window: Window::square(half, DEFAULT_GRID), n_max: DEFAULT_N_MAX, seed: 0x05EE_DE05 }
    }
}

#[derive(Debug, Clone)]
pub struct StageResult {
    pub outcomes: OutcomeSet,
    pub probability: f64,
    /// Post-measurement Wigner grid on the standard window.
    pub grid: QpdGrid,
    /// The re-gridded post-state fed to the next stage.
    pub state: StateModel,
    pub purity: f64,
    /// Excess kurtosis of the X and Y marginals of the grid.
    pub excess_kurtosis: (f64, f64),
}

/// Excess kurtosis of both grid marginals.
pub fn grid_excess_kurtosis(grid: &QpdGrid) -> (f64, f64) {
    let m = grid.moments();
    let (mut kx, mut ky, mut s0) = (0.0, 0.0, 0.0);
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let v = grid.at(ix, iy);
            let p = grid.point(ix, iy);
            s0 += v;
            kx += v * (p.re - m.mean_x).powi(4);
            ky += v * (p.im - m.mean_y).powi(4);
        }
    }
    (kx / s0 / (m.var_x * m.var_x) - 3.0, ky / s0 / (m.var_y * m.var_y) - 3.0)
}

/// Samples an outcome from the Gaussian-route distribution of `state`.
pub fn sample_outcome<R: Rng + ?Sized>(setup: &EosSetup, state: &StateModel, rng: &mut R) -> Result<OutcomeSet> {
    let window = OutcomeWindow::for_state(setup, state);
    let table = count_distribution(setup, state, &window)?;
    let total = table.total();
    let mut u = rng.random::<f64>() * total;
    for (i, p) in table.probs.iter().enumerate() {
        u -= p;
        if u <= 0.0 {
            return Ok(window.outcome(i));
        }
    }
    Ok(window.outcome(table.probs.len() - 1))
}

/// Runs measurement stages in sequence; each stage consumes the previous
/// post-state as a Numeric state re-gridded on the standard window.
pub fn chain(stages: &[ChainStage], state: &StateModel, opts: &ChainOptions) -> Result<Vec<StageResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut current = state.clone();
    let mut out = Vec::with_capacity(stages.len());
    for stage in stages {
        if stage.setup.a_x == 0.0 && stage.setup.a_y == 0.0 {
            out.push(uncoupled_stage(stage, &current, opts, &mut rng)?);
            continue;
        }
        let outcomes = match &stage.outcomes {
            Some(o) => o.clone(),
            None => sample_outcome(&stage.setup, &current, &mut rng)?,
        };
        let map = PostMap::wigner(&stage.setup, &outcomes)?;
        let post = PostState::new(&map, &current)?;
        let grid = post.grid(&opts.window)?;
        let lost = (1.0 - grid.integral()).abs();
        if lost > 1e-6 {
            return Err(Error::RegridLoss(lost));
        }
        let next = StateModel::numeric(NumericState::from_wigner_grid(&grid, opts.n_max)?);
        out.push(StageResult {
            outcomes,
            probability: post.probability,
            purity: grid.purity(),
            excess_kurtosis: grid_excess_kurtosis(&grid),
            grid,
            state: next.clone(),
        });
        current = next;
    }
    Ok(out)
}

/// A stage without MIR coupling: counts follow the bare probe Skellam law and
/// the state passes through unchanged.
fn uncoupled_stage(stage: &ChainStage, state: &StateModel, opts: &ChainOptions, rng: &mut ChaCha8Rng) -> Result<StageResult> {
    let laws: Vec<(SkellamParams, i64)> = stage
        .setup
        .channels
        .iter()
        .map(|c| {
            let b2 = c.probe.norm_sqr();
            (SkellamParams::new(b2 / 2.0, b2 / 2.0), (10.0 * b2.sqrt()).ceil() as i64 + 10)
        })
        .collect();
    let outcomes = match &stage.outcomes {
        Some(o) => o.clone(),
        None => {
            let mut v = Vec::with_capacity(laws.len());
            for &(p, half) in &laws {
                let pmf = skellam_pmf_range(-half, half, p)?;
                let mut u = rng.random::<f64>() * pmf.iter().sum::<f64>();
                let mut pick = half;
                for (k, w) in pmf.iter().enumerate() {
                    u -= w;
                    if u <= 0.0 {
                        pick = k as i64 - half;
                        break;
                    }
                }
                v.push(pick);
            }
            OutcomeSet(v)
        }
    };
    if outcomes.0.len() != laws.len() {
        return Err(Error::OutcomeLength { expected: laws.len(), got: outcomes.0.len() });
    }
    let probability = outcomes.0.iter().zip(&laws).map(|(&d, &(p, _))| skellam_pmf_exact(d, p)).product::<Result<f64>>()?;
    let grid = qpd_grid(state, &opts.window, OrderingParams::wigner())?;
    Ok(StageResult {
        outcomes,
        probability,
        purity: grid.purity(),
        excess_kurtosis: grid_excess_kurtosis(&grid),
        grid,
        state: state.clone(),
    })
}
