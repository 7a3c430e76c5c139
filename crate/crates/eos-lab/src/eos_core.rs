//! Measurement configuration and count statistics of the ellipsometry stage.
//!
//! Two independent routes to p({Δn}):
//! * the Gaussian route, envelope × ρ(z; s̃_X, s̃_Y);
//! * the exact route, ∫ Q(u) Π_i Skellam(Δn_i; m_i1(u), m_i2(u)) d²u with
//!   m_ij = ½ | |β_i| ± e^{iφ_i} |ν| |α̃_i| ū |², valid at any probe strength.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::phase_space::{OrderingParams, Quadrature, StateModel};
use crate::quad::gauss_hermite;
use crate::skellam::{skellam_pmf_range, SkellamParams};

/// Probe amplitude below which the Gaussian route is outside its validated regime.
pub const GAUSSIAN_PROBE_FLOOR: f64 = 5.0;
/// Values in [−floor, 0) are clamped to zero; anything lower is an error.
pub const NEGATIVE_FLOOR: f64 = 1e-12;

static CLAMPED: AtomicU64 = AtomicU64::new(0);

/// Number of tiny negative probabilities clamped to zero so far in this process.
pub fn clamped_count() -> u64 {
    CLAMPED.load(Ordering::Relaxed)
}

fn clamp_probability(p: f64) -> Result<f64> {
    if p >= 0.0 {
        Ok(p)
    } else if p >= -NEGATIVE_FLOOR {
        CLAMPED.fetch_add(1, Ordering::Relaxed);
        Ok(0.0)
    } else {
        Err(Error::NegativeProbability(p))
    }
}

/// What a caller specifies per channel; waveplate and probe phase are solved for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSpec {
    pub pump: C64,
    pub probe: f64,
    pub quadrature: Quadrature,
}

/// Waveplate parameters on the canonical branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveplateSolution {
    pub phi: f64,
    pub theta: f64,
    pub k1: i32,
    pub k2: i32,
    pub probe_phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Channel {
    pub index: usize,
    pub pump: C64,
    pub probe: C64,
    /// Retardance φ_i.
    pub phi: f64,
    /// Rotation θ_i.
    pub theta: f64,
    pub k1: i32,
    pub k2: i32,
    pub quadrature: Quadrature,
}

fn sign(k: i32) -> f64 {
    if k.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Balanced-signal rotation angle for retardance φ and branch (k1, k2).
pub fn balanced_theta(phi: f64, k1: i32, k2: i32) -> f64 {
    let cot = 1.0 / (0.5 * phi).tan();
    let arg = (0.5 * (1.0 - cot * cot)).max(0.0).sqrt();
    sign(k1) * 0.5 * (sign(k2) * arg).acos()
}

/// Canonical branch φ = π, k1 = k2 = 0; the target phase is carried by arg β.
pub fn solve_waveplate(pump_phase: f64, _probe_amp: f64, quad: Quadrature, zeta_phase: f64) -> WaveplateSolution {
    let target = match quad {
        Quadrature::X => 0.0,
        Quadrature::Y => FRAC_PI_2,
    };
    WaveplateSolution {
        phi: PI,
        theta: balanced_theta(PI, 0, 0),
        k1: 0,
        k2: 0,
        probe_phase: PI + zeta_phase - pump_phase - target,
    }
}

impl Channel {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidChannel { index: self.index, reason });
        if !(FRAC_PI_2 - 1e-12..=1.5 * PI + 1e-12).contains(&self.phi) {
            return bad(format!("retardance {} outside [π/2, 3π/2]", self.phi));
        }
        let th = balanced_theta(self.phi, self.k1, self.k2);
        if (th - self.theta).abs() > 1e-12 {
            return bad(format!("rotation {} violates the balance condition (expected {th})", self.theta));
        }
        if !(self.probe.norm() > 0.0 && self.probe.norm().is_finite()) {
            return bad("probe amplitude must be positive".into());
        }
        Ok(())
    }

    /// e^{iφ_i}, the interference phase of this ellipsometer.
    pub fn interference_phase(&self, zeta: C64) -> C64 {
        let ang = (self.k1 + self.k2 + 1) as f64 * PI
            + sign(self.k2) * (std::f64::consts::SQRT_2 * (0.5 * self.phi).cos()).clamp(-1.0, 1.0).asin()
            + zeta.arg()
            - self.pump.arg()
            - self.probe.arg();
        C64::from_polar(1.0, ang)
    }
}

/// Complete measurement configuration with derived constants.
#[derive(Debug, Clone, PartialEq)]
pub struct EosSetup {
    pub zeta: C64,
    pub channels: Vec<Channel>,
    pub mu: f64,
    pub nu: C64,
    /// α̃_i = α_i / (Σ|α_j|²)^{1/2}.
    pub pumps: Vec<C64>,
    pub a_x: f64,
    pub a_y: f64,
    /// s̃_X; −∞ when no X channel carries pump.
    pub s_x: f64,
    pub s_y: f64,
    phases: Vec<C64>,
}

/// Builds channels on the canonical waveplate branch and derives the setup.
pub fn derive_setup(zeta: C64, specs: &[ChannelSpec]) -> Result<EosSetup> {
    let channels = specs
        .iter()
        .enumerate()
        .map(|(index, s)| {
            let w = solve_waveplate(s.pump.arg(), s.probe, s.quadrature, zeta.arg());
            Channel {
                index,
                pump: s.pump,
                probe: C64::from_polar(s.probe, w.probe_phase),
                phi: w.phi,
                theta: w.theta,
                k1: w.k1,
                k2: w.k2,
                quadrature: s.quadrature,
            }
        })
        .collect();
    EosSetup::from_channels(zeta, channels)
}

/// One X and one Y channel with equal pumps and probes.
pub fn symmetric_xy(zeta: f64, beta: f64) -> EosSetup {
    let pump = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    derive_setup(
        C64::new(zeta, 0.0),
        &[
            ChannelSpec { pump, probe: beta, quadrature: Quadrature::X },
            ChannelSpec { pump, probe: beta, quadrature: Quadrature::Y },
        ],
    )
    .expect("symmetric configuration is valid")
}

/// Two X and two Y channels with equal pumps and probes.
pub fn symmetric_xyxy(zeta: f64, beta: f64) -> EosSetup {
    let pump = C64::new(0.5, 0.0);
    let q = [Quadrature::X, Quadrature::Y, Quadrature::X, Quadrature::Y];
    let specs: Vec<ChannelSpec> = q.iter().map(|&quadrature| ChannelSpec { pump, probe: beta, quadrature }).collect();
    derive_setup(C64::new(zeta, 0.0), &specs).expect("symmetric configuration is valid")
}

impl EosSetup {
    pub fn from_channels(zeta: C64, channels: Vec<Channel>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::EmptySetup);
        }
        for c in &channels {
            c.validate()?;
        }
        let total: f64 = channels.iter().map(|c| c.pump.norm_sqr()).sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::ZeroPump);
        }
        let r = zeta.norm();
        let mu = r.cosh();
        let nu = C64::from_polar(r.sinh(), zeta.arg());
        let pumps: Vec<C64> = channels.iter().map(|c| c.pump / total.sqrt()).collect();
        let nu2 = nu.norm_sqr();
        let sum_q = |q: Quadrature| -> f64 {
            channels.iter().zip(&pumps).filter(|(c, _)| c.quadrature == q).map(|(_, p)| p.norm_sqr()).sum()
        };
        let a_x = 2.0 * nu2 * sum_q(Quadrature::X);
        let a_y = 2.0 * nu2 * sum_q(Quadrature::Y);
        let s_tilde = |a: f64| if a > 0.0 { -1.0 - 2.0 / a } else { f64::NEG_INFINITY };
        let phases = channels.iter().map(|c| c.interference_phase(zeta)).collect();
        Ok(Self { zeta, mu, nu, pumps, a_x, a_y, s_x: s_tilde(a_x), s_y: s_tilde(a_y), channels, phases })
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn phase(&self, i: usize) -> C64 {
        self.phases[i]
    }

    pub fn ordering(&self) -> OrderingParams {
        OrderingParams::new(self.s_x, self.s_y)
    }

    /// True when every probe sits at or above the Gaussian floor.
    pub fn in_gaussian_regime(&self) -> bool {
        self.channels.iter().all(|c| c.probe.norm() >= GAUSSIAN_PROBE_FLOOR)
    }

    /// One X channel, one Y channel, equal pumps and equal combined strengths.
    pub fn is_symmetric_xy(&self) -> bool {
        self.len() == 2
            && self.channels[0].quadrature != self.channels[1].quadrature
            && (self.pumps[0].norm() - self.pumps[1].norm()).abs() < 1e-12
            && (self.a_x - self.a_y).abs() <= 1e-12 * self.a_x.max(1.0)
    }

    fn check_outcomes(&self, o: &OutcomeSet) -> Result<()> {
        if o.0.len() != self.len() {
            return Err(Error::OutcomeLength { expected: self.len(), got: o.0.len() });
        }
        Ok(())
    }

    /// ỹ = Σ_X (|α̃|/|β|)Δn + i Σ_Y (|α̃|/|β|)Δn.
    pub fn outcome_sum(&self, o: &OutcomeSet) -> C64 {
        let mut y = C64::new(0.0, 0.0);
        for ((c, p), &dn) in self.channels.iter().zip(&self.pumps).zip(&o.0) {
            let w = p.norm() / c.probe.norm() * dn as f64;
            match c.quadrature {
                Quadrature::X => y.re += w,
                Quadrature::Y => y.im += w,
            }
        }
        y
    }

    /// log Π_i e^{−Δn_i²/(2|β_i|²)}/√(2π|β_i|²).
    pub fn log_gauss_product(&self, o: &OutcomeSet) -> f64 {
        self.channels
            .iter()
            .zip(&o.0)
            .map(|(c, &dn)| {
                let b2 = c.probe.norm_sqr();
                -(dn as f64).powi(2) / (2.0 * b2) - 0.5 * (2.0 * PI * b2).ln()
            })
            .sum()
    }
}

/// One measurement record, Δn per channel in channel order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OutcomeSet(pub Vec<i64>);

/// z({Δn}) = −|ν| [(1+s̃_X)/2 Σ_X + i (1+s̃_Y)/2 Σ_Y]; written as |ν|(Σ_X/A_X + iΣ_Y/A_Y).
pub fn outcome_to_point(setup: &EosSetup, o: &OutcomeSet) -> C64 {
    let y = setup.outcome_sum(o);
    let nu = setup.nu.norm();
    let re = if setup.a_x > 0.0 { nu * y.re / setup.a_x } else { 0.0 };
    let im = if setup.a_y > 0.0 { nu * y.im / setup.a_y } else { 0.0 };
    C64::new(re, im)
}

fn log_envelope(setup: &EosSetup, o: &OutcomeSet) -> f64 {
    let z = outcome_to_point(setup, o);
    // −2/(1+s̃_Q) = A_Q
    (PI / (setup.a_x * setup.a_y).sqrt()).ln()
        + setup.log_gauss_product(o)
        + setup.a_x * z.re * z.re
        + setup.a_y * z.im * z.im
}

/// Renormalization envelope N({Δn}) of the Gaussian route.
pub fn envelope(setup: &EosSetup, o: &OutcomeSet) -> Result<f64> {
    setup.check_outcomes(o)?;
    if setup.a_x <= 0.0 || setup.a_y <= 0.0 {
        return Err(Error::UnsupportedConfiguration("envelope needs pump in both quadrature sets".into()));
    }
    Ok(log_envelope(setup, o).exp())
}

/// Gaussian-route p({Δn}) = N ρ(z; s̃_X, s̃_Y); single-quadrature setups use the marginal route.
pub fn count_probability(setup: &EosSetup, state: &StateModel, o: &OutcomeSet) -> Result<f64> {
    setup.check_outcomes(o)?;
    if setup.a_x <= 0.0 || setup.a_y <= 0.0 {
        return marginal_route(setup, state, o);
    }
    let z = outcome_to_point(setup, o);
    let rho = state.qpd_eval(z, setup.ordering())?;
    clamp_probability(log_envelope(setup, o).exp() * rho)
}

/// X-only marginal route: N_X({Δn}) ∫ ⟨x|ρ̂|x⟩ e^{(2/s̃_X)(x − Re z)²} dx.
pub fn marginal_count_probability(setup: &EosSetup, state: &StateModel, o: &OutcomeSet) -> Result<f64> {
    setup.check_outcomes(o)?;
    if setup.channels.iter().any(|c| c.quadrature == Quadrature::Y) || setup.zeta.im != 0.0 || setup.zeta.re < 0.0 {
        return Err(Error::PartitionViolation);
    }
    marginal_route(setup, state, o)
}

fn marginal_route(setup: &EosSetup, state: &StateModel, o: &OutcomeSet) -> Result<f64> {
    let (a, quad, s) = if setup.a_x > 0.0 {
        (setup.a_x, Quadrature::X, setup.s_x)
    } else if setup.a_y > 0.0 {
        (setup.a_y, Quadrature::Y, setup.s_y)
    } else {
        return Err(Error::ZeroPump);
    };
    let z = outcome_to_point(setup, o);
    let c = match quad {
        Quadrature::X => z.re,
        Quadrature::Y => z.im,
    };
    // envelope with the Gaussian kernel normalized: Π gauss · e^{A c²} √(π/A)
    let log_n = setup.log_gauss_product(o) + a * c * c + 0.5 * (PI / a).ln();
    // smoothing variance −s̃/4 = 1/4 + 1/(2A)
    let v = -s / 4.0;
    let gh = gauss_hermite(96);
    let scale = (2.0 * v).sqrt();
    let smooth: f64 = gh
        .nodes
        .iter()
        .zip(&gh.weights)
        .map(|(t, w)| w * state.marginal(quad, c + scale * t))
        .sum::<f64>()
        / PI.sqrt();
    clamp_probability(log_n.exp() * smooth)
}

/// Per-channel mean and variance of Δn from the state's quadrature moments.
pub fn channel_moments(setup: &EosSetup, state: &StateModel) -> Vec<(f64, f64)> {
    let m = state.moments();
    let nu = setup.nu.norm();
    setup
        .channels
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let e = setup.phase(i);
            let b = c.probe.norm();
            let g = 2.0 * b * nu * setup.pumps[i].norm();
            // Δn mean ∝ Re(e^{iφ} ū) = cos φ Re u + sin φ Im u
            let mean = g * (e.re * m.mean_x + e.im * m.mean_y);
            let var_q = e.re * e.re * m.var_x + e.im * e.im * m.var_y + 2.0 * e.re * e.im * m.cov_xy;
            (mean, b * b + g * g * (var_q + 0.25))
        })
        .collect()
}

/// Ensemble moments for the symmetric XY configuration: mean_Q = √2|ν||β_Q|⟨Q̂⟩,
/// var_Q = 2|ν|²|β_Q|²(Var Q̂ − s̃/4).
pub fn moments(setup: &EosSetup, state: &StateModel) -> Result<Vec<(f64, f64)>> {
    if !setup.is_symmetric_xy() {
        return Err(Error::UnsupportedConfiguration("moments need a symmetric XY setup".into()));
    }
    let m = state.moments();
    let nu = setup.nu.norm();
    Ok(setup
        .channels
        .iter()
        .map(|c| {
            let b = c.probe.norm();
            let (mean, var, s) = match c.quadrature {
                Quadrature::X => (m.mean_x, m.var_x, setup.s_x),
                Quadrature::Y => (m.mean_y, m.var_y, setup.s_y),
            };
            (std::f64::consts::SQRT_2 * nu * b * mean, 2.0 * nu * nu * b * b * (var - s / 4.0))
        })
        .collect())
}

/// Inclusive Δn range per channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutcomeWindow {
    pub ranges: Vec<(i64, i64)>,
}

impl OutcomeWindow {
    /// ±ceil(6σ) around the channel mean, σ² from the moments plus a |β|² floor.
    pub fn for_state(setup: &EosSetup, state: &StateModel) -> Self {
        let ranges = channel_moments(setup, state)
            .iter()
            .zip(&setup.channels)
            .map(|(&(mean, var), c)| {
                let sd = var.max(c.probe.norm_sqr()).sqrt();
                let half = (6.0 * sd).ceil();
                ((mean - half).floor() as i64, (mean + half).ceil() as i64)
            })
            .collect();
        Self { ranges }
    }

    pub fn dims(&self) -> Vec<usize> {
        self.ranges.iter().map(|(a, b)| (b - a + 1) as usize).collect()
    }

    pub fn len(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major decode; the last channel varies fastest.
    pub fn outcome(&self, mut flat: usize) -> OutcomeSet {
        let dims = self.dims();
        let mut v = vec![0i64; dims.len()];
        for k in (0..dims.len()).rev() {
            v[k] = self.ranges[k].0 + (flat % dims[k]) as i64;
            flat /= dims[k];
        }
        OutcomeSet(v)
    }

    pub fn index(&self, o: &OutcomeSet) -> Option<usize> {
        let dims = self.dims();
        let mut flat = 0usize;
        for (k, &dn) in o.0.iter().enumerate() {
            let (lo, hi) = self.ranges[k];
            if dn < lo || dn > hi {
                return None;
            }
            flat = flat * dims[k] + (dn - lo) as usize;
        }
        Some(flat)
    }
}

/// Probabilities over an outcome window.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    pub window: OutcomeWindow,
    pub probs: Vec<f64>,
}

impl CountTable {
    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn get(&self, o: &OutcomeSet) -> Option<f64> {
        self.window.index(o).map(|i| self.probs[i])
    }

    /// Mass on outcomes touching any window edge.
    pub fn boundary_mass(&self) -> f64 {
        (0..self.probs.len())
            .filter(|&i| {
                let o = self.window.outcome(i);
                o.0.iter().zip(&self.window.ranges).any(|(&d, &(lo, hi))| d == lo || d == hi)
            })
            .map(|i| self.probs[i])
            .sum()
    }

    /// Per-channel (mean, variance) of the tabulated distribution.
    pub fn channel_moments(&self) -> Vec<(f64, f64)> {
        let k = self.window.ranges.len();
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; k];
        let mut s2 = vec![0.0; k];
        for (i, &p) in self.probs.iter().enumerate() {
            let o = self.window.outcome(i);
            s0 += p;
            for c in 0..k {
                let d = o.0[c] as f64;
                s1[c] += p * d;
                s2[c] += p * d * d;
            }
        }
        (0..k)
            .map(|c| {
                let m = s1[c] / s0;
                (m, s2[c] / s0 - m * m)
            })
            .collect()
    }

    fn check(self) -> Result<Self> {
        let b = self.boundary_mass();
        if b > 1e-4 {
            return Err(Error::WindowTooSmall { boundary: b, limit: 1e-4 });
        }
        Ok(self)
    }
}

/// Gaussian-route table; WindowTooSmall if the window edges carry more than 1e-4.
pub fn count_distribution(setup: &EosSetup, state: &StateModel, window: &OutcomeWindow) -> Result<CountTable> {
    if window.ranges.len() != setup.len() {
        return Err(Error::OutcomeLength { expected: setup.len(), got: window.ranges.len() });
    }
    let probs: Result<Vec<f64>> =
        (0..window.len()).into_par_iter().map(|i| count_probability(setup, state, &window.outcome(i))).collect();
    CountTable { window: window.clone(), probs: probs? }.check()
}

/// Husimi sampling grid for the exact route: nodes u_k and weights w_k with
/// ∫ Q(u) f(u) d²u ≈ Σ w_k f(u_k).
fn husimi_nodes(state: &StateModel, order: usize) -> Result<Vec<(C64, f64)>> {
    let gh = gauss_hermite(order);
    let husimi = OrderingParams::husimi();
    let (center, sigma, coherent) = match state {
        StateModel::Vacuum => (C64::new(0.0, 0.0), 1.0, true),
        StateModel::Coherent(a) => (*a, 1.0, true),
        _ => {
            let m = state.moments();
            // Husimi variance per axis is Var + 1/4; weight e^{−|u−c|²/σ²} has σ²/2
            let v = (m.var_x.max(m.var_y) + 0.25).max(0.5);
            (C64::new(m.mean_x, m.mean_y), (2.0 * v).sqrt(), false)
        }
    };
    let mut out = Vec::with_capacity(order * order);
    for (ti, wi) in gh.nodes.iter().zip(&gh.weights) {
        for (tj, wj) in gh.nodes.iter().zip(&gh.weights) {
            let u = center + C64::new(ti * sigma, tj * sigma);
            let w = if coherent {
                wi * wj / PI
            } else {
                let q = state.qpd_eval(u, husimi)?;
                wi * wj * sigma * sigma * q * (ti * ti + tj * tj).exp()
            };
            out.push((u, w));
        }
    }
    Ok(out)
}

/// Skellam rates of channel i at Husimi point u.
fn rates(setup: &EosSetup, i: usize, u: C64) -> SkellamParams {
    let b = setup.channels[i].probe.norm();
    let c = setup.phase(i) * u.conj() * (setup.nu.norm() * setup.pumps[i].norm());
    SkellamParams::new(0.5 * (b + c).norm_sqr(), 0.5 * (b - c).norm_sqr())
}

fn exact_table_at(setup: &EosSetup, nodes: &[(C64, f64)], window: &OutcomeWindow) -> Result<Vec<f64>> {
    let k = setup.len();
    let dims = window.dims();
    // per channel: matrix [Δn, node] of Skellam values
    let per_channel: Result<Vec<DMatrix<f64>>> = (0..k)
        .map(|i| {
            let (lo, hi) = window.ranges[i];
            let cols: Result<Vec<Vec<f64>>> =
                nodes.par_iter().map(|&(u, _)| skellam_pmf_range(lo, hi, rates(setup, i, u))).collect();
            let cols = cols?;
            Ok(DMatrix::from_fn(dims[i], nodes.len(), |r, c| cols[c][r]))
        })
        .collect();
    let per_channel = per_channel?;
    let weights: Vec<f64> = nodes.iter().map(|n| n.1).collect();
    if k == 2 {
        let mut a = per_channel[0].clone();
        for (c, w) in weights.iter().enumerate() {
            a.column_mut(c).scale_mut(*w);
        }
        let p = a * per_channel[1].transpose();
        return Ok((0..window.len()).map(|f| p[(f / dims[1], f % dims[1])]).collect());
    }
    Ok((0..window.len())
        .into_par_iter()
        .map(|f| {
            let o = window.outcome(f);
            (0..nodes.len())
                .map(|n| {
                    weights[n]
                        * (0..k).map(|i| per_channel[i][((o.0[i] - window.ranges[i].0) as usize, n)]).product::<f64>()
                })
                .sum()
        })
        .collect())
}

const EXACT_ORDERS: [usize; 4] = [32, 64, 96, 144];
const EXACT_TOL: f64 = 1e-8;

/// Exact-route table for any state; node count grows until the relative change
/// on all entries above 1e-9 falls below 1e-8.
pub fn exact_count_table(setup: &EosSetup, state: &StateModel, window: &OutcomeWindow) -> Result<CountTable> {
    if window.ranges.len() != setup.len() {
        return Err(Error::OutcomeLength { expected: setup.len(), got: window.ranges.len() });
    }
    let mut prev: Option<Vec<f64>> = None;
    let mut change = f64::INFINITY;
    for &order in &EXACT_ORDERS {
        let nodes = husimi_nodes(state, order)?;
        let cur = exact_table_at(setup, &nodes, window)?;
        if let Some(p) = &prev {
            change = p
                .iter()
                .zip(&cur)
                .filter(|(_, &c)| c.abs() > 1e-9)
                .map(|(a, b)| ((a - b) / b).abs())
                .fold(0.0, f64::max);
            if change < EXACT_TOL {
                let probs: Result<Vec<f64>> = cur.into_iter().map(clamp_probability).collect();
                return Ok(CountTable { window: window.clone(), probs: probs? });
            }
        }
        prev = Some(cur);
    }
    Err(Error::QuadratureNonConvergent { tol: EXACT_TOL, change })
}

/// Exact-route p({Δn}) for an arbitrary state.
pub fn exact_count_probability(setup: &EosSetup, state: &StateModel, o: &OutcomeSet) -> Result<f64> {
    setup.check_outcomes(o)?;
    let window = OutcomeWindow { ranges: o.0.iter().map(|&d| (d, d)).collect() };
    let mut prev: Option<f64> = None;
    let mut change = f64::INFINITY;
    for &order in &EXACT_ORDERS {
        let nodes = husimi_nodes(state, order)?;
        let cur = exact_table_at(setup, &nodes, &window)?[0];
        if let Some(p) = prev {
            change = if cur == 0.0 { (p - cur).abs() } else { ((p - cur) / cur).abs() };
            if change < EXACT_TOL || (cur.abs() < 1e-300 && p.abs() < 1e-300) {
                return clamp_probability(cur);
            }
        }
        prev = Some(cur);
    }
    Err(Error::QuadratureNonConvergent { tol: EXACT_TOL, change })
}

/// Exact-route p({Δn}) for a coherent (or vacuum) input.
pub fn exact_count_probability_coherent(setup: &EosSetup, alpha: C64, o: &OutcomeSet) -> Result<f64> {
    exact_count_probability(setup, &StateModel::Coherent(alpha), o)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn waveplate_solution_balances_phase() {
        let x = solve_waveplate(0.0, 10.0, Quadrature::X, 0.0);
        assert!((x.probe_phase - PI).abs() < 1e-15 && (x.theta - PI / 8.0).abs() < 1e-15);
        let y = solve_waveplate(0.0, 10.0, Quadrature::Y, 0.0);
        assert!((y.probe_phase - FRAC_PI_2).abs() < 1e-15);
        let s = derive_setup(
            c(0.7, 0.4),
            &[
                ChannelSpec { pump: c(0.3, 0.8), probe: 10.0, quadrature: Quadrature::X },
                ChannelSpec { pump: c(-0.5, 0.1), probe: 7.0, quadrature: Quadrature::Y },
            ],
        )
        .unwrap();
        assert!((s.phase(0) - 1.0).norm() < 1e-10);
        assert!((s.phase(1) - c(0.0, 1.0)).norm() < 1e-10);
        assert!((s.mu * s.mu - s.nu.norm_sqr() - 1.0).abs() < 1e-12);
        let total: f64 = s.pumps.iter().map(|p| p.norm_sqr()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn setup_errors() {
        assert!(matches!(derive_setup(c(1.0, 0.0), &[]), Err(Error::EmptySetup)));
        let z = ChannelSpec { pump: c(0.0, 0.0), probe: 10.0, quadrature: Quadrature::X };
        assert!(matches!(derive_setup(c(1.0, 0.0), &[z]), Err(Error::ZeroPump)));
    }

    #[test]
    fn symmetric_constants() {
        let s = symmetric_xy(1.0, 10.0);
        let sh2 = 1f64.sinh().powi(2);
        assert!((s.a_x - sh2).abs() < 1e-14 && (s.a_y - sh2).abs() < 1e-14);
        assert!((s.s_x - (-1.0 - 2.0 / sh2)).abs() < 1e-14);
        assert!((s.s_x + 2.4481).abs() < 1e-4);
        let n = envelope(&s, &OutcomeSet(vec![7, -3])).unwrap();
        assert!((n - 1.0 / (2.0 * sh2 * 100.0)).abs() < 1e-15);
    }

    #[test]
    fn outcome_point_is_linear_in_inverse_probe() {
        let s1 = symmetric_xy(1.0, 10.0);
        let s2 = symmetric_xy(1.0, 20.0);
        let o = OutcomeSet(vec![10, -4]);
        let z1 = outcome_to_point(&s1, &o);
        let z2 = outcome_to_point(&s2, &o);
        assert!((z1 - 2.0 * z2).norm() < 1e-15);
        assert_eq!(outcome_to_point(&s1, &OutcomeSet(vec![0, 0])), c(0.0, 0.0));
        // z̃ path: z = (μ/|ν|) z̃ / μ² · ... reduces to ỹ/|ν| in the symmetric case
        assert!((z1 - s1.outcome_sum(&o) / s1.nu.norm()).norm() < 1e-15);
    }

    #[test]
    fn vacuum_table_is_complete_and_centered() {
        let s = symmetric_xy(1.0, 10.0);
        let w = OutcomeWindow::for_state(&s, &StateModel::Vacuum);
        let t = count_distribution(&s, &StateModel::Vacuum, &w).unwrap();
        assert!((t.total() - 1.0).abs() < 1e-3);
        let m = t.channel_moments();
        assert!(m[0].0.abs() < 1e-9 && m[1].0.abs() < 1e-9);
        let peak = t.get(&OutcomeSet(vec![0, 0])).unwrap();
        assert!(t.probs.iter().all(|&p| p <= peak));
    }

    #[test]
    fn exact_route_matches_gaussian_at_strong_probe() {
        // scipy dblquad of the same integral at β = 10: 6.706572458580073e-4
        let o = OutcomeSet(vec![0, 0]);
        let e10 = exact_count_probability_coherent(&symmetric_xy(1.0, 10.0), c(0.0, 0.0), &o).unwrap();
        assert!((e10 / 6.706572458580073e-4 - 1.0).abs() < 1e-9);
        // the Gaussian route carries an O(1/β²) bias
        let mut last = f64::INFINITY;
        for beta in [10.0, 20.0, 40.0] {
            let s = symmetric_xy(1.0, beta);
            let e = exact_count_probability_coherent(&s, c(0.0, 0.0), &o).unwrap();
            let g = count_probability(&s, &StateModel::Vacuum, &o).unwrap();
            let rel = ((e - g) / e).abs();
            assert!(rel < 0.4 / (beta * beta) && rel < last, "β={beta}: {rel}");
            last = rel;
        }
    }

    #[test]
    fn marginal_route_sums_to_one() {
        let s = derive_setup(
            c(1.0, 0.0),
            &[ChannelSpec { pump: c(1.0, 0.0), probe: 10.0, quadrature: Quadrature::X }],
        )
        .unwrap();
        for st in [StateModel::Vacuum, StateModel::Coherent(c(1.0, 0.5)), StateModel::Fock(1)] {
            let total: f64 =
                (-150..=150).map(|d| marginal_count_probability(&s, &st, &OutcomeSet(vec![d])).unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-6, "{total}");
        }
        let xy = symmetric_xy(1.0, 10.0);
        assert!(matches!(
            marginal_count_probability(&xy, &StateModel::Vacuum, &OutcomeSet(vec![0, 0])),
            Err(Error::PartitionViolation)
        ));
    }
}
