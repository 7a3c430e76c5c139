//! Bayesian inference over state families from measurement records, assembly of
//! the reconstructed state and Monte-Carlo fidelity of the measurement schemes.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

use crate::eos_core::{count_probability, outcome_to_point, symmetric_xy, symmetric_xyxy, EosSetup, OutcomeSet};
use crate::error::{Error, Result};
use crate::phase_space::{GaussianMoments, NumericState, OrderingParams, Quadrature, StateModel};
use crate::post_measurement::{post_gaussian, prime_map, PostMap, PostState};

pub const DEFAULT_SEED: u64 = 0x05EE_DE05;
/// Coherent-family grid: nodes per axis over |Re α|, |Im α| ≤ COHERENT_HALF_WIDTH.
pub const COHERENT_NODES: usize = 81;
pub const COHERENT_HALF_WIDTH: f64 = 6.0;
/// Largest Fock cutoff `reconstruct` will try.
pub const RECONSTRUCT_N_CAP: usize = 200;
const TAIL_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum FamilyKind {
    /// λ = α_Ω on a square grid with uniform measure d²α.
    Coherent { half_width: f64, nodes_per_axis: usize },
    /// λ = n ∈ {0..n_max}.
    Fock { n_max: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterFamily {
    pub kind: FamilyKind,
    members: Vec<StateModel>,
}

impl ParameterFamily {
    pub fn coherent(half_width: f64, nodes_per_axis: usize) -> Self {
        let n = nodes_per_axis.max(2);
        let step = 2.0 * half_width / (n - 1) as f64;
        let members = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                StateModel::Coherent(C64::new(-half_width + i as f64 * step, -half_width + j as f64 * step))
            })
            .collect();
        Self { kind: FamilyKind::Coherent { half_width, nodes_per_axis: n }, members }
    }

    pub fn coherent_default() -> Self {
        Self::coherent(COHERENT_HALF_WIDTH, COHERENT_NODES)
    }

    pub fn fock(n_max: u32) -> Self {
        Self { kind: FamilyKind::Fock { n_max }, members: (0..=n_max).map(StateModel::Fock).collect() }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member(&self, j: usize) -> &StateModel {
        &self.members[j]
    }

    pub fn members(&self) -> &[StateModel] {
        &self.members
    }

    /// |⟨ψ|λ_j⟩|² for every node.
    pub fn overlaps(&self, psi: &StateModel) -> Result<Vec<f64>> {
        if !psi.is_pure() {
            return Err(Error::NonPureInitial);
        }
        let coherent = match psi {
            StateModel::Coherent(a) => Some(*a),
            StateModel::Vacuum => Some(C64::new(0.0, 0.0)),
            _ => None,
        };
        if let Some(a) = coherent {
            return Ok(self
                .members
                .iter()
                .map(|m| match m {
                    StateModel::Coherent(b) => (-(a - b).norm_sqr()).exp(),
                    StateModel::Fock(n) => {
                        let x = a.norm_sqr();
                        (-x + *n as f64 * x.ln() - crate::quad::ln_factorial(*n as u64)).exp()
                    }
                    _ => unreachable!("family members are coherent or Fock"),
                })
                .collect());
        }
        let n = match &self.kind {
            FamilyKind::Fock { n_max } => *n_max as usize,
            FamilyKind::Coherent { half_width, .. } => {
                // amplitudes of |α| ≤ √2·half_width are resolved to ~1e-12
                let r2 = 2.0 * half_width * half_width;
                (r2 + 12.0 * r2.sqrt() + 40.0).ceil() as usize
            }
        };
        let amps = psi_amplitudes(psi, n)?;
        Ok(self
            .members
            .iter()
            .map(|m| match m {
                StateModel::Fock(k) => amps.get(*k as usize).map_or(0.0, |c| c.norm_sqr()),
                StateModel::Coherent(b) => {
                    let c = crate::phase_space::fock::coherent_amplitudes(*b, amps.len());
                    amps.iter().zip(&c).map(|(p, q)| p.conj() * q).sum::<C64>().norm_sqr()
                }
                _ => unreachable!("family members are coherent or Fock"),
            })
            .collect())
    }
}

fn psi_amplitudes(psi: &StateModel, n_max: usize) -> Result<Vec<C64>> {
    if let Some(a) = psi.fock_amplitudes(n_max) {
        return Ok(a);
    }
    match psi {
        StateModel::Numeric(s) => {
            // dominant eigenvector of a pure numeric state
            let eig = s.rho().clone().symmetric_eigen();
            let k = eig.eigenvalues.imax();
            Ok(eig.eigenvectors.column(k).iter().copied().collect())
        }
        _ => Err(Error::UnsupportedFamily),
    }
}

/// ln ρ_λ(z; s) up to nothing: the exact log for coherent members, ln of the
/// closed-form distribution otherwise.
fn log_qpd(member: &StateModel, z: C64, ord: OrderingParams) -> Result<f64> {
    match member {
        StateModel::Coherent(a) => {
            let (vx, vy) = ((1.0 - ord.s_x) / 4.0, (1.0 - ord.s_y) / 4.0);
            let d = z - a;
            Ok(-(d.re * d.re) / (2.0 * vx) - (d.im * d.im) / (2.0 * vy) - (2.0 * PI * (vx * vy).sqrt()).ln())
        }
        other => Ok(other.qpd_eval(z, ord)?.max(0.0).ln()),
    }
}

/// Per-node log-likelihood of one record, up to a node-independent constant.
pub fn log_likelihoods(family: &ParameterFamily, setup: &EosSetup, outcomes: &OutcomeSet) -> Result<Vec<f64>> {
    if outcomes.0.len() != setup.len() {
        return Err(Error::OutcomeLength { expected: setup.len(), got: outcomes.0.len() });
    }
    if setup.a_x > 0.0 && setup.a_y > 0.0 {
        // p = N ρ_λ(z; s̃) with N independent of λ
        let z = outcome_to_point(setup, outcomes);
        let ord = setup.ordering();
        family.members.par_iter().map(|m| log_qpd(m, z, ord)).collect()
    } else {
        family.members.par_iter().map(|m| Ok(count_probability(setup, m, outcomes)?.ln())).collect()
    }
}

/// Log-likelihood of a second record taken on the post-measurement state of
/// the first: p₂ = N₂ E(z₂) ρ_λ(z₂′; s′) with E ∝ 1/p₁(λ).
pub fn log_likelihoods_consecutive(
    family: &ParameterFamily,
    first: (&EosSetup, &OutcomeSet),
    second: (&EosSetup, &OutcomeSet),
) -> Result<Vec<f64>> {
    let (s1, o1) = first;
    let (s2, o2) = second;
    if s1.a_x <= 0.0 || s1.a_y <= 0.0 || s2.a_x <= 0.0 || s2.a_y <= 0.0 {
        return Err(Error::UnsupportedConfiguration("consecutive updates need both quadrature sets".into()));
    }
    let map = PostMap::new(s1, o1, s2.ordering())?;
    let z1 = outcome_to_point(s1, o1);
    let z2p = prime_map(&map, outcome_to_point(s2, o2));
    let (ord1, ordp) = (s1.ordering(), map.prime_ordering());
    family.members.par_iter().map(|m| Ok(log_qpd(m, z2p, ordp)? - log_qpd(m, z1, ord1)?)).collect()
}

/// Posterior weights over a family with the records consumed so far.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrid {
    pub family: Arc<ParameterFamily>,
    pub weights: Vec<f64>,
    pub history: Vec<OutcomeSet>,
}

impl PosteriorGrid {
    pub fn uniform(family: Arc<ParameterFamily>) -> Self {
        let n = family.len();
        Self { family, weights: vec![1.0 / n as f64; n], history: Vec::new() }
    }

    fn combine(&self, loglik: &[f64], record: &[OutcomeSet]) -> Result<Self> {
        let logs: Vec<f64> = self
            .weights
            .iter()
            .zip(loglik)
            .map(|(&w, &l)| if w > 0.0 && !l.is_nan() { w.ln() + l } else { f64::NEG_INFINITY })
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(Error::ZeroEvidence);
        }
        let mut weights: Vec<f64> = logs.iter().map(|&l| (l - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let mut history = self.history.clone();
        history.extend_from_slice(record);
        Ok(Self { family: self.family.clone(), weights, history })
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Shannon entropy −Σ w ln w.
    pub fn entropy(&self) -> f64 {
        -self.weights.iter().filter(|&&w| w > 0.0).map(|w| w * w.ln()).sum::<f64>()
    }

    pub fn mode(&self) -> usize {
        self.weights.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0)
    }

    /// Σ_j w_j |⟨ψ|λ_j⟩|², equal to ⟨ψ|ρ_rec|ψ⟩ without a Fock cutoff.
    pub fn fidelity(&self, psi: &StateModel) -> Result<f64> {
        let ov = self.family.overlaps(psi)?;
        Ok(self.weights.iter().zip(&ov).map(|(w, o)| w * o).sum())
    }
}

pub fn bayes_update(posterior: &PosteriorGrid, setup: &EosSetup, outcomes: &OutcomeSet) -> Result<PosteriorGrid> {
    let ll = log_likelihoods(&posterior.family, setup, outcomes)?;
    posterior.combine(&ll, std::slice::from_ref(outcomes))
}

/// Update of a posterior that already consumed `first` with a record taken on
/// the post-measurement state.
pub fn bayes_update_consecutive(
    posterior: &PosteriorGrid,
    first: (&EosSetup, &OutcomeSet),
    second: (&EosSetup, &OutcomeSet),
) -> Result<PosteriorGrid> {
    let ll = log_likelihoods_consecutive(&posterior.family, first, second)?;
    posterior.combine(&ll, std::slice::from_ref(second.1))
}

/// ρ_rec = Σ_j w_j |λ_j⟩⟨λ_j| on the smallest Fock basis that keeps the weighted
/// tail below 1e-10, capped at RECONSTRUCT_N_CAP.
pub fn reconstruct(posterior: &PosteriorGrid) -> Result<StateModel> {
    let active: Vec<(usize, f64)> =
        posterior.weights.iter().copied().enumerate().filter(|&(_, w)| w > 1e-16).collect();
    let mean_n: f64 = active
        .iter()
        .map(|&(j, w)| {
            w * match posterior.family.member(j) {
                StateModel::Coherent(a) => a.norm_sqr(),
                StateModel::Fock(n) => *n as f64,
                _ => 0.0,
            }
        })
        .sum();
    let max_n = active
        .iter()
        .map(|&(j, _)| match posterior.family.member(j) {
            StateModel::Coherent(a) => a.norm_sqr(),
            StateModel::Fock(n) => *n as f64,
            _ => 0.0,
        })
        .fold(0.0, f64::max);
    let mut n_max = ((max_n + 8.0 * max_n.sqrt() + 12.0).ceil() as usize).max((mean_n + 12.0) as usize);
    n_max = n_max.min(RECONSTRUCT_N_CAP);
    let dim = n_max + 1;
    let mut tail = 0.0;
    let mut rho = DMatrix::<C64>::zeros(dim, dim);
    for &(j, w) in &active {
        let amps = posterior.family.member(j).fock_amplitudes(n_max).expect("family members are pure");
        tail += w * (1.0 - amps.iter().map(|a| a.norm_sqr()).sum::<f64>()).max(0.0);
        let v = nalgebra::DVector::from_vec(amps);
        rho += (&v * v.adjoint()) * C64::new(w, 0.0);
    }
    if tail > TAIL_LIMIT {
        return Err(Error::TruncationOverflow(tail));
    }
    let tr = rho.trace().re;
    rho /= C64::new(tr, 0.0);
    Ok(StateModel::numeric(NumericState::new(rho)?))
}

/// ⟨ψ|ρ_rec|ψ⟩ for a pure initial state.
pub fn fidelity_vs_initial(initial: &StateModel, rho_rec: &StateModel) -> Result<f64> {
    if !initial.is_pure() {
        return Err(Error::NonPureInitial);
    }
    let rec = match rho_rec {
        StateModel::Numeric(s) => (**s).clone(),
        other => other.to_fock(crate::phase_space::DEFAULT_N_MAX)?,
    };
    let amps = psi_amplitudes(initial, rec.n_max())?;
    Ok(rec.expectation_pure(&amps))
}

/// Closed-form single-stage average fidelity for coherent states, 1/(2 − s̃) = [2coth²ζ + 1]⁻¹.
pub fn analytic_avg_fidelity_single(zeta: f64) -> f64 {
    let c = 1.0 / zeta.tanh();
    1.0 / (2.0 * c * c + 1.0)
}

/// The same average in terms of the sampled ordering s̃ of a symmetric setup.
pub fn avg_fidelity_for_ordering(s_tilde: f64) -> f64 {
    1.0 / (2.0 - s_tilde)
}

/// Consecutive XY→XY average for coherent states with the exact two-stage
/// likelihood: 1/(2 − s′), s′ the post-map ordering of s̃. Tends to 1/3 from below.
pub fn analytic_avg_fidelity_consecutive(zeta: f64) -> f64 {
    let a = zeta.sinh().powi(2);
    let mu2 = zeta.cosh().powi(2);
    1.0 / (3.0 + 2.0 / (a * (mu2 + 1.0)))
}

/// Single-mode lattice of one quadrature set: channels with a common |α̃| and |β|
/// whose count sum T maps to the phase-space coordinate T·step.
#[derive(Debug, Clone, PartialEq)]
struct Group {
    channels: Vec<usize>,
    beta2: f64,
    step: f64,
}

impl Group {
    fn new(setup: &EosSetup, quad: Quadrature) -> Result<Self> {
        let channels: Vec<usize> = (0..setup.len()).filter(|&i| setup.channels[i].quadrature == quad).collect();
        let first = *channels.first().ok_or(Error::UnsupportedConfiguration("sampler needs X and Y channels".into()))?;
        let (p0, b0) = (setup.pumps[first].norm(), setup.channels[first].probe.norm());
        for &i in &channels {
            let (p, b) = (setup.pumps[i].norm(), setup.channels[i].probe.norm());
            if (p - p0).abs() > 1e-12 * p0 || (b - b0).abs() > 1e-12 * b0 {
                return Err(Error::UnsupportedConfiguration(
                    "sampler needs equal pump and probe strengths within a quadrature set".into(),
                ));
            }
        }
        let a = match quad {
            Quadrature::X => setup.a_x,
            Quadrature::Y => setup.a_y,
        };
        Ok(Self { channels, beta2: b0 * b0, step: setup.nu.norm() * p0 / b0 / a })
    }

    /// Splits a sum T over the channels; each step draws from the conditional
    /// discrete normal law e^{−k²/(2β²) − (T−k)²/(2(m−1)β²)}.
    fn split<R: Rng + ?Sized>(&self, total: i64, rng: &mut R, out: &mut [i64]) {
        let mut rest = total;
        let m = self.channels.len();
        for (k, &ch) in self.channels.iter().enumerate() {
            let left = m - k;
            if left == 1 {
                out[ch] = rest;
                break;
            }
            let mean = rest as f64 / left as f64;
            let var = self.beta2 * (left - 1) as f64 / left as f64;
            let half = (10.0 * var.sqrt()).ceil() as i64 + 1;
            let lo = mean.floor() as i64 - half;
            let w: Vec<f64> = (0..=2 * half + 1)
                .map(|d| {
                    let x = (lo + d) as f64;
                    (-(x * x) / (2.0 * self.beta2) - (rest as f64 - x).powi(2) / (2.0 * (left - 1) as f64 * self.beta2))
                        .exp()
                })
                .collect();
            let pick = lo + draw(&w, rng) as i64;
            out[ch] = pick;
            rest -= pick;
        }
    }
}

fn draw<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

fn cdf(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn invert(cdf: &[f64], rng: &mut impl Rng) -> usize {
    let u = rng.random::<f64>() * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c < u).min(cdf.len() - 1)
}

/// Outcome sampler for setups whose X and Y channels each share one pump and
/// probe strength. In the normal-count model p({Δn}) depends on the record
/// through the group sums only, and the law of (T_X, T_Y) is ρ(z; s̃) on the
/// lattice z = T_X step_X + i T_Y step_Y up to a constant.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSampler {
    setup: EosSetup,
    gx: Group,
    gy: Group,
}

enum TableKind {
    Separable { cx: Vec<f64>, cy: Vec<f64> },
    Full { cdf: Vec<f64> },
}

/// Inverse-CDF table of one stage distribution.
pub struct StageTable<'a> {
    sampler: &'a StageSampler,
    t0: (i64, i64),
    ny: usize,
    kind: TableKind,
}

/// Window half-width in units of the sampled standard deviation.
const WINDOW_SIGMAS: f64 = 9.0;

impl StageSampler {
    pub fn new(setup: &EosSetup) -> Result<Self> {
        Ok(Self { setup: setup.clone(), gx: Group::new(setup, Quadrature::X)?, gy: Group::new(setup, Quadrature::Y)? })
    }

    pub fn setup(&self) -> &EosSetup {
        &self.setup
    }

    fn ranges(&self, mean: C64, var: (f64, f64)) -> ((i64, usize), (i64, usize)) {
        let ord = self.setup.ordering();
        let r = |m: f64, v: f64, s: f64, step: f64| {
            let sd = (v - s / 4.0).max(1e-6).sqrt();
            let lo = ((m - WINDOW_SIGMAS * sd) / step).floor() as i64;
            let hi = ((m + WINDOW_SIGMAS * sd) / step).ceil() as i64;
            (lo, (hi - lo + 1) as usize)
        };
        (r(mean.re, var.0, ord.s_x, self.gx.step), r(mean.im, var.1, ord.s_y, self.gy.step))
    }

    /// Table of ρ(z; s̃) for a state with the given mean and quadrature variances;
    /// `density` evaluates the sampled distribution.
    pub fn table_with<F>(&self, mean: C64, var: (f64, f64), density: F) -> Result<StageTable<'_>>
    where
        F: Fn(C64) -> Result<f64> + Sync,
    {
        let ((x0, nx), (y0, ny)) = self.ranges(mean, var);
        let (sx, sy) = (self.gx.step, self.gy.step);
        let cells: Result<Vec<f64>> = (0..nx * ny)
            .into_par_iter()
            .map(|k| {
                let z = C64::new((x0 + (k / ny) as i64) as f64 * sx, (y0 + (k % ny) as i64) as f64 * sy);
                Ok(density(z)?.max(0.0))
            })
            .collect();
        let cells = cells?;
        let table = StageTable { sampler: self, t0: (x0, y0), ny, kind: TableKind::Full { cdf: cdf(&cells) } };
        table.check_edges(&cells, nx, ny)?;
        Ok(table)
    }

    /// Stage table of a state; Gaussian states with no XY correlation use a product table.
    pub fn table(&self, state: &StateModel) -> Result<StageTable<'_>> {
        let ord = self.setup.ordering();
        if let Some(g) = state.gaussian_moments() {
            if g.vxy.abs() < 1e-14 {
                return self.separable(&g);
            }
        }
        let m = state.moments();
        self.table_with(C64::new(m.mean_x, m.mean_y), (m.var_x, m.var_y), |z| state.qpd_eval(z, ord))
    }

    fn separable(&self, g: &GaussianMoments) -> Result<StageTable<'_>> {
        let ord = self.setup.ordering();
        let ((x0, nx), (y0, ny)) = self.ranges(g.mean, (g.vxx, g.vyy));
        let axis = |t0: i64, n: usize, step: f64, m: f64, v: f64| -> Vec<f64> {
            (0..n).map(|k| (-((t0 + k as i64) as f64 * step - m).powi(2) / (2.0 * v)).exp()).collect()
        };
        let cx = axis(x0, nx, self.gx.step, g.mean.re, g.vxx - ord.s_x / 4.0);
        let cy = axis(y0, ny, self.gy.step, g.mean.im, g.vyy - ord.s_y / 4.0);
        Ok(StageTable { sampler: self, t0: (x0, y0), ny, kind: TableKind::Separable { cx: cdf(&cx), cy: cdf(&cy) } })
    }
}

impl StageTable<'_> {
    fn check_edges(&self, cells: &[f64], nx: usize, ny: usize) -> Result<()> {
        let total: f64 = cells.iter().sum();
        let edge: f64 = (0..nx * ny)
            .filter(|k| {
                let (i, j) = (k / ny, k % ny);
                i == 0 || j == 0 || i + 1 == nx || j + 1 == ny
            })
            .map(|k| cells[k])
            .sum();
        if !(total > 0.0) {
            return Err(Error::VanishingOutcomeProbability(total));
        }
        if edge / total > 1e-4 {
            return Err(Error::WindowTooSmall { boundary: edge / total, limit: 1e-4 });
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> OutcomeSet {
        let (ix, iy) = match &self.kind {
            TableKind::Separable { cx, cy } => (invert(cx, rng), invert(cy, rng)),
            TableKind::Full { cdf } => {
                let k = invert(cdf, rng);
                (k / self.ny, k % self.ny)
            }
        };
        let s = self.sampler;
        let mut out = vec![0i64; s.setup.len()];
        s.gx.split(self.t0.0 + ix as i64, rng, &mut out);
        s.gy.split(self.t0.1 + iy as i64, rng, &mut out);
        OutcomeSet(out)
    }
}

/// Measurement scheme of a Monte-Carlo fidelity run.
#[derive(Debug, Clone, PartialEq)]
pub enum Scheme {
    /// One record from a single setup (XY or XYXY).
    Single(EosSetup),
    /// A second record on the post-measurement state of the first (XY→XY).
    Consecutive(EosSetup, EosSetup),
}

impl Scheme {
    pub fn xy(zeta: f64, beta: f64) -> Self {
        Scheme::Single(symmetric_xy(zeta, beta))
    }

    pub fn xyxy(zeta: f64, beta: f64) -> Self {
        Scheme::Single(symmetric_xyxy(zeta, beta))
    }

    pub fn xy_then_xy(zeta: f64, beta: f64) -> Self {
        Scheme::Consecutive(symmetric_xy(zeta, beta), symmetric_xy(zeta, beta))
    }

    pub fn label(&self) -> &'static str {
        match self {
            Scheme::Single(s) if s.len() == 2 => "XY",
            Scheme::Single(_) => "XYXY",
            Scheme::Consecutive(..) => "XY->XY",
        }
    }
}

/// Mean and standard error of a Monte-Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
}

impl McEstimate {
    pub fn from_samples(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Self { mean, stderr: (var / n).sqrt(), n_samples: v.len() }
    }
}

/// Independent stream for trial `k` of a seeded run.
pub fn trial_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// Second-stage distribution ρ′(z; s̃₂) of the true post-measurement state.
fn second_stage<'a>(
    sampler: &'a StageSampler,
    first: &EosSetup,
    o1: &OutcomeSet,
    initial: &StateModel,
) -> Result<StageTable<'a>> {
    if let Some(g) = initial.gaussian_moments() {
        return sampler.table(&StateModel::Gaussian(post_gaussian(first, o1, &g)));
    }
    let map = PostMap::new(first, o1, sampler.setup().ordering())?;
    let post = PostState::new(&map, initial)?;
    // moments of the Gaussian post-state with the same input moments size the window
    let m = initial.moments();
    let proxy = GaussianMoments { mean: C64::new(m.mean_x, m.mean_y), vxx: m.var_x, vxy: m.cov_xy, vyy: m.var_y };
    let g = post_gaussian(first, o1, &proxy);
    sampler.table_with(g.mean, (g.vxx.max(0.25) * 4.0, g.vyy.max(0.25) * 4.0), |z| post.eval(z))
}

/// Monte-Carlo average of ⟨ψ|ρ_rec|ψ⟩ over records drawn from the stage
/// distributions, starting from a uniform prior over `family`.
pub fn avg_fidelity_mc(
    initial: &StateModel,
    scheme: &Scheme,
    family: &Arc<ParameterFamily>,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_samples == 0 {
        return Err(Error::InvalidState("n_samples must be at least 1".into()));
    }
    let overlaps = family.overlaps(initial)?;
    let prior = PosteriorGrid::uniform(family.clone());
    let fid = |p: &PosteriorGrid| p.weights.iter().zip(&overlaps).map(|(w, o)| w * o).sum::<f64>();
    let samples: Result<Vec<f64>> = match scheme {
        Scheme::Single(setup) => {
            let sampler = StageSampler::new(setup)?;
            let table = sampler.table(initial)?;
            (0..n_samples)
                .into_par_iter()
                .map(|k| {
                    let mut rng = trial_rng(seed, k as u64);
                    let o = table.sample(&mut rng);
                    Ok(fid(&bayes_update(&prior, setup, &o)?))
                })
                .collect()
        }
        Scheme::Consecutive(s1, s2) => {
            let sampler1 = StageSampler::new(s1)?;
            let sampler2 = StageSampler::new(s2)?;
            let table = sampler1.table(initial)?;
            (0..n_samples)
                .into_par_iter()
                .map(|k| {
                    let mut rng = trial_rng(seed, k as u64);
                    let o1 = table.sample(&mut rng);
                    let o2 = second_stage(&sampler2, s1, &o1, initial)?.sample(&mut rng);
                    let p1 = bayes_update(&prior, s1, &o1)?;
                    Ok(fid(&bayes_update_consecutive(&p1, (s1, &o1), (s2, &o2))?))
                })
                .collect()
        }
    };
    Ok(McEstimate::from_samples(&samples?))
}

/// Monte-Carlo average of ⟨ψ|ρ′|ψ⟩ between a pure input and its post-measurement state.
pub fn avg_post_fidelity_mc(initial: &StateModel, setup: &EosSetup, n_samples: usize, seed: u64) -> Result<McEstimate> {
    if !initial.is_pure() {
        return Err(Error::NonPureInitial);
    }
    let sampler = StageSampler::new(setup)?;
    let table = sampler.table(initial)?;
    let samples: Result<Vec<f64>> = (0..n_samples.max(1))
        .into_par_iter()
        .map(|k| {
            let mut rng = trial_rng(seed, k as u64);
            let o = table.sample(&mut rng);
            if let Some(g) = initial.gaussian_moments() {
                return Ok(gaussian_overlap(&g, &post_gaussian(setup, &o, &g)));
            }
            let map = PostMap::wigner(setup, &o)?;
            let post = PostState::new(&map, initial)?;
            let win = crate::phase_space::Window::square(initial.extent() + 2.0, 129);
            let grid = post.grid(&win)?;
            let w0 = crate::phase_space::qpd_grid(initial, &win, OrderingParams::wigner())?;
            crate::phase_space::wigner_fidelity(&w0, &grid)
        })
        .collect();
    Ok(McEstimate::from_samples(&samples?))
}

/// Tr(ρσ) = π ∫ W_ρ W_σ for two Gaussian states.
pub fn gaussian_overlap(a: &GaussianMoments, b: &GaussianMoments) -> f64 {
    let (sxx, sxy, syy) = (a.vxx + b.vxx, a.vxy + b.vxy, a.vyy + b.vyy);
    let det = sxx * syy - sxy * sxy;
    let d = a.mean - b.mean;
    let q = (syy * d.re * d.re - 2.0 * sxy * d.re * d.im + sxx * d.im * d.im) / det;
    (-0.5 * q).exp() / (2.0 * det.sqrt())
}

/// Eight-port (Husimi-sampling) benchmark of the same Bayesian pipeline:
/// 1/3 for coherent inputs, Monte Carlo over z ~ Q_ψ for Fock inputs.
pub fn eight_port_reference(
    initial: &StateModel,
    family: &Arc<ParameterFamily>,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    match initial {
        StateModel::Coherent(_) | StateModel::Vacuum if matches!(family.kind, FamilyKind::Coherent { .. }) => {
            Ok(McEstimate { mean: avg_fidelity_for_ordering(-1.0), stderr: 0.0, n_samples: 0 })
        }
        StateModel::Fock(n) => {
            let overlaps = family.overlaps(initial)?;
            let prior = PosteriorGrid::uniform(family.clone());
            let gamma = Gamma::new(*n as f64 + 1.0, 1.0).expect("shape is positive");
            let husimi = OrderingParams::husimi();
            let samples: Result<Vec<f64>> = (0..n_samples.max(1))
                .into_par_iter()
                .map(|k| {
                    let mut rng = trial_rng(seed, k as u64);
                    // Q of |n⟩: |z|² ~ Gamma(n+1, 1), uniform phase
                    let r = gamma.sample(&mut rng).sqrt();
                    let z = C64::from_polar(r, rng.random::<f64>() * 2.0 * PI);
                    let ll: Result<Vec<f64>> = family.members().iter().map(|m| log_qpd(m, z, husimi)).collect();
                    let post = prior.combine(&ll?, &[])?;
                    Ok(post.weights.iter().zip(&overlaps).map(|(w, o)| w * o).sum())
                })
                .collect();
            Ok(McEstimate::from_samples(&samples?))
        }
        _ => Err(Error::UnsupportedFamily),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn small_coherent() -> Arc<ParameterFamily> {
        Arc::new(ParameterFamily::coherent(6.0, 41))
    }

    #[test]
    fn flat_prior_posterior_is_sampled_distribution() {
        let fam = small_coherent();
        let s = symmetric_xy(1.0, 10.0);
        let o = OutcomeSet(vec![50, -20]);
        let post = bayes_update(&PosteriorGrid::uniform(fam.clone()), &s, &o).unwrap();
        assert!((post.total() - 1.0).abs() < 1e-10);
        let z = outcome_to_point(&s, &o);
        let raw: Vec<f64> = fam.members().iter().map(|m| count_probability(&s, m, &o).unwrap()).collect();
        let t: f64 = raw.iter().sum();
        for (w, r) in post.weights.iter().zip(&raw) {
            assert!((w - r / t).abs() < 1e-12);
        }
        // mode sits on the node nearest z
        let StateModel::Coherent(a) = fam.member(post.mode()) else { panic!() };
        assert!((a - z).re.abs() <= 0.15 + 1e-12 && (a - z).im.abs() <= 0.15 + 1e-12);
    }

    #[test]
    fn updates_commute() {
        let p0 = PosteriorGrid::uniform(small_coherent());
        let s = symmetric_xy(0.7, 10.0);
        let (o1, o2) = (OutcomeSet(vec![30, 12]), OutcomeSet(vec![-5, 44]));
        let a = bayes_update(&bayes_update(&p0, &s, &o1).unwrap(), &s, &o2).unwrap();
        let b = bayes_update(&bayes_update(&p0, &s, &o2).unwrap(), &s, &o1).unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_evidence_is_reported() {
        let fam = Arc::new(ParameterFamily::fock(3));
        let mut p = PosteriorGrid::uniform(fam);
        p.weights = vec![0.0; 4];
        assert!(matches!(bayes_update(&p, &symmetric_xy(1.0, 10.0), &OutcomeSet(vec![0, 0])), Err(Error::ZeroEvidence)));
    }

    #[test]
    fn reconstruct_mixtures() {
        let fam = Arc::new(ParameterFamily::fock(3));
        let mut p = PosteriorGrid::uniform(fam.clone());
        p.weights = vec![0.5, 0.5, 0.0, 0.0];
        let StateModel::Numeric(r) = reconstruct(&p).unwrap() else { panic!() };
        assert!((r.rho()[(0, 0)].re - 0.5).abs() < 1e-14 && (r.rho()[(1, 1)].re - 0.5).abs() < 1e-14);
        assert!((r.purity() - 0.5).abs() < 1e-14);

        let cf = Arc::new(ParameterFamily::coherent(6.0, 5));
        let mut q = PosteriorGrid::uniform(cf.clone());
        let j = cf.members().iter().position(|m| *m == StateModel::Coherent(c(3.0, 0.0))).unwrap();
        q.weights = vec![0.0; cf.len()];
        q.weights[j] = 1.0;
        let rec = reconstruct(&q).unwrap();
        assert!((fidelity_vs_initial(&StateModel::Coherent(c(3.0, 0.0)), &rec).unwrap() - 1.0).abs() < 1e-10);
        assert!(fidelity_vs_initial(&StateModel::Fock(0), &reconstruct(&{
            let mut f = PosteriorGrid::uniform(fam);
            f.weights = vec![0.0, 1.0, 0.0, 0.0];
            f
        }).unwrap()).unwrap().abs() < 1e-15);
    }

    #[test]
    fn modal_outcome_fidelity_matches_closed_form() {
        // wide grid so that edge truncation stays below the tolerance
        let fam = Arc::new(ParameterFamily::coherent(9.0, 91));
        let s = symmetric_xy(1.0, 10.0);
        let alpha = c(3.0, 0.0);
        // modal record: Δn_Q = z_Q A/(|ν| |α̃|/|β|)
        let w = s.pumps[0].norm() / s.channels[0].probe.norm();
        let dn = (alpha.re * s.a_x / (s.nu.norm() * w)).round() as i64;
        let o = OutcomeSet(vec![dn, 0]);
        let post = bayes_update(&PosteriorGrid::uniform(fam), &s, &o).unwrap();
        let z = outcome_to_point(&s, &o);
        let v = (1.0 - s.s_x) / 4.0;
        let want = (-(z - alpha).norm_sqr() / (1.0 + 2.0 * v)).exp() / (1.0 + 2.0 * v);
        let quick = post.fidelity(&StateModel::Coherent(alpha)).unwrap();
        assert!((quick - want).abs() < 1e-6, "{quick} vs {want}");
        let rec = reconstruct(&post).unwrap();
        assert!(!rec.is_pure());
        let full = fidelity_vs_initial(&StateModel::Coherent(alpha), &rec).unwrap();
        assert!((full - quick).abs() < 1e-8, "{full} vs {quick}");
    }

    #[test]
    fn fidelity_rejects_mixed_initial() {
        let g = GaussianMoments { mean: c(0.0, 0.0), vxx: 0.5, vxy: 0.0, vyy: 0.5 };
        let rec = StateModel::Vacuum;
        assert!(matches!(fidelity_vs_initial(&StateModel::Gaussian(g), &rec), Err(Error::NonPureInitial)));
    }

    #[test]
    fn analytic_single_limits() {
        assert!((analytic_avg_fidelity_single(1.0) - 0.224_8).abs() < 1e-4);
        assert!((analytic_avg_fidelity_single(30.0) - 1.0 / 3.0).abs() < 1e-12);
        assert!(analytic_avg_fidelity_single(1e-4) < 1e-7);
        let s = symmetric_xy(1.7, 10.0);
        assert!((avg_fidelity_for_ordering(s.s_x) - analytic_avg_fidelity_single(1.7)).abs() < 1e-12);
        let mut prev = 0.0;
        for k in 1..60 {
            let f = analytic_avg_fidelity_single(k as f64 * 0.1);
            assert!(f > prev);
            prev = f;
        }
    }

    #[test]
    fn consecutive_closed_form_is_prime_ordering() {
        for z in [0.5, 1.0, 2.5] {
            let s = symmetric_xy(z, 10.0);
            let (sp, _) = crate::post_measurement::prime_params(&s, s.s_x, s.s_y).unwrap();
            assert!((analytic_avg_fidelity_consecutive(z) - avg_fidelity_for_ordering(sp)).abs() < 1e-12);
            assert!(analytic_avg_fidelity_consecutive(z) > analytic_avg_fidelity_single(z));
            assert!(analytic_avg_fidelity_consecutive(z) < 1.0 / 3.0);
        }
    }

    #[test]
    fn sampler_matches_count_table() {
        // grouped sampler on XYXY against the marginal of the full record law
        let s = symmetric_xyxy(0.5, 5.0);
        let sampler = StageSampler::new(&s).unwrap();
        let st = StateModel::Coherent(c(0.5, -0.3));
        let table = sampler.table(&st).unwrap();
        let mut rng = trial_rng(1, 0);
        let n = 20000;
        let (mut sx, mut sy) = (0.0, 0.0);
        for _ in 0..n {
            let o = table.sample(&mut rng);
            let y = s.outcome_sum(&o);
            sx += y.re;
            sy += y.im;
        }
        let z = c(sx / n as f64, sy / n as f64) * (s.nu.norm() / s.a_x);
        assert!((z - c(0.5, -0.3)).norm() < 0.03, "{z}");
    }

    #[test]
    fn eight_port_fock_is_zeta_free() {
        let fam = Arc::new(ParameterFamily::fock(8));
        let e = eight_port_reference(&StateModel::Fock(1), &fam, 2000, DEFAULT_SEED).unwrap();
        assert!(e.mean > 0.2 && e.mean < 0.6, "{e:?}");
        let coh = eight_port_reference(&StateModel::Coherent(c(3.0, 0.0)), &small_coherent(), 1, 0).unwrap();
        assert!((coh.mean - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            eight_port_reference(&StateModel::Cat { alpha: c(1.0, 0.0), even: true }, &fam, 10, 0),
            Err(Error::UnsupportedFamily)
        ));
    }
}
