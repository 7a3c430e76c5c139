//! Single-mode states, (s_X, s_Y)-ordered quasiprobability distributions,
//! quadrature marginals and Wigner overlaps.
//!
//! Convention: X̂ = (â+â†)/2, Ŷ = (â−â†)/(2i), vacuum variance 1/4, z = x + iy.

pub mod fock;
pub mod gaussian;

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quad::gauss_hermite;
pub use gaussian::GaussianMoments;

/// Default Fock truncation for numeric copies.
pub const DEFAULT_N_MAX: usize = 40;
/// Default grid side (2^8 + 1 points).
pub const DEFAULT_GRID: usize = 257;
const GH_NODES: usize = 96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quadrature {
    X,
    Y,
}

/// Two-axis ordering; s_X smooths along Re z, s_Y along Im z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderingParams {
    pub s_x: f64,
    pub s_y: f64,
}

impl OrderingParams {
    pub fn new(s_x: f64, s_y: f64) -> Self {
        Self { s_x, s_y }
    }

    pub fn symmetric(s: f64) -> Self {
        Self { s_x: s, s_y: s }
    }

    pub fn wigner() -> Self {
        Self::symmetric(0.0)
    }

    pub fn husimi() -> Self {
        Self::symmetric(-1.0)
    }

    pub fn check(&self) -> Result<()> {
        if self.s_x < 1.0 && self.s_y < 1.0 && self.s_x.is_finite() && self.s_y.is_finite() {
            Ok(())
        } else {
            Err(Error::OrderingOutOfRange { s_x: self.s_x, s_y: self.s_y })
        }
    }
}

/// Truncated density matrix on |0⟩..|n_max⟩.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericState {
    rho: DMatrix<C64>,
}

impl NumericState {
    pub fn new(rho: DMatrix<C64>) -> Result<Self> {
        let n = rho.nrows();
        if n == 0 || rho.ncols() != n {
            return Err(Error::InvalidState("density matrix must be square and non-empty".into()));
        }
        let herm = (&rho - rho.adjoint()).iter().map(|c| c.norm()).fold(0.0, f64::max);
        if herm > 1e-12 {
            return Err(Error::InvalidState(format!("non-Hermitian by {herm:e}")));
        }
        let tr = rho.trace().re;
        if (tr - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidState(format!("trace {tr}")));
        }
        let min_eig = rho.clone().symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 {
            return Err(Error::InvalidState(format!("eigenvalue {min_eig:e}")));
        }
        Ok(Self { rho })
    }

    /// Pure state from (not necessarily normalized) amplitudes.
    pub fn pure(amps: &[C64]) -> Result<Self> {
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidState("zero amplitude vector".into()));
        }
        let v = DVector::from_iterator(amps.len(), amps.iter().map(|a| a / norm));
        Self::new(&v * v.adjoint())
    }

    /// Hermitizes, clips eigenvalues below zero and renormalizes; for data
    /// produced by quadrature where round-off breaks the invariants slightly.
    pub fn project(rho: DMatrix<C64>) -> Result<Self> {
        let h = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
        let eig = h.symmetric_eigen();
        let vals: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
        let total: f64 = vals.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidState("no positive spectrum".into()));
        }
        let d = DMatrix::from_diagonal(&DVector::from_iterator(vals.len(), vals.iter().map(|&l| C64::new(l / total, 0.0))));
        let u = eig.eigenvectors;
        let mut out = &u * d * u.adjoint();
        let herm = (&out + out.adjoint()) * C64::new(0.5, 0.0);
        out = herm;
        Self::new(out)
    }

    pub fn rho(&self) -> &DMatrix<C64> {
        &self.rho
    }

    pub fn n_max(&self) -> usize {
        self.rho.nrows() - 1
    }

    pub fn purity(&self) -> f64 {
        (&self.rho * &self.rho).trace().re
    }

    /// Population of the top two levels.
    pub fn tail_mass(&self) -> f64 {
        let n = self.rho.nrows();
        (n.saturating_sub(2)..n).map(|k| self.rho[(k, k)].re).sum()
    }

    pub fn mean_photon_number(&self) -> f64 {
        (0..self.rho.nrows()).map(|k| k as f64 * self.rho[(k, k)].re).sum()
    }

    /// ⟨ψ|ρ|ψ⟩ for amplitudes on the same basis (shorter vectors are zero-padded).
    pub fn expectation_pure(&self, amps: &[C64]) -> f64 {
        let n = self.rho.nrows().min(amps.len());
        let mut acc = C64::new(0.0, 0.0);
        for m in 0..n {
            for k in 0..n {
                acc += amps[m].conj() * self.rho[(m, k)] * amps[k];
            }
        }
        acc.re
    }

    /// Projects a Wigner grid onto |m⟩⟨n|: ρ_mn = π ∫ W(z) conj(W_{|m⟩⟨n|}(z)) d²z.
    pub fn from_wigner_grid(grid: &QpdGrid, n_max: usize) -> Result<Self> {
        if grid.ordering != OrderingParams::wigner() {
            return Err(Error::GridMismatch);
        }
        let dim = n_max + 1;
        let area = grid.dx * grid.dy;
        let rows: Vec<DMatrix<C64>> = (0..grid.ny)
            .into_par_iter()
            .map(|iy| {
                let mut acc = DMatrix::<C64>::zeros(dim, dim);
                for ix in 0..grid.nx {
                    let w = grid.values[iy * grid.nx + ix];
                    if w == 0.0 {
                        continue;
                    }
                    let z = grid.point(ix, iy);
                    for m in 0..dim {
                        for n in 0..=m {
                            acc[(m, n)] += fock::dyad_iso(m, n, z, 0.0).conj() * w;
                        }
                    }
                }
                acc
            })
            .collect();
        let mut rho = DMatrix::<C64>::zeros(dim, dim);
        for r in rows {
            rho += r;
        }
        for m in 0..dim {
            for n in 0..m {
                rho[(n, m)] = rho[(m, n)].conj();
            }
        }
        rho *= C64::new(PI * area, 0.0);
        Self::project(rho)
    }
}

/// First and second quadrature moments (symmetrized covariance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureMoments {
    pub mean_x: f64,
    pub mean_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub cov_xy: f64,
}

/// The single-mode input state.
#[derive(Debug, Clone, PartialEq)]
pub enum StateModel {
    Vacuum,
    Coherent(C64),
    Fock(u32),
    /// N(|α⟩ + σ|−α⟩), σ = +1 for `even`.
    Cat { alpha: C64, even: bool },
    /// S(re^{iθ})|0⟩.
    Squeezed { r: f64, phase: f64 },
    /// Any Gaussian state given by its Wigner mean and covariance.
    Gaussian(GaussianMoments),
    Numeric(Arc<NumericState>),
}

impl StateModel {
    pub fn numeric(state: NumericState) -> Self {
        StateModel::Numeric(Arc::new(state))
    }

    pub fn gaussian(m: GaussianMoments) -> Result<Self> {
        // uncertainty relation det V ≥ 1/16
        if !(m.vxx > 0.0 && m.vyy > 0.0) || m.det() < 1.0 / 16.0 - 1e-12 {
            return Err(Error::InvalidState("Gaussian covariance violates the uncertainty relation".into()));
        }
        Ok(StateModel::Gaussian(m))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StateModel::Cat { alpha, .. } if alpha.norm() == 0.0 => {
                Err(Error::InvalidState("cat amplitude must be nonzero".into()))
            }
            StateModel::Squeezed { r, phase } if !(r.is_finite() && phase.is_finite()) => {
                Err(Error::InvalidState("non-finite squeezing".into()))
            }
            _ => Ok(()),
        }
    }

    /// Cat normalization [2(1 ± e^{−2|α|²})]^{−1/2}.
    pub fn cat_norm(alpha: C64, even: bool) -> f64 {
        let e = (-2.0 * alpha.norm_sqr()).exp();
        let sign = if even { 1.0 } else { -1.0 };
        1.0 / (2.0 * (1.0 + sign * e)).sqrt()
    }

    fn cat_terms(alpha: C64, even: bool) -> [(C64, C64, f64); 4] {
        let n2 = Self::cat_norm(alpha, even).powi(2);
        let sg = if even { 1.0 } else { -1.0 };
        [(alpha, alpha, n2), (-alpha, -alpha, n2), (alpha, -alpha, sg * n2), (-alpha, alpha, sg * n2)]
    }

    /// Wigner mean and covariance for the Gaussian families.
    pub fn gaussian_moments(&self) -> Option<GaussianMoments> {
        match self {
            StateModel::Vacuum => Some(GaussianMoments::coherent(C64::new(0.0, 0.0))),
            StateModel::Coherent(a) => Some(GaussianMoments::coherent(*a)),
            StateModel::Squeezed { r, phase } => Some(GaussianMoments::squeezed(*r, *phase)),
            StateModel::Gaussian(m) => Some(*m),
            _ => None,
        }
    }

    /// Half-width of a window that holds the Wigner function to < 1e-8 boundary mass.
    pub fn extent(&self) -> f64 {
        match self {
            StateModel::Fock(n) => 4.0 + (*n as f64).sqrt(),
            StateModel::Cat { alpha, .. } => 4.0 + alpha.norm(),
            StateModel::Numeric(s) => 4.0 + (s.n_max() as f64).sqrt(),
            other => {
                let g = other.gaussian_moments().expect("gaussian family");
                let tr = g.vxx + g.vyy;
                let lmax = 0.5 * tr + (0.25 * (g.vxx - g.vyy).powi(2) + g.vxy * g.vxy).sqrt();
                g.mean.norm() + 8.0 * lmax.sqrt()
            }
        }
        .max(4.0)
    }

    /// χ(γ; s_X, s_Y) = χ(γ; 0) exp(½ s_Y Re²γ + ½ s_X Im²γ).
    pub fn char_function(&self, gamma: C64, ord: OrderingParams) -> C64 {
        let base = match self {
            StateModel::Fock(n) => {
                let x = gamma.norm_sqr();
                let mut l = (1.0, 1.0 - x);
                if *n == 0 {
                    l.1 = 1.0;
                } else {
                    for j in 1..*n {
                        let jf = j as f64;
                        let next = ((2.0 * jf + 1.0 - x) * l.1 - jf * l.0) / (jf + 1.0);
                        l = (l.1, next);
                    }
                }
                C64::new((-0.5 * x).exp() * l.1, 0.0)
            }
            StateModel::Cat { alpha, even } => Self::cat_terms(*alpha, *even)
                .iter()
                .map(|&(b1, b2, c)| gaussian::dyad_char(b1, b2, gamma) * c)
                .sum(),
            StateModel::Numeric(s) => fock::char_trace(s.rho(), gamma),
            other => other.gaussian_moments().expect("gaussian family").char_symmetric(gamma),
        };
        base * (0.5 * ord.s_y * gamma.re * gamma.re + 0.5 * ord.s_x * gamma.im * gamma.im).exp()
    }

    /// ρ(z; s_X, s_Y) for s_X, s_Y < 1.
    pub fn qpd_eval(&self, z: C64, ord: OrderingParams) -> Result<f64> {
        ord.check()?;
        match self {
            StateModel::Cat { alpha, even } => {
                let v: C64 = Self::cat_terms(*alpha, *even)
                    .iter()
                    .map(|&(b1, b2, c)| gaussian::dyad_qpd(b1, b2, z, ord) * c)
                    .sum();
                Ok(v.re)
            }
            StateModel::Fock(n) => {
                let d = *n as usize + 1;
                let mut rho = DMatrix::<C64>::zeros(d, d);
                rho[(d - 1, d - 1)] = C64::new(1.0, 0.0);
                Ok(finite_qpd(&rho, z, ord))
            }
            StateModel::Numeric(s) => Ok(finite_qpd(s.rho(), z, ord)),
            other => other
                .gaussian_moments()
                .expect("gaussian family")
                .qpd(z, ord)
                .ok_or(Error::OrderingOutOfRange { s_x: ord.s_x, s_y: ord.s_y }),
        }
    }

    /// ⟨q|ρ̂|q⟩ in the eigenbasis of X̂ or Ŷ.
    pub fn marginal(&self, quad: Quadrature, q: f64) -> f64 {
        match self {
            StateModel::Cat { alpha, even } => {
                let a = match quad {
                    Quadrature::X => *alpha,
                    // rotating by e^{−iπn̂/2} maps Ŷ onto X̂
                    Quadrature::Y => *alpha * C64::new(0.0, -1.0),
                };
                let sg = if *even { 1.0 } else { -1.0 };
                let psi = (gaussian::coherent_wavefunction(a, q) + gaussian::coherent_wavefunction(-a, q) * sg)
                    * Self::cat_norm(*alpha, *even);
                psi.norm_sqr()
            }
            StateModel::Fock(n) => {
                let h = fock::hermite_functions(q, *n as usize + 1);
                h[*n as usize].powi(2)
            }
            StateModel::Numeric(s) => {
                let rho = s.rho();
                let dim = rho.nrows();
                let h = fock::hermite_functions(q, dim);
                let phase = |k: usize| match quad {
                    Quadrature::X => C64::new(1.0, 0.0),
                    Quadrature::Y => C64::new(0.0, -1.0).powu(k as u32),
                };
                let amp: Vec<C64> = (0..dim).map(|k| phase(k) * h[k]).collect();
                let mut acc = C64::new(0.0, 0.0);
                for m in 0..dim {
                    for n in 0..dim {
                        acc += rho[(m, n)] * amp[m] * amp[n].conj();
                    }
                }
                acc.re
            }
            other => {
                let g = other.gaussian_moments().expect("gaussian family");
                match quad {
                    Quadrature::X => g.marginal_x(q),
                    Quadrature::Y => g.marginal_y(q),
                }
            }
        }
    }

    /// Amplitudes on |0⟩..|n_max⟩ for pure analytic states.
    pub fn fock_amplitudes(&self, n_max: usize) -> Option<Vec<C64>> {
        let dim = n_max + 1;
        match self {
            StateModel::Vacuum => Some(fock::coherent_amplitudes(C64::new(0.0, 0.0), dim)),
            StateModel::Coherent(a) => Some(fock::coherent_amplitudes(*a, dim)),
            StateModel::Fock(n) => {
                let mut v = vec![C64::new(0.0, 0.0); dim];
                if (*n as usize) < dim {
                    v[*n as usize] = C64::new(1.0, 0.0);
                }
                Some(v)
            }
            StateModel::Cat { alpha, even } => {
                let p = fock::coherent_amplitudes(*alpha, dim);
                let m = fock::coherent_amplitudes(-*alpha, dim);
                let sg = if *even { 1.0 } else { -1.0 };
                let nrm = Self::cat_norm(*alpha, *even);
                Some(p.iter().zip(&m).map(|(a, b)| (a + b * sg) * nrm).collect())
            }
            StateModel::Squeezed { r, phase } => {
                let mut v = vec![C64::new(0.0, 0.0); dim];
                let t = -C64::from_polar(r.tanh(), *phase);
                let mut c = C64::new(1.0 / r.cosh().sqrt(), 0.0);
                for k in 0..=n_max / 2 {
                    if k > 0 {
                        // √((2k)!)/(2^k k!) grows by √((2k−1)(2k))/(2k)
                        let kf = k as f64;
                        c *= t * (((2.0 * kf - 1.0) * 2.0 * kf).sqrt() / (2.0 * kf));
                    }
                    v[2 * k] = c;
                }
                Some(v)
            }
            StateModel::Gaussian(_) | StateModel::Numeric(_) => None,
        }
    }

    /// Truncated density matrix; fails when the tail beyond n_max exceeds 1e-6.
    pub fn to_fock(&self, n_max: usize) -> Result<NumericState> {
        if let StateModel::Numeric(s) = self {
            if s.n_max() == n_max {
                return Ok((**s).clone());
            }
            let d = n_max + 1;
            let cur = s.rho().nrows();
            let mut rho = DMatrix::<C64>::zeros(d, d);
            let k = d.min(cur);
            rho.view_mut((0, 0), (k, k)).copy_from(&s.rho().view((0, 0), (k, k)));
            let lost = 1.0 - rho.trace().re;
            if lost > 1e-6 {
                return Err(Error::TruncationOverflow(lost));
            }
            return NumericState::project(rho);
        }
        let amps = self
            .fock_amplitudes(n_max)
            .ok_or_else(|| Error::UnsupportedConfiguration("mixed Gaussian has no pure Fock expansion".into()))?;
        let kept: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if 1.0 - kept > 1e-6 {
            return Err(Error::TruncationOverflow(1.0 - kept));
        }
        NumericState::pure(&amps)
    }

    pub fn is_pure(&self) -> bool {
        match self {
            StateModel::Gaussian(g) => (g.purity() - 1.0).abs() < 1e-9,
            StateModel::Numeric(s) => (s.purity() - 1.0).abs() < 1e-9,
            _ => true,
        }
    }

    pub fn moments(&self) -> QuadratureMoments {
        if let Some(g) = self.gaussian_moments() {
            return QuadratureMoments { mean_x: g.mean.re, mean_y: g.mean.im, var_x: g.vxx, var_y: g.vyy, cov_xy: g.vxy };
        }
        match self {
            StateModel::Fock(n) => {
                let v = (2.0 * *n as f64 + 1.0) / 4.0;
                QuadratureMoments { mean_x: 0.0, mean_y: 0.0, var_x: v, var_y: v, cov_xy: 0.0 }
            }
            StateModel::Numeric(s) => matrix_moments(s.rho()),
            StateModel::Cat { alpha, .. } => {
                let n_max = (alpha.norm_sqr() + 12.0 * alpha.norm() + 30.0).ceil() as usize;
                let s = self.to_fock(n_max).expect("cat truncation sized from |α|");
                matrix_moments(s.rho())
            }
            _ => unreachable!(),
        }
    }
}

fn matrix_moments(rho: &DMatrix<C64>) -> QuadratureMoments {
    let d = rho.nrows();
    let mut a = C64::new(0.0, 0.0);
    let mut a2 = C64::new(0.0, 0.0);
    let mut n = 0.0;
    for m in 0..d {
        n += m as f64 * rho[(m, m)].re;
        if m >= 1 {
            a += rho[(m, m - 1)] * (m as f64).sqrt();
        }
        if m >= 2 {
            a2 += rho[(m, m - 2)] * ((m * (m - 1)) as f64).sqrt();
        }
    }
    let x2 = 0.25 * (2.0 * a2.re + 2.0 * n + 1.0);
    let y2 = 0.25 * (-2.0 * a2.re + 2.0 * n + 1.0);
    QuadratureMoments {
        mean_x: a.re,
        mean_y: a.im,
        var_x: x2 - a.re * a.re,
        var_y: y2 - a.im * a.im,
        cov_xy: 0.5 * a2.im - a.re * a.im,
    }
}

/// Two-axis QPD of a finite density matrix: closed form at s₀ = max(s_X, s_Y),
/// then a Gauss–Hermite convolution along the axis that needs more smoothing.
fn finite_qpd(rho: &DMatrix<C64>, z: C64, ord: OrderingParams) -> f64 {
    let s0 = ord.s_x.max(ord.s_y);
    let c = 2.0 / (1.0 - s0);
    let v = 0.25 * (s0 - ord.s_x.min(ord.s_y));
    if v < 1e-14 {
        return fock::iso_poly(rho, z, s0) * (-c * z.norm_sqr()).exp();
    }
    // smoothing along Re z when s_X is the smaller one, else along Im z
    let along_x = ord.s_x < ord.s_y;
    let (u, w) = if along_x { (z.re, z.im) } else { (z.im, z.re) };
    let a = c + 0.5 / v;
    let mid = u / (2.0 * v * a);
    let log_pref = a * mid * mid - u * u / (2.0 * v) - c * w * w;
    let gh = gauss_hermite(GH_NODES);
    let sa = a.sqrt();
    let mut acc = 0.0;
    for (t, wt) in gh.nodes.iter().zip(&gh.weights) {
        let x = mid + t / sa;
        let p = if along_x { C64::new(x, w) } else { C64::new(w, x) };
        acc += wt * fock::iso_poly(rho, p, s0);
    }
    acc * log_pref.exp() / (2.0 * PI * v * a).sqrt()
}

/// Rectangular sampling window in phase space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Window {
    pub fn square(half: f64, n: usize) -> Self {
        Self { x_min: -half, x_max: half, y_min: -half, y_max: half, nx: n, ny: n }
    }

    pub fn for_state(state: &StateModel) -> Self {
        Self::square(state.extent(), DEFAULT_GRID)
    }
}

/// Sampled quasiprobability values; `values[iy * nx + ix]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpdGrid {
    pub origin: C64,
    pub dx: f64,
    pub dy: f64,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
    pub ordering: OrderingParams,
}

impl QpdGrid {
    /// Fills a grid row-parallel from any pointwise evaluator.
    pub fn from_fn<F>(win: &Window, ordering: OrderingParams, f: F) -> Result<Self>
    where
        F: Fn(C64) -> Result<f64> + Sync,
    {
        assert!(win.nx >= 2 && win.ny >= 2, "grid needs at least 2x2 points");
        let dx = (win.x_max - win.x_min) / (win.nx - 1) as f64;
        let dy = (win.y_max - win.y_min) / (win.ny - 1) as f64;
        if !(dx > 0.0 && dy > 0.0) {
            return Err(Error::GridMismatch);
        }
        let origin = C64::new(win.x_min, win.y_min);
        let rows: Result<Vec<Vec<f64>>> = (0..win.ny)
            .into_par_iter()
            .map(|iy| (0..win.nx).map(|ix| f(origin + C64::new(ix as f64 * dx, iy as f64 * dy))).collect())
            .collect();
        let values = rows?.concat();
        Ok(Self { origin, dx, dy, nx: win.nx, ny: win.ny, values, ordering })
    }

    pub fn window(&self) -> Window {
        Window {
            x_min: self.origin.re,
            x_max: self.origin.re + self.dx * (self.nx - 1) as f64,
            y_min: self.origin.im,
            y_max: self.origin.im + self.dy * (self.ny - 1) as f64,
            nx: self.nx,
            ny: self.ny,
        }
    }

    pub fn point(&self, ix: usize, iy: usize) -> C64 {
        self.origin + C64::new(ix as f64 * self.dx, iy as f64 * self.dy)
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx * self.dy
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn boundary_max(&self) -> f64 {
        let mut m: f64 = 0.0;
        for ix in 0..self.nx {
            m = m.max(self.at(ix, 0).abs()).max(self.at(ix, self.ny - 1).abs());
        }
        for iy in 0..self.ny {
            m = m.max(self.at(0, iy).abs()).max(self.at(self.nx - 1, iy).abs());
        }
        m
    }

    /// WindowTooSmall when the boundary exceeds 1e-6 of the peak.
    pub fn check_window(&self) -> Result<()> {
        let limit = 1e-6 * self.max_abs();
        let b = self.boundary_max();
        if b > limit {
            return Err(Error::WindowTooSmall { boundary: b, limit });
        }
        Ok(())
    }

    pub fn same_geometry(&self, other: &QpdGrid) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
        self.nx == other.nx
            && self.ny == other.ny
            && close(self.dx, other.dx)
            && close(self.dy, other.dy)
            && close(self.origin.re, other.origin.re)
            && close(self.origin.im, other.origin.im)
    }

    /// Σ|a − b| dx dy on identical geometry.
    pub fn l1_distance(&self, other: &QpdGrid) -> Result<f64> {
        if !self.same_geometry(other) {
            return Err(Error::GridMismatch);
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * self.dx * self.dy)
    }

    /// π ∫ W² d²z; meaningful for Wigner grids only.
    pub fn purity(&self) -> f64 {
        PI * self.values.iter().map(|v| v * v).sum::<f64>() * self.dx * self.dy
    }

    /// Grid moments of the sampled distribution.
    pub fn moments(&self) -> QuadratureMoments {
        let (mut s0, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let v = self.at(ix, iy);
                let p = self.point(ix, iy);
                s0 += v;
                sx += v * p.re;
                sy += v * p.im;
                sxx += v * p.re * p.re;
                syy += v * p.im * p.im;
                sxy += v * p.re * p.im;
            }
        }
        let (mx, my) = (sx / s0, sy / s0);
        QuadratureMoments {
            mean_x: mx,
            mean_y: my,
            var_x: sxx / s0 - mx * mx,
            var_y: syy / s0 - my * my,
            cov_xy: sxy / s0 - mx * my,
        }
    }
}

pub fn char_function(state: &StateModel, gamma: C64, ord: OrderingParams) -> C64 {
    state.char_function(gamma, ord)
}

pub fn qpd_eval(state: &StateModel, z: C64, ord: OrderingParams) -> Result<f64> {
    state.qpd_eval(z, ord)
}

/// Samples ρ(z; s_X, s_Y) over `win`; refuses windows that clip the state.
pub fn qpd_grid(state: &StateModel, win: &Window, ord: OrderingParams) -> Result<QpdGrid> {
    ord.check()?;
    state.validate()?;
    let g = QpdGrid::from_fn(win, ord, |z| state.qpd_eval(z, ord))?;
    g.check_window()?;
    Ok(g)
}

pub fn marginal(state: &StateModel, quad: Quadrature, q: f64) -> f64 {
    state.marginal(quad, q)
}

/// π Σ a·b dx dy between Wigner grids, clamped to [0, 1 + 1e-6].
pub fn wigner_fidelity(a: &QpdGrid, b: &QpdGrid) -> Result<f64> {
    let w = OrderingParams::wigner();
    if !a.same_geometry(b) || a.ordering != w || b.ordering != w {
        return Err(Error::GridMismatch);
    }
    let f = PI * a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum::<f64>() * a.dx * a.dy;
    Ok(f.clamp(0.0, 1.0 + 1e-6))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn trivial_values() {
        let w = OrderingParams::wigner();
        assert!((StateModel::Vacuum.qpd_eval(c(0.0, 0.0), w).unwrap() - 2.0 / PI).abs() < 1e-15);
        let h = StateModel::Coherent(c(3.0, 0.0)).qpd_eval(c(3.0, 0.0), OrderingParams::husimi()).unwrap();
        assert!((h - 1.0 / PI).abs() < 1e-15);
        assert!((StateModel::Fock(1).qpd_eval(c(0.0, 0.0), w).unwrap() + 2.0 / PI).abs() < 1e-15);
        assert!((StateModel::Vacuum.char_function(c(0.0, 0.0), w) - 1.0).norm() < 1e-15);
        assert!((StateModel::Vacuum.marginal(Quadrature::X, 0.0) - (2.0 / PI).sqrt()).abs() < 1e-15);
        let m = StateModel::Coherent(c(3.0, 0.0)).marginal(Quadrature::X, 3.0);
        assert!((m - (2.0 / PI).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ordering_out_of_range() {
        let r = StateModel::Fock(2).qpd_eval(c(0.0, 0.0), OrderingParams::new(1.0, 0.0));
        assert!(matches!(r, Err(Error::OrderingOutOfRange { .. })));
    }

    #[test]
    fn numeric_copy_of_coherent_matches_closed_form() {
        let a = c(0.9, -0.6);
        let st = StateModel::Coherent(a);
        let num = StateModel::numeric(st.to_fock(DEFAULT_N_MAX).unwrap());
        for ord in [OrderingParams::wigner(), OrderingParams::new(-1.0, -0.3), OrderingParams::new(0.4, -2.0)] {
            for z in [c(0.2, 0.1), c(1.3, -1.0), c(-0.5, 0.8)] {
                let e = st.qpd_eval(z, ord).unwrap();
                let n = num.qpd_eval(z, ord).unwrap();
                assert!((e - n).abs() < 1e-12, "{ord:?} {z}: {e} vs {n}");
            }
            let g = c(0.4, -0.7);
            assert!((st.char_function(g, ord) - num.char_function(g, ord)).norm() < 1e-12);
        }
        for q in [-0.5, 0.3, 1.2] {
            for quad in [Quadrature::X, Quadrature::Y] {
                assert!((st.marginal(quad, q) - num.marginal(quad, q)).abs() < 1e-12);
            }
        }
        let m = num.moments();
        assert!((m.mean_x - 0.9).abs() < 1e-12 && (m.mean_y + 0.6).abs() < 1e-12);
        assert!((m.var_x - 0.25).abs() < 1e-12 && m.cov_xy.abs() < 1e-12);
    }

    #[test]
    fn squeezed_fock_expansion_matches_gaussian() {
        let st = StateModel::Squeezed { r: 0.5, phase: 0.7 };
        let num = StateModel::numeric(st.to_fock(DEFAULT_N_MAX).unwrap());
        for z in [c(0.3, 0.2), c(-0.4, 0.5)] {
            for ord in [OrderingParams::wigner(), OrderingParams::new(-0.5, -1.5)] {
                let e = st.qpd_eval(z, ord).unwrap();
                let n = num.qpd_eval(z, ord).unwrap();
                assert!((e - n).abs() < 1e-10, "{e} vs {n}");
            }
        }
        let mg = st.moments();
        let mn = num.moments();
        assert!((mg.cov_xy - mn.cov_xy).abs() < 1e-10 && (mg.var_x - mn.var_x).abs() < 1e-10);
    }

    #[test]
    fn cat_numeric_agreement_and_norm() {
        let st = StateModel::Cat { alpha: c(1.5, 0.5), even: false };
        let num = StateModel::numeric(st.to_fock(DEFAULT_N_MAX).unwrap());
        for z in [c(0.0, 0.3), c(1.1, 0.2)] {
            for ord in [OrderingParams::wigner(), OrderingParams::new(-2.4, -0.7)] {
                let e = st.qpd_eval(z, ord).unwrap();
                let n = num.qpd_eval(z, ord).unwrap();
                assert!((e - n).abs() < 1e-11, "{e} vs {n}");
            }
            assert!((st.marginal(Quadrature::Y, z.re) - num.marginal(Quadrature::Y, z.re)).abs() < 1e-12);
        }
    }

    #[test]
    fn fock_char_against_trace_formula() {
        // Fock 3 against a Numeric copy at n_max = 40
        let g = c(0.7, 0.2);
        let ord = OrderingParams::new(-1.0, 0.0);
        let st = StateModel::Fock(3);
        let num = StateModel::numeric(st.to_fock(DEFAULT_N_MAX).unwrap());
        assert!((st.char_function(g, ord) - num.char_function(g, ord)).norm() < 1e-14);
    }

    #[test]
    fn qpd_from_characteristic_function_quadrature() {
        // oracle: trapezoid Fourier transform of χ for Fock 3 at s = −2.4481
        let st = StateModel::Fock(3);
        let s = -2.4481;
        let ord = OrderingParams::symmetric(s);
        let z = c(1.0, 1.0);
        let (h, n) = (0.02, 400);
        let mut acc = C64::new(0.0, 0.0);
        for i in -n..=n {
            for j in -n..=n {
                let g = c(i as f64 * h, j as f64 * h);
                acc += (z * g.conj() - z.conj() * g).exp() * st.char_function(g, ord);
            }
        }
        let oracle = acc.re * h * h / (PI * PI);
        let v = st.qpd_eval(z, ord).unwrap();
        assert!((v - oracle).abs() < 1e-12, "{v} vs {oracle}");
        assert!(acc.im.abs() * h * h < 1e-10);
    }

    #[test]
    fn grid_normalization_and_window_checks() {
        let g = qpd_grid(&StateModel::Vacuum, &Window::square(4.0, 129), OrderingParams::wigner()).unwrap();
        assert!((g.integral() - 1.0).abs() < 1e-4);
        let r = qpd_grid(&StateModel::Coherent(c(3.0, 0.0)), &Window::square(3.0, 65), OrderingParams::wigner());
        assert!(matches!(r, Err(Error::WindowTooSmall { .. })));
    }

    #[test]
    fn fidelity_of_trivial_pairs() {
        let win = Window::square(7.0, 201);
        let w = OrderingParams::wigner();
        let vac = qpd_grid(&StateModel::Vacuum, &win, w).unwrap();
        let coh = qpd_grid(&StateModel::Coherent(c(3.0, 0.0)), &win, w).unwrap();
        let f1 = qpd_grid(&StateModel::Fock(1), &win, w).unwrap();
        assert!((wigner_fidelity(&vac, &vac).unwrap() - 1.0).abs() < 1e-9);
        assert!((wigner_fidelity(&coh, &vac).unwrap() - (-9.0f64).exp()).abs() < 1e-9);
        assert!(wigner_fidelity(&f1, &vac).unwrap() < 1e-9);
        let h = qpd_grid(&StateModel::Vacuum, &win, OrderingParams::husimi()).unwrap();
        assert!(matches!(wigner_fidelity(&vac, &h), Err(Error::GridMismatch)));
    }

    #[test]
    fn grid_round_trip_to_fock() {
        let st = StateModel::Cat { alpha: c(1.2, 0.0), even: true };
        let g = qpd_grid(&st, &Window::square(6.0, 161), OrderingParams::wigner()).unwrap();
        let back = NumericState::from_wigner_grid(&g, 20).unwrap();
        let amps = st.fock_amplitudes(20).unwrap();
        assert!((back.expectation_pure(&amps) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn numeric_validation() {
        let mut rho = DMatrix::<C64>::zeros(2, 2);
        rho[(0, 0)] = c(0.5, 0.0);
        rho[(1, 1)] = c(0.4, 0.0);
        assert!(NumericState::new(rho.clone()).is_err());
        rho[(1, 1)] = c(0.5, 0.0);
        rho[(0, 1)] = c(0.6, 0.0);
        rho[(1, 0)] = c(0.6, 0.0);
        assert!(NumericState::new(rho).is_err(), "negative eigenvalue");
    }
}
