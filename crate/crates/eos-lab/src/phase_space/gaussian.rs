//! Closed forms for Gaussian states and coherent-state dyads |β₁⟩⟨β₂|.

use num_complex::Complex64 as C64;
use std::f64::consts::PI;

use super::OrderingParams;

/// Gaussian Wigner function: mean and covariance in (Re z, Im z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMoments {
    pub mean: C64,
    pub vxx: f64,
    pub vxy: f64,
    pub vyy: f64,
}

impl GaussianMoments {
    pub fn coherent(alpha: C64) -> Self {
        Self { mean: alpha, vxx: 0.25, vxy: 0.0, vyy: 0.25 }
    }

    /// Squeezed vacuum S(re^{iθ})|0⟩ with S = exp((ξ̄a² − ξa†²)/2).
    pub fn squeezed(r: f64, phase: f64) -> Self {
        let (s, c) = (0.5 * phase).sin_cos();
        let (a, b) = (0.25 * (-2.0 * r).exp(), 0.25 * (2.0 * r).exp());
        Self {
            mean: C64::new(0.0, 0.0),
            vxx: c * c * a + s * s * b,
            vxy: c * s * (a - b),
            vyy: s * s * a + c * c * b,
        }
    }

    pub fn det(&self) -> f64 {
        self.vxx * self.vyy - self.vxy * self.vxy
    }

    /// Purity 1/(4√det V) in the variance-1/4 convention.
    pub fn purity(&self) -> f64 {
        0.25 / self.det().sqrt()
    }

    /// Covariance after the (s_X, s_Y) smoothing, `None` if not positive definite.
    fn smoothed(&self, ord: OrderingParams) -> Option<(f64, f64, f64)> {
        let cxx = self.vxx - ord.s_x / 4.0;
        let cyy = self.vyy - ord.s_y / 4.0;
        let det = cxx * cyy - self.vxy * self.vxy;
        (cxx > 0.0 && cyy > 0.0 && det > 0.0).then_some((cxx, self.vxy, cyy))
    }

    pub fn qpd(&self, z: C64, ord: OrderingParams) -> Option<f64> {
        let (cxx, cxy, cyy) = self.smoothed(ord)?;
        let det = cxx * cyy - cxy * cxy;
        let d = z - self.mean;
        let q = (cyy * d.re * d.re - 2.0 * cxy * d.re * d.im + cxx * d.im * d.im) / det;
        Some((-0.5 * q).exp() / (2.0 * PI * det.sqrt()))
    }

    /// χ(γ; 0) = E[exp(i(k_x X + k_y Y))] with k_x = 2 Im γ, k_y = −2 Re γ.
    pub fn char_symmetric(&self, gamma: C64) -> C64 {
        let kx = 2.0 * gamma.im;
        let ky = -2.0 * gamma.re;
        let phase = kx * self.mean.re + ky * self.mean.im;
        let quad = kx * kx * self.vxx + 2.0 * kx * ky * self.vxy + ky * ky * self.vyy;
        C64::from_polar((-0.5 * quad).exp(), phase)
    }

    pub fn marginal_x(&self, q: f64) -> f64 {
        normal(q, self.mean.re, self.vxx)
    }

    pub fn marginal_y(&self, q: f64) -> f64 {
        normal(q, self.mean.im, self.vyy)
    }
}

fn normal(q: f64, m: f64, v: f64) -> f64 {
    (-(q - m) * (q - m) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt()
}

/// χ(γ; 0) of the operator |β₁⟩⟨β₂|.
pub fn dyad_char(b1: C64, b2: C64, gamma: C64) -> C64 {
    let e = -0.5 * gamma.norm_sqr() + b2.conj() * gamma - b1 * gamma.conj() - 0.5 * b1.norm_sqr()
        - 0.5 * b2.norm_sqr()
        + b2.conj() * b1;
    e.exp()
}

/// (s_X, s_Y) quasiprobability of |β₁⟩⟨β₂| (complex for β₁ ≠ β₂); needs s_Q < 1.
pub fn dyad_qpd(b1: C64, b2: C64, z: C64, ord: OrderingParams) -> C64 {
    let u = z - b1;
    let w = b2.conj() - z.conj();
    let c = -0.5 * b1.norm_sqr() - 0.5 * b2.norm_sqr() + b2.conj() * b1;
    let e = (u + w) * (u + w) / (2.0 * (1.0 - ord.s_y)) - (w - u) * (w - u) / (2.0 * (1.0 - ord.s_x)) + c;
    e.exp() * (2.0 / (PI * ((1.0 - ord.s_x) * (1.0 - ord.s_y)).sqrt()))
}

/// ⟨x|β⟩ in the X̂ = (â + â†)/2 eigenbasis.
pub fn coherent_wavefunction(beta: C64, x: f64) -> C64 {
    let (q, p) = (beta.re, beta.im);
    let amp = (2.0 / PI).powf(0.25) * (-(x - q) * (x - q)).exp();
    C64::from_polar(amp, 2.0 * p * x - p * q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dyad_reduces_to_coherent_gaussian() {
        let a = C64::new(0.7, -1.2);
        let g = GaussianMoments::coherent(a);
        for &(sx, sy) in &[(0.0, 0.0), (-1.0, -0.3), (0.5, -2.0)] {
            let ord = OrderingParams::new(sx, sy);
            for z in [C64::new(0.1, 0.2), C64::new(1.0, -1.5)] {
                let d = dyad_qpd(a, a, z, ord);
                let r = g.qpd(z, ord).unwrap();
                assert!((d.re - r).abs() < 1e-14 && d.im.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dyad_char_of_coherent() {
        let a = C64::new(0.4, 0.9);
        let g = GaussianMoments::coherent(a);
        let gamma = C64::new(-0.3, 0.8);
        assert!((dyad_char(a, a, gamma) - g.char_symmetric(gamma)).norm() < 1e-15);
    }

    #[test]
    fn wavefunction_is_normalized() {
        let b = C64::new(1.5, -0.7);
        let h = 0.01;
        let s: f64 = (-800..800).map(|i| coherent_wavefunction(b, i as f64 * h).norm_sqr() * h).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn squeezed_purity_is_one() {
        let g = GaussianMoments::squeezed(0.8, 1.1);
        assert!((g.purity() - 1.0).abs() < 1e-14);
    }
}
