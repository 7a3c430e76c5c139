//! Truncated-Fock kernels: s-ordered dyad QPDs, displacement matrix elements,
//! Hermite functions.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use std::f64::consts::PI;

/// Σ_{mn} ρ_mn W_{|m⟩⟨n|}(z; s) with the factor e^{−2|z|²/(1−s)} removed.
///
/// For m = n + k, W = 2/(π(1−s)) √(n!/m!) (2z̄/(1−s))^k e^{−2|z|²/(1−s)} q^n L_n^{(k)}(y)
/// with q = (s+1)/(s−1), y = 4|z|²/(1−s²); the product q^n L_n^{(k)} runs through a
/// recurrence that stays regular at s = −1. Requires s < 1.
pub fn iso_poly(rho: &DMatrix<C64>, z: C64, s: f64) -> f64 {
    let dim = rho.nrows();
    let one_ms = 1.0 - s;
    let q = (s + 1.0) / (s - 1.0);
    let t = 4.0 * z.norm_sqr() / (one_ms * one_ms);
    let w = z.conj() * (2.0 / one_ms);
    let mut m_prev;
    let mut acc = 0.0;
    // w^k / √k!
    let mut wk = C64::new(1.0, 0.0);
    let mut buf = vec![0.0; dim];
    for k in 0..dim {
        if k > 0 {
            wk *= w / (k as f64).sqrt();
        }
        let len = dim - k;
        let kf = k as f64;
        buf[0] = 1.0;
        if len > 1 {
            buf[1] = q * (1.0 + kf) + t;
        }
        for j in 1..len.saturating_sub(1) {
            let jf = j as f64;
            buf[j + 1] = ((q * (2.0 * jf + 1.0 + kf) + t) * buf[j] - q * q * (jf + kf) * buf[j - 1]) / (jf + 1.0);
        }
        let mut pref = wk;
        let mut part = C64::new(0.0, 0.0);
        for n in 0..len {
            if n > 0 {
                // √(n!/(n+k)!) w^k from the previous n
                pref *= (n as f64 / (n as f64 + kf)).sqrt();
            }
            part += rho[(n + k, n)] * pref * buf[n];
        }
        m_prev = part;
        acc += if k == 0 { m_prev.re } else { 2.0 * m_prev.re };
    }
    acc * 2.0 / (PI * one_ms)
}

/// Complex QPD of the single dyad |m⟩⟨n| at isotropic s (full value, any m, n).
pub fn dyad_iso(m: usize, n: usize, z: C64, s: f64) -> C64 {
    if m < n {
        return dyad_iso(n, m, z, s).conj();
    }
    let k = m - n;
    let one_ms = 1.0 - s;
    let q = (s + 1.0) / (s - 1.0);
    let t = 4.0 * z.norm_sqr() / (one_ms * one_ms);
    let kf = k as f64;
    let (mut a, mut b) = (1.0, q * (1.0 + kf) + t);
    if n == 0 {
        b = 1.0;
    } else {
        for j in 1..n {
            let jf = j as f64;
            let c = ((q * (2.0 * jf + 1.0 + kf) + t) * b - q * q * (jf + kf) * a) / (jf + 1.0);
            a = b;
            b = c;
        }
    }
    let w = z.conj() * (2.0 / one_ms);
    let mut pref = C64::new(1.0, 0.0);
    for j in 0..k {
        pref *= w / ((n + j + 1) as f64).sqrt();
    }
    pref * (b * 2.0 / (PI * one_ms) * (-2.0 * z.norm_sqr() / one_ms).exp())
}

/// Generalized Laguerre L_j^{(k)}(x) for j = 0..len.
fn laguerre_row(k: usize, x: f64, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    if len == 0 {
        return v;
    }
    v[0] = 1.0;
    if len > 1 {
        v[1] = 1.0 + k as f64 - x;
    }
    for j in 1..len.saturating_sub(1) {
        let jf = j as f64;
        let kf = k as f64;
        v[j + 1] = ((2.0 * jf + 1.0 + kf - x) * v[j] - (jf + kf) * v[j - 1]) / (jf + 1.0);
    }
    v
}

/// Tr(ρ D(γ)) over a truncated density matrix.
pub fn char_trace(rho: &DMatrix<C64>, gamma: C64) -> C64 {
    let dim = rho.nrows();
    let x = gamma.norm_sqr();
    let env = (-0.5 * x).exp();
    let mut acc = C64::new(0.0, 0.0);
    let mut gk = C64::new(1.0, 0.0);
    let mut gbk = C64::new(1.0, 0.0);
    for k in 0..dim {
        if k > 0 {
            gk *= gamma / (k as f64).sqrt();
            gbk *= -gamma.conj() / (k as f64).sqrt();
        }
        let lag = laguerre_row(k, x, dim - k);
        let mut scale = 1.0;
        for n in 0..dim - k {
            if n > 0 {
                scale *= (n as f64 / (n + k) as f64).sqrt();
            }
            // ⟨n|D|n+k⟩ = √(n!/(n+k)!) (−γ̄)^k e^{−|γ|²/2} L_n^{(k)}
            acc += rho[(n + k, n)] * gbk * (scale * lag[n]);
            if k > 0 {
                // ⟨n+k|D|n⟩ = √(n!/(n+k)!) γ^k e^{−|γ|²/2} L_n^{(k)}
                acc += rho[(n, n + k)] * gk * (scale * lag[n]);
            }
        }
    }
    acc * env
}

/// Orthonormal Hermite functions ⟨x|n⟩ for the X̂ = (â+â†)/2 eigenbasis, n = 0..dim.
pub fn hermite_functions(x: f64, dim: usize) -> Vec<f64> {
    let xi = std::f64::consts::SQRT_2 * x;
    let mut h = vec![0.0; dim];
    if dim == 0 {
        return h;
    }
    h[0] = 2f64.powf(0.25) * PI.powf(-0.25) * (-0.5 * xi * xi).exp();
    if dim > 1 {
        h[1] = std::f64::consts::SQRT_2 * xi * h[0];
    }
    for n in 1..dim.saturating_sub(1) {
        let nf = n as f64;
        h[n + 1] = (2.0 / (nf + 1.0)).sqrt() * xi * h[n] - (nf / (nf + 1.0)).sqrt() * h[n - 1];
    }
    h
}

/// Coherent-state amplitudes e^{−|α|²/2} α^n/√n! for n = 0..dim.
pub fn coherent_amplitudes(alpha: C64, dim: usize) -> Vec<C64> {
    let mut c = Vec::with_capacity(dim);
    let mut cur = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for n in 0..dim {
        if n > 0 {
            cur *= alpha / (n as f64).sqrt();
        }
        c.push(cur);
    }
    c
}
