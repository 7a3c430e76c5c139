//! Difference of two independent Poisson counts.
//!
//! Bessel values are carried as `Ie_n(x) = I_n(x) e^{-x}` built from the
//! backward ratio recurrence, so nothing overflows for means up to 1e6.

use crate::error::{Error, Result};
use crate::quad::poisson_pmf;

/// Gaussian route validity floor on m1 + m2.
pub const GAUSSIAN_FLOOR: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkellamParams {
    pub m1: f64,
    pub m2: f64,
}

impl SkellamParams {
    pub fn new(m1: f64, m2: f64) -> Self {
        Self { m1, m2 }
    }

    fn check(&self) -> Result<()> {
        if !(self.m1.is_finite() && self.m2.is_finite()) || self.m1 < 0.0 || self.m2 < 0.0 {
            return Err(Error::NonFiniteParams { m1: self.m1, m2: self.m2 });
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.m1 - self.m2
    }

    pub fn variance(&self) -> f64 {
        self.m1 + self.m2
    }
}

/// Ratios r_k = I_k(x) / I_{k-1}(x) for k = 1..=n, plus Ie_0(x).
fn bessel_ratios(x: f64, n: usize) -> (f64, Vec<f64>) {
    debug_assert!(x > 0.0);
    // start far enough above both n and the e^{-k²/2x} decay scale
    let start = n + (100.0 * x).sqrt().ceil() as usize + 40;
    let mut ratios = vec![0.0; start + 1];
    let mut r = 0.0;
    for k in (1..=start).rev() {
        r = 1.0 / (2.0 * k as f64 / x + r);
        ratios[k] = r;
    }
    // Ie_0 from I_0 + 2 Σ I_k = e^x
    let mut sum = 0.0;
    let mut prod = 1.0;
    for &rk in &ratios[1..] {
        prod *= rk;
        if prod < 1e-300 {
            break;
        }
        sum += prod;
    }
    let ie0 = 1.0 / (1.0 + 2.0 * sum);
    ratios.truncate(n + 1);
    (ie0, ratios)
}

/// ln Ie_n(x) for a single non-negative order.
pub fn ln_bessel_ie(n: usize, x: f64) -> f64 {
    if x == 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let (ie0, ratios) = bessel_ratios(x, n);
    ie0.ln() + ratios[1..=n].iter().map(|r| r.ln()).sum::<f64>()
}

/// Ie_k(x) for k = 0..=n.
pub fn bessel_ie_all(n: usize, x: f64) -> Vec<f64> {
    if x == 0.0 {
        let mut v = vec![0.0; n + 1];
        v[0] = 1.0;
        return v;
    }
    let (ie0, ratios) = bessel_ratios(x, n);
    let mut out = Vec::with_capacity(n + 1);
    let mut cur = ie0;
    out.push(cur);
    for &rk in &ratios[1..=n] {
        cur *= rk;
        out.push(cur);
    }
    out
}

/// Exact pmf of Δn = N1 − N2 with N_j ~ Poisson(m_j).
pub fn skellam_pmf_exact(dn: i64, p: SkellamParams) -> Result<f64> {
    p.check()?;
    let SkellamParams { m1, m2 } = p;
    if m1 == 0.0 && m2 == 0.0 {
        return Ok(if dn == 0 { 1.0 } else { 0.0 });
    }
    if m2 == 0.0 {
        return Ok(if dn >= 0 { poisson_pmf(dn as u64, m1) } else { 0.0 });
    }
    if m1 == 0.0 {
        return Ok(if dn <= 0 { poisson_pmf((-dn) as u64, m2) } else { 0.0 });
    }
    let x = 2.0 * (m1 * m2).sqrt();
    let gap = m1.sqrt() - m2.sqrt();
    let ln = -gap * gap + 0.5 * dn as f64 * (m1.ln() - m2.ln()) + ln_bessel_ie(dn.unsigned_abs() as usize, x);
    Ok(ln.exp())
}

/// Exact pmf on the contiguous range `lo..=hi`, sharing one Bessel sweep.
pub fn skellam_pmf_range(lo: i64, hi: i64, p: SkellamParams) -> Result<Vec<f64>> {
    p.check()?;
    assert!(lo <= hi);
    let SkellamParams { m1, m2 } = p;
    if m1 == 0.0 || m2 == 0.0 {
        return (lo..=hi).map(|d| skellam_pmf_exact(d, p)).collect();
    }
    let x = 2.0 * (m1 * m2).sqrt();
    let top = lo.unsigned_abs().max(hi.unsigned_abs()) as usize;
    let ie = bessel_ie_all(top, x);
    let gap = m1.sqrt() - m2.sqrt();
    let half_ln_ratio = 0.5 * (m1.ln() - m2.ln());
    Ok((lo..=hi)
        .map(|d| {
            let b = ie[d.unsigned_abs() as usize];
            if b == 0.0 {
                0.0
            } else {
                (-gap * gap + d as f64 * half_ln_ratio + b.ln()).exp()
            }
        })
        .collect())
}

/// Normal density with the Skellam mean and variance, evaluated at Δn.
pub fn skellam_pmf_gaussian(dn: i64, p: SkellamParams) -> Result<f64> {
    p.check()?;
    let var = p.variance();
    if var < GAUSSIAN_FLOOR {
        return Err(Error::ApproximationDomain(var));
    }
    let d = dn as f64 - p.mean();
    Ok((-d * d / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt())
}

/// |ϑ₃(z; τ) − 1| for the theta-function form of the Gaussian approximation.
pub fn theta3_diagnostic(p: SkellamParams, dn: i64) -> f64 {
    let SkellamParams { m1, m2 } = p;
    let s = m1 + m2;
    let z = (dn as f64 - 2.0 * m1) * m2 / s;
    // e^{iπτ} with τ = iπ·2m1m2/(m1+m2)
    let ln_q = -std::f64::consts::PI.powi(2) * 2.0 * m1 * m2 / s;
    let mut acc: f64 = 0.0;
    for n in 1..10_000u64 {
        let nf = n as f64;
        let term = (ln_q * nf * nf).exp();
        if term < 1e-16 * acc.abs().max(f64::MIN_POSITIVE) || term == 0.0 {
            break;
        }
        acc += 2.0 * term * (2.0 * std::f64::consts::PI * nf * z).cos();
    }
    acc.abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    // independent oracle: truncated Poisson convolution
    fn poisson_product(dn: i64, m1: f64, m2: f64) -> f64 {
        let start = if dn < 0 { (-dn) as u64 } else { 0 };
        let mut acc = 0.0;
        for n in start..start + 4000 {
            let a = poisson_pmf((n as i64 + dn) as u64, m1);
            let b = poisson_pmf(n, m2);
            acc += a * b;
            if n as f64 > m1 + m2 + 20.0 && a * b < 1e-18 * acc.max(1e-300) && a < 1e-18 && b < 1e-18 {
                break;
            }
        }
        acc
    }

    #[test]
    fn zero_rates_never_count() {
        assert_eq!(skellam_pmf_exact(0, SkellamParams::new(0.0, 0.0)).unwrap(), 1.0);
        assert_eq!(skellam_pmf_exact(2, SkellamParams::new(0.0, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_rates_symmetric_pmf() {
        let p = SkellamParams::new(4.0, 4.0);
        for d in 0..15 {
            let a = skellam_pmf_exact(d, p).unwrap();
            let b = skellam_pmf_exact(-d, p).unwrap();
            assert!((a - b).abs() < 1e-16 * a.max(1e-300) * 10.0);
        }
    }

    #[test]
    fn frozen_value_against_poisson_convolution() {
        let p = skellam_pmf_exact(3, SkellamParams::new(5.0, 2.0)).unwrap();
        let oracle = poisson_product(3, 5.0, 2.0);
        assert!((p - oracle).abs() < 1e-14, "{p} vs {oracle}");
        // frozen from a 300-term Poisson convolution at 30 digits
        assert!((p - 0.152_656_332_152_88).abs() < 1e-12, "{p}");
    }

    #[test]
    fn poisson_fallback_when_one_rate_vanishes() {
        let p = SkellamParams::new(3.0, 0.0);
        assert!((skellam_pmf_exact(2, p).unwrap() - poisson_pmf(2, 3.0)).abs() < 1e-16);
        assert_eq!(skellam_pmf_exact(-1, p).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_peak_and_domain() {
        let g = skellam_pmf_gaussian(0, SkellamParams::new(50.0, 50.0)).unwrap();
        assert!((g - 1.0 / (200.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        let g = skellam_pmf_gaussian(10, SkellamParams::new(60.0, 50.0)).unwrap();
        assert!((g - 1.0 / (220.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        assert!(matches!(
            skellam_pmf_gaussian(0, SkellamParams::new(10.0, 10.0)),
            Err(Error::ApproximationDomain(_))
        ));
    }

    #[test]
    fn gaussian_sup_error_at_fifty() {
        let p = SkellamParams::new(50.0, 50.0);
        let exact = skellam_pmf_range(-200, 200, p).unwrap();
        let sup = (-200..=200)
            .zip(&exact)
            .map(|(d, e)| (e - skellam_pmf_gaussian(d, p).unwrap()).abs())
            .fold(0.0, f64::max);
        assert!(sup < 2e-4, "{sup}");
    }

    #[test]
    fn range_matches_pointwise() {
        let p = SkellamParams::new(37.5, 12.25);
        let r = skellam_pmf_range(-30, 60, p).unwrap();
        for (d, v) in (-30..=60).zip(&r) {
            let e = skellam_pmf_exact(d, p).unwrap();
            assert!((v - e).abs() <= 1e-13 * e.max(1e-300) + 1e-300, "{d}");
        }
    }

    #[test]
    fn huge_means_stay_finite() {
        let p = SkellamParams::new(1e6, 1e6);
        let v = skellam_pmf_exact(0, p).unwrap();
        let g = 1.0 / (2.0 * std::f64::consts::PI * 2e6).sqrt();
        assert!(v.is_finite() && (v - g).abs() / g < 1e-5);
        let far = skellam_pmf_exact(500, SkellamParams::new(1e6, 3.0)).unwrap();
        assert!(far.is_finite());
    }

    #[test]
    fn theta_diagnostic_scales() {
        assert!(theta3_diagnostic(SkellamParams::new(50.0, 50.0), 0) < 1e-100);
        assert!(theta3_diagnostic(SkellamParams::new(50.0, 50.0), 20) < 1e-50);
        let small = theta3_diagnostic(SkellamParams::new(2.0, 2.0), 0);
        // frozen from the direct series: 2 e^{-2π²} cos(4π)
        let oracle = 2.0 * (-2.0 * std::f64::consts::PI.powi(2)).exp();
        assert!((small - oracle).abs() < 1e-20 && small > 1e-9);
    }

    #[test]
    fn bessel_ie_small_argument() {
        // I_0(0.5) e^{-0.5}, I_1(0.5) e^{-0.5} from the power series
        let series = |n: i32, x: f64| -> f64 {
            (0..30i32)
                .map(|j| {
                    (x / 2.0).powi(2 * j + n)
                        / ((1..=j).map(f64::from).product::<f64>()
                            * (1..=(j + n)).map(f64::from).product::<f64>())
                })
                .sum::<f64>()
                * (-x).exp()
        };
        let v = bessel_ie_all(3, 0.5);
        for n in 0..=3 {
            assert!((v[n] - series(n as i32, 0.5)).abs() < 1e-15, "{n}");
        }
    }
}
