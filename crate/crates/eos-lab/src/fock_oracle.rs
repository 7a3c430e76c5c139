//! Brute-force ground truth in a truncated multimode Fock basis.
//!
//! Mode order: MIR, then (s, z) per channel. Gates act through sparse ladder
//! actions or small per-mode unitaries; the full register is never a dense matrix.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::eos_core::{CountTable, EosSetup, OutcomeSet, OutcomeWindow};
use crate::error::{Error, Result};
use crate::phase_space::{NumericState, StateModel};

/// Smallest top Fock level kept on an NIR mode; raised per run from the expected occupation.
pub const NIR_CUTOFF: usize = 16;
pub const NIR_CUTOFF_CAP: usize = 22;
/// Top Fock level allowed on the MIR mode.
pub const MIR_CUTOFF_CAP: usize = 20;
/// Population allowed on any mode's two highest levels.
pub const TAIL_LIMIT: f64 = 1e-8;

pub const MAX_PROBE: f64 = 2.0;
pub const MAX_SQUEEZE: f64 = 0.5;
pub const MAX_CHANNELS: usize = 2;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Gate sequence for the displacement and waveplate stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateOrder {
    /// U_WP D_z(β) applied as (U_WP D_z U_WP†) U_WP: waveplate first, then the
    /// conjugated displacements on both polarizations. Keeps NIR occupations low.
    Conjugated,
    /// D_z(β) first, then the waveplate; needs z cutoffs above |β|² + 8|β|.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqueezeRoute {
    /// Taylor expm-multiply of the full multimode generator.
    Generator,
    /// Beam splitter to the collective mode Σα̃_i a_{i,s}, two-mode squeeze, inverse.
    Collective,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOptions {
    pub order: GateOrder,
    pub route: SqueezeRoute,
    /// `None` picks the cutoff from the expected NIR occupation.
    pub nir_cutoff: Option<usize>,
    /// Replaces each channel's (φ, θ), e.g. for a detuned negative control.
    pub waveplates: Option<Vec<(f64, f64)>>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { order: GateOrder::Conjugated, route: SqueezeRoute::Generator, nir_cutoff: None, waveplates: None }
    }
}

/// Product-basis state vector; MIR is the slowest index.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedRegister {
    dims: Vec<usize>,
    strides: Vec<usize>,
    psi: Vec<C64>,
}

/// Waveplate matrix W with U a U† = e^{−iφ/2} W a on (a_s, a_z).
pub fn waveplate_matrix(phi: f64, theta: f64) -> [[C64; 2]; 2] {
    let (s, c) = (0.5 * phi).sin_cos();
    let (s2, c2) = (2.0 * theta).sin_cos();
    let w11 = C64::new(c, s * c2);
    let w12 = C64::new(0.0, s * s2);
    [[w11, w12], [w12, w11.conj()]]
}

fn ladder(dim: usize) -> DMatrix<C64> {
    DMatrix::from_fn(dim, dim, |r, c| if c == r + 1 { C64::new((c as f64).sqrt(), 0.0) } else { ZERO })
}

/// exp(G) for anti-Hermitian G through the eigendecomposition of −iG.
fn expm_antihermitian(g: &DMatrix<C64>) -> DMatrix<C64> {
    let h = g * C64::new(0.0, -1.0);
    let h = (&h + h.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let phases = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| C64::new(0.0, l).exp()));
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&phases) * v.adjoint()
}

/// Local unitary of D(β) on one truncated mode.
fn displacement_local(beta: C64, dim: usize) -> DMatrix<C64> {
    let a = ladder(dim);
    expm_antihermitian(&(a.adjoint() * beta - &a * beta.conj()))
}

/// Two-mode matrix of a_1 ⊗ 1 and 1 ⊗ a_2, index i1·d2 + i2.
fn pair_ladders(d1: usize, d2: usize) -> (DMatrix<C64>, DMatrix<C64>) {
    let a1 = ladder(d1).kronecker(&DMatrix::identity(d2, d2));
    let a2 = DMatrix::<C64>::identity(d1, d1).kronecker(&ladder(d2));
    (a1, a2)
}

/// exp(iφ a_⊥† a_⊥) with a_⊥ = −sin θ a_s + cos θ a_z, whose Heisenberg action is
/// exactly e^{−iφ/2} W. It equals exp(−iφ a_θ† a_θ) up to the phase exp(iφ n_total),
/// which commutes with every Δn projector and the later displacements' statistics.
fn waveplate_local(phi: f64, theta: f64, dim: usize) -> DMatrix<C64> {
    let (as_, az) = pair_ladders(dim, dim);
    let (s, c) = theta.sin_cos();
    let ap = &az * C64::new(c, 0.0) - &as_ * C64::new(s, 0.0);
    expm_antihermitian(&(ap.adjoint() * &ap * C64::new(0.0, phi)))
}

/// Passive unitary B = exp(a† K a) on two modes with U† a U = e^K a.
fn passive_local(k: &[[C64; 2]; 2], d: usize) -> DMatrix<C64> {
    let (a1, a2) = pair_ladders(d, d);
    let ops = [&a1, &a2];
    let mut g = DMatrix::zeros(d * d, d * d);
    for (j, aj) in ops.iter().enumerate() {
        for (l, al) in ops.iter().enumerate() {
            if k[j][l] != ZERO {
                g += aj.adjoint() * *al * k[j][l];
            }
        }
    }
    expm_antihermitian(&g)
}

/// Generator K of the SU(2) matrix [[a1, a2], [−ā2, ā1]], |a1|² + |a2|² = 1.
fn su2_log(a1: C64, a2: C64) -> [[C64; 2]; 2] {
    let m = [[a1, a2], [-a2.conj(), a1.conj()]];
    let cos_t = a1.re.clamp(-1.0, 1.0);
    let t = cos_t.acos();
    let f = if t.abs() < 1e-12 { 1.0 } else { t / t.sin() };
    let mut k = [[ZERO; 2]; 2];
    for (j, row) in m.iter().enumerate() {
        for (l, v) in row.iter().enumerate() {
            let id = if j == l { cos_t } else { 0.0 };
            k[j][l] = (v - id) * f;
        }
    }
    k
}

impl TruncatedRegister {
    /// MIR amplitudes ⊗ NIR vacuum.
    pub fn new(mir: &[C64], channels: usize, nir_cutoff: usize) -> Self {
        Self::with_levels(mir, &vec![(nir_cutoff + 1, nir_cutoff + 1); channels])
    }

    /// MIR amplitudes ⊗ NIR vacuum with (s, z) level counts per channel.
    pub fn with_levels(mir: &[C64], levels: &[(usize, usize)]) -> Self {
        let mut dims = vec![mir.len()];
        for &(ds, dz) in levels {
            dims.push(ds);
            dims.push(dz);
        }
        let mut strides = vec![1; dims.len()];
        for k in (0..dims.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        let total: usize = dims.iter().product();
        let mut psi = vec![ZERO; total];
        for (n, a) in mir.iter().enumerate() {
            psi[n * strides[0]] = *a;
        }
        Self { dims, strides, psi }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn channels(&self) -> usize {
        (self.dims.len() - 1) / 2
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.psi
    }

    pub fn norm_sqr(&self) -> f64 {
        self.psi.iter().map(|a| a.norm_sqr()).sum()
    }

    fn digit(&self, idx: usize, mode: usize) -> usize {
        (idx / self.strides[mode]) % self.dims[mode]
    }

    pub fn s_mode(ch: usize) -> usize {
        1 + 2 * ch
    }

    pub fn z_mode(ch: usize) -> usize {
        2 + 2 * ch
    }

    /// Population on the top two levels of each mode.
    pub fn tail_masses(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.dims.len()];
        for (idx, a) in self.psi.iter().enumerate() {
            let p = a.norm_sqr();
            if p == 0.0 {
                continue;
            }
            for (m, tm) in t.iter_mut().enumerate() {
                if self.digit(idx, m) + 2 >= self.dims[m] {
                    *tm += p;
                }
            }
        }
        t
    }

    fn check_tail(&self) -> Result<()> {
        for (mode, &tail) in self.tail_masses().iter().enumerate() {
            // a mode truncated to one or two levels is a deliberate placeholder
            if self.dims[mode] > 2 && tail > TAIL_LIMIT {
                return Err(Error::TruncationBreach { mode, tail });
            }
        }
        Ok(())
    }

    /// Applies a local unitary acting on `modes` (row-major over those modes).
    fn apply_local(&mut self, modes: &[usize], u: &DMatrix<C64>) {
        let ld: Vec<usize> = modes.iter().map(|&m| self.dims[m]).collect();
        let size: usize = ld.iter().product();
        let offsets: Vec<usize> = (0..size)
            .map(|mut f| {
                let mut off = 0;
                for k in (0..modes.len()).rev() {
                    off += (f % ld[k]) * self.strides[modes[k]];
                    f /= ld[k];
                }
                off
            })
            .collect();
        let mut nz: Vec<(usize, C64)> = Vec::with_capacity(size);
        let mut out = vec![ZERO; size];
        for base in 0..self.psi.len() {
            if modes.iter().any(|&m| self.digit(base, m) != 0) {
                continue;
            }
            nz.clear();
            nz.extend(offsets.iter().enumerate().map(|(k, &o)| (k, self.psi[base + o])).filter(|e| e.1 != ZERO));
            if nz.is_empty() {
                continue;
            }
            out.fill(ZERO);
            for &(k, a) in &nz {
                for (r, o) in out.iter_mut().enumerate() {
                    *o += u[(r, k)] * a;
                }
            }
            for (k, &o) in offsets.iter().enumerate() {
                self.psi[base + o] = out[k];
            }
        }
    }

    /// Zero-pads to larger per-mode level counts.
    pub fn expand(&self, dims: &[usize]) -> Self {
        assert!(dims.len() == self.dims.len() && dims.iter().zip(&self.dims).all(|(a, b)| a >= b));
        let mut strides = vec![1; dims.len()];
        for k in (0..dims.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        let mut psi = vec![ZERO; dims.iter().product()];
        for (idx, &a) in self.psi.iter().enumerate() {
            if a != ZERO {
                let t: usize = (0..dims.len()).map(|m| self.digit(idx, m) * strides[m]).sum();
                psi[t] = a;
            }
        }
        Self { dims: dims.to_vec(), strides, psi }
    }

    /// D(β) on an arbitrary mode.
    pub fn apply_mode_displacement(&mut self, mode: usize, beta: C64) -> Result<()> {
        if beta != ZERO {
            let u = displacement_local(beta, self.dims[mode]);
            self.apply_local(&[mode], &u);
        }
        self.check_tail()
    }

    /// D_{i,z}(β).
    pub fn apply_displacement(&mut self, ch: usize, beta: C64) -> Result<()> {
        self.apply_mode_displacement(Self::z_mode(ch), beta)
    }

    pub fn apply_waveplate(&mut self, ch: usize, phi: f64, theta: f64) -> Result<()> {
        if phi != 0.0 {
            let u = waveplate_local(phi, theta, self.dims[Self::s_mode(ch)]);
            self.apply_local(&[Self::s_mode(ch), Self::z_mode(ch)], &u);
        }
        self.check_tail()
    }

    /// exp(ζ̄ a_Ω Σ α̃_i a_{i,s} − H.c.) by Taylor expm-multiply of the sparse generator.
    pub fn apply_multimode_squeeze(&mut self, zeta: C64, pumps: &[C64]) -> Result<()> {
        let terms: Vec<(usize, C64)> = pumps.iter().enumerate().map(|(i, &p)| (Self::s_mode(i), zeta.conj() * p)).collect();
        if terms.iter().all(|t| t.1 == ZERO) {
            return self.check_tail();
        }
        let dn = self.dims[0] as f64;
        let bound: f64 = terms.iter().map(|(m, c)| 2.0 * c.norm() * (dn * self.dims[*m] as f64).sqrt()).sum();
        let steps = (bound / 2.0).ceil().max(1.0) as usize;
        let h = 1.0 / steps as f64;
        for _ in 0..steps {
            let mut acc = self.psi.clone();
            let mut term = self.psi.clone();
            for k in 1..200 {
                term = self.squeeze_generator(&term, &terms);
                let scale = h / k as f64;
                let mut tn = 0.0;
                for (a, t) in acc.iter_mut().zip(term.iter_mut()) {
                    *t *= scale;
                    *a += *t;
                    tn += t.norm_sqr();
                }
                if tn.sqrt() < 1e-17 {
                    break;
                }
            }
            self.psi = acc;
        }
        self.check_tail()
    }

    /// (Σ_i c_i a_Ω a_{m_i} − c̄_i a_Ω† a_{m_i}†) ψ.
    fn squeeze_generator(&self, v: &[C64], terms: &[(usize, C64)]) -> Vec<C64> {
        let mut out = vec![ZERO; v.len()];
        let s0 = self.strides[0];
        let d0 = self.dims[0];
        for (idx, &a) in v.iter().enumerate() {
            if a == ZERO {
                continue;
            }
            let n0 = idx / s0;
            for &(m, c) in terms {
                let nm = self.digit(idx, m);
                let sm = self.strides[m];
                if n0 > 0 && nm > 0 {
                    out[idx - s0 - sm] += a * c * ((n0 * nm) as f64).sqrt();
                }
                if n0 + 1 < d0 && nm + 1 < self.dims[m] {
                    out[idx + s0 + sm] -= a * c.conj() * (((n0 + 1) * (nm + 1)) as f64).sqrt();
                }
            }
        }
        out
    }

    /// Same unitary through a beam splitter onto the collective mode.
    pub fn apply_multimode_squeeze_collective(&mut self, zeta: C64, pumps: &[C64]) -> Result<()> {
        match pumps.len() {
            1 => {
                // B = exp(iχ n_s) gives B† a_s B = e^{iχ} a_s
                let d = self.dims[Self::s_mode(0)];
                let n = DMatrix::from_fn(d, d, |r, c| if r == c { C64::new(0.0, pumps[0].arg() * r as f64) } else { ZERO });
                let b = expm_antihermitian(&n);
                self.apply_local(&[Self::s_mode(0)], &b);
                self.apply_multimode_squeeze(zeta * pumps[0].norm(), &[C64::new(1.0, 0.0)])?;
                self.apply_local(&[Self::s_mode(0)], &b.adjoint());
                self.check_tail()
            }
            2 => {
                let k = su2_log(pumps[0], pumps[1]);
                let d = self.dims[Self::s_mode(0)];
                let b = passive_local(&k, d);
                let modes = [Self::s_mode(0), Self::s_mode(1)];
                // B† a_1 B = α̃_1 a_1 + α̃_2 a_2
                self.apply_local(&modes, &b);
                self.apply_multimode_squeeze(zeta, &[C64::new(1.0, 0.0), ZERO])?;
                self.apply_local(&modes, &b.adjoint());
                self.check_tail()
            }
            _ => Err(Error::EnvelopeRefusal(format!("collective route supports at most 2 channels, got {}", pumps.len()))),
        }
    }

    /// Probability table over Δn_i = n_{i,s} − n_{i,z}.
    pub fn outcome_probabilities(&self) -> CountTable {
        let ch = self.channels();
        let c = (self.dims[1] - 1) as i64;
        let window = OutcomeWindow { ranges: vec![(-c, c); ch] };
        let mut probs = vec![0.0; window.len()];
        let mut o = OutcomeSet(vec![0; ch]);
        for (idx, a) in self.psi.iter().enumerate() {
            let p = a.norm_sqr();
            if p == 0.0 {
                continue;
            }
            for i in 0..ch {
                o.0[i] = self.digit(idx, Self::s_mode(i)) as i64 - self.digit(idx, Self::z_mode(i)) as i64;
            }
            probs[window.index(&o).expect("difference within cutoff")] += p;
        }
        CountTable { window, probs }
    }

    /// Reduced MIR density matrix conditioned on `outcome`.
    pub fn post_state(&self, outcome: &OutcomeSet) -> Result<NumericState> {
        let ch = self.channels();
        if outcome.0.len() != ch {
            return Err(Error::OutcomeLength { expected: ch, got: outcome.0.len() });
        }
        let d0 = self.dims[0];
        let s0 = self.strides[0];
        let mut rho = DMatrix::<C64>::zeros(d0, d0);
        let mut col = vec![ZERO; d0];
        for nir in 0..s0 {
            let ok = (0..ch).all(|i| {
                self.digit(nir, Self::s_mode(i)) as i64 - self.digit(nir, Self::z_mode(i)) as i64 == outcome.0[i]
            });
            if !ok {
                continue;
            }
            let mut any = false;
            for (n, c) in col.iter_mut().enumerate() {
                *c = self.psi[n * s0 + nir];
                any |= *c != ZERO;
            }
            if !any {
                continue;
            }
            for m in 0..d0 {
                for n in m..d0 {
                    rho[(m, n)] += col[m] * col[n].conj();
                }
            }
        }
        for m in 0..d0 {
            for n in 0..m {
                rho[(m, n)] = rho[(n, m)].conj();
            }
        }
        let p: f64 = (0..d0).map(|i| rho[(i, i)].re).sum();
        if p <= 1e-12 {
            return Err(Error::VanishingOutcomeProbability(p));
        }
        NumericState::new(rho / C64::new(p, 0.0))
    }
}

/// MIR cutoff for a pure input: support plus amplification headroom, capped.
fn mir_cutoff(amps: &[C64], zeta: f64) -> usize {
    let mut support = amps.len() - 1;
    let mut tail: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    for (n, a) in amps.iter().enumerate() {
        tail -= a.norm_sqr();
        if tail < 1e-12 {
            support = n;
            break;
        }
    }
    let squeeze = (4.0 + 10.0 * zeta.sinh().powi(2)).ceil() as usize;
    (support.max(squeeze) + 10).min(MIR_CUTOFF_CAP)
}

/// Top NIR level such that a Poisson law with 1.2× the expected s-mode occupation
/// leaves below 1e-9 on the two highest levels.
fn nir_cutoff(setup: &EosSetup, amps: &[C64]) -> usize {
    let n_in: f64 = amps.iter().enumerate().map(|(n, a)| n as f64 * a.norm_sqr()).sum();
    let nu = setup.nu.norm();
    let nbar = setup
        .channels
        .iter()
        .zip(&setup.pumps)
        .map(|(c, p)| {
            let w = waveplate_matrix(c.phi, c.theta);
            let b = c.probe.norm() * w[1][0].norm().max(w[1][1].norm());
            (b + nu * p.norm() * (n_in.sqrt() + 1.0)).powi(2)
        })
        .fold(0.0, f64::max)
        * 1.2;
    let mut cut = NIR_CUTOFF;
    while cut < NIR_CUTOFF_CAP {
        // P(n ≥ cut − 1)
        let mut term = (-nbar).exp();
        let mut below = 0.0;
        for k in 0..cut - 1 {
            below += term;
            term *= nbar / (k + 1) as f64;
        }
        if 1.0 - below < 1e-9 {
            break;
        }
        cut += 1;
    }
    cut
}

/// Refuses configurations outside the validated envelope.
pub fn check_envelope(setup: &EosSetup, state: &StateModel) -> Result<Vec<C64>> {
    if setup.len() > MAX_CHANNELS {
        return Err(Error::EnvelopeRefusal(format!("{} channels (max {MAX_CHANNELS})", setup.len())));
    }
    if setup.zeta.norm() > MAX_SQUEEZE {
        return Err(Error::EnvelopeRefusal(format!("|ζ| = {} (max {MAX_SQUEEZE})", setup.zeta.norm())));
    }
    if let Some(c) = setup.channels.iter().find(|c| c.probe.norm() > MAX_PROBE) {
        return Err(Error::EnvelopeRefusal(format!("|β| = {} (max {MAX_PROBE})", c.probe.norm())));
    }
    if !state.is_pure() {
        return Err(Error::NonPureInitial);
    }
    let amps = state
        .fock_amplitudes(MIR_CUTOFF_CAP)
        .ok_or_else(|| Error::EnvelopeRefusal("no Fock amplitudes for this state".into()))?;
    let tail: f64 = amps[MIR_CUTOFF_CAP - 1..].iter().map(|a| a.norm_sqr()).sum::<f64>()
        + (1.0 - amps.iter().map(|a| a.norm_sqr()).sum::<f64>()).max(0.0);
    if tail > 1e-12 {
        return Err(Error::EnvelopeRefusal(format!("MIR input tail {tail:.2e} beyond cutoff {MIR_CUTOFF_CAP}")));
    }
    Ok(amps)
}

/// Evolves MIR ⊗ NIR vacuum through U_WP D_z(β) U_NL.
pub fn evolve(setup: &EosSetup, state: &StateModel, opts: &OracleOptions) -> Result<TruncatedRegister> {
    let amps = check_envelope(setup, state)?;
    let cut = mir_cutoff(&amps, setup.zeta.norm());
    let nir = opts.nir_cutoff.unwrap_or_else(|| nir_cutoff(setup, &amps));
    // z modes stay in vacuum through the squeeze, so they join afterwards
    let mut reg = TruncatedRegister::with_levels(&amps[..=cut], &vec![(nir + 1, 1); setup.len()]);
    reg.check_tail()?;
    match opts.route {
        SqueezeRoute::Generator => reg.apply_multimode_squeeze(setup.zeta, &setup.pumps)?,
        SqueezeRoute::Collective => reg.apply_multimode_squeeze_collective(setup.zeta, &setup.pumps)?,
    }
    let mut full = vec![cut + 1];
    full.extend(std::iter::repeat_n(nir + 1, 2 * setup.len()));
    let mut reg = reg.expand(&full);
    for (i, c) in setup.channels.iter().enumerate() {
        let (phi, theta) = opts.waveplates.as_ref().map(|w| w[i]).unwrap_or((c.phi, c.theta));
        match opts.order {
            GateOrder::Literal => {
                reg.apply_displacement(i, c.probe)?;
                reg.apply_waveplate(i, phi, theta)?;
            }
            GateOrder::Conjugated => {
                reg.apply_waveplate(i, phi, theta)?;
                // U a_z† U† = e^{iφ/2} (W̄_21 a_s† + W̄_22 a_z†)
                let w = waveplate_matrix(phi, theta);
                let ph = C64::from_polar(1.0, 0.5 * phi);
                reg.apply_mode_displacement(TruncatedRegister::s_mode(i), c.probe * ph * w[1][0].conj())?;
                reg.apply_mode_displacement(TruncatedRegister::z_mode(i), c.probe * ph * w[1][1].conj())?;
            }
        }
    }
    Ok(reg)
}

/// Convenience: full outcome table with default options.
pub fn oracle_table(setup: &EosSetup, state: &StateModel) -> Result<CountTable> {
    Ok(evolve(setup, state, &OracleOptions::default())?.outcome_probabilities())
}
