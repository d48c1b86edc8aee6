//! Pattern correlation by decomposition into a fixed open-circuit kernel and
//! per-state port currents, `C = I^H K_oc I`, with a direct-quadrature route
//! kept alongside as the reference.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::em_model::{PatternGrid, PowerAngularSpectrum};
use crate::impm::StatePattern;
use crate::numerics::{bessel_j0, min_hermitian_eigenvalue, ComplexMatrix, NumericsError, QuadratureGrid};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PcdmError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("state {state} has zero radiated energy at frequency index {frequency}")]
    DegenerateState { state: usize, frequency: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid ordering: {0}")]
    InvalidOrdering(String),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("kernel invariant violated: {0}")]
    Kernel(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Open-circuit correlation kernel, one `(Q+1) x (Q+1)` matrix per frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternKernel {
    k: Vec<ComplexMatrix>,
    frequencies: Vec<f64>,
    pas: PowerAngularSpectrum,
    grid: QuadratureGrid,
}

impl PatternKernel {
    pub fn ports(&self) -> usize {
        self.k[0].nrows()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn matrix(&self, t: usize) -> &ComplexMatrix {
        &self.k[t]
    }

    pub fn pas(&self) -> &PowerAngularSpectrum {
        &self.pas
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    /// Hermitian within 1e-10 and no eigenvalue below -1e-9, both relative
    /// to the largest diagonal entry.
    pub fn check_invariants(&self) -> Result<(), PcdmError> {
        for (t, k) in self.k.iter().enumerate() {
            let scale = (0..k.nrows()).map(|i| k[(i, i)].norm()).fold(1e-300, f64::max);
            let herm = (k - k.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max);
            if herm > 1e-10 * scale {
                return Err(PcdmError::Kernel(format!("frequency {t}: Hermitian defect {herm:.3e}")));
            }
            let min = min_hermitian_eigenvalue(k);
            if min < -1e-9 * scale {
                return Err(PcdmError::Kernel(format!("frequency {t}: eigenvalue {min:.3e} below zero")));
            }
        }
        Ok(())
    }

    /// Test hook: overwrites one kernel matrix without any checks.
    #[doc(hidden)]
    pub fn matrix_mut(&mut self, t: usize) -> &mut ComplexMatrix {
        &mut self.k[t]
    }
}

fn check_grid(patterns: &PatternGrid, grid: &QuadratureGrid) -> Result<(), PcdmError> {
    let pg = patterns.grid();
    if pg.support() != grid.support() || pg.len() != grid.len() {
        return Err(PcdmError::GridMismatch(format!(
            "patterns use {} with {} nodes, quadrature is {} with {} nodes",
            pg.support(),
            pg.len(),
            grid.support(),
            grid.len()
        )));
    }
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12);
    if !(close(pg.theta(), grid.theta()) && close(pg.phi(), grid.phi()) && close(pg.weights(), grid.weights())) {
        return Err(PcdmError::GridMismatch("pattern nodes differ from the quadrature nodes".into()));
    }
    Ok(())
}

/// `K[p,q] = sum_nodes w S (conj(e_theta,p) e_theta,q + conj(e_phi,p) e_phi,q)`,
/// assembled as `A^H A` with `A` the weighted field samples of both
/// polarizations.
pub fn compute_kernel(
    patterns: &PatternGrid,
    pas: &PowerAngularSpectrum,
    grid: &QuadratureGrid,
) -> Result<PatternKernel, PcdmError> {
    check_grid(patterns, grid)?;
    let nodes = grid.len();
    let ports = patterns.ports();
    let scale: Vec<f64> = grid.nodes().map(|(theta, _, w)| (w * pas.weight(theta)).sqrt()).collect();
    let mut k = Vec::with_capacity(patterns.frequencies().len());
    for t in 0..patterns.frequencies().len() {
        let mut a = ComplexMatrix::zeros(2 * nodes, ports);
        for p in 0..ports {
            let (et, ep) = (patterns.e_theta(t, p), patterns.e_phi(t, p));
            for n in 0..nodes {
                a[(n, p)] = et[n] * scale[n];
                a[(nodes + n, p)] = ep[n] * scale[n];
            }
        }
        let m = a.ad_mul(&a);
        k.push((&m + m.adjoint()).scale(0.5));
    }
    Ok(PatternKernel { k, frequencies: patterns.frequencies().to_vec(), pas: *pas, grid: grid.clone() })
}

/// Magnitude correlation matrix of `M` states at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    pub frequency_hz: f64,
    pub values: DMatrix<f64>,
}

impl CovarianceMatrix {
    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    /// Symmetric, unit diagonal within 1e-9, entries in `[0, 1 + 1e-9]`.
    pub fn check_invariants(&self) -> Result<(), PcdmError> {
        let v = &self.values;
        if v.nrows() != v.ncols() {
            return Err(PcdmError::Shape(format!("{}x{} covariance", v.nrows(), v.ncols())));
        }
        for i in 0..v.nrows() {
            if (v[(i, i)] - 1.0).abs() > 1e-9 {
                return Err(PcdmError::Shape(format!("diagonal entry {i} is {}", v[(i, i)])));
            }
            for j in 0..v.ncols() {
                let x = v[(i, j)];
                if !(0.0..=1.0 + 1e-9).contains(&x) || (x - v[(j, i)]).abs() > 1e-12 {
                    return Err(PcdmError::Shape(format!("entry ({i},{j}) = {x} out of range or asymmetric")));
                }
            }
        }
        Ok(())
    }
}

fn normalize(c: &ComplexMatrix, frequency: usize, frequency_hz: f64) -> Result<CovarianceMatrix, PcdmError> {
    let m = c.nrows();
    let diag: Vec<f64> = (0..m).map(|i| c[(i, i)].re).collect();
    if let Some(state) = diag.iter().position(|&d| !(d > 0.0 && d.is_finite())) {
        return Err(PcdmError::DegenerateState { state, frequency });
    }
    let mut values = DMatrix::from_element(m, m, 1.0);
    for i in 0..m {
        for j in i + 1..m {
            let r = 0.5 * (c[(i, j)].norm() + c[(j, i)].norm()) / (diag[i] * diag[j]).sqrt();
            values[(i, j)] = r;
            values[(j, i)] = r;
        }
    }
    Ok(CovarianceMatrix { frequency_hz, values })
}

/// `rho0 = |C ./ G|` with `C = I^H K I` and `G_ij = sqrt(C_ii C_jj)`.
/// `currents` is `(Q+1) x M`, one column per state.
pub fn covariance_from_currents(
    kernel: &PatternKernel,
    t: usize,
    currents: &ComplexMatrix,
) -> Result<CovarianceMatrix, PcdmError> {
    let k = kernel
        .k
        .get(t)
        .ok_or_else(|| PcdmError::Shape(format!("kernel has no frequency index {t}")))?;
    if currents.nrows() != k.nrows() {
        return Err(PcdmError::Shape(format!(
            "current matrix has {} rows, kernel has {} ports",
            currents.nrows(),
            k.nrows()
        )));
    }
    // Each entry depends only on its own two columns, so a state subset
    // reproduces the matching block of a larger set bit for bit.
    let (p, m) = currents.shape();
    let mut ki = ComplexMatrix::zeros(p, m);
    for s in 0..m {
        for q in 0..p {
            let iq = currents[(q, s)];
            for r in 0..p {
                ki[(r, s)] += k[(r, q)] * iq;
            }
        }
    }
    let c = ComplexMatrix::from_fn(m, m, |i, j| (0..p).map(|r| currents[(r, i)].conj() * ki[(r, j)]).sum());
    normalize(&c, t, kernel.frequencies[t])
}

/// Pairwise correlation by direct quadrature of the state patterns.
pub fn covariance_direct(
    states: &[StatePattern],
    t: usize,
    frequency_hz: f64,
    pas: &PowerAngularSpectrum,
    grid: &QuadratureGrid,
) -> Result<CovarianceMatrix, PcdmError> {
    for s in states {
        if s.e_theta.len() <= t || s.e_theta[t].len() != grid.len() || s.e_phi[t].len() != grid.len() {
            return Err(PcdmError::GridMismatch("state pattern does not cover the quadrature nodes".into()));
        }
    }
    let ws: Vec<f64> = grid.nodes().map(|(theta, _, w)| w * pas.weight(theta)).collect();
    let m = states.len();
    let mut c = ComplexMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let (a, b) = (&states[i], &states[j]);
            let mut acc = Complex64::new(0.0, 0.0);
            for (n, w) in ws.iter().enumerate() {
                acc += (a.e_theta[t][n].conj() * b.e_theta[t][n] + a.e_phi[t][n].conj() * b.e_phi[t][n]) * w;
            }
            c[(i, j)] = acc;
            c[(j, i)] = acc.conj();
        }
    }
    normalize(&c, t, frequency_hz)
}

/// Target covariance `J0(2 pi |n - n'| W / (N - 1))`, signed.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetCovariance {
    pub ports: usize,
    pub aperture_wavelengths: f64,
    pub values: DMatrix<f64>,
}

pub fn target_covariance(ports: usize, aperture_wavelengths: f64) -> Result<TargetCovariance, PcdmError> {
    if ports < 2 {
        return Err(PcdmError::InvalidTarget(format!("need at least 2 ports, got {ports}")));
    }
    if !(aperture_wavelengths > 0.0 && aperture_wavelengths.is_finite()) {
        return Err(PcdmError::InvalidTarget(format!("aperture {aperture_wavelengths} must be positive")));
    }
    let step = 2.0 * std::f64::consts::PI * aperture_wavelengths / (ports - 1) as f64;
    let lags = (0..ports).map(|d| bessel_j0(step * d as f64)).collect::<Result<Vec<_>, _>>()?;
    let values = DMatrix::from_fn(ports, ports, |i, j| lags[i.abs_diff(j)]);
    Ok(TargetCovariance { ports, aperture_wavelengths, values })
}

/// Validates a 1-based ordering of `n` distinct states out of `m`.
pub fn check_ordering(d: &[usize], m: usize) -> Result<(), PcdmError> {
    let mut seen = vec![false; m];
    for &x in d {
        if x == 0 || x > m {
            return Err(PcdmError::InvalidOrdering(format!("state {x} outside 1..={m}")));
        }
        if std::mem::replace(&mut seen[x - 1], true) {
            return Err(PcdmError::InvalidOrdering(format!("state {x} repeated")));
        }
    }
    Ok(())
}

/// `sum_t sum_n sum_n' | |rho(D)[n,n']| - |rho*[n,n']| | / (T N^2)`, with `d`
/// the 1-based states assigned to ports `1..N`.
pub fn average_error(rho: &[CovarianceMatrix], target: &TargetCovariance, d: &[usize]) -> Result<f64, PcdmError> {
    let n = target.ports;
    if d.len() != n {
        return Err(PcdmError::InvalidOrdering(format!("ordering has {} entries for {n} ports", d.len())));
    }
    if rho.is_empty() {
        return Err(PcdmError::Shape("no frequency samples".into()));
    }
    for r in rho {
        check_ordering(d, r.size())?;
    }
    Ok(average_error_unchecked(rho.iter().map(|r| &r.values), &target.values.map(f64::abs), d))
}

/// [`average_error`] without validation. `target_abs` holds `|rho*|`;
/// `d` must be a valid ordering for every matrix.
pub fn average_error_unchecked<'a>(
    rho: impl ExactSizeIterator<Item = &'a DMatrix<f64>>,
    target_abs: &DMatrix<f64>,
    d: &[usize],
) -> f64 {
    let n = d.len();
    let t = rho.len();
    let mut sum = 0.0;
    for r in rho {
        for a in 0..n {
            for b in 0..n {
                sum += (r[(d[a] - 1, d[b] - 1)].abs() - target_abs[(a, b)]).abs();
            }
        }
    }
    sum / (t * n * n) as f64
}

/// Shared kernels keyed by a SHA-256 digest of the patterns, PAS and grid.
#[derive(Debug, Default)]
pub struct KernelCache {
    entries: Mutex<HashMap<String, Arc<PatternKernel>>>,
}

impl KernelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_compute(
        &self,
        patterns: &PatternGrid,
        pas: &PowerAngularSpectrum,
        grid: &QuadratureGrid,
    ) -> Result<Arc<PatternKernel>, PcdmError> {
        let key = kernel_key(patterns, pas, grid);
        if let Some(k) = self.entries.lock().unwrap().get(&key) {
            return Ok(Arc::clone(k));
        }
        let k = Arc::new(compute_kernel(patterns, pas, grid)?);
        Ok(Arc::clone(self.entries.lock().unwrap().entry(key).or_insert(k)))
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn kernel_key(patterns: &PatternGrid, pas: &PowerAngularSpectrum, grid: &QuadratureGrid) -> String {
    let mut h = Sha256::new();
    let mut put = |x: f64| h.update(x.to_le_bytes());
    put(patterns.ports() as f64);
    put(pas.density);
    for &f in patterns.frequencies() {
        put(f);
    }
    for (t, p, w) in grid.nodes() {
        put(t);
        put(p);
        put(w);
    }
    for t in 0..patterns.frequencies().len() {
        for p in 0..patterns.ports() {
            for v in patterns.e_theta(t, p).iter().chain(patterns.e_phi(t, p)) {
                put(v.re);
                put(v.im);
            }
        }
    }
    h.update(pas.support.as_str().as_bytes());
    h.update(grid.support().as_str().as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
