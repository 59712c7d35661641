//! The truncated DSDCE right-hand side and its summation identities.
//!
//! For `1 ≤ i ≤ k`:
//!
//! ```text
//! dξ_i/dt = ξ_{i-1} Σ_{j<i} j γ_{i-1,j} ξ_j  −  ξ_i Σ_{j≤i} j γ_{i,j} ξ_j  −  Σ_{j=i}^{k} γ_{i,j} ξ_i ξ_j
//! ```
//!
//! The first sum is empty for `i = 1`. Mass leaves the truncated system only
//! through the boundary: `Σ i dξ_i/dt = −(k+1) ξ_k Σ_{j≤k} j γ_{k,j} ξ_j`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{CoagulationKernel, KernelError, SeparableParts};
use crate::sum::{kahan_sum, KahanSum};

#[derive(Debug, Error, PartialEq)]
pub enum SystemError {
    #[error("truncation size must be at least 2, got {0}")]
    TruncationTooSmall(usize),
    #[error("component {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("component {index} is negative ({value})")]
    Negative { index: usize, value: f64 },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("identity order q = {q} must satisfy 1 <= q < k = {k}")]
    OrderOutOfRange { q: usize, k: usize },
    #[error("time must be finite and nonnegative, got {0}")]
    BadTime(f64),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Truncated state ξ = (ξ_1, …, ξ_k) at a time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeDistribution {
    values: Vec<f64>,
    time: f64,
}

impl SizeDistribution {
    pub fn new(values: Vec<f64>, time: f64) -> Result<Self, SystemError> {
        if values.len() < 2 {
            return Err(SystemError::TruncationTooSmall(values.len()));
        }
        if !(time.is_finite() && time >= 0.0) {
            return Err(SystemError::BadTime(time));
        }
        for (idx, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(SystemError::NonFinite { index: idx + 1, value: v });
            }
            if v < 0.0 {
                return Err(SystemError::Negative { index: idx + 1, value: v });
            }
        }
        Ok(Self { values, time })
    }

    pub fn zeros(k: usize) -> Result<Self, SystemError> {
        Self::new(vec![0.0; k], 0.0)
    }

    /// Builds without validation; the integrator only emits clamped, finite states.
    pub(crate) fn from_raw(values: Vec<f64>, time: f64) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite() && *v >= 0.0));
        Self { values, time }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn truncation(&self) -> usize {
        self.values.len()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// ξ_i for 1-based `i`.
    pub fn get(&self, i: usize) -> f64 {
        self.values[i - 1]
    }

    /// Total mass Σ i ξ_i, compensated.
    pub fn mass(&self) -> f64 {
        kahan_sum(self.values.iter().enumerate().map(|(n, &x)| (n + 1) as f64 * x))
    }

    /// Total number Σ ξ_i, compensated.
    pub fn number(&self) -> f64 {
        kahan_sum(self.values.iter().copied())
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self, SystemError> {
        Self::new(self.values.iter().map(|v| alpha * v).collect(), self.time)
    }
}

/// Initial data that extends consistently across truncation sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum InitialRule {
    /// ξ_1 = s, all others zero.
    Monomer,
    /// ξ_i = s r^i.
    Geometric { ratio: f64 },
    /// Explicit values; truncated or zero-padded to `k`.
    Explicit { values: Vec<f64> },
}

impl InitialRule {
    pub fn build(&self, k: usize, mass_scale: f64) -> Result<SizeDistribution, SystemError> {
        let values = match self {
            InitialRule::Monomer => {
                let mut v = vec![0.0; k];
                if let Some(first) = v.first_mut() {
                    *first = mass_scale;
                }
                v
            }
            InitialRule::Geometric { ratio } => (1..=k)
                .map(|i| mass_scale * ratio.powi(i as i32))
                .collect(),
            InitialRule::Explicit { values } => (0..k)
                .map(|n| mass_scale * values.get(n).copied().unwrap_or(0.0))
                .collect(),
        };
        SizeDistribution::new(values, 0.0)
    }
}

/// Polynomial growth declaration `|Φ_i| ≤ C i^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolynomialGrowth {
    pub constant: f64,
    pub power: f64,
}

/// Test sequence (ψ_i) or (Φ_i), 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSequence {
    pub name: String,
    values: Vec<f64>,
    pub growth: Option<PolynomialGrowth>,
}

impl TestSequence {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
            growth: None,
        }
    }

    pub fn from_fn(name: impl Into<String>, len: usize, f: impl Fn(usize) -> f64) -> Self {
        Self::new(name, (1..=len).map(f).collect())
    }

    /// Φ_i = c.
    pub fn constant(len: usize, c: f64) -> Self {
        let mut s = Self::from_fn(format!("const({c})"), len, |_| c);
        s.growth = Some(PolynomialGrowth { constant: c.abs(), power: 0.0 });
        s
    }

    /// Φ_i = i^p.
    pub fn power(len: usize, p: f64) -> Self {
        let mut s = Self::from_fn(format!("i^{p}"), len, |i| (i as f64).powf(p));
        s.growth = Some(PolynomialGrowth { constant: 1.0, power: p });
        s
    }

    /// Φ_i = (−1)^i i^p.
    pub fn alternating(len: usize, p: f64) -> Self {
        let mut s = Self::from_fn(format!("(-1)^i i^{p}"), len, |i| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sign * (i as f64).powf(p)
        });
        s.growth = Some(PolynomialGrowth { constant: 1.0, power: p });
        s
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Φ_i for 1-based `i`.
    #[inline]
    pub fn at(&self, i: usize) -> f64 {
        self.values[i - 1]
    }

    /// Checks the declared growth bound, if any.
    pub fn respects_growth(&self) -> bool {
        match self.growth {
            None => true,
            Some(g) => self
                .values
                .iter()
                .enumerate()
                .all(|(n, v)| v.abs() <= g.constant * ((n + 1) as f64).powf(g.power) * (1.0 + 1e-12)),
        }
    }
}

/// Right-hand side evaluator for a fixed kernel and truncation.
///
/// Sum-separable kernels `γ = c + g(i) + g(j)` use prefix/suffix sums (O(k));
/// tabulated kernels use the direct double loop (O(k²)). Summation order is
/// fixed, so results are bit-stable.
#[derive(Debug, Clone)]
pub struct Rhs<'a> {
    kernel: &'a CoagulationKernel,
    k: usize,
    parts: Option<SeparableParts>,
    gain: Vec<f64>,
    loss: Vec<f64>,
}

impl<'a> Rhs<'a> {
    pub fn new(kernel: &'a CoagulationKernel, k: usize) -> Result<Self, SystemError> {
        if k < 2 {
            return Err(SystemError::TruncationTooSmall(k));
        }
        if let Some(max) = kernel.max_size() {
            if k > max {
                return Err(KernelError::OutOfTable { i: k, j: k, max }.into());
            }
        }
        Ok(Self {
            kernel,
            k,
            parts: kernel.separable_parts(k),
            gain: vec![0.0; k + 1],
            loss: vec![0.0; k + 1],
        })
    }

    pub fn truncation(&self) -> usize {
        self.k
    }

    pub fn kernel(&self) -> &CoagulationKernel {
        self.kernel
    }

    /// Fills `out` with dξ/dt and returns the boundary outflow rate
    /// `(k+1) ξ_k Σ_j j γ_{k,j} ξ_j` (the mass leaving the truncated system).
    pub fn eval(&mut self, xi: &[f64], out: &mut [f64]) -> Result<f64, SystemError> {
        let k = self.k;
        if xi.len() != k {
            return Err(SystemError::LengthMismatch { expected: k, found: xi.len() });
        }
        if out.len() != k {
            return Err(SystemError::LengthMismatch { expected: k, found: out.len() });
        }
        if let Some(index) = xi.iter().position(|v| !v.is_finite()) {
            return Err(SystemError::NonFinite { index: index + 1, value: xi[index] });
        }
        // gain[i] = Σ_{j≤i} j γ_{i,j} ξ_j ; loss[i] = Σ_{j=i}^{k} γ_{i,j} ξ_j
        match &self.parts {
            Some(p) => {
                let mut mass_prefix = 0.0;
                let mut weighted_prefix = 0.0;
                for i in 1..=k {
                    let x = xi[i - 1];
                    mass_prefix += i as f64 * x;
                    weighted_prefix += i as f64 * p.g[i] * x;
                    self.gain[i] = (p.offset + p.g[i]) * mass_prefix + weighted_prefix;
                }
                let mut number_suffix = 0.0;
                let mut weighted_suffix = 0.0;
                for i in (1..=k).rev() {
                    let x = xi[i - 1];
                    number_suffix += x;
                    weighted_suffix += p.g[i] * x;
                    self.loss[i] = (p.offset + p.g[i]) * number_suffix + weighted_suffix;
                }
            }
            None => {
                let kernel = self.kernel;
                for i in 1..=k {
                    let mut gain = 0.0;
                    for j in 1..=i {
                        gain += j as f64 * kernel.rate(i, j) * xi[j - 1];
                    }
                    self.gain[i] = gain;
                    let mut loss = 0.0;
                    for j in i..=k {
                        loss += kernel.rate(i, j) * xi[j - 1];
                    }
                    self.loss[i] = loss;
                }
            }
        }
        for i in 1..=k {
            let x = xi[i - 1];
            let birth = if i > 1 { xi[i - 2] * self.gain[i - 1] } else { 0.0 };
            out[i - 1] = birth - x * self.gain[i] - x * self.loss[i];
        }
        Ok((k + 1) as f64 * xi[k - 1] * self.gain[k])
    }

    /// Per-row gross flux `birth_i + death_i`, the magnitude scale for
    /// cancellation-aware comparisons of `rhs`.
    pub fn gross_flux(&mut self, xi: &[f64]) -> Result<Vec<f64>, SystemError> {
        let mut out = vec![0.0; self.k];
        self.eval(xi, &mut out)?;
        Ok((1..=self.k)
            .map(|i| {
                let x = xi[i - 1];
                let birth = if i > 1 { xi[i - 2] * self.gain[i - 1] } else { 0.0 };
                birth + x * self.gain[i] + x * self.loss[i]
            })
            .collect())
    }
}

/// dξ/dt for a state.
pub fn rhs(state: &SizeDistribution, kernel: &CoagulationKernel) -> Result<Vec<f64>, SystemError> {
    let mut eval = Rhs::new(kernel, state.truncation())?;
    let mut out = vec![0.0; state.truncation()];
    eval.eval(state.values(), &mut out)?;
    Ok(out)
}

/// Mass outflow rate through the truncation boundary, `−Σ i dξ_i/dt`.
pub fn boundary_outflow_rate(state: &SizeDistribution, kernel: &CoagulationKernel) -> Result<f64, SystemError> {
    let mut eval = Rhs::new(kernel, state.truncation())?;
    let mut out = vec![0.0; state.truncation()];
    eval.eval(state.values(), &mut out)
}

fn check_kernel_range(kernel: &CoagulationKernel, k: usize) -> Result<(), SystemError> {
    match kernel.max_size() {
        Some(max) if k > max => Err(KernelError::OutOfTable { i: k, j: k, max }.into()),
        _ => Ok(()),
    }
}

/// Weak-form rate
/// `Σ_{i<k} Σ_{j≤i} j ψ_{i+1} γ_{i,j} ξ_i ξ_j − Σ_{i≤k} Σ_{j≤i} (j ψ_i + ψ_j) γ_{i,j} ξ_i ξ_j`,
/// which equals `Σ ψ_i dξ_i/dt`. Evaluated by the direct triangular double loop.
pub fn weak_form_rate(
    psi: &TestSequence,
    state: &SizeDistribution,
    kernel: &CoagulationKernel,
) -> Result<f64, SystemError> {
    let k = state.truncation();
    if psi.len() != k {
        return Err(SystemError::LengthMismatch { expected: k, found: psi.len() });
    }
    check_kernel_range(kernel, k)?;
    let xi = state.values();
    let mut acc = KahanSum::new();
    for i in 1..=k {
        let xi_i = xi[i - 1];
        if xi_i == 0.0 {
            continue;
        }
        for j in 1..=i {
            let pair = kernel.rate(i, j) * xi_i * xi[j - 1];
            let gain = if i < k { j as f64 * psi.at(i + 1) } else { 0.0 };
            acc.add((gain - (j as f64 * psi.at(i) + psi.at(j))) * pair);
        }
    }
    Ok(acc.value())
}

/// Finite-q identity rate for `d/dt Σ_{i≤q} Φ_i ξ_i`:
/// `Σ_{P1} j Φ_{i+1} γ ξ_i ξ_j − Σ_{P2} (j Φ_i + Φ_j) γ ξ_i ξ_j − Σ_{P3} Φ_j γ ξ_i ξ_j`
/// with `P1 = {i<q, j≤i}`, `P2 = {i≤q, j≤i}`, `P3 = {q<i≤k, j≤q}`.
/// The P3 sum is cut at `i = k`, which is exact for truncated states.
pub fn finite_identity_rate(
    phi: &TestSequence,
    state: &SizeDistribution,
    kernel: &CoagulationKernel,
    q: usize,
) -> Result<f64, SystemError> {
    let k = state.truncation();
    if q == 0 || q >= k {
        return Err(SystemError::OrderOutOfRange { q, k });
    }
    if phi.len() < q {
        return Err(SystemError::LengthMismatch { expected: q, found: phi.len() });
    }
    check_kernel_range(kernel, k)?;
    let xi = state.values();
    let mut acc = KahanSum::new();
    for i in 1..=q {
        let xi_i = xi[i - 1];
        for j in 1..=i {
            let pair = kernel.rate(i, j) * xi_i * xi[j - 1];
            let gain = if i < q { j as f64 * phi.at(i + 1) } else { 0.0 };
            acc.add((gain - (j as f64 * phi.at(i) + phi.at(j))) * pair);
        }
    }
    for i in (q + 1)..=k {
        let xi_i = xi[i - 1];
        if xi_i == 0.0 {
            continue;
        }
        for j in 1..=q {
            acc.add(-phi.at(j) * kernel.rate(i, j) * xi_i * xi[j - 1]);
        }
    }
    Ok(acc.value())
}

/// `Σ_{i≤q} Φ_i ξ_i`, compensated.
pub fn partial_functional(phi: &TestSequence, state: &SizeDistribution, q: usize) -> f64 {
    kahan_sum((1..=q.min(state.truncation())).map(|i| phi.at(i) * state.get(i)))
}
