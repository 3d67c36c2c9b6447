//! Moment-based polynomial chaos: orthonormal polynomials, Gaussian
//! quadrature and surrogate models built from raw sample moments.
//!
//! No distribution family is assumed for the random inputs. Everything is
//! derived from raw moments `mu_k`:
//!
//! 1. The `(p+1) x (p+1)` Hankel matrix `H[i][j] = mu_(i+j)` is factored as
//!    `H = R' R` (Cholesky, `R` upper triangular). Positive definiteness of
//!    `H` is exactly the existence condition for an orthonormal family up to
//!    degree `p`.
//! 2. The three-term recurrence coefficients come directly from the factor:
//!    `a_j = r_(j,j+1)/r_(j,j) - r_(j-1,j)/r_(j-1,j-1)` and
//!    `b_j = r_(j+1,j+1)/r_(j,j)`, with `r_(0,0) = 1`, `r_(0,1) = 0`
//!    (indices 1-based). Monomial coefficients of the polynomials are then
//!    recovered by running the recurrence forward, never by inverting `R`.
//! 3. Quadrature nodes are the eigenvalues of the symmetric tridiagonal
//!    Jacobi matrix of the `a`/`b` coefficients; weights are the squared
//!    first components of its normalized eigenvectors. The `p`-point rule
//!    integrates polynomials up to degree `2p - 1` exactly against the
//!    sample measure.
//!
//! Multivariate bases are tensor products over a graded-lexicographic
//! multi-index set of total degree at most `p`, and a surrogate is the
//! discrete projection of model outputs at the tensor quadrature nodes onto
//! that basis.
//!
//! # Archive layout
//!
//! [`Surrogate::save_archive`] writes a single binary file:
//!
//! ```text
//! magic   b"APCSURR1"                     8 bytes
//! version u32, little endian              currently 1
//! dims    u64 x 5, little endian          n_vars, p, n_indices, n_nodes,
//!                                         n_times
//! per variable, f64 little endian:
//!         a[p], b[p],
//!         coeffs[j][0..=j] for j = 0..=p  (each polynomial's monomial
//!                                          coefficients, ascending power)
//!         nodes[p], weights[p]
//! then:   indices[n_indices][n_vars]      u64 little endian
//!         node_tuples[n_nodes][n_vars]    f64 little endian
//!         tensor_weights[n_nodes]         f64
//!         times[n_times]                  f64
//!         coefficients[n_indices][n_times] f64
//!         node_outputs[n_nodes][n_times]   f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;

use crate::error::{ApcError, ArchiveError};

/// Raw moments `mu_0 .. mu_2p` of a scalar sample set, the complete input
/// the basis construction needs.
#[derive(Debug, Clone)]
pub struct MomentSet {
    p: usize,
    moments: Vec<f64>,
}

impl MomentSet {
    /// Estimates raw moments from samples.
    ///
    /// Moments are accumulated about the sample mean and shifted back to
    /// raw form with the binomial theorem, which keeps the Hankel matrix
    /// well conditioned for samples with large offsets.
    ///
    /// # Errors
    ///
    /// Returns an error if `p < 1`, fewer than `2p + 1` samples are given,
    /// samples are non-finite, or the moment Hankel matrix is not positive
    /// definite (degenerate samples), naming the failing leading minor.
    pub fn from_samples(samples: &[f64], p: usize) -> Result<Self, ApcError> {
        if p < 1 {
            return Err(ApcError::InvalidOrder { p });
        }
        let needed = 2 * p + 1;
        if samples.len() < needed {
            return Err(ApcError::TooFewSamples { needed, found: samples.len() });
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(ApcError::NonFinite { what: "samples" });
        }

        let q = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / q;
        let mut central = vec![0.0; needed];
        central[0] = 1.0;
        for s in samples {
            let d = s - mean;
            let mut power = d;
            for m in central.iter_mut().skip(1) {
                *m += power;
                power *= d;
            }
        }
        for m in central.iter_mut().skip(1) {
            *m /= q;
        }

        let mut moments = vec![0.0; needed];
        for (k, out) in moments.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..=k {
                acc += binomial(k, j) * central[j] * mean.powi((k - j) as i32);
            }
            *out = acc;
        }

        Self::from_raw_moments(moments)
    }

    /// Wraps exact or externally computed raw moments `mu_0 .. mu_2p`.
    ///
    /// # Errors
    ///
    /// Returns an error if the count is not odd and at least 3, `mu_0` is
    /// not 1, values are non-finite, or the Hankel matrix is not positive
    /// definite.
    pub fn from_raw_moments(moments: Vec<f64>) -> Result<Self, ApcError> {
        if moments.len() < 3 || moments.len() % 2 == 0 {
            let found = moments.len();
            let p = found.saturating_sub(1) / 2;
            return Err(ApcError::MomentCount { p, expected: 2 * p.max(1) + 1, found });
        }
        if moments.iter().any(|m| !m.is_finite()) {
            return Err(ApcError::NonFinite { what: "moments" });
        }
        if (moments[0] - 1.0).abs() > 1e-12 {
            return Err(ApcError::BadZerothMoment { found: moments[0] });
        }
        let p = (moments.len() - 1) / 2;
        let set = Self { p, moments };
        // Constructing the factor doubles as the positive-definiteness check.
        cholesky_upper(&set.hankel())?;
        Ok(set)
    }

    /// Highest polynomial order the moments support.
    pub fn order(&self) -> usize {
        self.p
    }

    /// Raw moment `mu_k`.
    pub fn raw(&self, k: usize) -> f64 {
        self.moments[k]
    }

    /// All raw moments `mu_0 .. mu_2p`.
    pub fn moments(&self) -> &[f64] {
        &self.moments
    }

    /// The `(p+1) x (p+1)` moment Hankel matrix `H[i][j] = mu_(i+j)`.
    pub fn hankel(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.p + 1, self.p + 1, |i, j| self.moments[i + j])
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Upper-triangular Cholesky factor `R` with `H = R' R`.
///
/// Fails on the first non-positive pivot, which identifies the smallest
/// non-positive leading minor.
fn cholesky_upper(h: &DMatrix<f64>) -> Result<DMatrix<f64>, ApcError> {
    let n = h.nrows();
    let mut r = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = h[(j, j)];
        for k in 0..j {
            pivot -= r[(k, j)] * r[(k, j)];
        }
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(ApcError::HankelNotPositiveDefinite { minor: j + 1 });
        }
        let d = pivot.sqrt();
        r[(j, j)] = d;
        for i in (j + 1)..n {
            let mut acc = h[(j, i)];
            for k in 0..j {
                acc -= r[(k, j)] * r[(k, i)];
            }
            r[(j, i)] = acc / d;
        }
    }
    Ok(r)
}

/// Orthonormal polynomial family and its Gaussian quadrature rule for one
/// random variable.
#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateBasis {
    p: usize,
    /// Recurrence coefficients `a_1 .. a_p`.
    a: Vec<f64>,
    /// Recurrence coefficients `b_1 .. b_p`, all positive.
    b: Vec<f64>,
    /// Monomial coefficients of `psi_0 .. psi_p`, ascending powers.
    coeffs: Vec<Vec<f64>>,
    /// Quadrature nodes, ascending.
    nodes: Vec<f64>,
    /// Quadrature weights, positive, summing to one.
    weights: Vec<f64>,
}

/// Builds the orthonormal basis and `p`-point quadrature rule from moments.
///
/// # Errors
///
/// Returns an error if the moment Hankel matrix fails its Cholesky
/// factorization, meaning the moment set is inconsistent.
pub fn build_univariate_basis(moments: &MomentSet) -> Result<UnivariateBasis, ApcError> {
    let p = moments.order();
    let r = cholesky_upper(&moments.hankel())?;

    // r_(0,0) = 1 and r_(0,1) = 0 seed the 1-based formulas, so a_1 has no
    // second term.
    let mut a = Vec::with_capacity(p);
    let mut b = Vec::with_capacity(p);
    for j in 1..=p {
        let term1 = r[(j - 1, j)] / r[(j - 1, j - 1)];
        let term2 = if j >= 2 { r[(j - 2, j - 1)] / r[(j - 2, j - 2)] } else { 0.0 };
        a.push(term1 - term2);
        b.push(r[(j, j)] / r[(j - 1, j - 1)]);
    }

    // psi_j = ((x - a_j) psi_(j-1) - b_(j-1) psi_(j-2)) / b_j, run forward
    // in monomial form.
    let mut coeffs: Vec<Vec<f64>> = Vec::with_capacity(p + 1);
    coeffs.push(vec![1.0]);
    for j in 1..=p {
        let prev = &coeffs[j - 1];
        let mut next = vec![0.0; j + 1];
        for (d, c) in prev.iter().enumerate() {
            next[d + 1] += c;
            next[d] -= a[j - 1] * c;
        }
        if j >= 2 {
            for (d, c) in coeffs[j - 2].iter().enumerate() {
                next[d] -= b[j - 2] * c;
            }
        }
        for c in &mut next {
            *c /= b[j - 1];
        }
        coeffs.push(next);
    }

    let (nodes, weights) = golub_welsch(&a, &b);

    Ok(UnivariateBasis { p, a, b, coeffs, nodes, weights })
}

/// Nodes and weights of the Gaussian rule: eigenvalues of the Jacobi matrix
/// and squared first components of its normalized eigenvectors.
fn golub_welsch(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = a.len();
    let mut jacobi = DMatrix::zeros(p, p);
    for j in 0..p {
        jacobi[(j, j)] = a[j];
        if j + 1 < p {
            jacobi[(j, j + 1)] = b[j];
            jacobi[(j + 1, j)] = b[j];
        }
    }
    let eigen = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..p)
        .map(|i| {
            let first = eigen.eigenvectors[(0, i)];
            (eigen.eigenvalues[i], first * first)
        })
        .collect();
    pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    pairs.into_iter().unzip()
}

impl UnivariateBasis {
    /// Polynomial order `p`.
    pub fn order(&self) -> usize {
        self.p
    }

    /// Recurrence coefficients `a_1 .. a_p`.
    pub fn recurrence_a(&self) -> &[f64] {
        &self.a
    }

    /// Recurrence coefficients `b_1 .. b_p`.
    pub fn recurrence_b(&self) -> &[f64] {
        &self.b
    }

    /// Monomial coefficients of `psi_j`, ascending powers, length `j + 1`.
    pub fn coefficients(&self, j: usize) -> &[f64] {
        &self.coeffs[j]
    }

    /// Quadrature nodes, ascending.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Quadrature weights matching [`nodes`](Self::nodes).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Evaluates `psi_j(x)` through the recurrence (numerically stabler
    /// than the monomial form).
    pub fn eval(&self, j: usize, x: f64) -> f64 {
        debug_assert!(j <= self.p);
        let mut prev = 0.0;
        let mut cur = 1.0;
        for step in 1..=j {
            let next =
                ((x - self.a[step - 1]) * cur - if step >= 2 { self.b[step - 2] * prev } else { 0.0 })
                    / self.b[step - 1];
            prev = cur;
            cur = next;
        }
        cur
    }

    /// Evaluates `psi_0(x) .. psi_p(x)` in one recurrence sweep.
    pub fn eval_all(&self, x: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.p + 1);
        out.push(1.0);
        if self.p == 0 {
            return out;
        }
        out.push((x - self.a[0]) / self.b[0]);
        for j in 2..=self.p {
            let next = ((x - self.a[j - 1]) * out[j - 1] - self.b[j - 2] * out[j - 2])
                / self.b[j - 1];
            out.push(next);
        }
        out
    }

    /// The rule's approximation of the raw moment `mu_k`,
    /// `sum_i w_i node_i^k`. Exact for `k <= 2p - 1`.
    pub fn rule_moment(&self, k: usize) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(node, w)| w * node.powi(k as i32))
            .sum()
    }
}

/// Largest scaled deviation `|rule_moment(k) - mu_k| / (1 + |mu_k|)` over
/// the guaranteed-exact range `k = 0 .. 2p - 1`.
pub fn quadrature_exactness_check(basis: &UnivariateBasis, moments: &MomentSet) -> f64 {
    (0..2 * basis.order())
        .map(|k| {
            let mu = moments.raw(k);
            (basis.rule_moment(k) - mu).abs() / (1.0 + mu.abs())
        })
        .fold(0.0, f64::max)
}

/// Multi-indices of total degree at most `p` over `n_vars` variables, in
/// graded lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndexSet {
    n_vars: usize,
    degree: usize,
    indices: Vec<Vec<usize>>,
}

/// Enumerates the multi-index set: grades ascending, lexicographic inside a
/// grade. The first index is always all-zeros.
pub fn build_index_set(n_vars: usize, degree: usize) -> MultiIndexSet {
    assert!(n_vars >= 1, "need at least one variable");
    let mut indices = Vec::new();
    let mut scratch = vec![0usize; n_vars];
    for total in 0..=degree {
        compositions(total, 0, &mut scratch, &mut indices);
    }
    MultiIndexSet { n_vars, degree, indices }
}

fn compositions(remaining: usize, pos: usize, scratch: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if pos == scratch.len() - 1 {
        scratch[pos] = remaining;
        out.push(scratch.clone());
        return;
    }
    for v in 0..=remaining {
        scratch[pos] = v;
        compositions(remaining - v, pos + 1, scratch, out);
    }
}

impl MultiIndexSet {
    /// Number of indices, `C(n_vars + degree, degree)`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    /// True when the set is empty (never, for a valid construction).
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Number of variables.
    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    /// Maximum total degree.
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// The `k`-th multi-index.
    pub fn index(&self, k: usize) -> &[usize] {
        &self.indices[k]
    }

    /// All indices in graded lexicographic order.
    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    /// Position of a multi-index in the set, if present.
    pub fn position(&self, index: &[usize]) -> Option<usize> {
        self.indices.iter().position(|i| i == index)
    }
}

/// Tensor-product basis over several variables: per-variable orthonormal
/// families, the multi-index set, and the tensorized quadrature rule.
#[derive(Debug, Clone)]
pub struct ApcBasis {
    bases: Vec<UnivariateBasis>,
    index_set: MultiIndexSet,
    node_tuples: Vec<Vec<f64>>,
    tensor_weights: Vec<f64>,
}

/// Assembles the multivariate basis from per-variable univariate ones.
///
/// All univariate bases must share the same order, which also bounds the
/// total degree of the index set.
///
/// # Errors
///
/// Returns an error if no bases are given or their orders differ.
pub fn build_apc_basis(bases: Vec<UnivariateBasis>) -> Result<ApcBasis, ApcError> {
    let n_vars = bases.len();
    if n_vars == 0 {
        return Err(ApcError::BasisCount { expected: 1, found: 0 });
    }
    let p = bases[0].order();
    if bases.iter().any(|b| b.order() != p) {
        return Err(ApcError::InvalidOrder { p });
    }

    let index_set = build_index_set(n_vars, p);

    let n_nodes = p.pow(n_vars as u32);
    let mut node_tuples = Vec::with_capacity(n_nodes);
    let mut tensor_weights = Vec::with_capacity(n_nodes);
    let mut counter = vec![0usize; n_vars];
    loop {
        let tuple: Vec<f64> = counter.iter().zip(&bases).map(|(&i, b)| b.nodes()[i]).collect();
        let weight: f64 = counter.iter().zip(&bases).map(|(&i, b)| b.weights()[i]).product();
        node_tuples.push(tuple);
        tensor_weights.push(weight);
        // Odometer increment, last variable fastest.
        let mut pos = n_vars;
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            counter[pos] += 1;
            if counter[pos] < p {
                break;
            }
            counter[pos] = 0;
        }
        if counter.iter().all(|&c| c == 0) {
            break;
        }
    }
    debug_assert_eq!(node_tuples.len(), n_nodes);

    Ok(ApcBasis { bases, index_set, node_tuples, tensor_weights })
}

/// Builds the multivariate basis straight from a sample matrix, one
/// column of samples per random variable.
///
/// # Errors
///
/// Returns an error if any column has too few samples or degenerate
/// moments.
pub fn basis_from_samples(samples: &DMatrix<f64>, p: usize) -> Result<ApcBasis, ApcError> {
    let mut bases = Vec::with_capacity(samples.ncols());
    for c in 0..samples.ncols() {
        let column: Vec<f64> = samples.column(c).iter().cloned().collect();
        bases.push(build_univariate_basis(&MomentSet::from_samples(&column, p)?)?);
    }
    build_apc_basis(bases)
}

impl ApcBasis {
    /// Number of random variables.
    pub fn n_vars(&self) -> usize {
        self.bases.len()
    }

    /// Shared univariate order `p`.
    pub fn order(&self) -> usize {
        self.bases[0].order()
    }

    /// Per-variable univariate bases.
    pub fn univariate(&self, var: usize) -> &UnivariateBasis {
        &self.bases[var]
    }

    /// The graded-lexicographic multi-index set.
    pub fn index_set(&self) -> &MultiIndexSet {
        &self.index_set
    }

    /// Tensor quadrature node tuples, one entry per variable.
    pub fn node_tuples(&self) -> &[Vec<f64>] {
        &self.node_tuples
    }

    /// Tensor quadrature weights, positive and summing to one.
    pub fn tensor_weights(&self) -> &[f64] {
        &self.tensor_weights
    }

    /// Evaluates the multivariate polynomial `Psi_k` at a point.
    ///
    /// # Errors
    ///
    /// Returns an error if the point dimension disagrees with the basis.
    pub fn eval_multi(&self, k: usize, point: &[f64]) -> Result<f64, ApcError> {
        if point.len() != self.n_vars() {
            return Err(ApcError::PointDimension {
                expected: self.n_vars(),
                found: point.len(),
            });
        }
        let index = self.index_set.index(k);
        let mut acc = 1.0;
        for ((degree, basis), x) in index.iter().zip(&self.bases).zip(point) {
            acc *= basis.eval(*degree, *x);
        }
        Ok(acc)
    }
}

/// A polynomial-chaos surrogate of one scalar model output over a shared
/// time grid.
#[derive(Debug, Clone)]
pub struct Surrogate {
    basis: ApcBasis,
    times: Vec<f64>,
    /// Expansion coefficients, `n_indices x n_times`.
    coefficients: DMatrix<f64>,
    /// Raw model outputs at the quadrature nodes, `n_nodes x n_times`.
    node_outputs: DMatrix<f64>,
}

/// Projects model outputs sampled at the tensor quadrature nodes onto the
/// basis: `alpha_k(t) = sum_nodes w * output(t) * Psi_k(node)`.
///
/// # Errors
///
/// Returns an error if the output row count differs from the node count or
/// the time axis length differs from the output columns.
pub fn fit_surrogate(
    basis: ApcBasis,
    times: Vec<f64>,
    node_outputs: DMatrix<f64>,
) -> Result<Surrogate, ApcError> {
    let n_nodes = basis.node_tuples().len();
    if node_outputs.nrows() != n_nodes {
        return Err(ApcError::OutputRows { expected: n_nodes, found: node_outputs.nrows() });
    }
    if times.len() != node_outputs.ncols() {
        return Err(ApcError::TimeIndex { index: times.len(), len: node_outputs.ncols() });
    }
    if node_outputs.iter().any(|x| !x.is_finite()) {
        return Err(ApcError::NonFinite { what: "node outputs" });
    }

    let n_indices = basis.index_set().len();
    let mut design = DMatrix::zeros(n_nodes, n_indices);
    for (row, tuple) in basis.node_tuples().iter().enumerate() {
        for k in 0..n_indices {
            design[(row, k)] = basis.eval_multi(k, tuple)?;
        }
    }
    let mut weighted = node_outputs.clone();
    for (mut row, w) in weighted.row_iter_mut().zip(basis.tensor_weights()) {
        row *= *w;
    }
    let coefficients = design.transpose() * weighted;

    Ok(Surrogate { basis, times, coefficients, node_outputs })
}

impl Surrogate {
    /// The multivariate basis the surrogate is expanded in.
    pub fn basis(&self) -> &ApcBasis {
        &self.basis
    }

    /// The shared time grid, seconds.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Expansion coefficients, `n_indices x n_times`.
    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    /// Raw model outputs at the quadrature nodes, `n_nodes x n_times`.
    pub fn node_outputs(&self) -> &DMatrix<f64> {
        &self.node_outputs
    }

    fn check_time(&self, t_index: usize) -> Result<(), ApcError> {
        if t_index >= self.times.len() {
            return Err(ApcError::TimeIndex { index: t_index, len: self.times.len() });
        }
        Ok(())
    }

    /// Evaluates the surrogate at one time step and input point.
    ///
    /// # Errors
    ///
    /// Returns an error for an out-of-range time index or wrong point
    /// dimension.
    pub fn eval(&self, t_index: usize, point: &[f64]) -> Result<f64, ApcError> {
        self.check_time(t_index)?;
        if point.len() != self.basis.n_vars() {
            return Err(ApcError::PointDimension {
                expected: self.basis.n_vars(),
                found: point.len(),
            });
        }
        let per_var: Vec<Vec<f64>> = self
            .basis
            .bases
            .iter()
            .zip(point)
            .map(|(b, &x)| b.eval_all(x))
            .collect();
        let mut acc = 0.0;
        for (k, index) in self.basis.index_set().indices().iter().enumerate() {
            let mut psi = 1.0;
            for (var, &degree) in index.iter().enumerate() {
                psi *= per_var[var][degree];
            }
            acc += self.coefficients[(k, t_index)] * psi;
        }
        Ok(acc)
    }

    /// Surrogate mean at one time step: the constant-term coefficient.
    ///
    /// # Errors
    ///
    /// Returns an error for an out-of-range time index.
    pub fn mean(&self, t_index: usize) -> Result<f64, ApcError> {
        self.check_time(t_index)?;
        Ok(self.coefficients[(0, t_index)])
    }

    /// Surrogate variance at one time step: sum of squared non-constant
    /// coefficients (orthonormal basis).
    ///
    /// # Errors
    ///
    /// Returns an error for an out-of-range time index.
    pub fn variance(&self, t_index: usize) -> Result<f64, ApcError> {
        self.check_time(t_index)?;
        let col = self.coefficients.column(t_index);
        Ok(col.iter().skip(1).map(|c| c * c).sum())
    }

    /// Quadrature mean of the raw node outputs at one time step. Agrees
    /// with [`mean`](Self::mean) by construction.
    ///
    /// # Errors
    ///
    /// Returns an error for an out-of-range time index.
    pub fn quadrature_mean(&self, t_index: usize) -> Result<f64, ApcError> {
        self.check_time(t_index)?;
        Ok(self
            .node_outputs
            .column(t_index)
            .iter()
            .zip(self.basis.tensor_weights())
            .map(|(x, w)| w * x)
            .sum())
    }

    /// Quadrature variance of the raw node outputs at one time step. For
    /// outputs of total degree at most `p` it matches
    /// [`variance`](Self::variance) to round-off.
    ///
    /// # Errors
    ///
    /// Returns an error for an out-of-range time index.
    pub fn quadrature_variance(&self, t_index: usize) -> Result<f64, ApcError> {
        let mean = self.quadrature_mean(t_index)?;
        Ok(self
            .node_outputs
            .column(t_index)
            .iter()
            .zip(self.basis.tensor_weights())
            .map(|(x, w)| w * (x - mean) * (x - mean))
            .sum())
    }

    /// Quadrature means for every time step, the screening statistic for
    /// envelope construction.
    pub fn quadrature_mean_series(&self) -> Vec<f64> {
        (0..self.times.len())
            .map(|t| self.quadrature_mean(t).expect("index in range"))
            .collect()
    }
}

const MAGIC: &[u8; 8] = b"APCSURR1";
const VERSION: u32 = 1;

impl Surrogate {
    /// Serializes the surrogate to the documented binary archive layout.
    ///
    /// # Errors
    ///
    /// Returns an error if the file cannot be written.
    pub fn save_archive(&self, path: &Path) -> Result<(), ApcError> {
        let mut out = BufWriter::new(File::create(path).map_err(ArchiveError::Io)?);
        self.write_archive(&mut out).map_err(ArchiveError::Io)?;
        out.flush().map_err(ArchiveError::Io)?;
        Ok(())
    }

    fn write_archive<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let p = self.basis.order();
        out.write_all(MAGIC)?;
        out.write_u32::<LittleEndian>(VERSION)?;
        for dim in [
            self.basis.n_vars(),
            p,
            self.basis.index_set().len(),
            self.basis.node_tuples().len(),
            self.times.len(),
        ] {
            out.write_u64::<LittleEndian>(dim as u64)?;
        }
        let write_slice = |out: &mut W, values: &[f64]| -> std::io::Result<()> {
            for v in values {
                out.write_f64::<LittleEndian>(*v)?;
            }
            Ok(())
        };
        for basis in &self.basis.bases {
            write_slice(out, &basis.a)?;
            write_slice(out, &basis.b)?;
            for j in 0..=p {
                write_slice(out, &basis.coeffs[j])?;
            }
            write_slice(out, &basis.nodes)?;
            write_slice(out, &basis.weights)?;
        }
        for index in self.basis.index_set().indices() {
            for d in index {
                out.write_u64::<LittleEndian>(*d as u64)?;
            }
        }
        for tuple in self.basis.node_tuples() {
            write_slice(out, tuple)?;
        }
        write_slice(out, self.basis.tensor_weights())?;
        write_slice(out, &self.times)?;
        for k in 0..self.coefficients.nrows() {
            for t in 0..self.coefficients.ncols() {
                out.write_f64::<LittleEndian>(self.coefficients[(k, t)])?;
            }
        }
        for n in 0..self.node_outputs.nrows() {
            for t in 0..self.node_outputs.ncols() {
                out.write_f64::<LittleEndian>(self.node_outputs[(n, t)])?;
            }
        }
        Ok(())
    }

    /// Reads a surrogate back from an archive file.
    ///
    /// # Errors
    ///
    /// Returns an error for I/O failures, a wrong magic or version, or
    /// inconsistent dimensions.
    pub fn load_archive(path: &Path) -> Result<Self, ApcError> {
        let mut input = BufReader::new(File::open(path).map_err(ArchiveError::Io)?);
        Self::read_archive(&mut input)
    }

    fn read_archive<R: Read>(input: &mut R) -> Result<Self, ApcError> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(ArchiveError::Io)?;
        if &magic != MAGIC {
            return Err(ArchiveError::Format("bad magic; not a surrogate archive".into()).into());
        }
        let version = input.read_u32::<LittleEndian>().map_err(ArchiveError::Io)?;
        if version != VERSION {
            return Err(ArchiveError::Format(format!("unsupported version {version}")).into());
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = input.read_u64::<LittleEndian>().map_err(ArchiveError::Io)? as usize;
        }
        let [n_vars, p, n_indices, n_nodes, n_times] = dims;
        if n_vars == 0 || p == 0 || n_nodes != p.pow(n_vars as u32) {
            return Err(ArchiveError::Format(format!(
                "inconsistent dimensions: {n_vars} vars, order {p}, {n_nodes} nodes"
            ))
            .into());
        }

        let mut read_vec = |len: usize| -> Result<Vec<f64>, ApcError> {
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                let v = input.read_f64::<LittleEndian>().map_err(ArchiveError::Io)?;
                if !v.is_finite() {
                    return Err(ArchiveError::Format("non-finite value in archive".into()).into());
                }
                out.push(v);
            }
            Ok(out)
        };

        let mut bases = Vec::with_capacity(n_vars);
        for _ in 0..n_vars {
            let a = read_vec(p)?;
            let b = read_vec(p)?;
            let mut coeffs = Vec::with_capacity(p + 1);
            for j in 0..=p {
                coeffs.push(read_vec(j + 1)?);
            }
            let nodes = read_vec(p)?;
            let weights = read_vec(p)?;
            bases.push(UnivariateBasis { p, a, b, coeffs, nodes, weights });
        }

        let expected = build_index_set(n_vars, p);
        if expected.len() != n_indices {
            return Err(ArchiveError::Format(format!(
                "index count {n_indices} does not match order {p} over {n_vars} vars"
            ))
            .into());
        }
        let mut indices = Vec::with_capacity(n_indices);
        for _ in 0..n_indices {
            let mut index = Vec::with_capacity(n_vars);
            for _ in 0..n_vars {
                index.push(input.read_u64::<LittleEndian>().map_err(ArchiveError::Io)? as usize);
            }
            indices.push(index);
        }
        if indices != expected.indices {
            return Err(ArchiveError::Format("multi-index set is not graded lex".into()).into());
        }

        let mut node_tuples = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let mut tuple = Vec::with_capacity(n_vars);
            for _ in 0..n_vars {
                let v = input.read_f64::<LittleEndian>().map_err(ArchiveError::Io)?;
                tuple.push(v);
            }
            node_tuples.push(tuple);
        }
        let tensor_weights = {
            let mut out = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                out.push(input.read_f64::<LittleEndian>().map_err(ArchiveError::Io)?);
            }
            out
        };
        let times = {
            let mut out = Vec::with_capacity(n_times);
            for _ in 0..n_times {
                out.push(input.read_f64::<LittleEndian>().map_err(ArchiveError::Io)?);
            }
            out
        };
        let mut coefficients = DMatrix::zeros(n_indices, n_times);
        for k in 0..n_indices {
            for t in 0..n_times {
                coefficients[(k, t)] =
                    input.read_f64::<LittleEndian>().map_err(ArchiveError::Io)?;
            }
        }
        let mut node_outputs = DMatrix::zeros(n_nodes, n_times);
        for n in 0..n_nodes {
            for t in 0..n_times {
                node_outputs[(n, t)] =
                    input.read_f64::<LittleEndian>().map_err(ArchiveError::Io)?;
            }
        }

        let basis = ApcBasis { bases, index_set: expected, node_tuples, tensor_weights };
        Ok(Surrogate { basis, times, coefficients, node_outputs })
    }

    /// Renders the coefficient table as text, one row per multi-index, for
    /// inspection.
    pub fn dump_coefficients(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "# {} indices x {} time steps", self.coefficients.nrows(), self.times.len());
        for (k, index) in self.basis.index_set().indices().iter().enumerate() {
            let tag: Vec<String> = index.iter().map(|d| d.to_string()).collect();
            let _ = write!(out, "({})", tag.join(","));
            for t in 0..self.times.len() {
                let _ = write!(out, " {:+.6e}", self.coefficients[(k, t)]);
            }
            let _ = writeln!(out);
        }
        out
    }
}
