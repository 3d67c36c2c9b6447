//! Conflict detection: separation envelopes, kernel density estimates of
//! separation distributions, and marginal/joint/conditional probabilities
//! of loss of separation, plus the member-counting baseline.
//!
//! The screening stage builds a mean +/- 2 sigma envelope of the separation
//! from quadrature statistics; an envelope that dips below the separation
//! threshold flags a conflict outright. Otherwise the separation surrogate
//! is evaluated at the empirical input samples, a Gaussian kernel density
//! estimate with Silverman bandwidth is fitted to the resulting distances,
//! and probabilities are read off the exact Gaussian-mixture CDF rather
//! than a numerically integrated density. Bivariate (two-instant) analyses
//! use a product kernel with per-axis bandwidths and exact rectangle
//! probabilities, so conditionals are plain ratios.

use nalgebra::DMatrix;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::apc::Surrogate;
use crate::error::ConflictError;
use crate::numfmt::sig9;

/// Loss-of-separation threshold: 5 nautical miles in meters.
pub const SEPARATION_THRESHOLD_M: f64 = 9_260.0;

/// Probabilities above this are flagged high risk.
pub const HIGH_RISK_PROBABILITY: f64 = 1e-2;

/// Probabilities below this are reported as no conflict.
pub const NEGLIGIBLE_PROBABILITY: f64 = 1e-6;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Mean +/- 2 sigma separation envelope over a shared time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeSeries {
    times: Vec<f64>,
    mean: Vec<f64>,
    sigma: Vec<f64>,
    threshold: f64,
}

/// Weighted per-step mean and standard deviation of node separation
/// series.
///
/// `node_separations` has one row per quadrature node and one column per
/// time step; `weights` are the tensor quadrature weights.
///
/// # Errors
///
/// Returns an error if dimensions disagree, weights do not sum to one, or
/// any value is non-finite.
pub fn envelope_series(
    times: &[f64],
    node_separations: &DMatrix<f64>,
    weights: &[f64],
    threshold: f64,
) -> Result<EnvelopeSeries, ConflictError> {
    if node_separations.nrows() != weights.len() {
        return Err(ConflictError::ShapeMismatch {
            reason: format!(
                "{} separation rows vs {} weights",
                node_separations.nrows(),
                weights.len()
            ),
        });
    }
    if node_separations.ncols() != times.len() {
        return Err(ConflictError::ShapeMismatch {
            reason: format!(
                "{} separation columns vs {} times",
                node_separations.ncols(),
                times.len()
            ),
        });
    }
    if node_separations.is_empty() {
        return Err(ConflictError::EmptySamples);
    }
    let weight_sum: f64 = weights.iter().sum();
    if (weight_sum - 1.0).abs() > 1e-9 {
        return Err(ConflictError::ShapeMismatch {
            reason: format!("weights sum to {weight_sum}, expected 1"),
        });
    }
    if node_separations.iter().any(|x| !x.is_finite()) {
        return Err(ConflictError::NonFinite);
    }

    let mut mean = Vec::with_capacity(times.len());
    let mut sigma = Vec::with_capacity(times.len());
    for t in 0..times.len() {
        let col = node_separations.column(t);
        let m: f64 = col.iter().zip(weights).map(|(x, w)| w * x).sum();
        let var: f64 = col.iter().zip(weights).map(|(x, w)| w * (x - m) * (x - m)).sum();
        mean.push(m);
        sigma.push(var.max(0.0).sqrt());
    }
    Ok(EnvelopeSeries { times: times.to_vec(), mean, sigma, threshold })
}

impl EnvelopeSeries {
    /// Number of time steps.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    /// True when the envelope has no time steps.
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// The shared time grid, seconds.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Weighted mean separation per step, meters.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Weighted standard deviation per step, meters.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Separation threshold, meters.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Envelope lower bound `mean - 2 sigma` at one step.
    pub fn lower(&self, i: usize) -> f64 {
        self.mean[i] - 2.0 * self.sigma[i]
    }

    /// Envelope upper bound `mean + 2 sigma` at one step.
    pub fn upper(&self, i: usize) -> f64 {
        self.mean[i] + 2.0 * self.sigma[i]
    }

    /// Index of the smallest mean separation, the default analysis
    /// instant.
    pub fn min_mean_index(&self) -> usize {
        let mut best = 0;
        for i in 1..self.mean.len() {
            if self.mean[i] < self.mean[best] {
                best = i;
            }
        }
        best
    }

    /// Renders the envelope as CSV with header `t,mean,lower,upper`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t,mean,lower,upper\n");
        for i in 0..self.len() {
            out.push_str(&sig9(self.times[i]));
            out.push(',');
            out.push_str(&sig9(self.mean[i]));
            out.push(',');
            out.push_str(&sig9(self.lower(i)));
            out.push(',');
            out.push_str(&sig9(self.upper(i)));
            out.push('\n');
        }
        out
    }
}

/// Outcome of the envelope screen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeCrossing {
    /// True when the lower bound dips strictly below the threshold.
    pub crosses: bool,
    /// First step index and time at which it does.
    pub first_crossing: Option<(usize, f64)>,
}

/// Checks whether the 2 sigma lower bound crosses the threshold anywhere.
pub fn envelope_verdict(env: &EnvelopeSeries) -> EnvelopeCrossing {
    for i in 0..env.len() {
        if env.lower(i) < env.threshold() {
            return EnvelopeCrossing { crosses: true, first_crossing: Some((i, env.times()[i])) };
        }
    }
    EnvelopeCrossing { crosses: false, first_crossing: None }
}

fn sample_std(samples: &[f64]) -> Result<f64, ConflictError> {
    if samples.is_empty() {
        return Err(ConflictError::EmptySamples);
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(ConflictError::NonFinite);
    }
    let q = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / q;
    let ss: f64 = samples.iter().map(|s| (s - mean) * (s - mean)).sum();
    let var = ss / (q - 1.0);
    // Spread at round-off scale counts as degenerate: surrogate outputs of
    // a constant model reproduce it only to ~1e-13 relative.
    let max_abs = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(var > 0.0) || hi - lo <= 1e-9 * (1.0 + max_abs) {
        return Err(ConflictError::DegenerateSamples);
    }
    Ok(var.sqrt())
}

/// Silverman bandwidth for a one-dimensional kernel density estimate:
/// `(4 / (3 q))^(1/5) * sigma_hat` with the unbiased sample standard
/// deviation.
///
/// # Errors
///
/// Returns an error for empty, non-finite, or zero-variance samples.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64, ConflictError> {
    let sigma = sample_std(samples)?;
    let q = samples.len() as f64;
    Ok((4.0 / (3.0 * q)).powf(0.2) * sigma)
}

/// Per-axis Silverman bandwidth for a two-dimensional product kernel:
/// `(4 / ((d + 2) q))^(1/(d+4)) * sigma_hat` with `d = 2`, which reduces to
/// `(1/q)^(1/6) * sigma_hat`.
///
/// # Errors
///
/// Returns an error for empty, non-finite, or zero-variance samples.
pub fn silverman_bandwidth_2d(samples: &[f64]) -> Result<f64, ConflictError> {
    let sigma = sample_std(samples)?;
    let q = samples.len() as f64;
    Ok(q.powf(-1.0 / 6.0) * sigma)
}

/// Gaussian kernel density estimate of a scalar distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    samples: Vec<f64>,
    bandwidth: f64,
}

impl KdeModel {
    /// Wraps samples with an explicit bandwidth.
    ///
    /// # Errors
    ///
    /// Returns an error for empty or non-finite samples or a non-positive
    /// bandwidth.
    pub fn new(samples: Vec<f64>, bandwidth: f64) -> Result<Self, ConflictError> {
        if samples.is_empty() {
            return Err(ConflictError::EmptySamples);
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(ConflictError::NonFinite);
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(ConflictError::ShapeMismatch {
                reason: format!("bandwidth {bandwidth} is not positive"),
            });
        }
        Ok(Self { samples, bandwidth })
    }

    /// Fits samples with the Silverman bandwidth.
    ///
    /// # Errors
    ///
    /// Returns an error for fewer than two distinct samples.
    pub fn from_samples(samples: Vec<f64>) -> Result<Self, ConflictError> {
        let bandwidth = silverman_bandwidth(&samples)?;
        Self::new(samples, bandwidth)
    }

    /// The underlying samples.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// The kernel bandwidth.
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Density at `x`: the average of Gaussian kernels.
    pub fn pdf(&self, x: f64) -> f64 {
        let normal = std_normal();
        let q = self.samples.len() as f64;
        self.samples
            .iter()
            .map(|s| normal.pdf((x - s) / self.bandwidth))
            .sum::<f64>()
            / (q * self.bandwidth)
    }

    /// Probability below `x0`: the exact Gaussian-mixture CDF, the average
    /// of per-sample normal CDFs. No numeric integration is involved.
    pub fn cdf_below(&self, x0: f64) -> f64 {
        let normal = std_normal();
        let q = self.samples.len() as f64;
        self.samples.iter().map(|s| normal.cdf((x0 - s) / self.bandwidth)).sum::<f64>() / q
    }

    /// Support padded by six bandwidths on each side; the density mass
    /// outside is negligible.
    pub fn support(&self) -> (f64, f64) {
        let lo = self.samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo - 6.0 * self.bandwidth, hi + 6.0 * self.bandwidth)
    }

    /// Density sampled on `n` evenly spaced points across the padded
    /// support, for plotting.
    pub fn pdf_grid(&self, n: usize) -> Vec<(f64, f64)> {
        let (lo, hi) = self.support();
        let step = (hi - lo) / (n.max(2) - 1) as f64;
        (0..n.max(2))
            .map(|i| {
                let x = lo + i as f64 * step;
                (x, self.pdf(x))
            })
            .collect()
    }
}

/// Evaluates the separation surrogate at each empirical input sample,
/// giving the distance sample set KDE analyses run on.
///
/// `xi` holds one input realization per row.
///
/// # Errors
///
/// Returns an error if the time index or the row width disagrees with the
/// surrogate.
pub fn separation_samples(
    surrogate: &Surrogate,
    xi: &DMatrix<f64>,
    t_index: usize,
) -> Result<Vec<f64>, ConflictError> {
    let mut out = Vec::with_capacity(xi.nrows());
    let mut point = vec![0.0; xi.ncols()];
    for r in 0..xi.nrows() {
        for (c, slot) in point.iter_mut().enumerate() {
            *slot = xi[(r, c)];
        }
        out.push(surrogate.eval(t_index, &point)?);
    }
    Ok(out)
}

/// Marginal conflict probability at one instant.
#[derive(Debug, Clone)]
pub struct MarginalConflict {
    /// Probability that the separation is below the threshold.
    pub probability: f64,
    /// The evaluated distance samples.
    pub samples: Vec<f64>,
    /// Fitted density, absent for degenerate samples.
    pub kde: Option<KdeModel>,
    /// True when all samples were identical and the probability collapsed
    /// to a hard 0/1 threshold comparison.
    pub degenerate: bool,
}

/// Probability of loss of separation at `t_index`: surrogate distances at
/// the empirical inputs, Silverman bandwidth, Gaussian-mixture CDF below
/// the threshold.
///
/// Zero-variance samples short-circuit to a hard 0/1 by direct comparison,
/// flagged as degenerate.
///
/// # Errors
///
/// Returns an error for surrogate evaluation failures or empty samples.
pub fn conflict_probability(
    surrogate: &Surrogate,
    xi: &DMatrix<f64>,
    t_index: usize,
    threshold: f64,
) -> Result<MarginalConflict, ConflictError> {
    let samples = separation_samples(surrogate, xi, t_index)?;
    match KdeModel::from_samples(samples.clone()) {
        Ok(kde) => {
            let probability = kde.cdf_below(threshold);
            Ok(MarginalConflict { probability, samples, kde: Some(kde), degenerate: false })
        }
        Err(ConflictError::DegenerateSamples) => {
            let probability = if samples[0] < threshold { 1.0 } else { 0.0 };
            Ok(MarginalConflict { probability, samples, kde: None, degenerate: true })
        }
        Err(other) => Err(other),
    }
}

/// Product-kernel Gaussian density estimate of a pair of distances.
#[derive(Debug, Clone, PartialEq)]
pub struct BivariateKde {
    xs: Vec<f64>,
    ys: Vec<f64>,
    bandwidth_x: f64,
    bandwidth_y: f64,
}

impl BivariateKde {
    /// Fits paired samples with per-axis two-dimensional Silverman
    /// bandwidths.
    ///
    /// # Errors
    ///
    /// Returns an error for mismatched lengths or a degenerate axis.
    pub fn from_samples(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, ConflictError> {
        if xs.len() != ys.len() {
            return Err(ConflictError::ShapeMismatch {
                reason: format!("{} x samples vs {} y samples", xs.len(), ys.len()),
            });
        }
        let bandwidth_x = silverman_bandwidth_2d(&xs)?;
        let bandwidth_y = silverman_bandwidth_2d(&ys)?;
        Ok(Self { xs, ys, bandwidth_x, bandwidth_y })
    }

    /// Per-axis bandwidths `(x, y)`.
    pub fn bandwidths(&self) -> (f64, f64) {
        (self.bandwidth_x, self.bandwidth_y)
    }

    /// Number of sample pairs.
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    /// True when no sample pairs are held (never after construction).
    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Joint density at `(x, y)`.
    pub fn pdf(&self, x: f64, y: f64) -> f64 {
        let normal = std_normal();
        let q = self.xs.len() as f64;
        self.xs
            .iter()
            .zip(&self.ys)
            .map(|(sx, sy)| {
                normal.pdf((x - sx) / self.bandwidth_x) * normal.pdf((y - sy) / self.bandwidth_y)
            })
            .sum::<f64>()
            / (q * self.bandwidth_x * self.bandwidth_y)
    }

    /// Exact probability of the rectangle `{X < x0, Y < y0}` under the
    /// mixture: the average of per-sample CDF products. `x0 = +inf`
    /// marginalizes the first axis exactly.
    pub fn rectangle_below(&self, x0: f64, y0: f64) -> f64 {
        let normal = std_normal();
        let q = self.xs.len() as f64;
        self.xs
            .iter()
            .zip(&self.ys)
            .map(|(sx, sy)| {
                let fx = if x0 == f64::INFINITY {
                    1.0
                } else {
                    normal.cdf((x0 - sx) / self.bandwidth_x)
                };
                fx * normal.cdf((y0 - sy) / self.bandwidth_y)
            })
            .sum::<f64>()
            / q
    }

    /// Padded support box, six bandwidths beyond the sample extremes.
    pub fn support(&self) -> ((f64, f64), (f64, f64)) {
        let lo_x = self.xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi_x = self.xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo_y = self.ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi_y = self.ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (
            (lo_x - 6.0 * self.bandwidth_x, hi_x + 6.0 * self.bandwidth_x),
            (lo_y - 6.0 * self.bandwidth_y, hi_y + 6.0 * self.bandwidth_y),
        )
    }

    /// Joint density on an `n x n` grid over the padded support: axis
    /// values and the density matrix (rows follow the x axis).
    pub fn pdf_grid(&self, n: usize) -> (Vec<f64>, Vec<f64>, DMatrix<f64>) {
        self.grid_of(n, |x, y| self.pdf(x, y))
    }

    /// Joint CDF on an `n x n` grid over the padded support.
    pub fn cdf_grid(&self, n: usize) -> (Vec<f64>, Vec<f64>, DMatrix<f64>) {
        self.grid_of(n, |x, y| self.rectangle_below(x, y))
    }

    fn grid_of(
        &self,
        n: usize,
        f: impl Fn(f64, f64) -> f64,
    ) -> (Vec<f64>, Vec<f64>, DMatrix<f64>) {
        let n = n.max(2);
        let ((lo_x, hi_x), (lo_y, hi_y)) = self.support();
        let xs: Vec<f64> =
            (0..n).map(|i| lo_x + i as f64 * (hi_x - lo_x) / (n - 1) as f64).collect();
        let ys: Vec<f64> =
            (0..n).map(|j| lo_y + j as f64 * (hi_y - lo_y) / (n - 1) as f64).collect();
        let grid = DMatrix::from_fn(n, n, |i, j| f(xs[i], ys[j]));
        (xs, ys, grid)
    }
}

/// Joint and conditional analysis of separations at two instants.
#[derive(Debug, Clone)]
pub struct JointConditional {
    /// The fitted bivariate density over `(d(t1), d(t2))`.
    pub kde: BivariateKde,
    /// `P(d(t1) < bound, d(t2) < threshold)`.
    pub joint_below: f64,
    /// `P(d(t1) < bound)`, the conditioning mass.
    pub conditioning_below: f64,
    /// `P(d(t2) < threshold)` under the same product-kernel fit.
    pub marginal_event: f64,
    /// `P(d(t2) < threshold | d(t1) < bound)`.
    pub conditional: f64,
}

/// Conditional probability of conflict at `t2_index` given the separation
/// at `t1_index` was below `bound`, with the joint density it came from.
///
/// # Errors
///
/// Returns an error if the two instants coincide, on surrogate evaluation
/// failures, degenerate samples, or a conditioning mass below 1e-12.
pub fn joint_conditional(
    surrogate: &Surrogate,
    xi: &DMatrix<f64>,
    t1_index: usize,
    t2_index: usize,
    bound: f64,
    threshold: f64,
) -> Result<JointConditional, ConflictError> {
    if t1_index == t2_index {
        return Err(ConflictError::ShapeMismatch {
            reason: "conditioning and event instants must differ".into(),
        });
    }
    let xs = separation_samples(surrogate, xi, t1_index)?;
    let ys = separation_samples(surrogate, xi, t2_index)?;
    let kde = BivariateKde::from_samples(xs, ys)?;

    let joint_below = kde.rectangle_below(bound, threshold);
    let conditioning_below = kde.rectangle_below(bound, f64::INFINITY);
    let marginal_event = kde.rectangle_below(f64::INFINITY, threshold);
    if conditioning_below < 1e-12 {
        return Err(ConflictError::VanishingConditioner { probability: conditioning_below });
    }
    let conditional = joint_below / conditioning_below;
    Ok(JointConditional { kde, joint_below, conditioning_below, marginal_event, conditional })
}

/// Member-counting baseline probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConflict {
    /// Fraction of members below the threshold at the analysis instant.
    pub probability: f64,
    /// Members below the threshold.
    pub below: usize,
    /// Total members.
    pub total: usize,
    /// Conditional fraction, when conditioning was requested.
    pub conditional: Option<f64>,
}

/// The ensemble-counting baseline: the fraction of raw members whose
/// separation at `t_star` is below the threshold, optionally conditioned
/// on the separation at another instant being below a bound.
///
/// `separations` has one row per member, one column per time step.
///
/// # Errors
///
/// Returns an error for an empty matrix, out-of-range indices, or a
/// conditioning event no member satisfies.
pub fn ensemble_baseline(
    separations: &DMatrix<f64>,
    threshold: f64,
    t_star: usize,
    conditioning: Option<(usize, f64)>,
) -> Result<BaselineConflict, ConflictError> {
    if separations.nrows() == 0 {
        return Err(ConflictError::EmptySamples);
    }
    let len = separations.ncols();
    if t_star >= len {
        return Err(ConflictError::TimeIndex { index: t_star, len });
    }
    let total = separations.nrows();
    let below = (0..total).filter(|&r| separations[(r, t_star)] < threshold).count();
    let probability = below as f64 / total as f64;

    let conditional = match conditioning {
        None => None,
        Some((t1, bound)) => {
            if t1 >= len {
                return Err(ConflictError::TimeIndex { index: t1, len });
            }
            let satisfied =
                (0..total).filter(|&r| separations[(r, t1)] < bound).collect::<Vec<_>>();
            if satisfied.is_empty() {
                return Err(ConflictError::EmptyConditioningSet);
            }
            let both = satisfied
                .iter()
                .filter(|&&r| separations[(r, t_star)] < threshold)
                .count();
            Some(both as f64 / satisfied.len() as f64)
        }
    };

    Ok(BaselineConflict { probability, below, total, conditional })
}

/// Classification of a conflict analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// The 2 sigma envelope crossed the threshold; no probability needed.
    ConflictByEnvelope,
    /// Probability above the high-risk level.
    ConflictByProbability,
    /// Probability between negligible and high risk.
    ClearByProbability,
    /// Probability below the negligible level.
    NoConflict,
}

impl Verdict {
    /// The stable textual form used in reports.
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::ConflictByEnvelope => "conflict-by-envelope",
            Verdict::ConflictByProbability => "conflict-by-probability",
            Verdict::ClearByProbability => "clear-by-probability",
            Verdict::NoConflict => "no-conflict",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Places a computed probability into the verdict taxonomy.
pub fn classify_probability(p: f64) -> Verdict {
    if p > HIGH_RISK_PROBABILITY {
        Verdict::ConflictByProbability
    } else if p < NEGLIGIBLE_PROBABILITY {
        Verdict::NoConflict
    } else {
        Verdict::ClearByProbability
    }
}

/// One conditional-probability record inside a verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalRecord {
    /// Conditioning instant, seconds.
    pub conditioning_time: f64,
    /// Conditioning distance bound, meters.
    pub bound: f64,
    /// The conditional probability.
    pub conditional: f64,
}

/// The complete verdict for one aircraft pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ConflictVerdict {
    /// The two aircraft identifiers.
    pub pair: (String, String),
    /// The classification.
    pub verdict: Verdict,
    /// Instant of minimum mean separation, seconds.
    pub t_min_distance: f64,
    /// Marginal probability at that instant, if the analysis got that far.
    pub probability: Option<f64>,
    /// Conditional analyses, if requested.
    pub conditionals: Vec<ConditionalRecord>,
}
