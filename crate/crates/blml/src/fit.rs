//! Fitting entry points and the fitted-density type.
//!
//! Three fitting strategies share one output type. The direct fit anchors
//! one coefficient at every sample and solves the all-positive orthant. The
//! accelerated fit snaps samples to a lattice first and solves a weighted
//! system over the occupied cells. The sign-search fit additionally hunts
//! for the likelihood-optimal orthant, which is a binary quadratic program,
//! so it only accepts small problems.

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::binning::bin_samples;
use crate::error::{Error, Result};
use crate::gram::{build_gram, GramMatrix, DENSE_NODE_LIMIT};
use crate::op::{amplitude_batch, KernelOperator, SincKernel1d};
use crate::sample::SampleSet;
use crate::seeding::derive_rng;
use crate::sinc::{sinc_kernel_nd, CutoffFrequency};
use crate::solver::{
    likelihood_value, solve_orthant_op, CoefficientVector, NewtonConfig, OrthantVector,
};

/// Largest one-dimensional node count the direct fit accepts.
pub const TRIVIAL_NODE_LIMIT: usize = 200_000;

/// Largest raw sample count the sign-search fit accepts.
pub const BQP_NODE_LIMIT: usize = 200;

/// Sample count above which the direct fit warm-starts from an accelerated
/// fit instead of the flat default start.
const WARM_START_MIN: usize = 4096;

/// Queries per evaluation chunk when parallelizing density evaluation.
const EVAL_CHUNK: usize = 1024;

/// Stream id for the sign-search start portfolio. Fixed so that fits are
/// reproducible functions of their inputs alone.
const SIGN_SEARCH_SEED: u64 = 0x9d1c_53e0_77ab_42d7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FitAlgorithm {
    Trivial,
    Quick,
    Bqp,
}

impl fmt::Display for FitAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            FitAlgorithm::Trivial => "trivial",
            FitAlgorithm::Quick => "quick",
            FitAlgorithm::Bqp => "bqp",
        };
        f.write_str(name)
    }
}

/// A fitted band-limited density.
#[derive(Debug, Clone, Serialize)]
pub struct BlmlFit {
    nodes: SampleSet,
    weights: Vec<f64>,
    coefficients: CoefficientVector,
    cutoff: CutoffFrequency,
    algorithm: FitAlgorithm,
    grid_rate: Option<Vec<f64>>,
    total_weight: f64,
    likelihood: f64,
    integral_analytic: f64,
}

impl BlmlFit {
    fn from_parts(
        op: &dyn KernelOperator,
        nodes: SampleSet,
        weights: Vec<f64>,
        coefficients: CoefficientVector,
        cutoff: CutoffFrequency,
        algorithm: FitAlgorithm,
        grid_rate: Option<Vec<f64>>,
    ) -> Result<Self> {
        let total_weight: f64 = weights.iter().sum();
        let likelihood = likelihood_value(coefficients.values(), &weights)?;
        let wc: Vec<f64> = coefficients
            .values()
            .iter()
            .zip(&weights)
            .map(|(&c, &w)| w * c)
            .collect();
        let integral_analytic = op.quadratic_form(&wc, &wc) / (total_weight * total_weight);
        Ok(Self {
            nodes,
            weights,
            coefficients,
            cutoff,
            algorithm,
            grid_rate,
            total_weight,
            likelihood,
            integral_analytic,
        })
    }

    pub fn nodes(&self) -> &SampleSet {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn coefficients(&self) -> &CoefficientVector {
        &self.coefficients
    }

    pub fn cutoff(&self) -> &CutoffFrequency {
        &self.cutoff
    }

    pub fn algorithm(&self) -> FitAlgorithm {
        self.algorithm
    }

    /// Lattice rate of the accelerated fit, absent for node-anchored fits.
    pub fn grid_rate(&self) -> Option<&[f64]> {
        self.grid_rate.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.nodes.dim()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// Weighted log-likelihood of the anchoring samples under the fit.
    pub fn likelihood(&self) -> f64 {
        self.likelihood
    }

    /// Likelihood per unit weight: the mean negative log of the squared
    /// coefficients. Nondecreasing in the cut-off; its knee marks the band
    /// edge during selection scans.
    pub fn selection_score(&self) -> f64 {
        self.likelihood / self.total_weight
    }

    /// Infinity norm of the stationarity residual at solver exit.
    pub fn residual_norm(&self) -> f64 {
        self.coefficients.residual_norm()
    }

    /// Total mass in closed form: the quadratic-form identity at a root
    /// makes this 1 up to solver tolerance.
    pub fn integral_analytic(&self) -> f64 {
        self.integral_analytic
    }

    fn amplitude_coeffs(&self) -> Vec<f64> {
        self.coefficients
            .values()
            .iter()
            .zip(&self.weights)
            .map(|(&c, &w)| w * c / self.total_weight)
            .collect()
    }

    /// Square-root amplitude at one point.
    pub fn amplitude_at(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "query of dimension {} against fit of dimension {}",
                point.len(),
                self.dim()
            )));
        }
        let coeffs = self.amplitude_coeffs();
        let mut acc = 0.0;
        let mut disp = vec![0.0; self.dim()];
        for (node, &a) in self.nodes.iter_points().zip(&coeffs) {
            for (d, (&q, &x)) in disp.iter_mut().zip(point.iter().zip(node)) {
                *d = q - x;
            }
            acc += a * sinc_kernel_nd(&disp, &self.cutoff);
        }
        Ok(acc)
    }

    pub fn density_at(&self, point: &[f64]) -> Result<f64> {
        let a = self.amplitude_at(point)?;
        Ok(a * a)
    }

    /// Density at a flat batch of query points (`dim` values per query).
    pub fn eval_density(&self, queries: &[f64]) -> Result<Vec<f64>> {
        let dim = self.dim();
        if queries.len() % dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} query values do not split into points of dimension {}",
                queries.len(),
                dim
            )));
        }
        if queries.iter().any(|q| !q.is_finite()) {
            return Err(Error::InvalidInput("query points must be finite".into()));
        }
        if dim == 1 {
            let xs = self.nodes.as_flat();
            let fc = self.cutoff.per_dim()[0];
            let coeffs = self.amplitude_coeffs();
            let mut amps: Vec<f64> = if queries.len() >= 2 * EVAL_CHUNK {
                queries
                    .par_chunks(EVAL_CHUNK)
                    .map(|chunk| amplitude_batch(xs, fc, &coeffs, chunk))
                    .flatten_iter()
                    .collect()
            } else {
                amplitude_batch(xs, fc, &coeffs, queries)
            };
            for a in &mut amps {
                *a *= *a;
            }
            Ok(amps)
        } else {
            queries
                .chunks_exact(dim)
                .map(|point| self.density_at(point))
                .collect()
        }
    }

    /// Total mass by trapezoid quadrature on an automatically padded grid.
    /// The grid spacing stays below the reciprocal bandwidth, where the
    /// trapezoid rule is exact for band-limited integrands, so the result
    /// differs from the true mass only by the tail beyond the padding.
    pub fn integrate_numeric(&self) -> Result<f64> {
        let dim = self.dim();
        let coeffs = self.amplitude_coeffs();
        let kernel_mass: f64 = coeffs.iter().map(|a| a.abs()).sum();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for point in self.nodes.iter_points() {
            for d in 0..dim {
                lo[d] = lo[d].min(point[d]);
                hi[d] = hi[d].max(point[d]);
            }
        }
        let fcs = self.cutoff.per_dim();
        if dim == 1 {
            let fc = fcs[0];
            // Beyond distance R from every node the amplitude is at most
            // kernel_mass / (pi R), so the unseen tail mass is at most
            // 2 kernel_mass^2 / (pi^2 R).
            let pad = (2.0 * kernel_mass * kernel_mass
                / (std::f64::consts::PI.powi(2) * 2.0e-4))
                .max(10.0 / fc);
            let step = 0.4 / fc;
            let a = lo[0] - pad;
            let b = hi[0] + pad;
            let count = ((b - a) / step).ceil() as usize + 1;
            if count > 20_000_000 {
                return Err(Error::Config(format!(
                    "quadrature grid of {count} points is too large"
                )));
            }
            let grid: Vec<f64> = (0..count).map(|i| a + step * i as f64).collect();
            let vals = self.eval_density(&grid)?;
            let mut acc = 0.0;
            for i in 0..count {
                let w = if i == 0 || i + 1 == count { 0.5 } else { 1.0 };
                acc += w * vals[i];
            }
            Ok(acc * step)
        } else {
            let mut steps = Vec::with_capacity(dim);
            let mut counts = Vec::with_capacity(dim);
            let mut starts = Vec::with_capacity(dim);
            let mut total_points = 1usize;
            for d in 0..dim {
                // Tail mass past the pad decays like its reciprocal; 120
                // bandwidths keep the truncation a few 1e-4 at desk scale.
                let pad = 120.0 / fcs[d];
                let step = 0.4 / fcs[d];
                let a = lo[d] - pad;
                let b = hi[d] + pad;
                let count = ((b - a) / step).ceil() as usize + 1;
                total_points = total_points.saturating_mul(count);
                steps.push(step);
                counts.push(count);
                starts.push(a);
            }
            if total_points > 20_000_000 {
                return Err(Error::Config(format!(
                    "quadrature grid of {total_points} points is too large"
                )));
            }
            let mut acc = 0.0;
            let mut index = vec![0usize; dim];
            let mut point = vec![0.0f64; dim];
            loop {
                let mut w = 1.0;
                for d in 0..dim {
                    point[d] = starts[d] + steps[d] * index[d] as f64;
                    if index[d] == 0 || index[d] + 1 == counts[d] {
                        w *= 0.5;
                    }
                }
                acc += w * self.density_at(&point)?;
                let mut d = 0;
                loop {
                    index[d] += 1;
                    if index[d] < counts[d] {
                        break;
                    }
                    index[d] = 0;
                    d += 1;
                    if d == dim {
                        let cell: f64 = steps.iter().product();
                        return Ok(acc * cell);
                    }
                }
            }
        }
    }
}

fn validate_fit_inputs(samples: &SampleSet, cutoff: &CutoffFrequency) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("cannot fit an empty sample set".into()));
    }
    if samples.dim() != cutoff.dim() {
        return Err(Error::DimensionMismatch(format!(
            "samples of dimension {} with cut-off of dimension {}",
            samples.dim(),
            cutoff.dim()
        )));
    }
    Ok(())
}

/// Direct fit: one coefficient per sample, all-positive orthant.
pub fn fit_trivial(
    samples: &SampleSet,
    cutoff: &CutoffFrequency,
    config: &NewtonConfig,
) -> Result<BlmlFit> {
    validate_fit_inputs(samples, cutoff)?;
    let n = samples.len();
    let sorted = samples.sorted();
    let weights = vec![1.0; n];
    let orthant = OrthantVector::all_positive(n);
    if samples.dim() == 1 {
        if n > TRIVIAL_NODE_LIMIT {
            return Err(Error::TooLarge { what: "direct fit sample count", got: n, max: TRIVIAL_NODE_LIMIT });
        }
        let fc = cutoff.per_dim()[0];
        let op = SincKernel1d::new(sorted.as_flat().to_vec(), fc)?;
        let start = if n > WARM_START_MIN {
            warm_start(&sorted, cutoff, config)
        } else {
            None
        };
        let coefficients = solve_orthant_op(&op, &weights, &orthant, start.as_deref(), config)?;
        BlmlFit::from_parts(&op, sorted, weights, coefficients, cutoff.clone(), FitAlgorithm::Trivial, None)
    } else {
        if n > DENSE_NODE_LIMIT {
            return Err(Error::TooLarge { what: "direct fit sample count", got: n, max: DENSE_NODE_LIMIT });
        }
        let gram = build_gram(&sorted, cutoff)?;
        let coefficients = solve_orthant_op(&gram, &weights, &orthant, None, config)?;
        BlmlFit::from_parts(&gram, sorted, weights, coefficients, cutoff.clone(), FitAlgorithm::Trivial, None)
    }
}

/// Coefficient start from an accelerated fit: the root coefficients are the
/// reciprocal amplitude at each node, so evaluating a cheap lattice fit's
/// amplitude at the samples lands close to the direct root.
fn warm_start(
    sorted: &SampleSet,
    cutoff: &CutoffFrequency,
    config: &NewtonConfig,
) -> Option<Vec<f64>> {
    let quick = fit_quick(sorted, cutoff, None, config).ok()?;
    let fc = cutoff.per_dim()[0];
    let coeffs = quick.amplitude_coeffs();
    let amps = amplitude_batch(
        quick.nodes().as_flat(),
        fc,
        &coeffs,
        sorted.as_flat(),
    );
    let n = sorted.len() as f64;
    let ceil = cutoff.product().sqrt();
    let floor = ceil / n.sqrt() * 1e-2;
    Some(
        amps.iter()
            .map(|a| 1.0 / a.abs().clamp(floor, ceil))
            .collect(),
    )
}

/// Default lattice rate: grows with the sample count so the snap error
/// vanishes asymptotically, floored strictly above twice the cut-off so the
/// lattice resolves the kernel's oscillation.
fn default_grid_rate(cutoff: &CutoffFrequency, n: usize) -> Vec<f64> {
    cutoff
        .per_dim()
        .iter()
        .map(|fc| (fc * (n as f64).powf(0.25)).max(2.0001 * fc))
        .collect()
}

/// Accelerated fit over occupied lattice cells.
pub fn fit_quick(
    samples: &SampleSet,
    cutoff: &CutoffFrequency,
    grid_rate: Option<&[f64]>,
    config: &NewtonConfig,
) -> Result<BlmlFit> {
    validate_fit_inputs(samples, cutoff)?;
    let rates = match grid_rate {
        Some(r) => r.to_vec(),
        None => default_grid_rate(cutoff, samples.len()),
    };
    let binned = bin_samples(samples, &rates)?;
    let weights = binned.weights();
    let centers = binned.centers().clone();
    let orthant = OrthantVector::all_positive(centers.len());
    if centers.dim() == 1 {
        let fc = cutoff.per_dim()[0];
        let op = SincKernel1d::new(centers.as_flat().to_vec(), fc)?;
        let coefficients = solve_orthant_op(&op, &weights, &orthant, None, config)?;
        BlmlFit::from_parts(&op, centers, weights, coefficients, cutoff.clone(), FitAlgorithm::Quick, Some(rates))
    } else {
        if centers.len() > DENSE_NODE_LIMIT {
            return Err(Error::TooLarge {
                what: "accelerated fit cell count",
                got: centers.len(),
                max: DENSE_NODE_LIMIT,
            });
        }
        let gram = build_gram(&centers, cutoff)?;
        let coefficients = solve_orthant_op(&gram, &weights, &orthant, None, config)?;
        BlmlFit::from_parts(&gram, centers, weights, coefficients, cutoff.clone(), FitAlgorithm::Quick, Some(rates))
    }
}

/// Likelihood upper bound for an orthant, from the quadratic form of the
/// bare sign vector. Exact when the root has equal coefficient magnitudes;
/// negative infinity when the form is not positive, which rules the orthant
/// out entirely.
pub fn upper_bound_orthant(
    gram: &GramMatrix,
    weights: &[f64],
    orthant: &OrthantVector,
) -> Result<f64> {
    let n = gram.len();
    if weights.len() != n || orthant.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} weights and orthant of length {} for {} nodes",
            weights.len(),
            orthant.len(),
            n
        )));
    }
    let total: f64 = weights.iter().sum();
    let u: Vec<f64> = (0..n).map(|i| orthant.sign(i) * weights[i]).collect();
    let q = gram.quadratic_form(&u, &u);
    if q <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(total * q.ln() - 2.0 * total * total.ln())
}

/// Progress record of the sign search.
#[derive(Debug, Clone, Serialize)]
pub struct BqpSearchState {
    /// Orthant of the returned fit.
    pub orthant: OrthantVector,
    /// Quadratic form of the winning sign vector.
    pub objective: f64,
    /// Newton solves spent, successful or not.
    pub solves: usize,
    pub budget_exhausted: bool,
    /// Accepted likelihood-improving single-sign moves.
    pub ascent_steps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BqpFit {
    pub fit: BlmlFit,
    pub state: BqpSearchState,
}

/// Greedy single-flip maximization of the sign quadratic form from one
/// start. `t` tracks `S u` across flips so each sweep is linear in the
/// candidate count per flip.
fn greedy_signs(gram: &GramMatrix, weights: &[f64], mut signs: Vec<i8>) -> (Vec<i8>, f64) {
    let n = signs.len();
    let mut u: Vec<f64> = (0..n).map(|i| f64::from(signs[i]) * weights[i]).collect();
    let mut t = vec![0.0; n];
    gram.matvec(&u, &mut t);
    let mut q: f64 = u.iter().zip(&t).map(|(a, b)| a * b).sum();
    let gain_floor = 1e-12 * q.abs().max(1.0);
    for _ in 0..10 * n.max(1) {
        let mut best_gain = gain_floor;
        let mut best_i = None;
        for i in 0..n {
            let gain = 4.0 * (u[i] * u[i] * gram.entry(i, i) - u[i] * t[i]);
            if gain > best_gain {
                best_gain = gain;
                best_i = Some(i);
            }
        }
        let Some(i) = best_i else { break };
        let old = u[i];
        signs[i] = -signs[i];
        u[i] = -u[i];
        for k in 0..n {
            t[k] -= 2.0 * old * gram.entry(k, i);
        }
        q += best_gain;
    }
    (signs, q)
}

/// Sign-search fit: picks an orthant by maximizing the sign quadratic form
/// from a portfolio of starts, solves it, then climbs in likelihood over
/// single-sign neighbours while the solve budget lasts. Abandoning a
/// neighbour whose upper bound cannot beat the incumbent costs no budget.
pub fn fit_bqp(
    samples: &SampleSet,
    cutoff: &CutoffFrequency,
    search_budget: usize,
    config: &NewtonConfig,
) -> Result<BqpFit> {
    validate_fit_inputs(samples, cutoff)?;
    let n = samples.len();
    if n > BQP_NODE_LIMIT {
        return Err(Error::TooLarge { what: "sign-search sample count", got: n, max: BQP_NODE_LIMIT });
    }
    if search_budget == 0 {
        return Err(Error::Config("search budget must be at least 1".into()));
    }
    let sorted = samples.sorted();
    let gram = build_gram(&sorted, cutoff)?;
    let weights = vec![1.0; n];

    let mut starts: Vec<Vec<i8>> = vec![vec![1; n], vec![-1; n]];
    for k in 0..6u64 {
        let mut rng = derive_rng(SIGN_SEARCH_SEED, &[k]);
        use rand::Rng;
        starts.push((0..n).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect());
    }
    let mut candidates: Vec<(f64, Vec<i8>)> = starts
        .into_iter()
        .map(|s| {
            let (signs, q) = greedy_signs(&gram, &weights, s);
            (q, signs)
        })
        .collect();
    candidates.sort_by(|a, b| {
        let sum = |s: &[i8]| s.iter().map(|&v| i64::from(v)).sum::<i64>();
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| sum(&b.1).cmp(&sum(&a.1)))
            .then_with(|| b.1.cmp(&a.1))
    });
    candidates.dedup_by(|a, b| a.1 == b.1);

    let mut solves = 0usize;
    let mut budget_exhausted = false;
    let mut incumbent: Option<(f64, CoefficientVector, f64)> = None;
    let mut winning_objective = f64::NAN;
    let mut visited: BTreeSet<Vec<i8>> = BTreeSet::new();
    for (q, signs) in &candidates {
        if solves >= search_budget {
            budget_exhausted = true;
            break;
        }
        let orthant = OrthantVector::from_signs(signs.clone())?;
        visited.insert(signs.clone());
        solves += 1;
        if let Ok(cv) = solve_orthant_op(&gram, &weights, &orthant, None, config) {
            let lik = likelihood_value(cv.values(), &weights)?;
            incumbent = Some((lik, cv, *q));
            winning_objective = *q;
            break;
        }
    }
    let Some((mut best_lik, mut best_cv, _)) = incumbent else {
        return Err(Error::InvalidInput(
            "no candidate orthant admitted a converged solve".into(),
        ));
    };

    let mut ascent_steps = 0usize;
    'ascent: loop {
        for i in 0..n {
            let neighbour = best_cv.orthant().flipped(i);
            let key = neighbour.signs().to_vec();
            if visited.contains(&key) {
                continue;
            }
            if upper_bound_orthant(&gram, &weights, &neighbour)? <= best_lik {
                visited.insert(key);
                continue;
            }
            if solves >= search_budget {
                budget_exhausted = true;
                break 'ascent;
            }
            visited.insert(key);
            solves += 1;
            if let Ok(cv) = solve_orthant_op(&gram, &weights, &neighbour, None, config) {
                let lik = likelihood_value(cv.values(), &weights)?;
                if lik > best_lik {
                    best_lik = lik;
                    best_cv = cv;
                    ascent_steps += 1;
                    continue 'ascent;
                }
            }
        }
        break;
    }

    let state = BqpSearchState {
        orthant: best_cv.orthant().clone(),
        objective: winning_objective,
        solves,
        budget_exhausted,
        ascent_steps,
    };
    let fit = BlmlFit::from_parts(
        &gram,
        sorted,
        weights,
        best_cv,
        cutoff.clone(),
        FitAlgorithm::Bqp,
        None,
    )?;
    Ok(BqpFit { fit, state })
}
