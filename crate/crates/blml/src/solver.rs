//! Damped Newton solver for the per-orthant stationarity system.
//!
//! With kernel matrix `S`, weights `w` (total mass `n`), and coefficients
//! `c`, the stationarity residual is
//!
//! ```text
//! rho_i(c) = (1/n) sum_j w_j c_j S_ij - 1 / c_i
//! ```
//!
//! Each orthant contains at most one root, and the maximum-likelihood
//! coefficients are a root of `rho` in some orthant. The Newton system is
//! solved in symmetrized form: multiplying the Jacobian row-wise by `w`
//! gives `A = W D + (1/n) W S W` with `D = diag(1/c_i^2)`, which is
//! symmetric positive definite whenever the iterate stays strictly inside
//! its orthant. Small systems go through a dense Cholesky factorization;
//! large ones through Jacobi-preconditioned conjugate gradients, where the
//! preconditioned matrix stays well conditioned near the root because each
//! scaled row carries unit mass.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gram::GramMatrix;
use crate::linalg::{cholesky_solve, norm2, norm_inf, pcg};
use crate::op::{KernelOperator, DIRECT_SOLVE_LIMIT};

/// Largest node count accepted by exhaustive orthant enumeration.
pub const BRUTEFORCE_LIMIT: usize = 20;

/// Sign pattern selecting one orthant of coefficient space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OrthantVector(Vec<i8>);

impl OrthantVector {
    pub fn from_signs(signs: Vec<i8>) -> Result<Self> {
        if signs.is_empty() {
            return Err(Error::InvalidInput("orthant needs at least one sign".into()));
        }
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidInput("orthant signs must be +1 or -1".into()));
        }
        Ok(Self(signs))
    }

    pub fn all_positive(len: usize) -> Self {
        Self(vec![1; len])
    }

    /// Orthant number `bits` in enumeration order: bit `i` set means
    /// coordinate `i` is negative, so zero is the all-positive orthant.
    pub fn from_bits(bits: u64, len: usize) -> Self {
        Self((0..len).map(|i| if bits >> i & 1 == 1 { -1 } else { 1 }).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn signs(&self) -> &[i8] {
        &self.0
    }

    pub fn sign(&self, i: usize) -> f64 {
        f64::from(self.0[i])
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|s| -s).collect())
    }

    pub fn flipped(&self, i: usize) -> Self {
        let mut signs = self.0.clone();
        signs[i] = -signs[i];
        Self(signs)
    }

    pub fn sign_sum(&self) -> i64 {
        self.0.iter().map(|&s| i64::from(s)).sum()
    }

    pub fn contains(&self, c: &[f64]) -> bool {
        c.len() == self.0.len() && c.iter().zip(&self.0).all(|(&ci, &s)| ci * f64::from(s) > 0.0)
    }
}

/// Converged coefficients for one orthant.
#[derive(Debug, Clone, Serialize)]
pub struct CoefficientVector {
    values: Vec<f64>,
    orthant: OrthantVector,
    residual_norm: f64,
    iterations: usize,
}

impl CoefficientVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn orthant(&self) -> &OrthantVector {
        &self.orthant
    }

    /// Infinity norm of the stationarity residual at exit.
    pub fn residual_norm(&self) -> f64 {
        self.residual_norm
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NewtonConfig {
    /// Convergence threshold is `tol_scale` times the total weight mass,
    /// applied to the infinity norm of the residual.
    pub tol_scale: f64,
    pub max_iterations: usize,
    /// Step halvings allowed per iteration before giving up.
    pub max_halvings: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { tol_scale: 1e-10, max_iterations: 100, max_halvings: 50 }
    }
}

impl NewtonConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol_scale.is_finite() && self.tol_scale > 0.0) {
            return Err(Error::Config(format!("tol_scale must be positive, got {}", self.tol_scale)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_weights(weights: &[f64], n: usize) -> Result<f64> {
    if weights.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} nodes",
            weights.len(),
            n
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidInput("weights must be positive and finite".into()));
    }
    Ok(weights.iter().sum())
}

fn check_coeffs(coeffs: &[f64], n: usize) -> Result<()> {
    if coeffs.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for {} nodes",
            coeffs.len(),
            n
        )));
    }
    if coeffs.iter().any(|c| !c.is_finite() || *c == 0.0) {
        return Err(Error::InvalidInput(
            "coefficients must be finite and nonzero".into(),
        ));
    }
    Ok(())
}

fn residual_into(
    op: &dyn KernelOperator,
    weights: &[f64],
    total: f64,
    coeffs: &[f64],
    scratch: &mut [f64],
    out: &mut [f64],
) {
    for (s, (&w, &c)) in scratch.iter_mut().zip(weights.iter().zip(coeffs)) {
        *s = w * c;
    }
    op.apply(scratch, out);
    for (o, &c) in out.iter_mut().zip(coeffs) {
        *o = *o / total - 1.0 / c;
    }
}

/// Stationarity residual of `coeffs` against a dense Gram matrix.
pub fn residual(coeffs: &[f64], gram: &GramMatrix, weights: &[f64]) -> Result<Vec<f64>> {
    let n = gram.len();
    let total = check_weights(weights, n)?;
    check_coeffs(coeffs, n)?;
    let mut scratch = vec![0.0; n];
    let mut out = vec![0.0; n];
    residual_into(gram, weights, total, coeffs, &mut scratch, &mut out);
    Ok(out)
}

/// Dense Jacobian of the residual: `diag(1/c_i^2) + (1/n) S diag(w)`.
pub fn residual_jacobian(
    coeffs: &[f64],
    gram: &GramMatrix,
    weights: &[f64],
) -> Result<Array2<f64>> {
    let n = gram.len();
    let total = check_weights(weights, n)?;
    check_coeffs(coeffs, n)?;
    let mut jac = Array2::zeros((n, n));
    for i in 0..n {
        for k in 0..n {
            let mut v = gram.entry(i, k) * weights[k] / total;
            if i == k {
                v += 1.0 / (coeffs[i] * coeffs[i]);
            }
            jac[(i, k)] = v;
        }
    }
    Ok(jac)
}

/// Log-likelihood of the data at a stationary point. The residual equation
/// pins the fitted density at node `i` to `1 / c_i^2`, so the weighted
/// log-likelihood is `-sum_i w_i ln(c_i^2)`. Larger is better.
pub fn likelihood_value(coeffs: &[f64], weights: &[f64]) -> Result<f64> {
    check_weights(weights, coeffs.len())?;
    check_coeffs(coeffs, weights.len())?;
    let mut acc = 0.0;
    for (&c, &w) in coeffs.iter().zip(weights) {
        acc -= w * (c * c).ln();
    }
    Ok(acc)
}

/// Positive root of the decoupled node equation `1/c - c*fc/n = g`, where
/// `g >= 0` summarizes the node's coupling to the rest of the sample.
/// Rationalized so no subtraction occurs; `1 - c*g = c^2 fc/n` then sits in
/// `[0, 1]` by construction.
pub fn scalar_coefficient(g: f64, n: f64, fc: f64) -> Result<f64> {
    if !(g.is_finite() && g >= 0.0) {
        return Err(Error::InvalidInput(format!("coupling must be nonnegative, got {g}")));
    }
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::InvalidInput(format!("sample mass must be positive, got {n}")));
    }
    if !(fc.is_finite() && fc > 0.0) {
        return Err(Error::InvalidInput(format!("cut-off must be positive, got {fc}")));
    }
    Ok(2.0 / (g + (g * g + 4.0 * fc / n).sqrt()))
}

struct NewtonSystem<'a> {
    op: &'a dyn KernelOperator,
    weights: &'a [f64],
    total: f64,
}

impl NewtonSystem<'_> {
    /// Applies `A = W D + (1/n) W S W` with `D = diag(1/c^2)`.
    fn apply_symmetrized(&self, coeffs: &[f64], v: &[f64], fast: bool, out: &mut [f64]) {
        let n = v.len();
        let mut wv = vec![0.0; n];
        for i in 0..n {
            wv[i] = self.weights[i] * v[i];
        }
        if fast {
            self.op.apply_fast(&wv, out);
        } else {
            self.op.apply(&wv, out);
        }
        for i in 0..n {
            out[i] = self.weights[i] * (v[i] / (coeffs[i] * coeffs[i]) + out[i] / self.total);
        }
    }

    fn direction_dense(&self, coeffs: &[f64], rho: &[f64]) -> Result<Vec<f64>> {
        let n = coeffs.len();
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let mut v = self.weights[i] * self.op.entry(i, j) * self.weights[j] / self.total;
                if i == j {
                    v += self.weights[i] / (coeffs[i] * coeffs[i]);
                }
                a[(i, j)] = v;
            }
        }
        let rhs: Vec<f64> = rho.iter().zip(self.weights).map(|(&r, &w)| -w * r).collect();
        cholesky_solve(a, &rhs)
    }

    fn direction_iterative(&self, coeffs: &[f64], rho: &[f64], tol: f64) -> Vec<f64> {
        let n = coeffs.len();
        let diag_s = self.op.diagonal();
        let precond: Vec<f64> = (0..n)
            .map(|i| {
                self.weights[i] / (coeffs[i] * coeffs[i])
                    + self.weights[i] * self.weights[i] * diag_s / self.total
            })
            .collect();
        let rhs: Vec<f64> = rho.iter().zip(self.weights).map(|(&r, &w)| -w * r).collect();
        let fast = true;
        let (d, _outcome) = pcg(
            |v, out| self.apply_symmetrized(coeffs, v, fast, out),
            &precond,
            &rhs,
            tol,
            200,
        );
        d
    }
}

fn solve_orthant_inner(
    op: &dyn KernelOperator,
    weights: &[f64],
    orthant: &OrthantVector,
    start: Option<&[f64]>,
    config: &NewtonConfig,
) -> Result<CoefficientVector> {
    config.validate()?;
    let n = op.len();
    if n == 0 {
        return Err(Error::InvalidInput("cannot solve an empty system".into()));
    }
    if orthant.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "orthant of length {} for {} nodes",
            orthant.len(),
            n
        )));
    }
    let total = check_weights(weights, n)?;
    let diag = op.diagonal();

    let mut coeffs: Vec<f64> = match start {
        Some(c0) => {
            check_coeffs(c0, n)?;
            if !orthant.contains(c0) {
                return Err(Error::InvalidInput(
                    "starting point must lie strictly inside the orthant".into(),
                ));
            }
            c0.to_vec()
        }
        None => (0..n).map(|i| orthant.sign(i) / diag.sqrt()).collect(),
    };

    let system = NewtonSystem { op, weights, total };
    let tol = config.tol_scale * total;
    let mut scratch = vec![0.0; n];
    let mut rho = vec![0.0; n];
    residual_into(op, weights, total, &coeffs, &mut scratch, &mut rho);
    let mut rho_inf = norm_inf(&rho);
    let mut rho_two = norm2(&rho);
    let mut best = (rho_inf, coeffs.clone());
    let mut prev_inf = f64::INFINITY;

    for iter in 0..config.max_iterations {
        if rho_inf <= tol {
            return Ok(CoefficientVector {
                values: coeffs,
                orthant: orthant.clone(),
                residual_norm: rho_inf,
                iterations: iter,
            });
        }

        let direction = if n <= DIRECT_SOLVE_LIMIT {
            match system.direction_dense(&coeffs, &rho) {
                Ok(d) => d,
                Err(_) => {
                    // Loss of definiteness away from the root; the iterative
                    // path handles the same system without factorizing.
                    system.direction_iterative(&coeffs, &rho, 1e-10)
                }
            }
        } else {
            let forcing = if prev_inf.is_finite() {
                (0.1 * (rho_inf / prev_inf).powf(1.5)).clamp(1e-6, 1e-2)
            } else {
                1e-2
            };
            system.direction_iterative(&coeffs, &rho, forcing)
        };
        prev_inf = rho_inf;

        let mut step = 1.0f64;
        let mut accepted = false;
        let mut trial = vec![0.0; n];
        let mut trial_rho = vec![0.0; n];
        for _ in 0..=config.max_halvings {
            for i in 0..n {
                trial[i] = coeffs[i] + step * direction[i];
            }
            if orthant.contains(&trial) {
                residual_into(op, weights, total, &trial, &mut scratch, &mut trial_rho);
                let trial_two = norm2(&trial_rho);
                if trial_two.is_finite() && trial_two < rho_two {
                    coeffs.copy_from_slice(&trial);
                    rho.copy_from_slice(&trial_rho);
                    rho_two = trial_two;
                    rho_inf = norm_inf(&rho);
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::Convergence {
                residual: best.0,
                iterations: iter,
                best: best.1,
            });
        }
        if rho_inf < best.0 {
            best = (rho_inf, coeffs.clone());
        }
    }

    if rho_inf <= tol {
        return Ok(CoefficientVector {
            values: coeffs,
            orthant: orthant.clone(),
            residual_norm: rho_inf,
            iterations: config.max_iterations,
        });
    }
    Err(Error::Convergence {
        residual: best.0,
        iterations: config.max_iterations,
        best: best.1,
    })
}

/// Newton solve over an arbitrary kernel operator, with an optional warm
/// start strictly inside the orthant.
pub fn solve_orthant_op(
    op: &dyn KernelOperator,
    weights: &[f64],
    orthant: &OrthantVector,
    start: Option<&[f64]>,
    config: &NewtonConfig,
) -> Result<CoefficientVector> {
    solve_orthant_inner(op, weights, orthant, start, config)
}

/// Newton solve against a dense Gram matrix from the default starting point.
pub fn solve_orthant(
    gram: &GramMatrix,
    weights: &[f64],
    orthant: &OrthantVector,
    config: &NewtonConfig,
) -> Result<CoefficientVector> {
    solve_orthant_inner(gram, weights, orthant, None, config)
}

/// Same as [`solve_orthant`] but starting from a caller-chosen point.
pub fn solve_orthant_from(
    gram: &GramMatrix,
    weights: &[f64],
    orthant: &OrthantVector,
    start: &[f64],
    config: &NewtonConfig,
) -> Result<CoefficientVector> {
    solve_orthant_inner(gram, weights, orthant, Some(start), config)
}

/// Outcome of exhaustive orthant enumeration.
#[derive(Debug, Clone, Serialize)]
pub struct GlobalSolve {
    pub coefficients: CoefficientVector,
    pub likelihood: f64,
    pub failed_orthants: usize,
}

/// Orders candidate optima: likelihood first, then sign sum, then
/// lexicographic comparison with positive preceding negative. Ties beyond
/// likelihood occur in practice because negating a root gives another root
/// with identical likelihood.
pub fn better_candidate(
    lik_a: f64,
    orthant_a: &OrthantVector,
    lik_b: f64,
    orthant_b: &OrthantVector,
) -> bool {
    if lik_a != lik_b {
        return lik_a > lik_b;
    }
    let (sa, sb) = (orthant_a.sign_sum(), orthant_b.sign_sum());
    if sa != sb {
        return sa > sb;
    }
    orthant_a.signs() > orthant_b.signs()
}

/// Solves every orthant and keeps the likelihood-optimal root. Only
/// feasible for tiny systems; larger ones must go through the guided
/// search in the fitting layer.
pub fn global_solve_bruteforce(
    gram: &GramMatrix,
    weights: &[f64],
    config: &NewtonConfig,
) -> Result<GlobalSolve> {
    let n = gram.len();
    if n == 0 {
        return Err(Error::InvalidInput("cannot solve an empty system".into()));
    }
    if n > BRUTEFORCE_LIMIT {
        return Err(Error::TooLarge { what: "bruteforce node count", got: n, max: BRUTEFORCE_LIMIT });
    }
    check_weights(weights, n)?;
    let mut best: Option<(f64, CoefficientVector)> = None;
    let mut failed = 0usize;
    for bits in 0..(1u64 << n) {
        let orthant = OrthantVector::from_bits(bits, n);
        match solve_orthant(gram, weights, &orthant, config) {
            Ok(cv) => {
                let lik = likelihood_value(cv.values(), weights)?;
                let replace = match &best {
                    None => true,
                    Some((best_lik, best_cv)) => {
                        better_candidate(lik, cv.orthant(), *best_lik, best_cv.orthant())
                    }
                };
                if replace {
                    best = Some((lik, cv));
                }
            }
            Err(_) => failed += 1,
        }
    }
    match best {
        Some((likelihood, coefficients)) => Ok(GlobalSolve {
            coefficients,
            likelihood,
            failed_orthants: failed,
        }),
        None => Err(Error::InvalidInput(
            "no orthant solve converged during enumeration".into(),
        )),
    }
}
