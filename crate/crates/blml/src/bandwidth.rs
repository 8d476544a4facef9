//! Cut-off frequency selection.
//!
//! The likelihood of a fitted band-limited density never decreases as the
//! cut-off grows: differentiating the stationarity system gives
//! `dL/dfc = (1/n) |sum_j w_j c_j exp(i pi fc x_j)|^2`, a squared modulus.
//! The selection score, likelihood per unit weight, therefore rises
//! steeply while the cut-off is too small and flattens once the true band
//! is covered; the knee of that curve estimates the band edge.

use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fit::{fit_quick, fit_trivial, BlmlFit};
use crate::sample::SampleSet;
use crate::sinc::CutoffFrequency;
use crate::solver::NewtonConfig;

/// Moment heuristic: the reciprocal of the maximum-likelihood standard
/// deviation. A scale-matched starting point, not a band estimate.
pub fn estimate_cutoff_gaussian(samples: &SampleSet) -> Result<f64> {
    let xs = samples.scalars()?;
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return Err(Error::TooSmall { what: "sample count for a scale estimate", got: xs.len(), min: 2 });
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::InvalidInput(
            "samples are all equal; no scale to invert".into(),
        ));
    }
    Ok(1.0 / var.sqrt())
}

/// Log-spaced cut-off grid covering a factor of eight on both sides of the
/// seed value.
pub fn default_scan_grid(seed: f64, points: usize) -> Result<Vec<f64>> {
    if !(seed.is_finite() && seed > 0.0) {
        return Err(Error::InvalidInput(format!("grid seed must be positive, got {seed}")));
    }
    if points < 2 {
        return Err(Error::InvalidInput("grid needs at least two points".into()));
    }
    let lo = (seed / 8.0).ln();
    let hi = (seed * 8.0).ln();
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points).map(|k| (lo + step * k as f64).exp()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanAlgorithm {
    Trivial,
    Quick,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanConfig {
    pub algorithm: ScanAlgorithm,
    pub newton: NewtonConfig,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self { algorithm: ScanAlgorithm::Quick, newton: NewtonConfig::default() }
    }
}

/// Scan of the selection score over a cut-off grid. Entries are absent
/// where the fit failed to converge.
#[derive(Debug, Clone, Serialize)]
pub struct MnllScan {
    pub grid: Vec<f64>,
    pub mnll: Vec<Option<f64>>,
    /// Finite-difference derivative of the score along the grid.
    pub fd_derivative: Vec<Option<f64>>,
    /// Closed-form derivative from the fitted coefficients.
    pub analytic_derivative: Vec<Option<f64>>,
}

impl MnllScan {
    pub fn csv_string(&self) -> String {
        let cell = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("cutoff,mnll,fd_derivative,analytic_derivative\n");
        for i in 0..self.grid.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.grid[i],
                cell(&self.mnll[i]),
                cell(&self.fd_derivative[i]),
                cell(&self.analytic_derivative[i]),
            ));
        }
        out
    }

    pub fn valid_points(&self) -> usize {
        self.mnll.iter().filter(|m| m.is_some()).count()
    }
}

/// Derivative of the selection score in the cut-off, from the squared
/// modulus identity. Never negative.
fn analytic_mnll_derivative(fit: &BlmlFit, fc: f64) -> f64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for (point, (&c, &w)) in fit
        .nodes()
        .iter_points()
        .zip(fit.coefficients().values().iter().zip(fit.weights()))
    {
        let theta = PI * fc * point[0];
        re += w * c * theta.cos();
        im += w * c * theta.sin();
    }
    let n = fit.total_weight();
    (re * re + im * im) / (n * n)
}

pub fn mnll_scan(samples: &SampleSet, grid: &[f64], config: &ScanConfig) -> Result<MnllScan> {
    samples.scalars()?;
    if grid.len() < 2 {
        return Err(Error::InvalidInput("scan grid needs at least two points".into()));
    }
    if grid.iter().any(|fc| !(fc.is_finite() && *fc > 0.0)) {
        return Err(Error::InvalidInput("scan grid values must be positive".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("scan grid must be strictly increasing".into()));
    }
    let mut mnll = Vec::with_capacity(grid.len());
    let mut analytic = Vec::with_capacity(grid.len());
    for &fc in grid {
        let cutoff = CutoffFrequency::scalar(fc)?;
        let fit = match config.algorithm {
            ScanAlgorithm::Trivial => fit_trivial(samples, &cutoff, &config.newton),
            ScanAlgorithm::Quick => fit_quick(samples, &cutoff, None, &config.newton),
        };
        match fit {
            Ok(f) => {
                mnll.push(Some(f.selection_score()));
                analytic.push(Some(analytic_mnll_derivative(&f, fc)));
            }
            Err(_) => {
                mnll.push(None);
                analytic.push(None);
            }
        }
    }
    let mut fd = vec![None; grid.len()];
    for i in 0..grid.len() {
        let (lo, hi) = if i == 0 {
            (0, 1)
        } else if i + 1 == grid.len() {
            (grid.len() - 2, grid.len() - 1)
        } else {
            (i - 1, i + 1)
        };
        if let (Some(a), Some(b)) = (mnll[lo], mnll[hi]) {
            fd[i] = Some((b - a) / (grid[hi] - grid[lo]));
        }
    }
    Ok(MnllScan { grid: grid.to_vec(), mnll, fd_derivative: fd, analytic_derivative: analytic })
}

#[derive(Debug, Clone, Serialize)]
pub struct KneePoint {
    pub index: usize,
    pub cutoff: f64,
    /// Contrast between derivative magnitudes before and after the knee.
    pub ratio: f64,
}

const KNEE_WINDOW: usize = 2;
const KNEE_MIN_RATIO: f64 = 2.0;

/// Locates the knee of a scan: the grid point where the mean derivative
/// magnitude over the two preceding steps most exceeds the one over the
/// two following steps. A contrast below two means the curve never
/// flattens, so no band edge is detectable in the scanned window.
pub fn detect_knee(scan: &MnllScan) -> Result<KneePoint> {
    let len = scan.grid.len();
    if scan.valid_points() < 5 {
        return Err(Error::NoKnee(format!(
            "only {} valid scan points; need at least 5",
            scan.valid_points()
        )));
    }
    let magnitude: Vec<Option<f64>> =
        scan.fd_derivative.iter().map(|d| d.map(f64::abs)).collect();
    let scale = magnitude.iter().flatten().cloned().fold(0.0f64, f64::max);
    if scale == 0.0 {
        return Err(Error::NoKnee("score curve is exactly flat".into()));
    }
    let floor = 1e-12 * scale;
    let window_mean = |range: std::ops::Range<usize>| -> Option<f64> {
        let mut acc = 0.0;
        for i in range.clone() {
            acc += magnitude[i]?;
        }
        Some(acc / range.len() as f64)
    };
    let mut best: Option<KneePoint> = None;
    for i in KNEE_WINDOW..len.saturating_sub(KNEE_WINDOW) {
        let Some(left) = window_mean(i - KNEE_WINDOW..i) else { continue };
        let Some(right) = window_mean(i + 1..i + 1 + KNEE_WINDOW) else { continue };
        let ratio = left / right.max(floor);
        let replace = match &best {
            None => true,
            Some(b) => ratio > b.ratio,
        };
        if replace {
            best = Some(KneePoint { index: i, cutoff: scan.grid[i], ratio });
        }
    }
    match best {
        Some(knee) if knee.ratio >= KNEE_MIN_RATIO => Ok(knee),
        Some(knee) => Err(Error::NoKnee(format!(
            "derivative contrast {:.3} below {KNEE_MIN_RATIO}; curve does not flatten",
            knee.ratio
        ))),
        None => Err(Error::NoKnee("no candidate with full windows".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::derive_rng;
    use crate::surrogate::{AnalyticPdf, PdfKind};
    use approx::assert_relative_eq;

    #[test]
    fn scale_heuristic_inverts_the_deviation() {
        let samples = SampleSet::from_scalars(vec![0.0, 4.0], "t").unwrap();
        assert_relative_eq!(estimate_cutoff_gaussian(&samples).unwrap(), 0.5);
        let constant = SampleSet::from_scalars(vec![1.0, 1.0, 1.0], "t").unwrap();
        assert!(estimate_cutoff_gaussian(&constant).is_err());
    }

    #[test]
    fn grid_spans_a_factor_of_sixtyfour() {
        let grid = default_scan_grid(0.8, 24).unwrap();
        assert_eq!(grid.len(), 24);
        assert_relative_eq!(grid[0], 0.1, max_relative = 1e-12);
        assert_relative_eq!(grid[23], 6.4, max_relative = 1e-12);
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
    }

    fn synthetic_scan(mnll_values: &[f64]) -> MnllScan {
        let grid: Vec<f64> = (0..mnll_values.len()).map(|i| 0.1 + 0.1 * i as f64).collect();
        let mnll: Vec<Option<f64>> = mnll_values.iter().map(|&v| Some(v)).collect();
        let mut fd = vec![None; grid.len()];
        for i in 0..grid.len() {
            let (lo, hi) = if i == 0 {
                (0, 1)
            } else if i + 1 == grid.len() {
                (grid.len() - 2, grid.len() - 1)
            } else {
                (i - 1, i + 1)
            };
            fd[i] = Some((mnll_values[hi] - mnll_values[lo]) / (grid[hi] - grid[lo]));
        }
        MnllScan {
            grid,
            mnll,
            fd_derivative: fd,
            analytic_derivative: vec![None; mnll_values.len()],
        }
    }

    #[test]
    fn knee_found_at_the_flattening_point() {
        // Piecewise-linear score min(fc, 0.4) on 0.1..=1.0: flattens at 0.4.
        let values: Vec<f64> = (0..10).map(|i| (0.1 + 0.1 * i as f64).min(0.4)).collect();
        let knee = detect_knee(&synthetic_scan(&values)).unwrap();
        assert_eq!(knee.index, 3);
        assert_relative_eq!(knee.cutoff, 0.4, max_relative = 1e-12);
        assert!(knee.ratio > KNEE_MIN_RATIO);
    }

    #[test]
    fn steady_climb_has_no_knee() {
        let values: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let scan = synthetic_scan(&values);
        assert!(matches!(detect_knee(&scan), Err(Error::NoKnee(_))));
    }

    #[test]
    fn too_few_points_is_an_error() {
        let scan = synthetic_scan(&[3.0, 2.0, 1.0, 0.5]);
        assert!(matches!(detect_knee(&scan), Err(Error::NoKnee(_))));
    }

    #[test]
    fn scan_scores_rise_and_flatten_with_the_cutoff() {
        let pdf = AnalyticPdf::new(PdfKind::SincFourthMixture).unwrap();
        let draws = pdf.sample(200, &mut derive_rng(23, &[0])).unwrap();
        let samples = SampleSet::from_scalars(draws, "t").unwrap();
        let grid: Vec<f64> = (1..=40).map(|k| 0.05 * k as f64).collect();
        let scan = mnll_scan(
            &samples,
            &grid,
            &ScanConfig { algorithm: ScanAlgorithm::Trivial, newton: NewtonConfig::default() },
        )
        .unwrap();
        assert_eq!(scan.valid_points(), grid.len());
        let scores: Vec<f64> = scan.mnll.iter().map(|m| m.unwrap()).collect();
        for w in scores.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "scores must not decrease: {w:?}");
        }
        for d in scan.analytic_derivative.iter().flatten() {
            assert!(*d >= -1e-12, "analytic derivative must be nonnegative, got {d}");
        }
        // Steep climb below the band edge, flat above it.
        let below = scan.fd_derivative[3].unwrap();
        let above = scan.fd_derivative[19].unwrap();
        assert_relative_eq!(grid[3], 0.2, max_relative = 1e-12);
        assert_relative_eq!(grid[19], 1.0, max_relative = 1e-12);
        assert!(
            below >= 3.0 * above,
            "derivative at 0.2 ({below:.4}) not 3x the one at 1.0 ({above:.4})"
        );
    }

    #[test]
    fn scan_rejects_bad_grids() {
        let samples = SampleSet::from_scalars(vec![0.0, 1.0, 2.0], "t").unwrap();
        let cfg = ScanConfig::default();
        assert!(mnll_scan(&samples, &[0.5], &cfg).is_err());
        assert!(mnll_scan(&samples, &[0.5, 0.5], &cfg).is_err());
        assert!(mnll_scan(&samples, &[0.5, -1.0], &cfg).is_err());
    }

    #[test]
    fn csv_has_empty_cells_for_failures() {
        let scan = MnllScan {
            grid: vec![0.1, 0.2],
            mnll: vec![Some(1.0), None],
            fd_derivative: vec![None, None],
            analytic_derivative: vec![Some(-0.5), None],
        };
        let csv = scan.csv_string();
        assert!(csv.starts_with("cutoff,mnll,fd_derivative,analytic_derivative\n"));
        assert!(csv.contains("0.1,1,,-0.5\n"));
        assert!(csv.contains("0.2,,,\n"));
    }
}
