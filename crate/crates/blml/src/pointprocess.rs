//! Conditional intensity estimation from event trains and covariates.
//!
//! The intensity over a covariate vector `x` factors as the overall event
//! rate times the ratio of two densities: covariates sampled at events over
//! covariates sampled along the whole recording. Both densities are fitted
//! with the estimators in this crate and renormalized over a declared
//! bounded domain, so the ratio is a proper likelihood ratio there. Model
//! quality is judged by the time-rescaling theorem: true intensities turn
//! inter-event intervals into unit exponentials, so the rescaled marks must
//! pass a uniformity test.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::{fit_quick, BlmlFit};
use crate::sample::SampleSet;
use crate::sinc::CutoffFrequency;
use crate::solver::NewtonConfig;

/// Fewest event rows accepted for a conditional-intensity fit.
pub const MIN_EVENT_ROWS: usize = 50;

/// Fewest held-out events accepted for a calibration report.
pub const MIN_TEST_EVENTS: usize = 20;

/// Event times, strictly increasing.
#[derive(Debug, Clone, Serialize)]
pub struct SpikeTrain {
    times: Vec<f64>,
}

impl SpikeTrain {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("event times must be finite".into()));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("event times must be strictly increasing".into()));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Events with `t0 <= t < t1`.
    pub fn restricted(&self, t0: f64, t1: f64) -> SpikeTrain {
        SpikeTrain {
            times: self.times.iter().cloned().filter(|&t| t >= t0 && t < t1).collect(),
        }
    }
}

/// Covariate path sampled on a uniform time grid, `dim` values per step.
#[derive(Debug, Clone, Serialize)]
pub struct CovariateTrack {
    start: f64,
    step: f64,
    values: Vec<f64>,
    dim: usize,
}

impl CovariateTrack {
    pub fn new(start: f64, step: f64, values: Vec<f64>, dim: usize) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) || !start.is_finite() {
            return Err(Error::InvalidInput(format!(
                "track needs a finite start and positive step, got {start} and {step}"
            )));
        }
        if dim == 0 || values.len() % dim != 0 || values.len() / dim < 2 {
            return Err(Error::InvalidInput(
                "track values must hold at least two rows of `dim` entries".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("track values must be finite".into()));
        }
        Ok(Self { start, step, values, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn end(&self) -> f64 {
        self.start + self.step * (self.len() - 1) as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        self.start + self.step * i as f64
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Linear interpolation at `t`, which must lie within the track span.
    pub fn value_at(&self, t: f64, out: &mut [f64]) -> Result<()> {
        if t < self.start || t > self.end() {
            return Err(Error::InvalidInput(format!(
                "time {t} outside the track span [{}, {}]",
                self.start,
                self.end()
            )));
        }
        let pos = (t - self.start) / self.step;
        let k = (pos.floor() as usize).min(self.len() - 2);
        let frac = pos - k as f64;
        let a = self.row(k);
        let b = self.row(k + 1);
        for d in 0..self.dim {
            out[d] = a[d] * (1.0 - frac) + b[d] * frac;
        }
        Ok(())
    }
}

/// Covariate rows extracted at chosen times.
#[derive(Debug, Clone, Serialize)]
pub struct CovariateMatrix {
    times: Vec<f64>,
    rows: Vec<f64>,
    dim: usize,
    dropped: usize,
}

impl CovariateMatrix {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Rows discarded because no earlier event existed to anchor them.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn to_samples(&self, provenance: &str) -> Result<SampleSet> {
        SampleSet::new(self.rows.clone(), self.dim, provenance)
    }
}

/// Index of the last event strictly before `t`, if any.
fn last_event_before(times: &[f64], t: f64) -> Option<usize> {
    let k = times.partition_point(|&s| s < t);
    k.checked_sub(1)
}

fn history_column(times: &[f64], t: f64) -> Option<f64> {
    last_event_before(times, t).map(|k| (t - times[k]).ln())
}

/// Covariate rows along the track's own grid, one per step. With history
/// enabled, each row gains a trailing column holding the log of the time
/// since the last event, and rows at or before the first event are dropped.
pub fn build_covariates(
    track: &CovariateTrack,
    train: &SpikeTrain,
    include_history: bool,
) -> Result<CovariateMatrix> {
    let out_dim = track.dim() + usize::from(include_history);
    let mut times = Vec::new();
    let mut rows = Vec::new();
    let mut dropped = 0usize;
    for i in 0..track.len() {
        let t = track.time(i);
        let history = if include_history {
            match history_column(train.times(), t) {
                Some(h) => Some(h),
                None => {
                    dropped += 1;
                    continue;
                }
            }
        } else {
            None
        };
        times.push(t);
        rows.extend_from_slice(track.row(i));
        if let Some(h) = history {
            rows.push(h);
        }
    }
    if times.is_empty() {
        return Err(Error::InvalidInput("no usable covariate rows on the track grid".into()));
    }
    Ok(CovariateMatrix { times, rows, dim: out_dim, dropped })
}

/// Covariate rows at the event times inside the track span. With history
/// included, the first event has no preceding interval and is dropped.
pub fn covariates_at_events(
    track: &CovariateTrack,
    train: &SpikeTrain,
    include_history: bool,
) -> Result<CovariateMatrix> {
    let out_dim = track.dim() + usize::from(include_history);
    let mut times = Vec::new();
    let mut rows = Vec::new();
    let mut dropped = 0usize;
    let mut buf = vec![0.0; track.dim()];
    for &t in train.times() {
        if t < track.start() || t > track.end() {
            dropped += 1;
            continue;
        }
        let history = if include_history {
            match history_column(train.times(), t) {
                Some(h) => Some(h),
                None => {
                    dropped += 1;
                    continue;
                }
            }
        } else {
            None
        };
        track.value_at(t, &mut buf)?;
        times.push(t);
        rows.extend_from_slice(&buf);
        if let Some(h) = history {
            rows.push(h);
        }
    }
    if times.is_empty() {
        return Err(Error::InvalidInput("no events fall inside the track span".into()));
    }
    Ok(CovariateMatrix { times, rows, dim: out_dim, dropped })
}

/// Bounded covariate domain over which the density ratio is normalized.
#[derive(Debug, Clone, Serialize)]
pub struct CifDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub grid_points: Vec<usize>,
}

impl CifDomain {
    fn validate(&self, dim: usize) -> Result<()> {
        if self.lo.len() != dim || self.hi.len() != dim || self.grid_points.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "domain of dimension {} for covariates of dimension {dim}",
                self.lo.len()
            )));
        }
        for d in 0..dim {
            if !(self.lo[d].is_finite() && self.hi[d].is_finite() && self.lo[d] < self.hi[d]) {
                return Err(Error::InvalidInput(format!(
                    "domain bounds ({}, {}) invalid in coordinate {d}",
                    self.lo[d], self.hi[d]
                )));
            }
            if self.grid_points[d] < 2 {
                return Err(Error::InvalidInput(
                    "domain needs at least two grid points per coordinate".into(),
                ));
            }
        }
        let total: usize = self.grid_points.iter().product();
        if total > 2_000_000 {
            return Err(Error::Config(format!(
                "normalization grid of {total} points is too large"
            )));
        }
        Ok(())
    }

    fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }
}

/// Product-Gaussian kernel density over covariate rows.
#[derive(Debug, Clone, Serialize)]
pub struct KdeProduct {
    samples: SampleSet,
    bandwidths: Vec<f64>,
}

impl KdeProduct {
    pub fn new(samples: SampleSet, bandwidths: Vec<f64>) -> Result<Self> {
        if bandwidths.len() != samples.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} bandwidths for dimension {}",
                bandwidths.len(),
                samples.dim()
            )));
        }
        if bandwidths.iter().any(|q| !(q.is_finite() && *q > 0.0)) {
            return Err(Error::InvalidInput("bandwidths must be positive and finite".into()));
        }
        Ok(Self { samples, bandwidths })
    }

    fn density_at(&self, point: &[f64]) -> f64 {
        let n = self.samples.len() as f64;
        let norm: f64 = self
            .bandwidths
            .iter()
            .map(|q| q * (2.0 * std::f64::consts::PI).sqrt())
            .product();
        let mut acc = 0.0;
        for row in self.samples.iter_points() {
            let mut e = 0.0;
            for d in 0..row.len() {
                let u = (point[d] - row[d]) / self.bandwidths[d];
                e += u * u;
            }
            acc += (-0.5 * e).exp();
        }
        acc / (n * norm)
    }
}

enum RatioDensity {
    Band(BlmlFit),
    Product(KdeProduct),
}

impl RatioDensity {
    fn density_at(&self, point: &[f64]) -> Result<f64> {
        match self {
            RatioDensity::Band(fit) => fit.density_at(point),
            RatioDensity::Product(kde) => Ok(kde.density_at(point)),
        }
    }
}

/// Density backend for the numerator and denominator fits.
#[derive(Debug, Clone, Serialize)]
pub enum CifBackend {
    /// Accelerated band-limited fit with per-coordinate cut-offs.
    Quick { cutoff: Vec<f64> },
    /// Product-Gaussian kernels with per-coordinate bandwidths.
    Kde { bandwidth: Vec<f64> },
}

/// Fitted conditional-intensity model.
pub struct CifModel {
    numerator: RatioDensity,
    denominator: RatioDensity,
    numerator_mass: f64,
    denominator_mass: f64,
    rate: f64,
    domain: CifDomain,
    floor: f64,
    floor_hits: AtomicU64,
}

fn domain_mass(density: &RatioDensity, domain: &CifDomain) -> Result<f64> {
    let dim = domain.lo.len();
    let steps: Vec<f64> = (0..dim)
        .map(|d| (domain.hi[d] - domain.lo[d]) / (domain.grid_points[d] - 1) as f64)
        .collect();
    let mut acc = 0.0;
    let mut index = vec![0usize; dim];
    let mut point = vec![0.0f64; dim];
    loop {
        let mut w = 1.0;
        for d in 0..dim {
            point[d] = domain.lo[d] + steps[d] * index[d] as f64;
            if index[d] == 0 || index[d] + 1 == domain.grid_points[d] {
                w *= 0.5;
            }
        }
        acc += w * density.density_at(&point)?;
        let mut d = 0;
        loop {
            index[d] += 1;
            if index[d] < domain.grid_points[d] {
                break;
            }
            index[d] = 0;
            d += 1;
            if d == dim {
                return Ok(acc * steps.iter().product::<f64>());
            }
        }
    }
}

/// Fits the intensity model from event rows and occupancy rows covering
/// `duration` seconds of recording.
pub fn fit_cif(
    events: &CovariateMatrix,
    occupancy: &CovariateMatrix,
    duration: f64,
    backend: &CifBackend,
    domain: &CifDomain,
    newton: &NewtonConfig,
) -> Result<CifModel> {
    let dim = events.dim();
    if occupancy.dim() != dim {
        return Err(Error::DimensionMismatch(format!(
            "event rows of dimension {dim} against occupancy rows of dimension {}",
            occupancy.dim()
        )));
    }
    domain.validate(dim)?;
    if events.len() < MIN_EVENT_ROWS {
        return Err(Error::TooSmall { what: "event rows", got: events.len(), min: MIN_EVENT_ROWS });
    }
    if occupancy.len() < 2 {
        return Err(Error::TooSmall { what: "occupancy rows", got: occupancy.len(), min: 2 });
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::InvalidInput(format!("duration must be positive, got {duration}")));
    }
    let event_samples = events.to_samples("event covariates")?;
    let occupancy_samples = occupancy.to_samples("occupancy covariates")?;
    let (numerator, denominator) = match backend {
        CifBackend::Quick { cutoff } => {
            let fc = CutoffFrequency::new(cutoff.clone())?;
            if fc.dim() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "{} cut-offs for covariates of dimension {dim}",
                    fc.dim()
                )));
            }
            let num = fit_quick(&event_samples, &fc, None, newton)?;
            let den = fit_quick(&occupancy_samples, &fc, None, newton)?;
            (RatioDensity::Band(num), RatioDensity::Band(den))
        }
        CifBackend::Kde { bandwidth } => {
            let num = KdeProduct::new(event_samples, bandwidth.clone())?;
            let den = KdeProduct::new(occupancy_samples, bandwidth.clone())?;
            (RatioDensity::Product(num), RatioDensity::Product(den))
        }
    };
    let numerator_mass = domain_mass(&numerator, domain)?;
    let denominator_mass = domain_mass(&denominator, domain)?;
    for mass in [numerator_mass, denominator_mass] {
        if !(mass.is_finite() && mass > 1e-12) {
            return Err(Error::Unnormalizable { mass });
        }
    }
    let floor = 1e-12 / domain.volume();
    Ok(CifModel {
        numerator,
        denominator,
        numerator_mass,
        denominator_mass,
        rate: events.len() as f64 / duration,
        domain: domain.clone(),
        floor,
        floor_hits: AtomicU64::new(0),
    })
}

impl CifModel {
    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Times the denominator floor engaged during evaluations so far.
    pub fn floor_hits(&self) -> u64 {
        self.floor_hits.load(Ordering::Relaxed)
    }

    pub fn intensity_at(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.domain.lo.len() {
            return Err(Error::DimensionMismatch(format!(
                "query of dimension {} against model of dimension {}",
                point.len(),
                self.domain.lo.len()
            )));
        }
        let num = self.numerator.density_at(point)? / self.numerator_mass;
        let mut den = self.denominator.density_at(point)? / self.denominator_mass;
        if den < self.floor {
            den = self.floor;
            self.floor_hits.fetch_add(1, Ordering::Relaxed);
        }
        Ok(self.rate * num / den)
    }

    /// Intensity along flat covariate rows.
    pub fn eval_rows(&self, rows: &[f64]) -> Result<Vec<f64>> {
        let dim = self.domain.lo.len();
        if rows.len() % dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} row values do not split into rows of dimension {dim}",
                rows.len()
            )));
        }
        rows.chunks_exact(dim).map(|p| self.intensity_at(p)).collect()
    }
}

/// Uniformity report for rescaled inter-event intervals.
#[derive(Debug, Clone, Serialize)]
pub struct KsReport {
    /// Rescaled marks, sorted ascending.
    pub marks: Vec<f64>,
    /// Two-sided Kolmogorov-Smirnov distance to the uniform law.
    pub statistic: f64,
    /// Statistic over the 95 percent band `1.36 / sqrt(m)`.
    pub normalized: f64,
    pub intervals: usize,
    pub pass: bool,
}

impl KsReport {
    /// Plot-ready curve: the model's cumulative value at each sorted mark
    /// against the empirical cumulative height. A well-calibrated model
    /// traces the diagonal.
    pub fn csv_string(&self) -> String {
        let mut out = String::from("index,model_cdf,empirical_cdf\n");
        let m = self.marks.len() as f64;
        for (i, z) in self.marks.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", i, z, (i as f64 + 0.5) / m));
        }
        out
    }
}

/// Applies the time-rescaling theorem: integrates the modeled intensity
/// between consecutive events and maps each interval through
/// `1 - exp(-increment)`. The cumulative integral is trapezoid on the
/// covariate grid and linearly interpolated between grid points.
pub fn time_rescale(
    event_times: &[f64],
    grid_times: &[f64],
    intensity: &[f64],
) -> Result<KsReport> {
    if grid_times.len() != intensity.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} grid times against {} intensity values",
            grid_times.len(),
            intensity.len()
        )));
    }
    if grid_times.len() < 2 || grid_times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("grid times must be strictly increasing".into()));
    }
    if intensity.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidInput("intensity values must be finite and nonnegative".into()));
    }
    if event_times.len() < MIN_TEST_EVENTS {
        return Err(Error::TooSmall {
            what: "events for calibration",
            got: event_times.len(),
            min: MIN_TEST_EVENTS,
        });
    }
    if event_times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("event times must be strictly increasing".into()));
    }
    let (t0, t1) = (grid_times[0], grid_times[grid_times.len() - 1]);
    if event_times.iter().any(|&t| t < t0 || t > t1) {
        return Err(Error::InvalidInput(
            "every event must lie inside the intensity grid span".into(),
        ));
    }

    let mut cumulative = Vec::with_capacity(grid_times.len());
    cumulative.push(0.0);
    for k in 1..grid_times.len() {
        let dt = grid_times[k] - grid_times[k - 1];
        let inc = 0.5 * (intensity[k] + intensity[k - 1]) * dt;
        cumulative.push(cumulative[k - 1] + inc);
    }
    let cumulative_at = |t: f64| -> f64 {
        let k = grid_times.partition_point(|&g| g <= t).min(grid_times.len() - 1);
        let k = k.max(1);
        let frac = (t - grid_times[k - 1]) / (grid_times[k] - grid_times[k - 1]);
        cumulative[k - 1] + frac * (cumulative[k] - cumulative[k - 1])
    };

    let mut marks: Vec<f64> = event_times
        .windows(2)
        .map(|w| 1.0 - (-(cumulative_at(w[1]) - cumulative_at(w[0]))).exp())
        .collect();
    marks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = marks.len() as f64;
    let mut statistic = 0.0f64;
    for (i, &z) in marks.iter().enumerate() {
        let lo = z - i as f64 / m;
        let hi = (i as f64 + 1.0) / m - z;
        statistic = statistic.max(lo).max(hi);
    }
    let normalized = statistic * m.sqrt() / 1.36;
    Ok(KsReport { marks, statistic, normalized, intervals: event_times.len() - 1, pass: normalized < 1.0 })
}

/// Homogeneous Poisson train on `[t0, t1)`.
pub fn simulate_constant_rate<R: Rng + ?Sized>(
    rate: f64,
    t0: f64,
    t1: f64,
    rng: &mut R,
) -> Result<SpikeTrain> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::InvalidInput(format!("rate must be positive, got {rate}")));
    }
    if !(t0.is_finite() && t1.is_finite() && t0 < t1) {
        return Err(Error::InvalidInput(format!("invalid window [{t0}, {t1})")));
    }
    let gaps = Exp::new(rate).map_err(|e| Error::InvalidInput(format!("rate: {e}")))?;
    let mut times = Vec::new();
    let mut t = t0;
    loop {
        t += gaps.sample(rng);
        if t >= t1 {
            break;
        }
        times.push(t);
    }
    SpikeTrain::new(times)
}

/// Inhomogeneous Poisson train by thinning against the grid maximum, with
/// the target intensity linearly interpolated between grid points.
pub fn simulate_from_intensity<R: Rng + ?Sized>(
    grid_times: &[f64],
    intensity: &[f64],
    rng: &mut R,
) -> Result<SpikeTrain> {
    if grid_times.len() != intensity.len() || grid_times.len() < 2 {
        return Err(Error::InvalidInput("need matching grids of at least two points".into()));
    }
    if grid_times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("grid times must be strictly increasing".into()));
    }
    if intensity.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidInput("intensity values must be finite and nonnegative".into()));
    }
    let ceiling = intensity.iter().cloned().fold(0.0f64, f64::max);
    if ceiling == 0.0 {
        return SpikeTrain::new(Vec::new());
    }
    let (t0, t1) = (grid_times[0], grid_times[grid_times.len() - 1]);
    let value_at = |t: f64| -> f64 {
        let k = grid_times.partition_point(|&g| g <= t).min(grid_times.len() - 1).max(1);
        let frac = (t - grid_times[k - 1]) / (grid_times[k] - grid_times[k - 1]);
        intensity[k - 1] * (1.0 - frac) + frac * intensity[k]
    };
    let gaps = Exp::new(ceiling).map_err(|e| Error::InvalidInput(format!("rate: {e}")))?;
    let mut times = Vec::new();
    let mut t = t0;
    loop {
        t += gaps.sample(rng);
        if t >= t1 {
            break;
        }
        if rng.gen::<f64>() * ceiling <= value_at(t) {
            times.push(t);
        }
    }
    SpikeTrain::new(times)
}

/// Smooth covariate trajectory: first-order autoregressive velocity with
/// reflection at the interval ends, so occupancy concentrates strictly
/// inside `[lo, hi]`.
pub fn reflected_walk_track<R: Rng + ?Sized>(
    start_time: f64,
    step: f64,
    steps: usize,
    lo: f64,
    hi: f64,
    speed: f64,
    smoothness: f64,
    rng: &mut R,
) -> Result<CovariateTrack> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidInput(format!("invalid interval [{lo}, {hi}]")));
    }
    if steps < 2 {
        return Err(Error::InvalidInput("walk needs at least two steps".into()));
    }
    if !(0.0..1.0).contains(&smoothness) {
        return Err(Error::InvalidInput(format!(
            "smoothness must lie in [0, 1), got {smoothness}"
        )));
    }
    if !(speed.is_finite() && speed > 0.0) {
        return Err(Error::InvalidInput(format!("speed must be positive, got {speed}")));
    }
    let mut x = 0.5 * (lo + hi);
    let mut v = 0.0f64;
    let drive = speed * (1.0 - smoothness * smoothness).sqrt();
    let mut values = Vec::with_capacity(steps);
    for _ in 0..steps {
        values.push(x);
        let noise: f64 = rand_distr::StandardNormal.sample(rng);
        v = smoothness * v + drive * noise;
        x += v * step;
        while x < lo || x > hi {
            if x < lo {
                x = 2.0 * lo - x;
                v = -v;
            }
            if x > hi {
                x = 2.0 * hi - x;
                v = -v;
            }
            if !x.is_finite() {
                return Err(Error::InvalidInput("walk diverged".into()));
            }
        }
    }
    CovariateTrack::new(start_time, step, values, 1)
}
