//! File plumbing shared by the subcommands: CSV ingestion with
//! line-numbered errors, config stamping, and atomic artifact writes.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use blml::pointprocess::{CovariateTrack, SpikeTrain};
use blml::SampleSet;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// First sixteen hex digits of the SHA-256 of the serialized invocation.
/// Stamped into every artifact so a file can be traced to the exact
/// configuration that produced it.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config).context("serializing the run configuration")?;
    let digest = Sha256::digest(&bytes);
    Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
}

fn stamp_line(hash: &str, seed: Option<u64>) -> String {
    match seed {
        Some(s) => format!("# config {hash} seed {s}\n"),
        None => format!("# config {hash} seed none\n"),
    }
}

/// Writes through a temporary sibling and renames into place, so a crash
/// mid-write never leaves a truncated file under the final name.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| anyhow!("output path {} has no file name", path.display()))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path)
        .with_context(|| format!("moving {} into place", path.display()))?;
    Ok(())
}

/// CSV artifact: stamp comment, then the header-led body.
pub fn write_stamped_csv(path: &Path, hash: &str, seed: Option<u64>, body: &str) -> Result<()> {
    let mut out = stamp_line(hash, seed);
    out.push_str(body);
    write_atomic(path, &out)
}

pub fn write_json<T: Serialize>(path: &Path, artifact: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(artifact).context("serializing the artifact")?;
    body.push('\n');
    write_atomic(path, &body)
}

/// Readers skip `#` comment lines, so our own CSV outputs round-trip as
/// inputs.
fn open_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))
}

fn parse_field(path: &Path, line: u64, name: &str, field: &str) -> Result<f64> {
    let value: f64 = field
        .parse()
        .map_err(|_| anyhow!("{}: line {line}: {name} value {field:?} is not a number", path.display()))?;
    if !value.is_finite() {
        bail!("{}: line {line}: {name} value {value} is not finite", path.display());
    }
    Ok(value)
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

/// Reads a sample table with header `x` (one dimension) or `x1,..,xd`.
pub fn read_samples(path: &Path) -> Result<SampleSet> {
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .with_context(|| format!("reading the header of {}", path.display()))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    let dim = if cols == ["x"] {
        1
    } else {
        let expected: Vec<String> = (1..=cols.len()).map(|d| format!("x{d}")).collect();
        if !cols.is_empty() && cols == expected.iter().map(String::as_str).collect::<Vec<_>>() {
            cols.len()
        } else {
            bail!(
                "{}: header must be `x` or `x1,..,xd`, got {:?}",
                path.display(),
                cols.join(",")
            );
        }
    };
    let mut data = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("reading {}", path.display()))?;
        let line = record_line(&record);
        if record.len() != dim {
            bail!("{}: line {line}: expected {dim} fields, found {}", path.display(), record.len());
        }
        for (j, field) in record.iter().enumerate() {
            data.push(parse_field(path, line, &headers[j], field)?);
        }
    }
    if data.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok(SampleSet::new(data, dim, path.display().to_string())?)
}

/// Reads an event-time table with header `t`.
pub fn read_spikes(path: &Path) -> Result<SpikeTrain> {
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .with_context(|| format!("reading the header of {}", path.display()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["t"] {
        bail!("{}: header must be `t`", path.display());
    }
    let mut times = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("reading {}", path.display()))?;
        let line = record_line(&record);
        if record.len() != 1 {
            bail!("{}: line {line}: expected 1 field, found {}", path.display(), record.len());
        }
        times.push(parse_field(path, line, "t", &record[0])?);
    }
    SpikeTrain::new(times).with_context(|| format!("validating {}", path.display()))
}

/// Reads a covariate path with header `t,x` or `t,x,y`; the time column
/// must advance on a uniform grid.
pub fn read_track(path: &Path) -> Result<CovariateTrack> {
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .with_context(|| format!("reading the header of {}", path.display()))?
        .clone();
    let dim = match headers.iter().collect::<Vec<_>>().as_slice() {
        ["t", "x"] => 1,
        ["t", "x", "y"] => 2,
        other => bail!("{}: header must be `t,x` or `t,x,y`, got {:?}", path.display(), other.join(",")),
    };
    let mut times = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("reading {}", path.display()))?;
        let line = record_line(&record);
        if record.len() != dim + 1 {
            bail!("{}: line {line}: expected {} fields, found {}", path.display(), dim + 1, record.len());
        }
        times.push(parse_field(path, line, "t", &record[0])?);
        for j in 1..=dim {
            values.push(parse_field(path, line, &headers[j], &record[j])?);
        }
    }
    if times.len() < 2 {
        bail!("{}: a covariate path needs at least two rows", path.display());
    }
    let start = times[0];
    let step = (times[times.len() - 1] - start) / (times.len() - 1) as f64;
    if !(step.is_finite() && step > 0.0) {
        bail!("{}: time column does not advance", path.display());
    }
    for (i, &t) in times.iter().enumerate() {
        let expected = start + step * i as f64;
        if (t - expected).abs() > step * 1e-6 {
            bail!(
                "{}: data row {}: t={t} breaks the uniform grid (expected {expected})",
                path.display(),
                i + 1
            );
        }
    }
    Ok(CovariateTrack::new(start, step, values, dim)?)
}
