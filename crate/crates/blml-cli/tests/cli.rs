//! End-to-end checks of the command-line binary: each test runs the real
//! executable against files in a fresh temporary directory.

use std::ffi::OsStr;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use blml::pointprocess::{reflected_walk_track, simulate_from_intensity};
use blml::seeding::derive_rng;
use blml::surrogate::{AnalyticPdf, PdfKind};

fn run<I, S>(dir: &Path, args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_blml"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawning the binary")
}

fn run_ok<I, S>(dir: &Path, args: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "command failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("stdout is text")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("reading {name}: {e}"))
}

fn json(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&read(dir, name)).unwrap_or_else(|e| panic!("parsing {name}: {e}"))
}

/// Comment stamp, then the header, then one line per data row.
fn data_rows<'a>(csv: &'a str, header: &str) -> Vec<&'a str> {
    let mut lines = csv.lines();
    let stamp = lines.next().expect("stamp line");
    assert!(stamp.starts_with("# config "), "missing config stamp: {stamp:?}");
    assert!(stamp.contains(" seed "), "stamp lacks the seed: {stamp:?}");
    assert_eq!(lines.next(), Some(header), "unexpected header");
    lines.filter(|l| !l.is_empty()).collect()
}

fn field(row: &str, index: usize) -> f64 {
    row.split(',').nth(index).expect("column").parse().expect("numeric field")
}

fn write_samples(dir: &Path, name: &str, values: &[f64]) -> PathBuf {
    let mut body = String::from("x\n");
    for v in values {
        body.push_str(&format!("{v}\n"));
    }
    let path = dir.join(name);
    fs::write(&path, body).expect("writing samples");
    path
}

#[test]
fn fit_writes_the_expected_artifact() {
    let dir = tempfile::tempdir().expect("tempdir");
    write_samples(dir.path(), "three.csv", &[-0.4, 0.1, 0.7]);
    run_ok(
        dir.path(),
        [
            "fit", "--input", "three.csv", "--algo", "trivial", "--fc", "0.8", "--out",
            "fit.json", "--curve", "curve.csv", "--grid", "-3:3:121",
        ],
    );

    let artifact = json(dir.path(), "fit.json");
    assert_eq!(artifact["algorithm"], "trivial");
    assert_eq!(artifact["sample_count"], 3);
    assert_eq!(artifact["coefficients"].as_array().expect("coefficients").len(), 3);
    assert_eq!(artifact["cutoff"], serde_json::json!([0.8]));
    assert!(artifact["residual_norm"].as_f64().expect("residual") < 1e-8);
    assert!((artifact["integral"].as_f64().expect("integral") - 1.0).abs() < 1e-6);

    let curve = read(dir.path(), "curve.csv");
    let rows = data_rows(&curve, "x,density");
    assert_eq!(rows.len(), 121);
    assert!(rows.iter().all(|r| field(r, 1) >= 0.0), "densities must be nonnegative");
}

#[test]
fn binned_fit_compresses_large_input() {
    let dir = tempfile::tempdir().expect("tempdir");
    let truth = AnalyticPdf::new(PdfKind::Gaussian).expect("truth");
    let mut rng = derive_rng(0xC11, &[0]);
    let xs = truth.sample(100_000, &mut rng).expect("draw");
    write_samples(dir.path(), "big.csv", &xs);
    run_ok(
        dir.path(),
        ["fit", "--input", "big.csv", "--algo", "quick", "--fc", "0.8", "--out", "fit.json"],
    );

    let artifact = json(dir.path(), "fit.json");
    assert_eq!(artifact["sample_count"], 100_000);
    let nodes = artifact["node_count"].as_u64().expect("node count");
    assert!(
        (10..2_000u64).contains(&nodes),
        "binning should compress 1e5 samples to a modest node set, got {nodes}"
    );
}

#[test]
fn sign_search_refuses_oversized_input() {
    let dir = tempfile::tempdir().expect("tempdir");
    let truth = AnalyticPdf::new(PdfKind::SincFourthMixture).expect("truth");
    let mut rng = derive_rng(0xC12, &[0]);
    let xs = truth.sample(500, &mut rng).expect("draw");
    write_samples(dir.path(), "big.csv", &xs);
    let out = run(
        dir.path(),
        ["fit", "--input", "big.csv", "--algo", "bqp", "--fc", "0.8", "--out", "fit.json"],
    );
    assert!(!out.status.success());
    assert!(
        stderr_of(&out).contains("exceeds the supported maximum 200"),
        "refusal must cite the size guard: {}",
        stderr_of(&out)
    );
    assert!(!dir.path().join("fit.json").exists(), "no artifact on refusal");
}

#[test]
fn sample_parse_errors_name_the_line() {
    let dir = tempfile::tempdir().expect("tempdir");
    fs::write(dir.path().join("bad.csv"), "x\n0.5\nbanana\n0.7\n").expect("writing");
    let out = run(
        dir.path(),
        ["fit", "--input", "bad.csv", "--algo", "trivial", "--fc", "0.8", "--out", "f.json"],
    );
    assert!(!out.status.success());
    assert!(stderr_of(&out).contains("line 3"), "error must name the line: {}", stderr_of(&out));
}

const SWEEP_ARGS: [&str; 12] = [
    "mise", "--pdf", "sinc4mix", "--estimators", "trivial,kde2", "--sizes", "100", "--reps",
    "3", "--seed", "1", "--out",
];

#[test]
fn error_sweep_reruns_byte_identical() {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut first = SWEEP_ARGS.to_vec();
    first.push("a.csv");
    run_ok(dir.path(), &first);
    let mut second = SWEEP_ARGS.to_vec();
    second.push("b.csv");
    run_ok(dir.path(), &second);

    let a = read(dir.path(), "a.csv");
    assert_eq!(a, read(dir.path(), "b.csv"), "same seed must reproduce the same bytes");
    let rows = data_rows(&a, "estimator,size,replicates,failures,mean_ise,stderr_ise");
    assert_eq!(rows.len(), 2, "one row per (estimator, size) cell");
    assert!(rows[0].starts_with("trivial,100,3,"));
    assert!(rows[1].starts_with("kde2,100,3,"));
    assert!(rows.iter().all(|r| field(r, 4) > 0.0), "mean errors are positive");
}

#[test]
fn error_sweep_rejects_zero_replicates() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = run(
        dir.path(),
        [
            "mise", "--pdf", "sinc4mix", "--estimators", "trivial", "--sizes", "100", "--reps",
            "0", "--seed", "1", "--out", "z.csv",
        ],
    );
    assert!(!out.status.success());
    assert!(
        stderr_of(&out).contains("at least one replicate"),
        "unexpected message: {}",
        stderr_of(&out)
    );
}

#[test]
fn cutoff_scan_penalizes_the_undersized_band() {
    let dir = tempfile::tempdir().expect("tempdir");
    run_ok(
        dir.path(),
        [
            "fcscan", "--mode", "mise-vs-fc", "--ratios", "0.5,2", "--n", "800", "--reps", "3",
            "--seed", "2", "--out", "scan.csv",
        ],
    );
    let csv = read(dir.path(), "scan.csv");
    let rows = data_rows(&csv, "ratio,cutoff,replicates,failures,mean_ise,stderr_ise");
    assert_eq!(rows.len(), 2);
    let undersized = field(rows[0], 4);
    let oversized = field(rows[1], 4);
    assert!(
        undersized > 5.0 * oversized,
        "half the band edge must inflate the error: {undersized} vs {oversized}"
    );
}

#[test]
fn cutoff_scan_rejects_an_empty_ratio_grid() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = run(
        dir.path(),
        ["fcscan", "--mode", "mise-vs-fc", "--ratios", "", "--out", "scan.csv"],
    );
    assert!(!out.status.success());
    assert!(
        stderr_of(&out).contains("ratio grid is empty"),
        "unexpected message: {}",
        stderr_of(&out)
    );
}

#[test]
fn score_scan_reports_a_knee_near_the_band_edge() {
    let dir = tempfile::tempdir().expect("tempdir");
    run_ok(
        dir.path(),
        [
            "fcscan", "--mode", "mnll", "--pdf", "sinc4mix", "--n", "1000", "--seed", "4",
            "--fc-grid", "0.1:1.0:19", "--out", "scan.csv", "--knee", "knee.json",
        ],
    );
    let csv = read(dir.path(), "scan.csv");
    let rows = data_rows(&csv, "cutoff,mnll,fd_derivative,analytic_derivative");
    assert_eq!(rows.len(), 19);

    let artifact = json(dir.path(), "knee.json");
    assert_eq!(artifact["found"], true);
    let knee = artifact["knee"]["cutoff"].as_f64().expect("knee cut-off");
    assert!(
        (knee - 0.4).abs() <= 0.05 + 1e-12,
        "knee {knee} is more than one grid step from the band edge"
    );
}

#[test]
fn bench_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().expect("tempdir");
    run_ok(
        dir.path(),
        [
            "bench-time", "--estimators", "quick", "--sizes", "500", "--seed", "4", "--out",
            "bench.csv",
        ],
    );
    let csv = read(dir.path(), "bench.csv");
    let rows = data_rows(&csv, "estimator,n,seconds");
    assert_eq!(rows.len(), 1, "single estimator and size make a single row");
    assert!(rows[0].starts_with("quick,500,"));
    assert!(field(rows[0], 2) > 0.0);
}

#[test]
fn bench_orders_the_binned_fit_first() {
    let dir = tempfile::tempdir().expect("tempdir");
    run_ok(
        dir.path(),
        [
            "bench-time", "--estimators", "trivial,quick", "--sizes", "2000", "--seed", "4",
            "--out", "bench.csv",
        ],
    );
    let csv = read(dir.path(), "bench.csv");
    let rows = data_rows(&csv, "estimator,n,seconds");
    assert_eq!(rows.len(), 2);
    let trivial = field(rows[0], 2);
    let quick = field(rows[1], 2);
    assert!(
        quick < trivial,
        "the binned fit must be strictly faster: quick {quick} vs trivial {trivial}"
    );
}

/// Writes a simulated covariate path and matching inhomogeneous event
/// train, mirroring a place-field recording at desk scale.
fn write_cif_fixture(dir: &Path, seed: u64) -> (usize, usize) {
    let mut rng = derive_rng(seed, &[0]);
    let track = reflected_walk_track(0.0, 0.01, 5001, 0.0, 1.0, 0.3, 0.98, &mut rng)
        .expect("simulating the track");
    let times: Vec<f64> = (0..track.len()).map(|i| track.time(i)).collect();
    let intensity: Vec<f64> = (0..track.len())
        .map(|i| {
            let x = track.row(i)[0];
            5.0 + 35.0 * x * x
        })
        .collect();
    let spikes = simulate_from_intensity(&times, &intensity, &mut rng).expect("simulating events");

    let mut covar = String::from("t,x\n");
    for i in 0..track.len() {
        covar.push_str(&format!("{},{}\n", track.time(i), track.row(i)[0]));
    }
    fs::write(dir.join("covar.csv"), covar).expect("writing the track");
    let mut body = String::from("t\n");
    for t in spikes.times() {
        body.push_str(&format!("{t}\n"));
    }
    fs::write(dir.join("spikes.csv"), body).expect("writing the events");
    (track.len(), spikes.len())
}

const CIF_ARGS: [&str; 7] =
    ["cif", "--spikes", "spikes.csv", "--covariates", "covar.csv", "--cutoff", "4"];

#[test]
fn intensity_round_trip_calibrates_and_reruns_identically() {
    let dir = tempfile::tempdir().expect("tempdir");
    let (_, events) = write_cif_fixture(dir.path(), 2);
    assert!(events > 200, "fixture should carry a few hundred events, got {events}");

    let mut first = CIF_ARGS.to_vec();
    first.extend(["--out-model", "m.json", "--out-ks", "ks.json", "--out-curve", "curve.csv"]);
    run_ok(dir.path(), &first);

    let model = json(dir.path(), "m.json");
    assert_eq!(model["backend"], "quick");
    assert!(model["rate"].as_f64().expect("rate") > 0.0);
    assert!(model["train_events"].as_u64().expect("train") >= 50);
    assert!(model["test_events"].as_u64().expect("test") >= 20);

    let ks = json(dir.path(), "ks.json");
    assert_eq!(ks["pass"], true, "the simulated model should sit inside the 95% band: {ks}");
    assert!(ks["normalized"].as_f64().expect("normalized") < 1.0);

    let curve = read(dir.path(), "curve.csv");
    let rows = data_rows(&curve, "index,model_cdf,empirical_cdf");
    assert_eq!(rows.len(), ks["intervals"].as_u64().expect("intervals") as usize);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&field(r, 1))));

    let mut second = CIF_ARGS.to_vec();
    second.extend(["--out-model", "m2.json", "--out-ks", "ks2.json", "--out-curve", "curve2.csv"]);
    run_ok(dir.path(), &second);
    assert_eq!(read(dir.path(), "m.json"), read(dir.path(), "m2.json"));
    assert_eq!(read(dir.path(), "ks.json"), read(dir.path(), "ks2.json"));
    assert_eq!(curve, read(dir.path(), "curve2.csv"));
}

#[test]
fn intensity_fit_refuses_a_sparse_training_set() {
    let dir = tempfile::tempdir().expect("tempdir");
    write_cif_fixture(dir.path(), 3);
    let spikes = read(dir.path(), "spikes.csv");
    let few: String = spikes.lines().take(11).collect::<Vec<_>>().join("\n") + "\n";
    fs::write(dir.path().join("spikes.csv"), few).expect("truncating events");

    let mut args = CIF_ARGS.to_vec();
    args.extend(["--out-model", "m.json", "--out-ks", "ks.json", "--out-curve", "curve.csv"]);
    let out = run(dir.path(), &args);
    assert!(!out.status.success());
    assert!(
        stderr_of(&out).contains("need at least 50"),
        "refusal must cite the training floor: {}",
        stderr_of(&out)
    );
}
