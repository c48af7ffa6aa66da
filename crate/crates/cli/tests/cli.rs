use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DMatrix;
use qdmd::dataio::{self, MatrixFormat};
use qdmd::dmd::{self, SnapshotPair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn qdmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdmd")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn default_pendulum_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj.bin");
    let o = qdmd(&["simulate", "--out", p(&out), "--seed", "17"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("simulate config:"));
    assert!(text.contains("\"seed\":17"));
    let m = dataio::read_matrix(&out, None).unwrap();
    assert_eq!(m.shape(), (2, 100_001));
}

#[test]
fn zero_dt_is_a_config_error() {
    let o = qdmd(&["simulate", "--dt", "0", "--out", "/tmp/unused.bin"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--dt"));
}

#[test]
fn unknown_flag_is_rejected() {
    let o = qdmd(&["simulate", "--out", "/tmp/unused.bin", "--bogus", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn van_der_pol_final_state_is_finite() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("vdp.csv");
    let o = qdmd(&["simulate", "--system", "vanderpol", "--duration", "100", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let m = dataio::read_matrix(&out, None).unwrap();
    assert_eq!(m.shape(), (2, 1001));
    let last = m.column(1000);
    assert!(last.iter().all(|x| x.is_finite() && x.abs() < 3.0));
    assert!(stdout(&o).contains("final state:"));
}

#[test]
fn linear_system_divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.bin");
    let o = qdmd(&[
        "simulate", "--system", "linear", "--matrix", "900", "--x0", "1", "--duration", "10", "--out", p(&out),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

const SMALL_SWEEP: &str = r#"{
  "source": {
    "kind": "system",
    "system": {"kind": "van_der_pol"},
    "trajectory": {"dt": 0.1, "duration": 60.0},
    "embedding_dimension": 5
  },
  "training_snapshots": 300,
  "bit_list": [3, 6],
  "trials": 6,
  "master_seed": 4,
  "rank_rule": {"kind": "fixed", "value": 4},
  "quantizer_range": [-1.0, 1.0]
}"#;

#[test]
fn sweep_output_independent_of_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, SMALL_SWEEP).unwrap();
    let one = dir.path().join("one.json");
    let eight = dir.path().join("eight.json");
    let a = qdmd(&["sweep", "--config", p(&cfg), "--threads", "1", "--out", p(&one)]);
    let b = qdmd(&["sweep", "--config", p(&cfg), "--threads", "8", "--out", p(&eight)]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(b.status.code(), Some(0));
    assert_eq!(std::fs::read(&one).unwrap(), std::fs::read(&eight).unwrap());
    let text = stdout(&a);
    assert!(text.contains("\"seed\":4"));
    assert!(text.contains("\"epsilon\":0.25"));

    let csv = dir.path().join("samples.csv");
    let r = qdmd(&["report", "--input", p(&one), "--csv", p(&csv)]);
    assert_eq!(r.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 1 + 2 * 6);
}

#[test]
fn sweep_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let missing = qdmd(&["sweep", "--config", "/nonexistent/cfg.json", "--out", p(&out)]);
    assert_eq!(missing.status.code(), Some(2));

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, SMALL_SWEEP.replace("\"trials\"", "\"trails\"")).unwrap();
    let bad = qdmd(&["sweep", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(bad.status.code(), Some(2));

    std::fs::write(&cfg, SMALL_SWEEP).unwrap();
    let zero = qdmd(&["sweep", "--config", p(&cfg), "--trials", "0", "--out", p(&out)]);
    assert_eq!(zero.status.code(), Some(2));
    assert!(!out.exists());
}

fn write_pair(dir: &Path, pair: &SnapshotPair) -> (String, String) {
    let a = dir.join("phi.bin");
    let b = dir.join("phiprime.bin");
    dataio::write_matrix(pair.phi(), &a, MatrixFormat::Binary).unwrap();
    dataio::write_matrix(pair.phi_prime(), &b, MatrixFormat::Binary).unwrap();
    (p(&a).to_owned(), p(&b).to_owned())
}

fn uniform_pair(n: usize, t: usize) -> SnapshotPair {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let phi = DMatrix::from_fn(n, t, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let phi_prime = DMatrix::from_fn(n, t, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    SnapshotPair::new(phi, phi_prime).unwrap()
}

#[test]
fn recover_matches_library_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let pair = uniform_pair(3, 400);
    let (a, b) = write_pair(dir.path(), &pair);
    let out = dir.path().join("k.bin");
    let o = qdmd(&["recover", "--phi", &a, "--phiprime", &b, "--epsilon", "0.125", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("guard: ok"));
    let got = dataio::read_matrix(&out, None).unwrap();
    let expected = dmd::recover_regularized(&pair, 0.125).unwrap().k;
    assert!(got.iter().zip(expected.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn recover_reports_guard_for_coarse_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let pair = uniform_pair(3, 400);
    let (a, b) = write_pair(dir.path(), &pair);
    let out = dir.path().join("k.bin");
    let o = qdmd(&["recover", "--phi", &a, "--phiprime", &b, "--epsilon", "8", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("guard: tripped"));
}

#[test]
fn recover_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // rank-deficient Phi: no convex negative regularizer exists
    let phi = DMatrix::from_fn(2, 50, |_, j| j as f64 * 0.01);
    let pair = SnapshotPair::new(phi.clone(), phi).unwrap();
    let (a, b) = write_pair(dir.path(), &pair);
    let out = dir.path().join("k.bin");
    let o = qdmd(&["recover", "--phi", &a, "--phiprime", &b, "--epsilon", "0.1", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));

    let short = dir.path().join("short.bin");
    dataio::write_matrix(&DMatrix::zeros(2, 10), &short, MatrixFormat::Binary).unwrap();
    let o = qdmd(&["recover", "--phi", &a, "--phiprime", p(&short), "--epsilon", "0.1", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn quantize_and_estimate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("traj.bin");
    let q = dir.path().join("q.bin");
    let k = dir.path().join("k.csv");
    assert!(qdmd(&["simulate", "--system", "vanderpol", "--duration", "20", "--out", p(&traj)]).status.success());
    let o = qdmd(&["quantize", "--input", p(&traj), "--bits", "12", "--u-min", "-4", "--u-max", "4", "--seed", "3", "--out", p(&q)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("\"epsilon\":0.001953125"));
    let first = std::fs::read(&q).unwrap();
    assert!(qdmd(&["quantize", "--input", p(&traj), "--bits", "12", "--u-min", "-4", "--u-max", "4", "--seed", "3", "--out", p(&q)]).status.success());
    assert_eq!(first, std::fs::read(&q).unwrap());

    let o = qdmd(&["estimate", "--input", p(&q), "--method", "reduced", "--rank", "2", "--out", p(&k)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("lambda_0"));
    assert_eq!(dataio::read_matrix(&k, None).unwrap().shape(), (2, 2));
}
