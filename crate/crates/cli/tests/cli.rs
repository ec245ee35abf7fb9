use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use stlod_cli::config::{Config, Radius};
use stlod_cli::experiments::{histogram, run_decay, run_estimate, run_multirhs};
use stlod_core::grid::{build_uniform_mesh, saturating_radius};

const TINY: &str = "\
# n_H = 2, n_h = 4, N_T = 3, N_t = 4
coarse_exponent = 2
fine_exponent = 4
t_final = 0.75
coarse_steps = 3
fine_per_coarse = 4
eps_x = 0.25
eps_t = 0.125
seed = 5
k = 1
ell = 2
rhs_count = 6
histogram_bins = 3
";

fn tiny() -> Config {
    Config::parse(TINY).unwrap()
}

fn stlod(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stlod")).args(args).current_dir(dir).output().unwrap()
}

fn records(bytes: &[u8]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn config_round_trip_is_idempotent() {
    let cfg = tiny();
    let text = cfg.to_text();
    let again = Config::parse(&text).unwrap();
    assert_eq!(again, cfg);
    assert_eq!(again.to_text(), text);
}

#[test]
fn correctors_are_byte_identical_and_fast() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    let start = Instant::now();
    let first = stlod(&["correctors", "--config", "tiny.cfg", "--out", "a.bin"], dir.path());
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(start.elapsed().as_secs_f64() < 10.0);
    let second = stlod(&["correctors", "--config", "tiny.cfg", "--out", "b.bin", "--workers", "3"], dir.path());
    assert!(second.status.success());
    let a = std::fs::read(dir.path().join("a.bin")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.bin")).unwrap());
}

#[test]
fn mismatched_cache_is_refused_with_config_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    std::fs::write(dir.path().join("other.cfg"), TINY.replace("seed = 5", "seed = 6")).unwrap();
    assert!(stlod(&["correctors", "--config", "tiny.cfg", "--out", "c.bin"], dir.path()).status.success());
    let out = stlod(&["solve", "--config", "other.cfg", "--cache", "c.bin", "--out", "s.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "ell = 0\n").unwrap();
    std::fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    std::fs::write(dir.path().join("junk.bin"), b"not a cache").unwrap();
    let code = |args: &[&str]| stlod(args, dir.path()).status.code();
    assert_eq!(code(&["solve", "--config", "bad.cfg"]), Some(2));
    assert_eq!(code(&["solve", "--config", "missing.cfg"]), Some(4));
    assert_eq!(code(&["solve", "--config", "tiny.cfg", "--cache", "junk.bin"]), Some(4));
    assert_eq!(code(&["solve", "--config", "tiny.cfg", "--out", "no/such/dir/s.csv"]), Some(4));
    assert_eq!(code(&["solve", "--config", "tiny.cfg", "--out", "s.csv"]), Some(0));
}

#[test]
fn solve_writes_parseable_csv_and_reuses_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    let run = |out: &str| {
        let o = stlod(&["solve", "--config", "tiny.cfg", "--cache", "t.bin", "--out", out], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(dir.path().join(out)).unwrap()
    };
    let built = run("a.csv");
    assert!(dir.path().join("t.bin").exists());
    let cached = run("b.csv");
    assert_eq!(built, cached);
    let (header, rows) = records(&built);
    assert_eq!(header, ["time", "x", "y", "value"]);
    assert_eq!(rows.len(), 3 * 17 * 17);
    for row in &rows {
        for field in row {
            let v: f64 = field.parse().unwrap();
            assert_eq!(stlod_cli::table::g17(v), *field);
        }
    }
    let centre: f64 =
        rows.iter().find(|r| r[0] == "0.75" && r[1] == "0.5" && r[2] == "0.5").unwrap()[3].parse().unwrap();
    assert!(centre > 0.0);
}

#[test]
fn decay_is_monotone_and_vanishes_when_saturated() {
    let mut cfg = tiny();
    let k_sat = saturating_radius(&build_uniform_mesh(2).unwrap());
    cfg.decay_ks = (1..=k_sat).collect();
    cfg.decay_ells = vec![1, 2, 3];
    let report = run_decay(&cfg, 2).unwrap();
    assert_eq!(report.reference_k, k_sat);
    let errs: Vec<f64> = report.spatial.iter().map(|r| r.1).collect();
    assert!(errs.windows(2).all(|w| w[1] <= w[0]), "{errs:?}");
    assert!(*errs.last().unwrap() <= 1e-8);
    let terrs: Vec<f64> = report.temporal.iter().map(|r| r.1).collect();
    assert!(terrs.windows(2).all(|w| w[1] <= w[0]), "{terrs:?}");
    assert!(terrs[2] <= 1e-8);
    assert!(report.spatial.iter().all(|r| r.2.is_some() == (r.0 >= 3)));

    let (header, rows) = records(&report.table().to_bytes().unwrap());
    assert_eq!(header, ["kind", "parameter", "loc_error", "estimator"]);
    assert_eq!(rows.len(), k_sat + 3);
    assert_eq!(rows[0][3], "");
}

#[test]
fn estimate_maxima_and_zero_corrector() {
    let mut cfg = tiny();
    cfg.k = Radius::Fixed(3);
    let report = run_estimate(&cfg, None, 2).unwrap();
    assert_eq!(report.rows.len(), 32 * 3);
    assert!(report.rows.iter().all(|r| r.2.unwrap() >= 0.0 && r.3 >= 0.0 && r.2.unwrap().is_finite()));
    let col = report.rows.iter().map(|r| r.2.unwrap()).fold(0.0, f64::max);
    assert_eq!(report.max_delta, Some(col));
    assert_eq!(report.max_theta, report.rows.iter().map(|r| r.3).fold(0.0, f64::max));

    cfg.zero_corrector = true;
    let zero = run_estimate(&cfg, None, 2).unwrap();
    assert!(zero.rows.iter().all(|r| r.2 == Some(0.0) && r.3 == 0.0));
}

#[test]
fn multirhs_uses_the_cache_only() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("m.bin");
    let cfg = tiny();
    let first = run_multirhs(&cfg, Some(&cache), 1).unwrap();
    assert_eq!((first.counter.builds, first.counter.hits), (1, 0));
    let second = run_multirhs(&cfg, Some(&cache), 2).unwrap();
    assert_eq!((second.counter.builds, second.counter.hits), (0, 1));
    assert_eq!(second.chains_computed, 0);
    assert_eq!(first.errors, second.errors);
    assert!(second.online_system_dims.iter().all(|&d| d == second.n_coarse));
    let (header, rows) = records(&second.table().to_bytes().unwrap());
    assert_eq!(header, ["bin_left", "count"]);
    assert_eq!(rows.iter().map(|r| r[1].parse::<usize>().unwrap()).sum::<usize>(), 6);
}

#[test]
fn histogram_counts_every_value() {
    let h = histogram(&[0.1, 0.25, 0.25, 0.4], 3);
    assert_eq!(h.iter().map(|b| b.1).collect::<Vec<_>>(), [1, 2, 1]);
    assert_eq!(histogram(&[1.0, 1.0], 4)[0].1, 2);
}
