//! End-to-end CLI checks: flows, CSV schemas, exit codes.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_blocktri"))
}

fn run_ok(args: &[&str]) -> String {
    let out = bin().args(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn run_code(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).output().expect("spawn");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn gen(dir: &Path, nb: u64, n: u64, seed: u64) -> String {
    let path = dir.join(format!("m{nb}x{n}.btri"));
    run_ok(&[
        "gen",
        "--N",
        &nb.to_string(),
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        path.to_str().unwrap(),
    ]);
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_then_factor_single_block_meters_one_potrf() {
    let dir = tempfile::tempdir().unwrap();
    let m = gen(dir.path(), 1, 3, 9);
    let out = run_ok(&["factor", "--in", &m, "--strategy", "seq"]);
    // one potrf of a 3x3 block: 27 thirds
    assert!(out.contains("meter_units=27"), "{out}");
}

#[test]
fn verify_multi_stage_on_generated_instance() {
    let dir = tempfile::tempdir().unwrap();
    let m = gen(dir.path(), 32, 8, 1);
    let out = run_ok(&[
        "verify",
        "--in",
        &m,
        "--strategy",
        "multi",
        "--workers",
        "4",
        "--oracle",
    ]);
    assert!(out.contains("reconstruction strategy=multi"), "{out}");
}

#[test]
fn factor_all_strategies_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let m = gen(dir.path(), 17, 4, 3);
    let report = dir.path().join("report.csv");
    for strategy in ["seq", "partition", "single", "multi"] {
        run_ok(&[
            "factor",
            "--in",
            &m,
            "--strategy",
            strategy,
            "--workers",
            "2",
            "--report",
            report.to_str().unwrap(),
        ]);
    }
    let text = std::fs::read_to_string(&report).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("strategy,N,n,p,mode,wall_ns,meter_units,residual")
    );
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn solve_writes_solution_file() {
    let dir = tempfile::tempdir().unwrap();
    let m_path = dir.path().join("m.btri");
    let b_path = dir.path().join("b.brhs");
    let x_path = dir.path().join("x.brhs");
    run_ok(&[
        "gen",
        "--N",
        "13",
        "--n",
        "3",
        "--seed",
        "5",
        "--out",
        m_path.to_str().unwrap(),
        "--rhs-out",
        b_path.to_str().unwrap(),
        "--rhs-cols",
        "2",
    ]);
    run_ok(&[
        "solve",
        "--in",
        m_path.to_str().unwrap(),
        "--factor-strategy",
        "multi",
        "--rhs",
        b_path.to_str().unwrap(),
        "--out",
        x_path.to_str().unwrap(),
    ]);
    let x = blocktri::io::read_rhs::<f64>(&x_path).unwrap();
    assert_eq!((x.nblocks(), x.block_rows(), x.ncols()), (13, 3, 2));
    // cross-check against the library solve
    let m = blocktri::io::read_btri::<f64>(&m_path).unwrap();
    let b = blocktri::io::read_rhs::<f64>(&b_path).unwrap();
    assert!(blocktri::verify::solve_residual(&m, &x, &b) < 1e-10);
}

#[test]
fn interlaced_factor_solve() {
    let dir = tempfile::tempdir().unwrap();
    let m_path = dir.path().join("m.btri");
    let b_path = dir.path().join("b.brhs");
    run_ok(&[
        "gen",
        "--N",
        "20",
        "--n",
        "4",
        "--seed",
        "2",
        "--out",
        m_path.to_str().unwrap(),
        "--rhs-out",
        b_path.to_str().unwrap(),
    ]);
    let out = run_ok(&[
        "factor",
        "--in",
        m_path.to_str().unwrap(),
        "--strategy",
        "multi",
        "--mode",
        "atomic",
        "--workers",
        "4",
        "--interlace-solve",
        "--rhs",
        b_path.to_str().unwrap(),
    ]);
    assert!(out.contains("solve_units="), "{out}");
}

#[test]
fn model_partition_prints_exact_asymptote() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("model.csv");
    let out = run_ok(&[
        "model",
        "--strategy",
        "partition",
        "--N-range",
        "10:30",
        "--p-list",
        "2",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(out.contains("asymptote p=2: 26/19 = 1.368421"), "{out}");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("strategy,N,p,n,m,model_units,measured_units,speedup"));
    // measured column is populated
    assert!(text.lines().nth(1).unwrap().split(',').nth(6).unwrap() != "");
}

#[test]
fn model_multi_stage_is_piecewise_constant_at_unbounded_width() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("model.csv");
    run_ok(&[
        "model",
        "--strategy",
        "multi",
        "--N-range",
        "2:128",
        "--p-list",
        "inf",
        "--no-measure",
        "--out",
        csv.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut last: Option<(usize, u64)> = None;
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let nb: usize = cols[1].parse().unwrap();
        let units: u64 = cols[5].parse().unwrap();
        if let Some((_, prev)) = last {
            if nb.is_power_of_two() {
                assert!(units > prev, "expected jump at N={nb}");
            } else {
                assert_eq!(units, prev, "expected plateau at N={nb}");
            }
        }
        last = Some((nb, units));
    }
}

#[test]
fn bench_suite_emits_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    // tiny repetition counts keep the suite quick; the schema is the point
    run_ok(&[
        "bench",
        "--out",
        csv.to_str().unwrap(),
        "--reps",
        "1",
        "--warmups",
        "0",
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("strategy,N,n,p,mode,wall_ns,meter_units,residual"));
    assert!(text.lines().count() > 20);
    assert!(text.contains("multi,512,8,8,atomic,"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    // 3: unreadable input
    let (code, _) = run_code(&["factor", "--in", "/nonexistent.btri", "--strategy", "seq"]);
    assert_eq!(code, 3);

    // 3: infeasible partition (N=3 cannot host 4 chunks)
    let m = gen(dir.path(), 3, 2, 1);
    let (code, err) = run_code(&[
        "factor",
        "--in",
        &m,
        "--strategy",
        "partition",
        "--workers",
        "4",
    ]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("infeasible partition"), "{err}");

    // 4: not positive definite
    let bad = dir.path().join("bad.btri");
    {
        use blocktri::block::DenseBlock;
        let mut d = vec![DenseBlock::<f64>::identity(2); 3];
        d[2].set(0, 0, -4.0);
        d[2].set(1, 1, -4.0);
        let e = vec![DenseBlock::<f64>::zeros(2, 2); 2];
        let m = blocktri::matrix::BlockTridiag::new(d, e);
        blocktri::io::write_btri(&bad, &m).unwrap();
    }
    let (code, err) = run_code(&["factor", "--in", bad.to_str().unwrap(), "--strategy", "seq"]);
    assert_eq!(code, 4, "{err}");
    assert!(err.contains("not positive definite"), "{err}");

    // 2: verification failure on a near-singular instance whose structured
    // and dense solves diverge past the oracle gate
    let sick = dir.path().join("sick.btri");
    {
        use blocktri::block::DenseBlock;
        let c = (1.0 - 1e-10) / 2f64.sqrt();
        let d = vec![DenseBlock::<f64>::identity(1); 3];
        let e = vec![DenseBlock::from_rows(&[&[c]]); 2];
        let m = blocktri::matrix::BlockTridiag::new(d, e);
        blocktri::io::write_btri(&sick, &m).unwrap();
    }
    let (code, err) = run_code(&[
        "verify",
        "--in",
        sick.to_str().unwrap(),
        "--strategy",
        "multi",
        "--oracle",
    ]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("verification-failed"), "{err}");
}
