//! Benchmark and verification CLI.
//!
//! Exit codes: 0 ok, 2 verification failure, 3 infeasible arguments or bad
//! input, 4 not positive definite.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use blocktri::costmodel::{self, SpeedupRow, Strategy};
use blocktri::error::Error;
use blocktri::io;
use blocktri::meter::{FlopMeter, Workers};
use blocktri::partfactor::{self, optimal_partition};
use blocktri::probgen::{generate_rhs, generate_spd};
use blocktri::seqfactor;
use blocktri::stagefactor::{self, FactorMode, RunOptions};
use blocktri::verify;
use blocktri::{BlockTridiag, RhsBlocks};

/// Reconstruction gate of factor/verify/bench runs (binary64).
const RESIDUAL_THRESHOLD: f64 = 1e-10;

#[derive(Parser)]
#[command(
    name = "blocktri",
    about = "SPD block tridiagonal Cholesky toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Seq,
    Partition,
    Single,
    Multi,
}

impl StrategyArg {
    fn to_strategy(self) -> Strategy {
        match self {
            StrategyArg::Seq => Strategy::Sequential,
            StrategyArg::Partition => Strategy::Partition,
            StrategyArg::Single => Strategy::SingleStage,
            StrategyArg::Multi => Strategy::MultiStage,
        }
    }
}

impl std::fmt::Display for StrategyArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.to_strategy().fmt(f)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Deferred,
    Atomic,
}

impl ModeArg {
    fn to_mode(self) -> FactorMode {
        match self {
            ModeArg::Deferred => FactorMode::Deferred,
            ModeArg::Atomic => FactorMode::RightLookingAtomic,
        }
    }
}

#[derive(Args)]
struct FactorArgs {
    /// BTRI matrix file.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    strategy: StrategyArg,
    /// Multi-stage schedule.
    #[arg(long, value_enum, default_value = "deferred")]
    mode: ModeArg,
    /// Worker count, or "inf".
    #[arg(long, default_value = "1")]
    workers: Workers,
    /// Run the forward substitution interlaced with the factorization
    /// (multi strategy only; needs --rhs).
    #[arg(long)]
    interlace_solve: bool,
    /// BRHS right-hand-side file for --interlace-solve.
    #[arg(long)]
    rhs: Option<PathBuf>,
    /// Append a CSV row (bench schema) describing this run.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded SPD block tridiagonal instance.
    Gen {
        #[arg(long = "N")]
        nblocks: u64,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write a matching right-hand side here.
        #[arg(long)]
        rhs_out: Option<PathBuf>,
        /// Columns of the generated right-hand side.
        #[arg(long, default_value_t = 1)]
        rhs_cols: u64,
    },
    /// Factor a matrix, verify the reconstruction, print meter and wall time.
    Factor(FactorArgs),
    /// Factor and solve against a right-hand side.
    Solve {
        #[arg(long = "in")]
        input: PathBuf,
        /// Strategy whose factor backs the solve (seq or multi).
        #[arg(long, value_enum)]
        factor_strategy: StrategyArg,
        #[arg(long, value_enum, default_value = "deferred")]
        mode: ModeArg,
        #[arg(long, default_value = "1")]
        workers: Workers,
        #[arg(long)]
        rhs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruction (and optionally dense-oracle) verification.
    Verify {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        #[arg(long, value_enum, default_value = "deferred")]
        mode: ModeArg,
        #[arg(long, default_value = "1")]
        workers: Workers,
        /// Cross-check the solve against the dense reference.
        #[arg(long)]
        oracle: bool,
    },
    /// Emit the theoretical speedup table (with measured meter units).
    Model {
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        /// Inclusive block-count range "a:b".
        #[arg(long = "N-range")]
        n_range: String,
        /// Comma-separated worker counts; "inf" allowed.
        #[arg(long = "p-list")]
        p_list: String,
        #[arg(long, default_value_t = 1)]
        n: u64,
        #[arg(long)]
        out: PathBuf,
        /// Skip the instrumented runs that fill measured_units.
        #[arg(long)]
        no_measure: bool,
    },
    /// Timing sweep; emits CSV rows and fails on any bad residual.
    Bench {
        #[arg(long, default_value = "default")]
        suite: String,
        #[arg(long)]
        out: PathBuf,
        /// Timing repetitions (median is reported).
        #[arg(long, default_value_t = 20)]
        reps: u32,
        #[arg(long, default_value_t = 3)]
        warmups: u32,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    std::process::exit(code);
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NotPositiveDefinite { .. } => 4,
        _ => 3,
    }
}

/// Verification failures print a machine-parsable line and exit with code 2.
fn verification_failure(kind: &str, value: f64, threshold: f64) -> Error {
    eprintln!("error: verification-failed: {kind} {value:.3e} above threshold {threshold:.3e}");
    std::process::exit(2);
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Gen {
            nblocks,
            n,
            seed,
            out,
            rhs_out,
            rhs_cols,
        } => cmd_gen(nblocks, n, seed, &out, rhs_out.as_deref(), rhs_cols),
        Command::Factor(args) => cmd_factor(args),
        Command::Solve {
            input,
            factor_strategy,
            mode,
            workers,
            rhs,
            out,
        } => cmd_solve(&input, factor_strategy, mode, workers, &rhs, &out),
        Command::Verify {
            input,
            strategy,
            mode,
            workers,
            oracle,
        } => cmd_verify(&input, strategy, mode, workers, oracle),
        Command::Model {
            strategy,
            n_range,
            p_list,
            n,
            out,
            no_measure,
        } => cmd_model(strategy, &n_range, &p_list, n as usize, &out, no_measure),
        Command::Bench {
            suite,
            out,
            reps,
            warmups,
        } => cmd_bench(&suite, &out, reps, warmups),
    }
}

fn cmd_gen(
    nblocks: u64,
    n: u64,
    seed: u64,
    out: &std::path::Path,
    rhs_out: Option<&std::path::Path>,
    rhs_cols: u64,
) -> Result<(), Error> {
    if nblocks < 1 || n < 1 || rhs_cols < 1 {
        return Err(Error::Format("N, n and rhs-cols must be >= 1".into()));
    }
    let m = generate_spd::<f64>(nblocks as usize, n as usize, seed);
    io::write_btri(out, &m)?;
    println!("wrote N={nblocks} n={n} seed={seed} to {}", out.display());
    if let Some(path) = rhs_out {
        // separate stream so the rhs does not alias the matrix entries
        let b = generate_rhs::<f64>(
            nblocks as usize,
            n as usize,
            rhs_cols as usize,
            seed ^ 0x5248_5331,
        );
        io::write_rhs(path, &b)?;
        println!("wrote rhs m={rhs_cols} to {}", path.display());
    }
    Ok(())
}

/// Factor with the chosen strategy and return (meter units, residual).
fn run_factor_once(
    m: &BlockTridiag<f64>,
    strategy: StrategyArg,
    mode: ModeArg,
    workers: Workers,
) -> Result<(u64, f64), Error> {
    let meter = FlopMeter::new();
    let opts = RunOptions::with_workers(workers);
    let residual = match strategy {
        StrategyArg::Seq => {
            let f = seqfactor::factor_sequential(m, &meter)?;
            let (sf, perm) = verify::seq_to_sparse(&f);
            sf.relative_residual(m, &perm)
        }
        StrategyArg::Partition => {
            let parts = match workers {
                Workers::Finite(w) => w.get() as usize,
                Workers::Unbounded => {
                    return Err(Error::Format(
                        "partition strategy needs a finite worker count".into(),
                    ))
                }
            };
            let plan = optimal_partition(m.nblocks(), parts)?;
            let (f, _) = partfactor::factor_partition(m, &plan, &meter)?;
            let (sf, perm) = verify::partition_to_sparse(&f);
            sf.relative_residual(m, &perm)
        }
        StrategyArg::Single => {
            let run = stagefactor::factor_single_stage(m, &opts, &meter)?;
            let (sf, perm) = verify::single_stage_to_sparse(&run.factor);
            sf.relative_residual(m, &perm)
        }
        StrategyArg::Multi => {
            let run = stagefactor::factor_multi_stage(m, mode.to_mode(), &opts, &meter)?;
            let (sf, perm) = verify::multi_stage_to_sparse(&run.factor);
            sf.relative_residual(m, &perm)
        }
    };
    Ok((meter.thirds(), residual))
}

fn cmd_factor(args: FactorArgs) -> Result<(), Error> {
    let m = io::read_btri::<f64>(&args.input)?;
    let start = Instant::now();
    let (units, residual) = run_factor_once(&m, args.strategy, args.mode, args.workers)?;
    let mut wall_ns = start.elapsed().as_nanos();

    let mut solve_note = String::new();
    if args.interlace_solve {
        if args.strategy != StrategyArg::Multi {
            return Err(Error::Format(
                "--interlace-solve requires --strategy multi".into(),
            ));
        }
        let rhs_path = args
            .rhs
            .as_ref()
            .ok_or_else(|| Error::Format("--interlace-solve needs --rhs <path>".into()))?;
        let b = io::read_rhs::<f64>(rhs_path)?;
        let fm = FlopMeter::new();
        let sm = FlopMeter::new();
        let opts = RunOptions::with_workers(args.workers);
        let t = Instant::now();
        let (_, sol) =
            stagefactor::factor_and_solve_interlaced(&m, &b, args.mode.to_mode(), &opts, &fm, &sm)?;
        wall_ns = t.elapsed().as_nanos();
        let sres = verify::solve_residual(&m, &sol.x, &b);
        if sres > RESIDUAL_THRESHOLD {
            return Err(verification_failure(
                "solve-residual",
                sres,
                RESIDUAL_THRESHOLD,
            ));
        }
        solve_note = format!(" solve_units={}", sm.thirds());
    }

    if residual > RESIDUAL_THRESHOLD {
        return Err(verification_failure(
            "reconstruction-residual",
            residual,
            RESIDUAL_THRESHOLD,
        ));
    }
    println!(
        "strategy={} N={} n={} workers={} meter_units={units} wall_ns={wall_ns} residual={residual:.3e}{solve_note}",
        args.strategy,
        m.nblocks(),
        m.block_size(),
        args.workers,
    );
    if let Some(report) = &args.report {
        let mode = match args.strategy {
            StrategyArg::Multi => args.mode.to_mode().to_string(),
            _ => "-".into(),
        };
        let mut w = csv_appender(report)?;
        use std::io::Write;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{:e}",
            args.strategy,
            m.nblocks(),
            m.block_size(),
            args.workers,
            mode,
            wall_ns,
            units,
            residual
        )?;
    }
    Ok(())
}

fn csv_appender(path: &std::path::Path) -> Result<std::io::BufWriter<std::fs::File>, Error> {
    let fresh = !path.exists();
    let f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut w = std::io::BufWriter::new(f);
    if fresh {
        use std::io::Write;
        writeln!(w, "strategy,N,n,p,mode,wall_ns,meter_units,residual")?;
    }
    Ok(w)
}

fn cmd_solve(
    input: &std::path::Path,
    factor_strategy: StrategyArg,
    mode: ModeArg,
    workers: Workers,
    rhs: &std::path::Path,
    out: &std::path::Path,
) -> Result<(), Error> {
    let m = io::read_btri::<f64>(input)?;
    let b = io::read_rhs::<f64>(rhs)?;
    let meter = FlopMeter::new();
    let opts = RunOptions::with_workers(workers);
    let x: RhsBlocks<f64> = match factor_strategy {
        StrategyArg::Seq => {
            let f = seqfactor::factor_sequential(&m, &meter)?;
            seqfactor::solve_sequential(&f, &b, &meter)?
        }
        StrategyArg::Multi => {
            let run = stagefactor::factor_multi_stage(&m, mode.to_mode(), &opts, &meter)?;
            stagefactor::solve_multi_stage(&run.factor, &b, &opts, &meter)?.x
        }
        _ => {
            return Err(Error::Format(
                "solve is available for the seq and multi strategies only".into(),
            ))
        }
    };
    let residual = verify::solve_residual(&m, &x, &b);
    if residual > RESIDUAL_THRESHOLD {
        return Err(verification_failure(
            "solve-residual",
            residual,
            RESIDUAL_THRESHOLD,
        ));
    }
    io::write_rhs(out, &x)?;
    println!(
        "solved N={} n={} m={} meter_units={} residual={residual:.3e} -> {}",
        m.nblocks(),
        m.block_size(),
        b.ncols(),
        meter.thirds(),
        out.display()
    );
    Ok(())
}

fn cmd_verify(
    input: &std::path::Path,
    strategy: StrategyArg,
    mode: ModeArg,
    workers: Workers,
    oracle: bool,
) -> Result<(), Error> {
    let m = io::read_btri::<f64>(input)?;
    let (units, residual) = run_factor_once(&m, strategy, mode, workers)?;
    println!(
        "reconstruction strategy={strategy} N={} n={} meter_units={units} residual={residual:.3e}",
        m.nblocks(),
        m.block_size(),
    );
    if residual > RESIDUAL_THRESHOLD {
        return Err(verification_failure(
            "reconstruction-residual",
            residual,
            RESIDUAL_THRESHOLD,
        ));
    }
    if oracle {
        if m.dim() > 2048 {
            return Err(Error::Format(format!(
                "dense oracle capped at N*n <= 2048, got {}",
                m.dim()
            )));
        }
        let b = generate_rhs::<f64>(m.nblocks(), m.block_size(), 1, 0x0C0FFEE);
        let x_ref = blocktri::oracle::dense_oracle_solve(&m, &b)?;
        let meter = FlopMeter::new();
        let opts = RunOptions::with_workers(workers);
        let x = match strategy {
            StrategyArg::Seq | StrategyArg::Partition | StrategyArg::Single => {
                let f = seqfactor::factor_sequential(&m, &meter)?;
                seqfactor::solve_sequential(&f, &b, &meter)?
            }
            StrategyArg::Multi => {
                let run = stagefactor::factor_multi_stage(&m, mode.to_mode(), &opts, &meter)?;
                stagefactor::solve_multi_stage(&run.factor, &b, &opts, &meter)?.x
            }
        };
        let diff = x.rel_diff(&x_ref);
        println!("oracle solve agreement: {diff:.3e}");
        if diff > 1e-8 {
            return Err(verification_failure("oracle-solve-diff", diff, 1e-8));
        }
    }
    Ok(())
}

fn parse_range(range: &str) -> Result<(usize, usize), Error> {
    let (a, b) = range
        .split_once(':')
        .ok_or_else(|| Error::Format(format!("bad range {range:?}, expected a:b")))?;
    let a: usize = a
        .parse()
        .map_err(|_| Error::Format(format!("bad range start {a:?}")))?;
    let b: usize = b
        .parse()
        .map_err(|_| Error::Format(format!("bad range end {b:?}")))?;
    if a < 1 || b < a {
        return Err(Error::Format(format!("bad range {range:?}")));
    }
    Ok((a, b))
}

fn parse_workers_list(list: &str) -> Result<Vec<Workers>, Error> {
    list.split(',')
        .map(|tok| tok.trim().parse::<Workers>().map_err(Error::Format))
        .collect()
}

fn cmd_model(
    strategy: StrategyArg,
    n_range: &str,
    p_list: &str,
    n: usize,
    out: &std::path::Path,
    no_measure: bool,
) -> Result<(), Error> {
    let (lo, hi) = parse_range(n_range)?;
    let workers = parse_workers_list(p_list)?;
    let sizes: Vec<usize> = (lo..=hi).collect();
    let mut rows = costmodel::speedup_table(strategy.to_strategy(), &sizes, &workers, n);
    if !no_measure {
        for row in &mut rows {
            row.measured_units = measure_units(row)?;
        }
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(out)?);
    costmodel::write_speedup_csv(&rows, &mut w)?;
    use std::io::Write;
    w.flush()?;
    println!("wrote {} rows to {}", rows.len(), out.display());
    if strategy == StrategyArg::Partition {
        for wk in &workers {
            if let Workers::Finite(p) = *wk {
                let a = costmodel::partition_speedup_asymptote(p.get() as usize);
                println!("asymptote p={p}: {a} = {:.6}", a.to_f64());
            }
        }
    }
    Ok(())
}

/// Instrumented meter units of one modeled configuration.
fn measure_units(row: &SpeedupRow) -> Result<Option<u64>, Error> {
    let m = generate_spd::<f64>(row.nblocks, row.n, 1);
    let meter = FlopMeter::new();
    let opts = RunOptions::with_workers(row.workers);
    match row.strategy {
        Strategy::Sequential => {
            seqfactor::factor_sequential(&m, &meter)?;
        }
        Strategy::Partition => {
            let parts = match row.workers {
                Workers::Finite(w) => w.get() as usize,
                Workers::Unbounded => return Ok(None),
            };
            match optimal_partition(row.nblocks, parts) {
                Ok(plan) => {
                    partfactor::factor_partition(&m, &plan, &meter)?;
                }
                Err(_) => return Ok(None),
            }
        }
        Strategy::SingleStage => {
            stagefactor::factor_single_stage(&m, &opts, &meter)?;
        }
        Strategy::MultiStage => {
            stagefactor::factor_multi_stage(&m, FactorMode::Deferred, &opts, &meter)?;
        }
    }
    Ok(Some(meter.thirds()))
}

fn median(mut xs: Vec<u128>) -> u128 {
    xs.sort_unstable();
    xs[xs.len() / 2]
}

fn cmd_bench(suite: &str, out: &std::path::Path, reps: u32, warmups: u32) -> Result<(), Error> {
    if suite != "default" {
        return Err(Error::Format(format!("unknown suite {suite:?}")));
    }
    let n = 8usize;
    let sizes = [32usize, 64, 128, 256, 512];
    let worker_counts = [1u64, 2, 4, 8];
    let mut w = csv_appender(out)?;
    use std::io::Write;

    for &nb in &sizes {
        let m = generate_spd::<f64>(nb, n, 1);
        let mut cases: Vec<(StrategyArg, ModeArg, Workers)> =
            vec![(StrategyArg::Seq, ModeArg::Deferred, Workers::one())];
        for &p in &worker_counts {
            let wk = Workers::finite(p);
            if nb >= 2 * (p as usize) - 1 {
                cases.push((StrategyArg::Partition, ModeArg::Deferred, wk));
            }
            cases.push((StrategyArg::Single, ModeArg::Deferred, wk));
            cases.push((StrategyArg::Multi, ModeArg::Deferred, wk));
            cases.push((StrategyArg::Multi, ModeArg::Atomic, wk));
        }
        for (strategy, mode, wk) in cases {
            let mut units = 0;
            let mut residual = 0.0;
            for _ in 0..warmups {
                (units, residual) = run_factor_once(&m, strategy, mode, wk)?;
            }
            let mut times = Vec::with_capacity(reps as usize);
            for _ in 0..reps.max(1) {
                let t = Instant::now();
                (units, residual) = run_factor_once(&m, strategy, mode, wk)?;
                times.push(t.elapsed().as_nanos());
            }
            let wall_ns = median(times);
            if residual > RESIDUAL_THRESHOLD {
                return Err(verification_failure(
                    "bench-residual",
                    residual,
                    RESIDUAL_THRESHOLD,
                ));
            }
            let mode_name = match strategy {
                StrategyArg::Multi => match mode {
                    ModeArg::Deferred => "deferred",
                    ModeArg::Atomic => "atomic",
                },
                _ => "-",
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{:e}",
                strategy, nb, n, wk, mode_name, wall_ns, units, residual
            )?;
        }
    }
    w.flush()?;
    println!("bench suite complete -> {}", out.display());
    Ok(())
}
