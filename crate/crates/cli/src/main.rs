use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use phm_core::alloc_probe::{measure, PeakAlloc};
use phm_core::experiments::{param_audit, run_experiment, AuditSpec, ExperimentError, ExperimentSpec};
use phm_core::models::ModelConfig;
use phm_core::verify::{run_suite, VerifyOptions};
use phm_core::{PhmParams, Tensor};

#[global_allocator]
static ALLOC: PeakAlloc = PeakAlloc;

#[derive(Parser, Debug)]
#[command(name = "phm", version, about = "Parameterized hypercomplex multiplication toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Output directory for machine-readable artifacts.
    #[arg(long, default_value = "phm-out")]
    out: PathBuf,
    /// Seed override; falls back to PHM_SEED, then the spec.
    #[arg(long, env = "PHM_SEED")]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the subsumption, equivalence, parameter and gradient checks.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Non-embedding parameter audit across n.
    Params {
        /// JSON audit spec `{"model": {...}, "ns": [...]}`; defaults to the
        /// 4-layer, d=512 configuration.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Comma-separated n values, overriding the spec.
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the experiment described by a JSON spec.
    Train {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Time the dense and implicit products.
    Bench {
        /// Comma-separated n values.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        n: Vec<usize>,
        /// Output and input widths as KxD.
        #[arg(long, default_value = "512x512", value_parser = parse_dims)]
        dims: (usize, usize),
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long, default_value_t = 25)]
        iters: usize,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (k, d) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected KxD, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(k)?, parse(d)?))
}

/// Failure classes mapped onto exit codes.
enum Failure {
    /// Bad arguments or unreadable/invalid spec files.
    Usage(anyhow::Error),
    /// A check or experiment ran and did not succeed.
    Run(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Run(_) => 1,
        }
    }
}

type Outcome = Result<(), Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn run(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Run(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match cli.command {
        Command::Verify { common } => cmd_verify(&common),
        Command::Params { spec, n, common } => cmd_params(spec.as_deref(), n, &common),
        Command::Train { spec, common } => cmd_train(&spec, &common),
        Command::Bench { n, dims, warmup, iters, common } => cmd_bench(&n, dims, warmup, iters, &common),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(e) | Failure::Run(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}

fn ensure_out(dir: &Path) -> Outcome {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(usage)
}

fn read_spec(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(usage)
}

fn cmd_verify(common: &Common) -> Outcome {
    ensure_out(&common.out)?;
    let opts = VerifyOptions {
        seed: common.seed.unwrap_or(0),
        ..VerifyOptions::default()
    };
    let report = run_suite(&opts);
    for r in &report {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!("{status}  {:<28} max_err={:.3e} tol={:.1e}  {}", r.check, r.max_err, r.tolerance, r.detail);
    }
    let path = common.out.join("verify.json");
    fs::write(&path, serde_json::to_string_pretty(&report).map_err(run)?)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(run)?;
    let failed: Vec<&str> = report.iter().filter(|r| !r.passed()).map(|r| r.check.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(run(anyhow!("failed checks: {}", failed.join(", "))))
    }
}

fn cmd_params(spec: Option<&Path>, n: Option<Vec<usize>>, common: &Common) -> Outcome {
    let mut audit = match spec {
        Some(path) => serde_json::from_str::<AuditSpec>(&read_spec(path)?)
            .with_context(|| format!("parsing {}", path.display()))
            .map_err(usage)?,
        None => AuditSpec {
            model: ModelConfig::full_scale(1),
            ns: vec![1, 2, 4, 8, 16],
        },
    };
    if let Some(ns) = n {
        audit.ns = ns;
    }
    let rows = param_audit(&audit.model, &audit.ns).map_err(usage)?;
    ensure_out(&common.out)?;

    println!("{:>4}  {:>12}  {:>9}", "n", "params", "change");
    for r in &rows {
        println!("{:>4}  {:>12}  {:>8.2}%", r.n, r.params, r.change_pct);
    }
    let path = common.out.join("params.csv");
    let mut w = csv::Writer::from_path(&path).map_err(run)?;
    w.write_record(["n", "params", "change_pct"]).map_err(run)?;
    for r in &rows {
        w.write_record([r.n.to_string(), r.params.to_string(), format!("{:.4}", r.change_pct)])
            .map_err(run)?;
    }
    w.flush().map_err(run)?;
    Ok(())
}

fn cmd_train(spec_path: &Path, common: &Common) -> Outcome {
    let text = read_spec(spec_path)?;
    let mut spec: ExperimentSpec = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", spec_path.display()))
        .map_err(usage)?;
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    spec.validate()
        .with_context(|| format!("validating {}", spec_path.display()))
        .map_err(usage)?;

    match run_experiment(&spec, Some(&common.out)) {
        Ok(output) => {
            let r = &output.record;
            println!("steps: {}", r.steps_run);
            if let Some(loss) = r.final_loss {
                println!("final loss: {loss:.6e}");
            }
            if let Some(err) = r.h_max_err {
                println!("max |H - target|: {err:.6e}");
            }
            if let Some(acc) = r.accuracy {
                println!("token accuracy: {acc:.4}");
            }
            println!("artifacts: {}", common.out.display());
            Ok(())
        }
        Err(e @ ExperimentError::Diverged { .. }) => Err(run(anyhow!(
            "{e}; partial record in {}",
            common.out.display()
        ))),
        Err(ExperimentError::Phm(e)) => Err(run(e)),
    }
}

type Product<'a> = &'a dyn Fn(&PhmParams) -> phm_core::Result<Tensor>;

fn median(mut v: Vec<u128>) -> u128 {
    v.sort_unstable();
    v[v.len() / 2]
}

fn cmd_bench(ns: &[usize], (k, d): (usize, usize), warmup: usize, iters: usize, common: &Common) -> Outcome {
    if iters == 0 {
        return Err(usage(anyhow!("--iters must be positive")));
    }
    ensure_out(&common.out)?;
    let seed = common.seed.unwrap_or(0);
    let mut layers = Vec::with_capacity(ns.len());
    for &n in ns {
        let layer = phm_core::phm_init(n, d, k, seed)
            .with_context(|| format!("n={n} with {k}x{d}"))
            .map_err(usage)?;
        layers.push(layer);
    }

    let path = common.out.join("bench.csv");
    let mut w = csv::Writer::from_path(&path).map_err(run)?;
    w.write_record(["n", "d", "k", "path", "median_ns", "peak_bytes"]).map_err(run)?;
    println!("{:>4} {:>6} {:>6} {:>9} {:>12} {:>12}", "n", "d", "k", "path", "median_ns", "peak_bytes");

    let mut rng = phm_core::rng(seed);
    for layer in &layers {
        let x = Tensor::vector((0..d).map(|_| rand_unit(&mut rng)).collect());
        let dense = |l: &PhmParams| l.apply(&x);
        let implicit = |l: &PhmParams| l.implicit_matvec(&x);
        let a = dense(layer).map_err(run)?;
        let b = implicit(layer).map_err(run)?;
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        let rel = a.max_abs_diff(&b).map_err(run)? / scale;
        if rel > 1e-12 {
            return Err(run(anyhow!("n={}: dense and implicit disagree (rel {rel:.3e})", layer.n())));
        }

        let paths: [(&str, Product); 2] = [("dense", &dense), ("implicit", &implicit)];
        for (name, f) in paths {
            for _ in 0..warmup {
                std::hint::black_box(f(layer).map_err(run)?);
            }
            let mut times = Vec::with_capacity(iters);
            let mut peak = 0;
            for _ in 0..iters {
                let start = Instant::now();
                let (out, bytes) = measure(|| f(layer));
                times.push(start.elapsed().as_nanos());
                std::hint::black_box(out.map_err(run)?);
                peak = peak.max(bytes);
            }
            let med = median(times);
            println!("{:>4} {:>6} {:>6} {:>9} {:>12} {:>12}", layer.n(), d, k, name, med, peak);
            w.write_record([
                layer.n().to_string(),
                d.to_string(),
                k.to_string(),
                name.to_owned(),
                med.to_string(),
                peak.to_string(),
            ])
            .map_err(run)?;
        }
    }
    w.flush().map_err(run)?;
    Ok(())
}

fn rand_unit(rng: &mut phm_core::Rng) -> f64 {
    use rand::Rng as _;
    rng.gen_range(-1.0..1.0)
}
