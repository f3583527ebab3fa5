use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nucleation_core::analysis::{mm_infinity_laplace, mm_infinity_monte_carlo, MMInfParams};
use nucleation_core::branching::{estimate_survival, BranchingParams, DEFAULT_POPULATION_CAP};
use nucleation_core::experiment::{
    read_summary_csv, run_sweep, run_validation, write_mass_curve_csv, write_summary_csv, ConfigError,
    ExperimentError,
};
use nucleation_core::fragmentation::{check_a3, check_a4};
use nucleation_core::seeds::seeded_rng;
use nucleation_core::{ExperimentConfig, FragmentationSpec};

#[derive(Parser)]
#[command(name = "nucleation", version, about = "Stochastic nucleation and polymerization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replication sweep and write the summary CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Directory receiving the output files.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Check summaries against the limit laws and write a JSON-lines report.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        summaries: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Fragmentation moments and monotonicity table.
    Fragcheck {
        /// `uf`, `bf:<p>` or `mf:<w1>,<w2>,...`.
        #[arg(long)]
        spec: FragmentationSpec,
        #[arg(long)]
        kmin: usize,
        #[arg(long)]
        kmax: usize,
        /// Nucleus size for the sampled small-fragment columns.
        #[arg(long, default_value_t = 4)]
        nc: usize,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Survival and growth of the stable-polymer branching process.
    Branching {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        nc: usize,
        #[arg(long)]
        reps: usize,
        #[arg(long, default_value = "mf:0.5,0.5")]
        frag: FragmentationSpec,
        /// Ancestor size; `nc` when absent.
        #[arg(long)]
        initial_size: Option<usize>,
        #[arg(long, default_value_t = 20.0)]
        horizon: f64,
        #[arg(long, default_value_t = DEFAULT_POPULATION_CAP)]
        cap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Laplace transform of an M/M/inf hitting time: closed form and simulation.
    Mminf {
        #[arg(long)]
        arrival: f64,
        #[arg(long)]
        service: f64,
        #[arg(long)]
        level: u64,
        #[arg(long)]
        xi: f64,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Config(String),
    MissingInput(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::MissingInput(_) => 3,
            Failure::Internal(_) => 4,
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(c) => Failure::Config(c.to_string()),
            other => Failure::Internal(other.to_string()),
        }
    }
}

fn internal(e: impl std::fmt::Display) -> Failure {
    Failure::Internal(e.to_string())
}

fn read_input(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::MissingInput(format!("{}: {e}", path.display())))
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = read_input(path)?;
    ExperimentConfig::from_json(&text).map_err(|e| match e {
        ConfigError::Parse(p) => Failure::Config(format!("{}: {p}", path.display())),
        other => Failure::Config(format!("{}: {other}", path.display())),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(internal)?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| internal(format!("{}: {e}", path.display())))
}

fn simulate(config: &Path, out: &Path) -> Result<(), Failure> {
    let config = load_config(config)?;
    let results = run_sweep(&config.sweep())?;
    let summaries: Vec<_> = results.iter().map(|r| r.summary()).collect();
    let summary_path = out.join(&config.output.summary);
    write_summary_csv(create(&summary_path)?, &summaries)?;
    if let Some(dir) = &config.output.mass_curves {
        for r in results.iter().filter(|r| !r.record.mass_curve.is_empty()) {
            let path = out.join(dir).join(format!("curve_N{}_rep{}.csv", r.record.n, r.replication_id));
            write_mass_curve_csv(create(&path)?, &r.record)?;
        }
    }
    let truncated = summaries.iter().filter(|s| s.truncated).count();
    println!("wrote {} summary rows to {}", summaries.len(), summary_path.display());
    println!("truncated runs: {truncated}");
    Ok(())
}

fn validate(config: &Path, summaries: &Path, out: &Path) -> Result<(), Failure> {
    let config = load_config(config)?;
    let text = read_input(summaries)?;
    let rows = read_summary_csv(text.as_bytes()).map_err(|e| Failure::MissingInput(e.to_string()))?;
    if rows.is_empty() {
        return Err(Failure::MissingInput(format!("{}: no summary rows", summaries.display())));
    }
    let records = run_validation(&config, &rows)?;
    let report_path = out.join(&config.output.report);
    let mut report = create(&report_path)?;
    for r in &records {
        serde_json::to_writer(&mut report, r).map_err(internal)?;
        writeln!(report).map_err(internal)?;
    }
    report.flush().map_err(internal)?;
    println!("{:<22} {:>14} {:>14}  result", "test", "statistic", "threshold");
    for r in &records {
        let stat = r.statistic.map_or_else(|| "-".to_string(), |s| format!("{s:.6}"));
        println!(
            "{:<22} {:>14} {:>14.6}  {}{}",
            r.name,
            stat,
            r.threshold,
            if r.pass { "pass" } else { "FAIL" },
            r.detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default()
        );
    }
    Ok(())
}

fn fragcheck(spec: &FragmentationSpec, kmin: usize, kmax: usize, nc: usize, samples: usize, seed: u64) -> Result<(), Failure> {
    spec.validate().map_err(|e| Failure::Config(e.to_string()))?;
    if kmin < 2 || kmax < kmin {
        return Err(Failure::Config(format!("need 2 <= kmin <= kmax, got {kmin}..{kmax}")));
    }
    let a3 = check_a3(spec, nc, kmin..=kmax, samples, &mut seeded_rng(seed));
    let stdout = io::stdout();
    let mut w = stdout.lock();
    let mut emit = |line: String| writeln!(w, "{line}").map_err(internal);
    emit("k,mean_fragments,weighted_moment_sum,identity_ok,a4_violations_next,max_small_fragments,two_stable_fraction".into())?;
    for (k, row) in (kmin..=kmax).zip(&a3.rows) {
        let moments: Vec<f64> =
            (1..k).map(|p| spec.moment(k, p)).collect::<Result<_, _>>().map_err(|e| Failure::Config(e.to_string()))?;
        let fragments: f64 = moments.iter().sum();
        let weighted: f64 = moments.iter().enumerate().map(|(i, m)| (i + 1) as f64 * m).sum();
        let a4 = if k < kmax {
            check_a4(spec, k, k + 1).map_err(|e| Failure::Config(e.to_string()))?.violations.to_string()
        } else {
            String::new()
        };
        emit(format!(
            "{k},{fragments:.16e},{weighted:.16e},{},{a4},{},{:.16e}",
            (weighted - k as f64).abs() < 1e-9,
            row.max_small_fragments,
            row.two_stable_fraction
        ))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn branching(
    alpha: f64,
    mu: f64,
    nc: usize,
    reps: usize,
    frag: FragmentationSpec,
    initial_size: Option<usize>,
    horizon: f64,
    cap: usize,
    seed: u64,
) -> Result<(), Failure> {
    let params = BranchingParams::new(alpha, mu, nc, frag, initial_size.unwrap_or(nc))
        .map_err(|e| Failure::Config(e.to_string()))?;
    let est = estimate_survival(&params, reps, horizon, cap, seed).map_err(|e| Failure::Config(e.to_string()))?;
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.16e}")).unwrap_or_default();
    println!("alpha,mu,n_c,replications,survival_prob,survival_lo,survival_hi,growth_rate,growth_lo,growth_hi,capped");
    println!(
        "{alpha:.16e},{mu:.16e},{nc},{},{:.16e},{:.16e},{:.16e},{},{},{},{}",
        est.replications,
        est.survival_prob,
        est.survival_ci.0,
        est.survival_ci.1,
        opt(est.growth_rate),
        opt(est.growth_rate_ci.map(|c| c.0)),
        opt(est.growth_rate_ci.map(|c| c.1)),
        est.capped
    );
    Ok(())
}

fn mminf(arrival: f64, service: f64, level: u64, xi: f64, paths: usize, seed: u64) -> Result<(), Failure> {
    let params = MMInfParams::new(arrival, service, level);
    let exact = mm_infinity_laplace(&params, xi).map_err(|e| Failure::Config(e.to_string()))?;
    let mc = mm_infinity_monte_carlo(&params, xi, paths, seed).map_err(|e| Failure::Config(e.to_string()))?;
    println!("level,xi,closed_form,monte_carlo,standard_error");
    println!("{level},{xi:.16e},{exact:.16e},{:.16e},{:.16e}", mc.mean, mc.standard_error);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate { config, out } => simulate(&config, &out),
        Command::Validate { config, summaries, out } => validate(&config, &summaries, &out),
        Command::Fragcheck { spec, kmin, kmax, nc, samples, seed } => fragcheck(&spec, kmin, kmax, nc, samples, seed),
        Command::Branching { alpha, mu, nc, reps, frag, initial_size, horizon, cap, seed } => {
            branching(alpha, mu, nc, reps, frag, initial_size, horizon, cap, seed)
        }
        Command::Mminf { arrival, service, level, xi, paths, seed } => mminf(arrival, service, level, xi, paths, seed),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(m) | Failure::MissingInput(m) | Failure::Internal(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}
