use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use auxlab::error::{Error, Result};
use auxlab::harness::{
    compare_methods, load_records, render_trajectories, run_experiment, run_oracle_suite, write_atomic,
    ExperimentConfig, OracleConfig,
};
use auxlab::stats::{aggregate_runs, permutation_test, SampleSet};

#[derive(Parser)]
#[command(name = "auxlab", version, about = "End-task aware auxiliary training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config over its seeds.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds replacing the config's list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate record directories against a baseline with permutation p-values.
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        candidate: Vec<PathBuf>,
        /// Monte Carlo relabelings; 0 enumerates all of them.
        #[arg(long, default_value_t = 10_000)]
        permutations: usize,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Draw task-weight trajectories of a record directory as SVG.
    Plot {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Trailing moving-average window in logged rows.
        #[arg(long)]
        window: Option<usize>,
    },
    /// Run the quadratic hypergradient checks.
    Oracle {
        /// JSON oracle config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Permutation test between two samples.
    Stats {
        /// A record directory, or a text file of numbers separated by
        /// commas, whitespace or newlines.
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        permutations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_sample(path: &Path) -> Result<SampleSet> {
    let label = path.display().to_string();
    if path.is_dir() {
        return SampleSet::new(&label, aggregate_runs(&load_records(path)?)?.values);
    }
    let text = std::fs::read_to_string(path)?;
    let values = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| Error::Invalid(format!("{label}: `{t}` is not a number"))))
        .collect::<Result<Vec<_>>>()?;
    SampleSet::new(&label, values)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config, seeds, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            let dir = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("runs").join(cfg.strategy.as_str()));
            let outcome = run_experiment(&cfg, Some(&dir))?;
            let s = &outcome.summary;
            println!(
                "{} on {}: {} seeds, validation every {} steps, trajectory rows every {} steps -> {}",
                cfg.strategy.as_str(),
                s.benchmark,
                s.runs.len(),
                s.val_period,
                s.log_period,
                dir.display()
            );
            for r in &s.runs {
                match (&r.error, r.final_val_metric, r.test_metric) {
                    (None, Some(v), Some(t)) => println!("seed {}: val {v:.4} test {t:.4}", r.seed),
                    (e, _, _) => println!("seed {}: FAILED {}", r.seed, e.as_deref().unwrap_or("unknown error")),
                }
            }
            Ok(s.all_ok())
        }
        Command::Compare { baseline, candidate, permutations, csv } => {
            let rep = compare_methods(&baseline, &candidate, permutations)?;
            print!("{}", rep.to_text());
            if let Some(p) = csv {
                write_atomic(&p, rep.to_csv().as_bytes())?;
            }
            Ok(true)
        }
        Command::Plot { records, out, window } => {
            let recs = load_records(&records)?;
            let o = render_trajectories(&recs, &out, window)?;
            println!("wrote {} and {} ({} points)", o.svg.display(), o.csv.display(), o.points.len());
            Ok(true)
        }
        Command::Oracle { config, out } => {
            let mut cfg = match config {
                Some(p) => OracleConfig::from_json(&std::fs::read_to_string(p)?)?,
                None => OracleConfig::default(),
            };
            if out.is_some() {
                cfg.output_dir = out;
            }
            let rep = run_oracle_suite(&cfg)?;
            print!("{}", rep.lines());
            Ok(rep.passed())
        }
        Command::Stats { a, b, permutations, seed } => {
            let (sa, sb) = (load_sample(&a)?, load_sample(&b)?);
            let p = permutation_test(&sa, &sb, permutations, seed)?;
            let mode = if permutations == 0 { "exhaustive".to_string() } else { format!("{permutations} permutations") };
            println!("a: n={} mean={:.6}", sa.values.len(), sa.mean());
            println!("b: n={} mean={:.6}", sb.values.len(), sb.mean());
            println!("two-sided permutation test on |mean(a) - mean(b)|, {mode}: p = {p:.6}");
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
