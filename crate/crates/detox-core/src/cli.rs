//! Command line interface: argument parsing and the per-subcommand drivers.
//!
//! Every subcommand prints a JSON summary (or CSV when requested) to stdout
//! and optionally writes the full report under `--out`. The process exits 0
//! only when all checks of the invoked command hold; failures are listed in
//! the summary under `"failures"`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::aggregators::AggregatorSpec;
use crate::analysis::{
    analyze_point, convergence_rate_bound, confidence_threshold, exact_expected_qhat, r3_bound,
    tail_bound, qhat_upper_bound, FilterBoundReport,
};
use crate::config::DetoxConfig;
use crate::sim::{
    mean_estimation_experiment, run_training, timing_probe, MeanEstConfig, TaskSpec, TimingConfig,
};
use crate::types::GradVec;

#[derive(Debug, Parser)]
#[command(name = "detox", version, about = "Byzantine-resilient SGD simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RateKindArg {
    #[value(name = "trimmed_mean")]
    TrimmedMean,
    #[value(name = "iterative_filtering")]
    IterativeFiltering,
}

impl From<RateKindArg> for crate::analysis::RateKind {
    fn from(k: RateKindArg) -> Self {
        match k {
            RateKindArg::TrimmedMean => crate::analysis::RateKind::TrimmedMean,
            RateKindArg::IterativeFiltering => crate::analysis::RateKind::IterativeFiltering,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact vs Monte Carlo vote filtering statistics over a parameter grid.
    FilterStats {
        /// JSON file: {"grid": [{"p":..,"q":..,"r":..,"delta":..}, ..]}.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = OutFormat::Json)]
        format: OutFormat,
        /// Monte Carlo trials per grid point (overrides the config file).
        #[arg(long)]
        trials: Option<u64>,
    },
    /// One-shot robust mean estimation comparison.
    MeanEst {
        /// JSON file holding a mean estimation config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = OutFormat::Json)]
        format: OutFormat,
    },
    /// Full training run.
    Train {
        /// JSON file: {"detox": <run config>, "task": <task spec>}.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = OutFormat::Json)]
        format: OutFormat,
    },
    /// Apply one aggregator to a file of vectors (one per line).
    Aggregate {
        /// Input text file; entries whitespace-separated, '#' starts a comment.
        input: PathBuf,
        /// JSON file: {"agg": <aggregator spec>}; defaults to the mean.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form filtering bounds for one (p, q, r) point, or a
    /// convergence-rate order term when --kind is given.
    Bounds {
        #[arg(long, required_unless_present = "kind")]
        p: Option<usize>,
        #[arg(long, required_unless_present = "kind")]
        q: Option<usize>,
        #[arg(long, required_unless_present = "kind")]
        r: Option<usize>,
        /// Also report the high-probability vote threshold for this delta.
        #[arg(long)]
        delta: Option<f64>,
        /// Also report the tail bound at relative deviation theta.
        #[arg(long)]
        theta: Option<f64>,
        /// Convergence-rate kind (trimmed_mean or iterative_filtering).
        #[arg(long, value_enum)]
        kind: Option<RateKindArg>,
        /// Dimension for the rate term.
        #[arg(long, default_value_t = 1)]
        d: usize,
        /// Sample count for the rate term.
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// Byzantine fraction x for the rate term.
        #[arg(long, default_value_t = 0.0)]
        x: f64,
        /// Report the filtered variant of the rate term.
        #[arg(long, default_value_t = false)]
        with_detox: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregation wall-clock scaling probe.
    Timing {
        /// JSON file holding a timing config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = OutFormat::Json)]
        format: OutFormat,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridPoint {
    p: usize,
    q: usize,
    r: usize,
    #[serde(default)]
    delta: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilterStatsConfig {
    grid: Vec<GridPoint>,
    #[serde(default)]
    trials: Option<u64>,
    #[serde(default)]
    seed: Option<u64>,
}

impl Default for FilterStatsConfig {
    fn default() -> Self {
        FilterStatsConfig {
            grid: vec![
                GridPoint {
                    p: 45,
                    q: 5,
                    r: 3,
                    delta: Some(0.1),
                },
                GridPoint {
                    p: 200,
                    q: 4,
                    r: 5,
                    delta: Some(0.1),
                },
                // eps = 12/350 exceeds 1/40, so only the exact and Monte
                // Carlo columns apply on this point
                GridPoint {
                    p: 350,
                    q: 12,
                    r: 7,
                    delta: None,
                },
            ],
            trials: None,
            seed: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainConfig {
    detox: DetoxConfig,
    task: TaskSpec,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AggregateConfig {
    #[serde(default)]
    agg: Option<AggregatorSpec>,
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn write_out(out: &Option<PathBuf>, name: &str, content: &str) -> Result<()> {
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join(name), content)
            .with_context(|| format!("writing {}", dir.join(name).display()))?;
    }
    Ok(())
}

fn summary(seed: u64, config: serde_json::Value, failures: &[String]) -> serde_json::Value {
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config": config,
        "passed": failures.is_empty(),
        "failures": failures,
    })
}

/// Run the parsed command; returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.cmd {
        Command::FilterStats {
            config,
            out,
            seed,
            format,
            trials,
        } => cmd_filter_stats(config, out, seed, format, trials),
        Command::MeanEst {
            config,
            out,
            seed,
            format,
        } => cmd_mean_est(config, out, seed, format),
        Command::Train {
            config,
            out,
            seed,
            format,
        } => cmd_train(&config, out, seed, format),
        Command::Aggregate { input, config, out } => cmd_aggregate(&input, config, out),
        Command::Bounds {
            p,
            q,
            r,
            delta,
            theta,
            kind,
            d,
            n,
            x,
            with_detox,
            out,
        } => match kind {
            Some(kind) => cmd_rate_bound(kind, d, n, x, with_detox, out),
            None => cmd_bounds(
                p.expect("clap enforces p"),
                q.expect("clap enforces q"),
                r.expect("clap enforces r"),
                delta,
                theta,
                out,
            ),
        },
        Command::Timing {
            config,
            out,
            seed,
            format,
        } => cmd_timing(config, out, seed, format),
    }
}

fn cmd_filter_stats(
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    format: OutFormat,
    trials: Option<u64>,
) -> Result<i32> {
    let cfg: FilterStatsConfig = match &config {
        Some(p) => read_config(p)?,
        None => FilterStatsConfig::default(),
    };
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let trials = trials.or(cfg.trials).unwrap_or(100_000);

    let mut reports: Vec<FilterBoundReport> = Vec::new();
    let mut failures = Vec::new();
    for gp in &cfg.grid {
        let rep = analyze_point(gp.p, gp.q, gp.r, gp.delta, trials, seed)?;
        for v in &rep.violations {
            failures.push(format!("p={} q={} r={}: {v}", gp.p, gp.q, gp.r));
        }
        reports.push(rep);
    }

    match format {
        OutFormat::Json => {
            let body = serde_json::to_string_pretty(&reports)?;
            write_out(&out, "filter_stats.json", &body)?;
        }
        OutFormat::Csv => {
            let mut csv = String::from(
                "p,q,r,exact_expectation,qhat_upper_bound,r3_bound,confidence_threshold,empirical_tail,empirical_mean,empirical_std_error,trials,passed\n",
            );
            for r in &reports {
                writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.p,
                    r.q,
                    r.r,
                    r.exact_expectation,
                    opt(r.qhat_upper_bound),
                    opt(r.r3_bound),
                    opt(r.confidence_threshold),
                    opt(r.empirical_tail),
                    r.empirical_mean,
                    r.empirical_std_error,
                    r.trials,
                    r.passed
                )?;
            }
            write_out(&out, "filter_stats.csv", &csv)?;
        }
    }
    let mut sum = summary(seed, serde_json::to_value(&cfg.grid)?, &failures);
    sum["trials"] = json!(trials);
    sum["reports"] = serde_json::to_value(&reports)?;
    println!("{}", serde_json::to_string_pretty(&sum)?);
    Ok(i32::from(!failures.is_empty()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_mean_est(
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    format: OutFormat,
) -> Result<i32> {
    let mut cfg: MeanEstConfig = match &config {
        Some(p) => read_config(p)?,
        None => MeanEstConfig {
            d: 100,
            p: 2100,
            q: 100,
            r: 3,
            k: 20,
            byz_norm: 100.0,
            seed: 0,
        },
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = mean_estimation_experiment(&cfg)?;

    match format {
        OutFormat::Json => {
            write_out(&out, "mean_est.json", &serde_json::to_string_pretty(&report)?)?;
        }
        OutFormat::Csv => {
            let mut csv = String::from("estimator,error\n");
            for e in report.plain.iter().chain(&report.detox) {
                writeln!(csv, "{},{}", e.name, e.error)?;
            }
            write_out(&out, "mean_est.csv", &csv)?;
        }
    }
    let mut sum = summary(cfg.seed, serde_json::to_value(&cfg)?, &[]);
    sum["report"] = serde_json::to_value(&report)?;
    println!("{}", serde_json::to_string_pretty(&sum)?);
    Ok(0)
}

fn cmd_train(
    config: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    format: OutFormat,
) -> Result<i32> {
    let mut cfg: TrainConfig = read_config(config)?;
    if let Some(s) = seed {
        cfg.detox.seed = s;
    }
    let record = run_training(&cfg.detox, &cfg.task)?;

    match format {
        OutFormat::Json => {
            write_out(&out, "run.json", &serde_json::to_string_pretty(&record)?)?;
        }
        OutFormat::Csv => {
            write_out(&out, "run.csv", &record.to_csv())?;
        }
    }
    let mut sum = summary(cfg.detox.seed, serde_json::to_value(&cfg.detox)?, &[]);
    sum["task"] = serde_json::to_value(&cfg.task)?;
    sum["initial_loss"] = json!(record.initial_loss);
    sum["final_loss"] = json!(record.final_loss);
    sum["mean_q_hat"] = json!(record.mean_qhat());
    sum["mean_delta"] = json!(record.mean_delta());
    println!("{}", serde_json::to_string_pretty(&sum)?);
    Ok(0)
}

/// Parse one vector per line; '#' starts a comment, blank lines are skipped.
pub fn parse_vector_file(text: &str) -> Result<Vec<GradVec>> {
    let mut vectors = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .with_context(|| format!("line {}: bad number {tok:?}", lineno + 1))
            })
            .collect::<Result<_>>()?;
        vectors.push(
            GradVec::new(vals)
                .map_err(|e| anyhow::anyhow!("line {}: {e}", lineno + 1))?,
        );
    }
    Ok(vectors)
}

fn cmd_aggregate(input: &Path, config: Option<PathBuf>, out: Option<PathBuf>) -> Result<i32> {
    let cfg: AggregateConfig = match &config {
        Some(p) => read_config(p)?,
        None => AggregateConfig::default(),
    };
    let agg = cfg.agg.unwrap_or(AggregatorSpec::Mean);
    agg.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
    let text = fs::read_to_string(input)
        .with_context(|| format!("reading {}", input.display()))?;
    let vectors = parse_vector_file(&text)?;
    let result = agg.apply(&vectors).map_err(|e| anyhow::anyhow!("{e}"))?;

    // 17 significant digits round-trip f64 exactly
    let line = result
        .as_slice()
        .iter()
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(" ");
    write_out(&out, "aggregate.txt", &format!("{line}\n"))?;
    println!("{line}");
    Ok(0)
}

fn cmd_bounds(
    p: usize,
    q: usize,
    r: usize,
    delta: Option<f64>,
    theta: Option<f64>,
    out: Option<PathBuf>,
) -> Result<i32> {
    let exact = exact_expected_qhat(p, q, r)?;
    let body = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "p": p,
        "q": q,
        "r": r,
        "exact_expectation": exact,
        "qhat_upper_bound": qhat_upper_bound(p, q, r).ok(),
        "r3_bound": if r == 3 { Some(r3_bound(q, q as f64 / p as f64)) } else { None },
        "confidence_threshold": match delta {
            Some(d) => Some(confidence_threshold(d)?),
            None => None,
        },
        "tail_bound": match theta {
            Some(t) => Some(tail_bound(p, q, r, t)?),
            None => None,
        },
    });
    let text = serde_json::to_string_pretty(&body)?;
    write_out(&out, "bounds.json", &text)?;
    println!("{text}");
    Ok(0)
}

fn cmd_rate_bound(
    kind: RateKindArg,
    d: usize,
    n: usize,
    x: f64,
    with_detox: bool,
    out: Option<PathBuf>,
) -> Result<i32> {
    let value = convergence_rate_bound(kind.into(), d, n, x, with_detox);
    let body = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "kind": format!("{kind:?}").to_lowercase(),
        "d": d,
        "n": n,
        "x": x,
        "with_detox": with_detox,
        "value": value,
    });
    let text = serde_json::to_string_pretty(&body)?;
    write_out(&out, "bounds.json", &text)?;
    println!("{text}");
    Ok(0)
}

fn cmd_timing(
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    format: OutFormat,
) -> Result<i32> {
    let mut cfg: TimingConfig = match &config {
        Some(p) => read_config(p)?,
        None => TimingConfig {
            p_values: vec![50, 100],
            d: 20_000,
            r: 5,
            k: 5,
            q_frac: 0.1,
            reps: 11,
            warmups: 2,
            seed: 0,
        },
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let rows = timing_probe(&cfg)?;

    match format {
        OutFormat::Json => {
            write_out(&out, "timing.json", &serde_json::to_string_pretty(&rows)?)?;
        }
        OutFormat::Csv => {
            let mut csv = String::from("p,plain_nanos,detox_nanos\n");
            for r in &rows {
                writeln!(csv, "{},{},{}", r.p, r.plain_nanos, r.detox_nanos)?;
            }
            write_out(&out, "timing.csv", &csv)?;
        }
    }
    let mut sum = summary(cfg.seed, serde_json::to_value(&cfg)?, &[]);
    sum["rows"] = serde_json::to_value(&rows)?;
    println!("{}", serde_json::to_string_pretty(&sum)?);
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_file_parses_comments_and_blanks() {
        let text = "1.0 2.0 3.0\n# header comment\n\n4 5 6 # trailing\n";
        let vs = parse_vector_file(text).unwrap();
        assert_eq!(vs.len(), 2);
        assert_eq!(vs[0].as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(vs[1].as_slice(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn vector_file_rejects_garbage() {
        assert!(parse_vector_file("1.0 oops").is_err());
        assert!(parse_vector_file("inf 2.0").is_err());
    }

    #[test]
    fn cli_parses_subcommands() {
        let cli = Cli::try_parse_from(["detox", "bounds", "--p", "45", "--q", "5", "--r", "3"])
            .unwrap();
        assert!(matches!(
            cli.cmd,
            Command::Bounds {
                p: Some(45),
                q: Some(5),
                r: Some(3),
                ..
            }
        ));

        let cli = Cli::try_parse_from([
            "detox",
            "filter-stats",
            "--trials",
            "1000",
            "--format",
            "csv",
        ])
        .unwrap();
        match cli.cmd {
            Command::FilterStats { trials, format, .. } => {
                assert_eq!(trials, Some(1000));
                assert_eq!(format, OutFormat::Csv);
            }
            _ => panic!("wrong subcommand"),
        }
    }

    #[test]
    fn cli_rejects_unknown_flag() {
        assert!(Cli::try_parse_from(["detox", "train", "--bogus", "x"]).is_err());
    }
}
