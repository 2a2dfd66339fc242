//! Command implementations behind the `crowdlearn` binary.
//!
//! Settings resolve in the order defaults, `--config` file, `CROWDLEARN_*`
//! environment variables, command-line flags. Every command writes a
//! `manifest.json` next to its outputs.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analytics::{self, OffsiteMode};
use crate::config;
use crate::error::{Error, Result};
use crate::evaluation::{pairwise_prediction, recovery_report};
use crate::event_model::io::{read_dataset, read_test_set, write_dataset, write_test_set};
use crate::event_model::{
    detrend_scores, filter_dataset, split_train_test, validate_dataset, Dataset, FilterConfig,
};
use crate::kernel::{Kernel, ParameterFile};
use crate::likelihood::{build_design, load_cached_design, save_cached_design, CacheKey, ParameterIndex};
use crate::solver::{fit_design, sweep_half_life, ConvergedBy, FitFile, SolverOptions};
use crate::synth::{generate, SynthConfig};

pub const ENV_PREFIX: &str = "CROWDLEARN_";
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_MAX_ITER: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "crowdlearn", version, about = "Fit latent expertise processes to learning and contribution logs")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Flat `key = value` settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SolverFlags {
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol_grad: Option<f64>,
    #[arg(long)]
    pub tol_obj: Option<f64>,
    /// Forgetting half-life in days.
    #[arg(long)]
    pub half_life: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Report {
    Decomposition,
    KnowledgeDist,
    UsefulUpvotes,
    ContributionSplit,
    Trajectory,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset and its ground truth.
    Simulate {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate, filter, detrend and split a dataset.
    Preprocess {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip the activity filters.
        #[arg(long)]
        no_filter: bool,
    },
    /// Maximum-likelihood fit.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fit the off-site-only model.
        #[arg(long)]
        baseline: bool,
        /// Design-matrix cache file.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Recovery against ground truth and/or pairwise prediction.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Dataset the model was fitted on.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, requires = "test")]
        baseline: Option<PathBuf>,
        #[arg(long, requires = "baseline")]
        test: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
    },
    /// Refit over a grid of half-lives.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.5,2,7,30,90")]
        half_lives: Vec<f64>,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Post-fit analyses as CSV.
    Analyze {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        report: Report,
        /// User for `trajectory`.
        #[arg(long)]
        user: Option<String>,
        /// Grid times for `trajectory`; defaults to 50 points over the horizon.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Aggregate off-site learning as the gain `μT` instead of `μT²/2`.
        #[arg(long)]
        offsite_gain: bool,
    },
}

/// Settings shared by the commands other than `simulate`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub half_life_days: f64,
    pub solver: SolverOptions,
    pub filter: FilterConfig,
    pub seed: u64,
    pub train_fraction: f64,
    /// 0 disables detrending.
    pub detrend_bin_days: f64,
    pub thresholds: Vec<f64>,
    pub zero_threshold: f64,
    pub histogram_bins: usize,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            half_life_days: 7.0,
            solver: SolverOptions::default(),
            filter: FilterConfig::default(),
            seed: 0,
            train_fraction: 0.8,
            detrend_bin_days: crate::event_model::DEFAULT_DETREND_BIN_DAYS,
            thresholds: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
            zero_threshold: analytics::DEFAULT_ZERO_THRESHOLD,
            histogram_bins: 30,
            threads: None,
        }
    }
}

const RUN_KEYS: &[&str] = &[
    "half_life_days",
    "max_iter",
    "tol_grad",
    "tol_obj",
    "memory",
    "init_value",
    "min_learning_events",
    "min_contributions",
    "min_active_months",
    "top_topics",
    "seed",
    "train_fraction",
    "detrend_bin_days",
    "thresholds",
    "zero_threshold",
    "histogram_bins",
    "threads",
];

fn list(key: &str, raw: &str) -> Result<Vec<f64>> {
    raw.split(',').map(|v| config::value(key, v.trim())).collect()
}

impl RunConfig {
    pub fn apply(&mut self, pairs: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in pairs {
            let f = || config::value::<f64>(k, v);
            let n = || config::value::<usize>(k, v);
            match k.as_str() {
                "half_life_days" => self.half_life_days = f()?,
                "max_iter" => self.solver.max_iterations = n()?,
                "tol_grad" => self.solver.grad_tolerance = f()?,
                "tol_obj" => self.solver.objective_rel_tolerance = f()?,
                "memory" => self.solver.memory = n()?,
                "init_value" => self.solver.init_value = f()?,
                "min_learning_events" => self.filter.min_learning_events = n()?,
                "min_contributions" => self.filter.min_contributions = n()?,
                "min_active_months" => self.filter.min_active_months = n()?,
                "top_topics" => self.filter.top_topics = n()?,
                "seed" => self.seed = config::value(k, v)?,
                "train_fraction" => self.train_fraction = f()?,
                "detrend_bin_days" => self.detrend_bin_days = f()?,
                "thresholds" => self.thresholds = list(k, v)?,
                "zero_threshold" => self.zero_threshold = f()?,
                "histogram_bins" => self.histogram_bins = n()?,
                "threads" => self.threads = Some(n()?),
                other => return Err(Error::ConfigInvalid(format!("unknown key {other}"))),
            }
        }
        Ok(())
    }

    fn apply_solver_flags(&mut self, flags: &SolverFlags) {
        if let Some(v) = flags.max_iter {
            self.solver.max_iterations = v;
        }
        if let Some(v) = flags.tol_grad {
            self.solver.grad_tolerance = v;
        }
        if let Some(v) = flags.tol_obj {
            self.solver.objective_rel_tolerance = v;
        }
        if let Some(v) = flags.half_life {
            self.half_life_days = v;
        }
    }

    pub fn check(&self) -> Result<()> {
        self.solver.check()?;
        Kernel::from_half_life(self.half_life_days)?;
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::ConfigInvalid("train_fraction must lie in (0, 1]".into()));
        }
        if !(self.detrend_bin_days >= 0.0 && self.detrend_bin_days.is_finite()) {
            return Err(Error::ConfigInvalid("detrend_bin_days must be nonnegative".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::ConfigInvalid("threads must be at least 1".into()));
        }
        Ok(())
    }
}

/// `CROWDLEARN_<KEY>` values for the given keys.
fn env_pairs(keys: &[String]) -> BTreeMap<String, String> {
    keys.iter()
        .filter_map(|k| {
            std::env::var(format!("{ENV_PREFIX}{}", k.to_uppercase()))
                .ok()
                .map(|v| (k.clone(), v))
        })
        .collect()
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn file_pairs(path: Option<&Path>) -> Result<BTreeMap<String, String>> {
    match path {
        Some(p) => config::parse_kv(&read_text(p)?),
        None => Ok(BTreeMap::new()),
    }
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    cfg.apply(&file_pairs(cli.config.as_deref())?)?;
    let keys: Vec<String> = RUN_KEYS.iter().map(|k| k.to_string()).collect();
    cfg.apply(&env_pairs(&keys))?;
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    Ok(cfg)
}

fn synth_config(cli: &Cli, seed: Option<u64>) -> Result<SynthConfig> {
    let file = match cli.config.as_deref() {
        Some(p) => read_text(p)?,
        None => String::new(),
    };
    let mut cfg = SynthConfig::from_kv(&file)?;
    let keys: Vec<String> = config::parse_kv(&SynthConfig::default().to_kv())?
        .into_keys()
        .collect();
    cfg.apply(&env_pairs(&keys))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.check()?;
    Ok(cfg)
}

/// Record of one command run.
#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    args: Vec<String>,
    config: serde_json::Value,
    /// SHA-256 of every input file.
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    status: String,
    wall_time_seconds: f64,
}

struct Run {
    out: PathBuf,
    manifest: Manifest,
    started: Instant,
}

impl Run {
    fn new(out: &Path, command: &str, args: &[OsString], config: serde_json::Value) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(Run {
            out: out.to_path_buf(),
            manifest: Manifest {
                tool: "crowdlearn",
                version: env!("CARGO_PKG_VERSION"),
                command: command.into(),
                args: args.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
                config,
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                status: "ok".into(),
                wall_time_seconds: 0.0,
            },
            started: Instant::now(),
        })
    }

    /// Hash a file, or every file directly inside a directory.
    fn input(&mut self, path: &Path) -> Result<()> {
        let mut files = Vec::new();
        if path.is_dir() {
            for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
                let p = entry.map_err(|e| Error::io(path, e))?.path();
                if p.is_file() {
                    files.push(p);
                }
            }
            files.sort();
        } else {
            files.push(path.to_path_buf());
        }
        for f in files {
            let bytes = fs::read(&f).map_err(|e| Error::io(&f, e))?;
            self.manifest
                .inputs
                .insert(f.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        }
        Ok(())
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.manifest.outputs.push(name.into());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.wall_time_seconds = self.started.elapsed().as_secs_f64();
        let path = self.out.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn check_valid(d: &Dataset, run: &mut Run) -> Result<()> {
    let report = validate_dataset(d);
    if report.is_empty() {
        return Ok(());
    }
    run.write("validation.json", &(report.to_json() + "\n"))?;
    run.manifest.status = "invalid dataset".into();
    Err(Error::InvalidDataset(report.error_count()))
}

fn read_fit(path: &Path) -> Result<FitFile> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

/// What a successful command reports back for the exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Done,
    MaxIterReached,
}

pub fn run(cli: &Cli, args: &[OsString]) -> Result<Outcome> {
    match &cli.command {
        Command::Simulate { seed, out } => {
            let cfg = synth_config(cli, *seed)?;
            let mut run = Run::new(out, "simulate", args, serde_json::to_value(&cfg)?)?;
            if let Some(p) = &cli.config {
                run.input(p)?;
            }
            let (d, truth) = generate(&cfg)?;
            let data_dir = out.join("data");
            write_dataset(&data_dir, &d)?;
            run.manifest.outputs.push("data".into());
            run.write_json("truth.json", &ParameterFile::from_params(&truth, &d))?;
            run.write("synth.cfg", &cfg.to_kv())?;
            run.finish()?;
            Ok(Outcome::Done)
        }
        Command::Preprocess { data, out, no_filter } => {
            let cfg = run_config(cli)?;
            cfg.check()?;
            let mut run = Run::new(out, "preprocess", args, serde_json::to_value(&cfg)?)?;
            run.input(data)?;
            let d = read_dataset(data)?;
            let result = check_valid(&d, &mut run).and_then(|()| {
                let mut d = if *no_filter { d } else { filter_dataset(&d, &cfg.filter)? };
                if cfg.detrend_bin_days > 0.0 {
                    d = detrend_scores(&d, cfg.detrend_bin_days);
                }
                let (train, test) = split_train_test(&d, cfg.train_fraction);
                write_dataset(&out.join("train"), &train)?;
                write_test_set(&out.join("test"), &train, &test)?;
                run.manifest.outputs.extend(["train".into(), "test".into()]);
                Ok(())
            });
            run.finish()?;
            result.map(|()| Outcome::Done)
        }
        Command::Fit {
            data,
            out,
            baseline,
            cache,
            solver,
        } => {
            let mut cfg = run_config(cli)?;
            cfg.apply_solver_flags(solver);
            cfg.check()?;
            let mut run = Run::new(out, "fit", args, serde_json::to_value(&cfg)?)?;
            run.input(data)?;
            let d = read_dataset(data)?;
            let result = check_valid(&d, &mut run).and_then(|()| {
                let kernel = Kernel::from_half_life(cfg.half_life_days)?;
                let idx = if *baseline {
                    ParameterIndex::build_baseline(&d)
                } else {
                    ParameterIndex::build(&d)
                };
                let design = match cache {
                    Some(path) if !*baseline => {
                        let key = CacheKey {
                            dataset_hash: d.short_hash(),
                            omega: kernel.omega(),
                        };
                        match load_cached_design(path, key)? {
                            Some(x) if x.n_coords() == idx.len() => x,
                            _ => {
                                let x = build_design(&d, kernel, &idx);
                                save_cached_design(path, &x, key)?;
                                x
                            }
                        }
                    }
                    _ => build_design(&d, kernel, &idx),
                };
                let r = fit_design(&d, kernel, &idx, &design, &cfg.solver)?;
                let model = if *baseline { "baseline" } else { "full" };
                run.write_json("fit.json", &r.to_file(&d, model))?;
                if r.converged_by == ConvergedBy::MaxIter {
                    run.manifest.status = "max_iter".into();
                    Ok(Outcome::MaxIterReached)
                } else {
                    Ok(Outcome::Done)
                }
            });
            if result.is_err() && run.manifest.status == "ok" {
                run.manifest.status = "error".into();
            }
            run.finish()?;
            result
        }
        Command::Evaluate {
            model,
            data,
            out,
            truth,
            baseline,
            test,
            thresholds,
        } => {
            let cfg = run_config(cli)?;
            let thresholds = thresholds.clone().unwrap_or(cfg.thresholds.clone());
            if truth.is_none() && baseline.is_none() {
                return Err(Error::ConfigInvalid(
                    "evaluate needs --truth, or --baseline with --test".into(),
                ));
            }
            let mut run = Run::new(out, "evaluate", args, serde_json::to_value(&cfg)?)?;
            run.input(model)?;
            run.input(data)?;
            let d = read_dataset(data)?;
            let est = read_fit(model)?.parameters.resolve(&d)?;
            if let Some(truth) = truth {
                run.input(truth)?;
                let t: ParameterFile = serde_json::from_str(&read_text(truth)?)?;
                let report = recovery_report(&t.resolve(&d)?, &est)?;
                run.write("recovery.csv", &report.to_csv()?)?;
                run.write("recovery.json", &(report.to_json()? + "\n"))?;
            }
            if let (Some(baseline), Some(test)) = (baseline, test) {
                run.input(baseline)?;
                run.input(test)?;
                let base = read_fit(baseline)?.parameters.resolve(&d)?;
                let test_set = read_test_set(test, &d)?;
                let table = pairwise_prediction(&est, &base, &d, &test_set, &thresholds)?;
                run.write("prediction.csv", &table.to_csv()?)?;
                run.write("prediction.json", &(table.to_json()? + "\n"))?;
            }
            run.finish()?;
            Ok(Outcome::Done)
        }
        Command::Sweep {
            data,
            out,
            half_lives,
            solver,
        } => {
            let mut cfg = run_config(cli)?;
            cfg.apply_solver_flags(solver);
            cfg.check()?;
            let mut run = Run::new(out, "sweep", args, serde_json::to_value(&cfg)?)?;
            run.input(data)?;
            let d = read_dataset(data)?;
            check_valid(&d, &mut run)?;
            let points = sweep_half_life(&d, half_lives, &cfg.solver)?;
            run.write("sweep.csv", &crate::export::to_csv(&points)?)?;
            run.write_json("sweep.json", &points)?;
            run.finish()?;
            Ok(Outcome::Done)
        }
        Command::Analyze {
            fit,
            data,
            out,
            report,
            user,
            grid,
            offsite_gain,
        } => {
            let cfg = run_config(cli)?;
            let mut run = Run::new(out, "analyze", args, serde_json::to_value(&cfg)?)?;
            run.input(fit)?;
            run.input(data)?;
            let d = read_dataset(data)?;
            let p = read_fit(fit)?.parameters.resolve(&d)?;
            match report {
                Report::Decomposition => {
                    let mode = if *offsite_gain {
                        OffsiteMode::Gain
                    } else {
                        OffsiteMode::Integral
                    };
                    let rows = analytics::onsite_offsite(&p, &d, d.horizon, mode);
                    run.write("decomposition.csv", &crate::export::to_csv(&rows)?)?;
                }
                Report::KnowledgeDist => {
                    let s = analytics::knowledge_distribution(&p, cfg.zero_threshold, cfg.histogram_bins);
                    run.write("knowledge-dist.csv", &s.histogram_csv()?)?;
                    run.write_json("knowledge-dist.json", &s)?;
                }
                Report::UsefulUpvotes => {
                    let u = analytics::useful_upvote_fraction(&p, &d, cfg.zero_threshold);
                    run.write("useful-upvotes.csv", &u.to_csv()?)?;
                    run.write_json(
                        "useful-upvotes.json",
                        &serde_json::json!({ "excluded_users": u.excluded_users }),
                    )?;
                }
                Report::ContributionSplit => {
                    let c = analytics::contribution_knowledge(&p, &d);
                    run.write("contribution-split.csv", &c.contributions_csv()?)?;
                    run.write("user-knowledge.csv", &c.users_csv()?)?;
                }
                Report::Trajectory => {
                    let user = user
                        .as_deref()
                        .ok_or_else(|| Error::ConfigInvalid("trajectory needs --user".into()))?;
                    let grid = grid.clone().unwrap_or_else(|| {
                        (0..50).map(|i| d.horizon * i as f64 / 49.0).collect()
                    });
                    let t = analytics::learning_trajectory(&p, &d, user, &grid)?;
                    run.write("trajectory.csv", &t.to_csv()?)?;
                    run.write_json(
                        "trajectory.json",
                        &serde_json::json!({ "user": t.user, "onsite_share": t.onsite_share }),
                    )?;
                }
            }
            run.finish()?;
            Ok(Outcome::Done)
        }
    }
}

/// Parse, run and map the outcome to a process exit code.
pub fn main_with_args(args: Vec<OsString>) -> i32 {
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FAILURE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = match run_config_threads(&cli) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    let go = || run(&cli, &args);
    let result = match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(go),
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_FAILURE;
            }
        },
        None => go(),
    };
    match result {
        Ok(Outcome::Done) => 0,
        Ok(Outcome::MaxIterReached) => {
            eprintln!("warning: solver stopped at the iteration limit");
            EXIT_MAX_ITER
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn run_config_threads(cli: &Cli) -> Result<Option<usize>> {
    if let Command::Simulate { .. } = cli.command {
        return Ok(cli.threads);
    }
    let cfg = run_config(cli)?;
    cfg.check()?;
    Ok(cfg.threads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_layers() {
        let mut cfg = RunConfig::default();
        let pairs = config::parse_kv("half_life_days = 3\nthresholds = 1, 2.5\nmax_iter = 9\n").unwrap();
        cfg.apply(&pairs).unwrap();
        assert_eq!(cfg.half_life_days, 3.0);
        assert_eq!(cfg.thresholds, vec![1.0, 2.5]);
        cfg.apply_solver_flags(&SolverFlags {
            max_iter: Some(4),
            ..SolverFlags::default()
        });
        assert_eq!(cfg.solver.max_iterations, 4);
        assert!(cfg.apply(&config::parse_kv("bogus = 1\n").unwrap()).is_err());
    }

    #[test]
    fn parses_commands() {
        let cli = Cli::try_parse_from([
            "crowdlearn", "--threads", "2", "fit", "--data", "d", "--out", "o", "--half-life", "5",
        ])
        .unwrap();
        assert_eq!(cli.threads, Some(2));
        match cli.command {
            Command::Fit { solver, .. } => assert_eq!(solver.half_life, Some(5.0)),
            _ => panic!("wrong command"),
        }
        assert!(Cli::try_parse_from(["crowdlearn", "analyze", "--report", "nope"]).is_err());
    }
}
