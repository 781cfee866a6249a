use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use updrs_core::config::RunConfig;
use updrs_core::dataset::{build_design, canonical_header, load_csv, write_csv, Dataset, StandardizationStats, SUBJECT};
use updrs_core::eval::{mse_table, r2_table, render_report, run_experiment_on, ReportFormat};
use updrs_core::nn::gradcheck::{grad_check_with, random_instance, BlockError};
use updrs_core::rfe::rfe_select_protected;
use updrs_core::synth::{generate, SynthConfig};
use updrs_core::{Error, RandomSource};

#[derive(Parser)]
#[command(name = "updrs", version, about = "UPDRS regression from voice recordings")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parent directory for run directories.
    #[arg(long, global = true)]
    out: Option<String>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Dataset CSV (default: config `data`, then $UPDRS_DATA).
    #[arg(long, global = true)]
    data: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Print record and subject counts and per-column statistics.
    Inspect,
    /// Run feature elimination on the whole dataset and write its report.
    Select,
    /// Cross-validate the network and the linear baselines.
    TrainEval {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        max_rows: Option<usize>,
    },
    /// Finite-difference check of the network gradients on tiny models.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        models: u64,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        /// Corrupt one gradient block to confirm failures are detected.
        #[arg(long)]
        canary: bool,
    },
    /// Write a surrogate dataset in the telemonitoring CSV layout.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 5875)]
        records: usize,
        #[arg(long, default_value_t = 42)]
        subjects: usize,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type CmdResult = std::result::Result<ExitCode, Failure>;

fn load_config(g: &Global) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(d) = &g.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn load_dataset(cfg: &RunConfig) -> std::result::Result<Dataset, Failure> {
    let path = cfg.data_path()?;
    Ok(load_csv(&path)?)
}

/// `<out>/<UTC timestamp>-seed<seed>`, suffixed if that name is taken.
fn make_run_dir(cfg: &RunConfig) -> std::result::Result<PathBuf, Failure> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let parent = Path::new(&cfg.out);
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let base = format!("{stamp}-seed{}", cfg.seed);
    for i in 0.. {
        let name = if i == 0 { base.clone() } else { format!("{base}-{i}") };
        let dir = parent.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e).into()),
        }
    }
    unreachable!()
}

fn write(dir: &Path, name: &str, contents: &str) -> std::result::Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn cmd_inspect(g: &Global) -> CmdResult {
    let cfg = load_config(g)?;
    let ds = load_dataset(&cfg)?;
    println!("{} records, {} subjects", ds.len(), ds.subject_count());
    println!("{:<16} {:>14} {:>14} {:>14} {:>14}", "column", "mean", "stddev", "min", "max");
    let columns: Vec<String> = canonical_header()
        .into_iter()
        .filter(|c| *c != SUBJECT)
        .map(String::from)
        .collect();
    for c in &columns {
        let v: Vec<f64> = ds.records.iter().map(|r| r.get(c).unwrap()).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!("{c:<16} {mean:>14.6} {sd:>14.6} {min:>14.6} {max:>14.6}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_select(g: &Global) -> CmdResult {
    let cfg = load_config(g)?;
    cfg.validate()?;
    let ds = load_dataset(&cfg)?;
    let (x, y) = build_design(&ds, cfg.target, &cfg.regressors)?;
    let z = StandardizationStats::fit(&x, Some(&cfg.regressors))?.apply(&x)?;
    let protected = cfg.protected_indices()?;
    let mut rng = RandomSource::new(cfg.seed).derive(3);
    let res = rfe_select_protected(&z, &y, cfg.rfe_k, &protected, &cfg.forest, &mut rng)?;
    let names = |idx: &[usize]| -> Vec<String> { idx.iter().map(|&i| cfg.regressors[i].clone()).collect() };
    let doc = json!({
        "format_version": 1,
        "seed": cfg.seed,
        "n_records": ds.len(),
        "k": cfg.rfe_k,
        "protected": cfg.rfe_protected,
        "selected": names(&res.selected),
        "elimination_order": names(&res.elimination_order),
        "rounds": res.rounds.len(),
    });
    let dir = make_run_dir(&cfg)?;
    let text = res.report(&cfg.regressors);
    write(&dir, "rfe_report.json", &format!("{}\n", serde_json::to_string_pretty(&doc).unwrap()))?;
    write(&dir, "rfe_report.txt", &text)?;
    print!("{text}");
    println!("run directory: {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_train_eval(g: &Global, epochs: Option<usize>, folds: Option<usize>, max_rows: Option<usize>) -> CmdResult {
    let mut cfg = load_config(g)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if let Some(k) = folds {
        cfg.k_folds = k;
    }
    if max_rows.is_some() {
        cfg.max_rows = max_rows;
    }
    cfg.validate()?;
    let ds = load_dataset(&cfg)?;
    let start = Instant::now();
    let report = run_experiment_on(&cfg, &ds)?;
    log::info!("experiment finished in {:.1} s", start.elapsed().as_secs_f64());
    let dir = make_run_dir(&cfg)?;
    write(&dir, "report.json", &render_report(&report, ReportFormat::Json)?)?;
    write(&dir, "summary.csv", &render_report(&report, ReportFormat::Csv)?)?;
    write(&dir, "mse_table.txt", &mse_table(&report))?;
    write(&dir, "r2_table.txt", &r2_table(&report))?;
    write(&dir, "config.toml", &cfg.to_toml_string()?)?;
    print!("{}", render_report(&report, ReportFormat::Text)?);
    println!("run directory: {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(g: &Global, models: u64, eps: f64, tol: f64, canary: bool) -> CmdResult {
    let base = g.seed.unwrap_or(0);
    let start = Instant::now();
    let mut worst: Vec<BlockError> = Vec::new();
    let (mut checked, mut skips, mut max_err) = (0, 0, 0.0f64);
    for i in 0..models {
        let seed = base.wrapping_add(i);
        let (p, batch) = random_instance(seed, 5, 4);
        let r = grad_check_with(&p, &batch, eps, &mut RandomSource::new(seed), |gr| {
            if canary {
                gr.lstm_fwd.w_f.as_mut_slice().iter_mut().for_each(|v| *v = *v * 1.5 + 1e-3);
            }
        })?;
        checked += r.checked;
        skips += r.kink_skips;
        max_err = max_err.max(r.max_rel_error);
        for b in r.blocks {
            match worst.iter_mut().find(|w| w.name == b.name) {
                Some(w) if b.max_rel_error > w.max_rel_error => *w = b,
                Some(_) => {}
                None => worst.push(b),
            }
        }
    }
    println!("{:<20} {:>12} {:>16} {:>16}", "block", "max rel err", "analytic", "numeric");
    for w in &worst {
        println!("{:<20} {:>12.3e} {:>16.8e} {:>16.8e}", w.name, w.max_rel_error, w.analytic, w.numeric);
    }
    println!(
        "{models} models, {checked} entries checked, {skips} skipped at ReLU kinks, {:.2} s",
        start.elapsed().as_secs_f64()
    );
    println!("max relative error: {max_err:.3e} (tolerance {tol:e})");
    let failing: Vec<&str> = worst.iter().filter(|w| !(w.max_rel_error < tol)).map(|w| w.name.as_str()).collect();
    if failing.is_empty() {
        println!("PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAIL: {}", failing.join(", "));
        Ok(ExitCode::from(1))
    }
}

fn cmd_synth(g: &Global, output: &Path, records: usize, subjects: usize) -> CmdResult {
    let ds = generate(&SynthConfig {
        subjects,
        records,
        seed: g.seed.unwrap_or(0),
    })
    .map_err(|e| Failure::Usage(e.to_string()))?;
    let file = fs::File::create(output).map_err(|e| Error::io(output, e))?;
    write_csv(&ds, std::io::BufWriter::new(file)).map_err(|e| Error::io(output, e))?;
    println!("wrote {} records, {} subjects to {}", ds.len(), ds.subject_count(), output.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Some(j) = cli.global.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let g = &cli.global;
    let result = match &cli.command {
        Command::Inspect => cmd_inspect(g),
        Command::Select => cmd_select(g),
        Command::TrainEval {
            epochs,
            folds,
            max_rows,
        } => cmd_train_eval(g, *epochs, *folds, *max_rows),
        Command::Gradcheck {
            models,
            eps,
            tol,
            canary,
        } => cmd_gradcheck(g, *models, *eps, *tol, *canary),
        Command::Synth {
            output,
            records,
            subjects,
        } => cmd_synth(g, output, *records, *subjects),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
