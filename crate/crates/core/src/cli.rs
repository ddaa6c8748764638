//! Command-line interface.
//!
//! Exit codes: 0 success, 1 validation or check failure, 2 usage error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::checks::{check_names, run_check};
use crate::data::{Bounds, Dataset, Oracle, OracleConfig};
use crate::error::{Error, Result};
use crate::flight::{FlightState, Sample, OUTPUT_NAMES};
use crate::geometry::AircraftConfig;
use crate::piml::{correction_report, evaluate, train, HistoryRow, Model, ModelKind, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "piml-aero",
    version,
    about = "Blown-wing VLM/BEM solver and physics-infused surrogates"
)]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Directory for datasets, checkpoints and reports.
    #[arg(long, global = true, env = "PIML_AERO_OUT", default_value = "out")]
    pub out_dir: PathBuf,

    /// Aircraft configuration (TOML); defaults to the built-in nominal aircraft.
    #[arg(long, global = true)]
    pub aircraft: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the flight envelope and label it with the high-fidelity oracle.
    GenData(GenDataArgs),
    /// Train a model and write its checkpoint and convergence history.
    Train(TrainArgs),
    /// Validation RMSE per coefficient and inference timing.
    Eval(EvalArgs),
    /// Coefficients for one flight condition.
    Predict(PredictArgs),
    /// Finite-difference checks of the composed gradients.
    Gradcheck(GradcheckArgs),
    /// Correction and comparison CSVs for plotting.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Training split size; the remaining valid records validate.
    #[arg(long = "train", default_value_t = 70)]
    pub n_train: usize,
    /// Oracle constants (TOML); defaults to the built-in oracle.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// Dataset path (default: <out-dir>/dataset.csv).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArg {
    /// Dataset CSV (default: <out-dir>/dataset.csv).
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub model: ModelKind,
    #[command(flatten)]
    pub data: DataArg,
    /// Training configuration (TOML); flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub hidden_width: Option<usize>,
    #[arg(long)]
    pub hidden_depth: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, conflicts_with = "all", required_unless_present = "all")]
    pub model: Option<ModelKind>,
    /// Evaluate low-fidelity, ANN, PIML-A and PIML-B side by side.
    #[arg(long)]
    pub all: bool,
    #[command(flatten)]
    pub data: DataArg,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, default_value = "low-fidelity")]
    pub model: ModelKind,
    /// Checkpoint path (default: <out-dir>/<model>.json).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub v: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub omega_star: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub omega_port: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub theta_star: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub theta_port: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub theta_elev: f64,
    /// Print one JSON object instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Override the pass bar of every selected check.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Run only the named checks (repeatable); see --list.
    #[arg(long = "check")]
    pub checks: Vec<String>,
    #[arg(long)]
    pub list: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Models to report, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "piml-a,piml-b")]
    pub models: Vec<ModelKind>,
    #[command(flatten)]
    pub data: DataArg,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) => 2,
                _ => 1,
            }
        }
    }
}

fn run(cli: &Cli) -> Result<i32> {
    let aircraft = match &cli.aircraft {
        Some(p) => AircraftConfig::load(p)?,
        None => AircraftConfig::default(),
    };
    match &cli.command {
        Command::GenData(a) => gen_data(cli, &aircraft, a),
        Command::Train(a) => train_cmd(cli, &aircraft, a),
        Command::Eval(a) => eval_cmd(cli, &aircraft, a),
        Command::Predict(a) => predict_cmd(cli, &aircraft, a),
        Command::Gradcheck(a) => gradcheck_cmd(&aircraft, a),
        Command::Report(a) => report_cmd(cli, &aircraft, a),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn dataset_path(cli: &Cli, d: &DataArg) -> PathBuf {
    d.data
        .clone()
        .unwrap_or_else(|| cli.out_dir.join("dataset.csv"))
}

fn checkpoint_path(cli: &Cli, kind: ModelKind) -> PathBuf {
    cli.out_dir.join(format!("{kind}.json"))
}

fn gen_data(cli: &Cli, aircraft: &AircraftConfig, a: &GenDataArgs) -> Result<i32> {
    if a.n_train >= a.n {
        return Err(Error::InvalidArgument(format!(
            "training split {} must be smaller than the sample count {}",
            a.n_train, a.n
        )));
    }
    let oracle_cfg = match &a.oracle {
        Some(p) => OracleConfig::load(p)?,
        None => OracleConfig::default(),
    };
    let oracle = Oracle::new(aircraft.clone(), oracle_cfg.clone())?;
    let start = Instant::now();
    let ds = Dataset::generate(&oracle, &Bounds::default(), a.n, a.seed, a.n_train)?;
    let path = a
        .output
        .clone()
        .unwrap_or_else(|| cli.out_dir.join("dataset.csv"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let side = ds.save(&path, Some(&oracle_cfg))?;
    println!(
        "samples {}  valid {}  invalid {}  train {}  val {}  ({:.1} s)",
        ds.len(),
        ds.valid_count(),
        ds.len() - ds.valid_count(),
        ds.train().len(),
        ds.val().len(),
        start.elapsed().as_secs_f64()
    );
    println!("wrote {} and {}", path.display(), side.display());
    Ok(0)
}

fn load_splits(path: &Path) -> Result<(Dataset, Vec<Sample>, Vec<Sample>)> {
    let ds = Dataset::load(path)?;
    let (tr, va) = (ds.train(), ds.val());
    Ok((ds, tr, va))
}

/// History CSV with columns `epoch,train_loss,val_loss,lr,seconds`.
pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,lr,seconds\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.3}",
            r.epoch, r.train_loss, r.val_loss, r.lr, r.seconds
        );
    }
    s
}

fn train_cmd(cli: &Cli, aircraft: &AircraftConfig, a: &TrainArgs) -> Result<i32> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = a.epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.patience {
        cfg.patience = v;
    }
    cfg.hidden_width = a.hidden_width.or(cfg.hidden_width);
    cfg.hidden_depth = a.hidden_depth.or(cfg.hidden_depth);
    if !a.model.trainable() {
        return Err(Error::InvalidArgument(
            "low-fidelity model has no trainable parameters".into(),
        ));
    }
    let (_, tr, va) = load_splits(&dataset_path(cli, &a.data))?;
    ensure_dir(&cli.out_dir)?;
    let ckpt_path = checkpoint_path(cli, a.model);
    let hist_path = cli.out_dir.join(format!("{}_history.csv", a.model));
    match train(a.model, aircraft, &tr, &va, &cfg) {
        Ok(out) => {
            out.model.checkpoint().save(&ckpt_path)?;
            write(&hist_path, &history_csv(&out.history))?;
            let s = &out.summary;
            println!(
                "{}: {} epochs, best epoch {}, train loss {:.4e}, val loss {:.4e}, {:.1} s",
                a.model, s.epochs_run, s.best_epoch, s.train_loss, s.val_loss, s.seconds
            );
            println!("wrote {} and {}", ckpt_path.display(), hist_path.display());
            Ok(0)
        }
        Err(Error::Diverged {
            epoch,
            message,
            last_good,
        }) => {
            last_good.save(&ckpt_path)?;
            eprintln!(
                "error: training diverged at epoch {epoch}: {message}; last good checkpoint kept at {}",
                ckpt_path.display()
            );
            Ok(1)
        }
        Err(e) => Err(e),
    }
}

fn load_model(
    cli: &Cli,
    aircraft: &AircraftConfig,
    kind: ModelKind,
    path: Option<&Path>,
) -> Result<Model> {
    if kind == ModelKind::LowFidelity {
        return Model::low_fidelity(aircraft.clone());
    }
    let p = path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| checkpoint_path(cli, kind));
    let ckpt = Checkpoint::load(&p)?;
    if ckpt.kind != kind {
        return Err(Error::Config(format!(
            "{} holds a {} checkpoint, not {kind}",
            p.display(),
            ckpt.kind
        )));
    }
    Model::from_checkpoint(ckpt)
}

fn eval_cmd(cli: &Cli, aircraft: &AircraftConfig, a: &EvalArgs) -> Result<i32> {
    let kinds: Vec<ModelKind> = if a.all {
        ModelKind::ALL.to_vec()
    } else {
        vec![a.model.expect("clap enforces --model or --all")]
    };
    let (_, tr, va) = load_splits(&dataset_path(cli, &a.data))?;
    if va.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }
    let scale = target_std(&tr);
    let mut evals = Vec::new();
    for k in &kinds {
        let m = load_model(cli, aircraft, *k, None)?;
        evals.push(evaluate(&m, &va)?);
    }
    println!(
        "{:<13} {:>11} {:>11} {:>11} {:>11} {:>10} {:>12}",
        "model", "RMSE CL", "RMSE CD", "RMSE Cl", "RMSE Cm", "aggregate", "s/sample"
    );
    let mut summary =
        String::from("model,rmse_CL,rmse_CD,rmse_Cl,rmse_Cm,aggregate,seconds_per_sample\n");
    let mut errors = String::from("model,index,err_CL,err_CD,err_Cl,err_Cm\n");
    for e in &evals {
        let r = e.rmse;
        println!(
            "{:<13} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} {:>10.4} {:>12.3e}",
            e.kind.name(),
            r[0],
            r[1],
            r[2],
            r[3],
            e.aggregate(&scale),
            e.seconds_per_sample
        );
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{}",
            e.kind,
            r[0],
            r[1],
            r[2],
            r[3],
            e.aggregate(&scale),
            e.seconds_per_sample
        );
        for (i, x) in e.errors.iter().enumerate() {
            let _ = writeln!(errors, "{},{i},{},{},{},{}", e.kind, x[0], x[1], x[2], x[3]);
        }
    }
    ensure_dir(&cli.out_dir)?;
    let tag = if a.all {
        "all".to_string()
    } else {
        kinds[0].to_string()
    };
    write(&cli.out_dir.join(format!("eval_{tag}.csv")), &summary)?;
    write(&cli.out_dir.join(format!("eval_{tag}_errors.csv")), &errors)?;
    Ok(0)
}

/// Population standard deviation of each training target; the scale of the
/// aggregate RMSE.
pub fn target_std(train: &[Sample]) -> [f64; 4] {
    let n = train.len().max(1) as f64;
    std::array::from_fn(|k| {
        let m = train.iter().map(|s| s.target.to_array()[k]).sum::<f64>() / n;
        let v = train
            .iter()
            .map(|s| (s.target.to_array()[k] - m).powi(2))
            .sum::<f64>()
            / n;
        v.sqrt().max(1e-12)
    })
}

#[derive(Serialize)]
struct PredictJson {
    #[serde(rename = "CL")]
    cl: f64,
    #[serde(rename = "CD")]
    cd: f64,
    #[serde(rename = "Cl")]
    c_roll: f64,
    #[serde(rename = "Cm")]
    cm: f64,
}

fn predict_cmd(cli: &Cli, aircraft: &AircraftConfig, a: &PredictArgs) -> Result<i32> {
    let flight = FlightState::from_array([
        a.v,
        a.alpha,
        a.omega_star,
        a.omega_port,
        a.theta_star,
        a.theta_port,
        a.theta_elev,
    ]);
    let out = Bounds::default().violations(&flight);
    if !out.is_empty() {
        eprintln!("warning: outside the sampled envelope: {}", out.join(", "));
    }
    let model = load_model(cli, aircraft, a.model, a.checkpoint.as_deref())?;
    let p = model.predict(&flight)?;
    if !p.converged {
        eprintln!("warning: a propeller solve did not converge");
    }
    let c = p.coefficients;
    if a.json {
        let j = PredictJson {
            cl: c.cl,
            cd: c.cd,
            c_roll: c.c_roll,
            cm: c.cm,
        };
        println!("{}", serde_json::to_string(&j)?);
    } else {
        for (n, v) in OUTPUT_NAMES.iter().zip(c.to_array()) {
            println!("{n:<3} {v:.10e}");
        }
    }
    Ok(0)
}

fn gradcheck_cmd(aircraft: &AircraftConfig, a: &GradcheckArgs) -> Result<i32> {
    if a.list {
        for n in check_names() {
            println!("{n}");
        }
        return Ok(0);
    }
    let names = if a.checks.is_empty() {
        check_names()
    } else {
        a.checks.clone()
    };
    let model = Model::low_fidelity(aircraft.clone())?;
    let mut failed = 0;
    for n in &names {
        let r = run_check(model.aircraft(), n, a.threshold)?;
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<20} worst relative error {:.3e} (threshold {:.0e}, index {})",
            r.name, r.result.max_rel_error, r.threshold, r.result.worst_index
        );
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        eprintln!("{failed} of {} checks failed", names.len());
        return Ok(1);
    }
    Ok(0)
}

fn report_cmd(cli: &Cli, aircraft: &AircraftConfig, a: &ReportArgs) -> Result<i32> {
    let missing: Vec<String> = a
        .models
        .iter()
        .filter(|k| k.trainable() && !checkpoint_path(cli, **k).exists())
        .map(|k| checkpoint_path(cli, *k).display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "missing checkpoints: {}",
            missing.join(", ")
        )));
    }
    let (ds, _, _) = load_splits(&dataset_path(cli, &a.data))?;
    let records: Vec<_> = ds.records.iter().filter(|r| r.valid).collect();
    let flights: Vec<FlightState> = records.iter().map(|r| r.flight).collect();
    ensure_dir(&cli.out_dir)?;

    let mut models = vec![Model::low_fidelity(aircraft.clone())?];
    for k in &a.models {
        if *k != ModelKind::LowFidelity {
            models.push(load_model(cli, aircraft, *k, None)?);
        }
    }
    for m in models
        .iter()
        .filter(|m| matches!(m.kind(), ModelKind::PimlA | ModelKind::PimlB))
    {
        let rep = correction_report(m, &flights)?;
        let mut s = format!("index,split,{}\n", rep.columns.join(","));
        for (i, (row, r)) in rep.rows.iter().zip(&records).enumerate() {
            let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{i},{},{}", r.split, vals.join(","));
        }
        let p = cli.out_dir.join(format!("{}_corrections.csv", m.kind()));
        write(&p, &s)?;
        println!("wrote {} ({} rows)", p.display(), rep.rows.len());
    }

    let preds: Vec<_> = models
        .iter()
        .map(|m| m.predict_many(&flights))
        .collect::<Result<_>>()?;
    let mut s = String::from("index,split,coefficient,target");
    for m in &models {
        let _ = write!(s, ",{}", m.kind());
    }
    s.push('\n');
    for (i, r) in records.iter().enumerate() {
        let t = r.target.to_array();
        for (k, name) in OUTPUT_NAMES.iter().enumerate() {
            let _ = write!(s, "{i},{},{name},{}", r.split, t[k]);
            for p in &preds {
                let _ = write!(s, ",{}", p[i].to_array()[k]);
            }
            s.push('\n');
        }
    }
    let cmp = cli.out_dir.join("comparison.csv");
    write(&cmp, &s)?;
    println!("wrote {} ({} samples)", cmp.display(), records.len());

    let mut gp = String::from("set datafile separator ','\nset key autotitle columnhead\n");
    for (j, m) in models.iter().enumerate() {
        let _ = writeln!(
            gp,
            "# {kind}: prediction vs target\nplot 'comparison.csv' using 4:{col} with points title '{kind}'\npause -1",
            kind = m.kind(),
            col = 5 + j
        );
    }
    for k in a.models.iter().filter(|k| k.trainable()) {
        let _ = writeln!(
            gp,
            "# {k}: convergence\nset logscale y\nplot '{k}_history.csv' using 1:2 with lines title 'train', '' using 1:3 with lines title 'val'\nunset logscale y\npause -1"
        );
    }
    write(&cli.out_dir.join("plots.gp"), &gp)?;
    Ok(0)
}
