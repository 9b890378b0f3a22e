//! The `train`, `sample`, `density` and `eval` subcommands.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use flowkit_core::numcore::{Matrix, Rng};
use flowkit_core::train::{eval_metrics, Objective, Trainer};
use flowkit_core::{Error, FlowModel, TargetDensity};
use serde::Serialize;

use crate::checkpoint::{format_f64, Checkpoint, CheckpointError};
use crate::config::{ConfigError, DataError, RunConfig, TargetSpec};

pub const LOSS_FILE: &str = "loss.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const REPORT_FILE: &str = "report.json";

/// A failed command; [`CliError::exit_code`] maps it to the process status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    NonFinite(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Invalid(_) => 2,
            CliError::NonFinite(_) => 3,
        }
    }

    fn io(path: &Path, e: io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Invalid(format!("invalid config: {e}"))
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Invalid(format!("corrupt checkpoint: {e}"))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite { .. } => CliError::NonFinite(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Writes through a temporary file so readers never see a partial file.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = read(path)?;
    let mut config = RunConfig::from_toml(&text).map_err(|e| match e {
        ConfigError::Syntax { path: at, message } => {
            CliError::Invalid(format!("invalid config {}: {at}: {message}", path.display()))
        }
        other => other.into(),
    })?;
    config
        .validate()
        .map_err(|e| CliError::Invalid(format!("invalid config {}: {e}", path.display())))?;
    if let Some(data) = &config.train.data {
        let dir = path.parent().unwrap_or(Path::new(""));
        config.train.data = Some(dir.join(data));
    }
    Ok(config)
}

pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, FlowModel, Trainer), CliError> {
    let text = read(path)?;
    let ck = Checkpoint::from_json(&text)
        .map_err(|e| CliError::Invalid(format!("corrupt checkpoint {}: {e}", path.display())))?;
    let (model, trainer) = ck
        .restore()
        .map_err(|e| CliError::Invalid(format!("corrupt checkpoint {}: {e}", path.display())))?;
    Ok((ck, model, trainer))
}

fn save_checkpoint(path: &Path, config: &RunConfig, model: &FlowModel, trainer: &Trainer) -> Result<(), CliError> {
    let json = Checkpoint::capture(config, model, trainer)
        .to_json()
        .map_err(|e| CliError::NonFinite(format!("cannot write checkpoint: {e}")))?;
    write_atomic(path, json.as_bytes())
}

#[derive(Clone, Debug, Default)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    /// Resume from this checkpoint instead of starting fresh.
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Overrides the configured total iteration count.
    pub iterations: Option<usize>,
    /// Print progress to standard error.
    pub verbose: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub kl_estimate: Option<f64>,
    pub ess_fraction: f64,
    pub n: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub iterations: usize,
    pub final_loss: Option<f64>,
    pub wall_time_secs: f64,
    pub metrics: Option<EvalReport>,
}

/// Keeps the header and rows before `iteration` of an existing loss file.
fn truncate_losses(path: &Path, iteration: usize) -> String {
    let mut kept = String::from("iteration,loss\n");
    if let Ok(text) = fs::read_to_string(path) {
        for line in text.lines().skip(1) {
            let it = line.split(',').next().and_then(|s| s.parse::<usize>().ok());
            if matches!(it, Some(i) if i < iteration) {
                kept.push_str(line);
                kept.push('\n');
            }
        }
    }
    kept
}

pub fn train(args: &TrainArgs) -> Result<TrainReport, CliError> {
    let (mut config, mut model, mut trainer) = match (&args.config, &args.checkpoint) {
        (Some(_), Some(_)) => {
            return Err(CliError::Invalid(
                "pass either --config (fresh run) or --checkpoint (resume), not both".into(),
            ))
        }
        (None, None) => return Err(CliError::Invalid("train needs --config or --checkpoint".into())),
        (Some(path), None) => {
            let config = load_config(path)?;
            let model = config
                .build_model()
                .map_err(|e| CliError::Invalid(format!("invalid config {}: {e}", path.display())))?;
            let trainer = Trainer::new(config.train_config())?;
            (config, model, trainer)
        }
        (None, Some(path)) => {
            let (ck, model, trainer) = load_checkpoint(path)?;
            (ck.config, model, trainer)
        }
    };
    if let Some(n) = args.iterations {
        config.train.iterations = n;
        trainer.config.iterations = n;
    }
    let out = match (&args.out, &config.output) {
        (Some(dir), _) => dir.clone(),
        (None, Some(o)) => o.dir.clone(),
        (None, None) => return Err(CliError::Invalid("no output directory: pass --out or set [output] dir".into())),
    };
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let data = config.load_data(Path::new("")).map_err(|e| match e {
        DataError::Io(io) => CliError::Io(format!("training data: {io}")),
        DataError::Invalid(msg) => CliError::Invalid(format!("training data: {msg}")),
    })?;
    let target = config.target().map_err(|e| CliError::Invalid(e.to_string()))?;
    let objective = match (&data, &target) {
        (Some(d), _) => Objective::Data(d),
        (None, Some(t)) => Objective::Target(t),
        (None, None) => return Err(CliError::Invalid("nothing to train against".into())),
    };

    let loss_path = out.join(LOSS_FILE);
    let ck_path = out.join(CHECKPOINT_FILE);
    let header = truncate_losses(&loss_path, if args.checkpoint.is_some() { trainer.iteration } else { 0 });
    let file = fs::File::create(&loss_path).map_err(|e| CliError::io(&loss_path, e))?;
    let mut losses = BufWriter::new(file);
    losses.write_all(header.as_bytes()).map_err(|e| CliError::io(&loss_path, e))?;

    let start = Instant::now();
    let total = config.train.iterations;
    let every = config.train.checkpoint_every;
    let mut last = None;
    if trainer.iteration == 0 {
        save_checkpoint(&ck_path, &config, &model, &trainer)?;
    }
    while trainer.iteration < total {
        let it = trainer.iteration;
        match trainer.step(&mut model, objective) {
            Ok(loss) => {
                writeln!(losses, "{it},{}", format_f64(loss)).map_err(|e| CliError::io(&loss_path, e))?;
                last = Some(loss);
                if args.verbose && (it % 500 == 0 || it + 1 == total) {
                    eprintln!("iteration {it:>6}/{total}  loss {loss:.6}");
                }
                if trainer.iteration % every == 0 && trainer.iteration < total {
                    losses.flush().map_err(|e| CliError::io(&loss_path, e))?;
                    save_checkpoint(&ck_path, &config, &model, &trainer)?;
                }
            }
            Err(e) => {
                losses.flush().map_err(|e| CliError::io(&loss_path, e))?;
                let msg = format!("training stopped at iteration {it}: {e}");
                return Err(match e {
                    Error::NonFinite { .. } => CliError::NonFinite(format!(
                        "{msg}; last checkpoint kept at {}",
                        ck_path.display()
                    )),
                    _ => CliError::Invalid(msg),
                });
            }
        }
    }
    losses.flush().map_err(|e| CliError::io(&loss_path, e))?;
    save_checkpoint(&ck_path, &config, &model, &trainer)?;

    let metrics = match &target {
        Some(t) if config.train.eval_samples > 0 => Some(evaluate(&model, t, config.train.eval_samples, config.train.seed)?),
        _ => None,
    };
    let report = TrainReport {
        iterations: trainer.iteration,
        final_loss: last,
        wall_time_secs: start.elapsed().as_secs_f64(),
        metrics,
    };
    let mut json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Invalid(e.to_string()))?;
    json.push('\n');
    write_atomic(&out.join(REPORT_FILE), json.as_bytes())?;
    Ok(report)
}

fn evaluate(model: &FlowModel, target: &TargetDensity, n: usize, seed: u64) -> Result<EvalReport, CliError> {
    if n == 0 {
        return Err(CliError::Invalid("--n must be at least 1".into()));
    }
    if target.dim() != model.dim() || target.kinds() != model.output_kinds() {
        return Err(CliError::Invalid(format!(
            "target {} ({} coordinates) does not match the model output",
            target.name(),
            target.dim()
        )));
    }
    let m = eval_metrics(model, target, n, &mut Rng::new(seed))?;
    Ok(EvalReport {
        kl_estimate: m.kl_estimate,
        ess_fraction: m.ess_fraction,
        n,
        seed,
    })
}

fn open_output(out: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).map_err(|e| CliError::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn out_err(out: Option<&Path>, e: io::Error) -> CliError {
    match out {
        Some(p) => CliError::io(p, e),
        None => CliError::Io(format!("standard output: {e}")),
    }
}

/// Writes `n` model samples as CSV: `dim_0,...,dim_{D-1},log_q`.
pub fn sample(checkpoint: &Path, n: usize, seed: u64, out: Option<&Path>) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Invalid("--n must be at least 1".into()));
    }
    let (_, model, _) = load_checkpoint(checkpoint)?;
    let (x, log_q) = model.sample(n, &mut Rng::new(seed))?;
    let mut w = open_output(out)?;
    let d = x.cols();
    let header: Vec<String> = (0..d).map(|i| format!("dim_{i}")).chain(["log_q".to_string()]).collect();
    let mut write = || -> io::Result<()> {
        writeln!(w, "{}", header.join(","))?;
        for r in 0..x.rows() {
            for c in 0..d {
                write!(w, "{},", format_f64(x.get(r, c)))?;
            }
            writeln!(w, "{}", format_f64(log_q.get(r, 0)))?;
        }
        w.flush()
    };
    write().map_err(|e| out_err(out, e))
}

/// One grid axis: `points` equally spaced values from `min` to `max`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Axis {
    pub fn value(&self, i: usize) -> f64 {
        if self.points == 1 {
            self.min
        } else {
            self.min + (self.max - self.min) * i as f64 / (self.points - 1) as f64
        }
    }
}

/// Parses `min:max:points` per dimension, separated by commas.
pub fn parse_grid(spec: &str) -> Result<Vec<Axis>, CliError> {
    spec.split(',')
        .enumerate()
        .map(|(i, part)| {
            let bad = |why: &str| CliError::Invalid(format!("--grid axis {i} {part:?}: {why} (expected min:max:points)"));
            let fields: Vec<&str> = part.trim().split(':').collect();
            if fields.len() != 3 {
                return Err(bad("needs three fields"));
            }
            let min: f64 = fields[0].parse().map_err(|_| bad("min is not a number"))?;
            let max: f64 = fields[1].parse().map_err(|_| bad("max is not a number"))?;
            let points: usize = fields[2].parse().map_err(|_| bad("points is not a count"))?;
            if points == 0 || !min.is_finite() || !max.is_finite() || (points > 1 && !(max > min)) {
                return Err(bad("needs min < max and at least one point"));
            }
            Ok(Axis { min, max, points })
        })
        .collect()
}

/// Grid points with the first coordinate varying fastest.
pub fn grid_points(axes: &[Axis]) -> Matrix {
    let total: usize = axes.iter().map(|a| a.points).product();
    let d = axes.len();
    let mut m = Matrix::zeros(total, d);
    for r in 0..total {
        let mut rest = r;
        for (c, a) in axes.iter().enumerate() {
            m.set(r, c, a.value(rest % a.points));
            rest /= a.points;
        }
    }
    m
}

/// Renders a 2D density grid as a plain-text (P2) PGM image. The top image
/// row holds the largest second-coordinate value.
pub fn pgm(log_q: &[f64], width: usize, height: usize) -> String {
    let q: Vec<f64> = log_q.iter().map(|v| v.exp()).collect();
    let lo = q.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = format!("P2\n{width} {height}\n255\n");
    for row in 0..height {
        let j = height - 1 - row;
        let line: Vec<String> = (0..width)
            .map(|i| {
                let v = q[j * width + i];
                let level = if hi > lo { (255.0 * (v - lo) / (hi - lo)).round() } else { 0.0 };
                (level as u32).to_string()
            })
            .collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn density(checkpoint: &Path, grid: &str, out: Option<&Path>, pgm_out: Option<&Path>) -> Result<(), CliError> {
    let (_, model, _) = load_checkpoint(checkpoint)?;
    let axes = parse_grid(grid)?;
    if axes.len() != model.dim() {
        return Err(CliError::Invalid(format!(
            "--grid has {} axes but the model has dimension {}",
            axes.len(),
            model.dim()
        )));
    }
    if pgm_out.is_some() && axes.len() != 2 {
        return Err(CliError::Invalid("--pgm needs a two-dimensional model".into()));
    }
    let points = grid_points(&axes);
    let log_q = model.log_prob(&points)?;
    let mut w = open_output(out)?;
    let d = axes.len();
    let header: Vec<String> = (0..d).map(|i| format!("x{i}")).chain(["log_q".to_string()]).collect();
    let mut write = || -> io::Result<()> {
        writeln!(w, "{}", header.join(","))?;
        for r in 0..points.rows() {
            for c in 0..d {
                write!(w, "{},", format_f64(points.get(r, c)))?;
            }
            writeln!(w, "{}", format_f64(log_q.get(r, 0)))?;
        }
        w.flush()
    };
    write().map_err(|e| out_err(out, e))?;
    if let Some(p) = pgm_out {
        let image = pgm(log_q.data(), axes[0].points, axes[1].points);
        fs::write(p, image).map_err(|e| CliError::io(p, e))?;
    }
    Ok(())
}

/// Evaluates against `target` (a registry name; the checkpoint's own target
/// when omitted or when the names match) and returns the JSON line.
pub fn eval(checkpoint: &Path, target: Option<&str>, n: usize, seed: u64) -> Result<String, CliError> {
    let (ck, model, _) = load_checkpoint(checkpoint)?;
    let spec = match (target, &ck.config.target) {
        (Some(name), Some(own)) if own.name == name => own.clone(),
        (Some(name), _) => TargetSpec::named(name),
        (None, Some(own)) => own.clone(),
        (None, None) => return Err(CliError::Invalid("the checkpoint has no target; pass --target".into())),
    };
    let density = spec
        .build("target")
        .map_err(|e| CliError::Invalid(format!("unknown or invalid target: {e}")))?;
    let report = evaluate(&model, &density, n, seed)?;
    serde_json::to_string(&report).map_err(|e| CliError::Invalid(e.to_string()))
}
