//! Run configuration: TOML schema, validation and model construction.
//!
//! A run config names the target, the base distribution, the layer stack
//! (listed in forward order, base → data), the training block and an output
//! directory. Validation errors carry the field path of the offending entry,
//! e.g. `layers[3].mask`.

use std::fmt;
use std::path::{Path, PathBuf};

use flowkit_core::flows::{
    ActNorm, AffineCoupling, Layer, Maf, Metropolis, Permute, Planar, Radial, RqCoupling,
};
use flowkit_core::numcore::{Matrix, ParamStore, Rng};
use flowkit_core::train::{LossKind, TrainConfig};
use flowkit_core::{BaseDist, CoordKind, FlowModel, TargetDensity};
use serde::{Deserialize, Serialize};

/// A validation failure at `path`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl std::error::Error for FieldError {}

fn fail<T>(path: impl Into<String>, message: impl Into<String>) -> Result<T, FieldError> {
    Err(FieldError {
        path: path.into(),
        message: message.into(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Gaussian,
    Circular,
}

impl From<Kind> for CoordKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Gaussian => CoordKind::Gaussian,
            Kind::Circular => CoordKind::Circular,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub name: String,
    /// Cylinder: slope of the conditional mean angle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    /// Cylinder: von Mises concentration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Gaussian: per-coordinate location.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loc: Option<Vec<f64>>,
    /// Gaussian: per-coordinate scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Vec<f64>>,
    /// Gaussian: log of the total mass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_mass: Option<f64>,
}

impl TargetSpec {
    pub fn named(name: &str) -> Self {
        TargetSpec {
            name: name.to_string(),
            slope: None,
            kappa: None,
            loc: None,
            scale: None,
            log_mass: None,
        }
    }

    /// Resolves the spec to a density; `path` prefixes error locations.
    pub fn build(&self, path: &str) -> Result<TargetDensity, FieldError> {
        let extra = |field: &str| fail(format!("{path}.{field}"), format!("not a parameter of target {:?}", self.name));
        let target = match self.name.as_str() {
            "cylinder" => {
                if self.loc.is_some() {
                    return extra("loc");
                }
                if self.scale.is_some() {
                    return extra("scale");
                }
                if self.log_mass.is_some() {
                    return extra("log_mass");
                }
                TargetDensity::Cylinder {
                    slope: self.slope.unwrap_or(3.0),
                    kappa: self.kappa.unwrap_or(1.0),
                }
            }
            "gaussian" => {
                if self.slope.is_some() {
                    return extra("slope");
                }
                if self.kappa.is_some() {
                    return extra("kappa");
                }
                let loc = self.loc.clone().unwrap_or_else(|| vec![0.0; 2]);
                let scale = self.scale.clone().unwrap_or_else(|| vec![1.0; loc.len()]);
                if scale.len() != loc.len() {
                    return fail(
                        format!("{path}.scale"),
                        format!("has {} entries but loc has {}", scale.len(), loc.len()),
                    );
                }
                TargetDensity::Gaussian {
                    loc,
                    scale,
                    log_mass: self.log_mass.unwrap_or(0.0),
                }
            }
            name => {
                let target = TargetDensity::from_name(name).map_err(|e| FieldError {
                    path: format!("{path}.name"),
                    message: e.to_string(),
                })?;
                for (field, set) in [
                    ("slope", self.slope.is_some()),
                    ("kappa", self.kappa.is_some()),
                    ("loc", self.loc.is_some()),
                    ("scale", self.scale.is_some()),
                    ("log_mass", self.log_mass.is_some()),
                ] {
                    if set {
                        return extra(field);
                    }
                }
                target
            }
        };
        target.validate().map_err(|e| FieldError {
            path: path.to_string(),
            message: e.to_string(),
        })?;
        Ok(target)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaseSpec {
    /// Standard normal on gaussian coordinates, uniform on circular ones.
    UniformGaussianMix { kinds: Vec<Kind> },
    /// Diagonal Gaussian, optionally with trainable location and scale.
    DiagGaussian {
        dim: usize,
        #[serde(default)]
        trainable: bool,
    },
}

impl BaseSpec {
    pub fn kinds(&self) -> Vec<CoordKind> {
        match self {
            BaseSpec::UniformGaussianMix { kinds } => kinds.iter().map(|&k| k.into()).collect(),
            BaseSpec::DiagGaussian { dim, .. } => vec![CoordKind::Gaussian; *dim],
        }
    }
}

/// One layer; `mask` entries are `true` for coordinates that pass through
/// unchanged and condition the transform of the others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Actnorm,
    Permute {
        perm: Vec<usize>,
    },
    AffineCoupling {
        mask: Vec<bool>,
        hidden: Vec<usize>,
    },
    Maf {
        hidden: Vec<usize>,
    },
    RqCoupling {
        mask: Vec<bool>,
        bins: usize,
        bound: f64,
        hidden: Vec<usize>,
    },
    Planar,
    Radial,
    Metropolis {
        lambda: f64,
        step: f64,
    },
}

impl LayerSpec {
    fn type_name(&self) -> &'static str {
        match self {
            LayerSpec::Actnorm => "actnorm",
            LayerSpec::Permute { .. } => "permute",
            LayerSpec::AffineCoupling { .. } => "affine_coupling",
            LayerSpec::Maf { .. } => "maf",
            LayerSpec::RqCoupling { .. } => "rq_coupling",
            LayerSpec::Planar => "planar",
            LayerSpec::Radial => "radial",
            LayerSpec::Metropolis { .. } => "metropolis",
        }
    }

    fn is_invertible(&self) -> bool {
        !matches!(self, LayerSpec::Planar | LayerSpec::Radial | LayerSpec::Metropolis { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    ReverseKl,
    ForwardKl,
}

fn default_eval_samples() -> usize {
    100_000
}

fn default_checkpoint_every() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub loss: Loss,
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<f64>,
    pub seed: u64,
    /// Model samples for the metrics in `report.json`; 0 skips them.
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    /// Iterations between intermediate checkpoints.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    /// CSV data set for forward-KL training, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSpec>,
    pub base: BaseSpec,
    pub layers: Vec<LayerSpec>,
    pub train: TrainSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
}

/// Why a config could not be used.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Syntax { path: String, message: String },
    #[error("{0}")]
    Field(#[from] FieldError),
}

fn check_hidden(path: &str, hidden: &[usize]) -> Result<(), FieldError> {
    if hidden.iter().any(|&h| h == 0) {
        return fail(format!("{path}.hidden"), "hidden layer widths must be positive");
    }
    Ok(())
}

fn check_mask(path: &str, mask: &[bool], dim: usize) -> Result<(), FieldError> {
    if mask.len() != dim {
        return fail(
            format!("{path}.mask"),
            format!("has {} entries but the flow has dimension {dim}", mask.len()),
        );
    }
    if mask.iter().all(|&m| m) || mask.iter().all(|&m| !m) {
        return fail(
            format!("{path}.mask"),
            "needs at least one pass-through (true) and one transformed (false) coordinate",
        );
    }
    Ok(())
}

fn require_gaussian(path: &str, kind: &str, kinds: &[CoordKind]) -> Result<(), FieldError> {
    if let Some(i) = kinds.iter().position(|&k| k == CoordKind::Circular) {
        return fail(
            format!("{path}.type"),
            format!("{kind} cannot act on circular coordinate {i}"),
        );
    }
    Ok(())
}

impl RunConfig {
    /// Parses TOML text; syntax errors report line and column.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let path = match e.span() {
                Some(span) => {
                    let line = text[..span.start].matches('\n').count() + 1;
                    let col = span.start - text[..span.start].rfind('\n').map_or(0, |p| p + 1) + 1;
                    format!("line {line}, column {col}")
                }
                None => "config".to_string(),
            };
            ConfigError::Syntax {
                path,
                message: e.message().to_string(),
            }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    pub fn dim(&self) -> usize {
        self.base.kinds().len()
    }

    pub fn target(&self) -> Result<Option<TargetDensity>, FieldError> {
        self.target.as_ref().map(|t| t.build("target")).transpose()
    }

    /// Checks every cross-field constraint; the first violation wins.
    pub fn validate(&self) -> Result<(), FieldError> {
        let target = self.target()?;
        let kinds = self.base.kinds();
        let dim = kinds.len();
        if dim == 0 {
            return fail("base", "needs at least one coordinate");
        }
        let mut cur = kinds;
        for (i, layer) in self.layers.iter().enumerate() {
            let path = format!("layers[{i}]");
            match layer {
                LayerSpec::Actnorm => require_gaussian(&path, "actnorm", &cur)?,
                LayerSpec::Permute { perm } => {
                    let mut seen = vec![false; dim];
                    if perm.len() != dim {
                        return fail(
                            format!("{path}.perm"),
                            format!("has {} entries but the flow has dimension {dim}", perm.len()),
                        );
                    }
                    for &p in perm {
                        if p >= dim || seen[p] {
                            return fail(format!("{path}.perm"), format!("{perm:?} is not a permutation of 0..{dim}"));
                        }
                        seen[p] = true;
                    }
                    cur = perm.iter().map(|&p| cur[p]).collect();
                }
                LayerSpec::AffineCoupling { mask, hidden } => {
                    check_mask(&path, mask, dim)?;
                    check_hidden(&path, hidden)?;
                    if let Some(c) = (0..dim).find(|&c| !mask[c] && cur[c] == CoordKind::Circular) {
                        return fail(
                            format!("{path}.mask"),
                            format!("affine coupling would transform circular coordinate {c}; use rq_coupling"),
                        );
                    }
                }
                LayerSpec::Maf { hidden } => {
                    require_gaussian(&path, "maf", &cur)?;
                    check_hidden(&path, hidden)?;
                }
                LayerSpec::RqCoupling {
                    mask,
                    bins,
                    bound,
                    hidden,
                } => {
                    check_mask(&path, mask, dim)?;
                    check_hidden(&path, hidden)?;
                    if *bins == 0 {
                        return fail(format!("{path}.bins"), "must be at least 1");
                    }
                    if !(*bound > 0.0) || !bound.is_finite() {
                        return fail(format!("{path}.bound"), format!("must be positive and finite, got {bound}"));
                    }
                }
                LayerSpec::Planar => require_gaussian(&path, "planar", &cur)?,
                LayerSpec::Radial => require_gaussian(&path, "radial", &cur)?,
                LayerSpec::Metropolis { lambda, step } => {
                    if !(0.0..=1.0).contains(lambda) {
                        return fail(format!("{path}.lambda"), format!("must lie in [0, 1], got {lambda}"));
                    }
                    if !(*step > 0.0) || !step.is_finite() {
                        return fail(format!("{path}.step"), format!("must be positive, got {step}"));
                    }
                    if target.is_none() {
                        return fail(format!("{path}.type"), "metropolis layers need a target");
                    }
                }
            }
        }
        if let Some(t) = &target {
            if t.dim() != dim {
                return fail(
                    "target",
                    format!("{} has dimension {} but the base has {dim}", t.name(), t.dim()),
                );
            }
            let want = t.kinds();
            if let Some(c) = (0..dim).find(|&c| want[c] != cur[c]) {
                return fail(
                    "layers",
                    format!(
                        "flow output coordinate {c} is {:?} but target {} expects {:?}",
                        cur[c],
                        t.name(),
                        want[c]
                    ),
                );
            }
        }
        let tr = &self.train;
        if tr.batch < 1 {
            return fail("train.batch", "must be at least 1");
        }
        if !(tr.lr > 0.0) || !tr.lr.is_finite() {
            return fail("train.lr", format!("must be positive, got {}", tr.lr));
        }
        if let Some(c) = tr.clip {
            if !(c > 0.0) {
                return fail("train.clip", format!("must be positive, got {c}"));
            }
        }
        if tr.checkpoint_every < 1 {
            return fail("train.checkpoint_every", "must be at least 1");
        }
        match tr.loss {
            Loss::ReverseKl => {
                if target.is_none() {
                    return fail("train.loss", "reverse_kl needs a [target] section");
                }
                if tr.data.is_some() {
                    return fail("train.data", "only used with forward_kl");
                }
            }
            Loss::ForwardKl => {
                if tr.data.is_none() {
                    return fail("train.data", "forward_kl needs a data file");
                }
                if let Some(i) = self.layers.iter().position(|l| !l.is_invertible()) {
                    return fail(
                        format!("layers[{i}].type"),
                        format!("{} has no inverse; forward_kl needs an invertible flow", self.layers[i].type_name()),
                    );
                }
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: match self.train.loss {
                Loss::ReverseKl => LossKind::ReverseKl,
                Loss::ForwardKl => LossKind::ForwardKl,
            },
            iterations: self.train.iterations,
            batch: self.train.batch,
            lr: self.train.lr,
            clip: self.train.clip,
            seed: self.train.seed,
            eval_samples: self.train.eval_samples,
        }
    }

    /// Builds a freshly initialized model. Parameter initialization draws
    /// from the init substream of the training seed.
    pub fn build_model(&self) -> Result<FlowModel, FieldError> {
        self.validate()?;
        let mut store = ParamStore::new();
        let mut rng = Rng::new(self.train.seed);
        let base = match &self.base {
            BaseSpec::UniformGaussianMix { .. } => BaseDist::uniform_gaussian_mix(self.base.kinds()),
            BaseSpec::DiagGaussian { dim, trainable } => BaseDist::diag_gaussian(&mut store, "base", *dim, *trainable),
        };
        let dim = self.dim();
        let mut cur = self.base.kinds();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, spec) in self.layers.iter().enumerate() {
            let prefix = format!("layers.{i}");
            let path = format!("layers[{i}]");
            let lift = |e: flowkit_core::Error| FieldError {
                path: path.clone(),
                message: e.to_string(),
            };
            let layer = match spec {
                LayerSpec::Actnorm => Layer::ActNorm(ActNorm::new(&mut store, &prefix, dim)),
                LayerSpec::Permute { perm } => Layer::Permute(Permute::new(perm.clone()).map_err(lift)?),
                LayerSpec::AffineCoupling { mask, hidden } => Layer::AffineCoupling(
                    AffineCoupling::new(&mut store, &prefix, mask.clone(), cur.clone(), hidden, &mut rng).map_err(lift)?,
                ),
                LayerSpec::Maf { hidden } => Layer::Maf(Maf::new(&mut store, &prefix, dim, hidden, &mut rng).map_err(lift)?),
                LayerSpec::RqCoupling {
                    mask,
                    bins,
                    bound,
                    hidden,
                } => Layer::RqCoupling(
                    RqCoupling::new(&mut store, &prefix, mask.clone(), cur.clone(), *bins, *bound, hidden, &mut rng)
                        .map_err(lift)?,
                ),
                LayerSpec::Planar => Layer::Planar(Planar::new(&mut store, &prefix, dim, &mut rng).map_err(lift)?),
                LayerSpec::Radial => Layer::Radial(Radial::new(&mut store, &prefix, dim, &mut rng).map_err(lift)?),
                LayerSpec::Metropolis { lambda, step } => {
                    Layer::Metropolis(Metropolis::new(*lambda, *step, cur.clone()).map_err(lift)?)
                }
            };
            cur = layer.map_kinds(&cur);
            layers.push(layer);
        }
        let mut model = FlowModel::new(base, layers, store);
        if let Some(t) = self.target()? {
            model = model.with_target(t);
        }
        Ok(model)
    }

    /// Reads the forward-KL data set, resolving its path against `config_dir`.
    pub fn load_data(&self, config_dir: &Path) -> Result<Option<Matrix>, DataError> {
        let Some(rel) = &self.train.data else {
            return Ok(None);
        };
        let path = config_dir.join(rel);
        let m = read_matrix_csv(&path)?;
        if m.cols() != self.dim() {
            return Err(DataError::Invalid(format!(
                "{}: {} columns but the flow has dimension {}",
                path.display(),
                m.cols(),
                self.dim()
            )));
        }
        Ok(Some(m))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

/// Reads a numeric CSV with a header row into a matrix.
pub fn read_matrix_csv(path: &Path) -> Result<Matrix, DataError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => DataError::Io(io),
        other => DataError::Invalid(format!("{}: {other:?}", path.display())),
    })?;
    let mut values = Vec::new();
    let mut cols = 0;
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Invalid(format!("{}: {e}", path.display())))?;
        if r == 0 {
            cols = record.len();
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                DataError::Invalid(format!("{}: row {}, column {}: {field:?} is not a number", path.display(), r + 2, c + 1))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(DataError::Invalid(format!("{}: no data rows", path.display())));
    }
    Matrix::from_vec(rows, cols, values).map_err(|e| DataError::Invalid(format!("{}: {e}", path.display())))
}
