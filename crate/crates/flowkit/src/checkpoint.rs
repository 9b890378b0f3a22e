//! JSON checkpoints holding everything needed to resume a run bit-exactly.
//!
//! Parameter values are written as decimal numbers with 17 significant
//! digits, which round-trip every finite `f64`. Loading and re-saving a
//! checkpoint reproduces the file byte for byte.

use std::fmt::Write as _;

use flowkit_core::flows::Layer;
use flowkit_core::numcore::{Matrix, Rng};
use flowkit_core::train::Trainer;
use flowkit_core::FlowModel;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::config::RunConfig;

pub const FORMAT: &str = "flowkit-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("checkpoint {field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid<T>(field: impl Into<String>, message: impl Into<String>) -> Result<T, CheckpointError> {
    Err(CheckpointError::Invalid {
        field: field.into(),
        message: message.into(),
    })
}

/// Formats a finite value with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A list of reals serialized at full precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Values(pub Vec<f64>);

impl Serialize for Values {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut text = String::with_capacity(self.0.len() * 24 + 2);
        text.push('[');
        for (i, v) in self.0.iter().enumerate() {
            if !v.is_finite() {
                return Err(serde::ser::Error::custom(format!("non-finite value {v}")));
            }
            if i > 0 {
                text.push(',');
            }
            let _ = write!(text, "{}", format_f64(*v));
        }
        text.push(']');
        let raw = RawValue::from_string(text).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Values {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Vec::<f64>::deserialize(d).map(Values)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub trainable: bool,
    pub values: Values,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentBlock {
    pub name: String,
    pub first: Values,
    pub second: Values,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerState {
    pub step: u64,
    pub moments: Vec<MomentBlock>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: u64,
    pub counters: [u64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActNormFlag {
    pub layer: usize,
    pub initialized: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub iteration: usize,
    pub rng: RngState,
    pub actnorm: Vec<ActNormFlag>,
    pub params: Vec<ParamBlock>,
    pub optimizer: OptimizerState,
}

impl Checkpoint {
    pub fn capture(config: &RunConfig, model: &FlowModel, trainer: &Trainer) -> Self {
        let store = &model.params;
        let params = store
            .ids()
            .map(|id| {
                let m = store.get(id);
                ParamBlock {
                    name: store.name(id).to_string(),
                    rows: m.rows(),
                    cols: m.cols(),
                    trainable: store.is_trainable(id),
                    values: Values(m.data().to_vec()),
                }
            })
            .collect();
        let moments = store
            .ids()
            .filter_map(|id| {
                trainer.optimizer.moments(id).map(|(m, v)| MomentBlock {
                    name: store.name(id).to_string(),
                    first: Values(m.data().to_vec()),
                    second: Values(v.data().to_vec()),
                })
            })
            .collect();
        let actnorm = model
            .layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l {
                Layer::ActNorm(a) => Some(ActNormFlag {
                    layer: i,
                    initialized: a.is_initialized(),
                }),
                _ => None,
            })
            .collect();
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            config: config.clone(),
            iteration: trainer.iteration,
            rng: RngState {
                seed: trainer.rng.seed(),
                counters: trainer.rng.counters(),
            },
            actnorm,
            params,
            optimizer: OptimizerState {
                step: trainer.optimizer.steps(),
                moments,
            },
        }
    }

    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != FORMAT {
            return invalid("format", format!("expected {FORMAT:?}, found {:?}", ck.format));
        }
        if ck.version != VERSION {
            return invalid("version", format!("unsupported version {}", ck.version));
        }
        Ok(ck)
    }

    /// Rebuilds the model and the resumable training state.
    pub fn restore(&self) -> Result<(FlowModel, Trainer), CheckpointError> {
        let mut model = self.config.build_model().map_err(|e| CheckpointError::Invalid {
            field: format!("config.{}", e.path),
            message: e.message,
        })?;
        let store = &mut model.params;
        if self.params.len() != store.len() {
            return invalid(
                "params",
                format!("{} blocks but the configured model has {} parameters", self.params.len(), store.len()),
            );
        }
        for (i, block) in self.params.iter().enumerate() {
            let field = format!("params[{i}]");
            let Some(id) = store.id(&block.name) else {
                return invalid(field, format!("unknown parameter {:?}", block.name));
            };
            let (r, c) = store.get(id).shape();
            if (block.rows, block.cols) != (r, c) || block.values.0.len() != r * c {
                return invalid(
                    field,
                    format!(
                        "{} is {}x{} with {} values; expected {r}x{c}",
                        block.name,
                        block.rows,
                        block.cols,
                        block.values.0.len()
                    ),
                );
            }
            store.set(id, Matrix::from_vec(r, c, block.values.0.clone()).expect("shape checked"));
            store.set_trainable(id, block.trainable);
        }
        for (i, flag) in self.actnorm.iter().enumerate() {
            match model.layers.get_mut(flag.layer) {
                Some(Layer::ActNorm(a)) => a.set_initialized(flag.initialized),
                _ => return invalid(format!("actnorm[{i}].layer"), format!("layer {} is not an actnorm layer", flag.layer)),
            }
        }
        let store = &model.params;
        let mut moments: Vec<Option<(Matrix, Matrix)>> = vec![None; store.len()];
        for (i, block) in self.optimizer.moments.iter().enumerate() {
            let field = format!("optimizer.moments[{i}]");
            let Some(id) = store.id(&block.name) else {
                return invalid(field, format!("unknown parameter {:?}", block.name));
            };
            let (r, c) = store.get(id).shape();
            if block.first.0.len() != r * c || block.second.0.len() != r * c {
                return invalid(field, format!("moment sizes do not match {}", block.name));
            }
            moments[id.index()] = Some((
                Matrix::from_vec(r, c, block.first.0.clone()).expect("size checked"),
                Matrix::from_vec(r, c, block.second.0.clone()).expect("size checked"),
            ));
        }
        let mut trainer = Trainer::new(self.config.train_config()).map_err(|e| CheckpointError::Invalid {
            field: "config.train".into(),
            message: e.to_string(),
        })?;
        trainer.optimizer.restore(self.optimizer.step, moments);
        trainer.rng = Rng::from_state(self.rng.seed, self.rng.counters);
        trainer.iteration = self.iteration;
        Ok((model, trainer))
    }
}
