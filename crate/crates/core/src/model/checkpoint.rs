use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Layout, Model, ModelConfig, Params};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Serialized model: configuration, tensor layout and parameter values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub config: ModelConfig,
    /// Free-form provenance, e.g. the experiment configuration.
    #[serde(default)]
    pub header: serde_json::Value,
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub const FORMAT: u32 = 1;

    pub fn new<T: Scalar>(model: &Model<T>, params: &Params<T>, header: serde_json::Value) -> Self {
        Self {
            format: Self::FORMAT,
            config: model.config().clone(),
            header,
            layout: params.layout.clone(),
            values: params.values.iter().map(|v| v.f64()).collect(),
        }
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let ck: Self = serde_json::from_reader(r)?;
        if ck.format != Self::FORMAT {
            return Err(Error::Schema(format!("unsupported checkpoint format {}", ck.format)));
        }
        Ok(ck)
    }

    /// Rebuilds the model and its parameters, checking the stored layout.
    pub fn restore<T: Scalar>(&self) -> Result<(Model<T>, Params<T>)> {
        let model = Model::new(self.config.clone())?;
        if &self.layout != model.layout() || self.values.len() != self.layout.total {
            return Err(Error::Schema("checkpoint layout does not match its configuration".into()));
        }
        let params = Params {
            values: self.values.iter().map(|&v| T::of(v)).collect(),
            layout: self.layout.clone(),
        };
        Ok((model, params))
    }
}
