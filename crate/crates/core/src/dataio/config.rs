//! Run configuration file: flat TOML sections named after the config structs.
//!
//! ```toml
//! [model]
//! hidden_dim = 64
//! attention_renorm = "node_norm"
//!
//! [train]
//! max_lr = 5e-4
//! batch_size = 8
//! ```
//!
//! `[model]` starts from the default layout scaled to `hidden_dim` and then
//! applies the remaining keys; `[train]` keys are the `TrainConfig` fields.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{AttentionRenorm, Head, ModelConfig, PhysicalTerms};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden_dim: Option<usize>,
    pub n_message_layers: Option<usize>,
    pub n_decode_layers: Option<usize>,
    pub decode_schedule: Option<Vec<usize>>,
    pub n_conv_channels: Option<usize>,
    pub n_attention_heads: Option<usize>,
    pub mlp_depth: Option<usize>,
    pub mlp_hidden: Option<usize>,
    pub attention_hidden: Option<usize>,
    pub n_radial_basis: Option<usize>,
    pub rbf_cutoff: Option<f64>,
    pub evnorm_epsilon: Option<f64>,
    pub attention_renorm: Option<AttentionRenorm>,
    pub physical_terms: Option<PhysicalTerms>,
    pub electrostatic_r0: Option<f64>,
    pub head: Option<Head>,
    pub elements: Option<Vec<u32>>,
    pub charge_states: Option<Vec<i32>>,
}

impl ModelSection {
    pub fn build(&self) -> Result<ModelConfig> {
        let mut c = match self.hidden_dim {
            Some(h) => ModelConfig::scaled(h),
            None => ModelConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {
                $(if let Some(v) = &self.$f {
                    c.$f = v.clone();
                })*
            };
        }
        set!(
            n_message_layers,
            n_decode_layers,
            decode_schedule,
            n_conv_channels,
            n_attention_heads,
            mlp_depth,
            mlp_hidden,
            attention_hidden,
            n_radial_basis,
            rbf_cutoff,
            evnorm_epsilon,
            attention_renorm,
            physical_terms,
            electrostatic_r0,
            head,
            elements,
            charge_states
        );
        if self.n_message_layers.is_some() && self.decode_schedule.is_none() {
            // keep all decoding after the last message layer
            let mut s = vec![0; c.n_message_layers];
            if let Some(last) = s.last_mut() {
                *last = c.n_decode_layers;
            }
            c.decode_schedule = s;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.train.validate()?;
        c.model.build()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
