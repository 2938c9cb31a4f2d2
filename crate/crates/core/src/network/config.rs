use serde::{Deserialize, Serialize};

use crate::basis::{AuxiliaryBasis, BasisTable};
use crate::equivariant::{IrrepsSpec, Parity};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionRenorm {
    Off,
    NodeNorm,
    LayerNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhysicalTerms {
    Off,
    Electrostatic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Swish,
}

/// Which pooling head the model ends in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Energy,
    Fmo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub irreps: IrrepsSpec,
    pub n_message_layers: usize,
    pub n_decode_layers: usize,
    /// Decode layers applied after each message layer.
    pub decode_schedule: Vec<usize>,
    pub n_conv_channels: usize,
    pub n_attention_heads: usize,
    pub mlp_depth: usize,
    /// Width of the hidden layers of the point-wise interaction MLPs.
    pub mlp_hidden: usize,
    /// Width of the hidden layers of the attention MLP.
    pub attention_hidden: usize,
    pub activation: Activation,
    pub n_radial_basis: usize,
    /// Largest radial-basis centre, bohr.
    pub rbf_cutoff: f64,
    pub evnorm_epsilon: f64,
    pub attention_renorm: AttentionRenorm,
    pub physical_terms: PhysicalTerms,
    /// Damping radius of the electrostatic correction, bohr.
    pub electrostatic_r0: f64,
    pub head: Head,
    /// Elements carrying an energy bias, in bias order.
    pub elements: Vec<u32>,
    /// Charge states carrying a shift, in shift order.
    pub charge_states: Vec<i32>,
    /// Primary-basis shells per degree `l` (the `n` range of matching).
    pub shells_per_degree: Vec<usize>,
    /// Auxiliary shells per degree `l` (channels of the reduced features).
    pub aux_per_degree: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let table = BasisTable::minimal();
        let aux = AuxiliaryBasis::for_table(&table);
        ModelConfig {
            hidden_dim: 256,
            irreps: IrrepsSpec::default_hidden(),
            n_message_layers: 4,
            n_decode_layers: 4,
            decode_schedule: vec![0, 0, 0, 4],
            n_conv_channels: 8,
            n_attention_heads: 8,
            mlp_depth: 2,
            mlp_hidden: 128,
            attention_hidden: 256,
            activation: Activation::Swish,
            n_radial_basis: 16,
            rbf_cutoff: 12.0,
            evnorm_epsilon: 0.1,
            attention_renorm: AttentionRenorm::Off,
            physical_terms: PhysicalTerms::Off,
            electrostatic_r0: 1.0,
            head: Head::Energy,
            elements: vec![1, 6, 7, 8],
            charge_states: vec![-1, 0, 1],
            shells_per_degree: (0..=table.max_l())
                .map(|l| table.max_shells_of_degree(l))
                .collect(),
            aux_per_degree: aux.irreps_spec().segments().iter().map(|s| s.n).collect(),
        }
    }
}

/// Splits `total` over `weights` proportionally, largest remainder first, never
/// dropping a nonzero weight to zero.
fn apportion(weights: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    let exact: Vec<f64> = weights
        .iter()
        .map(|&w| w as f64 * total as f64 / sum as f64)
        .collect();
    let mut out: Vec<usize> = weights
        .iter()
        .zip(&exact)
        .map(|(&w, &e)| {
            if w == 0 {
                0
            } else {
                (e.floor() as usize).max(1)
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut assigned: usize = out.iter().sum();
    let mut k = 0;
    while assigned < total {
        out[order[k % order.len()]] += 1;
        assigned += 1;
        k += 1;
    }
    while assigned > total {
        // remove from the largest counts first
        let i = (0..out.len())
            .max_by_key(|&i| (out[i], usize::MAX - i))
            .unwrap();
        out[i] -= 1;
        assigned -= 1;
    }
    out
}

impl ModelConfig {
    /// The default layout scaled to `hidden_dim` channels; MLP widths scale with it.
    pub fn scaled(hidden_dim: usize) -> Self {
        let base = Self::default();
        let segs = base.irreps.segments();
        let counts = apportion(&segs.iter().map(|s| s.n).collect::<Vec<_>>(), hidden_dim);
        let irreps = IrrepsSpec::new(segs.iter().zip(counts).map(|(s, n)| (s.l, s.parity, n)));
        let ratio = hidden_dim as f64 / base.hidden_dim as f64;
        ModelConfig {
            hidden_dim,
            irreps,
            mlp_hidden: ((base.mlp_hidden as f64 * ratio).round() as usize).max(1),
            attention_hidden: ((base.attention_hidden as f64 * ratio).round() as usize).max(1),
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.irreps.num_channels() != self.hidden_dim {
            return bad(format!(
                "irreps hold {} channels but hidden_dim is {}",
                self.irreps.num_channels(),
                self.hidden_dim
            ));
        }
        if self.decode_schedule.len() != self.n_message_layers {
            return bad(format!(
                "decode_schedule has {} entries for {} message layers",
                self.decode_schedule.len(),
                self.n_message_layers
            ));
        }
        if self.decode_schedule.iter().sum::<usize>() != self.n_decode_layers {
            return bad("decode_schedule must sum to n_decode_layers".into());
        }
        if self.irreps.lmax() > 4 {
            return bad("feature degrees above 4 are not supported".into());
        }
        for (l, &r) in self.shells_per_degree.iter().enumerate() {
            if r > 0 && self.irreps.count(l, Parity::Even) == 0 {
                return bad(format!(
                    "irreps need even channels of degree {l} for matching"
                ));
            }
        }
        if self.mlp_depth == 0 || self.n_conv_channels == 0 || self.n_attention_heads == 0 {
            return bad("mlp_depth, n_conv_channels and n_attention_heads must be positive".into());
        }
        if !(self.evnorm_epsilon > 0.0) {
            return bad("evnorm_epsilon must be positive".into());
        }
        if self.n_radial_basis < 2 || !(self.rbf_cutoff > 0.0) {
            return bad("need at least two radial basis functions and a positive cutoff".into());
        }
        if self.elements.is_empty() {
            return bad("elements must not be empty".into());
        }
        Ok(())
    }

    pub fn aux_spec(&self) -> IrrepsSpec {
        IrrepsSpec::from_counts(&self.aux_per_degree, &[])
    }

    /// Number of point-wise interaction blocks (message updates plus decode steps).
    pub fn num_interactions(&self) -> usize {
        self.n_message_layers + self.n_decode_layers
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_reproduce_the_hyperparameter_tables() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.hidden_dim, 256);
        assert_eq!(
            c.irreps,
            IrrepsSpec::from_counts(&[128, 48, 24, 12, 6], &[24, 8, 4, 2])
        );
        assert_eq!(
            (
                c.n_message_layers,
                c.n_decode_layers,
                c.n_conv_channels,
                c.n_attention_heads
            ),
            (4, 4, 8, 8)
        );
        assert_eq!(c.decode_schedule, vec![0, 0, 0, 4]);
        assert_eq!(
            (c.mlp_depth, c.n_radial_basis, c.evnorm_epsilon),
            (2, 16, 0.1)
        );
    }

    #[test]
    fn scaled_config_keeps_channel_total() {
        for h in [16, 64, 100, 256] {
            let c = ModelConfig::scaled(h);
            c.validate().unwrap();
            assert_eq!(c.irreps.num_channels(), h);
            assert!(c.irreps.count(1, Parity::Even) > 0);
        }
        assert_eq!(ModelConfig::scaled(256), ModelConfig::default());
    }

    #[test]
    fn schedule_must_match_decode_count() {
        let c = ModelConfig {
            decode_schedule: vec![1, 1, 1, 0],
            ..ModelConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let ok = ModelConfig {
            decode_schedule: vec![1, 1, 1, 1],
            ..ModelConfig::default()
        };
        ok.validate().unwrap();
    }
}
