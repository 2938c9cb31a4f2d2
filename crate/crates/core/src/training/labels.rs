//! Delta labels and the linear-regression initialization of the energy biases.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scf::LowLevelResult;
use crate::system::Species;
use crate::units::HARTREE_TO_EV;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    TotalEnergy,
    FmoAlphaHomo,
    FmoAlphaLumo,
    FmoBetaHomo,
    FmoBetaLumo,
}

impl Target {
    /// Key of this target in extended-XYZ comment lines.
    pub fn key(self) -> &'static str {
        match self {
            Target::TotalEnergy => "energy_ev",
            Target::FmoAlphaHomo => "fmo_alpha_homo_ev",
            Target::FmoAlphaLumo => "fmo_alpha_lumo_ev",
            Target::FmoBetaHomo => "fmo_beta_homo_ev",
            Target::FmoBetaLumo => "fmo_beta_lumo_ev",
        }
    }

    /// The low-level counterpart in eV, if the SCF produced it.
    pub fn low_level(self, r: &LowLevelValues) -> Option<f64> {
        match self {
            Target::TotalEnergy => Some(r.energy_ev),
            Target::FmoAlphaHomo => r.fmo_ev[0],
            Target::FmoAlphaLumo => r.fmo_ev[1],
            Target::FmoBetaHomo => r.fmo_ev[2],
            Target::FmoBetaLumo => r.fmo_ev[3],
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.key() == key)
    }

    pub const ALL: [Target; 5] = [
        Target::TotalEnergy,
        Target::FmoAlphaHomo,
        Target::FmoAlphaLumo,
        Target::FmoBetaHomo,
        Target::FmoBetaLumo,
    ];

    pub fn is_intensive(self) -> bool {
        self != Target::TotalEnergy
    }
}

/// The low-level quantities labels are built from, in eV. This is what the
/// featurization sidecar stores per record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowLevelValues {
    pub converged: bool,
    pub energy_ev: f64,
    /// Alpha HOMO, alpha LUMO, beta HOMO, beta LUMO.
    pub fmo_ev: [Option<f64>; 4],
}

impl From<&LowLevelResult> for LowLevelValues {
    fn from(r: &LowLevelResult) -> Self {
        LowLevelValues {
            converged: r.converged,
            energy_ev: r.energy * HARTREE_TO_EV,
            fmo_ev: r.homo_lumo().map(|v| v.map(|x| x * HARTREE_TO_EV)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Delta,
    Direct,
}

/// Target, low-level baseline and the learned difference, all in eV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaLabel {
    pub y_target: f64,
    pub y_low: f64,
    pub delta: f64,
    pub species: Species,
}

impl DeltaLabel {
    pub fn new(y_target: f64, y_low: f64, species: Species) -> Self {
        DeltaLabel {
            y_target,
            y_low,
            delta: y_target - y_low,
            species,
        }
    }
}

/// One label per record. `low[i]` is the SCF outcome of record `i`; it may be
/// absent in direct mode.
pub fn compute_delta_labels(
    targets: &[(String, f64, Species)],
    low: &[Option<LowLevelValues>],
    target: Target,
    mode: Mode,
) -> Result<Vec<DeltaLabel>> {
    targets
        .iter()
        .zip(low)
        .map(|((id, y, species), r)| match mode {
            Mode::Direct => Ok(DeltaLabel::new(*y, 0.0, *species)),
            Mode::Delta => {
                let y_low = r
                    .as_ref()
                    .filter(|r| r.converged)
                    .and_then(|r| target.low_level(r))
                    .ok_or_else(|| Error::MissingLowLevel(id.clone()))?;
                Ok(DeltaLabel::new(*y, y_low, *species))
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasFit {
    /// One bias per entry of the element list.
    pub biases: Vec<f64>,
    /// The count matrix was rank deficient and a ridge term was added.
    pub singular: bool,
}

pub const RIDGE: f64 = 1e-8;

/// Least squares `label ~ sum_Z count_Z * b_Z` over the given molecules.
pub fn init_element_biases(molecules: &[(&[u32], f64)], elements: &[u32]) -> Result<BiasFit> {
    if molecules.len() < elements.len() {
        return Err(Error::InsufficientData(format!(
            "{} samples for {} element biases",
            molecules.len(),
            elements.len()
        )));
    }
    let a = DMatrix::from_fn(molecules.len(), elements.len(), |i, j| {
        molecules[i].0.iter().filter(|&&z| z == elements[j]).count() as f64
    });
    let y = DVector::from_iterator(molecules.len(), molecules.iter().map(|m| m.1));
    let ata = a.transpose() * &a;
    let aty = a.transpose() * y;
    let sv = ata.clone().svd(false, false).singular_values;
    let max = sv.max();
    let singular = max == 0.0 || sv.min() <= max * 1e-12;
    let system = if singular {
        log::warn!("element-count design matrix is rank deficient, using ridge {RIDGE:e}");
        ata + DMatrix::identity(elements.len(), elements.len()) * RIDGE
    } else {
        ata
    };
    let b = system
        .cholesky()
        .ok_or_else(|| Error::InsufficientData("bias normal equations are not solvable".into()))?
        .solve(&aty);
    Ok(BiasFit {
        biases: b.iter().copied().collect(),
        singular,
    })
}

/// Mean residual `label - sum_A b_{Z_A}` per charge state present.
pub fn init_charge_shifts(
    molecules: &[(&[u32], i32, f64)],
    elements: &[u32],
    biases: &[f64],
) -> BTreeMap<i32, f64> {
    let mut acc: BTreeMap<i32, (f64, usize)> = BTreeMap::new();
    for (zs, q, y) in molecules {
        let base: f64 = zs
            .iter()
            .map(|z| {
                elements
                    .iter()
                    .position(|e| e == z)
                    .map_or(0.0, |i| biases[i])
            })
            .sum();
        let e = acc.entry(*q).or_default();
        e.0 += y - base;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(q, (s, n))| (q, s / n as f64))
        .collect()
}
