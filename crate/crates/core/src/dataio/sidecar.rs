//! Low-level label sidecar written by featurization: one CSV row per record.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scf::LowLevelResult;
use crate::training::LowLevelValues;
use crate::units::HARTREE_TO_EV;

pub const SIDECAR_FILE: &str = "lowlevel.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarRow {
    pub id: String,
    /// `ok` or the failure class (`scf_not_converged`, `error`).
    pub status: String,
    pub iterations: usize,
    pub energy_ev: Option<f64>,
    pub fmo_alpha_homo_ev: Option<f64>,
    pub fmo_alpha_lumo_ev: Option<f64>,
    pub fmo_beta_homo_ev: Option<f64>,
    pub fmo_beta_lumo_ev: Option<f64>,
    pub message: String,
}

impl SidecarRow {
    pub fn ok(id: &str, r: &LowLevelResult) -> Self {
        let [a, b, c, d] = r.homo_lumo().map(|v| v.map(|x| x * HARTREE_TO_EV));
        SidecarRow {
            id: id.to_string(),
            status: "ok".into(),
            iterations: r.iterations,
            energy_ev: Some(r.energy * HARTREE_TO_EV),
            fmo_alpha_homo_ev: a,
            fmo_alpha_lumo_ev: b,
            fmo_beta_homo_ev: c,
            fmo_beta_lumo_ev: d,
            message: String::new(),
        }
    }

    pub fn failed(id: &str, err: &Error) -> Self {
        let (status, iterations) = match err {
            Error::ScfNotConverged { iterations, .. } => ("scf_not_converged", *iterations),
            _ => ("error", 0),
        };
        SidecarRow {
            id: id.to_string(),
            status: status.into(),
            iterations,
            energy_ev: None,
            fmo_alpha_homo_ev: None,
            fmo_alpha_lumo_ev: None,
            fmo_beta_homo_ev: None,
            fmo_beta_lumo_ev: None,
            message: err.to_string(),
        }
    }

    /// Label inputs of a converged record.
    pub fn values(&self) -> Option<LowLevelValues> {
        (self.status == "ok").then_some(())?;
        Some(LowLevelValues {
            converged: true,
            energy_ev: self.energy_ev?,
            fmo_ev: [
                self.fmo_alpha_homo_ev,
                self.fmo_alpha_lumo_ev,
                self.fmo_beta_homo_ev,
                self.fmo_beta_lumo_ev,
            ],
        })
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

pub fn write_sidecar(path: &Path, rows: &[SidecarRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: &Path) -> Result<Vec<SidecarRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}
