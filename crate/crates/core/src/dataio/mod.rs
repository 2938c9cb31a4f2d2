//! File formats at the dataset boundary and the glue that turns a manifest
//! plus feature files into training samples.

pub mod config;
pub mod manifest;
pub mod qmmfile;
pub mod sidecar;
pub mod xyz;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::basis::AuxiliaryBasis;
use crate::error::{Error, Result};
use crate::network::{ModelConfig, NetworkInput};
use crate::scf::QmmSet;
use crate::toy::ToyRecord;
use crate::training::{compute_delta_labels, Mode, Sample, Target};

pub use config::{ModelSection, RunConfig};
pub use manifest::{split_dataset, DatasetManifest, ManifestRecord, Split};
pub use qmmfile::{decode_qmm, encode_qmm, read_qmm, write_qmm};
pub use sidecar::{read_sidecar, write_sidecar, SidecarRow, SIDECAR_FILE};
pub use xyz::{parse_xyz, write_xyz, XyzRecord, LABEL_KEYS};

pub const MANIFEST_FILE: &str = "manifest.json";

/// `.xyz` files directly inside `dir`, sorted by name.
pub fn xyz_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "xyz"))
        .collect();
    out.sort();
    Ok(out)
}

/// Record id of frame `frame` of `path`: the `id` key if present, else the
/// file stem, suffixed with the frame index for multi-frame files.
pub fn record_id(path: &Path, frame: usize, frames: usize, rec: &XyzRecord) -> String {
    if let Some(id) = rec.extra.get("id") {
        return id.clone();
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if frames > 1 {
        format!("{stem}_{frame}")
    } else {
        stem
    }
}

pub fn manifest_record(
    id: String,
    geometry: String,
    frame: usize,
    rec: &XyzRecord,
) -> ManifestRecord {
    ManifestRecord {
        id,
        geometry,
        frame,
        charge: rec.system.charge,
        multiplicity: rec.system.multiplicity,
        field: rec.system.field,
        labels: rec.labels.clone(),
        species: rec
            .extra
            .get("species")
            .and_then(|s| s.parse().ok())
            .unwrap_or_else(|| rec.system.species()),
        split: None,
        parent: rec.extra.get("parent").cloned(),
    }
}

/// Feature file of record `id` inside a features directory.
pub fn feature_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.qmm"))
}

/// Writes toy records as one extended-XYZ file each, labelled with the
/// synthetic high-level energy.
pub fn write_toy_dataset(dir: &Path, records: &[ToyRecord]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let width = records.len().max(1).to_string().len();
    for (i, r) in records.iter().enumerate() {
        let rec = XyzRecord {
            system: r.system.clone(),
            labels: BTreeMap::from([("energy_ev".to_string(), r.high_energy_ev)]),
            extra: BTreeMap::new(),
        };
        let path = dir.join(format!("toy{i:0width$}.xyz"));
        fs::write(&path, write_xyz(&rec)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// A manifest record paired with its loaded features.
pub struct LoadedRecord {
    pub record: ManifestRecord,
    pub qmm: QmmSet,
}

/// Loads the feature files of the records in `split` (all records if `None`).
pub fn load_features(
    manifest: &DatasetManifest,
    features: &Path,
    split: Option<Split>,
) -> Result<Vec<LoadedRecord>> {
    manifest
        .records
        .iter()
        .filter(|r| split.is_none() || r.split == split)
        .map(|r| {
            Ok(LoadedRecord {
                qmm: read_qmm(&feature_path(features, &r.id))?,
                record: r.clone(),
            })
        })
        .collect()
}

/// Builds labelled samples from loaded records and the sidecar rows.
pub fn build_samples(
    loaded: &[LoadedRecord],
    sidecar: &[SidecarRow],
    target: Target,
    mode: Mode,
    aux: &AuxiliaryBasis,
    config: &ModelConfig,
) -> Result<Vec<Sample>> {
    let rows: BTreeMap<&str, &SidecarRow> = sidecar.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut targets = Vec::with_capacity(loaded.len());
    let mut low = Vec::with_capacity(loaded.len());
    for l in loaded {
        let r = &l.record;
        let y = *r.labels.get(target.key()).ok_or_else(|| {
            Error::InsufficientData(format!("record `{}` has no `{}` label", r.id, target.key()))
        })?;
        targets.push((r.id.clone(), y, r.species));
        low.push(rows.get(r.id.as_str()).and_then(|row| row.values()));
    }
    let labels = compute_delta_labels(&targets, &low, target, mode)?;
    loaded
        .iter()
        .zip(labels)
        .map(|(l, label)| {
            Ok(Sample {
                id: l.record.id.clone(),
                input: NetworkInput::new(&l.qmm, aux, config)?,
                label,
            })
        })
        .collect()
}
