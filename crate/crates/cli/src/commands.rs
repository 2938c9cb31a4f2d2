use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use orbitall::basis::{AuxiliaryBasis, BasisTable};
use orbitall::dataio::{
    build_samples, feature_path, load_features, manifest_record, parse_xyz, read_sidecar,
    record_id, split_dataset, write_qmm, write_sidecar, write_toy_dataset, xyz_files,
    DatasetManifest, LoadedRecord, ManifestRecord, RunConfig, SidecarRow, Split, MANIFEST_FILE,
    SIDECAR_FILE,
};
use orbitall::equivariant::CgTable;
use orbitall::network::{
    load_checkpoint, save_checkpoint, CheckpointMeta, Model, ModelConfig, NetworkInput,
};
use orbitall::scf::run_scf;
use orbitall::system::{MolecularSystem, Species};
use orbitall::training::{evaluate, metrics_csv, Mode};
use orbitall::units::CHEMICAL_ACCURACY_MEV;
use orbitall::{Error, Result};
use rayon::prelude::*;

use crate::exit;

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn dump_cg(path: &Path) -> Result<()> {
    let lmax = ModelConfig::default().irreps.lmax();
    write(path, &CgTable::<f64>::new(lmax).dump())?;
    log::info!("wrote CG table up to l = {lmax} to {}", path.display());
    Ok(())
}

struct Pending {
    id: String,
    system: MolecularSystem,
    record: ManifestRecord,
}

pub fn featurize(input: &Path, output: &Path, workers: Option<usize>) -> Result<u8> {
    let files = xyz_files(input)?;
    if files.is_empty() {
        log::warn!("no .xyz files in {}, nothing to do", input.display());
        return Ok(exit::OK);
    }
    let mut parse_failures = 0usize;
    let mut pending: Vec<Pending> = Vec::new();
    let mut ids = BTreeSet::new();
    for path in &files {
        let origin = path.display().to_string();
        let parsed = fs::read_to_string(path)
            .map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })
            .and_then(|text| parse_xyz(&text, &origin));
        let frames = match parsed {
            Ok(f) => f,
            Err(e) => {
                log::error!("{e}");
                parse_failures += 1;
                continue;
            }
        };
        let n = frames.len();
        for (frame, rec) in frames.into_iter().enumerate() {
            let id = record_id(path, frame, n, &rec);
            if !ids.insert(id.clone()) {
                log::error!("{origin}: duplicate record id `{id}`, frame {frame} skipped");
                parse_failures += 1;
                continue;
            }
            pending.push(Pending {
                record: manifest_record(id.clone(), origin.clone(), frame, &rec),
                id,
                system: rec.system,
            });
        }
    }
    create_dir(output)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<SidecarRow>> = pool.install(|| {
        pending
            .par_iter()
            .map(|p| {
                let row = match run_scf(&p.system) {
                    Ok((qmm, low)) => {
                        write_qmm(&feature_path(output, &p.id), &qmm)?;
                        SidecarRow::ok(&p.id, &low)
                    }
                    Err(e) => {
                        log::error!("{}: {e}", p.id);
                        SidecarRow::failed(&p.id, &e)
                    }
                };
                Ok(row)
            })
            .collect()
    });
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut scf_failures = 0usize;
    let mut manifest = DatasetManifest::default();
    for (p, row) in pending.into_iter().zip(&rows) {
        if row.status == "ok" {
            manifest.records.push(p.record);
        } else {
            scf_failures += 1;
        }
    }
    write_sidecar(&output.join(SIDECAR_FILE), &rows)?;
    manifest.save(&output.join(MANIFEST_FILE))?;
    log::info!(
        "featurized {} of {} records ({scf_failures} SCF failures, {parse_failures} unreadable)",
        manifest.records.len(),
        rows.len()
    );
    Ok(if parse_failures > 0 {
        exit::PARSE
    } else if scf_failures > 0 {
        exit::SCF
    } else {
        exit::OK
    })
}

pub fn split(
    manifest: &Path,
    out: &Path,
    fractions: [f64; 3],
    seed: u64,
    balance: bool,
) -> Result<u8> {
    let m = DatasetManifest::load(manifest)?;
    let s = split_dataset(&m, fractions, seed, balance)?;
    for split in Split::ALL {
        log::info!("{split:?}: {} records", s.in_split(split).count());
    }
    s.save(out)?;
    Ok(exit::OK)
}

fn aux() -> AuxiliaryBasis {
    AuxiliaryBasis::for_table(&BasisTable::minimal())
}

/// Engine version and basis checksum shared by all loaded features.
fn feature_provenance(loaded: &[LoadedRecord]) -> Result<(String, String)> {
    let first = loaded
        .first()
        .ok_or_else(|| Error::InsufficientData("no records selected".into()))?;
    let key = (
        &first.qmm.meta.engine_version,
        &first.qmm.meta.basis_checksum,
    );
    for l in loaded {
        if (&l.qmm.meta.engine_version, &l.qmm.meta.basis_checksum) != key {
            return Err(Error::ChecksumMismatch(format!(
                "features of `{}` and `{}` come from different engines or basis sets",
                first.record.id, l.record.id
            )));
        }
    }
    Ok((key.0.clone(), key.1.clone()))
}

fn check_features(meta: &CheckpointMeta, loaded: &[LoadedRecord]) -> Result<()> {
    for l in loaded {
        let q = &l.qmm.meta;
        if q.basis_checksum != meta.basis_checksum || q.engine_version != meta.engine_version {
            return Err(Error::ChecksumMismatch(format!(
                "features of `{}` ({} / {}) do not match the checkpoint ({} / {})",
                l.record.id,
                q.engine_version,
                q.basis_checksum,
                meta.engine_version,
                meta.basis_checksum
            )));
        }
    }
    Ok(())
}

pub fn train(
    manifest: &Path,
    features: &Path,
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    deterministic: bool,
) -> Result<u8> {
    let mut run = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        run.train.seed = s;
    }
    run.train.deterministic |= deterministic;
    let model_cfg = run.model.build()?;
    let m = DatasetManifest::load(manifest)?;
    if m.records.iter().all(|r| r.split.is_none()) {
        return Err(Error::InsufficientData(format!(
            "{} has no split assignment; run `orbitall split` first",
            manifest.display()
        )));
    }
    let sidecar = read_sidecar(&features.join(SIDECAR_FILE))?;
    let aux = aux();
    let train_set = load_features(&m, features, Some(Split::Train))?;
    let val_set = load_features(&m, features, Some(Split::Val))?;
    let (engine_version, basis_checksum) = feature_provenance(&train_set)?;
    check_features(
        &CheckpointMeta {
            engine_version: engine_version.clone(),
            basis_checksum: basis_checksum.clone(),
            step: 0,
            epoch: 0,
            target: run.train.target,
            mode: run.train.mode,
        },
        &val_set,
    )?;
    let train_charges: BTreeSet<i32> = train_set.iter().map(|l| l.record.charge).collect();
    if let Some(l) = val_set
        .iter()
        .find(|l| !train_charges.contains(&l.record.charge))
    {
        return Err(Error::InsufficientData(format!(
            "validation record `{}` has charge {} which no training record has",
            l.record.id, l.record.charge
        )));
    }
    let samples = |loaded| {
        build_samples(
            loaded,
            &sidecar,
            run.train.target,
            run.train.mode,
            &aux,
            &model_cfg,
        )
    };
    let train_samples = samples(&train_set)?;
    let val_samples = samples(&val_set)?;
    log::info!(
        "training on {} molecules, validating on {}",
        train_samples.len(),
        val_samples.len()
    );
    let model = Model::new(model_cfg, run.train.seed)?;
    let outcome =
        orbitall::training::train(&run.train, model, &train_samples, &val_samples, |_, _| {})?;

    create_dir(out)?;
    let meta = CheckpointMeta {
        engine_version,
        basis_checksum,
        step: outcome.steps,
        epoch: outcome.best_epoch as u64,
        target: run.train.target,
        mode: run.train.mode,
    };
    save_checkpoint(&out.join("model.json"), &outcome.best, &meta)?;
    write(&out.join("metrics.csv"), &metrics_csv(&outcome.history))?;
    write(&out.join("config.toml"), &run.to_toml()?)?;
    let best = &outcome.history[outcome.best_epoch];
    let val = if best.val_mae_mev.is_nan() {
        String::new()
    } else {
        format!("val MAE {:.3} meV, ", best.val_mae_mev)
    };
    println!(
        "best epoch {} of {}: {val}train loss {:.5e}",
        outcome.best_epoch,
        outcome.history.len(),
        best.train_loss
    );
    if outcome.skipped_steps > 0 {
        log::warn!(
            "{} optimizer steps skipped for non-finite gradients",
            outcome.skipped_steps
        );
    }
    Ok(exit::OK)
}

fn csv_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const PREDICTION_HEADER: &str =
    "id,species,charge,multiplicity,delta_ev,low_level_ev,total_ev,label_ev";

pub fn predict(
    checkpoint: &Path,
    manifest: &Path,
    features: &Path,
    split: Option<Split>,
    out: &Path,
) -> Result<u8> {
    let ckpt = load_checkpoint(checkpoint)?;
    let m = DatasetManifest::load(manifest)?;
    let loaded = load_features(&m, features, split)?;
    check_features(&ckpt.meta, &loaded)?;
    let sidecar: BTreeMap<String, SidecarRow> = read_sidecar(&features.join(SIDECAR_FILE))?
        .into_iter()
        .map(|r| (r.id.clone(), r))
        .collect();
    let aux = aux();
    let target = ckpt.meta.target;
    let outputs: Vec<f64> = loaded
        .par_iter()
        .map(|l| {
            ckpt.model
                .predict(&NetworkInput::new(&l.qmm, &aux, &ckpt.model.config)?)
        })
        .collect::<Result<_>>()?;
    let mut text = format!("{PREDICTION_HEADER}\n");
    for (l, y) in loaded.iter().zip(outputs) {
        let r = &l.record;
        let low = sidecar
            .get(&r.id)
            .and_then(|row| row.values())
            .and_then(|v| target.low_level(&v));
        let (delta, total) = match ckpt.meta.mode {
            Mode::Delta => (Some(y), low.map(|lo| lo + y)),
            Mode::Direct => (low.map(|lo| y - lo), Some(y)),
        };
        if total.is_none() {
            log::warn!("{}: no low-level value, total left empty", r.id);
        }
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{}",
            r.id,
            r.species.as_str(),
            r.charge,
            r.multiplicity,
            csv_num(delta),
            csv_num(low),
            csv_num(total),
            csv_num(r.labels.get(target.key()).copied())
        );
    }
    write(out, &text)?;
    log::info!("wrote {} predictions to {}", loaded.len(), out.display());
    Ok(exit::OK)
}

pub fn eval(
    checkpoint: &Path,
    manifest: &Path,
    features: &Path,
    split: Option<Split>,
    out: Option<&Path>,
) -> Result<u8> {
    let ckpt = load_checkpoint(checkpoint)?;
    let m = DatasetManifest::load(manifest)?;
    let loaded = load_features(&m, features, split)?;
    check_features(&ckpt.meta, &loaded)?;
    let sidecar = read_sidecar(&features.join(SIDECAR_FILE))?;
    let samples = build_samples(
        &loaded,
        &sidecar,
        ckpt.meta.target,
        ckpt.meta.mode,
        &aux(),
        &ckpt.model.config,
    )?;
    let e = evaluate(&ckpt.model, &samples)?;
    let mut csv = String::from("species,count,mae_mev\n");
    println!("{:<10} {:>6} {:>12}", "species", "count", "MAE (meV)");
    for s in Species::ALL {
        if let Some((mae, n)) = e.per_species.get(&s) {
            println!("{:<10} {n:>6} {mae:>12.3}", s.as_str());
            let _ = writeln!(csv, "{},{n},{mae}", s.as_str());
        }
    }
    println!("{:<10} {:>6} {:>12.3}", "all", samples.len(), e.mae_mev);
    let _ = writeln!(csv, "all,{},{}", samples.len(), e.mae_mev);
    println!(
        "within chemical accuracy ({CHEMICAL_ACCURACY_MEV} meV): {:.1}%",
        100.0 * e.within_chemical_accuracy
    );
    if let Some(p) = out {
        write(p, &csv)?;
    }
    Ok(exit::OK)
}

pub fn verify(
    checkpoint: Option<&Path>,
    hidden_dim: usize,
    opts: &orbitall::verify::SuiteOptions,
    report: Option<&Path>,
) -> Result<u8> {
    let model = match checkpoint {
        Some(p) => load_checkpoint(p)?.model,
        None => Model::new_random(ModelConfig::scaled(hidden_dim), opts.seed)?,
    };
    let r = orbitall::verify::run_suite(&model, &aux(), opts)?;
    let json = serde_json::to_string_pretty(&r)?;
    println!("{json}");
    if let Some(p) = report {
        write(p, &json)?;
    }
    if r.passed() {
        Ok(exit::OK)
    } else {
        for v in &r.violations {
            eprintln!("violation: {v}");
        }
        Ok(exit::VERIFY)
    }
}

pub fn gen_toy(out: &Path, opts: &orbitall::toy::ToyOptions) -> Result<u8> {
    let records = orbitall::toy::toy_dataset(opts);
    write_toy_dataset(out, &records)?;
    log::info!("wrote {} molecules to {}", records.len(), out.display());
    Ok(exit::OK)
}
