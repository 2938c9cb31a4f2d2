#![allow(dead_code)]

use orbitall::basis::{AuxiliaryBasis, BasisTable};
use orbitall::network::{ModelConfig, NetworkInput};
use orbitall::scf::{run_scf, LowLevelResult, QmmSet};
use orbitall::system::MolecularSystem;

/// Nonplanar five-atom fixture (methanol-like fragment without one H).
pub fn five_atoms() -> MolecularSystem {
    MolecularSystem::new(
        vec![6, 8, 1, 1, 7],
        vec![
            [0.0, 0.0, 0.0],
            [2.6, 0.2, 0.1],
            [-0.7, 1.8, 0.4],
            [-0.6, -1.0, 1.6],
            [-0.9, -1.2, -2.0],
        ],
        0,
        2,
    )
}

pub fn water() -> MolecularSystem {
    MolecularSystem::new(
        vec![8, 1, 1],
        vec![[0.0, 0.0, 0.1], [1.43, 1.1, 0.0], [-1.43, 1.05, 0.0]],
        0,
        1,
    )
}

pub fn aux() -> AuxiliaryBasis {
    AuxiliaryBasis::for_table(&BasisTable::minimal())
}

pub fn featurize(sys: &MolecularSystem) -> (QmmSet, LowLevelResult) {
    run_scf(sys).expect("fixture converges")
}

pub fn input(sys: &MolecularSystem, cfg: &ModelConfig) -> NetworkInput {
    let (qmm, _) = featurize(sys);
    NetworkInput::new(&qmm, &aux(), cfg).unwrap()
}

/// Toy molecules labelled by the perturbed engine, as training samples.
pub fn toy_samples(
    count: usize,
    seed: u64,
    cfg: &ModelConfig,
    mode: orbitall::training::Mode,
) -> Vec<orbitall::training::Sample> {
    use orbitall::toy::{toy_dataset, ToyOptions};
    use orbitall::training::{DeltaLabel, Mode, Sample};
    let aux = aux();
    toy_dataset(&ToyOptions {
        count,
        seed,
        ..ToyOptions::default()
    })
    .iter()
    .enumerate()
    .map(|(i, r)| {
        let y_low = match mode {
            Mode::Delta => r.low.energy * orbitall::units::HARTREE_TO_EV,
            Mode::Direct => 0.0,
        };
        Sample {
            id: format!("toy{i}"),
            input: NetworkInput::new(&r.qmm, &aux, cfg).unwrap(),
            label: DeltaLabel::new(r.high_energy_ev, y_low, r.system.species()),
        }
    })
    .collect()
}
