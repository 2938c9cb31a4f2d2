//! Random small H/C/N/O molecules for tests, oracles and toy datasets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::BasisTable;
use crate::scf::{run_scf_with, HuckelParams, LowLevelResult, QmmSet, ScfOptions};
use crate::system::MolecularSystem;
use crate::units::{ANGSTROM_TO_BOHR, HARTREE_TO_EV};

const HEAVY: [u32; 3] = [6, 7, 8];

fn bonds_of(z: u32) -> usize {
    match z {
        6 => 4,
        7 => 3,
        8 => 2,
        _ => 1,
    }
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n2: f64 = v.iter().map(|x| x * x).sum();
        if n2 > 1e-4 && n2 <= 1.0 {
            let n = n2.sqrt();
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn too_close(coords: &[[f64; 3]], p: [f64; 3], min: f64) -> bool {
    coords.iter().any(|c| {
        let d2: f64 = (0..3).map(|k| (c[k] - p[k]).powi(2)).sum();
        d2 < min * min
    })
}

/// A random neutral closed-shell-count skeleton with `heavy` heavy atoms and
/// hydrogens filling the remaining valences, capped at `max_atoms` atoms.
/// Coordinates are in bohr; charge 0, multiplicity chosen from electron parity.
pub fn random_molecule<R: Rng + ?Sized>(
    rng: &mut R,
    heavy: usize,
    max_atoms: usize,
) -> MolecularSystem {
    'retry: loop {
        let mut z = Vec::new();
        let mut xyz: Vec<[f64; 3]> = Vec::new();
        let mut free = Vec::new();
        for i in 0..heavy {
            let el = *HEAVY.choose(rng).unwrap();
            if i == 0 {
                xyz.push([0.0; 3]);
            } else {
                let mut placed = false;
                for _ in 0..200 {
                    let parent = rng.gen_range(0..i);
                    if free[parent] == 0 {
                        continue;
                    }
                    let r = rng.gen_range(1.3..1.55) * ANGSTROM_TO_BOHR;
                    let u = random_unit(rng);
                    let p = [
                        xyz[parent][0] + r * u[0],
                        xyz[parent][1] + r * u[1],
                        xyz[parent][2] + r * u[2],
                    ];
                    if too_close(&xyz, p, 1.25 * ANGSTROM_TO_BOHR) {
                        continue;
                    }
                    free[parent] -= 1;
                    xyz.push(p);
                    placed = true;
                    break;
                }
                if !placed {
                    continue 'retry;
                }
            }
            z.push(el);
            free.push(bonds_of(el) - usize::from(i > 0));
        }
        let mut slots: Vec<usize> = (0..heavy)
            .flat_map(|a| std::iter::repeat_n(a, free[a]))
            .collect();
        slots.shuffle(rng);
        for parent in slots {
            if z.len() >= max_atoms {
                break;
            }
            let mut placed = false;
            for _ in 0..200 {
                let r = rng.gen_range(1.0..1.12) * ANGSTROM_TO_BOHR;
                let u = random_unit(rng);
                let p = [
                    xyz[parent][0] + r * u[0],
                    xyz[parent][1] + r * u[1],
                    xyz[parent][2] + r * u[2],
                ];
                if too_close(&xyz, p, 0.95 * ANGSTROM_TO_BOHR) {
                    continue;
                }
                xyz.push(p);
                z.push(1);
                placed = true;
                break;
            }
            if !placed {
                continue 'retry;
            }
        }
        let mut s = MolecularSystem::new(z, xyz, 0, 1);
        if s.num_electrons() % 2 == 1 {
            s.multiplicity = 2;
        }
        return s;
    }
}

/// Same geometry with a different charge; multiplicity is the lowest one
/// compatible with the electron count, raised to `min_multiplicity` parity-wise.
pub fn with_charge_state(
    system: &MolecularSystem,
    charge: i32,
    multiplicity: u32,
) -> MolecularSystem {
    let mut s = system.clone();
    s.charge = charge;
    s.multiplicity = multiplicity;
    if (s.num_electrons() - (multiplicity as i64 - 1)) % 2 != 0 {
        s.multiplicity = multiplicity + 1;
    }
    s
}

/// Strength of the parameter perturbation that defines the synthetic high level.
pub const HIGH_LEVEL_PERTURBATION: f64 = 0.05;

/// A toy molecule with its low-level SCF and a synthetic high-level energy.
#[derive(Debug, Clone)]
pub struct ToyRecord {
    pub system: MolecularSystem,
    pub qmm: QmmSet,
    pub low: LowLevelResult,
    /// Energy from the perturbed-parameter SCF, eV.
    pub high_energy_ev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyOptions {
    pub count: usize,
    pub max_atoms: usize,
    pub seed: u64,
    /// Perturbation strength of the synthetic high level.
    pub strength: f64,
    /// Charge states drawn uniformly per molecule.
    pub charges: Vec<i32>,
    /// Probability of taking the multiplicity two above the lowest one.
    pub high_spin_fraction: f64,
}

impl Default for ToyOptions {
    fn default() -> Self {
        ToyOptions {
            count: 64,
            max_atoms: 8,
            seed: 0,
            strength: HIGH_LEVEL_PERTURBATION,
            charges: vec![0],
            high_spin_fraction: 0.0,
        }
    }
}

/// Random molecules with at least three atoms. Molecules where either level
/// fails to converge are replaced by fresh draws.
pub fn toy_dataset(opts: &ToyOptions) -> Vec<ToyRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let table = BasisTable::minimal();
    let low_opts = ScfOptions::default();
    let high_opts = ScfOptions {
        params: HuckelParams::default().perturbed(opts.strength),
        ..ScfOptions::default()
    };
    let mut out = Vec::with_capacity(opts.count);
    while out.len() < opts.count {
        let heavy = rng.gen_range(1..=3usize.min(opts.max_atoms));
        let base = random_molecule(&mut rng, heavy, opts.max_atoms);
        if base.num_atoms() < 3 {
            continue;
        }
        let charge = *opts.charges.choose(&mut rng).unwrap_or(&0);
        let bump = if rng.gen_bool(opts.high_spin_fraction) {
            2
        } else {
            0
        };
        let system = with_charge_state(&base, charge, 1 + bump);
        let Ok((qmm, low)) = run_scf_with(&system, &table, &low_opts) else {
            continue;
        };
        let Ok((_, high)) = run_scf_with(&system, &table, &high_opts) else {
            continue;
        };
        out.push(ToyRecord {
            system,
            qmm,
            low,
            high_energy_ev: high.energy * HARTREE_TO_EV,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn molecules_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let heavy = rng.gen_range(1..=3);
            let m = random_molecule(&mut rng, heavy, 8);
            m.validate().unwrap();
            assert!(m.num_atoms() <= 8);
            let m2 = with_charge_state(&m, 1, 1);
            m2.validate().unwrap();
        }
    }
}
