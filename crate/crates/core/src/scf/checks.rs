//! Diagnostics built on top of the SCF: rotation checks, spin gaps and
//! finite-difference field response.

use serde::{Deserialize, Serialize};

use crate::basis::{ao_rotation, BasisTable};
use crate::equivariant::{Mat3, RotationRep};
use crate::error::Result;
use crate::scf::{run_scf_with, QmmSet, ScfOptions};
use crate::system::MolecularSystem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationReport {
    /// Largest entry of `|O(R x) - D O(x) D^T|` per matrix, in [`QmmSet::NAMES`] order.
    pub per_matrix: [f64; 6],
    pub max_deviation: f64,
}

/// Largest deviation from the block rotation law between two QMM sets, `rotated`
/// computed on the geometry rotated by `rotation`.
pub fn rotation_deviation(
    original: &QmmSet,
    rotated: &QmmSet,
    rotation: &Mat3<f64>,
) -> Result<RotationReport> {
    let rep = RotationRep::new(
        *rotation,
        original
            .layout
            .shells
            .iter()
            .map(|s| s.l)
            .max()
            .unwrap_or(0),
    )?;
    let d = ao_rotation(&original.layout, &rep);
    let mut per_matrix = [0.0; 6];
    for (k, (a, b)) in original
        .matrices()
        .iter()
        .zip(rotated.matrices())
        .enumerate()
    {
        per_matrix[k] = (b - &d * *a * d.transpose()).amax();
    }
    let max_deviation = per_matrix.iter().copied().fold(0.0, f64::max);
    Ok(RotationReport {
        per_matrix,
        max_deviation,
    })
}

/// Runs the SCF on `system` and on its rotated copy and compares every block.
pub fn rotate_system_check(
    system: &MolecularSystem,
    rotation: &Mat3<f64>,
    table: &BasisTable,
    options: &ScfOptions,
) -> Result<RotationReport> {
    let (a, _) = run_scf_with(system, table, options)?;
    let (b, _) = run_scf_with(&system.rotated(rotation), table, options)?;
    rotation_deviation(&a, &b, rotation)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinGaps {
    pub singlet: f64,
    pub triplet: f64,
    pub adiabatic: f64,
}

/// Vertical gaps at the singlet and triplet geometries and the adiabatic gap.
///
/// `e_t_at_s` is the triplet-state energy at the singlet geometry, and so on.
pub fn spin_gaps(e_t_at_s: f64, e_s_at_s: f64, e_t_at_t: f64, e_s_at_t: f64) -> SpinGaps {
    SpinGaps {
        singlet: e_t_at_s - e_s_at_s,
        triplet: e_t_at_t - e_s_at_t,
        adiabatic: e_t_at_t - e_s_at_s,
    }
}

/// Central-difference `dE/df_k` about the system's own field, step `h` (au).
pub fn field_gradient(
    system: &MolecularSystem,
    h: f64,
    table: &BasisTable,
    options: &ScfOptions,
) -> Result<[f64; 3]> {
    let base = system.field.unwrap_or([0.0; 3]);
    let mut g = [0.0; 3];
    for k in 0..3 {
        let mut plus = base;
        let mut minus = base;
        plus[k] += h;
        minus[k] -= h;
        let (_, ep) = run_scf_with(&system.clone().with_field(plus), table, options)?;
        let (_, em) = run_scf_with(&system.clone().with_field(minus), table, options)?;
        g[k] = (ep.energy - em.energy) / (2.0 * h);
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaps_by_subtraction() {
        let g = spin_gaps(-10.0, -11.0, -10.5, -10.8);
        assert!((g.singlet - 1.0).abs() < 1e-15);
        assert!((g.triplet - 0.3).abs() < 1e-14);
        assert!((g.adiabatic - 0.5).abs() < 1e-15);
        let z = spin_gaps(-3.0, -3.0, -3.0, -3.0);
        assert_eq!((z.singlet, z.triplet, z.adiabatic), (0.0, 0.0, 0.0));
    }

    #[test]
    fn swapping_geometries_only_moves_adiabatic_operands() {
        let a = spin_gaps(-10.0, -11.0, -10.5, -10.8);
        let b = spin_gaps(-10.5, -10.8, -10.0, -11.0);
        assert_eq!(a.singlet, b.triplet);
        assert_eq!(a.triplet, b.singlet);
        assert!((b.adiabatic - (-10.0 + 10.8)).abs() < 1e-14);
    }
}
