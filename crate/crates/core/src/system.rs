use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMBOLS: [&str; 36] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr",
];

pub fn element_symbol(z: u32) -> Option<&'static str> {
    SYMBOLS.get((z as usize).checked_sub(1)?).copied()
}

pub fn atomic_number(symbol: &str) -> Option<u32> {
    SYMBOLS
        .iter()
        .position(|s| s.eq_ignore_ascii_case(symbol))
        .map(|i| i as u32 + 1)
}

/// Electrons treated explicitly by the valence-only engine.
pub fn valence_electrons(z: u32) -> u32 {
    match z {
        0..=2 => z,
        3..=10 => z - 2,
        11..=18 => z - 10,
        _ => z,
    }
}

/// Field magnitudes above this (atomic units) are rejected as unphysical input.
pub const MAX_FIELD_AU: f64 = 0.05;

/// A molecule: atoms in bohr, total charge, spin multiplicity `2S + 1`, and
/// optional uniform electric field (atomic units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MolecularSystem {
    pub atomic_numbers: Vec<u32>,
    pub coordinates: Vec<[f64; 3]>,
    pub charge: i32,
    pub multiplicity: u32,
    pub field: Option<[f64; 3]>,
    pub dielectric: Option<f64>,
}

impl MolecularSystem {
    pub fn new(
        atomic_numbers: Vec<u32>,
        coordinates: Vec<[f64; 3]>,
        charge: i32,
        multiplicity: u32,
    ) -> Self {
        MolecularSystem {
            atomic_numbers,
            coordinates,
            charge,
            multiplicity,
            field: None,
            dielectric: None,
        }
    }

    pub fn with_field(mut self, field: [f64; 3]) -> Self {
        self.field = Some(field);
        self
    }

    pub fn num_atoms(&self) -> usize {
        self.atomic_numbers.len()
    }

    /// Explicit (valence) electron count `sum Z_val - Q`.
    pub fn num_electrons(&self) -> i64 {
        self.atomic_numbers
            .iter()
            .map(|&z| valence_electrons(z) as i64)
            .sum::<i64>()
            - self.charge as i64
    }

    /// `(N_alpha, N_beta)` for the requested multiplicity.
    pub fn spin_counts(&self) -> Result<(usize, usize)> {
        self.validate()?;
        let n = self.num_electrons();
        let two_s = self.multiplicity as i64 - 1;
        Ok((((n + two_s) / 2) as usize, ((n - two_s) / 2) as usize))
    }

    pub fn validate(&self) -> Result<()> {
        if self.atomic_numbers.is_empty() {
            return Err(Error::InvariantViolation("system has no atoms".into()));
        }
        if self.atomic_numbers.len() != self.coordinates.len() {
            return Err(Error::InvariantViolation(format!(
                "{} atomic numbers but {} coordinate rows",
                self.atomic_numbers.len(),
                self.coordinates.len()
            )));
        }
        if self.coordinates.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvariantViolation("non-finite coordinate".into()));
        }
        if self.multiplicity < 1 {
            return Err(Error::InvariantViolation(
                "multiplicity must be at least 1".into(),
            ));
        }
        let n = self.num_electrons();
        if n < 1 {
            return Err(Error::InvariantViolation(format!(
                "charge {} leaves {n} electrons",
                self.charge
            )));
        }
        let two_s = self.multiplicity as i64 - 1;
        if (n - two_s) % 2 != 0 {
            return Err(Error::InvariantViolation(format!(
                "{n} electrons cannot form multiplicity {} (parity mismatch)",
                self.multiplicity
            )));
        }
        if two_s > n {
            return Err(Error::InvariantViolation(format!(
                "multiplicity {} needs at least {two_s} electrons, have {n}",
                self.multiplicity
            )));
        }
        if let Some(f) = self.field {
            let mag = (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt();
            if !mag.is_finite() || mag > MAX_FIELD_AU {
                return Err(Error::InvariantViolation(format!(
                    "field magnitude {mag:.3e} au exceeds {MAX_FIELD_AU}"
                )));
            }
        }
        if let Some(d) = self.dielectric {
            if !(d > 0.0) {
                return Err(Error::InvariantViolation(format!(
                    "dielectric {d} must be positive"
                )));
            }
        }
        Ok(())
    }

    /// Species tag inferred from charge and multiplicity.
    pub fn species(&self) -> Species {
        Species::infer(self.charge, self.multiplicity)
    }

    pub fn translated(&self, t: [f64; 3]) -> Self {
        let mut s = self.clone();
        for c in &mut s.coordinates {
            for k in 0..3 {
                c[k] += t[k];
            }
        }
        s
    }

    /// Rotates coordinates and the field about the origin.
    pub fn rotated(&self, r: &[[f64; 3]; 3]) -> Self {
        let rot = |v: [f64; 3]| crate::equivariant::wigner::apply3(r, v);
        let mut s = self.clone();
        s.coordinates = self.coordinates.iter().map(|c| rot(*c)).collect();
        s.field = self.field.map(rot);
        s
    }

    /// Reorders atoms: atom `i` of the result is atom `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut s = self.clone();
        s.atomic_numbers = perm.iter().map(|&i| self.atomic_numbers[i]).collect();
        s.coordinates = perm.iter().map(|&i| self.coordinates[i]).collect();
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    Neutral,
    Radical,
    Cation,
    Anion,
}

impl Species {
    pub const ALL: [Species; 4] = [
        Species::Neutral,
        Species::Radical,
        Species::Cation,
        Species::Anion,
    ];

    pub fn infer(charge: i32, multiplicity: u32) -> Self {
        match charge.signum() {
            1 => Species::Cation,
            -1 => Species::Anion,
            _ if multiplicity > 1 => Species::Radical,
            _ => Species::Neutral,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Species::Neutral => "neutral",
            Species::Radical => "radical",
            Species::Cation => "cation",
            Species::Anion => "anion",
        }
    }
}

impl std::str::FromStr for Species {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "neutral" => Ok(Species::Neutral),
            "radical" => Ok(Species::Radical),
            "cation" => Ok(Species::Cation),
            "anion" => Ok(Species::Anion),
            other => Err(Error::Config(format!("unknown species tag `{other}`"))),
        }
    }
}

impl std::fmt::Display for Species {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
