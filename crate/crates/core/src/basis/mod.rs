//! Contracted Gaussian atomic-orbital basis and the one-electron integrals
//! the SCF engine and the diagonal reduction consume.
//!
//! Shells are real solid-harmonic Gaussians `N r^l Y_lm e^{-a r^2}` using the
//! harmonic convention of [`crate::equivariant::sph`]: `m` runs `-l..=l`
//! contiguously within a shell, and all AOs of one atom are contiguous.

pub mod auxiliary;
pub mod integrals;

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::equivariant::RotationRep;
use crate::error::{Error, Result};
use crate::system::{atomic_number, MolecularSystem};

pub use auxiliary::{three_index_overlap, AtomThreeIndex, AuxiliaryBasis};
pub use integrals::{dipole_integrals, overlap_matrix, overlap_matrix_unchecked};

/// Text of the shipped minimal valence basis.
pub const MINIMAL_VALENCE_BASIS: &str = include_str!("../../data/minimal_valence.basis");

/// Highest shell degree the integral code supports.
pub const MAX_SHELL_L: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellSpec {
    /// Principal quantum number of the shell.
    pub n: u32,
    pub l: usize,
    /// `(exponent, contraction coefficient)` for unnormalized primitives.
    pub primitives: Vec<(f64, f64)>,
}

/// Per-element shell specifications, parsed from the versioned text format.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisTable {
    pub version: u32,
    pub elements: BTreeMap<u32, Vec<ShellSpec>>,
    /// SHA-256 of the source text, recorded in feature files and checkpoints.
    pub checksum: String,
}

fn shell_letter(c: char) -> Option<usize> {
    match c.to_ascii_lowercase() {
        's' => Some(0),
        'p' => Some(1),
        'd' => Some(2),
        'f' => Some(3),
        _ => None,
    }
}

impl BasisTable {
    /// The built-in minimal valence basis for H, C, N, O.
    pub fn minimal() -> Self {
        Self::parse(MINIMAL_VALENCE_BASIS, "minimal_valence.basis").expect("shipped basis is valid")
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let checksum = hex::encode(Sha256::digest(text.as_bytes()));
        let mut version = None;
        let mut elements: BTreeMap<u32, Vec<ShellSpec>> = BTreeMap::new();
        let mut current: Option<(u32, usize)> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] == "version" {
                let v = fields
                    .get(1)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::parse(origin, line_no, "bad version line"))?;
                version = Some(v);
                continue;
            }
            if let Some(z) = atomic_number(fields[0]) {
                let label = fields
                    .get(1)
                    .ok_or_else(|| Error::parse(origin, line_no, "missing shell label"))?;
                let (digits, letter) = label.split_at(label.len() - 1);
                let n: u32 = digits.parse().map_err(|_| {
                    Error::parse(origin, line_no, format!("bad shell label `{label}`"))
                })?;
                let l = letter
                    .chars()
                    .next()
                    .and_then(shell_letter)
                    .ok_or_else(|| {
                        Error::parse(origin, line_no, format!("bad shell label `{label}`"))
                    })?;
                if l > MAX_SHELL_L {
                    return Err(Error::parse(
                        origin,
                        line_no,
                        format!("shell degree {l} not supported"),
                    ));
                }
                let shells = elements.entry(z).or_default();
                shells.push(ShellSpec {
                    n,
                    l,
                    primitives: Vec::new(),
                });
                current = Some((z, shells.len() - 1));
                continue;
            }
            let (z, idx) = current
                .ok_or_else(|| Error::parse(origin, line_no, "primitive row before any shell"))?;
            if fields.len() != 2 {
                return Err(Error::parse(
                    origin,
                    line_no,
                    "expected `exponent coefficient`",
                ));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::parse(origin, line_no, format!("bad number `{s}`")))
            };
            let (a, c) = (parse(fields[0])?, parse(fields[1])?);
            let shell = &mut elements.get_mut(&z).unwrap()[idx];
            if !(a > 0.0) {
                return Err(Error::parse(origin, line_no, "exponent must be positive"));
            }
            if let Some(&(prev, _)) = shell.primitives.last() {
                if a >= prev {
                    return Err(Error::parse(
                        origin,
                        line_no,
                        "exponents must strictly decrease",
                    ));
                }
            }
            shell.primitives.push((a, c));
        }
        for shells in elements.values() {
            if shells.iter().any(|s| s.primitives.is_empty()) {
                return Err(Error::parse(origin, 0, "shell without primitives"));
            }
        }
        Ok(BasisTable {
            version: version.ok_or_else(|| Error::parse(origin, 0, "missing version line"))?,
            elements,
            checksum,
        })
    }

    pub fn shells(&self, z: u32) -> Result<&[ShellSpec]> {
        self.elements
            .get(&z)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownElement(z))
    }

    /// Largest number of shells of degree `l` on any element.
    pub fn max_shells_of_degree(&self, l: usize) -> usize {
        self.elements
            .values()
            .map(|s| s.iter().filter(|x| x.l == l).count())
            .max()
            .unwrap_or(0)
    }

    pub fn max_l(&self) -> usize {
        self.elements
            .values()
            .flatten()
            .map(|s| s.l)
            .max()
            .unwrap_or(0)
    }
}

/// `int_0^inf r^k e^{-beta r^2} dr`.
pub(crate) fn radial_moment(k: usize, beta: f64) -> f64 {
    let x = (k as f64 + 1.0) / 2.0;
    gamma_half(k + 1) / (2.0 * beta.powf(x))
}

/// `Gamma(n / 2)` for positive integer `n`.
fn gamma_half(n: usize) -> f64 {
    let mut g = if n.is_multiple_of(2) {
        1.0
    } else {
        std::f64::consts::PI.sqrt()
    };
    let mut x = if n.is_multiple_of(2) { 1.0 } else { 0.5 };
    while (2.0 * x) < n as f64 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Normalization of one primitive `r^l Y_lm e^{-a r^2}`.
pub(crate) fn primitive_norm(l: usize, a: f64) -> f64 {
    1.0 / radial_moment(2 * l + 2, 2.0 * a).sqrt()
}

/// A normalized contracted shell placed on an atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianShell {
    pub atom_index: usize,
    pub n: u32,
    pub l: usize,
    pub center: [f64; 3],
    pub exponents: Vec<f64>,
    /// Coefficients multiplying `r^l Y_lm e^{-a r^2}`, normalization included.
    pub coefficients: Vec<f64>,
}

impl GaussianShell {
    pub fn from_spec(atom_index: usize, center: [f64; 3], spec: &ShellSpec) -> Self {
        let l = spec.l;
        let exponents: Vec<f64> = spec.primitives.iter().map(|p| p.0).collect();
        let mut coefficients: Vec<f64> = spec
            .primitives
            .iter()
            .map(|&(a, d)| d * primitive_norm(l, a))
            .collect();
        let mut self_overlap = 0.0;
        for (i, &ai) in exponents.iter().enumerate() {
            for (j, &aj) in exponents.iter().enumerate() {
                self_overlap +=
                    coefficients[i] * coefficients[j] * radial_moment(2 * l + 2, ai + aj);
            }
        }
        let scale = 1.0 / self_overlap.sqrt();
        coefficients.iter_mut().for_each(|c| *c *= scale);
        GaussianShell {
            atom_index,
            n: spec.n,
            l,
            center,
            exponents,
            coefficients,
        }
    }

    pub fn size(&self) -> usize {
        2 * self.l + 1
    }
}

/// One atomic orbital: atom, shell, principal number, degree, and `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AoLabel {
    pub atom: usize,
    pub shell: usize,
    /// Rank of the shell among the atom's shells of the same degree.
    pub rank: usize,
    pub n: u32,
    pub l: usize,
    pub m: i32,
}

/// Ordered shells and the bijection between flat AO indices and `(atom, n, l, m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoLayout {
    pub atomic_numbers: Vec<u32>,
    pub shells: Vec<GaussianShell>,
    pub aos: Vec<AoLabel>,
    pub shell_offsets: Vec<usize>,
    pub atom_ranges: Vec<Range<usize>>,
}

impl AoLayout {
    pub fn num_aos(&self) -> usize {
        self.aos.len()
    }

    pub fn num_atoms(&self) -> usize {
        self.atom_ranges.len()
    }

    pub fn index_of(&self, atom: usize, n: u32, l: usize, m: i32) -> Option<usize> {
        self.atom_ranges
            .get(atom)?
            .clone()
            .find(|&i| self.aos[i].n == n && self.aos[i].l == l && self.aos[i].m == m)
    }

    pub fn atom_of(&self, ao: usize) -> usize {
        self.aos[ao].atom
    }

    /// Compact table stored in feature-file headers: `(atom, n, l, m)` per AO.
    pub fn table(&self) -> Vec<(usize, u32, usize, i32)> {
        self.aos.iter().map(|a| (a.atom, a.n, a.l, a.m)).collect()
    }
}

/// Places the element shells of `table` on every atom of `system`.
pub fn build_basis(system: &MolecularSystem, table: &BasisTable) -> Result<AoLayout> {
    let mut shells = Vec::new();
    let mut aos = Vec::new();
    let mut shell_offsets = Vec::new();
    let mut atom_ranges = Vec::with_capacity(system.num_atoms());
    for (atom, (&z, &center)) in system
        .atomic_numbers
        .iter()
        .zip(&system.coordinates)
        .enumerate()
    {
        let start = aos.len();
        let mut rank_of_l = [0usize; MAX_SHELL_L + 1];
        for spec in table.shells(z)? {
            let shell_index = shells.len();
            shell_offsets.push(aos.len());
            let rank = rank_of_l[spec.l];
            rank_of_l[spec.l] += 1;
            for m in -(spec.l as i32)..=(spec.l as i32) {
                aos.push(AoLabel {
                    atom,
                    shell: shell_index,
                    rank,
                    n: spec.n,
                    l: spec.l,
                    m,
                });
            }
            shells.push(GaussianShell::from_spec(atom, center, spec));
        }
        atom_ranges.push(start..aos.len());
    }
    Ok(AoLayout {
        atomic_numbers: system.atomic_numbers.clone(),
        shells,
        aos,
        shell_offsets,
        atom_ranges,
    })
}

/// Block-diagonal AO rotation `D = diag(D^{l_shell}(R))`, so that a matrix over
/// the rotated molecule equals `D M D^T`.
pub fn ao_rotation(layout: &AoLayout, rep: &RotationRep<f64>) -> DMatrix<f64> {
    let n = layout.num_aos();
    let mut d = DMatrix::zeros(n, n);
    for (shell, &off) in layout.shells.iter().zip(&layout.shell_offsets) {
        let block = rep.block(shell.l);
        let w = shell.size();
        for i in 0..w {
            for j in 0..w {
                d[(off + i, off + j)] = block.data[i * w + j];
            }
        }
    }
    d
}

/// Permutation matrix `P` with `P[new, old] = 1` for atoms relabeled by `perm`
/// (atom `i` of the new order is atom `perm[i]` of the old one).
pub fn ao_permutation(old: &AoLayout, new: &AoLayout, perm: &[usize]) -> DMatrix<f64> {
    let n = old.num_aos();
    let mut p = DMatrix::zeros(n, n);
    for (new_atom, &old_atom) in perm.iter().enumerate() {
        let (rn, ro) = (&new.atom_ranges[new_atom], &old.atom_ranges[old_atom]);
        for (i, j) in rn.clone().zip(ro.clone()) {
            p[(i, j)] = 1.0;
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h2() -> MolecularSystem {
        MolecularSystem::new(vec![1, 1], vec![[0.0; 3], [0.0, 0.0, 1.4]], 0, 1)
    }

    #[test]
    fn counts() {
        let table = BasisTable::minimal();
        assert_eq!(build_basis(&h2(), &table).unwrap().num_aos(), 2);
        let ch4 = MolecularSystem::new(
            vec![6, 1, 1, 1, 1],
            vec![
                [0.0; 3],
                [1.2, 1.2, 1.2],
                [-1.2, -1.2, 1.2],
                [-1.2, 1.2, -1.2],
                [1.2, -1.2, -1.2],
            ],
            0,
            1,
        );
        let layout = build_basis(&ch4, &table).unwrap();
        assert_eq!(layout.num_aos(), 8);
        assert_eq!(layout.atom_ranges[0], 0..4);
        assert_eq!(layout.atom_ranges[4], 7..8);
        assert_eq!(layout.index_of(0, 2, 1, -1), Some(1));
        assert_eq!(layout.index_of(0, 2, 1, 1), Some(3));
    }

    #[test]
    fn unknown_element() {
        let s = MolecularSystem::new(vec![99], vec![[0.0; 3]], 0, 2);
        assert!(matches!(
            build_basis(&s, &BasisTable::minimal()),
            Err(Error::UnknownElement(99))
        ));
    }

    #[test]
    fn index_map_is_bijective() {
        let s = MolecularSystem::new(
            vec![8, 1, 6],
            vec![[0.0; 3], [1.8, 0.0, 0.0], [0.0, 2.5, 0.0]],
            0,
            1,
        );
        let layout = build_basis(&s, &BasisTable::minimal()).unwrap();
        for (i, a) in layout.aos.iter().enumerate() {
            assert_eq!(layout.index_of(a.atom, a.n, a.l, a.m), Some(i));
        }
    }

    #[test]
    fn parse_rejects_bad_tables() {
        assert!(BasisTable::parse("version 1\nH 1s\n 1.0 0.5\n 2.0 0.5\n", "t").is_err());
        assert!(BasisTable::parse("version 1\nH 1s\n -1.0 0.5\n", "t").is_err());
        assert!(BasisTable::parse("H 1s\n 1.0 0.5\n", "t").is_err());
        assert!(BasisTable::parse("version 1\n 1.0 0.5\n", "t").is_err());
        let ok = BasisTable::parse("version 2\nHe 1s\n 1.0 1.0\n", "t").unwrap();
        assert_eq!(ok.version, 2);
        assert_eq!(ok.checksum.len(), 64);
    }

    #[test]
    fn shipped_table_shapes() {
        let t = BasisTable::minimal();
        assert_eq!(
            t.elements.keys().copied().collect::<Vec<_>>(),
            vec![1, 6, 7, 8]
        );
        assert_eq!(t.max_shells_of_degree(0), 1);
        assert_eq!(t.max_shells_of_degree(1), 1);
        assert_eq!(t.max_l(), 1);
    }

    #[test]
    fn gamma_half_values() {
        assert!((gamma_half(1) - std::f64::consts::PI.sqrt()).abs() < 1e-15);
        assert!((gamma_half(2) - 1.0).abs() < 1e-15);
        assert!((gamma_half(5) - 0.75 * std::f64::consts::PI.sqrt()).abs() < 1e-15);
        assert!((gamma_half(6) - 2.0).abs() < 1e-15);
    }
}
