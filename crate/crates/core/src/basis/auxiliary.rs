//! Auxiliary Gaussians and on-site three-index overlaps used by the
//! diagonal reduction.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::basis::{primitive_norm, radial_moment, AoLayout, BasisTable};
use crate::equivariant::{gaunt_real, IrrepsSpec, Parity};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxShell {
    /// Rank among the auxiliary shells of the same degree.
    pub n: usize,
    pub l: usize,
    pub exponent: f64,
}

/// Normalized primitive Gaussians `N r^l Y_lm e^{-a r^2}` placed on every atom.
///
/// All elements share one shell list so the reduced features of every atom
/// have the same irreps layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryBasis {
    pub shells: Vec<AuxShell>,
}

impl AuxiliaryBasis {
    pub const DEFAULT_EXPONENTS: [f64; 2] = [0.5, 2.0];

    /// Even-tempered shells for every `l <= lmax`, ordered by `l` then exponent.
    pub fn even_tempered(lmax: usize, exponents: &[f64]) -> Self {
        let mut shells = Vec::new();
        for l in 0..=lmax {
            for (n, &exponent) in exponents.iter().enumerate() {
                shells.push(AuxShell { n, l, exponent });
            }
        }
        AuxiliaryBasis { shells }
    }

    /// Default auxiliary set for a primary basis: degrees up to twice its largest `l`.
    pub fn for_table(table: &BasisTable) -> Self {
        Self::even_tempered(2 * table.max_l(), &Self::DEFAULT_EXPONENTS)
    }

    pub fn lmax(&self) -> usize {
        self.shells.iter().map(|s| s.l).max().unwrap_or(0)
    }

    /// Layout of the reduced feature: one even-parity channel per auxiliary shell.
    pub fn irreps_spec(&self) -> IrrepsSpec {
        let mut counts = vec![0; self.lmax() + 1];
        for s in &self.shells {
            counts[s.l] += 1;
        }
        IrrepsSpec::from_counts(&counts, &[])
    }

    /// Flat component count `sum (2l + 1)`.
    pub fn num_components(&self) -> usize {
        self.shells.iter().map(|s| 2 * s.l + 1).sum()
    }
}

/// On-site overlaps `Q[k][mu][nu] = <mu nu | aux_k>` for one atom, with `k`
/// running over auxiliary components in the order of [`AuxiliaryBasis::irreps_spec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomThreeIndex {
    pub atom: usize,
    pub ao_range: Range<usize>,
    pub num_components: usize,
    pub data: Vec<f64>,
}

impl AtomThreeIndex {
    pub fn num_local(&self) -> usize {
        self.ao_range.len()
    }

    pub fn get(&self, k: usize, mu: usize, nu: usize) -> f64 {
        let n = self.num_local();
        self.data[(k * n + mu) * n + nu]
    }
}

/// Aux components in spec order as `(shell index, l, m)`.
fn aux_components(aux: &AuxiliaryBasis) -> Vec<(usize, usize, i32)> {
    let spec = aux.irreps_spec();
    let mut out = vec![(0, 0, 0); aux.num_components()];
    let mut rank_seen = vec![0usize; aux.lmax() + 1];
    for (si, s) in aux.shells.iter().enumerate() {
        let seg = spec
            .segment(s.l, Parity::Even)
            .expect("segment for every aux degree");
        let w = 2 * s.l + 1;
        let ch = rank_seen[s.l];
        rank_seen[s.l] += 1;
        for (k, m) in (-(s.l as i32)..=(s.l as i32)).enumerate() {
            out[seg.offset + ch * w + k] = (si, s.l, m);
        }
    }
    out
}

/// On-site three-index overlaps for every atom of `layout`.
pub fn three_index_overlap(layout: &AoLayout, aux: &AuxiliaryBasis) -> Vec<AtomThreeIndex> {
    let comps = aux_components(aux);
    let nk = comps.len();
    layout
        .atom_ranges
        .iter()
        .enumerate()
        .map(|(atom, range)| {
            let n = range.len();
            let mut data = vec![0.0; nk * n * n];
            let shells: Vec<usize> = {
                let mut v: Vec<usize> = range.clone().map(|i| layout.aos[i].shell).collect();
                v.dedup();
                v
            };
            for (ia_shell, &sa) in shells.iter().enumerate() {
                for &sb in &shells[ia_shell..] {
                    let (a, b) = (&layout.shells[sa], &layout.shells[sb]);
                    let (oa, ob) = (
                        layout.shell_offsets[sa] - range.start,
                        layout.shell_offsets[sb] - range.start,
                    );
                    for (k, &(si, l, m)) in comps.iter().enumerate() {
                        if (a.l + b.l + l) % 2 == 1
                            || l > a.l + b.l
                            || l + a.l.min(b.l) < a.l.max(b.l)
                        {
                            continue;
                        }
                        let g = aux.shells[si].exponent;
                        let mut radial = 0.0;
                        for (&ea, &ca) in a.exponents.iter().zip(&a.coefficients) {
                            for (&eb, &cb) in b.exponents.iter().zip(&b.coefficients) {
                                radial += ca * cb * radial_moment(a.l + b.l + l + 2, ea + eb + g);
                            }
                        }
                        radial *= primitive_norm(l, g);
                        for (ia, ma) in (-(a.l as i32)..=(a.l as i32)).enumerate() {
                            for (ib, mb) in (-(b.l as i32)..=(b.l as i32)).enumerate() {
                                let gaunt = gaunt_real(a.l, ma, b.l, mb, l, m);
                                if gaunt != 0.0 {
                                    data[(k * n + oa + ia) * n + ob + ib] = radial * gaunt;
                                    data[(k * n + ob + ib) * n + oa + ia] = radial * gaunt;
                                }
                            }
                        }
                    }
                }
            }
            AtomThreeIndex {
                atom,
                ao_range: range.clone(),
                num_components: nk,
                data,
            }
        })
        .collect()
}
