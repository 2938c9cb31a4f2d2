//! Per-molecule quantities precomputed once from a QMM set: the diagonal
//! reduction, the pair plan for block messages, radial encodings, and the
//! low-level charges used by the electrostatic correction.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::autodiff::PairPlan;
use crate::basis::{three_index_overlap, AoLabel, AtomThreeIndex, AuxiliaryBasis};
use crate::equivariant::IrrepsSpec;
use crate::error::{Error, Result};
use crate::network::config::ModelConfig;
use crate::scf::QmmSet;
use crate::system::valence_electrons;

/// Everything the forward pass reads about one molecule.
#[derive(Debug, Clone)]
pub struct NetworkInput {
    pub atomic_numbers: Vec<u32>,
    pub coordinates: Vec<[f64; 3]>,
    pub charge: i32,
    pub aos: Vec<AoLabel>,
    /// Reduced embedding of each of the six matrices, batched segment-major
    /// `[segment][channel][atom][m]` over the auxiliary spec.
    pub reduced: Vec<Vec<f64>>,
    pub aux_spec: IrrepsSpec,
    pub plan: Arc<PairPlan>,
    /// Radial encodings, one row of `n_radial_basis` values per plan pair.
    pub rbf: Vec<f64>,
    /// Low-level Mulliken charges.
    pub mulliken: Vec<f64>,
    /// Damped Coulomb kernel `erf(r / r0) / r` (hartree per e^2), zero diagonal.
    pub coulomb: Vec<f64>,
}

/// `h^O_{A,k} = sum_{mu nu in A} O_{mu nu} Q_{A,k,mu nu}` for one matrix and
/// every atom, each atom's values in the auxiliary component order.
pub fn diagonal_reduce(o: &DMatrix<f64>, q: &[AtomThreeIndex]) -> Vec<Vec<f64>> {
    q.iter()
        .map(|t| {
            let n = t.num_local();
            let base = t.ao_range.start;
            (0..t.num_components)
                .map(|k| {
                    let mut acc = 0.0;
                    for mu in 0..n {
                        for nu in 0..n {
                            acc += o[(base + mu, base + nu)] * t.get(k, mu, nu);
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Packs per-atom features `[segment][channel][m]` into the batched
/// segment-major layout `[segment][channel][atom][m]`.
pub fn pack_atoms(spec: &IrrepsSpec, atoms: &[Vec<f64>]) -> Vec<f64> {
    let n = atoms.len();
    let mut out = vec![0.0; spec.dim() * n];
    for seg in spec.segments() {
        let w = seg.width();
        for c in 0..seg.n {
            for (a, x) in atoms.iter().enumerate() {
                let src = seg.offset + c * w;
                let dst = n * seg.offset + (c * n + a) * w;
                out[dst..dst + w].copy_from_slice(&x[src..src + w]);
            }
        }
    }
    out
}

/// Inverse of [`pack_atoms`].
pub fn unpack_atoms(spec: &IrrepsSpec, data: &[f64], n: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; spec.dim()]; n];
    for seg in spec.segments() {
        let w = seg.width();
        for c in 0..seg.n {
            for (a, x) in out.iter_mut().enumerate() {
                let dst = seg.offset + c * w;
                let src = n * seg.offset + (c * n + a) * w;
                x[dst..dst + w].copy_from_slice(&data[src..src + w]);
            }
        }
    }
    out
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Gaussian radial basis with evenly spaced centres on `[0, cutoff]`.
pub fn radial_basis(r: f64, count: usize, cutoff: f64) -> Vec<f64> {
    let spacing = cutoff / (count - 1) as f64;
    let gamma = 0.5 / (spacing * spacing);
    (0..count)
        .map(|k| (-gamma * (r - k as f64 * spacing).powi(2)).exp())
        .collect()
}

impl NetworkInput {
    pub fn new(qmm: &QmmSet, aux: &AuxiliaryBasis, config: &ModelConfig) -> Result<Self> {
        let q = three_index_overlap(&qmm.layout, aux);
        Self::with_three_index(qmm, &q, aux.irreps_spec(), config)
    }

    pub fn with_three_index(
        qmm: &QmmSet,
        q: &[AtomThreeIndex],
        aux_spec: IrrepsSpec,
        config: &ModelConfig,
    ) -> Result<Self> {
        let layout = &qmm.layout;
        let n = layout.num_atoms();
        if q.len() != n
            || q.iter()
                .zip(&layout.atom_ranges)
                .any(|(t, r)| t.ao_range != *r || t.num_components != aux_spec.dim())
        {
            return Err(Error::LayoutMismatch(
                "three-index overlaps and QMM layout disagree on AO indexing".into(),
            ));
        }
        if qmm.meta.coordinates.len() != n || layout.num_aos() != qmm.num_aos() {
            return Err(Error::LayoutMismatch(
                "QMM matrices, coordinates and layout disagree in size".into(),
            ));
        }
        if aux_spec != config.aux_spec() {
            return Err(Error::LayoutMismatch(
                "auxiliary basis does not match the model configuration".into(),
            ));
        }
        for ao in &layout.aos {
            if config.shells_per_degree.get(ao.l).copied().unwrap_or(0) <= ao.rank {
                return Err(Error::LayoutMismatch(format!(
                    "AO of degree {} rank {} has no matching weights",
                    ao.l, ao.rank
                )));
            }
        }
        let reduced = qmm
            .matrices()
            .iter()
            .map(|o| pack_atoms(&aux_spec, &diagonal_reduce(o, q)))
            .collect();
        let plan = Arc::new(PairPlan::new(
            qmm.matrices().iter().map(|m| (*m).clone()).collect(),
            layout.atom_ranges.clone(),
            config.n_conv_channels,
            config.n_attention_heads,
        ));
        let xyz = &qmm.meta.coordinates;
        let mut rbf = Vec::with_capacity(plan.pairs.len() * config.n_radial_basis);
        for &(b, a) in &plan.pairs {
            rbf.extend(radial_basis(
                distance(xyz[a], xyz[b]),
                config.n_radial_basis,
                config.rbf_cutoff,
            ));
        }
        let ps = qmm.total_density() * &qmm.s;
        let mulliken = layout
            .atom_ranges
            .iter()
            .zip(&layout.atomic_numbers)
            .map(|(r, &z)| valence_electrons(z) as f64 - r.clone().map(|i| ps[(i, i)]).sum::<f64>())
            .collect();
        let mut coulomb = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    let r = distance(xyz[a], xyz[b]);
                    coulomb[a * n + b] = libm::erf(r / config.electrostatic_r0) / r;
                }
            }
        }
        Ok(NetworkInput {
            atomic_numbers: layout.atomic_numbers.clone(),
            coordinates: xyz.clone(),
            charge: qmm.meta.charge,
            aos: layout.aos.clone(),
            reduced,
            aux_spec,
            plan,
            rbf,
            mulliken,
            coulomb,
        })
    }

    pub fn num_atoms(&self) -> usize {
        self.atomic_numbers.len()
    }
}
