//! Spin-polarized, charge-self-consistent extended-Hückel SCF.
//!
//! The energy functional is
//!
//! ```text
//! E = sum_s Tr(P_s H_core) + 1/2 sum_AB gamma_AB dq_A dq_B - 1/2 sum_A W_A m_A^2 - f . sum_A Z_A R_A
//! ```
//!
//! with Mulliken excess populations `dq_A`, Mulliken spin populations `m_A`
//! and the Klopman-Ohno kernel `gamma`. The Fock matrices are its exact
//! derivatives with respect to `P_alpha` and `P_beta`, so the converged energy
//! is stationary and field derivatives follow from the density.

mod checks;
mod diis;
pub mod params;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::basis::{build_basis, dipole_integrals, overlap_matrix, AoLayout, BasisTable};
use crate::error::{Error, Result};
use crate::system::{valence_electrons, MolecularSystem};

pub use checks::{
    field_gradient, rotate_system_check, rotation_deviation, spin_gaps, RotationReport, SpinGaps,
};
pub use params::{ElementParams, HuckelParams};

use diis::Diis;

/// Identifier written into feature files and checkpoints.
pub const ENGINE_VERSION: &str = "scc-huckel-1";

const DEGENERACY_TOL: f64 = 1e-9;
/// Relative energy increase tolerated before a step is replaced by a line search.
const ENERGY_SLACK: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScfOptions {
    pub mixing: f64,
    /// Linear mixing is used up to and including this iteration, DIIS afterwards.
    pub diis_start: usize,
    pub diis_history: usize,
    pub max_iterations: usize,
    pub density_tol: f64,
    pub params: HuckelParams,
}

impl Default for ScfOptions {
    fn default() -> Self {
        ScfOptions {
            mixing: 0.3,
            diis_start: 5,
            diis_history: 6,
            max_iterations: 200,
            density_tol: 1e-8,
            params: HuckelParams::default(),
        }
    }
}

/// Metadata stored next to the six matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QmmMeta {
    pub charge: i32,
    pub multiplicity: u32,
    pub field: Option<[f64; 3]>,
    pub coordinates: Vec<[f64; 3]>,
    pub engine_version: String,
    pub basis_checksum: String,
}

/// The six quantum-mechanical matrices and their AO layout.
#[derive(Debug, Clone, PartialEq)]
pub struct QmmSet {
    pub f_alpha: DMatrix<f64>,
    pub f_beta: DMatrix<f64>,
    pub p_alpha: DMatrix<f64>,
    pub p_beta: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub h_core: DMatrix<f64>,
    pub layout: AoLayout,
    pub meta: QmmMeta,
}

impl QmmSet {
    pub const NAMES: [&'static str; 6] = ["F_alpha", "F_beta", "P_alpha", "P_beta", "S", "H_core"];

    /// Matrices in the fixed order `(F_a, F_b, P_a, P_b, S, H_core)`.
    pub fn matrices(&self) -> [&DMatrix<f64>; 6] {
        [
            &self.f_alpha,
            &self.f_beta,
            &self.p_alpha,
            &self.p_beta,
            &self.s,
            &self.h_core,
        ]
    }

    pub fn num_aos(&self) -> usize {
        self.s.nrows()
    }

    pub fn total_density(&self) -> DMatrix<f64> {
        &self.p_alpha + &self.p_beta
    }

    pub fn spin_density(&self) -> DMatrix<f64> {
        &self.p_alpha - &self.p_beta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowLevelResult {
    /// Total energy in hartree.
    pub energy: f64,
    pub orbital_energies_alpha: Vec<f64>,
    pub orbital_energies_beta: Vec<f64>,
    pub n_alpha: usize,
    pub n_beta: usize,
    pub mulliken_charges: Vec<f64>,
    pub spin_populations: Vec<f64>,
    pub homo_alpha: Option<f64>,
    pub lumo_alpha: Option<f64>,
    pub homo_beta: Option<f64>,
    pub lumo_beta: Option<f64>,
    /// Electronic plus nuclear dipole about the coordinate origin, atomic units.
    pub dipole: [f64; 3],
    pub converged: bool,
    pub iterations: usize,
    /// Energy of the input density at each iteration.
    pub energy_history: Vec<f64>,
}

impl LowLevelResult {
    /// Frontier levels `(E_a HOMO, E_a LUMO, E_b HOMO, E_b LUMO)`.
    pub fn homo_lumo(&self) -> [Option<f64>; 4] {
        [
            self.homo_alpha,
            self.lumo_alpha,
            self.homo_beta,
            self.lumo_beta,
        ]
    }

    /// Largest energy increase between consecutive iterations from iteration `from` on.
    pub fn max_energy_rise(&self, from: usize) -> f64 {
        self.energy_history
            .windows(2)
            .enumerate()
            .filter(|(i, _)| i + 1 >= from)
            .map(|(_, w)| w[1] - w[0])
            .fold(0.0, f64::max)
    }
}

/// `H_core`: Wolfsberg-Helmholz off-diagonals plus the field coupling.
pub fn core_hamiltonian(
    system: &MolecularSystem,
    layout: &AoLayout,
    s: &DMatrix<f64>,
    dipoles: &[DMatrix<f64>; 3],
    params: &HuckelParams,
) -> Result<DMatrix<f64>> {
    let n = layout.num_aos();
    let mut diag = vec![0.0; n];
    for (i, ao) in layout.aos.iter().enumerate() {
        diag[i] = params.element(layout.atomic_numbers[ao.atom])?.h_shell[ao.l];
    }
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        h[(i, i)] = diag[i];
        for j in 0..i {
            let v = 0.5 * params.k_wh * (diag[i] + diag[j]) * s[(i, j)];
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    if let Some(f) = system.field {
        for (k, d) in dipoles.iter().enumerate() {
            if f[k] != 0.0 {
                h += d * f[k];
            }
        }
    }
    Ok(h)
}

/// Fixed per-molecule quantities shared by every SCF iteration.
struct Context {
    h: DMatrix<f64>,
    s: DMatrix<f64>,
    x: DMatrix<f64>,
    gamma: DMatrix<f64>,
    hund: Vec<f64>,
    zval: Vec<f64>,
    atom_of: Vec<usize>,
    nuclear_field_energy: f64,
}

struct FockBuild {
    fock: [DMatrix<f64>; 2],
    energy: f64,
    excess: Vec<f64>,
    spin: Vec<f64>,
}

impl Context {
    fn populations(&self, p: &DMatrix<f64>) -> Vec<f64> {
        let mut pop = vec![0.0; self.zval.len()];
        for mu in 0..p.nrows() {
            let v: f64 = p
                .row(mu)
                .iter()
                .zip(self.s.column(mu).iter())
                .map(|(a, b)| a * b)
                .sum();
            pop[self.atom_of[mu]] += v;
        }
        pop
    }

    fn fock(&self, p: &[DMatrix<f64>; 2], restricted: bool) -> FockBuild {
        let nat = self.zval.len();
        let total = &p[0] + &p[1];
        let pop = self.populations(&total);
        let excess: Vec<f64> = pop.iter().zip(&self.zval).map(|(a, z)| a - z).collect();
        let spin = if restricted {
            vec![0.0; nat]
        } else {
            self.populations(&(&p[0] - &p[1]))
        };
        let v: Vec<f64> = (0..nat)
            .map(|a| (0..nat).map(|b| self.gamma[(a, b)] * excess[b]).sum())
            .collect();
        let u: Vec<f64> = (0..nat).map(|a| -self.hund[a] * spin[a]).collect();
        let n = self.h.nrows();
        let mut fa = self.h.clone();
        let mut fb = self.h.clone();
        for mu in 0..n {
            let a = self.atom_of[mu];
            for nu in 0..n {
                let b = self.atom_of[nu];
                let s = 0.5 * self.s[(mu, nu)];
                let shift = s * (v[a] + v[b]);
                let spin_shift = s * (u[a] + u[b]);
                fa[(mu, nu)] += shift + spin_shift;
                fb[(mu, nu)] += shift - spin_shift;
            }
        }
        if restricted {
            fb = fa.clone();
        }
        let mut energy = self.nuclear_field_energy;
        energy += p[0].dot(&self.h) + p[1].dot(&self.h);
        for a in 0..nat {
            energy += 0.5 * excess[a] * v[a] - 0.5 * self.hund[a] * spin[a] * spin[a];
        }
        FockBuild {
            fock: [fa, fb],
            energy,
            excess,
            spin,
        }
    }

    /// Orbital energies (ascending) and coefficients of `F C = S C e`.
    fn solve(&self, f: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
        let fp = self.x.transpose() * f * &self.x;
        let fp = (&fp + fp.transpose()) * 0.5;
        let eig = SymmetricEigen::new(fp);
        let order = aufbau_order(eig.eigenvalues.as_slice());
        let n = order.len();
        let mut c = DMatrix::zeros(n, n);
        let mut eps = Vec::with_capacity(n);
        for (k, &i) in order.iter().enumerate() {
            eps.push(eig.eigenvalues[i]);
            c.set_column(k, &eig.eigenvectors.column(i));
        }
        (eps, &self.x * c)
    }
}

/// Ascending order; runs of levels closer than the degeneracy tolerance keep eigensolver order.
fn aufbau_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] - values[idx[end - 1]] < DEGENERACY_TOL {
            end += 1;
        }
        idx[start..end].sort_unstable();
        start = end;
    }
    idx
}

fn density(c: &DMatrix<f64>, nocc: usize) -> DMatrix<f64> {
    let n = c.nrows();
    if nocc == 0 {
        return DMatrix::zeros(n, n);
    }
    let occ = c.columns(0, nocc);
    let p = occ * occ.transpose();
    (&p + p.transpose()) * 0.5
}

fn rms(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let d = a - b;
    (d.norm_squared() / d.len() as f64).sqrt()
}

fn inverse_sqrt(s: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(s.clone());
    let d = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|v| 1.0 / v.sqrt()),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Klopman-Ohno kernel `1 / sqrt(R^2 + ((1/eta_A + 1/eta_B) / 2)^2)`.
pub fn klopman_ohno(r: f64, eta_a: f64, eta_b: f64) -> f64 {
    let c = 0.5 * (1.0 / eta_a + 1.0 / eta_b);
    1.0 / (r * r + c * c).sqrt()
}

/// Runs the SCF with the shipped basis and default options.
pub fn run_scf(system: &MolecularSystem) -> Result<(QmmSet, LowLevelResult)> {
    run_scf_with(system, &BasisTable::minimal(), &ScfOptions::default())
}

pub fn run_scf_with(
    system: &MolecularSystem,
    table: &BasisTable,
    options: &ScfOptions,
) -> Result<(QmmSet, LowLevelResult)> {
    system.validate()?;
    if let Some(eps) = system.dielectric {
        if eps != 1.0 {
            return Err(Error::UnsupportedEnvironment(format!(
                "dielectric {eps}: implicit solvation is not implemented"
            )));
        }
    }
    let (n_alpha, n_beta) = system.spin_counts()?;
    let layout = build_basis(system, table)?;
    let n = layout.num_aos();
    if n_alpha > n {
        return Err(Error::InvariantViolation(format!(
            "{n_alpha} alpha electrons do not fit into {n} orbitals"
        )));
    }
    let s = overlap_matrix(&layout)?;
    let dipoles = dipole_integrals(&layout, [0.0; 3]);
    let params = &options.params;
    let h = core_hamiltonian(system, &layout, &s, &dipoles, params)?;

    let nat = system.num_atoms();
    let mut gamma = DMatrix::zeros(nat, nat);
    let mut hund = vec![0.0; nat];
    let mut zval = vec![0.0; nat];
    for a in 0..nat {
        let pa = params.element(system.atomic_numbers[a])?;
        hund[a] = pa.hund;
        zval[a] = valence_electrons(system.atomic_numbers[a]) as f64;
        for b in 0..nat {
            let pb = params.element(system.atomic_numbers[b])?;
            let r = dist(&system.coordinates[a], &system.coordinates[b]);
            gamma[(a, b)] = klopman_ohno(r, pa.eta, pb.eta);
        }
    }
    let nuclear_field_energy = match system.field {
        Some(f) => -(0..nat)
            .map(|a| zval[a] * (0..3).map(|k| f[k] * system.coordinates[a][k]).sum::<f64>())
            .sum::<f64>(),
        None => 0.0,
    };
    let ctx = Context {
        x: inverse_sqrt(&s),
        h: h.clone(),
        s: s.clone(),
        gamma,
        hund,
        zval: zval.clone(),
        atom_of: layout.aos.iter().map(|a| a.atom).collect(),
        nuclear_field_energy,
    };
    let restricted = system.multiplicity == 1;
    let occ = [n_alpha, n_beta];

    let (_, c0) = ctx.solve(&h);
    let mut p_in = [density(&c0, n_alpha), density(&c0, n_beta)];
    let mut diis = Diis::new(options.diis_history);
    let mut history = Vec::new();
    let mut converged = false;
    let mut last_rms = f64::INFINITY;
    let mut iterations = 0;
    for iter in 1..=options.max_iterations {
        iterations = iter;
        let build = ctx.fock(&p_in, restricted);
        history.push(build.energy);
        let use_diis = iter > options.diis_start;
        let fock = if use_diis {
            let err = [
                commutator(&build.fock[0], &p_in[0], &ctx),
                commutator(&build.fock[1], &p_in[1], &ctx),
            ];
            diis.push(build.fock.clone(), err);
            diis.extrapolate().unwrap_or_else(|| build.fock.clone())
        } else {
            build.fock.clone()
        };
        let p_out = solve_densities(&ctx, &fock, occ, restricted);
        last_rms =
            ((rms(&p_out[0], &p_in[0]).powi(2) + rms(&p_out[1], &p_in[1]).powi(2)) / 2.0).sqrt();
        if last_rms < options.density_tol {
            p_in = p_out;
            converged = true;
            break;
        }
        let weight = if use_diis { 1.0 } else { options.mixing };
        let trial = blend(&p_in, &p_out, weight, restricted);
        if ctx.fock(&trial, restricted).energy
            <= build.energy + ENERGY_SLACK * build.energy.abs().max(1.0)
        {
            p_in = trial;
            continue;
        }
        // The step would raise the energy: fall back to the exact line minimum
        // towards the aufbau density of the current Fock matrices. The energy is
        // quadratic in P, so three numbers determine the whole segment.
        let p_plain = if use_diis {
            solve_densities(&ctx, &build.fock, occ, restricted)
        } else {
            p_out
        };
        let delta = [&p_plain[0] - &p_in[0], &p_plain[1] - &p_in[1]];
        let slope = build.fock[0].dot(&delta[0]) + build.fock[1].dot(&delta[1]);
        let e_full = ctx.fock(&p_plain, restricted).energy;
        let curvature = 2.0 * (e_full - build.energy - slope);
        let lambda = if curvature > 0.0 {
            (-slope / curvature).clamp(0.0, 1.0)
        } else {
            1.0
        };
        p_in = blend(&p_in, &p_plain, lambda, restricted);
    }

    let build = ctx.fock(&p_in, restricted);
    if !converged {
        return Err(Error::ScfNotConverged {
            iterations,
            last_rms,
            last_energy: build.energy,
        });
    }
    history.push(build.energy);
    let (eps_a, _) = ctx.solve(&build.fock[0]);
    let eps_b = if restricted {
        eps_a.clone()
    } else {
        ctx.solve(&build.fock[1]).0
    };
    // Inside a degenerate run the aufbau order may leave the LUMO a rounding
    // error below the HOMO; the pair is then reported as exactly degenerate.
    let frontier = |eps: &[f64], nocc: usize| {
        let homo = if nocc > 0 { Some(eps[nocc - 1]) } else { None };
        let lumo = eps.get(nocc).map(|&l| homo.map_or(l, |h| l.max(h)));
        (homo, lumo)
    };
    let (homo_alpha, lumo_alpha) = frontier(&eps_a, n_alpha);
    let (homo_beta, lumo_beta) = frontier(&eps_b, n_beta);
    let total = &p_in[0] + &p_in[1];
    let mut dipole = [0.0; 3];
    for k in 0..3 {
        let nuclear: f64 = (0..nat).map(|a| zval[a] * system.coordinates[a][k]).sum();
        dipole[k] = nuclear - total.dot(&dipoles[k]);
    }
    let result = LowLevelResult {
        energy: build.energy,
        orbital_energies_alpha: eps_a,
        orbital_energies_beta: eps_b,
        n_alpha,
        n_beta,
        mulliken_charges: build.excess.iter().map(|e| -e).collect(),
        spin_populations: build.spin.clone(),
        homo_alpha,
        lumo_alpha,
        homo_beta,
        lumo_beta,
        dipole,
        converged,
        iterations,
        energy_history: history,
    };
    let [f_alpha, f_beta] = build.fock;
    let [p_alpha, p_beta] = p_in;
    let qmm = QmmSet {
        f_alpha,
        f_beta,
        p_alpha,
        p_beta,
        s,
        h_core: h,
        meta: QmmMeta {
            charge: system.charge,
            multiplicity: system.multiplicity,
            field: system.field,
            coordinates: system.coordinates.clone(),
            engine_version: ENGINE_VERSION.to_string(),
            basis_checksum: table.checksum.clone(),
        },
        layout,
    };
    Ok((qmm, result))
}

fn blend(
    a: &[DMatrix<f64>; 2],
    b: &[DMatrix<f64>; 2],
    w: f64,
    restricted: bool,
) -> [DMatrix<f64>; 2] {
    let pa = &a[0] + (&b[0] - &a[0]) * w;
    let pb = if restricted {
        pa.clone()
    } else {
        &a[1] + (&b[1] - &a[1]) * w
    };
    [pa, pb]
}

fn solve_densities(
    ctx: &Context,
    fock: &[DMatrix<f64>; 2],
    occ: [usize; 2],
    restricted: bool,
) -> [DMatrix<f64>; 2] {
    let (_, ca) = ctx.solve(&fock[0]);
    let pa = density(&ca, occ[0]);
    if restricted {
        return [pa.clone(), pa];
    }
    let (_, cb) = ctx.solve(&fock[1]);
    [pa, density(&cb, occ[1])]
}

/// Orthogonalized commutator `X^T (F P S - S P F) X`, the DIIS error.
fn commutator(f: &DMatrix<f64>, p: &DMatrix<f64>, ctx: &Context) -> DMatrix<f64> {
    let fps = f * p * &ctx.s;
    let e = &fps - fps.transpose();
    ctx.x.transpose() * e * &ctx.x
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h2() -> MolecularSystem {
        MolecularSystem::new(vec![1, 1], vec![[0.0; 3], [0.0, 0.0, 1.4]], 0, 1)
    }

    #[test]
    fn single_hydrogen_core() {
        let s = MolecularSystem::new(vec![1], vec![[0.0; 3]], 0, 2);
        let layout = build_basis(&s, &BasisTable::minimal()).unwrap();
        let sm = overlap_matrix(&layout).unwrap();
        let d = dipole_integrals(&layout, [0.0; 3]);
        let h = core_hamiltonian(&s, &layout, &sm, &d, &HuckelParams::default()).unwrap();
        assert_eq!(h.shape(), (1, 1));
        assert_eq!(h[(0, 0)], ev_to_hartree_local(-13.6));
    }

    fn ev_to_hartree_local(x: f64) -> f64 {
        crate::units::ev_to_hartree(x)
    }

    #[test]
    fn field_enters_linearly() {
        let s0 = h2();
        let s1 = h2().with_field([0.0, 0.0, 0.005]);
        let layout = build_basis(&s0, &BasisTable::minimal()).unwrap();
        let sm = overlap_matrix(&layout).unwrap();
        let d = dipole_integrals(&layout, [0.0; 3]);
        let p = HuckelParams::default();
        let h0 = core_hamiltonian(&s0, &layout, &sm, &d, &p).unwrap();
        let h1 = core_hamiltonian(&s1, &layout, &sm, &d, &p).unwrap();
        let zero = core_hamiltonian(&h2().with_field([0.0; 3]), &layout, &sm, &d, &p).unwrap();
        assert_eq!(zero, h0);
        assert!((&h1 - (&h0 + &d[2] * 0.005)).amax() < 1e-15);
    }

    #[test]
    fn hydrogen_molecule_closed_shell() {
        let (q, r) = run_scf(&h2()).unwrap();
        assert!(r.converged);
        assert_eq!(q.f_alpha, q.f_beta);
        assert_eq!(q.p_alpha, q.p_beta);
        assert!((q.total_density().dot(&q.s) - 2.0).abs() < 1e-10);
        assert!(r.mulliken_charges.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn hydrogen_atom_doublet() {
        let (q, r) = run_scf(&MolecularSystem::new(vec![1], vec![[0.0; 3]], 0, 2)).unwrap();
        assert_eq!((r.n_alpha, r.n_beta), (1, 0));
        assert!((q.spin_density().dot(&q.s) - 1.0).abs() < 1e-10);
        assert!(r.homo_beta.is_none());
        assert!(r.lumo_alpha.is_none());
    }

    #[test]
    fn cation_differs_from_neutral() {
        let (q0, r0) = run_scf(&h2()).unwrap();
        let (q1, r1) = run_scf(&MolecularSystem::new(
            vec![1, 1],
            vec![[0.0; 3], [0.0, 0.0, 1.4]],
            1,
            2,
        ))
        .unwrap();
        assert!((r0.energy - r1.energy).abs() > 1e-3);
        assert!((q0.total_density() - q1.total_density()).norm() > 0.1);
        assert!((q1.total_density().dot(&q1.s) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn dielectric_is_rejected() {
        let mut s = h2();
        s.dielectric = Some(78.4);
        assert!(matches!(run_scf(&s), Err(Error::UnsupportedEnvironment(_))));
        s.dielectric = Some(1.0);
        assert!(run_scf(&s).is_ok());
    }

    #[test]
    fn overfilled_shell_is_rejected() {
        let s = MolecularSystem::new(vec![1], vec![[0.0; 3]], -1, 3);
        assert!(run_scf(&s).is_err());
    }

    #[test]
    fn aufbau_ties_follow_index() {
        assert_eq!(
            aufbau_order(&[0.5, -1.0, 0.5 - 1e-12, 0.2]),
            vec![1, 3, 0, 2]
        );
    }

    #[test]
    fn iteration_cap_reports_diagnostics() {
        let water = MolecularSystem::new(
            vec![8, 1, 1],
            vec![[0.0; 3], [1.43, 1.1, 0.0], [-1.43, 1.1, 0.0]],
            0,
            1,
        );
        let opts = ScfOptions {
            max_iterations: 2,
            ..ScfOptions::default()
        };
        match run_scf_with(&water, &BasisTable::minimal(), &opts) {
            Err(Error::ScfNotConverged {
                iterations,
                last_rms,
                ..
            }) => {
                assert_eq!(iterations, 2);
                assert!(last_rms > 1e-8);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
