//! Self-checks shared by the test suite and `orbitall verify`: gradient
//! correctness of the network, invariance of its predictions and the SCF
//! conservation and rotation laws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::AuxiliaryBasis;
use crate::equivariant::random_rotation;
use crate::error::Result;
use crate::network::{Model, NetworkInput};
use crate::scf::run_scf;
use crate::system::MolecularSystem;

/// Ridders' polynomial extrapolation of central differences of `f` at 0.
/// Returns `(estimate, error estimate)`.
pub fn ridders(f: &impl Fn(f64) -> f64, h0: f64) -> (f64, f64) {
    const CON: f64 = 1.4;
    const N: usize = 10;
    let mut a = [[0.0f64; N]; N];
    let mut h = h0;
    a[0][0] = (f(h) - f(-h)) / (2.0 * h);
    let (mut best, mut err) = (a[0][0], f64::INFINITY);
    for i in 1..N {
        h /= CON;
        a[0][i] = (f(h) - f(-h)) / (2.0 * h);
        let mut fac = CON * CON;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= CON * CON;
            let e = (a[j][i] - a[j - 1][i])
                .abs()
                .max((a[j][i] - a[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = a[j][i];
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= 2.0 * err {
            break;
        }
    }
    (best, err)
}

/// Ridders estimates from starting steps spanning five decades; returns the
/// smaller-step member of the adjacent pair that agrees best. Large steps
/// resolve directions whose effect is tiny but nearly linear, small steps the
/// strongly curved ones, and agreement between two scales guards against a
/// single run converging to a wrong limit.
pub fn directional_fd(f: &impl Fn(f64) -> f64) -> f64 {
    let est = [100.0, 10.0, 1.0, 0.1, 0.01, 0.001].map(|h0| ridders(f, h0).0);
    let k = (0..est.len() - 1)
        .min_by(|&a, &b| {
            let da = (est[a] - est[a + 1]).abs();
            let db = (est[b] - est[b + 1]).abs();
            da.total_cmp(&db)
        })
        .expect("nonempty");
    est[k + 1]
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockCheck {
    pub tensor: String,
    /// Which scalar was differentiated: `"energy"` or `"feature"`.
    pub target: &'static str,
    pub finite_difference: f64,
    pub backprop: f64,
    pub rel_error: f64,
}

/// Relative error, or 0 when both values are at roundoff level relative to the
/// scalar itself (tensors with no path to the output for this molecule).
fn rel_error(fd: f64, bp: f64, value: f64) -> f64 {
    let scale = fd.abs().max(bp.abs());
    if scale <= 1e-13 * value.abs().max(1.0) {
        0.0
    } else {
        (fd - bp).abs() / scale
    }
}

/// A random linear functional of one segment of one intermediate feature.
struct Probe {
    layer: usize,
    range: std::ops::Range<usize>,
    weights: Vec<f64>,
}

impl Probe {
    fn eval(&self, model: &Model, input: &NetworkInput) -> f64 {
        let pass = model.forward(input).expect("checked input");
        let x = &pass.tape.value(pass.layers[self.layer])[self.range.clone()];
        x.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }
}

/// Directional finite differences against backprop for every tensor.
///
/// Many tensors barely move the energy of a small molecule (odd or high-degree
/// channels stay weak), and double-precision differences of the energy then
/// resolve only a few digits. So every tensor is checked on the scalar that is
/// best conditioned for it: the energy or a random functional of one
/// `(layer, segment)` block of intermediate features. The energy is used when
/// its directional derivative is at least `1e-7` of its scale; otherwise the
/// functional with the largest derivative relative to the size of its terms.
pub fn gradient_check(model: &Model, input: &NetworkInput, seed: u64) -> Result<Vec<BlockCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pass = model.forward(input)?;
    let energy = pass.value();
    let n = input.num_atoms();
    let mut probes = Vec::new();
    for layer in 0..pass.layers.len() {
        for seg in model.config.irreps.segments() {
            let range = n * seg.offset..n * (seg.offset + seg.len());
            let s = 1.0 / (range.len() as f64).sqrt();
            let weights = (0..range.len()).map(|_| rng.gen_range(-s..s)).collect();
            probes.push(Probe {
                layer,
                range,
                weights,
            });
        }
    }
    let e_grads = pass.tape.backward(pass.output, &[1.0]).params;
    let mut p_grads = Vec::with_capacity(probes.len());
    let mut p_scale = Vec::with_capacity(probes.len());
    for p in &probes {
        let layer = pass.layers[p.layer];
        let x = pass.tape.slice(layer, p.range.start, p.range.len());
        let w = pass.tape.constant(p.weights.clone());
        let m = pass.tape.mul(x, w, crate::autodiff::Broadcast::Same);
        let total = pass.tape.sum(m);
        p_scale.push(pass.tape.value(m).iter().map(|t| t.abs()).sum::<f64>());
        p_grads.push(pass.tape.backward(total, &[1.0]).params);
    }
    drop(pass);

    let checks = model.params.tensors.par_iter().enumerate().map(|(k, t)| {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (k as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let dir: Vec<f64> = (0..t.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let shifted = |h: f64| {
            let mut m = model.clone();
            for (x, d) in m.params.data[t.offset..t.offset + t.len()]
                .iter_mut()
                .zip(&dir)
            {
                *x += h * d;
            }
            m
        };
        let dot = |g: &[f64]| -> f64 { dir.iter().zip(&g[t.offset..]).map(|(d, g)| d * g).sum() };
        let bp_e = dot(&e_grads);
        let e_scale = energy.abs().max(1.0);
        let best = (0..probes.len())
            .map(|i| (i, dot(&p_grads[i])))
            .max_by(|a, b| {
                let ca = a.1.abs() / p_scale[a.0].max(1e-300);
                let cb = b.1.abs() / p_scale[b.0].max(1e-300);
                ca.total_cmp(&cb)
            });
        let feature = best.filter(|&(i, bp)| {
            bp_e.abs() < 1e-7 * e_scale && bp.abs() / p_scale[i].max(1e-300) > bp_e.abs() / e_scale
        });
        match feature {
            Some((i, bp)) => {
                let fd = directional_fd(&|h| probes[i].eval(&shifted(h), input));
                BlockCheck {
                    tensor: t.name.clone(),
                    target: "feature",
                    finite_difference: fd,
                    backprop: bp,
                    rel_error: rel_error(fd, bp, p_scale[i]),
                }
            }
            None => {
                let fd = directional_fd(&|h| shifted(h).predict(input).expect("checked input"));
                BlockCheck {
                    tensor: t.name.clone(),
                    target: "energy",
                    finite_difference: fd,
                    backprop: bp_e,
                    rel_error: rel_error(fd, bp_e, energy),
                }
            }
        }
    });
    Ok(checks.collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct InvarianceReport {
    pub reference: f64,
    pub max_rotation_rel: f64,
    pub max_permutation_rel: f64,
}

/// Re-featurizes rotated+translated and permuted copies of `system` and compares
/// model predictions with the reference geometry.
pub fn invariance_check(
    model: &Model,
    system: &MolecularSystem,
    aux: &AuxiliaryBasis,
    rotations: usize,
    permutations: usize,
    seed: u64,
) -> Result<InvarianceReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let predict = |s: &MolecularSystem| -> Result<f64> {
        let (qmm, _) = run_scf(s)?;
        model.predict(&NetworkInput::new(&qmm, aux, &model.config)?)
    };
    let e0 = predict(system)?;
    let rel = |e: f64| ((e - e0) / e0).abs();
    let mut max_rotation_rel: f64 = 0.0;
    for _ in 0..rotations {
        let r = random_rotation(&mut rng);
        let t = [0, 1, 2].map(|_| rng.gen_range(-5.0..5.0));
        max_rotation_rel = max_rotation_rel.max(rel(predict(&system.rotated(&r).translated(t))?));
    }
    let mut max_permutation_rel: f64 = 0.0;
    for _ in 0..permutations {
        let mut perm: Vec<usize> = (0..system.num_atoms()).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        max_permutation_rel = max_permutation_rel.max(rel(predict(&system.permuted(&perm))?));
    }
    Ok(InvarianceReport {
        reference: e0,
        max_rotation_rel,
        max_permutation_rel,
    })
}

pub const EQUIVARIANCE_TOL: f64 = 1e-8;
pub const CONSERVATION_TOL: f64 = 1e-8;
pub const ROTATION_INVARIANCE_TOL: f64 = 1e-9;
pub const PERMUTATION_INVARIANCE_TOL: f64 = 1e-12;
pub const GRADIENT_TOL: f64 = 1e-6;

/// Nonplanar open-shell five-atom fixture used by the network checks.
pub fn fixture_molecule() -> MolecularSystem {
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

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    /// Random molecules for the SCF checks; every (charge, multiplicity) pair
    /// in {-1, 0, 1} x {1, 2, 3} is cycled through.
    pub molecules: usize,
    /// Rotations per molecule in the QMM equivariance check.
    pub rotations: usize,
    pub invariance_rotations: usize,
    pub permutations: usize,
    pub gradient_check: bool,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            molecules: 12,
            rotations: 10,
            invariance_rotations: 10,
            permutations: 10,
            gradient_check: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub scf_runs: usize,
    pub equivariance_max: f64,
    pub electron_count_max: f64,
    pub spin_count_max: f64,
    /// Largest |F_alpha - F_beta| or |P_alpha - P_beta| over singlet runs.
    pub closed_shell_max: f64,
    pub invariance: InvarianceReport,
    pub gradient_max_rel: Option<f64>,
    pub violations: Vec<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// The self-check suite behind `orbitall verify`, run against `model`.
pub fn run_suite(model: &Model, aux: &AuxiliaryBasis, opts: &SuiteOptions) -> Result<SuiteReport> {
    use crate::basis::BasisTable;
    use crate::scf::rotate_system_check;
    use crate::scf::ScfOptions;
    use crate::toy::{random_molecule, with_charge_state};

    const STATES: [(i32, u32); 9] = [
        (0, 1),
        (0, 2),
        (0, 3),
        (1, 1),
        (1, 2),
        (1, 3),
        (-1, 1),
        (-1, 2),
        (-1, 3),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let table = BasisTable::minimal();
    let scf_opts = ScfOptions::default();
    let mut violations = Vec::new();
    let mut systems = Vec::new();
    let mut attempts = 0;
    while systems.len() < opts.molecules && attempts < 20 * opts.molecules.max(1) {
        attempts += 1;
        let heavy = rng.gen_range(1..=3);
        let base = random_molecule(&mut rng, heavy, 8);
        let (q, m) = STATES[systems.len() % STATES.len()];
        let sys = with_charge_state(&base, q, m);
        if sys.validate().is_ok() && run_scf(&sys).is_ok() {
            systems.push(sys);
        }
    }
    if systems.len() < opts.molecules {
        violations.push(format!(
            "only {} of {} molecules converged",
            systems.len(),
            opts.molecules
        ));
    }
    let rotations: Vec<_> = (0..systems.len() * opts.rotations)
        .map(|_| random_rotation(&mut rng))
        .collect();

    let per_system: Vec<Result<[f64; 4]>> = systems
        .par_iter()
        .enumerate()
        .map(|(i, sys)| {
            let (q, _) = run_scf(sys)?;
            let n_elec = sys.num_electrons() as f64;
            let two_s = sys.multiplicity as f64 - 1.0;
            let electrons = (q.total_density().dot(&q.s) - n_elec).abs();
            let spin = (q.spin_density().dot(&q.s) - two_s).abs();
            let closed = if sys.multiplicity == 1 {
                (&q.f_alpha - &q.f_beta)
                    .amax()
                    .max((&q.p_alpha - &q.p_beta).amax())
            } else {
                0.0
            };
            let mut eq: f64 = 0.0;
            for r in &rotations[i * opts.rotations..(i + 1) * opts.rotations] {
                eq = eq.max(rotate_system_check(sys, r, &table, &scf_opts)?.max_deviation);
            }
            Ok([eq, electrons, spin, closed])
        })
        .collect();
    let mut maxima = [0.0f64; 4];
    for r in per_system {
        for (m, v) in maxima.iter_mut().zip(r?) {
            *m = m.max(v);
        }
    }
    let [equivariance_max, electron_count_max, spin_count_max, closed_shell_max] = maxima;
    let mut check = |ok: bool, what: String| {
        if !ok {
            violations.push(what);
        }
    };
    check(
        equivariance_max < EQUIVARIANCE_TOL,
        format!("QMM rotation deviation {equivariance_max:.3e}"),
    );
    check(
        electron_count_max < CONSERVATION_TOL,
        format!("electron count deviation {electron_count_max:.3e}"),
    );
    check(
        spin_count_max < CONSERVATION_TOL,
        format!("spin count deviation {spin_count_max:.3e}"),
    );
    check(
        closed_shell_max == 0.0,
        format!("singlet alpha/beta difference {closed_shell_max:.3e}"),
    );

    let fixture = fixture_molecule();
    let invariance = invariance_check(
        model,
        &fixture,
        aux,
        opts.invariance_rotations,
        opts.permutations,
        opts.seed,
    )?;
    check(
        invariance.max_rotation_rel < ROTATION_INVARIANCE_TOL,
        format!("rotation invariance {:.3e}", invariance.max_rotation_rel),
    );
    check(
        invariance.max_permutation_rel < PERMUTATION_INVARIANCE_TOL,
        format!(
            "permutation invariance {:.3e}",
            invariance.max_permutation_rel
        ),
    );
    let gradient_max_rel = if opts.gradient_check {
        let (qmm, _) = run_scf(&fixture)?;
        let input = NetworkInput::new(&qmm, aux, &model.config)?;
        let blocks = gradient_check(model, &input, opts.seed)?;
        let worst = blocks.iter().map(|b| b.rel_error).fold(0.0, f64::max);
        for b in blocks.iter().filter(|b| !(b.rel_error < GRADIENT_TOL)) {
            check(
                false,
                format!("gradient of `{}` off by {:.3e}", b.tensor, b.rel_error),
            );
        }
        Some(worst)
    } else {
        None
    };
    Ok(SuiteReport {
        scf_runs: systems.len() * (1 + 2 * opts.rotations),
        equivariance_max,
        electron_count_max,
        spin_count_max,
        closed_shell_max,
        invariance,
        gradient_max_rel,
        violations,
    })
}
