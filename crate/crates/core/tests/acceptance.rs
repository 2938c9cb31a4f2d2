//! Acceptance checks, one line per criterion. Runs without the test harness so
//! every criterion reports even when an earlier one fails.

use std::f64::consts::PI;
use std::time::Instant;

use num_complex::Complex64;
use orbitall::basis::{AuxiliaryBasis, BasisTable};
use orbitall::equivariant::wigner::{apply3, matmul3};
use orbitall::equivariant::{
    cg_real, random_rotation, real_sph_harm_vec, RotationRep, WignerBlock,
};
use orbitall::network::{Model, ModelConfig, NetworkInput};
use orbitall::scf::{
    field_gradient, rotation_deviation, run_scf, run_scf_with, spin_gaps, HuckelParams, QmmSet,
    ScfOptions,
};
use orbitall::system::MolecularSystem;
use orbitall::toy::{
    random_molecule, toy_dataset, with_charge_state, ToyOptions, HIGH_LEVEL_PERTURBATION,
};
use orbitall::training::{evaluate, smooth_l1, train, DeltaLabel, Mode, Sample, TrainConfig};
use orbitall::units::{CHEMICAL_ACCURACY_MEV, HARTREE_TO_EV};
use orbitall::verify::{fixture_molecule, gradient_check, invariance_check};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn aux() -> AuxiliaryBasis {
    AuxiliaryBasis::for_table(&BasisTable::minimal())
}

fn water() -> MolecularSystem {
    MolecularSystem::new(
        vec![8, 1, 1],
        vec![[0.0, 0.0, 0.1], [1.43, 1.1, 0.0], [-1.45, 1.08, 0.02]],
        0,
        1,
    )
}

/// Random H/C/N/O molecules (at most 8 atoms, at least 3) that converge in
/// the given charge/multiplicity state.
fn molecules(rng: &mut ChaCha8Rng, count: usize, state: (i32, u32)) -> Vec<MolecularSystem> {
    let mut out = Vec::new();
    while out.len() < count {
        let heavy = rng.gen_range(1..=3);
        let base = random_molecule(rng, heavy, 8);
        if base.num_atoms() < 3 {
            continue;
        }
        let mut s = base.clone();
        s.charge = state.0;
        s.multiplicity = state.1;
        if s.validate().is_ok() && run_scf(&s).is_ok() {
            out.push(s);
        }
    }
    out
}

fn qmm_equivariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let states = [(0, 1), (0, 2), (1, 2), (-1, 2), (0, 3)];
    let systems: Vec<MolecularSystem> = (0..10)
        .flat_map(|i| molecules(&mut rng, 1, states[i % states.len()]))
        .collect();
    let mut worst: f64 = 0.0;
    for s in &systems {
        let (q0, _) = run_scf(s).unwrap();
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            let (q1, _) = run_scf(&s.rotated(&r)).unwrap();
            worst = worst.max(rotation_deviation(&q0, &q1, &r).unwrap().max_deviation);
        }
    }
    outcome(
        worst < 1e-8,
        format!(
            "max block deviation {worst:.2e} over {} molecules x 100 rotations (< 1e-8)",
            systems.len()
        ),
    )
}

fn corpus() -> Vec<MolecularSystem> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut out = Vec::new();
    for q in [-1, 0, 1] {
        for m in [1, 2, 3] {
            let mut tries = 0;
            while out
                .iter()
                .filter(|s: &&MolecularSystem| (s.charge, s.multiplicity) == (q, m))
                .count()
                < 4
                && tries < 200
            {
                tries += 1;
                let heavy = rng.gen_range(1..=3);
                let s = with_charge_state(&random_molecule(&mut rng, heavy, 8), q, m);
                if (s.charge, s.multiplicity) == (q, m) && s.num_atoms() >= 3 {
                    out.push(s);
                }
            }
        }
    }
    out
}

fn conservation(runs: &[(MolecularSystem, QmmSet)]) -> Outcome {
    let (mut dn, mut ds) = (0.0f64, 0.0f64);
    let mut states = std::collections::BTreeSet::new();
    for (s, q) in runs {
        dn = dn.max((q.total_density().dot(&q.s) - s.num_electrons() as f64).abs());
        ds = ds.max((q.spin_density().dot(&q.s) - (s.multiplicity as f64 - 1.0)).abs());
        states.insert((s.charge, s.multiplicity));
    }
    outcome(
        dn < 1e-8 && ds < 1e-8 && states.len() == 9,
        format!(
            "{} converged runs over {} (Q, 2S+1) states: |Tr(P S) - N| <= {dn:.2e}, |Tr((Pa - Pb) S) - 2S| <= {ds:.2e} (< 1e-8)",
            runs.len(),
            states.len()
        ),
    )
}

fn closed_shell(runs: &[(MolecularSystem, QmmSet)]) -> Outcome {
    let singlets: Vec<&QmmSet> = runs
        .iter()
        .filter(|(s, _)| s.multiplicity == 1)
        .map(|r| &r.1)
        .collect();
    let worst = singlets
        .iter()
        .map(|q| {
            (&q.f_alpha - &q.f_beta)
                .amax()
                .max((&q.p_alpha - &q.p_beta).amax())
        })
        .fold(0.0, f64::max);
    outcome(
        worst == 0.0 && !singlets.is_empty(),
        format!(
            "{} singlet runs, max |Fa - Fb|, |Pa - Pb| = {worst:e} (exactly 0)",
            singlets.len()
        ),
    )
}

fn end_to_end_invariance() -> Outcome {
    let model = Model::new_random(ModelConfig::default(), 13).unwrap();
    let r = invariance_check(&model, &fixture_molecule(), &aux(), 100, 20, 17).unwrap();
    outcome(
        r.max_rotation_rel < 1e-9 && r.max_permutation_rel < 1e-12,
        format!(
            "default config, 100 roto-translations {:.2e} (< 1e-9), 20 permutations {:.2e} (< 1e-12)",
            r.max_rotation_rel, r.max_permutation_rel
        ),
    )
}

fn gradients() -> Outcome {
    let model = Model::new_random(ModelConfig::default(), 21).unwrap();
    let (qmm, _) = run_scf(&fixture_molecule()).unwrap();
    let input = NetworkInput::new(&qmm, &aux(), &model.config).unwrap();
    let checks = gradient_check(&model, &input, 3).unwrap();
    let worst = checks
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .unwrap();
    outcome(
        checks.iter().all(|c| c.rel_error < 1e-6),
        format!(
            "{} parameter blocks on the 5-atom fixture, worst `{}` {:.2e} (< 1e-6)",
            checks.len(),
            worst.tensor,
            worst.rel_error
        ),
    )
}

fn parameter_count() -> Outcome {
    let n = Model::new(ModelConfig::default(), 0)
        .unwrap()
        .parameter_count() as f64;
    let dev = (n - 2.1e6) / 2.1e6;
    outcome(
        dev.abs() <= 0.1,
        format!("{n} learnable parameters, {:+.1}% from 2.1M", 100.0 * dev),
    )
}

fn fact(n: i64) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Wigner 3j symbol from the Racah sum.
fn three_j(j1: i64, j2: i64, j3: i64, m1: i64, m2: i64, m3: i64) -> f64 {
    if m1 + m2 + m3 != 0 || j3 < (j1 - j2).abs() || j3 > j1 + j2 {
        return 0.0;
    }
    if m1.abs() > j1 || m2.abs() > j2 || m3.abs() > j3 {
        return 0.0;
    }
    let tri =
        fact(j1 + j2 - j3) * fact(j1 - j2 + j3) * fact(-j1 + j2 + j3) / fact(j1 + j2 + j3 + 1);
    let pre = (tri
        * fact(j1 + m1)
        * fact(j1 - m1)
        * fact(j2 + m2)
        * fact(j2 - m2)
        * fact(j3 + m3)
        * fact(j3 - m3))
    .sqrt();
    let kmin = 0.max(j2 - j3 - m1).max(j1 - j3 + m2);
    let kmax = (j1 + j2 - j3).min(j1 - m1).min(j2 + m2);
    let sum: f64 = (kmin..=kmax)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign / (fact(k)
                * fact(j3 - j2 + k + m1)
                * fact(j3 - j1 + k - m2)
                * fact(j1 + j2 - j3 - k)
                * fact(j1 - k - m1)
                * fact(j2 - k + m2))
        })
        .sum();
    let phase = if (j1 - j2 - m3).rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    };
    phase * pre * sum
}

fn cg_from_3j(l1: i64, m1: i64, l2: i64, m2: i64, l: i64, m: i64) -> f64 {
    let phase = if (l1 - l2 + m).rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    };
    phase * ((2 * l + 1) as f64).sqrt() * three_j(l1, l2, l, m1, m2, -m)
}

/// Real harmonics in terms of complex ones: entry `[m][mu]`, both offset by `l`.
fn real_to_complex(l: i64) -> Vec<Vec<Complex64>> {
    let d = (2 * l + 1) as usize;
    let mut u = vec![vec![Complex64::new(0.0, 0.0); d]; d];
    let h = 0.5f64.sqrt();
    let at = |m: i64| (m + l) as usize;
    u[at(0)][at(0)] = Complex64::new(1.0, 0.0);
    for m in 1..=l {
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        u[at(m)][at(-m)] = Complex64::new(h, 0.0);
        u[at(m)][at(m)] = Complex64::new(sign * h, 0.0);
        u[at(-m)][at(-m)] = Complex64::new(0.0, h);
        u[at(-m)][at(m)] = Complex64::new(0.0, -sign * h);
    }
    u
}

/// Real CG tensor `[m][m1][m2]` by transforming the complex one, with the
/// library's normalization: real or imaginary part, first nonzero positive.
fn real_cg_oracle(l1: usize, l2: usize, l: usize) -> Vec<f64> {
    let (a, b, c) = (l1 as i64, l2 as i64, l as i64);
    let (u1, u2, u) = (real_to_complex(a), real_to_complex(b), real_to_complex(c));
    let mut out = Vec::new();
    for m in -c..=c {
        for m1 in -a..=a {
            for m2 in -b..=b {
                let mut acc = Complex64::new(0.0, 0.0);
                for mu1 in -a..=a {
                    for mu2 in -b..=b {
                        let mu = mu1 + mu2;
                        if mu.abs() > c {
                            continue;
                        }
                        acc += u[(m + c) as usize][(mu + c) as usize]
                            * u1[(m1 + a) as usize][(mu1 + a) as usize].conj()
                            * u2[(m2 + b) as usize][(mu2 + b) as usize].conj()
                            * cg_from_3j(a, mu1, b, mu2, c, mu);
                    }
                }
                out.push(acc);
            }
        }
    }
    let re: f64 = out.iter().map(|z| z.re * z.re).sum();
    let im: f64 = out.iter().map(|z| z.im * z.im).sum();
    let mut v: Vec<f64> = out
        .iter()
        .map(|z| if re >= im { z.re } else { z.im })
        .collect();
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-14) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    v
}

/// Integral of products of three real harmonics by composite Simpson in
/// `cos(theta)` and the trapezoid rule in `phi`, returned per `(m, m1, m2)`.
fn triple_products(l1: usize, l2: usize, l: usize) -> Vec<f64> {
    let (d1, d2, d) = (2 * l1 + 1, 2 * l2 + 1, 2 * l + 1);
    let n_theta = 600;
    let n_phi = 2 * (l1 + l2 + l) + 4;
    let mut acc = vec![0.0; d * d1 * d2];
    for i in 0..=n_theta {
        let z = -1.0 + 2.0 * i as f64 / n_theta as f64;
        let w_z = (2.0 / n_theta as f64 / 3.0)
            * if i == 0 || i == n_theta {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
        let st = (1.0 - z * z).max(0.0).sqrt();
        for k in 0..n_phi {
            let phi = 2.0 * PI * k as f64 / n_phi as f64;
            let v = if st == 0.0 {
                [1e-300, 0.0, z]
            } else {
                [st * phi.cos(), st * phi.sin(), z]
            };
            let w = w_z * 2.0 * PI / n_phi as f64;
            let (y1, y2, y) = (
                real_sph_harm_vec(l1, v),
                real_sph_harm_vec(l2, v),
                real_sph_harm_vec(l, v),
            );
            for m in 0..d {
                for m1 in 0..d1 {
                    for m2 in 0..d2 {
                        acc[(m * d1 + m1) * d2 + m2] += w * y[m] * y1[m1] * y2[m2];
                    }
                }
            }
        }
    }
    acc
}

fn cg_and_wigner() -> Outcome {
    let lmax = ModelConfig::default().irreps.lmax();
    let (mut complex_dev, mut quad_dev, mut equiv_dev) = (0.0f64, 0.0f64, 0.0f64);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rot = random_rotation(&mut rng);
    let rep = RotationRep::new(rot, lmax).unwrap();
    for l1 in 0..=lmax {
        for l2 in 0..=lmax {
            for l in l1.abs_diff(l2)..=(l1 + l2).min(lmax) {
                let slice = cg_real::<f64>(l1, l2, l).unwrap();
                for (a, b) in slice.dense.iter().zip(real_cg_oracle(l1, l2, l)) {
                    complex_dev = complex_dev.max((a - b).abs());
                }
                if (l1 + l2 + l) % 2 == 0 {
                    let kappa = ((2 * l1 + 1) as f64 * (2 * l2 + 1) as f64
                        / (4.0 * PI * (2 * l + 1) as f64))
                        .sqrt()
                        * cg_from_3j(l1 as i64, 0, l2 as i64, 0, l as i64, 0);
                    let g = triple_products(l1, l2, l);
                    let k = (0..g.len())
                        .max_by(|&i, &j| g[i].abs().total_cmp(&g[j].abs()))
                        .unwrap();
                    let sign = (g[k] * slice.dense[k]).signum();
                    for (gi, ci) in g.iter().zip(&slice.dense) {
                        quad_dev = quad_dev.max((gi - sign * kappa.abs() * ci).abs());
                    }
                }
                // coupling commutes with rotation
                let x1: Vec<f64> = (0..2 * l1 + 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let x2: Vec<f64> = (0..2 * l2 + 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let (mut r1, mut r2, mut r) = (
                    vec![0.0; x1.len()],
                    vec![0.0; x2.len()],
                    vec![0.0; 2 * l + 1],
                );
                rep.block(l1).apply(&x1, &mut r1);
                rep.block(l2).apply(&x2, &mut r2);
                rep.block(l).apply(&slice.couple(&x1, &x2), &mut r);
                for (a, b) in r.iter().zip(slice.couple(&r1, &r2)) {
                    equiv_dev = equiv_dev.max((a - b).abs());
                }
            }
        }
    }
    let (mut hom_dev, mut def_dev, mut orth_dev) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let (ra, rb) = (random_rotation(&mut rng), random_rotation(&mut rng));
        let (a, b) = (
            RotationRep::new(ra, 6).unwrap(),
            RotationRep::new(rb, 6).unwrap(),
        );
        let ab = RotationRep::new(matmul3(&ra, &rb), 6).unwrap();
        for l in 0..=6 {
            let prod = a.block(l).matmul(b.block(l));
            for (x, y) in prod.data.iter().zip(&ab.block(l).data) {
                hom_dev = hom_dev.max((x - y).abs());
            }
            let gram = a.block(l).matmul(&a.block(l).transpose());
            for (x, y) in gram.data.iter().zip(&WignerBlock::<f64>::identity(l).data) {
                orth_dev = orth_dev.max((x - y).abs());
            }
            for _ in 0..10 {
                let v = [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ];
                let mut lhs = vec![0.0; 2 * l + 1];
                a.block(l).apply(&real_sph_harm_vec(l, v), &mut lhs);
                for (x, y) in lhs.iter().zip(real_sph_harm_vec(l, apply3(&ra, v))) {
                    def_dev = def_dev.max((x - y).abs());
                }
            }
        }
    }
    outcome(
        complex_dev < 1e-12 && quad_dev < 1e-6 && hom_dev < 1e-10 && def_dev < 1e-10 && orth_dev < 1e-10 && equiv_dev < 1e-10,
        format!(
            "CG vs complex oracle {complex_dev:.1e} (< 1e-12), vs quadrature {quad_dev:.1e} (< 1e-6), coupling equivariance {equiv_dev:.1e}; \
             Wigner homomorphism {hom_dev:.1e}, D Y(v) = Y(Rv) {def_dev:.1e}, orthogonality {orth_dev:.1e} (< 1e-10, l <= 6)"
        ),
    )
}

fn samples(records: &[orbitall::toy::ToyRecord], cfg: &ModelConfig, mode: Mode) -> Vec<Sample> {
    let aux = aux();
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let y_low = match mode {
                Mode::Delta => r.low.energy * HARTREE_TO_EV,
                Mode::Direct => 0.0,
            };
            Sample {
                id: format!("m{i}"),
                input: NetworkInput::new(&r.qmm, &aux, cfg).unwrap(),
                label: DeltaLabel::new(r.high_energy_ev, y_low, r.system.species()),
            }
        })
        .collect()
}

fn toy_delta_learning() -> Outcome {
    let records = toy_dataset(&ToyOptions {
        count: 64,
        seed: 7,
        ..ToyOptions::default()
    });
    let cfg = ModelConfig::scaled(64);
    let mut mae = [0.0; 2];
    let mut spread = 0.0;
    for (k, mode) in [Mode::Delta, Mode::Direct].into_iter().enumerate() {
        let all = samples(&records, &cfg, mode);
        let (tr, rest) = all.split_at(48);
        let (val, test) = rest.split_at(8);
        let tc = TrainConfig {
            epochs: Some(300),
            warmup_epochs: 100,
            cosine_epochs: 200,
            batch_size: 8,
            max_lr: 5e-4,
            mode,
            ..TrainConfig::default()
        };
        let out = train(&tc, Model::new(cfg.clone(), 1).unwrap(), tr, val, |_, _| {}).unwrap();
        mae[k] = evaluate(&out.best, test).unwrap().mae_mev;
        if mode == Mode::Delta {
            let mean = test.iter().map(|s| s.label.delta).sum::<f64>() / test.len() as f64;
            spread = 1000.0
                * (test
                    .iter()
                    .map(|s| (s.label.delta - mean).powi(2))
                    .sum::<f64>()
                    / test.len() as f64)
                    .sqrt();
        }
    }
    outcome(
        mae[0] < 0.1 * spread && mae[0] <= mae[1],
        format!(
            "held-out MAE delta {:.1} meV = {:.1}% of label std {spread:.1} meV (< 10%), direct {:.1} meV",
            mae[0],
            100.0 * mae[0] / spread,
            mae[1]
        ),
    )
}

fn spin_charge_discrimination() -> Outcome {
    let table = BasisTable::minimal();
    let high = ScfOptions {
        params: HuckelParams::default().perturbed(HIGH_LEVEL_PERTURBATION),
        ..ScfOptions::default()
    };
    let cfg = ModelConfig::scaled(32);
    let aux = aux();
    let states = [(0, 1), (1, 2), (-1, 2), (0, 3)];
    let mut dens = Vec::new();
    let mut set = Vec::new();
    for (q, m) in states {
        let s = with_charge_state(&water(), q, m);
        let (qmm, low) = run_scf(&s).unwrap();
        let (_, hi) = run_scf_with(&s, &table, &high).unwrap();
        dens.push(qmm.total_density());
        set.push(Sample {
            id: format!("q{q}m{m}"),
            input: NetworkInput::new(&qmm, &aux, &cfg).unwrap(),
            label: DeltaLabel::new(
                hi.energy * HARTREE_TO_EV,
                low.energy * HARTREE_TO_EV,
                s.species(),
            ),
        });
    }
    let mut min_dp = f64::INFINITY;
    for i in 0..dens.len() {
        for j in 0..i {
            min_dp = min_dp.min((&dens[i] - &dens[j]).norm());
        }
    }
    let tc = TrainConfig {
        epochs: Some(300),
        warmup_epochs: 50,
        cosine_epochs: 250,
        batch_size: 4,
        max_lr: 5e-4,
        ..TrainConfig::default()
    };
    let out = train(&tc, Model::new(cfg, 5).unwrap(), &set, &[], |_, _| {}).unwrap();
    let eval = evaluate(&out.best, &set).unwrap();
    let worst = eval
        .predictions
        .iter()
        .map(|p| p.error().abs() * 1000.0)
        .fold(0.0, f64::max);
    let mut labels: Vec<f64> = set.iter().map(|s| s.label.y_target).collect();
    labels.sort_by(f64::total_cmp);
    let min_gap = labels
        .windows(2)
        .map(|w| (w[1] - w[0]) * 1000.0)
        .fold(f64::INFINITY, f64::min);
    outcome(
        min_dp > 1e-3 && worst < CHEMICAL_ACCURACY_MEV,
        format!(
            "water at (Q, 2S+1) = (0,1) (+1,2) (-1,2) (0,3): min |dP| {min_dp:.3} (> 1e-3); trained model max error \
             {worst:.2} meV (< {CHEMICAL_ACCURACY_MEV} meV) with labels at least {min_gap:.0} meV apart"
        ),
    )
}

fn field_response() -> Outcome {
    let table = BasisTable::minimal();
    let opts = ScfOptions::default();
    let sys = water();
    let (_, r0) = run_scf(&sys).unwrap();
    let (_, rf) = run_scf(&sys.clone().with_field([0.0, 0.0, 0.005])).unwrap();
    let shift = (rf.energy - r0.energy).abs();
    let g = field_gradient(&sys, 1e-4, &table, &opts).unwrap();
    let dev = (0..3)
        .map(|k| (g[k] + r0.dipole[k]).abs())
        .fold(0.0, f64::max);
    outcome(
        shift > 1e-6 && dev < 1e-5,
        format!("water, |f| = 0.005 au: |dE| = {shift:.2e} Eh (> 1e-6); |dE/df + mu| <= {dev:.2e} (< 1e-5)"),
    )
}

fn spin_gap_arithmetic() -> Outcome {
    let g = spin_gaps(-10.0, -11.0, -10.5, -10.75);
    let z = spin_gaps(-3.0, -3.0, -3.0, -3.0);
    let pass = g.singlet == 1.0
        && g.triplet == 0.25
        && g.adiabatic == 0.5
        && (z.singlet, z.triplet, z.adiabatic) == (0.0, 0.0, 0.0);
    outcome(
        pass,
        format!(
            "gaps ({}, {}, {}), all-equal case ({}, {}, {})",
            g.singlet, g.triplet, g.adiabatic, z.singlet, z.triplet, z.adiabatic
        ),
    )
}

fn constants() -> Outcome {
    let lr = TrainConfig::default().lr(100.0);
    let loss = smooth_l1(2.0, 1.0).0;
    outcome(
        lr == 5e-4 && loss == 1.5 && CHEMICAL_ACCURACY_MEV == 43.4,
        format!("lr(100) = {lr:e}, smooth-L1(2, 1) = {loss}, chemical accuracy {CHEMICAL_ACCURACY_MEV} meV"),
    )
}

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() {
    let mut scf_runs = Vec::new();
    for s in corpus() {
        if let Ok((q, _)) = run_scf(&s) {
            scf_runs.push((s, q));
        }
    }
    let criteria: Vec<(&str, Criterion)> = vec![
        ("QMM equivariance", Box::new(qmm_equivariance)),
        ("conservation", Box::new(|| conservation(&scf_runs))),
        (
            "closed-shell reduction",
            Box::new(|| closed_shell(&scf_runs)),
        ),
        ("end-to-end invariance", Box::new(end_to_end_invariance)),
        ("gradient correctness", Box::new(gradients)),
        ("parameter count", Box::new(parameter_count)),
        ("CG/Wigner oracles", Box::new(cg_and_wigner)),
        ("toy delta-learning", Box::new(toy_delta_learning)),
        (
            "spin/charge discrimination",
            Box::new(spin_charge_discrimination),
        ),
        ("field response", Box::new(field_response)),
        ("spin-gap utility", Box::new(spin_gap_arithmetic)),
        ("schedule/loss constants", Box::new(constants)),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let t = Instant::now();
        let o = check();
        println!(
            "criterion {:>2} {}: {} ({:.1} s) {}",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
