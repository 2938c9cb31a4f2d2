//! Overlap and dipole integrals by McMurchie-Davidson Hermite expansion.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::basis::{AoLayout, GaussianShell};
use crate::error::{Error, Result};

/// Smallest overlap eigenvalue accepted before the basis counts as linearly dependent.
pub const LINEAR_DEPENDENCE_THRESHOLD: f64 = 1e-7;

/// `r^l Y_lm` as a Cartesian polynomial: per `m`, a list of `(coefficient, [i, j, k])`.
pub(crate) fn solid_harmonic(l: usize) -> Vec<Vec<(f64, [usize; 3])>> {
    match l {
        0 => vec![vec![(0.5 / PI.sqrt(), [0, 0, 0])]],
        1 => {
            let c = (3.0 / (4.0 * PI)).sqrt();
            vec![
                vec![(c, [0, 1, 0])],
                vec![(c, [0, 0, 1])],
                vec![(c, [1, 0, 0])],
            ]
        }
        2 => {
            let a = 0.5 * (15.0 / PI).sqrt();
            let b = 0.25 * (5.0 / PI).sqrt();
            let c = 0.25 * (15.0 / PI).sqrt();
            vec![
                vec![(a, [1, 1, 0])],
                vec![(a, [0, 1, 1])],
                vec![(2.0 * b, [0, 0, 2]), (-b, [2, 0, 0]), (-b, [0, 2, 0])],
                vec![(a, [1, 0, 1])],
                vec![(c, [2, 0, 0]), (-c, [0, 2, 0])],
            ]
        }
        _ => panic!("solid harmonics implemented for l <= 2"),
    }
}

const IMAX: usize = 3;
const TMAX: usize = 2 * IMAX;

/// Hermite expansion coefficients `E^{ij}_t` along one axis for a primitive pair.
struct Hermite {
    e: [[[f64; TMAX + 1]; IMAX + 1]; IMAX + 1],
}

impl Hermite {
    fn new(a: f64, b: f64, qx: f64) -> Self {
        let p = a + b;
        let mu = a * b / p;
        let xpa = -b * qx / p;
        let xpb = a * qx / p;
        let mut e = [[[0.0; TMAX + 1]; IMAX + 1]; IMAX + 1];
        e[0][0][0] = (-mu * qx * qx).exp();
        let get =
            |e: &[[[f64; TMAX + 1]; IMAX + 1]; IMAX + 1], i: usize, j: usize, t: i64| -> f64 {
                if t < 0 || t as usize > i + j {
                    0.0
                } else {
                    e[i][j][t as usize]
                }
            };
        for i in 0..=IMAX {
            for j in 0..=IMAX {
                if i == 0 && j == 0 {
                    continue;
                }
                for t in 0..=(i + j) {
                    let ti = t as i64;
                    e[i][j][t] = if j == 0 {
                        get(&e, i - 1, 0, ti - 1) / (2.0 * p)
                            + xpa * get(&e, i - 1, 0, ti)
                            + (t + 1) as f64 * get(&e, i - 1, 0, ti + 1)
                    } else {
                        get(&e, i, j - 1, ti - 1) / (2.0 * p)
                            + xpb * get(&e, i, j - 1, ti)
                            + (t + 1) as f64 * get(&e, i, j - 1, ti + 1)
                    };
                }
            }
        }
        Hermite { e }
    }
}

/// Per-axis factors for one primitive pair: overlap and first moment about `origin`.
struct PairAxes {
    overlap: [[[f64; IMAX + 1]; IMAX + 1]; 3],
    moment: [[[f64; IMAX + 1]; IMAX + 1]; 3],
}

fn pair_axes(a: f64, ca: &[f64; 3], b: f64, cb: &[f64; 3], origin: &[f64; 3]) -> PairAxes {
    let p = a + b;
    let s = (PI / p).sqrt();
    let mut overlap = [[[0.0; IMAX + 1]; IMAX + 1]; 3];
    let mut moment = [[[0.0; IMAX + 1]; IMAX + 1]; 3];
    for k in 0..3 {
        let h = Hermite::new(a, b, ca[k] - cb[k]);
        let xpc = (a * ca[k] + b * cb[k]) / p - origin[k];
        for i in 0..=IMAX {
            for j in 0..=IMAX {
                overlap[k][i][j] = h.e[i][j][0] * s;
                moment[k][i][j] = (h.e[i][j][1] + xpc * h.e[i][j][0]) * s;
            }
        }
    }
    PairAxes { overlap, moment }
}

/// Shell-pair blocks `[overlap, x, y, z]`, each `(2la+1) x (2lb+1)` row-major.
fn shell_pair(
    sa: &GaussianShell,
    sb: &GaussianShell,
    origin: &[f64; 3],
    with_dipole: bool,
) -> Vec<Vec<f64>> {
    let (ha, hb) = (solid_harmonic(sa.l), solid_harmonic(sb.l));
    let (na, nb) = (sa.size(), sb.size());
    let nblocks = if with_dipole { 4 } else { 1 };
    let mut out = vec![vec![0.0; na * nb]; nblocks];
    for (&ea, &da) in sa.exponents.iter().zip(&sa.coefficients) {
        for (&eb, &db) in sb.exponents.iter().zip(&sb.coefficients) {
            let ax = pair_axes(ea, &sa.center, eb, &sb.center, origin);
            let w = da * db;
            for (ma, pa) in ha.iter().enumerate() {
                for (mb, pb) in hb.iter().enumerate() {
                    let mut acc = [0.0; 4];
                    for &(ca, ia) in pa {
                        for &(cb, ib) in pb {
                            let sx = ax.overlap[0][ia[0]][ib[0]];
                            let sy = ax.overlap[1][ia[1]][ib[1]];
                            let sz = ax.overlap[2][ia[2]][ib[2]];
                            let c = ca * cb;
                            acc[0] += c * sx * sy * sz;
                            if with_dipole {
                                acc[1] += c * ax.moment[0][ia[0]][ib[0]] * sy * sz;
                                acc[2] += c * sx * ax.moment[1][ia[1]][ib[1]] * sz;
                                acc[3] += c * sx * sy * ax.moment[2][ia[2]][ib[2]];
                            }
                        }
                    }
                    for (blk, v) in out.iter_mut().zip(acc) {
                        blk[ma * nb + mb] += w * v;
                    }
                }
            }
        }
    }
    out
}

fn assemble(layout: &AoLayout, origin: &[f64; 3], with_dipole: bool) -> Vec<DMatrix<f64>> {
    let n = layout.num_aos();
    let nblocks = if with_dipole { 4 } else { 1 };
    let mut mats = vec![DMatrix::zeros(n, n); nblocks];
    for (i, sa) in layout.shells.iter().enumerate() {
        for (j, sb) in layout.shells.iter().enumerate().skip(i) {
            let blocks = shell_pair(sa, sb, origin, with_dipole);
            let (oa, ob) = (layout.shell_offsets[i], layout.shell_offsets[j]);
            let nb = sb.size();
            for (mat, blk) in mats.iter_mut().zip(&blocks) {
                for a in 0..sa.size() {
                    for b in 0..nb {
                        let v = blk[a * nb + b];
                        mat[(oa + a, ob + b)] = v;
                        mat[(ob + b, oa + a)] = v;
                    }
                }
            }
        }
    }
    mats
}

/// Overlap matrix without the linear-dependence check.
pub fn overlap_matrix_unchecked(layout: &AoLayout) -> DMatrix<f64> {
    assemble(layout, &[0.0; 3], false).pop().unwrap()
}

/// Overlap matrix `S`; fails when its smallest eigenvalue drops below the threshold.
pub fn overlap_matrix(layout: &AoLayout) -> Result<DMatrix<f64>> {
    let s = overlap_matrix_unchecked(layout);
    let min = s.clone().symmetric_eigenvalues().min();
    if min < LINEAR_DEPENDENCE_THRESHOLD {
        return Err(Error::LinearDependence {
            min_eigenvalue: min,
        });
    }
    Ok(s)
}

/// `<mu| r_k - origin_k |nu>` for `k = x, y, z`.
pub fn dipole_integrals(layout: &AoLayout, origin: [f64; 3]) -> [DMatrix<f64>; 3] {
    let mut m = assemble(layout, &origin, true);
    let z = m.pop().unwrap();
    let y = m.pop().unwrap();
    let x = m.pop().unwrap();
    [x, y, z]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, BasisTable, ShellSpec};
    use crate::system::MolecularSystem;

    fn layout(z: Vec<u32>, xyz: Vec<[f64; 3]>) -> AoLayout {
        let s = MolecularSystem {
            atomic_numbers: z,
            coordinates: xyz,
            charge: 0,
            multiplicity: 1,
            field: None,
            dielectric: None,
        };
        build_basis(&s, &BasisTable::minimal()).unwrap()
    }

    #[test]
    fn diagonal_is_one() {
        let l = layout(
            vec![8, 1, 6, 7],
            vec![
                [0.0; 3],
                [1.8, 0.1, 0.0],
                [-0.5, 2.4, 0.3],
                [0.2, -0.3, 2.6],
            ],
        );
        let s = overlap_matrix(&l).unwrap();
        for i in 0..s.nrows() {
            assert!((s[(i, i)] - 1.0).abs() < 1e-12);
            for j in 0..s.nrows() {
                assert_eq!(s[(i, j)], s[(j, i)]);
            }
        }
    }

    #[test]
    fn coincident_functions() {
        let l = layout(vec![1, 1], vec![[0.3, 0.2, 0.1]; 2]);
        let s = overlap_matrix_unchecked(&l);
        assert!((s[(0, 1)] - 1.0).abs() < 1e-12);
        assert!(matches!(
            overlap_matrix(&l),
            Err(Error::LinearDependence { .. })
        ));
    }

    #[test]
    fn far_apart_is_local() {
        let l = layout(vec![8, 6], vec![[0.0; 3], [0.0, 0.0, 50.0]]);
        let s = overlap_matrix(&l).unwrap();
        for i in 0..4 {
            for j in 4..8 {
                assert!(s[(i, j)].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_unit_primitives_match_product_theorem() {
        let spec = ShellSpec {
            n: 1,
            l: 0,
            primitives: vec![(1.0, 1.0)],
        };
        let a = GaussianShell::from_spec(0, [0.0; 3], &spec);
        let b = GaussianShell::from_spec(1, [0.0, 0.0, 1.0], &spec);
        let got = shell_pair(&a, &b, &[0.0; 3], false)[0][0];
        assert!((got - (-0.5f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn dipole_first_moments() {
        let l = layout(vec![1], vec![[0.0; 3]]);
        let d = dipole_integrals(&l, [0.0; 3]);
        assert!(d.iter().all(|m| m[(0, 0)].abs() < 1e-15));
        let l = layout(vec![1], vec![[0.0, 0.0, 1.7]]);
        let d = dipole_integrals(&l, [0.0; 3]);
        assert!((d[2][(0, 0)] - 1.7).abs() < 1e-12);
        assert!(d[0][(0, 0)].abs() < 1e-15);
    }

    #[test]
    fn dipole_translation_with_origin() {
        let xyz = vec![[0.0; 3], [1.8, 0.1, 0.0], [-0.5, 2.4, 0.3]];
        let shift = [3.1, -2.2, 0.7];
        let moved: Vec<[f64; 3]> = xyz
            .iter()
            .map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]])
            .collect();
        let a = dipole_integrals(&layout(vec![8, 1, 6], xyz), [0.1, 0.2, 0.3]);
        let b = dipole_integrals(
            &layout(vec![8, 1, 6], moved),
            [0.1 + shift[0], 0.2 + shift[1], 0.3 + shift[2]],
        );
        for k in 0..3 {
            assert!((&a[k] - &b[k]).amax() < 1e-12);
            assert!((&a[k] - a[k].transpose()).amax() == 0.0);
        }
    }

    #[test]
    fn solid_harmonics_match_sph() {
        use crate::equivariant::real_sph_harm;
        let v = [0.3, -0.7, 0.45];
        let r: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for l in 0..=2 {
            for (mi, poly) in solid_harmonic(l).iter().enumerate() {
                let val: f64 = poly
                    .iter()
                    .map(|&(c, e)| {
                        c * v[0].powi(e[0] as i32) * v[1].powi(e[1] as i32) * v[2].powi(e[2] as i32)
                    })
                    .sum();
                let want = r.powi(l as i32) * real_sph_harm(l, mi as i32 - l as i32, v);
                assert!((val - want).abs() < 1e-14);
            }
        }
    }
}
