//! Clebsch-Gordan coefficients in the real harmonic basis.
//!
//! Complex coefficients come from the Racah closed form and are conjugated
//! into the real basis by the real/complex unitary. The result couples two
//! real harmonic vectors of degrees `l1`, `l2` into degree `l` equivariantly.
//! Normalization: for fixed `(l1, l2)` the slices are orthonormal,
//! `sum_{m1,m2} C^{lm}_{l1m1,l2m2} C^{l'm'}_{l1m1,l2m2} = delta_{ll'} delta_{mm'}`.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn fact(n: i64) -> f64 {
    debug_assert!(n >= 0);
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Complex (Condon-Shortley) Clebsch-Gordan `<l1 m1 l2 m2 | l m>`.
pub fn cg_complex(l1: i64, m1: i64, l2: i64, m2: i64, l: i64, m: i64) -> f64 {
    if m1 + m2 != m || m1.abs() > l1 || m2.abs() > l2 || m.abs() > l {
        return 0.0;
    }
    if l < (l1 - l2).abs() || l > l1 + l2 {
        return 0.0;
    }
    let pre = ((2 * l + 1) as f64 * fact(l + l1 - l2) * fact(l - l1 + l2) * fact(l1 + l2 - l)
        / fact(l1 + l2 + l + 1))
    .sqrt();
    let pre2 =
        (fact(l + m) * fact(l - m) * fact(l1 - m1) * fact(l1 + m1) * fact(l2 - m2) * fact(l2 + m2))
            .sqrt();
    let kmin = 0.max(l2 - l - m1).max(l1 - l + m2);
    let kmax = (l1 + l2 - l).min(l1 - m1).min(l2 + m2);
    let mut sum = 0.0;
    for k in kmin..=kmax {
        let den = fact(k)
            * fact(l1 + l2 - l - k)
            * fact(l1 - m1 - k)
            * fact(l2 + m2 - k)
            * fact(l - l2 + m1 + k)
            * fact(l - l1 - m2 + k);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign / den;
    }
    pre * pre2 * sum
}

/// Unitary `U` with `Y_real = U Y_complex`, rows real `m`, columns complex `mu`.
pub fn real_from_complex(l: usize) -> Vec<Complex64> {
    let d = 2 * l + 1;
    let li = l as i64;
    let mut u = vec![Complex64::new(0.0, 0.0); d * d];
    let idx = |m: i64| (m + li) as usize;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    u[idx(0) * d + idx(0)] = Complex64::new(1.0, 0.0);
    for k in 1..=li {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        u[idx(k) * d + idx(k)] = Complex64::new(sign * s, 0.0);
        u[idx(k) * d + idx(-k)] = Complex64::new(s, 0.0);
        u[idx(-k) * d + idx(k)] = Complex64::new(0.0, -sign * s);
        u[idx(-k) * d + idx(-k)] = Complex64::new(0.0, s);
    }
    u
}

/// Dense real CG tensor for one `(l1, l2, l)` triple.
#[derive(Debug, Clone, PartialEq)]
pub struct CgSlice<T> {
    pub l1: usize,
    pub l2: usize,
    pub l: usize,
    /// Indexed `[m][m1][m2]`, each offset by its degree.
    pub dense: Vec<T>,
    /// Nonzero entries `(m, m1, m2, value)` with 0-based offsets.
    pub nonzero: Vec<(usize, usize, usize, T)>,
}

impl<T: Scalar> CgSlice<T> {
    pub fn get(&self, m: usize, m1: usize, m2: usize) -> T {
        let (d1, d2) = (2 * self.l1 + 1, 2 * self.l2 + 1);
        self.dense[(m * d1 + m1) * d2 + m2]
    }

    /// Couples `x1` (degree `l1`) and `x2` (degree `l2`) into degree `l`.
    pub fn couple(&self, x1: &[T], x2: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); 2 * self.l + 1];
        for &(m, m1, m2, c) in &self.nonzero {
            out[m] += c * x1[m1] * x2[m2];
        }
        out
    }
}

/// Real-basis coupling coefficients for `l1 (x) l2 -> l`.
pub fn cg_real<T: Scalar>(l1: usize, l2: usize, l: usize) -> Result<CgSlice<T>> {
    if l < l1.abs_diff(l2) || l > l1 + l2 {
        return Err(Error::SelectionRuleViolation { l1, l2, l });
    }
    let (d1, d2, d) = (2 * l1 + 1, 2 * l2 + 1, 2 * l + 1);
    let (u1, u2, u) = (
        real_from_complex(l1),
        real_from_complex(l2),
        real_from_complex(l),
    );
    let mut complex = vec![Complex64::new(0.0, 0.0); d * d1 * d2];
    for m in 0..d {
        for m1 in 0..d1 {
            for m2 in 0..d2 {
                let mut acc = Complex64::new(0.0, 0.0);
                for mu1 in 0..d1 {
                    let a = u1[m1 * d1 + mu1].conj();
                    if a.norm() == 0.0 {
                        continue;
                    }
                    for mu2 in 0..d2 {
                        let b = u2[m2 * d2 + mu2].conj();
                        if b.norm() == 0.0 {
                            continue;
                        }
                        let mu = mu1 as i64 - l1 as i64 + mu2 as i64 - l2 as i64;
                        if mu.unsigned_abs() as usize > l {
                            continue;
                        }
                        let c = cg_complex(
                            l1 as i64,
                            mu1 as i64 - l1 as i64,
                            l2 as i64,
                            mu2 as i64 - l2 as i64,
                            l as i64,
                            mu,
                        );
                        acc += u[m * d + (mu + l as i64) as usize] * c * a * b;
                    }
                }
                complex[(m * d1 + m1) * d2 + m2] = acc;
            }
        }
    }
    let re: f64 = complex.iter().map(|c| c.re * c.re).sum();
    let im: f64 = complex.iter().map(|c| c.im * c.im).sum();
    let mut values: Vec<f64> = if re >= im {
        complex.iter().map(|c| c.re).collect()
    } else {
        complex.iter().map(|c| c.im).collect()
    };
    for v in values.iter_mut() {
        if v.abs() < 1e-14 {
            *v = 0.0;
        }
    }
    // Fix the overall sign: first nonzero entry positive.
    if let Some(first) = values.iter().find(|v| **v != 0.0) {
        if *first < 0.0 {
            values.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let dense: Vec<T> = values.iter().map(|v| T::lit(*v)).collect();
    let mut nonzero = Vec::new();
    for m in 0..d {
        for m1 in 0..d1 {
            for m2 in 0..d2 {
                let v = values[(m * d1 + m1) * d2 + m2];
                if v != 0.0 {
                    nonzero.push((m, m1, m2, T::lit(v)));
                }
            }
        }
    }
    Ok(CgSlice {
        l1,
        l2,
        l,
        dense,
        nonzero,
    })
}

/// All slices with `l1, l2, l <= lmax`, built once and shared read-only.
#[derive(Debug, Clone)]
pub struct CgTable<T> {
    pub lmax: usize,
    slices: BTreeMap<(usize, usize, usize), CgSlice<T>>,
}

impl<T: Scalar> CgTable<T> {
    pub fn new(lmax: usize) -> Self {
        let mut slices = BTreeMap::new();
        for l1 in 0..=lmax {
            for l2 in 0..=lmax {
                for l in l1.abs_diff(l2)..=(l1 + l2).min(lmax) {
                    slices.insert((l1, l2, l), cg_real(l1, l2, l).expect("triangle holds"));
                }
            }
        }
        CgTable { lmax, slices }
    }

    pub fn get(&self, l1: usize, l2: usize, l: usize) -> Option<&CgSlice<T>> {
        self.slices.get(&(l1, l2, l))
    }

    pub fn iter(&self) -> impl Iterator<Item = &CgSlice<T>> {
        self.slices.values()
    }

    /// Plain-text dump, one nonzero coefficient per line.
    pub fn dump(&self) -> String {
        let mut out = String::from("# l1 l2 l m m1 m2 coefficient\n");
        for s in self.slices.values() {
            for &(m, m1, m2, v) in &s.nonzero {
                out.push_str(&format!(
                    "{} {} {} {} {} {} {:.17e}\n",
                    s.l1,
                    s.l2,
                    s.l,
                    m as i64 - s.l as i64,
                    m1 as i64 - s.l1 as i64,
                    m2 as i64 - s.l2 as i64,
                    v.as_f64()
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn scalar_coupling_is_one() {
        let s = cg_real::<f64>(0, 0, 0).unwrap();
        assert_eq!(s.nonzero, vec![(0, 0, 0, 1.0)]);
    }

    #[test]
    fn vector_dot_product_pattern() {
        let s = cg_real::<f64>(1, 1, 0).unwrap();
        for m1 in 0..3 {
            for m2 in 0..3 {
                let want = if m1 == m2 { 1.0 / 3f64.sqrt() } else { 0.0 };
                assert_abs_diff_eq!(s.get(0, m1, m2), want, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn vector_cross_product_pattern() {
        let s = cg_real::<f64>(1, 1, 1).unwrap();
        for m in 0..3 {
            for m1 in 0..3 {
                for m2 in 0..3 {
                    assert_abs_diff_eq!(s.get(m, m1, m2), -s.get(m, m2, m1), epsilon = 1e-14);
                    if m == m1 || m == m2 {
                        assert_abs_diff_eq!(s.get(m, m1, m2), 0.0, epsilon = 1e-14);
                    }
                }
            }
        }
        let mag = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(s.get(0, 1, 2).abs(), mag, epsilon = 1e-14);
    }

    #[test]
    fn triangle_violation_is_an_error() {
        assert!(matches!(
            cg_real::<f64>(1, 1, 3),
            Err(Error::SelectionRuleViolation { l1: 1, l2: 1, l: 3 })
        ));
    }

    #[test]
    fn complex_cg_known_values() {
        // <1/2-free> integer checks: <1 1 1 -1 | 0 0> = 1/sqrt(3)
        assert_abs_diff_eq!(
            cg_complex(1, 1, 1, -1, 0, 0),
            1.0 / 3f64.sqrt(),
            epsilon = 1e-15
        );
        // <1 0 1 0 | 2 0> = sqrt(2/3)
        assert_abs_diff_eq!(
            cg_complex(1, 0, 1, 0, 2, 0),
            (2.0f64 / 3.0).sqrt(),
            epsilon = 1e-15
        );
        // <1 0 1 0 | 1 0> = 0
        assert_abs_diff_eq!(cg_complex(1, 0, 1, 0, 1, 0), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn dump_lists_every_nonzero() {
        let t = CgTable::<f64>::new(2);
        let lines = t.dump().lines().count() - 1;
        assert_eq!(lines, t.iter().map(|s| s.nonzero.len()).sum::<usize>());
    }
}
