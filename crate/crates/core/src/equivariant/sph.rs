//! Real spherical harmonics.
//!
//! Convention: no Condon-Shortley phase, `m` runs `-l..=l`, positive `m`
//! carries `cos(m phi)` and negative `m` carries `sin(|m| phi)`. For `l = 1`
//! the components are proportional to `(y, z, x)`. The basis-set module uses
//! exactly the same polynomials for its `p` and `d` shells.

use crate::scalar::Scalar;

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

fn double_factorial_odd(m: usize) -> f64 {
    // (2m - 1)!!
    (0..m).fold(1.0, |acc, k| acc * (2 * k + 1) as f64)
}

/// Normalization `K_lm` including the `sqrt(2)` of the real combinations.
pub fn sph_norm(l: usize, m: i32) -> f64 {
    let am = m.unsigned_abs() as usize;
    let k = ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * factorial(l - am)
        / factorial(l + am))
    .sqrt();
    if m == 0 {
        k
    } else {
        k * std::f64::consts::SQRT_2
    }
}

/// `P_l^m(z) / sin^m(theta)` without the Condon-Shortley phase.
fn legendre_reduced<T: Scalar>(l: usize, m: usize, z: T) -> T {
    let mut pmm = T::lit(double_factorial_odd(m));
    if l == m {
        return pmm;
    }
    let mut pm1 = T::lit((2 * m + 1) as f64) * z * pmm;
    for ll in (m + 2)..=l {
        let next = (T::lit((2 * ll - 1) as f64) * z * pm1 - T::lit((ll + m - 1) as f64) * pmm)
            / T::lit((ll - m) as f64);
        pmm = pm1;
        pm1 = next;
    }
    pm1
}

/// Real and imaginary parts of `(x + i y)^m`.
fn azimuthal<T: Scalar>(m: usize, x: T, y: T) -> (T, T) {
    let (mut re, mut im) = (T::one(), T::zero());
    for _ in 0..m {
        let r = re * x - im * y;
        im = re * y + im * x;
        re = r;
    }
    (re, im)
}

/// Real spherical harmonic `Y_lm` at the direction of `v` (normalized internally).
pub fn real_sph_harm<T: Scalar>(l: usize, m: i32, v: [T; 3]) -> T {
    assert!(m.unsigned_abs() as usize <= l, "|m| must not exceed l");
    let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let (x, y, z) = (v[0] / r, v[1] / r, v[2] / r);
    let am = m.unsigned_abs() as usize;
    let (re, im) = azimuthal(am, x, y);
    let ang = match m.signum() {
        1 => re,
        -1 => im,
        _ => T::one(),
    };
    T::lit(sph_norm(l, m)) * legendre_reduced(l, am, z) * ang
}

/// All `2l + 1` components of degree `l`, ordered `m = -l..=l`.
pub fn real_sph_harm_vec<T: Scalar>(l: usize, v: [T; 3]) -> Vec<T> {
    (-(l as i32)..=(l as i32))
        .map(|m| real_sph_harm(l, m, v))
        .collect()
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = x;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Integral of a product of three real harmonics over the unit sphere.
///
/// Evaluated with a product rule (Gauss-Legendre in `cos theta`, uniform in
/// `phi`) that is exact for the polynomial degrees involved.
pub fn gaunt_real(l1: usize, m1: i32, l2: usize, m2: i32, l3: usize, m3: i32) -> f64 {
    let lsum = l1 + l2 + l3;
    if lsum % 2 == 1 || l3 > l1 + l2 || l3 < l1.abs_diff(l2) {
        return 0.0;
    }
    let n_theta = lsum / 2 + 2;
    let n_phi = 2 * lsum + 2;
    let (nodes, weights) = gauss_legendre(n_theta);
    let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
    let mut acc = 0.0;
    for (&ct, &w) in nodes.iter().zip(&weights) {
        let st = (1.0 - ct * ct).sqrt();
        for k in 0..n_phi {
            let phi = (k as f64 + 0.5) * dphi;
            let v = [st * phi.cos(), st * phi.sin(), ct];
            acc += w
                * dphi
                * real_sph_harm(l1, m1, v)
                * real_sph_harm(l2, m2, v)
                * real_sph_harm(l3, m3, v);
        }
    }
    // exact zeros from the m selection rules come out at rounding level
    if acc.abs() < 1e-13 {
        0.0
    } else {
        acc
    }
}
