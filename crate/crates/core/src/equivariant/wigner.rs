//! Real Wigner-D matrices built by the Ivanic-Ruedenberg recursion.
//!
//! `D^l(R)` acts on the real harmonic vector so that `D^l(R) Y_l(v) = Y_l(R v)`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type Mat3<T> = [[T; 3]; 3];

/// Square matrix of odd dimension `2l + 1`, row-major, indexed by `m` values.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerBlock<T> {
    pub l: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> WignerBlock<T> {
    pub fn dim(&self) -> usize {
        2 * self.l + 1
    }

    #[inline]
    fn at(&self, m: i32, n: i32) -> T {
        let l = self.l as i32;
        self.data[((m + l) as usize) * self.dim() + (n + l) as usize]
    }

    pub fn identity(l: usize) -> Self {
        let d = 2 * l + 1;
        let mut data = vec![T::zero(); d * d];
        for i in 0..d {
            data[i * d + i] = T::one();
        }
        WignerBlock { l, data }
    }

    /// `y <- D x` for one `(2l+1)`-vector.
    pub fn apply(&self, x: &[T], y: &mut [T]) {
        let d = self.dim();
        for i in 0..d {
            let row = &self.data[i * d..(i + 1) * d];
            y[i] = row.iter().zip(x).map(|(a, b)| *a * *b).sum();
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let d = self.dim();
        let mut data = vec![T::zero(); d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.data[i * d + k];
                for j in 0..d {
                    data[i * d + j] += a * other.data[k * d + j];
                }
            }
        }
        WignerBlock { l: self.l, data }
    }

    pub fn transpose(&self) -> Self {
        let d = self.dim();
        let mut data = vec![T::zero(); d * d];
        for i in 0..d {
            for j in 0..d {
                data[j * d + i] = self.data[i * d + j];
            }
        }
        WignerBlock { l: self.l, data }
    }
}

pub fn det3<T: Scalar>(r: &Mat3<T>) -> T {
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}

pub fn matmul3<T: Scalar>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut c = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn apply3<T: Scalar>(r: &Mat3<T>, v: [T; 3]) -> [T; 3] {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

/// Cartesian axis carrying the real `l = 1` component `m`.
const fn axis(m: i32) -> usize {
    match m {
        -1 => 1,
        0 => 2,
        _ => 0,
    }
}

fn check_rotation<T: Scalar>(r: &Mat3<T>) -> Result<()> {
    let dev = (det3(r) - T::one()).abs().as_f64();
    if dev > 1e-8 {
        return Err(Error::InvalidRotation(dev));
    }
    Ok(())
}

fn l1_block<T: Scalar>(r: &Mat3<T>) -> WignerBlock<T> {
    let mut data = Vec::with_capacity(9);
    for m in -1..=1 {
        for n in -1..=1 {
            data.push(r[axis(m)][axis(n)]);
        }
    }
    WignerBlock { l: 1, data }
}

fn next_block<T: Scalar>(r1: &WignerBlock<T>, prev: &WignerBlock<T>) -> WignerBlock<T> {
    let l = prev.l as i32 + 1;
    let p = |i: i32, a: i32, b: i32| -> T {
        if b == l {
            r1.at(i, 1) * prev.at(a, l - 1) - r1.at(i, -1) * prev.at(a, -l + 1)
        } else if b == -l {
            r1.at(i, 1) * prev.at(a, -l + 1) + r1.at(i, -1) * prev.at(a, l - 1)
        } else {
            r1.at(i, 0) * prev.at(a, b)
        }
    };
    let d = (2 * l + 1) as usize;
    let mut data = vec![T::zero(); d * d];
    for m in -l..=l {
        for n in -l..=l {
            let delta0 = if m == 0 { 1.0 } else { 0.0 };
            let denom = if n.abs() == l {
                (2 * l * (2 * l - 1)) as f64
            } else {
                ((l + n) * (l - n)) as f64
            };
            let am = m.abs();
            let u = (((l + m) * (l - m)) as f64 / denom).sqrt();
            let v = 0.5
                * ((1.0 + delta0) * ((l + am - 1) * (l + am)) as f64 / denom).sqrt()
                * (1.0 - 2.0 * delta0);
            let w = -0.5 * (((l - am - 1) * (l - am)) as f64 / denom).sqrt() * (1.0 - delta0);
            let mut acc = T::zero();
            if u != 0.0 {
                acc += T::lit(u) * p(0, m, n);
            }
            if v != 0.0 {
                let vv = if m == 0 {
                    p(1, 1, n) + p(-1, -1, n)
                } else if m > 0 {
                    let d1: f64 = if m == 1 { 1.0 } else { 0.0 };
                    p(1, m - 1, n) * T::lit((1.0 + d1).sqrt()) - p(-1, -m + 1, n) * T::lit(1.0 - d1)
                } else {
                    let d1: f64 = if m == -1 { 1.0 } else { 0.0 };
                    p(1, m + 1, n) * T::lit(1.0 - d1) + p(-1, -m - 1, n) * T::lit((1.0 + d1).sqrt())
                };
                acc += T::lit(v) * vv;
            }
            if w != 0.0 {
                let ww = if m > 0 {
                    p(1, m + 1, n) + p(-1, -m - 1, n)
                } else {
                    p(1, m - 1, n) - p(-1, -m + 1, n)
                };
                acc += T::lit(w) * ww;
            }
            data[((m + l) as usize) * d + (n + l) as usize] = acc;
        }
    }
    WignerBlock {
        l: l as usize,
        data,
    }
}

/// Real Wigner-D block of degree `l` for a proper rotation.
pub fn wigner_d_real<T: Scalar>(l: usize, rotation: &Mat3<T>) -> Result<WignerBlock<T>> {
    check_rotation(rotation)?;
    Ok(wigner_blocks(l, rotation)
        .pop()
        .expect("at least one block"))
}

fn wigner_blocks<T: Scalar>(lmax: usize, rotation: &Mat3<T>) -> Vec<WignerBlock<T>> {
    let mut blocks = vec![WignerBlock::identity(0)];
    if lmax == 0 {
        return blocks;
    }
    let r1 = l1_block(rotation);
    blocks.push(r1.clone());
    for _ in 2..=lmax {
        let next = next_block(&r1, blocks.last().unwrap());
        blocks.push(next);
    }
    blocks
}

/// A rotation together with its cached Wigner blocks `D^0..=D^lmax`.
#[derive(Debug, Clone)]
pub struct RotationRep<T> {
    pub rotation: Mat3<T>,
    pub blocks: Vec<WignerBlock<T>>,
}

impl<T: Scalar> RotationRep<T> {
    pub fn new(rotation: Mat3<T>, lmax: usize) -> Result<Self> {
        check_rotation(&rotation)?;
        Ok(RotationRep {
            blocks: wigner_blocks(lmax, &rotation),
            rotation,
        })
    }

    pub fn identity(lmax: usize) -> Self {
        let mut r = [[T::zero(); 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            row[i] = T::one();
        }
        Self::new(r, lmax).expect("identity is proper")
    }

    pub fn lmax(&self) -> usize {
        self.blocks.len() - 1
    }

    pub fn block(&self, l: usize) -> &WignerBlock<T> {
        &self.blocks[l]
    }
}

/// Rotation from a unit quaternion `(w, x, y, z)`; the input is normalized.
pub fn rotation_from_quaternion<T: Scalar>(q: [T; 4]) -> Mat3<T> {
    let n = q.iter().map(|a| *a * *a).sum::<T>().sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let two = T::lit(2.0);
    let one = T::one();
    [
        [
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        ],
    ]
}

/// Uniformly distributed random rotation.
pub fn random_rotation<R: rand::Rng + ?Sized>(rng: &mut R) -> Mat3<f64> {
    use rand::distributions::Distribution;
    let normal = rand::distributions::Uniform::new(-1.0f64, 1.0);
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| normal.sample(rng));
        let n2: f64 = q.iter().map(|a| a * a).sum();
        if n2 > 1e-6 && n2 <= 1.0 {
            return rotation_from_quaternion(q);
        }
    }
}

/// Rotation by `angle` radians about the unit `axis`.
pub fn axis_angle<T: Scalar>(axis: [T; 3], angle: T) -> Mat3<T> {
    let half = angle / T::lit(2.0);
    let s = half.sin();
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    rotation_from_quaternion([
        half.cos(),
        s * axis[0] / n,
        s * axis[1] / n,
        s * axis[2] / n,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equivariant::sph::real_sph_harm_vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
        use rand::Rng;
        loop {
            let v: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let n: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 0.1 && n < 1.0 {
                return [v[0] / n, v[1] / n, v[2] / n];
            }
        }
    }

    #[test]
    fn identity_rotation_gives_identity_blocks() {
        let rep = RotationRep::<f64>::identity(6);
        for (l, b) in rep.blocks.iter().enumerate() {
            assert_eq!(b, &WignerBlock::identity(l));
        }
    }

    #[test]
    fn l1_block_is_permuted_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random_rotation(&mut rng);
        let d1 = wigner_d_real(1, &r).unwrap();
        for _ in 0..20 {
            let v = random_unit(&mut rng);
            let mut lhs = [0.0; 3];
            d1.apply(&real_sph_harm_vec(1, v), &mut lhs);
            let rhs = real_sph_harm_vec(1, apply3(&r, v));
            for k in 0..3 {
                assert!((lhs[k] - rhs[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn defining_property_up_to_l6() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let r = random_rotation(&mut rng);
            let rep = RotationRep::new(r, 6).unwrap();
            for l in 0..=6 {
                let d = rep.block(l);
                for _ in 0..50 {
                    let v = random_unit(&mut rng);
                    let mut lhs = vec![0.0; 2 * l + 1];
                    d.apply(&real_sph_harm_vec(l, v), &mut lhs);
                    let rhs = real_sph_harm_vec(l, apply3(&r, v));
                    for (a, b) in lhs.iter().zip(&rhs) {
                        assert!((a - b).abs() < 1e-10, "l={l}: {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn blocks_are_orthogonal_and_compose() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let r1 = random_rotation(&mut rng);
            let r2 = random_rotation(&mut rng);
            let a = RotationRep::new(r1, 4).unwrap();
            let b = RotationRep::new(r2, 4).unwrap();
            let ab = RotationRep::new(matmul3(&r1, &r2), 4).unwrap();
            for l in 0..=4 {
                let prod = a.block(l).matmul(&a.block(l).transpose());
                let id = WignerBlock::<f64>::identity(l);
                for (x, y) in prod.data.iter().zip(&id.data) {
                    assert!((x - y).abs() < 1e-12);
                }
                let comp = a.block(l).matmul(b.block(l));
                for (x, y) in comp.data.iter().zip(&ab.block(l).data) {
                    assert!((x - y).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn improper_rotation_is_rejected() {
        let reflect = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
        assert!(matches!(
            wigner_d_real(2, &reflect),
            Err(Error::InvalidRotation(_))
        ));
    }
}
