//! Channel-aligned Clebsch-Gordan coupling of two features sharing one spec.
//!
//! For every pathway `(l1,p1) x (l2,p2) -> (l,p)` allowed by the triangle rule
//! and the parity rule `p1 * p2 * p = (-1)^(l1 + l2 + l)`, channel `n` of the
//! output receives `sum C f_n g_n` for every `n` present in all three blocks.
//!
//! Features may be batched: with `batch` atoms the layout is segment-major,
//! `[segment][channel][atom][m]`, which for `batch = 1` is the plain
//! per-atom layout of [`IrrepsFeature`](crate::equivariant::IrrepsFeature).

use crate::equivariant::cg::CgTable;
use crate::equivariant::irreps::{IrrepsSpec, Parity, Segment};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct CouplingPath<T> {
    pub f: Segment,
    pub g: Segment,
    pub out: Segment,
    pub channels: usize,
    /// Nonzero `(m, m1, m2, C)` entries of the real CG slice.
    pub coefficients: Vec<(usize, usize, usize, T)>,
}

#[derive(Debug, Clone)]
pub struct ChannelCoupling<T> {
    pub spec: IrrepsSpec,
    pub paths: Vec<CouplingPath<T>>,
}

/// Parity selection rule of the coupling.
pub fn parity_allowed(l1: usize, p1: Parity, l2: usize, p2: Parity, l: usize, p: Parity) -> bool {
    let lhs = p1.sign() * p2.sign() * p.sign();
    let rhs = if (l1 + l2 + l).is_multiple_of(2) {
        1
    } else {
        -1
    };
    lhs == rhs
}

impl<T: Scalar> ChannelCoupling<T> {
    pub fn new(spec: &IrrepsSpec, table: &CgTable<T>) -> Self {
        Self::with_filter(spec, table, |_, _, _| true)
    }

    /// Keeps only the pathways for which `keep(f_segment, g_segment, out_segment)` holds.
    pub fn with_filter(
        spec: &IrrepsSpec,
        table: &CgTable<T>,
        keep: impl Fn(&Segment, &Segment, &Segment) -> bool,
    ) -> Self {
        let mut paths = Vec::new();
        for f in spec.segments() {
            for g in spec.segments() {
                for out in spec.segments() {
                    if !parity_allowed(f.l, f.parity, g.l, g.parity, out.l, out.parity)
                        || !keep(f, g, out)
                    {
                        continue;
                    }
                    let Some(slice) = table.get(f.l, g.l, out.l) else {
                        continue;
                    };
                    let channels = f.n.min(g.n).min(out.n);
                    if channels == 0 || slice.nonzero.is_empty() {
                        continue;
                    }
                    paths.push(CouplingPath {
                        f: *f,
                        g: *g,
                        out: *out,
                        channels,
                        coefficients: slice.nonzero.clone(),
                    });
                }
            }
        }
        ChannelCoupling {
            spec: spec.clone(),
            paths,
        }
    }

    /// Returns `sum_paths C f g` (without the `g` residual).
    pub fn apply(&self, f: &[T], g: &[T], batch: usize) -> Vec<T> {
        let mut out = vec![T::zero(); f.len()];
        for path in &self.paths {
            let (w1, w2, w) = (path.f.width(), path.g.width(), path.out.width());
            for n in 0..path.channels {
                for a in 0..batch {
                    let fo = batch * path.f.offset + (n * batch + a) * w1;
                    let go = batch * path.g.offset + (n * batch + a) * w2;
                    let oo = batch * path.out.offset + (n * batch + a) * w;
                    for &(m, m1, m2, c) in &path.coefficients {
                        out[oo + m] += c * f[fo + m1] * g[go + m2];
                    }
                }
            }
        }
        out
    }

    /// Vector-Jacobian product: accumulates into `df` and `dg`.
    pub fn backward(&self, f: &[T], g: &[T], dout: &[T], df: &mut [T], dg: &mut [T], batch: usize) {
        for path in &self.paths {
            let (w1, w2, w) = (path.f.width(), path.g.width(), path.out.width());
            for n in 0..path.channels {
                for a in 0..batch {
                    let fo = batch * path.f.offset + (n * batch + a) * w1;
                    let go = batch * path.g.offset + (n * batch + a) * w2;
                    let oo = batch * path.out.offset + (n * batch + a) * w;
                    for &(m, m1, m2, c) in &path.coefficients {
                        let d = dout[oo + m] * c;
                        df[fo + m1] += d * g[go + m2];
                        dg[go + m2] += d * f[fo + m1];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equivariant::irreps::{rotate_feature, IrrepsFeature};
    use crate::equivariant::wigner::{random_rotation, RotationRep};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec() -> IrrepsSpec {
        IrrepsSpec::from_counts(&[3, 2, 2, 1, 1], &[2, 1, 1, 1])
    }

    fn random(spec: &IrrepsSpec, rng: &mut ChaCha8Rng) -> IrrepsFeature<f64> {
        IrrepsFeature::from_vec(
            spec,
            (0..spec.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
    }

    #[test]
    fn coupling_commutes_with_rotation() {
        let spec = spec();
        let tp = ChannelCoupling::new(&spec, &CgTable::new(4));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (f, g) = (random(&spec, &mut rng), random(&spec, &mut rng));
            let rep = RotationRep::new(random_rotation(&mut rng), 4).unwrap();
            let out = IrrepsFeature::from_vec(&spec, tp.apply(&f.data, &g.data, 1));
            let rf = rotate_feature(&f, &rep);
            let rg = rotate_feature(&g, &rep);
            let lhs = tp.apply(&rf.data, &rg.data, 1);
            let rhs = rotate_feature(&out, &rep);
            for (x, y) in lhs.iter().zip(&rhs.data) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn even_inputs_reach_odd_outputs_only_through_odd_degree_sums() {
        let spec = spec();
        let tp = ChannelCoupling::<f64>::new(&spec, &CgTable::new(4));
        for p in &tp.paths {
            if p.f.parity == Parity::Even && p.g.parity == Parity::Even {
                let odd_out = p.out.parity == Parity::Odd;
                assert_eq!(odd_out, (p.f.l + p.g.l + p.out.l) % 2 == 1);
            }
        }
    }

    #[test]
    fn zeroing_odd_pathways_keeps_odd_content_zero() {
        let spec = spec();
        let table = CgTable::new(4);
        let tp = ChannelCoupling::with_filter(&spec, &table, |_, _, o| o.parity == Parity::Even);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut f = random(&spec, &mut rng);
        let mut g = random(&spec, &mut rng);
        for seg in spec.segments().iter().filter(|s| s.parity == Parity::Odd) {
            f.data[seg.offset..seg.offset + seg.len()].fill(0.0);
            g.data[seg.offset..seg.offset + seg.len()].fill(0.0);
        }
        let out = tp.apply(&f.data, &g.data, 1);
        for seg in spec.segments().iter().filter(|s| s.parity == Parity::Odd) {
            assert!(out[seg.offset..seg.offset + seg.len()]
                .iter()
                .all(|x| *x == 0.0));
        }
    }

    #[test]
    fn batched_layout_matches_single_atoms() {
        let spec = spec();
        let tp = ChannelCoupling::new(&spec, &CgTable::new(4));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let atoms: Vec<_> = (0..3)
            .map(|_| (random(&spec, &mut rng), random(&spec, &mut rng)))
            .collect();
        let pack = |pick: &dyn Fn(usize) -> Vec<f64>| {
            let mut out = vec![0.0; spec.dim() * 3];
            for seg in spec.segments() {
                let w = seg.width();
                for n in 0..seg.n {
                    for a in 0..3 {
                        let src = pick(a);
                        for m in 0..w {
                            out[3 * seg.offset + (n * 3 + a) * w + m] = src[seg.offset + n * w + m];
                        }
                    }
                }
            }
            out
        };
        let fb = pack(&|a| atoms[a].0.data.clone());
        let gb = pack(&|a| atoms[a].1.data.clone());
        let got = tp.apply(&fb, &gb, 3);
        let want = pack(&|a| tp.apply(&atoms[a].0.data, &atoms[a].1.data, 1));
        assert_eq!(got, want);
    }
}
