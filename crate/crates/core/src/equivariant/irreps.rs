//! Irreducible-representation bookkeeping for per-atom equivariant features.

use serde::{Deserialize, Serialize};

use crate::equivariant::wigner::RotationRep;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn sign(self) -> i32 {
        match self {
            Parity::Even => 1,
            Parity::Odd => -1,
        }
    }

    pub fn from_sign(s: i32) -> Self {
        if s >= 0 {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

impl std::ops::Mul for Parity {
    type Output = Parity;

    fn mul(self, other: Parity) -> Parity {
        Parity::from_sign(self.sign() * other.sign())
    }
}

/// One `(l, p)` block of a feature: `n` channels of `2l + 1` components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub l: usize,
    pub parity: Parity,
    pub n: usize,
    /// Offset of the block in the flat feature vector.
    pub offset: usize,
    /// Offset of the block's channels in the invariant (per-channel) vector.
    pub channel_offset: usize,
}

impl Segment {
    pub fn width(&self) -> usize {
        2 * self.l + 1
    }

    pub fn len(&self) -> usize {
        self.n * self.width()
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Channel counts `N(l, p)`. Blocks are stored ordered by `l`, even parity first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<(usize, i32, usize)>", into = "Vec<(usize, i32, usize)>")]
pub struct IrrepsSpec {
    segments: Vec<Segment>,
}

impl From<Vec<(usize, i32, usize)>> for IrrepsSpec {
    fn from(v: Vec<(usize, i32, usize)>) -> Self {
        IrrepsSpec::new(v.into_iter().map(|(l, p, n)| (l, Parity::from_sign(p), n)))
    }
}

impl From<IrrepsSpec> for Vec<(usize, i32, usize)> {
    fn from(s: IrrepsSpec) -> Self {
        s.segments
            .iter()
            .map(|g| (g.l, g.parity.sign(), g.n))
            .collect()
    }
}

impl IrrepsSpec {
    /// Builds a spec from `(l, parity, count)` triples; zero counts are dropped.
    pub fn new(entries: impl IntoIterator<Item = (usize, Parity, usize)>) -> Self {
        let mut e: Vec<(usize, Parity, usize)> = entries.into_iter().filter(|x| x.2 > 0).collect();
        e.sort_by_key(|x| (x.0, x.1));
        e.dedup_by_key(|x| (x.0, x.1));
        let mut segments = Vec::with_capacity(e.len());
        let (mut offset, mut channel_offset) = (0, 0);
        for (l, parity, n) in e {
            segments.push(Segment {
                l,
                parity,
                n,
                offset,
                channel_offset,
            });
            offset += n * (2 * l + 1);
            channel_offset += n;
        }
        IrrepsSpec { segments }
    }

    /// Even-parity counts `even[l]` and odd-parity counts `odd[l]`.
    pub fn from_counts(even: &[usize], odd: &[usize]) -> Self {
        let ev = even.iter().enumerate().map(|(l, &n)| (l, Parity::Even, n));
        let od = odd.iter().enumerate().map(|(l, &n)| (l, Parity::Odd, n));
        Self::new(ev.chain(od))
    }

    /// Default hidden-feature layout: 256 channels over `l <= 4`.
    pub fn default_hidden() -> Self {
        Self::from_counts(&[128, 48, 24, 12, 6], &[24, 8, 4, 2, 0])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, l: usize, parity: Parity) -> Option<&Segment> {
        self.segments
            .iter()
            .find(|s| s.l == l && s.parity == parity)
    }

    pub fn count(&self, l: usize, parity: Parity) -> usize {
        self.segment(l, parity).map_or(0, |s| s.n)
    }

    /// Length of the flat feature vector.
    pub fn dim(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    /// Number of `(n, l, p)` channels, i.e. the length of the invariant vector.
    pub fn num_channels(&self) -> usize {
        self.segments.iter().map(|s| s.n).sum()
    }

    pub fn lmax(&self) -> usize {
        self.segments.iter().map(|s| s.l).max().unwrap_or(0)
    }
}

/// One atom's feature `h_{nlpm}`, stored block by block, channel-major within a block.
#[derive(Debug, Clone, PartialEq)]
pub struct IrrepsFeature<T> {
    pub spec: IrrepsSpec,
    pub data: Vec<T>,
}

impl<T: Scalar> IrrepsFeature<T> {
    pub fn zeros(spec: &IrrepsSpec) -> Self {
        IrrepsFeature {
            data: vec![T::zero(); spec.dim()],
            spec: spec.clone(),
        }
    }

    pub fn from_vec(spec: &IrrepsSpec, data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            spec.dim(),
            "feature length does not match its spec"
        );
        IrrepsFeature {
            spec: spec.clone(),
            data,
        }
    }

    /// Components of channel `n` in block `seg`.
    pub fn channel(&self, seg: &Segment, n: usize) -> &[T] {
        let w = seg.width();
        &self.data[seg.offset + n * w..seg.offset + (n + 1) * w]
    }

    /// Smoothed invariant content `sqrt(sum_m h^2 + eps^2) - eps` per channel.
    pub fn invariant_content(&self, eps: T) -> Vec<T> {
        invariant_content(&self.spec, &self.data, eps)
    }
}

pub fn invariant_content<T: Scalar>(spec: &IrrepsSpec, data: &[T], eps: T) -> Vec<T> {
    let mut out = Vec::with_capacity(spec.num_channels());
    for seg in spec.segments() {
        let w = seg.width();
        for n in 0..seg.n {
            let s = &data[seg.offset + n * w..seg.offset + (n + 1) * w];
            let sq: T = s.iter().map(|x| *x * *x).sum();
            out.push((sq + eps * eps).sqrt() - eps);
        }
    }
    out
}

/// Multiplies every `(n, l, p)` block by `D^l`; parity labels are untouched.
pub fn rotate_feature<T: Scalar>(h: &IrrepsFeature<T>, rep: &RotationRep<T>) -> IrrepsFeature<T> {
    IrrepsFeature {
        spec: h.spec.clone(),
        data: rotate_flat(&h.spec, &h.data, rep),
    }
}

/// Same as [`rotate_feature`] on a raw slice holding one atom's feature.
pub fn rotate_flat<T: Scalar>(spec: &IrrepsSpec, data: &[T], rep: &RotationRep<T>) -> Vec<T> {
    assert!(
        rep.lmax() >= spec.lmax(),
        "rotation cache does not cover the feature's degrees"
    );
    let mut out = data.to_vec();
    for seg in spec.segments() {
        if seg.l == 0 {
            continue;
        }
        let w = seg.width();
        let d = rep.block(seg.l);
        for n in 0..seg.n {
            let range = seg.offset + n * w..seg.offset + (n + 1) * w;
            d.apply(&data[range.clone()], &mut out[range]);
        }
    }
    out
}
