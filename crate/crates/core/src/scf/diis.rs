//! Pulay DIIS extrapolation of the spin Fock pair.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

pub(crate) struct Diis {
    capacity: usize,
    focks: VecDeque<[DMatrix<f64>; 2]>,
    errors: VecDeque<[DMatrix<f64>; 2]>,
}

impl Diis {
    pub fn new(capacity: usize) -> Self {
        Diis {
            capacity,
            focks: VecDeque::new(),
            errors: VecDeque::new(),
        }
    }

    pub fn push(&mut self, fock: [DMatrix<f64>; 2], error: [DMatrix<f64>; 2]) {
        if self.focks.len() == self.capacity {
            self.focks.pop_front();
            self.errors.pop_front();
        }
        self.focks.push_back(fock);
        self.errors.push_back(error);
    }

    /// Minimizes the combined error norm; `None` until two entries exist or when
    /// the system stays singular after discarding old entries.
    pub fn extrapolate(&self) -> Option<[DMatrix<f64>; 2]> {
        let n = self.focks.len();
        for skip in 0..n.saturating_sub(1) {
            let m = n - skip;
            if m < 2 {
                break;
            }
            let mut b = DMatrix::zeros(m + 1, m + 1);
            for i in 0..m {
                for j in 0..=i {
                    let (ei, ej) = (&self.errors[skip + i], &self.errors[skip + j]);
                    let v = ei[0].dot(&ej[0]) + ei[1].dot(&ej[1]);
                    b[(i, j)] = v;
                    b[(j, i)] = v;
                }
                b[(i, m)] = -1.0;
                b[(m, i)] = -1.0;
            }
            let mut rhs = DVector::zeros(m + 1);
            rhs[m] = -1.0;
            let Some(c) = b.lu().solve(&rhs) else {
                continue;
            };
            if c.iter().any(|x| !x.is_finite()) {
                continue;
            }
            let mut fa = DMatrix::zeros(self.focks[0][0].nrows(), self.focks[0][0].ncols());
            let mut fb = fa.clone();
            for i in 0..m {
                fa += &self.focks[skip + i][0] * c[i];
                fb += &self.focks[skip + i][1] * c[i];
            }
            return Some([fa, fb]);
        }
        None
    }
}
