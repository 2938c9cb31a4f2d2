//! Element parameters of the toy charge-self-consistent extended-Hückel model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::ev_to_hartree;

/// Per-element constants, all in hartree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElementParams {
    /// Valence-shell ionization energies indexed by `l`.
    pub h_shell: [f64; 3],
    /// Atomic hardness entering the Klopman-Ohno kernel.
    pub eta: f64,
    /// Spin-polarization (Hund) constant.
    pub hund: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HuckelParams {
    /// Wolfsberg-Helmholz constant.
    pub k_wh: f64,
    pub elements: BTreeMap<u32, ElementParams>,
}

impl Default for HuckelParams {
    fn default() -> Self {
        let e = |s: f64, p: f64, eta: f64, hund: f64| ElementParams {
            h_shell: [ev_to_hartree(s), ev_to_hartree(p), 0.0],
            eta,
            hund,
        };
        let mut elements = BTreeMap::new();
        elements.insert(1, e(-13.6, 0.0, 0.472, 0.072));
        elements.insert(6, e(-21.4, -11.4, 0.411, 0.031));
        elements.insert(7, e(-26.0, -13.4, 0.502, 0.033));
        elements.insert(8, e(-32.3, -14.8, 0.551, 0.036));
        HuckelParams {
            k_wh: 1.75,
            elements,
        }
    }
}

impl HuckelParams {
    pub fn element(&self, z: u32) -> Result<&ElementParams> {
        self.elements.get(&z).ok_or(Error::UnknownElement(z))
    }

    /// A deliberately different parameter set, used as a synthetic higher level of theory.
    ///
    /// Every constant is scaled by `1 + strength * u` with `u` a fixed pattern in `[-1, 1]`.
    pub fn perturbed(&self, strength: f64) -> Self {
        let pattern = [0.7, -0.4, 0.9, -0.8, 0.3, -0.6];
        let mut out = self.clone();
        out.k_wh *= 1.0 + strength * 0.5;
        for (i, p) in out.elements.values_mut().enumerate() {
            let u = |k: usize| 1.0 + strength * pattern[(i + k) % pattern.len()];
            p.h_shell[0] *= u(0);
            p.h_shell[1] *= u(1);
            p.eta *= u(2);
            p.hund *= u(3);
        }
        out
    }
}
