//! Unit conversions used at the file-format boundary.
//!
//! Internally everything is bohr and hartree; datasets speak angstrom and eV.

pub const HARTREE_TO_EV: f64 = 27.211386245988;
pub const BOHR_TO_ANGSTROM: f64 = 0.529177210903;
pub const ANGSTROM_TO_BOHR: f64 = 1.0 / BOHR_TO_ANGSTROM;

/// 1 kcal/mol expressed in meV, the accuracy threshold used in reports.
pub const CHEMICAL_ACCURACY_MEV: f64 = 43.4;

pub fn hartree_to_ev(e: f64) -> f64 {
    e * HARTREE_TO_EV
}

pub fn ev_to_hartree(e: f64) -> f64 {
    e / HARTREE_TO_EV
}
