//! Physical constants (CODATA 2018 exact/recommended values) and species data.

use serde::{Deserialize, Serialize};

/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K.
pub const K_B: f64 = 1.380_649e-23;
/// Elementary charge, C.
pub const E_CHARGE: f64 = 1.602_176_634e-19;
/// Atomic mass unit, kg.
pub const AMU: f64 = 1.660_539_066_60e-27;
/// Mass of 88Sr in atomic mass units.
pub const SR88_MASS_U: f64 = 87.905_612;
/// S1/2 - D5/2 quadrupole transition wavelength in Sr+, m.
pub const SR_674_NM: f64 = 674.0e-9;

pub const TWO_PI: f64 = std::f64::consts::TAU;

/// Snapshot of every constant, written into tool metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsTable {
    pub hbar_j_s: f64,
    pub k_b_j_per_k: f64,
    pub e_charge_c: f64,
    pub amu_kg: f64,
    pub sr88_mass_u: f64,
}

pub fn table() -> ConstantsTable {
    ConstantsTable {
        hbar_j_s: HBAR,
        k_b_j_per_k: K_B,
        e_charge_c: E_CHARGE,
        amu_kg: AMU,
        sr88_mass_u: SR88_MASS_U,
    }
}
