//! Group-theoretic machinery shared by the basis, the SCF rotation checks and
//! the network: real spherical harmonics, real Wigner-D matrices, real
//! Clebsch-Gordan tables, irreps feature containers and EvNorm.

pub mod cg;
pub mod coupling;
pub mod evnorm;
pub mod irreps;
pub mod sph;
pub mod wigner;

pub use cg::{cg_real, CgSlice, CgTable};
pub use coupling::{parity_allowed, ChannelCoupling, CouplingPath};
pub use evnorm::{evnorm, EvNormStats};
pub use irreps::{rotate_feature, IrrepsFeature, IrrepsSpec, Parity, Segment};
pub use sph::{gaunt_real, real_sph_harm, real_sph_harm_vec};
pub use wigner::{
    axis_angle, random_rotation, rotation_from_quaternion, wigner_d_real, Mat3, RotationRep,
    WignerBlock,
};
