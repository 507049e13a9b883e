//! Numerical laboratory for single-bubble harmonic map flow from the unit-area
//! flat square torus into the round sphere `S^2 ⊂ R^3`.
//!
//! The crate is `no_std` (it needs `alloc`): every routine here is a pure
//! function of its inputs. File formats, configuration and the command line
//! live in the companion `bubblelab` crate.
//!
//! Module map:
//!
//! * [`torus_geometry`]: periodic grid calculus, translation coordinates and
//!   the bubble-weighted norm.
//! * [`sphere_maps`]: projection to the sphere, tension, second variation,
//!   stereographic rescalings and the rotation family.
//! * [`greens_torus`]: Ewald-summed Green's function, its regular part and
//!   the constant `J`.
//! * [`adapted_bubble`]: construction of the adapted bubbles and the energy
//!   expansion measurements along the bubble family.
//! * [`flow_engine`]: projected Heun time stepping and bubble detection.
//! * [`diagnostics`]: Lojasiewicz ratios, distance to the bubble family and
//!   decay-law fitting.

#![no_std]

extern crate alloc;

pub mod adapted_bubble;
pub mod diagnostics;
pub mod flow_engine;
pub mod greens_torus;
pub mod math;
pub mod nelder_mead;
pub mod sphere_maps;
pub mod torus_geometry;
pub mod vec3;

pub use adapted_bubble::{BubbleError, BubbleParams};
pub use diagnostics::DiagnosticsRecord;
pub use flow_engine::{FlowError, FlowState};
pub use greens_torus::GreensTable;
pub use sphere_maps::RotationParam;
pub use torus_geometry::{ToroidalField3, ToroidalGrid, WeightField};

/// Area of the round unit sphere, which is also the Dirichlet energy of a
/// degree-one conformal map `S^2 -> S^2`.
pub const SPHERE_ENERGY: f64 = 4.0 * core::f64::consts::PI;
