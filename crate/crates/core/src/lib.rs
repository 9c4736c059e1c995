//! Learned nonlinear warping of linear finite-element deformation.
//!
//! The pipeline has three stages:
//!
//! 1. **Data generation**: a normalized training mesh is loaded by ramped
//!    force fields. Each quasi-static linear pose `ũ` is registered to a
//!    nonlinear pose `u` by solving `f_int(u) = ℛ K ũ` ([`registration`]),
//!    and every free node becomes a [`dataset::TrainingRecord`] made of a
//!    7-dimensional rotation-invariant feature vector ([`features`]) and a
//!    displacement correction expressed in a canonical frame.
//! 2. **Training**: a small tanh MLP ([`net`]) is fitted with Adam.
//! 3. **Runtime**: [`warper::deepwarp_step`] performs one pre-factorized
//!    linear implicit step ([`dynamics`]) and adds the per-node correction
//!    predicted by the network. Complex shapes are handled per domain in
//!    parent-attached frames ([`substructure`]).
//!
//! Geometric baselines (modal warping and rotation-strain warping) and a
//! full nonlinear Newmark integrator are provided for comparison.

pub mod dataset;
pub mod dynamics;
pub mod features;
pub mod linalg;
pub mod material;
pub mod mesh;
pub mod net;
pub mod registration;
pub mod sparse;
pub mod substructure;
pub mod warper;

pub use linalg::{Mat3, Vec3};
pub use material::{MaterialModel, MaterialParams};
pub use mesh::TetMesh;
