//! Two-level periodic homogenization of the cardiac bidomain model.
//!
//! The crate computes effective conductivity tensors from voxelized
//! reference cells (a mitochondrial δ-scale nested inside a cellular
//! ε-scale), time-steps the resulting macroscopic bidomain system with
//! FitzHugh-Nagumo membrane kinetics, and verifies the homogenization
//! limit against a resolved microscopic simulation through discrete
//! unfolding operators.

pub mod cell;
pub mod dns;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod grid;
pub mod ionic;
pub mod macro_solver;
pub mod pcg;
pub mod tensor;
pub mod unfolding;
pub mod vtk;

pub use error::Error;
pub use geometry::{CellKind, InclusionShape, Label, TiledDomainSpec, TiledGrid, UnitCellGeometry};
pub use grid::{GridField, GridShape};
pub use ionic::FhnParams;
pub use tensor::{SpdTensor, TensorField};

pub type Result<T> = std::result::Result<T, Error>;
