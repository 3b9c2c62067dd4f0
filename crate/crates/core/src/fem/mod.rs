//! Structured P1 finite elements on the variance / log-moneyness rectangle.

pub mod assembly;
pub mod mesh;

pub use assembly::{assemble_blocks, AssemblyBlocks, Q_A};
pub use mesh::{build_mesh, evaluate_p1, Domain2D, FemSpace, Grading, MeshSpec, NodeKind};
