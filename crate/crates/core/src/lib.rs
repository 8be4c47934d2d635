//! Hierarchical low-rank representations of dense kernel matrices over 3D
//! particle clouds.
//!
//! Three block structures share one octree and one compression scheme:
//!
//! * `hodlr3d` compresses vertex-sharing and well-separated cube pairs and
//!   refines face- and edge-sharing pairs down to dense leaf blocks,
//! * `hodlr` compresses every off-diagonal block,
//! * `hstrong` compresses only well-separated pairs.
//!
//! Admissible blocks are compressed with partially pivoted ACA and store only
//! their pivots and the LU factors of the pivot submatrix.

pub mod error;
pub mod hmatrix;
pub mod kernel;
pub mod lowrank;
pub mod octree;
pub mod parallel;
pub mod solver;

pub use error::{Error, Result};
pub use hmatrix::{direct_matvec, initialize, relative_error, HMatrix, HMatrixOptions, MatvecTiming, RepStats};
pub use kernel::{
    eval_entry, generate_points, Coords, DiagonalRule, Distribution, KernelKind, KernelSpec, Point3, PointSet,
};
pub use lowrank::{aca_compress, lr_apply, numerical_rank, rank_study, AcaOptions, Deadline, LowRankBlock};
pub use octree::{
    build_interaction_lists, build_tree, census, classify_pair, AdmissibilityClass, BlockCensus, Cube, Domain,
    InteractionLists, Octree, Variant,
};
pub use parallel::{
    comm_ledger, parallel_initialize, parallel_matvec, CommKind, CommLedger, CommStep, ParallelInit, ParallelMatvec,
    PartitionPlan, WorkerTiming,
};
pub use solver::{
    discretize_ie, gmres, ie_experiment, GmresOptions, GmresResult, IEOperator, IeReport, LinearOperator,
};
