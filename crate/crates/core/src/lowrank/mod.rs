//! Low-rank compression and rank analysis.

mod aca;
mod rank;
mod study;

pub use aca::{
    aca_compress, independent_lu, lr_apply, AcaOptions, BlockEntries, Deadline, FnBlock, KernelBlock, LowRankBlock,
    PIVOT_FLOOR,
};
pub use rank::{decay_index, numerical_rank, rank_from_singular_values, singular_values};
pub use study::{
    loglog_slope, neighbour_offset, rank_study, rank_sweep, ClassRank, RankStudyPoint, RankStudyResult,
    DECAY_THRESHOLD, STUDY_CLASSES,
};
