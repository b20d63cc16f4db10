//! Voxel radiance fields as synthesizable textures.
//!
//! A scene is stored as a density grid plus a feature grid with a small
//! color head. The crate renders such fields by fixed-step ray marching,
//! flattens them into 2D lattices of voxel columns, synthesizes larger
//! lattices by patch matching over column vectors, relights results via
//! per-column shading vectors, and warps synthesized fields onto curved
//! surfaces through a learned deformation MLP.

pub mod boundary;
pub mod column;
pub mod deform;
pub mod field;
pub mod grid;
pub mod io;
pub mod kdtree;
pub mod math;
pub mod shading;
pub mod synthesis;

/// Errors shared across the crate. Variants mirror the failure modes of the
/// public operations; callers that need process exit codes map `Io`/input
/// validation to one class and `NonFinite` to another.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("exemplar too small: {0}")]
    ExemplarTooSmall(String),
    #[error("overlap mask has no cells")]
    EmptyMask,
    #[error("boundary width too large: {0}")]
    LbTooLarge(String),
    #[error("no candidate patches: {0}")]
    NoCandidates(String),
    #[error("shading channel {0} has no valid entries")]
    ChannelEmpty(usize),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("unsupported surface: {0}")]
    UnsupportedSurface(String),
    #[error("unknown mode: {0}")]
    UnknownMode(String),
    #[error("shading maps have different view orders")]
    ViewOrderMismatch,
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
