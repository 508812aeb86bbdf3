//! Rotary position encoding on a chunked 3D sphere.
//!
//! Tokens are split into chunks of `c`; a token at chunk `j`, slot `m` gets
//! the usual RoPE rotation by `m * theta_l` plus a chunk phase `phi_j` that
//! mixes each rotary pair with its quarter turn. Attention scores then depend
//! on two relative coordinates: the within-chunk distance `m - n` and the
//! chunk phase gap `phi_i - phi_j`.
//!
//! Modules:
//! - [`angles`]: frequency and chunk-phase schedules
//! - [`chunking`]: position decomposition and the relative-position matrix
//! - [`encoding`]: RoPE and chunked encoding kernels (real and complex forms)
//! - [`attention`]: scores, toy attention forward/backward, gradient checks
//! - [`decay`]: long-term decay bounds and curves
//! - [`interpolation`]: linear interpolation versus rechunking resolution
//! - [`verify`]: randomized invariant suites
//! - [`cli`]: the `rpe3d` command-line front-end

pub mod angles;
pub mod attention;
pub mod chunking;
pub mod cli;
pub mod decay;
pub mod encoding;
mod error;
pub mod interpolation;
pub mod verify;

pub use angles::{
    phi_schedule, scale_thetas, theta_schedule, AngleSchedule, ChunkAngles, DEFAULT_BASE,
};
pub use attention::{
    attention_backward, attention_forward, grad_check, grad_check_encoding, score_3d,
    score_from_encoded, score_rope, AttentionBatch, AttentionGrads, GradCheckReport, ScoreInputs,
};
pub use chunking::{chunk_count, relative_position_matrix, ChunkLayout, RelPos};
pub use decay::{
    decay_bound, decay_curve_3d, decay_curve_rope, decay_surface_3d, partial_sums, DecayCurve,
    DecaySurface,
};
pub use encoding::{
    encode_3d, encode_3d_phase, encode_rope, perp, rotation_matrix, EncodedVector, HeadVector,
    Matrix,
};
pub use error::{Error, Result};
pub use interpolation::{
    linear_pi_rope, rechunk_3d, resolution_3d, theorem1_grid_check, Rechunk, ResolutionReport,
};
