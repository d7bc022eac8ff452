//! Reading inputs and writing results.

pub mod export;
pub mod frames;
pub mod ply;
pub mod stats;

pub use export::{save_textured_mesh, TextureAtlas};
pub use frames::{load_frames, save_frames, Frame, FrameSet};
pub use ply::{load_mesh, save_mesh};
pub use stats::RunStats;
