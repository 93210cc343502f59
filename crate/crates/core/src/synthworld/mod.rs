//! Synthetic capture rig: an articulated upper-body figure rendered with
//! fiducial keypoint markers, plus the oracle that reads frames back. Poses
//! and appearance are pure functions of seeds, renders are bitwise
//! deterministic, and hand motion blur degrades marker confidence the same
//! way it would degrade a real annotator.

pub mod figure;
pub mod marker;
pub mod oracle;
pub mod render;

pub use figure::{forward_kinematics, realized_points, sample_pose, BoneLengths, FigureSpec};
pub use marker::{palette_doc, PaletteDoc};
pub use oracle::{oracle_annotate, reconstruct_maps};
pub use render::{
    draw_skeleton, render, skeleton_on_depth, FrameBundle, SkeletonStyle, MIN_RENDER_SIZE,
};

use crate::raster::Raster;

/// Degrade a surface-normal map the way a low-grade geometry annotator
/// would: heavy smoothing plus a pull toward the flat frontal normal erases
/// the cross-section shading that makes the modality informative, while
/// keeping the value range plausible.
pub fn corrupt_normal_map(map: &mut Raster) {
    let radius = (map.width().min(map.height()) / 10).max(3);
    map.box_blur(radius);
    let flat = [0.5, 0.5, 1.0];
    for (i, v) in map.data_mut().iter_mut().enumerate() {
        *v = 0.6 * *v + 0.4 * flat[i % 3];
    }
    map.quantize8();
}
