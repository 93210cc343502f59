//! Fiducial marker palette.
//!
//! Every realized keypoint carries a small colored dot stamped over a black
//! underlay disc. Dots are strongly blue (B channel saturated) with the
//! slot identity coded on the R and G channels over an 8x8 grid. The black
//! underlay pins the base color under each dot, so a reader can recover
//! both the code and the per-pixel coverage by plain division, at any
//! sub-pixel coverage. Motion blur smears dots into their surroundings,
//! which breaks that arithmetic and is what erodes reader confidence.

use crate::pose::Region;
use crate::raster::{draw_disc, draw_disc_crisp, Raster};
use serde::{Deserialize, Serialize};

use super::figure::{realized_points, BODY_SLOTS, FACE_SLOTS, REALIZED_MARKERS};
use crate::pose::{Annotation, HAND_POINTS};

/// Blend factor of the colored dot over its underlay.
pub const MARKER_ALPHA: f64 = 0.82;
/// Dot radius at the 64x64 reference size; the underlay extends further.
pub const MARKER_RADIUS: f64 = 1.0;
pub const UNDERLAY_RADIUS: f64 = 1.9;
/// R/G code grid: 8 levels, 24 apart, topping out at 168 so the blue
/// channel always dominates by a wide margin.
pub const CODE_STEP: f64 = 24.0;
pub const CODE_LEVELS: usize = 8;
/// Pixel qualifies as marker-ish when B exceeds both R and G by this much
/// (0..255 scale) and clears the minimum brightness.
pub const FLAG_MIN: f64 = 18.0;
pub const BLUE_MIN: f64 = 25.0;
/// Maximum Chebyshev distance from a decoded (R, G) code to its grid point.
pub const MATCH_TOL: f64 = 8.0;
/// Minimum per-pixel coverage worth accumulating.
pub const COVERAGE_MIN: f64 = 0.12;
/// A marker only needs this fraction of an isolated dot's mass to reach
/// full confidence, leaving headroom for crowded fingers.
pub const MASS_HEADROOM: f64 = 0.45;
/// Confidence below this snaps to zero; the rest is reported in 0.05 steps.
/// The floor sits high enough that the faint ink two blurred neighbors mix
/// into a dead marker's window never reads as a live marker.
pub const CONFIDENCE_FLOOR: f64 = 0.45;
pub const CONFIDENCE_QUANTUM: f64 = 0.05;

/// Grid cell assigned to each palette slot.
///
/// The assignment is scrambled rather than sequential, and avoids two code
/// families outright, because blur forges codes in predictable ways. Mixing
/// two dots half-and-half lands exactly on their codes' midpoint, and
/// finger chains are colinear and evenly spaced, so no wrist-knuckle chain
/// or phalanx triple forms an arithmetic progression here. Mixing a dot
/// with the gray figure or background sweeps the decoded code along the
/// line toward white; for codes on the R=G diagonal that line retraces the
/// diagonal itself, so diagonal cells are not used at all (off the
/// diagonal, no code's line toward white passes through another's cell).
const SLOT_CODES: [u8; 54] = [
    20, 60, 43, 38, 48, 10, 4, 15, 55, 51, 26, 25, 17, 5, 23, 28, 59, 41, 21, 24, 52, 16, 35, 49,
    8, 47, 31, 2, 61, 19, 30, 1, 12, 50, 29, 3, 39, 6, 11, 22, 58, 7, 53, 44, 46, 34, 57, 13, 14,
    42, 37, 62, 33, 56,
];

/// Flat grid index (row-major) of the code for palette slot `i`.
pub(crate) fn grid_index(i: usize) -> usize {
    SLOT_CODES[i] as usize
}

/// (R, G) code for palette slot `i`.
pub fn slot_code(i: usize) -> (f64, f64) {
    let v = grid_index(i);
    (
        CODE_STEP * (v % CODE_LEVELS) as f64,
        CODE_STEP * (v / CODE_LEVELS) as f64,
    )
}

/// Palette order: body slots, face slots, left hand, right hand. This is
/// also the order `realized_points` walks.
pub fn palette_len() -> usize {
    REALIZED_MARKERS
}

/// The keypoint slot a palette index refers to.
pub fn palette_slot(i: usize) -> (Region, usize) {
    let nb = BODY_SLOTS.len();
    let nf = FACE_SLOTS.len();
    if i < nb {
        (Region::Body, BODY_SLOTS[i])
    } else if i < nb + nf {
        (Region::Face, FACE_SLOTS[i - nb])
    } else if i < nb + nf + HAND_POINTS {
        (Region::LeftHand, i - nb - nf)
    } else {
        (Region::RightHand, i - nb - nf - HAND_POINTS)
    }
}

/// Stamp all realized markers of `ann` onto `img`. Underlays go down first
/// so late dots are never blacked out by a neighbor, then dots in palette
/// order (hands last, matching their depth precedence). Dots use a crisp
/// quarter-pixel edge so the ink of one never reaches a neighbor's core
/// pixels at legal marker separations.
pub fn stamp_markers(img: &mut Raster, ann: &Annotation, scale: f64) {
    let pts = realized_points(ann);
    for (_, _, kp) in &pts {
        draw_disc(img, kp.x, kp.y, UNDERLAY_RADIUS * scale, [0.0; 3], 1.0);
    }
    for (i, (_, _, kp)) in pts.iter().enumerate() {
        let (r, g) = slot_code(i);
        let rgb = [r / 255.0, g / 255.0, 1.0];
        draw_disc_crisp(img, kp.x, kp.y, MARKER_RADIUS * scale, rgb, MARKER_ALPHA);
    }
}

/// Machine-readable palette description, emitted next to generated corpora.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PaletteDoc {
    pub alpha: f64,
    pub dot_radius_reference: f64,
    pub underlay_radius_reference: f64,
    pub code_step: f64,
    pub match_tolerance: f64,
    pub confidence_floor: f64,
    pub slots: Vec<PaletteSlot>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PaletteSlot {
    pub region: String,
    pub index: usize,
    pub r: f64,
    pub g: f64,
}

pub fn palette_doc() -> PaletteDoc {
    let slots = (0..palette_len())
        .map(|i| {
            let (region, index) = palette_slot(i);
            let (r, g) = slot_code(i);
            PaletteSlot {
                region: format!("{region:?}"),
                index,
                r,
                g,
            }
        })
        .collect();
    PaletteDoc {
        alpha: MARKER_ALPHA,
        dot_radius_reference: MARKER_RADIUS,
        underlay_radius_reference: UNDERLAY_RADIUS,
        code_step: CODE_STEP,
        match_tolerance: MATCH_TOL,
        confidence_floor: CONFIDENCE_FLOOR,
        slots,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_distinct_and_blue_dominated() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..palette_len() {
            let (r, g) = slot_code(i);
            assert!(seen.insert((r as i64, g as i64)));
            assert!(r <= 168.0 && g <= 168.0);
            // worst-case blue margin at full coverage
            assert!(MARKER_ALPHA * (255.0 - r.max(g)) > 2.0 * FLAG_MIN);
        }
    }

    #[test]
    fn chain_codes_never_form_arithmetic_progressions() {
        let nb = BODY_SLOTS.len() + FACE_SLOTS.len();
        let code = |p: usize| {
            let v = grid_index(p);
            ((v % CODE_LEVELS) as i64, (v / CODE_LEVELS) as i64)
        };
        for base in [nb, nb + HAND_POINTS] {
            for f in 0..5 {
                let m = base + 1 + 4 * f;
                for (a, b, c) in [(base, m, m + 1), (m, m + 1, m + 2), (m + 1, m + 2, m + 3)] {
                    let (ca, cb, cc) = (code(a), code(b), code(c));
                    assert!(
                        ca.0 + cc.0 != 2 * cb.0 || ca.1 + cc.1 != 2 * cb.1,
                        "palette {a},{b},{c}"
                    );
                }
            }
        }
    }

    #[test]
    fn codes_avoid_gray_mix_families() {
        // off the diagonal, and no code on another's line toward white
        let pt = |p: usize| {
            let v = grid_index(p);
            (
                CODE_STEP * (v % CODE_LEVELS) as f64,
                CODE_STEP * (v / CODE_LEVELS) as f64,
            )
        };
        for p in 0..palette_len() {
            let (r, g) = pt(p);
            assert!(r != g, "palette {p} on the diagonal");
        }
        for a in 0..palette_len() {
            for b in 0..palette_len() {
                if a == b {
                    continue;
                }
                let (r1, g1) = pt(a);
                let (r2, g2) = pt(b);
                let cross = (r2 - r1) * (255.0 - g1) - (g2 - g1) * (255.0 - r1);
                let s = (r2 - r1) / (255.0 - r1);
                assert!(
                    cross != 0.0 || !(0.0..1.0).contains(&s),
                    "palette {b} lies between {a} and white"
                );
            }
        }
    }

    #[test]
    fn palette_slots_cover_every_realized_point() {
        let mut hands = 0;
        for i in 0..palette_len() {
            let (region, idx) = palette_slot(i);
            match region {
                Region::Body => assert!(BODY_SLOTS.contains(&idx)),
                Region::Face => assert!(FACE_SLOTS.contains(&idx)),
                Region::LeftHand | Region::RightHand => {
                    assert!(idx < HAND_POINTS);
                    hands += 1;
                }
            }
        }
        assert_eq!(hands, 2 * HAND_POINTS);
        assert_eq!(palette_doc().slots.len(), palette_len());
    }
}
