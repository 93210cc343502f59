//! Rasterizes a posed figure into the four modality maps plus annotation.

use crate::error::{Error, Result};
use crate::pose::{Annotation, BBox, Keypoint, Region};
use crate::raster::{dist_to_segment, draw_disc, draw_stroke, Raster};
use crate::rng::{rng_for, Domain};
use rand::Rng;

use super::figure::{
    forward_kinematics, FigureSpec, Limb, ShadeClass, DEPTH_BACKGROUND, DEPTH_HEAD,
    REFERENCE_SIZE,
};
use super::marker::stamp_markers;

/// Pad around a hand's bounding box when applying motion blur, in pixels at
/// the reference size.
const BLUR_PAD: f64 = 3.0;
pub const MIN_RENDER_SIZE: usize = 32;

/// Stored marker legibility as a function of hand blur strength at the
/// reference scale: frozen means of the marker reader's truth-anchored
/// hand confidences, 60 poses per rung. Piecewise linear between rungs,
/// zero past the end. The reader's legibility knee is sharp because a
/// smeared dot quickly falls under the classifier's coverage cut.
const BLUR_CONFIDENCE_CURVE: [(f64, f64); 5] =
    [(0.0, 1.0), (1.0, 0.60), (2.0, 0.46), (3.0, 0.02), (4.0, 0.0)];

/// Weakest blur strength whose stored hand confidence sits well below the
/// 0.2 curation cull threshold.
pub const BLUR_KNEE: f64 = 3.0;

/// Evaluate the frozen blur-to-confidence curve.
pub fn blur_confidence(strength: f64) -> f64 {
    let pts = &BLUR_CONFIDENCE_CURVE;
    if strength <= pts[0].0 {
        return pts[0].1;
    }
    for pair in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
        if strength <= x1 {
            return y0 + (y1 - y0) * (strength - x0) / (x1 - x0);
        }
    }
    pts[pts.len() - 1].1
}

/// One rendered frame: the observation plus its conditioning maps and the
/// ground-truth annotation. Keypoint positions come from kinematics;
/// confidences follow the frozen blur-to-confidence curve for every marker
/// under the blur rectangles, full elsewhere, so the stored annotation
/// degrades with blur the way the marker reader does, without inheriting
/// the reader's pixel-level noise.
#[derive(Debug, Clone)]
pub struct FrameBundle {
    pub rgb: Raster,
    pub skeleton: Raster,
    pub depth: Raster,
    pub normal: Raster,
    pub annotation: Annotation,
    pub blur_strength: f64,
}

pub(crate) struct Shades {
    background: [f64; 3],
    shirt: [f64; 3],
    skin: [f64; 3],
}

impl Default for Shades {
    fn default() -> Self {
        Shades {
            background: [0.86; 3],
            shirt: [0.34; 3],
            skin: [0.60; 3],
        }
    }
}

/// Appearance is a pure function of the spec's appearance seed. Shirt tones
/// keep the blue channel from dominating so clothing never trips the marker
/// reader's blue test.
fn draw_shades(seed: u64) -> Shades {
    let mut rng = rng_for(seed, Domain::Appearance, 0);
    let bg: f64 = rng.gen_range(0.80..0.92);
    let shirt_base: f64 = rng.gen_range(0.28..0.40);
    let warm: f64 = rng.gen_range(-0.05..0.07);
    let skin_base: f64 = rng.gen_range(0.55..0.66);
    Shades {
        background: [bg, bg, bg],
        shirt: [
            (shirt_base + warm).clamp(0.05, 0.95),
            shirt_base,
            (shirt_base - 0.5 * warm).clamp(0.05, 0.95),
        ],
        skin: [
            (skin_base + 0.06).min(0.95),
            skin_base,
            (skin_base - 0.10).max(0.05),
        ],
    }
}

/// Paint a capsule into the three maps. Color gets a 1px anti-alias rim;
/// depth and normal switch hard at half coverage so they stay piecewise
/// clean. Callers paint far-to-near, so the last writer is the nearest.
fn paint_capsule(
    rgb: &mut Raster,
    depth: &mut Raster,
    normal: &mut Raster,
    limb: &Limb,
    color: [f64; 3],
) {
    let hw = limb.half_width;
    let (a, b) = (limb.a, limb.b);
    let x_lo = (a.0.min(b.0) - hw - 1.0).floor().max(0.0) as usize;
    let y_lo = (a.1.min(b.1) - hw - 1.0).floor().max(0.0) as usize;
    let x_hi = ((a.0.max(b.0) + hw + 1.0).ceil()).min(rgb.width() as f64) as usize;
    let y_hi = ((a.1.max(b.1) + hw + 1.0).ceil()).min(rgb.height() as f64) as usize;
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let d = dist_to_segment(p, a, b);
            let cover = (hw - d + 0.5).clamp(0.0, 1.0);
            if cover <= 0.0 {
                continue;
            }
            rgb.blend(x, y, color, cover);
            if cover >= 0.5 {
                depth.set(x, y, [limb.depth; 3]);
                // cylinder cross-section normal
                let s = (d / hw).min(1.0);
                let (qx, qy) = nearest_on_segment(p, a, b);
                let (mut ux, mut uy) = (p.0 - qx, p.1 - qy);
                let len = (ux * ux + uy * uy).sqrt();
                if len > 1e-12 {
                    ux /= len;
                    uy /= len;
                } else {
                    ux = 0.0;
                    uy = 0.0;
                }
                let nz = (1.0 - s * s).max(0.0).sqrt();
                normal.set(
                    x,
                    y,
                    [0.5 + 0.5 * ux * s, 0.5 + 0.5 * uy * s, 0.5 + 0.5 * nz],
                );
            }
        }
    }
}

fn nearest_on_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a.0 + t * dx, a.1 + t * dy)
}

fn paint_head(
    rgb: &mut Raster,
    depth: &mut Raster,
    normal: &mut Raster,
    center: (f64, f64),
    radius: f64,
    color: [f64; 3],
) {
    let x_lo = (center.0 - radius - 1.0).floor().max(0.0) as usize;
    let y_lo = (center.1 - radius - 1.0).floor().max(0.0) as usize;
    let x_hi = ((center.0 + radius + 1.0).ceil()).min(rgb.width() as f64) as usize;
    let y_hi = ((center.1 + radius + 1.0).ceil()).min(rgb.height() as f64) as usize;
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            let (px, py) = (x as f64 + 0.5 - center.0, y as f64 + 0.5 - center.1);
            let d = (px * px + py * py).sqrt();
            let cover = (radius - d + 0.5).clamp(0.0, 1.0);
            if cover <= 0.0 {
                continue;
            }
            rgb.blend(x, y, color, cover);
            if cover >= 0.5 {
                depth.set(x, y, [DEPTH_HEAD; 3]);
                let s = (d / radius).min(1.0);
                let nz = (1.0 - s * s).max(0.0).sqrt();
                let (ux, uy) = if d > 1e-12 { (px / d, py / d) } else { (0.0, 0.0) };
                normal.set(
                    x,
                    y,
                    [0.5 + 0.5 * ux * s, 0.5 + 0.5 * uy * s, 0.5 + 0.5 * nz],
                );
            }
        }
    }
}

/// Paint limbs and head far-to-near into fresh color, depth, and normal
/// maps. Shared by rendering and by annotators that rebuild conditioning
/// maps from recovered keypoints.
pub(crate) fn rasterize_limbs(
    limbs: &[Limb],
    head: Option<((f64, f64), f64)>,
    shades: &Shades,
    size: (usize, usize),
) -> (Raster, Raster, Raster) {
    let (w, h) = size;
    let mut rgb = Raster::filled(w, h, shades.background);
    let mut depth = Raster::filled(w, h, [DEPTH_BACKGROUND; 3]);
    let mut normal = Raster::filled(w, h, [0.5, 0.5, 1.0]);

    // far-to-near painter; stable order breaks depth ties deterministically
    let mut order: Vec<usize> = (0..limbs.len()).collect();
    order.sort_by(|&i, &j| {
        limbs[i]
            .depth
            .partial_cmp(&limbs[j].depth)
            .unwrap()
            .then(i.cmp(&j))
    });
    let mut head_drawn = head.is_none();
    for &i in &order {
        let limb = &limbs[i];
        if !head_drawn && limb.depth >= DEPTH_HEAD {
            let (c, r) = head.unwrap();
            paint_head(&mut rgb, &mut depth, &mut normal, c, r, shades.skin);
            head_drawn = true;
        }
        let color = match limb.shade {
            ShadeClass::Shirt => shades.shirt,
            ShadeClass::Skin => shades.skin,
        };
        paint_capsule(&mut rgb, &mut depth, &mut normal, limb, color);
    }
    if !head_drawn {
        let (c, r) = head.unwrap();
        paint_head(&mut rgb, &mut depth, &mut normal, c, r, shades.skin);
    }
    (rgb, depth, normal)
}

/// Render a figure at `size` with the given hand motion blur strength
/// (box-filter half-width in reference pixels; 0 disables it). The result
/// is bitwise deterministic in `(spec, size, blur_strength)`.
pub fn render(spec: &FigureSpec, size: (usize, usize), blur_strength: f64) -> Result<FrameBundle> {
    let (w, h) = size;
    if w < MIN_RENDER_SIZE || h < MIN_RENDER_SIZE {
        return Err(Error::invalid(format!(
            "render size {w}x{h} below minimum {MIN_RENDER_SIZE}"
        )));
    }
    if !blur_strength.is_finite() || blur_strength < 0.0 {
        return Err(Error::invalid("blur strength must be finite and >= 0"));
    }
    let k = w.min(h) as f64 / REFERENCE_SIZE;
    let geo = forward_kinematics(spec, size);
    let shades = draw_shades(spec.appearance_seed);
    let (mut rgb, mut depth, mut normal) = rasterize_limbs(
        &geo.limbs,
        Some((geo.head_center, geo.head_radius)),
        &shades,
        size,
    );

    stamp_markers(&mut rgb, &geo.annotation, k);

    let rects = hand_blur_rects(&geo.annotation, k, size);
    if blur_strength > 0.0 {
        let half_width = 0.5 + 0.5 * blur_strength * k;
        for rect in &rects {
            let (x0, y0, x1, y1) = rect.pixel_range();
            rgb.directional_blur_region(x0, y0, x1, y1, half_width);
        }
    }

    rgb.quantize8();
    depth.quantize8();
    normal.quantize8();

    let skeleton = draw_skeleton(&geo.annotation, size, &SkeletonStyle::default());

    let mut annotation = geo.annotation;
    if blur_strength > 0.0 {
        let graded = blur_confidence(blur_strength);
        for kp in annotation.all_points_mut() {
            if kp.confidence > 0.0 && rects.iter().any(|r| r.contains(kp.x, kp.y)) {
                kp.confidence = graded;
            }
        }
    }

    Ok(FrameBundle {
        rgb,
        skeleton,
        depth,
        normal,
        annotation,
        blur_strength,
    })
}

/// The rectangles hand motion blur is applied to: each rendered hand's
/// bounding box with the standard pad. Markers inside them carry the curve
/// confidence; everything else stays fully legible.
fn hand_blur_rects(ann: &Annotation, k: f64, size: (usize, usize)) -> Vec<BBox> {
    [Region::LeftHand, Region::RightHand]
        .iter()
        .filter_map(|&r| ann.region_bbox(r, 0.0))
        .map(|bb| bb.padded(BLUR_PAD * k, size))
        .collect()
}

/// Skeleton-map styling. Fingers can be omitted to mimic a degraded pose
/// annotator that only tracks the body.
#[derive(Debug, Clone)]
pub struct SkeletonStyle {
    pub include_fingers: bool,
    pub stroke_half_width: f64,
    pub joint_radius: f64,
    pub min_confidence: f64,
}

impl Default for SkeletonStyle {
    fn default() -> Self {
        SkeletonStyle {
            include_fingers: true,
            stroke_half_width: 0.6,
            joint_radius: 0.8,
            min_confidence: 0.05,
        }
    }
}

type PointRef = (Region, usize);

const BODY_EDGES: [(PointRef, PointRef, [f64; 3]); 10] = [
    ((Region::Body, 5), (Region::Body, 6), [0.85, 0.75, 0.10]),
    ((Region::Body, 5), (Region::Body, 7), [0.90, 0.45, 0.10]),
    ((Region::Body, 7), (Region::LeftHand, 0), [0.95, 0.25, 0.15]),
    ((Region::Body, 6), (Region::Body, 8), [0.15, 0.70, 0.65]),
    ((Region::Body, 8), (Region::RightHand, 0), [0.15, 0.45, 0.90]),
    ((Region::Body, 5), (Region::Body, 11), [0.25, 0.75, 0.25]),
    ((Region::Body, 6), (Region::Body, 12), [0.20, 0.60, 0.35]),
    ((Region::Body, 11), (Region::Body, 12), [0.75, 0.20, 0.70]),
    ((Region::Body, 0), (Region::Body, 5), [0.55, 0.30, 0.80]),
    ((Region::Body, 0), (Region::Body, 6), [0.45, 0.25, 0.85]),
];

const FINGER_COLORS: [[f64; 3]; 5] = [
    [0.90, 0.25, 0.20],
    [0.95, 0.80, 0.20],
    [0.30, 0.85, 0.30],
    [0.20, 0.80, 0.85],
    [0.85, 0.30, 0.85],
];

fn point(ann: &Annotation, r: PointRef) -> Keypoint {
    ann.region(r.0)[r.1]
}

/// Draw a pose-skeleton conditioning map: colored bones and joint dots on
/// black. Only keypoints above the style's confidence floor participate.
pub fn draw_skeleton(ann: &Annotation, size: (usize, usize), style: &SkeletonStyle) -> Raster {
    let (w, h) = size;
    let k = w.min(h) as f64 / REFERENCE_SIZE;
    let mut img = Raster::new(w, h);
    let hw = style.stroke_half_width * k;
    let jr = style.joint_radius * k;
    let ok = |p: &Keypoint| p.confidence > style.min_confidence;

    let mut edges: Vec<(PointRef, PointRef, [f64; 3])> = BODY_EDGES.to_vec();
    if style.include_fingers {
        for region in [Region::LeftHand, Region::RightHand] {
            for f in 0..5 {
                let color = FINGER_COLORS[f];
                edges.push(((region, 0), (region, 1 + 4 * f), color));
                for seg in 0..3 {
                    edges.push((
                        (region, 1 + 4 * f + seg),
                        (region, 2 + 4 * f + seg),
                        color,
                    ));
                }
            }
        }
    }
    for (ra, rb, color) in &edges {
        let (a, b) = (point(ann, *ra), point(ann, *rb));
        if ok(&a) && ok(&b) {
            draw_stroke(&mut img, (a.x, a.y), (b.x, b.y), hw, *color, 1.0);
        }
    }
    // joint dots on top, brighter than their bones
    for (ra, _, color) in &edges {
        let p = point(ann, *ra);
        if ok(&p) {
            let bright = [
                (color[0] + 0.35).min(1.0),
                (color[1] + 0.35).min(1.0),
                (color[2] + 0.35).min(1.0),
            ];
            draw_disc(&mut img, p.x, p.y, jr, bright, 1.0);
        }
    }
    if style.include_fingers {
        for region in [Region::LeftHand, Region::RightHand] {
            for (i, p) in ann.region(region).iter().enumerate() {
                if ok(p) {
                    let color = if i == 0 {
                        [1.0, 1.0, 1.0]
                    } else {
                        FINGER_COLORS[(i - 1) / 4]
                    };
                    draw_disc(&mut img, p.x, p.y, jr * 0.8, color, 1.0);
                }
            }
        }
    }
    for p in &ann.face {
        if ok(p) {
            draw_disc(&mut img, p.x, p.y, jr * 0.7, [0.95, 0.95, 0.95], 1.0);
        }
    }
    img.quantize8();
    img
}

/// Skeleton strokes composited over a depth map, the stage-two annotator's
/// combined conditioning signal.
pub fn skeleton_on_depth(
    ann: &Annotation,
    depth: &Raster,
    style: &SkeletonStyle,
) -> Result<Raster> {
    let size = (depth.width(), depth.height());
    let strokes = draw_skeleton(ann, size, style);
    let mut out = depth.clone();
    for y in 0..size.1 {
        for x in 0..size.0 {
            let s = strokes.get(x, y);
            if s[0] + s[1] + s[2] > 0.02 {
                out.set(x, y, s);
            }
        }
    }
    out.quantize8();
    Ok(out)
}
