//! Marker reader: recovers keypoints, confidences, and conditioning maps
//! from a finished image, using nothing but pixel content and the published
//! palette. This is the stand-in for the off-the-shelf pose and geometry
//! annotators a real curation pipeline would call.

use crate::pose::{Annotation, Keypoint, Region};
use crate::raster::{draw_disc, draw_disc_crisp, Raster};

use super::figure::{
    Limb, ShadeClass, DEPTH_FOREARM, DEPTH_HAND, DEPTH_HEAD, DEPTH_TORSO, DEPTH_UPPER_ARM,
    REFERENCE_SIZE,
};
use super::marker::{
    grid_index, palette_len, palette_slot, BLUE_MIN, CODE_LEVELS, CODE_STEP, CONFIDENCE_FLOOR,
    CONFIDENCE_QUANTUM, COVERAGE_MIN, FLAG_MIN, MARKER_ALPHA, MARKER_RADIUS, MASS_HEADROOM,
    MATCH_TOL, UNDERLAY_RADIUS,
};
use super::render::{rasterize_limbs, Shades};

/// Residual up to this much (code units) is treated as quantization noise
/// and carries full weight; beyond it the weight falls off quadratically
/// until the hard cut at `MATCH_TOL`.
const RESIDUAL_SOFT: f64 = 2.0;
/// Pixels only count toward a marker within this radius (reference pixels)
/// of its strongest pixel, so smeared or misclassified ink elsewhere in the
/// image cannot prop a marker's confidence up.
const WINDOW_RADIUS: f64 = 2.6;
/// Confidence saturates when the strongest pixel in a marker's window
/// reaches this fraction of an isolated dot's peak. A crisp-edged dot
/// always covers at least one pixel fully, so clean markers clear this
/// easily while any blur dilutes the peak below it.
const PEAK_HEADROOM: f64 = 0.85;
/// Same-code hits between the window edge and this multiple of it count as
/// halo: ink a real dot cannot produce, since a dot's footprint fits well
/// inside the window. Smears and color-mixed plateaus spill past it.
const HALO_FACTOR: f64 = 1.6;
/// A read whose halo mass exceeds this fraction of its window mass is not a
/// dot and scores zero confidence.
const HALO_MAX_RATIO: f64 = 0.5;

/// Classify one pixel (0..255 scale). Returns the grid code index and an
/// accumulation weight: recovered dot coverage, discounted when the decoded
/// code sits away from its grid point. Assumes the base under a dot is
/// black, which the underlay guarantees on clean renders; anything blurred
/// into the surroundings decodes inconsistently and loses its weight.
fn classify(r: f64, g: f64, b: f64) -> Option<(usize, f64)> {
    if b - r.max(g) < FLAG_MIN || b < BLUE_MIN {
        return None;
    }
    let c = b / (MARKER_ALPHA * 255.0);
    if !(COVERAGE_MIN..=1.03).contains(&c) {
        return None;
    }
    let denom = MARKER_ALPHA * c;
    let code_r = r / denom;
    let code_g = g / denom;
    let ri = (code_r / CODE_STEP).round().clamp(0.0, (CODE_LEVELS - 1) as f64) as usize;
    let gi = (code_g / CODE_STEP).round().clamp(0.0, (CODE_LEVELS - 1) as f64) as usize;
    let residual = (code_r - CODE_STEP * ri as f64)
        .abs()
        .max((code_g - CODE_STEP * gi as f64).abs());
    if residual > MATCH_TOL {
        return None;
    }
    let soft = if residual <= RESIDUAL_SOFT {
        1.0
    } else {
        (1.0 - (residual - RESIDUAL_SOFT) / (MATCH_TOL - RESIDUAL_SOFT)).powi(2)
    };
    Some((gi * CODE_LEVELS + ri, c * soft))
}

/// Pixels lighter than this fraction of the window's strongest pixel are
/// dropped from the mass and centroid. The anti-aliased rim of a dot is
/// asymmetric whenever a neighboring dot's fringe touches it; keeping only
/// the core makes the centroid insensitive to that.
const CORE_FRACTION: f64 = 0.35;

/// One decoded marker candidate: windowed weight mass, weighted coordinate
/// sums, the strongest single-pixel weight inside the window, and the
/// same-code mass in the annulus just outside it.
#[derive(Clone, Copy, Default)]
struct CodeRead {
    mass: f64,
    sx: f64,
    sy: f64,
    peak: f64,
    halo: f64,
}

type Hit = (f64, f64, f64);

/// Classify every pixel; hits are grouped per grid code.
fn collect_hits(image: &Raster) -> Vec<Vec<Hit>> {
    let mut hits: Vec<Vec<Hit>> = vec![Vec::new(); CODE_LEVELS * CODE_LEVELS];
    for y in 0..image.height() {
        for x in 0..image.width() {
            let px = image.get(x, y);
            if let Some((idx, wgt)) = classify(px[0] * 255.0, px[1] * 255.0, px[2] * 255.0) {
                hits[idx].push((x as f64 + 0.5, y as f64 + 0.5, wgt));
            }
        }
    }
    hits
}

/// Mass, core centroid, peak, and halo of the hits around one anchor.
fn window_read(list: &[Hit], anchor: (f64, f64), gate2: f64) -> CodeRead {
    let halo2 = gate2 * HALO_FACTOR * HALO_FACTOR;
    let d2 = |x: f64, y: f64| (x - anchor.0).powi(2) + (y - anchor.1).powi(2);
    let mut read = CodeRead::default();
    for &(x, y, wgt) in list {
        if d2(x, y) <= gate2 {
            read.peak = read.peak.max(wgt);
        }
    }
    for &(x, y, wgt) in list {
        let d = d2(x, y);
        if d <= gate2 {
            if wgt >= CORE_FRACTION * read.peak {
                read.mass += wgt;
                read.sx += wgt * x;
                read.sy += wgt * y;
            }
        } else if d <= halo2 {
            read.halo += wgt;
        }
    }
    read
}

/// Weighted mass, centroid, and peak per grid code at marker scale `k`.
/// Each code is anchored at whichever hit captures the most hit weight
/// inside the window around it, and only that window's hits count.
/// Anchoring on cluster mass rather than a single strong pixel keeps stray
/// look-alike pixels (color mixing on the seam of two adjacent dots can
/// land exactly on a third code) from stealing a marker whose real dot sits
/// elsewhere.
fn scan_codes(image: &Raster, k: f64) -> Vec<CodeRead> {
    let gate2 = (WINDOW_RADIUS * k).powi(2);
    let hits = collect_hits(image);

    let mut acc = vec![CodeRead::default(); CODE_LEVELS * CODE_LEVELS];
    for (idx, list) in hits.iter().enumerate() {
        let mut best: Option<(f64, (f64, f64))> = None;
        for &(ax, ay, _) in list {
            let mass: f64 = list
                .iter()
                .filter(|&&(x, y, _)| (x - ax).powi(2) + (y - ay).powi(2) <= gate2)
                .map(|&(_, _, wgt)| wgt)
                .sum();
            if best.map_or(true, |(bm, _)| mass > bm) {
                best = Some((mass, (ax, ay)));
            }
        }
        if let Some((_, anchor)) = best {
            acc[idx] = window_read(list, anchor, gate2);
        }
    }
    acc
}

/// Mass and peak weight an isolated, unblurred dot of the weakest code
/// yields at scale `k`. Computed by stamping one on a scratch tile, centered
/// on a pixel, and reading it back, so it tracks the stamping and
/// classification rules exactly.
fn isolated_dot_stats(k: f64) -> (f64, f64) {
    let side = ((UNDERLAY_RADIUS * k + 2.0) * 2.0).ceil() as usize | 1;
    let mut tile = Raster::filled(side, side, [0.85; 3]);
    let c = (side / 2) as f64 + 0.5;
    draw_disc(&mut tile, c, c, UNDERLAY_RADIUS * k, [0.0; 3], 1.0);
    let worst = CODE_STEP * (CODE_LEVELS - 1) as f64;
    draw_disc_crisp(
        &mut tile,
        c,
        c,
        MARKER_RADIUS * k,
        [worst / 255.0, worst / 255.0, 1.0],
        MARKER_ALPHA,
    );
    tile.quantize8();
    let read = scan_codes(&tile, k)[CODE_LEVELS * CODE_LEVELS - 1];
    (read.mass, read.peak)
}

/// Confidence of one window read: the weaker of two ratios against an
/// isolated dot's stats, so one stray look-alike pixel cannot carry a
/// marker (mass bound) and blur dilutes confidence steadily (peak bound).
/// A halo-heavy read is rejected outright: that shape is a smear or a
/// color-mixing plateau, not a dot. Reads below the floor come back as 0;
/// everything else lands on a 0.05 step.
fn confidence_of(read: CodeRead, mass_ref: f64, peak_ref: f64) -> f64 {
    if read.mass <= 0.0 || mass_ref <= 0.0 || peak_ref <= 0.0 {
        return 0.0;
    }
    if read.halo > HALO_MAX_RATIO * read.mass {
        return 0.0;
    }
    let conf = (read.mass / mass_ref).min(read.peak / peak_ref).min(1.0);
    if conf < CONFIDENCE_FLOOR {
        return 0.0;
    }
    ((conf / CONFIDENCE_QUANTUM).round() * CONFIDENCE_QUANTUM).min(1.0)
}

/// Read every marker the image still carries. Slots whose recovered signal
/// falls below the confidence floor come back as missing (confidence 0);
/// an image without any decodable markers yields an all-zero annotation
/// rather than an error.
pub fn oracle_annotate(image: &Raster) -> Annotation {
    let (w, h) = (image.width(), image.height());
    let k = w.min(h) as f64 / REFERENCE_SIZE;
    let (iso_mass, iso_peak) = isolated_dot_stats(k);
    let mass_ref = MASS_HEADROOM * iso_mass;
    let peak_ref = PEAK_HEADROOM * iso_peak;
    let acc = scan_codes(image, k);

    let mut ann = Annotation::empty("", (w, h));
    for i in 0..palette_len() {
        let read = acc[grid_index(i)];
        let conf = confidence_of(read, mass_ref, peak_ref);
        if conf <= 0.0 {
            continue;
        }
        let kp = Keypoint::new(read.sx / read.mass, read.sy / read.mass, conf);
        let (region, slot) = palette_slot(i);
        match region {
            Region::Body => ann.body[slot] = kp,
            Region::Face => ann.face[slot] = kp,
            Region::LeftHand => ann.left_hand[slot] = kp,
            Region::RightHand => ann.right_hand[slot] = kp,
        }
    }
    ann
}

/// Re-grade the confidences of known marker positions against what the
/// image actually shows. Positions are kept from `truth`; each confidence
/// comes from the decoded signal in the window around that position, so ink
/// decoding to the right code somewhere else in the image cannot stand in
/// for a marker that has been smeared away. This is the instrument the
/// renderer's frozen blur-to-confidence curve was calibrated with; the
/// calibration audit test is its only caller.
#[cfg(test)]
pub(crate) fn regrade_confidences(image: &Raster, truth: &Annotation) -> Annotation {
    let k = image.width().min(image.height()) as f64 / REFERENCE_SIZE;
    let (iso_mass, iso_peak) = isolated_dot_stats(k);
    let mass_ref = MASS_HEADROOM * iso_mass;
    let peak_ref = PEAK_HEADROOM * iso_peak;
    let gate2 = (WINDOW_RADIUS * k).powi(2);
    let hits = collect_hits(image);

    let mut ann = truth.clone();
    for i in 0..palette_len() {
        let (region, slot) = palette_slot(i);
        let kp = ann.region(region)[slot];
        if kp.confidence <= 0.0 {
            continue;
        }
        let read = window_read(&hits[grid_index(i)], (kp.x, kp.y), gate2);
        let conf = confidence_of(read, mass_ref, peak_ref);
        let graded = Keypoint::new(kp.x, kp.y, conf);
        match region {
            Region::Body => ann.body[slot] = graded,
            Region::Face => ann.face[slot] = graded,
            Region::LeftHand => ann.left_hand[slot] = graded,
            Region::RightHand => ann.right_hand[slot] = graded,
        }
    }
    ann
}

/// Rebuild capsule geometry from recovered keypoints, mirroring the world's
/// proportions. Only parts whose keypoints were recovered are drawn.
fn limbs_from_annotation(
    ann: &Annotation,
    size: (usize, usize),
) -> (Vec<Limb>, Option<((f64, f64), f64)>) {
    let k = size.0.min(size.1) as f64 / REFERENCE_SIZE;
    let ok = |p: &Keypoint| p.confidence > 0.0;
    let mid = |a: &Keypoint, b: &Keypoint| ((a.x + b.x) / 2.0, (a.y + b.y) / 2.0);
    let mut limbs = Vec::new();

    let (ls, rs) = (&ann.body[5], &ann.body[6]);
    let (lh, rh) = (&ann.body[11], &ann.body[12]);
    if ok(ls) && ok(rs) {
        limbs.push(Limb {
            a: (ls.x, ls.y),
            b: (rs.x, rs.y),
            half_width: 2.6 * k,
            depth: DEPTH_TORSO,
            shade: ShadeClass::Shirt,
        });
    }
    if ok(lh) && ok(rh) {
        limbs.push(Limb {
            a: (lh.x, lh.y),
            b: (rh.x, rh.y),
            half_width: 2.4 * k,
            depth: DEPTH_TORSO,
            shade: ShadeClass::Shirt,
        });
        if ok(ls) && ok(rs) {
            let root = mid(lh, rh);
            let neck = mid(ls, rs);
            limbs.push(Limb {
                a: (root.0, root.1 + k),
                b: neck,
                half_width: 4.4 * k,
                depth: DEPTH_TORSO,
                shade: ShadeClass::Shirt,
            });
        }
    }

    for (sho_slot, elb_slot, hand_region) in
        [(5usize, 7usize, Region::LeftHand), (6, 8, Region::RightHand)]
    {
        let sho = &ann.body[sho_slot];
        let elb = &ann.body[elb_slot];
        let hand = ann.region(hand_region);
        if ok(sho) && ok(elb) {
            limbs.push(Limb {
                a: (sho.x, sho.y),
                b: (elb.x, elb.y),
                half_width: 1.9 * k,
                depth: DEPTH_UPPER_ARM,
                shade: ShadeClass::Shirt,
            });
        }
        let wrist = &hand[0];
        if ok(elb) && ok(wrist) {
            limbs.push(Limb {
                a: (elb.x, elb.y),
                b: (wrist.x, wrist.y),
                half_width: 1.5 * k,
                depth: DEPTH_FOREARM,
                shade: ShadeClass::Skin,
            });
        }
        if ok(wrist) && ok(&hand[9]) {
            limbs.push(Limb {
                a: (wrist.x, wrist.y),
                b: mid(wrist, &hand[9]),
                half_width: 1.9 * k,
                depth: DEPTH_HAND,
                shade: ShadeClass::Skin,
            });
        }
        for f in 0..5 {
            let chain = [0usize, 1 + 4 * f, 2 + 4 * f, 3 + 4 * f, 4 + 4 * f];
            for seg in 0..4 {
                let (a, b) = (&hand[chain[seg]], &hand[chain[seg + 1]]);
                if ok(a) && ok(b) {
                    let hw = if seg == 0 { 1.0 } else { 0.85 };
                    limbs.push(Limb {
                        a: (a.x, a.y),
                        b: (b.x, b.y),
                        half_width: hw * k,
                        depth: DEPTH_HAND,
                        shade: ShadeClass::Skin,
                    });
                }
            }
        }
    }

    // head from the eye-corner pair; their separation fixes the scale
    let (le, re) = (&ann.face[36], &ann.face[45]);
    let head = if ok(le) && ok(re) {
        let ex = (re.x - le.x, re.y - le.y);
        let sep = (ex.0 * ex.0 + ex.1 * ex.1).sqrt();
        if sep > 1e-6 {
            let fy = (-ex.1 / sep, ex.0 / sep);
            let hs = sep / 5.2;
            let radius = 6.0 * hs;
            let cx = (le.x + re.x) / 2.0 + fy.0 * 1.4 * hs;
            let cy = (le.y + re.y) / 2.0 + fy.1 * 1.4 * hs;
            if ok(ls) && ok(rs) {
                let neck = mid(ls, rs);
                let to_neck = (neck.0 - cx, neck.1 - cy);
                let d = (to_neck.0 * to_neck.0 + to_neck.1 * to_neck.1).sqrt().max(1e-6);
                limbs.push(Limb {
                    a: (cx + to_neck.0 / d * radius * 0.8, cy + to_neck.1 / d * radius * 0.8),
                    b: neck,
                    half_width: 1.6 * k,
                    depth: DEPTH_HEAD,
                    shade: ShadeClass::Skin,
                });
            }
            Some(((cx, cy), radius))
        } else {
            None
        }
    } else {
        None
    };

    (limbs, head)
}

/// Depth and normal maps rebuilt from recovered keypoints alone.
pub fn reconstruct_maps(ann: &Annotation, size: (usize, usize)) -> (Raster, Raster) {
    let (limbs, head) = limbs_from_annotation(ann, size);
    let (_, mut depth, mut normal) = rasterize_limbs(&limbs, head, &Shades::default(), size);
    depth.quantize8();
    normal.quantize8();
    (depth, normal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::figure::{realized_points, sample_pose};
    use crate::synthworld::render::{blur_confidence, render};

    #[test]
    fn clean_round_trip_recovers_positions_within_half_pixel() {
        let mut worst = 0.0f64;
        for seed in 0..30u64 {
            let spec = sample_pose(seed, (seed % 11) as f64 / 10.0);
            let frame = render(&spec, (64, 64), 0.0).unwrap();
            let decoded = oracle_annotate(&frame.rgb);
            for (region, slot, truth) in realized_points(&frame.annotation) {
                let got = decoded.region(region)[slot];
                assert!(got.confidence > 0.0, "seed {seed} {region:?}[{slot}] lost");
                assert_eq!(got.confidence, 1.0, "seed {seed} {region:?}[{slot}]");
                worst = worst.max(truth.distance(&got));
            }
        }
        assert!(worst < 0.5, "worst position error {worst}");
    }

    #[test]
    fn stored_confidence_curve_tracks_the_reader() {
        // the frozen curve in render is a regression of this reader's mean
        // truth-anchored hand confidence; hold the two together so a reader
        // change cannot silently invalidate stored annotations
        for rung in [0.0, 1.0, 2.0, 3.0, 4.0, 6.0] {
            let expect = blur_confidence(rung);
            let mut sum = 0.0;
            let mut n = 0usize;
            for seed in 0..20u64 {
                let spec = sample_pose(seed, (seed % 11) as f64 / 10.0);
                let frame = render(&spec, (64, 64), rung).unwrap();
                let truth = crate::synthworld::forward_kinematics(&spec, (64, 64)).annotation;
                let graded = regrade_confidences(&frame.rgb, &truth);
                for kp in graded.left_hand.iter().chain(&graded.right_hand) {
                    sum += kp.confidence;
                    n += 1;
                }
            }
            let mean = sum / n as f64;
            assert!(
                (mean - expect).abs() <= 0.12,
                "rung {rung}: reader mean {mean:.3} vs curve {expect}"
            );
        }
    }

    #[test]
    fn non_marker_images_yield_zero_confidence_not_errors() {
        let blank = Raster::filled(64, 64, [1.0; 3]);
        let ann = oracle_annotate(&blank);
        assert!(ann.all_points().all(|kp| kp.confidence == 0.0));

        let mut noise = Raster::new(48, 48);
        for y in 0..48 {
            for x in 0..48 {
                let v = ((x * 7 + y * 13) % 255) as f64 / 255.0;
                noise.set(x, y, [v, 1.0 - v, 0.5 * v]);
            }
        }
        let ann = oracle_annotate(&noise);
        assert!(ann.all_points().all(|kp| kp.confidence == 0.0));
    }

    #[test]
    fn reconstructed_maps_match_rendered_ones_closely() {
        let spec = sample_pose(7, 0.5);
        let frame = render(&spec, (64, 64), 0.0).unwrap();
        let decoded = oracle_annotate(&frame.rgb);
        let (depth, normal) = reconstruct_maps(&decoded, (64, 64));
        let mean_diff = |a: &Raster, b: &Raster| {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
                / a.data().len() as f64
        };
        assert!(mean_diff(&depth, &frame.depth) < 0.03);
        assert!(mean_diff(&normal, &frame.normal) < 0.06);
        // the hand still reads as a near-torso depth plane
        let knuckle = frame.annotation.left_hand[9];
        let d = depth.get(knuckle.x as usize, knuckle.y as usize)[0];
        assert!((d - DEPTH_HAND).abs() < 0.03);
    }

    #[test]
    fn isolated_dot_stats_are_positive_and_scale() {
        let (m64, p64) = isolated_dot_stats(1.0);
        let (m128, p128) = isolated_dot_stats(2.0);
        assert!(m64 > 1.5, "mass {m64}");
        assert!(m128 > 2.5 * m64, "mass {m64} vs {m128}");
        // a pixel-centered dot core is pure at either scale
        assert!(p64 > 0.95, "peak {p64}");
        assert!(p128 > 0.95, "peak {p128}");
    }
}
