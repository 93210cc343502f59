//! Articulated upper-body figure: pose sampling and forward kinematics.
//!
//! The figure is a 2D stick person (trunk, head, two arms, two fully
//! fingered hands) posed by joint angles. All lengths are in pixels at the
//! 64x64 reference size; rendering scales them by `min(w, h) / 64`.

use crate::pose::{Annotation, Keypoint, Region, HAND_POINTS};
use crate::rng::{rng_for, Domain};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const REFERENCE_SIZE: f64 = 64.0;

/// Articulation limits in radians. Sampled and solved angles stay inside.
pub const SHOULDER_LIMIT: f64 = 2.9;
pub const ELBOW_LIMIT: f64 = 2.8;
pub const WRIST_LIMIT: f64 = 0.6;
pub const NECK_LIMIT: f64 = 0.3;
pub const CURL_LIMIT: f64 = 1.6;

/// Minimum pairwise marker separation (reference pixels) that pose sampling
/// tries to secure, so markers stay individually decodable.
const MIN_MARKER_SEPARATION: f64 = 2.05;
/// Keep every keypoint this far from the image border at reference scale.
const BORDER_MARGIN: f64 = 2.6;
const SAMPLE_ATTEMPTS: usize = 128;

/// Finger fan angles relative to the palm direction, thumb first.
const FINGER_SPREAD: [f64; 5] = [1.18, 0.58, 0.20, -0.20, -0.58];
/// Wrist-to-knuckle distance per finger.
const FINGER_BASE: [f64; 5] = [2.6, 5.6, 5.9, 5.6, 5.1];
/// Phalanx lengths per finger, knuckle outward. Every phalanx exceeds the
/// marker separation floor, so a straight chain never violates it on its
/// own.
const FINGER_SEGS: [[f64; 3]; 5] = [
    [2.5, 2.2, 2.15],
    [2.5, 2.15, 2.1],
    [2.7, 2.2, 2.1],
    [2.5, 2.15, 2.1],
    [2.3, 2.1, 2.05],
];
/// Cumulative curl fraction applied to each phalanx.
const CURL_FRAC: [f64; 3] = [0.45, 0.85, 1.20];

/// Face landmark offsets on the head frame (pixels at head radius 6):
/// nose tip, both eye outer corners, both mouth corners, in the order of
/// `FACE_SLOTS`.
const FACE_OFFSETS: [(f64, f64); 5] =
    [(0.0, 1.2), (-2.6, -1.4), (2.6, -1.4), (-2.0, 3.1), (2.0, 3.1)];
const HEAD_LAYOUT_RADIUS: f64 = 6.0;

/// Realized whole-body slots. The figure is upper-body only, so legs, feet,
/// and most of the 68 face contour stay unannotated (confidence 0).
pub const BODY_SLOTS: [usize; 7] = [0, 5, 6, 7, 8, 11, 12];
pub const FACE_SLOTS: [usize; 5] = [30, 36, 45, 48, 54];
pub const REALIZED_MARKERS: usize = BODY_SLOTS.len() + FACE_SLOTS.len() + 2 * HAND_POINTS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoneLengths {
    pub hip_half: f64,
    pub torso: f64,
    pub shoulder_half: f64,
    pub neck_len: f64,
    pub head_r: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    /// Scales finger base and phalanx tables uniformly.
    pub hand_scale: f64,
}

impl Default for BoneLengths {
    fn default() -> Self {
        BoneLengths {
            hip_half: 5.0,
            torso: 22.0,
            shoulder_half: 8.5,
            neck_len: 4.5,
            head_r: 6.0,
            upper_arm: 11.0,
            forearm: 10.0,
            hand_scale: 1.0,
        }
    }
}

/// A fully posed figure. Side index 0 is the figure's left (drawn toward
/// +x), 1 the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FigureSpec {
    /// Pelvis position in normalized [0,1] image coordinates.
    pub root: (f64, f64),
    pub neck_angle: f64,
    /// Absolute upper-arm direction per side, 0 = straight down.
    pub shoulder_angle: [f64; 2],
    /// Relative elbow bend per side.
    pub elbow_angle: [f64; 2],
    /// Palm deviation from the forearm direction per side.
    pub wrist_angle: [f64; 2],
    /// Curl per side per finger (thumb first), 0 = fully open.
    pub finger_curl: [[f64; 5]; 2],
    pub bones: BoneLengths,
    pub appearance_seed: u64,
}

impl FigureSpec {
    /// All joint angles within articulation limits and finite geometry.
    pub fn within_limits(&self) -> bool {
        let ok = |v: f64, lim: f64| v.is_finite() && v.abs() <= lim;
        ok(self.neck_angle, NECK_LIMIT)
            && self.shoulder_angle.iter().all(|&a| ok(a, SHOULDER_LIMIT))
            && self.elbow_angle.iter().all(|&a| ok(a, ELBOW_LIMIT))
            && self.wrist_angle.iter().all(|&a| ok(a, WRIST_LIMIT))
            && self
                .finger_curl
                .iter()
                .flatten()
                .all(|&c| c.is_finite() && (0.0..=CURL_LIMIT).contains(&c))
    }
}

/// Direction of angle `a` measured from straight down, rotating toward +x.
#[inline]
fn dir_down(a: f64) -> (f64, f64) {
    (a.sin(), a.cos())
}

#[inline]
fn rot(v: (f64, f64), a: f64) -> (f64, f64) {
    let (s, c) = a.sin_cos();
    (c * v.0 - s * v.1, s * v.0 + c * v.1)
}

#[inline]
fn add(a: (f64, f64), b: (f64, f64), s: f64) -> (f64, f64) {
    (a.0 + s * b.0, a.1 + s * b.1)
}

/// Capsule primitive produced by forward kinematics, in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limb {
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub half_width: f64,
    /// Larger = nearer the camera.
    pub depth: f64,
    /// Base gray level in [0,1] before appearance shading.
    pub shade: ShadeClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShadeClass {
    Shirt,
    Skin,
}

/// Depth plane per body part. Hands sit just in front of the torso, so a
/// hand over the chest produces a small depth gap (the depth-ambiguity this
/// world is built to reproduce), while arms stay clearly nearer.
pub const DEPTH_BACKGROUND: f64 = 0.08;
pub const DEPTH_TORSO: f64 = 0.50;
pub const DEPTH_HAND: f64 = 0.53;
pub const DEPTH_HEAD: f64 = 0.54;
pub const DEPTH_UPPER_ARM: f64 = 0.56;
pub const DEPTH_FOREARM: f64 = 0.58;

/// Full kinematic solve: keypoint annotation (positions only, confidence 1
/// on realized slots) plus the capsule list and head disc for rendering.
pub struct FigureGeometry {
    pub annotation: Annotation,
    pub limbs: Vec<Limb>,
    pub head_center: (f64, f64),
    pub head_radius: f64,
}

pub fn forward_kinematics(spec: &FigureSpec, size: (usize, usize)) -> FigureGeometry {
    let (w, h) = size;
    let k = w.min(h) as f64 / REFERENCE_SIZE;
    let b = &spec.bones;
    let root = (spec.root.0 * w as f64, spec.root.1 * h as f64);

    let hip = [add(root, (1.0, 0.0), b.hip_half * k), add(root, (-1.0, 0.0), b.hip_half * k)];
    let neck_base = add(root, (0.0, -1.0), b.torso * k);
    let shoulder = [
        add(neck_base, (1.0, 0.0), b.shoulder_half * k),
        add(neck_base, (-1.0, 0.0), b.shoulder_half * k),
    ];
    let up = rot((0.0, -1.0), spec.neck_angle);
    let head_center = add(neck_base, up, (b.neck_len + b.head_r) * k);
    let head_radius = b.head_r * k;

    let mut ann = Annotation::empty("", (w, h));
    let set = |list: &mut Vec<Keypoint>, i: usize, p: (f64, f64)| {
        list[i] = Keypoint::new(p.0, p.1, 1.0);
    };

    // head frame: x along the tilted horizontal, y down the face
    let fx = rot((1.0, 0.0), spec.neck_angle);
    let fy = rot((0.0, 1.0), spec.neck_angle);
    let head_scale = k * b.head_r / HEAD_LAYOUT_RADIUS;
    for (slot, (u, v)) in FACE_SLOTS.iter().zip(FACE_OFFSETS) {
        let p = add(add(head_center, fx, u * head_scale), fy, v * head_scale);
        set(&mut ann.face, *slot, p);
    }
    // body slot 0 is the nose bridge point on the same frame
    set(&mut ann.body, 0, add(head_center, fy, -1.6 * head_scale));
    set(&mut ann.body, 5, shoulder[0]);
    set(&mut ann.body, 6, shoulder[1]);
    set(&mut ann.body, 11, hip[0]);
    set(&mut ann.body, 12, hip[1]);

    let mut limbs = Vec::with_capacity(40);
    limbs.push(Limb {
        a: add(root, (0.0, 1.0), 1.0 * k),
        b: neck_base,
        half_width: 4.4 * k,
        depth: DEPTH_TORSO,
        shade: ShadeClass::Shirt,
    });
    limbs.push(Limb {
        a: hip[0],
        b: hip[1],
        half_width: 2.4 * k,
        depth: DEPTH_TORSO,
        shade: ShadeClass::Shirt,
    });
    limbs.push(Limb {
        a: shoulder[0],
        b: shoulder[1],
        half_width: 2.6 * k,
        depth: DEPTH_TORSO,
        shade: ShadeClass::Shirt,
    });
    limbs.push(Limb {
        a: neck_base,
        b: add(neck_base, up, b.neck_len * k),
        half_width: 1.6 * k,
        depth: DEPTH_HEAD,
        shade: ShadeClass::Skin,
    });

    for side in 0..2 {
        let mirror = if side == 0 { 1.0 } else { -1.0 };
        let upper_dir = dir_down(spec.shoulder_angle[side]);
        let elbow = add(shoulder[side], upper_dir, b.upper_arm * k);
        let fore_angle = spec.shoulder_angle[side] + spec.elbow_angle[side];
        let fore_dir = dir_down(fore_angle);
        let wrist = add(elbow, fore_dir, b.forearm * k);
        set(&mut ann.body, if side == 0 { 7 } else { 8 }, elbow);

        limbs.push(Limb {
            a: shoulder[side],
            b: elbow,
            half_width: 1.9 * k,
            depth: DEPTH_UPPER_ARM,
            shade: ShadeClass::Shirt,
        });
        limbs.push(Limb {
            a: elbow,
            b: wrist,
            half_width: 1.5 * k,
            depth: DEPTH_FOREARM,
            shade: ShadeClass::Skin,
        });

        let palm_angle = fore_angle + spec.wrist_angle[side];
        let hand = hand_points(wrist, palm_angle, mirror, &spec.finger_curl[side], b.hand_scale * k);
        let list = if side == 0 { &mut ann.left_hand } else { &mut ann.right_hand };
        for (i, p) in hand.iter().enumerate() {
            set(list, i, *p);
        }
        // palm pad behind the knuckles
        let palm_mid = hand[9]; // middle-finger knuckle
        limbs.push(Limb {
            a: wrist,
            b: ((wrist.0 + palm_mid.0) / 2.0, (wrist.1 + palm_mid.1) / 2.0),
            half_width: 1.9 * k,
            depth: DEPTH_HAND,
            shade: ShadeClass::Skin,
        });
        for f in 0..5 {
            let chain = [hand[0], hand[1 + 4 * f], hand[2 + 4 * f], hand[3 + 4 * f], hand[4 + 4 * f]];
            for seg in 0..4 {
                // the wrist-to-knuckle stroke doubles as palm structure
                let hw = if seg == 0 { 1.0 } else { 0.85 };
                limbs.push(Limb {
                    a: chain[seg],
                    b: chain[seg + 1],
                    half_width: hw * k * b.hand_scale,
                    depth: DEPTH_HAND,
                    shade: ShadeClass::Skin,
                });
            }
        }
    }

    FigureGeometry {
        annotation: ann,
        limbs,
        head_center,
        head_radius,
    }
}

/// 21 hand keypoints: wrist, then per finger (thumb..pinky) four joints
/// knuckle-to-tip. Curl folds phalanxes progressively toward the thumb side.
fn hand_points(
    wrist: (f64, f64),
    palm_angle: f64,
    mirror: f64,
    curls: &[f64; 5],
    scale: f64,
) -> [(f64, f64); HAND_POINTS] {
    let mut pts = [(0.0, 0.0); HAND_POINTS];
    pts[0] = wrist;
    let palm_dir = dir_down(palm_angle);
    for f in 0..5 {
        let spread = mirror * FINGER_SPREAD[f];
        let base_dir = rot(palm_dir, spread);
        let mut p = add(wrist, base_dir, FINGER_BASE[f] * scale);
        pts[1 + 4 * f] = p;
        for seg in 0..3 {
            let bend = spread - mirror * curls[f] * CURL_FRAC[seg];
            let dir = rot(palm_dir, bend);
            p = add(p, dir, FINGER_SEGS[f][seg] * scale);
            pts[2 + 4 * f + seg] = p;
        }
    }
    pts
}

/// Positions of every realized marker slot, used for separation checks and
/// marker stamping.
pub fn realized_points(ann: &Annotation) -> Vec<(Region, usize, Keypoint)> {
    let mut out = Vec::with_capacity(REALIZED_MARKERS);
    for s in BODY_SLOTS {
        out.push((Region::Body, s, ann.body[s]));
    }
    for s in FACE_SLOTS {
        out.push((Region::Face, s, ann.face[s]));
    }
    for i in 0..HAND_POINTS {
        out.push((Region::LeftHand, i, ann.left_hand[i]));
    }
    for i in 0..HAND_POINTS {
        out.push((Region::RightHand, i, ann.right_hand[i]));
    }
    out
}

/// Smallest pairwise distance among realized markers, and the margin to the
/// image border (both at the given render size).
fn marker_clearance(ann: &Annotation, size: (usize, usize)) -> (f64, f64) {
    let pts: Vec<Keypoint> = realized_points(ann).into_iter().map(|(_, _, p)| p).collect();
    let mut min_sep = f64::INFINITY;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            min_sep = min_sep.min(pts[i].distance(&pts[j]));
        }
    }
    let mut margin = f64::INFINITY;
    for p in &pts {
        margin = margin
            .min(p.x)
            .min(p.y)
            .min(size.0 as f64 - 1.0 - p.x)
            .min(size.1 as f64 - 1.0 - p.y);
    }
    (min_sep, margin)
}

/// Draw a pose. Deterministic in `(rng_seed, difficulty)`. Difficulty 0
/// gives open palms and free-hanging arms; difficulty 1 pulls both hands in
/// front of the chest with strong random finger flexion. Candidate poses
/// whose markers would collide or leave the frame are redrawn from the same
/// stream, keeping the best candidate as fallback.
pub fn sample_pose(rng_seed: u64, difficulty: f64) -> FigureSpec {
    let difficulty = difficulty.clamp(0.0, 1.0);
    let mut rng = rng_for(rng_seed, Domain::Pose, 0);
    let mut best: Option<(f64, FigureSpec)> = None;
    for _ in 0..SAMPLE_ATTEMPTS {
        let spec = draw_candidate(&mut rng, rng_seed, difficulty);
        let geo = forward_kinematics(&spec, (64, 64));
        let (sep, margin) = marker_clearance(&geo.annotation, (64, 64));
        let score = sep.min(margin - BORDER_MARGIN + MIN_MARKER_SEPARATION);
        if sep >= MIN_MARKER_SEPARATION && margin >= BORDER_MARGIN {
            return spec;
        }
        if best.as_ref().map_or(true, |(s, _)| score > *s) {
            best = Some((score, spec));
        }
    }
    best.expect("at least one candidate drawn").1
}

fn draw_candidate(rng: &mut impl Rng, rng_seed: u64, difficulty: f64) -> FigureSpec {
    let mut bones = BoneLengths::default();
    let stretch = rng.gen_range(0.94..1.06);
    bones.torso *= stretch;
    bones.upper_arm *= stretch;
    bones.forearm *= stretch;
    bones.head_r *= rng.gen_range(0.95..1.05);

    let root = (rng.gen_range(0.46..0.54), rng.gen_range(0.74..0.82));
    let neck_angle = rng.gen_range(-0.22..0.22);
    let root_px = (root.0 * 64.0, root.1 * 64.0);
    let neck_base = (root_px.0, root_px.1 - bones.torso);
    let chest = (root_px.0, root_px.1 - bones.torso * 0.66);

    let mut shoulder_angle = [0.0; 2];
    let mut elbow_angle = [0.0; 2];
    let mut wrist_angle = [0.0; 2];
    let mut finger_curl = [[0.0; 5]; 2];

    // one hand leads and the other trails lower and further out, so the two
    // finger fans cannot interleave when both close on the chest
    let lead = usize::from(rng.gen::<bool>());
    let stagger: f64 = rng.gen_range(4.0..8.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
    for side in 0..2 {
        let mirror = if side == 0 { 1.0 } else { -1.0 };
        let shoulder = (neck_base.0 + mirror * bones.shoulder_half, neck_base.1);
        // free target: hanging or raised hand away from the body
        let free = (
            shoulder.0 + mirror * rng.gen_range(4.0..15.0),
            shoulder.1 + rng.gen_range(4.0..16.0),
        );
        // chest target: in front of the sternum, offset per side
        let near = (
            chest.0 + mirror * rng.gen_range(5.0..9.5),
            chest.1 + rng.gen_range(-4.0..1.0) + mirror * stagger / 2.0,
        );
        let trail = if side == lead { 1.0 } else { rng.gen_range(0.55..0.8) };
        let pull = difficulty * trail * rng.gen_range(0.72..0.92);
        // the y clamp sinks with pull so curled fingers clear the hip row
        let target = (
            free.0 + (near.0 - free.0) * pull,
            (free.1 + (near.1 - free.1) * pull).clamp(14.0, 44.0 - 8.0 * pull),
        );
        let (sh, el) = solve_arm(shoulder, target, bones.upper_arm, bones.forearm, mirror);
        shoulder_angle[side] = sh;
        elbow_angle[side] = el;
        // palms rotate outward as hands close on the chest, keeping the two
        // finger fans from interleaving
        wrist_angle[side] = (rng.gen_range(-0.30..0.30) + mirror * 0.42 * pull)
            .clamp(-WRIST_LIMIT, WRIST_LIMIT);
        // fingers of one hand flex together, with mild per-finger jitter, so
        // high difficulty reads as a grasp instead of tangled digits
        let hand_curl: f64 = rng.gen_range(0.0..1.0) * difficulty * 1.45;
        for f in 0..5 {
            let jitter: f64 = rng.gen_range(0.92..1.08);
            let share = if f == 0 { 0.55 } else { 1.0 };
            finger_curl[side][f] = (hand_curl * share * jitter).min(CURL_LIMIT);
        }
    }

    FigureSpec {
        root,
        neck_angle,
        shoulder_angle,
        elbow_angle,
        wrist_angle,
        finger_curl,
        bones,
        appearance_seed: rng_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ rng.gen::<u64>(),
    }
}

/// Two-link reach: place the wrist at `target`, elbow bent outward (away
/// from the body midline). Unreachable targets clamp to the closest
/// reachable point along the shoulder-target ray.
fn solve_arm(
    shoulder: (f64, f64),
    target: (f64, f64),
    l1: f64,
    l2: f64,
    mirror: f64,
) -> (f64, f64) {
    let dx = target.0 - shoulder.0;
    let dy = target.1 - shoulder.1;
    let d = (dx * dx + dy * dy)
        .sqrt()
        .clamp((l1 - l2).abs() + 0.4, l1 + l2 - 0.2);
    // angle of the target direction measured from straight down
    let base = dx.atan2(dy);
    let cos_a = ((l1 * l1 + d * d - l2 * l2) / (2.0 * l1 * d)).clamp(-1.0, 1.0);
    let alpha = cos_a.acos();
    let cos_b = ((l1 * l1 + l2 * l2 - d * d) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let beta = std::f64::consts::PI - cos_b.acos();
    // elbow outward: rotate the upper arm away from the midline
    let sh = (base + mirror * alpha).clamp(-SHOULDER_LIMIT, SHOULDER_LIMIT);
    let el = (-mirror * beta).clamp(-ELBOW_LIMIT, ELBOW_LIMIT);
    (sh, el)
}
