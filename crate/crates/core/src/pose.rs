//! Whole-body keypoint layout, annotations, and the region-aware loss.
//!
//! The keypoint convention is the 133-point whole-body layout: 23 body points
//! (17 main body + 6 feet), 68 face points, and 21 per hand. Annotations
//! carry `(x, y, confidence)` per point in pixel coordinates; a confidence of
//! exactly 0 means "not annotated".

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const BODY_POINTS: usize = 23;
pub const FACE_POINTS: usize = 68;
pub const HAND_POINTS: usize = 21;
pub const TOTAL_POINTS: usize = BODY_POINTS + FACE_POINTS + 2 * HAND_POINTS;

/// One keypoint: pixel position plus detection confidence in `[0, 1]`.
/// Serializes as an `[x, y, confidence]` triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "(f64, f64, f64)", from = "(f64, f64, f64)")]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl From<Keypoint> for (f64, f64, f64) {
    fn from(k: Keypoint) -> Self {
        (k.x, k.y, k.confidence)
    }
}

impl From<(f64, f64, f64)> for Keypoint {
    fn from((x, y, confidence): (f64, f64, f64)) -> Self {
        Keypoint { x, y, confidence }
    }
}

impl Keypoint {
    pub fn new(x: f64, y: f64, confidence: f64) -> Keypoint {
        Keypoint { x, y, confidence }
    }

    pub fn missing() -> Keypoint {
        Keypoint {
            x: 0.0,
            y: 0.0,
            confidence: 0.0,
        }
    }

    pub fn distance(&self, other: &Keypoint) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Which body region a keypoint index belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Body,
    Face,
    LeftHand,
    RightHand,
}

/// Full-frame annotation in the whole-body layout. Region lists always have
/// their full nominal length; unobserved points carry confidence 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub frame_id: String,
    /// (width, height) of the annotated image in pixels.
    pub image_size: (usize, usize),
    pub body: Vec<Keypoint>,
    pub left_hand: Vec<Keypoint>,
    pub right_hand: Vec<Keypoint>,
    pub face: Vec<Keypoint>,
}

impl Annotation {
    pub fn empty(frame_id: impl Into<String>, image_size: (usize, usize)) -> Annotation {
        Annotation {
            frame_id: frame_id.into(),
            image_size,
            body: vec![Keypoint::missing(); BODY_POINTS],
            left_hand: vec![Keypoint::missing(); HAND_POINTS],
            right_hand: vec![Keypoint::missing(); HAND_POINTS],
            face: vec![Keypoint::missing(); FACE_POINTS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("body", self.body.len(), BODY_POINTS),
            ("left_hand", self.left_hand.len(), HAND_POINTS),
            ("right_hand", self.right_hand.len(), HAND_POINTS),
            ("face", self.face.len(), FACE_POINTS),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::shape(
                    format!("{name}: {want} keypoints"),
                    format!("{got}"),
                ));
            }
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(Error::invalid("annotation image_size must be nonzero"));
        }
        for kp in self.all_points() {
            if !(kp.x.is_finite() && kp.y.is_finite()) || !(0.0..=1.0).contains(&kp.confidence) {
                return Err(Error::invalid(format!(
                    "bad keypoint in frame {}: ({}, {}, {})",
                    self.frame_id, kp.x, kp.y, kp.confidence
                )));
            }
        }
        Ok(())
    }

    pub fn region(&self, region: Region) -> &[Keypoint] {
        match region {
            Region::Body => &self.body,
            Region::Face => &self.face,
            Region::LeftHand => &self.left_hand,
            Region::RightHand => &self.right_hand,
        }
    }

    pub fn all_points(&self) -> impl Iterator<Item = &Keypoint> {
        self.body
            .iter()
            .chain(self.face.iter())
            .chain(self.left_hand.iter())
            .chain(self.right_hand.iter())
    }

    pub fn all_points_mut(&mut self) -> impl Iterator<Item = &mut Keypoint> {
        self.body
            .iter_mut()
            .chain(self.face.iter_mut())
            .chain(self.left_hand.iter_mut())
            .chain(self.right_hand.iter_mut())
    }

    /// Keypoint count used by the curation gate: body and face count by list
    /// length regardless of confidence, hand points count only when their
    /// confidence clears `hand_confidence_min`.
    pub fn keypoint_count(&self, hand_confidence_min: f64) -> usize {
        let hands = self
            .left_hand
            .iter()
            .chain(self.right_hand.iter())
            .filter(|k| k.confidence >= hand_confidence_min)
            .count();
        self.body.len() + self.face.len() + hands
    }

    /// Axis-aligned bounding box over confident points of one region,
    /// `None` when the region has no point at or above `min_confidence`.
    pub fn region_bbox(&self, region: Region, min_confidence: f64) -> Option<BBox> {
        let mut bb: Option<BBox> = None;
        for kp in self.region(region) {
            if kp.confidence >= min_confidence && kp.confidence > 0.0 {
                bb = Some(match bb {
                    None => BBox {
                        x0: kp.x,
                        y0: kp.y,
                        x1: kp.x,
                        y1: kp.y,
                    },
                    Some(b) => BBox {
                        x0: b.x0.min(kp.x),
                        y0: b.y0.min(kp.y),
                        x1: b.x1.max(kp.x),
                        y1: b.y1.max(kp.y),
                    },
                });
            }
        }
        bb
    }
}

/// Per-hand bounding boxes, each padded on every side by
/// `pad_fraction * max(image_width, image_height)` and clamped to the image.
/// A hand contributes no box when none of its keypoints reaches
/// `min_confidence`.
pub fn hand_bboxes(ann: &Annotation, pad_fraction: f64, min_confidence: f64) -> Vec<BBox> {
    let pad = pad_fraction * ann.image_size.0.max(ann.image_size.1) as f64;
    [Region::LeftHand, Region::RightHand]
        .iter()
        .filter_map(|&r| ann.region_bbox(r, min_confidence))
        .map(|bb| bb.padded(pad, ann.image_size))
        .collect()
}

/// Axis-aligned box in pixel coordinates, inclusive corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    /// Grow by `pad` pixels on every edge, then clamp to the image rectangle.
    pub fn padded(&self, pad: f64, image_size: (usize, usize)) -> BBox {
        BBox {
            x0: (self.x0 - pad).max(0.0),
            y0: (self.y0 - pad).max(0.0),
            x1: (self.x1 + pad).min(image_size.0 as f64 - 1.0),
            y1: (self.y1 + pad).min(image_size.1 as f64 - 1.0),
        }
    }

    /// Whether a point lies inside the box, edges inclusive.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    /// Integer pixel range covered by the box: `x in x0..x1`, half-open.
    pub fn pixel_range(&self) -> (usize, usize, usize, usize) {
        (
            self.x0.floor().max(0.0) as usize,
            self.y0.floor().max(0.0) as usize,
            self.x1.ceil() as usize + 1,
            self.y1.ceil() as usize + 1,
        )
    }
}

/// Per-region weights of the region-aware loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionWeights {
    pub hands: f64,
    pub face: f64,
    pub body: f64,
}

impl Default for RegionWeights {
    fn default() -> Self {
        RegionWeights {
            hands: 0.4,
            face: 0.2,
            body: 0.4,
        }
    }
}

impl RegionWeights {
    /// Weights form a convex combination: each in [0, 1], summing to 1.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("hands", self.hands), ("face", self.face), ("body", self.body)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("region weight {name} = {v} outside [0, 1]")));
            }
        }
        let sum = self.hands + self.face + self.body;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("region weights sum to {sum}, need 1")));
        }
        Ok(())
    }
}

/// How per-region keypoint displacement is aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionDistance {
    /// Sum of per-keypoint Euclidean distances (default).
    SumEuclidean,
    /// Square root of the summed squared distances over the region.
    RootSumSquares,
}

impl Default for RegionDistance {
    fn default() -> Self {
        RegionDistance::SumEuclidean
    }
}

/// Aggregate displacement over one region. Keypoint pairs where either side
/// has confidence 0 are excluded (an annotator that missed a joint carries
/// no positional information there). Returns the aggregate and the number of
/// pairs that entered it.
pub fn region_distance(
    gt: &[Keypoint],
    gen: &[Keypoint],
    mode: RegionDistance,
) -> Result<(f64, usize)> {
    if gt.len() != gen.len() {
        return Err(Error::shape(
            format!("{} keypoints", gt.len()),
            format!("{}", gen.len()),
        ));
    }
    let mut sum = 0.0;
    let mut n = 0;
    for (a, b) in gt.iter().zip(gen) {
        if a.confidence > 0.0 && b.confidence > 0.0 {
            let d = a.distance(b);
            sum += match mode {
                RegionDistance::SumEuclidean => d,
                RegionDistance::RootSumSquares => d * d,
            };
            n += 1;
        }
    }
    let agg = match mode {
        RegionDistance::SumEuclidean => sum,
        RegionDistance::RootSumSquares => sum.sqrt(),
    };
    Ok((agg, n))
}

/// Region-aware keypoint loss between a reference annotation and one
/// recovered from a generated image:
/// `hands_w * d_hands + face_w * d_face + body_w * d_body`,
/// with both hands aggregated as one region.
pub fn racl(
    reference: &Annotation,
    generated: &Annotation,
    weights: &RegionWeights,
    mode: RegionDistance,
) -> Result<RegionLoss> {
    reference.validate()?;
    generated.validate()?;
    weights.validate()?;
    let (ls, ln) = region_distance(&reference.left_hand, &generated.left_hand, mode)?;
    let (rs, rn) = region_distance(&reference.right_hand, &generated.right_hand, mode)?;
    // both hands form one region; under the sqrt aggregation recombine the
    // squared sums before the root
    let (hands, hn) = match mode {
        RegionDistance::SumEuclidean => (ls + rs, ln + rn),
        RegionDistance::RootSumSquares => ((ls * ls + rs * rs).sqrt(), ln + rn),
    };
    let (face, fan) = region_distance(&reference.face, &generated.face, mode)?;
    let (body, bn) = region_distance(&reference.body, &generated.body, mode)?;
    Ok(RegionLoss {
        hands,
        face,
        body,
        total: weights.hands * hands + weights.face * face + weights.body * body,
        matched_points: hn + fan + bn,
    })
}

/// Breakdown of the region-aware loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionLoss {
    pub hands: f64,
    pub face: f64,
    pub body: f64,
    pub total: f64,
    /// Number of keypoint pairs that entered any region term.
    pub matched_points: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, Domain};
    use rand::Rng;

    fn random_annotation(seed: u64, idx: u64, conf: f64) -> Annotation {
        let mut rng = rng_for(seed, Domain::Probe, idx);
        let mut ann = Annotation::empty(format!("f{idx}"), (64, 64));
        for kp in ann
            .body
            .iter_mut()
            .chain(ann.face.iter_mut())
            .chain(ann.left_hand.iter_mut())
            .chain(ann.right_hand.iter_mut())
        {
            *kp = Keypoint::new(rng.gen_range(0.0..64.0), rng.gen_range(0.0..64.0), conf);
        }
        ann
    }

    #[test]
    fn identical_annotations_have_zero_loss() {
        for i in 0..10 {
            let ann = random_annotation(11, i, 1.0);
            let loss =
                racl(&ann, &ann, &RegionWeights::default(), RegionDistance::default())
                    .unwrap();
            assert_eq!(loss.total, 0.0);
            assert_eq!(loss.matched_points, TOTAL_POINTS);
        }
    }

    #[test]
    fn single_hand_offset_is_weighted_exactly() {
        let a = random_annotation(12, 0, 1.0);
        let mut b = a.clone();
        // one right-hand point displaced by a 3-4-5 triangle
        b.right_hand[7].x += 3.0;
        b.right_hand[7].y += 4.0;
        let w = RegionWeights::default();
        let loss = racl(&a, &b, &w, RegionDistance::SumEuclidean).unwrap();
        assert!((loss.hands - 5.0).abs() < 1e-12);
        assert_eq!(loss.face, 0.0);
        assert_eq!(loss.body, 0.0);
        assert!((loss.total - 0.4 * 5.0).abs() < 1e-12);
    }

    #[test]
    fn unmatched_points_are_excluded() {
        let a = random_annotation(13, 0, 1.0);
        let mut b = a.clone();
        b.left_hand[3].x += 100.0;
        b.left_hand[3].confidence = 0.0; // generated side lost this point
        let loss = racl(&a, &b, &RegionWeights::default(), RegionDistance::default())
            .unwrap();
        assert_eq!(loss.total, 0.0);
        assert_eq!(loss.matched_points, TOTAL_POINTS - 1);
    }

    #[test]
    fn loss_is_monotone_in_displacement() {
        let a = random_annotation(14, 0, 1.0);
        let mut prev = 0.0;
        for k in 1..=5 {
            let mut b = a.clone();
            for kp in b.right_hand.iter_mut() {
                kp.x += k as f64;
            }
            let loss =
                racl(&a, &b, &RegionWeights::default(), RegionDistance::default())
                    .unwrap();
            assert!(loss.total > prev);
            prev = loss.total;
        }
    }

    #[test]
    fn sqrt_aggregation_differs_but_agrees_on_single_point() {
        let a = random_annotation(15, 0, 1.0);
        let mut b = a.clone();
        b.right_hand[0].x += 3.0;
        b.right_hand[0].y += 4.0;
        let w = RegionWeights::default();
        let sum = racl(&a, &b, &w, RegionDistance::SumEuclidean).unwrap();
        let rss = racl(&a, &b, &w, RegionDistance::RootSumSquares).unwrap();
        // single displaced point: both forms give the plain distance
        assert!((sum.hands - rss.hands).abs() < 1e-12);
        // two displaced points: sum > rss
        let mut c = a.clone();
        c.right_hand[0].x += 3.0;
        c.right_hand[1].x += 4.0;
        let sum2 = racl(&a, &c, &w, RegionDistance::SumEuclidean).unwrap();
        let rss2 = racl(&a, &c, &w, RegionDistance::RootSumSquares).unwrap();
        assert!(sum2.hands > rss2.hands);
    }

    #[test]
    fn keypoint_count_gates_hands_only() {
        let mut ann = random_annotation(16, 0, 1.0);
        assert_eq!(ann.keypoint_count(0.2), 133);
        // degrade half the left hand below threshold
        for kp in ann.left_hand.iter_mut().take(10) {
            kp.confidence = 0.1;
        }
        assert_eq!(ann.keypoint_count(0.2), 123);
        // body and face count regardless of confidence
        for kp in ann.body.iter_mut() {
            kp.confidence = 0.0;
        }
        assert_eq!(ann.keypoint_count(0.2), 123);
    }

    #[test]
    fn bbox_padding_clamps_to_image() {
        let mut ann = Annotation::empty("f", (64, 64));
        ann.right_hand[0] = Keypoint::new(10.0, 30.0, 1.0);
        ann.right_hand[1] = Keypoint::new(20.0, 50.0, 1.0);
        let bb = ann.region_bbox(Region::RightHand, 0.2).unwrap();
        assert_eq!((bb.x0, bb.y0, bb.x1, bb.y1), (10.0, 30.0, 20.0, 50.0));
        // pad = 0.1 * 64 = 6.4 on every side
        let boxes = hand_bboxes(&ann, 0.1, 0.2);
        assert_eq!(boxes.len(), 1);
        let p = boxes[0];
        assert!((p.x0 - 3.6).abs() < 1e-12);
        assert!((p.x1 - 26.4).abs() < 1e-12);
        assert!((p.y0 - 23.6).abs() < 1e-12);
        assert!((p.y1 - 56.4).abs() < 1e-12);
        // pad 0 is the tight box
        let tight = hand_bboxes(&ann, 0.0, 0.2);
        assert_eq!(tight[0], bb);
        // near-border points never produce out-of-image boxes
        ann.left_hand[0] = Keypoint::new(1.0, 63.0, 1.0);
        for b in hand_bboxes(&ann, 0.2, 0.2) {
            assert!(b.x0 >= 0.0 && b.y0 >= 0.0 && b.x1 <= 63.0 && b.y1 <= 63.0);
        }
        assert_eq!(hand_bboxes(&Annotation::empty("g", (64, 64)), 0.1, 0.2).len(), 0);
    }

    #[test]
    fn region_distance_matches_brute_force_and_checks_lengths() {
        let mut rng = rng_for(17, Domain::Probe, 0);
        for _ in 0..20 {
            let gt: Vec<Keypoint> = (0..21)
                .map(|_| Keypoint::new(rng.gen_range(0.0..64.0), rng.gen_range(0.0..64.0), 1.0))
                .collect();
            let gen: Vec<Keypoint> = (0..21)
                .map(|_| Keypoint::new(rng.gen_range(0.0..64.0), rng.gen_range(0.0..64.0), 1.0))
                .collect();
            let (d, n) = region_distance(&gt, &gen, RegionDistance::SumEuclidean).unwrap();
            let mut want = 0.0;
            for i in 0..21 {
                want +=
                    ((gt[i].x - gen[i].x).powi(2) + (gt[i].y - gen[i].y).powi(2)).sqrt();
            }
            assert!((d - want).abs() < 1e-12);
            assert_eq!(n, 21);
        }
        assert!(region_distance(&[], &[Keypoint::missing()], RegionDistance::SumEuclidean)
            .is_err());
    }

    #[test]
    fn weight_validation_enforces_convexity() {
        assert!(RegionWeights::default().validate().is_ok());
        assert!(RegionWeights { hands: 0.5, face: 0.2, body: 0.4 }.validate().is_err());
        assert!(RegionWeights { hands: 1.2, face: -0.1, body: -0.1 }.validate().is_err());
    }

    #[test]
    fn validate_rejects_malformed_annotations() {
        let mut ann = Annotation::empty("f", (64, 64));
        ann.body.pop();
        assert!(ann.validate().is_err());
        let mut ann2 = Annotation::empty("f", (64, 64));
        ann2.face[0].confidence = 1.5;
        assert!(ann2.validate().is_err());
        let ann3 = Annotation::empty("f", (0, 64));
        assert!(ann3.validate().is_err());
    }
}
