//! Two-stage dataset curation: cleanse frames by keypoint completeness,
//! then relabel the survivors into per-modality conditioning maps through a
//! pluggable annotator. Failures demote entries in place; nothing is ever
//! deleted from a manifest, so every curation run stays auditable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{Annotation, TOTAL_POINTS};
use crate::raster::Raster;
use crate::rng::{rng_for, Domain};
use crate::synthworld::{
    draw_skeleton, oracle_annotate, reconstruct_maps, skeleton_on_depth, FrameBundle,
    SkeletonStyle,
};

/// Keep rule for stage-one cleansing: a frame survives when its confident
/// keypoint count reaches `tau`. Hand keypoints count only at or above
/// `hand_conf_threshold`; body and face count unconditionally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurationPolicy {
    pub tau: usize,
    pub hand_conf_threshold: f64,
}

impl Default for CurationPolicy {
    fn default() -> Self {
        CurationPolicy {
            tau: 133,
            hand_conf_threshold: 0.2,
        }
    }
}

impl CurationPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 || self.tau > TOTAL_POINTS {
            return Err(Error::invalid(format!(
                "tau {} outside 1..={TOTAL_POINTS}",
                self.tau
            )));
        }
        if !(0.0..=1.0).contains(&self.hand_conf_threshold) {
            return Err(Error::invalid(format!(
                "hand confidence threshold {} outside [0, 1]",
                self.hand_conf_threshold
            )));
        }
        Ok(())
    }
}

/// Conditioning map kinds stage-two relabelling can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Skeleton,
    Depth,
    Normal,
    SkeletonOnDepth,
}

impl Modality {
    pub const ALL: [Modality; 4] = [
        Modality::Skeleton,
        Modality::Depth,
        Modality::Normal,
        Modality::SkeletonOnDepth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Skeleton => "skeleton",
            Modality::Depth => "depth",
            Modality::Normal => "normal",
            Modality::SkeletonOnDepth => "skeleton-on-depth",
        }
    }

    fn required_capabilities(self) -> &'static [Capability] {
        match self {
            Modality::Skeleton => &[Capability::SkeletonMap],
            Modality::Depth => &[Capability::DepthMap],
            Modality::Normal => &[Capability::NormalMap],
            Modality::SkeletonOnDepth => &[Capability::SkeletonMap, Capability::DepthMap],
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Modality> {
        Modality::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown modality '{s}'")))
    }
}

/// What an annotator implementation can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capability {
    Keypoints,
    SkeletonMap,
    DepthMap,
    NormalMap,
}

/// A pose/geometry annotator. Implementations must be deterministic for a
/// fixed input image; the pipeline relies on that for reproducible runs.
pub trait Annotator {
    /// Stable identifier recorded in manifest headers.
    fn id(&self) -> &'static str;

    fn capabilities(&self) -> &'static [Capability];

    /// Recover keypoints from pixels alone.
    fn annotate(&self, image: &Raster, frame_id: &str) -> Result<Annotation>;

    /// Produce one conditioning map for an annotated frame. The map must be
    /// pixel-aligned with the input image.
    fn modality_map(&self, image: &Raster, ann: &Annotation, modality: Modality)
        -> Result<Raster>;

    fn supports(&self, modality: Modality) -> bool {
        modality
            .required_capabilities()
            .iter()
            .all(|c| self.capabilities().contains(c))
    }
}

/// The marker-reading annotator: keypoints come from decoding the reserved
/// palette, maps are rebuilt from the recovered keypoints alone. This is
/// the desk-scale stand-in for external pose and geometry annotators, which
/// would attach behind the same trait.
#[derive(Debug, Clone, Default)]
pub struct OracleAnnotator {
    pub style: SkeletonStyle,
}

impl Annotator for OracleAnnotator {
    fn id(&self) -> &'static str {
        "marker-oracle"
    }

    fn capabilities(&self) -> &'static [Capability] {
        &[
            Capability::Keypoints,
            Capability::SkeletonMap,
            Capability::DepthMap,
            Capability::NormalMap,
        ]
    }

    fn annotate(&self, image: &Raster, frame_id: &str) -> Result<Annotation> {
        let mut ann = oracle_annotate(image);
        ann.frame_id = frame_id.to_string();
        Ok(ann)
    }

    fn modality_map(
        &self,
        image: &Raster,
        ann: &Annotation,
        modality: Modality,
    ) -> Result<Raster> {
        let size = (image.width(), image.height());
        Ok(match modality {
            Modality::Skeleton => draw_skeleton(ann, size, &self.style),
            Modality::Depth => reconstruct_maps(ann, size).0,
            Modality::Normal => reconstruct_maps(ann, size).1,
            Modality::SkeletonOnDepth => {
                let depth = reconstruct_maps(ann, size).0;
                skeleton_on_depth(ann, &depth, &self.style)?
            }
        })
    }
}

/// Run-level provenance stored at the top of every manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub tau: usize,
    pub hand_conf_threshold: f64,
    /// Who produced the annotations the cleanse stage counted. Cleansing
    /// consumes stored annotation files, so this names their source.
    pub cleanse_annotations: String,
    /// Stage-two annotator id, present once relabelling has run.
    pub relabel_annotator: Option<String>,
    pub timestamp: String,
}

/// One frame's curation record. `failure` explains a demotion; entries are
/// demoted in place and never removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub frame_id: String,
    pub image_path: PathBuf,
    pub annotation_path: PathBuf,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub modality_paths: BTreeMap<Modality, PathBuf>,
    pub kept: bool,
    pub keypoint_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn kept_entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.kept)
    }

    pub fn kept_count(&self) -> usize {
        self.kept_entries().count()
    }

    /// Healthy entries satisfy kept = (count >= tau); demoted entries must
    /// carry a failure reason instead.
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            let gate = e.keypoint_count >= self.header.tau;
            if e.failure.is_none() && e.kept != gate {
                return Err(Error::BadFormat(format!(
                    "manifest entry {}: kept={} but count {} vs tau {}",
                    e.frame_id, e.kept, e.keypoint_count, self.header.tau
                )));
            }
            if e.failure.is_some() && e.kept {
                return Err(Error::BadFormat(format!(
                    "manifest entry {}: kept despite failure",
                    e.frame_id
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CorpusManifest> {
        let manifest: CorpusManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        manifest.validate()?;
        Ok(manifest)
    }
}

fn now_rfc3339() -> String {
    time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .unwrap_or_else(|_| "unknown".to_string())
}

/// A frame on disk: the rendered image plus its stored annotation document.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRef {
    pub frame_id: String,
    pub image_path: PathBuf,
    pub annotation_path: PathBuf,
}

/// Corpus file layout shared by the generator and the curation pipeline:
/// `<id>.rgb.png` next to `<id>.ann.json`, with modality maps as
/// `<id>.<modality>.png`.
pub fn frame_paths(dir: &Path, frame_id: &str) -> FrameRef {
    FrameRef {
        frame_id: frame_id.to_string(),
        image_path: dir.join(format!("{frame_id}.rgb.png")),
        annotation_path: dir.join(format!("{frame_id}.ann.json")),
    }
}

/// Write one rendered bundle into the corpus layout and return where it
/// landed. The stored annotation carries the frame id.
pub fn write_frame(dir: &Path, frame_id: &str, bundle: &FrameBundle) -> Result<FrameRef> {
    std::fs::create_dir_all(dir)?;
    let paths = frame_paths(dir, frame_id);
    bundle.rgb.save_png(&paths.image_path)?;
    for (modality, map) in [
        (Modality::Skeleton, &bundle.skeleton),
        (Modality::Depth, &bundle.depth),
        (Modality::Normal, &bundle.normal),
    ] {
        map.save_png(&dir.join(format!("{frame_id}.{modality}.png")))?;
    }
    let mut ann = bundle.annotation.clone();
    ann.frame_id = frame_id.to_string();
    std::fs::write(&paths.annotation_path, serde_json::to_string_pretty(&ann)?)?;
    Ok(paths)
}

/// Enumerate the frames of a corpus directory, ordered by frame id.
pub fn scan_frames(dir: &Path) -> Result<Vec<FrameRef>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(id) = name.strip_suffix(".rgb.png") {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids.iter().map(|id| frame_paths(dir, id)).collect())
}

fn load_frame(frame: &FrameRef) -> Result<(Raster, Annotation)> {
    let image = Raster::load_png(&frame.image_path)?;
    let ann: Annotation =
        serde_json::from_str(&std::fs::read_to_string(&frame.annotation_path)?)?;
    ann.validate()?;
    if ann.image_size != (image.width(), image.height()) {
        return Err(Error::shape(
            format!("annotation size {:?}", ann.image_size),
            format!("image {}x{}", image.width(), image.height()),
        ));
    }
    Ok((image, ann))
}

/// Stage one: gate every frame on its confident keypoint count. Unreadable
/// frames become failed entries and the pipeline continues; input order is
/// preserved.
pub fn cleanse(frames: &[FrameRef], policy: &CurationPolicy) -> Result<CorpusManifest> {
    policy.validate()?;
    let header = ManifestHeader {
        tau: policy.tau,
        hand_conf_threshold: policy.hand_conf_threshold,
        cleanse_annotations: "stored".to_string(),
        relabel_annotator: None,
        timestamp: now_rfc3339(),
    };
    let mut entries = Vec::with_capacity(frames.len());
    for frame in frames {
        let mut entry = ManifestEntry {
            frame_id: frame.frame_id.clone(),
            image_path: frame.image_path.clone(),
            annotation_path: frame.annotation_path.clone(),
            modality_paths: BTreeMap::new(),
            kept: false,
            keypoint_count: 0,
            failure: None,
        };
        match load_frame(frame) {
            Ok((_, ann)) => {
                entry.keypoint_count = ann.keypoint_count(policy.hand_conf_threshold);
                entry.kept = entry.keypoint_count >= policy.tau;
            }
            Err(err) => entry.failure = Some(err.to_string()),
        }
        entries.push(entry);
    }
    Ok(CorpusManifest { header, entries })
}

/// Stage two: re-annotate every kept frame and rasterize the requested
/// conditioning maps into `out_dir`. Annotator failure demotes the entry
/// with a reason; discarded entries pass through untouched and are never
/// resurrected.
pub fn relabel(
    manifest: &CorpusManifest,
    annotator: &dyn Annotator,
    modalities: &BTreeSet<Modality>,
    out_dir: &Path,
) -> Result<CorpusManifest> {
    for &m in modalities {
        if !annotator.supports(m) {
            return Err(Error::invalid(format!(
                "annotator '{}' does not support modality '{m}'",
                annotator.id()
            )));
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let mut out = manifest.clone();
    out.header.relabel_annotator = Some(annotator.id().to_string());
    out.header.timestamp = now_rfc3339();
    for entry in out.entries.iter_mut().filter(|e| e.kept) {
        match relabel_entry(entry, annotator, modalities, out_dir) {
            Ok(()) => {}
            Err(err) => {
                entry.kept = false;
                entry.failure = Some(format!("relabel: {err}"));
            }
        }
    }
    Ok(out)
}

fn relabel_entry(
    entry: &mut ManifestEntry,
    annotator: &dyn Annotator,
    modalities: &BTreeSet<Modality>,
    out_dir: &Path,
) -> Result<()> {
    let image = Raster::load_png(&entry.image_path)?;
    let ann = annotator.annotate(&image, &entry.frame_id)?;
    let mut maps = Vec::new();
    for &modality in modalities {
        let map = annotator.modality_map(&image, &ann, modality)?;
        if (map.width(), map.height()) != (image.width(), image.height()) {
            return Err(Error::shape(
                format!("{}x{}", image.width(), image.height()),
                format!("{}x{} {modality} map", map.width(), map.height()),
            ));
        }
        maps.push((modality, map));
    }
    // all products exist before anything is recorded, so a half-failed
    // frame never leaves dangling manifest paths
    let ann_path = out_dir.join(format!("{}.ann.json", entry.frame_id));
    std::fs::write(&ann_path, serde_json::to_string_pretty(&ann)?)?;
    entry.annotation_path = ann_path;
    for (modality, map) in maps {
        let path = out_dir.join(format!("{}.{modality}.png", entry.frame_id));
        map.save_png(&path)?;
        entry.modality_paths.insert(modality, path);
    }
    Ok(())
}

/// Deterministic seeded partition of the kept entries. Both sides keep the
/// manifest's entry order; discarded and failed entries belong to neither.
pub fn split(
    manifest: &CorpusManifest,
    train_fraction: f64,
    seed: u64,
) -> Result<(CorpusManifest, CorpusManifest)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let kept: Vec<usize> = manifest
        .entries
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.kept.then_some(i))
        .collect();
    if kept.len() < 2 {
        return Err(Error::invalid(format!(
            "cannot split {} kept entries",
            kept.len()
        )));
    }
    let mut shuffled = kept.clone();
    use rand::seq::SliceRandom;
    shuffled.shuffle(&mut rng_for(seed, Domain::Split, 0));
    let n_train = ((kept.len() as f64 * train_fraction).round() as usize)
        .clamp(1, kept.len() - 1);
    let mut train_idx: Vec<usize> = shuffled[..n_train].to_vec();
    let mut eval_idx: Vec<usize> = shuffled[n_train..].to_vec();
    train_idx.sort_unstable();
    eval_idx.sort_unstable();
    let pick = |idx: &[usize]| CorpusManifest {
        header: manifest.header.clone(),
        entries: idx.iter().map(|&i| manifest.entries[i].clone()).collect(),
    };
    Ok((pick(&train_idx), pick(&eval_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::Keypoint;
    use crate::synthworld::{render, sample_pose};
    use tempfile::TempDir;

    fn synthetic_frame(dir: &Path, idx: usize, hand_conf: f64) -> FrameRef {
        let id = format!("f{idx:05}");
        let img = Raster::filled(48, 48, [0.5; 3]);
        let mut ann = Annotation::empty(&id, (48, 48));
        for kp in ann.all_points_mut() {
            *kp = Keypoint::new(10.0, 10.0, 1.0);
        }
        for kp in ann.left_hand.iter_mut().chain(ann.right_hand.iter_mut()) {
            kp.confidence = hand_conf;
        }
        let paths = frame_paths(dir, &id);
        std::fs::create_dir_all(dir).unwrap();
        img.save_png(&paths.image_path).unwrap();
        std::fs::write(&paths.annotation_path, serde_json::to_string(&ann).unwrap())
            .unwrap();
        paths
    }

    /// `clean` confident frames and `degraded` low-hand-confidence frames,
    /// interleaved so the kept set is not a contiguous prefix.
    fn mixed_corpus(dir: &Path, clean: usize, degraded: usize) -> Vec<FrameRef> {
        let stride = (clean + degraded) / degraded.max(1);
        (0..clean + degraded)
            .map(|i| {
                let low = degraded > 0 && i % stride == 1 && i / stride < degraded;
                synthetic_frame(dir, i, if low { 0.1 } else { 1.0 })
            })
            .collect()
    }

    #[test]
    fn policy_validation_rejects_bad_values() {
        assert!(CurationPolicy::default().validate().is_ok());
        assert!(CurationPolicy { tau: 0, ..Default::default() }.validate().is_err());
        assert!(CurationPolicy { tau: 134, ..Default::default() }.validate().is_err());
        assert!(CurationPolicy { hand_conf_threshold: 1.5, ..Default::default() }
            .validate()
            .is_err());
    }

    #[test]
    fn cleanse_gates_on_tau_inclusively_and_preserves_order() {
        let dir = TempDir::new().unwrap();
        let frames = vec![
            synthetic_frame(dir.path(), 0, 1.0),
            synthetic_frame(dir.path(), 1, 0.1),
            synthetic_frame(dir.path(), 2, 0.2),
            synthetic_frame(dir.path(), 3, 1.0),
        ];
        let manifest = cleanse(&frames, &CurationPolicy::default()).unwrap();
        manifest.validate().unwrap();
        let kept: Vec<&str> = manifest
            .kept_entries()
            .map(|e| e.frame_id.as_str())
            .collect();
        // exactly 133 confident points is kept; 0.2 meets the threshold
        assert_eq!(kept, ["f00000", "f00002", "f00003"]);
        assert_eq!(manifest.entries[1].keypoint_count, 91);
        assert!(!manifest.entries[1].kept);
        let ids: Vec<&str> = manifest.entries.iter().map(|e| e.frame_id.as_str()).collect();
        assert_eq!(ids, ["f00000", "f00001", "f00002", "f00003"]);
    }

    #[test]
    fn unreadable_frames_fail_without_aborting() {
        let dir = TempDir::new().unwrap();
        let mut frames = vec![synthetic_frame(dir.path(), 0, 1.0)];
        frames.push(FrameRef {
            frame_id: "f99999".into(),
            image_path: dir.path().join("missing.rgb.png"),
            annotation_path: dir.path().join("missing.ann.json"),
        });
        frames.push(synthetic_frame(dir.path(), 1, 1.0));
        // corrupt annotation json
        let bad = synthetic_frame(dir.path(), 2, 1.0);
        std::fs::write(&bad.annotation_path, "{not json").unwrap();
        frames.push(bad);
        let manifest = cleanse(&frames, &CurationPolicy::default()).unwrap();
        assert_eq!(manifest.entries.len(), 4);
        assert_eq!(manifest.kept_count(), 2);
        assert!(manifest.entries[1].failure.is_some());
        assert!(manifest.entries[3].failure.is_some());
        manifest.validate().unwrap();
    }

    #[test]
    fn cleanse_is_idempotent_on_its_kept_output() {
        let dir = TempDir::new().unwrap();
        let frames = mixed_corpus(dir.path(), 12, 6);
        let policy = CurationPolicy::default();
        let first = cleanse(&frames, &policy).unwrap();
        let kept_refs: Vec<FrameRef> = first
            .kept_entries()
            .map(|e| FrameRef {
                frame_id: e.frame_id.clone(),
                image_path: e.image_path.clone(),
                annotation_path: e.annotation_path.clone(),
            })
            .collect();
        let second = cleanse(&kept_refs, &policy).unwrap();
        assert_eq!(second.entries.len(), kept_refs.len());
        assert!(second.entries.iter().all(|e| e.kept));
        let first_ids: Vec<_> = first.kept_entries().map(|e| &e.frame_id).collect();
        let second_ids: Vec<_> = second.entries.iter().map(|e| &e.frame_id).collect();
        assert_eq!(first_ids, second_ids);
    }

    #[test]
    fn raising_tau_never_increases_the_kept_count() {
        let dir = TempDir::new().unwrap();
        // half-degraded corpus plus one fully missing-hands frame
        let mut frames = Vec::new();
        for i in 0..10 {
            frames.push(synthetic_frame(
                dir.path(),
                i,
                [1.0, 0.5, 0.1, 0.0, 1.0, 0.25, 0.15, 1.0, 0.05, 0.2][i],
            ));
        }
        let mut prev = usize::MAX;
        for tau in [1usize, 50, 91, 92, 110, 133] {
            let policy = CurationPolicy {
                tau,
                ..Default::default()
            };
            let kept = cleanse(&frames, &policy).unwrap().kept_count();
            assert!(kept <= prev, "tau {tau}: kept {kept} > {prev}");
            prev = kept;
        }
    }

    fn rendered_corpus(dir: &Path, count: usize) -> Vec<FrameRef> {
        (0..count)
            .map(|i| {
                let spec = sample_pose(i as u64, 0.4);
                let bundle = render(&spec, (64, 64), 0.0).unwrap();
                write_frame(dir, &format!("f{i:05}"), &bundle).unwrap()
            })
            .collect()
    }

    #[test]
    fn relabel_writes_maps_and_refreshed_annotations() {
        let dir = TempDir::new().unwrap();
        let out = TempDir::new().unwrap();
        let frames = rendered_corpus(dir.path(), 3);
        let manifest = cleanse(&frames, &CurationPolicy::default()).unwrap();
        assert_eq!(manifest.kept_count(), 3);
        let modalities: BTreeSet<Modality> = Modality::ALL.into_iter().collect();
        let annotator = OracleAnnotator::default();
        let relabelled = relabel(&manifest, &annotator, &modalities, out.path()).unwrap();
        assert_eq!(relabelled.kept_count(), 3);
        assert_eq!(
            relabelled.header.relabel_annotator.as_deref(),
            Some("marker-oracle")
        );
        for entry in relabelled.kept_entries() {
            assert_eq!(entry.modality_paths.len(), 4);
            for (m, path) in &entry.modality_paths {
                let map = Raster::load_png(path).unwrap();
                assert_eq!((map.width(), map.height()), (64, 64), "{m}");
            }
            let ann: Annotation = serde_json::from_str(
                &std::fs::read_to_string(&entry.annotation_path).unwrap(),
            )
            .unwrap();
            assert_eq!(ann.frame_id, entry.frame_id);
            // the oracle re-reads a clean render at full confidence
            assert_eq!(ann.keypoint_count(0.2), 133);
        }
    }

    struct FailingAnnotator;

    impl Annotator for FailingAnnotator {
        fn id(&self) -> &'static str {
            "failing"
        }
        fn capabilities(&self) -> &'static [Capability] {
            &[Capability::Keypoints, Capability::SkeletonMap]
        }
        fn annotate(&self, _: &Raster, frame_id: &str) -> Result<Annotation> {
            if frame_id.ends_with('1') {
                Err(Error::invalid("synthetic annotator failure"))
            } else {
                Ok(Annotation::empty(frame_id, (64, 64)))
            }
        }
        fn modality_map(&self, image: &Raster, _: &Annotation, _: Modality) -> Result<Raster> {
            Ok(Raster::new(image.width(), image.height()))
        }
    }

    #[test]
    fn relabel_demotes_failures_and_never_resurrects() {
        let dir = TempDir::new().unwrap();
        let out = TempDir::new().unwrap();
        let mut frames = rendered_corpus(dir.path(), 2);
        frames.push(synthetic_frame(dir.path(), 7, 0.1)); // discarded by cleanse
        let manifest = cleanse(&frames, &CurationPolicy::default()).unwrap();
        assert_eq!(manifest.kept_count(), 2);
        let modalities: BTreeSet<Modality> = [Modality::Skeleton].into_iter().collect();
        let relabelled = relabel(&manifest, &FailingAnnotator, &modalities, out.path()).unwrap();
        // f00001 fails the annotator, f00007 stays discarded, f00000 survives
        assert_eq!(relabelled.kept_count(), 1);
        assert_eq!(relabelled.entries.len(), 3);
        let by_id = |id: &str| {
            relabelled
                .entries
                .iter()
                .find(|e| e.frame_id == id)
                .unwrap()
        };
        assert!(by_id("f00000").kept);
        assert!(!by_id("f00001").kept);
        assert!(by_id("f00001").failure.as_deref().unwrap().contains("relabel"));
        assert!(!by_id("f00007").kept);
        assert!(by_id("f00007").failure.is_none());
        relabelled.validate().unwrap();
    }

    #[test]
    fn relabel_rejects_unsupported_modalities() {
        let dir = TempDir::new().unwrap();
        let frames = vec![synthetic_frame(dir.path(), 0, 1.0)];
        let manifest = cleanse(&frames, &CurationPolicy::default()).unwrap();
        let modalities: BTreeSet<Modality> = [Modality::Normal].into_iter().collect();
        let err = relabel(&manifest, &FailingAnnotator, &modalities, dir.path());
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn empty_manifest_relabels_to_empty() {
        let out = TempDir::new().unwrap();
        let manifest = cleanse(&[], &CurationPolicy::default()).unwrap();
        let modalities: BTreeSet<Modality> = [Modality::Skeleton].into_iter().collect();
        let relabelled =
            relabel(&manifest, &OracleAnnotator::default(), &modalities, out.path()).unwrap();
        assert!(relabelled.entries.is_empty());
    }

    #[test]
    fn split_is_deterministic_disjoint_and_complete() {
        let dir = TempDir::new().unwrap();
        let frames = mixed_corpus(dir.path(), 20, 5);
        let manifest = cleanse(&frames, &CurationPolicy::default()).unwrap();
        let (train, eval) = split(&manifest, 0.8, 9).unwrap();
        let (train2, eval2) = split(&manifest, 0.8, 9).unwrap();
        assert_eq!(train, train2);
        assert_eq!(eval, eval2);
        assert_eq!(train.entries.len(), 16);
        assert_eq!(eval.entries.len(), 4);
        let train_ids: BTreeSet<&String> = train.entries.iter().map(|e| &e.frame_id).collect();
        let eval_ids: BTreeSet<&String> = eval.entries.iter().map(|e| &e.frame_id).collect();
        assert!(train_ids.is_disjoint(&eval_ids));
        let union: BTreeSet<&String> = train_ids.union(&eval_ids).copied().collect();
        let kept_ids: BTreeSet<&String> =
            manifest.kept_entries().map(|e| &e.frame_id).collect();
        assert_eq!(union, kept_ids);
        // a different seed moves the boundary
        let (train3, _) = split(&manifest, 0.8, 10).unwrap();
        assert_ne!(train.entries, train3.entries);
    }

    #[test]
    fn split_edge_cases() {
        let dir = TempDir::new().unwrap();
        let frames = vec![
            synthetic_frame(dir.path(), 0, 1.0),
            synthetic_frame(dir.path(), 1, 1.0),
        ];
        let manifest = cleanse(&frames, &CurationPolicy::default()).unwrap();
        let (train, eval) = split(&manifest, 0.5, 3).unwrap();
        assert_eq!((train.entries.len(), eval.entries.len()), (1, 1));
        assert!(split(&manifest, 0.0, 3).is_err());
        assert!(split(&manifest, 1.0, 3).is_err());
        let single = cleanse(&frames[..1], &CurationPolicy::default()).unwrap();
        assert!(split(&single, 0.5, 3).is_err());
    }

    #[test]
    fn manifest_round_trips_through_disk() {
        let dir = TempDir::new().unwrap();
        let frames = mixed_corpus(dir.path(), 4, 2);
        let manifest = cleanse(&frames, &CurationPolicy::default()).unwrap();
        let path = dir.path().join("manifest.json");
        manifest.save(&path).unwrap();
        let back = CorpusManifest::load(&path).unwrap();
        assert_eq!(manifest, back);
    }

    #[test]
    fn modality_names_round_trip() {
        for m in Modality::ALL {
            assert_eq!(m.name().parse::<Modality>().unwrap(), m);
        }
        assert!("bogus".parse::<Modality>().is_err());
    }
}
