//! Open-set character recognition against a [`QueryBank`].
//!
//! A face is labelled with its nearest query (squared L2) when that distance
//! is strictly below the threshold `u`, otherwise it is [`Label::Unknown`].

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::embedding::{l2_distance_sq, Embedding};
use crate::error::{Error, Result};
use crate::query_bank::{check_query_dim, QueryBank, UNKNOWN};

pub const DEFAULT_THRESHOLD: f64 = 1.3;
/// Threshold standing in for "+∞" in sweeps.
pub const INFINITE_THRESHOLD: f64 = 1e9;
const UNIT_NORM_TOL: f64 = 1e-6;

/// Axis-aligned box `(x, y, w, h)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w > 0.0 && self.h > 0.0
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceDetection {
    pub frame_index: u64,
    pub bbox: BBox,
    pub embedding: Embedding,
    pub detection_id: String,
}

impl FaceDetection {
    pub fn new(frame_index: u64, bbox: BBox, embedding: Embedding, detection_id: impl Into<String>) -> Result<Self> {
        let det = FaceDetection {
            frame_index,
            bbox,
            embedding,
            detection_id: detection_id.into(),
        };
        det.validate()?;
        Ok(det)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.bbox.is_valid() {
            return Err(Error::invalid(format!(
                "detection '{}': bbox needs positive width and height",
                self.detection_id
            )));
        }
        if !self.embedding.is_unit(UNIT_NORM_TOL) {
            return Err(Error::invalid(format!(
                "detection '{}': embedding norm {} is not 1",
                self.detection_id,
                self.embedding.norm()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Character(String),
    Unknown,
}

impl Label {
    pub fn name(&self) -> Option<&str> {
        match self {
            Label::Character(n) => Some(n),
            Label::Unknown => None,
        }
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, Label::Unknown)
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        if s == UNKNOWN {
            Label::Unknown
        } else {
            Label::Character(s.to_string())
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name().unwrap_or(UNKNOWN))
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Label::from(s.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecognitionResult {
    pub detection_id: String,
    pub frame_index: u64,
    pub label: Label,
    pub min_distance: f64,
    /// Squared distance to every bank entry, in bank order.
    pub distances: Vec<(String, f64)>,
}

fn check_threshold(u: f64) -> Result<()> {
    if u.is_nan() || u < 0.0 {
        return Err(Error::invalid(format!("threshold u must be non-negative, got {u}")));
    }
    Ok(())
}

type Nearest = (usize, f64, Vec<(String, f64)>);

/// Nearest bank entry by squared L2 distance; ties go to the earlier entry.
fn nearest(face: &FaceDetection, bank: &QueryBank) -> Result<Nearest> {
    if bank.is_empty() {
        return Err(Error::Empty("query bank has no entries".into()));
    }
    check_query_dim(bank, &face.embedding)?;
    let mut best = (0usize, f64::INFINITY);
    let mut distances = Vec::with_capacity(bank.len());
    for (j, entry) in bank.entries.iter().enumerate() {
        let d = l2_distance_sq(&face.embedding, &entry.query)?;
        if d < best.1 {
            best = (j, d);
        }
        distances.push((entry.name.clone(), d));
    }
    Ok((best.0, best.1, distances))
}

pub fn recognize(face: &FaceDetection, bank: &QueryBank, u: f64) -> Result<RecognitionResult> {
    check_threshold(u)?;
    let (j, min_distance, distances) = nearest(face, bank)?;
    let label = if min_distance < u {
        Label::Character(bank.entries[j].name.clone())
    } else {
        Label::Unknown
    };
    Ok(RecognitionResult {
        detection_id: face.detection_id.clone(),
        frame_index: face.frame_index,
        label,
        min_distance,
        distances,
    })
}

/// Recognises every face of one keyframe. When two faces resolve to the same
/// character, the closer one keeps the label (earlier face on exact ties) and
/// the other becomes `Unknown`.
pub fn recognize_frame(faces: &[FaceDetection], bank: &QueryBank, u: f64) -> Result<Vec<RecognitionResult>> {
    if let Some(first) = faces.first() {
        if let Some(other) = faces.iter().find(|f| f.frame_index != first.frame_index) {
            return Err(Error::invalid(format!(
                "recognize_frame given faces from frames {} and {}",
                first.frame_index, other.frame_index
            )));
        }
    }
    let mut results = faces
        .iter()
        .map(|f| recognize(f, bank, u))
        .collect::<Result<Vec<_>>>()?;

    let mut keeper: HashMap<String, usize> = HashMap::new();
    for i in 0..results.len() {
        let Label::Character(name) = &results[i].label else {
            continue;
        };
        match keeper.get(name).copied() {
            None => {
                keeper.insert(name.clone(), i);
            }
            Some(k) if results[i].min_distance < results[k].min_distance => {
                keeper.insert(name.clone(), i);
                results[k].label = Label::Unknown;
            }
            Some(_) => results[i].label = Label::Unknown,
        }
    }
    Ok(results)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub u: f64,
    pub accuracy: f64,
    pub unknown_rate: f64,
}

/// Accuracy and unknown rate of per-face recognition at each threshold.
pub fn sweep_threshold(
    dataset: &[(FaceDetection, Label)],
    bank: &QueryBank,
    thresholds: &[f64],
) -> Result<Vec<SweepPoint>> {
    if dataset.is_empty() {
        return Err(Error::Empty("threshold sweep over an empty dataset".into()));
    }
    if thresholds.is_empty() {
        return Err(Error::Empty("no thresholds to sweep".into()));
    }
    for t in thresholds {
        check_threshold(*t)?;
    }
    if thresholds.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("thresholds must be sorted ascending"));
    }
    // the argmin does not depend on u, so nearest entries are computed once
    let nearest_all = dataset
        .iter()
        .map(|(face, truth)| nearest(face, bank).map(|(j, d, _)| (j, d, truth)))
        .collect::<Result<Vec<_>>>()?;
    let n = dataset.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&u| {
            let mut correct = 0usize;
            let mut unknown = 0usize;
            for (j, d, truth) in &nearest_all {
                let hit = if *d < u {
                    truth.name() == Some(bank.entries[*j].name.as_str())
                } else {
                    unknown += 1;
                    truth.is_unknown()
                };
                correct += hit as usize;
            }
            SweepPoint {
                u,
                accuracy: correct as f64 / n,
                unknown_rate: unknown as f64 / n,
            }
        })
        .collect())
}

pub fn sweep_to_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("u,accuracy,unknown_rate\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.u, p.accuracy, p.unknown_rate));
    }
    s
}

/// A detection row: `{"frame","bbox":[x,y,w,h],"id","vector"}`, with an
/// optional ground-truth `label` used by sweeps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub frame: u64,
    pub bbox: BBox,
    pub id: String,
    pub vector: Embedding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl From<&FaceDetection> for DetectionRecord {
    fn from(d: &FaceDetection) -> Self {
        DetectionRecord {
            frame: d.frame_index,
            bbox: d.bbox,
            id: d.detection_id.clone(),
            vector: d.embedding.clone(),
            label: None,
        }
    }
}

/// Loads detections, keeping any ground-truth labels alongside.
pub fn load_detections(path: &Path) -> Result<Vec<(FaceDetection, Option<Label>)>> {
    let rows = crate::io::read_jsonl::<DetectionRecord>(path)?;
    let mut seen = std::collections::HashSet::new();
    rows.into_iter()
        .map(|row| {
            let r = row.value;
            if !seen.insert(r.id.clone()) {
                return Err(Error::parse(path, row.line, "id", format!("duplicate detection id '{}'", r.id)));
            }
            let label = r.label.as_deref().map(Label::from);
            let det = FaceDetection::new(r.frame, r.bbox, r.vector, r.id).map_err(|e| {
                let field = if e.to_string().contains("bbox") { "bbox" } else { "vector" };
                Error::parse(path, row.line, field, e.to_string())
            })?;
            Ok((det, label))
        })
        .collect()
}

/// Output row `{"id","frame","label","min_distance"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionRecord {
    pub id: String,
    pub frame: u64,
    pub label: Label,
    pub min_distance: f64,
}

impl From<&RecognitionResult> for RecognitionRecord {
    fn from(r: &RecognitionResult) -> Self {
        RecognitionRecord {
            id: r.detection_id.clone(),
            frame: r.frame_index,
            label: r.label.clone(),
            min_distance: r.min_distance,
        }
    }
}

/// Groups detections by frame (ascending) and recognises each frame.
pub fn recognize_all(faces: &[FaceDetection], bank: &QueryBank, u: f64) -> Result<Vec<RecognitionResult>> {
    let mut frames: Vec<u64> = faces.iter().map(|f| f.frame_index).collect();
    frames.sort_unstable();
    frames.dedup();
    let mut out = Vec::with_capacity(faces.len());
    for frame in frames {
        let group: Vec<FaceDetection> = faces.iter().filter(|f| f.frame_index == frame).cloned().collect();
        out.extend(recognize_frame(&group, bank, u)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::normalize;
    use crate::query_bank::BankEntry;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(v: &[f64]) -> Embedding {
        normalize(&Embedding::new(v.to_vec()).unwrap()).unwrap()
    }

    fn bank(queries: &[(&str, Embedding)]) -> QueryBank {
        QueryBank {
            movie_id: "m".into(),
            dim: queries[0].1.dim(),
            epsilon: 1e-6,
            objective_value: 0.0,
            entries: queries
                .iter()
                .map(|(n, q)| BankEntry { name: n.to_string(), query: q.clone() })
                .collect(),
            notes: vec![],
        }
    }

    fn face(frame: u64, id: &str, e: Embedding) -> FaceDetection {
        FaceDetection::new(frame, BBox::new(0.0, 0.0, 10.0, 10.0), e, id).unwrap()
    }

    fn basis(dim: usize, i: usize) -> Embedding {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        Embedding::new(v).unwrap()
    }

    fn three_bank() -> QueryBank {
        bank(&[("A", basis(4, 0)), ("B", basis(4, 1)), ("C", basis(4, 2))])
    }

    #[test]
    fn exact_query_match() {
        let r = recognize(&face(0, "f", basis(4, 1)), &three_bank(), 1.3).unwrap();
        assert_eq!(r.label, Label::Character("B".into()));
        assert_eq!(r.min_distance, 0.0);
        assert_eq!(r.distances.len(), 3);
    }

    #[test]
    fn orthogonal_face_is_unknown() {
        let r = recognize(&face(0, "f", basis(4, 3)), &three_bank(), 1.3).unwrap();
        assert_eq!(r.label, Label::Unknown);
        assert!(r.distances.iter().all(|(_, d)| *d == 2.0));
    }

    #[test]
    fn slerp_face_at_distance_one() {
        // cos θ = 1 − d/2 = 0.5 places the face at squared distance 1.0 from query A
        let theta = 0.5f64.acos();
        let e = Embedding::new(vec![theta.cos(), 0.0, 0.0, theta.sin()]).unwrap();
        let oracle = 2.0 - 2.0 * theta.cos();
        assert!((oracle - 1.0).abs() < 1e-12);
        let f = face(0, "f", e);
        let r = recognize(&f, &three_bank(), 1.3).unwrap();
        assert!((r.min_distance - 1.0).abs() < 1e-12);
        assert_eq!(r.label, Label::Character("A".into()));
        assert_eq!(recognize(&f, &three_bank(), 0.9).unwrap().label, Label::Unknown);
    }

    #[test]
    fn distance_equal_to_threshold_is_unknown() {
        let r = recognize(&face(0, "f", basis(4, 3)), &three_bank(), 2.0).unwrap();
        assert_eq!(r.label, Label::Unknown);
    }

    #[test]
    fn ties_go_to_first_entry() {
        let e = unit(&[1.0, 1.0, 0.0, 0.0]);
        let r = recognize(&face(0, "f", e), &three_bank(), 1.3).unwrap();
        assert_eq!(r.label, Label::Character("A".into()));
    }

    #[test]
    fn dim_mismatch_is_error() {
        let f = face(0, "f", unit(&[1.0, 0.0]));
        assert!(matches!(recognize(&f, &three_bank(), 1.3), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn frame_uniqueness_demotes_farther_face() {
        // squared distances 0.2 and 0.8 to A
        let near = unit(&[0.9, 0.0, 0.0, (1.0 - 0.9f64.powi(2)).sqrt()]);
        let far = unit(&[0.6, 0.0, 0.0, 0.8]);
        let faces = vec![face(3, "far", far), face(3, "near", near)];
        let res = recognize_frame(&faces, &three_bank(), 1.3).unwrap();
        assert!((res[1].min_distance - 0.2).abs() < 1e-12);
        assert!((res[0].min_distance - 0.8).abs() < 1e-12);
        assert_eq!(res[0].label, Label::Unknown);
        assert_eq!(res[1].label, Label::Character("A".into()));
    }

    #[test]
    fn frame_edge_cases() {
        assert!(recognize_frame(&[], &three_bank(), 1.3).unwrap().is_empty());
        let faces = vec![face(1, "a", basis(4, 0)), face(1, "b", basis(4, 1)), face(1, "c", basis(4, 2))];
        let res = recognize_frame(&faces, &three_bank(), 1.3).unwrap();
        let labels: Vec<_> = res.iter().map(|r| r.label.to_string()).collect();
        assert_eq!(labels, vec!["A", "B", "C"]);
        let mixed = vec![face(1, "a", basis(4, 0)), face(2, "b", basis(4, 1))];
        assert!(recognize_frame(&mixed, &three_bank(), 1.3).is_err());
    }

    #[test]
    fn sweep_limits() {
        let data = vec![
            (face(0, "a", basis(4, 0)), Label::Character("A".into())),
            (face(0, "x", basis(4, 3)), Label::Unknown),
        ];
        let pts = sweep_threshold(&data, &three_bank(), &[0.0, INFINITE_THRESHOLD]).unwrap();
        assert_eq!(pts[0].unknown_rate, 1.0);
        assert_eq!(pts[0].accuracy, 0.5);
        assert_eq!(pts[1].unknown_rate, 0.0);
        assert_eq!(pts[1].accuracy, 0.5);
        assert!(sweep_threshold(&[], &three_bank(), &[1.0]).is_err());
        assert!(sweep_threshold(&data, &three_bank(), &[1.0, 0.5]).is_err());
        assert!(sweep_to_csv(&pts).starts_with("u,accuracy,unknown_rate\n0,0.5,1\n"));
    }

    #[test]
    fn label_serializes_as_plain_string() {
        assert_eq!(serde_json::to_string(&Label::Unknown).unwrap(), "\"Unknown\"");
        let l: Label = serde_json::from_str("\"Ryan\"").unwrap();
        assert_eq!(l, Label::Character("Ryan".into()));
    }

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
        unit(&(0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())
    }

    proptest! {
        #[test]
        fn non_unknown_label_is_threshold_independent(seed in any::<u64>(), u1 in 0.0f64..4.0, u2 in 0.0f64..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = bank(&[("A", random_unit(&mut rng, 6)), ("B", random_unit(&mut rng, 6)), ("C", random_unit(&mut rng, 6))]);
            let f = face(0, "f", random_unit(&mut rng, 6));
            let r1 = recognize(&f, &b, u1).unwrap();
            let r2 = recognize(&f, &b, u2).unwrap();
            if !r1.label.is_unknown() && !r2.label.is_unknown() {
                prop_assert_eq!(r1.label, r2.label);
            }
            prop_assert_eq!(r1.min_distance, r2.min_distance);
        }

        #[test]
        fn bank_permutation_keeps_label(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let qs: Vec<_> = ["A", "B", "C", "D"].iter().map(|n| (*n, random_unit(&mut rng, 5))).collect();
            let f = face(0, "f", random_unit(&mut rng, 5));
            let base = recognize(&f, &bank(&qs), 1.3).unwrap();
            let mut rev = qs.clone();
            rev.reverse();
            let other = recognize(&f, &bank(&rev), 1.3).unwrap();
            prop_assert_eq!(base.label, other.label);
        }

        #[test]
        fn frame_never_repeats_a_label(seed in any::<u64>(), n in 0usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = bank(&[("A", random_unit(&mut rng, 3)), ("B", random_unit(&mut rng, 3))]);
            let faces: Vec<_> = (0..n).map(|i| face(5, &format!("f{i}"), random_unit(&mut rng, 3))).collect();
            let res = recognize_frame(&faces, &b, 3.0).unwrap();
            let mut names: Vec<_> = res.iter().filter_map(|r| r.label.name()).collect();
            let total = names.len();
            names.sort();
            names.dedup();
            prop_assert_eq!(total, names.len());
        }
    }
}
