//! Deterministic character region propagation.
//!
//! Starting from recognised anchor detections, each character is walked
//! forward and backward over the keyframe sequence. A walk keeps a memory
//! bank: a FIFO context queue of recently assigned regions (capacity
//! `k_ctx`) and a FIFO prompt queue of frames where recognition fired
//! (capacity `k_prompt`). In every frame the candidate maximising
//!
//! ```text
//! score = alpha · cos(candidate, mean(context)) + (1 − alpha) · IoU(candidate, last)
//! ```
//!
//! is assigned when `score ≥ tau_assoc`; otherwise the frame is lost and the
//! memory is left as is. Frames reached by several anchors take the walk of
//! the nearest one, and detections claimed by two characters in one frame go
//! to the higher score.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{check_dims, cosine_similarity, mean, Embedding};
use crate::error::{Error, Result};
use crate::recognition::{BBox, FaceDetection};

pub const DEFAULT_K_CTX: usize = 7;
pub const DEFAULT_K_PROMPT: usize = 8;
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_TAU_ASSOC: f64 = 0.5;

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let iy = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Keyframes of one clip with the detections found in each.
#[derive(Debug, Clone)]
pub struct DetectionTimeline {
    frames: Vec<u64>,
    detections: Vec<Vec<FaceDetection>>,
    by_id: HashMap<String, (usize, usize)>,
}

impl DetectionTimeline {
    /// `frames` lists every keyframe, including ones without detections.
    pub fn new(frames: Vec<u64>, detections: Vec<FaceDetection>) -> Result<Self> {
        let mut frames = frames;
        frames.sort_unstable();
        frames.dedup();
        let mut per_frame: Vec<Vec<FaceDetection>> = vec![Vec::new(); frames.len()];
        let mut by_id = HashMap::new();
        let mut dim = None;
        for det in detections {
            det.validate()?;
            if *dim.get_or_insert(det.embedding.dim()) != det.embedding.dim() {
                return Err(Error::DimMismatch {
                    left: dim.unwrap(),
                    right: det.embedding.dim(),
                });
            }
            let pos = frames.binary_search(&det.frame_index).map_err(|_| {
                Error::invalid(format!(
                    "detection '{}' is on frame {} which is not a keyframe",
                    det.detection_id, det.frame_index
                ))
            })?;
            let idx = per_frame[pos].len();
            if by_id.insert(det.detection_id.clone(), (pos, idx)).is_some() {
                return Err(Error::invalid(format!("duplicate detection id '{}'", det.detection_id)));
            }
            per_frame[pos].push(det);
        }
        Ok(DetectionTimeline {
            frames,
            detections: per_frame,
            by_id,
        })
    }

    /// Timeline whose keyframes are exactly the frames that have detections.
    pub fn from_detections(detections: Vec<FaceDetection>) -> Result<Self> {
        let frames = detections.iter().map(|d| d.frame_index).collect();
        Self::new(frames, detections)
    }

    pub fn frames(&self) -> &[u64] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn detections_at(&self, pos: usize) -> &[FaceDetection] {
        &self.detections[pos]
    }

    pub fn all_detections(&self) -> impl Iterator<Item = &FaceDetection> {
        self.detections.iter().flatten()
    }

    fn locate(&self, id: &str) -> Option<(usize, usize)> {
        self.by_id.get(id).copied()
    }

    fn get(&self, at: (usize, usize)) -> &FaceDetection {
        &self.detections[at.0][at.1]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anchor {
    pub frame: u64,
    pub id: String,
    pub character: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationParams {
    pub k_ctx: usize,
    pub k_prompt: usize,
    pub alpha: f64,
    pub tau_assoc: f64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        PropagationParams {
            k_ctx: DEFAULT_K_CTX,
            k_prompt: DEFAULT_K_PROMPT,
            alpha: DEFAULT_ALPHA,
            tau_assoc: DEFAULT_TAU_ASSOC,
        }
    }
}

impl PropagationParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_ctx == 0 || self.k_prompt == 0 {
            return Err(Error::invalid("k_ctx and k_prompt must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !self.tau_assoc.is_finite() {
            return Err(Error::invalid("tau_assoc must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Anchor,
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn provenance(self) -> Provenance {
        match self {
            Direction::Forward => Provenance::Forward,
            Direction::Backward => Provenance::Backward,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub bbox: BBox,
    pub embedding: Embedding,
}

/// Context and prompt FIFO queues of one propagation walk.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    context: VecDeque<(u64, Region)>,
    prompt: VecDeque<(u64, Region, String)>,
    k_ctx: usize,
    k_prompt: usize,
}

impl MemoryBank {
    pub fn new(k_ctx: usize, k_prompt: usize) -> Self {
        MemoryBank {
            context: VecDeque::with_capacity(k_ctx),
            prompt: VecDeque::with_capacity(k_prompt),
            k_ctx,
            k_prompt,
        }
    }

    /// Pushes a region, evicting the oldest when full. Returns the evicted frame.
    pub fn push_context(&mut self, frame: u64, region: Region) -> Option<u64> {
        let evicted = if self.context.len() == self.k_ctx {
            self.context.pop_front().map(|(f, _)| f)
        } else {
            None
        };
        self.context.push_back((frame, region));
        evicted
    }

    /// Records a frame where recognition fired.
    pub fn push_prompt(&mut self, frame: u64, region: Region, character: &str) -> Option<u64> {
        let evicted = if self.prompt.len() == self.k_prompt {
            self.prompt.pop_front().map(|(f, _, _)| f)
        } else {
            None
        };
        self.prompt.push_back((frame, region, character.to_string()));
        evicted
    }

    pub fn context_len(&self) -> usize {
        self.context.len()
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt.len()
    }

    pub fn context_frames(&self) -> Vec<u64> {
        self.context.iter().map(|(f, _)| *f).collect()
    }

    pub fn prompt_frames(&self) -> Vec<u64> {
        self.prompt.iter().map(|(f, _, _)| *f).collect()
    }

    fn memory_mean(&self) -> Result<Embedding> {
        mean(self.context.iter().map(|(_, r)| &r.embedding))
    }

    fn last_bbox(&self) -> Option<BBox> {
        self.context.back().map(|(_, r)| r.bbox)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum StepEvent {
    ContextPush { frame: u64, evicted: Option<u64>, len_after: usize },
    PromptPush { frame: u64, evicted: Option<u64>, len_after: usize },
    Assign { frame: u64, id: String, score: f64 },
    Lost { frame: u64, best_score: Option<f64> },
}

/// One event of one walk, identified by character, anchor and direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLogEntry {
    pub character: String,
    pub anchor_frame: u64,
    pub direction: Direction,
    #[serde(flatten)]
    pub event: StepEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub detection_id: String,
    pub bbox: BBox,
    pub embedding: Embedding,
    pub provenance: Provenance,
    pub anchor_distance: usize,
    pub anchor_frame: u64,
    /// Association score; anchors carry 1.0.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub character_name: String,
    pub assignments: BTreeMap<u64, Assignment>,
    pub lost_frames: BTreeSet<u64>,
}

/// A detection claimed by two characters in one frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Conflict {
    pub frame: u64,
    pub detection_id: String,
    pub winner: String,
    pub winner_score: f64,
    pub loser: String,
    pub loser_score: f64,
}

#[derive(Debug, Clone)]
pub struct Propagation {
    pub tracks: Vec<Track>,
    pub log: Vec<StepLogEntry>,
    pub conflicts: Vec<Conflict>,
}

/// What one walk decided for one frame.
#[derive(Debug, Clone, Copy)]
struct Proposal {
    distance: usize,
    direction: Direction,
    anchor_pos: usize,
    /// (detection index within the frame, score)
    pick: Option<(usize, f64)>,
}

impl Proposal {
    /// Nearest anchor, then forward, then earlier anchor frame.
    fn rank(&self) -> (usize, u8, usize) {
        let dir = match self.direction {
            Direction::Forward => 0,
            Direction::Backward => 1,
        };
        (self.distance, dir, self.anchor_pos)
    }
}

struct CharacterPlan {
    name: String,
    /// (timeline position, detection index) of each anchor, by position.
    anchors: Vec<(usize, usize)>,
}

/// Resolved per-frame outcome of one character before conflict resolution.
#[derive(Debug, Clone, Copy)]
enum Outcome {
    Anchor(usize),
    Walk(Proposal),
}

pub fn propagate(
    timeline: &DetectionTimeline,
    anchors: &[Anchor],
    params: &PropagationParams,
) -> Result<Propagation> {
    params.validate()?;
    let plans = plan_characters(timeline, anchors)?;
    let anchored: HashSet<(usize, usize)> = plans.iter().flat_map(|p| p.anchors.iter().copied()).collect();

    let walked: Vec<(Vec<Outcome>, Vec<StepLogEntry>)> = plans
        .par_iter()
        .map(|plan| walk_character(timeline, plan, &anchored, params))
        .collect::<Result<_>>()?;

    // serial conflict pass over frames in ascending order
    let mut conflicts = Vec::new();
    let mut lost_by_conflict: HashSet<(usize, usize)> = HashSet::new();
    for pos in 0..timeline.len() {
        let mut claims: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        for (c, (outcomes, _)) in walked.iter().enumerate() {
            if let Outcome::Walk(Proposal { pick: Some((det, score)), .. }) = outcomes[pos] {
                claims.entry(det).or_default().push((c, score));
            }
        }
        for (det, claimants) in claims {
            if claimants.len() < 2 {
                continue;
            }
            let mut winner = claimants[0];
            for &cl in &claimants[1..] {
                if cl.1 > winner.1 {
                    winner = cl;
                }
            }
            for &cl in &claimants {
                if cl.0 == winner.0 {
                    continue;
                }
                lost_by_conflict.insert((cl.0, pos));
                conflicts.push(Conflict {
                    frame: timeline.frames[pos],
                    detection_id: timeline.detections[pos][det].detection_id.clone(),
                    winner: plans[winner.0].name.clone(),
                    winner_score: winner.1,
                    loser: plans[cl.0].name.clone(),
                    loser_score: cl.1,
                });
            }
        }
    }

    let mut tracks = Vec::with_capacity(plans.len());
    let mut log = Vec::new();
    for (c, (plan, (outcomes, walk_log))) in plans.iter().zip(walked).enumerate() {
        let mut track = Track {
            character_name: plan.name.clone(),
            assignments: BTreeMap::new(),
            lost_frames: BTreeSet::new(),
        };
        for (pos, outcome) in outcomes.iter().enumerate() {
            let frame = timeline.frames[pos];
            let assignment = match *outcome {
                Outcome::Anchor(det) => {
                    let d = &timeline.detections[pos][det];
                    Some(Assignment {
                        detection_id: d.detection_id.clone(),
                        bbox: d.bbox,
                        embedding: d.embedding.clone(),
                        provenance: Provenance::Anchor,
                        anchor_distance: 0,
                        anchor_frame: frame,
                        score: 1.0,
                    })
                }
                Outcome::Walk(p) => match p.pick {
                    Some((det, score)) if !lost_by_conflict.contains(&(c, pos)) => {
                        let d = &timeline.detections[pos][det];
                        Some(Assignment {
                            detection_id: d.detection_id.clone(),
                            bbox: d.bbox,
                            embedding: d.embedding.clone(),
                            provenance: p.direction.provenance(),
                            anchor_distance: p.distance,
                            anchor_frame: timeline.frames[p.anchor_pos],
                            score,
                        })
                    }
                    _ => None,
                },
            };
            match assignment {
                Some(a) => {
                    track.assignments.insert(frame, a);
                }
                None => {
                    track.lost_frames.insert(frame);
                }
            }
        }
        tracks.push(track);
        log.extend(walk_log);
    }
    Ok(Propagation { tracks, log, conflicts })
}

fn plan_characters(timeline: &DetectionTimeline, anchors: &[Anchor]) -> Result<Vec<CharacterPlan>> {
    let mut owner: HashMap<(usize, usize), &str> = HashMap::new();
    let mut plans: Vec<CharacterPlan> = Vec::new();
    for a in anchors {
        crate::query_bank::validate_name(&a.character)?;
        let at = timeline
            .locate(&a.id)
            .ok_or_else(|| Error::invariant(format!("anchor references missing detection '{}'", a.id)))?;
        if timeline.frames[at.0] != a.frame {
            return Err(Error::invariant(format!(
                "anchor '{}' names frame {} but the detection is on frame {}",
                a.id, a.frame, timeline.frames[at.0]
            )));
        }
        match owner.get(&at) {
            Some(&other) if other != a.character => {
                return Err(Error::invariant(format!(
                    "detection '{}' anchored to both '{}' and '{}'",
                    a.id, other, a.character
                )))
            }
            Some(_) => continue,
            None => {
                owner.insert(at, &a.character);
            }
        }
        match plans.iter_mut().find(|p| p.name == a.character) {
            Some(plan) => {
                if plan.anchors.iter().any(|&(pos, _)| pos == at.0) {
                    return Err(Error::invariant(format!(
                        "'{}' anchored to two detections on frame {}",
                        a.character, a.frame
                    )));
                }
                plan.anchors.push(at);
            }
            None => plans.push(CharacterPlan {
                name: a.character.clone(),
                anchors: vec![at],
            }),
        }
    }
    for plan in &mut plans {
        plan.anchors.sort_unstable();
    }
    // characters ordered by first anchor position, input order on ties
    plans.sort_by_key(|p| p.anchors[0].0);
    Ok(plans)
}

fn association_score(candidate: &FaceDetection, memory: &MemoryBank, alpha: f64) -> Result<f64> {
    let mem = memory.memory_mean()?;
    check_dims(&mem, &candidate.embedding)?;
    // a mean that cancels to zero carries no appearance evidence
    let sim = match cosine_similarity(&candidate.embedding, &mem) {
        Ok(s) => s,
        Err(Error::ZeroNorm(_)) => 0.0,
        Err(e) => return Err(e),
    };
    let overlap = memory.last_bbox().map_or(0.0, |b| iou(&candidate.bbox, &b));
    Ok(alpha * sim + (1.0 - alpha) * overlap)
}

fn walk_character(
    timeline: &DetectionTimeline,
    plan: &CharacterPlan,
    anchored: &HashSet<(usize, usize)>,
    params: &PropagationParams,
) -> Result<(Vec<Outcome>, Vec<StepLogEntry>)> {
    let own: HashMap<usize, usize> = plan.anchors.iter().copied().collect();
    let mut best: Vec<Option<Proposal>> = vec![None; timeline.len()];
    let mut log = Vec::new();

    for &(anchor_pos, anchor_det) in &plan.anchors {
        for direction in [Direction::Forward, Direction::Backward] {
            let anchor_frame = timeline.frames[anchor_pos];
            let mut entry = |event| StepLogEntry {
                character: plan.name.clone(),
                anchor_frame,
                direction,
                event,
            };
            let mut memory = MemoryBank::new(params.k_ctx, params.k_prompt);
            let seed = timeline.get((anchor_pos, anchor_det));
            let region = Region {
                bbox: seed.bbox,
                embedding: seed.embedding.clone(),
            };
            remember(&mut memory, anchor_frame, region, Some(&plan.name), &mut log, &mut entry);

            let steps: Box<dyn Iterator<Item = usize>> = match direction {
                Direction::Forward => Box::new(anchor_pos + 1..timeline.len()),
                Direction::Backward => Box::new((0..anchor_pos).rev()),
            };
            for pos in steps {
                let frame = timeline.frames[pos];
                let distance = pos.abs_diff(anchor_pos);
                let pick = if let Some(&det_idx) = own.get(&pos) {
                    // recognition fired again for this character: take it as given
                    let d = &timeline.detections[pos][det_idx];
                    let score = association_score(d, &memory, params.alpha)?;
                    log.push(entry(StepEvent::Assign { frame, id: d.detection_id.clone(), score }));
                    let region = Region { bbox: d.bbox, embedding: d.embedding.clone() };
                    remember(&mut memory, frame, region, Some(&plan.name), &mut log, &mut entry);
                    Some((det_idx, score))
                } else {
                    let mut top: Option<(usize, f64)> = None;
                    for (i, cand) in timeline.detections[pos].iter().enumerate() {
                        if anchored.contains(&(pos, i)) {
                            continue;
                        }
                        let s = association_score(cand, &memory, params.alpha)?;
                        if top.is_none_or(|(_, t)| s > t) {
                            top = Some((i, s));
                        }
                    }
                    match top {
                        Some((i, s)) if s >= params.tau_assoc => {
                            let d = &timeline.detections[pos][i];
                            log.push(entry(StepEvent::Assign { frame, id: d.detection_id.clone(), score: s }));
                            let region = Region { bbox: d.bbox, embedding: d.embedding.clone() };
                            remember(&mut memory, frame, region, None, &mut log, &mut entry);
                            Some((i, s))
                        }
                        _ => {
                            log.push(entry(StepEvent::Lost { frame, best_score: top.map(|t| t.1) }));
                            None
                        }
                    }
                };
                let proposal = Proposal { distance, direction, anchor_pos, pick };
                if best[pos].is_none_or(|b| proposal.rank() < b.rank()) {
                    best[pos] = Some(proposal);
                }
            }
        }
    }

    let outcomes = (0..timeline.len())
        .map(|pos| match own.get(&pos) {
            Some(&det) => Outcome::Anchor(det),
            // every frame is reached by at least one walk
            None => Outcome::Walk(best[pos].expect("frame covered by a walk")),
        })
        .collect();
    Ok((outcomes, log))
}

fn remember(
    memory: &mut MemoryBank,
    frame: u64,
    region: Region,
    recognised: Option<&str>,
    log: &mut Vec<StepLogEntry>,
    entry: &mut impl FnMut(StepEvent) -> StepLogEntry,
) {
    if let Some(name) = recognised {
        let evicted = memory.push_prompt(frame, region.clone(), name);
        log.push(entry(StepEvent::PromptPush { frame, evicted, len_after: memory.prompt_len() }));
    }
    let evicted = memory.push_context(frame, region);
    log.push(entry(StepEvent::ContextPush { frame, evicted, len_after: memory.context_len() }));
}

/// Track file rows: one per assigned frame plus one lost-frames row per track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrackRecord {
    Frame(FrameRecord),
    Lost(LostRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub character: String,
    pub frame: u64,
    pub bbox: BBox,
    pub provenance: Provenance,
    pub anchor_distance: usize,
    pub anchor_frame: u64,
    pub id: String,
    pub score: f64,
    pub vector: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LostRecord {
    pub character: String,
    pub lost_frames: Vec<u64>,
}

pub fn tracks_to_records(tracks: &[Track]) -> Vec<TrackRecord> {
    let mut rows = Vec::new();
    for t in tracks {
        for (&frame, a) in &t.assignments {
            rows.push(TrackRecord::Frame(FrameRecord {
                character: t.character_name.clone(),
                frame,
                bbox: a.bbox,
                provenance: a.provenance,
                anchor_distance: a.anchor_distance,
                anchor_frame: a.anchor_frame,
                id: a.detection_id.clone(),
                score: a.score,
                vector: a.embedding.clone(),
            }));
        }
        rows.push(TrackRecord::Lost(LostRecord {
            character: t.character_name.clone(),
            lost_frames: t.lost_frames.iter().copied().collect(),
        }));
    }
    rows
}

pub fn tracks_from_records(records: Vec<TrackRecord>) -> Result<Vec<Track>> {
    let mut tracks: Vec<Track> = Vec::new();
    for r in records {
        let name = match &r {
            TrackRecord::Frame(f) => &f.character,
            TrackRecord::Lost(l) => &l.character,
        };
        let idx = match tracks.iter().position(|t| &t.character_name == name) {
            Some(i) => i,
            None => {
                tracks.push(Track {
                    character_name: name.clone(),
                    assignments: BTreeMap::new(),
                    lost_frames: BTreeSet::new(),
                });
                tracks.len() - 1
            }
        };
        let track = &mut tracks[idx];
        match r {
            TrackRecord::Frame(f) => {
                let a = Assignment {
                    detection_id: f.id,
                    bbox: f.bbox,
                    embedding: f.vector,
                    provenance: f.provenance,
                    anchor_distance: f.anchor_distance,
                    anchor_frame: f.anchor_frame,
                    score: f.score,
                };
                if track.assignments.insert(f.frame, a).is_some() {
                    return Err(Error::invariant(format!("'{}' assigned twice on frame {}", name_of(track), f.frame)));
                }
            }
            TrackRecord::Lost(l) => track.lost_frames.extend(l.lost_frames),
        }
    }
    for t in &tracks {
        if let Some(f) = t.lost_frames.iter().find(|f| t.assignments.contains_key(f)) {
            return Err(Error::invariant(format!("'{}' frame {f} is both assigned and lost", t.character_name)));
        }
    }
    Ok(tracks)
}

fn name_of(t: &Track) -> &str {
    &t.character_name
}

pub fn save_tracks(tracks: &[Track], path: &Path) -> Result<()> {
    crate::io::write_jsonl(path, &tracks_to_records(tracks))
}

pub fn load_tracks(path: &Path) -> Result<Vec<Track>> {
    let rows = crate::io::read_jsonl::<TrackRecord>(path)?;
    tracks_from_records(rows.into_iter().map(|r| r.value).collect())
        .map_err(|e| Error::parse(path, 0, "character", e.to_string()))
}

pub fn load_anchors(path: &Path) -> Result<Vec<Anchor>> {
    Ok(crate::io::read_jsonl::<Anchor>(path)?.into_iter().map(|r| r.value).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::normalize;

    fn unit(v: &[f64]) -> Embedding {
        normalize(&Embedding::new(v.to_vec()).unwrap()).unwrap()
    }

    fn det(frame: u64, id: &str, bbox: [f64; 4], e: &Embedding) -> FaceDetection {
        FaceDetection::new(frame, bbox.into(), e.clone(), id).unwrap()
    }

    fn anchor(frame: u64, id: &str, c: &str) -> Anchor {
        Anchor { frame, id: id.into(), character: c.into() }
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 1.0, 1.0)), 0.0);
        assert!((iou(&a, &BBox::new(1.0, 1.0, 2.0, 2.0)) - 1.0 / 7.0).abs() < 1e-9);
        // touching edges do not overlap
        assert_eq!(iou(&a, &BBox::new(2.0, 0.0, 2.0, 2.0)), 0.0);
    }

    #[test]
    fn repeated_detection_propagates_forward() {
        let e = unit(&[1.0, 0.0, 0.0]);
        let dets: Vec<_> = (0..6).map(|f| det(f, &format!("d{f}"), [0.0, 0.0, 5.0, 5.0], &e)).collect();
        let tl = DetectionTimeline::from_detections(dets).unwrap();
        let out = propagate(&tl, &[anchor(0, "d0", "A")], &PropagationParams::default()).unwrap();
        let t = &out.tracks[0];
        assert!(t.lost_frames.is_empty());
        assert_eq!(t.assignments[&0].provenance, Provenance::Anchor);
        for f in 1..6u64 {
            let a = &t.assignments[&f];
            assert_eq!(a.provenance, Provenance::Forward);
            assert_eq!(a.anchor_distance, f as usize);
            assert_eq!(a.score, 1.0);
        }
    }

    #[test]
    fn middle_anchor_reaches_both_ends() {
        let e = unit(&[0.0, 1.0]);
        let dets: Vec<_> = (0..7).map(|f| det(f * 15, &format!("d{f}"), [f as f64, 0.0, 10.0, 10.0], &e)).collect();
        let tl = DetectionTimeline::from_detections(dets).unwrap();
        let out = propagate(&tl, &[anchor(45, "d3", "A")], &PropagationParams::default()).unwrap();
        let t = &out.tracks[0];
        for (i, f) in tl.frames().iter().enumerate() {
            let a = &t.assignments[f];
            let expected = match i.cmp(&3) {
                std::cmp::Ordering::Less => Provenance::Backward,
                std::cmp::Ordering::Equal => Provenance::Anchor,
                std::cmp::Ordering::Greater => Provenance::Forward,
            };
            assert_eq!(a.provenance, expected);
            assert!(a.anchor_distance <= 3);
        }
    }

    /// Two characters cross at frame 3; only one detection remains there.
    fn crossing() -> (DetectionTimeline, Vec<Anchor>, Embedding, Embedding) {
        let ea = unit(&[1.0, 0.0]);
        let eb = unit(&[0.8, 0.6]);
        let mut dets = Vec::new();
        for f in 0..6u64 {
            if f == 3 {
                dets.push(det(f, "x3", [0.0, 0.0, 10.0, 8.0], &ea));
                continue;
            }
            let (ba, bb) = if f < 3 {
                ([0.0, 0.0, 10.0, 10.0], [0.0, 2.0, 10.0, 8.0])
            } else {
                ([0.0, -1.0, 10.0, 8.0], [0.0, 1.0, 10.0, 8.0])
            };
            dets.push(det(f, &format!("a{f}"), ba, &ea));
            dets.push(det(f, &format!("b{f}"), bb, &eb));
        }
        let tl = DetectionTimeline::from_detections(dets).unwrap();
        (tl, vec![anchor(0, "a0", "A"), anchor(0, "b0", "B")], ea, eb)
    }

    #[test]
    fn conflict_goes_to_higher_score() {
        let (tl, anchors, ea, eb) = crossing();
        let out = propagate(&tl, &anchors, &PropagationParams::default()).unwrap();

        // replay the scoring rule for frame 3 by hand
        let x = BBox::new(0.0, 0.0, 10.0, 8.0);
        let score_a = 0.5 * 1.0 + 0.5 * iou(&x, &BBox::new(0.0, 0.0, 10.0, 10.0));
        let cos_b = ea.values()[0] * eb.values()[0] + ea.values()[1] * eb.values()[1];
        let score_b = 0.5 * cos_b + 0.5 * iou(&x, &BBox::new(0.0, 2.0, 10.0, 8.0));
        assert!((score_a - 0.9).abs() < 1e-12 && (score_b - 0.7).abs() < 1e-12);

        let a = &out.tracks[0];
        let b = &out.tracks[1];
        assert_eq!(a.character_name, "A");
        assert_eq!(a.assignments[&3].detection_id, "x3");
        assert!((a.assignments[&3].score - score_a).abs() < 1e-12);
        assert!(b.lost_frames.contains(&3));
        assert_eq!(out.conflicts.len(), 1);
        assert!((out.conflicts[0].loser_score - score_b).abs() < 1e-12);
        // B keeps its memory and re-acquires after the crossing
        assert_eq!(b.assignments[&4].detection_id, "b4");
    }

    #[test]
    fn fifo_bound_and_oldest_first_eviction() {
        let e = unit(&[1.0, 1.0]);
        let dets: Vec<_> = (0..20).map(|f| det(f, &format!("d{f}"), [0.0, 0.0, 3.0, 3.0], &e)).collect();
        let tl = DetectionTimeline::from_detections(dets).unwrap();
        let params = PropagationParams { k_ctx: 3, ..Default::default() };
        let out = propagate(&tl, &[anchor(0, "d0", "A")], &params).unwrap();
        let mut queue = VecDeque::new();
        for entry in out.log.iter().filter(|e| e.direction == Direction::Forward) {
            if let StepEvent::ContextPush { frame, evicted, len_after } = entry.event {
                let expected = if queue.len() == 3 { queue.pop_front() } else { None };
                queue.push_back(frame);
                assert_eq!(evicted, expected);
                assert_eq!(len_after, queue.len());
                assert!(len_after <= 3);
            }
        }
    }

    #[test]
    fn below_threshold_frame_is_lost_and_memory_kept() {
        let a = unit(&[1.0, 0.0]);
        let far = unit(&[-1.0, 0.1]);
        let dets = vec![
            det(0, "d0", [0.0, 0.0, 5.0, 5.0], &a),
            det(1, "d1", [50.0, 50.0, 5.0, 5.0], &far),
            det(2, "d2", [0.0, 0.0, 5.0, 5.0], &a),
        ];
        let tl = DetectionTimeline::from_detections(dets).unwrap();
        let out = propagate(&tl, &[anchor(0, "d0", "A")], &PropagationParams::default()).unwrap();
        let t = &out.tracks[0];
        assert_eq!(t.lost_frames.iter().copied().collect::<Vec<_>>(), vec![1]);
        assert_eq!(t.assignments[&2].detection_id, "d2");
        assert_eq!(t.assignments[&2].anchor_distance, 2);
    }

    #[test]
    fn frames_without_detections_are_lost() {
        let e = unit(&[1.0]);
        let tl = DetectionTimeline::new(vec![0, 15, 30], vec![det(0, "d0", [0.0, 0.0, 1.0, 1.0], &e)]).unwrap();
        let out = propagate(&tl, &[anchor(0, "d0", "A")], &PropagationParams::default()).unwrap();
        assert_eq!(out.tracks[0].lost_frames.len(), 2);
    }

    #[test]
    fn nearest_anchor_wins() {
        let e = unit(&[1.0, 0.0]);
        let dets: Vec<_> = (0..9).map(|f| det(f, &format!("d{f}"), [0.0, 0.0, 4.0, 4.0], &e)).collect();
        let tl = DetectionTimeline::from_detections(dets).unwrap();
        let out = propagate(&tl, &[anchor(0, "d0", "A"), anchor(6, "d6", "A")], &PropagationParams::default()).unwrap();
        let t = &out.tracks[0];
        assert_eq!(t.assignments[&2].anchor_frame, 0);
        // equidistant frame 3: forward from 0 beats backward from 6
        assert_eq!(t.assignments[&3].anchor_frame, 0);
        assert_eq!(t.assignments[&3].provenance, Provenance::Forward);
        assert_eq!(t.assignments[&4].anchor_frame, 6);
        assert_eq!(t.assignments[&4].provenance, Provenance::Backward);
        assert_eq!(t.assignments[&8].anchor_frame, 6);
        assert_eq!(t.assignments[&6].provenance, Provenance::Anchor);
    }

    #[test]
    fn anchor_errors() {
        let (tl, _, _, _) = crossing();
        let params = PropagationParams::default();
        assert!(matches!(propagate(&tl, &[anchor(0, "nope", "A")], &params), Err(Error::Invariant(_))));
        let clash = [anchor(0, "a0", "A"), anchor(0, "a0", "B")];
        assert!(propagate(&tl, &clash, &params).is_err());
        let twice = [anchor(0, "a0", "A"), anchor(0, "b0", "A")];
        assert!(propagate(&tl, &twice, &params).is_err());
        assert!(propagate(&tl, &[anchor(1, "a0", "A")], &params).is_err());
    }

    #[test]
    fn deterministic_and_round_trips() {
        let (tl, anchors, _, _) = crossing();
        let p = PropagationParams::default();
        let a = propagate(&tl, &anchors, &p).unwrap();
        let b = propagate(&tl, &anchors, &p).unwrap();
        assert_eq!(a.tracks, b.tracks);
        assert_eq!(a.log, b.log);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tracks.jsonl");
        save_tracks(&a.tracks, &path).unwrap();
        assert_eq!(load_tracks(&path).unwrap(), a.tracks);
    }

    #[test]
    fn memory_bank_queues() {
        let r = Region { bbox: BBox::new(0.0, 0.0, 1.0, 1.0), embedding: unit(&[1.0]) };
        let mut m = MemoryBank::new(2, 1);
        assert_eq!(m.push_context(1, r.clone()), None);
        assert_eq!(m.push_context(2, r.clone()), None);
        assert_eq!(m.push_context(3, r.clone()), Some(1));
        assert_eq!(m.context_frames(), vec![2, 3]);
        assert_eq!(m.push_prompt(1, r.clone(), "A"), None);
        assert_eq!(m.push_prompt(5, r, "A"), Some(1));
        assert_eq!(m.prompt_frames(), vec![5]);
    }
}
