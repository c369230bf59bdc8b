//! Seeded synthetic data: planted recognition sets, a propagation fixture
//! and a small movie for end-to-end runs. Same seed, same bytes.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embedding::{normalize, Embedding};
use crate::error::Result;
use crate::pipeline::{clip_id, GeneratedCaption, MovieInputs, MovieManifest};
use crate::prompt::{PromptTemplateSet, TextKind, TimedText};
use crate::query_bank::{objective, BankEntry, PortraitRecord, PortraitSet, QueryBank, DEFAULT_EPSILON};
use crate::recognition::{BBox, DetectionRecord, FaceDetection, Label};
use crate::redundancy::WordVectorLookup;
use crate::track::{Anchor, DetectionTimeline};

pub const NAMES: [&str; 6] = ["Ryan", "Natalie", "Mara", "Theo", "Iris", "Jonah"];

fn axis(dim: usize, j: usize) -> Embedding {
    let mut v = vec![0.0; dim];
    v[j] = 1.0;
    Embedding::new(v).expect("axis is finite")
}

/// Random unit vector with zeros on the first `skip` coordinates.
fn unit_beyond(rng: &mut ChaCha8Rng, dim: usize, skip: usize) -> Vec<f64> {
    loop {
        let mut v = vec![0.0; dim];
        for x in &mut v[skip..] {
            *x = rng.sample(StandardNormal);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Unit vector at cosine `c` from axis `j`, its remainder orthogonal to the first `queries` axes.
fn near_axis(rng: &mut ChaCha8Rng, dim: usize, queries: usize, j: usize, c: f64) -> Embedding {
    let r = unit_beyond(rng, dim, queries);
    let s = (1.0 - c * c).max(0.0).sqrt();
    let mut v: Vec<f64> = r.into_iter().map(|x| x * s).collect();
    v[j] = c;
    normalize(&Embedding::new(v).expect("finite")).expect("non-zero")
}

/// Unit vector whose cosine with each of the first `queries` axes stays below 0.05.
fn far_from_axes(rng: &mut ChaCha8Rng, dim: usize, queries: usize) -> Embedding {
    let coeffs: Vec<f64> = (0..queries).map(|_| rng.random_range(-0.05..0.05)).collect();
    let rest = (1.0 - coeffs.iter().map(|a| a * a).sum::<f64>()).sqrt();
    let mut v: Vec<f64> = unit_beyond(rng, dim, queries).into_iter().map(|x| x * rest).collect();
    v[..queries].copy_from_slice(&coeffs);
    normalize(&Embedding::new(v).expect("finite")).expect("non-zero")
}

/// Portraits for `characters` people, each clustered around its own axis.
pub fn planted_portraits(seed: u64, characters: usize, per_character: usize, dim: usize) -> Vec<PortraitSet> {
    assert!(characters <= NAMES.len() && characters < dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..characters)
        .map(|j| {
            let embeddings = (0..per_character)
                .map(|_| {
                    let c = rng.random_range(0.85..0.99);
                    near_axis(&mut rng, dim, characters, j, c)
                })
                .collect();
            PortraitSet::from_embeddings(NAMES[j], embeddings).expect("valid planted set")
        })
        .collect()
}

/// Faces with ground truth against an axis-aligned bank. Character faces sit
/// at squared distance below 0.6 from their own query; background faces sit
/// beyond 1.8 from every query. Each face is alone on its frame.
#[derive(Debug, Clone)]
pub struct PlantedRecognition {
    pub bank: QueryBank,
    pub faces: Vec<FaceDetection>,
    pub truth: Vec<Label>,
}

pub fn planted_recognition(seed: u64, characters: usize, per_character: usize, background: usize, dim: usize) -> PlantedRecognition {
    let portraits = planted_portraits(seed ^ 0xA5A5, characters, 4, dim);
    let queries: Vec<Embedding> = (0..characters).map(|j| axis(dim, j)).collect();
    let bank = QueryBank {
        movie_id: format!("planted-{seed}"),
        dim,
        epsilon: DEFAULT_EPSILON,
        objective_value: objective(&queries, &portraits, DEFAULT_EPSILON).expect("planted objective"),
        entries: queries
            .iter()
            .enumerate()
            .map(|(j, q)| BankEntry {
                name: NAMES[j].to_string(),
                query: q.clone(),
            })
            .collect(),
        notes: vec![],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut faces = Vec::new();
    let mut truth = Vec::new();
    let bbox = BBox::new(0.0, 0.0, 10.0, 10.0);
    for (j, name) in NAMES.iter().enumerate().take(characters) {
        for _ in 0..per_character {
            // squared distance 2 − 2c lands in (0.02, 0.56)
            let c = rng.random_range(0.72..0.99);
            let e = near_axis(&mut rng, dim, characters, j, c);
            let frame = faces.len() as u64;
            faces.push(FaceDetection::new(frame, bbox, e, format!("f{frame}")).expect("valid face"));
            truth.push(Label::Character(name.to_string()));
        }
    }
    for _ in 0..background {
        let e = far_from_axes(&mut rng, dim, characters);
        let frame = faces.len() as u64;
        faces.push(FaceDetection::new(frame, bbox, e, format!("f{frame}")).expect("valid face"));
        truth.push(Label::Unknown);
    }
    PlantedRecognition { bank, faces, truth }
}

/// Three characters over twelve keyframes (frames 0, 15, …, 165).
///
/// * Ryan and Natalie are anchored on the first keyframe. On keyframe 6 a
///   single face sits where both tracks lead; both walks claim it and Ryan
///   wins on score. Natalie is lost there and recovers afterwards.
/// * Mara is anchored on the first and last keyframes, is absent from
///   keyframe 8, and is reached from both sides.
#[derive(Debug, Clone)]
pub struct PropagationFixture {
    pub timeline: DetectionTimeline,
    pub anchors: Vec<Anchor>,
    pub conflict_frame: u64,
    pub conflict_winner: String,
    pub conflict_loser: String,
    pub missing_frame: u64,
}

pub const FIXTURE_STRIDE: u64 = 15;

pub fn propagation_fixture() -> PropagationFixture {
    let ryan = Embedding::new(vec![1.0, 0.0, 0.0, 0.0]).expect("finite");
    let natalie = Embedding::new(vec![0.8, 0.6, 0.0, 0.0]).expect("finite");
    let mara = Embedding::new(vec![0.0, 0.0, 1.0, 0.0]).expect("finite");
    let frames: Vec<u64> = (0..12).map(|i| i * FIXTURE_STRIDE).collect();
    let mut dets = Vec::new();
    let mut push = |frame: u64, id: String, b: [f64; 4], e: &Embedding| {
        dets.push(FaceDetection::new(frame, BBox::from(b), e.clone(), id).expect("valid fixture face"));
    };
    for (i, &f) in frames.iter().enumerate() {
        match i {
            0..=5 => {
                push(f, format!("r{i}"), [0.0, 0.0, 10.0, 10.0], &ryan);
                push(f, format!("n{i}"), [0.0, 2.0, 10.0, 8.0], &natalie);
            }
            6 => push(f, format!("x{i}"), [0.0, 0.0, 10.0, 8.0], &ryan),
            _ => {
                push(f, format!("r{i}"), [0.0, -1.0, 10.0, 8.0], &ryan);
                push(f, format!("n{i}"), [0.0, 1.0, 10.0, 8.0], &natalie);
            }
        }
        if i != 8 {
            push(f, format!("m{i}"), [100.0 + i as f64, 0.0, 10.0, 10.0], &mara);
        }
    }
    let anchor = |frame: u64, id: &str, c: &str| Anchor {
        frame,
        id: id.to_string(),
        character: c.to_string(),
    };
    let last = frames[11];
    PropagationFixture {
        timeline: DetectionTimeline::new(frames.clone(), dets).expect("valid fixture timeline"),
        anchors: vec![
            anchor(0, "r0", "Ryan"),
            anchor(0, "n0", "Natalie"),
            anchor(0, "m0", "Mara"),
            anchor(last, "m11", "Mara"),
        ],
        conflict_frame: frames[6],
        conflict_winner: "Ryan".into(),
        conflict_loser: "Natalie".into(),
        missing_frame: frames[8],
    }
}

/// Every input of a small movie, ready to write to disk or run in memory.
#[derive(Debug, Clone)]
pub struct MovieFixture {
    pub manifest: MovieManifest,
    pub portraits: Vec<PortraitRecord>,
    pub subtitles: Vec<TimedText>,
    pub ads: Vec<TimedText>,
    pub detections: Vec<DetectionRecord>,
    pub templates: PromptTemplateSet,
    pub word_vectors: Vec<(String, Embedding)>,
    pub stopwords: Vec<String>,
    pub generated: Vec<GeneratedCaption>,
}

const MOVIE_DIM: usize = 32;
const WORD_DIM: usize = 16;

const SUBTITLES: [(f64, f64, &str); 10] = [
    (0.0, 6.0, "Where are you headed?"),
    (5.5, 9.0, "Somewhere far from here."),
    (14.0, 20.0, "Is she coming?"),
    (27.0, 28.0, "Wait."),
    (28.5, 33.0, "Did you hear that?"),
    (40.0, 41.5, "Sit down."),
    (41.3, 47.0, "I have something for you."),
    (58.0, 64.0, "Read it later."),
    (72.0, 80.0, "You came back."),
    (88.5, 89.5, "Finally."),
];

const ADS: [(f64, f64, &str); 6] = [
    (9.5, 12.5, "Ryan boards the plane."),
    (21.0, 25.0, "Natalie waits outside the gate."),
    (34.0, 38.0, "The door slams shut."),
    (48.0, 53.0, "Mara hands Ryan the letter."),
    (65.0, 70.0, "Rain streaks across the window."),
    (81.0, 86.0, "Natalie and Mara embrace."),
];

/// (start_s, end_s, characters on screen, background face present)
const SCENES: [(f64, f64, &[usize], bool); 6] = [
    (0.0, 14.0, &[0], false),
    (14.0, 27.0, &[0], false),
    (27.0, 40.0, &[0, 1], false),
    (40.0, 58.0, &[2, 0, 1], false),
    (58.0, 72.0, &[], true),
    (72.0, 90.0, &[1, 2], true),
];

const GENERATED: [&str; 6] = [
    "Ryan boards the plane quietly.",
    "Natalie waits by the gate.",
    "A door slams.",
    "Mara gives Ryan a letter.",
    "Rain falls on the window.",
    "Natalie hugs Mara.",
];

const STOPWORDS: [&str; 9] = ["the", "a", "and", "of", "at", "to", "in", "on", "by"];

pub fn synthetic_movie(seed: u64) -> MovieFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let movie_id = "synthetic".to_string();
    let (duration_s, fps, characters) = (90.0, 24.0, 3);

    let mut portraits = Vec::new();
    for (j, name) in NAMES.iter().enumerate().take(characters) {
        for p in 0..5 {
            let c = rng.random_range(0.8..0.97);
            portraits.push(PortraitRecord {
                character: name.to_string(),
                id: format!("{}-{p}", name.to_lowercase()),
                vector: near_axis(&mut rng, MOVIE_DIM, characters, j, c),
            });
        }
    }

    let timed = |rows: &[(f64, f64, &str)], kind| {
        rows.iter()
            .map(|&(s, e, t)| TimedText::new(s, e, t, kind).expect("valid fixture text"))
            .collect::<Vec<_>>()
    };
    let subtitles = timed(&SUBTITLES, TextKind::Subtitle);
    let ads = timed(&ADS, TextKind::Ad);

    // faces exist on the keyframes a default-config run samples
    let gaps = crate::segment::find_gaps(&subtitles, duration_s, crate::segment::DEFAULT_MIN_GAP_S).expect("fixture gaps");
    let keyframes: Vec<u64> = gaps
        .iter()
        .flat_map(|&(s, e)| crate::segment::keyframe_indices(s, e, fps, crate::segment::DEFAULT_STRIDE).expect("fixture keyframes"))
        .collect();
    let mut detections = Vec::new();
    for frame in keyframes {
        let t = frame as f64 / fps;
        let k = frame / crate::segment::DEFAULT_STRIDE;
        let Some(&(_, _, cast, background)) = SCENES.iter().find(|s| t >= s.0 && t < s.1) else {
            continue;
        };
        let drift = 0.5 * k as f64;
        for (slot, &j) in cast.iter().enumerate() {
            // a quarter of faces are too far from the bank to recognise directly
            let c = if rng.random_bool(0.25) {
                rng.random_range(0.25..0.33)
            } else {
                rng.random_range(0.6..0.95)
            };
            detections.push(DetectionRecord {
                frame,
                bbox: BBox::new(20.0 + 120.0 * slot as f64 + drift, 40.0, 80.0, 100.0),
                id: format!("d{frame}-{slot}"),
                vector: near_axis(&mut rng, MOVIE_DIM, characters, j, c),
                label: None,
            });
        }
        if background {
            detections.push(DetectionRecord {
                frame,
                bbox: BBox::new(400.0, 60.0, 60.0, 80.0),
                id: format!("d{frame}-bg"),
                vector: far_from_axes(&mut rng, MOVIE_DIM, characters),
                label: None,
            });
        }
    }

    let templates = PromptTemplateSet {
        base: "<soft> Describe the scene in one sentence.".into(),
        character: "{name} appears at <region>. ".into(),
        multi_prefix: "Several characters are on screen. ".into(),
        soft_slots: vec!["<soft>".into()],
    };

    let mut vocab: Vec<String> = ADS
        .iter()
        .map(|a| a.2)
        .chain(GENERATED)
        .flat_map(crate::redundancy::tokenize)
        .collect();
    vocab.sort();
    vocab.dedup();
    let word_vectors = vocab
        .into_iter()
        .map(|w| {
            let v = unit_beyond(&mut rng, WORD_DIM, 0);
            (w, Embedding::new(v).expect("finite"))
        })
        .collect();

    let generated = GENERATED
        .iter()
        .enumerate()
        .map(|(i, g)| GeneratedCaption {
            id: clip_id(&movie_id, i),
            generated: g.to_string(),
        })
        .collect();

    MovieFixture {
        manifest: MovieManifest {
            movie_id,
            duration_s,
            fps,
            portraits: "portraits.jsonl".into(),
            subtitles: "subtitles.srt".into(),
            ads: "ads.jsonl".into(),
            detections: "detections.jsonl".into(),
            templates: "templates.json".into(),
            word_vectors: Some("word_vectors.jsonl".into()),
            stopwords: Some("stopwords.txt".into()),
        },
        portraits,
        subtitles,
        ads,
        detections,
        templates,
        word_vectors,
        stopwords: STOPWORDS.iter().map(|s| s.to_string()).collect(),
        generated,
    }
}

#[derive(serde::Serialize)]
struct WordRow<'a> {
    word: &'a str,
    vector: &'a Embedding,
}

impl MovieFixture {
    pub fn inputs(&self) -> MovieInputs {
        MovieInputs {
            movie_id: self.manifest.movie_id.clone(),
            duration_s: self.manifest.duration_s,
            fps: self.manifest.fps,
            portraits: crate::query_bank::portrait_sets_from_records(self.portraits.clone()).expect("valid portraits"),
            subtitles: self.subtitles.clone(),
            ads: self.ads.clone(),
            detections: self
                .detections
                .iter()
                .map(|d| FaceDetection::new(d.frame, d.bbox, d.vector.clone(), d.id.clone()).expect("valid face"))
                .collect(),
            templates: self.templates.clone(),
            lookup: Some(
                WordVectorLookup::new(
                    self.word_vectors.iter().cloned().collect(),
                    self.stopwords.iter().cloned().collect(),
                )
                .expect("valid vocabulary"),
            ),
        }
    }

    /// Writes the manifest (`movie.json`) and every file it names into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        use crate::io::{write_json, write_jsonl, write_string};
        std::fs::create_dir_all(dir).map_err(|source| crate::Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let m = &self.manifest;
        write_json(&dir.join("movie.json"), m)?;
        write_jsonl(&dir.join(&m.portraits), &self.portraits)?;
        write_string(&dir.join(&m.subtitles), &crate::segment::to_srt(&self.subtitles))?;
        write_jsonl(&dir.join(&m.ads), &self.ads)?;
        write_jsonl(&dir.join(&m.detections), &self.detections)?;
        write_json(&dir.join(&m.templates), &self.templates)?;
        let rows: Vec<WordRow> = self
            .word_vectors
            .iter()
            .map(|(word, vector)| WordRow { word, vector })
            .collect();
        if let Some(p) = &m.word_vectors {
            write_jsonl(&dir.join(p), &rows)?;
        }
        if let Some(p) = &m.stopwords {
            write_string(&dir.join(p), &(self.stopwords.join("\n") + "\n"))?;
        }
        write_jsonl(&dir.join("generated.jsonl"), &self.generated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::l2_distance_sq;
    use crate::track::{propagate, PropagationParams};

    #[test]
    fn planted_distances_respect_margins() {
        let p = planted_recognition(3, 3, 20, 20, 32);
        for (face, truth) in p.faces.iter().zip(&p.truth) {
            for entry in &p.bank.entries {
                let d = l2_distance_sq(&face.embedding, &entry.query).unwrap();
                if truth.name() == Some(entry.name.as_str()) {
                    assert!(d < 0.6, "{d}");
                } else {
                    assert!(d > 1.8, "{d}");
                }
            }
        }
    }

    #[test]
    fn fixture_conflict_as_documented() {
        let f = propagation_fixture();
        let out = propagate(&f.timeline, &f.anchors, &PropagationParams::default()).unwrap();
        assert_eq!(out.conflicts.len(), 1);
        let c = &out.conflicts[0];
        assert_eq!((c.frame, c.winner.as_str(), c.loser.as_str()), (f.conflict_frame, "Ryan", "Natalie"));
        let mara = out.tracks.iter().find(|t| t.character_name == "Mara").unwrap();
        assert_eq!(mara.lost_frames.iter().copied().collect::<Vec<_>>(), vec![f.missing_frame]);
        let natalie = out.tracks.iter().find(|t| t.character_name == "Natalie").unwrap();
        assert!(natalie.lost_frames.contains(&f.conflict_frame));
        assert_eq!(natalie.assignments.len(), 11);
    }

    #[test]
    fn movie_is_seed_stable() {
        let a = synthetic_movie(0);
        let b = synthetic_movie(0);
        assert_eq!(crate::io::to_jsonl(&a.detections), crate::io::to_jsonl(&b.detections));
        assert_ne!(crate::io::to_jsonl(&a.detections), crate::io::to_jsonl(&synthetic_movie(1).detections));
    }
}
