//! End-to-end run over one movie: bank → segment → recognise → propagate →
//! prompt → optional redundancy score. Clips run in parallel; output order
//! and bytes do not depend on the thread count.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::prompt::{build_text_prior, f_dit, load_templates, names_in_appearance_order, PromptTemplateSet, TextKind, TimedText};
use crate::query_bank::{build_bank, load_portraits, PortraitSet, QueryBank};
use crate::recognition::{load_detections, recognize_all, FaceDetection, RecognitionRecord};
use crate::redundancy::{load_lookup, sentence_redundancy, WordVectorLookup};
use crate::segment::{build_clips, find_gaps, keyframe_indices, load_subtitles, tag_ad_type, target_ad, AdType, ClipSpec};
use crate::track::{propagate, tracks_to_records, Anchor, Conflict, DetectionTimeline, TrackRecord};

/// Input file list for one movie; relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovieManifest {
    pub movie_id: String,
    pub duration_s: f64,
    pub fps: f64,
    pub portraits: PathBuf,
    /// `.srt` or JSONL timed text.
    pub subtitles: PathBuf,
    pub ads: PathBuf,
    pub detections: PathBuf,
    pub templates: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_vectors: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopwords: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct MovieInputs {
    pub movie_id: String,
    pub duration_s: f64,
    pub fps: f64,
    pub portraits: Vec<PortraitSet>,
    pub subtitles: Vec<TimedText>,
    pub ads: Vec<TimedText>,
    pub detections: Vec<FaceDetection>,
    pub templates: PromptTemplateSet,
    pub lookup: Option<WordVectorLookup>,
}

fn check_kind(path: &Path, records: &[TimedText], kind: TextKind) -> Result<()> {
    match records.iter().position(|t| t.kind != kind) {
        Some(i) => Err(Error::parse(
            path,
            i + 1,
            "kind",
            format!("expected only {kind:?} records"),
        )),
        None => Ok(()),
    }
}

impl MovieInputs {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let m: MovieManifest = crate::io::read_json(manifest_path)?;
        let at = |p: &Path| crate::io::sibling(manifest_path, p);
        if !(m.fps > 0.0 && m.fps.is_finite()) {
            return Err(Error::parse(manifest_path, 0, "fps", format!("must be positive, got {}", m.fps)));
        }
        if !(m.duration_s > 0.0 && m.duration_s.is_finite()) {
            return Err(Error::parse(manifest_path, 0, "duration_s", format!("must be positive, got {}", m.duration_s)));
        }
        let subtitles_path = at(&m.subtitles);
        let subtitles = load_subtitles(&subtitles_path)?;
        check_kind(&subtitles_path, &subtitles, TextKind::Subtitle)?;
        let ads_path = at(&m.ads);
        let ads = crate::prompt::load_timed_text(&ads_path)?;
        check_kind(&ads_path, &ads, TextKind::Ad)?;
        let detections = load_detections(&at(&m.detections))?.into_iter().map(|(d, _)| d).collect();
        let lookup = match &m.word_vectors {
            Some(v) => Some(load_lookup(&at(v), m.stopwords.as_deref().map(&at).as_deref())?),
            None => None,
        };
        Ok(MovieInputs {
            movie_id: m.movie_id,
            duration_s: m.duration_s,
            fps: m.fps,
            portraits: load_portraits(&at(&m.portraits))?,
            subtitles,
            ads,
            detections,
            templates: load_templates(&at(&m.templates))?,
            lookup,
        })
    }
}

/// A generated caption to score, keyed by clip id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedCaption {
    pub id: String,
    pub generated: String,
}

pub fn load_generated(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for row in crate::io::read_jsonl::<GeneratedCaption>(path)? {
        if out.insert(row.value.id.clone(), row.value.generated).is_some() {
            return Err(Error::parse(path, row.line, "id", format!("duplicate caption id '{}'", row.value.id)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipScore {
    pub score: f64,
    pub valid_count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClipResult {
    pub clip_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub keyframes: Vec<u64>,
    pub recognitions: Vec<RecognitionRecord>,
    pub characters: Vec<String>,
    pub tracks: Vec<TrackRecord>,
    pub conflicts: Vec<Conflict>,
    pub prompt: String,
    pub text_prior: String,
    pub target_ad: Option<String>,
    pub ad_type: Option<AdType>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub redundancy: Option<ClipScore>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub bank: QueryBank,
    pub clips: Vec<ClipSpec>,
    pub results: Vec<ClipResult>,
}

pub fn clip_id(movie_id: &str, index: usize) -> String {
    format!("{movie_id}#{index}")
}

pub fn run(inputs: &MovieInputs, config: &PipelineConfig, generated: Option<&BTreeMap<String, String>>) -> Result<PipelineOutput> {
    config.validate()?;
    if generated.is_some() && inputs.lookup.is_none() {
        return Err(Error::invalid("scoring generated captions needs word vectors in the manifest"));
    }
    let bank = build_bank(&inputs.movie_id, &inputs.portraits, &config.bank_options())?;

    let mut subtitles = inputs.subtitles.clone();
    subtitles.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    let gaps = find_gaps(&subtitles, inputs.duration_s, config.min_gap_s)?;
    let history: Vec<TimedText> = subtitles.iter().chain(&inputs.ads).cloned().collect();
    let mut clips = build_clips(&inputs.movie_id, &gaps, &history, config.n_ads);

    let results = clips
        .par_iter()
        .enumerate()
        .map(|(i, clip)| run_clip(inputs, config, &bank, &history, clip, clip_id(&inputs.movie_id, i), generated))
        .collect::<Result<Vec<_>>>()?;
    for (clip, r) in clips.iter_mut().zip(&results) {
        clip.ad_type = r.ad_type;
    }
    Ok(PipelineOutput { bank, clips, results })
}

fn run_clip(
    inputs: &MovieInputs,
    config: &PipelineConfig,
    bank: &QueryBank,
    history: &[TimedText],
    clip: &ClipSpec,
    id: String,
    generated: Option<&BTreeMap<String, String>>,
) -> Result<ClipResult> {
    let keyframes = keyframe_indices(clip.start_s, clip.end_s, inputs.fps, config.stride)?;
    let wanted: HashSet<u64> = keyframes.iter().copied().collect();
    let faces: Vec<FaceDetection> = inputs
        .detections
        .iter()
        .filter(|d| wanted.contains(&d.frame_index))
        .cloned()
        .collect();
    let recognized = recognize_all(&faces, bank, config.u)?;
    let anchors: Vec<Anchor> = recognized
        .iter()
        .filter_map(|r| {
            r.label.name().map(|n| Anchor {
                frame: r.frame_index,
                id: r.detection_id.clone(),
                character: n.to_string(),
            })
        })
        .collect();
    let timeline = DetectionTimeline::new(keyframes.clone(), faces)?;
    let propagation = propagate(&timeline, &anchors, &config.propagation_params())?;

    let labels: Vec<(u64, crate::recognition::BBox, crate::recognition::Label)> = propagation
        .tracks
        .iter()
        .flat_map(|t| {
            t.assignments
                .iter()
                .map(|(&f, a)| (f, a.bbox, crate::recognition::Label::Character(t.character_name.clone())))
        })
        .collect();
    let characters = names_in_appearance_order(labels.iter().map(|(f, b, l)| (*f, *b, l)));
    let prompt = f_dit(&characters, &inputs.templates)?;
    let seen: HashSet<String> = characters.iter().cloned().collect();

    let target = target_ad(&inputs.ads, clip.start_s, clip.end_s);
    let ad_type = match target {
        Some(ad) => tag_ad_type(&ad.text, bank, &seen)?,
        None => None,
    };
    let redundancy = match (generated.and_then(|g| g.get(&id)), target, &inputs.lookup) {
        (Some(text), Some(ad), Some(lookup)) => {
            let r = sentence_redundancy(text, &ad.text, lookup, config.theta)?;
            Some(ClipScore {
                score: r.score,
                valid_count: r.valid_count,
            })
        }
        _ => None,
    };

    Ok(ClipResult {
        clip_id: id,
        start_s: clip.start_s,
        end_s: clip.end_s,
        keyframes,
        recognitions: recognized.iter().map(RecognitionRecord::from).collect(),
        characters,
        tracks: tracks_to_records(&propagation.tracks),
        conflicts: propagation.conflicts,
        prompt: prompt.text,
        text_prior: build_text_prior(history, clip.start_s, config.n_ads),
        target_ad: target.map(|t| t.text.clone()),
        ad_type,
        redundancy,
    })
}

pub const BANK_FILE: &str = "bank.json";
pub const CLIPS_FILE: &str = "clips.jsonl";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const CONFIG_FILE: &str = "config.toml";

/// Writes the bank, clip specs, per-clip results and the resolved config into `dir`.
pub fn write_outputs(dir: &Path, output: &PipelineOutput, config: &PipelineConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    crate::query_bank::save_bank(&output.bank, &dir.join(BANK_FILE))?;
    crate::segment::save_clips(&output.clips, &dir.join(CLIPS_FILE))?;
    crate::io::write_jsonl(&dir.join(RESULTS_FILE), &output.results)?;
    crate::io::write_string(&dir.join(CONFIG_FILE), &config.to_text())
}
