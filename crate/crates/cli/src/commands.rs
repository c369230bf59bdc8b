use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use charad_core::io::{write_json, write_jsonl, write_string};
use charad_core::pipeline::{self, MovieInputs};
use charad_core::prompt::{build_text_prior, f_dit, load_templates, load_timed_text, SlotPosition};
use charad_core::query_bank::{build_bank_detailed, load_bank, load_portraits, save_bank, Selection};
use charad_core::recognition::{load_detections, recognize_all, sweep_threshold, sweep_to_csv, DetectionRecord, RecognitionRecord, INFINITE_THRESHOLD};
use charad_core::redundancy::{load_lookup, score_batch, sentence_redundancy, RedundancyReport, ScoreRequest};
use charad_core::segment::{build_clips, find_gaps, find_gaps_sorting, keyframe_indices, load_subtitles, save_clips, tag_ad_type};
use charad_core::token_merge::{load_tokens, merge, token_records, RunsRecord};
use charad_core::track::{load_anchors, propagate as run_propagation, save_tracks, Anchor, DetectionTimeline};
use charad_core::{PipelineConfig, TextKind};
use clap::{Args, ValueEnum};
use serde::Serialize;

fn stdout() -> PathBuf {
    PathBuf::from("-")
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SelectionArg {
    Auto,
    Exhaustive,
    CoordinateAscent,
}

impl From<SelectionArg> for Selection {
    fn from(s: SelectionArg) -> Self {
        match s {
            SelectionArg::Auto => Selection::Auto,
            SelectionArg::Exhaustive => Selection::Exhaustive,
            SelectionArg::CoordinateAscent => Selection::CoordinateAscent,
        }
    }
}

#[derive(Args, Debug)]
pub struct BuildBankArgs {
    /// Portrait JSONL: {"character","id","vector"}
    #[arg(long)]
    pub portraits: PathBuf,
    /// Defaults to the portrait file's stem
    #[arg(long)]
    pub movie_id: Option<String>,
    #[arg(long, value_enum, default_value_t = SelectionArg::Auto)]
    pub selection: SelectionArg,
    #[arg(long, default_value_os_t = stdout())]
    pub out: PathBuf,
}

pub fn build_bank(args: &BuildBankArgs, config: &PipelineConfig) -> Result<()> {
    let sets = load_portraits(&args.portraits)?;
    let movie_id = match &args.movie_id {
        Some(m) => m.clone(),
        None => args
            .portraits
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "movie".into()),
    };
    let mut opts = config.bank_options();
    opts.selection = args.selection.into();
    let built = build_bank_detailed(&movie_id, &sets, &opts)?;
    tracing::info!(
        characters = built.bank.len(),
        objective = built.bank.objective_value,
        exhaustive = built.exhaustive,
        "bank built"
    );
    save_bank(&built.bank, &args.out)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct RecognizeArgs {
    #[arg(long)]
    pub bank: PathBuf,
    /// Detection JSONL: {"frame","bbox","id","vector"}
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long, default_value_os_t = stdout())]
    pub out: PathBuf,
}

pub fn recognize(args: &RecognizeArgs, config: &PipelineConfig) -> Result<()> {
    let bank = load_bank(&args.bank)?;
    let faces: Vec<_> = load_detections(&args.detections)?.into_iter().map(|(f, _)| f).collect();
    let results = recognize_all(&faces, &bank, config.u)?;
    let rows: Vec<RecognitionRecord> = results.iter().map(RecognitionRecord::from).collect();
    let known = rows.iter().filter(|r| !r.label.is_unknown()).count();
    tracing::info!(faces = rows.len(), recognised = known, u = config.u, "recognition done");
    write_jsonl(&args.out, &rows)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SweepFormat {
    Csv,
    Jsonl,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub bank: PathBuf,
    /// Detection JSONL where every row carries a ground-truth "label"
    #[arg(long)]
    pub detections: PathBuf,
    /// Ascending thresholds, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.5, 1.0, 1.3, 1.6, 2.0, INFINITE_THRESHOLD])]
    pub thresholds: Vec<f64>,
    #[arg(long, value_enum, default_value_t = SweepFormat::Csv)]
    pub format: SweepFormat,
    #[arg(long, default_value_os_t = stdout())]
    pub out: PathBuf,
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let bank = load_bank(&args.bank)?;
    let rows = charad_core::io::read_jsonl::<DetectionRecord>(&args.detections)?;
    if let Some(row) = rows.iter().find(|r| r.value.label.is_none()) {
        return Err(charad_core::Error::Parse {
            path: args.detections.clone(),
            line: row.line,
            field: "label".into(),
            message: "sweeps need a ground-truth label on every detection".into(),
        }
        .into());
    }
    let dataset: Vec<_> = load_detections(&args.detections)?
        .into_iter()
        .map(|(f, l)| (f, l.expect("checked above")))
        .collect();
    let points = sweep_threshold(&dataset, &bank, &args.thresholds)?;
    match args.format {
        SweepFormat::Csv => write_string(&args.out, &sweep_to_csv(&points))?,
        SweepFormat::Jsonl => write_jsonl(&args.out, &points)?,
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct PropagateArgs {
    /// Detection JSONL for one clip
    #[arg(long)]
    pub detections: PathBuf,
    /// Anchor JSONL: {"frame","id","character"}
    #[arg(long, conflicts_with = "bank")]
    pub anchors: Option<PathBuf>,
    /// Recognise the detections against this bank to obtain anchors
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Every keyframe of the clip, comma separated; defaults to frames that have detections
    #[arg(long, value_delimiter = ',')]
    pub frames: Vec<u64>,
    #[arg(long, default_value_os_t = stdout())]
    pub out: PathBuf,
    /// Memory-bank step log as JSONL
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Cross-character conflicts as JSONL
    #[arg(long)]
    pub conflicts: Option<PathBuf>,
}

pub fn propagate(args: &PropagateArgs, config: &PipelineConfig) -> Result<()> {
    let faces: Vec<_> = load_detections(&args.detections)?.into_iter().map(|(f, _)| f).collect();
    let anchors: Vec<Anchor> = match (&args.anchors, &args.bank) {
        (Some(p), _) => load_anchors(p)?,
        (None, Some(b)) => recognize_all(&faces, &load_bank(b)?, config.u)?
            .into_iter()
            .filter_map(|r| {
                let character = r.label.name()?.to_string();
                Some(Anchor {
                    frame: r.frame_index,
                    id: r.detection_id,
                    character,
                })
            })
            .collect(),
        (None, None) => bail!("propagate needs --anchors or --bank"),
    };
    let timeline = if args.frames.is_empty() {
        DetectionTimeline::from_detections(faces)?
    } else {
        DetectionTimeline::new(args.frames.clone(), faces)?
    };
    let out = run_propagation(&timeline, &anchors, &config.propagation_params())?;
    tracing::info!(tracks = out.tracks.len(), conflicts = out.conflicts.len(), "propagation done");
    save_tracks(&out.tracks, &args.out)?;
    if let Some(p) = &args.log {
        write_jsonl(p, &out.log)?;
    }
    if let Some(p) = &args.conflicts {
        write_jsonl(p, &out.conflicts)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    /// `.srt` or timed-text JSONL
    #[arg(long)]
    pub subtitles: PathBuf,
    /// Movie length in seconds
    #[arg(long)]
    pub duration: f64,
    #[arg(long, default_value = "movie")]
    pub movie_id: String,
    /// Timed-text JSONL of existing ADs, used for each clip's text prior
    #[arg(long)]
    pub ads: Option<PathBuf>,
    /// Sort subtitles by start instead of rejecting unsorted input
    #[arg(long)]
    pub sort: bool,
    /// Frame rate; with --keyframes-out, writes each clip's keyframe indices
    #[arg(long, requires = "keyframes_out")]
    pub fps: Option<f64>,
    #[arg(long, requires = "fps")]
    pub keyframes_out: Option<PathBuf>,
    #[arg(long, default_value_os_t = stdout())]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct KeyframeRow {
    start_s: f64,
    end_s: f64,
    frames: Vec<u64>,
}

pub fn segment(args: &SegmentArgs, config: &PipelineConfig) -> Result<()> {
    let subtitles = load_subtitles(&args.subtitles)?;
    let gaps = if args.sort {
        find_gaps_sorting(&subtitles, args.duration, config.min_gap_s)?
    } else {
        find_gaps(&subtitles, args.duration, config.min_gap_s)?
    };
    let mut history = subtitles;
    if let Some(p) = &args.ads {
        let ads = load_timed_text(p)?;
        if let Some(i) = ads.iter().position(|t| t.kind != TextKind::Ad) {
            return Err(charad_core::Error::Parse {
                path: p.clone(),
                line: i + 1,
                field: "kind".into(),
                message: "expected only \"ad\" records".into(),
            }
            .into());
        }
        history.extend(ads);
    }
    let clips = build_clips(&args.movie_id, &gaps, &history, config.n_ads);
    tracing::info!(clips = clips.len(), min_gap_s = config.min_gap_s, "segmentation done");
    save_clips(&clips, &args.out)?;
    if let (Some(fps), Some(p)) = (args.fps, &args.keyframes_out) {
        let rows = gaps
            .iter()
            .map(|&(start_s, end_s)| {
                Ok(KeyframeRow {
                    start_s,
                    end_s,
                    frames: keyframe_indices(start_s, end_s, fps, config.stride)?,
                })
            })
            .collect::<charad_core::Result<Vec<_>>>()?;
        write_jsonl(p, &rows)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct TagTypeArgs {
    #[arg(long)]
    pub bank: PathBuf,
    /// The AD sentence
    #[arg(long)]
    pub text: String,
    /// Characters recognised in the clip, comma separated
    #[arg(long, value_delimiter = ',')]
    pub recognized: Vec<String>,
}

pub fn tag_type(args: &TagTypeArgs) -> Result<()> {
    let bank = load_bank(&args.bank)?;
    let seen: HashSet<String> = args.recognized.iter().filter(|s| !s.is_empty()).cloned().collect();
    let tag = tag_ad_type(&args.text, &bank, &seen)?;
    println!("{}", tag.map_or_else(|| "none".to_string(), |t| t.to_string()));
    Ok(())
}

#[derive(Args, Debug)]
pub struct PromptArgs {
    /// JSON with "base", "char", "multi_prefix" and optional "soft_slots"
    #[arg(long)]
    pub templates: PathBuf,
    /// Recognised characters in appearance order, comma separated
    #[arg(long, value_delimiter = ',')]
    pub names: Vec<String>,
    /// Timed-text JSONL of earlier ADs and subtitles
    #[arg(long, requires = "start")]
    pub history: Option<PathBuf>,
    /// Clip start in seconds, for the text prior
    #[arg(long)]
    pub start: Option<f64>,
    #[arg(long, default_value_os_t = stdout())]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct PromptOutput {
    prompt: String,
    slot_positions: Vec<SlotPosition>,
    character_names: Vec<String>,
    text_prior: String,
}

pub fn prompt(args: &PromptArgs, config: &PipelineConfig) -> Result<()> {
    let templates = load_templates(&args.templates)?;
    let names: Vec<String> = args.names.iter().filter(|s| !s.is_empty()).cloned().collect();
    let assembled = f_dit(&names, &templates)?;
    let text_prior = match (&args.history, args.start) {
        (Some(p), Some(start)) => build_text_prior(&load_timed_text(p)?, start, config.n_ads),
        _ => String::new(),
    };
    write_json(
        &args.out,
        &PromptOutput {
            prompt: assembled.text,
            slot_positions: assembled.slot_positions,
            character_names: assembled.character_names,
            text_prior,
        },
    )?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct MergeTokensArgs {
    /// Token JSONL: {"index","vector"}
    #[arg(long)]
    pub tokens: PathBuf,
    #[arg(long, default_value_os_t = stdout())]
    pub out: PathBuf,
    /// Write the merged index runs as JSON
    #[arg(long)]
    pub runs_out: Option<PathBuf>,
}

pub fn merge_tokens(args: &MergeTokensArgs, config: &PipelineConfig) -> Result<()> {
    let seq = load_tokens(&args.tokens)?;
    let merged = merge(&seq, config.mu)?;
    tracing::info!(input = seq.len(), output = merged.tokens.len(), "tokens merged");
    write_jsonl(&args.out, &token_records(&merged.tokens))?;
    if let Some(p) = &args.runs_out {
        write_json(p, &RunsRecord::from(&merged))?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Word vector JSONL: {"word","vector"}
    #[arg(long)]
    pub vectors: PathBuf,
    /// One stopword per line
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Pair JSONL: {"id","generated","ground_truth"}
    #[arg(long)]
    pub pairs: PathBuf,
    /// Emit per-word detail instead of one score per pair
    #[arg(long)]
    pub detail: bool,
    #[arg(long, default_value_os_t = stdout())]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct DetailRow {
    id: String,
    #[serde(flatten)]
    report: RedundancyReport,
}

pub fn score(args: &ScoreArgs, config: &PipelineConfig) -> Result<()> {
    let lookup = load_lookup(&args.vectors, args.stopwords.as_deref())?;
    let pairs: Vec<ScoreRequest> = charad_core::io::read_jsonl(&args.pairs)?.into_iter().map(|r| r.value).collect();
    if args.detail {
        let rows = pairs
            .iter()
            .map(|p| {
                let report = sentence_redundancy(&p.generated, &p.ground_truth, &lookup, config.theta)?;
                if let Some(w) = &report.warning {
                    tracing::warn!(id = %p.id, "{w}");
                }
                Ok(DetailRow { id: p.id.clone(), report })
            })
            .collect::<charad_core::Result<Vec<_>>>()?;
        write_jsonl(&args.out, &rows)?;
    } else {
        write_jsonl(&args.out, &score_batch(&pairs, &lookup, config.theta)?)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    /// Movie manifest JSON
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for bank.json, clips.jsonl, results.jsonl and config.toml
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Generated captions JSONL {"id","generated"}, scored against each clip's AD
    #[arg(long)]
    pub generated: Option<PathBuf>,
}

pub fn pipeline(args: &PipelineArgs, config: &PipelineConfig) -> Result<()> {
    let inputs = MovieInputs::load(&args.manifest)?;
    let generated = args.generated.as_deref().map(pipeline::load_generated).transpose()?;
    let out = pipeline::run(&inputs, config, generated.as_ref())?;
    pipeline::write_outputs(&args.out_dir, &out, config)
        .with_context(|| format!("writing results to {}", display(&args.out_dir)))?;
    tracing::info!(movie = %inputs.movie_id, clips = out.clips.len(), "pipeline done");
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
