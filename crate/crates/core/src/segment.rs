//! Dialogue-free clip extraction, keyframe sampling and AD-type tagging.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{select_prior, TextKind, TimedText};
use crate::query_bank::QueryBank;

pub const DEFAULT_MIN_GAP_S: f64 = 1.0;
pub const DEFAULT_STRIDE: u64 = 15;

/// Merges overlapping or touching spans. Input must be sorted by start.
pub fn merge_spans(spans: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(spans.len());
    for &(s, e) in spans {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    merged
}

/// Every interval of `[0, duration_s]` not covered by the merged spans.
pub fn complement(merged: &[(f64, f64)], duration_s: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut cursor = 0.0;
    for &(s, e) in merged {
        if s > cursor {
            out.push((cursor, s));
        }
        cursor = cursor.max(e);
    }
    if duration_s > cursor {
        out.push((cursor, duration_s));
    }
    out
}

fn spans_of(subtitles: &[TimedText]) -> Result<Vec<(f64, f64)>> {
    for (i, pair) in subtitles.windows(2).enumerate() {
        if pair[1].start_s < pair[0].start_s {
            return Err(Error::invalid(format!(
                "subtitles are not sorted by start: record {} starts at {} after {}",
                i + 1,
                pair[1].start_s,
                pair[0].start_s
            )));
        }
    }
    Ok(subtitles.iter().map(|t| (t.start_s, t.end_s)).collect())
}

/// Maximal subtitle-free intervals of at least `min_gap_s`, in time order.
/// `subtitles` must be sorted by start time.
pub fn find_gaps(subtitles: &[TimedText], duration_s: f64, min_gap_s: f64) -> Result<Vec<(f64, f64)>> {
    if !(min_gap_s > 0.0 && min_gap_s.is_finite()) {
        return Err(Error::invalid(format!("min_gap_s must be positive, got {min_gap_s}")));
    }
    if !(duration_s.is_finite() && duration_s >= 0.0) {
        return Err(Error::invalid(format!("duration must be finite and non-negative, got {duration_s}")));
    }
    let spans = spans_of(subtitles)?;
    if let Some(t) = subtitles.iter().find(|t| t.end_s > duration_s) {
        return Err(Error::invalid(format!(
            "subtitle ending at {} runs past the duration {duration_s}",
            t.end_s
        )));
    }
    Ok(complement(&merge_spans(&spans), duration_s)
        .into_iter()
        .filter(|(s, e)| e - s >= min_gap_s)
        .collect())
}

/// Sorts a copy by start time, then runs [`find_gaps`].
pub fn find_gaps_sorting(subtitles: &[TimedText], duration_s: f64, min_gap_s: f64) -> Result<Vec<(f64, f64)>> {
    let mut sorted = subtitles.to_vec();
    sorted.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    find_gaps(&sorted, duration_s, min_gap_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum AdType {
    /// Names a character who is also visible.
    NamedVisible = 1,
    /// Names characters, none of whom were recognised.
    NamedUnseen = 2,
    /// Names nobody while main characters are on screen.
    Unnamed = 3,
}

impl TryFrom<u8> for AdType {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(AdType::NamedVisible),
            2 => Ok(AdType::NamedUnseen),
            3 => Ok(AdType::Unnamed),
            other => Err(format!("AD type must be 1, 2 or 3, got {other}")),
        }
    }
}

impl From<AdType> for u8 {
    fn from(t: AdType) -> u8 {
        t as u8
    }
}

impl fmt::Display for AdType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Bank names that occur in `text` as whole words, ignoring case.
/// Multi-word names must appear as a contiguous word sequence.
pub fn mentioned_names<'a>(text: &str, names: impl IntoIterator<Item = &'a str>) -> Vec<&'a str> {
    let text_words = words(text);
    names
        .into_iter()
        .filter(|name| {
            let nw = words(name);
            !nw.is_empty() && text_words.windows(nw.len()).any(|w| w == nw.as_slice())
        })
        .collect()
}

/// Classifies an AD by the character names it mentions and the characters
/// recognised in its clip. `None` when it names nobody and nobody was seen.
pub fn tag_ad_type(ad_text: &str, bank: &QueryBank, recognized_names: &HashSet<String>) -> Result<Option<AdType>> {
    if bank.is_empty() {
        return Err(Error::Empty("AD tagging needs a non-empty bank".into()));
    }
    let mentioned = mentioned_names(ad_text, bank.names());
    Ok(if mentioned.iter().any(|n| recognized_names.contains(*n)) {
        Some(AdType::NamedVisible)
    } else if !mentioned.is_empty() {
        Some(AdType::NamedUnseen)
    } else if !recognized_names.is_empty() {
        Some(AdType::Unnamed)
    } else {
        None
    })
}

// seconds × fps can land a hair under an integer (2.3 × 30 = 68.999…)
fn frame_floor(t: f64, fps: f64) -> u64 {
    let x = t * fps;
    let r = x.round();
    if (x - r).abs() < 1e-9 { r as u64 } else { x.floor() as u64 }
}

/// Keyframes from `floor(start·fps)` every `stride` frames, stopping before `floor(end·fps)`.
/// The first index is always included.
pub fn keyframe_indices(start_s: f64, end_s: f64, fps: f64, stride: u64) -> Result<Vec<u64>> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::invalid(format!("fps must be positive, got {fps}")));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    if !(start_s >= 0.0 && end_s > start_s && end_s.is_finite()) {
        return Err(Error::invalid(format!("clip {start_s}..{end_s} is not a forward interval")));
    }
    let first = frame_floor(start_s, fps);
    let end = frame_floor(end_s, fps);
    let mut out = vec![first];
    let mut f = first + stride;
    while f < end {
        out.push(f);
        f += stride;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipSpec {
    pub movie_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub prior_ads: Vec<TimedText>,
    pub prior_subtitles: Vec<TimedText>,
    pub ad_type: Option<AdType>,
}

impl ClipSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.start_s.is_finite() && self.end_s.is_finite() && self.end_s > self.start_s) {
            return Err(Error::invariant(format!(
                "clip {}..{} does not end after it starts",
                self.start_s, self.end_s
            )));
        }
        if let Some(ad) = self.prior_ads.iter().find(|t| t.kind != TextKind::Ad || t.end_s > self.start_s) {
            return Err(Error::invariant(format!(
                "prior AD '{}' is not an AD ending by {}",
                ad.text, self.start_s
            )));
        }
        if let Some(sub) = self
            .prior_subtitles
            .iter()
            .find(|t| t.kind != TextKind::Subtitle || t.start_s >= self.start_s)
        {
            return Err(Error::invariant(format!(
                "prior subtitle '{}' is not a subtitle starting before {}",
                sub.text, self.start_s
            )));
        }
        Ok(())
    }
}

/// One clip per gap, each carrying the text prior that precedes it.
pub fn build_clips(movie_id: &str, gaps: &[(f64, f64)], history: &[TimedText], n_ads: usize) -> Vec<ClipSpec> {
    gaps.iter()
        .map(|&(start_s, end_s)| {
            let (prior_ads, prior_subtitles) = select_prior(history, start_s, n_ads)
                .into_iter()
                .partition(|t| t.kind == TextKind::Ad);
            ClipSpec {
                movie_id: movie_id.to_string(),
                start_s,
                end_s,
                prior_ads,
                prior_subtitles,
                ad_type: None,
            }
        })
        .collect()
}

/// The first AD whose midpoint falls inside `[start_s, end_s)`.
pub fn target_ad(ads: &[TimedText], start_s: f64, end_s: f64) -> Option<&TimedText> {
    ads.iter()
        .filter(|t| t.kind == TextKind::Ad)
        .find(|t| {
            let mid = (t.start_s + t.end_s) / 2.0;
            mid >= start_s && mid < end_s
        })
}

pub fn save_clips(clips: &[ClipSpec], path: &Path) -> Result<()> {
    crate::io::write_jsonl(path, clips)
}

pub fn load_clips(path: &Path) -> Result<Vec<ClipSpec>> {
    crate::io::read_jsonl::<ClipSpec>(path)?
        .into_iter()
        .map(|row| {
            row.value
                .validate()
                .map_err(|e| Error::parse(path, row.line, "start_s/end_s/prior", e.to_string()))?;
            Ok(row.value)
        })
        .collect()
}

fn parse_timestamp(s: &str) -> Option<f64> {
    let (hms, ms) = s.trim().split_once(',')?;
    let mut parts = hms.split(':');
    let h: u64 = parts.next()?.parse().ok()?;
    let m: u64 = parts.next()?.parse().ok()?;
    let sec: u64 = parts.next()?.parse().ok()?;
    if parts.next().is_some() || m >= 60 || sec >= 60 || ms.len() != 3 {
        return None;
    }
    let ms: u64 = ms.parse().ok()?;
    Some((h * 3_600_000 + m * 60_000 + sec * 1000 + ms) as f64 / 1000.0)
}

/// Parses SubRip text into subtitle records. Cue text lines are joined by spaces.
pub fn parse_srt(path: &Path, text: &str) -> Result<Vec<TimedText>> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let lineno = i + 1;
        if lines[i].trim().parse::<u64>().is_err() {
            return Err(Error::parse(path, lineno, "index", format!("expected a cue number, found '{}'", lines[i])));
        }
        i += 1;
        let timing = lines.get(i).copied().unwrap_or("");
        let (start, end) = timing
            .split_once("-->")
            .and_then(|(a, b)| {
                // position hints may follow the end timestamp
                let b = b.split_whitespace().next().unwrap_or("");
                Some((parse_timestamp(a)?, parse_timestamp(b)?))
            })
            .ok_or_else(|| Error::parse(path, i + 1, "timing", format!("expected 'HH:MM:SS,mmm --> HH:MM:SS,mmm', found '{timing}'")))?;
        let timing_line = i + 1;
        i += 1;
        let mut cue = Vec::new();
        while i < lines.len() && !lines[i].trim().is_empty() {
            cue.push(lines[i].trim());
            i += 1;
        }
        let record = TimedText::new(start, end, cue.join(" "), TextKind::Subtitle)
            .map_err(|e| Error::parse(path, timing_line, "timing", e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}

fn format_timestamp(t: f64) -> String {
    let ms = (t * 1000.0).round() as u64;
    format!("{:02}:{:02}:{:02},{:03}", ms / 3_600_000, ms / 60_000 % 60, ms / 1000 % 60, ms % 1000)
}

/// Renders records as SubRip cues numbered from 1. Times are rounded to milliseconds.
pub fn to_srt(records: &[TimedText]) -> String {
    let mut out = String::new();
    for (i, t) in records.iter().enumerate() {
        out.push_str(&format!(
            "{}\n{} --> {}\n{}\n\n",
            i + 1,
            format_timestamp(t.start_s),
            format_timestamp(t.end_s),
            t.text
        ));
    }
    out
}

/// Reads subtitles from `.srt` or from JSONL timed-text records.
pub fn load_subtitles(path: &Path) -> Result<Vec<TimedText>> {
    let is_srt = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("srt"));
    if is_srt {
        parse_srt(path, &crate::io::read_to_string(path)?)
    } else {
        crate::prompt::load_timed_text(path)
    }
}
