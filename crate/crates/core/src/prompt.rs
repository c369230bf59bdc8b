//! Dynamic instruction template and text prior assembly.
//!
//! The instruction for a clip depends on how many main characters `n` were
//! recognised:
//!
//! | n   | prompt                      |
//! |-----|-----------------------------|
//! | 0   | `B`                         |
//! | 1   | `C(name₁) B`                |
//! | > 1 | `M C(name₁) … C(nameₙ) B`   |
//!
//! Pieces are concatenated verbatim; templates carry their own whitespace.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query_bank::validate_name;
use crate::recognition::{BBox, Label};

pub const NAME_PLACEHOLDER: &str = "{name}";
/// Literal marker every character template must carry for its region tokens.
pub const REGION_MARKER: &str = "<region>";
pub const DEFAULT_N_ADS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextKind {
    Subtitle,
    Ad,
}

impl TextKind {
    pub fn tag(self) -> &'static str {
        match self {
            TextKind::Subtitle => "[SUB]",
            TextKind::Ad => "[AD]",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedText {
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
    pub kind: TextKind,
}

impl TimedText {
    pub fn new(start_s: f64, end_s: f64, text: impl Into<String>, kind: TextKind) -> Result<Self> {
        let t = TimedText {
            start_s,
            end_s,
            text: text.into(),
            kind,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start_s.is_finite() && self.end_s.is_finite()) || self.start_s < 0.0 {
            return Err(Error::invalid(format!(
                "timed text needs finite, non-negative times, got {}..{}",
                self.start_s, self.end_s
            )));
        }
        if self.end_s <= self.start_s {
            return Err(Error::invalid(format!(
                "timed text ends at {} before it starts at {}",
                self.end_s, self.start_s
            )));
        }
        if self.text.trim().is_empty() {
            return Err(Error::invalid("timed text is empty"));
        }
        Ok(())
    }
}

pub fn load_timed_text(path: &Path) -> Result<Vec<TimedText>> {
    crate::io::read_jsonl::<TimedText>(path)?
        .into_iter()
        .map(|row| {
            row.value
                .validate()
                .map_err(|e| Error::parse(path, row.line, "start_s/end_s/text", e.to_string()))?;
            Ok(row.value)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplateSet {
    pub base: String,
    #[serde(rename = "char")]
    pub character: String,
    pub multi_prefix: String,
    #[serde(default)]
    pub soft_slots: Vec<String>,
}

impl PromptTemplateSet {
    pub fn validate(&self) -> Result<()> {
        let placeholders = self.character.matches(NAME_PLACEHOLDER).count();
        if placeholders != 1 {
            return Err(Error::invalid(format!(
                "character template must contain {NAME_PLACEHOLDER} exactly once, found {placeholders}"
            )));
        }
        if !self.character.contains(REGION_MARKER) {
            return Err(Error::invalid(format!("character template lacks the {REGION_MARKER} marker")));
        }
        let mut seen = HashSet::new();
        for slot in &self.soft_slots {
            if slot.is_empty() || slot == REGION_MARKER || slot.contains(NAME_PLACEHOLDER) {
                return Err(Error::invalid(format!("soft slot marker '{slot}' is not usable")));
            }
            if !seen.insert(slot.as_str()) {
                return Err(Error::invalid(format!("soft slot marker '{slot}' is repeated")));
            }
        }
        Ok(())
    }

    /// The character template with `name` substituted.
    pub fn character_prompt(&self, name: &str) -> String {
        self.character.replacen(NAME_PLACEHOLDER, name, 1)
    }

    fn slot_count(&self, text: &str) -> usize {
        self.soft_slots.iter().map(|s| text.matches(s.as_str()).count()).sum()
    }

    /// Number of soft-slot occurrences an assembled prompt for `n` characters carries.
    pub fn expected_slots(&self, n: usize) -> usize {
        let prefix = if n > 1 { self.slot_count(&self.multi_prefix) } else { 0 };
        prefix + n * self.slot_count(&self.character) + self.slot_count(&self.base)
    }
}

pub fn load_templates(path: &Path) -> Result<PromptTemplateSet> {
    let t: PromptTemplateSet = crate::io::read_json(path)?;
    t.validate().map_err(|e| Error::parse(path, 0, "char", e.to_string()))?;
    Ok(t)
}

/// A soft-slot marker occurrence; `character` is the index of the character
/// block it sits in, `None` for the prefix or base prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotPosition {
    pub slot: String,
    pub offset: usize,
    pub character: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledPrompt {
    pub text: String,
    pub slot_positions: Vec<SlotPosition>,
    pub character_names: Vec<String>,
}

fn collect_slots(templates: &PromptTemplateSet, piece: &str, base: usize, character: Option<usize>, out: &mut Vec<SlotPosition>) {
    let mut found: Vec<SlotPosition> = templates
        .soft_slots
        .iter()
        .flat_map(|slot| {
            piece.match_indices(slot.as_str()).map(move |(i, _)| SlotPosition {
                slot: slot.clone(),
                offset: base + i,
                character,
            })
        })
        .collect();
    found.sort_by_key(|s| s.offset);
    out.extend(found);
}

/// Builds the instruction prompt for the recognised characters, in order.
pub fn f_dit(names: &[String], templates: &PromptTemplateSet) -> Result<AssembledPrompt> {
    templates.validate()?;
    let mut seen = HashSet::new();
    for name in names {
        validate_name(name)?;
        if !seen.insert(name.as_str()) {
            return Err(Error::invalid(format!("character '{name}' appears twice")));
        }
    }
    let mut text = String::new();
    let mut slots = Vec::new();
    if names.len() > 1 {
        collect_slots(templates, &templates.multi_prefix, text.len(), None, &mut slots);
        text.push_str(&templates.multi_prefix);
    }
    for (i, name) in names.iter().enumerate() {
        // slots are located in the raw template so a name can never forge one
        let rendered = templates.character_prompt(name);
        let name_at = templates.character.find(NAME_PLACEHOLDER).unwrap_or(0);
        let before = &templates.character[..name_at];
        let after = &templates.character[name_at + NAME_PLACEHOLDER.len()..];
        collect_slots(templates, before, text.len(), Some(i), &mut slots);
        collect_slots(templates, after, text.len() + name_at + name.len(), Some(i), &mut slots);
        text.push_str(&rendered);
    }
    collect_slots(templates, &templates.base, text.len(), None, &mut slots);
    text.push_str(&templates.base);
    Ok(AssembledPrompt {
        text,
        slot_positions: slots,
        character_names: names.to_vec(),
    })
}

/// Distinct recognised names ordered by first appearance: earliest frame, then leftmost box.
pub fn names_in_appearance_order<'a, I>(sightings: I) -> Vec<String>
where
    I: IntoIterator<Item = (u64, BBox, &'a Label)>,
{
    let mut named: Vec<(u64, f64, usize, &str)> = sightings
        .into_iter()
        .enumerate()
        .filter_map(|(i, (frame, bbox, label))| label.name().map(|n| (frame, bbox.x, i, n)))
        .collect();
    named.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut seen = HashSet::new();
    named
        .into_iter()
        .filter(|(_, _, _, n)| seen.insert(*n))
        .map(|(_, _, _, n)| n.to_string())
        .collect()
}

/// The last `n_ads` ADs that end by `current_start_s`, plus every subtitle
/// starting between the first of those ADs and `current_start_s`, in time
/// order, each prefixed by its kind tag and joined with single spaces.
pub fn build_text_prior(history: &[TimedText], current_start_s: f64, n_ads: usize) -> String {
    select_prior(history, current_start_s, n_ads)
        .iter()
        .map(|t| format!("{} {}", t.kind.tag(), t.text.trim()))
        .collect::<Vec<_>>()
        .join(" ")
}

/// The records [`build_text_prior`] renders, in output order.
pub fn select_prior(history: &[TimedText], current_start_s: f64, n_ads: usize) -> Vec<TimedText> {
    let mut sorted: Vec<&TimedText> = history.iter().collect();
    sorted.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    let ads: Vec<&TimedText> = sorted
        .iter()
        .copied()
        .filter(|t| t.kind == TextKind::Ad && t.end_s <= current_start_s)
        .collect();
    let chosen = &ads[ads.len().saturating_sub(n_ads)..];
    let Some(first) = chosen.first() else {
        return Vec::new();
    };
    let window_start = first.start_s;
    sorted
        .into_iter()
        .filter(|t| match t.kind {
            TextKind::Ad => chosen.iter().any(|c| std::ptr::eq(*c, *t)),
            TextKind::Subtitle => t.start_s >= window_start && t.start_s < current_start_s,
        })
        .cloned()
        .collect()
}
