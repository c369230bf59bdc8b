//! Regenerates the bundled fixtures: `cargo run -p charad --example gen_fixtures -- fixtures`

use std::path::{Path, PathBuf};

use charad_core::io::{write_json, write_jsonl, write_string};
use charad_core::query_bank::PortraitRecord;
use charad_core::recognition::DetectionRecord;
use charad_core::synth::{planted_portraits, planted_recognition, propagation_fixture, synthetic_movie};
use charad_core::token_merge::{token_records, TokenSequence};
use charad_core::{Embedding, Result};

fn planted(dir: &Path) -> Result<()> {
    let portraits: Vec<PortraitRecord> = planted_portraits(11, 3, 6, 16)
        .into_iter()
        .flat_map(|set| {
            let name = set.character_name.clone();
            set.embeddings
                .into_iter()
                .zip(set.source_ids)
                .map(move |(vector, id)| PortraitRecord { character: name.clone(), id, vector })
        })
        .collect();
    write_jsonl(&dir.join("portraits.jsonl"), &portraits)?;

    let p = planted_recognition(7, 3, 30, 30, 16);
    write_json(&dir.join("bank.json"), &p.bank)?;
    let rows: Vec<DetectionRecord> = p
        .faces
        .iter()
        .zip(&p.truth)
        .map(|(f, t)| DetectionRecord { label: Some(t.to_string()), ..DetectionRecord::from(f) })
        .collect();
    write_jsonl(&dir.join("detections.jsonl"), &rows)
}

fn propagation(dir: &Path) -> Result<()> {
    let f = propagation_fixture();
    let rows: Vec<DetectionRecord> = f.timeline.all_detections().map(DetectionRecord::from).collect();
    write_jsonl(&dir.join("detections.jsonl"), &rows)?;
    write_jsonl(&dir.join("anchors.jsonl"), &f.anchors)?;
    let frames: Vec<String> = f.timeline.frames().iter().map(u64::to_string).collect();
    write_string(&dir.join("frames.txt"), &(frames.join(",") + "\n"))
}

fn tokens(dir: &Path) -> Result<()> {
    // two near-duplicate pairs among eight tokens
    let raw: [[f64; 3]; 8] = [
        [1.0, 0.0, 0.0],
        [0.98, 0.05, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.1, 0.0, 0.99],
        [0.7, 0.7, 0.0],
        [-1.0, 0.2, 0.0],
        [0.0, -1.0, 0.3],
    ];
    let seq = TokenSequence::new(raw.iter().map(|v| Embedding::new(v.to_vec())).collect::<Result<_>>()?)?;
    write_jsonl(&dir.join("tokens.jsonl"), &token_records(&seq))
}

fn main() -> Result<()> {
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("fixtures"));
    for sub in ["planted", "propagation", "tokens"] {
        std::fs::create_dir_all(root.join(sub)).map_err(|source| charad_core::Error::Io { path: root.join(sub), source })?;
    }
    planted(&root.join("planted"))?;
    propagation(&root.join("propagation"))?;
    tokens(&root.join("tokens"))?;
    synthetic_movie(0).write(&root.join("movie"))?;
    println!("fixtures written to {}", root.display());
    Ok(())
}
