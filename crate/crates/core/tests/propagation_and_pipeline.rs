use std::collections::{BTreeSet, HashSet};

use charad_core::pipeline::{run, MovieInputs};
use charad_core::recognition::{BBox, FaceDetection};
use charad_core::synth::synthetic_movie;
use charad_core::track::{propagate, Anchor, DetectionTimeline, PropagationParams, StepEvent};
use charad_core::{normalize, Embedding, PipelineConfig};
use proptest::prelude::*;

fn timeline_strategy() -> impl Strategy<Value = (DetectionTimeline, Vec<Anchor>, PropagationParams)> {
    (2usize..14, 1usize..4, 1usize..5, 0.0f64..=1.0, 0.0f64..0.9, any::<u64>()).prop_map(
        |(len, k_ctx, k_prompt, alpha, tau, seed)| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let frames: Vec<u64> = (0..len as u64).map(|i| i * 15).collect();
            let mut dets = Vec::new();
            for &f in &frames {
                for d in 0..rng.random_range(0..4) {
                    let v: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..1.0)).collect();
                    let e = normalize(&Embedding::new(v).unwrap()).unwrap();
                    let bbox = BBox::new(rng.random_range(0.0..50.0), rng.random_range(0.0..50.0), 10.0, 10.0);
                    dets.push(FaceDetection::new(f, bbox, e, format!("d{f}-{d}")).unwrap());
                }
            }
            let mut anchors = Vec::new();
            let mut used = HashSet::new();
            for (i, name) in ["A", "B"].iter().enumerate() {
                let on_frame: Vec<&FaceDetection> = dets.iter().filter(|d| d.frame_index == frames[i * (len - 1)]).collect();
                if let Some(d) = on_frame.iter().find(|d| !used.contains(&d.detection_id)) {
                    used.insert(d.detection_id.clone());
                    anchors.push(Anchor { frame: d.frame_index, id: d.detection_id.clone(), character: name.to_string() });
                }
            }
            let params = PropagationParams { k_ctx, k_prompt, alpha, tau_assoc: tau };
            (DetectionTimeline::new(frames, dets).unwrap(), anchors, params)
        },
    )
}

proptest! {
    #[test]
    fn propagation_invariants((timeline, anchors, params) in timeline_strategy()) {
        let out = propagate(&timeline, &anchors, &params).unwrap();
        let frames: BTreeSet<u64> = timeline.frames().iter().copied().collect();
        for e in &out.log {
            if let StepEvent::ContextPush { len_after, .. } = e.event {
                prop_assert!(len_after <= params.k_ctx);
            }
        }
        for t in &out.tracks {
            let assigned: BTreeSet<u64> = t.assignments.keys().copied().collect();
            prop_assert!(assigned.is_disjoint(&t.lost_frames));
            let union: BTreeSet<u64> = assigned.union(&t.lost_frames).copied().collect();
            prop_assert_eq!(union, frames.clone());
        }
        // one face never carries two identities
        for &f in &frames {
            let ids: Vec<&String> = out.tracks.iter().filter_map(|t| t.assignments.get(&f)).map(|a| &a.detection_id).collect();
            let unique: HashSet<&&String> = ids.iter().collect();
            prop_assert_eq!(unique.len(), ids.len());
        }
        let again = propagate(&timeline, &anchors, &params).unwrap();
        prop_assert_eq!(out.tracks, again.tracks);
    }
}

#[test]
fn manifest_on_disk_matches_in_memory_inputs() {
    let movie = synthetic_movie(3);
    let dir = tempfile::tempdir().unwrap();
    movie.write(dir.path()).unwrap();
    let loaded = MovieInputs::load(&dir.path().join("movie.json")).unwrap();
    let config = PipelineConfig::default();
    let a = run(&loaded, &config, None).unwrap();
    let b = run(&movie.inputs(), &config, None).unwrap();
    assert_eq!(a.clips, b.clips);
    assert_eq!(serde_json::to_string(&a.results).unwrap(), serde_json::to_string(&b.results).unwrap());
    assert!(!a.results.is_empty());
}
