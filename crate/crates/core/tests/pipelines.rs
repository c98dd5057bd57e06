use std::collections::BTreeSet;
use std::path::Path;

use arsentinel_core::backend::noise::NoiseProfile;
use arsentinel_core::backend::NoiseEvent;
use arsentinel_core::backend::{BackendKind, EndpointSet};
use arsentinel_core::eval::{evaluate, load_manifest, PipelineKind};
use arsentinel_core::model::{SceneLabel, ScenePair, VimFormat};
use arsentinel_core::synth::{synthesize, LabelMix, SynthSpec};
use arsentinel_core::trace::TraceRecorder;
use arsentinel_core::{Engine, PipelineConfig, ReportStatus};

fn dataset(dir: &Path, seed: u64, count: usize, mix: LabelMix) -> Vec<ScenePair> {
    let manifest = synthesize(&SynthSpec::new(seed, count, mix), dir).unwrap();
    load_manifest(&manifest).unwrap()
}

fn oracle_engine(dir: &Path, noise: &NoiseProfile) -> Engine {
    Engine::new(PipelineConfig::with_oracle(dir, noise)).unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn perfect_oracle_scores_every_scene_correctly() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dataset(dir.path(), 42, 120, LabelMix::default());
    let engine = oracle_engine(dir.path(), &NoiseProfile::seeded(42));

    for kind in [PipelineKind::Obstruction, PipelineKind::Vim] {
        let report = evaluate(&pairs, kind, &engine).await;
        let r = &report.results;
        assert!(r.failed.is_empty(), "{kind}: {:?}", r.failed);
        assert_eq!(r.metrics.accuracy, Some(1.0), "{kind}: {:?}", r.confusion);
        assert_eq!(r.scenes, 120);
    }

    let obstruction = evaluate(&pairs, PipelineKind::Obstruction, &engine).await;
    let objects = obstruction.results.object_level.unwrap();
    assert_eq!(objects.confusion.fp + objects.confusion.fn_, 0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn vim_taxonomy_matches_generated_format() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dataset(dir.path(), 17, 60, LabelMix::only(SceneLabel::Vim));
    let engine = oracle_engine(dir.path(), &NoiseProfile::default());
    let mut formats = BTreeSet::new();
    for pair in &pairs {
        let report = engine.detect_vim(pair).await.unwrap();
        let truth = pair.truth.as_ref().unwrap();
        let taxonomy = report.taxonomy.expect("manipulated scene carries a taxonomy");
        assert_eq!(Some(&taxonomy.format), truth.vim_format.as_ref(), "{}", pair.id);
        assert!(report.verdict.attacked);
        formats.insert(taxonomy.format);
    }
    assert!(formats.contains(&VimFormat::TextAlteration));
    assert!(formats.contains(&VimFormat::TextAddition));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn flagged_count_never_grows_with_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dataset(dir.path(), 3, 60, LabelMix::default());
    let mut previous = u64::MAX;
    for step in 1..=10 {
        let tau = step as f64 / 10.0;
        let mut config = PipelineConfig::with_oracle(dir.path(), &NoiseProfile::default());
        config.threshold = tau;
        let engine = Engine::new(config).unwrap();
        let report = evaluate(&pairs, PipelineKind::Obstruction, &engine).await;
        let flagged = report.results.confusion.tp + report.results.confusion.fp;
        assert!(flagged <= previous, "tau {tau}: {flagged} > {previous}");
        previous = flagged;
        let obstructed = report.results.per_label[&SceneLabel::Obstruction].scenes;
        if tau <= 0.6 {
            assert_eq!(report.results.confusion.tp, obstructed, "tau {tau}");
        }
    }
}

#[tokio::test]
async fn object_drops_are_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dataset(dir.path(), 21, 40, LabelMix::default());
    let noise = NoiseProfile {
        drop_object_prob: 0.5,
        ..NoiseProfile::seeded(7)
    };

    let run = || async {
        let engine = oracle_engine(dir.path(), &noise);
        let mut names = Vec::new();
        // Reverse order: results must not depend on call order.
        for pair in pairs.iter().rev() {
            let t = TraceRecorder::new();
            names.push(engine.backends().identify_key_objects(&pair.raw, &t).await.unwrap());
        }
        let mut log = engine.backends().backend(BackendKind::Keyobjects).noise_log().unwrap();
        log.sort_by_key(|e| format!("{e:?}"));
        (names, log)
    };
    let (names_a, log_a) = run().await;
    let (names_b, log_b) = run().await;
    assert_eq!(names_a, names_b);
    assert_eq!(log_a, log_b);

    let total: usize = pairs.iter().map(|p| p.truth.as_ref().unwrap().key_objects.len()).sum();
    let kept: usize = names_a.iter().map(Vec::len).sum();
    assert_eq!(kept + log_a.len(), total);
    assert!(log_a.iter().all(|e| matches!(e, NoiseEvent::ObjectDropped { .. })));
    // 0.5 drop rate over roughly 80 objects: both outcomes must occur.
    assert!(kept > 0 && !log_a.is_empty());
}

#[tokio::test]
async fn box_jitter_stays_within_bound() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dataset(dir.path(), 11, 20, LabelMix::default());
    let noise = NoiseProfile {
        box_jitter_px: 6,
        ..NoiseProfile::seeded(11)
    };
    let engine = oracle_engine(dir.path(), &noise);
    let mut moved = 0;
    for pair in &pairs {
        for obj in &pair.truth.as_ref().unwrap().key_objects {
            let t = TraceRecorder::new();
            let boxes = engine.backends().detect(&pair.raw, &obj.name, &t).await.unwrap();
            let b = boxes[0];
            let d = |a: u64, b: u64| a.abs_diff(b);
            assert!(d(b.x as u64, obj.bbox.x as u64) <= 6);
            assert!(d(b.y as u64, obj.bbox.y as u64) <= 6);
            assert!(d(b.right(), obj.bbox.right()) <= 6);
            assert!(d(b.bottom(), obj.bbox.bottom()) <= 6);
            moved += usize::from(b != obj.bbox);
        }
    }
    assert!(moved > 0);
}

#[tokio::test]
async fn ocr_errors_keep_token_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dataset(dir.path(), 3, 30, LabelMix::default());
    let noise = NoiseProfile {
        char_error_rate: 0.2,
        ..NoiseProfile::seeded(3)
    };
    let engine = oracle_engine(dir.path(), &noise);
    let (mut chars, mut wrong) = (0usize, 0usize);
    for pair in &pairs {
        let truth = pair.truth.as_ref().unwrap().ocr.clone().unwrap();
        let t = TraceRecorder::new();
        let got = engine.backends().ocr(&pair.raw, &t).await.unwrap();
        let again = engine.backends().ocr(&pair.raw, &t).await.unwrap();
        assert_eq!(got, again);
        let mut expected = truth.raw.clone();
        expected.sort_by_key(|t| (t.bbox.y, t.bbox.x));
        assert_eq!(got.len(), expected.len());
        for (g, e) in got.iter().zip(&expected) {
            assert_eq!(g.bbox, e.bbox);
            assert_eq!(g.text.chars().count(), e.text.chars().count());
            chars += e.text.chars().count();
            wrong += g.text.chars().zip(e.text.chars()).filter(|(a, b)| a != b).count();
        }
    }
    let rate = wrong as f64 / chars as f64;
    assert!((0.1..0.3).contains(&rate), "observed error rate {rate}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn verdict_flips_explain_every_vim_error() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dataset(dir.path(), 5, 80, LabelMix::default());
    let noise = NoiseProfile {
        verdict_flip_prob: 0.2,
        ..NoiseProfile::seeded(5)
    };
    let engine = oracle_engine(dir.path(), &noise);
    let report = evaluate(&pairs, PipelineKind::Vim, &engine).await;
    let flipped: BTreeSet<String> = engine
        .backends()
        .backend(BackendKind::Verdict)
        .noise_log()
        .unwrap()
        .into_iter()
        .map(|e| match e {
            NoiseEvent::VerdictFlipped { scene } => scene,
            other => panic!("unexpected event {other:?}"),
        })
        .collect();
    let wrong: BTreeSet<String> = report
        .results
        .outcomes
        .iter()
        .filter(|o| o.predicted_attacked != Some(o.label == SceneLabel::Vim))
        .map(|o| o.scene_id.clone())
        .collect();
    assert_eq!(wrong, flipped);
    assert!(!flipped.is_empty());
}

#[tokio::test]
async fn unreachable_backend_is_a_stage_failure() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dataset(dir.path(), 1, 2, LabelMix::default());
    let mut config = PipelineConfig::with_oracle(dir.path(), &NoiseProfile::default());
    let ep = config.endpoints.get_mut(BackendKind::Verdict);
    // Port 9 (discard) on loopback: nothing listens there in the sandbox.
    ep.locator = "http://127.0.0.1:9/".into();
    ep.timeout_ms = 2000;
    ep.retries = 0;
    let engine = Engine::new(config).unwrap();
    let failure = engine.detect_vim(&pairs[0]).await.unwrap_err();
    assert_eq!(failure.error.stage_name(), "verdict");

    let report = arsentinel_core::vim::VimReport::from_failure(&failure, arsentinel_core::FailPolicy::FailClosed);
    assert_eq!(report.status, ReportStatus::UndeterminedTreatAsAttacked);
    assert!(report.verdict.attacked);
    let report = arsentinel_core::vim::VimReport::from_failure(&failure, arsentinel_core::FailPolicy::FailOpen);
    assert_eq!(report.status, ReportStatus::UndeterminedTreatAsClear);
    assert!(!report.verdict.attacked);
}

#[test]
fn endpoint_set_roundtrips_through_json() {
    let set = EndpointSet::oracle("/data/scenes", &NoiseProfile::seeded(9));
    let json = serde_json::to_string(&set).unwrap();
    let back: EndpointSet = serde_json::from_str(&json).unwrap();
    assert_eq!(set, back);
}
