use hoi_core::distillation::{DistillConfig, Restriction};
use hoi_core::evaluation::{evaluate, EvalOptions};
use hoi_core::harness::io::{self, schema, LossRecord, TargetRecord};
use hoi_core::harness::pipeline::{build_targets, run_loss, run_match, LossConfig};
use hoi_core::harness::sim::{generate_corpus, SimConfig};
use hoi_core::matching::{MatchConfig, QueryLabel};

fn corpus(seed: u64, box_noise: f64) -> hoi_core::harness::sim::Corpus {
    generate_corpus(&SimConfig { seed, scenes: 12, box_noise, ..SimConfig::default() }).unwrap()
}

#[test]
fn noiseless_corpus_scores_perfectly() {
    let c = corpus(3, 0.0);
    let rep =
        evaluate(&c.detections, &c.scenes, &c.vocab, &c.splits, Some(&c.predictions), &[3, 5], &EvalOptions::default())
            .unwrap();
    for (name, v) in &rep.map {
        assert_eq!(*v, Some(1.0), "{name}");
    }
    for v in rep.unseen_recall.values() {
        assert!(v.is_none_or(|r| r == 1.0), "{v:?}");
    }
}

#[test]
fn noiseless_matching_recovers_annotations() {
    let c = corpus(4, 0.0);
    let results = run_match(&c.scenes, &c.predictions, &MatchConfig::new(c.vocab.num_seen())).unwrap();
    for (s, r) in c.scenes.iter().zip(&results) {
        assert_eq!(r.count(QueryLabel::SeenMatch), s.seen_pairs().len());
        for &(q, i) in &r.stage1 {
            let (h, o, _) = s.seen_pairs()[i];
            let p = &c.predictions.iter().find(|p| p.scene_id == s.id).unwrap().predictions[q];
            assert_eq!((p.human, p.object), (s.boxes[h].bbox, s.boxes[o].bbox));
        }
    }
}

#[test]
fn unseen_only_targets_carry_no_seen_mass() {
    let c = corpus(5, 0.05);
    let results = run_match(&c.scenes, &c.predictions, &MatchConfig::new(c.vocab.num_seen())).unwrap();
    let cfg = DistillConfig { restriction: Restriction::UnseenOnly, ..DistillConfig::default() };
    let targets = build_targets(&c.scenes, &results, &c.similarities, &c.vocab, &c.validity, &cfg).unwrap();
    assert!(!targets.is_empty());
    for t in &targets {
        assert!(t.target.support.iter().all(|&a| !c.vocab.is_seen(a)));
        assert!((t.target.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn corpus_loss_is_scene_mean() {
    let c = corpus(6, 0.1);
    let results = run_match(&c.scenes, &c.predictions, &MatchConfig::new(c.vocab.num_seen())).unwrap();
    let targets =
        build_targets(&c.scenes, &results, &c.similarities, &c.vocab, &c.validity, &DistillConfig::default()).unwrap();
    let cfg = LossConfig::default();
    let records = run_loss(&c.scenes, &c.predictions, &results, &targets, c.vocab.num_seen(), &cfg).unwrap();
    assert_eq!(records.len(), c.scenes.len() + 1);
    let (last, per_scene) = records.split_last().unwrap();
    assert_eq!(last.scene_id, "*");
    let mean_clip = per_scene.iter().map(|r| r.breakdown.parts.clip).sum::<f64>() / per_scene.len() as f64;
    assert!((last.breakdown.parts.clip - mean_clip).abs() < 1e-12);
    for r in &records {
        let p = r.breakdown.parts;
        assert!([p.bbox, p.giou, p.obj, p.act, p.is, p.clip].iter().all(|v| *v >= 0.0 && v.is_finite()));
    }
}

#[test]
fn records_round_trip_through_files() {
    let c = corpus(8, 0.1);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    io::write_vocab(&p.join("vocab.jsonl"), &c.vocab).unwrap();
    io::write_text(&p.join("validity.csv"), &io::validity_to_csv(&c.vocab, &c.validity).unwrap()).unwrap();
    io::write_text(&p.join("splits.toml"), &io::splits_to_toml(&c.splits).unwrap()).unwrap();
    io::write_file(&p.join("scenes.jsonl"), schema::SCENES, &c.scenes).unwrap();
    io::write_file(&p.join("preds.jsonl"), schema::PREDICTIONS, &c.predictions).unwrap();

    let vocab = io::read_vocab(&p.join("vocab.jsonl")).unwrap();
    assert_eq!(vocab, c.vocab);
    assert_eq!(io::read_validity(&p.join("validity.csv"), &vocab).unwrap(), c.validity);
    assert_eq!(io::read_splits(&p.join("splits.toml")).unwrap(), c.splits);
    let scenes: Vec<hoi_core::matching::GroundTruthScene> =
        io::read_file(&p.join("scenes.jsonl"), schema::SCENES).unwrap();
    assert_eq!(scenes, c.scenes);
    let preds: Vec<hoi_core::matching::PredictionSet> =
        io::read_file(&p.join("preds.jsonl"), schema::PREDICTIONS).unwrap();
    assert_eq!(preds, c.predictions);
    // wrong schema is rejected
    assert!(io::read_file::<TargetRecord>(&p.join("scenes.jsonl"), schema::TARGETS).is_err());
    assert!(io::read_file::<LossRecord>(&p.join("missing.jsonl"), schema::LOSSES).is_err());
}

#[test]
fn box_noise_lowers_map_on_average() {
    let map = |noise: f64| {
        (0..6)
            .map(|seed| {
                let c = corpus(100 + seed, noise);
                evaluate(&c.detections, &c.scenes, &c.vocab, &c.splits, None, &[], &EvalOptions::default()).unwrap().map
                    ["full"]
                    .unwrap()
            })
            .sum::<f64>()
    };
    assert!(map(0.0) > map(0.3));
}
