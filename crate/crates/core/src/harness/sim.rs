//! Seeded synthetic scenes, query outputs and teacher similarities.
//!
//! Randomness comes from ChaCha8 seeded with `seed`: stream 0 draws the
//! vocabulary and stream `i + 1` draws scene `i`, so scenes can be generated
//! in any order or in parallel with identical results.
//!
//! Boxes are placed in distinct cells of a grid over the image, so
//! ground-truth boxes never overlap. Every interactive pair gets one query
//! that copies it with Gaussian box jitter; the remaining queries are
//! distractors, half of them jittered copies of non-interactive pairings
//! and half random boxes, all with scores below those of the copies when
//! noise is zero.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::io::SimilarityRecord;
use super::pipeline::detections_from_predictions;
use super::HarnessError;
use crate::distillation::{Action, ValidityMatrix, Vocabulary};
use crate::evaluation::{Detection, Scenario, SplitConfig};
use crate::geometry::BBox;
use crate::matching::{AnnotatedBox, GroundTruthScene, Prediction, PredictionSet, Triplet, PERSON_CATEGORY};

/// Simulation knobs. Fields missing from a TOML config keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub scenes: usize,
    pub humans: (usize, usize),
    /// Non-person object boxes per scene.
    pub objects: (usize, usize),
    /// Interactive pairs per scene.
    pub interactions: (usize, usize),
    /// Probability that an interactive pair is annotated (seen) rather
    /// than held out.
    pub seen_fraction: f64,
    /// Box jitter standard deviation as a fraction of box width/height.
    pub box_noise: f64,
    /// Standard deviation of the score perturbation.
    pub score_noise: f64,
    pub queries: usize,
    pub seen_actions: usize,
    pub unseen_actions: usize,
    /// Object categories including the person category.
    pub object_categories: usize,
    /// Valid actions per object category.
    pub actions_per_object: (usize, usize),
    /// Similarity margin of the true HOI over the background level.
    pub similarity_margin: f64,
    pub image: (f64, f64),
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenes: 10,
            humans: (1, 3),
            objects: (1, 4),
            interactions: (1, 3),
            seen_fraction: 0.7,
            box_noise: 0.0,
            score_noise: 0.0,
            queries: crate::matching::DEFAULT_QUERIES,
            seen_actions: 6,
            unseen_actions: 3,
            object_categories: 6,
            actions_per_object: (2, 4),
            similarity_margin: 0.05,
            image: (640.0, 480.0),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        let range_ok = |r: (usize, usize)| r.0 <= r.1;
        if !(range_ok(self.humans)
            && range_ok(self.objects)
            && range_ok(self.interactions)
            && range_ok(self.actions_per_object))
        {
            return bad("ranges need min <= max");
        }
        if self.humans.0 == 0 {
            return bad("every scene needs at least one human");
        }
        if !(0.0..=1.0).contains(&self.seen_fraction) {
            return bad("seen_fraction must lie in [0, 1]");
        }
        if !(self.box_noise >= 0.0 && self.score_noise >= 0.0 && self.similarity_margin >= 0.0) {
            return bad("noise levels and margin must be non-negative");
        }
        if self.queries == 0 || self.seen_actions == 0 || self.object_categories < 2 {
            return bad("need queries, at least one seen action and one non-person category");
        }
        if self.actions_per_object.0 == 0 || self.actions_per_object.1 > self.seen_actions + self.unseen_actions {
            return bad("actions_per_object must lie in 1..=total actions");
        }
        if self.interactions.1 > self.queries {
            return bad("more interactive pairs than queries");
        }
        if !(self.image.0 > 0.0 && self.image.1 > 0.0) {
            return bad("image size must be positive");
        }
        Ok(())
    }

    fn stream(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Everything the pipeline consumes, generated together.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub validity: ValidityMatrix,
    pub splits: SplitConfig,
    pub scenes: Vec<GroundTruthScene>,
    pub predictions: Vec<PredictionSet>,
    pub similarities: Vec<SimilarityRecord>,
    pub detections: Vec<Detection>,
}

fn synth_vocab(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Vocabulary {
    let total = cfg.seen_actions + cfg.unseen_actions;
    let actions: Vec<Action> =
        (0..total).map(|i| Action { name: format!("action{i:02}"), seen: i < cfg.seen_actions }).collect();
    let mut objects = vec!["person".to_string()];
    objects.extend((1..cfg.object_categories).map(|i| format!("object{i:02}")));
    let mut hois = Vec::new();
    let all: Vec<usize> = (0..total).collect();
    for o in 0..cfg.object_categories {
        let k = rng.random_range(cfg.actions_per_object.0..=cfg.actions_per_object.1);
        let mut chosen: Vec<usize> = all.choose_multiple(rng, k).copied().collect();
        chosen.sort_unstable();
        hois.extend(chosen.into_iter().map(|a| (a, o)));
    }
    // every action needs at least one object
    for a in 0..total {
        if !hois.iter().any(|h| h.0 == a) {
            hois.push((a, rng.random_range(0..cfg.object_categories)));
        }
    }
    Vocabulary::new(actions, objects, hois).expect("synthetic vocabulary is consistent")
}

/// Boxes in distinct cells of a `g x g` grid, each covering 40-90% of its
/// cell in each direction.
fn grid_boxes(n: usize, image: (f64, f64), rng: &mut ChaCha8Rng) -> Vec<BBox> {
    let g = (n as f64).sqrt().ceil().max(1.0) as usize;
    let mut cells: Vec<usize> = (0..g * g).collect();
    cells.shuffle(rng);
    let (cw, ch) = (image.0 / g as f64, image.1 / g as f64);
    cells[..n]
        .iter()
        .map(|&c| {
            let (cx0, cy0) = ((c % g) as f64 * cw, (c / g) as f64 * ch);
            let (w, h) = (cw * rng.random_range(0.4..0.9), ch * rng.random_range(0.4..0.9));
            let (x, y) = (cx0 + rng.random_range(0.0..cw - w), cy0 + rng.random_range(0.0..ch - h));
            BBox::new(x, y, x + w, y + h).expect("grid box")
        })
        .collect()
}

fn jitter(b: &BBox, noise: f64, rng: &mut ChaCha8Rng) -> BBox {
    if noise == 0.0 {
        return *b;
    }
    let nx = Normal::new(0.0, noise * b.width().max(1e-6)).expect("finite std");
    let ny = Normal::new(0.0, noise * b.height().max(1e-6)).expect("finite std");
    let (x0, x1) = (b.x_min() + nx.sample(rng), b.x_max() + nx.sample(rng));
    let (y0, y1) = (b.y_min() + ny.sample(rng), b.y_max() + ny.sample(rng));
    BBox::new(x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1)).expect("finite jittered box")
}

fn half_normal(sigma: f64, rng: &mut ChaCha8Rng) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sigma).expect("finite std").sample(rng).abs()
    }
}

/// Object distribution with `peak` at `class` and the rest spread evenly.
fn peaked(slots: usize, class: usize, peak: f64) -> Vec<f64> {
    let rest = (1.0 - peak) / (slots - 1) as f64;
    (0..slots).map(|k| if k == class { peak } else { rest }).collect()
}

fn random_box(image: (f64, f64), rng: &mut ChaCha8Rng) -> BBox {
    let w = rng.random_range(0.05..0.4) * image.0;
    let h = rng.random_range(0.05..0.4) * image.1;
    let x = rng.random_range(0.0..image.0 - w);
    let y = rng.random_range(0.0..image.1 - h);
    BBox::new(x, y, x + w, y + h).expect("random box")
}

struct SceneDraw {
    scene: GroundTruthScene,
    preds: PredictionSet,
    sims: Vec<SimilarityRecord>,
}

fn synth_scene(cfg: &SimConfig, vocab: &Vocabulary, index: usize) -> Result<SceneDraw, HarnessError> {
    let mut rng = cfg.stream(index as u64 + 1);
    let id = format!("scene{index:05}");
    let nh = rng.random_range(cfg.humans.0..=cfg.humans.1);
    let no = rng.random_range(cfg.objects.0..=cfg.objects.1);
    let geo = grid_boxes(nh + no, cfg.image, &mut rng);
    let boxes: Vec<AnnotatedBox> = geo
        .iter()
        .enumerate()
        .map(|(i, &b)| AnnotatedBox {
            bbox: b,
            category: if i < nh { PERSON_CATEGORY } else { rng.random_range(1..cfg.object_categories) },
        })
        .collect();

    let mut pairings: Vec<(usize, usize)> =
        (0..nh).flat_map(|h| (0..boxes.len()).filter(move |&o| o != h).map(move |o| (h, o))).collect();
    if cfg.interactions.0 > pairings.len() {
        return Err(HarnessError::Config(format!(
            "scene {index}: at least {} interactive pairs requested but only {} pairings exist",
            cfg.interactions.0,
            pairings.len()
        )));
    }
    let wanted = rng.random_range(cfg.interactions.0..=cfg.interactions.1).min(pairings.len());
    pairings.shuffle(&mut rng);
    let (interactive, rest) = pairings.split_at(wanted);

    let mut seen = Vec::new();
    let mut held_out = Vec::new();
    for &(h, o) in interactive {
        let cat = boxes[o].category;
        let valid: Vec<usize> = vocab.hois().iter().filter(|x| x.1 == cat).map(|x| x.0).collect();
        let (vs, vu): (Vec<usize>, Vec<usize>) = valid.iter().partition(|&&a| vocab.is_seen(a));
        let want_seen = rng.random_bool(cfg.seen_fraction);
        let pool = match (want_seen, vs.is_empty(), vu.is_empty()) {
            (true, false, _) | (false, false, true) => (&vs, true),
            _ => (&vu, false),
        };
        let k = rng.random_range(1..=pool.0.len().min(2));
        let mut acts: Vec<usize> = pool.0.choose_multiple(&mut rng, k).copied().collect();
        acts.sort_unstable();
        let t = Triplet { human: h, object: o, actions: acts };
        if pool.1 {
            seen.push(t);
        } else {
            held_out.push(t);
        }
    }
    let scene = GroundTruthScene { id: id.clone(), width: cfg.image.0, height: cfg.image.1, boxes, seen, held_out };

    let n_actions = vocab.actions().len();
    let obj_slots = vocab.objects().len() + 1;
    let mut preds = Vec::with_capacity(cfg.queries);
    let mut truth_hoi: Vec<Vec<usize>> = Vec::with_capacity(cfg.queries);
    for t in scene.seen.iter().chain(&scene.held_out) {
        let cat = scene.boxes[t.object].category;
        let mut acts = vec![0.0; n_actions];
        for &(a, o) in vocab.hois() {
            if o == cat {
                acts[a] = half_normal(cfg.score_noise, &mut rng).min(1.0);
            }
        }
        for &a in &t.actions {
            acts[a] = 1.0 - half_normal(cfg.score_noise, &mut rng).min(1.0);
        }
        preds.push(Prediction {
            query: 0,
            human: jitter(&scene.boxes[t.human].bbox, cfg.box_noise, &mut rng),
            object: jitter(&scene.boxes[t.object].bbox, cfg.box_noise, &mut rng),
            object_scores: peaked(obj_slots, cat, 1.0 - half_normal(cfg.score_noise, &mut rng).min(0.5)),
            action_scores: acts,
            interactive: 1.0 - half_normal(cfg.score_noise, &mut rng).min(1.0),
        });
        truth_hoi.push(t.actions.iter().filter_map(|&a| vocab.hoi_index(a, cat)).collect());
    }
    let mut rest_iter = rest.iter().cycle();
    while preds.len() < cfg.queries {
        let on_pair = !rest.is_empty() && rng.random_bool(0.5);
        let (human, object, cat) = if on_pair {
            let &(h, o) = rest_iter.next().expect("non-empty");
            let b = &scene.boxes;
            (
                jitter(&b[h].bbox, cfg.box_noise.max(0.05), &mut rng),
                jitter(&b[o].bbox, cfg.box_noise.max(0.05), &mut rng),
                b[o].category,
            )
        } else {
            (
                random_box(cfg.image, &mut rng),
                random_box(cfg.image, &mut rng),
                rng.random_range(0..cfg.object_categories),
            )
        };
        let acts = (0..n_actions).map(|_| rng.random_range(0.0..0.9)).collect();
        preds.push(Prediction {
            query: 0,
            human,
            object,
            object_scores: peaked(obj_slots, cat, rng.random_range(0.3..0.9)),
            action_scores: acts,
            interactive: rng.random_range(0.0..0.6),
        });
        truth_hoi.push(Vec::new());
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.shuffle(&mut rng);
    let mut shuffled = Vec::with_capacity(preds.len());
    let mut sims = Vec::with_capacity(preds.len());
    for (q, &k) in order.iter().enumerate() {
        let mut p = preds[k].clone();
        p.query = q;
        shuffled.push(p);
        let mut s: Vec<f64> = (0..vocab.hois().len()).map(|_| rng.random_range(0.15..0.25)).collect();
        for &h in &truth_hoi[k] {
            s[h] = 0.25 + cfg.similarity_margin;
        }
        sims.push(SimilarityRecord { scene_id: id.clone(), query: q, similarities: s });
    }
    Ok(SceneDraw { scene, preds: PredictionSet { scene_id: id, predictions: shuffled }, sims })
}

pub fn generate_corpus(cfg: &SimConfig) -> Result<Corpus, HarnessError> {
    cfg.validate()?;
    let vocab = synth_vocab(cfg, &mut cfg.stream(0));
    let validity = ValidityMatrix::from_vocabulary(&vocab);
    let draw = |i: usize| synth_scene(cfg, &vocab, i);
    #[cfg(feature = "parallel")]
    let draws: Vec<SceneDraw> = {
        use rayon::prelude::*;
        (0..cfg.scenes).into_par_iter().map(draw).collect::<Result<_, _>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let draws: Vec<SceneDraw> = (0..cfg.scenes).map(draw).collect::<Result<_, _>>()?;

    let mut scenes = Vec::with_capacity(draws.len());
    let mut predictions = Vec::with_capacity(draws.len());
    let mut similarities = Vec::new();
    for d in draws {
        scenes.push(d.scene);
        predictions.push(d.preds);
        similarities.extend(d.sims);
    }
    let detections = detections_from_predictions(&predictions, &vocab, true)?;
    let splits = SplitConfig::from_action_flags(&vocab, Scenario::UnseenAction);
    Ok(Corpus { vocab, validity, splits, scenes, predictions, similarities, detections })
}
