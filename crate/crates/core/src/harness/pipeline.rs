//! Corpus-level glue between matching, teacher targets, losses and the
//! detection post-process.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::io::{LossRecord, SimilarityRecord, TargetRecord};
use super::HarnessError;
use crate::distillation::{distill_target, DistillConfig, DistillError, ValidityMatrix, Vocabulary};
use crate::evaluation::{compose_score, Detection};
use crate::geometry::BoxPair;
use crate::losses::{
    action_loss, box_losses, clip_distill_loss, interactive_score_loss, object_class_loss, total_loss, ActionLossForm,
    ActionTarget, ClassTarget, LossBreakdown, LossParts, LossWeights, MatchedBoxes, Reduction,
};
use crate::matching::{
    enumerate_unknown_pairs, seen_targets, two_stage_match, GroundTruthScene, MatchConfig, MatchResult, PairTarget,
    PredictionSet, QueryLabel,
};

fn by_scene(preds: &[PredictionSet]) -> HashMap<&str, &PredictionSet> {
    preds.iter().map(|p| (p.scene_id.as_str(), p)).collect()
}

fn lookup<'a, T>(map: &HashMap<&str, &'a T>, id: &str, what: &str) -> Result<&'a T, HarnessError> {
    map.get(id).copied().ok_or_else(|| HarnessError::Inputs(format!("no {what} for scene {id}")))
}

/// Two-stage matching for every scene, in scene order.
pub fn run_match(
    scenes: &[GroundTruthScene],
    preds: &[PredictionSet],
    config: &MatchConfig,
) -> Result<Vec<MatchResult>, HarnessError> {
    let index = by_scene(preds);
    let one = |s: &GroundTruthScene| -> Result<MatchResult, HarnessError> {
        Ok(two_stage_match(s, lookup(&index, &s.id, "predictions")?, config)?)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        scenes.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        scenes.iter().map(one).collect()
    }
}

/// Ground-truth pair a selected query was matched to.
fn matched_pair(result: &MatchResult, query: usize, seen: &[PairTarget], unknown: &[BoxPair]) -> Option<BoxPair> {
    match result.labels[query] {
        QueryLabel::SeenMatch => result.seen_pair_of(query).and_then(|i| seen.get(i)).map(|t| t.pair),
        QueryLabel::Potential => result.unknown_pair_of(query).and_then(|i| unknown.get(i)).copied(),
        _ => None,
    }
}

/// Teacher targets for the seen matches and potential pairs. The support is
/// built for the matched ground-truth object. Pairs whose object has no
/// admissible action under the restriction get no target.
pub fn build_targets(
    scenes: &[GroundTruthScene],
    matches: &[MatchResult],
    similarities: &[SimilarityRecord],
    vocab: &Vocabulary,
    validity: &ValidityMatrix,
    config: &DistillConfig,
) -> Result<Vec<TargetRecord>, HarnessError> {
    let sims: HashMap<(&str, usize), &[f64]> =
        similarities.iter().map(|r| ((r.scene_id.as_str(), r.query), r.similarities.as_slice())).collect();
    let results: HashMap<&str, &MatchResult> = matches.iter().map(|m| (m.scene_id.as_str(), m)).collect();
    let mut out = Vec::new();
    for scene in scenes {
        let result = lookup(&results, &scene.id, "match result")?;
        let seen = seen_targets(scene, vocab.num_seen());
        let unknown = enumerate_unknown_pairs(scene);
        for (q, label) in result.labels.iter().enumerate() {
            if !matches!(label, QueryLabel::SeenMatch | QueryLabel::Potential) {
                continue;
            }
            let pair = matched_pair(result, q, &seen, &unknown)
                .ok_or_else(|| HarnessError::Inputs(format!("scene {}: query {q} has no matched pair", scene.id)))?;
            let s = sims
                .get(&(scene.id.as_str(), q))
                .ok_or_else(|| HarnessError::Inputs(format!("no similarities for scene {} query {q}", scene.id)))?;
            match distill_target(s, pair.object_category, vocab, validity, config) {
                Ok(target) => out.push(TargetRecord {
                    scene_id: scene.id.clone(),
                    query: q,
                    object: pair.object_category,
                    target,
                }),
                Err(DistillError::EmptySupport(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub reduction: Reduction,
    pub action_form: ActionLossForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { weights: LossWeights::default(), reduction: Reduction::Mean, action_form: ActionLossForm::Bce }
    }
}

/// Loss terms for one scene.
///
/// Box terms cover seen matches and potential pairs. Those queries are
/// pushed towards their pair's object category and every other query
/// towards background. Action loss covers seen matches only.
pub fn scene_losses(
    scene: &GroundTruthScene,
    preds: &PredictionSet,
    result: &MatchResult,
    targets: &[&TargetRecord],
    seen_actions: usize,
    config: &LossConfig,
) -> Result<LossBreakdown, HarnessError> {
    if result.labels.len() != preds.len() || result.is_targets.len() != preds.len() {
        return Err(HarnessError::Inputs(format!("scene {}: match result does not cover every query", scene.id)));
    }
    let seen = seen_targets(scene, seen_actions);
    let unknown = enumerate_unknown_pairs(scene);
    let mut boxes = Vec::new();
    let mut classes = Vec::new();
    let mut actions = Vec::new();
    for (q, p) in preds.predictions.iter().enumerate() {
        let background = p.object_scores.len().saturating_sub(1);
        match matched_pair(result, q, &seen, &unknown) {
            Some(gt) => {
                boxes.push(MatchedBoxes {
                    pred_human: p.human,
                    pred_object: p.object,
                    gt_human: gt.human,
                    gt_object: gt.object,
                    frame: scene.frame(),
                });
                classes.push(ClassTarget { query: q, scores: &p.object_scores, class: gt.object_category });
            }
            None => classes.push(ClassTarget { query: q, scores: &p.object_scores, class: background }),
        }
        if result.labels[q] == QueryLabel::SeenMatch {
            if let Some(t) = result.seen_pair_of(q).and_then(|i| seen.get(i)).and_then(|t| t.actions.as_ref()) {
                actions.push(ActionTarget { label: QueryLabel::SeenMatch, scores: &p.action_scores, target: t });
            }
        }
    }
    let (bbox, giou) = box_losses(&boxes, config.reduction)?;
    let obj = object_class_loss(&classes, config.reduction)?;
    let act = action_loss(&actions, config.action_form, config.reduction)?;
    let scores: Vec<f64> = preds.predictions.iter().map(|p| p.interactive).collect();
    let is = interactive_score_loss(&result.is_targets, &scores, config.reduction)?;
    let mut distill = Vec::new();
    for t in targets {
        let p = preds
            .predictions
            .get(t.query)
            .ok_or_else(|| HarnessError::Inputs(format!("scene {}: target for missing query {}", scene.id, t.query)))?;
        distill.push((p.action_scores.as_slice(), &t.target));
    }
    let clip = clip_distill_loss(&distill, config.reduction)?;
    Ok(total_loss(LossParts { bbox, giou, obj, act, is, clip }, &config.weights))
}

/// Per-scene losses followed by a `"*"` record holding the mean of each
/// part over scenes and its weighted total.
pub fn run_loss(
    scenes: &[GroundTruthScene],
    preds: &[PredictionSet],
    matches: &[MatchResult],
    targets: &[TargetRecord],
    seen_actions: usize,
    config: &LossConfig,
) -> Result<Vec<LossRecord>, HarnessError> {
    config.weights.validate()?;
    let pindex = by_scene(preds);
    let mindex: HashMap<&str, &MatchResult> = matches.iter().map(|m| (m.scene_id.as_str(), m)).collect();
    let mut per_scene: HashMap<&str, Vec<&TargetRecord>> = HashMap::new();
    for t in targets {
        per_scene.entry(t.scene_id.as_str()).or_default().push(t);
    }
    let mut out = Vec::with_capacity(scenes.len() + 1);
    let mut sum = LossParts::default();
    for s in scenes {
        let ts = per_scene.get(s.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        let b = scene_losses(
            s,
            lookup(&pindex, &s.id, "predictions")?,
            lookup(&mindex, &s.id, "match result")?,
            ts,
            seen_actions,
            config,
        )?;
        sum.bbox += b.parts.bbox;
        sum.giou += b.parts.giou;
        sum.obj += b.parts.obj;
        sum.act += b.parts.act;
        sum.is += b.parts.is;
        sum.clip += b.parts.clip;
        out.push(LossRecord { scene_id: s.id.clone(), breakdown: b });
    }
    let n = scenes.len().max(1) as f64;
    let mean = LossParts {
        bbox: sum.bbox / n,
        giou: sum.giou / n,
        obj: sum.obj / n,
        act: sum.act / n,
        is: sum.is / n,
        clip: sum.clip / n,
    };
    out.push(LossRecord { scene_id: "*".into(), breakdown: total_loss(mean, &config.weights) });
    Ok(out)
}

/// Turns query outputs into scored triplets: the object category is the
/// non-background arg-max and every HOI category of that object yields one
/// detection scored object x action (x interactive). Zero scores are dropped.
pub fn detections_from_predictions(
    preds: &[PredictionSet],
    vocab: &Vocabulary,
    use_interactive: bool,
) -> Result<Vec<Detection>, HarnessError> {
    let mut out = Vec::new();
    for set in preds {
        for p in &set.predictions {
            let Some(obj) = p.predicted_object() else { continue };
            for &(a, o) in vocab.hois() {
                if o != obj {
                    continue;
                }
                let act = *p.action_scores.get(a).ok_or_else(|| {
                    HarnessError::Inputs(format!("scene {}: query {} lacks action {a}", set.scene_id, p.query))
                })?;
                let score = compose_score(p.object_scores[obj], act, use_interactive.then_some(p.interactive))?;
                if score > 0.0 {
                    out.push(Detection {
                        scene_id: set.scene_id.clone(),
                        human: p.human,
                        object: p.object,
                        object_category: obj,
                        action: a,
                        score,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Count of POTENTIAL labels across results.
pub fn potential_count(results: &[MatchResult]) -> usize {
    results.iter().map(|r| r.count(QueryLabel::Potential)).sum()
}
