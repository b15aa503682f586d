//! Two-stage bipartite matching of detector queries to annotated and
//! unknown human-object pairs, and the interactive-score targets derived
//! from it.
//!
//! Stage one matches all queries to the annotated (seen) pairs with the full
//! cost. Stage two matches the leftover queries to every unannotated pairing
//! of a human box with another box, using the action-free cost. Among the
//! stage-two matches, queries whose interactive score clears `thres_is` are
//! ranked by score and at most `topk` of them become potential interactive
//! pairs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{hungarian, pair_cost, ActionCost, AssignmentError, CostMatrix, CostMode, CostWeights};
use crate::geometry::{BBox, BoxPair};

/// Object category index of the person class. Every box of this category is
/// a human box; person boxes may also serve as objects.
pub const PERSON_CATEGORY: usize = 0;

/// Default query count.
pub const DEFAULT_QUERIES: usize = 64;
pub const DEFAULT_TOPK: usize = 3;
pub const DEFAULT_THRES_IS: f64 = 0.5;
pub const DEFAULT_IOU_THRESH: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("scene {scene}: {reason}")]
    InvalidScene { scene: String, reason: String },
    #[error("scene {scene}: {seen} annotated pairs exceed {queries} queries")]
    TooManySeenPairs { scene: String, seen: usize, queries: usize },
    #[error("prediction set for scene {preds} does not belong to scene {scene}")]
    SceneMismatch { scene: String, preds: String },
    #[error("prediction set is empty")]
    NoQueries,
    #[error("query {query}: {reason}")]
    InvalidPrediction { query: usize, reason: String },
    #[error("thres_is must lie in [0, 1], got {0}")]
    Threshold(f64),
    #[error("match result does not fit this scene or prediction set: {0}")]
    ResultMismatch(String),
    #[error(transparent)]
    Cost(#[from] AssignmentError),
}

/// An annotated box and its object category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedBox {
    pub bbox: BBox,
    pub category: usize,
}

/// A human-object pair with its action indices. `human` and `object` index
/// into the scene's box list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub human: usize,
    pub object: usize,
    pub actions: Vec<usize>,
}

/// Ground truth for one image.
///
/// `seen` holds the training annotations; their actions are all seen
/// actions. `held_out` holds interactions that exist in the image but are
/// withheld from training (unseen actions or held-out combinations). They
/// count as unknown pairs during matching and are only used for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthScene {
    pub id: String,
    pub width: f64,
    pub height: f64,
    pub boxes: Vec<AnnotatedBox>,
    pub seen: Vec<Triplet>,
    #[serde(default)]
    pub held_out: Vec<Triplet>,
}

impl GroundTruthScene {
    pub fn frame(&self) -> (f64, f64) {
        (self.width, self.height)
    }

    pub fn human_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.boxes.iter().enumerate().filter(|(_, b)| b.category == PERSON_CATEGORY).map(|(i, _)| i)
    }

    pub fn box_pair(&self, human: usize, object: usize) -> BoxPair {
        BoxPair::new(self.boxes[human].bbox, self.boxes[object].bbox, self.boxes[object].category)
    }

    /// Number of `(human, other box)` pairings.
    pub fn enumerable_pairs(&self) -> usize {
        self.human_indices().count() * self.boxes.len().saturating_sub(1)
    }

    fn invalid(&self, reason: impl Into<String>) -> MatchError {
        MatchError::InvalidScene { scene: self.id.clone(), reason: reason.into() }
    }

    fn check_triplet(&self, t: &Triplet, seen_actions: Option<usize>) -> Result<(), MatchError> {
        let n = self.boxes.len();
        if t.human >= n || t.object >= n {
            return Err(self.invalid(format!("triplet ({}, {}) references a missing box", t.human, t.object)));
        }
        if self.boxes[t.human].category != PERSON_CATEGORY {
            return Err(self.invalid(format!("box {} is not a person box", t.human)));
        }
        if t.human == t.object {
            return Err(self.invalid(format!("box {} paired with itself", t.human)));
        }
        if t.actions.is_empty() {
            return Err(self.invalid("triplet without actions"));
        }
        if let Some(k) = seen_actions {
            if let Some(a) = t.actions.iter().find(|&&a| a >= k) {
                return Err(self.invalid(format!("annotated action {a} is not a seen action (seen count {k})")));
            }
        }
        Ok(())
    }

    /// Checks box geometry and triplet references. `seen_actions` is the
    /// size of the seen action set, which bounds annotated action indices.
    pub fn validate(&self, seen_actions: usize) -> Result<(), MatchError> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(self.invalid("image dimensions must be positive"));
        }
        for t in &self.seen {
            self.check_triplet(t, Some(seen_actions))?;
        }
        for t in &self.held_out {
            self.check_triplet(t, None)?;
        }
        Ok(())
    }

    /// Annotated pairs with actions merged per `(human, object)`, in order
    /// of first appearance.
    pub fn seen_pairs(&self) -> Vec<(usize, usize, Vec<usize>)> {
        merge_pairs(&self.seen)
    }

    /// Held-out pairs with actions merged per `(human, object)`.
    pub fn held_out_pairs(&self) -> Vec<(usize, usize, Vec<usize>)> {
        merge_pairs(&self.held_out)
    }
}

fn merge_pairs(triplets: &[Triplet]) -> Vec<(usize, usize, Vec<usize>)> {
    let mut order: Vec<(usize, usize)> = Vec::new();
    let mut acts: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for t in triplets {
        let e = acts.entry((t.human, t.object)).or_insert_with(|| {
            order.push((t.human, t.object));
            Vec::new()
        });
        for &a in &t.actions {
            if !e.contains(&a) {
                e.push(a);
            }
        }
    }
    order
        .into_iter()
        .map(|k| {
            let mut a = acts.remove(&k).unwrap_or_default();
            a.sort_unstable();
            (k.0, k.1, a)
        })
        .collect()
}

/// A matching target: a box pair plus, for annotated pairs, the multi-hot
/// vector over seen actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTarget {
    pub pair: BoxPair,
    pub actions: Option<Vec<bool>>,
}

/// One query's output. Boxes are in image coordinates; the normalized
/// center form is derived from the scene frame when needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub query: usize,
    pub human: BBox,
    pub object: BBox,
    /// Probabilities over object categories followed by a background slot.
    pub object_scores: Vec<f64>,
    /// Probabilities over seen then unseen actions.
    pub action_scores: Vec<f64>,
    /// Probability that the pair interacts.
    pub interactive: f64,
}

impl Prediction {
    pub fn pair(&self) -> BoxPair {
        BoxPair::new(self.human, self.object, self.predicted_object().unwrap_or(0))
    }

    /// Arg-max over object categories, excluding the background slot.
    pub fn predicted_object(&self) -> Option<usize> {
        let n = self.object_scores.len().checked_sub(1)?;
        (0..n).fold(None, |best: Option<usize>, k| match best {
            Some(b) if self.object_scores[b] >= self.object_scores[k] => Some(b),
            _ => Some(k),
        })
    }
}

/// All queries for one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub scene_id: String,
    pub predictions: Vec<Prediction>,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    /// Checks query numbering, vector lengths and score ranges.
    pub fn validate(&self, object_slots: usize, action_slots: usize) -> Result<(), MatchError> {
        if self.predictions.is_empty() {
            return Err(MatchError::NoQueries);
        }
        for (i, p) in self.predictions.iter().enumerate() {
            let bad = |reason: String| MatchError::InvalidPrediction { query: p.query, reason };
            if p.query != i {
                return Err(bad(format!("expected query index {i}")));
            }
            if p.object_scores.len() != object_slots {
                return Err(bad(format!("{} object scores, expected {object_slots}", p.object_scores.len())));
            }
            if p.action_scores.len() != action_slots {
                return Err(bad(format!("{} action scores, expected {action_slots}", p.action_scores.len())));
            }
            let in_unit = |v: f64| (0.0..=1.0).contains(&v);
            if !in_unit(p.interactive) || !p.action_scores.iter().chain(&p.object_scores).all(|&v| in_unit(v)) {
                return Err(bad("scores must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Per-query outcome of matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QueryLabel {
    SeenMatch,
    Potential,
    NonInteractive,
    NoPair,
    /// Not selected, but sits on an unknown pair; interactive loss skipped.
    Omitted,
}

/// Supervision for the interactive-score head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsTarget {
    Positive,
    Negative,
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub weights: CostWeights,
    pub action_cost: ActionCost,
    pub topk: usize,
    pub thres_is: f64,
    pub iou_thresh: f64,
    /// Size of the seen action set; annotated action vectors cover these
    /// leading action slots.
    pub seen_actions: usize,
}

impl MatchConfig {
    pub fn new(seen_actions: usize) -> Self {
        Self {
            weights: CostWeights::default(),
            action_cost: ActionCost::default(),
            topk: DEFAULT_TOPK,
            thres_is: DEFAULT_THRES_IS,
            iou_thresh: DEFAULT_IOU_THRESH,
            seen_actions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub scene_id: String,
    /// `(query, seen pair index)` in seen-pair order.
    pub stage1: Vec<(usize, usize)>,
    /// `(query, unknown pair index)` in unknown-pair order.
    pub stage2: Vec<(usize, usize)>,
    pub labels: Vec<QueryLabel>,
    pub is_targets: Vec<IsTarget>,
}

impl MatchResult {
    pub fn count(&self, label: QueryLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Seen pair index for a query matched in stage one.
    pub fn seen_pair_of(&self, query: usize) -> Option<usize> {
        self.stage1.iter().find(|m| m.0 == query).map(|m| m.1)
    }

    /// Unknown pair index for a query matched in stage two.
    pub fn unknown_pair_of(&self, query: usize) -> Option<usize> {
        self.stage2.iter().find(|m| m.0 == query).map(|m| m.1)
    }
}

/// Every `(human, other box)` pairing absent from the annotations, human
/// index major and object index minor. Returns box-index pairs.
pub fn unknown_pair_indices(scene: &GroundTruthScene) -> Vec<(usize, usize)> {
    let seen: Vec<(usize, usize)> = scene.seen.iter().map(|t| (t.human, t.object)).collect();
    let mut out = Vec::new();
    for h in scene.human_indices() {
        for o in 0..scene.boxes.len() {
            if o != h && !seen.contains(&(h, o)) {
                out.push((h, o));
            }
        }
    }
    out
}

pub fn enumerate_unknown_pairs(scene: &GroundTruthScene) -> Vec<BoxPair> {
    unknown_pair_indices(scene).into_iter().map(|(h, o)| scene.box_pair(h, o)).collect()
}

/// Seen-pair matching targets in [`GroundTruthScene::seen_pairs`] order.
pub fn seen_targets(scene: &GroundTruthScene, seen_actions: usize) -> Vec<PairTarget> {
    scene
        .seen_pairs()
        .into_iter()
        .map(|(h, o, acts)| {
            let mut hot = vec![false; seen_actions];
            for a in acts {
                hot[a] = true;
            }
            PairTarget { pair: scene.box_pair(h, o), actions: Some(hot) }
        })
        .collect()
}

pub fn unknown_targets(scene: &GroundTruthScene) -> Vec<PairTarget> {
    enumerate_unknown_pairs(scene).into_iter().map(|pair| PairTarget { pair, actions: None }).collect()
}

/// Solves one stage. Rows are the listed queries, columns the targets; when
/// targets outnumber queries the problem is solved transposed so that every
/// query gets a target. Returns `(query, target index)` pairs sorted by
/// target index.
fn solve_stage(
    scene: &GroundTruthScene,
    preds: &PredictionSet,
    queries: &[usize],
    targets: &[PairTarget],
    weights: &CostWeights,
    mode: CostMode,
) -> Result<Vec<(usize, usize)>, MatchError> {
    if queries.is_empty() || targets.is_empty() {
        return Ok(Vec::new());
    }
    let mut costs = Vec::with_capacity(queries.len() * targets.len());
    for &q in queries {
        for t in targets {
            costs.push(pair_cost(&preds.predictions[q], t, scene.frame(), weights, mode)?);
        }
    }
    let (nq, nt) = (queries.len(), targets.len());
    let mut out = if nq >= nt {
        let m = CostMatrix::with_ids(costs, queries.to_vec(), (0..nt).collect())?;
        hungarian(&m).mapped(&m)
    } else {
        let mut t = vec![0.0; costs.len()];
        for r in 0..nq {
            for c in 0..nt {
                t[c * nq + r] = costs[r * nt + c];
            }
        }
        let m = CostMatrix::with_ids(t, (0..nt).collect(), queries.to_vec())?;
        hungarian(&m).mapped(&m).into_iter().map(|(target, query)| (query, target)).collect()
    };
    out.sort_by_key(|&(_, t)| t);
    Ok(out)
}

/// Queries that clear `thres_is`, best score first, ties by query index,
/// truncated to `topk`.
pub fn select_potential(preds: &PredictionSet, stage2: &[(usize, usize)], topk: usize, thres_is: f64) -> Vec<usize> {
    let mut cands: Vec<usize> =
        stage2.iter().map(|m| m.0).filter(|&q| preds.predictions[q].interactive > thres_is).collect();
    cands.sort_by(|&a, &b| {
        let (sa, sb) = (preds.predictions[a].interactive, preds.predictions[b].interactive);
        sb.total_cmp(&sa).then(a.cmp(&b))
    });
    cands.truncate(topk);
    cands
}

pub fn two_stage_match(
    scene: &GroundTruthScene,
    preds: &PredictionSet,
    config: &MatchConfig,
) -> Result<MatchResult, MatchError> {
    if !(0.0..=1.0).contains(&config.thres_is) {
        return Err(MatchError::Threshold(config.thres_is));
    }
    config.weights.validate()?;
    if preds.is_empty() {
        return Err(MatchError::NoQueries);
    }
    if preds.scene_id != scene.id {
        return Err(MatchError::SceneMismatch { scene: scene.id.clone(), preds: preds.scene_id.clone() });
    }
    scene.validate(config.seen_actions)?;
    let n = preds.len();
    let seen = seen_targets(scene, config.seen_actions);
    if seen.len() > n {
        return Err(MatchError::TooManySeenPairs { scene: scene.id.clone(), seen: seen.len(), queries: n });
    }

    let all: Vec<usize> = (0..n).collect();
    let stage1 = solve_stage(scene, preds, &all, &seen, &config.weights, CostMode::Full(config.action_cost))?;
    let rest: Vec<usize> = all.iter().copied().filter(|q| !stage1.iter().any(|m| m.0 == *q)).collect();
    let unknown = unknown_targets(scene);
    let stage2 = solve_stage(scene, preds, &rest, &unknown, &config.weights, CostMode::ActionFree)?;

    let mut labels = vec![QueryLabel::NoPair; n];
    for &(q, _) in &stage1 {
        labels[q] = QueryLabel::SeenMatch;
    }
    for &(q, _) in &stage2 {
        labels[q] = QueryLabel::NonInteractive;
    }
    for q in select_potential(preds, &stage2, config.topk, config.thres_is) {
        labels[q] = QueryLabel::Potential;
    }

    let mut result = MatchResult { scene_id: scene.id.clone(), stage1, stage2, labels, is_targets: Vec::new() };
    let targets = interactive_supervision(scene, preds, &result, config.iou_thresh)?;
    for (label, t) in result.labels.iter_mut().zip(&targets) {
        if *t == IsTarget::Ignore {
            *label = QueryLabel::Omitted;
        }
    }
    result.is_targets = targets;
    Ok(result)
}

/// Interactive-score targets for every query.
///
/// Selected queries (seen matches and potential pairs) are positive when
/// both IoUs with their matched pair exceed `iou_thresh`, else negative.
/// Every other query is negative unless its boxes overlap some unknown pair
/// (selected or not) above the threshold, in which case it is ignored.
pub fn interactive_supervision(
    scene: &GroundTruthScene,
    preds: &PredictionSet,
    result: &MatchResult,
    iou_thresh: f64,
) -> Result<Vec<IsTarget>, MatchError> {
    let n = preds.len();
    if result.scene_id != scene.id || result.labels.len() != n {
        return Err(MatchError::ResultMismatch(format!(
            "result for scene {} with {} labels, scene {} with {n} queries",
            result.scene_id,
            result.labels.len(),
            scene.id
        )));
    }
    let seen: Vec<BoxPair> = scene.seen_pairs().iter().map(|&(h, o, _)| scene.box_pair(h, o)).collect();
    let unknown = enumerate_unknown_pairs(scene);
    let lookup = |list: &[BoxPair], idx: usize| {
        list.get(idx).copied().ok_or_else(|| MatchError::ResultMismatch(format!("pair index {idx} out of range")))
    };

    let mut out = Vec::with_capacity(n);
    for (q, label) in result.labels.iter().enumerate() {
        let pred = &preds.predictions[q];
        let boxes = BoxPair::new(pred.human, pred.object, 0);
        let target = match label {
            QueryLabel::SeenMatch | QueryLabel::Potential => {
                let gt = if *label == QueryLabel::SeenMatch {
                    let idx = result.seen_pair_of(q).ok_or_else(|| {
                        MatchError::ResultMismatch(format!("query {q} labelled SEEN_MATCH without a stage-1 match"))
                    })?;
                    lookup(&seen, idx)?
                } else {
                    let idx = result.unknown_pair_of(q).ok_or_else(|| {
                        MatchError::ResultMismatch(format!("query {q} labelled POTENTIAL without a stage-2 match"))
                    })?;
                    lookup(&unknown, idx)?
                };
                if boxes.overlaps(&gt, iou_thresh) {
                    IsTarget::Positive
                } else {
                    IsTarget::Negative
                }
            }
            QueryLabel::NonInteractive | QueryLabel::NoPair | QueryLabel::Omitted => {
                if unknown.iter().any(|u| boxes.overlaps(u, iou_thresh)) {
                    IsTarget::Ignore
                } else {
                    IsTarget::Negative
                }
            }
        };
        out.push(target);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn boxed(b: BBox, category: usize) -> AnnotatedBox {
        AnnotatedBox { bbox: b, category }
    }

    fn scene(humans: usize, objects: usize, seen: Vec<Triplet>) -> GroundTruthScene {
        let mut boxes = Vec::new();
        for h in 0..humans {
            boxes.push(boxed(bb(h as f64 * 100.0, 0.0, h as f64 * 100.0 + 40.0, 80.0), PERSON_CATEGORY));
        }
        for o in 0..objects {
            boxes.push(boxed(bb(o as f64 * 100.0, 120.0, o as f64 * 100.0 + 30.0, 150.0), 1 + o % 2));
        }
        GroundTruthScene { id: "s".into(), width: 400.0, height: 200.0, boxes, seen, held_out: vec![] }
    }

    fn t(h: usize, o: usize, a: &[usize]) -> Triplet {
        Triplet { human: h, object: o, actions: a.to_vec() }
    }

    fn exact(q: usize, pair: &BoxPair, obj_slots: usize, acts: Vec<f64>, is: f64) -> Prediction {
        let mut obj = vec![0.0; obj_slots];
        obj[pair.object_category] = 1.0;
        Prediction {
            query: q,
            human: pair.human,
            object: pair.object,
            object_scores: obj,
            action_scores: acts,
            interactive: is,
        }
    }

    fn far(q: usize, obj_slots: usize, acts: usize, is: f64) -> Prediction {
        let mut obj = vec![0.0; obj_slots];
        obj[obj_slots - 1] = 1.0;
        let off = 1000.0 + q as f64 * 50.0;
        Prediction {
            query: q,
            human: bb(off, off, off + 10.0, off + 10.0),
            object: bb(off + 20.0, off, off + 30.0, off + 10.0),
            object_scores: obj,
            action_scores: vec![0.0; acts],
            interactive: is,
        }
    }

    #[test]
    fn unknown_pair_enumeration() {
        let s = scene(1, 1, vec![t(0, 1, &[0])]);
        assert!(enumerate_unknown_pairs(&s).is_empty());
        let s = scene(1, 2, vec![t(0, 1, &[0])]);
        assert_eq!(unknown_pair_indices(&s), vec![(0, 2)]);
        let s = scene(2, 2, vec![t(0, 2, &[0])]);
        // humans may take the other human as object
        let u = unknown_pair_indices(&s);
        assert_eq!(u, vec![(0, 1), (0, 3), (1, 0), (1, 2), (1, 3)]);
        assert_eq!(u.len() + s.seen_pairs().len(), s.enumerable_pairs());
    }

    #[test]
    fn unknown_pairs_without_person_objects() {
        // 2 humans x 2 non-person objects, one annotated: the 2x2 object
        // pairings leave 3 unknown human-object pairs besides the two
        // human-human pairings
        let s = scene(2, 2, vec![t(0, 2, &[0])]);
        let non_person: Vec<_> =
            unknown_pair_indices(&s).into_iter().filter(|&(_, o)| s.boxes[o].category != PERSON_CATEGORY).collect();
        assert_eq!(non_person.len(), 3);
    }

    #[test]
    fn scene_validation() {
        let mut s = scene(1, 1, vec![t(0, 1, &[5])]);
        assert!(s.validate(3).is_err());
        s.seen = vec![t(1, 0, &[0])];
        assert!(s.validate(3).is_err(), "object box used as human");
        s.seen = vec![t(0, 0, &[0])];
        assert!(s.validate(3).is_err(), "self pairing");
        s.seen = vec![t(0, 1, &[])];
        assert!(s.validate(3).is_err());
        s.seen = vec![t(0, 1, &[2])];
        assert!(s.validate(3).is_ok());
    }

    #[test]
    fn exact_predictions_take_the_seen_pairs() {
        let s = scene(2, 2, vec![t(0, 2, &[1]), t(1, 3, &[0, 2])]);
        let pairs: Vec<_> = seen_targets(&s, 3);
        let mut preds = vec![far(0, 4, 4, 0.1)];
        preds.push(exact(1, &pairs[1].pair, 4, vec![1.0, 0.0, 1.0, 0.0], 0.9));
        preds.push(far(2, 4, 4, 0.1));
        preds.push(exact(3, &pairs[0].pair, 4, vec![0.0, 1.0, 0.0, 0.0], 0.9));
        preds.push(far(4, 4, 4, 0.1));
        let set = PredictionSet { scene_id: "s".into(), predictions: preds };
        let r = two_stage_match(&s, &set, &MatchConfig::new(3)).unwrap();
        assert_eq!(r.stage1, vec![(3, 0), (1, 1)]);
        assert_eq!(r.labels[1], QueryLabel::SeenMatch);
        assert_eq!(r.labels[3], QueryLabel::SeenMatch);
        assert_eq!(r.is_targets[1], IsTarget::Positive);
        assert_eq!(r.count(QueryLabel::SeenMatch), 2);
        // three queries remain for the unknown pairs; none clears 0.5
        assert_eq!(r.stage2.len(), 3);
        assert_eq!(r.count(QueryLabel::Potential), 0);
        assert_eq!(r.count(QueryLabel::NonInteractive), 3);
    }

    #[test]
    fn scene_without_annotations_matches_in_stage_two_only() {
        let s = scene(1, 2, vec![]);
        let set = PredictionSet { scene_id: "s".into(), predictions: (0..4).map(|q| far(q, 4, 3, 0.9)).collect() };
        let r = two_stage_match(&s, &set, &MatchConfig::new(3)).unwrap();
        assert!(r.stage1.is_empty());
        assert_eq!(r.stage2.len(), 2);
        assert_eq!(r.count(QueryLabel::Potential), 2);
        assert_eq!(r.count(QueryLabel::NoPair), 2);
    }

    #[test]
    fn more_unknown_pairs_than_free_queries() {
        let s = scene(2, 3, vec![t(0, 2, &[0])]);
        assert_eq!(unknown_pair_indices(&s).len(), 7);
        let set = PredictionSet { scene_id: "s".into(), predictions: (0..3).map(|q| far(q, 4, 3, 0.2)).collect() };
        let r = two_stage_match(&s, &set, &MatchConfig::new(3)).unwrap();
        assert_eq!(r.stage1.len(), 1);
        assert_eq!(r.stage2.len(), 2);
        let mut qs: Vec<_> = r.stage1.iter().chain(&r.stage2).map(|m| m.0).collect();
        qs.sort();
        assert_eq!(qs, vec![0, 1, 2]);
    }

    #[test]
    fn too_many_seen_pairs_is_an_error() {
        let s = scene(1, 2, vec![t(0, 1, &[0]), t(0, 2, &[1])]);
        let set = PredictionSet { scene_id: "s".into(), predictions: vec![far(0, 4, 3, 0.5)] };
        assert!(matches!(two_stage_match(&s, &set, &MatchConfig::new(3)), Err(MatchError::TooManySeenPairs { .. })));
        let set = PredictionSet { scene_id: "other".into(), predictions: vec![far(0, 4, 3, 0.5)] };
        assert!(matches!(two_stage_match(&s, &set, &MatchConfig::new(3)), Err(MatchError::SceneMismatch { .. })));
    }

    #[test]
    fn topk_ties_prefer_smaller_query() {
        let s = scene(1, 3, vec![]);
        let set = PredictionSet { scene_id: "s".into(), predictions: (0..3).map(|q| far(q, 4, 3, 0.8)).collect() };
        let mut cfg = MatchConfig::new(3);
        cfg.topk = 2;
        let r = two_stage_match(&s, &set, &cfg).unwrap();
        assert_eq!(r.labels[..3], [QueryLabel::Potential, QueryLabel::Potential, QueryLabel::NonInteractive]);
    }

    #[test]
    fn omit_rule_on_unselected_query() {
        // one human, two objects, one annotated pair; a third query sits on
        // the unknown pair but stage two gives that pair to a better query
        let s = scene(1, 2, vec![t(0, 1, &[0])]);
        let seen = &seen_targets(&s, 2)[0].pair;
        let unknown = enumerate_unknown_pairs(&s)[0];
        let preds = vec![
            exact(0, seen, 4, vec![1.0, 0.0, 0.0], 0.9),
            exact(1, &unknown, 4, vec![0.0, 0.0, 0.7], 0.2),
            exact(2, &unknown, 4, vec![0.0, 0.0, 0.7], 0.9),
            far(3, 4, 3, 0.1),
        ];
        let set = PredictionSet { scene_id: "s".into(), predictions: preds };
        let r = two_stage_match(&s, &set, &MatchConfig::new(2)).unwrap();
        assert_eq!(r.stage2, vec![(1, 0)], "ties on equal cost go to the smaller query");
        assert_eq!(r.labels, vec![QueryLabel::SeenMatch, QueryLabel::Omitted, QueryLabel::Omitted, QueryLabel::NoPair]);
        assert_eq!(r.is_targets, vec![IsTarget::Positive, IsTarget::Ignore, IsTarget::Ignore, IsTarget::Negative]);
    }

    #[test]
    fn supervision_rejects_foreign_results() {
        let s = scene(1, 1, vec![t(0, 1, &[0])]);
        let set = PredictionSet { scene_id: "s".into(), predictions: vec![far(0, 4, 2, 0.1), far(1, 4, 2, 0.1)] };
        let r = two_stage_match(&s, &set, &MatchConfig::new(2)).unwrap();
        let short = PredictionSet { scene_id: "s".into(), predictions: vec![far(0, 4, 2, 0.1)] };
        assert!(interactive_supervision(&s, &short, &r, 0.5).is_err());
    }

    #[test]
    fn predicted_object_skips_background() {
        let mut p = far(0, 4, 1, 0.5);
        p.object_scores = vec![0.1, 0.3, 0.2, 0.4];
        assert_eq!(p.predicted_object(), Some(1));
    }
}
