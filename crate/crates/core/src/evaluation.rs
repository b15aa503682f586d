//! HOI-triplet average precision and unseen-pair recall.
//!
//! A detection is a true positive when its object and action categories
//! match a ground-truth triplet and both its human and object boxes have
//! IoU strictly greater than the threshold (0.5) with that triplet's boxes.
//! Each ground truth is claimed at most once, greedily in score order.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distillation::Vocabulary;
use crate::geometry::{iou, BBox, BoxPair};
use crate::matching::{GroundTruthScene, PredictionSet};

pub const TP_IOU: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("score {0} outside [0, 1]")]
    ScoreRange(f64),
    #[error("detection references unknown scene {0}")]
    UnknownScene(String),
    #[error("scene {scene}: (action {action}, object {object}) is not an HOI category")]
    UnknownCategory { scene: String, action: usize, object: usize },
    #[error("duplicate scene id {0}")]
    DuplicateScene(String),
    #[error("recall depth must be at least 1")]
    RecallDepth,
    #[error("split {name} references HOI {hoi} outside the vocabulary")]
    SplitIndex { name: String, hoi: usize },
    #[error("split configuration: {0}")]
    Splits(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub scene_id: String,
    pub human: BBox,
    pub object: BBox,
    pub object_category: usize,
    pub action: usize,
    pub score: f64,
}

/// Combined triplet confidence: object x action x interactive score. Pass
/// `None` to leave the interactive factor out.
pub fn compose_score(object: f64, action: f64, interactive: Option<f64>) -> Result<f64, EvalError> {
    for v in [Some(object), Some(action), interactive].into_iter().flatten() {
        if !(0.0..=1.0).contains(&v) {
            return Err(EvalError::ScoreRange(v));
        }
    }
    Ok(object * action * interactive.unwrap_or(1.0))
}

/// A ground-truth HOI triplet in box form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtTriplet {
    pub human: BBox,
    pub object: BBox,
    pub object_category: usize,
    pub action: usize,
}

/// TP/FP flags for detections of one scene, already sorted by descending
/// score. Among unclaimed qualifying ground truths, a detection claims the
/// one with the largest `min(human IoU, object IoU)`; ties go to the lower
/// index.
pub fn match_detections(dets: &[&Detection], gts: &[GtTriplet], iou_thresh: f64) -> Vec<bool> {
    let mut claimed = vec![false; gts.len()];
    dets.iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if claimed[g] || gt.object_category != d.object_category || gt.action != d.action {
                    continue;
                }
                let (hi, oi) = (iou(&d.human, &gt.human), iou(&d.object, &gt.object));
                if hi > iou_thresh && oi > iou_thresh {
                    let key = hi.min(oi);
                    if best.is_none_or(|(_, k)| key > k) {
                        best = Some((g, key));
                    }
                }
            }
            match best {
                Some((g, _)) => {
                    claimed[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMode {
    /// Area under the monotone precision envelope.
    #[default]
    AllPoint,
    /// Mean of the envelope at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

/// AP of a ranked TP/FP list; `None` when there is no ground truth.
pub fn average_precision(flags: &[bool], n_gt: usize, mode: ApMode) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(flags.len());
    let mut precision = Vec::with_capacity(flags.len());
    for (i, &f) in flags.iter().enumerate() {
        tp += f as usize;
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    // precision envelope, right to left
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let ap = match mode {
        ApMode::AllPoint => {
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for (r, p) in recall.iter().zip(&precision) {
                if *r > prev_recall {
                    ap += (r - prev_recall) * p;
                    prev_recall = *r;
                }
            }
            ap
        }
        ApMode::ElevenPoint => {
            (0..=10)
                .map(|k| {
                    let t = k as f64 / 10.0;
                    recall.iter().position(|&r| r >= t - 1e-12).map_or(0.0, |i| precision[i])
                })
                .sum::<f64>()
                / 11.0
        }
    };
    Some(ap.clamp(0.0, 1.0))
}

/// Zero-shot scenario tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "UA")]
    UnseenAction,
    #[serde(rename = "UC")]
    UnseenCombination,
    #[serde(rename = "RF-UC")]
    RareFirst,
    #[serde(rename = "NF-UC")]
    NonRareFirst,
    #[serde(rename = "UV")]
    UnseenVerb,
    #[default]
    #[serde(rename = "custom")]
    Custom,
}

/// Named subsets of HOI category indices.
///
/// The usual names are `full`, `seen`, `unseen`, `rare` and `non_rare`;
/// any other name is evaluated the same way. A missing `full` means every
/// HOI category.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitConfig {
    #[serde(default)]
    pub scenario: Scenario,
    #[serde(default)]
    pub splits: BTreeMap<String, Vec<usize>>,
}

impl SplitConfig {
    /// `full`, plus `seen` / `unseen` from the vocabulary's action flags.
    pub fn from_action_flags(vocab: &Vocabulary, scenario: Scenario) -> Self {
        let (mut seen, mut unseen) = (Vec::new(), Vec::new());
        for (i, &(a, _)) in vocab.hois().iter().enumerate() {
            if vocab.is_seen(a) {
                seen.push(i);
            } else {
                unseen.push(i);
            }
        }
        let mut splits = BTreeMap::new();
        splits.insert("full".to_string(), (0..vocab.hois().len()).collect());
        splits.insert("seen".to_string(), seen);
        splits.insert("unseen".to_string(), unseen);
        Self { scenario, splits }
    }

    /// Fills in `full` and checks index ranges and the partition rules.
    pub fn resolve(&self, vocab: &Vocabulary) -> Result<BTreeMap<String, Vec<usize>>, EvalError> {
        let n = vocab.hois().len();
        let mut out = self.splits.clone();
        out.entry("full".to_string()).or_insert_with(|| (0..n).collect());
        for (name, members) in &out {
            if let Some(&hoi) = members.iter().find(|&&h| h >= n) {
                return Err(EvalError::SplitIndex { name: name.clone(), hoi });
            }
        }
        let set =
            |k: &str| -> Option<std::collections::BTreeSet<usize>> { out.get(k).map(|v| v.iter().copied().collect()) };
        if let (Some(s), Some(u), Some(f)) = (set("seen"), set("unseen"), set("full")) {
            if s.union(&u).copied().collect::<std::collections::BTreeSet<_>>() != f {
                return Err(EvalError::Splits("seen and unseen must cover full".into()));
            }
        }
        if let (Some(r), Some(nr)) = (set("rare"), set("non_rare")) {
            if r.intersection(&nr).next().is_some() {
                return Err(EvalError::Splits("rare and non_rare overlap".into()));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAp {
    pub hoi: usize,
    pub action: usize,
    pub object: usize,
    pub n_gt: usize,
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: Scenario,
    pub categories: Vec<CategoryAp>,
    /// Mean AP per split over member categories with ground truth.
    pub map: BTreeMap<String, Option<f64>>,
    /// U-R@K keyed by K; `None` when no held-out pair exists.
    pub unseen_recall: BTreeMap<usize, Option<f64>>,
}

impl EvalReport {
    /// Plain-text summary table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", 100.0 * x));
        let _ = writeln!(s, "{:<12} {:>8}", "split", "mAP");
        for (name, v) in &self.map {
            let _ = writeln!(s, "{:<12} {:>8}", name, pct(*v));
        }
        for (k, v) in &self.unseen_recall {
            let _ = writeln!(s, "{:<12} {:>8}", format!("U-R@{k}"), pct(*v));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub iou_thresh: f64,
    pub ap_mode: ApMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { iou_thresh: TP_IOU, ap_mode: ApMode::AllPoint }
    }
}

/// Ground-truth triplets of a scene (annotated and held-out), one per action.
pub fn scene_triplets(scene: &GroundTruthScene) -> Vec<GtTriplet> {
    scene
        .seen
        .iter()
        .chain(&scene.held_out)
        .flat_map(|t| {
            t.actions.iter().map(move |&a| GtTriplet {
                human: scene.boxes[t.human].bbox,
                object: scene.boxes[t.object].bbox,
                object_category: scene.boxes[t.object].category,
                action: a,
            })
        })
        .collect()
}

pub fn evaluate(
    detections: &[Detection],
    scenes: &[GroundTruthScene],
    vocab: &Vocabulary,
    splits: &SplitConfig,
    predictions: Option<&[PredictionSet]>,
    k_values: &[usize],
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let resolved = splits.resolve(vocab)?;
    let mut scene_pos: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, s) in scenes.iter().enumerate() {
        if scene_pos.insert(s.id.as_str(), i).is_some() {
            return Err(EvalError::DuplicateScene(s.id.clone()));
        }
    }
    let n_hoi = vocab.hois().len();
    let hoi_of = |scene: &str, action: usize, object: usize| {
        vocab.hoi_index(action, object).ok_or_else(|| EvalError::UnknownCategory {
            scene: scene.to_string(),
            action,
            object,
        })
    };

    // (scene, hoi) -> gts / detections
    let mut gts: BTreeMap<(usize, usize), Vec<GtTriplet>> = BTreeMap::new();
    let mut n_gt = vec![0usize; n_hoi];
    for (si, s) in scenes.iter().enumerate() {
        for g in scene_triplets(s) {
            let h = hoi_of(&s.id, g.action, g.object_category)?;
            n_gt[h] += 1;
            gts.entry((si, h)).or_default().push(g);
        }
    }
    let mut dets: BTreeMap<(usize, usize), Vec<(usize, &Detection)>> = BTreeMap::new();
    for (di, d) in detections.iter().enumerate() {
        let si = *scene_pos.get(d.scene_id.as_str()).ok_or_else(|| EvalError::UnknownScene(d.scene_id.clone()))?;
        let h = hoi_of(&d.scene_id, d.action, d.object_category)?;
        dets.entry((si, h)).or_default().push((di, d));
    }

    // per category: (score, scene, detection index, tp)
    let mut ranked: Vec<Vec<(f64, usize, usize, bool)>> = vec![Vec::new(); n_hoi];
    for ((si, h), mut list) in dets {
        list.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then(a.0.cmp(&b.0)));
        let refs: Vec<&Detection> = list.iter().map(|x| x.1).collect();
        let empty = Vec::new();
        let flags = match_detections(&refs, gts.get(&(si, h)).unwrap_or(&empty), options.iou_thresh);
        for ((di, d), f) in list.iter().zip(flags) {
            ranked[h].push((d.score, si, *di, f));
        }
    }
    let categories: Vec<CategoryAp> = ranked
        .into_iter()
        .enumerate()
        .map(|(h, mut r)| {
            r.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let flags: Vec<bool> = r.iter().map(|x| x.3).collect();
            let (action, object) = vocab.hois()[h];
            CategoryAp {
                hoi: h,
                action,
                object,
                n_gt: n_gt[h],
                ap: average_precision(&flags, n_gt[h], options.ap_mode),
            }
        })
        .collect();

    let map = resolved
        .iter()
        .map(|(name, members)| {
            let aps: Vec<f64> = members.iter().filter_map(|&h| categories[h].ap).collect();
            let mean = (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64);
            (name.clone(), mean)
        })
        .collect();

    let mut unseen_recall = BTreeMap::new();
    if let Some(preds) = predictions {
        for &k in k_values {
            unseen_recall.insert(k, unseen_pair_recall(preds, scenes, k, options.iou_thresh)?);
        }
    }
    Ok(EvalReport { scenario: splits.scenario, categories, map, unseen_recall })
}

/// Fraction of held-out pairs covered by some top-`k` query (ranked by
/// interactive score, ties by query index) with both IoUs above
/// `iou_thresh`. Actions are ignored. `None` when there are no held-out
/// pairs.
pub fn unseen_pair_recall(
    predictions: &[PredictionSet],
    scenes: &[GroundTruthScene],
    k: usize,
    iou_thresh: f64,
) -> Result<Option<f64>, EvalError> {
    if k < 1 {
        return Err(EvalError::RecallDepth);
    }
    for p in predictions {
        if !scenes.iter().any(|s| s.id == p.scene_id) {
            return Err(EvalError::UnknownScene(p.scene_id.clone()));
        }
    }
    let (mut total, mut hit) = (0usize, 0usize);
    for s in scenes {
        let pairs: Vec<BoxPair> = s.held_out_pairs().iter().map(|&(h, o, _)| s.box_pair(h, o)).collect();
        total += pairs.len();
        let Some(set) = predictions.iter().find(|p| p.scene_id == s.id) else {
            continue;
        };
        let mut order: Vec<usize> = (0..set.predictions.len()).collect();
        order.sort_by(|&a, &b| {
            set.predictions[b].interactive.total_cmp(&set.predictions[a].interactive).then(a.cmp(&b))
        });
        let top: Vec<BoxPair> = order.iter().take(k).map(|&q| set.predictions[q].pair()).collect();
        hit += pairs.iter().filter(|gt| top.iter().any(|p| p.overlaps(gt, iou_thresh))).count();
    }
    Ok((total > 0).then(|| hit as f64 / total as f64))
}
