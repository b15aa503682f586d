//! Training-loss terms as pure functions of matched predictions.
//!
//! Every term is a mean over the elements that contribute to it (or a sum
//! under [`Reduction::Sum`]); an empty contribution set gives 0.
//! Probabilities are clamped to `[1e-7, 1 - 1e-7]` before any logarithm.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{bce, LOG_EPS};
use crate::distillation::ActionDistribution;
use crate::geometry::{giou, l1_box_cost, BBox, GeometryError};
use crate::matching::{IsTarget, QueryLabel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("query {query}: object scores sum to {sum}, not a distribution")]
    NotADistribution { query: usize, sum: f64 },
    #[error("query {query}: target class {class} outside {len} score slots")]
    ClassOutOfRange { query: usize, class: usize, len: usize },
    #[error("action loss takes only SEEN_MATCH queries, got {0:?}")]
    NotSeenMatch(QueryLabel),
    #[error("length mismatch: {0} scores vs {1} targets")]
    Length(usize, usize),
    #[error("loss weights must be finite and non-negative")]
    Weights,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

impl Reduction {
    fn apply(self, total: f64, count: usize) -> f64 {
        match self {
            _ if count == 0 => 0.0,
            Reduction::Mean => total / count as f64,
            Reduction::Sum => total,
        }
    }
}

/// Element-wise action loss form.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ActionLossForm {
    #[default]
    Bce,
    Focal {
        alpha: f64,
        gamma: f64,
    },
}

impl ActionLossForm {
    pub const FOCAL_DEFAULT: ActionLossForm = ActionLossForm::Focal { alpha: 0.25, gamma: 2.0 };

    fn element(self, target: f64, score: f64) -> f64 {
        match self {
            ActionLossForm::Bce => bce(target, score),
            ActionLossForm::Focal { alpha, gamma } => {
                let q = score.clamp(LOG_EPS, 1.0 - LOG_EPS);
                let pt = target * q + (1.0 - target) * (1.0 - q);
                let at = target * alpha + (1.0 - target) * (1.0 - alpha);
                -at * (1.0 - pt).powf(gamma) * pt.ln()
            }
        }
    }
}

/// Loss multipliers in the order bbox, giou, object class, interactive
/// score, action, distillation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub bbox: f64,
    pub giou: f64,
    pub obj: f64,
    pub is: f64,
    pub act: f64,
    pub clip: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { bbox: 2.5, giou: 1.0, obj: 1.0, is: 1.0, act: 1.6, clip: 700.0 }
    }
}

impl LossWeights {
    pub fn from_slice(v: &[f64]) -> Result<Self, LossError> {
        let [bbox, giou, obj, is, act, clip] = v else {
            return Err(LossError::Weights);
        };
        let w = Self { bbox: *bbox, giou: *giou, obj: *obj, is: *is, act: *act, clip: *clip };
        w.validate()?;
        Ok(w)
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.bbox, self.giou, self.obj, self.is, self.act, self.clip]
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if self.as_array().iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(LossError::Weights)
        }
    }
}

/// Unweighted loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub bbox: f64,
    pub giou: f64,
    pub obj: f64,
    pub act: f64,
    pub is: f64,
    pub clip: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub parts: LossParts,
    pub total: f64,
}

/// Predicted and ground-truth boxes of one matched query, in image
/// coordinates, with the image frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedBoxes {
    pub pred_human: BBox,
    pub pred_object: BBox,
    pub gt_human: BBox,
    pub gt_object: BBox,
    pub frame: (f64, f64),
}

/// `(L_b, L_u)`: L1 over both boxes in normalized center form, and
/// `(1 - giou)` summed over both boxes.
pub fn box_losses(matches: &[MatchedBoxes], reduction: Reduction) -> Result<(f64, f64), LossError> {
    let (mut l1, mut gl) = (0.0, 0.0);
    for m in matches {
        let (w, h) = m.frame;
        l1 += l1_box_cost(&m.pred_human.to_center(w, h)?, &m.gt_human.to_center(w, h)?)
            + l1_box_cost(&m.pred_object.to_center(w, h)?, &m.gt_object.to_center(w, h)?);
        gl += (1.0 - giou(&m.pred_human, &m.gt_human)?) + (1.0 - giou(&m.pred_object, &m.gt_object)?);
    }
    Ok((reduction.apply(l1, matches.len()), reduction.apply(gl, matches.len())))
}

/// One query's object-class supervision: its score vector (categories then
/// background) and the target slot.
#[derive(Debug, Clone, Copy)]
pub struct ClassTarget<'a> {
    pub query: usize,
    pub scores: &'a [f64],
    pub class: usize,
}

/// Cross-entropy of each query against its target slot. No-pair queries
/// pass the background slot (the last one) as target.
pub fn object_class_loss(items: &[ClassTarget<'_>], reduction: Reduction) -> Result<f64, LossError> {
    let mut total = 0.0;
    for it in items {
        let sum: f64 = it.scores.iter().sum();
        if (sum - 1.0).abs() > 1e-4 {
            return Err(LossError::NotADistribution { query: it.query, sum });
        }
        let p = it.scores.get(it.class).ok_or(LossError::ClassOutOfRange {
            query: it.query,
            class: it.class,
            len: it.scores.len(),
        })?;
        total -= p.clamp(LOG_EPS, 1.0).ln();
    }
    Ok(reduction.apply(total, items.len()))
}

/// A SEEN_MATCH query's action scores and its multi-hot seen-action target.
#[derive(Debug, Clone, Copy)]
pub struct ActionTarget<'a> {
    pub label: QueryLabel,
    pub scores: &'a [f64],
    pub target: &'a [bool],
}

/// Element-wise loss over the seen-action slots of seen matches.
pub fn action_loss(items: &[ActionTarget<'_>], form: ActionLossForm, reduction: Reduction) -> Result<f64, LossError> {
    let (mut total, mut count) = (0.0, 0usize);
    for it in items {
        if it.label != QueryLabel::SeenMatch {
            return Err(LossError::NotSeenMatch(it.label));
        }
        if it.target.len() > it.scores.len() {
            return Err(LossError::Length(it.scores.len(), it.target.len()));
        }
        for (&s, &y) in it.scores.iter().zip(it.target) {
            total += form.element(if y { 1.0 } else { 0.0 }, s);
            count += 1;
        }
    }
    Ok(reduction.apply(total, count))
}

/// Two-class cross-entropy on the interactive score; ignored queries
/// contribute nothing.
pub fn interactive_score_loss(targets: &[IsTarget], scores: &[f64], reduction: Reduction) -> Result<f64, LossError> {
    if targets.len() != scores.len() {
        return Err(LossError::Length(scores.len(), targets.len()));
    }
    let (mut total, mut count) = (0.0, 0usize);
    for (t, &s) in targets.iter().zip(scores) {
        let y = match t {
            IsTarget::Positive => 1.0,
            IsTarget::Negative => 0.0,
            IsTarget::Ignore => continue,
        };
        total += bce(y, s);
        count += 1;
    }
    Ok(reduction.apply(total, count))
}

/// Soft-label binary cross-entropy between the student's action scores and
/// the teacher distribution, over the teacher's support slots only.
pub fn clip_distill_loss(items: &[(&[f64], &ActionDistribution)], reduction: Reduction) -> Result<f64, LossError> {
    let (mut total, mut count) = (0.0, 0usize);
    for (scores, target) in items {
        if scores.len() != target.probs.len() {
            return Err(LossError::Length(scores.len(), target.probs.len()));
        }
        for &a in &target.support {
            total += bce(target.probs[a], scores[a]);
            count += 1;
        }
    }
    Ok(reduction.apply(total, count))
}

pub fn total_loss(parts: LossParts, weights: &LossWeights) -> LossBreakdown {
    let total = weights.bbox * parts.bbox
        + weights.giou * parts.giou
        + weights.obj * parts.obj
        + weights.act * parts.act
        + weights.is * parts.is
        + weights.clip * parts.clip;
    LossBreakdown { parts, total }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn box_loss_cases() {
        let h = bb(0., 0., 2., 2.);
        let m = MatchedBoxes { pred_human: h, pred_object: h, gt_human: h, gt_object: h, frame: (2., 2.) };
        assert_eq!(box_losses(&[m], Reduction::Mean).unwrap(), (0.0, 0.0));
        assert_eq!(box_losses(&[], Reduction::Mean).unwrap(), (0.0, 0.0));
        // human [0,0,1,1] vs [0,0,2,2] in a 2x2 frame: L1 1.5, 1 - giou 0.75
        let m2 = MatchedBoxes { pred_human: bb(0., 0., 1., 1.), ..m };
        let (l1, gl) = box_losses(&[m2], Reduction::Mean).unwrap();
        assert_abs_diff_eq!(l1, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(gl, 0.75, epsilon = 1e-12);
        let (l1, gl) = box_losses(&[m, m2], Reduction::Mean).unwrap();
        assert_abs_diff_eq!(l1, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(gl, 0.375, epsilon = 1e-12);
        let (l1, _) = box_losses(&[m, m2], Reduction::Sum).unwrap();
        assert_abs_diff_eq!(l1, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn object_class_cases() {
        let perfect = [0.0, 1.0, 0.0];
        let bg = [0.0, 0.0, 1.0];
        let items =
            [ClassTarget { query: 0, scores: &perfect, class: 1 }, ClassTarget { query: 1, scores: &bg, class: 2 }];
        assert_eq!(object_class_loss(&items, Reduction::Mean).unwrap(), 0.0);
        let uniform = [0.25; 4];
        let one = [ClassTarget { query: 0, scores: &uniform, class: 0 }];
        assert_abs_diff_eq!(object_class_loss(&one, Reduction::Mean).unwrap(), 4f64.ln(), epsilon = 1e-12);
        // (-ln 0.8 - ln 0.5) / 2
        let a = [0.8, 0.1, 0.1];
        let b = [0.2, 0.3, 0.5];
        let two = [ClassTarget { query: 0, scores: &a, class: 0 }, ClassTarget { query: 1, scores: &b, class: 2 }];
        assert_abs_diff_eq!(
            object_class_loss(&two, Reduction::Mean).unwrap(),
            (-(0.8f64.ln()) - 0.5f64.ln()) / 2.0,
            epsilon = 1e-12
        );
        let bad = [0.5, 0.1];
        assert!(matches!(
            object_class_loss(&[ClassTarget { query: 3, scores: &bad, class: 0 }], Reduction::Mean),
            Err(LossError::NotADistribution { query: 3, .. })
        ));
    }

    #[test]
    fn action_loss_cases() {
        let scores = [1.0, 0.0, 0.4];
        let target = [true, false];
        let it = ActionTarget { label: QueryLabel::SeenMatch, scores: &scores, target: &target };
        assert!(action_loss(&[it], ActionLossForm::Bce, Reduction::Mean).unwrap() < 1e-6);
        let half = [0.5, 0.5];
        let it = ActionTarget { label: QueryLabel::SeenMatch, scores: &half, target: &target };
        assert_abs_diff_eq!(action_loss(&[it], ActionLossForm::Bce, Reduction::Mean).unwrap(), LN2, epsilon = 1e-12);
        assert_eq!(action_loss(&[], ActionLossForm::Bce, Reduction::Mean).unwrap(), 0.0);
        let pot = ActionTarget { label: QueryLabel::Potential, ..it };
        assert_eq!(
            action_loss(&[pot], ActionLossForm::Bce, Reduction::Mean),
            Err(LossError::NotSeenMatch(QueryLabel::Potential))
        );
        // focal at q=0.5 on a positive slot: 0.25 * 0.25 * ln 2
        let one = [true];
        let it = ActionTarget { label: QueryLabel::SeenMatch, scores: &half, target: &one };
        assert_abs_diff_eq!(
            action_loss(&[it], ActionLossForm::FOCAL_DEFAULT, Reduction::Mean).unwrap(),
            0.0625 * LN2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn interactive_cases() {
        use IsTarget::*;
        assert!(interactive_score_loss(&[Positive, Negative], &[1.0, 0.0], Reduction::Mean).unwrap() < 1e-6);
        assert_eq!(interactive_score_loss(&[Ignore, Ignore], &[0.3, 0.9], Reduction::Mean).unwrap(), 0.0);
        assert_abs_diff_eq!(
            interactive_score_loss(&[Positive], &[0.5], Reduction::Mean).unwrap(),
            LN2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            interactive_score_loss(&[Positive, Ignore, Ignore], &[0.5, 0.01, 0.99], Reduction::Mean).unwrap(),
            LN2,
            epsilon = 1e-12
        );
        assert!(interactive_score_loss(&[Positive], &[], Reduction::Mean).is_err());
    }

    #[test]
    fn clip_loss_cases() {
        let hard = ActionDistribution { probs: vec![1.0, 0.0, 0.0], support: vec![0, 1] };
        assert!(clip_distill_loss(&[(&[1.0, 0.0, 0.7], &hard)], Reduction::Mean).unwrap() < 1e-6);
        let single = ActionDistribution { probs: vec![0.0, 1.0], support: vec![1] };
        assert_abs_diff_eq!(
            clip_distill_loss(&[(&[0.9, 0.5], &single)], Reduction::Mean).unwrap(),
            LN2,
            epsilon = 1e-12
        );
        assert!(clip_distill_loss(&[(&[0.5], &single)], Reduction::Mean).is_err());
    }

    #[test]
    fn total_loss_cases() {
        let w = LossWeights::default();
        assert_eq!(w.as_array(), [2.5, 1.0, 1.0, 1.0, 1.6, 700.0]);
        assert_eq!(total_loss(LossParts::default(), &w).total, 0.0);
        let ones = LossParts { bbox: 1., giou: 1., obj: 1., act: 1., is: 1., clip: 1. };
        assert_abs_diff_eq!(total_loss(ones, &w).total, 707.1, epsilon = 1e-12);
        assert!(LossWeights::from_slice(&[1.0; 5]).is_err());
        assert!(LossWeights::from_slice(&[1.0, 1.0, 1.0, 1.0, -1.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn soft_bce_is_minimised_at_the_target(p in 0.01..0.99f64, d in 0.001..0.2f64, up in any::<bool>()) {
            let target = ActionDistribution { probs: vec![p, 1.0 - p], support: vec![0, 1] };
            let at = clip_distill_loss(&[(&[p, 1.0 - p], &target)], Reduction::Mean).unwrap();
            let q = if up { (p + d).min(0.999) } else { (p - d).max(0.001) };
            let off = clip_distill_loss(&[(&[q, 1.0 - p], &target)], Reduction::Mean).unwrap();
            prop_assert!(at <= off + 1e-15);
            let entropy = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
            prop_assert!((at - entropy).abs() < 1e-6);
        }

        #[test]
        fn total_is_linear_in_weights(parts in proptest::array::uniform6(0.0..10.0f64), w in proptest::array::uniform6(0.0..50.0f64), c in 0.0..5.0f64) {
            let lp = LossParts { bbox: parts[0], giou: parts[1], obj: parts[2], act: parts[3], is: parts[4], clip: parts[5] };
            let lw = LossWeights { bbox: w[0], giou: w[1], obj: w[2], act: w[3], is: w[4], clip: w[5] };
            let t = total_loss(lp, &lw).total;
            let scaled = LossWeights { bbox: c * w[0], giou: c * w[1], obj: c * w[2], act: c * w[3], is: c * w[4], clip: c * w[5] };
            prop_assert!((total_loss(lp, &scaled).total - c * t).abs() <= 1e-9 * (1.0 + t.abs()));
            prop_assert!(t >= 0.0);
        }
    }
}
