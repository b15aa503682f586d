//! Teacher soft targets built from precomputed vision-language embeddings.
//!
//! For a cropped pair region, the cosine similarity to every HOI prompt
//! embedding is computed; only the actions that can act on the pair's
//! object (the validity prior) stay in the support, and a temperature
//! softmax over those HOIs gives the action distribution. Actions outside
//! the support get exactly zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistillError {
    #[error("prompt needs non-empty action and object names")]
    EmptyName,
    #[error("vectors have different dimensions ({0} vs {1})")]
    Dimension(usize, usize),
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
    #[error("validity matrix is {got:?}, vocabulary needs {expected:?}")]
    ValidityShape { got: (usize, usize), expected: (usize, usize) },
    #[error("object {0} has no valid action under the current restriction")]
    EmptySupport(usize),
    #[error("object category {0} not in vocabulary")]
    UnknownObject(usize),
    #[error("{got} similarities given for {expected} HOI categories")]
    SimilarityLength { got: usize, expected: usize },
    #[error("action {action} is valid for object {object} but has no HOI category")]
    MissingHoi { action: usize, object: usize },
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("text embedding set has {got} rows for {expected} HOI categories")]
    TextRows { got: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub name: String,
    pub seen: bool,
}

/// Ordered action, object and HOI lists. Seen actions come first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    actions: Vec<Action>,
    objects: Vec<String>,
    /// `(action index, object index)` per HOI category.
    hois: Vec<(usize, usize)>,
}

impl Vocabulary {
    pub fn new(actions: Vec<Action>, objects: Vec<String>, hois: Vec<(usize, usize)>) -> Result<Self, DistillError> {
        let bad = |m: String| Err(DistillError::Vocabulary(m));
        if let Some(k) = actions.iter().position(|a| !a.seen) {
            if actions[k..].iter().any(|a| a.seen) {
                return bad("seen actions must precede unseen actions".into());
            }
        }
        for (i, a) in actions.iter().enumerate() {
            if a.name.is_empty() || actions[..i].iter().any(|b| b.name == a.name) {
                return bad(format!("action {i} has an empty or duplicate name"));
            }
        }
        for (i, o) in objects.iter().enumerate() {
            if o.is_empty() || objects[..i].contains(o) {
                return bad(format!("object {i} has an empty or duplicate name"));
            }
        }
        for (i, &(a, o)) in hois.iter().enumerate() {
            if a >= actions.len() || o >= objects.len() {
                return bad(format!("HOI {i} references ({a}, {o}) outside the vocabulary"));
            }
            if hois[..i].contains(&(a, o)) {
                return bad(format!("HOI {i} duplicates ({a}, {o})"));
            }
        }
        Ok(Self { actions, objects, hois })
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }
    pub fn objects(&self) -> &[String] {
        &self.objects
    }
    pub fn hois(&self) -> &[(usize, usize)] {
        &self.hois
    }

    pub fn num_seen(&self) -> usize {
        self.actions.iter().filter(|a| a.seen).count()
    }

    pub fn is_seen(&self, action: usize) -> bool {
        self.actions.get(action).is_some_and(|a| a.seen)
    }

    pub fn hoi_index(&self, action: usize, object: usize) -> Option<usize> {
        self.hois.iter().position(|&h| h == (action, object))
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a.name == name)
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o == name)
    }

    /// Prompt string for every HOI category, in HOI order.
    pub fn prompts(&self) -> Result<Vec<String>, DistillError> {
        self.hois.iter().map(|&(a, o)| hoi_prompt(&self.actions[a].name, &self.objects[o])).collect()
    }
}

/// Boolean action-by-object table of admissible combinations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityMatrix {
    actions: usize,
    objects: usize,
    valid: Vec<bool>,
}

impl ValidityMatrix {
    pub fn new(actions: usize, objects: usize, valid: Vec<bool>) -> Result<Self, DistillError> {
        if valid.len() != actions * objects {
            return Err(DistillError::ValidityShape { got: (valid.len(), 1), expected: (actions, objects) });
        }
        Ok(Self { actions, objects, valid })
    }

    /// Prior taken from the HOI list: a combination is valid iff it is a
    /// category.
    pub fn from_vocabulary(vocab: &Vocabulary) -> Self {
        let (na, no) = (vocab.actions.len(), vocab.objects.len());
        let mut valid = vec![false; na * no];
        for &(a, o) in &vocab.hois {
            valid[a * no + o] = true;
        }
        Self { actions: na, objects: no, valid }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.actions, self.objects)
    }

    pub fn is_valid(&self, action: usize, object: usize) -> bool {
        action < self.actions && object < self.objects && self.valid[action * self.objects + object]
    }

    /// Objects with no valid action at all.
    pub fn interaction_free(&self) -> Vec<usize> {
        (0..self.objects).filter(|&o| (0..self.actions).all(|a| !self.is_valid(a, o))).collect()
    }

    fn check_against(&self, vocab: &Vocabulary) -> Result<(), DistillError> {
        let expected = (vocab.actions.len(), vocab.objects.len());
        if self.shape() != expected {
            return Err(DistillError::ValidityShape { got: self.shape(), expected });
        }
        Ok(())
    }
}

/// Which actions may receive teacher probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Restriction {
    #[default]
    All,
    UnseenOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub gamma: f64,
    pub restriction: Restriction,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { gamma: DEFAULT_GAMMA, restriction: Restriction::All }
    }
}

pub const DEFAULT_GAMMA: f64 = 100.0;

/// Probability over all actions; zero outside `support`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
    /// Action indices carrying probability mass, ascending.
    pub support: Vec<usize>,
}

pub fn hoi_prompt(action: &str, object: &str) -> Result<String, DistillError> {
    if action.is_empty() || object.is_empty() {
        return Err(DistillError::EmptyName);
    }
    Ok(format!("a picture of person {action} {object}"))
}

pub fn cosine_similarity(v: &[f64], t: &[f64]) -> Result<f64, DistillError> {
    if v.len() != t.len() {
        return Err(DistillError::Dimension(v.len(), t.len()));
    }
    let (nv, nt) = (l2_norm(v), l2_norm(t));
    if nv == 0.0 || nt == 0.0 {
        return Err(DistillError::ZeroNorm);
    }
    let dot: f64 = v.iter().zip(t).map(|(a, b)| a * b).sum();
    Ok((dot / (nv * nt)).clamp(-1.0, 1.0))
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Unit-norm text embeddings, one row per HOI category.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingSet {
    rows: Vec<Vec<f64>>,
}

impl TextEmbeddingSet {
    pub fn new(rows: Vec<Vec<f64>>, vocab: &Vocabulary) -> Result<Self, DistillError> {
        if rows.len() != vocab.hois.len() {
            return Err(DistillError::TextRows { got: rows.len(), expected: vocab.hois.len() });
        }
        let rows = rows.into_iter().map(normalize).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Cosine similarity of a region embedding to every HOI prompt.
    pub fn similarities(&self, region: &[f64]) -> Result<Vec<f64>, DistillError> {
        self.rows.iter().map(|t| cosine_similarity(region, t)).collect()
    }
}

pub fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>, DistillError> {
    let n = l2_norm(&v);
    if n == 0.0 || !n.is_finite() {
        return Err(DistillError::ZeroNorm);
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

/// Teacher action distribution for one pair region.
///
/// `similarities` is aligned with the vocabulary's HOI list and `object`
/// is the category the support is built for.
pub fn distill_target(
    similarities: &[f64],
    object: usize,
    vocab: &Vocabulary,
    validity: &ValidityMatrix,
    config: &DistillConfig,
) -> Result<ActionDistribution, DistillError> {
    if !(config.gamma > 0.0 && config.gamma.is_finite()) {
        return Err(DistillError::Temperature(config.gamma));
    }
    if similarities.len() != vocab.hois.len() {
        return Err(DistillError::SimilarityLength { got: similarities.len(), expected: vocab.hois.len() });
    }
    if object >= vocab.objects.len() {
        return Err(DistillError::UnknownObject(object));
    }
    validity.check_against(vocab)?;

    let mut support = Vec::new();
    let mut logits = Vec::new();
    for a in 0..vocab.actions.len() {
        if !validity.is_valid(a, object) || (config.restriction == Restriction::UnseenOnly && vocab.actions[a].seen) {
            continue;
        }
        let hoi = vocab.hoi_index(a, object).ok_or(DistillError::MissingHoi { action: a, object })?;
        support.push(a);
        logits.push(config.gamma * similarities[hoi]);
    }
    if support.is_empty() {
        return Err(DistillError::EmptySupport(object));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let mut probs = vec![0.0; vocab.actions.len()];
    for (&a, e) in support.iter().zip(&exps) {
        probs[a] = e / total;
    }
    Ok(ActionDistribution { probs, support })
}

/// Teacher probabilities used directly as action scores, over all valid
/// actions for `object`.
pub fn clip_classify(
    similarities: &[f64],
    object: usize,
    vocab: &Vocabulary,
    validity: &ValidityMatrix,
    gamma: f64,
) -> Result<Vec<f64>, DistillError> {
    let cfg = DistillConfig { gamma, restriction: Restriction::All };
    distill_target(similarities, object, vocab, validity, &cfg).map(|d| d.probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn act(name: &str, seen: bool) -> Action {
        Action { name: name.into(), seen }
    }

    /// riding/holding seen, feeding unseen; objects person, bicycle, horse.
    fn vocab() -> Vocabulary {
        Vocabulary::new(
            vec![act("riding", true), act("holding", true), act("feeding", false)],
            vec!["person".into(), "bicycle".into(), "horse".into()],
            vec![(0, 1), (1, 1), (0, 2), (2, 2), (1, 0)],
        )
        .unwrap()
    }

    #[test]
    fn prompts() {
        assert_eq!(hoi_prompt("riding", "bicycle").unwrap(), "a picture of person riding bicycle");
        assert_eq!(hoi_prompt("holding", "cup").unwrap(), "a picture of person holding cup");
        assert_eq!(hoi_prompt("", "bicycle"), Err(DistillError::EmptyName));
        assert_eq!(vocab().prompts().unwrap()[3], "a picture of person feeding horse");
    }

    #[test]
    fn cosine_examples() {
        let t = [1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()];
        assert_abs_diff_eq!(cosine_similarity(&t, &t).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cosine_similarity(&[1.0, 0.0], &t).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
        assert_eq!(cosine_similarity(&[1.0], &[1.0, 0.0]), Err(DistillError::Dimension(1, 2)));
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(DistillError::ZeroNorm));
    }

    #[test]
    fn vocabulary_rules() {
        assert!(Vocabulary::new(vec![act("a", false), act("b", true)], vec!["o".into()], vec![]).is_err());
        assert!(Vocabulary::new(vec![act("a", true)], vec!["o".into()], vec![(0, 0), (0, 0)]).is_err());
        assert!(Vocabulary::new(vec![act("a", true)], vec!["o".into()], vec![(1, 0)]).is_err());
        assert_eq!(vocab().num_seen(), 2);
    }

    #[test]
    fn singleton_support() {
        let v = vocab();
        let m = ValidityMatrix::from_vocabulary(&v);
        let d = distill_target(&[0.1, 0.2, 0.3, 0.4, 0.5], 0, &v, &m, &DistillConfig::default()).unwrap();
        assert_eq!(d.probs, vec![0.0, 1.0, 0.0]);
        assert_eq!(d.support, vec![1]);
    }

    #[test]
    fn two_way_softmax_at_gamma_100() {
        let v = vocab();
        let m = ValidityMatrix::from_vocabulary(&v);
        // bicycle: riding (hoi 0) s=0.3, holding (hoi 1) s=0.2
        let d = distill_target(&[0.3, 0.2, 0.9, 0.9, 0.9], 1, &v, &m, &DistillConfig::default()).unwrap();
        // 1 / (1 + e^-10), high-precision value
        assert_abs_diff_eq!(d.probs[0], 0.999_954_602_131_297_6, epsilon = 1e-12);
        assert_abs_diff_eq!(d.probs[1], 0.000_045_397_868_702_434_4, epsilon = 1e-12);
        assert_eq!(d.probs[2], 0.0);
    }

    #[test]
    fn unseen_only_restriction() {
        let v = vocab();
        let m = ValidityMatrix::from_vocabulary(&v);
        let cfg = DistillConfig { gamma: 100.0, restriction: Restriction::UnseenOnly };
        assert_eq!(distill_target(&[0.3, 0.2, 0.1, 0.1, 0.1], 1, &v, &m, &cfg), Err(DistillError::EmptySupport(1)));
        let d = distill_target(&[0.3, 0.2, 0.9, 0.1, 0.1], 2, &v, &m, &cfg).unwrap();
        assert_eq!(d.probs, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn input_errors() {
        let v = vocab();
        let m = ValidityMatrix::from_vocabulary(&v);
        let cfg = DistillConfig::default();
        assert!(matches!(distill_target(&[0.1], 1, &v, &m, &cfg), Err(DistillError::SimilarityLength { .. })));
        assert_eq!(distill_target(&[0.0; 5], 7, &v, &m, &cfg), Err(DistillError::UnknownObject(7)));
        let bad = DistillConfig { gamma: 0.0, ..cfg };
        assert!(matches!(distill_target(&[0.0; 5], 1, &v, &m, &bad), Err(DistillError::Temperature(_))));
        // validity marks a combination that has no HOI category
        let mut grid = vec![false; 9];
        grid[2 * 3 + 1] = true;
        let m2 = ValidityMatrix::new(3, 3, grid).unwrap();
        assert_eq!(distill_target(&[0.0; 5], 1, &v, &m2, &cfg), Err(DistillError::MissingHoi { action: 2, object: 1 }));
        let m3 = ValidityMatrix::new(2, 3, vec![true; 6]).unwrap();
        assert!(matches!(distill_target(&[0.0; 5], 1, &v, &m3, &cfg), Err(DistillError::ValidityShape { .. })));
    }

    #[test]
    fn clip_classify_zeroes_invalid_actions() {
        let v = vocab();
        let m = ValidityMatrix::from_vocabulary(&v);
        let s = clip_classify(&[0.3, 0.2, 0.9, 0.9, 0.9], 1, &v, &m, 100.0).unwrap();
        assert_eq!(s[2], 0.0);
        assert_eq!(s, distill_target(&[0.3, 0.2, 0.9, 0.9, 0.9], 1, &v, &m, &DistillConfig::default()).unwrap().probs);
        assert!(m.interaction_free().is_empty());
    }

    #[test]
    fn text_embedding_similarities() {
        let v = vocab();
        let rows = vec![vec![2.0, 0.0], vec![0.0, 3.0], vec![1.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]];
        let set = TextEmbeddingSet::new(rows, &v).unwrap();
        let s = set.similarities(&[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(s[0], 1.0);
        assert_abs_diff_eq!(s[2], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        assert!(TextEmbeddingSet::new(vec![vec![1.0]], &v).is_err());
    }

    proptest! {
        #[test]
        fn distribution_invariants(sims in proptest::collection::vec(-1.0..1.0f64, 5), gamma in 1.0..200.0f64, shift in -0.5..0.5f64) {
            let v = vocab();
            let m = ValidityMatrix::from_vocabulary(&v);
            let cfg = DistillConfig { gamma, restriction: Restriction::All };
            let d = distill_target(&sims, 2, &v, &m, &cfg).unwrap();
            prop_assert!((d.support.iter().map(|&a| d.probs[a]).sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert_eq!(d.probs[1], 0.0);
            let s0 = sims[v.hoi_index(0, 2).unwrap()];
            let s2 = sims[v.hoi_index(2, 2).unwrap()];
            prop_assert_eq!(d.probs[0] >= d.probs[2], s0 >= s2);
            let shifted: Vec<f64> = sims.iter().map(|s| s + shift).collect();
            let e = distill_target(&shifted, 2, &v, &m, &cfg).unwrap();
            for (p, q) in d.probs.iter().zip(&e.probs) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }

        #[test]
        fn sharper_temperature_favours_the_argmax(a in -1.0..1.0f64, gap in 0.001..0.5f64, g in 1.0..100.0f64) {
            let v = vocab();
            let m = ValidityMatrix::from_vocabulary(&v);
            let sims = [0.0, 0.0, a + gap, a, 0.0];
            let p = |gamma| distill_target(&sims, 2, &v, &m, &DistillConfig { gamma, restriction: Restriction::All }).unwrap().probs[0];
            let (lo, hi) = (p(g), p(g * 1.5));
            prop_assert!(hi > lo || hi == 1.0);
        }
    }
}
