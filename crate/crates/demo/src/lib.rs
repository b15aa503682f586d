//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns a JSON string so the page needs no generated
//! typings beyond the glue wasm-bindgen emits.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use hoi_core::distillation::{distill_target, Action, DistillConfig, Restriction, ValidityMatrix, Vocabulary};
use hoi_core::geometry::{giou, iou, BBox};
use hoi_core::harness::sim::{generate_corpus, SimConfig};
use hoi_core::matching::{enumerate_unknown_pairs, two_stage_match, MatchConfig};

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn bbox(v: &[f64]) -> Result<BBox, JsError> {
    match v {
        [x0, y0, x1, y1] => BBox::new(*x0, *y0, *x1, *y1).map_err(err),
        _ => Err(JsError::new("a box needs four numbers")),
    }
}

/// IoU, GIoU and the enclosing box of two corner boxes.
#[wasm_bindgen]
pub fn box_overlap(a: &[f64], b: &[f64]) -> Result<String, JsError> {
    let (a, b) = (bbox(a)?, bbox(b)?);
    let g = giou(&a, &b).map_err(err)?;
    Ok(json!({ "iou": iou(&a, &b), "giou": g, "enclosing": a.enclosing(&b) }).to_string())
}

/// Teacher distribution over actions that are all valid for one object.
/// `seen[i]` marks action `i` as seen; seen actions must come first.
#[wasm_bindgen]
pub fn soft_target(similarities: &[f64], seen: &[u8], gamma: f64, unseen_only: bool) -> Result<String, JsError> {
    if similarities.len() != seen.len() {
        return Err(JsError::new("one seen flag per similarity"));
    }
    let actions = seen.iter().enumerate().map(|(i, &s)| Action { name: format!("a{i}"), seen: s != 0 }).collect();
    let hois = (0..similarities.len()).map(|a| (a, 1)).collect();
    let vocab = Vocabulary::new(actions, vec!["person".into(), "thing".into()], hois).map_err(err)?;
    let validity = ValidityMatrix::from_vocabulary(&vocab);
    let restriction = if unseen_only { Restriction::UnseenOnly } else { Restriction::All };
    let d = distill_target(similarities, 1, &vocab, &validity, &DistillConfig { gamma, restriction }).map_err(err)?;
    serde_json::to_string(&d).map_err(err)
}

/// One synthetic scene, its query outputs and the two-stage labels.
#[wasm_bindgen]
pub fn match_scene(
    seed: u64,
    topk: usize,
    thres_is: f64,
    box_noise: f64,
    score_noise: f64,
    queries: usize,
) -> Result<String, JsError> {
    let cfg = SimConfig {
        seed,
        scenes: 1,
        box_noise,
        score_noise,
        queries,
        interactions: (1, 3.min(queries)),
        seen_fraction: 0.5,
        ..SimConfig::default()
    };
    let corpus = generate_corpus(&cfg).map_err(err)?;
    let (scene, preds) = (&corpus.scenes[0], &corpus.predictions[0]);
    let mc = MatchConfig { topk, thres_is, ..MatchConfig::new(corpus.vocab.num_seen()) };
    let result = two_stage_match(scene, preds, &mc).map_err(err)?;
    let pair = |h: usize, o: usize| json!({ "human": scene.boxes[h].bbox, "object": scene.boxes[o].bbox });
    let queries: Vec<Value> = preds
        .predictions
        .iter()
        .zip(&result.labels)
        .zip(&result.is_targets)
        .map(|((p, l), t)| json!({ "human": p.human, "object": p.object, "interactive": p.interactive, "label": l, "target": t }))
        .collect();
    Ok(json!({
        "width": scene.width,
        "height": scene.height,
        "boxes": scene.boxes,
        "seen": scene.seen_pairs().iter().map(|&(h, o, _)| pair(h, o)).collect::<Vec<_>>(),
        "held_out": scene.held_out_pairs().iter().map(|&(h, o, _)| pair(h, o)).collect::<Vec<_>>(),
        "unknown": enumerate_unknown_pairs(scene).len(),
        "queries": queries,
    })
    .to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_of_shifted_boxes() {
        let v: Value =
            serde_json::from_str(&box_overlap(&[0.0, 0.0, 2.0, 2.0], &[1.0, 0.0, 3.0, 2.0]).unwrap()).unwrap();
        assert!((v["iou"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((v["giou"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn sharp_target() {
        let v: Value = serde_json::from_str(&soft_target(&[0.3, 0.2], &[1, 0], 100.0, false).unwrap()).unwrap();
        assert!((v["probs"][0].as_f64().unwrap() - 0.9999546021312976).abs() < 1e-12);
        let v: Value = serde_json::from_str(&soft_target(&[0.3, 0.2], &[1, 0], 100.0, true).unwrap()).unwrap();
        assert_eq!(v["probs"][0].as_f64().unwrap(), 0.0);
    }

    #[test]
    fn scene_has_one_label_per_query() {
        let v: Value = serde_json::from_str(&match_scene(3, 3, 0.5, 0.05, 0.1, 16).unwrap()).unwrap();
        assert_eq!(v["queries"].as_array().unwrap().len(), 16);
    }
}
