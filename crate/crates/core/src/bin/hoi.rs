use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hoi_core::distillation::{DistillConfig, Restriction, TextEmbeddingSet, ValidityMatrix, Vocabulary};
use hoi_core::evaluation::{evaluate, ApMode, Detection, EvalOptions, SplitConfig};
use hoi_core::harness::io::{
    self, pair_embedding_id, read_embeddings, read_file, read_splits, read_validity, read_vocab, schema,
    splits_to_toml, validity_to_csv, write_file, write_text, write_vocab, LossRecord, SimilarityRecord, TargetRecord,
};
use hoi_core::harness::pipeline::{
    build_targets, detections_from_predictions, potential_count, run_loss, run_match, LossConfig,
};
use hoi_core::harness::sim::{generate_corpus, SimConfig};
use hoi_core::harness::{HarnessError, OUT_DIR_ENV};
use hoi_core::losses::{ActionLossForm, LossWeights, Reduction};
use hoi_core::matching::{
    GroundTruthScene, MatchConfig, MatchResult, PredictionSet, QueryLabel, DEFAULT_IOU_THRESH, DEFAULT_THRES_IS,
    DEFAULT_TOPK,
};

#[derive(Parser)]
#[command(name = "hoi", version, about = "Zero-shot HOI matching, soft targets, losses and evaluation")]
struct Cli {
    /// Output directory (defaults to $HOI_OUT_DIR, then the working directory).
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus.
    Simulate(SimulateArgs),
    /// Two-stage matching of queries to annotated and potential pairs.
    Match(MatchArgs),
    /// Teacher soft action targets for the selected queries.
    Distill(DistillArgs),
    /// Per-scene and corpus loss breakdowns.
    Loss(LossArgs),
    /// mAP per split and unseen-pair recall.
    Eval(EvalArgs),
    /// Text prompts for every HOI category, in HOI order.
    Prompts {
        #[arg(long)]
        vocab: PathBuf,
    },
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    scenes: usize,
    #[arg(long, default_value_t = 0.0)]
    box_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    score_noise: f64,
    #[arg(long, default_value_t = 0.7)]
    seen_fraction: f64,
    #[arg(long, default_value_t = hoi_core::matching::DEFAULT_QUERIES)]
    queries: usize,
    /// Full simulation config as TOML; overrides the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args)]
struct MatchArgs {
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    preds: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOPK)]
    topk: usize,
    #[arg(long, default_value_t = DEFAULT_THRES_IS)]
    thres_is: f64,
    #[arg(long, default_value_t = DEFAULT_IOU_THRESH)]
    iou_thresh: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum RestrictArg {
    All,
    UnseenOnly,
}

#[derive(clap::Args)]
struct DistillArgs {
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    matches: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Validity CSV; derived from the vocabulary when absent.
    #[arg(long)]
    validity: Option<PathBuf>,
    /// Precomputed similarities, one record per query.
    #[arg(long, conflicts_with_all = ["embeddings", "text_embeddings"])]
    similarities: Option<PathBuf>,
    /// Pair-region embeddings keyed `<scene>#<query>`.
    #[arg(long, requires = "text_embeddings")]
    embeddings: Option<PathBuf>,
    /// Text embeddings, one per HOI category in HOI order.
    #[arg(long, requires = "embeddings")]
    text_embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = hoi_core::distillation::DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(long, value_enum, default_value_t = RestrictArg::All)]
    restrict: RestrictArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReductionArg {
    Mean,
    Sum,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActionLossArg {
    Bce,
    Focal,
}

#[derive(clap::Args)]
struct LossArgs {
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    preds: PathBuf,
    #[arg(long)]
    matches: PathBuf,
    #[arg(long)]
    targets: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// bbox,giou,obj,is,act,clip
    #[arg(long, value_delimiter = ',', num_args = 6)]
    weights: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = ReductionArg::Mean)]
    reduction: ReductionArg,
    #[arg(long, value_enum, default_value_t = ActionLossArg::Bce)]
    action_loss: ActionLossArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ApArg {
    AllPoint,
    #[value(name = "11-point")]
    ElevenPoint,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Split TOML; seen/unseen by action flags when absent.
    #[arg(long)]
    splits: Option<PathBuf>,
    /// Scored triplets. Derived from --preds when absent.
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Query outputs, used for U-R@K and for detections.
    #[arg(long)]
    preds: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [3usize, 5, 10])]
    k: Vec<usize>,
    #[arg(long, value_enum, default_value_t = ApArg::AllPoint)]
    ap: ApArg,
    /// Leave the interactive score out of detections derived from --preds.
    #[arg(long)]
    no_interactive: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let out = io::output_dir(cli.out.as_deref());
    match run(cli.cmd, &out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn create_dir(out: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))
}

fn scenes_for(path: &Path, vocab: &Vocabulary) -> Result<Vec<GroundTruthScene>, HarnessError> {
    let scenes: Vec<GroundTruthScene> = read_file(path, schema::SCENES)?;
    for s in &scenes {
        s.validate(vocab.num_seen())?;
    }
    Ok(scenes)
}

fn preds_for(path: &Path, vocab: &Vocabulary) -> Result<Vec<PredictionSet>, HarnessError> {
    let preds: Vec<PredictionSet> = read_file(path, schema::PREDICTIONS)?;
    for p in &preds {
        p.validate(vocab.objects().len() + 1, vocab.actions().len())?;
    }
    Ok(preds)
}

fn run(cmd: Cmd, out: &Path) -> Result<(), HarnessError> {
    match cmd {
        Cmd::Simulate(a) => simulate(a, out),
        Cmd::Match(a) => {
            let vocab = read_vocab(&a.vocab)?;
            let scenes = scenes_for(&a.scenes, &vocab)?;
            let preds = preds_for(&a.preds, &vocab)?;
            let cfg = MatchConfig {
                topk: a.topk,
                thres_is: a.thres_is,
                iou_thresh: a.iou_thresh,
                ..MatchConfig::new(vocab.num_seen())
            };
            let results = run_match(&scenes, &preds, &cfg)?;
            create_dir(out)?;
            write_file(&out.join("matches.jsonl"), schema::MATCHES, &results)?;
            let count = |l| results.iter().map(|r: &MatchResult| r.count(l)).sum::<usize>();
            println!(
                "matched {} scenes: {} seen matches, {} potential, {} omitted",
                results.len(),
                count(QueryLabel::SeenMatch),
                potential_count(&results),
                count(QueryLabel::Omitted)
            );
            Ok(())
        }
        Cmd::Distill(a) => distill(a, out),
        Cmd::Loss(a) => {
            let vocab = read_vocab(&a.vocab)?;
            let scenes = scenes_for(&a.scenes, &vocab)?;
            let preds = preds_for(&a.preds, &vocab)?;
            let matches: Vec<MatchResult> = read_file(&a.matches, schema::MATCHES)?;
            let targets: Vec<TargetRecord> = read_file(&a.targets, schema::TARGETS)?;
            let config = LossConfig {
                weights: match &a.weights {
                    Some(w) => LossWeights::from_slice(w)?,
                    None => LossWeights::default(),
                },
                reduction: match a.reduction {
                    ReductionArg::Mean => Reduction::Mean,
                    ReductionArg::Sum => Reduction::Sum,
                },
                action_form: match a.action_loss {
                    ActionLossArg::Bce => ActionLossForm::Bce,
                    ActionLossArg::Focal => ActionLossForm::FOCAL_DEFAULT,
                },
            };
            let records = run_loss(&scenes, &preds, &matches, &targets, vocab.num_seen(), &config)?;
            create_dir(out)?;
            write_file(&out.join("losses.jsonl"), schema::LOSSES, &records)?;
            let last: &LossRecord = records.last().expect("corpus record");
            let p = &last.breakdown.parts;
            println!(
                "mean over {} scenes: bbox {:.6} giou {:.6} obj {:.6} is {:.6} act {:.6} clip {:.6} total {:.6}",
                scenes.len(),
                p.bbox,
                p.giou,
                p.obj,
                p.is,
                p.act,
                p.clip,
                last.breakdown.total
            );
            Ok(())
        }
        Cmd::Eval(a) => eval(a, out),
        Cmd::Prompts { vocab } => {
            let mut stdout = std::io::stdout().lock();
            for p in read_vocab(&vocab)?.prompts()? {
                match writeln!(stdout, "{p}") {
                    Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => break,
                    r => r.map_err(|e| HarnessError::io("<stdout>", e))?,
                }
            }
            Ok(())
        }
    }
}

fn simulate(a: SimulateArgs, out: &Path) -> Result<(), HarnessError> {
    let cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
            toml::from_str(&text).map_err(|e| HarnessError::Parse {
                file: path.display().to_string(),
                line: 0,
                message: e.to_string(),
            })?
        }
        None => SimConfig {
            seed: a.seed,
            scenes: a.scenes,
            box_noise: a.box_noise,
            score_noise: a.score_noise,
            seen_fraction: a.seen_fraction,
            queries: a.queries,
            ..SimConfig::default()
        },
    };
    let c = generate_corpus(&cfg)?;
    create_dir(out)?;
    write_vocab(&out.join("vocab.jsonl"), &c.vocab)?;
    write_text(&out.join("validity.csv"), &validity_to_csv(&c.vocab, &c.validity)?)?;
    write_text(&out.join("splits.toml"), &splits_to_toml(&c.splits)?)?;
    write_file(&out.join("scenes.jsonl"), schema::SCENES, &c.scenes)?;
    write_file(&out.join("preds.jsonl"), schema::PREDICTIONS, &c.predictions)?;
    write_file(&out.join("similarities.jsonl"), schema::SIMILARITIES, &c.similarities)?;
    write_file(&out.join("detections.jsonl"), schema::DETECTIONS, &c.detections)?;
    let seen: usize = c.scenes.iter().map(|s| s.seen.len()).sum();
    let held: usize = c.scenes.iter().map(|s| s.held_out.len()).sum();
    println!(
        "wrote {} scenes ({seen} annotated pairs, {held} held-out pairs, {} HOI categories) to {}",
        c.scenes.len(),
        c.vocab.hois().len(),
        out.display()
    );
    Ok(())
}

fn distill(a: DistillArgs, out: &Path) -> Result<(), HarnessError> {
    let vocab = read_vocab(&a.vocab)?;
    let scenes = scenes_for(&a.scenes, &vocab)?;
    let validity = match &a.validity {
        Some(p) => read_validity(p, &vocab)?,
        None => ValidityMatrix::from_vocabulary(&vocab),
    };
    let matches: Vec<MatchResult> = read_file(&a.matches, schema::MATCHES)?;
    let sims: Vec<SimilarityRecord> = match (&a.similarities, &a.embeddings, &a.text_embeddings) {
        (Some(p), _, _) => read_file(p, schema::SIMILARITIES)?,
        (None, Some(e), Some(t)) => {
            let text = TextEmbeddingSet::new(read_embeddings(t)?.into_iter().map(|r| r.vector).collect(), &vocab)?;
            let regions: std::collections::HashMap<String, Vec<f64>> =
                read_embeddings(e)?.into_iter().map(|r| (r.id, r.vector)).collect();
            let mut sims = Vec::new();
            for m in &matches {
                for (q, l) in m.labels.iter().enumerate() {
                    if !matches!(l, QueryLabel::SeenMatch | QueryLabel::Potential) {
                        continue;
                    }
                    let id = pair_embedding_id(&m.scene_id, q);
                    let v = regions.get(&id).ok_or_else(|| HarnessError::Inputs(format!("no pair embedding {id}")))?;
                    sims.push(SimilarityRecord {
                        scene_id: m.scene_id.clone(),
                        query: q,
                        similarities: text.similarities(v)?,
                    });
                }
            }
            sims
        }
        _ => return Err(HarnessError::Inputs("need --similarities or --embeddings with --text-embeddings".into())),
    };
    let config = DistillConfig {
        gamma: a.gamma,
        restriction: match a.restrict {
            RestrictArg::All => Restriction::All,
            RestrictArg::UnseenOnly => Restriction::UnseenOnly,
        },
    };
    let targets = build_targets(&scenes, &matches, &sims, &vocab, &validity, &config)?;
    create_dir(out)?;
    write_file(&out.join("targets.jsonl"), schema::TARGETS, &targets)?;
    println!("wrote {} soft targets (gamma {})", targets.len(), a.gamma);
    Ok(())
}

fn eval(a: EvalArgs, out: &Path) -> Result<(), HarnessError> {
    let vocab = read_vocab(&a.vocab)?;
    let scenes = scenes_for(&a.scenes, &vocab)?;
    let splits = match &a.splits {
        Some(p) => read_splits(p)?,
        None => SplitConfig::from_action_flags(&vocab, Default::default()),
    };
    let preds = a.preds.as_deref().map(|p| preds_for(p, &vocab)).transpose()?;
    let dets: Vec<Detection> = match (&a.detections, &preds) {
        (Some(p), _) => read_file(p, schema::DETECTIONS)?,
        (None, Some(p)) => detections_from_predictions(p, &vocab, !a.no_interactive)?,
        (None, None) => return Err(HarnessError::Inputs("need --detections or --preds".into())),
    };
    let options = EvalOptions {
        ap_mode: match a.ap {
            ApArg::AllPoint => ApMode::AllPoint,
            ApArg::ElevenPoint => ApMode::ElevenPoint,
        },
        ..EvalOptions::default()
    };
    let k: &[usize] = if preds.is_some() { &a.k } else { &[] };
    let report = evaluate(&dets, &scenes, &vocab, &splits, preds.as_deref(), k, &options)?;
    create_dir(out)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| HarnessError::Format(e.to_string()))?;
    write_text(&out.join("report.json"), &(json + "\n"))?;
    let table = report.to_table();
    write_text(&out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}
