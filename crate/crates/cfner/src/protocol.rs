//! The class-incremental experiment loop: per-step train / best-epoch
//! select / evaluate, repeated over seeds, with span-level F1 reporting.
//!
//! Within a seed the steps are strictly sequential (step i+1 starts from
//! step i's best checkpoint, which also serves as the frozen teacher).
//! Seeds are independent; a numeric failure aborts only its seed and is
//! recorded in the report.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    extendner_objective, finetune_objective, st_relabel, BaselineKind,
};
use crate::causal::{
    adaptive_weight, cfner_batch_objective, curriculum_threshold, matched_part_size,
    CfnerStepContext, StepDiagnostics,
};
use crate::config::ExperimentConfig;
use crate::corpus::{
    build_cl_schedule, greedy_partition, mask_labels, read_conll, split_corpus, synth_corpus,
    ClSchedule, Corpus, Tag,
};
use crate::error::{CfnerError, Result};
use crate::metrics::{extract_spans, macro_f1, micro_f1, per_type_f1, Span};
use crate::objective::BatchObjective;
use crate::tagger::{adam_step, AdamHyper, AdamState, TaggerModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepResult {
    pub step: usize,
    pub recognized: Vec<String>,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_type: Vec<(String, f64)>,
    /// Excluded from serialized reports so identical runs stay
    /// byte-identical.
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub steps: Vec<StepResult>,
    #[serde(skip)]
    pub diagnostics: Vec<StepDiagnostics>,
    /// Set when the seed aborted on a numeric failure.
    pub failure: Option<String>,
}

impl SeedOutcome {
    /// Across-step mean micro-F1 ("average result on all CL steps",
    /// first step included).
    pub fn mean_micro(&self) -> f64 {
        mean(&self.steps.iter().map(|s| s.micro_f1).collect::<Vec<_>>())
    }

    pub fn mean_macro(&self) -> f64 {
        mean(&self.steps.iter().map(|s| s.macro_f1).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedOutcome>,
    pub mean_micro_f1: f64,
    pub std_micro_f1: f64,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Mean and sample standard deviation; a single sample reports std 0.
pub fn aggregate(per_seed_means: &[f64]) -> (f64, f64) {
    let m = mean(per_seed_means);
    if per_seed_means.len() < 2 {
        return (m, 0.0);
    }
    let var = per_seed_means
        .iter()
        .map(|x| (x - m) * (x - m))
        .sum::<f64>()
        / (per_seed_means.len() - 1) as f64;
    (m, var.sqrt())
}

fn derive_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(6364136223846793005)
        .wrapping_add(salt.wrapping_mul(0x9E3779B97F4A7C15))
}

/// Train/dev/test corpora for one seed.
pub fn load_datasets(config: &ExperimentConfig, seed: u64) -> Result<(Corpus, Corpus, Corpus)> {
    if config.dataset == "synth" {
        let corpus = synth_corpus(&config.synth.to_spec(), derive_seed(seed, 0))?;
        Ok(split_corpus(&corpus, derive_seed(seed, 1)))
    } else {
        let dir = std::path::Path::new(&config.dataset);
        let read = |name: &str| -> Result<Corpus> {
            let f = std::fs::File::open(dir.join(name))?;
            Ok(read_conll(std::io::BufReader::new(f))?.corpus)
        };
        Ok((read("train.conll")?, read("dev.conll")?, read("test.conll")?))
    }
}

/// Predicted spans of a sentence, restricted to `keep` types. Invalid
/// BIO transitions in the argmax sequence are repaired before extraction.
fn predict_spans(model: &TaggerModel, sentence: &crate::corpus::Sentence, keep: &BTreeSet<String>) -> BTreeSet<Span> {
    let tags: Vec<Tag> = model
        .predict_tags(sentence)
        .iter()
        .map(|t| Tag::parse(t).expect("model labels are valid tags"))
        .collect();
    extract_spans(&tags)
        .into_iter()
        .filter(|(ty, _, _)| keep.contains(ty))
        .collect()
}

/// Span-level evaluation of `model` on `corpus` restricted to `types`:
/// gold masked to the type set, predicted spans filtered to it.
pub fn evaluate(
    model: &TaggerModel,
    corpus: &Corpus,
    types: &[String],
) -> (f64, f64, Vec<(String, f64)>) {
    let keep: BTreeSet<String> = types.iter().cloned().collect();
    let masked = mask_labels(corpus, &keep);
    let gold: Vec<BTreeSet<Span>> = masked
        .sentences
        .iter()
        .map(|s| extract_spans(&s.tags()))
        .collect();
    let pred: Vec<BTreeSet<Span>> = masked
        .sentences
        .iter()
        .map(|s| predict_spans(model, s, &keep))
        .collect();
    (
        micro_f1(&pred, &gold),
        macro_f1(&pred, &gold, types),
        per_type_f1(&pred, &gold, types),
    )
}

enum StepMethod {
    PlainCe { slice: Corpus },
    ExtendNer {
        slice: Corpus,
        ann: crate::causal::StepAnnotations,
        n_old_labels: usize,
    },
    CollidingEffect {
        slice: Corpus,
        ctx: CfnerStepContext,
    },
}

impl StepMethod {
    fn slice(&self) -> &Corpus {
        match self {
            StepMethod::PlainCe { slice } => slice,
            StepMethod::ExtendNer { slice, .. } => slice,
            StepMethod::CollidingEffect { slice, .. } => slice,
        }
    }

    fn objective(
        &self,
        model: &TaggerModel,
        batch: &[usize],
        config: &ExperimentConfig,
        delta: f64,
    ) -> Result<BatchObjective> {
        match self {
            StepMethod::PlainCe { slice } => finetune_objective(model, slice, batch),
            StepMethod::ExtendNer {
                slice,
                ann,
                n_old_labels,
            } => extendner_objective(
                model,
                slice,
                batch,
                ann,
                *n_old_labels,
                config.t_student,
                config.kl_as_written,
            ),
            StepMethod::CollidingEffect { slice, ctx } => {
                cfner_batch_objective(model, slice, batch, ctx, delta)
            }
        }
    }
}

/// Runs the full schedule for one seed.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    let (train, dev, test) = load_datasets(config, seed)?;
    let schedule = build_cl_schedule(&train.schema, config.fg, config.pg)?;
    let slices = greedy_partition(&train, &schedule, derive_seed(seed, 2))?;

    let dims = config.encoder.to_dims();
    let mut model = TaggerModel::new(
        dims,
        slices[0]
            .sentences
            .iter()
            .flat_map(|s| s.tokens.iter().map(|t| t.surface.clone())),
        derive_seed(seed, 3),
    );
    let mut prev_best: Option<TaggerModel> = None;

    let hp = AdamHyper {
        lr: config.learning_rate,
        ..AdamHyper::default()
    };
    let curriculum = config.curriculum();
    let epochs = config.epochs_per_step();

    let mut steps = Vec::new();
    let mut diagnostics = Vec::new();

    for (step, new_types) in schedule.steps.iter().enumerate() {
        let started = Instant::now();
        let keep_new: BTreeSet<String> = new_types.iter().cloned().collect();
        let masked_train = mask_labels(&slices[step], &keep_new);
        let masked_dev = mask_labels(&dev, &keep_new);

        if step > 0 {
            model = prev_best
                .clone()
                .expect("previous step produced a model");
        }
        model = model.extend_classifier(new_types, derive_seed(seed, 100 + step as u64))?;
        model.extend_vocab(
            masked_train
                .sentences
                .iter()
                .flat_map(|s| s.tokens.iter().map(|t| t.surface.clone())),
            derive_seed(seed, 200 + step as u64),
        );

        let mut diag = StepDiagnostics::default();
        let method = build_step_method(
            config,
            &masked_train,
            prev_best.as_ref(),
            new_types.len(),
            &mut diag,
        )?;

        let mut adam = AdamState::new(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 300 + step as u64));
        let mut order: Vec<usize> = (0..method.slice().sentences.len()).collect();
        let mut best_f1 = f64::NEG_INFINITY;
        let mut best_model = model.clone();

        for epoch in 1..=epochs {
            let delta = curriculum_threshold(&curriculum, epoch);
            diag.delta_trace.push(delta);
            if let StepMethod::CollidingEffect { slice, ctx } = &method {
                diag.matched_part_sizes.push(matched_part_size(slice, ctx, delta));
            }
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size) {
                let obj = method.objective(&model, batch, config, delta)?;
                let (loss, grads) = obj.value_and_grads(&model)?;
                if !loss.is_finite() {
                    return Err(CfnerError::Numeric {
                        context: format!("step {step} epoch {epoch} batch loss"),
                        value: loss,
                    });
                }
                adam_step(&mut model, &grads, &mut adam, &hp);
            }
            let (dev_micro, _, _) = evaluate(&model, &masked_dev, new_types);
            if dev_micro > best_f1 {
                best_f1 = dev_micro;
                best_model = model.clone();
            }
        }

        let recognized = schedule.recognized_after(step);
        let (mi, ma, per_type) = evaluate(&best_model, &test, &recognized);
        steps.push(StepResult {
            step,
            recognized,
            micro_f1: mi,
            macro_f1: ma,
            per_type,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
        diagnostics.push(diag);
        prev_best = Some(best_model);
    }

    Ok(SeedOutcome {
        seed,
        steps,
        diagnostics,
        failure: None,
    })
}

fn build_step_method(
    config: &ExperimentConfig,
    masked_train: &Corpus,
    old_model: Option<&TaggerModel>,
    num_new_types: usize,
    diag: &mut StepDiagnostics,
) -> Result<StepMethod> {
    let old = match old_model {
        // Step 0 (or a teacher that knows no entities): pure cross-entropy.
        Some(m) if m.num_entity_types() > 0 => m,
        _ => {
            return Ok(StepMethod::PlainCe {
                slice: masked_train.clone(),
            })
        }
    };
    match config.baseline {
        BaselineKind::FinetuneOnly => Ok(StepMethod::PlainCe {
            slice: masked_train.clone(),
        }),
        BaselineKind::SelfTraining => Ok(StepMethod::PlainCe {
            slice: st_relabel(old, masked_train),
        }),
        BaselineKind::ExtendNer => {
            let ann = crate::causal::annotate(old, masked_train, config.t_teacher);
            diag.count_new_entity = ann.count_new_entity;
            diag.count_defined_other = ann.count_defined_other;
            diag.count_undefined_other = ann.count_undefined_other;
            Ok(StepMethod::ExtendNer {
                slice: masked_train.clone(),
                ann,
                n_old_labels: old.num_labels(),
            })
        }
        BaselineKind::Cfner | BaselineKind::StCf => {
            let lambda = adaptive_weight(
                config.lambda_base,
                old.num_entity_types(),
                num_new_types,
            )?;
            let ctx = CfnerStepContext::build(
                old,
                masked_train,
                config.k_new(),
                config.k_other(),
                lambda,
                config.t_teacher,
                config.t_student,
                config.baseline == BaselineKind::StCf,
                config.kl_as_written,
            );
            diag.count_new_entity = ctx.annotations.count_new_entity;
            diag.count_defined_other = ctx.annotations.count_defined_other;
            diag.count_undefined_other = ctx.annotations.count_undefined_other;
            diag.lambda = lambda;
            Ok(StepMethod::CollidingEffect {
                slice: masked_train.clone(),
                ctx,
            })
        }
    }
}

/// Runs every configured seed; a failing seed is recorded instead of
/// aborting the experiment, and the aggregate covers succeeding seeds.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let mut seeds = Vec::new();
    for &seed in &config.seeds {
        match run_seed(config, seed) {
            Ok(outcome) => seeds.push(outcome),
            Err(CfnerError::Numeric { context, value }) => seeds.push(SeedOutcome {
                seed,
                steps: Vec::new(),
                diagnostics: Vec::new(),
                failure: Some(format!("numeric failure in {context}: {value}")),
            }),
            Err(e) => return Err(e),
        }
    }
    let micro: Vec<f64> = seeds
        .iter()
        .filter(|s| s.failure.is_none())
        .map(SeedOutcome::mean_micro)
        .collect();
    let macro_: Vec<f64> = seeds
        .iter()
        .filter(|s| s.failure.is_none())
        .map(SeedOutcome::mean_macro)
        .collect();
    let (mi_m, mi_s) = aggregate(&micro);
    let (ma_m, ma_s) = aggregate(&macro_);
    Ok(ExperimentReport {
        config: config.clone(),
        seeds,
        mean_micro_f1: mi_m,
        std_micro_f1: mi_s,
        mean_macro_f1: ma_m,
        std_macro_f1: ma_s,
    })
}

/// Per-step schedule used by a report (reconstructed for rendering).
pub fn report_schedule(report: &ExperimentReport) -> Option<ClSchedule> {
    report
        .seeds
        .iter()
        .find(|s| s.failure.is_none())
        .map(|s| ClSchedule {
            steps: s
                .steps
                .iter()
                .scan(Vec::new(), |prev: &mut Vec<String>, step| {
                    let fresh: Vec<String> = step
                        .recognized
                        .iter()
                        .filter(|t| !prev.contains(t))
                        .cloned()
                        .collect();
                    *prev = step.recognized.clone();
                    Some(fresh)
                })
                .collect(),
        })
}
