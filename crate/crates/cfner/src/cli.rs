//! Library-side implementations of the command-line subcommands:
//! dataset synthesis, slice partitioning, experiment execution, gradient
//! auditing and report rendering.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::baselines::{
    extendner_objective, finetune_objective, st_relabel, BaselineKind,
};
use crate::causal::{adaptive_weight, cfner_batch_objective, CfnerStepContext};
use crate::config::ExperimentConfig;
use crate::corpus::{
    build_cl_schedule, corpus_stats, greedy_partition, mask_labels, split_corpus, synth_corpus,
    write_conll, Corpus, SynthSpec,
};
use crate::error::{CfnerError, Result};
use crate::objective::{finite_diff_check, GradCheckReport, Objective};
use crate::protocol::{load_datasets, run_experiment};
use crate::report::{
    read_jsonl, render_table, step_curve, to_records, write_curve_csv, write_jsonl,
    write_merged_curve_csv, ReportRecord,
};
use crate::tagger::{GradientBundle, TaggerModel};

#[derive(Debug, Serialize)]
struct SynthManifest<'a> {
    seed: u64,
    spec: &'a SynthSpec,
    train_sentences: usize,
    dev_sentences: usize,
    test_sentences: usize,
    entity_types: Vec<String>,
}

/// Writes train/dev/test CoNLL files plus a JSON manifest; byte-identical
/// across runs with the same spec and seed.
pub fn cmd_synth(spec: &SynthSpec, seed: u64, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let corpus = synth_corpus(spec, seed)?;
    let (train, dev, test) = split_corpus(&corpus, seed.wrapping_add(1));
    for (name, part) in [("train", &train), ("dev", &dev), ("test", &test)] {
        let mut f = std::fs::File::create(out.join(format!("{name}.conll")))?;
        write_conll(part, &mut f)?;
    }
    let manifest = SynthManifest {
        seed,
        spec,
        train_sentences: train.sentences.len(),
        dev_sentences: dev.sentences.len(),
        test_sentences: test.sentences.len(),
        entity_types: corpus.schema.entity_types().to_vec(),
    };
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct PartitionManifest {
    seed: u64,
    schedule: Vec<Vec<String>>,
    slice_sizes: Vec<usize>,
    /// Per-slice counts of entity spans by type.
    label_histograms: Vec<BTreeMap<String, usize>>,
}

/// Partitions the training set of the configured dataset into one CoNLL
/// file per CL step, plus a manifest with sizes and label histograms.
pub fn cmd_partition(config: &ExperimentConfig, out: &Path) -> Result<()> {
    config.validate()?;
    std::fs::create_dir_all(out)?;
    let seed = config.seeds[0];
    let (train, _, _) = load_datasets(config, seed)?;
    let schedule = build_cl_schedule(&train.schema, config.fg, config.pg)?;
    let slices = greedy_partition(&train, &schedule, seed)?;
    let mut sizes = Vec::new();
    let mut histograms = Vec::new();
    for (j, slice) in slices.iter().enumerate() {
        let mut f = std::fs::File::create(out.join(format!("slice_{j:02}.conll")))?;
        write_conll(slice, &mut f)?;
        sizes.push(slice.sentences.len());
        histograms.push(corpus_stats(slice));
    }
    let manifest = PartitionManifest {
        seed,
        schedule: schedule.steps.clone(),
        slice_sizes: sizes,
        label_histograms: histograms,
    };
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Runs the experiment and writes `report.jsonl`, `curve.csv` and
/// per-seed step diagnostics under `out`.
pub fn cmd_run(config: &ExperimentConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let report = run_experiment(config)?;
    let records = to_records(&report);
    let mut f = std::fs::File::create(out.join("report.jsonl"))?;
    write_jsonl(&records, &mut f)?;
    let mut c = std::fs::File::create(out.join("curve.csv"))?;
    write_curve_csv(&step_curve(&records), &mut c)?;
    for seed in &report.seeds {
        if seed.diagnostics.is_empty() {
            continue;
        }
        let dir = out.join(format!("seed_{}", seed.seed));
        std::fs::create_dir_all(&dir)?;
        for (i, d) in seed.diagnostics.iter().enumerate() {
            std::fs::write(
                dir.join(format!("step_{i:02}_diagnostics.json")),
                serde_json::to_string_pretty(d)?,
            )?;
        }
    }
    for seed in &report.seeds {
        if let Some(msg) = &seed.failure {
            eprintln!("seed {} aborted: {msg}", seed.seed);
        }
    }
    println!("{}", render_table(&[records]));
    Ok(())
}

/// Renders a summary table and a merged per-step CSV from report files.
pub fn cmd_report(paths: &[std::path::PathBuf], out: Option<&Path>) -> Result<()> {
    let mut all: Vec<Vec<ReportRecord>> = Vec::new();
    let mut curves = Vec::new();
    for p in paths {
        let records = read_jsonl(p)?;
        let name = records
            .iter()
            .find_map(|r| match r {
                ReportRecord::Aggregate(a) => Some(a.baseline.clone()),
                _ => None,
            })
            .unwrap_or_else(|| p.display().to_string());
        curves.push((name, step_curve(&records)));
        all.push(records);
    }
    print!("{}", render_table(&all));
    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        let mut f = std::fs::File::create(out.join("curves.csv"))?;
        write_merged_curve_csv(&curves, &mut f)?;
    }
    Ok(())
}

/// Adds a value term hidden from the analytic gradients; used to verify
/// the finite-difference detector actually fires.
struct CorruptedObjective<O: Objective> {
    inner: O,
}

impl<O: Objective> Objective for CorruptedObjective<O> {
    fn value(&self, model: &TaggerModel) -> Result<f64> {
        Ok(self.inner.value(model)? + 0.01 * model.classifier.prototypes[[0, 0]])
    }

    fn value_and_grads(&self, model: &TaggerModel) -> Result<(f64, GradientBundle)> {
        self.inner.value_and_grads(model)
    }
}

/// One random gradcheck scenario: a small slice, a frozen teacher with
/// two types, and a student extended by two more.
fn gradcheck_scenario(seed: u64) -> Result<(TaggerModel, TaggerModel, Corpus)> {
    let spec = SynthSpec {
        num_types: 4,
        sentences_per_type: 4,
        vocab_per_type: 4,
        sentence_length: 6,
        other_vocab_size: 12,
        noise_rate: 0.0,
    };
    let corpus = synth_corpus(&spec, seed)?;
    let types = corpus.schema.entity_types().to_vec();
    let old = TaggerModel::new(
        crate::tagger::EncoderDims::default(),
        corpus
            .sentences
            .iter()
            .flat_map(|s| s.tokens.iter().map(|t| t.surface.clone())),
        seed,
    )
    .extend_classifier(&types[..2], seed.wrapping_add(1))?;
    let new = old.extend_classifier(&types[2..], seed.wrapping_add(2))?;
    // mask to the "new" types so non-O tokens are D^E
    let keep = types[2..].iter().cloned().collect();
    Ok((old, new, mask_labels(&corpus, &keep)))
}

fn scenario_objective(
    kind: BaselineKind,
    old: &TaggerModel,
    new: &TaggerModel,
    slice: &Corpus,
    batch: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<crate::objective::BatchObjective> {
    match kind {
        BaselineKind::FinetuneOnly => finetune_objective(new, slice, batch),
        BaselineKind::SelfTraining => {
            let relabeled = st_relabel(old, slice);
            finetune_objective(new, &relabeled, batch)
        }
        BaselineKind::ExtendNer => {
            let ann = crate::causal::annotate(old, slice, 1.0);
            extendner_objective(new, slice, batch, &ann, old.num_labels(), 2.0, false)
        }
        BaselineKind::Cfner | BaselineKind::StCf => {
            let lambda = adaptive_weight(2.0, old.num_entity_types(), 2)?;
            let ctx = CfnerStepContext::build(
                old,
                slice,
                3,
                3,
                lambda,
                1.0,
                2.0,
                kind == BaselineKind::StCf,
                false,
            );
            let delta: f64 = rng.gen_range(0.0..1.0);
            cfner_batch_objective(new, slice, batch, &ctx, delta)
        }
    }
}

#[derive(Debug)]
pub struct GradCheckSummary {
    pub per_kind: Vec<(BaselineKind, GradCheckReport)>,
    pub pass: bool,
}

/// Runs `trials` finite-difference audits per loss kind; `corrupt`
/// deliberately desynchronizes value and gradients to prove the detector
/// trips.
pub fn cmd_gradcheck(trials: usize, corrupt: bool) -> Result<GradCheckSummary> {
    let kinds = [
        BaselineKind::FinetuneOnly,
        BaselineKind::SelfTraining,
        BaselineKind::ExtendNer,
        BaselineKind::Cfner,
        BaselineKind::StCf,
    ];
    let mut per_kind = Vec::new();
    let mut pass = true;
    for kind in kinds {
        let mut worst = GradCheckReport {
            max_rel_err: 0.0,
            checked: 0,
            pass: true,
        };
        for trial in 0..trials {
            let seed = 1000 * (trial as u64 + 1) + kind as u64;
            let (old, new, slice) = gradcheck_scenario(seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
            let n = slice.sentences.len();
            let batch: Vec<usize> = (0..4).map(|_| rng.gen_range(0..n)).collect();
            let mut batch = batch;
            batch.sort_unstable();
            batch.dedup();
            let obj = scenario_objective(kind, &old, &new, &slice, &batch, &mut rng)?;
            let report = if corrupt {
                finite_diff_check(
                    &CorruptedObjective { inner: obj },
                    &new,
                    1e-4,
                    1e-4,
                    4,
                    &mut rng,
                )?
            } else {
                finite_diff_check(&obj, &new, 1e-4, 1e-4, 4, &mut rng)?
            };
            worst.checked += report.checked;
            worst.max_rel_err = worst.max_rel_err.max(report.max_rel_err);
            worst.pass &= report.pass;
        }
        pass &= worst.pass;
        per_kind.push((kind, worst));
    }
    Ok(GradCheckSummary { per_kind, pass })
}

pub fn print_gradcheck(summary: &GradCheckSummary, mut w: impl Write) -> Result<()> {
    for (kind, report) in &summary.per_kind {
        writeln!(
            w,
            "{:<14} {:>5} coords  max rel err {:.3e}  {}",
            kind.name(),
            report.checked,
            report.max_rel_err,
            if report.pass { "PASS" } else { "FAIL" }
        )?;
    }
    Ok(())
}

/// Applies CLI override flags onto a loaded config.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seeds: Vec<u64>,
    pub baseline: Option<String>,
    pub fg: Option<usize>,
    pub pg: Option<usize>,
    pub k: Option<usize>,
    pub lambda_base: Option<f64>,
    pub delta1: Option<f64>,
    pub delta_m: Option<f64>,
    pub m: Option<usize>,
}

pub fn apply_overrides(config: &mut ExperimentConfig, ov: &Overrides) -> Result<()> {
    if !ov.seeds.is_empty() {
        config.seeds = ov.seeds.clone();
    }
    if let Some(b) = &ov.baseline {
        config.baseline = BaselineKind::parse(b)?;
    }
    if let Some(v) = ov.fg {
        config.fg = v;
    }
    if let Some(v) = ov.pg {
        config.pg = v;
    }
    if let Some(v) = ov.k {
        config.k = v;
    }
    if let Some(v) = ov.lambda_base {
        config.lambda_base = v;
    }
    if let Some(v) = ov.delta1 {
        config.delta1 = v;
    }
    if let Some(v) = ov.delta_m {
        config.delta_m = v;
    }
    if let Some(v) = ov.m {
        config.m = v;
    }
    config.validate()
}

/// Loads a config file or falls back to defaults when no path is given.
pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            if !p.exists() {
                return Err(CfnerError::InvalidConfig(format!(
                    "config file {} not found",
                    p.display()
                )));
            }
            ExperimentConfig::load(p)
        }
        None => Ok(ExperimentConfig::default()),
    }
}
