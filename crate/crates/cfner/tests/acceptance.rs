//! Acceptance gate: one test per criterion, each printing a single
//! `[PASS]`/`[FAIL]` line (visible with `--nocapture` and on failure).
//!
//! The benchmark criteria (7, 8) share experiment runs through a
//! process-wide cache so the whole suite fits the runtime budget.

use std::collections::BTreeSet;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cfner::baselines::{extendner_objective, BaselineKind};
use cfner::causal::{
    adaptive_weight, annotate, cfner_batch_objective, curriculum_threshold, knn_match,
    CfnerStepContext, CurriculumSchedule, FeatureIndex, MatchSet, TokenRef,
};
use cfner::cli::cmd_gradcheck;
use cfner::config::ExperimentConfig;
use cfner::corpus::{
    greedy_partition, build_cl_schedule, mask_labels, synth_corpus, Corpus, EntitySchema,
    Sentence, SynthSpec, Tag, Token,
};
use cfner::metrics::{extract_spans, macro_f1, micro_f1};
use cfner::protocol::{run_experiment, ExperimentReport};
use cfner::report::{to_records, write_jsonl};
use cfner::tagger::{EncoderDims, TaggerModel};

fn verdict(criterion: usize, label: &str, ok: bool) {
    let tag = if ok { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {criterion}: {label}");
    assert!(ok, "criterion {criterion} failed: {label}");
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_1_gradient_oracle() {
    let start = Instant::now();
    let summary = cmd_gradcheck(20, false).expect("gradcheck runs");
    let elapsed = start.elapsed().as_secs_f64();
    let all_pass = summary.pass;
    let worst = summary
        .per_kind
        .iter()
        .map(|(_, r)| r.max_rel_err)
        .fold(0.0f64, f64::max);
    let ok = all_pass && worst < 1e-4 && elapsed < 30.0;
    println!(
        "    5 loss kinds x 20 trials, worst rel err {worst:.3e}, {elapsed:.1}s"
    );
    verdict(1, "finite-difference gradient oracle, all loss kinds", ok);
}

// ---------------------------------------------------------------- 2

/// A small continual-learning scene: frozen teacher knowing 2 types, a
/// student extended by 2 more, and a slice labeled only with the new
/// types.
fn reduction_scenario(seed: u64) -> (TaggerModel, TaggerModel, Corpus) {
    let spec = SynthSpec {
        num_types: 4,
        sentences_per_type: 5,
        vocab_per_type: 4,
        sentence_length: 6,
        other_vocab_size: 12,
        noise_rate: 0.1,
    };
    let corpus = synth_corpus(&spec, seed).unwrap();
    let types = corpus.schema.entity_types().to_vec();
    let old = TaggerModel::new(
        EncoderDims::default(),
        corpus
            .sentences
            .iter()
            .flat_map(|s| s.tokens.iter().map(|t| t.surface.clone())),
        seed,
    )
    .extend_classifier(&types[..2], seed.wrapping_add(1))
    .unwrap();
    let new = old.extend_classifier(&types[2..], seed.wrapping_add(2)).unwrap();
    let keep: BTreeSet<String> = types[2..].iter().cloned().collect();
    (old, new, mask_labels(&corpus, &keep))
}

#[test]
fn criterion_2_reduction_identity() {
    let mut worst = 0.0f64;
    for trial in 0..50u64 {
        let (old, new, slice) = reduction_scenario(trial + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(trial ^ 0x5EED);
        let n = slice.sentences.len();
        let mut batch: Vec<usize> = (0..6).map(|_| rng.gen_range(0..n)).collect();
        batch.sort_unstable();
        batch.dedup();

        // K = 0 on both anchors, lambda = 1, matched temperatures equal
        // to the ExtendNER setting.
        let ctx = CfnerStepContext::build(&old, &slice, 0, 0, 1.0, 1.0, 2.0, false, false);
        let delta: f64 = rng.gen_range(0.0..1.0);
        let cf = cfner_batch_objective(&new, &slice, &batch, &ctx, delta).unwrap();

        let ann = annotate(&old, &slice, 1.0);
        let ext =
            extendner_objective(&new, &slice, &batch, &ann, old.num_labels(), 2.0, false)
                .unwrap();

        let a = cf.value(&new).unwrap();
        let b = ext.value(&new).unwrap();
        worst = worst.max((a - b).abs());
    }
    println!("    50 batches, worst |cfner(K=0, lambda=1) - extendner| = {worst:.3e}");
    verdict(2, "K=0, lambda=1 collapses to the distillation baseline", worst <= 1e-10);
}

// ---------------------------------------------------------------- 3

fn brute_force_knn(
    index: &FeatureIndex,
    group: &str,
    anchor: TokenRef,
    anchor_feature: &Array1<f64>,
    k: usize,
) -> Vec<TokenRef> {
    let mut all: Vec<(f64, TokenRef)> = index
        .groups
        .get(group)
        .map(|entries| {
            entries
                .iter()
                .filter(|(r, _)| *r != anchor)
                .map(|(r, f)| (1.0 - anchor_feature.dot(f), *r))
                .collect()
        })
        .unwrap_or_default();
    // exhaustive sort over every candidate, distance then token order
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, r)| r).collect()
}

#[test]
fn criterion_3_knn_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let d = 16usize;
    // One group of up to 500 unit vectors; quantized coordinates force
    // plenty of exact distance ties so the tie-break is exercised.
    let n = 500usize;
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = Array1::from_shape_fn(d, |_| rng.gen_range(-2i32..=2) as f64);
        let norm = v.dot(&v).sqrt();
        if norm < 1e-9 {
            v[0] = 1.0;
        }
        let norm = v.dot(&v).sqrt();
        v.mapv_inplace(|x| x / norm);
        entries.push((TokenRef { sentence: i / 7, token: i % 7 }, v));
    }
    let mut index = FeatureIndex::default();
    index.groups.insert("B-X".to_string(), entries.clone());

    let mut checked = 0;
    let mut ok = true;
    for _ in 0..100 {
        let a = rng.gen_range(0..n);
        let (anchor, feat) = entries[a].clone();
        let k = *[1usize, 2, 3, 5, 10].iter().nth(rng.gen_range(0..5)).unwrap();
        let fast: MatchSet = knn_match(&index, "B-X", anchor, &feat, k);
        let slow = brute_force_knn(&index, "B-X", anchor, &feat, k);
        if fast.matched != slow {
            ok = false;
        }
        checked += 1;
    }
    let elapsed = start.elapsed().as_secs_f64();
    println!("    {checked} anchors vs exhaustive sort, {elapsed:.2}s");
    verdict(3, "nearest-neighbor matching equals the brute-force oracle", ok && elapsed < 5.0);
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_4_closed_forms() {
    let sched = CurriculumSchedule::new(1.0, 0.0, 10).unwrap();
    let c1 = (curriculum_threshold(&sched, 1) - 1.0).abs() < 1e-12;
    let c5 = (curriculum_threshold(&sched, 5) - 5.0 / 9.0).abs() < 1e-12;
    let c10 = curriculum_threshold(&sched, 10).abs() < 1e-12
        && curriculum_threshold(&sched, 25).abs() < 1e-12;

    let lam = (adaptive_weight(2.0, 8, 2).unwrap() - 4.0).abs() < 1e-12;

    let mut weights_ok = true;
    for k in [1usize, 2, 3, 5, 10] {
        // a fabricated index with >= k neighbors at arbitrary positions
        let mut index = FeatureIndex::default();
        let d = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let entries: Vec<(TokenRef, Array1<f64>)> = (0..k + 3)
            .map(|i| {
                let mut v = Array1::from_shape_fn(d, |_| rng.gen::<f64>() - 0.5);
                let norm = v.dot(&v).sqrt();
                v.mapv_inplace(|x| x / norm);
                (TokenRef { sentence: i, token: 0 }, v)
            })
            .collect();
        let (anchor, feat) = entries[0].clone();
        index.groups.insert("B-T".into(), entries);
        let m = knn_match(&index, "B-T", anchor, &feat, k);
        weights_ok &= m.matched.len() == k && m.weight_sum() == 1.0;
    }
    println!("    curriculum endpoints, adaptive weight, mixture simplex for K in {{1,2,3,5,10}}");
    verdict(4, "closed-form spot checks", c1 && c5 && c10 && lam && weights_ok);
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_5_partition_properties() {
    let mut ok = true;
    for trial in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let spec = SynthSpec {
            num_types: rng.gen_range(4..=8),
            sentences_per_type: rng.gen_range(8..=30),
            vocab_per_type: 4,
            sentence_length: 8,
            other_vocab_size: 20,
            noise_rate: 0.1,
        };
        let corpus = synth_corpus(&spec, trial + 7).unwrap();
        let schedule = build_cl_schedule(&corpus.schema, 1, 1).unwrap();
        let slices = greedy_partition(&corpus, &schedule, trial).unwrap();

        // totality + disjointness: every sentence exactly once
        let total: usize = slices.iter().map(|s| s.sentences.len()).sum();
        ok &= total == corpus.sentences.len();
        let mut seen: Vec<&Sentence> = slices.iter().flat_map(|s| &s.sentences).collect();
        let mut orig: Vec<&Sentence> = corpus.sentences.iter().collect();
        let key = |s: &&Sentence| {
            s.tokens
                .iter()
                .map(|t| format!("{}/{}", t.surface, t.tag))
                .collect::<Vec<_>>()
                .join(" ")
        };
        seen.sort_by_key(key);
        orig.sort_by_key(key);
        ok &= seen.iter().map(key).eq(orig.iter().map(key));

        // one type per slice: quotas n/G, realized within +-1
        let n = corpus.sentences.len();
        let g = schedule.num_steps();
        for s in &slices {
            let floor = n / g;
            ok &= s.sentences.len() == floor || s.sentences.len() == floor + 1;
        }
    }

    // crafted priority corpus: rare type R shares every one of its
    // sentences with frequent type F; all of them must land in R's slice.
    let mk = |pairs: &[(&str, &str)]| Sentence {
        tokens: pairs
            .iter()
            .map(|(w, t)| Token {
                surface: w.to_string(),
                tag: Tag::parse(t).unwrap(),
            })
            .collect(),
    };
    let mut sentences = Vec::new();
    for _ in 0..3 {
        sentences.push(mk(&[("r", "B-R"), ("x", "O"), ("f", "B-F")]));
    }
    for _ in 0..9 {
        sentences.push(mk(&[("f", "B-F"), ("y", "O")]));
    }
    let corpus = Corpus {
        schema: EntitySchema::new(["R".to_string(), "F".to_string()]),
        sentences,
    };
    let schedule = build_cl_schedule(&corpus.schema, 1, 1).unwrap();
    let slices = greedy_partition(&corpus, &schedule, 0).unwrap();
    let r_idx = schedule.steps.iter().position(|s| s == &["R".to_string()]).unwrap();
    let r_count = slices[r_idx]
        .sentences
        .iter()
        .filter(|s| s.entity_types().contains("R"))
        .count();
    // R's slice quota is 12/2 = 6, so all 3 R sentences fit
    let priority_ok = r_count == 3;

    println!("    50 random corpora + crafted rare-type corpus ({r_count}/3 rare sentences in rare slice)");
    verdict(5, "partition totality, balance, rare-type priority", ok && priority_ok);
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_metric_fixtures() {
    // each fixture: tag rows for (pred, gold) sentences, expected micro,
    // expected macro over `types`, all hand-computed
    struct Fixture {
        pred: Vec<Vec<&'static str>>,
        gold: Vec<Vec<&'static str>>,
        types: Vec<&'static str>,
        micro: f64,
        macro_: f64,
    }
    let fixtures = vec![
        // 1. exact match, single span
        Fixture {
            pred: vec![vec!["B-PER", "I-PER", "O"]],
            gold: vec![vec!["B-PER", "I-PER", "O"]],
            types: vec!["PER"],
            micro: 1.0,
            macro_: 1.0,
        },
        // 2. no predictions at all
        Fixture {
            pred: vec![vec!["O", "O", "O"]],
            gold: vec![vec!["B-LOC", "O", "O"]],
            types: vec!["LOC"],
            micro: 0.0,
            macro_: 0.0,
        },
        // 3. boundary error: pred span too short -> 0 matches
        Fixture {
            pred: vec![vec!["B-PER", "O", "O"]],
            gold: vec![vec!["B-PER", "I-PER", "O"]],
            types: vec!["PER"],
            micro: 0.0,
            macro_: 0.0,
        },
        // 4. type error on same boundaries
        Fixture {
            pred: vec![vec!["B-LOC", "I-LOC"]],
            gold: vec![vec!["B-PER", "I-PER"]],
            types: vec!["PER", "LOC"],
            micro: 0.0,
            macro_: 0.0,
        },
        // 5. one of two gold spans found: P=1, R=1/2, F1=2/3
        Fixture {
            pred: vec![vec!["B-PER", "O", "O", "O"]],
            gold: vec![vec!["B-PER", "O", "B-PER", "O"]],
            types: vec!["PER"],
            micro: 2.0 / 3.0,
            macro_: 2.0 / 3.0,
        },
        // 6. dangling I- opens a span: pred ["O","I-PER"] = span at (1,2)
        Fixture {
            pred: vec![vec!["O", "I-PER"]],
            gold: vec![vec!["O", "B-PER"]],
            types: vec!["PER"],
            micro: 1.0,
            macro_: 1.0,
        },
        // 7. adjacent spans split by B-: two length-1 spans, both right
        Fixture {
            pred: vec![vec!["B-ORG", "B-ORG"]],
            gold: vec![vec!["B-ORG", "B-ORG"]],
            types: vec!["ORG"],
            micro: 1.0,
            macro_: 1.0,
        },
        // 8. micro vs macro divergence:
        //    PER: 1 pred, 1 gold, 1 hit -> F1 1; LOC: 1 pred, 1 gold, 0 hit -> F1 0
        //    micro: P = 1/2, R = 1/2 -> 1/2; macro: (1 + 0)/2 = 1/2
        Fixture {
            pred: vec![vec!["B-PER", "O", "B-LOC", "O"]],
            gold: vec![vec!["B-PER", "O", "O", "B-LOC"]],
            types: vec!["PER", "LOC"],
            micro: 0.5,
            macro_: 0.5,
        },
        // 9. spurious extra prediction: hits 1, pred 2, gold 1
        //    P = 1/2, R = 1 -> F1 = 2/3
        Fixture {
            pred: vec![vec!["B-PER", "O", "B-PER"]],
            gold: vec![vec!["B-PER", "O", "O"]],
            types: vec!["PER"],
            micro: 2.0 / 3.0,
            macro_: 2.0 / 3.0,
        },
        // 10. multi-sentence pooling: s1 perfect PER, s2 missed LOC
        //     micro: hits 1, pred 1, gold 2 -> P=1, R=1/2 -> 2/3
        //     macro: PER 1, LOC 0 -> 1/2
        Fixture {
            pred: vec![vec!["B-PER", "I-PER"], vec!["O", "O"]],
            gold: vec![vec!["B-PER", "I-PER"], vec!["B-LOC", "O"]],
            types: vec!["PER", "LOC"],
            micro: 2.0 / 3.0,
            macro_: 0.5,
        },
    ];

    let mut ok = true;
    for (i, f) in fixtures.iter().enumerate() {
        let to_spans = |rows: &Vec<Vec<&str>>| -> Vec<BTreeSet<_>> {
            rows.iter()
                .map(|row| {
                    let tags: Vec<Tag> = row.iter().map(|t| Tag::parse(t).unwrap()).collect();
                    extract_spans(&tags)
                })
                .collect()
        };
        let pred = to_spans(&f.pred);
        let gold = to_spans(&f.gold);
        let types: Vec<String> = f.types.iter().map(|s| s.to_string()).collect();
        let mi = micro_f1(&pred, &gold);
        let ma = macro_f1(&pred, &gold, &types);
        if mi != f.micro || ma != f.macro_ {
            println!("    fixture {} mismatch: micro {mi} vs {}, macro {ma} vs {}", i + 1, f.micro, f.macro_);
            ok = false;
        }
    }
    println!("    10 hand-computed BIO fixtures, exact comparison");
    verdict(6, "span extraction and micro/macro F1 fixtures", ok);
}

// ------------------------------------------------------------- 7, 8

fn benchmark_config(baseline: BaselineKind) -> ExperimentConfig {
    let mut config: ExperimentConfig = toml::from_str("").unwrap();
    config.baseline = baseline;
    config // paper defaults: fg 1, pg 1, K 3, 5 seeds, default synth corpus
}

struct Bench {
    reports: Mutex<Vec<(String, ExperimentReport)>>,
    elapsed: Mutex<f64>,
}

fn bench() -> &'static Bench {
    static CELL: OnceLock<Bench> = OnceLock::new();
    CELL.get_or_init(|| Bench {
        reports: Mutex::new(Vec::new()),
        elapsed: Mutex::new(0.0),
    })
}

fn bench_report(name: &str, make: impl FnOnce() -> ExperimentConfig) -> ExperimentReport {
    {
        let reports = bench().reports.lock().unwrap();
        if let Some((_, r)) = reports.iter().find(|(n, _)| n == name) {
            return r.clone();
        }
    }
    let start = Instant::now();
    let report = run_experiment(&make()).expect("benchmark run succeeds");
    let dt = start.elapsed().as_secs_f64();
    *bench().elapsed.lock().unwrap() += dt;
    bench()
        .reports
        .lock()
        .unwrap()
        .push((name.to_string(), report.clone()));
    report
}

#[test]
fn criterion_7_desk_scale_benchmark() {
    let cfner = bench_report("cfner", || benchmark_config(BaselineKind::Cfner));
    let finetune = bench_report("finetune", || benchmark_config(BaselineKind::FinetuneOnly));
    let extend = bench_report("extendner", || benchmark_config(BaselineKind::ExtendNer));
    let elapsed = *bench().elapsed.lock().unwrap();

    let pts = |r: &ExperimentReport| 100.0 * r.mean_micro_f1;
    let beats_finetune = pts(&cfner) >= pts(&finetune) + 10.0;
    let near_extend = pts(&cfner) >= pts(&extend) - 1.0;
    let per_seed_wins = cfner
        .seeds
        .iter()
        .zip(extend.seeds.iter())
        .filter(|(a, b)| a.mean_micro() > b.mean_micro())
        .count();
    println!(
        "    micro-F1 pts: cfner {:.2} +- {:.2}, extendner {:.2} +- {:.2}, finetune {:.2} +- {:.2}; cfner > extendner in {per_seed_wins}/5 seeds; {elapsed:.0}s",
        pts(&cfner), 100.0 * cfner.std_micro_f1,
        pts(&extend), 100.0 * extend.std_micro_f1,
        pts(&finetune), 100.0 * finetune.std_micro_f1,
    );
    verdict(
        7,
        "continual-learning benchmark ordering",
        beats_finetune && near_extend && per_seed_wins >= 3 && elapsed < 900.0,
    );
}

#[test]
fn criterion_8_ablation_direction() {
    let cfner = bench_report("cfner", || benchmark_config(BaselineKind::Cfner));
    let wo_o = bench_report("wo_effect_o", || {
        let mut c = benchmark_config(BaselineKind::Cfner);
        c.k_effect_o = Some(0);
        c
    });
    let wo_e = bench_report("wo_effect_e", || {
        let mut c = benchmark_config(BaselineKind::Cfner);
        c.k_effect_e = Some(0);
        c
    });
    let pts = |r: &ExperimentReport| 100.0 * r.mean_micro_f1;
    println!(
        "    micro-F1 pts: full {:.2}, K=0 on defined-other {:.2}, K=0 on new-entity {:.2}",
        pts(&cfner), pts(&wo_o), pts(&wo_e)
    );
    let ok = pts(&cfner) >= pts(&wo_o) - 0.5 && pts(&cfner) >= pts(&wo_e) - 0.5;
    verdict(8, "full objective matches or beats single ablations", ok);
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_9_determinism() {
    let mut config: ExperimentConfig = toml::from_str(
        r#"
        baseline = "cfner"
        seeds = [1, 2]

        [synth]
        num_types = 4
        sentences_per_type = 40
        vocab_per_type = 6
        sentence_length = 8
        other_vocab_size = 40
        noise_rate = 0.05
        "#,
    )
    .unwrap();
    config.epochs = 3;

    let serialize = |c: &ExperimentConfig| -> Vec<u8> {
        let report = run_experiment(c).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&to_records(&report), &mut buf).unwrap();
        buf
    };
    let a = serialize(&config);
    let b = serialize(&config);
    println!("    two identical runs, {} bytes of JSONL each", a.len());
    verdict(9, "byte-identical reports across reruns", a == b);
}
