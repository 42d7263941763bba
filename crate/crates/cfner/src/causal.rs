//! Colliding-effect distillation: Other-class pseudo-annotation with the
//! frozen old model, old-feature KNN matching, the weighted joint
//! prediction, the two effect losses, the curriculum threshold and the
//! self-adaptive balancing weight.
//!
//! Annotations, old features and match sets are computed once per CL step
//! (the old model is frozen); the per-epoch threshold only decides which
//! Defined-Other tokens receive colliding-effect treatment versus plain
//! distillation.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::corpus::Corpus;
use crate::error::{CfnerError, Result};
use crate::objective::{BatchObjective, TermKind, TokenTerm};
use crate::tagger::TaggerModel;

/// Membership of a training token under the Other-class split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membership {
    /// Gold-tagged with a current-step new entity type (D^E).
    NewEntity,
    /// Gold O, but the old model predicts a non-O old label (D^O).
    DefinedOther,
    /// Gold O and the old model also predicts O (D^UO).
    UndefinedOther,
}

#[derive(Debug, Clone)]
pub struct TokenAnnotation {
    pub membership: Membership,
    /// Old-model argmax label id (0 = O); the pseudo label for D^O.
    pub old_argmax: usize,
    /// Old-model max softmax probability at temperature 1.
    pub confidence: f64,
    /// Teacher soft label over the old label set at T_t; None for D^E
    /// tokens and when no old model exists.
    pub teacher: Option<Array1<f64>>,
}

/// Per-token annotations for one training slice, plus the old-model
/// features needed for matching.
#[derive(Debug, Clone)]
pub struct StepAnnotations {
    /// tokens[sentence][token]
    pub tokens: Vec<Vec<TokenAnnotation>>,
    /// Old-model unit-norm features per sentence (frozen for the step).
    pub old_features: Vec<Array2<f64>>,
    pub count_new_entity: usize,
    pub count_defined_other: usize,
    pub count_undefined_other: usize,
}

/// Runs the frozen old model over the slice and splits tokens into
/// D^E / D^O / D^UO. The slice is expected to be masked to the current
/// step's new types, so any non-O gold tag marks a D^E token.
pub fn annotate(old_model: &TaggerModel, slice: &Corpus, t_teacher: f64) -> StepAnnotations {
    let mut tokens = Vec::with_capacity(slice.sentences.len());
    let mut old_features = Vec::with_capacity(slice.sentences.len());
    let (mut n_e, mut n_o, mut n_uo) = (0, 0, 0);
    for sentence in &slice.sentences {
        let feats = old_model.encode(sentence);
        let teacher_rows = old_model.predict(&feats, t_teacher);
        let conf_rows = if (t_teacher - 1.0).abs() < 1e-12 {
            teacher_rows.clone()
        } else {
            old_model.predict(&feats, 1.0)
        };
        let mut anns = Vec::with_capacity(sentence.len());
        for (ti, tok) in sentence.tokens.iter().enumerate() {
            let row = conf_rows.row(ti);
            let mut argmax = 0;
            for j in 1..row.len() {
                if row[j] > row[argmax] {
                    argmax = j;
                }
            }
            let confidence = row[argmax];
            let (membership, teacher) = if !tok.tag.is_outside() {
                n_e += 1;
                (Membership::NewEntity, None)
            } else if argmax != 0 {
                n_o += 1;
                (Membership::DefinedOther, Some(teacher_rows.row(ti).to_owned()))
            } else {
                n_uo += 1;
                (Membership::UndefinedOther, Some(teacher_rows.row(ti).to_owned()))
            };
            anns.push(TokenAnnotation {
                membership,
                old_argmax: argmax,
                confidence,
                teacher,
            });
        }
        tokens.push(anns);
        old_features.push(feats);
    }
    StepAnnotations {
        tokens,
        old_features,
        count_new_entity: n_e,
        count_defined_other: n_o,
        count_undefined_other: n_uo,
    }
}

/// Reference to a token inside a slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenRef {
    pub sentence: usize,
    pub token: usize,
}

/// D^E tokens grouped by gold tag, D^O tokens grouped by pseudo label;
/// entries carry the old-model unit feature.
#[derive(Debug, Clone, Default)]
pub struct FeatureIndex {
    pub groups: HashMap<String, Vec<(TokenRef, Array1<f64>)>>,
}

pub fn build_feature_index(
    slice: &Corpus,
    old_model: &TaggerModel,
    ann: &StepAnnotations,
) -> FeatureIndex {
    let mut groups: HashMap<String, Vec<(TokenRef, Array1<f64>)>> = HashMap::new();
    for (si, sentence) in slice.sentences.iter().enumerate() {
        for (ti, tok) in sentence.tokens.iter().enumerate() {
            let a = &ann.tokens[si][ti];
            let key = match a.membership {
                Membership::NewEntity => tok.tag.to_string(),
                Membership::DefinedOther => old_model.labels[a.old_argmax].clone(),
                Membership::UndefinedOther => continue,
            };
            groups.entry(key).or_default().push((
                TokenRef { sentence: si, token: ti },
                ann.old_features[si].row(ti).to_owned(),
            ));
        }
    }
    FeatureIndex { groups }
}

/// An anchor plus its matched tokens and mixture weights.
#[derive(Debug, Clone)]
pub struct MatchSet {
    pub anchor: TokenRef,
    /// Ascending by cosine distance; ties broken by (sentence, token).
    pub matched: Vec<TokenRef>,
    pub anchor_weight: f64,
    pub matched_weights: Vec<f64>,
}

impl MatchSet {
    pub fn weight_sum(&self) -> f64 {
        self.anchor_weight + self.matched_weights.iter().sum::<f64>()
    }
}

/// K nearest same-group neighbors of the anchor by cosine distance
/// (1 - dot of unit features), anchor excluded. With m < K candidates all
/// m are returned; the weights are W_i = 1/2, W_ik = 1/(2m), and W_i = 1
/// when m = 0. An absent group behaves as m = 0.
pub fn knn_match(
    index: &FeatureIndex,
    group: &str,
    anchor: TokenRef,
    anchor_feature: &Array1<f64>,
    k: usize,
) -> MatchSet {
    let mut candidates: Vec<(f64, TokenRef)> = index
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
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    candidates.truncate(k);
    let m = candidates.len();
    let (anchor_weight, matched_weights) = if m == 0 {
        (1.0, Vec::new())
    } else {
        // anchor takes the exact complement so the simplex sums to 1.0
        // even after the 0.5/m rounding
        let w = vec![0.5 / m as f64; m];
        (1.0 - w.iter().sum::<f64>(), w)
    };
    MatchSet {
        anchor,
        matched: candidates.into_iter().map(|(_, r)| r).collect(),
        anchor_weight,
        matched_weights,
    }
}

/// Ybar = W_i * anchor + sum_k W_ik * matched_k. Matched rows are
/// treated as constants by the training path; this helper just computes
/// the mixture and validates the weight simplex.
pub fn weighted_prediction(
    anchor_probs: &Array1<f64>,
    matched_probs: &[Array1<f64>],
    anchor_weight: f64,
    matched_weights: &[f64],
) -> Result<Array1<f64>> {
    let sum = anchor_weight + matched_weights.iter().sum::<f64>();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CfnerError::Invariant(format!(
            "mixture weights sum to {sum}, expected 1"
        )));
    }
    if matched_probs.len() != matched_weights.len() {
        return Err(CfnerError::Invariant(
            "matched rows and weights length mismatch".into(),
        ));
    }
    let mut out = anchor_probs * anchor_weight;
    for (row, &w) in matched_probs.iter().zip(matched_weights) {
        out = out + row * w;
    }
    Ok(out)
}

/// KL(p || q) over strictly-positive rows.
pub fn kl_div(p: &Array1<f64>, q: &Array1<f64>) -> f64 {
    p.iter()
        .zip(q.iter())
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - qi.ln()))
        .sum()
}

/// Mean over anchors of -log(Ybar[gold]).
pub fn effect_e_loss(items: &[(Array1<f64>, usize)]) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    items.iter().map(|(ybar, gold)| -ybar[*gold].ln()).sum::<f64>() / items.len() as f64
}

/// Mean KL over the matched part plus mean KL over the plain part, each
/// pair ordered (student-side, teacher).
pub fn effect_o_loss(
    matched_part: &[(Array1<f64>, Array1<f64>)],
    plain_part: &[(Array1<f64>, Array1<f64>)],
) -> f64 {
    let mean = |part: &[(Array1<f64>, Array1<f64>)]| {
        if part.is_empty() {
            0.0
        } else {
            part.iter().map(|(a, b)| kl_div(a, b)).sum::<f64>() / part.len() as f64
        }
    };
    mean(matched_part) + mean(plain_part)
}

/// Epochwise confidence threshold: linear from delta_1 to delta_m over
/// the first m epochs, then flat. With m = 1 the threshold is delta_m
/// from the start.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurriculumSchedule {
    pub delta_1: f64,
    pub delta_m: f64,
    pub m: usize,
}

impl CurriculumSchedule {
    pub fn new(delta_1: f64, delta_m: f64, m: usize) -> Result<CurriculumSchedule> {
        if !(0.0..=1.0).contains(&delta_1) || !(0.0..=1.0).contains(&delta_m) {
            return Err(CfnerError::InvalidConfig(
                "curriculum thresholds must lie in [0,1]".into(),
            ));
        }
        if delta_m > delta_1 {
            return Err(CfnerError::InvalidConfig(
                "delta_m must not exceed delta_1".into(),
            ));
        }
        if m == 0 {
            return Err(CfnerError::InvalidConfig("m must be >= 1".into()));
        }
        Ok(CurriculumSchedule { delta_1, delta_m, m })
    }
}

/// Threshold for 1-based epoch `i`.
pub fn curriculum_threshold(schedule: &CurriculumSchedule, epoch: usize) -> f64 {
    assert!(epoch >= 1, "epochs are 1-based");
    if schedule.m == 1 || epoch > schedule.m {
        return schedule.delta_m;
    }
    schedule.delta_1
        + (epoch - 1) as f64 / (schedule.m - 1) as f64 * (schedule.delta_m - schedule.delta_1)
}

/// lambda = lambda_base * sqrt(C_O / C_N).
pub fn adaptive_weight(lambda_base: f64, c_old: usize, c_new: usize) -> Result<f64> {
    if c_new == 0 {
        return Err(CfnerError::InvalidConfig(
            "adaptive weight needs at least one new entity type".into(),
        ));
    }
    Ok(lambda_base * (c_old as f64 / c_new as f64).sqrt())
}

/// Everything fixed for one CL step of colliding-effect training.
pub struct CfnerStepContext {
    pub annotations: StepAnnotations,
    pub index: FeatureIndex,
    /// Match sets for every D^E token (key) under k_new neighbors.
    pub matches_new: HashMap<TokenRef, MatchSet>,
    /// Match sets for every D^O token under k_other neighbors.
    pub matches_other: HashMap<TokenRef, MatchSet>,
    /// Number of labels the old model knows (O included).
    pub n_old_labels: usize,
    pub lambda: f64,
    pub t_teacher: f64,
    pub t_student: f64,
    /// Replace the soft teacher with the one-hot of its argmax (ST+CF).
    pub hard_teacher: bool,
    /// Literal Eq.-style reading of the O-token distillation: student
    /// restricted to the old coordinates and re-softmaxed, KL taken
    /// student-first. The default (false) is the classical form — the
    /// teacher row zero-padded over the full label set and KL taken
    /// teacher-first — which is what actually penalizes the student for
    /// moving O tokens onto new labels; the restricted reading leaves
    /// new-label logits on O tokens unconstrained and lets the new
    /// prototypes swallow the O class.
    pub as_written_kl: bool,
}

/// Per-step diagnostics emitted alongside training.
#[derive(Debug, Clone, Serialize, Default)]
pub struct StepDiagnostics {
    pub count_new_entity: usize,
    pub count_defined_other: usize,
    pub count_undefined_other: usize,
    pub lambda: f64,
    pub delta_trace: Vec<f64>,
    pub matched_part_sizes: Vec<usize>,
}

impl CfnerStepContext {
    /// Annotates the slice with the old model, indexes old features and
    /// precomputes match sets for all prospective anchors.
    pub fn build(
        old_model: &TaggerModel,
        slice: &Corpus,
        k_new: usize,
        k_other: usize,
        lambda: f64,
        t_teacher: f64,
        t_student: f64,
        hard_teacher: bool,
        as_written_kl: bool,
    ) -> CfnerStepContext {
        let annotations = annotate(old_model, slice, t_teacher);
        let index = build_feature_index(slice, old_model, &annotations);
        let mut matches_new = HashMap::new();
        let mut matches_other = HashMap::new();
        for (si, sentence) in slice.sentences.iter().enumerate() {
            for (ti, tok) in sentence.tokens.iter().enumerate() {
                let a = &annotations.tokens[si][ti];
                let anchor = TokenRef { sentence: si, token: ti };
                match a.membership {
                    Membership::NewEntity => {
                        let feat = annotations.old_features[si].row(ti).to_owned();
                        matches_new.insert(
                            anchor,
                            knn_match(&index, &tok.tag.to_string(), anchor, &feat, k_new),
                        );
                    }
                    Membership::DefinedOther => {
                        let feat = annotations.old_features[si].row(ti).to_owned();
                        let group = old_model.labels[a.old_argmax].clone();
                        matches_other.insert(
                            anchor,
                            knn_match(&index, &group, anchor, &feat, k_other),
                        );
                    }
                    Membership::UndefinedOther => {}
                }
            }
        }
        CfnerStepContext {
            annotations,
            index,
            matches_new,
            matches_other,
            n_old_labels: old_model.num_labels(),
            lambda,
            t_teacher,
            t_student,
            hard_teacher,
            as_written_kl,
        }
    }
}

/// Student-side probability row for distillation mixtures. The default
/// convention keeps the full label support; the literal reading
/// restricts to the old coordinates and re-softmaxes.
fn student_row(
    model: &TaggerModel,
    feats: &Array2<f64>,
    token: usize,
    n_old: usize,
    temperature: f64,
    as_written: bool,
) -> Array1<f64> {
    let logits = model.logits(feats);
    let take = if as_written { n_old } else { logits.ncols() };
    let z: Vec<f64> = logits.row(token).iter().take(take).cloned().collect();
    Array1::from(crate::tagger::softmax_scaled(&z, temperature))
}

/// Builds the colliding-effect objective for one batch of slice
/// sentences at threshold `delta`:
/// Effect_E (mean CE over D^E anchors with matched mixtures at T=1) plus
/// lambda times Effect_O (mean KL over the matched part, confidence >=
/// delta with nonempty matches, plus mean KL over the plain part).
/// Matched rows are evaluated with the model passed here and frozen into
/// the objective.
pub fn cfner_batch_objective(
    model: &TaggerModel,
    slice: &Corpus,
    batch: &[usize],
    ctx: &CfnerStepContext,
    delta: f64,
) -> Result<BatchObjective> {
    let n_old = ctx.n_old_labels;
    let n_labels = model.num_labels();

    // Cache current-model encodings of matched tokens' sentences.
    let mut feat_cache: HashMap<usize, Array2<f64>> = HashMap::new();
    let mut features_of = |s: usize| -> Array2<f64> {
        feat_cache
            .entry(s)
            .or_insert_with(|| model.encode(&slice.sentences[s]))
            .clone()
    };

    // First pass: classify batch tokens into the three parts.
    struct Planned {
        sent_pos: usize, // position within the batch objective's sentence list
        token: usize,
        part: Part,
    }
    enum Part {
        NewEntity { gold: usize, mset: Option<MatchSet> },
        MatchedOther { mset: MatchSet },
        PlainOther,
    }
    let mut planned = Vec::new();
    let (mut n_e, mut n_matched, mut n_plain) = (0usize, 0usize, 0usize);
    for (pos, &si) in batch.iter().enumerate() {
        let sentence = &slice.sentences[si];
        for ti in 0..sentence.len() {
            let a = &ctx.annotations.tokens[si][ti];
            let anchor = TokenRef { sentence: si, token: ti };
            let part = match a.membership {
                Membership::NewEntity => {
                    let gold = model
                        .label_id(&sentence.tokens[ti].tag.to_string())
                        .ok_or_else(|| {
                            CfnerError::Invariant(format!(
                                "gold tag {} unknown to the model",
                                sentence.tokens[ti].tag
                            ))
                        })?;
                    n_e += 1;
                    Part::NewEntity {
                        gold,
                        mset: ctx.matches_new.get(&anchor).cloned(),
                    }
                }
                Membership::DefinedOther => {
                    let mset = ctx.matches_other.get(&anchor);
                    let use_match = a.confidence >= delta
                        && mset.map(|m| !m.matched.is_empty()).unwrap_or(false);
                    if use_match {
                        n_matched += 1;
                        Part::MatchedOther {
                            mset: mset.unwrap().clone(),
                        }
                    } else {
                        n_plain += 1;
                        Part::PlainOther
                    }
                }
                Membership::UndefinedOther => {
                    n_plain += 1;
                    Part::PlainOther
                }
            };
            planned.push(Planned {
                sent_pos: pos,
                token: ti,
                part,
            });
        }
    }

    let coeff_e = if n_e > 0 { 1.0 / n_e as f64 } else { 0.0 };
    let coeff_matched = if n_matched > 0 {
        ctx.lambda / n_matched as f64
    } else {
        0.0
    };
    let coeff_plain = if n_plain > 0 {
        ctx.lambda / n_plain as f64
    } else {
        0.0
    };

    let mut terms = Vec::new();
    for p in planned {
        let si = batch[p.sent_pos];
        let ann = &ctx.annotations.tokens[si][p.token];
        match p.part {
            Part::NewEntity { gold, mset } => {
                let (anchor_weight, matched_mix) = match &mset {
                    Some(ms) if !ms.matched.is_empty() => {
                        let mut mix = Array1::<f64>::zeros(n_labels);
                        for (mref, &w) in ms.matched.iter().zip(&ms.matched_weights) {
                            let feats = features_of(mref.sentence);
                            let row = model.predict(&feats, 1.0).row(mref.token).to_owned();
                            mix = mix + row * w;
                        }
                        (ms.anchor_weight, Some(mix))
                    }
                    _ => (1.0, None),
                };
                terms.push(TokenTerm {
                    sentence: p.sent_pos,
                    token: p.token,
                    kind: TermKind::CrossEntropy { gold },
                    anchor_weight,
                    matched_mix,
                    restrict: None,
                    temperature: 1.0,
                    coeff: coeff_e,
                });
            }
            Part::MatchedOther { mset } => {
                let support = if ctx.as_written_kl { n_old } else { n_labels };
                let mut mix = Array1::<f64>::zeros(support);
                for (mref, &w) in mset.matched.iter().zip(&mset.matched_weights) {
                    let feats = features_of(mref.sentence);
                    let row = student_row(
                        model, &feats, mref.token, n_old, ctx.t_student, ctx.as_written_kl,
                    );
                    mix = mix + row * w;
                }
                terms.push(TokenTerm {
                    sentence: p.sent_pos,
                    token: p.token,
                    kind: teacher_term(ann, ctx.hard_teacher, n_labels, ctx.as_written_kl),
                    anchor_weight: mset.anchor_weight,
                    matched_mix: Some(mix),
                    restrict: ctx.as_written_kl.then_some(n_old),
                    temperature: ctx.t_student,
                    coeff: coeff_matched,
                });
            }
            Part::PlainOther => {
                terms.push(TokenTerm {
                    sentence: p.sent_pos,
                    token: p.token,
                    kind: teacher_term(ann, ctx.hard_teacher, n_labels, ctx.as_written_kl),
                    anchor_weight: 1.0,
                    matched_mix: None,
                    restrict: ctx.as_written_kl.then_some(n_old),
                    temperature: ctx.t_student,
                    coeff: coeff_plain,
                });
            }
        }
    }

    Ok(BatchObjective {
        sentences: batch.iter().map(|&si| slice.sentences[si].clone()).collect(),
        terms,
    })
}

fn teacher_term(ann: &TokenAnnotation, hard: bool, n_labels: usize, as_written: bool) -> TermKind {
    if hard {
        // old-label indices are a prefix of the extended label set, so
        // the one-hot target is valid on either support
        TermKind::HardDistill {
            hard: ann.old_argmax,
        }
    } else {
        let teacher = ann.teacher.clone().expect("Other-class token has a teacher row");
        if as_written {
            TermKind::SoftDistill { teacher, teacher_first: false }
        } else {
            TermKind::SoftDistill {
                teacher: pad_teacher(&teacher, n_labels),
                teacher_first: true,
            }
        }
    }
}

/// Extends a teacher row over the old labels to the student's label set
/// with zero mass on the new coordinates. Under teacher-first KL the
/// zero coordinates contribute no terms, but matching the old
/// coordinates of the full student softmax forces the student's
/// new-label mass toward zero.
fn pad_teacher(teacher: &Array1<f64>, n_labels: usize) -> Array1<f64> {
    let mut out = Array1::<f64>::zeros(n_labels);
    out.slice_mut(ndarray::s![..teacher.len()]).assign(teacher);
    out
}

/// Matched-part size of a batch at threshold `delta` (diagnostics).
pub fn matched_part_size(slice: &Corpus, ctx: &CfnerStepContext, delta: f64) -> usize {
    let mut n = 0;
    for (si, sentence) in slice.sentences.iter().enumerate() {
        for ti in 0..sentence.len() {
            let a = &ctx.annotations.tokens[si][ti];
            if a.membership == Membership::DefinedOther
                && a.confidence >= delta
                && ctx
                    .matches_other
                    .get(&TokenRef { sentence: si, token: ti })
                    .map(|m| !m.matched.is_empty())
                    .unwrap_or(false)
            {
                n += 1;
            }
        }
    }
    n
}
