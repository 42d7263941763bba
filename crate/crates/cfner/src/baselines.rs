//! Reference continual-learning losses: Finetune-Only, Self-Training and
//! ExtendNER. The ST+CF variant reuses the colliding-effect machinery
//! with a hard teacher and lives behind [`crate::causal::CfnerStepContext`].

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::causal::StepAnnotations;
use crate::corpus::{Corpus, Tag};
use crate::error::{CfnerError, Result};
use crate::objective::{BatchObjective, TermKind, TokenTerm};
use crate::tagger::TaggerModel;

/// The training method of an experiment run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    FinetuneOnly,
    SelfTraining,
    #[serde(rename = "extendner")]
    ExtendNer,
    Cfner,
    StCf,
}

impl BaselineKind {
    pub fn parse(s: &str) -> Result<BaselineKind> {
        match s {
            "finetune" | "finetune_only" => Ok(BaselineKind::FinetuneOnly),
            "st" | "self_training" => Ok(BaselineKind::SelfTraining),
            "extendner" | "extend_ner" => Ok(BaselineKind::ExtendNer),
            "cfner" => Ok(BaselineKind::Cfner),
            "st_cf" | "stcf" => Ok(BaselineKind::StCf),
            other => Err(CfnerError::InvalidConfig(format!(
                "unknown baseline {other:?}"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::FinetuneOnly => "finetune_only",
            BaselineKind::SelfTraining => "self_training",
            BaselineKind::ExtendNer => "extendner",
            BaselineKind::Cfner => "cfner",
            BaselineKind::StCf => "st_cf",
        }
    }
}

/// Mean cross-entropy over every token of the batch against the (masked)
/// gold tags.
pub fn finetune_objective(
    model: &TaggerModel,
    slice: &Corpus,
    batch: &[usize],
) -> Result<BatchObjective> {
    let mut terms = Vec::new();
    let mut count = 0usize;
    for (pos, &si) in batch.iter().enumerate() {
        let sentence = &slice.sentences[si];
        for (ti, tok) in sentence.tokens.iter().enumerate() {
            let gold = model.label_id(&tok.tag.to_string()).ok_or_else(|| {
                CfnerError::Invariant(format!("tag {} unknown to the model", tok.tag))
            })?;
            terms.push(TokenTerm::plain_ce(pos, ti, gold, 0.0));
            count += 1;
        }
    }
    let coeff = if count > 0 { 1.0 / count as f64 } else { 0.0 };
    for t in &mut terms {
        t.coeff = coeff;
    }
    Ok(BatchObjective {
        sentences: batch.iter().map(|&si| slice.sentences[si].clone()).collect(),
        terms,
    })
}

/// Hard-relabels every `O` token whose old-model argmax is a non-O old
/// label; entity-tagged tokens are left untouched.
pub fn st_relabel(old_model: &TaggerModel, slice: &Corpus) -> Corpus {
    let mut out = slice.clone();
    for sentence in &mut out.sentences {
        let feats = old_model.encode(sentence);
        let probs = old_model.predict(&feats, 1.0);
        for (ti, tok) in sentence.tokens.iter_mut().enumerate() {
            if !tok.tag.is_outside() {
                continue;
            }
            let row = probs.row(ti);
            let mut argmax = 0;
            for j in 1..row.len() {
                if row[j] > row[argmax] {
                    argmax = j;
                }
            }
            if argmax != 0 {
                tok.tag = Tag::parse(&old_model.labels[argmax])
                    .expect("model labels are valid BIO tags");
            }
        }
    }
    out
}

/// ExtendNER: mean cross-entropy over entity-tagged tokens plus mean
/// distillation KL against the frozen teacher over O-tagged tokens.
/// By default the teacher row is zero-padded over the full label set
/// and the KL is taken teacher-first, so matching the teacher also
/// drives the student's new-label mass on O tokens toward zero. With
/// `as_written_kl` the student row is instead sliced to the old label
/// set, re-softmaxed at `t_student`, and compared student-first.
pub fn extendner_objective(
    model: &TaggerModel,
    slice: &Corpus,
    batch: &[usize],
    ann: &StepAnnotations,
    n_old_labels: usize,
    t_student: f64,
    as_written_kl: bool,
) -> Result<BatchObjective> {
    let mut terms = Vec::new();
    let (mut n_ent, mut n_o) = (0usize, 0usize);
    for (pos, &si) in batch.iter().enumerate() {
        let sentence = &slice.sentences[si];
        for (ti, tok) in sentence.tokens.iter().enumerate() {
            if tok.tag.is_outside() {
                let mut teacher: Array1<f64> = ann.tokens[si][ti]
                    .teacher
                    .clone()
                    .expect("O token carries a teacher row");
                if !as_written_kl {
                    let mut padded = Array1::<f64>::zeros(model.num_labels());
                    padded.slice_mut(ndarray::s![..teacher.len()]).assign(&teacher);
                    teacher = padded;
                }
                terms.push(TokenTerm {
                    sentence: pos,
                    token: ti,
                    kind: TermKind::SoftDistill {
                        teacher,
                        teacher_first: !as_written_kl,
                    },
                    anchor_weight: 1.0,
                    matched_mix: None,
                    restrict: as_written_kl.then_some(n_old_labels),
                    temperature: t_student,
                    coeff: 0.0, // patched below
                });
                n_o += 1;
            } else {
                let gold = model.label_id(&tok.tag.to_string()).ok_or_else(|| {
                    CfnerError::Invariant(format!("tag {} unknown to the model", tok.tag))
                })?;
                terms.push(TokenTerm::plain_ce(pos, ti, gold, 0.0));
                n_ent += 1;
            }
        }
    }
    let ce_coeff = if n_ent > 0 { 1.0 / n_ent as f64 } else { 0.0 };
    let kl_coeff = if n_o > 0 { 1.0 / n_o as f64 } else { 0.0 };
    for t in &mut terms {
        t.coeff = match t.kind {
            TermKind::CrossEntropy { .. } => ce_coeff,
            _ => kl_coeff,
        };
    }
    Ok(BatchObjective {
        sentences: batch.iter().map(|&si| slice.sentences[si].clone()).collect(),
        terms,
    })
}
