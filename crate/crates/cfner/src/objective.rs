//! Per-batch training objectives with exact analytic gradients.
//!
//! Every loss kind in the crate (plain cross-entropy, distillation KL,
//! and their colliding-effect variants) decomposes into per-token terms
//! of a common shape: the token's logits are (optionally restricted to
//! the old-label coordinates and) softmaxed at some temperature, the
//! resulting row is mixed with a constant convex combination of matched
//! tokens' rows, and a scalar penalty is evaluated on the mixture.
//! Matched rows and teacher rows are constants: gradients flow only
//! through the anchor token's own probability row.
//!
//! [`BatchObjective::value`] is a pure function of the model, so central
//! finite differences of `value` are directly comparable with the
//! analytic gradients from [`BatchObjective::value_and_grads`].

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::corpus::Sentence;
use crate::error::{CfnerError, Result};
use crate::tagger::{
    param_slice_mut, softmax_scaled, EncodeCache, GradientBundle, TaggerModel, NUM_PARAM_TENSORS,
};

/// The scalar penalty applied to a token's (possibly mixed) probability row.
#[derive(Debug, Clone)]
pub enum TermKind {
    /// -log(row[gold])
    CrossEntropy { gold: usize },
    /// KL between the row and a fixed teacher distribution. With
    /// `teacher_first = false` (the default reading) this is
    /// KL(row || teacher); the switch records the classical
    /// teacher-first alternative KL(teacher || row).
    SoftDistill { teacher: Array1<f64>, teacher_first: bool },
    /// -log(row[hard]): distillation against a one-hot teacher.
    HardDistill { hard: usize },
}

/// One additive loss term, anchored at `(sentence, token)` of the batch.
#[derive(Debug, Clone)]
pub struct TokenTerm {
    pub sentence: usize,
    pub token: usize,
    pub kind: TermKind,
    /// Anchor weight W_i of the convex mixture (1.0 when unmatched).
    pub anchor_weight: f64,
    /// Constant sum over matched tokens of W_ik * row_ik, if any.
    pub matched_mix: Option<Array1<f64>>,
    /// Restrict the softmax to the first `n` label coordinates (the old
    /// label set) before applying the penalty. None = full label set.
    pub restrict: Option<usize>,
    pub temperature: f64,
    /// Multiplier of this term in the batch total (carries 1/count
    /// normalization and the adaptive weight).
    pub coeff: f64,
}

impl TokenTerm {
    pub fn plain_ce(sentence: usize, token: usize, gold: usize, coeff: f64) -> TokenTerm {
        TokenTerm {
            sentence,
            token,
            kind: TermKind::CrossEntropy { gold },
            anchor_weight: 1.0,
            matched_mix: None,
            restrict: None,
            temperature: 1.0,
            coeff,
        }
    }
}

/// A batch of sentences plus the loss terms evaluated on them.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    pub sentences: Vec<Sentence>,
    pub terms: Vec<TokenTerm>,
}

impl BatchObjective {
    /// Scalar loss at the given model.
    pub fn value(&self, model: &TaggerModel) -> Result<f64> {
        self.eval(model, None)
    }

    /// Scalar loss plus exact gradients with respect to every parameter
    /// tensor; matched rows and teacher rows contribute zero gradient.
    pub fn value_and_grads(&self, model: &TaggerModel) -> Result<(f64, GradientBundle)> {
        let mut grads = GradientBundle::zeros_like(model);
        let v = self.eval(model, Some(&mut grads))?;
        Ok((v, grads))
    }

    fn eval(&self, model: &TaggerModel, mut grads: Option<&mut GradientBundle>) -> Result<f64> {
        let num_labels = model.num_labels();
        let mut total = 0.0;
        for (si, sentence) in self.sentences.iter().enumerate() {
            let sentence_terms: Vec<&TokenTerm> =
                self.terms.iter().filter(|t| t.sentence == si).collect();
            if sentence_terms.is_empty() {
                continue;
            }
            let cache = model.encode_cached(sentence);
            let logits = model.logits(&cache.features);
            let mut dlogits = grads
                .as_ref()
                .map(|_| Array2::<f64>::zeros((sentence.len(), num_labels)));

            for term in sentence_terms {
                let n = term.restrict.unwrap_or(num_labels);
                let row = logits.row(term.token);
                let z: Vec<f64> = row.iter().take(n).cloned().collect();
                let p = softmax_scaled(&z, term.temperature);
                let mix_dim = term.matched_mix.as_ref().map(|m| m.len());
                if let Some(md) = mix_dim {
                    if md != n {
                        return Err(CfnerError::Invariant(format!(
                            "matched mix has {md} coords, expected {n}"
                        )));
                    }
                }
                let ybar: Vec<f64> = (0..n)
                    .map(|j| {
                        term.anchor_weight * p[j]
                            + term.matched_mix.as_ref().map(|m| m[j]).unwrap_or(0.0)
                    })
                    .collect();

                // value and d(value)/d(p_j)
                let mut gp = vec![0.0; n];
                let value = match &term.kind {
                    TermKind::CrossEntropy { gold } | TermKind::HardDistill { hard: gold } => {
                        let y = ybar[*gold];
                        if y <= 0.0 {
                            return Err(CfnerError::Numeric {
                                context: "log of nonpositive probability".into(),
                                value: y,
                            });
                        }
                        gp[*gold] = -term.anchor_weight / y;
                        -y.ln()
                    }
                    TermKind::SoftDistill {
                        teacher,
                        teacher_first,
                    } => {
                        if teacher.len() != n {
                            return Err(CfnerError::Invariant(format!(
                                "teacher row has {} coords, expected {n}",
                                teacher.len()
                            )));
                        }
                        let mut v = 0.0;
                        if *teacher_first {
                            // KL(teacher || ybar)
                            for j in 0..n {
                                let q = teacher[j];
                                if q > 0.0 {
                                    v += q * (q.ln() - ybar[j].ln());
                                    gp[j] = -term.anchor_weight * q / ybar[j];
                                }
                            }
                        } else {
                            // KL(ybar || teacher), as written in the loss
                            for j in 0..n {
                                let lr = ybar[j].ln() - teacher[j].ln();
                                v += ybar[j] * lr;
                                gp[j] = term.anchor_weight * (lr + 1.0);
                            }
                        }
                        v
                    }
                };
                if !value.is_finite() {
                    return Err(CfnerError::Numeric {
                        context: "loss term".into(),
                        value,
                    });
                }
                total += term.coeff * value;

                if let Some(dl) = dlogits.as_mut() {
                    // softmax backward: dz = (p .* g - p * (p . g)) / T
                    let dot: f64 = (0..n).map(|j| p[j] * gp[j]).sum();
                    for j in 0..n {
                        dl[[term.token, j]] +=
                            term.coeff * p[j] * (gp[j] - dot) / term.temperature;
                    }
                }
            }

            if let (Some(dl), Some(g)) = (dlogits, grads.as_deref_mut()) {
                backprop_sentence(model, &cache, &dl, g);
            }
        }
        Ok(total)
    }
}

/// Accumulates parameter gradients for one sentence given d(loss)/d(logits).
pub fn backprop_sentence(
    model: &TaggerModel,
    cache: &EncodeCache,
    dlogits: &Array2<f64>,
    grads: &mut GradientBundle,
) {
    let scale = model.classifier.scale;
    let (pn, pnorms) = model.normalized_prototypes();

    // logits = scale * F . Pn^T
    let dfeat = dlogits.dot(&pn) * scale; // L x d
    let dpn = dlogits.t().dot(&cache.features) * scale; // C x d

    // prototype normalization backward: p_hat = p/|p|
    for c in 0..pn.nrows() {
        let u = pn.row(c);
        let g = dpn.row(c);
        let ug = u.dot(&g);
        for j in 0..u.len() {
            grads.prototypes[[c, j]] += (g[j] - u[j] * ug) / pnorms[c];
        }
    }

    // feature normalization backward
    let l = cache.features.nrows();
    let mut draw = Array2::<f64>::zeros(cache.raw.raw_dim());
    for t in 0..l {
        let u = cache.features.row(t);
        let g = dfeat.row(t);
        let ug = u.dot(&g);
        for j in 0..u.len() {
            draw[[t, j]] = (g[j] - u[j] * ug) / cache.raw_norms[t];
        }
    }

    // raw = hidden . W_feature^T + b_feature
    grads.w_feature += &draw.t().dot(&cache.hidden);
    for t in 0..l {
        grads.b_feature += &draw.row(t);
    }
    let mut dhidden = draw.dot(&model.encoder.w_feature);
    // tanh backward
    dhidden *= &cache.hidden.mapv(|h| 1.0 - h * h);

    // hidden = tanh(windows . W_hidden^T + b_hidden)
    grads.w_hidden += &dhidden.t().dot(&cache.windows);
    for t in 0..l {
        grads.b_hidden += &dhidden.row(t);
    }
    let dwindows = dhidden.dot(&model.encoder.w_hidden);

    // scatter window gradients back onto embedding rows
    let d_e = model.dims.d_embed;
    let r = model.dims.radius as isize;
    for t in 0..l {
        for (slot, off) in (-r..=r).enumerate() {
            let pos = t as isize + off;
            if pos < 0 || pos >= l as isize {
                continue;
            }
            let id = cache.ids[pos as usize];
            for j in 0..d_e {
                grads.embedding[[id, j]] += dwindows[[t, slot * d_e + j]];
            }
        }
    }
}

/// A loss with a scalar value and analytic gradients, the unit audited
/// by [`finite_diff_check`].
pub trait Objective {
    fn value(&self, model: &TaggerModel) -> Result<f64>;
    fn value_and_grads(&self, model: &TaggerModel) -> Result<(f64, GradientBundle)>;
}

impl Objective for BatchObjective {
    fn value(&self, model: &TaggerModel) -> Result<f64> {
        BatchObjective::value(self, model)
    }

    fn value_and_grads(&self, model: &TaggerModel) -> Result<(f64, GradientBundle)> {
        BatchObjective::value_and_grads(self, model)
    }
}

/// Outcome of a finite-difference gradient audit.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub pass: bool,
}

/// Compares analytic gradients against central finite differences of
/// `obj.value` on `coords_per_tensor` random coordinates of every
/// parameter tensor. Each coordinate uses Richardson-extrapolated
/// central differences at steps `eps` and `eps / 2`, cancelling the
/// O(eps^2) truncation term — the cosine classifier's scale factor
/// makes third derivatives large enough that plain central differences
/// at eps = 1e-4 carry ~1e-4 relative truncation error of their own. A
/// coordinate passes when the relative error is below `tol` or the
/// absolute difference is below 1e-7.
pub fn finite_diff_check<O: Objective, R: Rng>(
    obj: &O,
    model: &TaggerModel,
    eps: f64,
    tol: f64,
    coords_per_tensor: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let (_, grads) = obj.value_and_grads(model)?;
    let analytic = grads.flat_slices().iter().map(|s| s.to_vec()).collect::<Vec<_>>();

    let mut work = model.clone();
    let mut max_rel_err = 0.0f64;
    let mut checked = 0;
    let mut pass = true;
    for t in 0..NUM_PARAM_TENSORS {
        let len = param_slice_mut(&mut work, t).len();
        if len == 0 {
            continue;
        }
        for _ in 0..coords_per_tensor {
            let i = rng.gen_range(0..len);
            let base = param_slice_mut(&mut work, t)[i];
            let mut central = |h: f64| -> Result<f64> {
                param_slice_mut(&mut work, t)[i] = base + h;
                let up = obj.value(&work)?;
                param_slice_mut(&mut work, t)[i] = base - h;
                let down = obj.value(&work)?;
                param_slice_mut(&mut work, t)[i] = base;
                Ok((up - down) / (2.0 * h))
            };
            let d_full = central(eps)?;
            let d_half = central(eps / 2.0)?;
            let fd = (4.0 * d_half - d_full) / 3.0;
            let an = analytic[t][i];
            let abs = (an - fd).abs();
            let rel = abs / an.abs().max(fd.abs()).max(1e-12);
            if !(abs < 1e-7 || rel < tol) {
                pass = false;
            }
            max_rel_err = max_rel_err.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        checked,
        pass,
    })
}
