//! A compact trainable sequence tagger: embedding -> windowed tanh layer
//! -> linear feature map -> L2 normalization, classified by cosine
//! similarity against per-label prototype vectors with a fixed scale.
//!
//! The label set is `O` plus BIO-expanded entity labels, grown
//! monotonically by [`TaggerModel::extend_classifier`]; existing
//! prototypes are never touched by extension.

use std::collections::HashMap;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::error::{CfnerError, Result};

pub const UNK_ID: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub d_embed: usize,
    pub radius: usize,
    pub d_hidden: usize,
    pub d_feature: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        EncoderDims {
            d_embed: 32,
            radius: 2,
            d_hidden: 64,
            d_feature: 32,
        }
    }
}

impl EncoderDims {
    pub fn window_width(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn d_window(&self) -> usize {
        self.d_embed * self.window_width()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderParams {
    /// V x d_embed
    pub embedding: Array2<f64>,
    /// d_hidden x d_window
    pub w_hidden: Array2<f64>,
    pub b_hidden: Array1<f64>,
    /// d_feature x d_hidden
    pub w_feature: Array2<f64>,
    pub b_feature: Array1<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierParams {
    /// num_labels x d_feature
    pub prototypes: Array2<f64>,
    /// fixed positive logit multiplier
    pub scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaggerModel {
    pub dims: EncoderDims,
    pub encoder: EncoderParams,
    pub classifier: ClassifierParams,
    /// index 0 is always "O"; entity labels appended as "B-T", "I-T"
    pub labels: Vec<String>,
    /// index 0 is the shared UNK embedding
    pub vocab: Vec<String>,
    #[serde(skip)]
    label_ids: HashMap<String, usize>,
    #[serde(skip)]
    vocab_ids: HashMap<String, usize>,
}

const PROTO_INIT_NORM: f64 = 0.1;
pub const COSINE_SCALE: f64 = 10.0;

fn sample_prototype(d: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    // zero-mean isotropic, renormalized to norm 0.1
    loop {
        let v = Array1::from_shape_fn(d, |_| rng.gen::<f64>() - 0.5);
        let norm = v.dot(&v).sqrt();
        if norm > 1e-9 {
            return v * (PROTO_INIT_NORM / norm);
        }
    }
}

impl TaggerModel {
    /// Fresh model with label set `{"O"}` and the given initial vocabulary.
    pub fn new<I>(dims: EncoderDims, surfaces: I, seed: u64) -> TaggerModel
    where
        I: IntoIterator<Item = String>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vocab = vec!["<UNK>".to_string()];
        let mut vocab_ids = HashMap::new();
        for s in surfaces {
            if !vocab_ids.contains_key(&s) {
                vocab_ids.insert(s.clone(), vocab.len());
                vocab.push(s);
            }
        }
        let init = |rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng| {
            Array2::from_shape_fn((rows, cols), |_| (rng.gen::<f64>() - 0.5) * 2.0 * scale)
        };
        let embedding = init(vocab.len(), dims.d_embed, 0.1, &mut rng);
        let w_hidden = init(dims.d_hidden, dims.d_window(), (1.0 / dims.d_window() as f64).sqrt(), &mut rng);
        let w_feature = init(dims.d_feature, dims.d_hidden, (1.0 / dims.d_hidden as f64).sqrt(), &mut rng);
        let prototypes_o = sample_prototype(dims.d_feature, &mut rng);
        let mut prototypes = Array2::zeros((1, dims.d_feature));
        prototypes.row_mut(0).assign(&prototypes_o);
        TaggerModel {
            dims,
            encoder: EncoderParams {
                embedding,
                w_hidden,
                b_hidden: Array1::zeros(dims.d_hidden),
                w_feature,
                b_feature: Array1::zeros(dims.d_feature),
            },
            classifier: ClassifierParams {
                prototypes,
                scale: COSINE_SCALE,
            },
            labels: vec!["O".to_string()],
            vocab,
            label_ids: [("O".to_string(), 0)].into(),
            vocab_ids,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.label_ids.get(label).copied()
    }

    pub fn vocab_id(&self, surface: &str) -> usize {
        self.vocab_ids.get(surface).copied().unwrap_or(UNK_ID)
    }

    /// Entity types currently recognized (each contributes B-/I- labels).
    pub fn num_entity_types(&self) -> usize {
        (self.labels.len() - 1) / 2
    }

    /// Appends `B-T`/`I-T` prototypes for each new type. Existing
    /// prototypes are copied bit-identically.
    pub fn extend_classifier(&self, new_types: &[String], seed: u64) -> Result<TaggerModel> {
        for t in new_types {
            if self.label_ids.contains_key(&format!("B-{t}")) {
                return Err(CfnerError::InvalidConfig(format!(
                    "type {t:?} already recognized"
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = self.clone();
        let d = self.dims.d_feature;
        let old_n = model.classifier.prototypes.nrows();
        let added = 2 * new_types.len();
        let mut prototypes = Array2::zeros((old_n + added, d));
        prototypes
            .slice_mut(ndarray::s![..old_n, ..])
            .assign(&model.classifier.prototypes);
        let mut row = old_n;
        for t in new_types {
            for prefix in ["B", "I"] {
                let label = format!("{prefix}-{t}");
                model.label_ids.insert(label.clone(), model.labels.len());
                model.labels.push(label);
                prototypes.row_mut(row).assign(&sample_prototype(d, &mut rng));
                row += 1;
            }
        }
        model.classifier.prototypes = prototypes;
        Ok(model)
    }

    /// Adds embedding rows for surfaces not yet in the vocabulary.
    pub fn extend_vocab<I>(&mut self, surfaces: I, seed: u64)
    where
        I: IntoIterator<Item = String>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fresh: Vec<String> = surfaces
            .into_iter()
            .filter(|s| !self.vocab_ids.contains_key(s))
            .collect();
        if fresh.is_empty() {
            return;
        }
        let mut seen = std::collections::HashSet::new();
        let fresh: Vec<String> = fresh.into_iter().filter(|s| seen.insert(s.clone())).collect();
        let old_v = self.encoder.embedding.nrows();
        let d_e = self.dims.d_embed;
        let mut embedding = Array2::zeros((old_v + fresh.len(), d_e));
        embedding
            .slice_mut(ndarray::s![..old_v, ..])
            .assign(&self.encoder.embedding);
        for (i, s) in fresh.into_iter().enumerate() {
            for j in 0..d_e {
                embedding[[old_v + i, j]] = (rng.gen::<f64>() - 0.5) * 0.2;
            }
            self.vocab_ids.insert(s.clone(), old_v + i);
            self.vocab.push(s);
        }
        self.encoder.embedding = embedding;
    }

    /// Forward pass keeping intermediates for backpropagation.
    pub fn encode_cached(&self, sentence: &Sentence) -> EncodeCache {
        let l = sentence.len();
        let dims = &self.dims;
        let ids: Vec<usize> = sentence.tokens.iter().map(|t| self.vocab_id(&t.surface)).collect();
        let mut windows = Array2::zeros((l, dims.d_window()));
        let r = dims.radius as isize;
        for t in 0..l {
            for (slot, off) in (-r..=r).enumerate() {
                let pos = t as isize + off;
                if pos < 0 || pos >= l as isize {
                    continue; // zero padding at boundaries
                }
                let emb = self.encoder.embedding.row(ids[pos as usize]);
                windows
                    .slice_mut(ndarray::s![t, slot * dims.d_embed..(slot + 1) * dims.d_embed])
                    .assign(&emb);
            }
        }
        let mut hidden = windows.dot(&self.encoder.w_hidden.t());
        hidden += &self.encoder.b_hidden;
        hidden.mapv_inplace(f64::tanh);
        let mut raw = hidden.dot(&self.encoder.w_feature.t());
        raw += &self.encoder.b_feature;
        let raw_norms: Vec<f64> = raw
            .axis_iter(Axis(0))
            .map(|row| row.dot(&row).sqrt().max(1e-12))
            .collect();
        let mut features = raw.clone();
        for (mut row, &n) in features.axis_iter_mut(Axis(0)).zip(raw_norms.iter()) {
            row.mapv_inplace(|x| x / n);
        }
        EncodeCache {
            ids,
            windows,
            hidden,
            raw,
            raw_norms,
            features,
        }
    }

    /// Unit-norm per-token feature rows (L x d_feature).
    pub fn encode(&self, sentence: &Sentence) -> Array2<f64> {
        self.encode_cached(sentence).features
    }

    /// Row-normalized prototypes and their pre-normalization norms.
    pub fn normalized_prototypes(&self) -> (Array2<f64>, Vec<f64>) {
        let p = &self.classifier.prototypes;
        let norms: Vec<f64> = p
            .axis_iter(Axis(0))
            .map(|row| row.dot(&row).sqrt().max(1e-12))
            .collect();
        let mut pn = p.clone();
        for (mut row, &n) in pn.axis_iter_mut(Axis(0)).zip(norms.iter()) {
            row.mapv_inplace(|x| x / n);
        }
        (pn, norms)
    }

    /// Logits: scale * cosine(feature, prototype).  L x num_labels.
    pub fn logits(&self, features: &Array2<f64>) -> Array2<f64> {
        let (pn, _) = self.normalized_prototypes();
        features.dot(&pn.t()) * self.classifier.scale
    }

    /// Probability rows softmax(logits / temperature).
    pub fn predict(&self, features: &Array2<f64>, temperature: f64) -> Array2<f64> {
        assert!(temperature > 0.0, "temperature must be positive");
        let logits = self.logits(features);
        let mut probs = Array2::zeros(logits.raw_dim());
        for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
            let p = softmax_scaled(row.as_slice().unwrap(), temperature);
            for (j, v) in p.into_iter().enumerate() {
                probs[[i, j]] = v;
            }
        }
        probs
    }

    /// Argmax tag sequence for a sentence.
    pub fn predict_tags(&self, sentence: &Sentence) -> Vec<String> {
        let feats = self.encode(sentence);
        let logits = self.logits(&feats);
        logits
            .axis_iter(Axis(0))
            .map(|row| {
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                self.labels[best].clone()
            })
            .collect()
    }

    /// Rebuilds the skipped lookup maps after deserialization.
    pub fn rebuild_indices(&mut self) {
        self.label_ids = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        self.vocab_ids = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<TaggerModel> {
        let json = std::fs::read_to_string(path)?;
        let mut model: TaggerModel = serde_json::from_str(&json)?;
        model.rebuild_indices();
        Ok(model)
    }
}

/// softmax(x / temperature) with max subtraction.
pub fn softmax_scaled(x: &[f64], temperature: f64) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| ((v - m) / temperature).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[derive(Debug, Clone)]
pub struct EncodeCache {
    pub ids: Vec<usize>,
    pub windows: Array2<f64>,
    pub hidden: Array2<f64>,
    pub raw: Array2<f64>,
    pub raw_norms: Vec<f64>,
    pub features: Array2<f64>,
}

/// One gradient tensor per trainable parameter tensor.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub embedding: Array2<f64>,
    pub w_hidden: Array2<f64>,
    pub b_hidden: Array1<f64>,
    pub w_feature: Array2<f64>,
    pub b_feature: Array1<f64>,
    pub prototypes: Array2<f64>,
}

impl GradientBundle {
    pub fn zeros_like(model: &TaggerModel) -> GradientBundle {
        GradientBundle {
            embedding: Array2::zeros(model.encoder.embedding.raw_dim()),
            w_hidden: Array2::zeros(model.encoder.w_hidden.raw_dim()),
            b_hidden: Array1::zeros(model.encoder.b_hidden.raw_dim()),
            w_feature: Array2::zeros(model.encoder.w_feature.raw_dim()),
            b_feature: Array1::zeros(model.encoder.b_feature.raw_dim()),
            prototypes: Array2::zeros(model.classifier.prototypes.raw_dim()),
        }
    }

    pub fn flat_slices(&self) -> Vec<&[f64]> {
        vec![
            self.embedding.as_slice().unwrap(),
            self.w_hidden.as_slice().unwrap(),
            self.b_hidden.as_slice().unwrap(),
            self.w_feature.as_slice().unwrap(),
            self.b_feature.as_slice().unwrap(),
            self.prototypes.as_slice().unwrap(),
        ]
    }

    pub fn max_abs(&self) -> f64 {
        self.flat_slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |a, &b| a.max(b.abs()))
    }
}

pub const NUM_PARAM_TENSORS: usize = 6;

/// Mutable flat view of parameter tensor `t` of the model, for
/// finite-difference perturbation and Adam updates.
pub fn param_slice_mut(model: &mut TaggerModel, t: usize) -> &mut [f64] {
    match t {
        0 => model.encoder.embedding.as_slice_mut().unwrap(),
        1 => model.encoder.w_hidden.as_slice_mut().unwrap(),
        2 => model.encoder.b_hidden.as_slice_mut().unwrap(),
        3 => model.encoder.w_feature.as_slice_mut().unwrap(),
        4 => model.encoder.b_feature.as_slice_mut().unwrap(),
        5 => model.classifier.prototypes.as_slice_mut().unwrap(),
        _ => panic!("no parameter tensor {t}"),
    }
}

fn grad_slices_mut(g: &mut GradientBundle) -> [&mut [f64]; NUM_PARAM_TENSORS] {
    [
        g.embedding.as_slice_mut().unwrap(),
        g.w_hidden.as_slice_mut().unwrap(),
        g.b_hidden.as_slice_mut().unwrap(),
        g.w_feature.as_slice_mut().unwrap(),
        g.b_feature.as_slice_mut().unwrap(),
        g.prototypes.as_slice_mut().unwrap(),
    ]
}

/// Adam optimizer state (first/second moments plus step counter).
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: GradientBundle,
    pub v: GradientBundle,
    pub t: u64,
}

impl AdamState {
    pub fn new(model: &TaggerModel) -> AdamState {
        AdamState {
            m: GradientBundle::zeros_like(model),
            v: GradientBundle::zeros_like(model),
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Standard Adam update with bias correction, in place.
pub fn adam_step(
    model: &mut TaggerModel,
    grads: &GradientBundle,
    state: &mut AdamState,
    hp: &AdamHyper,
) {
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - hp.beta1.powf(t);
    let bc2 = 1.0 - hp.beta2.powf(t);
    let gs = grads.flat_slices();
    let mut ms = grad_slices_mut(&mut state.m);
    let mut vs = grad_slices_mut(&mut state.v);
    for ti in 0..NUM_PARAM_TENSORS {
        let params = param_slice_mut(model, ti);
        let g = gs[ti];
        let m = &mut ms[ti];
        let v = &mut vs[ti];
        for i in 0..params.len() {
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            params[i] -= hp.lr * mhat / (vhat.sqrt() + hp.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Tag, Token};

    fn sentence(words: &[&str]) -> Sentence {
        Sentence {
            tokens: words
                .iter()
                .map(|w| Token {
                    surface: w.to_string(),
                    tag: Tag::Outside,
                })
                .collect(),
        }
    }

    fn toy_model() -> TaggerModel {
        let m = TaggerModel::new(
            EncoderDims::default(),
            ["a", "b", "c", "d"].map(String::from),
            7,
        );
        m.extend_classifier(&["PER".into(), "LOC".into()], 8).unwrap()
    }

    #[test]
    fn encode_rows_unit_norm() {
        let m = toy_model();
        let f = m.encode(&sentence(&["a", "b", "zzz"]));
        assert_eq!(f.shape(), &[3, 32]);
        for row in f.axis_iter(Axis(0)) {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn encode_deterministic() {
        let m = toy_model();
        let s = sentence(&["a", "c", "d", "b"]);
        assert_eq!(m.encode(&s), m.encode(&s));
    }

    #[test]
    fn predict_rows_valid_and_temperature_limit() {
        let m = toy_model();
        let f = m.encode(&sentence(&["a", "b"]));
        for temp in [0.5, 1.0, 2.0, 1e6] {
            let p = m.predict(&f, temp);
            for row in p.axis_iter(Axis(0)) {
                let sum: f64 = row.sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|&v| v > 0.0));
            }
        }
        // huge temperature -> near uniform
        let p = m.predict(&f, 1e9);
        let c = m.num_labels() as f64;
        for row in p.axis_iter(Axis(0)) {
            for &v in row {
                assert!((v - 1.0 / c).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn predict_two_label_closed_form() {
        // softmax over 2 logits with gap g at T=1: p = 1/(1+exp(-g))
        let p = softmax_scaled(&[1.3, 0.4], 1.0);
        let g: f64 = 0.9;
        assert!((p[0] - 1.0 / (1.0 + (-g).exp())).abs() < 1e-12);
    }

    #[test]
    fn temperature_argmax_invariant() {
        let m = toy_model();
        let f = m.encode(&sentence(&["a", "b", "c"]));
        let argmax = |p: &Array2<f64>| -> Vec<usize> {
            p.axis_iter(Axis(0))
                .map(|row| {
                    (0..row.len())
                        .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                        .unwrap()
                })
                .collect()
        };
        let base = argmax(&m.predict(&f, 1.0));
        for t in [0.1, 2.0, 5.0] {
            assert_eq!(argmax(&m.predict(&f, t)), base);
        }
    }

    #[test]
    fn extend_preserves_old_prototypes() {
        let m = toy_model();
        let before = m.classifier.prototypes.clone();
        let m2 = m.extend_classifier(&["ORG".into()], 99).unwrap();
        assert_eq!(m2.num_labels(), m.num_labels() + 2);
        assert_eq!(
            m2.classifier.prototypes.slice(ndarray::s![..m.num_labels(), ..]),
            before
        );
        // empty extension is the identity
        let m3 = m.extend_classifier(&[], 1).unwrap();
        assert_eq!(m3.classifier.prototypes, before);
        assert_eq!(m3.labels, m.labels);
        // duplicates rejected
        assert!(m.extend_classifier(&["PER".into()], 1).is_err());
    }

    #[test]
    fn extend_vocab_preserves_old_rows() {
        let mut m = toy_model();
        let before = m.encoder.embedding.clone();
        m.extend_vocab(["e".to_string(), "a".to_string()], 3);
        assert_eq!(m.vocab.len(), before.nrows() + 1);
        assert_eq!(
            m.encoder.embedding.slice(ndarray::s![..before.nrows(), ..]),
            before
        );
    }

    #[test]
    fn adam_zero_grad_fixed_point() {
        let mut m = toy_model();
        let before = m.clone();
        let grads = GradientBundle::zeros_like(&m);
        let mut state = AdamState::new(&m);
        adam_step(&mut m, &grads, &mut state, &AdamHyper::default());
        assert_eq!(m.encoder.embedding, before.encoder.embedding);
        assert_eq!(m.classifier.prototypes, before.classifier.prototypes);
    }

    #[test]
    fn adam_first_step_magnitude() {
        // from zero state, |update| = lr * g/|g| / (1 + eps') ~ lr per coordinate
        let mut m = toy_model();
        let before = m.classifier.prototypes[[0, 0]];
        let mut grads = GradientBundle::zeros_like(&m);
        grads.prototypes[[0, 0]] = 0.37;
        let mut state = AdamState::new(&m);
        let hp = AdamHyper::default();
        adam_step(&mut m, &grads, &mut state, &hp);
        let delta = before - m.classifier.prototypes[[0, 0]];
        assert!((delta - hp.lr).abs() < 1e-6, "delta={delta}");
    }

    #[test]
    fn adam_deterministic() {
        let make = || {
            let mut m = toy_model();
            let mut grads = GradientBundle::zeros_like(&m);
            grads.w_hidden[[0, 0]] = 1.0;
            let mut state = AdamState::new(&m);
            adam_step(&mut m, &grads, &mut state, &AdamHyper::default());
            m
        };
        assert_eq!(make().encoder.w_hidden, make().encoder.w_hidden);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let m = toy_model();
        m.save(&path).unwrap();
        let loaded = TaggerModel::load(&path).unwrap();
        assert_eq!(loaded.labels, m.labels);
        assert_eq!(loaded.vocab, m.vocab);
        assert_eq!(loaded.classifier.prototypes, m.classifier.prototypes);
        let s = sentence(&["a", "b"]);
        assert_eq!(loaded.encode(&s), m.encode(&s));
    }
}
