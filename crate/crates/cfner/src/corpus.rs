//! BIO-tagged corpora: CoNLL I/O, schedules, greedy partitioning, masking
//! and synthetic corpus generation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CfnerError, Result};

/// A BIO tag: `O`, `B-<type>` or `I-<type>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tag {
    Outside,
    Begin(String),
    Inside(String),
}

impl Tag {
    pub fn parse(s: &str) -> Option<Tag> {
        if s == "O" {
            return Some(Tag::Outside);
        }
        let (prefix, rest) = s.split_at(s.char_indices().nth(2).map(|(i, _)| i)?.min(s.len()));
        match prefix {
            "B-" if !rest.is_empty() => Some(Tag::Begin(rest.to_string())),
            "I-" if !rest.is_empty() => Some(Tag::Inside(rest.to_string())),
            _ => None,
        }
    }

    pub fn entity_type(&self) -> Option<&str> {
        match self {
            Tag::Outside => None,
            Tag::Begin(t) | Tag::Inside(t) => Some(t),
        }
    }

    pub fn is_outside(&self) -> bool {
        matches!(self, Tag::Outside)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => write!(f, "O"),
            Tag::Begin(t) => write!(f, "B-{t}"),
            Tag::Inside(t) => write!(f, "I-{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub tag: Tag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tags(&self) -> Vec<Tag> {
        self.tokens.iter().map(|t| t.tag.clone()).collect()
    }

    /// Entity types occurring in this sentence.
    pub fn entity_types(&self) -> BTreeSet<String> {
        self.tokens
            .iter()
            .filter_map(|t| t.tag.entity_type().map(str::to_string))
            .collect()
    }
}

/// The ordered (alphabetical) entity-type inventory of an experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySchema {
    entity_types: Vec<String>,
}

impl EntitySchema {
    /// Builds a schema from an arbitrary collection of type names;
    /// duplicates are dropped and the order is fixed to alphabetical.
    pub fn new<I: IntoIterator<Item = String>>(types: I) -> EntitySchema {
        let set: BTreeSet<String> = types.into_iter().collect();
        EntitySchema {
            entity_types: set.into_iter().collect(),
        }
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn len(&self) -> usize {
        self.entity_types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entity_types.is_empty()
    }

    pub fn contains(&self, t: &str) -> bool {
        self.entity_types.iter().any(|x| x == t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub schema: EntitySchema,
}

impl Corpus {
    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }
}

/// A class-incremental schedule: step 0 holds the first-group types, each
/// later step a per-group chunk, in alphabetical order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClSchedule {
    pub steps: Vec<Vec<String>>,
}

impl ClSchedule {
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    /// All entity types, in schedule order.
    pub fn all_types(&self) -> Vec<String> {
        self.steps.iter().flatten().cloned().collect()
    }

    /// Types recognized after step `i` (steps 0..=i).
    pub fn recognized_after(&self, i: usize) -> Vec<String> {
        self.steps[..=i].iter().flatten().cloned().collect()
    }
}

/// Result of reading a CoNLL stream: the corpus plus the number of BIO
/// repairs applied (`I-X` without a preceding `B-X`/`I-X` rewritten to
/// `B-X`).
#[derive(Debug)]
pub struct ConllRead {
    pub corpus: Corpus,
    pub repairs: usize,
}

/// Reads whitespace-separated CoNLL text: first field is the surface,
/// last field the tag, middle fields ignored; blank lines separate
/// sentences. The schema is inferred from the tags.
pub fn read_conll<R: BufRead>(reader: R) -> Result<ConllRead> {
    let mut sentences = Vec::new();
    let mut current: Vec<Token> = Vec::new();
    let mut repairs = 0usize;

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            if !current.is_empty() {
                sentences.push(Sentence {
                    tokens: std::mem::take(&mut current),
                });
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 2 {
            return Err(CfnerError::Parse {
                line: lineno,
                message: format!("expected at least 2 fields, got {}", fields.len()),
            });
        }
        let surface = fields[0].to_string();
        let tag_str = fields[fields.len() - 1];
        let tag = Tag::parse(tag_str).ok_or_else(|| CfnerError::Parse {
            line: lineno,
            message: format!("unknown tag syntax {tag_str:?}"),
        })?;
        current.push(Token { surface, tag });
    }
    if !current.is_empty() {
        sentences.push(Sentence { tokens: current });
    }

    for s in &mut sentences {
        repairs += repair_bio(&mut s.tokens);
    }

    let schema = EntitySchema::new(
        sentences
            .iter()
            .flat_map(|s| s.entity_types().into_iter()),
    );
    Ok(ConllRead {
        corpus: Corpus { sentences, schema },
        repairs,
    })
}

/// Rewrites each `I-X` that does not follow `B-X`/`I-X` to `B-X`;
/// returns the number of rewrites.
pub fn repair_bio(tokens: &mut [Token]) -> usize {
    let mut repairs = 0;
    for i in 0..tokens.len() {
        if let Tag::Inside(t) = tokens[i].tag.clone() {
            let ok = i > 0
                && match &tokens[i - 1].tag {
                    Tag::Begin(p) | Tag::Inside(p) => *p == t,
                    Tag::Outside => false,
                };
            if !ok {
                tokens[i].tag = Tag::Begin(t);
                repairs += 1;
            }
        }
    }
    repairs
}

pub fn write_conll<W: Write>(corpus: &Corpus, w: &mut W) -> Result<()> {
    for s in &corpus.sentences {
        for t in &s.tokens {
            writeln!(w, "{} {}", t.surface, t.tag)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Builds the per-step type chunks: step 0 gets the first `fg` types in
/// alphabetical order, the remainder is chunked by `pg` (the last step
/// may be smaller).
pub fn build_cl_schedule(schema: &EntitySchema, fg: usize, pg: usize) -> Result<ClSchedule> {
    if fg == 0 || fg > schema.len() {
        return Err(CfnerError::InvalidConfig(format!(
            "fg must satisfy 1 <= fg <= {}, got {fg}",
            schema.len()
        )));
    }
    if pg == 0 {
        return Err(CfnerError::InvalidConfig("pg must be >= 1".into()));
    }
    let types = schema.entity_types();
    let mut steps = vec![types[..fg].to_vec()];
    for chunk in types[fg..].chunks(pg) {
        steps.push(chunk.to_vec());
    }
    Ok(ClSchedule { steps })
}

/// Per-type entity frequencies: counts of `B-`-initiated spans.
pub fn corpus_stats(corpus: &Corpus) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in corpus.schema.entity_types() {
        counts.insert(t.clone(), 0);
    }
    for s in &corpus.sentences {
        for tok in &s.tokens {
            if let Tag::Begin(t) = &tok.tag {
                *counts.entry(t.clone()).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// Greedy slice partitioning. Sentences are allocated to the slice owning
/// their rarest in-schedule entity type while that slice has capacity;
/// sentences with no capacity match go to a uniformly random incomplete
/// slice. Slice capacities are `floor(n*|E_j|/|E|)` with leftovers added
/// one-by-one in schedule order.
pub fn greedy_partition(
    corpus: &Corpus,
    schedule: &ClSchedule,
    seed: u64,
) -> Result<Vec<Corpus>> {
    let all_types = schedule.all_types();
    for t in &all_types {
        if !corpus.schema.contains(t) {
            return Err(CfnerError::InvalidConfig(format!(
                "schedule type {t:?} not in corpus schema"
            )));
        }
    }
    let g = schedule.num_steps();
    let n = corpus.sentences.len();
    let total_types = all_types.len().max(1);

    // Capacities: floor(n*|E_j|/|E|), then +1 in schedule order until they sum to n.
    let mut caps: Vec<usize> = schedule
        .steps
        .iter()
        .map(|e| n * e.len() / total_types)
        .collect();
    let mut deficit = n - caps.iter().sum::<usize>();
    let mut j = 0;
    while deficit > 0 {
        caps[j] += 1;
        deficit -= 1;
        j = (j + 1) % g;
    }

    // Entity types ascending by frequency; alphabetical tie-break comes
    // from the BTreeMap ordering feeding the stable sort.
    let freqs = corpus_stats(corpus);
    let mut ordered: Vec<(String, usize)> = all_types
        .iter()
        .map(|t| (t.clone(), *freqs.get(t).unwrap_or(&0)))
        .collect();
    ordered.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));

    let owner: HashMap<&str, usize> = schedule
        .steps
        .iter()
        .enumerate()
        .flat_map(|(j, e)| e.iter().map(move |t| (t.as_str(), j)))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slices: Vec<Vec<Sentence>> = vec![Vec::new(); g];
    let mut counts = vec![0usize; g];

    for sentence in &corpus.sentences {
        let present = sentence.entity_types();
        let mut selected = None;
        for (t, _) in &ordered {
            if !present.contains(t) {
                continue;
            }
            let j = owner[t.as_str()];
            if counts[j] < caps[j] {
                selected = Some(j);
                break;
            }
        }
        let j = match selected {
            Some(j) => j,
            None => {
                let open: Vec<usize> = (0..g).filter(|&j| counts[j] < caps[j]).collect();
                *open
                    .choose(&mut rng)
                    .expect("capacities sum to n, an open slice must exist")
            }
        };
        slices[j].push(sentence.clone());
        counts[j] += 1;
    }

    Ok(slices
        .into_iter()
        .map(|sentences| Corpus {
            sentences,
            schema: corpus.schema.clone(),
        })
        .collect())
}

/// Replaces tags whose type is not in `keep` with `O`; surfaces unchanged.
pub fn mask_labels(corpus: &Corpus, keep: &BTreeSet<String>) -> Corpus {
    let sentences = corpus
        .sentences
        .iter()
        .map(|s| Sentence {
            tokens: s
                .tokens
                .iter()
                .map(|tok| {
                    let keep_tag = tok
                        .tag
                        .entity_type()
                        .map(|t| keep.contains(t))
                        .unwrap_or(false);
                    Token {
                        surface: tok.surface.clone(),
                        tag: if keep_tag { tok.tag.clone() } else { Tag::Outside },
                    }
                })
                .collect(),
        })
        .collect();
    Corpus {
        sentences,
        schema: corpus.schema.clone(),
    }
}

/// Parameters for the synthetic benchmark generator. Each entity type owns
/// a disjoint surface vocabulary; mentions of length 1-2 are embedded
/// among Other-vocabulary tokens, and `noise_rate` of entity tokens get
/// their surface swapped with another type's vocabulary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_types: usize,
    pub sentences_per_type: usize,
    pub vocab_per_type: usize,
    pub sentence_length: usize,
    pub other_vocab_size: usize,
    pub noise_rate: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_types: 8,
            sentences_per_type: 250,
            vocab_per_type: 20,
            sentence_length: 10,
            other_vocab_size: 200,
            noise_rate: 0.05,
        }
    }
}

pub fn synth_corpus(spec: &SynthSpec, seed: u64) -> Result<Corpus> {
    if spec.num_types == 0
        || spec.sentences_per_type == 0
        || spec.vocab_per_type == 0
        || spec.sentence_length == 0
        || spec.other_vocab_size == 0
    {
        return Err(CfnerError::InvalidConfig(
            "all synth counts must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&spec.noise_rate) {
        return Err(CfnerError::InvalidConfig(format!(
            "noise_rate must be in [0,1), got {}",
            spec.noise_rate
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let type_names: Vec<String> = (0..spec.num_types).map(|i| format!("E{i:02}")).collect();
    let type_vocab: Vec<Vec<String>> = (0..spec.num_types)
        .map(|i| {
            (0..spec.vocab_per_type)
                .map(|k| format!("ent{i:02}_{k}"))
                .collect()
        })
        .collect();
    let other_vocab: Vec<String> = (0..spec.other_vocab_size).map(|k| format!("w{k}")).collect();

    let mut sentences = Vec::new();
    for ti in 0..spec.num_types {
        for _ in 0..spec.sentences_per_type {
            let len = spec.sentence_length;
            let mut tokens: Vec<Token> = (0..len)
                .map(|_| Token {
                    surface: other_vocab[rng.gen_range(0..other_vocab.len())].clone(),
                    tag: Tag::Outside,
                })
                .collect();
            // 1 or 2 mentions of this sentence's primary type plus 0-2
            // mentions of other types, length 1-2 each. Co-occurring
            // types are what make continual learning non-trivial: when a
            // later step masks a sentence to its own new type, the other
            // types' mentions become Other-class tokens that the frozen
            // old model can still recognize.
            let mut mention_types = Vec::new();
            let primary = 1 + rng.gen_range(0..2usize);
            mention_types.extend(std::iter::repeat(ti).take(primary));
            if spec.num_types > 1 {
                let extra = rng.gen_range(0..3usize);
                for _ in 0..extra {
                    let mut other = rng.gen_range(0..spec.num_types - 1);
                    if other >= ti {
                        other += 1;
                    }
                    mention_types.push(other);
                }
            }
            for mti in mention_types {
                let mname = &type_names[mti];
                let mlen = 1 + rng.gen_range(0..2usize).min(len - 1);
                let start = rng.gen_range(0..=len - mlen);
                // Skip placements overlapping an existing mention.
                if tokens[start..start + mlen].iter().any(|t| !t.tag.is_outside()) {
                    continue;
                }
                for (off, tok) in tokens[start..start + mlen].iter_mut().enumerate() {
                    tok.surface = type_vocab[mti][rng.gen_range(0..spec.vocab_per_type)].clone();
                    tok.tag = if off == 0 {
                        Tag::Begin(mname.clone())
                    } else {
                        Tag::Inside(mname.clone())
                    };
                }
            }
            sentences.push(Sentence { tokens });
        }
    }

    // Label noise: swap entity surfaces across types.
    if spec.noise_rate > 0.0 && spec.num_types > 1 {
        for s in &mut sentences {
            for tok in &mut s.tokens {
                if let Some(t) = tok.tag.entity_type() {
                    if rng.gen::<f64>() < spec.noise_rate {
                        let own = type_names.iter().position(|n| n == t).unwrap();
                        let mut other = rng.gen_range(0..spec.num_types - 1);
                        if other >= own {
                            other += 1;
                        }
                        tok.surface =
                            type_vocab[other][rng.gen_range(0..spec.vocab_per_type)].clone();
                    }
                }
            }
        }
    }

    Ok(Corpus {
        sentences,
        schema: EntitySchema::new(type_names),
    })
}

/// Seeded by-sentence split into train/dev/test fractions 80/10/10.
pub fn split_corpus(corpus: &Corpus, seed: u64) -> (Corpus, Corpus, Corpus) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..corpus.sentences.len()).collect();
    order.shuffle(&mut rng);
    let n = order.len();
    let n_train = n * 8 / 10;
    let n_dev = n / 10;
    let pick = |idxs: &[usize]| Corpus {
        sentences: idxs.iter().map(|&i| corpus.sentences[i].clone()).collect(),
        schema: corpus.schema.clone(),
    };
    (
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_dev]),
        pick(&order[n_train + n_dev..]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn read(s: &str) -> ConllRead {
        read_conll(Cursor::new(s)).unwrap()
    }

    #[test]
    fn parse_basic() {
        let r = read("EU B-ORG\nrejects O\n\n");
        assert_eq!(r.corpus.sentences.len(), 1);
        assert_eq!(r.corpus.sentences[0].len(), 2);
        assert_eq!(r.corpus.schema.entity_types(), &["ORG".to_string()]);
        assert_eq!(r.repairs, 0);
    }

    #[test]
    fn parse_empty_stream() {
        let r = read("");
        assert!(r.corpus.sentences.is_empty());
        assert!(r.corpus.schema.is_empty());
    }

    #[test]
    fn parse_repairs_dangling_inside() {
        let r = read("x I-LOC\n\n");
        assert_eq!(r.repairs, 1);
        assert_eq!(r.corpus.sentences[0].tokens[0].tag, Tag::Begin("LOC".into()));
    }

    #[test]
    fn parse_rejects_single_field() {
        let e = read_conll(Cursor::new("justoneword\n")).unwrap_err();
        assert!(matches!(e, CfnerError::Parse { line: 1, .. }));
    }

    #[test]
    fn parse_rejects_bad_tag() {
        let e = read_conll(Cursor::new("x Q-LOC\n")).unwrap_err();
        assert!(matches!(e, CfnerError::Parse { line: 1, .. }));
    }

    #[test]
    fn parse_multi_column_uses_last_field() {
        let r = read("EU NNP I-NP B-ORG\n\n");
        assert_eq!(r.corpus.sentences[0].tokens[0].tag, Tag::Begin("ORG".into()));
        assert_eq!(r.corpus.sentences[0].tokens[0].surface, "EU");
    }

    #[test]
    fn conll_round_trip() {
        let r = read("EU B-ORG\nrejects O\nBerlin B-LOC\nWall I-LOC\n\nx O\n\n");
        let mut buf = Vec::new();
        write_conll(&r.corpus, &mut buf).unwrap();
        let back = read_conll(Cursor::new(buf)).unwrap();
        assert_eq!(back.corpus, r.corpus);
    }

    #[test]
    fn schedule_conll2003_fg1_pg1() {
        let schema = EntitySchema::new(
            ["LOCATION", "MISC", "ORGANISATION", "PERSON"]
                .map(String::from),
        );
        let s = build_cl_schedule(&schema, 1, 1).unwrap();
        assert_eq!(s.num_steps(), 4);
        assert!(s.steps.iter().all(|st| st.len() == 1));
        assert_eq!(s.steps[0], ["LOCATION"]);
    }

    #[test]
    fn schedule_fg8_pg2() {
        let schema = EntitySchema::new((0..16).map(|i| format!("T{i:02}")));
        let s = build_cl_schedule(&schema, 8, 2).unwrap();
        let sizes: Vec<usize> = s.steps.iter().map(Vec::len).collect();
        assert_eq!(sizes, [8, 2, 2, 2, 2]);
    }

    #[test]
    fn schedule_degenerate_single_step() {
        let schema = EntitySchema::new((0..4).map(|i| format!("T{i}")));
        let s = build_cl_schedule(&schema, 4, 1).unwrap();
        assert_eq!(s.num_steps(), 1);
    }

    #[test]
    fn schedule_rejects_oversized_fg() {
        let schema = EntitySchema::new((0..3).map(|i| format!("T{i}")));
        assert!(build_cl_schedule(&schema, 4, 1).is_err());
    }

    #[test]
    fn stats_counts_spans() {
        let r = read("a B-LOC\nb I-LOC\nc O\nd B-LOC\n\n");
        let stats = corpus_stats(&r.corpus);
        assert_eq!(stats["LOC"], 2);
    }

    #[test]
    fn stats_all_o() {
        let r = read("a O\nb O\n\n");
        assert!(corpus_stats(&r.corpus).values().all(|&c| c == 0));
    }

    #[test]
    fn mask_examples() {
        let r = read("a B-PER\nb O\nc B-LOC\n\n");
        let keep: BTreeSet<String> = ["LOC".to_string()].into();
        let m = mask_labels(&r.corpus, &keep);
        let tags: Vec<String> = m.sentences[0].tokens.iter().map(|t| t.tag.to_string()).collect();
        assert_eq!(tags, ["O", "O", "B-LOC"]);

        let all: BTreeSet<String> = r.corpus.schema.entity_types().iter().cloned().collect();
        assert_eq!(mask_labels(&r.corpus, &all).sentences, r.corpus.sentences);

        let none = BTreeSet::new();
        assert!(mask_labels(&r.corpus, &none).sentences[0]
            .tokens
            .iter()
            .all(|t| t.tag.is_outside()));
    }

    #[test]
    fn mask_idempotent_and_monotone() {
        let r = read("a B-PER\nb I-PER\nc B-LOC\nd B-MISC\n\n");
        let s: BTreeSet<String> = ["PER".to_string(), "LOC".to_string()].into();
        let t: BTreeSet<String> = ["LOC".to_string()].into();
        let once = mask_labels(&r.corpus, &s);
        assert_eq!(mask_labels(&once, &s), once);
        assert_eq!(mask_labels(&once, &t), mask_labels(&r.corpus, &t));
    }

    fn two_type_corpus() -> (Corpus, ClSchedule) {
        let r = read(
            "a B-AAA\nx O\n\nb B-AAA\n\nc B-BBB\n\nd B-BBB\ny O\n\n",
        );
        let schedule = ClSchedule {
            steps: vec![vec!["AAA".into()], vec!["BBB".into()]],
        };
        (r.corpus, schedule)
    }

    #[test]
    fn partition_separable_types() {
        let (corpus, schedule) = two_type_corpus();
        let slices = greedy_partition(&corpus, &schedule, 7).unwrap();
        assert_eq!(slices.len(), 2);
        for (j, tname) in ["AAA", "BBB"].iter().enumerate() {
            assert_eq!(slices[j].sentences.len(), 2);
            assert!(slices[j]
                .sentences
                .iter()
                .all(|s| s.entity_types().contains(*tname)));
        }
    }

    #[test]
    fn partition_all_o_balanced() {
        let text = (0..11).map(|i| format!("w{i} O\n\n")).collect::<String>();
        let r = read(&format!("a B-AAA\n\nb B-BBB\n\n{text}"));
        let schedule = ClSchedule {
            steps: vec![vec!["AAA".into()], vec!["BBB".into()]],
        };
        let slices = greedy_partition(&r.corpus, &schedule, 3).unwrap();
        let total: usize = slices.iter().map(|s| s.sentences.len()).sum();
        assert_eq!(total, 13);
        // caps: floor(13/2)=6 each, leftover -> slice 0 gets 7.
        assert_eq!(slices[0].sentences.len(), 7);
        assert_eq!(slices[1].sentences.len(), 6);
    }

    #[test]
    fn partition_identity_single_slice() {
        let (corpus, _) = two_type_corpus();
        let schedule = ClSchedule {
            steps: vec![vec!["AAA".into(), "BBB".into()]],
        };
        let slices = greedy_partition(&corpus, &schedule, 0).unwrap();
        assert_eq!(slices.len(), 1);
        assert_eq!(slices[0].sentences, corpus.sentences);
    }

    #[test]
    fn partition_rare_type_priority() {
        // Rare type RRR always co-occurs with frequent FFF; its sentences
        // must land in RRR's slice until that slice is full.
        let mut text = String::new();
        for i in 0..2 {
            text.push_str(&format!("r{i} B-RRR\nf{i} B-FFF\n\n"));
        }
        for i in 0..6 {
            text.push_str(&format!("g{i} B-FFF\n\n"));
        }
        let r = read(&text);
        let schedule = ClSchedule {
            steps: vec![vec!["FFF".into()], vec!["RRR".into()]],
        };
        let slices = greedy_partition(&r.corpus, &schedule, 42).unwrap();
        let rrr_in_slice1 = slices[1]
            .sentences
            .iter()
            .filter(|s| s.entity_types().contains("RRR"))
            .count();
        assert_eq!(rrr_in_slice1, 2);
    }

    #[test]
    fn partition_deterministic() {
        let (corpus, schedule) = two_type_corpus();
        let a = greedy_partition(&corpus, &schedule, 9).unwrap();
        let b = greedy_partition(&corpus, &schedule, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synth_disjoint_vocab_and_determinism() {
        let spec = SynthSpec {
            num_types: 2,
            sentences_per_type: 20,
            vocab_per_type: 5,
            sentence_length: 8,
            other_vocab_size: 30,
            noise_rate: 0.0,
        };
        let a = synth_corpus(&spec, 5).unwrap();
        let b = synth_corpus(&spec, 5).unwrap();
        assert_eq!(a, b);
        // noise 0: every entity surface maps to exactly one type
        let mut map: HashMap<String, String> = HashMap::new();
        for s in &a.sentences {
            for t in &s.tokens {
                if let Some(ty) = t.tag.entity_type() {
                    let prev = map.insert(t.surface.clone(), ty.to_string());
                    if let Some(p) = prev {
                        assert_eq!(p, ty);
                    }
                }
            }
        }
    }

    #[test]
    fn synth_sentence_count() {
        let spec = SynthSpec {
            num_types: 8,
            sentences_per_type: 250,
            ..SynthSpec::default()
        };
        let c = synth_corpus(&spec, 1).unwrap();
        assert!(c.sentences.len() >= 2000);
    }

    #[test]
    fn split_fractions() {
        let spec = SynthSpec {
            num_types: 2,
            sentences_per_type: 50,
            ..SynthSpec::default()
        };
        let c = synth_corpus(&spec, 1).unwrap();
        let (tr, dev, te) = split_corpus(&c, 2);
        assert_eq!(tr.sentences.len(), 80);
        assert_eq!(dev.sentences.len(), 10);
        assert_eq!(te.sentences.len(), 10);
    }
}
