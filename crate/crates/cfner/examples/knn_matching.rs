//! Shows how the colliding-effect machinery annotates a slice with a
//! frozen old model and matches anchor tokens to their nearest
//! neighbors in the old feature space.
//!
//!     cargo run --example knn_matching

use std::collections::BTreeSet;

use cfner::causal::{annotate, build_feature_index, knn_match, Membership, TokenRef};
use cfner::corpus::{mask_labels, synth_corpus, SynthSpec};
use cfner::tagger::{EncoderDims, TaggerModel};

fn main() -> anyhow::Result<()> {
    let spec = SynthSpec {
        num_types: 4,
        sentences_per_type: 10,
        ..SynthSpec::default()
    };
    let corpus = synth_corpus(&spec, 3)?;
    let types = corpus.schema.entity_types().to_vec();

    // the frozen teacher knows the first two types; the slice is labeled
    // only with the remaining ones
    let old = TaggerModel::new(
        EncoderDims::default(),
        corpus
            .sentences
            .iter()
            .flat_map(|s| s.tokens.iter().map(|t| t.surface.clone())),
        3,
    )
    .extend_classifier(&types[..2], 4)?;
    let keep: BTreeSet<String> = types[2..].iter().cloned().collect();
    let slice = mask_labels(&corpus, &keep);

    let ann = annotate(&old, &slice, 1.0);
    println!(
        "token splits: {} new-entity, {} defined-other, {} undefined-other",
        ann.count_new_entity, ann.count_defined_other, ann.count_undefined_other
    );

    let index = build_feature_index(&slice, &old, &ann);
    for (group, entries) in &index.groups {
        println!("group {group}: {} tokens", entries.len());
    }

    // match the first few new-entity anchors to K=3 neighbors
    let mut shown = 0;
    'outer: for (si, sentence) in slice.sentences.iter().enumerate() {
        for (ti, tok) in sentence.tokens.iter().enumerate() {
            let a = &ann.tokens[si][ti];
            if a.membership != Membership::NewEntity {
                continue;
            }
            let anchor = TokenRef { sentence: si, token: ti };
            let feat = ann.old_features[si].row(ti).to_owned();
            let m = knn_match(&index, &tok.tag.to_string(), anchor, &feat, 3);
            println!(
                "anchor {:?} ({} '{}'): matched {:?}, weights anchor {:.3} + {:?}",
                anchor, tok.tag, tok.surface, m.matched, m.anchor_weight, m.matched_weights
            );
            shown += 1;
            if shown == 5 {
                break 'outer;
            }
        }
    }
    Ok(())
}
