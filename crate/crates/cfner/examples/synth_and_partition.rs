//! Generates a synthetic BIO corpus, builds a continual-learning
//! schedule, and partitions the corpus into per-step slices.
//!
//!     cargo run --example synth_and_partition

use cfner::corpus::{build_cl_schedule, corpus_stats, greedy_partition, synth_corpus, SynthSpec};

fn main() -> anyhow::Result<()> {
    let spec = SynthSpec {
        num_types: 6,
        sentences_per_type: 30,
        ..SynthSpec::default()
    };
    let corpus = synth_corpus(&spec, 7)?;
    println!(
        "corpus: {} sentences, {} tokens, schema {:?}",
        corpus.sentences.len(),
        corpus.num_tokens(),
        corpus.schema.entity_types()
    );
    for (t, n) in corpus_stats(&corpus) {
        println!("  {t}: {n} spans");
    }

    let schedule = build_cl_schedule(&corpus.schema, 2, 1)?;
    println!("\nschedule (first step 2 types, then 1 per step):");
    for (i, step) in schedule.steps.iter().enumerate() {
        println!("  step {i}: {step:?}");
    }

    let slices = greedy_partition(&corpus, &schedule, 0)?;
    println!("\npartition (rare types allocated first, sizes balanced):");
    for (i, slice) in slices.iter().enumerate() {
        println!(
            "  slice {i}: {} sentences, spans {:?}",
            slice.sentences.len(),
            corpus_stats(slice)
        );
    }
    Ok(())
}
