//! Runs a small continual-learning experiment with three methods and
//! prints the per-step and aggregate micro-F1 for each.
//!
//!     cargo run --example baseline_comparison

use cfner::baselines::BaselineKind;
use cfner::config::ExperimentConfig;
use cfner::protocol::run_experiment;

fn main() -> anyhow::Result<()> {
    let mut config: ExperimentConfig = toml::from_str(
        r#"
        seeds = [1, 2]

        [synth]
        num_types = 4
        sentences_per_type = 60
        vocab_per_type = 8
        sentence_length = 10
        other_vocab_size = 60
        noise_rate = 0.05
        "#,
    )?;
    config.epochs = 5;

    for kind in [
        BaselineKind::FinetuneOnly,
        BaselineKind::ExtendNer,
        BaselineKind::Cfner,
    ] {
        config.baseline = kind;
        let report = run_experiment(&config)?;
        print!("{:<14}", kind.name());
        for step in &report.seeds[0].steps {
            print!("  step{}={:.3}", step.step, step.micro_f1);
        }
        println!(
            "  | mean {:.3} +- {:.3}",
            report.mean_micro_f1, report.std_micro_f1
        );
    }
    println!("\n(later steps score all types seen so far; methods without distillation forget)");
    Ok(())
}
