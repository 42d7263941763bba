//! scratch probe: per-step behavior of the CL methods

use cfner::baselines::BaselineKind;
use cfner::config::ExperimentConfig;
use cfner::protocol::run_experiment;

fn main() -> anyhow::Result<()> {
    let base: ExperimentConfig = toml::from_str("seeds = [1]")?;
    for kind in [BaselineKind::FinetuneOnly, BaselineKind::ExtendNer, BaselineKind::Cfner] {
        let mut c = base.clone();
        c.baseline = kind;
        let r = run_experiment(&c)?;
        println!("== {} (mean micro {:.3})", kind.name(), r.mean_micro_f1);
        for s in &r.seeds[0].steps {
            let per: Vec<String> = s
                .per_type
                .iter()
                .map(|(t, f)| format!("{t}={f:.2}"))
                .collect();
            println!("  step {}: micro {:.3} [{}]", s.step, s.micro_f1, per.join(" "));
        }
    }
    Ok(())
}
