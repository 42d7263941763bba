//! Prints the curriculum confidence schedule and the adaptive balance
//! weight for a few old/new type ratios.
//!
//!     cargo run --example curriculum_and_weights

use cfner::causal::{adaptive_weight, curriculum_threshold, CurriculumSchedule};

fn main() -> anyhow::Result<()> {
    // delta decays linearly from 1 to 0 over the first 10 epochs, then
    // stays at the floor: early epochs only trust confident teacher
    // predictions, later epochs admit every defined-other token.
    let schedule = CurriculumSchedule::new(1.0, 0.0, 10)?;
    println!("epoch  delta");
    for epoch in 1..=12 {
        println!("{epoch:>5}  {:.4}", curriculum_threshold(&schedule, epoch));
    }

    // lambda = lambda_base * sqrt(C_old / C_new) grows as the old type
    // inventory outnumbers the new one, shifting weight onto preserving
    // old knowledge.
    println!("\nold types  new types  lambda");
    for (c_old, c_new) in [(1, 1), (2, 2), (8, 2), (18, 2), (8, 1)] {
        println!(
            "{c_old:>9}  {c_new:>9}  {:.4}",
            adaptive_weight(2.0, c_old, c_new)?
        );
    }
    Ok(())
}
