//! Audits the analytic gradients of every training objective against
//! Richardson-extrapolated central finite differences.
//!
//!     cargo run --example gradient_check

use std::io::stdout;

use cfner::cli::{cmd_gradcheck, print_gradcheck};

fn main() -> anyhow::Result<()> {
    let summary = cmd_gradcheck(5, false)?;
    print_gradcheck(&summary, stdout().lock())?;
    if !summary.pass {
        anyhow::bail!("gradient check failed");
    }
    Ok(())
}
