//! `stitch-eval`: run the complete transfer experiment — collect,
//! replay, anchor selection, training, stitching, and evaluation — for
//! every seed, persisting all artifacts into the run directory.

use std::path::Path;

use vistitch::eval::run_experiment;
use vistitch::Result;

use crate::commands::Context;
use crate::logger;

pub fn run(config: &Path) -> Result<()> {
    let ctx = Context::load(config)?;
    ctx.note_invocation("stitch-eval")?;
    let result = run_experiment(&ctx.spec, Some(ctx.out_dir()), ctx.cfg.run.parallelism)?;
    for warning in &result.warnings {
        logger::warn(warning);
    }
    for s in &result.summaries {
        logger::info(&format!(
            "{} @ {}: {:.1}% +- {:.1}%",
            s.policy_variant,
            s.env,
            s.mean * 100.0,
            s.stderr * 100.0
        ));
    }
    logger::info(&format!(
        "wrote results.csv and results.json to {}",
        ctx.out_dir().display()
    ));
    Ok(())
}
