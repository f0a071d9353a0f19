//! Thread-pool drivers. Work units carry their own derived seeds and results
//! are collected in index order, so output does not depend on the thread count.

use mediate_core::effects_qr::{finalize_bootstrap, replicate_statistics, BootstrapConfig};
use mediate_core::{Dataset, Error};
use rayon::prelude::*;

/// Symmetric t-bootstrap with replicates spread over the current pool.
/// Produces the same intervals as the sequential core routine.
pub fn par_bootstrap<F>(
    ds: &Dataset,
    base: &[(f64, f64)],
    estimator: &F,
    cfg: BootstrapConfig,
) -> mediate_core::Result<Vec<(f64, f64)>>
where
    F: Fn(&Dataset) -> mediate_core::Result<Vec<(f64, f64)>> + Sync,
{
    if cfg.b < 50 {
        return Err(Error::Validation("bootstrap needs at least 50 replicates".into()));
    }
    let reps: Vec<Option<Vec<f64>>> = (0..cfg.b)
        .into_par_iter()
        .map(|b| replicate_statistics(ds, base, estimator, cfg.seed, b))
        .collect();
    finalize_bootstrap(base, &reps, cfg.alpha)
}

/// Runs `f` inside a pool of `threads` workers (all cores when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        b = b.num_threads(t.max(1));
    }
    let pool = b.build()?;
    Ok(pool.install(f))
}
