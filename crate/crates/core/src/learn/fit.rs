//! Embedding fit for a driver the network has not seen, with all weights frozen.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::dataset::{Dataset, Sample};
use super::loss::{behavior_loss, LossWeights};
use super::model::{Model, StyleEmbedding, EMBED_DIM};
use super::train::Adam;
use crate::config::Config;
use crate::error::{invalid, Error, Result};
use crate::sim::DemonstrationTrace;

/// Optimizes a fresh embedding against the behavior losses of one trace.
/// Several restarts from the prior are run and the one with the lowest loss
/// over the whole trace is kept.
pub fn fit_new_user(model: &Model, trace: &DemonstrationTrace, cfg: &Config, seed: u64) -> Result<StyleEmbedding> {
    if trace.meta.duration_s < 60.0 {
        return Err(invalid(format!("fitting needs at least 60 s of driving, got {}", trace.meta.duration_s)));
    }
    let lc = &cfg.learn;
    let mut fit_cfg = cfg.clone();
    fit_cfg.learn.val_fraction = 0.0;
    let data = Dataset::from_traces(std::slice::from_ref(trace), &fit_cfg)?;
    let weights = LossWeights::new(lc, data.pos_weight);
    let all: Vec<Sample> = thin(&data.train, lc.fit_max_samples);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut best: Option<([f64; EMBED_DIM], f64)> = None;
    for restart in 0..lc.fit_restarts.max(1) {
        let mut w: [f64; EMBED_DIM] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let mut adam = Adam::new(&[EMBED_DIM], lc.fit_learning_rate, lc.beta1, lc.beta2);
        for _ in 0..lc.fit_steps {
            let batch: Vec<Sample> = if all.len() <= lc.batch_size {
                all.clone()
            } else {
                sample(&mut rng, all.len(), lc.batch_size).into_iter().map(|i| all[i]).collect()
            };
            let mut g = [0.0; EMBED_DIM];
            let l = behavior_loss(model, &w, &data, &batch, &weights, Some(&mut g))?;
            if !l.total.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::FitFailed(format!("non-finite loss in restart {restart}")));
            }
            adam.step(&mut [&mut w], &[&g]);
        }
        let loss = behavior_loss(model, &w, &data, &all, &weights, None)?.total;
        if !loss.is_finite() {
            return Err(Error::FitFailed(format!("non-finite final loss in restart {restart}")));
        }
        log::debug!("fit restart {restart}: loss {loss:.4} w {w:?}");
        if best.is_none_or(|(_, l)| loss < l) {
            best = Some((w, loss));
        }
    }
    let (w, _) = best.expect("at least one restart");
    let (mu, sigma) = model.mean_posterior(&w, all.iter().map(|s| data.window(s)))?;
    Ok(StyleEmbedding { persona_id: trace.meta.persona_id.clone(), w, mu, sigma, adb_score: trace.meta.adb_score })
}

/// Evenly spaced subset of at most `max` samples, keeping every positive
/// lane label.
fn thin(samples: &[Sample], max: usize) -> Vec<Sample> {
    if samples.len() <= max || max == 0 {
        return samples.to_vec();
    }
    let step = samples.len() as f64 / max as f64;
    let mut keep = vec![false; samples.len()];
    for i in 0..max {
        keep[(i as f64 * step) as usize] = true;
    }
    samples.iter().zip(keep).filter(|(s, k)| *k || s.lane == Some(true)).map(|(s, _)| *s).collect()
}
