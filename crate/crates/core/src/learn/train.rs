//! Minibatch Adam over all subnetworks and the embedding table.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Sample};
use super::loss::{total_loss, Gradients, LossBreakdown, LossWeights};
use super::model::{Model, EMBED_DIM};
use crate::config::{Config, LearnConfig};
use crate::error::{invalid, Error, Result};
use crate::sim::DemonstrationTrace;

/// First and second moment estimates for one parameter block.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(block_sizes: &[usize], lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Applies one update to each block with its matching gradient.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (b, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[b], &mut self.v[b]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Mean training losses and validation loss after one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub l5: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Validation L1 + L3, the regression part of the objective.
    pub val_l1_l3: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Writes the training log with the config hash repeated on every row.
pub fn write_log_csv<W: Write>(log: &[EpochLog], config_hash: &str, out: W) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        epoch: usize,
        l1: f64,
        l2: f64,
        l3: f64,
        l4: f64,
        l5: f64,
        train_loss: f64,
        val_loss: f64,
        val_l1_l3: f64,
        config_hash: &'a str,
    }
    let mut w = csv::Writer::from_writer(out);
    for r in log {
        w.serialize(Row {
            epoch: r.epoch,
            l1: r.l1,
            l2: r.l2,
            l3: r.l3,
            l4: r.l4,
            l5: r.l5,
            train_loss: r.train_loss,
            val_loss: r.val_loss,
            val_l1_l3: r.val_l1_l3,
            config_hash,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Validation loss with fixed posterior draws so epochs are comparable.
fn evaluate(model: &Model, table: &[f64], data: &Dataset, samples: &[Sample], eps: &[[f64; EMBED_DIM]], weights: &LossWeights) -> Result<LossBreakdown> {
    if samples.is_empty() {
        return Ok(LossBreakdown::default());
    }
    total_loss(model, table, data, samples, eps, weights, None)
}

fn draws(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; EMBED_DIM]> {
    (0..n).map(|_| std::array::from_fn(|_| StandardNormal.sample(&mut *rng))).collect()
}

/// Trains a fresh model on `traces`, which must cover at least two personas.
pub fn train(traces: &[DemonstrationTrace], cfg: &Config, seed: u64) -> Result<TrainOutcome> {
    let data = Dataset::from_traces(traces, cfg)?;
    train_dataset(&data, cfg, seed)
}

pub fn train_dataset(data: &Dataset, cfg: &Config, seed: u64) -> Result<TrainOutcome> {
    if data.personas.len() < 2 {
        return Err(invalid(format!("training needs at least 2 personas, got {}", data.personas.len())));
    }
    let lc: &LearnConfig = &cfg.learn;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::init(cfg, &data.personas, seed)?;
    let mut table = model.embedding_table();
    let weights = LossWeights::new(lc, data.pos_weight);

    let block_sizes: Vec<usize> =
        model.nets().iter().map(|n| n.params().len()).chain(std::iter::once(table.len())).collect();
    let mut adam = Adam::new(&block_sizes, lc.learning_rate, lc.beta1, lc.beta2);
    let mut grads = Gradients::zeros(&model, table.len());
    let val_eps = draws(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed), data.val.len());

    let mut noisy = table.clone();
    let mut order: Vec<Sample> = data.train.clone();
    let mut log = Vec::new();
    let (mut best, mut best_loss, mut best_epoch) = ((model.clone(), table.clone()), f64::INFINITY, 0);
    for epoch in 1..=lc.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossBreakdown::default();
        let mut batches = 0usize;
        for batch in order.chunks(lc.batch_size) {
            let eps = draws(&mut rng, batch.len());
            if lc.embed_noise > 0.0 {
                noisy.copy_from_slice(&table);
                for x in noisy.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *x += lc.embed_noise * z;
                }
            }
            let fed = if lc.embed_noise > 0.0 { &noisy } else { &table };
            grads.clear();
            let l = total_loss(&model, fed, data, batch, &eps, &weights, Some(&mut grads))?;
            if !l.total.is_finite() || grads.table.iter().chain(grads.nets.iter().flatten()).any(|g| !g.is_finite()) {
                let mut last = best.0.clone();
                last.set_embedding_table(&best.1);
                return Err(Error::TrainingDiverged { epoch, last: Box::new(last) });
            }
            let [f, c, v, s, m] = model.nets_mut();
            let mut params: Vec<&mut [f64]> =
                vec![f.params_mut(), c.params_mut(), v.params_mut(), s.params_mut(), m.params_mut(), &mut table];
            let g: Vec<&[f64]> = grads.nets.iter().map(Vec::as_slice).chain(std::iter::once(grads.table.as_slice())).collect();
            adam.step(&mut params, &g);
            sums.l1 += l.l1;
            sums.l2 += l.l2;
            sums.l3 += l.l3;
            sums.l4 += l.l4;
            sums.l5 += l.l5;
            sums.total += l.total;
            batches += 1;
        }
        let k = batches.max(1) as f64;
        let val = evaluate(&model, &table, data, &data.val, &val_eps, &weights)?;
        let val_loss = if data.val.is_empty() { sums.total / k } else { val.total };
        if !val_loss.is_finite() {
            let mut last = best.0.clone();
            last.set_embedding_table(&best.1);
            return Err(Error::TrainingDiverged { epoch, last: Box::new(last) });
        }
        let row = EpochLog {
            epoch,
            l1: sums.l1 / k,
            l2: sums.l2 / k,
            l3: sums.l3 / k,
            l4: sums.l4 / k,
            l5: sums.l5 / k,
            train_loss: sums.total / k,
            val_loss,
            val_l1_l3: val.l1 + val.l3,
        };
        log::info!(
            "epoch {epoch}: train {:.4} (L1 {:.4} L2 {:.4} L3 {:.4} L4 {:.2} L5 {:.4}) val {:.4}",
            row.train_loss,
            row.l1,
            row.l2,
            row.l3,
            row.l4,
            row.l5,
            row.val_loss
        );
        log.push(row);
        if val_loss < best_loss {
            best_loss = val_loss;
            best_epoch = epoch;
            best = (model.clone(), table.clone());
        } else if epoch - best_epoch >= lc.patience {
            log::info!("early stop at epoch {epoch}; keeping epoch {best_epoch}");
            break;
        }
    }

    let (mut model, table) = best;
    model.set_embedding_table(&table);
    summarize_posteriors(&mut model, data)?;
    Ok(TrainOutcome { model, log, best_epoch })
}

/// Stores each persona's mean posterior over its training windows.
fn summarize_posteriors(model: &mut Model, data: &Dataset) -> Result<()> {
    for p in 0..model.embeddings.len() {
        let w = model.embeddings[p].w;
        let windows = data.train.iter().filter(|s| s.persona == p).map(|s| data.window(s));
        let (mu, sigma) = model.mean_posterior(&w, windows)?;
        model.embeddings[p].mu = mu;
        model.embeddings[p].sigma = sigma;
    }
    Ok(())
}
