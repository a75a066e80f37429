//! The joint objective and its gradient with respect to every subnetwork and
//! the embedding table.

use super::dataset::{Dataset, Sample};
use super::model::{Model, SubnetView, Workspace, EMBED_DIM};
use super::nn::sigmoid;
use crate::config::LearnConfig;
use crate::error::Result;

/// Loss weights and residual units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub c2: f64,
    pub c4: f64,
    pub follow_unit: f64,
    pub velocity_unit: f64,
    /// Weight of positive lane-change labels in the cross-entropy.
    pub pos_weight: f64,
}

impl LossWeights {
    pub fn new(cfg: &LearnConfig, pos_weight: f64) -> Self {
        Self {
            c2: cfg.c2,
            c4: cfg.c4,
            follow_unit: cfg.follow_loss_unit_m,
            velocity_unit: cfg.velocity_loss_unit_mps,
            pos_weight,
        }
    }
}

/// Batch means of the five loss terms. `l4` is in squared ADB points before
/// weighting; `total` applies the weights.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub l5: f64,
    pub total: f64,
}

/// Gradient buffers laid out like [`Model::nets`] plus the embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub nets: [Vec<f64>; 5],
    pub table: Vec<f64>,
}

impl Gradients {
    pub fn zeros(model: &Model, table_len: usize) -> Self {
        Self {
            nets: model.nets().map(|n| vec![0.0; n.params().len()]),
            table: vec![0.0; table_len],
        }
    }

    pub fn clear(&mut self) {
        self.nets.iter_mut().for_each(|g| g.fill(0.0));
        self.table.fill(0.0);
    }
}

/// Weighted sum of the five losses over `batch`, with `eps[i]` the standard
/// normal draw used to sample the posterior for sample `i`. Gradients are
/// accumulated into `grads` when given.
pub fn total_loss(
    model: &Model,
    table: &[f64],
    data: &Dataset,
    batch: &[Sample],
    eps: &[[f64; EMBED_DIM]],
    weights: &LossWeights,
    mut grads: Option<&mut Gradients>,
) -> Result<LossBreakdown> {
    assert_eq!(batch.len(), eps.len(), "one posterior draw per sample");
    let norm = &model.norm;
    let n = batch.len().max(1) as f64;
    let n_follow = batch.iter().filter(|s| s.follow.is_some()).count().max(1) as f64;
    let n_lane = batch.iter().filter(|s| s.lane.is_some()).count().max(1) as f64;

    let mut ws = Workspace::default();
    let mut out = LossBreakdown::default();
    let mut grad_m_in = vec![0.0; model.posterior.input_size()];
    let mut grad_in = Vec::new();
    for (s, e) in batch.iter().zip(eps) {
        let w = &table[s.persona * EMBED_DIM..(s.persona + 1) * EMBED_DIM];
        let frames = data.window(s);
        let targets = model.forward_predictors(w, frames, &mut ws)?;
        let view = SubnetView { z_l: ws.c.penultimate(), z_v: ws.v.penultimate(), targets };
        model.posterior_input(frames[frames.len() - 1].v_lv, &view, &mut ws.m_in);
        model.posterior.forward(&ws.m_in, &mut ws.m)?;

        let o_f = ws.f.output()[0];
        let o_c = ws.c.output();
        let p = sigmoid(o_c[0] - o_c[1]);
        let o_v = ws.v.output()[0];

        // L1 and L3: squared residuals in loss units.
        let mut d_of = 0.0;
        if let Some(f) = s.follow {
            let r = (targets.f_hat - f) / weights.follow_unit;
            out.l1 += r * r / n_follow;
            d_of += 2.0 * r / weights.follow_unit / n_follow * norm.follow_out_scale * sigmoid(o_f);
        }
        let r_v = (targets.v_hat - s.velocity) / weights.velocity_unit;
        out.l3 += r_v * r_v / n;
        let mut d_ov = 2.0 * r_v / weights.velocity_unit / n * norm.velocity_out_scale * sigmoid(o_v);

        // L2: weighted cross-entropy on P(change) = σ(a0 − a1).
        let mut d_margin = 0.0;
        if let Some(label) = s.lane {
            let (ce, d) = if label {
                (-weights.pos_weight * p.max(f64::MIN_POSITIVE).ln(), -weights.pos_weight * (1.0 - p))
            } else {
                (-(1.0 - p).max(f64::MIN_POSITIVE).ln(), p)
            };
            out.l2 += ce / n_lane;
            d_margin += weights.c2 * d / n_lane;
        }

        // L4 on the style head, whose raw output is the normalized score.
        let r_s = targets.s_hat - s.adb;
        out.l4 += r_s * r_s / n;
        let mut d_os = weights.c4 * 2.0 * r_s / n * norm.adb_range();

        // L5: reparameterized posterior sample against the embedding.
        let m_out = ws.m.output();
        let mut d_m_out = [0.0; 2 * EMBED_DIM];
        let mut d_w_direct = [0.0; EMBED_DIM];
        for k in 0..EMBED_DIM {
            let sigma = m_out[EMBED_DIM + k].exp();
            let w_hat = m_out[k] + sigma * e[k];
            let r = w_hat - w[k];
            out.l5 += r * r / n;
            let g = 2.0 * r / n;
            d_m_out[k] = g;
            d_m_out[EMBED_DIM + k] = g * sigma * e[k];
            d_w_direct[k] = -g;
        }

        let Some(grads) = grads.as_deref_mut() else { continue };
        let [g_f, g_c, g_v, g_s, g_m] = &mut grads.nets;
        model.posterior.backward(&ws.m, &d_m_out, None, Some(g_m), Some(&mut grad_m_in));

        // Unpack the posterior input gradient onto the predictor outputs and encodings.
        let h = ws.c.penultimate().len();
        let dz_l = &grad_m_in[1..1 + h];
        let dz_v = &grad_m_in[1 + h..1 + 2 * h];
        let tail = &grad_m_in[1 + 2 * h..];
        // Normalized f̂ and v̂ are the softplus outputs themselves.
        d_of += tail[0] * sigmoid(o_f);
        d_margin += tail[1] * p * (1.0 - p);
        d_ov += tail[2] * sigmoid(o_v);
        d_os += tail[3];

        let mut d_w = d_w_direct;
        let mut add_w = |g: &[f64]| {
            for k in 0..EMBED_DIM {
                d_w[k] += g[k];
            }
        };
        grad_in.resize(model.follow.input_size(), 0.0);
        model.follow.backward(&ws.f, &[d_of], None, Some(g_f), Some(&mut grad_in));
        add_w(&grad_in);
        grad_in.resize(model.lane.input_size(), 0.0);
        model.lane.backward(&ws.c, &[d_margin, -d_margin], Some(dz_l), Some(g_c), Some(&mut grad_in));
        add_w(&grad_in);
        grad_in.resize(model.velocity.input_size(), 0.0);
        model.velocity.backward(&ws.v, &[d_ov], Some(dz_v), Some(g_v), Some(&mut grad_in));
        add_w(&grad_in);
        grad_in.resize(EMBED_DIM, 0.0);
        model.style.backward(&ws.s, &[d_os], None, Some(g_s), Some(&mut grad_in));
        add_w(&grad_in);

        let slot = &mut grads.table[s.persona * EMBED_DIM..(s.persona + 1) * EMBED_DIM];
        for k in 0..EMBED_DIM {
            slot[k] += d_w[k];
        }
    }
    out.total = out.l1 + weights.c2 * out.l2 + out.l3 + weights.c4 * out.l4 + out.l5;
    Ok(out)
}

/// L1 + c2·L2 + L3 for a single embedding `w` over `batch`, with the gradient
/// with respect to `w` only. Used to fit a new driver against frozen weights.
pub fn behavior_loss(
    model: &Model,
    w: &[f64; EMBED_DIM],
    data: &Dataset,
    batch: &[Sample],
    weights: &LossWeights,
    mut grad_w: Option<&mut [f64; EMBED_DIM]>,
) -> Result<LossBreakdown> {
    let norm = &model.norm;
    let n = batch.len().max(1) as f64;
    let n_follow = batch.iter().filter(|s| s.follow.is_some()).count().max(1) as f64;
    let n_lane = batch.iter().filter(|s| s.lane.is_some()).count().max(1) as f64;
    let mut ws = Workspace::default();
    let mut out = LossBreakdown::default();
    let mut grad_in = Vec::new();
    for s in batch {
        let targets = model.forward_predictors(w, data.window(s), &mut ws)?;
        let o_c = ws.c.output();
        let p = sigmoid(o_c[0] - o_c[1]);
        let mut d_of = 0.0;
        if let Some(f) = s.follow {
            let r = (targets.f_hat - f) / weights.follow_unit;
            out.l1 += r * r / n_follow;
            d_of = 2.0 * r / weights.follow_unit / n_follow * norm.follow_out_scale * sigmoid(ws.f.output()[0]);
        }
        let r_v = (targets.v_hat - s.velocity) / weights.velocity_unit;
        out.l3 += r_v * r_v / n;
        let d_ov = 2.0 * r_v / weights.velocity_unit / n * norm.velocity_out_scale * sigmoid(ws.v.output()[0]);
        let mut d_margin = 0.0;
        if let Some(label) = s.lane {
            let (ce, d) = if label {
                (-weights.pos_weight * p.max(f64::MIN_POSITIVE).ln(), -weights.pos_weight * (1.0 - p))
            } else {
                (-(1.0 - p).max(f64::MIN_POSITIVE).ln(), p)
            };
            out.l2 += ce / n_lane;
            d_margin = weights.c2 * d / n_lane;
        }
        let Some(g) = grad_w.as_deref_mut() else { continue };
        for (net, cache, grad_out) in [
            (&model.follow, &ws.f, [d_of, 0.0]),
            (&model.lane, &ws.c, [d_margin, -d_margin]),
            (&model.velocity, &ws.v, [d_ov, 0.0]),
        ] {
            if grad_out == [0.0, 0.0] {
                continue;
            }
            grad_in.resize(net.input_size(), 0.0);
            net.backward(cache, &grad_out[..net.output_size()], None, None, Some(&mut grad_in));
            for k in 0..EMBED_DIM {
                g[k] += grad_in[k];
            }
        }
    }
    out.total = out.l1 + weights.c2 * out.l2 + out.l3;
    Ok(out)
}
