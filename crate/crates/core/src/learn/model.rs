use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::nn::{sigmoid, softplus, Cache, Mlp};
use crate::config::{Config, LearnConfig};
use crate::controllers::ControlTargets;
use crate::error::{invalid, Error, Result};
use crate::personas::{ADB_MAX, ADB_MIN};
use crate::sim::Frame;

pub const EMBED_DIM: usize = 3;

/// Scales applied to raw observations and network outputs. Stored with the
/// weights so a checkpoint is self-contained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub speed: f64,
    pub gap: f64,
    pub lateral: f64,
    pub follow_out_scale: f64,
    pub velocity_out_scale: f64,
    pub adb_min: f64,
    pub adb_max: f64,
}

impl Normalization {
    pub fn from_config(cfg: &LearnConfig) -> Self {
        Self {
            speed: cfg.speed_norm,
            gap: cfg.gap_norm,
            lateral: cfg.lateral_norm,
            follow_out_scale: cfg.follow_out_scale_m,
            velocity_out_scale: cfg.velocity_out_scale_mps,
            adb_min: ADB_MIN,
            adb_max: ADB_MAX,
        }
    }

    pub fn adb_range(&self) -> f64 {
        self.adb_max - self.adb_min
    }
}

/// Learned style of one driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleEmbedding {
    pub persona_id: String,
    pub w: [f64; EMBED_DIM],
    pub mu: [f64; EMBED_DIM],
    pub sigma: [f64; EMBED_DIM],
    pub adb_score: f64,
}

impl StyleEmbedding {
    pub fn new(persona_id: impl Into<String>, w: [f64; EMBED_DIM], adb_score: f64) -> Self {
        Self { persona_id: persona_id.into(), w, mu: w, sigma: [1.0; EMBED_DIM], adb_score }
    }
}

/// Penultimate activations of the lane and velocity predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct SubnetActivations {
    pub z_l: Vec<f64>,
    pub z_v: Vec<f64>,
}

/// Predictor subnetworks, style head, posterior network and the embedding
/// table of the training personas.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub window: usize,
    pub norm: Normalization,
    pub follow: Mlp,
    pub lane: Mlp,
    pub velocity: Mlp,
    /// Single affine layer: normalized score = θ·w + b.
    pub style: Mlp,
    pub posterior: Mlp,
    pub embeddings: Vec<StyleEmbedding>,
}

/// Reusable buffers for one forward pass of every subnetwork.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    pub(crate) f_in: Vec<f64>,
    pub(crate) c_in: Vec<f64>,
    pub(crate) v_in: Vec<f64>,
    pub(crate) m_in: Vec<f64>,
    pub(crate) f: Cache,
    pub(crate) c: Cache,
    pub(crate) v: Cache,
    pub(crate) s: Cache,
    pub(crate) m: Cache,
}

impl Model {
    /// Fresh network with embeddings drawn from the N(0, I) prior, one per
    /// persona id.
    pub fn init(cfg: &Config, personas: &[(String, f64)], seed: u64) -> Result<Self> {
        let lc = &cfg.learn;
        let window = cfg.sim.window_len();
        let hidden = vec![lc.hidden_width; lc.hidden_layers];
        let sizes = |inputs: usize, outputs: usize| {
            let mut s = vec![inputs];
            s.extend(&hidden);
            s.push(outputs);
            s
        };
        if lc.hidden_layers == 0 {
            return Err(invalid("learn.hidden_layers must be ≥ 1 so the subnetworks have encodings"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let follow = Mlp::new(&sizes(EMBED_DIM + window, 1), &mut rng);
        let mut lane = Mlp::new(&sizes(EMBED_DIM + 4 * window, 2), &mut rng);
        lane.zero_output_layer();
        let velocity = Mlp::new(&sizes(EMBED_DIM + 3 * window, 1), &mut rng);
        let mut style = Mlp::new(&[EMBED_DIM, 1], &mut rng);
        style.params_mut()[EMBED_DIM] = 0.5;
        let m_inputs = 1 + 2 * lc.hidden_width + 4;
        let mut posterior = Mlp::new(&sizes(m_inputs, 2 * EMBED_DIM), &mut rng);
        posterior.zero_output_rows(EMBED_DIM..2 * EMBED_DIM);

        let embeddings = personas
            .iter()
            .map(|(id, adb)| {
                let w = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
                StyleEmbedding::new(id.clone(), w, *adb)
            })
            .collect();
        Ok(Self {
            window,
            norm: Normalization::from_config(lc),
            follow,
            lane,
            velocity,
            style,
            posterior,
            embeddings,
        })
    }

    pub fn nets(&self) -> [&Mlp; 5] {
        [&self.follow, &self.lane, &self.velocity, &self.style, &self.posterior]
    }

    pub fn nets_mut(&mut self) -> [&mut Mlp; 5] {
        [&mut self.follow, &mut self.lane, &mut self.velocity, &mut self.style, &mut self.posterior]
    }

    pub fn embedding(&self, persona_id: &str) -> Option<&StyleEmbedding> {
        self.embeddings.iter().find(|e| e.persona_id == persona_id)
    }

    /// Embedding vectors of all personas, concatenated.
    pub fn embedding_table(&self) -> Vec<f64> {
        self.embeddings.iter().flat_map(|e| e.w).collect()
    }

    pub fn set_embedding_table(&mut self, table: &[f64]) {
        for (e, w) in self.embeddings.iter_mut().zip(table.chunks_exact(EMBED_DIM)) {
            e.w.copy_from_slice(w);
        }
    }

    fn check_window(&self, frames: &[Frame]) -> Result<()> {
        if frames.len() != self.window {
            return Err(invalid(format!("expected a window of {} frames, got {}", self.window, frames.len())));
        }
        Ok(())
    }

    pub(crate) fn follow_input(&self, w: &[f64], frames: &[Frame], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(w);
        out.extend(frames.iter().map(|f| f.v_lv / self.norm.speed));
    }

    pub(crate) fn lane_input(&self, w: &[f64], frames: &[Frame], out: &mut Vec<f64>) {
        let n = &self.norm;
        out.clear();
        out.extend_from_slice(w);
        out.extend(frames.iter().map(|f| f.v_ev / n.speed));
        out.extend(frames.iter().map(|f| f.v_lv / n.speed));
        out.extend(frames.iter().map(|f| f.d_x / n.gap));
        out.extend(frames.iter().map(|f| f.d_y / n.lateral));
    }

    pub(crate) fn velocity_input(&self, w: &[f64], frames: &[Frame], out: &mut Vec<f64>) {
        let n = &self.norm;
        out.clear();
        out.extend_from_slice(w);
        out.extend(frames.iter().map(|f| f.v_lv / n.speed));
        out.extend(frames.iter().map(|f| f.d_y / n.lateral));
        out.extend(frames.iter().map(|f| f.d_x / n.gap));
    }

    /// Posterior input: current lead speed, both encodings and the
    /// normalized predictions.
    pub(crate) fn posterior_input(&self, v_lv: f64, z: &SubnetView, out: &mut Vec<f64>) {
        let n = &self.norm;
        out.clear();
        out.push(v_lv / n.speed);
        out.extend_from_slice(z.z_l);
        out.extend_from_slice(z.z_v);
        out.push(z.targets.f_hat / n.follow_out_scale);
        out.push(z.targets.l_hat);
        out.push(z.targets.v_hat / n.velocity_out_scale);
        out.push((z.targets.s_hat - n.adb_min) / n.adb_range());
    }

    pub fn predict_follow(&self, w: &[f64; EMBED_DIM], frames: &[Frame]) -> Result<f64> {
        self.check_window(frames)?;
        let mut input = Vec::new();
        self.follow_input(w, frames, &mut input);
        Ok(self.norm.follow_out_scale * softplus(self.follow.predict(&input)?[0]))
    }

    /// Takes the lateral offset as well: without it a lead ahead looks the
    /// same from either lane.
    pub fn predict_lane(&self, w: &[f64; EMBED_DIM], frames: &[Frame]) -> Result<(f64, Vec<f64>)> {
        self.check_window(frames)?;
        let mut input = Vec::new();
        self.lane_input(w, frames, &mut input);
        let mut cache = Cache::default();
        self.lane.forward(&input, &mut cache)?;
        let out = cache.output();
        Ok((sigmoid(out[0] - out[1]), cache.penultimate().to_vec()))
    }

    pub fn predict_velocity(&self, w: &[f64; EMBED_DIM], frames: &[Frame]) -> Result<(f64, Vec<f64>)> {
        self.check_window(frames)?;
        let mut input = Vec::new();
        self.velocity_input(w, frames, &mut input);
        let mut cache = Cache::default();
        self.velocity.forward(&input, &mut cache)?;
        Ok((self.norm.velocity_out_scale * softplus(cache.output()[0]), cache.penultimate().to_vec()))
    }

    pub fn predict_style(&self, w: &[f64; EMBED_DIM]) -> f64 {
        let p = self.style.params();
        let raw = p[0] * w[0] + p[1] * w[1] + p[2] * w[2] + p[3];
        self.norm.adb_min + self.norm.adb_range() * raw
    }

    /// ∇_w of the predicted score, in ADB points per embedding unit.
    pub fn style_gradient(&self) -> [f64; EMBED_DIM] {
        let p = self.style.params();
        std::array::from_fn(|i| self.norm.adb_range() * p[i])
    }

    /// Posterior mean and standard deviation from one observation.
    pub fn infer_posterior(
        &self,
        v_lv: f64,
        activations: &SubnetActivations,
        targets: &ControlTargets,
    ) -> Result<([f64; EMBED_DIM], [f64; EMBED_DIM])> {
        if !v_lv.is_finite() || !targets.is_finite() {
            return Err(invalid("posterior inputs must be finite"));
        }
        let view = SubnetView { z_l: &activations.z_l, z_v: &activations.z_v, targets: *targets };
        let mut input = Vec::new();
        self.posterior_input(v_lv, &view, &mut input);
        let out = self.posterior.predict(&input)?;
        Ok((std::array::from_fn(|i| out[i]), std::array::from_fn(|i| out[EMBED_DIM + i].exp())))
    }

    /// All four setpoints for one window.
    pub fn control_targets(&self, w: &[f64; EMBED_DIM], frames: &[Frame]) -> Result<ControlTargets> {
        let mut ws = Workspace::default();
        self.forward_predictors(w, frames, &mut ws)
    }

    /// Runs F, C, V and S, leaving their caches in `ws`.
    pub(crate) fn forward_predictors(&self, w: &[f64], frames: &[Frame], ws: &mut Workspace) -> Result<ControlTargets> {
        self.check_window(frames)?;
        self.follow_input(w, frames, &mut ws.f_in);
        self.lane_input(w, frames, &mut ws.c_in);
        self.velocity_input(w, frames, &mut ws.v_in);
        self.follow.forward(&ws.f_in, &mut ws.f)?;
        self.lane.forward(&ws.c_in, &mut ws.c)?;
        self.velocity.forward(&ws.v_in, &mut ws.v)?;
        self.style.forward(w, &mut ws.s)?;
        let c = ws.c.output();
        Ok(ControlTargets {
            f_hat: self.norm.follow_out_scale * softplus(ws.f.output()[0]),
            l_hat: sigmoid(c[0] - c[1]),
            v_hat: self.norm.velocity_out_scale * softplus(ws.v.output()[0]),
            s_hat: self.norm.adb_min + self.norm.adb_range() * ws.s.output()[0],
        })
    }

    /// Mean posterior over a set of windows, averaging μ and σ.
    pub fn mean_posterior<'a, I>(&self, w: &[f64; EMBED_DIM], windows: I) -> Result<([f64; EMBED_DIM], [f64; EMBED_DIM])>
    where
        I: IntoIterator<Item = &'a [Frame]>,
    {
        let mut ws = Workspace::default();
        let (mut mu, mut sigma, mut n) = ([0.0; EMBED_DIM], [0.0; EMBED_DIM], 0usize);
        for frames in windows {
            let targets = self.forward_predictors(w, frames, &mut ws)?;
            let view = SubnetView { z_l: ws.c.penultimate(), z_v: ws.v.penultimate(), targets };
            let last = frames.last().expect("checked window");
            self.posterior_input(last.v_lv, &view, &mut ws.m_in);
            self.posterior.forward(&ws.m_in, &mut ws.m)?;
            let out = ws.m.output();
            for i in 0..EMBED_DIM {
                mu[i] += out[i];
                sigma[i] += out[EMBED_DIM + i].exp();
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::InsufficientHistory { need: 1, have: 0 });
        }
        Ok((mu.map(|m| m / n as f64), sigma.map(|s| s / n as f64)))
    }

    /// Whether every weight and embedding is finite.
    pub fn is_finite(&self) -> bool {
        self.nets().iter().all(|n| n.params().iter().all(|p| p.is_finite()))
            && self.embeddings.iter().all(|e| e.w.iter().chain(&e.mu).chain(&e.sigma).all(|v| v.is_finite()))
    }
}

pub(crate) struct SubnetView<'a> {
    pub z_l: &'a [f64],
    pub z_v: &'a [f64],
    pub targets: ControlTargets,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        let personas = vec![("a".to_string(), 20.0), ("b".to_string(), 40.0)];
        Model::init(&Config::default(), &personas, 7).unwrap()
    }

    fn frames(n: usize) -> Vec<Frame> {
        (0..n).map(|i| Frame { v_ev: 25.0, v_lv: 22.0, d_x: 60.0 - i as f64, d_y: 0.0 }).collect()
    }

    #[test]
    fn untrained_lane_head_is_undecided() {
        let m = model();
        let (l, z) = m.predict_lane(&[0.3, -1.0, 2.0], &frames(30)).unwrap();
        assert_eq!(l, 0.5);
        assert_eq!(z.len(), 64);
    }

    #[test]
    fn untrained_posterior_has_unit_sigma() {
        let m = model();
        let w = [0.1, 0.2, 0.3];
        let t = m.control_targets(&w, &frames(30)).unwrap();
        let (_, z_l) = m.predict_lane(&w, &frames(30)).unwrap();
        let (_, z_v) = m.predict_velocity(&w, &frames(30)).unwrap();
        let (_, sigma) = m.infer_posterior(22.0, &SubnetActivations { z_l, z_v }, &t).unwrap();
        assert_eq!(sigma, [1.0; 3]);
    }

    #[test]
    fn style_at_origin_is_bias() {
        let m = model();
        let b = m.style.params()[3];
        assert_eq!(m.predict_style(&[0.0; 3]), ADB_MIN + (ADB_MAX - ADB_MIN) * b);
    }

    #[test]
    fn heads_are_nonnegative_and_windows_checked() {
        let m = model();
        let w = [5.0, -5.0, 5.0];
        assert!(m.predict_follow(&w, &frames(30)).unwrap() >= 0.0);
        assert!(m.predict_velocity(&w, &frames(30)).unwrap().0 >= 0.0);
        assert!(m.predict_follow(&w, &frames(29)).is_err());
    }

    #[test]
    fn control_targets_agree_with_single_heads() {
        let m = model();
        let w = [0.4, 0.1, -0.7];
        let fr = frames(30);
        let t = m.control_targets(&w, &fr).unwrap();
        assert_eq!(t.f_hat, m.predict_follow(&w, &fr).unwrap());
        assert_eq!(t.l_hat, m.predict_lane(&w, &fr).unwrap().0);
        assert_eq!(t.v_hat, m.predict_velocity(&w, &fr).unwrap().0);
        assert!((t.s_hat - m.predict_style(&w)).abs() < 1e-12);
    }
}
