//! Versioned JSON checkpoints with shape-annotated weights.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, Normalization, StyleEmbedding};
use super::nn::Mlp;
use crate::config::Config;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layer {
    /// `[out][in]`.
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Subnet {
    sizes: Vec<usize>,
    layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Subnets {
    follow: Subnet,
    lane: Subnet,
    velocity: Subnet,
    style: Subnet,
    posterior: Subnet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config_hash: String,
    config: Config,
    window: usize,
    normalization: Normalization,
    subnets: Subnets,
    embeddings: Vec<StyleEmbedding>,
}

impl From<&Mlp> for Subnet {
    fn from(net: &Mlp) -> Self {
        let mut params = net.params();
        let layers = net
            .sizes()
            .windows(2)
            .map(|p| {
                let (w, rest) = params.split_at(p[0] * p[1]);
                let (b, rest) = rest.split_at(p[1]);
                params = rest;
                Layer { weight: w.chunks(p[0]).map(<[f64]>::to_vec).collect(), bias: b.to_vec() }
            })
            .collect();
        Self { sizes: net.sizes().to_vec(), layers }
    }
}

impl Subnet {
    fn into_mlp(self, name: &str) -> Result<Mlp> {
        let bad = |what: String| Error::Parse(format!("checkpoint subnet {name}: {what}"));
        if self.layers.len() + 1 != self.sizes.len() {
            return Err(bad(format!("{} layers for sizes {:?}", self.layers.len(), self.sizes)));
        }
        let mut params = Vec::new();
        for (l, layer) in self.layers.into_iter().enumerate() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            if layer.weight.len() != fan_out || layer.weight.iter().any(|r| r.len() != fan_in) || layer.bias.len() != fan_out {
                return Err(bad(format!("layer {l} does not match {fan_in}→{fan_out}")));
            }
            params.extend(layer.weight.into_iter().flatten());
            params.extend(layer.bias);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(bad("non-finite weight".into()));
        }
        Mlp::from_parts(self.sizes, params).map_err(|e| bad(e.to_string()))
    }
}

/// Canonical checkpoint text for a model trained under `cfg`.
pub fn to_json(model: &Model, cfg: &Config) -> Result<String> {
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        window: model.window,
        normalization: model.norm.clone(),
        subnets: Subnets {
            follow: (&model.follow).into(),
            lane: (&model.lane).into(),
            velocity: (&model.velocity).into(),
            style: (&model.style).into(),
            posterior: (&model.posterior).into(),
        },
        embeddings: model.embeddings.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    Ok(text)
}

pub fn from_json(text: &str) -> Result<(Model, Config)> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {}", file.version)));
    }
    let s = file.subnets;
    let model = Model {
        window: file.window,
        norm: file.normalization,
        follow: s.follow.into_mlp("follow")?,
        lane: s.lane.into_mlp("lane")?,
        velocity: s.velocity.into_mlp("velocity")?,
        style: s.style.into_mlp("style")?,
        posterior: s.posterior.into_mlp("posterior")?,
        embeddings: file.embeddings,
    };
    Ok((model, file.config))
}

pub fn save(model: &Model, cfg: &Config, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(model, cfg)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Model, Config)> {
    from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = Config::default();
        let personas = vec![("a".to_string(), 12.5), ("b".to_string(), 51.0)];
        let model = Model::init(&cfg, &personas, 11).unwrap();
        let text = to_json(&model, &cfg).unwrap();
        let (back, back_cfg) = from_json(&text).unwrap();
        assert_eq!(back, model);
        assert_eq!(back_cfg, cfg);
        assert_eq!(to_json(&back, &back_cfg).unwrap(), text);
    }

    #[test]
    fn mismatched_shape_is_a_parse_error() {
        let cfg = Config::default();
        let model = Model::init(&cfg, &[("a".into(), 20.0), ("b".into(), 30.0)], 1).unwrap();
        let text = to_json(&model, &cfg).unwrap().replacen("\"sizes\": [\n        33", "\"sizes\": [\n        34", 1);
        assert!(matches!(from_json(&text), Err(Error::Parse(_))));
    }
}
