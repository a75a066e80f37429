use super::model::{Model, EMBED_DIM};
use crate::controllers::ControlTargets;
use crate::error::Result;
use crate::rollout::Planner;
use crate::sim::{Frame, WorldState};

/// Drives with the setpoints the network predicts for a fixed embedding.
#[derive(Debug, Clone)]
pub struct NetworkPolicy<'a> {
    model: &'a Model,
    w: [f64; EMBED_DIM],
}

impl<'a> NetworkPolicy<'a> {
    pub fn new(model: &'a Model, w: [f64; EMBED_DIM]) -> Self {
        Self { model, w }
    }
}

impl Planner for NetworkPolicy<'_> {
    fn targets(&mut self, _state: &WorldState, frames: &[Frame], _lane_changing: bool) -> Result<ControlTargets> {
        self.model.control_targets(&self.w, frames)
    }
}
