use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

/// The six lead-vehicle speeds for an ego target speed `v_e` and posted speed `s`.
pub fn lead_speed_set(ego_target_speed: f64, posted_speed: f64) -> [f64; 6] {
    let (ve, s) = (ego_target_speed, posted_speed);
    [0.85 * ve, 0.9 * ve, 0.97 * ve, 0.9 * s, s, 1.1 * s]
}

/// Lead speeds drawn without replacement from the six-element set.
pub fn spawn_lead_schedule(ego_target_speed: f64, posted_speed: f64, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled_schedule(ego_target_speed, posted_speed, &mut rng)
}

pub(crate) fn shuffled_schedule<R: Rng>(
    ego_target_speed: f64,
    posted_speed: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(ego_target_speed > 0.0) || !(posted_speed > 0.0) {
        return Err(invalid(format!(
            "speeds must be positive (ego target {ego_target_speed}, posted {posted_speed})"
        )));
    }
    let mut speeds = lead_speed_set(ego_target_speed, posted_speed).to_vec();
    speeds.shuffle(rng);
    Ok(speeds)
}
