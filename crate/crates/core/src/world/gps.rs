//! GPS noise simulation: a Gaussian core plus Markov urban-canyon episodes
//! with a slowly varying bias, calibrated so the simulated error tail is
//! heavy (P(error >= 10 m) around 0.4 with the default model).

use crate::error::{Error, Result};
use crate::geo::GeoPose;
use crate::rng::rng_for;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Mean canyon episode length in segments (one segment = one second).
const MEAN_EPISODE_SEGMENTS: f64 = 15.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpsNoiseModel {
    /// Sigma of the always-on isotropic Gaussian noise, meters.
    pub sigma_base: f64,
    /// Stationary probability that a ride segment is in canyon state.
    pub canyon_prob: f64,
    /// Scale of the slowly varying canyon bias, meters.
    pub canyon_bias_scale: f64,
    /// Extra isotropic scatter while in canyon state, meters.
    pub canyon_sigma: f64,
    /// Sigma of the noise on the reported accuracy, meters.
    pub reported_accuracy_noise: f64,
    /// Sigma of the heading noise, radians. The error regime of real GPS
    /// headings is not pinned down anywhere, so this is a free parameter.
    pub heading_sigma: f64,
}

impl Default for GpsNoiseModel {
    fn default() -> Self {
        // Calibrated so P(true_error >= 10 m) lands near 0.4 over rides.
        Self {
            sigma_base: 6.0,
            canyon_prob: 0.3,
            canyon_bias_scale: 12.0,
            canyon_sigma: 8.0,
            reported_accuracy_noise: 1.0,
            heading_sigma: 6f64.to_radians(),
        }
    }
}

impl GpsNoiseModel {
    /// Identity model: fixes equal the true pose.
    pub fn zero() -> Self {
        Self {
            sigma_base: 0.0,
            canyon_prob: 0.0,
            canyon_bias_scale: 0.0,
            canyon_sigma: 0.0,
            reported_accuracy_noise: 0.0,
            heading_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scales = [
            self.sigma_base,
            self.canyon_bias_scale,
            self.canyon_sigma,
            self.reported_accuracy_noise,
            self.heading_sigma,
        ];
        if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidWorld("GPS noise scales must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.canyon_prob) {
            return Err(Error::InvalidWorld("canyon_prob must be in [0,1]".into()));
        }
        Ok(())
    }
}

/// Canyon episode state carried along a ride.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanyonState {
    pub active: bool,
    pub bias: (f64, f64),
}

impl CanyonState {
    pub fn inactive() -> Self {
        Self {
            active: false,
            bias: (0.0, 0.0),
        }
    }

    /// Draw the stationary initial state for a ride.
    pub fn initial(model: &GpsNoiseModel, rng: &mut impl Rng) -> Self {
        let mut state = Self::inactive();
        if rng.random::<f64>() < model.canyon_prob {
            state.active = true;
            state.bias = draw_bias(model.canyon_bias_scale, rng);
        }
        state
    }
}

fn draw_bias(scale: f64, rng: &mut impl Rng) -> (f64, f64) {
    let n = StandardNormal;
    let bx: f64 = n.sample(rng);
    let by: f64 = n.sample(rng);
    (scale * bx, scale * by)
}

/// Advance the canyon Markov chain by one segment (one second). Enter/exit
/// probabilities are chosen so the stationary occupancy is `canyon_prob`
/// and the mean episode lasts ~15 segments. The bias random-walks slowly
/// while an episode is active.
pub fn advance_canyon(
    state: &CanyonState,
    model: &GpsNoiseModel,
    rng: &mut impl Rng,
) -> CanyonState {
    let p_exit = 1.0 / MEAN_EPISODE_SEGMENTS;
    let p_enter = if model.canyon_prob >= 1.0 {
        1.0
    } else {
        (model.canyon_prob / (1.0 - model.canyon_prob) * p_exit).min(1.0)
    };
    let mut next = *state;
    if state.active {
        if rng.random::<f64>() < p_exit {
            next.active = false;
            next.bias = (0.0, 0.0);
        } else {
            let (wx, wy) = draw_bias(0.15 * model.canyon_bias_scale, rng);
            next.bias = (state.bias.0 + wx, state.bias.1 + wy);
        }
    } else if rng.random::<f64>() < p_enter {
        next.active = true;
        next.bias = draw_bias(model.canyon_bias_scale, rng);
    }
    next
}

/// A noisy GPS fix with the actual error recorded for evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoisyFix {
    /// Noisy position; heading comes from the noisy heading.
    pub position: GeoPose,
    /// Accuracy the receiver claims, meters (> 0). Canyon bias is largely
    /// invisible to the receiver, so it is underreported on purpose.
    pub reported_accuracy: f64,
    /// True position error, meters. Evaluation only.
    pub true_error: f64,
}

/// Corrupt one pose. Pure given the rng; the canyon state is advanced
/// separately by [`advance_canyon`].
pub fn gps_noise(
    pose: &GeoPose,
    model: &GpsNoiseModel,
    state: &CanyonState,
    rng: &mut impl Rng,
) -> NoisyFix {
    let n = StandardNormal;
    let gauss = |sigma: f64, rng: &mut dyn rand::RngCore| -> f64 {
        if sigma > 0.0 {
            let z: f64 = n.sample(rng);
            sigma * z
        } else {
            0.0
        }
    };
    let mut dx = gauss(model.sigma_base, rng);
    let mut dy = gauss(model.sigma_base, rng);
    if state.active {
        dx += state.bias.0 + gauss(model.canyon_sigma, rng);
        dy += state.bias.1 + gauss(model.canyon_sigma, rng);
    }
    let heading = pose.heading + gauss(model.heading_sigma, rng);
    let true_error = dx.hypot(dy);
    let claimed = model.sigma_base + if state.active { 0.5 * model.canyon_sigma } else { 0.0 };
    let reported_accuracy = (claimed + gauss(model.reported_accuracy_noise, rng)).max(0.5);
    NoisyFix {
        position: GeoPose::new(pose.x + dx, pose.y + dy, heading),
        reported_accuracy,
        true_error,
    }
}

/// Per-ride GPS sequencer: owns the rng and canyon chain, advancing one
/// segment per second of ride time.
pub struct GpsSimulator {
    model: GpsNoiseModel,
    state: CanyonState,
    rng: ChaCha12Rng,
    next_segment_t: f64,
}

impl GpsSimulator {
    pub fn new(model: GpsNoiseModel, seed: u64) -> Result<Self> {
        model.validate()?;
        let mut rng = rng_for(seed, "gps");
        let state = CanyonState::initial(&model, &mut rng);
        Ok(Self {
            model,
            state,
            rng,
            next_segment_t: 1.0,
        })
    }

    /// Fix for the pose at ride time `t` (seconds, non-decreasing).
    pub fn fix_at(&mut self, pose: &GeoPose, t: f64) -> NoisyFix {
        while t >= self.next_segment_t {
            self.state = advance_canyon(&self.state, &self.model, &mut self.rng);
            self.next_segment_t += 1.0;
        }
        gps_noise(pose, &self.model, &self.state, &mut self.rng)
    }

    pub fn state(&self) -> &CanyonState {
        &self.state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn zero_model_is_identity() {
        let model = GpsNoiseModel::zero();
        let pose = GeoPose::new(10.0, 20.0, 1.0);
        let mut rng = rng_for(1, "t");
        let fix = gps_noise(&pose, &model, &CanyonState::inactive(), &mut rng);
        assert_eq!(fix.position, pose);
        assert_eq!(fix.true_error, 0.0);
        assert!(fix.reported_accuracy > 0.0);
    }

    #[test]
    fn mean_error_matches_rayleigh_for_plain_gaussian() {
        // For 2-D isotropic Gaussian noise the error magnitude is Rayleigh
        // with mean sigma * sqrt(pi/2).
        let model = GpsNoiseModel {
            sigma_base: 5.0,
            canyon_prob: 0.0,
            canyon_bias_scale: 0.0,
            canyon_sigma: 0.0,
            reported_accuracy_noise: 0.0,
            heading_sigma: 0.0,
        };
        let pose = GeoPose::new(0.0, 0.0, 0.0);
        let mut rng = rng_for(2, "rayleigh");
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|_| gps_noise(&pose, &model, &CanyonState::inactive(), &mut rng).true_error)
            .sum::<f64>()
            / n as f64;
        let expected = 5.0 * (std::f64::consts::PI / 2.0).sqrt();
        assert!(
            (mean - expected).abs() / expected < 0.05,
            "mean {mean}, expected {expected}"
        );
    }

    #[test]
    fn default_model_has_heavy_tail() {
        // P(true_error >= 10 m) must land in [0.3, 0.5] over simulated rides.
        let model = GpsNoiseModel::default();
        let pose = GeoPose::new(0.0, 0.0, 0.0);
        let mut over_10 = 0usize;
        let mut total = 0usize;
        for ride in 0..200 {
            let mut sim = GpsSimulator::new(model.clone(), ride).unwrap();
            for k in 0..300 {
                let t = k as f64 * 0.1;
                let fix = sim.fix_at(&pose, t);
                total += 1;
                if fix.true_error >= 10.0 {
                    over_10 += 1;
                }
            }
        }
        let frac = over_10 as f64 / total as f64;
        assert!((0.3..=0.5).contains(&frac), "P(err >= 10) = {frac}");
    }

    #[test]
    fn canyon_occupancy_matches_stationary_prob() {
        let model = GpsNoiseModel::default();
        let mut active = 0usize;
        let mut total = 0usize;
        for ride in 0..400 {
            let mut rng = rng_for(ride, "occ");
            let mut state = CanyonState::initial(&model, &mut rng);
            for _ in 0..120 {
                total += 1;
                if state.active {
                    active += 1;
                }
                state = advance_canyon(&state, &model, &mut rng);
            }
        }
        let frac = active as f64 / total as f64;
        assert!(
            (frac - model.canyon_prob).abs() < 0.06,
            "occupancy {frac} vs {}",
            model.canyon_prob
        );
    }

    #[test]
    fn validate_rejects_bad_models() {
        let mut m = GpsNoiseModel::default();
        m.canyon_prob = 1.5;
        assert!(m.validate().is_err());
        let mut m = GpsNoiseModel::default();
        m.sigma_base = -1.0;
        assert!(m.validate().is_err());
    }
}
