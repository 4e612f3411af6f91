use serde::{Deserialize, Serialize};

use super::SamplerConfig;
use crate::error::{FusionError, Result};

/// Sigma law used to discretize the timestep range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `sigma = t / T` on an integer grid linearly spaced from `T` to 0.
    #[default]
    LinearSigma,
}

/// Discrete sampling grid shared by every segment of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub timesteps: Vec<u32>,
    pub sigmas: Vec<f64>,
    /// Grid index standing in for the intermediate denoising timestep.
    pub den_index: usize,
    pub t_max: u32,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn last_index(&self) -> usize {
        self.sigmas.len() - 1
    }

    /// Timestep the intermediate denoising target was snapped to.
    pub fn den_timestep(&self) -> u32 {
        self.timesteps[self.den_index]
    }
}

pub fn build_schedule(config: &SamplerConfig) -> Result<Schedule> {
    config.validate()?;
    let ScheduleKind::LinearSigma = config.schedule_kind;

    let t_max = config.t_max;
    let steps = config.num_steps;
    let timesteps: Vec<u32> = (0..=steps)
        .map(|i| {
            let t = f64::from(t_max) * f64::from(steps - i) / f64::from(steps);
            t.round() as u32
        })
        .collect();
    if timesteps.windows(2).any(|w| w[0] <= w[1]) {
        return Err(FusionError::InvalidConfig(format!(
            "{steps} steps do not fit in {t_max} timesteps"
        )));
    }
    let sigmas = timesteps
        .iter()
        .map(|&t| f64::from(t) / f64::from(t_max))
        .collect();

    // nearest grid point, earlier index on ties, never an endpoint
    let den_index = timesteps
        .iter()
        .enumerate()
        .min_by_key(|(_, &t)| t.abs_diff(config.t_den))
        .map(|(i, _)| i)
        .unwrap_or(1)
        .clamp(1, steps as usize - 1);

    Ok(Schedule {
        timesteps,
        sigmas,
        den_index,
        t_max,
    })
}
