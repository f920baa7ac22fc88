//! Learning-rate schedules for the local step size.

use core::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("step {step} is past the end of the schedule ({total_steps} steps)")]
    OutOfRange { step: u64, total_steps: u64 },
    #[error("invalid schedule: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    CosineWithWarmup,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub peak: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    /// Final rate as a fraction of `peak`.
    pub floor_fraction: f64,
}

impl Schedule {
    pub fn constant(rate: f64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            peak: rate,
            warmup_steps: 0,
            total_steps: u64::MAX,
            floor_fraction: 1.0,
        }
    }

    pub fn cosine(peak: f64, warmup_steps: u64, total_steps: u64, floor_fraction: f64) -> Self {
        Self {
            kind: ScheduleKind::CosineWithWarmup,
            peak,
            warmup_steps,
            total_steps,
            floor_fraction,
        }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !(self.peak.is_finite() && self.peak > 0.0) {
            return Err(ScheduleError::Invalid("peak must be positive and finite"));
        }
        if !(0.0..=1.0).contains(&self.floor_fraction) {
            return Err(ScheduleError::Invalid("floor_fraction must lie in [0, 1]"));
        }
        if self.kind == ScheduleKind::CosineWithWarmup {
            if self.total_steps == 0 {
                return Err(ScheduleError::Invalid("total_steps must be positive"));
            }
            if self.warmup_steps > self.total_steps {
                return Err(ScheduleError::Invalid("warmup_steps exceeds total_steps"));
            }
        }
        Ok(())
    }

    /// Rate at `step`.
    pub fn rate(&self, step: u64) -> Result<f64, ScheduleError> {
        match self.kind {
            ScheduleKind::Constant => Ok(self.peak),
            ScheduleKind::CosineWithWarmup => cosine_schedule(step, self),
        }
    }
}

/// Linear warmup from 0 to `peak` over `warmup_steps`, then half-cosine decay
/// from `peak` down to `floor_fraction * peak` at `total_steps`.
pub fn cosine_schedule(step: u64, s: &Schedule) -> Result<f64, ScheduleError> {
    if step > s.total_steps {
        return Err(ScheduleError::OutOfRange {
            step,
            total_steps: s.total_steps,
        });
    }
    if step < s.warmup_steps {
        return Ok(s.peak * step as f64 / s.warmup_steps as f64);
    }
    let floor = s.floor_fraction * s.peak;
    let decay_len = s.total_steps - s.warmup_steps;
    if decay_len == 0 {
        return Ok(s.peak);
    }
    let progress = (step - s.warmup_steps) as f64 / decay_len as f64;
    Ok(floor + (s.peak - floor) * 0.5 * (1.0 + libm::cos(PI * progress)))
}
