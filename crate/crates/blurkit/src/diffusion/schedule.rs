//! Variance-preserving forward process: noise schedule and q-sampling.

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-step variances β_t and the derived cumulative ᾱ_t, t = 1..=T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    t_steps: usize,
    beta_start: f64,
    beta_end: f64,
    #[serde(skip)]
    betas: Vec<f64>,
    #[serde(skip)]
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear β ramp (the toy default: 1e-4 → 2e-2 over 1000 steps).
    pub fn linear(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "betas must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let mut betas = Vec::with_capacity(t_steps);
        for i in 0..t_steps {
            let frac = if t_steps == 1 { 0.0 } else { i as f64 / (t_steps - 1) as f64 };
            betas.push(beta_start + frac * (beta_end - beta_start));
        }
        let mut alpha_bars = Vec::with_capacity(t_steps);
        let mut prod = 1.0;
        for &b in &betas {
            prod *= 1.0 - b;
            if !(0.0 < prod && prod < 1.0) {
                return Err(Error::Config("cumulative alpha left (0, 1)".into()));
            }
            alpha_bars.push(prod);
        }
        Ok(Self { t_steps, beta_start, beta_end, betas, alpha_bars })
    }

    /// Rebuilds the derived tables after deserialization.
    pub fn rebuild(&self) -> Result<Self> {
        Self::linear(self.t_steps, self.beta_start, self.beta_end)
    }

    pub fn t_steps(&self) -> usize {
        self.t_steps
    }

    pub fn beta(&self, t: usize) -> f64 {
        assert!((1..=self.t_steps).contains(&t), "t = {t} outside schedule");
        self.betas[t - 1]
    }

    /// Cumulative ᾱ_t; ᾱ_0 = 1 by convention.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert!(t <= self.t_steps, "t = {t} outside schedule");
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(1000, 1e-4, 2e-2).expect("default schedule is valid")
    }
}

/// Forward noising: √ᾱ_t · x₀ + √(1 − ᾱ_t) · ε.
pub fn q_sample(
    clean: &Array4<f64>,
    t: usize,
    noise: &Array4<f64>,
    schedule: &NoiseSchedule,
) -> Result<Array4<f64>> {
    if clean.dim() != noise.dim() {
        return Err(Error::Shape(format!(
            "clean {:?} vs noise {:?}",
            clean.dim(),
            noise.dim()
        )));
    }
    if t == 0 || t > schedule.t_steps() {
        return Err(Error::Config(format!(
            "t = {t} outside schedule of {} steps",
            schedule.t_steps()
        )));
    }
    let ab = schedule.alpha_bar(t);
    let a = ab.sqrt();
    let b = (1.0 - ab).sqrt();
    Ok(clean * a + noise * b)
}
