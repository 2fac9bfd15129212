//! Fixed-step classical Runge-Kutta integration.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `t_k = t0 + k h`, `k = 0..=steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub tf: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, tf: f64, steps: usize) -> Result<Self> {
        let grid = Self { t0, tf, steps };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid on `[0, horizon]` with step as close to `h` as an integer step count allows.
    pub fn with_step(horizon: f64, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "h",
                reason: "step must be positive".into(),
            });
        }
        Self::new(0.0, horizon, ((horizon / h).round() as usize).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter {
                name: "steps",
                reason: "grid needs at least one step".into(),
            });
        }
        if !(self.tf > self.t0) || !self.t0.is_finite() || !self.tf.is_finite() {
            return Err(Error::InvalidParameter {
                name: "tf",
                reason: "final time must exceed initial time".into(),
            });
        }
        Ok(())
    }

    pub fn h(&self) -> f64 {
        (self.tf - self.t0) / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.tf
        } else {
            self.t0 + k as f64 * self.h()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Same interval with twice as many steps.
    pub fn refined(&self) -> Self {
        Self {
            steps: self.steps * 2,
            ..*self
        }
    }
}

/// One classical RK4 step.
pub fn rk4_step<F>(f: &F, t: f64, y: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64> + ?Sized,
{
    let finite = |k: &DVector<f64>, stage: usize| {
        if k.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { stage, t })
        }
    };
    let k1 = f(t, y);
    finite(&k1, 1)?;
    let k2 = f(t + 0.5 * h, &(y + &k1 * (0.5 * h)));
    finite(&k2, 2)?;
    let k3 = f(t + 0.5 * h, &(y + &k2 * (0.5 * h)));
    finite(&k3, 3)?;
    let k4 = f(t + h, &(y + &k3 * h));
    finite(&k4, 4)?;
    let next = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    finite(&next, 5)?;
    Ok(next)
}

/// Integrates over the grid and returns all `steps + 1` samples.
pub fn integrate<F>(f: F, y0: &DVector<f64>, grid: &TimeGrid) -> Result<Vec<(f64, DVector<f64>)>>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    grid.validate()?;
    let h = grid.h();
    let mut out = Vec::with_capacity(grid.steps + 1);
    let mut y = y0.clone();
    out.push((grid.t0, y.clone()));
    for k in 0..grid.steps {
        y = rk4_step(&f, grid.time(k), &y, h)?;
        out.push((grid.time(k + 1), y.clone()));
    }
    Ok(out)
}
