//! Step-size search for `(eps, delta)` minimising the true training risk
//! `R(f + eps g + delta h)` over a nonnegative box.
//!
//! Three modes are supported: fixed constants, an axis-uniform lattice, and
//! a budgeted adaptive random search (anchors, uniform exploration, then
//! Gaussian refinement around the incumbent with the radius halved after
//! every non-improving proposal). Candidates are evaluated in generation
//! order and only a strictly lower risk replaces the incumbent, so the first
//! best candidate wins ties.

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    Fixed,
    Grid,
    AdaptiveRandom,
}

impl StepMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(StepMode::Fixed),
            "grid" => Ok(StepMode::Grid),
            "adaptive" | "adaptive_random" | "random" => Ok(StepMode::AdaptiveRandom),
            other => Err(Error::Config(format!("unknown step mode `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StepMode::Fixed => "fixed",
            StepMode::Grid => "grid",
            StepMode::AdaptiveRandom => "adaptive",
        }
    }
}

/// Which step sizes are free; the others are pinned to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axes {
    Both,
    EpsOnly,
    DeltaOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub mode: StepMode,
    /// Fixed-mode constants.
    pub eps: f64,
    pub delta: f64,
    pub eps_max: f64,
    pub delta_max: f64,
    /// Lattice points per axis in grid mode (including both ends).
    pub grid_points: usize,
    pub explore: usize,
    pub refine: usize,
    pub seed: u64,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            mode: StepMode::AdaptiveRandom,
            eps: 0.1,
            delta: 0.1,
            eps_max: 1.0,
            delta_max: 1.0,
            grid_points: 21,
            explore: 10,
            refine: 20,
            seed: 0,
        }
    }
}

impl StepConfig {
    pub fn fixed(eps: f64, delta: f64) -> Self {
        StepConfig {
            mode: StepMode::Fixed,
            eps,
            delta,
            ..StepConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_max >= 0.0 && self.delta_max >= 0.0) {
            return Err(Error::Config("step bounds must be nonnegative".into()));
        }
        if self.eps < 0.0 || self.delta < 0.0 {
            return Err(Error::Config("fixed steps must be nonnegative".into()));
        }
        match self.mode {
            StepMode::Grid if self.grid_points < 2 => {
                Err(Error::Config("grid needs at least 2 points per axis".into()))
            }
            StepMode::AdaptiveRandom if self.explore == 0 || self.refine == 0 => Err(
                Error::Config("adaptive search needs explore >= 1 and refine >= 1".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Number of candidates evaluated in the configured mode.
    pub fn budget(&self, axes: Axes) -> usize {
        match self.mode {
            StepMode::Fixed => 1,
            StepMode::Grid => match axes {
                Axes::Both => self.grid_points * self.grid_points,
                _ => self.grid_points,
            },
            StepMode::AdaptiveRandom => 2 + self.explore + self.refine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepResult<T> {
    pub eps: T,
    pub delta: T,
    pub risk_at_optimum: T,
    pub evaluations: usize,
}

struct Incumbent<T> {
    best: Option<StepResult<T>>,
    evaluations: usize,
}

impl<T: Scalar> Incumbent<T> {
    fn offer<F: FnMut(T, T) -> T>(&mut self, risk_eval: &mut F, eps: T, delta: T) -> bool {
        let risk = risk_eval(eps, delta);
        self.evaluations += 1;
        if !risk.is_finite() {
            debug!("discarding step candidate ({eps}, {delta}): risk {risk}");
            return false;
        }
        let improved = self.best.as_ref().is_none_or(|b| risk < b.risk_at_optimum);
        if improved {
            self.best = Some(StepResult {
                eps,
                delta,
                risk_at_optimum: risk,
                evaluations: 0,
            });
        }
        improved
    }

    fn finish(self) -> Result<StepResult<T>> {
        let evaluations = self.evaluations;
        self.best
            .map(|b| StepResult { evaluations, ..b })
            .ok_or_else(|| Error::Numeric("risk is non-finite at every step candidate".into()))
    }
}

fn pin<T: Scalar>(axes: Axes, eps: T, delta: T) -> (T, T) {
    match axes {
        Axes::Both => (eps, delta),
        Axes::EpsOnly => (eps, T::zero()),
        Axes::DeltaOnly => (T::zero(), delta),
    }
}

pub fn search_steps<T, F>(mut risk_eval: F, config: &StepConfig, axes: Axes) -> Result<StepResult<T>>
where
    T: Scalar,
    F: FnMut(T, T) -> T,
{
    config.validate()?;
    let mut inc = Incumbent {
        best: None,
        evaluations: 0,
    };
    let eps_max = config.eps_max;
    let delta_max = config.delta_max;
    match config.mode {
        StepMode::Fixed => {
            let (e, d) = pin(axes, T::c(config.eps), T::c(config.delta));
            let risk = risk_eval(e, d);
            return Ok(StepResult {
                eps: e,
                delta: d,
                risk_at_optimum: risk,
                evaluations: 1,
            });
        }
        StepMode::Grid => {
            let k = config.grid_points;
            let denom = (k - 1) as f64;
            let eps_axis: Vec<f64> = match axes {
                Axes::DeltaOnly => vec![0.0],
                _ => (0..k).map(|i| i as f64 * eps_max / denom).collect(),
            };
            let delta_axis: Vec<f64> = match axes {
                Axes::EpsOnly => vec![0.0],
                _ => (0..k).map(|j| j as f64 * delta_max / denom).collect(),
            };
            for &e in &eps_axis {
                for &d in &delta_axis {
                    inc.offer(&mut risk_eval, T::c(e), T::c(d));
                }
            }
        }
        StepMode::AdaptiveRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let clamp = |v: f64, hi: f64| v.clamp(0.0, hi);
            let anchors = [(0.0, 0.0), (clamp(0.1, eps_max), clamp(0.1, delta_max))];
            for (e, d) in anchors {
                let (e, d) = pin(axes, T::c(e), T::c(d));
                inc.offer(&mut risk_eval, e, d);
            }
            for _ in 0..config.explore {
                let e = if eps_max > 0.0 { rng.random_range(0.0..=eps_max) } else { 0.0 };
                let d = if delta_max > 0.0 { rng.random_range(0.0..=delta_max) } else { 0.0 };
                let (e, d) = pin(axes, T::c(e), T::c(d));
                inc.offer(&mut risk_eval, e, d);
            }
            let mut sigma = 0.25;
            let unit = Normal::new(0.0, 1.0).expect("valid normal");
            for _ in 0..config.refine {
                let (ce, cd) = inc
                    .best
                    .as_ref()
                    .map_or((0.0, 0.0), |b| (b.eps.to_f64_lossy(), b.delta.to_f64_lossy()));
                let e = clamp(ce + sigma * eps_max * unit.sample(&mut rng), eps_max);
                let d = clamp(cd + sigma * delta_max * unit.sample(&mut rng), delta_max);
                let (e, d) = pin(axes, T::c(e), T::c(d));
                if !inc.offer(&mut risk_eval, e, d) {
                    sigma *= 0.5;
                }
            }
        }
    }
    inc.finish()
}
