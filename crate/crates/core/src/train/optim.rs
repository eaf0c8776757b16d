use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Learning rate as a function of training progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// `rates[k]` applies from `breakpoints[k - 1]` (a fraction of the
    /// total iteration count) onwards; `rates[0]` before the first.
    Piecewise {
        rates: Vec<f64>,
        breakpoints: Vec<f64>,
    },
}

impl Schedule {
    /// Warm-up then step decay: 0.01, 0.1, 0.01, 0.001 with breakpoints at
    /// 400, 32000 and 48000 of 64000 iterations, scaled to the run length.
    pub fn warmup_step_decay() -> Self {
        Schedule::Piecewise {
            rates: vec![0.01, 0.1, 0.01, 0.001],
            breakpoints: vec![400.0 / 64000.0, 0.5, 0.75],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Schedule::Piecewise { rates, breakpoints } = self {
            if rates.len() != breakpoints.len() + 1 {
                return Err(Error::Config(
                    "piecewise schedule needs one more rate than breakpoints".into(),
                ));
            }
            if breakpoints.windows(2).any(|w| w[0] > w[1])
                || breakpoints.iter().any(|b| !(0.0..=1.0).contains(b))
            {
                return Err(Error::Config(
                    "schedule breakpoints must be increasing fractions".into(),
                ));
            }
            if rates.iter().any(|r| !(*r > 0.0)) {
                return Err(Error::Config("schedule rates must be positive".into()));
            }
        }
        Ok(())
    }

    /// Rate at iteration `step` of `total`, or `base` for a constant schedule.
    pub fn rate(&self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Piecewise { rates, breakpoints } => {
                let progress = step as f64 / total.max(1) as f64;
                let k = breakpoints.iter().take_while(|&&b| progress >= b).count();
                rates[k]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
        #[serde(default = "constant_schedule")]
        schedule: Schedule,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_momentum() -> f64 {
    0.9
}
fn constant_schedule() -> Schedule {
    Schedule::Constant
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: 1e-2,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimizerConfig::Sgd {
            lr,
            momentum,
            schedule: Schedule::Constant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OptimizerConfig::Sgd {
                lr,
                momentum,
                schedule,
            } => {
                if !(*lr > 0.0) || !(0.0..1.0).contains(momentum) {
                    return Err(Error::Config(
                        "SGD needs lr > 0 and momentum in [0, 1)".into(),
                    ));
                }
                schedule.validate()
            }
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                if !(*lr > 0.0)
                    || !(0.0..1.0).contains(beta1)
                    || !(0.0..1.0).contains(beta2)
                    || !(*eps > 0.0)
                {
                    return Err(Error::Config(
                        "Adam needs lr > 0, betas in [0, 1), eps > 0".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Per-parameter optimizer memory.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    config: OptimizerConfig,
    step: usize,
    total_steps: usize,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, len: usize, total_steps: usize) -> Result<Self> {
        config.validate()?;
        let second = match config {
            OptimizerConfig::Adam { .. } => vec![0.0; len],
            OptimizerConfig::Sgd { .. } => Vec::new(),
        };
        Ok(Self {
            config,
            step: 0,
            total_steps,
            first: vec![0.0; len],
            second,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Current learning rate.
    pub fn lr(&self) -> f64 {
        match &self.config {
            OptimizerConfig::Sgd { lr, schedule, .. } => {
                schedule.rate(*lr, self.step, self.total_steps)
            }
            OptimizerConfig::Adam { lr, .. } => *lr,
        }
    }
}

/// One update of `params` from `grads`. SGD with momentum:
/// `v <- mu v - lr g`, `theta <- theta + v`. Adam: bias-corrected moment
/// estimates.
pub fn optimizer_step(state: &mut OptimizerState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    check_len("optimizer parameters", state.first.len(), params.len())?;
    check_len("optimizer gradient", params.len(), grads.len())?;
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient entry {i} is {} at step {}",
            grads[i], state.step
        )));
    }
    let lr = state.lr();
    state.step += 1;
    match state.config {
        OptimizerConfig::Sgd { momentum, .. } => {
            for ((p, v), g) in params.iter_mut().zip(&mut state.first).zip(grads) {
                *v = momentum * *v - lr * g;
                *p += *v;
            }
        }
        OptimizerConfig::Adam {
            beta1, beta2, eps, ..
        } => {
            let t = state.step as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for (((p, m), v), g) in params
                .iter_mut()
                .zip(&mut state.first)
                .zip(&mut state.second)
                .zip(grads)
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
    Ok(())
}
