//! Ornstein–Uhlenbeck model and coupled coarse/fine Euler–Maruyama paths.
//!
//! The model is `dX = alpha (mu - X) dt + c dW`, where the diffusion
//! coefficient `c` is derived from the `sigma2` parameter according to a
//! [`DiffusionConvention`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Stream, StreamKey};

/// How the `sigma2` parameter maps onto the diffusion coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionConvention {
    /// Coefficient `sqrt(sigma2)`: the stationary law is `N(mu, sigma2 / (2 alpha))`.
    #[default]
    StationaryVariance,
    /// Coefficient `sigma2` taken literally: stationary variance `sigma2^2 / (2 alpha)`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    /// Mean-reversion rate, 1/time.
    pub alpha: f64,
    /// Long-run mean.
    pub mu: f64,
    pub sigma2: f64,
    #[serde(default)]
    pub convention: DiffusionConvention,
}

impl OuParams {
    pub fn new(alpha: f64, mu: f64, sigma2: f64) -> Result<Self> {
        Self::with_convention(alpha, mu, sigma2, DiffusionConvention::default())
    }

    pub fn with_convention(
        alpha: f64,
        mu: f64,
        sigma2: f64,
        convention: DiffusionConvention,
    ) -> Result<Self> {
        let params = Self {
            alpha,
            mu,
            sigma2,
            convention,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !self.sigma2.is_finite() || self.sigma2 < 0.0 {
            return Err(Error::InvalidParams(format!(
                "sigma2 must be non-negative, got {}",
                self.sigma2
            )));
        }
        if !self.mu.is_finite() {
            return Err(Error::InvalidParams(format!(
                "mu must be finite, got {}",
                self.mu
            )));
        }
        Ok(())
    }

    pub fn diffusion(&self) -> f64 {
        match self.convention {
            DiffusionConvention::StationaryVariance => self.sigma2.sqrt(),
            DiffusionConvention::Literal => self.sigma2,
        }
    }

    pub fn stationary_mean(&self) -> f64 {
        self.mu
    }

    /// Variance of the exact process's stationary law.
    pub fn stationary_variance(&self) -> f64 {
        let c = self.diffusion();
        c * c / (2.0 * self.alpha)
    }

    /// Exact `E[X_t | X_0 = x0]`.
    pub fn exact_mean(&self, x0: f64, t: f64) -> f64 {
        self.mu + (x0 - self.mu) * (-self.alpha * t).exp()
    }

    /// Exact `Var[X_t | X_0 = x0]`.
    pub fn exact_variance(&self, t: f64) -> f64 {
        self.stationary_variance() * (1.0 - (-2.0 * self.alpha * t).exp())
    }
}

/// Time step of one level: `step = base_step * refinement^-level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelGrid {
    pub level: usize,
    pub step: f64,
    pub refinement: usize,
}

impl LevelGrid {
    pub fn new(base_step: f64, refinement: usize, level: usize) -> Result<Self> {
        if !base_step.is_finite() || base_step <= 0.0 {
            return Err(Error::InvalidStep(base_step));
        }
        if refinement < 2 {
            return Err(Error::InvalidArgument(format!(
                "refinement factor must exceed 1, got {refinement}"
            )));
        }
        let step = base_step / (refinement as f64).powi(level as i32);
        Ok(Self {
            level,
            step,
            refinement,
        })
    }

    /// Grids for levels `0..=max_level`.
    pub fn hierarchy(base_step: f64, refinement: usize, max_level: usize) -> Result<Vec<Self>> {
        (0..=max_level)
            .map(|l| Self::new(base_step, refinement, l))
            .collect()
    }

    /// Step of the coarse partner of this level.
    pub fn coarse_step(&self) -> f64 {
        self.step * self.refinement as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSpan {
    pub start: f64,
    pub end: f64,
}

impl TimeSpan {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

/// Number of whole steps of size `step` in `span`.
pub fn whole_steps(span: f64, step: f64) -> Result<usize> {
    if !step.is_finite() || step <= 0.0 {
        return Err(Error::InvalidStep(step));
    }
    if !span.is_finite() || span < 0.0 {
        return Err(Error::GridAlignment { span, step });
    }
    let ratio = span / step;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::GridAlignment { span, step });
    }
    Ok(n as usize)
}

/// One Euler–Maruyama step of the OU model.
#[inline]
pub fn euler_maruyama_step(x: f64, params: &OuParams, h: f64, dw: f64) -> f64 {
    em_step(x, params.alpha, params.mu, params.diffusion(), h, dw)
}

#[inline(always)]
fn em_step(x: f64, alpha: f64, mu: f64, diffusion: f64, h: f64, dw: f64) -> f64 {
    x + alpha * (mu - x) * h + diffusion * dw
}

/// Propagates a single path in place, reading increments from a live stream.
#[derive(Debug, Clone, Copy)]
pub struct SingleStepper {
    alpha: f64,
    mu: f64,
    diffusion: f64,
    step: f64,
    sqrt_step: f64,
}

impl SingleStepper {
    pub fn new(params: &OuParams, step: f64) -> Result<Self> {
        params.validate()?;
        if !step.is_finite() || step <= 0.0 {
            return Err(Error::InvalidStep(step));
        }
        Ok(Self {
            alpha: params.alpha,
            mu: params.mu,
            diffusion: params.diffusion(),
            step,
            sqrt_step: step.sqrt(),
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    #[inline]
    pub fn advance(&self, x: &mut f64, stream: &mut Stream, steps: usize) {
        for _ in 0..steps {
            let dw = stream.increment(self.sqrt_step);
            *x = em_step(*x, self.alpha, self.mu, self.diffusion, self.step, dw);
        }
    }
}

/// Fine and coarse states of one positively coupled couple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairState {
    pub fine: f64,
    pub coarse: f64,
}

impl PairState {
    pub fn at(x0: f64) -> Self {
        Self {
            fine: x0,
            coarse: x0,
        }
    }
}

/// Advances a fine/coarse couple driven by one Brownian path. Each coarse
/// increment is the left-to-right sum of the `refinement` fine increments it
/// spans.
#[derive(Debug, Clone, Copy)]
pub struct CoupledStepper {
    fine: SingleStepper,
    coarse_step: f64,
    refinement: usize,
}

impl CoupledStepper {
    pub fn new(params: &OuParams, grid: &LevelGrid) -> Result<Self> {
        if grid.level == 0 {
            return Err(Error::InvalidArgument(
                "level 0 has no coarse partner".to_string(),
            ));
        }
        Ok(Self {
            fine: SingleStepper::new(params, grid.step)?,
            coarse_step: grid.coarse_step(),
            refinement: grid.refinement,
        })
    }

    pub fn coarse_step(&self) -> f64 {
        self.coarse_step
    }

    /// Advances by `coarse_steps` coarse steps (`coarse_steps * refinement` fine steps).
    #[inline]
    pub fn advance(&self, state: &mut PairState, stream: &mut Stream, coarse_steps: usize) {
        let f = &self.fine;
        for _ in 0..coarse_steps {
            let mut dw_coarse = 0.0;
            for _ in 0..self.refinement {
                let dw = stream.increment(f.sqrt_step);
                state.fine = em_step(state.fine, f.alpha, f.mu, f.diffusion, f.step, dw);
                dw_coarse += dw;
            }
            state.coarse = em_step(
                state.coarse,
                f.alpha,
                f.mu,
                f.diffusion,
                self.coarse_step,
                dw_coarse,
            );
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPath {
    /// States at `start + j * h_l`, `j = 0..=n_fine`.
    pub fine_states: Vec<f64>,
    /// States at `start + j * h_{l-1}`, `j = 0..=n_coarse`.
    pub coarse_states: Vec<f64>,
    pub key: StreamKey,
}

impl CoupledPath {
    pub fn terminal(&self) -> PairState {
        PairState {
            fine: *self
                .fine_states
                .last()
                .expect("paths hold the initial state"),
            coarse: *self
                .coarse_states
                .last()
                .expect("paths hold the initial state"),
        }
    }
}

pub fn propagate_coupled_pair(
    x0: f64,
    params: &OuParams,
    grid: &LevelGrid,
    span: TimeSpan,
    key: StreamKey,
) -> Result<CoupledPath> {
    let stepper = CoupledStepper::new(params, grid)?;
    let n_coarse = whole_steps(span.length(), stepper.coarse_step())?;
    let mut stream = key.stream();
    let f = &stepper.fine;

    let mut fine_states = Vec::with_capacity(n_coarse * grid.refinement + 1);
    let mut coarse_states = Vec::with_capacity(n_coarse + 1);
    let mut state = PairState::at(x0);
    fine_states.push(x0);
    coarse_states.push(x0);
    for _ in 0..n_coarse {
        let mut dw_coarse = 0.0;
        for _ in 0..grid.refinement {
            let dw = stream.increment(f.sqrt_step);
            state.fine = em_step(state.fine, f.alpha, f.mu, f.diffusion, f.step, dw);
            fine_states.push(state.fine);
            dw_coarse += dw;
        }
        state.coarse = em_step(
            state.coarse,
            f.alpha,
            f.mu,
            f.diffusion,
            stepper.coarse_step,
            dw_coarse,
        );
        coarse_states.push(state.coarse);
    }
    Ok(CoupledPath {
        fine_states,
        coarse_states,
        key,
    })
}

/// Uncoupled Euler–Maruyama trajectory at the grid's own step, including the
/// initial state.
pub fn propagate_single(
    x0: f64,
    params: &OuParams,
    grid: &LevelGrid,
    span: TimeSpan,
    key: StreamKey,
) -> Result<Vec<f64>> {
    let stepper = SingleStepper::new(params, grid.step)?;
    let n = whole_steps(span.length(), grid.step)?;
    let mut stream = key.stream();
    let mut x = x0;
    let mut out = Vec::with_capacity(n + 1);
    out.push(x);
    for _ in 0..n {
        stepper.advance(&mut x, &mut stream, 1);
        out.push(x);
    }
    Ok(out)
}
