//! First-order optimization shared by the fitter and the trainer.
//!
//! [`AdamState`] is the plain moment-adaptive update used directly by the
//! network trainer. [`minimize`] wraps it with backtracking acceptance for
//! the per-sample fitter: a proposed step is taken only if the objective does
//! not increase, otherwise the step size is halved and the proposal retried,
//! so the trace of accepted objective values is non-increasing by
//! construction.

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam first/second moment buffers for a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState { m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    /// Advances the moments with `grad` and writes the update direction
    /// (bias-corrected `m / (sqrt(v) + eps)`, no learning rate applied) into
    /// `direction`.
    pub fn advance(&mut self, grad: &[f64], params: &AdamParams, direction: &mut [f64]) {
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - params.beta1.powi(self.t as i32);
        let bc2 = 1.0 - params.beta2.powi(self.t as i32);
        for i in 0..grad.len() {
            self.m[i] = params.beta1 * self.m[i] + (1.0 - params.beta1) * grad[i];
            self.v[i] = params.beta2 * self.v[i] + (1.0 - params.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            direction[i] = mh / (vh.sqrt() + params.eps);
        }
    }

    /// In-place Adam step: `x -= lr * direction`.
    pub fn step(&mut self, x: &mut [f64], grad: &[f64], params: &AdamParams) {
        let mut dir = vec![0.0; x.len()];
        self.advance(grad, params, &mut dir);
        for (xi, di) in x.iter_mut().zip(&dir) {
            *xi -= params.lr * di;
        }
    }
}

/// A differentiable objective over a flat parameter vector.
pub trait Objective {
    fn eval(&self, x: &[f64]) -> f64;
    /// Returns the value and writes the gradient into `grad`.
    fn eval_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone)]
pub struct MinimizeConfig {
    pub adam: AdamParams,
    pub max_iters: usize,
    /// Relative improvement below which an iteration counts as stalled.
    pub tol_rel: f64,
    /// Consecutive stalled iterations before stopping.
    pub patience: usize,
    /// Maximum step-size halvings within one iteration before giving up.
    pub max_backtracks: usize,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        MinimizeConfig {
            // Step-size scale for parameter-space fits; trainers pass their
            // own rate.
            adam: AdamParams { lr: 0.05, ..AdamParams::default() },
            max_iters: 500,
            tol_rel: 1e-12,
            patience: 30,
            max_backtracks: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    /// Objective at the start followed by the value after every accepted
    /// step; non-increasing.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub converged: bool,
}

/// Minimizes `obj` from `x0` with Adam plus backtracking acceptance.
///
/// `active` masks the coordinates being optimized; inactive coordinates are
/// never touched. A proposal whose objective exceeds the current value is
/// rejected and retried with half the step size; the step size recovers
/// slowly (x1.2, capped at the configured rate) after acceptances.
pub fn minimize(
    obj: &dyn Objective,
    x0: &[f64],
    active: &[bool],
    cfg: &MinimizeConfig,
) -> MinimizeResult {
    assert_eq!(x0.len(), active.len());
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; x.len()];
    let mut dir = vec![0.0; x.len()];
    let mut adam = AdamState::new(x.len());
    let mut lr = cfg.adam.lr;
    let mut f = obj.eval_grad(&x, &mut grad);
    let mut trace = vec![f];
    let mut accepted = 0usize;
    let mut stalled = 0usize;
    let mut converged = false;
    let mut iter = 0usize;
    let mut just_reset = false;
    while iter < cfg.max_iters {
        iter += 1;
        for (g, &a) in grad.iter_mut().zip(active) {
            if !a {
                *g = 0.0;
            }
        }
        adam.advance(&grad, &cfg.adam, &mut dir);
        let dir_norm: f64 = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        if !dir_norm.is_finite() {
            break;
        }
        if dir_norm * lr < 1e-16 * (1.0 + f.abs()) {
            // Gradient (or step size) has vanished: already optimal.
            converged = true;
            break;
        }
        let mut backtracks = 0usize;
        let mut accepted_this = false;
        while backtracks <= cfg.max_backtracks {
            let candidate: Vec<f64> =
                x.iter().zip(&dir).map(|(xi, di)| xi - lr * di).collect();
            let fc = obj.eval(&candidate);
            if fc.is_finite() && fc <= f {
                let rel_gain = (f - fc) / f.abs().max(1e-30);
                x = candidate;
                f = fc;
                trace.push(f);
                accepted += 1;
                accepted_this = true;
                // Slow recovery against halving: a clean descent streak
                // restores the rate, while the accept/reject oscillation near
                // an optimum keeps annealing it, which is what gives the
                // terminal accuracy Adam's constant-magnitude direction
                // otherwise lacks.
                lr = (lr * 1.05).min(cfg.adam.lr);
                if rel_gain < cfg.tol_rel {
                    stalled += 1;
                    lr *= 0.5;
                } else {
                    stalled = 0;
                }
                break;
            }
            lr *= 0.5;
            backtracks += 1;
        }
        if !accepted_this {
            // Stale momentum can point uphill at every step size. Retry once
            // from zeroed moments (plain gradient direction) before
            // concluding the point is optimal.
            if !just_reset {
                adam = AdamState::new(x.len());
                just_reset = true;
                continue;
            }
            converged = true;
            break;
        }
        just_reset = false;
        if stalled >= cfg.patience {
            converged = true;
            break;
        }
        f = obj.eval_grad(&x, &mut grad);
    }
    MinimizeResult { x, trace, iterations: iter, accepted_steps: accepted, converged }
}
