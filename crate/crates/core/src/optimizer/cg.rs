use nalgebra::DVector;

use crate::error::{NpgaError, Result};

/// Nonlinear conjugate-gradient settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CgOptions {
    pub max_iters: usize,
    /// Stop once the gradient's Euclidean norm is at or below this.
    pub gradient_tolerance: f64,
    /// First trial step, in units of the initial gradient's norm.
    pub initial_step: f64,
    /// Upper bound on the backtracking step reduction, in (0, 1).
    pub shrink: f64,
    /// Armijo constant, in (0, 1).
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
    /// Force a steepest-descent restart after this many directions.
    pub restart_period: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            max_iters: 100,
            gradient_tolerance: 1e-10,
            initial_step: 1.0,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 40,
            restart_period: 20,
        }
    }
}

impl CgOptions {
    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.shrink) || !unit(self.sufficient_decrease) {
            return Err(NpgaError::InvalidSpec(
                "CG shrink factor and sufficient-decrease constant must lie in (0, 1)".into(),
            ));
        }
        if !(self.initial_step.is_finite() && self.initial_step > 0.0) || self.restart_period == 0 {
            return Err(NpgaError::InvalidSpec(
                "CG initial step must be > 0 and restart period >= 1".into(),
            ));
        }
        if !(self.gradient_tolerance >= 0.0) {
            return Err(NpgaError::InvalidSpec("CG gradient tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: DVector<f64>,
    pub initial_cost: f64,
    /// Cost after every completed iteration.
    pub trace: Vec<f64>,
    pub final_grad_norm: f64,
    pub converged: bool,
    /// The line search found no acceptable step; `x` is the last good iterate.
    pub degraded: bool,
}

impl CgOutcome {
    pub fn final_cost(&self) -> f64 {
        self.trace.last().copied().unwrap_or(self.initial_cost)
    }
}

/// Minimises `f` with Polak–Ribière+ conjugate gradients and an Armijo
/// backtracking line search.
///
/// `f` returns the cost and its gradient. An error at the starting point is
/// returned; an error at a trial point counts as a rejected step.
pub fn cg_minimize<F>(mut f: F, initial: DVector<f64>, options: &CgOptions) -> Result<CgOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    options.validate()?;
    let mut x = initial;
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() {
        return Err(NpgaError::InvalidInput(format!("initial cost is not finite: {fx}")));
    }
    let mut out = CgOutcome {
        x: x.clone(),
        initial_cost: fx,
        trace: Vec::with_capacity(options.max_iters),
        final_grad_norm: g.norm(),
        converged: false,
        degraded: false,
    };
    let mut d = -&g;
    let mut since_restart = 0usize;
    // slope and step of the previous iteration, for the next initial step guess
    let mut prev: Option<(f64, f64)> = None;

    for _ in 0..options.max_iters {
        let gnorm = g.norm();
        if gnorm <= options.gradient_tolerance {
            out.converged = true;
            break;
        }
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            d = -&g;
            slope = -gnorm * gnorm;
            since_restart = 0;
        }
        let mut t = match prev {
            Some((prev_slope, prev_t)) => (prev_t * prev_slope / slope).min(1e10),
            None => options.initial_step / gnorm,
        };
        let mut accepted = None;
        for _ in 0..=options.max_backtracks {
            let trial = &x + &d * t;
            match f(&trial) {
                Ok((ft, gt)) if ft < fx && ft <= fx + options.sufficient_decrease * t * slope => {
                    accepted = Some((trial, ft, gt));
                    break;
                }
                Ok((ft, _)) if ft.is_finite() => {
                    // minimiser of the quadratic through f(0), f'(0), f(t)
                    let q = -slope * t * t / (2.0 * (ft - fx - slope * t));
                    t = q.clamp(0.1 * t, options.shrink * t);
                }
                _ => t *= options.shrink,
            }
        }
        let Some((mut x_new, mut f_new, mut g_new)) = accepted else {
            if since_restart == 0 {
                out.degraded = true;
                break;
            }
            // retry once along steepest descent before giving up
            d = -&g;
            since_restart = 0;
            prev = None;
            continue;
        };
        // step too short: the slope along d is still steep, so try doubling
        let mut expansions = 0;
        while g_new.dot(&d) < 0.1 * slope && expansions < options.max_backtracks {
            let t2 = 2.0 * t;
            let trial = &x + &d * t2;
            match f(&trial) {
                Ok((f2, g2)) if f2 < f_new && f2 <= fx + options.sufficient_decrease * t2 * slope => {
                    (x_new, f_new, g_new, t) = (trial, f2, g2, t2);
                    expansions += 1;
                }
                _ => break,
            }
        }
        prev = Some((slope, t));
        // Polak–Ribière+ with periodic restarts
        let beta = g_new.dot(&(&g_new - &g)) / g.dot(&g);
        since_restart += 1;
        if beta > 0.0 && since_restart < options.restart_period {
            d = -&g_new + &d * beta;
        } else {
            d = -&g_new;
            since_restart = 0;
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        out.trace.push(fx);
    }
    out.final_grad_norm = g.norm();
    if out.final_grad_norm <= options.gradient_tolerance {
        out.converged = true;
    }
    out.x = x;
    Ok(out)
}
