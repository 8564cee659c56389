//! Gradient descent with Armijo backtracking.

/// Stopping rules for [`descend`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescentOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Stop as soon as the objective is strictly below this value.
    pub stop_below: f64,
    pub initial_step: f64,
}

impl Default for DescentOptions {
    fn default() -> Self {
        DescentOptions {
            max_iters: 2000,
            grad_tol: 1e-12,
            stop_below: f64::NEG_INFINITY,
            initial_step: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DescentResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

const ARMIJO_C: f64 = 1e-4;

/// Minimizes `f` from `x0`. `f` returns the value and gradient. Each step
/// backtracks by halving until the Armijo condition holds and doubles the
/// trial step after an accepted move. Non-finite values count as rejections.
pub fn descend<F>(mut f: F, x0: Vec<f64>, opts: &DescentOptions) -> DescentResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut step = opts.initial_step;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        if !fx.is_finite() || fx < opts.stop_below {
            break;
        }
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if gg.sqrt() <= opts.grad_tol || !gg.is_finite() {
            break;
        }
        iterations += 1;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(&g).map(|(x, g)| x - step * g).collect();
            let (fc, gc) = f(&cand);
            if fc.is_finite() && fc <= fx - ARMIJO_C * step * gg {
                x = cand;
                fx = fc;
                g = gc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        step *= 2.0;
    }
    DescentResult {
        x,
        value: fx,
        iterations,
    }
}
