//! Damped Gauss-Newton (Levenberg-Marquardt) least squares over small,
//! fixed-size parameter vectors, plus the Gaussian models fitted with it.
//!
//! The cost is `½ Σ (yᵢ − f(xᵢ; p))²`. A trial step is accepted only if it
//! lowers the cost, so the accepted cost sequence is non-increasing.

use nalgebra::{SMatrix, SVector};

/// A model evaluated at 2D sample coordinates.
pub trait Model<const N: usize> {
    /// Model value and its gradient with respect to the parameters.
    fn value_and_gradient(&self, at: [f64; 2], p: &[f64; N]) -> (f64, [f64; N]);

    fn value(&self, at: [f64; 2], p: &[f64; N]) -> f64 {
        self.value_and_gradient(at, p).0
    }

    /// Parameter vectors the model accepts; trial steps outside are rejected.
    fn admissible(&self, _p: &[f64; N]) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Converged when every `|Δpᵢ| ≤ tol · max(|pᵢ|, 1)`.
    pub convergence_tol: f64,
    pub initial_lambda: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            convergence_tol: 1e-8,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome<const N: usize> {
    pub params: [f64; N],
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost at the start and after every accepted step.
    pub cost_history: Vec<f64>,
}

impl<const N: usize> LmOutcome<N> {
    pub fn residual_norm(&self) -> f64 {
        (2.0 * self.cost).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum LmError {
    #[error("fewer samples than parameters")]
    Underdetermined,
    #[error("non-finite cost at the initial point")]
    BadStart,
}

fn cost<M: Model<N>, const N: usize>(model: &M, xs: &[[f64; 2]], ys: &[f64], p: &[f64; N]) -> f64 {
    0.5 * xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| (y - model.value(x, p)).powi(2))
        .sum::<f64>()
}

pub fn levenberg_marquardt<M: Model<N>, const N: usize>(
    model: &M,
    xs: &[[f64; 2]],
    ys: &[f64],
    init: [f64; N],
    config: &LmConfig,
) -> Result<LmOutcome<N>, LmError> {
    if xs.len() < N {
        return Err(LmError::Underdetermined);
    }
    let mut p = init;
    let mut c = cost(model, xs, ys, &p);
    if !c.is_finite() {
        return Err(LmError::BadStart);
    }
    let mut lambda = config.initial_lambda;
    let mut history = vec![c];
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < config.max_iterations {
        iterations += 1;
        let mut jtj = SMatrix::<f64, N, N>::zeros();
        let mut jtr = SVector::<f64, N>::zeros();
        for (&x, &y) in xs.iter().zip(ys) {
            let (f, g) = model.value_and_gradient(x, &p);
            let g = SVector::<f64, N>::from_row_slice(&g);
            jtj += g * g.transpose();
            jtr += g * (y - f);
        }
        // Retry with growing damping until a step lowers the cost.
        loop {
            let mut a = jtj;
            for i in 0..N {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&jtr),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        break 'outer;
                    }
                    continue;
                }
            };
            let mut trial = p;
            for i in 0..N {
                trial[i] += step[i];
            }
            let tc = if model.admissible(&trial) && trial.iter().all(|v| v.is_finite()) {
                cost(model, xs, ys, &trial)
            } else {
                f64::INFINITY
            };
            if tc.is_finite() && tc <= c {
                let small = (0..N).all(|i| step[i].abs() <= config.convergence_tol * p[i].abs().max(1.0));
                p = trial;
                c = tc;
                history.push(c);
                lambda = (lambda * 0.1).max(1e-12);
                if small {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                // No descent direction left: we sit at a minimum to machine precision.
                converged = true;
                break 'outer;
            }
        }
    }
    Ok(LmOutcome {
        params: p,
        cost: c,
        iterations,
        converged,
        cost_history: history,
    })
}

/// `A·exp(−((x−x₀)² + (y−y₀)²) / 2σ²) + offset`, parameters
/// `[A, x₀, y₀, σ, offset]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IsotropicGaussian;

impl Model<5> for IsotropicGaussian {
    fn value_and_gradient(&self, at: [f64; 2], p: &[f64; 5]) -> (f64, [f64; 5]) {
        let [a, x0, y0, s, c] = *p;
        let dx = at[0] - x0;
        let dy = at[1] - y0;
        let r2 = dx * dx + dy * dy;
        let s2 = s * s;
        let e = (-r2 / (2.0 * s2)).exp();
        let ae = a * e;
        (a * e + c, [e, ae * dx / s2, ae * dy / s2, ae * r2 / (s2 * s), 1.0])
    }

    fn admissible(&self, p: &[f64; 5]) -> bool {
        p[3] > 0.0
    }
}

/// Axis-aligned elliptical Gaussian with offset, parameters
/// `[A, x₀, y₀, σx, σy, offset]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct EllipticalGaussian;

impl Model<6> for EllipticalGaussian {
    fn value_and_gradient(&self, at: [f64; 2], p: &[f64; 6]) -> (f64, [f64; 6]) {
        let [a, x0, y0, sx, sy, c] = *p;
        let dx = at[0] - x0;
        let dy = at[1] - y0;
        let sx2 = sx * sx;
        let sy2 = sy * sy;
        let e = (-0.5 * (dx * dx / sx2 + dy * dy / sy2)).exp();
        let ae = a * e;
        (
            ae + c,
            [e, ae * dx / sx2, ae * dy / sy2, ae * dx * dx / (sx2 * sx), ae * dy * dy / (sy2 * sy), 1.0],
        )
    }

    fn admissible(&self, p: &[f64; 6]) -> bool {
        p[3] > 0.0 && p[4] > 0.0
    }
}

/// Radial ring profile: `A·exp(−(r−r₀)² / 2w²) + b·r` evaluated at `at[0] = r`,
/// parameters `[A, r₀, w, b]`. The linear term is the shell-count profile of
/// an areally uniform background.
#[derive(Debug, Clone, Copy, Default)]
pub struct RadialRing;

impl Model<4> for RadialRing {
    fn value_and_gradient(&self, at: [f64; 2], p: &[f64; 4]) -> (f64, [f64; 4]) {
        let [a, r0, w, b] = *p;
        let r = at[0];
        let d = r - r0;
        let w2 = w * w;
        let e = (-d * d / (2.0 * w2)).exp();
        let ae = a * e;
        (ae + b * r, [e, ae * d / w2, ae * d * d / (w2 * w), r])
    }

    fn admissible(&self, p: &[f64; 4]) -> bool {
        p[2] > 0.0
    }
}

/// Central-difference gradient, for checking analytic Jacobians.
pub fn finite_difference_gradient<M: Model<N>, const N: usize>(
    model: &M,
    at: [f64; 2],
    p: &[f64; N],
    rel_step: f64,
) -> [f64; N] {
    let mut g = [0.0; N];
    for i in 0..N {
        let h = rel_step * p[i].abs().max(1.0);
        let mut hi = *p;
        let mut lo = *p;
        hi[i] += h;
        lo[i] -= h;
        g[i] = (model.value(at, &hi) - model.value(at, &lo)) / (2.0 * h);
    }
    g
}
