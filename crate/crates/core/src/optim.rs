//! Small dense BFGS minimizer with central finite-difference gradients.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    /// Stop once the gradient infinity-norm drops below this.
    pub gradient_tolerance: f64,
    /// Stop once an accepted step improves the value by less than this.
    pub value_tolerance: f64,
    /// Central-difference step.
    pub fd_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-6,
            value_tolerance: 1e-12,
            fd_step: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Accepted iterates with their values, starting with the initial point.
    pub trace: Vec<(Vec<f64>, f64)>,
}

pub fn central_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` from `x0`. The returned value never exceeds `f(x0)`.
pub fn bfgs<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], opts: BfgsOptions) -> Result<Minimum> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut evaluations = 1;
    if !fx.is_finite() {
        return Err(Error::Optimization(format!("non-finite value {fx} at start")));
    }
    let mut g = central_gradient(&f, &x, opts.fd_step);
    evaluations += 2 * n;
    let identity = |n: usize| {
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0;
        }
        m
    };
    // inverse Hessian approximation, row-major
    let mut h_inv = identity(n);
    let mut trace = vec![(x.clone(), fx)];
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < opts.gradient_tolerance {
            break;
        }
        iterations += 1;
        let mut dir: Vec<f64> = (0..n)
            .map(|i| -(0..n).map(|j| h_inv[i * n + j] * g[j]).sum::<f64>())
            .collect();
        let mut slope = dot(&dir, &g);
        if slope >= 0.0 {
            h_inv = identity(n);
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&dir, &g);
        }
        // backtracking Armijo search
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let ft = f(&trial);
            evaluations += 1;
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            break;
        };
        let g_new = central_gradient(&f, &x_new, opts.fd_step);
        evaluations += 2 * n;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let improvement = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        trace.push((x.clone(), fx));
        if sy > 1e-12 {
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| h_inv[i * n + j] * y[j]).sum())
                .collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h_inv[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        if improvement.abs() < opts.value_tolerance {
            break;
        }
    }
    Ok(Minimum {
        x,
        value: fx,
        iterations,
        evaluations,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2) + x[0] * x[1];
        let m = bfgs(f, &[5.0, 5.0], BfgsOptions::default()).unwrap();
        // stationary point of the quadratic
        let (a, b) = (2.0f64, 20.0f64);
        let det = a * b - 1.0;
        let x0 = (b * 2.0 - (-40.0)) / det;
        let x1 = (a * -40.0 - 2.0) / det;
        assert!((m.x[0] - x0).abs() < 1e-5 && (m.x[1] - x1).abs() < 1e-5, "{:?}", m.x);
        assert!(m.trace.windows(2).all(|w| w[1].1 <= w[0].1));
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = BfgsOptions {
            max_iterations: 2000,
            ..Default::default()
        };
        let m = bfgs(f, &[-1.2, 1.0], opts).unwrap();
        assert!(m.value < 1e-8, "{}", m.value);
    }

    #[test]
    fn non_finite_start_fails() {
        assert!(bfgs(|_: &[f64]| f64::NAN, &[0.0], BfgsOptions::default()).is_err());
    }
}
