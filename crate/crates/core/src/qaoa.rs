//! QAOA parameter schedules, expectation values and classical optimization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::optim::{bfgs, BfgsOptions, Minimum};
use crate::qsim::{run_qaoa_with_energies, OutputDistribution, StateVector};
use crate::{Error, IsingModel, Result};

/// Free angles `(γ⃗, β⃗)` of a depth-`p` circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaoaParams {
    pub gammas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl QaoaParams {
    pub fn new(gammas: Vec<f64>, betas: Vec<f64>) -> Result<Self> {
        if gammas.is_empty() || gammas.len() != betas.len() {
            return Err(Error::InvalidArgument(format!(
                "need p >= 1 equal-length angle lists, got {} and {}",
                gammas.len(),
                betas.len()
            )));
        }
        Ok(Self { gammas, betas })
    }

    pub fn depth(&self) -> usize {
        self.gammas.len()
    }

    /// Packs as `[γ_1..γ_p, β_1..β_p]`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.gammas.iter().chain(&self.betas).copied().collect()
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        let p = x.len() / 2;
        Self::new(x[..p].to_vec(), x[p..].to_vec())
    }

    /// Time-reversed angles `(−γ⃗, −β⃗)`; same output distribution for real `H_P`.
    pub fn reversed(&self) -> Self {
        Self {
            gammas: self.gammas.iter().map(|g| -g).collect(),
            betas: self.betas.iter().map(|b| -b).collect(),
        }
    }
}

/// Four-parameter linear ramp `β_l = β_slope·l/p + β_intcp`, `γ_l = γ_slope·l/p + γ_intcp`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSchedule {
    pub beta_slope: f64,
    pub beta_intcp: f64,
    pub gamma_slope: f64,
    pub gamma_intcp: f64,
}

impl LinearSchedule {
    pub fn to_array(&self) -> [f64; 4] {
        [
            self.beta_slope,
            self.beta_intcp,
            self.gamma_slope,
            self.gamma_intcp,
        ]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            beta_slope: x[0],
            beta_intcp: x[1],
            gamma_slope: x[2],
            gamma_intcp: x[3],
        }
    }

    /// Angles for layers `l = 1..=p`.
    pub fn expand(&self, p: usize) -> Result<QaoaParams> {
        if p == 0 {
            return Err(Error::InvalidArgument("depth must be at least 1".into()));
        }
        let ramp = |slope: f64, intcp: f64| -> Vec<f64> {
            (1..=p)
                .map(|l| slope * (l as f64 / p as f64) + intcp)
                .collect()
        };
        QaoaParams::new(
            ramp(self.gamma_slope, self.gamma_intcp),
            ramp(self.beta_slope, self.beta_intcp),
        )
    }
}

/// Instance-independent linear schedule shared across an instance set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedAngles(pub LinearSchedule);

/// Cached energy diagonal for repeated circuit evaluations on one model.
#[derive(Debug, Clone)]
pub struct QaoaObjective {
    n_qubits: usize,
    energies: Vec<f64>,
}

impl QaoaObjective {
    pub fn new(model: &IsingModel) -> Result<Self> {
        Ok(Self {
            n_qubits: model.n_sites(),
            energies: model.energy_table(Execution::Sequential)?,
        })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn state(&self, params: &QaoaParams) -> Result<StateVector> {
        run_qaoa_with_energies(self.n_qubits, &self.energies, &params.gammas, &params.betas)
    }

    pub fn distribution(&self, params: &QaoaParams) -> Result<OutputDistribution> {
        Ok(self.state(params)?.measure_distribution())
    }

    /// `⟨ψ|H_P|ψ⟩`.
    pub fn expectation(&self, params: &QaoaParams) -> Result<f64> {
        Ok(self.distribution(params)?.expectation(&self.energies))
    }
}

pub fn expectation(model: &IsingModel, params: &QaoaParams) -> Result<f64> {
    QaoaObjective::new(model)?.expectation(params)
}

/// Effective evolution time `Σ (β_i + γ_i)`.
pub fn effective_time(params: &QaoaParams) -> f64 {
    params.gammas.iter().chain(&params.betas).sum()
}

/// Outcome of a multi-start linear-schedule optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedSchedule {
    #[serde(flatten)]
    pub schedule: LinearSchedule,
    pub expectation: f64,
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartTrace {
    pub initial: Vec<f64>,
    pub initial_value: f64,
    pub minimum: Option<Minimum>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationRun<T> {
    pub best: T,
    pub best_start: usize,
    pub starts: Vec<StartTrace>,
}

impl<T> OptimizationRun<T> {
    /// Smallest value among all starting points.
    pub fn best_initial_value(&self) -> f64 {
        self.starts
            .iter()
            .map(|s| s.initial_value)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Multi-start settings shared by both optimization entry points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    pub starts: usize,
    pub seed: u64,
    pub bfgs: BfgsOptions,
    pub exec: Execution,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            starts: 10,
            seed: 0,
            bfgs: BfgsOptions::default(),
            exec: Execution::default(),
        }
    }
}

fn multi_start(
    objective: &(dyn Fn(&[f64]) -> f64 + Sync),
    initial_points: Vec<Vec<f64>>,
    opts: &OptimizeOptions,
) -> Result<(Vec<f64>, f64, usize, Vec<StartTrace>)> {
    let starts: Vec<StartTrace> = opts.exec.map_slice(&initial_points, |x0| {
        let initial_value = objective(x0);
        let minimum = bfgs(objective, x0, opts.bfgs)
            .ok()
            .filter(|m| m.value.is_finite());
        StartTrace {
            initial: x0.clone(),
            initial_value,
            minimum,
        }
    });
    // best value, lowest start index on ties
    let mut best: Option<(usize, &Minimum)> = None;
    for (i, s) in starts.iter().enumerate() {
        if let Some(m) = &s.minimum {
            if best.is_none_or(|(_, b)| m.value < b.value) {
                best = Some((i, m));
            }
        }
    }
    let (idx, m) = best.ok_or_else(|| Error::Optimization("every start diverged".into()))?;
    let (x, v) = (m.x.clone(), m.value);
    Ok((x, v, idx, starts))
}

/// Minimizes the expectation over the four linear-schedule parameters,
/// from `opts.starts` uniform initial points in `[−2, 2]⁴`.
pub fn optimize_linear(
    model: &IsingModel,
    p: usize,
    opts: &OptimizeOptions,
) -> Result<OptimizationRun<OptimizedSchedule>> {
    if p == 0 || opts.starts == 0 {
        return Err(Error::InvalidArgument("need p >= 1 and starts >= 1".into()));
    }
    let obj = QaoaObjective::new(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let initial: Vec<Vec<f64>> = (0..opts.starts)
        .map(|_| (0..4).map(|_| rng.gen_range(-2.0..=2.0)).collect())
        .collect();
    let f = |x: &[f64]| {
        LinearSchedule::from_slice(x)
            .expand(p)
            .and_then(|params| obj.expectation(&params))
            .unwrap_or(f64::NAN)
    };
    let (x, value, best_start, starts) = multi_start(&f, initial, opts)?;
    Ok(OptimizationRun {
        best: OptimizedSchedule {
            schedule: LinearSchedule::from_slice(&x),
            expectation: value,
            p,
        },
        best_start,
        starts,
    })
}

/// Optimized free angles with their expectation value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedParams {
    pub params: QaoaParams,
    pub expectation: f64,
}

/// Minimizes over all `2p` free angles.
///
/// Starts are annealing-like ramps `γ_l = τ·l/p`, `β_l = τ·(1 − l/p) + τ/p`
/// with `τ` uniform in `[0.2, 1]` plus uniform jitter of ±0.1. The result is
/// reported with `Σ(β + γ) ≥ 0`, using the time-reversal symmetry of real
/// Hamiltonians.
pub fn optimize_free(
    model: &IsingModel,
    p: usize,
    opts: &OptimizeOptions,
) -> Result<OptimizationRun<OptimizedParams>> {
    if p == 0 || opts.starts == 0 {
        return Err(Error::InvalidArgument("need p >= 1 and starts >= 1".into()));
    }
    let obj = QaoaObjective::new(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let initial: Vec<Vec<f64>> = (0..opts.starts)
        .map(|_| {
            let tau: f64 = rng.gen_range(0.2..=1.0);
            let gammas = (1..=p).map(|l| tau * l as f64 / p as f64);
            let betas = (1..=p).map(|l| tau * (1.0 - l as f64 / p as f64) + tau / p as f64);
            gammas
                .chain(betas)
                .map(|v| v + rng.gen_range(-0.1..=0.1))
                .collect()
        })
        .collect();
    let f = |x: &[f64]| {
        QaoaParams::from_slice(x)
            .and_then(|params| obj.expectation(&params))
            .unwrap_or(f64::NAN)
    };
    let (x, value, best_start, starts) = multi_start(&f, initial, opts)?;
    let mut params = QaoaParams::from_slice(&x)?;
    if effective_time(&params) < 0.0 {
        params = params.reversed();
    }
    Ok(OptimizationRun {
        best: OptimizedParams {
            params,
            expectation: value,
        },
        best_start,
        starts,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Component-wise median of optimized schedules.
pub fn fixed_angles_from_set(schedules: &[LinearSchedule]) -> Result<FixedAngles> {
    if schedules.is_empty() {
        return Err(Error::InvalidArgument(
            "fixed angles need at least one schedule".into(),
        ));
    }
    let mut cols: [Vec<f64>; 4] = Default::default();
    for s in schedules {
        for (c, v) in cols.iter_mut().zip(s.to_array()) {
            c.push(v);
        }
    }
    let med: Vec<f64> = cols.iter_mut().map(|c| median(c)).collect();
    Ok(FixedAngles(LinearSchedule::from_slice(&med)))
}

/// Interquartile range of each schedule component, in `to_array` order.
pub fn schedule_spread(schedules: &[LinearSchedule]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (k, o) in out.iter_mut().enumerate() {
        let mut col: Vec<f64> = schedules.iter().map(|s| s.to_array()[k]).collect();
        col.sort_by(f64::total_cmp);
        if col.is_empty() {
            continue;
        }
        let q = |f: f64| col[((col.len() - 1) as f64 * f).round() as usize];
        *o = q(0.75) - q(0.25);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::IsingTerm;

    fn ferro() -> IsingModel {
        IsingModel::from_fields_and_couplings(2, &[], &[(0, 1, -1.0)]).unwrap()
    }

    fn random_model(n: usize, seed: u64) -> IsingModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut terms = Vec::new();
        for i in 0..n {
            terms.push(IsingTerm::new(vec![i], rng.gen_range(-1.0..1.0)));
            for j in i + 1..n {
                if rng.gen_bool(0.6) {
                    terms.push(IsingTerm::new(vec![i, j], if rng.gen_bool(0.5) { 1.0 } else { -1.0 }));
                }
            }
        }
        IsingModel::new(n, terms, 0.0).unwrap()
    }

    #[test]
    fn expand_examples() {
        let flat = LinearSchedule {
            beta_slope: 0.0,
            beta_intcp: 0.3,
            gamma_slope: 0.0,
            gamma_intcp: -0.2,
        };
        let p = flat.expand(3).unwrap();
        assert_eq!(p.betas, vec![0.3; 3]);
        assert_eq!(p.gammas, vec![-0.2; 3]);
        let ramp = LinearSchedule {
            beta_slope: 1.0,
            beta_intcp: 0.0,
            gamma_slope: 1.0,
            gamma_intcp: 0.0,
        };
        let e = ramp.expand(5).unwrap();
        let want = [0.2, 0.4, 0.6, 0.8, 1.0];
        for (a, b) in e.betas.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(ramp.expand(0).is_err());
    }

    #[test]
    fn effective_time_matches_closed_form() {
        assert_eq!(effective_time(&QaoaParams::new(vec![0.0; 3], vec![0.0; 3]).unwrap()), 0.0);
        let p = QaoaParams::new(vec![0.3, 0.4], vec![0.1, 0.2]).unwrap();
        assert!((effective_time(&p) - 1.0).abs() < 1e-15);
        // Σ_l (s·l/p + c) = s·(p+1)/2 + p·c for each ramp
        let s = LinearSchedule {
            beta_slope: 0.7,
            beta_intcp: -0.1,
            gamma_slope: 0.3,
            gamma_intcp: 0.25,
        };
        let p = 5.0;
        let closed = 0.7 * (p + 1.0) / 2.0 + p * -0.1 + 0.3 * (p + 1.0) / 2.0 + p * 0.25;
        assert!((effective_time(&s.expand(5).unwrap()) - closed).abs() < 1e-12);
    }

    #[test]
    fn expand_is_linear() {
        let a = LinearSchedule::from_slice(&[0.1, -0.4, 1.2, 0.3]);
        let b = LinearSchedule::from_slice(&[-0.7, 0.2, 0.5, -1.0]);
        let sum = LinearSchedule::from_slice(
            &a.to_array()
                .iter()
                .zip(b.to_array())
                .map(|(x, y)| 2.0 * x + y)
                .collect::<Vec<_>>(),
        );
        let (ea, eb, es) = (a.expand(4).unwrap(), b.expand(4).unwrap(), sum.expand(4).unwrap());
        for l in 0..4 {
            assert!((es.betas[l] - (2.0 * ea.betas[l] + eb.betas[l])).abs() < 1e-12);
            assert!((es.gammas[l] - (2.0 * ea.gammas[l] + eb.gammas[l])).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_angles_give_uniform_mean() {
        let m = random_model(4, 1);
        let table = m.energy_table(Execution::Sequential).unwrap();
        let mean = table.iter().sum::<f64>() / 16.0;
        let e = expectation(&m, &QaoaParams::new(vec![0.0], vec![0.0]).unwrap()).unwrap();
        assert!((e - mean).abs() < 1e-12);
    }

    #[test]
    fn expectation_matches_dense_oracle() {
        use nalgebra::{DMatrix, DVector};
        use num_complex::Complex64;
        let m = random_model(4, 2);
        let params = QaoaParams::new(vec![0.4, -0.9], vec![0.7, 0.2]).unwrap();
        let psi = crate::qsim::run_qaoa(&m, &params.gammas, &params.betas).unwrap();
        let table = m.energy_table(Execution::Sequential).unwrap();
        let hp = DMatrix::from_diagonal(&DVector::from_vec(table)).map(|x| Complex64::new(x, 0.0));
        let v = DVector::from_vec(psi.amplitudes().to_vec());
        let direct = (v.adjoint() * hp * &v)[(0, 0)].re;
        let e = expectation(&m, &params).unwrap();
        assert!((e - direct).abs() < 1e-10);
        let min = m.ground_states_bruteforce().unwrap().min_energy;
        assert!(e >= min - 1e-12);
    }

    #[test]
    fn offset_shifts_expectation() {
        let m = random_model(4, 3);
        let shifted = m.with_offset(m.offset() + 2.5);
        let params = QaoaParams::new(vec![0.3, 0.8], vec![0.5, 0.1]).unwrap();
        let a = expectation(&m, &params).unwrap();
        let b = expectation(&shifted, &params).unwrap();
        assert!((b - a - 2.5).abs() < 1e-12);
    }

    #[test]
    fn ferromagnet_optimization_improves() {
        let m = ferro();
        let baseline = expectation(&m, &QaoaParams::new(vec![0.0; 3], vec![0.0; 3]).unwrap()).unwrap();
        let run = optimize_linear(&m, 3, &OptimizeOptions { starts: 4, ..Default::default() }).unwrap();
        assert!(run.best.expectation < baseline - 0.5);
        let recomputed = expectation(&m, &run.best.schedule.expand(3).unwrap()).unwrap();
        assert_eq!(recomputed, run.best.expectation);
        assert!(run.best.expectation <= run.best_initial_value());
    }

    #[test]
    fn optimizer_beats_random_search() {
        let m = random_model(5, 4);
        let obj = QaoaObjective::new(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let random_best = (0..1000)
            .map(|_| {
                let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..=2.0)).collect();
                obj.expectation(&LinearSchedule::from_slice(&x).expand(5).unwrap())
                    .unwrap()
            })
            .fold(f64::INFINITY, f64::min);
        let run = optimize_linear(&m, 5, &OptimizeOptions { starts: 10, seed: 3, ..Default::default() }).unwrap();
        assert!(run.best.expectation <= random_best + 1e-9, "{} vs {random_best}", run.best.expectation);
    }

    #[test]
    fn multi_start_is_deterministic_across_execution_modes() {
        let m = random_model(4, 5);
        let par = optimize_linear(&m, 2, &OptimizeOptions { starts: 3, seed: 1, ..Default::default() }).unwrap();
        let seq = optimize_linear(
            &m,
            2,
            &OptimizeOptions {
                starts: 3,
                seed: 1,
                exec: Execution::Sequential,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(par.best, seq.best);
        assert_eq!(par.best_start, seq.best_start);
    }

    #[test]
    fn free_optimization_reports_forward_time() {
        let m = random_model(4, 6);
        let run = optimize_free(&m, 3, &OptimizeOptions { starts: 3, ..Default::default() }).unwrap();
        assert!(effective_time(&run.best.params) >= 0.0);
        let e = expectation(&m, &run.best.params).unwrap();
        assert!((e - run.best.expectation).abs() < 1e-10);
        assert!(run.best.expectation <= run.best_initial_value());
    }

    #[test]
    fn medians() {
        let s = LinearSchedule::from_slice(&[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(fixed_angles_from_set(&[s]).unwrap(), FixedAngles(s));
        let a = LinearSchedule::from_slice(&[0.0, 1.0, 2.0, 3.0]);
        let b = LinearSchedule::from_slice(&[2.0, 3.0, 4.0, 5.0]);
        let m = fixed_angles_from_set(&[a, b]).unwrap().0;
        assert_eq!(m.to_array(), [1.0, 2.0, 3.0, 4.0]);
        assert!(fixed_angles_from_set(&[]).is_err());
        assert_eq!(schedule_spread(&[s, s, s]), [0.0; 4]);
    }

    #[test]
    fn schedule_json_fields() {
        let o = OptimizedSchedule {
            schedule: LinearSchedule::from_slice(&[0.1, 0.2, 0.3, 0.4]),
            expectation: -1.5,
            p: 5,
        };
        let v: serde_json::Value = serde_json::to_value(&o).unwrap();
        for key in ["beta_slope", "beta_intcp", "gamma_slope", "gamma_intcp", "expectation", "p"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let back: OptimizedSchedule = serde_json::from_value(v).unwrap();
        assert_eq!(back, o);
    }
}
