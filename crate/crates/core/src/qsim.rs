//! Dense statevector simulation for up to [`MAX_QUBITS`] qubits.
//!
//! Amplitude index `z` stores qubit `i` in bit `i`; read as a packed
//! [`SpinConfig`], bit 1 is spin −1. The driver is the transverse field
//! `H_d = −Σ σ^x_i`.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::exec::Execution;
use crate::{Error, IsingModel, Result, SpinConfig};

pub const MAX_QUBITS: usize = 20;
/// Norm tolerance every public operation maintains.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

fn check_qubits(n: usize) -> Result<()> {
    if n > MAX_QUBITS {
        return Err(Error::Capacity {
            what: "statevector",
            size: n,
            limit: MAX_QUBITS,
        });
    }
    Ok(())
}

impl StateVector {
    /// `|+⟩^⊗N`, the ground state of the transverse-field driver.
    pub fn uniform(n_qubits: usize) -> Result<Self> {
        check_qubits(n_qubits)?;
        let dim = 1usize << n_qubits;
        let a = Complex64::new(1.0 / (dim as f64).sqrt(), 0.0);
        Ok(Self {
            n_qubits,
            amps: vec![a; dim],
        })
    }

    /// Computational basis state `|σ⟩`.
    pub fn basis(config: &SpinConfig) -> Result<Self> {
        check_qubits(config.len())?;
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << config.len()];
        amps[config.bits() as usize] = Complex64::new(1.0, 0.0);
        Ok(Self {
            n_qubits: config.len(),
            amps,
        })
    }

    /// Wraps raw amplitudes; they must already be normalized.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let dim = amps.len();
        if !dim.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "amplitude count {dim} is not a power of two"
            )));
        }
        let n_qubits = dim.trailing_zeros() as usize;
        check_qubits(n_qubits)?;
        let s = Self { n_qubits, amps };
        if (s.norm() - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "state not normalized: norm {}",
                s.norm()
            )));
        }
        Ok(s)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt()
    }

    fn renormalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            let inv = 1.0 / n;
            self.amps.iter_mut().for_each(|a| *a *= inv);
        }
    }

    /// Resets to `|σ⟩` in place, reusing the allocation.
    pub fn set_basis(&mut self, config: &SpinConfig) -> Result<()> {
        if config.len() != self.n_qubits {
            return Err(Error::Dimension {
                expected: self.n_qubits,
                actual: config.len(),
            });
        }
        self.amps.iter_mut().for_each(|a| *a = Complex64::new(0.0, 0.0));
        self.amps[config.bits() as usize] = Complex64::new(1.0, 0.0);
        Ok(())
    }

    /// Multiplies `a_z` by `exp(−i·angle·E_z)` for a precomputed diagonal.
    pub fn apply_diagonal_phase(&mut self, energies: &[f64], angle: f64) -> Result<()> {
        if energies.len() != self.amps.len() {
            return Err(Error::Dimension {
                expected: self.amps.len(),
                actual: energies.len(),
            });
        }
        if angle == 0.0 {
            return Ok(());
        }
        for (a, &e) in self.amps.iter_mut().zip(energies) {
            *a *= Complex64::from_polar(1.0, -angle * e);
        }
        Ok(())
    }

    /// Phase-separation layer `exp(−iγ H_P)`.
    pub fn apply_phase_layer(&mut self, model: &IsingModel, gamma: f64) -> Result<()> {
        if model.n_sites() != self.n_qubits {
            return Err(Error::Dimension {
                expected: self.n_qubits,
                actual: model.n_sites(),
            });
        }
        let energies = model.energy_table(Execution::Sequential)?;
        self.apply_diagonal_phase(&energies, gamma)
    }

    /// Mixing layer `exp(−iβ H_d) = Π_i exp(+iβ σ^x_i)`.
    pub fn apply_mixer_layer(&mut self, beta: f64) {
        if beta == 0.0 {
            return;
        }
        let c = Complex64::new(beta.cos(), 0.0);
        let is = Complex64::new(0.0, beta.sin());
        for q in 0..self.n_qubits {
            let stride = 1usize << q;
            for block in (0..self.amps.len()).step_by(stride << 1) {
                for z in block..block + stride {
                    let a0 = self.amps[z];
                    let a1 = self.amps[z + stride];
                    self.amps[z] = c * a0 + is * a1;
                    self.amps[z + stride] = is * a0 + c * a1;
                }
            }
        }
    }

    /// `out = H_d · self` for the transverse-field driver.
    fn apply_driver_into(&self, out: &mut [Complex64]) {
        for (z, o) in out.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for q in 0..self.n_qubits {
                acc -= self.amps[z ^ (1 << q)];
            }
            *o = acc;
        }
    }

    pub fn measure_distribution(&self) -> OutputDistribution {
        OutputDistribution {
            n_qubits: self.n_qubits,
            probs: self.amps.iter().map(Complex64::norm_sqr).collect(),
        }
    }

    /// Exact categorical draws from `|a_z|²`.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<SpinConfig> {
        self.measure_distribution().sample(count, rng)
    }

    /// A single projective measurement outcome.
    pub fn measure_once<R: Rng + ?Sized>(&self, rng: &mut R) -> SpinConfig {
        let u: f64 = rng.gen::<f64>() * self.norm().powi(2);
        let mut acc = 0.0;
        for (z, a) in self.amps.iter().enumerate() {
            acc += a.norm_sqr();
            if u < acc {
                return SpinConfig::from_bits(z as u64, self.n_qubits);
            }
        }
        // rounding: fall back to the last state with nonzero weight
        let z = self
            .amps
            .iter()
            .rposition(|a| a.norm_sqr() > 0.0)
            .unwrap_or(0);
        SpinConfig::from_bits(z as u64, self.n_qubits)
    }
}

/// Measurement distribution `p_z = |⟨z|ψ⟩|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputDistribution {
    n_qubits: usize,
    probs: Vec<f64>,
}

impl OutputDistribution {
    pub fn new(n_qubits: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != 1 << n_qubits {
            return Err(Error::Dimension {
                expected: 1 << n_qubits,
                actual: probs.len(),
            });
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) || (total - 1.0).abs() > NORM_TOLERANCE
        {
            return Err(Error::InvalidArgument(format!(
                "not a probability distribution (sum {total})"
            )));
        }
        Ok(Self { n_qubits, probs })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, config: &SpinConfig) -> f64 {
        self.probs[config.bits() as usize]
    }

    /// `Σ_z p_z · E_z`.
    pub fn expectation(&self, energies: &[f64]) -> f64 {
        self.probs.iter().zip(energies).map(|(p, e)| p * e).sum()
    }

    pub fn total_variation(&self, other: &OutputDistribution) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<SpinConfig> {
        let dist = WeightedIndex::new(&self.probs).expect("distribution has positive mass");
        (0..count)
            .map(|_| SpinConfig::from_bits(dist.sample(rng) as u64, self.n_qubits))
            .collect()
    }

    /// `bitstring,probability` rows, site 0 first in the bitstring.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bitstring,probability\n");
        for (z, p) in self.probs.iter().enumerate() {
            let c = SpinConfig::from_bits(z as u64, self.n_qubits);
            let _ = writeln!(out, "{c},{p:.12e}");
        }
        out
    }
}

/// Runs `|ψ⟩ = Π_k exp(−iβ_k H_d) exp(−iγ_k H_P) |+⟩^⊗N`, layers in index order.
pub fn run_qaoa(model: &IsingModel, gammas: &[f64], betas: &[f64]) -> Result<StateVector> {
    let energies = model.energy_table(Execution::Sequential)?;
    run_qaoa_with_energies(model.n_sites(), &energies, gammas, betas)
}

/// [`run_qaoa`] with a precomputed energy diagonal.
pub fn run_qaoa_with_energies(
    n_qubits: usize,
    energies: &[f64],
    gammas: &[f64],
    betas: &[f64],
) -> Result<StateVector> {
    if gammas.is_empty() || gammas.len() != betas.len() {
        return Err(Error::InvalidArgument(format!(
            "need p >= 1 equal-length angle lists, got {} gammas and {} betas",
            gammas.len(),
            betas.len()
        )));
    }
    let mut state = StateVector::uniform(n_qubits)?;
    for (&g, &b) in gammas.iter().zip(betas) {
        state.apply_diagonal_phase(energies, g)?;
        state.apply_mixer_layer(b);
    }
    Ok(state)
}

/// Time-independent proposal Hamiltonian `H = (1−γ)·α·H_P + γ·H_d`.
///
/// `α = ‖H_d‖_F / ‖H_P‖_F` puts both parts on the same scale; the constant
/// offset of `H_P` is dropped since it only contributes a global phase. Both
/// parts are real symmetric in the computational basis, so `exp(−iHt)` is
/// symmetric (`U = Uᵀ`).
#[derive(Debug, Clone)]
pub struct MixedHamiltonian {
    n_qubits: usize,
    scaled_problem: Vec<f64>,
    driver_weight: f64,
    spectral_bound: f64,
}

impl MixedHamiltonian {
    pub fn new(model: &IsingModel, driver_weight: f64) -> Result<Self> {
        let table = model.energy_table(Execution::Sequential)?;
        Self::from_energies(model.n_sites(), table, model.offset(), driver_weight)
    }

    /// Builds from a precomputed energy table (offset `offset` is removed).
    pub fn from_energies(
        n_qubits: usize,
        mut energies: Vec<f64>,
        offset: f64,
        driver_weight: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&driver_weight) {
            return Err(Error::InvalidArgument(format!(
                "driver weight must lie in [0, 1], got {driver_weight}"
            )));
        }
        energies.iter_mut().for_each(|e| *e -= offset);
        let alpha = problem_normalization(n_qubits, &energies);
        let scale = (1.0 - driver_weight) * alpha;
        energies.iter_mut().for_each(|e| *e *= scale);
        let max_diag = energies.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        Ok(Self {
            n_qubits,
            spectral_bound: max_diag + driver_weight * n_qubits as f64,
            scaled_problem: energies,
            driver_weight,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    /// Diagonal of `(1−γ)·α·H_P`.
    pub fn scaled_problem(&self) -> &[f64] {
        &self.scaled_problem
    }

    pub fn driver_weight(&self) -> f64 {
        self.driver_weight
    }

    /// One symmetric Trotter step `e^{−iγH_d δ/2} e^{−i(1−γ)αH_P δ} e^{−iγH_d δ/2}`.
    fn trotter_step(&self, state: &mut StateVector, dt: f64) {
        let half = 0.5 * self.driver_weight * dt;
        state.apply_mixer_layer(half);
        state
            .apply_diagonal_phase(&self.scaled_problem, dt)
            .expect("dimension checked on construction");
        state.apply_mixer_layer(half);
    }

    fn evolve_steps(&self, state: &StateVector, time: f64, steps: usize) -> StateVector {
        let mut s = state.clone();
        let dt = time / steps as f64;
        for _ in 0..steps {
            self.trotter_step(&mut s, dt);
        }
        s
    }
}

/// `‖H_d‖_F / ‖H_P‖_F` for an offset-free diagonal; 1 when `H_P` vanishes.
pub fn problem_normalization(n_qubits: usize, energies: &[f64]) -> f64 {
    let driver = (n_qubits as f64 * energies.len() as f64).sqrt();
    let problem = energies.iter().map(|e| e * e).sum::<f64>().sqrt();
    if problem > 0.0 {
        driver / problem
    } else {
        1.0
    }
}

/// Accuracy control for [`evolve_fixed`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrotterControl {
    /// Maximum 2-norm difference between the `n`- and `2n`-step results.
    pub tolerance: f64,
    pub max_steps: usize,
}

impl Default for TrotterControl {
    fn default() -> Self {
        Self {
            tolerance: 1e-7,
            max_steps: 1 << 22,
        }
    }
}

/// `exp(−iHt)|ψ⟩` by symmetric second-order Trotter steps.
///
/// The step count comes from [`trotter_steps`] and depends only on the
/// Hamiltonian and `time`, never on the input state, so the propagator applied
/// to every basis state is the same symmetric matrix. Returns the evolved
/// state and the step count used.
pub fn evolve_fixed(
    state: &StateVector,
    hamiltonian: &MixedHamiltonian,
    time: f64,
    control: TrotterControl,
) -> Result<(StateVector, usize)> {
    if state.n_qubits() != hamiltonian.n_qubits() {
        return Err(Error::Dimension {
            expected: hamiltonian.n_qubits(),
            actual: state.n_qubits(),
        });
    }
    let steps = trotter_steps(hamiltonian, time, control)?;
    Ok((evolve_with_steps(state, hamiltonian, time, steps), steps))
}

/// Applies `steps` symmetric Trotter steps spanning `time`.
pub fn evolve_with_steps(
    state: &StateVector,
    hamiltonian: &MixedHamiltonian,
    time: f64,
    steps: usize,
) -> StateVector {
    if steps == 0 || time == 0.0 {
        return state.clone();
    }
    let mut out = hamiltonian.evolve_steps(state, time, steps);
    out.renormalize();
    out
}

/// Fixed pseudo-random unit vector overlapping every eigenvector.
fn probe_state(n_qubits: usize) -> StateVector {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_7a0b);
    let amps = (0..1usize << n_qubits)
        .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
        .collect();
    let mut s = StateVector { n_qubits, amps };
    s.renormalize();
    s
}

/// Step count for [`evolve_fixed`]: doubles from `⌈t·‖H‖⌉` until the `n`- and
/// `2n`-step evolutions of a fixed probe state differ by at most
/// `control.tolerance` in 2-norm.
pub fn trotter_steps(
    hamiltonian: &MixedHamiltonian,
    time: f64,
    control: TrotterControl,
) -> Result<usize> {
    if !time.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite evolution time {time}")));
    }
    if time == 0.0 {
        return Ok(0);
    }
    let probe = probe_state(hamiltonian.n_qubits());
    let mut steps = ((time.abs() * hamiltonian.spectral_bound).ceil() as usize).max(4);
    let mut coarse = hamiltonian.evolve_steps(&probe, time, steps);
    loop {
        let fine = hamiltonian.evolve_steps(&probe, time, 2 * steps);
        let diff = coarse
            .amps
            .iter()
            .zip(&fine.amps)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        steps *= 2;
        if diff <= control.tolerance {
            return Ok(steps);
        }
        if steps * 2 > control.max_steps {
            return Err(Error::Integration(format!(
                "Trotter evolution did not converge within {} steps (difference {diff:e})",
                control.max_steps
            )));
        }
        coarse = fine;
    }
}

/// Interpolation schedule `H(t) = A(t/T) H_d + B(t/T) H_P`.
#[derive(Debug, Clone, Copy)]
pub struct AnnealSchedule {
    pub total_time: f64,
    pub a_of: fn(f64) -> f64,
    pub b_of: fn(f64) -> f64,
}

fn linear_a(s: f64) -> f64 {
    1.0 - s
}

fn linear_b(s: f64) -> f64 {
    s
}

impl AnnealSchedule {
    /// `A = 1 − t/T`, `B = t/T`.
    pub fn linear(total_time: f64) -> Self {
        Self {
            total_time,
            a_of: linear_a,
            b_of: linear_b,
        }
    }

    /// Default RK4 step `min(0.01, T/10⁴)`.
    pub fn default_step(&self) -> f64 {
        (self.total_time / 1e4).min(0.01)
    }
}

/// Integrates `i dψ/dt = [A H_d + B H_P] ψ` from `|+⟩^⊗N` with fixed-step RK4
/// at the schedule's default step.
pub fn run_annealing(model: &IsingModel, schedule: &AnnealSchedule) -> Result<StateVector> {
    run_annealing_with_step(model, schedule, schedule.default_step())
}

/// [`run_annealing`] with an explicit nominal step (used for step-halving checks).
pub fn run_annealing_with_step(
    model: &IsingModel,
    schedule: &AnnealSchedule,
    dt: f64,
) -> Result<StateVector> {
    let t_total = schedule.total_time;
    if !t_total.is_finite() || t_total < 0.0 {
        return Err(Error::Integration(format!("bad annealing time {t_total}")));
    }
    let mut state = StateVector::uniform(model.n_sites())?;
    if t_total == 0.0 {
        return Ok(state);
    }
    if !(dt.is_finite() && dt > 0.0) || dt < t_total * 1e-12 {
        return Err(Error::Integration(format!("step size {dt} underflows")));
    }
    let energies = model.energy_table(Execution::Sequential)?;
    let steps = (t_total / dt).ceil() as usize;
    let h = t_total / steps as f64;
    let dim = state.dim();
    let zero = Complex64::new(0.0, 0.0);
    let mut k = [vec![zero; dim], vec![zero; dim], vec![zero; dim], vec![zero; dim]];
    let mut tmp = StateVector {
        n_qubits: state.n_qubits,
        amps: vec![zero; dim],
    };
    let mut driver = vec![zero; dim];
    let minus_i = Complex64::new(0.0, -1.0);

    // k = −i H(t) ψ
    let derivative = |psi: &StateVector, t: f64, out: &mut [Complex64], driver: &mut [Complex64]| {
        let s = t / t_total;
        let a = (schedule.a_of)(s);
        let b = (schedule.b_of)(s);
        psi.apply_driver_into(driver);
        for z in 0..dim {
            out[z] = minus_i * (a * driver[z] + b * energies[z] * psi.amps[z]);
        }
    };

    for step in 0..steps {
        let t = step as f64 * h;
        derivative(&state, t, &mut k[0], &mut driver);
        for z in 0..dim {
            tmp.amps[z] = state.amps[z] + 0.5 * h * k[0][z];
        }
        derivative(&tmp, t + 0.5 * h, &mut k[1], &mut driver);
        for z in 0..dim {
            tmp.amps[z] = state.amps[z] + 0.5 * h * k[1][z];
        }
        derivative(&tmp, t + 0.5 * h, &mut k[2], &mut driver);
        for z in 0..dim {
            tmp.amps[z] = state.amps[z] + h * k[2][z];
        }
        derivative(&tmp, t + h, &mut k[3], &mut driver);
        for z in 0..dim {
            state.amps[z] += h / 6.0 * (k[0][z] + 2.0 * k[1][z] + 2.0 * k[2][z] + k[3][z]);
        }
        state.renormalize();
        if !state.norm().is_finite() {
            return Err(Error::Integration(format!("state diverged at t = {t}")));
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::IsingTerm;
    use nalgebra::{DMatrix, SymmetricEigen};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type CMat = DMatrix<Complex64>;

    fn random_model(n: usize, rng: &mut ChaCha8Rng) -> IsingModel {
        let mut terms = Vec::new();
        for i in 0..n {
            terms.push(IsingTerm::new(vec![i], rng.gen_range(-1.0..1.0)));
            for j in i + 1..n {
                terms.push(IsingTerm::new(vec![i, j], rng.gen_range(-1.0..1.0)));
            }
        }
        IsingModel::new(n, terms, 0.3).unwrap()
    }

    fn driver_matrix(n: usize) -> DMatrix<f64> {
        let dim = 1 << n;
        let mut h = DMatrix::zeros(dim, dim);
        for z in 0..dim {
            for q in 0..n {
                h[(z ^ (1 << q), z)] -= 1.0;
            }
        }
        h
    }

    /// `exp(−iHt)` for real symmetric `H` via eigendecomposition.
    fn expm_symmetric(h: &DMatrix<f64>, t: f64) -> CMat {
        let eig = SymmetricEigen::new(h.clone());
        let v = eig.eigenvectors.map(|x| Complex64::new(x, 0.0));
        let d = CMat::from_diagonal(&eig.eigenvalues.map(|l| Complex64::from_polar(1.0, -l * t)));
        &v * d * v.transpose()
    }

    fn diag(model: &IsingModel) -> DMatrix<f64> {
        let table = model.energy_table(Execution::Sequential).unwrap();
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(table))
    }

    fn to_vec(s: &StateVector) -> nalgebra::DVector<Complex64> {
        nalgebra::DVector::from_vec(s.amplitudes().to_vec())
    }

    fn max_diff(a: &nalgebra::DVector<Complex64>, b: &StateVector) -> f64 {
        a.iter()
            .zip(b.amplitudes())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_angles_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_model(3, &mut rng);
        let init = StateVector::basis(&SpinConfig::from_bits(0b101, 3)).unwrap();
        let mut s = init.clone();
        s.apply_phase_layer(&m, 0.0).unwrap();
        s.apply_mixer_layer(0.0);
        assert_eq!(s, init);
    }

    #[test]
    fn offset_only_model_is_global_phase() {
        let m = IsingModel::new(3, vec![], 2.5).unwrap();
        let mut s = run_qaoa(&random_model(3, &mut ChaCha8Rng::seed_from_u64(2)), &[0.4], &[0.3]).unwrap();
        let before = s.measure_distribution();
        s.apply_phase_layer(&m, 0.77).unwrap();
        let after = s.measure_distribution();
        for (a, b) in before.probs().iter().zip(after.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rabi_flip() {
        let mut s = StateVector::basis(&SpinConfig::all_up(1)).unwrap();
        s.apply_mixer_layer(std::f64::consts::FRAC_PI_2);
        let p = s.measure_distribution();
        assert!((p.probs()[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn phase_layer_matches_dense_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_model(3, &mut rng);
        let init = run_qaoa(&m, &[0.2], &[0.9]).unwrap();
        let expected = expm_symmetric(&diag(&m), 0.83) * to_vec(&init);
        let mut s = init.clone();
        s.apply_phase_layer(&m, 0.83).unwrap();
        assert!(max_diff(&expected, &s) < 1e-10);
    }

    #[test]
    fn mixer_layer_matches_dense_exponential() {
        let init = run_qaoa(&random_model(3, &mut ChaCha8Rng::seed_from_u64(4)), &[1.1], &[0.3]).unwrap();
        let expected = expm_symmetric(&driver_matrix(3), 0.61) * to_vec(&init);
        let mut s = init.clone();
        s.apply_mixer_layer(0.61);
        assert!(max_diff(&expected, &s) < 1e-10);
    }

    #[test]
    fn qaoa_matches_unitary_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_model(4, &mut rng);
        let gammas = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let betas = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let hp = diag(&m);
        let hd = driver_matrix(4);
        let mut psi = nalgebra::DVector::from_element(16, Complex64::new(0.25, 0.0));
        for (g, b) in gammas.iter().zip(&betas) {
            psi = expm_symmetric(&hp, *g) * psi;
            psi = expm_symmetric(&hd, *b) * psi;
        }
        let s = run_qaoa(&m, &gammas, &betas).unwrap();
        assert!(max_diff(&psi, &s) < 1e-10);
        assert!((s.norm() - 1.0).abs() < NORM_TOLERANCE);
    }

    #[test]
    fn qaoa_trivial_and_errors() {
        let m = random_model(3, &mut ChaCha8Rng::seed_from_u64(6));
        let s = run_qaoa(&m, &[0.0], &[0.0]).unwrap();
        for p in s.measure_distribution().probs() {
            assert!((p - 0.125).abs() < 1e-15);
        }
        assert!(run_qaoa(&m, &[], &[]).is_err());
        assert!(run_qaoa(&m, &[0.1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn evolve_fixed_matches_dense_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_model(3, &mut rng);
        let gamma_mix = 0.4;
        let ham = MixedHamiltonian::new(&m, gamma_mix).unwrap();
        let table: Vec<f64> = m
            .energy_table(Execution::Sequential)
            .unwrap()
            .iter()
            .map(|e| e - m.offset())
            .collect();
        let alpha = problem_normalization(3, &table);
        let h = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(table)) * ((1.0 - gamma_mix) * alpha)
            + driver_matrix(3) * gamma_mix;
        let init = StateVector::basis(&SpinConfig::from_bits(0b011, 3)).unwrap();
        let t = 7.5;
        let expected = expm_symmetric(&h, t) * to_vec(&init);
        let (s, steps) = evolve_fixed(&init, &ham, t, TrotterControl::default()).unwrap();
        assert!(steps > 0);
        assert!(max_diff(&expected, &s) < 1e-7, "{}", max_diff(&expected, &s));
        let (same, zero_steps) = evolve_fixed(&init, &ham, 0.0, TrotterControl::default()).unwrap();
        assert_eq!((same, zero_steps), (init.clone(), 0));
        assert!(evolve_fixed(&init, &ham, f64::NAN, TrotterControl::default()).is_err());
    }

    #[test]
    fn evolve_fixed_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_model(4, &mut rng);
        let ham = MixedHamiltonian::new(&m, 0.35).unwrap();
        let control = TrotterControl::default();
        let columns: Vec<StateVector> = (0..16u64)
            .map(|z| {
                evolve_fixed(&StateVector::basis(&SpinConfig::from_bits(z, 4)).unwrap(), &ham, 4.0, control)
                    .unwrap()
                    .0
            })
            .collect();
        // coarse steps keep the symmetry exact as well
        let coarse: Vec<StateVector> = (0..16u64)
            .map(|z| evolve_with_steps(&StateVector::basis(&SpinConfig::from_bits(z, 4)).unwrap(), &ham, 4.0, 3))
            .collect();
        for a in 0..16 {
            for b in 0..16 {
                let uab = coarse[b].amplitudes()[a];
                let uba = coarse[a].amplitudes()[b];
                assert!((uab - uba).norm() < 1e-12);
            }
        }
        for a in 0..16 {
            for b in 0..16 {
                let uab = columns[b].amplitudes()[a].norm();
                let uba = columns[a].amplitudes()[b].norm();
                assert!((uab - uba).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn measurement_basics() {
        let c = SpinConfig::from_bits(0b110, 3);
        let s = StateVector::basis(&c).unwrap();
        let d = s.measure_distribution();
        assert_eq!(d.prob(&c), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(s.sample(20, &mut rng).iter().all(|x| *x == c));
        assert_eq!(s.measure_once(&mut rng), c);
        let q = run_qaoa(&random_model(5, &mut rng), &[0.3, 0.7], &[0.5, 0.2]).unwrap();
        let total: f64 = q.measure_distribution().probs().iter().sum();
        assert!((total - 1.0).abs() < NORM_TOLERANCE);
        let csv = q.measure_distribution().to_csv();
        assert!(csv.starts_with("bitstring,probability\n00000,"));
        assert_eq!(csv.lines().count(), 33);
    }

    #[test]
    fn sampling_passes_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let s = run_qaoa(&random_model(4, &mut rng), &[0.8, 0.3], &[0.4, 0.9]).unwrap();
        let dist = s.measure_distribution();
        let draws = 100_000;
        let mut counts = vec![0u64; 16];
        for c in s.sample(draws, &mut rng) {
            counts[c.bits() as usize] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(dist.probs())
            .map(|(&o, &p)| {
                let e = p * draws as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        let pval = 1.0 - ChiSquared::new(15.0).unwrap().cdf(chi2);
        assert!(pval > 0.001, "chi2 {chi2} p {pval}");
    }

    #[test]
    fn annealing_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_model(3, &mut rng);
        let short = run_annealing(&m, &AnnealSchedule::linear(1e-6)).unwrap();
        for p in short.measure_distribution().probs() {
            assert!((p - 0.125).abs() < 1e-6);
        }
        let mut diag_only = AnnealSchedule::linear(5.0);
        diag_only.a_of = |_| 0.0;
        let s = run_annealing(&m, &diag_only).unwrap();
        for p in s.measure_distribution().probs() {
            assert!((p - 0.125).abs() < 1e-12);
        }
        assert!(run_annealing(&m, &AnnealSchedule::linear(-1.0)).is_err());
        assert!(run_annealing_with_step(&m, &AnnealSchedule::linear(1.0), 0.0).is_err());
    }

    #[test]
    fn slow_annealing_finds_ground_state() {
        let m = IsingModel::from_fields_and_couplings(2, &[(0, 0.5)], &[(0, 1, -1.0)]).unwrap();
        let s = run_annealing(&m, &AnnealSchedule::linear(50.0)).unwrap();
        // unique ground state: both spins down
        assert!(s.measure_distribution().probs()[0b11] > 0.95);
    }
}
