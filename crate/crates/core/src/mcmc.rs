//! Metropolis–Hastings chains with pluggable proposals.
//!
//! Step accounting: a kernel update counts as 1 transition, a single-spin-flip
//! sweep as `N`, and a hybrid step (kernel update then sweep) as `N + 1`.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::{derive_seed, Execution};
use crate::made::MadeNetwork;
use crate::qsim::{evolve_fixed, MixedHamiltonian, StateVector, TrotterControl};
use crate::{Error, IsingModel, Result, SpinConfig, Temperature};

/// Generator owned by every chain.
pub type ChainRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelTag {
    Uniform,
    QeMcmc,
    Made,
    Ssf,
    Hybrid,
    PtIcm,
}

impl KernelTag {
    pub const ALL: [KernelTag; 6] = [
        KernelTag::Uniform,
        KernelTag::QeMcmc,
        KernelTag::Made,
        KernelTag::Ssf,
        KernelTag::Hybrid,
        KernelTag::PtIcm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelTag::Uniform => "uniform",
            KernelTag::QeMcmc => "qe-mcmc",
            KernelTag::Made => "made",
            KernelTag::Ssf => "ssf",
            KernelTag::Hybrid => "hybrid",
            KernelTag::PtIcm => "pt-icm",
        }
    }

    fn code(self) -> u8 {
        KernelTag::ALL.iter().position(|&t| t == self).unwrap() as u8
    }

    fn from_code(code: u8) -> Result<Self> {
        KernelTag::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::Parse(format!("unknown kernel tag {code}")))
    }
}

/// Proposal log-densities. `Symmetric` asserts `Q(σ'|σ) = Q(σ|σ')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogQ {
    Symmetric,
    Explicit { forward: f64, reverse: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub candidate: SpinConfig,
    pub log_q: LogQ,
}

pub trait ProposalKernel: Send {
    fn propose(&mut self, current: &SpinConfig, rng: &mut ChainRng) -> Result<Proposal>;

    fn tag(&self) -> KernelTag;

    /// Exact `Q(·|current)` over all `2^N` states, when it is cheap to list.
    fn proposal_distribution(&self, _current: &SpinConfig) -> Option<Vec<f64>> {
        None
    }
}

/// Uniform independence proposal over all `2^N` states.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformKernel;

impl ProposalKernel for UniformKernel {
    fn propose(&mut self, current: &SpinConfig, rng: &mut ChainRng) -> Result<Proposal> {
        Ok(Proposal {
            candidate: SpinConfig::random(current.len(), rng),
            log_q: LogQ::Symmetric,
        })
    }

    fn tag(&self) -> KernelTag {
        KernelTag::Uniform
    }

    fn proposal_distribution(&self, current: &SpinConfig) -> Option<Vec<f64>> {
        let dim = 1usize << current.len();
        Some(vec![1.0 / dim as f64; dim])
    }
}

/// Independence proposal drawn from a trained network.
#[derive(Debug, Clone, Copy)]
pub struct MadeKernel<'a> {
    net: &'a MadeNetwork,
}

impl<'a> MadeKernel<'a> {
    pub fn new(net: &'a MadeNetwork) -> Self {
        Self { net }
    }
}

impl ProposalKernel for MadeKernel<'_> {
    fn propose(&mut self, current: &SpinConfig, rng: &mut ChainRng) -> Result<Proposal> {
        let candidate = self.net.sample(rng);
        Ok(Proposal {
            candidate,
            log_q: LogQ::Explicit {
                forward: self.net.log_prob(&candidate)?,
                reverse: self.net.log_prob(current)?,
            },
        })
    }

    fn tag(&self) -> KernelTag {
        KernelTag::Made
    }

    fn proposal_distribution(&self, _current: &SpinConfig) -> Option<Vec<f64>> {
        self.net.exhaustive_probs().ok()
    }
}

/// Ranges for the per-proposal draw of mixing weight and evolution time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QeHyper {
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub time_min: f64,
    pub time_max: f64,
    /// Step-doubling tolerance for the proposal evolution. Any step count
    /// keeps `U = Uᵀ`, so this trades proposal fidelity for speed only.
    #[serde(default = "default_trotter_tolerance")]
    pub trotter_tolerance: f64,
}

fn default_trotter_tolerance() -> f64 {
    1e-3
}

impl Default for QeHyper {
    fn default() -> Self {
        Self {
            gamma_min: 0.25,
            gamma_max: 0.6,
            time_min: 2.0,
            time_max: 20.0,
            trotter_tolerance: default_trotter_tolerance(),
        }
    }
}

/// Proposal by measuring `exp(−iHt)|σ⟩` with `H = (1−γ)αH_P + γH_d`.
///
/// `(γ, t)` is redrawn before every proposal. For a fixed draw the
/// propagator is symmetric, so the proposal is reported as symmetric.
#[derive(Debug, Clone)]
pub struct QeMcmcKernel {
    n_sites: usize,
    energies: Vec<f64>,
    offset: f64,
    hyper: QeHyper,
    scratch: StateVector,
}

impl QeMcmcKernel {
    pub fn new(model: &IsingModel, hyper: QeHyper) -> Result<Self> {
        if !(0.0..=1.0).contains(&hyper.gamma_min)
            || !(hyper.gamma_min..=1.0).contains(&hyper.gamma_max)
            || hyper.time_min < 0.0
            || hyper.time_max < hyper.time_min
        {
            return Err(Error::InvalidArgument(format!("bad Qe-MCMC ranges {hyper:?}")));
        }
        let n = model.n_sites();
        Ok(Self {
            n_sites: n,
            energies: model.energy_table(Execution::Sequential)?,
            offset: model.offset(),
            hyper,
            scratch: StateVector::uniform(n)?,
        })
    }

    pub fn hyper(&self) -> QeHyper {
        self.hyper
    }

    fn control(&self) -> TrotterControl {
        TrotterControl {
            tolerance: self.hyper.trotter_tolerance,
            ..Default::default()
        }
    }

    pub fn hamiltonian(&self, gamma: f64) -> Result<MixedHamiltonian> {
        MixedHamiltonian::from_energies(self.n_sites, self.energies.clone(), self.offset, gamma)
    }

    /// `|⟨σ'|U(γ, t)|σ⟩|²` for every `σ'`.
    pub fn transition_probs(&mut self, current: &SpinConfig, gamma: f64, time: f64) -> Result<Vec<f64>> {
        let ham = self.hamiltonian(gamma)?;
        self.scratch.set_basis(current)?;
        let (out, _) = evolve_fixed(&self.scratch, &ham, time, self.control())?;
        Ok(out.measure_distribution().probs().to_vec())
    }

    /// One measurement outcome for fixed `(γ, t)`.
    pub fn propose_fixed(&mut self, current: &SpinConfig, gamma: f64, time: f64, rng: &mut ChainRng) -> Result<SpinConfig> {
        let ham = self.hamiltonian(gamma)?;
        self.scratch.set_basis(current)?;
        let (out, _) = evolve_fixed(&self.scratch, &ham, time, self.control())?;
        Ok(out.measure_once(rng))
    }
}

impl ProposalKernel for QeMcmcKernel {
    fn propose(&mut self, current: &SpinConfig, rng: &mut ChainRng) -> Result<Proposal> {
        if current.len() != self.n_sites {
            return Err(Error::Dimension {
                expected: self.n_sites,
                actual: current.len(),
            });
        }
        let gamma = rng.gen_range(self.hyper.gamma_min..=self.hyper.gamma_max);
        let time = rng.gen_range(self.hyper.time_min..=self.hyper.time_max);
        Ok(Proposal {
            candidate: self.propose_fixed(current, gamma, time, rng)?,
            log_q: LogQ::Symmetric,
        })
    }

    fn tag(&self) -> KernelTag {
        KernelTag::QeMcmc
    }
}

/// Current state of one chain with its cached energy and generator.
#[derive(Debug, Clone)]
pub struct ChainState {
    current: SpinConfig,
    energy: f64,
    step_index: u64,
    transitions: u64,
    rng: ChainRng,
}

impl ChainState {
    pub fn new(model: &IsingModel, init: &Init, seed: u64) -> Result<Self> {
        let mut rng = ChainRng::seed_from_u64(seed);
        let current = match init {
            Init::Random => SpinConfig::random(model.n_sites(), &mut rng),
            Init::Given(c) => *c,
        };
        Ok(Self {
            energy: model.energy(&current)?,
            current,
            step_index: 0,
            transitions: 0,
            rng,
        })
    }

    pub fn current(&self) -> SpinConfig {
        self.current
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    /// Transitions performed so far, under the module's accounting.
    pub fn transitions(&self) -> u64 {
        self.transitions
    }

    pub fn rng(&mut self) -> &mut ChainRng {
        &mut self.rng
    }

    pub(crate) fn set(&mut self, config: SpinConfig, energy: f64) {
        self.current = config;
        self.energy = energy;
    }
}

/// Metropolis–Hastings log acceptance `−βΔE + log q_rev − log q_fwd`.
pub fn log_acceptance(beta: f64, delta_e: f64, log_q: LogQ) -> f64 {
    let q = match log_q {
        LogQ::Symmetric => 0.0,
        LogQ::Explicit { forward, reverse } => reverse - forward,
    };
    if delta_e == 0.0 {
        q
    } else {
        -beta * delta_e + q
    }
}

fn accept(log_a: f64, rng: &mut ChainRng) -> bool {
    log_a >= 0.0 || rng.gen::<f64>() < log_a.exp()
}

/// One proposal plus accept/reject. Returns whether the move was accepted.
pub fn mh_step(
    chain: &mut ChainState,
    model: &IsingModel,
    t: Temperature,
    kernel: &mut dyn ProposalKernel,
) -> Result<bool> {
    let proposal = kernel.propose(&chain.current, &mut chain.rng)?;
    if proposal.candidate.len() != chain.current.len() {
        return Err(Error::Contract(format!(
            "kernel proposed {} sites for a {}-site chain",
            proposal.candidate.len(),
            chain.current.len()
        )));
    }
    let new_energy = model.energy(&proposal.candidate)?;
    let log_a = log_acceptance(t.beta(), new_energy - chain.energy, proposal.log_q);
    if log_a.is_nan() {
        return Err(Error::Contract(format!("NaN acceptance from {:?}", proposal.log_q)));
    }
    chain.transitions += 1;
    let accepted = accept(log_a, &mut chain.rng);
    if accepted {
        chain.set(proposal.candidate, new_energy);
    }
    Ok(accepted)
}

/// `N` single-site Metropolis updates in a fresh random site order.
/// Returns the number of accepted flips.
pub fn ssf_sweep(chain: &mut ChainState, model: &IsingModel, t: Temperature) -> usize {
    let n = model.n_sites();
    let mut sites: Vec<usize> = (0..n).collect();
    sites.shuffle(&mut chain.rng);
    let beta = t.beta();
    let mut accepted = 0;
    let mut bits = chain.current.bits();
    let mut energy = chain.energy;
    for site in sites {
        let delta = model.delta_energy_flip_unchecked(bits, site);
        if accept(log_acceptance(beta, delta, LogQ::Symmetric), &mut chain.rng) {
            bits ^= 1 << site;
            energy += delta;
            accepted += 1;
        }
    }
    chain.transitions += n as u64;
    if accepted > 0 {
        let config = SpinConfig::from_bits(bits, n);
        // refresh the cache so summed deltas never drift
        chain.set(config, model.energy_of_bits(bits));
        debug_assert!((energy - chain.energy).abs() < 1e-6);
    }
    accepted
}

/// One kernel MH step followed by one SSF sweep. Returns whether the kernel
/// move was accepted.
pub fn step_qaoa_hmc(
    chain: &mut ChainState,
    model: &IsingModel,
    t: Temperature,
    kernel: &mut dyn ProposalKernel,
) -> Result<bool> {
    let accepted = mh_step(chain, model, t, kernel)?;
    ssf_sweep(chain, model, t);
    Ok(accepted)
}

/// What one chain step does.
pub enum Update<'a> {
    Kernel(Box<dyn ProposalKernel + 'a>),
    Ssf,
    Hybrid(Box<dyn ProposalKernel + 'a>),
}

impl Update<'_> {
    pub fn tag(&self) -> KernelTag {
        match self {
            Update::Kernel(k) => k.tag(),
            Update::Ssf => KernelTag::Ssf,
            Update::Hybrid(_) => KernelTag::Hybrid,
        }
    }

    pub fn transitions_per_step(&self, n_sites: usize) -> u64 {
        match self {
            Update::Kernel(_) => 1,
            Update::Ssf => n_sites as u64,
            Update::Hybrid(_) => n_sites as u64 + 1,
        }
    }

    /// Advances the chain by one step. For sweeps, "accepted" means at least
    /// one flip was accepted; for hybrids it refers to the kernel move.
    pub fn apply(&mut self, chain: &mut ChainState, model: &IsingModel, t: Temperature) -> Result<bool> {
        let accepted = match self {
            Update::Kernel(k) => mh_step(chain, model, t, k.as_mut())?,
            Update::Ssf => ssf_sweep(chain, model, t) > 0,
            Update::Hybrid(k) => step_qaoa_hmc(chain, model, t, k.as_mut())?,
        };
        chain.step_index += 1;
        Ok(accepted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Random,
    Given(SpinConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainOptions {
    pub steps: u64,
    pub thinning: u64,
    pub burn_in: u64,
    pub seed: u64,
}

impl ChainOptions {
    pub fn new(steps: u64, seed: u64) -> Self {
        Self {
            steps,
            thinning: 1,
            burn_in: 0,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    /// 1-based index of the step that produced this state.
    pub step: u64,
    pub state: SpinConfig,
    pub energy: f64,
    pub accepted: bool,
    pub tag: KernelTag,
}

/// Recorded states of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    pub n_sites: usize,
    pub thinning: u64,
    pub transitions_per_step: u64,
    pub records: Vec<TraceRecord>,
}

const TRACE_MAGIC: &[u8; 4] = b"FSTR";
const TRACE_VERSION: u32 = 1;

impl ChainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = SpinConfig> + '_ {
        self.records.iter().map(|r| r.state)
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.accepted).count() as f64 / self.records.len() as f64
    }

    /// Transitions spent up to and including record `index`.
    pub fn transitions_at(&self, index: usize) -> u64 {
        self.records[index].step * self.transitions_per_step
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,bitstring,energy,accepted,kernel_tag\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step,
                r.state.bitstring(),
                r.energy,
                r.accepted as u8,
                r.tag.name()
            ));
        }
        out
    }

    /// Little-endian rows of `(step u64, bits u64, energy f64, accepted u8, tag u8)`
    /// after a short header.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TRACE_MAGIC)?;
        w.write_all(&TRACE_VERSION.to_le_bytes())?;
        w.write_all(&[self.n_sites as u8])?;
        w.write_all(&self.thinning.to_le_bytes())?;
        w.write_all(&self.transitions_per_step.to_le_bytes())?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for r in &self.records {
            w.write_all(&r.step.to_le_bytes())?;
            w.write_all(&r.state.bits().to_le_bytes())?;
            w.write_all(&r.energy.to_le_bytes())?;
            w.write_all(&[r.accepted as u8, r.tag.code()])?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        fn u64_of<R: Read>(r: &mut R) -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        }
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        let mut version = [0u8; 4];
        r.read_exact(&mut version)?;
        if &magic != TRACE_MAGIC || u32::from_le_bytes(version) != TRACE_VERSION {
            return Err(Error::Parse("not a version-1 chain trace".into()));
        }
        let mut n = [0u8; 1];
        r.read_exact(&mut n)?;
        let n_sites = n[0] as usize;
        let thinning = u64_of(&mut r)?;
        let transitions_per_step = u64_of(&mut r)?;
        let count = u64_of(&mut r)?;
        let mut records = Vec::with_capacity(count.min(1 << 24) as usize);
        for _ in 0..count {
            let step = u64_of(&mut r)?;
            let bits = u64_of(&mut r)?;
            let energy = f64::from_bits(u64_of(&mut r)?);
            let mut flags = [0u8; 2];
            r.read_exact(&mut flags)?;
            records.push(TraceRecord {
                step,
                state: SpinConfig::from_bits(bits, n_sites),
                energy,
                accepted: flags[0] != 0,
                tag: KernelTag::from_code(flags[1])?,
            });
        }
        Ok(Self {
            n_sites,
            thinning,
            transitions_per_step,
            records,
        })
    }
}

/// Runs one seeded chain. Records the state after step `s` (1-based) when
/// `s > burn_in` and `(s − burn_in)` is a multiple of `thinning`.
pub fn run_chain(
    model: &IsingModel,
    t: Temperature,
    update: &mut Update,
    init: &Init,
    opts: &ChainOptions,
) -> Result<ChainTrace> {
    if opts.steps == 0 || opts.thinning == 0 {
        return Err(Error::InvalidArgument("steps and thinning must be at least 1".into()));
    }
    if let Init::Given(c) = init {
        if c.len() != model.n_sites() {
            return Err(Error::Dimension {
                expected: model.n_sites(),
                actual: c.len(),
            });
        }
    }
    let mut chain = ChainState::new(model, init, opts.seed)?;
    let tag = update.tag();
    let kept = opts.steps.saturating_sub(opts.burn_in) / opts.thinning;
    let mut records = Vec::with_capacity(kept as usize);
    for s in 1..=opts.steps {
        let accepted = update.apply(&mut chain, model, t)?;
        if s > opts.burn_in && (s - opts.burn_in) % opts.thinning == 0 {
            records.push(TraceRecord {
                step: s,
                state: chain.current,
                energy: chain.energy,
                accepted,
                tag,
            });
        }
    }
    Ok(ChainTrace {
        n_sites: model.n_sites(),
        thinning: opts.thinning,
        transitions_per_step: update.transitions_per_step(model.n_sites()),
        records,
    })
}

/// Runs `n_chains` independent chains, chain `i` seeded with
/// `derive_seed(opts.seed, i)`. Results come back in chain order.
pub fn run_chains<'a, F>(
    model: &IsingModel,
    t: Temperature,
    n_chains: usize,
    make_update: F,
    opts: &ChainOptions,
    exec: Execution,
) -> Result<Vec<ChainTrace>>
where
    F: Fn(usize) -> Result<Update<'a>> + Sync + Send,
{
    exec.try_map_range(n_chains, |i| {
        let mut update = make_update(i)?;
        let o = ChainOptions {
            seed: derive_seed(opts.seed, i as u64),
            ..*opts
        };
        run_chain(model, t, &mut update, &Init::Random, &o)
    })
}

/// Dense transition matrices for exact checks at small `N`. Row `z` holds
/// `P(z → ·)`.
pub mod exact {
    use super::*;

    pub type Matrix = Vec<Vec<f64>>;

    pub fn boltzmann(model: &IsingModel, t: Temperature) -> Result<Vec<f64>> {
        let e = model.energy_table(Execution::Sequential)?;
        let min = e.iter().copied().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = e.iter().map(|x| (-t.beta() * (x - min)).exp()).collect();
        let z: f64 = w.iter().sum();
        Ok(w.into_iter().map(|x| x / z).collect())
    }

    fn check_size(model: &IsingModel) -> Result<usize> {
        let n = model.n_sites();
        if n > 10 {
            return Err(Error::Capacity {
                what: "dense transition matrix sites",
                size: n,
                limit: 10,
            });
        }
        Ok(n)
    }

    /// MH matrix for a kernel exposing its proposal distribution.
    pub fn kernel_matrix(model: &IsingModel, t: Temperature, kernel: &dyn ProposalKernel) -> Result<Matrix> {
        let n = check_size(model)?;
        let dim = 1usize << n;
        let e = model.energy_table(Execution::Sequential)?;
        let q: Matrix = (0..dim)
            .map(|z| {
                kernel
                    .proposal_distribution(&SpinConfig::from_bits(z as u64, n))
                    .ok_or_else(|| Error::UnsupportedModel(format!("{} has no enumerable proposal", kernel.tag().name())))
            })
            .collect::<Result<_>>()?;
        let mut p = vec![vec![0.0; dim]; dim];
        for z in 0..dim {
            let mut stay = 1.0;
            for y in 0..dim {
                if y == z || q[z][y] == 0.0 {
                    continue;
                }
                let log_q = LogQ::Explicit {
                    forward: q[z][y].ln(),
                    reverse: q[y][z].ln(),
                };
                let a = log_acceptance(t.beta(), e[y] - e[z], log_q).exp().min(1.0);
                p[z][y] = q[z][y] * a;
                stay -= p[z][y];
            }
            p[z][z] = stay;
        }
        Ok(p)
    }

    /// Metropolis update of one fixed site.
    pub fn site_matrix(model: &IsingModel, t: Temperature, site: usize) -> Result<Matrix> {
        let n = check_size(model)?;
        let dim = 1usize << n;
        let mut p = vec![vec![0.0; dim]; dim];
        for z in 0..dim {
            let d = model.delta_energy_flip_unchecked(z as u64, site);
            let a = log_acceptance(t.beta(), d, LogQ::Symmetric).exp().min(1.0);
            p[z][z ^ (1 << site)] = a;
            p[z][z] = 1.0 - a;
        }
        Ok(p)
    }

    pub fn multiply(a: &Matrix, b: &Matrix) -> Matrix {
        let dim = a.len();
        let mut out = vec![vec![0.0; dim]; dim];
        for i in 0..dim {
            for k in 0..dim {
                let aik = a[i][k];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..dim {
                    out[i][j] += aik * b[k][j];
                }
            }
        }
        out
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for slot in 0..=p.len() {
                let mut q = p.clone();
                q.insert(slot, n - 1);
                out.push(q);
            }
        }
        out
    }

    /// Sweep matrix averaged over all `N!` site orders.
    pub fn sweep_matrix(model: &IsingModel, t: Temperature) -> Result<Matrix> {
        let n = check_size(model)?;
        if n > 6 {
            return Err(Error::Capacity {
                what: "sweep permutation enumeration sites",
                size: n,
                limit: 6,
            });
        }
        let sites: Vec<Matrix> = (0..n).map(|i| site_matrix(model, t, i)).collect::<Result<_>>()?;
        let dim = 1usize << n;
        let perms = permutations(n);
        let mut total = vec![vec![0.0; dim]; dim];
        for perm in &perms {
            let mut m = sites[perm[0]].clone();
            for &s in &perm[1..] {
                m = multiply(&m, &sites[s]);
            }
            for (row, mrow) in total.iter_mut().zip(&m) {
                for (x, y) in row.iter_mut().zip(mrow) {
                    *x += y / perms.len() as f64;
                }
            }
        }
        Ok(total)
    }

    /// `max |π_z P_zy − π_y P_yz|`.
    pub fn detailed_balance_violation(pi: &[f64], p: &Matrix) -> f64 {
        let mut worst = 0.0f64;
        for z in 0..pi.len() {
            for y in 0..pi.len() {
                worst = worst.max((pi[z] * p[z][y] - pi[y] * p[y][z]).abs());
            }
        }
        worst
    }

    /// `‖πP − π‖₁`.
    pub fn stationarity_violation(pi: &[f64], p: &Matrix) -> f64 {
        (0..pi.len())
            .map(|y| {
                let flow: f64 = (0..pi.len()).map(|z| pi[z] * p[z][y]).sum();
                (flow - pi[y]).abs()
            })
            .sum()
    }

    /// Largest deviation of a row sum from 1.
    pub fn row_sum_violation(p: &Matrix) -> f64 {
        p.iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::exact::*;
    use super::*;
    use crate::fixtures;
    use crate::IsingTerm;

    fn random_model(n: usize, seed: u64) -> IsingModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut terms = Vec::new();
        for i in 0..n {
            terms.push(IsingTerm::new(vec![i], rng.gen_range(-1.0..1.0)));
            for j in i + 1..n {
                terms.push(IsingTerm::new(vec![i, j], rng.gen_range(-1.0..1.0)));
            }
        }
        IsingModel::new(n, terms, 0.3).unwrap()
    }

    fn trained_like_net(n: usize, seed: u64) -> MadeNetwork {
        let mut net = MadeNetwork::random(n, &[4 * n], seed).unwrap();
        let p: Vec<f64> = net.parameters().iter().map(|w| 3.0 * w).collect();
        net.set_parameters(&p).unwrap();
        net
    }

    #[test]
    fn downhill_always_accepted() {
        let model = IsingModel::from_fields_and_couplings(2, &[(0, 1.0)], &[]).unwrap();
        // from +1 (E=1) to −1 (E=−1) is downhill for any β
        struct Flip;
        impl ProposalKernel for Flip {
            fn propose(&mut self, c: &SpinConfig, _: &mut ChainRng) -> Result<Proposal> {
                Ok(Proposal { candidate: c.flipped(0), log_q: LogQ::Symmetric })
            }
            fn tag(&self) -> KernelTag {
                KernelTag::Uniform
            }
        }
        for seed in 0..100 {
            let mut chain = ChainState::new(&model, &Init::Given(SpinConfig::all_up(2)), seed).unwrap();
            assert!(mh_step(&mut chain, &model, Temperature::new(5.0).unwrap(), &mut Flip).unwrap());
            assert_eq!(chain.energy(), -1.0);
        }
    }

    #[test]
    fn uphill_acceptance_frequency() {
        let model = IsingModel::from_fields_and_couplings(1, &[(0, 0.5)], &[]).unwrap();
        struct Flip;
        impl ProposalKernel for Flip {
            fn propose(&mut self, c: &SpinConfig, _: &mut ChainRng) -> Result<Proposal> {
                Ok(Proposal { candidate: c.flipped(0), log_q: LogQ::Symmetric })
            }
            fn tag(&self) -> KernelTag {
                KernelTag::Uniform
            }
        }
        let t = Temperature::new(1.3).unwrap();
        let down = SpinConfig::from_bits(1, 1);
        let trials = 100_000;
        let mut chain = ChainState::new(&model, &Init::Given(down), 3).unwrap();
        let mut hits = 0;
        for _ in 0..trials {
            chain.set(down, -0.5);
            if mh_step(&mut chain, &model, t, &mut Flip).unwrap() {
                hits += 1;
            }
        }
        let p = (-1.3f64).exp();
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((hits as f64 / trials as f64 - p).abs() < 3.0 * sigma);
    }

    #[test]
    fn exact_detailed_balance_for_enumerable_kernels() {
        let model = random_model(4, 1);
        let t = Temperature::new(1.7).unwrap();
        let pi = boltzmann(&model, t).unwrap();
        let net = trained_like_net(4, 2);
        let made = MadeKernel::new(&net);
        for kernel in [&UniformKernel as &dyn ProposalKernel, &made] {
            let p = kernel_matrix(&model, t, kernel).unwrap();
            assert!(row_sum_violation(&p) < 1e-12);
            assert!(detailed_balance_violation(&pi, &p) < 1e-10);
            assert!(stationarity_violation(&pi, &p) < 1e-9);
        }
    }

    #[test]
    fn sweep_and_hybrid_are_stationary() {
        let model = random_model(4, 3);
        let t = Temperature::new(2.0).unwrap();
        let pi = boltzmann(&model, t).unwrap();
        let sweep = sweep_matrix(&model, t).unwrap();
        assert!(row_sum_violation(&sweep) < 1e-12);
        assert!(stationarity_violation(&pi, &sweep) < 1e-9);
        for i in 0..4 {
            let site = site_matrix(&model, t, i).unwrap();
            assert!(detailed_balance_violation(&pi, &site) < 1e-12);
        }
        let net = trained_like_net(4, 4);
        let made = kernel_matrix(&model, t, &MadeKernel::new(&net)).unwrap();
        let hybrid = multiply(&made, &sweep);
        assert!(stationarity_violation(&pi, &hybrid) < 1e-9);
    }

    #[test]
    fn zero_beta_sweep_flips_every_site() {
        let model = random_model(6, 5);
        let mut chain = ChainState::new(&model, &Init::Random, 1).unwrap();
        let before = chain.current();
        let flips = ssf_sweep(&mut chain, &model, Temperature::new(0.0).unwrap());
        assert_eq!(flips, 6);
        assert_eq!(chain.current(), before.negated());
        assert_eq!(chain.transitions(), 6);
    }

    #[test]
    fn huge_beta_sweep_only_descends() {
        let model = random_model(8, 6);
        let t = Temperature::new(1e6).unwrap();
        let mut chain = ChainState::new(&model, &Init::Random, 2).unwrap();
        for _ in 0..20 {
            let before = chain.energy();
            ssf_sweep(&mut chain, &model, t);
            assert!(chain.energy() <= before + 1e-12);
            let recomputed = model.energy(&chain.current()).unwrap();
            assert!((recomputed - chain.energy()).abs() < 1e-12);
        }
    }

    #[test]
    fn made_proposal_ignores_current_state() {
        let net = trained_like_net(5, 7);
        let mut kernel = MadeKernel::new(&net);
        let mut a = ChainRng::seed_from_u64(9);
        let mut b = ChainRng::seed_from_u64(9);
        for _ in 0..100 {
            let x = kernel.propose(&SpinConfig::from_bits(0, 5), &mut a).unwrap();
            let y = kernel.propose(&SpinConfig::from_bits(31, 5), &mut b).unwrap();
            assert_eq!(x.candidate, y.candidate);
        }
        // a zero net reduces to a uniform independence sampler
        let zero = MadeNetwork::zeros(5, &[20], None).unwrap();
        let p = MadeKernel::new(&zero).propose(&SpinConfig::all_up(5), &mut a).unwrap();
        match p.log_q {
            LogQ::Explicit { forward, reverse } => assert!((forward - reverse).abs() < 1e-12),
            LogQ::Symmetric => panic!("expected explicit densities"),
        }
    }

    #[test]
    fn qe_zero_time_proposes_current() {
        let model = fixtures::sixfold();
        let mut k = QeMcmcKernel::new(
            &model,
            QeHyper {
                time_min: 0.0,
                time_max: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        let mut rng = ChainRng::seed_from_u64(1);
        let c = SpinConfig::from_bits(0b10110, 5);
        for _ in 0..10 {
            assert_eq!(k.propose(&c, &mut rng).unwrap().candidate, c);
        }
    }

    #[test]
    fn qe_proposal_is_symmetric() {
        let model = random_model(4, 8);
        let mut k = QeMcmcKernel::new(&model, QeHyper::default()).unwrap();
        let (gamma, time) = (0.4, 3.7);
        let probs: Vec<Vec<f64>> = (0..16)
            .map(|z| k.transition_probs(&SpinConfig::from_bits(z, 4), gamma, time).unwrap())
            .collect();
        for z in 0..16 {
            assert!((probs[z].iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for y in 0..16 {
                assert!((probs[z][y] - probs[y][z]).abs() < 1e-6, "{z} {y}");
            }
        }
        // Monte Carlo estimate from both endpoints
        let (a, b) = (SpinConfig::from_bits(0b0011, 4), SpinConfig::from_bits(0b0101, 4));
        let mut rng = ChainRng::seed_from_u64(2);
        let draws = 4000;
        let fwd = (0..draws).filter(|_| k.propose_fixed(&a, gamma, time, &mut rng).unwrap() == b).count();
        let rev = (0..draws).filter(|_| k.propose_fixed(&b, gamma, time, &mut rng).unwrap() == a).count();
        let p = probs[a.bits() as usize][b.bits() as usize];
        let sigma = (2.0 * p * (1.0 - p) / draws as f64).sqrt().max(1e-3);
        assert!(((fwd as f64 - rev as f64) / draws as f64).abs() < 3.0 * sigma);
    }

    #[test]
    fn qe_chain_visits_all_sixfold_ground_states() {
        let model = fixtures::sixfold();
        let gs = model.ground_states_bruteforce().unwrap();
        let t = Temperature::new(10.0).unwrap();
        let mut update = Update::Kernel(Box::new(QeMcmcKernel::new(&model, QeHyper::default()).unwrap()));
        let trace = run_chain(&model, t, &mut update, &Init::Random, &ChainOptions::new(1000, 11)).unwrap();
        let mut counts = vec![0usize; gs.degeneracy()];
        for s in trace.states() {
            if let Some(i) = gs.index_of(&s) {
                counts[i] += 1;
            }
        }
        assert!(counts.iter().all(|&c| c >= 20), "{counts:?}");
    }

    #[test]
    fn run_chain_basics() {
        let model = random_model(5, 9);
        let t = Temperature::new(1.0).unwrap();
        let mut u = Update::Ssf;
        let one = run_chain(&model, t, &mut u, &Init::Random, &ChainOptions::new(1, 4)).unwrap();
        assert_eq!(one.len(), 1);
        let opts = ChainOptions { steps: 103, thinning: 10, burn_in: 3, seed: 4 };
        let a = run_chain(&model, t, &mut u, &Init::Random, &opts).unwrap();
        let b = run_chain(&model, t, &mut u, &Init::Random, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert_eq!(a.records[0].step, 13);
        assert_eq!(a.transitions_at(0), 13 * 5);
        for r in &a.records {
            assert!((model.energy(&r.state).unwrap() - r.energy).abs() < 1e-12);
        }
        assert!(run_chain(&model, t, &mut u, &Init::Random, &ChainOptions::new(0, 1)).is_err());
    }

    #[test]
    fn step_accounting() {
        let model = random_model(5, 10);
        let net = MadeNetwork::zeros(5, &[20], None).unwrap();
        let t = Temperature::new(1.0).unwrap();
        let mut chain = ChainState::new(&model, &Init::Random, 0).unwrap();
        let mut u = Update::Hybrid(Box::new(MadeKernel::new(&net)));
        assert_eq!(u.transitions_per_step(5), 6);
        u.apply(&mut chain, &model, t).unwrap();
        assert_eq!(chain.transitions(), 6);
        assert_eq!(chain.step_index(), 1);
        assert_eq!(Update::Kernel(Box::new(UniformKernel)).transitions_per_step(5), 1);
        assert_eq!(Update::Ssf.transitions_per_step(5), 5);
    }

    #[test]
    fn cold_chain_sits_in_ground_states() {
        let model = fixtures::small_instance("threefold").unwrap().unwrap();
        let gs = model.ground_states_bruteforce().unwrap();
        let t = Temperature::new(10.0).unwrap();
        let pi = boltzmann(&model, t).unwrap();
        let exact_gs: f64 = gs.states.iter().map(|s| pi[s.bits() as usize]).sum();
        assert!(exact_gs > 0.99);
        let mut u = Update::Ssf;
        let opts = ChainOptions { burn_in: 50, ..ChainOptions::new(1050, 5) };
        let trace = run_chain(&model, t, &mut u, &Init::Random, &opts).unwrap();
        let hits = trace.states().filter(|s| gs.contains(s)).count();
        assert!(hits as f64 / trace.len() as f64 > 0.9);
    }

    #[test]
    fn long_ssf_chain_matches_boltzmann() {
        let model = random_model(4, 12);
        let t = Temperature::new(1.0).unwrap();
        let pi = boltzmann(&model, t).unwrap();
        let mut u = Update::Ssf;
        let trace = run_chain(&model, t, &mut u, &Init::Random, &ChainOptions::new(1_000_000, 13)).unwrap();
        let mut freq = vec![0.0; 16];
        for s in trace.states() {
            freq[s.bits() as usize] += 1.0 / trace.len() as f64;
        }
        let tvd: f64 = 0.5 * freq.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum::<f64>();
        assert!(tvd < 0.02, "{tvd}");
    }

    #[test]
    fn trace_exports_round_trip() {
        let model = random_model(5, 14);
        let net = trained_like_net(5, 1);
        let mut u = Update::Hybrid(Box::new(MadeKernel::new(&net)));
        let trace = run_chain(&model, Temperature::new(2.0).unwrap(), &mut u, &Init::Random, &ChainOptions::new(40, 1)).unwrap();
        let mut buf = Vec::new();
        trace.write_binary(&mut buf).unwrap();
        assert_eq!(ChainTrace::read_binary(buf.as_slice()).unwrap(), trace);
        let csv = trace.to_csv();
        assert_eq!(csv.lines().count(), 41);
        assert!(csv.lines().nth(1).unwrap().ends_with(",hybrid"));
        assert!(ChainTrace::read_binary(&b"nope"[..]).is_err());
    }

    #[test]
    fn parallel_chains_match_sequential() {
        let model = random_model(6, 15);
        let t = Temperature::new(1.0).unwrap();
        let opts = ChainOptions::new(200, 3);
        let make = |_| Ok(Update::Ssf);
        let a = run_chains(&model, t, 4, make, &opts, Execution::Parallel).unwrap();
        let b = run_chains(&model, t, 4, make, &opts, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }
}
