//! Classical baselines: parallel tempering with Houdayer cluster moves for
//! two-body Ising models, and WalkSAT / WalkSATlm for CNF formulas.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::{derive_seed, Execution};
use crate::mcmc::{ssf_sweep, ChainState, ChainTrace, Init, KernelTag, TraceRecord};
use crate::sat::{add_blocking_clause, is_unsat, CnfFormula};
use crate::{Error, IsingModel, Result, SpinConfig, Temperature};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PtIcmConfig {
    /// Ascending inverse temperatures; the last one is the sampling target.
    pub replica_betas: Vec<f64>,
    pub replicas_per_temperature: usize,
    pub sweeps_between_exchanges: usize,
    /// ICM attempt every this many rounds; 0 disables ICM.
    pub icm_every: usize,
    pub rng_seed: u64,
}

impl Default for PtIcmConfig {
    fn default() -> Self {
        Self {
            replica_betas: geometric_ladder(0.1, 10.0, 8),
            replicas_per_temperature: 2,
            sweeps_between_exchanges: 1,
            icm_every: 1,
            rng_seed: 0,
        }
    }
}

/// `count` inverse temperatures spaced geometrically from `lo` to `hi`.
pub fn geometric_ladder(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![hi];
    }
    let ratio = (hi / lo).powf(1.0 / (count - 1) as f64);
    let mut betas: Vec<f64> = (0..count).map(|i| lo * ratio.powi(i as i32)).collect();
    betas[count - 1] = hi;
    betas
}

impl PtIcmConfig {
    fn validate(&self) -> Result<()> {
        let b = &self.replica_betas;
        if b.is_empty()
            || b.iter().any(|x| !(x.is_finite() && *x >= 0.0))
            || b.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidArgument(format!(
                "replica betas must be finite, non-negative and strictly ascending: {b:?}"
            )));
        }
        if self.replicas_per_temperature == 0 || self.sweeps_between_exchanges == 0 {
            return Err(Error::InvalidArgument(
                "need at least one replica per temperature and one sweep per round".into(),
            ));
        }
        if self.icm_every > 0 && self.replicas_per_temperature % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "ICM pairs replicas, got {} per temperature",
                self.replicas_per_temperature
            )));
        }
        Ok(())
    }
}

/// Replica-exchange acceptance `min(1, exp((β_i − β_j)(E_i − E_j)))`.
pub fn exchange_acceptance(beta_i: f64, e_i: f64, beta_j: f64, e_j: f64) -> f64 {
    let x = (beta_i - beta_j) * (e_i - e_j);
    if x >= 0.0 {
        1.0
    } else {
        x.exp()
    }
}

fn require_two_body(model: &IsingModel) -> Result<()> {
    if model.max_order() > 2 {
        return Err(Error::UnsupportedModel(format!(
            "PT-ICM needs a two-body model, got terms of order {}",
            model.max_order()
        )));
    }
    Ok(())
}

/// Houdayer cluster mask: the q = −1 component containing a random
/// disagreeing site. Zero when the replicas agree everywhere.
fn icm_cluster<R: Rng + ?Sized>(a: u64, b: u64, adjacency: &[Vec<usize>], rng: &mut R) -> u64 {
    let diff = a ^ b;
    if diff == 0 {
        return 0;
    }
    let sites: Vec<usize> = (0..adjacency.len()).filter(|&i| diff >> i & 1 == 1).collect();
    let seed = sites[rng.gen_range(0..sites.len())];
    let mut cluster = 1u64 << seed;
    let mut queue = VecDeque::from([seed]);
    while let Some(i) = queue.pop_front() {
        for &j in &adjacency[i] {
            let bit = 1u64 << j;
            if diff & bit != 0 && cluster & bit == 0 {
                cluster |= bit;
                queue.push_back(j);
            }
        }
    }
    cluster
}

/// Houdayer move on a same-temperature replica pair. The pair energy
/// `E_a + E_b` is unchanged.
pub fn icm_move<R: Rng + ?Sized>(
    a: &SpinConfig,
    b: &SpinConfig,
    model: &IsingModel,
    rng: &mut R,
) -> Result<(SpinConfig, SpinConfig)> {
    require_two_body(model)?;
    for c in [a, b] {
        if c.len() != model.n_sites() {
            return Err(Error::Dimension {
                expected: model.n_sites(),
                actual: c.len(),
            });
        }
    }
    let mask = icm_cluster(a.bits(), b.bits(), &model.adjacency(), rng);
    Ok((a.flipped_mask(mask), b.flipped_mask(mask)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtIcmStats {
    /// Attempts and acceptances for each neighbouring temperature pair.
    pub exchange_attempts: Vec<u64>,
    pub exchange_accepts: Vec<u64>,
    pub icm_moves: u64,
    /// Nontrivial clusters flipped.
    pub icm_flips: u64,
    /// All replicas: sweeps count `N`, exchanges and ICM moves count 1.
    pub transitions_per_round: u64,
    /// Coldest replica only: its sweeps.
    pub coldest_transitions_per_round: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PtIcmResult {
    /// Coldest (largest β) replica after every round; `transitions_per_step`
    /// uses the all-replica convention.
    pub trace: ChainTrace,
    pub stats: PtIcmStats,
}

/// Runs `rounds` PT-ICM rounds: sweeps on every replica, neighbour
/// exchanges, then (every `icm_every` rounds) ICM on each replica pair.
pub fn pt_icm_run(model: &IsingModel, cfg: &PtIcmConfig, rounds: u64, exec: Execution) -> Result<PtIcmResult> {
    require_two_body(model)?;
    cfg.validate()?;
    if rounds == 0 {
        return Err(Error::InvalidArgument("need at least one round".into()));
    }
    let n = model.n_sites();
    let temps: Vec<Temperature> = cfg
        .replica_betas
        .iter()
        .map(|&b| Temperature::new(b))
        .collect::<Result<_>>()?;
    let n_t = temps.len();
    let r = cfg.replicas_per_temperature;
    // replica slot (temperature i, copy c) lives at i * r + c
    let mut replicas: Vec<ChainState> = (0..n_t * r)
        .map(|slot| ChainState::new(model, &Init::Random, derive_seed(cfg.rng_seed, slot as u64 + 1)))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.rng_seed, 0));
    let adjacency = model.adjacency();
    let exchanges_per_round = ((n_t - 1) * r) as u64;
    let icm_per_round = if cfg.icm_every > 0 { (n_t * r / 2) as u64 } else { 0 };
    let mut stats = PtIcmStats {
        exchange_attempts: vec![0; n_t.saturating_sub(1)],
        exchange_accepts: vec![0; n_t.saturating_sub(1)],
        icm_moves: 0,
        icm_flips: 0,
        transitions_per_round: (n_t * r * cfg.sweeps_between_exchanges * n) as u64
            + exchanges_per_round
            + icm_per_round / cfg.icm_every.max(1) as u64,
        coldest_transitions_per_round: (cfg.sweeps_between_exchanges * n) as u64,
    };
    let coldest = (n_t - 1) * r;
    let mut records = Vec::with_capacity(rounds as usize);
    for round in 1..=rounds {
        let before = replicas[coldest].current();
        exec.for_each_mut(&mut replicas, |slot, chain| {
            for _ in 0..cfg.sweeps_between_exchanges {
                ssf_sweep(chain, model, temps[slot / r]);
            }
        });
        for i in 0..n_t.saturating_sub(1) {
            for c in 0..r {
                let (lo, hi) = (i * r + c, (i + 1) * r + c);
                stats.exchange_attempts[i] += 1;
                let a = exchange_acceptance(
                    temps[i].beta(),
                    replicas[lo].energy(),
                    temps[i + 1].beta(),
                    replicas[hi].energy(),
                );
                if a >= 1.0 || rng.gen::<f64>() < a {
                    stats.exchange_accepts[i] += 1;
                    let (x, ex) = (replicas[lo].current(), replicas[lo].energy());
                    let (y, ey) = (replicas[hi].current(), replicas[hi].energy());
                    replicas[lo].set(y, ey);
                    replicas[hi].set(x, ex);
                }
            }
        }
        if cfg.icm_every > 0 && round % cfg.icm_every as u64 == 0 {
            for i in 0..n_t {
                for c in (0..r).step_by(2) {
                    let (p, q) = (i * r + c, i * r + c + 1);
                    let (a, b) = (replicas[p].current(), replicas[q].current());
                    let mask = icm_cluster(a.bits(), b.bits(), &adjacency, &mut rng);
                    stats.icm_moves += 1;
                    if mask != 0 {
                        stats.icm_flips += 1;
                        let (a2, b2) = (a.flipped_mask(mask), b.flipped_mask(mask));
                        let (ea, eb) = (model.energy(&a2)?, model.energy(&b2)?);
                        replicas[p].set(a2, ea);
                        replicas[q].set(b2, eb);
                    }
                }
            }
        }
        let state = replicas[coldest].current();
        records.push(TraceRecord {
            step: round,
            state,
            energy: replicas[coldest].energy(),
            accepted: state != before,
            tag: KernelTag::PtIcm,
        });
    }
    Ok(PtIcmResult {
        trace: ChainTrace {
            n_sites: n,
            thinning: 1,
            transitions_per_step: stats.transitions_per_round,
            records,
        },
        stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WalkSatVariant {
    Plain,
    Lm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkSatConfig {
    pub noise_p: f64,
    pub max_flips: u64,
    pub variant: WalkSatVariant,
    /// `(w_make1, w_make2)` for the lm tie-break score.
    pub lm_weights: (f64, f64),
    pub rng_seed: u64,
    /// Keep the flipped-variable sequence in the outcome.
    #[serde(default)]
    pub record_trace: bool,
}

impl Default for WalkSatConfig {
    fn default() -> Self {
        Self {
            noise_p: 0.5,
            max_flips: 1_000_000,
            variant: WalkSatVariant::Lm,
            lm_weights: (6.0, 1.0),
            rng_seed: 0,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkSatOutcome {
    pub solution: Option<SpinConfig>,
    pub flips: u64,
    pub initial: SpinConfig,
    /// Flipped variables in order, when `record_trace` is set.
    pub trace: Vec<u32>,
}

/// Incremental clause bookkeeping for local search.
struct SearchState {
    assignment: u64,
    true_count: Vec<u32>,
    /// Unsatisfied clause ids and each clause's slot in that list.
    unsat: Vec<usize>,
    unsat_pos: Vec<usize>,
    /// `occurrences[v]` lists `(clause, literal_is_negated)`.
    occurrences: Vec<Vec<(usize, bool)>>,
}

impl SearchState {
    fn new(formula: &CnfFormula, assignment: u64) -> Self {
        let mut occurrences = vec![Vec::new(); formula.n_vars()];
        for (c, clause) in formula.clauses().iter().enumerate() {
            for l in clause.literals() {
                occurrences[l.variable].push((c, l.negated));
            }
        }
        let mut s = Self {
            assignment,
            true_count: vec![0; formula.num_clauses()],
            unsat: Vec::new(),
            unsat_pos: vec![usize::MAX; formula.num_clauses()],
            occurrences,
        };
        for (c, clause) in formula.clauses().iter().enumerate() {
            s.true_count[c] = clause.literals().iter().filter(|l| l.is_true(assignment)).count() as u32;
            if s.true_count[c] == 0 {
                s.push_unsat(c);
            }
        }
        s
    }

    fn push_unsat(&mut self, c: usize) {
        self.unsat_pos[c] = self.unsat.len();
        self.unsat.push(c);
    }

    fn remove_unsat(&mut self, c: usize) {
        let pos = self.unsat_pos[c];
        let last = *self.unsat.last().unwrap();
        self.unsat.swap_remove(pos);
        if last != c {
            self.unsat_pos[last] = pos;
        }
        self.unsat_pos[c] = usize::MAX;
    }

    fn literal_true(&self, v: usize, negated: bool) -> bool {
        (self.assignment >> v & 1 == 1) != negated
    }

    /// `(break, make1, make2)` for flipping `v`.
    fn scores(&self, v: usize) -> (u32, u32, u32) {
        let (mut brk, mut make1, mut make2) = (0, 0, 0);
        for &(c, neg) in &self.occurrences[v] {
            let tc = self.true_count[c];
            if self.literal_true(v, neg) {
                if tc == 1 {
                    brk += 1;
                }
            } else if tc == 0 {
                make1 += 1;
            } else if tc == 1 {
                make2 += 1;
            }
        }
        (brk, make1, make2)
    }

    fn flip(&mut self, v: usize) {
        for k in 0..self.occurrences[v].len() {
            let (c, neg) = self.occurrences[v][k];
            if self.literal_true(v, neg) {
                self.true_count[c] -= 1;
                if self.true_count[c] == 0 {
                    self.push_unsat(c);
                }
            } else {
                self.true_count[c] += 1;
                if self.true_count[c] == 1 {
                    self.remove_unsat(c);
                }
            }
        }
        self.assignment ^= 1 << v;
    }
}

/// Uniformly random element among those maximizing `key`.
fn argmax_random<R: Rng + ?Sized, K: PartialOrd + Copy>(items: &[usize], key: impl Fn(usize) -> K, rng: &mut R) -> usize {
    let mut best: Vec<usize> = Vec::new();
    let mut best_key: Option<K> = None;
    for &v in items {
        let k = key(v);
        match best_key {
            Some(b) if k < b => {}
            Some(b) if k == b => best.push(v),
            _ => {
                best_key = Some(k);
                best.clear();
                best.push(v);
            }
        }
    }
    best[rng.gen_range(0..best.len())]
}

/// WalkSAT from a uniformly random assignment.
pub fn walksat_run(formula: &CnfFormula, cfg: &WalkSatConfig) -> Result<WalkSatOutcome> {
    if !(0.0..=1.0).contains(&cfg.noise_p) {
        return Err(Error::InvalidArgument(format!("noise must lie in [0, 1], got {}", cfg.noise_p)));
    }
    let n = formula.n_vars();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let initial = SpinConfig::random(n, &mut rng);
    let mut state = SearchState::new(formula, initial.bits());
    let mut trace = Vec::new();
    let mut flips = 0u64;
    let (w1, w2) = cfg.lm_weights;
    let lmake = |m1: u32, m2: u32| w1 * m1 as f64 + w2 * m2 as f64;
    while !state.unsat.is_empty() {
        if flips >= cfg.max_flips {
            return Ok(WalkSatOutcome {
                solution: None,
                flips,
                initial,
                trace,
            });
        }
        let clause = state.unsat[rng.gen_range(0..state.unsat.len())];
        let vars: Vec<usize> = formula.clauses()[clause].literals().iter().map(|l| l.variable).collect();
        let scores: Vec<(u32, u32, u32)> = vars.iter().map(|&v| state.scores(v)).collect();
        let score_of = |v: usize| scores[vars.iter().position(|&x| x == v).unwrap()];
        let v = match cfg.variant {
            WalkSatVariant::Plain => {
                if rng.gen::<f64>() < cfg.noise_p {
                    *vars.choose(&mut rng).unwrap()
                } else {
                    argmax_random(&vars, |v| {
                        let (b, m, _) = score_of(v);
                        m as i64 - b as i64
                    }, &mut rng)
                }
            }
            WalkSatVariant::Lm => {
                let freebies: Vec<usize> = vars.iter().copied().filter(|&v| score_of(v).0 == 0).collect();
                if !freebies.is_empty() {
                    argmax_random(&freebies, |v| {
                        let (_, m1, m2) = score_of(v);
                        lmake(m1, m2)
                    }, &mut rng)
                } else if rng.gen::<f64>() < cfg.noise_p {
                    *vars.choose(&mut rng).unwrap()
                } else {
                    argmax_random(&vars, |v| {
                        let (b, m1, m2) = score_of(v);
                        (-(b as f64), lmake(m1, m2))
                    }, &mut rng)
                }
            }
        };
        state.flip(v);
        flips += 1;
        if cfg.record_trace {
            trace.push(v as u32);
        }
    }
    Ok(WalkSatOutcome {
        solution: Some(SpinConfig::from_bits(state.assignment, n)),
        flips,
        initial,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerationResult {
    pub solutions: Vec<SpinConfig>,
    /// Flips over every run, including a final failed run if any.
    pub total_flips: u64,
    /// Flips spent until the last solution was found.
    pub flips_to_last_solution: u64,
    /// The remaining formula was confirmed UNSAT by exhaustive check.
    pub complete: bool,
    pub runs: u64,
}

/// Finds all solutions by WalkSAT plus blocking clauses. Before every run
/// the blocked formula is checked exhaustively, so enumeration stops exactly
/// when no solution is left instead of after a timed-out run.
pub fn walksat_enumerate(formula: &CnfFormula, cfg: &WalkSatConfig) -> Result<EnumerationResult> {
    let mut current = formula.clone();
    let mut solutions = Vec::new();
    let (mut total_flips, mut flips_to_last, mut runs) = (0u64, 0u64, 0u64);
    loop {
        if is_unsat(&current)? {
            return Ok(EnumerationResult {
                solutions,
                total_flips,
                flips_to_last_solution: flips_to_last,
                complete: true,
                runs,
            });
        }
        let run_cfg = WalkSatConfig {
            rng_seed: derive_seed(cfg.rng_seed, runs),
            record_trace: false,
            ..cfg.clone()
        };
        let out = walksat_run(&current, &run_cfg)?;
        runs += 1;
        total_flips += out.flips;
        match out.solution {
            Some(s) => {
                if !formula.is_satisfied(&s)? || solutions.contains(&s) {
                    return Err(Error::Contract(format!("WalkSAT returned invalid or repeated solution {s}")));
                }
                flips_to_last = total_flips;
                current = add_blocking_clause(&current, &s)?;
                solutions.push(s);
            }
            None => {
                return Ok(EnumerationResult {
                    solutions,
                    total_flips,
                    flips_to_last_solution: flips_to_last,
                    complete: false,
                    runs,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::{exact, run_chain, ChainOptions, Update};
    use crate::sat::{enumerate_solutions, generate_instance, Clause, Literal};
    use crate::IsingTerm;

    fn integer_model(n: usize, seed: u64) -> IsingModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut terms = Vec::new();
        for i in 0..n {
            terms.push(IsingTerm::new(vec![i], rng.gen_range(-2..=2) as f64));
            for j in i + 1..n {
                if rng.gen_bool(0.5) {
                    terms.push(IsingTerm::new(vec![i, j], rng.gen_range(-2..=2) as f64));
                }
            }
        }
        IsingModel::new(n, terms, 1.0).unwrap()
    }

    #[test]
    fn ladder_shape() {
        let l = geometric_ladder(0.1, 10.0, 8);
        assert_eq!(l.len(), 8);
        assert!((l[0] - 0.1).abs() < 1e-15 && l[7] == 10.0);
        let r = l[1] / l[0];
        assert!(l.windows(2).all(|w| (w[1] / w[0] - r).abs() < 1e-12));
    }

    #[test]
    fn exchange_rule() {
        assert_eq!(exchange_acceptance(1.0, 3.0, 2.0, 3.0), 1.0);
        // hotter replica already lower in energy: swap is favourable
        assert_eq!(exchange_acceptance(1.0, 3.0, 2.0, 5.0), 1.0);
        assert!((exchange_acceptance(1.0, 5.0, 2.0, 3.0) - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn exchange_operator_detailed_balance() {
        let model = integer_model(3, 1);
        let (ti, tj) = (Temperature::new(0.5).unwrap(), Temperature::new(1.5).unwrap());
        let (pi_i, pi_j) = (exact::boltzmann(&model, ti).unwrap(), exact::boltzmann(&model, tj).unwrap());
        let e = model.energy_table(Execution::Sequential).unwrap();
        let dim = 8;
        // joint state x * dim + y: x at β_i, y at β_j
        let pi: Vec<f64> = (0..dim * dim).map(|s| pi_i[s / dim] * pi_j[s % dim]).collect();
        let mut p = vec![vec![0.0; dim * dim]; dim * dim];
        for x in 0..dim {
            for y in 0..dim {
                let a = exchange_acceptance(ti.beta(), e[x], tj.beta(), e[y]);
                let s = x * dim + y;
                let swapped = y * dim + x;
                p[s][swapped] += a;
                p[s][s] += 1.0 - a;
            }
        }
        assert!(exact::detailed_balance_violation(&pi, &p) < 1e-10);
    }

    #[test]
    fn icm_identical_replicas_noop() {
        let model = integer_model(6, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = SpinConfig::random(6, &mut rng);
        assert_eq!(icm_move(&a, &a, &model, &mut rng).unwrap(), (a, a));
    }

    #[test]
    fn icm_anti_aligned_swaps_component() {
        // chain 0-1-2 plus isolated site 3
        let model = IsingModel::from_fields_and_couplings(4, &[(3, 1.0)], &[(0, 1, 1.0), (1, 2, -1.0)]).unwrap();
        let a = SpinConfig::from_bits(0b0101, 4);
        let b = a.negated();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen_component = false;
        for _ in 0..50 {
            let (a2, b2) = icm_move(&a, &b, &model, &mut rng).unwrap();
            let moved = a2.bits() ^ a.bits();
            assert!(moved == 0b0111 || moved == 0b1000, "{moved:b}");
            seen_component |= moved == 0b0111;
            assert_eq!(a2.bits() ^ b2.bits(), a.bits() ^ b.bits());
        }
        assert!(seen_component);
    }

    #[test]
    fn icm_conserves_pair_energy_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for seed in 0..50 {
            let model = integer_model(10, seed);
            for _ in 0..20 {
                let a = SpinConfig::random(10, &mut rng);
                let b = SpinConfig::random(10, &mut rng);
                let before = model.energy(&a).unwrap() + model.energy(&b).unwrap();
                let (a2, b2) = icm_move(&a, &b, &model, &mut rng).unwrap();
                let after = model.energy(&a2).unwrap() + model.energy(&b2).unwrap();
                assert_eq!(before, after);
            }
        }
    }

    #[test]
    fn three_body_models_rejected() {
        let model = IsingModel::new(3, vec![IsingTerm::new(vec![0, 1, 2], 1.0)], 0.0).unwrap();
        assert!(matches!(pt_icm_run(&model, &PtIcmConfig::default(), 5, Execution::Sequential), Err(Error::UnsupportedModel(_))));
        let a = SpinConfig::all_up(3);
        assert!(icm_move(&a, &a.negated(), &model, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn coldest_replica_matches_boltzmann() {
        let model = integer_model(4, 5);
        let cfg = PtIcmConfig {
            replica_betas: geometric_ladder(0.1, 1.0, 4),
            ..Default::default()
        };
        let res = pt_icm_run(&model, &cfg, 200_000, Execution::Sequential).unwrap();
        let pi = exact::boltzmann(&model, Temperature::new(1.0).unwrap()).unwrap();
        let mut freq = vec![0.0; 16];
        for s in res.trace.states() {
            freq[s.bits() as usize] += 1.0 / res.trace.len() as f64;
        }
        let tvd: f64 = 0.5 * freq.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum::<f64>();
        assert!(tvd < 0.02, "{tvd}");
        assert!(res.stats.exchange_accepts.iter().all(|&a| a > 0));
        assert!(res.stats.icm_moves > 0);
        assert_eq!(res.trace.transitions_per_step, (4 * 2 * 4 + 3 * 2 + 4) as u64);
        assert_eq!(res.stats.coldest_transitions_per_round, 4);
    }

    #[test]
    fn single_temperature_pt_is_an_ssf_chain() {
        let model = integer_model(6, 6);
        let cfg = PtIcmConfig {
            replica_betas: vec![0.7],
            replicas_per_temperature: 1,
            icm_every: 0,
            ..Default::default()
        };
        let steps = 20_000;
        let pt = pt_icm_run(&model, &cfg, steps, Execution::Sequential).unwrap();
        let mut u = Update::Ssf;
        let ssf = run_chain(&model, Temperature::new(0.7).unwrap(), &mut u, &Init::Random, &ChainOptions::new(steps, 99)).unwrap();
        // two-sample KS on the energy samples
        let mut a: Vec<f64> = pt.trace.records.iter().map(|r| r.energy).collect();
        let mut b: Vec<f64> = ssf.records.iter().map(|r| r.energy).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let mut d: f64 = 0.0;
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            let x = a[i].min(b[j]);
            while i < a.len() && a[i] <= x {
                i += 1;
            }
            while j < b.len() && b[j] <= x {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        // correlated samples: use an effective size well below the raw count
        let n_eff = steps as f64 / 10.0;
        let lambda = d * (n_eff / 2.0).sqrt();
        let p_value: f64 = (1..100)
            .map(|k| {
                let k = k as f64;
                2.0 * (-1.0f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
            })
            .sum::<f64>()
            .clamp(0.0, 1.0);
        assert!(p_value > 0.001, "D = {d}");
        assert!(pt.stats.exchange_attempts.is_empty());
        assert_eq!(pt.trace.transitions_per_step, 6);
    }

    #[test]
    fn pt_parallel_matches_sequential() {
        let model = integer_model(8, 7);
        let cfg = PtIcmConfig { rng_seed: 5, ..Default::default() };
        let a = pt_icm_run(&model, &cfg, 300, Execution::Parallel).unwrap();
        let b = pt_icm_run(&model, &cfg, 300, Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn walksat_trivial_cases() {
        let unit = CnfFormula::new(1, 1, vec![Clause::new(vec![Literal::pos(0)]).unwrap()]).unwrap();
        for seed in 0..20 {
            let out = walksat_run(&unit, &WalkSatConfig { rng_seed: seed, ..Default::default() }).unwrap();
            assert_eq!(out.solution.unwrap().bits(), 1);
            assert!(out.flips <= 1);
            if out.initial.bits() == 1 {
                assert_eq!(out.flips, 0);
            }
        }
        assert!(walksat_run(&unit, &WalkSatConfig { noise_p: 1.5, ..Default::default() }).is_err());
    }

    #[test]
    fn walksat_flips_only_unsatisfied_clause_variables() {
        let f = generate_instance(12, 3, 4.267, 3).unwrap();
        for variant in [WalkSatVariant::Plain, WalkSatVariant::Lm] {
            let cfg = WalkSatConfig { variant, record_trace: true, rng_seed: 1, ..Default::default() };
            let out = walksat_run(&f, &cfg).unwrap();
            let mut a = out.initial.bits();
            for &v in &out.trace {
                let in_unsat = f.clauses().iter().any(|c| !c.is_satisfied_by(a) && c.literals().iter().any(|l| l.variable == v as usize));
                assert!(in_unsat);
                a ^= 1 << v;
            }
            assert_eq!(out.trace.len() as u64, out.flips);
            if let Some(s) = out.solution {
                assert_eq!(s.bits(), a);
            }
        }
    }

    #[test]
    fn walksat_solves_generated_three_sat() {
        let mut solved = 0;
        let mut tried = 0;
        let mut seed = 0;
        while tried < 100 {
            let f = generate_instance(12, 3, 4.267, seed).unwrap();
            seed += 1;
            if enumerate_solutions(&f).unwrap().is_empty() {
                continue;
            }
            tried += 1;
            for variant in [WalkSatVariant::Plain, WalkSatVariant::Lm] {
                let out = walksat_run(&f, &WalkSatConfig { variant, rng_seed: seed, ..Default::default() }).unwrap();
                let s = out.solution.expect("satisfiable instance");
                assert!(f.is_satisfied(&s).unwrap());
            }
            solved += 1;
        }
        assert_eq!(solved, 100);
    }

    #[test]
    fn enumerate_two_solution_formula() {
        // x0 ∧ (x1 ∨ x2) ∧ (¬x1 ∨ ¬x2): solutions 011 and 101 in bit order
        let f = CnfFormula::new(
            3,
            2,
            vec![
                Clause::new(vec![Literal::pos(0)]).unwrap(),
                Clause::new(vec![Literal::pos(1), Literal::pos(2)]).unwrap(),
                Clause::new(vec![Literal::neg(1), Literal::neg(2)]).unwrap(),
            ],
        )
        .unwrap();
        let res = walksat_enumerate(&f, &WalkSatConfig::default()).unwrap();
        assert!(res.complete);
        let mut got: Vec<u64> = res.solutions.iter().map(|s| s.bits()).collect();
        got.sort();
        assert_eq!(got, vec![0b011, 0b101]);
        assert_eq!(res.runs, 2);
    }

    #[test]
    fn enumeration_matches_exact_oracle() {
        for (n, k, seed) in [(8, 2, 1), (10, 2, 2), (12, 3, 3), (14, 3, 4), (14, 2, 5), (9, 3, 6)] {
            let alpha = crate::sat::default_alpha_c(k).unwrap();
            let f = generate_instance(n, k, alpha, seed).unwrap();
            let exact = enumerate_solutions(&f).unwrap();
            let res = walksat_enumerate(&f, &WalkSatConfig { rng_seed: seed, ..Default::default() }).unwrap();
            assert!(res.complete);
            let mut got: Vec<u64> = res.solutions.iter().map(|s| s.bits()).collect();
            got.sort();
            let want: Vec<u64> = exact.iter().map(|s| s.bits()).collect();
            assert_eq!(got, want, "n={n} k={k}");
            assert!(res.flips_to_last_solution <= res.total_flips);
        }
    }

    #[test]
    fn enumeration_reports_incomplete_budget() {
        let f = generate_instance(12, 3, 4.267, 11).unwrap();
        if enumerate_solutions(&f).unwrap().is_empty() {
            return;
        }
        let res = walksat_enumerate(&f, &WalkSatConfig { max_flips: 0, ..Default::default() }).unwrap();
        // a zero budget can only succeed when the random start is already a solution
        assert!(!res.complete || res.solutions.len() == enumerate_solutions(&f).unwrap().len());
    }
}
