//! CNF formulas, DIMACS I/O, random k-SAT instances and the clause-penalty
//! mapping onto Ising models.
//!
//! Boolean assignments share the packed representation of [`SpinConfig`]:
//! `x_i = 1` ⇔ bit `i` set ⇔ `s_i = −1` (so `x = (1 − s)/2`).

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::ising::{IsingTerm, MAX_ENUMERATION_SITES, MAX_SITES};
use crate::{Error, IsingModel, Result, SpinConfig};

/// Widest clause [`to_ising`] expands.
pub const MAX_ISING_WIDTH: usize = 3;
/// Draw budget per problem size in [`build_instance_set`].
pub const DRAW_BUDGET: usize = 1_000_000;

/// Standard SAT/UNSAT threshold densities: 1 for 2-SAT, 4.267 for 3-SAT.
pub fn default_alpha_c(k: usize) -> Option<f64> {
    match k {
        2 => Some(1.0),
        3 => Some(4.267),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Literal {
    pub variable: usize,
    pub negated: bool,
}

impl Literal {
    pub fn pos(variable: usize) -> Self {
        Self {
            variable,
            negated: false,
        }
    }

    pub fn neg(variable: usize) -> Self {
        Self {
            variable,
            negated: true,
        }
    }

    #[inline]
    pub fn is_true(&self, assignment: u64) -> bool {
        ((assignment >> self.variable) & 1 == 1) != self.negated
    }

    /// Signed 1-indexed DIMACS form.
    pub fn to_dimacs(&self) -> i64 {
        let v = self.variable as i64 + 1;
        if self.negated {
            -v
        } else {
            v
        }
    }

    pub fn from_dimacs(lit: i64) -> Result<Self> {
        if lit == 0 {
            return Err(Error::Parse("literal 0 is the clause terminator".into()));
        }
        let variable = (lit.unsigned_abs() - 1) as usize;
        Ok(Self {
            variable,
            negated: lit < 0,
        })
    }
}

/// Disjunction of literals over distinct variables, kept sorted by variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Clause {
    literals: Vec<Literal>,
    var_mask: u64,
    neg_mask: u64,
}

impl Clause {
    pub fn new(mut literals: Vec<Literal>) -> Result<Self> {
        literals.sort();
        let mut var_mask = 0u64;
        let mut neg_mask = 0u64;
        for l in &literals {
            if l.variable >= MAX_SITES {
                return Err(Error::Capacity {
                    what: "variable index",
                    size: l.variable,
                    limit: MAX_SITES - 1,
                });
            }
            let bit = 1u64 << l.variable;
            if var_mask & bit != 0 {
                return Err(Error::InvalidArgument(format!(
                    "variable {} repeated in clause",
                    l.variable
                )));
            }
            var_mask |= bit;
            if l.negated {
                neg_mask |= bit;
            }
        }
        Ok(Self {
            literals,
            var_mask,
            neg_mask,
        })
    }

    pub fn literals(&self) -> &[Literal] {
        &self.literals
    }

    pub fn width(&self) -> usize {
        self.literals.len()
    }

    pub fn max_variable(&self) -> Option<usize> {
        self.literals.last().map(|l| l.variable)
    }

    /// True iff some literal holds under the packed assignment; no range check.
    #[inline]
    pub fn is_satisfied_by(&self, assignment: u64) -> bool {
        (assignment ^ self.neg_mask) & self.var_mask != 0
    }
}

/// Whether `clause` holds under `assignment`.
pub fn eval_clause(clause: &Clause, assignment: &SpinConfig) -> Result<bool> {
    if let Some(v) = clause.max_variable() {
        if v >= assignment.len() {
            return Err(Error::Index {
                index: v,
                len: assignment.len(),
            });
        }
    }
    Ok(clause.is_satisfied_by(assignment.bits()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CnfFormula {
    n_vars: usize,
    k: usize,
    clauses: Vec<Clause>,
}

impl CnfFormula {
    /// `k` is the nominal clause width; blocking clauses may be wider.
    pub fn new(n_vars: usize, k: usize, clauses: Vec<Clause>) -> Result<Self> {
        if n_vars > MAX_SITES {
            return Err(Error::Capacity {
                what: "formula",
                size: n_vars,
                limit: MAX_SITES,
            });
        }
        for c in &clauses {
            if let Some(v) = c.max_variable() {
                if v >= n_vars {
                    return Err(Error::Index {
                        index: v,
                        len: n_vars,
                    });
                }
            }
        }
        Ok(Self { n_vars, k, clauses })
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn num_clauses(&self) -> usize {
        self.clauses.len()
    }

    /// Constraint density `M / N`.
    pub fn density(&self) -> f64 {
        self.clauses.len() as f64 / self.n_vars as f64
    }

    fn check_len(&self, assignment: &SpinConfig) -> Result<()> {
        if assignment.len() != self.n_vars {
            return Err(Error::Dimension {
                expected: self.n_vars,
                actual: assignment.len(),
            });
        }
        Ok(())
    }

    /// Number of violated clauses (unit penalty per clause).
    pub fn count_unsatisfied(&self, assignment: &SpinConfig) -> Result<usize> {
        self.check_len(assignment)?;
        Ok(self.count_unsatisfied_bits(assignment.bits()))
    }

    #[inline]
    pub fn count_unsatisfied_bits(&self, assignment: u64) -> usize {
        self.clauses
            .iter()
            .filter(|c| !c.is_satisfied_by(assignment))
            .count()
    }

    #[inline]
    pub fn is_satisfied_bits(&self, assignment: u64) -> bool {
        self.clauses.iter().all(|c| c.is_satisfied_by(assignment))
    }

    pub fn is_satisfied(&self, assignment: &SpinConfig) -> Result<bool> {
        self.check_len(assignment)?;
        Ok(self.is_satisfied_bits(assignment.bits()))
    }

    pub fn to_dimacs(&self) -> String {
        let mut out = format!("p cnf {} {}\n", self.n_vars, self.clauses.len());
        for c in &self.clauses {
            for l in c.literals() {
                let _ = write!(out, "{} ", l.to_dimacs());
            }
            out.push_str("0\n");
        }
        out
    }

    /// Parses DIMACS CNF; `k` is taken as the widest clause.
    pub fn from_dimacs(src: &str) -> Result<Self> {
        let mut header: Option<(usize, usize)> = None;
        let mut clauses = Vec::new();
        let mut current = Vec::new();
        for line in src.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('c') || line.starts_with('%') {
                continue;
            }
            if line.starts_with('p') {
                let parts: Vec<&str> = line.split_whitespace().collect();
                if parts.len() != 4 || parts[1] != "cnf" {
                    return Err(Error::Parse(format!("bad header {line:?}")));
                }
                let n = parts[2]
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad variable count in {line:?}")))?;
                let m = parts[3]
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad clause count in {line:?}")))?;
                header = Some((n, m));
                continue;
            }
            if header.is_none() {
                return Err(Error::Parse("clause before `p cnf` header".into()));
            }
            for tok in line.split_whitespace() {
                let lit: i64 = tok
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad literal {tok:?}")))?;
                if lit == 0 {
                    clauses.push(Clause::new(std::mem::take(&mut current))?);
                } else {
                    current.push(Literal::from_dimacs(lit)?);
                }
            }
        }
        if !current.is_empty() {
            clauses.push(Clause::new(current)?);
        }
        let (n, m) = header.ok_or_else(|| Error::Parse("missing `p cnf` header".into()))?;
        if clauses.len() != m {
            return Err(Error::Parse(format!(
                "header declares {m} clauses, found {}",
                clauses.len()
            )));
        }
        let k = clauses.iter().map(Clause::width).max().unwrap_or(0);
        Self::new(n, k, clauses)
    }
}

/// Clause-penalty Hamiltonian: `E(σ)` equals the number of clauses violated
/// by `x(σ)`.
///
/// A clause is violated only when every literal is false. The indicator of a
/// false literal is `(1 + s)/2` for `x` and `(1 − s)/2` for `¬x`; the product
/// over the clause expands into at most `2^k` spin monomials.
pub fn to_ising(formula: &CnfFormula) -> Result<IsingModel> {
    let mut coeffs: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for clause in formula.clauses() {
        let w = clause.width();
        if w > MAX_ISING_WIDTH {
            return Err(Error::UnsupportedWidth {
                width: w,
                max: MAX_ISING_WIDTH,
            });
        }
        let scale = 1.0 / (1u32 << w) as f64;
        let lits = clause.literals();
        for subset in 0u32..(1 << w) {
            let mut sites = Vec::new();
            let mut sign = 1.0;
            for (j, l) in lits.iter().enumerate() {
                if subset & (1 << j) != 0 {
                    sites.push(l.variable);
                    if l.negated {
                        sign = -sign;
                    }
                }
            }
            *coeffs.entry(sites).or_insert(0.0) += sign * scale;
        }
    }
    let offset = coeffs.remove(&Vec::new()).unwrap_or(0.0);
    let terms = coeffs
        .into_iter()
        .map(|(sites, c)| IsingTerm::new(sites, c))
        .collect();
    IsingModel::new(formula.n_vars().max(1), terms, offset)
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

/// Number of distinct width-`k` clauses over `n` variables.
pub fn clause_universe_size(n: usize, k: usize) -> u128 {
    binomial(n, k) << k
}

/// Clause count `⌊α_c n⌋ + 1` used for generated instances.
pub fn clause_count(n: usize, alpha_c: f64) -> usize {
    (alpha_c * n as f64).floor() as usize + 1
}

/// Draws `⌊α_c n⌋ + 1` distinct clauses uniformly from all `C(n,k)·2^k` clauses.
pub fn generate_instance(n: usize, k: usize, alpha_c: f64, rng_seed: u64) -> Result<CnfFormula> {
    if k == 0 || n < k {
        return Err(Error::InvalidArgument(format!(
            "need n >= k >= 1, got n = {n}, k = {k}"
        )));
    }
    if !(alpha_c.is_finite() && alpha_c >= 0.0) {
        return Err(Error::InvalidArgument(format!("bad density {alpha_c}")));
    }
    let m = clause_count(n, alpha_c);
    let available = clause_universe_size(n, k);
    if m as u128 > available {
        return Err(Error::InfeasibleDensity {
            requested: m as u128,
            available,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut seen = HashSet::with_capacity(m);
    let mut clauses = Vec::with_capacity(m);
    while clauses.len() < m {
        let vars = index::sample(&mut rng, n, k);
        let lits = vars
            .iter()
            .map(|v| Literal {
                variable: v,
                negated: rng.gen_bool(0.5),
            })
            .collect();
        let clause = Clause::new(lits)?;
        if seen.insert(clause.clone()) {
            clauses.push(clause);
        }
    }
    CnfFormula::new(n, k, clauses)
}

/// All satisfying assignments in ascending packed order.
pub fn enumerate_solutions(formula: &CnfFormula) -> Result<Vec<SpinConfig>> {
    enumerate_solutions_with(formula, Execution::default())
}

pub fn enumerate_solutions_with(formula: &CnfFormula, exec: Execution) -> Result<Vec<SpinConfig>> {
    let n = formula.n_vars();
    if n > MAX_ENUMERATION_SITES {
        return Err(Error::Capacity {
            what: "solution enumeration",
            size: n,
            limit: MAX_ENUMERATION_SITES,
        });
    }
    let dim = 1u64 << n;
    let chunk = 1u64 << 12;
    let chunks = dim.div_ceil(chunk) as usize;
    let parts = exec.map_range(chunks, |c| {
        let lo = c as u64 * chunk;
        let hi = (lo + chunk).min(dim);
        (lo..hi)
            .filter(|&z| formula.is_satisfied_bits(z))
            .map(|z| SpinConfig::from_bits(z, n))
            .collect::<Vec<_>>()
    });
    Ok(parts.concat())
}

/// Whether the formula has no satisfying assignment (exhaustive, early exit).
pub fn is_unsat(formula: &CnfFormula) -> Result<bool> {
    let n = formula.n_vars();
    if n > MAX_ENUMERATION_SITES {
        return Err(Error::Capacity {
            what: "satisfiability check",
            size: n,
            limit: MAX_ENUMERATION_SITES,
        });
    }
    Ok(!(0..(1u64 << n)).any(|z| formula.is_satisfied_bits(z)))
}

/// Appends the width-`N` clause that is false exactly at `solution`.
pub fn add_blocking_clause(formula: &CnfFormula, solution: &SpinConfig) -> Result<CnfFormula> {
    if !formula.is_satisfied(solution)? {
        return Err(Error::Contract(format!(
            "blocking assignment {solution} does not satisfy the formula"
        )));
    }
    let lits = (0..formula.n_vars())
        .map(|i| Literal {
            variable: i,
            negated: solution.bit(i),
        })
        .collect();
    let mut clauses = formula.clauses.clone();
    clauses.push(Clause::new(lits)?);
    CnfFormula::new(formula.n_vars, formula.k, clauses)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceEntry {
    pub formula: CnfFormula,
    pub solutions: Vec<SpinConfig>,
    pub seed: u64,
}

impl InstanceEntry {
    pub fn n_vars(&self) -> usize {
        self.formula.n_vars()
    }

    /// Ground-state degeneracy `N_g`.
    pub fn degeneracy(&self) -> usize {
        self.solutions.len()
    }
}

/// Random instances with at least two verified solutions each.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSet {
    pub k: usize,
    pub alpha_c: f64,
    pub seed: u64,
    pub entries: Vec<InstanceEntry>,
}

/// Per-candidate seed: the base seed XOR a task index unique to `(n, j)`.
pub fn candidate_seed(base: u64, n: usize, j: usize) -> u64 {
    base ^ (((n as u64) << 32) | j as u64)
}

/// Generates `per_size` instances per size, discarding draws with fewer than
/// two solutions and retrying with fresh seeds.
///
/// Candidates are drawn in a fixed order, so the result does not depend on
/// the execution mode.
pub fn build_instance_set(
    sizes: impl IntoIterator<Item = usize>,
    k: usize,
    per_size: usize,
    alpha_c: f64,
    seed: u64,
    exec: Execution,
) -> Result<InstanceSet> {
    let mut entries = Vec::new();
    for n in sizes {
        let mut accepted: Vec<InstanceEntry> = Vec::with_capacity(per_size);
        let mut draws = 0usize;
        let batch = per_size.max(32);
        while accepted.len() < per_size {
            if draws >= DRAW_BUDGET {
                return Err(Error::GenerationFailure {
                    n,
                    accepted: accepted.len(),
                    wanted: per_size,
                    draws,
                });
            }
            let this_batch = batch.min(DRAW_BUDGET - draws);
            let start = draws;
            let results = exec.try_map_range(this_batch, |i| -> Result<Option<InstanceEntry>> {
                let s = candidate_seed(seed, n, start + i);
                let formula = generate_instance(n, k, alpha_c, s)?;
                let solutions = enumerate_solutions_with(&formula, Execution::Sequential)?;
                Ok((solutions.len() >= 2).then_some(InstanceEntry {
                    formula,
                    solutions,
                    seed: s,
                }))
            })?;
            draws += this_batch;
            accepted.extend(results.into_iter().flatten().take(per_size - accepted.len()));
        }
        entries.extend(accepted);
    }
    Ok(InstanceSet {
        k,
        alpha_c,
        seed,
        entries,
    })
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    alpha_c: f64,
    k: usize,
    entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    n: usize,
    seed: u64,
    solutions: Vec<String>,
}

impl InstanceSet {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.entries.iter().map(InstanceEntry::n_vars).collect();
        s.dedup();
        s
    }

    /// File name used for entry `idx` when persisted.
    pub fn entry_file_name(&self, idx: usize) -> String {
        let e = &self.entries[idx];
        format!("k{}_n{:02}_{:04}.cnf", self.k, e.n_vars(), idx)
    }

    /// Writes one DIMACS file per entry plus `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = Manifest {
            seed: self.seed,
            alpha_c: self.alpha_c,
            k: self.k,
            entries: Vec::with_capacity(self.entries.len()),
        };
        for (idx, e) in self.entries.iter().enumerate() {
            let file = self.entry_file_name(idx);
            fs::write(dir.join(&file), e.formula.to_dimacs())?;
            manifest.entries.push(ManifestEntry {
                file,
                n: e.n_vars(),
                seed: e.seed,
                solutions: e.solutions.iter().map(SpinConfig::bitstring).collect(),
            });
        }
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    /// Loads a saved set, re-verifying every stored solution.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let mut entries = Vec::with_capacity(manifest.entries.len());
        for m in manifest.entries {
            let mut formula = CnfFormula::from_dimacs(&fs::read_to_string(dir.join(&m.file))?)?;
            formula.k = manifest.k;
            if formula.n_vars() != m.n {
                return Err(Error::Parse(format!("{}: variable count mismatch", m.file)));
            }
            let solutions = m
                .solutions
                .iter()
                .map(|s| SpinConfig::from_bitstring(s))
                .collect::<Result<Vec<_>>>()?;
            for s in &solutions {
                if !formula.is_satisfied(s)? {
                    return Err(Error::Contract(format!(
                        "{}: stored solution {s} does not satisfy the formula",
                        m.file
                    )));
                }
            }
            entries.push(InstanceEntry {
                formula,
                solutions,
                seed: m.seed,
            });
        }
        Ok(Self {
            k: manifest.k,
            alpha_c: manifest.alpha_c,
            seed: manifest.seed,
            entries,
        })
    }
}
