//! Fairness and counting diagnostics over the ground-state manifold.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mcmc::ChainTrace;
use crate::qsim::OutputDistribution;
use crate::{Error, Result, SpinConfig};

/// Per-ground-state tallies. Trace histograms hold integer counts; histograms
/// of exact distributions hold probabilities renormalized over the manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundStateHistogram {
    pub ground_states: Vec<SpinConfig>,
    pub counts: Vec<f64>,
    /// Samples inspected, including non-ground states (0 for exact input).
    pub samples_used: u64,
}

fn canonical(ground_states: &[SpinConfig]) -> Result<Vec<SpinConfig>> {
    if ground_states.is_empty() {
        return Err(Error::InvalidArgument("empty ground-state list".into()));
    }
    let mut gs = ground_states.to_vec();
    gs.sort();
    gs.dedup();
    Ok(gs)
}

impl GroundStateHistogram {
    pub fn from_states<I: IntoIterator<Item = SpinConfig>>(states: I, ground_states: &[SpinConfig]) -> Result<Self> {
        let gs = canonical(ground_states)?;
        let mut counts = vec![0.0; gs.len()];
        let mut used = 0u64;
        for s in states {
            used += 1;
            if let Ok(i) = gs.binary_search(&s) {
                counts[i] += 1.0;
            }
        }
        Ok(Self {
            ground_states: gs,
            counts,
            samples_used: used,
        })
    }

    pub fn from_trace(trace: &ChainTrace, ground_states: &[SpinConfig]) -> Result<Self> {
        Self::from_states(trace.states(), ground_states)
    }

    pub fn from_distribution(dist: &OutputDistribution, ground_states: &[SpinConfig]) -> Result<Self> {
        let gs = canonical(ground_states)?;
        let raw: Vec<f64> = gs.iter().map(|s| dist.prob(s)).collect();
        let total: f64 = raw.iter().sum();
        let counts = if total > 0.0 {
            raw.iter().map(|p| p / total).collect()
        } else {
            raw
        };
        Ok(Self {
            ground_states: gs,
            counts,
            samples_used: 0,
        })
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let t = self.total();
        self.counts
            .iter()
            .map(|c| if t > 0.0 { c / t } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    /// `None` when some ground state was never sampled.
    pub p_max_over_p_min: Option<f64>,
    pub all_found: bool,
    /// Supplementary: `½ Σ |f_i − 1/N_g|`; 1 when no ground state was seen.
    pub tvd_to_uniform: f64,
    pub n_g: usize,
    pub samples_used: u64,
    pub ground_state_mass: f64,
}

pub fn fairness(hist: &GroundStateHistogram) -> FairnessReport {
    let n_g = hist.ground_states.len();
    let all_found = hist.counts.iter().all(|&c| c > 0.0);
    let f = hist.frequencies();
    let (tvd, ratio) = if hist.total() > 0.0 {
        let u = 1.0 / n_g as f64;
        let tvd = 0.5 * f.iter().map(|x| (x - u).abs()).sum::<f64>();
        let max = f.iter().copied().fold(f64::MIN, f64::max);
        let min = f.iter().copied().fold(f64::MAX, f64::min);
        (tvd, all_found.then(|| max / min))
    } else {
        (1.0, None)
    };
    FairnessReport {
        p_max_over_p_min: ratio,
        all_found,
        tvd_to_uniform: tvd,
        n_g,
        samples_used: hist.samples_used,
        ground_state_mass: hist.total(),
    }
}

/// Unit for [`steps_to_enumerate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Accounting {
    /// Elementary transitions (kernel update 1, sweep `N`, hybrid `N + 1`).
    Transitions,
    /// Composite steps as recorded in the trace.
    Steps,
}

/// 1-based position at which the last unseen ground state first appears.
pub fn first_complete_index<I: IntoIterator<Item = SpinConfig>>(states: I, ground_states: &[SpinConfig]) -> Result<Option<usize>> {
    let gs = canonical(ground_states)?;
    let mut seen = vec![false; gs.len()];
    let mut missing = gs.len();
    for (idx, s) in states.into_iter().enumerate() {
        if let Ok(i) = gs.binary_search(&s) {
            if !seen[i] {
                seen[i] = true;
                missing -= 1;
                if missing == 0 {
                    return Ok(Some(idx + 1));
                }
            }
        }
    }
    Ok(None)
}

/// Cost of visiting every ground state, or `None` if the trace ends first.
pub fn steps_to_enumerate(trace: &ChainTrace, ground_states: &[SpinConfig], accounting: Accounting) -> Result<Option<u64>> {
    Ok(first_complete_index(trace.states(), ground_states)?.map(|idx| {
        let rec = &trace.records[idx - 1];
        match accounting {
            Accounting::Steps => rec.step,
            Accounting::Transitions => trace.transitions_at(idx - 1),
        }
    }))
}

/// Upper `quantile` of `p_max/p_min` for `samples` exact-uniform draws over
/// `n_g` states, by multinomial simulation. Runs with an empty bin are skipped.
pub fn uniform_ratio_envelope(n_g: usize, samples: usize, runs: usize, quantile: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios: Vec<f64> = (0..runs)
        .filter_map(|_| {
            let mut c = vec![0u64; n_g];
            for _ in 0..samples {
                c[rng.gen_range(0..n_g)] += 1;
            }
            let (max, min) = (*c.iter().max()?, *c.iter().min()?);
            (min > 0).then(|| max as f64 / min as f64)
        })
        .collect();
    quantile_sorted(&mut ratios, quantile).unwrap_or(f64::INFINITY)
}

/// Linear-interpolation quantile (sorts `values` in place).
pub fn quantile_sorted(values: &mut [f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(values[lo] + (values[hi] - values[lo]) * (pos - lo as f64))
}

/// Enumeration cost of one algorithm on one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Steps {
    /// Exact distributions have no step count.
    NotApplicable,
    /// Some trial ended before every ground state was seen.
    Incomplete,
    Complete(f64),
}

impl Steps {
    pub fn value(self) -> Option<f64> {
        match self {
            Steps::Complete(v) => Some(v),
            _ => None,
        }
    }

    /// Mean over trials, or `Incomplete` if any trial is `None`.
    pub fn mean_of(trials: &[Option<u64>]) -> Self {
        if trials.is_empty() || trials.iter().any(Option::is_none) {
            return Steps::Incomplete;
        }
        Steps::Complete(trials.iter().map(|t| t.unwrap() as f64).sum::<f64>() / trials.len() as f64)
    }

    fn csv(self) -> String {
        match self {
            Steps::NotApplicable => String::new(),
            Steps::Incomplete => "incomplete".into(),
            Steps::Complete(v) => v.to_string(),
        }
    }
}

/// One algorithm on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub k: usize,
    pub n: usize,
    pub algorithm: String,
    pub instance: usize,
    pub n_g: usize,
    /// `None` for enumerators, which do not sample.
    pub fairness: Option<FairnessReport>,
    pub all_found: bool,
    pub steps: Steps,
    /// Alternative count charging only the coldest replica (PT-ICM).
    #[serde(default)]
    pub steps_coldest: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        let q = |v: &mut [f64], p| quantile_sorted(v, p).unwrap();
        Some(Self {
            count: v.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: q(&mut v, 0.5),
            q25: q(&mut v, 0.25),
            q75: q(&mut v, 0.75),
            min: v[0],
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub k: usize,
    pub n: usize,
    pub algorithm: String,
    pub instances: usize,
    pub all_found: usize,
    /// Over instances with a defined ratio only.
    pub ratio: Option<Stats>,
    pub tvd: Option<Stats>,
    /// Over instances whose every trial enumerated all ground states.
    pub steps: Option<Stats>,
    pub incomplete: usize,
}

/// Summaries per `(k, N, algorithm)`, sorted by that key. Incomplete
/// entries are excluded from ratio and step statistics for every algorithm
/// alike and counted separately.
pub fn aggregate(reports: &[InstanceReport]) -> Result<Vec<GroupSummary>> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("nothing to aggregate".into()));
    }
    let mut groups: BTreeMap<(usize, usize, &str), Vec<&InstanceReport>> = BTreeMap::new();
    for r in reports {
        groups.entry((r.k, r.n, r.algorithm.as_str())).or_default().push(r);
    }
    Ok(groups
        .into_iter()
        .map(|((k, n, alg), rs)| {
            let ratios: Vec<f64> = rs
                .iter()
                .filter_map(|r| r.fairness.as_ref()?.p_max_over_p_min)
                .collect();
            let tvds: Vec<f64> = rs
                .iter()
                .filter_map(|r| Some(r.fairness.as_ref()?.tvd_to_uniform))
                .collect();
            let steps: Vec<f64> = rs.iter().filter_map(|r| r.steps.value()).collect();
            GroupSummary {
                k,
                n,
                algorithm: alg.to_string(),
                instances: rs.len(),
                all_found: rs.iter().filter(|r| r.all_found).count(),
                ratio: Stats::of(&ratios),
                tvd: Stats::of(&tvds),
                incomplete: rs.iter().filter(|r| r.steps == Steps::Incomplete).count(),
                steps: Stats::of(&steps),
            }
        })
        .collect())
}

/// Head-to-head step counts on instances where both finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Superiority {
    pub a_wins: usize,
    pub b_wins: usize,
    pub ties: usize,
}

pub fn superiority(reports: &[InstanceReport], a: &str, b: &str) -> Superiority {
    let mut steps: BTreeMap<(usize, usize, usize), (Option<f64>, Option<f64>)> = BTreeMap::new();
    for r in reports {
        let e = steps.entry((r.k, r.n, r.instance)).or_default();
        if r.algorithm == a {
            e.0 = r.steps.value();
        } else if r.algorithm == b {
            e.1 = r.steps.value();
        }
    }
    let mut out = Superiority {
        a_wins: 0,
        b_wins: 0,
        ties: 0,
    };
    for (x, y) in steps.values().filter_map(|(x, y)| Some(((*x)?, (*y)?))) {
        match x.partial_cmp(&y) {
            Some(std::cmp::Ordering::Less) => out.a_wins += 1,
            Some(std::cmp::Ordering::Greater) => out.b_wins += 1,
            _ => out.ties += 1,
        }
    }
    out
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Long-format rows, one per report.
pub fn reports_to_csv(reports: &[InstanceReport]) -> String {
    let mut out = String::from(
        "k,n,algorithm,instance,n_g,samples,p_max_over_p_min,all_found,tvd_to_uniform,steps,steps_coldest\n",
    );
    for r in reports {
        let f = r.fairness.as_ref();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.k,
            r.n,
            r.algorithm,
            r.instance,
            r.n_g,
            f.map(|f| f.samples_used.to_string()).unwrap_or_default(),
            opt(f.and_then(|f| f.p_max_over_p_min)),
            r.all_found,
            opt(f.map(|f| f.tvd_to_uniform)),
            r.steps.csv(),
            opt(r.steps_coldest),
        ));
    }
    out
}

pub fn summaries_to_csv(groups: &[GroupSummary]) -> String {
    let mut out = String::from(
        "k,n,algorithm,instances,all_found,incomplete,ratio_mean,ratio_median,ratio_q25,ratio_q75,steps_mean,steps_median,steps_q25,steps_q75\n",
    );
    for g in groups {
        let s = |st: &Option<Stats>, f: fn(&Stats) -> f64| opt(st.as_ref().map(f));
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            g.k,
            g.n,
            g.algorithm,
            g.instances,
            g.all_found,
            g.incomplete,
            s(&g.ratio, |x| x.mean),
            s(&g.ratio, |x| x.median),
            s(&g.ratio, |x| x.q25),
            s(&g.ratio, |x| x.q75),
            s(&g.steps, |x| x.mean),
            s(&g.steps, |x| x.median),
            s(&g.steps, |x| x.q25),
            s(&g.steps, |x| x.q75),
        ));
    }
    out
}
