//! Ising energy functions with up to k-body interactions.
//!
//! Spins are bit-packed into a `u64`: bit `i` set means `s_i = -1`, i.e.
//! `s_i = 1 - 2 b_i`. The same integer doubles as the computational basis
//! index of a statevector and, for SAT models, as the Boolean assignment `x`.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::{Error, Result};

/// Largest number of sites a [`SpinConfig`] can hold.
pub const MAX_SITES: usize = 64;
/// Largest model size accepted by exhaustive enumeration.
pub const MAX_ENUMERATION_SITES: usize = 24;
/// Absolute tolerance used to detect ground-state ties for non-integer models.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// A length-`N` assignment of ±1 spins stored in a machine word.
/// Serializes as its bitstring.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct SpinConfig {
    bits: u64,
    len: u8,
}

impl SpinConfig {
    /// All spins up (`+1`).
    pub fn all_up(len: usize) -> Self {
        Self::from_bits(0, len)
    }

    /// Builds a config from its packed representation; bits above `len` are cleared.
    pub fn from_bits(bits: u64, len: usize) -> Self {
        assert!(len <= MAX_SITES, "spin configs hold at most {MAX_SITES} sites");
        Self {
            bits: bits & mask_for(len),
            len: len as u8,
        }
    }

    pub fn from_spins(spins: &[i8]) -> Result<Self> {
        if spins.len() > MAX_SITES {
            return Err(Error::Capacity {
                what: "spin configuration",
                size: spins.len(),
                limit: MAX_SITES,
            });
        }
        let mut bits = 0u64;
        for (i, &s) in spins.iter().enumerate() {
            match s {
                1 => {}
                -1 => bits |= 1 << i,
                other => return Err(Error::InvalidArgument(format!("spin value {other}"))),
            }
        }
        Ok(Self::from_bits(bits, spins.len()))
    }

    /// Parses a bitstring written site 0 first, e.g. `"0110"`.
    pub fn from_bitstring(s: &str) -> Result<Self> {
        if s.len() > MAX_SITES {
            return Err(Error::Capacity {
                what: "bitstring",
                size: s.len(),
                limit: MAX_SITES,
            });
        }
        let mut bits = 0u64;
        for (i, c) in s.chars().enumerate() {
            match c {
                '0' => {}
                '1' => bits |= 1 << i,
                other => return Err(Error::Parse(format!("bad bit {other:?} in {s:?}"))),
            }
        }
        Ok(Self::from_bits(bits, s.len()))
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Self::from_bits(rng.gen::<u64>(), len)
    }

    #[inline]
    pub fn bits(&self) -> u64 {
        self.bits
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len as usize
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Boolean value `b_i` (1 ⇔ spin down).
    #[inline]
    pub fn bit(&self, i: usize) -> bool {
        (self.bits >> i) & 1 == 1
    }

    #[inline]
    pub fn spin(&self, i: usize) -> i8 {
        1 - 2 * ((self.bits >> i) & 1) as i8
    }

    #[inline]
    pub fn flipped(&self, i: usize) -> Self {
        debug_assert!(i < self.len());
        Self {
            bits: self.bits ^ (1 << i),
            len: self.len,
        }
    }

    /// Flips every spin in `mask`.
    #[inline]
    pub fn flipped_mask(&self, mask: u64) -> Self {
        Self::from_bits(self.bits ^ mask, self.len())
    }

    /// Global spin inversion `σ → -σ`.
    pub fn negated(&self) -> Self {
        self.flipped_mask(u64::MAX)
    }

    pub fn spins(&self) -> Vec<i8> {
        (0..self.len()).map(|i| self.spin(i)).collect()
    }

    /// Site 0 first, `1` for spin down.
    pub fn bitstring(&self) -> String {
        (0..self.len())
            .map(|i| if self.bit(i) { '1' } else { '0' })
            .collect()
    }

    /// Number of sites where the two configs differ.
    pub fn hamming(&self, other: &SpinConfig) -> u32 {
        (self.bits ^ other.bits).count_ones()
    }
}

impl fmt::Debug for SpinConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpinConfig({})", self.bitstring())
    }
}

impl From<SpinConfig> for String {
    fn from(c: SpinConfig) -> String {
        c.bitstring()
    }
}

impl TryFrom<String> for SpinConfig {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::from_bitstring(&s)
    }
}

impl fmt::Display for SpinConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.bitstring())
    }
}

#[inline]
pub(crate) fn mask_for(len: usize) -> u64 {
    if len >= 64 {
        u64::MAX
    } else {
        (1u64 << len) - 1
    }
}

/// Product of the spins selected by `mask`.
#[inline]
fn parity_sign(bits: u64, mask: u64) -> f64 {
    if (bits & mask).count_ones() & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// One interaction `J · s_{i1} ⋯ s_{iq}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsingTerm {
    pub sites: Vec<usize>,
    #[serde(rename = "coeff")]
    pub coefficient: f64,
}

impl IsingTerm {
    pub fn new(sites: impl Into<Vec<usize>>, coefficient: f64) -> Self {
        Self {
            sites: sites.into(),
            coefficient,
        }
    }

    pub fn order(&self) -> usize {
        self.sites.len()
    }
}

/// Inverse temperature `β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperature {
    beta: f64,
}

impl Temperature {
    /// `β = 0` is accepted and means infinite temperature.
    pub fn new(beta: f64) -> Result<Self> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "inverse temperature must be finite and non-negative, got {beta}"
            )));
        }
        Ok(Self { beta })
    }

    #[inline]
    pub fn beta(&self) -> f64 {
        self.beta
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    n_sites: usize,
    #[serde(default)]
    offset: f64,
    terms: Vec<IsingTerm>,
}

/// Sparse k-body Ising Hamiltonian in canonical form.
///
/// Terms are keyed by their site set; duplicates are merged and exact zeros
/// dropped on construction, so structurally equal models compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct IsingModel {
    n_sites: usize,
    offset: f64,
    terms: Vec<IsingTerm>,
    masks: Vec<u64>,
    site_terms: Vec<Vec<usize>>,
}

impl IsingModel {
    pub fn new(n_sites: usize, terms: Vec<IsingTerm>, offset: f64) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::InvalidArgument("model needs at least one site".into()));
        }
        if n_sites > MAX_SITES {
            return Err(Error::Capacity {
                what: "Ising model",
                size: n_sites,
                limit: MAX_SITES,
            });
        }
        if !offset.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite offset {offset}")));
        }
        let mut merged: BTreeMap<u64, f64> = BTreeMap::new();
        for term in terms {
            if term.sites.is_empty() {
                return Err(Error::InvalidArgument("term without sites".into()));
            }
            if !term.coefficient.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite coefficient {}",
                    term.coefficient
                )));
            }
            let mut mask = 0u64;
            for &s in &term.sites {
                if s >= n_sites {
                    return Err(Error::Index {
                        index: s,
                        len: n_sites,
                    });
                }
                if mask & (1 << s) != 0 {
                    return Err(Error::InvalidArgument(format!(
                        "site {s} repeated in term {:?}",
                        term.sites
                    )));
                }
                mask |= 1 << s;
            }
            *merged.entry(mask).or_insert(0.0) += term.coefficient;
        }
        // canonical order: by order, then lexicographic site list
        let mut entries: Vec<(Vec<usize>, u64, f64)> = merged
            .into_iter()
            .filter(|&(_, c)| c != 0.0)
            .map(|(mask, c)| (sites_of(mask), mask, c))
            .collect();
        entries.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)));

        let mut site_terms = vec![Vec::new(); n_sites];
        let mut out_terms = Vec::with_capacity(entries.len());
        let mut masks = Vec::with_capacity(entries.len());
        for (idx, (sites, mask, c)) in entries.into_iter().enumerate() {
            for &s in &sites {
                site_terms[s].push(idx);
            }
            out_terms.push(IsingTerm::new(sites, c));
            masks.push(mask);
        }
        Ok(Self {
            n_sites,
            offset,
            terms: out_terms,
            masks,
            site_terms,
        })
    }

    /// Convenience constructor from local fields `h_i` and pair couplings `J_ij`.
    pub fn from_fields_and_couplings(
        n_sites: usize,
        fields: &[(usize, f64)],
        couplings: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let terms = fields
            .iter()
            .map(|&(i, h)| IsingTerm::new(vec![i], h))
            .chain(
                couplings
                    .iter()
                    .map(|&(i, j, c)| IsingTerm::new(vec![i, j], c)),
            )
            .collect();
        Self::new(n_sites, terms, 0.0)
    }

    #[inline]
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    #[inline]
    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn terms(&self) -> &[IsingTerm] {
        &self.terms
    }

    /// Highest interaction order present (0 for a constant model).
    pub fn max_order(&self) -> usize {
        self.terms.iter().map(IsingTerm::order).max().unwrap_or(0)
    }

    /// Whether the offset and every coefficient are integers.
    pub fn has_integer_coefficients(&self) -> bool {
        self.offset.fract() == 0.0 && self.terms.iter().all(|t| t.coefficient.fract() == 0.0)
    }

    /// Whether every term has even order, so `E(σ) = E(-σ)`.
    pub fn is_inversion_symmetric(&self) -> bool {
        self.terms.iter().all(|t| t.order() % 2 == 0)
    }

    /// The same model with a different constant offset.
    pub fn with_offset(&self, offset: f64) -> Self {
        Self {
            offset,
            ..self.clone()
        }
    }

    /// Pairs `(i, j, J_ij)` of all two-body terms.
    pub fn pair_couplings(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.terms
            .iter()
            .filter(|t| t.order() == 2)
            .map(|t| (t.sites[0], t.sites[1], t.coefficient))
    }

    /// Interaction-graph neighbours of every site (from two-body terms).
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_sites];
        for (i, j, _) in self.pair_couplings() {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    fn check_len(&self, config: &SpinConfig) -> Result<()> {
        if config.len() != self.n_sites {
            return Err(Error::Dimension {
                expected: self.n_sites,
                actual: config.len(),
            });
        }
        Ok(())
    }

    pub fn energy(&self, config: &SpinConfig) -> Result<f64> {
        self.check_len(config)?;
        Ok(self.energy_of_bits(config.bits()))
    }

    /// Energy of the configuration whose packed bits are `bits`; no length check.
    #[inline]
    pub fn energy_of_bits(&self, bits: u64) -> f64 {
        self.terms
            .iter()
            .zip(&self.masks)
            .fold(self.offset, |acc, (t, &m)| acc + t.coefficient * parity_sign(bits, m))
    }

    /// `E(flip_i(σ)) − E(σ)`, touching only the terms that contain `site`.
    pub fn delta_energy_flip(&self, config: &SpinConfig, site: usize) -> Result<f64> {
        self.check_len(config)?;
        if site >= self.n_sites {
            return Err(Error::Index {
                index: site,
                len: self.n_sites,
            });
        }
        Ok(self.delta_energy_flip_unchecked(config.bits(), site))
    }

    #[inline]
    pub(crate) fn delta_energy_flip_unchecked(&self, bits: u64, site: usize) -> f64 {
        let local = self.site_terms[site].iter().fold(0.0, |acc, &t| {
            acc + self.terms[t].coefficient * parity_sign(bits, self.masks[t])
        });
        -2.0 * local
    }

    /// Unnormalized Boltzmann weight `exp(−β E)`.
    pub fn boltzmann_weight(&self, config: &SpinConfig, t: Temperature) -> Result<f64> {
        Ok((-t.beta() * self.energy(config)?).exp())
    }

    /// Energies of all `2^N` configurations indexed by packed bits.
    pub fn energy_table(&self, exec: Execution) -> Result<Vec<f64>> {
        if self.n_sites > MAX_ENUMERATION_SITES {
            return Err(Error::Capacity {
                what: "energy table",
                size: self.n_sites,
                limit: MAX_ENUMERATION_SITES,
            });
        }
        let dim = 1usize << self.n_sites;
        let chunk = 1usize << 10;
        let chunks = dim.div_ceil(chunk);
        let parts = exec.map_range(chunks, |c| {
            let lo = c * chunk;
            let hi = (lo + chunk).min(dim);
            (lo..hi)
                .map(|z| self.energy_of_bits(z as u64))
                .collect::<Vec<_>>()
        });
        Ok(parts.concat())
    }

    /// Exhaustive ground-state search over all `2^N` configurations.
    pub fn ground_states_bruteforce(&self) -> Result<GroundStates> {
        let table = self.energy_table(Execution::default())?;
        Ok(GroundStates::from_energy_table(
            &table,
            self.n_sites,
            self.tie_tolerance(),
        ))
    }

    /// Ground-level tie tolerance: exact for integer models.
    pub fn tie_tolerance(&self) -> f64 {
        if self.has_integer_coefficients() {
            0.0
        } else {
            TIE_TOLERANCE
        }
    }
}

impl TryFrom<ModelFile> for IsingModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        IsingModel::new(f.n_sites, f.terms, f.offset)
    }
}

impl From<IsingModel> for ModelFile {
    fn from(m: IsingModel) -> Self {
        ModelFile {
            n_sites: m.n_sites,
            offset: m.offset,
            terms: m.terms,
        }
    }
}

fn sites_of(mask: u64) -> Vec<usize> {
    (0..64).filter(|&i| mask & (1 << i) != 0).collect()
}

/// Minimum energy and every configuration attaining it.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundStates {
    pub min_energy: f64,
    /// Ascending packed-bit order.
    pub states: Vec<SpinConfig>,
}

impl GroundStates {
    pub fn from_energy_table(table: &[f64], n_sites: usize, tolerance: f64) -> Self {
        let min_energy = table.iter().copied().fold(f64::INFINITY, f64::min);
        let states = table
            .iter()
            .enumerate()
            .filter(|&(_, &e)| e - min_energy <= tolerance)
            .map(|(z, _)| SpinConfig::from_bits(z as u64, n_sites))
            .collect();
        Self { min_energy, states }
    }

    /// Degeneracy `N_g`.
    pub fn degeneracy(&self) -> usize {
        self.states.len()
    }

    pub fn contains(&self, config: &SpinConfig) -> bool {
        self.states.binary_search(config).is_ok()
    }

    /// Position of `config` in the ground-state list, if it is one.
    pub fn index_of(&self, config: &SpinConfig) -> Option<usize> {
        self.states.binary_search(config).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_model(n: usize, max_order: usize, rng: &mut ChaCha8Rng) -> IsingModel {
        let mut terms = Vec::new();
        for _ in 0..(2 * n) {
            let order = rng.gen_range(1..=max_order.min(n));
            let sites: Vec<usize> = rand::seq::index::sample(rng, n, order).into_vec();
            let c = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            terms.push(IsingTerm::new(sites, c));
        }
        IsingModel::new(n, terms, rng.gen_range(-2..=2) as f64).unwrap()
    }

    /// Independent scalar loop over the spin vector.
    fn energy_oracle(model: &IsingModel, spins: &[i8]) -> f64 {
        let mut e = model.offset();
        for t in model.terms() {
            let mut prod = 1.0;
            for &s in &t.sites {
                prod *= spins[s] as f64;
            }
            e += t.coefficient * prod;
        }
        e
    }

    #[test]
    fn aligned_ferromagnetic_pair() {
        let m = IsingModel::from_fields_and_couplings(2, &[], &[(0, 1, -1.0)]).unwrap();
        let up = SpinConfig::all_up(2);
        assert_eq!(m.energy(&up).unwrap(), -1.0);
        assert_eq!(m.delta_energy_flip(&up, 0).unwrap(), 2.0);
    }

    #[test]
    fn constant_model() {
        let m = IsingModel::new(3, vec![], 1.5).unwrap();
        for z in 0..8 {
            assert_eq!(m.energy(&SpinConfig::from_bits(z, 3)).unwrap(), 1.5);
        }
        assert_eq!(m.delta_energy_flip(&SpinConfig::all_up(3), 2).unwrap(), 0.0);
    }

    #[test]
    fn five_site_energies_match_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_model(5, 2, &mut rng);
        for z in 0..32u64 {
            let c = SpinConfig::from_bits(z, 5);
            assert_eq!(m.energy(&c).unwrap(), energy_oracle(&m, &c.spins()));
        }
    }

    #[test]
    fn delta_matches_recompute_on_eight_sites() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_model(8, 3, &mut rng);
        for z in 0..256u64 {
            let c = SpinConfig::from_bits(z, 8);
            for i in 0..8 {
                let full = m.energy(&c.flipped(i)).unwrap() - m.energy(&c).unwrap();
                assert_eq!(m.delta_energy_flip(&c, i).unwrap(), full);
            }
        }
    }

    #[test]
    fn errors_on_bad_input() {
        let m = IsingModel::from_fields_and_couplings(2, &[], &[(0, 1, -1.0)]).unwrap();
        assert!(matches!(
            m.energy(&SpinConfig::all_up(3)),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            m.delta_energy_flip(&SpinConfig::all_up(2), 2),
            Err(Error::Index { .. })
        ));
        assert!(IsingModel::new(2, vec![IsingTerm::new(vec![0, 0], 1.0)], 0.0).is_err());
        assert!(IsingModel::new(2, vec![IsingTerm::new(vec![2], 1.0)], 0.0).is_err());
        let big = IsingModel::new(30, vec![], 0.0).unwrap();
        assert!(matches!(
            big.ground_states_bruteforce(),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn duplicate_terms_merge() {
        let a = IsingModel::new(
            3,
            vec![
                IsingTerm::new(vec![1, 0], 1.0),
                IsingTerm::new(vec![0, 1], 2.0),
                IsingTerm::new(vec![2], 1.0),
                IsingTerm::new(vec![2], -1.0),
            ],
            0.0,
        )
        .unwrap();
        let b = IsingModel::new(3, vec![IsingTerm::new(vec![0, 1], 3.0)], 0.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.terms()[0].sites, vec![0, 1]);
    }

    #[test]
    fn boltzmann_weights() {
        let m = IsingModel::from_fields_and_couplings(2, &[(0, 0.5)], &[(0, 1, -1.0)]).unwrap();
        let t = Temperature::new(1.3).unwrap();
        let a = SpinConfig::from_bits(0b00, 2);
        let b = SpinConfig::from_bits(0b01, 2);
        let wa = m.boltzmann_weight(&a, t).unwrap();
        let wb = m.boltzmann_weight(&b, t).unwrap();
        assert!((wa - (-1.3f64 * -0.5).exp()).abs() <= 1e-15 * wa);
        let de = m.energy(&b).unwrap() - m.energy(&a).unwrap();
        assert!((wb / wa - (-1.3 * de).exp()).abs() <= 1e-12 * (wb / wa));
        let zero = IsingModel::new(2, vec![], 0.0).unwrap();
        assert_eq!(zero.boltzmann_weight(&a, t).unwrap(), 1.0);
        assert!(Temperature::new(f64::NAN).is_err());
        assert!(Temperature::new(-1.0).is_err());
    }

    #[test]
    fn small_ground_states() {
        let ferro = IsingModel::from_fields_and_couplings(2, &[], &[(0, 1, -1.0)]).unwrap();
        let gs = ferro.ground_states_bruteforce().unwrap();
        assert_eq!(gs.min_energy, -1.0);
        assert_eq!(
            gs.states,
            vec![SpinConfig::from_bits(0b00, 2), SpinConfig::from_bits(0b11, 2)]
        );
        let field = IsingModel::from_fields_and_couplings(1, &[(0, 1.0)], &[]).unwrap();
        let gs = field.ground_states_bruteforce().unwrap();
        assert_eq!(gs.min_energy, -1.0);
        assert_eq!(gs.states, vec![SpinConfig::from_spins(&[-1]).unwrap()]);
    }

    #[test]
    fn non_integer_ties_use_tolerance() {
        let m = IsingModel::new(
            2,
            vec![
                IsingTerm::new(vec![0], 0.1 + 0.2),
                IsingTerm::new(vec![1], 0.3),
            ],
            0.0,
        )
        .unwrap();
        // flipping either single spin costs the same up to rounding
        let gs = m.ground_states_bruteforce().unwrap();
        assert_eq!(gs.degeneracy(), 1);
        let m2 = IsingModel::new(
            2,
            vec![
                IsingTerm::new(vec![0], 0.1 + 0.2),
                IsingTerm::new(vec![1], -0.3),
            ],
            0.0,
        )
        .unwrap();
        let gs2 = m2.ground_states_bruteforce().unwrap();
        assert_eq!(gs2.min_energy, m2.energy(&gs2.states[0]).unwrap());
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_model(6, 3, &mut rng);
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"n_sites\":6"));
        let back: IsingModel = serde_json::from_str(&s).unwrap();
        assert_eq!(m, back);
        assert!(serde_json::from_str::<IsingModel>(
            r#"{"n_sites":2,"offset":0,"terms":[{"sites":[5],"coeff":1}]}"#
        )
        .is_err());
    }

    #[test]
    fn bitstrings() {
        let c = SpinConfig::from_bitstring("0110").unwrap();
        assert_eq!(c.spins(), vec![1, -1, -1, 1]);
        assert_eq!(c.bitstring(), "0110");
        assert!(SpinConfig::from_bitstring("01x").is_err());
    }

    proptest! {
        #[test]
        fn pack_unpack_identity(bits in any::<u64>(), len in 0usize..=64) {
            let c = SpinConfig::from_bits(bits, len);
            prop_assert_eq!(SpinConfig::from_spins(&c.spins()).unwrap(), c);
            prop_assert_eq!(SpinConfig::from_bitstring(&c.bitstring()).unwrap(), c);
            let json = serde_json::to_string(&c).unwrap();
            prop_assert_eq!(serde_json::from_str::<SpinConfig>(&json).unwrap(), c);
        }

        #[test]
        fn delta_energy_is_exact(seed in any::<u64>(), n in 1usize..=10, bits in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_model(n, 3, &mut rng);
            let c = SpinConfig::from_bits(bits, n);
            for i in 0..n {
                let full = m.energy(&c.flipped(i)).unwrap() - m.energy(&c).unwrap();
                prop_assert_eq!(m.delta_energy_flip(&c, i).unwrap(), full);
            }
        }

        #[test]
        fn even_models_are_inversion_symmetric(seed in any::<u64>(), n in 2usize..=10, bits in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let terms = random_model(n, 4, &mut rng)
                .terms()
                .iter()
                .filter(|t| t.order() % 2 == 0)
                .cloned()
                .collect();
            let m = IsingModel::new(n, terms, 0.0).unwrap();
            prop_assert!(m.is_inversion_symmetric());
            let c = SpinConfig::from_bits(bits, n);
            prop_assert_eq!(m.energy(&c).unwrap(), m.energy(&c.negated()).unwrap());
        }

        #[test]
        fn weight_ratio_identity(seed in any::<u64>(), beta in 0.01f64..5.0, a in any::<u64>(), b in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_model(6, 2, &mut rng);
            let t = Temperature::new(beta).unwrap();
            let (ca, cb) = (SpinConfig::from_bits(a, 6), SpinConfig::from_bits(b, 6));
            let ratio = m.boltzmann_weight(&cb, t).unwrap() / m.boltzmann_weight(&ca, t).unwrap();
            let de = m.energy(&cb).unwrap() - m.energy(&ca).unwrap();
            let expected = (-beta * de).exp();
            prop_assert!((ratio - expected).abs() <= 1e-12 * expected);
        }

        #[test]
        fn ground_states_are_minimal(seed in any::<u64>(), n in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_model(n, 3, &mut rng);
            let gs = m.ground_states_bruteforce().unwrap();
            prop_assert!(!gs.states.is_empty());
            for s in &gs.states {
                prop_assert_eq!(m.energy(s).unwrap(), gs.min_energy);
            }
            for z in 0..(1u64 << n) {
                prop_assert!(m.energy_of_bits(z) >= gs.min_energy);
            }
        }
    }
}
