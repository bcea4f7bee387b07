//! Bundled five-site Ising instances with degenerate ground states.
//!
//! Couplings and fields take values in {−1, 0, +1}. The three models were
//! reconstructed from a coupling-graph figure and are pinned by their ground
//! state degeneracies (3, 4 and 6) and by reproducing transverse-field
//! annealing bias at long annealing times.

use crate::{IsingModel, Result};

const THREEFOLD: &str = include_str!("../fixtures/five_site_threefold.json");
const FOURFOLD: &str = include_str!("../fixtures/five_site_fourfold.json");
const SIXFOLD: &str = include_str!("../fixtures/five_site_sixfold.json");

/// Names of the bundled instances, in presentation order.
pub const SMALL_INSTANCE_NAMES: [&str; 3] = ["threefold", "fourfold", "sixfold"];

pub fn small_instance(name: &str) -> Option<Result<IsingModel>> {
    let src = match name {
        "threefold" => THREEFOLD,
        "fourfold" => FOURFOLD,
        "sixfold" => SIXFOLD,
        _ => return None,
    };
    Some(serde_json::from_str(src).map_err(Into::into))
}

pub fn small_instances() -> Result<Vec<(&'static str, IsingModel)>> {
    SMALL_INSTANCE_NAMES
        .iter()
        .map(|&n| Ok((n, small_instance(n).expect("bundled name")?)))
        .collect()
}

/// The sixfold-degenerate instance used for the annealing-time sweep.
pub fn sixfold() -> IsingModel {
    serde_json::from_str(SIXFOLD).expect("bundled fixture parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degeneracies() {
        let expected = [3, 4, 6];
        for ((name, model), n_g) in small_instances().unwrap().into_iter().zip(expected) {
            let gs = model.ground_states_bruteforce().unwrap();
            assert_eq!(gs.degeneracy(), n_g, "{name}");
            assert_eq!(model.n_sites(), 5);
            assert!(model.max_order() <= 2);
            assert!(model
                .terms()
                .iter()
                .all(|t| t.coefficient == 1.0 || t.coefficient == -1.0));
        }
        assert!(sixfold().is_inversion_symmetric());
        assert!(small_instance("nope").is_none());
    }
}
