//! Causal populations and the per-sample latent mask.
//!
//! An observation `(t, y_obs)` pins one of the two potential outcomes,
//! `y_t = y_obs`, which leaves exactly two admissible populations. The mask
//! keeps the latent blocks of those two and zeroes the other two.
//!
//! Latent layout, in this order: `r` Responder nodes, `r` Doomed nodes,
//! `r` Survivor nodes, `r` Anti-responder nodes, then `q` unconstrained
//! info nodes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CausalPopulation {
    Responder,
    Doomed,
    Survivor,
    AntiResponder,
}

impl CausalPopulation {
    /// Block order used everywhere: R, D, S, A.
    pub const ALL: [CausalPopulation; 4] = [
        CausalPopulation::Responder,
        CausalPopulation::Doomed,
        CausalPopulation::Survivor,
        CausalPopulation::AntiResponder,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// `(y0, y1)`.
    pub fn potential_outcomes(self) -> (u8, u8) {
        match self {
            CausalPopulation::Responder => (0, 1),
            CausalPopulation::Doomed => (0, 0),
            CausalPopulation::Survivor => (1, 1),
            CausalPopulation::AntiResponder => (1, 0),
        }
    }

    pub fn from_potential_outcomes(y0: u8, y1: u8) -> Result<Self> {
        match (y0, y1) {
            (0, 1) => Ok(CausalPopulation::Responder),
            (0, 0) => Ok(CausalPopulation::Doomed),
            (1, 1) => Ok(CausalPopulation::Survivor),
            (1, 0) => Ok(CausalPopulation::AntiResponder),
            _ => Err(Error::Data(format!(
                "potential outcomes must be binary, got ({y0}, {y1})"
            ))),
        }
    }

    /// Outcome under treatment value `t`.
    pub fn outcome(self, t: u8) -> u8 {
        let (y0, y1) = self.potential_outcomes();
        if t == 0 {
            y0
        } else {
            y1
        }
    }

    /// Individual treatment effect `y1 - y0`.
    pub fn effect(self) -> i8 {
        let (y0, y1) = self.potential_outcomes();
        y1 as i8 - y0 as i8
    }

    pub fn short_name(self) -> &'static str {
        match self {
            CausalPopulation::Responder => "R",
            CausalPopulation::Doomed => "D",
            CausalPopulation::Survivor => "S",
            CausalPopulation::AntiResponder => "A",
        }
    }
}

impl fmt::Display for CausalPopulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for CausalPopulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "R" | "responder" | "Responder" => Ok(CausalPopulation::Responder),
            "D" | "doomed" | "Doomed" => Ok(CausalPopulation::Doomed),
            "S" | "survivor" | "Survivor" => Ok(CausalPopulation::Survivor),
            "A" | "anti_responder" | "AntiResponder" => Ok(CausalPopulation::AntiResponder),
            other => Err(Error::Data(format!("unknown population {other:?}"))),
        }
    }
}

pub(crate) fn check_binary(name: &str, v: u8) -> Result<()> {
    if v > 1 {
        return Err(Error::Data(format!("{name} must be 0 or 1, got {v}")));
    }
    Ok(())
}

/// The two populations compatible with observing `y_obs` under treatment `t`.
pub fn admissible_populations(t: u8, y_obs: u8) -> Result<[CausalPopulation; 2]> {
    check_binary("t", t)?;
    check_binary("y_obs", y_obs)?;
    let mut out = CausalPopulation::ALL
        .into_iter()
        .filter(|p| p.outcome(t) == y_obs);
    Ok([out.next().expect("two matches"), out.next().expect("two matches")])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentLayout {
    pub nodes_per_population: usize,
    pub info_nodes: usize,
    pub feature_dim: usize,
}

impl LatentLayout {
    pub fn new(nodes_per_population: usize, info_nodes: usize, feature_dim: usize) -> Result<Self> {
        let layout = LatentLayout {
            nodes_per_population,
            info_nodes,
            feature_dim,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes_per_population == 0 {
            return Err(Error::config("nodes_per_population must be at least 1"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim must be at least 1"));
        }
        if self.info_nodes >= self.feature_dim {
            return Err(Error::config(format!(
                "info_nodes ({}) must be lower than the feature dimension ({})",
                self.info_nodes, self.feature_dim
            )));
        }
        Ok(())
    }

    /// `4r + q`.
    pub fn latent_dim(&self) -> usize {
        4 * self.nodes_per_population + self.info_nodes
    }

    pub fn population_nodes(&self) -> usize {
        4 * self.nodes_per_population
    }

    pub fn block(&self, population: CausalPopulation) -> std::ops::Range<usize> {
        let r = self.nodes_per_population;
        let start = population.index() * r;
        start..start + r
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    gates: Vec<u8>,
}

impl Mask {
    pub fn gates(&self) -> &[u8] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    /// Populations whose block is open.
    pub fn open_populations(&self, layout: &LatentLayout) -> Vec<CausalPopulation> {
        CausalPopulation::ALL
            .into_iter()
            .filter(|&p| self.gates[layout.block(p)].iter().all(|&g| g == 1))
            .collect()
    }
}

/// Gates `(1[t = y], 1 - y, y, 1[t != y])`, each repeated `r` times, then `q` ones.
pub fn build_mask(t: u8, y_obs: u8, layout: &LatentLayout) -> Result<Mask> {
    check_binary("t", t)?;
    check_binary("y_obs", y_obs)?;
    let block_gates = [
        u8::from(t == y_obs),
        1 - y_obs,
        y_obs,
        u8::from(t != y_obs),
    ];
    let r = layout.nodes_per_population;
    let mut gates = Vec::with_capacity(layout.latent_dim());
    for g in block_gates {
        gates.extend(std::iter::repeat_n(g, r));
    }
    gates.extend(std::iter::repeat_n(1, layout.info_nodes));
    Ok(Mask { gates })
}

/// Elementwise gating `z_j * gate_j`.
pub fn apply_mask(z: &[f64], mask: &Mask) -> Result<Vec<f64>> {
    if z.len() != mask.len() {
        return Err(Error::config(format!(
            "latent has {} units but mask has {}",
            z.len(),
            mask.len()
        )));
    }
    Ok(z.iter()
        .zip(&mask.gates)
        .map(|(&v, &g)| if g == 1 { v } else { 0.0 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use CausalPopulation::*;

    fn layout(r: usize, q: usize) -> LatentLayout {
        LatentLayout::new(r, q, q + 1).unwrap()
    }

    #[test]
    fn untreated_failure_keeps_responder_and_doomed() {
        assert_eq!(build_mask(0, 0, &layout(1, 0)).unwrap().gates(), &[1, 1, 0, 0]);
    }

    #[test]
    fn treated_success_keeps_responder_and_survivor() {
        assert_eq!(build_mask(1, 1, &layout(1, 0)).unwrap().gates(), &[1, 0, 1, 0]);
    }

    #[test]
    fn repeated_blocks_and_info_gates() {
        let m = build_mask(0, 1, &layout(2, 3)).unwrap();
        assert_eq!(m.gates(), &[0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn admissible_pairs_follow_definitions() {
        assert_eq!(admissible_populations(0, 0).unwrap(), [Responder, Doomed]);
        assert_eq!(admissible_populations(1, 0).unwrap(), [Doomed, AntiResponder]);
        assert_eq!(admissible_populations(0, 1).unwrap(), [Survivor, AntiResponder]);
        assert_eq!(admissible_populations(1, 1).unwrap(), [Responder, Survivor]);
    }

    #[test]
    fn mask_matches_admissible_for_every_observation() {
        for r in [1, 2, 5] {
            for q in [0, 5] {
                let l = LatentLayout::new(r, q, 10).unwrap();
                for t in 0..2 {
                    for y in 0..2 {
                        let m = build_mask(t, y, &l).unwrap();
                        let open = m.open_populations(&l);
                        assert_eq!(open, admissible_populations(t, y).unwrap().to_vec());
                        let ones = m.gates()[..4 * r].iter().filter(|&&g| g == 1).count();
                        assert_eq!(ones, 2 * r);
                        assert!(m.gates()[4 * r..].iter().all(|&g| g == 1));
                    }
                }
            }
        }
    }

    #[test]
    fn apply_mask_examples() {
        let l = layout(1, 0);
        let m = build_mask(0, 0, &l).unwrap();
        assert_eq!(apply_mask(&[0.25; 4], &m).unwrap(), vec![0.25, 0.25, 0.0, 0.0]);
        let m = build_mask(0, 1, &l).unwrap();
        assert_eq!(
            apply_mask(&[0.1, 0.2, 0.3, 0.4], &m).unwrap(),
            vec![0.0, 0.0, 0.3, 0.4]
        );
        let ones = Mask { gates: vec![1; 4] };
        assert_eq!(apply_mask(&[0.1, 0.2, 0.3, 0.4], &ones).unwrap(), vec![0.1, 0.2, 0.3, 0.4]);
        assert!(apply_mask(&[0.1, 0.2], &m).is_err());
    }

    #[test]
    fn non_binary_inputs_rejected() {
        assert!(build_mask(2, 0, &layout(1, 0)).is_err());
        assert!(admissible_populations(0, 3).is_err());
    }

    #[test]
    fn layout_bounds() {
        assert!(LatentLayout::new(0, 0, 5).is_err());
        assert!(LatentLayout::new(1, 5, 5).is_err());
        assert_eq!(LatentLayout::new(5, 0, 25).unwrap().latent_dim(), 20);
        assert_eq!(LatentLayout::new(1, 5, 25).unwrap().latent_dim(), 9);
    }

    #[test]
    fn population_round_trips() {
        for p in CausalPopulation::ALL {
            let (y0, y1) = p.potential_outcomes();
            assert_eq!(CausalPopulation::from_potential_outcomes(y0, y1).unwrap(), p);
            assert_eq!(p.short_name().parse::<CausalPopulation>().unwrap(), p);
        }
    }

    proptest! {
        #[test]
        fn apply_mask_is_idempotent(
            z in prop::collection::vec(-5.0f64..5.0, 11),
            t in 0u8..2,
            y in 0u8..2,
        ) {
            let m = build_mask(t, y, &layout(2, 3)).unwrap();
            let once = apply_mask(&z, &m).unwrap();
            let twice = apply_mask(&once, &m).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
