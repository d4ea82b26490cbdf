//! Linear FPGA area model for the reservoir.
//!
//! A neuron's membrane datapath costs a fixed number of slices and one
//! embedded multiplier for the leak. A stochastic synapse is a comparator and
//! a counter in a few slices. A conventional synapse needs its own multiplier
//! for the weight product.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// Stochastic comparator synapses.
    Proposed,
    /// One multiplier per synapse.
    Traditional,
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Design::Proposed => "proposed",
            Design::Traditional => "traditional",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    /// Slices per neuron: a one-neuron, two-synapse build took 85 slices,
    /// 8 of which are the two synapses.
    pub membrane_slices: u64,
    pub synapse_slices: u64,
    pub device_slices: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            membrane_slices: 77,
            synapse_slices: 4,
            device_slices: 23616,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceEstimate {
    pub slices: u64,
    pub multipliers: u64,
    pub design: Design,
    pub device_slices: u64,
}

impl ResourceEstimate {
    /// Percentage of the device's slices.
    pub fn utilization(&self) -> f64 {
        100.0 * self.slices as f64 / self.device_slices as f64
    }
}

impl CostModel {
    pub fn estimate(
        &self,
        neurons: u64,
        synapses: u64,
        design: Design,
    ) -> Result<ResourceEstimate> {
        if neurons == 0 {
            return Err(Error::Config(
                "a reservoir needs at least one neuron".into(),
            ));
        }
        Ok(ResourceEstimate {
            slices: self.membrane_slices * neurons + self.synapse_slices * synapses,
            multipliers: match design {
                Design::Proposed => neurons,
                Design::Traditional => neurons + synapses,
            },
            design,
            device_slices: self.device_slices,
        })
    }

    pub fn fit_check(&self) -> FitReport {
        let p = |n, s, d| {
            self.estimate(n, s, d)
                .expect("published points have neurons")
        };
        let points = vec![
            FitPoint::new(
                "1 neuron, 2 synapses: slices",
                &[85],
                &[p(1, 2, Design::Proposed).slices],
            ),
            FitPoint::new(
                "8 neurons, 16 synapses: slices, multipliers",
                &[680, 8],
                &[
                    p(8, 16, Design::Proposed).slices,
                    p(8, 16, Design::Proposed).multipliers,
                ],
            ),
            FitPoint::new(
                "8 neurons, 16 synapses, traditional: multipliers",
                &[24],
                &[p(8, 16, Design::Traditional).multipliers],
            ),
            FitPoint::new(
                "100 synapses: synapse slices",
                &[400],
                &[self.synapse_slices * 100],
            ),
        ];
        FitReport { points }
    }
}

pub fn estimate(neurons: u64, synapses: u64, design: Design) -> Result<ResourceEstimate> {
    CostModel::default().estimate(neurons, synapses, design)
}

pub fn fit_check() -> FitReport {
    CostModel::default().fit_check()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FitPoint {
    pub description: &'static str,
    pub published: Vec<u64>,
    pub modeled: Vec<u64>,
}

impl FitPoint {
    fn new(description: &'static str, published: &[u64], modeled: &[u64]) -> Self {
        FitPoint {
            description,
            published: published.to_vec(),
            modeled: modeled.to_vec(),
        }
    }

    pub fn matches(&self) -> bool {
        self.published == self.modeled
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FitReport {
    pub points: Vec<FitPoint>,
}

impl FitReport {
    pub fn matched(&self) -> usize {
        self.points.iter().filter(|p| p.matches()).count()
    }

    pub fn all_match(&self) -> bool {
        self.matched() == self.points.len()
    }
}

impl fmt::Display for FitReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.points {
            writeln!(
                f,
                "{:<50} published {:<10} model {:<10} {}",
                p.description,
                join(&p.published),
                join(&p.modeled),
                if p.matches() { "match" } else { "MISMATCH" }
            )?;
        }
        write!(f, "{}/{} points match", self.matched(), self.points.len())
    }
}

fn join(v: &[u64]) -> String {
    v.iter().map(u64::to_string).collect::<Vec<_>>().join("/")
}

pub fn report_csv(rows: &[(u64, u64, ResourceEstimate)]) -> String {
    let mut out =
        String::from("design,neurons,synapses,slices,multipliers,device_slices,utilization_pct\n");
    for (n, s, e) in rows {
        out.push_str(&format!(
            "{},{n},{s},{},{},{},{:.3}\n",
            e.design,
            e.slices,
            e.multipliers,
            e.device_slices,
            e.utilization()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_neuron_build() {
        let e = estimate(1, 2, Design::Proposed).unwrap();
        assert_eq!((e.slices, e.multipliers), (85, 1));
        assert!((e.utilization() - 100.0 * 85.0 / 23616.0).abs() < 1e-12);
    }

    #[test]
    fn eight_neuron_reservoir() {
        let p = estimate(8, 16, Design::Proposed).unwrap();
        assert_eq!((p.slices, p.multipliers), (680, 8));
        assert_eq!(
            estimate(8, 16, Design::Traditional).unwrap().multipliers,
            24
        );
    }

    #[test]
    fn zero_synapses_is_membrane_only() {
        assert_eq!(estimate(5, 0, Design::Proposed).unwrap().slices, 385);
        assert!(matches!(
            estimate(0, 3, Design::Proposed),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn published_points_fit() {
        let r = fit_check();
        assert!(r.all_match(), "{r}");
        assert!(r.to_string().ends_with("4/4 points match"));
    }

    #[test]
    fn perturbed_membrane_cost_is_flagged() {
        let r = CostModel {
            membrane_slices: 78,
            ..Default::default()
        }
        .fit_check();
        let bad: Vec<_> = r
            .points
            .iter()
            .filter(|p| !p.matches())
            .map(|p| p.published[0])
            .collect();
        assert_eq!(bad, vec![85, 680]);
        assert!(r.to_string().contains("MISMATCH"));
    }

    #[test]
    fn csv_report() {
        let e = estimate(8, 16, Design::Proposed).unwrap();
        let csv = report_csv(&[(8, 16, e)]);
        assert_eq!(
            csv.lines().nth(1).unwrap(),
            "proposed,8,16,680,8,23616,2.879"
        );
    }

    proptest! {
        #[test]
        fn proposed_multipliers_ignore_synapses(n in 1u64..1000, s in 0u64..10_000, t in 0u64..10_000) {
            prop_assert_eq!(
                estimate(n, s, Design::Proposed).unwrap().multipliers,
                estimate(n, t, Design::Proposed).unwrap().multipliers
            );
        }

        #[test]
        fn traditional_surplus_is_synapse_count(n in 1u64..1000, s in 0u64..10_000) {
            let p = estimate(n, s, Design::Proposed).unwrap();
            let t = estimate(n, s, Design::Traditional).unwrap();
            prop_assert_eq!(t.multipliers - p.multipliers, s);
            prop_assert_eq!(t.slices, p.slices);
        }
    }
}
