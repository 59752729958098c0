//! Moments of a scalar quantity over a one-dimensional random parameter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "density", rename_all = "kebab-case")]
pub enum DensitySpec {
    /// Point masses `(a_k, p_k)`.
    Discrete { points: Vec<(f64, f64)> },
    /// `U(lo, hi)` integrated with the composite trapezoid rule.
    Uniform { lo: f64, hi: f64, nodes: usize },
}

impl DensitySpec {
    /// Nodes and normalized weights.
    pub fn nodes(&self) -> Result<Vec<(f64, f64)>> {
        match self {
            DensitySpec::Discrete { points } => {
                let total: f64 = points.iter().map(|p| p.1).sum();
                if points.is_empty() || points.iter().any(|p| !(p.1 >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidArgument("discrete probabilities must be >= 0 and sum to 1".into()));
                }
                Ok(points.clone())
            }
            DensitySpec::Uniform { lo, hi, nodes } => {
                if *nodes < 2 || !(hi > lo) {
                    return Err(Error::InvalidArgument("uniform density needs hi > lo and >= 2 nodes".into()));
                }
                let step = (hi - lo) / (*nodes - 1) as f64;
                let w = 1.0 / (*nodes - 1) as f64;
                Ok((0..*nodes)
                    .map(|k| {
                        let end = k == 0 || k == nodes - 1;
                        (lo + k as f64 * step, if end { 0.5 * w } else { w })
                    })
                    .collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    pub node_count: usize,
    pub density: DensitySpec,
}

/// Mean and standard deviation of `λ(a)` sampled at the density's nodes.
/// `samples` are `(a_k, λ_k)` pairs in node order.
pub fn moments(samples: &[(f64, f64)], density: &DensitySpec) -> Result<Moments> {
    let nodes = density.nodes()?;
    if samples.len() != nodes.len() {
        return Err(Error::Shape(format!("{} samples for {} density nodes", samples.len(), nodes.len())));
    }
    for ((a, _), (node, _)) in samples.iter().zip(&nodes) {
        if (a - node).abs() > 1e-9 * (1.0 + node.abs()) {
            return Err(Error::InvalidArgument(format!("sample at {a} does not match density node {node}")));
        }
    }
    let mean: f64 = samples.iter().zip(&nodes).map(|((_, l), (_, w))| w * l).sum();
    let second: f64 = samples.iter().zip(&nodes).map(|((_, l), (_, w))| w * l * l).sum();
    let mut var = second - mean * mean;
    if var < 0.0 {
        if var < -1e-10 * (1.0 + second.abs()) {
            return Err(Error::InvalidArgument(format!("negative variance {var}")));
        }
        log::warn!("clamping round-off variance {var} to zero");
        var = 0.0;
    }
    Ok(Moments { mean, std: var.sqrt(), node_count: nodes.len(), density: density.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uniform(nodes: usize) -> DensitySpec {
        DensitySpec::Uniform { lo: 0.0, hi: 1.0, nodes }
    }

    fn sample<F: Fn(f64) -> f64>(d: &DensitySpec, f: F) -> Vec<(f64, f64)> {
        d.nodes().unwrap().iter().map(|(a, _)| (*a, f(*a))).collect()
    }

    #[test]
    fn constant_curve() {
        let d = uniform(101);
        let m = moments(&sample(&d, |_| 3.5), &d).unwrap();
        assert!((m.mean - 3.5).abs() < 1e-12);
        assert_eq!(m.std, 0.0);
    }

    #[test]
    fn identity_on_unit_interval() {
        let d = uniform(101);
        let m = moments(&sample(&d, |a| a), &d).unwrap();
        assert!((m.mean - 0.5).abs() < 1e-4);
        assert!((m.std - 1.0 / 12f64.sqrt()).abs() < 1e-3);
        assert_eq!(m.node_count, 101);
    }

    #[test]
    fn discrete_and_errors() {
        let d = DensitySpec::Discrete { points: vec![(0.25, 0.5), (0.5, 0.5)] };
        let m = moments(&[(0.25, 2.0), (0.5, 4.0)], &d).unwrap();
        assert_eq!((m.mean, m.std), (3.0, 1.0));
        assert!(moments(&[(0.25, 2.0)], &d).is_err());
        assert!(moments(&[(0.3, 2.0), (0.5, 4.0)], &d).is_err());
        let bad = DensitySpec::Discrete { points: vec![(0.0, 0.7)] };
        assert!(bad.nodes().is_err());
    }

    proptest! {
        #[test]
        fn shift_scale_equivariance(
            vals in prop::collection::vec(-50.0f64..50.0, 11),
            alpha in -4.0f64..4.0,
            beta in -10.0f64..10.0,
        ) {
            let d = uniform(11);
            let nodes = d.nodes().unwrap();
            let s: Vec<(f64, f64)> = nodes.iter().zip(&vals).map(|((a, _), v)| (*a, *v)).collect();
            let t: Vec<(f64, f64)> = s.iter().map(|(a, v)| (*a, alpha * v + beta)).collect();
            let m = moments(&s, &d).unwrap();
            let n = moments(&t, &d).unwrap();
            prop_assert!((n.mean - (alpha * m.mean + beta)).abs() <= 1e-9 * (1.0 + n.mean.abs()));
            prop_assert!((n.std - alpha.abs() * m.std).abs() <= 1e-6 * (1.0 + m.std * alpha.abs()));
        }
    }
}
