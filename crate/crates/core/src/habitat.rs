//! Habitat quality presets `m(x)` and their admissibility check.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SpatialField, SpatialGrid};

/// Named habitat or explicit nodal samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Habitat {
    /// `m ≡ value`.
    One {
        #[serde(default = "one")]
        value: f64,
    },
    /// `1 + amplitude · Π_k cos(π x_k / L_k)`.
    Cosine {
        #[serde(default = "half")]
        amplitude: f64,
    },
    /// `baseline + height · Σ_c exp(-((x_0 - c)/width)²)` over two centres on axis 0.
    TwoBump {
        #[serde(default = "default_baseline")]
        baseline: f64,
        #[serde(default = "one")]
        height: f64,
        #[serde(default = "default_width")]
        width: f64,
        #[serde(default = "default_centers")]
        centers: [f64; 2],
    },
    /// Values at the grid nodes in storage order.
    Samples { values: Vec<f64> },
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn default_baseline() -> f64 {
    0.2
}
fn default_width() -> f64 {
    0.1
}
fn default_centers() -> [f64; 2] {
    [0.25, 0.75]
}

impl Default for Habitat {
    fn default() -> Self {
        Habitat::Cosine { amplitude: 0.5 }
    }
}

impl Habitat {
    pub fn sample(&self, grid: Arc<SpatialGrid>) -> Result<SpatialField> {
        let ext = grid.extents().to_vec();
        match self {
            Habitat::One { value } => Ok(SpatialField::constant(grid, *value)),
            Habitat::Cosine { amplitude } => Ok(SpatialField::from_fn(grid, |p| {
                let prod: f64 = p.iter().zip(&ext).map(|(x, l)| (PI * x / l).cos()).product();
                1.0 + amplitude * prod
            })),
            Habitat::TwoBump {
                baseline,
                height,
                width,
                centers,
            } => {
                if !(*width > 0.0) {
                    return Err(Error::InvalidParameter("two-bump width must be positive".into()));
                }
                Ok(SpatialField::from_fn(grid, |p| {
                    let x = p[0] / ext[0];
                    baseline
                        + height
                            * centers
                                .iter()
                                .map(|c| (-((x - c) / width).powi(2)).exp())
                                .sum::<f64>()
                }))
            }
            Habitat::Samples { values } => SpatialField::new(grid, values.clone()),
        }
    }
}

/// Checks that `m` is non-constant with positive integral. Constant `m` with
/// positive mean passes only when `allow_constant` is set.
pub fn validate_habitat(m: &SpatialField, allow_constant: bool) -> Result<()> {
    let total = m.integral();
    if !(total > 0.0) {
        return Err(Error::Habitat(format!("integral of m is {total:.6e}, must be positive")));
    }
    if !allow_constant && !m.is_nonconstant(1e-12 * (1.0 + m.sup_norm())) {
        return Err(Error::Habitat(
            "m is constant; enable trivial mode to run the no-selection case".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_expected_means() {
        let g = Arc::new(SpatialGrid::unit_interval(96).unwrap());
        let m = Habitat::default().sample(g.clone()).unwrap();
        assert!((m.mean() - 1.0).abs() < 1e-12);
        assert!((m.max() - 1.5).abs() < 1e-12 && (m.min() - 0.5).abs() < 1e-12);
        let bump = Habitat::TwoBump {
            baseline: 0.2,
            height: 1.0,
            width: 0.1,
            centers: [0.25, 0.75],
        }
        .sample(g.clone())
        .unwrap();
        validate_habitat(&bump, false).unwrap();
    }

    #[test]
    fn admissibility() {
        let g = Arc::new(SpatialGrid::unit_interval(32).unwrap());
        let flat = Habitat::One { value: 1.0 }.sample(g.clone()).unwrap();
        assert!(matches!(validate_habitat(&flat, false), Err(Error::Habitat(_))));
        validate_habitat(&flat, true).unwrap();
        let hostile = SpatialField::from_fn(g.clone(), |p| -2.0 + (PI * p[0]).cos());
        assert!(validate_habitat(&hostile, true).is_err());
        assert!(Habitat::Samples { values: vec![1.0; 3] }.sample(g).is_err());
    }

    #[test]
    fn parses_presets() {
        let h: Habitat = serde_json::from_str(r#"{"preset":"cosine","amplitude":0.3}"#).unwrap();
        assert_eq!(h, Habitat::Cosine { amplitude: 0.3 });
        let h: Habitat = serde_json::from_str(r#"{"preset":"one"}"#).unwrap();
        assert_eq!(h, Habitat::One { value: 1.0 });
        assert!(serde_json::from_str::<Habitat>(r#"{"preset":"three-bump"}"#).is_err());
    }
}
