use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::embeddings::SimilarityRow;
use crate::error::{Error, Result};

/// Per-tile measurement likelihood.
///
/// `Exponential` scores the raw Euclidean embedding distance `d` with
/// `beta * exp(-beta * d)`. `Gaussian` scores the similarity gap
/// `z = max(s) - s[k]` with a zero-mean normal density of scale `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasurementModel {
    Exponential { beta: f64 },
    Gaussian { sigma: f64 },
}

impl MeasurementModel {
    pub const DEFAULT_BETA: f64 = 5.0;
    pub const DEFAULT_SIGMA: f64 = 0.1;

    pub fn exponential() -> Self {
        MeasurementModel::Exponential {
            beta: Self::DEFAULT_BETA,
        }
    }

    pub fn gaussian() -> Self {
        MeasurementModel::Gaussian {
            sigma: Self::DEFAULT_SIGMA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            MeasurementModel::Exponential { beta } => ("beta", beta),
            MeasurementModel::Gaussian { sigma } => ("sigma", sigma),
        };
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(Error::config(format!("measurement model {name} must be positive, got {v}")))
        }
    }

    pub fn likelihood(&self, value: f64) -> f64 {
        match *self {
            MeasurementModel::Exponential { beta } => beta * (-beta * value).exp(),
            MeasurementModel::Gaussian { sigma } => {
                (-0.5 * (value / sigma).powi(2)).exp() / (sigma * (2.0 * PI).sqrt())
            }
        }
    }

    pub fn log_likelihood(&self, value: f64) -> f64 {
        match *self {
            MeasurementModel::Exponential { beta } => beta.ln() - beta * value,
            MeasurementModel::Gaussian { sigma } => {
                -0.5 * (value / sigma).powi(2) - (sigma * (2.0 * PI).sqrt()).ln()
            }
        }
    }

    /// The per-tile quantity this model consumes: distances for the
    /// exponential model, similarity gaps for the Gaussian one.
    pub fn measurement(&self, row: &SimilarityRow) -> Measurement {
        match self {
            MeasurementModel::Exponential { .. } => Measurement::new(row.distances()),
            MeasurementModel::Gaussian { .. } => Measurement::new(row.gaps()),
        }
    }
}

/// One value per tile, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub values: Vec<f64>,
}

impl Measurement {
    pub fn new(values: Vec<f64>) -> Self {
        Measurement { values }
    }

    pub fn uniform(num_tiles: usize, value: f64) -> Self {
        Measurement::new(vec![value; num_tiles])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TileGrid;

    #[test]
    fn closed_form_values() {
        let g = MeasurementModel::gaussian();
        assert!((g.likelihood(0.0) - 3.989_422_804_014_327).abs() < 1e-12);
        assert!((g.likelihood(0.1) - 3.989_422_804_014_327 * (-0.5f64).exp()).abs() < 1e-12);
        assert!((g.likelihood(0.1) - 2.4197).abs() < 1e-4);
        let e = MeasurementModel::Exponential { beta: 2.0 };
        assert_eq!(e.likelihood(0.0), 2.0);
        for v in [0.0, 0.05, 0.3, 1.2] {
            for m in [g, e] {
                assert!((m.log_likelihood(v) - m.likelihood(v).ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn likelihoods_strictly_decrease() {
        for m in [MeasurementModel::gaussian(), MeasurementModel::exponential()] {
            let vals: Vec<f64> = (0..200).map(|i| m.likelihood(i as f64 * 0.01)).collect();
            assert!(vals.windows(2).all(|w| w[1] < w[0]), "{m:?}");
        }
    }

    #[test]
    fn validation() {
        assert!(MeasurementModel::Gaussian { sigma: 0.0 }.validate().is_err());
        assert!(MeasurementModel::Exponential { beta: -1.0 }.validate().is_err());
        assert!(MeasurementModel::gaussian().validate().is_ok());
    }

    #[test]
    fn measurement_kinds() {
        let grid = TileGrid::square(64.0, 1, 3).unwrap();
        let row = SimilarityRow::from_values(&grid, vec![0.5, 1.0, -1.0]);
        let z = MeasurementModel::gaussian().measurement(&row);
        assert_eq!(z.values, vec![0.5, 0.0, 2.0]);
        assert!(z.values.iter().all(|v| *v >= 0.0));
        let d = MeasurementModel::exponential().measurement(&row);
        assert!((d.values[0] - 1.0).abs() < 1e-12);
        assert_eq!(d.values[1], 0.0);
        assert!((d.values[2] - 2.0).abs() < 1e-12);
    }
}
