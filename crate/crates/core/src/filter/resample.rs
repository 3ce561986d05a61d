use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ResamplePolicy {
    #[default]
    EveryUpdate,
    /// Resample when the effective sample size drops below `fraction * n`.
    EssBelow { fraction: f64 },
}

/// Systematic (low-variance) resampling: `count` evenly spaced pointers at
/// `(phase + i) / count`, `phase` in `[0, 1)`, walked once over the cumulative
/// weights. Returns the selected parent index for every offspring.
///
/// Weights are expected to sum to one. The walk runs in units of `1 / count`
/// and compares against `phase` directly, so dyadic weights are split exactly.
pub fn systematic_indices(weights: &[f64], count: usize, phase: f64) -> Vec<usize> {
    assert!(!weights.is_empty(), "cannot resample an empty set");
    let last = weights.len() - 1;
    let n = count as f64;
    let mut out = Vec::with_capacity(count);
    let mut j = 0;
    let mut cum = weights[0] * n;
    for i in 0..count {
        let i = i as f64;
        while phase >= cum - i && j < last {
            j += 1;
            cum += weights[j] * n;
        }
        out.push(j);
    }
    out
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    if sq == 0.0 {
        0.0
    } else {
        1.0 / sq
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(idx: &[usize], n: usize) -> Vec<usize> {
        let mut c = vec![0; n];
        for &i in idx {
            c[i] += 1;
        }
        c
    }

    #[test]
    fn counts_are_phase_independent_for_dyadic_weights() {
        // Enumerate the phase interval finely, including both ends.
        for step in 0..=1000 {
            let phase = (step as f64 / 1000.0).min(1.0 - f64::EPSILON);
            let idx = systematic_indices(&[0.5, 0.25, 0.25], 4, phase);
            assert_eq!(counts(&idx, 3), vec![2, 1, 1], "phase {phase}");
        }
    }

    #[test]
    fn uniform_weights_keep_every_particle() {
        let w = vec![0.1; 10];
        for phase in [0.0, 0.3, 0.999] {
            assert_eq!(systematic_indices(&w, 10, phase), (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn single_heavy_particle_takes_all() {
        let w = [0.0, 0.0, 1.0, 0.0];
        assert_eq!(systematic_indices(&w, 4, 0.5), vec![2; 4]);
        assert_eq!(systematic_indices(&w, 4, 0.0), vec![2; 4]);
    }

    #[test]
    fn counts_stay_within_one_of_expectation() {
        let w = [0.13, 0.07, 0.31, 0.2, 0.29];
        for phase in [0.0, 0.17, 0.5, 0.83] {
            let c = counts(&systematic_indices(&w, 100, phase), 5);
            for (ci, wi) in c.iter().zip(w) {
                assert!((*ci as f64 - 100.0 * wi).abs() <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn ess() {
        assert!((effective_sample_size(&[0.25; 4]) - 4.0).abs() < 1e-12);
        assert_eq!(effective_sample_size(&[1.0, 0.0]), 1.0);
    }
}
