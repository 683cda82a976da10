//! Trainable cosine basis over time deltas.
//!
//! A delta Δt maps to the vector `cos(ω_i · Δt + b_i)` for `i < d_t`. The
//! frequencies are initialized on a fixed log-spaced grid spanning ten
//! decades, so small and large gaps are distinguishable from the start; both
//! `ω` and `b` are trained with the backbone and frozen afterwards.

use ndarray::Array2;

use crate::autodiff::{Tape, Var};

/// Exponent span of the initial frequency grid (`ω_i = 10^(-SPAN·i/d_t)`).
const FREQ_DECADE_SPAN: f64 = 9.0;

/// Cosine time-encoder parameters, stored as 1×d_t rows so they slot
/// directly into parameter sets and the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEncoder {
    /// Frequencies, strictly decreasing at init.
    pub omega: Array2<f64>,
    /// Phases, zero at init.
    pub b: Array2<f64>,
}

impl TimeEncoder {
    /// Closed-form init: `ω_i = 1 / 10^(9·i/d_t)`, `b_i = 0`.
    pub fn new(d_t: usize) -> Self {
        assert!(d_t > 0, "time encoding needs at least one dimension");
        let omega = Array2::from_shape_fn((1, d_t), |(_, i)| {
            10f64.powf(-FREQ_DECADE_SPAN * i as f64 / d_t as f64)
        });
        TimeEncoder {
            omega,
            b: Array2::zeros((1, d_t)),
        }
    }

    /// Encoding width.
    pub fn d_t(&self) -> usize {
        self.omega.ncols()
    }

    /// Encode a batch of deltas into an `n × d_t` matrix. Pure: identical
    /// inputs give bitwise-identical outputs.
    pub fn encode(&self, deltas: &[f64]) -> Array2<f64> {
        let d_t = self.d_t();
        Array2::from_shape_fn((deltas.len(), d_t), |(n, i)| {
            (self.omega[(0, i)] * deltas[n] + self.b[(0, i)]).cos()
        })
    }
}

/// Tape-side encoding used wherever gradients must reach `ω` and `b`:
/// `cos(Δt · ω + b)` built from differentiable primitives.
pub fn encode_on_tape(tape: &mut Tape, omega: Var, b: Var, deltas: &[f64]) -> Var {
    let col = Array2::from_shape_vec((deltas.len(), 1), deltas.to_vec())
        .expect("column reshape cannot fail");
    let col = tape.constant(col);
    let scaled = tape.matmul(col, omega);
    let shifted = tape.add_row(scaled, b);
    tape.cos(shifted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_init_matches_closed_form_grid() {
        let enc = TimeEncoder::new(2);
        assert_eq!(enc.omega[(0, 0)], 1.0);
        let expected = 10f64.powf(-4.5);
        assert!((enc.omega[(0, 1)] - expected).abs() < 1e-18);
        assert!(enc.b.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn test_init_frequencies_strictly_decreasing() {
        let enc = TimeEncoder::new(16);
        for i in 1..16 {
            assert!(
                enc.omega[(0, i)] < enc.omega[(0, i - 1)],
                "ω must decrease at index {i}"
            );
        }
    }

    #[test]
    fn test_encode_known_value() {
        let enc = TimeEncoder::new(1);
        let out = enc.encode(&[2.5]);
        assert!((out[(0, 0)] - 2.5f64.cos()).abs() < 1e-15);
        assert!((out[(0, 0)] - (-0.8011436155469337)).abs() < 1e-12);
    }

    #[test]
    fn test_encode_zero_delta_is_all_ones_at_init() {
        let enc = TimeEncoder::new(8);
        let out = enc.encode(&[0.0]);
        assert!(out.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn test_encode_outputs_bounded_by_one() {
        let enc = TimeEncoder::new(12);
        let deltas: Vec<f64> = (0..200).map(|i| i as f64 * 13.7).collect();
        let out = enc.encode(&deltas);
        assert!(out.iter().all(|&x| (-1.0..=1.0).contains(&x)));
    }

    #[test]
    fn test_encode_is_bitwise_deterministic() {
        let enc = TimeEncoder::new(7);
        let deltas = [0.0, 1.5, 88.25, 1e6];
        let a = enc.encode(&deltas);
        let b = enc.encode(&deltas);
        assert_eq!(a, b);
    }
}
