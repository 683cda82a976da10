//! Prompt fusion and task heads.
//!
//! Fusion maps a backbone embedding `z` (width `d_z`) and a prompt `p`
//! (width `d_p`, usually but not necessarily equal) through a two-layer MLP
//! into the prompted embedding `z̃` of width `d_z` — a learned mix,
//! deliberately richer than addition. Two heads consume prompted embeddings:
//! a link head scoring endpoint pairs (one logit/probability per pair) and a
//! node-classification head (two layers, hidden `d/2`, dropout 0.1 while
//! training) producing class probabilities.

use ndarray::{s, Array2};
use rand_chacha::ChaCha12Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{
    dropout_mask, linear_apply, mlp2_apply, mlp2_init, xavier_uniform, Bound, ParamSet,
};

/// Bias pair that keeps the hidden ReLU linear around typical embeddings:
/// `relu(z + SHIFT) − SHIFT = z` for every entry above `−SHIFT`.
const FUSION_SHIFT: f64 = 3.0;

/// Fusion MLP ρ: [z | p] (d_z + d_p) → d_z → d_z, ReLU hidden. Prompt width
/// may differ from embedding width; the output always matches the embedding
/// so downstream heads are unaffected.
///
/// Initialization makes ρ start as the identity on `z`: the hidden layer
/// passes `z` through a shifted ReLU and mixes the prompt in through a small
/// random block. Prompt tables start at zero, so a freshly prompted model
/// reproduces the frozen model's predictions exactly and tuning departs from
/// that baseline only where the prompt earns it. The random prompt block
/// keeps gradients flowing to zero-initialized prompts (an all-zero block
/// against an all-zero prompt would leave the pathway without any gradient).
pub fn init_fusion(set: &mut ParamSet, d_z: usize, d_p: usize, rng: &mut ChaCha12Rng) {
    let mut l1 = Array2::zeros((d_z + d_p, d_z));
    for i in 0..d_z {
        l1[(i, i)] = 1.0;
    }
    l1.slice_mut(s![d_z.., ..]).assign(&xavier_uniform(d_p, d_z, rng));
    set.insert("rho.l1.w", l1);
    set.insert("rho.l1.b", Array2::from_elem((1, d_z), FUSION_SHIFT));
    let mut l2 = Array2::zeros((d_z, d_z));
    for i in 0..d_z {
        l2[(i, i)] = 1.0;
    }
    set.insert("rho.l2.w", l2);
    set.insert("rho.l2.b", Array2::from_elem((1, d_z), -FUSION_SHIFT));
}

/// Link head Φ: [z̃_u | z̃_v] (2d) → d → 1 logit.
pub fn init_link_head(set: &mut ParamSet, d: usize, rng: &mut ChaCha12Rng) {
    mlp2_init(set, "phi", 2 * d, d, 1, rng);
}

/// Node-classification head Φ: z̃ (d) → d/2 → n_classes.
pub fn init_nc_head(set: &mut ParamSet, d: usize, n_classes: usize, rng: &mut ChaCha12Rng) {
    mlp2_init(set, "nc", d, (d / 2).max(1), n_classes, rng);
}

/// Prompted embeddings z̃ = MLP_ρ([z | p]). Differentiable in `z`, `p`, and
/// the fusion weights.
pub fn fuse(tape: &mut Tape, bound: &Bound, z: Var, p: Var) -> Result<Var> {
    let (zd, pd) = (tape.value(z).ncols(), tape.value(p).ncols());
    let expected_in = tape.value(bound.var("rho.l1.w")).nrows();
    if zd + pd != expected_in {
        return Err(Error::DimensionMismatch {
            context: "fuse: [z | p] width vs fusion input".into(),
            expected: expected_in.to_string(),
            got: (zd + pd).to_string(),
        });
    }
    if tape.value(z).nrows() != tape.value(p).nrows() {
        return Err(Error::DimensionMismatch {
            context: "fuse: row counts".into(),
            expected: tape.value(z).nrows().to_string(),
            got: tape.value(p).nrows().to_string(),
        });
    }
    let x = tape.concat_cols(&[z, p]);
    Ok(mlp2_apply(tape, bound, "rho", x))
}

/// Pair logits from the link head: one row per (left, right) pair of rows in
/// `z_left` / `z_right`. Train on these with the logit-space loss.
pub fn link_logits(tape: &mut Tape, bound: &Bound, z_left: Var, z_right: Var) -> Var {
    let x = tape.concat_cols(&[z_left, z_right]);
    mlp2_apply(tape, bound, "phi", x)
}

/// Link probabilities in (0, 1): sigmoid of [`link_logits`].
pub fn predict_link(tape: &mut Tape, bound: &Bound, z_left: Var, z_right: Var) -> Var {
    let logits = link_logits(tape, bound, z_left, z_right);
    tape.sigmoid(logits)
}

/// Class logits; `dropout` enables the training-mode mask between the two
/// layers (rate 0.1).
pub fn nc_logits(tape: &mut Tape, bound: &Bound, z: Var, dropout: Option<&mut ChaCha12Rng>) -> Var {
    const NC_DROPOUT: f64 = 0.1;
    let hidden = linear_apply(tape, bound, "nc.l1", z);
    let mut hidden = tape.relu(hidden);
    if let Some(rng) = dropout {
        let (rows, cols) = tape.value(hidden).dim();
        let mask = dropout_mask(rows, cols, NC_DROPOUT, rng);
        hidden = tape.mul_const(hidden, mask);
    }
    linear_apply(tape, bound, "nc.l2", hidden)
}

/// Class probabilities: softmax over [`nc_logits`] in inference mode. Each
/// row sums to 1.
pub fn classify_node(tape: &mut Tape, bound: &Bound, z: Var) -> Var {
    let logits = nc_logits(tape, bound, z, None);
    tape.softmax_rows(logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::seeded_rng;
    use crate::nn::xavier_uniform;
    use ndarray::{array, Array2};

    fn fused_values(set: &ParamSet, z: Array2<f64>, p: Array2<f64>) -> Array2<f64> {
        let mut tape = Tape::new();
        let bound = set.bind(&mut tape);
        let zv = tape.constant(z);
        let pv = tape.constant(p);
        let out = fuse(&mut tape, &bound, zv, pv).unwrap();
        tape.value(out).clone()
    }

    /// fuse with tiny fixed weights, z = e₁, p = 0: every number checkable
    /// by hand through the two layers.
    #[test]
    fn test_fuse_matches_hand_computed_mlp() {
        let mut set = ParamSet::new();
        set.insert(
            "rho.l1.w",
            array![[0.5, -0.2], [0.1, 0.3], [-0.4, 0.6], [0.2, 0.2]],
        );
        set.insert("rho.l1.b", array![[0.1, -0.1]]);
        set.insert("rho.l2.w", array![[1.0, 0.5], [-0.5, 0.25]]);
        set.insert("rho.l2.b", array![[0.05, 0.0]]);

        let out = fused_values(&set, array![[1.0, 0.0]], array![[0.0, 0.0]]);
        // Hidden: relu([0.5 + 0.1, -0.2 - 0.1]) = [0.6, 0.0].
        let expected = [0.6 * 1.0 + 0.05, 0.6 * 0.5];
        assert!((out[(0, 0)] - expected[0]).abs() < 1e-6);
        assert!((out[(0, 1)] - expected[1]).abs() < 1e-6);
    }

    #[test]
    fn test_fuse_rejects_widths_the_mlp_was_not_built_for() {
        let mut set = ParamSet::new();
        let mut rng = seeded_rng(1, 1);
        init_fusion(&mut set, 2, 2, &mut rng);
        let mut tape = Tape::new();
        let bound = set.bind(&mut tape);
        let z = tape.constant(Array2::zeros((1, 2)));
        let p = tape.constant(Array2::zeros((1, 3)));
        assert!(fuse(&mut tape, &bound, z, p).is_err());
    }

    /// A narrower prompt than embedding is legal as long as ρ was sized for
    /// the pair; the output keeps the embedding width.
    #[test]
    fn test_fuse_supports_narrow_prompts() {
        let mut set = ParamSet::new();
        let mut rng = seeded_rng(1, 2);
        init_fusion(&mut set, 4, 2, &mut rng);
        let mut tape = Tape::new();
        let bound = set.bind(&mut tape);
        let z = tape.constant(xavier_uniform(3, 4, &mut rng));
        let p = tape.constant(xavier_uniform(3, 2, &mut rng));
        let out = fuse(&mut tape, &bound, z, p).unwrap();
        assert_eq!(tape.value(out).dim(), (3, 4));
    }

    /// Gradient of ‖fuse‖² with respect to every fusion weight agrees with
    /// central finite differences.
    #[test]
    fn test_fuse_gradients_match_finite_differences() {
        let mut set = ParamSet::new();
        let mut rng = seeded_rng(2, 3);
        init_fusion(&mut set, 3, 3, &mut rng);
        let z = xavier_uniform(4, 3, &mut rng);
        let p = xavier_uniform(4, 3, &mut rng);

        let loss_of = |set: &ParamSet| {
            let mut tape = Tape::new();
            let bound = set.bind(&mut tape);
            let zv = tape.constant(z.clone());
            let pv = tape.constant(p.clone());
            let out = fuse(&mut tape, &bound, zv, pv).unwrap();
            let sq = tape.mul(out, out);
            let loss = tape.mean_all(sq);
            tape.value(loss)[(0, 0)]
        };

        let mut tape = Tape::new();
        let bound = set.bind(&mut tape);
        let zv = tape.constant(z.clone());
        let pv = tape.constant(p.clone());
        let out = fuse(&mut tape, &bound, zv, pv).unwrap();
        let sq = tape.mul(out, out);
        let loss = tape.mean_all(sq);
        tape.backward(loss);

        let names: Vec<String> = set.names().map(|s| s.to_string()).collect();
        let h = 1e-5;
        for name in &names {
            let grad = tape.grad(bound.var(name)).unwrap().clone();
            for r in 0..grad.nrows() {
                for c in 0..grad.ncols() {
                    let orig = set.get(name)[(r, c)];
                    set.get_mut(name)[(r, c)] = orig + h;
                    let up = loss_of(&set);
                    set.get_mut(name)[(r, c)] = orig - h;
                    let down = loss_of(&set);
                    set.get_mut(name)[(r, c)] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let got = grad[(r, c)];
                    let denom = fd.abs().max(got.abs()).max(1e-8);
                    assert!(
                        (fd - got).abs() / denom < 1e-3,
                        "{name}[{r},{c}]: fd={fd} grad={got}"
                    );
                }
            }
        }
    }

    /// Batched fusion must equal fusing each row separately.
    #[test]
    fn test_fuse_batches_rowwise() {
        let mut set = ParamSet::new();
        let mut rng = seeded_rng(3, 4);
        init_fusion(&mut set, 2, 2, &mut rng);
        let z = xavier_uniform(3, 2, &mut rng);
        let p = xavier_uniform(3, 2, &mut rng);
        let all = fused_values(&set, z.clone(), p.clone());
        for r in 0..3 {
            let row = fused_values(
                &set,
                z.row(r).to_owned().insert_axis(ndarray::Axis(0)),
                p.row(r).to_owned().insert_axis(ndarray::Axis(0)),
            );
            for c in 0..2 {
                assert_eq!(all[(r, c)], row[(0, c)]);
            }
        }
    }

    /// Guard against a shortcut implementation: with random weights, fusion
    /// is a learned mix, not vector addition.
    #[test]
    fn test_fuse_is_not_additive() {
        let mut set = ParamSet::new();
        let mut rng = seeded_rng(4, 5);
        set.insert("rho.l1.w", xavier_uniform(4, 2, &mut rng));
        set.insert("rho.l1.b", xavier_uniform(1, 2, &mut rng));
        set.insert("rho.l2.w", xavier_uniform(2, 2, &mut rng));
        set.insert("rho.l2.b", xavier_uniform(1, 2, &mut rng));
        let z = array![[0.3, -0.7]];
        let p = array![[0.4, 0.9]];
        let fused = fused_values(&set, z.clone(), p.clone());
        let sum = &z + &p;
        assert!(
            (0..2).any(|c| (fused[(0, c)] - sum[(0, c)]).abs() > 1e-6),
            "fusion degenerated to addition"
        );
    }

    /// A freshly initialized ρ is the identity on `z` when the prompt is
    /// zero — a new prompted model starts at the frozen model's output — yet
    /// still responds to the prompt, so zero-initialized prompts receive
    /// gradient from the first step.
    #[test]
    fn test_fresh_fusion_starts_at_identity_on_z() {
        let mut set = ParamSet::new();
        let mut rng = seeded_rng(6, 7);
        init_fusion(&mut set, 4, 2, &mut rng);
        let z = xavier_uniform(3, 4, &mut rng);
        let fused = fused_values(&set, z.clone(), Array2::zeros((3, 2)));
        for (a, b) in fused.iter().zip(z.iter()) {
            assert!((a - b).abs() < 1e-12, "fresh fusion must pass z through");
        }
        let nudged = fused_values(&set, z.clone(), Array2::from_elem((3, 2), 0.5));
        assert!(
            fused.iter().zip(nudged.iter()).any(|(a, b)| (a - b).abs() > 1e-9),
            "prompt pathway is dead at initialization"
        );
    }

    #[test]
    fn test_zero_link_head_scores_half_everywhere() {
        let mut set = ParamSet::new();
        set.insert("phi.l1.w", Array2::zeros((4, 2)));
        set.insert("phi.l1.b", Array2::zeros((1, 2)));
        set.insert("phi.l2.w", Array2::zeros((2, 1)));
        set.insert("phi.l2.b", Array2::zeros((1, 1)));
        let mut tape = Tape::new();
        let bound = set.bind(&mut tape);
        let l = tape.constant(array![[0.9, -0.4], [5.0, 2.0]]);
        let r = tape.constant(array![[0.1, 0.2], [-3.0, 1.0]]);
        let prob = predict_link(&mut tape, &bound, l, r);
        for row in 0..2 {
            assert_eq!(tape.value(prob)[(row, 0)], 0.5);
        }
    }

    /// Tiny fixed link head: probability equals the hand-computed sigmoid.
    #[test]
    fn test_link_head_matches_hand_computation() {
        let mut set = ParamSet::new();
        set.insert("phi.l1.w", array![[0.2], [-0.1], [0.4], [0.3]]);
        set.insert("phi.l1.b", array![[0.1]]);
        set.insert("phi.l2.w", array![[2.0]]);
        set.insert("phi.l2.b", array![[-0.5]]);
        let mut tape = Tape::new();
        let bound = set.bind(&mut tape);
        let l = tape.constant(array![[0.6, 0.8]]);
        let r = tape.constant(array![[0.5, -0.2]]);
        let prob = predict_link(&mut tape, &bound, l, r);
        let hidden = (0.2 * 0.6 - 0.1 * 0.8 + 0.4 * 0.5 + 0.3 * (-0.2) + 0.1f64).max(0.0);
        let logit = 2.0 * hidden - 0.5;
        let expected = 1.0 / (1.0 + (-logit as f64).exp());
        assert!((tape.value(prob)[(0, 0)] - expected).abs() < 1e-6);
    }

    /// The head is free to be directional: swapping endpoints may change the
    /// score, and with generic weights it does.
    #[test]
    fn test_link_head_is_directional() {
        let mut set = ParamSet::new();
        let mut rng = seeded_rng(5, 6);
        init_link_head(&mut set, 2, &mut rng);
        let mut tape = Tape::new();
        let bound = set.bind(&mut tape);
        let u = tape.constant(array![[0.9, -0.4]]);
        let v = tape.constant(array![[0.1, 0.7]]);
        let uv = predict_link(&mut tape, &bound, u, v);
        let vu = predict_link(&mut tape, &bound, v, u);
        assert_ne!(tape.value(uv)[(0, 0)], tape.value(vu)[(0, 0)]);
    }

    #[test]
    fn test_zero_nc_head_is_uniform_over_two_classes() {
        let mut set = ParamSet::new();
        set.insert("nc.l1.w", Array2::zeros((4, 2)));
        set.insert("nc.l1.b", Array2::zeros((1, 2)));
        set.insert("nc.l2.w", Array2::zeros((2, 2)));
        set.insert("nc.l2.b", Array2::zeros((1, 2)));
        let mut tape = Tape::new();
        let bound = set.bind(&mut tape);
        let z = tape.constant(array![[0.3, -0.8, 0.2, 1.5]]);
        let probs = classify_node(&mut tape, &bound, z);
        assert_eq!(tape.value(probs)[(0, 0)], 0.5);
        assert_eq!(tape.value(probs)[(0, 1)], 0.5);
    }

    /// Tiny fixed classification head: probabilities equal the hand-computed
    /// softmax of the two-layer forward pass.
    #[test]
    fn test_nc_head_matches_hand_computed_softmax() {
        let mut set = ParamSet::new();
        set.insert("nc.l1.w", array![[0.5], [-0.3]]);
        set.insert("nc.l1.b", array![[0.2]]);
        set.insert("nc.l2.w", array![[1.0, -1.0]]);
        set.insert("nc.l2.b", array![[0.1, 0.3]]);
        let mut tape = Tape::new();
        let bound = set.bind(&mut tape);
        let z = tape.constant(array![[0.8, 0.4]]);
        let probs = classify_node(&mut tape, &bound, z);
        let hidden = (0.5 * 0.8 - 0.3 * 0.4 + 0.2f64).max(0.0);
        let logits = [hidden + 0.1, -hidden + 0.3];
        let m = logits[0].max(logits[1]);
        let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
        let sum = e[0] + e[1];
        assert!((tape.value(probs)[(0, 0)] - e[0] / sum).abs() < 1e-6);
        assert!((tape.value(probs)[(0, 1)] - e[1] / sum).abs() < 1e-6);
    }

    /// Softmax normalization holds across random inputs; every probability
    /// is finite and strictly inside (0, 1).
    #[test]
    fn test_nc_probabilities_normalize_on_random_inputs() {
        let mut set = ParamSet::new();
        let mut rng = seeded_rng(6, 7);
        init_nc_head(&mut set, 6, 4, &mut rng);
        let z = xavier_uniform(100, 6, &mut rng);
        let mut tape = Tape::new();
        let bound = set.bind(&mut tape);
        let zv = tape.constant(z);
        let probs = classify_node(&mut tape, &bound, zv);
        let vals = tape.value(probs);
        for r in 0..100 {
            let sum: f64 = vals.row(r).sum();
            assert!((sum - 1.0).abs() < 1e-6, "row {r} sums to {sum}");
            for &v in vals.row(r) {
                assert!(v.is_finite() && v > 0.0 && v < 1.0);
            }
        }
    }

    /// Training-mode dropout masks the hidden layer; inference never does.
    #[test]
    fn test_nc_dropout_only_in_training_mode() {
        let mut set = ParamSet::new();
        let mut rng = seeded_rng(7, 8);
        init_nc_head(&mut set, 8, 3, &mut rng);
        let z = xavier_uniform(64, 8, &mut rng);
        let infer = |set: &ParamSet| {
            let mut tape = Tape::new();
            let bound = set.bind(&mut tape);
            let zv = tape.constant(z.clone());
            let logits = nc_logits(&mut tape, &bound, zv, None);
            tape.value(logits).clone()
        };
        assert_eq!(infer(&set), infer(&set), "inference is deterministic");

        let mut d1 = seeded_rng(7, 9);
        let mut d2 = seeded_rng(7, 10);
        let with_dropout = |rng: &mut ChaCha12Rng| {
            let mut tape = Tape::new();
            let bound = set.bind(&mut tape);
            let zv = tape.constant(z.clone());
            let logits = nc_logits(&mut tape, &bound, zv, Some(rng));
            tape.value(logits).clone()
        };
        assert_ne!(
            with_dropout(&mut d1),
            with_dropout(&mut d2),
            "distinct dropout streams mask differently"
        );
    }
}
