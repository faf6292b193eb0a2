//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! The op set is deliberately small: exactly what the attention model's
//! forward pass and losses need. Values are `f64`; all tape ops work on
//! rank-2 tensors.
//!
//! ```
//! use hgat_core::ndiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::column(vec![1.0, 2.0, 3.0]));
//! let loss = x.mul(x).unwrap().sum();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[2.0, 4.0, 6.0]);
//! ```

mod tape;
mod tensor;

use std::str::FromStr;

use thiserror::Error;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NdiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
    #[error("expected a rank-2 tensor, got shape {shape:?}")]
    NotMatrix { shape: Vec<usize> },
    #[error("index {index} out of range for extent {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("masked softmax row {row} has no retained entries")]
    EmptySupport { row: usize },
    #[error("concat of zero tensors")]
    EmptyConcat,
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward already ran on this tape")]
    AlreadyBackpropagated,
    #[error("unknown activation `{0}`")]
    UnknownActivation(String),
}

/// Elementwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Elu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative at input `x` with output `y = apply(x)`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

impl FromStr for Activation {
    type Err = NdiffError;

    /// Accepts `elu`, `sigmoid`, `identity`, `leaky_relu` (slope 0.2) and
    /// `leaky_relu:<slope>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "elu" => Ok(Activation::Elu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            "leaky_relu" => Ok(Activation::LeakyRelu(0.2)),
            other => other
                .strip_prefix("leaky_relu:")
                .and_then(|slope| slope.parse().ok())
                .map(Activation::LeakyRelu)
                .ok_or_else(|| NdiffError::UnknownActivation(other.to_string())),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Activation::LeakyRelu(slope) => write!(f, "leaky_relu:{slope}"),
            Activation::Elu => f.write_str("elu"),
            Activation::Sigmoid => f.write_str("sigmoid"),
            Activation::Identity => f.write_str("identity"),
        }
    }
}

impl serde::Serialize for Activation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Activation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise masked softmax on plain values (no tape).
pub fn masked_softmax(logits: &Tensor, mask: &[bool]) -> Result<Tensor, NdiffError> {
    tape::masked_softmax_rows(logits, mask)
}

/// Central-difference gradient of `f` at `x`:
/// `(f(x + eps·e_i) - f(x - eps·e_i)) / (2·eps)` per coordinate.
pub fn finite_difference_gradient(
    mut f: impl FnMut(&Tensor) -> f64,
    x: &Tensor,
    eps: f64,
) -> Tensor {
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape().to_vec());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over paired entries.
pub fn max_relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    fn weigh<'t>(w: &Tensor, v: Var<'t>) -> Var<'t> {
        v.mul(v.tape().constant(w.clone())).unwrap().sum()
    }

    /// Checks the tape gradient of `build(x)` against central differences.
    fn grad_check(x: &Tensor, build: impl for<'t> Fn(Var<'t>) -> Var<'t>) -> f64 {
        let tape = Tape::new();
        let xv = tape.param(x.clone());
        let loss = build(xv);
        let analytic = tape.backward(loss).unwrap().wrt(xv);
        let numeric = finite_difference_gradient(
            |p| {
                let t = Tape::new();
                let v = t.param(p.clone());
                let out = build(v).value().data()[0];
                out
            },
            x,
            1e-5,
        );
        max_relative_error(&analytic, &numeric, 1e-6)
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let x = Tensor::matrix(3, 2, vec![1.0, -2.0, 3.5, 0.0, 4.0, 9.0]).unwrap();
        assert_eq!(Tensor::identity(3).matmul(&x).unwrap(), x);

        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::column(vec![1.0, 1.0]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[3.0, 7.0]);

        let err = a.matmul(&Tensor::column(vec![1.0; 3])).unwrap_err();
        assert!(matches!(
            err,
            NdiffError::ShapeMismatch { op: "matmul", .. }
        ));
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(&mut rng, 5, 4);
        let b = random(&mut rng, 4, 3);
        let w = random(&mut rng, 5, 3);
        let tape = Tape::new();
        let (av, bv, wv) = (
            tape.param(a.clone()),
            tape.param(b.clone()),
            tape.constant(w.clone()),
        );
        let loss = av.matmul(bv).unwrap().mul(wv).unwrap().sum();
        let grads = tape.backward(loss).unwrap();

        let f = |a: &Tensor, b: &Tensor| -> f64 {
            a.matmul(b)
                .unwrap()
                .data()
                .iter()
                .zip(w.data())
                .map(|(x, y)| x * y)
                .sum()
        };
        let na = finite_difference_gradient(|p| f(p, &b), &a, 1e-5);
        let nb = finite_difference_gradient(|p| f(&a, p), &b, 1e-5);
        assert!(max_relative_error(&grads.wrt(av), &na, 1e-6) < 1e-6);
        assert!(max_relative_error(&grads.wrt(bv), &nb, 1e-6) < 1e-6);
    }

    #[test]
    fn masked_softmax_examples() {
        let uniform = masked_softmax(
            &Tensor::column(vec![1.0; 3]).reshaped(vec![1, 3]).unwrap(),
            &[true; 3],
        )
        .unwrap();
        for &p in uniform.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }

        let single = masked_softmax(
            &Tensor::matrix(1, 2, vec![5.0, 0.0]).unwrap(),
            &[true, false],
        )
        .unwrap();
        assert_eq!(single.data(), &[1.0, 0.0]);

        let err = masked_softmax(
            &Tensor::matrix(1, 2, vec![5.0, 0.0]).unwrap(),
            &[false, false],
        )
        .unwrap_err();
        assert_eq!(err, NdiffError::EmptySupport { row: 0 });
    }

    #[test]
    fn masked_softmax_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let x = random(&mut rng, 1, 7).map(|v| 4.0 * v);
            let mut mask: Vec<bool> = (0..7).map(|_| rng.random_bool(0.5)).collect();
            mask[rng.random_range(0..7)] = true;
            let got = masked_softmax(&x, &mask).unwrap();
            let denom: f64 = (0..7).filter(|&i| mask[i]).map(|i| x.data()[i].exp()).sum();
            for i in 0..7 {
                let want = if mask[i] {
                    x.data()[i].exp() / denom
                } else {
                    0.0
                };
                assert!((got.data()[i] - want).abs() <= 1e-12);
                if !mask[i] {
                    assert_eq!(got.data()[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn activation_examples() {
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Sigmoid.derivative(0.0, 0.5), 0.25);
        assert!((Activation::LeakyRelu(0.2).apply(-1.0) + 0.2).abs() < 1e-15);
        assert_eq!(
            "leaky_relu:0.1".parse::<Activation>().unwrap(),
            Activation::LeakyRelu(0.1)
        );
        assert_eq!("elu".parse::<Activation>().unwrap(), Activation::Elu);
        assert!(matches!(
            "tanh".parse::<Activation>(),
            Err(NdiffError::UnknownActivation(_))
        ));
    }

    #[test]
    fn elu_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, 6, 1).map(|v| 3.0 * v);
        let err = grad_check(&x, |v| v.activation(Activation::Elu).mul(v).unwrap().sum());
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn concat_examples() {
        let tape = Tape::new();
        let a = tape.param(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let b = tape.param(Tensor::matrix(1, 3, vec![4.0, 5.0, 6.0]).unwrap());
        assert_eq!(Var::concat(&[a]).unwrap().to_tensor(), a.to_tensor());
        let ab = Var::concat(&[a, b]).unwrap();
        assert_eq!(ab.value().data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let grads = tape.backward(ab.sum()).unwrap();
        assert_eq!(grads.wrt(a).data(), &[1.0; 3]);

        let c = tape.param(Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap());
        assert!(Var::concat(&[a, c]).is_err());
    }

    #[test]
    fn backward_examples() {
        let tape = Tape::new();
        let x = tape.param(Tensor::column(vec![0.3, -1.0, 2.0]));
        let grads = tape.backward(x.sum()).unwrap();
        assert_eq!(grads.wrt(x).data(), &[1.0; 3]);

        // single neuron: y = sigmoid(w·x), dy/dw = y(1-y) x, dy/dx = y(1-y) w
        let tape = Tape::new();
        let w = tape.param(Tensor::matrix(1, 2, vec![0.5, -0.25]).unwrap());
        let x = tape.param(Tensor::column(vec![2.0, 4.0]));
        let y = w.matmul(x).unwrap().activation(Activation::Sigmoid);
        let grads = tape.backward(y).unwrap();
        let s = sigmoid(0.5 * 2.0 - 0.25 * 4.0);
        let d = s * (1.0 - s);
        assert_eq!(grads.wrt(w).data(), &[d * 2.0, d * 4.0]);
        assert_eq!(grads.wrt(x).data(), &[d * 0.5, d * -0.25]);
    }

    #[test]
    fn backward_errors() {
        let tape = Tape::new();
        let x = tape.param(Tensor::column(vec![1.0, 2.0]));
        assert!(matches!(
            tape.backward(x),
            Err(NdiffError::NonScalarLoss { .. })
        ));
        let s = x.sum();
        tape.backward(s).unwrap();
        assert_eq!(
            tape.backward(s).unwrap_err(),
            NdiffError::AlreadyBackpropagated
        );
    }

    #[test]
    fn diamond_accumulates_shared_subexpression() {
        // u = 3x; loss = sum(u * u + 2u) => dloss/dx = 3(2u + 2) = 18x + 6
        let tape = Tape::new();
        let x = tape.param(Tensor::column(vec![1.0, -2.0]));
        let u = x.affine(3.0, 0.0);
        let loss = u.mul(u).unwrap().add(u.affine(2.0, 0.0)).unwrap().sum();
        let g = tape.backward(loss).unwrap().wrt(x);
        assert_eq!(g.data(), &[24.0, -30.0]);
    }

    #[test]
    fn finite_difference_examples() {
        let x = Tensor::scalar(3.0);
        let g = finite_difference_gradient(|t| t.data()[0].powi(2), &x, 1e-4);
        assert!((g.data()[0] - 6.0).abs() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random(&mut rng, 8, 1);
        let g = finite_difference_gradient(|t| t.data().iter().map(|a| a * a).sum(), &v, 1e-4);
        for (gi, vi) in g.data().iter().zip(v.data()) {
            assert!((gi - 2.0 * vi).abs() < 1e-6);
        }
    }

    #[test]
    fn two_layer_composite_agrees_with_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let w1 = random(&mut rng, 4, 3);
        let w2 = random(&mut rng, 3, 2);
        let x = random(&mut rng, 5, 4);
        let err = grad_check(&x, |xv| {
            let t = xv.tape();
            let h = xv
                .matmul(t.constant(w1.clone()))
                .unwrap()
                .activation(Activation::Elu);
            h.matmul(t.constant(w2.clone()))
                .unwrap()
                .activation(Activation::Sigmoid)
                .sum()
        });
        assert!(err < 1e-5, "{err}");
    }

    /// Every differentiable op against central differences on 10 seeds.
    #[test]
    fn every_op_gradient_checks() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let x = random(&mut rng, 4, 3);
            let col = random(&mut rng, 4, 1);
            let row = random(&mut rng, 1, 3);
            let other = random(&mut rng, 3, 2);
            let weights = random(&mut rng, 4, 3);
            let pos = x.map(|v| v.abs() + 0.5);
            type Build = Box<dyn for<'t> Fn(Var<'t>) -> Var<'t>>;
            let cases: Vec<(&str, &Tensor, Build)> = vec![
                (
                    "matmul",
                    &x,
                    Box::new({
                        let o = other.clone();
                        move |v| v.matmul(v.tape().constant(o.clone())).unwrap().sum()
                    }),
                ),
                (
                    "transpose",
                    &x,
                    Box::new({
                        let w = weights.clone();
                        move |v| weigh(&w, v.transpose().unwrap().transpose().unwrap())
                    }),
                ),
                ("mul", &x, Box::new(|v| v.mul(v).unwrap().sum())),
                (
                    "affine",
                    &x,
                    Box::new({
                        let w = weights.clone();
                        move |v| weigh(&w, v.affine(-1.5, 2.0))
                    }),
                ),
                (
                    "row_bcast",
                    &x,
                    Box::new({
                        let w = weights.clone();
                        let r = row.clone();
                        move |v| weigh(&w, v.add_row_broadcast(v.tape().param(r.clone())).unwrap())
                    }),
                ),
                (
                    "col_bcast",
                    &x,
                    Box::new({
                        let w = weights.clone();
                        let c = col.clone();
                        move |v| weigh(&w, v.add_col_broadcast(v.tape().param(c.clone())).unwrap())
                    }),
                ),
                (
                    "mul_col",
                    &x,
                    Box::new({
                        let w = weights.clone();
                        let c = col.clone();
                        move |v| {
                            weigh(
                                &w,
                                v.mul_col_broadcast(v.tape().constant(c.clone())).unwrap(),
                            )
                        }
                    }),
                ),
                (
                    "mul_col_rhs",
                    &col,
                    Box::new({
                        let w = weights.clone();
                        let m = x.clone();
                        move |v| {
                            weigh(
                                &w,
                                v.tape().constant(m.clone()).mul_col_broadcast(v).unwrap(),
                            )
                        }
                    }),
                ),
                (
                    "leaky",
                    &x,
                    Box::new({
                        let w = weights.clone();
                        move |v| weigh(&w, v.activation(Activation::LeakyRelu(0.2)))
                    }),
                ),
                (
                    "elu",
                    &x,
                    Box::new({
                        let w = weights.clone();
                        move |v| weigh(&w, v.activation(Activation::Elu))
                    }),
                ),
                (
                    "sigmoid",
                    &x,
                    Box::new({
                        let w = weights.clone();
                        move |v| weigh(&w, v.activation(Activation::Sigmoid))
                    }),
                ),
                (
                    "softmax",
                    &x,
                    Box::new({
                        let w = weights.clone();
                        move |v| {
                            weigh(
                                &w,
                                v.masked_softmax(&[
                                    true, false, true, true, true, true, false, true, true, true,
                                    true, false,
                                ])
                                .unwrap(),
                            )
                        }
                    }),
                ),
                (
                    "concat",
                    &x,
                    Box::new(|v| {
                        let c = Var::concat(&[v, v.affine(2.0, 0.0)]).unwrap();
                        c.mul(c).unwrap().sum()
                    }),
                ),
                (
                    "slice",
                    &x,
                    Box::new(|v| {
                        let s = v.slice_rows(1, 2).unwrap().slice_cols(1, 2).unwrap();
                        s.mul(s).unwrap().sum()
                    }),
                ),
                (
                    "gather_scatter",
                    &x,
                    Box::new(|v| {
                        let g = v
                            .gather_rows(&[2, 0, 2])
                            .unwrap()
                            .scatter_rows(&[4, 1, 0], 5)
                            .unwrap();
                        g.mul(g).unwrap().sum()
                    }),
                ),
                (
                    "segment_sum",
                    &x,
                    Box::new(|v| {
                        let s = v.segment_sum(2).unwrap();
                        s.mul(s).unwrap().sum()
                    }),
                ),
                (
                    "reshape",
                    &x,
                    Box::new({
                        let w = weights.clone();
                        move |v| {
                            weigh(
                                &w,
                                v.reshape(vec![3, 4])
                                    .unwrap()
                                    .reshape(vec![4, 3])
                                    .unwrap()
                                    .activation(Activation::Sigmoid),
                            )
                        }
                    }),
                ),
                (
                    "ln_clamp_pick",
                    &pos,
                    Box::new(|v| {
                        v.pick(&[(0, 1), (3, 2), (0, 1)])
                            .unwrap()
                            .clamp(1e-12, 10.0)
                            .ln()
                            .sum()
                    }),
                ),
            ];
            for (name, input, build) in &cases {
                let err = grad_check(input, |v| build(v));
                assert!(err < 1e-4, "{name} seed {seed}: {err}");
            }
        }
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            logits in proptest::collection::vec(-20.0f64..20.0, 1..12),
            mask_bits in proptest::collection::vec(any::<bool>(), 12),
            keep in 0usize..12,
            shift in -50.0f64..50.0,
        ) {
            let n = logits.len();
            let mut mask = mask_bits[..n].to_vec();
            mask[keep % n] = true;
            let x = Tensor::matrix(1, n, logits.clone()).unwrap();
            let shifted = x.map(|v| v + shift);
            let p = masked_softmax(&x, &mask).unwrap();
            let q = masked_softmax(&shifted, &mask).unwrap();
            let total: f64 = p.data().iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            for i in 0..n {
                prop_assert!((p.data()[i] - q.data()[i]).abs() <= 1e-12);
                if !mask[i] { prop_assert_eq!(p.data()[i], 0.0); }
            }
        }
    }
}
