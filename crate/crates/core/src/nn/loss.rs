use crate::error::{Error, Result};
use crate::nn::LossKind;
use crate::tensor::{Scalar, Tensor};

/// Row-wise softmax over the last dimension of a 2-D tensor, computed with
/// max subtraction in `f64`.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c) = rows_cols(x, "softmax")?;
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(c) {
        let max = row.iter().map(|v| v.widen()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.widen() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| T::narrow(e / sum)));
    }
    Tensor::new(x.dims().to_vec(), out)
}

fn rows_cols<T: Scalar>(x: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    match x.dims() {
        &[r, c] => Ok((r, c)),
        other => Err(Error::Dimension {
            op,
            left: other.to_vec(),
            right: vec![],
        }),
    }
}

/// Class index per row from either `[batch]` indices or `[batch×classes]`
/// one-hot / probability targets.
enum ClassTargets<'a, T: Scalar> {
    Indices(Vec<usize>),
    Dense(&'a [T]),
}

fn class_targets<'a, T: Scalar>(
    pred: &Tensor<T>,
    target: &'a Tensor<T>,
) -> Result<ClassTargets<'a, T>> {
    let (b, c) = rows_cols(pred, "categorical cross-entropy")?;
    let mismatch = || Error::Dimension {
        op: "categorical cross-entropy",
        left: pred.dims().to_vec(),
        right: target.dims().to_vec(),
    };
    if target.dims() == [b] || target.dims() == [b, 1] && c != 1 {
        let idx = target
            .data()
            .iter()
            .map(|v| {
                let f = v.widen();
                if f < 0.0 || f.fract() != 0.0 || f as usize >= c {
                    Err(Error::Input(format!("class label {f} outside 0..{c}")))
                } else {
                    Ok(f as usize)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassTargets::Indices(idx))
    } else if target.dims() == pred.dims() {
        Ok(ClassTargets::Dense(target.data()))
    } else {
        Err(mismatch())
    }
}

fn same_count<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, op: &'static str) -> Result<()> {
    if pred.len() != target.len() || pred.dims()[0] != target.dims()[0] {
        return Err(Error::Dimension {
            op,
            left: pred.dims().to_vec(),
            right: target.dims().to_vec(),
        });
    }
    Ok(())
}

/// Scalar loss and its gradient with respect to `pred`.
///
/// * `MeanSquaredError`: `mean((p - t)^2)` over every element.
/// * `CategoricalCrossEntropy`: `pred` are logits; `-mean_b log softmax(p_b)[t_b]`.
/// * `BinaryCrossEntropy`: `pred` are logits; mean binary log-loss of `sigmoid(p)`.
pub fn loss_and_grad<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    kind: LossKind,
) -> Result<(f64, Tensor<T>)> {
    match kind {
        LossKind::MeanSquaredError => {
            same_count(pred, target, "mean squared error")?;
            let n = pred.len() as f64;
            let mut loss = 0.0;
            let grad = pred
                .data()
                .iter()
                .zip(target.data())
                .map(|(&p, &t)| {
                    let d = p.widen() - t.widen();
                    loss += d * d;
                    T::narrow(2.0 * d / n)
                })
                .collect();
            Ok((loss / n, Tensor::new(pred.dims().to_vec(), grad)?))
        }
        LossKind::CategoricalCrossEntropy => {
            let (b, c) = rows_cols(pred, "categorical cross-entropy")?;
            let targets = class_targets(pred, target)?;
            let mut loss = 0.0;
            let mut grad = Vec::with_capacity(pred.len());
            for (r, row) in pred.data().chunks(c).enumerate() {
                let max = row.iter().map(|v| v.widen()).fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|v| (v.widen() - max).exp()).sum();
                let log_z = max + sum.ln();
                for (j, &z) in row.iter().enumerate() {
                    let t = match &targets {
                        ClassTargets::Indices(idx) => f64::from(u8::from(idx[r] == j)),
                        ClassTargets::Dense(d) => d[r * c + j].widen(),
                    };
                    let log_p = z.widen() - log_z;
                    if t != 0.0 {
                        loss -= t * log_p;
                    }
                    grad.push(T::narrow((log_p.exp() - t) / b as f64));
                }
            }
            Ok((loss / b as f64, Tensor::new(pred.dims().to_vec(), grad)?))
        }
        LossKind::BinaryCrossEntropy => {
            same_count(pred, target, "binary cross-entropy")?;
            let n = pred.len() as f64;
            let mut loss = 0.0;
            let grad = pred
                .data()
                .iter()
                .zip(target.data())
                .map(|(&z, &t)| {
                    let (z, t) = (z.widen(), t.widen());
                    loss += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
                    let sig = 1.0 / (1.0 + (-z).exp());
                    T::narrow((sig - t) / n)
                })
                .collect();
            Ok((loss / n, Tensor::new(pred.dims().to_vec(), grad)?))
        }
    }
}

/// Loss only.
pub fn loss_value<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, kind: LossKind) -> Result<f64> {
    loss_and_grad(pred, target, kind).map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(dims: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(dims.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn mse_zero_at_target() {
        let p = t(&[2, 2], &[1., 2., 3., 4.]);
        let (l, g) = loss_and_grad(&p, &p, LossKind::MeanSquaredError).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_analytic() {
        let (l, g) = loss_and_grad(&t(&[1], &[2.]), &t(&[1], &[0.]), LossKind::MeanSquaredError).unwrap();
        assert_eq!(l, 4.0);
        assert_eq!(g.data(), &[4.0]);
    }

    #[test]
    fn cce_uniform_is_ln_classes() {
        let p = Tensor::<f64>::zeros(vec![3, 10]).unwrap();
        let y = t(&[3], &[0., 4., 9.]);
        let (l, _) = loss_and_grad(&p, &y, LossKind::CategoricalCrossEntropy).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cce_one_hot_and_indices_agree() {
        let p = t(&[2, 3], &[0.1, 2.0, -1.0, 0.5, 0.5, 3.0]);
        let idx = t(&[2], &[1., 2.]);
        let hot = t(&[2, 3], &[0., 1., 0., 0., 0., 1.]);
        let a = loss_and_grad(&p, &idx, LossKind::CategoricalCrossEntropy).unwrap();
        let b = loss_and_grad(&p, &hot, LossKind::CategoricalCrossEntropy).unwrap();
        assert!((a.0 - b.0).abs() < 1e-15);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn cce_rejects_bad_label_and_shape() {
        let p = Tensor::<f64>::zeros(vec![2, 3]).unwrap();
        assert!(matches!(
            loss_and_grad(&p, &t(&[2], &[0., 3.]), LossKind::CategoricalCrossEntropy),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            loss_and_grad(&p, &t(&[3], &[0., 1., 2.]), LossKind::CategoricalCrossEntropy),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn bce_matches_closed_form() {
        let (l, g) = loss_and_grad(&t(&[1, 1], &[0.]), &t(&[1, 1], &[1.]), LossKind::BinaryCrossEntropy).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        assert!((g.data()[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn losses_match_central_differences() {
        let cases: [(LossKind, Tensor<f64>, Tensor<f64>); 3] = [
            (LossKind::MeanSquaredError, t(&[2, 2], &[0.3, -1.2, 2.0, 0.1]), t(&[2, 2], &[0., 1., 1.5, -0.5])),
            (LossKind::CategoricalCrossEntropy, t(&[2, 3], &[0.3, -1.2, 2.0, 0.1, 0.7, -0.4]), t(&[2], &[2., 0.])),
            (LossKind::BinaryCrossEntropy, t(&[3, 1], &[0.3, -1.2, 2.0]), t(&[3, 1], &[1., 0., 0.])),
        ];
        for (kind, p, y) in cases {
            let (_, g) = loss_and_grad(&p, &y, kind).unwrap();
            for i in 0..p.len() {
                let mut hi = p.clone();
                hi.data_mut()[i] += 1e-6;
                let mut lo = p.clone();
                lo.data_mut()[i] -= 1e-6;
                let fd = (loss_value(&hi, &y, kind).unwrap() - loss_value(&lo, &y, kind).unwrap()) / 2e-6;
                assert!((fd - g.data()[i]).abs() < 1e-7, "{kind:?} {i}: {fd} vs {}", g.data()[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-30.0f32..30.0, 1..40), cols in 1usize..8) {
            let rows = vals.len() / cols;
            prop_assume!(rows > 0);
            let x = Tensor::new(vec![rows, cols], vals[..rows * cols].to_vec()).unwrap();
            let s = softmax_rows(&x).unwrap();
            for row in s.data().chunks(cols) {
                let sum: f64 = row.iter().map(|&v| v as f64).sum();
                prop_assert!((sum - 1.0).abs() < 1e-6);
                prop_assert!(row.iter().all(|&v| v > 0.0));
            }
        }
    }
}
