//! Central finite-difference gradient checking.
//!
//! The checker only evaluates the forward pass, so it is independent of the
//! backward rules it verifies.

use std::collections::BTreeMap;

use super::nn::{Bound, Params};
use super::tape::{Tape, Var};
use super::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub struct GradMismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub failures: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Relative error with an absolute floor so gradients that are both ~0 compare as equal.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares the tape gradient of `loss_fn` against central differences of step `h`
/// for every scalar in `params`.
pub fn check_params<F>(params: &Params, h: f64, tol: f64, floor: f64, loss_fn: F) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = loss_fn(&mut tape, &bound)?;
    let g = tape.backward(loss)?;
    let analytic = bound.named_grads(&g, params);

    let eval = |p: &Params| -> Result<f64, TensorError> {
        let mut t = Tape::new();
        let b = p.bind(&mut t);
        let l = loss_fn(&mut t, &b)?;
        Ok(t.value(l).item())
    };

    let mut report = GradCheckReport::default();
    let names: Vec<String> = params.iter().map(|(k, _)| k.clone()).collect();
    let mut work = params.clone();
    for name in names {
        let n = work.get(&name).expect("present").len();
        for i in 0..n {
            let orig = work.get(&name).expect("present").data()[i];
            work.get_mut(&name).expect("present").data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work.get_mut(&name).expect("present").data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work.get_mut(&name).expect("present").data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[&name].data()[i];
            let rel = relative_error(a, numeric, floor);
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel > tol {
                report.failures.push(GradMismatch {
                    param: name.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    Ok(report)
}

/// Convenience wrapper for checking a function of a few named input tensors.
pub fn check_inputs<F>(inputs: BTreeMap<String, Tensor>, tol: f64, loss_fn: F) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var, TensorError>,
{
    let mut p = Params::new();
    for (k, v) in inputs {
        p.insert(k, v);
    }
    check_params(&p, 1e-5, tol, 1e-6, loss_fn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::kernels::Reduce;
    use proptest::prelude::*;

    const TOL: f64 = 1e-4;

    fn mat(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
        proptest::collection::vec(-2.0f64..2.0, rows * cols)
            .prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
    }

    fn inputs(pairs: Vec<(&str, Tensor)>) -> BTreeMap<String, Tensor> {
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    fn assert_ok(r: GradCheckReport) {
        assert!(r.passed(), "gradient mismatches: {:?}", r.failures);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn mse_of_linear_map(w in mat(4, 4), x in mat(4, 1), y in mat(4, 1)) {
            let r = check_inputs(inputs(vec![("w", w)]), TOL, |t, b| {
                let xv = t.constant(x.clone());
                let p = t.matmul(b.var("w"), xv)?;
                t.mse_loss(p, y.clone())
            }).unwrap();
            assert_ok(r);
        }

        #[test]
        fn relu_of_linear_plus_bias(w in mat(3, 3), x in mat(1, 3), bias in mat(1, 3)) {
            let pre = crate::tensor::kernels::matmul(&x, &w).unwrap();
            prop_assume!(pre.data().iter().all(|v| v.abs() > 1e-3));
            let r = check_inputs(inputs(vec![("w", w), ("b", bias)]), TOL, |t, b| {
                let xv = t.constant(x.clone());
                let h = t.matmul(xv, b.var("w"))?;
                let h = t.relu(h);
                let o = t.add(h, b.var("b"))?;
                let sq = t.square(o);
                Ok(t.sum(sq))
            }).unwrap();
            assert_ok(r);
        }

        #[test]
        fn elementwise_chain(a in mat(2, 3), b in mat(2, 3)) {
            let r = check_inputs(inputs(vec![("a", a), ("b", b)]), TOL, |t, p| {
                let s = t.sigmoid(p.var("a"));
                let th = t.tanh(p.var("b"));
                let m = t.mul(s, th)?;
                let e = t.exp(m);
                let l = t.leaky_relu(p.var("a"), 0.01);
                let d = t.sub(e, l)?;
                let sc = t.scale(d, 0.7);
                let sh = t.add_scalar(sc, 3.0);
                let lg = t.log(sh);
                Ok(t.mean(lg))
            }).unwrap();
            assert_ok(r);
        }

        #[test]
        fn broadcasting_ops(a in mat(3, 4), row in mat(1, 4), col in mat(3, 1)) {
            let r = check_inputs(inputs(vec![("a", a), ("r", row), ("c", col)]), TOL, |t, p| {
                let x = t.add(p.var("a"), p.var("r"))?;
                let y = t.mul(x, p.var("c"))?;
                let c2 = t.square(p.var("c"));
                let den = t.add_scalar(c2, 1.0);
                let z = t.div(y, den)?;
                Ok(t.sum(z))
            }).unwrap();
            assert_ok(r);
        }

        #[test]
        fn softmax_and_cross_entropy(a in mat(3, 5), w in mat(3, 5)) {
            let r = check_inputs(inputs(vec![("a", a.clone())]), TOL, |t, p| {
                let s = t.softmax(p.var("a"))?;
                let wv = t.constant(w.clone());
                let m = t.mul(s, wv)?;
                let l1 = t.sum(m);
                let ce = t.cross_entropy_loss(p.var("a"), vec![0, 4, 2])?;
                t.add(l1, ce)
            }).unwrap();
            assert_ok(r);
        }

        #[test]
        fn masked_log_softmax_and_pick(a in mat(2, 4)) {
            let mask = vec![true, false, true, true, false, true, true, false];
            let r = check_inputs(inputs(vec![("a", a)]), TOL, |t, p| {
                let ls = t.log_softmax(p.var("a"), Some(mask.clone()))?;
                let pk = t.pick(ls, vec![2, 1])?;
                Ok(t.sum(pk))
            }).unwrap();
            assert_ok(r);
        }

        #[test]
        fn structural_ops(a in mat(4, 3), b in mat(4, 2)) {
            let r = check_inputs(inputs(vec![("a", a), ("b", b)]), TOL, |t, p| {
                let c = t.concat(&[p.var("a"), p.var("b")], 1)?;
                let s = t.slice(c, 1, 1, 4)?;
                let sel = t.index_select(s, vec![0, 2, 2, 3, 1])?;
                let seg = t.segment_mean(sel, vec![0, 1, 1, 0, 2], 4)?;
                let tr = t.transpose(seg)?;
                let sq = t.square(tr);
                let rows = t.slice(sq, 0, 0, 2)?;
                let stacked = t.concat(&[rows, sq], 0)?;
                Ok(t.sum(stacked))
            }).unwrap();
            assert_ok(r);
        }

        #[test]
        fn reductions(a in mat(3, 4)) {
            let r = check_inputs(inputs(vec![("a", a)]), TOL, |t, p| {
                let s0 = t.reduce(p.var("a"), Reduce::Mean, Some(0))?;
                let s1 = t.reduce(p.var("a"), Reduce::Max, Some(1))?;
                let s2 = t.reduce(p.var("a"), Reduce::Min, Some(0))?;
                let s3 = t.reduce(p.var("a"), Reduce::Sum, Some(1))?;
                let all = t.reduce(p.var("a"), Reduce::Max, None)?;
                let parts = [t.sum(s0), t.sum(s1), t.sum(s2), t.mean(s3), all];
                let mut acc = parts[0];
                for q in &parts[1..] {
                    acc = t.add(acc, *q)?;
                }
                Ok(acc)
            }).unwrap();
            assert_ok(r);
        }

        #[test]
        fn l2_normalize_rows(a in mat(3, 4), w in mat(3, 4)) {
            prop_assume!((0..3).all(|r| a.row_slice(r).iter().map(|x| x * x).sum::<f64>() > 0.1));
            let r = check_inputs(inputs(vec![("a", a)]), TOL, |t, p| {
                let n = t.row_l2_normalize(p.var("a"))?;
                let wv = t.constant(w.clone());
                let m = t.mul(n, wv)?;
                Ok(t.sum(m))
            }).unwrap();
            assert_ok(r);
        }

        #[test]
        fn bce_and_huber(a in mat(2, 3), tgt in proptest::collection::vec(0.0f64..1.0, 6), y in mat(2, 3)) {
            let tgt = Tensor::new(vec![2, 3], tgt).unwrap();
            let r = check_inputs(inputs(vec![("a", a)]), TOL, |t, p| {
                let b = t.bce_with_logits_loss(p.var("a"), tgt.clone())?;
                let h = t.huber_loss(p.var("a"), y.clone(), 1.0)?;
                t.add(b, h)
            }).unwrap();
            assert_ok(r);
        }

        #[test]
        fn clamp_and_minimum(a in mat(2, 3), b in mat(2, 3)) {
            prop_assume!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() > 1e-3));
            prop_assume!(a.data().iter().all(|x| (x.abs() - 0.5).abs() > 1e-3));
            let r = check_inputs(inputs(vec![("a", a), ("b", b)]), TOL, |t, p| {
                let c = t.clamp(p.var("a"), -0.5, 0.5);
                let m = t.minimum(c, p.var("b"))?;
                let sq = t.square(m);
                Ok(t.sum(sq))
            }).unwrap();
            assert_ok(r);
        }

        #[test]
        fn backward_is_linear_in_the_loss(a in mat(2, 2), b in mat(2, 2)) {
            let grads = |which: u8| {
                let mut t = Tape::new();
                let av = t.leaf(a.clone());
                let bv = t.constant(b.clone());
                let p = t.matmul(av, bv).unwrap();
                let l1 = t.mse_loss(p, Tensor::zeros(&[2, 2])).unwrap();
                let sq = t.square(av);
                let l2 = t.sum(sq);
                let loss = match which {
                    0 => l1,
                    1 => l2,
                    _ => t.add(l1, l2).unwrap(),
                };
                t.backward(loss).unwrap().get(av).unwrap().clone()
            };
            let (g1, g2, g12) = (grads(0), grads(1), grads(2));
            for k in 0..4 {
                prop_assert!((g1.data()[k] + g2.data()[k] - g12.data()[k]).abs() < 1e-12);
            }
        }

        #[test]
        fn forward_is_deterministic(a in mat(3, 3)) {
            let run = || {
                let mut t = Tape::new();
                let v = t.leaf(a.clone());
                let s = t.softmax(v).unwrap();
                let m = t.matmul(s, v).unwrap();
                t.value(m).clone()
            };
            prop_assert_eq!(run(), run());
        }
    }
}
