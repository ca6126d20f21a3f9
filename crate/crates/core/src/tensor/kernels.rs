//! Plain forward kernels shared by the tape and by gradient-free inference.

use super::{Tensor, TensorError};

/// Probability floor used for masked entries of a log-softmax.
pub const MASKED_LOG_PROB: f64 = -1e30;

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let (n, k) = a.require_rank2("matmul")?;
    let (k2, m) = b.require_rank2("matmul")?;
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; n * m];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

pub fn transpose(a: &Tensor) -> Result<Tensor, TensorError> {
    let (n, m) = a.require_rank2("transpose")?;
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a.data()[i * m + j];
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Output shape of a rank-2 broadcast, where each dimension must match or be 1.
pub fn broadcast_shape(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
) -> Result<Vec<usize>, TensorError> {
    if a.shape() == b.shape() {
        return Ok(a.shape().to_vec());
    }
    let err = || TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(err());
    }
    let mut out = Vec::with_capacity(2);
    for d in 0..2 {
        let (x, y) = (a.shape()[d], b.shape()[d]);
        out.push(match (x, y) {
            _ if x == y => x,
            (1, _) => y,
            (_, 1) => x,
            _ => return Err(err()),
        });
    }
    Ok(out)
}

#[inline]
fn bidx(shape: &[usize], r: usize, c: usize) -> usize {
    let rr = if shape[0] == 1 { 0 } else { r };
    let cc = if shape[1] == 1 { 0 } else { c };
    rr * shape[1] + cc
}

/// Elementwise binary op with rank-2 broadcasting.
pub fn zip_broadcast(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, TensorError> {
    let shape = broadcast_shape(op, a, b)?;
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
        return Ok(Tensor::from_parts(shape, data));
    }
    let (n, m) = (shape[0], shape[1]);
    let mut data = Vec::with_capacity(n * m);
    for r in 0..n {
        for c in 0..m {
            data.push(f(
                a.data()[bidx(a.shape(), r, c)],
                b.data()[bidx(b.shape(), r, c)],
            ));
        }
    }
    Ok(Tensor::from_parts(shape, data))
}

/// Sums `grad` (of broadcast shape) back down to `target` shape.
pub fn reduce_to_shape(grad: &Tensor, target: &[usize]) -> Tensor {
    if grad.shape() == target {
        return grad.clone();
    }
    let (n, m) = (grad.shape()[0], grad.shape()[1]);
    let mut out = Tensor::zeros(target);
    for r in 0..n {
        for c in 0..m {
            let i = bidx(target, r, c);
            out.data_mut()[i] += grad.data()[r * m + c];
        }
    }
    out
}

pub fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|x| f(*x)).collect())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    zip_broadcast("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    zip_broadcast("sub", a, b, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    zip_broadcast("mul", a, b, |x, y| x * y)
}

pub fn relu(a: &Tensor) -> Tensor {
    map(a, |x| x.max(0.0))
}

pub fn leaky_relu(a: &Tensor, slope: f64) -> Tensor {
    map(a, |x| if x > 0.0 { x } else { slope * x })
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    map(a, sigmoid_scalar)
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Row-wise softmax of a rank-2 tensor.
pub fn softmax_rows(a: &Tensor) -> Result<Tensor, TensorError> {
    let (n, m) = a.require_rank2("softmax")?;
    let mut out = Vec::with_capacity(n * m);
    for r in 0..n {
        let row = a.row_slice(r);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|x| (x - mx).exp()).collect();
        let s: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / s));
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

/// Row-wise log-softmax. Entries where `mask` is false get [`MASKED_LOG_PROB`]
/// and are excluded from normalization. Every row must keep one entry.
pub fn log_softmax_rows(a: &Tensor, mask: Option<&[bool]>) -> Result<Tensor, TensorError> {
    let (n, m) = a.require_rank2("log_softmax")?;
    if let Some(mask) = mask {
        if mask.len() != n * m {
            return Err(TensorError::Invalid {
                op: "log_softmax",
                msg: format!("mask length {} for shape {:?}", mask.len(), a.shape()),
            });
        }
    }
    let keep = |i: usize| mask.is_none_or(|mk| mk[i]);
    let mut out = vec![MASKED_LOG_PROB; n * m];
    for r in 0..n {
        let row = a.row_slice(r);
        let mut mx = f64::NEG_INFINITY;
        for (c, x) in row.iter().enumerate() {
            if keep(r * m + c) {
                mx = mx.max(*x);
            }
        }
        if mx == f64::NEG_INFINITY {
            return Err(TensorError::Invalid {
                op: "log_softmax",
                msg: format!("row {r} has no unmasked entries"),
            });
        }
        let lse = mx
            + row
                .iter()
                .enumerate()
                .filter(|(c, _)| keep(r * m + c))
                .map(|(_, x)| (x - mx).exp())
                .sum::<f64>()
                .ln();
        for (c, x) in row.iter().enumerate() {
            if keep(r * m + c) {
                out[r * m + c] = x - lse;
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor, TensorError> {
    let first = parts.first().ok_or(TensorError::Invalid {
        op: "concat",
        msg: "no inputs".into(),
    })?;
    let (n0, m0) = first.require_rank2("concat")?;
    for p in parts {
        let (n, m) = p.require_rank2("concat")?;
        let ok = match axis {
            0 => m == m0,
            1 => n == n0,
            _ => false,
        };
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
    }
    if axis == 0 {
        let rows = parts.iter().map(|p| p.rows()).sum();
        let data = parts.iter().flat_map(|p| p.data().iter().cloned()).collect();
        Ok(Tensor::from_parts(vec![rows, m0], data))
    } else {
        let cols: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(n0 * cols);
        for r in 0..n0 {
            for p in parts {
                data.extend_from_slice(p.row_slice(r));
            }
        }
        Ok(Tensor::from_parts(vec![n0, cols], data))
    }
}

pub fn slice(a: &Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor, TensorError> {
    let (n, m) = a.require_rank2("slice")?;
    let extent = if axis == 0 { n } else { m };
    if axis > 1 || start > end || end > extent {
        return Err(TensorError::Invalid {
            op: "slice",
            msg: format!("range {start}..{end} on axis {axis} of {:?}", a.shape()),
        });
    }
    if axis == 0 {
        Ok(Tensor::from_parts(
            vec![end - start, m],
            a.data()[start * m..end * m].to_vec(),
        ))
    } else {
        let mut data = Vec::with_capacity(n * (end - start));
        for r in 0..n {
            data.extend_from_slice(&a.row_slice(r)[start..end]);
        }
        Ok(Tensor::from_parts(vec![n, end - start], data))
    }
}

pub fn index_select_rows(a: &Tensor, idx: &[usize]) -> Result<Tensor, TensorError> {
    let (n, m) = a.require_rank2("index_select")?;
    if let Some(bad) = idx.iter().find(|&&i| i >= n) {
        return Err(TensorError::Invalid {
            op: "index_select",
            msg: format!("row {bad} out of range for {n} rows"),
        });
    }
    let mut data = Vec::with_capacity(idx.len() * m);
    for &i in idx {
        data.extend_from_slice(a.row_slice(i));
    }
    Ok(Tensor::from_parts(vec![idx.len(), m], data))
}

/// Mean of the rows of `a` grouped by `segment[i]`; empty segments produce zero rows.
pub fn segment_mean(a: &Tensor, segment: &[usize], segments: usize) -> Result<Tensor, TensorError> {
    let (n, m) = a.require_rank2("segment_mean")?;
    if segment.len() != n || segment.iter().any(|&s| s >= segments) {
        return Err(TensorError::Invalid {
            op: "segment_mean",
            msg: format!("{} segment ids for {n} rows / {segments} segments", segment.len()),
        });
    }
    let counts = segment_counts(segment, segments);
    let mut out = vec![0.0; segments * m];
    for (r, &s) in segment.iter().enumerate() {
        let w = 1.0 / counts[s] as f64;
        for (o, x) in out[s * m..(s + 1) * m].iter_mut().zip(a.row_slice(r)) {
            *o += w * x;
        }
    }
    Ok(Tensor::from_parts(vec![segments, m], out))
}

pub(crate) fn segment_counts(segment: &[usize], segments: usize) -> Vec<usize> {
    let mut counts = vec![0usize; segments];
    for &s in segment {
        counts[s] += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
    Min,
}

/// Reduction over all elements (`axis = None`, result `[1,1]`) or along an axis
/// of a rank-2 tensor with the reduced dimension kept as 1.
pub fn reduce(a: &Tensor, kind: Reduce, axis: Option<usize>) -> Result<Tensor, TensorError> {
    let fold = |vals: &mut dyn Iterator<Item = f64>, count: usize| -> f64 {
        match kind {
            Reduce::Sum => vals.sum(),
            Reduce::Mean => vals.sum::<f64>() / count as f64,
            Reduce::Max => vals.fold(f64::NEG_INFINITY, f64::max),
            Reduce::Min => vals.fold(f64::INFINITY, f64::min),
        }
    };
    if a.is_empty() {
        return Err(TensorError::Invalid {
            op: "reduce",
            msg: "empty tensor".into(),
        });
    }
    match axis {
        None => Ok(Tensor::scalar(fold(&mut a.data().iter().cloned(), a.len()))),
        Some(0) => {
            let (n, m) = a.require_rank2("reduce")?;
            let data = (0..m)
                .map(|c| fold(&mut (0..n).map(|r| a.data()[r * m + c]), n))
                .collect();
            Ok(Tensor::from_parts(vec![1, m], data))
        }
        Some(1) => {
            let (n, m) = a.require_rank2("reduce")?;
            let data = (0..n)
                .map(|r| fold(&mut a.row_slice(r).iter().cloned(), m))
                .collect();
            Ok(Tensor::from_parts(vec![n, 1], data))
        }
        Some(ax) => Err(TensorError::Invalid {
            op: "reduce",
            msg: format!("axis {ax} on rank-2 tensor"),
        }),
    }
}

pub const L2_EPS: f64 = 1e-12;

/// Divides every row by its L2 norm (`max(norm, L2_EPS)`).
pub fn row_l2_normalize(a: &Tensor) -> Result<Tensor, TensorError> {
    let (n, m) = a.require_rank2("l2_normalize")?;
    let mut out = Vec::with_capacity(n * m);
    for r in 0..n {
        let row = a.row_slice(r);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(L2_EPS);
        out.extend(row.iter().map(|x| x / norm));
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}
