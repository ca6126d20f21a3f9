use super::LatentError;
use crate::tensor::Tensor;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// cmp@k: mean over actions of (mean distance to all other actions) /
/// (distance to the k-th nearest neighbour). Actions whose k-th neighbour is
/// a duplicate (distance 0) are left out; if all are, the result is 0.
pub fn compactness(embeddings: &Tensor, k: usize) -> Result<f64, LatentError> {
    let n = embeddings.rows();
    if k == 0 || n < k + 1 {
        return Err(LatentError::TooFew { needed: k.max(1) + 1, have: n });
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut d = Vec::with_capacity(n - 1);
    for i in 0..n {
        d.clear();
        d.extend((0..n).filter(|&j| j != i).map(|j| dist(embeddings.row_slice(i), embeddings.row_slice(j))));
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        d.sort_by(f64::total_cmp);
        let dk = d[k - 1];
        if dk > 0.0 {
            total += mean / dk;
            counted += 1;
        }
    }
    Ok(if counted == 0 { 0.0 } else { total / counted as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(rows: &[[f64; 2]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn two_points_give_one() {
        assert_eq!(compactness(&pts(&[[0.0, 0.0], [3.0, 4.0]]), 1).unwrap(), 1.0);
        assert!(compactness(&pts(&[[0.0, 0.0], [3.0, 4.0]]), 2).is_err());
    }

    #[test]
    fn clusters_are_more_compact_than_a_grid() {
        // 3x3 unit grid vs two 4-5 point clusters of the same size far apart.
        let grid: Vec<[f64; 2]> = (0..9).map(|i| [(i % 3) as f64, (i / 3) as f64]).collect();
        let cg = compactness(&pts(&grid), 1).unwrap();
        // Direct evaluation for the grid: corners, edges and centre.
        let mut expect = 0.0;
        for i in 0..9 {
            let (x, y) = ((i % 3) as f64, (i / 3) as f64);
            let m: f64 = grid.iter().filter(|p| p[0] != x || p[1] != y).map(|p| ((p[0] - x).powi(2) + (p[1] - y).powi(2)).sqrt()).sum::<f64>() / 8.0;
            expect += m;
        }
        assert!((cg - expect / 9.0).abs() < 1e-12);
        let mut clusters = Vec::new();
        for i in 0..9 {
            let off = if i < 5 { 0.0 } else { 10.0 };
            clusters.push([off + 0.1 * (i % 5) as f64, 0.0]);
        }
        assert!(compactness(&pts(&clusters), 1).unwrap() > cg);
    }

    #[test]
    fn invariant_to_rescaling() {
        let a = pts(&[[0.0, 1.0], [2.0, 0.5], [3.0, 3.0], [-1.0, 2.0]]);
        let b = crate::tensor::map(&a, |v| v * 7.5);
        assert!((compactness(&a, 2).unwrap() - compactness(&b, 2).unwrap()).abs() < 1e-12);
    }
}
