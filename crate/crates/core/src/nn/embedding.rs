use super::DenseMatrix;

/// Mean of the embedding rows selected by `ids`; zeros when `ids` is empty.
pub fn mean_rows(table: &DenseMatrix, ids: &[u32]) -> Vec<f64> {
    let mut out = vec![0.0; table.cols()];
    if ids.is_empty() {
        return out;
    }
    for &id in ids {
        for (o, v) in out.iter_mut().zip(table.row(id as usize)) {
            *o += v;
        }
    }
    let n = ids.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Scatters the gradient of [`mean_rows`] back into `grad`.
pub fn mean_rows_backward(grad: &mut DenseMatrix, ids: &[u32], d_mean: &[f64]) {
    if ids.is_empty() {
        return;
    }
    let n = ids.len() as f64;
    for &id in ids {
        for (g, d) in grad.row_mut(id as usize).iter_mut().zip(d_mean) {
            *g += d / n;
        }
    }
}
