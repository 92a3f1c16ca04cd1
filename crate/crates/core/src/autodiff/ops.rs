use super::NORM_EPS;

/// Splits `data` into `rows` equal contiguous chunks and standardises each:
/// `(v - mean) / sqrt(var + eps)` with population variance.
pub(super) fn standardize_rows(data: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>) {
    let n = data.len() / rows;
    let mut out = vec![0.0; data.len()];
    let mut inv_std = Vec::with_capacity(rows);
    for (chunk, dst) in data.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let mean = chunk.iter().sum::<f64>() / n as f64;
        let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        for (d, v) in dst.iter_mut().zip(chunk) {
            *d = (v - mean) * inv;
        }
        inv_std.push(inv);
    }
    (out, inv_std)
}

/// Gradient of [`standardize_rows`]:
/// `inv * (g - mean(g) - xhat * mean(g * xhat))` per chunk.
pub(super) fn standardize_rows_backward(g: &[f64], xhat: &[f64], inv_std: &[f64]) -> Vec<f64> {
    let n = g.len() / inv_std.len();
    let mut out = vec![0.0; g.len()];
    for (r, &inv) in inv_std.iter().enumerate() {
        let span = r * n..(r + 1) * n;
        let (gr, xr) = (&g[span.clone()], &xhat[span.clone()]);
        let mean_g = gr.iter().sum::<f64>() / n as f64;
        let mean_gx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        for ((o, &gi), &xi) in out[span].iter_mut().zip(gr).zip(xr) {
            *o = inv * (gi - mean_g - xi * mean_gx);
        }
    }
    out
}

/// Channel-first logits `[k][pixels]`. Returns the pixel-mean loss and the
/// softmax probabilities in the same layout.
pub(super) fn softmax_cross_entropy(logits: &[f64], k: usize, target: &[u8]) -> (f64, Vec<f64>) {
    let n = target.len();
    let mut probs = vec![0.0; logits.len()];
    let mut total = 0.0;
    for (p, &class) in target.iter().enumerate() {
        let max = (0..k).map(|c| logits[c * n + p]).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..k).map(|c| (logits[c * n + p] - max).exp()).sum();
        let log_z = max + sum.ln();
        for c in 0..k {
            probs[c * n + p] = (logits[c * n + p] - log_z).exp();
        }
        total += log_z - logits[class as usize * n + p];
    }
    (total / n as f64, probs)
}

pub(super) fn softmax_cross_entropy_backward(probs: &[f64], k: usize, target: &[u8], scale: f64) -> Vec<f64> {
    let n = target.len();
    let s = scale / n as f64;
    let mut g: Vec<f64> = probs.iter().map(|p| p * s).collect();
    for (p, &class) in target.iter().enumerate() {
        debug_assert!((class as usize) < k);
        g[class as usize * n + p] -= s;
    }
    g
}
