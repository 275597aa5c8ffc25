//! Row-wise softmax losses over `[n, k]` logits. Losses are batch means
//! accumulated in f64; gradients are with respect to the logits.

use super::Real;

pub fn log_softmax<T: Real>(logits: &[T]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    let lse = max + logits.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v.as_f64() - lse).collect()
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Mean of `−log softmax(row)[class]`.
pub fn cross_entropy<T: Real>(logits: &[T], k: usize, classes: &[usize]) -> (f64, Vec<T>) {
    let n = classes.len();
    assert_eq!(logits.len(), n * k);
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &class) in logits.chunks_exact(k).zip(classes) {
        let ls = log_softmax(row);
        loss -= ls[class];
        for (j, l) in ls.into_iter().enumerate() {
            let target = if j == class { 1.0 } else { 0.0 };
            grad.push(T::of((l.exp() - target) / n as f64));
        }
    }
    (loss / n as f64, grad)
}

/// Mean of `Σ p·(log p − log softmax(row))`, with `0·log 0 = 0`.
pub fn kl_divergence<T: Real, P: Real>(logits: &[T], k: usize, p: &[P]) -> (f64, Vec<T>) {
    assert_eq!(logits.len(), p.len());
    let n = logits.len() / k;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, target) in logits.chunks_exact(k).zip(p.chunks_exact(k)) {
        let ls = log_softmax(row);
        let mass: f64 = target.iter().map(|v| v.as_f64()).sum();
        for (l, &t) in ls.into_iter().zip(target) {
            let t = t.as_f64();
            if t > 0.0 {
                loss += t * (t.ln() - l);
            }
            grad.push(T::of((mass * l.exp() - t) / n as f64));
        }
    }
    (loss / n as f64, grad)
}
