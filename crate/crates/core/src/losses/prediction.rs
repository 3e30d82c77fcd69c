use crate::model::softmax;

const PROB_FLOOR: f64 = 1e-12;

/// Mean cross-entropy between predicted distributions and (one-hot) labels.
pub fn prediction_loss(predictions: &[Vec<f64>], labels: &[Vec<f64>]) -> f64 {
    assert_eq!(predictions.len(), labels.len(), "batch sizes differ");
    assert!(!predictions.is_empty(), "empty batch");
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| {
            p.iter()
                .zip(y)
                .filter(|(_, &t)| t != 0.0)
                .map(|(&q, &t)| -t * q.max(PROB_FLOOR).ln())
                .sum::<f64>()
        })
        .sum();
    total / predictions.len() as f64
}

/// Cross-entropy of `softmax(logits)` against `label`, evaluated in the log domain.
pub fn cross_entropy_from_logits(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Mean cross-entropy over a batch of logits and its gradient with respect to
/// every logit.
pub fn prediction_loss_logit_grad(logits: &[Vec<f64>], labels: &[usize]) -> (f64, Vec<Vec<f64>>) {
    assert_eq!(logits.len(), labels.len());
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grads = logits
        .iter()
        .zip(labels)
        .map(|(l, &y)| {
            loss += cross_entropy_from_logits(l, y);
            let mut g = softmax(l);
            g[y] -= 1.0;
            g.iter_mut().for_each(|v| *v /= n);
            g
        })
        .collect();
    (loss / n, grads)
}
