use serde::{Deserialize, Serialize};

use super::{batch_classes, check_labels, LossDiagnostics, LossOutput, Rows};
use crate::dataset::CliqueId;
use crate::error::{config_err, Error, Result};
use crate::tensor::Matrix;

/// Floor applied to refined probabilities before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;
const DENOM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupConfig {
    pub iterations: usize,
}

impl Default for GroupConfig {
    fn default() -> Self {
        Self { iterations: 3 }
    }
}

/// One replicator update on every non-anchor row:
/// `x_i ← x_i ⊙ (W·X)_i / (x_iᵀ (W·X)_i)`.
///
/// `weights` is n×n row-major, `probs` n×C. Returns how many denominators
/// were zero and had to be replaced by a small epsilon.
pub fn replicator_step(weights: &[f64], probs: &mut [f64], classes: usize, is_anchor: &[bool]) -> usize {
    let n = is_anchor.len();
    let support = mat_mul(weights, probs, n, n, classes);
    let mut stabilized = 0;
    for i in (0..n).filter(|&i| !is_anchor[i]) {
        let x = &mut probs[i * classes..(i + 1) * classes];
        let pi = &support[i * classes..(i + 1) * classes];
        let mut den: f64 = x.iter().zip(pi).map(|(a, b)| a * b).sum();
        if den <= 0.0 {
            den = DENOM_EPS;
            stabilized += 1;
        }
        x.iter_mut().zip(pi).for_each(|(a, b)| *a = *a * b / den);
    }
    stabilized
}

/// `A (r×k) · B (k×c)`
fn mat_mul(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for t in 0..k {
            let w = a[i * k + t];
            if w == 0.0 {
                continue;
            }
            for j in 0..c {
                out[i * c + j] += w * b[t * c + j];
            }
        }
    }
    out
}

/// Group loss: refine class probabilities with replicator dynamics over
/// clipped Pearson similarities, then score them with a log loss.
///
/// Anchors default to the first sample of each class in batch order; when
/// given explicitly there must be exactly one per class. Anchors keep one-hot
/// probabilities, everything else starts uniform over the batch classes.
pub fn group_loss(
    emb: &Matrix,
    labels: &[CliqueId],
    anchors: Option<&[usize]>,
    cfg: &GroupConfig,
) -> Result<LossOutput> {
    check_labels(emb, labels)?;
    let v = Rows::new(emb);
    let (n, d) = (v.n, v.d);
    let classes = batch_classes(labels);
    let c = classes.len();
    let class_of: Vec<usize> = labels
        .iter()
        .map(|l| classes.iter().position(|k| k == l).expect("label in class list"))
        .collect();

    let anchor_rows: Vec<usize> = match anchors {
        Some(a) => {
            let mut seen = vec![false; c];
            for &r in a {
                if r >= n {
                    return Err(config_err(format!("anchor {r} outside batch of {n}")));
                }
                if std::mem::replace(&mut seen[class_of[r]], true) {
                    return Err(config_err(format!("class {} has two anchors", labels[r])));
                }
            }
            if let Some(k) = seen.iter().position(|s| !s) {
                return Err(config_err(format!("class {} has no anchor", classes[k])));
            }
            a.to_vec()
        }
        None => classes
            .iter()
            .map(|k| labels.iter().position(|l| l == k).expect("class present"))
            .collect(),
    };
    let mut is_anchor = vec![false; n];
    anchor_rows.iter().for_each(|&r| is_anchor[r] = true);
    let learners: Vec<usize> = (0..n).filter(|&i| !is_anchor[i]).collect();
    if learners.is_empty() {
        return Err(Error::DegenerateBatch("every sample is an anchor".into()));
    }

    // Pearson similarities through centered unit rows.
    let mut unit = vec![0.0; n * d];
    let mut norms = vec![0.0; n];
    for i in 0..n {
        let r = v.row(i);
        let mean = r.iter().sum::<f64>() / d as f64;
        let u = &mut unit[i * d..(i + 1) * d];
        for j in 0..d {
            u[j] = r[j] - mean;
        }
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Degenerate(format!("embedding {i} is constant")));
        }
        u.iter_mut().for_each(|x| *x /= norm);
        norms[i] = norm;
    }
    let mut weights = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let p: f64 = unit[i * d..(i + 1) * d]
                    .iter()
                    .zip(&unit[j * d..(j + 1) * d])
                    .map(|(a, b)| a * b)
                    .sum();
                weights[i * n + j] = p.max(0.0);
            }
        }
    }

    let mut probs = vec![1.0 / c as f64; n * c];
    for &a in &anchor_rows {
        let x = &mut probs[a * c..(a + 1) * c];
        x.iter_mut().for_each(|p| *p = 0.0);
        x[class_of[a]] = 1.0;
    }
    let mut history = Vec::with_capacity(cfg.iterations + 1);
    let mut stabilized = 0;
    for _ in 0..cfg.iterations {
        history.push(probs.clone());
        stabilized += replicator_step(&weights, &mut probs, c, &is_anchor);
    }

    let scale = 1.0 / learners.len() as f64;
    let mut value = 0.0;
    let mut g_probs = vec![0.0; n * c];
    for &i in &learners {
        let p = probs[i * c + class_of[i]];
        if p > LOG_CLAMP {
            value -= p.ln();
            g_probs[i * c + class_of[i]] = -scale / p;
        } else {
            value -= LOG_CLAMP.ln();
        }
    }
    value *= scale;

    // Reverse through the unrolled replicator steps.
    let mut g_weights = vec![0.0; n * n];
    for prev in history.iter().rev() {
        let support = mat_mul(&weights, prev, n, n, c);
        let mut g_prev = vec![0.0; n * c];
        let mut g_support = vec![0.0; n * c];
        for i in 0..n {
            let g = &g_probs[i * c..(i + 1) * c];
            if is_anchor[i] {
                g_prev[i * c..(i + 1) * c].iter_mut().zip(g).for_each(|(o, g)| *o += g);
                continue;
            }
            let x = &prev[i * c..(i + 1) * c];
            let pi = &support[i * c..(i + 1) * c];
            let raw: f64 = x.iter().zip(pi).map(|(a, b)| a * b).sum();
            let den = if raw <= 0.0 { DENOM_EPS } else { raw };
            // y_k = x_k π_k / den ; s = Σ g_k y_k
            let s: f64 = (0..c).map(|k| g[k] * x[k] * pi[k] / den).sum();
            // the stabilized denominator is a constant, so it contributes no s-term
            let s = if raw <= 0.0 { 0.0 } else { s };
            for k in 0..c {
                g_prev[i * c + k] += pi[k] * (g[k] - s) / den;
                g_support[i * c + k] = x[k] * (g[k] - s) / den;
            }
        }
        // support = W · prev
        for i in 0..n {
            for j in 0..n {
                let w = weights[i * n + j];
                let mut gw = 0.0;
                for k in 0..c {
                    let gs = g_support[i * c + k];
                    gw += gs * prev[j * c + k];
                    g_prev[j * c + k] += w * gs;
                }
                g_weights[i * n + j] += gw;
            }
        }
        g_probs = g_prev;
    }

    // Through the clip and the Pearson similarity.
    let mut g_unit = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..n {
            if i == j || weights[i * n + j] <= 0.0 {
                continue;
            }
            let gw = g_weights[i * n + j];
            if gw == 0.0 {
                continue;
            }
            for t in 0..d {
                g_unit[i * d + t] += gw * unit[j * d + t];
                g_unit[j * d + t] += gw * unit[i * d + t];
            }
        }
    }
    let mut grad = Rows::zeros(n, d);
    for i in 0..n {
        let u = &unit[i * d..(i + 1) * d];
        let g = &g_unit[i * d..(i + 1) * d];
        let radial: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
        let gc: Vec<f64> = (0..d).map(|t| (g[t] - radial * u[t]) / norms[i]).collect();
        let mean = gc.iter().sum::<f64>() / d as f64;
        grad.row_mut(i).iter_mut().zip(&gc).for_each(|(o, g)| *o = g - mean);
    }

    Ok(LossOutput {
        value,
        embeddings: grad.into_matrix()?,
        proxies: None,
        projection: None,
        diagnostics: LossDiagnostics {
            skipped_anchors: 0,
            stabilized,
        },
    })
}
