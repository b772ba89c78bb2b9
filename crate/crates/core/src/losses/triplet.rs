use super::{accumulate_sq_dist_grad, check_labels, sq_dist, LossDiagnostics, LossOutput, Rows};
use crate::dataset::CliqueId;
use crate::error::{Error, Result};
use crate::retrieval::DistanceMatrix;
use crate::tensor::Matrix;

/// Hardest in-batch positive and negative for one anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// `max(D⁺ − D⁻ + m, 0)`
pub fn triplet_term(d_pos: f64, d_neg: f64, margin: f64) -> f64 {
    (d_pos - d_neg + margin).max(0.0)
}

/// For every anchor: the farthest same-class sample (self excluded) and the
/// closest other-class sample, ties to the lowest index. `None` marks anchors
/// without a positive or without a negative.
pub fn mine_triplets(dist: &DistanceMatrix, labels: &[CliqueId]) -> Vec<Option<Triplet>> {
    let n = labels.len();
    (0..n)
        .map(|a| {
            let mut pos: Option<(usize, f64)> = None;
            let mut neg: Option<(usize, f64)> = None;
            for j in 0..n {
                if j == a {
                    continue;
                }
                let d = dist.get(a, j);
                if labels[j] == labels[a] {
                    if pos.map_or(true, |(_, best)| d > best) {
                        pos = Some((j, d));
                    }
                } else if neg.map_or(true, |(_, best)| d < best) {
                    neg = Some((j, d));
                }
            }
            Some(Triplet {
                anchor: a,
                positive: pos?.0,
                negative: neg?.0,
            })
        })
        .collect()
}

pub(crate) fn batch_distances(rows: &Rows) -> DistanceMatrix {
    let n = rows.n;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = sq_dist(rows.row(i), rows.row(j));
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    DistanceMatrix { rows: n, cols: n, data }
}

/// Batch-hard triplet loss, averaged over anchors that have both a positive
/// and a negative.
pub fn triplet_loss(emb: &Matrix, labels: &[CliqueId], margin: f64) -> Result<LossOutput> {
    check_labels(emb, labels)?;
    let v = Rows::new(emb);
    let dist = batch_distances(&v);
    let triplets = mine_triplets(&dist, labels);
    let valid: Vec<Triplet> = triplets.iter().flatten().copied().collect();
    let skipped = triplets.len() - valid.len();
    if valid.is_empty() {
        return Err(Error::DegenerateBatch(
            "no anchor has both an in-batch positive and negative".into(),
        ));
    }
    let scale = 1.0 / valid.len() as f64;
    let mut grad = Rows::zeros(v.n, v.d);
    let mut total = 0.0;
    for t in &valid {
        let l = triplet_term(dist.get(t.anchor, t.positive), dist.get(t.anchor, t.negative), margin);
        total += l;
        if l > 0.0 {
            let (a, p, q) = (v.row(t.anchor), v.row(t.positive), v.row(t.negative));
            let mut ga = vec![0.0; v.d];
            let mut gp = vec![0.0; v.d];
            let mut gn = vec![0.0; v.d];
            accumulate_sq_dist_grad(a, p, scale, &mut ga, Some(&mut gp));
            accumulate_sq_dist_grad(a, q, -scale, &mut ga, Some(&mut gn));
            for (idx, g) in [(t.anchor, ga), (t.positive, gp), (t.negative, gn)] {
                grad.row_mut(idx).iter_mut().zip(g).for_each(|(o, g)| *o += g);
            }
        }
    }
    Ok(LossOutput {
        value: total * scale,
        embeddings: grad.into_matrix()?,
        proxies: None,
        projection: None,
        diagnostics: LossDiagnostics {
            skipped_anchors: skipped,
            stabilized: 0,
        },
    })
}
