use super::{
    accumulate_sq_dist_grad, batch_classes, check_labels, sq_dist, CentroidBank, LossDiagnostics,
    LossOutput, ProjectionGrads, Rows,
};
use crate::dataset::CliqueId;
use crate::error::{dim_err, Error, Result};
use crate::tensor::Matrix;

/// Added to every inter-centroid distance in the cluster-matching loss.
pub const DB_EPS: f64 = 1e-8;

/// Mean over anchors of `Σ_j |D(sᵢ, sⱼ) − D(tᵢ, tⱼ)|`. Each side uses its own
/// dimensionality in `D`; the teacher is constant.
pub fn distance_matching_loss(student: &Matrix, teacher: &Matrix) -> Result<LossOutput> {
    if student.rows() != teacher.rows() {
        return Err(dim_err(format!(
            "student batch of {} rows, teacher batch of {}",
            student.rows(),
            teacher.rows()
        )));
    }
    if student.rows() == 0 || student.cols() == 0 || teacher.cols() == 0 {
        return Err(Error::DegenerateBatch("empty batch".into()));
    }
    let s = Rows::new(student);
    let t = Rows::new(teacher);
    let n = s.n;
    let scale = 1.0 / n as f64;
    let mut grad = Rows::zeros(n, s.d);
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = sq_dist(s.row(i), s.row(j)) - sq_dist(t.row(i), t.row(j));
            // the pair appears in both anchor i's and anchor j's sum
            total += 2.0 * diff.abs();
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            if sign != 0.0 {
                let (lo, hi) = grad.data.split_at_mut(j * s.d);
                accumulate_sq_dist_grad(
                    s.row(i),
                    s.row(j),
                    2.0 * sign * scale,
                    &mut lo[i * s.d..(i + 1) * s.d],
                    Some(&mut hi[..s.d]),
                );
            }
        }
    }
    Ok(LossOutput {
        value: total * scale,
        embeddings: grad.into_matrix()?,
        proxies: None,
        projection: None,
        diagnostics: LossDiagnostics::default(),
    })
}

/// Davies–Bouldin cluster matching. Frozen teacher centroids are carried into
/// the student space by the bank's trainable projection; spreads and centroid
/// distances only involve classes present in the batch. Returns the mean over
/// batch classes of `max_{j≠i} (σᵢ + σⱼ) / (D(cᵢ, cⱼ) + ε)`.
pub fn db_cluster_loss(student: &Matrix, labels: &[CliqueId], bank: &CentroidBank) -> Result<LossOutput> {
    check_labels(student, labels)?;
    if bank.student_dim() != student.cols() {
        return Err(dim_err(format!(
            "projection produces {} dims, student has {}",
            bank.student_dim(),
            student.cols()
        )));
    }
    let classes = batch_classes(labels);
    if classes.len() < 2 {
        return Err(Error::DegenerateBatch("cluster matching needs at least 2 classes".into()));
    }
    let rows = classes.iter().map(|&c| bank.row_of(c)).collect::<Result<Vec<_>>>()?;
    let v = Rows::new(student);
    let (d_s, d_t) = (bank.weight.rows(), bank.weight.cols());
    let w = Rows::new(&bank.weight);
    let cen = Rows::new(&bank.centroids);

    // projected centroids of the batch classes
    let c = classes.len();
    let mut proj = Rows::zeros(c, d_s);
    for (k, &r) in rows.iter().enumerate() {
        let src = cen.row(r);
        for o in 0..d_s {
            proj.row_mut(k)[o] = f64::from(bank.bias[o])
                + w.row(o).iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let members: Vec<Vec<usize>> = classes
        .iter()
        .map(|k| (0..v.n).filter(|&i| labels[i] == *k).collect())
        .collect();
    let sigma: Vec<f64> = members
        .iter()
        .enumerate()
        .map(|(k, m)| m.iter().map(|&i| sq_dist(v.row(i), proj.row(k))).sum::<f64>() / m.len() as f64)
        .collect();

    let scale = 1.0 / c as f64;
    let mut stabilized = 0;
    let mut total = 0.0;
    let mut g_sigma = vec![0.0; c];
    let mut g_proj = Rows::zeros(c, d_s);
    for i in 0..c {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in (0..c).filter(|&j| j != i) {
            let dist = sq_dist(proj.row(i), proj.row(j));
            if dist < DB_EPS {
                stabilized += 1;
            }
            let ratio = (sigma[i] + sigma[j]) / (dist + DB_EPS);
            if best.map_or(true, |(_, r, _)| ratio > r) {
                best = Some((j, ratio, dist));
            }
        }
        let (j, ratio, dist) = best.expect("at least two classes");
        total += ratio;
        let den = dist + DB_EPS;
        g_sigma[i] += scale / den;
        g_sigma[j] += scale / den;
        let g_dist = -scale * (sigma[i] + sigma[j]) / (den * den);
        let (a, b) = (proj.row(i).to_vec(), proj.row(j).to_vec());
        let mut ga = vec![0.0; d_s];
        let mut gb = vec![0.0; d_s];
        accumulate_sq_dist_grad(&a, &b, g_dist, &mut ga, Some(&mut gb));
        g_proj.row_mut(i).iter_mut().zip(&ga).for_each(|(o, g)| *o += g);
        g_proj.row_mut(j).iter_mut().zip(&gb).for_each(|(o, g)| *o += g);
    }

    let mut g_emb = Rows::zeros(v.n, d_s);
    for (k, m) in members.iter().enumerate() {
        let per = g_sigma[k] / m.len() as f64;
        let centroid = proj.row(k).to_vec();
        let mut gc = vec![0.0; d_s];
        for &i in m {
            let mut gi = vec![0.0; d_s];
            accumulate_sq_dist_grad(v.row(i), &centroid, per, &mut gi, Some(&mut gc));
            g_emb.row_mut(i).iter_mut().zip(&gi).for_each(|(o, g)| *o += g);
        }
        g_proj.row_mut(k).iter_mut().zip(&gc).for_each(|(o, g)| *o += g);
    }

    let mut g_w = vec![0.0; d_s * d_t];
    let mut g_b = vec![0.0; d_s];
    for (k, &r) in rows.iter().enumerate() {
        let src = cen.row(r);
        for o in 0..d_s {
            let g = g_proj.row(k)[o];
            g_b[o] += g;
            for t in 0..d_t {
                g_w[o * d_t + t] += g * src[t];
            }
        }
    }

    Ok(LossOutput {
        value: total * scale,
        embeddings: g_emb.into_matrix()?,
        proxies: None,
        projection: Some(ProjectionGrads {
            weight: Matrix::from_f64(d_s, d_t, &g_w)?,
            bias: g_b.iter().map(|&v| v as f32).collect(),
        }),
        diagnostics: LossDiagnostics {
            skipped_anchors: 0,
            stabilized,
        },
    })
}
