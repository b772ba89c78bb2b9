use super::{accumulate_sq_dist_grad, check_labels, log_sum_exp, sq_dist, LossDiagnostics, LossOutput, ProxyBank, Rows};
use crate::dataset::CliqueId;
use crate::error::{dim_err, config_err, Error, Result};
use crate::tensor::Matrix;

fn check_bank(emb: &Matrix, bank: &ProxyBank, min_classes: usize) -> Result<()> {
    if bank.dim() != emb.cols() {
        return Err(dim_err(format!(
            "proxies have {} dims, embeddings {}",
            bank.dim(),
            emb.cols()
        )));
    }
    if bank.len() < min_classes {
        return Err(config_err(format!(
            "proxy bank needs at least {min_classes} classes, has {}",
            bank.len()
        )));
    }
    Ok(())
}

/// ProxyNCA: `D(v, y) + log Σ_{z≠y} exp(−D(v, z))`, batch-averaged.
///
/// The positive proxy is left out of the denominator, so values below zero
/// are expected once embeddings sit closer to their own proxy than to any
/// other.
pub fn proxynca_loss(emb: &Matrix, labels: &[CliqueId], bank: &ProxyBank) -> Result<LossOutput> {
    check_labels(emb, labels)?;
    check_bank(emb, bank, 2)?;
    let v = Rows::new(emb);
    let p = Rows::new(&bank.proxies);
    let targets = labels.iter().map(|&l| bank.row_of(l)).collect::<Result<Vec<_>>>()?;
    let c = bank.len();
    let scale = 1.0 / v.n as f64;

    let mut gv = Rows::zeros(v.n, v.d);
    let mut gp = Rows::zeros(p.n, p.d);
    let mut total = 0.0;
    let mut neg_logits = Vec::with_capacity(c - 1);
    let mut others = Vec::with_capacity(c - 1);
    for i in 0..v.n {
        let y = targets[i];
        let vi = v.row(i);
        neg_logits.clear();
        others.clear();
        for z in (0..c).filter(|&z| z != y) {
            neg_logits.push(-sq_dist(vi, p.row(z)));
            others.push(z);
        }
        let lse = log_sum_exp(&neg_logits);
        total += sq_dist(vi, p.row(y)) + lse;

        let mut gi = vec![0.0; v.d];
        let mut gy = vec![0.0; v.d];
        accumulate_sq_dist_grad(vi, p.row(y), scale, &mut gi, Some(&mut gy));
        gp.row_mut(y).iter_mut().zip(&gy).for_each(|(o, g)| *o += g);
        for (&z, &logit) in others.iter().zip(&neg_logits) {
            let w = (logit - lse).exp();
            let mut gz = vec![0.0; v.d];
            accumulate_sq_dist_grad(vi, p.row(z), -scale * w, &mut gi, Some(&mut gz));
            gp.row_mut(z).iter_mut().zip(&gz).for_each(|(o, g)| *o += g);
        }
        gv.row_mut(i).iter_mut().zip(&gi).for_each(|(o, g)| *o += g);
    }
    Ok(LossOutput {
        value: total * scale,
        embeddings: gv.into_matrix()?,
        proxies: Some(gp.into_matrix()?),
        projection: None,
        diagnostics: LossDiagnostics::default(),
    })
}

fn unit_rows(m: &Rows, what: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut unit = m.data.clone();
    let mut norms = Vec::with_capacity(m.n);
    for i in 0..m.n {
        let n = m.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(Error::Degenerate(format!("{what} {i} has zero norm")));
        }
        unit[i * m.d..(i + 1) * m.d].iter_mut().for_each(|x| *x /= n);
        norms.push(n);
    }
    Ok((unit, norms))
}

/// NormalizedSoftmax: softmax cross-entropy over cosine similarities to all
/// proxies, scaled by `1/temperature`, positive proxy included.
pub fn normalized_softmax_loss(
    emb: &Matrix,
    labels: &[CliqueId],
    bank: &ProxyBank,
    temperature: f64,
) -> Result<LossOutput> {
    check_labels(emb, labels)?;
    check_bank(emb, bank, 1)?;
    if !(temperature > 0.0) {
        return Err(config_err(format!("temperature {temperature} must be positive")));
    }
    let v = Rows::new(emb);
    let p = Rows::new(&bank.proxies);
    let (vu, vn) = unit_rows(&v, "embedding")?;
    let (pu, pn) = unit_rows(&p, "proxy")?;
    let targets = labels.iter().map(|&l| bank.row_of(l)).collect::<Result<Vec<_>>>()?;
    let (c, d) = (bank.len(), v.d);
    let scale = 1.0 / v.n as f64;

    // gradients w.r.t. the unit vectors first, then through the normalization
    let mut g_vu = vec![0.0; v.n * d];
    let mut g_pu = vec![0.0; c * d];
    let mut total = 0.0;
    let mut logits = vec![0.0; c];
    for i in 0..v.n {
        let a = &vu[i * d..(i + 1) * d];
        for z in 0..c {
            let b = &pu[z * d..(z + 1) * d];
            logits[z] = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / temperature;
        }
        let lse = log_sum_exp(&logits);
        total += lse - logits[targets[i]];
        for z in 0..c {
            let coeff = ((logits[z] - lse).exp() - f64::from(u8::from(z == targets[i]))) * scale / temperature;
            if coeff == 0.0 {
                continue;
            }
            for j in 0..d {
                g_vu[i * d + j] += coeff * pu[z * d + j];
                g_pu[z * d + j] += coeff * vu[i * d + j];
            }
        }
    }

    let back = |unit: &[f64], norms: &[f64], g_unit: &[f64], rows: usize| -> Result<Matrix> {
        let mut out = vec![0.0; rows * d];
        for i in 0..rows {
            let u = &unit[i * d..(i + 1) * d];
            let g = &g_unit[i * d..(i + 1) * d];
            let radial: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
            for j in 0..d {
                out[i * d + j] = (g[j] - radial * u[j]) / norms[i];
            }
        }
        Matrix::from_f64(rows, d, &out)
    };

    Ok(LossOutput {
        value: total * scale,
        embeddings: back(&vu, &vn, &g_vu, v.n)?,
        proxies: Some(back(&pu, &pn, &g_pu, c)?),
        projection: None,
        diagnostics: LossDiagnostics::default(),
    })
}
