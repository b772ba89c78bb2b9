//! Distance and similarity functions shared by the losses and the retrieval path.
//!
//! All three accumulate in 64-bit regardless of the 32-bit storage.

use crate::error::{dim_err, Error, Result};

fn check_lengths(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(dim_err(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(dim_err("vectors must have at least one component"));
    }
    Ok(())
}

/// Squared Euclidean distance normalized by the dimensionality:
/// `(1/d) · ‖a − b‖²`.
pub fn squared_dist(a: &[f32], b: &[f32]) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(squared_dist_raw(a, b))
}

#[inline]
pub(crate) fn squared_dist_raw(a: &[f32], b: &[f32]) -> f64 {
    // fixed lane layout: vectorizes, and the summation order never changes
    let mut acc = [0.0f64; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            let d = f64::from(x[i]) - f64::from(y[i]);
            acc[i] += d * d;
        }
    }
    for (i, (&x, &y)) in ra.iter().zip(rb).enumerate() {
        let d = f64::from(x) - f64::from(y);
        acc[i] += d * d;
    }
    reduce_lanes(acc) / a.len() as f64
}

pub(crate) const LANES: usize = 8;

#[inline]
pub(crate) fn reduce_lanes(acc: [f64; LANES]) -> f64 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

pub fn cosine_sim(a: &[f32], b: &[f32]) -> Result<f64> {
    check_lengths(a, b)?;
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero vector".into()));
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation between the components of two vectors.
pub fn pearson_sim(a: &[f32], b: &[f32]) -> Result<f64> {
    check_lengths(a, b)?;
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let mb = b.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x) - ma, f64::from(y) - mb);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::Degenerate(
            "pearson correlation of a constant vector".into(),
        ));
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}
