use crate::error::{dim_err, Error, Result};

use super::matrix::{dot, Matrix};

/// Values retained by [`linear_forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct LinearCache {
    input: Matrix,
    weight: Matrix,
    has_bias: bool,
}

impl LinearCache {
    pub fn input(&self) -> &Matrix {
        &self.input
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearGrads {
    pub weight: Matrix,
    pub bias: Option<Vec<f32>>,
    pub input: Matrix,
}

/// `X · Wᵀ + b` for `W: d_out×d_in`, `X: n×d_in`.
pub fn linear_forward(
    weight: &Matrix,
    bias: Option<&[f32]>,
    input: &Matrix,
) -> Result<(Matrix, LinearCache)> {
    let (d_out, d_in) = weight.shape();
    if input.cols() != d_in {
        return Err(dim_err(format!(
            "input has {} features, layer expects {d_in}",
            input.cols()
        )));
    }
    if let Some(b) = bias {
        if b.len() != d_out {
            return Err(dim_err(format!(
                "bias has {} entries, layer has {d_out} outputs",
                b.len()
            )));
        }
    }
    let mut data = Vec::with_capacity(input.rows() * d_out);
    for x in input.row_iter() {
        for o in 0..d_out {
            let mut acc = dot(weight.row(o), x);
            if let Some(b) = bias {
                acc += f64::from(b[o]);
            }
            data.push(acc as f32);
        }
    }
    let out = Matrix::from_vec_unchecked(input.rows(), d_out, data);
    let cache = LinearCache {
        input: input.clone(),
        weight: weight.clone(),
        has_bias: bias.is_some(),
    };
    Ok((out, cache))
}

pub fn linear_backward(grad_out: &Matrix, cache: &LinearCache) -> Result<LinearGrads> {
    let (d_out, d_in) = cache.weight.shape();
    let n = cache.input.rows();
    if grad_out.shape() != (n, d_out) {
        return Err(Error::Contract(format!(
            "upstream gradient is {}x{}, cached forward produced {n}x{d_out}",
            grad_out.rows(),
            grad_out.cols()
        )));
    }

    let mut gw = vec![0.0f64; d_out * d_in];
    let mut gb = vec![0.0f64; d_out];
    let mut gx = vec![0.0f64; n * d_in];
    for s in 0..n {
        let g = grad_out.row(s);
        let x = cache.input.row(s);
        let gx_row = &mut gx[s * d_in..(s + 1) * d_in];
        for (o, &go) in g.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            let go = f64::from(go);
            gb[o] += go;
            let w = cache.weight.row(o);
            let gw_row = &mut gw[o * d_in..(o + 1) * d_in];
            for i in 0..d_in {
                gw_row[i] += go * f64::from(x[i]);
                gx_row[i] += go * f64::from(w[i]);
            }
        }
    }

    Ok(LinearGrads {
        weight: Matrix::from_f64(d_out, d_in, &gw)?,
        bias: cache
            .has_bias
            .then(|| gb.iter().map(|&v| v as f32).collect()),
        input: Matrix::from_f64(n, d_in, &gx)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn identity_and_zero_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(3, 4, &mut rng);
        let (y, _) = linear_forward(&Matrix::identity(4), Some(&[0.0; 4]), &x).unwrap();
        assert_eq!(y, x);

        let c = [0.5, -2.0];
        let (y, _) = linear_forward(&Matrix::zeros(2, 4), Some(&c), &x).unwrap();
        for r in y.row_iter() {
            assert_eq!(r, &c);
        }
    }

    #[test]
    fn matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = random(2, 4, &mut rng);
        let b: Vec<f32> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = random(3, 4, &mut rng);
        let (y, _) = linear_forward(&w, Some(&b), &x).unwrap();
        for n in 0..3 {
            for o in 0..2 {
                let mut acc = f64::from(b[o]);
                for i in 0..4 {
                    acc += f64::from(x.get(n, i)) * f64::from(w.get(o, i));
                }
                assert!((f64::from(y.get(n, o)) - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let x = Matrix::zeros(2, 3);
        assert!(linear_forward(&Matrix::zeros(2, 4), None, &x).is_err());
        assert!(linear_forward(&Matrix::zeros(2, 3), Some(&[0.0]), &x).is_err());
        let (_, cache) = linear_forward(&Matrix::zeros(2, 3), None, &x).unwrap();
        assert!(matches!(
            linear_backward(&Matrix::zeros(3, 2), &cache),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random(3, 5, &mut rng);
        let x = random(4, 5, &mut rng);
        let (_, cache) = linear_forward(&w, Some(&[1.0, 2.0, 3.0]), &x).unwrap();
        let g = linear_backward(&Matrix::zeros(4, 3), &cache).unwrap();
        assert!(g.weight.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.bias.unwrap().iter().all(|&v| v == 0.0));
        assert!(g.input.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_chain_rule() {
        let w = Matrix::from_rows(&[[1.5]]).unwrap();
        let x = Matrix::from_rows(&[[-2.0]]).unwrap();
        let (_, cache) = linear_forward(&w, None, &x).unwrap();
        let g = linear_backward(&Matrix::from_rows(&[[0.25]]).unwrap(), &cache).unwrap();
        assert_eq!(g.weight.as_slice(), &[0.25 * -2.0]);
        assert_eq!(g.input.as_slice(), &[0.25 * 1.5]);
        assert!(g.bias.is_none());
    }
}
