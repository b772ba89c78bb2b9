//! Central finite differences against every analytic gradient.
//!
//! Losses are probed on their 32-bit inputs; the kernels (linear, batch norm)
//! are probed through an independent 64-bit shadow forward so output
//! rounding never enters the numeric derivative.

#![allow(dead_code)]

use embdistill::losses::{
    db_cluster_loss, distance_matching_loss, group_loss, normalized_softmax_loss, proxynca_loss, triplet_loss,
    CentroidBank, GroupConfig, ProxyBank,
};
use embdistill::tensor::{linear_backward, linear_forward, BatchNorm, Mode};
use embdistill::{CliqueId, Matrix};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const STEP: f32 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
/// Configurations closer than this to a non-differentiable point are redrawn.
pub const KINK_MARGIN: f64 = 0.02;

/// Trainable tensors of one configuration, flattened.
pub type Params = Vec<Vec<f32>>;
/// Loss value and the analytic gradient of every tensor.
pub type Eval = (f64, Vec<Vec<f64>>);

pub struct Case {
    pub params: Params,
    pub eval: Box<dyn Fn(&Params) -> Eval>,
}

#[derive(Debug, Clone)]
pub struct Summary {
    pub name: &'static str,
    pub configs: usize,
    pub redrawn: usize,
    pub worst: f64,
    pub failures: usize,
}

impl Summary {
    pub fn passed(&self, min_configs: usize) -> bool {
        self.failures == 0 && self.configs >= min_configs
    }
}

pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-8)
}

/// Numeric gradient of every parameter; the divisor is the step actually
/// representable in 32-bit.
pub fn numeric_gradient(params: &Params, f: &dyn Fn(&Params) -> f64) -> Vec<Vec<f64>> {
    numeric_gradient_with(params, f, STEP)
}

fn numeric_gradient_with(params: &Params, f: &dyn Fn(&Params) -> f64, step: f32) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(params.len());
    let mut probe = params.clone();
    for t in 0..params.len() {
        let mut g = Vec::with_capacity(params[t].len());
        for i in 0..params[t].len() {
            let x = params[t][i];
            let (hi, lo) = (x + step, x - step);
            probe[t][i] = hi;
            let f_hi = f(&probe);
            probe[t][i] = lo;
            let f_lo = f(&probe);
            probe[t][i] = x;
            g.push((f_hi - f_lo) / (f64::from(hi) - f64::from(lo)));
        }
        out.push(g);
    }
    out
}

/// Random case generator for one component; `None` means the draw was rejected.
pub type Draw = fn(&mut ChaCha8Rng) -> Option<Case>;

/// Draws cases until `configs` usable ones have been checked.
pub fn run(name: &'static str, configs: usize, seed: u64, draw: Draw) -> Summary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = Summary {
        name,
        configs: 0,
        redrawn: 0,
        worst: 0.0,
        failures: 0,
    };
    while summary.configs < configs {
        let Some(case) = draw(&mut rng) else {
            summary.redrawn += 1;
            assert!(summary.redrawn < 100 * configs, "{name}: generator keeps landing on kinks");
            continue;
        };
        let f = |p: &Params| (case.eval)(p).0;
        let n: Vec<f64> = numeric_gradient(&case.params, &f).concat();
        // The central difference is off by about (D(h) − D(2h)) / 3. Points
        // where that alone approaches the tolerance are too curved for the
        // step; this screen never looks at the analytic gradient.
        let n2: Vec<f64> = numeric_gradient_with(&case.params, &f, 2.0 * STEP).concat();
        if relative_error(&n, &n2) / 3.0 > TOLERANCE / 4.0 {
            summary.redrawn += 1;
            continue;
        }
        let a: Vec<f64> = (case.eval)(&case.params).1.concat();
        let err = relative_error(&a, &n);
        summary.worst = summary.worst.max(err);
        if !(err < TOLERANCE) {
            summary.failures += 1;
        }
        summary.configs += 1;
    }
    summary
}

fn normal(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            (z * scale) as f32
        })
        .collect()
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

fn mat(rows: usize, cols: usize, v: &[f32]) -> Matrix {
    Matrix::from_vec(rows, cols, v.to_vec()).unwrap()
}

fn sq(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        / a.len() as f64
}

/// `P` classes of `K` samples each, class-major, shuffled.
fn class_labels(rng: &mut ChaCha8Rng, p: usize, k: usize) -> Vec<CliqueId> {
    let mut labels: Vec<CliqueId> = (0..p * k).map(|i| CliqueId((i / k) as u32)).collect();
    labels.shuffle(rng);
    labels
}

fn pearson(a: &[f32], b: &[f32]) -> f64 {
    let (a, b) = (to_f64(a), to_f64(b));
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(&b) {
        ab += (x - ma) * (y - mb);
        aa += (x - ma) * (x - ma);
        bb += (y - mb) * (y - mb);
    }
    ab / (aa * bb).sqrt()
}

pub fn triplet(rng: &mut ChaCha8Rng) -> Option<Case> {
    let (p, k, d) = (rng.random_range(2..=3), rng.random_range(2..=3), rng.random_range(2..=6));
    let n = p * k;
    let labels = class_labels(rng, p, k);
    let margin = [0.2, 0.5, 1.0][rng.random_range(0..3)];
    let emb = normal(rng, n * d, 1.0);
    for a in 0..n {
        let row = |i: usize| &emb[i * d..(i + 1) * d];
        let mut pos: Vec<f64> = (0..n).filter(|&j| j != a && labels[j] == labels[a]).map(|j| sq(row(a), row(j))).collect();
        let mut neg: Vec<f64> = (0..n).filter(|&j| labels[j] != labels[a]).map(|j| sq(row(a), row(j))).collect();
        pos.sort_by(|x, y| y.total_cmp(x));
        neg.sort_by(f64::total_cmp);
        if pos.len() > 1 && pos[0] - pos[1] < KINK_MARGIN || neg[1] - neg[0] < KINK_MARGIN {
            return None;
        }
        if (pos[0] - neg[0] + margin).abs() < KINK_MARGIN {
            return None;
        }
    }
    Some(Case {
        params: vec![emb],
        eval: Box::new(move |ps| {
            let out = triplet_loss(&mat(n, d, &ps[0]), &labels, margin).unwrap();
            (out.value, vec![to_f64(out.embeddings.as_slice())])
        }),
    })
}

fn proxy_setup(rng: &mut ChaCha8Rng) -> (usize, usize, usize, Vec<CliqueId>, Vec<CliqueId>) {
    let c = rng.random_range(2..=5);
    let n = rng.random_range(1..=8);
    let d = rng.random_range(2..=6);
    let ids: Vec<CliqueId> = (0..c as u32).map(|i| CliqueId(10 + i)).collect();
    let labels = (0..n).map(|_| ids[rng.random_range(0..c)]).collect();
    (c, n, d, ids, labels)
}

pub fn proxynca(rng: &mut ChaCha8Rng) -> Option<Case> {
    let (c, n, d, ids, labels) = proxy_setup(rng);
    let emb = normal(rng, n * d, 1.0);
    let prox = normal(rng, c * d, 1.0);
    Some(Case {
        params: vec![emb, prox],
        eval: Box::new(move |ps| {
            let bank = ProxyBank::new(mat(c, d, &ps[1]), ids.clone()).unwrap();
            let out = proxynca_loss(&mat(n, d, &ps[0]), &labels, &bank).unwrap();
            (out.value, vec![to_f64(out.embeddings.as_slice()), to_f64(out.proxies.unwrap().as_slice())])
        }),
    })
}

pub fn normalized_softmax(rng: &mut ChaCha8Rng) -> Option<Case> {
    let (c, n, d, ids, labels) = proxy_setup(rng);
    let temperature = [0.05, 0.1, 0.5][rng.random_range(0..3)];
    // norms well above the probe step keep the angular step small
    let emb = normal(rng, n * d, 4.0);
    let prox = normal(rng, c * d, 4.0);
    let norm_ok = |v: &[f32]| v.chunks(d).all(|r| r.iter().map(|x| x * x).sum::<f32>().sqrt() > 2.0);
    if !norm_ok(&emb) || !norm_ok(&prox) {
        return None;
    }
    Some(Case {
        params: vec![emb, prox],
        eval: Box::new(move |ps| {
            let bank = ProxyBank::new(mat(c, d, &ps[1]), ids.clone()).unwrap();
            let out = normalized_softmax_loss(&mat(n, d, &ps[0]), &labels, &bank, temperature).unwrap();
            (out.value, vec![to_f64(out.embeddings.as_slice()), to_f64(out.proxies.unwrap().as_slice())])
        }),
    })
}

pub fn group(rng: &mut ChaCha8Rng) -> Option<Case> {
    let (p, k, d) = (rng.random_range(2..=3), rng.random_range(2..=3), rng.random_range(4..=8));
    let n = p * k;
    let labels = class_labels(rng, p, k);
    let iterations = rng.random_range(1..=3);
    let emb = normal(rng, n * d, 1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if pearson(&emb[i * d..(i + 1) * d], &emb[j * d..(j + 1) * d]).abs() < KINK_MARGIN {
                return None;
            }
        }
    }
    Some(Case {
        params: vec![emb],
        eval: Box::new(move |ps| {
            let out = group_loss(&mat(n, d, &ps[0]), &labels, None, &GroupConfig { iterations }).unwrap();
            (out.value, vec![to_f64(out.embeddings.as_slice())])
        }),
    })
}

pub fn distance_matching(rng: &mut ChaCha8Rng) -> Option<Case> {
    let n = rng.random_range(2..=6);
    let (ds, dt) = (rng.random_range(2..=5), rng.random_range(3..=8));
    let student = normal(rng, n * ds, 1.0);
    let teacher = normal(rng, n * dt, 1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let s = sq(&student[i * ds..(i + 1) * ds], &student[j * ds..(j + 1) * ds]);
            let t = sq(&teacher[i * dt..(i + 1) * dt], &teacher[j * dt..(j + 1) * dt]);
            if (s - t).abs() < KINK_MARGIN {
                return None;
            }
        }
    }
    let t = mat(n, dt, &teacher);
    Some(Case {
        params: vec![student],
        eval: Box::new(move |ps| {
            let out = distance_matching_loss(&mat(n, ds, &ps[0]), &t).unwrap();
            (out.value, vec![to_f64(out.embeddings.as_slice())])
        }),
    })
}

/// Davies–Bouldin ratios for every batch class, recomputed from scratch.
fn db_ratios(emb: &[f32], labels: &[CliqueId], ds: usize, proj: &[Vec<f64>], classes: &[CliqueId]) -> Vec<Vec<f64>> {
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    let sigma: Vec<f64> = classes
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == *c).collect();
            members
                .iter()
                .map(|&i| d(&to_f64(&emb[i * ds..(i + 1) * ds]), &proj[k]))
                .sum::<f64>()
                / members.len() as f64
        })
        .collect();
    (0..classes.len())
        .map(|i| {
            (0..classes.len())
                .filter(|&j| j != i)
                .map(|j| (sigma[i] + sigma[j]) / (d(&proj[i], &proj[j]) + 1e-8))
                .collect()
        })
        .collect()
}

pub fn db_cluster(rng: &mut ChaCha8Rng) -> Option<Case> {
    let c = rng.random_range(2..=4);
    let (ds, dt) = (rng.random_range(2..=4), rng.random_range(2..=5));
    let ids: Vec<CliqueId> = (0..c as u32).map(CliqueId).collect();
    let mut labels: Vec<CliqueId> = Vec::new();
    for &id in &ids {
        for _ in 0..rng.random_range(1..=3) {
            labels.push(id);
        }
    }
    labels.shuffle(rng);
    let n = labels.len();
    let centroids = normal(rng, c * dt, 1.0);
    let emb = normal(rng, n * ds, 1.0);
    let w = normal(rng, ds * dt, 0.7);
    let b = normal(rng, ds, 0.1);

    let classes: Vec<CliqueId> = {
        let mut seen = Vec::new();
        for l in &labels {
            if !seen.contains(l) {
                seen.push(*l);
            }
        }
        seen
    };
    let proj: Vec<Vec<f64>> = classes
        .iter()
        .map(|cl| {
            let src = &centroids[cl.0 as usize * dt..(cl.0 as usize + 1) * dt];
            (0..ds)
                .map(|o| f64::from(b[o]) + (0..dt).map(|t| f64::from(w[o * dt + t]) * f64::from(src[t])).sum::<f64>())
                .collect()
        })
        .collect();
    for row in db_ratios(&emb, &labels, ds, &proj, &classes) {
        let mut r = row.clone();
        r.sort_by(|x, y| y.total_cmp(x));
        if r.len() > 1 && r[0] - r[1] < KINK_MARGIN * r[0] {
            return None;
        }
    }
    let cent = mat(c, dt, &centroids);
    Some(Case {
        params: vec![emb, w, b],
        eval: Box::new(move |ps| {
            let bank = CentroidBank::new(cent.clone(), ids.clone(), mat(ds, dt, &ps[1]), ps[2].clone()).unwrap();
            let out = db_cluster_loss(&mat(n, ds, &ps[0]), &labels, &bank).unwrap();
            let proj = out.projection.unwrap();
            (
                out.value,
                vec![to_f64(out.embeddings.as_slice()), to_f64(proj.weight.as_slice()), to_f64(&proj.bias)],
            )
        }),
    })
}

pub fn linear(rng: &mut ChaCha8Rng) -> Option<Case> {
    let (n, d_in, d_out) = (rng.random_range(1..=6), rng.random_range(1..=6), rng.random_range(1..=6));
    let upstream = to_f64(&normal(rng, n * d_out, 1.0));
    let params = vec![normal(rng, d_out * d_in, 1.0), normal(rng, d_out, 1.0), normal(rng, n * d_in, 1.0)];
    let r32: Vec<f32> = upstream.iter().map(|&v| v as f32).collect();
    let r = upstream;
    Some(Case {
        params,
        eval: Box::new(move |ps| {
            // shadow: Σ R ⊙ (X·Wᵀ + b)
            let (w, b, x) = (to_f64(&ps[0]), to_f64(&ps[1]), to_f64(&ps[2]));
            let mut value = 0.0;
            for s in 0..n {
                for o in 0..d_out {
                    let y = b[o] + (0..d_in).map(|i| w[o * d_in + i] * x[s * d_in + i]).sum::<f64>();
                    value += f64::from(r32[s * d_out + o]) * y;
                }
            }
            let (_, cache) = linear_forward(&mat(d_out, d_in, &ps[0]), Some(&ps[1]), &mat(n, d_in, &ps[2])).unwrap();
            let g = linear_backward(&mat(n, d_out, &r32), &cache).unwrap();
            let _ = &r;
            (
                value,
                vec![to_f64(g.weight.as_slice()), to_f64(&g.bias.unwrap()), to_f64(g.input.as_slice())],
            )
        }),
    })
}

fn batchnorm_case(rng: &mut ChaCha8Rng, mode: Mode) -> Option<Case> {
    let (n, d) = (rng.random_range(2..=8), rng.random_range(1..=5));
    let x = normal(rng, n * d, 1.5);
    let gamma = normal(rng, d, 1.0);
    let beta = normal(rng, d, 1.0);
    let running_mean = normal(rng, d, 0.5);
    let running_var: Vec<f32> = normal(rng, d, 1.0).iter().map(|v| 0.5 + v.abs()).collect();
    if mode == Mode::Train {
        // a near-constant column makes the normalization ill-conditioned
        for j in 0..d {
            let col: Vec<f64> = (0..n).map(|s| f64::from(x[s * d + j])).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            if var < 0.05 {
                return None;
            }
        }
    }
    let r32 = normal(rng, n * d, 1.0);
    Some(Case {
        params: vec![gamma, beta, x],
        eval: Box::new(move |ps| {
            let (gamma, beta, x) = (to_f64(&ps[0]), to_f64(&ps[1]), to_f64(&ps[2]));
            let eps = 1e-5f64;
            let mut value = 0.0;
            for j in 0..d {
                let col: Vec<f64> = (0..n).map(|s| x[s * d + j]).collect();
                let (mean, var) = match mode {
                    Mode::Train => {
                        let m = col.iter().sum::<f64>() / n as f64;
                        (m, col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64)
                    }
                    Mode::Eval => (f64::from(running_mean[j]), f64::from(running_var[j])),
                };
                for s in 0..n {
                    let y = gamma[j] * (col[s] - mean) / (var + eps).sqrt() + beta[j];
                    value += f64::from(r32[s * d + j]) * y;
                }
            }
            let mut bn = BatchNorm::new(d);
            bn.gamma = ps[0].clone();
            bn.beta = ps[1].clone();
            bn.running_mean = running_mean.clone();
            bn.running_var = running_var.clone();
            bn.mode = mode;
            let (_, cache) = bn.forward(&mat(n, d, &ps[2])).unwrap();
            let g = BatchNorm::backward(&mat(n, d, &r32), &cache).unwrap();
            (value, vec![to_f64(&g.gamma), to_f64(&g.beta), to_f64(g.input.as_slice())])
        }),
    })
}

pub fn batchnorm_train(rng: &mut ChaCha8Rng) -> Option<Case> {
    batchnorm_case(rng, Mode::Train)
}

pub fn batchnorm_eval(rng: &mut ChaCha8Rng) -> Option<Case> {
    batchnorm_case(rng, Mode::Eval)
}

/// Every component with its generator.
pub const COMPONENTS: [(&str, Draw); 9] = [
    ("triplet", triplet),
    ("proxy-nca", proxynca),
    ("normalized-softmax", normalized_softmax),
    ("group", group),
    ("distance-matching", distance_matching),
    ("cluster-matching", db_cluster),
    ("linear", linear),
    ("batchnorm-train", batchnorm_train),
    ("batchnorm-eval", batchnorm_eval),
];
