//! Brute-force retrieval: pairwise distances, MAP / MR1 evaluation with noise
//! distractors, and the single-query latency benchmark.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingSet;
use crate::error::{dim_err, Error, Result};
use crate::tensor::{dot, squared_dist_raw, Matrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// `(1/d)·‖a − b‖²`
    #[default]
    SquaredEuclidean,
    /// `1 − cos(a, b)`
    Cosine,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared-euclidean" | "euclidean" => Ok(Self::SquaredEuclidean),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

/// Row-major |Q|×|R| distances kept in 64-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

/// Precomputed per-row state for a metric, so the inner loop stays branch-free.
struct Prepared<'a> {
    vectors: &'a Matrix,
    inv_norms: Option<Vec<f64>>,
}

impl<'a> Prepared<'a> {
    fn new(vectors: &'a Matrix, metric: Metric) -> Result<Self> {
        let inv_norms = match metric {
            Metric::SquaredEuclidean => None,
            Metric::Cosine => Some(
                vectors
                    .row_iter()
                    .enumerate()
                    .map(|(i, r)| {
                        let n = dot(r, r).sqrt();
                        if n == 0.0 {
                            Err(Error::Degenerate(format!("row {i} has zero norm")))
                        } else {
                            Ok(1.0 / n)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        Ok(Self { vectors, inv_norms })
    }

    #[inline]
    fn distance(&self, i: usize, other: &Prepared<'_>, j: usize) -> f64 {
        let (a, b) = (self.vectors.row(i), other.vectors.row(j));
        match (&self.inv_norms, &other.inv_norms) {
            (Some(na), Some(nb)) => 1.0 - dot(a, b) * (na[i] * nb[j]),
            _ => squared_dist_raw(a, b),
        }
    }
}

pub fn pairwise_distances(queries: &Matrix, refs: &Matrix, metric: Metric) -> Result<DistanceMatrix> {
    if queries.cols() != refs.cols() {
        return Err(dim_err(format!(
            "queries have {} dims, references {}",
            queries.cols(),
            refs.cols()
        )));
    }
    let q = Prepared::new(queries, metric)?;
    let r = Prepared::new(refs, metric)?;
    let cols = refs.rows();
    let mut data = vec![0.0f64; queries.rows() * cols];
    if cols > 0 {
        data.par_chunks_mut(cols).enumerate().for_each(|(i, row)| {
            for (j, out) in row.iter_mut().enumerate() {
                *out = q.distance(i, &r, j);
            }
        });
    }
    Ok(DistanceMatrix {
        rows: queries.rows(),
        cols,
        data,
    })
}

/// Average precision from the 1-based ranks of every relevant item.
pub fn average_precision_from_ranks(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let sum: f64 = sorted
        .iter()
        .enumerate()
        .map(|(k, &r)| (k + 1) as f64 / r as f64)
        .sum();
    sum / sorted.len() as f64
}

/// Average precision of a ranked relevance pattern, assuming every relevant
/// item appears in the pattern.
pub fn average_precision(relevance: &[bool]) -> f64 {
    let ranks: Vec<usize> = relevance
        .iter()
        .enumerate()
        .filter_map(|(i, &rel)| rel.then_some(i + 1))
        .collect();
    average_precision_from_ranks(&ranks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub id: String,
    pub average_precision: f64,
    pub first_relevant_rank: usize,
    pub relevant: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub distance_secs: f64,
    /// Time spent ranking candidates.
    pub sort_secs: f64,
    pub total_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub metric: Metric,
    pub map: f64,
    pub mr1: f64,
    pub queries: usize,
    pub candidates: usize,
    /// Labeled items whose clique has no other member in the set.
    pub skipped_queries: usize,
    pub per_query: Vec<QueryResult>,
    #[serde(skip)]
    pub timing: Timing,
}

impl RetrievalReport {
    pub fn per_query_ap(&self) -> Vec<f64> {
        self.per_query.iter().map(|q| q.average_precision).collect()
    }

    /// JSON without wall-clock fields, byte-stable across identical runs.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "metric      {:?}", self.metric);
        let _ = writeln!(s, "queries     {}", self.queries);
        let _ = writeln!(s, "candidates  {}", self.candidates);
        if self.skipped_queries > 0 {
            let _ = writeln!(s, "skipped     {}", self.skipped_queries);
        }
        let _ = writeln!(s, "MAP         {:.4}", self.map);
        let _ = writeln!(s, "MR1         {:.2}", self.mr1);
        let _ = writeln!(
            s,
            "time        {:.3}s (distances {:.3}s, ranking {:.3}s)",
            self.timing.total_secs, self.timing.distance_secs, self.timing.sort_secs
        );
        s
    }

    pub fn write_per_query_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "average_precision", "first_relevant_rank", "relevant"])?;
        for q in &self.per_query {
            w.write_record([
                q.id.clone(),
                q.average_precision.to_string(),
                q.first_relevant_rank.to_string(),
                q.relevant.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct QueryOutcome {
    result: Option<QueryResult>,
    distance: Duration,
    rank: Duration,
}

/// Every labeled item queries every other item; noise items are candidates
/// only. Candidates are ordered by distance, ties by row index.
pub fn evaluate(set: &EmbeddingSet, metric: Metric) -> Result<RetrievalReport> {
    let start = Instant::now();
    let vectors = set.vectors();
    let prepared = Prepared::new(vectors, metric)?;
    let labels = set.labels();
    let n = set.len();

    let queries: Vec<usize> = (0..n).filter(|&i| labels[i].is_some()).collect();
    let outcomes: Vec<QueryOutcome> = queries
        .par_iter()
        .map(|&q| {
            let t0 = Instant::now();
            let dists: Vec<f64> = (0..n).map(|j| prepared.distance(q, &prepared, j)).collect();
            let t1 = Instant::now();

            let label = labels[q];
            let mut relevant: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != q && labels[j] == label)
                .map(|j| (dists[j], j))
                .collect();
            if relevant.is_empty() {
                return QueryOutcome {
                    result: None,
                    distance: t1 - t0,
                    rank: t1.elapsed(),
                };
            }
            relevant.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            // ahead[p]: non-relevant candidates ordered before relevant[p] but not before relevant[p-1]
            let mut ahead = vec![0usize; relevant.len() + 1];
            for j in 0..n {
                if j == q || labels[j] == label {
                    continue;
                }
                let key = (dists[j], j);
                let p = relevant.partition_point(|r| {
                    r.0.total_cmp(&key.0).then(r.1.cmp(&key.1)).is_lt()
                });
                ahead[p] += 1;
            }
            let mut before = 0usize;
            let ranks: Vec<usize> = (0..relevant.len())
                .map(|k| {
                    before += ahead[k];
                    k + 1 + before
                })
                .collect();
            QueryOutcome {
                result: Some(QueryResult {
                    id: set.items()[q].id.clone(),
                    average_precision: average_precision_from_ranks(&ranks),
                    first_relevant_rank: ranks[0],
                    relevant: ranks.len(),
                }),
                distance: t1 - t0,
                rank: t1.elapsed(),
            }
        })
        .collect();

    let mut timing = Timing::default();
    let mut per_query = Vec::with_capacity(outcomes.len());
    let mut skipped = 0;
    for o in outcomes {
        timing.distance_secs += o.distance.as_secs_f64();
        timing.sort_secs += o.rank.as_secs_f64();
        match o.result {
            Some(r) => per_query.push(r),
            None => skipped += 1,
        }
    }
    if per_query.is_empty() {
        return Err(Error::Evaluation(
            "no labeled item has another member of its clique in the set".into(),
        ));
    }
    let nq = per_query.len() as f64;
    let map = per_query.iter().map(|q| q.average_precision).sum::<f64>() / nq;
    let mr1 = per_query.iter().map(|q| q.first_relevant_rank as f64).sum::<f64>() / nq;
    timing.total_secs = start.elapsed().as_secs_f64();
    Ok(RetrievalReport {
        metric,
        map,
        mr1,
        queries: per_query.len(),
        candidates: n.saturating_sub(1),
        skipped_queries: skipped,
        per_query,
        timing,
    })
}

/// Distances from one query to every reference row, single-threaded.
pub fn query_distances(query: &[f32], refs: &Matrix) -> Result<Vec<f64>> {
    if query.len() != refs.cols() {
        return Err(dim_err(format!(
            "query has {} dims, references {}",
            query.len(),
            refs.cols()
        )));
    }
    Ok(refs.row_iter().map(|r| squared_dist_raw(query, r)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub dim: usize,
    pub median_secs: f64,
    pub min_secs: f64,
    /// Median time relative to the smallest benchmarked dimension.
    pub ratio: f64,
    /// Sum of all distances from the last repeat.
    pub checksum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n_refs: usize,
    pub repeats: usize,
    pub seed: u64,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn table(&self) -> String {
        let mut s = format!(
            "{} references, median of {} runs\n{:>8} {:>12} {:>12} {:>8}\n",
            self.n_refs, self.repeats, "d", "median (s)", "min (s)", "ratio"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>8} {:>12.5} {:>12.5} {:>8.2}",
                r.dim, r.median_secs, r.min_secs, r.ratio
            );
        }
        s
    }
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Times one query against `n_refs` uniform random references per dimension.
pub fn bench_retrieval(n_refs: usize, dims: &[usize], repeats: usize, seed: u64) -> Result<BenchReport> {
    if n_refs == 0 || repeats == 0 || dims.is_empty() || dims.contains(&0) {
        return Err(Error::Config(
            "benchmark needs n_refs >= 1, repeats >= 1 and non-zero dims".into(),
        ));
    }
    let mut rows = Vec::with_capacity(dims.len());
    for &d in dims {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ d as u64);
        let refs_data: Vec<f32> = (0..n_refs * d).map(|_| rng.random::<f32>()).collect();
        let refs = Matrix::from_vec(n_refs, d, refs_data)?;
        let query: Vec<f32> = (0..d).map(|_| rng.random::<f32>()).collect();
        let mut times = Vec::with_capacity(repeats);
        let mut checksum = 0.0;
        for _ in 0..repeats {
            let t = Instant::now();
            let dists = query_distances(&query, &refs)?;
            times.push(t.elapsed().as_secs_f64());
            checksum = std::hint::black_box(dists).iter().sum();
        }
        let min_secs = times.iter().cloned().fold(f64::INFINITY, f64::min);
        rows.push(BenchRow {
            dim: d,
            median_secs: median(&mut times),
            min_secs,
            ratio: 0.0,
            checksum,
        });
    }
    let base = rows
        .iter()
        .min_by_key(|r| r.dim)
        .map(|r| r.median_secs)
        .unwrap_or(1.0);
    for r in &mut rows {
        r.ratio = r.median_secs / base;
    }
    Ok(BenchReport {
        n_refs,
        repeats,
        seed,
        rows,
    })
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Item;
    use crate::tensor::squared_dist;

    fn set(rows: &[[f32; 2]], labels: &[Option<u32>]) -> EmbeddingSet {
        let items = labels
            .iter()
            .enumerate()
            .map(|(i, l)| Item::new(format!("i{i}"), *l))
            .collect();
        EmbeddingSet::new(items, Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn ap_hand_case() {
        assert!((average_precision(&[true, false, true]) - 0.833_333_333_333).abs() < 1e-9);
        assert_eq!(average_precision(&[true, true]), 1.0);
    }

    #[test]
    fn single_vector_distance() {
        let m = Matrix::from_rows(&[[0.3f32, 0.7]]).unwrap();
        let d = pairwise_distances(&m, &m, Metric::SquaredEuclidean).unwrap();
        assert_eq!(d.data, vec![0.0]);
    }

    #[test]
    fn hand_pairs_match_scalar_calls() {
        let q = Matrix::from_rows(&[[1.0f32, 0.0], [0.5, -1.0]]).unwrap();
        let r = Matrix::from_rows(&[[0.0f32, 1.0], [2.0, 2.0]]).unwrap();
        let d = pairwise_distances(&q, &r, Metric::SquaredEuclidean).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(d.get(i, j), squared_dist(q.row(i), r.row(j)).unwrap());
            }
        }
        assert!(pairwise_distances(&q, &Matrix::zeros(1, 3), Metric::Cosine).is_err());
    }

    #[test]
    fn perfect_retrieval() {
        let s = set(
            &[[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0], [9.0, -9.0]],
            &[Some(0), Some(0), Some(1), Some(1), None],
        );
        let r = evaluate(&s, Metric::SquaredEuclidean).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.mr1, 1.0);
        assert_eq!(r.queries, 4);
    }

    #[test]
    fn noise_is_never_queried_and_ties_break_by_index() {
        // Query 0: candidates 1 (noise) and 2 (relevant) tie at the same distance.
        let s = set(
            &[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            &[Some(0), None, Some(0)],
        );
        let r = evaluate(&s, Metric::SquaredEuclidean).unwrap();
        assert_eq!(r.queries, 2);
        let q0 = &r.per_query[0];
        assert_eq!(q0.first_relevant_rank, 2);
        assert_eq!(q0.average_precision, 0.5);
    }

    #[test]
    fn singleton_cliques_are_skipped() {
        let s = set(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], &[Some(0), Some(0), Some(1)]);
        let r = evaluate(&s, Metric::SquaredEuclidean).unwrap();
        assert_eq!(r.skipped_queries, 1);
        assert_eq!(r.queries, 2);
        let lonely = set(&[[0.0, 0.0], [1.0, 0.0]], &[Some(0), None]);
        assert!(matches!(evaluate(&lonely, Metric::SquaredEuclidean), Err(Error::Evaluation(_))));
    }

    #[test]
    fn bench_is_pure_in_repeats() {
        let a = bench_retrieval(500, &[8, 32], 1, 3).unwrap();
        let b = bench_retrieval(500, &[8, 32], 5, 3).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.checksum, y.checksum);
        }
        assert_eq!(a.rows[0].ratio, 1.0);
    }
}
