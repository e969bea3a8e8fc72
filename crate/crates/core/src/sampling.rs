//! Sampling model and the sampling operator.
//!
//! A [`SamplingSet`] stores the multiset of observed locations as
//! coordinate-sorted (row-major) unique locations with multiplicities. The
//! operator `P_Omega` scales each sampled entry by its multiplicity, so it is
//! self-adjoint but not idempotent once a location is drawn twice.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::LowRankMatrix;
use crate::sparse::SparseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// i.i.d. uniform draws; locations may repeat.
    WithReplacement,
    /// `m` distinct locations chosen uniformly.
    WithoutReplacement,
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingMode::WithReplacement => "with_replacement",
            SamplingMode::WithoutReplacement => "without_replacement",
        })
    }
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "with_replacement" | "with" => Ok(SamplingMode::WithReplacement),
            "without_replacement" | "without" => Ok(SamplingMode::WithoutReplacement),
            other => Err(Error::InvalidArgument(format!(
                "unknown sampling mode {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingSet {
    n_rows: usize,
    n_cols: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    multiplicity: Vec<u32>,
    total: usize,
    mode: SamplingMode,
}

impl SamplingSet {
    /// Aggregates raw draws into unique locations with multiplicities.
    pub fn from_draws(
        n_rows: usize,
        n_cols: usize,
        draws: &[(usize, usize)],
        mode: SamplingMode,
    ) -> Result<Self> {
        if let Some(d) = draws.iter().find(|d| d.0 >= n_rows || d.1 >= n_cols) {
            return Err(Error::InvalidArgument(format!(
                "draw ({}, {}) outside {n_rows}x{n_cols}",
                d.0, d.1
            )));
        }
        let mut sorted = draws.to_vec();
        sorted.sort_unstable();
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        let mut multiplicity: Vec<u32> = Vec::new();
        for (i, j) in sorted {
            if rows.last() == Some(&i) && cols.last() == Some(&j) {
                *multiplicity.last_mut().unwrap() += 1;
            } else {
                rows.push(i);
                cols.push(j);
                multiplicity.push(1);
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            rows,
            cols,
            multiplicity,
            total: draws.len(),
            mode,
        })
    }

    /// Builds from explicit `(i, j, multiplicity)` triplets; locations must be
    /// unique and multiplicities positive.
    pub fn from_entries(
        n_rows: usize,
        n_cols: usize,
        entries: &[(usize, usize, u32)],
        mode: SamplingMode,
    ) -> Result<Self> {
        let mut sorted = entries.to_vec();
        sorted.sort_unstable_by_key(|e| (e.0, e.1));
        for w in sorted.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(Error::InvalidArgument(format!(
                    "location ({}, {}) listed twice",
                    w[0].0, w[0].1
                )));
            }
        }
        for e in &sorted {
            if e.0 >= n_rows || e.1 >= n_cols {
                return Err(Error::InvalidArgument(format!(
                    "location ({}, {}) outside {n_rows}x{n_cols}",
                    e.0, e.1
                )));
            }
            if e.2 == 0 {
                return Err(Error::InvalidArgument(
                    "multiplicity must be at least 1".into(),
                ));
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            rows: sorted.iter().map(|e| e.0).collect(),
            cols: sorted.iter().map(|e| e.1).collect(),
            multiplicity: sorted.iter().map(|e| e.2).collect(),
            total: sorted.iter().map(|e| e.2 as usize).sum(),
            mode,
        })
    }

    /// Every cell exactly once.
    pub fn full(n_rows: usize, n_cols: usize) -> Self {
        let mut rows = Vec::with_capacity(n_rows * n_cols);
        let mut cols = Vec::with_capacity(n_rows * n_cols);
        for i in 0..n_rows {
            for j in 0..n_cols {
                rows.push(i);
                cols.push(j);
            }
        }
        Self {
            n_rows,
            n_cols,
            multiplicity: vec![1; rows.len()],
            total: rows.len(),
            rows,
            cols,
            mode: SamplingMode::WithoutReplacement,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    /// Number of distinct locations.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Total number of draws, counting multiplicity.
    pub fn m(&self) -> usize {
        self.total
    }

    /// `m / (n_rows * n_cols)`.
    pub fn p(&self) -> f64 {
        self.total as f64 / (self.n_rows as f64 * self.n_cols as f64)
    }

    /// More draws than cells, only possible with replacement.
    pub fn is_oversampled(&self) -> bool {
        self.p() > 1.0
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn multiplicities(&self) -> &[u32] {
        &self.multiplicity
    }

    pub fn max_repetition(&self) -> u32 {
        self.multiplicity.iter().copied().max().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        self.rows
            .iter()
            .zip(&self.cols)
            .zip(&self.multiplicity)
            .map(|((&i, &j), &c)| (i, j, c))
    }

    /// Index of location `(i, j)` in the deduplicated ordering.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.rows.partition_point(|&r| r < i);
        let end = self.rows.partition_point(|&r| r <= i);
        self.cols[start..end]
            .binary_search(&j)
            .ok()
            .map(|k| start + k)
    }

    /// The draws with multiplicity expanded, in row-major order.
    pub fn expanded_draws(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.total);
        for (i, j, c) in self.iter() {
            out.extend(std::iter::repeat_n((i, j), c as usize));
        }
        out
    }

    /// Sparse matrix on this pattern with `values[k] * multiplicity[k]`.
    pub(crate) fn weighted_sparse(&self, values: &[f64], scale: f64) -> SparseMatrix {
        debug_assert_eq!(values.len(), self.len());
        let vals = values
            .iter()
            .zip(&self.multiplicity)
            .map(|(v, &c)| scale * c as f64 * v)
            .collect();
        SparseMatrix::from_sorted_parts(
            self.n_rows,
            self.n_cols,
            self.rows.clone(),
            self.cols.clone(),
            vals,
        )
    }

    /// `sum_k multiplicity_k * a_k * b_k`, i.e. `<A, P_Omega(B)>` for two
    /// matrices given by their values on this pattern.
    pub fn weighted_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.multiplicity
            .iter()
            .zip(a.iter().zip(b))
            .map(|(&c, (x, y))| c as f64 * x * y)
            .sum()
    }
}

/// `m` i.i.d. uniform draws over an `n x n` grid.
pub fn sample_with_replacement(n: usize, m: usize, seed: u64) -> Result<SamplingSet> {
    sample_uniform(n, n, m, SamplingMode::WithReplacement, seed)
}

/// `m` distinct cells of an `n x n` grid, uniformly at random.
pub fn sample_without_replacement(n: usize, m: usize, seed: u64) -> Result<SamplingSet> {
    sample_uniform(n, n, m, SamplingMode::WithoutReplacement, seed)
}

pub fn sample_uniform(
    n_rows: usize,
    n_cols: usize,
    m: usize,
    mode: SamplingMode,
    seed: u64,
) -> Result<SamplingSet> {
    if n_rows == 0 || n_cols == 0 || m == 0 {
        return Err(Error::InvalidArgument(
            "sampling needs a nonempty grid and at least one draw".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(usize, usize)> = match mode {
        SamplingMode::WithReplacement => (0..m)
            .map(|_| {
                let i = rng.random_range(0..n_rows);
                let j = rng.random_range(0..n_cols);
                (i, j)
            })
            .collect(),
        SamplingMode::WithoutReplacement => {
            let cells = n_rows * n_cols;
            if m > cells {
                return Err(Error::InvalidArgument(format!(
                    "cannot draw {m} distinct cells from {cells}"
                )));
            }
            rand::seq::index::sample(&mut rng, cells, m)
                .into_iter()
                .map(|k| (k / n_cols, k % n_cols))
                .collect()
        }
    };
    SamplingSet::from_draws(n_rows, n_cols, &draws, mode)
}

/// Random partition of the expanded draws into `groups + 1` groups of
/// `floor(m / (groups + 1))` draws, with the remainder added to group 0.
pub fn partition(s: &SamplingSet, groups: usize, seed: u64) -> Result<Vec<SamplingSet>> {
    let parts = groups + 1;
    if parts > s.m() {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} draws into {parts} nonempty groups",
            s.m()
        )));
    }
    let mut draws = s.expanded_draws();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draws.shuffle(&mut rng);
    let base = draws.len() / parts;
    let first = base + draws.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for g in 0..parts {
        let len = if g == 0 { first } else { base };
        out.push(SamplingSet::from_draws(
            s.n_rows,
            s.n_cols,
            &draws[start..start + len],
            s.mode,
        )?);
        start += len;
    }
    Ok(out)
}

/// Anything whose entries can be read off at sampled locations.
pub trait EntrySource {
    fn shape(&self) -> (usize, usize);

    /// Raw entries `Z_ij` at each deduplicated location of `s`, in order.
    fn entries_on(&self, s: &SamplingSet) -> Vec<f64>;
}

impl EntrySource for DMatrix<f64> {
    fn shape(&self) -> (usize, usize) {
        (self.nrows(), self.ncols())
    }

    fn entries_on(&self, s: &SamplingSet) -> Vec<f64> {
        s.rows()
            .iter()
            .zip(s.cols())
            .map(|(&i, &j)| self[(i, j)])
            .collect()
    }
}

impl EntrySource for SparseMatrix {
    fn shape(&self) -> (usize, usize) {
        SparseMatrix::shape(self)
    }

    fn entries_on(&self, s: &SamplingSet) -> Vec<f64> {
        s.rows()
            .iter()
            .zip(s.cols())
            .map(|(&i, &j)| self.get(i, j))
            .collect()
    }
}

impl EntrySource for LowRankMatrix {
    fn shape(&self) -> (usize, usize) {
        LowRankMatrix::shape(self)
    }

    fn entries_on(&self, s: &SamplingSet) -> Vec<f64> {
        factored_entries(&self.scaled_u().transpose(), &self.v().transpose(), s)
    }
}

/// Entries of `A B^T` on `s`, given `a_t = A^T` (`k x n_rows`) and
/// `b_t = B^T` (`k x n_cols`); each entry is a length-k dot product of
/// contiguous columns.
pub(crate) fn factored_entries(
    a_t: &DMatrix<f64>,
    b_t: &DMatrix<f64>,
    s: &SamplingSet,
) -> Vec<f64> {
    let k = a_t.nrows();
    debug_assert_eq!(b_t.nrows(), k);
    let a = a_t.as_slice();
    let b = b_t.as_slice();
    s.rows()
        .iter()
        .zip(s.cols())
        .map(|(&i, &j)| {
            dot(&a[i * k..(i + 1) * k], &b[j * k..(j + 1) * k])
        })
        .collect()
}

/// Dot product with four running sums, which lets the compiler vectorize.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    let mut acc = [0.0; 4];
    for (x, y) in ca.zip(cb) {
        for t in 0..4 {
            acc[t] += x[t] * y[t];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `P_Omega(Z)`: entry `(i, j)` of the result is `multiplicity(i, j) * Z_ij`.
pub fn apply_sampling(s: &SamplingSet, z: &impl EntrySource) -> Result<SparseMatrix> {
    check_shape(s.shape(), z.shape())?;
    let values = z.entries_on(s);
    Ok(s.weighted_sparse(&values, 1.0))
}

pub(crate) fn check_shape(expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected != found {
        return Err(Error::ShapeMismatch { expected, found });
    }
    Ok(())
}

/// Observed entries of the unknown matrix, one value per distinct location.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedData {
    sampling: SamplingSet,
    values: Vec<f64>,
}

impl ObservedData {
    pub fn new(sampling: SamplingSet, values: Vec<f64>) -> Result<Self> {
        if values.len() != sampling.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values for {} sampled locations",
                values.len(),
                sampling.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "observed values must be finite".into(),
            ));
        }
        Ok(Self { sampling, values })
    }

    /// Observes `x` on `sampling`.
    pub fn from_matrix(sampling: SamplingSet, x: &impl EntrySource) -> Result<Self> {
        check_shape(sampling.shape(), x.shape())?;
        let values = x.entries_on(&sampling);
        Self::new(sampling, values)
    }

    pub fn sampling(&self) -> &SamplingSet {
        &self.sampling
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        self.sampling.shape()
    }

    /// Same locations, replaced values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.sampling.clone(), values)
    }

    /// `||P_Omega(X)||_F`, counting multiplicity.
    pub fn observed_norm(&self) -> f64 {
        self.sampling
            .multiplicities()
            .iter()
            .zip(&self.values)
            .map(|(&c, v)| (c as f64 * v).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `scale * P_Omega(X)` as a sparse matrix.
    pub fn to_sparse(&self, scale: f64) -> SparseMatrix {
        self.sampling.weighted_sparse(&self.values, scale)
    }

    /// Splits into `groups + 1` disjoint observation sets (see [`partition`]).
    pub fn partition(&self, groups: usize, seed: u64) -> Result<Vec<ObservedData>> {
        partition(&self.sampling, groups, seed)?
            .into_iter()
            .map(|g| {
                let values = g
                    .iter()
                    .map(|(i, j, _)| {
                        let k = self
                            .sampling
                            .position(i, j)
                            .expect("group location is in parent");
                        self.values[k]
                    })
                    .collect();
                ObservedData::new(g, values)
            })
            .collect()
    }

    /// Text form: a header `n_rows n_cols m`, then one `i j multiplicity value`
    /// line per location with 1-based indices and round-trip exact values.
    pub fn write_text(&self, w: &mut impl Write) -> Result<()> {
        let s = &self.sampling;
        writeln!(w, "{} {} {}", s.n_rows(), s.n_cols(), s.m())?;
        for ((i, j, c), v) in s.iter().zip(&self.values) {
            writeln!(w, "{} {} {} {:e}", i + 1, j + 1, c, v)?;
        }
        Ok(())
    }

    /// Parses [`write_text`](Self::write_text) output. The sampling mode is
    /// not stored; it is inferred as with-replacement when any location repeats.
    pub fn read_text(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let (n_rows, n_cols, m) = loop {
            let Some((no, line)) = lines.next() else {
                return Err(Error::Parse {
                    line: 1,
                    message: "missing header".into(),
                });
            };
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(parse_err(no, "header must be `n_rows n_cols m`"));
            }
            break (
                parse_field::<usize>(f[0], no)?,
                parse_field::<usize>(f[1], no)?,
                parse_field::<usize>(f[2], no)?,
            );
        };
        let mut entries = Vec::new();
        let mut values = Vec::new();
        for (no, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(parse_err(no, "expected `i j multiplicity value`"));
            }
            let i = parse_field::<usize>(f[0], no)?;
            let j = parse_field::<usize>(f[1], no)?;
            if i == 0 || j == 0 {
                return Err(parse_err(no, "indices are 1-based"));
            }
            entries.push((i - 1, j - 1, parse_field::<u32>(f[2], no)?));
            values.push(parse_field::<f64>(f[3], no)?);
        }
        let mode = if entries.iter().any(|e| e.2 > 1) {
            SamplingMode::WithReplacement
        } else {
            SamplingMode::WithoutReplacement
        };
        // keep values aligned with the sorted order used by SamplingSet
        let mut order: Vec<usize> = (0..entries.len()).collect();
        order.sort_by_key(|&k| (entries[k].0, entries[k].1));
        let entries: Vec<_> = order.iter().map(|&k| entries[k]).collect();
        let values: Vec<_> = order.iter().map(|&k| values[k]).collect();
        let sampling = SamplingSet::from_entries(n_rows, n_cols, &entries, mode)?;
        if sampling.m() != m {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "header says m = {m}, multiplicities sum to {}",
                    sampling.m()
                ),
            });
        }
        Self::new(sampling, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_text(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_text(std::io::BufReader::new(f))
    }
}

fn parse_err(line_index: usize, message: &str) -> Error {
    Error::Parse {
        line: line_index + 1,
        message: message.into(),
    }
}

fn parse_field<T: FromStr>(s: &str, line_index: usize) -> Result<T> {
    s.parse()
        .map_err(|_| parse_err(line_index, &format!("cannot parse {s:?}")))
}

/// Incoherence and spikiness of a ground-truth matrix, plus the largest
/// repetition count in a sampling set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IncoherenceReport {
    /// Smallest `mu0` with `||P_U e_i||^2 <= mu0 r / n` and likewise for `V`.
    pub mu0: f64,
    /// Smallest `mu1` with `||X||_inf <= mu1 sqrt(r / n^2) ||X||`.
    pub mu1: f64,
    pub max_repetition: u32,
}

/// Row-norm based incoherence `(n / r) max_i ||U^{(i)}||^2` over both factors.
pub fn mu0_of(x: &LowRankMatrix) -> f64 {
    let r = x.rank() as f64;
    let max_row_sq = |f: &DMatrix<f64>| {
        (0..f.nrows())
            .map(|i| f.row(i).norm_squared())
            .fold(0.0, f64::max)
    };
    let mu_u = x.n_rows() as f64 / r * max_row_sq(x.u());
    let mu_v = x.n_cols() as f64 / r * max_row_sq(x.v());
    mu_u.max(mu_v)
}

/// Largest absolute entry, computed one row at a time.
pub fn max_abs_entry(x: &LowRankMatrix) -> f64 {
    let us = x.scaled_u();
    let vt = x.v().transpose();
    let mut best: f64 = 0.0;
    for i in 0..x.n_rows() {
        let row = us.row(i) * &vt;
        best = best.max(row.amax());
    }
    best
}

pub fn incoherence_report(x: &LowRankMatrix, s: &SamplingSet) -> Result<IncoherenceReport> {
    if x.rank() == 0 || x.spectral_norm() <= 0.0 {
        return Err(Error::DegenerateRank {
            sigma_min: x.sigma().iter().copied().fold(0.0, f64::min),
        });
    }
    let r = x.rank() as f64;
    let cells = (x.n_rows() as f64 * x.n_cols() as f64).sqrt();
    let mu1 = max_abs_entry(x) * cells / (r.sqrt() * x.spectral_norm());
    Ok(IncoherenceReport {
        mu0: mu0_of(x),
        mu1,
        max_repetition: s.max_repetition(),
    })
}
