//! Posterior Granger-causality probabilities and the networks derived from
//! them.
//!
//! Series `m` Granger-causes series `n` at time `t` in a draw when some lag
//! coefficient `A_{t,p}[n, m]` exceeds `δ` in magnitude. The posterior
//! probability is the fraction of draws in which that happens. Counts are
//! integers, so accumulation can be split across chains and merged in any
//! order.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Running indicator counts for one `δ`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcAccumulator {
    /// Threshold as raw bits so the struct stays `Eq`.
    delta_bits: u64,
    n: usize,
    t_len: usize,
    draws: u64,
    /// `counts[(t * n + m) * n + n_to]`.
    counts: Vec<u64>,
}

impl GcAccumulator {
    pub fn new(delta: f64, n: usize, t_len: usize) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("delta = {delta} must be nonnegative")));
        }
        Ok(Self {
            delta_bits: delta.to_bits(),
            n,
            t_len,
            draws: 0,
            counts: vec![0; t_len * n * n],
        })
    }

    pub fn delta(&self) -> f64 {
        f64::from_bits(self.delta_bits)
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Adds one posterior draw of the coefficient path. A single tensor is
    /// broadcast over time (time-invariant models).
    pub fn add_draw(&mut self, coefficients: &[Tensor3]) -> Result<()> {
        if coefficients.len() != self.t_len && coefficients.len() != 1 {
            return Err(Error::Dimension(format!(
                "draw has {} tensors, expected {} or 1",
                coefficients.len(),
                self.t_len
            )));
        }
        let delta = self.delta();
        let n = self.n;
        for t in 0..self.t_len {
            let a = if coefficients.len() == 1 { &coefficients[0] } else { &coefficients[t] };
            let [d1, d2, p] = a.dims();
            if d1 != n || d2 != n {
                return Err(Error::Dimension(format!("coefficient tensor is {d1}x{d2}, expected {n}x{n}")));
            }
            for from in 0..n {
                for to in 0..n {
                    if (0..p).any(|lag| a.get(to, from, lag).abs() > delta) {
                        self.counts[(t * n + from) * n + to] += 1;
                    }
                }
            }
        }
        self.draws += 1;
        Ok(())
    }

    /// Pools the counts of another accumulator built with the same `δ`.
    pub fn merge(&mut self, other: &GcAccumulator) -> Result<()> {
        if self.delta_bits != other.delta_bits || self.n != other.n || self.t_len != other.t_len {
            return Err(Error::Dimension("cannot merge accumulators with different shapes or delta".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.draws += other.draws;
        Ok(())
    }

    pub fn probabilities(&self) -> Result<GcProbCube> {
        if self.draws == 0 {
            return Err(Error::MissingData("no draws accumulated".into()));
        }
        let d = self.draws as f64;
        Ok(GcProbCube {
            n: self.n,
            t_len: self.t_len,
            delta: self.delta(),
            draws: self.draws,
            prob: self.counts.iter().map(|&c| c as f64 / d).collect(),
        })
    }
}

/// `p[t][m][n]`: posterior probability that series `m` Granger-causes `n`
/// at time `t`. Diagonal entries are computed but never reported as edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcProbCube {
    pub n: usize,
    pub t_len: usize,
    pub delta: f64,
    pub draws: u64,
    prob: Vec<f64>,
}

impl GcProbCube {
    pub fn from_parts(n: usize, t_len: usize, delta: f64, draws: u64, prob: Vec<f64>) -> Result<Self> {
        if prob.len() != n * n * t_len {
            return Err(Error::Dimension(format!(
                "probability cube needs {} entries, got {}",
                n * n * t_len,
                prob.len()
            )));
        }
        if prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParameter("probabilities must lie in [0, 1]".into()));
        }
        Ok(Self { n, t_len, delta, draws, prob })
    }

    #[inline]
    pub fn get(&self, t: usize, from: usize, to: usize) -> f64 {
        self.prob[(t * self.n + from) * self.n + to]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.prob
    }
}

/// Probabilities from an explicit collection of draws, each draw being the
/// full coefficient path.
pub fn gc_probabilities<'a, I>(draws: I, delta: f64) -> Result<GcProbCube>
where
    I: IntoIterator<Item = &'a [Tensor3]>,
{
    let mut acc: Option<GcAccumulator> = None;
    for draw in draws {
        let first = draw
            .first()
            .ok_or_else(|| Error::MissingData("empty coefficient path".into()))?;
        let acc = match &mut acc {
            Some(a) => a,
            None => acc.insert(GcAccumulator::new(delta, first.dims()[0], draw.len())?),
        };
        acc.add_draw(draw)?;
    }
    acc.ok_or_else(|| Error::MissingData("no coefficient draws".into()))?
        .probabilities()
}

/// Which edges to keep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeRule {
    /// Edges with probability strictly above the threshold.
    Threshold(f64),
    /// The `k` most probable edges.
    TopK(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcNetwork {
    pub t: usize,
    pub rule: EdgeRule,
    /// Sorted by probability descending, then `(from, to)`.
    pub edges: Vec<Edge>,
}

impl GcNetwork {
    /// Graphviz DOT rendering with zero-based node labels `y1..yN`.
    pub fn to_dot(&self, n: usize) -> String {
        let mut out = format!("digraph granger_t{} {{\n", self.t);
        for i in 0..n {
            let _ = writeln!(out, "  y{};", i + 1);
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "  y{} -> y{} [weight={:.6}, label=\"{:.3}\"];",
                e.from + 1,
                e.to + 1,
                e.probability,
                e.probability
            );
        }
        out.push_str("}\n");
        out
    }
}

fn sorted_edges(cube: &GcProbCube, t: usize) -> Vec<Edge> {
    let mut edges: Vec<Edge> = (0..cube.n)
        .flat_map(|from| (0..cube.n).map(move |to| (from, to)))
        .filter(|(from, to)| from != to)
        .map(|(from, to)| Edge {
            from,
            to,
            probability: cube.get(t, from, to),
        })
        .collect();
    edges.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then((a.from, a.to).cmp(&(b.from, b.to)))
    });
    edges
}

pub fn gc_network(cube: &GcProbCube, t: usize, rule: EdgeRule) -> Result<GcNetwork> {
    if t >= cube.t_len {
        return Err(Error::InvalidParameter(format!(
            "time index {t} out of range 0..{}",
            cube.t_len
        )));
    }
    let mut edges = sorted_edges(cube, t);
    match rule {
        EdgeRule::Threshold(p) => {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("threshold {p} outside [0, 1]")));
            }
            edges.retain(|e| e.probability > p);
        }
        EdgeRule::TopK(k) => {
            let pairs = cube.n * cube.n.saturating_sub(1);
            if k == 0 || k > pairs {
                return Err(Error::InvalidParameter(format!("top-k needs 1 <= k <= {pairs}, got {k}")));
            }
            edges.truncate(k);
        }
    }
    Ok(GcNetwork { t, rule, edges })
}

/// Number of edges passing `rule` at every time point.
pub fn gc_count_series(cube: &GcProbCube, rule: EdgeRule) -> Result<Vec<usize>> {
    (0..cube.t_len)
        .map(|t| gc_network(cube, t, rule).map(|net| net.edges.len()))
        .collect()
}
