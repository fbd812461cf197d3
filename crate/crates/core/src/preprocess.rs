//! Randomized preprocessing: estimates the conditional entropy of every
//! transformed coordinate and selects the coordinates the compressor emits.
//!
//! A [`ConditionalDistribution`] is a finitely supported law over the
//! simplex `Δ(F_q)`: each support point is the conditional law of a symbol
//! given some side information, weighted by the probability of that side
//! information. One tensor level combines `k` independent copies through the
//! kernel ([`kernel_step`]); [`approx_dist`] repeats this `t` times, rounding
//! to an ε-net after each level so supports stay finite.

use std::cmp::Ordering;

use rayon::prelude::*;
use thiserror::Error;

use crate::codec::{boundary_column, Bitmap, CodecError, SelectionSets};
use crate::field::FieldModulus;
use crate::hmm::{HiddenMarkovSource, HmmError};
use crate::kernel::{KernelError, MixingKernel};
use crate::util::{derive_seed, normalized_entropy};

pub const SETS_MAGIC: &[u8; 4] = b"PLHS";
pub const SETS_VERSION: u8 = 1;

/// Support weights below this are dropped after each kernel step.
pub const PRUNE_WEIGHT: f64 = 1e-15;

pub const DEFAULT_GAMMA: f64 = 0.01;
pub const DEFAULT_SAMPLES: usize = 2000;
pub const DEFAULT_SUPPORT_CAP: usize = 256;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("invalid simplex point: {0}")]
    InvalidPoint(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("support of size {size} exceeds the cap of {cap}")]
    SupportOverflow { size: usize, cap: usize },
    #[error("malformed sets file: {0}")]
    Format(String),
    #[error(transparent)]
    Hmm(#[from] HmmError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// A probability vector over `F_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint(Vec<f64>);

impl SimplexPoint {
    pub fn new(p: Vec<f64>) -> Result<Self, PreprocessError> {
        if p.is_empty() || p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(PreprocessError::InvalidPoint(format!("{p:?}")));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(PreprocessError::InvalidPoint(format!("sums to {s}")));
        }
        Ok(Self(p))
    }

    pub fn uniform(q: usize) -> Self {
        Self(vec![1.0 / q as f64; q])
    }

    pub fn point_mass(q: usize, symbol: usize) -> Self {
        let mut p = vec![0.0; q];
        p[symbol] = 1.0;
        Self(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn q(&self) -> usize {
        self.0.len()
    }
}

/// Grid of points of `Δ(F_q)` whose coordinates are multiples of `1/D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonNet {
    q: usize,
    denominator: u32,
}

impl EpsilonNet {
    /// Net of L1 resolution `resolution`, with `D = ceil(q / resolution)`.
    pub fn new(q: usize, resolution: f64) -> Result<Self, PreprocessError> {
        if !(resolution > 0.0) {
            return Err(PreprocessError::InvalidParameter(format!("net resolution {resolution}")));
        }
        let d = (q as f64 / resolution).ceil();
        if d > u32::MAX as f64 {
            return Err(PreprocessError::InvalidParameter(format!("net resolution {resolution} too fine")));
        }
        Ok(Self::with_denominator(q, d as u32))
    }

    pub fn with_denominator(q: usize, denominator: u32) -> Self {
        Self { q, denominator: denominator.max(1) }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn denominator(&self) -> u32 {
        self.denominator
    }

    /// Worst-case L1 rounding error `q / D`.
    pub fn resolution(&self) -> f64 {
        self.q as f64 / self.denominator as f64
    }

    /// Number of grid points, `C(D + q - 1, q - 1)`.
    pub fn size(&self) -> f64 {
        let d = self.denominator as f64;
        (1..self.q).fold(1.0, |acc, i| acc * (d + i as f64) / i as f64)
    }

    /// Grid coordinates (numerators) of the rounded point. Each coordinate
    /// is floored, then the missing units go to the largest remainders,
    /// ties to the lowest index.
    pub fn round_counts(&self, p: &[f64], out: &mut [u32]) {
        let d = self.denominator as f64;
        let mut rem: Vec<(f64, usize)> = Vec::with_capacity(p.len());
        let mut assigned: u64 = 0;
        for (i, &x) in p.iter().enumerate() {
            let scaled = (x * d).max(0.0);
            let fl = scaled.floor().min(d);
            out[i] = fl as u32;
            assigned += fl as u64;
            rem.push((scaled - fl, i));
        }
        let mut missing = (self.denominator as u64).saturating_sub(assigned) as usize;
        if assigned > self.denominator as u64 {
            // only reachable through rounding noise in a point summing above 1
            let mut excess = assigned - self.denominator as u64;
            for c in out.iter_mut().rev() {
                let take = excess.min(*c as u64);
                *c -= take as u32;
                excess -= take;
            }
            missing = 0;
        }
        rem.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        for &(_, i) in rem.iter().cycle().take(missing) {
            out[i] += 1;
        }
    }

    pub fn round(&self, p: &SimplexPoint) -> SimplexPoint {
        let mut c = vec![0; self.q];
        self.round_counts(p.as_slice(), &mut c);
        SimplexPoint(self.point_of(&c))
    }

    pub fn point_of(&self, counts: &[u32]) -> Vec<f64> {
        counts.iter().map(|&c| c as f64 / self.denominator as f64).collect()
    }
}

/// Finitely supported law on `Δ(F_q)`, stored flat: point `i` occupies
/// `points[i*q .. (i+1)*q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDistribution {
    q: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl ConditionalDistribution {
    /// Validates and normalizes; identical points are not merged.
    pub fn new(q: usize, support: Vec<(SimplexPoint, f64)>) -> Result<Self, PreprocessError> {
        let mut points = Vec::with_capacity(support.len() * q);
        let mut weights = Vec::with_capacity(support.len());
        for (p, w) in support {
            if p.q() != q {
                return Err(PreprocessError::InvalidPoint(format!("point over {} symbols, expected {q}", p.q())));
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(PreprocessError::InvalidParameter(format!("weight {w}")));
            }
            if w > 0.0 {
                points.extend_from_slice(p.as_slice());
                weights.push(w);
            }
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(PreprocessError::InvalidParameter("no positive weight".into()));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { q, points, weights })
    }

    pub fn point_mass(p: SimplexPoint) -> Self {
        Self { q: p.q(), points: p.0, weights: vec![1.0] }
    }

    /// Equal-weight empirical law of `samples`, rounded to `net` and merged.
    pub fn empirical(net: &EpsilonNet, samples: &[Vec<f64>]) -> Result<Self, PreprocessError> {
        let q = net.q();
        let mut points = Vec::with_capacity(samples.len() * q);
        for s in samples {
            if s.len() != q {
                return Err(PreprocessError::InvalidPoint(format!("sample over {} symbols, expected {q}", s.len())));
            }
            points.extend_from_slice(s);
        }
        if samples.is_empty() {
            return Err(PreprocessError::InvalidParameter("no samples".into()));
        }
        let raw = Self { q, points, weights: vec![1.0 / samples.len() as f64; samples.len()] };
        Ok(raw.rounded(net))
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.q..(i + 1) * self.q]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points.chunks_exact(self.q).zip(self.weights.iter().copied())
    }

    /// The averaged (unconditional) law.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.q];
        for (p, w) in self.iter() {
            for (a, &x) in m.iter_mut().zip(p) {
                *a += w * x;
            }
        }
        m
    }

    /// Normalized conditional entropy `Σ_w weight · H(D_w) / log q`.
    pub fn cond_entropy(&self) -> f64 {
        self.iter().map(|(p, w)| w * normalized_entropy(p)).sum::<f64>().clamp(0.0, 1.0)
    }

    /// Push-forward of every support point through a symbol map.
    pub fn map_symbols(&self, f: &[usize]) -> Self {
        let mut points = vec![0.0; self.points.len()];
        for (i, p) in self.points.chunks_exact(self.q).enumerate() {
            for (a, &x) in p.iter().enumerate() {
                points[i * self.q + f[a]] += x;
            }
        }
        Self { q: self.q, points, weights: self.weights.clone() }
    }

    /// Rounds every support point to `net` and merges coincident points.
    /// The support comes out sorted by grid coordinates.
    pub fn rounded(&self, net: &EpsilonNet) -> Self {
        let q = self.q;
        let n = self.len();
        let mut counts = vec![0u32; n * q];
        for (i, p) in self.points.chunks_exact(q).enumerate() {
            net.round_counts(p, &mut counts[i * q..(i + 1) * q]);
        }
        let bits = 32 - net.denominator().leading_zeros();
        let order: Vec<usize> = if bits as usize * q <= 64 {
            let mut keyed: Vec<(u64, usize)> = counts
                .chunks_exact(q)
                .enumerate()
                .map(|(i, c)| (c.iter().fold(0u64, |acc, &x| acc << bits | x as u64), i))
                .collect();
            keyed.sort_unstable();
            keyed.into_iter().map(|(_, i)| i).collect()
        } else {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| counts[a * q..(a + 1) * q].cmp(&counts[b * q..(b + 1) * q]).then(a.cmp(&b)));
            idx
        };
        let mut points = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        let mut last: Option<usize> = None;
        for i in order {
            let key = &counts[i * q..(i + 1) * q];
            match last {
                Some(l) if &counts[l * q..(l + 1) * q] == key => *weights.last_mut().unwrap() += self.weights[i],
                _ => {
                    points.extend(net.point_of(key));
                    weights.push(self.weights[i]);
                    last = Some(i);
                }
            }
        }
        let mut out = Self { q, points, weights };
        out.prune();
        out
    }

    /// Drops weights below [`PRUNE_WEIGHT`] and renormalizes.
    fn prune(&mut self) {
        if self.weights.iter().all(|&w| w >= PRUNE_WEIGHT) {
            return;
        }
        let q = self.q;
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.weights[i] >= PRUNE_WEIGHT).collect();
        if keep.is_empty() {
            return;
        }
        let points = keep.iter().flat_map(|&i| self.points[i * q..(i + 1) * q].iter().copied()).collect();
        let mut weights: Vec<f64> = keep.iter().map(|&i| self.weights[i]).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        self.points = points;
        self.weights = weights;
    }
}

/// Earth-mover distance between two conditional distributions with L1
/// ground cost on the simplex.
pub fn conditional_distance(a: &ConditionalDistribution, b: &ConditionalDistribution) -> Result<f64, PreprocessError> {
    if a.q() != b.q() {
        return Err(PreprocessError::InvalidParameter(format!("moduli differ: {} vs {}", a.q(), b.q())));
    }
    if a.q() == 2 {
        Ok(line_distance(a, b))
    } else {
        transport_distance(a, b)
    }
}

/// Exact one-dimensional transport for `q = 2`: points are identified with
/// `P(1)` and the ground cost is `2|x - y|`, so the distance is twice the
/// area between the two CDFs.
fn line_distance(a: &ConditionalDistribution, b: &ConditionalDistribution) -> f64 {
    let mut events: Vec<(f64, f64)> = a.iter().map(|(p, w)| (p[1], w)).collect();
    events.extend(b.iter().map(|(p, w)| (p[1], -w)));
    events.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap_or(Ordering::Equal));
    let mut area = 0.0;
    let mut diff = 0.0;
    for w in events.windows(2) {
        diff += w[0].1;
        area += diff.abs() * (w[1].0 - w[0].0);
    }
    2.0 * area
}

/// Maximum number of support points the min-cost-flow solver accepts per side.
pub const TRANSPORT_MAX_SUPPORT: usize = 2000;

/// Transportation problem solved by successive shortest paths
/// (Bellman-Ford on the residual graph).
pub fn transport_distance(a: &ConditionalDistribution, b: &ConditionalDistribution) -> Result<f64, PreprocessError> {
    let (na, nb) = (a.len(), b.len());
    for n in [na, nb] {
        if n > TRANSPORT_MAX_SUPPORT {
            return Err(PreprocessError::SupportOverflow { size: n, cap: TRANSPORT_MAX_SUPPORT });
        }
    }
    const EPS: f64 = 1e-15;
    let cost: Vec<Vec<f64>> = (0..na)
        .map(|i| (0..nb).map(|j| crate::util::l1_distance(a.point(i), b.point(j))).collect())
        .collect();
    let mut supply: Vec<f64> = (0..na).map(|i| a.weight(i)).collect();
    let mut demand: Vec<f64> = (0..nb).map(|j| b.weight(j)).collect();
    let mut flow = vec![vec![0.0f64; nb]; na];
    let mut total = 0.0;
    // nodes: 0..na sources, na..na+nb sinks; path from a source with supply
    // to a sink with demand; forward edges i->j always open, backward j->i
    // open while flow[i][j] > 0.
    loop {
        let n = na + nb;
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        for i in 0..na {
            if supply[i] > EPS {
                dist[i] = 0.0;
            }
        }
        for _ in 0..n {
            let mut changed = false;
            for i in 0..na {
                if dist[i].is_finite() {
                    for j in 0..nb {
                        let d = dist[i] + cost[i][j];
                        if d < dist[na + j] - 1e-15 {
                            dist[na + j] = d;
                            prev[na + j] = i;
                            changed = true;
                        }
                    }
                }
            }
            for j in 0..nb {
                if dist[na + j].is_finite() {
                    for i in 0..na {
                        if flow[i][j] > EPS {
                            let d = dist[na + j] - cost[i][j];
                            if d < dist[i] - 1e-15 {
                                dist[i] = d;
                                prev[i] = na + j;
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let target = (0..nb)
            .filter(|&j| demand[j] > EPS && dist[na + j].is_finite())
            .min_by(|&x, &y| dist[na + x].partial_cmp(&dist[na + y]).unwrap_or(Ordering::Equal));
        let Some(j_end) = target else { break };
        // walk back to find the bottleneck
        let mut path = Vec::new();
        let mut node = na + j_end;
        while prev[node] != usize::MAX {
            path.push(node);
            node = prev[node];
        }
        path.push(node);
        path.reverse();
        let mut amount = supply[path[0]].min(demand[j_end]);
        for w in path.windows(2) {
            if w[0] >= na {
                amount = amount.min(flow[w[1]][w[0] - na]);
            }
        }
        if !(amount > EPS) {
            break;
        }
        supply[path[0]] -= amount;
        demand[j_end] -= amount;
        for w in path.windows(2) {
            if w[0] < na {
                flow[w[0]][w[1] - na] += amount;
                total += amount * cost[w[0]][w[1] - na];
            } else {
                flow[w[1]][w[0] - na] -= amount;
                total -= amount * cost[w[1]][w[0] - na];
            }
        }
    }
    Ok(total)
}

/// Precomputed `M z` for every `z ∈ F_q^k`, coordinates packed so that the
/// first output coordinate is the least significant digit.
struct KernelTable {
    q: usize,
    k: usize,
    /// `image[z_code]` = mixed-radix code of `M z`.
    image: Vec<usize>,
}

impl KernelTable {
    fn new(kernel: &MixingKernel) -> Self {
        let q = kernel.modulus().size();
        let k = kernel.k();
        let image = (0..q.pow(k as u32))
            .map(|code| {
                let z: Vec<_> = (0..k).map(|c| (code / q.pow(c as u32) % q) as u16).collect();
                kernel.matrix().mat_vec_slice(&z).iter().rev().fold(0, |acc, &u| acc * q + u as usize)
            })
            .collect();
        Self { q, k, image }
    }
}

/// All `k` kernel steps of one level at once: entry `j` is the law of
/// `U_j` given `U_{<j}` and the side information of `k` independent copies
/// of `current`, where `U = M (Z_1, ..., Z_k)`. Unrounded.
pub fn kernel_step_all(current: &ConditionalDistribution, kernel: &MixingKernel) -> Vec<ConditionalDistribution> {
    let table = KernelTable::new(kernel);
    let (q, k) = (table.q, table.k);
    let n = current.len();
    let states = q.pow(k as u32);
    let mut outs: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); k];
    let mut joint = vec![0.0; states];
    let mut marg = vec![0.0; states];
    let mut tuple = vec![0usize; k];
    loop {
        let w: f64 = tuple.iter().map(|&i| current.weight(i)).product();
        if w > 0.0 {
            joint.iter_mut().for_each(|x| *x = 0.0);
            for (code, &u) in table.image.iter().enumerate() {
                let mut p = 1.0;
                let mut rest = code;
                for &i in &tuple {
                    p *= current.point(i)[rest % q];
                    rest /= q;
                }
                joint[u] += p;
            }
            for (j, (points, weights)) in outs.iter_mut().enumerate() {
                // marginal of (u_0 .. u_j), code of u_0 least significant
                let width = q.pow(j as u32 + 1);
                marg[..width].iter_mut().for_each(|x| *x = 0.0);
                for (code, &p) in joint.iter().enumerate() {
                    marg[code % width] += p;
                }
                let prefixes = width / q;
                for prefix in 0..prefixes {
                    let mass: f64 = (0..q).map(|v| marg[prefix + v * prefixes]).sum();
                    let weight = w * mass;
                    if mass > 0.0 && weight >= PRUNE_WEIGHT {
                        points.extend((0..q).map(|v| marg[prefix + v * prefixes] / mass));
                        weights.push(weight);
                    }
                }
            }
        }
        // next tuple
        let mut c = 0;
        while c < k {
            tuple[c] += 1;
            if tuple[c] < n {
                break;
            }
            tuple[c] = 0;
            c += 1;
        }
        if c == k {
            break;
        }
    }
    outs.into_iter()
        .map(|(points, mut weights)| {
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            ConditionalDistribution { q, points, weights }
        })
        .collect()
}

/// One kernel step for inner index `j` (0-based).
pub fn kernel_step(current: &ConditionalDistribution, j: usize, kernel: &MixingKernel) -> Result<ConditionalDistribution, PreprocessError> {
    if j >= kernel.k() {
        return Err(PreprocessError::InvalidParameter(format!("inner index {j} >= k = {}", kernel.k())));
    }
    Ok(kernel_step_all(current, kernel).swap_remove(j))
}

/// What to do when a rounded support exceeds the cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportCap {
    /// Fail with [`PreprocessError::SupportOverflow`].
    Strict(usize),
    /// Round to the finest net whose size fits under the cap instead.
    Coarsen(usize),
}

impl SupportCap {
    fn limit(&self) -> usize {
        match *self {
            SupportCap::Strict(c) | SupportCap::Coarsen(c) => c,
        }
    }
}

/// Rounds with a net of resolution `resolution`, applying the cap policy.
fn round_capped(d: &ConditionalDistribution, resolution: f64, cap: SupportCap) -> Result<ConditionalDistribution, PreprocessError> {
    let net = EpsilonNet::new(d.q(), resolution)?;
    let out = d.rounded(&net);
    if out.len() <= cap.limit() {
        return Ok(out);
    }
    match cap {
        SupportCap::Strict(c) => Err(PreprocessError::SupportOverflow { size: out.len(), cap: c }),
        SupportCap::Coarsen(c) => {
            let mut den = net.denominator();
            while den > 1 && EpsilonNet::with_denominator(d.q(), den).size() > c as f64 {
                den = den.min(c as u32).saturating_sub(1).max(1);
                // shrink geometrically once below the cap-sized starting point
                while den > 1 && EpsilonNet::with_denominator(d.q(), den).size() > c as f64 {
                    den = (den as f64 / 1.1).floor() as u32;
                }
            }
            Ok(d.rounded(&EpsilonNet::with_denominator(d.q(), den)))
        }
    }
}

/// Approximate law of `U_I` given `U_{<I}` and the side information, for
/// `U = M^{⊗t}` applied to `k^t` independent copies of `base`. `index`
/// holds the base-`k` digits of `I`, most significant first; the first digit
/// is the kernel step applied directly to `base`.
pub fn approx_dist(
    base: &ConditionalDistribution,
    eps: f64,
    index: &[usize],
    kernel: &MixingKernel,
    cap: SupportCap,
) -> Result<ConditionalDistribution, PreprocessError> {
    let Some((&last, rest)) = index.split_last() else {
        return Ok(base.clone());
    };
    let inner = approx_dist(base, eps / (2.0 * kernel.k() as f64), rest, kernel, cap)?;
    let stepped = kernel_step(&inner, last, kernel)?;
    round_capped(&stepped, eps / 2.0, cap)
}

/// Entropy estimates `ĥ_i` for every transformed index `i` in natural order.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyEstimates(pub Vec<f64>);

impl EntropyEstimates {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Fraction of estimates strictly inside `(lo, hi)`.
    pub fn unpolarized_fraction(&self, lo: f64, hi: f64) -> f64 {
        self.0.iter().filter(|&&h| h > lo && h < hi).count() as f64 / self.0.len() as f64
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Runs [`approx_dist`] with tolerance `gamma²` for every index in
/// `[k]^t`, sharing each recursion prefix across the indices below it.
pub fn approx_entropy(
    base: &ConditionalDistribution,
    gamma: f64,
    t: u32,
    kernel: &MixingKernel,
    cap: SupportCap,
) -> Result<EntropyEstimates, PreprocessError> {
    if !(gamma > 0.0) {
        return Err(PreprocessError::InvalidParameter(format!("gamma {gamma}")));
    }
    let k = kernel.k() as f64;
    let top = gamma * gamma;
    // level s (1-based) rounds to half of top / (2k)^(t-s)
    let mut level = vec![base.clone()];
    for s in 1..=t {
        let resolution = top / (2.0 * k).powi((t - s) as i32) / 2.0;
        let mut next = Vec::with_capacity(level.len() * kernel.k());
        for node in &level {
            for stepped in kernel_step_all(node, kernel) {
                next.push(round_capped(&stepped, resolution, cap)?);
            }
        }
        level = next;
    }
    Ok(EntropyEstimates(level.iter().map(ConditionalDistribution::cond_entropy).collect()))
}

/// `max(1/n³, 4γ)`.
pub fn default_threshold(n: usize, gamma: f64) -> f64 {
    (1.0 / (n as f64).powi(3)).max(4.0 * gamma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessParams {
    pub epsilon: f64,
    pub samples: usize,
    pub gamma: f64,
    pub threshold: f64,
    pub seed: u64,
    pub support_cap: usize,
}

impl PreprocessParams {
    pub fn new(m: usize, epsilon: f64, seed: u64) -> Self {
        Self {
            epsilon,
            samples: DEFAULT_SAMPLES,
            gamma: DEFAULT_GAMMA,
            threshold: default_threshold(m * m, DEFAULT_GAMMA),
            seed,
            support_cap: DEFAULT_SUPPORT_CAP,
        }
    }

    fn validate(&self) -> Result<(), PreprocessError> {
        let bad = |what: &str| Err(PreprocessError::InvalidParameter(what.to_string()));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        if self.samples == 0 || self.samples > u32::MAX as usize {
            return bad("samples must be positive and fit u32");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.threshold > 0.0) {
            return bad("threshold must be positive");
        }
        if self.support_cap < 2 {
            return bad("support cap must be at least 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessReport {
    pub sets: SelectionSets,
    /// Estimates for each compressed column.
    pub estimates: Vec<EntropyEstimates>,
}

impl PreprocessReport {
    /// `Σ_j Σ_i ĥ_{i,j} / n` over compressed columns plus the full tail.
    pub fn entropy_estimate(&self) -> f64 {
        let m = self.sets.m();
        let tail = (m - self.estimates.len()) * m;
        (self.estimates.iter().map(EntropyEstimates::sum).sum::<f64>() + tail as f64) / (m * m) as f64
    }
}

/// Empirical law of a row's `j`-th symbol given its first `j` symbols:
/// `samples` prefixes are drawn from the source, the next-symbol law of each
/// is computed by the forward algorithm and rounded to the `gamma`-net.
pub fn column_base(
    src: &HiddenMarkovSource,
    column: usize,
    samples: usize,
    gamma: f64,
    seed: u64,
) -> Result<ConditionalDistribution, PreprocessError> {
    let laws: Vec<Vec<f64>> = (0..samples)
        .map(|r| {
            let prefix = src.sample_sequence(column, derive_seed(seed, r as u64));
            src.conditional_next(prefix.as_slice())
        })
        .collect::<Result<_, HmmError>>()?;
    let net = EpsilonNet::new(src.modulus().size(), gamma)?;
    ConditionalDistribution::empirical(&net, &laws)
}

/// Selects `S_j = {i : ĥ_{i,j} > threshold}` for every column before the
/// boundary; later columns are full. Deterministic given the seed.
pub fn polar_preprocess(
    src: &HiddenMarkovSource,
    kernel: &MixingKernel,
    t: u32,
    params: &PreprocessParams,
) -> Result<PreprocessReport, PreprocessError> {
    params.validate()?;
    if kernel.modulus() != src.modulus() {
        return Err(PreprocessError::InvalidParameter("kernel and source fields differ".into()));
    }
    let m = kernel.k().checked_pow(t).filter(|&m| m <= 1 << 12).ok_or_else(|| {
        PreprocessError::InvalidParameter(format!("k^t too large for preprocessing (k = {}, t = {t})", kernel.k()))
    })?;
    let boundary = boundary_column(m, params.epsilon);
    let cap = SupportCap::Coarsen(params.support_cap);
    let bases: Vec<ConditionalDistribution> = (0..boundary)
        .into_par_iter()
        .map(|j| column_base(src, j, params.samples, params.gamma, derive_seed(params.seed, j as u64)))
        .collect::<Result<_, _>>()?;
    // identical bases (always the case for memoryless sources) share one run
    let mut distinct: Vec<&ConditionalDistribution> = Vec::new();
    let slot: Vec<usize> = bases
        .iter()
        .map(|b| match distinct.iter().position(|d| *d == b) {
            Some(i) => i,
            None => {
                distinct.push(b);
                distinct.len() - 1
            }
        })
        .collect();
    let unique: Vec<EntropyEstimates> = distinct
        .par_iter()
        .map(|b| approx_entropy(b, params.gamma, t, kernel, cap))
        .collect::<Result<_, _>>()?;
    let estimates: Vec<EntropyEstimates> = slot.iter().map(|&i| unique[i].clone()).collect();
    let mut bitmaps: Vec<Bitmap> = estimates
        .iter()
        .map(|e| Bitmap::from_bools(&e.0.iter().map(|&h| h > params.threshold).collect::<Vec<_>>()))
        .collect();
    bitmaps.resize(m, Bitmap::full(m));
    let sets = SelectionSets::new(m, params.epsilon, src.model_hash(), bitmaps)?;
    Ok(PreprocessReport { sets, estimates })
}

/// Selection sets together with the parameters that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SetsFile {
    pub q: u32,
    pub k: u8,
    pub t: u8,
    pub threshold: f64,
    pub gamma: f64,
    pub samples: u32,
    pub seed: u64,
    pub sets: SelectionSets,
}

impl SetsFile {
    pub fn new(src: &HiddenMarkovSource, kernel: &MixingKernel, t: u32, params: &PreprocessParams, sets: SelectionSets) -> Result<Self, PreprocessError> {
        let k = u8::try_from(kernel.k()).map_err(|_| PreprocessError::InvalidParameter("k does not fit u8".into()))?;
        let t = u8::try_from(t).map_err(|_| PreprocessError::InvalidParameter("t does not fit u8".into()))?;
        let samples = u32::try_from(params.samples).map_err(|_| PreprocessError::InvalidParameter("samples do not fit u32".into()))?;
        Ok(Self {
            q: src.modulus().q(),
            k,
            t,
            threshold: params.threshold,
            gamma: params.gamma,
            samples,
            seed: params.seed,
            sets,
        })
    }

    pub fn m(&self) -> usize {
        (self.k as usize).pow(self.t as u32)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SETS_MAGIC);
        out.push(SETS_VERSION);
        out.extend_from_slice(&(self.q as u16).to_le_bytes());
        out.push(self.k);
        out.push(self.t);
        out.extend_from_slice(&self.sets.epsilon().to_le_bytes());
        out.extend_from_slice(&self.threshold.to_le_bytes());
        out.extend_from_slice(&self.gamma.to_le_bytes());
        out.extend_from_slice(&self.samples.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.sets.model_hash().to_le_bytes());
        for b in self.sets.sets() {
            out.extend_from_slice(&b.to_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PreprocessError> {
        let fmt = |s: &str| PreprocessError::Format(s.to_string());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], PreprocessError> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| fmt("truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != SETS_MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = take(1)?[0];
        if version != SETS_VERSION {
            return Err(PreprocessError::Format(format!("unsupported version {version}")));
        }
        let q = u16::from_le_bytes(take(2)?.try_into().unwrap()) as u32;
        FieldModulus::new(q).map_err(|e| PreprocessError::Format(e.to_string()))?;
        let k = take(1)?[0];
        let t = take(1)?[0];
        let f64_at = |s: &[u8]| f64::from_le_bytes(s.try_into().unwrap());
        let epsilon = f64_at(take(8)?);
        let threshold = f64_at(take(8)?);
        let gamma = f64_at(take(8)?);
        let samples = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let model_hash = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let m = (k as usize)
            .checked_pow(t as u32)
            .filter(|&m| m > 0 && m <= 1 << 16)
            .ok_or_else(|| fmt("bad k/t"))?;
        let bitmaps = (0..m)
            .map(|_| Ok(Bitmap::from_bytes(m, take(m.div_ceil(8))?)))
            .collect::<Result<Vec<_>, PreprocessError>>()?;
        if pos != bytes.len() {
            return Err(fmt("trailing bytes"));
        }
        let sets = SelectionSets::new(m, epsilon, model_hash, bitmaps)?;
        Ok(Self { q, k, t, threshold, gamma, samples, seed, sets })
    }
}
