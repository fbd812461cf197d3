//! Hidden Markov sources over `F_q`: sampling, forward inference, entropy-rate
//! estimation, the model file format, and a few stock model families.
//!
//! A source runs a chain `X_0, X_1, ...` with `X_0 ~ π₀` and emits
//! `Z_t ~ S_{X_t}` for `t >= 1`; `X_0` itself emits nothing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, FieldMatrix, FieldModulus, FieldVector, Symbol};
use crate::util::{derive_seed, fnv1a64, sample_index};

/// Tolerance on probability vectors summing to one.
pub const PROB_TOLERANCE: f64 = 1e-9;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum HmmError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("chain is reducible or periodic")]
    NotErgodic,
    #[error("stationary distribution did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("observation {symbol} has zero likelihood under the current belief")]
    ImpossibleObservation { symbol: Symbol },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

fn check_distribution(p: &[f64], what: &str) -> Result<(), HmmError> {
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(HmmError::InvalidModel(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_TOLERANCE {
        return Err(HmmError::InvalidModel(format!("{what} sums to {s}")));
    }
    Ok(())
}

/// `(ℓ, Π, π₀)` with a row-stochastic `Π`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    transition: Vec<Vec<f64>>,
    initial: Vec<f64>,
}

impl MarkovChain {
    pub fn new(transition: Vec<Vec<f64>>, initial: Vec<f64>) -> Result<Self, HmmError> {
        let ell = transition.len();
        if ell == 0 {
            return Err(HmmError::InvalidModel("chain has no states".into()));
        }
        for (i, row) in transition.iter().enumerate() {
            if row.len() != ell {
                return Err(HmmError::InvalidModel(format!("transition row {i} has length {}", row.len())));
            }
            check_distribution(row, &format!("transition row {i}"))?;
        }
        if initial.len() != ell {
            return Err(HmmError::InvalidModel("initial distribution has wrong length".into()));
        }
        check_distribution(&initial, "initial distribution")?;
        Ok(Self { transition, initial })
    }

    pub fn states(&self) -> usize {
        self.transition.len()
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// One step of the chain applied to a distribution: `πΠ`.
    pub fn propagate(&self, dist: &[f64]) -> Vec<f64> {
        let ell = self.states();
        let mut out = vec![0.0; ell];
        for (i, &w) in dist.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, &p) in out.iter_mut().zip(&self.transition[i]) {
                *o += w * p;
            }
        }
        out
    }

    fn bfs_levels(&self, reverse: bool) -> Vec<Option<usize>> {
        let ell = self.states();
        let mut level = vec![None; ell];
        level[0] = Some(0);
        let mut queue = std::collections::VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            for v in 0..ell {
                let p = if reverse { self.transition[v][u] } else { self.transition[u][v] };
                if p > 0.0 && level[v].is_none() {
                    level[v] = Some(level[u].unwrap() + 1);
                    queue.push_back(v);
                }
            }
        }
        level
    }

    pub fn is_irreducible(&self) -> bool {
        self.bfs_levels(false).iter().all(Option::is_some)
            && self.bfs_levels(true).iter().all(Option::is_some)
    }

    /// Period of the support graph (gcd of cycle lengths through state 0's class).
    pub fn period(&self) -> usize {
        fn gcd(a: usize, b: usize) -> usize {
            if b == 0 { a } else { gcd(b, a % b) }
        }
        let level = self.bfs_levels(false);
        let ell = self.states();
        let mut g = 0;
        for u in 0..ell {
            for v in 0..ell {
                if let (Some(lu), Some(lv)) = (level[u], level[v]) {
                    if self.transition[u][v] > 0.0 {
                        g = gcd(g, (lu + 1).abs_diff(lv));
                    }
                }
            }
        }
        g
    }

    pub fn is_ergodic(&self) -> bool {
        self.is_irreducible() && self.period() == 1
    }

    /// Stationary distribution by power iteration.
    pub fn stationary_distribution(&self) -> Result<Vec<f64>, HmmError> {
        const MAX_ITERS: usize = 1_000_000;
        if !self.is_ergodic() {
            return Err(HmmError::NotErgodic);
        }
        let ell = self.states();
        let mut pi = vec![1.0 / ell as f64; ell];
        for _ in 0..MAX_ITERS {
            let mut next = self.propagate(&pi);
            let s: f64 = next.iter().sum();
            next.iter_mut().for_each(|x| *x /= s);
            let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            pi = next;
            if diff <= 1e-13 {
                let residual: f64 =
                    self.propagate(&pi).iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
                if residual <= 1e-10 {
                    return Ok(pi);
                }
            }
        }
        Err(HmmError::NoConvergence(MAX_ITERS))
    }

    /// Whether `π₀` is invariant under `Π` (to 1e-9 in L1).
    pub fn is_stationary(&self) -> bool {
        let next = self.propagate(&self.initial);
        next.iter().zip(&self.initial).map(|(a, b)| (a - b).abs()).sum::<f64>() <= PROB_TOLERANCE
    }
}

/// Posterior over the current hidden state given everything observed so far.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardState {
    belief: Vec<f64>,
}

impl ForwardState {
    pub fn belief(&self) -> &[f64] {
        &self.belief
    }
}

/// The JSON model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub q: u32,
    pub states: usize,
    pub transition: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    pub emissions: Vec<Vec<f64>>,
    pub mixing_time: Option<f64>,
    pub name: String,
}

/// A hidden Markov source `(F_q, chain, {S_i})`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenMarkovSource {
    name: String,
    chain: MarkovChain,
    modulus: FieldModulus,
    emissions: Vec<Vec<f64>>,
    mixing_time: Option<f64>,
}

impl HiddenMarkovSource {
    pub fn new(
        name: impl Into<String>,
        chain: MarkovChain,
        modulus: FieldModulus,
        emissions: Vec<Vec<f64>>,
        mixing_time: Option<f64>,
    ) -> Result<Self, HmmError> {
        if emissions.len() != chain.states() {
            return Err(HmmError::InvalidModel(format!(
                "{} emission distributions for {} states",
                emissions.len(),
                chain.states()
            )));
        }
        for (i, e) in emissions.iter().enumerate() {
            if e.len() != modulus.size() {
                return Err(HmmError::InvalidModel(format!("emission {i} has length {}", e.len())));
            }
            check_distribution(e, &format!("emission {i}"))?;
        }
        if let Some(tau) = mixing_time {
            if !(tau.is_finite() && tau > 0.0) {
                return Err(HmmError::InvalidModel("mixing time must be positive".into()));
            }
        }
        Ok(Self { name: name.into(), chain, modulus, emissions, mixing_time })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn chain(&self) -> &MarkovChain {
        &self.chain
    }

    pub fn modulus(&self) -> FieldModulus {
        self.modulus
    }

    pub fn states(&self) -> usize {
        self.chain.states()
    }

    pub fn emissions(&self) -> &[Vec<f64>] {
        &self.emissions
    }

    pub fn mixing_time(&self) -> Option<f64> {
        self.mixing_time
    }

    /// False when `π₀` is not stationary; the codec's guarantees assume it is.
    pub fn is_stationary(&self) -> bool {
        self.chain.is_stationary()
    }

    /// Emission probability of `symbol` in every state.
    fn likelihoods(&self, symbol: Symbol) -> impl Iterator<Item = f64> + '_ {
        self.emissions.iter().map(move |e| e[symbol as usize])
    }

    pub fn initial_state(&self) -> ForwardState {
        ForwardState { belief: self.chain.initial.clone() }
    }

    /// Conditions the belief on the next observed symbol.
    pub fn forward_step(&self, state: &ForwardState, observed: Symbol) -> Result<ForwardState, HmmError> {
        let mut belief = self.chain.propagate(&state.belief);
        let mut total = 0.0;
        for (b, l) in belief.iter_mut().zip(self.likelihoods(observed)) {
            *b *= l;
            total += *b;
        }
        if !(total > 0.0) {
            return Err(HmmError::ImpossibleObservation { symbol: observed });
        }
        belief.iter_mut().for_each(|b| *b /= total);
        Ok(ForwardState { belief })
    }

    /// Law of the next symbol given the belief: `E_{i ~ πΠ}[S_i]`.
    pub fn next_symbol_distribution(&self, state: &ForwardState) -> Vec<f64> {
        let predicted = self.chain.propagate(&state.belief);
        let mut out = vec![0.0; self.modulus.size()];
        for (w, e) in predicted.iter().zip(&self.emissions) {
            if *w == 0.0 {
                continue;
            }
            for (o, &p) in out.iter_mut().zip(e) {
                *o += w * p;
            }
        }
        let s: f64 = out.iter().sum();
        out.iter_mut().for_each(|x| *x /= s);
        out
    }

    /// Conditional law of the symbol after `prefix`.
    pub fn conditional_next(&self, prefix: &[Symbol]) -> Result<Vec<f64>, HmmError> {
        let mut st = self.initial_state();
        for &y in prefix {
            st = self.forward_step(&st, y)?;
        }
        Ok(self.next_symbol_distribution(&st))
    }

    fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut [Symbol]) {
        let mut x = sample_index(rng, &self.chain.initial);
        for slot in out {
            x = sample_index(rng, &self.chain.transition[x]);
            *slot = sample_index(rng, &self.emissions[x]) as Symbol;
        }
    }

    /// `n` symbols from the source; deterministic in `seed`.
    pub fn sample_sequence(&self, n: usize, seed: u64) -> FieldVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![0; n];
        self.sample_into(&mut rng, &mut data);
        FieldVector::from_symbols(self.modulus, data).expect("emissions are in range")
    }

    /// An `m x m` matrix filled row-major from one stream of length `m²`.
    pub fn sample_matrix(&self, m: usize, seed: u64) -> FieldMatrix {
        let v = self.sample_sequence(m * m, seed);
        FieldMatrix::from_row_major(self.modulus, m, m, v.into_inner()).expect("shape")
    }

    /// An `m x m` matrix whose rows are independent length-`m` samples; row
    /// `i` uses the sub-seed `derive_seed(seed, i)`.
    pub fn sample_independent_rows(&self, m: usize, seed: u64) -> FieldMatrix {
        let seeds: Vec<u64> = (0..m as u64).map(|i| derive_seed(seed, i)).collect();
        self.sample_rows_from_seeds(m, &seeds)
    }

    /// One independent row of length `m` per seed.
    pub fn sample_rows_from_seeds(&self, m: usize, seeds: &[u64]) -> FieldMatrix {
        let mut data = vec![0; seeds.len() * m];
        for (row, &s) in data.chunks_mut(m.max(1)).zip(seeds) {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            self.sample_into(&mut rng, row);
        }
        FieldMatrix::from_row_major(self.modulus, seeds.len(), m, data).expect("shape")
    }

    /// Monte Carlo estimate of the normalized entropy rate
    /// `-(1 / (n log q)) Σ_t log P(Z_t | Z_<t)`.
    pub fn estimate_entropy_rate(&self, n: usize, trials: usize, seed: u64) -> Result<EntropyRateEstimate, HmmError> {
        if trials == 0 || n == 0 {
            return Err(HmmError::InvalidParameter("n and trials must be positive".into()));
        }
        let log_q = (self.modulus.q() as f64).ln();
        let mut values = Vec::with_capacity(trials);
        for trial in 0..trials {
            let z = self.sample_sequence(n, derive_seed(seed, trial as u64));
            let mut st = self.initial_state();
            let mut nll = 0.0;
            for &y in z.as_slice() {
                let p = self.next_symbol_distribution(&st)[y as usize];
                nll -= p.ln();
                st = self.forward_step(&st, y)?;
            }
            values.push(nll / (n as f64 * log_q));
        }
        let mean = values.iter().sum::<f64>() / trials as f64;
        let stderr = if trials > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
            (var / trials as f64).sqrt()
        } else {
            f64::NAN
        };
        Ok(EntropyRateEstimate { mean, stderr, trials })
    }

    pub fn to_model_file(&self) -> ModelFile {
        ModelFile {
            q: self.modulus.q(),
            states: self.states(),
            transition: self.chain.transition.clone(),
            initial: self.chain.initial.clone(),
            emissions: self.emissions.clone(),
            mixing_time: self.mixing_time,
            name: self.name.clone(),
        }
    }

    pub fn from_model_file(file: ModelFile) -> Result<Self, HmmError> {
        let modulus = FieldModulus::new(file.q)?;
        if file.states != file.transition.len() {
            return Err(HmmError::Format(format!(
                "\"states\" is {} but transition has {} rows",
                file.states,
                file.transition.len()
            )));
        }
        let chain = MarkovChain::new(file.transition, file.initial)?;
        Self::new(file.name, chain, modulus, file.emissions, file.mixing_time)
    }

    /// Canonical compact JSON (fixed key order, shortest float repr).
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_model_file()).expect("model serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_model_file()).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, HmmError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| HmmError::Format(e.to_string()))?;
        Self::from_model_file(file)
    }

    /// FNV-1a of the canonical JSON.
    pub fn model_hash(&self) -> u64 {
        fnv1a64(self.to_json().as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyRateEstimate {
    pub mean: f64,
    /// Standard error across trials; NaN for a single trial.
    pub stderr: f64,
    pub trials: usize,
}

/// A memoryless source with the given symbol law.
pub fn build_iid(q: u32, probs: Vec<f64>) -> Result<HiddenMarkovSource, HmmError> {
    let modulus = FieldModulus::new(q)?;
    let chain = MarkovChain::new(vec![vec![1.0]], vec![1.0])?;
    HiddenMarkovSource::new("iid", chain, modulus, vec![probs], None)
}

/// Memoryless binary source emitting `1` with probability `p1`.
pub fn build_bernoulli(p1: f64) -> Result<HiddenMarkovSource, HmmError> {
    if !(0.0..=1.0).contains(&p1) {
        return Err(HmmError::InvalidParameter(format!("p1 = {p1} not in [0, 1]")));
    }
    let mut src = build_iid(2, vec![1.0 - p1, p1])?;
    src.name = format!("iid-bernoulli-{p1}");
    Ok(src)
}

/// Uniform memoryless source over `F_q`.
pub fn build_uniform(q: u32) -> Result<HiddenMarkovSource, HmmError> {
    let mut src = build_iid(q, vec![1.0 / q as f64; q as usize])?;
    src.name = format!("iid-uniform-{q}");
    Ok(src)
}

/// Two-state bursty binary noise. State 0 ("Nice") emits `1` w.p. `delta`,
/// state 1 ("Noisy") w.p. `1/2 - delta`. Nice→Noisy w.p. `q_switch`,
/// Noisy→Nice w.p. `p`. Starts from the stationary law.
pub fn build_gilbert_elliott(delta: f64, p: f64, q_switch: f64) -> Result<HiddenMarkovSource, HmmError> {
    for (name, v) in [("delta", delta), ("p", p), ("q_switch", q_switch)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(HmmError::InvalidParameter(format!("{name} = {v} not in [0, 1]")));
        }
    }
    if delta > 0.5 {
        return Err(HmmError::InvalidParameter(format!("delta = {delta} exceeds 1/2")));
    }
    // π(Nice) q_switch = π(Noisy) p
    let initial = if p + q_switch > 0.0 {
        vec![p / (p + q_switch), q_switch / (p + q_switch)]
    } else {
        vec![0.5, 0.5]
    };
    let chain = MarkovChain::new(vec![vec![1.0 - q_switch, q_switch], vec![p, 1.0 - p]], initial)?;
    let emissions = vec![vec![1.0 - delta, delta], vec![0.5 + delta, 0.5 - delta]];
    HiddenMarkovSource::new(
        format!("gilbert-elliott-{delta}-{p}-{q_switch}"),
        chain,
        FieldModulus::new(2)?,
        emissions,
        None,
    )
}

/// Index of the LPN state `(position, parity, bit)`.
pub fn lpn_state_index(position: usize, parity: u8, bit: u8) -> usize {
    position * 4 + parity as usize * 2 + bit as usize
}

/// Source whose output is blocks `(x_1, ..., x_ℓ, <a, x> + z)` with uniform
/// `x` and `z ~ Bern(eta)`, one symbol per step.
///
/// States are `(i, b, c)` for `i in 0..=ℓ`. For `i < ℓ`, `b` is the parity
/// `Σ_{j<i} a_j x_j` and the state emits `c = x_i`. Position `ℓ` is the
/// parity step: `b = <a, x>`, `c = z`, and it emits `b + c`. The chain starts
/// in the parity state `(ℓ, 0, 0)` so the first emitted symbol is `x_1`.
pub fn build_lpn_source(a: &[u8], eta: f64) -> Result<HiddenMarkovSource, HmmError> {
    let ell = a.len();
    if ell == 0 {
        return Err(HmmError::InvalidParameter("secret must have at least one bit".into()));
    }
    if a.iter().any(|&x| x > 1) {
        return Err(HmmError::InvalidParameter("secret must be a bit string".into()));
    }
    if !(0.0..=0.5).contains(&eta) {
        return Err(HmmError::InvalidParameter(format!("eta = {eta} not in [0, 1/2]")));
    }
    let n_states = 4 * (ell + 1);
    let mut transition = vec![vec![0.0; n_states]; n_states];
    let mut emissions = vec![vec![0.0; 2]; n_states];
    for i in 0..=ell {
        for b in 0..2u8 {
            for c in 0..2u8 {
                let s = lpn_state_index(i, b, c);
                if i < ell {
                    emissions[s][c as usize] = 1.0;
                    let nb = b ^ (a[i] & c);
                    if i + 1 < ell {
                        transition[s][lpn_state_index(i + 1, nb, 0)] = 0.5;
                        transition[s][lpn_state_index(i + 1, nb, 1)] = 0.5;
                    } else {
                        transition[s][lpn_state_index(ell, nb, 0)] = 1.0 - eta;
                        transition[s][lpn_state_index(ell, nb, 1)] += eta;
                    }
                } else {
                    emissions[s][(b ^ c) as usize] = 1.0;
                    transition[s][lpn_state_index(0, 0, 0)] = 0.5;
                    transition[s][lpn_state_index(0, 0, 1)] = 0.5;
                }
            }
        }
    }
    let mut initial = vec![0.0; n_states];
    initial[lpn_state_index(ell, 0, 0)] = 1.0;
    let bits: String = a.iter().map(|b| if *b == 1 { '1' } else { '0' }).collect();
    let chain = MarkovChain::new(transition, initial)?;
    HiddenMarkovSource::new(format!("lpn-{bits}-{eta}"), chain, FieldModulus::new(2)?, emissions, None)
}
