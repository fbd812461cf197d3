//! Linear codes for additive channels whose noise is a hidden Markov source.
//!
//! Codewords span the nullspace of the compressor: the coordinates the
//! compressor emits are zero in the transformed domain, so compressing a
//! received word yields the compressed noise. Decompressing that gives a
//! noise estimate, and subtracting it recovers the codeword.

use rayon::prelude::*;
use thiserror::Error;

use crate::codec::{compress, decompress, CodecError, SelectionSets};
use crate::field::{FieldError, FieldMatrix, FieldModulus, FieldVector, Symbol};
use crate::hmm::HiddenMarkovSource;
use crate::kernel::{KernelError, TensorTransform};
use crate::util::derive_seed;

pub const TRANSCRIPT_MAGIC: &[u8; 4] = b"PLHT";
pub const TRANSCRIPT_VERSION: u8 = 1;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ChannelError {
    #[error("code has no message coordinates (every coordinate is selected)")]
    Degenerate,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("decode failure: {0}")]
    DecodeFailure(CodecError),
    #[error("malformed transcript: {0}")]
    Format(String),
    #[error(transparent)]
    Codec(CodecError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

impl From<CodecError> for ChannelError {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::Inference { .. } | CodecError::CrcMismatch => ChannelError::DecodeFailure(e),
            other => ChannelError::Codec(other),
        }
    }
}

/// The code whose messages fill the coordinates the compressor leaves out.
#[derive(Debug, Clone)]
pub struct ChannelCode {
    sets: SelectionSets,
    tt: TensorTransform,
    /// `(column, row)` of each message symbol, lexicographic.
    message_coords: Vec<(usize, usize)>,
}

impl ChannelCode {
    pub fn new(sets: SelectionSets, tt: TensorTransform) -> Result<Self, ChannelError> {
        let m = tt.m();
        if sets.m() != m {
            return Err(ChannelError::LengthMismatch { expected: m, got: sets.m() });
        }
        let message_coords: Vec<(usize, usize)> = (0..m)
            .flat_map(|j| (0..m).map(move |i| (j, i)))
            .filter(|&(j, i)| !sets.set(j).contains(i))
            .collect();
        if message_coords.is_empty() {
            return Err(ChannelError::Degenerate);
        }
        Ok(Self { sets, tt, message_coords })
    }

    pub fn sets(&self) -> &SelectionSets {
        &self.sets
    }

    pub fn transform(&self) -> &TensorTransform {
        &self.tt
    }

    pub fn modulus(&self) -> FieldModulus {
        self.tt.modulus()
    }

    pub fn m(&self) -> usize {
        self.tt.m()
    }

    /// Block length `n = m²`.
    pub fn block_length(&self) -> usize {
        self.m() * self.m()
    }

    /// `r = n - Σ_j |S_j|`.
    pub fn message_length(&self) -> usize {
        self.message_coords.len()
    }

    pub fn rate(&self) -> f64 {
        self.message_length() as f64 / self.block_length() as f64
    }

    pub fn message_coordinates(&self) -> &[(usize, usize)] {
        &self.message_coords
    }

    /// Places `x` at the message coordinates of an otherwise zero transform
    /// domain and inverts the column transform.
    pub fn encode(&self, x: &FieldVector) -> Result<FieldMatrix, ChannelError> {
        if x.len() != self.message_length() {
            return Err(ChannelError::LengthMismatch { expected: self.message_length(), got: x.len() });
        }
        if x.modulus() != self.modulus() {
            return Err(FieldError::ModulusMismatch(self.modulus().q(), x.modulus().q()).into());
        }
        let m = self.m();
        let mut u = FieldMatrix::zeros(self.modulus(), m, m);
        for (&(j, i), &v) in self.message_coords.iter().zip(x.as_slice()) {
            u.set(i, j, v);
        }
        Ok(self.tt.apply_inverse_columns(&u)?)
    }

    /// Message symbols read off a codeword (or any word) in the transform domain.
    pub fn extract(&self, c: &FieldMatrix) -> Result<FieldVector, ChannelError> {
        let u = self.tt.apply_columns(c)?;
        let x = self.message_coords.iter().map(|&(j, i)| u.get(i, j)).collect();
        Ok(FieldVector::from_symbols(self.modulus(), x)?)
    }

    /// Estimates the noise by decompressing the compressed received word,
    /// then reads the message off `z - ŷ`.
    pub fn decode(&self, src: &HiddenMarkovSource, z: &FieldMatrix) -> Result<Decoded, ChannelError> {
        let payload = compress(z, &self.sets, &self.tt)?;
        let noise = decompress(src, &payload, &self.sets, &self.tt)?;
        let f = self.modulus();
        let diff: Vec<Symbol> = z.as_slice().iter().zip(noise.as_slice()).map(|(&a, &b)| f.sub(a, b)).collect();
        let codeword = FieldMatrix::from_row_major(f, self.m(), self.m(), diff)?;
        let message = self.extract(&codeword)?;
        Ok(Decoded { message, noise })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub message: FieldVector,
    pub noise: FieldMatrix,
}

/// Adds noise drawn row-major from `src` with `seed`.
pub fn transmit(src: &HiddenMarkovSource, c: &FieldMatrix, seed: u64) -> Result<FieldMatrix, ChannelError> {
    if c.rows() != c.cols() {
        return Err(ChannelError::LengthMismatch { expected: c.rows(), got: c.cols() });
    }
    let y = src.sample_matrix(c.rows(), seed);
    let f = c.modulus();
    let z = c.as_slice().iter().zip(y.as_slice()).map(|(&a, &b)| f.add(a, b)).collect();
    Ok(FieldMatrix::from_row_major(f, c.rows(), c.cols(), z)?)
}

/// Everything that crossed the channel in one use.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTranscript {
    pub message: FieldVector,
    pub codeword: FieldMatrix,
    pub noise: FieldMatrix,
    pub received: FieldMatrix,
}

impl ChannelTranscript {
    /// Encodes `x`, draws noise with `seed` and records all four words.
    pub fn run(code: &ChannelCode, src: &HiddenMarkovSource, x: FieldVector, seed: u64) -> Result<Self, ChannelError> {
        let codeword = code.encode(&x)?;
        let noise = src.sample_matrix(code.m(), seed);
        let received = transmit(src, &codeword, seed)?;
        Ok(Self { message: x, codeword, noise, received })
    }

    /// `"PLHT"`, version u8, q u16, m u32, r u32, then x, c, y, z as u16 LE
    /// symbols (matrices row-major).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(TRANSCRIPT_MAGIC);
        out.push(TRANSCRIPT_VERSION);
        out.extend_from_slice(&(self.message.modulus().q() as u16).to_le_bytes());
        out.extend_from_slice(&(self.codeword.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(self.message.len() as u32).to_le_bytes());
        let words = [self.message.as_slice(), self.codeword.as_slice(), self.noise.as_slice(), self.received.as_slice()];
        for w in words {
            for &s in w {
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ChannelError> {
        let bad = |s: &str| ChannelError::Format(s.to_string());
        if bytes.len() < 15 || &bytes[..4] != TRANSCRIPT_MAGIC {
            return Err(bad("bad magic"));
        }
        if bytes[4] != TRANSCRIPT_VERSION {
            return Err(bad("unsupported version"));
        }
        let f = FieldModulus::new(u16::from_le_bytes([bytes[5], bytes[6]]) as u32)?;
        let m = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
        let r = u32::from_le_bytes(bytes[11..15].try_into().unwrap()) as usize;
        let n = m.checked_mul(m).ok_or_else(|| bad("bad m"))?;
        let total = r + 3 * n;
        if bytes.len() != 15 + 2 * total {
            return Err(bad("length does not match header"));
        }
        let syms: Vec<Symbol> = bytes[15..].chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        let matrix = |s: &[Symbol]| FieldMatrix::from_row_major(f, m, m, s.to_vec());
        Ok(Self {
            message: FieldVector::from_symbols(f, syms[..r].to_vec())?,
            codeword: matrix(&syms[r..r + n])?,
            noise: matrix(&syms[r + n..r + 2 * n])?,
            received: matrix(&syms[r + 2 * n..])?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelReport {
    pub trials: usize,
    /// Trials where the decoded message differs from the sent one.
    pub message_failures: usize,
    /// Trials where the noise estimate differs from the true noise.
    pub noise_failures: usize,
    /// Trials with an exact noise estimate but a wrong message; always 0
    /// for a correct implementation.
    pub implication_violations: usize,
    pub rate: f64,
}

/// Runs `trials` uniformly random messages through the channel. Trial `i`
/// draws its message from `derive_seed(seed, 2i)` and its noise from
/// `derive_seed(seed, 2i + 1)`.
pub fn simulate(code: &ChannelCode, src: &HiddenMarkovSource, trials: usize, seed: u64) -> Result<ChannelReport, ChannelError> {
    use rand::{Rng, SeedableRng};
    let q = code.modulus().q();
    let outcomes: Vec<Result<(bool, bool), ChannelError>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, 2 * trial as u64));
            let x: Vec<Symbol> = (0..code.message_length()).map(|_| rng.gen_range(0..q) as Symbol).collect();
            let x = FieldVector::from_symbols(code.modulus(), x)?;
            let tr = ChannelTranscript::run(code, src, x, derive_seed(seed, 2 * trial as u64 + 1))?;
            match code.decode(src, &tr.received) {
                Ok(d) => Ok((d.message == tr.message, d.noise == tr.noise)),
                Err(ChannelError::DecodeFailure(_)) => Ok((false, false)),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut report = ChannelReport { trials, message_failures: 0, noise_failures: 0, implication_violations: 0, rate: code.rate() };
    for o in outcomes {
        let (msg_ok, noise_ok) = o?;
        report.message_failures += usize::from(!msg_ok);
        report.noise_failures += usize::from(!noise_ok);
        report.implication_violations += usize::from(noise_ok && !msg_ok);
    }
    Ok(report)
}
