//! Column-wise polar compression and successive-cancellation decompression.
//!
//! The input `Z` is an `m x m` matrix filled row-major from the source
//! stream, so row `i` holds time steps `i*m .. (i+1)*m` and each column
//! samples well-separated time points. Every column is transformed by
//! `P_m = M^{⊗t}`; columns before the boundary `j* = floor((1-ε)m)` emit only
//! their selected coordinates, the rest are emitted in full.
//!
//! Decompression treats rows as independent copies of the source, so the
//! conditional law of column `j` given the decoded columns `< j` is a product
//! of per-row next-symbol laws from the forward algorithm.

use rayon::prelude::*;
use thiserror::Error;

use crate::field::{FieldError, FieldMatrix, FieldModulus, FieldVector, Symbol};
use crate::hmm::{ForwardState, HiddenMarkovSource, HmmError};
use crate::kernel::{KernelError, TensorTransform};
use crate::util::{argmax_smallest, derive_seed};

pub const PAYLOAD_MAGIC: &[u8; 4] = b"PLHM";
pub const PAYLOAD_VERSION: u8 = 1;
const FLAG_CRC: u8 = 1;

/// Largest block the exhaustive SC oracle will materialize.
pub const ORACLE_MAX_M: usize = 16;
const ORACLE_MAX_STATES: usize = 1 << 22;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum CodecError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid selection sets: {0}")]
    InvalidSets(String),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("model hash mismatch: payload {payload:#018x}, model {model:#018x}")]
    ModelMismatch { payload: u64, model: u64 },
    #[error("SC oracle limited to m <= {ORACLE_MAX_M} and q^m <= 2^22 (got m = {m}, q = {q})")]
    OracleTooLarge { m: usize, q: u32 },
    #[error("decode failure in column {column}: {source}")]
    Inference { column: usize, source: HmmError },
    #[error("decoded block fails its CRC check")]
    CrcMismatch,
    #[error("malformed payload: {0}")]
    Format(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// A fixed-length bitmap, LSB-first within 64-bit words.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Bitmap {
    len: usize,
    words: Vec<u64>,
}

impl Bitmap {
    pub fn empty(len: usize) -> Self {
        Self { len, words: vec![0; len.div_ceil(64)] }
    }

    pub fn full(len: usize) -> Self {
        let mut b = Self::empty(len);
        for i in 0..len {
            b.insert(i);
        }
        b
    }

    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut b = Self::empty(len);
        for i in indices {
            b.insert(i);
        }
        b
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Self::from_indices(bits.len(), bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn insert(&mut self, i: usize) {
        assert!(i < self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.len && self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.contains(i))
    }

    /// `ceil(len / 8)` bytes, bit `i` at byte `i / 8`, position `i % 8`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len.div_ceil(8)];
        for i in self.iter() {
            out[i / 8] |= 1 << (i % 8);
        }
        out
    }

    pub fn from_bytes(len: usize, bytes: &[u8]) -> Self {
        Self::from_indices(len, (0..len).filter(|&i| bytes[i / 8] >> (i % 8) & 1 == 1))
    }
}

/// Boundary column count `j* = floor((1 - ε) m)`; columns `0..j*` are compressed.
pub fn boundary_column(m: usize, epsilon: f64) -> usize {
    (((1.0 - epsilon) * m as f64) + 1e-9).floor() as usize
}

/// Per-column selected coordinates `S_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionSets {
    m: usize,
    epsilon: f64,
    model_hash: u64,
    sets: Vec<Bitmap>,
}

impl SelectionSets {
    /// `sets` must hold `m` bitmaps of `m` bits; entries for columns at or
    /// beyond the boundary are replaced by full sets.
    pub fn new(m: usize, epsilon: f64, model_hash: u64, mut sets: Vec<Bitmap>) -> Result<Self, CodecError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(CodecError::InvalidSets(format!("epsilon {epsilon} not in (0, 1)")));
        }
        if sets.len() != m || sets.iter().any(|s| s.len() != m) {
            return Err(CodecError::InvalidSets(format!("expected {m} bitmaps of {m} bits")));
        }
        let boundary = boundary_column(m, epsilon);
        for s in &mut sets[boundary..] {
            *s = Bitmap::full(m);
        }
        Ok(Self { m, epsilon, model_hash, sets })
    }

    pub fn full(m: usize, epsilon: f64, model_hash: u64) -> Result<Self, CodecError> {
        Self::new(m, epsilon, model_hash, vec![Bitmap::full(m); m])
    }

    /// Empty sets before the boundary.
    pub fn empty(m: usize, epsilon: f64, model_hash: u64) -> Result<Self, CodecError> {
        Self::new(m, epsilon, model_hash, vec![Bitmap::empty(m); m])
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn model_hash(&self) -> u64 {
        self.model_hash
    }

    pub fn boundary(&self) -> usize {
        boundary_column(self.m, self.epsilon)
    }

    pub fn is_compressed(&self, column: usize) -> bool {
        column < self.boundary()
    }

    pub fn set(&self, column: usize) -> &Bitmap {
        &self.sets[column]
    }

    pub fn sets(&self) -> &[Bitmap] {
        &self.sets
    }

    /// `Σ_j |S_j|`, counting full tail columns.
    pub fn total_symbols(&self) -> usize {
        self.sets.iter().map(Bitmap::count).sum()
    }

    /// Achieved rate `Σ_j |S_j| / m²`.
    pub fn rate(&self) -> f64 {
        self.total_symbols() as f64 / (self.m * self.m) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PayloadHeader {
    pub q: u32,
    pub k: u8,
    pub t: u8,
    pub epsilon: f64,
    pub model_hash: u64,
    /// CRC-32 of `Z` (row-major, u16 LE per symbol) when present.
    pub crc: Option<u32>,
}

impl PayloadHeader {
    pub fn m(&self) -> usize {
        (self.k as usize).pow(self.t as u32)
    }
}

/// Output of the compressor: per column, the selected transformed symbols in
/// increasing index order.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedPayload {
    pub header: PayloadHeader,
    pub columns: Vec<Vec<Symbol>>,
}

impl CompressedPayload {
    pub fn total_symbols(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    /// Symbols of every column concatenated.
    pub fn symbols(&self) -> Vec<Symbol> {
        self.columns.concat()
    }

    /// Binary encoding; `sets` supplies the bitmaps written before each
    /// compressed column.
    pub fn to_bytes(&self, sets: &SelectionSets) -> Result<Vec<u8>, CodecError> {
        let h = &self.header;
        let m = h.m();
        if sets.m() != m || sets.epsilon() != h.epsilon || self.columns.len() != m {
            return Err(CodecError::HeaderMismatch("sets do not match payload".into()));
        }
        let q = u16::try_from(h.q).map_err(|_| CodecError::Format("q does not fit u16".into()))?;
        let bits = FieldModulus::new(h.q)?.bits_per_symbol();
        let mut out = Vec::new();
        out.extend_from_slice(PAYLOAD_MAGIC);
        out.push(PAYLOAD_VERSION);
        out.extend_from_slice(&q.to_le_bytes());
        out.push(h.k);
        out.push(h.t);
        out.extend_from_slice(&h.epsilon.to_le_bytes());
        out.push(if h.crc.is_some() { FLAG_CRC } else { 0 });
        out.extend_from_slice(&h.model_hash.to_le_bytes());
        for (j, col) in self.columns.iter().enumerate() {
            if sets.is_compressed(j) {
                if sets.set(j).count() != col.len() {
                    return Err(CodecError::HeaderMismatch(format!("column {j} length differs from its set")));
                }
                out.extend_from_slice(&sets.set(j).to_bytes());
            } else if col.len() != m {
                return Err(CodecError::HeaderMismatch(format!("tail column {j} is not full")));
            }
            pack_symbols(col, bits, &mut out);
        }
        if let Some(crc) = h.crc {
            out.extend_from_slice(&crc.to_le_bytes());
        }
        Ok(out)
    }

    /// Parses a payload and recovers the selection bitmaps it carries.
    pub fn from_bytes(bytes: &[u8]) -> Result<(CompressedPayload, Vec<Bitmap>), CodecError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != PAYLOAD_MAGIC {
            return Err(CodecError::Format("bad magic".into()));
        }
        let version = r.u8()?;
        if version != PAYLOAD_VERSION {
            return Err(CodecError::Format(format!("unsupported version {version}")));
        }
        let q = r.u16()? as u32;
        let k = r.u8()?;
        let t = r.u8()?;
        let epsilon = r.f64()?;
        let flags = r.u8()?;
        let model_hash = r.u64()?;
        let modulus = FieldModulus::new(q)?;
        let bits = modulus.bits_per_symbol();
        let m = (k as usize)
            .checked_pow(t as u32)
            .filter(|&m| m > 0 && m <= 1 << 16)
            .ok_or_else(|| CodecError::Format("bad k/t".into()))?;
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(CodecError::Format(format!("epsilon {epsilon} out of range")));
        }
        let boundary = boundary_column(m, epsilon);
        let mut columns = Vec::with_capacity(m);
        let mut bitmaps = Vec::with_capacity(m);
        for j in 0..m {
            let (bitmap, count) = if j < boundary {
                let b = Bitmap::from_bytes(m, r.take(m.div_ceil(8))?);
                let c = b.count();
                (b, c)
            } else {
                (Bitmap::full(m), m)
            };
            let col = unpack_symbols(r.take((count * bits as usize).div_ceil(8))?, count, bits);
            for &v in &col {
                modulus.check(v as u32)?;
            }
            columns.push(col);
            bitmaps.push(bitmap);
        }
        let crc = if flags & FLAG_CRC != 0 {
            Some(u32::from_le_bytes(r.take(4)?.try_into().unwrap()))
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(CodecError::Format("trailing bytes".into()));
        }
        let header = PayloadHeader { q, k, t, epsilon, model_hash, crc };
        Ok((CompressedPayload { header, columns }, bitmaps))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CodecError::Format("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Packs symbols LSB-first, `bits` each, padded to a byte boundary.
pub fn pack_symbols(symbols: &[Symbol], bits: u32, out: &mut Vec<u8>) {
    let start = out.len();
    out.resize(start + (symbols.len() * bits as usize).div_ceil(8), 0);
    let mut pos = 0usize;
    for &s in symbols {
        for b in 0..bits {
            if s >> b & 1 == 1 {
                out[start + pos / 8] |= 1 << (pos % 8);
            }
            pos += 1;
        }
    }
}

pub fn unpack_symbols(bytes: &[u8], count: usize, bits: u32) -> Vec<Symbol> {
    let mut pos = 0usize;
    (0..count)
        .map(|_| {
            let mut v: Symbol = 0;
            for b in 0..bits {
                if bytes[pos / 8] >> (pos % 8) & 1 == 1 {
                    v |= 1 << b;
                }
                pos += 1;
            }
            v
        })
        .collect()
}

/// CRC-32 of a matrix, row-major with each symbol as u16 LE.
pub fn matrix_crc(z: &FieldMatrix) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for &v in z.as_slice() {
        h.update(&v.to_le_bytes());
    }
    h.finalize()
}

fn check_block(z: &FieldMatrix, sets: &SelectionSets, tt: &TensorTransform) -> Result<(), CodecError> {
    let m = tt.m();
    if sets.m() != m {
        return Err(CodecError::Shape(format!("sets are for m = {}, transform has m = {m}", sets.m())));
    }
    if z.rows() != m || z.cols() != m {
        return Err(CodecError::Shape(format!("expected {m}x{m} block, got {}x{}", z.rows(), z.cols())));
    }
    if z.modulus() != tt.modulus() {
        return Err(FieldError::ModulusMismatch(tt.modulus().q(), z.modulus().q()).into());
    }
    Ok(())
}

fn header_for(sets: &SelectionSets, tt: &TensorTransform, crc: Option<u32>) -> Result<PayloadHeader, CodecError> {
    let k = u8::try_from(tt.k()).map_err(|_| CodecError::Shape("k does not fit u8".into()))?;
    let t = u8::try_from(tt.t()).map_err(|_| CodecError::Shape("t does not fit u8".into()))?;
    Ok(PayloadHeader { q: tt.modulus().q(), k, t, epsilon: sets.epsilon(), model_hash: sets.model_hash(), crc })
}

/// Transforms every column and keeps `U^j_{S_j}` (the full column past the
/// boundary). Linear in `Z` for fixed sets.
pub fn compress(z: &FieldMatrix, sets: &SelectionSets, tt: &TensorTransform) -> Result<CompressedPayload, CodecError> {
    check_block(z, sets, tt)?;
    let u = tt.apply_columns(z)?;
    let columns = (0..tt.m())
        .map(|j| sets.set(j).iter().map(|i| u.get(i, j)).collect())
        .collect();
    Ok(CompressedPayload { header: header_for(sets, tt, None)?, columns })
}

/// As [`compress`], with a CRC-32 of `Z` appended so decompression can
/// self-check. The CRC makes the payload map non-linear.
pub fn compress_with_crc(
    z: &FieldMatrix,
    sets: &SelectionSets,
    tt: &TensorTransform,
) -> Result<CompressedPayload, CodecError> {
    let mut p = compress(z, sets, tt)?;
    p.header.crc = Some(matrix_crc(z));
    Ok(p)
}

/// `m` independent marginals over `F_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductPrior {
    q: usize,
    marginals: Vec<Vec<f64>>,
}

impl ProductPrior {
    pub fn new(q: usize, marginals: Vec<Vec<f64>>) -> Result<Self, CodecError> {
        for (i, p) in marginals.iter().enumerate() {
            if p.len() != q {
                return Err(CodecError::InvalidPrior(format!("marginal {i} has length {}", p.len())));
            }
            if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(CodecError::InvalidPrior(format!("marginal {i} has a bad entry")));
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(CodecError::InvalidPrior(format!("marginal {i} sums to {s}")));
            }
        }
        Ok(Self { q, marginals })
    }

    pub fn iid(q: usize, marginal: Vec<f64>, m: usize) -> Result<Self, CodecError> {
        Self::new(q, vec![marginal; m])
    }

    pub fn len(&self) -> usize {
        self.marginals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marginals.is_empty()
    }

    pub fn marginals(&self) -> &[Vec<f64>] {
        &self.marginals
    }
}

fn check_decode_inputs(prior: &ProductPrior, known: &[Option<Symbol>], tt: &TensorTransform) -> Result<(), CodecError> {
    let m = tt.m();
    if prior.len() != m || known.len() != m {
        return Err(CodecError::Shape(format!(
            "prior has {} marginals and {} known slots for m = {m}",
            prior.len(),
            known.len()
        )));
    }
    if prior.q != tt.modulus().size() {
        return Err(CodecError::InvalidPrior(format!("prior is over {} symbols, field has {}", prior.q, tt.modulus().q())));
    }
    for &v in known.iter().flatten() {
        tt.modulus().check(v as u32)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScDecodeOutput {
    /// The decoded transform vector `Û`.
    pub u: FieldVector,
    /// Set when a known symbol had zero probability; later marginals were
    /// taken as uniform.
    pub hit_zero_probability: bool,
}

/// Reference successive-cancellation decoder over the explicit joint law of
/// `U = M^{⊗t} Z`. Exponential in `m`; used to check [`fast_decode`].
///
/// Coordinates in `known` are copied; the rest take the argmax of their
/// conditional law given the already-fixed prefix (ties to the smallest
/// element).
pub fn sc_decode_oracle(
    prior: &ProductPrior,
    known: &[Option<Symbol>],
    tt: &TensorTransform,
) -> Result<ScDecodeOutput, CodecError> {
    check_decode_inputs(prior, known, tt)?;
    let m = tt.m();
    let f = tt.modulus();
    let q = f.size();
    if m > ORACLE_MAX_M || (q as f64).powi(m as i32) > ORACLE_MAX_STATES as f64 {
        return Err(CodecError::OracleTooLarge { m, q: f.q() });
    }
    let mut explicit = FieldMatrix::identity(f, 1);
    for _ in 0..tt.t() {
        explicit = explicit.kronecker(tt.kernel().matrix())?;
    }
    let total = q.pow(m as u32);
    let mut alive: Vec<(Vec<Symbol>, f64)> = Vec::with_capacity(total);
    let mut z = vec![0 as Symbol; m];
    for code in 0..total {
        let mut c = code;
        let mut w = 1.0;
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = (c % q) as Symbol;
            c /= q;
            w *= prior.marginals[i][*zi as usize];
        }
        alive.push((explicit.mat_vec_slice(&z), w));
    }
    let mut poisoned = false;
    let mut u_hat = Vec::with_capacity(m);
    for (i, k) in known.iter().enumerate() {
        let mut marginal = vec![0.0; q];
        for (u, w) in &alive {
            marginal[u[i] as usize] += w;
        }
        let mass: f64 = marginal.iter().sum();
        if poisoned || !(mass > 0.0) {
            marginal = vec![1.0; q];
        }
        let v = k.unwrap_or_else(|| argmax_smallest(&marginal));
        if !poisoned && marginal[v as usize] == 0.0 {
            poisoned = true;
        }
        alive.retain(|(u, _)| u[i] == v);
        u_hat.push(v);
    }
    Ok(ScDecodeOutput { u: FieldVector::from_symbols(f, u_hat)?, hit_zero_probability: poisoned })
}

/// Kernel lookup shared by every node of one fast decode.
struct DecodeContext<'a> {
    q: usize,
    k: usize,
    /// `M z` for every `z` in mixed radix (first coordinate least significant).
    images: Vec<Vec<Symbol>>,
    inverse: &'a FieldMatrix,
}

impl<'a> DecodeContext<'a> {
    fn new(tt: &'a TensorTransform) -> Self {
        let q = tt.modulus().size();
        let k = tt.k();
        let kernel = tt.kernel().matrix();
        let images = (0..q.pow(k as u32))
            .map(|code| {
                let z: Vec<Symbol> = (0..k).map(|c| (code / q.pow(c as u32) % q) as Symbol).collect();
                kernel.mat_vec_slice(&z)
            })
            .collect();
        Self { q, k, images, inverse: tt.kernel().inverse() }
    }

    fn uniform(&self) -> Vec<f64> {
        vec![1.0 / self.q as f64; self.q]
    }
}

/// Incremental SC decoder for one instance of `M^{⊗s}`.
///
/// Writing `M^{⊗s} = M^{⊗(s-1)} ⊗ M`, child `c` decodes the stride-`k`
/// subsequence `c, c+k, c+2k, ...` of the input. Output block `b` of this
/// node is `M (V^{(0)}_b, ..., V^{(k-1)}_b)` where `V^{(c)}_b` is child `c`'s
/// `b`-th output; the children are independent, so their laws multiply.
enum ScNode {
    Leaf {
        prior: Vec<f64>,
        value: Symbol,
    },
    Inner {
        children: Vec<ScNode>,
        /// Product weight of each `z` in the current block.
        joint: Vec<f64>,
        block: Vec<Symbol>,
    },
}

impl ScNode {
    fn build(marginals: &[Vec<f64>], k: usize) -> ScNode {
        if marginals.len() == 1 {
            return ScNode::Leaf { prior: marginals[0].clone(), value: 0 };
        }
        let children = (0..k)
            .map(|c| {
                let sub: Vec<Vec<f64>> = marginals.iter().skip(c).step_by(k).cloned().collect();
                ScNode::build(&sub, k)
            })
            .collect();
        ScNode::Inner { children, joint: Vec::new(), block: Vec::with_capacity(k) }
    }

    /// Law of the next output given every output fixed so far.
    fn next_law(&mut self, ctx: &DecodeContext) -> Vec<f64> {
        match self {
            ScNode::Leaf { prior, .. } => prior.clone(),
            ScNode::Inner { children, joint, block } => {
                if block.is_empty() {
                    let laws: Vec<Vec<f64>> = children.iter_mut().map(|c| c.next_law(ctx)).collect();
                    *joint = (0..ctx.images.len())
                        .map(|code| {
                            let mut w = 1.0;
                            let mut rest = code;
                            for law in &laws {
                                w *= law[rest % ctx.q];
                                rest /= ctx.q;
                            }
                            w
                        })
                        .collect();
                }
                let a = block.len();
                let mut law = vec![0.0; ctx.q];
                for (w, u) in joint.iter().zip(&ctx.images) {
                    if *w > 0.0 && u[..a] == block[..] {
                        law[u[a] as usize] += w;
                    }
                }
                let mass: f64 = law.iter().sum();
                if mass > 0.0 {
                    law.iter_mut().for_each(|x| *x /= mass);
                    law
                } else {
                    ctx.uniform()
                }
            }
        }
    }

    fn fix(&mut self, v: Symbol, ctx: &DecodeContext) {
        match self {
            ScNode::Leaf { value, .. } => *value = v,
            ScNode::Inner { children, block, .. } => {
                block.push(v);
                if block.len() == ctx.k {
                    let inputs = ctx.inverse.mat_vec_slice(block);
                    for (child, &x) in children.iter_mut().zip(&inputs) {
                        child.fix(x, ctx);
                    }
                    block.clear();
                }
            }
        }
    }

    fn collect(&self, out: &mut [Symbol], offset: usize, stride: usize, k: usize) {
        match self {
            ScNode::Leaf { value, .. } => out[offset] = *value,
            ScNode::Inner { children, .. } => {
                for (c, child) in children.iter().enumerate() {
                    child.collect(out, offset + c * stride, stride * k, k);
                }
            }
        }
    }
}

/// Fast successive-cancellation decoder: returns `Ẑ` with
/// `M^{⊗t} Ẑ = sc_decode_oracle(prior, known)` in `O(m log m · k q^k)` time.
pub fn fast_decode(
    prior: &ProductPrior,
    known: &[Option<Symbol>],
    tt: &TensorTransform,
) -> Result<FieldVector, CodecError> {
    check_decode_inputs(prior, known, tt)?;
    let ctx = DecodeContext::new(tt);
    let m = tt.m();
    let mut root = ScNode::build(&prior.marginals, ctx.k);
    let mut poisoned = false;
    for k in known {
        let law = if poisoned { ctx.uniform() } else { root.next_law(&ctx) };
        let v = k.unwrap_or_else(|| argmax_smallest(&law));
        if law[v as usize] == 0.0 {
            poisoned = true;
        }
        root.fix(v, &ctx);
    }
    let mut z = vec![0; m];
    root.collect(&mut z, 0, 1, ctx.k);
    Ok(FieldVector::from_symbols(tt.modulus(), z)?)
}

fn check_payload(
    src: &HiddenMarkovSource,
    payload: &CompressedPayload,
    sets: &SelectionSets,
    tt: &TensorTransform,
) -> Result<(), CodecError> {
    let h = &payload.header;
    let m = tt.m();
    if h.q != tt.modulus().q() || src.modulus() != tt.modulus() {
        return Err(CodecError::HeaderMismatch(format!("field F_{} vs transform {}", h.q, tt.modulus())));
    }
    if h.k as usize != tt.k() || h.t as u32 != tt.t() {
        return Err(CodecError::HeaderMismatch(format!("k = {}, t = {} vs transform k = {}, t = {}", h.k, h.t, tt.k(), tt.t())));
    }
    if h.epsilon != sets.epsilon() || sets.m() != m {
        return Err(CodecError::HeaderMismatch("epsilon or m differs from the selection sets".into()));
    }
    let model = src.model_hash();
    if h.model_hash != model {
        return Err(CodecError::ModelMismatch { payload: h.model_hash, model });
    }
    if sets.model_hash() != model {
        return Err(CodecError::ModelMismatch { payload: sets.model_hash(), model });
    }
    if payload.columns.len() != m {
        return Err(CodecError::HeaderMismatch(format!("{} columns, expected {m}", payload.columns.len())));
    }
    for (j, col) in payload.columns.iter().enumerate() {
        if col.len() != sets.set(j).count() {
            return Err(CodecError::HeaderMismatch(format!("column {j} length differs from its set")));
        }
    }
    Ok(())
}

/// Reconstructs `Z` from a payload. Column `j` is decoded with the product
/// prior given by each row's forward state after its decoded prefix; the
/// row states advance once per decoded column.
pub fn decompress(
    src: &HiddenMarkovSource,
    payload: &CompressedPayload,
    sets: &SelectionSets,
    tt: &TensorTransform,
) -> Result<FieldMatrix, CodecError> {
    check_payload(src, payload, sets, tt)?;
    let m = tt.m();
    let q = tt.modulus().size();
    let boundary = sets.boundary();
    let mut z = FieldMatrix::zeros(tt.modulus(), m, m);
    let mut states: Vec<ForwardState> = vec![src.initial_state(); m];
    for j in 0..m {
        let mut known = vec![None; m];
        for (i, &v) in sets.set(j).iter().zip(&payload.columns[j]) {
            known[i] = Some(v);
        }
        let column = if j < boundary {
            let marginals = states.iter().map(|s| src.next_symbol_distribution(s)).collect();
            let prior = ProductPrior::new(q, marginals)?;
            let zj = fast_decode(&prior, &known, tt)?;
            if j + 1 < boundary {
                for (st, &y) in states.iter_mut().zip(zj.as_slice()) {
                    *st = src.forward_step(st, y).map_err(|source| CodecError::Inference { column: j, source })?;
                }
            }
            zj.into_inner()
        } else {
            let mut u: Vec<Symbol> = known.iter().map(|v| v.expect("tail columns are full")).collect();
            tt.apply_inverse_in_place(&mut u);
            u
        };
        z.set_column(j, &column);
    }
    if let Some(crc) = payload.header.crc {
        if matrix_crc(&z) != crc {
            return Err(CodecError::CrcMismatch);
        }
    }
    Ok(z)
}

/// How the probe draws its test blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockSampling {
    /// One stream of length `m²`, filled row-major.
    Stream,
    /// `m` independent rows of length `m`.
    IndependentRows,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub trials: usize,
    pub failures: usize,
    pub failure_rate: f64,
    /// `Σ_j |S_j| / n`.
    pub rate: f64,
}

/// Round-trips `trials` sampled blocks and counts mismatches. Trial `i`
/// uses seed `derive_seed(seed, i)`; the result does not depend on the
/// thread count.
pub fn decompress_success_probe(
    src: &HiddenMarkovSource,
    sets: &SelectionSets,
    tt: &TensorTransform,
    trials: usize,
    seed: u64,
    sampling: BlockSampling,
) -> Result<ProbeReport, CodecError> {
    let m = tt.m();
    let outcomes: Vec<Result<bool, CodecError>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let s = derive_seed(seed, trial as u64);
            let z = match sampling {
                BlockSampling::Stream => src.sample_matrix(m, s),
                BlockSampling::IndependentRows => src.sample_independent_rows(m, s),
            };
            let payload = compress(&z, sets, tt)?;
            match decompress(src, &payload, sets, tt) {
                Ok(zh) => Ok(zh == z),
                Err(CodecError::Inference { .. }) => Ok(false),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut failures = 0;
    for o in outcomes {
        if !o? {
            failures += 1;
        }
    }
    Ok(ProbeReport {
        trials,
        failures,
        failure_rate: if trials > 0 { failures as f64 / trials as f64 } else { 0.0 },
        rate: sets.rate(),
    })
}
