//! Exact arithmetic over a prime field `F_q` and dense vectors/matrices over it.
//!
//! Elements are stored as bare `Symbol`s; the modulus lives on the container.
//! `q` is capped at `2^16` so `a + b * c` always fits in a `u32`.

use std::fmt;

use thiserror::Error;

/// A field element in `[0, q)`.
pub type Symbol = u16;

/// Largest admissible modulus.
pub const MAX_MODULUS: u32 = 1 << 16;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum FieldError {
    #[error("modulus {0} is not a prime in [2, 65536]")]
    InvalidModulus(u32),
    #[error("entry {value} out of range for modulus {q}")]
    EntryOutOfRange { value: u32, q: u32 },
    #[error("modulus mismatch: {0} vs {1}")]
    ModulusMismatch(u32, u32),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is singular")]
    Singular,
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
}

fn is_prime(q: u32) -> bool {
    if q < 2 {
        return false;
    }
    let mut d = 2u32;
    while d * d <= q {
        if q % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// A prime modulus `q`, verified at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldModulus(u32);

impl FieldModulus {
    pub fn new(q: u32) -> Result<Self, FieldError> {
        if q > MAX_MODULUS || !is_prime(q) {
            return Err(FieldError::InvalidModulus(q));
        }
        Ok(Self(q))
    }

    #[inline]
    pub fn q(self) -> u32 {
        self.0
    }

    #[inline]
    pub fn size(self) -> usize {
        self.0 as usize
    }

    /// Bits needed to store one symbol, `ceil(log2 q)`.
    pub fn bits_per_symbol(self) -> u32 {
        32 - (self.0 - 1).leading_zeros()
    }

    pub fn check(self, value: u32) -> Result<Symbol, FieldError> {
        if value < self.0 {
            Ok(value as Symbol)
        } else {
            Err(FieldError::EntryOutOfRange { value, q: self.0 })
        }
    }

    #[inline]
    pub fn reduce(self, value: u64) -> Symbol {
        (value % self.0 as u64) as Symbol
    }

    #[inline]
    pub fn add(self, a: Symbol, b: Symbol) -> Symbol {
        ((a as u32 + b as u32) % self.0) as Symbol
    }

    #[inline]
    pub fn sub(self, a: Symbol, b: Symbol) -> Symbol {
        ((a as u32 + self.0 - b as u32) % self.0) as Symbol
    }

    #[inline]
    pub fn neg(self, a: Symbol) -> Symbol {
        self.sub(0, a)
    }

    #[inline]
    pub fn mul(self, a: Symbol, b: Symbol) -> Symbol {
        ((a as u32 * b as u32) % self.0) as Symbol
    }

    /// `a + b * c mod q`.
    #[inline]
    pub fn add_mul(self, a: Symbol, b: Symbol, c: Symbol) -> Symbol {
        ((a as u32 + b as u32 * c as u32) % self.0) as Symbol
    }

    pub fn pow(self, base: Symbol, mut exp: u32) -> Symbol {
        let mut acc: Symbol = 1 % self.0 as Symbol;
        let mut b = base;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, b);
            }
            b = self.mul(b, b);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse via Fermat's little theorem.
    pub fn inv(self, a: Symbol) -> Result<Symbol, FieldError> {
        if a == 0 {
            return Err(FieldError::ZeroInverse);
        }
        Ok(self.pow(a, self.0 - 2))
    }

    fn same(self, other: FieldModulus) -> Result<(), FieldError> {
        if self == other {
            Ok(())
        } else {
            Err(FieldError::ModulusMismatch(self.0, other.0))
        }
    }
}

impl fmt::Display for FieldModulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F_{}", self.0)
    }
}

/// A vector over `F_q`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FieldVector {
    modulus: FieldModulus,
    data: Vec<Symbol>,
}

impl FieldVector {
    pub fn zeros(modulus: FieldModulus, len: usize) -> Self {
        Self { modulus, data: vec![0; len] }
    }

    pub fn from_symbols(modulus: FieldModulus, data: Vec<Symbol>) -> Result<Self, FieldError> {
        for &v in &data {
            modulus.check(v as u32)?;
        }
        Ok(Self { modulus, data })
    }

    /// Reduces arbitrary integers mod `q`.
    pub fn from_u64s(modulus: FieldModulus, values: &[u64]) -> Self {
        Self { modulus, data: values.iter().map(|&v| modulus.reduce(v)).collect() }
    }

    pub fn modulus(&self) -> FieldModulus {
        self.modulus
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[Symbol] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Symbol] {
        &mut self.data
    }

    pub fn into_inner(self) -> Vec<Symbol> {
        self.data
    }

    pub fn get(&self, i: usize) -> Symbol {
        self.data[i]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// `self + scale * other`.
    pub fn axpy(&self, scale: Symbol, other: &FieldVector) -> Result<FieldVector, FieldError> {
        self.modulus.same(other.modulus)?;
        if self.len() != other.len() {
            return Err(FieldError::DimensionMismatch { expected: self.len(), got: other.len() });
        }
        let f = self.modulus;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f.add_mul(a, scale, b)).collect();
        Ok(FieldVector { modulus: f, data })
    }

    pub fn scale(&self, s: Symbol) -> FieldVector {
        let f = self.modulus;
        FieldVector { modulus: f, data: self.data.iter().map(|&a| f.mul(a, s)).collect() }
    }

    pub fn sub(&self, other: &FieldVector) -> Result<FieldVector, FieldError> {
        self.axpy(self.modulus.neg(1), other)
    }

    pub fn add(&self, other: &FieldVector) -> Result<FieldVector, FieldError> {
        self.axpy(1, other)
    }
}

/// A dense row-major matrix over `F_q`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FieldMatrix {
    modulus: FieldModulus,
    rows: usize,
    cols: usize,
    data: Vec<Symbol>,
}

impl FieldMatrix {
    pub fn zeros(modulus: FieldModulus, rows: usize, cols: usize) -> Self {
        Self { modulus, rows, cols, data: vec![0; rows * cols] }
    }

    pub fn identity(modulus: FieldModulus, size: usize) -> Self {
        let mut m = Self::zeros(modulus, size, size);
        for i in 0..size {
            m.data[i * size + i] = 1;
        }
        m
    }

    pub fn from_row_major(
        modulus: FieldModulus,
        rows: usize,
        cols: usize,
        data: Vec<Symbol>,
    ) -> Result<Self, FieldError> {
        if data.len() != rows * cols {
            return Err(FieldError::DimensionMismatch { expected: rows * cols, got: data.len() });
        }
        for &v in &data {
            modulus.check(v as u32)?;
        }
        Ok(Self { modulus, rows, cols, data })
    }

    /// Builds a matrix from nested rows; entries are checked, not reduced.
    pub fn from_rows(modulus: FieldModulus, rows: &[Vec<u32>]) -> Result<Self, FieldError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(FieldError::DimensionMismatch { expected: c, got: row.len() });
            }
            for &v in row {
                data.push(modulus.check(v)?);
            }
        }
        Ok(Self { modulus, rows: r, cols: c, data })
    }

    pub fn modulus(&self) -> FieldModulus {
        self.modulus
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Symbol {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Symbol) {
        debug_assert!((v as u32) < self.modulus.q());
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[Symbol] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[Symbol] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> FieldVector {
        let data = (0..self.rows).map(|r| self.get(r, c)).collect();
        FieldVector { modulus: self.modulus, data }
    }

    pub fn set_column(&mut self, c: usize, v: &[Symbol]) {
        assert_eq!(v.len(), self.rows);
        for (r, &x) in v.iter().enumerate() {
            self.set(r, c, x);
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<u32>> {
        (0..self.rows).map(|r| self.row(r).iter().map(|&v| v as u32).collect()).collect()
    }

    pub fn transpose(&self) -> FieldMatrix {
        let mut out = FieldMatrix::zeros(self.modulus, self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    pub fn mat_vec(&self, v: &FieldVector) -> Result<FieldVector, FieldError> {
        self.modulus.same(v.modulus)?;
        if v.len() != self.cols {
            return Err(FieldError::DimensionMismatch { expected: self.cols, got: v.len() });
        }
        Ok(FieldVector { modulus: self.modulus, data: self.mat_vec_slice(v.as_slice()) })
    }

    /// Unchecked variant over raw symbols; `v.len()` must equal `cols`.
    pub fn mat_vec_slice(&self, v: &[Symbol]) -> Vec<Symbol> {
        let q = self.modulus.q() as u64;
        (0..self.rows)
            .map(|r| {
                let acc = self
                    .row(r)
                    .iter()
                    .zip(v)
                    .fold(0u64, |acc, (&a, &b)| (acc + a as u64 * b as u64) % q);
                acc as Symbol
            })
            .collect()
    }

    pub fn mul(&self, other: &FieldMatrix) -> Result<FieldMatrix, FieldError> {
        self.modulus.same(other.modulus)?;
        if self.cols != other.rows {
            return Err(FieldError::DimensionMismatch { expected: self.cols, got: other.rows });
        }
        let f = self.modulus;
        let mut out = FieldMatrix::zeros(f, self.rows, other.cols);
        for r in 0..self.rows {
            for i in 0..self.cols {
                let a = self.get(r, i);
                if a == 0 {
                    continue;
                }
                for c in 0..other.cols {
                    let v = f.add_mul(out.get(r, c), a, other.get(i, c));
                    out.set(r, c, v);
                }
            }
        }
        Ok(out)
    }

    /// Inverse by Gauss-Jordan elimination.
    pub fn inverse(&self) -> Result<FieldMatrix, FieldError> {
        if !self.is_square() {
            return Err(FieldError::NotSquare { rows: self.rows, cols: self.cols });
        }
        let n = self.rows;
        let f = self.modulus;
        let mut a = self.clone();
        let mut inv = FieldMatrix::identity(f, n);
        for col in 0..n {
            let pivot = (col..n).find(|&r| a.get(r, col) != 0).ok_or(FieldError::Singular)?;
            if pivot != col {
                a.swap_rows(pivot, col);
                inv.swap_rows(pivot, col);
            }
            let p_inv = f.inv(a.get(col, col))?;
            a.scale_row(col, p_inv);
            inv.scale_row(col, p_inv);
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a.get(r, col);
                if factor == 0 {
                    continue;
                }
                let neg = f.neg(factor);
                a.add_row_multiple(r, col, neg);
                inv.add_row_multiple(r, col, neg);
            }
        }
        Ok(inv)
    }

    pub fn is_invertible(&self) -> bool {
        self.is_square() && self.inverse().is_ok()
    }

    /// Kronecker product `self ⊗ other`; the left factor indexes the outer digit.
    pub fn kronecker(&self, other: &FieldMatrix) -> Result<FieldMatrix, FieldError> {
        self.modulus.same(other.modulus)?;
        let f = self.modulus;
        let mut out = FieldMatrix::zeros(f, self.rows * other.rows, self.cols * other.cols);
        for r1 in 0..self.rows {
            for c1 in 0..self.cols {
                let a = self.get(r1, c1);
                for r2 in 0..other.rows {
                    for c2 in 0..other.cols {
                        out.set(r1 * other.rows + r2, c1 * other.cols + c2, f.mul(a, other.get(r2, c2)));
                    }
                }
            }
        }
        Ok(out)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        for c in 0..self.cols {
            self.data.swap(a * self.cols + c, b * self.cols + c);
        }
    }

    fn scale_row(&mut self, r: usize, s: Symbol) {
        let f = self.modulus;
        for c in 0..self.cols {
            let v = f.mul(self.get(r, c), s);
            self.set(r, c, v);
        }
    }

    // row[dst] += s * row[src]
    fn add_row_multiple(&mut self, dst: usize, src: usize, s: Symbol) {
        let f = self.modulus;
        for c in 0..self.cols {
            let v = f.add_mul(self.get(dst, c), s, self.get(src, c));
            self.set(dst, c, v);
        }
    }
}
