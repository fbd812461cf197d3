//! Mixing kernels and the tensor-power transform `P_m = M^{⊗t}`.
//!
//! Index convention: the Kronecker index `(i_1, ..., i_t)` maps to
//! `Σ i_s k^{t-s}` (zero-based digits, first factor outermost). No
//! bit-reversal is applied anywhere.

use thiserror::Error;

use crate::field::{FieldError, FieldMatrix, FieldModulus, FieldVector, Symbol};

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum KernelError {
    #[error("kernel matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("kernel matrix is empty")]
    Empty,
    #[error("kernel matrix is singular")]
    Singular,
    #[error("some column permutation of the kernel is lower-triangular")]
    LowerTriangularizable,
    #[error("expected length {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("transform size k^t = {k}^{t} overflows")]
    TooLarge { k: usize, t: u32 },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Short machine-readable reason for a rejected kernel.
impl KernelError {
    pub fn reason_code(&self) -> &'static str {
        match self {
            KernelError::NotSquare { .. } => "not-square",
            KernelError::Empty => "empty",
            KernelError::Singular => "singular",
            KernelError::LowerTriangularizable => "lower-triangularizable",
            KernelError::LengthMismatch { .. } => "length-mismatch",
            KernelError::TooLarge { .. } => "too-large",
            KernelError::Field(_) => "field",
        }
    }
}

/// True iff some permutation of the columns of `m` is lower-triangular.
///
/// Column `c` can sit at position `i` iff its first nonzero row is `>= i`,
/// so a valid assignment exists iff the sorted first-nonzero indices
/// dominate `0, 1, 2, ...`.
pub fn has_lower_triangular_column_permutation(m: &FieldMatrix) -> bool {
    let mut first: Vec<usize> = (0..m.cols())
        .map(|c| (0..m.rows()).find(|&r| m.get(r, c) != 0).unwrap_or(usize::MAX))
        .collect();
    first.sort_unstable();
    first.iter().enumerate().all(|(i, &f)| f >= i)
}

/// A validated `k x k` mixing matrix with its inverse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixingKernel {
    matrix: FieldMatrix,
    inverse: FieldMatrix,
}

impl MixingKernel {
    /// Accepts `m` iff it is invertible and no column permutation of it is
    /// lower-triangular.
    pub fn validate(m: FieldMatrix) -> Result<Self, KernelError> {
        if !m.is_square() {
            return Err(KernelError::NotSquare { rows: m.rows(), cols: m.cols() });
        }
        if m.rows() == 0 {
            return Err(KernelError::Empty);
        }
        let inverse = match m.inverse() {
            Ok(inv) => inv,
            Err(FieldError::Singular) => return Err(KernelError::Singular),
            Err(e) => return Err(e.into()),
        };
        if has_lower_triangular_column_permutation(&m) {
            return Err(KernelError::LowerTriangularizable);
        }
        Ok(Self { matrix: m, inverse })
    }

    /// The default kernel for size `k`: the all-ones upper-triangular matrix
    /// (`[[1,1],[0,1]]` for `k = 2`).
    pub fn standard(modulus: FieldModulus, k: usize) -> Result<Self, KernelError> {
        let rows: Vec<Vec<u32>> =
            (0..k).map(|r| (0..k).map(|c| u32::from(c >= r)).collect()).collect();
        Self::validate(FieldMatrix::from_rows(modulus, &rows)?)
    }

    pub fn modulus(&self) -> FieldModulus {
        self.matrix.modulus()
    }

    pub fn k(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &FieldMatrix {
        &self.matrix
    }

    pub fn inverse(&self) -> &FieldMatrix {
        &self.inverse
    }
}

/// `P_m = M^{⊗t}` acting on vectors of length `m = k^t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorTransform {
    kernel: MixingKernel,
    t: u32,
    m: usize,
}

impl TensorTransform {
    pub fn new(kernel: MixingKernel, t: u32) -> Result<Self, KernelError> {
        let k = kernel.k();
        let m = k.checked_pow(t).filter(|&m| m <= 1 << 26).ok_or(KernelError::TooLarge { k, t })?;
        Ok(Self { kernel, t, m })
    }

    pub fn kernel(&self) -> &MixingKernel {
        &self.kernel
    }

    pub fn modulus(&self) -> FieldModulus {
        self.kernel.modulus()
    }

    pub fn k(&self) -> usize {
        self.kernel.k()
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// The same kernel at a smaller tensor power.
    pub fn with_power(&self, t: u32) -> Result<Self, KernelError> {
        Self::new(self.kernel.clone(), t)
    }

    pub fn apply(&self, z: &FieldVector) -> Result<FieldVector, KernelError> {
        self.check(z)?;
        let mut data = z.as_slice().to_vec();
        self.apply_in_place(&mut data);
        Ok(FieldVector::from_symbols(z.modulus(), data)?)
    }

    pub fn apply_inverse(&self, u: &FieldVector) -> Result<FieldVector, KernelError> {
        self.check(u)?;
        let mut data = u.as_slice().to_vec();
        self.apply_inverse_in_place(&mut data);
        Ok(FieldVector::from_symbols(u.modulus(), data)?)
    }

    /// `buf <- M^{⊗t} buf`. `buf.len()` must be `m`.
    pub fn apply_in_place(&self, buf: &mut [Symbol]) {
        butterfly(self.kernel.matrix(), self.t, buf);
    }

    /// `buf <- (M^{-1})^{⊗t} buf`. `buf.len()` must be `m`.
    pub fn apply_inverse_in_place(&self, buf: &mut [Symbol]) {
        butterfly(self.kernel.inverse(), self.t, buf);
    }

    /// Applies the transform to every column of an `m x m` matrix.
    pub fn apply_columns(&self, z: &FieldMatrix) -> Result<FieldMatrix, KernelError> {
        self.columns_with(z, |buf| self.apply_in_place(buf))
    }

    pub fn apply_inverse_columns(&self, u: &FieldMatrix) -> Result<FieldMatrix, KernelError> {
        self.columns_with(u, |buf| self.apply_inverse_in_place(buf))
    }

    fn columns_with(
        &self,
        z: &FieldMatrix,
        op: impl Fn(&mut [Symbol]),
    ) -> Result<FieldMatrix, KernelError> {
        if z.modulus() != self.modulus() {
            return Err(FieldError::ModulusMismatch(self.modulus().q(), z.modulus().q()).into());
        }
        if z.rows() != self.m {
            return Err(KernelError::LengthMismatch { expected: self.m, got: z.rows() });
        }
        let mut out = z.clone();
        let mut col = vec![0; self.m];
        for c in 0..z.cols() {
            for (r, slot) in col.iter_mut().enumerate() {
                *slot = z.get(r, c);
            }
            op(&mut col);
            out.set_column(c, &col);
        }
        Ok(out)
    }

    fn check(&self, v: &FieldVector) -> Result<(), KernelError> {
        if v.modulus() != self.modulus() {
            return Err(FieldError::ModulusMismatch(self.modulus().q(), v.modulus().q()).into());
        }
        if v.len() != self.m {
            return Err(KernelError::LengthMismatch { expected: self.m, got: v.len() });
        }
        Ok(())
    }
}

// One stage per Kronecker digit; stages commute since they act on
// different digits.
fn butterfly(kernel: &FieldMatrix, t: u32, buf: &mut [Symbol]) {
    let k = kernel.rows();
    let f = kernel.modulus();
    let q = f.q() as u64;
    let m = buf.len();
    debug_assert_eq!(Some(m), k.checked_pow(t));
    let mut gathered = vec![0 as Symbol; k];
    let mut stride = 1;
    for _ in 0..t {
        let block = stride * k;
        for base in (0..m).step_by(block) {
            for off in 0..stride {
                for (c, g) in gathered.iter_mut().enumerate() {
                    *g = buf[base + off + c * stride];
                }
                for a in 0..k {
                    let acc = kernel
                        .row(a)
                        .iter()
                        .zip(&gathered)
                        .fold(0u64, |acc, (&x, &y)| (acc + x as u64 * y as u64) % q);
                    buf[base + off + a * stride] = acc as Symbol;
                }
            }
        }
        stride = block;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fm(q: u32) -> FieldModulus {
        FieldModulus::new(q).unwrap()
    }

    fn arikan(q: u32) -> MixingKernel {
        MixingKernel::validate(FieldMatrix::from_rows(fm(q), &[vec![1, 1], vec![0, 1]]).unwrap())
            .unwrap()
    }

    fn explicit(kernel: &MixingKernel, t: u32) -> FieldMatrix {
        let mut acc = FieldMatrix::identity(kernel.modulus(), 1);
        for _ in 0..t {
            acc = acc.kronecker(kernel.matrix()).unwrap();
        }
        acc
    }

    fn brute_force_lower_triangularizable(m: &FieldMatrix) -> bool {
        let k = m.cols();
        let mut perm: Vec<usize> = (0..k).collect();
        fn visit(m: &FieldMatrix, perm: &mut Vec<usize>, depth: usize) -> bool {
            let k = perm.len();
            if depth == k {
                return (0..k).all(|r| (r + 1..k).all(|c| m.get(r, perm[c]) == 0));
            }
            for i in depth..k {
                perm.swap(depth, i);
                if visit(m, perm, depth + 1) {
                    return true;
                }
                perm.swap(depth, i);
            }
            false
        }
        visit(m, &mut perm, 0)
    }

    #[test]
    fn validate_examples() {
        let f = fm(2);
        assert!(MixingKernel::validate(FieldMatrix::from_rows(f, &[vec![1, 1], vec![0, 1]]).unwrap())
            .is_ok());
        for n in 1..5 {
            let e = MixingKernel::validate(FieldMatrix::identity(f, n)).unwrap_err();
            assert_eq!(e, KernelError::LowerTriangularizable);
        }
        let lower = FieldMatrix::from_rows(f, &[vec![1, 0], vec![1, 1]]).unwrap();
        assert_eq!(MixingKernel::validate(lower).unwrap_err().reason_code(), "lower-triangularizable");
        let singular = FieldMatrix::from_rows(f, &[vec![1, 1], vec![1, 1]]).unwrap();
        assert_eq!(MixingKernel::validate(singular).unwrap_err(), KernelError::Singular);
        let rect = FieldMatrix::zeros(f, 2, 3);
        assert!(matches!(MixingKernel::validate(rect), Err(KernelError::NotSquare { .. })));
    }

    #[test]
    fn standard_kernels_validate() {
        for q in [2, 3, 5, 7] {
            for k in 2..=4 {
                assert!(MixingKernel::standard(fm(q), k).is_ok());
            }
        }
    }

    #[test]
    fn validator_matches_permutation_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..500 {
            let q = [2, 3, 5][i % 3];
            let k = rng.gen_range(1..=4);
            // sparse entries so triangularizable matrices show up often
            let data = (0..k * k)
                .map(|_| if rng.gen_bool(0.5) { 0 } else { rng.gen_range(0..q) as Symbol })
                .collect();
            let m = FieldMatrix::from_row_major(fm(q), k, k, data).unwrap();
            assert_eq!(has_lower_triangular_column_permutation(&m), brute_force_lower_triangularizable(&m));
            let expect_ok = m.is_invertible() && !brute_force_lower_triangularizable(&m);
            assert_eq!(MixingKernel::validate(m).is_ok(), expect_ok);
        }
    }

    #[test]
    fn apply_examples() {
        let tt0 = TensorTransform::new(arikan(2), 0).unwrap();
        let one = FieldVector::from_symbols(fm(2), vec![1]).unwrap();
        assert_eq!(tt0.apply(&one).unwrap(), one);

        let tt1 = TensorTransform::new(arikan(2), 1).unwrap();
        let z = FieldVector::from_symbols(fm(2), vec![1, 1]).unwrap();
        assert_eq!(tt1.apply(&z).unwrap().as_slice(), &[0, 1]);

        let tt2 = TensorTransform::new(arikan(2), 2).unwrap();
        let e0 = FieldVector::from_symbols(fm(2), vec![1, 0, 0, 0]).unwrap();
        assert_eq!(tt2.apply(&e0).unwrap().as_slice(), &[1, 0, 0, 0]);
        let e3 = FieldVector::from_symbols(fm(2), vec![0, 0, 0, 1]).unwrap();
        assert_eq!(tt2.apply(&e3).unwrap().as_slice(), &[1, 1, 1, 1]);
    }

    #[test]
    fn apply_inverse_examples() {
        let tt = TensorTransform::new(arikan(3), 1).unwrap();
        let zero = FieldVector::zeros(fm(3), 2);
        assert_eq!(tt.apply_inverse(&zero).unwrap(), zero);
        let u = FieldVector::from_symbols(fm(3), vec![0, 1]).unwrap();
        assert_eq!(tt.apply_inverse(&u).unwrap().as_slice(), &[2, 1]);
    }

    #[test]
    fn length_mismatch_is_reported() {
        let tt = TensorTransform::new(arikan(2), 2).unwrap();
        let v = FieldVector::zeros(fm(2), 3);
        assert_eq!(tt.apply(&v), Err(KernelError::LengthMismatch { expected: 4, got: 3 }));
        let z = FieldMatrix::zeros(fm(2), 3, 3);
        assert!(tt.apply_columns(&z).is_err());
    }

    #[test]
    fn apply_matches_explicit_kronecker() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for q in [2, 3, 5] {
            for k in [2, 3] {
                let kernel = loop {
                    let data = (0..k * k).map(|_| rng.gen_range(0..q) as Symbol).collect();
                    let m = FieldMatrix::from_row_major(fm(q), k, k, data).unwrap();
                    if let Ok(kernel) = MixingKernel::validate(m) {
                        break kernel;
                    }
                };
                for t in 0..=3 {
                    let tt = TensorTransform::new(kernel.clone(), t).unwrap();
                    let big = explicit(&kernel, t);
                    for _ in 0..200 {
                        let z: Vec<Symbol> = (0..tt.m()).map(|_| rng.gen_range(0..q) as Symbol).collect();
                        let z = FieldVector::from_symbols(fm(q), z).unwrap();
                        assert_eq!(tt.apply(&z).unwrap(), big.mat_vec(&z).unwrap());
                    }
                }
            }
        }
    }

    #[test]
    fn apply_columns_examples() {
        let tt = TensorTransform::new(arikan(2), 2).unwrap();
        let zero = FieldMatrix::zeros(fm(2), 4, 4);
        assert_eq!(tt.apply_columns(&zero).unwrap(), zero);

        let mut single = FieldMatrix::zeros(fm(2), 4, 4);
        single.set_column(2, &[1, 0, 1, 1]);
        let out = tt.apply_columns(&single).unwrap();
        for c in [0, 1, 3] {
            assert!(out.column(c).is_zero());
        }
        assert_eq!(out.column(2), tt.apply(&single.column(2)).unwrap());

        let big = explicit(tt.kernel(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = (0..16).map(|_| rng.gen_range(0..2) as Symbol).collect();
        let z = FieldMatrix::from_row_major(fm(2), 4, 4, data).unwrap();
        assert_eq!(tt.apply_columns(&z).unwrap(), big.mul(&z).unwrap());
        assert_eq!(tt.apply_inverse_columns(&tt.apply_columns(&z).unwrap()).unwrap(), z);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn round_trip_and_linearity(
                q in prop::sample::select(vec![2u32, 3, 5]),
                k in 2usize..=3,
                t in 0u32..=4,
                seed in any::<u64>(),
            ) {
                let tt = TensorTransform::new(MixingKernel::standard(fm(q), k).unwrap(), t).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut draw = || -> FieldVector {
                    let v = (0..tt.m()).map(|_| rng.gen_range(0..q) as Symbol).collect();
                    FieldVector::from_symbols(fm(q), v).unwrap()
                };
                let (a, b) = (draw(), draw());
                let s = (seed % q as u64) as Symbol;
                prop_assert_eq!(&tt.apply_inverse(&tt.apply(&a).unwrap()).unwrap(), &a);
                let lhs = tt.apply(&a.axpy(s, &b).unwrap()).unwrap();
                let rhs = tt.apply(&a).unwrap().axpy(s, &tt.apply(&b).unwrap()).unwrap();
                prop_assert_eq!(lhs, rhs);
            }
        }
    }
}
