//! Exact arithmetic over prime fields GF(p).
//!
//! Everything the two sharing schemes need lives here: canonical field
//! elements backed by arbitrary-precision integers, polynomial evaluation,
//! Lagrange interpolation at zero, and Gaussian elimination modulo p. The
//! production field is GF(2^521 - 1); tests use small primes such as 13 and
//! 257 where results can be checked by hand.
//!
//! All values are kept in reduced form (0 <= value < p) and operations
//! between elements of different fields are rejected. None of the arithmetic
//! is constant-time; see the crate documentation for that limitation.

use std::fmt;
use std::sync::{Arc, LazyLock};

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("modulus is not prime")]
    NotPrime,
    #[error("modulus must be at least 3")]
    ModulusTooSmall,
    #[error("operands belong to different fields")]
    FieldMismatch,
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("polynomial needs at least one coefficient")]
    EmptyPolynomial,
    #[error("interpolation needs at least one point")]
    NoPoints,
    #[error("duplicate x-coordinate in interpolation points")]
    DuplicateX,
    #[error("x-coordinate zero is reserved for the secret")]
    ZeroX,
    #[error("matrix is not square or does not match the right-hand side")]
    ShapeMismatch,
    #[error("coefficient matrix is singular modulo p")]
    SingularMatrix,
}

/// Number of Miller-Rabin rounds; error probability below 4^-64 = 2^-128
/// per round pair, comfortably under the 2^-64 target at 32 rounds.
const MILLER_RABIN_ROUNDS: u32 = 32;

#[derive(Debug)]
struct FieldInner {
    p: BigUint,
    /// ceil(bits(p) / 8): width of a fixed-size big-endian value encoding.
    byte_len: usize,
    /// Largest w with 256^w <= p: how many secret bytes fit one element.
    chunk_width: usize,
}

/// A prime field GF(p), cheap to clone and share.
#[derive(Clone)]
pub struct PrimeField(Arc<FieldInner>);

impl fmt::Debug for PrimeField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PrimeField({})", self.0.p)
    }
}

impl PartialEq for PrimeField {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0.p == other.0.p
    }
}
impl Eq for PrimeField {}

static MERSENNE_521: LazyLock<PrimeField> = LazyLock::new(|| {
    let p = (BigUint::one() << 521u32) - BigUint::one();
    PrimeField::new(p).expect("2^521 - 1 is prime")
});

impl PrimeField {
    /// Constructs a field, checking primality probabilistically.
    pub fn new(p: BigUint) -> Result<Self, FieldError> {
        if p < BigUint::from(3u32) {
            return Err(FieldError::ModulusTooSmall);
        }
        if !is_probable_prime(&p) {
            return Err(FieldError::NotPrime);
        }
        let bits = p.bits() as usize;
        let byte_len = bits.div_ceil(8);
        // Widest w with 256^w <= p, capped at 64: wider chunks buy nothing
        // once the field covers 512-bit blocks, and a power-of-two width
        // keeps offsets round.
        let mut chunk_width = (bits / 8).min(64);
        while chunk_width > 0 && BigUint::from(256u32).pow(chunk_width as u32) > p {
            chunk_width -= 1;
        }
        Ok(Self(Arc::new(FieldInner {
            p,
            byte_len,
            chunk_width,
        })))
    }

    /// The production field GF(2^521 - 1).
    pub fn mersenne_521() -> Self {
        MERSENNE_521.clone()
    }

    pub fn modulus(&self) -> &BigUint {
        &self.0.p
    }

    pub fn byte_len(&self) -> usize {
        self.0.byte_len
    }

    pub fn chunk_width(&self) -> usize {
        self.0.chunk_width
    }

    /// Wraps an integer, reducing it into canonical form.
    pub fn element(&self, value: BigUint) -> FieldElement {
        FieldElement {
            value: value % &self.0.p,
            field: self.clone(),
        }
    }

    pub fn element_u64(&self, value: u64) -> FieldElement {
        self.element(BigUint::from(value))
    }

    pub fn zero(&self) -> FieldElement {
        self.element(BigUint::zero())
    }

    pub fn one(&self) -> FieldElement {
        self.element(BigUint::one())
    }

    /// Uniform element, by rejection sampling over minimal-width draws.
    pub fn random_element<R: RngCore + CryptoRng>(&self, rng: &mut R) -> FieldElement {
        self.element(random_below(rng, &self.0.p))
    }

    /// Fixed-width big-endian encoding of an element value.
    pub fn encode_value(&self, value: &BigUint) -> Vec<u8> {
        let mut out = vec![0u8; self.0.byte_len];
        let raw = value.to_bytes_be();
        out[self.0.byte_len - raw.len()..].copy_from_slice(&raw);
        out
    }
}

/// Uniform integer in [0, bound) by rejection sampling.
pub(crate) fn random_below<R: RngCore + CryptoRng>(rng: &mut R, bound: &BigUint) -> BigUint {
    let bits = bound.bits();
    let bytes = (bits as usize).div_ceil(8);
    let top_mask = if bits.is_multiple_of(8) {
        0xff
    } else {
        (1u16 << (bits % 8)) as u8 - 1
    };
    let mut buf = vec![0u8; bytes];
    loop {
        rng.fill_bytes(&mut buf);
        buf[0] &= top_mask;
        let candidate = BigUint::from_bytes_be(&buf);
        if &candidate < bound {
            return candidate;
        }
    }
}

/// An element of GF(p) in canonical reduced form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldElement {
    value: BigUint,
    field: PrimeField,
}

impl FieldElement {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn field(&self) -> &PrimeField {
        &self.field
    }

    pub fn is_zero(&self) -> bool {
        self.value.is_zero()
    }

    fn check_same_field(&self, other: &Self) -> Result<(), FieldError> {
        if self.field == other.field {
            Ok(())
        } else {
            Err(FieldError::FieldMismatch)
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self, FieldError> {
        self.check_same_field(other)?;
        Ok(self.field.element(&self.value + &other.value))
    }

    pub fn sub(&self, other: &Self) -> Result<Self, FieldError> {
        self.check_same_field(other)?;
        let p = self.field.modulus();
        Ok(self.field.element(&self.value + p - &other.value))
    }

    pub fn mul(&self, other: &Self) -> Result<Self, FieldError> {
        self.check_same_field(other)?;
        Ok(self.field.element(&self.value * &other.value))
    }

    pub fn neg(&self) -> Self {
        let p = self.field.modulus();
        self.field.element(p - &self.value)
    }

    /// Multiplicative inverse via the extended Euclidean algorithm.
    pub fn inv(&self) -> Result<Self, FieldError> {
        if self.value.is_zero() {
            return Err(FieldError::ZeroInverse);
        }
        let p = BigInt::from(self.field.modulus().clone());
        let a = BigInt::from(self.value.clone());
        let egcd = a.extended_gcd(&p);
        debug_assert!(egcd.gcd.is_one(), "modulus is prime, gcd must be 1");
        let mut x = egcd.x % &p;
        if x.is_negative() {
            x += &p;
        }
        Ok(self
            .field
            .element(x.to_biguint().expect("reduced to non-negative")))
    }

    pub fn div(&self, other: &Self) -> Result<Self, FieldError> {
        self.mul(&other.inv()?)
    }
}

/// A polynomial over GF(p), constant term first. The coefficient count is
/// the structural degree bound k; trailing zeros are allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Polynomial {
    coefficients: Vec<FieldElement>,
}

impl Polynomial {
    pub fn new(coefficients: Vec<FieldElement>) -> Result<Self, FieldError> {
        let first = coefficients.first().ok_or(FieldError::EmptyPolynomial)?;
        for c in &coefficients[1..] {
            first.check_same_field(c)?;
        }
        Ok(Self { coefficients })
    }

    pub fn coefficients(&self) -> &[FieldElement] {
        &self.coefficients
    }

    pub fn constant_term(&self) -> &FieldElement {
        &self.coefficients[0]
    }

    /// Horner evaluation of sum a_i x^i.
    pub fn eval(&self, x: &FieldElement) -> Result<FieldElement, FieldError> {
        self.coefficients[0].check_same_field(x)?;
        let mut acc = self.coefficients.last().expect("nonempty").clone();
        for coeff in self.coefficients.iter().rev().skip(1) {
            acc = acc.mul(x)?.add(coeff)?;
        }
        Ok(acc)
    }
}

/// Evaluates the unique interpolating polynomial through `points` at zero.
///
/// All x-coordinates must be distinct and nonzero; zero is reserved for the
/// secret in both sharing schemes.
pub fn lagrange_at_zero(
    points: &[(FieldElement, FieldElement)],
) -> Result<FieldElement, FieldError> {
    let (first_x, _) = points.first().ok_or(FieldError::NoPoints)?;
    let field = first_x.field().clone();
    for (x, y) in points {
        x.check_same_field(y)?;
        x.check_same_field(first_x)?;
        if x.is_zero() {
            return Err(FieldError::ZeroX);
        }
    }
    for (i, (xi, _)) in points.iter().enumerate() {
        if points[i + 1..].iter().any(|(xj, _)| xj == xi) {
            return Err(FieldError::DuplicateX);
        }
    }

    // q(0) = sum_i y_i * prod_{j != i} x_j / (x_j - x_i)
    let mut acc = field.zero();
    for (i, (xi, yi)) in points.iter().enumerate() {
        let mut num = field.one();
        let mut den = field.one();
        for (j, (xj, _)) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            num = num.mul(xj)?;
            den = den.mul(&xj.sub(xi)?)?;
        }
        let weight = num.div(&den)?;
        acc = acc.add(&yi.mul(&weight)?)?;
    }
    Ok(acc)
}

fn check_square(matrix: &[Vec<FieldElement>], rhs_len: Option<usize>) -> Result<usize, FieldError> {
    let n = matrix.len();
    if n == 0 || matrix.iter().any(|row| row.len() != n) {
        return Err(FieldError::ShapeMismatch);
    }
    if let Some(len) = rhs_len {
        if len != n {
            return Err(FieldError::ShapeMismatch);
        }
    }
    Ok(n)
}

/// Solves A x = b by Gaussian elimination with exact field arithmetic.
///
/// Fails with [`FieldError::SingularMatrix`] when det(A) = 0 mod p, which
/// signals a degenerate Blakley share set.
#[allow(clippy::needless_range_loop)] // row/column indexing reads clearer here
pub fn solve_linear_system(
    matrix: &[Vec<FieldElement>],
    rhs: &[FieldElement],
) -> Result<Vec<FieldElement>, FieldError> {
    let n = check_square(matrix, Some(rhs.len()))?;
    let mut a: Vec<Vec<FieldElement>> = matrix.to_vec();
    let mut b: Vec<FieldElement> = rhs.to_vec();

    for col in 0..n {
        let pivot = (col..n)
            .find(|&r| !a[r][col].is_zero())
            .ok_or(FieldError::SingularMatrix)?;
        a.swap(col, pivot);
        b.swap(col, pivot);

        let inv = a[col][col].inv()?;
        for c in col..n {
            a[col][c] = a[col][c].mul(&inv)?;
        }
        b[col] = b[col].mul(&inv)?;

        for row in 0..n {
            if row == col || a[row][col].is_zero() {
                continue;
            }
            let factor = a[row][col].clone();
            for c in col..n {
                let delta = factor.mul(&a[col][c])?;
                a[row][c] = a[row][c].sub(&delta)?;
            }
            let delta = factor.mul(&b[col])?;
            b[row] = b[row].sub(&delta)?;
        }
    }
    Ok(b)
}

/// Determinant modulo p, by elimination to upper-triangular form.
#[allow(clippy::needless_range_loop)] // row/column indexing reads clearer here
pub fn determinant(matrix: &[Vec<FieldElement>]) -> Result<FieldElement, FieldError> {
    let n = check_square(matrix, None)?;
    let field = matrix[0][0].field().clone();
    let mut a: Vec<Vec<FieldElement>> = matrix.to_vec();
    let mut det = field.one();

    for col in 0..n {
        let Some(pivot) = (col..n).find(|&r| !a[r][col].is_zero()) else {
            return Ok(field.zero());
        };
        if pivot != col {
            a.swap(col, pivot);
            det = det.neg();
        }
        det = det.mul(&a[col][col])?;
        let inv = a[col][col].inv()?;
        for row in col + 1..n {
            if a[row][col].is_zero() {
                continue;
            }
            let factor = a[row][col].mul(&inv)?;
            for c in col..n {
                let delta = factor.mul(&a[col][c])?;
                a[row][c] = a[row][c].sub(&delta)?;
            }
        }
    }
    Ok(det)
}

/// Miller-Rabin with bases derived by hashing the candidate, so field
/// construction is deterministic.
fn is_probable_prime(n: &BigUint) -> bool {
    let two = BigUint::from(2u32);
    let three = BigUint::from(3u32);
    if *n == two || *n == three {
        return true;
    }
    if n < &two || n.is_even() {
        return false;
    }

    let n_minus_1 = n - BigUint::one();
    let trailing = n_minus_1.trailing_zeros().expect("n-1 > 0");
    let odd_part = &n_minus_1 >> trailing;

    let n_bytes = n.to_bytes_be();
    let base_span = n - &three; // bases drawn from [2, n-2]
    'rounds: for round in 0u32..MILLER_RABIN_ROUNDS {
        let mut hasher = Sha256::new();
        hasher.update(b"vaultlog-mr-base");
        hasher.update(&n_bytes);
        hasher.update(round.to_be_bytes());
        let mut seed = BigUint::from_bytes_be(&hasher.finalize());
        // Stretch the seed until it covers the base range.
        while seed.bits() < base_span.bits() + 64 {
            let mut h = Sha256::new();
            h.update(b"vaultlog-mr-stretch");
            h.update(seed.to_bytes_be());
            seed = (seed << 256u32) + BigUint::from_bytes_be(&h.finalize());
        }
        let base = (seed % &base_span) + &two;

        let mut x = base.modpow(&odd_part, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..trailing {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'rounds;
            }
        }
        return false;
    }
    true
}

/// Probabilistic primality check with error below 2^-64, exposed for group
/// parameter validation.
pub fn is_prime(n: &BigUint) -> bool {
    is_probable_prime(n)
}
