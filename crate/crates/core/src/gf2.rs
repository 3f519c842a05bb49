//! Bit-packed linear algebra over GF(2).
//!
//! Coordinates of a hypercube of dimension `m` are labeled by integers whose
//! binary expansion is `x_m … x_1`, with `x_1` the least significant bit.
//! Matrices in `SL(m, F2)` act on the column vector `(x_m, …, x_1)^T`, so
//! vector index `k` corresponds to variable `x_{m-k}`, i.e. label bit
//! `m-1-k`. Use [`F2Matrix::reverse_indices`] to translate a matrix written
//! for the `(x_1, …, x_m)^T` ordering.

use std::fmt;
use std::ops::{BitAnd, BitOr, BitXor, BitXorAssign, Mul};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Gf2Error {
    #[error("matrix is singular")]
    Singular,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index ({i}, {j}) invalid for dimension {m}")]
    InvalidIndex { m: usize, i: usize, j: usize },
    #[error("parse error: {0}")]
    Parse(String),
}

const WORD: usize = 64;

fn words_for(len: usize) -> usize {
    len.div_ceil(WORD)
}

/// A fixed-length binary vector.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct F2Vector {
    len: usize,
    words: Vec<u64>,
}

impl F2Vector {
    pub fn zeros(len: usize) -> Self {
        Self { len, words: vec![0; words_for(len)] }
    }

    pub fn ones(len: usize) -> Self {
        let mut v = Self { len, words: vec![u64::MAX; words_for(len)] };
        v.mask_tail();
        v
    }

    pub fn unit(len: usize, i: usize) -> Self {
        let mut v = Self::zeros(len);
        v.set(i, true);
        v
    }

    /// Builds a vector from the low `len` bits of `value` (bit `i` is entry `i`).
    pub fn from_u128(len: usize, value: u128) -> Self {
        assert!(len <= 128, "from_u128 supports at most 128 entries");
        let mut v = Self::zeros(len);
        if len > 0 {
            v.words[0] = value as u64;
        }
        if len > 64 {
            v.words[1] = (value >> 64) as u64;
        }
        v.mask_tail();
        v
    }

    /// Packs the vector into a `u128` (entry `i` is bit `i`).
    pub fn to_u128(&self) -> u128 {
        assert!(self.len <= 128, "to_u128 supports at most 128 entries");
        let lo = self.words.first().copied().unwrap_or(0) as u128;
        let hi = self.words.get(1).copied().unwrap_or(0) as u128;
        lo | (hi << 64)
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            v.set(i, b);
        }
        v
    }

    pub fn from_indices(len: usize, ones: impl IntoIterator<Item = usize>) -> Self {
        let mut v = Self::zeros(len);
        for i in ones {
            v.set(i, true);
        }
        v
    }

    /// Parses a string of `0`/`1` characters; entry 0 is the first character.
    /// Whitespace and underscores are ignored.
    pub fn parse01(s: &str) -> Result<Self, Gf2Error> {
        let bits: Result<Vec<bool>, Gf2Error> = s
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_')
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Gf2Error::Parse(format!("unexpected character {other:?}"))),
            })
            .collect();
        Ok(Self::from_bools(&bits?))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / WORD] >> (i % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "index {i} out of range {}", self.len);
        let bit = 1u64 << (i % WORD);
        if value {
            self.words[i / WORD] |= bit;
        } else {
            self.words[i / WORD] &= !bit;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "index {i} out of range {}", self.len);
        self.words[i / WORD] ^= 1u64 << (i % WORD);
    }

    pub fn weight(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Parity of the inner product.
    pub fn dot(&self, other: &Self) -> bool {
        self.check_len(other);
        self.words.iter().zip(&other.words).map(|(a, b)| (a & b).count_ones()).sum::<u32>() & 1 == 1
    }

    pub fn and(&self, other: &Self) -> Self {
        self.check_len(other);
        Self { len: self.len, words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect() }
    }

    pub fn xor_assign(&mut self, other: &Self) {
        self.check_len(other);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let t = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * WORD + t)
            })
        })
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    /// Concatenation `self | other`.
    pub fn concat(&self, other: &Self) -> Self {
        let mut v = Self::zeros(self.len + other.len);
        for i in self.iter_ones() {
            v.set(i, true);
        }
        for i in other.iter_ones() {
            v.set(self.len + i, true);
        }
        v
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self::from_indices(end - start, self.iter_ones().filter(|&i| i >= start && i < end).map(|i| i - start))
    }

    fn check_len(&self, other: &Self) {
        assert_eq!(self.len, other.len, "vector length mismatch");
    }

    fn mask_tail(&mut self) {
        let r = self.len % WORD;
        if r != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << r) - 1;
            }
        }
    }
}

impl fmt::Debug for F2Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F2Vector({self})")
    }
}

impl fmt::Display for F2Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl BitXor for &F2Vector {
    type Output = F2Vector;
    fn bitxor(self, rhs: Self) -> F2Vector {
        let mut out = self.clone();
        out.xor_assign(rhs);
        out
    }
}

impl BitXorAssign<&F2Vector> for F2Vector {
    fn bitxor_assign(&mut self, rhs: &F2Vector) {
        self.xor_assign(rhs);
    }
}

impl BitOr for &F2Vector {
    type Output = F2Vector;
    fn bitor(self, rhs: Self) -> F2Vector {
        self.check_len(rhs);
        F2Vector { len: self.len, words: self.words.iter().zip(&rhs.words).map(|(a, b)| a | b).collect() }
    }
}

impl BitAnd for &F2Vector {
    type Output = F2Vector;
    fn bitand(self, rhs: Self) -> F2Vector {
        self.and(rhs)
    }
}

/// A dense binary matrix stored as packed rows.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct F2Matrix {
    rows: usize,
    cols: usize,
    data: Vec<F2Vector>,
}

impl F2Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![F2Vector::zeros(cols); rows] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                if f(i, j) {
                    m.set(i, j, true);
                }
            }
        }
        m
    }

    pub fn from_rows(rows: Vec<F2Vector>) -> Result<Self, Gf2Error> {
        let cols = rows.first().map_or(0, F2Vector::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Gf2Error::DimensionMismatch { expected: cols, got: bad.len() });
        }
        Ok(Self { rows: rows.len(), cols, data: rows })
    }

    /// Parses rows written as `0`/`1` strings.
    pub fn parse_rows(rows: &[&str]) -> Result<Self, Gf2Error> {
        Self::from_rows(rows.iter().map(|r| F2Vector::parse01(r)).collect::<Result<_, _>>()?)
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
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i].get(j)
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.data[i].set(j, value);
    }

    pub fn row(&self, i: usize) -> &F2Vector {
        &self.data[i]
    }

    pub fn row_vectors(&self) -> &[F2Vector] {
        &self.data
    }

    pub fn column(&self, j: usize) -> F2Vector {
        F2Vector::from_indices(self.rows, (0..self.rows).filter(|&i| self.get(i, j)))
    }

    pub fn weight(&self) -> usize {
        self.data.iter().map(F2Vector::weight).sum()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for (i, row) in self.data.iter().enumerate() {
            for j in row.iter_ones() {
                t.set(j, i, true);
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let data = self
            .data
            .iter()
            .map(|row| {
                let mut acc = F2Vector::zeros(other.cols);
                for k in row.iter_ones() {
                    acc.xor_assign(&other.data[k]);
                }
                acc
            })
            .collect();
        Self { rows: self.rows, cols: other.cols, data }
    }

    /// `M v` for a column vector `v`.
    pub fn mul_vec(&self, v: &F2Vector) -> F2Vector {
        assert_eq!(self.cols, v.len(), "mul_vec dimension mismatch");
        F2Vector::from_indices(self.rows, (0..self.rows).filter(|&i| self.data[i].dot(v)))
    }

    /// `v M` for a row vector `v`.
    pub fn vec_mul(&self, v: &F2Vector) -> F2Vector {
        assert_eq!(self.rows, v.len(), "vec_mul dimension mismatch");
        let mut acc = F2Vector::zeros(self.cols);
        for i in v.iter_ones() {
            acc.xor_assign(&self.data[i]);
        }
        acc
    }

    pub fn add(&self, other: &Self) -> Self {
        assert!(self.rows == other.rows && self.cols == other.cols, "add dimension mismatch");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a ^ b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn kron(&self, other: &Self) -> Self {
        Self::from_fn(self.rows * other.rows, self.cols * other.cols, |i, j| {
            self.get(i / other.rows, j / other.cols) && other.get(i % other.rows, j % other.cols)
        })
    }

    pub fn is_identity(&self) -> bool {
        self.is_square() && (0..self.rows).all(|i| self.data[i].weight() == 1 && self.get(i, i))
    }

    pub fn is_symmetric(&self) -> bool {
        self.is_square() && *self == self.transpose()
    }

    /// Row-reduced echelon form and the pivot columns.
    pub fn echelon(&self) -> (Self, Vec<usize>) {
        let mut m = self.clone();
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..self.cols {
            if r == self.rows {
                break;
            }
            let Some(p) = (r..self.rows).find(|&i| m.get(i, c)) else { continue };
            m.data.swap(r, p);
            let pivot_row = m.data[r].clone();
            for i in 0..self.rows {
                if i != r && m.get(i, c) {
                    m.data[i].xor_assign(&pivot_row);
                }
            }
            pivots.push(c);
            r += 1;
        }
        (m, pivots)
    }

    pub fn rank(&self) -> usize {
        self.echelon().1.len()
    }

    pub fn determinant(&self) -> bool {
        self.is_square() && self.rank() == self.rows
    }

    pub fn invert(&self) -> Result<Self, Gf2Error> {
        if !self.is_square() {
            return Err(Gf2Error::DimensionMismatch { expected: self.rows, got: self.cols });
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        for c in 0..n {
            let p = (c..n).find(|&i| a.get(i, c)).ok_or(Gf2Error::Singular)?;
            a.data.swap(c, p);
            inv.data.swap(c, p);
            let (ar, ir) = (a.data[c].clone(), inv.data[c].clone());
            for i in 0..n {
                if i != c && a.get(i, c) {
                    a.data[i].xor_assign(&ar);
                    inv.data[i].xor_assign(&ir);
                }
            }
        }
        Ok(inv)
    }

    /// Reverses row and column order; converts between the `(x_1..x_m)` and
    /// `(x_m..x_1)` vector orderings.
    pub fn reverse_indices(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| self.get(self.rows - 1 - i, self.cols - 1 - j))
    }

    /// Rows of the matrix as `0`/`1` strings.
    pub fn to_row_strings(&self) -> Vec<String> {
        self.data.iter().map(|r| r.to_string()).collect()
    }

    /// The `m`-fold Kronecker power of `[[1,0],[1,1]]`.
    pub fn encoding_matrix(m: usize) -> Self {
        assert!(m >= 1, "encoding matrix needs m >= 1");
        let n = 1usize << m;
        // Entry (i, j) is one iff the bits of j are a subset of the bits of i.
        Self::from_fn(n, n, |i, j| j & !i == 0)
    }

    /// `E_{i,j}`: the identity with an extra one at row `i`, column `j`.
    pub fn elementary(m: usize, i: usize, j: usize) -> Result<Self, Gf2Error> {
        if i >= m || j >= m || i == j {
            return Err(Gf2Error::InvalidIndex { m, i, j });
        }
        let mut e = Self::identity(m);
        e.set(i, j, true);
        Ok(e)
    }

    /// `F_{i,j}`: the matrix with a single one at row `i`, column `j`.
    pub fn single(rows: usize, cols: usize, i: usize, j: usize) -> Self {
        let mut f = Self::zeros(rows, cols);
        f.set(i, j, true);
        f
    }

    /// Permutation matrix exchanging indices `i` and `j`.
    pub fn swap_matrix(m: usize, i: usize, j: usize) -> Result<Self, Gf2Error> {
        if i >= m || j >= m || i == j {
            return Err(Gf2Error::InvalidIndex { m, i, j });
        }
        let mut s = Self::identity(m);
        s.data.swap(i, j);
        Ok(s)
    }

    /// Permutation matrix `P` with `P e_j = e_{perm[j]}`.
    pub fn permutation(perm: &[usize]) -> Self {
        let n = perm.len();
        Self::from_fn(n, n, |i, j| perm[j] == i)
    }
}

impl Mul for &F2Matrix {
    type Output = F2Matrix;
    fn mul(self, rhs: Self) -> F2Matrix {
        self.matmul(rhs)
    }
}

impl fmt::Debug for F2Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "F2Matrix {}x{} [", self.rows, self.cols)?;
        for row in &self.data {
            writeln!(f, "  {row}")?;
        }
        write!(f, "]")
    }
}

/// Label `x` as the column vector `(x_m, …, x_1)^T`.
pub fn label_to_vec(label: usize, m: usize) -> F2Vector {
    F2Vector::from_indices(m, (0..m).filter(|&k| (label >> (m - 1 - k)) & 1 == 1))
}

/// Inverse of [`label_to_vec`].
pub fn vec_to_label(v: &F2Vector) -> usize {
    let m = v.len();
    v.iter_ones().fold(0, |acc, k| acc | (1 << (m - 1 - k)))
}

/// The coordinate permutation `x ↦ A x + b` on labels `0..2^m`.
///
/// Entry `x` of the result is the image label of `x`.
pub fn coordinate_map(a: &F2Matrix, b: &F2Vector) -> Result<Vec<usize>, Gf2Error> {
    let m = a.rows();
    if !a.is_square() {
        return Err(Gf2Error::DimensionMismatch { expected: m, got: a.cols() });
    }
    if b.len() != m {
        return Err(Gf2Error::DimensionMismatch { expected: m, got: b.len() });
    }
    if a.rank() != m {
        return Err(Gf2Error::Singular);
    }
    // Linear in the label bits: image of x is b + sum of images of its set bits.
    let offset = vec_to_label(b);
    let basis: Vec<usize> = (0..m).map(|bit| vec_to_label(&a.column(m - 1 - bit))).collect();
    Ok((0..1usize << m)
        .map(|x| (0..m).filter(|&bit| (x >> bit) & 1 == 1).fold(offset, |acc, bit| acc ^ basis[bit]))
        .collect())
}
