//! Classical Reed-Muller codes and the quantum codes built from them.
//!
//! Words of length `2^m` are indexed by coordinate label. Punctured words of
//! length `2^m - 1` omit coordinate 0, so entry `i` is coordinate `i + 1`.
//! Row `ℓ` of the encoding matrix, read in label space, is the evaluation of
//! the monomial `Π_{i ∈ ℓ} x_i`; it is one at coordinate `c` iff `ℓ ⊆ c`.

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gf2::{F2Matrix, F2Vector};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RmError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("word length {got} does not match code length {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Labels of the rows of `E` generating `RM(r, m)`: all labels of popcount ≤ r.
pub fn generator_rows(r: usize, m: usize) -> Vec<usize> {
    (0..1usize << m).filter(|l| (l.count_ones() as usize) <= r).collect()
}

/// Evaluation vector of the monomial with variable set `label`, length `2^m`.
pub fn monomial_eval(label: usize, m: usize) -> F2Vector {
    F2Vector::from_indices(1 << m, (0..1usize << m).filter(|c| label & !c == 0))
}

/// In-place subset-sum transform over label-indexed bits: `u_ℓ = Σ_{c ⊆ ℓ} v_c`.
///
/// This is multiplication by the encoding matrix in label space and is its
/// own inverse, so it both encodes monomial coefficients and unencodes words.
pub fn mobius_in_place(words: &mut [u64], m: usize) {
    const MASKS: [u64; 6] = [
        0x5555_5555_5555_5555,
        0x3333_3333_3333_3333,
        0x0f0f_0f0f_0f0f_0f0f,
        0x00ff_00ff_00ff_00ff,
        0x0000_ffff_0000_ffff,
        0x0000_0000_ffff_ffff,
    ];
    for b in 0..m.min(6) {
        let s = 1u32 << b;
        for w in words.iter_mut() {
            *w ^= (*w & MASKS[b]) << s;
        }
    }
    for b in 6..m {
        let stride = 1usize << (b - 6);
        for base in (0..words.len()).step_by(2 * stride) {
            for k in 0..stride {
                let lo = words[base + k];
                words[base + stride + k] ^= lo;
            }
        }
    }
}

/// [`mobius_in_place`] on a `u128` label mask (`m ≤ 7`).
#[inline]
pub fn mobius_u128(v: u128, m: usize) -> u128 {
    const MASKS: [u128; 7] = [
        0x5555_5555_5555_5555_5555_5555_5555_5555,
        0x3333_3333_3333_3333_3333_3333_3333_3333,
        0x0f0f_0f0f_0f0f_0f0f_0f0f_0f0f_0f0f_0f0f,
        0x00ff_00ff_00ff_00ff_00ff_00ff_00ff_00ff,
        0x0000_ffff_0000_ffff_0000_ffff_0000_ffff,
        0x0000_0000_ffff_ffff_0000_0000_ffff_ffff,
        0x0000_0000_0000_0000_ffff_ffff_ffff_ffff,
    ];
    let mut v = v;
    for (b, mask) in MASKS.iter().enumerate().take(m) {
        v ^= (v & mask) << (1u32 << b);
    }
    v
}

/// Mask of labels in `0..2^m` whose popcount exceeds `r`.
pub fn high_label_mask(r: usize, m: usize) -> u128 {
    assert!(m <= 7);
    (0..1usize << m).filter(|l| l.count_ones() as usize > r).fold(0u128, |acc, l| acc | (1u128 << l))
}

/// Mask of all `2^m` labels.
#[inline]
pub fn full_mask(m: usize) -> u128 {
    if m >= 7 {
        u128::MAX
    } else {
        (1u128 << (1u32 << m)) - 1
    }
}

/// Converts a punctured word (entry `i` = coordinate `i+1`) to a label mask.
pub fn punctured_to_mask(v: &F2Vector) -> u128 {
    v.to_u128() << 1
}

/// Converts a label mask to a punctured word of length `2^m - 1`, dropping coordinate 0.
pub fn mask_to_punctured(mask: u128, m: usize) -> F2Vector {
    F2Vector::from_u128((1 << m) - 1, mask >> 1)
}

/// A classical Reed-Muller code, optionally punctured at coordinate 0.
///
/// `shortened` selects the even-weight subcode of the punctured code: the
/// words whose zero extension lies in `RM(r, m)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RmCode {
    pub r: usize,
    pub m: usize,
    pub punctured: bool,
    pub shortened: bool,
}

impl RmCode {
    pub fn new(r: usize, m: usize) -> Result<Self, RmError> {
        if m == 0 || r > m {
            return Err(RmError::InvalidParams(format!("need 0 <= r <= m and m >= 1, got r={r}, m={m}")));
        }
        Ok(Self { r, m, punctured: false, shortened: false })
    }

    /// `RM(r, m)^*`.
    pub fn punctured(r: usize, m: usize) -> Result<Self, RmError> {
        Ok(Self { punctured: true, ..Self::new(r, m)? })
    }

    /// The even subcode of `RM(r, m)^*`, written `RM̄(r, m)`.
    pub fn shortened(r: usize, m: usize) -> Result<Self, RmError> {
        Ok(Self { punctured: true, shortened: true, ..Self::new(r, m)? })
    }

    pub fn length(&self) -> usize {
        (1 << self.m) - usize::from(self.punctured)
    }

    pub fn dimension(&self) -> usize {
        (0..=self.r).map(|i| binomial(self.m, i)).sum::<usize>() - usize::from(self.shortened)
    }

    pub fn min_distance(&self) -> usize {
        let full = 1usize << (self.m - self.r);
        if self.shortened && self.r < self.m {
            full
        } else if self.shortened {
            2
        } else {
            full - usize::from(self.punctured)
        }
    }

    /// Row labels of the generator matrix.
    pub fn generator_labels(&self) -> Vec<usize> {
        generator_rows(self.r, self.m).into_iter().filter(|&l| !(self.shortened && l == 0)).collect()
    }

    /// Generator rows restricted to the code's coordinates.
    pub fn generator_vectors(&self) -> Vec<F2Vector> {
        self.generator_labels().into_iter().map(|l| self.restrict(&monomial_eval(l, self.m))).collect()
    }

    pub fn generator_matrix(&self) -> F2Matrix {
        F2Matrix::from_rows(self.generator_vectors()).expect("rows share a length")
    }

    /// Drops coordinate 0 from a full-length word when the code is punctured.
    pub fn restrict(&self, full: &F2Vector) -> F2Vector {
        if self.punctured {
            full.slice(1, full.len())
        } else {
            full.clone()
        }
    }

    /// Zero-extends a code-length word to length `2^m` in label order.
    pub fn extend(&self, word: &F2Vector) -> F2Vector {
        if self.punctured {
            F2Vector::zeros(1).concat(word)
        } else {
            word.clone()
        }
    }

    /// Encodes monomial coefficients (indexed by label) into a code-length word.
    pub fn encode_coefficients(&self, coeffs: &F2Vector) -> F2Vector {
        assert_eq!(coeffs.len(), 1 << self.m);
        let mut words = coeffs.words().to_vec();
        mobius_in_place(&mut words, self.m);
        let full = F2Vector::from_indices(1 << self.m, word_ones(&words, 1 << self.m));
        self.restrict(&full)
    }

    pub fn contains(&self, word: &F2Vector) -> Result<bool, RmError> {
        let membership = unencode_check(word, self)?;
        Ok(match membership {
            Membership::NotInCode => false,
            Membership::InShortened => true,
            Membership::InCosetOnePlus => !self.shortened,
        })
    }
}

fn word_ones(words: &[u64], len: usize) -> impl Iterator<Item = usize> + '_ {
    (0..len).filter(move |&i| (words[i / 64] >> (i % 64)) & 1 == 1)
}

/// Result of unencoding a word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Membership {
    NotInCode,
    /// In the shortened (even) subcode.
    InShortened,
    /// In the odd coset `1 + RM̄(r, m)`.
    InCosetOnePlus,
}

/// Decides membership of `word` in `code` by running it backwards through
/// the encoding circuit.
///
/// Punctured words are zero-extended first. After the transform every wire
/// whose label has popcount above `r` must agree: all zero means the word is
/// in the shortened subcode, all one means it is in `1 + RM̄(r, m)` (the zero
/// extension of the all-one word unencodes to one on every nonzero label).
/// For full-length words the bottom wire, label 0, carries the coset bit.
pub fn unencode_check(word: &F2Vector, code: &RmCode) -> Result<Membership, RmError> {
    if word.len() != code.length() {
        return Err(RmError::LengthMismatch { expected: code.length(), got: word.len() });
    }
    let m = code.m;
    let full = code.extend(word);
    let mut u = full.words().to_vec();
    mobius_in_place(&mut u, m);
    let high: Vec<usize> = (0..1usize << m).filter(|l| l.count_ones() as usize > code.r).collect();
    let bit = |l: usize| (u[l / 64] >> (l % 64)) & 1 == 1;
    if high.is_empty() {
        // RM(m, m): every word is a codeword; parity picks the coset.
        return Ok(if word.weight() % 2 == 0 { Membership::InShortened } else { Membership::InCosetOnePlus });
    }
    if !code.punctured {
        if high.iter().any(|&l| bit(l)) {
            return Ok(Membership::NotInCode);
        }
        return Ok(if bit(0) { Membership::InCosetOnePlus } else { Membership::InShortened });
    }
    let ones = high.iter().filter(|&&l| bit(l)).count();
    Ok(if ones == 0 {
        Membership::InShortened
    } else if ones == high.len() {
        Membership::InCosetOnePlus
    } else {
        Membership::NotInCode
    })
}

/// `C(n, k)` in machine integers; callers keep arguments small.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

pub fn binomial_big(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::from(0u32);
    }
    let k = k.min(n - k);
    let mut acc = BigUint::from(1u32);
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// Number of minimum-weight codewords of `RM(r, m)` or `RM(r, m)^*`.
pub fn min_weight_count(r: usize, m: usize, punctured: bool) -> Result<BigUint, RmError> {
    if r < 1 || r >= m {
        return Err(RmError::InvalidParams(format!("need 1 <= r < m, got r={r}, m={m}")));
    }
    let one = BigUint::from(1u32);
    let mut num = BigUint::from(1u32);
    let mut den = BigUint::from(1u32);
    for i in 0..(m - r) {
        num *= (&one << (m - i)) - &one;
        den *= (&one << (m - r - i)) - &one;
    }
    let count = num / den;
    Ok(if punctured { count } else { count << r })
}

/// Outcome of a weight-divisibility test on a generator set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DivisibilityReport {
    pub nu: usize,
    pub pass: bool,
    /// Generator labels whose overlap violates the condition.
    pub witness: Option<Vec<usize>>,
    pub witness_overlap_weight: Option<usize>,
}

/// Tests whether the generators of `code` span a `2^nu`-divisible code: every
/// overlap of `t` generators (`t = 1..=nu`) must have weight divisible by
/// `2^(nu - t + 1)`.
pub fn divisibility_check(code: &RmCode, nu: usize) -> DivisibilityReport {
    let labels = code.generator_labels();
    let gens = code.generator_vectors();
    let n = gens.len();
    let fail = |idx: &[usize], w: usize| DivisibilityReport {
        nu,
        pass: false,
        witness: Some(idx.iter().map(|&i| labels[i]).collect()),
        witness_overlap_weight: Some(w),
    };
    for t in 1..=nu {
        let modulus = 1usize << (nu - t + 1);
        let mut idx: Vec<usize> = (0..t).collect();
        if t > n {
            break;
        }
        loop {
            let overlap = idx[1..].iter().fold(gens[idx[0]].clone(), |acc, &i| acc.and(&gens[i]));
            let w = overlap.weight();
            if w % modulus != 0 {
                return fail(&idx, w);
            }
            if !next_combination(&mut idx, n) {
                break;
            }
        }
    }
    DivisibilityReport { nu, pass: true, witness: None, witness_overlap_weight: None }
}

/// Advances a sorted index tuple to the next `t`-subset of `0..n`.
pub fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let t = idx.len();
    let mut i = t;
    while i > 0 {
        i -= 1;
        if idx[i] < n - t + i {
            idx[i] += 1;
            for j in i + 1..t {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Coefficient of the low-noise coset-error bound for `RM(r, m)^*` under BSC noise:
/// `C(2^(m-r) - 1, 2^(m-r-1)) · A_{2^(m-r) - 1}`.
pub fn logical_lower_bound_coefficient(r: usize, m: usize) -> Result<BigUint, RmError> {
    let d = (1u64 << (m - r)) - 1;
    Ok(binomial_big(d, 1u64 << (m - r - 1)) * min_weight_count(r, m, true)?)
}

/// Lower bound on the coset-decision error rate for `RM(r, m)^*` at bit-flip rate `p`.
pub fn logical_lower_bound(p: f64, r: usize, m: usize) -> Result<f64, RmError> {
    let coeff = logical_lower_bound_coefficient(r, m)?;
    let w = 1i32 << (m - r - 1);
    let n = (1i32 << m) - 1;
    let coeff: f64 = coeff.to_string().parse().expect("decimal integer");
    Ok(coeff * p.powi(w) * (1.0 - p).powi(n - w))
}

/// Which logical state an encoder prepares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LogicalState {
    Zero,
    Plus,
}

/// A quantum Reed-Muller code `QRM(r_x, r_z, m)` or its punctured form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "QrmDescriptor", into = "QrmDescriptor")]
pub struct QrmCode {
    pub r_x: usize,
    pub r_z: usize,
    pub m: usize,
    pub punctured: bool,
}

#[derive(Serialize, Deserialize)]
struct QrmDescriptor {
    family: String,
    r_x: usize,
    r_z: usize,
    m: usize,
    punctured: bool,
}

impl From<QrmCode> for QrmDescriptor {
    fn from(c: QrmCode) -> Self {
        let family = if c.punctured { "pqrm" } else { "qrm" };
        Self { family: family.into(), r_x: c.r_x, r_z: c.r_z, m: c.m, punctured: c.punctured }
    }
}

impl TryFrom<QrmDescriptor> for QrmCode {
    type Error = RmError;
    fn try_from(d: QrmDescriptor) -> Result<Self, RmError> {
        let expect_punctured = match d.family.as_str() {
            "pqrm" => true,
            "qrm" => false,
            other => return Err(RmError::InvalidParams(format!("unknown family {other:?}"))),
        };
        if expect_punctured != d.punctured {
            return Err(RmError::InvalidParams("family and punctured flag disagree".into()));
        }
        if d.punctured {
            QrmCode::pqrm(d.r_x, d.r_z, d.m)
        } else {
            QrmCode::qrm(d.r_x, d.r_z, d.m)
        }
    }
}

impl QrmCode {
    pub fn qrm(r_x: usize, r_z: usize, m: usize) -> Result<Self, RmError> {
        if r_x + r_z >= m {
            return Err(RmError::InvalidParams(format!("need r_x + r_z < m, got {r_x} + {r_z} >= {m}")));
        }
        Ok(Self { r_x, r_z, m, punctured: false })
    }

    pub fn pqrm(r_x: usize, r_z: usize, m: usize) -> Result<Self, RmError> {
        Ok(Self { punctured: true, ..Self::qrm(r_x, r_z, m)? })
    }

    pub fn n(&self) -> usize {
        (1 << self.m) - usize::from(self.punctured)
    }

    pub fn k(&self) -> usize {
        let mid: usize = (self.r_x + 1..self.m - self.r_z).map(|i| binomial(self.m, i)).sum();
        mid + usize::from(self.punctured)
    }

    /// Minimum weight of an X-type logical operator.
    pub fn x_distance(&self) -> usize {
        (1 << (self.r_z + 1)) - usize::from(self.punctured)
    }

    /// Minimum weight of a Z-type logical operator.
    pub fn z_distance(&self) -> usize {
        (1 << (self.r_x + 1)) - usize::from(self.punctured)
    }

    pub fn distance(&self) -> usize {
        self.x_distance().min(self.z_distance())
    }

    /// Classical code whose codewords are the X-type stabilizers.
    pub fn x_stabilizers(&self) -> RmCode {
        self.stabilizer_code(self.r_x)
    }

    pub fn z_stabilizers(&self) -> RmCode {
        self.stabilizer_code(self.r_z)
    }

    /// X- and Z-type stabilizer codes of the encoded state `|0⟩_L` or `|+⟩_L`.
    ///
    /// The state's group adds the matching logical (the all-one word) to the
    /// code's stabilizers, so one side becomes the full punctured code.
    pub fn state_stabilizers(&self, state: LogicalState) -> Result<(RmCode, RmCode), RmError> {
        if !self.punctured || self.k() != 1 {
            return Err(RmError::InvalidParams("state stabilizers need a punctured code with one logical qubit".into()));
        }
        let (x, z) = (self.x_stabilizers(), self.z_stabilizers());
        Ok(match state {
            LogicalState::Zero => (x, RmCode { shortened: false, ..z }),
            LogicalState::Plus => (RmCode { shortened: false, ..x }, z),
        })
    }

    fn stabilizer_code(&self, r: usize) -> RmCode {
        if self.punctured {
            RmCode::shortened(r, self.m).expect("validated")
        } else {
            RmCode::new(r, self.m).expect("validated")
        }
    }
}
