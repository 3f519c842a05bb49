//! Logical Clifford synthesis for the high-rate codes `QRM(r-1, r-1, 2r)`.
//!
//! The code lives on `2^{2r}` qubits and carries `k = C(2r, r)` logical
//! qubits, one per degree-`r` monomial. Logical operators are written as
//! row vectors `(x | z)` of length `2k` and a gate acts by right
//! multiplication, so the action of a sequence `g_1, g_2, …` is the product
//! `M_1 M_2 …` in time order.
//!
//! Within this module a `2r × 2r` matrix `A` indexes variables as
//! `(x_1, …, x_{2r})`: row `i` is the image of `x_{i+1}`. A monomial is a
//! bitmask with bit `i` standing for `x_{i+1}`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::gf2::{F2Matrix, F2Vector};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HighRateError {
    #[error("r must be between 1 and 6, got {0}")]
    BadR(usize),
    #[error("matrix A must be {expected}x{expected} and invertible")]
    BadPermutation { expected: usize },
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("matrix is not a permutation matrix")]
    NotPermutation,
    #[error("matrix has no diagonal one")]
    NoFixedPoint,
    #[error("target is not a {0}x{0} symplectic matrix")]
    NotSymplectic(usize),
    #[error("synthesized sequence does not reproduce the target")]
    VerificationFailed,
    #[error("program line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// The ordered logical basis: `L` (degree-`r` monomials containing `x_1`,
/// lexicographic) followed by the complements `L̄` in the same order.
#[derive(Debug, Clone)]
pub struct MonomialBasis {
    r: usize,
    monomials: Vec<u32>,
    index: HashMap<u32, usize>,
}

impl MonomialBasis {
    pub fn new(r: usize) -> Result<Self, HighRateError> {
        if !(1..=6).contains(&r) {
            return Err(HighRateError::BadR(r));
        }
        let vars = 2 * r;
        let full = (1u32 << vars) - 1;
        let mut with_x1: Vec<u32> = (0..1u32 << vars)
            .filter(|&m| m.count_ones() as usize == r && m & 1 == 1)
            .collect();
        // Lexicographic on sorted index tuples.
        with_x1.sort_by_key(|&m| monomial_indices(m));
        let mut monomials = with_x1.clone();
        monomials.extend(with_x1.iter().map(|&m| full ^ m));
        let index = monomials.iter().enumerate().map(|(i, &m)| (m, i)).collect();
        Ok(Self { r, monomials, index })
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn vars(&self) -> usize {
        2 * self.r
    }

    /// Number of logical qubits `k`.
    pub fn k(&self) -> usize {
        self.monomials.len()
    }

    pub fn monomial(&self, i: usize) -> u32 {
        self.monomials[i]
    }

    pub fn monomials(&self) -> &[u32] {
        &self.monomials
    }

    pub fn index_of(&self, monomial: u32) -> Option<usize> {
        self.index.get(&monomial).copied()
    }

    /// Index of the complementary monomial, whose Z operator pairs with `i`.
    pub fn partner(&self, i: usize) -> usize {
        let half = self.k() / 2;
        if i < half {
            i + half
        } else {
            i - half
        }
    }

    pub fn full_mask(&self) -> u32 {
        (1u32 << self.vars()) - 1
    }

    /// Human-readable name, e.g. `x1x3`.
    pub fn name(&self, i: usize) -> String {
        monomial_name(self.monomials[i])
    }

    /// The permutation matrix exchanging the `L` and `L̄` halves.
    pub fn half_swap(&self) -> F2Matrix {
        let k = self.k();
        F2Matrix::from_fn(k, k, |i, j| self.partner(i) == j)
    }
}

fn monomial_indices(m: u32) -> Vec<u32> {
    (0..32).filter(|b| m >> b & 1 == 1).collect()
}

pub fn monomial_name(m: u32) -> String {
    if m == 0 {
        return "1".into();
    }
    monomial_indices(m).iter().map(|b| format!("x{}", b + 1)).collect()
}

/// Determinant over GF(2) of the minor of `a` on the given rows and columns.
fn minor(a: &F2Matrix, rows: u32, cols: u32) -> bool {
    let cols: Vec<usize> = (0..32).filter(|c| cols >> c & 1 == 1).collect();
    let mut sub: Vec<u64> = (0..32)
        .filter(|r| rows >> r & 1 == 1)
        .map(|r| cols.iter().enumerate().fold(0u64, |acc, (j, &c)| acc | (a.get(r, c) as u64) << j))
        .collect();
    let n = sub.len();
    for c in 0..n {
        let Some(p) = (c..n).find(|&i| sub[i] >> c & 1 == 1) else { return false };
        sub.swap(c, p);
        let pivot = sub[c];
        for row in sub.iter_mut().skip(c + 1) {
            if *row >> c & 1 == 1 {
                *row ^= pivot;
            }
        }
    }
    true
}

/// The logical action `φ_A` on the X logicals of the monomial basis.
///
/// Entry `(S, U)` is the determinant of the minor of `A` on variable rows
/// `S` and columns `U`.
pub fn phi(a: &F2Matrix, basis: &MonomialBasis) -> Result<F2Matrix, HighRateError> {
    let v = basis.vars();
    if a.rows() != v || a.cols() != v || !a.determinant() {
        return Err(HighRateError::BadPermutation { expected: v });
    }
    let k = basis.k();
    Ok(F2Matrix::from_fn(k, k, |s, u| minor(a, basis.monomial(s), basis.monomial(u))))
}

fn elementary(v: usize, i: usize, j: usize) -> F2Matrix {
    F2Matrix::elementary(v, i, j).expect("indices are in range")
}

fn swap(v: usize, i: usize, j: usize) -> F2Matrix {
    F2Matrix::swap_matrix(v, i, j).expect("indices are in range")
}

/// A formal sum of variable-space matrices, standing for `Σ φ_A`.
#[derive(Debug, Clone, Default)]
pub struct PhiSum {
    pub terms: Vec<F2Matrix>,
}

impl PhiSum {
    fn sum(terms: Vec<F2Matrix>) -> Self {
        Self { terms }
    }

    /// Product of sums, expanded by distributivity and with pairs cancelled.
    fn times(&self, other: &Self) -> Self {
        let mut terms: Vec<F2Matrix> = Vec::new();
        for a in &self.terms {
            for b in &other.terms {
                let p = a * b;
                match terms.iter().position(|t| *t == p) {
                    Some(i) => {
                        terms.swap_remove(i);
                    }
                    None => terms.push(p),
                }
            }
        }
        Self { terms }
    }

    fn sandwich(&self, left: &F2Matrix, right: &F2Matrix) -> Self {
        Self { terms: self.terms.iter().map(|t| &(left * t) * right).collect() }
    }

    pub fn evaluate(&self, basis: &MonomialBasis) -> F2Matrix {
        let k = basis.k();
        self.terms.iter().fold(F2Matrix::zeros(k, k), |acc, t| {
            acc.add(&phi(t, basis).expect("terms are invertible"))
        })
    }
}

/// The single-one generator: returns its expression, the expanded sum and
/// the evaluated `k × k` matrix.
pub fn gen_single_one(basis: &MonomialBasis) -> (String, PhiSum, F2Matrix) {
    let (r, v) = (basis.r(), basis.vars());
    let mut expr = format!("(phi(E[1,{}]) + phi(I))", r + 1);
    let mut sum = PhiSum::sum(vec![elementary(v, 0, r), F2Matrix::identity(v)]);
    for i in 0..r - 1 {
        let (a, b) = (i + 1, i + 2);
        expr.push_str(&format!(" * (phi(E[{a},{b}]) + phi(E[{b},{a}]) + phi(SWAP[{a},{b}]))"));
        sum = sum.times(&PhiSum::sum(vec![
            elementary(v, i, i + 1),
            elementary(v, i + 1, i),
            swap(v, i, i + 1),
        ]));
    }
    let matrix = sum.evaluate(basis);
    (expr, sum, matrix)
}

/// Row and column of the single one produced by [`gen_single_one`].
pub fn single_one_position(basis: &MonomialBasis) -> (usize, usize) {
    let r = basis.r();
    let high: u32 = ((r + 1)..(2 * r)).map(|b| 1u32 << b).sum();
    let row = basis.index_of(1 | high).expect("row monomial is in L");
    let col = basis.index_of(high | 1 << r).expect("column monomial is in L̄");
    (row, col)
}

/// A permutation of variables swapping those present in only one of two
/// monomials, chosen so that `φ_P` maps `from` to `to`.
fn pairing_permutation(from: u32, to: u32, v: usize) -> F2Matrix {
    let only_from = monomial_indices(from & !to);
    let only_to = monomial_indices(to & !from);
    let mut perm: Vec<usize> = (0..v).collect();
    for (&a, &b) in only_from.iter().zip(&only_to) {
        perm.swap(a as usize, b as usize);
    }
    F2Matrix::permutation(&perm)
}

/// Permutations `(P_L, P_R)` with `φ_{P_L} · F_base · φ_{P_R} = F_{i,j}`.
pub fn sandwich_to(i: usize, j: usize, basis: &MonomialBasis) -> (F2Matrix, F2Matrix) {
    let (b_row, b_col) = single_one_position(basis);
    let v = basis.vars();
    let left = pairing_permutation(basis.monomial(i), basis.monomial(b_row), v);
    let right = pairing_permutation(basis.monomial(b_col), basis.monomial(j), v);
    (left, right)
}

/// `F_{i,j}` as a sum of `φ_A` terms.
pub fn single_one_sum(i: usize, j: usize, basis: &MonomialBasis) -> PhiSum {
    let (_, base, _) = gen_single_one(basis);
    let (left, right) = sandwich_to(i, j, basis);
    base.sandwich(&left, &right)
}

/// Writes a symmetric permutation matrix with a fixed point as `U U^T`.
pub fn uu_t_decompose(t: &F2Matrix) -> Result<F2Matrix, HighRateError> {
    if !t.is_symmetric() {
        return Err(HighRateError::NotSymmetric);
    }
    let k = t.rows();
    if (0..k).any(|i| t.row(i).weight() != 1) || (0..k).any(|j| t.column(j).weight() != 1) {
        return Err(HighRateError::NotPermutation);
    }
    let image: Vec<usize> = (0..k).map(|i| t.row(i).iter_ones().next().unwrap()).collect();
    let fixed: Vec<usize> = (0..k).filter(|&i| image[i] == i).collect();
    if fixed.is_empty() {
        return Err(HighRateError::NoFixedPoint);
    }
    // order[c] is the original index placed at canonical position c: the
    // 2-cycles first, then the fixed points.
    let mut order = Vec::with_capacity(k);
    for i in 0..k {
        if image[i] > i {
            order.push(i);
            order.push(image[i]);
        }
    }
    let l = order.len() / 2;
    order.extend(&fixed);

    let mut canon = F2Matrix::identity(k);
    // Rows 2b and 2b+1 share ones at 0..=2b; the first adds 2b+1, the second
    // adds 2b+2. Row 2l is the all-ones prefix.
    for b in 0..l {
        let (p, q) = (2 * b, 2 * b + 1);
        for c in 0..k {
            canon.set(p, c, c <= p || c == q);
            canon.set(q, c, c < p + 1 || c == q + 1);
        }
    }
    for c in 0..k {
        canon.set(2 * l, c, c <= 2 * l);
    }
    // T = P^T C P with P e_{order[c]} = e_c, so U = P^T U_c.
    let u = F2Matrix::from_fn(k, k, |row, col| {
        let c = order.iter().position(|&o| o == row).unwrap();
        canon.get(c, col)
    });
    debug_assert!(u.determinant());
    if &u * &u.transpose() != *t {
        return Err(HighRateError::VerificationFailed);
    }
    Ok(u)
}

/// The variable involution `τ` exchanging `x_{2i-1}` and `x_{2i}`.
pub fn tau(m: u32) -> u32 {
    ((m & 0x5555_5555) << 1) | ((m >> 1) & 0x5555_5555)
}

/// Result of analysing the fold-transversal CZ gate.
#[derive(Debug, Clone)]
pub struct FoldReport {
    /// `T_CZ`: X logical `j` picks up the Z logical at the set column.
    pub t_cz: F2Matrix,
    /// The gate's symplectic action, `[[I, T_CZ], [0, I]]`.
    pub action: F2Matrix,
    /// Index of `x_{2r-1} ⋯ x_3 x_1`, a diagonal entry of `T_CZ`.
    pub diagonal_witness: usize,
    /// `(stabilizer monomial, overlap weight with its image)` for every
    /// X stabilizer monomial of degree at most `r - 1`.
    pub overlaps: Vec<(u32, usize)>,
}

impl FoldReport {
    pub fn phases_ok(&self) -> bool {
        self.overlaps.iter().all(|&(_, w)| w % 4 == 0)
    }
}

/// Number of points of `F_2^vars` where the monomial is one.
fn monomial_weight(m: u32, vars: usize) -> usize {
    (0..1u32 << vars).filter(|y| y & m == m).count()
}

pub fn fold_transversal(basis: &MonomialBasis) -> FoldReport {
    let k = basis.k();
    let full = basis.full_mask();
    // The Z logical paired with X logical j' sits on the complement of b_{j'}.
    let t_cz = F2Matrix::from_fn(k, k, |j, jp| {
        full ^ basis.monomial(jp) == tau(basis.monomial(j))
    });
    let witness_mask: u32 = (0..basis.r()).map(|i| 1u32 << (2 * i)).sum();
    let diagonal_witness = basis.index_of(witness_mask).expect("witness is in L");
    let vars = basis.vars();
    let overlaps = (0..1u32 << vars)
        .filter(|m| (m.count_ones() as usize) < basis.r())
        .map(|m| (m, monomial_weight(m | tau(m), vars)))
        .collect();
    let action = phase_action(&t_cz);
    FoldReport { t_cz, action, diagonal_witness, overlaps }
}

fn stack(a: &F2Matrix, b: &F2Matrix, c: &F2Matrix, d: &F2Matrix) -> F2Matrix {
    let (n, m) = (a.rows(), a.cols());
    F2Matrix::from_fn(n + c.rows(), m + b.cols(), |i, j| match (i < n, j < m) {
        (true, true) => a.get(i, j),
        (true, false) => b.get(i, j - m),
        (false, true) => c.get(i - n, j),
        (false, false) => d.get(i - n, j - m),
    })
}

fn block(m: &F2Matrix, row: usize, col: usize, size: usize) -> F2Matrix {
    F2Matrix::from_fn(size, size, |i, j| m.get(row + i, col + j))
}

/// `[[I, S], [0, I]]`.
pub fn phase_action(s: &F2Matrix) -> F2Matrix {
    let k = s.rows();
    stack(&F2Matrix::identity(k), s, &F2Matrix::zeros(k, k), &F2Matrix::identity(k))
}

/// `[[U, 0], [0, U^{-T}]]`.
pub fn cnot_action(u: &F2Matrix) -> F2Matrix {
    let k = u.rows();
    let inv_t = u.invert().expect("U is invertible").transpose();
    stack(u, &F2Matrix::zeros(k, k), &F2Matrix::zeros(k, k), &inv_t)
}

/// The standard form `Ω = [[0, I], [I, 0]]` in the paired ordering.
pub fn omega(k: usize) -> F2Matrix {
    F2Matrix::from_fn(2 * k, 2 * k, |i, j| i + k == j || j + k == i)
}

pub fn is_symplectic(m: &F2Matrix) -> bool {
    if !m.is_square() || m.rows() % 2 != 0 {
        return false;
    }
    let w = omega(m.rows() / 2);
    &(m * &w) * &m.transpose() == w
}

/// Which block of the data–ancilla pair a permutation acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    Data,
    Ancilla,
}

/// Direction of a transversal CNOT between the two blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CnotDir {
    DataToAncilla,
    AncillaToData,
}

/// A physical gate on the data block and its ancilla block.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum HrGate {
    /// Qubit permutation `y ↦ A^{-1} y`; its X action is `φ_A`.
    Perm { block: Block, a: F2Matrix },
    TCnot(CnotDir),
    FoldCz,
    TH,
    TS,
}

impl fmt::Display for HrGate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HrGate::Perm { block, a } => {
                let digits = a.cols().div_ceil(4);
                let rows: Vec<String> = (0..a.rows())
                    .map(|i| {
                        let v = (0..a.cols()).fold(0u64, |acc, j| acc << 1 | a.get(i, j) as u64);
                        format!("{v:0digits$x}")
                    })
                    .collect();
                let anc = if *block == Block::Ancilla { " ANC" } else { "" };
                write!(f, "PERM{anc} A={}", rows.join(","))
            }
            HrGate::TCnot(CnotDir::DataToAncilla) => write!(f, "TCNOT D>A"),
            HrGate::TCnot(CnotDir::AncillaToData) => write!(f, "TCNOT A>D"),
            HrGate::FoldCz => write!(f, "FOLDCZ"),
            HrGate::TH => write!(f, "TH"),
            HrGate::TS => write!(f, "TS"),
        }
    }
}

/// A gate sequence for a fixed `r`.
///
/// Text form: one gate per line, `PERM [ANC] A=<hex rows>`, `TCNOT D>A`,
/// `TCNOT A>D`, `FOLDCZ`, `TH`, `TS`. Hex rows write column 1 as the most
/// significant bit. Blank lines and `#` comments are ignored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Program {
    pub gates: Vec<HrGate>,
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.gates {
            writeln!(f, "{g}")?;
        }
        Ok(())
    }
}

impl Program {
    pub fn parse(text: &str, r: usize) -> Result<Self, HighRateError> {
        let v = 2 * r;
        let mut gates = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let err = |msg: &str| HighRateError::Parse { line: n + 1, msg: msg.into() };
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            let gate = match words.as_slice() {
                ["TCNOT", "D>A"] => HrGate::TCnot(CnotDir::DataToAncilla),
                ["TCNOT", "A>D"] => HrGate::TCnot(CnotDir::AncillaToData),
                ["FOLDCZ"] => HrGate::FoldCz,
                ["TH"] => HrGate::TH,
                ["TS"] => HrGate::TS,
                ["PERM", rest @ ..] => {
                    let (block, spec) = match rest {
                        ["ANC", s] => (Block::Ancilla, *s),
                        [s] => (Block::Data, *s),
                        _ => return Err(err("expected PERM [ANC] A=<hex rows>")),
                    };
                    let hex = spec.strip_prefix("A=").ok_or_else(|| err("missing A="))?;
                    let rows: Vec<&str> = hex.split(',').collect();
                    if rows.len() != v {
                        return Err(err(&format!("expected {v} rows")));
                    }
                    let mut a = F2Matrix::zeros(v, v);
                    for (i, h) in rows.iter().enumerate() {
                        let bits = u64::from_str_radix(h, 16).map_err(|e| err(&e.to_string()))?;
                        if bits >> v != 0 {
                            return Err(err("row has too many bits"));
                        }
                        for j in 0..v {
                            a.set(i, j, bits >> (v - 1 - j) & 1 == 1);
                        }
                    }
                    if !a.determinant() {
                        return Err(err("A is singular"));
                    }
                    HrGate::Perm { block, a }
                }
                _ => return Err(err(&format!("unknown gate `{line}`"))),
            };
            gates.push(gate);
        }
        Ok(Self { gates })
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    /// The `4k × 4k` action on `(X_data, X_anc | Z_data, Z_anc)`.
    pub fn action(&self, basis: &MonomialBasis) -> F2Matrix {
        let ctx = GateActions::new(basis);
        let mut cache: HashMap<&HrGate, F2Matrix> = HashMap::new();
        let mut acc = F2Matrix::identity(4 * basis.k());
        for g in &self.gates {
            let m = cache.entry(g).or_insert_with(|| ctx.action(g));
            acc = &acc * m;
        }
        acc
    }

    /// The action restricted to the data block, if the ancilla block is
    /// left untouched and not entangled with the data.
    pub fn data_action(&self, basis: &MonomialBasis) -> Option<F2Matrix> {
        let full = self.action(basis);
        let k = basis.k();
        let data = |i: usize| if i < k { i } else { i + k };
        let restricted = F2Matrix::from_fn(2 * k, 2 * k, |i, j| full.get(data(i), data(j)));
        (embed(&restricted, k) == full).then_some(restricted)
    }
}

/// Embeds a data-block action into the two-block space with identity on
/// the ancilla.
fn embed(m: &F2Matrix, k: usize) -> F2Matrix {
    let data = |i: usize| if i < k { Some(i) } else if (2 * k..3 * k).contains(&i) { Some(i - k) } else { None };
    F2Matrix::from_fn(4 * k, 4 * k, |i, j| match (data(i), data(j)) {
        (Some(a), Some(b)) => m.get(a, b),
        (None, None) => i == j,
        _ => false,
    })
}

struct GateActions<'a> {
    basis: &'a MonomialBasis,
    half: F2Matrix,
    t_cz: F2Matrix,
}

impl<'a> GateActions<'a> {
    fn new(basis: &'a MonomialBasis) -> Self {
        Self { basis, half: basis.half_swap(), t_cz: fold_transversal(basis).t_cz }
    }

    fn action(&self, g: &HrGate) -> F2Matrix {
        let k = self.basis.k();
        let (id, zero) = (F2Matrix::identity(k), F2Matrix::zeros(k, k));
        let data_only = |m: &F2Matrix| embed(m, k);
        match g {
            HrGate::Perm { block, a } => {
                let p = cnot_action(&phi(a, self.basis).expect("program matrices are invertible"));
                match block {
                    Block::Data => data_only(&p),
                    // Reorder so that the ancilla plays the data role.
                    Block::Ancilla => {
                        let swap = |i: usize| if (i / k) % 2 == 0 { i + k } else { i - k };
                        let e = data_only(&p);
                        F2Matrix::from_fn(4 * k, 4 * k, |i, j| e.get(swap(i), swap(j)))
                    }
                }
            }
            HrGate::TCnot(dir) => {
                let upper = stack(&id, &id, &zero, &id);
                let lower = upper.transpose();
                match dir {
                    CnotDir::DataToAncilla => stack(&upper, &F2Matrix::zeros(2 * k, 2 * k), &F2Matrix::zeros(2 * k, 2 * k), &lower),
                    CnotDir::AncillaToData => stack(&lower, &F2Matrix::zeros(2 * k, 2 * k), &F2Matrix::zeros(2 * k, 2 * k), &upper),
                }
            }
            HrGate::FoldCz => data_only(&phase_action(&self.t_cz)),
            HrGate::TH => data_only(&stack(&zero, &self.half, &self.half, &zero)),
            HrGate::TS => data_only(&phase_action(&self.half)),
        }
    }
}

/// Builds gate sequences for logical actions on the data block.
struct Synth<'a> {
    basis: &'a MonomialBasis,
    gates: Vec<HrGate>,
    fold_u: Option<F2Matrix>,
    /// `F_{i,j}` as `φ` sums, cached per target entry.
    singles: HashMap<(usize, usize), PhiSum>,
}

impl<'a> Synth<'a> {
    fn new(basis: &'a MonomialBasis) -> Result<Self, HighRateError> {
        let t_cz = fold_transversal(basis).t_cz;
        let fold_u = if t_cz.is_identity() { None } else { Some(uu_t_decompose(&t_cz)?) };
        Ok(Self { basis, gates: Vec::new(), fold_u, singles: HashMap::new() })
    }

    fn perm(&mut self, block: Block, a: F2Matrix) {
        self.gates.push(HrGate::Perm { block, a });
    }

    /// `[[I, F_{i,j}], [0, I]]` or its transpose on the (data, ancilla) X space.
    fn single_one_coupling(&mut self, i: usize, j: usize, upper: bool) {
        let sum = self.singles.entry((i, j)).or_insert_with(|| single_one_sum(i, j, self.basis)).clone();
        for a in sum.terms {
            let inv = a.invert().expect("terms are invertible");
            if upper {
                self.perm(Block::Data, a);
                self.gates.push(HrGate::TCnot(CnotDir::DataToAncilla));
                self.perm(Block::Data, inv);
            } else {
                self.perm(Block::Ancilla, a);
                self.gates.push(HrGate::TCnot(CnotDir::AncillaToData));
                self.perm(Block::Ancilla, inv);
            }
        }
    }

    /// CNOT-type action of `E_{i,l}` on the data, via a commutator of
    /// couplings through the ancilla.
    fn elementary(&mut self, i: usize, l: usize) {
        // F_{i,i} F_{i,l} = F_{i,l}; the commutator leaves I + F_{i,l} on the data.
        self.single_one_coupling(i, i, true);
        self.single_one_coupling(i, l, false);
        self.single_one_coupling(i, i, true);
        self.single_one_coupling(i, l, false);
    }

    fn cnot_type(&mut self, u: &F2Matrix) {
        // Reduce U to I by row additions; U is then the product of those
        // elementary matrices in the order they were applied.
        let k = u.rows();
        let mut m = u.clone();
        let mut ops = Vec::new();
        let add = |m: &mut F2Matrix, dst: usize, src: usize, ops: &mut Vec<(usize, usize)>| {
            let row = m.row(src).clone();
            let mut d = m.row(dst).clone();
            d.xor_assign(&row);
            for c in 0..k {
                m.set(dst, c, d.get(c));
            }
            ops.push((dst, src));
        };
        for c in 0..k {
            if !m.get(c, c) {
                let p = (c + 1..k).find(|&i| m.get(i, c)).expect("U is invertible");
                add(&mut m, c, p, &mut ops);
            }
            for i in 0..k {
                if i != c && m.get(i, c) {
                    add(&mut m, i, c, &mut ops);
                }
            }
        }
        for (dst, src) in ops {
            self.elementary(dst, src);
        }
    }

    /// `[[I, I], [0, I]]` from the fold-transversal gate.
    fn identity_phase(&mut self) {
        match self.fold_u.clone() {
            None => self.gates.push(HrGate::FoldCz),
            Some(u) => {
                self.cnot_type(&u.invert().expect("U is invertible"));
                self.gates.push(HrGate::FoldCz);
                self.cnot_type(&u);
            }
        }
    }

    /// `[[I, V V^T], [0, I]]`.
    fn conjugated_phase(&mut self, v: &F2Matrix) {
        self.cnot_type(v);
        self.identity_phase();
        self.cnot_type(&v.invert().expect("V is invertible"));
    }

    fn phase_type(&mut self, s: &F2Matrix) -> Result<(), HighRateError> {
        if !s.is_symmetric() {
            return Err(HighRateError::NotSymmetric);
        }
        let k = s.rows();
        if k == 2 {
            // Basis I, E E^T = F_12 + F_21 + F_22, and the transversal S.
            let (mut d1, mut d2, mut off) = (s.get(0, 0), s.get(1, 1), s.get(0, 1));
            if d1 {
                self.identity_phase();
                d1 = false;
                d2 = !d2;
            }
            debug_assert!(!d1);
            if d2 {
                self.conjugated_phase(&elementary(2, 0, 1));
                off = !off;
            }
            if off {
                self.gates.push(HrGate::TS);
            }
            return Ok(());
        }
        let mut diag: Vec<bool> = (0..k).map(|i| s.get(i, i)).collect();
        let mut identity = false;
        for i in 0..k {
            for j in i + 1..k {
                if s.get(i, j) {
                    // F_ij + F_ji = SWAP_ij + I + F_ii + F_jj.
                    self.conjugated_phase(&uu_t_decompose(&swap(k, i, j))?);
                    identity = !identity;
                    diag[i] = !diag[i];
                    diag[j] = !diag[j];
                }
            }
        }
        if identity {
            self.identity_phase();
        }
        for (l, &on) in diag.iter().enumerate() {
            if on {
                // F_ll = E_{i,l} E_{i,l}^T + SWAP_{i,l}.
                let i = if l == 0 { 1 } else { 0 };
                self.conjugated_phase(&elementary(k, i, l));
                self.conjugated_phase(&uu_t_decompose(&swap(k, i, l))?);
            }
        }
        Ok(())
    }

    /// Full Hadamard `[[0, I], [I, 0]]`.
    fn hadamard_type(&mut self) {
        let half = self.basis.half_swap();
        self.cnot_type(&half);
        self.gates.push(HrGate::TH);
    }

    fn lower_phase(&mut self, s: &F2Matrix) -> Result<(), HighRateError> {
        self.hadamard_type();
        self.phase_type(s)?;
        self.hadamard_type();
        Ok(())
    }
}

/// Decomposes a logical symplectic action into physical gates on the data
/// block and an ancilla block, and checks the result by multiplication.
pub fn synthesize(target: &F2Matrix, basis: &MonomialBasis) -> Result<Program, HighRateError> {
    let k = basis.k();
    if target.rows() != 2 * k || !is_symplectic(target) {
        return Err(HighRateError::NotSymplectic(2 * k));
    }
    let a = block(target, 0, 0, k);
    // Columns of A outside a pivot set get exchanged with their Z partner,
    // which makes the upper-left block invertible.
    let (_, pivots) = a.echelon();
    let q: Vec<usize> = (0..k).filter(|c| !pivots.contains(c)).collect();
    let mut jq = F2Matrix::identity(2 * k);
    for &c in &q {
        jq.set(c, c, false);
        jq.set(c + k, c + k, false);
        jq.set(c, c + k, true);
        jq.set(c + k, c, true);
    }
    let m = target * &jq;
    let a = block(&m, 0, 0, k);
    let a_inv = a.invert().map_err(|_| HighRateError::VerificationFailed)?;
    let lower = &block(&m, k, 0, k) * &a_inv;
    let upper = &a_inv * &block(&m, 0, k, k);

    let mut s = Synth::new(basis)?;
    if lower.weight() > 0 {
        s.lower_phase(&lower)?;
    }
    if !a.is_identity() {
        s.cnot_type(&a);
    }
    if upper.weight() > 0 {
        s.phase_type(&upper)?;
    }
    if !q.is_empty() {
        let d = F2Matrix::from_fn(k, k, |i, j| i == j && q.contains(&i));
        s.phase_type(&d)?;
        s.lower_phase(&d)?;
        s.phase_type(&d)?;
    }
    let program = Program { gates: s.gates };
    match program.data_action(basis) {
        Some(action) if action == *target => Ok(program),
        _ => Err(HighRateError::VerificationFailed),
    }
}

/// A random symplectic matrix as a product of `4k` random transvections.
pub fn random_symplectic<R: rand::Rng>(k: usize, rng: &mut R) -> F2Matrix {
    let w = omega(k);
    let mut m = F2Matrix::identity(2 * k);
    for _ in 0..4 * k {
        let v = F2Vector::from_bools(&(0..2 * k).map(|_| rng.gen::<bool>()).collect::<Vec<_>>());
        let wv = w.mul_vec(&v);
        // x ↦ x + <x, v> v.
        let t = F2Matrix::from_fn(2 * k, 2 * k, |i, j| (i == j) ^ (wv.get(i) && v.get(j)));
        m = &m * &t;
    }
    m
}

impl FromStr for Program {
    type Err = HighRateError;

    /// Parses assuming the row width of the first `PERM`; prefer
    /// [`Program::parse`] when `r` is known.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let width = s
            .lines()
            .find_map(|l| l.split("A=").nth(1).map(|h| h.split(',').count()))
            .unwrap_or(2);
        Program::parse(s, width / 2)
    }
}
