//! Automorphism-based fault-tolerant state preparation: permuted encoders,
//! transversal verification, and strict fault-tolerance checks by
//! meet-in-the-middle over detector syndromes.
//!
//! Four patches are encoded with the same hypercube circuit. Patch `p` then has
//! its coordinates relabeled by the matrix `A_p` of its swap column: canonical
//! label `x` ends up at physical label `A_p x`. For a state prepared with
//! [`Verification::PairX`], patches 1/2 and 3/4 are checked against each other
//! for X flips, then patches 1 and 3 for Z flips; the output is patch 1.
//! [`Verification::PairZ`] is the dual arrangement. Patches are 0-based in code.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{init_basis, label_of_qubit, qubit_of_label, Basis, Circuit, FastEncoder, FaultId, Layer, LogicalState, PAULI_X, PAULI_Z};
use crate::decoder::{reduced_weight_bounded, reduced_weight_exact};
use crate::gf2::{coordinate_map, F2Matrix, F2Vector, Gf2Error};
use crate::rm_codes::{full_mask, mobius_u128, QrmCode, RmCode};

#[derive(Debug, Error)]
pub enum FtError {
    #[error("schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Gf2(#[from] Gf2Error),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("dictionary for order {order} needs {needed} entries, budget is {budget}")]
    Resource { order: usize, needed: usize, budget: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PauliType {
    X,
    Z,
}

impl PauliType {
    pub fn other(self) -> Self {
        match self {
            PauliType::X => PauliType::Z,
            PauliType::Z => PauliType::X,
        }
    }
}

impl fmt::Display for PauliType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PauliType::X => "X",
            PauliType::Z => "Z",
        })
    }
}

/// The sub-hypercube swap `E_{i,j}`: row `i` of the label vector gains row `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Swap {
    pub i: usize,
    pub j: usize,
}

/// Per-patch swap sequences, each applied top to bottom in time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationSchedule {
    pub m: usize,
    pub columns: Vec<Vec<Swap>>,
}

impl PermutationSchedule {
    pub fn new(m: usize, columns: Vec<Vec<Swap>>) -> Result<Self, FtError> {
        if columns.len() != 4 {
            return Err(FtError::Schedule(format!("expected 4 columns, got {}", columns.len())));
        }
        for s in columns.iter().flatten() {
            if s.i >= m || s.j >= m || s.i == s.j {
                return Err(FtError::Schedule(format!("invalid swap E {} {} for m = {m}", s.i, s.j)));
            }
        }
        Ok(Self { m, columns })
    }

    /// Four empty columns.
    pub fn identity(m: usize) -> Self {
        Self { m, columns: vec![Vec::new(); 4] }
    }

    /// Parses one column per non-comment line, tokens `E i j` separated by
    /// commas or whitespace.
    pub fn parse(text: &str, m: usize) -> Result<Self, FtError> {
        let mut columns = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()).collect();
            if toks.len() % 3 != 0 {
                return Err(FtError::Schedule(format!("line {}: expected `E i j` triples", ln + 1)));
            }
            let mut col = Vec::new();
            for t in toks.chunks(3) {
                let num = |s: &str| s.parse::<usize>().map_err(|_| FtError::Schedule(format!("line {}: bad index {s:?}", ln + 1)));
                if t[0] != "E" {
                    return Err(FtError::Schedule(format!("line {}: expected E, found {:?}", ln + 1, t[0])));
                }
                col.push(Swap { i: num(t[1])?, j: num(t[2])? });
            }
            columns.push(col);
        }
        Self::new(m, columns)
    }

    pub fn to_text(&self) -> String {
        self.columns
            .iter()
            .map(|c| c.iter().map(|s| format!("E {} {}", s.i, s.j)).collect::<Vec<_>>().join(", ") + "\n")
            .collect()
    }

    /// The schedule for the distance-7 code.
    pub fn d7() -> Self {
        Self::parse(include_str!("../../../schedules/d7.txt"), 7).expect("bundled schedule")
    }

    /// The schedule for the distance-15 code.
    pub fn d15() -> Self {
        Self::parse(include_str!("../../../schedules/d15.txt"), 7).expect("bundled schedule")
    }

    /// Relabeling matrix of column `c`: the product of its swaps with the
    /// earliest on the left.
    pub fn matrix(&self, c: usize) -> F2Matrix {
        swaps_matrix(self.m, &self.columns[c])
    }

    /// Label map `x ↦ A_c x` of column `c`.
    pub fn label_map(&self, c: usize) -> Vec<usize> {
        coordinate_map(&self.matrix(c), &F2Vector::zeros(self.m)).expect("products of swaps are invertible")
    }
}

/// Product of swap matrices, earliest on the left.
pub fn swaps_matrix(m: usize, swaps: &[Swap]) -> F2Matrix {
    swaps.iter().fold(F2Matrix::identity(m), |acc, s| &acc * &F2Matrix::elementary(m, s.i, s.j).expect("validated swap"))
}

/// Every column of `A^{-1} B` has at least two ones.
pub fn necessary_condition(a: &F2Matrix, b: &F2Matrix) -> Result<bool, FtError> {
    let rel = &a.invert()? * b;
    Ok((0..rel.cols()).all(|c| rel.column(c).weight() >= 2))
}

/// Word-parallel subset sums `u_ℓ = Σ_{c ⊇ ℓ} v_c` over label masks.
#[inline]
pub fn superset_u128(v: u128, m: usize) -> u128 {
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
        v ^= (v >> (1u32 << b)) & mask;
    }
    v
}

/// Noiseless syndrome extraction for one patch in state `state`.
///
/// A measured pattern of `ty` flips is fed back through the canonical encoder;
/// the wires initialized in the basis that detects `ty` must read zero. The
/// syndrome is that wire pattern as a label mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Detector {
    pub code: QrmCode,
    pub state: LogicalState,
    pub ty: PauliType,
    pub mask: u128,
    subset: bool,
}

impl Detector {
    pub fn new(code: QrmCode, state: LogicalState, ty: PauliType) -> Self {
        let watch = match ty {
            PauliType::X => Basis::Z,
            PauliType::Z => Basis::X,
        };
        let first = usize::from(code.punctured);
        let mask = (first..1usize << code.m).filter(|&l| init_basis(&code, state, l) == watch).fold(0u128, |acc, l| acc | 1u128 << l);
        let subset = matches!((state, ty), (LogicalState::Zero, PauliType::X) | (LogicalState::Plus, PauliType::Z));
        Self { code, state, ty, mask, subset }
    }

    pub fn n_detectors(&self) -> usize {
        self.mask.count_ones() as usize
    }

    /// The encoder's propagation map for flips of this type, with the
    /// punctured wire dropped. It is an involution on valid patterns.
    #[inline]
    pub fn transform(&self, v: u128) -> u128 {
        let keep = if self.code.punctured { full_mask(self.code.m) & !1 } else { full_mask(self.code.m) };
        let t = if self.subset { mobius_u128(v & keep, self.code.m) } else { superset_u128(v & keep, self.code.m) };
        t & keep
    }

    #[inline]
    pub fn syndrome(&self, pattern: u128) -> u128 {
        self.transform(pattern) & self.mask
    }

    /// Some pattern with the given syndrome.
    #[inline]
    pub fn lift(&self, syndrome: u128) -> u128 {
        self.transform(syndrome & self.mask)
    }

    /// Classical code of the state's stabilizers of this type; it is the
    /// kernel of [`Detector::syndrome`].
    pub fn stabilizer_code(&self) -> RmCode {
        let (x, z) = self.code.state_stabilizers(self.state).expect("punctured single-qubit code");
        match self.ty {
            PauliType::X => x,
            PauliType::Z => z,
        }
    }
}

/// Reduced weight of a residual against a punctured stabilizer code.
///
/// Exact enumeration for small codes, otherwise Reed decoding, which is exact
/// below `2^(m-r-1)`; callers compare against thresholds under that bound.
pub fn reduced_weight(mask: u128, code: &RmCode) -> usize {
    if code.dimension() <= 20 {
        reduced_weight_exact(mask, code)
    } else {
        reduced_weight_bounded(mask, code)
    }
}

/// Largest threshold `t` for which "reduced weight > t" is decided exactly.
pub fn exact_threshold(code: &RmCode) -> usize {
    if code.dimension() <= 20 {
        usize::MAX
    } else {
        (1usize << (code.m - code.r - 1)) - 1
    }
}

/// Which Pauli type is checked pairwise first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verification {
    /// Patches 1→2 and 3→4 by CNOT, Z-measure 2 and 4, then CNOT 3→1 and
    /// X-measure 3.
    PairX,
    /// CNOT 2→1 and 4→3, X-measure 2 and 4, then CNOT 1→3 and Z-measure 3.
    PairZ,
}

impl Verification {
    /// The arrangement used for `state`: X pairs for `|0⟩_L`, and for `|+⟩_L`
    /// whenever the code has more Z-type than X-type detectors.
    pub fn default_for(code: &QrmCode, state: LogicalState) -> Self {
        match state {
            LogicalState::Zero => Verification::PairX,
            LogicalState::Plus if code.r_z > code.r_x => Verification::PairX,
            LogicalState::Plus => Verification::PairZ,
        }
    }

    pub fn pair_type(self) -> PauliType {
        match self {
            Verification::PairX => PauliType::X,
            Verification::PairZ => PauliType::Z,
        }
    }

    pub fn global_type(self) -> PauliType {
        self.pair_type().other()
    }

    /// Patches whose faults reach the output for `ty`, and those that only
    /// reach detectors. For the pair type this is the first pair.
    pub fn sides(self, ty: PauliType) -> Vec<(Vec<usize>, Vec<usize>)> {
        if ty == self.pair_type() {
            vec![(vec![0], vec![1]), (vec![2], vec![3])]
        } else {
            vec![(vec![0, 1], vec![2, 3])]
        }
    }
}

/// Where a measured block sits in the measurement record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasuredBlock {
    pub patch: usize,
    pub ty: PauliType,
    pub first_record: usize,
}

/// A four-patch preparation protocol.
#[derive(Debug, Clone)]
pub struct Protocol {
    pub code: QrmCode,
    pub state: LogicalState,
    pub verification: Verification,
    pub schedule: PermutationSchedule,
    /// `maps[p][x]`: physical label of canonical label `x` on patch `p`.
    pub maps: Vec<Vec<usize>>,
    pub circuit: Circuit,
    pub blocks: Vec<MeasuredBlock>,
    /// Layer index of every encoder tick, shared by all patches.
    pub step_layers: Vec<usize>,
}

impl Protocol {
    pub fn n(&self) -> usize {
        self.code.n()
    }

    pub fn detector(&self, ty: PauliType) -> Detector {
        Detector::new(self.code, self.state, ty)
    }

    /// Qubit of physical label `label` on patch `p`.
    pub fn qubit(&self, p: usize, label: usize) -> usize {
        p * self.n() + qubit_of_label(label, self.code.punctured)
    }

    /// Label mask of patch `p` from a per-qubit bit vector.
    pub fn patch_mask(&self, bits: &F2Vector, p: usize) -> u128 {
        let n = self.n();
        (0..n).filter(|&q| bits.get(p * n + q)).fold(0u128, |acc, q| acc | 1u128 << label_of_qubit(q, self.code.punctured))
    }

    /// Label mask of a measured block from a measurement record.
    pub fn block_mask(&self, record: &F2Vector, b: &MeasuredBlock) -> u128 {
        (0..self.n())
            .filter(|&q| record.get(b.first_record + q))
            .fold(0u128, |acc, q| acc | 1u128 << label_of_qubit(q, self.code.punctured))
    }

    /// Acceptance: every measured block is a stabilizer pattern.
    pub fn accepts(&self, record: &F2Vector) -> bool {
        self.blocks.iter().all(|b| self.detector(b.ty).syndrome(self.block_mask(record, b)) == 0)
    }
}

/// Assembles the protocol circuit.
///
/// Layers: initializations of all four patches, then the encoding steps in
/// lockstep, one relabeling layer carrying all four schedule maps, and the
/// verification CNOTs and measurements.
pub fn build_protocol(code: QrmCode, state: LogicalState, verification: Verification, schedule: &PermutationSchedule) -> Result<Protocol, FtError> {
    if schedule.columns.len() != 4 {
        return Err(FtError::Schedule(format!("expected 4 columns, got {}", schedule.columns.len())));
    }
    if schedule.m != code.m || !code.punctured || code.k() != 1 {
        return Err(FtError::Unsupported("protocol needs a punctured single-qubit code matching the schedule".into()));
    }
    let n = code.n();
    let enc = crate::circuit::hypercube_encoder(&code, state);
    let maps: Vec<Vec<usize>> = (0..4).map(|c| schedule.label_map(c)).collect();
    let mut c = Circuit::new(4 * n);
    let mut step_layers = Vec::new();
    for layer in &enc.layers {
        match layer {
            Layer::Init(q, b) => {
                for p in 0..4 {
                    c.layers.push(Layer::Init(p * n + q, *b));
                }
            }
            Layer::Cnot(pairs) => {
                c.layers.push(Layer::Cnot((0..4).flat_map(|p| pairs.iter().map(move |&(a, b)| (p * n + a, p * n + b))).collect()));
            }
            Layer::Tick => {
                step_layers.push(c.layers.len());
                c.layers.push(Layer::Tick);
            }
            _ => unreachable!("encoder has only inits, CNOTs and ticks"),
        }
    }
    let mut perm = vec![0; 4 * n];
    for (p, map) in maps.iter().enumerate() {
        for q in 0..n {
            let l = label_of_qubit(q, code.punctured);
            perm[p * n + q] = p * n + qubit_of_label(map[l], code.punctured);
        }
    }
    let id = c.add_map("schedule", perm);
    c.layers.push(Layer::Perm(id));
    c.layers.push(Layer::Tick);

    let transversal = |a: usize, b: usize| (0..n).map(move |q| (a * n + q, b * n + q));
    let mut blocks = Vec::new();
    let mut record = 0;
    let mut measure = |c: &mut Circuit, patch: usize, basis: Basis| {
        for q in 0..n {
            c.layers.push(Layer::Measure(patch * n + q, basis));
        }
        let ty = if basis == Basis::Z { PauliType::X } else { PauliType::Z };
        blocks.push(MeasuredBlock { patch, ty, first_record: record });
        record += n;
    };
    let (first, second, b1, b2) = match verification {
        Verification::PairX => ([(0, 1), (2, 3)], (2, 0), Basis::Z, Basis::X),
        Verification::PairZ => ([(1, 0), (3, 2)], (0, 2), Basis::X, Basis::Z),
    };
    c.layers.push(Layer::Cnot(first.iter().flat_map(|&(a, b)| transversal(a, b)).collect()));
    c.layers.push(Layer::Tick);
    // Patches 1 and 3 are the pair-check partners of 0 and 2.
    measure(&mut c, 1, b1);
    measure(&mut c, 3, b1);
    c.layers.push(Layer::Cnot(transversal(second.0, second.1).collect()));
    c.layers.push(Layer::Tick);
    measure(&mut c, 2, b2);
    c.validate().map_err(|e| FtError::Unsupported(e.to_string()))?;
    Ok(Protocol { code, state, verification, schedule: schedule.clone(), maps, circuit: c, blocks, step_layers })
}

/// Where a single encoder fault happens, in canonical labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaultOrigin {
    /// Flip right after initializing wire `label`.
    Init { label: usize },
    /// Fault after the CNOT `(control, target)` of step `step`; `which` is 1
    /// for the control, 2 for the target, 3 for both.
    Cnot { step: usize, control: usize, target: usize, which: u8 },
}

/// A deduplicated single fault of one type on one patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultClass {
    pub patch: usize,
    pub origin: FaultOrigin,
    /// Physical label mask at the end of the encoder.
    #[serde(with = "crate::mask_serde")]
    pub residual: u128,
    #[serde(with = "crate::mask_serde")]
    pub syndrome: u128,
    /// Number of raw faults merged into this class.
    pub multiplicity: u32,
}

/// All single encoder faults of type `ty` on one patch, before dedup.
pub fn raw_patch_faults(code: &QrmCode, state: LogicalState, ty: PauliType, map: &[usize]) -> Vec<(FaultOrigin, u128)> {
    let m = code.m;
    let enc = FastEncoder::new(m, state, code.punctured);
    let push = |x: u128, z: u128| match ty {
        PauliType::X => x,
        PauliType::Z => z,
    };
    let to_phys = |canon: u128| {
        let mut out = 0u128;
        let mut v = canon;
        while v != 0 {
            let l = v.trailing_zeros() as usize;
            out |= 1u128 << map[l];
            v &= v - 1;
        }
        out
    };
    let inject = |after: usize, wires: u128| {
        let (x, z) = match ty {
            PauliType::X => enc.propagate(after, wires, 0),
            PauliType::Z => enc.propagate(after, 0, wires),
        };
        to_phys(push(x, z))
    };
    let flips = match ty {
        PauliType::X => Basis::Z,
        PauliType::Z => Basis::X,
    };
    let mut out = Vec::new();
    for l in usize::from(code.punctured)..1usize << m {
        if init_basis(code, state, l) == flips {
            out.push((FaultOrigin::Init { label: l }, inject(0, 1u128 << l)));
        }
    }
    for step in 1..=m {
        for (c, t) in crate::circuit::encoder_step_pairs(m, step, state, code.punctured) {
            for which in 1..=3u8 {
                let mut wires = 0u128;
                if which & 1 != 0 {
                    wires |= 1u128 << c;
                }
                if which & 2 != 0 {
                    wires |= 1u128 << t;
                }
                out.push((FaultOrigin::Cnot { step, control: c, target: t, which }, inject(step, wires)));
            }
        }
    }
    out
}

/// Deduplicated fault classes of one patch; zero-syndrome faults are dropped
/// since their residual is a stabilizer.
pub fn patch_universe(code: &QrmCode, state: LogicalState, ty: PauliType, patch: usize, map: &[usize]) -> Vec<FaultClass> {
    let det = Detector::new(*code, state, ty);
    let mut index: HashMap<u128, usize> = HashMap::new();
    let mut out: Vec<FaultClass> = Vec::new();
    for (origin, residual) in raw_patch_faults(code, state, ty, map) {
        let syndrome = det.syndrome(residual);
        if syndrome == 0 {
            continue;
        }
        match index.get(&syndrome) {
            Some(&i) => out[i].multiplicity += 1,
            None => {
                index.insert(syndrome, out.len());
                out.push(FaultClass { patch, origin, residual, syndrome, multiplicity: 1 });
            }
        }
    }
    out
}

impl Protocol {
    /// Fault classes of type `ty` on patch `p`.
    pub fn universe(&self, ty: PauliType, p: usize) -> Vec<FaultClass> {
        patch_universe(&self.code, self.state, ty, p, &self.maps[p])
    }

    /// The circuit fault id realizing a fault class, for forced simulation.
    pub fn fault_id(&self, f: &FaultClass, ty: PauliType) -> FaultId {
        let punct = self.code.punctured;
        let sites = self.site_index();
        let pauli = match ty {
            PauliType::X => PAULI_X,
            PauliType::Z => PAULI_Z,
        };
        match f.origin {
            FaultOrigin::Init { label } => {
                let q = f.patch * self.n() + qubit_of_label(label, punct);
                crate::circuit::fault_id(sites[&(0, q, q)], 1)
            }
            FaultOrigin::Cnot { step, control, target, which } => {
                let (cq, tq) = (self.qubit_unmapped(f.patch, control), self.qubit_unmapped(f.patch, target));
                let layer = self.step_layers[step] - 1;
                let mut code = 0u8;
                if which & 1 != 0 {
                    code |= pauli << 2;
                }
                if which & 2 != 0 {
                    code |= pauli;
                }
                crate::circuit::fault_id(sites[&(layer, cq, tq)], code)
            }
        }
    }

    fn qubit_unmapped(&self, p: usize, label: usize) -> usize {
        p * self.n() + qubit_of_label(label, self.code.punctured)
    }

    /// Site index keyed by `(layer, a, b)`; inits use layer 0 and `a = b`.
    fn site_index(&self) -> HashMap<(usize, usize, usize), usize> {
        use crate::circuit::FaultSite;
        let mut idx = HashMap::new();
        for (i, s) in self.circuit.fault_sites().iter().enumerate() {
            match *s {
                FaultSite::Init { qubit, .. } => {
                    idx.insert((0, qubit, qubit), i);
                }
                FaultSite::Cnot { layer, control, target } => {
                    idx.insert((layer, control, target), i);
                }
                _ => {}
            }
        }
        idx
    }
}

/// A fault combination that passes verification with a heavy residual.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalignantSet {
    pub faults: Vec<FaultClass>,
    /// Output-patch residual as a physical label mask.
    #[serde(with = "crate::mask_serde")]
    pub residual: u128,
    pub reduced_weight: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderReport {
    pub order: usize,
    pub count: u64,
    pub witnesses: Vec<MalignantSet>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FtVerdict {
    pub ty: PauliType,
    pub max_order: usize,
    pub suppression: bool,
    pub orders: Vec<OrderReport>,
}

impl FtVerdict {
    /// No malignant set up to `max_order`.
    pub fn strictly_ft(&self) -> bool {
        self.orders.iter().all(|o| o.count == 0)
    }
}

/// Syndrome-indexed view of one side's fault classes.
struct SideIndex<'a> {
    classes: &'a [FaultClass],
    singles: HashMap<u128, Vec<u32>>,
    /// `(syndrome, i, j)` with `i < j`, sorted.
    pairs: Vec<(u128, u32, u32)>,
}

impl<'a> SideIndex<'a> {
    fn new(classes: &'a [FaultClass], with_pairs: bool) -> Self {
        let mut singles: HashMap<u128, Vec<u32>> = HashMap::new();
        for (i, c) in classes.iter().enumerate() {
            singles.entry(c.syndrome).or_default().push(i as u32);
        }
        let mut pairs = Vec::new();
        if with_pairs {
            pairs.reserve(classes.len() * classes.len().saturating_sub(1) / 2);
            for i in 0..classes.len() {
                for j in i + 1..classes.len() {
                    pairs.push((classes[i].syndrome ^ classes[j].syndrome, i as u32, j as u32));
                }
            }
            pairs.sort_unstable();
        }
        Self { classes, singles, pairs }
    }

    fn pair_range(&self, s: u128) -> &[(u128, u32, u32)] {
        let lo = self.pairs.partition_point(|p| p.0 < s);
        let hi = lo + self.pairs[lo..].partition_point(|p| p.0 == s);
        &self.pairs[lo..hi]
    }

    /// Index sets of `size ≤ 3` distinct classes with syndrome sum `s`.
    fn combos(&self, size: usize, s: u128, out: &mut Vec<[u32; 3]>) {
        out.clear();
        match size {
            1 => out.extend(self.singles.get(&s).into_iter().flatten().map(|&i| [i, 0, 0])),
            2 => out.extend(self.pair_range(s).iter().map(|&(_, i, j)| [i, j, 0])),
            3 => {
                for (k, c) in self.classes.iter().enumerate() {
                    let k = k as u32;
                    for &(_, i, j) in self.pair_range(s ^ c.syndrome) {
                        if k < i {
                            out.push([k, i, j]);
                        }
                    }
                }
            }
            _ => unreachable!(),
        }
    }

    fn count(&self, size: usize, s: u128) -> u64 {
        match size {
            1 => self.singles.get(&s).map_or(0, |v| v.len() as u64),
            2 => self.pair_range(s).len() as u64,
            _ => {
                let mut v = Vec::new();
                self.combos(size, s, &mut v);
                v.len() as u64
            }
        }
    }
}

/// Counts malignant combinations of exactly `order ≤ 4` faults split between
/// an output side and a detector-only side with equal syndrome sums.
///
/// A combination is malignant when the output residual's reduced weight
/// exceeds `threshold`. The reduced weight depends only on the syndrome sum,
/// because the syndrome kernel is the stabilizer code.
fn count_split_small(
    left: &[FaultClass],
    right: &[FaultClass],
    order: usize,
    threshold: usize,
    det: &Detector,
    witness_limit: usize,
) -> (u64, Vec<MalignantSet>) {
    let code = det.stabilizer_code();
    let need_pairs = order >= 3;
    let li = SideIndex::new(left, need_pairs);
    let ri = SideIndex::new(right, need_pairs);
    let mut rho: HashMap<u128, usize> = HashMap::new();
    let mut rho_of = |s: u128| *rho.entry(s).or_insert_with(|| reduced_weight(det.lift(s), &code));
    let mut count = 0u64;
    let mut witnesses = Vec::new();
    let mut buf = Vec::new();
    let record = |lset: &[u32], rset: &[u32], w: usize, witnesses: &mut Vec<MalignantSet>| {
        if witnesses.len() < witness_limit {
            let faults: Vec<FaultClass> = lset.iter().map(|&i| left[i as usize]).chain(rset.iter().map(|&i| right[i as usize])).collect();
            let residual = lset.iter().fold(0u128, |acc, &i| acc ^ left[i as usize].residual);
            witnesses.push(MalignantSet { faults, residual, reduced_weight: w });
        }
    };
    for a in 1..order {
        let b = order - a;
        // Enumerate the side with fewer faults; probe the other.
        let (enum_left, small, big) = if a <= b { (true, a, b) } else { (false, b, a) };
        let (ei, pi) = if enum_left { (&li, &ri) } else { (&ri, &li) };
        let mut visit = |eset: &[u32], s: u128, witnesses: &mut Vec<MalignantSet>| {
            if s == 0 {
                return;
            }
            let n = pi.count(big, s);
            if n == 0 {
                return;
            }
            let w = rho_of(s);
            if w <= threshold {
                return;
            }
            count += n;
            if witnesses.len() < witness_limit {
                pi.combos(big, s, &mut buf);
                for other in buf.iter() {
                    let oset = &other[..big];
                    if enum_left {
                        record(eset, oset, w, witnesses);
                    } else {
                        record(oset, eset, w, witnesses);
                    }
                }
            }
        };
        match small {
            1 => {
                for (i, c) in ei.classes.iter().enumerate() {
                    visit(&[i as u32], c.syndrome, &mut witnesses);
                }
            }
            2 => {
                for &(s, i, j) in &ei.pairs {
                    visit(&[i, j], s, &mut witnesses);
                }
            }
            _ => unreachable!("order <= 4"),
        }
    }
    (count, witnesses)
}

impl Protocol {
    /// Fault classes of the listed patches.
    pub fn side_universe(&self, ty: PauliType, patches: &[usize]) -> Vec<FaultClass> {
        patches.iter().flat_map(|&p| self.universe(ty, p)).collect()
    }

    /// Malignant threshold at `order`: the reduced weight must stay at most
    /// `order`, or `order - 1` with suppression.
    pub fn threshold(order: usize, suppression: bool) -> usize {
        if suppression {
            order.saturating_sub(1)
        } else {
            order
        }
    }
}

/// Strict fault-tolerance check of `ty` faults up to `max_order ≤ 4` by
/// meet-in-the-middle over syndromes.
///
/// For the pair-checked type each pair is analyzed on its own; combinations
/// spread over both pairs split into two sub-combinations that are each
/// harmless below the checked order. The other type is counted globally over
/// all four patches.
pub fn check_strict_ft(protocol: &Protocol, ty: PauliType, max_order: usize, suppression: bool) -> Result<FtVerdict, FtError> {
    if max_order > 4 {
        return Err(FtError::Unsupported("check_strict_ft handles orders up to 4; use count_malignant beyond".into()));
    }
    let det = protocol.detector(ty);
    let code = det.stabilizer_code();
    let mut orders = Vec::new();
    for order in 1..=max_order {
        let threshold = Protocol::threshold(order, suppression);
        if threshold > exact_threshold(&code) {
            return Err(FtError::Unsupported(format!("order {order} exceeds the exact decoding radius")));
        }
        let mut count = 0;
        let mut witnesses = Vec::new();
        for (l, r) in protocol.verification.sides(ty) {
            let left = protocol.side_universe(ty, &l);
            let right = protocol.side_universe(ty, &r);
            let (c, w) = count_split_small(&left, &right, order, threshold, &det, 16);
            count += c;
            witnesses.extend(w);
        }
        witnesses.truncate(16);
        orders.push(OrderReport { order, count, witnesses });
    }
    Ok(FtVerdict { ty, max_order, suppression, orders })
}

/// Exact malignant count at one order, with the split of faults between the
/// output side and the detector-only side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalignantCount {
    pub ty: PauliType,
    pub order: usize,
    pub threshold: usize,
    pub total: u64,
    /// `by_split[a]`: combinations with `a` faults on the output side.
    pub by_split: Vec<u64>,
    pub witnesses: Vec<MalignantSet>,
}

/// Limits for the sharded zero-sum join.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountBudget {
    /// Maximum half-combinations held per shard.
    pub max_shard_entries: usize,
    pub witness_limit: usize,
}

impl Default for CountBudget {
    fn default() -> Self {
        Self { max_shard_entries: 1 << 24, witness_limit: 16 }
    }
}

/// A fixed random linear map from syndromes to shard ids.
struct Projection {
    masks: Vec<u128>,
}

impl Projection {
    fn new(bits: usize) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
        Self { masks: (0..bits).map(|_| rng.gen::<u128>()).collect() }
    }

    fn apply(&self, s: u128) -> usize {
        self.masks.iter().enumerate().fold(0, |acc, (b, &m)| acc | (((s & m).count_ones() & 1) as usize) << b)
    }
}

/// Enumerates all `size`-subsets (`size ≤ 3`) of the universe whose syndrome
/// sum projects to `shard`, as `(syndrome, packed indices)`.
fn shard_combos(syn: &[u128], proj: &[usize], by_proj: &[Vec<u32>], size: usize, shard: usize, out: &mut Vec<(u128, u64)>) {
    out.clear();
    match size {
        1 => out.extend(by_proj[shard].iter().map(|&i| (syn[i as usize], pack(&[i])))),
        2 => {
            for i in 0..syn.len() as u32 {
                for j in above(&by_proj[shard ^ proj[i as usize]], i) {
                    out.push((syn[i as usize] ^ syn[j as usize], pack(&[i, j])));
                }
            }
        }
        3 => {
            for i in 0..syn.len() as u32 {
                for j in i + 1..syn.len() as u32 {
                    let (si, sj) = (syn[i as usize] ^ syn[j as usize], shard ^ proj[i as usize] ^ proj[j as usize]);
                    for k in above(&by_proj[sj], j) {
                        out.push((si ^ syn[k as usize], pack(&[i, j, k])));
                    }
                }
            }
        }
        _ => unreachable!("halves have at most three faults"),
    }
    out.sort_unstable();
}

/// Entries of a sorted index list above `j`.
fn above(list: &[u32], j: u32) -> impl Iterator<Item = u32> + '_ {
    list[list.partition_point(|&k| k <= j)..].iter().copied()
}

fn pack(idx: &[u32]) -> u64 {
    idx.iter().fold(0u64, |acc, &i| acc << 21 | (u64::from(i) + 1))
}

fn unpack(mut v: u64, out: &mut Vec<u32>) {
    while v != 0 {
        out.push((v & 0x1f_ffff) as u32 - 1);
        v >>= 21;
    }
}

/// Counts `order`-fault combinations (`order ≤ 6`) drawn from `left` (faults
/// reaching the output) and `right` (faults reaching only detectors) that are
/// accepted and leave an output residual of reduced weight above `threshold`.
///
/// Accepted combinations are exactly the zero-sum subsets of the joint
/// syndrome list. They are found by joining half-combinations of sizes
/// `⌊k/2⌋` and `⌈k/2⌉` with equal syndromes, shard by shard under a linear
/// projection; every subset is met once per ordered split into halves.
pub fn count_split(
    left: &[FaultClass],
    right: &[FaultClass],
    order: usize,
    threshold: usize,
    det: &Detector,
    budget: &CountBudget,
) -> Result<(Vec<u64>, Vec<MalignantSet>), FtError> {
    use rayon::prelude::*;
    assert!((2..=6).contains(&order), "order must be in 2..=6");
    if left.len() + right.len() >= 1 << 21 {
        return Err(FtError::Resource { order, needed: left.len() + right.len(), budget: (1 << 21) - 1 });
    }
    let code = det.stabilizer_code();
    let syn: Vec<u128> = left.iter().chain(right).map(|c| c.syndrome).collect();
    let n = syn.len() as u64;
    let (h1, h2) = (order / 2, order - order / 2);
    let biggest = match h2 {
        1 => n,
        2 => n * n.saturating_sub(1) / 2,
        _ => n * n.saturating_sub(1) * n.saturating_sub(2) / 6,
    };
    let mut bits = 0;
    while (biggest >> bits) as usize > budget.max_shard_entries / 8 && bits < 20 {
        bits += 1;
    }
    if (biggest >> bits) as usize > budget.max_shard_entries {
        return Err(FtError::Resource { order, needed: (biggest >> bits) as usize, budget: budget.max_shard_entries });
    }
    let projection = Projection::new(bits);
    let proj: Vec<usize> = syn.iter().map(|&s| projection.apply(s)).collect();
    let mut by_proj = vec![Vec::new(); 1 << bits];
    for (i, &p) in proj.iter().enumerate() {
        by_proj[p].push(i as u32);
    }
    let n_left = left.len() as u32;
    let splits = crate::rm_codes::binomial(order, h1) as u64;

    let shard_result = |shard: usize| -> Result<(Vec<u64>, Vec<MalignantSet>), FtError> {
        let mut a_list = Vec::new();
        let mut b_list = Vec::new();
        shard_combos(&syn, &proj, &by_proj, h2, shard, &mut b_list);
        if b_list.len() > budget.max_shard_entries {
            return Err(FtError::Resource { order, needed: b_list.len(), budget: budget.max_shard_entries });
        }
        let a_ref = if h1 == h2 {
            &b_list
        } else {
            shard_combos(&syn, &proj, &by_proj, h1, shard, &mut a_list);
            &a_list
        };
        let mut by_split = vec![0u64; order + 1];
        let mut witnesses = Vec::new();
        let mut rho: HashMap<u128, usize> = HashMap::new();
        let (mut ia, mut ib) = (0, 0);
        let mut set = Vec::with_capacity(6);
        while ia < a_ref.len() && ib < b_list.len() {
            let (ka, kb) = (a_ref[ia].0, b_list[ib].0);
            if ka < kb {
                ia += 1;
                continue;
            }
            if kb < ka {
                ib += 1;
                continue;
            }
            let ea = ia + a_ref[ia..].partition_point(|e| e.0 == ka);
            let eb = ib + b_list[ib..].partition_point(|e| e.0 == kb);
            for &(_, pa) in &a_ref[ia..ea] {
                for &(_, pb) in &b_list[ib..eb] {
                    set.clear();
                    unpack(pa, &mut set);
                    let na = set.len();
                    unpack(pb, &mut set);
                    if set[..na].iter().any(|x| set[na..].contains(x)) {
                        continue;
                    }
                    let mut s_left = 0u128;
                    let mut a = 0;
                    for &i in &set {
                        if i < n_left {
                            s_left ^= syn[i as usize];
                            a += 1;
                        }
                    }
                    if a == 0 || a == order || s_left == 0 {
                        continue;
                    }
                    let w = *rho.entry(s_left).or_insert_with(|| reduced_weight(det.lift(s_left), &code));
                    if w <= threshold {
                        continue;
                    }
                    by_split[a] += 1;
                    if witnesses.len() < budget.witness_limit {
                        set.sort_unstable();
                        let faults: Vec<FaultClass> =
                            set.iter().map(|&i| if i < n_left { left[i as usize] } else { right[(i - n_left) as usize] }).collect();
                        let residual = set.iter().filter(|&&i| i < n_left).fold(0u128, |acc, &i| acc ^ left[i as usize].residual);
                        let ms = MalignantSet { faults, residual, reduced_weight: w };
                        if !witnesses.contains(&ms) {
                            witnesses.push(ms);
                        }
                    }
                }
            }
            ia = ea;
            ib = eb;
        }
        Ok((by_split, witnesses))
    };

    let parts: Vec<(Vec<u64>, Vec<MalignantSet>)> = (0..1usize << bits).into_par_iter().map(shard_result).collect::<Result<_, _>>()?;
    let mut by_split = vec![0u64; order + 1];
    let mut witnesses = Vec::new();
    for (c, w) in parts {
        for (t, x) in by_split.iter_mut().zip(c) {
            *t += x;
        }
        for ms in w {
            if witnesses.len() < budget.witness_limit && !witnesses.contains(&ms) {
                witnesses.push(ms);
            }
        }
    }
    for c in by_split.iter_mut() {
        debug_assert_eq!(*c % splits, 0, "every subset appears once per split into halves");
        *c /= splits;
    }
    Ok((by_split, witnesses))
}

/// Exact number of malignant `ty` combinations of exactly `order` faults.
///
/// Pair-checked types are summed over the two pairs; see [`check_strict_ft`]
/// for why combinations spanning both pairs are not counted.
pub fn count_malignant(protocol: &Protocol, ty: PauliType, order: usize, suppression: bool, budget: &CountBudget) -> Result<MalignantCount, FtError> {
    let det = protocol.detector(ty);
    let threshold = Protocol::threshold(order, suppression);
    if threshold > exact_threshold(&det.stabilizer_code()) {
        return Err(FtError::Unsupported(format!("order {order} exceeds the exact decoding radius")));
    }
    let mut by_split = vec![0u64; order + 1];
    let mut witnesses = Vec::new();
    if order >= 2 {
        for (l, r) in protocol.verification.sides(ty) {
            let (c, w) = count_split(&protocol.side_universe(ty, &l), &protocol.side_universe(ty, &r), order, threshold, &det, budget)?;
            for (t, x) in by_split.iter_mut().zip(c) {
                *t += x;
            }
            witnesses.extend(w);
        }
    }
    witnesses.truncate(budget.witness_limit);
    Ok(MalignantCount { ty, order, threshold, total: by_split.iter().sum(), by_split, witnesses })
}

/// Pairwise strict fault tolerance of patches `p` and `q` for `ty` faults,
/// checked as if they verified each other directly.
pub fn pair_strict_ft(protocol: &Protocol, ty: PauliType, p: usize, q: usize, max_order: usize, suppression: bool) -> bool {
    let det = protocol.detector(ty);
    let left = protocol.universe(ty, p);
    let right = protocol.universe(ty, q);
    (2..=max_order).all(|order| count_split_small(&left, &right, order, Protocol::threshold(order, suppression), &det, 0).0 == 0)
}

/// Sampling rule for one schedule column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnRule {
    /// Swaps applied before the sampled ones.
    pub prefix: Vec<Swap>,
    /// Target indices `j` of the sampled swaps, used in a random order; each
    /// `i` is drawn uniformly from the other indices.
    pub j_values: Vec<usize>,
    /// A column taken as is; `prefix` and `j_values` are ignored.
    pub fixed: Option<Vec<Swap>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchConstraints {
    pub columns: Vec<ColumnRule>,
    pub max_order: usize,
    pub suppression: bool,
}

impl SearchConstraints {
    /// All four columns fixed to `schedule`.
    pub fn fixed(schedule: &PermutationSchedule, max_order: usize, suppression: bool) -> Self {
        let columns = schedule.columns.iter().map(|c| ColumnRule { prefix: vec![], j_values: vec![], fixed: Some(c.clone()) }).collect();
        Self { columns, max_order, suppression }
    }
}

/// Randomized schedule search.
///
/// Each sample draws the free columns, rejects candidates failing the column
/// rank condition, then runs pairwise strict-FT checks over all six patch
/// pairs, the type with fewer fault classes first. Every candidate passing all
/// checks is returned.
pub fn search_schedules(
    code: QrmCode,
    state: LogicalState,
    constraints: &SearchConstraints,
    seed: u64,
    budget: usize,
) -> Result<Vec<PermutationSchedule>, FtError> {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    if constraints.columns.len() != 4 {
        return Err(FtError::Schedule(format!("expected 4 column rules, got {}", constraints.columns.len())));
    }
    let m = code.m;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut found: Vec<PermutationSchedule> = Vec::new();
    for _ in 0..budget {
        let columns: Vec<Vec<Swap>> = constraints
            .columns
            .iter()
            .map(|rule| match &rule.fixed {
                Some(c) => c.clone(),
                None => {
                    let mut js = rule.j_values.clone();
                    js.shuffle(&mut rng);
                    let mut col = rule.prefix.clone();
                    for j in js {
                        let mut i = rng.gen_range(0..m - 1);
                        if i >= j {
                            i += 1;
                        }
                        col.push(Swap { i, j });
                    }
                    col
                }
            })
            .collect();
        let schedule = PermutationSchedule::new(m, columns)?;
        if found.contains(&schedule) {
            continue;
        }
        let mats: Vec<F2Matrix> = (0..4).map(|c| schedule.matrix(c)).collect();
        let mut ok = true;
        'pairs: for p in 0..4 {
            for q in p + 1..4 {
                if !necessary_condition(&mats[p], &mats[q])? {
                    ok = false;
                    break 'pairs;
                }
            }
        }
        if !ok {
            continue;
        }
        let protocol = build_protocol(code, state, Verification::default_for(&code, state), &schedule)?;
        let mut types = [PauliType::X, PauliType::Z];
        types.sort_by_key(|&t| protocol.universe(t, 0).len());
        ok = types.iter().all(|&ty| {
            (0..4).all(|p| (p + 1..4).all(|q| pair_strict_ft(&protocol, ty, p, q, constraints.max_order, constraints.suppression)))
        });
        if ok {
            found.push(schedule);
        }
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{flip_simulate, simulate_forced, NoiseModel};

    fn d15() -> QrmCode {
        QrmCode::pqrm(3, 3, 7).unwrap()
    }

    fn d7() -> QrmCode {
        QrmCode::pqrm(2, 4, 7).unwrap()
    }

    #[test]
    fn schedule_text_round_trip() {
        for s in [PermutationSchedule::d7(), PermutationSchedule::d15()] {
            assert_eq!(s.columns.iter().map(Vec::len).collect::<Vec<_>>(), [7, 7, 7, 7]);
            assert_eq!(PermutationSchedule::parse(&s.to_text(), 7).unwrap(), s);
        }
        let d7 = PermutationSchedule::d7();
        assert_eq!(d7.columns[0][0], Swap { i: 1, j: 4 });
        assert_eq!(d7.columns[3][6], Swap { i: 5, j: 3 });
        assert!(PermutationSchedule::parse("E 1 2\nE 0 1\nE 2 0", 3).is_err());
        assert!(PermutationSchedule::parse("E 1 2\nE 0 1\nE 2 0\nE 3 0", 3).is_err());
        assert!(PermutationSchedule::parse("E 1 2\nE 0 1\nE 2 0\nF 1 0", 3).is_err());
        assert!(PermutationSchedule::parse("E 1 1\nE 0 1\nE 2 0\nE 1 0", 3).is_err());
    }

    #[test]
    fn swap_products_put_earliest_on_the_left() {
        let s = [Swap { i: 0, j: 1 }, Swap { i: 1, j: 2 }];
        let e01 = F2Matrix::elementary(3, 0, 1).unwrap();
        let e12 = F2Matrix::elementary(3, 1, 2).unwrap();
        assert_eq!(swaps_matrix(3, &s), &e01 * &e12);
        assert_ne!(swaps_matrix(3, &s), &e12 * &e01);
    }

    /// The relative permutation of the rank-condition counterexample: single
    /// ones in the second and fourth columns, at rows six and seven.
    fn counterexample_matrix() -> F2Matrix {
        let cols = [0usize, 5, 2, 6, 4, 1, 3];
        F2Matrix::from_fn(7, 7, |r, c| cols[c] == r)
    }

    #[test]
    fn necessary_condition_examples() {
        let s = PermutationSchedule::d7();
        let a = s.matrix(0);
        assert!(!necessary_condition(&a, &a).unwrap());
        assert!(necessary_condition(&s.matrix(0), &s.matrix(1)).unwrap());
        assert!(!necessary_condition(&F2Matrix::identity(7), &counterexample_matrix()).unwrap());
        for sched in [PermutationSchedule::d7(), PermutationSchedule::d15()] {
            for p in 0..4 {
                for q in p + 1..4 {
                    assert!(necessary_condition(&sched.matrix(p), &sched.matrix(q)).unwrap(), "pair {p} {q}");
                }
            }
        }
    }

    #[test]
    fn counterexample_faults_cancel() {
        // Z fault on wire 0101000 after step 3 in one patch and a Z flip on
        // the |+⟩ wire 0000011 in its partner both end at {1, 2, 3}.
        let code = d15();
        let ident: Vec<usize> = (0..128).collect();
        let rel = coordinate_map(&counterexample_matrix(), &F2Vector::zeros(7)).unwrap();
        let raw_b = raw_patch_faults(&code, LogicalState::Zero, PauliType::Z, &rel);
        let raw_a = raw_patch_faults(&code, LogicalState::Zero, PauliType::Z, &ident);
        let fb = raw_b.iter().find(|(o, _)| matches!(o, FaultOrigin::Cnot { step: 3, control: 40, which: 1, .. })).unwrap();
        let fa = raw_a.iter().find(|(o, _)| *o == FaultOrigin::Init { label: 3 }).unwrap();
        assert_eq!(fb.1, 0b1110);
        assert_eq!(fa.1, fb.1);
        let det = Detector::new(code, LogicalState::Zero, PauliType::Z);
        assert_eq!(reduced_weight(det.lift(det.syndrome(fa.1)), &det.stabilizer_code()), 3);
    }

    #[test]
    fn superset_is_transpose_of_subset() {
        for m in 1..=7 {
            for l in 0..1usize << m {
                let sup = superset_u128(1u128 << l, m);
                let expect = (0..1usize << m).filter(|c| c & l == *c).fold(0u128, |a, c| a | 1u128 << c);
                assert_eq!(sup, expect);
            }
        }
    }

    #[test]
    fn detector_kernels_are_state_stabilizers() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for code in [d7(), d15(), QrmCode::pqrm(1, 2, 4).unwrap()] {
            for state in [LogicalState::Zero, LogicalState::Plus] {
                for ty in [PauliType::X, PauliType::Z] {
                    let det = Detector::new(code, state, ty);
                    let stab = det.stabilizer_code();
                    assert_eq!(det.n_detectors(), code.n() - stab.dimension());
                    let gens: Vec<u128> = stab.generator_vectors().iter().map(crate::rm_codes::punctured_to_mask).collect();
                    for _ in 0..20 {
                        let word = gens.iter().filter(|_| rng.gen()).fold(0u128, |a, g| a ^ g);
                        assert_eq!(det.syndrome(word), 0);
                        let e = rng.gen::<u128>() & full_mask(code.m) & !1;
                        let back = det.lift(det.syndrome(e));
                        assert_eq!(back & 1, 0);
                        assert_eq!(det.syndrome(back ^ e), 0);
                    }
                }
            }
        }
        let det_x = Detector::new(d7(), LogicalState::Plus, PauliType::X);
        let det_z = Detector::new(d7(), LogicalState::Plus, PauliType::Z);
        assert_eq!((det_x.n_detectors(), det_z.n_detectors()), (98, 29));
    }

    #[test]
    fn protocol_layout() {
        let p = build_protocol(d15(), LogicalState::Zero, Verification::PairX, &PermutationSchedule::d15()).unwrap();
        assert_eq!(p.circuit.n_qubits, 4 * 127);
        assert_eq!(p.circuit.cnot_count(), 4 * 441 + 3 * 127);
        assert_eq!(p.circuit.n_measurements(), 3 * 127);
        let tys: Vec<PauliType> = p.blocks.iter().map(|b| b.ty).collect();
        assert_eq!(tys, [PauliType::X, PauliType::X, PauliType::Z]);
        let bad = PermutationSchedule { m: 7, columns: vec![vec![]; 3] };
        assert!(build_protocol(d15(), LogicalState::Zero, Verification::PairX, &bad).is_err());
        assert_eq!(Verification::default_for(&d7(), LogicalState::Plus), Verification::PairX);
        assert_eq!(Verification::default_for(&d15(), LogicalState::Plus), Verification::PairZ);
    }

    #[test]
    fn noiseless_protocol_accepts() {
        for (code, state, sched) in [(d15(), LogicalState::Zero, PermutationSchedule::d15()), (d7(), LogicalState::Plus, PermutationSchedule::d7())] {
            let p = build_protocol(code, state, Verification::default_for(&code, state), &sched).unwrap();
            let b = flip_simulate(&p.circuit, &NoiseModel::noiseless(), 1, 64, false);
            for shot in 0..64 {
                let r = b.residual(shot);
                assert!(p.accepts(&r.meas));
                assert_eq!(r.x.weight() + r.z.weight(), 0);
            }
        }
    }

    #[test]
    fn twin_fault_breaks_identity_schedule_only() {
        let origin = FaultOrigin::Cnot { step: 3, control: 40, target: 44, which: 1 };
        for (sched, accepted) in [(PermutationSchedule::identity(7), true), (PermutationSchedule::d15(), false)] {
            let p = build_protocol(d15(), LogicalState::Zero, Verification::PairX, &sched).unwrap();
            let ids: Vec<FaultId> = [0, 2]
                .iter()
                .map(|&patch| {
                    let f = FaultClass { patch, origin, residual: 0, syndrome: 0, multiplicity: 1 };
                    p.fault_id(&f, PauliType::Z)
                })
                .collect();
            let b = simulate_forced(&p.circuit, &[ids]);
            let r = b.residual(0);
            assert_eq!(p.accepts(&r.meas), accepted);
            if accepted {
                let out = p.patch_mask(&r.z, 0);
                assert_eq!(out.count_ones(), 3);
                assert_eq!(reduced_weight(out, &p.detector(PauliType::Z).stabilizer_code()), 3);
            }
        }
    }

    #[test]
    fn identity_schedule_fails_at_order_two() {
        let code = QrmCode::pqrm(1, 2, 4).unwrap();
        let p = build_protocol(code, LogicalState::Zero, Verification::PairX, &PermutationSchedule::identity(4)).unwrap();
        let v = check_strict_ft(&p, PauliType::X, 2, false).unwrap();
        assert_eq!(v.orders[0].count, 0);
        assert!(v.orders[1].count > 0);
        assert!(!v.strictly_ft());
        // Z faults on this small code never reach weight two after reduction.
        assert!(check_strict_ft(&p, PauliType::Z, 3, false).unwrap().strictly_ft());
    }

    #[test]
    fn witnesses_replay_in_the_circuit() {
        let code = QrmCode::pqrm(1, 2, 4).unwrap();
        let sched = PermutationSchedule::parse("E 0 1, E 2 3\nE 1 0\nE 3 2, E 1 2\nE 0 3", 4).unwrap();
        for state in [LogicalState::Zero, LogicalState::Plus] {
            for ver in [Verification::PairX, Verification::PairZ] {
                let p = build_protocol(code, state, ver, &sched).unwrap();
                for ty in [PauliType::X, PauliType::Z] {
                    for order in 2..=3 {
                        let c = count_malignant(&p, ty, order, true, &CountBudget::default()).unwrap();
                        for w in &c.witnesses {
                            let ids: Vec<FaultId> = w.faults.iter().map(|f| p.fault_id(f, ty)).collect();
                            let r = simulate_forced(&p.circuit, &[ids]).residual(0);
                            assert!(p.accepts(&r.meas));
                            let frame = if ty == PauliType::X { &r.x } else { &r.z };
                            assert_eq!(p.patch_mask(frame, 0), w.residual);
                            assert!(w.reduced_weight > c.threshold);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn sharded_join_matches_direct_probe() {
        let code = QrmCode::pqrm(1, 2, 4).unwrap();
        let sched = PermutationSchedule::parse("E 0 1\nE 1 2, E 3 0\nE 2 3\nE 3 1, E 0 2", 4).unwrap();
        let small = CountBudget { max_shard_entries: 512, witness_limit: 0 };
        for state in [LogicalState::Zero, LogicalState::Plus] {
            let p = build_protocol(code, state, Verification::PairX, &sched).unwrap();
            for ty in [PauliType::X, PauliType::Z] {
                let det = p.detector(ty);
                for (l, r) in p.verification.sides(ty) {
                    let (left, right) = (p.side_universe(ty, &l), p.side_universe(ty, &r));
                    for order in 2..=4 {
                        for thr in [order - 1, order] {
                            let direct = count_split_small(&left, &right, order, thr, &det, 0).0;
                            let (joined, _) = count_split(&left, &right, order, thr, &det, &small).unwrap();
                            assert_eq!(joined.iter().sum::<u64>(), direct, "{state:?} {ty} order {order} thr {thr}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn tight_budget_is_a_resource_error() {
        let p = build_protocol(d15(), LogicalState::Zero, Verification::PairX, &PermutationSchedule::d15()).unwrap();
        let budget = CountBudget { max_shard_entries: 1, witness_limit: 0 };
        assert!(matches!(count_malignant(&p, PauliType::Z, 6, false, &budget), Err(FtError::Resource { order: 6, .. })));
        // Order 6 on the |+> Z side is beyond the exact decoding radius.
        let p = build_protocol(d7(), LogicalState::Plus, Verification::PairX, &PermutationSchedule::d7()).unwrap();
        assert!(matches!(count_malignant(&p, PauliType::Z, 6, false, &budget), Err(FtError::Unsupported(_))));
    }

    #[test]
    fn search_edge_cases() {
        let fixed = SearchConstraints::fixed(&PermutationSchedule::d7(), 3, true);
        assert!(search_schedules(d7(), LogicalState::Plus, &fixed, 0, 0).unwrap().is_empty());
        let found = search_schedules(d7(), LogicalState::Plus, &fixed, 0, 1).unwrap();
        assert_eq!(found, vec![PermutationSchedule::d7()]);
        // Four patches need 4m distinct nonzero columns, so m = 4 has no candidates.
        let rule = ColumnRule { prefix: vec![], j_values: vec![0, 1, 2, 3], fixed: None };
        let toy = SearchConstraints { columns: vec![rule; 4], max_order: 2, suppression: false };
        assert!(search_schedules(QrmCode::pqrm(1, 2, 4).unwrap(), LogicalState::Zero, &toy, 7, 1000).unwrap().is_empty());
        let rule = ColumnRule { prefix: vec![], j_values: vec![0, 1, 2, 3, 4], fixed: None };
        let toy = SearchConstraints { columns: vec![rule; 4], max_order: 2, suppression: false };
        let code = QrmCode::pqrm(2, 2, 5).unwrap();
        let found = search_schedules(code, LogicalState::Zero, &toy, 7, 20000).unwrap();
        assert!(!found.is_empty());
        for s in &found {
            let p = build_protocol(code, LogicalState::Zero, Verification::PairX, s).unwrap();
            for ty in [PauliType::X, PauliType::Z] {
                assert!((0..4).all(|a| (a + 1..4).all(|b| pair_strict_ft(&p, ty, a, b, 2, false))));
            }
        }
    }
}
