//! Hypercube encoding circuits, Pauli fault propagation and a bit-sliced
//! flip simulator.
//!
//! Qubit indices are dense. In a punctured encoder qubit `q` carries
//! coordinate label `q + 1`; otherwise qubit `q` carries label `q`.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gf2::F2Vector;
pub use crate::rm_codes::LogicalState;
use crate::rm_codes::{full_mask, QrmCode};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CircuitError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid circuit: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    fn symbol(self) -> &'static str {
        match self {
            Basis::Z => "Z",
            Basis::X => "X",
        }
    }
}

/// Noise channels that a depolarizing layer draws its rate from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    Single,
    Correction,
}

/// Pauli operators on one qubit as two bits: X = 1, Z = 2, Y = 3.
pub type Pauli = u8;
pub const PAULI_X: Pauli = 1;
pub const PAULI_Z: Pauli = 2;
pub const PAULI_Y: Pauli = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    Init(usize, Basis),
    Cnot(Vec<(usize, usize)>),
    /// Relabels qubits: the state on qubit `q` moves to `maps[id][q]`.
    Perm(usize),
    Measure(usize, Basis),
    Depolarize(Channel, Vec<usize>),
    Tick,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedMap {
    pub name: String,
    pub perm: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Circuit {
    pub n_qubits: usize,
    pub layers: Vec<Layer>,
    pub maps: Vec<NamedMap>,
}

/// A single fault site in a circuit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultSite {
    Init { layer: usize, qubit: usize, basis: Basis },
    Cnot { layer: usize, control: usize, target: usize },
    Measure { layer: usize, qubit: usize, basis: Basis, record: usize },
    Depolarize { layer: usize, qubit: usize, channel: Channel },
}

impl FaultSite {
    pub fn layer(&self) -> usize {
        match *self {
            FaultSite::Init { layer, .. }
            | FaultSite::Cnot { layer, .. }
            | FaultSite::Measure { layer, .. }
            | FaultSite::Depolarize { layer, .. } => layer,
        }
    }

    /// Number of distinct nontrivial faults at this site.
    pub fn n_patterns(&self) -> u8 {
        match self {
            FaultSite::Init { .. } | FaultSite::Measure { .. } => 1,
            FaultSite::Cnot { .. } => 15,
            FaultSite::Depolarize { .. } => 3,
        }
    }
}

/// A located Pauli fault, applied immediately after layer `layer`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FaultEvent {
    pub layer: usize,
    pub paulis: Vec<(usize, Pauli)>,
    /// Measurement records flipped directly (readout faults).
    pub record_flips: Vec<usize>,
}

impl FaultEvent {
    pub fn pauli(layer: usize, qubit: usize, p: Pauli) -> Self {
        Self { layer, paulis: vec![(qubit, p)], record_flips: vec![] }
    }

    /// The fault realizing pattern `code` (1-based) at `site`.
    ///
    /// CNOT patterns encode the control Pauli in the high two bits and the
    /// target Pauli in the low two bits.
    pub fn from_site(site: &FaultSite, code: u8) -> Self {
        match *site {
            FaultSite::Init { layer, qubit, basis } => {
                let p = if basis == Basis::Z { PAULI_X } else { PAULI_Z };
                Self::pauli(layer, qubit, p)
            }
            FaultSite::Cnot { layer, control, target } => {
                let mut paulis = Vec::new();
                if code >> 2 != 0 {
                    paulis.push((control, code >> 2));
                }
                if code & 3 != 0 {
                    paulis.push((target, code & 3));
                }
                Self { layer, paulis, record_flips: vec![] }
            }
            FaultSite::Measure { layer, record, .. } => Self { layer, paulis: vec![], record_flips: vec![record] },
            FaultSite::Depolarize { layer, qubit, .. } => Self::pauli(layer, qubit, code),
        }
    }
}

/// X and Z masks of a Pauli frame over all qubits, plus measurement flips.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ResidualError {
    pub x: F2Vector,
    pub z: F2Vector,
    pub meas: F2Vector,
}

impl ResidualError {
    pub fn weight(&self) -> usize {
        (&self.x | &self.z).weight()
    }

    pub fn xor(&self, other: &Self) -> Self {
        Self { x: &self.x ^ &other.x, z: &self.z ^ &other.z, meas: &self.meas ^ &other.meas }
    }
}

/// Circuit-level noise strengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub p_cnot: f64,
    pub p_spam: f64,
    pub p_single: f64,
    pub p_corr: f64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self { p_cnot: 0.0, p_spam: 0.0, p_single: 0.0, p_corr: 0.0 }
    }

    /// The standard point: `p_spam = p_cnot`, `p_single = 0.2 p_cnot`, `p_corr = p_cnot`.
    pub fn standard(p: f64) -> Self {
        Self { p_cnot: p, p_spam: p, p_single: 0.2 * p, p_corr: p }
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        for (name, p) in [("p_cnot", self.p_cnot), ("p_spam", self.p_spam), ("p_single", self.p_single), ("p_corr", self.p_corr)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CircuitError::Invalid(format!("{name}={p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn rate(&self, site: &FaultSite) -> f64 {
        match site {
            FaultSite::Init { .. } | FaultSite::Measure { .. } => self.p_spam,
            FaultSite::Cnot { .. } => self.p_cnot,
            FaultSite::Depolarize { channel: Channel::Single, .. } => self.p_single,
            FaultSite::Depolarize { channel: Channel::Correction, .. } => self.p_corr,
        }
    }
}

impl Circuit {
    pub fn new(n_qubits: usize) -> Self {
        Self { n_qubits, layers: Vec::new(), maps: Vec::new() }
    }

    pub fn add_map(&mut self, name: impl Into<String>, perm: Vec<usize>) -> usize {
        self.maps.push(NamedMap { name: name.into(), perm });
        self.maps.len() - 1
    }

    pub fn n_measurements(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, Layer::Measure(..))).count()
    }

    pub fn cnot_count(&self) -> usize {
        self.layers.iter().map(|l| if let Layer::Cnot(p) = l { p.len() } else { 0 }).sum()
    }

    pub fn tick_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, Layer::Tick)).count()
    }

    /// Layer index of the `t`-th `TICK` (1-based).
    ///
    /// In an encoder, a fault placed on `tick_layer(s + 1)` happens after step `s`.
    pub fn tick_layer(&self, t: usize) -> Option<usize> {
        self.layers.iter().enumerate().filter(|(_, l)| matches!(l, Layer::Tick)).nth(t.checked_sub(1)?).map(|(i, _)| i)
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<(), CircuitError> {
        let mut measured = vec![false; self.n_qubits];
        let check = |q: usize| {
            if q >= self.n_qubits {
                Err(CircuitError::Invalid(format!("qubit {q} out of range {}", self.n_qubits)))
            } else {
                Ok(())
            }
        };
        for layer in &self.layers {
            match layer {
                Layer::Init(q, _) => check(*q)?,
                Layer::Cnot(pairs) => {
                    let mut used = vec![false; self.n_qubits];
                    for &(c, t) in pairs {
                        check(c)?;
                        check(t)?;
                        if c == t || used[c] || used[t] {
                            return Err(CircuitError::Invalid(format!("qubit reused in CNOT layer at ({c}, {t})")));
                        }
                        used[c] = true;
                        used[t] = true;
                    }
                }
                Layer::Perm(id) => {
                    let map = self.maps.get(*id).ok_or_else(|| CircuitError::Invalid(format!("unknown map {id}")))?;
                    let mut seen = vec![false; self.n_qubits];
                    if map.perm.len() != self.n_qubits || map.perm.iter().any(|&p| p >= self.n_qubits || std::mem::replace(&mut seen[p], true)) {
                        return Err(CircuitError::Invalid(format!("map {} is not a permutation", map.name)));
                    }
                }
                Layer::Measure(q, _) => {
                    check(*q)?;
                    if std::mem::replace(&mut measured[*q], true) {
                        return Err(CircuitError::Invalid(format!("qubit {q} measured twice")));
                    }
                }
                Layer::Depolarize(_, qs) => qs.iter().try_for_each(|&q| check(q))?,
                Layer::Tick => {}
            }
        }
        Ok(())
    }

    /// All fault sites in layer order.
    pub fn fault_sites(&self) -> Vec<FaultSite> {
        let mut out = Vec::new();
        let mut record = 0;
        for (layer, l) in self.layers.iter().enumerate() {
            match l {
                Layer::Init(q, b) => out.push(FaultSite::Init { layer, qubit: *q, basis: *b }),
                Layer::Cnot(pairs) => out.extend(pairs.iter().map(|&(c, t)| FaultSite::Cnot { layer, control: c, target: t })),
                Layer::Measure(q, b) => {
                    out.push(FaultSite::Measure { layer, qubit: *q, basis: *b, record });
                    record += 1;
                }
                Layer::Depolarize(ch, qs) => out.extend(qs.iter().map(|&q| FaultSite::Depolarize { layer, qubit: q, channel: *ch })),
                Layer::Perm(_) | Layer::Tick => {}
            }
        }
        out
    }

    /// Serializes to the line format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "QUBITS {}", self.n_qubits).unwrap();
        for map in &self.maps {
            write!(s, "MAP {}", map.name).unwrap();
            for p in &map.perm {
                write!(s, " {p}").unwrap();
            }
            s.push('\n');
        }
        for layer in &self.layers {
            match layer {
                Layer::Init(q, b) => writeln!(s, "INIT {q} {}", b.symbol()).unwrap(),
                Layer::Cnot(pairs) => {
                    s.push_str("CNOT");
                    for (c, t) in pairs {
                        write!(s, " {c} {t}").unwrap();
                    }
                    s.push('\n');
                }
                Layer::Perm(id) => writeln!(s, "PERM {}", self.maps[*id].name).unwrap(),
                Layer::Measure(q, b) => writeln!(s, "MEAS {q} {}", b.symbol()).unwrap(),
                Layer::Depolarize(ch, qs) => {
                    s.push_str(match ch {
                        Channel::Single => "DEPOL SINGLE",
                        Channel::Correction => "DEPOL CORR",
                    });
                    for q in qs {
                        write!(s, " {q}").unwrap();
                    }
                    s.push('\n');
                }
                Layer::Tick => s.push_str("TICK\n"),
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, CircuitError> {
        let mut c = Circuit::default();
        let mut names: HashMap<String, usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| CircuitError::Parse { line, msg };
            let line_text = raw.split('#').next().unwrap_or("").trim();
            if line_text.is_empty() {
                continue;
            }
            let mut tok = line_text.split_whitespace();
            let op = tok.next().unwrap();
            let rest: Vec<&str> = tok.collect();
            let nums = |xs: &[&str]| -> Result<Vec<usize>, CircuitError> {
                xs.iter().map(|x| x.parse::<usize>().map_err(|e| err(format!("bad integer {x:?}: {e}")))).collect()
            };
            let basis = |b: &str| match b {
                "Z" => Ok(Basis::Z),
                "X" => Ok(Basis::X),
                other => Err(err(format!("unknown basis {other:?}"))),
            };
            match op {
                "QUBITS" => {
                    let v = nums(&rest)?;
                    if v.len() != 1 {
                        return Err(err("QUBITS takes one argument".into()));
                    }
                    c.n_qubits = v[0];
                }
                "MAP" => {
                    let (name, perm) = rest.split_first().ok_or_else(|| err("MAP needs a name".into()))?;
                    names.insert(name.to_string(), c.maps.len());
                    c.add_map(*name, nums(perm)?);
                }
                "INIT" | "MEAS" => {
                    if rest.len() != 2 {
                        return Err(err(format!("{op} takes a qubit and a basis")));
                    }
                    let q = nums(&rest[..1])?[0];
                    let b = basis(rest[1])?;
                    c.layers.push(if op == "INIT" { Layer::Init(q, b) } else { Layer::Measure(q, b) });
                }
                "CNOT" => {
                    let v = nums(&rest)?;
                    if v.len() % 2 != 0 {
                        return Err(err("CNOT needs control/target pairs".into()));
                    }
                    c.layers.push(Layer::Cnot(v.chunks(2).map(|p| (p[0], p[1])).collect()));
                }
                "PERM" => {
                    let name = rest.first().ok_or_else(|| err("PERM needs a map name".into()))?;
                    let id = *names.get(*name).ok_or_else(|| err(format!("undefined map {name:?}")))?;
                    c.layers.push(Layer::Perm(id));
                }
                "DEPOL" => {
                    let (ch, qs) = rest.split_first().ok_or_else(|| err("DEPOL needs a channel".into()))?;
                    let ch = match *ch {
                        "SINGLE" => Channel::Single,
                        "CORR" => Channel::Correction,
                        other => return Err(err(format!("unknown channel {other:?}"))),
                    };
                    c.layers.push(Layer::Depolarize(ch, nums(qs)?));
                }
                "TICK" => c.layers.push(Layer::Tick),
                other => return Err(err(format!("unknown instruction {other:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Appends `other` acting on qubits shifted by `offset`.
    pub fn append_shifted(&mut self, other: &Circuit, offset: usize, name_prefix: &str) {
        let base = self.maps.len();
        for map in &other.maps {
            let mut perm: Vec<usize> = (0..self.n_qubits).collect();
            for (q, &p) in map.perm.iter().enumerate() {
                perm[q + offset] = p + offset;
            }
            self.add_map(format!("{name_prefix}{}", map.name), perm);
        }
        for layer in &other.layers {
            self.layers.push(match layer {
                Layer::Init(q, b) => Layer::Init(q + offset, *b),
                Layer::Cnot(pairs) => Layer::Cnot(pairs.iter().map(|&(c, t)| (c + offset, t + offset)).collect()),
                Layer::Perm(id) => Layer::Perm(id + base),
                Layer::Measure(q, b) => Layer::Measure(q + offset, *b),
                Layer::Depolarize(ch, qs) => Layer::Depolarize(*ch, qs.iter().map(|q| q + offset).collect()),
                Layer::Tick => Layer::Tick,
            });
        }
    }
}

/// Qubit carrying coordinate `label`.
#[inline]
pub fn qubit_of_label(label: usize, punctured: bool) -> usize {
    label - usize::from(punctured)
}

#[inline]
pub fn label_of_qubit(q: usize, punctured: bool) -> usize {
    q + usize::from(punctured)
}

/// Initialization basis of wire `label` in the hypercube encoder.
///
/// For `|0⟩_L`, wires with popcount at most `r_x` start in `|+⟩` and the rest
/// in `|0⟩`. For `|+⟩_L`, wires with popcount at most `r_z` start in `|0⟩` and
/// the rest in `|+⟩`. Logical wires thus carry the requested logical state.
pub fn init_basis(code: &QrmCode, state: LogicalState, label: usize) -> Basis {
    let w = label.count_ones() as usize;
    let plus = match state {
        LogicalState::Zero => w <= code.r_x,
        LogicalState::Plus => w > code.r_z,
    };
    if plus {
        Basis::X
    } else {
        Basis::Z
    }
}

/// CNOT pairs `(control, target)` of encoding step `t` (1-based) as labels.
///
/// `|0⟩_L` steps copy from the wire with bit `t-1` clear onto its partner with
/// the bit set; `|+⟩_L` reverses every gate. The punctured wire 0 is skipped.
pub fn encoder_step_pairs(m: usize, t: usize, state: LogicalState, punctured: bool) -> Vec<(usize, usize)> {
    let bit = 1usize << (t - 1);
    (0..1usize << m)
        .filter(|l| l & bit == 0 && !(punctured && *l == 0))
        .map(|lo| match state {
            LogicalState::Zero => (lo, lo | bit),
            LogicalState::Plus => (lo | bit, lo),
        })
        .collect()
}

/// The hypercube encoding circuit for `code` in logical state `state`.
///
/// Layout: one `INIT` per wire, `TICK`, then for each step a CNOT layer
/// followed by `TICK`. A fault "after tick `t`" happens just after step `t`.
pub fn hypercube_encoder(code: &QrmCode, state: LogicalState) -> Circuit {
    let m = code.m;
    let punctured = code.punctured;
    let n = code.n();
    let mut c = Circuit::new(n);
    for q in 0..n {
        c.layers.push(Layer::Init(q, init_basis(code, state, label_of_qubit(q, punctured))));
    }
    c.layers.push(Layer::Tick);
    for t in 1..=m {
        let pairs = encoder_step_pairs(m, t, state, punctured)
            .into_iter()
            .map(|(a, b)| (qubit_of_label(a, punctured), qubit_of_label(b, punctured)))
            .collect();
        c.layers.push(Layer::Cnot(pairs));
        c.layers.push(Layer::Tick);
    }
    c
}

/// Applies one layer to a Pauli frame held as one lane per qubit.
fn apply_layer_frame(c: &Circuit, layer: &Layer, x: &mut Vec<u64>, z: &mut Vec<u64>, meas: &mut Vec<u64>) {
    match layer {
        Layer::Init(q, _) => {
            // Fresh qubit: the frame restarts empty.
            x[*q] = 0;
            z[*q] = 0;
        }
        Layer::Cnot(pairs) => {
            for &(ct, tg) in pairs {
                x[tg] ^= x[ct];
                z[ct] ^= z[tg];
            }
        }
        Layer::Perm(id) => {
            let perm = &c.maps[*id].perm;
            let (ox, oz) = (x.clone(), z.clone());
            for (q, &p) in perm.iter().enumerate() {
                x[p] = ox[q];
                z[p] = oz[q];
            }
        }
        Layer::Measure(q, b) => meas.push(match b {
            Basis::Z => x[*q],
            Basis::X => z[*q],
        }),
        Layer::Depolarize(..) | Layer::Tick => {}
    }
}

/// Propagates a single fault event to the end of the circuit.
pub fn propagate_fault(circuit: &Circuit, fault: &FaultEvent) -> ResidualError {
    propagate_faults(circuit, std::slice::from_ref(fault))
}

/// Propagates a set of fault events (in any order) to the end of the circuit.
pub fn propagate_faults(circuit: &Circuit, faults: &[FaultEvent]) -> ResidualError {
    let n = circuit.n_qubits;
    let mut x = vec![0u64; n];
    let mut z = vec![0u64; n];
    let mut meas = Vec::with_capacity(circuit.n_measurements());
    let mut by_layer: HashMap<usize, Vec<&FaultEvent>> = HashMap::new();
    for f in faults {
        by_layer.entry(f.layer).or_default().push(f);
    }
    let start = faults.iter().map(|f| f.layer).min().unwrap_or(circuit.layers.len());
    // Records before the first fault are unaffected.
    for layer in &circuit.layers[..start.min(circuit.layers.len())] {
        if matches!(layer, Layer::Measure(..)) {
            meas.push(0);
        }
    }
    for (i, layer) in circuit.layers.iter().enumerate().skip(start) {
        apply_layer_frame(circuit, layer, &mut x, &mut z, &mut meas);
        if let Some(fs) = by_layer.get(&i) {
            for f in fs {
                for &(q, p) in &f.paulis {
                    x[q] ^= u64::from(p & PAULI_X);
                    z[q] ^= u64::from((p & PAULI_Z) >> 1);
                }
                for &r in &f.record_flips {
                    meas[r] ^= 1;
                }
            }
        }
    }
    let bits = |v: &[u64]| F2Vector::from_indices(v.len(), (0..v.len()).filter(|&i| v[i] & 1 == 1));
    ResidualError { x: bits(&x), z: bits(&z), meas: bits(&meas) }
}

/// Output of a batch of simulated shots, bit-sliced 64 shots per word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlipBatch {
    /// `meas[r][w]`: flips of record `r` for shots `64 w .. 64 w + 63`.
    pub meas: Vec<Vec<u64>>,
    pub x: Vec<Vec<u64>>,
    pub z: Vec<Vec<u64>>,
    pub shots: usize,
    /// Sampled fault ids per shot when logging is on.
    pub faults: Option<Vec<Vec<FaultId>>>,
}

impl FlipBatch {
    fn lane(v: &[u64], shot: usize) -> bool {
        (v[shot / 64] >> (shot % 64)) & 1 == 1
    }

    pub fn meas_bit(&self, record: usize, shot: usize) -> bool {
        Self::lane(&self.meas[record], shot)
    }

    /// Measurement flip pattern of one shot.
    pub fn meas_record(&self, shot: usize) -> F2Vector {
        F2Vector::from_indices(self.meas.len(), (0..self.meas.len()).filter(|&r| self.meas_bit(r, shot)))
    }

    pub fn residual(&self, shot: usize) -> ResidualError {
        let n = self.x.len();
        ResidualError {
            x: F2Vector::from_indices(n, (0..n).filter(|&q| Self::lane(&self.x[q], shot))),
            z: F2Vector::from_indices(n, (0..n).filter(|&q| Self::lane(&self.z[q], shot))),
            meas: self.meas_record(shot),
        }
    }
}

/// Identifies a sampled fault: `site * 16 + pattern`.
pub type FaultId = u32;

pub fn fault_id(site: usize, pattern: u8) -> FaultId {
    (site as u32) << 4 | pattern as u32
}

pub fn split_fault_id(id: FaultId) -> (usize, u8) {
    ((id >> 4) as usize, (id & 15) as u8)
}

/// Precomputed schedule of fault sites for fast sampling.
#[derive(Debug, Clone)]
pub struct NoisyCircuit {
    pub circuit: Circuit,
    pub sites: Vec<FaultSite>,
    /// Site indices grouped by rate class.
    classes: Vec<(f64, Vec<usize>)>,
    /// First site index of each layer.
    layer_site_start: Vec<usize>,
}

impl NoisyCircuit {
    pub fn new(circuit: Circuit, noise: &NoiseModel) -> Self {
        let sites = circuit.fault_sites();
        let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
        for (i, s) in sites.iter().enumerate() {
            let p = noise.rate(s);
            if p <= 0.0 {
                continue;
            }
            match groups.iter_mut().find(|(q, _)| *q == p) {
                Some((_, v)) => v.push(i),
                None => groups.push((p, vec![i])),
            }
        }
        let mut layer_site_start = vec![0; circuit.layers.len() + 1];
        let mut k = 0;
        for (li, start) in layer_site_start.iter_mut().enumerate() {
            while k < sites.len() && sites[k].layer() < li {
                k += 1;
            }
            *start = k;
        }
        Self { circuit, sites, classes: groups, layer_site_start }
    }

    /// Samples the faults of one shot as `(site, pattern)` pairs sorted by site.
    pub fn sample_faults(&self, rng: &mut impl Rng, out: &mut Vec<(usize, u8)>) {
        out.clear();
        for (p, idx) in &self.classes {
            let mut pos = 0usize;
            loop {
                pos += geometric_skip(rng, *p);
                if pos >= idx.len() {
                    break;
                }
                let site = idx[pos];
                let n = self.sites[site].n_patterns();
                let pat = if n == 1 { 1 } else { rng.gen_range(1..=n) };
                out.push((site, pat));
                pos += 1;
            }
        }
        out.sort_unstable();
    }

    /// Simulates one batch of up to 64 shots with explicit per-shot fault lists.
    fn run_lanes(&self, faults: &[Vec<(usize, u8)>]) -> (Vec<u64>, Vec<u64>, Vec<u64>) {
        let c = &self.circuit;
        let n = c.n_qubits;
        let mut x = vec![0u64; n];
        let mut z = vec![0u64; n];
        let mut meas = Vec::with_capacity(c.n_measurements());
        // Flatten to (site, lane, pattern) in site order.
        let mut events: Vec<(usize, usize, u8)> =
            faults.iter().enumerate().flat_map(|(lane, fs)| fs.iter().map(move |&(s, p)| (s, lane, p))).collect();
        events.sort_unstable();
        let mut ev = 0;
        for (li, layer) in c.layers.iter().enumerate() {
            apply_layer_frame(c, layer, &mut x, &mut z, &mut meas);
            let end = self.layer_site_start[li + 1];
            while ev < events.len() && events[ev].0 < end {
                let (s, lane, pat) = events[ev];
                let bit = 1u64 << lane;
                match self.sites[s] {
                    FaultSite::Init { qubit, basis, .. } => match basis {
                        Basis::Z => x[qubit] ^= bit,
                        Basis::X => z[qubit] ^= bit,
                    },
                    FaultSite::Cnot { control, target, .. } => {
                        let (pc, pt) = (pat >> 2, pat & 3);
                        if pc & 1 != 0 {
                            x[control] ^= bit;
                        }
                        if pc & 2 != 0 {
                            z[control] ^= bit;
                        }
                        if pt & 1 != 0 {
                            x[target] ^= bit;
                        }
                        if pt & 2 != 0 {
                            z[target] ^= bit;
                        }
                    }
                    FaultSite::Measure { record, .. } => meas[record] ^= bit,
                    FaultSite::Depolarize { qubit, .. } => {
                        if pat & 1 != 0 {
                            x[qubit] ^= bit;
                        }
                        if pat & 2 != 0 {
                            z[qubit] ^= bit;
                        }
                    }
                }
                ev += 1;
            }
        }
        (x, z, meas)
    }
}

/// Number of Bernoulli(p) failures before the next success.
#[inline]
pub fn geometric_skip(rng: &mut impl Rng, p: f64) -> usize {
    if p >= 1.0 {
        return 0;
    }
    let u: f64 = rng.gen::<f64>();
    // 1 - u lies in (0, 1], keeping the logarithm finite.
    let k = ((1.0 - u).ln() / (1.0 - p).ln()).floor();
    if k.is_finite() && k < usize::MAX as f64 {
        k as usize
    } else {
        usize::MAX / 2
    }
}

/// RNG for batch `batch` of a run seeded with `seed`.
pub fn batch_rng(seed: u64, batch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch);
    rng
}

/// Simulates `shots` shots of `circuit` under `noise`.
///
/// Shots are processed in batches of 64; batch `b` draws from
/// `batch_rng(seed, b)`, so results do not depend on how batches are
/// distributed over workers.
pub fn flip_simulate(circuit: &Circuit, noise: &NoiseModel, seed: u64, shots: usize, log_faults: bool) -> FlipBatch {
    let noisy = NoisyCircuit::new(circuit.clone(), noise);
    flip_simulate_prepared(&noisy, seed, 0, shots, log_faults)
}

/// As [`flip_simulate`] on a prepared circuit, starting at batch `first_batch`.
pub fn flip_simulate_prepared(noisy: &NoisyCircuit, seed: u64, first_batch: u64, shots: usize, log_faults: bool) -> FlipBatch {
    let c = &noisy.circuit;
    let words = shots.div_ceil(64);
    let mut out = FlipBatch {
        meas: vec![vec![0; words]; c.n_measurements()],
        x: vec![vec![0; words]; c.n_qubits],
        z: vec![vec![0; words]; c.n_qubits],
        shots,
        faults: log_faults.then(Vec::new),
    };
    let mut scratch = Vec::new();
    for w in 0..words {
        let lanes = (shots - 64 * w).min(64);
        let mut rng = batch_rng(seed, first_batch + w as u64);
        let mut per_lane = Vec::with_capacity(lanes);
        for _ in 0..lanes {
            noisy.sample_faults(&mut rng, &mut scratch);
            per_lane.push(scratch.clone());
        }
        let (x, z, meas) = noisy.run_lanes(&per_lane);
        for (q, v) in x.into_iter().enumerate() {
            out.x[q][w] = v;
        }
        for (q, v) in z.into_iter().enumerate() {
            out.z[q][w] = v;
        }
        for (r, v) in meas.into_iter().enumerate() {
            out.meas[r][w] = v;
        }
        if let Some(log) = out.faults.as_mut() {
            log.extend(per_lane.into_iter().map(|fs| fs.into_iter().map(|(s, p)| fault_id(s, p)).collect()));
        }
    }
    out
}

/// Simulates shots with explicitly chosen faults, one list per shot.
pub fn simulate_forced(circuit: &Circuit, faults_per_shot: &[Vec<FaultId>]) -> FlipBatch {
    let noisy = NoisyCircuit::new(circuit.clone(), &NoiseModel::noiseless());
    let shots = faults_per_shot.len();
    let words = shots.div_ceil(64);
    let mut out = FlipBatch {
        meas: vec![vec![0; words]; circuit.n_measurements()],
        x: vec![vec![0; words]; circuit.n_qubits],
        z: vec![vec![0; words]; circuit.n_qubits],
        shots,
        faults: Some(faults_per_shot.to_vec()),
    };
    for (w, chunk) in faults_per_shot.chunks(64).enumerate() {
        let lanes: Vec<Vec<(usize, u8)>> = chunk.iter().map(|fs| fs.iter().map(|&id| split_fault_id(id)).collect()).collect();
        let (x, z, meas) = noisy.run_lanes(&lanes);
        for (q, v) in x.into_iter().enumerate() {
            out.x[q][w] = v;
        }
        for (q, v) in z.into_iter().enumerate() {
            out.z[q][w] = v;
        }
        for (r, v) in meas.into_iter().enumerate() {
            out.meas[r][w] = v;
        }
    }
    out
}

/// Word-parallel propagation through the hypercube encoder for `m ≤ 7`.
///
/// Frames are label masks (`bit ℓ` = coordinate `ℓ`). The frame is applied
/// after step `after_step` (0 = right after initialization) and pushed through
/// the remaining steps.
#[derive(Debug, Clone, Copy)]
pub struct FastEncoder {
    pub m: usize,
    pub state: LogicalState,
    pub punctured: bool,
}

const LAYER_MASKS: [u128; 7] = [
    0x5555_5555_5555_5555_5555_5555_5555_5555,
    0x3333_3333_3333_3333_3333_3333_3333_3333,
    0x0f0f_0f0f_0f0f_0f0f_0f0f_0f0f_0f0f_0f0f,
    0x00ff_00ff_00ff_00ff_00ff_00ff_00ff_00ff,
    0x0000_ffff_0000_ffff_0000_ffff_0000_ffff,
    0x0000_0000_ffff_ffff_0000_0000_ffff_ffff,
    0x0000_0000_0000_0000_ffff_ffff_ffff_ffff,
];

impl FastEncoder {
    pub fn new(m: usize, state: LogicalState, punctured: bool) -> Self {
        assert!(m <= 7, "fast encoder supports m <= 7");
        Self { m, state, punctured }
    }

    /// Applies step `t` (1-based) to an `(x, z)` frame.
    #[inline]
    pub fn step(&self, t: usize, x: u128, z: u128) -> (u128, u128) {
        let s = 1u32 << (t - 1);
        // Wires with bit t-1 clear.
        let lo = LAYER_MASKS[t - 1] & full_mask(self.m);
        let keep = if self.punctured { !1u128 } else { u128::MAX };
        let (x, z) = match self.state {
            // Control on the clear wire: X moves to supersets, Z to subsets.
            LogicalState::Zero => (x ^ ((x & lo) << s), z ^ ((z >> s) & lo)),
            LogicalState::Plus => (x ^ ((x >> s) & lo), z ^ ((z & lo) << s)),
        };
        (x & keep, z & keep)
    }

    /// Pushes a frame injected after step `after_step` to the output.
    #[inline]
    pub fn propagate(&self, after_step: usize, x: u128, z: u128) -> (u128, u128) {
        let (mut x, mut z) = (x, z);
        for t in after_step + 1..=self.m {
            (x, z) = self.step(t, x, z);
        }
        (x, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d15() -> QrmCode {
        QrmCode::pqrm(3, 3, 7).unwrap()
    }

    fn d7() -> QrmCode {
        QrmCode::pqrm(2, 4, 7).unwrap()
    }

    #[test]
    fn encoder_init_counts() {
        let count = |code: &QrmCode, state| {
            let c = hypercube_encoder(code, state);
            let zs = c.layers.iter().filter(|l| matches!(l, Layer::Init(_, Basis::Z))).count();
            let xs = c.layers.iter().filter(|l| matches!(l, Layer::Init(_, Basis::X))).count();
            (zs, xs, c.layers.iter().filter(|l| matches!(l, Layer::Cnot(_))).count())
        };
        assert_eq!(count(&d15(), LogicalState::Zero), (64, 63, 7));
        assert_eq!(count(&d15(), LogicalState::Plus), (63, 64, 7));
        assert_eq!(count(&d7(), LogicalState::Plus), (98, 29, 7));
        assert_eq!(count(&d7(), LogicalState::Zero), (99, 28, 7));
    }

    #[test]
    fn encoder_cnot_count() {
        assert_eq!(hypercube_encoder(&d15(), LogicalState::Zero).cnot_count(), 7 * 63);
        assert_eq!(hypercube_encoder(&QrmCode::qrm(1, 1, 3).unwrap(), LogicalState::Zero).cnot_count(), 12);
    }

    #[test]
    fn m3_wiring() {
        // Step t pairs wires differing in bit t-1, control on the clear side.
        let c = hypercube_encoder(&QrmCode::qrm(1, 1, 3).unwrap(), LogicalState::Zero);
        let layers: Vec<&Vec<(usize, usize)>> = c.layers.iter().filter_map(|l| if let Layer::Cnot(p) = l { Some(p) } else { None }).collect();
        assert_eq!(layers[0], &vec![(0, 1), (2, 3), (4, 5), (6, 7)]);
        assert_eq!(layers[1], &vec![(0, 2), (1, 3), (4, 6), (5, 7)]);
        assert_eq!(layers[2], &vec![(0, 4), (1, 5), (2, 6), (3, 7)]);
    }

    #[test]
    fn appendix_style_propagation() {
        let c = hypercube_encoder(&d15(), LogicalState::Zero);
        let label = 0b0101000;
        let fault = FaultEvent::pauli(c.tick_layer(4).unwrap(), qubit_of_label(label, true), PAULI_Z);
        let r = propagate_fault(&c, &fault);
        let support: Vec<usize> = r.z.iter_ones().map(|q| label_of_qubit(q, true)).collect();
        assert_eq!(support, vec![0b0001000, 0b0100000, 0b0101000]);
        let full = QrmCode::qrm(3, 3, 7).unwrap();
        let c = hypercube_encoder(&full, LogicalState::Zero);
        let fault = FaultEvent::pauli(c.tick_layer(4).unwrap(), label, PAULI_Z);
        let support: Vec<usize> = propagate_fault(&c, &fault).z.iter_ones().collect();
        assert_eq!(support, vec![0, 0b0001000, 0b0100000, 0b0101000]);
    }

    #[test]
    fn init_faults_give_state_stabilizers() {
        use crate::rm_codes::{unencode_check, Membership};
        for code in [d15(), d7()] {
            for state in [LogicalState::Zero, LogicalState::Plus] {
                let c = hypercube_encoder(&code, state);
                let (sx, sz) = code.state_stabilizers(state).unwrap();
                for site in c.fault_sites() {
                    // A Pauli that fixes the initial wire state spreads into a stabilizer.
                    let FaultSite::Init { layer, qubit, basis } = site else { continue };
                    let p = if basis == Basis::X { PAULI_X } else { PAULI_Z };
                    let r = propagate_fault(&c, &FaultEvent::pauli(layer, qubit, p));
                    let (word, stab) = if r.x.is_zero() { (&r.z, &sz) } else { (&r.x, &sx) };
                    let got = unencode_check(word, stab).unwrap();
                    assert_ne!(got, Membership::NotInCode);
                    if stab.shortened {
                        assert_eq!(got, Membership::InShortened);
                    }
                }
            }
        }
    }

    #[test]
    fn final_fault_is_unchanged() {
        let c = hypercube_encoder(&d7(), LogicalState::Plus);
        let last = c.layers.len() - 1;
        let f = FaultEvent { layer: last, paulis: vec![(3, PAULI_Y), (77, PAULI_X)], record_flips: vec![] };
        let r = propagate_fault(&c, &f);
        assert_eq!(r.x.iter_ones().collect::<Vec<_>>(), vec![3, 77]);
        assert_eq!(r.z.iter_ones().collect::<Vec<_>>(), vec![3]);
    }

    #[test]
    fn fast_encoder_matches_generic() {
        let mut rng = batch_rng(7, 0);
        for code in [d15(), d7(), QrmCode::qrm(2, 3, 7).unwrap()] {
            for state in [LogicalState::Zero, LogicalState::Plus] {
                let c = hypercube_encoder(&code, state);
                let fast = FastEncoder::new(7, state, code.punctured);
                for _ in 0..40 {
                    let step = rng.gen_range(0..=7);
                    let layer = c.tick_layer(step + 1).unwrap();
                    let mut x: u128 = rng.gen();
                    let mut z: u128 = rng.gen();
                    if code.punctured {
                        x &= !1;
                        z &= !1;
                    }
                    let paulis: Vec<(usize, Pauli)> = (0..128)
                        .filter(|&l| !(code.punctured && l == 0))
                        .filter_map(|l| {
                            let p = ((x >> l) & 1) as u8 | (((z >> l) & 1) as u8) << 1;
                            (p != 0).then(|| (qubit_of_label(l, code.punctured), p))
                        })
                        .collect();
                    let r = propagate_fault(&c, &FaultEvent { layer, paulis, record_flips: vec![] });
                    let (fx, fz) = fast.propagate(step, x, z);
                    let to_mask = |v: &F2Vector| v.iter_ones().fold(0u128, |a, q| a | 1u128 << label_of_qubit(q, code.punctured));
                    assert_eq!((to_mask(&r.x), to_mask(&r.z)), (fx, fz), "step {step}");
                }
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let mut c = hypercube_encoder(&QrmCode::pqrm(1, 1, 3).unwrap(), LogicalState::Plus);
        let id = c.add_map("swap01", { let mut p: Vec<usize> = (0..7).collect(); p.swap(0, 1); p });
        c.layers.push(Layer::Perm(id));
        c.layers.push(Layer::Depolarize(Channel::Single, vec![0, 5]));
        c.layers.push(Layer::Measure(2, Basis::X));
        c.layers.push(Layer::Measure(3, Basis::Z));
        let text = c.to_text();
        let back = Circuit::from_text(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), text);
        assert!(Circuit::from_text("QUBITS 2\nCNOT 0 0\n").is_err());
        assert!(Circuit::from_text("QUBITS 2\nMEAS 0 Z\nMEAS 0 X\n").is_err());
        assert!(Circuit::from_text("QUBITS 2\nFOO\n").is_err());
    }

    #[test]
    fn noiseless_simulation_is_clean() {
        let mut c = hypercube_encoder(&d7(), LogicalState::Plus);
        for q in 0..c.n_qubits {
            c.layers.push(Layer::Measure(q, Basis::Z));
        }
        let out = flip_simulate(&c, &NoiseModel::noiseless(), 1, 200, false);
        assert!(out.meas.iter().all(|v| v.iter().all(|&w| w == 0)));
        assert!(out.x.iter().chain(&out.z).all(|v| v.iter().all(|&w| w == 0)));
    }

    #[test]
    fn certain_spam_flips_everything() {
        let mut c = Circuit::new(3);
        for q in 0..3 {
            c.layers.push(Layer::Init(q, Basis::Z));
        }
        c.layers.push(Layer::Cnot(vec![(0, 1)]));
        for q in 0..3 {
            c.layers.push(Layer::Measure(q, Basis::Z));
        }
        let noise = NoiseModel { p_cnot: 0.0, p_spam: 1.0, p_single: 0.0, p_corr: 0.0 };
        let out = flip_simulate(&c, &noise, 3, 100, true);
        // Init flips: qubit 1 gets X from itself and from qubit 0; readout adds one more flip.
        for shot in 0..100 {
            assert_eq!(out.meas_record(shot).to_string(), "010");
            assert_eq!(out.faults.as_ref().unwrap()[shot].len(), 6);
        }
    }

    #[test]
    fn simulation_is_deterministic_and_batch_stable() {
        let c = hypercube_encoder(&d15(), LogicalState::Zero);
        let noisy = NoisyCircuit::new(c.clone(), &NoiseModel::standard(0.01));
        let a = flip_simulate_prepared(&noisy, 11, 0, 256, true);
        let b = flip_simulate_prepared(&noisy, 11, 0, 256, true);
        assert_eq!(a, b);
        let tail = flip_simulate_prepared(&noisy, 11, 2, 128, true);
        assert_eq!(tail.x.iter().map(|v| v.clone()).collect::<Vec<_>>(), a.x.iter().map(|v| v[2..].to_vec()).collect::<Vec<_>>());
        // Forced replay of the logged faults reproduces the frames.
        let forced = simulate_forced(&c, a.faults.as_ref().unwrap());
        assert_eq!(forced.x, a.x);
        assert_eq!(forced.z, a.z);
    }

    #[test]
    fn mean_cnot_faults() {
        let c = hypercube_encoder(&d15(), LogicalState::Zero);
        let n_cnot = c.cnot_count() as f64;
        let p = 0.01;
        let noise = NoiseModel { p_cnot: p, p_spam: 0.0, p_single: 0.0, p_corr: 0.0 };
        let shots = 20_000;
        let out = flip_simulate(&c, &noise, 5, shots, true);
        let total: usize = out.faults.unwrap().iter().map(Vec::len).sum();
        let mean = total as f64 / shots as f64;
        let sigma = (n_cnot * p * (1.0 - p) / shots as f64).sqrt();
        assert!((mean - n_cnot * p).abs() < 4.0 * sigma, "mean {mean} vs {}", n_cnot * p);
    }
}
