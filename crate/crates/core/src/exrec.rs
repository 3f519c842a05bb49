//! Steane error correction, code switching and extended-rectangle Monte Carlo.
//!
//! Data blocks are tracked as Pauli frames over label masks (bit `ℓ` is
//! coordinate `ℓ`; bit 0 is unused by punctured codes). Ancillas are drawn
//! from pools of accepted preparations, stored as the fault ids that hit the
//! output patch and rebuilt through a propagation dictionary.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{batch_rng, fault_id, simulate_forced, FaultId, FlipBatch, NoiseModel, NoisyCircuit};
use crate::decoder::{coset_decide_mask, nearest_stabilizer_scl, CosetDecision, SclDecoder};
use crate::ft_prep::{build_protocol, FtError, PauliType, PermutationSchedule, Protocol, Verification};
use crate::rm_codes::{LogicalState, QrmCode, RmCode, RmError};

#[derive(Debug, Error)]
pub enum ExrecError {
    #[error("pool: {0}")]
    Pool(String),
    #[error("noise mismatch: {0}")]
    Mismatch(String),
    #[error("acceptance rate {rate:.3e} after {shots} shots is below the floor {floor:.3e}")]
    LowAcceptance { rate: f64, shots: u64, floor: f64 },
    #[error(transparent)]
    Ft(#[from] FtError),
    #[error(transparent)]
    Rm(#[from] RmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Pauli frame of one block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Frame {
    #[serde(with = "crate::mask_serde")]
    pub x: u128,
    #[serde(with = "crate::mask_serde")]
    pub z: u128,
}

impl Frame {
    pub const ZERO: Frame = Frame { x: 0, z: 0 };

    pub fn weight(&self) -> u32 {
        (self.x | self.z).count_ones()
    }

    pub fn xor(self, o: Frame) -> Frame {
        Frame { x: self.x ^ o.x, z: self.z ^ o.z }
    }
}

/// Positions `0..n` hit independently with probability `p`.
fn for_each_hit(rng: &mut impl Rng, p: f64, n: usize, mut f: impl FnMut(usize, &mut dyn rand::RngCore)) {
    if p <= 0.0 {
        return;
    }
    let mut pos = crate::circuit::geometric_skip(rng, p);
    while pos < n {
        f(pos, rng);
        pos += 1 + crate::circuit::geometric_skip(rng, p);
    }
}

/// Single-qubit depolarizing noise on labels `1..=n`.
pub fn depolarize(frame: &mut Frame, n: usize, p: f64, rng: &mut impl Rng) {
    for_each_hit(rng, p, n, |q, rng| {
        let bit = 1u128 << (q + 1);
        let pat = rng.gen_range(1..=3u8);
        if pat & 1 != 0 {
            frame.x ^= bit;
        }
        if pat & 2 != 0 {
            frame.z ^= bit;
        }
    });
}

/// Transversal CNOT from `control` to `target`, each pair followed by a
/// uniformly chosen nontrivial two-qubit Pauli with probability `p`.
pub fn transversal_cnot(control: &mut Frame, target: &mut Frame, n: usize, p: f64, rng: &mut impl Rng) {
    target.x ^= control.x;
    control.z ^= target.z;
    for_each_hit(rng, p, n, |q, rng| {
        let bit = 1u128 << (q + 1);
        let pat = rng.gen_range(1..=15u8);
        let (pc, pt) = (pat >> 2, pat & 3);
        if pc & 1 != 0 {
            control.x ^= bit;
        }
        if pc & 2 != 0 {
            control.z ^= bit;
        }
        if pt & 1 != 0 {
            target.x ^= bit;
        }
        if pt & 2 != 0 {
            target.z ^= bit;
        }
    });
}

/// Readout flips of a transversal measurement.
pub fn measurement_flips(n: usize, p: f64, rng: &mut impl Rng) -> u128 {
    let mut flips = 0u128;
    for_each_hit(rng, p, n, |q, _| flips ^= 1u128 << (q + 1));
    flips
}

/// Extra Z errors from twirling the transversal T gate: a fair coin per X.
pub fn twirl_t(x_mask: u128, rng: &mut impl Rng) -> u128 {
    x_mask & rng.gen::<u128>()
}

/// Decides cosets of `RM̄(r, m)` in a punctured word.
///
/// Words within half the coset distance `2^(m-r) - 1` are decided without
/// calling the list decoder.
pub struct CosetJudge {
    decoder: SclDecoder,
}

impl CosetJudge {
    pub fn new(m: usize, list: usize) -> Self {
        Self { decoder: SclDecoder::new(m, list) }
    }

    pub fn decide(&mut self, word: u128, r: usize) -> CosetDecision {
        let m = self.decoder.m();
        let radius = ((1u32 << (m - r)) - 2) / 2;
        if (word & !1).count_ones() <= radius {
            CosetDecision::Trivial
        } else {
            coset_decide_mask(word, r, &mut self.decoder)
        }
    }

    pub fn decoder(&mut self) -> &mut SclDecoder {
        &mut self.decoder
    }
}

/// Result of one Steane block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EcOutcome {
    pub decision: CosetDecision,
    /// Weight of the measured word the decoder saw.
    pub observed_weight: u32,
}

/// One Steane error-correction block.
///
/// `kind = X` corrects X errors: the ancilla (`|+⟩`) is the CNOT target and is
/// measured in the Z basis. `kind = Z` uses a `|0⟩` ancilla as control,
/// measured in the X basis. The measured word is decided against `RM̄(r, m)`
/// and applied as the correction; a nontrivial decision is reported and its
/// all-one part is left out of the frame so later blocks see only new noise.
pub fn steane_ec(
    data: &mut Frame,
    ancilla: Frame,
    kind: PauliType,
    r: usize,
    n: usize,
    noise: &NoiseModel,
    rng: &mut impl Rng,
    judge: &mut CosetJudge,
) -> EcOutcome {
    let mut anc = ancilla;
    let observed = match kind {
        PauliType::X => {
            transversal_cnot(data, &mut anc, n, noise.p_cnot, rng);
            anc.x ^ measurement_flips(n, noise.p_spam, rng)
        }
        PauliType::Z => {
            transversal_cnot(&mut anc, data, n, noise.p_cnot, rng);
            anc.z ^ measurement_flips(n, noise.p_spam, rng)
        }
    };
    match kind {
        PauliType::X => data.x ^= observed,
        PauliType::Z => data.z ^= observed,
    }
    EcOutcome { decision: judge.decide(observed, r), observed_weight: observed.count_ones() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SwitchDirection {
    /// From the code with the larger `r_x` to the one with the smaller.
    Forward,
    Reverse,
}

/// Switches the data block from `from` to the partner code.
///
/// The forward direction is an X-type Steane block with `|+⟩` of the target
/// code, decided against `RM̄(from.r_x, m)`; the reverse direction a Z-type
/// block with `|0⟩` of the target, decided against `RM̄(from.r_z, m)`.
pub fn code_switch(
    data: &mut Frame,
    from: &QrmCode,
    direction: SwitchDirection,
    ancilla: Frame,
    noise: &NoiseModel,
    rng: &mut impl Rng,
    judge: &mut CosetJudge,
) -> EcOutcome {
    match direction {
        SwitchDirection::Forward => steane_ec(data, ancilla, PauliType::X, from.r_x, from.n(), noise, rng, judge),
        SwitchDirection::Reverse => steane_ec(data, ancilla, PauliType::Z, from.r_z, from.n(), noise, rng, judge),
    }
}

/// Reduces an ancilla residual by its nearest state stabilizer, per type.
pub fn reduce_residual(frame: Frame, codes: &(RmCode, RmCode), decoder: &mut SclDecoder) -> Frame {
    Frame { x: reduce_mask(frame.x, &codes.0, decoder), z: reduce_mask(frame.z, &codes.1, decoder) }
}

fn reduce_mask(mask: u128, code: &RmCode, decoder: &mut SclDecoder) -> u128 {
    let mask = mask & !1;
    let w = mask.count_ones() as usize;
    if 2 * w < code.min_distance() {
        return mask;
    }
    let reduced = mask ^ nearest_stabilizer_scl(mask, code, decoder);
    if reduced.count_ones() < mask.count_ones() {
        reduced
    } else {
        mask
    }
}

/// Output-patch effect of every fault of a preparation circuit.
#[derive(Debug, Clone)]
pub struct FaultDictionary {
    map: HashMap<FaultId, Frame>,
}

impl FaultDictionary {
    pub fn build(protocol: &Protocol) -> Self {
        let sites = protocol.circuit.fault_sites();
        let ids: Vec<FaultId> =
            sites.iter().enumerate().flat_map(|(s, site)| (1..=site.n_patterns()).map(move |p| fault_id(s, p))).collect();
        let shots: Vec<Vec<FaultId>> = ids.iter().map(|&id| vec![id]).collect();
        let batch = simulate_forced(&protocol.circuit, &shots);
        let out = output_frames(protocol, &batch);
        let map = ids.into_iter().zip(out).filter(|(_, f)| *f != Frame::ZERO).collect();
        Self { map }
    }

    pub fn get(&self, id: FaultId) -> Option<Frame> {
        self.map.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn residual(&self, ids: &[FaultId]) -> Frame {
        ids.iter().filter_map(|&id| self.get(id)).fold(Frame::ZERO, Frame::xor)
    }
}

/// Per-shot label masks of `n` consecutive qubits starting at `first`.
fn lane_masks(words: &[Vec<u64>], first: usize, n: usize, shots: usize, out: &mut [u128]) {
    for q in 0..n {
        for (w, &word) in words[first + q].iter().enumerate() {
            let mut v = word;
            while v != 0 {
                let lane = 64 * w + v.trailing_zeros() as usize;
                if lane < shots {
                    out[lane] |= 1u128 << (q + 1);
                }
                v &= v - 1;
            }
        }
    }
}

/// Output residual (patch 0) of every shot.
fn output_frames(protocol: &Protocol, batch: &FlipBatch) -> Vec<Frame> {
    let n = protocol.n();
    let mut x = vec![0u128; batch.shots];
    let mut z = vec![0u128; batch.shots];
    lane_masks(&batch.x, 0, n, batch.shots, &mut x);
    lane_masks(&batch.z, 0, n, batch.shots, &mut z);
    x.into_iter().zip(z).map(|(x, z)| Frame { x, z }).collect()
}

/// Acceptance of every shot.
fn accepted_lanes(protocol: &Protocol, batch: &FlipBatch) -> Vec<bool> {
    let n = protocol.n();
    let mut ok = vec![true; batch.shots];
    let mut masks = vec![0u128; batch.shots];
    for b in &protocol.blocks {
        masks.iter_mut().for_each(|m| *m = 0);
        lane_masks(&batch.meas, b.first_record, n, batch.shots, &mut masks);
        let det = protocol.detector(b.ty);
        for (o, &m) in ok.iter_mut().zip(&masks) {
            if *o && m != 0 && det.syndrome(m) != 0 {
                *o = false;
            }
        }
    }
    ok
}

/// What an ancilla pool was generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolHeader {
    pub code: QrmCode,
    pub state: LogicalState,
    pub verification: Verification,
    pub schedule: String,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl PoolHeader {
    pub fn new(code: QrmCode, state: LogicalState, schedule: &PermutationSchedule, noise: NoiseModel, seed: u64) -> Self {
        let verification = Verification::default_for(&code, state);
        Self { code, state, verification, schedule: schedule.to_text(), noise, seed }
    }

    pub fn protocol(&self) -> Result<Protocol, ExrecError> {
        let schedule = PermutationSchedule::parse(&self.schedule, self.code.m)?;
        Ok(build_protocol(self.code, self.state, self.verification, &schedule)?)
    }
}

/// Accepted preparations of one chunk of shots.
///
/// Shots without faults on the output patch are counted in `no_fault`; a
/// single fault is counted by its reduced effect on one qubit (`3 (ℓ-1) + P - 1`
/// with `P` = 1, 2, 3 for X, Z, Y); everything else keeps its fault ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PoolChunk {
    pub first_batch: u64,
    pub shots: u64,
    pub accepted: u64,
    pub no_fault: u64,
    pub singles: Vec<u64>,
    pub multi: Vec<Vec<FaultId>>,
}

impl PoolChunk {
    fn empty(n: usize, first_batch: u64) -> Self {
        Self { first_batch, singles: vec![0; 3 * n], ..Default::default() }
    }

    fn absorb(&mut self, other: PoolChunk) {
        self.shots += other.shots;
        self.accepted += other.accepted;
        self.no_fault += other.no_fault;
        for (a, b) in self.singles.iter_mut().zip(other.singles) {
            *a += b;
        }
        self.multi.extend(other.multi);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChunkHeader {
    format: String,
    pool: PoolHeader,
    first_batch: u64,
    shots: u64,
    accepted: u64,
    no_fault: u64,
    singles: Vec<u64>,
    records: u64,
}

const POOL_FORMAT: &str = "qrm-pool-v1";

/// Everything needed to simulate and store one preparation protocol.
pub struct PoolGenerator {
    pub header: PoolHeader,
    pub protocol: Protocol,
    noisy: NoisyCircuit,
    pub dictionary: FaultDictionary,
    state_codes: (RmCode, RmCode),
}

/// Batches of 64 shots handled by one parallel task.
const TASK_BATCHES: u64 = 64;

impl PoolGenerator {
    pub fn new(header: PoolHeader) -> Result<Self, ExrecError> {
        header.noise.validate().map_err(|e| ExrecError::Pool(e.to_string()))?;
        let protocol = header.protocol()?;
        let noisy = NoisyCircuit::new(protocol.circuit.clone(), &header.noise);
        let dictionary = FaultDictionary::build(&protocol);
        let state_codes = header.code.state_stabilizers(header.state)?;
        Ok(Self { header, protocol, noisy, dictionary, state_codes })
    }

    pub fn state_codes(&self) -> &(RmCode, RmCode) {
        &self.state_codes
    }

    /// Simulates `batches` batches of 64 shots starting at `first_batch`.
    ///
    /// With `capture`, also returns the reduced residual of every accepted
    /// shot, read directly off the simulator.
    pub fn run(&self, first_batch: u64, batches: u64, capture: bool) -> (PoolChunk, Vec<Frame>) {
        let n = self.protocol.n();
        let tasks: Vec<u64> = (0..batches.div_ceil(TASK_BATCHES)).collect();
        let parts: Vec<(PoolChunk, Vec<Frame>)> = tasks
            .into_par_iter()
            .map(|t| {
                let start = first_batch + t * TASK_BATCHES;
                let count = TASK_BATCHES.min(first_batch + batches - start);
                self.run_task(start, count, capture)
            })
            .collect();
        let mut chunk = PoolChunk::empty(n, first_batch);
        let mut captured = Vec::new();
        for (c, f) in parts {
            chunk.absorb(c);
            captured.extend(f);
        }
        (chunk, captured)
    }

    fn run_task(&self, first_batch: u64, batches: u64, capture: bool) -> (PoolChunk, Vec<Frame>) {
        let n = self.protocol.n();
        let mut chunk = PoolChunk::empty(n, first_batch);
        let mut captured = Vec::new();
        let mut decoder = SclDecoder::new(self.header.code.m, 8);
        for b in 0..batches {
            let batch = crate::circuit::flip_simulate_prepared(&self.noisy, self.header.seed, first_batch + b, 64, true);
            let ok = accepted_lanes(&self.protocol, &batch);
            let frames = capture.then(|| output_frames(&self.protocol, &batch));
            let faults = batch.faults.as_ref().expect("fault logging is on");
            chunk.shots += 64;
            for (lane, &acc) in ok.iter().enumerate() {
                if !acc {
                    continue;
                }
                chunk.accepted += 1;
                let ids: Vec<FaultId> = faults[lane].iter().copied().filter(|&id| self.dictionary.get(id).is_some()).collect();
                self.classify(&mut chunk, ids, &mut decoder);
                if let Some(f) = &frames {
                    captured.push(reduce_residual(f[lane], &self.state_codes, &mut decoder));
                }
            }
        }
        (chunk, captured)
    }

    fn classify(&self, chunk: &mut PoolChunk, ids: Vec<FaultId>, decoder: &mut SclDecoder) {
        match ids.len() {
            0 => chunk.no_fault += 1,
            1 => {
                let f = reduce_residual(self.dictionary.residual(&ids), &self.state_codes, decoder);
                match single_class(f) {
                    Some(None) => chunk.no_fault += 1,
                    Some(Some(c)) => chunk.singles[c] += 1,
                    None => chunk.multi.push(ids),
                }
            }
            _ => chunk.multi.push(ids),
        }
    }
}

/// `Some(None)` for the identity, `Some(Some(class))` for a single-qubit Pauli.
fn single_class(f: Frame) -> Option<Option<usize>> {
    let support = f.x | f.z;
    match support.count_ones() {
        0 => Some(None),
        1 => {
            let label = support.trailing_zeros() as usize;
            let p = (f.x >> label & 1) as usize | ((f.z >> label & 1) as usize) << 1;
            Some(Some(3 * (label - 1) + p - 1))
        }
        _ => None,
    }
}

fn class_frame(class: usize) -> Frame {
    let bit = 1u128 << (class / 3 + 1);
    let p = class % 3 + 1;
    Frame { x: if p & 1 != 0 { bit } else { 0 }, z: if p & 2 != 0 { bit } else { 0 } }
}

/// Writes one chunk: a JSON header line, then per record a LEB128 count
/// followed by the LEB128 fault ids.
pub fn write_chunk(path: &Path, header: &PoolHeader, chunk: &PoolChunk) -> Result<(), ExrecError> {
    let mut w = BufWriter::new(File::create(path)?);
    let h = ChunkHeader {
        format: POOL_FORMAT.into(),
        pool: header.clone(),
        first_batch: chunk.first_batch,
        shots: chunk.shots,
        accepted: chunk.accepted,
        no_fault: chunk.no_fault,
        singles: chunk.singles.clone(),
        records: chunk.multi.len() as u64,
    };
    serde_json::to_writer(&mut w, &h)?;
    w.write_all(b"\n")?;
    for rec in &chunk.multi {
        leb128::write::unsigned(&mut w, rec.len() as u64)?;
        for &id in rec {
            leb128::write::unsigned(&mut w, u64::from(id))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_chunk(path: &Path) -> Result<(PoolHeader, PoolChunk), ExrecError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let h: ChunkHeader = serde_json::from_str(&line)?;
    if h.format != POOL_FORMAT {
        return Err(ExrecError::Pool(format!("{}: unknown format {:?}", path.display(), h.format)));
    }
    let bad = |e: leb128::read::Error| ExrecError::Pool(format!("{}: {e}", path.display()));
    let mut multi = Vec::with_capacity(h.records as usize);
    for _ in 0..h.records {
        let len = leb128::read::unsigned(&mut r).map_err(bad)?;
        let ids = (0..len).map(|_| leb128::read::unsigned(&mut r).map(|v| v as FaultId)).collect::<Result<Vec<_>, _>>().map_err(bad)?;
        multi.push(ids);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(ExrecError::Pool(format!("{}: {} trailing bytes", path.display(), rest.len())));
    }
    let chunk = PoolChunk { first_batch: h.first_batch, shots: h.shots, accepted: h.accepted, no_fault: h.no_fault, singles: h.singles, multi };
    Ok((h.pool, chunk))
}

/// Index of the chunk files of one pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolManifest {
    pub pool: PoolHeader,
    pub chunks: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub file: String,
    pub first_batch: u64,
    pub shots: u64,
    pub accepted: u64,
}

impl PoolManifest {
    pub fn shots(&self) -> u64 {
        self.chunks.iter().map(|c| c.shots).sum()
    }

    pub fn accepted(&self) -> u64 {
        self.chunks.iter().map(|c| c.accepted).sum()
    }

    pub fn save(&self, path: &Path) -> Result<(), ExrecError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ExrecError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Generation targets for [`ancilla_pool`].
#[derive(Debug, Clone)]
pub struct PoolConfig {
    pub target_accepted: u64,
    /// Shots per chunk (rounded up to a multiple of 64).
    pub chunk_shots: u64,
    pub max_shots: u64,
    /// Abort once at least `floor_after` shots were run at a lower rate.
    pub min_acceptance: f64,
    pub floor_after: u64,
    /// Directory receiving chunk files and `manifest.json`.
    pub out_dir: Option<PathBuf>,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self { target_accepted: 10_000, chunk_shots: 10_000_000, max_shots: u64::MAX, min_acceptance: 0.0, floor_after: 1 << 16, out_dir: None }
    }
}

/// Runs the preparation protocol chunk by chunk until `target_accepted`
/// preparations are accepted. Returns the pool and the acceptance rate.
pub fn ancilla_pool(header: PoolHeader, config: &PoolConfig) -> Result<(AncillaPool, f64), ExrecError> {
    let generator = PoolGenerator::new(header.clone())?;
    let chunk_batches = config.chunk_shots.div_ceil(64).max(1);
    // Chunks are split further so the target is not overshot by a full chunk.
    let step = chunk_batches.min(256);
    let mut chunks: Vec<PoolChunk> = Vec::new();
    let mut current = PoolChunk::empty(header.code.n(), 0);
    let (mut shots, mut accepted) = (0u64, 0u64);
    let mut next = 0u64;
    while accepted < config.target_accepted && shots < config.max_shots {
        let in_chunk = current.shots / 64;
        let count = step.min(chunk_batches - in_chunk).min((config.max_shots - shots).div_ceil(64));
        let (part, _) = generator.run(next, count, false);
        next += count;
        shots += part.shots;
        accepted += part.accepted;
        current.absorb(part);
        if current.shots / 64 == chunk_batches {
            let first = next;
            chunks.push(std::mem::replace(&mut current, PoolChunk::empty(header.code.n(), first)));
        }
        if shots >= config.floor_after && (accepted as f64) < config.min_acceptance * shots as f64 {
            return Err(ExrecError::LowAcceptance { rate: accepted as f64 / shots as f64, shots, floor: config.min_acceptance });
        }
    }
    if current.shots > 0 {
        chunks.push(current);
    }
    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir)?;
        let mut manifest = PoolManifest { pool: header.clone(), chunks: Vec::new() };
        for (i, c) in chunks.iter().enumerate() {
            let file = format!("chunk-{i:05}.pool");
            write_chunk(&dir.join(&file), &header, c)?;
            manifest.chunks.push(ManifestEntry { file, first_batch: c.first_batch, shots: c.shots, accepted: c.accepted });
        }
        manifest.save(&dir.join("manifest.json"))?;
    }
    let pool = AncillaPool::from_chunks(header, chunks, &generator.dictionary)?;
    let rate = pool.acceptance_rate();
    Ok((pool, rate))
}

/// Accepted preparations ready for sampling.
#[derive(Debug, Clone)]
pub struct AncillaPool {
    pub header: PoolHeader,
    pub shots: u64,
    pub accepted: u64,
    pub no_fault: u64,
    pub singles: Vec<u64>,
    pub multi: Vec<Vec<FaultId>>,
    /// Reduced residuals of `multi`.
    residuals: Vec<Frame>,
    single_cum: Vec<u64>,
}

impl AncillaPool {
    pub fn from_chunks(header: PoolHeader, chunks: Vec<PoolChunk>, dictionary: &FaultDictionary) -> Result<Self, ExrecError> {
        let n = header.code.n();
        let mut all = PoolChunk::empty(n, 0);
        for c in chunks {
            if c.singles.len() != 3 * n {
                return Err(ExrecError::Pool(format!("chunk has {} single classes, expected {}", c.singles.len(), 3 * n)));
            }
            all.absorb(c);
        }
        if all.no_fault + all.singles.iter().sum::<u64>() + all.multi.len() as u64 != all.accepted {
            return Err(ExrecError::Pool("record counts do not add up to the accepted count".into()));
        }
        let codes = header.code.state_stabilizers(header.state)?;
        let mut decoder = SclDecoder::new(header.code.m, 8);
        let residuals = all.multi.iter().map(|ids| reduce_residual(dictionary.residual(ids), &codes, &mut decoder)).collect();
        let single_cum = all
            .singles
            .iter()
            .scan(0u64, |acc, &c| {
                *acc += c;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            header,
            shots: all.shots,
            accepted: all.accepted,
            no_fault: all.no_fault,
            singles: all.singles,
            multi: all.multi,
            residuals,
            single_cum,
        })
    }

    /// Loads every chunk listed in a manifest.
    pub fn load(manifest_path: &Path) -> Result<Self, ExrecError> {
        let manifest = PoolManifest::load(manifest_path)?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let mut chunks = Vec::new();
        for e in &manifest.chunks {
            let (h, c) = read_chunk(&dir.join(&e.file))?;
            if h != manifest.pool {
                return Err(ExrecError::Pool(format!("{}: header differs from the manifest", e.file)));
            }
            chunks.push(c);
        }
        let protocol = manifest.pool.protocol()?;
        let dictionary = FaultDictionary::build(&protocol);
        Self::from_chunks(manifest.pool, chunks, &dictionary)
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.shots == 0 {
            0.0
        } else {
            self.accepted as f64 / self.shots as f64
        }
    }

    pub fn is_empty(&self) -> bool {
        self.accepted == 0
    }

    /// Draws one accepted preparation, uniformly over accepted shots.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<Frame, ExrecError> {
        if self.accepted == 0 {
            return Err(ExrecError::Pool(format!("empty pool for {:?} of {:?}", self.header.state, self.header.code)));
        }
        let mut u = rng.gen_range(0..self.accepted);
        if u < self.no_fault {
            return Ok(Frame::ZERO);
        }
        u -= self.no_fault;
        let total_single = self.single_cum.last().copied().unwrap_or(0);
        if u < total_single {
            let class = self.single_cum.partition_point(|&c| c <= u);
            return Ok(class_frame(class));
        }
        Ok(self.residuals[(u - total_single) as usize])
    }

    /// Every accepted residual, expanded (order: no-fault, singles, lists).
    pub fn all_residuals(&self) -> Vec<Frame> {
        let mut out = vec![Frame::ZERO; self.no_fault as usize];
        for (c, &k) in self.singles.iter().enumerate() {
            out.extend(std::iter::repeat(class_frame(c)).take(k as usize));
        }
        out.extend(&self.residuals);
        out
    }

    pub fn matches(&self, code: &QrmCode, state: LogicalState) -> bool {
        self.header.code == *code && self.header.state == state
    }
}

/// Pools available to an exRec run.
#[derive(Debug, Clone, Default)]
pub struct PoolSet {
    pub pools: Vec<AncillaPool>,
}

impl PoolSet {
    pub fn get(&self, code: &QrmCode, state: LogicalState) -> Result<&AncillaPool, ExrecError> {
        self.pools
            .iter()
            .find(|p| p.matches(code, state))
            .ok_or_else(|| ExrecError::Pool(format!("no pool for {state:?} of PQRM({},{},{})", code.r_x, code.r_z, code.m)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gate {
    Cnot,
    H,
    S,
    T,
}

impl std::str::FromStr for Gate {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "cnot" => Ok(Gate::Cnot),
            "h" => Ok(Gate::H),
            "s" => Ok(Gate::S),
            "t" => Ok(Gate::T),
            _ => Err(format!("unknown gate {s:?}")),
        }
    }
}

impl std::fmt::Display for Gate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Gate::Cnot => "CNOT",
            Gate::H => "H",
            Gate::S => "S",
            Gate::T => "T",
        })
    }
}

/// One extended rectangle.
///
/// Every data leg runs a Z-type then an X-type Steane block before and after
/// the gate. The T gate switches to `t_code` inside the leading X block and
/// back inside the trailing Z block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExRecSpec {
    pub gate: Gate,
    pub clifford_code: QrmCode,
    pub t_code: QrmCode,
    pub noise: NoiseModel,
    /// Also apply `p_corr` after the switch back from `t_code`.
    pub both_corrections_noisy: bool,
}

impl ExRecSpec {
    pub fn new(gate: Gate, noise: NoiseModel) -> Self {
        Self {
            gate,
            clifford_code: QrmCode::pqrm(3, 3, 7).expect("valid"),
            t_code: QrmCode::pqrm(2, 4, 7).expect("valid"),
            noise,
            both_corrections_noisy: false,
        }
    }

    /// Names of the trailing decisions that count as logical errors.
    pub fn classes(&self) -> &'static [&'static str] {
        match self.gate {
            Gate::Cnot => &["ZI", "XI", "IZ", "IX"],
            _ => &["Z", "X"],
        }
    }

    /// Ancilla types used, as `(code, state)`.
    pub fn ancilla_types(&self) -> Vec<(QrmCode, LogicalState)> {
        let mut v = vec![(self.clifford_code, LogicalState::Zero), (self.clifford_code, LogicalState::Plus)];
        if self.gate == Gate::T {
            v.push((self.t_code, LogicalState::Plus));
        }
        v
    }
}

/// Outcome of one trial.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrialOutcome {
    /// One entry per class of [`ExRecSpec::classes`].
    pub failed: Vec<bool>,
    pub observed: Vec<u32>,
    pub lec_failed: bool,
}

struct Trial<'a> {
    spec: &'a ExRecSpec,
    zero: &'a AncillaPool,
    plus: &'a AncillaPool,
    plus_t: Option<&'a AncillaPool>,
}

impl Trial<'_> {
    fn run(&self, rng: &mut impl Rng, judge: &mut CosetJudge) -> Result<TrialOutcome, ExrecError> {
        let s = self.spec;
        let c = &s.clifford_code;
        let n = c.n();
        let noise = &s.noise;
        let mut out = TrialOutcome::default();
        let lec = |data: &mut Frame, rng: &mut _, judge: &mut CosetJudge| -> Result<bool, ExrecError> {
            let a = steane_ec(data, self.zero.sample(rng)?, PauliType::Z, c.r_z, n, noise, rng, judge);
            let b = steane_ec(data, self.plus.sample(rng)?, PauliType::X, c.r_x, n, noise, rng, judge);
            Ok(a.decision == CosetDecision::Logical || b.decision == CosetDecision::Logical)
        };
        match s.gate {
            Gate::Cnot => {
                let (mut d1, mut d2) = (Frame::ZERO, Frame::ZERO);
                out.lec_failed = lec(&mut d1, rng, judge)? | lec(&mut d2, rng, judge)?;
                transversal_cnot(&mut d1, &mut d2, n, noise.p_cnot, rng);
                for d in [&mut d1, &mut d2] {
                    let z = steane_ec(d, self.zero.sample(rng)?, PauliType::Z, c.r_z, n, noise, rng, judge);
                    let x = steane_ec(d, self.plus.sample(rng)?, PauliType::X, c.r_x, n, noise, rng, judge);
                    record(z, &mut out);
                    record(x, &mut out);
                }
            }
            Gate::H | Gate::S => {
                let mut d = Frame::ZERO;
                out.lec_failed = lec(&mut d, rng, judge)?;
                if s.gate == Gate::H {
                    d = Frame { x: d.z, z: d.x };
                } else {
                    d.z ^= d.x;
                }
                depolarize(&mut d, n, noise.p_single, rng);
                let z = steane_ec(&mut d, self.zero.sample(rng)?, PauliType::Z, c.r_z, n, noise, rng, judge);
                let x = steane_ec(&mut d, self.plus.sample(rng)?, PauliType::X, c.r_x, n, noise, rng, judge);
                record(z, &mut out);
                record(x, &mut out);
            }
            Gate::T => {
                let t = &s.t_code;
                let plus_t = self.plus_t.expect("checked by run_exrec");
                let mut d = Frame::ZERO;
                let a = steane_ec(&mut d, self.zero.sample(rng)?, PauliType::Z, c.r_z, n, noise, rng, judge);
                let b = code_switch(&mut d, c, SwitchDirection::Forward, plus_t.sample(rng)?, noise, rng, judge);
                out.lec_failed = a.decision == CosetDecision::Logical || b.decision == CosetDecision::Logical;
                depolarize(&mut d, n, noise.p_corr, rng);
                d.z ^= twirl_t(d.x, rng);
                depolarize(&mut d, n, noise.p_single, rng);
                let z = code_switch(&mut d, t, SwitchDirection::Reverse, self.zero.sample(rng)?, noise, rng, judge);
                if s.both_corrections_noisy {
                    depolarize(&mut d, n, noise.p_corr, rng);
                }
                let x = steane_ec(&mut d, self.plus.sample(rng)?, PauliType::X, c.r_x, n, noise, rng, judge);
                record(z, &mut out);
                record(x, &mut out);
            }
        }
        Ok(out)
    }
}

fn record(o: EcOutcome, out: &mut TrialOutcome) {
    out.failed.push(o.decision == CosetDecision::Logical);
    out.observed.push(o.observed_weight);
}

/// Errors of one logical class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub class: String,
    pub errors: u64,
    pub rate: f64,
    pub ci: (f64, f64),
    /// Mean weight of the word its decoder saw.
    pub mean_observed_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExRecResult {
    pub spec: ExRecSpec,
    pub seed: u64,
    pub trials: u64,
    pub classes: Vec<ClassResult>,
    /// Trials with at least one logical error.
    pub failures: u64,
    pub rate: f64,
    pub ci: (f64, f64),
    /// Wrong decisions in the leading blocks (not counted as failures).
    pub lec_failures: u64,
}

impl ExRecResult {
    /// One JSON object per class plus one for the total (`class = "any"`).
    pub fn to_json_lines(&self) -> String {
        let n = &self.spec.noise;
        let line = |class: &str, errors: u64, rate: f64, ci: (f64, f64)| {
            serde_json::json!({
                "gate": self.spec.gate.to_string(),
                "p_cnot": n.p_cnot,
                "p_spam": n.p_spam,
                "p_corr": n.p_corr,
                "p_single": n.p_single,
                "class": class,
                "errors": errors,
                "trials": self.trials,
                "rate": rate,
                "ci": [ci.0, ci.1],
                "seed": self.seed,
            })
            .to_string()
        };
        let mut out: Vec<String> = self.classes.iter().map(|c| line(&c.class, c.errors, c.rate, c.ci)).collect();
        out.push(line("any", self.failures, self.rate, self.ci));
        out.join("\n") + "\n"
    }

    /// Class with the most errors.
    pub fn dominant_class(&self) -> Option<&ClassResult> {
        self.classes.iter().max_by_key(|c| c.errors)
    }

    /// Data-noise estimate from the mean weights seen by the trailing
    /// distance-15 decoders.
    pub fn estimated_rate(&self) -> f64 {
        self.classes.iter().map(|c| estimate_clifford_rate(c.mean_observed_weight, 0.0)).sum()
    }
}

/// 95% Wilson score interval.
pub fn wilson_interval(errors: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let (k, n, z) = (errors as f64, trials as f64, 1.959_963_984_540_054);
    let p = k / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Logical error estimate from the mean number of flips seen by two
/// distance-15 decoders, using the leading `p^8` data-noise term.
pub fn estimate_clifford_rate(mean_wz: f64, mean_wx: f64) -> f64 {
    let c = crate::rm_codes::logical_lower_bound_coefficient(3, 7).expect("valid").to_string().parse::<f64>().expect("fits");
    c * ((mean_wz / 127.0).powi(8) + (mean_wx / 127.0).powi(8))
}

/// Trials per parallel task; task `i` draws from `batch_rng(seed, i)`.
const TRIAL_TASK: u64 = 4096;

/// Monte Carlo estimate of the exRec failure rates.
pub fn run_exrec(spec: &ExRecSpec, pools: &PoolSet, trials: u64, seed: u64) -> Result<ExRecResult, ExrecError> {
    spec.noise.validate().map_err(|e| ExrecError::Mismatch(e.to_string()))?;
    let zero = pools.get(&spec.clifford_code, LogicalState::Zero)?;
    let plus = pools.get(&spec.clifford_code, LogicalState::Plus)?;
    let plus_t = if spec.gate == Gate::T { Some(pools.get(&spec.t_code, LogicalState::Plus)?) } else { None };
    for p in [Some(zero), Some(plus), plus_t].into_iter().flatten() {
        let (a, b) = (&p.header.noise, &spec.noise);
        if a.p_cnot != b.p_cnot || a.p_spam != b.p_spam {
            return Err(ExrecError::Mismatch(format!(
                "pool for {:?} was made at p_cnot={} p_spam={}, exRec uses p_cnot={} p_spam={}",
                p.header.state, a.p_cnot, a.p_spam, b.p_cnot, b.p_spam
            )));
        }
        if p.is_empty() {
            return Err(ExrecError::Pool(format!("empty pool for {:?}", p.header.state)));
        }
    }
    let trial = Trial { spec, zero, plus, plus_t };
    let k = spec.classes().len();
    let m = spec.clifford_code.m;
    let tasks: Vec<u64> = (0..trials.div_ceil(TRIAL_TASK)).collect();
    let parts: Vec<(Vec<u64>, Vec<u64>, u64, u64)> = tasks
        .into_par_iter()
        .map(|t| {
            let mut rng = batch_rng(seed, t);
            let mut judge = CosetJudge::new(m, 8);
            let (mut errs, mut weights, mut any, mut lec) = (vec![0u64; k], vec![0u64; k], 0u64, 0u64);
            let count = TRIAL_TASK.min(trials - t * TRIAL_TASK);
            for _ in 0..count {
                let o = trial.run(&mut rng, &mut judge)?;
                for i in 0..k {
                    errs[i] += u64::from(o.failed[i]);
                    weights[i] += u64::from(o.observed[i]);
                }
                any += u64::from(o.failed.iter().any(|&f| f));
                lec += u64::from(o.lec_failed);
            }
            Ok((errs, weights, any, lec))
        })
        .collect::<Result<_, ExrecError>>()?;
    let (mut errs, mut weights, mut any, mut lec) = (vec![0u64; k], vec![0u64; k], 0u64, 0u64);
    for (e, w, a, l) in parts {
        for i in 0..k {
            errs[i] += e[i];
            weights[i] += w[i];
        }
        any += a;
        lec += l;
    }
    let per = |e: u64| if trials == 0 { 0.0 } else { e as f64 / trials as f64 };
    let classes = spec
        .classes()
        .iter()
        .enumerate()
        .map(|(i, name)| ClassResult {
            class: name.to_string(),
            errors: errs[i],
            rate: per(errs[i]),
            ci: wilson_interval(errs[i], trials),
            mean_observed_weight: per(weights[i]),
        })
        .collect();
    Ok(ExRecResult { spec: *spec, seed, trials, classes, failures: any, rate: per(any), ci: wilson_interval(any, trials), lec_failures: lec })
}

/// Frame entering the logical gate after the two leading blocks, starting
/// from `input`.
pub fn lec_residual(
    code: &QrmCode,
    pools: &PoolSet,
    input: Frame,
    noise: &NoiseModel,
    rng: &mut impl Rng,
    judge: &mut CosetJudge,
) -> Result<(Frame, bool), ExrecError> {
    let n = code.n();
    let mut d = input;
    let a = steane_ec(&mut d, pools.get(code, LogicalState::Zero)?.sample(rng)?, PauliType::Z, code.r_z, n, noise, rng, judge);
    let b = steane_ec(&mut d, pools.get(code, LogicalState::Plus)?.sample(rng)?, PauliType::X, code.r_x, n, noise, rng, judge);
    Ok((d, a.decision == CosetDecision::Logical || b.decision == CosetDecision::Logical))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn d15() -> QrmCode {
        QrmCode::pqrm(3, 3, 7).unwrap()
    }

    fn d7() -> QrmCode {
        QrmCode::pqrm(2, 4, 7).unwrap()
    }

    fn ones() -> u128 {
        crate::rm_codes::full_mask(7) & !1
    }

    /// Labels of the affine subspace spanned by the first `dim` unit vectors.
    fn cube(dim: usize) -> u128 {
        ((1u128 << (1 << dim)) - 1) & !1
    }

    #[test]
    fn twirl_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(twirl_t(0, &mut rng), 0);
        for _ in 0..100 {
            let z = twirl_t(1 << 9, &mut rng);
            assert!(z == 0 || z == 1 << 9);
        }
        let trials = 100_000;
        let mut counts = [0u32; 128];
        for _ in 0..trials {
            let z = twirl_t(ones(), &mut rng);
            for (b, c) in counts.iter_mut().enumerate() {
                *c += (z >> b & 1) as u32;
            }
        }
        let sigma = (trials as f64 * 0.25).sqrt();
        for &c in &counts[1..] {
            assert!((c as f64 - trials as f64 / 2.0).abs() < 4.0 * sigma);
        }
        assert_eq!(counts[0], 0);
    }

    #[test]
    fn zero_noise_ec_is_trivial() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut judge = CosetJudge::new(7, 8);
        let quiet = NoiseModel::noiseless();
        for kind in [PauliType::X, PauliType::Z] {
            let mut d = Frame::ZERO;
            let o = steane_ec(&mut d, Frame::ZERO, kind, 3, 127, &quiet, &mut rng, &mut judge);
            assert_eq!(o.decision, CosetDecision::Trivial);
            assert_eq!(d, Frame::ZERO);
        }
        for dir in [SwitchDirection::Forward, SwitchDirection::Reverse] {
            let from = if dir == SwitchDirection::Forward { d15() } else { d7() };
            let mut d = Frame::ZERO;
            let o = code_switch(&mut d, &from, dir, Frame::ZERO, &quiet, &mut rng, &mut judge);
            assert_eq!((o.decision, d), (CosetDecision::Trivial, Frame::ZERO));
        }
    }

    #[test]
    fn logical_inputs_are_decided_logical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut judge = CosetJudge::new(7, 8);
        let quiet = NoiseModel::noiseless();
        let mut d = Frame { x: ones(), z: 0 };
        let o = steane_ec(&mut d, Frame::ZERO, PauliType::X, 3, 127, &quiet, &mut rng, &mut judge);
        assert_eq!(o.decision, CosetDecision::Logical);
        // Minimum-weight words of the odd cosets are indicators of subspaces.
        for (r, w) in [(3, 15), (4, 7)] {
            let word = cube(7 - r);
            assert_eq!(word.count_ones(), w);
            let code = RmCode::punctured(r, 7).unwrap();
            assert!(code.contains(&crate::decoder::codeword_vector(word, 7)).unwrap());
            let mut d = Frame { x: 0, z: word };
            let o = steane_ec(&mut d, Frame::ZERO, PauliType::Z, r, 127, &quiet, &mut rng, &mut judge);
            assert_eq!(o.decision, CosetDecision::Logical, "r={r}");
        }
    }

    #[test]
    fn weight_four_error_fails_only_the_reverse_switch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut judge = CosetJudge::new(7, 8);
        let quiet = NoiseModel::noiseless();
        let err = 0b1_1110;
        assert_eq!(err & !cube(3), 0);
        let mut d = Frame { x: 0, z: err };
        let rev = code_switch(&mut d, &d7(), SwitchDirection::Reverse, Frame::ZERO, &quiet, &mut rng, &mut judge);
        assert_eq!(rev.decision, CosetDecision::Logical);
        let mut d = Frame { x: err, z: 0 };
        let fwd = code_switch(&mut d, &d15(), SwitchDirection::Forward, Frame::ZERO, &quiet, &mut rng, &mut judge);
        assert_eq!(fwd.decision, CosetDecision::Trivial);
        assert_eq!(d, Frame::ZERO);
    }

    #[test]
    fn ec_moves_ancilla_noise_onto_the_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut judge = CosetJudge::new(7, 8);
        let quiet = NoiseModel::noiseless();
        let anc = Frame { x: 1 << 3, z: 1 << 5 };
        let mut d = Frame { x: 1 << 7, z: 0 };
        steane_ec(&mut d, anc, PauliType::X, 3, 127, &quiet, &mut rng, &mut judge);
        // The data X error is removed, the ancilla's X is copied as a wrong
        // correction and its Z travels back through the CNOT.
        assert_eq!(d, Frame { x: 1 << 3, z: 1 << 5 });
    }

    #[test]
    fn noise_helpers_hit_valid_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (mut c, mut t) = (Frame::ZERO, Frame::ZERO);
        let mut f = Frame::ZERO;
        for _ in 0..200 {
            transversal_cnot(&mut c, &mut t, 127, 0.05, &mut rng);
            depolarize(&mut f, 127, 0.05, &mut rng);
            assert_eq!(measurement_flips(127, 0.05, &mut rng) & 1, 0);
        }
        for m in [c.x, c.z, t.x, t.z, f.x, f.z] {
            assert_eq!(m & 1, 0);
            assert_ne!(m, 0);
        }
        assert_eq!(measurement_flips(127, 1.0, &mut rng), ones());
        assert_eq!(measurement_flips(127, 0.0, &mut rng), 0);
    }

    #[test]
    fn single_classes_round_trip() {
        for class in 0..381 {
            assert_eq!(single_class(class_frame(class)), Some(Some(class)));
        }
        assert_eq!(single_class(Frame::ZERO), Some(None));
        assert_eq!(single_class(Frame { x: 6, z: 0 }), None);
    }

    #[test]
    fn logical_residual_reduces_to_zero() {
        let mut dec = SclDecoder::new(7, 8);
        let zero = d15().state_stabilizers(LogicalState::Zero).unwrap();
        assert_eq!(reduce_residual(Frame { x: 0, z: ones() }, &zero, &mut dec), Frame::ZERO);
        let plus = d7().state_stabilizers(LogicalState::Plus).unwrap();
        assert_eq!(reduce_residual(Frame { x: ones() ^ 0b110, z: 0 }, &plus, &mut dec), Frame { x: 0b110, z: 0 });
        // A lone X logical on |0> is not a stabilizer: it only drops to its minimum weight.
        assert_eq!(reduce_residual(Frame { x: ones(), z: 0 }, &zero, &mut dec).x.count_ones(), 15);
    }

    #[test]
    fn estimate_formula() {
        assert_eq!(estimate_clifford_rate(0.0, 0.0), 0.0);
        let e = estimate_clifford_rate(1.27, 1.27);
        assert!((e / (76003785.0 * 2e-16) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wilson_contains_the_estimate() {
        let (lo, hi) = wilson_interval(30, 100_000);
        assert!(lo < 3e-4 && 3e-4 < hi);
        assert_eq!(wilson_interval(0, 10).0, 0.0);
    }

    fn small_pools(noise: NoiseModel, target: u64) -> PoolSet {
        let code = QrmCode::pqrm(1, 2, 4).unwrap();
        let sched = PermutationSchedule::parse("E 0 1, E 2 3\nE 1 0\nE 3 2, E 1 2\nE 0 3", 4).unwrap();
        let cfg = PoolConfig { target_accepted: target, ..Default::default() };
        let pools = [LogicalState::Zero, LogicalState::Plus]
            .into_iter()
            .map(|s| ancilla_pool(PoolHeader::new(code, s, &sched, noise, 11), &cfg).unwrap().0)
            .collect();
        PoolSet { pools }
    }

    #[test]
    fn noiseless_pool_accepts_everything() {
        let set = small_pools(NoiseModel::noiseless(), 100);
        for p in &set.pools {
            assert_eq!(p.acceptance_rate(), 1.0);
            assert_eq!(p.no_fault, p.accepted);
        }
    }

    #[test]
    fn pool_files_round_trip() {
        let code = QrmCode::pqrm(1, 2, 4).unwrap();
        let sched = PermutationSchedule::parse("E 0 1, E 2 3\nE 1 0\nE 3 2, E 1 2\nE 0 3", 4).unwrap();
        let header = PoolHeader::new(code, LogicalState::Zero, &sched, NoiseModel::standard(0.01), 3);
        let dir = tempfile::tempdir().unwrap();
        let cfg = PoolConfig { target_accepted: 2000, chunk_shots: 640, out_dir: Some(dir.path().into()), ..Default::default() };
        let (pool, _) = ancilla_pool(header, &cfg).unwrap();
        assert!(pool.multi.len() > 10);
        let loaded = AncillaPool::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(loaded.all_residuals(), pool.all_residuals());
        assert_eq!((loaded.shots, loaded.accepted), (pool.shots, pool.accepted));
    }

    #[test]
    fn mismatched_or_missing_pools_are_errors() {
        let set = small_pools(NoiseModel::standard(0.01), 50);
        let mut spec = ExRecSpec::new(Gate::H, NoiseModel::standard(0.01));
        let code = QrmCode::pqrm(1, 2, 4).unwrap();
        spec.clifford_code = code;
        assert!(run_exrec(&spec, &set, 10, 0).is_ok());
        spec.noise.p_cnot = 0.02;
        assert!(matches!(run_exrec(&spec, &set, 10, 0), Err(ExrecError::Mismatch(_))));
        spec.gate = Gate::T;
        assert!(matches!(run_exrec(&spec, &set, 10, 0), Err(ExrecError::Pool(_))));
        let empty = AncillaPool { accepted: 0, ..set.pools[0].clone() };
        assert!(empty.sample(&mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
