//! Successive cancellation list decoding of Reed-Muller codes, coset
//! decisions and reduced-weight computations.
//!
//! Decoding works in label space on `u128` masks, so `m ≤ 7`. A word of
//! `RM(r, m)` splits on its top variable into `(a, a + b)` with
//! `a ∈ RM(r, m-1)` on the half where `x_m = 0` and `b ∈ RM(r-1, m-1)`. The
//! decoder recurses on `b` first and `a` second, which decodes monomials in
//! the usual successive-cancellation order and leaves the constant monomial,
//! the coset bit, for last.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::batch_rng;
use crate::gf2::F2Vector;
use crate::rm_codes::{full_mask, mask_to_punctured, mobius_u128, punctured_to_mask, RmCode};

/// Log-likelihood inputs in label order; positive favors bit 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftInput {
    pub llr: Vec<f32>,
}

impl SoftInput {
    /// Hard-decision input: bit 0 maps to +1, bit 1 to -1. For punctured
    /// codes coordinate 0 gets 0.
    pub fn from_hard(word_mask: u128, m: usize, punctured: bool) -> Self {
        let n = 1usize << m;
        let mut llr: Vec<f32> = (0..n).map(|c| if (word_mask >> c) & 1 == 1 { -1.0 } else { 1.0 }).collect();
        if punctured {
            llr[0] = 0.0;
        }
        Self { llr }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeResult {
    /// Full-length codeword of `RM(r, m)` as a label mask.
    pub codeword: u128,
    /// Monomial coefficients of the codeword (the unencoded wires).
    pub info_bits: u128,
    /// Value of the bottom wire: true for the odd coset `1 + RM̄(r, m)`.
    pub coset_one_plus: bool,
    pub path_metric: f32,
}

#[derive(Debug, Clone, Copy)]
struct Cand {
    word: u128,
    pm: f32,
    parent: u32,
}

#[derive(Debug, Default, Clone)]
struct Level {
    llr: Vec<f32>,
    pm: Vec<f32>,
    n: usize,
    out: Vec<Cand>,
    saved_b: Vec<Cand>,
}

/// Reusable SCL decoder for codes of length `2^m` with list size `L`.
#[derive(Debug, Clone)]
pub struct SclDecoder {
    m: usize,
    list: usize,
    levels: Vec<Level>,
    fork: Vec<(f32, u32, u8)>,
}

impl SclDecoder {
    pub fn new(m: usize, list: usize) -> Self {
        assert!((1..=7).contains(&m), "SCL decoder supports 1 <= m <= 7");
        assert!((1..=1 << 20).contains(&list), "list size out of range");
        let levels = (0..=m)
            .map(|k| Level {
                llr: vec![0.0; list << k],
                pm: vec![0.0; list],
                n: 0,
                out: Vec::with_capacity(2 * list),
                saved_b: Vec::with_capacity(list),
            })
            .collect();
        Self { m, list, levels, fork: Vec::with_capacity(2 * list) }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn list_size(&self) -> usize {
        self.list
    }

    /// Decodes `input` to the best path in `RM(r, m)`; with `freeze_coset`
    /// the constant monomial is frozen to zero (the shortened code).
    pub fn decode(&mut self, input: &SoftInput, r: usize, freeze_coset: bool) -> DecodeResult {
        let m = self.m;
        assert_eq!(input.llr.len(), 1 << m);
        let top = &mut self.levels[m];
        top.llr[..1 << m].copy_from_slice(&input.llr);
        top.pm[0] = 0.0;
        top.n = 1;
        self.node(m, r as i32, freeze_coset);
        let best = self.levels[m].out.iter().copied().fold(None::<Cand>, |acc, c| match acc {
            Some(a) if a.pm <= c.pm => Some(a),
            _ => Some(c),
        });
        let best = best.expect("at least one path survives");
        DecodeResult {
            codeword: best.word,
            info_bits: mobius_u128(best.word, m),
            coset_one_plus: best.word & 1 == 1,
            path_metric: best.pm,
        }
    }

    /// All surviving paths after decoding, as `(codeword, metric)`.
    pub fn decode_list(&mut self, input: &SoftInput, r: usize, freeze_coset: bool) -> Vec<(u128, f32)> {
        self.decode(input, r, freeze_coset);
        self.levels[self.m].out.iter().map(|c| (c.word, c.pm)).collect()
    }

    fn node(&mut self, k: usize, r: i32, freeze_coset: bool) {
        let size = 1usize << k;
        if r < 0 || (k == 0 && freeze_coset) {
            let lv = &mut self.levels[k];
            lv.out.clear();
            for i in 0..lv.n {
                let penalty: f32 = lv.llr[i * size..(i + 1) * size].iter().map(|&l| (-l).max(0.0)).sum();
                lv.out.push(Cand { word: 0, pm: lv.pm[i] + penalty, parent: i as u32 });
            }
            return;
        }
        if k == 0 {
            let list = self.list;
            let lv = &mut self.levels[0];
            self.fork.clear();
            for i in 0..lv.n {
                let l = lv.llr[i];
                self.fork.push((lv.pm[i] + (-l).max(0.0), i as u32, 0));
                self.fork.push((lv.pm[i] + l.max(0.0), i as u32, 1));
            }
            if self.fork.len() > list {
                // Stable on (metric, path, bit): lower path index wins ties.
                self.fork.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                self.fork.truncate(list);
            }
            lv.out.clear();
            lv.out.extend(self.fork.iter().map(|&(pm, i, bit)| Cand { word: bit as u128, pm, parent: i as u32 }));
            return;
        }
        let half = size / 2;
        // b = lo + hi: min-sum check-node update.
        {
            let (lower, upper) = self.levels.split_at_mut(k);
            let parent = &upper[0];
            let child = &mut lower[k - 1];
            for i in 0..parent.n {
                let src = &parent.llr[i * size..(i + 1) * size];
                let dst = &mut child.llr[i * half..(i + 1) * half];
                for j in 0..half {
                    let (a, b) = (src[j], src[half + j]);
                    let mag = a.abs().min(b.abs());
                    dst[j] = if (a < 0.0) != (b < 0.0) { -mag } else { mag };
                }
                child.pm[i] = parent.pm[i];
            }
            child.n = parent.n;
        }
        self.node(k - 1, r - 1, false);
        {
            let (lower, upper) = self.levels.split_at_mut(k);
            let parent = &mut upper[0];
            let child = &mut lower[k - 1];
            parent.saved_b.clear();
            parent.saved_b.extend_from_slice(&child.out);
            // a = lo + (1 - 2b) hi.
            for (jb, c) in parent.saved_b.iter().enumerate() {
                let p = c.parent as usize;
                let src = &parent.llr[p * size..(p + 1) * size];
                let dst = &mut child.llr[jb * half..(jb + 1) * half];
                for j in 0..half {
                    let hi = src[half + j];
                    dst[j] = src[j] + if (c.word >> j) & 1 == 1 { -hi } else { hi };
                }
                child.pm[jb] = c.pm;
            }
            child.n = parent.saved_b.len();
        }
        self.node(k - 1, r, freeze_coset);
        let (lower, upper) = self.levels.split_at_mut(k);
        let parent = &mut upper[0];
        let child = &lower[k - 1];
        parent.out.clear();
        let lo_mask = full_mask(k - 1);
        for a in &child.out {
            let b = parent.saved_b[a.parent as usize];
            let word = (a.word & lo_mask) | (((a.word ^ b.word) & lo_mask) << half);
            parent.out.push(Cand { word, pm: a.pm, parent: b.parent });
        }
    }
}

/// Binary decision of a Steane-type measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CosetDecision {
    Trivial,
    Logical,
}

/// Decides whether a punctured word is closer to `RM̄(r, m)` or to its odd coset.
pub fn coset_decide(word: &F2Vector, code: &RmCode, decoder: &mut SclDecoder) -> CosetDecision {
    assert!(code.punctured && word.len() == code.length());
    coset_decide_mask(punctured_to_mask(word), code.r, decoder)
}

/// [`coset_decide`] on a label mask with coordinate 0 ignored.
pub fn coset_decide_mask(mask: u128, r: usize, decoder: &mut SclDecoder) -> CosetDecision {
    let input = SoftInput::from_hard(mask, decoder.m(), true);
    if decoder.decode(&input, r, false).coset_one_plus {
        CosetDecision::Logical
    } else {
        CosetDecision::Trivial
    }
}

/// Nearest codeword of a punctured stabilizer code found by SCL, as a label mask.
pub fn nearest_stabilizer_scl(mask: u128, code: &RmCode, decoder: &mut SclDecoder) -> u128 {
    assert!(code.punctured && code.m == decoder.m());
    let input = SoftInput::from_hard(mask, code.m, true);
    decoder.decode(&input, code.r, code.shortened).codeword & !1
}

/// Reduced weight of a residual against a punctured stabilizer code, via SCL.
///
/// SCL may miss the nearest codeword, so this can only overestimate.
pub fn reduced_weight_scl(mask: u128, code: &RmCode, decoder: &mut SclDecoder) -> usize {
    let mask = mask & !1;
    (mask ^ nearest_stabilizer_scl(mask, code, decoder)).count_ones() as usize
}

/// Exact reduced weight by enumerating every codeword (small codes only).
pub fn reduced_weight_exact(mask: u128, code: &RmCode) -> usize {
    assert!(code.punctured && code.dimension() <= 20, "exact mode enumerates the full code");
    let gens: Vec<u128> = code.generator_vectors().iter().map(punctured_to_mask).collect();
    let mask = mask & !1;
    let mut best = mask.count_ones();
    // Gray-code walk over the span.
    let mut cur = 0u128;
    for i in 1u64..(1u64 << gens.len()) {
        cur ^= gens[i.trailing_zeros() as usize];
        best = best.min((mask ^ cur).count_ones());
    }
    best as usize
}

/// Reed majority-logic decoding of a full-length word of `RM(r, m)`.
///
/// Recovers the codeword whenever fewer than `2^(m-r-1)` bits are in error.
/// Returns `None` if a vote ties.
pub fn reed_decode(word: u128, r: usize, m: usize) -> Option<u128> {
    let mut rest = word & full_mask(m);
    let mut coeffs = 0u128;
    for deg in (0..=r).rev() {
        let mut layer = 0u128;
        for s in (0..1usize << m).filter(|s| s.count_ones() as usize == deg) {
            // Each check sum adds the word over one coset of the flat spanned by s.
            let others = !s & ((1usize << m) - 1);
            let mut ones = 0usize;
            let mut t = 0usize;
            loop {
                let mut sum = 0u32;
                let mut sub = s;
                loop {
                    sum ^= ((rest >> (t | sub)) & 1) as u32;
                    if sub == 0 {
                        break;
                    }
                    sub = (sub - 1) & s;
                }
                ones += sum as usize;
                if t == others {
                    break;
                }
                t = (t.wrapping_sub(others)) & others;
            }
            let total = 1usize << (m - deg);
            if 2 * ones == total {
                return None;
            }
            if 2 * ones > total {
                layer |= 1u128 << s;
            }
        }
        coeffs |= layer;
        rest ^= mobius_u128(layer, m);
    }
    Some(mobius_u128(coeffs, m))
}

/// Reduced weight against a punctured stabilizer code using Reed decoding.
///
/// The result is exact when the true reduced weight is below `2^(m-r-1)`;
/// otherwise it is some value at least `2^(m-r-1)`.
pub fn reduced_weight_bounded(mask: u128, code: &RmCode) -> usize {
    assert!(code.punctured && code.r < code.m);
    let (r, m) = (code.r, code.m);
    let floor = 1usize << (m - r - 1);
    let mask = mask & !1;
    let mut best = mask.count_ones() as usize;
    let extensions: &[u128] = if code.shortened { &[0] } else { &[0, 1] };
    for &b in extensions {
        if let Some(c) = reed_decode(mask | b, r, m) {
            if code.shortened && c & 1 == 1 {
                continue;
            }
            best = best.min((mask ^ (c & !1)).count_ones() as usize);
        }
    }
    if best < floor {
        best
    } else {
        best.max(floor)
    }
}

/// Converts a decoded label mask back to a punctured word.
pub fn codeword_vector(mask: u128, m: usize) -> F2Vector {
    mask_to_punctured(mask, m)
}

/// One point of a coset-decision benchmark under bit-flip noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub r: usize,
    pub m: usize,
    pub list: usize,
    pub p: f64,
    pub trials: u64,
    pub errors: u64,
    pub rate: f64,
    /// Binomial standard error of `rate`.
    pub stderr: f64,
    pub seed: u64,
}

/// Trials per parallel task; task `i` draws from `batch_rng(seed, i)`.
const BENCH_TASK: u64 = 8192;

/// Sends the zero word of `RM(r, m)^*` through a binary symmetric channel and
/// counts coset decisions landing on the odd coset.
pub fn bsc_coset_benchmark(r: usize, m: usize, p: f64, list: usize, trials: u64, seed: u64) -> BenchPoint {
    assert!(m <= 7 && r < m && (0.0..=1.0).contains(&p));
    let support = full_mask(m) & !1;
    let tasks: Vec<u64> = (0..trials.div_ceil(BENCH_TASK)).collect();
    let errors: u64 = tasks
        .into_par_iter()
        .map(|t| {
            let mut rng = batch_rng(seed, t);
            let mut dec = SclDecoder::new(m, list);
            let mut errs = 0u64;
            for _ in 0..BENCH_TASK.min(trials - t * BENCH_TASK) {
                let mut y = 0u128;
                for i in 1..1usize << m {
                    if rng.gen_bool(p) {
                        y |= 1 << i;
                    }
                }
                errs += u64::from(coset_decide_mask(y & support, r, &mut dec) == CosetDecision::Logical);
            }
            errs
        })
        .sum();
    let rate = if trials == 0 { 0.0 } else { errors as f64 / trials as f64 };
    let stderr = if trials == 0 { 0.0 } else { (rate * (1.0 - rate) / trials as f64).sqrt() };
    BenchPoint { r, m, list, p, trials, errors, rate, stderr, seed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn codewords(code: &RmCode) -> Vec<u128> {
        let gens: Vec<u128> = code.generator_vectors().iter().map(|g| if code.punctured { punctured_to_mask(g) } else { g.to_u128() }).collect();
        let mut out = vec![0u128];
        for g in gens {
            let add: Vec<u128> = out.iter().map(|w| w ^ g).collect();
            out.extend(add);
        }
        out
    }

    fn bsc(rng: &mut ChaCha8Rng, n: usize, p: f64) -> u128 {
        (0..n).filter(|_| rng.gen_bool(p)).fold(0u128, |a, i| a | 1u128 << i)
    }

    #[test]
    fn benchmark_is_seeded_and_noiseless_runs_are_clean() {
        assert_eq!(bsc_coset_benchmark(2, 5, 0.0, 4, 1000, 3).errors, 0);
        let a = bsc_coset_benchmark(1, 5, 0.08, 4, 20_000, 9);
        let b = bsc_coset_benchmark(1, 5, 0.08, 4, 20_000, 9);
        assert_eq!(a, b);
        assert!(a.errors > 0 && a.rate < 0.5);
    }

    #[test]
    fn noiseless_codewords_decode_to_themselves() {
        let code = RmCode::punctured(1, 3).unwrap();
        let mut dec = SclDecoder::new(3, 1);
        for w in codewords(&code) {
            let res = dec.decode(&SoftInput::from_hard(w, 3, true), 1, false);
            assert_eq!(res.codeword & !1, w);
            assert_eq!(res.info_bits, mobius_u128(res.codeword, 3));
            assert_eq!(res.path_metric, 0.0);
        }
    }

    #[test]
    fn full_list_is_maximum_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in 2..=4 {
            for r in 0..m {
                for punctured in [false, true] {
                    let code = if punctured { RmCode::punctured(r, m) } else { RmCode::new(r, m) }.unwrap();
                    let words = codewords(&RmCode::new(r, m).unwrap());
                    let mut dec = SclDecoder::new(m, 1 << code.dimension());
                    for _ in 0..300 {
                        let y = bsc(&mut rng, 1 << m, 0.05) & if punctured { !1 } else { u128::MAX };
                        let input = SoftInput::from_hard(y, m, punctured);
                        let res = dec.decode(&input, r, false);
                        let dist = |c: u128| ((c ^ y) & full_mask(m) & if punctured { !1 } else { u128::MAX }).count_ones() as f32;
                        let best = words.iter().map(|&c| dist(c)).fold(f32::MAX, f32::min);
                        assert_eq!(res.path_metric, best, "r={r} m={m}");
                        assert_eq!(dist(res.codeword), best);
                    }
                }
            }
        }
    }

    #[test]
    fn coset_decisions() {
        let code = RmCode::punctured(4, 7).unwrap();
        let mut dec = SclDecoder::new(7, 8);
        assert_eq!(coset_decide(&F2Vector::zeros(127), &code, &mut dec), CosetDecision::Trivial);
        assert_eq!(coset_decide(&F2Vector::ones(127), &code, &mut dec), CosetDecision::Logical);
        // Labels 1..7 form a weight-7 word of the odd coset; four of them are closer to it than to zero.
        let e = mask_to_punctured(0b11110, 7);
        assert_eq!(coset_decide(&e, &code, &mut dec), CosetDecision::Logical);
        let code15 = RmCode::punctured(3, 7).unwrap();
        assert_eq!(coset_decide(&e, &code15, &mut dec), CosetDecision::Trivial);
    }

    #[test]
    fn reduced_weight_examples() {
        let code = RmCode::punctured(3, 7).unwrap();
        let mut dec = SclDecoder::new(7, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gens: Vec<u128> = code.generator_vectors().iter().map(punctured_to_mask).collect();
        for _ in 0..50 {
            let c = gens.iter().filter(|_| rng.gen_bool(0.5)).fold(0u128, |a, g| a ^ g);
            assert_eq!(reduced_weight_scl(c, &code, &mut dec), 0);
            assert_eq!(reduced_weight_bounded(c, &code), 0);
            let bit = 1u128 << rng.gen_range(1..128);
            assert_eq!(reduced_weight_scl(c ^ bit, &code, &mut dec), 1);
            assert_eq!(reduced_weight_bounded(c ^ bit, &code), 1);
        }
    }

    #[test]
    fn reed_decoder_corrects_below_half_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (r, m) in [(1usize, 4usize), (2, 5), (3, 7), (2, 7), (4, 7)] {
            let full = RmCode::new(r, m).unwrap();
            let gens: Vec<u128> = full.generator_vectors().iter().map(|g| g.to_u128()).collect();
            let t = (1usize << (m - r - 1)) - 1;
            for _ in 0..100 {
                let c = gens.iter().filter(|_| rng.gen_bool(0.5)).fold(0u128, |a, g| a ^ g);
                let mut e = 0u128;
                while (e.count_ones() as usize) < rng.gen_range(0..=t) {
                    e |= 1u128 << rng.gen_range(0..1usize << m);
                }
                assert_eq!(reed_decode(c ^ e, r, m), Some(c), "r={r} m={m}");
            }
        }
    }

    #[test]
    fn scl_matches_exact_reduced_weight_at_m4() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for code in [RmCode::punctured(1, 4).unwrap(), RmCode::shortened(2, 4).unwrap(), RmCode::shortened(1, 4).unwrap()] {
            let mut dec = SclDecoder::new(4, 32);
            for _ in 0..1000 {
                let w = rng.gen_range(0..=6);
                let mut e = 0u128;
                while (e.count_ones() as usize) < w {
                    e |= 1u128 << rng.gen_range(1..16);
                }
                assert_eq!(reduced_weight_scl(e, &code, &mut dec), reduced_weight_exact(e, &code), "{code:?} e={e:b}");
            }
        }
    }

    #[test]
    fn bounded_matches_exact_at_m4() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for code in [RmCode::punctured(1, 4).unwrap(), RmCode::shortened(1, 4).unwrap(), RmCode::punctured(0, 4).unwrap()] {
            let floor = 1usize << (code.m - code.r - 1);
            for _ in 0..1000 {
                let e = rng.gen::<u128>() & 0xfffe;
                let exact = reduced_weight_exact(e, &code);
                let got = reduced_weight_bounded(e, &code);
                if exact < floor {
                    assert_eq!(got, exact);
                } else {
                    assert!(got >= floor);
                }
            }
        }
    }
}
