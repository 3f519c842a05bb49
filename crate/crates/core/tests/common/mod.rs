//! Brute-force fault enumeration shared by the integration tests.

use qrm::circuit::{propagate_fault, FaultEvent, FaultSite, Layer};
use qrm::decoder::reduced_weight_exact;
use qrm::ft_prep::{check_strict_ft, PauliType, PermutationSchedule, Protocol};

struct Effect {
    syndromes: Vec<u128>,
    out_x: u128,
    out_z: u128,
}

fn raw_effects(p: &Protocol) -> Vec<Effect> {
    let perm_layer = p.circuit.layers.iter().position(|l| matches!(l, Layer::Perm(_))).unwrap();
    let mut out = Vec::new();
    for site in p.circuit.fault_sites() {
        if site.layer() >= perm_layer || matches!(site, FaultSite::Measure { .. } | FaultSite::Depolarize { .. }) {
            continue;
        }
        for code in 1..=site.n_patterns() {
            let r = propagate_fault(&p.circuit, &FaultEvent::from_site(&site, code));
            let syndromes = p.blocks.iter().map(|b| p.detector(b.ty).syndrome(p.block_mask(&r.meas, b))).collect();
            out.push(Effect { syndromes, out_x: p.patch_mask(&r.x, 0), out_z: p.patch_mask(&r.z, 0) });
        }
    }
    out
}

/// Smallest order at which some accepted combination leaves a reduced weight
/// above the order (or order - 1 with suppression), per type.
pub fn naive_first_failure(p: &Protocol, max_order: usize, suppression: bool) -> [Option<usize>; 2] {
    let effects = raw_effects(p);
    let codes = [p.detector(PauliType::X).stabilizer_code(), p.detector(PauliType::Z).stabilizer_code()];
    let thr = |k: usize| if suppression { k - 1 } else { k };
    let mut first = [None, None];
    let mut judge = |k: usize, syn: &[u128], x: u128, z: u128| {
        if syn.iter().any(|&s| s != 0) {
            return;
        }
        for (t, mask) in [x, z].into_iter().enumerate() {
            if first[t].map_or(true, |f| f > k) && reduced_weight_exact(mask, &codes[t]) > thr(k) {
                first[t] = Some(k);
            }
        }
    };
    for e in &effects {
        judge(1, &e.syndromes, e.out_x, e.out_z);
    }
    if max_order >= 2 {
        for i in 0..effects.len() {
            for j in i + 1..effects.len() {
                let (a, b) = (&effects[i], &effects[j]);
                let syn: Vec<u128> = a.syndromes.iter().zip(&b.syndromes).map(|(x, y)| x ^ y).collect();
                judge(2, &syn, a.out_x ^ b.out_x, a.out_z ^ b.out_z);
            }
        }
    }
    first
}

pub fn mitm_first_failure(p: &Protocol, max_order: usize, suppression: bool) -> [Option<usize>; 2] {
    [PauliType::X, PauliType::Z].map(|ty| {
        let v = check_strict_ft(p, ty, max_order, suppression).unwrap();
        v.orders.iter().find(|o| o.count > 0).map(|o| o.order)
    })
}

/// Schedules for `PQRM(1,2,4)` covering both strict-FT outcomes.
pub fn m4_schedules() -> Vec<PermutationSchedule> {
    [
        "",
        "E 0 1, E 2 3\nE 1 0\nE 3 2, E 1 2\nE 0 3",
        "E 0 1\nE 1 2, E 3 0\nE 2 3\nE 3 1, E 0 2",
        "E 1 3, E 0 2\nE 2 0, E 3 1\nE 0 3, E 1 0\nE 3 2, E 2 1",
    ]
    .iter()
    .map(|t| if t.is_empty() { PermutationSchedule::identity(4) } else { PermutationSchedule::parse(t, 4).unwrap() })
    .collect()
}
