//! Physical simulation of high-rate logical gates, compared with the
//! symbolic actions used by the synthesizer.

use qrm::highrate::{
    random_symplectic, synthesize, Block, CnotDir, HrGate, MonomialBasis, Program,
};
use qrm::F2Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pauli frame on the data and ancilla blocks, one bit per qubit.
#[derive(Clone, Copy, Default)]
struct Pauli {
    xd: u64,
    xa: u64,
    zd: u64,
    za: u64,
}

/// Qubits where the monomial is one; qubit `y` has `x_{i+1} = bit i of y`.
fn support(m: u32, vars: usize) -> u64 {
    (0..1u64 << vars).filter(|&y| y as u32 & m == m).fold(0, |acc, y| acc | 1 << y)
}

fn apply_linear(a: &F2Matrix, y: usize) -> usize {
    (0..a.rows()).filter(|&i| (0..a.cols()).filter(|&j| a.get(i, j) && y >> j & 1 == 1).count() % 2 == 1).fold(0, |acc, i| acc | 1 << i)
}

fn move_qubits(mask: u64, map: &[usize]) -> u64 {
    (0..map.len()).filter(|&y| mask >> y & 1 == 1).fold(0, |acc, y| acc | 1 << map[y])
}

fn tau(y: usize) -> usize {
    ((y & 0x5555) << 1) | ((y >> 1) & 0x5555)
}

fn run(p: &mut Pauli, g: &HrGate, vars: usize) {
    let n = 1usize << vars;
    match g {
        HrGate::Perm { block, a } => {
            // The qubit at y moves to A^{-1} y.
            let inv = a.invert().unwrap();
            let map: Vec<usize> = (0..n).map(|y| apply_linear(&inv, y)).collect();
            let (x, z) = match block {
                Block::Data => (&mut p.xd, &mut p.zd),
                Block::Ancilla => (&mut p.xa, &mut p.za),
            };
            *x = move_qubits(*x, &map);
            *z = move_qubits(*z, &map);
        }
        HrGate::TCnot(CnotDir::DataToAncilla) => {
            p.xa ^= p.xd;
            p.zd ^= p.za;
        }
        HrGate::TCnot(CnotDir::AncillaToData) => {
            p.xd ^= p.xa;
            p.za ^= p.zd;
        }
        HrGate::FoldCz => {
            let map: Vec<usize> = (0..n).map(tau).collect();
            p.zd ^= move_qubits(p.xd, &map);
        }
        HrGate::TH => std::mem::swap(&mut p.xd, &mut p.zd),
        HrGate::TS => p.zd ^= p.xd,
    }
}

/// Logical coordinates `(X_d, X_a | Z_d, Z_a)` of a Pauli frame.
fn coordinates(p: &Pauli, b: &MonomialBasis) -> Vec<bool> {
    let (k, vars) = (b.k(), b.vars());
    let odd = |a: u64, c: u64| (a & c).count_ones() % 2 == 1;
    let x_of = |x: u64| (0..k).map(move |j| odd(x, support(b.monomial(b.partner(j)), vars)));
    let z_of = |z: u64| (0..k).map(move |j| odd(z, support(b.monomial(j), vars)));
    x_of(p.xd).chain(x_of(p.xa)).chain(z_of(p.zd)).chain(z_of(p.za)).collect()
}

fn physical_action(prog: &Program, b: &MonomialBasis) -> F2Matrix {
    let (k, vars) = (b.k(), b.vars());
    let rows: Vec<Vec<bool>> = (0..4 * k)
        .map(|i| {
            let mut p = Pauli::default();
            let (kind, j) = (i / k, i % k);
            match kind {
                0 => p.xd = support(b.monomial(j), vars),
                1 => p.xa = support(b.monomial(j), vars),
                2 => p.zd = support(b.monomial(b.partner(j)), vars),
                _ => p.za = support(b.monomial(b.partner(j)), vars),
            }
            for g in &prog.gates {
                run(&mut p, g, vars);
            }
            coordinates(&p, b)
        })
        .collect();
    F2Matrix::from_fn(4 * k, 4 * k, |i, j| rows[i][j])
}

fn random_invertible(v: usize, rng: &mut ChaCha8Rng) -> F2Matrix {
    loop {
        let bits: Vec<bool> = (0..v * v).map(|_| rng.gen()).collect();
        let a = F2Matrix::from_fn(v, v, |i, j| bits[i * v + j]);
        if a.determinant() {
            return a;
        }
    }
}

fn random_program(len: usize, v: usize, rng: &mut ChaCha8Rng) -> Program {
    let gates = (0..len)
        .map(|_| match rng.gen_range(0..7) {
            0 => HrGate::Perm { block: Block::Data, a: random_invertible(v, rng) },
            1 => HrGate::Perm { block: Block::Ancilla, a: random_invertible(v, rng) },
            2 => HrGate::TCnot(CnotDir::DataToAncilla),
            3 => HrGate::TCnot(CnotDir::AncillaToData),
            4 => HrGate::FoldCz,
            5 => HrGate::TH,
            _ => HrGate::TS,
        })
        .collect();
    Program { gates }
}

#[test]
fn logical_basis_pairs_anticommute() {
    for r in 1..=3 {
        let b = MonomialBasis::new(r).unwrap();
        let vars = b.vars();
        for i in 0..b.k() {
            for j in 0..b.k() {
                let overlap = support(b.monomial(i), vars) & support(b.monomial(b.partner(j)), vars);
                assert_eq!(overlap.count_ones() == 1, i == j, "r={r} ({i},{j})");
                assert_eq!(overlap.count_ones() % 2 == 1, i == j);
            }
        }
    }
}

#[test]
fn single_gates_match_physics() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for r in [1usize, 2, 3] {
        let b = MonomialBasis::new(r).unwrap();
        for _ in 0..40 {
            let p = random_program(1, b.vars(), &mut rng);
            assert_eq!(p.action(&b), physical_action(&p, &b), "{p}");
        }
        let p = random_program(60, b.vars(), &mut rng);
        assert_eq!(p.action(&b), physical_action(&p, &b));
    }
}

#[test]
fn translations_act_trivially() {
    for r in [2usize, 3] {
        let b = MonomialBasis::new(r).unwrap();
        let (k, vars) = (b.k(), b.vars());
        for shift in 0..1usize << vars {
            let map: Vec<usize> = (0..1usize << vars).map(|y| y ^ shift).collect();
            for i in 0..k {
                let x = move_qubits(support(b.monomial(i), vars), &map);
                let z = move_qubits(support(b.monomial(b.partner(i)), vars), &map);
                let cx = coordinates(&Pauli { xd: x, ..Pauli::default() }, &b);
                let cz = coordinates(&Pauli { zd: z, ..Pauli::default() }, &b);
                assert!((0..4 * k).all(|j| cx[j] == (j == i)), "shift {shift}, X{i}");
                assert!((0..4 * k).all(|j| cz[j] == (j == 2 * k + i)), "shift {shift}, Z{i}");
            }
        }
    }
}

#[test]
fn synthesized_programs_run_physically() {
    let b = MonomialBasis::new(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..3 {
        let t = random_symplectic(6, &mut rng);
        let prog = synthesize(&t, &b).unwrap();
        let full = physical_action(&prog, &b);
        let k = 6;
        let data = |i: usize| if i < k { i } else { i + k };
        let restricted = F2Matrix::from_fn(2 * k, 2 * k, |i, j| full.get(data(i), data(j)));
        assert_eq!(restricted, t);
        assert_eq!(full, prog.action(&b));
    }
}
