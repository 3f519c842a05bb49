//! Recursive 2D placement of hypercube labels and atom-movement programs.
//!
//! Cells are addressed as `(row, col)` with `(0, 0)` at the top left. Moves
//! are pure translations of rectangular blocks of cells, expressed in cell
//! units; physical spacing and timing are left to the consumer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::init_basis;
use crate::circuit::Basis;
use crate::ft_prep::{PermutationSchedule, Swap};
use crate::rm_codes::{LogicalState, QrmCode};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("invalid swap E {i} {j} for m = {m}")]
    InvalidSwap { i: usize, j: usize, m: usize },
    #[error("encoding step {t} out of range 1..={m}")]
    InvalidStep { t: usize, m: usize },
    #[error("m = {0} is outside the supported range 0..=16")]
    InvalidDimension(usize),
    #[error("schedule is for m = {schedule}, code has m = {code}")]
    DimensionMismatch { schedule: usize, code: usize },
    #[error("step {step}: {msg}")]
    Replay { step: usize, msg: String },
}

/// Placement of the `2^m` labels on a `rows × cols` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    pub m: usize,
    pub rows: usize,
    pub cols: usize,
    /// `cells[label] = (row, col)`.
    pub cells: Vec<(usize, usize)>,
}

impl Grid {
    pub fn position(&self, label: usize) -> (usize, usize) {
        self.cells[label]
    }

    /// `labels[row][col]`.
    pub fn labels(&self) -> Vec<Vec<usize>> {
        let mut out = vec![vec![0; self.cols]; self.rows];
        for (label, &(r, c)) in self.cells.iter().enumerate() {
            out[r][c] = label;
        }
        out
    }

    /// Translation taking `label` onto the cell of `label ^ (1 << bit)`.
    fn flip_offset(&self, label: usize, bit: usize) -> (isize, isize) {
        let (r0, c0) = self.cells[label];
        let (r1, c1) = self.cells[label ^ 1 << bit];
        (r1 as isize - r0 as isize, c1 as isize - c0 as isize)
    }
}

/// Builds the layout by doubling: odd steps copy the grid to the left with
/// the new bit set, even steps copy it above.
pub fn layout2d(m: usize) -> Result<Grid, LayoutError> {
    if m > 16 {
        return Err(LayoutError::InvalidDimension(m));
    }
    let mut grid = Grid { m: 0, rows: 1, cols: 1, cells: vec![(0, 0)] };
    for t in 1..=m {
        let bit = 1usize << (t - 1);
        let mut cells = grid.cells.clone();
        if t % 2 == 1 {
            for c in cells.iter_mut() {
                c.1 += grid.cols;
            }
            cells.extend(grid.cells.iter().copied());
            grid.cols *= 2;
        } else {
            for c in cells.iter_mut() {
                c.0 += grid.rows;
            }
            cells.extend(grid.cells.iter().copied());
            grid.rows *= 2;
        }
        debug_assert_eq!(cells.len(), 2 * bit);
        grid.cells = cells;
        grid.m = t;
    }
    Ok(grid)
}

/// A rectangle of cells (inclusive bounds) and its translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub r0: usize,
    pub c0: usize,
    pub r1: usize,
    pub c1: usize,
    pub dr: isize,
    pub dc: isize,
}

impl Region {
    pub fn area(&self) -> usize {
        (self.r1 - self.r0 + 1) * (self.c1 - self.c0 + 1)
    }

    pub fn contains(&self, (r, c): (usize, usize)) -> bool {
        (self.r0..=self.r1).contains(&r) && (self.c0..=self.c1).contains(&c)
    }
}

/// Translations applied simultaneously.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveSet {
    pub regions: Vec<Region>,
    /// Atoms that move with their block but take part in no gate.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub idle: Vec<usize>,
}

impl MoveSet {
    /// Number of distinct translations, i.e. deflector passes if each pass
    /// moves one rectangular grid by one vector.
    pub fn passes(&self) -> usize {
        let mut v: Vec<(isize, isize)> = self.regions.iter().map(|r| (r.dr, r.dc)).collect();
        v.sort_unstable();
        v.dedup();
        v.len()
    }
}

fn runs(mut xs: Vec<usize>) -> Vec<(usize, usize)> {
    xs.sort_unstable();
    xs.dedup();
    let mut out: Vec<(usize, usize)> = Vec::new();
    for x in xs {
        match out.last_mut() {
            Some((_, end)) if *end + 1 == x => *end = x,
            _ => out.push((x, x)),
        }
    }
    out
}

/// Splits the cells of `labels` into maximal contiguous rectangles, all
/// translated by `offset`.
///
/// The labels must form a row set times column set; anything else is a
/// layout bug and panics.
fn rectangles(grid: &Grid, labels: &[usize], offset: (isize, isize)) -> Vec<Region> {
    if labels.is_empty() {
        return Vec::new();
    }
    let row_runs = runs(labels.iter().map(|&l| grid.cells[l].0).collect());
    let col_runs = runs(labels.iter().map(|&l| grid.cells[l].1).collect());
    let rows: usize = row_runs.iter().map(|(a, b)| b - a + 1).sum();
    let cols: usize = col_runs.iter().map(|(a, b)| b - a + 1).sum();
    assert_eq!(rows * cols, labels.len(), "moved set is not a product of rows and columns");
    let mut out = Vec::new();
    for &(r0, r1) in &row_runs {
        for &(c0, c1) in &col_runs {
            out.push(Region { r0, c0, r1, c1, dr: offset.0, dc: offset.1 });
        }
    }
    out
}

/// Checks that every region is exactly filled by `labels` and that the
/// regions cover them once.
pub fn rectangles_exact(grid: &Grid, labels: &[usize], regions: &[Region]) -> bool {
    let cells: std::collections::HashSet<(usize, usize)> = labels.iter().map(|&l| grid.cells[l]).collect();
    let covered: usize = regions.iter().map(Region::area).sum();
    covered == cells.len()
        && regions.iter().all(|reg| {
            (reg.r0..=reg.r1).all(|r| (reg.c0..=reg.c1).all(|c| cells.contains(&(r, c))))
        })
}

/// Moves for encoding step `t`: every atom with bit `t` set travels onto
/// the cell of its partner with the bit clear.
///
/// In punctured mode the partner of label 0 is absent, so the atom with
/// label `2^{t-1}` moves with its block but idles.
pub fn encoding_moves(grid: &Grid, t: usize, punctured: bool) -> Result<MoveSet, LayoutError> {
    let m = grid.m;
    if t == 0 || t > m {
        return Err(LayoutError::InvalidStep { t, m });
    }
    let bit = t - 1;
    let moved: Vec<usize> = (0..1usize << m).filter(|l| l >> bit & 1 == 1).collect();
    let offset = grid.flip_offset(moved[0], bit);
    debug_assert!(moved.iter().all(|&l| grid.flip_offset(l, bit) == offset));
    let idle = if punctured { vec![1 << bit] } else { Vec::new() };
    Ok(MoveSet { regions: rectangles(grid, &moved, offset), idle })
}

/// Label bit touched by vector index `k` of an `m`-dimensional swap token.
fn label_bit(m: usize, k: usize) -> usize {
    m - 1 - k
}

/// The two translation sets of the sub-hypercube swap `E_{i,j}`: among
/// labels with bit `j` set, those with bit `i` clear trade places with
/// those with bit `i` set. Labels with bit `j` clear stay put.
pub fn swap_moves(swap: Swap, m: usize) -> Result<(MoveSet, MoveSet), LayoutError> {
    let grid = layout2d(m)?;
    swap_moves_on(&grid, swap)
}

fn swap_sets(m: usize, swap: Swap) -> (Vec<usize>, Vec<usize>) {
    let (bi, bj) = (label_bit(m, swap.i), label_bit(m, swap.j));
    let with_j = (0..1usize << m).filter(|l| l >> bj & 1 == 1);
    with_j.partition(|l| l >> bi & 1 == 0)
}

pub fn swap_moves_on(grid: &Grid, swap: Swap) -> Result<(MoveSet, MoveSet), LayoutError> {
    let m = grid.m;
    if swap.i >= m || swap.j >= m || swap.i == swap.j {
        return Err(LayoutError::InvalidSwap { i: swap.i, j: swap.j, m });
    }
    let bi = label_bit(m, swap.i);
    let (clear, set) = swap_sets(m, swap);
    let to_set = grid.flip_offset(clear[0], bi);
    let forward = MoveSet { regions: rectangles(grid, &clear, to_set), idle: Vec::new() };
    let back = MoveSet { regions: rectangles(grid, &set, (-to_set.0, -to_set.1)), idle: Vec::new() };
    Ok((forward, back))
}

/// What a step of a move program does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Init,
    Encode,
    Return,
    Swap,
}

/// One line of a move program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveStep {
    pub step: usize,
    pub patch: usize,
    pub kind: StepKind,
    /// `t=<bit>` for encoding steps, `E i j` for swaps.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub op: String,
    pub regions: Vec<Region>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub idle: Vec<usize>,
    /// Labels initialized in `|+⟩`; the rest start in `|0⟩`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub plus: Vec<usize>,
}

/// Move program for preparing `state` of `code` on every patch of the
/// schedule: initialization, the encoding steps with their return moves,
/// then the patch's swaps.
///
/// A swap moves fixed grid positions, so running `E_1, …, E_k` in that
/// order sends the atom at `x` to `E_k ⋯ E_1 x`. The preparation protocol
/// needs `A x` with `A = E_1 ⋯ E_k`, hence the swaps run last to first.
pub fn choreography(schedule: &PermutationSchedule, code: &QrmCode, state: LogicalState) -> Result<Vec<MoveStep>, LayoutError> {
    if schedule.m != code.m {
        return Err(LayoutError::DimensionMismatch { schedule: schedule.m, code: code.m });
    }
    let grid = layout2d(code.m)?;
    let n_labels = 1usize << code.m;
    let mut out = Vec::new();
    for (patch, swaps) in schedule.columns.iter().enumerate() {
        let mut step = 0;
        let mut push = |kind, op: String, moves: MoveSet, plus: Vec<usize>| {
            out.push(MoveStep { step, patch, kind, op, regions: moves.regions, idle: moves.idle, plus });
            step += 1;
        };
        let plus = (0..n_labels)
            .filter(|&l| !(code.punctured && l == 0) && init_basis(code, state, l) == Basis::X)
            .collect();
        push(StepKind::Init, String::new(), MoveSet::default(), plus);
        for t in 1..=code.m {
            let fwd = encoding_moves(&grid, t, code.punctured)?;
            let back = MoveSet {
                regions: fwd.regions.iter().map(|r| Region { dr: -r.dr, dc: -r.dc, ..*r }).map(|r| shift(&r)).collect(),
                idle: Vec::new(),
            };
            push(StepKind::Encode, format!("t={t}"), fwd, Vec::new());
            push(StepKind::Return, format!("t={t}"), back, Vec::new());
        }
        for &s in swaps.iter().rev() {
            let (a, b) = swap_moves_on(&grid, s)?;
            let mut regions = a.regions;
            regions.extend(b.regions);
            push(StepKind::Swap, format!("E {} {}", s.i, s.j), MoveSet { regions, idle: Vec::new() }, Vec::new());
        }
    }
    Ok(out)
}

/// A return move starts where the forward move ended.
fn shift(r: &Region) -> Region {
    let mv = |x: usize, d: isize| (x as isize - d) as usize;
    Region { r0: mv(r.r0, r.dr), r1: mv(r.r1, r.dr), c0: mv(r.c0, r.dc), c1: mv(r.c1, r.dc), ..*r }
}

/// Occupancy of the grid cells: `content[row][col]` is the label of the
/// atom there. Each cell hosts at most one resting atom; during an encoding
/// step an atom may visit an occupied partner cell.
#[derive(Debug, Clone)]
pub struct Replay {
    grid: Grid,
    /// Position of each atom, indexed by its original label.
    pub position: Vec<(usize, usize)>,
}

impl Replay {
    pub fn new(grid: Grid) -> Self {
        let position = grid.cells.clone();
        Self { grid, position }
    }

    /// Translates the atoms in `regions`; `held` restricts the move to
    /// atoms still carried from the previous step. Returns the moved atoms.
    fn apply(&mut self, step: usize, regions: &[Region], held: Option<&[bool]>, allow_stack: bool) -> Result<Vec<bool>, LayoutError> {
        let err = |msg: String| LayoutError::Replay { step, msg };
        let mut moved = vec![false; self.position.len()];
        for reg in regions {
            for (atom, pos) in self.position.iter_mut().enumerate() {
                if moved[atom] || !reg.contains(*pos) || held.is_some_and(|h| !h[atom]) {
                    continue;
                }
                let r = pos.0 as isize + reg.dr;
                let c = pos.1 as isize + reg.dc;
                if r < 0 || c < 0 || r as usize >= self.grid.rows || c as usize >= self.grid.cols {
                    return Err(err(format!("atom {atom} leaves the grid")));
                }
                *pos = (r as usize, c as usize);
                moved[atom] = true;
            }
        }
        if !allow_stack {
            let mut seen = std::collections::HashSet::new();
            if let Some(a) = self.position.iter().position(|p| !seen.insert(*p)) {
                return Err(err(format!("two atoms share cell {:?} (atom {a})", self.position[a])));
            }
        }
        Ok(moved)
    }

    /// Runs the steps of one patch and returns the final label map:
    /// `map[label]` is the label of the cell where that atom ends.
    pub fn run(grid: &Grid, steps: &[MoveStep]) -> Result<Vec<usize>, LayoutError> {
        let mut replay = Replay::new(grid.clone());
        let mut carried: Option<Vec<bool>> = None;
        for s in steps {
            let held = if s.kind == StepKind::Return { carried.take() } else { None };
            let moved = replay.apply(s.step, &s.regions, held.as_deref(), s.kind == StepKind::Encode)?;
            if s.kind == StepKind::Encode {
                carried = Some(moved);
            }
            if s.kind == StepKind::Encode {
                // Every moved atom must sit on its partner's cell.
                let bit: usize = s.op.trim_start_matches("t=").parse::<usize>().unwrap_or(1) - 1;
                for (atom, &pos) in replay.position.iter().enumerate() {
                    if atom >> bit & 1 == 1 && pos != grid.cells[atom ^ 1 << bit] {
                        return Err(LayoutError::Replay { step: s.step, msg: format!("atom {atom} misses its partner") });
                    }
                }
            }
        }
        let mut at = std::collections::HashMap::new();
        for (label, &cell) in grid.cells.iter().enumerate() {
            at.insert(cell, label);
        }
        Ok(replay.position.iter().map(|p| at[p]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_layouts() {
        let g1 = layout2d(1).unwrap();
        assert_eq!(g1.labels(), vec![vec![1, 0]]);
        let g2 = layout2d(2).unwrap();
        assert_eq!(g2.labels(), vec![vec![3, 2], vec![1, 0]]);
        let g0 = layout2d(0).unwrap();
        assert_eq!((g0.rows, g0.cols), (1, 1));
        assert!(layout2d(17).is_err());
    }

    #[test]
    fn corners_at_m7() {
        let g = layout2d(7).unwrap();
        assert_eq!((g.rows, g.cols), (8, 16));
        let l = g.labels();
        assert_eq!(l[0][0], 127);
        assert_eq!(l[0][15], 42);
        assert_eq!(l[7][15], 0);
        assert_eq!(l[7][0], 85);
    }

    #[test]
    fn first_encoding_step_shifts_odd_columns() {
        for m in 1..=8 {
            let g = layout2d(m).unwrap();
            let mv = encoding_moves(&g, 1, false).unwrap();
            assert!(mv.regions.iter().all(|r| (r.dr, r.dc) == (0, 1)));
            let odd: Vec<usize> = (0..1 << m).filter(|l| l & 1 == 1).collect();
            assert!(rectangles_exact(&g, &odd, &mv.regions));
        }
        let g = layout2d(7).unwrap();
        assert_eq!(encoding_moves(&g, 3, true).unwrap().idle, vec![4]);
        assert!(encoding_moves(&g, 0, false).is_err());
        assert!(encoding_moves(&g, 8, false).is_err());
    }

    #[test]
    fn swaps_are_exact_rectangles() {
        for m in 2..=8 {
            let g = layout2d(m).unwrap();
            for i in 0..m {
                for j in 0..m {
                    if i == j {
                        assert!(swap_moves_on(&g, Swap { i, j }).is_err());
                        continue;
                    }
                    let (a, b) = swap_moves_on(&g, Swap { i, j }).unwrap();
                    let (clear, set) = swap_sets(m, Swap { i, j });
                    assert!(rectangles_exact(&g, &clear, &a.regions), "m={m} E {i} {j}");
                    assert!(rectangles_exact(&g, &set, &b.regions), "m={m} E {i} {j}");
                }
            }
        }
    }

    #[test]
    fn empty_schedule_is_encoding_only() {
        let code = QrmCode::pqrm(2, 4, 7).unwrap();
        let prog = choreography(&PermutationSchedule::identity(7), &code, LogicalState::Plus).unwrap();
        assert_eq!(prog.len(), 4 * (1 + 2 * 7));
        assert!(prog.iter().all(|s| s.kind != StepKind::Swap));
        let g = layout2d(7).unwrap();
        let patch0: Vec<MoveStep> = prog.iter().filter(|s| s.patch == 0).cloned().collect();
        let map = Replay::run(&g, &patch0).unwrap();
        assert!(map.iter().enumerate().all(|(l, &x)| l == x));
    }

    #[test]
    fn schedules_replay_to_their_matrices() {
        use crate::gf2::{coordinate_map, F2Matrix, F2Vector};
        let g = layout2d(7).unwrap();
        let code = QrmCode::pqrm(3, 3, 7).unwrap();
        for sched in [PermutationSchedule::d7(), PermutationSchedule::d15()] {
            let prog = choreography(&sched, &code, LogicalState::Zero).unwrap();
            for c in 0..4 {
                let steps: Vec<MoveStep> = prog.iter().filter(|s| s.patch == c).cloned().collect();
                assert_eq!(steps.iter().filter(|s| s.kind == StepKind::Swap).count(), 7);
                assert_eq!(Replay::run(&g, &steps).unwrap(), sched.label_map(c));
                // Position swaps compose as maps in execution order.
                let mut composed: Vec<usize> = (0..128).collect();
                let mut product = F2Matrix::identity(7);
                for s in sched.columns[c].iter().rev() {
                    let e = F2Matrix::elementary(7, s.i, s.j).unwrap();
                    let map = coordinate_map(&e, &F2Vector::zeros(7)).unwrap();
                    composed = composed.iter().map(|&x| map[x]).collect();
                    product = &e * &product;
                }
                assert_eq!(composed, coordinate_map(&product, &F2Vector::zeros(7)).unwrap());
                assert_eq!(product, sched.matrix(c));
            }
        }
    }
}
