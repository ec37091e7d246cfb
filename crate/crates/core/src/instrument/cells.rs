//! Cell-level classification, regularity, red-closeness and wavefront metrics.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::epidemic::{Agent, AgentState};
use crate::geometry::{CellGrid, CellIndex, DistanceField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellState {
    White,
    Red,
    Black,
    Grey,
    /// No agents at all; reported as a density violation, never as black.
    Empty,
}

impl CellState {
    pub fn code(self) -> char {
        match self {
            CellState::White => 'W',
            CellState::Red => 'R',
            CellState::Black => 'B',
            CellState::Grey => 'G',
            CellState::Empty => 'E',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        Some(match c {
            'W' => CellState::White,
            'R' => CellState::Red,
            'B' => CellState::Black,
            'G' => CellState::Grey,
            'E' => CellState::Empty,
            _ => return None,
        })
    }
}

/// Per-cell agent counts, indexed by grid slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CellCounts {
    pub white: u32,
    pub red: u32,
    pub black: u32,
}

impl CellCounts {
    pub fn total(&self) -> u32 {
        self.white + self.red + self.black
    }

    pub fn state(&self) -> CellState {
        if self.red > 0 {
            CellState::Red
        } else if self.total() == 0 {
            CellState::Empty
        } else if self.black == 0 {
            CellState::White
        } else if self.white == 0 {
            CellState::Black
        } else {
            CellState::Grey
        }
    }
}

/// Counts agents per covered cell; agents in uncovered cells are ignored.
pub fn cell_counts(agents: &[Agent], grid: &CellGrid) -> Vec<CellCounts> {
    let mut counts = vec![CellCounts::default(); grid.slots()];
    for a in agents {
        if let Some(s) = grid.covered_slot_of(a.position) {
            let c = &mut counts[s];
            match a.state {
                AgentState::White => c.white += 1,
                AgentState::Red(_) => c.red += 1,
                AgentState::Black => c.black += 1,
            }
        }
    }
    counts
}

/// Cell states by slot; `None` for slots outside the cover.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellStates {
    states: Vec<Option<CellState>>,
}

impl CellStates {
    pub fn from_counts(counts: &[CellCounts], grid: &CellGrid) -> Self {
        Self {
            states: (0..grid.slots())
                .map(|s| grid.is_covered_slot(s).then(|| counts[s].state()))
                .collect(),
        }
    }

    /// Builds states from explicit per-cell assignments; unlisted covered
    /// cells are `Empty`.
    pub fn from_cells<I>(grid: &CellGrid, cells: I) -> Self
    where
        I: IntoIterator<Item = (CellIndex, CellState)>,
    {
        let mut states: Vec<Option<CellState>> = (0..grid.slots())
            .map(|s| grid.is_covered_slot(s).then_some(CellState::Empty))
            .collect();
        for (c, st) in cells {
            if let Some(s) = grid.slot(c).filter(|&s| grid.is_covered_slot(s)) {
                states[s] = Some(st);
            }
        }
        Self { states }
    }

    pub fn at_slot(&self, slot: usize) -> Option<CellState> {
        self.states[slot]
    }

    pub fn get(&self, grid: &CellGrid, c: CellIndex) -> Option<CellState> {
        grid.slot(c).and_then(|s| self.states[s])
    }

    pub fn slots_in(&self, state: CellState) -> impl Iterator<Item = usize> + '_ {
        self.states
            .iter()
            .enumerate()
            .filter(move |(_, s)| **s == Some(state))
            .map(|(i, _)| i)
    }

    pub fn count(&self, state: CellState) -> usize {
        self.slots_in(state).count()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Classifies every covered cell of a configuration.
pub fn classify_cells(agents: &[Agent], grid: &CellGrid) -> CellStates {
    CellStates::from_counts(&cell_counts(agents, grid), grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegularityProperty {
    /// A grey cell exists.
    NoGrey,
    /// A white component touches no red cell.
    WhiteTouchesRed,
    /// A white cell is adjacent to a black cell.
    NoWhiteNextToBlack,
}

impl fmt::Display for RegularityProperty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegularityProperty::NoGrey => "a",
            RegularityProperty::WhiteTouchesRed => "b",
            RegularityProperty::NoWhiteNextToBlack => "c",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RegularityReport {
    pub regular: bool,
    pub violations: Vec<(RegularityProperty, CellIndex)>,
    /// Agent-free cells; they are treated as holes in the cell graph.
    pub empty_cells: Vec<CellIndex>,
}

impl RegularityReport {
    pub fn count(&self, p: RegularityProperty) -> usize {
        self.violations.iter().filter(|(q, _)| *q == p).count()
    }
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Checks the three regularity properties. Empty cells carry no state: they
/// neither join white components nor count as neighbors of any color.
pub fn is_regular(states: &CellStates, grid: &CellGrid) -> RegularityReport {
    let mut report = RegularityReport::default();
    let mut dsu = DisjointSets::new(grid.slots());
    let mut touches_red = vec![false; grid.slots()];

    for slot in 0..grid.slots() {
        match states.at_slot(slot) {
            Some(CellState::Grey) => report
                .violations
                .push((RegularityProperty::NoGrey, grid.index_of_slot(slot))),
            Some(CellState::Empty) => report.empty_cells.push(grid.index_of_slot(slot)),
            Some(CellState::White) => {
                let mut next_to_black = false;
                for t in grid.adjacent_slots(slot) {
                    match states.at_slot(t) {
                        Some(CellState::White) => dsu.union(slot, t),
                        Some(CellState::Red) => touches_red[slot] = true,
                        Some(CellState::Black) => next_to_black = true,
                        _ => {}
                    }
                }
                if next_to_black {
                    report.violations.push((
                        RegularityProperty::NoWhiteNextToBlack,
                        grid.index_of_slot(slot),
                    ));
                }
            }
            _ => {}
        }
    }

    let whites: Vec<usize> = states.slots_in(CellState::White).collect();
    let mut component_ok = vec![false; grid.slots()];
    for &w in &whites {
        let root = dsu.find(w);
        component_ok[root] |= touches_red[w];
    }
    let mut reported = vec![false; grid.slots()];
    for &w in &whites {
        let root = dsu.find(w);
        if !component_ok[root] && !reported[root] {
            reported[root] = true;
            report.violations.push((
                RegularityProperty::WhiteTouchesRed,
                grid.index_of_slot(root),
            ));
        }
    }
    report.violations.sort();
    report.regular = report.violations.is_empty();
    report
}

/// Slots of white cells with at least one red neighbor.
pub fn red_close_slots(states: &CellStates, grid: &CellGrid) -> Vec<usize> {
    states
        .slots_in(CellState::White)
        .filter(|&s| {
            grid.adjacent_slots(s)
                .any(|t| states.at_slot(t) == Some(CellState::Red))
        })
        .collect()
}

/// White cells adjacent to a red cell.
pub fn red_close_cells(states: &CellStates, grid: &CellGrid) -> BTreeSet<CellIndex> {
    red_close_slots(states, grid)
        .into_iter()
        .map(|s| grid.index_of_slot(s))
        .collect()
}

/// Whether the centers of `a` and `b` are within Euclidean distance `rho`.
pub fn rho_close(a: CellIndex, b: CellIndex, grid: &CellGrid, rho: f64) -> bool {
    let d = grid.center_of(a).dist(grid.center_of(b));
    d <= rho + 1e-9 * rho.max(1.0)
}

/// Multi-source BFS distances from the red cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Wavefront {
    field: DistanceField,
    has_red: bool,
}

impl Wavefront {
    /// Distance of a cell to the nearest red cell; `None` when no red cell
    /// exists (the "infinite" marker) or the cell is unreachable.
    pub fn distance(&self, grid: &CellGrid, c: CellIndex) -> Option<u32> {
        self.field.get(grid, c)
    }

    pub fn at_slot(&self, slot: usize) -> Option<u32> {
        self.field.at_slot(slot)
    }

    pub fn has_red(&self) -> bool {
        self.has_red
    }

    /// Distances of every white cell.
    pub fn white_distances<'a>(
        &'a self,
        states: &'a CellStates,
        grid: &'a CellGrid,
    ) -> impl Iterator<Item = (CellIndex, Option<u32>)> + 'a {
        states
            .slots_in(CellState::White)
            .map(move |s| (grid.index_of_slot(s), self.field.at_slot(s)))
    }

    /// Max and mean distance over white cells with a finite distance.
    pub fn white_stats(&self, states: &CellStates) -> Option<(u32, f64)> {
        let ds: Vec<u32> = states
            .slots_in(CellState::White)
            .filter_map(|s| self.field.at_slot(s))
            .collect();
        let max = *ds.iter().max()?;
        let mean = ds.iter().map(|&d| d as f64).sum::<f64>() / ds.len() as f64;
        Some((max, mean))
    }
}

pub fn wavefront_distances(states: &CellStates, grid: &CellGrid) -> Wavefront {
    let reds: Vec<usize> = states.slots_in(CellState::Red).collect();
    Wavefront {
        has_red: !reds.is_empty(),
        field: grid.bfs(reds),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityBound {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensityViolation {
    pub cell: CellIndex,
    pub count: u32,
    pub bound: DensityBound,
}

/// Cells whose agent count falls outside `[eta1 * l^2, eta2 * l^2]`.
pub fn density_check(
    agents: &[Agent],
    grid: &CellGrid,
    eta1: f64,
    eta2: f64,
) -> Vec<DensityViolation> {
    let counts = cell_counts(agents, grid);
    density_violations(&counts, grid, eta1, eta2)
}

pub fn density_violations(
    counts: &[CellCounts],
    grid: &CellGrid,
    eta1: f64,
    eta2: f64,
) -> Vec<DensityViolation> {
    let area = grid.side() * grid.side();
    let (lo, hi) = (eta1 * area, eta2 * area);
    grid.cover()
        .filter_map(|c| {
            let s = grid.slot(c)?;
            let n = counts[s].total();
            let bound = if (n as f64) < lo {
                DensityBound::Low
            } else if (n as f64) > hi {
                DensityBound::High
            } else {
                return None;
            };
            Some(DensityViolation {
                cell: c,
                count: n,
                bound,
            })
        })
        .collect()
}

/// Count of instances and how many satisfied the checked property.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub instances: u64,
    pub holds: u64,
}

impl Tally {
    pub fn record(&mut self, holds: bool) {
        self.instances += 1;
        self.holds += holds as u64;
    }

    pub fn merge(&mut self, other: Tally) {
        self.instances += other.instances;
        self.holds += other.holds;
    }

    pub fn violations(&self) -> u64 {
        self.instances - self.holds
    }

    /// Fraction of instances that held; `None` with no instances.
    pub fn rate(&self) -> Option<f64> {
        (self.instances > 0).then(|| self.holds as f64 / self.instances as f64)
    }
}

/// Red-wave speed: for every white cell `w` of the next configuration with a
/// finite distance to the previous red set, checks
/// `d(w, Red_next) <= d(w, Red_prev) - 1`.
pub fn red_wave_speed(prev: &CellStates, next: &CellStates, grid: &CellGrid) -> Tally {
    let before = wavefront_distances(prev, grid);
    let after = wavefront_distances(next, grid);
    let mut tally = Tally::default();
    for w in next.slots_in(CellState::White) {
        if let Some(dp) = before.at_slot(w) {
            let ok = matches!(after.at_slot(w), Some(dn) if dn + 1 <= dp);
            tally.record(ok);
        }
    }
    tally
}

/// Red-close-front speed for the high-mobility regime: for every white cell
/// `w` of the next configuration, checks
/// `d(w, Redc_next) <= max(d(w, Redc_prev) - drop, 0)`.
pub fn red_close_speed(
    prev: &CellStates,
    next: &CellStates,
    grid: &CellGrid,
    drop: u32,
) -> Tally {
    let before = grid.bfs(red_close_slots(prev, grid));
    let after = grid.bfs(red_close_slots(next, grid));
    let mut tally = Tally::default();
    for w in next.slots_in(CellState::White) {
        if let Some(dp) = before.at_slot(w) {
            let bound = dp.saturating_sub(drop);
            tally.record(matches!(after.at_slot(w), Some(dn) if dn <= bound));
        }
    }
    tally
}

/// Per-step cell drop `floor(rho / (sqrt 2 * l))` used by the red-close audit.
pub fn red_close_drop(rho: f64, cell_side: f64) -> u32 {
    (rho / (std::f64::consts::SQRT_2 * cell_side) + 1e-9).floor() as u32
}

/// Compact cell dump: `"{cols}x{rows}:"` followed by one code per slot in
/// row-major order (`.` marks slots outside the cover).
pub fn encode_cells(states: &CellStates, grid: &CellGrid) -> String {
    let mut out = format!("{}x{}:", grid.cols(), grid.rows());
    out.extend((0..grid.slots()).map(|s| states.at_slot(s).map_or('.', CellState::code)));
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed cell dump: {0}")]
pub struct DumpError(pub String);

/// Inverse of [`encode_cells`]; the rebuilt grid has unit side.
pub fn decode_cells(dump: &str) -> Result<(CellGrid, CellStates), DumpError> {
    let (shape, body) = dump
        .split_once(':')
        .ok_or_else(|| DumpError("missing ':'".into()))?;
    let (c, r) = shape
        .split_once('x')
        .ok_or_else(|| DumpError("missing 'x' in shape".into()))?;
    let cols: usize = c.parse().map_err(|_| DumpError(format!("bad cols {c:?}")))?;
    let rows: usize = r.parse().map_err(|_| DumpError(format!("bad rows {r:?}")))?;
    let chars: Vec<char> = body.chars().collect();
    if chars.len() != cols * rows {
        return Err(DumpError(format!(
            "expected {} cells, found {}",
            cols * rows,
            chars.len()
        )));
    }
    let mut states = Vec::with_capacity(chars.len());
    for ch in &chars {
        states.push(match ch {
            '.' => None,
            c => Some(CellState::from_code(*c).ok_or_else(|| DumpError(format!("bad code {c:?}")))?),
        });
    }
    let mask = states.iter().map(Option::is_some).collect();
    let grid = CellGrid::from_mask(1.0, cols, rows, mask).map_err(|e| DumpError(e.to_string()))?;
    Ok((grid, CellStates { states }))
}
