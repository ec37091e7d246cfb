//! Supercell state ladder for the cellular walk.
//!
//! A supercell's state `h` runs from 0 (white) through the intermediate
//! states `1..ĥ-1` to `ĥ` (red) and `ĥ+1` (black). The last three may hold at
//! once, so a classification is a set of states.

use serde::{Deserialize, Serialize};

use super::cells::{cell_counts, CellCounts, Tally};
use crate::epidemic::{Agent, AgentState};
use crate::error::InstrumentError;
use crate::geometry::{CellGrid, CellIndex};
use crate::params::Calibration;

/// `ĥ = ceil(log_{R^2}(c0 * rho^2 / R^2 * ln n))`, floored at 1.
pub fn h_hat(radius: f64, rho: f64, ln_n: f64, c0: f64) -> Result<u32, InstrumentError> {
    if radius <= 1.0 {
        return Err(InstrumentError::RadiusTooSmall(radius));
    }
    let arg = c0 * rho * rho / (radius * radius) * ln_n;
    if !(arg > 0.0) {
        return Err(InstrumentError::NonPositiveLogArgument(arg));
    }
    let v = arg.ln() / (radius * radius).ln();
    // log_100(1e6) evaluates to 3.0000000000000004
    let h = (v - 1e-9).ceil();
    Ok(h.max(1.0) as u32)
}

pub fn h_hat_for_n(radius: f64, rho: f64, n: usize, c0: f64) -> Result<u32, InstrumentError> {
    h_hat(radius, rho, (n as f64).ln(), c0)
}

/// `(a_h, b_h, c_h)` for intermediate state `h >= 1`.
pub fn state_constants(h: u32, eta1: f64, eta2: f64) -> (f64, f64, f64) {
    assert!(h >= 1, "intermediate states start at 1");
    let hm1 = (h - 1) as i32;
    let tri = ((h - 1) * h.saturating_sub(2) / 2) as i32;
    let a = eta1.powi(h as i32) / (2.0 * 2160f64.powi(hm1) * 20f64.powi(tri));
    let b = 15.0 * 68f64.powi(hm1) * eta2.powi(h as i32);
    let c = eta1 / (2.0 * 20f64.powi(hm1));
    (a, b, c)
}

/// Calibration plus the tabulated `a_h, b_h, c_h` for `h = 1..ĥ-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateConstants {
    pub eta1: f64,
    pub eta2: f64,
    pub c0: f64,
    pub alpha: f64,
    /// Index 0 holds `h = 1`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl StateConstants {
    pub fn new(cal: &Calibration, h_hat: u32) -> Self {
        let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
        for h in 1..h_hat {
            let (ah, bh, ch) = state_constants(h, cal.eta1, cal.eta2);
            a.push(ah);
            b.push(bh);
            c.push(ch);
        }
        Self {
            eta1: cal.eta1,
            eta2: cal.eta2,
            c0: cal.c0,
            alpha: cal.alpha,
            a,
            b,
            c,
        }
    }
}

/// Everything needed to classify a supercell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    pub constants: StateConstants,
    pub h_hat: u32,
    pub radius: f64,
    pub rho: f64,
    pub ln_n: f64,
}

impl Ladder {
    pub fn new(cal: &Calibration, radius: f64, rho: f64, n: usize) -> Result<Self, InstrumentError> {
        let ln_n = (n as f64).ln();
        let h_hat = h_hat(radius, rho, ln_n, cal.c0)?;
        Self::with_h_hat(cal, radius, rho, ln_n, h_hat)
    }

    pub fn with_h_hat(
        cal: &Calibration,
        radius: f64,
        rho: f64,
        ln_n: f64,
        h_hat: u32,
    ) -> Result<Self, InstrumentError> {
        if h_hat > 62 {
            return Err(InstrumentError::TooManyStates(h_hat));
        }
        Ok(Self {
            constants: StateConstants::new(cal, h_hat),
            h_hat,
            radius,
            rho,
            ln_n,
        })
    }

    /// `90 * rho^2 / R^2 * ln n`.
    pub fn red_threshold(&self) -> f64 {
        90.0 * self.rho * self.rho / (self.radius * self.radius) * self.ln_n
    }

    pub fn black(&self) -> u32 {
        self.h_hat + 1
    }
}

/// Set of states a supercell satisfies, as a bitmask over `0..=ĥ+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SupercellStates(pub u64);

impl SupercellStates {
    pub fn insert(&mut self, h: u32) {
        self.0 |= 1 << h;
    }

    pub fn contains(self, h: u32) -> bool {
        self.0 & (1 << h) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Highest applicable state.
    pub fn max(self) -> Option<u32> {
        (self.0 != 0).then(|| 63 - self.0.leading_zeros())
    }

    pub fn iter(self) -> impl Iterator<Item = u32> {
        (0..64).filter(move |&h| self.contains(h))
    }
}

impl FromIterator<u32> for SupercellStates {
    fn from_iter<I: IntoIterator<Item = u32>>(iter: I) -> Self {
        let mut s = SupercellStates::default();
        for h in iter {
            s.insert(h);
        }
        s
    }
}

pub type SupercellCounts = CellCounts;

pub fn supercell_counts(agents: &[Agent], sgrid: &CellGrid) -> Vec<SupercellCounts> {
    cell_counts(agents, sgrid)
}

/// All states whose defining conditions hold for these counts.
pub fn classify_supercell(counts: &SupercellCounts, ladder: &Ladder) -> SupercellStates {
    let (r, w, b) = (counts.red as f64, counts.white as f64, counts.black as f64);
    let mut s = SupercellStates::default();
    if r == 0.0 && b == 0.0 {
        s.insert(0);
    }
    let r2 = ladder.radius * ladder.radius;
    let rho2 = ladder.rho * ladder.rho;
    for h in 1..ladder.h_hat {
        let i = (h - 1) as usize;
        let scale = r2.powi(h as i32);
        let k = &ladder.constants;
        if k.a[i] * scale <= r && r <= k.b[i] * scale && w >= k.c[i] * rho2 {
            s.insert(h);
        }
    }
    if r >= ladder.red_threshold() {
        s.insert(ladder.h_hat);
    }
    if w == 0.0 {
        s.insert(ladder.black());
    }
    s
}

/// States of every supercell slot (uncovered slots stay empty).
pub fn classify_supercells(
    counts: &[SupercellCounts],
    sgrid: &CellGrid,
    ladder: &Ladder,
) -> Vec<SupercellStates> {
    (0..sgrid.slots())
        .map(|s| {
            if sgrid.is_covered_slot(s) {
                classify_supercell(&counts[s], ladder)
            } else {
                SupercellStates::default()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SupercellRegularity {
    pub regular: bool,
    /// Supercells satisfying no state.
    pub unclassified: Vec<CellIndex>,
    /// `(black supercell, neighbor in neither ĥ nor ĥ+1)`.
    pub black_neighbor: Vec<(CellIndex, CellIndex)>,
}

pub fn supercell_regularity(
    states: &[SupercellStates],
    sgrid: &CellGrid,
    h_hat: u32,
) -> SupercellRegularity {
    let mut rep = SupercellRegularity::default();
    for s in (0..sgrid.slots()).filter(|&s| sgrid.is_covered_slot(s)) {
        if states[s].is_empty() {
            rep.unclassified.push(sgrid.index_of_slot(s));
        }
        if states[s].contains(h_hat + 1) {
            for t in sgrid.adjacent_slots(s) {
                if !(states[t].contains(h_hat) || states[t].contains(h_hat + 1)) {
                    rep.black_neighbor
                        .push((sgrid.index_of_slot(s), sgrid.index_of_slot(t)));
                }
            }
        }
    }
    rep.regular = rep.unclassified.is_empty() && rep.black_neighbor.is_empty();
    rep
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Implication {
    A,
    B,
    C,
    D,
    E,
}

impl Implication {
    pub const ALL: [Implication; 5] = [
        Implication::A,
        Implication::B,
        Implication::C,
        Implication::D,
        Implication::E,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Implication::A => "a",
            Implication::B => "b",
            Implication::C => "c",
            Implication::D => "d",
            Implication::E => "e",
        }
    }
}

/// Agreement tallies per ladder implication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TransitionTally {
    pub a: Tally,
    pub b: Tally,
    pub c: Tally,
    pub d: Tally,
    pub e: Tally,
    /// (supercell, step) pairs where no implication applies: `m` undefined,
    /// or `m = ĥ` with the supercell itself unclassified.
    pub inapplicable: u64,
}

impl TransitionTally {
    pub fn get(&self, i: Implication) -> Tally {
        match i {
            Implication::A => self.a,
            Implication::B => self.b,
            Implication::C => self.c,
            Implication::D => self.d,
            Implication::E => self.e,
        }
    }

    fn get_mut(&mut self, i: Implication) -> &mut Tally {
        match i {
            Implication::A => &mut self.a,
            Implication::B => &mut self.b,
            Implication::C => &mut self.c,
            Implication::D => &mut self.d,
            Implication::E => &mut self.e,
        }
    }

    pub fn merge(&mut self, other: &TransitionTally) {
        for i in Implication::ALL {
            self.get_mut(i).merge(other.get(i));
        }
        self.inapplicable += other.inapplicable;
    }
}

/// Which implication applies to a supercell with neighborhood maximum `m` and
/// own top state `own`, and the state it predicts next.
pub fn predicted(m: u32, own: Option<u32>, h_hat: u32) -> Option<(Implication, u32)> {
    if m == 0 {
        Some((Implication::A, 0))
    } else if m < h_hat {
        Some((Implication::B, m + 1))
    } else if m == h_hat {
        match own? {
            h if h < h_hat => Some((Implication::C, h_hat)),
            h if h == h_hat => Some((Implication::D, h_hat + 1)),
            // own = ĥ+1 would make m = ĥ+1
            _ => None,
        }
    } else {
        Some((Implication::E, h_hat + 1))
    }
}

/// Matches observed transitions against the ladder implications. Each
/// supercell's state is its highest applicable state; `m^t(C)` is the max
/// over `N(C)`, ignoring unclassified neighbors. A transition agrees when the
/// predicted state is among the states `C` satisfies at `t + 1`.
pub fn transition_audit(
    trace: &[Vec<SupercellStates>],
    sgrid: &CellGrid,
    h_hat: u32,
) -> TransitionTally {
    transition_audit_where(trace, sgrid, h_hat, |_| true)
}

/// As [`transition_audit`], restricted to steps `t` accepted by `include`.
pub fn transition_audit_where<F>(
    trace: &[Vec<SupercellStates>],
    sgrid: &CellGrid,
    h_hat: u32,
    include: F,
) -> TransitionTally
where
    F: Fn(usize) -> bool,
{
    let mut tally = TransitionTally::default();
    for (t, pair) in trace.windows(2).enumerate() {
        if !include(t) {
            continue;
        }
        let (now, next) = (&pair[0], &pair[1]);
        for s in (0..sgrid.slots()).filter(|&s| sgrid.is_covered_slot(s)) {
            let m = std::iter::once(s)
                .chain(sgrid.adjacent_slots(s))
                .filter_map(|c| now[c].max())
                .max();
            let Some(m) = m else {
                tally.inapplicable += 1;
                continue;
            };
            match predicted(m, now[s].max(), h_hat) {
                Some((imp, want)) => tally.get_mut(imp).record(next[s].contains(want)),
                None => tally.inapplicable += 1,
            }
        }
    }
    tally
}

/// Supercell wave speed: for every supercell `W` in state 0 at `t` with a
/// finite distance to the infected set, checks `d^{t+1}(W) <= d^t(W) - 1`.
/// A supercell counts as infected when it is not in state 0, i.e. it holds a
/// red or black agent.
pub fn supercell_wave_speed(
    now: &[SupercellStates],
    next: &[SupercellStates],
    sgrid: &CellGrid,
) -> Tally {
    let infected = |st: &[SupercellStates]| -> Vec<usize> {
        (0..sgrid.slots())
            .filter(|&s| sgrid.is_covered_slot(s) && !st[s].contains(0))
            .collect()
    };
    let before = sgrid.bfs(infected(now));
    let after = sgrid.bfs(infected(next));
    let mut tally = Tally::default();
    for w in (0..sgrid.slots()).filter(|&s| sgrid.is_covered_slot(s) && now[s].contains(0)) {
        if let Some(dp) = before.at_slot(w) {
            if dp == 0 {
                continue;
            }
            tally.record(matches!(after.at_slot(w), Some(dn) if dn + 1 <= dp));
        }
    }
    tally
}

/// Frequency tallies for the one-step spreading statements of the cellular
/// walk, each over (supercell, step) pairs meeting its hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpreadTallies {
    /// `W(N(C)) >= λρ²` ⇒ every cell of `C` holds `>= (λ/36) R²` whites after the move.
    pub white_spread: Tally,
    /// `R(C) >= λR²` ⇒ every `C' ∈ N(C)` has `>= min(λR²/30, ρ²/(2R²))` red-hit cells.
    pub red_spread: Tally,
    /// `C` red-state ⇒ every cell of every `C' ∈ N(C)` is red-hit.
    pub red_saturation: Tally,
    /// `max R(N(C)) = M > 0` ⇒ `R^{t+1}(C) <= 68 η₂ M R²`.
    pub red_upper: Tally,
}

impl SpreadTallies {
    pub fn merge(&mut self, o: &SpreadTallies) {
        self.white_spread.merge(o.white_spread);
        self.red_spread.merge(o.red_spread);
        self.red_saturation.merge(o.red_saturation);
        self.red_upper.merge(o.red_upper);
    }
}

/// Maps each supercell slot to the covered cell slots inside it.
#[derive(Debug, Clone)]
pub struct SupercellMembers {
    members: Vec<Vec<usize>>,
}

impl SupercellMembers {
    pub fn new(grid: &CellGrid, sgrid: &CellGrid) -> Self {
        let mut members = vec![Vec::new(); sgrid.slots()];
        for s in (0..grid.slots()).filter(|&s| grid.is_covered_slot(s)) {
            let center = grid.center_of(grid.index_of_slot(s));
            if let Some(t) = sgrid.covered_slot_of(center) {
                members[t].push(s);
            }
        }
        Self { members }
    }

    pub fn cells_of(&self, supercell: usize) -> &[usize] {
        &self.members[supercell]
    }
}

/// Inputs for one step of the spread audit.
pub struct SpreadInputs<'a> {
    pub ladder: &'a Ladder,
    pub sgrid: &'a CellGrid,
    pub members: &'a SupercellMembers,
    /// Supercell counts and states at the end of step `t`.
    pub counts_before: &'a [SupercellCounts],
    pub states_before: &'a [SupercellStates],
    /// Cell counts right after the move phase of step `t + 1`.
    pub cells_after_move: &'a [CellCounts],
    /// Supercell counts at the end of step `t + 1`.
    pub counts_after: &'a [SupercellCounts],
}

pub fn spread_audit(inp: &SpreadInputs<'_>) -> SpreadTallies {
    let k = &inp.ladder.constants;
    let (r2, rho2) = (
        inp.ladder.radius * inp.ladder.radius,
        inp.ladder.rho * inp.ladder.rho,
    );
    let c0sq = k.c0 * k.c0;
    let lambda_w = 720.0 / c0sq;
    let lambda_r = 1800.0 / c0sq;
    let mut out = SpreadTallies::default();
    let sg = inp.sgrid;
    for s in (0..sg.slots()).filter(|&s| sg.is_covered_slot(s)) {
        let hood: Vec<usize> = std::iter::once(s).chain(sg.adjacent_slots(s)).collect();
        let cells = inp.members.cells_of(s);

        let whites_around: u64 = hood.iter().map(|&c| inp.counts_before[c].white as u64).sum();
        if whites_around as f64 >= lambda_w * rho2 {
            let need = lambda_w / 36.0 * r2;
            out.white_spread.record(
                cells
                    .iter()
                    .all(|&c| inp.cells_after_move[c].white as f64 >= need),
            );
        }

        let red_hit = |sc: usize| {
            inp.members
                .cells_of(sc)
                .iter()
                .filter(|&&c| inp.cells_after_move[c].red > 0)
                .count()
        };
        if inp.counts_before[s].red as f64 >= lambda_r * r2 {
            let need = (lambda_r / 30.0 * r2).min(rho2 / (2.0 * r2));
            out.red_spread
                .record(hood.iter().all(|&c| red_hit(c) as f64 >= need));
        }

        if inp.states_before[s].contains(inp.ladder.h_hat) {
            out.red_saturation.record(
                hood.iter()
                    .all(|&c| red_hit(c) == inp.members.cells_of(c).len()),
            );
        }

        let m = hood.iter().map(|&c| inp.counts_before[c].red).max().unwrap_or(0);
        if m > 0 {
            let bound = 68.0 * k.eta2 * m as f64 * r2;
            out.red_upper
                .record(inp.counts_after[s].red as f64 <= bound);
        }
    }
    out
}

/// Convenience: counts red agents per supercell slot (used by tests).
pub fn red_per_supercell(agents: &[Agent], sgrid: &CellGrid) -> Vec<u32> {
    let mut v = vec![0; sgrid.slots()];
    for a in agents {
        if matches!(a.state, AgentState::Red(_)) {
            if let Some(s) = sgrid.covered_slot_of(a.position) {
                v[s] += 1;
            }
        }
    }
    v
}
