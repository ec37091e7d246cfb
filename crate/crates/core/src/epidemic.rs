//! The parsimonious k-flooding state machine.
//!
//! A step runs a transmission phase and a move phase in the configured order.
//! In the transmission phase every red agent informs the white agents within
//! closed distance `R` (and, under the supercell scope, in its own supercell).
//! Newly informed agents turn red only after the phase, so they first transmit
//! in the next step. Red countdowns drop by one per step and agents whose
//! countdown reaches zero turn black.

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::geometry::{CellGrid, Point, Region};
use crate::instrument::{Auditor, StepInstruments};
use crate::mobility::{self, streams, Mover, RngStream};
use crate::params::{PhaseOrder, SimParams, Sources, TransmissionScope};
use crate::spatial::{NearestIndex, SpatialHash};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "remaining", rename_all = "snake_case")]
pub enum AgentState {
    White,
    /// Active; transmits for `remaining` more steps.
    Red(u32),
    Black,
}

impl AgentState {
    pub fn is_white(self) -> bool {
        self == AgentState::White
    }

    pub fn is_red(self) -> bool {
        matches!(self, AgentState::Red(_))
    }

    pub fn is_black(self) -> bool {
        self == AgentState::Black
    }

    /// Whether `self -> next` is an allowed single-step transition for `k`.
    pub fn may_become(self, next: AgentState, k: u32) -> bool {
        use AgentState::*;
        match (self, next) {
            (White, White) | (White, Red(_)) => next == White || next == Red(k),
            (Red(r), Red(s)) => s + 1 == r,
            (Red(r), Black) => r == 1,
            (Black, Black) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub position: Point,
    pub state: AgentState,
    pub informed_at: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub white: usize,
    pub red: usize,
    pub black: usize,
}

/// Positions and states at the end of step `step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: u64,
    pub agents: Vec<Agent>,
}

impl Snapshot {
    pub fn counts(&self) -> Counts {
        let mut c = Counts::default();
        for a in &self.agents {
            match a.state {
                AgentState::White => c.white += 1,
                AgentState::Red(_) => c.red += 1,
                AgentState::Black => c.black += 1,
            }
        }
        c
    }

    pub fn positions(&self) -> Vec<Point> {
        self.agents.iter().map(|a| a.position).collect()
    }
}

/// One infection event: `agent` informed by the red agent `informer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Infection {
    pub agent: usize,
    pub informer: usize,
}

/// Neighbor-query state reused across transmission phases.
#[derive(Debug, Clone)]
pub struct TransmissionIndex {
    hash: SpatialHash,
    positions: Vec<Point>,
    informer: Vec<u32>,
}

impl TransmissionIndex {
    pub fn new(region: &Region, radius: f64) -> Self {
        let bucket = if radius > 0.0 { radius } else { region.extent() / 256.0 };
        Self {
            hash: SpatialHash::new(region.extent(), bucket),
            positions: Vec::new(),
            informer: Vec::new(),
        }
    }
}

/// Runs the transmission phase of step `snapshot.step + 1` in place: marks
/// newly informed whites, ages red agents, and promotes the newly informed
/// to `Red(k)`. Returns the infections in ascending agent order; each
/// informer is the lowest-index red agent in range.
pub fn transmission_phase(
    snapshot: &mut Snapshot,
    params: &SimParams,
    index: &mut TransmissionIndex,
    supercells: Option<&CellGrid>,
) -> Vec<Infection> {
    let t = snapshot.step + 1;
    let agents = &mut snapshot.agents;
    index.positions.clear();
    index.positions.extend(agents.iter().map(|a| a.position));
    index.informer.clear();
    index.informer.resize(agents.len(), u32::MAX);

    let any_red = agents.iter().any(|a| a.state.is_red());
    let any_white = agents.iter().any(|a| a.state.is_white());
    if any_red && any_white {
        index
            .hash
            .rebuild(&index.positions, |i| agents[i].state.is_white());
        let same_cell = match (params.scope, supercells) {
            (TransmissionScope::SameSupercell, Some(sg)) => Some(sg),
            _ => None,
        };
        for (r, agent) in agents.iter().enumerate() {
            if !agent.state.is_red() {
                continue;
            }
            let home = same_cell.map(|sg| sg.slot(sg.locate(agent.position)));
            let informer = &mut index.informer;
            index.hash.for_each_within(
                &index.positions,
                agent.position,
                params.radius,
                |w| {
                    if informer[w] != u32::MAX {
                        return;
                    }
                    if let (Some(sg), Some(h)) = (same_cell, home) {
                        if sg.slot(sg.locate(index.positions[w])) != h {
                            return;
                        }
                    }
                    informer[w] = r as u32;
                },
            );
        }
    }

    for a in agents.iter_mut() {
        if let AgentState::Red(rem) = a.state {
            a.state = if rem <= 1 {
                AgentState::Black
            } else {
                AgentState::Red(rem - 1)
            };
        }
    }
    let mut infections = Vec::new();
    for (i, &inf) in index.informer.iter().enumerate() {
        if inf != u32::MAX {
            agents[i].state = AgentState::Red(params.k);
            agents[i].informed_at = Some(t);
            infections.push(Infection {
                agent: i,
                informer: inf as usize,
            });
        }
    }
    infections
}

/// Moves every agent once; states are untouched.
pub fn move_phase(
    snapshot: &mut Snapshot,
    region: &Region,
    mover: &Mover,
    rng: &mut RngStream,
) -> Result<(), SimError> {
    if let Mover::Standard { rho } = mover {
        if *rho == 0.0 {
            return Ok(());
        }
    }
    for a in snapshot.agents.iter_mut() {
        let next = mover.step(a.position, region, rng)?;
        debug_assert!(region.contains(next));
        debug_assert!(match mover {
            Mover::Standard { rho } => next.dist(a.position) <= rho * (1.0 + 1e-12),
            Mover::Cellular { .. } => true,
        });
        a.position = next;
    }
    Ok(())
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "step", rename_all = "snake_case")]
pub enum Outcome {
    /// Every agent black at the end of this step.
    Completed(u64),
    /// First step with no red agent left and at least one white.
    Failed(u64),
    /// `max_steps` reached with red agents still active.
    Exhausted(u64),
}

impl Outcome {
    pub fn completion_time(&self) -> Option<u64> {
        match *self {
            Outcome::Completed(t) => Some(t),
            _ => None,
        }
    }

    pub fn failed_at(&self) -> Option<u64> {
        match *self {
            Outcome::Failed(t) => Some(t),
            _ => None,
        }
    }

    pub fn last_step(&self) -> u64 {
        match *self {
            Outcome::Completed(t) | Outcome::Failed(t) | Outcome::Exhausted(t) => t,
        }
    }
}

/// Informer-chain speed bookkeeping: every informed agent must lie within
/// `t * (R + max displacement)` of its chain's source start.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChainCheck {
    pub checked: u64,
    pub violations: u64,
    /// Largest observed `distance / (t * (R + max displacement))`.
    pub max_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub counts: Counts,
    pub instruments: Option<StepInstruments>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub params: SimParams,
    pub outcome: Outcome,
    pub series: Vec<StepRecord>,
    pub final_snapshot: Snapshot,
    pub source_agents: Vec<usize>,
    pub source_positions: Vec<Point>,
    pub chain: ChainCheck,
    /// Run-level instrument tallies (present when any instrument is on).
    pub audits: Option<crate::instrument::RunAudits>,
}

impl RunRecord {
    pub fn completion_time(&self) -> Option<u64> {
        self.outcome.completion_time()
    }

    pub fn failed_at(&self) -> Option<u64> {
        self.outcome.failed_at()
    }
}

/// Hooks called by the stepping loop.
pub trait Observer {
    /// After the move phase of a move-then-transmit step, before transmission.
    fn after_move(&mut self, _step: u64, _agents: &[Agent]) {}
    /// At the end of every step, including the initial configuration (step 0).
    fn end_of_step(&mut self, _snapshot: &Snapshot) {}
}

impl Observer for () {}

/// A live run: the current configuration plus the machinery to advance it.
#[derive(Debug, Clone)]
pub struct Simulation {
    params: SimParams,
    mover: Mover,
    index: TransmissionIndex,
    rng: RngStream,
    snapshot: Snapshot,
    origin: Vec<Point>,
    chain: ChainCheck,
    sources: Vec<usize>,
}

impl Simulation {
    pub fn new(params: &SimParams) -> Result<Self, SimError> {
        params.validate()?;
        let mover = Mover::new(params.mobility, &params.region, params.instrumentation.gamma)?;
        let positions = mobility::init_positions(params)?;
        let sources = resolve_sources(params, &positions);
        let mut agents: Vec<Agent> = positions
            .iter()
            .map(|&p| Agent {
                position: p,
                state: AgentState::White,
                informed_at: None,
            })
            .collect();
        for &s in &sources {
            agents[s].state = AgentState::Red(params.k);
            agents[s].informed_at = Some(0);
        }
        Ok(Self {
            index: TransmissionIndex::new(&params.region, params.radius),
            rng: RngStream::new(params.seed, streams::MOVE),
            snapshot: Snapshot { step: 0, agents },
            origin: positions,
            chain: ChainCheck::default(),
            sources,
            mover,
            params: params.clone(),
        })
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.snapshot
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn supercells(&self) -> Option<&CellGrid> {
        self.mover.supercells()
    }

    pub fn chain(&self) -> ChainCheck {
        self.chain
    }

    /// Advances one step.
    pub fn step(&mut self) -> Result<&Snapshot, SimError> {
        self.step_observed(&mut ())
    }

    pub fn step_observed<O: Observer + ?Sized>(&mut self, obs: &mut O) -> Result<&Snapshot, SimError> {
        let t = self.snapshot.step + 1;
        if t > self.params.max_steps {
            return Err(SimError::StepLimit(t));
        }
        let region = self.params.region;
        let infections = match self.params.phase_order {
            PhaseOrder::TransmitThenMove => {
                let inf = transmission_phase(
                    &mut self.snapshot,
                    &self.params,
                    &mut self.index,
                    self.mover.supercells(),
                );
                move_phase(&mut self.snapshot, &region, &self.mover, &mut self.rng)?;
                inf
            }
            PhaseOrder::MoveThenTransmit => {
                move_phase(&mut self.snapshot, &region, &self.mover, &mut self.rng)?;
                obs.after_move(t, &self.snapshot.agents);
                transmission_phase(
                    &mut self.snapshot,
                    &self.params,
                    &mut self.index,
                    self.mover.supercells(),
                )
            }
        };
        self.snapshot.step = t;
        self.check_chains(t, &infections);
        Ok(&self.snapshot)
    }

    fn check_chains(&mut self, t: u64, infections: &[Infection]) {
        let reach = t as f64 * (self.params.radius + self.params.mobility.max_displacement());
        for inf in infections {
            self.origin[inf.agent] = self.origin[inf.informer];
            let d = self.snapshot.agents[inf.agent]
                .position
                .dist(self.origin[inf.agent]);
            self.chain.checked += 1;
            if d > reach * (1.0 + 1e-12) + 1e-9 {
                self.chain.violations += 1;
            }
            if reach > 0.0 {
                self.chain.max_ratio = self.chain.max_ratio.max(d / reach);
            }
        }
    }

    /// Terminal outcome of the current configuration, if any.
    pub fn outcome(&self) -> Option<Outcome> {
        let t = self.snapshot.step;
        let c = self.snapshot.counts();
        if c.red == 0 && c.white == 0 {
            Some(Outcome::Completed(t))
        } else if c.red == 0 {
            Some(Outcome::Failed(t))
        } else if t >= self.params.max_steps {
            Some(Outcome::Exhausted(t))
        } else {
            None
        }
    }

    /// Steps until a terminal outcome, reporting every configuration.
    pub fn run_observed<O: Observer + ?Sized>(&mut self, obs: &mut O) -> Result<Outcome, SimError> {
        obs.end_of_step(&self.snapshot);
        loop {
            self.step_observed(obs)?;
            obs.end_of_step(&self.snapshot);
            if let Some(outcome) = self.outcome() {
                return Ok(outcome);
            }
        }
    }
}

fn resolve_sources(params: &SimParams, positions: &[Point]) -> Vec<usize> {
    let mut out: Vec<usize> = match &params.sources {
        Sources::RandomAgent => {
            use rand::Rng;
            let mut rng = RngStream::new(params.seed, streams::SOURCE);
            vec![rng.gen_range(0..positions.len())]
        }
        Sources::Points(pts) => {
            let index = NearestIndex::new(positions, params.region.extent());
            pts.iter()
                .map(|&p| index.nearest(p).expect("n >= 1").0)
                .collect()
        }
        Sources::Agents(ids) => ids.clone(),
    };
    let mut seen = std::collections::HashSet::new();
    out.retain(|i| seen.insert(*i));
    out
}

/// Collects per-step counts and forwards to the instruments.
struct Recorder<'a> {
    series: Vec<StepRecord>,
    auditor: Option<&'a mut Auditor>,
}

impl Observer for Recorder<'_> {
    fn after_move(&mut self, step: u64, agents: &[Agent]) {
        if let Some(a) = self.auditor.as_deref_mut() {
            a.after_move(step, agents);
        }
    }

    fn end_of_step(&mut self, snapshot: &Snapshot) {
        if let Some(a) = self.auditor.as_deref_mut() {
            a.end_of_step(snapshot);
        }
        self.series.push(StepRecord {
            step: snapshot.step,
            counts: snapshot.counts(),
            instruments: None,
        });
    }
}

/// Executes a full run.
pub fn run(params: &SimParams) -> Result<RunRecord, SimError> {
    let mut sim = Simulation::new(params)?;
    let mut auditor = Auditor::for_run(params, sim.supercells())?;
    let mut rec = Recorder {
        series: Vec::new(),
        auditor: auditor.as_mut(),
    };
    let outcome = sim.run_observed(&mut rec)?;
    let mut series = rec.series;
    let audits = auditor.map(|a| {
        let (per_step, audits) = a.finish();
        for (s, ins) in series.iter_mut().zip(per_step) {
            s.instruments = Some(ins);
        }
        audits
    });
    Ok(RunRecord {
        outcome,
        series,
        final_snapshot: sim.snapshot.clone(),
        source_positions: sim.sources.iter().map(|&i| sim.origin_of_source(i)).collect(),
        source_agents: sim.sources.clone(),
        chain: sim.chain,
        audits,
        params: params.clone(),
    })
}

impl Simulation {
    fn origin_of_source(&self, i: usize) -> Point {
        // a source's chain origin is its own start position and never changes
        self.origin[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::MobilityMode;

    fn two_agents(rho: f64) -> SimParams {
        let mut p = SimParams::new(
            Region::square(20.0).unwrap(),
            2,
            3.0,
            MobilityMode::Standard { rho },
        );
        p.burn_in = 0;
        p.sources = Sources::Agents(vec![0]);
        p.seed = 1;
        p
    }

    fn place(sim: &mut Simulation, pts: &[Point]) {
        for (a, &p) in sim.snapshot.agents.iter_mut().zip(pts) {
            a.position = p;
        }
        sim.origin = pts.to_vec();
    }

    fn snap(agents: Vec<(Point, AgentState)>) -> Snapshot {
        Snapshot {
            step: 0,
            agents: agents
                .into_iter()
                .map(|(p, s)| Agent {
                    position: p,
                    state: s,
                    informed_at: (!s.is_white()).then_some(0),
                })
                .collect(),
        }
    }

    #[test]
    fn transmission_uses_closed_ball() {
        let params = two_agents(0.0);
        let mut s = snap(vec![
            (Point::new(5.0, 5.0), AgentState::Red(1)),
            (Point::new(8.0, 5.0), AgentState::White),
        ]);
        let mut idx = TransmissionIndex::new(&params.region, params.radius);
        let inf = transmission_phase(&mut s, &params, &mut idx, None);
        assert_eq!(inf, vec![Infection { agent: 1, informer: 0 }]);
        assert_eq!(s.agents[0].state, AgentState::Black);
        assert_eq!(s.agents[1].state, AgentState::Red(1));
        assert_eq!(s.agents[1].informed_at, Some(1));
    }

    #[test]
    fn no_red_means_no_change() {
        let params = two_agents(0.0);
        let mut s = snap(vec![
            (Point::new(5.0, 5.0), AgentState::White),
            (Point::new(6.0, 5.0), AgentState::Black),
        ]);
        let before = s.clone();
        let mut idx = TransmissionIndex::new(&params.region, params.radius);
        assert!(transmission_phase(&mut s, &params, &mut idx, None).is_empty());
        assert_eq!(s, before);
    }

    #[test]
    fn newly_informed_do_not_relay_in_the_same_step() {
        let params = two_agents(0.0);
        let mut s = snap(vec![
            (Point::new(1.0, 1.0), AgentState::Red(1)),
            (Point::new(3.5, 1.0), AgentState::White),
            (Point::new(6.0, 1.0), AgentState::White),
        ]);
        let mut idx = TransmissionIndex::new(&params.region, params.radius);
        let inf = transmission_phase(&mut s, &params, &mut idx, None);
        assert_eq!(inf.len(), 1);
        assert!(s.agents[2].state.is_white());
    }

    #[test]
    fn supercell_scope_blocks_cross_boundary_transmission() {
        let region = Region::square(24.0).unwrap();
        let mut params = SimParams::new(region, 2, 6.0, MobilityMode::Cellular { rho: 12.0 });
        params.instrumentation.cell_side = 4.0;
        let sg = CellGrid::build(&region, 12.0, 1.0).unwrap();
        let mut s = snap(vec![
            (Point::new(11.8, 5.0), AgentState::Red(1)),
            (Point::new(12.2, 5.0), AgentState::White),
        ]);
        let mut idx = TransmissionIndex::new(&region, 6.0);
        assert!(transmission_phase(&mut s, &params, &mut idx, Some(&sg)).is_empty());
        assert!(s.agents[1].state.is_white());
        // same supercell, within R: informed
        let mut s = snap(vec![
            (Point::new(11.8, 5.0), AgentState::Red(1)),
            (Point::new(9.0, 5.0), AgentState::White),
        ]);
        assert_eq!(transmission_phase(&mut s, &params, &mut idx, Some(&sg)).len(), 1);
    }

    #[test]
    fn k_countdown() {
        let mut params = two_agents(0.0);
        params.k = 3;
        let mut s = snap(vec![(Point::new(1.0, 1.0), AgentState::Red(3))]);
        let mut idx = TransmissionIndex::new(&params.region, params.radius);
        for expect in [AgentState::Red(2), AgentState::Red(1), AgentState::Black] {
            transmission_phase(&mut s, &params, &mut idx, None);
            s.step += 1;
            assert_eq!(s.agents[0].state, expect);
        }
        assert!(AgentState::Red(3).may_become(AgentState::Red(2), 3));
        assert!(!AgentState::Black.may_become(AgentState::White, 3));
        assert!(!AgentState::White.may_become(AgentState::Red(2), 3));
    }

    #[test]
    fn single_agent_completes_in_one_step() {
        let mut p = two_agents(1.0);
        p.n = 1;
        let rec = run(&p).unwrap();
        assert_eq!(rec.outcome, Outcome::Completed(1));
        assert_eq!(rec.series.len(), 2);
        assert!(rec.final_snapshot.agents[0].state.is_black());
    }

    #[test]
    fn two_agents_in_range_complete_at_two() {
        let p = two_agents(0.0);
        let mut sim = Simulation::new(&p).unwrap();
        place(&mut sim, &[Point::new(5.0, 5.0), Point::new(7.0, 5.0)]);
        assert_eq!(sim.run_observed(&mut ()).unwrap(), Outcome::Completed(2));
    }

    #[test]
    fn two_agents_out_of_range_fail_at_one() {
        let p = two_agents(0.0);
        let mut sim = Simulation::new(&p).unwrap();
        place(&mut sim, &[Point::new(2.0, 5.0), Point::new(12.0, 5.0)]);
        assert_eq!(sim.run_observed(&mut ()).unwrap(), Outcome::Failed(1));
    }

    #[test]
    fn all_sources_complete_at_one() {
        let mut p = SimParams::new(
            Region::square(20.0).unwrap(),
            30,
            2.0,
            MobilityMode::Standard { rho: 1.0 },
        );
        p.sources = Sources::Agents((0..30).collect());
        assert_eq!(run(&p).unwrap().outcome, Outcome::Completed(1));
    }

    #[test]
    fn zero_rho_keeps_positions() {
        let mut p = two_agents(0.0);
        p.n = 20;
        let mut sim = Simulation::new(&p).unwrap();
        let before = sim.snapshot().positions();
        sim.step().unwrap();
        assert_eq!(sim.snapshot().positions(), before);
    }

    #[test]
    fn step_limit_is_enforced() {
        let mut p = SimParams::new(
            Region::square(30.0).unwrap(),
            900,
            2.0,
            MobilityMode::Standard { rho: 0.5 },
        );
        p.max_steps = 2;
        p.seed = 4;
        let rec = run(&p).unwrap();
        assert!(rec.outcome.last_step() <= 2);
        if let Outcome::Exhausted(t) = rec.outcome {
            assert_eq!(t, 2);
        }
    }
}
