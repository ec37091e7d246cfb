use proptest::prelude::*;

use redwave::epidemic::{AgentState, Simulation};
use redwave::instrument::{self, CellState};
use redwave::{CellGrid, MobilityMode, Region, SimParams};

fn params(side: f64, n: usize, radius: f64, rho: f64, k: u32, seed: u64, disk: bool) -> SimParams {
    let region = if disk {
        Region::disk(side / 2.0).unwrap()
    } else {
        Region::square(side).unwrap()
    };
    let mut p = SimParams::new(region, n, radius, MobilityMode::Standard { rho }).with_seed(seed);
    p.k = k;
    p.burn_in = 2;
    p
}

fn arb_params() -> impl Strategy<Value = SimParams> {
    (
        8.0..24.0f64,
        1usize..200,
        0.0..4.0f64,
        0.1..3.0f64,
        1u32..4,
        any::<u64>(),
        any::<bool>(),
    )
        .prop_map(|(s, n, r, rho, k, seed, disk)| params(s, n, r, rho, k, seed, disk))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_step_is_a_legal_transition(p in arb_params()) {
        let mut sim = Simulation::new(&p).unwrap();
        let n = p.n;
        let mut prev = sim.snapshot().clone();
        for _ in 0..40 {
            if sim.outcome().is_some() {
                break;
            }
            let next = sim.step().unwrap().clone();
            let (a, b) = (prev.counts(), next.counts());
            prop_assert_eq!(b.white + b.red + b.black, n);
            prop_assert!(b.white <= a.white);
            prop_assert!(b.black >= a.black);
            for (x, y) in prev.agents.iter().zip(&next.agents) {
                prop_assert!(x.state.may_become(y.state, p.k), "{:?} -> {:?}", x.state, y.state);
                prop_assert!(p.region.contains(y.position));
                prop_assert!(x.position.dist(y.position) <= p.rho() * (1.0 + 1e-12));
                if let (AgentState::White, AgentState::Red(_)) = (x.state, y.state) {
                    prop_assert_eq!(y.informed_at, Some(next.step));
                }
            }
            prev = next;
        }
    }

    #[test]
    fn runs_are_reproducible(p in arb_params()) {
        let a = redwave::run(&p).unwrap();
        let b = redwave::run(&p).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn cell_classification_partitions_the_cover(p in arb_params(), ell in 0.5..3.0f64) {
        let sim = Simulation::new(&p).unwrap();
        let grid = CellGrid::build(&p.region, ell, 1.0).unwrap();
        let states = instrument::classify_cells(&sim.snapshot().agents, &grid);
        let total: usize = [
            CellState::White,
            CellState::Red,
            CellState::Black,
            CellState::Grey,
            CellState::Empty,
        ]
        .iter()
        .map(|&s| states.count(s))
        .sum();
        prop_assert_eq!(total, grid.cover_len());
        let counted: u32 = instrument::cell_counts(&sim.snapshot().agents, &grid)
            .iter()
            .map(|c| c.total())
            .sum();
        prop_assert!(counted as usize <= p.n);
    }

    #[test]
    fn cell_dumps_round_trip(p in arb_params(), ell in 0.5..3.0f64) {
        let sim = Simulation::new(&p).unwrap();
        let grid = CellGrid::build(&p.region, ell, 1.0).unwrap();
        let states = instrument::classify_cells(&sim.snapshot().agents, &grid);
        let dump = instrument::encode_cells(&states, &grid);
        let (g2, s2) = instrument::decode_cells(&dump).unwrap();
        prop_assert_eq!(instrument::encode_cells(&s2, &g2), dump);
        let a = instrument::is_regular(&states, &grid);
        let b = instrument::is_regular(&s2, &g2);
        prop_assert_eq!(a.regular, b.regular);
        prop_assert_eq!(a.violations.len(), b.violations.len());
    }

    #[test]
    fn cellular_moves_stay_in_neighbouring_supercells(seed in any::<u64>(), n in 1usize..300) {
        let mut p = SimParams::new(Region::square(24.0).unwrap(), n, 1.0, MobilityMode::Cellular { rho: 6.0 })
            .with_seed(seed);
        p.instrumentation.cell_side = 2.0;
        let mut sim = Simulation::new(&p).unwrap();
        let sgrid = sim.supercells().unwrap().clone();
        for _ in 0..5 {
            let before: Vec<_> = sim.snapshot().agents.iter().map(|a| sgrid.locate(a.position)).collect();
            sim.step().unwrap();
            for (b, a) in before.iter().zip(&sim.snapshot().agents) {
                let c = sgrid.locate(a.position);
                prop_assert!(b.chebyshev(c) <= 1);
            }
        }
    }
}

#[test]
fn empty_grid_region_is_all_holes() {
    let grid = CellGrid::build(&Region::square(4.0).unwrap(), 1.0, 1.0).unwrap();
    let states = instrument::classify_cells(&[], &grid);
    assert_eq!(states.count(CellState::Empty), grid.cover_len());
}
