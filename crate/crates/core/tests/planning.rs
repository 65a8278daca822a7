mod oracles;

use mcf_core::evalkit::{astar_cells, astar_shortest, spl, OccupancyGrid, SplEpisode};
use mcf_core::rng;
use mcf_core::simenv::{builtin_arena, Circle, WorldSpec};
use proptest::prelude::*;
use rand::Rng;

/// The open arena with a random scatter of discs.
fn random_arena(seed: u64) -> WorldSpec {
    let mut r = rng::stream(seed, "planning.arena");
    let mut w = builtin_arena("open").unwrap();
    let b = w.bounds;
    for _ in 0..r.gen_range(3..12) {
        let c = [r.gen_range(b.min_x..b.max_x), r.gen_range(b.min_y..b.max_y)];
        w.circles.push(Circle { center: c, radius: r.gen_range(0.1..0.8) });
    }
    w.name = format!("random_{seed}");
    w
}

fn free_cell<R: Rng>(g: &OccupancyGrid, r: &mut R) -> (usize, usize) {
    loop {
        let c = (r.gen_range(0..g.nx), r.gen_range(0..g.ny));
        if g.is_free(c.0, c.1) {
            return c;
        }
    }
}

#[test]
fn astar_matches_dijkstra_on_random_arenas() {
    for seed in 0..20 {
        let world = random_arena(seed);
        let grid = OccupancyGrid::from_world(&world, 10.0);
        let mut r = rng::stream(seed, "planning.endpoints");
        for _ in 0..5 {
            let (s, g) = (free_cell(&grid, &mut r), free_cell(&grid, &mut r));
            let reference = oracles::dijkstra(&grid, s, g);
            let plan = astar_cells(&grid, s, g);
            match (plan, reference) {
                (Some(p), Some(d)) => {
                    let cells = p.path_length * grid.resolution;
                    assert!((cells - d).abs() < 1e-9, "arena {seed}: A* {cells} vs Dijkstra {d}");
                }
                (None, None) => {}
                (p, d) => panic!("arena {seed}: reachability disagrees, A* {:?} vs Dijkstra {d:?}", p.map(|p| p.path_length)),
            }
        }
    }
}

#[test]
fn astar_path_is_connected_and_free() {
    let world = random_arena(99);
    let grid = OccupancyGrid::from_world(&world, 10.0);
    let mut r = rng::stream(99, "planning.walk");
    for _ in 0..20 {
        let (s, g) = (free_cell(&grid, &mut r), free_cell(&grid, &mut r));
        let Some(plan) = astar_cells(&grid, s, g) else { continue };
        assert_eq!(plan.cells.first(), Some(&s));
        assert_eq!(plan.cells.last(), Some(&g));
        let mut len = 0.0;
        for w in plan.cells.windows(2) {
            let (di, dj) = (w[0].0.abs_diff(w[1].0), w[0].1.abs_diff(w[1].1));
            assert!(di <= 1 && dj <= 1 && di + dj > 0);
            assert!(grid.is_free(w[1].0, w[1].1));
            len += if di + dj == 2 { 2f64.sqrt() } else { 1.0 };
        }
        assert!((len / grid.resolution - plan.path_length).abs() < 1e-9);
    }
}

#[test]
fn spl_of_the_shortest_path_is_one() {
    let world = builtin_arena("open").unwrap();
    let plan = astar_shortest(&world, world.start_region.center(), world.goal_region.center(), 20.0).unwrap();
    let ep = SplEpisode { success: true, l: plan.path_length, p: plan.path_length };
    assert_eq!(spl(&[ep]).unwrap(), 1.0);
}

proptest! {
    #[test]
    fn astar_never_beats_the_straight_line(seed in 0u64..200, i in 0usize..1000) {
        let world = random_arena(seed);
        let grid = OccupancyGrid::from_world(&world, 10.0);
        let mut r = rng::indexed_stream(seed, "planning.fuzz", i as u64);
        let (s, g) = (free_cell(&grid, &mut r), free_cell(&grid, &mut r));
        if let Some(plan) = astar_cells(&grid, s, g) {
            let (a, b) = (grid.center(s.0, s.1), grid.center(g.0, g.1));
            let euclid = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            prop_assert!(plan.path_length >= euclid - 1e-9);
        }
    }

    #[test]
    fn spl_decreases_with_path_length(p in 0.1..20.0f64, l1 in 0.0..50.0f64, extra in 0.0..50.0f64) {
        let a = spl(&[SplEpisode { success: true, l: l1, p }]).unwrap();
        let b = spl(&[SplEpisode { success: true, l: l1 + extra, p }]).unwrap();
        prop_assert!(b <= a);
        prop_assert!((0.0..=1.0).contains(&a));
        let failed = spl(&[SplEpisode { success: false, l: l1, p }]).unwrap();
        prop_assert_eq!(failed, 0.0);
    }

    #[test]
    fn spl_is_the_mean_over_episodes(ls in proptest::collection::vec((0.5..30.0f64, any::<bool>()), 1..20)) {
        let eps: Vec<SplEpisode> = ls.iter().map(|&(l, s)| SplEpisode { success: s, l, p: 5.0 }).collect();
        let expect = eps.iter().map(|e| if e.success { 5.0 / l_max(e.l) } else { 0.0 }).sum::<f64>() / eps.len() as f64;
        prop_assert!((spl(&eps).unwrap() - expect).abs() < 1e-12);
    }
}

fn l_max(l: f64) -> f64 {
    l.max(5.0)
}
