//! Independent reference computations shared by the integration tests and the
//! acceptance suite. Nothing here calls into the code under test except to
//! read plain data (grid occupancy, network parameters).
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use mcf_core::evalkit::OccupancyGrid;
use mcf_core::neural::Mlp;
use ndarray::Array2;

/// Mean and variance of `p^(1-alpha) * q^alpha`, normalized numerically on a grid.
/// Densities are given as `(mean, var)`.
pub fn grid_fusion(p: (f64, f64), q: (f64, f64), alpha: f64) -> (f64, f64) {
    let log_f = |x: f64| -> f64 {
        let lp = -0.5 * (x - p.0).powi(2) / p.1 - 0.5 * p.1.ln();
        let lq = -0.5 * (x - q.0).powi(2) / q.1 - 0.5 * q.1.ln();
        (1.0 - alpha) * lp + alpha * lq
    };
    let s = p.1.max(q.1).sqrt();
    let (lo, hi) = (p.0.min(q.0) - 12.0 * s, p.0.max(q.0) + 12.0 * s);
    let (m1, v1) = moments(&log_f, lo, hi, 40_001);
    let w = 14.0 * v1.sqrt();
    moments(&log_f, m1 - w, m1 + w, 8_001)
}

fn moments(log_f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> (f64, f64) {
    let dx = (hi - lo) / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| lo + i as f64 * dx).collect();
    let lf: Vec<f64> = xs.iter().map(|&x| log_f(x)).collect();
    let top = lf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let f: Vec<f64> = lf.iter().map(|l| (l - top).exp()).collect();
    let trap = |g: &dyn Fn(usize) -> f64| -> f64 {
        let mut s = 0.5 * (g(0) + g(n - 1));
        for i in 1..n - 1 {
            s += g(i);
        }
        s * dx
    };
    let z = trap(&|i| f[i]);
    let mean = trap(&|i| f[i] * xs[i]) / z;
    let var = trap(&|i| f[i] * (xs[i] - mean).powi(2)) / z;
    (mean, var)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Shortest 8-connected path cost in cells, computed with Dijkstra over an
/// explicit edge list. Diagonals need both orthogonal neighbors free.
pub fn dijkstra(grid: &OccupancyGrid, start: (usize, usize), goal: (usize, usize)) -> Option<f64> {
    let (nx, ny) = (grid.nx as i64, grid.ny as i64);
    let free = |i: i64, j: i64| i >= 0 && j >= 0 && i < nx && j < ny && !grid.occupied[(j * nx + i) as usize];
    if !free(start.0 as i64, start.1 as i64) || !free(goal.0 as i64, goal.1 as i64) {
        return None;
    }
    #[derive(PartialEq)]
    struct Item(f64, usize);
    impl Eq for Item {}
    impl Ord for Item {
        fn cmp(&self, o: &Self) -> Ordering {
            o.0.partial_cmp(&self.0).unwrap()
        }
    }
    impl PartialOrd for Item {
        fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
            Some(self.cmp(o))
        }
    }
    let n = (nx * ny) as usize;
    let mut dist = vec![f64::INFINITY; n];
    let s = start.1 * grid.nx + start.0;
    let g = goal.1 * grid.nx + goal.0;
    dist[s] = 0.0;
    let mut heap = BinaryHeap::from([Item(0.0, s)]);
    while let Some(Item(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        if u == g {
            return Some(d);
        }
        let (i, j) = ((u % grid.nx) as i64, (u / grid.nx) as i64);
        for di in -1..=1i64 {
            for dj in -1..=1i64 {
                if (di, dj) == (0, 0) || !free(i + di, j + dj) {
                    continue;
                }
                let diag = di != 0 && dj != 0;
                if diag && !(free(i + di, j) && free(i, j + dj)) {
                    continue;
                }
                let w = if diag { 2f64.sqrt() } else { 1.0 };
                let v = ((j + dj) * nx + (i + di)) as usize;
                if d + w < dist[v] {
                    dist[v] = d + w;
                    heap.push(Item(d + w, v));
                }
            }
        }
    }
    None
}

/// Largest relative error between backprop and central finite differences of
/// `sum(upstream * net(input))`, over all parameters and inputs.
pub fn fd_max_rel_err(net: &Mlp, input: &Array2<f64>, upstream: &Array2<f64>, h: f64) -> f64 {
    let loss = |n: &Mlp, x: &Array2<f64>| -> f64 { (&n.predict(x.view()).unwrap() * upstream).sum() };
    let (_, tape) = net.forward(input.view()).unwrap();
    let (grads, gx) = net.backward(&tape, upstream.view()).unwrap();
    let analytic: Vec<f64> = grads.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied().collect::<Vec<_>>()).collect();

    let theta = net.flat_params();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for k in 0..theta.len() {
        let mut t = theta.clone();
        t[k] = theta[k] + h;
        probe.set_flat_params(&t).unwrap();
        let up = loss(&probe, input);
        t[k] = theta[k] - h;
        probe.set_flat_params(&t).unwrap();
        let down = loss(&probe, input);
        worst = worst.max(grad_err(analytic[k], (up - down) / (2.0 * h)));
    }
    for idx in 0..input.len() {
        let (r, c) = (idx / input.ncols(), idx % input.ncols());
        let mut x = input.clone();
        x[[r, c]] += h;
        let up = loss(net, &x);
        x[[r, c]] -= 2.0 * h;
        let down = loss(net, &x);
        worst = worst.max(grad_err(gx[[r, c]], (up - down) / (2.0 * h)));
    }
    worst
}

fn grad_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}
