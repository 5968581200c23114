//! Randomized property checks of the triplane operations.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fetch, mixup, CrossAttention, FeatureGrid, OccupancyFeature, PlaneDir, Triplane};
use crate::error::Result;

/// Outcome of one property over all randomized cases.
#[derive(Debug, Clone, PartialEq)]
pub struct SelftestCheck {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl SelftestCheck {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            cases: 0,
            failures: 0,
            max_error: 0.0,
            tolerance,
        }
    }

    fn record(&mut self, error: f64) {
        self.cases += 1;
        self.max_error = self.max_error.max(error);
        if !(error <= self.tolerance) {
            self.failures += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub seed: u64,
    pub checks: Vec<SelftestCheck>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(SelftestCheck::passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {:<28} cases={} failures={} max_error={:.3e} tolerance={:.0e}\n",
                if c.passed() { "PASS" } else { "FAIL" },
                c.name,
                c.cases,
                c.failures,
                c.max_error,
                c.tolerance
            ));
        }
        out
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn random_triplane(rng: &mut ChaCha8Rng) -> Triplane {
    let r = rng.random_range(2..10);
    let c = rng.random_range(1..7);
    let seed: u64 = rng.random();
    Triplane::new([0, 1, 2].map(|k| FeatureGrid::random(r, c, seed ^ k as u64))).expect("same shape")
}

fn node_coord(i: usize, r: usize) -> f64 {
    2.0 * i as f64 / (r - 1) as f64 - 1.0
}

/// Bilinear sample written as a sum of tent weights over every node.
fn oracle_sample(grid: &FeatureGrid, uv: [f64; 2]) -> Vec<f64> {
    let r = grid.resolution;
    let gu = (uv[0] + 1.0) * 0.5 * (r - 1) as f64;
    let gv = (uv[1] + 1.0) * 0.5 * (r - 1) as f64;
    let mut out = vec![0.0; grid.channels];
    for v in 0..r {
        for u in 0..r {
            let w = (1.0 - (gu - u as f64).abs()).max(0.0) * (1.0 - (gv - v as f64).abs()).max(0.0);
            for (o, x) in out.iter_mut().zip(grid.node(u, v)) {
                *o += w * x;
            }
        }
    }
    out
}

fn random_occupancy(rng: &mut ChaCha8Rng, width: usize) -> OccupancyFeature {
    let tokens = rng.random_range(0..8);
    let data = (0..tokens * width).map(|_| rng.random_range(-2.0..2.0)).collect();
    OccupancyFeature { width, data }
}

/// Runs every property over `cases` randomized instances.
pub fn selftest(seed: u64, cases: usize) -> Result<SelftestReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut node = SelftestCheck::new("fetch_node_exact", 1e-12);
    let mut midpoint = SelftestCheck::new("fetch_midpoint_average", 1e-12);
    let mut oracle = SelftestCheck::new("fetch_matches_oracle", 1e-6);
    let mut rows = SelftestCheck::new("attention_rows_sum_to_one", 1e-6);
    let mut perm = SelftestCheck::new("attention_key_permutation", 1e-9);
    let mut mix = SelftestCheck::new("mixup_endpoints", 0.0);

    for _ in 0..cases {
        let t = random_triplane(&mut rng);
        let r = t.resolution();
        let idx = [0; 3].map(|_| rng.random_range(0..r));
        let p = Vector3::new(node_coord(idx[0], r), node_coord(idx[1], r), node_coord(idx[2], r));
        let mut expected = Vec::new();
        expected.extend_from_slice(t.plane(PlaneDir::Xy).node(idx[0], idx[1]));
        expected.extend_from_slice(t.plane(PlaneDir::Yz).node(idx[1], idx[2]));
        expected.extend_from_slice(t.plane(PlaneDir::Zx).node(idx[2], idx[0]));
        node.record(max_diff(&fetch(&t, &p)?, &expected));

        let i = rng.random_range(0..r - 1);
        let q = Vector3::new(0.5 * (node_coord(i, r) + node_coord(i + 1, r)), p.y, p.z);
        let mean = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect() };
        let mut expected = mean(t.plane(PlaneDir::Xy).node(i, idx[1]), t.plane(PlaneDir::Xy).node(i + 1, idx[1]));
        expected.extend_from_slice(t.plane(PlaneDir::Yz).node(idx[1], idx[2]));
        expected.extend(mean(t.plane(PlaneDir::Zx).node(idx[2], i), t.plane(PlaneDir::Zx).node(idx[2], i + 1)));
        midpoint.record(max_diff(&fetch(&t, &q)?, &expected));

        let s = Vector3::from_fn(|_, _| rng.random_range(-1.0..=1.0));
        let expected: Vec<f64> = PlaneDir::ALL
            .iter()
            .flat_map(|d| oracle_sample(t.plane(*d), d.project(&s)))
            .collect();
        oracle.record(max_diff(&fetch(&t, &s)?, &expected));

        let res = rng.random_range(1..4);
        let c = rng.random_range(1..6);
        let f = FeatureGrid::random(res, c, rng.random());
        let width = rng.random_range(1..5);
        let o = random_occupancy(&mut rng, width);
        let att = CrossAttention::new(c, width, rng.random_range(1..6), rng.random());
        let w = att.weights(&f, &o)?;
        rows.record(w.iter().map(|row| (row.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max));
        let mut order: Vec<usize> = (0..o.tokens()).collect();
        for k in (1..order.len()).rev() {
            order.swap(k, rng.random_range(0..=k));
        }
        let shuffled = OccupancyFeature {
            width,
            data: order.iter().flat_map(|k| o.token(*k).to_vec()).collect(),
        };
        perm.record(max_diff(&att.apply(&f, &o)?.data, &att.apply(&f, &shuffled)?.data));

        let n = rng.random_range(1..10);
        let f0: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let f1: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        mix.record(max_diff(&mixup(&f0, &f1, 1.0)?, &f0).max(max_diff(&mixup(&f0, &f1, 0.0)?, &f1)));
    }

    Ok(SelftestReport {
        seed,
        checks: vec![node, midpoint, oracle, rows, perm, mix],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_selftest_passes() {
        let report = selftest(1, 50).unwrap();
        assert!(report.passed(), "{}", report.to_text());
        assert_eq!(report.checks.len(), 6);
        assert!(report.checks.iter().all(|c| c.cases == 50));
    }

    #[test]
    fn oracle_agrees_with_sample_at_nodes() {
        let g = FeatureGrid::random(4, 2, 3);
        let uv = [node_coord(1, 4), node_coord(2, 4)];
        assert!(max_diff(&oracle_sample(&g, uv), g.node(1, 2)) < 1e-12);
    }
}
