//! Seeded generators for random canonical solutions.
//!
//! Two flavours: `random_solution` draws blocks anywhere in a continuous
//! domain, `random_grid_solution` aligns blocks with a sampling grid so
//! that every block holds at least two grid points.

use std::ops::RangeInclusive;

use rand::seq::index::sample;
use rand::Rng;

use crate::canonical::{
    CanonicalSolution, DiagonalPolicy, GrowthChart, Interp, IntervalSystem, TimeInterval,
};
use crate::codomain::RealNonzeroWithZero;
use crate::factor_table::{IndexRange, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartKind {
    Exponential,
    LogLinear,
    /// Knot-only chart with signed values.
    Signed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub domain: TimeInterval,
    pub blocks: RangeInclusive<usize>,
    pub kinds: Vec<ChartKind>,
    pub max_exceptions: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            domain: TimeInterval::closed(0.0, 10.0),
            blocks: 0..=4,
            kinds: vec![ChartKind::Exponential, ChartKind::LogLinear, ChartKind::Signed],
            max_exceptions: 3,
        }
    }
}

fn signed_unit<R: Rng>(rng: &mut R) -> f64 {
    let m = rng.random_range(0.5..2.0);
    if rng.random_bool(0.5) {
        m
    } else {
        -m
    }
}

fn random_chart<R: Rng>(rng: &mut R, kind: ChartKind, knots: Vec<f64>) -> GrowthChart<f64> {
    match kind {
        ChartKind::Exponential => GrowthChart::Exponential {
            a: signed_unit(rng),
            q: rng.random_range(0.8..1.25),
        },
        ChartKind::LogLinear => {
            let values = knots.iter().map(|_| rng.random_range(0.5..2.0)).collect();
            GrowthChart::tabulated(knots, values, Interp::LogLinear)
        }
        ChartKind::Signed => {
            let values = knots.iter().map(|_| signed_unit(rng)).collect();
            GrowthChart::tabulated(knots, values, Interp::None)
        }
    }
}

fn sorted_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut xs: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

/// A random solution over a continuous domain. Blocks may touch the domain
/// ends or each other at a half-open endpoint.
pub fn random_solution<R: Rng>(
    rng: &mut R,
    params: &SynthParams,
) -> CanonicalSolution<RealNonzeroWithZero> {
    let domain = params.domain;
    let k = rng.random_range(params.blocks.clone());
    let mut cuts = sorted_uniform(rng, domain.lo, domain.hi, 2 * k);
    if cuts.len() % 2 == 1 {
        cuts.pop();
    }

    let mut blocks: Vec<TimeInterval> = Vec::new();
    for pair in cuts.chunks(2) {
        let (mut lo, hi) = (pair[0], pair[1]);
        let mut lo_closed = rng.random_bool(0.5);
        let hi_closed = rng.random_bool(0.5);
        if let Some(prev) = blocks.last() {
            if rng.random_bool(0.3) {
                // touch the previous block at a single endpoint
                lo = prev.hi;
                lo_closed = !prev.hi_closed;
            }
        } else if domain.lo_closed && rng.random_bool(0.2) {
            lo = domain.lo;
        }
        blocks.push(TimeInterval::new(lo, hi, lo_closed, hi_closed));
    }
    if let Some(last) = blocks.last_mut() {
        if rng.random_bool(0.2) {
            last.hi = domain.hi;
            last.hi_closed = domain.hi_closed && rng.random_bool(0.5);
        }
    }

    let charts = blocks
        .iter()
        .map(|b| {
            let kind = params.kinds[rng.random_range(0..params.kinds.len())];
            let n = rng.random_range(2..=6);
            let width = b.hi - b.lo;
            let knots = sorted_uniform(rng, b.lo + 0.01 * width, b.hi - 0.01 * width, n);
            random_chart(rng, kind, knots)
        })
        .collect();

    let system = IntervalSystem::new(domain, blocks).expect("generated blocks are disjoint");
    let mut exceptions = Vec::new();
    let wanted = rng.random_range(0..=params.max_exceptions);
    for _ in 0..20 * wanted {
        if exceptions.len() >= wanted {
            break;
        }
        let x = rng.random_range(domain.lo..domain.hi);
        if system.block_of(x).is_none() {
            exceptions.push(x);
        }
    }
    // open block endpoints are outside every block and make good exceptions
    for b in system.blocks() {
        for (x, closed) in [(b.lo, b.lo_closed), (b.hi, b.hi_closed)] {
            if !closed && domain.contains(x) && system.block_of(x).is_none() && rng.random_bool(0.3) {
                exceptions.push(x);
            }
        }
    }

    CanonicalSolution::new(
        RealNonzeroWithZero::default(),
        system,
        charts,
        DiagonalPolicy::new(rng.random_bool(0.5), exceptions),
    )
    .expect("generated solution is well formed")
}

/// A random solution whose `blocks` blocks each cover at least two grid
/// points. Returns the solution and the grid index range of every block.
/// The block count is capped at `grid.len() / 2`.
pub fn random_grid_solution<R: Rng>(
    rng: &mut R,
    grid: &TimeGrid,
    blocks: usize,
    kinds: &[ChartKind],
) -> (CanonicalSolution<RealNonzeroWithZero>, Vec<IndexRange>) {
    let pts = grid.points();
    let n = pts.len();
    let k = blocks.min(n / 2);
    let mut ends = sample(rng, n, 2 * k).into_vec();
    ends.sort_unstable();
    let ranges: Vec<IndexRange> = ends.chunks(2).map(|p| (p[0], p[1])).collect();

    let domain = grid.hull();
    let mut intervals = Vec::with_capacity(k);
    let mut charts = Vec::with_capacity(k);
    for &(a, b) in &ranges {
        // either sit exactly on the grid point or reach up to 45% into the gap
        let (lo, lo_closed) = if a > 0 && rng.random_bool(0.5) {
            let gap = pts[a] - pts[a - 1];
            (pts[a] - rng.random_range(0.05..0.45) * gap, rng.random_bool(0.5))
        } else {
            (pts[a], true)
        };
        let (hi, hi_closed) = if b + 1 < n && rng.random_bool(0.5) {
            let gap = pts[b + 1] - pts[b];
            (pts[b] + rng.random_range(0.05..0.45) * gap, rng.random_bool(0.5))
        } else {
            (pts[b], true)
        };
        intervals.push(TimeInterval::new(lo, hi, lo_closed, hi_closed));
        let kind = kinds[rng.random_range(0..kinds.len())];
        charts.push(random_chart(rng, kind, pts[a..=b].to_vec()));
    }

    let mut in_block = vec![false; n];
    for &(a, b) in &ranges {
        in_block[a..=b].fill(true);
    }
    let exceptions = (0..n)
        .filter(|&i| !in_block[i] && rng.random_bool(0.3))
        .map(|i| pts[i])
        .collect();
    let system = IntervalSystem::new(domain, intervals).expect("generated blocks are disjoint");
    let sol = CanonicalSolution::new(
        RealNonzeroWithZero::default(),
        system,
        charts,
        DiagonalPolicy::new(rng.random_bool(0.5), exceptions),
    )
    .expect("generated solution is well formed");
    (sol, ranges)
}
