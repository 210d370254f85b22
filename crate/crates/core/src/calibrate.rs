//! Fits a canonical solution to noisy, possibly incomplete observations of
//! `f`. Zeros are structural: they split the grid into groups. Within a
//! group the model `log|y(s,t)| = l(t) - l(s)` is solved by weighted least
//! squares on the observation graph, with signs propagated separately.

use std::collections::{BTreeMap, VecDeque};
use std::io::Read;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{
    CanonicalError, CanonicalSolution, DiagonalPolicy, GrowthChart, Interp, IntervalSystem,
    TimeInterval, TIME_TOL,
};
use crate::codomain::RealNonzeroWithZero;
use crate::factor_table::{FactorError, IndexRange, TimeGrid};

pub const DEFAULT_ZERO_THRESHOLD: f64 = 1e-12;

/// Above this many grid points a group is solved by conjugate gradients.
pub const DENSE_LIMIT: usize = 1000;

/// Laplacians whose second-smallest eigenvalue falls below this are rejected.
pub const MIN_SPECTRAL_GAP: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrateError {
    #[error("observation {index} at ({s}, {t}) is not on the grid")]
    OffGrid { index: usize, s: f64, t: f64 },
    #[error("observation {index} has s > t ({s} > {t})")]
    Unordered { index: usize, s: f64, t: f64 },
    #[error("observation {index} has invalid weight {weight}")]
    BadWeight { index: usize, weight: f64 },
    #[error("observation {index} has non-finite value")]
    NotFinite { index: usize },
    #[error("zero observation {zero} lies inside the span of non-zero observations (group {lo}..={hi})")]
    NonIntervalSupport { zero: usize, lo: usize, hi: usize },
    #[error("calibration failed in {} group(s): {}", .0.len(), .0.iter().map(|f| format!("group {}: {}", f.group, f.error)).collect::<Vec<_>>().join("; "))]
    Groups(Vec<GroupFailure>),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("assembling the solution failed: {0}")]
    Assemble(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupFailure {
    pub group: usize,
    pub error: GroupError,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroupError {
    #[error("signs are inconsistent around observations {cycle:?}")]
    SignInconsistency { cycle: Vec<usize> },
    #[error("observation graph splits into {} components", .components.len())]
    DisconnectedGroup { components: Vec<Vec<usize>> },
    #[error("Laplacian is ill-conditioned (spectral gap {lambda2:e})")]
    IllConditioned { lambda2: f64 },
    #[error("conjugate gradients did not converge in {iterations} iterations")]
    NotConverged { iterations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub s: f64,
    pub t: f64,
    pub y: f64,
    pub weight: f64,
}

impl Observation {
    pub fn new(s: f64, t: f64, y: f64) -> Self {
        Self {
            s,
            t,
            y,
            weight: 1.0,
        }
    }

    pub fn weighted(s: f64, t: f64, y: f64, weight: f64) -> Self {
        Self { s, t, y, weight }
    }
}

/// An observation snapped to grid indices `i <= j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridObservation {
    pub i: usize,
    pub j: usize,
    pub y: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationProblem {
    grid: TimeGrid,
    observations: Vec<GridObservation>,
    pub zero_threshold: f64,
    pub max_iter: usize,
    pub solver_tol: f64,
}

impl CalibrationProblem {
    pub fn new(
        grid: TimeGrid,
        observations: &[Observation],
        zero_threshold: f64,
    ) -> Result<Self, CalibrateError> {
        let mut snapped = Vec::with_capacity(observations.len());
        for (index, o) in observations.iter().enumerate() {
            if !o.y.is_finite() {
                return Err(CalibrateError::NotFinite { index });
            }
            if !(o.weight > 0.0 && o.weight.is_finite()) {
                return Err(CalibrateError::BadWeight {
                    index,
                    weight: o.weight,
                });
            }
            if o.s > o.t + TIME_TOL {
                return Err(CalibrateError::Unordered {
                    index,
                    s: o.s,
                    t: o.t,
                });
            }
            let off = || CalibrateError::OffGrid {
                index,
                s: o.s,
                t: o.t,
            };
            let i = grid.index_of(o.s).ok_or_else(off)?;
            let j = grid.index_of(o.t).ok_or_else(off)?;
            snapped.push(GridObservation {
                i,
                j,
                y: o.y,
                weight: o.weight,
            });
        }
        Ok(Self {
            grid,
            observations: snapped,
            zero_threshold,
            max_iter: 10_000,
            solver_tol: 1e-12,
        })
    }

    /// Uses the distinct observation times as the grid.
    pub fn from_observations(
        observations: &[Observation],
        zero_threshold: f64,
    ) -> Result<Self, CalibrateError> {
        let mut times: Vec<f64> = observations.iter().flat_map(|o| [o.s, o.t]).collect();
        times.sort_by(f64::total_cmp);
        times.dedup_by(|a, b| (*a - *b).abs() <= TIME_TOL);
        let grid = match TimeGrid::new(times) {
            Ok(g) => g,
            Err(FactorError::EmptyGrid) => TimeGrid::new(vec![0.0]).expect("single point grid"),
            Err(e) => return Err(CalibrateError::Parse(e.to_string())),
        };
        Self::new(grid, observations, zero_threshold)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn observations(&self) -> &[GridObservation] {
        &self.observations
    }

    fn is_zero(&self, y: f64) -> bool {
        y.abs() <= self.zero_threshold
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Partition {
    /// Grid index ranges connected by non-zero observations.
    pub groups: Vec<IndexRange>,
    /// Observed structural zeros off the diagonal, as grid index pairs.
    pub zero_edges: Vec<IndexRange>,
    /// Observations dropped by tie-breaking, by input index.
    pub rejected: Vec<usize>,
    /// Off-group points observed with a diagonal factor of one.
    pub diagonal_ones: Vec<usize>,
}

/// Splits the grid into groups at structural zeros.
pub fn partition_by_zeros(problem: &CalibrationProblem) -> Result<Partition, CalibrateError> {
    let obs = problem.observations();
    let mut by_pair: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (k, o) in obs.iter().enumerate() {
        by_pair.entry((o.i, o.j)).or_default().push(k);
    }

    let mut rejected = Vec::new();
    let mut nonzero_pairs = Vec::new();
    let mut zero_pairs = Vec::new();
    for (&pair, members) in &by_pair {
        let (zeros, nonzeros): (Vec<usize>, Vec<usize>) =
            members.iter().partition(|&&k| problem.is_zero(obs[k].y));
        if zeros.is_empty() {
            nonzero_pairs.push(pair);
        } else if nonzeros.is_empty() {
            zero_pairs.push((pair, zeros[0]));
        } else if nonzeros
            .iter()
            .any(|&k| obs[k].y.abs() > 10.0 * problem.zero_threshold)
        {
            rejected.extend(zeros);
            nonzero_pairs.push(pair);
        } else {
            rejected.extend(members.iter().copied());
        }
    }

    let mut spans: Vec<IndexRange> = nonzero_pairs.iter().copied().filter(|(i, j)| i < j).collect();
    spans.sort_unstable();
    let mut groups: Vec<IndexRange> = Vec::new();
    for (lo, hi) in spans {
        match groups.last_mut() {
            // spans sharing even one grid point belong to the same block
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => groups.push((lo, hi)),
        }
    }
    let group_of = |x: usize| groups.iter().position(|&(lo, hi)| lo <= x && x <= hi);

    let mut zero_edges = Vec::new();
    let mut diagonal_ones = Vec::new();
    for ((i, j), k) in zero_pairs {
        if i == j {
            if group_of(i).is_some() {
                rejected.push(k);
            }
            continue;
        }
        if let Some(g) = group_of(i).filter(|&g| group_of(j) == Some(g)) {
            let (lo, hi) = groups[g];
            return Err(CalibrateError::NonIntervalSupport { zero: k, lo, hi });
        }
        zero_edges.push((i, j));
    }
    for &(i, j) in &nonzero_pairs {
        if i == j && group_of(i).is_none() {
            diagonal_ones.push(i);
        }
    }
    rejected.sort_unstable();
    Ok(Partition {
        groups,
        zero_edges,
        rejected,
        diagonal_ones,
    })
}

/// An observation inside one group, in group-local point indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupEdge {
    pub a: usize,
    pub b: usize,
    pub y: f64,
    pub weight: f64,
    /// Index of the originating observation.
    pub obs: usize,
}

/// Assigns `sigma[i] ∈ {+1, -1}` with `sigma[a]·sigma[b] = sign(y)` on every
/// edge. Each connected component is rooted at its smallest index with
/// sign `+1`; a BFS tree fixes the signs and the remaining edges verify them.
pub fn propagate_signs(n: usize, edges: &[GroupEdge]) -> Result<Vec<i8>, GroupError> {
    let mut adj = vec![Vec::new(); n];
    for (e, edge) in edges.iter().enumerate() {
        adj[edge.a].push(e);
        adj[edge.b].push(e);
    }
    let mut sign = vec![0i8; n];
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut depth = vec![0usize; n];
    let mut tree = vec![false; edges.len()];
    for root in 0..n {
        if sign[root] != 0 {
            continue;
        }
        sign[root] = 1;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &e in &adj[u] {
                let edge = &edges[e];
                let v = if edge.a == u { edge.b } else { edge.a };
                if sign[v] == 0 {
                    sign[v] = sign[u] * if edge.y < 0.0 { -1 } else { 1 };
                    parent[v] = Some(e);
                    depth[v] = depth[u] + 1;
                    tree[e] = true;
                    queue.push_back(v);
                }
            }
        }
    }

    for (e, edge) in edges.iter().enumerate() {
        let expect = if edge.y < 0.0 { -1 } else { 1 };
        if tree[e] || sign[edge.a] * sign[edge.b] == expect {
            continue;
        }
        // walk both endpoints up to their common ancestor
        let mut cycle = vec![edge.obs];
        let (mut u, mut v) = (edge.a, edge.b);
        let step = |x: &mut usize, cycle: &mut Vec<usize>| {
            let pe = parent[*x].expect("non-root has a parent edge");
            cycle.push(edges[pe].obs);
            *x = if edges[pe].a == *x { edges[pe].b } else { edges[pe].a };
        };
        while depth[u] > depth[v] {
            step(&mut u, &mut cycle);
        }
        while depth[v] > depth[u] {
            step(&mut v, &mut cycle);
        }
        while u != v {
            step(&mut u, &mut cycle);
            step(&mut v, &mut cycle);
        }
        return Err(GroupError::SignInconsistency { cycle });
    }
    Ok(sign)
}

fn components(n: usize, edges: &[GroupEdge]) -> Vec<Vec<usize>> {
    let mut comp = vec![usize::MAX; n];
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        adj[e.a].push(e.b);
        adj[e.b].push(e.a);
    }
    let mut out = Vec::new();
    for root in 0..n {
        if comp[root] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut members = vec![root];
        comp[root] = id;
        let mut k = 0;
        while k < members.len() {
            let u = members[k];
            for &v in &adj[u] {
                if comp[v] == usize::MAX {
                    comp[v] = id;
                    members.push(v);
                }
            }
            k += 1;
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogFit {
    /// `l[i] = log|d(t_i)|`, with `l[anchor] = 0`.
    pub log_chart: Vec<f64>,
    /// `log|y| - (l[b] - l[a])` per edge.
    pub residuals: Vec<f64>,
}

/// Minimizes `Σ w·(log|y| - (l[b] - l[a]))²` subject to `l[anchor] = 0`.
/// The normal equations are the weighted graph Laplacian of the edges.
pub fn solve_log_least_squares(
    n: usize,
    edges: &[GroupEdge],
    anchor: usize,
    max_iter: usize,
    tol: f64,
) -> Result<LogFit, GroupError> {
    let comps = components(n, edges);
    if comps.len() > 1 {
        return Err(GroupError::DisconnectedGroup { components: comps });
    }
    let mut rhs = vec![0.0; n];
    for e in edges {
        let target = e.y.abs().ln();
        rhs[e.b] += e.weight * target;
        rhs[e.a] -= e.weight * target;
    }
    let log_chart = if n == 1 {
        vec![0.0]
    } else if n <= DENSE_LIMIT {
        solve_dense(n, edges, anchor, &rhs)?
    } else {
        solve_cg(n, edges, anchor, &rhs, max_iter, tol)?
    };
    let residuals = edges
        .iter()
        .map(|e| e.y.abs().ln() - (log_chart[e.b] - log_chart[e.a]))
        .collect();
    Ok(LogFit {
        log_chart,
        residuals,
    })
}

fn solve_dense(n: usize, edges: &[GroupEdge], anchor: usize, rhs: &[f64]) -> Result<Vec<f64>, GroupError> {
    let mut lap = DMatrix::<f64>::zeros(n, n);
    for e in edges {
        if e.a == e.b {
            continue;
        }
        lap[(e.a, e.a)] += e.weight;
        lap[(e.b, e.b)] += e.weight;
        lap[(e.a, e.b)] -= e.weight;
        lap[(e.b, e.a)] -= e.weight;
    }
    let mut eig = lap.clone().symmetric_eigenvalues().as_slice().to_vec();
    eig.sort_by(f64::total_cmp);
    let lambda2 = eig[1];
    if lambda2 < MIN_SPECTRAL_GAP {
        return Err(GroupError::IllConditioned { lambda2 });
    }
    let keep: Vec<usize> = (0..n).filter(|&i| i != anchor).collect();
    let reduced = DMatrix::from_fn(n - 1, n - 1, |r, c| lap[(keep[r], keep[c])]);
    let b = DVector::from_iterator(n - 1, keep.iter().map(|&i| rhs[i]));
    let x = reduced
        .cholesky()
        .ok_or(GroupError::IllConditioned { lambda2 })?
        .solve(&b);
    let mut out = vec![0.0; n];
    for (r, &i) in keep.iter().enumerate() {
        out[i] = x[r];
    }
    Ok(out)
}

/// Jacobi-preconditioned CG on the Laplacian with `l[anchor]` pinned to 0.
fn solve_cg(
    n: usize,
    edges: &[GroupEdge],
    anchor: usize,
    rhs: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<Vec<f64>, GroupError> {
    let apply = |x: &[f64], out: &mut [f64]| {
        out.fill(0.0);
        for e in edges {
            let d = e.weight * (x[e.b] - x[e.a]);
            out[e.b] += d;
            out[e.a] -= d;
        }
        out[anchor] = 0.0;
    };
    let mut diag = vec![0.0; n];
    for e in edges {
        if e.a != e.b {
            diag[e.a] += e.weight;
            diag[e.b] += e.weight;
        }
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let mut x = vec![0.0; n];
    let mut r: Vec<f64> = rhs.to_vec();
    r[anchor] = 0.0;
    let norm_b = dot(&r, &r).sqrt().max(f64::MIN_POSITIVE);
    let precond = |r: &[f64]| -> Vec<f64> {
        r.iter()
            .zip(&diag)
            .map(|(v, d)| if *d > 0.0 { v / d } else { 0.0 })
            .collect()
    };
    let mut z = precond(&r);
    z[anchor] = 0.0;
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        if dot(&r, &r).sqrt() <= tol * norm_b {
            return Ok(x);
        }
        apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        z = precond(&r);
        z[anchor] = 0.0;
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if dot(&r, &r).sqrt() <= tol * norm_b {
        return Ok(x);
    }
    Err(GroupError::NotConverged {
        iterations: max_iter,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub solution: CanonicalSolution<RealNonzeroWithZero>,
    pub rms_residual: f64,
    pub sign_consistent: bool,
    pub rejected_observations: Vec<usize>,
    pub groups: Vec<IndexRange>,
    pub zero_edges: Vec<IndexRange>,
    pub sign_flips: usize,
}

/// Solves one group, splitting it into connected components when the
/// observation graph does not reach every point. Each component keeps its
/// own gauge.
fn fit_group(
    problem: &CalibrationProblem,
    n: usize,
    edges: &[GroupEdge],
) -> Result<(Vec<f64>, Vec<f64>), GroupError> {
    let signs = propagate_signs(n, edges)?;
    let mut log_chart = vec![0.0; n];
    let mut residuals = Vec::with_capacity(edges.len());
    match solve_log_least_squares(n, edges, 0, problem.max_iter, problem.solver_tol) {
        Ok(fit) => {
            log_chart = fit.log_chart;
            residuals = fit.residuals;
        }
        Err(GroupError::DisconnectedGroup { components }) => {
            for members in components {
                let mut local = vec![usize::MAX; n];
                for (k, &m) in members.iter().enumerate() {
                    local[m] = k;
                }
                let sub: Vec<GroupEdge> = edges
                    .iter()
                    .filter(|e| local[e.a] != usize::MAX)
                    .map(|e| GroupEdge {
                        a: local[e.a],
                        b: local[e.b],
                        ..*e
                    })
                    .collect();
                let fit =
                    solve_log_least_squares(members.len(), &sub, 0, problem.max_iter, problem.solver_tol)?;
                for (k, &m) in members.iter().enumerate() {
                    log_chart[m] = fit.log_chart[k];
                }
                residuals.extend(fit.residuals);
            }
        }
        Err(e) => return Err(e),
    }
    let chart = log_chart
        .iter()
        .zip(&signs)
        .map(|(l, &s)| f64::from(s) * l.exp())
        .collect();
    Ok((chart, residuals))
}

/// partition_by_zeros → propagate_signs → solve_log_least_squares per group,
/// assembled into knot-only charts `d(t_i) = sigma_i · exp(l_i)`.
pub fn calibrate(problem: &CalibrationProblem) -> Result<CalibrationResult, CalibrateError> {
    let partition = partition_by_zeros(problem)?;
    let obs = problem.observations();
    let pts = problem.grid().points();
    let rejected: std::collections::BTreeSet<usize> = partition.rejected.iter().copied().collect();

    let mut failures = Vec::new();
    let mut blocks = Vec::new();
    let mut charts = Vec::new();
    let mut residuals = Vec::new();
    let mut sign_flips = 0;
    for (gi, &(lo, hi)) in partition.groups.iter().enumerate() {
        let edges: Vec<GroupEdge> = obs
            .iter()
            .enumerate()
            .filter(|(k, o)| {
                !rejected.contains(k) && o.i < o.j && lo <= o.i && o.j <= hi && !problem.is_zero(o.y)
            })
            .map(|(k, o)| GroupEdge {
                a: o.i - lo,
                b: o.j - lo,
                y: o.y,
                weight: o.weight,
                obs: k,
            })
            .collect();
        match fit_group(problem, hi - lo + 1, &edges) {
            Ok((chart, res)) => {
                sign_flips += chart.iter().filter(|d| **d < 0.0).count();
                residuals.extend(res);
                blocks.push(TimeInterval::closed(pts[lo], pts[hi]));
                charts.push(GrowthChart::tabulated(pts[lo..=hi].to_vec(), chart, Interp::None));
            }
            Err(error) => failures.push(GroupFailure { group: gi, error }),
        }
    }
    if !failures.is_empty() {
        return Err(CalibrateError::Groups(failures));
    }

    let assemble = |e: CanonicalError| CalibrateError::Assemble(e.to_string());
    let system = IntervalSystem::new(problem.grid().hull(), blocks).map_err(assemble)?;
    let exceptions = partition.diagonal_ones.iter().map(|&i| pts[i]).collect();
    let solution = CanonicalSolution::new(
        RealNonzeroWithZero::default(),
        system,
        charts,
        DiagonalPolicy::new(false, exceptions),
    )
    .map_err(assemble)?;

    let rms_residual = if residuals.is_empty() {
        0.0
    } else {
        (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt()
    };
    Ok(CalibrationResult {
        solution,
        rms_residual,
        sign_consistent: true,
        rejected_observations: partition.rejected,
        groups: partition.groups,
        zero_edges: partition.zero_edges,
        sign_flips,
    })
}

#[derive(Debug, Deserialize)]
struct ObservationRow {
    s: f64,
    t: f64,
    value: f64,
    #[serde(default)]
    weight: Option<f64>,
}

/// Parses `s,t,value[,weight]` CSV.
pub fn read_observations_csv<R: Read>(reader: R) -> Result<Vec<Observation>, CalibrateError> {
    let parse = |e: csv::Error| CalibrateError::Parse(e.to_string());
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers().map_err(parse)?.iter().map(str::to_string).collect();
    if headers.len() < 3 || headers[..3] != ["s", "t", "value"] || headers.len() > 4 {
        return Err(CalibrateError::Parse(format!(
            "expected header s,t,value[,weight], got {}",
            headers.join(",")
        )));
    }
    rdr.deserialize()
        .map(|row| {
            let r: ObservationRow = row.map_err(parse)?;
            Ok(Observation::weighted(r.s, r.t, r.value, r.weight.unwrap_or(1.0)))
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct CalibrationReport {
    pub rms_residual: f64,
    pub groups: Vec<IndexRange>,
    pub rejected: Vec<usize>,
    pub sign_flips: usize,
}

#[derive(Debug, Serialize)]
pub struct CalibrationDoc {
    #[serde(flatten)]
    pub solution: crate::canonical::SolutionDoc,
    pub calibration_report: CalibrationReport,
}

impl CalibrationResult {
    pub fn to_doc(&self) -> CalibrationDoc {
        CalibrationDoc {
            solution: self.solution.to_doc(),
            calibration_report: CalibrationReport {
                rms_residual: self.rms_residual,
                groups: self.groups.clone(),
                rejected: self.rejected_observations.clone(),
                sign_flips: self.sign_flips,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(obs: &[Observation]) -> CalibrationProblem {
        CalibrationProblem::from_observations(obs, DEFAULT_ZERO_THRESHOLD).unwrap()
    }

    fn edges(list: &[(usize, usize, f64)]) -> Vec<GroupEdge> {
        list.iter()
            .enumerate()
            .map(|(k, &(a, b, y))| GroupEdge {
                a,
                b,
                y,
                weight: 1.0,
                obs: k,
            })
            .collect()
    }

    /// Every sign vector with `sigma[0] = +1` that satisfies all edges.
    fn brute_force_signs(n: usize, e: &[GroupEdge]) -> Vec<Vec<i8>> {
        (0..1u32 << n)
            .map(|mask| {
                (0..n)
                    .map(|i| if mask >> i & 1 == 1 { -1 } else { 1 })
                    .collect::<Vec<i8>>()
            })
            .filter(|s| s[0] == 1)
            .filter(|s| {
                e.iter()
                    .all(|x| s[x.a] * s[x.b] == if x.y < 0.0 { -1 } else { 1 })
            })
            .collect()
    }

    #[test]
    fn partition_examples() {
        let p = problem(&[
            Observation::new(0.0, 1.0, 0.9),
            Observation::new(1.0, 2.0, 1.1),
            Observation::new(2.0, 3.0, 0.0),
        ]);
        let part = partition_by_zeros(&p).unwrap();
        assert_eq!(part.groups, vec![(0, 2)]);
        assert_eq!(part.zero_edges, vec![(2, 3)]);

        let p = problem(&[Observation::new(0.0, 2.0, 0.95), Observation::new(0.0, 1.0, 0.0)]);
        assert!(matches!(
            partition_by_zeros(&p),
            Err(CalibrateError::NonIntervalSupport { zero: 1, lo: 0, hi: 2 })
        ));

        let p = problem(&[Observation::new(0.0, 1.0, 0.0), Observation::new(1.0, 2.0, 0.0)]);
        let part = partition_by_zeros(&p).unwrap();
        assert!(part.groups.is_empty());
        let res = calibrate(&p).unwrap();
        assert!(res.solution.blocks().is_empty());
        assert_eq!(res.rms_residual, 0.0);
    }

    #[test]
    fn conflicting_zero_and_nonzero_observations() {
        // a clear non-zero beats the zero reading
        let p = problem(&[Observation::new(0.0, 1.0, 0.0), Observation::new(0.0, 1.0, 1.2)]);
        let part = partition_by_zeros(&p).unwrap();
        assert_eq!(part.rejected, vec![0]);
        assert_eq!(part.groups, vec![(0, 1)]);
        // a near-threshold non-zero does not: the whole pair is dropped
        let p = problem(&[Observation::new(0.0, 1.0, 0.0), Observation::new(0.0, 1.0, 5e-12)]);
        let part = partition_by_zeros(&p).unwrap();
        assert_eq!(part.rejected, vec![0, 1]);
        assert!(part.groups.is_empty());
    }

    #[test]
    fn overlapping_spans_merge() {
        let p = problem(&[
            Observation::new(0.0, 2.0, 1.0),
            Observation::new(2.0, 4.0, 1.0),
            Observation::new(5.0, 6.0, 1.0),
        ]);
        assert_eq!(partition_by_zeros(&p).unwrap().groups, vec![(0, 2), (3, 4)]);
    }

    #[test]
    fn sign_examples_match_brute_force() {
        let e = edges(&[(0, 1, 2.0), (1, 2, 0.5), (0, 2, 1.0)]);
        assert_eq!(propagate_signs(3, &e).unwrap(), vec![1, 1, 1]);

        let e = edges(&[(0, 1, -2.0), (1, 2, -0.5), (0, 2, 1.0)]);
        let s = propagate_signs(3, &e).unwrap();
        assert_eq!(s, vec![1, -1, 1]);
        assert_eq!(brute_force_signs(3, &e), vec![s]);

        let e = edges(&[(0, 1, -1.0), (1, 2, -1.0), (0, 2, -1.0)]);
        assert!(brute_force_signs(3, &e).is_empty());
        match propagate_signs(3, &e) {
            Err(GroupError::SignInconsistency { mut cycle }) => {
                cycle.sort_unstable();
                assert_eq!(cycle, vec![0, 1, 2]);
            }
            other => panic!("expected inconsistency, got {:?}", other),
        }
    }

    #[test]
    fn least_squares_examples() {
        // exact data from d = [1, 0.5, 1]
        let e = edges(&[(0, 1, 0.5), (1, 2, 2.0), (0, 2, 1.0)]);
        let fit = solve_log_least_squares(3, &e, 0, 100, 1e-12).unwrap();
        assert!(fit.log_chart[0].abs() < 1e-15);
        assert!((fit.log_chart[1] - 0.5f64.ln()).abs() < 1e-12);
        assert!(fit.log_chart[2].abs() < 1e-12);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-12));

        let e = edges(&[(0, 1, 3.0)]);
        let fit = solve_log_least_squares(2, &e, 0, 100, 1e-12).unwrap();
        assert!((fit.log_chart[1] - 3f64.ln()).abs() < 1e-14);

        // geometric mean of contradictory duplicates
        let e = edges(&[(0, 1, 2.0), (0, 1, 8.0)]);
        let fit = solve_log_least_squares(2, &e, 0, 100, 1e-12).unwrap();
        assert!((fit.log_chart[1] - 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn disconnected_group_reports_components() {
        let e = edges(&[(0, 2, 1.5)]);
        match solve_log_least_squares(3, &e, 0, 100, 1e-12) {
            Err(GroupError::DisconnectedGroup { components }) => {
                assert_eq!(components, vec![vec![0, 2], vec![1]])
            }
            other => panic!("unexpected {:?}", other),
        }
        // calibrate solves the components separately
        let p = problem(&[Observation::new(0.0, 2.0, 1.5), Observation::new(1.0, 1.0, 1.0)]);
        let res = calibrate(&p).unwrap();
        assert!((res.solution.evaluate(0.0, 2.0).unwrap() - 1.5).abs() < 1e-12);
        assert!(res.solution.evaluate(0.0, 1.0).unwrap() != 0.0);
    }

    #[test]
    fn conjugate_gradient_matches_dense() {
        let n = 40;
        let mut list = Vec::new();
        for i in 0..n - 1 {
            list.push((i, i + 1, 1.0 + 0.01 * i as f64));
            if i + 3 < n {
                list.push((i, i + 3, 0.9 + 0.02 * i as f64));
            }
        }
        let e = edges(&list);
        let mut rhs = vec![0.0; n];
        for x in &e {
            rhs[x.b] += x.y.ln();
            rhs[x.a] -= x.y.ln();
        }
        let dense = solve_dense(n, &e, 0, &rhs).unwrap();
        let cg = solve_cg(n, &e, 0, &rhs, 10_000, 1e-14).unwrap();
        for (a, b) in dense.iter().zip(&cg) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn weight_pulls_residual_toward_zero() {
        // three points, inconsistent triangle; oracle solves the 2x2 normal
        // equations for (l1, l2) with l0 = 0 by Cramer's rule
        let ys = [(0usize, 1usize, 1.2f64), (1, 2, 1.1), (0, 2, 1.5)];
        let oracle = |w: [f64; 3]| {
            let (a, b, c) = (ys[0].2.ln(), ys[1].2.ln(), ys[2].2.ln());
            // rows: d/dl1, d/dl2 of Σ w (y - (l_j - l_i))²
            let m11 = w[0] + w[1];
            let m12 = -w[1];
            let m22 = w[1] + w[2];
            let r1 = w[0] * a - w[1] * b;
            let r2 = w[1] * b + w[2] * c;
            let det = m11 * m22 - m12 * m12;
            let l1 = (r1 * m22 - m12 * r2) / det;
            let l2 = (m11 * r2 - m12 * r1) / det;
            [a - l1, b - (l2 - l1), c - l2]
        };
        let mut prev = f64::INFINITY;
        for w in [0.5, 1.0, 2.0, 5.0, 50.0] {
            let weights = [1.0, 1.0, w];
            let e: Vec<GroupEdge> = ys
                .iter()
                .zip(weights)
                .enumerate()
                .map(|(k, (&(a, b, y), weight))| GroupEdge {
                    a,
                    b,
                    y,
                    weight,
                    obs: k,
                })
                .collect();
            let fit = solve_log_least_squares(3, &e, 0, 100, 1e-12).unwrap();
            let expect = oracle(weights);
            for (got, want) in fit.residuals.iter().zip(expect) {
                assert!((got - want).abs() < 1e-12);
            }
            let r = fit.residuals[2].abs();
            assert!(r <= prev);
            prev = r;
        }
    }

    #[test]
    fn calibrated_solution_reproduces_signed_data() {
        let d = [1.0, -0.5, 2.0, 1.5];
        let mut obs = Vec::new();
        for i in 0..4 {
            for j in i + 1..4 {
                obs.push(Observation::new(i as f64, j as f64, d[j] / d[i]));
            }
        }
        obs.push(Observation::new(3.0, 4.0, 0.0));
        obs.push(Observation::new(4.0, 4.0, 1.0));
        let res = calibrate(&problem(&obs)).unwrap();
        assert_eq!(res.groups, vec![(0, 3)]);
        assert_eq!(res.sign_flips, 1);
        assert!(res.rms_residual < 1e-12);
        for i in 0..4 {
            for j in i + 1..4 {
                let f = res.solution.evaluate(i as f64, j as f64).unwrap();
                assert!((f - d[j] / d[i]).abs() < 1e-12);
            }
        }
        assert_eq!(res.solution.evaluate(4.0, 4.0).unwrap(), 1.0);
        assert_eq!(res.solution.evaluate(2.0, 4.0).unwrap(), 0.0);
    }

    #[test]
    fn gauge_scaling_of_truth_does_not_move_fit() {
        let d = [0.8, 1.1, 1.3, 0.9];
        let fit_for = |c: f64| {
            let mut obs = Vec::new();
            for i in 0..4 {
                for j in i + 1..4 {
                    let noise = 1.0 + 0.01 * ((i * 7 + j * 3) % 5) as f64;
                    obs.push(Observation::new(i as f64, j as f64, (c * d[j]) / (c * d[i]) * noise));
                }
            }
            calibrate(&problem(&obs)).unwrap().solution
        };
        let base = fit_for(1.0);
        for c in [-3.0, 0.01, 250.0] {
            let other = fit_for(c);
            for i in 0..4 {
                for j in i..4 {
                    let (a, b) = (
                        base.evaluate(i as f64, j as f64).unwrap(),
                        other.evaluate(i as f64, j as f64).unwrap(),
                    );
                    assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn observations_csv() {
        let text = "s,t,value,weight\n0,1,1.1,2\n1,2,0.9,\n";
        let obs = read_observations_csv(text.as_bytes()).unwrap();
        assert_eq!(obs[0], Observation::weighted(0.0, 1.0, 1.1, 2.0));
        assert_eq!(obs[1].weight, 1.0);
        let text = "s,t,value\n0,1,1.1\n";
        assert_eq!(read_observations_csv(text.as_bytes()).unwrap().len(), 1);
        assert!(read_observations_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn ingestion_errors() {
        let grid = TimeGrid::uniform(0.0, 1.0, 3).unwrap();
        let e = CalibrationProblem::new(grid.clone(), &[Observation::new(0.5, 1.0, 1.0)], 1e-12);
        assert!(matches!(e, Err(CalibrateError::OffGrid { index: 0, .. })));
        let e = CalibrationProblem::new(grid.clone(), &[Observation::new(2.0, 1.0, 1.0)], 1e-12);
        assert!(matches!(e, Err(CalibrateError::Unordered { .. })));
        let e = CalibrationProblem::new(grid, &[Observation::weighted(0.0, 1.0, 1.0, 0.0)], 1e-12);
        assert!(matches!(e, Err(CalibrateError::BadWeight { .. })));
    }
}
