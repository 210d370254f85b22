//! Factors `f(t_i, t_j)` tabulated on a finite grid: consistency checking,
//! structural-zero classification, block discovery and decomposition back
//! into canonical form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical::{
    CanonicalError, CanonicalSolution, DiagonalPolicy, GrowthChart, Interp,
    IntervalSystem, TimeInterval, TIME_TOL,
};
use crate::codomain::{
    CodomainError, CodomainTag, GroupWithZero, InvertibleMatrixWithZero, RealNonzeroWithZero,
};

pub const DEFAULT_SINCOV_TOL: f64 = 1e-9;

/// Relative slack for the `f >= 1` and monotonicity tests of the classic
/// case, absorbing rounding in `d(x)⁻¹·d(y)`.
pub const CLASSIC_TOL: f64 = 1e-12;

/// Inclusive grid index range `(lo, hi)` of a block.
pub type IndexRange = (usize, usize);

#[derive(Debug, Error)]
pub enum FactorError {
    #[error("grid must hold at least one point")]
    EmptyGrid,
    #[error("grid is not strictly increasing at index {0}")]
    UnsortedGrid(usize),
    #[error("table has {got} entries, expected {expected}")]
    WrongEntryCount { got: usize, expected: usize },
    #[error("missing pair ({s}, {t})")]
    MissingPair { s: f64, t: f64 },
    #[error("duplicate pair ({s}, {t})")]
    DuplicatePair { s: f64, t: f64 },
    #[error("pair ({s}, {t}) is not ordered")]
    UnorderedPair { s: f64, t: f64 },
    #[error("table is not a Sincov solution (max error {:e})", .0.max_error)]
    NotSincov(Box<ConsistencyReport>),
    #[error("non-zero set is not interval structured: v[{i}][{k}] contradicts the superdiagonal")]
    InconsistentZeroPattern { i: usize, k: usize },
    #[error("range ({0}, {1}) is not a non-trivial block range")]
    TrivialRange(usize, usize),
    #[error("anchor {anchor} lies outside the range ({lo}, {hi})")]
    AnchorOutsideRange { anchor: usize, lo: usize, hi: usize },
    #[error("zero factor inside block at ({0}, {1})")]
    ZeroInsideBlock(usize, usize),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Codomain(#[from] CodomainError),
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self, FactorError> {
        if points.is_empty() {
            return Err(FactorError::EmptyGrid);
        }
        if let Some(i) = (1..points.len()).find(|&i| !(points[i] > points[i - 1])) {
            return Err(FactorError::UnsortedGrid(i));
        }
        Ok(Self { points })
    }

    /// `n` evenly spaced points starting at `start`.
    pub fn uniform(start: f64, step: f64, n: usize) -> Result<Self, FactorError> {
        Self::new((0..n).map(|i| start + step * i as f64).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = self.points.partition_point(|&p| p < t - TIME_TOL);
        (k < self.points.len() && (self.points[k] - t).abs() <= TIME_TOL).then_some(k)
    }

    /// The closed hull `[t_0, t_{n-1}]`.
    pub fn hull(&self) -> TimeInterval {
        TimeInterval::closed(self.points[0], self.points[self.points.len() - 1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub zero_tol: f64,
    pub sincov_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            zero_tol: crate::codomain::DEFAULT_ZERO_TOL,
            sincov_tol: DEFAULT_SINCOV_TOL,
        }
    }
}

/// Upper-triangular table `v[i][j]`, `i <= j`, packed row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTable<G: GroupWithZero> {
    codomain: G,
    grid: TimeGrid,
    values: Vec<G::Elem>,
}

fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

impl<G: GroupWithZero> FactorTable<G> {
    pub fn from_fn<F>(codomain: G, grid: TimeGrid, mut f: F) -> Result<Self, FactorError>
    where
        F: FnMut(usize, usize) -> Result<G::Elem, FactorError>,
    {
        let n = grid.len();
        let mut values = Vec::with_capacity(packed_len(n));
        for i in 0..n {
            for j in i..n {
                let v = f(i, j)?;
                codomain.check(&v)?;
                values.push(v);
            }
        }
        Ok(Self {
            codomain,
            grid,
            values,
        })
    }

    /// Samples `sol` on every grid pair.
    pub fn from_solution(sol: &CanonicalSolution<G>, grid: TimeGrid) -> Result<Self, FactorError> {
        let pts = grid.points().to_vec();
        Self::from_fn(sol.codomain().clone(), grid, |i, j| {
            Ok(sol.evaluate(pts[i], pts[j])?)
        })
    }

    pub fn codomain(&self) -> &G {
        &self.codomain
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.len()
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        let n = self.n();
        assert!(i <= j && j < n, "index ({}, {}) outside the upper triangle", i, j);
        i * (2 * n - i - 1) / 2 + j
    }

    pub fn get(&self, i: usize, j: usize) -> &G::Elem {
        &self.values[self.offset(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: G::Elem) -> Result<(), FactorError> {
        self.codomain.check(&v)?;
        let k = self.offset(i, j);
        self.values[k] = v;
        Ok(())
    }

    fn is_zero_at(&self, i: usize, j: usize) -> bool {
        self.codomain.is_zero(self.get(i, j))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub lhs: Value,
    pub rhs: Value,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub violations: Vec<Violation>,
    pub max_error: f64,
    pub is_consistent: bool,
}

/// Tests `v[i][j] · v[j][k] ≈ v[i][k]` on every triple `i <= j <= k`.
/// The `i = j = k` triples cover diagonal idempotency.
pub fn check_sincov<G: GroupWithZero>(table: &FactorTable<G>, tol: &Tolerances) -> ConsistencyReport {
    let g = table.codomain();
    let n = table.n();
    let mut violations = Vec::new();
    let mut max_error = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            let vij = table.get(i, j);
            for k in j..n {
                let rhs = table.get(i, k);
                let lhs = g.mul(vij, table.get(j, k)).ok();
                let err = lhs.as_ref().map_or(f64::INFINITY, |l| g.rel_diff(l, rhs));
                max_error = max_error.max(err);
                if !(err <= tol.sincov_tol) {
                    violations.push(Violation {
                        i,
                        j,
                        k,
                        lhs: lhs.map_or(Value::Null, |l| g.encode(&l)),
                        rhs: g.encode(rhs),
                        rel_error: err,
                    });
                }
            }
        }
    }
    ConsistencyReport {
        is_consistent: violations.is_empty(),
        violations,
        max_error,
    }
}

/// Entry whose magnitude sits just above the zero threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AmbiguousEntry {
    pub i: usize,
    pub j: usize,
    pub magnitude: f64,
}

/// Replaces entries with magnitude `<= zero_tol` by the tagged zero and
/// flags entries in `(zero_tol, 10·zero_tol)`.
pub fn zero_classify<G: GroupWithZero>(
    table: &FactorTable<G>,
    tol: &Tolerances,
) -> (FactorTable<G>, Vec<AmbiguousEntry>) {
    let g = table.codomain();
    let mut out = table.clone();
    let mut ambiguous = Vec::new();
    let n = table.n();
    for i in 0..n {
        for j in i..n {
            let Some(m) = g.magnitude(table.get(i, j)) else {
                continue;
            };
            if m <= tol.zero_tol {
                let k = out.offset(i, j);
                out.values[k] = g.zero();
            } else if m < 10.0 * tol.zero_tol {
                ambiguous.push(AmbiguousEntry { i, j, magnitude: m });
            }
        }
    }
    (out, ambiguous)
}

/// Maximal index ranges `(lo, hi)`, `hi > lo`, on which every factor is
/// non-zero. Adjacency along the first superdiagonal decides membership;
/// the rest of the zero pattern is then verified against it.
pub fn find_blocks<G: GroupWithZero>(table: &FactorTable<G>) -> Result<Vec<IndexRange>, FactorError> {
    let n = table.n();
    let mut ranges = Vec::new();
    let mut start = 0;
    for i in 0..n {
        let linked = i + 1 < n && !table.is_zero_at(i, i + 1);
        if !linked {
            if i > start {
                ranges.push((start, i));
            }
            start = i + 1;
        }
    }

    let mut run_of = vec![usize::MAX; n];
    for (r, &(lo, hi)) in ranges.iter().enumerate() {
        run_of[lo..=hi].fill(r);
    }
    for i in 0..n {
        for k in i + 1..n {
            let same = run_of[i] != usize::MAX && run_of[i] == run_of[k];
            if same == table.is_zero_at(i, k) {
                return Err(FactorError::InconsistentZeroPattern { i, k });
            }
        }
    }
    Ok(ranges)
}

/// Reads the chart `d` off one block, gauged so that `d[anchor] = one`:
/// `d[i] = v[anchor][i]` for `i >= anchor` and `d[i] = v[i][anchor]^-1`
/// below it, so that `v[i][j] = d[i]^-1 d[j]`.
pub fn extract_growth_chart<G: GroupWithZero>(
    table: &FactorTable<G>,
    range: IndexRange,
    anchor: usize,
) -> Result<GrowthChart<G::Elem>, FactorError> {
    let (lo, hi) = range;
    if hi <= lo || hi >= table.n() {
        return Err(FactorError::TrivialRange(lo, hi));
    }
    if anchor < lo || anchor > hi {
        return Err(FactorError::AnchorOutsideRange { anchor, lo, hi });
    }
    let g = table.codomain();
    let mut values = Vec::with_capacity(hi - lo + 1);
    for i in lo..=hi {
        let (a, b) = if i >= anchor { (anchor, i) } else { (i, anchor) };
        let v = table.get(a, b);
        if g.is_zero(v) {
            return Err(FactorError::ZeroInsideBlock(a, b));
        }
        values.push(if i >= anchor { v.clone() } else { g.inv(v)? });
    }
    Ok(GrowthChart::tabulated(
        table.grid().points()[lo..=hi].to_vec(),
        values,
        Interp::None,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnchorRule {
    First,
    #[default]
    Middle,
}

impl AnchorRule {
    pub fn pick(self, (lo, hi): IndexRange) -> usize {
        match self {
            AnchorRule::First => lo,
            AnchorRule::Middle => lo + (hi - lo) / 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition<G: GroupWithZero> {
    pub solution: CanonicalSolution<G>,
    pub grid: TimeGrid,
    pub block_index_ranges: Vec<IndexRange>,
    pub residual_max: f64,
    pub ambiguous: Vec<AmbiguousEntry>,
}

/// zero_classify → check_sincov → find_blocks → extract_growth_chart.
pub fn decompose<G: GroupWithZero>(
    table: &FactorTable<G>,
    tol: &Tolerances,
    anchor_rule: AnchorRule,
) -> Result<Decomposition<G>, FactorError> {
    let (classified, ambiguous) = zero_classify(table, tol);
    let report = check_sincov(&classified, tol);
    if !report.is_consistent {
        return Err(FactorError::NotSincov(Box::new(report)));
    }
    let ranges = find_blocks(&classified)?;
    let pts = classified.grid().points();
    let g = classified.codomain();

    let mut blocks = Vec::with_capacity(ranges.len());
    let mut charts = Vec::with_capacity(ranges.len());
    for &range in &ranges {
        charts.push(extract_growth_chart(&classified, range, anchor_rule.pick(range))?);
        blocks.push(TimeInterval::closed(pts[range.0], pts[range.1]));
    }

    let mut in_block = vec![false; pts.len()];
    for &(lo, hi) in &ranges {
        in_block[lo..=hi].fill(true);
    }
    let outside: Vec<(f64, bool)> = (0..pts.len())
        .filter(|&i| !in_block[i])
        .map(|i| (pts[i], !g.is_zero(classified.get(i, i))))
        .collect();
    let ones = outside.iter().filter(|(_, one)| *one).count();
    let default_one = 2 * ones > outside.len();
    let exceptions = outside
        .iter()
        .filter(|(_, one)| *one != default_one)
        .map(|(t, _)| *t)
        .collect();

    let system = IntervalSystem::new(classified.grid().hull(), blocks)?;
    let solution = CanonicalSolution::new(
        g.clone(),
        system,
        charts,
        DiagonalPolicy::new(default_one, exceptions),
    )?;

    let mut residual_max = 0.0_f64;
    for i in 0..pts.len() {
        for j in i..pts.len() {
            let fitted = solution.evaluate(pts[i], pts[j])?;
            residual_max = residual_max.max(g.rel_diff(table.get(i, j), &fitted));
        }
    }

    Ok(Decomposition {
        solution,
        grid: classified.grid().clone(),
        block_index_ranges: ranges,
        residual_max,
        ambiguous,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClassicReport {
    pub single_block: bool,
    pub factors_at_least_one: bool,
    pub chart_non_decreasing: bool,
    pub classic: bool,
}

/// Whether a decomposition is the non-negative-interest regime: one block
/// over the whole grid, every factor `>= 1`, and a non-decreasing chart.
pub fn detect_classic_case<G: GroupWithZero>(dec: &Decomposition<G>) -> ClassicReport {
    let n = dec.grid.len();
    let single_block = dec.block_index_ranges == [(0, n.saturating_sub(1))] && n >= 2;
    let g = dec.solution.codomain();
    let pts = dec.grid.points();

    let factors_at_least_one = (0..n).all(|i| {
        (i..n).all(|j| {
            dec.solution
                .evaluate(pts[i], pts[j])
                .ok()
                .and_then(|v| g.to_real(&v))
                .is_some_and(|x| x >= 1.0 - CLASSIC_TOL)
        })
    });

    let chart_non_decreasing = single_block
        && match &dec.solution.charts()[0] {
            GrowthChart::Tabulated { values, .. } => {
                let reals: Option<Vec<f64>> = values.iter().map(|v| g.to_real(v)).collect();
                reals.is_some_and(|r| r.windows(2).all(|w| w[1] - w[0] >= -CLASSIC_TOL * w[0].abs()))
            }
            GrowthChart::Exponential { q, .. } => g.to_real(q).is_some_and(|q| q >= 1.0),
        };

    ClassicReport {
        single_block,
        factors_at_least_one,
        chart_non_decreasing,
        classic: single_block && factors_at_least_one && chart_non_decreasing,
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    s: f64,
    t: f64,
    value: f64,
}

fn grid_from_times(mut times: Vec<f64>) -> Result<TimeGrid, FactorError> {
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() <= TIME_TOL);
    TimeGrid::new(times)
}

/// Places `(s, t, value)` triples on their grid; every pair must occur once.
fn assemble<G: GroupWithZero>(
    codomain: G,
    rows: Vec<(f64, f64, G::Elem)>,
) -> Result<FactorTable<G>, FactorError> {
    let grid = grid_from_times(rows.iter().flat_map(|r| [r.0, r.1]).collect())?;
    let n = grid.len();
    let mut slots: Vec<Option<G::Elem>> = vec![None; packed_len(n)];
    let probe = FactorTable {
        codomain: codomain.clone(),
        grid: grid.clone(),
        values: Vec::<G::Elem>::new(),
    };
    for (s, t, v) in rows {
        if s > t + TIME_TOL {
            return Err(FactorError::UnorderedPair { s, t });
        }
        let i = grid.index_of(s).ok_or(FactorError::MissingPair { s, t })?;
        let j = grid.index_of(t).ok_or(FactorError::MissingPair { s, t })?;
        let slot = &mut slots[probe.offset(i, j)];
        if slot.is_some() {
            return Err(FactorError::DuplicatePair { s, t });
        }
        *slot = Some(v);
    }
    let pts = grid.points().to_vec();
    FactorTable::from_fn(codomain, grid, |i, j| {
        slots[probe.offset(i, j)].clone().ok_or(FactorError::MissingPair {
            s: pts[i],
            t: pts[j],
        })
    })
}

/// Parses a `s,t,value` CSV into a real table.
pub fn read_csv<R: Read>(reader: R) -> Result<FactorTable<RealNonzeroWithZero>, FactorError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["s", "t", "value"] {
        return Err(FactorError::Parse(format!(
            "expected header s,t,value, got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        let r: CsvRow = rec?;
        rows.push((r.s, r.t, r.value));
    }
    if rows.is_empty() {
        return Err(FactorError::EmptyGrid);
    }
    assemble(RealNonzeroWithZero::default(), rows)
}

/// Writes a real-valued table as `s,t,value` CSV rows in `(i, j)` order.
pub fn write_csv<G: GroupWithZero, W: Write>(table: &FactorTable<G>, mut w: W) -> Result<(), FactorError> {
    writeln!(w, "s,t,value")?;
    let pts = table.grid().points();
    let g = table.codomain();
    for i in 0..pts.len() {
        for j in i..pts.len() {
            let v = g
                .to_real(table.get(i, j))
                .ok_or_else(|| FactorError::Parse("CSV output needs a real codomain".into()))?;
            writeln!(w, "{},{},{}", pts[i], pts[j], v)?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TableEntryDoc {
    pub s: f64,
    pub t: f64,
    pub value: Value,
}

/// JSON form of a table, used for matrix-valued tables.
#[derive(Debug, Serialize, Deserialize)]
pub struct TableDoc {
    pub codomain: String,
    pub entries: Vec<TableEntryDoc>,
}

impl<G: GroupWithZero> FactorTable<G> {
    pub fn to_doc(&self) -> TableDoc {
        let pts = self.grid.points();
        let mut entries = Vec::with_capacity(self.values.len());
        for i in 0..pts.len() {
            for j in i..pts.len() {
                entries.push(TableEntryDoc {
                    s: pts[i],
                    t: pts[j],
                    value: self.codomain.encode(self.get(i, j)),
                });
            }
        }
        TableDoc {
            codomain: self.codomain.tag().as_str().to_string(),
            entries,
        }
    }

    pub fn from_doc(codomain: G, doc: &TableDoc) -> Result<Self, FactorError> {
        let rows = doc
            .entries
            .iter()
            .map(|e| Ok((e.s, e.t, codomain.decode(&e.value)?)))
            .collect::<Result<Vec<_>, FactorError>>()?;
        if rows.is_empty() {
            return Err(FactorError::EmptyGrid);
        }
        assemble(codomain, rows)
    }
}

/// A table over whichever codomain its source names.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTable {
    Real(FactorTable<RealNonzeroWithZero>),
    Matrix(FactorTable<InvertibleMatrixWithZero>),
}

impl AnyTable {
    pub fn from_json(text: &str) -> Result<Self, FactorError> {
        let doc: TableDoc =
            serde_json::from_str(text).map_err(|e| FactorError::Parse(e.to_string()))?;
        match CodomainTag::parse(&doc.codomain) {
            Some(CodomainTag::Real) | Some(CodomainTag::PosReal) => Ok(AnyTable::Real(
                FactorTable::from_doc(RealNonzeroWithZero::default(), &doc)?,
            )),
            Some(CodomainTag::Matrix) => {
                let n = doc
                    .entries
                    .iter()
                    .find_map(|e| e.value.get("rows").and_then(Value::as_array).map(Vec::len))
                    .unwrap_or(1);
                Ok(AnyTable::Matrix(FactorTable::from_doc(
                    InvertibleMatrixWithZero::new(n),
                    &doc,
                )?))
            }
            None => Err(FactorError::Parse(format!("unknown codomain {:?}", doc.codomain))),
        }
    }
}

/// Decomposition output document: the solution plus a `report` object.
#[derive(Debug, Serialize)]
pub struct DecompositionDoc {
    #[serde(flatten)]
    pub solution: crate::canonical::SolutionDoc,
    pub report: DecompositionSummary,
}

#[derive(Debug, Serialize)]
pub struct DecompositionSummary {
    pub residual_max: f64,
    pub blocks: Vec<IndexRange>,
    pub classic_case: ClassicReport,
}

impl<G: GroupWithZero> Decomposition<G> {
    pub fn to_doc(&self) -> DecompositionDoc {
        DecompositionDoc {
            solution: self.solution.to_doc(),
            report: DecompositionSummary {
                residual_max: self.residual_max,
                blocks: self.block_index_ranges.clone(),
                classic_case: detect_classic_case(self),
            },
        }
    }
}
