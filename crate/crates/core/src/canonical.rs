//! Normal form of a Sincov solution: a finite system of disjoint blocks, a
//! growth chart `d` on each block and a policy for the diagonal outside the
//! blocks. Evaluation is `f(s,t) = d(s)^-1 d(t)` inside a block and zero
//! across blocks.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::codomain::{
    CodomainError, CodomainTag, GroupWithZero, InvertibleMatrixWithZero,
    PositiveRealWithZero, RealNonzeroWithZero,
};

/// Two times closer than this are the same point (knots, diagonal exceptions).
pub const TIME_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CanonicalError {
    #[error("time {t} lies outside the domain {domain}")]
    OutOfDomain { t: f64, domain: TimeInterval },
    #[error("pair ({s}, {t}) is not ordered")]
    UnorderedPair { s: f64, t: f64 },
    #[error("tabulated chart without interpolation queried off-knot at {t}")]
    NonKnotEvaluation { t: f64 },
    #[error("invalid interval system: {0}")]
    InvalidSystem(ValidationReport),
    #[error("{charts} charts for {blocks} blocks")]
    ChartCountMismatch { charts: usize, blocks: usize },
    #[error("chart of block {block}: {reason}")]
    InvalidChart { block: usize, reason: String },
    #[error("diagonal exception at {point} lies inside a block")]
    ExceptionInsideBlock { point: f64 },
    #[error("growth factor must be non-negative, got {0}")]
    NegativeBase(f64),
    #[error("phi is not monotone: value at knot {index} drops below its predecessor")]
    NotMonotone { index: usize },
    #[error("phi must be strictly positive, knot {index} has value {value}")]
    NonPositive { index: usize, value: f64 },
    #[error("malformed solution document: {0}")]
    Document(String),
    #[error(transparent)]
    Codomain(#[from] CodomainError),
}

/// An interval of the time axis with explicit endpoint closedness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl TimeInterval {
    pub fn new(lo: f64, hi: f64, lo_closed: bool, hi_closed: bool) -> Self {
        Self {
            lo,
            hi,
            lo_closed,
            hi_closed,
        }
    }

    pub fn closed(lo: f64, hi: f64) -> Self {
        Self::new(lo, hi, true, true)
    }

    pub fn open(lo: f64, hi: f64) -> Self {
        Self::new(lo, hi, false, false)
    }

    /// `[lo, hi)`
    pub fn closed_open(lo: f64, hi: f64) -> Self {
        Self::new(lo, hi, true, false)
    }

    /// `(lo, hi]`
    pub fn open_closed(lo: f64, hi: f64) -> Self {
        Self::new(lo, hi, false, true)
    }

    /// Point membership; every other query is built on this.
    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lo_closed { x >= self.lo } else { x > self.lo };
        let below = if self.hi_closed { x <= self.hi } else { x < self.hi };
        above && below
    }

    pub fn is_empty(&self) -> bool {
        !(self.lo < self.hi || (self.lo == self.hi && self.lo_closed && self.hi_closed))
    }

    pub fn is_trivial(&self) -> bool {
        !(self.lo < self.hi)
    }

    pub fn intersection(&self, other: &TimeInterval) -> Option<TimeInterval> {
        let (lo, lo_closed) = if self.lo > other.lo {
            (self.lo, self.lo_closed)
        } else if other.lo > self.lo {
            (other.lo, other.lo_closed)
        } else {
            (self.lo, self.lo_closed && other.lo_closed)
        };
        let (hi, hi_closed) = if self.hi < other.hi {
            (self.hi, self.hi_closed)
        } else if other.hi < self.hi {
            (other.hi, other.hi_closed)
        } else {
            (self.hi, self.hi_closed && other.hi_closed)
        };
        let cut = TimeInterval::new(lo, hi, lo_closed, hi_closed);
        (!cut.is_empty()).then_some(cut)
    }

    /// Whether `self ⊆ other`.
    pub fn is_subset_of(&self, other: &TimeInterval) -> bool {
        let lo_ok = other.lo < self.lo || (other.lo == self.lo && (other.lo_closed || !self.lo_closed));
        let hi_ok = other.hi > self.hi || (other.hi == self.hi && (other.hi_closed || !self.hi_closed));
        lo_ok && hi_ok
    }
}

impl fmt::Display for TimeInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}, {}{}",
            if self.lo_closed { '[' } else { '(' },
            self.lo,
            self.hi,
            if self.hi_closed { ']' } else { ')' }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SystemIssue {
    InvalidDomain,
    TrivialBlock { index: usize },
    OutsideDomain { index: usize },
    Unsorted { index: usize },
    SharedPoint { first: usize, second: usize, point: f64 },
    Containment { outer: usize, inner: usize },
    Overlap { first: usize, second: usize },
}

impl fmt::Display for SystemIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SystemIssue::InvalidDomain => write!(f, "domain is empty"),
            SystemIssue::TrivialBlock { index } => write!(f, "block {} is trivial", index),
            SystemIssue::OutsideDomain { index } => {
                write!(f, "block {} is not contained in the domain", index)
            }
            SystemIssue::Unsorted { index } => {
                write!(f, "block {} starts before its predecessor", index)
            }
            SystemIssue::SharedPoint {
                first,
                second,
                point,
            } => write!(f, "blocks {} and {} share the point {}", first, second, point),
            SystemIssue::Containment { outer, inner } => {
                write!(f, "block {} contains block {}", outer, inner)
            }
            SystemIssue::Overlap { first, second } => {
                write!(f, "blocks {} and {} overlap", first, second)
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<SystemIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.issues.iter().map(|i| i.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

/// The ambient domain `J` together with its blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSystem {
    domain: TimeInterval,
    blocks: Vec<TimeInterval>,
}

/// Lists every way `blocks` fails to be a sorted family of pairwise
/// disjoint non-trivial subintervals of `domain`.
pub fn validate_system(domain: &TimeInterval, blocks: &[TimeInterval]) -> ValidationReport {
    let mut issues = Vec::new();
    if domain.is_empty() {
        issues.push(SystemIssue::InvalidDomain);
    }
    for (index, b) in blocks.iter().enumerate() {
        if b.is_trivial() {
            issues.push(SystemIssue::TrivialBlock { index });
        }
        if !b.is_subset_of(domain) {
            issues.push(SystemIssue::OutsideDomain { index });
        }
        if index > 0 && b.lo < blocks[index - 1].lo {
            issues.push(SystemIssue::Unsorted { index });
        }
    }
    for i in 0..blocks.len() {
        for j in i + 1..blocks.len() {
            let (a, b) = (&blocks[i], &blocks[j]);
            if a.is_empty() || b.is_empty() {
                continue;
            }
            let Some(cut) = a.intersection(b) else {
                continue;
            };
            let issue = if cut.lo == cut.hi {
                SystemIssue::SharedPoint {
                    first: i,
                    second: j,
                    point: cut.lo,
                }
            } else if b.is_subset_of(a) {
                SystemIssue::Containment { outer: i, inner: j }
            } else if a.is_subset_of(b) {
                SystemIssue::Containment { outer: j, inner: i }
            } else {
                SystemIssue::Overlap {
                    first: i,
                    second: j,
                }
            };
            issues.push(issue);
        }
    }
    ValidationReport { issues }
}

impl IntervalSystem {
    pub fn new(domain: TimeInterval, blocks: Vec<TimeInterval>) -> Result<Self, CanonicalError> {
        let report = validate_system(&domain, &blocks);
        if !report.is_valid() {
            return Err(CanonicalError::InvalidSystem(report));
        }
        Ok(Self { domain, blocks })
    }

    pub fn empty(domain: TimeInterval) -> Result<Self, CanonicalError> {
        Self::new(domain, Vec::new())
    }

    pub fn domain(&self) -> &TimeInterval {
        &self.domain
    }

    pub fn blocks(&self) -> &[TimeInterval] {
        &self.blocks
    }

    /// Index of the block containing `x`.
    pub fn block_of(&self, x: f64) -> Option<usize> {
        let k = self.blocks.partition_point(|b| b.lo <= x);
        // a block starting exactly at x may be open there, so look one back too
        (k.saturating_sub(2)..k).rev().find(|&i| self.blocks[i].contains(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    LogLinear,
    None,
}

/// The per-block function `d`, valued in the non-zero part of the codomain.
#[derive(Debug, Clone, PartialEq)]
pub enum GrowthChart<E> {
    /// `d(x) = a · q^x`; commutative real instances only.
    Exponential { a: E, q: E },
    Tabulated {
        knots: Vec<f64>,
        values: Vec<E>,
        interp: Interp,
    },
}

impl<E: Clone> GrowthChart<E> {
    pub fn tabulated(knots: Vec<f64>, values: Vec<E>, interp: Interp) -> Self {
        GrowthChart::Tabulated {
            knots,
            values,
            interp,
        }
    }

    pub fn can_evaluate(&self, x: f64) -> bool {
        match self {
            GrowthChart::Exponential { .. } => true,
            GrowthChart::Tabulated { interp: Interp::LogLinear, .. } => true,
            GrowthChart::Tabulated { knots, .. } => knot_index(knots, x).is_some(),
        }
    }

    fn check<G: GroupWithZero<Elem = E>>(&self, g: &G, block: &TimeInterval) -> Result<(), String> {
        match self {
            GrowthChart::Exponential { a, q } => {
                if !G::COMMUTATIVE {
                    return Err("exponential charts need a commutative codomain".into());
                }
                g.check(a).map_err(|e| e.to_string())?;
                if g.is_zero(a) {
                    return Err("scale must be non-zero".into());
                }
                match g.to_real(q) {
                    Some(q) if q > 0.0 && q.is_finite() => Ok(()),
                    _ => Err("base must be a positive real".into()),
                }
            }
            GrowthChart::Tabulated {
                knots,
                values,
                interp,
            } => {
                if knots.is_empty() || knots.len() != values.len() {
                    return Err(format!("{} knots for {} values", knots.len(), values.len()));
                }
                if knots.windows(2).any(|w| w[0] >= w[1]) {
                    return Err("knots must be strictly ascending".into());
                }
                if let Some(k) = knots.iter().find(|&&k| !block.contains(k)) {
                    return Err(format!("knot {} lies outside the block {}", k, block));
                }
                for v in values {
                    g.check(v).map_err(|e| e.to_string())?;
                    if g.is_zero(v) {
                        return Err("chart values must be non-zero".into());
                    }
                }
                if *interp == Interp::LogLinear
                    && !values.iter().all(|v| g.to_real(v).is_some_and(|x| x > 0.0))
                {
                    return Err("log-linear interpolation needs strictly positive real values".into());
                }
                Ok(())
            }
        }
    }

    /// `d(x)`.
    pub fn value_at<G: GroupWithZero<Elem = E>>(&self, g: &G, x: f64) -> Result<E, CanonicalError> {
        match self {
            GrowthChart::Exponential { a, q } => {
                let q = g.to_real(q).unwrap_or(f64::NAN);
                let growth = (x * q.ln()).exp();
                let growth = g
                    .from_positive_real(growth)
                    .ok_or(CodomainError::NotFinite(growth))?;
                Ok(g.mul(a, &growth)?)
            }
            GrowthChart::Tabulated {
                knots,
                values,
                interp,
            } => {
                if let Some(i) = knot_index(knots, x) {
                    return Ok(values[i].clone());
                }
                match interp {
                    Interp::None => Err(CanonicalError::NonKnotEvaluation { t: x }),
                    Interp::LogLinear => {
                        let logs = |i: usize| g.to_real(&values[i]).unwrap_or(f64::NAN).ln();
                        let n = knots.len();
                        let ln = if x <= knots[0] {
                            logs(0)
                        } else if x >= knots[n - 1] {
                            logs(n - 1)
                        } else {
                            let k = knots.partition_point(|&k| k <= x);
                            let (x0, x1) = (knots[k - 1], knots[k]);
                            let w = (x - x0) / (x1 - x0);
                            (1.0 - w) * logs(k - 1) + w * logs(k)
                        };
                        let v = ln.exp();
                        Ok(g.from_positive_real(v).ok_or(CodomainError::NotFinite(v))?)
                    }
                }
            }
        }
    }
}

fn knot_index(knots: &[f64], x: f64) -> Option<usize> {
    let k = knots.partition_point(|&k| k < x - TIME_TOL);
    (k < knots.len() && (knots[k] - x).abs() <= TIME_TOL).then_some(k)
}

/// Convention for `0^0` in the degenerate constant-rate model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroConvention {
    Zero,
    One,
}

impl ZeroConvention {
    pub fn as_f64(self) -> f64 {
        match self {
            ZeroConvention::Zero => 0.0,
            ZeroConvention::One => 1.0,
        }
    }
}

/// `f(x,x)` for points outside every block: a default value plus a finite
/// set of points carrying the opposite value.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalPolicy {
    default_one: bool,
    exceptions: Vec<f64>,
}

impl DiagonalPolicy {
    pub fn new(default_one: bool, mut exceptions: Vec<f64>) -> Self {
        exceptions.sort_by(f64::total_cmp);
        exceptions.dedup_by(|a, b| (*a - *b).abs() <= TIME_TOL);
        Self {
            default_one,
            exceptions,
        }
    }

    pub fn constant(default_one: bool) -> Self {
        Self::new(default_one, Vec::new())
    }

    pub fn default_one(&self) -> bool {
        self.default_one
    }

    pub fn exceptions(&self) -> &[f64] {
        &self.exceptions
    }

    /// `true` when the diagonal at `x` is one.
    pub fn is_one_at(&self, x: f64) -> bool {
        self.default_one ^ knot_index(&self.exceptions, x).is_some()
    }
}

/// A solution of the Sincov equation in normal form.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalSolution<G: GroupWithZero> {
    codomain: G,
    system: IntervalSystem,
    charts: Vec<GrowthChart<G::Elem>>,
    diag: DiagonalPolicy,
}

impl<G: GroupWithZero> CanonicalSolution<G> {
    pub fn new(
        codomain: G,
        system: IntervalSystem,
        charts: Vec<GrowthChart<G::Elem>>,
        diag: DiagonalPolicy,
    ) -> Result<Self, CanonicalError> {
        if charts.len() != system.blocks().len() {
            return Err(CanonicalError::ChartCountMismatch {
                charts: charts.len(),
                blocks: system.blocks().len(),
            });
        }
        for (block, (chart, interval)) in charts.iter().zip(system.blocks()).enumerate() {
            chart
                .check(&codomain, interval)
                .map_err(|reason| CanonicalError::InvalidChart { block, reason })?;
        }
        if let Some(&point) = diag
            .exceptions()
            .iter()
            .find(|&&x| system.block_of(x).is_some())
        {
            return Err(CanonicalError::ExceptionInsideBlock { point });
        }
        Ok(Self {
            codomain,
            system,
            charts,
            diag,
        })
    }

    pub fn codomain(&self) -> &G {
        &self.codomain
    }

    pub fn system(&self) -> &IntervalSystem {
        &self.system
    }

    pub fn domain(&self) -> &TimeInterval {
        self.system.domain()
    }

    pub fn blocks(&self) -> &[TimeInterval] {
        self.system.blocks()
    }

    pub fn charts(&self) -> &[GrowthChart<G::Elem>] {
        &self.charts
    }

    pub fn diagonal(&self) -> &DiagonalPolicy {
        &self.diag
    }

    /// Whether `evaluate` can be called with `x` as either argument.
    pub fn is_evaluable_at(&self, x: f64) -> bool {
        if !self.domain().contains(x) {
            return false;
        }
        match self.system.block_of(x) {
            Some(b) => self.charts[b].can_evaluate(x),
            None => true,
        }
    }

    /// `d(x)` on the block containing `x`, if any.
    pub fn chart_value(&self, x: f64) -> Result<Option<G::Elem>, CanonicalError> {
        match self.system.block_of(x) {
            Some(b) => Ok(Some(self.charts[b].value_at(&self.codomain, x)?)),
            None => Ok(None),
        }
    }

    /// `f(s,t)` for `s <= t`.
    pub fn evaluate(&self, s: f64, t: f64) -> Result<G::Elem, CanonicalError> {
        let domain = *self.domain();
        for x in [s, t] {
            if !domain.contains(x) {
                return Err(CanonicalError::OutOfDomain { t: x, domain });
            }
        }
        if s > t {
            return Err(CanonicalError::UnorderedPair { s, t });
        }
        let g = &self.codomain;
        let bs = self.system.block_of(s);
        if s == t {
            let one = bs.is_some() || self.diag.is_one_at(s);
            return Ok(if one { g.one() } else { g.zero() });
        }
        match (bs, self.system.block_of(t)) {
            (Some(a), Some(b)) if a == b => {
                let chart = &self.charts[a];
                let ds = chart.value_at(g, s)?;
                let dt = chart.value_at(g, t)?;
                Ok(g.mul(&g.inv(&ds)?, &dt)?)
            }
            _ => Ok(g.zero()),
        }
    }

    /// The reversed-order form `g(x,z) = f(z,x)` for `x > z`, which satisfies
    /// `g(x,z) = g(x,y) g(y,z)` for `x > y > z` in commutative codomains.
    pub fn evaluate_reversed(&self, x: f64, z: f64) -> Result<G::Elem, CanonicalError> {
        if x <= z {
            return Err(CanonicalError::UnorderedPair { s: x, t: z });
        }
        self.evaluate(z, x)
    }

    /// Replaces the chart of `block` by `x ↦ c · d(x)`; `f` is unchanged.
    pub fn left_scaled(&self, block: usize, c: &G::Elem) -> Result<Self, CanonicalError> {
        let g = &self.codomain;
        if g.is_zero(c) {
            return Err(CodomainError::InversionOfZero.into());
        }
        let mut out = self.clone();
        out.charts[block] = match &self.charts[block] {
            GrowthChart::Exponential { a, q } => GrowthChart::Exponential {
                a: g.mul(c, a)?,
                q: q.clone(),
            },
            GrowthChart::Tabulated {
                knots,
                values,
                interp,
            } => GrowthChart::Tabulated {
                knots: knots.clone(),
                values: values
                    .iter()
                    .map(|v| g.mul(c, v))
                    .collect::<Result<_, _>>()?,
                interp: *interp,
            },
        };
        Self::new(out.codomain, out.system, out.charts, out.diag)
    }

    pub fn to_doc(&self) -> SolutionDoc {
        let g = &self.codomain;
        let blocks = self
            .blocks()
            .iter()
            .zip(&self.charts)
            .map(|(interval, chart)| BlockDoc {
                interval: *interval,
                chart: match chart {
                    GrowthChart::Exponential { a, q } => ChartDoc::Exponential {
                        a: g.encode(a),
                        q: g.encode(q),
                    },
                    GrowthChart::Tabulated {
                        knots,
                        values,
                        interp,
                    } => ChartDoc::Tabulated {
                        knots: knots.clone(),
                        values: values.iter().map(|v| g.encode(v)).collect(),
                        interp: *interp,
                    },
                },
            })
            .collect();
        SolutionDoc {
            domain: *self.domain(),
            blocks,
            diag_default: u8::from(self.diag.default_one()),
            diag_exceptions: self.diag.exceptions().to_vec(),
            codomain: g.tag().as_str().to_string(),
        }
    }

    pub fn from_doc(codomain: G, doc: &SolutionDoc) -> Result<Self, CanonicalError> {
        if doc.codomain != codomain.tag().as_str() {
            return Err(CanonicalError::Document(format!(
                "expected codomain {}, document has {}",
                codomain.tag(),
                doc.codomain
            )));
        }
        let default_one = match doc.diag_default {
            0 => false,
            1 => true,
            other => {
                return Err(CanonicalError::Document(format!(
                    "diag_default must be 0 or 1, got {}",
                    other
                )))
            }
        };
        let system = IntervalSystem::new(
            doc.domain,
            doc.blocks.iter().map(|b| b.interval).collect(),
        )?;
        let charts = doc
            .blocks
            .iter()
            .map(|b| -> Result<_, CodomainError> {
                Ok(match &b.chart {
                    ChartDoc::Exponential { a, q } => GrowthChart::Exponential {
                        a: codomain.decode(a)?,
                        q: codomain.decode(q)?,
                    },
                    ChartDoc::Tabulated {
                        knots,
                        values,
                        interp,
                    } => GrowthChart::Tabulated {
                        knots: knots.clone(),
                        values: values
                            .iter()
                            .map(|v| codomain.decode(v))
                            .collect::<Result<_, _>>()?,
                        interp: *interp,
                    },
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let diag = DiagonalPolicy::new(default_one, doc.diag_exceptions.clone());
        Self::new(codomain, system, charts, diag)
    }
}

/// Builds the constant-rate model `f(s,t) = q^(t-s)`. For `q = 0` there are
/// no blocks and the diagonal carries the chosen value of `0^0`.
pub fn constant_rate_solution(
    q: f64,
    domain: TimeInterval,
    zero_convention: ZeroConvention,
) -> Result<CanonicalSolution<PositiveRealWithZero>, CanonicalError> {
    if q.is_nan() || q < 0.0 {
        return Err(CanonicalError::NegativeBase(q));
    }
    let g = PositiveRealWithZero::default();
    if g.is_zero(&q) {
        return CanonicalSolution::new(
            g,
            IntervalSystem::empty(domain)?,
            Vec::new(),
            DiagonalPolicy::constant(zero_convention == ZeroConvention::One),
        );
    }
    CanonicalSolution::new(
        g,
        IntervalSystem::new(domain, vec![domain])?,
        vec![GrowthChart::Exponential { a: 1.0, q }],
        DiagonalPolicy::constant(false),
    )
}

/// Builds `f(s,t) = phi(t) / phi(s)` from a positive non-decreasing `phi`
/// given at knots and log-linearly interpolated between them.
pub fn monotone_phi_solution(
    knots: &[f64],
    values: &[f64],
    domain: TimeInterval,
) -> Result<CanonicalSolution<PositiveRealWithZero>, CanonicalError> {
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(CanonicalError::NonPositive { index, value });
    }
    if let Some(index) = (1..values.len()).find(|&i| values[i] < values[i - 1]) {
        return Err(CanonicalError::NotMonotone { index });
    }
    CanonicalSolution::new(
        PositiveRealWithZero::default(),
        IntervalSystem::new(domain, vec![domain])?,
        vec![GrowthChart::tabulated(
            knots.to_vec(),
            values.to_vec(),
            Interp::LogLinear,
        )],
        DiagonalPolicy::constant(false),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDoc {
    pub domain: TimeInterval,
    pub blocks: Vec<BlockDoc>,
    pub diag_default: u8,
    pub diag_exceptions: Vec<f64>,
    pub codomain: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDoc {
    pub interval: TimeInterval,
    pub chart: ChartDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChartDoc {
    Exponential {
        a: Value,
        q: Value,
    },
    Tabulated {
        knots: Vec<f64>,
        values: Vec<Value>,
        interp: Interp,
    },
}

impl SolutionDoc {
    /// Matrix dimension implied by the first encoded non-zero element.
    fn matrix_dim(&self) -> usize {
        self.blocks
            .iter()
            .flat_map(|b| match &b.chart {
                ChartDoc::Exponential { a, q } => vec![a, q],
                ChartDoc::Tabulated { values, .. } => values.iter().collect(),
            })
            .find_map(|v| {
                v.get("n")
                    .and_then(Value::as_u64)
                    .map(|n| n as usize)
                    .or_else(|| v.get("rows").and_then(Value::as_array).map(Vec::len))
            })
            .unwrap_or(1)
    }
}

/// A solution over whichever codomain its document names.
#[derive(Debug, Clone, PartialEq)]
pub enum AnySolution {
    Real(CanonicalSolution<RealNonzeroWithZero>),
    PosReal(CanonicalSolution<PositiveRealWithZero>),
    Matrix(CanonicalSolution<InvertibleMatrixWithZero>),
}

impl AnySolution {
    pub fn from_doc(doc: &SolutionDoc) -> Result<Self, CanonicalError> {
        let tag = CodomainTag::parse(&doc.codomain).ok_or_else(|| {
            CanonicalError::Document(format!("unknown codomain {:?}", doc.codomain))
        })?;
        Ok(match tag {
            CodomainTag::Real => {
                AnySolution::Real(CanonicalSolution::from_doc(RealNonzeroWithZero::default(), doc)?)
            }
            CodomainTag::PosReal => AnySolution::PosReal(CanonicalSolution::from_doc(
                PositiveRealWithZero::default(),
                doc,
            )?),
            CodomainTag::Matrix => AnySolution::Matrix(CanonicalSolution::from_doc(
                InvertibleMatrixWithZero::new(doc.matrix_dim()),
                doc,
            )?),
        })
    }

    pub fn from_json(text: &str) -> Result<Self, CanonicalError> {
        let doc: SolutionDoc =
            serde_json::from_str(text).map_err(|e| CanonicalError::Document(e.to_string()))?;
        Self::from_doc(&doc)
    }

    pub fn to_doc(&self) -> SolutionDoc {
        match self {
            AnySolution::Real(s) => s.to_doc(),
            AnySolution::PosReal(s) => s.to_doc(),
            AnySolution::Matrix(s) => s.to_doc(),
        }
    }

    /// Evaluates and encodes `f(s,t)` as JSON.
    pub fn evaluate_json(&self, s: f64, t: f64) -> Result<Value, CanonicalError> {
        Ok(match self {
            AnySolution::Real(x) => x.codomain().encode(&x.evaluate(s, t)?),
            AnySolution::PosReal(x) => x.codomain().encode(&x.evaluate(s, t)?),
            AnySolution::Matrix(x) => x.codomain().encode(&x.evaluate(s, t)?),
        })
    }
}

impl From<CanonicalSolution<RealNonzeroWithZero>> for AnySolution {
    fn from(s: CanonicalSolution<RealNonzeroWithZero>) -> Self {
        AnySolution::Real(s)
    }
}

impl From<CanonicalSolution<PositiveRealWithZero>> for AnySolution {
    fn from(s: CanonicalSolution<PositiveRealWithZero>) -> Self {
        AnySolution::PosReal(s)
    }
}

impl From<CanonicalSolution<InvertibleMatrixWithZero>> for AnySolution {
    fn from(s: CanonicalSolution<InvertibleMatrixWithZero>) -> Self {
        AnySolution::Matrix(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn real() -> RealNonzeroWithZero {
        RealNonzeroWithZero::default()
    }

    fn exp_chart(q: f64) -> GrowthChart<f64> {
        GrowthChart::Exponential { a: 1.0, q }
    }

    fn two_block_solution() -> CanonicalSolution<RealNonzeroWithZero> {
        let system = IntervalSystem::new(
            TimeInterval::closed(0.0, 5.0),
            vec![TimeInterval::closed(0.0, 2.0), TimeInterval::closed(3.0, 5.0)],
        )
        .unwrap();
        CanonicalSolution::new(
            real(),
            system,
            vec![exp_chart(2.0), exp_chart(1.5)],
            DiagonalPolicy::new(false, vec![2.5]),
        )
        .unwrap()
    }

    #[test]
    fn evaluates_within_and_across_blocks() {
        let sol = two_block_solution();
        assert!((sol.evaluate(0.0, 2.0).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(sol.evaluate(1.0, 4.0).unwrap(), 0.0);
        assert_eq!(sol.evaluate(1.0, 1.0).unwrap(), 1.0);
        // outside blocks the diagonal follows the policy
        assert_eq!(sol.evaluate(2.7, 2.7).unwrap(), 0.0);
        assert_eq!(sol.evaluate(2.5, 2.5).unwrap(), 1.0);
        assert_eq!(sol.evaluate(2.5, 2.6).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_errors() {
        let sol = two_block_solution();
        assert!(matches!(
            sol.evaluate(-1.0, 1.0),
            Err(CanonicalError::OutOfDomain { t, .. }) if t == -1.0
        ));
        assert!(matches!(
            sol.evaluate(2.0, 1.0),
            Err(CanonicalError::UnorderedPair { .. })
        ));
    }

    #[test]
    fn non_knot_query_on_plain_table_fails() {
        let system =
            IntervalSystem::new(TimeInterval::closed(0.0, 2.0), vec![TimeInterval::closed(0.0, 2.0)])
                .unwrap();
        let sol = CanonicalSolution::new(
            real(),
            system,
            vec![GrowthChart::tabulated(
                vec![0.0, 1.0, 2.0],
                vec![1.0, -0.5, 1.0],
                Interp::None,
            )],
            DiagonalPolicy::constant(false),
        )
        .unwrap();
        assert_eq!(sol.evaluate(0.0, 1.0).unwrap(), -0.5);
        assert_eq!(sol.evaluate(1.0, 2.0).unwrap(), -2.0);
        assert!(matches!(
            sol.evaluate(0.0, 1.5),
            Err(CanonicalError::NonKnotEvaluation { t }) if t == 1.5
        ));
        assert!(!sol.is_evaluable_at(1.5));
    }

    #[test]
    fn delta_solution_has_no_blocks() {
        let sol: CanonicalSolution<RealNonzeroWithZero> = CanonicalSolution::new(
            real(),
            IntervalSystem::empty(TimeInterval::closed(0.0, 1.0)).unwrap(),
            vec![],
            DiagonalPolicy::constant(true),
        )
        .unwrap();
        for &(x, y) in &[(0.0, 0.0), (0.3, 0.3), (0.0, 0.5), (0.2, 1.0)] {
            let expect = if x == y { 1.0 } else { 0.0 };
            assert_eq!(sol.evaluate(x, y).unwrap(), expect);
        }
    }

    #[test]
    fn validate_system_examples() {
        let domain = TimeInterval::closed(0.0, 10.0);
        let shared = validate_system(
            &domain,
            &[TimeInterval::closed(0.0, 1.0), TimeInterval::closed(1.0, 2.0)],
        );
        assert_eq!(
            shared.issues,
            vec![SystemIssue::SharedPoint {
                first: 0,
                second: 1,
                point: 1.0
            }]
        );
        let open = validate_system(
            &domain,
            &[TimeInterval::closed_open(0.0, 1.0), TimeInterval::open_closed(1.0, 2.0)],
        );
        assert!(open.is_valid());
        let half = validate_system(
            &domain,
            &[TimeInterval::closed_open(0.0, 1.0), TimeInterval::closed(1.0, 2.0)],
        );
        assert!(half.is_valid());
        let nested = validate_system(
            &domain,
            &[TimeInterval::closed(0.0, 5.0), TimeInterval::closed(2.0, 3.0)],
        );
        assert!(nested
            .issues
            .contains(&SystemIssue::Containment { outer: 0, inner: 1 }));
    }

    #[test]
    fn validate_system_structural_issues() {
        let domain = TimeInterval::closed_open(0.0, 10.0);
        let report = validate_system(
            &domain,
            &[
                TimeInterval::closed(4.0, 4.0),
                TimeInterval::closed(2.0, 3.0),
                TimeInterval::closed(8.0, 10.0),
                TimeInterval::closed(2.5, 3.5),
            ],
        );
        assert!(report.issues.contains(&SystemIssue::TrivialBlock { index: 0 }));
        assert!(report.issues.contains(&SystemIssue::Unsorted { index: 1 }));
        assert!(report.issues.contains(&SystemIssue::OutsideDomain { index: 2 }));
        assert!(report.issues.contains(&SystemIssue::Overlap { first: 1, second: 3 }));
    }

    #[test]
    fn constant_rate_models() {
        let domain = TimeInterval::closed(0.0, 10.0);
        let sol = constant_rate_solution(1.02, domain, ZeroConvention::One).unwrap();
        assert!((sol.evaluate(0.0, 2.0).unwrap() - 1.0404).abs() < 1e-12);
        let unit = constant_rate_solution(1.0, domain, ZeroConvention::One).unwrap();
        assert_eq!(unit.evaluate(1.3, 7.9).unwrap(), 1.0);
        for conv in [ZeroConvention::Zero, ZeroConvention::One] {
            let z = constant_rate_solution(0.0, domain, conv).unwrap();
            assert!(z.blocks().is_empty());
            assert_eq!(z.evaluate(0.0, 0.0).unwrap(), conv.as_f64());
            assert_eq!(z.evaluate(3.0, 3.0).unwrap(), conv.as_f64());
            assert_eq!(z.evaluate(0.0, 1.0).unwrap(), 0.0);
        }
        assert_eq!(
            constant_rate_solution(-0.5, domain, ZeroConvention::One).unwrap_err(),
            CanonicalError::NegativeBase(-0.5)
        );
    }

    #[test]
    fn monotone_phi_examples() {
        let domain = TimeInterval::closed(0.0, 2.0);
        let sol = monotone_phi_solution(&[0.0, 1.0, 2.0], &[1.0, 1.5, 1.5], domain).unwrap();
        assert_eq!(sol.evaluate(0.0, 1.0).unwrap(), 1.5);
        assert_eq!(sol.evaluate(1.0, 2.0).unwrap(), 1.0);
        let flat = monotone_phi_solution(&[0.0, 2.0], &[1.0, 1.0], domain).unwrap();
        assert_eq!(flat.evaluate(0.3, 1.7).unwrap(), 1.0);
        assert_eq!(
            monotone_phi_solution(&[0.0, 1.0, 2.0], &[1.0, 0.9, 1.2], domain).unwrap_err(),
            CanonicalError::NotMonotone { index: 1 }
        );
        assert!(matches!(
            monotone_phi_solution(&[0.0, 1.0], &[0.0, 1.0], domain),
            Err(CanonicalError::NonPositive { index: 0, .. })
        ));
    }

    #[test]
    fn reversed_orientation() {
        let sol = constant_rate_solution(2.0, TimeInterval::closed(0.0, 10.0), ZeroConvention::One)
            .unwrap();
        assert!((sol.evaluate_reversed(3.0, 1.0).unwrap() - 4.0).abs() < 1e-12);
        let g51 = sol.evaluate_reversed(5.0, 1.0).unwrap();
        let g53 = sol.evaluate_reversed(5.0, 3.0).unwrap();
        let g31 = sol.evaluate_reversed(3.0, 1.0).unwrap();
        assert!((g51 - 16.0).abs() < 1e-12);
        assert!((g51 - g53 * g31).abs() < 1e-12);
        assert!(matches!(
            sol.evaluate_reversed(1.0, 1.0),
            Err(CanonicalError::UnorderedPair { .. })
        ));
        let two = two_block_solution();
        assert_eq!(two.evaluate_reversed(4.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn construction_rejects_bad_parts() {
        let domain = TimeInterval::closed(0.0, 5.0);
        let system = IntervalSystem::new(domain, vec![TimeInterval::closed(0.0, 2.0)]).unwrap();
        let err = CanonicalSolution::new(
            real(),
            system.clone(),
            vec![GrowthChart::tabulated(vec![0.0, 3.0], vec![1.0, 2.0], Interp::None)],
            DiagonalPolicy::constant(false),
        )
        .unwrap_err();
        assert!(matches!(err, CanonicalError::InvalidChart { block: 0, .. }));
        let err = CanonicalSolution::new(
            real(),
            system.clone(),
            vec![GrowthChart::tabulated(
                vec![0.0, 1.0],
                vec![1.0, -2.0],
                Interp::LogLinear,
            )],
            DiagonalPolicy::constant(false),
        )
        .unwrap_err();
        assert!(matches!(err, CanonicalError::InvalidChart { .. }));
        let err = CanonicalSolution::new(
            real(),
            system.clone(),
            vec![exp_chart(1.1)],
            DiagonalPolicy::new(true, vec![1.0]),
        )
        .unwrap_err();
        assert_eq!(err, CanonicalError::ExceptionInsideBlock { point: 1.0 });
        let err = CanonicalSolution::new(real(), system, vec![], DiagonalPolicy::constant(false))
            .unwrap_err();
        assert_eq!(err, CanonicalError::ChartCountMismatch { charts: 0, blocks: 1 });
    }

    #[test]
    fn exponential_chart_needs_commutative_codomain() {
        let g = InvertibleMatrixWithZero::new(2);
        let system =
            IntervalSystem::new(TimeInterval::closed(0.0, 1.0), vec![TimeInterval::closed(0.0, 1.0)])
                .unwrap();
        let err = CanonicalSolution::new(
            g,
            system,
            vec![GrowthChart::Exponential {
                a: g.one(),
                q: g.one(),
            }],
            DiagonalPolicy::constant(false),
        )
        .unwrap_err();
        assert!(matches!(err, CanonicalError::InvalidChart { .. }));
    }

    #[test]
    fn block_lookup_respects_open_endpoints() {
        let system = IntervalSystem::new(
            TimeInterval::closed(0.0, 3.0),
            vec![TimeInterval::closed_open(0.0, 1.0), TimeInterval::closed(1.0, 2.0)],
        )
        .unwrap();
        assert_eq!(system.block_of(0.5), Some(0));
        assert_eq!(system.block_of(1.0), Some(1));
        assert_eq!(system.block_of(2.5), None);
        let system = IntervalSystem::new(
            TimeInterval::closed(0.0, 3.0),
            vec![TimeInterval::closed(0.0, 1.0), TimeInterval::open(1.0, 2.0)],
        )
        .unwrap();
        assert_eq!(system.block_of(1.0), Some(0));
        assert_eq!(system.block_of(1.0 + 1e-12), Some(1));
    }

    #[test]
    fn document_round_trip() {
        let sol = two_block_solution();
        let doc = sol.to_doc();
        let text = serde_json::to_string(&doc).unwrap();
        assert!(text.contains("\"kind\":\"exponential\""));
        let back = AnySolution::from_json(&text).unwrap();
        assert_eq!(back, AnySolution::Real(sol));
    }

    #[test]
    fn document_rejects_bad_diag_default() {
        let mut doc = two_block_solution().to_doc();
        doc.diag_default = 2;
        assert!(matches!(
            AnySolution::from_doc(&doc),
            Err(CanonicalError::Document(_))
        ));
    }

    proptest! {
        #[test]
        fn gauge_shift_leaves_f_unchanged(
            c in prop_oneof![-5.0..-0.1f64, 0.1..5.0f64],
            s in 0.0..2.0f64,
            w in 0.0..1.0f64,
        ) {
            let sol = two_block_solution();
            let shifted = sol.left_scaled(0, &c).unwrap();
            let t = s + w * (2.0 - s);
            let a = sol.evaluate(s, t).unwrap();
            let b = shifted.evaluate(s, t).unwrap();
            prop_assert!(real().approx_eq(&a, &b, 1e-12));
        }

        #[test]
        fn diagonal_is_zero_or_one(x in 0.0..5.0f64) {
            let v = two_block_solution().evaluate(x, x).unwrap();
            prop_assert!(v == 0.0 || v == 1.0);
        }
    }
}
