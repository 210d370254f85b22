//! Future values on top of canonical solutions: `F(K,s,t) = K·f(s,t)`.
//!
//! Amounts are non-negative. A zero factor is a wipeout: capital invested
//! across it returns nothing, and no present value can reach a positive
//! target through it.

use serde::Serialize;
use thiserror::Error;

use crate::canonical::{CanonicalError, CanonicalSolution, ZeroConvention};
use crate::codomain::GroupWithZero;
use crate::factor_table::FactorTable;

/// Significant digits used when amounts are written or read as text.
pub const AMOUNT_DIGITS: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FinanceError {
    #[error("amount must be a finite non-negative number, got {0}")]
    NegativeAmount(f64),
    #[error("invalid rate quote: {0}")]
    InvalidRate(String),
    #[error("horizon start {s} is after its end {t}")]
    UnorderedHorizon { s: f64, t: f64 },
    #[error("duration must be non-negative, got {0}")]
    NegativeDuration(f64),
    #[error("factor f({s}, {t}) = {factor} is negative; signed factors need explicit opt-in")]
    NegativeOutcome { s: f64, t: f64, factor: f64 },
    #[error("f({s}, {t}) = 0: the horizon crosses a wipeout segment")]
    WipeoutSegment { s: f64, t: f64 },
    #[error("factors of this solution are not real numbers")]
    NonRealCodomain,
    #[error("invalid amount text {0:?}")]
    AmountSyntax(String),
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct CashAmount(f64);

impl CashAmount {
    pub const ZERO: CashAmount = CashAmount(0.0);

    pub fn new(amount: f64) -> Result<Self, FinanceError> {
        if amount.is_finite() && amount >= 0.0 {
            // normalizes -0.0
            Ok(CashAmount(amount + 0.0))
        } else {
            Err(FinanceError::NegativeAmount(amount))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateQuote {
    GrowthFactor(f64),
    ContinuousRate(f64),
}

impl RateQuote {
    pub fn growth_factor(self) -> Result<f64, FinanceError> {
        match self {
            RateQuote::GrowthFactor(q) if q.is_finite() && q >= 0.0 => Ok(q),
            RateQuote::GrowthFactor(q) => Err(FinanceError::InvalidRate(format!(
                "growth factor must be finite and >= 0, got {q}"
            ))),
            RateQuote::ContinuousRate(r) if r.is_finite() => Ok(r.exp()),
            RateQuote::ContinuousRate(r) => Err(FinanceError::InvalidRate(format!(
                "continuous rate must be finite, got {r}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvestmentHorizon {
    pub s: f64,
    pub t: f64,
}

impl InvestmentHorizon {
    pub fn new(s: f64, t: f64) -> Result<Self, FinanceError> {
        if s <= t {
            Ok(Self { s, t })
        } else {
            Err(FinanceError::UnorderedHorizon { s, t })
        }
    }
}

fn real_factor<G: GroupWithZero>(
    h: InvestmentHorizon,
    sol: &CanonicalSolution<G>,
) -> Result<f64, FinanceError> {
    let v = sol.evaluate(h.s, h.t)?;
    sol.codomain().to_real(&v).ok_or(FinanceError::NonRealCodomain)
}

/// `K·f(s,t)`, rejecting negative factors.
pub fn future_value<G: GroupWithZero>(
    k: CashAmount,
    h: InvestmentHorizon,
    sol: &CanonicalSolution<G>,
) -> Result<CashAmount, FinanceError> {
    let factor = real_factor(h, sol)?;
    if factor < 0.0 {
        return Err(FinanceError::NegativeOutcome {
            s: h.s,
            t: h.t,
            factor,
        });
    }
    CashAmount::new(k.0 * factor)
}

/// `K·f(s,t)` for callers that accept signed factors.
pub fn future_value_signed<G: GroupWithZero>(
    k: CashAmount,
    h: InvestmentHorizon,
    sol: &CanonicalSolution<G>,
) -> Result<f64, FinanceError> {
    Ok(k.0 * real_factor(h, sol)?)
}

/// The amount at `s` whose future value at `t` is `target`.
pub fn present_value<G: GroupWithZero>(
    target: CashAmount,
    h: InvestmentHorizon,
    sol: &CanonicalSolution<G>,
) -> Result<CashAmount, FinanceError> {
    let factor = real_factor(h, sol)?;
    if sol.codomain().is_zero(&sol.evaluate(h.s, h.t)?) {
        return Err(FinanceError::WipeoutSegment { s: h.s, t: h.t });
    }
    if factor < 0.0 {
        return Err(FinanceError::NegativeOutcome {
            s: h.s,
            t: h.t,
            factor,
        });
    }
    CashAmount::new(target.0 / factor)
}

/// `K·q^t` for a duration `t`. With `q = 0` the value at `t = 0` follows the
/// chosen convention for `0^0`.
pub fn future_value_constant(
    k: CashAmount,
    t: f64,
    quote: RateQuote,
    zero_convention: ZeroConvention,
) -> Result<CashAmount, FinanceError> {
    if !(t >= 0.0) {
        return Err(FinanceError::NegativeDuration(t));
    }
    let q = quote.growth_factor()?;
    let factor = if q == 0.0 {
        if t == 0.0 {
            zero_convention.as_f64()
        } else {
            0.0
        }
    } else {
        q.powf(t)
    };
    CashAmount::new(k.0 * factor)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FloorReport {
    pub c: f64,
    /// `f >= c` on every scanned pair.
    pub holds: bool,
    /// `f >= 1` on every scanned pair.
    pub at_least_one: bool,
    pub min_factor: Option<f64>,
    /// A pair attaining the minimum.
    pub min_pair: Option<(f64, f64)>,
    pub pairs_checked: usize,
}

impl FloorReport {
    fn scan(c: f64, factors: impl Iterator<Item = (f64, f64, f64)>) -> Self {
        let mut report = FloorReport {
            c,
            holds: true,
            at_least_one: true,
            min_factor: None,
            min_pair: None,
            pairs_checked: 0,
        };
        for (s, t, f) in factors {
            report.pairs_checked += 1;
            report.holds &= f >= c;
            report.at_least_one &= f >= 1.0;
            if report.min_factor.is_none_or(|m| f < m) {
                report.min_factor = Some(f);
                report.min_pair = Some((s, t));
            }
        }
        report
    }
}

/// Scans every entry of a real-valued table for `f >= c`.
pub fn check_floor_table<G: GroupWithZero>(
    table: &FactorTable<G>,
    c: f64,
) -> Result<FloorReport, FinanceError> {
    let g = table.codomain();
    let pts = table.grid().points();
    let mut values = Vec::new();
    for i in 0..pts.len() {
        for j in i..pts.len() {
            let f = g.to_real(table.get(i, j)).ok_or(FinanceError::NonRealCodomain)?;
            values.push((pts[i], pts[j], f));
        }
    }
    Ok(FloorReport::scan(c, values.into_iter()))
}

/// Scans a solution on all ordered pairs of the given sample times.
pub fn check_floor_solution<G: GroupWithZero>(
    sol: &CanonicalSolution<G>,
    samples: &[f64],
    c: f64,
) -> Result<FloorReport, FinanceError> {
    let mut values = Vec::new();
    for (a, &s) in samples.iter().enumerate() {
        for &t in &samples[a..] {
            let (s, t) = if s <= t { (s, t) } else { (t, s) };
            values.push((s, t, real_factor(InvestmentHorizon { s, t }, sol)?));
        }
    }
    Ok(FloorReport::scan(c, values.into_iter()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantFloorReport {
    pub q: f64,
    pub c: f64,
    /// `q^t >= c` for every `t >= 0`.
    pub holds: bool,
    /// A duration with `q^t < c` when the floor fails.
    pub witness: Option<u64>,
    /// The smallest integer duration with `q^t < c`, found by iteration.
    pub first_below: Option<u64>,
}

/// For a constant-rate model, `q^t >= c > 0` over unbounded horizons forces
/// `q >= 1`. When it fails, returns the witness `⌈ln c / ln q⌉ + 1`.
pub fn check_floor_constant(q: f64, c: f64) -> Result<ConstantFloorReport, FinanceError> {
    if !(q.is_finite() && q >= 0.0) {
        return Err(FinanceError::InvalidRate(format!(
            "growth factor must be finite and >= 0, got {q}"
        )));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(FinanceError::InvalidRate(format!("floor must be positive, got {c}")));
    }
    let witness = if c > 1.0 {
        // already fails at t = 0
        Some(0)
    } else if q >= 1.0 {
        None
    } else if q == 0.0 {
        Some(1)
    } else {
        Some(((c.ln() / q.ln()).ceil() + 1.0).max(0.0) as u64)
    };
    let first_below = witness.map(|_| {
        let mut t = 0u64;
        let mut power = 1.0;
        while power >= c {
            power *= q;
            t += 1;
        }
        t
    });
    Ok(ConstantFloorReport {
        q,
        c,
        holds: witness.is_none(),
        witness,
        first_below,
    })
}

/// Writes an amount with twelve significant digits, e.g. `104.040000000`.
pub fn format_amount(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{:.*e}", AMOUNT_DIGITS - 1, x);
    let exp: i64 = sci[sci.find('e').expect("exponent") + 1..]
        .parse()
        .expect("integer exponent");
    let decimals = (AMOUNT_DIGITS as i64 - 1 - exp).max(0) as usize;
    format!("{:.*}", decimals, x)
}

/// Parses a decimal amount, rounding half-to-even at twelve significant
/// digits on the decimal text itself.
pub fn parse_amount(text: &str) -> Result<CashAmount, FinanceError> {
    let bad = || FinanceError::AmountSyntax(text.to_string());
    let s = text.trim();
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(p) => (&s[..p], s[p + 1..].parse::<i64>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let mantissa = mantissa.strip_prefix('+').unwrap_or(mantissa);
    if mantissa.starts_with('-') {
        let v: f64 = s.parse().map_err(|_| bad())?;
        return Err(FinanceError::NegativeAmount(v));
    }
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int_part.is_empty() && frac_part.is_empty()
        || !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit())
    {
        return Err(bad());
    }
    let mut digits: Vec<u8> = int_part.bytes().chain(frac_part.bytes()).map(|b| b - b'0').collect();
    // value = 0.d1d2d3... × 10^point
    let mut point = int_part.len() as i64 + exp;
    let lead = digits.iter().position(|&d| d != 0);
    let Some(lead) = lead else {
        return Ok(CashAmount::ZERO);
    };
    digits.drain(..lead);
    point -= lead as i64;

    if digits.len() > AMOUNT_DIGITS {
        let rest = &digits[AMOUNT_DIGITS..];
        let round_up = match rest[0].cmp(&5) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => {
                rest[1..].iter().any(|&d| d != 0) || digits[AMOUNT_DIGITS - 1] % 2 == 1
            }
        };
        digits.truncate(AMOUNT_DIGITS);
        if round_up {
            let mut k = AMOUNT_DIGITS;
            loop {
                if k == 0 {
                    digits.insert(0, 1);
                    digits.pop();
                    point += 1;
                    break;
                }
                k -= 1;
                if digits[k] == 9 {
                    digits[k] = 0;
                } else {
                    digits[k] += 1;
                    break;
                }
            }
        }
    }
    let body: String = digits.iter().map(|d| char::from(b'0' + d)).collect();
    let normalized = format!("0.{}e{}", body, point);
    CashAmount::new(normalized.parse().map_err(|_| bad())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::{
        constant_rate_solution, monotone_phi_solution, DiagonalPolicy, GrowthChart,
        IntervalSystem, TimeInterval,
    };
    use crate::codomain::RealNonzeroWithZero;
    use proptest::prelude::*;

    fn cash(x: f64) -> CashAmount {
        CashAmount::new(x).unwrap()
    }

    fn h(s: f64, t: f64) -> InvestmentHorizon {
        InvestmentHorizon::new(s, t).unwrap()
    }

    fn two_blocks() -> CanonicalSolution<RealNonzeroWithZero> {
        CanonicalSolution::new(
            RealNonzeroWithZero::default(),
            IntervalSystem::new(
                TimeInterval::closed(0.0, 10.0),
                vec![TimeInterval::closed(0.0, 4.0), TimeInterval::closed(6.0, 10.0)],
            )
            .unwrap(),
            vec![
                GrowthChart::Exponential { a: 1.0, q: 1.05 },
                GrowthChart::Exponential { a: -1.0, q: 0.98 },
            ],
            DiagonalPolicy::constant(true),
        )
        .unwrap()
    }

    /// exp by Taylor series, independent of the library exp.
    fn exp_series(x: f64) -> f64 {
        let (mut term, mut sum) = (1.0, 1.0);
        for k in 1..40 {
            term *= x / k as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn future_value_examples() {
        let sol = constant_rate_solution(1.02, TimeInterval::closed(0.0, 10.0), ZeroConvention::One)
            .unwrap();
        let fv = future_value(cash(100.0), h(0.0, 2.0), &sol).unwrap();
        assert!((fv.value() - 104.04).abs() < 1e-12);
        assert_eq!(format_amount(fv.value()), "104.040000000");

        let sol = two_blocks();
        assert_eq!(future_value(cash(100.0), h(2.0, 7.0), &sol).unwrap(), CashAmount::ZERO);
        assert_eq!(future_value(cash(0.0), h(1.0, 3.0), &sol).unwrap(), CashAmount::ZERO);
    }

    #[test]
    fn negative_factor_needs_opt_in() {
        let sol = CanonicalSolution::new(
            RealNonzeroWithZero::default(),
            IntervalSystem::new(TimeInterval::closed(0.0, 2.0), vec![TimeInterval::closed(0.0, 2.0)])
                .unwrap(),
            vec![GrowthChart::tabulated(
                vec![0.0, 1.0, 2.0],
                vec![1.0, -2.0, 3.0],
                crate::canonical::Interp::None,
            )],
            DiagonalPolicy::constant(false),
        )
        .unwrap();
        assert!(matches!(
            future_value(cash(10.0), h(0.0, 1.0), &sol),
            Err(FinanceError::NegativeOutcome { .. })
        ));
        assert_eq!(future_value_signed(cash(10.0), h(0.0, 1.0), &sol).unwrap(), -20.0);
    }

    #[test]
    fn present_value_examples() {
        let sol = constant_rate_solution(1.02, TimeInterval::closed(0.0, 10.0), ZeroConvention::One)
            .unwrap();
        let pv = present_value(cash(104.04), h(0.0, 2.0), &sol).unwrap();
        assert!((pv.value() - 100.0).abs() < 1e-12);
        assert_eq!(present_value(cash(0.0), h(0.0, 2.0), &sol).unwrap(), CashAmount::ZERO);
        assert!(matches!(
            present_value(cash(1.0), h(2.0, 7.0), &two_blocks()),
            Err(FinanceError::WipeoutSegment { .. })
        ));
    }

    #[test]
    fn constant_rate_examples() {
        let fv = future_value_constant(
            cash(100.0),
            1.0,
            RateQuote::ContinuousRate(-0.01),
            ZeroConvention::One,
        )
        .unwrap();
        assert!((fv.value() - 100.0 * exp_series(-0.01)).abs() < 1e-10);
        assert!((fv.value() - 99.004_983_374_916_8).abs() < 1e-10);

        let zero = RateQuote::GrowthFactor(0.0);
        assert_eq!(future_value_constant(cash(7.0), 0.0, zero, ZeroConvention::One).unwrap(), cash(7.0));
        assert_eq!(future_value_constant(cash(7.0), 0.0, zero, ZeroConvention::Zero).unwrap(), cash(0.0));
        assert_eq!(future_value_constant(cash(7.0), 0.5, zero, ZeroConvention::One).unwrap(), cash(0.0));
        let q = RateQuote::GrowthFactor(1.5);
        assert_eq!(future_value_constant(cash(7.0), 0.0, q, ZeroConvention::Zero).unwrap(), cash(7.0));
        assert!(future_value_constant(cash(7.0), -1.0, q, ZeroConvention::Zero).is_err());
        assert!(RateQuote::GrowthFactor(-0.1).growth_factor().is_err());
    }

    #[test]
    fn floor_examples() {
        let r = check_floor_constant(0.99, 0.5).unwrap();
        assert!(!r.holds);
        assert_eq!(r.witness, Some(70));
        assert!(0.99f64.powi(70) < 0.5);
        // the formula overshoots the first crossing by one step here
        assert_eq!(r.first_below, Some(69));

        for c in [0.1, 0.5, 1.0] {
            assert!(check_floor_constant(1.0, c).unwrap().holds);
        }
        assert_eq!(check_floor_constant(0.0, 0.5).unwrap().witness, Some(1));
        assert_eq!(check_floor_constant(1.2, 2.0).unwrap().witness, Some(0));

        let phi = monotone_phi_solution(&[0.0, 1.0, 2.0], &[1.0, 1.5, 1.5], TimeInterval::closed(0.0, 2.0))
            .unwrap();
        let r = check_floor_solution(&phi, &[0.0, 0.5, 1.0, 1.5, 2.0], 1.0).unwrap();
        assert!(r.at_least_one && r.holds);
        assert_eq!(r.pairs_checked, 15);
    }

    #[test]
    fn amount_text() {
        assert_eq!(format_amount(100.0 * 1.02 * 1.02), "104.040000000");
        assert_eq!(format_amount(0.0), "0");
        assert_eq!(format_amount(1e-3), "0.00100000000000");
        assert_eq!(format_amount(999_999_999_999.6), "1000000000000");
        assert_eq!(parse_amount("104.04").unwrap().value(), 104.04);
        // ties go to the even digit
        assert_eq!(parse_amount("1.000000000005").unwrap().value(), 1.0);
        assert_eq!(parse_amount("1.000000000015").unwrap().value(), 1.00000000002);
        assert_eq!(parse_amount("1.0000000000051").unwrap().value(), 1.00000000001);
        assert_eq!(parse_amount("9.999999999995").unwrap().value(), 10.0);
        assert_eq!(parse_amount("2.5e3").unwrap().value(), 2500.0);
        assert_eq!(parse_amount("000.00").unwrap(), CashAmount::ZERO);
        assert!(parse_amount("-1").is_err());
        assert!(parse_amount("1.2.3").is_err());
        assert!(parse_amount("").is_err());
    }

    proptest! {
        #[test]
        fn additivity_and_chaining(k in 0.0..1e6f64, l in 0.0..1e6f64,
                                   a in 0.0..10.0f64, b in 0.0..10.0f64, c in 0.0..10.0f64) {
            let mut v = [a, b, c];
            v.sort_by(f64::total_cmp);
            let sol = two_blocks();
            let fv = |x: f64, s: f64, t: f64| future_value_signed(cash(x), h(s, t), &sol).unwrap();
            let sum = fv(k + l, v[0], v[1]);
            let parts = fv(k, v[0], v[1]) + fv(l, v[0], v[1]);
            prop_assert!((sum - parts).abs() <= 1e-12 * sum.abs().max(1.0));
            let once = fv(k, v[0], v[1]);
            let chained = future_value_signed(cash(once.abs()), h(v[1], v[2]), &sol).unwrap()
                * once.signum();
            let direct = fv(k, v[0], v[2]);
            prop_assert!((chained - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }

        #[test]
        fn constant_forms_agree(q in 0.5..1.5f64, s in 0.0..5.0f64, d in 0.0..5.0f64, k in 0.0..1e4f64) {
            let sol = constant_rate_solution(q, TimeInterval::closed(0.0, 10.0), ZeroConvention::One).unwrap();
            let a = future_value(cash(k), h(s, s + d), &sol).unwrap().value();
            let b = future_value_constant(cash(k), d, RateQuote::GrowthFactor(q), ZeroConvention::One)
                .unwrap()
                .value();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn present_value_inverts(k in 0.0..1e6f64, s in 0.0..4.0f64, d in 0.0..1.0f64) {
            let sol = two_blocks();
            let fv = future_value(cash(k), h(s, (s + d).min(4.0)), &sol).unwrap();
            let back = present_value(fv, h(s, (s + d).min(4.0)), &sol).unwrap();
            prop_assert!((back.value() - k).abs() <= 1e-12 * k.max(1.0));
        }
    }
}
