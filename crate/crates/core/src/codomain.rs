//! Codomains for factor values: a group `G` with an adjoined absorbing zero.
//!
//! Instances are "context" objects that own whatever parameters the element
//! type needs (zero tolerance, matrix dimension) and implement the algebra
//! on a plain element type. Elements themselves are immutable values.

use std::fmt;

use nalgebra::DMatrix;
use serde_json::{json, Value};
use thiserror::Error;

/// Default threshold below which a real value is treated as structural zero.
pub const DEFAULT_ZERO_TOL: f64 = 1e-12;

/// Matrices with `|det|` below this are rejected as singular.
pub const SINGULARITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodomainError {
    #[error("the absorbing zero has no inverse")]
    InversionOfZero,
    #[error("matrix is singular (|det| = {det:e})")]
    SingularMatrix { det: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("negative value {0} is not in [0, inf)")]
    NegativeValue(f64),
    #[error("value is not finite: {0}")]
    NotFinite(f64),
    #[error("malformed matrix: {0}")]
    MalformedMatrix(String),
    #[error("cannot decode element from {0}")]
    Decode(String),
}

/// Tag naming a codomain instance in serialized documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodomainTag {
    Real,
    PosReal,
    Matrix,
}

impl CodomainTag {
    pub fn as_str(self) -> &'static str {
        match self {
            CodomainTag::Real => "real",
            CodomainTag::PosReal => "posreal",
            CodomainTag::Matrix => "matrix",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "real" => Some(CodomainTag::Real),
            "posreal" => Some(CodomainTag::PosReal),
            "matrix" => Some(CodomainTag::Matrix),
            _ => None,
        }
    }
}

impl fmt::Display for CodomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A (not necessarily abelian) group with an adjoined absorbing element.
///
/// Laws every instance must satisfy:
/// - `mul(a, one) = mul(one, a) = a`
/// - `mul(a, zero) = mul(zero, a) = zero`
/// - `mul(inv(a), a) = mul(a, inv(a)) = one` for non-zero `a`
/// - the only idempotents are `zero` and `one`
pub trait GroupWithZero: Clone + fmt::Debug + Send + Sync {
    type Elem: Clone + fmt::Debug + PartialEq + Send + Sync;

    /// Whether `mul` is commutative on this instance.
    const COMMUTATIVE: bool;

    fn tag(&self) -> CodomainTag;
    fn one(&self) -> Self::Elem;
    fn zero(&self) -> Self::Elem;
    fn mul(&self, a: &Self::Elem, b: &Self::Elem) -> Result<Self::Elem, CodomainError>;
    fn inv(&self, a: &Self::Elem) -> Result<Self::Elem, CodomainError>;
    fn is_zero(&self, a: &Self::Elem) -> bool;

    /// Scale-aware distance used by every tolerance comparison.
    fn rel_diff(&self, a: &Self::Elem, b: &Self::Elem) -> f64;

    fn approx_eq(&self, a: &Self::Elem, b: &Self::Elem, tol: f64) -> bool {
        self.rel_diff(a, b) <= tol
    }

    /// Checks that `a` belongs to this instance.
    fn check(&self, a: &Self::Elem) -> Result<(), CodomainError>;

    /// Magnitude used for structural-zero classification. `None` means the
    /// instance only knows tagged zeros and never snaps small values.
    fn magnitude(&self, a: &Self::Elem) -> Option<f64>;

    /// The scalar value of `a`, for real-valued instances.
    fn to_real(&self, a: &Self::Elem) -> Option<f64>;

    /// Embeds a strictly positive real, if the instance contains them.
    #[allow(clippy::wrong_self_convention)]
    fn from_positive_real(&self, x: f64) -> Option<Self::Elem>;

    fn encode(&self, a: &Self::Elem) -> Value;
    fn decode(&self, v: &Value) -> Result<Self::Elem, CodomainError>;
}

/// Relative difference `|a-b| / max(1, |a|, |b|)`.
pub fn real_rel_diff(a: f64, b: f64) -> f64 {
    let scale = 1.0_f64.max(a.abs()).max(b.abs());
    (a - b).abs() / scale
}

fn is_zero_marker(v: &Value) -> bool {
    v.get("zero").and_then(Value::as_bool) == Some(true)
}

fn decode_real(v: &Value) -> Result<f64, CodomainError> {
    if is_zero_marker(v) {
        return Ok(0.0);
    }
    v.as_f64().ok_or_else(|| CodomainError::Decode(v.to_string()))
}

/// `R^x ∪ {0}`: non-zero reals under multiplication, zero absorbing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealNonzeroWithZero {
    pub zero_tol: f64,
}

impl Default for RealNonzeroWithZero {
    fn default() -> Self {
        Self {
            zero_tol: DEFAULT_ZERO_TOL,
        }
    }
}

impl GroupWithZero for RealNonzeroWithZero {
    type Elem = f64;
    const COMMUTATIVE: bool = true;

    fn tag(&self) -> CodomainTag {
        CodomainTag::Real
    }

    fn one(&self) -> f64 {
        1.0
    }

    fn zero(&self) -> f64 {
        0.0
    }

    fn mul(&self, a: &f64, b: &f64) -> Result<f64, CodomainError> {
        if self.is_zero(a) || self.is_zero(b) {
            return Ok(0.0);
        }
        Ok(a * b)
    }

    fn inv(&self, a: &f64) -> Result<f64, CodomainError> {
        if self.is_zero(a) {
            return Err(CodomainError::InversionOfZero);
        }
        Ok(1.0 / a)
    }

    fn is_zero(&self, a: &f64) -> bool {
        a.abs() <= self.zero_tol
    }

    fn rel_diff(&self, a: &f64, b: &f64) -> f64 {
        real_rel_diff(*a, *b)
    }

    fn check(&self, a: &f64) -> Result<(), CodomainError> {
        if !a.is_finite() {
            return Err(CodomainError::NotFinite(*a));
        }
        Ok(())
    }

    fn magnitude(&self, a: &f64) -> Option<f64> {
        Some(a.abs())
    }

    fn to_real(&self, a: &f64) -> Option<f64> {
        Some(if self.is_zero(a) { 0.0 } else { *a })
    }

    fn from_positive_real(&self, x: f64) -> Option<f64> {
        (x > 0.0 && x.is_finite()).then_some(x)
    }

    fn encode(&self, a: &f64) -> Value {
        json!(if self.is_zero(a) { 0.0 } else { *a })
    }

    fn decode(&self, v: &Value) -> Result<f64, CodomainError> {
        let x = decode_real(v)?;
        self.check(&x)?;
        Ok(x)
    }
}

/// `(0, inf) ∪ {0}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositiveRealWithZero {
    pub zero_tol: f64,
}

impl Default for PositiveRealWithZero {
    fn default() -> Self {
        Self {
            zero_tol: DEFAULT_ZERO_TOL,
        }
    }
}

impl PositiveRealWithZero {
    /// Builds an element, rejecting negative values.
    pub fn element(&self, x: f64) -> Result<f64, CodomainError> {
        self.check(&x)?;
        Ok(x)
    }
}

impl GroupWithZero for PositiveRealWithZero {
    type Elem = f64;
    const COMMUTATIVE: bool = true;

    fn tag(&self) -> CodomainTag {
        CodomainTag::PosReal
    }

    fn one(&self) -> f64 {
        1.0
    }

    fn zero(&self) -> f64 {
        0.0
    }

    fn mul(&self, a: &f64, b: &f64) -> Result<f64, CodomainError> {
        if self.is_zero(a) || self.is_zero(b) {
            return Ok(0.0);
        }
        Ok(a * b)
    }

    fn inv(&self, a: &f64) -> Result<f64, CodomainError> {
        if self.is_zero(a) {
            return Err(CodomainError::InversionOfZero);
        }
        Ok(1.0 / a)
    }

    fn is_zero(&self, a: &f64) -> bool {
        a.abs() <= self.zero_tol
    }

    fn rel_diff(&self, a: &f64, b: &f64) -> f64 {
        real_rel_diff(*a, *b)
    }

    fn check(&self, a: &f64) -> Result<(), CodomainError> {
        if !a.is_finite() {
            return Err(CodomainError::NotFinite(*a));
        }
        if *a < 0.0 {
            return Err(CodomainError::NegativeValue(*a));
        }
        Ok(())
    }

    fn magnitude(&self, a: &f64) -> Option<f64> {
        Some(a.abs())
    }

    fn to_real(&self, a: &f64) -> Option<f64> {
        Some(if self.is_zero(a) { 0.0 } else { *a })
    }

    fn from_positive_real(&self, x: f64) -> Option<f64> {
        (x > 0.0 && x.is_finite()).then_some(x)
    }

    fn encode(&self, a: &f64) -> Value {
        json!(if self.is_zero(a) { 0.0 } else { *a })
    }

    fn decode(&self, v: &Value) -> Result<f64, CodomainError> {
        let x = decode_real(v)?;
        self.check(&x)?;
        Ok(x)
    }
}

/// Element of `GL_n(R) ∪ {0}`. The zero is a tag, never a small-norm matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixElement {
    Zero(usize),
    Invertible(DMatrix<f64>),
}

impl MatrixElement {
    /// Builds an invertible element from row-major rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, CodomainError> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(CodomainError::MalformedMatrix(format!(
                "expected a non-empty square matrix, got {} rows",
                n
            )));
        }
        if let Some(x) = rows.iter().flatten().find(|x| !x.is_finite()) {
            return Err(CodomainError::NotFinite(*x));
        }
        let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::from_matrix(m)
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self, CodomainError> {
        if !m.is_square() {
            return Err(CodomainError::MalformedMatrix("not square".into()));
        }
        let det = m.determinant();
        if det.abs() < SINGULARITY_TOL {
            return Err(CodomainError::SingularMatrix { det });
        }
        Ok(MatrixElement::Invertible(m))
    }

    pub fn dim(&self) -> usize {
        match self {
            MatrixElement::Zero(n) => *n,
            MatrixElement::Invertible(m) => m.nrows(),
        }
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        match self {
            MatrixElement::Zero(_) => vec![vec![0.0; n]; n],
            MatrixElement::Invertible(m) => (0..n)
                .map(|i| (0..n).map(|j| m[(i, j)]).collect())
                .collect(),
        }
    }
}

/// `GL_n(R) ∪ {0}` with the null matrix as absorbing element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvertibleMatrixWithZero {
    pub n: usize,
}

impl InvertibleMatrixWithZero {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    fn same_dim(&self, a: &MatrixElement) -> Result<(), CodomainError> {
        if a.dim() != self.n {
            return Err(CodomainError::DimensionMismatch {
                left: self.n,
                right: a.dim(),
            });
        }
        Ok(())
    }
}

impl GroupWithZero for InvertibleMatrixWithZero {
    type Elem = MatrixElement;
    const COMMUTATIVE: bool = false;

    fn tag(&self) -> CodomainTag {
        CodomainTag::Matrix
    }

    fn one(&self) -> MatrixElement {
        MatrixElement::Invertible(DMatrix::identity(self.n, self.n))
    }

    fn zero(&self) -> MatrixElement {
        MatrixElement::Zero(self.n)
    }

    fn mul(&self, a: &MatrixElement, b: &MatrixElement) -> Result<MatrixElement, CodomainError> {
        if a.dim() != b.dim() {
            return Err(CodomainError::DimensionMismatch {
                left: a.dim(),
                right: b.dim(),
            });
        }
        Ok(match (a, b) {
            (MatrixElement::Invertible(x), MatrixElement::Invertible(y)) => {
                MatrixElement::Invertible(x * y)
            }
            _ => MatrixElement::Zero(a.dim()),
        })
    }

    fn inv(&self, a: &MatrixElement) -> Result<MatrixElement, CodomainError> {
        match a {
            MatrixElement::Zero(_) => Err(CodomainError::InversionOfZero),
            MatrixElement::Invertible(m) => {
                let det = m.determinant();
                if det.abs() < SINGULARITY_TOL {
                    return Err(CodomainError::SingularMatrix { det });
                }
                m.clone()
                    .try_inverse()
                    .map(MatrixElement::Invertible)
                    .ok_or(CodomainError::SingularMatrix { det })
            }
        }
    }

    fn is_zero(&self, a: &MatrixElement) -> bool {
        matches!(a, MatrixElement::Zero(_))
    }

    /// Max-abs entry difference.
    fn rel_diff(&self, a: &MatrixElement, b: &MatrixElement) -> f64 {
        if a.dim() != b.dim() {
            return f64::INFINITY;
        }
        match (a, b) {
            (MatrixElement::Zero(_), MatrixElement::Zero(_)) => 0.0,
            (MatrixElement::Zero(_), MatrixElement::Invertible(m))
            | (MatrixElement::Invertible(m), MatrixElement::Zero(_)) => m.amax(),
            (MatrixElement::Invertible(x), MatrixElement::Invertible(y)) => (x - y).amax(),
        }
    }

    fn check(&self, a: &MatrixElement) -> Result<(), CodomainError> {
        self.same_dim(a)?;
        if let MatrixElement::Invertible(m) = a {
            let det = m.determinant();
            if det.abs() < SINGULARITY_TOL {
                return Err(CodomainError::SingularMatrix { det });
            }
        }
        Ok(())
    }

    fn magnitude(&self, a: &MatrixElement) -> Option<f64> {
        match a {
            MatrixElement::Zero(_) => Some(0.0),
            MatrixElement::Invertible(_) => None,
        }
    }

    fn to_real(&self, _a: &MatrixElement) -> Option<f64> {
        None
    }

    fn from_positive_real(&self, _x: f64) -> Option<MatrixElement> {
        None
    }

    fn encode(&self, a: &MatrixElement) -> Value {
        match a {
            MatrixElement::Zero(_) => json!({ "zero": true }),
            MatrixElement::Invertible(_) => json!({ "n": a.dim(), "rows": a.rows() }),
        }
    }

    fn decode(&self, v: &Value) -> Result<MatrixElement, CodomainError> {
        if is_zero_marker(v) {
            return Ok(MatrixElement::Zero(self.n));
        }
        let rows: Vec<Vec<f64>> = v
            .get("rows")
            .cloned()
            .and_then(|r| serde_json::from_value(r).ok())
            .ok_or_else(|| CodomainError::Decode(v.to_string()))?;
        if let Some(n) = v.get("n").and_then(Value::as_u64) {
            if n as usize != rows.len() {
                return Err(CodomainError::MalformedMatrix(format!(
                    "declared n = {} but {} rows",
                    n,
                    rows.len()
                )));
            }
        }
        let m = MatrixElement::from_rows(&rows)?;
        self.same_dim(&m)?;
        Ok(m)
    }
}
