use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::Symbol;
use crate::error::{Error, Result};

/// The variants a [`Scalar`] can take. Also the atomic value domains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    Int,
    Float,
    #[serde(rename = "str")]
    Text,
    Bool,
    Date,
    Symbol,
}

impl ScalarKind {
    pub fn is_numeric(self) -> bool {
        matches!(self, ScalarKind::Int | ScalarKind::Float)
    }

    pub fn name(self) -> &'static str {
        match self {
            ScalarKind::Int => "int",
            ScalarKind::Float => "float",
            ScalarKind::Text => "str",
            ScalarKind::Bool => "bool",
            ScalarKind::Date => "date",
            ScalarKind::Symbol => "symbol",
        }
    }
}

impl fmt::Display for ScalarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An atomic instance. Comparison across variants is an error (see
/// [`Scalar::compare`]); the derived-looking [`Ord`] impl is a structural
/// order used only for canonical sorting.
#[derive(Clone)]
pub enum Scalar {
    Int(i64),
    Float(f64),
    Text(Arc<str>),
    Bool(bool),
    Date(NaiveDate),
    Symbol(Symbol),
}

impl Scalar {
    pub fn text(s: &str) -> Scalar {
        Scalar::Text(Arc::from(s))
    }

    pub fn sym(s: &str) -> Scalar {
        Scalar::Symbol(Symbol::new(s))
    }

    /// Parses an ISO-8601 calendar date, also accepting the `D-M-YYYY` form
    /// and normalizing it.
    pub fn date(s: &str) -> Result<Scalar> {
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .or_else(|_| NaiveDate::parse_from_str(s, "%d-%m-%Y"))
            .map(Scalar::Date)
            .map_err(|e| Error::Parse(format!("invalid date {s:?}: {e}")))
    }

    pub fn kind(&self) -> ScalarKind {
        match self {
            Scalar::Int(_) => ScalarKind::Int,
            Scalar::Float(_) => ScalarKind::Float,
            Scalar::Text(_) => ScalarKind::Text,
            Scalar::Bool(_) => ScalarKind::Bool,
            Scalar::Date(_) => ScalarKind::Date,
            Scalar::Symbol(_) => ScalarKind::Symbol,
        }
    }

    /// Total order within a variant; comparing different variants fails.
    pub fn compare(&self, other: &Scalar) -> Result<Ordering> {
        if self.kind() != other.kind() {
            return Err(Error::mismatch(self.kind(), other.kind()));
        }
        Ok(self.cmp(other))
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Scalar::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Int(i) => Some(*i as f64),
            Scalar::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Scalar::Text(s) => Some(s),
            Scalar::Symbol(s) => Some(s.as_str()),
            _ => None,
        }
    }

    pub fn as_symbol(&self) -> Option<Symbol> {
        match self {
            Scalar::Symbol(s) => Some(*s),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        self.kind() as u8
    }

    /// Text rendering without quotes, used by `to_text` and composite keys.
    pub fn render(&self) -> String {
        match self {
            Scalar::Int(i) => i.to_string(),
            Scalar::Float(f) => f.to_string(),
            Scalar::Text(s) => s.to_string(),
            Scalar::Bool(b) => b.to_string(),
            Scalar::Date(d) => d.format("%Y-%m-%d").to_string(),
            Scalar::Symbol(s) => s.as_str().to_owned(),
        }
    }
}

impl PartialEq for Scalar {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Scalar::Int(a), Scalar::Int(b)) => a == b,
            (Scalar::Float(a), Scalar::Float(b)) => a.total_cmp(b) == Ordering::Equal,
            (Scalar::Text(a), Scalar::Text(b)) => a == b,
            (Scalar::Bool(a), Scalar::Bool(b)) => a == b,
            (Scalar::Date(a), Scalar::Date(b)) => a == b,
            (Scalar::Symbol(a), Scalar::Symbol(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Scalar {}

impl Hash for Scalar {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            Scalar::Int(i) => i.hash(state),
            Scalar::Float(f) => f.to_bits().hash(state),
            Scalar::Text(s) => s.hash(state),
            Scalar::Bool(b) => b.hash(state),
            Scalar::Date(d) => d.hash(state),
            Scalar::Symbol(s) => s.as_str().hash(state),
        }
    }
}

impl PartialOrd for Scalar {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scalar {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Scalar::Int(a), Scalar::Int(b)) => a.cmp(b),
            (Scalar::Float(a), Scalar::Float(b)) => a.total_cmp(b),
            (Scalar::Text(a), Scalar::Text(b)) => a.cmp(b),
            (Scalar::Bool(a), Scalar::Bool(b)) => a.cmp(b),
            (Scalar::Date(a), Scalar::Date(b)) => a.cmp(b),
            (Scalar::Symbol(a), Scalar::Symbol(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Text(s) => write!(f, "{s:?}"),
            Scalar::Symbol(s) => write!(f, "{s}"),
            Scalar::Float(x) => write!(f, "{x:?}"),
            other => f.write_str(&other.render()),
        }
    }
}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::Int(v)
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Float(v)
    }
}

impl From<bool> for Scalar {
    fn from(v: bool) -> Self {
        Scalar::Bool(v)
    }
}

impl From<&str> for Scalar {
    fn from(v: &str) -> Self {
        Scalar::text(v)
    }
}

impl From<Symbol> for Scalar {
    fn from(v: Symbol) -> Self {
        Scalar::Symbol(v)
    }
}
