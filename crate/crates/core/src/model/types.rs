use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Key, KeyKind, MapPath, Scalar, ScalarKind, Symbol};
use crate::error::{Error, Result};

/// A value domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Case 1: any scalar of the kind.
    Scalar(ScalarKind),
    /// Case 3: any map conforming to the type (an exclusive, embedded value).
    #[serde(rename = "map")]
    MapType(Arc<MapType>),
    /// Case 4: a value currently assigned in the map at `target` (a link).
    /// `fk_kind` remembers the key kind when the link came from swizzling.
    #[serde(rename = "enum")]
    Enumeration {
        target: MapPath,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fk_kind: Option<ScalarKind>,
    },
    /// Case 2: a scalar that must exist as a key of the map at `target`.
    #[serde(rename = "fk")]
    ForeignKey { target: MapPath, key_kind: ScalarKind },
}

impl Domain {
    pub fn int() -> Domain {
        Domain::Scalar(ScalarKind::Int)
    }

    pub fn text() -> Domain {
        Domain::Scalar(ScalarKind::Text)
    }

    pub fn map(t: MapType) -> Domain {
        Domain::MapType(Arc::new(t))
    }

    pub fn enumeration(target: impl Into<MapPath>) -> Domain {
        Domain::Enumeration {
            target: target.into(),
            fk_kind: None,
        }
    }

    pub fn foreign_key(target: impl Into<MapPath>, key_kind: ScalarKind) -> Domain {
        Domain::ForeignKey {
            target: target.into(),
            key_kind,
        }
    }

    pub fn link_target(&self) -> Option<&MapPath> {
        match self {
            Domain::Enumeration { target, .. } | Domain::ForeignKey { target, .. } => Some(target),
            _ => None,
        }
    }

    pub fn scalar_kind(&self) -> Option<ScalarKind> {
        match self {
            Domain::Scalar(k) => Some(*k),
            Domain::ForeignKey { key_kind, .. } => Some(*key_kind),
            _ => None,
        }
    }

    pub fn as_map_type(&self) -> Option<&Arc<MapType>> {
        match self {
            Domain::MapType(t) => Some(t),
            _ => None,
        }
    }

    fn order(&self) -> Option<usize> {
        self.as_map_type().map(|t| t.order())
    }
}

/// Attribute projection used by computed keys.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    Attr(Symbol),
    Tuple(Vec<Symbol>),
}

impl Projection {
    pub fn attrs(&self) -> &[Symbol] {
        match self {
            Projection::Attr(a) => std::slice::from_ref(a),
            Projection::Tuple(v) => v,
        }
    }
}

/// How the keys of a homogeneous map are obtained.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyPolicy {
    #[default]
    Declared,
    Computed(Projection),
    /// Engine-managed hidden identity.
    Surrogate,
}

impl KeyPolicy {
    pub fn key_kind(&self) -> KeyKind {
        match self {
            KeyPolicy::Declared => KeyKind::Symbolic,
            KeyPolicy::Computed(_) => KeyKind::Computed,
            KeyPolicy::Surrogate => KeyKind::Surrogate,
        }
    }

    pub fn is_hidden(&self) -> bool {
        matches!(self, KeyPolicy::Surrogate)
    }
}

/// CV: a named, serializable predicate on assigned values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Range {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<ScalarLit>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<ScalarLit>,
    },
    OneOf(Vec<ScalarLit>),
}

/// A scalar literal inside a serialized type or view; encoded with the
/// canonical scalar encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarLit(pub Scalar);

impl Serialize for ScalarLit {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        crate::json::scalar_to_json(&self.0).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ScalarLit {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        crate::json::scalar_from_json(&v)
            .map(ScalarLit)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueConstraint {
    /// The constrained attribute; `None` constrains every value of the map.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<Symbol>,
    pub check: Check,
}

impl ValueConstraint {
    pub fn holds(&self, v: &Scalar) -> bool {
        match &self.check {
            Check::Range { min, max } => {
                let lo = min.as_ref().map_or(true, |m| {
                    v.compare(&m.0).map(|o| o.is_ge()).unwrap_or(false)
                });
                let hi = max.as_ref().map_or(true, |m| {
                    v.compare(&m.0).map(|o| o.is_le()).unwrap_or(false)
                });
                lo && hi
            }
            Check::OneOf(options) => options.iter().any(|o| &o.0 == v),
        }
    }
}

/// A declared key with its value domain; optional entries may be absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryType {
    pub key: Symbol,
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub optional: bool,
}

impl EntryType {
    pub fn new(key: &str, domain: Domain) -> EntryType {
        EntryType {
            key: Symbol::new(key),
            domain,
            optional: false,
        }
    }

    pub fn optional(key: &str, domain: Domain) -> EntryType {
        EntryType {
            optional: true,
            ..EntryType::new(key, domain)
        }
    }
}

/// A map type: any combination of the five constraint kinds.
///
/// * `n`: Cn, the number of assignments
/// * `key_domain`: CKD, restricted to scalar kinds
/// * `entries`: CK plus per-key CVD for declared keys
/// * `value_domain`: CVD for maps whose keys are not declared (relations,
///   sets of databases)
/// * `constraints`: CV
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MapType {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_domain: Option<ScalarKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entries: Vec<EntryType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_domain: Option<Domain>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<ValueConstraint>,
    #[serde(default, skip_serializing_if = "is_declared")]
    pub key_policy: KeyPolicy,
}

fn is_declared(p: &KeyPolicy) -> bool {
    *p == KeyPolicy::Declared
}

impl MapType {
    /// A tuple type `{ K1: D1, ..., Kn: Dn }`.
    pub fn rmt(entries: impl IntoIterator<Item = EntryType>) -> MapType {
        let entries: Vec<EntryType> = entries.into_iter().collect();
        MapType {
            n: Some(entries.len()),
            key_domain: Some(ScalarKind::Symbol),
            entries,
            ..MapType::default()
        }
    }

    /// A relation type: every value conforms to `element`.
    pub fn rhomt(element: Arc<MapType>, key_kind: ScalarKind, key_policy: KeyPolicy) -> MapType {
        MapType {
            key_domain: Some(key_kind),
            value_domain: Some(Domain::MapType(element)),
            key_policy,
            ..MapType::default()
        }
    }

    /// A map with one declared entry per named nested type (a database
    /// schema when the nested types are relation types).
    pub fn record(entries: impl IntoIterator<Item = (Symbol, Arc<MapType>)>) -> MapType {
        MapType::rmt(entries.into_iter().map(|(k, t)| EntryType {
            key: k,
            domain: Domain::MapType(t),
            optional: false,
        }))
    }

    /// A homogeneous map of `inner` instances keyed by scalars of `key_kind`.
    pub fn collection(inner: Arc<MapType>, key_kind: ScalarKind) -> MapType {
        MapType::rhomt(inner, key_kind, KeyPolicy::Declared)
    }

    pub fn with_constraint(mut self, c: ValueConstraint) -> MapType {
        self.constraints.push(c);
        self
    }

    pub fn entry(&self, key: Symbol) -> Option<&EntryType> {
        self.entries.iter().find(|e| e.key == key)
    }

    /// The common value type of a homogeneous map.
    pub fn element_type(&self) -> Option<&Arc<MapType>> {
        self.value_domain.as_ref().and_then(Domain::as_map_type)
    }

    pub fn is_homogeneous(&self) -> bool {
        self.value_domain.is_some() && self.entries.is_empty()
    }

    pub fn mandatory_count(&self) -> usize {
        self.entries.iter().filter(|e| !e.optional).count()
    }

    /// Cn = c > 0, symbolic key domain, all keys declared.
    pub fn is_rmt(&self) -> bool {
        matches!(self.n, Some(c) if c > 0)
            && self.key_domain == Some(ScalarKind::Symbol)
            && !self.entries.is_empty()
            && self.value_domain.is_none()
    }

    /// Every value shares the same tuple type.
    pub fn is_rhomt(&self) -> bool {
        self.is_homogeneous() && self.element_type().is_some_and(|t| t.is_rmt())
    }

    /// At least one key or value domain is a map type.
    pub fn is_homt(&self) -> bool {
        self.order() > 0
    }

    /// Nesting depth: 0 without nested map-type domains, otherwise one more
    /// than the deepest nested map type. Links do not nest.
    pub fn order(&self) -> usize {
        self.entries
            .iter()
            .map(|e| &e.domain)
            .chain(self.value_domain.iter())
            .filter_map(Domain::order)
            .map(|o| o + 1)
            .max()
            .unwrap_or(0)
    }

    /// The nested type reached by following `path` through declared entries
    /// or the homogeneous value domain.
    pub fn type_at(&self, path: &[Symbol]) -> Option<&MapType> {
        let mut cur = self;
        for seg in path {
            cur = match cur.entry(*seg) {
                Some(e) => e.domain.as_map_type()?,
                None => cur.element_type()?,
            };
        }
        Some(cur)
    }

    /// Structural invariants of the type itself.
    pub fn check(&self) -> Result<()> {
        let total = self.entries.len();
        let mandatory = self.mandatory_count();
        if let Some(n) = self.n {
            if !self.entries.is_empty() && (n < mandatory || n > total) {
                return Err(Error::InvalidSchema(format!(
                    "Cn = {n} outside [{mandatory}, {total}] for the declared keys"
                )));
            }
        }
        for (i, e) in self.entries.iter().enumerate() {
            if self.entries[..i].iter().any(|p| p.key == e.key) {
                return Err(Error::InvalidSchema(format!("key {} declared twice", e.key)));
            }
            if let Some(t) = e.domain.as_map_type() {
                t.check()?;
            }
        }
        if !self.entries.is_empty() && self.key_domain.is_some_and(|k| k != ScalarKind::Symbol) {
            return Err(Error::InvalidSchema(
                "declared keys require a symbolic key domain".into(),
            ));
        }
        if let Some(t) = self.element_type() {
            t.check()?;
            if let KeyPolicy::Computed(p) = &self.key_policy {
                for a in p.attrs() {
                    if t.entry(*a).is_none() {
                        return Err(Error::InvalidSchema(format!(
                            "computed key projects {a}, which the element type does not declare"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// The key a declared entry is stored under.
    pub fn entry_key(e: &EntryType) -> Key {
        Key::from(e.key)
    }
}
