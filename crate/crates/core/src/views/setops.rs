//! Union, intersection and difference of maps, at any order.

use serde::{Deserialize, Serialize};

use super::typing::type_at;
use crate::error::{Error, Result};
use crate::model::{Domain, KeyPolicy, Map, MapPath, MapType, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Union,
    Intersect,
    Minus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetInputs {
    /// The maps at these paths.
    Paths(Vec<MapPath>),
    /// Every map held by the map at this path (e.g. the parts of a partition).
    Children(MapPath),
}

fn same_domain(a: &Domain, b: &Domain) -> bool {
    match (a, b) {
        (Domain::MapType(x), Domain::MapType(y)) => compatible(x, y),
        (Domain::Enumeration { target: t1, .. }, Domain::Enumeration { target: t2, .. }) => t1 == t2,
        _ => a == b,
    }
}

/// Same keys with the same domains, ignoring key policies, value
/// constraints and entry order.
pub(crate) fn compatible(a: &MapType, b: &MapType) -> bool {
    a.key_domain == b.key_domain
        && a.entries.len() == b.entries.len()
        && a.entries.iter().all(|ea| {
            b.entry(ea.key)
                .is_some_and(|eb| ea.optional == eb.optional && same_domain(&ea.domain, &eb.domain))
        })
        && match (&a.value_domain, &b.value_domain) {
            (None, None) => true,
            (Some(x), Some(y)) => same_domain(x, y),
            _ => false,
        }
}

fn check_combinable(t: &MapType) -> Result<()> {
    if t.is_homogeneous() {
        return Ok(());
    }
    if !t.entries.is_empty() && t.entries.iter().all(|e| e.domain.as_map_type().is_some()) {
        for e in &t.entries {
            check_combinable(e.domain.as_map_type().expect("checked"))?;
        }
        return Ok(());
    }
    Err(Error::InvalidView("set operations combine collections or databases of collections".into()))
}

pub(crate) fn set_type(t: &MapType, _kind: SetKind, inputs: &SetInputs) -> Result<MapType> {
    match inputs {
        SetInputs::Paths(paths) => {
            if paths.len() < 2 {
                return Err(Error::InvalidView("set operations need at least two inputs".into()));
            }
            let first = type_at(t, &paths[0])?;
            check_combinable(first)?;
            let mut out = first.clone();
            for p in &paths[1..] {
                let other = type_at(t, p)?;
                if !compatible(first, other) {
                    return Err(Error::TypeMismatch(format!("{} and {p} have incompatible schemas", paths[0])));
                }
                if other.key_policy != out.key_policy {
                    out.key_policy = KeyPolicy::Declared;
                }
            }
            Ok(out)
        }
        SetInputs::Children(p) => {
            let holder = type_at(t, p)?;
            let inner = holder
                .element_type()
                .ok_or_else(|| Error::InvalidView(format!("{p} does not hold maps of one type")))?;
            check_combinable(inner)?;
            Ok((**inner).clone())
        }
    }
}

fn combine(kind: SetKind, maps: &[&Map], t: &MapType) -> Result<Map> {
    if !t.is_homogeneous() {
        let mut out = Map::with_capacity(t.entries.len());
        for e in &t.entries {
            let key = crate::model::Scalar::Symbol(e.key);
            let parts: Vec<&Map> = maps
                .iter()
                .map(|m| {
                    m.get(&key)
                        .and_then(Value::as_map)
                        .ok_or_else(|| Error::UnknownKey(format!("{}", e.key)))
                })
                .collect::<Result<_>>()?;
            let inner = e.domain.as_map_type().expect("checked at construction");
            out.insert(MapType::entry_key(e), Value::map(combine(kind, &parts, inner)?))?;
        }
        return Ok(out);
    }
    let Some((first, rest)) = maps.split_first() else {
        return Ok(Map::new());
    };
    let mut out = (*first).clone();
    match kind {
        SetKind::Union => {
            for m in rest {
                for (k, v) in m.iter() {
                    match out.get(&k.value) {
                        Some(x) if x == v => {}
                        Some(_) => {
                            return Err(Error::KeyConflict(format!(
                                "key {} holds different values in the inputs",
                                k.value
                            )))
                        }
                        None => out.insert(k.clone(), v.clone())?,
                    }
                }
            }
        }
        SetKind::Intersect => out.retain(|k, v| rest.iter().all(|m| m.get(&k.value) == Some(v))),
        SetKind::Minus => out.retain(|k, v| !rest.iter().any(|m| m.get(&k.value) == Some(v))),
    }
    Ok(out)
}

pub(crate) fn set_eval(input: &Map, out_t: &MapType, kind: SetKind, inputs: &SetInputs) -> Result<Map> {
    let maps: Vec<&Map> = match inputs {
        SetInputs::Paths(paths) => paths
            .iter()
            .map(|p| super::typing::map_at(input, p))
            .collect::<Result<_>>()?,
        SetInputs::Children(p) => super::typing::map_at(input, p)?
            .values()
            .iter()
            .map(|v| v.deref_map().ok_or_else(|| Error::InvalidView(format!("{p} holds a non-map"))))
            .collect::<Result<_>>()?,
    };
    combine(kind, &maps, out_t)
}
