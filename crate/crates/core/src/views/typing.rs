//! Type-level helpers shared by the view builders.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{Domain, EntryType, Map, MapPath, MapType, Ref, ScalarKind, Symbol, Value};

/// Path segment that addresses every element of a homogeneous map.
pub const EACH: &str = "*";

fn is_each(s: &Symbol) -> bool {
    s.as_str() == EACH
}

pub(crate) fn type_at<'a>(t: &'a MapType, path: &MapPath) -> Result<&'a MapType> {
    t.type_at(path.segments())
        .ok_or_else(|| Error::UnknownKey(format!("no map type at {path}")))
}

/// The homogeneous map type at `path`, with its element type.
pub(crate) fn collection_at<'a>(t: &'a MapType, path: &MapPath) -> Result<(&'a MapType, &'a Arc<MapType>)> {
    let c = type_at(t, path)?;
    match c.element_type() {
        Some(e) if c.is_homogeneous() => Ok((c, e)),
        _ => Err(Error::InvalidView(format!("{path} does not hold a collection of maps"))),
    }
}

pub(crate) fn replace_type_at(
    t: &MapType,
    segs: &[Symbol],
    f: &mut dyn FnMut(&MapType) -> Result<MapType>,
) -> Result<MapType> {
    let Some((head, rest)) = segs.split_first() else {
        return f(t);
    };
    let mut out = t.clone();
    if let Some(i) = t.entries.iter().position(|e| e.key == *head) {
        let inner = t.entries[i]
            .domain
            .as_map_type()
            .ok_or_else(|| Error::InvalidView(format!("{head} is not map-typed")))?;
        out.entries[i].domain = Domain::map(replace_type_at(inner, rest, f)?);
        return Ok(out);
    }
    match t.element_type() {
        Some(inner) if is_each(head) || t.entries.is_empty() => {
            out.value_domain = Some(Domain::map(replace_type_at(inner, rest, f)?));
            Ok(out)
        }
        _ => Err(Error::UnknownKey(format!("{head}"))),
    }
}

pub(crate) fn update_map_at(m: &Map, segs: &[Symbol], f: &mut dyn FnMut(&Map) -> Result<Map>) -> Result<Map> {
    let Some((head, rest)) = segs.split_first() else {
        return f(m);
    };
    let mut out = m.clone();
    if is_each(head) {
        for i in 0..m.len() {
            let (k, v) = m.get_index(i).expect("in range");
            let inner = v
                .as_map()
                .ok_or_else(|| Error::InvalidView(format!("{} is not a map", k.value)))?;
            *out.get_mut(&k.value).expect("same keys") = Value::map(update_map_at(inner, rest, f)?);
        }
        return Ok(out);
    }
    let key = crate::model::Scalar::Symbol(*head);
    let inner = m
        .get(&key)
        .and_then(Value::as_map)
        .ok_or_else(|| Error::UnknownKey(format!("{head}")))?;
    *out.get_mut(&key).expect("present") = Value::map(update_map_at(inner, rest, f)?);
    Ok(out)
}

pub(crate) fn map_at<'a>(m: &'a Map, path: &MapPath) -> Result<&'a Map> {
    m.at_path(path.segments())
        .ok_or_else(|| Error::UnknownKey(format!("no map at {path}")))
}

fn same_domain(o: &Domain, i: &Domain) -> bool {
    match (o, i) {
        (Domain::MapType(a), Domain::MapType(b)) => subset_of(a, b),
        (a, b) => a == b,
    }
}

/// Structural schema inclusion used to tell constraining from transforming
/// views: `o` keeps a subset of `i`'s keys with the same domains (key
/// policies and value constraints ignored), or is such a subset of a type
/// nested somewhere in `i`.
pub fn schema_subset(o: &MapType, i: &MapType) -> bool {
    subset_of(o, i)
        || i.entries
            .iter()
            .map(|e| &e.domain)
            .chain(i.value_domain.iter())
            .filter_map(Domain::as_map_type)
            .any(|inner| schema_subset(o, inner))
}

fn subset_of(o: &MapType, i: &MapType) -> bool {
    if o.key_domain != i.key_domain {
        return false;
    }
    let entries_ok = o.entries.iter().all(|oe| {
        i.entry(oe.key)
            .is_some_and(|ie| same_domain(&oe.domain, &ie.domain))
    });
    let values_ok = match (&o.value_domain, &i.value_domain) {
        (None, _) => true,
        (Some(a), Some(b)) => same_domain(a, b),
        (Some(_), None) => false,
    };
    entries_ok && values_ok
}

/// Replaces link domains by their scalar key domains, for checking payloads
/// written with plain keys.
pub(crate) fn erase_links(t: &MapType, root: &MapType) -> Result<MapType> {
    let mut out = t.clone();
    for e in &mut out.entries {
        e.domain = erase_domain(&e.domain, root)?;
    }
    if let Some(d) = &t.value_domain {
        out.value_domain = Some(erase_domain(d, root)?);
    }
    Ok(out)
}

fn erase_domain(d: &Domain, root: &MapType) -> Result<Domain> {
    Ok(match d {
        Domain::ForeignKey { key_kind, .. } => Domain::Scalar(*key_kind),
        Domain::Enumeration { target, fk_kind } => Domain::Scalar(match fk_kind {
            Some(k) => *k,
            None => root
                .type_at(target.segments())
                .ok_or_else(|| Error::UnresolvedDomainTarget(target.to_string()))?
                .key_domain
                .unwrap_or(ScalarKind::Symbol),
        }),
        Domain::MapType(inner) => Domain::map(erase_links(inner, root)?),
        other => other.clone(),
    })
}

/// Key domain a relation's keys are drawn from.
pub(crate) fn key_kind(t: &MapType) -> ScalarKind {
    t.key_domain.unwrap_or(ScalarKind::Symbol)
}

/// Keeps Cn in step with the declared entries: exact for tuple types
/// without optional keys, unconstrained otherwise.
pub(crate) fn fix_n(t: &mut MapType) {
    if t.entries.is_empty() {
        return;
    }
    t.n = if t.entries.iter().any(|e| e.optional) {
        None
    } else {
        Some(t.entries.len())
    };
}

pub(crate) fn tuple_type(entries: Vec<EntryType>) -> MapType {
    let mut t = MapType::rmt(entries);
    fix_n(&mut t);
    t
}

/// Scalar kind an attribute contributes to keys and comparisons.
pub(crate) fn scalar_kind_of(d: &Domain, root: &MapType) -> Result<ScalarKind> {
    match d {
        Domain::Scalar(k) => Ok(*k),
        Domain::ForeignKey { key_kind, .. } => Ok(*key_kind),
        Domain::Enumeration { fk_kind: Some(k), .. } => Ok(*k),
        Domain::Enumeration { target, fk_kind: None } => Ok(key_kind(
            root.type_at(target.segments())
                .ok_or_else(|| Error::UnresolvedDomainTarget(target.to_string()))?,
        )),
        Domain::MapType(_) => Err(Error::MapValuedKey),
    }
}

/// Replaces links by the keys they name, at any depth.
pub(crate) fn refs_to_keys(v: &Value) -> Value {
    match v {
        Value::Ref(r) => Value::Scalar(r.key().clone()),
        Value::Map(m) => {
            if !m.values().iter().any(|x| !matches!(x, Value::Scalar(_))) {
                return v.clone();
            }
            let mut out = (**m).clone();
            for i in 0..m.len() {
                let (k, x) = m.get_index(i).expect("in range");
                if !matches!(x, Value::Scalar(_)) {
                    *out.get_mut(&k.value).expect("same keys") = refs_to_keys(x);
                }
            }
            Value::map(out)
        }
        Value::Scalar(_) => v.clone(),
    }
}

/// Turns plain keys under enumeration domains into links awaiting binding.
pub(crate) fn bind_links(v: &Value, d: &Domain) -> Result<Value> {
    let r = crate::schema::rewrite_links(v, d, &mut |x, dom| match (dom, x) {
        (Domain::Enumeration { target, .. }, Value::Scalar(k)) => Ok(Some(Value::Ref(Ref::new(
            target.clone(),
            k.clone(),
            Value::Scalar(k.clone()),
        )))),
        _ => Ok(None),
    })?;
    Ok(r.unwrap_or_else(|| v.clone()))
}

/// Link targets are absolute paths in the nearest enclosing database:
/// the original input when a node addresses its whole input, otherwise
/// the node's input.
pub(crate) fn link_root<'a, T>(current: &'a T, original: &'a T, path: &MapPath) -> &'a T {
    if path.is_root() {
        original
    } else {
        current
    }
}
