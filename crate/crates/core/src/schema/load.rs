use std::collections::HashMap;
use std::sync::Arc;

use indexmap::IndexMap;
use serde_json::Value as Json;

use super::{relink, validate_database, Database, DatabaseSchema};
use crate::error::{Error, Result};
use crate::json::{key_from_string, scalar_from_json};
use crate::model::{
    project_key, Domain, Key, KeyPolicy, Map, MapType, Ref, Scalar, ScalarKind, SurrogateCounter, Symbol, Value,
    ViolationKind,
};

/// One flat record file: one JSON object per line.
#[derive(Clone, Debug)]
pub struct RecordSource {
    pub relation: Symbol,
    /// Shown in diagnostics, usually the file name.
    pub label: String,
    pub text: String,
}

#[derive(Clone, Debug)]
pub struct LoadedRelation {
    pub map: Map,
    /// Rendered key -> 1-based line number.
    pub lines: HashMap<String, usize>,
    pub counter: SurrogateCounter,
}

fn coerce_scalar(j: &Json, kind: ScalarKind) -> Result<Scalar> {
    let mismatch = || Error::TypeMismatch(format!("expected {kind}, found {j}"));
    let s = match (kind, j) {
        (ScalarKind::Int, Json::Number(n)) => Scalar::Int(n.as_i64().ok_or_else(mismatch)?),
        (ScalarKind::Float, Json::Number(n)) => Scalar::Float(n.as_f64().ok_or_else(mismatch)?),
        (ScalarKind::Text, Json::String(s)) => Scalar::text(s),
        (ScalarKind::Date, Json::String(s)) => Scalar::date(s)?,
        (ScalarKind::Symbol, Json::String(s)) => Scalar::sym(s),
        _ => scalar_from_json(j).map_err(|_| mismatch())?,
    };
    if s.kind() != kind {
        return Err(mismatch());
    }
    Ok(s)
}

/// Decodes a plain record value against its domain. Links are created
/// unbound; loading a database binds them.
pub fn record_to_value(j: &Json, d: &Domain) -> Result<Value> {
    match d {
        Domain::Scalar(k) | Domain::ForeignKey { key_kind: k, .. } => coerce_scalar(j, *k).map(Value::Scalar),
        Domain::Enumeration { target, fk_kind } => {
            let key = match fk_kind {
                Some(k) => coerce_scalar(j, *k)?,
                None => scalar_from_json(j)?,
            };
            Ok(Value::Ref(Ref::new(target.clone(), key.clone(), Value::Scalar(key))))
        }
        Domain::MapType(t) => record_to_map(j, t).map(Value::map),
    }
}

fn record_to_map(j: &Json, t: &MapType) -> Result<Map> {
    let o = j
        .as_object()
        .ok_or_else(|| Error::TypeMismatch(format!("expected an object, found {j}")))?;
    let mut m = Map::with_capacity(o.len());
    for (k, v) in o {
        if v.is_null() {
            continue;
        }
        let name = Symbol::new(k);
        let (key, dom) = match t.entry(name) {
            Some(e) => (Key::from(name), &e.domain),
            None => match &t.value_domain {
                Some(d) => (key_from_string(k)?, d),
                None => return Err(Error::UnknownKey(format!("{k} is not declared"))),
            },
        };
        m.insert(key, record_to_value(v, dom)?)?;
    }
    Ok(m)
}

/// Loads the records of one relation typed by `t`.
pub fn load_records(t: &MapType, label: &str, text: &str) -> Result<LoadedRelation> {
    let elem = t
        .element_type()
        .ok_or_else(|| Error::InvalidSchema(format!("{label}: records need a relation type")))?;
    let elem_domain = Domain::MapType(elem.clone());
    let mut out = LoadedRelation {
        map: Map::new(),
        lines: HashMap::new(),
        counter: SurrogateCounter::new(),
    };
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let at = |e: Error| Error::Parse(format!("{label}:{lineno}: {e}"));
        let mut j: Json = serde_json::from_str(line).map_err(|e| at(e.into()))?;
        let declared = j.as_object_mut().and_then(|o| o.shift_remove("$key"));
        let value = record_to_value(&j, &elem_domain).map_err(at)?;
        let key = match (&t.key_policy, declared) {
            (KeyPolicy::Declared, Some(k)) => {
                let kind = t.key_domain.unwrap_or(ScalarKind::Symbol);
                Key::new(coerce_scalar(&k, kind).map_err(at)?, crate::model::KeyKind::Symbolic)
            }
            (KeyPolicy::Declared, None) => return Err(at(Error::UnknownKey("record lacks \"$key\"".into()))),
            (KeyPolicy::Computed(p), _) => project_key(p, &value).map_err(at)?,
            (KeyPolicy::Surrogate, _) => out.counter.next_key(),
        };
        let rendered = key.value.render();
        out.map.insert(key, value).map_err(at)?;
        out.lines.insert(rendered, lineno);
    }
    Ok(out)
}

/// Builds and validates a database from record files. Relations without a
/// source start empty. Violations are reported with file and line.
pub fn load_database(
    schema: Arc<DatabaseSchema>,
    sources: &[RecordSource],
) -> Result<(Database, IndexMap<Symbol, SurrogateCounter>)> {
    let mut data = Map::with_capacity(schema.len());
    let mut counters = IndexMap::new();
    let mut provenance: HashMap<Symbol, (String, HashMap<String, usize>)> = HashMap::new();
    for src in sources {
        if schema.relation(src.relation).is_none() {
            return Err(Error::UnknownKey(format!("{} is not a relation of the schema", src.relation)));
        }
    }
    for (name, t) in schema.relations() {
        let mut rel = Map::new();
        let mut counter = SurrogateCounter::new();
        for src in sources.iter().filter(|s| s.relation == name) {
            let loaded = load_records(t, &src.label, &src.text)?;
            if rel.is_empty() {
                rel = loaded.map;
                counter = loaded.counter;
            } else {
                // Later files continue the surrogate sequence.
                for (k, v) in loaded.map.iter() {
                    let k = if t.key_policy.is_hidden() { counter.next_key() } else { k.clone() };
                    rel.insert(k, v.clone())
                        .map_err(|e| Error::Parse(format!("{}: {e}", src.label)))?;
                }
            }
            provenance.insert(name, (src.label.clone(), loaded.lines));
        }
        data.insert(Key::from(name), Value::map(rel))?;
        if t.key_policy.is_hidden() {
            counters.insert(name, counter);
        }
    }
    let db = relink(&Database::new(schema, data))?;
    let report = validate_database(&db)?;
    if report.conforms {
        return Ok((db, counters));
    }
    for v in &report.violations {
        let segs: Vec<&str> = v.at.trim_start_matches('/').split('/').collect();
        let place = match (segs.first(), segs.get(1)) {
            (Some(rel), Some(key)) => provenance
                .get(&Symbol::new(rel))
                .and_then(|(label, lines)| lines.get(*key).map(|l| format!("{label}:{l}")))
                .unwrap_or_else(|| v.at.clone()),
            _ => v.at.clone(),
        };
        let attr = v.key.clone().unwrap_or_default();
        match v.kind {
            ViolationKind::Referential => {
                return Err(Error::ReferentialViolation(format!(
                    "{place}: {attr} = {} has no match ({})",
                    v.actual, v.expected
                )))
            }
            ViolationKind::DanglingReference => {
                return Err(Error::DanglingReference(format!("{place}: {attr} = {}", v.actual)))
            }
            _ => {}
        }
    }
    Err(Error::NonConforming(report))
}
