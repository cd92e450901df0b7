//! Canonical JSON encoding of scalars, maps and map types.
//!
//! Maps are JSON objects in insertion order. Symbolic keys holding a symbol
//! are written as the bare name; every other key is written as
//! `#<kind><type>:<payload>` so that key kinds survive a round trip.
//! Scalars that JSON cannot express natively use single-entry tagged
//! objects: `{"$date": ..}`, `{"$sym": ..}`, `{"$float": ..}`. Links are
//! `{"$ref": [path, key]}` and map types are wrapped as `{"$type": ..}`.

use std::collections::HashSet;
use std::sync::Arc;

use indexmap::IndexMap;
use serde_json::{json, Map as JsonObject, Number, Value as Json};

use crate::error::{Error, Result};
use crate::model::{Key, KeyKind, Map, MapPath, MapType, Ref, Scalar, Symbol, Value};

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

pub fn scalar_to_json(s: &Scalar) -> Json {
    match s {
        Scalar::Int(i) => Json::from(*i),
        Scalar::Float(f) => match Number::from_f64(*f) {
            Some(n) => Json::Number(n),
            None => json!({ "$float": f.to_string() }),
        },
        Scalar::Text(t) => Json::String(t.to_string()),
        Scalar::Bool(b) => Json::Bool(*b),
        Scalar::Date(_) => json!({ "$date": s.render() }),
        Scalar::Symbol(sym) => json!({ "$sym": sym.as_str() }),
    }
}

pub fn scalar_from_json(v: &Json) -> Result<Scalar> {
    match v {
        Json::Number(n) => {
            if let Some(i) = n.as_i64() {
                Ok(Scalar::Int(i))
            } else if n.is_u64() {
                Err(parse_err(format!("integer {n} out of range")))
            } else {
                Ok(Scalar::Float(n.as_f64().expect("finite json number")))
            }
        }
        Json::String(s) => Ok(Scalar::text(s)),
        Json::Bool(b) => Ok(Scalar::Bool(*b)),
        Json::Object(o) if o.len() == 1 => {
            let (tag, payload) = o.iter().next().expect("one entry");
            let text = payload
                .as_str()
                .ok_or_else(|| parse_err(format!("{tag} payload must be a string")))?;
            match tag.as_str() {
                "$date" => Scalar::date(text),
                "$sym" => Ok(Scalar::sym(text)),
                "$float" => text
                    .parse::<f64>()
                    .map(Scalar::Float)
                    .map_err(|_| parse_err(format!("bad float {text:?}"))),
                _ => Err(parse_err(format!("not a scalar: {v}"))),
            }
        }
        _ => Err(parse_err(format!("not a scalar: {v}"))),
    }
}

fn kind_char(k: KeyKind) -> char {
    match k {
        KeyKind::Symbolic => 'y',
        KeyKind::Computed => 'c',
        KeyKind::Surrogate => 's',
    }
}

fn type_char(s: &Scalar) -> char {
    match s {
        Scalar::Int(_) => 'i',
        Scalar::Float(_) => 'f',
        Scalar::Text(_) => 't',
        Scalar::Bool(_) => 'b',
        Scalar::Date(_) => 'd',
        Scalar::Symbol(_) => 'y',
    }
}

pub fn key_to_string(k: &Key) -> String {
    if let (KeyKind::Symbolic, Scalar::Symbol(s)) = (k.kind, &k.value) {
        let name = s.as_str();
        if !name.starts_with('#') && !name.starts_with('$') {
            return name.to_owned();
        }
    }
    format!("#{}{}:{}", kind_char(k.kind), type_char(&k.value), k.value.render())
}

pub fn key_from_string(s: &str) -> Result<Key> {
    let Some(rest) = s.strip_prefix('#') else {
        return Ok(Key::sym(s));
    };
    let bad = || parse_err(format!("bad key encoding {s:?}"));
    let mut chars = rest.chars();
    let kind = match chars.next() {
        Some('y') => KeyKind::Symbolic,
        Some('c') => KeyKind::Computed,
        Some('s') => KeyKind::Surrogate,
        _ => return Err(bad()),
    };
    let ty = chars.next().ok_or_else(bad)?;
    let payload = chars.as_str().strip_prefix(':').ok_or_else(bad)?;
    let value = match ty {
        'i' => Scalar::Int(payload.parse().map_err(|_| bad())?),
        'f' => Scalar::Float(payload.parse().map_err(|_| bad())?),
        't' => Scalar::text(payload),
        'b' => Scalar::Bool(payload.parse().map_err(|_| bad())?),
        'd' => Scalar::date(payload)?,
        'y' => Scalar::sym(payload),
        _ => return Err(bad()),
    };
    Ok(Key::new(value, kind))
}

pub fn value_to_json(v: &Value) -> Json {
    match v {
        Value::Scalar(s) => scalar_to_json(s),
        Value::Map(m) => map_to_json(m),
        Value::Ref(r) => {
            let path: Vec<&str> = r.path().segments().iter().map(|s| s.as_str()).collect();
            json!({ "$ref": [path, scalar_to_json(r.key())] })
        }
    }
}

pub fn map_to_json(m: &Map) -> Json {
    let mut o = JsonObject::with_capacity(m.len());
    for (k, v) in m.iter() {
        o.insert(key_to_string(k), value_to_json(v));
    }
    Json::Object(o)
}

/// Decodes a value. Links decode to unresolved refs whose target is the
/// key itself; `schema::relink` binds them to live entries.
pub fn value_from_json(v: &Json) -> Result<Value> {
    match v {
        Json::Object(o) => {
            if o.len() == 1 {
                let (tag, payload) = o.iter().next().expect("one entry");
                if tag == "$ref" {
                    return ref_from_json(payload).map(Value::Ref);
                }
                if tag.starts_with('$') {
                    return scalar_from_json(v).map(Value::Scalar);
                }
            }
            map_from_object(o).map(Value::map)
        }
        Json::Null => Err(parse_err("null is not a value")),
        Json::Array(_) => Err(parse_err("arrays are not values; use a map")),
        other => scalar_from_json(other).map(Value::Scalar),
    }
}

fn ref_from_json(payload: &Json) -> Result<Ref> {
    let bad = || parse_err(format!("bad $ref payload {payload}"));
    let arr = payload.as_array().filter(|a| a.len() == 2).ok_or_else(bad)?;
    let segs = arr[0].as_array().ok_or_else(bad)?;
    let path = segs
        .iter()
        .map(|s| s.as_str().map(Symbol::new).ok_or_else(bad))
        .collect::<Result<Vec<_>>>()?;
    let key = scalar_from_json(&arr[1])?;
    Ok(Ref::new(MapPath::new(path), key.clone(), Value::Scalar(key)))
}

fn map_from_object(o: &JsonObject<String, Json>) -> Result<Map> {
    let mut m = Map::with_capacity(o.len());
    for (k, v) in o {
        m.insert(key_from_string(k)?, value_from_json(v)?)?;
    }
    Ok(m)
}

pub fn map_from_json(v: &Json) -> Result<Map> {
    match v {
        Json::Object(o) => map_from_object(o),
        _ => Err(parse_err("expected a JSON object for a map")),
    }
}

pub fn type_to_json(t: &MapType) -> Json {
    json!({ "$type": serde_json::to_value(t).expect("map types serialize") })
}

/// Accepts both the `{"$type": ..}` wrapper and a bare type object.
pub fn type_from_json(v: &Json) -> Result<MapType> {
    let inner = v.get("$type").unwrap_or(v);
    let t: MapType = serde_json::from_value(inner.clone())?;
    t.check()?;
    Ok(t)
}

pub fn to_string_pretty(v: &Json) -> String {
    serde_json::to_string_pretty(v).expect("json values serialize")
}

/// Named map types that may refer to each other: anywhere a nested map
/// type is expected (`{"map": ..}`), a string names another registered type.
#[derive(Debug, Default, Clone)]
pub struct TypeRegistry {
    raw: IndexMap<Symbol, Json>,
    resolved: IndexMap<Symbol, Arc<MapType>>,
}

impl TypeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_json(v: &Json) -> Result<TypeRegistry> {
        let o = v
            .as_object()
            .ok_or_else(|| parse_err("type registry must be an object"))?;
        let mut reg = TypeRegistry::new();
        for (name, def) in o {
            reg.raw.insert(Symbol::new(name), def.get("$type").unwrap_or(def).clone());
        }
        let names: Vec<Symbol> = reg.raw.keys().copied().collect();
        for name in names {
            reg.resolve(name)?;
        }
        Ok(reg)
    }

    pub fn register(&mut self, name: &str, t: Arc<MapType>) {
        let name = Symbol::new(name);
        self.raw.insert(name, serde_json::to_value(t.as_ref()).expect("serialize"));
        self.resolved.insert(name, t);
    }

    pub fn get(&self, name: Symbol) -> Option<&Arc<MapType>> {
        self.resolved.get(&name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Symbol, &Arc<MapType>)> {
        self.resolved.iter().map(|(k, v)| (*k, v))
    }

    pub fn to_json(&self) -> Json {
        Json::Object(
            self.resolved
                .iter()
                .map(|(k, t)| (k.to_string(), serde_json::to_value(t.as_ref()).expect("serialize")))
                .collect(),
        )
    }

    /// Order of a named type; fails on cyclic nesting.
    pub fn order(&self, name: Symbol) -> Result<usize> {
        match self.resolved.get(&name) {
            Some(t) => Ok(t.order()),
            None => {
                let mut reg = self.clone();
                reg.resolve(name).map(|t| t.order())
            }
        }
    }

    /// Adds a raw definition without resolving it.
    pub fn define(&mut self, name: &str, def: Json) {
        let name = Symbol::new(name);
        self.resolved.shift_remove(&name);
        self.raw.insert(name, def);
    }

    /// Resolves an anonymous definition that may name registered types.
    pub fn resolve_json(&mut self, def: &Json) -> Result<MapType> {
        let mut stack = HashSet::new();
        let expanded = self.expand(def.get("$type").unwrap_or(def).clone(), &mut stack)?;
        let t: MapType = serde_json::from_value(expanded)?;
        t.check()?;
        Ok(t)
    }

    pub fn resolve(&mut self, name: Symbol) -> Result<Arc<MapType>> {
        let mut stack = HashSet::new();
        self.resolve_inner(name, &mut stack)
    }

    fn resolve_inner(&mut self, name: Symbol, stack: &mut HashSet<Symbol>) -> Result<Arc<MapType>> {
        if let Some(t) = self.resolved.get(&name) {
            return Ok(t.clone());
        }
        if !stack.insert(name) {
            return Err(Error::CyclicMapType(name));
        }
        let raw = self
            .raw
            .get(&name)
            .cloned()
            .ok_or_else(|| Error::InvalidSchema(format!("unknown type {name}")))?;
        let expanded = self.expand(raw, stack)?;
        let t: MapType = serde_json::from_value(expanded)?;
        t.check()?;
        let t = Arc::new(t);
        stack.remove(&name);
        self.resolved.insert(name, t.clone());
        Ok(t)
    }

    /// Replaces `{"map": "Name"}` with the resolved definition.
    fn expand(&mut self, v: Json, stack: &mut HashSet<Symbol>) -> Result<Json> {
        Ok(match v {
            Json::Object(o) => {
                let mut out = JsonObject::with_capacity(o.len());
                for (k, v) in o {
                    let v = match (k.as_str(), v) {
                        ("map", Json::String(name)) => {
                            let t = self.resolve_inner(Symbol::new(&name), stack)?;
                            serde_json::to_value(t.as_ref())?
                        }
                        (_, v) => self.expand(v, stack)?,
                    };
                    out.insert(k, v);
                }
                Json::Object(out)
            }
            Json::Array(a) => Json::Array(
                a.into_iter()
                    .map(|v| self.expand(v, stack))
                    .collect::<Result<_>>()?,
            ),
            other => other,
        })
    }
}
