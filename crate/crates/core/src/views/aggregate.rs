//! Grouping sets, partitioning and replication.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use super::expr::{COperand, Row};
use super::typing::{collection_at, fix_n, link_root, replace_type_at, type_at, update_map_at};
use super::{scope, Compiled, KeyPath, Operand, Registry};
use crate::error::{Error, Result};
use crate::model::{
    tuple_key, Domain, EntryType, Key, KeyKind, KeyPolicy, Map, MapPath, MapType, Projection, Scalar, ScalarKind,
    ScalarLit, Symbol, Value,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggFunc {
    Count,
    Sum,
    Min,
    Max,
    Avg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggSpec {
    pub func: AggFunc,
    /// Counted rows are those assigning `attr`; without it, all rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attr: Option<KeyPath>,
    pub out: Symbol,
}

impl AggSpec {
    pub fn count(out: &str) -> AggSpec {
        AggSpec {
            func: AggFunc::Count,
            attr: None,
            out: Symbol::new(out),
        }
    }

    pub fn of(func: AggFunc, attr: &str, out: &str) -> AggSpec {
        AggSpec {
            func,
            attr: Some(KeyPath::parse(attr)),
            out: Symbol::new(out),
        }
    }
}

/// One grouping: its output name, group-by attributes and aggregates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: Symbol,
    #[serde(default)]
    pub by: Vec<KeyPath>,
    pub aggs: Vec<AggSpec>,
}

impl GroupSpec {
    pub fn new(name: &str, by: &[&str], aggs: Vec<AggSpec>) -> GroupSpec {
        GroupSpec {
            name: Symbol::new(name),
            by: by.iter().map(|b| KeyPath::parse(b)).collect(),
            aggs,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct CAgg {
    func: AggFunc,
    attr: Option<COperand>,
    kind: ScalarKind,
    out: Symbol,
}

#[derive(Clone, Debug)]
pub(crate) struct CGroup {
    name: Symbol,
    by: Vec<COperand>,
    by_names: Vec<Symbol>,
    aggs: Vec<CAgg>,
}

fn group_type(g: &GroupSpec, coll: &MapType, elem: &MapType, root: &MapType, reg: &Registry) -> Result<(MapType, CGroup)> {
    let s = scope(coll, elem, root, reg);
    let mut entries = Vec::new();
    let mut by = Vec::new();
    let mut by_names = Vec::new();
    let mut kinds = Vec::new();
    for p in &g.by {
        let (c, ty) = s.operand(&Operand::Attr(p.clone()))?;
        let name = Symbol::new(&p.to_string());
        entries.push(EntryType::new(name.as_str(), Domain::Scalar(ty.kind)));
        by.push(c);
        by_names.push(name);
        kinds.push(ty.kind);
    }
    let mut aggs = Vec::new();
    for a in &g.aggs {
        let (attr, ty) = match &a.attr {
            Some(p) => {
                let (c, ty) = s.operand(&Operand::Attr(p.clone()))?;
                (Some(c), Some(ty))
            }
            None => (None, None),
        };
        let (kind, optional) = match (a.func, ty) {
            (AggFunc::Count, _) => (ScalarKind::Int, false),
            (_, None) => return Err(Error::InvalidView(format!("{:?} needs an attribute", a.func))),
            (AggFunc::Sum, Some(t)) | (AggFunc::Avg, Some(t)) if !t.kind.is_numeric() => {
                return Err(Error::TypeMismatch(format!("{:?} over non-numeric {}", a.func, t.kind)))
            }
            (AggFunc::Sum, Some(t)) => (t.kind, false),
            (AggFunc::Avg, Some(t)) => (ScalarKind::Float, t.optional || g.by.is_empty()),
            (AggFunc::Min | AggFunc::Max, Some(t)) => (t.kind, t.optional || g.by.is_empty()),
        };
        if entries.iter().any(|e: &EntryType| e.key == a.out) {
            return Err(Error::KeyConflict(format!("output {} named twice in {}", a.out, g.name)));
        }
        entries.push(EntryType {
            key: a.out,
            domain: Domain::Scalar(kind),
            optional,
        });
        aggs.push(CAgg {
            func: a.func,
            attr,
            kind,
            out: a.out,
        });
    }
    let elem_t = super::typing::tuple_type(entries);
    let (key_kind, projection) = match by_names.len() {
        1 => (kinds[0], Projection::Attr(by_names[0])),
        _ => (ScalarKind::Text, Projection::Tuple(by_names.clone())),
    };
    let t = MapType::rhomt(Arc::new(elem_t), key_kind, KeyPolicy::Computed(projection));
    Ok((
        t,
        CGroup {
            name: g.name,
            by,
            by_names,
            aggs,
        },
    ))
}

pub(crate) fn aggregate_type(
    t: &MapType,
    root: &MapType,
    reg: &Registry,
    path: &MapPath,
    groups: &[GroupSpec],
) -> Result<(MapType, Compiled)> {
    let (coll, elem) = collection_at(t, path)?;
    if groups.is_empty() {
        return Err(Error::InvalidView("aggregate needs at least one group".into()));
    }
    let lr = link_root(t, root, path);
    let mut outs = Vec::new();
    let mut compiled = Vec::new();
    for g in groups {
        if compiled.iter().any(|c: &CGroup| c.name == g.name) {
            return Err(Error::KeyConflict(format!("group {} named twice", g.name)));
        }
        let (gt, cg) = group_type(g, coll, elem, lr, reg)?;
        outs.push((g.name, Arc::new(gt)));
        compiled.push(cg);
    }
    let out = if outs.len() == 1 {
        (*outs.pop().expect("one group").1).clone()
    } else {
        MapType::record(outs)
    };
    Ok((out, Compiled::Aggregate(compiled)))
}

enum Acc {
    Count(i64),
    Sum(Scalar),
    Best(Option<Scalar>),
    Avg(f64, i64),
}

impl Acc {
    fn new(a: &CAgg) -> Acc {
        match a.func {
            AggFunc::Count => Acc::Count(0),
            AggFunc::Sum => Acc::Sum(if a.kind == ScalarKind::Float {
                Scalar::Float(0.0)
            } else {
                Scalar::Int(0)
            }),
            AggFunc::Min | AggFunc::Max => Acc::Best(None),
            AggFunc::Avg => Acc::Avg(0.0, 0),
        }
    }

    fn add(&mut self, func: AggFunc, v: Option<Scalar>) -> Result<()> {
        match (self, v) {
            (Acc::Count(n), Some(_)) => *n += 1,
            (_, None) => {}
            (Acc::Sum(s), Some(x)) => {
                *s = match (&*s, &x) {
                    (Scalar::Int(a), Scalar::Int(b)) => Scalar::Int(a.checked_add(*b).ok_or_else(|| Error::FunctionFailed {
                        name: Symbol::new("sum"),
                        message: "integer overflow".into(),
                    })?),
                    (Scalar::Float(a), Scalar::Float(b)) => Scalar::Float(a + b),
                    _ => return Err(Error::mismatch(s.kind(), x.kind())),
                }
            }
            (Acc::Best(b), Some(x)) => {
                let replace = match b {
                    None => true,
                    Some(cur) => {
                        let o = x.compare(cur)?;
                        if func == AggFunc::Min {
                            o.is_lt()
                        } else {
                            o.is_gt()
                        }
                    }
                };
                if replace {
                    *b = Some(x);
                }
            }
            (Acc::Avg(s, n), Some(x)) => {
                *s += x.as_f64().unwrap_or(0.0);
                *n += 1;
            }
        }
        Ok(())
    }

    fn finish(self) -> Option<Scalar> {
        match self {
            Acc::Count(n) => Some(Scalar::Int(n)),
            Acc::Sum(s) => Some(s),
            Acc::Best(b) => b,
            Acc::Avg(_, 0) => None,
            Acc::Avg(s, n) => Some(Scalar::Float(s / n as f64)),
        }
    }
}

fn run_group(g: &CGroup, m: &Map, lr: &Map) -> Result<Map> {
    let mut groups: IndexMap<Vec<Scalar>, Vec<Acc>> = IndexMap::new();
    if g.by.is_empty() {
        groups.insert(Vec::new(), g.aggs.iter().map(Acc::new).collect());
    }
    'rows: for (k, v) in m.iter() {
        let row = Row {
            key: &k.value,
            value: v,
            root: lr,
        };
        let mut gk = Vec::with_capacity(g.by.len());
        for b in &g.by {
            match b.eval(&row)? {
                Some(s) => gk.push(s),
                None => continue 'rows,
            }
        }
        let accs = groups
            .entry(gk)
            .or_insert_with(|| g.aggs.iter().map(Acc::new).collect());
        for (a, acc) in g.aggs.iter().zip(accs.iter_mut()) {
            let v = match &a.attr {
                Some(c) => c.eval(&row)?,
                None => Some(Scalar::Bool(true)),
            };
            acc.add(a.func, v)?;
        }
    }
    let mut out = Map::with_capacity(groups.len());
    for (gk, accs) in groups {
        let mut tuple = Map::with_capacity(g.by_names.len() + accs.len());
        for (n, v) in g.by_names.iter().zip(&gk) {
            tuple.set(Key::from(*n), Value::Scalar(v.clone()));
        }
        for (a, acc) in g.aggs.iter().zip(accs) {
            if let Some(v) = acc.finish() {
                tuple.set(Key::from(a.out), Value::Scalar(v));
            }
        }
        out.insert(Key::new(tuple_key(&gk), KeyKind::Computed), Value::map(tuple))?;
    }
    Ok(out)
}

pub(crate) fn aggregate_eval(input: &Map, root: &Map, path: &MapPath, groups: &[CGroup]) -> Result<Map> {
    let m = super::typing::map_at(input, path)?;
    let lr = link_root(input, root, path);
    if groups.len() == 1 {
        return run_group(&groups[0], m, lr);
    }
    let mut out = Map::with_capacity(groups.len());
    for g in groups {
        out.insert(Key::from(g.name), Value::map(run_group(g, m, lr)?))?;
    }
    Ok(out)
}

pub(crate) fn partition_type(
    t: &MapType,
    root: &MapType,
    reg: &Registry,
    path: &MapPath,
    by: &Operand,
    replicate: &[(ScalarLit, ScalarLit)],
) -> Result<(MapType, Compiled)> {
    let (coll, elem) = collection_at(t, path)?;
    let lr = link_root(t, root, path);
    let (c, ty) = scope(coll, elem, lr, reg).operand(by)?;
    if ty.optional {
        return Err(Error::InvalidView("the partition function must assign every element".into()));
    }
    let kk = super::typing::key_kind(coll);
    for (k, pid) in replicate {
        if k.0.kind() != kk || pid.0.kind() != ty.kind {
            return Err(Error::TypeMismatch(format!("replica ({}, {}) does not fit the keys", k.0, pid.0)));
        }
    }
    let parted = MapType::rhomt(Arc::new(coll.clone()), ty.kind, KeyPolicy::Declared);
    let out = replace_type_at(t, path.segments(), &mut |_| Ok(parted.clone()))?;
    Ok((out, Compiled::Partition(c)))
}

pub(crate) fn partition_eval(
    input: &Map,
    root: &Map,
    path: &MapPath,
    by: &COperand,
    replicate: &[(ScalarLit, ScalarLit)],
) -> Result<Map> {
    let lr = link_root(input, root, path);
    update_map_at(input, path.segments(), &mut |m| {
        let mut parts: IndexMap<Scalar, Map> = IndexMap::new();
        for (k, v) in m.iter() {
            let pid = by
                .eval(&Row {
                    key: &k.value,
                    value: v,
                    root: lr,
                })?
                .ok_or_else(|| Error::InvalidView(format!("no partition for element {}", k.value)))?;
            parts.entry(pid).or_default().insert(k.clone(), v.clone())?;
        }
        for (k, pid) in replicate {
            let (key, v) = m
                .get_key(&k.0)
                .zip(m.get(&k.0))
                .ok_or_else(|| Error::UnknownKey(format!("element {}", k.0)))?;
            let part = parts.entry(pid.0.clone()).or_default();
            if !part.contains_key(&key.value) {
                part.insert(key.clone(), v.clone())?;
            }
        }
        let mut out = Map::with_capacity(parts.len());
        for (pid, part) in parts {
            out.insert(Key::declared(pid), Value::map(part))?;
        }
        Ok(out)
    })
}

pub(crate) fn replicate_type(t: &MapType, path: &MapPath, copies: usize) -> Result<(MapType, Compiled)> {
    if copies == 0 {
        return Err(Error::InvalidView("replicate needs at least one copy".into()));
    }
    let inner = type_at(t, path)?.clone();
    let mut rep = MapType::rhomt(Arc::new(inner), ScalarKind::Int, KeyPolicy::Declared);
    rep.n = Some(copies);
    fix_n(&mut rep);
    let out = replace_type_at(t, path.segments(), &mut |_| Ok(rep.clone()))?;
    Ok((out, Compiled::None))
}

pub(crate) fn replicate_eval(input: &Map, path: &MapPath, copies: usize) -> Result<Map> {
    update_map_at(input, path.segments(), &mut |m| {
        let shared = Value::map(m.clone());
        let mut out = Map::with_capacity(copies);
        for i in 0..copies {
            out.insert(Key::declared(i as i64), shared.clone())?;
        }
        Ok(out)
    })
}
