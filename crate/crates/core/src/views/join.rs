//! n-ary joins producing concatenated maps with input-name prefixes.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::expr::{COperand, CPredicate, KeyPath, Predicate, Row, Scope};
use super::typing::{collection_at, key_kind, map_at};
use super::{scope, CmpOp, Compiled, Operand, Registry, KEY_ATTR};
use crate::error::{Error, Result};
use crate::model::{Domain, EntryType, Key, KeyPolicy, Map, MapPath, MapType, Scalar, ScalarKind, Symbol, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinKind {
    Inner,
    Semi,
    Outer,
    Cross,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JoinInput {
    pub path: MapPath,
    /// Prefix for this input's keys in the output; defaults to the last
    /// path segment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alias: Option<Symbol>,
}

impl JoinInput {
    pub fn new(path: impl Into<MapPath>) -> JoinInput {
        JoinInput {
            path: path.into(),
            alias: None,
        }
    }

    pub fn aliased(path: impl Into<MapPath>, alias: &str) -> JoinInput {
        JoinInput {
            path: path.into(),
            alias: Some(Symbol::new(alias)),
        }
    }

    pub fn name(&self) -> Result<Symbol> {
        self.alias
            .or_else(|| self.path.segments().last().copied())
            .ok_or_else(|| Error::InvalidView("a join input at the root needs an alias".into()))
    }
}

/// `from.attr` links to the element of `to` with that key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub from: Symbol,
    pub attr: Symbol,
    pub to: Symbol,
}

impl LinkSpec {
    pub fn new(from: &str, attr: &str, to: &str) -> LinkSpec {
        LinkSpec {
            from: Symbol::new(from),
            attr: Symbol::new(attr),
            to: Symbol::new(to),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinOn {
    Links(Vec<LinkSpec>),
    /// Over the concatenated keys (`alias.attr`, plus `alias.$key`).
    Predicate(Predicate),
    None,
}

#[derive(Clone, Debug)]
struct Edge {
    a: usize,
    ca: COperand,
    b: usize,
    cb: COperand,
}

#[derive(Debug)]
pub(crate) struct JoinPlan {
    kind: JoinKind,
    paths: Vec<MapPath>,
    prefixed: Vec<Vec<(Symbol, Symbol)>>,
    keyed: Vec<Option<Symbol>>,
    edges: Vec<Edge>,
    residual: Option<CPredicate>,
    outer: Vec<usize>,
    preserve: Option<usize>,
}

fn prefixed(alias: Symbol, k: &str) -> Symbol {
    Symbol::new(&format!("{alias}.{k}"))
}

fn conjuncts(p: &Predicate) -> Vec<&Predicate> {
    match p {
        Predicate::And(v) => v.iter().flat_map(conjuncts).collect(),
        Predicate::True => Vec::new(),
        p => vec![p],
    }
}

/// Splits `alias.rest/...` into the input index and the path inside it.
fn split_alias(p: &KeyPath, names: &[Symbol]) -> Option<(usize, KeyPath)> {
    let head = p.0.first()?.as_str();
    let (alias, rest) = head.split_once('.')?;
    let i = names.iter().position(|n| n.as_str() == alias)?;
    let mut segs = vec![Symbol::new(rest)];
    segs.extend_from_slice(&p.0[1..]);
    Some((i, KeyPath(segs)))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn plan(
    t: &MapType,
    _root: &MapType,
    reg: &Registry,
    kind: JoinKind,
    inputs: &[JoinInput],
    on: &JoinOn,
    outer: &[Symbol],
    preserve: Option<Symbol>,
) -> Result<(MapType, Compiled)> {
    if inputs.len() < 2 {
        return Err(Error::InvalidView("a join needs at least two inputs".into()));
    }
    let lr = t;
    let mut names = Vec::with_capacity(inputs.len());
    let mut colls = Vec::with_capacity(inputs.len());
    for inp in inputs {
        let n = inp.name()?;
        if n.as_str().contains('.') || n.as_str().contains('/') {
            return Err(Error::InvalidView(format!("alias {n} may not contain '.' or '/'")));
        }
        if names.contains(&n) {
            return Err(Error::InvalidView(format!(
                "two inputs named {n}: concatenated keys would be ambiguous"
            )));
        }
        names.push(n);
        colls.push(collection_at(t, &inp.path)?);
    }
    let scopes: Vec<Scope<'_>> = colls.iter().map(|(c, e)| scope(c, e, lr, reg)).collect();

    let mut cat = Vec::new();
    let mut scope_entries = Vec::new();
    let mut prefixed_names = Vec::with_capacity(inputs.len());
    let mut keyed = Vec::with_capacity(inputs.len());
    for (i, (c, e)) in colls.iter().enumerate() {
        let mut pn = Vec::new();
        for en in &e.entries {
            let out = prefixed(names[i], en.key.as_str());
            pn.push((en.key, out));
            cat.push((i, EntryType { key: out, ..en.clone() }));
        }
        prefixed_names.push(pn);
        if c.key_policy.is_hidden() {
            keyed.push(None);
        } else {
            let k = prefixed(names[i], KEY_ATTR);
            scope_entries.push(EntryType::new(k.as_str(), Domain::Scalar(key_kind(c))));
            keyed.push(Some(k));
        }
    }

    let index_of = |s: Symbol| {
        names
            .iter()
            .position(|n| *n == s)
            .ok_or_else(|| Error::UnknownKey(format!("join input {s}")))
    };
    let mut edges = Vec::new();
    let mut residual = None;
    match (kind, on) {
        (JoinKind::Cross, JoinOn::None) | (_, JoinOn::None) => {}
        (JoinKind::Cross, _) => return Err(Error::InvalidView("a cross product takes no join condition".into())),
        (_, JoinOn::Links(links)) => {
            for l in links {
                let a = index_of(l.from)?;
                let b = index_of(l.to)?;
                let e = colls[a]
                    .1
                    .entry(l.attr)
                    .ok_or_else(|| Error::UnknownKey(format!("{} in {}", l.attr, l.from)))?;
                let target = e
                    .domain
                    .link_target()
                    .ok_or_else(|| Error::TypeMismatch(format!("{}.{} is not a link", l.from, l.attr)))?;
                if *target != inputs[b].path {
                    return Err(Error::TypeMismatch(format!(
                        "{}.{} links to {target}, not to {}",
                        l.from, l.attr, inputs[b].path
                    )));
                }
                let (ca, _) = scopes[a].operand(&Operand::Attr(KeyPath(vec![l.attr])))?;
                edges.push(Edge {
                    a,
                    ca,
                    b,
                    cb: COperand::Key,
                });
            }
        }
        (_, JoinOn::Predicate(p)) => {
            let mut rest = Vec::new();
            for c in conjuncts(p) {
                if let Predicate::Cmp(Operand::Attr(l), CmpOp::Eq, Operand::Attr(r)) = c {
                    if let (Some((a, pa)), Some((b, pb))) = (split_alias(l, &names), split_alias(r, &names)) {
                        if a != b {
                            let (ca, ta) = scopes[a].operand(&Operand::Attr(pa))?;
                            let (cb, tb) = scopes[b].operand(&Operand::Attr(pb))?;
                            if ta.kind != tb.kind {
                                return Err(Error::TypeMismatch(format!("cannot compare {} with {}", ta.kind, tb.kind)));
                            }
                            edges.push(Edge { a, ca, b, cb });
                            continue;
                        }
                    }
                }
                rest.push(c.clone());
            }
            // Compile the whole predicate so every part is checked, but only
            // evaluate what the equi-edges do not cover.
            let mut full = MapType::rmt(cat.iter().map(|(_, e)| e.clone()).chain(scope_entries.iter().cloned()));
            full.n = None;
            let pol = KeyPolicy::Declared;
            let s = Scope {
                elem: &full,
                key_kind: Some(ScalarKind::Int),
                key_policy: &pol,
                root: lr,
                registry: reg,
            };
            s.predicate(p)?;
            if !rest.is_empty() {
                residual = Some(s.predicate(&Predicate::And(rest))?);
            }
        }
    }

    let mut outer_idx = Vec::new();
    if kind == JoinKind::Outer {
        if outer.is_empty() {
            return Err(Error::InvalidView("an outer join names at least one outer side".into()));
        }
        for o in outer {
            outer_idx.push(index_of(*o).map_err(|_| Error::InvalidView(format!("outer side {o} is not an input")))?);
        }
    } else if !outer.is_empty() {
        return Err(Error::InvalidView("outer sides are only meaningful for outer joins".into()));
    }
    let preserve_idx = match (kind, preserve) {
        (JoinKind::Semi, Some(p)) => Some(index_of(p)?),
        (JoinKind::Semi, None) => return Err(Error::InvalidView("a semi join preserves exactly one input".into())),
        (_, Some(_)) => return Err(Error::InvalidView("only semi joins preserve an input".into())),
        _ => None,
    };

    let out_t = match preserve_idx {
        Some(p) => colls[p].0.clone(),
        None => {
            let entries: Vec<EntryType> = cat
                .into_iter()
                .map(|(i, mut e)| {
                    e.optional |= outer_idx.iter().any(|o| *o != i);
                    e
                })
                .collect();
            let elem = super::typing::tuple_type(entries);
            MapType::rhomt(Arc::new(elem), ScalarKind::Int, KeyPolicy::Declared)
        }
    };
    let plan = JoinPlan {
        kind,
        paths: inputs.iter().map(|i| i.path.clone()).collect(),
        prefixed: prefixed_names,
        keyed,
        edges,
        residual,
        outer: outer_idx,
        preserve: preserve_idx,
    };
    Ok((out_t, Compiled::Join(Arc::new(plan))))
}

fn operand_values(m: &Map, c: &COperand, root: &Map) -> Result<Vec<Option<Scalar>>> {
    m.iter()
        .map(|(k, v)| {
            c.eval(&Row {
                key: &k.value,
                value: v,
                root,
            })
        })
        .collect()
}

impl JoinPlan {
    fn concat(&self, maps: &[&Map], combo: &[usize], sides: &[usize], with_keys: bool) -> Map {
        let mut out = Map::new();
        for &i in sides {
            let (k, v) = maps[i].get_index(combo[i]).expect("row index in range");
            let Some(inner) = v.deref_map() else { continue };
            for (src, dst) in &self.prefixed[i] {
                if let Some(x) = inner.attr(*src) {
                    out.set(Key::from(*dst), x.clone());
                }
            }
            if with_keys {
                if let Some(kn) = self.keyed[i] {
                    out.set(Key::from(kn), Value::Scalar(k.value.clone()));
                }
            }
        }
        out
    }

    pub(crate) fn eval(&self, input: &Map) -> Result<Map> {
        let root = input;
        let maps: Vec<&Map> = self.paths.iter().map(|p| map_at(input, p)).collect::<Result<_>>()?;
        let n = maps.len();
        let vals: Vec<(Vec<Option<Scalar>>, Vec<Option<Scalar>>)> = self
            .edges
            .iter()
            .map(|e| Ok((operand_values(maps[e.a], &e.ca, root)?, operand_values(maps[e.b], &e.cb, root)?)))
            .collect::<Result<_>>()?;

        let mut partial: Vec<Vec<usize>> = (0..maps[0].len()).map(|r| vec![r]).collect();
        for i in 1..n {
            // Edges become usable once both of their sides are joined.
            let mut probes: Vec<(usize, usize, bool)> = Vec::new();
            for (ei, e) in self.edges.iter().enumerate() {
                if e.a.max(e.b) == i {
                    let (other, i_is_a) = if e.a == i { (e.b, true) } else { (e.a, false) };
                    probes.push((ei, other, i_is_a));
                }
            }
            let mut next = Vec::new();
            if probes.is_empty() {
                for p in &partial {
                    for r in 0..maps[i].len() {
                        let mut c = p.clone();
                        c.push(r);
                        next.push(c);
                    }
                }
            } else {
                let side_vals = |ei: usize, i_is_a: bool| if i_is_a { &vals[ei].0 } else { &vals[ei].1 };
                let other_vals = |ei: usize, i_is_a: bool| if i_is_a { &vals[ei].1 } else { &vals[ei].0 };
                let direct = probes.len() == 1 && {
                    let e = &self.edges[probes[0].0];
                    matches!(if probes[0].2 { &e.ca } else { &e.cb }, COperand::Key)
                };
                let mut index: HashMap<Vec<&Scalar>, Vec<usize>> = HashMap::new();
                if !direct {
                    'rows: for r in 0..maps[i].len() {
                        let mut key = Vec::with_capacity(probes.len());
                        for &(ei, _, ia) in &probes {
                            match &side_vals(ei, ia)[r] {
                                Some(s) => key.push(s),
                                None => continue 'rows,
                            }
                        }
                        index.entry(key).or_default().push(r);
                    }
                }
                'partial: for p in &partial {
                    let mut key = Vec::with_capacity(probes.len());
                    for &(ei, other, ia) in &probes {
                        match &other_vals(ei, ia)[p[other]] {
                            Some(s) => key.push(s),
                            None => continue 'partial,
                        }
                    }
                    if direct {
                        if let Some(r) = maps[i].position(key[0]) {
                            let mut c = p.clone();
                            c.push(r);
                            next.push(c);
                        }
                    } else if let Some(rs) = index.get(&key) {
                        for &r in rs {
                            let mut c = p.clone();
                            c.push(r);
                            next.push(c);
                        }
                    }
                }
            }
            partial = next;
        }

        let all: Vec<usize> = (0..n).collect();
        if let Some(res) = &self.residual {
            let mut kept = Vec::with_capacity(partial.len());
            for c in partial {
                let row = Value::map(self.concat(&maps, &c, &all, true));
                let k = Scalar::Int(0);
                if res.holds(&Row {
                    key: &k,
                    value: &row,
                    root,
                })? {
                    kept.push(c);
                }
            }
            partial = kept;
        }

        if let Some(p) = self.preserve {
            let mut hit = vec![false; maps[p].len()];
            for c in &partial {
                hit[c[p]] = true;
            }
            let mut out = Map::with_capacity(maps[p].len());
            for (r, (k, v)) in maps[p].iter().enumerate() {
                if hit[r] {
                    out.insert(k.clone(), v.clone())?;
                }
            }
            return Ok(out);
        }

        let mut out = Map::with_capacity(partial.len());
        let mut next_key = 0i64;
        let mut push = |out: &mut Map, m: Map| -> Result<()> {
            out.insert(Key::declared(next_key), Value::map(m))?;
            next_key += 1;
            Ok(())
        };
        for c in &partial {
            push(&mut out, self.concat(&maps, c, &all, false))?;
        }
        if self.kind == JoinKind::Outer {
            for &s in &self.outer {
                let mut hit = vec![false; maps[s].len()];
                for c in &partial {
                    hit[c[s]] = true;
                }
                let mut combo = vec![0; n];
                for (r, h) in hit.iter().enumerate() {
                    if !h {
                        combo[s] = r;
                        push(&mut out, self.concat(&maps, &combo, &[s], false))?;
                    }
                }
            }
        }
        Ok(out)
    }
}
