//! Sub-database reduction: semi-join passes along a join tree that leave
//! each relation with exactly the entries taking part in the full join.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::expr::{COperand, CPredicate, KeyPath, Predicate, Row};
use super::typing::collection_at;
use super::{scope, Compiled, Operand, Registry};
use crate::error::{Error, Result};
use crate::model::{Map, MapPath, MapType, Scalar, ScalarKind, Symbol, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubDbMode {
    Inner,
    /// Relations listed as outer keep their non-participating entries.
    Outer,
}

/// `left.left_attr == right.right_attr`; attributes may be `$key`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquiEdge {
    pub left: Symbol,
    pub left_attr: KeyPath,
    pub right: Symbol,
    pub right_attr: KeyPath,
}

impl EquiEdge {
    pub fn new(left: &str, left_attr: &str, right: &str, right_attr: &str) -> EquiEdge {
        EquiEdge {
            left: Symbol::new(left),
            left_attr: KeyPath::parse(left_attr),
            right: Symbol::new(right),
            right_attr: KeyPath::parse(right_attr),
        }
    }
}

#[derive(Debug)]
struct RelPlan {
    name: Symbol,
    filter: Option<CPredicate>,
    /// (class, operand) for every attribute of this relation in the join.
    occurrences: Vec<(usize, COperand)>,
}

#[derive(Debug)]
struct TreeEdge {
    child: usize,
    parent: usize,
    shared: Vec<usize>,
}

#[derive(Debug)]
pub(crate) struct YbrPlan {
    rels: Vec<RelPlan>,
    /// Ears in removal order; bottom-up runs forwards, top-down backwards.
    tree: Vec<TreeEdge>,
    keep_all: Vec<bool>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let p = self.0[x];
        if p == x {
            return x;
        }
        let r = self.find(p);
        self.0[x] = r;
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra] = rb;
        }
    }
}

/// GYO reduction: repeatedly drop vertices private to one edge and edges
/// contained in another. Returns the ears with their witnesses, or `None`
/// when the hypergraph is cyclic.
fn gyo(edges: &[HashSet<usize>]) -> Option<Vec<(usize, usize)>> {
    let mut cur: Vec<HashSet<usize>> = edges.to_vec();
    let mut alive: Vec<bool> = vec![true; edges.len()];
    let mut order = Vec::new();
    loop {
        let mut changed = false;
        let mut count: HashMap<usize, usize> = HashMap::new();
        for (i, e) in cur.iter().enumerate() {
            if alive[i] {
                for v in e {
                    *count.entry(*v).or_default() += 1;
                }
            }
        }
        for (i, e) in cur.iter_mut().enumerate() {
            if alive[i] {
                let before = e.len();
                e.retain(|v| count[v] > 1);
                changed |= e.len() != before;
            }
        }
        let live: Vec<usize> = (0..cur.len()).filter(|i| alive[*i]).collect();
        if live.len() <= 1 {
            return Some(order);
        }
        'ears: for &i in &live {
            for &j in &live {
                if i != j && cur[i].is_subset(&cur[j]) {
                    alive[i] = false;
                    order.push((i, j));
                    changed = true;
                    break 'ears;
                }
            }
        }
        if !changed {
            return None;
        }
    }
}

fn link_edges(t: &MapType, names: &[Symbol]) -> Vec<EquiEdge> {
    let mut out = Vec::new();
    for n in names {
        let rel = t.entry(*n).and_then(|e| e.domain.as_map_type()).expect("relation");
        let Some(elem) = rel.element_type() else { continue };
        for e in &elem.entries {
            if let Some(target) = e.domain.link_target() {
                if let [s] = target.segments() {
                    if names.contains(s) {
                        out.push(EquiEdge {
                            left: *n,
                            left_attr: KeyPath(vec![e.key]),
                            right: *s,
                            right_attr: KeyPath::parse(super::KEY_ATTR),
                        });
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn plan(
    t: &MapType,
    _root: &MapType,
    reg: &Registry,
    mode: SubDbMode,
    filters: &[(Symbol, Predicate)],
    outer: &[Symbol],
    join: Option<&[EquiEdge]>,
) -> Result<(MapType, Compiled)> {
    if t.entries.iter().any(|e| e.domain.as_map_type().is_none()) || t.value_domain.is_some() {
        return Err(Error::InvalidView("sub-database reduction applies to databases".into()));
    }
    let names: Vec<Symbol> = t.entries.iter().map(|e| e.key).collect();
    let idx = |s: Symbol| {
        names
            .iter()
            .position(|n| *n == s)
            .ok_or_else(|| Error::UnknownKey(format!("relation {s}")))
    };
    let derived;
    let edges: &[EquiEdge] = match join {
        Some(j) => j,
        None => {
            derived = link_edges(t, &names);
            &derived
        }
    };
    let colls: Vec<_> = names
        .iter()
        .map(|n| collection_at(t, &MapPath::from(*n)))
        .collect::<Result<_>>()?;

    // Occurrences are (relation, attribute path) pairs; equi-edges merge
    // them into classes.
    let mut occ: Vec<(usize, KeyPath)> = Vec::new();
    let occ_of = |r: usize, p: &KeyPath, occ: &mut Vec<(usize, KeyPath)>| {
        occ.iter().position(|(x, q)| *x == r && q == p).unwrap_or_else(|| {
            occ.push((r, p.clone()));
            occ.len() - 1
        })
    };
    let mut pairs = Vec::new();
    let mut kinds: HashMap<usize, ScalarKind> = HashMap::new();
    for e in edges {
        let (l, r) = (idx(e.left)?, idx(e.right)?);
        let a = occ_of(l, &e.left_attr, &mut occ);
        let b = occ_of(r, &e.right_attr, &mut occ);
        pairs.push((a, b));
    }
    let mut compiled_occ = Vec::with_capacity(occ.len());
    for (r, p) in &occ {
        let (c, e) = colls[*r];
        let s = scope(c, e, t, reg);
        // Link targets are matched through their keys even when those keys
        // are engine-managed; users cannot name such keys themselves.
        let (op, kind) = if p.is_key() && join.is_none() {
            (COperand::Key, super::typing::key_kind(c))
        } else {
            let (op, ty) = s.operand(&Operand::Attr(p.clone()))?;
            (op, ty.kind)
        };
        compiled_occ.push((op, kind));
    }
    let mut uf = UnionFind((0..occ.len()).collect());
    for (a, b) in &pairs {
        if compiled_occ[*a].1 != compiled_occ[*b].1 {
            return Err(Error::TypeMismatch(format!(
                "cannot equate {} with {}",
                compiled_occ[*a].1, compiled_occ[*b].1
            )));
        }
        uf.union(*a, *b);
    }
    let mut class_ids: HashMap<usize, usize> = HashMap::new();
    let mut rels: Vec<RelPlan> = names
        .iter()
        .map(|n| RelPlan {
            name: *n,
            filter: None,
            occurrences: Vec::new(),
        })
        .collect();
    for (o, (r, _)) in occ.iter().enumerate() {
        let root = uf.find(o);
        let next = class_ids.len();
        let c = *class_ids.entry(root).or_insert(next);
        kinds.insert(c, compiled_occ[o].1);
        rels[*r].occurrences.push((c, compiled_occ[o].0.clone()));
    }
    for (rel, p) in filters {
        let r = idx(*rel)?;
        let (c, e) = colls[r];
        let cp = scope(c, e, t, reg).predicate(p)?;
        rels[r].filter = Some(match rels[r].filter.take() {
            Some(prev) => CPredicate::And(vec![prev, cp]),
            None => cp,
        });
    }
    let hyper: Vec<HashSet<usize>> = rels.iter().map(|r| r.occurrences.iter().map(|(c, _)| *c).collect()).collect();
    let ears = gyo(&hyper).ok_or_else(|| Error::CyclicSchemaUnsupported("the join graph has a cycle".into()))?;
    let tree = ears
        .into_iter()
        .map(|(child, parent)| TreeEdge {
            child,
            parent,
            shared: hyper[child].intersection(&hyper[parent]).copied().collect(),
        })
        .collect();
    let mut keep_all = vec![false; names.len()];
    if mode == SubDbMode::Outer {
        for o in outer {
            keep_all[idx(*o)?] = true;
        }
    } else if !outer.is_empty() {
        return Err(Error::InvalidView("outer relations need the outer mode".into()));
    }
    Ok((
        t.clone(),
        Compiled::SubDb(Arc::new(YbrPlan { rels, tree, keep_all })),
    ))
}

struct RelState<'a> {
    map: &'a Map,
    alive: Vec<bool>,
    /// Per row: class -> value.
    values: Vec<HashMap<usize, Scalar>>,
}

impl RelState<'_> {
    fn signature(&self, r: usize, classes: &[usize]) -> Vec<&Scalar> {
        classes.iter().map(|c| &self.values[r][c]).collect()
    }
}

fn semi_join(target: &mut RelState<'_>, by: &RelState<'_>, shared: &[usize]) {
    let set: HashSet<Vec<&Scalar>> = (0..by.map.len())
        .filter(|r| by.alive[*r])
        .map(|r| by.signature(r, shared))
        .collect();
    for r in 0..target.map.len() {
        if target.alive[r] && !set.contains(&target.signature(r, shared)) {
            target.alive[r] = false;
        }
    }
}

impl YbrPlan {
    pub(crate) fn eval(&self, input: &Map) -> Result<Map> {
        let mut states = Vec::with_capacity(self.rels.len());
        for rp in &self.rels {
            let m = input
                .attr(rp.name)
                .and_then(Value::as_map)
                .ok_or_else(|| Error::UnknownKey(format!("relation {}", rp.name)))?;
            let mut alive = Vec::with_capacity(m.len());
            let mut values = Vec::with_capacity(m.len());
            'rows: for (k, v) in m.iter() {
                let row = Row {
                    key: &k.value,
                    value: v,
                    root: input,
                };
                let mut vals: HashMap<usize, Scalar> = HashMap::new();
                let mut ok = match &rp.filter {
                    Some(f) => f.holds(&row)?,
                    None => true,
                };
                for (c, op) in &rp.occurrences {
                    match op.eval(&row)? {
                        Some(s) => {
                            if let Some(prev) = vals.get(c) {
                                ok &= *prev == s;
                            } else {
                                vals.insert(*c, s);
                            }
                        }
                        None => {
                            alive.push(false);
                            values.push(vals);
                            continue 'rows;
                        }
                    }
                }
                alive.push(ok);
                values.push(vals);
            }
            states.push(RelState { map: m, alive, values });
        }
        let pass = |states: &mut Vec<RelState<'_>>, into: usize, from: usize, shared: &[usize]| {
            let (a, b) = if into < from {
                let (l, r) = states.split_at_mut(from);
                (&mut l[into], &r[0])
            } else {
                let (l, r) = states.split_at_mut(into);
                (&mut r[0], &l[from])
            };
            semi_join(a, b, shared);
        };
        for e in &self.tree {
            pass(&mut states, e.parent, e.child, &e.shared);
        }
        for e in self.tree.iter().rev() {
            pass(&mut states, e.child, e.parent, &e.shared);
        }
        let mut out = input.clone();
        for (i, (rp, st)) in self.rels.iter().zip(&states).enumerate() {
            if self.keep_all[i] || st.alive.iter().all(|a| *a) {
                continue;
            }
            let mut reduced = Map::with_capacity(st.map.len());
            for (r, (k, v)) in st.map.iter().enumerate() {
                if st.alive[r] {
                    reduced.insert(k.clone(), v.clone())?;
                }
            }
            out.set(rp.name.into(), Value::map(reduced));
        }
        Ok(out)
    }
}

