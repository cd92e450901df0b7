//! Factorizing a wide relation into linked entities, and flattening a
//! linked database back into one wide relation.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::typing::{collection_at, fix_n, map_at, scalar_kind_of, tuple_type};
use super::Compiled;
use crate::error::{Error, Result};
use crate::model::{
    project_key, Domain, EntryType, Key, KeyPolicy, Map, MapPath, MapType, Projection, Ref, Scalar, ScalarKind,
    Symbol, Value,
};

/// An entity split off a wide relation. Its key attributes (output names)
/// must functionally determine the other attributes in the instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntitySpec {
    pub name: Symbol,
    pub key: Vec<Symbol>,
    /// (wide attribute, entity attribute)
    pub attrs: Vec<(Symbol, Symbol)>,
    /// The fact attribute linking to this entity.
    pub link: Symbol,
}

impl EntitySpec {
    /// Attributes keep their wide names.
    pub fn new(name: &str, key: &[&str], attrs: &[&str], link: &str) -> EntitySpec {
        EntitySpec {
            name: Symbol::new(name),
            key: key.iter().map(|k| Symbol::new(k)).collect(),
            attrs: attrs.iter().map(|a| (Symbol::new(a), Symbol::new(a))).collect(),
            link: Symbol::new(link),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizeSpec {
    pub fact: Symbol,
    /// (wide attribute, fact attribute)
    pub fact_attrs: Vec<(Symbol, Symbol)>,
    pub entities: Vec<EntitySpec>,
}

impl FactorizeSpec {
    pub fn new(fact: &str, fact_attrs: &[&str], entities: Vec<EntitySpec>) -> FactorizeSpec {
        FactorizeSpec {
            fact: Symbol::new(fact),
            fact_attrs: fact_attrs.iter().map(|a| (Symbol::new(a), Symbol::new(a))).collect(),
            entities,
        }
    }
}

#[derive(Debug)]
pub(crate) struct FactorPlan {
    path: MapPath,
    spec: FactorizeSpec,
    projections: Vec<Projection>,
}

fn projection(key: &[Symbol]) -> Projection {
    if key.len() == 1 {
        Projection::Attr(key[0])
    } else {
        Projection::Tuple(key.to_vec())
    }
}

pub(crate) fn factorize_plan(t: &MapType, path: &MapPath, spec: &FactorizeSpec) -> Result<(MapType, Compiled)> {
    let (coll, elem) = collection_at(t, path)?;
    let wide = |s: Symbol| elem.entry(s).ok_or_else(|| Error::UnknownKey(format!("{s} in {path}")));
    let mut names: Vec<Symbol> = Vec::new();
    let mut rels: Vec<(Symbol, Arc<MapType>)> = Vec::new();
    let mut projections = Vec::new();
    let mut fact_entries = Vec::new();
    for (src, dst) in &spec.fact_attrs {
        fact_entries.push(EntryType {
            key: *dst,
            ..wide(*src)?.clone()
        });
    }
    for ent in &spec.entities {
        if names.contains(&ent.name) || ent.name == spec.fact {
            return Err(Error::KeyConflict(format!("relation {} named twice", ent.name)));
        }
        names.push(ent.name);
        let mut entries = Vec::new();
        for (src, dst) in &ent.attrs {
            if entries.iter().any(|e: &EntryType| e.key == *dst) {
                return Err(Error::KeyConflict(format!("{} assigned twice in {}", dst, ent.name)));
            }
            entries.push(EntryType {
                key: *dst,
                ..wide(*src)?.clone()
            });
        }
        if ent.key.is_empty() {
            return Err(Error::InvalidView(format!("entity {} needs a key", ent.name)));
        }
        for k in &ent.key {
            let e = entries
                .iter()
                .find(|e| e.key == *k)
                .ok_or_else(|| Error::InvalidView(format!("key {k} is not an attribute of {}", ent.name)))?;
            if e.optional {
                return Err(Error::InvalidView(format!("key {k} of {} is optional", ent.name)));
            }
        }
        let kk = if ent.key.len() == 1 {
            let e = entries.iter().find(|e| e.key == ent.key[0]).expect("checked");
            scalar_kind_of(&e.domain, t)?
        } else {
            ScalarKind::Text
        };
        let p = projection(&ent.key);
        rels.push((
            ent.name,
            Arc::new(MapType::rhomt(Arc::new(tuple_type(entries)), kk, KeyPolicy::Computed(p.clone()))),
        ));
        projections.push(p);
        if fact_entries.iter().any(|e: &EntryType| e.key == ent.link) {
            return Err(Error::KeyConflict(format!("{} assigned twice in {}", ent.link, spec.fact)));
        }
        fact_entries.push(EntryType::new(ent.link.as_str(), Domain::enumeration(MapPath::from(ent.name))));
    }
    let mut fact_elem = MapType::rmt(fact_entries);
    fix_n(&mut fact_elem);
    let renamed = |a: Symbol| spec.fact_attrs.iter().find(|(s, _)| *s == a).map(|(_, d)| *d);
    let policy = match &coll.key_policy {
        KeyPolicy::Computed(p) => {
            let mapped: Option<Vec<Symbol>> = p.attrs().iter().map(|a| renamed(*a)).collect();
            match mapped {
                Some(v) => KeyPolicy::Computed(match p {
                    Projection::Attr(_) => Projection::Attr(v[0]),
                    Projection::Tuple(_) => Projection::Tuple(v),
                }),
                None => KeyPolicy::Declared,
            }
        }
        p => p.clone(),
    };
    let mut fact = coll.clone();
    fact.value_domain = Some(Domain::map(fact_elem));
    fact.key_policy = policy;
    rels.push((spec.fact, Arc::new(fact)));
    let plan = FactorPlan {
        path: path.clone(),
        spec: spec.clone(),
        projections,
    };
    Ok((MapType::record(rels), Compiled::Factorize(Arc::new(plan))))
}

fn pick(m: &Map, pairs: &[(Symbol, Symbol)]) -> Map {
    let mut out = Map::with_capacity(pairs.len());
    for (src, dst) in pairs {
        if let Some(v) = m.attr(*src) {
            out.set(Key::from(*dst), v.clone());
        }
    }
    out
}

impl FactorPlan {
    pub(crate) fn eval(&self, input: &Map) -> Result<Map> {
        let wide = map_at(input, &self.path)?;
        let spec = &self.spec;
        let mut entities: Vec<Map> = vec![Map::new(); spec.entities.len()];
        let mut first_seen: Vec<HashMap<Scalar, Scalar>> = vec![HashMap::new(); spec.entities.len()];
        let mut fact = Map::with_capacity(wide.len());
        for (wk, wv) in wide.iter() {
            let row = wv
                .deref_map()
                .ok_or_else(|| Error::InvalidView(format!("element {} is not a map", wk.value)))?;
            let mut f = pick(row, &spec.fact_attrs);
            for (i, ent) in spec.entities.iter().enumerate() {
                let ev = Value::map(pick(row, &ent.attrs));
                let ek = project_key(&self.projections[i], &ev)?;
                let stored = match entities[i].get(&ek.value) {
                    Some(existing) => {
                        if *existing != ev {
                            return Err(Error::FactorizationConflict {
                                key: format!("{}[{}]", ent.name, ek.value),
                                witnesses: vec![first_seen[i][&ek.value].render(), wk.value.render()],
                            });
                        }
                        existing.clone()
                    }
                    None => {
                        first_seen[i].insert(ek.value.clone(), wk.value.clone());
                        entities[i].insert(ek.clone(), ev.clone())?;
                        ev
                    }
                };
                f.set(
                    Key::from(ent.link),
                    Value::Ref(Ref::new(MapPath::from(ent.name), ek.value, stored)),
                );
            }
            fact.insert(wk.clone(), Value::map(f))?;
        }
        let mut out = Map::with_capacity(entities.len() + 1);
        for (ent, m) in spec.entities.iter().zip(entities) {
            out.insert(Key::from(ent.name), Value::map(m))?;
        }
        out.insert(Key::from(spec.fact), Value::map(fact))?;
        Ok(out)
    }
}

#[derive(Debug)]
enum DStep {
    Keep(Symbol),
    Follow {
        attr: Symbol,
        target: Symbol,
        steps: Vec<DStep>,
    },
}

#[derive(Debug)]
pub(crate) struct DenormPlan {
    root: Symbol,
    steps: Vec<DStep>,
}

fn expand(
    db: &MapType,
    elem: &MapType,
    optional: bool,
    out: &mut Vec<EntryType>,
    visiting: &mut Vec<Symbol>,
) -> Result<Vec<DStep>> {
    let mut steps = Vec::new();
    for e in &elem.entries {
        let target = e.domain.link_target().and_then(|p| match p.segments() {
            [s] if db.entry(*s).is_some() => Some(*s),
            _ => None,
        });
        match target {
            Some(tn) => {
                if visiting.contains(&tn) {
                    return Err(Error::CyclicSchemaUnsupported(format!("links cycle through {tn}")));
                }
                let (_, telem) = collection_at(db, &MapPath::from(tn))?;
                visiting.push(tn);
                let sub = expand(db, telem, optional || e.optional, out, visiting)?;
                visiting.pop();
                steps.push(DStep::Follow {
                    attr: e.key,
                    target: tn,
                    steps: sub,
                });
            }
            None => {
                if out.iter().any(|x| x.key == e.key) {
                    return Err(Error::KeyConflict(format!(
                        "{} appears twice in the flattened relation",
                        e.key
                    )));
                }
                out.push(EntryType {
                    optional: e.optional || optional,
                    ..e.clone()
                });
                steps.push(DStep::Keep(e.key));
            }
        }
    }
    Ok(steps)
}

pub(crate) fn denormalize_plan(t: &MapType, root: Option<Symbol>) -> Result<(MapType, Compiled)> {
    if t.entries.is_empty() || t.entries.iter().any(|e| e.domain.as_map_type().is_none()) {
        return Err(Error::InvalidView("denormalize flattens a database".into()));
    }
    let root = match root {
        Some(r) => {
            t.entry(r).ok_or_else(|| Error::UnknownKey(format!("relation {r}")))?;
            r
        }
        None => {
            let linked: Vec<Symbol> = t
                .entries
                .iter()
                .flat_map(|e| crate::schema::link_targets(e.domain.as_map_type().expect("checked")))
                .filter_map(|p| p.segments().first().copied())
                .collect();
            let roots: Vec<Symbol> = t.entries.iter().map(|e| e.key).filter(|k| !linked.contains(k)).collect();
            match roots.as_slice() {
                [r] => *r,
                _ => {
                    return Err(Error::InvalidView(
                        "denormalize needs a root: no single relation is unreferenced".into(),
                    ))
                }
            }
        }
    };
    let (coll, elem) = collection_at(t, &MapPath::from(root))?;
    let mut entries = Vec::new();
    let steps = expand(t, elem, false, &mut entries, &mut vec![root])?;
    let mut out_elem = MapType::rmt(entries);
    fix_n(&mut out_elem);
    let mut out = coll.clone();
    if let KeyPolicy::Computed(p) = &coll.key_policy {
        if !p.attrs().iter().all(|a| steps.iter().any(|s| matches!(s, DStep::Keep(k) if k == a))) {
            out.key_policy = KeyPolicy::Declared;
        }
    }
    out.value_domain = Some(Domain::map(out_elem));
    Ok((out, Compiled::Denormalize(Arc::new(DenormPlan { root, steps }))))
}

fn flatten(row: &Map, steps: &[DStep], db: &Map, out: &mut Map) -> Result<()> {
    for s in steps {
        match s {
            DStep::Keep(a) => {
                if let Some(v) = row.attr(*a) {
                    out.set(Key::from(*a), v.clone());
                }
            }
            DStep::Follow { attr, target, steps } => {
                let Some(v) = row.attr(*attr) else { continue };
                let lookup = |k: &Scalar| {
                    db.attr(*target)
                        .and_then(Value::as_map)
                        .and_then(|m| m.get(k))
                        .and_then(Value::deref_map)
                };
                let next = match v {
                    Value::Ref(r) => r.target().deref_map().or_else(|| lookup(r.key())),
                    Value::Scalar(k) => lookup(k),
                    Value::Map(m) => Some(m.as_ref()),
                }
                .ok_or_else(|| Error::DanglingReference(format!("{attr} names nothing in {target}")))?;
                flatten(next, steps, db, out)?;
            }
        }
    }
    Ok(())
}

impl DenormPlan {
    pub(crate) fn eval(&self, input: &Map) -> Result<Map> {
        let rel = input
            .attr(self.root)
            .and_then(Value::as_map)
            .ok_or_else(|| Error::UnknownKey(format!("relation {}", self.root)))?;
        let mut out = Map::with_capacity(rel.len());
        for (k, v) in rel.iter() {
            let row = v
                .deref_map()
                .ok_or_else(|| Error::InvalidView(format!("element {} is not a map", k.value)))?;
            let mut flat = Map::new();
            flatten(row, &self.steps, input, &mut flat)?;
            out.insert(k.clone(), Value::map(flat))?;
        }
        Ok(out)
    }
}
