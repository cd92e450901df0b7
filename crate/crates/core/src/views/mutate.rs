//! Element-wise views (project, compute, rename) and the mutation nodes.

use std::collections::HashMap;
use std::sync::Arc;

use super::expr::{COperand, CPredicate, Row, Scope};
use super::typing::{
    bind_links, collection_at, erase_links, fix_n, key_kind, link_root, refs_to_keys, replace_type_at,
    scalar_kind_of, type_at, update_map_at, EACH,
};
use super::{scope, Compiled, InsertRow, RenameScope, KEY_ATTR};
use crate::error::{Error, Result};
use crate::model::{
    project_key, validate, Domain, EntryType, Key, KeyKind, KeyPolicy, Map, MapPath, MapType, Projection, Ref,
    Scalar, Symbol, Value,
};

fn is_all(keys: &[Symbol]) -> bool {
    keys.len() == 1 && keys[0].as_str() == EACH
}

fn key_attr_error(policy: &KeyPolicy) -> Error {
    if policy.is_hidden() {
        Error::HiddenKey(format!("{KEY_ATTR} names an engine-managed identity"))
    } else {
        Error::InvalidView(format!("{KEY_ATTR} is not an attribute; element keys are kept"))
    }
}

fn projection_of(names: &[Symbol]) -> Projection {
    if names.len() == 1 {
        Projection::Attr(names[0])
    } else {
        Projection::Tuple(names.to_vec())
    }
}

/// The policy a collection keeps when its elements lose or rename
/// attributes: computed keys survive only if their inputs do.
fn surviving_policy(p: &KeyPolicy, keep: &dyn Fn(Symbol) -> Option<Symbol>) -> KeyPolicy {
    match p {
        KeyPolicy::Computed(pr) => {
            let mapped: Option<Vec<Symbol>> = pr.attrs().iter().map(|a| keep(*a)).collect();
            match (mapped, pr) {
                (Some(v), Projection::Attr(_)) => KeyPolicy::Computed(Projection::Attr(v[0])),
                (Some(v), Projection::Tuple(_)) => KeyPolicy::Computed(Projection::Tuple(v)),
                (None, _) => KeyPolicy::Declared,
            }
        }
        other => other.clone(),
    }
}

pub(crate) fn project_type(t: &MapType, root: &MapType, path: &MapPath, keys: &[Symbol], distinct: bool) -> Result<MapType> {
    let target = type_at(t, path)?;
    if let (true, Some(elem)) = (target.is_homogeneous(), target.element_type()) {
        let names: Vec<Symbol> = if is_all(keys) {
            elem.entries.iter().map(|e| e.key).collect()
        } else {
            keys.to_vec()
        };
        let mut entries = Vec::with_capacity(names.len());
        for k in &names {
            if k.as_str() == KEY_ATTR {
                return Err(key_attr_error(&target.key_policy));
            }
            let e = elem.entry(*k).ok_or_else(|| Error::UnknownKey(format!("{k} in {path}")))?;
            if entries.iter().any(|x: &EntryType| x.key == *k) {
                return Err(Error::InvalidView(format!("{k} projected twice")));
            }
            entries.push(e.clone());
        }
        let mut new_elem = MapType {
            entries,
            constraints: elem
                .constraints
                .iter()
                .filter(|c| c.key.map_or(true, |k| names.contains(&k)))
                .cloned()
                .collect(),
            ..(**elem).clone()
        };
        fix_n(&mut new_elem);
        let mut coll = target.clone();
        if distinct {
            if let Some(e) = new_elem.entries.iter().find(|e| e.optional) {
                return Err(Error::InvalidView(format!(
                    "distinct projection over optional {}: absent values cannot form keys",
                    e.key
                )));
            }
            coll.key_domain = Some(if names.len() == 1 {
                scalar_kind_of(&new_elem.entries[0].domain, root)?
            } else {
                for e in &new_elem.entries {
                    scalar_kind_of(&e.domain, root)?;
                }
                crate::model::ScalarKind::Text
            });
            coll.key_policy = KeyPolicy::Computed(projection_of(&names));
        } else {
            coll.key_policy = surviving_policy(&target.key_policy, &|a| names.contains(&a).then_some(a));
        }
        coll.value_domain = Some(Domain::map(new_elem));
        return replace_type_at(t, path.segments(), &mut |_| Ok(coll.clone()));
    }
    if distinct {
        return Err(Error::InvalidView(format!("distinct needs a collection at {path}")));
    }
    let names: Vec<Symbol> = if is_all(keys) {
        target.entries.iter().map(|e| e.key).collect()
    } else {
        keys.to_vec()
    };
    let mut entries = Vec::with_capacity(names.len());
    for k in &names {
        let e = target.entry(*k).ok_or_else(|| Error::UnknownKey(format!("{k} in {path}")))?;
        entries.push(e.clone());
    }
    let mut out = MapType {
        entries,
        ..target.clone()
    };
    fix_n(&mut out);
    replace_type_at(t, path.segments(), &mut |_| Ok(out.clone()))
}

fn select(m: &Map, names: &[Symbol]) -> Map {
    let mut out = Map::with_capacity(names.len());
    for n in names {
        if let Some(v) = m.attr(*n) {
            out.set(Key::from(*n), v.clone());
        }
    }
    out
}

pub(crate) fn project_eval(input: &Map, t: &MapType, path: &MapPath, keys: &[Symbol], distinct: bool) -> Result<Map> {
    let target = type_at(t, path)?;
    let homogeneous = target.is_homogeneous() && target.element_type().is_some();
    update_map_at(input, path.segments(), &mut |m| {
        if !homogeneous {
            if is_all(keys) {
                return Ok(m.clone());
            }
            return Ok(select(m, keys));
        }
        let elem = target.element_type().expect("checked");
        let names: Vec<Symbol> = if is_all(keys) {
            elem.entries.iter().map(|e| e.key).collect()
        } else {
            keys.to_vec()
        };
        let proj = projection_of(&names);
        let mut out = Map::with_capacity(m.len());
        for (k, v) in m.iter() {
            let inner = v.deref_map().ok_or_else(|| Error::InvalidView(format!("element {} is not a map", k.value)))?;
            let nv = Value::map(select(inner, &names));
            if distinct {
                let nk = project_key(&proj, &nv)?;
                if !out.contains_key(&nk.value) {
                    out.insert(nk, nv)?;
                }
            } else {
                out.insert(k.clone(), nv)?;
            }
        }
        Ok(out)
    })
}

pub(crate) fn compute_type(
    t: &MapType,
    root: &MapType,
    reg: &super::Registry,
    path: &MapPath,
    outputs: &[(Symbol, super::Operand)],
) -> Result<(MapType, Compiled)> {
    let (coll, elem) = collection_at(t, path)?;
    let s = scope(coll, elem, root, reg);
    let mut new_elem = (**elem).clone();
    let mut compiled = Vec::with_capacity(outputs.len());
    for (name, o) in outputs {
        if name.as_str() == KEY_ATTR || name.as_str().contains('/') {
            return Err(Error::InvalidView(format!("cannot compute into {name}")));
        }
        if compiled.iter().any(|(n, _)| n == name) {
            return Err(Error::InvalidView(format!("{name} computed twice")));
        }
        let (c, ty) = s.operand(o)?;
        let entry = EntryType {
            key: *name,
            domain: Domain::Scalar(ty.kind),
            optional: ty.optional,
        };
        match new_elem.entries.iter_mut().find(|e| e.key == *name) {
            Some(e) => *e = entry,
            None => new_elem.entries.push(entry),
        }
        new_elem.constraints.retain(|c| c.key != Some(*name));
        compiled.push((*name, c));
    }
    fix_n(&mut new_elem);
    let mut new_coll = coll.clone();
    new_coll.value_domain = Some(Domain::map(new_elem));
    if let KeyPolicy::Computed(p) = &coll.key_policy {
        for a in p.attrs() {
            if let Some(e) = new_coll.element_type().and_then(|t| t.entry(*a)) {
                if e.optional {
                    return Err(Error::InvalidView(format!("computed key input {a} would become optional")));
                }
                new_coll.key_domain = Some(match p {
                    Projection::Attr(_) => scalar_kind_of(&e.domain, root)?,
                    Projection::Tuple(_) => crate::model::ScalarKind::Text,
                });
            }
        }
    }
    let out = replace_type_at(t, path.segments(), &mut |_| Ok(new_coll.clone()))?;
    Ok((out, Compiled::Compute(compiled)))
}

/// Inserts `v` under the key the policy derives, tolerating exact
/// duplicates and rejecting conflicting ones.
fn rekey_into(out: &mut Map, policy: &KeyPolicy, old: &Key, v: Value) -> Result<()> {
    let k = match policy {
        KeyPolicy::Computed(p) => project_key(p, &v)?,
        _ => old.clone(),
    };
    match out.get(&k.value) {
        Some(existing) if *existing == v => Ok(()),
        Some(_) => Err(Error::KeyConflict(format!("two elements map to key {}", k.value))),
        None => out.insert(k, v),
    }
}

fn needs_rekey(policy: &KeyPolicy, touched: &[Symbol]) -> bool {
    matches!(policy, KeyPolicy::Computed(p) if p.attrs().iter().any(|a| touched.contains(a)))
}

pub(crate) fn compute_eval(
    input: &Map,
    root: &Map,
    t: &MapType,
    path: &MapPath,
    outs: &[(Symbol, COperand)],
) -> Result<Map> {
    let (coll, _) = collection_at(t, path)?;
    let touched: Vec<Symbol> = outs.iter().map(|(n, _)| *n).collect();
    let rekey = needs_rekey(&coll.key_policy, &touched);
    let lr = link_root(input, root, path);
    update_map_at(input, path.segments(), &mut |m| {
        let mut out = Map::with_capacity(m.len());
        for (k, v) in m.iter() {
            let row = Row {
                key: &k.value,
                value: v,
                root: lr,
            };
            let mut nm = v.deref_map().cloned().unwrap_or_default();
            for (name, op) in outs {
                match op.eval(&row)? {
                    Some(s) => nm.set(Key::from(*name), Value::Scalar(s)),
                    None => {
                        nm.remove(&Scalar::Symbol(*name));
                    }
                }
            }
            if rekey {
                rekey_into(&mut out, &coll.key_policy, k, Value::map(nm))?;
            } else {
                out.insert(k.clone(), Value::map(nm))?;
            }
        }
        Ok(out)
    })
}

fn check_mapping(existing: &[Symbol], mapping: &[(Symbol, Symbol)], strict: bool) -> Result<()> {
    for (i, (a, b)) in mapping.iter().enumerate() {
        if strict && !existing.contains(a) {
            return Err(Error::UnknownKey(format!("{a}")));
        }
        if mapping[..i].iter().any(|(x, y)| x == a || y == b) {
            return Err(Error::InvalidView(format!("{a} -> {b} repeats a source or target")));
        }
        let vacated = mapping.iter().any(|(x, _)| x == b);
        if existing.contains(b) && !vacated {
            return Err(Error::KeyConflict(format!("renaming {a} to {b} collides with an existing key")));
        }
        if b.as_str() == KEY_ATTR || a.as_str() == KEY_ATTR {
            return Err(Error::InvalidView(format!("{KEY_ATTR} cannot be renamed")));
        }
    }
    Ok(())
}

fn renamed(mapping: &[(Symbol, Symbol)], k: Symbol) -> Symbol {
    mapping.iter().find(|(a, _)| *a == k).map_or(k, |(_, b)| *b)
}

fn rename_entries(t: &MapType, mapping: &[(Symbol, Symbol)]) -> MapType {
    let mut out = t.clone();
    for e in &mut out.entries {
        e.key = renamed(mapping, e.key);
    }
    for c in &mut out.constraints {
        c.key = c.key.map(|k| renamed(mapping, k));
    }
    out
}

fn rebase_targets(t: &MapType, moves: &[(MapPath, MapPath)]) -> Result<MapType> {
    let moved = crate::schema::rewrite_link_domains(t, &|d| {
        let target = d.link_target().expect("link domains only");
        for (from, to) in moves {
            if let Some(nt) = target.rebase(from, to) {
                return Ok(Some(match d {
                    Domain::Enumeration { fk_kind, .. } => Domain::Enumeration {
                        target: nt,
                        fk_kind: *fk_kind,
                    },
                    Domain::ForeignKey { key_kind, .. } => Domain::ForeignKey {
                        target: nt,
                        key_kind: *key_kind,
                    },
                    _ => unreachable!(),
                }));
            }
        }
        Ok(None)
    })?;
    Ok(moved.unwrap_or_else(|| t.clone()))
}

fn moves_for(path: &MapPath, mapping: &[(Symbol, Symbol)]) -> Vec<(MapPath, MapPath)> {
    mapping.iter().map(|(a, b)| (path.child(*a), path.child(*b))).collect()
}

pub(crate) fn rename_type(t: &MapType, path: &MapPath, scope: RenameScope, mapping: &[(Symbol, Symbol)]) -> Result<MapType> {
    match scope {
        RenameScope::Keys => {
            let target = type_at(t, path)?;
            if target.entries.is_empty() {
                if !target.is_homogeneous() {
                    return Err(Error::InvalidView(format!("nothing to rename at {path}")));
                }
                check_mapping(&[], mapping, false)?;
                return Ok(t.clone());
            }
            let existing: Vec<Symbol> = target.entries.iter().map(|e| e.key).collect();
            check_mapping(&existing, mapping, true)?;
            let out = replace_type_at(t, path.segments(), &mut |x| Ok(rename_entries(x, mapping)))?;
            rebase_targets(&out, &moves_for(path, mapping))
        }
        RenameScope::Attributes => {
            let (coll, elem) = collection_at(t, path)?;
            let existing: Vec<Symbol> = elem.entries.iter().map(|e| e.key).collect();
            check_mapping(&existing, mapping, true)?;
            let mut new_coll = coll.clone();
            new_coll.value_domain = Some(Domain::map(rename_entries(elem, mapping)));
            new_coll.key_policy = surviving_policy(&coll.key_policy, &|a| Some(renamed(mapping, a)));
            replace_type_at(t, path.segments(), &mut |_| Ok(new_coll.clone()))
        }
    }
}

fn rename_map_keys(m: &Map, mapping: &[(Symbol, Symbol)], strict: bool) -> Result<Map> {
    let mut out = Map::with_capacity(m.len());
    for (k, v) in m.iter() {
        let nk = match k.value.as_symbol() {
            Some(s) => {
                let r = renamed(mapping, s);
                if r == s {
                    k.clone()
                } else {
                    Key::new(Scalar::Symbol(r), k.kind)
                }
            }
            None => k.clone(),
        };
        out.insert(nk, v.clone())
            .map_err(|_| Error::KeyConflict(format!("rename produces duplicate key {}", k.value)))?;
    }
    if strict {
        for (a, _) in mapping {
            if !m.contains_key(&Scalar::Symbol(*a)) {
                return Err(Error::UnknownKey(format!("{a}")));
            }
        }
    }
    Ok(out)
}

pub(crate) fn rename_eval(
    input: &Map,
    in_t: &MapType,
    out_t: &MapType,
    path: &MapPath,
    scope: RenameScope,
    mapping: &[(Symbol, Symbol)],
) -> Result<Map> {
    if mapping.is_empty() {
        return Ok(input.clone());
    }
    match scope {
        RenameScope::Keys => {
            let target = type_at(in_t, path)?;
            let strict = !target.entries.is_empty();
            let out = update_map_at(input, path.segments(), &mut |m| rename_map_keys(m, mapping, strict))?;
            if !strict {
                return Ok(out);
            }
            let moves = moves_for(path, mapping);
            let mut memo: HashMap<(MapPath, Scalar), Ref> = HashMap::new();
            let v = Value::map(out);
            let rebased = crate::schema::rewrite_links(&v, &Domain::MapType(Arc::new(out_t.clone())), &mut |x, _| {
                let Value::Ref(r) = x else { return Ok(None) };
                for (from, to) in &moves {
                    if let Some(np) = r.path().rebase(from, to) {
                        let nr = memo
                            .entry((np.clone(), r.key().clone()))
                            .or_insert_with(|| Ref::new(np, r.key().clone(), r.target().clone()))
                            .clone();
                        return Ok(Some(Value::Ref(nr)));
                    }
                }
                Ok(None)
            })?;
            let v = rebased.unwrap_or(v);
            Ok(v.as_map().cloned().expect("a map stays a map"))
        }
        RenameScope::Attributes => {
            let (coll, _) = collection_at(in_t, path)?;
            let targets: Vec<Symbol> = mapping.iter().map(|(_, b)| *b).collect();
            let out_coll = type_at(out_t, path)?;
            let rekey = needs_rekey(&out_coll.key_policy, &targets) && coll.key_policy != out_coll.key_policy;
            update_map_at(input, path.segments(), &mut |m| {
                let mut out = Map::with_capacity(m.len());
                let mut layouts: HashMap<*const crate::model::KeyLayout, Arc<crate::model::KeyLayout>> = HashMap::new();
                for (k, v) in m.iter() {
                    let inner = v.deref_map().ok_or_else(|| Error::InvalidView("element is not a map".into()))?;
                    let ptr = Arc::as_ptr(inner.layout());
                    let nm = match layouts.get(&ptr) {
                        Some(l) => Map::with_layout(l.clone(), inner.values().to_vec())?,
                        None => {
                            let nm = rename_map_keys(inner, mapping, false)?;
                            layouts.insert(ptr, nm.layout().clone());
                            nm
                        }
                    };
                    if rekey {
                        rekey_into(&mut out, &out_coll.key_policy, k, Value::map(nm))?;
                    } else {
                        out.insert(k.clone(), Value::map(nm))?;
                    }
                }
                Ok(out)
            })
        }
    }
}

fn nonconforming(r: crate::model::ValidationReport) -> Error {
    Error::NonConforming(r)
}

/// Checks a payload written with plain keys against `t` and turns keys
/// under enumeration domains into links.
fn prepare_payload(v: &Value, t: &MapType, root: &MapType) -> Result<Value> {
    let plain = refs_to_keys(v);
    let m = plain
        .as_map()
        .ok_or_else(|| Error::InvalidView("inserted values must be maps".into()))?;
    let erased = erase_links(t, root)?;
    let report = validate(m, &erased)?;
    if !report.conforms {
        return Err(nonconforming(report));
    }
    bind_links(&plain, &Domain::MapType(Arc::new(t.clone())))
}

pub(crate) fn insert_type(t: &MapType, root: &MapType, path: &MapPath, rows: &[InsertRow]) -> Result<(MapType, Compiled)> {
    let (coll, elem) = collection_at(t, path)?;
    let mut prepared = Vec::with_capacity(rows.len());
    for row in rows {
        let v = prepare_payload(&row.value.0, elem, root)?;
        let key = match &coll.key_policy {
            KeyPolicy::Declared => {
                let k = row
                    .key
                    .as_ref()
                    .ok_or_else(|| Error::InvalidView(format!("inserting into {path} needs a key")))?;
                if k.0.kind() != key_kind(coll) {
                    return Err(Error::TypeMismatch(format!("key {} is not a {}", k.0, key_kind(coll))));
                }
                Some(k.0.clone())
            }
            KeyPolicy::Computed(p) => {
                let k = project_key(p, &refs_to_keys(&v))?.value;
                if let Some(given) = &row.key {
                    if given.0 != k {
                        return Err(Error::KeyConflict(format!("given key {} but the value computes {k}", given.0)));
                    }
                }
                Some(k)
            }
            KeyPolicy::Surrogate => {
                if row.key.is_some() {
                    return Err(Error::HiddenKey(format!("{path} assigns its own identities")));
                }
                None
            }
        };
        prepared.push((key, v));
    }
    Ok((t.clone(), Compiled::Insert(prepared)))
}

/// Allocates engine-managed identities for inserts into surrogate-keyed maps.
pub type Allocator<'a> = dyn FnMut(&MapPath) -> Result<Key> + 'a;

pub(crate) fn insert_eval(
    input: &Map,
    t: &MapType,
    path: &MapPath,
    rows: &[(Option<Scalar>, Value)],
    alloc: &mut Option<&mut Allocator<'_>>,
) -> Result<Map> {
    let (coll, _) = collection_at(t, path)?;
    let kind = match coll.key_policy {
        KeyPolicy::Computed(_) => KeyKind::Computed,
        _ => KeyKind::Symbolic,
    };
    update_map_at(input, path.segments(), &mut |m| {
        let mut out = m.clone();
        for (k, v) in rows {
            let key = match k {
                Some(s) => Key::new(s.clone(), kind),
                None => match alloc {
                    Some(a) => a(path)?,
                    None => return Err(Error::InPlaceOnly),
                },
            };
            out.insert(key, v.clone())?;
        }
        Ok(out)
    })
}

/// One assignment of an update: the attribute, its new value, and the
/// link target when the attribute is a link.
#[derive(Clone, Debug)]
pub(crate) struct SetOut {
    pub name: Symbol,
    pub op: COperand,
    pub link: Option<MapPath>,
}

pub(crate) fn update_type(
    t: &MapType,
    root: &MapType,
    reg: &super::Registry,
    path: &MapPath,
    pred: &super::Predicate,
    set: &[(Symbol, super::Operand)],
) -> Result<(MapType, Compiled)> {
    let (coll, elem) = collection_at(t, path)?;
    let s: Scope<'_> = scope(coll, elem, root, reg);
    let cp = s.predicate(pred)?;
    let mut outs = Vec::with_capacity(set.len());
    for (name, o) in set {
        let e = elem.entry(*name).ok_or_else(|| Error::UnknownKey(format!("{name} in {path}")))?;
        let want = scalar_kind_of(&e.domain, root)?;
        let (c, ty) = s.operand(o)?;
        if ty.kind != want {
            return Err(Error::TypeMismatch(format!("{name} holds {want}, the update yields {}", ty.kind)));
        }
        if ty.optional && !e.optional {
            return Err(Error::TypeMismatch(format!("{name} is mandatory but the update may yield nothing")));
        }
        let link = match &e.domain {
            Domain::Enumeration { target, .. } => Some(target.clone()),
            _ => None,
        };
        outs.push(SetOut {
            name: *name,
            op: c,
            link,
        });
    }
    Ok((t.clone(), Compiled::Update(cp, outs)))
}

pub(crate) fn update_eval(
    input: &Map,
    root: &Map,
    t: &MapType,
    path: &MapPath,
    pred: &CPredicate,
    outs: &[SetOut],
) -> Result<Map> {
    let (coll, _) = collection_at(t, path)?;
    let touched: Vec<Symbol> = outs.iter().map(|o| o.name).collect();
    let rekey = needs_rekey(&coll.key_policy, &touched);
    let lr = link_root(input, root, path);
    update_map_at(input, path.segments(), &mut |m| {
        let mut out = Map::with_capacity(m.len());
        for (k, v) in m.iter() {
            let row = Row {
                key: &k.value,
                value: v,
                root: lr,
            };
            if !pred.holds(&row)? {
                out.insert(k.clone(), v.clone())?;
                continue;
            }
            let mut nm = v.deref_map().cloned().unwrap_or_default();
            for o in outs {
                match o.op.eval(&row)? {
                    Some(s) => {
                        let nv = match &o.link {
                            Some(target) => Value::Ref(Ref::new(target.clone(), s.clone(), Value::Scalar(s))),
                            None => Value::Scalar(s),
                        };
                        nm.set(Key::from(o.name), nv);
                    }
                    None => {
                        nm.remove(&Scalar::Symbol(o.name));
                    }
                }
            }
            if rekey {
                rekey_into(&mut out, &coll.key_policy, k, Value::map(nm))?;
            } else {
                out.insert(k.clone(), Value::map(nm))?;
            }
        }
        Ok(out)
    })
}

pub(crate) fn delete_eval(input: &Map, root: &Map, path: &MapPath, pred: &CPredicate) -> Result<Map> {
    let lr = link_root(input, root, path);
    update_map_at(input, path.segments(), &mut |m| {
        let mut out = m.clone();
        let mut err = None;
        out.retain(|k, v| {
            let row = Row {
                key: &k.value,
                value: v,
                root: lr,
            };
            match pred.holds(&row) {
                Ok(b) => !b,
                Err(e) => {
                    err.get_or_insert(e);
                    true
                }
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    })
}

pub(crate) fn filter_eval(input: &Map, root: &Map, path: &MapPath, pred: &CPredicate) -> Result<Map> {
    delete_eval(input, root, path, &CPredicate::Not(Box::new(pred.clone())))
}

fn require_database(t: &MapType) -> Result<()> {
    if t.entries.iter().all(|e| e.domain.as_map_type().is_some()) && t.value_domain.is_none() {
        Ok(())
    } else {
        Err(Error::InvalidView("relations are inserted into and dropped from databases".into()))
    }
}

pub(crate) fn insert_relation_type(t: &MapType, name: Symbol, rel_type: &Arc<MapType>, data: &Value) -> Result<(MapType, Compiled)> {
    require_database(t)?;
    if t.entry(name).is_some() {
        return Err(Error::KeyConflict(format!("relation {name} already exists")));
    }
    rel_type.check()?;
    let mut out = t.clone();
    out.entries.push(EntryType {
        key: name,
        domain: Domain::MapType(rel_type.clone()),
        optional: false,
    });
    fix_n(&mut out);
    let v = prepare_payload(data, rel_type, &out)?;
    Ok((out, Compiled::Insert(vec![(Some(Scalar::Symbol(name)), v)])))
}

pub(crate) fn drop_relation_type(t: &MapType, name: Symbol) -> Result<(MapType, Compiled)> {
    require_database(t)?;
    if t.entry(name).is_none() {
        return Err(Error::UnknownKey(format!("relation {name}")));
    }
    for e in &t.entries {
        if e.key == name {
            continue;
        }
        let rel = e.domain.as_map_type().expect("database entries are map-typed");
        if crate::schema::link_targets(rel)
            .iter()
            .any(|p| p.segments().first() == Some(&name))
        {
            return Err(Error::InvalidView(format!("{name} is still linked from {}", e.key)));
        }
    }
    let mut out = t.clone();
    out.entries.retain(|e| e.key != name);
    fix_n(&mut out);
    Ok((out, Compiled::None))
}

pub(crate) fn drop_relation_eval(input: &Map, name: Symbol) -> Map {
    let mut out = input.clone();
    out.remove(&Scalar::Symbol(name));
    out
}

