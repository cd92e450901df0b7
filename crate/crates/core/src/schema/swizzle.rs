use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use super::{Database, DatabaseSchema};
use crate::error::{Error, Result};
use crate::model::{link_is_current, Domain, KeyPolicy, Map, MapPath, MapType, Ref, Scalar, ScalarKind, Value};

/// Rewrites the values under link domains (enumeration or foreign key) of
/// `v`, descending through nested map types. Returns `None` when nothing
/// changed so that untouched maps keep their allocation.
pub(crate) fn rewrite_links(
    v: &Value,
    d: &Domain,
    f: &mut dyn FnMut(&Value, &Domain) -> Result<Option<Value>>,
) -> Result<Option<Value>> {
    match (d, v) {
        (Domain::MapType(t), Value::Map(m)) => {
            let mut out: Option<Map> = None;
            for i in 0..m.len() {
                let (k, child) = m.get_index(i).expect("index in range");
                let dom = k
                    .value
                    .as_symbol()
                    .and_then(|s| t.entry(s))
                    .map(|e| &e.domain)
                    .or(t.value_domain.as_ref());
                let Some(dom) = dom else { continue };
                if let Some(nv) = rewrite_links(child, dom, f)? {
                    let target = out.get_or_insert_with(|| (**m).clone());
                    *target.get_mut(&k.value).expect("same keys") = nv;
                }
            }
            Ok(out.map(Value::map))
        }
        (Domain::Enumeration { .. } | Domain::ForeignKey { .. }, _) => f(v, d),
        _ => Ok(None),
    }
}

pub(crate) fn rewrite_link_domains(t: &MapType, f: &dyn Fn(&Domain) -> Result<Option<Domain>>) -> Result<Option<MapType>> {
    let mut out: Option<MapType> = None;
    for (i, e) in t.entries.iter().enumerate() {
        if let Some(nd) = rewrite_domain(&e.domain, f)? {
            out.get_or_insert_with(|| t.clone()).entries[i].domain = nd;
        }
    }
    if let Some(d) = &t.value_domain {
        if let Some(nd) = rewrite_domain(d, f)? {
            out.get_or_insert_with(|| t.clone()).value_domain = Some(nd);
        }
    }
    Ok(out)
}

fn rewrite_domain(d: &Domain, f: &dyn Fn(&Domain) -> Result<Option<Domain>>) -> Result<Option<Domain>> {
    match d {
        Domain::MapType(inner) => Ok(rewrite_link_domains(inner, f)?.map(Domain::map)),
        Domain::Enumeration { .. } | Domain::ForeignKey { .. } => f(d),
        Domain::Scalar(_) => Ok(None),
    }
}

fn map_schema(
    schema: &DatabaseSchema,
    f: &dyn Fn(&Domain) -> Result<Option<Domain>>,
) -> Result<Option<DatabaseSchema>> {
    let mut out: Option<DatabaseSchema> = None;
    for (name, t) in schema.relations() {
        if let Some(nt) = rewrite_link_domains(t, f)? {
            out.get_or_insert_with(|| schema.clone())
                .insert_relation(name, Arc::new(nt));
        }
    }
    Ok(out)
}

fn relation_domain(t: &Arc<MapType>) -> Domain {
    Domain::MapType(t.clone())
}

/// Shares one link per target entry within a pass.
#[derive(Default)]
struct LinkMemo(HashMap<(MapPath, Scalar), Ref>);

impl LinkMemo {
    fn link(&mut self, path: &MapPath, key: &Scalar, live: &Value) -> Ref {
        self.0
            .entry((path.clone(), key.clone()))
            .or_insert_with(|| Ref::new(path.clone(), key.clone(), live.clone()))
            .clone()
    }
}

/// Replaces every foreign-key scalar by a direct link to the target entry.
pub fn swizzle(db: &Database) -> Result<Database> {
    let schema = db.schema();
    for (_, t) in schema.relations() {
        for p in super::link_targets(t) {
            let target_t = schema.as_map_type();
            if let Some(tt) = target_t.type_at(p.segments()) {
                if tt.key_policy.is_hidden() {
                    return Err(Error::IdentityNotExternalizable(format!(
                        "foreign key into {p}, which uses engine-managed identities"
                    )));
                }
            }
        }
    }
    let Some(new_schema) = map_schema(schema, &|d| {
        Ok(match d {
            Domain::ForeignKey { target, key_kind } => Some(Domain::Enumeration {
                target: target.clone(),
                fk_kind: Some(*key_kind),
            }),
            _ => None,
        })
    })?
    else {
        return Ok(db.clone());
    };

    let mut data = db.data().clone();
    let mut memo = LinkMemo::default();
    for name in schema.link_order()? {
        let t = schema.relation(name).expect("ordered names come from the schema");
        let Some(rel) = data.attr(name).cloned() else { continue };
        if let Some(nv) = swizzle_flat(name, t, &rel, &data)? {
            data.set(name.into(), nv);
            continue;
        }
        let ctx = &data;
        let rewritten = rewrite_links(&rel, &relation_domain(t), &mut |v, d| match (d, v) {
            (Domain::ForeignKey { target, .. }, Value::Scalar(s)) => {
                let live = ctx
                    .at_path(target.segments())
                    .and_then(|m| m.get(s))
                    .ok_or_else(|| {
                        Error::ReferentialViolation(format!("{name}: key {s} has no match in {target}"))
                    })?;
                Ok(Some(Value::Ref(memo.link(target, s, live))))
            }
            _ => Ok(None),
        })?;
        if let Some(nv) = rewritten {
            data.set(name.into(), nv);
        }
    }
    Ok(Database::new(Arc::new(new_schema), data))
}

/// Resolves foreign-key scalars into links to one target relation. Each
/// target entry gets one shared link; integer keys in a dense range are
/// looked up by offset instead of by hash.
pub struct Linker<'a> {
    path: MapPath,
    target: &'a Map,
    links: Vec<Option<Ref>>,
    dense: Option<(i64, Vec<u32>)>,
}

impl<'a> Linker<'a> {
    pub fn new(data: &'a Map, target: &MapPath) -> Result<Linker<'a>> {
        let tm = data
            .at_path(target.segments())
            .ok_or_else(|| Error::UnresolvedDomainTarget(target.to_string()))?;
        Ok(Linker {
            path: target.clone(),
            target: tm,
            links: vec![None; tm.len()],
            dense: dense_index(tm),
        })
    }

    #[inline]
    fn position(&self, s: &Scalar) -> Option<usize> {
        if let (Some((base, idx)), Scalar::Int(k)) = (&self.dense, s) {
            let i = idx.get(usize::try_from(k.checked_sub(*base)?).ok()?).copied()?;
            return (i != u32::MAX).then_some(i as usize);
        }
        self.target.position(s)
    }

    /// The link for `key`, or `None` when the target has no such entry.
    #[inline]
    pub fn link(&mut self, key: &Scalar) -> Option<Ref> {
        let tp = self.position(key)?;
        Some(match &self.links[tp] {
            Some(l) => l.clone(),
            None => {
                let l = Ref::new(self.path.clone(), key.clone(), self.target.value_at(tp).clone());
                self.links[tp] = Some(l.clone());
                l
            }
        })
    }

    pub fn path(&self) -> &MapPath {
        &self.path
    }
}

fn dense_index(m: &Map) -> Option<(i64, Vec<u32>)> {
    let (mut lo, mut hi) = (i64::MAX, i64::MIN);
    for k in m.keys() {
        let Scalar::Int(x) = k.value else { return None };
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if m.is_empty() || m.len() >= u32::MAX as usize {
        return None;
    }
    let span = usize::try_from(hi.checked_sub(lo)?).ok()? + 1;
    if span > 2 * m.len() + 64 {
        return None;
    }
    let mut idx = vec![u32::MAX; span];
    for (i, k) in m.keys().enumerate() {
        let Scalar::Int(x) = k.value else { return None };
        idx[(x - lo) as usize] = i as u32;
    }
    Some((lo, idx))
}

/// Fast path for a relation of flat tuples whose foreign keys point at
/// top-level relations: attribute positions are resolved once per shared
/// tuple layout. Returns `None` when the relation does not have that shape.
fn swizzle_flat(name: crate::model::Symbol, t: &MapType, rel: &Value, data: &Map) -> Result<Option<Value>> {
    let (Some(Domain::MapType(elem)), Value::Map(rel)) = (&t.value_domain, rel) else {
        return Ok(None);
    };
    let mut fks: Vec<(Scalar, Linker<'_>)> = Vec::new();
    for e in &elem.entries {
        match &e.domain {
            Domain::ForeignKey { target, .. } => {
                if data.at_path(target.segments()).is_none() {
                    return Ok(None);
                }
                fks.push((Scalar::Symbol(e.key), Linker::new(data, target)?));
            }
            Domain::Scalar(_) => {}
            _ => return Ok(None),
        }
    }
    if fks.is_empty() || elem.value_domain.is_some() {
        return Ok(None);
    }
    // Per tuple layout: which foreign key, if any, sits at each position.
    let mut layout: Option<(Arc<crate::model::KeyLayout>, Vec<Option<usize>>)> = None;
    let mut values = Vec::with_capacity(rel.len());
    for v in rel.values() {
        let Value::Map(tuple) = v else {
            values.push(v.clone());
            continue;
        };
        let same = matches!(&layout, Some((l, _)) if Arc::ptr_eq(l, tuple.layout()));
        if !same {
            let mut plan = vec![None; tuple.len()];
            for (fi, (attr, _)) in fks.iter().enumerate() {
                if let Some(i) = tuple.position(attr) {
                    plan[i] = Some(fi);
                }
            }
            layout = Some((tuple.layout().clone(), plan));
        }
        let plan = &layout.as_ref().expect("set above").1;
        let mut out = Vec::with_capacity(tuple.len());
        for (x, slot) in tuple.values().iter().zip(plan) {
            let (Some(fi), Value::Scalar(s)) = (slot, x) else {
                out.push(x.clone());
                continue;
            };
            let linker = &mut fks[*fi].1;
            let link = linker.link(s).ok_or_else(|| {
                Error::ReferentialViolation(format!("{name}: key {s} has no match in {}", linker.path()))
            })?;
            out.push(Value::Ref(link));
        }
        values.push(Value::map(Map::with_layout(tuple.layout().clone(), out)?));
    }
    Ok(Some(Value::map(Map::with_layout(rel.layout().clone(), values)?)))
}

/// Replaces every link by its target's key as a foreign-key scalar.
pub fn unswizzle(db: &Database) -> Result<Database> {
    let schema = db.schema();
    let db_type = schema.as_map_type();
    let key_kind_of = |target: &MapPath| -> Result<ScalarKind> {
        let tt = db_type
            .type_at(target.segments())
            .ok_or_else(|| Error::UnresolvedDomainTarget(target.to_string()))?;
        match &tt.key_policy {
            KeyPolicy::Surrogate => Err(Error::IdentityNotExternalizable(format!(
                "links into {target} carry engine-managed identities"
            ))),
            _ => Ok(tt.key_domain.unwrap_or(ScalarKind::Symbol)),
        }
    };
    let new_schema = map_schema(schema, &|d| {
        Ok(match d {
            Domain::Enumeration { target, fk_kind } => Some(Domain::ForeignKey {
                target: target.clone(),
                key_kind: match fk_kind {
                    Some(k) => *k,
                    None => key_kind_of(target)?,
                },
            }),
            _ => None,
        })
    })?;
    let Some(new_schema) = new_schema else {
        return Ok(db.clone());
    };

    let mut data = db.data().clone();
    for (name, t) in schema.relations() {
        let Some(rel) = db.data().attr(name) else { continue };
        let rewritten = rewrite_links(rel, &relation_domain(t), &mut |v, d| {
            let Domain::Enumeration { target, .. } = d else { return Ok(None) };
            match v {
                Value::Ref(r) => Ok(Some(Value::Scalar(r.key().clone()))),
                Value::Map(m) => {
                    let live = db
                        .data()
                        .at_path(target.segments())
                        .ok_or_else(|| Error::UnresolvedDomainTarget(target.to_string()))?;
                    let (k, _) = live
                        .iter()
                        .find(|(_, lv)| lv.as_map() == Some(m.as_ref()))
                        .ok_or_else(|| Error::DanglingReference(format!("{name}: map not found in {target}")))?;
                    Ok(Some(Value::Scalar(k.value.clone())))
                }
                Value::Scalar(_) => Ok(None),
            }
        })?;
        if let Some(nv) = rewritten {
            data.set(name.into(), nv);
        }
    }
    Ok(Database::new(Arc::new(new_schema), data))
}

/// Rebinds every link to the live entry it names. Links whose target entry
/// is gone are left as they are and surface as dangling on validation.
pub fn relink(db: &Database) -> Result<Database> {
    relink_inner(db, None)
}

/// Like [`relink`], but only revisits relations that link (directly or
/// transitively) into one of `changed`.
pub fn relink_changed(db: &Database, changed: &HashSet<crate::model::Symbol>) -> Result<Database> {
    relink_inner(db, Some(changed))
}

fn relink_inner(db: &Database, changed: Option<&HashSet<crate::model::Symbol>>) -> Result<Database> {
    let schema = db.schema();
    let mut dirty: HashSet<crate::model::Symbol> = changed.cloned().unwrap_or_default();
    let mut data = db.data().clone();
    let mut memo = LinkMemo::default();
    let mut any = false;
    for name in schema.link_order()? {
        let t = schema.relation(name).expect("ordered names come from the schema");
        let targets = super::link_targets(t);
        let has_enum = has_enumeration(t);
        if !has_enum {
            continue;
        }
        let affected = changed.is_none()
            || dirty.contains(&name)
            || targets
                .iter()
                .any(|p| p.segments().first().is_some_and(|s| dirty.contains(s)));
        if !affected {
            continue;
        }
        let Some(rel) = data.attr(name).cloned() else { continue };
        let ctx = &data;
        let rewritten = rewrite_links(&rel, &relation_domain(t), &mut |v, d| match (d, v) {
            (Domain::Enumeration { target, .. }, Value::Ref(r)) => {
                let Some(live) = ctx.at_path(target.segments()).and_then(|m| m.get(r.key())) else {
                    return Ok(None);
                };
                if link_is_current_ptr(r.target(), live) {
                    return Ok(None);
                }
                Ok(Some(Value::Ref(memo.link(target, r.key(), live))))
            }
            _ => Ok(None),
        })?;
        if let Some(nv) = rewritten {
            data.set(name.into(), nv);
            dirty.insert(name);
            any = true;
        }
    }
    if !any {
        return Ok(db.clone());
    }
    Ok(Database::new(schema.clone(), data))
}

fn link_is_current_ptr(cached: &Value, live: &Value) -> bool {
    match (cached, live) {
        (Value::Map(a), Value::Map(b)) => Arc::ptr_eq(a, b),
        _ => link_is_current(cached, live),
    }
}

fn has_enumeration(t: &MapType) -> bool {
    t.entries
        .iter()
        .map(|e| &e.domain)
        .chain(t.value_domain.iter())
        .any(|d| match d {
            Domain::Enumeration { .. } => true,
            Domain::MapType(inner) => has_enumeration(inner),
            _ => false,
        })
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::{running_example, Encoding};
    use super::super::validate_database;
    use super::*;
    use crate::json::map_to_json;
    use crate::model::{Key, Symbol};

    #[test]
    fn swizzle_turns_foreign_keys_into_links() {
        let rm = running_example(Encoding::ForeignKey);
        let sw = swizzle(&rm).unwrap();
        assert!(validate_database(&sw).unwrap().conforms);
        let give = sw.relation("give").unwrap();
        let row = give.value_at(0).as_map().unwrap();
        let p = row.attr(Symbol::new("p")).unwrap().as_ref_link().unwrap();
        assert_eq!(p.key(), &Scalar::Int(42));
        let prof = p.target().as_map().unwrap();
        assert_eq!(prof.attr(Symbol::new("name")), Some(&Value::from("Luke")));
        // Both give rows for professor 42 share one link.
        let other = give.value_at(2).as_map().unwrap().attr(Symbol::new("p")).unwrap();
        assert!(p.same_link(other.as_ref_link().unwrap()));
    }

    #[test]
    fn round_trip_is_exact() {
        let rm = running_example(Encoding::ForeignKey);
        let back = unswizzle(&swizzle(&rm).unwrap()).unwrap();
        assert_eq!(back, rm);
        assert_eq!(map_to_json(back.data()).to_string(), map_to_json(rm.data()).to_string());
        assert_eq!(back.schema().to_json(), rm.schema().to_json());
    }

    #[test]
    fn no_foreign_keys_is_a_no_op() {
        let rm = running_example(Encoding::ForeignKey);
        let profs_only = DatabaseSchema::new().with_relation("Professors", rm.schema().relation(Symbol::new("Professors")).unwrap().clone());
        let db = Database::new(
            Arc::new(profs_only),
            Map::tuple([("Professors", Value::Map(rm.relation_arc(Symbol::new("Professors")).unwrap().clone()))]),
        );
        let sw = swizzle(&db).unwrap();
        assert!(Arc::ptr_eq(sw.data_arc(), db.data_arc()));
    }

    #[test]
    fn missing_target_is_detected_while_swizzling() {
        let rm = running_example(Encoding::ForeignKey);
        let mut give = rm.relation("give").unwrap().clone();
        let mut row = give.value_at(1).as_map().unwrap().clone();
        row.set(Key::sym("l"), 5i64.into());
        give.set(Key::surrogate(1), Value::map(row));
        let err = swizzle(&rm.with_relation(Symbol::new("give"), give)).unwrap_err();
        assert!(matches!(err, Error::ReferentialViolation(_)), "{err}");
    }

    #[test]
    fn relink_follows_updated_targets() {
        let sw = running_example(Encoding::Link);
        let profs = sw.relation("Professors").unwrap();
        let mut renamed = profs.clone();
        let mut luke = renamed.get(&Scalar::Int(42)).unwrap().as_map().unwrap().clone();
        luke.set(Key::sym("name"), "Luke S.".into());
        renamed.set(Key::computed(42i64), Value::map(luke));
        let stale = sw.with_relation(Symbol::new("Professors"), renamed);
        assert!(!validate_database(&stale).unwrap().conforms);
        let changed: HashSet<Symbol> = [Symbol::new("Professors")].into();
        let fresh = relink_changed(&stale, &changed).unwrap();
        assert!(validate_database(&fresh).unwrap().conforms);
        let p = fresh.relation("give").unwrap().value_at(0).as_map().unwrap().attr(Symbol::new("p")).unwrap().clone();
        assert_eq!(p.deref_map().unwrap().attr(Symbol::new("name")), Some(&Value::from("Luke S.")));
        // Lectures do not link anywhere and keep their allocation.
        assert!(Arc::ptr_eq(
            fresh.relation_arc(Symbol::new("Lectures")).unwrap(),
            stale.relation_arc(Symbol::new("Lectures")).unwrap()
        ));
    }

    #[test]
    fn linker_shares_links_for_dense_and_sparse_keys() {
        let rel = |keys: &[i64]| {
            let mut m = Map::new();
            for k in keys {
                m.insert(Key::computed(*k), Value::map(Map::tuple([("id", (*k).into())]))).unwrap();
            }
            Value::map(m)
        };
        let data = Map::tuple([("A", rel(&[3, 4, 6])), ("B", rel(&[1, 1_000_000]))]);
        for (name, hit, miss) in [("A", 6, 5), ("B", 1_000_000, 2)] {
            let mut l = Linker::new(&data, &MapPath::from(name)).unwrap();
            let a = l.link(&Scalar::Int(hit)).unwrap();
            let b = l.link(&Scalar::Int(hit)).unwrap();
            assert!(a.same_link(&b));
            assert_eq!(a.key(), &Scalar::Int(hit));
            assert!(l.link(&Scalar::Int(miss)).is_none());
            assert!(l.link(&Scalar::Int(-7)).is_none());
            assert!(l.link(&Scalar::text("6")).is_none());
        }
        assert!(Linker::new(&data, &MapPath::from("C")).is_err());
    }
}
