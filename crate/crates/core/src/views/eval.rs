//! Evaluation: out-of-place against an immutable input, or in-place as a
//! rewrite of a database.

use std::collections::HashMap;
use std::sync::Arc;

use super::mutate::{self, Allocator};
use super::typing::{map_at, refs_to_keys};
use super::{aggregate, setops, Compiled, Op, ViewExpr};
use crate::engine::Snapshot;
use crate::error::{Error, Result};
use crate::model::{Domain, Key, Map, MapPath, MapType, Ref, Scalar, Value};
use crate::schema::{rewrite_link_domains, rewrite_links, Database};

/// What happens to links in an out-of-place result.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RefMode {
    /// Links into relations that are part of the result point into the
    /// result; all other links are replaced by embedded copies of their
    /// targets.
    #[default]
    Materialize,
    /// Every link is replaced by the key it names.
    Keys,
    /// Links are left pointing into the input version.
    Keep,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub refs: RefMode,
}

fn bad(op: &Op) -> Error {
    Error::InvalidView(format!("node {op:?} was not compiled"))
}

pub(crate) fn run(v: &ViewExpr, root: &Map, alloc: &mut Option<&mut Allocator<'_>>) -> Result<Map> {
    let Some(child) = v.child() else {
        return Ok(root.clone());
    };
    let input = run(child, root, alloc)?;
    let t = child.out_type().as_ref();
    let op = v.op();
    match (op, v.compiled()) {
        (Op::Input, _) => Ok(input),
        (Op::Extract { path }, _) => Ok(map_at(&input, path)?.clone()),
        (Op::Filter { path, .. }, Compiled::Pred(p)) => mutate::filter_eval(&input, root, path, p),
        (Op::Project { path, keys, distinct }, _) => mutate::project_eval(&input, t, path, keys, *distinct),
        (Op::Compute { path, .. }, Compiled::Compute(outs)) => mutate::compute_eval(&input, root, t, path, outs),
        (Op::Rename { path, scope, mapping }, _) => {
            mutate::rename_eval(&input, t, v.out_type(), path, *scope, mapping)
        }
        (Op::Join { .. }, Compiled::Join(plan)) => plan.eval(&input),
        (Op::SetOp { kind, inputs }, _) => setops::set_eval(&input, v.out_type(), *kind, inputs),
        (Op::Aggregate { path, .. }, Compiled::Aggregate(groups)) => {
            aggregate::aggregate_eval(&input, root, path, groups)
        }
        (Op::Partition { path, replicate, .. }, Compiled::Partition(by)) => {
            aggregate::partition_eval(&input, root, path, by, replicate)
        }
        (Op::Replicate { path, copies }, _) => aggregate::replicate_eval(&input, path, *copies),
        (Op::Denormalize { .. }, Compiled::Denormalize(plan)) => plan.eval(&input),
        (Op::Factorize { .. }, Compiled::Factorize(plan)) => plan.eval(&input),
        (Op::SubDb { .. }, Compiled::SubDb(plan)) => plan.eval(&input),
        (Op::Insert { path, .. }, Compiled::Insert(rows)) => mutate::insert_eval(&input, t, path, rows, alloc),
        (Op::Update { path, .. }, Compiled::Update(pred, outs)) => {
            mutate::update_eval(&input, root, t, path, pred, outs)
        }
        (Op::Delete { path, .. }, Compiled::Pred(p)) => mutate::delete_eval(&input, root, path, p),
        (Op::InsertRelation { .. }, Compiled::Insert(rows)) => {
            let mut out = input;
            for (k, val) in rows {
                let name = k.as_ref().and_then(Scalar::as_symbol).ok_or_else(|| bad(op))?;
                out.insert(Key::from(name), val.clone())?;
            }
            Ok(out)
        }
        (Op::DropRelation { name }, _) => Ok(mutate::drop_relation_eval(&input, *name)),
        _ => Err(bad(op)),
    }
}

/// Evaluates a view over a raw input map.
pub fn eval_map(v: &ViewExpr, input: &Map, opts: EvalOptions) -> Result<Map> {
    if v.has_mutation() {
        return Err(Error::InPlaceOnly);
    }
    let out = run(v, input, &mut None)?;
    finish(v, out, opts.refs)
}

/// Evaluates a view against one committed version. The result is detached
/// from the store: later commits cannot change it.
pub fn eval_out_of_place(v: &ViewExpr, s: &Snapshot) -> Result<Map> {
    eval_snapshot(v, s, EvalOptions::default())
}

pub fn eval_snapshot(v: &ViewExpr, s: &Snapshot, opts: EvalOptions) -> Result<Map> {
    if v.has_mutation() {
        return Err(Error::InPlaceOnly);
    }
    let db = s.database();
    if **v.in_type() != db.schema().as_map_type() {
        return Err(Error::TypeMismatch(format!(
            "the view's input type does not match database {}",
            s.name()
        )));
    }
    eval_map(v, db.data(), opts)
}

fn finish(v: &ViewExpr, out: Map, mode: RefMode) -> Result<Map> {
    match mode {
        RefMode::Keep => Ok(out),
        RefMode::Keys => Ok(normalize_refs(&out)),
        RefMode::Materialize => materialize(&out, v.out_type(), v.in_type()),
    }
}

/// Replaces every link by the key it names: the common form of results
/// computed over foreign keys and over links.
pub fn normalize_refs(m: &Map) -> Map {
    match refs_to_keys(&Value::map(m.clone())) {
        Value::Map(m) => Arc::try_unwrap(m).unwrap_or_else(|a| (*a).clone()),
        _ => unreachable!("a map stays a map"),
    }
}

/// A link target is internal when it names a collection kept in the result.
fn internal(out_t: &MapType, target: &MapPath) -> bool {
    target.segments().first().is_some_and(|s| out_t.entry(*s).is_some())
        && out_t.type_at(target.segments()).is_some_and(|c| c.is_homogeneous())
}

fn target_elem(in_t: &MapType, target: &MapPath) -> Result<Arc<MapType>> {
    in_t.type_at(target.segments())
        .and_then(|t| t.element_type())
        .cloned()
        .ok_or_else(|| Error::UnresolvedDomainTarget(target.to_string()))
}

fn embed_domains(t: &MapType, in_t: &MapType, keep_internal: Option<&MapType>) -> Result<MapType> {
    let r = rewrite_link_domains(t, &|d| {
        let target = d.link_target().expect("link domain");
        if keep_internal.is_some_and(|o| internal(o, target)) {
            return Ok(None);
        }
        Ok(Some(match d {
            Domain::ForeignKey { key_kind, .. } => Domain::Scalar(*key_kind),
            _ => Domain::map(embed_domains(&*target_elem(in_t, target)?, in_t, None)?),
        }))
    })?;
    Ok(r.unwrap_or_else(|| t.clone()))
}

/// The type of a materialized out-of-place result.
pub fn result_type(v: &ViewExpr, mode: RefMode) -> Result<MapType> {
    match mode {
        RefMode::Keep => Ok((**v.out_type()).clone()),
        RefMode::Keys => super::typing::erase_links(v.out_type(), v.in_type()),
        RefMode::Materialize => embed_domains(v.out_type(), v.in_type(), Some(v.out_type())),
    }
}

type EmbedCache = HashMap<(MapPath, Scalar), Value>;

fn embed(r: &Ref, in_t: &MapType, cache: &mut EmbedCache) -> Result<Value> {
    let ck = (r.path().clone(), r.key().clone());
    if let Some(v) = cache.get(&ck) {
        return Ok(v.clone());
    }
    let target = r.target();
    if !matches!(target, Value::Map(_)) {
        return Err(Error::DanglingReference(format!("{:?} is not bound", r)));
    }
    let elem = target_elem(in_t, r.path())?;
    let copied = rewrite_links(target, &Domain::MapType(elem), &mut |x, _| match x {
        Value::Ref(inner) => embed(inner, in_t, cache).map(Some),
        _ => Ok(None),
    })?
    .unwrap_or_else(|| target.clone());
    cache.insert(ck, copied.clone());
    Ok(copied)
}

fn materialize(out: &Map, out_t: &MapType, in_t: &MapType) -> Result<Map> {
    let mut cache = EmbedCache::new();
    let mut rebound: HashMap<(MapPath, Scalar), Ref> = HashMap::new();
    let v = Value::map(out.clone());
    let r = rewrite_links(&v, &Domain::MapType(Arc::new(out_t.clone())), &mut |x, d| {
        let (Value::Ref(r), Domain::Enumeration { target, .. }) = (x, d) else {
            return Ok(None);
        };
        if !internal(out_t, target) {
            return embed(r, in_t, &mut cache).map(Some);
        }
        let Some(live) = out.at_path(target.segments()).and_then(|m| m.get(r.key())) else {
            return Ok(None);
        };
        if crate::model::link_is_current(r.target(), live) {
            return Ok(None);
        }
        let nr = rebound
            .entry((target.clone(), r.key().clone()))
            .or_insert_with(|| Ref::new(target.clone(), r.key().clone(), live.clone()))
            .clone();
        Ok(Some(Value::Ref(nr)))
    })?;
    Ok(match r {
        Some(Value::Map(m)) => (*m).clone(),
        _ => out.clone(),
    })
}

/// Applies a view to a database as a rewrite, producing the successor
/// database (not yet validated or published). Identities for inserts into
/// surrogate-keyed relations come from `alloc`.
pub fn apply_in_place(v: &ViewExpr, db: &Database, alloc: &mut Allocator<'_>) -> Result<Database> {
    let in_t = db.schema().as_map_type();
    if **v.in_type() != in_t {
        return Err(Error::TypeMismatch("the view's input type does not match the database".into()));
    }
    let out = run(v, db.data(), &mut Some(alloc))?;
    let schema = if v.changes_schema() {
        let out_t = v.out_type();
        let mut s = (**db.schema()).clone();
        for name in s.names() {
            if out_t.entry(name).is_none() {
                s.remove_relation(name);
            }
        }
        for e in &out_t.entries {
            let rel = e
                .domain
                .as_map_type()
                .ok_or_else(|| Error::InvalidView(format!("{} is not a relation", e.key)))?;
            if s.relation(e.key) != Some(rel) {
                s.insert_relation(e.key, rel.clone());
            }
        }
        Arc::new(s)
    } else {
        if **v.out_type() != in_t {
            return Err(Error::InvalidView(
                "an in-place view must keep the database schema or insert/drop relations".into(),
            ));
        }
        db.schema().clone()
    };
    Ok(Database::new(schema, out))
}

