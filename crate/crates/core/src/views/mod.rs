//! Map views: functions from map to map, built as immutable expression
//! trees and evaluated either out-of-place against a snapshot or in-place
//! as an atomic rewrite of a stored database.

mod aggregate;
mod eval;
mod expr;
mod join;
mod mutate;
mod normalize;
mod setops;
mod typing;
mod ybr;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::error::{Error, Result};
use crate::json;
use crate::model::{MapPath, MapType, ScalarLit, Symbol, Value};

pub use aggregate::{AggFunc, AggSpec, GroupSpec};
pub use eval::{apply_in_place, eval_map, eval_out_of_place, eval_snapshot, normalize_refs, result_type, EvalOptions, RefMode};
pub use mutate::Allocator;
pub use expr::{CmpOp, FunctionDef, KeyPath, Operand, Predicate, Registry, KEY_ATTR};
pub use join::{JoinInput, JoinKind, JoinOn, LinkSpec};
pub use normalize::{EntitySpec, FactorizeSpec};
pub use setops::{SetInputs, SetKind};
pub use typing::{schema_subset, EACH};
pub use ybr::{EquiEdge, SubDbMode};

use aggregate::CGroup;
use expr::{COperand, CPredicate};


/// A value carried inside a view (insert payloads), encoded canonically.
#[derive(Clone, Debug, PartialEq)]
pub struct Payload(pub Value);

impl Serialize for Payload {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        json::value_to_json(&self.0).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Payload {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Json::deserialize(d)?;
        json::value_from_json(&v).map(Payload).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InsertRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<ScalarLit>,
    pub value: Payload,
}

impl InsertRow {
    pub fn new(value: impl Into<Value>) -> InsertRow {
        InsertRow {
            key: None,
            value: Payload(value.into()),
        }
    }

    pub fn keyed(key: impl Into<crate::model::Scalar>, value: impl Into<Value>) -> InsertRow {
        InsertRow {
            key: Some(ScalarLit(key.into())),
            value: Payload(value.into()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenameScope {
    /// Keys of the map at the path: relation names in a database, database
    /// names in a set of databases, attribute names in a tuple.
    Keys,
    /// Attribute names inside every element of the collection at the path.
    Attributes,
}

/// One node of a view. The serialized form of a view is the chain of its
/// nodes, innermost first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    Input,
    Extract {
        path: MapPath,
    },
    Filter {
        path: MapPath,
        pred: Predicate,
    },
    Project {
        path: MapPath,
        keys: Vec<Symbol>,
        #[serde(default)]
        distinct: bool,
    },
    Compute {
        path: MapPath,
        outputs: Vec<(Symbol, Operand)>,
    },
    Rename {
        path: MapPath,
        scope: RenameScope,
        mapping: Vec<(Symbol, Symbol)>,
    },
    Join {
        kind: JoinKind,
        inputs: Vec<JoinInput>,
        on: JoinOn,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        outer: Vec<Symbol>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        preserve: Option<Symbol>,
    },
    SetOp {
        kind: SetKind,
        inputs: SetInputs,
    },
    Aggregate {
        path: MapPath,
        groups: Vec<GroupSpec>,
    },
    Partition {
        path: MapPath,
        by: Operand,
        /// Extra (element key, partition id) placements: partial replication.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        replicate: Vec<(ScalarLit, ScalarLit)>,
    },
    Replicate {
        path: MapPath,
        copies: usize,
    },
    Denormalize {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        root: Option<Symbol>,
    },
    Factorize {
        path: MapPath,
        spec: FactorizeSpec,
    },
    SubDb {
        mode: SubDbMode,
        #[serde(default)]
        filters: Vec<(Symbol, Predicate)>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        outer: Vec<Symbol>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        join: Option<Vec<EquiEdge>>,
    },
    Insert {
        path: MapPath,
        rows: Vec<InsertRow>,
    },
    Update {
        path: MapPath,
        pred: Predicate,
        set: Vec<(Symbol, Operand)>,
    },
    Delete {
        path: MapPath,
        pred: Predicate,
    },
    InsertRelation {
        name: Symbol,
        rel_type: Arc<MapType>,
        data: Payload,
    },
    DropRelation {
        name: Symbol,
    },
}

impl Op {
    pub fn is_mutation(&self) -> bool {
        matches!(
            self,
            Op::Insert { .. } | Op::Update { .. } | Op::Delete { .. } | Op::InsertRelation { .. } | Op::DropRelation { .. }
        )
    }

    fn changes_schema(&self) -> bool {
        matches!(self, Op::InsertRelation { .. } | Op::DropRelation { .. })
    }
}

/// Per-node data prepared at construction: compiled expressions and plans.
#[derive(Clone, Debug)]
pub(crate) enum Compiled {
    None,
    Pred(CPredicate),
    Compute(Vec<(Symbol, COperand)>),
    Partition(COperand),
    Join(Arc<join::JoinPlan>),
    Aggregate(Vec<CGroup>),
    SubDb(Arc<ybr::YbrPlan>),
    Update(CPredicate, Vec<mutate::SetOut>),
    Insert(Vec<(Option<crate::model::Scalar>, Value)>),
    Factorize(Arc<normalize::FactorPlan>),
    Denormalize(Arc<normalize::DenormPlan>),
}

struct Node {
    op: Op,
    input: Option<ViewExpr>,
    out_type: Arc<MapType>,
    root: Arc<MapType>,
    registry: Arc<Registry>,
    compiled: Compiled,
}

/// An immutable view expression. Every node carries its inferred output
/// type; construction fails when a parameter names a missing or hidden key.
#[derive(Clone)]
pub struct ViewExpr(Arc<Node>);

impl PartialEq for ViewExpr {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.op == other.0.op && self.0.input == other.0.input && self.0.root == other.0.root)
    }
}

impl fmt::Debug for ViewExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_json())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Constraining,
    Transforming,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderDelta {
    Increase,
    Decrease,
    Same,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ViewClass {
    pub shape: Shape,
    pub order_delta: OrderDelta,
}

impl ViewExpr {
    /// The identity view over maps of type `t`, with the builtin functions.
    pub fn input(t: MapType) -> ViewExpr {
        ViewExpr::input_with(t, Arc::new(Registry::builtins()))
    }

    pub fn input_with(t: MapType, registry: Arc<Registry>) -> ViewExpr {
        let t = Arc::new(t);
        ViewExpr(Arc::new(Node {
            op: Op::Input,
            input: None,
            out_type: t.clone(),
            root: t,
            registry,
            compiled: Compiled::None,
        }))
    }

    pub fn over(db: &crate::schema::Database) -> ViewExpr {
        ViewExpr::input(db.schema().as_map_type())
    }

    pub fn op(&self) -> &Op {
        &self.0.op
    }

    pub fn child(&self) -> Option<&ViewExpr> {
        self.0.input.as_ref()
    }

    pub fn in_type(&self) -> &Arc<MapType> {
        &self.0.root
    }

    pub fn out_type(&self) -> &Arc<MapType> {
        &self.0.out_type
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.0.registry
    }

    pub(crate) fn compiled(&self) -> &Compiled {
        &self.0.compiled
    }

    /// Nodes from the input outwards.
    pub fn chain(&self) -> Vec<&ViewExpr> {
        let mut v = Vec::new();
        let mut cur = Some(self);
        while let Some(n) = cur {
            v.push(n);
            cur = n.child();
        }
        v.reverse();
        v
    }

    pub fn has_mutation(&self) -> bool {
        self.chain().iter().any(|n| n.op().is_mutation())
    }

    pub(crate) fn changes_schema(&self) -> bool {
        self.chain().iter().any(|n| n.op().changes_schema())
    }

    /// Appends a node, checking its parameters against the current output
    /// type. All builders funnel through here, as does deserialization.
    pub fn push(&self, op: Op) -> Result<ViewExpr> {
        let (out, compiled) = self.infer(&op)?;
        out.check()?;
        Ok(ViewExpr(Arc::new(Node {
            op,
            input: Some(self.clone()),
            out_type: Arc::new(out),
            root: self.0.root.clone(),
            registry: self.0.registry.clone(),
            compiled,
        })))
    }

    fn infer(&self, op: &Op) -> Result<(MapType, Compiled)> {
        let t = self.out_type().as_ref();
        let orig = self.0.root.as_ref();
        let reg = self.0.registry.as_ref();
        let lr = |p: &MapPath| typing::link_root(t, orig, p);
        match op {
            Op::Input => Err(Error::InvalidView("input can only start a view".into())),
            Op::Extract { path } => Ok((typing::type_at(t, path)?.clone(), Compiled::None)),
            Op::Filter { path, pred } | Op::Delete { path, pred } => {
                let (coll, elem) = typing::collection_at(t, path)?;
                let c = scope(coll, elem, lr(path), reg).predicate(pred)?;
                Ok((t.clone(), Compiled::Pred(c)))
            }
            Op::Project { path, keys, distinct } => {
                Ok((mutate::project_type(t, lr(path), path, keys, *distinct)?, Compiled::None))
            }
            Op::Compute { path, outputs } => mutate::compute_type(t, lr(path), reg, path, outputs),
            Op::Rename { path, scope, mapping } => Ok((mutate::rename_type(t, path, *scope, mapping)?, Compiled::None)),
            Op::Join {
                kind,
                inputs,
                on,
                outer,
                preserve,
            } => join::plan(t, orig, reg, *kind, inputs, on, outer, *preserve),
            Op::SetOp { kind, inputs } => Ok((setops::set_type(t, *kind, inputs)?, Compiled::None)),
            Op::Aggregate { path, groups } => aggregate::aggregate_type(t, orig, reg, path, groups),
            Op::Partition { path, by, replicate } => aggregate::partition_type(t, orig, reg, path, by, replicate),
            Op::Replicate { path, copies } => aggregate::replicate_type(t, path, *copies),
            Op::Denormalize { root } => normalize::denormalize_plan(t, *root),
            Op::Factorize { path, spec } => normalize::factorize_plan(t, path, spec),
            Op::SubDb {
                mode,
                filters,
                outer,
                join,
            } => ybr::plan(t, orig, reg, *mode, filters, outer, join.as_deref()),
            Op::Insert { path, rows } => mutate::insert_type(t, lr(path), path, rows),
            Op::Update { path, pred, set } => mutate::update_type(t, lr(path), reg, path, pred, set),
            Op::InsertRelation { name, rel_type, data } => mutate::insert_relation_type(t, *name, rel_type, &data.0),
            Op::DropRelation { name } => mutate::drop_relation_type(t, *name),
        }
    }

    pub fn extract(&self, path: impl Into<MapPath>) -> Result<ViewExpr> {
        self.push(Op::Extract { path: path.into() })
    }

    pub fn filter(&self, path: impl Into<MapPath>, pred: Predicate) -> Result<ViewExpr> {
        self.push(Op::Filter {
            path: path.into(),
            pred,
        })
    }

    pub fn project(&self, path: impl Into<MapPath>, keys: &[&str], distinct: bool) -> Result<ViewExpr> {
        self.push(Op::Project {
            path: path.into(),
            keys: keys.iter().map(|k| Symbol::new(k)).collect(),
            distinct,
        })
    }

    pub fn compute(&self, path: impl Into<MapPath>, outputs: Vec<(&str, Operand)>) -> Result<ViewExpr> {
        self.push(Op::Compute {
            path: path.into(),
            outputs: outputs.into_iter().map(|(k, o)| (Symbol::new(k), o)).collect(),
        })
    }

    pub fn rename(&self, path: impl Into<MapPath>, scope: RenameScope, mapping: &[(&str, &str)]) -> Result<ViewExpr> {
        self.push(Op::Rename {
            path: path.into(),
            scope,
            mapping: mapping.iter().map(|(a, b)| (Symbol::new(a), Symbol::new(b))).collect(),
        })
    }

    pub fn join(&self, kind: JoinKind, inputs: Vec<JoinInput>, on: JoinOn) -> Result<ViewExpr> {
        self.push(Op::Join {
            kind,
            inputs,
            on,
            outer: Vec::new(),
            preserve: None,
        })
    }

    pub fn outer_join(&self, inputs: Vec<JoinInput>, on: JoinOn, outer: &[&str]) -> Result<ViewExpr> {
        self.push(Op::Join {
            kind: JoinKind::Outer,
            inputs,
            on,
            outer: outer.iter().map(|s| Symbol::new(s)).collect(),
            preserve: None,
        })
    }

    pub fn semi_join(&self, inputs: Vec<JoinInput>, on: JoinOn, preserve: &str) -> Result<ViewExpr> {
        self.push(Op::Join {
            kind: JoinKind::Semi,
            inputs,
            on,
            outer: Vec::new(),
            preserve: Some(Symbol::new(preserve)),
        })
    }

    pub fn set_op(&self, kind: SetKind, inputs: SetInputs) -> Result<ViewExpr> {
        self.push(Op::SetOp { kind, inputs })
    }

    pub fn aggregate(&self, path: impl Into<MapPath>, groups: Vec<GroupSpec>) -> Result<ViewExpr> {
        self.push(Op::Aggregate {
            path: path.into(),
            groups,
        })
    }

    pub fn partition(&self, path: impl Into<MapPath>, by: Operand) -> Result<ViewExpr> {
        self.push(Op::Partition {
            path: path.into(),
            by,
            replicate: Vec::new(),
        })
    }

    pub fn replicate(&self, path: impl Into<MapPath>, copies: usize) -> Result<ViewExpr> {
        self.push(Op::Replicate {
            path: path.into(),
            copies,
        })
    }

    pub fn denormalize(&self, root: Option<&str>) -> Result<ViewExpr> {
        self.push(Op::Denormalize {
            root: root.map(Symbol::new),
        })
    }

    pub fn factorize(&self, path: impl Into<MapPath>, spec: FactorizeSpec) -> Result<ViewExpr> {
        self.push(Op::Factorize {
            path: path.into(),
            spec,
        })
    }

    pub fn subdb(&self, mode: SubDbMode, filters: Vec<(&str, Predicate)>, outer: &[&str]) -> Result<ViewExpr> {
        self.push(Op::SubDb {
            mode,
            filters: filters.into_iter().map(|(r, p)| (Symbol::new(r), p)).collect(),
            outer: outer.iter().map(|s| Symbol::new(s)).collect(),
            join: None,
        })
    }

    /// Like [`ViewExpr::subdb`], joining on explicit equalities instead of
    /// the schema's links.
    pub fn subdb_on(
        &self,
        mode: SubDbMode,
        filters: Vec<(&str, Predicate)>,
        outer: &[&str],
        join: Vec<EquiEdge>,
    ) -> Result<ViewExpr> {
        self.push(Op::SubDb {
            mode,
            filters: filters.into_iter().map(|(r, p)| (Symbol::new(r), p)).collect(),
            outer: outer.iter().map(|s| Symbol::new(s)).collect(),
            join: Some(join),
        })
    }

    pub fn insert(&self, path: impl Into<MapPath>, rows: Vec<InsertRow>) -> Result<ViewExpr> {
        self.push(Op::Insert {
            path: path.into(),
            rows,
        })
    }

    pub fn update(&self, path: impl Into<MapPath>, pred: Predicate, set: Vec<(&str, Operand)>) -> Result<ViewExpr> {
        self.push(Op::Update {
            path: path.into(),
            pred,
            set: set.into_iter().map(|(k, o)| (Symbol::new(k), o)).collect(),
        })
    }

    pub fn delete(&self, path: impl Into<MapPath>, pred: Predicate) -> Result<ViewExpr> {
        self.push(Op::Delete {
            path: path.into(),
            pred,
        })
    }

    pub fn insert_relation(&self, name: &str, rel_type: Arc<MapType>, data: crate::model::Map) -> Result<ViewExpr> {
        self.push(Op::InsertRelation {
            name: Symbol::new(name),
            rel_type,
            data: Payload(Value::map(data)),
        })
    }

    pub fn drop_relation(&self, name: &str) -> Result<ViewExpr> {
        self.push(Op::DropRelation { name: Symbol::new(name) })
    }

    pub fn classify(&self) -> ViewClass {
        let i = self.in_type();
        let o = self.out_type();
        let order_delta = match o.order().cmp(&i.order()) {
            std::cmp::Ordering::Greater => OrderDelta::Increase,
            std::cmp::Ordering::Less => OrderDelta::Decrease,
            std::cmp::Ordering::Equal => OrderDelta::Same,
        };
        let shape = if schema_subset(o, i) {
            Shape::Constraining
        } else {
            Shape::Transforming
        };
        ViewClass { shape, order_delta }
    }

    /// Tagged-node JSON: `{"op": .., <params>, "input": <child>}`.
    pub fn to_json(&self) -> Json {
        let mut v = serde_json::to_value(&self.0.op).expect("ops serialize");
        if let (Some(child), Json::Object(o)) = (self.child(), &mut v) {
            o.insert("input".into(), child.to_json());
        }
        v
    }

    /// Rebuilds a view through the same checked builders, against the
    /// given input type and function registry.
    pub fn from_json(v: &Json, input: &MapType, registry: Arc<Registry>) -> Result<ViewExpr> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Parse("a view node must be an object".into()))?;
        let mut own = obj.clone();
        let child = own.shift_remove("input");
        let op: Op = serde_json::from_value(Json::Object(own))?;
        match (op, child) {
            (Op::Input, None) => Ok(ViewExpr::input_with(input.clone(), registry)),
            (Op::Input, Some(_)) => Err(Error::Parse("input nodes take no input".into())),
            (_, None) => Err(Error::Parse("missing \"input\"".into())),
            (op, Some(c)) => ViewExpr::from_json(&c, input, registry)?.push(op),
        }
    }

    /// The tree with every literal erased; two views with equal shapes
    /// differ only in the literal values they compare against.
    pub fn shape(&self) -> Json {
        fn erase(v: &mut Json) {
            match v {
                Json::Object(o) => {
                    for (k, x) in o.iter_mut() {
                        if k == "lit" {
                            *x = Json::Null;
                        } else {
                            erase(x);
                        }
                    }
                }
                Json::Array(a) => a.iter_mut().for_each(erase),
                _ => {}
            }
        }
        let mut j = self.to_json();
        erase(&mut j);
        j
    }
}

pub(crate) fn scope<'a>(
    coll: &'a MapType,
    elem: &'a MapType,
    root: &'a MapType,
    registry: &'a Registry,
) -> expr::Scope<'a> {
    expr::Scope {
        elem,
        key_kind: coll.key_domain,
        key_policy: &coll.key_policy,
        root,
        registry,
    }
}
