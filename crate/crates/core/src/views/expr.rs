//! Predicates and scalar expressions over element maps.
//!
//! Expressions are plain data: attribute paths, literals and calls to
//! functions looked up by name in a [`Registry`]. A literal is only ever
//! compared as a value, never interpreted.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Domain, KeyPolicy, Map, MapPath, MapType, Scalar, ScalarKind, ScalarLit, Symbol, Value};

/// The pseudo-attribute naming an element's own key.
pub const KEY_ATTR: &str = "$key";

/// Attribute path inside an element; links and foreign keys are followed
/// to their targets.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyPath(pub Vec<Symbol>);

impl KeyPath {
    /// `"p/name"` follows attribute `p` into its target and reads `name`.
    pub fn parse(s: &str) -> KeyPath {
        KeyPath(s.split('/').map(Symbol::new).collect())
    }

    pub fn is_key(&self) -> bool {
        self.0.len() == 1 && self.0[0].as_str() == KEY_ATTR
    }
}

impl From<&str> for KeyPath {
    fn from(s: &str) -> Self {
        KeyPath::parse(s)
    }
}

impl fmt::Display for KeyPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.0.iter().map(|s| s.as_str()).collect();
        f.write_str(&parts.join("/"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operand {
    Attr(KeyPath),
    Lit(ScalarLit),
    Call(Symbol, Vec<Operand>),
}

impl Operand {
    pub fn attr(path: &str) -> Operand {
        Operand::Attr(KeyPath::parse(path))
    }

    pub fn lit(v: impl Into<Scalar>) -> Operand {
        Operand::Lit(ScalarLit(v.into()))
    }

    pub fn call(name: &str, args: Vec<Operand>) -> Operand {
        Operand::Call(Symbol::new(name), args)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    True,
    False,
    Cmp(Operand, CmpOp, Operand),
    And(Vec<Predicate>),
    Or(Vec<Predicate>),
    Not(Box<Predicate>),
    /// Holds when the attribute is assigned (optional attributes may be absent).
    Exists(KeyPath),
    /// A registered function returning a boolean.
    Call(Symbol, Vec<Operand>),
}

impl Predicate {
    pub fn cmp(l: Operand, op: CmpOp, r: Operand) -> Predicate {
        Predicate::Cmp(l, op, r)
    }

    /// `attr == literal`, the common case.
    pub fn eq(attr: &str, v: impl Into<Scalar>) -> Predicate {
        Predicate::Cmp(Operand::attr(attr), CmpOp::Eq, Operand::lit(v))
    }

    pub fn and(self, other: Predicate) -> Predicate {
        match self {
            Predicate::And(mut v) => {
                v.push(other);
                Predicate::And(v)
            }
            p => Predicate::And(vec![p, other]),
        }
    }

    pub fn negate(self) -> Predicate {
        Predicate::Not(Box::new(self))
    }
}

type NativeFn = dyn Fn(&[Scalar]) -> std::result::Result<Scalar, String> + Send + Sync;
type SigFn = dyn Fn(&[ScalarKind]) -> std::result::Result<ScalarKind, String> + Send + Sync;

/// A pure function callable from expressions. `signature` maps argument
/// kinds to the result kind or rejects them at construction time.
pub struct FunctionDef {
    pub name: Symbol,
    signature: Box<SigFn>,
    f: Box<NativeFn>,
}

impl fmt::Debug for FunctionDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fn {}", self.name)
    }
}

impl FunctionDef {
    pub fn new(
        name: &str,
        signature: impl Fn(&[ScalarKind]) -> std::result::Result<ScalarKind, String> + Send + Sync + 'static,
        f: impl Fn(&[Scalar]) -> std::result::Result<Scalar, String> + Send + Sync + 'static,
    ) -> FunctionDef {
        FunctionDef {
            name: Symbol::new(name),
            signature: Box::new(signature),
            f: Box::new(f),
        }
    }

    pub fn check(&self, args: &[ScalarKind]) -> Result<ScalarKind> {
        (self.signature)(args).map_err(|m| Error::TypeMismatch(format!("{}: {m}", self.name)))
    }

    pub fn call(&self, args: &[Scalar]) -> Result<Scalar> {
        (self.f)(args).map_err(|message| Error::FunctionFailed {
            name: self.name,
            message,
        })
    }
}

/// Host-registered functions, by name.
#[derive(Clone, Debug, Default)]
pub struct Registry {
    fns: HashMap<Symbol, Arc<FunctionDef>>,
}

fn arity(args: &[ScalarKind], n: usize) -> std::result::Result<(), String> {
    if args.len() == n {
        Ok(())
    } else {
        Err(format!("expected {n} arguments, got {}", args.len()))
    }
}

fn numeric_pair(args: &[ScalarKind]) -> std::result::Result<ScalarKind, String> {
    arity(args, 2)?;
    if !args[0].is_numeric() || args[0] != args[1] {
        return Err(format!("needs two numbers of one kind, got {} and {}", args[0], args[1]));
    }
    Ok(args[0])
}

fn arith(
    a: &[Scalar],
    i: fn(i64, i64) -> Option<i64>,
    f: fn(f64, f64) -> f64,
) -> std::result::Result<Scalar, String> {
    match (&a[0], &a[1]) {
        (Scalar::Int(x), Scalar::Int(y)) => i(*x, *y).map(Scalar::Int).ok_or_else(|| "integer overflow or division by zero".into()),
        (Scalar::Float(x), Scalar::Float(y)) => Ok(Scalar::Float(f(*x, *y))),
        _ => Err("numeric arguments expected".into()),
    }
}

impl Registry {
    pub fn empty() -> Registry {
        Registry::default()
    }

    /// Arithmetic, text and date helpers.
    pub fn builtins() -> Registry {
        let mut r = Registry::empty();
        r.register(FunctionDef::new("add", numeric_pair, |a| arith(a, i64::checked_add, |x, y| x + y)));
        r.register(FunctionDef::new("sub", numeric_pair, |a| arith(a, i64::checked_sub, |x, y| x - y)));
        r.register(FunctionDef::new("mul", numeric_pair, |a| arith(a, i64::checked_mul, |x, y| x * y)));
        r.register(FunctionDef::new("div", numeric_pair, |a| arith(a, i64::checked_div, |x, y| x / y)));
        r.register(FunctionDef::new(
            "neg",
            |k| {
                arity(k, 1)?;
                if k[0].is_numeric() {
                    Ok(k[0])
                } else {
                    Err(format!("cannot negate {}", k[0]))
                }
            },
            |a| match &a[0] {
                Scalar::Int(x) => x.checked_neg().map(Scalar::Int).ok_or_else(|| "overflow".into()),
                Scalar::Float(x) => Ok(Scalar::Float(-x)),
                _ => Err("numeric argument expected".into()),
            },
        ));
        r.register(FunctionDef::new(
            "concat",
            |_| Ok(ScalarKind::Text),
            |a| Ok(Scalar::text(&a.iter().map(Scalar::render).collect::<String>())),
        ));
        r.register(FunctionDef::new(
            "to_text",
            |k| arity(k, 1).map(|_| ScalarKind::Text),
            |a| Ok(Scalar::text(&a[0].render())),
        ));
        r.register(FunctionDef::new(
            "length",
            |k| {
                arity(k, 1)?;
                (k[0] == ScalarKind::Text).then_some(ScalarKind::Int).ok_or("text expected".into())
            },
            |a| Ok(Scalar::Int(a[0].as_str().map_or(0, |s| s.chars().count() as i64))),
        ));
        r.register(FunctionDef::new(
            "lower",
            |k| {
                arity(k, 1)?;
                (k[0] == ScalarKind::Text).then_some(ScalarKind::Text).ok_or("text expected".into())
            },
            |a| Ok(Scalar::text(&a[0].render().to_lowercase())),
        ));
        r.register(FunctionDef::new(
            "year",
            |k| {
                arity(k, 1)?;
                (k[0] == ScalarKind::Date).then_some(ScalarKind::Int).ok_or("date expected".into())
            },
            |a| match &a[0] {
                Scalar::Date(d) => Ok(Scalar::Int(chrono::Datelike::year(d) as i64)),
                _ => Err("date expected".into()),
            },
        ));
        r
    }

    pub fn register(&mut self, f: FunctionDef) {
        self.fns.insert(f.name, Arc::new(f));
    }

    pub fn get(&self, name: Symbol) -> Result<&Arc<FunctionDef>> {
        self.fns.get(&name).ok_or(Error::UnknownFunction(name))
    }
}

/// One traversal step of a compiled attribute path.
#[derive(Clone, Debug)]
pub(crate) struct Step {
    attr: Symbol,
    /// Set when the attribute holds a foreign-key scalar that must be looked
    /// up in the database to continue.
    fk_target: Option<MapPath>,
}

#[derive(Clone, Debug)]
pub(crate) enum COperand {
    Key,
    Path(Vec<Step>),
    Lit(Scalar),
    Call(Arc<FunctionDef>, Vec<COperand>),
}

#[derive(Clone, Debug)]
pub(crate) enum CPredicate {
    Const(bool),
    Cmp(COperand, CmpOp, COperand),
    And(Vec<CPredicate>),
    Or(Vec<CPredicate>),
    Not(Box<CPredicate>),
    Exists(Vec<Step>),
    Call(Arc<FunctionDef>, Vec<COperand>),
}

/// What an expression is checked against: the element type it reads, the
/// key policy of the map holding the elements, and the database type used
/// to follow links.
pub(crate) struct Scope<'a> {
    pub elem: &'a MapType,
    pub key_kind: Option<ScalarKind>,
    pub key_policy: &'a KeyPolicy,
    pub root: &'a MapType,
    pub registry: &'a Registry,
}

/// Static result of an operand: its scalar kind and whether it can be absent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Typed {
    pub kind: ScalarKind,
    pub optional: bool,
}

fn link_element<'a>(root: &'a MapType, target: &MapPath) -> Result<&'a MapType> {
    root.type_at(target.segments())
        .and_then(|t| t.element_type())
        .map(|a| a.as_ref())
        .ok_or_else(|| Error::UnresolvedDomainTarget(target.to_string()))
}

fn link_key_kind(root: &MapType, target: &MapPath) -> Result<ScalarKind> {
    let t = root
        .type_at(target.segments())
        .ok_or_else(|| Error::UnresolvedDomainTarget(target.to_string()))?;
    if t.key_policy.is_hidden() {
        return Err(Error::HiddenKey(format!("links into {target}")));
    }
    Ok(t.key_domain.unwrap_or(ScalarKind::Symbol))
}

impl Scope<'_> {
    pub fn path(&self, p: &KeyPath) -> Result<(Vec<Step>, Typed)> {
        if p.0.iter().any(|s| s.as_str() == KEY_ATTR) {
            if !p.is_key() {
                return Err(Error::InvalidView(format!("{KEY_ATTR} must stand alone in {p}")));
            }
            if self.key_policy.is_hidden() {
                return Err(Error::HiddenKey(format!("{KEY_ATTR} names an engine-managed identity")));
            }
            let kind = self.key_kind.unwrap_or(ScalarKind::Symbol);
            return Ok((
                Vec::new(),
                Typed {
                    kind,
                    optional: false,
                },
            ));
        }
        let mut cur = self.elem;
        let mut steps = Vec::with_capacity(p.0.len());
        let mut optional = false;
        for (i, seg) in p.0.iter().enumerate() {
            let last = i + 1 == p.0.len();
            let e = cur
                .entry(*seg)
                .ok_or_else(|| Error::UnknownKey(format!("{seg} in {p}")))?;
            optional |= e.optional;
            match &e.domain {
                Domain::Scalar(k) => {
                    if !last {
                        return Err(Error::TypeMismatch(format!("{seg} is a {k}, cannot descend in {p}")));
                    }
                    steps.push(Step {
                        attr: *seg,
                        fk_target: None,
                    });
                    return Ok((steps, Typed { kind: *k, optional }));
                }
                Domain::ForeignKey { target, key_kind } => {
                    steps.push(Step {
                        attr: *seg,
                        fk_target: Some(target.clone()),
                    });
                    if last {
                        return Ok((
                            steps,
                            Typed {
                                kind: *key_kind,
                                optional,
                            },
                        ));
                    }
                    cur = link_element(self.root, target)?;
                }
                Domain::Enumeration { target, fk_kind } => {
                    steps.push(Step {
                        attr: *seg,
                        fk_target: None,
                    });
                    if last {
                        let kind = match fk_kind {
                            Some(k) => *k,
                            None => link_key_kind(self.root, target)?,
                        };
                        return Ok((steps, Typed { kind, optional }));
                    }
                    cur = link_element(self.root, target)?;
                }
                Domain::MapType(t) => {
                    if last {
                        return Err(Error::TypeMismatch(format!("{p} names a map, not a scalar")));
                    }
                    steps.push(Step {
                        attr: *seg,
                        fk_target: None,
                    });
                    cur = t;
                }
            }
        }
        Err(Error::InvalidView("empty attribute path".into()))
    }

    pub fn operand(&self, o: &Operand) -> Result<(COperand, Typed)> {
        match o {
            Operand::Attr(p) => {
                let (steps, t) = self.path(p)?;
                if steps.is_empty() {
                    Ok((COperand::Key, t))
                } else {
                    Ok((COperand::Path(steps), t))
                }
            }
            Operand::Lit(l) => Ok((
                COperand::Lit(l.0.clone()),
                Typed {
                    kind: l.0.kind(),
                    optional: false,
                },
            )),
            Operand::Call(name, args) => {
                let f = self.registry.get(*name)?.clone();
                let mut cargs = Vec::with_capacity(args.len());
                let mut kinds = Vec::with_capacity(args.len());
                let mut optional = false;
                for a in args {
                    let (c, t) = self.operand(a)?;
                    optional |= t.optional;
                    kinds.push(t.kind);
                    cargs.push(c);
                }
                let kind = f.check(&kinds)?;
                Ok((COperand::Call(f, cargs), Typed { kind, optional }))
            }
        }
    }

    pub fn predicate(&self, p: &Predicate) -> Result<CPredicate> {
        Ok(match p {
            Predicate::True => CPredicate::Const(true),
            Predicate::False => CPredicate::Const(false),
            Predicate::Cmp(l, op, r) => {
                let (cl, tl) = self.operand(l)?;
                let (cr, tr) = self.operand(r)?;
                if tl.kind != tr.kind {
                    return Err(Error::TypeMismatch(format!(
                        "cannot compare {} with {} in {l:?} {op:?} {r:?}",
                        tl.kind, tr.kind
                    )));
                }
                CPredicate::Cmp(cl, *op, cr)
            }
            Predicate::And(v) => CPredicate::And(v.iter().map(|p| self.predicate(p)).collect::<Result<_>>()?),
            Predicate::Or(v) => CPredicate::Or(v.iter().map(|p| self.predicate(p)).collect::<Result<_>>()?),
            Predicate::Not(p) => CPredicate::Not(Box::new(self.predicate(p)?)),
            Predicate::Exists(path) => {
                let (steps, _) = self.path(path)?;
                CPredicate::Exists(steps)
            }
            Predicate::Call(name, args) => {
                let (c, t) = self.operand(&Operand::Call(*name, args.clone()))?;
                if t.kind != ScalarKind::Bool {
                    return Err(Error::TypeMismatch(format!("{name} does not return a boolean")));
                }
                match c {
                    COperand::Call(f, a) => CPredicate::Call(f, a),
                    _ => unreachable!("call compiles to a call"),
                }
            }
        })
    }
}

/// Runtime inputs: the element's key and value, and the database map
/// foreign keys are looked up in.
pub(crate) struct Row<'a> {
    pub key: &'a Scalar,
    pub value: &'a Value,
    pub root: &'a Map,
}

fn walk<'a>(steps: &[Step], row: &Row<'a>) -> Option<&'a Value> {
    let mut cur = row.value.deref_map()?;
    for (i, s) in steps.iter().enumerate() {
        let v = cur.attr(s.attr)?;
        if i + 1 == steps.len() {
            return Some(v);
        }
        cur = match (v, &s.fk_target) {
            (Value::Scalar(k), Some(target)) => row.root.at_path(target.segments())?.get(k)?.deref_map()?,
            (other, _) => other.deref_map()?,
        };
    }
    None
}

impl COperand {
    pub fn eval(&self, row: &Row<'_>) -> Result<Option<Scalar>> {
        match self {
            COperand::Key => Ok(Some(row.key.clone())),
            COperand::Lit(s) => Ok(Some(s.clone())),
            COperand::Path(steps) => Ok(walk(steps, row).and_then(|v| match v {
                Value::Scalar(s) => Some(s.clone()),
                Value::Ref(r) => Some(r.key().clone()),
                Value::Map(_) => None,
            })),
            COperand::Call(f, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    match a.eval(row)? {
                        Some(v) => vals.push(v),
                        None => return Ok(None),
                    }
                }
                f.call(&vals).map(Some)
            }
        }
    }
}

impl CPredicate {
    /// Comparisons over an absent operand are false.
    pub fn holds(&self, row: &Row<'_>) -> Result<bool> {
        Ok(match self {
            CPredicate::Const(b) => *b,
            CPredicate::Cmp(l, op, r) => {
                let (Some(a), Some(b)) = (l.eval(row)?, r.eval(row)?) else {
                    return Ok(false);
                };
                let o = a.compare(&b)?;
                match op {
                    CmpOp::Eq => o.is_eq(),
                    CmpOp::Ne => o.is_ne(),
                    CmpOp::Lt => o.is_lt(),
                    CmpOp::Le => o.is_le(),
                    CmpOp::Gt => o.is_gt(),
                    CmpOp::Ge => o.is_ge(),
                }
            }
            CPredicate::And(v) => {
                for p in v {
                    if !p.holds(row)? {
                        return Ok(false);
                    }
                }
                true
            }
            CPredicate::Or(v) => {
                for p in v {
                    if p.holds(row)? {
                        return Ok(true);
                    }
                }
                false
            }
            CPredicate::Not(p) => !p.holds(row)?,
            CPredicate::Exists(steps) => walk(steps, row).is_some(),
            CPredicate::Call(f, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    match a.eval(row)? {
                        Some(v) => vals.push(v),
                        None => return Ok(false),
                    }
                }
                f.call(&vals)? == Scalar::Bool(true)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::fixtures::{profs_rmt, running_example, Encoding};

    fn scope<'a>(elem: &'a MapType, root: &'a MapType, reg: &'a Registry, policy: &'a KeyPolicy) -> Scope<'a> {
        Scope {
            elem,
            key_kind: Some(ScalarKind::Int),
            key_policy: policy,
            root,
            registry: reg,
        }
    }

    #[test]
    fn comparisons_are_type_checked() {
        let reg = Registry::builtins();
        let elem = profs_rmt();
        let root = MapType::default();
        let pol = KeyPolicy::Declared;
        let s = scope(&elem, &root, &reg, &pol);
        assert!(s.predicate(&Predicate::eq("age", 25i64)).is_ok());
        assert!(matches!(s.predicate(&Predicate::eq("age", "25")), Err(Error::TypeMismatch(_))));
        assert!(matches!(s.predicate(&Predicate::eq("shoe", 1i64)), Err(Error::UnknownKey(_))));
        let bad_call = Operand::call("add", vec![Operand::attr("age"), Operand::attr("name")]);
        assert!(s.operand(&bad_call).is_err());
        assert!(matches!(
            s.operand(&Operand::call("nope", vec![])),
            Err(Error::UnknownFunction(_))
        ));
    }

    #[test]
    fn hidden_keys_are_rejected() {
        let reg = Registry::builtins();
        let elem = profs_rmt();
        let root = MapType::default();
        let pol = KeyPolicy::Surrogate;
        let s = scope(&elem, &root, &reg, &pol);
        assert!(matches!(s.operand(&Operand::attr(KEY_ATTR)), Err(Error::HiddenKey(_))));
    }

    #[test]
    fn paths_follow_links_in_both_encodings() {
        let reg = Registry::builtins();
        for enc in [Encoding::ForeignKey, Encoding::Link] {
            let db = running_example(enc);
            let root = db.schema().as_map_type();
            let give_t = root.type_at(&[Symbol::new("give")]).unwrap().clone();
            let s = Scope {
                elem: give_t.element_type().unwrap(),
                key_kind: give_t.key_domain,
                key_policy: &give_t.key_policy,
                root: &root,
                registry: &reg,
            };
            let (op, t) = s.operand(&Operand::attr("p/name")).unwrap();
            assert_eq!(t.kind, ScalarKind::Text);
            let give = db.relation("give").unwrap();
            let names: Vec<Scalar> = give
                .iter()
                .map(|(k, v)| {
                    op.eval(&Row {
                        key: &k.value,
                        value: v,
                        root: db.data(),
                    })
                    .unwrap()
                    .unwrap()
                })
                .collect();
            assert_eq!(names, ["Luke", "Horst", "Luke", "Horst"].map(Scalar::text));
        }
    }

    #[test]
    fn builtins_compute() {
        let reg = Registry::builtins();
        let add = reg.get(Symbol::new("add")).unwrap();
        assert_eq!(add.call(&[Scalar::Int(2), Scalar::Int(3)]).unwrap(), Scalar::Int(5));
        let div = reg.get(Symbol::new("div")).unwrap();
        assert!(matches!(
            div.call(&[Scalar::Int(1), Scalar::Int(0)]),
            Err(Error::FunctionFailed { .. })
        ));
        let concat = reg.get(Symbol::new("concat")).unwrap();
        assert_eq!(
            concat.call(&[Scalar::text("Luke"), Scalar::text("-"), Scalar::Int(42)]).unwrap(),
            Scalar::text("Luke-42")
        );
    }
}
