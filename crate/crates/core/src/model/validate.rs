use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{keys::project_key, Domain, KeyPolicy, Map, MapPath, MapType, Value};
use crate::error::{Error, Result};

/// Resolves link targets (enumeration and foreign-key domains) to live maps.
pub trait Resolver {
    fn resolve(&self, path: &MapPath) -> Option<&Map>;
}

/// Resolves nothing; validating a type with links against it fails with
/// "unresolved domain target".
pub struct NoTargets;

impl Resolver for NoTargets {
    fn resolve(&self, _: &MapPath) -> Option<&Map> {
        None
    }
}

impl Resolver for Map {
    fn resolve(&self, path: &MapPath) -> Option<&Map> {
        self.at_path(path.segments())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    Cn,
    #[serde(rename = "CKD")]
    Ckd,
    #[serde(rename = "CVD")]
    Cvd,
    #[serde(rename = "CK")]
    Ck,
    #[serde(rename = "CV")]
    Cv,
    #[serde(rename = "referential")]
    Referential,
    #[serde(rename = "dangling")]
    DanglingReference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Location of the offending map, e.g. `/give/3`.
    pub at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    pub expected: String,
    pub actual: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            ViolationKind::Referential => "referential violation".to_owned(),
            ViolationKind::DanglingReference => "dangling reference".to_owned(),
            k => format!("{k:?} violation"),
        };
        write!(f, "{what} at {}", if self.at.is_empty() { "/" } else { &self.at })?;
        if let Some(k) = &self.key {
            write!(f, " key {k}")?;
        }
        write!(f, ": expected {}, found {}", self.expected, self.actual)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub conforms: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok() -> Self {
        ValidationReport {
            conforms: true,
            violations: Vec::new(),
        }
    }

    pub fn push(&mut self, v: Violation) {
        self.conforms = false;
        self.violations.push(v);
    }

    pub fn merge(&mut self, other: ValidationReport) {
        for v in other.violations {
            self.push(v);
        }
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    pub fn into_result(self) -> Result<()> {
        if self.conforms {
            Ok(())
        } else {
            Err(Error::NonConforming(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.conforms {
            return f.write_str("conforms");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Checks `m` against `t` without link resolution.
pub fn validate(m: &Map, t: &MapType) -> Result<ValidationReport> {
    validate_in(m, t, &NoTargets)
}

/// Checks `m` against `t`, resolving link domains through `ctx`.
/// Non-conformance is reported; unresolvable link targets are an error.
pub fn validate_in(m: &Map, t: &MapType, ctx: &dyn Resolver) -> Result<ValidationReport> {
    let mut targets = HashMap::new();
    collect_targets(t, ctx, &mut targets)?;
    let mut checker = Checker {
        targets,
        report: ValidationReport::ok(),
        loc: Vec::new(),
    };
    checker.check_map(m, t);
    Ok(checker.report)
}

fn collect_targets<'a>(
    t: &MapType,
    ctx: &'a dyn Resolver,
    out: &mut HashMap<MapPath, &'a Map>,
) -> Result<()> {
    for d in t.entries.iter().map(|e| &e.domain).chain(t.value_domain.iter()) {
        match d {
            Domain::MapType(inner) => collect_targets(inner, ctx, out)?,
            Domain::Enumeration { target, .. } | Domain::ForeignKey { target, .. } => {
                if !out.contains_key(target) {
                    let m = ctx
                        .resolve(target)
                        .ok_or_else(|| Error::UnresolvedDomainTarget(target.to_string()))?;
                    out.insert(target.clone(), m);
                }
            }
            Domain::Scalar(_) => {}
        }
    }
    Ok(())
}

/// Whether a link's cached target still is the live entry.
pub(crate) fn link_is_current(cached: &Value, live: &Value) -> bool {
    match (cached, live) {
        (Value::Map(a), Value::Map(b)) => Arc::ptr_eq(a, b) || a == b,
        (a, b) => a == b,
    }
}

struct Checker<'a> {
    targets: HashMap<MapPath, &'a Map>,
    report: ValidationReport,
    loc: Vec<String>,
}

impl Checker<'_> {
    fn at(&self) -> String {
        self.loc.iter().map(|s| format!("/{s}")).collect()
    }

    fn violation(&mut self, kind: ViolationKind, key: Option<String>, expected: String, actual: String) {
        let at = self.at();
        self.report.push(Violation {
            kind,
            at,
            key,
            expected,
            actual,
        });
    }

    fn check_map(&mut self, m: &Map, t: &MapType) {
        if let Some(kind) = t.key_domain {
            for k in m.keys() {
                if k.value.kind() != kind {
                    self.violation(
                        ViolationKind::Ckd,
                        Some(k.value.render()),
                        kind.to_string(),
                        k.value.kind().to_string(),
                    );
                }
            }
        }

        if let Some(n) = t.n {
            let count = m.len();
            let has_optional = t.entries.iter().any(|e| e.optional);
            let ok = count == n || (has_optional && t.mandatory_count() <= count && count <= n);
            if !ok {
                self.violation(ViolationKind::Cn, None, format!("{n} assignments"), count.to_string());
            }
        }

        if !t.entries.is_empty() {
            for e in &t.entries {
                match m.attr(e.key) {
                    Some(v) => {
                        self.loc.push(e.key.to_string());
                        self.check_value(v, &e.domain, &e.key.to_string());
                        self.loc.pop();
                    }
                    None if !e.optional => self.violation(
                        ViolationKind::Ck,
                        Some(e.key.to_string()),
                        "assigned".into(),
                        "missing".into(),
                    ),
                    None => {}
                }
            }
            for k in m.keys() {
                let declared = k.value.as_symbol().is_some_and(|s| t.entry(s).is_some());
                if !declared {
                    match &t.value_domain {
                        Some(d) => {
                            let v = m.get(&k.value).expect("key from iteration");
                            self.loc.push(k.value.render());
                            self.check_value(v, d, &k.value.render());
                            self.loc.pop();
                        }
                        None => self.violation(
                            ViolationKind::Ck,
                            Some(k.value.render()),
                            "a declared key".into(),
                            "undeclared key".into(),
                        ),
                    }
                }
            }
        } else if let Some(d) = &t.value_domain {
            for (k, v) in m.iter() {
                self.loc.push(k.value.render());
                self.check_value(v, d, &k.value.render());
                self.loc.pop();
            }
        }

        for c in &t.constraints {
            for (k, v) in m.iter() {
                if c.key.is_some_and(|ck| k.value.as_symbol() != Some(ck)) {
                    continue;
                }
                let ok = match v {
                    Value::Scalar(s) => c.holds(s),
                    _ => false,
                };
                if !ok {
                    self.violation(
                        ViolationKind::Cv,
                        Some(k.value.render()),
                        format!("{:?}", c.check),
                        format!("{v:?}"),
                    );
                }
            }
        }

        if let KeyPolicy::Computed(p) = &t.key_policy {
            for (k, v) in m.iter() {
                match project_key(p, v) {
                    Ok(expected) if expected.value == k.value => {}
                    Ok(expected) => self.violation(
                        ViolationKind::Ck,
                        Some(k.value.render()),
                        format!("computed key {}", expected.value),
                        k.value.to_string(),
                    ),
                    Err(e) => self.violation(
                        ViolationKind::Ck,
                        Some(k.value.render()),
                        format!("computable key ({p:?})"),
                        e.to_string(),
                    ),
                }
            }
        }
    }

    fn check_value(&mut self, v: &Value, d: &Domain, key: &str) {
        match d {
            Domain::Scalar(kind) => match v {
                Value::Scalar(s) if s.kind() == *kind => {}
                other => self.cvd(key, kind.to_string(), other),
            },
            Domain::MapType(t) => match v {
                Value::Map(m) => self.check_map(m, t),
                other => self.cvd(key, "embedded map".into(), other),
            },
            Domain::Enumeration { target, .. } => {
                let live = self.targets[target];
                match v {
                    Value::Ref(r) if r.path() == target => {
                        let current = live.get(r.key()).is_some_and(|lv| link_is_current(r.target(), lv));
                        if !current {
                            self.violation(
                                ViolationKind::DanglingReference,
                                Some(key.to_owned()),
                                format!("entry of {target}"),
                                format!("{r:?}"),
                            );
                        }
                    }
                    Value::Ref(r) => self.violation(
                        ViolationKind::Cvd,
                        Some(key.to_owned()),
                        format!("link into {target}"),
                        format!("link into {}", r.path()),
                    ),
                    Value::Map(m) => {
                        let member = live.values().iter().any(|lv| lv.as_map() == Some(m.as_ref()));
                        if !member {
                            self.violation(
                                ViolationKind::DanglingReference,
                                Some(key.to_owned()),
                                format!("entry of {target}"),
                                "a map not assigned in the target".into(),
                            );
                        }
                    }
                    other => self.cvd(key, format!("entry of {target}"), other),
                }
            }
            Domain::ForeignKey { target, key_kind } => match v {
                Value::Scalar(s) if s.kind() == *key_kind => {
                    if !self.targets[target].contains_key(s) {
                        self.violation(
                            ViolationKind::Referential,
                            Some(key.to_owned()),
                            format!("key of {target}"),
                            s.to_string(),
                        );
                    }
                }
                other => self.cvd(key, format!("{key_kind} key of {target}"), other),
            },
        }
    }

    fn cvd(&mut self, key: &str, expected: String, actual: &Value) {
        let actual = match actual {
            Value::Scalar(s) => s.kind().to_string(),
            Value::Map(_) => "map".to_owned(),
            Value::Ref(r) => format!("link into {}", r.path()),
        };
        self.violation(ViolationKind::Cvd, Some(key.to_owned()), expected, actual);
    }
}

/// The enumeration domain defined by the map registered at `path`.
/// Membership is checked against the live map whenever it is used.
pub fn enumeration_of(ctx: &dyn Resolver, path: &MapPath) -> Result<Domain> {
    ctx.resolve(path)
        .ok_or_else(|| Error::UnresolvedDomainTarget(path.to_string()))?;
    Ok(Domain::enumeration(path.clone()))
}

impl Domain {
    /// Membership of `v` in the domain, resolving links through `ctx`.
    pub fn admits(&self, v: &Value, ctx: &dyn Resolver) -> Result<bool> {
        let t = MapType {
            entries: vec![super::EntryType {
                key: super::Symbol::new("v"),
                domain: self.clone(),
                optional: false,
            }],
            ..MapType::default()
        };
        let probe = Map::tuple([("v", v.clone())]);
        Ok(validate_in(&probe, &t, ctx)?.conforms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EntryType, Key, KeyPolicy, Projection, Ref, Scalar, ScalarKind, Symbol};

    fn professors2() -> MapType {
        MapType::rmt([
            EntryType::new("id", Domain::int()),
            EntryType::new("name", Domain::text()),
            EntryType::new("age", Domain::int()),
            EntryType::optional("dob", Domain::Scalar(ScalarKind::Date)),
        ])
    }

    fn luke() -> Map {
        Map::tuple([
            ("id", 42i64.into()),
            ("name", "Luke".into()),
            ("age", 46i64.into()),
            ("dob", Scalar::date("1979-06-21").unwrap().into()),
        ])
    }

    fn horst() -> Map {
        Map::tuple([("id", 31i64.into()), ("name", "Horst".into()), ("age", 25i64.into())])
    }

    #[test]
    fn professors2_accepts_with_and_without_dob() {
        assert!(validate(&luke(), &professors2()).unwrap().conforms);
        assert!(validate(&horst(), &professors2()).unwrap().conforms);
    }

    #[test]
    fn empty_map_misses_mandatory_key() {
        let t = MapType::rmt([EntryType::new("id", Domain::int())]);
        let r = validate(&Map::new(), &t).unwrap();
        assert!(!r.conforms);
        assert!(r.has(ViolationKind::Ck));
        assert!(r.violations.iter().any(|v| v.key.as_deref() == Some("id")));
    }

    #[test]
    fn wrong_value_domain_names_expected_and_actual() {
        let m = Map::tuple([("id", "x".into()), ("name", "Luke".into()), ("age", 1i64.into())]);
        let r = validate(&m, &professors2()).unwrap();
        let v = r.violations.iter().find(|v| v.kind == ViolationKind::Cvd).unwrap();
        assert_eq!(v.key.as_deref(), Some("id"));
        assert_eq!(v.expected, "int");
        assert_eq!(v.actual, "str");
    }

    #[test]
    fn undeclared_key_and_cardinality() {
        let mut m = horst();
        m.set(Key::sym("shoe_size"), 44i64.into());
        let r = validate(&m, &professors2()).unwrap();
        assert!(r.has(ViolationKind::Ck));
        assert!(!r.has(ViolationKind::Cn));
        let mut five = luke();
        five.set(Key::sym("shoe_size"), 44i64.into());
        assert!(validate(&five, &professors2()).unwrap().has(ViolationKind::Cn));
    }

    #[test]
    fn computed_keys_are_checked() {
        let rel_t = MapType::rhomt(
            Arc::new(professors2()),
            ScalarKind::Int,
            KeyPolicy::Computed(Projection::Attr(Symbol::new("id"))),
        );
        let mut rel = Map::new();
        rel.insert(Key::computed(42i64), Value::map(luke())).unwrap();
        rel.insert(Key::computed(31i64), Value::map(horst())).unwrap();
        assert!(validate(&rel, &rel_t).unwrap().conforms);
        rel.insert(Key::computed(7i64), Value::map(horst())).unwrap();
        assert!(validate(&rel, &rel_t).unwrap().has(ViolationKind::Ck));
    }

    #[test]
    fn value_constraints() {
        use crate::model::{Check, ScalarLit, ValueConstraint};
        let t = professors2().with_constraint(ValueConstraint {
            key: Some(Symbol::new("age")),
            check: Check::Range {
                min: Some(ScalarLit(Scalar::Int(0))),
                max: Some(ScalarLit(Scalar::Int(130))),
            },
        });
        assert!(validate(&horst(), &t).unwrap().conforms);
        let mut old = horst();
        old.set(Key::sym("age"), 200i64.into());
        assert!(validate(&old, &t).unwrap().has(ViolationKind::Cv));
    }

    fn db_with_profs() -> Map {
        let mut profs = Map::new();
        profs.insert(Key::computed(42i64), Value::map(luke())).unwrap();
        profs.insert(Key::computed(31i64), Value::map(horst())).unwrap();
        Map::tuple([("Professors", Value::map(profs))])
    }

    #[test]
    fn links_need_a_resolvable_target() {
        let t = MapType::rmt([EntryType::new("p", Domain::enumeration("Professors"))]);
        let m = Map::tuple([("p", 1i64.into())]);
        assert!(matches!(validate(&m, &t), Err(Error::UnresolvedDomainTarget(_))));
    }

    #[test]
    fn foreign_keys_and_links() {
        let db = db_with_profs();
        let fk = MapType::rmt([EntryType::new("p", Domain::foreign_key("Professors", ScalarKind::Int))]);
        assert!(validate_in(&Map::tuple([("p", 42i64.into())]), &fk, &db).unwrap().conforms);
        let r = validate_in(&Map::tuple([("p", 99i64.into())]), &fk, &db).unwrap();
        assert!(r.has(ViolationKind::Referential));

        let en = MapType::rmt([EntryType::new("p", Domain::enumeration("Professors"))]);
        let live = db.at_path(&[Symbol::new("Professors")]).unwrap().get(&Scalar::Int(42)).unwrap().clone();
        let good = Ref::new(MapPath::from("Professors"), Scalar::Int(42), live);
        assert!(validate_in(&Map::tuple([("p", good.into())]), &en, &db).unwrap().conforms);
        let bad = Ref::new(MapPath::from("Professors"), Scalar::Int(7), Value::map(horst()));
        let r = validate_in(&Map::tuple([("p", bad.into())]), &en, &db).unwrap();
        assert!(r.has(ViolationKind::DanglingReference));
        let stranger = Map::tuple([("id", 1i64.into())]);
        let r = validate_in(&Map::tuple([("p", Value::map(stranger))]), &en, &db).unwrap();
        assert!(r.has(ViolationKind::DanglingReference));
    }

    #[test]
    fn enumeration_tracks_the_live_map() {
        let mut db = db_with_profs();
        let path = MapPath::from("Professors");
        let dom = enumeration_of(&db, &path).unwrap();
        let ada = Map::tuple([("id", 50i64.into()), ("name", "Ada".into()), ("age", 36i64.into())]);
        assert!(!dom.admits(&Value::map(ada.clone()), &db).unwrap());
        db = db
            .update_at(&[Symbol::new("Professors")], &mut |p| {
                let mut p = p.clone();
                p.insert(Key::computed(50i64), Value::map(ada.clone()))?;
                Ok(p)
            })
            .unwrap();
        assert!(dom.admits(&Value::map(ada), &db).unwrap());
        assert!(dom.admits(&Value::map(horst()), &db).unwrap());
    }

    #[test]
    fn empty_enumeration_admits_nothing() {
        let db = Map::tuple([("Empty", Value::map(Map::new()))]);
        let dom = enumeration_of(&db, &MapPath::from("Empty")).unwrap();
        assert!(!dom.admits(&Value::map(horst()), &db).unwrap());
        assert!(!dom.admits(&Value::from(1i64), &db).unwrap());
        assert!(enumeration_of(&db, &MapPath::from("Nope")).is_err());
    }
}
