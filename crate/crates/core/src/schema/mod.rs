//! Database schemas and databases, link resolution, and model classifiers.

mod classify;
pub mod fixtures;
mod load;
mod swizzle;

use std::collections::HashSet;
use std::sync::Arc;

use indexmap::IndexMap;
use serde_json::{json, Value as Json};

use crate::error::{Error, Result};
use crate::json::{self, TypeRegistry};
use crate::model::{validate_in, Domain, Key, Map, MapPath, MapType, Symbol, ValidationReport, Value};

pub use classify::{classify_database, classify_type, ModelClass, RelClass};
pub use load::{load_database, load_records, record_to_value, LoadedRelation, RecordSource};
pub use swizzle::{relink, relink_changed, swizzle, unswizzle, Linker};
pub(crate) use swizzle::{rewrite_link_domains, rewrite_links};

/// Named relation types plus a registry of reusable named types.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatabaseSchema {
    relations: IndexMap<Symbol, Arc<MapType>>,
    types: TypeRegistryView,
}

/// Registry wrapper so that schemas compare by their relation types only.
#[derive(Clone, Debug, Default)]
struct TypeRegistryView(TypeRegistry);

impl PartialEq for TypeRegistryView {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl DatabaseSchema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_type(mut self, name: &str, t: Arc<MapType>) -> Self {
        self.types.0.register(name, t);
        self
    }

    pub fn with_relation(mut self, name: &str, t: Arc<MapType>) -> Self {
        self.relations.insert(Symbol::new(name), t);
        self
    }

    pub fn insert_relation(&mut self, name: Symbol, t: Arc<MapType>) {
        self.relations.insert(name, t);
    }

    pub fn remove_relation(&mut self, name: Symbol) -> Option<Arc<MapType>> {
        self.relations.shift_remove(&name)
    }

    pub fn relation(&self, name: Symbol) -> Option<&Arc<MapType>> {
        self.relations.get(&name)
    }

    pub fn relations(&self) -> impl ExactSizeIterator<Item = (Symbol, &Arc<MapType>)> {
        self.relations.iter().map(|(k, v)| (*k, v))
    }

    pub fn names(&self) -> Vec<Symbol> {
        self.relations.keys().copied().collect()
    }

    pub fn types(&self) -> &TypeRegistry {
        &self.types.0
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    /// The schema as a map type: a record of relation types.
    pub fn as_map_type(&self) -> MapType {
        MapType::record(self.relations.iter().map(|(k, t)| (*k, t.clone())))
    }

    pub fn from_map_type(t: &MapType) -> Result<DatabaseSchema> {
        let mut s = DatabaseSchema::new();
        for e in &t.entries {
            let rel = e
                .domain
                .as_map_type()
                .ok_or_else(|| Error::InvalidSchema(format!("{} is not a map-typed entry", e.key)))?;
            s.relations.insert(e.key, rel.clone());
        }
        Ok(s)
    }

    /// Relations in an order where every link target precedes its sources.
    pub fn link_order(&self) -> Result<Vec<Symbol>> {
        let deps: IndexMap<Symbol, Vec<Symbol>> = self
            .relations
            .iter()
            .map(|(k, t)| {
                let mut d: Vec<Symbol> = link_targets(t)
                    .into_iter()
                    .filter_map(|p| p.segments().first().copied())
                    .filter(|s| s != k && self.relations.contains_key(s))
                    .collect();
                d.dedup();
                (*k, d)
            })
            .collect();
        for (k, t) in &self.relations {
            if link_targets(t).iter().any(|p| p.segments().first() == Some(k)) {
                return Err(Error::CyclicSchemaUnsupported(format!("{k} links to itself")));
            }
        }
        let mut done = HashSet::new();
        let mut out = Vec::with_capacity(deps.len());
        let mut visiting = HashSet::new();
        fn visit(
            n: Symbol,
            deps: &IndexMap<Symbol, Vec<Symbol>>,
            visiting: &mut HashSet<Symbol>,
            done: &mut HashSet<Symbol>,
            out: &mut Vec<Symbol>,
        ) -> Result<()> {
            if done.contains(&n) {
                return Ok(());
            }
            if !visiting.insert(n) {
                return Err(Error::CyclicSchemaUnsupported(format!("link cycle through {n}")));
            }
            for d in &deps[&n] {
                visit(*d, deps, visiting, done, out)?;
            }
            visiting.remove(&n);
            done.insert(n);
            out.push(n);
            Ok(())
        }
        for n in deps.keys() {
            visit(*n, &deps, &mut visiting, &mut done, &mut out)?;
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Json {
        let relations: serde_json::Map<String, Json> = self
            .relations
            .iter()
            .map(|(k, t)| (k.to_string(), serde_json::to_value(t.as_ref()).expect("serialize")))
            .collect();
        json!({ "types": self.types.0.to_json(), "relations": relations })
    }

    /// Reads `{"types": {..}, "relations": {..}}`. Relation definitions and
    /// nested `{"map": ..}` domains may name registered types.
    pub fn from_json(v: &Json) -> Result<DatabaseSchema> {
        let v = v.get("$schema").unwrap_or(v);
        let mut types = match v.get("types") {
            Some(t) => TypeRegistry::from_json(t)?,
            None => TypeRegistry::new(),
        };
        let rels = match v.get("relations") {
            Some(Json::Object(o)) => o,
            Some(_) => return Err(Error::Parse("relations must be an object".into())),
            None => return Err(Error::Parse("schema needs a relations object".into())),
        };
        let mut relations = IndexMap::new();
        for (name, def) in rels {
            let t = match def {
                Json::String(tn) => types
                    .get(Symbol::new(tn))
                    .cloned()
                    .ok_or_else(|| Error::InvalidSchema(format!("unknown type {tn}")))?,
                other => Arc::new(types.resolve_json(other)?),
            };
            relations.insert(Symbol::new(name), t);
        }
        Ok(DatabaseSchema {
            relations,
            types: TypeRegistryView(types),
        })
    }
}

/// Every link target (enumeration or foreign key) reachable in `t`.
pub fn link_targets(t: &MapType) -> Vec<MapPath> {
    fn walk(t: &MapType, out: &mut Vec<MapPath>) {
        for d in t.entries.iter().map(|e| &e.domain).chain(t.value_domain.iter()) {
            match d {
                Domain::MapType(inner) => walk(inner, out),
                Domain::Enumeration { target, .. } | Domain::ForeignKey { target, .. } => {
                    if !out.contains(target) {
                        out.push(target.clone())
                    }
                }
                Domain::Scalar(_) => {}
            }
        }
    }
    let mut out = Vec::new();
    walk(t, &mut out);
    out
}

/// A map governed by a database schema. Cheap to clone; relation maps are
/// shared between versions until rewritten.
#[derive(Clone, Debug)]
pub struct Database {
    schema: Arc<DatabaseSchema>,
    data: Arc<Map>,
}

impl PartialEq for Database {
    fn eq(&self, other: &Self) -> bool {
        (Arc::ptr_eq(&self.schema, &other.schema) || self.schema == other.schema)
            && (Arc::ptr_eq(&self.data, &other.data) || self.data == other.data)
    }
}

impl Database {
    pub fn new(schema: Arc<DatabaseSchema>, data: Map) -> Database {
        Database {
            schema,
            data: Arc::new(data),
        }
    }

    /// A database with an empty map for every relation of the schema.
    pub fn empty(schema: Arc<DatabaseSchema>) -> Database {
        let data = Map::tuple(schema.relations().map(|(k, _)| (k.as_str(), Value::map(Map::new()))));
        Database::new(schema, data)
    }

    pub fn schema(&self) -> &Arc<DatabaseSchema> {
        &self.schema
    }

    pub fn data(&self) -> &Map {
        &self.data
    }

    pub fn data_arc(&self) -> &Arc<Map> {
        &self.data
    }

    pub fn relation(&self, name: impl Into<Symbol>) -> Option<&Map> {
        self.data.attr(name.into()).and_then(Value::as_map)
    }

    pub fn relation_arc(&self, name: Symbol) -> Option<&Arc<Map>> {
        match self.data.attr(name) {
            Some(Value::Map(m)) => Some(m),
            _ => None,
        }
    }

    pub fn with_relation(&self, name: Symbol, rel: Map) -> Database {
        self.with_relation_arc(name, Arc::new(rel))
    }

    pub fn with_relation_arc(&self, name: Symbol, rel: Arc<Map>) -> Database {
        let mut data = (*self.data).clone();
        data.set(Key::from(name), Value::Map(rel));
        Database {
            schema: self.schema.clone(),
            data: Arc::new(data),
        }
    }

    pub fn with_schema(&self, schema: Arc<DatabaseSchema>) -> Database {
        Database {
            schema,
            data: self.data.clone(),
        }
    }

    pub fn validate(&self) -> Result<ValidationReport> {
        validate_database(self)
    }

    pub fn to_json(&self) -> Json {
        json!({ "schema": self.schema.to_json(), "data": json::map_to_json(&self.data) })
    }

    /// Decodes the `{"schema", "data"}` envelope and binds links.
    pub fn from_json(v: &Json) -> Result<Database> {
        let schema = DatabaseSchema::from_json(
            v.get("schema").ok_or_else(|| Error::Parse("missing schema".into()))?,
        )?;
        let data = json::map_from_json(v.get("data").ok_or_else(|| Error::Parse("missing data".into()))?)?;
        relink(&Database::new(Arc::new(schema), data))
    }
}

/// Conformance of every relation to its type plus resolution of every link
/// inside the database.
pub fn validate_database(db: &Database) -> Result<ValidationReport> {
    validate_in(db.data(), &db.schema.as_map_type(), db.data())
}

#[cfg(test)]
mod tests {
    use super::fixtures::{running_example, Encoding};
    use super::*;
    use crate::model::{Ref, Scalar, ViolationKind};

    #[test]
    fn running_example_conforms_in_both_encodings() {
        for enc in [Encoding::ForeignKey, Encoding::Link] {
            let db = running_example(enc);
            let r = validate_database(&db).unwrap();
            assert!(r.conforms, "{enc:?}: {r}");
            assert_eq!(db.schema().as_map_type().order(), 2);
        }
    }

    #[test]
    fn empty_db_over_empty_schema_conforms() {
        let db = Database::empty(Arc::new(DatabaseSchema::new()));
        assert!(validate_database(&db).unwrap().conforms);
    }

    #[test]
    fn foreign_key_without_target_is_a_referential_violation() {
        let db = running_example(Encoding::ForeignKey);
        let give = db.relation("give").unwrap().clone();
        let mut bad = give.clone();
        let first = bad.get_index(0).unwrap().0.value.clone();
        let mut row = bad.get(&first).unwrap().as_map().unwrap().clone();
        row.set(Key::sym("p"), 99i64.into());
        bad.set(Key::surrogate(0), Value::map(row));
        let r = validate_database(&db.with_relation(Symbol::new("give"), bad)).unwrap();
        assert!(r.has(ViolationKind::Referential));
    }

    #[test]
    fn link_to_a_foreign_map_dangles() {
        let db = running_example(Encoding::Link);
        let mut give = db.relation("give").unwrap().clone();
        let mut row = give.value_at(0).as_map().unwrap().clone();
        let stranger = Map::tuple([("id", 7i64.into()), ("name", "Ada".into()), ("age", 50i64.into())]);
        row.set(Key::sym("p"), Value::map(stranger.clone()));
        give.set(Key::surrogate(0), Value::map(row.clone()));
        let r = validate_database(&db.with_relation(Symbol::new("give"), give.clone())).unwrap();
        let v = r.violations.iter().find(|v| v.kind == ViolationKind::DanglingReference).unwrap();
        assert_eq!(v.at, "/give/0/p");

        row.set(
            Key::sym("p"),
            Ref::new(MapPath::from("Professors"), Scalar::Int(7), Value::map(stranger)).into(),
        );
        give.set(Key::surrogate(0), Value::map(row));
        let r = validate_database(&db.with_relation(Symbol::new("give"), give)).unwrap();
        assert!(r.has(ViolationKind::DanglingReference));
    }

    #[test]
    fn schema_json_round_trip() {
        for enc in [Encoding::ForeignKey, Encoding::Link] {
            let db = running_example(enc);
            let back = Database::from_json(&db.to_json()).unwrap();
            assert_eq!(back, db);
            assert!(validate_database(&back).unwrap().conforms);
            assert_eq!(back.to_json().to_string(), db.to_json().to_string());
        }
    }

    #[test]
    fn link_order_puts_targets_first() {
        let db = running_example(Encoding::ForeignKey);
        let order = db.schema().link_order().unwrap();
        let pos = |n: &str| order.iter().position(|s| s.as_str() == n).unwrap();
        assert!(pos("Professors") < pos("give"));
        assert!(pos("Departments") < pos("give"));
    }
}
