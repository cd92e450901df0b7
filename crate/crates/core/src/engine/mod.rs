//! Versioned store: immutable database versions, snapshot reads, a single
//! writer per database, and engine-managed identities.

mod persist;

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use indexmap::IndexMap;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Key, KeyPolicy, Map, MapPath, Symbol, Value};
use crate::schema::{relink_changed, validate_database, Database};
use crate::views::{apply_in_place, ViewExpr};

/// One published state of a database.
#[derive(Debug)]
pub struct Version {
    pub number: u64,
    pub db: Database,
}

/// A read handle on one version. Later commits never change what it sees.
#[derive(Clone, Debug)]
pub struct Snapshot {
    name: Symbol,
    version: u64,
    db: Database,
}

impl Snapshot {
    pub fn name(&self) -> Symbol {
        self.name
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn database(&self) -> &Database {
        &self.db
    }

    pub fn relation(&self, name: &str) -> Option<&Map> {
        self.db.relation(name)
    }

    /// Follows a link or foreign key held by an element, inside this version.
    pub fn resolve(&self, target: &MapPath, v: &Value) -> Option<Value> {
        match v {
            Value::Ref(r) => {
                let live = self.db.data().at_path(target.segments())?.get(r.key())?;
                Some(live.clone())
            }
            Value::Scalar(k) => self.db.data().at_path(target.segments())?.get(k).cloned(),
            Value::Map(_) => Some(v.clone()),
        }
    }
}

/// Metadata of one commit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub db: Symbol,
    pub version: u64,
    pub timestamp_ms: u64,
    pub description: String,
}

struct DbEntry {
    chain: RwLock<Vec<Arc<Version>>>,
    /// Next identity per surrogate-keyed relation. Kept outside versions so
    /// identities are never handed out twice, even by rejected commits.
    counters: Mutex<HashMap<MapPath, u64>>,
    writer: AtomicBool,
}

impl DbEntry {
    fn latest(&self) -> Arc<Version> {
        self.chain.read().last().expect("a database has at least one version").clone()
    }
}

/// Thread-safe handle to a set of named, versioned databases.
#[derive(Default)]
pub struct Store {
    dbs: RwLock<IndexMap<Symbol, Arc<DbEntry>>>,
    log: Mutex<Vec<LogEntry>>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn initial_counters(db: &Database) -> HashMap<MapPath, u64> {
    let mut out = HashMap::new();
    for (name, t) in db.schema().relations() {
        if t.key_policy == KeyPolicy::Surrogate {
            let next = db
                .relation(name)
                .map(|m| {
                    m.keys()
                        .filter_map(|k| k.value.as_int())
                        .map(|i| i as u64 + 1)
                        .max()
                        .unwrap_or(0)
                })
                .unwrap_or(0);
            out.insert(MapPath::from(name), next);
        }
    }
    out
}

impl Store {
    pub fn new() -> Store {
        Store::default()
    }

    fn entry(&self, name: Symbol) -> Result<Arc<DbEntry>> {
        self.dbs.read().get(&name).cloned().ok_or(Error::UnknownDatabase(name))
    }

    fn record(&self, db: Symbol, version: u64, description: &str) {
        self.log.lock().push(LogEntry {
            db,
            version,
            timestamp_ms: now_ms(),
            description: description.to_string(),
        });
    }

    /// Registers a database as version 1. It must conform to its schema.
    pub fn create_database(&self, name: &str, db: Database) -> Result<u64> {
        if !valid_name(name) {
            return Err(Error::InvalidSchema(format!(
                "database name {name:?} must be letters, digits, '_' or '-'"
            )));
        }
        let report = validate_database(&db)?;
        if !report.conforms {
            return Err(Error::RejectedRewrite(report));
        }
        self.install(Symbol::new(name), 1, db, None)?;
        self.record(Symbol::new(name), 1, "create");
        Ok(1)
    }

    fn install(&self, name: Symbol, version: u64, db: Database, counters: Option<HashMap<MapPath, u64>>) -> Result<()> {
        let mut dbs = self.dbs.write();
        if dbs.contains_key(&name) {
            return Err(Error::DatabaseExists(name));
        }
        let counters = counters.unwrap_or_else(|| initial_counters(&db));
        dbs.insert(
            name,
            Arc::new(DbEntry {
                chain: RwLock::new(vec![Arc::new(Version { number: version, db })]),
                counters: Mutex::new(counters),
                writer: AtomicBool::new(false),
            }),
        );
        Ok(())
    }

    pub fn names(&self) -> Vec<Symbol> {
        self.dbs.read().keys().copied().collect()
    }

    pub fn latest_version(&self, name: &str) -> Result<u64> {
        Ok(self.entry(Symbol::new(name))?.latest().number)
    }

    /// The latest committed version.
    pub fn begin_snapshot(&self, name: &str) -> Result<Snapshot> {
        let sym = Symbol::new(name);
        let v = self.entry(sym)?.latest();
        Ok(Snapshot {
            name: sym,
            version: v.number,
            db: v.db.clone(),
        })
    }

    pub fn snapshot_at(&self, name: &str, version: u64) -> Result<Snapshot> {
        let sym = Symbol::new(name);
        let e = self.entry(sym)?;
        let chain = e.chain.read();
        let v = chain
            .iter()
            .find(|v| v.number == version)
            .ok_or_else(|| Error::UnknownKey(format!("version {version} of {name}")))?;
        Ok(Snapshot {
            name: sym,
            version,
            db: v.db.clone(),
        })
    }

    /// Version numbers still held in memory, oldest first.
    pub fn versions(&self, name: &str) -> Result<Vec<u64>> {
        Ok(self
            .entry(Symbol::new(name))?
            .chain
            .read()
            .iter()
            .map(|v| v.number)
            .collect())
    }

    /// Starts the single write transaction of a database; fails at once
    /// when another one is in flight.
    pub fn begin_write(&self, name: &str) -> Result<WriteTxn<'_>> {
        let sym = Symbol::new(name);
        let entry = self.entry(sym)?;
        if entry
            .writer
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .is_err()
        {
            return Err(Error::WriterBusy(sym));
        }
        let base = entry.latest();
        Ok(WriteTxn {
            store: self,
            name: sym,
            current: base.db.clone(),
            base,
            entry,
        })
    }

    /// Runs `f` inside a write transaction and commits its result.
    pub fn commit_with(
        &self,
        name: &str,
        description: &str,
        f: impl FnOnce(&mut WriteTxn<'_>) -> Result<()>,
    ) -> Result<u64> {
        let mut txn = self.begin_write(name)?;
        f(&mut txn)?;
        txn.commit(description)
    }

    /// Applies a view as an atomic rewrite and publishes the result.
    pub fn commit_in_place(&self, name: &str, v: &ViewExpr) -> Result<u64> {
        let mut txn = self.begin_write(name)?;
        txn.apply(v)?;
        txn.commit(&describe(v))
    }

    /// A fresh identity for a surrogate-keyed relation.
    pub fn alloc_identity(&self, name: &str, relation: &MapPath) -> Result<Key> {
        let sym = Symbol::new(name);
        let entry = self.entry(sym)?;
        let schema = entry.latest().db.schema().clone();
        alloc_in(&entry, &schema, relation)
    }

    pub fn log(&self) -> Vec<LogEntry> {
        self.log.lock().clone()
    }

    /// Drops in-memory versions older than `keep` latest ones. Snapshots
    /// already handed out stay valid.
    pub fn prune(&self, name: &str, keep: usize) -> Result<()> {
        let e = self.entry(Symbol::new(name))?;
        let mut chain = e.chain.write();
        let keep = keep.max(1);
        if chain.len() > keep {
            let drop = chain.len() - keep;
            chain.drain(..drop);
        }
        Ok(())
    }
}

fn alloc_in(entry: &DbEntry, schema: &crate::schema::DatabaseSchema, relation: &MapPath) -> Result<Key> {
    let t = schema.as_map_type();
    let rel = t
        .type_at(relation.segments())
        .ok_or_else(|| Error::UnknownKey(format!("relation {relation}")))?;
    if rel.key_policy != KeyPolicy::Surrogate {
        return Err(Error::NotSurrogate(relation.to_string()));
    }
    let mut counters = entry.counters.lock();
    let next = counters.entry(relation.clone()).or_insert(0);
    let k = Key::surrogate(*next);
    *next += 1;
    Ok(k)
}

/// Short description of a view for the version log.
pub fn describe(v: &ViewExpr) -> String {
    let ops: Vec<String> = v
        .chain()
        .iter()
        .skip(1)
        .map(|n| {
            serde_json::to_value(n.op())
                .ok()
                .and_then(|j| j.get("op").and_then(|o| o.as_str()).map(String::from))
                .unwrap_or_default()
        })
        .collect();
    if ops.is_empty() {
        "identity".into()
    } else {
        ops.join(" > ")
    }
}

/// The in-flight successor of a database version. Dropping it without
/// committing publishes nothing.
pub struct WriteTxn<'s> {
    store: &'s Store,
    name: Symbol,
    entry: Arc<DbEntry>,
    base: Arc<Version>,
    current: Database,
}

impl Drop for WriteTxn<'_> {
    fn drop(&mut self) {
        self.entry.writer.store(false, Ordering::Release);
    }
}

impl WriteTxn<'_> {
    pub fn base_version(&self) -> u64 {
        self.base.number
    }

    pub fn database(&self) -> &Database {
        &self.current
    }

    pub fn alloc_identity(&mut self, relation: &MapPath) -> Result<Key> {
        alloc_in(&self.entry, self.current.schema(), relation)
    }

    /// Rewrites the pending database with a view.
    pub fn apply(&mut self, v: &ViewExpr) -> Result<()> {
        let entry = self.entry.clone();
        let schema = self.current.schema().clone();
        let mut alloc = |p: &MapPath| alloc_in(&entry, &schema, p);
        self.current = apply_in_place(v, &self.current, &mut alloc)?;
        Ok(())
    }

    pub fn set_relation(&mut self, name: &str, rel: Map) {
        self.current = self.current.with_relation(Symbol::new(name), rel);
    }

    pub fn set_database(&mut self, db: Database) {
        self.current = db;
    }

    fn changed(&self) -> Option<HashSet<Symbol>> {
        let old = &self.base.db;
        if old.schema() != self.current.schema() {
            return None;
        }
        let mut out = HashSet::new();
        for (name, _) in self.current.schema().relations() {
            let same = match (old.relation_arc(name), self.current.relation_arc(name)) {
                (Some(a), Some(b)) => Arc::ptr_eq(a, b),
                (None, None) => true,
                _ => false,
            };
            if !same {
                out.insert(name);
            }
        }
        Some(out)
    }

    /// Binds links to the rewritten entries, validates, and publishes the
    /// next version. On failure nothing is published.
    pub fn commit(self, description: &str) -> Result<u64> {
        let db = match self.changed() {
            Some(c) => relink_changed(&self.current, &c)?,
            None => crate::schema::relink(&self.current)?,
        };
        let report = validate_database(&db)?;
        if !report.conforms {
            return Err(Error::RejectedRewrite(report));
        }
        let number = {
            let mut chain = self.entry.chain.write();
            let number = chain.last().map_or(1, |v| v.number + 1);
            chain.push(Arc::new(Version { number, db }));
            number
        };
        self.store.record(self.name, number, description);
        Ok(number)
    }
}

