//! On-disk layout: `<dir>/<db>/v<N>.json` per version plus `<dir>/log.jsonl`.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::{json, Value as Json};

use super::{LogEntry, Store};
use crate::error::{Error, Result};
use crate::model::{MapPath, Symbol};
use crate::schema::Database;

fn version_file(name: &str) -> Option<u64> {
    name.strip_prefix('v')?.strip_suffix(".json")?.parse().ok()
}

impl Store {
    /// Writes every in-memory version not yet on disk, and the full log.
    /// Files of versions already written are left alone.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let dbs: Vec<_> = self.dbs.read().iter().map(|(k, v)| (*k, v.clone())).collect();
        for (name, entry) in dbs {
            let sub = dir.join(name.as_str());
            fs::create_dir_all(&sub)?;
            let chain = entry.chain.read().clone();
            let counters: serde_json::Map<String, Json> = entry
                .counters
                .lock()
                .iter()
                .map(|(p, n)| (p.to_string(), json!(n)))
                .collect();
            for v in chain {
                let file = sub.join(format!("v{}.json", v.number));
                if file.exists() {
                    continue;
                }
                let doc = json!({
                    "version": v.number,
                    "database": v.db.to_json(),
                    "identity_counters": counters,
                });
                let tmp = sub.join(format!(".v{}.json.tmp", v.number));
                fs::write(&tmp, serde_json::to_vec(&doc)?)?;
                fs::rename(&tmp, &file)?;
            }
        }
        let mut f = fs::File::create(dir.join("log.jsonl"))?;
        for e in self.log.lock().iter() {
            writeln!(f, "{}", serde_json::to_string(e)?)?;
        }
        Ok(())
    }

    /// Loads the latest saved version of every database under `dir`.
    pub fn open(dir: &Path) -> Result<Store> {
        let store = Store::new();
        if !dir.exists() {
            return Ok(store);
        }
        let mut names: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .collect();
        names.sort_by_key(|e| e.file_name());
        for e in names {
            let latest = fs::read_dir(e.path())?
                .filter_map(|f| f.ok())
                .filter_map(|f| version_file(&f.file_name().to_string_lossy()))
                .max();
            let Some(n) = latest else { continue };
            let doc: Json = serde_json::from_slice(&fs::read(e.path().join(format!("v{n}.json")))?)?;
            let db = Database::from_json(
                doc.get("database")
                    .ok_or_else(|| Error::Parse(format!("v{n}.json: missing database")))?,
            )?;
            let counters: HashMap<MapPath, u64> = doc
                .get("identity_counters")
                .and_then(|c| c.as_object())
                .map(|o| {
                    o.iter()
                        .filter_map(|(k, v)| Some((MapPath::from(k.as_str()), v.as_u64()?)))
                        .collect()
                })
                .unwrap_or_default();
            let name = Symbol::new(&e.file_name().to_string_lossy());
            store.install(name, n, db, Some(counters))?;
        }
        let log = dir.join("log.jsonl");
        if log.exists() {
            let text = fs::read_to_string(log)?;
            let mut entries = store.log.lock();
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                entries.push(serde_json::from_str::<LogEntry>(line)?);
            }
        }
        Ok(store)
    }
}
