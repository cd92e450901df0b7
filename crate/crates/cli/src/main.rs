use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rmtm::engine::Store;
use rmtm::json::{map_to_json, to_string_pretty};
use rmtm::schema::{classify_database, load_database, swizzle, Database, DatabaseSchema, RecordSource};
use rmtm::views::{eval_out_of_place, Registry, ViewExpr};
use rmtm::{Error, Result, Symbol};
use rmtm_starbench::{run_suite, to_csv, StarConfig};
use serde_json::{json, Value as Json};

#[derive(Parser)]
#[command(name = "rmtm", version, about = "Relational map type database tools")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct StoreArgs {
    /// Store directory.
    #[arg(long, env = "RMTM_STORE")]
    store: PathBuf,
    /// Database name inside the store.
    #[arg(long, default_value = "main")]
    db: String,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check record files against a schema; exits 0 iff they conform.
    Validate {
        #[arg(long)]
        schema: PathBuf,
        /// Record files, `Relation=path` or a path named after its relation.
        #[arg(long, num_args = 1..)]
        data: Vec<String>,
    },
    /// Print the model class of a schema.
    Classify {
        #[arg(long)]
        schema: PathBuf,
    },
    /// Load record files as version 1 of a new database.
    Load {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long, num_args = 1..)]
        data: Vec<String>,
        /// Replace foreign keys by links before committing.
        #[arg(long)]
        swizzle: bool,
        #[command(flatten)]
        store: StoreArgs,
    },
    /// Evaluate a view against the latest version, out of place.
    Query {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        view: PathBuf,
        /// Result file; standard output if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply a view in place and commit the result as a new version.
    Apply {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        view: PathBuf,
    },
    /// Star-join benchmark for 1..=dims dimensions.
    Bench {
        #[arg(long, default_value_t = 1_000_000)]
        facts: usize,
        #[arg(long, default_value_t = 10)]
        dims: usize,
        #[arg(long, default_value_t = 100)]
        dim_size: usize,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// CSV file; standard output if absent.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn read_json(path: &Path) -> Result<Json> {
    serde_json::from_str(&read(path)?).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn read_schema(path: &Path) -> Result<Arc<DatabaseSchema>> {
    Ok(Arc::new(DatabaseSchema::from_json(&read_json(path)?)?))
}

fn sources(data: &[String]) -> Result<Vec<RecordSource>> {
    data.iter()
        .map(|arg| {
            let (rel, path) = match arg.split_once('=') {
                Some((rel, path)) => (rel.to_string(), PathBuf::from(path)),
                None => {
                    let p = PathBuf::from(arg);
                    let stem = p
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .ok_or_else(|| Error::Parse(format!("cannot tell the relation of {arg}")))?
                        .to_string();
                    (stem, p)
                }
            };
            Ok(RecordSource {
                relation: Symbol::new(&rel),
                label: path.file_name().map_or(arg.clone(), |f| f.to_string_lossy().into_owned()),
                text: read(&path)?,
            })
        })
        .collect()
}

fn load(schema: &Path, data: &[String], swizzled: bool) -> Result<Database> {
    let (db, _) = load_database(read_schema(schema)?, &sources(data)?)?;
    if swizzled {
        swizzle(&db)
    } else {
        Ok(db)
    }
}

fn open_store(dir: &Path) -> Result<Store> {
    if dir.exists() {
        Store::open(dir)
    } else {
        Ok(Store::new())
    }
}

fn read_view(path: &Path, db: &Database) -> Result<ViewExpr> {
    ViewExpr::from_json(&read_json(path)?, &db.schema().as_map_type(), Arc::new(Registry::builtins()))
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => Ok(std::fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Runs a command. `Ok(false)` is a clean run whose verdict is negative.
fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Validate { schema, data } => {
            let schema = read_schema(&schema)?;
            let report = if data.is_empty() {
                Database::empty(schema).validate()?
            } else {
                match load_database(schema, &sources(&data)?) {
                    Ok((db, _)) => db.validate()?,
                    Err(Error::NonConforming(r)) => r,
                    Err(e) => return Err(e),
                }
            };
            println!("{}", to_string_pretty(&serde_json::to_value(&report)?));
            Ok(report.conforms)
        }
        Cmd::Classify { schema } => {
            let class = classify_database(&Database::empty(read_schema(&schema)?))?;
            println!("{}", to_string_pretty(&serde_json::to_value(&class)?));
            Ok(true)
        }
        Cmd::Load {
            schema,
            data,
            swizzle,
            store,
        } => {
            let db = load(&schema, &data, swizzle)?;
            let s = open_store(&store.store)?;
            let version = s.create_database(&store.db, db)?;
            s.save(&store.store)?;
            let snap = s.begin_snapshot(&store.db)?;
            let counts: serde_json::Map<String, Json> = snap
                .database()
                .data()
                .iter()
                .map(|(k, v)| (k.value.render(), json!(v.as_map().map_or(0, |m| m.len()))))
                .collect();
            println!(
                "{}",
                to_string_pretty(&json!({"database": store.db, "version": version, "relations": counts}))
            );
            Ok(true)
        }
        Cmd::Query { store, view, out } => {
            let s = Store::open(&store.store)?;
            let snap = s.begin_snapshot(&store.db)?;
            let v = read_view(&view, snap.database())?;
            let result = eval_out_of_place(&v, &snap)?;
            write_out(out.as_deref(), &(to_string_pretty(&map_to_json(&result)) + "\n"))?;
            Ok(true)
        }
        Cmd::Apply { store, view } => {
            let s = Store::open(&store.store)?;
            let snap = s.begin_snapshot(&store.db)?;
            let v = read_view(&view, snap.database())?;
            drop(snap);
            let version = s.commit_in_place(&store.db, &v)?;
            s.save(&store.store)?;
            println!("{}", to_string_pretty(&json!({"database": store.db, "version": version})));
            Ok(true)
        }
        Cmd::Bench {
            facts,
            dims,
            dim_size,
            reps,
            seed,
            csv,
        } => {
            let template = StarConfig {
                n_facts: facts,
                n_dims: 1,
                dim_size,
                seed,
            };
            let rows = run_suite(template, 1..=dims, reps)?;
            write_out(csv.as_deref(), &to_csv(&rows))?;
            Ok(rows.iter().all(|r| r.checksum_match))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let mut diag = json!({"error": e.code(), "message": e.to_string()});
            if let Error::RejectedRewrite(r) | Error::NonConforming(r) = &e {
                diag["violations"] = serde_json::to_value(&r.violations).unwrap_or(Json::Null);
            }
            eprintln!("{diag}");
            ExitCode::from(2)
        }
    }
}
