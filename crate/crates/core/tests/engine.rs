use std::collections::BTreeSet;
use std::sync::{Arc, Barrier};

use rmtm::engine::Store;
use rmtm::schema::fixtures::{running_example, Encoding};
use rmtm::schema::Database;
use rmtm::views::*;
use rmtm::{Error, Map, MapPath, Scalar, Symbol, Value};

fn store(enc: Encoding) -> Store {
    let s = Store::new();
    s.create_database("uni", running_example(enc)).unwrap();
    s
}

fn ints(m: &Map) -> BTreeSet<i64> {
    m.keys().map(|k| k.value.as_int().unwrap()).collect()
}

fn age(db: &Database, id: i64) -> i64 {
    let p = db.relation("Professors").unwrap().get(&Scalar::Int(id)).unwrap();
    p.as_map().unwrap().attr(Symbol::new("age")).unwrap().as_scalar().unwrap().as_int().unwrap()
}

#[test]
fn snapshot_ignores_later_commits() {
    let s = store(Encoding::ForeignKey);
    let snap = s.begin_snapshot("uni").unwrap();
    let before = serde_json::to_string(&snap.database().to_json()).unwrap();
    let v = ViewExpr::over(snap.database())
        .insert("Professors", vec![InsertRow::new(Map::tuple([("id", 7i64.into()), ("name", "Ada".into()), ("age", 50i64.into())]))])
        .unwrap();
    assert_eq!(s.commit_in_place("uni", &v).unwrap(), 2);
    assert_eq!(snap.relation("Professors").unwrap().len(), 3);
    assert_eq!(serde_json::to_string(&snap.database().to_json()).unwrap(), before);
    assert_eq!(s.begin_snapshot("uni").unwrap().relation("Professors").unwrap().len(), 4);
    let a = s.begin_snapshot("uni").unwrap();
    let b = s.begin_snapshot("uni").unwrap();
    assert_eq!(a.version(), b.version());
}

#[test]
fn delete_must_keep_references_intact() {
    let s = store(Encoding::ForeignKey);
    let base = ViewExpr::over(s.begin_snapshot("uni").unwrap().database());
    let del = base.delete("Professors", Predicate::eq("age", 25)).unwrap();
    match s.commit_in_place("uni", &del) {
        Err(Error::RejectedRewrite(r)) => assert!(!r.conforms),
        other => panic!("{other:?}"),
    }
    assert_eq!(s.latest_version("uni").unwrap(), 1);

    let both = base
        .delete("give", Predicate::cmp(Operand::attr("p"), CmpOp::Ne, Operand::lit(42i64)))
        .unwrap()
        .delete("Professors", Predicate::eq("age", 25))
        .unwrap();
    s.commit_in_place("uni", &both).unwrap();
    let snap = s.begin_snapshot("uni").unwrap();
    assert_eq!(ints(snap.relation("Professors").unwrap()), BTreeSet::from([42]));
}

#[test]
fn rejected_link_rewrites_leave_the_version_alone() {
    let s = store(Encoding::Link);
    let base = ViewExpr::over(s.begin_snapshot("uni").unwrap().database());
    let del = base.delete("Professors", Predicate::eq("age", 25)).unwrap();
    assert!(matches!(s.commit_in_place("uni", &del), Err(Error::RejectedRewrite(_))));
    assert_eq!(s.versions("uni").unwrap(), vec![1]);
}

#[test]
fn identity_and_update() {
    let s = store(Encoding::ForeignKey);
    let snap = s.begin_snapshot("uni").unwrap();
    let id = ViewExpr::over(snap.database());
    assert_eq!(s.commit_in_place("uni", &id).unwrap(), 2);
    assert_eq!(s.begin_snapshot("uni").unwrap().database().data(), snap.database().data());

    let up = id
        .update(
            "Professors",
            Predicate::eq("name", "Horst"),
            vec![("age", Operand::call("add", vec![Operand::attr("age"), Operand::lit(1i64)]))],
        )
        .unwrap();
    s.commit_in_place("uni", &up).unwrap();
    let now = s.begin_snapshot("uni").unwrap();
    assert_eq!((age(now.database(), 31), age(now.database(), 32), age(now.database(), 42)), (26, 26, 35));

    let noop = id.delete("Professors", Predicate::False).unwrap();
    s.commit_in_place("uni", &noop).unwrap();
    assert_eq!(s.begin_snapshot("uni").unwrap().database().data(), now.database().data());
}

#[test]
fn surrogate_identities_are_never_reused() {
    let s = store(Encoding::ForeignKey);
    let give = MapPath::from("give");
    assert_eq!(s.alloc_identity("uni", &give).unwrap().value, Scalar::Int(4));
    assert_eq!(s.alloc_identity("uni", &give).unwrap().value, Scalar::Int(5));
    assert!(matches!(s.alloc_identity("uni", &MapPath::from("Professors")), Err(Error::NotSurrogate(_))));

    let base = ViewExpr::over(s.begin_snapshot("uni").unwrap().database());
    let row = || Map::tuple([("p", 42i64.into()), ("l", 17i64.into()), ("d", 1i64.into()), ("room", "R9".into()), ("year", 2026i64.into())]);
    s.commit_in_place("uni", &base.insert("give", vec![InsertRow::new(row())]).unwrap()).unwrap();
    s.commit_in_place("uni", &base.delete("give", Predicate::eq("room", "R9")).unwrap()).unwrap();
    s.commit_in_place("uni", &base.insert("give", vec![InsertRow::new(row())]).unwrap()).unwrap();
    let keys = ints(s.begin_snapshot("uni").unwrap().relation("give").unwrap());
    assert_eq!(keys, BTreeSet::from([0, 1, 2, 3, 7]));

    let hidden = base.project("give", &["$key", "room"], false);
    assert!(matches!(hidden, Err(Error::HiddenKey(_))));
    let star = base.project("give", &["*"], false).unwrap();
    let out = eval_out_of_place(&star, &s.begin_snapshot("uni").unwrap()).unwrap();
    for e in out.attr(Symbol::new("give")).unwrap().as_map().unwrap().values() {
        assert_eq!(e.as_map().unwrap().len(), 5);
    }
}

#[test]
fn fresh_database_counts_from_zero() {
    let s = Store::new();
    let d = running_example(Encoding::ForeignKey);
    let empty = d.with_relation(Symbol::new("give"), Map::new());
    s.create_database("e", empty).unwrap();
    assert_eq!(s.alloc_identity("e", &MapPath::from("give")).unwrap().value, Scalar::Int(0));
    assert_eq!(s.alloc_identity("e", &MapPath::from("give")).unwrap().value, Scalar::Int(1));
}

#[test]
fn single_writer() {
    let s = store(Encoding::ForeignKey);
    let w = s.begin_write("uni").unwrap();
    assert!(matches!(s.begin_write("uni"), Err(Error::WriterBusy(_))));
    drop(w);
    let w = s.begin_write("uni").unwrap();
    w.commit("empty").unwrap();
    assert!(s.begin_write("uni").is_ok());
    assert!(matches!(s.begin_snapshot("nope"), Err(Error::UnknownDatabase(_))));
    assert!(matches!(s.create_database("uni", running_example(Encoding::ForeignKey)), Err(Error::DatabaseExists(_))));
}

#[test]
fn subdb_in_place_matches_out_of_place() {
    let s = store(Encoding::ForeignKey);
    let snap = s.begin_snapshot("uni").unwrap();
    let v = ViewExpr::over(snap.database())
        .subdb(SubDbMode::Inner, vec![("give", Predicate::eq("year", 2025))], &[])
        .unwrap();
    let out = eval_out_of_place(&v, &snap).unwrap();
    s.commit_in_place("uni", &v).unwrap();
    assert_eq!(*s.begin_snapshot("uni").unwrap().database().data(), out);
}

#[test]
fn schema_changing_commits() {
    let s = store(Encoding::ForeignKey);
    let snap = s.begin_snapshot("uni").unwrap();
    let base = ViewExpr::over(snap.database());
    assert!(base.drop_relation("Professors").is_err());
    let dropped = base.drop_relation("give").unwrap();
    s.commit_in_place("uni", &dropped).unwrap();
    let now = s.begin_snapshot("uni").unwrap();
    assert!(now.relation("give").is_none());
    assert_eq!(now.database().schema().len(), 3);
}

#[test]
fn log_and_persistence_round_trip() {
    let dir = tempfile_dir();
    let s = store(Encoding::Link);
    let base = ViewExpr::over(s.begin_snapshot("uni").unwrap().database());
    s.commit_in_place("uni", &base.delete("give", Predicate::eq("year", 2024)).unwrap()).unwrap();
    s.alloc_identity("uni", &MapPath::from("give")).unwrap();
    let log = s.log();
    assert_eq!(log.iter().map(|e| e.version).collect::<Vec<_>>(), vec![1, 2]);
    assert!(log[1].description.contains("delete"));
    s.save(&dir).unwrap();
    assert!(dir.join("uni").join("v1.json").exists());

    let back = Store::open(&dir).unwrap();
    let a = s.begin_snapshot("uni").unwrap();
    let b = back.begin_snapshot("uni").unwrap();
    assert_eq!(b.version(), 2);
    assert_eq!(a.database().data(), b.database().data());
    assert_eq!(back.log(), log);
    assert_eq!(back.alloc_identity("uni", &MapPath::from("give")).unwrap().value, Scalar::Int(5));
    std::fs::remove_dir_all(dir).ok();
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("rmtm-engine-{}-{:?}", std::process::id(), std::thread::current().id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

/// A reader walks `give` and resolves each professor's name through its
/// snapshot while a writer renames professors between reads.
#[test]
fn n_plus_one_loop_never_mixes_versions() {
    let s = Arc::new(store(Encoding::Link));
    let snap = s.begin_snapshot("uni").unwrap();
    let give = snap.relation("give").unwrap().clone();
    let step = Arc::new(Barrier::new(2));
    let writer = {
        let s = s.clone();
        let step = step.clone();
        let n = give.len();
        std::thread::spawn(move || {
            for i in 0..n {
                step.wait();
                let base = ViewExpr::over(s.begin_snapshot("uni").unwrap().database());
                let up = base
                    .update("Professors", Predicate::True, vec![("name", Operand::lit(format!("renamed{i}").as_str()))])
                    .unwrap();
                s.commit_in_place("uni", &up).unwrap();
                step.wait();
            }
        })
    };
    let mut names = Vec::new();
    for e in give.values() {
        step.wait();
        step.wait();
        let p = e.as_map().unwrap().attr(Symbol::new("p")).unwrap();
        let r = p.as_ref_link().unwrap();
        let live = snap.resolve(&MapPath::from("Professors"), p).unwrap();
        let _ = r;
        names.push(live.as_map().unwrap().attr(Symbol::new("name")).unwrap().as_scalar().unwrap().clone());
    }
    writer.join().unwrap();
    let want: Vec<Scalar> = give
        .values()
        .iter()
        .map(|e| {
            let id = match e.as_map().unwrap().attr(Symbol::new("p")).unwrap() {
                Value::Ref(r) => r.key().clone(),
                _ => unreachable!(),
            };
            snap.relation("Professors").unwrap().get(&id).unwrap().as_map().unwrap().attr(Symbol::new("name")).unwrap().as_scalar().unwrap().clone()
        })
        .collect();
    assert_eq!(names, want);
    assert!(names.iter().all(|n| !n.as_str().unwrap().starts_with("renamed")));
    assert_eq!(s.latest_version("uni").unwrap(), 1 + give.len() as u64);
}
