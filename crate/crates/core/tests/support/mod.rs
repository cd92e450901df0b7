//! Random instances and brute-force oracles shared by the property suites
//! and the acceptance run.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmtm::schema::{swizzle, unswizzle, Database, DatabaseSchema};
use rmtm::views::*;
use rmtm::{Domain, EntryType, Key, KeyPolicy, Map, MapType, Projection, Scalar, ScalarKind, Symbol, Value};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One row of a generated relation `R<i>`: key `id`, two small ints, and an
/// optional foreign key `f` into `R<i-1>`.
#[derive(Clone, Debug)]
pub struct Row {
    pub id: i64,
    pub a: i64,
    pub b: i64,
    pub f: Option<i64>,
}

#[derive(Clone, Debug)]
pub struct Inst {
    pub rels: Vec<Vec<Row>>,
}

pub fn name(i: usize) -> String {
    format!("R{i}")
}

impl Inst {
    pub fn random(r: &mut ChaCha8Rng, n_rels: usize, max_rows: usize, range: i64) -> Inst {
        let mut rels: Vec<Vec<Row>> = Vec::new();
        for i in 0..n_rels {
            let n = r.gen_range(0..=max_rows);
            let mut ids: Vec<i64> = (0..(n as i64 * 2 + 1)).collect();
            ids.shuffle(r);
            let prev: Vec<i64> = if i == 0 { Vec::new() } else { rels[i - 1].iter().map(|x| x.id).collect() };
            let rows = ids[..n]
                .iter()
                .map(|&id| Row {
                    id,
                    a: r.gen_range(0..range),
                    b: r.gen_range(0..range),
                    f: (!prev.is_empty() && r.gen_bool(0.85)).then(|| prev[r.gen_range(0..prev.len())]),
                })
                .collect();
            rels.push(rows);
        }
        Inst { rels }
    }

    pub fn schema(&self) -> DatabaseSchema {
        let mut s = DatabaseSchema::new();
        for i in 0..self.rels.len() {
            let mut entries = vec![
                EntryType::new("id", Domain::int()),
                EntryType::new("a", Domain::int()),
                EntryType::new("b", Domain::int()),
            ];
            if i > 0 {
                entries.push(EntryType::optional("f", Domain::foreign_key(name(i - 1).as_str(), ScalarKind::Int)));
            }
            let mut elem = MapType::rmt(entries);
            if i > 0 {
                elem.n = None;
            }
            s = s.with_relation(
                &name(i),
                Arc::new(MapType::rhomt(
                    Arc::new(elem),
                    ScalarKind::Int,
                    KeyPolicy::Computed(Projection::Attr(Symbol::new("id"))),
                )),
            );
        }
        s
    }

    pub fn db(&self) -> Database {
        let mut data = Map::new();
        for (i, rows) in self.rels.iter().enumerate() {
            let mut m = Map::with_capacity(rows.len());
            for row in rows {
                let mut t = Map::tuple([("id", row.id.into()), ("a", row.a.into()), ("b", row.b.into())]);
                if let Some(f) = row.f {
                    t.set(Key::sym("f"), f.into());
                }
                m.insert(Key::computed(row.id), Value::map(t)).unwrap();
            }
            data.insert(Key::sym(&name(i)), Value::map(m)).unwrap();
        }
        Database::new(Arc::new(self.schema()), data)
    }

    pub fn linked(&self) -> Database {
        swizzle(&self.db()).unwrap()
    }
}

pub type Flat = BTreeMap<String, Scalar>;

fn scalar_of(v: &Value) -> Scalar {
    match v {
        Value::Scalar(s) => s.clone(),
        Value::Ref(r) => r.key().clone(),
        Value::Map(_) => panic!("nested map in a flat row"),
    }
}

/// A relation as a sorted multiset of attribute maps; keys are dropped.
pub fn rows_of(m: &Map) -> Vec<Flat> {
    let mut out: Vec<Flat> = m
        .values()
        .iter()
        .map(|v| {
            v.deref_map()
                .unwrap()
                .iter()
                .map(|(k, x)| (k.value.render(), scalar_of(x)))
                .collect()
        })
        .collect();
    out.sort();
    out
}

pub fn flat_row(rel: usize, row: &Row, prefix: bool) -> Flat {
    let p = |a: &str| if prefix { format!("{}.{a}", name(rel)) } else { a.to_string() };
    let mut f = Flat::new();
    f.insert(p("id"), Scalar::Int(row.id));
    f.insert(p("a"), Scalar::Int(row.a));
    f.insert(p("b"), Scalar::Int(row.b));
    if let Some(x) = row.f {
        f.insert(p("f"), Scalar::Int(x));
    }
    f
}

/// All combinations of one row per listed relation satisfying `cond`.
/// `cond` must hold on every prefix of a satisfying combination, which
/// lets the loop abandon a prefix early.
pub fn nested_loop(inst: &Inst, rels: &[usize], cond: &dyn Fn(&[&Row]) -> bool) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx = vec![0usize; rels.len()];
    fn go(
        inst: &Inst,
        rels: &[usize],
        depth: usize,
        idx: &mut Vec<usize>,
        cond: &dyn Fn(&[&Row]) -> bool,
        out: &mut Vec<Vec<usize>>,
    ) {
        if depth == rels.len() {
            out.push(idx.clone());
            return;
        }
        for i in 0..inst.rels[rels[depth]].len() {
            idx[depth] = i;
            let rows: Vec<&Row> = rels[..=depth]
                .iter()
                .zip(idx.iter())
                .map(|(r, i)| &inst.rels[*r][*i])
                .collect();
            if cond(&rows) {
                go(inst, rels, depth + 1, idx, cond, out);
            }
        }
    }
    go(inst, rels, 0, &mut idx, cond, &mut out);
    out
}

fn concat(inst: &Inst, rels: &[usize], combo: &[usize], sides: &[usize]) -> Flat {
    let mut f = Flat::new();
    for &s in sides {
        f.extend(flat_row(rels[s], &inst.rels[rels[s]][combo[s]], true));
    }
    f
}

#[derive(Clone, Copy, Debug)]
pub enum Cond {
    /// `R<i>.a == R<j>.b` for consecutive inputs, optionally `R<0>.b < R<1>.a`.
    Equi { residual: bool },
    /// `R<i>.f` links to `R<i-1>`.
    Links,
    None,
}

fn cond_fn(c: Cond) -> Box<dyn Fn(&[&Row]) -> bool> {
    match c {
        Cond::Equi { residual } => Box::new(move |rs: &[&Row]| {
            rs.windows(2).all(|w| w[0].a == w[1].b) && (!residual || rs.len() < 2 || rs[0].b < rs[1].a)
        }),
        Cond::Links => Box::new(|rs: &[&Row]| rs.windows(2).all(|w| w[1].f == Some(w[0].id))),
        Cond::None => Box::new(|_: &[&Row]| true),
    }
}

fn join_on(c: Cond, rels: &[usize]) -> JoinOn {
    match c {
        Cond::Equi { residual } => {
            let mut p = Predicate::True;
            for w in rels.windows(2) {
                p = p.and(Predicate::cmp(
                    Operand::attr(&format!("{}.a", name(w[0]))),
                    CmpOp::Eq,
                    Operand::attr(&format!("{}.b", name(w[1]))),
                ));
            }
            if residual {
                p = p.and(Predicate::cmp(
                    Operand::attr(&format!("{}.b", name(rels[0]))),
                    CmpOp::Lt,
                    Operand::attr(&format!("{}.a", name(rels[1]))),
                ));
            }
            JoinOn::Predicate(p)
        }
        Cond::Links => JoinOn::Links(
            rels.windows(2)
                .map(|w| LinkSpec::new(&name(w[1]), "f", &name(w[0])))
                .collect(),
        ),
        Cond::None => JoinOn::None,
    }
}

/// Expected rows of a join, by brute force.
pub fn join_oracle(inst: &Inst, kind: JoinKind, rels: &[usize], c: Cond, side: &[usize]) -> Vec<Flat> {
    let combos = nested_loop(inst, rels, &*cond_fn(c));
    let all: Vec<usize> = (0..rels.len()).collect();
    let mut out: Vec<Flat> = match kind {
        JoinKind::Semi => {
            let p = side[0];
            let hit: BTreeSet<usize> = combos.iter().map(|c| c[p]).collect();
            hit.into_iter().map(|i| flat_row(rels[p], &inst.rels[rels[p]][i], false)).collect()
        }
        _ => combos.iter().map(|c| concat(inst, rels, c, &all)).collect(),
    };
    if kind == JoinKind::Outer {
        for &s in side {
            let hit: BTreeSet<usize> = combos.iter().map(|c| c[s]).collect();
            for i in 0..inst.rels[rels[s]].len() {
                if !hit.contains(&i) {
                    out.push(flat_row(rels[s], &inst.rels[rels[s]][i], true));
                }
            }
        }
    }
    out.sort();
    out
}

pub fn join_view(db: &Database, kind: JoinKind, rels: &[usize], c: Cond, side: &[usize]) -> ViewExpr {
    let base = ViewExpr::over(db);
    let inputs: Vec<JoinInput> = rels.iter().map(|r| JoinInput::new(name(*r).as_str())).collect();
    let on = join_on(c, rels);
    match kind {
        JoinKind::Semi => base.semi_join(inputs, on, &name(rels[side[0]])),
        JoinKind::Outer => {
            let names: Vec<String> = side.iter().map(|s| name(rels[*s])).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            base.outer_join(inputs, on, &refs)
        }
        k => base.join(k, inputs, on),
    }
    .unwrap()
}

pub fn eval_keys(v: &ViewExpr, db: &Database) -> Map {
    eval_map(v, db.data(), EvalOptions { refs: RefMode::Keys }).unwrap()
}

/// Randomized join cases checked against the nested-loop oracle, on both
/// the foreign-key and the link encoding. Returns the number of views run.
pub fn join_suite(cases: usize, seed: u64) -> Result<usize, String> {
    let mut r = rng(seed);
    let mut runs = 0;
    for case in 0..cases {
        let n_rels = r.gen_range(2..=4);
        let inst = Inst::random(&mut r, n_rels, 100, 8);
        let dbs = [inst.db(), inst.linked()];
        let two = [0usize, 1];
        let chain: Vec<usize> = (0..n_rels).collect();
        let mut views: Vec<(JoinKind, Vec<usize>, Cond, Vec<usize>)> = vec![
            (JoinKind::Inner, chain.clone(), Cond::Equi { residual: false }, vec![]),
            (JoinKind::Inner, two.to_vec(), Cond::Equi { residual: true }, vec![]),
            (JoinKind::Inner, chain.clone(), Cond::Links, vec![]),
            (JoinKind::Semi, chain.clone(), Cond::Links, vec![r.gen_range(0..n_rels)]),
            (JoinKind::Semi, two.to_vec(), Cond::Equi { residual: false }, vec![r.gen_range(0..2)]),
            (JoinKind::Cross, two.to_vec(), Cond::None, vec![]),
        ];
        let outer_sides = match r.gen_range(0..3) {
            0 => vec![0],
            1 => vec![1],
            _ => vec![0, 1],
        };
        views.push((JoinKind::Outer, two.to_vec(), Cond::Equi { residual: false }, outer_sides.clone()));
        views.push((JoinKind::Outer, two.to_vec(), Cond::Links, outer_sides));
        for (kind, rels, c, side) in views {
            let want = join_oracle(&inst, kind, &rels, c, &side);
            for db in &dbs {
                let got = rows_of(&eval_keys(&join_view(db, kind, &rels, c, &side), db));
                if got != want {
                    return Err(format!(
                        "case {case}: {kind:?} {c:?} over {rels:?} (sides {side:?}): {} rows, oracle {}",
                        got.len(),
                        want.len()
                    ));
                }
                runs += 1;
            }
        }
    }
    Ok(runs)
}

#[derive(Clone, Copy, Debug)]
pub enum Shape3 {
    /// R0.a = R1.b, R1.a = R2.b
    Chain,
    /// R0.a = R1.b, R0.b = R2.a
    Star,
    /// The schema's foreign keys R1.f -> R0, R2.f -> R1.
    Links,
}

#[derive(Clone, Copy, Debug)]
pub enum Filter {
    None,
    AEq(i64),
    BLt(i64),
    ANe(i64),
}

impl Filter {
    fn random(r: &mut ChaCha8Rng) -> Filter {
        match r.gen_range(0..4) {
            0 => Filter::None,
            1 => Filter::AEq(r.gen_range(0..6)),
            2 => Filter::BLt(r.gen_range(0..6)),
            _ => Filter::ANe(r.gen_range(0..6)),
        }
    }

    fn holds(self, row: &Row) -> bool {
        match self {
            Filter::None => true,
            Filter::AEq(v) => row.a == v,
            Filter::BLt(v) => row.b < v,
            Filter::ANe(v) => row.a != v,
        }
    }

    fn predicate(self) -> Option<Predicate> {
        match self {
            Filter::None => None,
            Filter::AEq(v) => Some(Predicate::eq("a", v)),
            Filter::BLt(v) => Some(Predicate::cmp(Operand::attr("b"), CmpOp::Lt, Operand::lit(v))),
            Filter::ANe(v) => Some(Predicate::cmp(Operand::attr("a"), CmpOp::Ne, Operand::lit(v))),
        }
    }
}

fn shape_holds(s: Shape3, rs: &[&Row]) -> bool {
    match s {
        Shape3::Chain => rs[0].a == rs[1].b && rs[1].a == rs[2].b,
        Shape3::Star => rs[0].a == rs[1].b && rs[0].b == rs[2].a,
        Shape3::Links => rs[1].f == Some(rs[0].id) && rs[2].f == Some(rs[1].id),
    }
}

/// Per relation, the ids of rows taking part in some full join result.
pub fn participation(inst: &Inst, s: Shape3, filters: &[Filter; 3]) -> Vec<BTreeSet<i64>> {
    let mut out = vec![BTreeSet::new(); 3];
    // Join the first two relations once, then scan the third.
    for r0 in inst.rels[0].iter().filter(|x| filters[0].holds(x)) {
        for r1 in inst.rels[1].iter().filter(|x| filters[1].holds(x)) {
            let first = match s {
                Shape3::Chain | Shape3::Star => r0.a == r1.b,
                Shape3::Links => r1.f == Some(r0.id),
            };
            if !first {
                continue;
            }
            for r2 in inst.rels[2].iter().filter(|x| filters[2].holds(x)) {
                if shape_holds(s, &[r0, r1, r2]) {
                    out[0].insert(r0.id);
                    out[1].insert(r1.id);
                    out[2].insert(r2.id);
                }
            }
        }
    }
    out
}

pub fn subdb_view(db: &Database, s: Shape3, filters: &[Filter; 3], mode: SubDbMode, outer: &[&str]) -> ViewExpr {
    let names: Vec<String> = (0..3).map(name).collect();
    let fs: Vec<(&str, Predicate)> = filters
        .iter()
        .enumerate()
        .filter_map(|(i, f)| f.predicate().map(|p| (names[i].as_str(), p)))
        .collect();
    let base = ViewExpr::over(db);
    match s {
        Shape3::Links => base.subdb(mode, fs, outer),
        Shape3::Chain => base.subdb_on(
            mode,
            fs,
            outer,
            vec![EquiEdge::new("R0", "a", "R1", "b"), EquiEdge::new("R1", "a", "R2", "b")],
        ),
        Shape3::Star => base.subdb_on(
            mode,
            fs,
            outer,
            vec![EquiEdge::new("R0", "a", "R1", "b"), EquiEdge::new("R0", "b", "R2", "a")],
        ),
    }
    .unwrap()
}

fn ids(m: &Map, rel: &str) -> BTreeSet<i64> {
    m.attr(Symbol::new(rel))
        .and_then(Value::as_map)
        .map(|r| r.keys().map(|k| k.value.as_int().unwrap()).collect())
        .unwrap_or_default()
}

/// Randomized acyclic three-relation reductions against brute-force
/// participation sets, plus idempotence and the outer mode.
pub fn ybr_suite(cases: usize, seed: u64) -> Result<usize, String> {
    let mut r = rng(seed);
    let mut runs = 0;
    for case in 0..cases {
        let inst = Inst::random(&mut r, 3, 100, 6);
        let shape = [Shape3::Chain, Shape3::Star, Shape3::Links][case % 3];
        let filters = [Filter::random(&mut r), Filter::random(&mut r), Filter::random(&mut r)];
        let want = participation(&inst, shape, &filters);
        let db = if r.gen_bool(0.5) { inst.db() } else { inst.linked() };
        let v = subdb_view(&db, shape, &filters, SubDbMode::Inner, &[]);
        let out = eval_map(&v, db.data(), EvalOptions { refs: RefMode::Keep }).map_err(|e| format!("case {case}: {e}"))?;
        for (i, w) in want.iter().enumerate() {
            let got = ids(&out, &name(i));
            if &got != w {
                return Err(format!("case {case}: {shape:?} {filters:?}: R{i} kept {got:?}, oracle {w:?}"));
            }
        }
        for (i, rows) in inst.rels.iter().enumerate() {
            let rel = out.attr(Symbol::new(&name(i))).and_then(Value::as_map).unwrap();
            let orig = db.relation(&name(i)).unwrap();
            for (k, v) in rel.iter() {
                if orig.get(&k.value) != Some(v) {
                    return Err(format!("case {case}: R{i} entry {} changed", k.value));
                }
            }
            let _ = rows;
        }
        let reduced = Database::new(db.schema().clone(), out.clone());
        let again = eval_map(&subdb_view(&reduced, shape, &filters, SubDbMode::Inner, &[]), &out, EvalOptions { refs: RefMode::Keep })
            .map_err(|e| format!("case {case}: {e}"))?;
        if again != out {
            return Err(format!("case {case}: reduction is not idempotent"));
        }
        let kept = r.gen_range(0..3);
        let outer = subdb_view(&db, shape, &filters, SubDbMode::Outer, &[name(kept).as_str()]);
        let o = eval_map(&outer, db.data(), EvalOptions { refs: RefMode::Keep }).map_err(|e| format!("case {case}: {e}"))?;
        for i in 0..3 {
            let expect = if i == kept { inst.rels[i].iter().map(|x| x.id).collect() } else { want[i].clone() };
            if ids(&o, &name(i)) != expect {
                return Err(format!("case {case}: outer mode keeping R{kept}: R{i} differs"));
            }
        }
        runs += 1;
    }
    Ok(runs)
}

/// union(partition(m)) == m over random relations and partition functions.
pub fn partition_roundtrip(cases: usize, seed: u64) -> Result<usize, String> {
    let mut r = rng(seed);
    for case in 0..cases {
        let range = r.gen_range(2..11);
        let inst = Inst::random(&mut r, 2, 100, range);
        let db = inst.db();
        let by = match r.gen_range(0..4) {
            0 => Operand::attr("a"),
            1 => Operand::attr("b"),
            2 => Operand::call("add", vec![Operand::attr("a"), Operand::attr("b")]),
            _ => Operand::lit(0i64),
        };
        let rel = if r.gen_bool(0.5) { "R0" } else { "R1" };
        let t = (**db.schema().relation(Symbol::new(rel)).unwrap()).clone();
        let v = ViewExpr::input(t)
            .partition(rmtm::MapPath::root(), by.clone())
            .and_then(|p| p.set_op(SetKind::Union, SetInputs::Children(rmtm::MapPath::root())))
            .map_err(|e| format!("case {case}: {e}"))?;
        let m = db.relation(rel).unwrap();
        let back = eval_map(&v, m, EvalOptions::default()).map_err(|e| format!("case {case}: {e}"))?;
        if &back != m {
            return Err(format!("case {case}: union of partition by {by:?} differs"));
        }
        // The same at database level, over the linked encoding.
        let tm = inst.linked();
        let v = ViewExpr::over(&tm)
            .partition(rel, by)
            .and_then(|p| p.set_op(SetKind::Union, SetInputs::Children(rel.into())))
            .map_err(|e| format!("case {case}: {e}"))?;
        let back = eval_map(&v, tm.data(), EvalOptions { refs: RefMode::Keep }).map_err(|e| format!("case {case}: {e}"))?;
        if &back != tm.relation(rel).unwrap() {
            return Err(format!("case {case}: database-level union of partition differs"));
        }
    }
    Ok(cases)
}

/// A wide relation whose `e1_*` and `e2_*` attributes depend on `e1`/`e2`.
pub fn wide(r: &mut ChaCha8Rng, rows: usize) -> Database {
    let elem = MapType::rmt([
        EntryType::new("k", Domain::int()),
        EntryType::new("m", Domain::int()),
        EntryType::new("e1", Domain::int()),
        EntryType::new("e1_name", Domain::text()),
        EntryType::new("e2", Domain::text()),
        EntryType::new("e2_x", Domain::int()),
        EntryType::new("e2_y", Domain::int()),
    ]);
    let t = MapType::rhomt(Arc::new(elem), ScalarKind::Int, KeyPolicy::Computed(Projection::Attr(Symbol::new("k"))));
    let n1 = r.gen_range(1..8);
    let n2 = r.gen_range(1..8);
    let salt: i64 = r.gen_range(0..1000);
    let mut m = Map::new();
    for k in 0..rows as i64 {
        let e1 = r.gen_range(0..n1);
        let e2 = r.gen_range(0..n2);
        let t = Map::tuple([
            ("k", k.into()),
            ("m", r.gen_range(-50i64..50).into()),
            ("e1", e1.into()),
            ("e1_name", format!("n{}", (e1 * 7 + salt) % 5).as_str().into()),
            ("e2", format!("x{e2}").as_str().into()),
            ("e2_x", ((e2 * 13 + salt) % 11).into()),
            ("e2_y", (e2 + salt).into()),
        ]);
        m.insert(Key::computed(k), Value::map(t)).unwrap();
    }
    let schema = DatabaseSchema::new().with_relation("W", Arc::new(t));
    Database::new(Arc::new(schema), Map::tuple([("W", Value::map(m))]))
}

pub fn factor_spec() -> FactorizeSpec {
    FactorizeSpec::new(
        "F",
        &["k", "m"],
        vec![
            EntitySpec::new("E1", &["e1"], &["e1", "e1_name"], "to_e1"),
            EntitySpec::new("E2", &["e2"], &["e2", "e2_x", "e2_y"], "to_e2"),
        ],
    )
}

/// denormalize(factorize(w)) == w, and a broken dependency is reported.
pub fn factorize_roundtrip(cases: usize, seed: u64) -> Result<usize, String> {
    let mut r = rng(seed);
    for case in 0..cases {
        let rows = r.gen_range(0..=60);
        let db = wide(&mut r, rows);
        let w = db.relation("W").unwrap();
        let v = ViewExpr::over(&db)
            .factorize("W", factor_spec())
            .and_then(|f| f.denormalize(Some("F")))
            .map_err(|e| format!("case {case}: {e}"))?;
        let back = eval_map(&v, db.data(), EvalOptions::default()).map_err(|e| format!("case {case}: {e}"))?;
        if &back != w {
            return Err(format!("case {case}: denormalize(factorize) differs"));
        }
        let f = ViewExpr::over(&db).factorize("W", factor_spec()).unwrap();
        let parts = eval_map(&f, db.data(), EvalOptions { refs: RefMode::Keep }).unwrap();
        let fdb = Database::new(Arc::new(DatabaseSchema::from_map_type(f.out_type()).unwrap()), parts);
        let rep = fdb.validate().unwrap();
        if !rep.conforms {
            return Err(format!("case {case}: factorized database does not conform: {rep}"));
        }
        if rows >= 2 {
            // Give row 1 the entity of row 0 with a different name.
            let mut bad = w.clone();
            let e1 = w.value_at(0).as_map().unwrap().attr(Symbol::new("e1")).unwrap().clone();
            let mut t = w.value_at(1).as_map().unwrap().clone();
            t.set(Key::sym("e1"), e1);
            t.set(Key::sym("e1_name"), "other".into());
            bad.set(Key::computed(1i64), Value::map(t));
            let input = Map::tuple([("W", Value::map(bad))]);
            match eval_map(&f, &input, EvalOptions::default()) {
                Err(rmtm::Error::FactorizationConflict { witnesses, .. }) if witnesses.len() == 2 => {}
                other => return Err(format!("case {case}: expected a factorization conflict, got {other:?}")),
            }
        }
    }
    Ok(cases)
}

/// unswizzle(swizzle(db)) == db on random instances.
pub fn swizzle_roundtrip(cases: usize, seed: u64) -> Result<usize, String> {
    let mut r = rng(seed);
    for case in 0..cases {
        let n = r.gen_range(1..=4);
        let inst = Inst::random(&mut r, n, 100, 8);
        let db = inst.db();
        let tm = swizzle(&db).map_err(|e| format!("case {case}: {e}"))?;
        if !tm.validate().unwrap().conforms {
            return Err(format!("case {case}: swizzled database does not conform"));
        }
        let back = unswizzle(&tm).map_err(|e| format!("case {case}: {e}"))?;
        if back.data() != db.data() || back.schema() != db.schema() {
            return Err(format!("case {case}: unswizzle(swizzle(db)) differs"));
        }
    }
    Ok(cases)
}

/// Views over the professors example, built against the foreign-key
/// encoding. Link paths (`p/name`) follow foreign keys there and links in
/// the swizzled encoding.
pub fn example_views(db: &Database) -> Vec<ViewExpr> {
    let base = ViewExpr::over(db);
    let give_p = || JoinOn::Links(vec![LinkSpec::new("give", "p", "Professors")]);
    let all_links = || {
        JoinOn::Links(vec![
            LinkSpec::new("give", "p", "Professors"),
            LinkSpec::new("give", "l", "Lectures"),
            LinkSpec::new("give", "d", "Departments"),
        ])
    };
    let four = || {
        vec![
            JoinInput::new("give"),
            JoinInput::new("Professors"),
            JoinInput::new("Lectures"),
            JoinInput::new("Departments"),
        ]
    };
    vec![
        base.clone(),
        base.filter("Professors", Predicate::eq("age", 25)).unwrap(),
        base.filter("give", Predicate::eq("p/name", "Horst")).unwrap(),
        base.extract("give").unwrap().project(rmtm::MapPath::root(), &["room", "year"], true).unwrap(),
        base.project(rmtm::MapPath::root(), &["Professors", "give"], false).unwrap(),
        base.project("give", &["p", "year"], false).unwrap(),
        base.compute("give", vec![("who", Operand::attr("p/name")), ("dept", Operand::attr("d/name"))]).unwrap(),
        base.join(JoinKind::Inner, vec![JoinInput::new("give"), JoinInput::new("Professors")], give_p()).unwrap(),
        base.join(JoinKind::Inner, four(), all_links()).unwrap(),
        base.semi_join(vec![JoinInput::new("Professors"), JoinInput::new("give")], give_p(), "Professors").unwrap(),
        base.outer_join(vec![JoinInput::new("Professors"), JoinInput::new("give")], give_p(), &["Professors"]).unwrap(),
        base.join(JoinKind::Cross, vec![JoinInput::new("Lectures"), JoinInput::new("Departments")], JoinOn::None).unwrap(),
        base.aggregate(
            "give",
            vec![
                GroupSpec::new("Agg1", &["year"], vec![AggSpec::count("count")]),
                GroupSpec::new("Agg2", &["room"], vec![AggSpec::count("count")]),
            ],
        )
        .unwrap(),
        base.aggregate(
            "give",
            vec![GroupSpec::new("by_prof", &["p/name"], vec![AggSpec::count("n"), AggSpec::of(AggFunc::Max, "p/age", "oldest")])],
        )
        .unwrap(),
        base.partition("Professors", Operand::attr("age")).unwrap(),
        base.partition("give", Operand::attr("p/name")).unwrap(),
        base.partition("give", Operand::attr("year"))
            .unwrap()
            .set_op(SetKind::Union, SetInputs::Children("give".into()))
            .unwrap(),
        base.subdb(SubDbMode::Inner, vec![("Professors", Predicate::eq("id", 42)), ("give", Predicate::eq("year", 2025))], &[])
            .unwrap(),
        base.subdb(SubDbMode::Outer, vec![("give", Predicate::eq("year", 2024))], &["Lectures"]).unwrap(),
        base.rename(rmtm::MapPath::root(), RenameScope::Keys, &[("Professors", "Profs")]).unwrap(),
        base.rename("give", RenameScope::Attributes, &[("p", "prof")]).unwrap(),
        base.set_op(SetKind::Minus, SetInputs::Paths(vec!["Professors".into(), "Professors".into()])).unwrap(),
    ]
}

/// Views over a generated instance with at least two relations.
pub fn instance_views(db: &Database) -> Vec<ViewExpr> {
    let base = ViewExpr::over(db);
    vec![
        base.filter("R1", Predicate::cmp(Operand::attr("f/a"), CmpOp::Lt, Operand::lit(4i64))).unwrap(),
        base.compute("R1", vec![("fb", Operand::attr("f/b"))]).unwrap(),
        base.join(JoinKind::Inner, vec![JoinInput::new("R0"), JoinInput::new("R1")], JoinOn::Links(vec![LinkSpec::new("R1", "f", "R0")]))
            .unwrap(),
        base.semi_join(
            vec![JoinInput::new("R0"), JoinInput::new("R1")],
            JoinOn::Links(vec![LinkSpec::new("R1", "f", "R0")]),
            "R0",
        )
        .unwrap(),
        base.aggregate("R1", vec![GroupSpec::new("g", &["f/b"], vec![AggSpec::count("n"), AggSpec::of(AggFunc::Sum, "a", "s")])])
            .unwrap(),
        base.partition("R1", Operand::attr("b")).unwrap(),
        base.project("R1", &["a", "f"], false).unwrap(),
        base.project("R1", &["a", "b"], true).unwrap(),
        base.subdb(SubDbMode::Inner, vec![("R0", Predicate::cmp(Operand::attr("a"), CmpOp::Ge, Operand::lit(3i64)))], &[])
            .unwrap(),
    ]
}

/// The same view evaluated on a database and on its swizzled form gives
/// the same result once links are replaced by the keys they carry.
pub fn swizzle_equivalence(views: &[ViewExpr], rm: &Database, tm: &Database) -> Result<usize, String> {
    let tm_t = tm.schema().as_map_type();
    for (i, v) in views.iter().enumerate() {
        let j = v.to_json();
        let w = ViewExpr::from_json(&j, &tm_t, v.registry().clone()).map_err(|e| format!("view {i}: {e}"))?;
        let a = eval_map(v, rm.data(), EvalOptions { refs: RefMode::Keys }).map_err(|e| format!("view {i}: {e}"))?;
        let b = eval_map(&w, tm.data(), EvalOptions { refs: RefMode::Keys }).map_err(|e| format!("view {i}: {e}"))?;
        if a != b {
            return Err(format!("view {i} differs between encodings: {j}"));
        }
    }
    Ok(views.len())
}

pub fn swizzle_suite(cases: usize, seed: u64) -> Result<usize, String> {
    use rmtm::schema::fixtures::{running_example, Encoding};
    let rm = running_example(Encoding::ForeignKey);
    let tm = running_example(Encoding::Link);
    let mut n = swizzle_equivalence(&example_views(&rm), &rm, &tm)?;
    let back = unswizzle(&tm).map_err(|e| e.to_string())?;
    if back.data() != rm.data() {
        return Err("unswizzle(swizzle(example)) differs".into());
    }
    let mut r = rng(seed);
    for case in 0..cases {
        let k = r.gen_range(2..=3);
        let inst = Inst::random(&mut r, k, 60, 6);
        let rm = inst.db();
        n += swizzle_equivalence(&instance_views(&rm), &rm, &inst.linked()).map_err(|e| format!("case {case}: {e}"))?;
    }
    // Flattening: a factorized (linked) database and its foreign-key form.
    let w = wide(&mut r, 30);
    let parts = ViewExpr::over(&w).factorize("W", factor_spec()).unwrap();
    let tm = Database::new(
        Arc::new(DatabaseSchema::from_map_type(parts.out_type()).unwrap()),
        eval_map(&parts, w.data(), EvalOptions { refs: RefMode::Keep }).unwrap(),
    );
    let rm = unswizzle(&tm).map_err(|e| e.to_string())?;
    let flat = ViewExpr::over(&rm).denormalize(Some("F")).unwrap();
    n += swizzle_equivalence(&[flat], &rm, &tm)?;
    Ok(n)
}

/// Text payloads that read like expressions or serialized view fragments.
pub const ADVERSARIAL: &[&str] = &[
    "age==25 or true",
    "' OR '1'='1",
    "Horst\" || true || \"",
    "\"}, {\"op\": \"delete\", \"path\": [\"Professors\"], \"pred\": \"true\"}",
    "{\"attr\": [\"age\"]}",
    "$key",
    "*",
    "p/name",
    "give.p",
    "'; DROP TABLE Professors; --",
    "1; update Professors set age = 0",
    "",
    "\u{0}\u{7f}",
    "Luke\nage==35",
    "🙂 OR 1=1",
];

/// Adversarial literals never alter the expression tree and are matched
/// only as plain strings.
pub fn injection_suite() -> Result<usize, String> {
    use rmtm::schema::fixtures::{running_example, Encoding};
    let mut checked = 0;
    for enc in [Encoding::ForeignKey, Encoding::Link] {
        let db = running_example(enc);
        let reference = |lit: &str| {
            let base = ViewExpr::over(&db);
            vec![
                base.filter("Professors", Predicate::eq("name", lit)).unwrap(),
                base.filter("give", Predicate::eq("p/name", lit).and(Predicate::eq("room", lit))).unwrap(),
                base.compute("Professors", vec![("tag", Operand::call("concat", vec![Operand::attr("name"), Operand::lit(lit)]))])
                    .unwrap(),
                base.subdb(SubDbMode::Inner, vec![("Professors", Predicate::eq("name", lit))], &[]).unwrap(),
            ]
        };
        let plain = reference("x");
        for payload in ADVERSARIAL {
            let views = reference(payload);
            for (a, b) in views.iter().zip(&plain) {
                if a.shape() != b.shape() {
                    return Err(format!("payload {payload:?} changed the tree"));
                }
                let back = ViewExpr::from_json(&a.to_json(), a.in_type(), a.registry().clone()).map_err(|e| e.to_string())?;
                if &back != a {
                    return Err(format!("payload {payload:?} did not survive serialization"));
                }
            }
            // Plant one professor whose name is the payload: exactly that
            // one matches.
            let mut profs = db.relation("Professors").unwrap().clone();
            profs.set(
                Key::computed(99i64),
                Value::map(Map::tuple([("id", 99i64.into()), ("name", (*payload).into()), ("age", 1i64.into())])),
            );
            let data = db.with_relation(Symbol::new("Professors"), profs);
            let out = eval_map(&views[0], data.data(), EvalOptions::default()).map_err(|e| e.to_string())?;
            let hit = out.attr(Symbol::new("Professors")).and_then(Value::as_map).unwrap();
            let keys: Vec<i64> = hit.keys().map(|k| k.value.as_int().unwrap()).collect();
            if keys != vec![99] {
                return Err(format!("payload {payload:?} matched {keys:?}"));
            }
            let out = eval_map(&views[1], db.data(), EvalOptions::default()).map_err(|e| e.to_string())?;
            if !out.attr(Symbol::new("give")).and_then(Value::as_map).unwrap().is_empty() {
                return Err(format!("payload {payload:?} matched give rows"));
            }
            let out = eval_map(&views[2], db.data(), EvalOptions::default()).map_err(|e| e.to_string())?;
            for e in out.attr(Symbol::new("Professors")).and_then(Value::as_map).unwrap().values() {
                let m = e.as_map().unwrap();
                let name = m.attr(Symbol::new("name")).unwrap().as_scalar().unwrap().as_str().unwrap().to_string();
                let tag = m.attr(Symbol::new("tag")).unwrap().as_scalar().unwrap().as_str().unwrap().to_string();
                if tag != format!("{name}{payload}") {
                    return Err(format!("payload {payload:?} was not concatenated literally"));
                }
            }
            checked += 1;
        }
        // Naming a key through a literal-looking string is a construction error,
        // never a reinterpretation. `$key` is the one real name in the list.
        let base = ViewExpr::over(&db);
        for payload in ADVERSARIAL.iter().filter(|p| **p != "$key") {
            if base.filter("Professors", Predicate::eq(payload, 1i64)).is_ok() {
                return Err(format!("{payload:?} was accepted as a key path"));
            }
        }
    }
    Ok(checked)
}

fn random_write(r: &mut ChaCha8Rng, base: &ViewExpr, step: usize) -> ViewExpr {
    let pid = [42i64, 31, 32][r.gen_range(0..3)];
    match r.gen_range(0..4) {
        0 => base
            .update("Professors", Predicate::eq("id", pid), vec![("name", Operand::lit(format!("P{step}").as_str()))])
            .unwrap(),
        1 => base
            .update("Professors", Predicate::True, vec![("age", Operand::call("add", vec![Operand::attr("age"), Operand::lit(1i64)]))])
            .unwrap(),
        2 => base
            .insert(
                "give",
                vec![InsertRow::new(Map::tuple([
                    ("p", pid.into()),
                    ("l", [17i64, 66][r.gen_range(0..2)].into()),
                    ("d", [1i64, 2][r.gen_range(0..2)].into()),
                    ("room", format!("R{}", r.gen_range(1..4)).as_str().into()),
                    ("year", (2024 + r.gen_range(0..3) as i64).into()),
                ]))],
            )
            .unwrap(),
        _ => base.delete("give", Predicate::eq("year", 2024 + r.gen_range(0..3) as i64)).unwrap(),
    }
}

fn reader_views(db: &Database) -> Vec<ViewExpr> {
    let v = example_views(db);
    // identity, link-following filter, 4-way join, grouping sets, subdb
    vec![v[0].clone(), v[2].clone(), v[8].clone(), v[12].clone(), v[13].clone(), v[17].clone()]
}

fn names_via_links(s: &rmtm::engine::Snapshot) -> Vec<Scalar> {
    let profs = rmtm::MapPath::from("Professors");
    s.relation("give")
        .unwrap()
        .values()
        .iter()
        .map(|g| {
            let p = g.as_map().unwrap().attr(Symbol::new("p")).unwrap();
            let prof = s.resolve(&profs, p).unwrap();
            prof.as_map().unwrap().attr(Symbol::new("name")).unwrap().as_scalar().unwrap().clone()
        })
        .collect()
}

struct Reader {
    snap: Option<rmtm::engine::Snapshot>,
    step: usize,
    results: Vec<Map>,
    names: Vec<Scalar>,
}

/// Interleaves commits with the steps of several readers under a seeded
/// schedule; each reader evaluates its views one step at a time and walks
/// `give` resolving professor names one entry at a time. Every result must
/// equal the evaluation against the single version the reader started on.
pub fn snapshot_suite(schedules: usize, seed: u64) -> Result<usize, String> {
    use rmtm::engine::Store;
    use rmtm::schema::fixtures::{running_example, Encoding};
    let mut r = rng(seed);
    let mut checked = 0;
    let mut spread = 0;
    for sched in 0..schedules {
        let enc = if sched % 2 == 0 { Encoding::Link } else { Encoding::ForeignKey };
        let store = Store::new();
        store.create_database("uni", running_example(enc)).unwrap();
        let views = reader_views(store.begin_snapshot("uni").unwrap().database());
        let mut readers: Vec<Reader> = (0..4)
            .map(|_| Reader {
                snap: None,
                step: 0,
                results: Vec::new(),
                names: Vec::new(),
            })
            .collect();
        let mut finished = Vec::new();
        let mut commits = 0;
        while commits < 12 || !readers.is_empty() {
            if commits < 12 && r.gen_bool(0.4) {
                let base = ViewExpr::over(store.begin_snapshot("uni").unwrap().database());
                let w = random_write(&mut r, &base, commits);
                match store.commit_in_place("uni", &w) {
                    Ok(_) | Err(rmtm::Error::RejectedRewrite(_)) => {}
                    Err(e) => return Err(format!("schedule {sched}: commit failed: {e}")),
                }
                commits += 1;
                continue;
            }
            if readers.is_empty() {
                continue;
            }
            let i = r.gen_range(0..readers.len());
            let rd = &mut readers[i];
            let snap = rd.snap.get_or_insert_with(|| store.begin_snapshot("uni").unwrap()).clone();
            let n_give = snap.relation("give").unwrap().len();
            if rd.step < views.len() {
                let v = &views[rd.step];
                rd.results.push(eval_snapshot(v, &snap, EvalOptions { refs: RefMode::Keys }).map_err(|e| e.to_string())?);
            } else if rd.step < views.len() + n_give {
                let k = rd.step - views.len();
                let g = snap.relation("give").unwrap().value_at(k).clone();
                let p = g.as_map().unwrap().attr(Symbol::new("p")).unwrap().clone();
                let prof = snap.resolve(&rmtm::MapPath::from("Professors"), &p).unwrap();
                rd.names.push(prof.as_map().unwrap().attr(Symbol::new("name")).unwrap().as_scalar().unwrap().clone());
            }
            rd.step += 1;
            if rd.step >= views.len() + n_give {
                finished.push(readers.swap_remove(i));
            }
        }
        if store.latest_version("uni").unwrap() < 6 {
            return Err(format!("schedule {sched}: too few commits went through"));
        }
        let distinct: BTreeSet<u64> = finished.iter().map(|r| r.snap.as_ref().unwrap().version()).collect();
        spread += distinct.len();
        for rd in finished {
            let snap = rd.snap.unwrap();
            let fresh = store.snapshot_at("uni", snap.version()).map_err(|e| e.to_string())?;
            for (v, got) in views.iter().zip(&rd.results) {
                let want = eval_snapshot(v, &fresh, EvalOptions { refs: RefMode::Keys }).map_err(|e| e.to_string())?;
                if &want != got {
                    return Err(format!("schedule {sched}: a reader on v{} saw another version", snap.version()));
                }
                checked += 1;
            }
            if rd.names != names_via_links(&fresh) {
                return Err(format!("schedule {sched}: a name lookup mixed versions"));
            }
        }
    }
    if spread <= schedules {
        return Err("readers never started on different versions".into());
    }
    Ok(checked)
}

/// One writer thread and several reader threads on a shared store.
pub fn threaded_snapshots(seed: u64) -> Result<usize, String> {
    use rmtm::engine::Store;
    use rmtm::schema::fixtures::{running_example, Encoding};
    let store = Arc::new(Store::new());
    store.create_database("uni", running_example(Encoding::Link)).unwrap();
    let views = Arc::new(reader_views(store.begin_snapshot("uni").unwrap().database()));
    let start = Arc::new(std::sync::Barrier::new(5));
    let done = Arc::new(std::sync::atomic::AtomicBool::new(false));
    let writer = {
        let store = store.clone();
        let start = start.clone();
        let done = done.clone();
        std::thread::spawn(move || {
            start.wait();
            let mut r = rng(seed);
            for step in 0..40 {
                let base = ViewExpr::over(store.begin_snapshot("uni").unwrap().database());
                let w = random_write(&mut r, &base, step);
                if let Err(e) = store.commit_in_place("uni", &w) {
                    assert!(matches!(e, rmtm::Error::RejectedRewrite(_)), "{e}");
                }
                std::thread::yield_now();
            }
            done.store(true, std::sync::atomic::Ordering::Release);
        })
    };
    let readers: Vec<_> = (0..4)
        .map(|_| {
            let store = store.clone();
            let views = views.clone();
            let start = start.clone();
            let done = done.clone();
            std::thread::spawn(move || {
                let mut seen = Vec::new();
                start.wait();
                while !done.load(std::sync::atomic::Ordering::Acquire) || seen.len() < 5 {
                    let snap = store.begin_snapshot("uni").unwrap();
                    let res: Vec<Map> = views
                        .iter()
                        .map(|v| eval_snapshot(v, &snap, EvalOptions { refs: RefMode::Keys }).unwrap())
                        .collect();
                    seen.push((snap.version(), res, names_via_links(&snap)));
                }
                seen
            })
        })
        .collect();
    writer.join().map_err(|_| "writer panicked".to_string())?;
    if store.latest_version("uni").unwrap() < 20 {
        return Err("the writer committed too few versions".into());
    }
    let mut checked = 0;
    let mut versions = BTreeSet::new();
    for h in readers {
        for (version, res, names) in h.join().map_err(|_| "reader panicked".to_string())? {
            versions.insert(version);
            let fresh = store.snapshot_at("uni", version).map_err(|e| e.to_string())?;
            for (v, got) in views.iter().zip(&res) {
                if &eval_snapshot(v, &fresh, EvalOptions { refs: RefMode::Keys }).unwrap() != got {
                    return Err(format!("a threaded reader on v{version} saw another version"));
                }
                checked += 1;
            }
            if names != names_via_links(&fresh) {
                return Err(format!("threaded name lookups on v{version} mixed versions"));
            }
        }
    }
    if versions.len() < 2 {
        return Err("threaded readers never overlapped the writer".into());
    }
    Ok(checked)
}
