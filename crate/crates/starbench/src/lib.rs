//! Star-schema join benchmark.
//!
//! A fact table references `n_dims` dimension tables. The relational
//! kernel builds a hash index per dimension and probes it for every fact;
//! the linked kernel follows each fact's swizzled links straight to the
//! dimension rows. Both fold their results into the same order-independent
//! checksum, so every timing row doubles as a correctness check.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmtm::schema::{swizzle, Database, DatabaseSchema, Linker};
use rmtm::{
    Domain, EntryType, Error, Key, KeyLayout, KeyPolicy, Map, MapPath, MapType, Projection, Result, Scalar, ScalarKind,
    Symbol, Value,
};

pub const FACTS: &str = "facts";
pub const MAX_DIMS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StarConfig {
    pub n_facts: usize,
    pub n_dims: usize,
    pub dim_size: usize,
    pub seed: u64,
}

impl Default for StarConfig {
    /// Desk scale: one million facts over 100-row dimensions.
    fn default() -> Self {
        StarConfig {
            n_facts: 1_000_000,
            n_dims: 5,
            dim_size: 100,
            seed: 42,
        }
    }
}

impl StarConfig {
    pub fn check(&self) -> Result<()> {
        if self.dim_size == 0 {
            return Err(Error::InvalidSchema("dim_size must be at least 1".into()));
        }
        if !(1..=MAX_DIMS).contains(&self.n_dims) {
            return Err(Error::InvalidSchema(format!("n_dims must be in 1..={MAX_DIMS}")));
        }
        Ok(())
    }
}

pub fn dim_name(k: usize) -> String {
    format!("D{}", k + 1)
}

pub fn fk_name(k: usize) -> String {
    format!("d{}", k + 1)
}

/// Generated rows before they are turned into maps.
#[derive(Clone, Debug, PartialEq)]
pub struct RawStar {
    pub cfg: StarConfig,
    /// `payloads[k][id]` of dimension `k`.
    pub payloads: Vec<Vec<i64>>,
    /// Row-major `n_facts x n_dims` foreign keys.
    pub fks: Vec<u32>,
    pub measures: Vec<i64>,
}

/// Uniform foreign keys and payloads, deterministic in the seed.
pub fn generate_raw(cfg: StarConfig) -> Result<RawStar> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let payloads = (0..cfg.n_dims)
        .map(|_| (0..cfg.dim_size).map(|_| rng.gen_range(0..1_000_000)).collect())
        .collect();
    let cells = cfg
        .n_facts
        .checked_mul(cfg.n_dims)
        .ok_or_else(|| Error::InvalidSchema("fact table too large".into()))?;
    let mut fks = Vec::new();
    fks.try_reserve_exact(cells)
        .map_err(|e| Error::InvalidSchema(format!("cannot allocate {cells} foreign keys: {e}")))?;
    let mut measures = Vec::new();
    measures
        .try_reserve_exact(cfg.n_facts)
        .map_err(|e| Error::InvalidSchema(format!("cannot allocate {} measures: {e}", cfg.n_facts)))?;
    for _ in 0..cfg.n_facts {
        for _ in 0..cfg.n_dims {
            fks.push(rng.gen_range(0..cfg.dim_size as u32));
        }
        measures.push(rng.gen_range(-1000..1000));
    }
    Ok(RawStar {
        cfg,
        payloads,
        fks,
        measures,
    })
}

/// The foreign-key encoded star schema.
pub fn star_schema(n_dims: usize) -> DatabaseSchema {
    schema_with(n_dims, |k| Domain::foreign_key(dim_name(k).as_str(), ScalarKind::Int))
}

/// The same schema with links in place of foreign keys.
pub fn linked_star_schema(n_dims: usize) -> DatabaseSchema {
    schema_with(n_dims, |k| Domain::Enumeration {
        target: MapPath::from(dim_name(k).as_str()),
        fk_kind: Some(ScalarKind::Int),
    })
}

fn schema_with(n_dims: usize, fk: impl Fn(usize) -> Domain) -> DatabaseSchema {
    let mut s = DatabaseSchema::new();
    let dim_t = Arc::new(MapType::rmt([
        EntryType::new("id", Domain::int()),
        EntryType::new("payload", Domain::int()),
    ]));
    for k in 0..n_dims {
        s = s.with_relation(
            &dim_name(k),
            Arc::new(MapType::rhomt(
                dim_t.clone(),
                ScalarKind::Int,
                KeyPolicy::Computed(Projection::Attr(Symbol::new("id"))),
            )),
        );
    }
    let mut entries: Vec<EntryType> = (0..n_dims)
        .map(|k| EntryType::new(&fk_name(k), fk(k)))
        .collect();
    entries.push(EntryType::new("measure", Domain::int()));
    s.with_relation(
        FACTS,
        Arc::new(MapType::rhomt(Arc::new(MapType::rmt(entries)), ScalarKind::Int, KeyPolicy::Surrogate)),
    )
}

fn layout(keys: impl IntoIterator<Item = Key>) -> Arc<KeyLayout> {
    Arc::new(keys.into_iter().collect())
}

fn build_dims(raw: &RawStar) -> Result<Map> {
    let mut data = Map::with_capacity(raw.cfg.n_dims + 1);
    let dim_layout = layout([Key::sym("id"), Key::sym("payload")]);
    for (k, payloads) in raw.payloads.iter().enumerate() {
        let keys = layout((0..payloads.len() as i64).map(Key::computed));
        let rows = payloads
            .iter()
            .enumerate()
            .map(|(id, p)| Map::with_layout(dim_layout.clone(), vec![(id as i64).into(), (*p).into()]).map(Value::map))
            .collect::<Result<Vec<_>>>()?;
        data.insert(Key::sym(&dim_name(k)), Value::map(Map::with_layout(keys, rows)?))?;
    }
    Ok(data)
}

/// Builds the fact relation, encoding each foreign key with `fk`.
fn build_facts(raw: &RawStar, mut fk: impl FnMut(usize, i64) -> Result<Value>) -> Result<Map> {
    let n = raw.cfg.n_dims;
    let fact_layout = layout((0..n).map(|k| Key::sym(&fk_name(k))).chain([Key::sym("measure")]));
    let keys = layout((0..raw.measures.len() as u64).map(Key::surrogate));
    let mut rows = Vec::with_capacity(raw.measures.len());
    for (i, m) in raw.measures.iter().enumerate() {
        let mut vals = Vec::with_capacity(n + 1);
        for (d, x) in raw.fks[i * n..(i + 1) * n].iter().enumerate() {
            vals.push(fk(d, *x as i64)?);
        }
        vals.push((*m).into());
        rows.push(Value::map(Map::with_layout(fact_layout.clone(), vals)?));
    }
    Map::with_layout(keys, rows)
}

/// Builds the foreign-key encoded database.
pub fn build_rm(raw: &RawStar) -> Result<Database> {
    let mut data = build_dims(raw)?;
    let facts = build_facts(raw, |_, x| Ok(Value::Scalar(Scalar::Int(x))))?;
    data.insert(Key::sym(FACTS), Value::map(facts))?;
    Ok(Database::new(Arc::new(star_schema(raw.cfg.n_dims)), data))
}

/// Builds the linked database directly, swizzling while loading: every
/// foreign key is resolved to a link as its fact is built. The result
/// equals `swizzle(&build_rm(raw))`.
pub fn build_rmtm(raw: &RawStar) -> Result<Database> {
    let mut data = build_dims(raw)?;
    let paths: Vec<MapPath> = (0..raw.cfg.n_dims).map(|k| MapPath::from(dim_name(k).as_str())).collect();
    let facts = {
        let mut linkers = paths.iter().map(|p| Linker::new(&data, p)).collect::<Result<Vec<_>>>()?;
        build_facts(raw, |d, x| {
            linkers[d]
                .link(&Scalar::Int(x))
                .map(Value::Ref)
                .ok_or_else(|| Error::ReferentialViolation(format!("{FACTS}: key {x} has no match in {}", paths[d])))
        })?
    };
    data.insert(Key::sym(FACTS), Value::map(facts))?;
    Ok(Database::new(Arc::new(linked_star_schema(raw.cfg.n_dims)), data))
}

/// Both encodings of a star: foreign keys, and its swizzled form.
pub fn generate_star(cfg: StarConfig) -> Result<(Database, Database)> {
    let rm = build_rm(&generate_raw(cfg)?)?;
    let rmtm = swizzle(&rm)?;
    Ok((rm, rmtm))
}

/// Per dimension, an optional membership predicate on the dimension key:
/// `keep[id]` says whether rows with that key take part.
pub type DimFilters = Vec<Option<Vec<bool>>>;

pub fn no_filters(n_dims: usize) -> DimFilters {
    vec![None; n_dims]
}

/// Keeps `keep` of the `dim_size` rows of dimension `dim`, chosen by seed.
pub fn selective(n_dims: usize, dim_size: usize, dim: usize, keep: usize, seed: u64) -> DimFilters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..dim_size).collect();
    for i in 0..keep.min(dim_size) {
        let j = rng.gen_range(i..dim_size);
        ids.swap(i, j);
    }
    let mut mask = vec![false; dim_size];
    for id in &ids[..keep.min(dim_size)] {
        mask[*id] = true;
    }
    let mut f = no_filters(n_dims);
    f[dim] = Some(mask);
    f
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JoinOutput {
    pub count: u64,
    pub checksum: u64,
    pub elapsed: Duration,
}

#[inline]
fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Accumulates one concatenated result row. Rows are combined by addition,
/// so the checksum does not depend on the order rows are produced in.
#[derive(Clone, Copy)]
struct RowHash(u64);

impl RowHash {
    #[inline]
    fn new(fact_key: i64, measure: i64) -> RowHash {
        RowHash(mix(fact_key as u64 ^ mix(measure as u64)))
    }

    #[inline]
    fn add(&mut self, dim: usize, id: i64, payload: i64) {
        self.0 = mix(self.0 ^ mix(((dim as u64) << 56) ^ id as u64) ^ (payload as u64).rotate_left(17));
    }
}

fn relation<'a>(db: &'a Database, name: &str) -> Result<&'a Map> {
    db.relation(name)
        .ok_or_else(|| Error::UnknownKey(format!("relation {name}")))
}

fn int(v: &Value) -> Result<i64> {
    v.as_scalar()
        .and_then(Scalar::as_int)
        .ok_or_else(|| Error::TypeMismatch(format!("expected an integer, found {v:?}")))
}

/// Positions of named attributes, resolved once per shared tuple layout.
struct Positions {
    names: Vec<Scalar>,
    layout: Option<Arc<KeyLayout>>,
    pos: Vec<usize>,
}

impl Positions {
    fn new(names: impl IntoIterator<Item = String>) -> Positions {
        Positions {
            names: names.into_iter().map(|n| Scalar::sym(&n)).collect(),
            layout: None,
            pos: Vec::new(),
        }
    }

    #[inline]
    fn of(&mut self, m: &Map) -> Result<&[usize]> {
        if !matches!(&self.layout, Some(l) if Arc::ptr_eq(l, m.layout())) {
            self.pos = self
                .names
                .iter()
                .map(|n| m.position(n).ok_or_else(|| Error::UnknownKey(n.to_string())))
                .collect::<Result<_>>()?;
            self.layout = Some(m.layout().clone());
        }
        Ok(&self.pos)
    }
}

fn n_dims(db: &Database) -> usize {
    (0..MAX_DIMS).take_while(|k| db.relation(&dim_name(*k)).is_some()).count()
}

fn check_filters(filters: &DimFilters, n: usize) -> Result<()> {
    if filters.len() != n {
        return Err(Error::InvalidView(format!("{} filters for {n} dimensions", filters.len())));
    }
    Ok(())
}

/// Hash star join over foreign keys: one hash table per dimension, then a
/// probe per fact and dimension, stopping at the first miss.
pub fn run_rm_star_join(db: &Database, filters: &DimFilters) -> Result<JoinOutput> {
    let n = n_dims(db);
    check_filters(filters, n)?;
    let facts = relation(db, FACTS)?;
    let dims: Vec<&Map> = (0..n).map(|k| relation(db, &dim_name(k))).collect::<Result<_>>()?;
    let start = Instant::now();

    let mut dim_pos = Positions::new(["id".to_string(), "payload".to_string()]);
    let mut tables: Vec<HashMap<i64, (i64, i64)>> = Vec::with_capacity(n);
    for d in &dims {
        let mut t = HashMap::with_capacity(d.len());
        for (k, v) in d.iter() {
            let row = v.deref_map().ok_or_else(|| Error::InvalidView("dimension rows must be maps".into()))?;
            let p = dim_pos.of(row)?;
            let key = k.value.as_int().ok_or_else(|| Error::TypeMismatch("dimension keys are integers".into()))?;
            t.insert(key, (int(row.value_at(p[0]))?, int(row.value_at(p[1]))?));
        }
        tables.push(t);
    }

    let mut fact_pos = Positions::new((0..n).map(fk_name).chain(["measure".to_string()]));
    let (mut count, mut checksum) = (0u64, 0u64);
    'facts: for (k, v) in facts.iter() {
        let row = v.deref_map().ok_or_else(|| Error::InvalidView("fact rows must be maps".into()))?;
        let p = fact_pos.of(row)?;
        let mut h = RowHash::new(k.value.as_int().unwrap_or(0), int(row.value_at(p[n]))?);
        for d in 0..n {
            let fk = match row.value_at(p[d]) {
                Value::Scalar(Scalar::Int(x)) => *x,
                other => return Err(Error::TypeMismatch(format!("{} holds {other:?}, not a foreign key", fk_name(d)))),
            };
            let Some(&(id, payload)) = tables[d].get(&fk) else { continue 'facts };
            if let Some(keep) = &filters[d] {
                if !keep.get(id as usize).copied().unwrap_or(false) {
                    continue 'facts;
                }
            }
            h.add(d, id, payload);
        }
        count += 1;
        checksum = checksum.wrapping_add(h.0);
    }
    Ok(JoinOutput {
        count,
        checksum,
        elapsed: start.elapsed(),
    })
}

/// Star join over swizzled links: no index, each fact dereferences its
/// dimension links directly.
pub fn run_rmtm_star_join(db: &Database, filters: &DimFilters) -> Result<JoinOutput> {
    let n = n_dims(db);
    check_filters(filters, n)?;
    let facts = relation(db, FACTS)?;
    let start = Instant::now();

    let mut fact_pos = Positions::new((0..n).map(fk_name).chain(["measure".to_string()]));
    let mut dim_pos = Positions::new(["id".to_string(), "payload".to_string()]);
    let (mut count, mut checksum) = (0u64, 0u64);
    'facts: for (k, v) in facts.iter() {
        let row = v.deref_map().ok_or_else(|| Error::InvalidView("fact rows must be maps".into()))?;
        let p = fact_pos.of(row)?;
        let mut h = RowHash::new(k.value.as_int().unwrap_or(0), int(row.value_at(p[n]))?);
        for d in 0..n {
            let dim_row = match row.value_at(p[d]) {
                Value::Ref(r) => match r.target() {
                    Value::Map(m) => m,
                    _ => panic!("dangling link in a swizzled fact table"),
                },
                other => return Err(Error::TypeMismatch(format!("{} holds {other:?}, not a link", fk_name(d)))),
            };
            let dp = dim_pos.of(dim_row)?;
            let id = int(dim_row.value_at(dp[0]))?;
            if let Some(keep) = &filters[d] {
                if !keep.get(id as usize).copied().unwrap_or(false) {
                    continue 'facts;
                }
            }
            h.add(d, id, int(dim_row.value_at(dp[1]))?);
        }
        count += 1;
        checksum = checksum.wrapping_add(h.0);
    }
    Ok(JoinOutput {
        count,
        checksum,
        elapsed: start.elapsed(),
    })
}

/// Straight from the generated rows: the reference result.
pub fn reference_join(raw: &RawStar, filters: &DimFilters) -> (u64, u64) {
    let n = raw.cfg.n_dims;
    let (mut count, mut checksum) = (0u64, 0u64);
    'facts: for (i, m) in raw.measures.iter().enumerate() {
        let mut h = RowHash::new(i as i64, *m);
        for d in 0..n {
            let id = raw.fks[i * n + d] as usize;
            if let Some(keep) = &filters[d] {
                if !keep[id] {
                    continue 'facts;
                }
            }
            h.add(d, id as i64, raw.payloads[d][id]);
        }
        count += 1;
        checksum = checksum.wrapping_add(h.0);
    }
    (count, checksum)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub n_dims: usize,
    pub n_facts: usize,
    pub dim_size: usize,
    pub rm_build_ms: f64,
    pub rmtm_build_ms: f64,
    pub swizzle_ms: f64,
    pub swizzle_pass_ms: f64,
    pub rm_join_ms: f64,
    pub rmtm_join_ms: f64,
    pub improvement: f64,
    pub checksum_match: bool,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub fn median(xs: &mut [f64]) -> f64 {
    assert!(!xs.is_empty());
    xs.sort_by(|a, b| a.total_cmp(b));
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

/// Runs one configuration `reps` times and reports medians. The linked
/// build swizzles while loading, so its extra cost over the relational
/// build is the swizzle overhead. `swizzle_pass_ms` separately times
/// swizzling an already built relational database.
pub fn run_config(cfg: StarConfig, reps: usize, filters: &DimFilters) -> Result<BenchRow> {
    if reps == 0 {
        return Err(Error::InvalidView("at least one repetition".into()));
    }
    let raw = generate_raw(cfg)?;
    let mut t_rm_build = Vec::with_capacity(reps);
    let mut t_rmtm_build = Vec::with_capacity(reps);
    let mut t_pass = Vec::with_capacity(reps);
    let mut t_rm_join = Vec::with_capacity(reps);
    let mut t_rmtm_join = Vec::with_capacity(reps);
    let mut matched = true;
    for _ in 0..reps {
        let t = Instant::now();
        let rm = build_rm(&raw)?;
        t_rm_build.push(ms(t.elapsed()));
        let a = run_rm_star_join(&rm, filters)?;
        let t = Instant::now();
        let passed = swizzle(&rm)?;
        t_pass.push(ms(t.elapsed()));
        drop(passed);
        drop(rm);

        let t = Instant::now();
        let rmtm = build_rmtm(&raw)?;
        t_rmtm_build.push(ms(t.elapsed()));
        let b = run_rmtm_star_join(&rmtm, filters)?;
        drop(rmtm);

        matched &= a.count == b.count && a.checksum == b.checksum;
        t_rm_join.push(ms(a.elapsed));
        t_rmtm_join.push(ms(b.elapsed));
    }
    let rm_build_ms = median(&mut t_rm_build);
    let rmtm_build_ms = median(&mut t_rmtm_build);
    let rm_join_ms = median(&mut t_rm_join);
    let rmtm_join_ms = median(&mut t_rmtm_join);
    Ok(BenchRow {
        n_dims: cfg.n_dims,
        n_facts: cfg.n_facts,
        dim_size: cfg.dim_size,
        rm_build_ms,
        rmtm_build_ms,
        swizzle_ms: rmtm_build_ms - rm_build_ms,
        swizzle_pass_ms: median(&mut t_pass),
        rm_join_ms,
        rmtm_join_ms,
        improvement: rm_join_ms / rmtm_join_ms,
        checksum_match: matched,
    })
}

/// One row per dimension count, matching every fact (no filters).
pub fn run_suite(template: StarConfig, dims: std::ops::RangeInclusive<usize>, reps: usize) -> Result<Vec<BenchRow>> {
    dims.map(|n| {
        let cfg = StarConfig { n_dims: n, ..template };
        run_config(cfg, reps, &no_filters(n))
    })
    .collect()
}

pub const CSV_HEADER: &str =
    "n_dims,n_facts,dim_size,rm_build_ms,rmtm_build_ms,swizzle_ms,rm_join_ms,rmtm_join_ms,improvement,checksum_match,swizzle_pass_ms";

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{},{:.3}",
            r.n_dims,
            r.n_facts,
            r.dim_size,
            r.rm_build_ms,
            r.rmtm_build_ms,
            r.swizzle_ms,
            r.rm_join_ms,
            r.rmtm_join_ms,
            r.improvement,
            r.checksum_match,
            r.swizzle_pass_ms
        );
    }
    s
}
