//! The professors/lectures/departments example database, in a
//! foreign-key encoding and in a link encoding.

use std::sync::Arc;

use super::{swizzle, Database, DatabaseSchema};
use crate::model::{Domain, EntryType, Key, KeyPolicy, Map, MapType, Projection, ScalarKind, Symbol, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoding {
    /// Relationship attributes hold the target's key (relational style).
    ForeignKey,
    /// Relationship attributes link directly to the target entry.
    Link,
}

pub fn profs_rmt() -> MapType {
    MapType::rmt([
        EntryType::new("id", Domain::int()),
        EntryType::new("name", Domain::text()),
        EntryType::new("age", Domain::int()),
    ])
}

fn keyed_by_id(elem: MapType) -> Arc<MapType> {
    Arc::new(MapType::rhomt(
        Arc::new(elem),
        ScalarKind::Int,
        KeyPolicy::Computed(Projection::Attr(Symbol::new("id"))),
    ))
}

pub fn running_example_schema() -> DatabaseSchema {
    let profs = Arc::new(profs_rmt());
    let lectures = MapType::rmt([EntryType::new("id", Domain::int()), EntryType::new("name", Domain::text())]);
    let departments = MapType::rmt([
        EntryType::new("id", Domain::int()),
        EntryType::new("name", Domain::text()),
        EntryType::new("size", Domain::int()),
    ]);
    let give = MapType::rmt([
        EntryType::new("p", Domain::foreign_key("Professors", ScalarKind::Int)),
        EntryType::new("l", Domain::foreign_key("Lectures", ScalarKind::Int)),
        EntryType::new("d", Domain::foreign_key("Departments", ScalarKind::Int)),
        EntryType::new("room", Domain::text()),
        EntryType::new("year", Domain::int()),
    ]);
    DatabaseSchema::new()
        .with_type("ProfsRMT", profs.clone())
        .with_relation("Professors", keyed_by_id((*profs).clone()))
        .with_relation("Lectures", keyed_by_id(lectures))
        .with_relation("Departments", keyed_by_id(departments))
        .with_relation(
            "give",
            Arc::new(MapType::rhomt(Arc::new(give), ScalarKind::Int, KeyPolicy::Surrogate)),
        )
}

pub const PROFESSORS: [(i64, &str, i64); 3] = [(42, "Luke", 35), (31, "Horst", 25), (32, "Horst", 25)];
pub const LECTURES: [(i64, &str); 2] = [(17, "Databases are great"), (66, "NOSQL sucks")];
pub const DEPARTMENTS: [(i64, &str, i64); 2] = [(1, "CS", 40), (2, "Physics", 25)];
/// (p, l, d, room, year), keyed 0.. by surrogate identities.
pub const GIVE: [(i64, i64, i64, &str, i64); 4] = [
    (42, 17, 1, "R1", 2024),
    (31, 66, 1, "R2", 2024),
    (42, 66, 2, "R1", 2025),
    (32, 17, 2, "R3", 2025),
];

fn relation(rows: impl IntoIterator<Item = (Key, Map)>) -> Value {
    let mut m = Map::new();
    for (k, v) in rows {
        m.insert(k, Value::map(v)).expect("fixture keys are unique");
    }
    Value::map(m)
}

pub fn running_example(enc: Encoding) -> Database {
    let profs = relation(PROFESSORS.iter().map(|(id, name, age)| {
        (
            Key::computed(*id),
            Map::tuple([("id", (*id).into()), ("name", (*name).into()), ("age", (*age).into())]),
        )
    }));
    let lectures = relation(
        LECTURES
            .iter()
            .map(|(id, name)| (Key::computed(*id), Map::tuple([("id", (*id).into()), ("name", (*name).into())]))),
    );
    let depts = relation(DEPARTMENTS.iter().map(|(id, name, size)| {
        (
            Key::computed(*id),
            Map::tuple([("id", (*id).into()), ("name", (*name).into()), ("size", (*size).into())]),
        )
    }));
    let give = relation(GIVE.iter().enumerate().map(|(i, (p, l, d, room, year))| {
        (
            Key::surrogate(i as u64),
            Map::tuple([
                ("p", (*p).into()),
                ("l", (*l).into()),
                ("d", (*d).into()),
                ("room", (*room).into()),
                ("year", (*year).into()),
            ]),
        )
    }));
    let data = Map::tuple([
        ("Professors", profs),
        ("Lectures", lectures),
        ("Departments", depts),
        ("give", give),
    ]);
    let rm = Database::new(Arc::new(running_example_schema()), data);
    match enc {
        Encoding::ForeignKey => rm,
        Encoding::Link => swizzle(&rm).expect("fixture foreign keys resolve"),
    }
}

/// One JSON-lines text per relation, as shipped next to the CLI.
pub fn running_example_records(_enc: Encoding) -> Vec<(String, String)> {
    let lines = |rows: Vec<String>| rows.join("\n") + "\n";
    vec![
        (
            "Professors".into(),
            lines(
                PROFESSORS
                    .iter()
                    .map(|(id, n, a)| format!("{{\"id\":{id},\"name\":\"{n}\",\"age\":{a}}}"))
                    .collect(),
            ),
        ),
        (
            "Lectures".into(),
            lines(LECTURES.iter().map(|(id, n)| format!("{{\"id\":{id},\"name\":\"{n}\"}}")).collect()),
        ),
        (
            "Departments".into(),
            lines(
                DEPARTMENTS
                    .iter()
                    .map(|(id, n, s)| format!("{{\"id\":{id},\"name\":\"{n}\",\"size\":{s}}}"))
                    .collect(),
            ),
        ),
        (
            "give".into(),
            lines(
                GIVE.iter()
                    .map(|(p, l, d, r, y)| format!("{{\"p\":{p},\"l\":{l},\"d\":{d},\"room\":\"{r}\",\"year\":{y}}}"))
                    .collect(),
            ),
        ),
    ]
}
