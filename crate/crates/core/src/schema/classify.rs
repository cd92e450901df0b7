use std::collections::HashMap;

use indexmap::IndexMap;
use serde::Serialize;

use super::{Database, DatabaseSchema};
use crate::error::{Error, Result};
use crate::model::{Domain, MapType, Symbol};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RelClass {
    #[serde(rename = "RV")]
    Rv,
    EntT,
    RelT,
    #[serde(rename = "general")]
    General,
}

impl RelClass {
    pub fn is_rv(self) -> bool {
        !matches!(self, RelClass::General)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelClass {
    pub is_rmtm: bool,
    pub is_rm: bool,
    pub is_erm: bool,
    pub relations: IndexMap<Symbol, RelClass>,
}

/// Classifies the element type `t` of a relation registered in `ctx`.
pub fn classify_type(t: &MapType, ctx: &DatabaseSchema) -> Result<RelClass> {
    let name = ctx
        .relations()
        .find(|(_, r)| r.element_type().is_some_and(|e| e.as_ref() == t) || r.as_ref() == t)
        .map(|(n, _)| n)
        .ok_or_else(|| Error::InvalidSchema("type is not registered in the schema".into()))?;
    Classifier::new(ctx).relation(name)
}

struct Classifier<'a> {
    ctx: &'a DatabaseSchema,
    memo: HashMap<Symbol, RelClass>,
    active: Vec<Symbol>,
}

impl<'a> Classifier<'a> {
    fn new(ctx: &'a DatabaseSchema) -> Self {
        Classifier {
            ctx,
            memo: HashMap::new(),
            active: Vec::new(),
        }
    }

    fn relation(&mut self, name: Symbol) -> Result<RelClass> {
        if let Some(c) = self.memo.get(&name) {
            return Ok(*c);
        }
        // A relation reached again while classifying itself cannot be
        // grounded in entity types.
        if self.active.contains(&name) {
            return Ok(RelClass::General);
        }
        let rel = self
            .ctx
            .relation(name)
            .ok_or_else(|| Error::InvalidSchema(format!("unknown relation {name}")))?
            .clone();
        self.active.push(name);
        let c = match rel.element_type() {
            Some(elem) if rel.is_homogeneous() => self.element(elem)?,
            _ => RelClass::General,
        };
        self.active.pop();
        self.memo.insert(name, c);
        Ok(c)
    }

    fn element(&mut self, t: &MapType) -> Result<RelClass> {
        // Relational variable: a tuple type whose every assignment is
        // exclusive; sharing happens only through foreign-key scalars.
        let rv = t.is_rmt()
            && t.entries
                .iter()
                .all(|e| matches!(e.domain, Domain::Scalar(_) | Domain::ForeignKey { .. }));
        if !rv {
            return Ok(RelClass::General);
        }
        let mut entity_domains = 0;
        let mut relationship_domains = 0;
        for e in &t.entries {
            if let Domain::ForeignKey { target, .. } = &e.domain {
                let [rel] = target.segments() else { continue };
                if self.ctx.relation(*rel).is_none() {
                    continue;
                }
                match self.relation(*rel)? {
                    RelClass::EntT => entity_domains += 1,
                    RelClass::RelT => relationship_domains += 1,
                    _ => {}
                }
            }
        }
        if entity_domains == 0 && relationship_domains == 0 {
            return Ok(RelClass::EntT);
        }
        let c = t.n.unwrap_or(t.entries.len());
        if c > 2 && entity_domains >= 2 && relationship_domains == 0 {
            return Ok(RelClass::RelT);
        }
        Ok(RelClass::Rv)
    }
}

pub fn classify_database(db: &Database) -> Result<ModelClass> {
    let schema = db.schema();
    let mut cl = Classifier::new(schema);
    let mut relations = IndexMap::new();
    for name in schema.names() {
        relations.insert(name, cl.relation(name)?);
    }
    let is_rm = relations.values().all(|c| c.is_rv());
    let is_erm = is_rm
        && relations.values().all(|c| matches!(c, RelClass::EntT | RelClass::RelT))
        && relations.iter().all(|(name, c)| {
            *c != RelClass::RelT || relationship_targets_entities(schema, *name, &relations)
        });
    Ok(ModelClass {
        is_rmtm: true,
        is_rm,
        is_erm,
        relations,
    })
}

fn relationship_targets_entities(
    schema: &DatabaseSchema,
    name: Symbol,
    classes: &IndexMap<Symbol, RelClass>,
) -> bool {
    let elem = schema
        .relation(name)
        .and_then(|r| r.element_type())
        .expect("classified relations have element types");
    elem.entries.iter().all(|e| match &e.domain {
        Domain::ForeignKey { target, .. } => match target.segments() {
            [rel] => classes.get(rel) == Some(&RelClass::EntT),
            _ => false,
        },
        _ => true,
    })
}
