use super::{Key, KeyKind, Projection, Scalar, Value};
use crate::error::{Error, Result};

/// Key computation functions (pi).
#[derive(Clone, Debug, PartialEq)]
pub enum KeySpec {
    Project(Projection),
    SurrogateCounter,
}

/// Per-map surrogate allocator. Starts at 0 and never hands out a value
/// twice.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SurrogateCounter {
    next: u64,
}

impl SurrogateCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(next: u64) -> Self {
        SurrogateCounter { next }
    }

    pub fn peek(&self) -> u64 {
        self.next
    }

    pub fn next_key(&mut self) -> Key {
        let k = Key::surrogate(self.next);
        self.next += 1;
        k
    }
}

/// Applies pi to `v`. Surrogate counters ignore `v`.
pub fn compute_key(pi: &KeySpec, v: &Value, counter: &mut SurrogateCounter) -> Result<Key> {
    match pi {
        KeySpec::Project(p) => project_key(p, v),
        KeySpec::SurrogateCounter => Ok(counter.next_key()),
    }
}

pub fn project_key(p: &Projection, v: &Value) -> Result<Key> {
    let m = match v {
        Value::Map(m) => m,
        _ => {
            return Err(Error::KeyComputationFailed(format!(
                "projection {p:?} applied to a non-map value"
            )))
        }
    };
    let mut parts = Vec::with_capacity(p.attrs().len());
    for a in p.attrs() {
        let part = match m.attr(*a) {
            Some(Value::Scalar(s)) => s.clone(),
            Some(Value::Ref(r)) => r.key().clone(),
            Some(Value::Map(_)) => return Err(Error::MapValuedKey),
            None => {
                return Err(Error::KeyComputationFailed(format!(
                    "key {a} is not assigned in the value"
                )))
            }
        };
        parts.push(part);
    }
    let value = match p {
        Projection::Attr(_) => parts.pop().expect("one attribute"),
        Projection::Tuple(_) => tuple_key(&parts),
    };
    Ok(Key::new(value, KeyKind::Computed))
}

/// Composite keys are encoded as the canonical JSON array of their parts,
/// stored as text. A single part is its own key.
pub fn tuple_key(parts: &[Scalar]) -> Scalar {
    if parts.len() == 1 {
        return parts[0].clone();
    }
    let arr: Vec<serde_json::Value> = parts.iter().map(crate::json::scalar_to_json).collect();
    Scalar::text(&serde_json::Value::Array(arr).to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Map, Symbol};

    fn luke() -> Value {
        Value::map(Map::tuple([
            ("id", 42i64.into()),
            ("name", "Luke".into()),
            ("age", 46i64.into()),
        ]))
    }

    #[test]
    fn project_single_attribute() {
        let k = project_key(&Projection::Attr(Symbol::new("id")), &luke()).unwrap();
        assert_eq!(k.value, Scalar::Int(42));
        assert_eq!(k.kind, KeyKind::Computed);
    }

    #[test]
    fn project_name() {
        let horst = Value::map(Map::tuple([
            ("id", 31i64.into()),
            ("name", "Horst".into()),
            ("age", 25i64.into()),
        ]));
        let k = project_key(&Projection::Attr(Symbol::new("name")), &horst).unwrap();
        assert_eq!(k.value, Scalar::text("Horst"));
    }

    #[test]
    fn surrogate_counter_starts_at_zero() {
        let mut c = SurrogateCounter::new();
        let v = Value::map(Map::new());
        assert_eq!(compute_key(&KeySpec::SurrogateCounter, &v, &mut c).unwrap(), Key::surrogate(0));
        assert_eq!(compute_key(&KeySpec::SurrogateCounter, &v, &mut c).unwrap(), Key::surrogate(1));
    }

    #[test]
    fn missing_attribute_fails() {
        let err = project_key(&Projection::Attr(Symbol::new("dob")), &luke()).unwrap_err();
        assert!(matches!(err, Error::KeyComputationFailed(_)));
        let err = project_key(&Projection::Attr(Symbol::new("id")), &Value::from(3i64)).unwrap_err();
        assert!(matches!(err, Error::KeyComputationFailed(_)));
    }

    #[test]
    fn composite_keys_are_deterministic() {
        let p = Projection::Tuple(vec![Symbol::new("name"), Symbol::new("id")]);
        let k = project_key(&p, &luke()).unwrap();
        assert_eq!(k.value, Scalar::text(r#"["Luke",42]"#));
    }
}
