//! Values, keys, maps and map types.

mod keys;
mod scalar;
mod symbol;
mod types;
mod validate;
mod value;

pub use keys::{compute_key, project_key, tuple_key, KeySpec, SurrogateCounter};
pub use scalar::{Scalar, ScalarKind};
pub use symbol::Symbol;
pub use types::{Check, Domain, EntryType, KeyPolicy, MapType, Projection, ScalarLit, ValueConstraint};
pub use validate::{enumeration_of, validate, validate_in, NoTargets, Resolver, ValidationReport, Violation, ViolationKind};
pub(crate) use validate::link_is_current;
pub use value::{Key, KeyKind, KeyLayout, Link, Map, MapPath, Ref, Value};
