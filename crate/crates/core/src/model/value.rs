use std::borrow::Borrow;
use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use super::{Scalar, Symbol};
use crate::error::{Error, Result};

/// How a key came to be: declared by the schema author, computed from the
/// assigned value, or allocated by the engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyKind {
    Symbolic,
    Computed,
    Surrogate,
}

/// A key instance. Identity (hash/eq) is the scalar value alone; the kind is
/// provenance carried along for serialization and hidden-identity checks.
#[derive(Clone)]
pub struct Key {
    pub value: Scalar,
    pub kind: KeyKind,
}

impl Key {
    pub fn new(value: Scalar, kind: KeyKind) -> Key {
        Key { value, kind }
    }

    pub fn sym(name: &str) -> Key {
        Key::new(Scalar::sym(name), KeyKind::Symbolic)
    }

    pub fn computed(value: impl Into<Scalar>) -> Key {
        Key::new(value.into(), KeyKind::Computed)
    }

    pub fn surrogate(n: u64) -> Key {
        Key::new(Scalar::Int(n as i64), KeyKind::Surrogate)
    }

    /// A plain data key (symbolic kind, any scalar).
    pub fn declared(value: impl Into<Scalar>) -> Key {
        Key::new(value.into(), KeyKind::Symbolic)
    }
}

impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        self.value == other.value
    }
}

impl Eq for Key {}

impl Hash for Key {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.value.hash(state)
    }
}

impl Borrow<Scalar> for Key {
    fn borrow(&self) -> &Scalar {
        &self.value
    }
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            KeyKind::Symbolic => write!(f, "{}", self.value),
            KeyKind::Computed => write!(f, "{}ᶜ", self.value),
            KeyKind::Surrogate => write!(f, "#{}", self.value),
        }
    }
}

impl From<&str> for Key {
    fn from(s: &str) -> Self {
        Key::sym(s)
    }
}

impl From<Symbol> for Key {
    fn from(s: Symbol) -> Self {
        Key::new(Scalar::Symbol(s), KeyKind::Symbolic)
    }
}

/// Absolute location of a map inside a database (or set of databases).
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MapPath(Arc<[Symbol]>);

impl MapPath {
    pub fn new(segments: impl IntoIterator<Item = Symbol>) -> MapPath {
        MapPath(segments.into_iter().collect::<Vec<_>>().into())
    }

    pub fn root() -> MapPath {
        MapPath::new([])
    }

    pub fn segments(&self) -> &[Symbol] {
        &self.0
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, seg: Symbol) -> MapPath {
        MapPath::new(self.0.iter().copied().chain([seg]))
    }

    pub fn starts_with(&self, prefix: &MapPath) -> bool {
        self.0.starts_with(&prefix.0)
    }

    /// Replaces a leading `from` prefix with `to`.
    pub fn rebase(&self, from: &MapPath, to: &MapPath) -> Option<MapPath> {
        self.starts_with(from)
            .then(|| MapPath::new(to.0.iter().chain(&self.0[from.0.len()..]).copied()))
    }
}

impl From<&str> for MapPath {
    /// Accepts the displayed form too, with or without the leading `/`.
    fn from(s: &str) -> Self {
        let s = s.strip_prefix('/').unwrap_or(s);
        if s.is_empty() {
            return MapPath::root();
        }
        MapPath::new(s.split('/').map(Symbol::new))
    }
}

impl From<Symbol> for MapPath {
    fn from(s: Symbol) -> Self {
        MapPath::new([s])
    }
}

impl fmt::Debug for MapPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for MapPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.0.iter().map(|s| s.as_str()).collect();
        write!(f, "/{}", parts.join("/"))
    }
}

impl Serialize for MapPath {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MapPath {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(MapPath::new(Vec::<Symbol>::deserialize(d)?))
    }
}

/// Shared target of swizzled references: the entry `key` of the map at
/// `path`, plus the value that entry held in the version the link was made
/// for. Many [`Ref`]s share one link.
#[derive(Debug)]
pub struct Link {
    pub path: MapPath,
    pub key: Scalar,
    pub target: Value,
}

/// A non-exclusive assignment: a direct link to an entry of another map.
/// Equality is by (path, key); the cached target is resolution state.
#[derive(Clone)]
pub struct Ref(Arc<Link>);

impl Ref {
    pub fn new(path: MapPath, key: Scalar, target: Value) -> Ref {
        Ref(Arc::new(Link { path, key, target }))
    }

    pub fn path(&self) -> &MapPath {
        &self.0.path
    }

    pub fn key(&self) -> &Scalar {
        &self.0.key
    }

    /// The referenced value, without any lookup.
    #[inline]
    pub fn target(&self) -> &Value {
        &self.0.target
    }

    pub fn same_link(&self, other: &Ref) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

impl PartialEq for Ref {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || (self.0.path == other.0.path && self.0.key == other.0.key)
    }
}

impl Eq for Ref {}

impl Hash for Ref {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.path.hash(state);
        self.0.key.hash(state);
    }
}

impl fmt::Debug for Ref {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "&{}[{}]", self.0.path, self.0.key)
    }
}

/// The universal datum.
#[derive(Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Scalar(Scalar),
    Map(Arc<Map>),
    Ref(Ref),
}

impl Value {
    pub fn map(m: Map) -> Value {
        Value::Map(Arc::new(m))
    }

    pub fn as_scalar(&self) -> Option<&Scalar> {
        match self {
            Value::Scalar(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&Map> {
        match self {
            Value::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_ref_link(&self) -> Option<&Ref> {
        match self {
            Value::Ref(r) => Some(r),
            _ => None,
        }
    }

    /// Follows a Ref to its target map, or returns an embedded map.
    pub fn deref_map(&self) -> Option<&Map> {
        match self {
            Value::Map(m) => Some(m),
            Value::Ref(r) => r.target().deref_map(),
            Value::Scalar(_) => None,
        }
    }

    /// Scalars and embedded maps are owned by exactly one key; references
    /// are shared.
    pub fn is_exclusive(&self) -> bool {
        !matches!(self, Value::Ref(_))
    }

    pub fn order(&self) -> usize {
        match self {
            Value::Map(m) => m.order() + 1,
            _ => 0,
        }
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Scalar(s) => write!(f, "{s:?}"),
            Value::Map(m) => write!(f, "{m:?}"),
            Value::Ref(r) => write!(f, "{r:?}"),
        }
    }
}

impl<T: Into<Scalar>> From<T> for Value {
    fn from(v: T) -> Self {
        Value::Scalar(v.into())
    }
}

impl From<Map> for Value {
    fn from(m: Map) -> Self {
        Value::map(m)
    }
}

impl From<Ref> for Value {
    fn from(r: Ref) -> Self {
        Value::Ref(r)
    }
}

/// The ordered key set of a map. Maps built from the same tuple type share
/// one layout, so attribute names are not repeated per tuple.
pub type KeyLayout = IndexSet<Key>;

/// A collection of unique-key assignments in insertion order.
#[derive(Clone)]
pub struct Map {
    keys: Arc<KeyLayout>,
    values: Vec<Value>,
}

impl Default for Map {
    fn default() -> Self {
        Map::new()
    }
}

impl Map {
    pub fn new() -> Map {
        Map {
            keys: Arc::new(KeyLayout::new()),
            values: Vec::new(),
        }
    }

    pub fn with_capacity(n: usize) -> Map {
        Map {
            keys: Arc::new(KeyLayout::with_capacity(n)),
            values: Vec::with_capacity(n),
        }
    }

    /// Builds a map over an existing layout; `values[i]` is assigned to the
    /// i-th key.
    pub fn with_layout(keys: Arc<KeyLayout>, values: Vec<Value>) -> Result<Map> {
        if keys.len() != values.len() {
            return Err(Error::InvalidSchema(format!(
                "layout has {} keys but {} values were given",
                keys.len(),
                values.len()
            )));
        }
        Ok(Map { keys, values })
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (Key, Value)>) -> Result<Map> {
        let mut m = Map::new();
        for (k, v) in entries {
            m.insert(k, v)?;
        }
        Ok(m)
    }

    /// Convenience constructor for tuple maps with symbolic keys.
    pub fn tuple<'a>(entries: impl IntoIterator<Item = (&'a str, Value)>) -> Map {
        let mut m = Map::new();
        for (k, v) in entries {
            m.set(Key::sym(k), v);
        }
        m
    }

    pub fn layout(&self) -> &Arc<KeyLayout> {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rejects duplicates; the map is unchanged on error.
    pub fn insert(&mut self, key: Key, value: Value) -> Result<()> {
        if self.keys.contains(&key.value) {
            return Err(Error::DuplicateKey(key.value));
        }
        Arc::make_mut(&mut self.keys).insert(key);
        self.values.push(value);
        Ok(())
    }

    /// Inserts or replaces, keeping the position of an existing key.
    pub fn set(&mut self, key: Key, value: Value) {
        match self.keys.get_index_of(&key.value) {
            Some(i) => self.values[i] = value,
            None => {
                Arc::make_mut(&mut self.keys).insert(key);
                self.values.push(value);
            }
        }
    }

    pub fn get(&self, key: &Scalar) -> Option<&Value> {
        self.keys.get_index_of(key).map(|i| &self.values[i])
    }

    pub fn get_key(&self, key: &Scalar) -> Option<&Key> {
        self.keys.get(key)
    }

    pub fn attr(&self, name: Symbol) -> Option<&Value> {
        self.get(&Scalar::Symbol(name))
    }

    pub fn contains_key(&self, key: &Scalar) -> bool {
        self.keys.contains(key)
    }

    pub fn position(&self, key: &Scalar) -> Option<usize> {
        self.keys.get_index_of(key)
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> Option<(&Key, &Value)> {
        Some((self.keys.get_index(i)?, self.values.get(i)?))
    }

    #[inline]
    pub fn value_at(&self, i: usize) -> &Value {
        &self.values[i]
    }

    #[inline]
    pub fn value_at_mut(&mut self, i: usize) -> &mut Value {
        &mut self.values[i]
    }

    pub fn get_mut(&mut self, key: &Scalar) -> Option<&mut Value> {
        let i = self.keys.get_index_of(key)?;
        Some(&mut self.values[i])
    }

    pub fn remove(&mut self, key: &Scalar) -> Option<(Key, Value)> {
        let i = self.keys.get_index_of(key)?;
        let k = Arc::make_mut(&mut self.keys).shift_remove_index(i)?;
        let v = self.values.remove(i);
        Some((k, v))
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&Key, &Value) -> bool) {
        let flags: Vec<bool> = self.iter().map(|(k, v)| keep(k, v)).collect();
        if flags.iter().all(|f| *f) {
            return;
        }
        let mut kept = Map::with_capacity(flags.iter().filter(|f| **f).count());
        for ((k, v), f) in self.iter().zip(flags) {
            if f {
                Arc::make_mut(&mut kept.keys).insert(k.clone());
                kept.values.push(v.clone());
            }
        }
        *self = kept;
    }

    /// Renames a key in place, keeping its position and value.
    pub fn rename_key(&mut self, from: &Scalar, to: Key) -> Result<()> {
        let i = self
            .position(from)
            .ok_or_else(|| Error::UnknownKey(from.to_string()))?;
        if from != &to.value && self.contains_key(&to.value) {
            return Err(Error::DuplicateKey(to.value));
        }
        let entries: Vec<(Key, Value)> = self
            .iter()
            .enumerate()
            .map(|(j, (k, v))| (if j == i { to.clone() } else { k.clone() }, v.clone()))
            .collect();
        *self = Map::from_entries(entries)?;
        Ok(())
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&Key, &Value)> + '_ {
        self.keys.iter().zip(self.values.iter())
    }

    pub fn keys(&self) -> impl ExactSizeIterator<Item = &Key> + '_ {
        self.keys.iter()
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    /// Nesting depth of the instance: 0 if no value is a map.
    pub fn order(&self) -> usize {
        self.values
            .iter()
            .map(|v| match v {
                Value::Map(m) => m.order() + 1,
                _ => 0,
            })
            .max()
            .unwrap_or(0)
    }

    /// Navigates nested maps (following refs) along `path`.
    pub fn at_path(&self, path: &[Symbol]) -> Option<&Map> {
        let mut cur = self;
        for seg in path {
            cur = cur.attr(*seg)?.deref_map()?;
        }
        Some(cur)
    }

    /// Rewrites the nested map at `path`, cloning only the spine.
    pub fn update_at(&self, path: &[Symbol], f: &mut dyn FnMut(&Map) -> Result<Map>) -> Result<Map> {
        match path.split_first() {
            None => f(self),
            Some((head, rest)) => {
                let inner = self
                    .attr(*head)
                    .and_then(Value::as_map)
                    .ok_or_else(|| Error::UnknownKey(head.to_string()))?;
                let rewritten = inner.update_at(rest, f)?;
                let mut out = self.clone();
                out.set(Key::from(*head), Value::map(rewritten));
                Ok(out)
            }
        }
    }
}

impl PartialEq for Map {
    fn eq(&self, other: &Self) -> bool {
        if self.len() != other.len() {
            return false;
        }
        if Arc::ptr_eq(&self.keys, &other.keys) {
            return self.values == other.values;
        }
        self.iter().all(|(k, v)| other.get(&k.value) == Some(v))
    }
}

impl Eq for Map {}

impl Hash for Map {
    fn hash<H: Hasher>(&self, state: &mut H) {
        // Order-insensitive: equal maps may differ in insertion order.
        let mut acc: u64 = 0;
        for (k, v) in self.iter() {
            let mut h = DefaultHasher::new();
            k.hash(&mut h);
            v.hash(&mut h);
            acc = acc.wrapping_add(h.finish());
        }
        self.len().hash(state);
        acc.hash(state);
    }
}

impl fmt::Debug for Map {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.iter()).finish()
    }
}
