use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer};

use super::{PlatformSpec, ResourceKey, SpecError};
use crate::model::{Model, Op};

/// One key-value pair of a mapping file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub key: ResourceKey,
    pub layers: Vec<String>,
}

/// Resource key to layer list, in file order. Position in the list is the
/// rank of the resulting sub-model.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MappingSpec {
    pub assignments: Vec<Assignment>,
}

/// JSON object read with key order and duplicate keys preserved.
struct OrderedObject(Vec<(String, Vec<String>)>);

impl<'de> Deserialize<'de> for OrderedObject {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = OrderedObject;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping resource keys to arrays of layer names")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<OrderedObject, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Vec<String>>()? {
                    out.push((k, v));
                }
                Ok(OrderedObject(out))
            }
        }
        d.deserialize_map(V)
    }
}

impl MappingSpec {
    pub fn new(assignments: Vec<Assignment>) -> Self {
        MappingSpec { assignments }
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &ResourceKey> {
        self.assignments.iter().map(|a| &a.key)
    }

    pub fn key(&self, rank: usize) -> &ResourceKey {
        &self.assignments[rank].key
    }

    /// Syntax-level parse: JSON shape, key grammar, no repeated keys.
    pub fn parse(text: &str) -> Result<MappingSpec, SpecError> {
        let raw: OrderedObject = serde_json::from_str(text).map_err(|e| SpecError::Parse {
            line: e.line(),
            msg: format!("mapping file: {e}"),
        })?;
        let mut seen = HashSet::new();
        let mut assignments = Vec::with_capacity(raw.0.len());
        for (text_key, layers) in raw.0 {
            let key: ResourceKey = text_key.parse()?;
            if !seen.insert(key.clone()) {
                return Err(SpecError::DuplicateResource(text_key));
            }
            assignments.push(Assignment { key, layers });
        }
        Ok(MappingSpec { assignments })
    }

    pub fn format(&self) -> String {
        let mut obj = serde_json::Map::new();
        for a in &self.assignments {
            obj.insert(a.key.to_string(), serde_json::Value::from(a.layers.clone()));
        }
        serde_json::to_string_pretty(&serde_json::Value::Object(obj)).unwrap()
    }

    /// Checks the mapping against a model and platform: keys exist on the
    /// platform, every hidden layer is assigned exactly once, and no
    /// unknown or pseudo layer is listed.
    pub fn validate(&self, model: &Model, platform: &PlatformSpec) -> Result<(), SpecError> {
        for a in &self.assignments {
            a.key.check(platform)?;
        }
        self.validate_layers(model)
    }

    /// The platform-independent half of [`MappingSpec::validate`]: every
    /// hidden layer is listed exactly once and nothing else is listed.
    pub fn validate_layers(&self, model: &Model) -> Result<(), SpecError> {
        if self.assignments.is_empty() {
            return Err(SpecError::Parse {
                line: 0,
                msg: "mapping has no keys".into(),
            });
        }
        let mut owner: HashMap<&str, &ResourceKey> = HashMap::new();
        for a in &self.assignments {
            if a.layers.is_empty() && model.hidden_layers().next().is_some() {
                return Err(SpecError::EmptyAssignment(a.key.to_string()));
            }
            for l in &a.layers {
                let layer = model
                    .layer(l)
                    .ok_or_else(|| SpecError::UnknownLayer(l.clone()))?;
                if !layer.op.is_hidden() {
                    return Err(SpecError::NotMappable(l.clone()));
                }
                if let Some(prev) = owner.insert(l, &a.key) {
                    return Err(SpecError::DuplicateAssignment {
                        layer: l.clone(),
                        first: prev.to_string(),
                        second: a.key.to_string(),
                    });
                }
            }
        }
        if let Some(missing) = model.hidden_layers().find(|l| !owner.contains_key(l.name.as_str())) {
            return Err(SpecError::UnassignedLayer(missing.name.clone()));
        }
        Ok(())
    }

    /// Rank of every layer, including the Input and Output pseudo-layers.
    ///
    /// Input goes with the owner of the first hidden layer in topological
    /// order and Output with the owner of the last; a model without hidden
    /// layers places both on rank 0. Assumes [`MappingSpec::validate`] passed.
    pub fn placement(&self, model: &Model) -> BTreeMap<String, usize> {
        let mut rank_of: BTreeMap<String, usize> = BTreeMap::new();
        for (rank, a) in self.assignments.iter().enumerate() {
            for l in &a.layers {
                rank_of.insert(l.clone(), rank);
            }
        }
        let hidden: Vec<&str> = model.hidden_layers().map(|l| l.name.as_str()).collect();
        let first = hidden.first().map_or(0, |n| rank_of[*n]);
        let last = hidden.last().map_or(0, |n| rank_of[*n]);
        for l in model.layers() {
            match l.op {
                Op::Input => {
                    rank_of.insert(l.name.clone(), first);
                }
                Op::Output => {
                    rank_of.insert(l.name.clone(), last);
                }
                _ => {}
            }
        }
        rank_of
    }
}

/// Reads and validates a mapping file.
pub fn parse_mapping(path: &Path, model: &Model, platform: &PlatformSpec) -> Result<MappingSpec, SpecError> {
    let text = fs::read_to_string(path).map_err(|e| SpecError::io(path, e))?;
    let spec = MappingSpec::parse(&text)?;
    spec.validate(model, platform)?;
    Ok(spec)
}
