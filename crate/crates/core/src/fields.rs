//! Field identifiers and interaction selection.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldId {
    Query,
    Title,
    Description,
    Ingredients,
    Country,
}

impl FieldId {
    pub const ALL: [FieldId; 5] = [
        FieldId::Query,
        FieldId::Title,
        FieldId::Description,
        FieldId::Ingredients,
        FieldId::Country,
    ];

    /// Document-side fields, in canonical order.
    pub const DOCUMENT: [FieldId; 4] = [
        FieldId::Title,
        FieldId::Description,
        FieldId::Ingredients,
        FieldId::Country,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldId::Query => "query",
            FieldId::Title => "title",
            FieldId::Description => "description",
            FieldId::Ingredients => "ingredients",
            FieldId::Country => "country",
        }
    }

    pub fn is_text(self) -> bool {
        self != FieldId::Country
    }
}

impl fmt::Display for FieldId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An unordered pair of distinct fields, stored with the lower field first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "(FieldId, FieldId)", into = "(FieldId, FieldId)")]
pub struct FieldPair {
    first: FieldId,
    second: FieldId,
}

impl FieldPair {
    pub fn new(a: FieldId, b: FieldId) -> Result<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Ok(FieldPair {
                first: a,
                second: b,
            }),
            std::cmp::Ordering::Greater => Ok(FieldPair {
                first: b,
                second: a,
            }),
            std::cmp::Ordering::Equal => Err(Error::Config(format!(
                "interaction pair ({a}, {a}) pairs a field with itself"
            ))),
        }
    }

    pub fn first(self) -> FieldId {
        self.first
    }

    pub fn second(self) -> FieldId {
        self.second
    }

    pub fn involves(self, field: FieldId) -> bool {
        self.first == field || self.second == field
    }

    pub fn name(self) -> String {
        format!("{}-{}", self.first, self.second)
    }
}

impl TryFrom<(FieldId, FieldId)> for FieldPair {
    type Error = Error;

    fn try_from((a, b): (FieldId, FieldId)) -> Result<Self> {
        FieldPair::new(a, b)
    }
}

impl From<FieldPair> for (FieldId, FieldId) {
    fn from(p: FieldPair) -> Self {
        (p.first, p.second)
    }
}

impl fmt::Display for FieldPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.first, self.second)
    }
}

/// Which second-order interactions a model learns.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InteractionMode {
    /// The query paired with every document field.
    #[default]
    QueryField,
    /// Every unordered pair of fields.
    All,
    /// An explicit list of pairs.
    Selected(Vec<(FieldId, FieldId)>),
}

impl InteractionMode {
    pub fn selected(pairs: &[FieldPair]) -> Self {
        InteractionMode::Selected(pairs.iter().map(|&p| p.into()).collect())
    }
}

/// Canonically ordered interaction pairs for `mode`.
pub fn interaction_pairs(mode: &InteractionMode) -> Result<Vec<FieldPair>> {
    match mode {
        InteractionMode::All => {
            let mut pairs = Vec::with_capacity(10);
            for (i, &a) in FieldId::ALL.iter().enumerate() {
                for &b in &FieldId::ALL[i + 1..] {
                    pairs.push(FieldPair {
                        first: a,
                        second: b,
                    });
                }
            }
            Ok(pairs)
        }
        InteractionMode::QueryField => Ok(FieldId::DOCUMENT
            .iter()
            .map(|&f| FieldPair {
                first: FieldId::Query,
                second: f,
            })
            .collect()),
        InteractionMode::Selected(raw) => {
            let mut pairs = raw
                .iter()
                .map(|&(a, b)| FieldPair::new(a, b))
                .collect::<Result<Vec<_>>>()?;
            pairs.sort();
            if let Some(w) = pairs.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::Config(format!(
                    "interaction pair {} listed twice",
                    w[0]
                )));
            }
            Ok(pairs)
        }
    }
}

/// One additive term of a field-weighted factorization machine score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ComponentId {
    FirstOrder(FieldId),
    Pair(FieldPair),
}

impl ComponentId {
    pub fn name(self) -> String {
        match self {
            ComponentId::FirstOrder(f) => f.name().to_string(),
            ComponentId::Pair(p) => p.name(),
        }
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl std::str::FromStr for ComponentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let field = |name: &str| {
            FieldId::ALL
                .into_iter()
                .find(|f| f.name() == name)
                .ok_or_else(|| Error::Config(format!("unknown field `{name}`")))
        };
        match s.split_once('-') {
            Some((a, b)) => Ok(ComponentId::Pair(FieldPair::new(field(a)?, field(b)?)?)),
            None => Ok(ComponentId::FirstOrder(field(s)?)),
        }
    }
}

impl Serialize for ComponentId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for ComponentId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
