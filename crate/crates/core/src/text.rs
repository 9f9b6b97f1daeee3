//! Tokenization, vocabularies, and field encoding by averaged embeddings.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Corpus, QueryGroup};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Embedding;

pub const OOV_INDEX: u32 = 0;
pub const OOV_TOKEN: &str = "<oov>";
pub const UNKNOWN_CATEGORY: &str = "<unknown>";

/// Lowercase, then split on whitespace and every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Tokens of an ingredient set: the sorted union over all entities.
pub fn ingredient_tokens(ingredients: &[String]) -> Vec<String> {
    let mut tokens: Vec<String> = ingredients.iter().flat_map(|i| tokenize(i)).collect();
    tokens.sort();
    tokens.dedup();
    tokens
}

/// String → dense index map with a reserved index 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "LexiconParts")]
pub struct Lexicon {
    entries: Vec<String>,
    counts: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

#[derive(Deserialize)]
struct LexiconParts {
    entries: Vec<String>,
    counts: Vec<u64>,
}

impl From<LexiconParts> for Lexicon {
    fn from(p: LexiconParts) -> Self {
        Lexicon::from_parts(p.entries, p.counts)
    }
}

impl Lexicon {
    fn from_counts(reserved: &str, counts: HashMap<String, u64>, min_count: u64) -> Self {
        let mut kept: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut entries = vec![reserved.to_string()];
        let mut cs = vec![0];
        for (t, c) in kept {
            entries.push(t);
            cs.push(c);
        }
        Self::from_parts(entries, cs)
    }

    pub fn from_parts(entries: Vec<String>, counts: Vec<u64>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Lexicon {
            entries,
            counts,
            index,
        }
    }

    pub fn get(&self, key: &str) -> u32 {
        self.index.get(key).copied().unwrap_or(OOV_INDEX)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    /// Number of indices, including the reserved one.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.len() <= 1
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// `token<TAB>index<TAB>count`, one line per entry.
    pub fn dump<W: Write>(&self, mut w: W) -> Result<()> {
        for (i, (t, c)) in self.entries.iter().zip(&self.counts).enumerate() {
            writeln!(w, "{t}\t{i}\t{c}")?;
        }
        Ok(())
    }
}

/// Token vocabulary shared by the query, title, description, and ingredients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary(Lexicon);

impl Vocabulary {
    /// Count tokens over the training groups' queries and documents.
    pub fn build(groups: &[QueryGroup], corpus: &Corpus, min_count: u64) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Config(
                "cannot build a vocabulary from an empty training set".into(),
            ));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut add = |tokens: Vec<String>| {
            for t in tokens {
                *counts.entry(t).or_insert(0) += 1;
            }
        };
        for g in groups {
            add(tokenize(&g.query));
            for doc in g.documents.iter().filter_map(|&id| corpus.get(id)) {
                add(tokenize(&doc.title));
                add(tokenize(&doc.description));
                add(ingredient_tokens(&doc.ingredients));
            }
        }
        Ok(Vocabulary(Lexicon::from_counts(
            OOV_TOKEN, counts, min_count,
        )))
    }

    pub fn from_lexicon(lexicon: Lexicon) -> Self {
        Vocabulary(lexicon)
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.0
    }

    pub fn get(&self, token: &str) -> u32 {
        self.0.get(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.get(t)).collect()
    }

    pub fn dump<W: Write>(&self, w: W) -> Result<()> {
        self.0.dump(w)
    }
}

/// Country code → index, with index 0 for codes unseen in training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryTable(Lexicon);

impl CategoryTable {
    pub fn build(groups: &[QueryGroup], corpus: &Corpus) -> Self {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for g in groups {
            for doc in g.documents.iter().filter_map(|&id| corpus.get(id)) {
                *counts.entry(doc.country.clone()).or_insert(0) += 1;
            }
        }
        CategoryTable(Lexicon::from_counts(UNKNOWN_CATEGORY, counts, 1))
    }

    pub fn from_lexicon(lexicon: Lexicon) -> Self {
        CategoryTable(lexicon)
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.0
    }

    pub fn get(&self, code: &str) -> u32 {
        self.0.get(code)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Mean of the token embeddings; OOV tokens read row 0, no tokens give zeros.
pub fn encode_text_field(
    tokens: &[String],
    vocab: &Vocabulary,
    table: &Embedding,
    store: &ParamStore,
) -> Vec<f64> {
    table.pool(store, &vocab.encode(tokens))
}

pub fn encode_category(
    code: &str,
    categories: &CategoryTable,
    table: &Embedding,
    store: &ParamStore,
) -> Vec<f64> {
    table.row(store, categories.get(code)).to_vec()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDoc {
    pub title: Vec<u32>,
    pub description: Vec<u32>,
    pub ingredients: Vec<u32>,
    pub country: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedGroup {
    pub query: Vec<u32>,
    pub docs: Vec<EncodedDoc>,
    pub labels: Vec<u8>,
    pub recipe_ids: Vec<u64>,
    pub event_id: u64,
}

impl EncodedGroup {
    pub fn is_single_doc(&self) -> bool {
        self.docs.len() < 2
    }
}

/// Vocabulary plus country table, fit on one training partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub vocab: Vocabulary,
    pub countries: CategoryTable,
}

impl Encoder {
    pub fn fit(train: &[QueryGroup], corpus: &Corpus, min_count: u64) -> Result<Self> {
        Ok(Encoder {
            vocab: Vocabulary::build(train, corpus, min_count)?,
            countries: CategoryTable::build(train, corpus),
        })
    }

    pub fn encode_doc(&self, doc: &crate::data::DocumentRecord) -> EncodedDoc {
        EncodedDoc {
            title: self.vocab.encode(&tokenize(&doc.title)),
            description: self.vocab.encode(&tokenize(&doc.description)),
            ingredients: self.vocab.encode(&ingredient_tokens(&doc.ingredients)),
            country: self.countries.get(&doc.country),
        }
    }

    /// Documents missing from the corpus are skipped along with their labels.
    pub fn encode_group(&self, group: &QueryGroup, corpus: &Corpus) -> EncodedGroup {
        let mut docs = Vec::with_capacity(group.documents.len());
        let mut labels = Vec::with_capacity(group.documents.len());
        let mut recipe_ids = Vec::with_capacity(group.documents.len());
        for (&id, &label) in group.documents.iter().zip(&group.labels) {
            if let Some(doc) = corpus.get(id) {
                docs.push(self.encode_doc(doc));
                labels.push(label);
                recipe_ids.push(id);
            }
        }
        EncodedGroup {
            query: self.vocab.encode(&tokenize(&group.query)),
            docs,
            labels,
            recipe_ids,
            event_id: group.event_id,
        }
    }

    pub fn encode_groups(&self, groups: &[QueryGroup], corpus: &Corpus) -> Vec<EncodedGroup> {
        groups
            .iter()
            .map(|g| self.encode_group(g, corpus))
            .collect()
    }
}
