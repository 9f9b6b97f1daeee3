//! Synthetic recipe corpora and click logs with a known click model.
//!
//! Each query is two or three tokens drawn from an anchor document's title.
//! The fetched list mixes documents sharing query tokens with random ones, and
//! the user clicks the document with the highest utility
//!
//! `w_title · |query ∩ title| + w_country · [country = query country]
//!  + w_popularity · popularity(country)`
//!
//! (earliest position on ties) with probability `1 − ε`, else a uniform pick.

use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{write_documents, write_search_log, DocumentRecord, SearchEvent};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub vocab_size: usize,
    pub doc_count: usize,
    pub query_count: usize,
    pub list_len_min: usize,
    pub list_len_max: usize,
    pub query_len_min: usize,
    pub query_len_max: usize,
    pub title_len: usize,
    pub description_len: usize,
    pub ingredient_count: usize,
    pub country_count: usize,
    /// Weight of query-title token overlap in the click utility.
    pub w_title: f64,
    /// Weight of a match between the document country and the query's country.
    pub w_country: f64,
    /// Weight of a query-independent per-country popularity.
    pub w_popularity: f64,
    /// Probability of a uniformly random click.
    pub epsilon: f64,
    /// Fraction of description tokens copied from the title; 0 makes the
    /// description pure noise.
    pub description_title_mix: f64,
    /// Fraction of fetched slots filled with documents sharing a query token.
    pub related_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            vocab_size: 120,
            doc_count: 1_000,
            query_count: 2_000,
            list_len_min: 8,
            list_len_max: 16,
            query_len_min: 2,
            query_len_max: 3,
            title_len: 4,
            description_len: 8,
            ingredient_count: 4,
            country_count: 8,
            w_title: 1.0,
            w_country: 0.3,
            w_popularity: 0.0,
            epsilon: 0.1,
            description_title_mix: 0.3,
            related_fraction: 0.25,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.epsilon) {
            return bad(format!("epsilon must lie in [0, 1), got {}", self.epsilon));
        }
        for (name, w) in [
            ("w_title", self.w_title),
            ("w_country", self.w_country),
            ("w_popularity", self.w_popularity),
            ("description_title_mix", self.description_title_mix),
            ("related_fraction", self.related_fraction),
        ] {
            if !w.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if !(0.0..=1.0).contains(&self.description_title_mix)
            || !(0.0..=1.0).contains(&self.related_fraction)
        {
            return bad("mixing fractions must lie in [0, 1]".into());
        }
        if self.list_len_min == 0 || self.list_len_min > self.list_len_max {
            return bad(format!(
                "list length range {}..={} is empty",
                self.list_len_min, self.list_len_max
            ));
        }
        if self.list_len_max > self.doc_count {
            return bad(format!(
                "list length {} exceeds the document count {}",
                self.list_len_max, self.doc_count
            ));
        }
        if self.query_len_min == 0
            || self.query_len_min > self.query_len_max
            || self.query_len_max > self.title_len
        {
            return bad(
                "query length range must be non-empty and fit within the title length".into(),
            );
        }
        if self.title_len > self.vocab_size {
            return bad("title length exceeds the vocabulary size".into());
        }
        if self.country_count == 0 || self.country_count > 26 * 26 {
            return bad(format!(
                "country count must be in 1..=676, got {}",
                self.country_count
            ));
        }
        if self.query_count == 0 {
            return bad("query count must be positive".into());
        }
        Ok(())
    }

    /// Country a query is issued from: a fixed function of its first token.
    pub fn query_country(&self, first_token: usize) -> usize {
        first_token % self.country_count
    }

    /// Popularity of country `c`, evenly spaced in [0, 1].
    pub fn popularity(&self, c: usize) -> f64 {
        if self.country_count == 1 {
            0.0
        } else {
            c as f64 / (self.country_count - 1) as f64
        }
    }
}

pub fn token_name(i: usize) -> String {
    format!("w{i}")
}

pub fn country_code(c: usize) -> String {
    let letters = [b'A' + (c / 26) as u8, b'A' + (c % 26) as u8];
    String::from_utf8(letters.to_vec()).expect("ASCII letters")
}

struct Doc {
    title: Vec<usize>,
    country: usize,
}

/// A click-log event plus the ground truth behind it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickTruth {
    pub event_id: u64,
    pub utilities: Vec<f64>,
    pub random_click: bool,
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub documents: Vec<DocumentRecord>,
    pub events: Vec<SearchEvent>,
    pub truth: Vec<ClickTruth>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthManifest {
    pub spec: SynthSpec,
    pub utility: String,
    pub query_country: String,
    pub country_popularity: Vec<(String, f64)>,
    pub documents: usize,
    pub events: usize,
    pub random_clicks: usize,
}

fn distinct_tokens(rng: &mut ChaCha8Rng, vocab: usize, n: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, vocab, n).into_vec()
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let words = |ts: &[usize]| {
        ts.iter()
            .map(|&t| token_name(t))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut docs = Vec::with_capacity(spec.doc_count);
    let mut documents = Vec::with_capacity(spec.doc_count);
    for i in 0..spec.doc_count {
        let title = distinct_tokens(&mut rng, spec.vocab_size, spec.title_len);
        let description: Vec<usize> = (0..spec.description_len)
            .map(|_| {
                if rng.random::<f64>() < spec.description_title_mix {
                    *title.choose(&mut rng).expect("title is non-empty")
                } else {
                    rng.random_range(0..spec.vocab_size)
                }
            })
            .collect();
        let ingredients: Vec<String> = (0..spec.ingredient_count)
            .map(|_| {
                let n = rng.random_range(1..=2);
                words(
                    &(0..n)
                        .map(|_| rng.random_range(0..spec.vocab_size))
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        let country = rng.random_range(0..spec.country_count);
        documents.push(DocumentRecord {
            recipe_id: i as u64 + 1,
            title: words(&title),
            description: words(&description),
            ingredients,
            country: country_code(country),
        });
        docs.push(Doc { title, country });
    }

    let mut postings: Vec<Vec<usize>> = vec![Vec::new(); spec.vocab_size];
    for (d, doc) in docs.iter().enumerate() {
        for &t in &doc.title {
            postings[t].push(d);
        }
    }

    let mut events = Vec::with_capacity(spec.query_count);
    let mut truth = Vec::with_capacity(spec.query_count);
    for q in 0..spec.query_count {
        let anchor = rng.random_range(0..spec.doc_count);
        let qlen = rng.random_range(spec.query_len_min..=spec.query_len_max);
        let mut query: Vec<usize> = docs[anchor]
            .title
            .choose_multiple(&mut rng, qlen)
            .copied()
            .collect();
        query.shuffle(&mut rng);
        let qcountry = spec.query_country(query[0]);

        let len = rng.random_range(spec.list_len_min..=spec.list_len_max);
        let mut fetched = vec![anchor];
        let mut related: Vec<usize> = query
            .iter()
            .flat_map(|&t| postings[t].iter().copied())
            .collect();
        related.sort_unstable();
        related.dedup();
        related.shuffle(&mut rng);
        let want_related = ((len as f64) * spec.related_fraction).round() as usize;
        for d in related {
            if fetched.len() >= want_related.max(1) {
                break;
            }
            if !fetched.contains(&d) {
                fetched.push(d);
            }
        }
        while fetched.len() < len {
            let d = rng.random_range(0..spec.doc_count);
            if !fetched.contains(&d) {
                fetched.push(d);
            }
        }
        fetched.shuffle(&mut rng);

        let utilities: Vec<f64> = fetched
            .iter()
            .map(|&d| {
                let doc = &docs[d];
                let overlap = query.iter().filter(|t| doc.title.contains(t)).count() as f64;
                spec.w_title * overlap
                    + spec.w_country * f64::from(u8::from(doc.country == qcountry))
                    + spec.w_popularity * spec.popularity(doc.country)
            })
            .collect();
        let random_click = rng.random::<f64>() < spec.epsilon;
        let clicked = if random_click {
            rng.random_range(0..fetched.len())
        } else {
            let best = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            utilities
                .iter()
                .position(|&u| u == best)
                .expect("list is non-empty")
        };

        let event_id = q as u64;
        events.push(SearchEvent {
            event_id,
            session_id: q as u64 / 3,
            query: words(&query),
            page: 1,
            recipe_id: fetched[clicked] as u64 + 1,
            position: clicked + 1,
            fetched_recipe_ids: fetched.iter().map(|&d| d as u64 + 1).collect(),
            total_hits: fetched.len() as u64,
            timestamp: 1_600_000_000_000 + 60_000 * q as i64,
        });
        truth.push(ClickTruth {
            event_id,
            utilities,
            random_click,
        });
    }
    Ok(SynthData {
        documents,
        events,
        truth,
    })
}

pub fn manifest(spec: &SynthSpec, data: &SynthData) -> SynthManifest {
    SynthManifest {
        spec: spec.clone(),
        utility: "w_title * |query tokens in title| + w_country * [doc country = query country] + w_popularity * popularity(doc country); click argmax (earliest on ties) with prob 1 - epsilon, else uniform".into(),
        query_country: "country index = (index of first query token) mod country_count".into(),
        country_popularity: (0..spec.country_count).map(|c| (country_code(c), spec.popularity(c))).collect(),
        documents: data.documents.len(),
        events: data.events.len(),
        random_clicks: data.truth.iter().filter(|t| t.random_click).count(),
    }
}

pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const LOGS_FILE: &str = "logs.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Write `documents.jsonl`, `logs.csv`, and `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, spec: &SynthSpec) -> Result<SynthData> {
    let data = generate(spec)?;
    fs::create_dir_all(dir)?;
    let mut docs = Vec::new();
    write_documents(&mut docs, &data.documents)?;
    fs::write(dir.join(DOCUMENTS_FILE), docs)?;
    let mut logs = Vec::new();
    write_search_log(&mut logs, &data.events)?;
    fs::write(dir.join(LOGS_FILE), logs)?;
    let mut m = serde_json::to_vec_pretty(&manifest(spec, &data))?;
    m.push(b'\n');
    fs::write(dir.join(MANIFEST_FILE), m)?;
    Ok(data)
}
