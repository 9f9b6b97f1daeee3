//! The four scoring architectures.
//!
//! All architectures consume the same five field vectors: averaged token
//! embeddings for the query, title, description and ingredients (one shared
//! table), and a category embedding for the country. They differ in how those
//! vectors meet:
//!
//! * `representation` encodes query and document separately and returns the
//!   cosine of the two encodings;
//! * `implicit-concat` concatenates every field vector into one MLP;
//! * `nrmf` concatenates Hadamard products of the selected field pairs (and,
//!   with first-order features, the raw field vectors) into an MLP;
//! * `fwfm` sums first-order dot products `⟨w_f, e_f⟩` and weighted pair dot
//!   products `r_ij ⟨e_i, e_j⟩`.
//!
//! For `nrmf` and `fwfm` the country vector is projected into the text
//! dimension by a learned linear map before it takes part in any interaction.
//! Scores are pre-sigmoid everywhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fields::{interaction_pairs, ComponentId, FieldId, FieldPair, InteractionMode};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{
    concat, concat_backward, cosine, cosine_backward, dot_unchecked, hadamard, hadamard_backward,
    Activation, DenseCache, DenseLayer, Embedding, Mlp,
};
use crate::text::EncodedDoc;

pub const EMBEDDING_INIT_SCALE: f64 = 0.05;
pub const PAIR_WEIGHT_INIT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Representation,
    ImplicitConcat,
    Nrmf,
    Fwfm,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Representation => "representation",
            Architecture::ImplicitConcat => "implicit-concat",
            Architecture::Nrmf => "nrmf",
            Architecture::Fwfm => "fwfm",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub interaction_mode: InteractionMode,
    pub use_first_order: bool,
    /// Restricts first-order terms to these fields; `None` means every field.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_order_fields: Option<Vec<FieldId>>,
    pub text_dim: usize,
    pub country_dim: usize,
    pub mlp_widths: Vec<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::Nrmf,
            interaction_mode: InteractionMode::QueryField,
            use_first_order: false,
            first_order_fields: None,
            text_dim: 32,
            country_dim: 4,
            mlp_widths: vec![64, 64],
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn new(
        architecture: Architecture,
        interaction_mode: InteractionMode,
        use_first_order: bool,
    ) -> Self {
        ModelConfig {
            architecture,
            interaction_mode,
            use_first_order,
            ..ModelConfig::default()
        }
    }

    /// Fields carrying a first-order term, in canonical order.
    pub fn first_order(&self) -> Vec<FieldId> {
        if !self.use_first_order {
            return Vec::new();
        }
        match &self.first_order_fields {
            None => FieldId::ALL.to_vec(),
            Some(fields) => {
                let mut f = fields.clone();
                f.sort();
                f.dedup();
                f
            }
        }
    }

    /// Short stable digest of the serialized config.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        hex::encode(&digest[..8])
    }
}

/// One vector per field for a (query, document) pair, country at its own width.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldVectors([Vec<f64>; 5]);

impl FieldVectors {
    pub fn new(
        query: Vec<f64>,
        title: Vec<f64>,
        description: Vec<f64>,
        ingredients: Vec<f64>,
        country: Vec<f64>,
    ) -> Self {
        FieldVectors([query, title, description, ingredients, country])
    }

    pub fn zeros(text_dim: usize, country_dim: usize) -> Self {
        let t = || vec![0.0; text_dim];
        FieldVectors([t(), t(), t(), t(), vec![0.0; country_dim]])
    }

    pub fn get(&self, field: FieldId) -> &[f64] {
        &self.0[field.index()]
    }

    pub fn get_mut(&mut self, field: FieldId) -> &mut Vec<f64> {
        &mut self.0[field.index()]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }
}

#[derive(Clone, Debug)]
enum Head {
    Representation {
        query_encoder: Mlp,
        doc_encoder: Mlp,
    },
    Implicit {
        scorer: Mlp,
    },
    Nrmf {
        projection: Option<DenseLayer>,
        pairs: Vec<FieldPair>,
        raw: Vec<FieldId>,
        scorer: Mlp,
    },
    Fwfm {
        projection: Option<DenseLayer>,
        first_order: Vec<(FieldId, ParamId)>,
        pairs: Vec<(FieldPair, ParamId)>,
    },
}

#[derive(Clone, Debug)]
pub enum HeadCache {
    Representation {
        query: Vec<DenseCache>,
        doc: Vec<DenseCache>,
    },
    Implicit {
        scorer: Vec<DenseCache>,
    },
    Nrmf {
        projection: Option<DenseCache>,
        scorer: Vec<DenseCache>,
    },
    Fwfm {
        projection: Option<DenseCache>,
    },
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    pub fields: FieldVectors,
    pub head: HeadCache,
}

#[derive(Clone, Debug)]
pub struct RankingModel {
    config: ModelConfig,
    store: ParamStore,
    text: Option<Embedding>,
    country: Option<Embedding>,
    head: Head,
}

fn mlp_output(caches: &[DenseCache]) -> &[f64] {
    caches
        .last()
        .expect("an MLP has at least one layer")
        .output()
}

impl RankingModel {
    /// Build and initialize a model for a vocabulary of `vocab_size` rows
    /// (OOV row included) and `country_count` country rows (unknown included).
    pub fn new(config: ModelConfig, vocab_size: usize, country_count: usize) -> Result<Self> {
        if config.text_dim == 0 || config.country_dim == 0 {
            return Err(Error::Config(
                "embedding dimensions must be positive".into(),
            ));
        }
        if vocab_size == 0 || country_count == 0 {
            return Err(Error::Config(
                "vocabulary and country table need at least the reserved row".into(),
            ));
        }
        if config.mlp_widths.contains(&0) {
            return Err(Error::Config("MLP widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (td, cd) = (config.text_dim, config.country_dim);

        let (pairs, first_order) = match config.architecture {
            Architecture::Representation | Architecture::ImplicitConcat => (Vec::new(), Vec::new()),
            Architecture::Nrmf | Architecture::Fwfm => (
                interaction_pairs(&config.interaction_mode)?,
                config.first_order(),
            ),
        };
        let used: Vec<FieldId> = match config.architecture {
            Architecture::Representation | Architecture::ImplicitConcat => FieldId::ALL.to_vec(),
            Architecture::Nrmf | Architecture::Fwfm => FieldId::ALL
                .into_iter()
                .filter(|&f| first_order.contains(&f) || pairs.iter().any(|p| p.involves(f)))
                .collect(),
        };
        if used.is_empty() {
            return Err(Error::Config(format!(
                "{} model has no interactions and no first-order terms",
                config.architecture.name()
            )));
        }
        let uses_country = used.contains(&FieldId::Country);

        let text = if used.iter().any(|f| f.is_text()) {
            Some(Embedding::new(
                &mut store,
                "text_embedding",
                vocab_size,
                td,
                EMBEDDING_INIT_SCALE,
                &mut rng,
            )?)
        } else {
            None
        };
        let country = if uses_country {
            Some(Embedding::new(
                &mut store,
                "country_embedding",
                country_count,
                cd,
                EMBEDDING_INIT_SCALE,
                &mut rng,
            )?)
        } else {
            None
        };
        let projection =
            |store: &mut ParamStore, rng: &mut ChaCha8Rng| -> Result<Option<DenseLayer>> {
                if uses_country {
                    Ok(Some(DenseLayer::new(
                        store,
                        "country_projection",
                        cd,
                        td,
                        Activation::Identity,
                        rng,
                    )?))
                } else {
                    Ok(None)
                }
            };

        let head = match config.architecture {
            Architecture::Representation => {
                let (hidden, out) = match config.mlp_widths.split_last() {
                    Some((&out, hidden)) => (hidden.to_vec(), out),
                    None => {
                        return Err(Error::Config(
                            "representation model needs at least one encoder width".into(),
                        ))
                    }
                };
                let query_encoder = Mlp::new(
                    &mut store,
                    "query_encoder",
                    td,
                    &hidden,
                    out,
                    Activation::Identity,
                    &mut rng,
                )?;
                let doc_encoder = Mlp::new(
                    &mut store,
                    "doc_encoder",
                    3 * td + cd,
                    &hidden,
                    out,
                    Activation::Identity,
                    &mut rng,
                )?;
                Head::Representation {
                    query_encoder,
                    doc_encoder,
                }
            }
            Architecture::ImplicitConcat => Head::Implicit {
                scorer: Mlp::new(
                    &mut store,
                    "scorer",
                    4 * td + cd,
                    &config.mlp_widths,
                    1,
                    Activation::Identity,
                    &mut rng,
                )?,
            },
            Architecture::Nrmf => {
                let projection = projection(&mut store, &mut rng)?;
                let width = (pairs.len() + first_order.len()) * td;
                let scorer = Mlp::new(
                    &mut store,
                    "scorer",
                    width,
                    &config.mlp_widths,
                    1,
                    Activation::Identity,
                    &mut rng,
                )?;
                Head::Nrmf {
                    projection,
                    pairs,
                    raw: first_order,
                    scorer,
                }
            }
            Architecture::Fwfm => {
                let projection = projection(&mut store, &mut rng)?;
                let first_order = first_order
                    .into_iter()
                    .map(|f| {
                        Ok((
                            f,
                            store.add(format!("fwfm.first_order.{f}"), 1, td, vec![0.0; td])?,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let pairs = pairs
                    .into_iter()
                    .map(|p| {
                        Ok((
                            p,
                            store.add(format!("fwfm.pair.{p}"), 1, 1, vec![PAIR_WEIGHT_INIT])?,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Head::Fwfm {
                    projection,
                    first_order,
                    pairs,
                }
            }
        };

        Ok(RankingModel {
            config,
            store,
            text,
            country,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.num_scalars()
    }

    /// Interaction pairs this model learns (empty for the non-interaction architectures).
    pub fn pairs(&self) -> Vec<FieldPair> {
        match &self.head {
            Head::Nrmf { pairs, .. } => pairs.clone(),
            Head::Fwfm { pairs, .. } => pairs.iter().map(|(p, _)| *p).collect(),
            _ => Vec::new(),
        }
    }

    /// Width of the scoring MLP's input, when the architecture has one.
    pub fn scorer_input_dim(&self) -> Option<usize> {
        match &self.head {
            Head::Implicit { scorer } | Head::Nrmf { scorer, .. } => Some(scorer.in_dim()),
            _ => None,
        }
    }

    /// Average the embeddings of each field.
    pub fn field_vectors(&self, query: &[u32], doc: &EncodedDoc) -> FieldVectors {
        let (td, cd) = (self.config.text_dim, self.config.country_dim);
        let text = |tokens: &[u32]| match &self.text {
            Some(e) => e.pool(&self.store, tokens),
            None => vec![0.0; td],
        };
        let country = match &self.country {
            Some(e) => e.row(&self.store, doc.country).to_vec(),
            None => vec![0.0; cd],
        };
        FieldVectors::new(
            text(query),
            text(&doc.title),
            text(&doc.description),
            text(&doc.ingredients),
            country,
        )
    }

    fn check_fields(&self, fv: &FieldVectors) -> Result<()> {
        for f in FieldId::ALL {
            let want = if f.is_text() {
                self.config.text_dim
            } else {
                self.config.country_dim
            };
            if fv.get(f).len() != want {
                return Err(Error::shape("field vector", want, fv.get(f).len()));
            }
        }
        Ok(())
    }

    /// Field vectors as seen by the interaction layer: country projected when a projection exists.
    fn interaction_view<'a>(
        fv: &'a FieldVectors,
        projected: Option<&'a DenseCache>,
    ) -> [&'a [f64]; 5] {
        let country = projected.map_or(fv.get(FieldId::Country), |c| c.output());
        [
            fv.get(FieldId::Query),
            fv.get(FieldId::Title),
            fv.get(FieldId::Description),
            fv.get(FieldId::Ingredients),
            country,
        ]
    }

    fn project(
        &self,
        projection: &Option<DenseLayer>,
        fv: &FieldVectors,
    ) -> Result<Option<DenseCache>> {
        projection
            .as_ref()
            .map(|p| p.forward(&self.store, fv.get(FieldId::Country)))
            .transpose()
    }

    pub fn forward_fields(&self, fv: &FieldVectors) -> Result<(f64, HeadCache)> {
        self.check_fields(fv)?;
        match &self.head {
            Head::Representation {
                query_encoder,
                doc_encoder,
            } => {
                let query = query_encoder.forward(&self.store, fv.get(FieldId::Query))?;
                let doc_in = concat(&[
                    fv.get(FieldId::Title),
                    fv.get(FieldId::Description),
                    fv.get(FieldId::Ingredients),
                    fv.get(FieldId::Country),
                ])?;
                let doc = doc_encoder.forward(&self.store, &doc_in)?;
                let score = cosine(mlp_output(&query), mlp_output(&doc))?;
                Ok((score, HeadCache::Representation { query, doc }))
            }
            Head::Implicit { scorer } => {
                let parts: Vec<&[f64]> = FieldId::ALL.iter().map(|&f| fv.get(f)).collect();
                let caches = scorer.forward(&self.store, &concat(&parts)?)?;
                Ok((
                    mlp_output(&caches)[0],
                    HeadCache::Implicit { scorer: caches },
                ))
            }
            Head::Nrmf {
                projection,
                pairs,
                raw,
                scorer,
            } => {
                let proj = self.project(projection, fv)?;
                let view = Self::interaction_view(fv, proj.as_ref());
                let products = pairs
                    .iter()
                    .map(|p| hadamard(view[p.first().index()], view[p.second().index()]))
                    .collect::<Result<Vec<_>>>()?;
                let mut parts: Vec<&[f64]> = products.iter().map(Vec::as_slice).collect();
                parts.extend(raw.iter().map(|f| view[f.index()]));
                let caches = scorer.forward(&self.store, &concat(&parts)?)?;
                Ok((
                    mlp_output(&caches)[0],
                    HeadCache::Nrmf {
                        projection: proj,
                        scorer: caches,
                    },
                ))
            }
            Head::Fwfm { projection, .. } => {
                let proj = self.project(projection, fv)?;
                let score = self
                    .fwfm_terms(fv, proj.as_ref())
                    .iter()
                    .map(|(_, v)| v)
                    .sum();
                Ok((score, HeadCache::Fwfm { projection: proj }))
            }
        }
    }

    fn fwfm_terms(&self, fv: &FieldVectors, proj: Option<&DenseCache>) -> Vec<(ComponentId, f64)> {
        let Head::Fwfm {
            first_order, pairs, ..
        } = &self.head
        else {
            return Vec::new();
        };
        let view = Self::interaction_view(fv, proj);
        let mut terms = Vec::with_capacity(first_order.len() + pairs.len());
        for &(f, w) in first_order {
            terms.push((
                ComponentId::FirstOrder(f),
                dot_unchecked(self.store.value(w), view[f.index()]),
            ));
        }
        for &(p, r) in pairs {
            let d = dot_unchecked(view[p.first().index()], view[p.second().index()]);
            terms.push((ComponentId::Pair(p), self.store.value(r)[0] * d));
        }
        terms
    }

    /// Each additive term of a field-weighted factorization machine score.
    ///
    /// The terms sum, in the returned order, to exactly the model's score.
    pub fn fwfm_component_scores(&self, fv: &FieldVectors) -> Result<Vec<(ComponentId, f64)>> {
        self.check_fields(fv)?;
        match &self.head {
            Head::Fwfm { projection, .. } => {
                let proj = self.project(projection, fv)?;
                Ok(self.fwfm_terms(fv, proj.as_ref()))
            }
            _ => Err(Error::Usage(format!(
                "component scores are defined for fwfm models, not {}",
                self.config.architecture.name()
            ))),
        }
    }

    /// Component identities, in the order `fwfm_component_scores` returns them.
    pub fn component_ids(&self) -> Vec<ComponentId> {
        match &self.head {
            Head::Fwfm {
                first_order, pairs, ..
            } => first_order
                .iter()
                .map(|(f, _)| ComponentId::FirstOrder(*f))
                .chain(pairs.iter().map(|(p, _)| ComponentId::Pair(*p)))
                .collect(),
            _ => Vec::new(),
        }
    }

    pub fn score_fields(&self, fv: &FieldVectors) -> Result<f64> {
        Ok(self.forward_fields(fv)?.0)
    }

    pub fn forward(&self, query: &[u32], doc: &EncodedDoc) -> Result<(f64, Trace)> {
        let fields = self.field_vectors(query, doc);
        let (score, head) = self.forward_fields(&fields)?;
        Ok((score, Trace { fields, head }))
    }

    pub fn score(&self, query: &[u32], doc: &EncodedDoc) -> Result<f64> {
        Ok(self.forward(query, doc)?.0)
    }

    /// Accumulate head parameter gradients for `d score = grad`; returns the
    /// gradient with respect to each (unprojected) field vector.
    pub fn backward_fields(
        &mut self,
        fv: &FieldVectors,
        cache: &HeadCache,
        grad: f64,
    ) -> Result<FieldVectors> {
        let (td, cd) = (self.config.text_dim, self.config.country_dim);
        let mut out = FieldVectors::zeros(td, cd);
        let RankingModel { store, head, .. } = self;
        match (head, cache) {
            (
                Head::Representation {
                    query_encoder,
                    doc_encoder,
                },
                HeadCache::Representation { query, doc },
            ) => {
                let (gq, gd) = cosine_backward(mlp_output(query), mlp_output(doc), grad);
                *out.get_mut(FieldId::Query) = query_encoder.backward(store, query, &gq);
                let gd_in = doc_encoder.backward(store, doc, &gd);
                let parts = concat_backward(&gd_in, &[td, td, td, cd])?;
                for (f, g) in FieldId::DOCUMENT.iter().zip(parts) {
                    *out.get_mut(*f) = g.to_vec();
                }
            }
            (Head::Implicit { scorer }, HeadCache::Implicit { scorer: caches }) => {
                let g_in = scorer.backward(store, caches, &[grad]);
                let parts = concat_backward(&g_in, &[td, td, td, td, cd])?;
                for (f, g) in FieldId::ALL.iter().zip(parts) {
                    *out.get_mut(*f) = g.to_vec();
                }
            }
            (
                Head::Nrmf {
                    projection,
                    pairs,
                    raw,
                    scorer,
                },
                HeadCache::Nrmf {
                    projection: proj,
                    scorer: caches,
                },
            ) => {
                let view = Self::interaction_view(fv, proj.as_ref());
                let mut view_grad = [
                    vec![0.0; td],
                    vec![0.0; td],
                    vec![0.0; td],
                    vec![0.0; td],
                    vec![0.0; td],
                ];
                let g_in = scorer.backward(store, caches, &[grad]);
                let parts = concat_backward(&g_in, &vec![td; pairs.len() + raw.len()])?;
                for (p, g) in pairs.iter().zip(&parts) {
                    let (a, b) = (p.first().index(), p.second().index());
                    let (ga, gb) = hadamard_backward(view[a], view[b], g);
                    add_into(&mut view_grad[a], &ga);
                    add_into(&mut view_grad[b], &gb);
                }
                for (f, g) in raw.iter().zip(&parts[pairs.len()..]) {
                    add_into(&mut view_grad[f.index()], g);
                }
                Self::finish_view_grad(store, projection, proj.as_ref(), view_grad, &mut out);
            }
            (
                Head::Fwfm {
                    projection,
                    first_order,
                    pairs,
                },
                HeadCache::Fwfm { projection: proj },
            ) => {
                let view = Self::interaction_view(fv, proj.as_ref());
                let mut view_grad = [
                    vec![0.0; td],
                    vec![0.0; td],
                    vec![0.0; td],
                    vec![0.0; td],
                    vec![0.0; td],
                ];
                for &(f, w) in first_order.iter() {
                    let e = view[f.index()];
                    let (wv, wg) = store.value_and_grad_mut(w);
                    for ((acc, x), (vg, wi)) in wg
                        .iter_mut()
                        .zip(e)
                        .zip(view_grad[f.index()].iter_mut().zip(wv))
                    {
                        *acc += grad * x;
                        *vg += grad * wi;
                    }
                }
                for &(p, r) in pairs.iter() {
                    let (a, b) = (p.first().index(), p.second().index());
                    let d = dot_unchecked(view[a], view[b]);
                    let (rv, rg) = store.value_and_grad_mut(r);
                    let weight = rv[0];
                    rg[0] += grad * d;
                    let scale = grad * weight;
                    for i in 0..td {
                        view_grad[a][i] += scale * view[b][i];
                        view_grad[b][i] += scale * view[a][i];
                    }
                }
                Self::finish_view_grad(store, projection, proj.as_ref(), view_grad, &mut out);
            }
            _ => {
                return Err(Error::Usage(
                    "trace does not belong to this model's architecture".into(),
                ))
            }
        }
        Ok(out)
    }

    fn finish_view_grad(
        store: &mut ParamStore,
        projection: &Option<DenseLayer>,
        proj: Option<&DenseCache>,
        view_grad: [Vec<f64>; 5],
        out: &mut FieldVectors,
    ) {
        let [q, t, d, i, c] = view_grad;
        *out.get_mut(FieldId::Query) = q;
        *out.get_mut(FieldId::Title) = t;
        *out.get_mut(FieldId::Description) = d;
        *out.get_mut(FieldId::Ingredients) = i;
        if let (Some(layer), Some(cache)) = (projection, proj) {
            *out.get_mut(FieldId::Country) = layer.backward(store, cache, &c);
        }
    }

    /// Full backward pass for one scored (query, document) pair.
    pub fn backward(
        &mut self,
        query: &[u32],
        doc: &EncodedDoc,
        trace: &Trace,
        grad: f64,
    ) -> Result<()> {
        let fg = self.backward_fields(&trace.fields, &trace.head, grad)?;
        if let Some(text) = &self.text {
            text.pool_backward(&mut self.store, query, fg.get(FieldId::Query));
            text.pool_backward(&mut self.store, &doc.title, fg.get(FieldId::Title));
            text.pool_backward(
                &mut self.store,
                &doc.description,
                fg.get(FieldId::Description),
            );
            text.pool_backward(
                &mut self.store,
                &doc.ingredients,
                fg.get(FieldId::Ingredients),
            );
        }
        if let Some(country) = &self.country {
            country.pool_backward(&mut self.store, &[doc.country], fg.get(FieldId::Country));
        }
        Ok(())
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, x) in acc.iter_mut().zip(g) {
        *a += x;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use FieldId::*;

    fn fwfm(mode: InteractionMode, first_order: bool) -> RankingModel {
        let cfg = ModelConfig {
            text_dim: 2,
            country_dim: 2,
            ..ModelConfig::new(Architecture::Fwfm, mode, first_order)
        };
        RankingModel::new(cfg, 4, 2).unwrap()
    }

    fn worked_fields() -> FieldVectors {
        FieldVectors::new(
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
        )
    }

    fn set_worked_weights(m: &mut RankingModel) {
        let s = m.store_mut();
        s.set("fwfm.pair.query-title", &[0.5]).unwrap();
        s.set("fwfm.pair.query-description", &[1.0]).unwrap();
        if s.id("fwfm.pair.title-description").is_some() {
            s.set("fwfm.pair.title-description", &[0.0]).unwrap();
        }
    }

    #[test]
    fn fwfm_worked_example_all_mode() {
        let mut m = fwfm(InteractionMode::All, false);
        set_worked_weights(&mut m);
        assert_eq!(m.score_fields(&worked_fields()).unwrap(), 0.5);
    }

    #[test]
    fn fwfm_worked_example_query_field_mode() {
        let mut m = fwfm(InteractionMode::QueryField, false);
        set_worked_weights(&mut m);
        assert_eq!(m.score_fields(&worked_fields()).unwrap(), 0.5);
    }

    #[test]
    fn fwfm_worked_example_first_order() {
        let mut m = fwfm(InteractionMode::All, true);
        set_worked_weights(&mut m);
        m.store_mut()
            .set("fwfm.first_order.title", &[2.0, 0.0])
            .unwrap();
        assert_eq!(m.score_fields(&worked_fields()).unwrap(), 2.5);
    }

    #[test]
    fn fwfm_components_of_worked_example() {
        let mut m = fwfm(InteractionMode::All, false);
        set_worked_weights(&mut m);
        let comps = m.fwfm_component_scores(&worked_fields()).unwrap();
        let get = |name: &str| comps.iter().find(|(c, _)| c.name() == name).unwrap().1;
        assert_eq!(get("query-title"), 0.5);
        assert_eq!(get("query-description"), 0.0);
        assert_eq!(get("title-description"), 0.0);
        assert_eq!(comps.iter().map(|(_, v)| v).sum::<f64>(), 0.5);

        let zero = m.fwfm_component_scores(&FieldVectors::zeros(2, 2)).unwrap();
        assert!(zero.iter().all(|(_, v)| *v == 0.0));
    }

    #[test]
    fn scorer_widths() {
        let dims = |arch, mode, fo| {
            RankingModel::new(ModelConfig::new(arch, mode, fo), 10, 3)
                .unwrap()
                .scorer_input_dim()
                .unwrap()
        };
        assert_eq!(
            dims(Architecture::ImplicitConcat, InteractionMode::All, false),
            4 * 32 + 4
        );
        assert_eq!(
            dims(Architecture::Nrmf, InteractionMode::QueryField, false),
            128
        );
        assert_eq!(dims(Architecture::Nrmf, InteractionMode::All, false), 320);
        assert_eq!(
            dims(Architecture::Nrmf, InteractionMode::QueryField, true),
            128 + 5 * 32
        );
    }

    #[test]
    fn implicit_zero_fields_score_zero() {
        let m = RankingModel::new(
            ModelConfig::new(Architecture::ImplicitConcat, InteractionMode::All, false),
            5,
            2,
        )
        .unwrap();
        assert_eq!(m.score_fields(&FieldVectors::zeros(32, 4)).unwrap(), 0.0);
    }

    #[test]
    fn representation_scores_are_cosines() {
        let m = RankingModel::new(
            ModelConfig::new(Architecture::Representation, InteractionMode::All, false),
            5,
            2,
        )
        .unwrap();
        let fv = FieldVectors::new(
            vec![0.3; 32],
            vec![-0.2; 32],
            vec![0.1; 32],
            vec![0.05; 32],
            vec![0.4; 4],
        );
        let s = m.score_fields(&fv).unwrap();
        assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let m = fwfm(InteractionMode::All, false);
        let bad = FieldVectors::zeros(3, 2);
        assert!(matches!(m.score_fields(&bad), Err(Error::Shape { .. })));
    }

    #[test]
    fn unused_country_gets_no_parameters() {
        let cfg = ModelConfig {
            text_dim: 2,
            ..ModelConfig::new(
                Architecture::Fwfm,
                InteractionMode::Selected(vec![(Query, Title)]),
                false,
            )
        };
        let m = RankingModel::new(cfg, 4, 2).unwrap();
        assert!(m.store().id("country_embedding").is_none());
        assert!(m.store().id("country_projection.weight").is_none());
    }

    #[test]
    fn empty_model_is_config_error() {
        let cfg = ModelConfig::new(Architecture::Fwfm, InteractionMode::Selected(vec![]), false);
        assert!(matches!(
            RankingModel::new(cfg, 4, 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn components_only_for_fwfm() {
        let m = RankingModel::new(ModelConfig::default(), 4, 2).unwrap();
        assert!(m
            .fwfm_component_scores(&FieldVectors::zeros(32, 4))
            .is_err());
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = ModelConfig::default();
        let mut b = a.clone();
        assert_eq!(a.config_hash(), b.config_hash());
        b.use_first_order = true;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 16);
    }

    #[test]
    fn config_json_defaults() {
        let cfg: ModelConfig =
            serde_json::from_str(r#"{"architecture":"fwfm","interaction_mode":"all"}"#).unwrap();
        assert_eq!(cfg.text_dim, 32);
        assert_eq!(cfg.interaction_mode, InteractionMode::All);
    }
}
