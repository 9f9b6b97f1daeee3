//! Dense vector operations and layers with explicit forward/backward passes.
//!
//! Every forward function returns whatever the matching backward needs; there is
//! no recording tape. Backward functions accumulate parameter gradients into the
//! [`ParamStore`] and return the gradient with respect to their inputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative given the pre-activation and the activation output.
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => out * (1.0 - out),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::shape("hadamard", a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

/// Returns `(g ⊙ b, g ⊙ a)`.
pub fn hadamard_backward(a: &[f64], b: &[f64], grad: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let ga = grad.iter().zip(b).map(|(g, y)| g * y).collect();
    let gb = grad.iter().zip(a).map(|(g, x)| g * x).collect();
    (ga, gb)
}

pub fn dot_product(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("dot_product", a.len(), b.len()));
    }
    Ok(dot_unchecked(a, b))
}

pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Returns `(g·b, g·a)`.
pub fn dot_backward(a: &[f64], b: &[f64], grad: f64) -> (Vec<f64>, Vec<f64>) {
    (
        b.iter().map(|y| grad * y).collect(),
        a.iter().map(|x| grad * x).collect(),
    )
}

/// Arithmetic mean of `rows`; an empty list pools to the zero vector of `dim`.
///
/// Uses a running mean so that `n` copies of `v` pool to exactly `v`.
pub fn mean_pool(rows: &[&[f64]], dim: usize) -> Result<Vec<f64>> {
    let mut mean = vec![0.0; dim];
    for (k, row) in rows.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::shape("mean_pool", dim, row.len()));
        }
        let n = (k + 1) as f64;
        for (m, x) in mean.iter_mut().zip(row.iter()) {
            *m += (x - *m) / n;
        }
    }
    Ok(mean)
}

/// Gradient reaching each of the `count` pooled rows.
pub fn mean_pool_backward(count: usize, grad: &[f64]) -> Vec<f64> {
    if count == 0 {
        return vec![0.0; grad.len()];
    }
    let n = count as f64;
    grad.iter().map(|g| g / n).collect()
}

pub fn concat(parts: &[&[f64]]) -> Result<Vec<f64>> {
    if parts.is_empty() {
        return Err(Error::Usage("concat of an empty list".into()));
    }
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        out.extend_from_slice(p);
    }
    Ok(out)
}

/// Slice a concatenated gradient back into per-input pieces.
pub fn concat_backward<'a>(grad: &'a [f64], lens: &[usize]) -> Result<Vec<&'a [f64]>> {
    let total: usize = lens.iter().sum();
    if total != grad.len() {
        return Err(Error::shape("concat_backward", total, grad.len()));
    }
    let mut out = Vec::with_capacity(lens.len());
    let mut offset = 0;
    for &len in lens {
        out.push(&grad[offset..offset + len]);
        offset += len;
    }
    Ok(out)
}

fn norm(v: &[f64]) -> f64 {
    dot_unchecked(v, v).sqrt()
}

/// Cosine similarity; zero-norm inputs give 0.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine", u.len(), v.len()));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        log::debug!("cosine of a zero-norm vector defined as 0");
        return Ok(0.0);
    }
    Ok((dot_unchecked(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

pub fn cosine_backward(u: &[f64], v: &[f64], grad: f64) -> (Vec<f64>, Vec<f64>) {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return (vec![0.0; u.len()], vec![0.0; v.len()]);
    }
    let c = dot_unchecked(u, v) / (nu * nv);
    let gu = u
        .iter()
        .zip(v)
        .map(|(x, y)| grad * (y / (nu * nv) - c * x / (nu * nu)))
        .collect();
    let gv = u
        .iter()
        .zip(v)
        .map(|(x, y)| grad * (x / (nu * nv) - c * y / (nv * nv)))
        .collect();
    (gu, gv)
}

/// Fully connected layer `activation(W·x + b)`, weights `out × in` in the store.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    weight: ParamId,
    bias: ParamId,
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
}

#[derive(Clone, Debug)]
pub struct DenseCache {
    input: Vec<f64>,
    pre: Vec<f64>,
    output: Vec<f64>,
}

impl DenseCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn pre_activation(&self) -> &[f64] {
        &self.pre
    }
}

impl DenseLayer {
    /// Register a new layer with Glorot-uniform weights and zero bias.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        let weight = store.add(format!("{name}.weight"), out_dim, in_dim, weights)?;
        let bias = store.add(format!("{name}.bias"), out_dim, 1, vec![0.0; out_dim])?;
        Ok(DenseLayer {
            weight,
            bias,
            in_dim,
            out_dim,
            activation,
        })
    }

    /// Wrap parameters that already exist in the store.
    pub fn from_params(
        store: &ParamStore,
        weight: ParamId,
        bias: ParamId,
        activation: Activation,
    ) -> Result<Self> {
        let (out_dim, in_dim) = store.get(weight).shape();
        let (bias_rows, bias_cols) = store.get(bias).shape();
        if bias_rows * bias_cols != out_dim {
            return Err(Error::shape(
                "DenseLayer bias",
                out_dim,
                bias_rows * bias_cols,
            ));
        }
        Ok(DenseLayer {
            weight,
            bias,
            in_dim,
            out_dim,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn forward(&self, store: &ParamStore, input: &[f64]) -> Result<DenseCache> {
        if input.len() != self.in_dim {
            return Err(Error::shape("apply_dense", self.in_dim, input.len()));
        }
        let w = store.value(self.weight);
        let b = store.value(self.bias);
        let pre: Vec<f64> = (0..self.out_dim)
            .map(|o| b[o] + dot_unchecked(&w[o * self.in_dim..(o + 1) * self.in_dim], input))
            .collect();
        let output = pre.iter().map(|&z| self.activation.apply(z)).collect();
        Ok(DenseCache {
            input: input.to_vec(),
            pre,
            output,
        })
    }

    /// Accumulate weight/bias gradients and return the gradient w.r.t. the input.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &DenseCache,
        grad_out: &[f64],
    ) -> Vec<f64> {
        let grad_pre: Vec<f64> = grad_out
            .iter()
            .zip(cache.pre.iter().zip(&cache.output))
            .map(|(g, (&z, &y))| g * self.activation.derivative(z, y))
            .collect();
        {
            let gb = store.grad_mut(self.bias);
            for (acc, g) in gb.iter_mut().zip(&grad_pre) {
                *acc += g;
            }
        }
        let mut grad_in = vec![0.0; self.in_dim];
        let (w, gw) = store.value_and_grad_mut(self.weight);
        for (o, &g) in grad_pre.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = o * self.in_dim..(o + 1) * self.in_dim;
            for ((acc, x), (gi, wi)) in gw[row.clone()]
                .iter_mut()
                .zip(&cache.input)
                .zip(grad_in.iter_mut().zip(&w[row]))
            {
                *acc += g * x;
                *gi += g * wi;
            }
        }
        grad_in
    }
}

/// Forward pass of a single dense layer.
pub fn apply_dense(layer: &DenseLayer, store: &ParamStore, input: &[f64]) -> Result<DenseCache> {
    layer.forward(store, input)
}

/// A stack of dense layers: relu on every hidden layer, a configurable output activation.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = in_dim;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(DenseLayer::new(
                store,
                &format!("{name}.{i}"),
                width,
                h,
                Activation::Relu,
                rng,
            )?);
            width = h;
        }
        layers.push(DenseLayer::new(
            store,
            &format!("{name}.{}", hidden.len()),
            width,
            out_dim,
            output_activation,
            rng,
        )?);
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn forward(&self, store: &ParamStore, input: &[f64]) -> Result<Vec<DenseCache>> {
        let mut caches: Vec<DenseCache> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = caches.last().map_or(input, |c| c.output.as_slice());
            let cache = layer.forward(store, x)?;
            caches.push(cache);
        }
        Ok(caches)
    }

    pub fn backward(
        &self,
        store: &mut ParamStore,
        caches: &[DenseCache],
        grad_out: &[f64],
    ) -> Vec<f64> {
        let mut grad = grad_out.to_vec();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            grad = layer.backward(store, cache, &grad);
        }
        grad
    }
}

/// Embedding table, one row per index.
#[derive(Clone, Debug)]
pub struct Embedding {
    table: ParamId,
    rows: usize,
    dim: usize,
}

impl Embedding {
    /// Uniform(−scale, scale) initialization.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        rows: usize,
        dim: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let values = (0..rows * dim)
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        let table = store.add(name, rows, dim, values)?;
        Ok(Embedding { table, rows, dim })
    }

    pub fn from_param(store: &ParamStore, table: ParamId) -> Self {
        let (rows, dim) = store.get(table).shape();
        Embedding { table, rows, dim }
    }

    pub fn param(&self) -> ParamId {
        self.table
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn clamp_index(&self, index: u32) -> usize {
        let i = index as usize;
        if i < self.rows {
            i
        } else {
            0
        }
    }

    pub fn row<'a>(&self, store: &'a ParamStore, index: u32) -> &'a [f64] {
        let i = self.clamp_index(index);
        &store.value(self.table)[i * self.dim..(i + 1) * self.dim]
    }

    /// Mean of the rows named by `indices`; out-of-range indices read row 0.
    pub fn pool(&self, store: &ParamStore, indices: &[u32]) -> Vec<f64> {
        let rows: Vec<&[f64]> = indices.iter().map(|&i| self.row(store, i)).collect();
        mean_pool(&rows, self.dim).expect("embedding rows share the table width")
    }

    pub fn pool_backward(&self, store: &mut ParamStore, indices: &[u32], grad: &[f64]) {
        let share = mean_pool_backward(indices.len(), grad);
        let g = store.grad_mut(self.table);
        for &index in indices {
            let i = self.clamp_index(index);
            for (acc, s) in g[i * self.dim..(i + 1) * self.dim].iter_mut().zip(&share) {
                *acc += s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(
        weights: Vec<f64>,
        bias: Vec<f64>,
        out: usize,
        inp: usize,
        act: Activation,
    ) -> (ParamStore, DenseLayer) {
        let mut store = ParamStore::new();
        let w = store.add("w", out, inp, weights).unwrap();
        let b = store.add("b", out, 1, bias).unwrap();
        let l = DenseLayer::from_params(&store, w, b, act).unwrap();
        (store, l)
    }

    #[test]
    fn dense_identity() {
        let (store, l) = layer(
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0],
            2,
            2,
            Activation::Identity,
        );
        assert_eq!(
            apply_dense(&l, &store, &[3.0, 4.0]).unwrap().output(),
            &[3.0, 4.0]
        );
    }

    #[test]
    fn dense_relu_clips() {
        let (store, l) = layer(vec![1.0, 1.0], vec![-2.0], 1, 2, Activation::Relu);
        let c = apply_dense(&l, &store, &[1.0, 0.5]).unwrap();
        assert_eq!(c.output(), &[0.0]);
        assert_eq!(c.pre_activation(), &[-0.5]);
    }

    #[test]
    fn dense_sigmoid_at_zero() {
        let (store, l) = layer(vec![1.0], vec![0.0], 1, 1, Activation::Sigmoid);
        assert_eq!(apply_dense(&l, &store, &[0.0]).unwrap().output(), &[0.5]);
    }

    #[test]
    fn dense_shape_error_names_dims() {
        let (store, l) = layer(vec![1.0, 1.0], vec![0.0], 1, 2, Activation::Identity);
        match apply_dense(&l, &store, &[1.0, 2.0, 3.0]) {
            Err(Error::Shape { expected, got, .. }) => assert_eq!((expected, got), (2, 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hadamard_cases() {
        assert_eq!(
            hadamard(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap(),
            vec![4.0, 10.0, 18.0]
        );
        let a = [0.3, -1.2, 7.0];
        assert_eq!(hadamard(&a, &[1.0; 3]).unwrap(), a.to_vec());
        assert_eq!(hadamard(&a, &[0.0; 3]).unwrap(), vec![0.0, -0.0, 0.0]);
        assert!(hadamard(&a, &[1.0]).is_err());
    }

    #[test]
    fn dot_cases() {
        assert_eq!(dot_product(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(dot_product(&[1.0, 2.0], &[-2.0, 1.0]).unwrap(), 0.0);
        assert_eq!(
            dot_product(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap(),
            32.0
        );
        assert!(dot_product(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mean_pool_cases() {
        assert_eq!(
            mean_pool(&[&[1.0, 0.0], &[0.0, 1.0]], 2).unwrap(),
            vec![0.5, 0.5]
        );
        assert_eq!(mean_pool(&[&[2.0, 2.0]], 2).unwrap(), vec![2.0, 2.0]);
        assert_eq!(mean_pool(&[], 3).unwrap(), vec![0.0; 3]);
        assert!(mean_pool(&[&[1.0, 2.0], &[1.0]], 2).is_err());
    }

    #[test]
    fn mean_pool_of_copies_is_exact() {
        let v = [0.1, -0.7, 1e-3, 123.456];
        for n in 1..50 {
            let rows = vec![&v[..]; n];
            assert_eq!(mean_pool(&rows, 4).unwrap(), v.to_vec());
        }
    }

    #[test]
    fn concat_cases() {
        assert_eq!(concat(&[&[1.0], &[2.0, 3.0]]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(concat(&[&[4.5]]).unwrap(), vec![4.5]);
        let four = [[1.0; 4]; 4];
        let parts: Vec<&[f64]> = four.iter().map(|r| &r[..]).collect();
        assert_eq!(concat(&parts).unwrap().len(), 16);
        assert!(matches!(concat(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn concat_backward_routes_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lens = [3usize, 1, 5];
        let grad: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
        let parts = concat_backward(&grad, &lens).unwrap();
        let direct = [&grad[0..3], &grad[3..4], &grad[4..9]];
        for (p, d) in parts.iter().zip(direct) {
            assert_eq!(*p, d);
        }
    }

    #[test]
    fn cosine_cases() {
        let u = [0.3, -2.0, 1.0];
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        assert!((cosine(&u, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn embedding_pool_out_of_range_reads_row_zero() {
        let mut store = ParamStore::new();
        let id = store.add("emb", 2, 2, vec![9.0, 8.0, 1.0, 2.0]).unwrap();
        let emb = Embedding::from_param(&store, id);
        assert_eq!(emb.pool(&store, &[7]), vec![9.0, 8.0]);
        assert_eq!(emb.pool(&store, &[]), vec![0.0, 0.0]);
    }
}
