//! Pre-norm causal decoder with optional low-rank adapters on its
//! projections, and hand-derived reverse-mode gradients.
//!
//! Every tensor lives in a flat, ordered parameter list; the order is the
//! declaration order used by checkpoints and the optimizer.

use ndarray::{s, Array1, Array2, ArrayD, ArrayView1, ArrayView2, ArrayViewMut2, Axis, Ix1, Ix2, Zip};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, Projection};
use crate::error::{ModelError, Result};
use crate::lora::{adapted_forward, dropout_mask, gaussian, init_factors};
use crate::real::Real;

pub type ParamId = usize;

pub const LAYER_NORM_EPS: f64 = 1e-5;
const EMBEDDING_INIT_STD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Frozen pretrained weights.
    Base,
    /// Low-rank adapter factor; always trainable.
    Adapter,
    /// Token or position embedding; trainable only when configured.
    Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: ArrayD<T>,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LinearIds {
    weight: ParamId,
    /// `(A, B)` when adapted.
    lora: Option<(ParamId, ParamId)>,
}

#[derive(Debug, Clone, PartialEq)]
struct BlockIds {
    ln1: (ParamId, ParamId),
    query: LinearIds,
    key: LinearIds,
    value: LinearIds,
    output: LinearIds,
    ln2: (ParamId, ParamId),
    ff_in: LinearIds,
    ff_out: LinearIds,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    tok_emb: ParamId,
    pos_emb: ParamId,
    blocks: Vec<BlockIds>,
    ln_f: (ParamId, ParamId),
    lm_head: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: Vec<Param<T>>,
    layout: Layout,
}

struct Builder<'r, T> {
    params: Vec<Param<T>>,
    rng: &'r mut ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    fn push(&mut self, name: String, value: ArrayD<T>, kind: ParamKind) -> ParamId {
        self.params.push(Param { name, value, kind });
        self.params.len() - 1
    }

    fn layer_norm(&mut self, prefix: &str, d: usize) -> (ParamId, ParamId) {
        let g = self.push(format!("{prefix}.gain"), Array1::ones(d).into_dyn(), ParamKind::Base);
        let b = self.push(format!("{prefix}.bias"), Array1::zeros(d).into_dyn(), ParamKind::Base);
        (g, b)
    }

    fn linear(&mut self, prefix: &str, d1: usize, d2: usize, adapter_rank: Option<usize>) -> Result<LinearIds> {
        let w = gaussian::<T, _>((d1, d2), 1.0 / (d2 as f64).sqrt(), self.rng);
        let weight = self.push(format!("{prefix}.weight"), w.into_dyn(), ParamKind::Base);
        let lora = match adapter_rank {
            Some(r) => {
                let (a, b) = init_factors::<T, _>(d1, d2, r, self.rng)?;
                let a = self.push(format!("{prefix}.lora_a"), a.into_dyn(), ParamKind::Adapter);
                let b = self.push(format!("{prefix}.lora_b"), b.into_dyn(), ParamKind::Adapter);
                Some((a, b))
            }
            None => None,
        };
        Ok(LinearIds { weight, lora })
    }
}

impl<T: Real> Model<T> {
    /// Randomly initialized base model with fresh adapters (B = 0).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bld = Builder { params: Vec::new(), rng: &mut rng };
        let c = &config;
        let d = c.d_model;

        let tok = gaussian::<T, _>((c.vocab_size, d), EMBEDDING_INIT_STD, bld.rng);
        let tok_emb = bld.push("tok_emb".into(), tok.into_dyn(), ParamKind::Embedding);
        let pos = gaussian::<T, _>((c.max_seq_len, d), EMBEDDING_INIT_STD, bld.rng);
        let pos_emb = bld.push("pos_emb".into(), pos.into_dyn(), ParamKind::Embedding);

        let mut blocks = Vec::with_capacity(c.n_layers);
        for l in 0..c.n_layers {
            let rank = |p: Projection| c.adapted.contains(p).then_some(c.lora_rank);
            let lin = |bld: &mut Builder<'_, T>, p: Projection| {
                let (d1, d2) = c.projection_dims(p);
                let group = if matches!(p, Projection::FfIn | Projection::FfOut) { "ff" } else { "attn" };
                bld.linear(&format!("layers.{l}.{group}.{}", p.name()), d1, d2, rank(p))
            };
            let ln1 = bld.layer_norm(&format!("layers.{l}.ln1"), d);
            let query = lin(&mut bld, Projection::Query)?;
            let key = lin(&mut bld, Projection::Key)?;
            let value = lin(&mut bld, Projection::Value)?;
            let output = lin(&mut bld, Projection::Output)?;
            let ln2 = bld.layer_norm(&format!("layers.{l}.ln2"), d);
            let ff_in = lin(&mut bld, Projection::FfIn)?;
            let ff_out = lin(&mut bld, Projection::FfOut)?;
            blocks.push(BlockIds { ln1, query, key, value, output, ln2, ff_in, ff_out });
        }
        let ln_f = bld.layer_norm("ln_f", d);
        let head = gaussian::<T, _>((c.vocab_size, d), 1.0 / (d as f64).sqrt(), bld.rng);
        let lm_head = bld.push("lm_head.weight".into(), head.into_dyn(), ParamKind::Base);

        let params = bld.params;
        Ok(Self { config, params, layout: Layout { tok_emb, pos_emb, blocks, ln_f, lm_head } })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        match self.params[id].kind {
            ParamKind::Base => false,
            ParamKind::Adapter => true,
            ParamKind::Embedding => self.config.train_embeddings,
        }
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        (0..self.params.len()).filter(|&i| self.is_trainable(i)).collect()
    }

    pub fn trainable_mask(&self) -> Vec<bool> {
        (0..self.params.len()).map(|i| self.is_trainable(i)).collect()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.trainable_ids().iter().map(|&i| self.params[i].value.len()).sum()
    }

    /// Copy of this model with every adapter folded into its base weight.
    pub fn merge_adapters(&self) -> Self {
        let mut config = self.config.clone();
        config.adapted = Default::default();
        let mut merged = Model::<T>::new_zeroed_like(&config, self);
        for (bi, block) in self.layout.blocks.iter().enumerate() {
            for (src, dst) in block.linears().into_iter().zip(merged.layout.blocks[bi].linears()) {
                let mut w = self.mat(src.weight).to_owned();
                if let Some((a, b)) = src.lora {
                    let delta = self.mat(b).dot(&self.mat(a));
                    w.scaled_add(self.adapter_scale(), &delta);
                }
                merged.params[dst.weight].value = w.into_dyn();
            }
        }
        merged
    }

    /// Copy of this model with adapters removed and base weights unchanged.
    pub fn base_model(&self) -> Self {
        let mut config = self.config.clone();
        config.adapted = Default::default();
        Model::<T>::new_zeroed_like(&config, self)
    }

    /// Model with `config`'s layout whose tensors are copied by name from
    /// `src`.
    fn new_zeroed_like(config: &ModelConfig, src: &Self) -> Self {
        let mut m = Model::<T>::new(config.clone(), 0).expect("config already validated");
        for p in &mut m.params {
            let from = src.params.iter().find(|q| q.name == p.name).expect("base tensor present in source");
            p.value = from.value.clone();
        }
        m
    }

    /// Replace all tensors from an ordered name/value list (checkpoint load).
    pub fn load_tensors(&mut self, tensors: Vec<(String, ArrayD<T>)>) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(ModelError::Format(format!(
                "expected {} model tensors, found {}",
                self.params.len(),
                tensors.len()
            )));
        }
        for (p, (name, value)) in self.params.iter_mut().zip(tensors) {
            if p.name != name {
                return Err(ModelError::Format(format!("expected tensor {:?}, found {name:?}", p.name)));
            }
            if p.value.shape() != value.shape() {
                return Err(ModelError::Format(format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value = value;
        }
        Ok(())
    }

    pub fn adapter_scale(&self) -> T {
        T::from_f64(self.config.lora_alpha / self.config.lora_rank as f64)
    }

    fn mat(&self, id: ParamId) -> ArrayView2<'_, T> {
        self.params[id].value.view().into_dimensionality::<Ix2>().expect("2-d parameter")
    }

    fn vec(&self, id: ParamId) -> ArrayView1<'_, T> {
        self.params[id].value.view().into_dimensionality::<Ix1>().expect("1-d parameter")
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if tokens.len() > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong { len: tokens.len(), max: self.config.max_seq_len });
        }
        if let Some((pos, &id)) = tokens.iter().enumerate().find(|(_, &t)| t as usize >= self.config.vocab_size) {
            return Err(ModelError::OutOfVocab { id, pos, vocab: self.config.vocab_size });
        }
        Ok(())
    }

    /// Evaluation-mode logits, one row per position.
    pub fn forward(&self, tokens: &[u32]) -> Result<Array2<T>> {
        Ok(self.forward_train(tokens, None)?.0)
    }

    /// Forward pass keeping everything the backward pass needs. Adapter
    /// dropout is active only when `rng` is given.
    pub fn forward_train(&self, tokens: &[u32], rng: Option<&mut dyn RngCore>) -> Result<(Array2<T>, ForwardCache<T>)> {
        let cache = self.hidden(tokens, rng)?;
        let logits = cache.head_input.dot(&self.mat(self.layout.lm_head).t());
        Ok((logits, cache))
    }

    /// Evaluation-mode logits for the position after the last token.
    pub fn next_token_logits(&self, tokens: &[u32]) -> Result<Array1<T>> {
        let cache = self.hidden(tokens, None)?;
        let last = cache.head_input.row(tokens.len() - 1);
        Ok(self.mat(self.layout.lm_head).dot(&last))
    }

    fn hidden(&self, tokens: &[u32], mut rng: Option<&mut dyn RngCore>) -> Result<ForwardCache<T>> {
        self.check_tokens(tokens)?;
        let n = tokens.len();
        let tok = self.mat(self.layout.tok_emb);
        let pos = self.mat(self.layout.pos_emb);
        let mut x = Array2::zeros((n, self.config.d_model));
        for (i, &t) in tokens.iter().enumerate() {
            let mut row = x.row_mut(i);
            row.assign(&tok.row(t as usize));
            row += &pos.row(i);
        }

        let mut blocks = Vec::with_capacity(self.layout.blocks.len());
        for ids in &self.layout.blocks {
            let (out, cache) = self.block_forward(ids, x, &mut rng);
            x = out;
            blocks.push(cache);
        }
        let (y, ln_f) = layer_norm(x.view(), self.vec(self.layout.ln_f.0), self.vec(self.layout.ln_f.1));
        Ok(ForwardCache { tokens: tokens.to_vec(), blocks, ln_f, head_input: y })
    }

    fn linear_forward(&self, ids: LinearIds, x: Array2<T>, rng: &mut Option<&mut dyn RngCore>) -> (Array2<T>, LinearCache<T>) {
        let w = self.mat(ids.weight);
        match ids.lora {
            None => (x.dot(&w.t()), LinearCache { input: x, mask: None, bottleneck: None }),
            Some((a, b)) => {
                let mask = rng.as_mut().and_then(|r| dropout_mask(x.dim(), self.config.lora_dropout, &mut **r));
                let (h, u) = adapted_forward(w, self.mat(a), self.mat(b), self.adapter_scale(), x.view(), mask.as_ref());
                (h, LinearCache { input: x, mask, bottleneck: Some(u) })
            }
        }
    }

    fn block_forward(&self, ids: &BlockIds, x: Array2<T>, rng: &mut Option<&mut dyn RngCore>) -> (Array2<T>, BlockCache<T>) {
        let (a, ln1) = layer_norm(x.view(), self.vec(ids.ln1.0), self.vec(ids.ln1.1));
        let (q, q_c) = self.linear_forward(ids.query, a.clone(), rng);
        let (k, k_c) = self.linear_forward(ids.key, a.clone(), rng);
        let (v, v_c) = self.linear_forward(ids.value, a, rng);
        let (attn, probs) = causal_attention(q.view(), k.view(), v.view(), self.config.n_heads);
        let (o, o_c) = self.linear_forward(ids.output, attn, rng);
        let mid = &x + &o;

        let (b, ln2) = layer_norm(mid.view(), self.vec(ids.ln2.0), self.vec(ids.ln2.1));
        let (pre, ff_in_c) = self.linear_forward(ids.ff_in, b, rng);
        let act = pre.mapv(gelu);
        let (f, ff_out_c) = self.linear_forward(ids.ff_out, act, rng);
        let out = &mid + &f;
        let cache = BlockCache { ln1, q_c, k_c, v_c, q, k, v, probs, o_c, ln2, ff_in_c, pre, ff_out_c };
        (out, cache)
    }

    /// Gradients of a scalar loss given `dlogits`. Only tensors flagged in
    /// `wanted` (indexed by [`ParamId`]) receive a gradient.
    pub fn backward(&self, cache: &ForwardCache<T>, dlogits: ArrayView2<'_, T>, wanted: &[bool]) -> Grads<T> {
        let mut grads = Grads::new(wanted.to_vec());
        let head = self.mat(self.layout.lm_head);
        if grads.wants(self.layout.lm_head) {
            grads.add(self.layout.lm_head, dlogits.t().dot(&cache.head_input));
        }
        let dy = dlogits.dot(&head);
        let mut dx = self.layer_norm_backward(self.layout.ln_f, &cache.ln_f, dy, &mut grads);

        for (ids, bc) in self.layout.blocks.iter().zip(&cache.blocks).rev() {
            dx = self.block_backward(ids, bc, dx, &mut grads);
        }

        for (id, positional) in [(self.layout.tok_emb, false), (self.layout.pos_emb, true)] {
            if grads.wants(id) {
                let mut g = Array2::zeros(self.mat(id).dim());
                for (i, &t) in cache.tokens.iter().enumerate() {
                    let row = if positional { i } else { t as usize };
                    let mut dst = g.row_mut(row);
                    dst += &dx.row(i);
                }
                grads.add(id, g);
            }
        }
        grads
    }

    fn block_backward(&self, ids: &BlockIds, c: &BlockCache<T>, dout: Array2<T>, grads: &mut Grads<T>) -> Array2<T> {
        // out = mid + ff_out(gelu(ff_in(ln2(mid))))
        let dact = self.linear_backward(ids.ff_out, &c.ff_out_c, &dout, grads);
        let dpre = Zip::from(&dact).and(&c.pre).map_collect(|&g, &p| g * gelu_grad(p));
        let db = self.linear_backward(ids.ff_in, &c.ff_in_c, &dpre, grads);
        let mut dmid = self.layer_norm_backward(ids.ln2, &c.ln2, db, grads);
        dmid += &dout;

        // mid = x + output(attention(q, k, v)), q/k/v = proj(ln1(x))
        let dattn = self.linear_backward(ids.output, &c.o_c, &dmid, grads);
        let (dq, dk, dv) = causal_attention_backward(dattn.view(), c.q.view(), c.k.view(), c.v.view(), &c.probs, self.config.n_heads);
        let mut da = self.linear_backward(ids.query, &c.q_c, &dq, grads);
        da += &self.linear_backward(ids.key, &c.k_c, &dk, grads);
        da += &self.linear_backward(ids.value, &c.v_c, &dv, grads);
        let mut dx = self.layer_norm_backward(ids.ln1, &c.ln1, da, grads);
        dx += &dmid;
        dx
    }

    fn linear_backward(&self, ids: LinearIds, c: &LinearCache<T>, dh: &Array2<T>, grads: &mut Grads<T>) -> Array2<T> {
        let mut dx = dh.dot(&self.mat(ids.weight));
        if grads.wants(ids.weight) {
            grads.add(ids.weight, dh.t().dot(&c.input));
        }
        if let Some((a_id, b_id)) = ids.lora {
            let scale = self.adapter_scale();
            let u = c.bottleneck.as_ref().expect("adapted layer caches its bottleneck");
            let dhb = dh.dot(&self.mat(b_id)); // n x r
            if grads.wants(b_id) {
                grads.add(b_id, dh.t().dot(u) * scale);
            }
            if grads.wants(a_id) {
                let ga = match &c.mask {
                    Some(m) => dhb.t().dot(&(&c.input * m)),
                    None => dhb.t().dot(&c.input),
                };
                grads.add(a_id, ga * scale);
            }
            let mut dxa = dhb.dot(&self.mat(a_id)) * scale;
            if let Some(m) = &c.mask {
                dxa *= m;
            }
            dx += &dxa;
        }
        dx
    }

    fn layer_norm_backward(&self, ids: (ParamId, ParamId), c: &LayerNormCache<T>, dy: Array2<T>, grads: &mut Grads<T>) -> Array2<T> {
        let gain = self.vec(ids.0);
        if grads.wants(ids.0) {
            grads.add1(ids.0, (&dy * &c.xhat).sum_axis(Axis(0)));
        }
        if grads.wants(ids.1) {
            grads.add1(ids.1, dy.sum_axis(Axis(0)));
        }
        let d = T::from_f64(dy.ncols() as f64);
        let mut dx = dy;
        for ((mut row, xhat), &inv_std) in dx.rows_mut().into_iter().zip(c.xhat.rows()).zip(&c.inv_std) {
            row *= &gain;
            let mean_g = row.sum() / d;
            let mean_gx = row.iter().zip(xhat).map(|(&g, &x)| g * x).sum::<T>() / d;
            Zip::from(&mut row).and(&xhat).for_each(|g, &x| *g = inv_std * (*g - mean_g - x * mean_gx));
        }
        dx
    }
}

impl BlockIds {
    fn linears(&self) -> [LinearIds; 6] {
        [self.query, self.key, self.value, self.output, self.ff_in, self.ff_out]
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

#[derive(Debug, Clone)]
struct LinearCache<T> {
    input: Array2<T>,
    mask: Option<Array2<T>>,
    bottleneck: Option<Array2<T>>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    ln1: LayerNormCache<T>,
    q_c: LinearCache<T>,
    k_c: LinearCache<T>,
    v_c: LinearCache<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    o_c: LinearCache<T>,
    ln2: LayerNormCache<T>,
    ff_in_c: LinearCache<T>,
    pre: Array2<T>,
    ff_out_c: LinearCache<T>,
}

/// Activations saved by [`Model::forward_train`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    tokens: Vec<u32>,
    blocks: Vec<BlockCache<T>>,
    ln_f: LayerNormCache<T>,
    head_input: Array2<T>,
}

/// Per-parameter gradients, present only for requested tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    wanted: Vec<bool>,
    slots: Vec<Option<ArrayD<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn new(wanted: Vec<bool>) -> Self {
        let slots = vec![None; wanted.len()];
        Self { wanted, slots }
    }

    pub fn wants(&self, id: ParamId) -> bool {
        self.wanted[id]
    }

    pub fn get(&self, id: ParamId) -> Option<&ArrayD<T>> {
        self.slots[id].as_ref()
    }

    pub fn slots(&self) -> &[Option<ArrayD<T>>] {
        &self.slots
    }

    pub fn slots_mut(&mut self) -> &mut [Option<ArrayD<T>>] {
        &mut self.slots
    }

    fn add(&mut self, id: ParamId, g: Array2<T>) {
        self.accumulate(id, g.into_dyn());
    }

    fn add1(&mut self, id: ParamId, g: Array1<T>) {
        self.accumulate(id, g.into_dyn());
    }

    fn accumulate(&mut self, id: ParamId, g: ArrayD<T>) {
        match &mut self.slots[id] {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(g),
        }
    }

    /// Add `other * weight` into `self`, slot by slot.
    pub fn add_scaled(&mut self, other: &Grads<T>, weight: T) {
        for (dst, src) in self.slots.iter_mut().zip(&other.slots) {
            if let Some(src) = src {
                match dst {
                    Some(d) => d.scaled_add(weight, src),
                    None => *dst = Some(src.mapv(|v| v * weight)),
                }
            }
        }
    }

    /// Euclidean norm over all present gradients, accumulated in f64.
    pub fn global_norm(&self) -> f64 {
        self.slots.iter().flatten().flat_map(|g| g.iter()).map(|&v| v.to_f64() * v.to_f64()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.slots.iter_mut().flatten() {
            g.mapv_inplace(|v| v * factor);
        }
    }
}

fn layer_norm<T: Real>(x: ArrayView2<'_, T>, gain: ArrayView1<'_, T>, bias: ArrayView1<'_, T>) -> (Array2<T>, LayerNormCache<T>) {
    let (n, d) = x.dim();
    let eps = T::from_f64(LAYER_NORM_EPS);
    let df = T::from_f64(d as f64);
    let mut xhat = Array2::zeros((n, d));
    let mut inv_std = Array1::zeros(n);
    for (i, row) in x.rows().into_iter().enumerate() {
        let mean = row.sum() / df;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / df;
        let is = T::one() / (var + eps).sqrt();
        inv_std[i] = is;
        Zip::from(xhat.row_mut(i)).and(&row).for_each(|h, &v| *h = (v - mean) * is);
    }
    let mut y = xhat.clone();
    for mut row in y.rows_mut() {
        Zip::from(&mut row).and(&gain).and(&bias).for_each(|v, &g, &b| *v = *v * g + b);
    }
    (y, LayerNormCache { xhat, inv_std })
}

const GELU_COEF: f64 = 0.044715;

fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + T::from_f64(GELU_COEF) * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64(GELU_COEF);
    let half = T::from_f64(0.5);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::from_f64(3.0) * k * x * x)
}

/// Multi-head attention where position `i` attends to positions `<= i`.
/// Returns the concatenated head outputs and each head's probabilities.
fn causal_attention<T: Real>(q: ArrayView2<'_, T>, k: ArrayView2<'_, T>, v: ArrayView2<'_, T>, n_heads: usize) -> (Array2<T>, Vec<Array2<T>>) {
    let (n, d) = q.dim();
    let dh = d / n_heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut out = Array2::zeros((n, d));
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut p = q.slice(cols).dot(&k.slice(cols).t());
        for (i, mut row) in p.rows_mut().into_iter().enumerate() {
            let visible = row.slice(s![..=i]);
            let max = visible.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let mut sum = T::zero();
            for (j, x) in row.iter_mut().enumerate() {
                if j <= i {
                    *x = ((*x - max) * scale).exp();
                    sum += *x;
                } else {
                    *x = T::zero();
                }
            }
            row.mapv_inplace(|x| x / sum);
        }
        out.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        probs.push(p);
    }
    (out, probs)
}

fn causal_attention_backward<T: Real>(
    dout: ArrayView2<'_, T>,
    q: ArrayView2<'_, T>,
    k: ArrayView2<'_, T>,
    v: ArrayView2<'_, T>,
    probs: &[Array2<T>],
    n_heads: usize,
) -> (Array2<T>, Array2<T>, Array2<T>) {
    let (n, d) = q.dim();
    let dh = d / n_heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut dq = Array2::zeros((n, d));
    let mut dk = Array2::zeros((n, d));
    let mut dv = Array2::zeros((n, d));
    for (h, p) in probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dout_h = dout.slice(cols);
        let dp = dout_h.dot(&v.slice(cols).t());
        dv.slice_mut(cols).assign(&p.t().dot(&dout_h));
        let mut ds = dp;
        softmax_backward_rows(ds.view_mut(), p.view());
        ds.mapv_inplace(|x| x * scale);
        dq.slice_mut(cols).assign(&ds.dot(&k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&q.slice(cols)));
    }
    (dq, dk, dv)
}

/// In place: `dp <- p * (dp - rowsum(dp * p))`.
fn softmax_backward_rows<T: Real>(mut dp: ArrayViewMut2<'_, T>, p: ArrayView2<'_, T>) {
    for (mut drow, prow) in dp.rows_mut().into_iter().zip(p.rows()) {
        let dot: T = drow.iter().zip(prow).map(|(&g, &pp)| g * pp).sum();
        Zip::from(&mut drow).and(&prow).for_each(|g, &pp| *g = pp * (*g - dot));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ProjectionSet;
    use crate::loss::clm_loss_and_grad;

    fn tiny(adapted: ProjectionSet) -> ModelConfig {
        ModelConfig {
            vocab_size: 11,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            max_seq_len: 6,
            lora_rank: 2,
            lora_alpha: 4.0,
            lora_dropout: 0.0,
            adapted,
            train_embeddings: false,
        }
    }

    #[test]
    fn output_shape_and_errors() {
        let m = Model::<f32>::new(tiny(ProjectionSet::all()), 1).unwrap();
        assert_eq!(m.forward(&[1]).unwrap().dim(), (1, 11));
        assert_eq!(m.forward(&[1, 4, 5]).unwrap().dim(), (3, 11));
        assert!(matches!(m.forward(&[1; 7]), Err(ModelError::SequenceTooLong { .. })));
        assert!(matches!(m.forward(&[1, 11]), Err(ModelError::OutOfVocab { id: 11, pos: 1, .. })));
        assert!(matches!(m.forward(&[]), Err(ModelError::EmptySequence)));
    }

    #[test]
    fn causal_mask() {
        let m = Model::<f64>::new(tiny(ProjectionSet::all()), 2).unwrap();
        let a = m.forward(&[1, 4, 5, 6, 7]).unwrap();
        let b = m.forward(&[1, 4, 5, 9, 7]).unwrap();
        assert_eq!(a.slice(s![..3, ..]), b.slice(s![..3, ..]));
        assert_ne!(a.row(3), b.row(3));
    }

    #[test]
    fn deterministic() {
        let m1 = Model::<f32>::new(tiny(ProjectionSet::all()), 3).unwrap();
        let m2 = Model::<f32>::new(tiny(ProjectionSet::all()), 3).unwrap();
        let a = m1.forward(&[1, 2, 3]).unwrap();
        let b = m2.forward(&[1, 2, 3]).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn trainable_census() {
        let c = tiny([Projection::Query, Projection::FfIn].into_iter().collect());
        let m = Model::<f32>::new(c.clone(), 0).unwrap();
        // per layer: 2 * (8 + 8) + 2 * (16 + 8)
        assert_eq!(m.trainable_param_count(), 2 * (2 * 16 + 2 * 24));
        assert_eq!(m.trainable_param_count(), c.adapter_param_count());
        let m = Model::<f32>::new(ModelConfig { train_embeddings: true, ..c.clone() }, 0).unwrap();
        assert_eq!(m.trainable_param_count(), c.adapter_param_count() + 11 * 8 + 6 * 8);
    }

    #[test]
    fn merged_model_matches() {
        let mut m = Model::<f64>::new(tiny(ProjectionSet::all()), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for p in m.params_mut() {
            if p.name.ends_with("lora_b") {
                let dim = p.value.shape().to_vec();
                p.value = gaussian::<f64, _>((dim[0], dim[1]), 0.2, &mut rng).into_dyn();
            }
        }
        let merged = m.merge_adapters();
        let t = [1, 3, 5, 7];
        let a = m.forward(&t).unwrap();
        let b = merged.forward(&t).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
        assert!(merged.trainable_ids().is_empty());
    }

    #[test]
    fn backward_fills_only_wanted() {
        let m = Model::<f64>::new(tiny(ProjectionSet::all()), 5).unwrap();
        let tokens = [1, 4, 6, 8];
        let (logits, cache) = m.forward_train(&tokens, None).unwrap();
        let (_, dlogits) = clm_loss_and_grad(logits.view(), &tokens).unwrap();
        let wanted = m.trainable_mask();
        let g = m.backward(&cache, dlogits.view(), &wanted);
        for (i, slot) in g.slots().iter().enumerate() {
            assert_eq!(slot.is_some(), wanted[i], "{}", m.params()[i].name);
        }
    }
}
