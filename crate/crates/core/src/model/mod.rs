//! Compact point-cloud segmentation network with a scene-classification head.
//!
//! Each encoder layer applies `linear + bias + ReLU` per point and then
//! concatenates the point's own activation with the element-wise maximum
//! over its `k_agg` nearest neighbors in the sub-cloud. A per-point MLP
//! decodes the last layer into class logits. The scene head is an MLP over
//! the concatenation of every layer's global max-pooled activation.
//!
//! Gradients are computed by hand-written reverse mode over the cached
//! [`ForwardTrace`]. Max pooling routes the gradient to the argmax recorded
//! in the forward pass (lowest index on ties).

mod adam;
mod checkpoint;
mod infer;

pub use adam::AdamState;
pub use checkpoint::Checkpoint;
pub use infer::{inference_centers, infer_cloud, ProbabilityMap};

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{PointCloud, SpatialIndex};
use crate::scalar::{axpy, matmul, matmul_nt, matmul_tn_acc, Scalar};
use crate::weaklabel::{knn_with_self, SubCloud};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder_widths: Vec<usize>,
    pub k_agg: usize,
    pub decoder_hidden: usize,
    pub scene_hidden: usize,
    pub classes: usize,
    /// Per-point feature dimension `D`; the network input is `3 + D`.
    pub feature_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_widths: vec![32, 64, 128],
            k_agg: 8,
            decoder_hidden: 64,
            scene_hidden: 64,
            classes: 5,
            feature_dim: 3,
        }
    }
}

impl ModelConfig {
    #[inline]
    pub fn input_dim(&self) -> usize {
        3 + self.feature_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_widths.is_empty() {
            return Err(Error::Config("at least one encoder layer is required".into()));
        }
        if self.encoder_widths.iter().any(|&w| w == 0)
            || self.decoder_hidden == 0
            || self.scene_hidden == 0
            || self.classes == 0
            || self.k_agg == 0
        {
            return Err(Error::Config("widths, k_agg and class count must be positive".into()));
        }
        Ok(())
    }

    fn layout(&self) -> Layout {
        let mut b = LayoutBuilder::default();
        let mut inp = self.input_dim();
        for (l, &w) in self.encoder_widths.iter().enumerate() {
            b.dense(&format!("encoder.{l}"), inp, w);
            inp = 2 * w;
        }
        // every point also sees the sub-cloud's global feature
        let global: usize = self.encoder_widths.iter().sum();
        b.dense("decoder.hidden", inp + global, self.decoder_hidden);
        b.dense("decoder.out", self.decoder_hidden, self.classes);
        b.dense("scene.hidden", global, self.scene_hidden);
        b.dense("scene.out", self.scene_hidden, self.classes);
        b.finish()
    }
}

/// One named tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TensorSpec {
    #[inline]
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn is_bias(&self) -> bool {
        self.name.ends_with(".bias")
    }
}

/// Tensors tiling the flat parameter vector without gaps or overlap.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

impl Layout {
    /// Tensor containing flat index `i`.
    pub fn tensor_of(&self, i: usize) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.range().contains(&i))
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// True when the tensors cover `0..total` exactly once, in order.
    pub fn is_exact_cover(&self) -> bool {
        let mut next = 0;
        for t in &self.tensors {
            if t.offset != next {
                return false;
            }
            next += t.len();
        }
        next == self.total
    }
}

#[derive(Default)]
struct LayoutBuilder {
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl LayoutBuilder {
    fn dense(&mut self, name: &str, inp: usize, out: usize) {
        // Weights are stored input-major: `rows = in`, `cols = out`.
        self.push(format!("{name}.weight"), inp, out);
        self.push(format!("{name}.bias"), 1, out);
    }

    fn push(&mut self, name: String, rows: usize, cols: usize) {
        self.tensors.push(TensorSpec {
            name,
            offset: self.total,
            rows,
            cols,
        });
        self.total += rows * cols;
    }

    fn finish(self) -> Layout {
        Layout {
            tensors: self.tensors,
            total: self.total,
        }
    }
}

/// Flat parameter vector plus its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub values: Vec<T>,
    pub layout: Layout,
}

impl<T: Scalar> Params<T> {
    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.get(name).map(|t| &self.values[t.range()])
    }

    pub fn zeros_like(&self) -> Vec<T> {
        vec![T::zero(); self.values.len()]
    }

    /// Same values in another precision.
    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            values: self.values.iter().map(|v| U::of(v.f64())).collect(),
            layout: self.layout.clone(),
        }
    }
}

/// Location of one dense layer inside the parameter vector.
#[derive(Clone, Debug)]
struct Dense {
    w: Range<usize>,
    b: Range<usize>,
    inp: usize,
    out: usize,
}

/// Network-ready features of one sub-cloud.
#[derive(Clone, Debug)]
pub struct SampleInput<T> {
    pub n: usize,
    /// Row-major `n × (3 + D)`: position relative to the center, then features.
    pub features: Vec<T>,
    /// Row-major `n × k` neighbor lists (local indices, self first).
    pub neighbors: Vec<u32>,
    pub k: usize,
}

impl<T: Scalar> SampleInput<T> {
    /// Builds the input for `members` of `cloud` around `center`; `k_agg`
    /// is clipped to the member count.
    pub fn new(cloud: &PointCloud, members: &[usize], center: [f64; 3], k_agg: usize) -> Result<Self> {
        let n = members.len();
        if n == 0 {
            return Err(Error::EmptySubCloud);
        }
        let d = cloud.feature_dim();
        let mut features = Vec::with_capacity(n * (3 + d));
        let mut local = Vec::with_capacity(n);
        for &m in members {
            let p = cloud.position(m);
            local.push(p);
            for a in 0..3 {
                features.push(T::of(p[a] - center[a]));
            }
            features.extend(cloud.feature(m).iter().map(|&f| T::of(f)));
        }
        let k = k_agg.min(n);
        let index = SpatialIndex::new(&local)?;
        let neighbors = knn_with_self(&index, k).into_iter().map(|i| i as u32).collect();
        Ok(Self {
            n,
            features,
            neighbors,
            k,
        })
    }

    pub fn from_subcloud(cloud: &PointCloud, sub: &SubCloud, k_agg: usize) -> Result<Self> {
        Self::new(cloud, &sub.members, sub.center, k_agg)
    }
}

/// Activations cached by [`Model::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    n: usize,
    classes: usize,
    param_len: usize,
    /// `h^0, h^1, …, h^L`; `h^l = concat(a^l, pooled a^l)` for `l ≥ 1`.
    hidden: Vec<Vec<T>>,
    /// Post-ReLU encoder activations `a^l`.
    acts: Vec<Vec<T>>,
    /// Local point index that supplied each pooled value.
    pool_arg: Vec<Vec<u32>>,
    decoder_hidden: Vec<T>,
    logits: Vec<T>,
    probs: Vec<T>,
    /// Concatenated global max-pooled activations.
    global: Vec<T>,
    global_arg: Vec<u32>,
    scene_hidden: Vec<T>,
    scene_logits: Vec<T>,
    scene_probs: Vec<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Per-point class probabilities, row-major `n × C`.
    #[inline]
    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    #[inline]
    pub fn prob_row(&self, i: usize) -> &[T] {
        &self.probs[i * self.classes..(i + 1) * self.classes]
    }

    #[inline]
    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    /// Scene logits `ḡ`.
    #[inline]
    pub fn scene_logits(&self) -> &[T] {
        &self.scene_logits
    }

    /// Scene probabilities `z̄ = sigmoid(ḡ)`.
    #[inline]
    pub fn scene_probs(&self) -> &[T] {
        &self.scene_probs
    }

    /// Global max-pooled activations of every encoder layer, concatenated.
    #[inline]
    pub fn global_features(&self) -> &[T] {
        &self.global
    }

    /// Feeds every discrete choice of the pass (ReLU signs, pooling
    /// arguments) to `h`; two traces with equal patterns lie on the same
    /// smooth piece of the network.
    pub fn hash_pattern<H: std::hash::Hasher>(&self, h: &mut H) {
        use std::hash::Hash;
        let signs = |v: &[T], h: &mut H| v.iter().map(|&x| x > T::zero()).collect::<Vec<_>>().hash(h);
        for a in &self.acts {
            signs(a, h);
        }
        signs(&self.decoder_hidden, h);
        signs(&self.scene_hidden, h);
        self.pool_arg.hash(h);
        self.global_arg.hash(h);
    }
}

/// Gradient of a loss with respect to the network outputs of one sub-cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputGrad<T> {
    /// Row-major `n × C`, with respect to the per-point logits.
    pub logits: Vec<T>,
    /// With respect to the scene logits `ḡ`.
    pub scene: Vec<T>,
}

impl<T: Scalar> OutputGrad<T> {
    pub fn zeros(n: usize, classes: usize) -> Self {
        Self {
            logits: vec![T::zero(); n * classes],
            scene: vec![T::zero(); classes],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        axpy(T::one(), &other.logits, &mut self.logits);
        axpy(T::one(), &other.scene, &mut self.scene);
    }
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    layout: Layout,
    encoder: Vec<Dense>,
    decoder_hidden: Dense,
    decoder_out: Dense,
    scene_hidden: Dense,
    scene_out: Dense,
    _scalar: std::marker::PhantomData<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let dense = |name: &str| -> Dense {
            let w = layout.get(&format!("{name}.weight")).expect("layout has weight");
            let b = layout.get(&format!("{name}.bias")).expect("layout has bias");
            Dense {
                w: w.range(),
                b: b.range(),
                inp: w.rows,
                out: w.cols,
            }
        };
        let encoder = (0..config.encoder_widths.len())
            .map(|l| dense(&format!("encoder.{l}")))
            .collect();
        Ok(Self {
            encoder,
            decoder_hidden: dense("decoder.hidden"),
            decoder_out: dense("decoder.out"),
            scene_hidden: dense("scene.hidden"),
            scene_out: dense("scene.out"),
            layout,
            config,
            _scalar: std::marker::PhantomData,
        })
    }

    #[inline]
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    #[inline]
    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.config.classes
    }

    /// He-normal weights (`σ² = 2 / fan_in`) and zero biases.
    pub fn init_params(&self, seed: u64) -> Params<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![T::zero(); self.layout.total];
        for t in &self.layout.tensors {
            if t.is_bias() {
                continue;
            }
            let normal = Normal::new(0.0, (2.0 / t.rows as f64).sqrt()).expect("finite std");
            for v in &mut values[t.range()] {
                *v = T::of(normal.sample(&mut rng));
            }
        }
        Params {
            values,
            layout: self.layout.clone(),
        }
    }

    pub fn zero_params(&self) -> Params<T> {
        Params {
            values: vec![T::zero(); self.layout.total],
            layout: self.layout.clone(),
        }
    }

    fn check_params(&self, params: &Params<T>) -> Result<()> {
        if params.layout != self.layout || params.values.len() != self.layout.total {
            return Err(Error::Shape("parameter layout does not match the model".into()));
        }
        Ok(())
    }

    /// Runs the network on one prepared sub-cloud.
    pub fn forward(&self, params: &Params<T>, input: &SampleInput<T>) -> Result<ForwardTrace<T>> {
        self.forward_impl(params, input, true)
    }

    /// Like [`forward`](Self::forward) but without the pooling arguments
    /// needed by [`backward`](Self::backward).
    pub fn predict(&self, params: &Params<T>, input: &SampleInput<T>) -> Result<ForwardTrace<T>> {
        self.forward_impl(params, input, false)
    }

    fn forward_impl(&self, params: &Params<T>, input: &SampleInput<T>, record: bool) -> Result<ForwardTrace<T>> {
        self.check_params(params)?;
        let n = input.n;
        if n == 0 {
            return Err(Error::EmptySubCloud);
        }
        if input.features.len() != n * self.config.input_dim() || input.neighbors.len() != n * input.k {
            return Err(Error::Shape("sample input does not match the model".into()));
        }
        let p = &params.values;
        let k = input.k;
        let mut hidden = Vec::with_capacity(self.encoder.len() + 1);
        hidden.push(input.features.clone());
        let mut acts = Vec::with_capacity(self.encoder.len());
        let mut pool_arg = Vec::with_capacity(self.encoder.len());
        let mut global = Vec::new();
        let mut global_arg = Vec::new();

        for layer in &self.encoder {
            let w = layer.out;
            let mut a = vec![T::zero(); n * w];
            dense_forward(hidden.last().expect("input"), n, &p[layer.w.clone()], &p[layer.b.clone()], layer.inp, w, &mut a, true);

            let mut h = vec![T::zero(); n * 2 * w];
            let mut arg = if record { vec![u32::MAX; n * w] } else { Vec::new() };
            let mut order = vec![0u32; k];
            for i in 0..n {
                let nb = &input.neighbors[i * k..(i + 1) * k];
                let row = &mut h[i * 2 * w..(i + 1) * 2 * w];
                row[..w].copy_from_slice(&a[i * w..(i + 1) * w]);
                let (_, pooled) = row.split_at_mut(w);
                let j0 = nb[0] as usize;
                pooled.copy_from_slice(&a[j0 * w..(j0 + 1) * w]);
                for &j in &nb[1..] {
                    let aj = &a[j as usize * w..(j as usize + 1) * w];
                    for (p, &v) in pooled.iter_mut().zip(aj) {
                        *p = if v > *p { v } else { *p };
                    }
                }
                if record {
                    // descending order leaves the lowest index attaining the max
                    let arg_row = &mut arg[i * w..(i + 1) * w];
                    order[..k].copy_from_slice(nb);
                    order[..k].sort_unstable_by(|x, y| y.cmp(x));
                    for &j in &order[..k] {
                        let aj = &a[j as usize * w..(j as usize + 1) * w];
                        for ((r, &v), &p) in arg_row.iter_mut().zip(aj).zip(pooled.iter()) {
                            *r = if v == p { j } else { *r };
                        }
                    }
                }
            }

            let start = global.len();
            global.extend_from_slice(&a[..w]);
            for ai in a.chunks_exact(w).skip(1) {
                for (g, &v) in global[start..].iter_mut().zip(ai) {
                    *g = if v > *g { v } else { *g };
                }
            }
            // first point attaining the max
            global_arg.extend(std::iter::repeat(u32::MAX).take(w));
            for (i, ai) in a.chunks_exact(w).enumerate() {
                let i = i as u32;
                for ((r, &v), &g) in global_arg[start..].iter_mut().zip(ai).zip(&global[start..]) {
                    *r = if v == g && *r == u32::MAX { i } else { *r };
                }
            }

            acts.push(a);
            pool_arg.push(arg);
            hidden.push(h);
        }

        // decoder.hidden on concat(h^L_i, f̄): the f̄ rows of W fold into the bias
        let dh = &self.decoder_hidden;
        let local = dh.inp - global.len();
        let (w_local, w_global) = p[dh.w.clone()].split_at(local * dh.out);
        let mut bias = p[dh.b.clone()].to_vec();
        matmul(&global, w_global, &mut bias, 1, global.len(), dh.out, T::one());
        let mut decoder_hidden = vec![T::zero(); n * dh.out];
        dense_forward(hidden.last().expect("encoder output"), n, w_local, &bias, local, dh.out, &mut decoder_hidden, true);
        let c = self.config.classes;
        let dout = &self.decoder_out;
        let mut logits = vec![T::zero(); n * c];
        dense_forward(&decoder_hidden, n, &p[dout.w.clone()], &p[dout.b.clone()], dout.inp, c, &mut logits, false);
        let mut probs = logits.clone();
        for row in probs.chunks_exact_mut(c) {
            softmax_in_place(row);
        }

        let sh = &self.scene_hidden;
        let mut scene_hidden = vec![T::zero(); sh.out];
        dense_forward(&global, 1, &p[sh.w.clone()], &p[sh.b.clone()], sh.inp, sh.out, &mut scene_hidden, true);
        let so = &self.scene_out;
        let mut scene_logits = vec![T::zero(); c];
        dense_forward(&scene_hidden, 1, &p[so.w.clone()], &p[so.b.clone()], so.inp, c, &mut scene_logits, false);
        let scene_probs = scene_logits.iter().map(|&g| sigmoid(g)).collect();

        Ok(ForwardTrace {
            n,
            classes: c,
            param_len: params.len(),
            hidden,
            acts,
            pool_arg,
            decoder_hidden,
            logits,
            probs,
            global,
            global_arg,
            scene_hidden,
            scene_logits,
            scene_probs,
        })
    }

    /// Convenience wrapper: prepares the input of `sub` and runs [`forward`](Self::forward).
    pub fn forward_subcloud(&self, params: &Params<T>, sub: &SubCloud, cloud: &PointCloud) -> Result<ForwardTrace<T>> {
        let input = SampleInput::from_subcloud(cloud, sub, self.config.k_agg)?;
        self.forward(params, &input)
    }

    /// Gradient with respect to the parameters, given the gradient with
    /// respect to the per-point logits and the scene logits.
    pub fn backward(&self, params: &Params<T>, trace: &ForwardTrace<T>, grad: &OutputGrad<T>) -> Result<Vec<T>> {
        let mut out = params.zeros_like();
        self.backward_into(params, trace, grad, &mut out)?;
        Ok(out)
    }

    /// Like [`backward`](Self::backward) but adds into `acc`.
    pub fn backward_into(
        &self,
        params: &Params<T>,
        trace: &ForwardTrace<T>,
        grad: &OutputGrad<T>,
        acc: &mut [T],
    ) -> Result<()> {
        self.check_params(params)?;
        let n = trace.n;
        let c = self.config.classes;
        if trace.param_len != params.len() || trace.classes != c || trace.acts.len() != self.encoder.len() {
            return Err(Error::Shape("trace was produced by a different model".into()));
        }
        if trace.pool_arg.iter().zip(&self.encoder).any(|(a, layer)| a.len() != n * layer.out) {
            return Err(Error::Shape("trace comes from `predict` and cannot be differentiated".into()));
        }
        if grad.logits.len() != n * c || grad.scene.len() != c || acc.len() != params.len() {
            return Err(Error::Shape("output gradient does not match the trace".into()));
        }
        let p = &params.values;

        // Scene head.
        let so = &self.scene_out;
        let mut d_scene_hidden = vec![T::zero(); so.inp];
        dense_backward(&trace.scene_hidden, 1, &grad.scene, &p[so.w.clone()], so.inp, so.out, acc, so, Some(&mut d_scene_hidden));
        relu_mask(&mut d_scene_hidden, &trace.scene_hidden);
        let sh = &self.scene_hidden;
        let mut d_global = vec![T::zero(); sh.inp];
        dense_backward(&trace.global, 1, &d_scene_hidden, &p[sh.w.clone()], sh.inp, sh.out, acc, sh, Some(&mut d_global));

        // Segmentation decoder.
        let dout = &self.decoder_out;
        let mut d_dec_hidden = vec![T::zero(); n * dout.inp];
        dense_backward(&trace.decoder_hidden, n, &grad.logits, &p[dout.w.clone()], dout.inp, dout.out, acc, dout, Some(&mut d_dec_hidden));
        relu_mask(&mut d_dec_hidden, &trace.decoder_hidden);
        let dh = &self.decoder_hidden;
        let local = dh.inp - trace.global.len();
        let mut d_bias = vec![T::zero(); dh.out];
        for row in d_dec_hidden.chunks_exact(dh.out) {
            axpy(T::one(), row, &mut d_bias);
        }
        let (w_local, w_global) = p[dh.w.clone()].split_at(local * dh.out);
        let local_part = Dense {
            w: dh.w.start..dh.w.start + local * dh.out,
            b: dh.b.clone(),
            inp: local,
            out: dh.out,
        };
        let mut d_h = vec![T::zero(); n * local];
        dense_backward(trace.hidden.last().expect("encoder output"), n, &d_dec_hidden, w_local, local, dh.out, acc, &local_part, Some(&mut d_h));
        matmul_tn_acc(&trace.global, &d_bias, &mut acc[dh.w.start + local * dh.out..dh.w.end], 1, trace.global.len(), dh.out);
        let mut d_global_dec = vec![T::zero(); trace.global.len()];
        matmul_nt(&d_bias, w_global, &mut d_global_dec, 1, trace.global.len(), dh.out);
        axpy(T::one(), &d_global_dec, &mut d_global);

        // Encoder, last layer first.
        let mut global_offset: usize = self.config.encoder_widths.iter().sum();
        for (l, layer) in self.encoder.iter().enumerate().rev() {
            let w = layer.out;
            global_offset -= w;
            let mut d_a = vec![T::zero(); n * w];
            let arg = &trace.pool_arg[l];
            for i in 0..n {
                let dh_row = &d_h[i * 2 * w..(i + 1) * 2 * w];
                axpy(T::one(), &dh_row[..w], &mut d_a[i * w..(i + 1) * w]);
                for ch in 0..w {
                    let g = dh_row[w + ch];
                    if g != T::zero() {
                        d_a[arg[i * w + ch] as usize * w + ch] += g;
                    }
                }
            }
            for ch in 0..w {
                let g = d_global[global_offset + ch];
                let i = trace.global_arg[global_offset + ch] as usize;
                d_a[i * w + ch] += g;
            }
            relu_mask(&mut d_a, &trace.acts[l]);
            let x = &trace.hidden[l];
            if l > 0 {
                let mut d_prev = vec![T::zero(); n * layer.inp];
                dense_backward(x, n, &d_a, &p[layer.w.clone()], layer.inp, w, acc, layer, Some(&mut d_prev));
                d_h = d_prev;
            } else {
                dense_backward(x, n, &d_a, &p[layer.w.clone()], layer.inp, w, acc, layer, None);
            }
        }
        Ok(())
    }
}

/// `y = x W + b` for `n` rows, optionally followed by ReLU. `W` is `inp × out`.
#[allow(clippy::too_many_arguments)]
fn dense_forward<T: Scalar>(x: &[T], n: usize, w: &[T], b: &[T], inp: usize, out: usize, y: &mut [T], relu: bool) {
    for row in y.chunks_exact_mut(out).take(n) {
        row.copy_from_slice(b);
    }
    matmul(x, w, y, n, inp, out, T::one());
    if relu {
        for v in y[..n * out].iter_mut() {
            *v = if *v < T::zero() { T::zero() } else { *v };
        }
    }
}

/// Accumulates `dW += xᵀ dy`, `db += Σ dy` into `acc` and writes `dx = dy Wᵀ`.
#[allow(clippy::too_many_arguments)]
fn dense_backward<T: Scalar>(
    x: &[T],
    n: usize,
    dy: &[T],
    w: &[T],
    inp: usize,
    out: usize,
    acc: &mut [T],
    layer: &Dense,
    dx: Option<&mut [T]>,
) {
    let db = &mut acc[layer.b.clone()];
    for row in dy.chunks_exact(out).take(n) {
        axpy(T::one(), row, db);
    }
    matmul_tn_acc(x, dy, &mut acc[layer.w.clone()], n, inp, out);
    if let Some(dx) = dx {
        matmul_nt(dy, w, dx, n, inp, out);
    }
}

#[inline]
fn relu_mask<T: Scalar>(grad: &mut [T], activation: &[T]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        *g = if a <= T::zero() { T::zero() } else { *g };
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    row.iter_mut().for_each(|v| *v *= inv);
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(g: T) -> T {
    if g >= T::zero() {
        T::one() / (T::one() + (-g).exp())
    } else {
        let e = g.exp();
        e / (T::one() + e)
    }
}
