//! The segmentation network: a residual encoder-decoder with optional
//! Tanimoto-gated attention in every block and three sigmoid heads
//! (extent, boundary, distance) at input resolution.
//!
//! Blocks are pre-activation (`norm -> elu -> conv`, twice) with an
//! additive skip; encoder stages double the filters after a 2x2 average
//! pool, the decoder mirrors them with nearest upsampling, 1x1 channel
//! projections and skip concatenation. Forward/backward are hand-written;
//! `NetGrads` mirrors the parameter tree and both sides visit parameters
//! in one fixed order, which is also the checkpoint order.

use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FieldkitError, Result};

use super::attention::{AttentionCache, AttentionGrads, TanimotoAttention};
use super::float::Scalar;
use super::layers::{
    avgpool2_backward, avgpool2_forward, elu_backward, elu_forward, sigmoid_backward,
    sigmoid_forward, upsample2_backward, upsample2_forward, Conv2d, ConvGrads, InstanceNorm,
    NormGrads,
};

pub const HEAD_NAMES: [&str; 3] = ["extent", "boundary", "distance"];

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Number of encoder stages; input H and W must divide 2^depth.
    pub depth: usize,
    /// Filters in the first stage; doubled per stage.
    pub base_filters: usize,
    pub in_channels: usize,
    pub attention: bool,
    /// Fractal depth d of the attention similarity.
    pub attention_depth_d: usize,
    /// Give each head its own conv tail instead of sharing features.
    pub separate_head_tails: bool,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 || self.base_filters < 1 || self.in_channels < 1 {
            return Err(FieldkitError::InvalidArgument(format!(
                "spec needs depth/base_filters/in_channels >= 1, got {self:?}"
            )));
        }
        if self.attention_depth_d > 16 {
            return Err(FieldkitError::InvalidArgument(
                "attention_depth_d > 16 overflows the similarity scale".to_string(),
            ));
        }
        Ok(())
    }

    /// Desk-scale default: small enough to train on a laptop CPU.
    pub fn desk(in_channels: usize) -> Self {
        Self {
            depth: 3,
            base_filters: 8,
            in_channels,
            attention: true,
            attention_depth_d: 0,
            separate_head_tails: false,
        }
    }

    fn stage_channels(&self, stage: usize) -> usize {
        self.base_filters << stage
    }
}

/// Sigmoid prediction maps, each H x W in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMaps<F: Scalar> {
    pub extent: Array2<F>,
    pub boundary: Array2<F>,
    pub distance: Array2<F>,
}

impl<F: Scalar> HeadMaps<F> {
    pub fn as_array(&self) -> [&Array2<F>; 3] {
        [&self.extent, &self.boundary, &self.distance]
    }

    pub fn zeros_like(&self) -> HeadMaps<F> {
        HeadMaps {
            extent: Array2::zeros(self.extent.raw_dim()),
            boundary: Array2::zeros(self.boundary.raw_dim()),
            distance: Array2::zeros(self.distance.raw_dim()),
        }
    }
}

#[derive(Debug, Clone)]
struct ResBlock<F: Scalar> {
    norm1: InstanceNorm<F>,
    conv1: Conv2d<F>,
    norm2: InstanceNorm<F>,
    conv2: Conv2d<F>,
    attention: Option<TanimotoAttention<F>>,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockGrads<F: Scalar> {
    norm1: NormGrads<F>,
    conv1: ConvGrads<F>,
    norm2: NormGrads<F>,
    conv2: ConvGrads<F>,
    attention: Option<AttentionGrads<F>>,
}

#[derive(Debug, Clone)]
struct BlockCache<F: Scalar> {
    x: Array3<F>,
    elu1_out: Array3<F>,
    conv1_out: Array3<F>,
    elu2_out: Array3<F>,
    att: Option<AttentionCache<F>>,
}

impl<F: Scalar> ResBlock<F> {
    fn new(channels: usize, spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> Self {
        Self {
            norm1: InstanceNorm::new(channels),
            conv1: Conv2d::he(channels, channels, 3, rng),
            norm2: InstanceNorm::new(channels),
            conv2: Conv2d::he(channels, channels, 3, rng),
            attention: spec
                .attention
                .then(|| TanimotoAttention::new(channels, spec.attention_depth_d, rng)),
        }
    }

    fn zero_grads(&self) -> BlockGrads<F> {
        BlockGrads {
            norm1: self.norm1.zero_grads(),
            conv1: self.conv1.zero_grads(),
            norm2: self.norm2.zero_grads(),
            conv2: self.conv2.zero_grads(),
            attention: self.attention.as_ref().map(|a| a.zero_grads()),
        }
    }

    fn forward(&self, x: &Array3<F>) -> (Array3<F>, BlockCache<F>) {
        let elu1_out = elu_forward(&self.norm1.forward(x));
        let conv1_out = self.conv1.forward(&elu1_out);
        let elu2_out = elu_forward(&self.norm2.forward(&conv1_out));
        let conv2_out = self.conv2.forward(&elu2_out);
        let (branch, att_cache) = match &self.attention {
            Some(att) => {
                let (y, cache) = att.forward(&conv2_out);
                (y, Some(cache))
            }
            None => (conv2_out, None),
        };
        let out = x + &branch;
        (out, BlockCache { x: x.clone(), elu1_out, conv1_out, elu2_out, att: att_cache })
    }

    fn backward(
        &self,
        cache: &BlockCache<F>,
        grad_out: &Array3<F>,
        grads: &mut BlockGrads<F>,
    ) -> Array3<F> {
        let g_conv2_out = match (&self.attention, &cache.att) {
            (Some(att), Some(att_cache)) => {
                att.backward(att_cache, grad_out, grads.attention.as_mut().expect("att grads"))
            }
            _ => grad_out.clone(),
        };
        let g_elu2 = self.conv2.backward(&cache.elu2_out, &g_conv2_out, &mut grads.conv2);
        let g_norm2_out = elu_backward(&cache.elu2_out, &g_elu2);
        let g_conv1_out = self.norm2.backward(&cache.conv1_out, &g_norm2_out, &mut grads.norm2);
        let g_elu1 = self.conv1.backward(&cache.elu1_out, &g_conv1_out, &mut grads.conv1);
        let g_norm1_out = elu_backward(&cache.elu1_out, &g_elu1);
        let g_branch_in = self.norm1.backward(&cache.x, &g_norm1_out, &mut grads.norm1);
        grad_out + &g_branch_in
    }
}

#[derive(Debug, Clone)]
struct Head<F: Scalar> {
    tail: Option<(Conv2d<F>, ())>,
    out: Conv2d<F>,
}

#[derive(Debug, Clone)]
pub(crate) struct HeadGrads<F: Scalar> {
    tail: Option<ConvGrads<F>>,
    out: ConvGrads<F>,
}

#[derive(Debug, Clone)]
struct HeadCache<F: Scalar> {
    tail_elu: Option<Array3<F>>,
    y: Array3<F>,
}

impl<F: Scalar> Head<F> {
    fn new(channels: usize, separate_tail: bool, rng: &mut ChaCha8Rng) -> Self {
        let tail = separate_tail.then(|| (Conv2d::he(channels, channels, 3, rng), ()));
        let std = (1.0 / channels as f64).sqrt();
        Self { tail, out: Conv2d::new(channels, 1, 1, std, rng) }
    }

    fn zero_grads(&self) -> HeadGrads<F> {
        HeadGrads {
            tail: self.tail.as_ref().map(|(c, ())| c.zero_grads()),
            out: self.out.zero_grads(),
        }
    }

    fn forward(&self, features: &Array3<F>) -> (Array2<F>, HeadCache<F>) {
        let (z_in, tail_elu) = match &self.tail {
            Some((conv, ())) => {
                let te = elu_forward(&conv.forward(features));
                (te.clone(), Some(te))
            }
            None => (features.clone(), None),
        };
        let y = sigmoid_forward(&self.out.forward(&z_in));
        let map = y.index_axis(Axis(0), 0).to_owned();
        (map, HeadCache { tail_elu, y })
    }

    fn backward(
        &self,
        features: &Array3<F>,
        cache: &HeadCache<F>,
        grad_map: &Array2<F>,
        grads: &mut HeadGrads<F>,
    ) -> Array3<F> {
        let g_y = grad_map.clone().insert_axis(Axis(0));
        let g_z = sigmoid_backward(&cache.y, &g_y);
        match (&self.tail, &cache.tail_elu) {
            (Some((conv, ())), Some(te)) => {
                let g_te = self.out.backward(te, &g_z, &mut grads.out);
                let g_t1 = elu_backward(te, &g_te);
                conv.backward(features, &g_t1, grads.tail.as_mut().expect("tail grads"))
            }
            _ => self.out.backward(features, &g_z, &mut grads.out),
        }
    }
}

/// The network. Generic over f32 (training) and f64 (gradient checks).
#[derive(Debug, Clone)]
pub struct AttentionResUNet<F: Scalar> {
    pub spec: NetworkSpec,
    stem: Conv2d<F>,
    enc_blocks: Vec<ResBlock<F>>,
    down: Vec<Conv2d<F>>,
    bottleneck: ResBlock<F>,
    up: Vec<Conv2d<F>>,
    fuse: Vec<Conv2d<F>>,
    dec_blocks: Vec<ResBlock<F>>,
    heads: Vec<Head<F>>,
}

/// Gradients, mirroring the parameter tree.
#[derive(Debug, Clone)]
pub struct NetGrads<F: Scalar> {
    stem: ConvGrads<F>,
    enc_blocks: Vec<BlockGrads<F>>,
    down: Vec<ConvGrads<F>>,
    bottleneck: BlockGrads<F>,
    up: Vec<ConvGrads<F>>,
    fuse: Vec<ConvGrads<F>>,
    dec_blocks: Vec<BlockGrads<F>>,
    heads: Vec<HeadGrads<F>>,
}

/// Activation caches of one forward pass.
pub struct NetCache<F: Scalar> {
    input: Array3<F>,
    enc: Vec<(BlockCache<F>, Array3<F>)>, // (block cache, pooled = down conv input)
    bottleneck: BlockCache<F>,
    // Decoder caches indexed by stage (0 = finest), filled in reverse.
    dec: Vec<DecCache<F>>,
    final_features: Array3<F>,
    heads: Vec<HeadCache<F>>,
}

struct DecCache<F: Scalar> {
    up_in: Array3<F>,  // upsampled map, input to the up projection
    cat: Array3<F>,    // concat(skip, up projection), input to fuse
    block: BlockCache<F>,
}

impl<F: Scalar> AttentionResUNet<F> {
    /// Deterministic construction: the same (spec, seed) always yields the
    /// same parameters.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let stem = Conv2d::he(spec.in_channels, spec.base_filters, 3, rng);
        let mut enc_blocks = Vec::with_capacity(spec.depth);
        let mut down = Vec::with_capacity(spec.depth);
        for s in 0..spec.depth {
            let ch = spec.stage_channels(s);
            enc_blocks.push(ResBlock::new(ch, spec, rng));
            down.push(Conv2d::he(ch, ch * 2, 1, rng));
        }
        let bottleneck = ResBlock::new(spec.stage_channels(spec.depth), spec, rng);
        let mut up = Vec::with_capacity(spec.depth);
        let mut fuse = Vec::with_capacity(spec.depth);
        let mut dec_blocks = Vec::with_capacity(spec.depth);
        for s in 0..spec.depth {
            let ch = spec.stage_channels(s);
            up.push(Conv2d::he(ch * 2, ch, 1, rng));
            fuse.push(Conv2d::he(ch * 2, ch, 1, rng));
            dec_blocks.push(ResBlock::new(ch, spec, rng));
        }
        let heads = (0..3)
            .map(|_| Head::new(spec.base_filters, spec.separate_head_tails, rng))
            .collect();
        Ok(Self { spec: *spec, stem, enc_blocks, down, bottleneck, up, fuse, dec_blocks, heads })
    }

    pub fn zero_grads(&self) -> NetGrads<F> {
        NetGrads {
            stem: self.stem.zero_grads(),
            enc_blocks: self.enc_blocks.iter().map(|b| b.zero_grads()).collect(),
            down: self.down.iter().map(|c| c.zero_grads()).collect(),
            bottleneck: self.bottleneck.zero_grads(),
            up: self.up.iter().map(|c| c.zero_grads()).collect(),
            fuse: self.fuse.iter().map(|c| c.zero_grads()).collect(),
            dec_blocks: self.dec_blocks.iter().map(|b| b.zero_grads()).collect(),
            heads: self.heads.iter().map(|h| h.zero_grads()).collect(),
        }
    }

    fn check_input(&self, x: &Array3<F>) -> Result<()> {
        let (c, h, w) = x.dim();
        if c != self.spec.in_channels {
            return Err(FieldkitError::ChannelMismatch(format!(
                "network expects {} input channels, image has {c}",
                self.spec.in_channels
            )));
        }
        let m = 1usize << self.spec.depth;
        if h % m != 0 || w % m != 0 {
            return Err(FieldkitError::InvalidArgument(format!(
                "input {h}x{w} not divisible by 2^depth = {m}"
            )));
        }
        Ok(())
    }

    /// Inference forward; deterministic.
    pub fn forward(&self, x: &Array3<F>) -> Result<HeadMaps<F>> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Forward keeping every activation needed by [`Self::backward`].
    pub fn forward_cached(&self, x: &Array3<F>) -> Result<(HeadMaps<F>, NetCache<F>)> {
        self.check_input(x)?;
        let mut cur = self.stem.forward(x);
        let mut enc = Vec::with_capacity(self.spec.depth);
        let mut skips = Vec::with_capacity(self.spec.depth);
        for s in 0..self.spec.depth {
            let (block_out, bc) = self.enc_blocks[s].forward(&cur);
            let pooled = avgpool2_forward(&block_out);
            cur = self.down[s].forward(&pooled);
            skips.push(block_out);
            enc.push((bc, pooled));
        }
        let (mut cur, bottleneck_cache) = self.bottleneck.forward(&cur);
        let mut dec: Vec<Option<DecCache<F>>> = (0..self.spec.depth).map(|_| None).collect();
        for s in (0..self.spec.depth).rev() {
            let up_in = upsample2_forward(&cur);
            let proj = self.up[s].forward(&up_in);
            let cat = ndarray::concatenate(Axis(0), &[skips[s].view(), proj.view()])
                .expect("skip/proj dims agree");
            let fused = self.fuse[s].forward(&cat);
            let (out, bc) = self.dec_blocks[s].forward(&fused);
            dec[s] = Some(DecCache { up_in, cat, block: bc });
            cur = out;
        }
        let final_features = cur;
        let mut head_caches = Vec::with_capacity(3);
        let mut maps = Vec::with_capacity(3);
        for head in &self.heads {
            let (map, hc) = head.forward(&final_features);
            maps.push(map);
            head_caches.push(hc);
        }
        let distance = maps.pop().expect("three heads");
        let boundary = maps.pop().expect("three heads");
        let extent = maps.pop().expect("three heads");
        Ok((
            HeadMaps { extent, boundary, distance },
            NetCache {
                input: x.clone(),
                enc,
                bottleneck: bottleneck_cache,
                dec: dec.into_iter().map(|d| d.expect("all stages decoded")).collect(),
                final_features,
                heads: head_caches,
            },
        ))
    }

    /// Backpropagate head-map gradients, accumulating into `grads`.
    /// Returns the gradient with respect to the input image.
    pub fn backward(
        &self,
        cache: &NetCache<F>,
        grad_maps: &HeadMaps<F>,
        grads: &mut NetGrads<F>,
    ) -> Array3<F> {
        let mut g_final: Array3<F> = Array3::zeros(cache.final_features.raw_dim());
        for (i, g_map) in grad_maps.as_array().into_iter().enumerate() {
            let g = self.heads[i].backward(
                &cache.final_features,
                &cache.heads[i],
                g_map,
                &mut grads.heads[i],
            );
            g_final += &g;
        }
        let mut cur_grad = g_final;
        let mut skip_grads: Vec<Option<Array3<F>>> = (0..self.spec.depth).map(|_| None).collect();
        for s in 0..self.spec.depth {
            let dc = &cache.dec[s];
            let g_fused = self.dec_blocks[s].backward(&dc.block, &cur_grad, &mut grads.dec_blocks[s]);
            let g_cat = self.fuse[s].backward(&dc.cat, &g_fused, &mut grads.fuse[s]);
            let ch = self.spec.stage_channels(s);
            let g_skip = g_cat.slice(ndarray::s![..ch, .., ..]).to_owned();
            let g_proj = g_cat.slice(ndarray::s![ch.., .., ..]).to_owned();
            let g_up_in = self.up[s].backward(&dc.up_in, &g_proj, &mut grads.up[s]);
            skip_grads[s] = Some(g_skip);
            cur_grad = upsample2_backward(&g_up_in);
        }
        cur_grad = self.bottleneck.backward(&cache.bottleneck, &cur_grad, &mut grads.bottleneck);
        for s in (0..self.spec.depth).rev() {
            let (bc, pooled) = &cache.enc[s];
            let g_pooled = self.down[s].backward(pooled, &cur_grad, &mut grads.down[s]);
            let (_, h, w) = bc.x.dim();
            let mut g_block_out = avgpool2_backward(&g_pooled, h, w);
            g_block_out += skip_grads[s].as_ref().expect("skip grad stored");
            cur_grad = self.enc_blocks[s].backward(bc, &g_block_out, &mut grads.enc_blocks[s]);
        }
        self.stem.backward(&cache.input, &cur_grad, &mut grads.stem)
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        let mut clone = self.clone();
        clone.visit_params_mut(&mut |_, slice| n += slice.len());
        n
    }

    /// Visit every parameter slice in the canonical order.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [F])) {
        visit_conv(&mut self.stem, "stem", f);
        for s in 0..self.spec.depth {
            visit_block(&mut self.enc_blocks[s], &format!("enc{s}"), f);
            visit_conv(&mut self.down[s], &format!("down{s}"), f);
        }
        visit_block(&mut self.bottleneck, "bottleneck", f);
        for s in 0..self.spec.depth {
            visit_conv(&mut self.up[s], &format!("up{s}"), f);
            visit_conv(&mut self.fuse[s], &format!("fuse{s}"), f);
            visit_block(&mut self.dec_blocks[s], &format!("dec{s}"), f);
        }
        for (i, head) in self.heads.iter_mut().enumerate() {
            let name = format!("head_{}", HEAD_NAMES[i]);
            if let Some((tail, ())) = head.tail.as_mut() {
                visit_conv(tail, &format!("{name}.tail"), f);
            }
            visit_conv(&mut head.out, &format!("{name}.out"), f);
        }
    }

    /// Named parameter export (clones), in visitation order.
    pub fn export_params(&self) -> Vec<(String, Vec<usize>, Vec<F>)> {
        let mut out = Vec::new();
        let mut clone = self.clone();
        // Shapes are recovered from the live network below.
        let mut shapes: Vec<Vec<usize>> = Vec::new();
        collect_shapes(self, &mut shapes);
        let mut i = 0usize;
        clone.visit_params_mut(&mut |name, slice| {
            out.push((name.to_string(), shapes[i].clone(), slice.to_vec()));
            i += 1;
        });
        out
    }

    /// Import by name; every network parameter must be present with the
    /// right length.
    pub fn import_params(&mut self, params: &[(String, Vec<usize>, Vec<F>)]) -> Result<()> {
        let mut missing: Vec<String> = Vec::new();
        self.visit_params_mut(&mut |name, slice| {
            match params.iter().find(|(n, _, _)| n == name) {
                Some((_, _, values)) if values.len() == slice.len() => {
                    slice.copy_from_slice(values);
                }
                _ => missing.push(name.to_string()),
            }
        });
        if missing.is_empty() {
            Ok(())
        } else {
            Err(FieldkitError::Format(format!(
                "checkpoint is missing or mis-shaped for: {}",
                missing.join(", ")
            )))
        }
    }
}

fn visit_conv<F: Scalar>(conv: &mut Conv2d<F>, name: &str, f: &mut dyn FnMut(&str, &mut [F])) {
    f(&format!("{name}.weight"), conv.weight.as_slice_mut().expect("contiguous"));
    f(&format!("{name}.bias"), conv.bias.as_slice_mut().expect("contiguous"));
}

fn visit_norm<F: Scalar>(norm: &mut InstanceNorm<F>, name: &str, f: &mut dyn FnMut(&str, &mut [F])) {
    f(&format!("{name}.gamma"), norm.gamma.as_slice_mut().expect("contiguous"));
    f(&format!("{name}.beta"), norm.beta.as_slice_mut().expect("contiguous"));
}

fn visit_block<F: Scalar>(block: &mut ResBlock<F>, name: &str, f: &mut dyn FnMut(&str, &mut [F])) {
    visit_norm(&mut block.norm1, &format!("{name}.norm1"), f);
    visit_conv(&mut block.conv1, &format!("{name}.conv1"), f);
    visit_norm(&mut block.norm2, &format!("{name}.norm2"), f);
    visit_conv(&mut block.conv2, &format!("{name}.conv2"), f);
    if let Some(att) = block.attention.as_mut() {
        visit_conv(&mut att.query, &format!("{name}.attn.query"), f);
        visit_conv(&mut att.key, &format!("{name}.attn.key"), f);
        visit_conv(&mut att.value, &format!("{name}.attn.value"), f);
        f(&format!("{name}.attn.gate"), att.gate.as_slice_mut().expect("contiguous"));
    }
}

fn collect_shapes<F: Scalar>(net: &AttentionResUNet<F>, shapes: &mut Vec<Vec<usize>>) {
    // Mirrors visit order; only shapes, no data.
    let conv = |c: &Conv2d<F>, shapes: &mut Vec<Vec<usize>>| {
        shapes.push(c.weight.shape().to_vec());
        shapes.push(c.bias.shape().to_vec());
    };
    let norm = |n: &InstanceNorm<F>, shapes: &mut Vec<Vec<usize>>| {
        shapes.push(n.gamma.shape().to_vec());
        shapes.push(n.beta.shape().to_vec());
    };
    let block = |b: &ResBlock<F>, shapes: &mut Vec<Vec<usize>>| {
        norm(&b.norm1, shapes);
        conv(&b.conv1, shapes);
        norm(&b.norm2, shapes);
        conv(&b.conv2, shapes);
        if let Some(att) = &b.attention {
            conv(&att.query, shapes);
            conv(&att.key, shapes);
            conv(&att.value, shapes);
            shapes.push(att.gate.shape().to_vec());
        }
    };
    conv(&net.stem, shapes);
    for s in 0..net.spec.depth {
        block(&net.enc_blocks[s], shapes);
        conv(&net.down[s], shapes);
    }
    block(&net.bottleneck, shapes);
    for s in 0..net.spec.depth {
        conv(&net.up[s], shapes);
        conv(&net.fuse[s], shapes);
        block(&net.dec_blocks[s], shapes);
    }
    for head in &net.heads {
        if let Some((tail, ())) = &head.tail {
            conv(tail, shapes);
        }
        conv(&head.out, shapes);
    }
}

impl<F: Scalar> NetGrads<F> {
    /// Flat copies in the canonical parameter order.
    pub fn export_flat(&self) -> Vec<Vec<F>> {
        let mut out = Vec::new();
        self.visit(&mut |slice| out.push(slice.to_vec()));
        out
    }

    fn visit(&self, f: &mut dyn FnMut(&[F])) {
        let conv = |c: &ConvGrads<F>, f: &mut dyn FnMut(&[F])| {
            f(c.weight.as_slice().expect("contiguous"));
            f(c.bias.as_slice().expect("contiguous"));
        };
        let norm = |n: &NormGrads<F>, f: &mut dyn FnMut(&[F])| {
            f(n.gamma.as_slice().expect("contiguous"));
            f(n.beta.as_slice().expect("contiguous"));
        };
        let block = |b: &BlockGrads<F>, f: &mut dyn FnMut(&[F])| {
            norm(&b.norm1, f);
            conv(&b.conv1, f);
            norm(&b.norm2, f);
            conv(&b.conv2, f);
            if let Some(att) = &b.attention {
                conv(&att.query, f);
                conv(&att.key, f);
                conv(&att.value, f);
                f(att.gate.as_slice().expect("contiguous"));
            }
        };
        conv(&self.stem, f);
        for s in 0..self.enc_blocks.len() {
            block(&self.enc_blocks[s], f);
            conv(&self.down[s], f);
        }
        block(&self.bottleneck, f);
        for s in 0..self.dec_blocks.len() {
            conv(&self.up[s], f);
            conv(&self.fuse[s], f);
            block(&self.dec_blocks[s], f);
        }
        for head in &self.heads {
            if let Some(tail) = &head.tail {
                conv(tail, f);
            }
            conv(&head.out, f);
        }
    }

    /// Overwrite from flat slices in the canonical order (inverse of
    /// [`Self::export_flat`]).
    pub fn import_flat(&mut self, flat: &[Vec<F>]) {
        let mut i = 0usize;
        self.visit_mut(&mut |slice| {
            slice.copy_from_slice(&flat[i]);
            i += 1;
        });
    }

    /// Elementwise accumulate (for summing per-sample gradients in a fixed
    /// order).
    pub fn add_assign(&mut self, other: &NetGrads<F>) {
        let flat = other.export_flat();
        let mut i = 0usize;
        self.visit_mut(&mut |slice| {
            for (d, s) in slice.iter_mut().zip(flat[i].iter()) {
                *d = *d + *s;
            }
            i += 1;
        });
    }

    pub fn scale(&mut self, k: F) {
        self.visit_mut(&mut |slice| {
            for v in slice.iter_mut() {
                *v = *v * k;
            }
        });
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [F])) {
        let conv = |c: &mut ConvGrads<F>, f: &mut dyn FnMut(&mut [F])| {
            f(c.weight.as_slice_mut().expect("contiguous"));
            f(c.bias.as_slice_mut().expect("contiguous"));
        };
        let norm = |n: &mut NormGrads<F>, f: &mut dyn FnMut(&mut [F])| {
            f(n.gamma.as_slice_mut().expect("contiguous"));
            f(n.beta.as_slice_mut().expect("contiguous"));
        };
        let block = |b: &mut BlockGrads<F>, f: &mut dyn FnMut(&mut [F])| {
            norm(&mut b.norm1, f);
            conv(&mut b.conv1, f);
            norm(&mut b.norm2, f);
            conv(&mut b.conv2, f);
            if let Some(att) = &mut b.attention {
                conv(&mut att.query, f);
                conv(&mut att.key, f);
                conv(&mut att.value, f);
                f(att.gate.as_slice_mut().expect("contiguous"));
            }
        };
        conv(&mut self.stem, f);
        let depth = self.enc_blocks.len();
        for s in 0..depth {
            block(&mut self.enc_blocks[s], f);
            conv(&mut self.down[s], f);
        }
        block(&mut self.bottleneck, f);
        for s in 0..depth {
            conv(&mut self.up[s], f);
            conv(&mut self.fuse[s], f);
            block(&mut self.dec_blocks[s], f);
        }
        for head in &mut self.heads {
            if let Some(tail) = &mut head.tail {
                conv(tail, f);
            }
            conv(&mut head.out, f);
        }
    }
}

/// Gradient of the gate parameters must stay within [0, 1] after optimizer
/// steps; exposed so the optimizer can clamp by name.
pub fn is_gate_param(name: &str) -> bool {
    name.ends_with(".attn.gate")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(depth: usize, filters: usize, in_ch: usize, attention: bool) -> NetworkSpec {
        NetworkSpec {
            depth,
            base_filters: filters,
            in_channels: in_ch,
            attention,
            attention_depth_d: 1,
            separate_head_tails: false,
        }
    }

    #[test]
    fn desk_spec_forward_shapes() {
        let net = AttentionResUNet::<f32>::build(&spec(3, 4, 3, true), 1).unwrap();
        let x = Array3::<f32>::zeros((3, 32, 32));
        let maps = net.forward(&x).unwrap();
        assert_eq!(maps.extent.dim(), (32, 32));
        assert_eq!(maps.boundary.dim(), (32, 32));
        assert_eq!(maps.distance.dim(), (32, 32));
    }

    #[test]
    fn minimal_net_forward_succeeds_on_2x2() {
        let net = AttentionResUNet::<f32>::build(&spec(1, 1, 1, true), 2).unwrap();
        let x = Array3::<f32>::zeros((1, 2, 2));
        let maps = net.forward(&x).unwrap();
        assert_eq!(maps.extent.dim(), (2, 2));
    }

    #[test]
    fn constant_zero_input_outputs_open_unit_interval() {
        let net = AttentionResUNet::<f32>::build(&spec(2, 4, 3, true), 3).unwrap();
        let x = Array3::<f32>::zeros((3, 16, 16));
        let maps = net.forward(&x).unwrap();
        for map in maps.as_array() {
            for &v in map.iter() {
                assert!(v.is_finite() && v > 0.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let net = AttentionResUNet::<f32>::build(&spec(2, 4, 3, true), 4).unwrap();
        let x = Array3::<f32>::from_shape_fn((3, 16, 16), |(c, r, w)| {
            ((c + 2 * r + 3 * w) % 7) as f32 / 7.0
        });
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn attention_adds_parameters() {
        let with = AttentionResUNet::<f32>::build(&spec(2, 4, 3, true), 5).unwrap();
        let without = AttentionResUNet::<f32>::build(&spec(2, 4, 3, false), 5).unwrap();
        assert!(with.param_count() > without.param_count());
    }

    #[test]
    fn zero_gate_matches_attention_off_exactly() {
        let mut with = AttentionResUNet::<f32>::build(&spec(2, 4, 3, true), 6).unwrap();
        let mut without = AttentionResUNet::<f32>::build(&spec(2, 4, 3, false), 7).unwrap();
        // Copy the shared parameters from the attention net.
        let shared: Vec<_> = with.export_params();
        let mut filtered: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
        without.visit_params_mut(&mut |name, _| {
            let src = shared.iter().find(|(n, _, _)| n == name).expect("shared param");
            filtered.push(src.clone());
        });
        without.import_params(&filtered).unwrap();
        // And force zero gates (build already zero-initializes them).
        with.visit_params_mut(&mut |name, slice| {
            if is_gate_param(name) {
                slice.fill(0.0);
            }
        });
        let x = Array3::<f32>::from_shape_fn((3, 8, 8), |(c, r, w)| {
            (c as f32 - r as f32 * 0.3 + w as f32 * 0.1).sin()
        });
        let a = with.forward(&x).unwrap();
        let b = without.forward(&x).unwrap();
        for (ma, mb) in a.as_array().into_iter().zip(b.as_array()) {
            for (&va, &vb) in ma.iter().zip(mb.iter()) {
                assert!((va - vb).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs_with_named_multiple() {
        let net = AttentionResUNet::<f32>::build(&spec(3, 4, 3, false), 8).unwrap();
        let bad_size = Array3::<f32>::zeros((3, 30, 32));
        let err = net.forward(&bad_size).unwrap_err().to_string();
        assert!(err.contains("2^depth = 8"), "{err}");
        let bad_ch = Array3::<f32>::zeros((4, 32, 32));
        assert!(matches!(
            net.forward(&bad_ch),
            Err(FieldkitError::ChannelMismatch(_))
        ));
    }

    #[test]
    fn export_import_round_trip() {
        let net = AttentionResUNet::<f32>::build(&spec(2, 4, 3, true), 9).unwrap();
        let params = net.export_params();
        let mut other = AttentionResUNet::<f32>::build(&spec(2, 4, 3, true), 10).unwrap();
        other.import_params(&params).unwrap();
        let x = Array3::<f32>::from_shape_fn((3, 8, 8), |(c, r, w)| {
            ((c * 5 + r * 3 + w) % 11) as f32 / 11.0
        });
        assert_eq!(net.forward(&x).unwrap(), other.forward(&x).unwrap());
    }

    #[test]
    fn shape_invariance_over_random_legal_specs() {
        let cases = [(1usize, 2usize, 1usize, 4usize, 4usize), (2, 3, 2, 8, 12), (3, 2, 4, 16, 8)];
        for (depth, filters, in_ch, h, w) in cases {
            let net =
                AttentionResUNet::<f32>::build(&spec(depth, filters, in_ch, depth % 2 == 0), 11)
                    .unwrap();
            let x = Array3::<f32>::zeros((in_ch, h, w));
            let maps = net.forward(&x).unwrap();
            assert_eq!(maps.extent.dim(), (h, w), "depth {depth}");
        }
    }
}
