//! Residual-dense super-resolution network for abundance maps.
//!
//! ```text
//! x ─ sfe1 ─┬─ sfe2 ─ RDB₁ ─ … ─ RDB_D      (3×3 convs, dense blocks)
//!           │          └──────┴── concat ─ gff1 (1×1) ─ gff2 (3×3)
//!           └──────────────────────────────────────── + ─ [conv → shuffle ×2]ⁿ ─ out ─ softmax
//! ```
//!
//! Each residual dense block runs `c_layers` 3×3 conv + ReLU layers, every
//! layer seeing the block input and all earlier layer outputs, then fuses the
//! stack with a 1×1 conv and adds the block input back.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{
    conv2d_backward, conv2d_forward, pixel_shuffle_x2, pixel_unshuffle_x2, relu_backward,
    relu_forward, softmax_channels, softmax_channels_backward, ConvRef, Feature, Geom,
};
use crate::config::KeyValues;
use crate::error::{Error, Result};

/// Network shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetArch {
    pub in_channels: usize,
    /// Base feature width.
    pub g0: usize,
    pub d_blocks: usize,
    pub c_layers: usize,
    pub growth: usize,
    /// Power of two; one ×2 sub-pixel stage per doubling.
    pub scale: usize,
}

impl Default for NetArch {
    fn default() -> Self {
        Self {
            in_channels: 6,
            g0: 32,
            d_blocks: 4,
            c_layers: 4,
            growth: 16,
            scale: 4,
        }
    }
}

impl NetArch {
    const KEYS: &'static [&'static str] = &["in_channels", "g0", "d_blocks", "c_layers", "growth", "scale"];

    pub fn validate(&self) -> Result<()> {
        if [self.in_channels, self.g0, self.d_blocks, self.c_layers, self.growth].contains(&0)
        {
            return Err(Error::Config("all architecture counts must be >= 1".into()));
        }
        if ![2, 4, 8].contains(&self.scale) {
            return Err(Error::Config(format!("arch.scale must be 2, 4 or 8, got {}", self.scale)));
        }
        Ok(())
    }

    pub fn upsample_stages(&self) -> usize {
        self.scale.trailing_zeros() as usize
    }

    /// Radius, in input pixels, of the region that can influence one output
    /// pixel.
    pub fn receptive_radius(&self) -> usize {
        // sfe1, sfe2, dense convs, gff2 and the first upsampling conv run at
        // input resolution; later convs run at 2^s resolution.
        let base = 3 + self.d_blocks * self.c_layers;
        let mut extra = 0.0;
        for s in 0..self.upsample_stages() {
            extra += 1.0 / (1usize << s) as f64;
        }
        extra += 1.0 / self.scale as f64;
        base + extra.ceil() as usize
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.check_known("arch", Self::KEYS)?;
        let d = Self::default();
        let arch = Self {
            in_channels: kv.get_or("arch.in_channels", d.in_channels)?,
            g0: kv.get_or("arch.g0", d.g0)?,
            d_blocks: kv.get_or("arch.d_blocks", d.d_blocks)?,
            c_layers: kv.get_or("arch.c_layers", d.c_layers)?,
            growth: kv.get_or("arch.growth", d.growth)?,
            scale: kv.get_or("arch.scale", d.scale)?,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("arch.in_channels", self.in_channels);
        kv.set("arch.g0", self.g0);
        kv.set("arch.d_blocks", self.d_blocks);
        kv.set("arch.c_layers", self.c_layers);
        kv.set("arch.growth", self.growth);
        kv.set("arch.scale", self.scale);
    }

    /// Convolutions in forward order.
    pub fn layers(&self) -> Vec<ConvSpec> {
        let mut out = Vec::new();
        let mut push = |name: String, in_ch, out_ch, kernel| out.push(ConvSpec { name, in_ch, out_ch, kernel });
        push("sfe1".into(), self.in_channels, self.g0, 3);
        push("sfe2".into(), self.g0, self.g0, 3);
        for d in 0..self.d_blocks {
            for c in 0..self.c_layers {
                push(format!("rdb{d}.conv{c}"), self.g0 + c * self.growth, self.growth, 3);
            }
            push(format!("rdb{d}.fusion"), self.g0 + self.c_layers * self.growth, self.g0, 1);
        }
        push("gff1".into(), self.d_blocks * self.g0, self.g0, 1);
        push("gff2".into(), self.g0, self.g0, 3);
        for s in 0..self.upsample_stages() {
            push(format!("up{s}"), self.g0, 4 * self.g0, 3);
        }
        push("out".into(), self.g0, self.in_channels, 3);
        out
    }

    fn dense_width(&self) -> usize {
        self.g0 + self.c_layers * self.growth
    }

    fn rdb_layer(&self, d: usize, c: usize) -> usize {
        2 + d * (self.c_layers + 1) + c
    }

    fn rdb_fusion(&self, d: usize) -> usize {
        self.rdb_layer(d, self.c_layers)
    }

    fn gff1(&self) -> usize {
        2 + self.d_blocks * (self.c_layers + 1)
    }

    fn up(&self, s: usize) -> usize {
        self.gff1() + 2 + s
    }

    fn out_layer(&self) -> usize {
        self.up(self.upsample_stages())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl ConvSpec {
    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
}

/// Description of the weight initialization, recorded in checkpoints.
pub const INIT_LAW: &str = "uniform(-1/sqrt(fan_in),1/sqrt(fan_in)) weights, zero bias, binary32-rounded";

/// Named view of one tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlot {
    pub name: String,
    /// Logical shape: `[out, in, k, k]` for weights, `[out]` for biases.
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// All learnable weights in one flat vector, laid out per layer as
/// `weight` then `bias` in forward order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: NetArch,
    pub values: Vec<f64>,
}

fn conv_offsets(arch: &NetArch) -> Vec<(ConvSpec, usize)> {
    let mut offset = 0;
    arch.layers()
        .into_iter()
        .map(|spec| {
            let start = offset;
            offset += spec.weight_len() + spec.out_ch;
            (spec, start)
        })
        .collect()
}

/// Slot table for `arch`.
pub fn param_slots(arch: &NetArch) -> Vec<ParamSlot> {
    let mut slots = Vec::new();
    for (spec, start) in conv_offsets(arch) {
        slots.push(ParamSlot {
            name: format!("{}.weight", spec.name),
            shape: vec![spec.out_ch, spec.in_ch, spec.kernel, spec.kernel],
            offset: start,
            len: spec.weight_len(),
        });
        slots.push(ParamSlot {
            name: format!("{}.bias", spec.name),
            shape: vec![spec.out_ch],
            offset: start + spec.weight_len(),
            len: spec.out_ch,
        });
    }
    slots
}

pub fn param_count(arch: &NetArch) -> usize {
    arch.layers().iter().map(|s| s.weight_len() + s.out_ch).sum()
}

impl NetworkParams {
    /// Fan-in scaled uniform weights and zero biases, drawn in forward order.
    pub fn init(arch: &NetArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(param_count(arch));
        for spec in arch.layers() {
            let bound = 1.0 / (spec.fan_in() as f64).sqrt();
            values.extend((0..spec.weight_len()).map(|_| rng.gen_range(-bound..bound) as f32 as f64));
            values.extend(std::iter::repeat_n(0.0, spec.out_ch));
        }
        Ok(Self { arch: *arch, values })
    }

    pub fn slots(&self) -> Vec<ParamSlot> {
        param_slots(&self.arch)
    }
}

/// Resolves layer `idx` into borrowed weight/bias slices.
struct Layers {
    table: Vec<(ConvSpec, usize)>,
}

impl Layers {
    fn new(arch: &NetArch) -> Self {
        Self { table: conv_offsets(arch) }
    }

    fn conv<'a>(&self, values: &'a [f64], idx: usize) -> ConvRef<'a> {
        let (spec, start) = &self.table[idx];
        let wl = spec.weight_len();
        ConvRef {
            weight: &values[*start..start + wl],
            bias: &values[start + wl..start + wl + spec.out_ch],
            in_ch: spec.in_ch,
            out_ch: spec.out_ch,
            kernel: spec.kernel,
        }
    }

    fn grads<'a>(&self, grads: &'a mut [f64], idx: usize) -> (&'a mut [f64], &'a mut [f64]) {
        let (spec, start) = &self.table[idx];
        let wl = spec.weight_len();
        let (w, b) = grads[*start..start + wl + spec.out_ch].split_at_mut(wl);
        (w, b)
    }
}

/// Activations retained by [`forward_train`] for the backward pass.
pub struct ForwardCache {
    geom: Geom,
    input: Vec<f64>,
    sfe1: Vec<f64>,
    /// Per block: input followed by every layer output (post-ReLU).
    dense: Vec<Vec<f64>>,
    /// Block outputs stacked along channels.
    global: Vec<f64>,
    gff1: Vec<f64>,
    /// Global residual sum, the input of the first upsampling conv.
    fused: Vec<f64>,
    /// Outputs of each pixel shuffle.
    shuffled: Vec<Vec<f64>>,
    pub output: Feature,
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn check_input(params: &NetworkParams, x: &Feature) -> Result<()> {
    if x.channels != params.arch.in_channels {
        return Err(Error::Dimension(format!(
            "network expects {} input channels, got {}",
            params.arch.in_channels, x.channels
        )));
    }
    if x.data.len() != x.channels * x.geom.plane() {
        return Err(Error::Dimension("input feature length mismatch".into()));
    }
    Ok(())
}

/// Runs the network up to (excluding) the softmax, keeping activations.
fn forward_cached(params: &NetworkParams, x: &Feature) -> Result<(ForwardCache, Feature)> {
    check_input(params, x)?;
    let arch = &params.arch;
    let layers = Layers::new(arch);
    let v = &params.values;
    let g = x.geom;
    let plane = g.plane();

    let sfe1 = conv2d_forward(&x.data, g, layers.conv(v, 0))?;
    let sfe2 = conv2d_forward(&sfe1, g, layers.conv(v, 1))?;

    let mut dense = Vec::with_capacity(arch.d_blocks);
    let mut global = vec![0.0; arch.d_blocks * arch.g0 * plane];
    let mut block_in = sfe2;
    for d in 0..arch.d_blocks {
        let mut buf = Vec::with_capacity(arch.dense_width() * plane);
        buf.extend_from_slice(&block_in);
        for c in 0..arch.c_layers {
            let mut y = conv2d_forward(&buf, g, layers.conv(v, arch.rdb_layer(d, c)))?;
            relu_forward(&mut y);
            buf.extend_from_slice(&y);
        }
        let mut out = conv2d_forward(&buf, g, layers.conv(v, arch.rdb_fusion(d)))?;
        add_into(&mut out, &block_in);
        global[d * arch.g0 * plane..(d + 1) * arch.g0 * plane].copy_from_slice(&out);
        dense.push(buf);
        block_in = out;
    }

    let gff1 = conv2d_forward(&global, g, layers.conv(v, arch.gff1()))?;
    let mut fused = conv2d_forward(&gff1, g, layers.conv(v, arch.gff1() + 1))?;
    add_into(&mut fused, &sfe1);

    let mut shuffled: Vec<Vec<f64>> = Vec::with_capacity(arch.upsample_stages());
    let mut geom = g;
    for s in 0..arch.upsample_stages() {
        let input = if s == 0 { &fused } else { &shuffled[s - 1] };
        let y = conv2d_forward(input, geom, layers.conv(v, arch.up(s)))?;
        let up = pixel_shuffle_x2(&Feature {
            channels: 4 * arch.g0,
            geom,
            data: y,
        })?;
        geom = up.geom;
        shuffled.push(up.data);
    }
    let last = shuffled.last().unwrap_or(&fused);
    let logits = Feature {
        channels: arch.in_channels,
        geom,
        data: conv2d_forward(last, geom, layers.conv(v, arch.out_layer()))?,
    };

    let cache = ForwardCache {
        geom: g,
        input: x.data.clone(),
        sfe1,
        dense,
        global,
        gff1,
        fused,
        shuffled,
        output: Feature::zeros(0, geom),
    };
    Ok((cache, logits))
}

/// Pre-softmax scores at output resolution.
pub fn forward_logits(params: &NetworkParams, x: &Feature) -> Result<Feature> {
    forward_cached(params, x).map(|(_, logits)| logits)
}

/// Super-resolved abundances: channel softmax of [`forward_logits`].
pub fn forward_batch(params: &NetworkParams, x: &Feature) -> Result<Feature> {
    Ok(softmax_channels(&forward_logits(params, x)?))
}

/// Forward pass that keeps what [`backward`] needs.
pub fn forward_train(params: &NetworkParams, x: &Feature) -> Result<ForwardCache> {
    let (mut cache, logits) = forward_cached(params, x)?;
    cache.output = softmax_channels(&logits);
    Ok(cache)
}

/// Gradients of a scalar loss with respect to every parameter, given the
/// loss gradient `d_output` with respect to the softmax output. Optionally
/// also returns the gradient with respect to the network input.
pub fn backward(
    params: &NetworkParams,
    cache: &ForwardCache,
    d_output: &[f64],
    want_input_grad: bool,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let arch = &params.arch;
    let layers = Layers::new(arch);
    let v = &params.values;
    let g = cache.geom;
    let plane = g.plane();
    let mut grads = vec![0.0; v.len()];

    let d_logits = softmax_channels_backward(&cache.output, d_output);

    // Upsampling tail, last stage first.
    let stages = arch.upsample_stages();
    let mut geom = cache.output.geom;
    let last = cache.shuffled.last().unwrap_or(&cache.fused);
    let mut d_feat = vec![0.0; last.len()];
    {
        let (dw, db) = layers.grads(&mut grads, arch.out_layer());
        conv2d_backward(last, geom, layers.conv(v, arch.out_layer()), &d_logits, dw, db, Some(&mut d_feat))?;
    }
    for s in (0..stages).rev() {
        let lower = Geom::new(geom.batch, geom.height / 2, geom.width / 2);
        let d_conv = pixel_unshuffle_x2(&Feature {
            channels: arch.g0,
            geom,
            data: d_feat,
        })?
        .data;
        let input = if s == 0 { &cache.fused } else { &cache.shuffled[s - 1] };
        let mut d_input = vec![0.0; input.len()];
        let (dw, db) = layers.grads(&mut grads, arch.up(s));
        conv2d_backward(input, lower, layers.conv(v, arch.up(s)), &d_conv, dw, db, Some(&mut d_input))?;
        d_feat = d_input;
        geom = lower;
    }
    let d_fused = d_feat;

    // Global fusion and residual.
    let mut d_sfe1 = d_fused.clone();
    let mut d_gff1 = vec![0.0; cache.gff1.len()];
    {
        let idx = arch.gff1() + 1;
        let (dw, db) = layers.grads(&mut grads, idx);
        conv2d_backward(&cache.gff1, g, layers.conv(v, idx), &d_fused, dw, db, Some(&mut d_gff1))?;
    }
    let mut d_global = vec![0.0; cache.global.len()];
    {
        let (dw, db) = layers.grads(&mut grads, arch.gff1());
        conv2d_backward(&cache.global, g, layers.conv(v, arch.gff1()), &d_gff1, dw, db, Some(&mut d_global))?;
    }

    // Dense blocks in reverse. `d_block_out` carries the gradient flowing
    // into block d's output from block d + 1.
    let width = arch.g0 * plane;
    let mut d_block_out = vec![0.0; width];
    for d in (0..arch.d_blocks).rev() {
        add_into(&mut d_block_out, &d_global[d * width..(d + 1) * width]);
        let buf = &cache.dense[d];
        let mut d_buf = vec![0.0; buf.len()];
        {
            let idx = arch.rdb_fusion(d);
            let (dw, db) = layers.grads(&mut grads, idx);
            conv2d_backward(buf, g, layers.conv(v, idx), &d_block_out, dw, db, Some(&mut d_buf))?;
        }
        for c in (0..arch.c_layers).rev() {
            let in_len = (arch.g0 + c * arch.growth) * plane;
            let out_len = arch.growth * plane;
            let (d_prefix, d_rest) = d_buf.split_at_mut(in_len);
            let d_y = &mut d_rest[..out_len];
            relu_backward(&buf[in_len..in_len + out_len], d_y);
            let idx = arch.rdb_layer(d, c);
            let (dw, db) = layers.grads(&mut grads, idx);
            conv2d_backward(&buf[..in_len], g, layers.conv(v, idx), d_y, dw, db, Some(d_prefix))?;
        }
        // Local residual plus the dense path into the block input.
        add_into(&mut d_block_out, &d_buf[..width]);
    }
    let d_sfe2 = d_block_out;

    {
        let (dw, db) = layers.grads(&mut grads, 1);
        conv2d_backward(&cache.sfe1, g, layers.conv(v, 1), &d_sfe2, dw, db, Some(&mut d_sfe1))?;
    }
    let mut d_input = want_input_grad.then(|| vec![0.0; cache.input.len()]);
    {
        let (dw, db) = layers.grads(&mut grads, 0);
        conv2d_backward(&cache.input, g, layers.conv(v, 0), &d_sfe1, dw, db, d_input.as_deref_mut())?;
    }
    Ok((grads, d_input))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::srnet::infer::{infer, TileOptions};
    use crate::tensor::{AbundanceMap, Tensor3};

    fn tiny() -> NetArch {
        NetArch {
            in_channels: 6,
            g0: 4,
            d_blocks: 2,
            c_layers: 2,
            growth: 3,
            scale: 4,
        }
    }

    fn random_input(n: usize, g: Geom, seed: u64) -> Feature {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data: Vec<f64> = (0..n * g.plane()).map(|_| rng.gen_range(0.05..1.0)).collect();
        let plane = g.plane();
        for p in 0..plane {
            let s: f64 = (0..n).map(|c| data[c * plane + p]).sum();
            for c in 0..n {
                data[c * plane + p] /= s;
            }
        }
        Feature::from_vec(n, g, data).unwrap()
    }

    /// Weighted output sum, a generic scalar loss.
    fn probe(params: &NetworkParams, x: &Feature, w: &[f64]) -> f64 {
        let y = forward_batch(params, x).unwrap();
        y.data.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn layer_table_is_consistent() {
        let arch = NetArch::default();
        let slots = param_slots(&arch);
        assert_eq!(slots.last().map(|s| s.offset + s.len), Some(param_count(&arch)));
        assert_eq!(slots[0].name, "sfe1.weight");
        assert_eq!(slots[0].shape, vec![32, 6, 3, 3]);
        assert_eq!(arch.layers().last().unwrap().name, "out");
        assert_eq!(arch.receptive_radius(), 21);
        let p = NetworkParams::init(&arch, 3).unwrap();
        assert_eq!(p.values.len(), param_count(&arch));
        assert!(p.values.iter().all(|v| *v as f32 as f64 == *v));
        assert_eq!(p, NetworkParams::init(&arch, 3).unwrap());
        assert_ne!(p, NetworkParams::init(&arch, 4).unwrap());
    }

    #[test]
    fn arch_validation() {
        assert!(NetArch { scale: 3, ..tiny() }.validate().is_err());
        assert!(NetArch { growth: 0, ..tiny() }.validate().is_err());
        let mut kv = KeyValues::new();
        tiny().write_kv(&mut kv);
        assert_eq!(NetArch::from_kv(&kv).unwrap(), tiny());
    }

    #[test]
    fn output_shape_and_simplex() {
        let params = NetworkParams::init(&tiny(), 1).unwrap();
        let x = random_input(6, Geom::new(2, 5, 7), 2);
        let y = forward_batch(&params, &x).unwrap();
        assert_eq!((y.channels, y.geom), (6, Geom::new(2, 20, 28)));
        let plane = y.geom.plane();
        for p in 0..plane {
            let s: f64 = (0..6).map(|c| y.data[c * plane + p]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(y.data.iter().all(|v| *v >= 0.0));
        assert!(forward_batch(&params, &random_input(5, Geom::new(1, 4, 4), 0)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for scale in [2, 4] {
            let arch = NetArch { scale, ..tiny() };
            let mut params = NetworkParams::init(&arch, 5).unwrap();
            // Non-zero biases so every path is exercised.
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            for slot in params.slots().into_iter().filter(|s| s.name.ends_with(".bias")) {
                for v in &mut params.values[slot.offset..slot.offset + slot.len] {
                    *v = rng.gen_range(-0.1..0.1);
                }
            }
            let x = random_input(6, Geom::new(1, 8, 8), 7);
            let cache = forward_train(&params, &x).unwrap();
            let w: Vec<f64> = (0..cache.output.data.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (grads, d_x) = backward(&params, &cache, &w, true).unwrap();
            let d_x = d_x.unwrap();

            let h = 1e-5;
            let check = |analytic: f64, plus: f64, minus: f64, what: &str| {
                let numeric = (plus - minus) / (2.0 * h);
                let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5);
                assert!(err <= 1e-3, "{what}: analytic {analytic} numeric {numeric}");
            };
            // A few entries from every slot.
            for slot in params.slots() {
                for k in [0, slot.len / 2, slot.len - 1] {
                    let idx = slot.offset + k;
                    let mut p = params.clone();
                    p.values[idx] += h;
                    let plus = probe(&p, &x, &w);
                    p.values[idx] -= 2.0 * h;
                    let minus = probe(&p, &x, &w);
                    check(grads[idx], plus, minus, &format!("{}[{k}] scale {scale}", slot.name));
                }
            }
            for idx in (0..x.data.len()).step_by(37) {
                let mut xp = x.clone();
                xp.data[idx] += h;
                let plus = probe(&params, &xp, &w);
                xp.data[idx] -= 2.0 * h;
                let minus = probe(&params, &xp, &w);
                check(d_x[idx], plus, minus, &format!("input[{idx}]"));
            }
        }
    }

    #[test]
    fn material_permutation_equivariance() {
        // Relabel materials: permute the input columns of sfe1 and the output
        // rows of `out`; the prediction must permute the same way.
        let arch = tiny();
        let params = NetworkParams::init(&arch, 8).unwrap();
        let perm = [3, 0, 5, 1, 4, 2];
        let slots = params.slots();
        let find = |n: &str| slots.iter().find(|s| s.name == n).unwrap().clone();
        let mut permuted = params.clone();
        let sfe1 = find("sfe1.weight");
        for o in 0..arch.g0 {
            for (c, &pc) in perm.iter().enumerate() {
                for k in 0..9 {
                    permuted.values[sfe1.offset + (o * 6 + pc) * 9 + k] =
                        params.values[sfe1.offset + (o * 6 + c) * 9 + k];
                }
            }
        }
        let (ow, ob) = (find("out.weight"), find("out.bias"));
        let row = arch.g0 * 9;
        for (c, &pc) in perm.iter().enumerate() {
            permuted.values[ow.offset + pc * row..][..row]
                .copy_from_slice(&params.values[ow.offset + c * row..][..row]);
            permuted.values[ob.offset + pc] = params.values[ob.offset + c];
        }

        let x = random_input(6, Geom::new(1, 6, 6), 9);
        let plane = x.geom.plane();
        let mut xp = x.clone();
        for (c, &pc) in perm.iter().enumerate() {
            xp.data[pc * plane..][..plane].copy_from_slice(x.channel(c));
        }
        // Input relabelling absorbed by the first layer alone leaves the
        // pre-softmax features untouched.
        let mut first_only = permuted.clone();
        first_only.values[ow.offset..ob.offset + ob.len].copy_from_slice(&params.values[ow.offset..ob.offset + ob.len]);
        let logits = forward_logits(&params, &x).unwrap();
        let logits_p = forward_logits(&first_only, &xp).unwrap();
        for (a, b) in logits.data.iter().zip(&logits_p.data) {
            assert!((a - b).abs() < 1e-12);
        }

        let y = forward_batch(&params, &x).unwrap();
        let yp = forward_batch(&permuted, &xp).unwrap();
        let oplane = y.geom.plane();
        for (c, &pc) in perm.iter().enumerate() {
            for (a, b) in y.channel(c).iter().zip(&yp.data[pc * oplane..][..oplane]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tiled_matches_whole_image() {
        let arch = tiny();
        let params = NetworkParams::init(&arch, 10).unwrap();
        let x = random_input(6, Geom::new(1, 30, 23), 11);
        let map = AbundanceMap::from_parts(Tensor3::from_vec(6, 30, 23, x.data.clone()).unwrap(), true);
        let whole = crate::srnet::forward(&params, &map).unwrap();
        let opts = TileOptions { tile: 8, overlap: arch.receptive_radius() };
        let tiled = infer(&params, &map, opts).unwrap();
        assert_eq!(tiled.tensor().dims(), (6, 120, 92));
        let worst = whole
            .tensor()
            .data()
            .iter()
            .zip(tiled.tensor().data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-5, "max deviation {worst}");
        // Too little context changes the stitched result.
        let short = infer(&params, &map, TileOptions { tile: 8, overlap: 1 }).unwrap();
        assert_ne!(short.tensor().data(), whole.tensor().data());
    }
}
