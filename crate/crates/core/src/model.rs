//! Landmark regression network.
//!
//! Five dilated dense blocks each halve the spatial size of the feature
//! volume. Inside a block, three residual units with dilations 1, 2 and 4
//! each read the running volume and append their output to it, so the
//! pre-downsample volume carries `in + 3·unit` channels mixing three
//! receptive-field sizes. A stride-2 3×3 convolution then downsamples.
//! Ten small heads (3×3 convolution, normalization, rectifier, fully
//! connected layer) each regress one `(x, y)` pixel coordinate from the
//! final volume; heads of landmarks absent from the image learn to output
//! `(0, 0)`.
//!
//! A residual unit is `relu(norm(conv(relu(norm(conv(x))))) + skip(x))`,
//! with an identity skip when the channel counts agree and a 1×1
//! projection otherwise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::NUM_LANDMARKS;
use crate::nn::{relu_backward, relu_inplace, Conv, ConvTape, Linear, Norm, NormTape, Real};

pub const NUM_BLOCKS: usize = 5;
pub const DILATIONS: [usize; 3] = [1, 2, 4];
pub const OUTPUTS: usize = 2 * NUM_LANDMARKS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseBlockSpec {
    pub in_channels: usize,
    pub unit_channels: usize,
    pub dilations: Vec<usize>,
    pub out_channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressorSpec {
    /// `(height, width)` of the network input.
    pub input_size: [usize; 2],
    pub blocks: Vec<DenseBlockSpec>,
    pub head_conv_channels: usize,
    pub n_landmarks: usize,
    /// Fixed multiplier on head outputs; heads still emit pixel
    /// coordinates, this only conditions the last layer.
    #[serde(default = "default_coord_scale")]
    pub coord_scale: f64,
    #[serde(default)]
    pub norm: NormKind,
}

/// Normalization statistics used before every rectifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    /// Per channel, over spatial positions.
    #[default]
    Instance,
    /// Per sample, over all channels and positions.
    Layer,
}

fn default_coord_scale() -> f64 {
    1.0
}

impl RegressorSpec {
    /// Channel widths doubling per block, starting from `unit0` / `out0`.
    pub fn with_widths(input: usize, unit0: usize, out0: usize, head_conv_channels: usize) -> Self {
        let mut blocks = Vec::with_capacity(NUM_BLOCKS);
        let mut cin = 1;
        for k in 0..NUM_BLOCKS {
            let unit = unit0 << k;
            let out = out0 << k;
            blocks.push(DenseBlockSpec {
                in_channels: cin,
                unit_channels: unit,
                dilations: DILATIONS.to_vec(),
                out_channels: out,
            });
            cin = out;
        }
        RegressorSpec {
            input_size: [input, input],
            blocks,
            head_conv_channels,
            n_landmarks: NUM_LANDMARKS,
            coord_scale: 1.0,
            norm: NormKind::Instance,
        }
    }

    /// Full-size network: 256×256 input, unit width 32.
    pub fn full() -> Self {
        Self::with_widths(256, 32, 64, 64)
    }

    /// Laptop-scale network used by the desk training runs. At desk input
    /// sizes the deepest maps are 2×2 or smaller, too few positions for
    /// per-channel statistics, so these presets normalize per sample.
    pub fn desk(input: usize) -> Self {
        Self {
            coord_scale: input as f64 / 2.0,
            norm: NormKind::Layer,
            ..Self::with_widths(input, 8, 16, 16)
        }
    }

    /// Smallest configuration, for tests and gradient checks.
    pub fn tiny(input: usize) -> Self {
        Self {
            coord_scale: input as f64 / 2.0,
            norm: NormKind::Layer,
            ..Self::with_widths(input, 4, 8, 8)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.input_size;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Spec(format!(
                "input size {h}x{w} must be a positive multiple of 32"
            )));
        }
        if self.blocks.len() != NUM_BLOCKS {
            return Err(Error::Spec(format!(
                "expected {NUM_BLOCKS} dense blocks, got {}",
                self.blocks.len()
            )));
        }
        if self.n_landmarks != NUM_LANDMARKS {
            return Err(Error::Spec(format!(
                "expected {NUM_LANDMARKS} landmark heads, got {}",
                self.n_landmarks
            )));
        }
        if self.head_conv_channels == 0 {
            return Err(Error::Spec("head_conv_channels must be >= 1".into()));
        }
        if !(self.coord_scale.is_finite() && self.coord_scale > 0.0) {
            return Err(Error::Spec("coord_scale must be positive".into()));
        }
        let mut cin = 1;
        for (k, b) in self.blocks.iter().enumerate() {
            if b.in_channels != cin {
                return Err(Error::Spec(format!(
                    "block {k} expects {} input channels, previous stage gives {cin}",
                    b.in_channels
                )));
            }
            if b.unit_channels == 0 || b.out_channels == 0 {
                return Err(Error::Spec(format!("block {k} has a zero channel count")));
            }
            if b.dilations != DILATIONS {
                return Err(Error::Spec(format!(
                    "block {k} dilations must be {DILATIONS:?}, got {:?}",
                    b.dilations
                )));
            }
            cin = b.out_channels;
        }
        Ok(())
    }

    /// Spatial size after each block for this spec's input.
    pub fn block_output_dims(&self) -> Vec<(usize, usize)> {
        let [mut h, mut w] = self.input_size;
        (0..NUM_BLOCKS)
            .map(|_| {
                h = (h - 1) / 2 + 1;
                w = (w - 1) / 2 + 1;
                (h, w)
            })
            .collect()
    }
}

/// Named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
struct ResUnit {
    conv1: Conv,
    norm1: Norm,
    conv2: Conv,
    norm2: Norm,
    proj: Option<Conv>,
}

struct UnitTape<T> {
    c1: ConvTape<T>,
    n1: NormTape<T>,
    r1: Vec<T>,
    c2: ConvTape<T>,
    n2: NormTape<T>,
    proj: Option<ConvTape<T>>,
    out: Vec<T>,
}

impl ResUnit {
    fn forward<T: Real>(&self, p: &[T], x: &[T], h: usize, w: usize) -> (Vec<T>, UnitTape<T>) {
        let hw = h * w;
        let (a1, c1) = self.conv1.forward(p, x, h, w);
        let (mut r1, n1) = self.norm1.forward(p, &a1, hw);
        relu_inplace(&mut r1);
        let (a2, c2) = self.conv2.forward(p, &r1, h, w);
        let (mut out, n2) = self.norm2.forward(p, &a2, hw);
        let proj = match &self.proj {
            Some(conv) => {
                let (s, tape) = conv.forward(p, x, h, w);
                out.iter_mut().zip(&s).for_each(|(o, &v)| *o += v);
                Some(tape)
            }
            None => {
                out.iter_mut().zip(x).for_each(|(o, &v)| *o += v);
                None
            }
        };
        relu_inplace(&mut out);
        (
            out.clone(),
            UnitTape {
                c1,
                n1,
                r1,
                c2,
                n2,
                proj,
                out,
            },
        )
    }

    fn backward<T: Real>(
        &self,
        p: &[T],
        g: &mut [T],
        tape: &UnitTape<T>,
        dout: &[T],
        hw: usize,
        need_dx: bool,
    ) -> Vec<T> {
        let mut dz = dout.to_vec();
        relu_backward(&tape.out, &mut dz);
        let da2 = self.norm2.backward(p, g, &tape.n2, &dz, hw);
        let mut dr1 = self.conv2.backward(p, g, &tape.c2, &da2, true);
        relu_backward(&tape.r1, &mut dr1);
        let da1 = self.norm1.backward(p, g, &tape.n1, &dr1, hw);
        let mut dx = self.conv1.backward(p, g, &tape.c1, &da1, need_dx);
        match (&self.proj, &tape.proj) {
            (Some(conv), Some(pt)) => {
                let ds = conv.backward(p, g, pt, &dz, need_dx);
                dx.iter_mut().zip(&ds).for_each(|(a, &b)| *a += b);
            }
            _ => {
                if need_dx {
                    dx.iter_mut().zip(&dz).for_each(|(a, &b)| *a += b);
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
struct DenseBlock {
    in_channels: usize,
    unit_channels: usize,
    units: Vec<ResUnit>,
    down: Conv,
    down_norm: Norm,
}

struct BlockTape<T> {
    units: Vec<UnitTape<T>>,
    down: ConvTape<T>,
    down_norm: NormTape<T>,
    out: Vec<T>,
    h: usize,
    w: usize,
}

impl DenseBlock {
    fn forward<T: Real>(&self, p: &[T], x: &[T], h: usize, w: usize) -> (Vec<T>, BlockTape<T>) {
        let mut vol = x.to_vec();
        let mut units = Vec::with_capacity(self.units.len());
        for unit in &self.units {
            let (o, tape) = unit.forward(p, &vol, h, w);
            vol.extend_from_slice(&o);
            units.push(tape);
        }
        let (ho, wo) = self.down.out_dims(h, w);
        let (d, down) = self.down.forward(p, &vol, h, w);
        let (mut out, down_norm) = self.down_norm.forward(p, &d, ho * wo);
        relu_inplace(&mut out);
        (
            out.clone(),
            BlockTape {
                units,
                down,
                down_norm,
                out,
                h,
                w,
            },
        )
    }

    fn backward<T: Real>(
        &self,
        p: &[T],
        g: &mut [T],
        tape: &BlockTape<T>,
        dout: &[T],
        need_dx: bool,
    ) -> Vec<T> {
        let hw = tape.h * tape.w;
        let (ho, wo) = self.down.out_dims(tape.h, tape.w);
        let mut dz = dout.to_vec();
        relu_backward(&tape.out, &mut dz);
        let dd = self.down_norm.backward(p, g, &tape.down_norm, &dz, ho * wo);
        let mut dvol = self.down.backward(p, g, &tape.down, &dd, true);
        for (i, unit) in self.units.iter().enumerate().rev() {
            let start = (self.in_channels + i * self.unit_channels) * hw;
            let need = need_dx || i > 0;
            let dx = unit.backward(p, g, &tape.units[i], &dvol[start..], hw, need);
            dvol.truncate(start);
            if need {
                dvol.iter_mut().zip(&dx).for_each(|(a, &b)| *a += b);
            }
        }
        dvol
    }
}

#[derive(Debug, Clone)]
struct Head {
    conv: Conv,
    norm: Norm,
    fc: Linear,
}

/// Intermediate values of one forward pass, kept for the backward pass.
pub struct Tape<T> {
    blocks: Vec<BlockTape<T>>,
    head_convs: Vec<ConvTape<T>>,
    head_norms: Vec<NormTape<T>>,
    head_feats: Vec<Vec<T>>,
}

/// The regression network with its parameters.
#[derive(Debug, Clone)]
pub struct Regressor<T> {
    spec: RegressorSpec,
    blocks: Vec<DenseBlock>,
    heads: Vec<Head>,
    layout: Vec<ParamEntry>,
    params: Vec<T>,
}

/// A batch of single-channel images, `n×1×height×width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> Batch<T> {
    pub fn from_images(images: &[&[f32]], height: usize, width: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(images.len() * height * width);
        for (i, img) in images.iter().enumerate() {
            if img.len() != height * width {
                return Err(Error::Shape(format!(
                    "image {i} has {} pixels, expected {}",
                    img.len(),
                    height * width
                )));
            }
            data.extend(img.iter().map(|&v| T::from_f32(v).unwrap()));
        }
        Ok(Batch {
            n: images.len(),
            height,
            width,
            data,
        })
    }

    pub fn image(&self, i: usize) -> &[T] {
        let hw = self.height * self.width;
        &self.data[i * hw..(i + 1) * hw]
    }
}

struct LayoutBuilder {
    offset: usize,
    norm: NormKind,
    entries: Vec<ParamEntry>,
}

impl LayoutBuilder {
    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: String,
        cin: usize,
        cout: usize,
        kernel: usize,
        dilation: usize,
        stride: usize,
        pad: usize,
    ) -> Conv {
        let conv = Conv::new(cin, cout, kernel, dilation, stride, pad, self.offset);
        self.push(format!("{name}.weight"), conv.bias - conv.weight);
        self.push(format!("{name}.bias"), conv.cout);
        conv
    }

    fn norm(&mut self, name: String, channels: usize) -> Norm {
        let groups = match self.norm {
            NormKind::Instance => channels,
            NormKind::Layer => 1,
        };
        let norm = Norm::new(channels, groups, self.offset);
        self.push(format!("{name}.gamma"), channels);
        self.push(format!("{name}.beta"), channels);
        norm
    }

    fn linear(&mut self, name: String, nin: usize, nout: usize) -> Linear {
        let lin = Linear::new(nin, nout, self.offset);
        self.push(format!("{name}.weight"), nin * nout);
        self.push(format!("{name}.bias"), nout);
        lin
    }

    fn push(&mut self, name: String, len: usize) {
        self.entries.push(ParamEntry {
            name,
            offset: self.offset,
            len,
        });
        self.offset += len;
    }
}

impl<T: Real> Regressor<T> {
    /// Builds the network and draws He-normal initial weights from `rng`.
    pub fn build<R: Rng + ?Sized>(spec: &RegressorSpec, rng: &mut R) -> Result<Self> {
        let mut model = Self::skeleton(spec)?;
        model.init_params(rng);
        Ok(model)
    }

    /// Network with all parameters zero.
    pub fn skeleton(spec: &RegressorSpec) -> Result<Self> {
        spec.validate()?;
        let mut lb = LayoutBuilder {
            offset: 0,
            norm: spec.norm,
            entries: Vec::new(),
        };
        let mut blocks = Vec::with_capacity(NUM_BLOCKS);
        for (k, bs) in spec.blocks.iter().enumerate() {
            let mut units = Vec::with_capacity(3);
            for (u, &dil) in bs.dilations.iter().enumerate() {
                let cin = bs.in_channels + u * bs.unit_channels;
                let name = format!("block{k}.unit{u}");
                let conv1 = lb.conv(
                    format!("{name}.conv1"),
                    cin,
                    bs.unit_channels,
                    3,
                    dil,
                    1,
                    dil,
                );
                let norm1 = lb.norm(format!("{name}.norm1"), bs.unit_channels);
                let conv2 = lb.conv(
                    format!("{name}.conv2"),
                    bs.unit_channels,
                    bs.unit_channels,
                    3,
                    dil,
                    1,
                    dil,
                );
                let norm2 = lb.norm(format!("{name}.norm2"), bs.unit_channels);
                let proj = (cin != bs.unit_channels)
                    .then(|| lb.conv(format!("{name}.proj"), cin, bs.unit_channels, 1, 1, 1, 0));
                units.push(ResUnit {
                    conv1,
                    norm1,
                    conv2,
                    norm2,
                    proj,
                });
            }
            let cat = bs.in_channels + 3 * bs.unit_channels;
            let down = lb.conv(format!("block{k}.down"), cat, bs.out_channels, 3, 1, 2, 1);
            let down_norm = lb.norm(format!("block{k}.down_norm"), bs.out_channels);
            blocks.push(DenseBlock {
                in_channels: bs.in_channels,
                unit_channels: bs.unit_channels,
                units,
                down,
                down_norm,
            });
        }
        let (h5, w5) = *spec.block_output_dims().last().unwrap();
        let c5 = spec.blocks.last().unwrap().out_channels;
        let heads = (0..spec.n_landmarks)
            .map(|i| {
                let conv = lb.conv(
                    format!("head{}.conv", i + 1),
                    c5,
                    spec.head_conv_channels,
                    3,
                    1,
                    1,
                    1,
                );
                let norm = lb.norm(format!("head{}.norm", i + 1), spec.head_conv_channels);
                let fc = lb.linear(
                    format!("head{}.fc", i + 1),
                    spec.head_conv_channels * h5 * w5,
                    2,
                );
                Head { conv, norm, fc }
            })
            .collect();
        let params = vec![T::zero(); lb.offset];
        Ok(Regressor {
            spec: spec.clone(),
            blocks,
            heads,
            layout: lb.entries,
            params,
        })
    }

    fn init_params<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let mut init_conv = |params: &mut [T], conv: &Conv| {
            let std = (2.0 / (conv.cin * conv.kernel * conv.kernel) as f64).sqrt();
            let dist = Normal::new(0.0, std).unwrap();
            for v in &mut params[conv.weight..conv.bias] {
                *v = T::lit(dist.sample(rng));
            }
        };
        let mut convs: Vec<&Conv> = Vec::new();
        let mut norms: Vec<&Norm> = Vec::new();
        for b in &self.blocks {
            for u in &b.units {
                convs.extend([&u.conv1, &u.conv2]);
                convs.extend(u.proj.as_ref());
                norms.extend([&u.norm1, &u.norm2]);
            }
            convs.push(&b.down);
            norms.push(&b.down_norm);
        }
        for h in &self.heads {
            convs.push(&h.conv);
            norms.push(&h.norm);
        }
        let params = &mut self.params;
        for conv in convs {
            init_conv(params, conv);
        }
        for norm in norms {
            params[norm.gamma..norm.beta]
                .iter_mut()
                .for_each(|v| *v = T::one());
        }
        for h in &self.heads {
            let std = (1.0 / h.fc.nin as f64).sqrt();
            let dist = Normal::new(0.0, std).unwrap();
            for v in &mut params[h.fc.weight..h.fc.bias] {
                *v = T::lit(dist.sample(rng));
            }
        }
    }

    pub fn spec(&self) -> &RegressorSpec {
        &self.spec
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<T>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} parameters given, model has {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    pub fn layout(&self) -> &[ParamEntry] {
        &self.layout
    }

    pub fn count_params(&self) -> usize {
        self.params.len()
    }

    /// Channels of each block's concatenated volume before downsampling.
    pub fn concat_channels(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.down.cin).collect()
    }

    /// Runs one image through the network, keeping a tape for `backward`.
    pub fn forward_tape(&self, image: &[T]) -> Result<([T; OUTPUTS], Tape<T>)> {
        let [h, w] = self.spec.input_size;
        if image.len() != h * w {
            return Err(Error::Shape(format!(
                "input has {} pixels, model expects {h}x{w}",
                image.len()
            )));
        }
        let p = &self.params[..];
        let (mut h, mut w) = (h, w);
        let mut x = image.to_vec();
        let mut blocks = Vec::with_capacity(NUM_BLOCKS);
        for block in &self.blocks {
            let (y, tape) = block.forward(p, &x, h, w);
            (h, w) = block.down.out_dims(h, w);
            x = y;
            blocks.push(tape);
        }
        let scale = T::lit(self.spec.coord_scale);
        let mut out = [T::zero(); OUTPUTS];
        let mut head_convs = Vec::with_capacity(self.heads.len());
        let mut head_norms = Vec::with_capacity(self.heads.len());
        let mut head_feats = Vec::with_capacity(self.heads.len());
        for (i, head) in self.heads.iter().enumerate() {
            let (c, conv_tape) = head.conv.forward(p, &x, h, w);
            let (mut f, norm_tape) = head.norm.forward(p, &c, h * w);
            relu_inplace(&mut f);
            let y = head.fc.forward(p, &f);
            out[2 * i] = y[0] * scale;
            out[2 * i + 1] = y[1] * scale;
            head_convs.push(conv_tape);
            head_norms.push(norm_tape);
            head_feats.push(f);
        }
        Ok((
            out,
            Tape {
                blocks,
                head_convs,
                head_norms,
                head_feats,
            },
        ))
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d output`.
    pub fn backward(&self, tape: &Tape<T>, dout: &[T; OUTPUTS], grads: &mut [T]) {
        assert_eq!(grads.len(), self.params.len());
        let p = &self.params[..];
        let scale = T::lit(self.spec.coord_scale);
        let feat_len = tape.blocks.last().unwrap().out.len();
        let mut dx = vec![T::zero(); feat_len];
        for (i, head) in self.heads.iter().enumerate() {
            let dy = [dout[2 * i] * scale, dout[2 * i + 1] * scale];
            if dy[0] == T::zero() && dy[1] == T::zero() {
                continue;
            }
            let mut df = head.fc.backward(p, grads, &tape.head_feats[i], &dy);
            relu_backward(&tape.head_feats[i], &mut df);
            let hw = df.len() / head.norm.channels;
            let dc = head.norm.backward(p, grads, &tape.head_norms[i], &df, hw);
            let d = head.conv.backward(p, grads, &tape.head_convs[i], &dc, true);
            dx.iter_mut().zip(&d).for_each(|(a, &b)| *a += b);
        }
        for (k, block) in self.blocks.iter().enumerate().rev() {
            dx = block.backward(p, grads, &tape.blocks[k], &dx, k > 0);
        }
    }

    pub fn forward_one(&self, image: &[T]) -> Result<[T; OUTPUTS]> {
        Ok(self.forward_tape(image)?.0)
    }

    /// `B×1×H×W → B×10×2` (flattened per sample as `[x1, y1, ..., x10, y10]`).
    pub fn forward(&self, batch: &Batch<T>) -> Result<Vec<[T; OUTPUTS]>> {
        let [h, w] = self.spec.input_size;
        if batch.height != h || batch.width != w {
            return Err(Error::Shape(format!(
                "batch is {}x{}, model expects {h}x{w}",
                batch.height, batch.width
            )));
        }
        (0..batch.n)
            .map(|i| self.forward_one(batch.image(i)))
            .collect()
    }

    /// Spatial dims after each block for a given input, computed by
    /// actually running the network.
    pub fn probe_block_dims(&self) -> Vec<(usize, usize)> {
        let [mut h, mut w] = self.spec.input_size;
        self.blocks
            .iter()
            .map(|b| {
                (h, w) = b.down.out_dims(h, w);
                (h, w)
            })
            .collect()
    }

    /// Converts parameters to another precision (e.g. for gradient checks).
    pub fn cast<U: Real>(&self) -> Regressor<U> {
        Regressor {
            spec: self.spec.clone(),
            blocks: self.blocks.clone(),
            heads: self.heads.clone(),
            layout: self.layout.clone(),
            params: self
                .params
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }
}

/// Mean absolute error over all `B×10×2` components and its gradient with
/// respect to the predictions.
pub fn mae_with_grad<T: Real>(
    pred: &[[T; OUTPUTS]],
    target: &[[T; OUTPUTS]],
) -> Result<(T, Vec<[T; OUTPUTS]>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    let denom = T::from_usize(pred.len() * OUTPUTS).unwrap();
    let mut loss = T::zero();
    let mut grads = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        let mut g = [T::zero(); OUTPUTS];
        for j in 0..OUTPUTS {
            let d = p[j] - t[j];
            loss += d.abs();
            g[j] = if d > T::zero() {
                T::one() / denom
            } else if d < T::zero() {
                -T::one() / denom
            } else {
                T::zero()
            };
        }
        grads.push(g);
    }
    Ok((loss / denom, grads))
}

/// Loss and parameter gradient for a batch, processing samples one at a
/// time so only one tape is alive.
pub fn loss_and_grad<T: Real>(
    model: &Regressor<T>,
    images: &[&[T]],
    targets: &[[T; OUTPUTS]],
) -> Result<(T, Vec<T>)> {
    if images.len() != targets.len() || images.is_empty() {
        return Err(Error::Shape(format!(
            "{} images vs {} targets",
            images.len(),
            targets.len()
        )));
    }
    let mut grads = vec![T::zero(); model.count_params()];
    let mut total = T::zero();
    let n = T::from_usize(images.len()).unwrap();
    for (img, target) in images.iter().zip(targets) {
        let (out, tape) = model.forward_tape(img)?;
        let (loss, g) = mae_with_grad(&[out], std::slice::from_ref(target))?;
        total += loss;
        let mut dout = g[0];
        dout.iter_mut().for_each(|v| *v = *v / n);
        model.backward(&tape, &dout, &mut grads);
    }
    Ok((total / n, grads))
}
