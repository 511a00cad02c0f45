use super::spec::{LayerKind, LayerSpec, ModelSpec};
use crate::error::{QnnError, Result};
use crate::ops::{
    conv2d, conv2d_backward, conv_output_dim, dense, dense_backward, global_avg_pool,
    global_avg_pool_backward, BatchNorm, Mode,
};
use crate::pact::PactActivation;
use crate::rng::Rng;
use crate::sawb::{weight_quant_backward, CalibrationTable, SawbQuantizer};
use crate::tensor::{Param, Tensor};

/// Optimizer treatment of a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Conv/dense weights: weight decay applies.
    Weight,
    Bias,
    /// BatchNorm scale and shift.
    Norm,
    /// PACT clipping level; governed only by its own L2 term.
    Alpha,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight)
    }
}

fn he_normal(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| (rng.normal() * std) as f32).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub weight: Param,
    pub stride: usize,
    pub pad: usize,
    pub quantizer: Option<SawbQuantizer>,
    input: Option<Tensor>,
    quantized: Option<Tensor>,
    last_scale: Option<f32>,
}

impl ConvLayer {
    fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        quantizer: Option<SawbQuantizer>,
        rng: &mut Rng,
    ) -> Self {
        let weight = he_normal(
            &[out_ch, in_ch, kernel, kernel],
            in_ch * kernel * kernel,
            rng,
        );
        ConvLayer {
            weight: Param::new(weight),
            stride,
            pad,
            quantizer,
            input: None,
            quantized: None,
            last_scale: None,
        }
    }

    /// Scale `α̂_w` used in the most recent forward pass.
    pub fn last_scale(&self) -> Option<f32> {
        self.last_scale
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = match &self.quantizer {
            Some(q) => {
                let (wq, scale) = q.quantize(&self.weight.value)?;
                let y = conv2d(x, &wq, self.stride, self.pad)?;
                self.quantized = Some(wq);
                self.last_scale = Some(scale);
                y
            }
            None => conv2d(x, &self.weight.value, self.stride, self.pad)?,
        };
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .take()
            .ok_or_else(|| QnnError::Input("conv backward called before forward".into()))?;
        let w = match self.quantized.take() {
            Some(wq) => wq,
            None => self.weight.value.clone(),
        };
        let (gx, gw) = conv2d_backward(&x, &w, g, self.stride, self.pad)?;
        let gw = if self.quantizer.is_some() {
            weight_quant_backward(&gw)
        } else {
            gw
        };
        self.weight.grad.add_assign(&gw)?;
        Ok(gx)
    }
}

#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weight: Param,
    pub bias: Param,
    pub quantizer: Option<SawbQuantizer>,
    input: Option<Tensor>,
    quantized: Option<Tensor>,
}

impl DenseLayer {
    fn new(inputs: usize, outputs: usize, quantizer: Option<SawbQuantizer>, rng: &mut Rng) -> Self {
        DenseLayer {
            weight: Param::new(he_normal(&[outputs, inputs], inputs, rng)),
            bias: Param::new(Tensor::zeros(&[outputs])),
            quantizer,
            input: None,
            quantized: None,
        }
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = match &self.quantizer {
            Some(q) => {
                let (wq, _) = q.quantize(&self.weight.value)?;
                let y = dense(x, &wq, &self.bias.value)?;
                self.quantized = Some(wq);
                y
            }
            None => dense(x, &self.weight.value, &self.bias.value)?,
        };
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .take()
            .ok_or_else(|| QnnError::Input("dense backward called before forward".into()))?;
        let w = match self.quantized.take() {
            Some(wq) => wq,
            None => self.weight.value.clone(),
        };
        let (gx, gw, gb) = dense_backward(&x, &w, g)?;
        self.weight.grad.add_assign(&weight_quant_backward(&gw))?;
        self.bias.grad.add_assign(&gb)?;
        Ok(gx)
    }
}

/// Pre-activation residual block.
///
/// With a full-precision shortcut, the skip path carries the raw block input
/// (identity) or feeds the unquantized clipped activation through
/// full-precision 1×1 projection weights. Otherwise it consumes the quantized
/// activation, through SAWB-quantized projection weights when projecting.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub bn1: BatchNorm,
    pub act1: PactActivation,
    pub conv1: ConvLayer,
    pub bn2: BatchNorm,
    pub act2: PactActivation,
    pub conv2: ConvLayer,
    pub projection: Option<ConvLayer>,
    pub shortcut_full_precision: bool,
}

impl ResidualBlock {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.bn1.forward(x, mode)?;
        let (clipped, a) = self.act1.forward_both(&h)?;
        let mut out = self.conv1.forward(&a)?;
        out = self.bn2.forward(&out, mode)?;
        out = self.act2.forward(&out)?;
        out = self.conv2.forward(&out)?;
        let shortcut = match (&mut self.projection, self.shortcut_full_precision) {
            (Some(p), true) => p.forward(&clipped)?,
            (Some(p), false) => p.forward(&a)?,
            (None, true) => x.clone(),
            (None, false) => a,
        };
        out.add_assign(&shortcut)?;
        Ok(out)
    }

    fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let mut grad = self.conv2.backward(g)?;
        grad = self.act2.backward(&grad)?;
        grad = self.bn2.backward(&grad)?;
        let mut g_act1 = self.conv1.backward(&grad)?;
        let mut g_input_skip = None;
        match &mut self.projection {
            Some(p) => g_act1.add_assign(&p.backward(g)?)?,
            None if self.shortcut_full_precision => g_input_skip = Some(g),
            None => g_act1.add_assign(g)?,
        }
        let g_h = self.act1.backward(&g_act1)?;
        let mut gx = self.bn1.backward(&g_h)?;
        if let Some(gs) = g_input_skip {
            gx.add_assign(gs)?;
        }
        Ok(gx)
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Conv(ConvLayer),
    Dense(DenseLayer),
    BatchNorm(BatchNorm),
    Pact(PactActivation),
    AvgPool { input_shape: Option<Vec<usize>> },
    Residual(Box<ResidualBlock>),
}

/// Which data path a graph node sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataPath {
    Main,
    Shortcut,
}

/// Structural view of one operation in the built network.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphNode {
    pub name: String,
    pub op: &'static str,
    pub path: DataPath,
    /// The tensor entering this op went through activation quantization.
    pub quantized_input: bool,
    /// The op uses quantized weights, or is itself an activation quantizer.
    pub quantized_weights: bool,
}

/// A built network: layers plus the names used for parameters and checkpoints.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    layers: Vec<Layer>,
    names: Vec<String>,
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Image(usize, usize, usize),
    Flat(usize),
}

fn make_pact(spec: &ModelSpec, bits: Option<u32>) -> Result<PactActivation> {
    let mut act = PactActivation::new(
        spec.pact.alpha_init,
        bits.unwrap_or(2),
        spec.pact.reg_lambda,
        bits.is_some(),
    )?;
    act.learnable = spec.pact.learnable;
    Ok(act)
}

/// Instantiates a model with He-normal fan-in initialization from `seed`.
///
/// Quantized layers take their SAWB coefficients from `table`.
pub fn build_model(spec: &ModelSpec, table: &CalibrationTable, seed: u64) -> Result<Model> {
    spec.validate()?;
    let init = Rng::new(seed, 0x1417);
    let quantizer = |n: Option<u32>| -> Result<Option<SawbQuantizer>> {
        n.map(|n| SawbQuantizer::from_table(table, n)).transpose()
    };
    let (c, h, w) = spec.input;
    let mut shape = Shape::Image(c, h, w);
    let mut layers = Vec::with_capacity(spec.layers.len());
    let mut names = Vec::with_capacity(spec.layers.len());
    for (i, ls) in spec.layers.iter().enumerate() {
        let LayerSpec {
            kind,
            weight_nbin,
            act_bits,
            shortcut_full_precision,
        } = ls;
        let name = format!("l{i}.{}", kind.name());
        let fail = |reason: String| QnnError::Build {
            layer: format!("layer{i} ({})", kind.name()),
            reason,
        };
        let mut rng = init.fork(i as u64);
        let layer = match (kind, shape) {
            (
                LayerKind::Conv {
                    out_channels,
                    kernel,
                    stride,
                    pad,
                },
                Shape::Image(c, h, w),
            ) => {
                let out_c = spec.scaled(*out_channels);
                let (ho, wo) = match (
                    conv_output_dim(h, *kernel, *stride, *pad),
                    conv_output_dim(w, *kernel, *stride, *pad),
                ) {
                    (Some(a), Some(b)) => (a, b),
                    _ => return Err(fail(format!("kernel {kernel} does not fit {h}×{w}"))),
                };
                shape = Shape::Image(out_c, ho, wo);
                Layer::Conv(ConvLayer::new(
                    c,
                    out_c,
                    *kernel,
                    *stride,
                    *pad,
                    quantizer(*weight_nbin)?,
                    &mut rng,
                ))
            }
            (LayerKind::Dense { out_features }, Shape::Flat(f)) => {
                shape = Shape::Flat(*out_features);
                Layer::Dense(DenseLayer::new(
                    f,
                    *out_features,
                    quantizer(*weight_nbin)?,
                    &mut rng,
                ))
            }
            (LayerKind::BatchNorm, Shape::Image(c, ..))
            | (LayerKind::BatchNorm, Shape::Flat(c)) => Layer::BatchNorm(BatchNorm::new(c)),
            (LayerKind::Pact, _) => Layer::Pact(make_pact(spec, *act_bits)?),
            (LayerKind::AvgPool, Shape::Image(c, ..)) => {
                shape = Shape::Flat(c);
                Layer::AvgPool { input_shape: None }
            }
            (
                LayerKind::ResidualBlock {
                    out_channels,
                    stride,
                },
                Shape::Image(c, h, w),
            ) => {
                let out_c = spec.scaled(*out_channels);
                let (ho, wo) = match (
                    conv_output_dim(h, 3, *stride, 1),
                    conv_output_dim(w, 3, *stride, 1),
                ) {
                    (Some(a), Some(b)) => (a, b),
                    _ => return Err(fail(format!("stride {stride} does not fit {h}×{w}"))),
                };
                let q = quantizer(*weight_nbin)?;
                let projection = (c != out_c || *stride != 1).then(|| {
                    let pq = if *shortcut_full_precision { None } else { q };
                    ConvLayer::new(c, out_c, 1, *stride, 0, pq, &mut rng.fork(3))
                });
                shape = Shape::Image(out_c, ho, wo);
                Layer::Residual(Box::new(ResidualBlock {
                    bn1: BatchNorm::new(c),
                    act1: make_pact(spec, *act_bits)?,
                    conv1: ConvLayer::new(c, out_c, 3, *stride, 1, q, &mut rng.fork(1)),
                    bn2: BatchNorm::new(out_c),
                    act2: make_pact(spec, *act_bits)?,
                    conv2: ConvLayer::new(out_c, out_c, 3, 1, 1, q, &mut rng.fork(2)),
                    projection,
                    shortcut_full_precision: *shortcut_full_precision,
                }))
            }
            (kind, shape) => {
                return Err(fail(format!(
                    "{} cannot consume input of shape {shape:?}",
                    kind.name()
                )))
            }
        };
        layers.push(layer);
        names.push(name);
    }
    if !matches!(shape, Shape::Flat(_)) {
        let i = spec.layers.len() - 1;
        return Err(QnnError::Build {
            layer: format!("layer{i} ({})", spec.layers[i].kind.name()),
            reason: "network must end in a flat output".into(),
        });
    }
    Ok(Model {
        spec: spec.clone(),
        layers,
        names,
    })
}

impl Model {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_names(&self) -> &[String] {
        &self.names
    }

    pub fn num_classes(&self) -> usize {
        match self.spec.layers.last().map(|l| &l.kind) {
            Some(LayerKind::Dense { out_features }) => *out_features,
            _ => 0,
        }
    }

    /// Forward pass; fails on the first layer whose output is non-finite.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut cur = x.clone();
        for (layer, name) in self.layers.iter_mut().zip(&self.names) {
            cur = match layer {
                Layer::Conv(c) => c.forward(&cur)?,
                Layer::Dense(d) => d.forward(&cur)?,
                Layer::BatchNorm(bn) => bn.forward(&cur, mode)?,
                Layer::Pact(p) => p.forward(&cur)?,
                Layer::AvgPool { input_shape } => {
                    *input_shape = Some(cur.shape().to_vec());
                    global_avg_pool(&cur)?
                }
                Layer::Residual(b) => b.forward(&cur, mode)?,
            };
            cur.check_finite(name)?;
        }
        Ok(cur)
    }

    /// Backpropagates `grad_logits`, accumulating into every parameter.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        let mut g = grad_logits.clone();
        for layer in self.layers.iter_mut().rev() {
            g = match layer {
                Layer::Conv(c) => c.backward(&g)?,
                Layer::Dense(d) => d.backward(&g)?,
                Layer::BatchNorm(bn) => bn.backward(&g)?,
                Layer::Pact(p) => p.backward(&g)?,
                Layer::AvgPool { input_shape } => {
                    let shape = input_shape.take().ok_or_else(|| {
                        QnnError::Input("avgpool backward called before forward".into())
                    })?;
                    global_avg_pool_backward(&g, &shape)?
                }
                Layer::Residual(b) => b.backward(&g)?,
            };
        }
        Ok(g)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param, ParamKind)) {
        for (layer, name) in self.layers.iter_mut().zip(&self.names) {
            match layer {
                Layer::Conv(c) => f(&format!("{name}.weight"), &mut c.weight, ParamKind::Weight),
                Layer::Dense(d) => {
                    f(&format!("{name}.weight"), &mut d.weight, ParamKind::Weight);
                    f(&format!("{name}.bias"), &mut d.bias, ParamKind::Bias);
                }
                Layer::BatchNorm(bn) => visit_bn_params(name, bn, f),
                Layer::Pact(p) => f(&format!("{name}.alpha"), &mut p.alpha, ParamKind::Alpha),
                Layer::AvgPool { .. } => {}
                Layer::Residual(b) => {
                    visit_bn_params(&format!("{name}.bn1"), &mut b.bn1, f);
                    f(
                        &format!("{name}.act1.alpha"),
                        &mut b.act1.alpha,
                        ParamKind::Alpha,
                    );
                    f(
                        &format!("{name}.conv1.weight"),
                        &mut b.conv1.weight,
                        ParamKind::Weight,
                    );
                    visit_bn_params(&format!("{name}.bn2"), &mut b.bn2, f);
                    f(
                        &format!("{name}.act2.alpha"),
                        &mut b.act2.alpha,
                        ParamKind::Alpha,
                    );
                    f(
                        &format!("{name}.conv2.weight"),
                        &mut b.conv2.weight,
                        ParamKind::Weight,
                    );
                    if let Some(p) = &mut b.projection {
                        f(
                            &format!("{name}.proj.weight"),
                            &mut p.weight,
                            ParamKind::Weight,
                        );
                    }
                }
            }
        }
    }

    /// Non-trainable state (BatchNorm running statistics).
    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (layer, name) in self.layers.iter_mut().zip(&self.names) {
            match layer {
                Layer::BatchNorm(bn) => visit_bn_buffers(name, bn, f),
                Layer::Residual(b) => {
                    visit_bn_buffers(&format!("{name}.bn1"), &mut b.bn1, f);
                    visit_bn_buffers(&format!("{name}.bn2"), &mut b.bn2, f);
                }
                _ => {}
            }
        }
    }

    pub fn visit_pacts(&mut self, f: &mut dyn FnMut(&str, &mut PactActivation)) {
        for (layer, name) in self.layers.iter_mut().zip(&self.names) {
            match layer {
                Layer::Pact(p) => f(name, p),
                Layer::Residual(b) => {
                    f(&format!("{name}.act1"), &mut b.act1);
                    f(&format!("{name}.act2"), &mut b.act2);
                }
                _ => {}
            }
        }
    }

    /// Every layer that quantizes its weights, with its latent weights.
    pub fn quantized_weight_layers(&self) -> Vec<(String, &Tensor, SawbQuantizer)> {
        let mut out = Vec::new();
        for (layer, name) in self.layers.iter().zip(&self.names) {
            match layer {
                Layer::Conv(ConvLayer {
                    weight,
                    quantizer: Some(q),
                    ..
                })
                | Layer::Dense(DenseLayer {
                    weight,
                    quantizer: Some(q),
                    ..
                }) => out.push((format!("{name}.weight"), &weight.value, *q)),
                Layer::Residual(b) => {
                    let convs = [
                        ("conv1", Some(&b.conv1)),
                        ("conv2", Some(&b.conv2)),
                        ("proj", b.projection.as_ref()),
                    ];
                    for (sub, conv) in convs {
                        if let Some(ConvLayer {
                            weight,
                            quantizer: Some(q),
                            ..
                        }) = conv
                        {
                            out.push((format!("{name}.{sub}.weight"), &weight.value, *q));
                        }
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn alphas(&mut self) -> Vec<(String, f32)> {
        let mut out = Vec::new();
        self.visit_pacts(&mut |name, p| out.push((name.to_string(), p.alpha_value())));
        out
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p, _| n += p.value.len());
        n
    }

    pub fn conv_param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |name, p, kind| {
            if kind == ParamKind::Weight && p.value.ndim() == 4 && !name.contains("dense") {
                n += p.value.len();
            }
        });
        n
    }

    /// FNV-1a over the bit patterns of every parameter value.
    pub fn param_checksum(&mut self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        self.visit_params(&mut |_, p, _| {
            for v in p.value.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        });
        h
    }

    /// Structural listing of every op, used to assert where quantization acts.
    pub fn graph(&self) -> Vec<GraphNode> {
        let mut nodes = Vec::new();
        let mut act_quantized = false;
        let node = |name: String, op, path, qi, qw| GraphNode {
            name,
            op,
            path,
            quantized_input: qi,
            quantized_weights: qw,
        };
        for (layer, name) in self.layers.iter().zip(&self.names) {
            match layer {
                Layer::Conv(c) => {
                    nodes.push(node(
                        name.clone(),
                        "conv",
                        DataPath::Main,
                        act_quantized,
                        c.quantizer.is_some(),
                    ));
                    act_quantized = false;
                }
                Layer::Dense(d) => {
                    nodes.push(node(
                        name.clone(),
                        "dense",
                        DataPath::Main,
                        act_quantized,
                        d.quantizer.is_some(),
                    ));
                    act_quantized = false;
                }
                Layer::BatchNorm(_) => {
                    nodes.push(node(
                        name.clone(),
                        "batchnorm",
                        DataPath::Main,
                        act_quantized,
                        false,
                    ));
                    act_quantized = false;
                }
                Layer::Pact(p) => {
                    nodes.push(node(
                        name.clone(),
                        "pact",
                        DataPath::Main,
                        act_quantized,
                        p.quantize_enabled,
                    ));
                    act_quantized = p.quantize_enabled;
                }
                Layer::AvgPool { .. } => {
                    nodes.push(node(
                        name.clone(),
                        "avgpool",
                        DataPath::Main,
                        act_quantized,
                        false,
                    ));
                }
                Layer::Residual(b) => {
                    let q1 = b.act1.quantize_enabled;
                    let q2 = b.act2.quantize_enabled;
                    nodes.push(node(
                        format!("{name}.bn1"),
                        "batchnorm",
                        DataPath::Main,
                        act_quantized,
                        false,
                    ));
                    nodes.push(node(
                        format!("{name}.act1"),
                        "pact",
                        DataPath::Main,
                        false,
                        q1,
                    ));
                    nodes.push(node(
                        format!("{name}.conv1"),
                        "conv",
                        DataPath::Main,
                        q1,
                        b.conv1.quantizer.is_some(),
                    ));
                    nodes.push(node(
                        format!("{name}.bn2"),
                        "batchnorm",
                        DataPath::Main,
                        false,
                        false,
                    ));
                    nodes.push(node(
                        format!("{name}.act2"),
                        "pact",
                        DataPath::Main,
                        false,
                        q2,
                    ));
                    nodes.push(node(
                        format!("{name}.conv2"),
                        "conv",
                        DataPath::Main,
                        q2,
                        b.conv2.quantizer.is_some(),
                    ));
                    let skip_input_quantized = !b.shortcut_full_precision && q1;
                    match &b.projection {
                        Some(p) => nodes.push(node(
                            format!("{name}.proj"),
                            "conv",
                            DataPath::Shortcut,
                            skip_input_quantized,
                            p.quantizer.is_some(),
                        )),
                        None => nodes.push(node(
                            format!("{name}.skip"),
                            "identity",
                            DataPath::Shortcut,
                            if b.shortcut_full_precision {
                                act_quantized
                            } else {
                                q1
                            },
                            false,
                        )),
                    }
                    nodes.push(node(
                        format!("{name}.add"),
                        "add",
                        DataPath::Main,
                        false,
                        false,
                    ));
                    act_quantized = false;
                }
            }
        }
        nodes
    }
}

fn visit_bn_params(
    prefix: &str,
    bn: &mut BatchNorm,
    f: &mut dyn FnMut(&str, &mut Param, ParamKind),
) {
    f(&format!("{prefix}.gamma"), &mut bn.gamma, ParamKind::Norm);
    f(&format!("{prefix}.beta"), &mut bn.beta, ParamKind::Norm);
}

fn visit_bn_buffers(prefix: &str, bn: &mut BatchNorm, f: &mut dyn FnMut(&str, &mut Tensor)) {
    f(&format!("{prefix}.running_mean"), &mut bn.running_mean);
    f(&format!("{prefix}.running_var"), &mut bn.running_var);
}
