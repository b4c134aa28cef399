//! Bias-free ReLU networks: layers, construction, forward traces,
//! serialization, weight perturbation and a small SGD trainer.
//!
//! Layers are numbered from 1. Layer `l` maps activation `A_{l-1}` to `A_l`;
//! `A_0` is the input and `A_L` holds the logits.

pub mod data;
mod forward;
mod io;
pub(crate) mod linear;
mod perturb;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{NfrError, Result};
use crate::sampling::{derive_seed, sample_gaussian, sample_rows, DistKind, DistSpec};
use crate::tensor::{norm2_slice, Shape, Tensor};

pub use data::LabeledDataset;
pub use forward::{forward, ForwardTrace};
pub use io::{load_model, save_model};
pub use linear::ConvGeometry;
pub(crate) use linear::LinearOp;
pub use perturb::{randomize_weights, remove_weights};
pub use train::{accuracy, train_sgd, TrainConfig};

/// Seed stream for per-layer weight draws.
const LAYER_STREAM: u64 = 0x4C41_5945;

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// Weights are an `in × out` matrix `W_l`; column `j` is neuron `j`.
    Dense { weights: Tensor, relu: bool },
    /// Kernels shaped `out_c × in_c × kh × kw`.
    Conv2d {
        weights: Tensor,
        stride: usize,
        padding: usize,
        relu: bool,
    },
    MaxPool2d { size: usize, stride: usize },
    Flatten,
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::MaxPool2d { .. } => "maxpool2d",
            Layer::Flatten => "flatten",
        }
    }

    pub fn weights(&self) -> Option<&Tensor> {
        match self {
            Layer::Dense { weights, .. } | Layer::Conv2d { weights, .. } => Some(weights),
            _ => None,
        }
    }

    pub fn has_relu(&self) -> bool {
        matches!(
            self,
            Layer::Dense { relu: true, .. } | Layer::Conv2d { relu: true, .. }
        )
    }

    pub fn is_weighted(&self) -> bool {
        self.weights().is_some()
    }

    /// Number of inputs feeding each neuron.
    pub fn fan_in(&self) -> Option<usize> {
        match self {
            Layer::Dense { weights, .. } => Some(weights.dims()[0]),
            Layer::Conv2d { weights, .. } => {
                let d = weights.dims();
                Some(d[1] * d[2] * d[3])
            }
            _ => None,
        }
    }

    /// Neuron weight vectors, one per output unit (dense) or output channel (conv).
    pub fn neuron_vectors(&self) -> Vec<Vec<f64>> {
        match self {
            Layer::Dense { weights, .. } => {
                let (n_in, n_out) = (weights.dims()[0], weights.dims()[1]);
                let w = weights.data();
                (0..n_out)
                    .map(|j| (0..n_in).map(|i| w[i * n_out + j]).collect())
                    .collect()
            }
            Layer::Conv2d { weights, .. } => {
                let out_c = weights.dims()[0];
                let q = weights.numel() / out_c;
                weights.data().chunks(q).map(|c| c.to_vec()).collect()
            }
            _ => Vec::new(),
        }
    }

    fn output_shape(&self, input: &Shape, index: usize) -> Result<Shape> {
        let bad = |msg: String| NfrError::InvalidNetwork(format!("layer {index}: {msg}"));
        match self {
            Layer::Dense { weights, .. } => {
                let d = weights.dims();
                if d.len() != 2 {
                    return Err(bad(format!("dense weights must be rank 2, got {}", weights.shape())));
                }
                if input.rank() != 1 || input.numel() != d[0] {
                    return Err(bad(format!("dense expects a ({},) input, got {input}", d[0])));
                }
                Shape::vector(d[1])
            }
            Layer::Conv2d {
                weights,
                stride,
                padding,
                ..
            } => {
                let g = conv_geometry(weights, *stride, *padding, input).map_err(bad)?;
                Shape::new(vec![g.out_c, g.out_h, g.out_w])
            }
            Layer::MaxPool2d { size, stride } => {
                if input.rank() != 3 {
                    return Err(bad(format!("maxpool expects a (C, H, W) input, got {input}")));
                }
                if *size == 0 || *stride == 0 || input.dims()[1] < *size || input.dims()[2] < *size {
                    return Err(bad(format!("pool window {size}/{stride} does not fit {input}")));
                }
                let d = input.dims();
                Shape::new(vec![
                    d[0],
                    (d[1] - size) / stride + 1,
                    (d[2] - size) / stride + 1,
                ])
            }
            Layer::Flatten => Shape::vector(input.numel()),
        }
    }
}

fn conv_geometry(
    weights: &Tensor,
    stride: usize,
    padding: usize,
    input: &Shape,
) -> std::result::Result<ConvGeometry, String> {
    let d = weights.dims();
    if d.len() != 4 {
        return Err(format!("conv kernels must be rank 4, got {}", weights.shape()));
    }
    if input.rank() != 3 || input.dims()[0] != d[1] {
        return Err(format!("conv expects a ({}, H, W) input, got {input}", d[1]));
    }
    let (h, w) = (input.dims()[1], input.dims()[2]);
    let out_h = ConvGeometry::out_extent(h, d[2], stride, padding);
    let out_w = ConvGeometry::out_extent(w, d[3], stride, padding);
    match (out_h, out_w) {
        (Some(out_h), Some(out_w)) => Ok(ConvGeometry {
            in_c: d[1],
            in_h: h,
            in_w: w,
            out_c: d[0],
            kh: d[2],
            kw: d[3],
            stride,
            padding,
            out_h,
            out_w,
        }),
        _ => Err(format!("kernel {} does not fit input {input}", weights.shape())),
    }
}

/// A layered ReLU model without bias terms.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_shape: Shape,
    shapes: Vec<Shape>,
    init: String,
}

impl Network {
    /// Validates that shapes compose and that the last layer is a dense
    /// layer without ReLU.
    pub fn new(input_shape: Shape, layers: Vec<Layer>, init: impl Into<String>) -> Result<Self> {
        if layers.is_empty() {
            return Err(NfrError::InvalidNetwork("no layers".into()));
        }
        let mut shapes = vec![input_shape.clone()];
        for (i, layer) in layers.iter().enumerate() {
            let next = layer.output_shape(shapes.last().expect("nonempty"), i + 1)?;
            shapes.push(next);
        }
        match layers.last() {
            Some(Layer::Dense { relu: false, .. }) => {}
            _ => {
                return Err(NfrError::InvalidNetwork(
                    "last layer must be dense without ReLU".into(),
                ))
            }
        }
        Ok(Network {
            layers,
            input_shape,
            shapes,
            init: init.into(),
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Layer `l`, 1-based.
    pub fn layer(&self, l: usize) -> Result<&Layer> {
        if l == 0 || l > self.layers.len() {
            return Err(NfrError::OutOfRange(format!(
                "layer {l} (network has layers 1..={})",
                self.layers.len()
            )));
        }
        Ok(&self.layers[l - 1])
    }

    /// Number of layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_shape(&self) -> &Shape {
        &self.input_shape
    }

    /// Shape of activation `A_l`, `l` in `0..=L`.
    pub fn activation_shape(&self, l: usize) -> &Shape {
        &self.shapes[l]
    }

    pub fn class_count(&self) -> usize {
        self.shapes.last().expect("nonempty").numel()
    }

    /// Free-form initialization metadata stored alongside the weights.
    pub fn init(&self) -> &str {
        &self.init
    }

    pub fn with_init(mut self, init: impl Into<String>) -> Self {
        self.init = init.into();
        self
    }

    /// 1-based indices of weighted layers.
    pub fn weighted_layers(&self) -> Vec<usize> {
        (1..=self.depth())
            .filter(|&l| self.layers[l - 1].is_weighted())
            .collect()
    }

    /// Column `k` of the final dense layer, the weight vector `v_k` producing logit `k`.
    pub fn class_weights(&self, k: usize) -> Result<Vec<f64>> {
        if k >= self.class_count() {
            return Err(NfrError::OutOfRange(format!(
                "class {k} (network has {} classes)",
                self.class_count()
            )));
        }
        let last = self.layers.last().expect("nonempty");
        Ok(last.neuron_vectors().swap_remove(k))
    }

    /// Matrix view of weighted layer `l`.
    pub(crate) fn linear_op(&self, l: usize) -> Result<LinearOp<'_>> {
        let layer = self.layer(l)?;
        match layer {
            Layer::Dense { weights, .. } => Ok(LinearOp::Dense {
                w: weights.data(),
                n_in: weights.dims()[0],
                n_out: weights.dims()[1],
            }),
            Layer::Conv2d {
                weights,
                stride,
                padding,
                ..
            } => {
                let g = conv_geometry(weights, *stride, *padding, &self.shapes[l - 1])
                    .map_err(NfrError::InvalidNetwork)?;
                Ok(LinearOp::conv(weights.data(), g))
            }
            _ => Err(NfrError::NotWeighted { index: l }),
        }
    }

    pub(crate) fn weights_mut(&mut self, l: usize) -> Option<&mut Tensor> {
        match self.layers.get_mut(l.checked_sub(1)?)? {
            Layer::Dense { weights, .. } | Layer::Conv2d { weights, .. } => Some(weights),
            _ => None,
        }
    }

    pub(crate) fn replace_layer(&self, l: usize, layer: Layer) -> Result<Network> {
        let mut layers = self.layers.clone();
        layers[l - 1] = layer;
        Network::new(self.input_shape.clone(), layers, self.init.clone())
    }
}

/// Architecture description used by the random builders and run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        out: usize,
    },
    Conv2d {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    #[serde(rename = "maxpool2d")]
    MaxPool2d {
        size: usize,
        #[serde(default)]
        stride: Option<usize>,
    },
    Flatten,
}

fn one() -> usize {
    1
}

/// Per-layer spec for a layer of the given fan-in: Gaussian std and uniform
/// half-width are divided by `√fan_in` (the uniform also by `1/√3`, matching
/// the Gaussian variance); ring radius is used as is, so ring neurons have the
/// same typical norm as Gaussian ones.
pub fn layer_dist(dist: &DistSpec, fan_in: usize, layer_index: usize) -> DistSpec {
    let f = fan_in as f64;
    let scale = match dist.kind {
        DistKind::Gaussian => dist.scale / f.sqrt(),
        DistKind::Ring => dist.scale,
        DistKind::UniformCube => dist.scale * (3.0 / f).sqrt(),
    };
    DistSpec {
        kind: dist.kind,
        scale,
        seed: derive_seed(dist.seed, LAYER_STREAM, layer_index as u64),
    }
}

/// Draw fresh weights for a layer shaped like `template`.
pub(crate) fn draw_layer_weights(template: &Layer, dist: &DistSpec, layer_index: usize) -> Result<Tensor> {
    let weights = template
        .weights()
        .ok_or(NfrError::NotWeighted { index: layer_index })?;
    let fan_in = template.fan_in().expect("weighted");
    let spec = layer_dist(dist, fan_in, layer_index);
    match template {
        Layer::Dense { .. } => {
            let (n_in, n_out) = (weights.dims()[0], weights.dims()[1]);
            let rows = sample_rows(n_out, n_in, &spec)?;
            let r = rows.data();
            let mut data = vec![0.0; n_in * n_out];
            for j in 0..n_out {
                for i in 0..n_in {
                    data[i * n_out + j] = r[j * n_in + i];
                }
            }
            Tensor::new(weights.shape().clone(), data)
        }
        _ => {
            let out_c = weights.dims()[0];
            let rows = sample_rows(out_c, fan_in, &spec)?;
            rows.reshape(weights.shape().clone())
        }
    }
}

fn init_note(dist: &DistSpec) -> String {
    format!(
        "{} scale={} seed={} per-layer=fan_in_scaled",
        dist.kind.name(),
        dist.scale,
        dist.seed
    )
}

/// Random network from an architecture description. Hidden weighted layers
/// get a ReLU; the final layer must be `dense` and stays linear.
pub fn build_random_network(input_shape: Shape, specs: &[LayerSpec], dist: &DistSpec) -> Result<Network> {
    dist.validate()?;
    if !matches!(specs.last(), Some(LayerSpec::Dense { .. })) {
        return Err(NfrError::InvalidNetwork("last layer spec must be dense".into()));
    }
    let mut shape = input_shape.clone();
    let mut layers = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let l = i + 1;
        let is_last = l == specs.len();
        let placeholder = match spec {
            LayerSpec::Dense { out } => {
                if shape.rank() != 1 {
                    return Err(NfrError::InvalidNetwork(format!(
                        "layer {l}: dense needs a flat input, got {shape}; add a flatten layer"
                    )));
                }
                Layer::Dense {
                    weights: Tensor::zeros(Shape::new(vec![shape.numel(), *out])?),
                    relu: !is_last,
                }
            }
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if shape.rank() != 3 {
                    return Err(NfrError::InvalidNetwork(format!(
                        "layer {l}: conv needs a (C, H, W) input, got {shape}"
                    )));
                }
                Layer::Conv2d {
                    weights: Tensor::zeros(Shape::new(vec![
                        *out_channels,
                        shape.dims()[0],
                        *kernel,
                        *kernel,
                    ])?),
                    stride: *stride,
                    padding: *padding,
                    relu: true,
                }
            }
            LayerSpec::MaxPool2d { size, stride } => Layer::MaxPool2d {
                size: *size,
                stride: stride.unwrap_or(*size),
            },
            LayerSpec::Flatten => Layer::Flatten,
        };
        let layer = match placeholder {
            Layer::Dense { relu, .. } => Layer::Dense {
                weights: draw_layer_weights(&placeholder, dist, l)?,
                relu,
            },
            Layer::Conv2d {
                stride,
                padding,
                relu,
                ..
            } => Layer::Conv2d {
                weights: draw_layer_weights(&placeholder, dist, l)?,
                stride,
                padding,
                relu,
            },
            other => other,
        };
        shape = layer.output_shape(&shape, l)?;
        layers.push(layer);
    }
    Network::new(input_shape, layers, init_note(dist))
}

/// Dense ReLU MLP with layer widths `dims` (input first, classes last).
pub fn build_random_mlp(dims: &[usize], dist: &DistSpec) -> Result<Network> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(NfrError::InvalidArgument(format!(
            "MLP needs at least two positive widths, got {dims:?}"
        )));
    }
    let specs: Vec<LayerSpec> = dims[1..].iter().map(|&out| LayerSpec::Dense { out }).collect();
    build_random_network(Shape::vector(dims[0])?, &specs, dist)
}

/// One-hidden-layer net (`d → n → 1`) whose `n` hidden weight vectors are
/// pairwise orthogonal with L2 norm exactly `norm`: a random orthonormal frame
/// by Gram–Schmidt on Gaussian draws, then scaled. The output layer is
/// Gaussian with std `1/√n`.
pub fn build_orthogonal_net(d: usize, n: usize, norm: f64, seed: u64) -> Result<Network> {
    if d == 0 || n == 0 {
        return Err(NfrError::InvalidArgument("d and n must be positive".into()));
    }
    if n > d {
        return Err(NfrError::Infeasible(format!(
            "{n} pairwise orthogonal vectors do not fit in {d} dimensions"
        )));
    }
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(NfrError::InvalidArgument(format!("norm must be positive, got {norm}")));
    }
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut attempt = 0u64;
    while frame.len() < n {
        let mut v = sample_gaussian(
            &Shape::vector(d)?,
            &DistSpec {
                kind: DistKind::Gaussian,
                scale: 1.0,
                seed: derive_seed(seed, LAYER_STREAM, attempt),
            },
        )?
        .into_data();
        attempt += 1;
        // two passes of modified Gram–Schmidt keep the frame orthogonal to ~1e-16
        for _ in 0..2 {
            for u in &frame {
                let c = crate::tensor::dot_slices(&v, u);
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= c * ui;
                }
            }
        }
        let len = norm2_slice(&v);
        if len < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= len);
        frame.push(v);
    }
    let mut w = vec![0.0; d * n];
    for (j, u) in frame.iter().enumerate() {
        for i in 0..d {
            w[i * n + j] = u[i] * norm;
        }
    }
    let out = sample_gaussian(
        &Shape::new(vec![n, 1])?,
        &DistSpec {
            kind: DistKind::Gaussian,
            scale: 1.0 / (n as f64).sqrt(),
            seed: derive_seed(seed, LAYER_STREAM, u64::MAX),
        },
    )?;
    Network::new(
        Shape::vector(d)?,
        vec![
            Layer::Dense {
                weights: Tensor::new(Shape::new(vec![d, n])?, w)?,
                relu: true,
            },
            Layer::Dense {
                weights: out,
                relu: false,
            },
        ],
        format!("orthogonal norm={norm} seed={seed}"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::dot_slices;

    fn gauss(seed: u64) -> DistSpec {
        DistSpec::new(DistKind::Gaussian, 1.0, seed).unwrap()
    }

    #[test]
    fn random_mlp_is_deterministic() {
        let a = build_random_mlp(&[2, 3, 2], &gauss(11)).unwrap();
        let b = build_random_mlp(&[2, 3, 2], &gauss(11)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, build_random_mlp(&[2, 3, 2], &gauss(12)).unwrap());
        assert_eq!(a.depth(), 2);
        assert!(a.layer(1).unwrap().has_relu());
        assert!(!a.layer(2).unwrap().has_relu());
        assert_eq!(a.class_count(), 2);
    }

    #[test]
    fn theorem_fixture_shape_builds() {
        let net = build_random_mlp(&[64, 2000, 1], &gauss(1)).unwrap();
        assert_eq!(net.layer(1).unwrap().weights().unwrap().dims(), &[64, 2000]);
        assert_eq!(net.class_count(), 1);
    }

    #[test]
    fn ring_neurons_share_one_norm() {
        let dist = DistSpec::new(DistKind::Ring, 1.5, 3).unwrap();
        let net = build_random_mlp(&[16, 40, 3], &dist).unwrap();
        for v in net.layer(1).unwrap().neuron_vectors() {
            assert!((norm2_slice(&v) - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_dims_are_rejected() {
        assert!(build_random_mlp(&[4], &gauss(0)).is_err());
        assert!(build_random_mlp(&[4, 0, 2], &gauss(0)).is_err());
    }

    #[test]
    fn orthogonal_net_construction() {
        let net = build_orthogonal_net(12, 7, 2.0, 5).unwrap();
        let vs = net.layer(1).unwrap().neuron_vectors();
        for (i, a) in vs.iter().enumerate() {
            assert!((norm2_slice(a) - 2.0).abs() <= 2.0e-12);
            for b in &vs[i + 1..] {
                assert!(dot_slices(a, b).abs() <= 1e-9);
            }
        }
        assert!(matches!(
            build_orthogonal_net(3, 4, 1.0, 0),
            Err(NfrError::Infeasible(_))
        ));
    }

    #[test]
    fn orthonormal_square_frame_gives_unit_preactivations() {
        let net = build_orthogonal_net(8, 8, 1.0, 2).unwrap();
        let vs = net.layer(1).unwrap().neuron_vectors();
        let x: Vec<f64> = (0..8).map(|i| vs.iter().map(|v| v[i]).sum()).collect();
        let trace = forward(&net, &Tensor::from_vec(x).unwrap()).unwrap();
        for &p in trace.pre_activation(1).unwrap().data() {
            assert!((p - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shapes_must_compose() {
        let w = Tensor::zeros(Shape::new(vec![3, 2]).unwrap());
        let bad = Network::new(
            Shape::vector(4).unwrap(),
            vec![Layer::Dense { weights: w.clone(), relu: false }],
            "",
        );
        assert!(bad.is_err());
        let relu_last = Network::new(
            Shape::vector(3).unwrap(),
            vec![Layer::Dense { weights: w, relu: true }],
            "",
        );
        assert!(relu_last.is_err());
    }

    #[test]
    fn cnn_builder_infers_shapes() {
        let specs = vec![
            LayerSpec::Conv2d { out_channels: 4, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::MaxPool2d { size: 2, stride: None },
            LayerSpec::Flatten,
            LayerSpec::Dense { out: 5 },
        ];
        let net = build_random_network(Shape::new(vec![2, 6, 6]).unwrap(), &specs, &gauss(1)).unwrap();
        assert_eq!(net.activation_shape(1).dims(), &[4, 6, 6]);
        assert_eq!(net.activation_shape(2).dims(), &[4, 3, 3]);
        assert_eq!(net.activation_shape(3).dims(), &[36]);
        assert_eq!(net.class_count(), 5);
    }
}
