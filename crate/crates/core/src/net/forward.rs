use crate::error::{NfrError, Result};
use crate::net::{Layer, Network};
use crate::tensor::{Shape, Tensor};

/// Everything a backward rule needs from one forward pass.
///
/// `activations[l]` is `A_l` for `l` in `0..=L`. Masks, pre-activations and
/// pool winners are indexed by layer number and are `None` where the layer
/// has no such quantity.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    activations: Vec<Tensor>,
    pre_activations: Vec<Option<Tensor>>,
    relu_masks: Vec<Option<Tensor>>,
    pool_argmax: Vec<Option<Vec<usize>>>,
}

impl ForwardTrace {
    pub fn input(&self) -> &Tensor {
        &self.activations[0]
    }

    pub fn logits(&self) -> &Tensor {
        self.activations.last().expect("nonempty")
    }

    pub fn depth(&self) -> usize {
        self.activations.len() - 1
    }

    /// `A_l`.
    pub fn activation(&self, l: usize) -> Result<&Tensor> {
        self.activations
            .get(l)
            .ok_or_else(|| NfrError::OutOfRange(format!("activation {l}")))
    }

    /// `Wᵀ A_{l-1}` for weighted layer `l`.
    pub fn pre_activation(&self, l: usize) -> Option<&Tensor> {
        self.pre_activations.get(l).and_then(Option::as_ref)
    }

    /// `M_l` as a 0/1 tensor shaped like `A_l`, for layers followed by ReLU.
    pub fn relu_mask(&self, l: usize) -> Option<&Tensor> {
        self.relu_masks.get(l).and_then(Option::as_ref)
    }

    /// Flat input index of the winner for every pooled output of layer `l`.
    pub fn pool_argmax(&self, l: usize) -> Option<&[usize]> {
        self.pool_argmax.get(l).and_then(|v| v.as_deref())
    }

    /// Index of the largest logit (lowest index on ties).
    pub fn predicted_class(&self) -> usize {
        self.logits().argmax()
    }
}

/// Forward pass recording activations, ReLU masks and pool winners.
pub fn forward(net: &Network, x: &Tensor) -> Result<ForwardTrace> {
    if x.shape() != net.input_shape() {
        return Err(NfrError::ShapeMismatch {
            expected: format!("input shape {}", net.input_shape()),
            got: format!("{}", x.shape()),
        });
    }
    let depth = net.depth();
    let mut trace = ForwardTrace {
        activations: Vec::with_capacity(depth + 1),
        pre_activations: vec![None; depth + 1],
        relu_masks: vec![None; depth + 1],
        pool_argmax: vec![None; depth + 1],
    };
    trace.activations.push(x.clone());
    for l in 1..=depth {
        let layer = net.layer(l)?;
        let prev = &trace.activations[l - 1];
        let out_shape = net.activation_shape(l).clone();
        let next = match layer {
            Layer::Dense { .. } | Layer::Conv2d { .. } => {
                let pre = net.linear_op(l)?.forward(prev.data());
                let pre = Tensor::new(out_shape.clone(), pre)?;
                let act = if layer.has_relu() {
                    let mask = pre.map(|v| if v > 0.0 { 1.0 } else { 0.0 })?;
                    let act = pre.zip_map(&mask, |p, m| p * m)?;
                    trace.relu_masks[l] = Some(mask);
                    act
                } else {
                    pre.clone()
                };
                trace.pre_activations[l] = Some(pre);
                act
            }
            Layer::MaxPool2d { size, stride } => {
                let (values, winners) = max_pool(prev, *size, *stride, &out_shape);
                trace.pool_argmax[l] = Some(winners);
                Tensor::new(out_shape, values)?
            }
            Layer::Flatten => prev.reshape(out_shape)?,
        };
        trace.activations.push(next);
    }
    Ok(trace)
}

/// Max pooling; ties go to the lowest flat input index.
fn max_pool(input: &Tensor, size: usize, stride: usize, out: &Shape) -> (Vec<f64>, Vec<usize>) {
    let (c, h, w) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    let (oh, ow) = (out.dims()[1], out.dims()[2]);
    let data = input.data();
    let mut values = Vec::with_capacity(c * oh * ow);
    let mut winners = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = usize::MAX;
                // row-major scan visits indices in increasing order, so strict `>` keeps the lowest
                for ky in 0..size {
                    for kx in 0..size {
                        let idx = (ch * h + oy * stride + ky) * w + ox * stride + kx;
                        if best == usize::MAX || data[idx] > data[best] {
                            best = idx;
                        }
                    }
                }
                values.push(data[best]);
                winners.push(best);
            }
        }
    }
    (values, winners)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{DistKind, DistSpec};
    use crate::net::{build_random_mlp, build_random_network, LayerSpec};
    use crate::tensor::Shape;

    fn one_unit_net() -> Network {
        // Wᵀ = [[1, -1]]: single hidden unit, then a 1x1 linear read-out
        let w1 = Tensor::new(Shape::new(vec![2, 1]).unwrap(), vec![1.0, -1.0]).unwrap();
        let w2 = Tensor::new(Shape::new(vec![1, 1]).unwrap(), vec![1.0]).unwrap();
        Network::new(
            Shape::vector(2).unwrap(),
            vec![
                Layer::Dense { weights: w1, relu: true },
                Layer::Dense { weights: w2, relu: false },
            ],
            "fixture",
        )
        .unwrap()
    }

    #[test]
    fn hand_evaluated_relu_cases() {
        let net = one_unit_net();
        let t = forward(&net, &Tensor::from_vec(vec![2.0, 3.0]).unwrap()).unwrap();
        assert_eq!(t.pre_activation(1).unwrap().data(), &[-1.0]);
        assert_eq!(t.activation(1).unwrap().data(), &[0.0]);
        assert_eq!(t.relu_mask(1).unwrap().data(), &[0.0]);

        let t = forward(&net, &Tensor::from_vec(vec![3.0, 2.0]).unwrap()).unwrap();
        assert_eq!(t.activation(1).unwrap().data(), &[1.0]);
        assert_eq!(t.relu_mask(1).unwrap().data(), &[1.0]);
        assert_eq!(t.logits().data(), &[1.0]);
    }

    #[test]
    fn zero_input_gives_zero_everything() {
        let net = build_random_mlp(&[5, 7, 3], &DistSpec::new(DistKind::Gaussian, 1.0, 1).unwrap()).unwrap();
        let t = forward(&net, &Tensor::zeros(Shape::vector(5).unwrap())).unwrap();
        for l in 0..=2 {
            assert!(t.activation(l).unwrap().is_zero());
        }
    }

    #[test]
    fn trace_invariants_hold() {
        let net = build_random_mlp(&[6, 9, 9, 4], &DistSpec::new(DistKind::Gaussian, 1.0, 4).unwrap()).unwrap();
        let x = crate::sampling::standard_normal(&Shape::vector(6).unwrap(), 8);
        let t = forward(&net, &x).unwrap();
        for l in 1..=2 {
            let a = t.activation(l).unwrap();
            let m = t.relu_mask(l).unwrap();
            let pre = t.pre_activation(l).unwrap();
            for ((&ai, &mi), &pi) in a.data().iter().zip(m.data()).zip(pre.data()) {
                assert!(ai >= 0.0);
                assert!(mi == 0.0 || mi == 1.0);
                assert_eq!(mi == 1.0, pi > 0.0);
                assert_eq!(ai, mi * pi);
            }
        }
        assert!(t.relu_mask(3).is_none());
        assert_eq!(t.logits(), t.pre_activation(3).unwrap());
    }

    #[test]
    fn wrong_input_shape_is_an_error() {
        let net = one_unit_net();
        assert!(forward(&net, &Tensor::from_vec(vec![1.0]).unwrap()).is_err());
    }

    #[test]
    fn pool_ties_go_to_lowest_index() {
        let specs = vec![
            LayerSpec::Conv2d { out_channels: 1, kernel: 1, stride: 1, padding: 0 },
            LayerSpec::MaxPool2d { size: 2, stride: None },
            LayerSpec::Flatten,
            LayerSpec::Dense { out: 1 },
        ];
        let dist = DistSpec::new(DistKind::Gaussian, 1.0, 0).unwrap();
        let net = build_random_network(Shape::new(vec![1, 2, 2]).unwrap(), &specs, &dist).unwrap();
        // force the 1x1 kernel to +1 so the pool sees the raw input
        let kernel = Tensor::new(Shape::new(vec![1, 1, 1, 1]).unwrap(), vec![1.0]).unwrap();
        let net = net
            .replace_layer(1, Layer::Conv2d { weights: kernel, stride: 1, padding: 0, relu: true })
            .unwrap();
        let x = Tensor::new(Shape::new(vec![1, 2, 2]).unwrap(), vec![2.0, 2.0, 1.0, 2.0]).unwrap();
        let t = forward(&net, &x).unwrap();
        assert_eq!(t.pool_argmax(2).unwrap(), &[0]);
        let x = Tensor::new(Shape::new(vec![1, 2, 2]).unwrap(), vec![1.0, 3.0, 2.0, 0.0]).unwrap();
        let t = forward(&net, &x).unwrap();
        assert_eq!(t.pool_argmax(2).unwrap(), &[1]);
        assert_eq!(t.activation(2).unwrap().data(), &[3.0]);
    }
}
