use crate::error::{NfrError, Result};
use crate::net::{draw_layer_weights, Layer, Network};
use crate::sampling::DistSpec;
use crate::tensor::Tensor;

fn check_weighted(net: &Network, indices: &[usize]) -> Result<()> {
    for &l in indices {
        if !net.layer(l)?.is_weighted() {
            return Err(NfrError::NotWeighted { index: l });
        }
    }
    Ok(())
}

fn with_weights(layer: &Layer, weights: Tensor) -> Layer {
    match layer {
        Layer::Dense { relu, .. } => Layer::Dense { weights, relu: *relu },
        Layer::Conv2d { stride, padding, relu, .. } => Layer::Conv2d {
            weights,
            stride: *stride,
            padding: *padding,
            relu: *relu,
        },
        other => other.clone(),
    }
}

/// Redraw the listed weighted layers from `dist` (fan-in scaled per layer,
/// as in the random builders). Unlisted layers are untouched.
pub fn randomize_weights(net: &Network, layer_indices: &[usize], dist: &DistSpec) -> Result<Network> {
    dist.validate()?;
    check_weighted(net, layer_indices)?;
    let mut out = net.clone();
    for &l in layer_indices {
        let layer = net.layer(l)?;
        let weights = draw_layer_weights(layer, dist, l)?;
        out = out.replace_layer(l, with_weights(layer, weights))?;
    }
    Ok(out)
}

/// Zero most of the listed layers' weights.
///
/// Dense: every input row past the first `ceil(keep_fraction · in_dim)` is
/// zeroed. Conv (only when `keep_fraction < 1`): each `kh × kw` kernel keeps
/// its first row and first column.
pub fn remove_weights(net: &Network, layer_indices: &[usize], keep_fraction: f64) -> Result<Network> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(NfrError::InvalidArgument(format!(
            "keep_fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    check_weighted(net, layer_indices)?;
    let mut out = net.clone();
    for &l in layer_indices {
        let layer = net.layer(l)?;
        let w = layer.weights().expect("checked weighted");
        let mut data = w.data().to_vec();
        match layer {
            Layer::Dense { .. } => {
                let (n_in, n_out) = (w.dims()[0], w.dims()[1]);
                let keep = ((keep_fraction * n_in as f64).ceil() as usize).clamp(1, n_in);
                data[keep * n_out..].iter_mut().for_each(|v| *v = 0.0);
            }
            _ if keep_fraction < 1.0 => {
                let (kh, kw) = (w.dims()[2], w.dims()[3]);
                for (idx, v) in data.iter_mut().enumerate() {
                    let ky = (idx / kw) % kh;
                    let kx = idx % kw;
                    if ky != 0 && kx != 0 {
                        *v = 0.0;
                    }
                }
            }
            _ => {}
        }
        let weights = Tensor::new(w.shape().clone(), data)?;
        out = out.replace_layer(l, with_weights(layer, weights))?;
    }
    Ok(out)
}
