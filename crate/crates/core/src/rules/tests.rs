use super::*;
use super::backstep::rect_keep;
use crate::net::{build_random_mlp, build_random_network, Layer, LayerSpec};
use crate::sampling::{standard_normal, DistKind, DistSpec};
use crate::tensor::Shape;

/// Dense layer from neuron rows (`Wᵀ`, one row per output unit).
fn dense(rows: &[&[f64]], relu: bool) -> Layer {
    let n_out = rows.len();
    let n_in = rows[0].len();
    let mut w = vec![0.0; n_in * n_out];
    for (j, row) in rows.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            w[i * n_out + j] = v;
        }
    }
    Layer::Dense { weights: Tensor::new(Shape::new(vec![n_in, n_out]).unwrap(), w).unwrap(), relu }
}

fn net_of(input: usize, layers: Vec<Layer>) -> Network {
    Network::new(Shape::vector(input).unwrap(), layers, "fixture").unwrap()
}

fn vec_t(v: &[f64]) -> Tensor {
    Tensor::from_vec(v.to_vec()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn max_rel_dev(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Hidden layer `Wᵀ = [[1, −1], [2, 0]]` on top of an identity layer, so the
/// hidden layer's input is `x` itself, then a linear read-out.
fn two_unit_fixture(x: &[f64], readout: &[&[f64]]) -> (Network, ForwardTrace) {
    let net = net_of(
        2,
        vec![dense(&[&[1.0, -1.0], &[2.0, 0.0]], true), dense(readout, false)],
    );
    let trace = forward(&net, &vec_t(x)).unwrap();
    (net, trace)
}

fn grad_rel(l: usize, v: &[f64]) -> Relevance {
    Relevance::new(l, vec_t(v), RelevanceForm::Gradient)
}

fn ratio_rel(l: usize, v: &[f64]) -> Relevance {
    Relevance::new(l, vec_t(v), RelevanceForm::Ratio)
}

#[test]
fn grad_backstep_hand_fixture() {
    // x = (2, 1): pre-activations (1, 4), both units active
    let (net, trace) = two_unit_fixture(&[2.0, 1.0], &[&[1.0, 1.0]]);
    let ctx = BackstepContext::new(&net, &trace, 1).unwrap();
    let out = backstep_grad(&ctx, &grad_rel(1, &[1.0, 1.0])).unwrap();
    assert_eq!(out.values().data(), &[3.0, -1.0]);
    assert_eq!(out.layer_index(), 0);

    // x = (−1, 0): both pre-activations ≤ 0, mask annihilates
    let (net, trace) = two_unit_fixture(&[-1.0, 0.0], &[&[1.0, 1.0]]);
    let ctx = BackstepContext::new(&net, &trace, 1).unwrap();
    let out = backstep_grad(&ctx, &grad_rel(1, &[1.0, 1.0])).unwrap();
    assert!(out.values().is_zero());
}

#[test]
fn gbp_backstep_hand_fixture() {
    let (net, trace) = two_unit_fixture(&[2.0, 1.0], &[&[1.0, 1.0]]);
    let ctx = BackstepContext::new(&net, &trace, 1).unwrap();
    let r = grad_rel(1, &[1.0, -1.0]);
    assert_eq!(backstep_gbp(&ctx, &r).unwrap().values().data(), &[1.0, -1.0]);
    assert_eq!(backstep_grad(&ctx, &r).unwrap().values().data(), &[-1.0, -1.0]);
    let pos = grad_rel(1, &[0.5, 2.0]);
    assert_eq!(backstep_gbp(&ctx, &pos).unwrap(), backstep_grad(&ctx, &pos).unwrap());
    assert!(backstep_gbp(&ctx, &grad_rel(1, &[-0.5, -2.0])).unwrap().values().is_zero());
}

#[test]
fn rectgrad_backstep_hand_fixture() {
    // x = (0.5, −1.5) gives A_1 = (2, 1)
    let (net, trace) = two_unit_fixture(&[0.5, -1.5], &[&[1.0, 1.0]]);
    assert_eq!(trace.activation(1).unwrap().data(), &[2.0, 1.0]);
    let mut ctx = BackstepContext::new(&net, &trace, 1).unwrap();
    let r = grad_rel(1, &[1.0, -3.0]);
    let out = backstep_rectgrad(&mut ctx, &r, RectThreshold::Fixed(0.0)).unwrap();
    assert_eq!(out.values().data(), &[1.0, -1.0]);
    assert_eq!(ctx.tau_value, Some(0.0));

    let out = backstep_rectgrad(&mut ctx, &r, RectThreshold::Percentile(0.0)).unwrap();
    assert_eq!(out, backstep_grad(&ctx, &r).unwrap());
    assert_eq!(ctx.tau_value, Some(f64::NEG_INFINITY));
}

#[test]
fn rectgrad_full_percentile_keeps_at_most_one() {
    let net = build_random_mlp(&[6, 30, 2], &DistSpec::new(DistKind::Gaussian, 1.0, 3).unwrap()).unwrap();
    let trace = forward(&net, &standard_normal(&Shape::vector(6).unwrap(), 4)).unwrap();
    let r = grad_rel(1, standard_normal(&Shape::vector(30).unwrap(), 5).data());
    let a = trace.activation(1).unwrap().data();
    let (keep, tau) = rect_keep(a, r.values().data(), RectThreshold::Percentile(100.0));
    assert!(keep.iter().filter(|&&k| k).count() <= 1);
    let s_max = a.iter().zip(r.values().data()).map(|(a, r)| a * r).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(tau, s_max);
}

#[test]
fn percentile_is_nearest_rank() {
    let v = [5.0, 1.0, 4.0, 2.0, 3.0];
    assert_eq!(nearest_rank_percentile(&v, 0.0), f64::NEG_INFINITY);
    assert_eq!(nearest_rank_percentile(&v, 20.0), 1.0);
    assert_eq!(nearest_rank_percentile(&v, 21.0), 2.0);
    assert_eq!(nearest_rank_percentile(&v, 90.0), 5.0);
    assert_eq!(nearest_rank_percentile(&v, 100.0), 5.0);
}

#[test]
fn z_backstep_hand_fixture() {
    // A_prev = (1, 2), Wᵀ = [[1, 1], [1, −1]] gives A_1 = (3, 0)
    let net = net_of(2, vec![dense(&[&[1.0, 1.0], &[1.0, -1.0]], true), dense(&[&[1.0, 1.0]], false)]);
    let trace = forward(&net, &vec_t(&[1.0, 2.0])).unwrap();
    assert_eq!(trace.activation(1).unwrap().data(), &[3.0, 0.0]);
    let ctx = BackstepContext::new(&net, &trace, 1).unwrap();
    let out = backstep_z(&ctx, &ratio_rel(1, &[3.0, 0.0]), 1e-9).unwrap();
    assert!(close(out.values().data(), &[1.0, 2.0], 1e-15));
    assert!(backstep_z(&ctx, &ratio_rel(1, &[0.0, 0.0]), 1e-9).unwrap().values().is_zero());
}

#[test]
fn z_family_rejects_gradient_form() {
    let (net, trace) = two_unit_fixture(&[2.0, 1.0], &[&[1.0, 1.0]]);
    let ctx = BackstepContext::new(&net, &trace, 1).unwrap();
    assert!(backstep_z(&ctx, &grad_rel(1, &[1.0, 1.0]), 1e-9).is_err());
    assert!(backstep_grad(&ctx, &ratio_rel(1, &[1.0, 1.0])).is_err());
    assert!(backstep_grad(&ctx, &grad_rel(0, &[1.0, 1.0])).is_err());
    assert!(backstep_grad(&ctx, &grad_rel(1, &[1.0, 1.0, 1.0])).is_err());
}

#[test]
fn zplus_backstep_hand_fixture() {
    // single unit Wᵀ = [[1, −1]] with A_prev = (1, 2)
    let net = net_of(2, vec![dense(&[&[1.0, -1.0]], false)]);
    let trace = forward(&net, &vec_t(&[1.0, 2.0])).unwrap();
    let mut ctx = BackstepContext::new(&net, &trace, 1).unwrap();
    let out = backstep_zplus(&mut ctx, &ratio_rel(1, &[5.0]), 1e-9).unwrap();
    assert_eq!(out.values().data(), &[5.0, 0.0]);
    assert_eq!(out.dropped(), 0.0);
    // γ = A_1 / Σ z⁺ = −1 / 1 is not positive here, but the column has positive z
    assert_eq!(ctx.gamma.as_deref(), Some(&[-1.0][..]));
}

#[test]
fn zplus_drops_columns_without_positive_z() {
    let net = net_of(2, vec![dense(&[&[-1.0, -1.0]], false)]);
    let trace = forward(&net, &vec_t(&[1.0, 2.0])).unwrap();
    let mut ctx = BackstepContext::new(&net, &trace, 1).unwrap();
    let out = backstep_zplus(&mut ctx, &ratio_rel(1, &[5.0]), 1e-9).unwrap();
    assert!(out.values().is_zero());
    assert_eq!(out.dropped(), 5.0);
}

#[test]
fn zb_backstep_hand_fixture() {
    let net = net_of(2, vec![dense(&[&[1.0, 1.0]], false)]);
    let trace = forward(&net, &vec_t(&[1.0, -1.0])).unwrap();
    let ctx = BackstepContext::new(&net, &trace, 1).unwrap();
    let r = ratio_rel(1, &[4.0]);
    let out = backstep_zb(&ctx, &r, &[-1.0, -1.0], &[1.0, 1.0], 1e-9).unwrap();
    assert!(close(out.values().data(), &[4.0, 0.0], 1e-15));
    assert!(backstep_zb(&ctx, &ratio_rel(1, &[0.0]), &[-1.0, -1.0], &[1.0, 1.0], 1e-9)
        .unwrap()
        .values()
        .is_zero());
    assert!(backstep_zb(&ctx, &r, &[-1.0], &[1.0], 1e-9).is_err());
}

#[test]
fn zb_with_zero_lower_bound_and_positive_weights_is_zplus() {
    let net = net_of(3, vec![dense(&[&[1.0, 2.0, 0.5], &[0.3, 0.1, 2.0]], false)]);
    let trace = forward(&net, &vec_t(&[0.2, 1.0, 0.7])).unwrap();
    let mut ctx = BackstepContext::new(&net, &trace, 1).unwrap();
    let r = ratio_rel(1, &[1.5, -0.5]);
    let zb = backstep_zb(&ctx, &r, &[0.0; 3], &[5.0; 3], 1e-9).unwrap();
    let zp = backstep_zplus(&mut ctx, &r, 1e-9).unwrap();
    assert!(close(zb.values().data(), zp.values().data(), 1e-15));
}

/// Direct evaluation of the αβ redistribution from its definition.
fn alphabeta_oracle(w_rows: &[Vec<f64>], a: &[f64], r: &[f64], alpha: f64, beta: f64) -> Vec<f64> {
    let n_in = a.len();
    let mut out = vec![0.0; n_in];
    for (j, row) in w_rows.iter().enumerate() {
        let z: Vec<f64> = (0..n_in).map(|i| row[i] * a[i]).collect();
        let zp: f64 = z.iter().map(|v| v.max(0.0)).sum();
        let zn: f64 = z.iter().map(|v| v.min(0.0)).sum();
        for i in 0..n_in {
            let mut share = 0.0;
            if zp != 0.0 {
                share += alpha * z[i].max(0.0) / zp;
            }
            if zn != 0.0 {
                share -= beta * z[i].min(0.0) / zn;
            }
            out[i] += share * r[j];
        }
    }
    out
}

#[test]
fn alphabeta_matches_direct_evaluation() {
    let rows: Vec<Vec<f64>> = vec![vec![1.0, -2.0, 0.5], vec![-1.0, 1.5, 2.0], vec![0.3, 0.2, -0.7]];
    let row_refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let net = net_of(3, vec![dense(&row_refs, false)]);
    let x = [1.0, 0.5, 2.0];
    let trace = forward(&net, &vec_t(&x)).unwrap();
    let ctx = BackstepContext::new(&net, &trace, 1).unwrap();
    let r = [1.0, -2.0, 0.5];
    let out = backstep_alphabeta(&ctx, &ratio_rel(1, &r), 2.0, 1.0, 1e-12).unwrap();
    let expected = alphabeta_oracle(&rows, &x, &r, 2.0, 1.0);
    assert!(close(out.values().data(), &expected, 1e-12), "{:?} vs {expected:?}", out.values().data());
    // α − β = 1 keeps the sum
    assert!((out.values().sum() - r.iter().sum::<f64>()).abs() < 1e-12);
}

#[test]
fn alphabeta_reductions() {
    let net = build_random_mlp(&[5, 7, 3], &DistSpec::new(DistKind::Gaussian, 1.0, 9).unwrap()).unwrap();
    let trace = forward(&net, &standard_normal(&Shape::vector(5).unwrap(), 1)).unwrap();
    let mut ctx = BackstepContext::new(&net, &trace, 1).unwrap();
    let r = ratio_rel(1, trace.activation(1).unwrap().data());
    let ab = backstep_alphabeta(&ctx, &r, 1.0, 0.0, 1e-9).unwrap();
    let zp = backstep_zplus(&mut ctx, &r, 1e-9).unwrap();
    assert_eq!(ab.values(), zp.values());

    // nonnegative inputs and weights: z⁺ = z
    let pos = net_of(3, vec![dense(&[&[1.0, 2.0, 0.5], &[0.3, 0.1, 2.0]], false)]);
    let trace = forward(&pos, &vec_t(&[0.2, 1.0, 0.7])).unwrap();
    let ctx = BackstepContext::new(&pos, &trace, 1).unwrap();
    let r = ratio_rel(1, &[1.0, 2.0]);
    let ab = backstep_alphabeta(&ctx, &r, 1.0, 0.0, 1e-9).unwrap();
    let z = backstep_z(&ctx, &r, 1e-9).unwrap();
    assert!(close(ab.values().data(), z.values().data(), 1e-15));
}

#[test]
fn max_pool_routes_to_the_winner() {
    let specs = vec![
        LayerSpec::Conv2d { out_channels: 1, kernel: 1, stride: 1, padding: 0 },
        LayerSpec::MaxPool2d { size: 2, stride: None },
        LayerSpec::Flatten,
        LayerSpec::Dense { out: 1 },
    ];
    let net = build_random_network(
        Shape::new(vec![1, 2, 2]).unwrap(),
        &specs,
        &DistSpec::new(DistKind::Gaussian, 1.0, 0).unwrap(),
    )
    .unwrap();
    let kernel = Tensor::new(Shape::new(vec![1, 1, 1, 1]).unwrap(), vec![1.0]).unwrap();
    let net = net
        .replace_layer(1, Layer::Conv2d { weights: kernel, stride: 1, padding: 0, relu: true })
        .unwrap();
    let x = Tensor::new(Shape::new(vec![1, 2, 2]).unwrap(), vec![1.0, 3.0, 2.0, 0.0]).unwrap();
    let trace = forward(&net, &x).unwrap();
    let r = Relevance::new(2, Tensor::new(Shape::new(vec![1, 1, 1]).unwrap(), vec![5.0]).unwrap(), RelevanceForm::Gradient);
    let out = backstep_structural(&net, &trace, &r).unwrap();
    assert_eq!(out.values().data(), &[0.0, 5.0, 0.0, 0.0]);
    assert_eq!(out.values().dims(), &[1, 2, 2]);
}

fn random_mlp(seed: u64, dims: &[usize]) -> Network {
    build_random_mlp(dims, &DistSpec::new(DistKind::Gaussian, 1.0, seed).unwrap()).unwrap()
}

/// Smallest |pre-activation| over all ReLU units.
fn kink_margin(net: &Network, trace: &ForwardTrace) -> f64 {
    (1..=net.depth())
        .filter(|&l| net.layer(l).unwrap().has_relu())
        .flat_map(|l| trace.pre_activation(l).unwrap().data().to_vec())
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

fn finite_difference_gradient(net: &Network, x: &Tensor, k: usize, h: f64) -> Vec<f64> {
    (0..x.numel())
        .map(|i| {
            let mut plus = x.data().to_vec();
            let mut minus = x.data().to_vec();
            plus[i] += h;
            minus[i] -= h;
            let fp = forward(net, &Tensor::new(x.shape().clone(), plus).unwrap()).unwrap().logits().data()[k];
            let fm = forward(net, &Tensor::new(x.shape().clone(), minus).unwrap()).unwrap().logits().data()[k];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

#[test]
fn grad_matches_finite_differences() {
    for seed in 0..10 {
        let net = random_mlp(seed, &[8, 16, 12, 3]);
        let mut input_seed = seed * 1000;
        let (x, trace) = loop {
            let x = standard_normal(&Shape::vector(8).unwrap(), input_seed);
            let trace = forward(&net, &x).unwrap();
            if kink_margin(&net, &trace) > 1e-3 {
                break (x, trace);
            }
            input_seed += 1;
        };
        for k in 0..3 {
            let g = backprop(&net, &trace, &RuleSpec::new(RuleKind::Grad), k, 0).unwrap();
            let fd = finite_difference_gradient(&net, &x, k, 1e-5);
            assert!(max_rel_dev(g.values().data(), &fd) <= 1e-4);
        }
    }
}

#[test]
fn z_rule_equals_gradient_times_activation_at_every_layer() {
    for seed in 0..20 {
        let net = random_mlp(seed, &[10, 12, 9, 4]);
        let trace = forward(&net, &standard_normal(&Shape::vector(10).unwrap(), seed + 50)).unwrap();
        let k = trace.predicted_class();
        let z = RuleSpec::new(RuleKind::LrpZ);
        let g = RuleSpec::new(RuleKind::Grad);
        let (zpath, _) = propagate_path(&net, &trace, &z, seed_relevance(&trace, &z, k).unwrap(), 0).unwrap();
        let (gpath, _) = propagate_path(&net, &trace, &g, seed_relevance(&trace, &g, k).unwrap(), 0).unwrap();
        for (zr, gr) in zpath.iter().zip(&gpath) {
            let a = trace.activation(zr.layer_index()).unwrap();
            let expected: Vec<f64> = gr
                .values()
                .data()
                .iter()
                .zip(a.data())
                .map(|(g, a)| g * a)
                .collect();
            assert!(max_rel_dev(zr.values().data(), &expected) <= 1e-8);
        }
    }
}

#[test]
fn lrp_z_attribution_equals_gradient_times_input() {
    for seed in 0..20 {
        let net = random_mlp(seed, &[10, 12, 9, 4]);
        let x = standard_normal(&Shape::vector(10).unwrap(), seed + 7);
        let k = forward(&net, &x).unwrap().predicted_class();
        let z = attribute(&net, &x, &RuleSpec::new(RuleKind::LrpZ), k).unwrap();
        let gi = attribute(&net, &x, &RuleSpec::new(RuleKind::GradInput), k).unwrap();
        assert!(max_rel_dev(z.values.data(), gi.values.data()) <= 1e-8);
        assert_eq!(z.seed, SeedKind::LogitValue);
        assert_eq!(gi.seed, SeedKind::UnitVector);
    }
}

#[test]
fn conservation_for_z_and_zplus() {
    for seed in 0..10 {
        let net = random_mlp(seed, &[6, 10, 8, 3]);
        let x = standard_normal(&Shape::vector(6).unwrap(), seed).map(f64::abs).unwrap();
        let trace = forward(&net, &x).unwrap();
        for kind in [RuleKind::LrpZ, RuleKind::Zplus] {
            let rule = RuleSpec::new(kind);
            let seed_r = seed_relevance(&trace, &rule, 0).unwrap();
            let total = seed_r.values().sum();
            let (path, _) = propagate_path(&net, &trace, &rule, seed_r, 0).unwrap();
            for r in &path {
                let s = r.values().sum() + r.dropped();
                assert!((s - total).abs() <= 1e-9 * total.abs().max(1.0), "{kind:?} layer {}", r.layer_index());
            }
        }
    }
}

#[test]
fn gbp_equals_grad_when_relevance_stays_nonnegative() {
    // nonnegative weights keep every gradient-form relevance nonnegative
    let dist = DistSpec::new(DistKind::UniformCube, 1.0, 2).unwrap();
    let net = build_random_mlp(&[5, 8, 6, 2], &dist).unwrap();
    let mut layers = net.layers().to_vec();
    for layer in layers.iter_mut() {
        if let Layer::Dense { weights, relu } = layer {
            *layer = Layer::Dense { weights: weights.map(f64::abs).unwrap(), relu: *relu };
        }
    }
    let net = Network::new(net.input_shape().clone(), layers, "abs").unwrap();
    let x = standard_normal(&Shape::vector(5).unwrap(), 3);
    let gbp = attribute(&net, &x, &RuleSpec::new(RuleKind::Gbp), 0).unwrap();
    let grad = attribute(&net, &x, &RuleSpec::new(RuleKind::Grad), 0).unwrap();
    assert_eq!(gbp.values, grad.values);
}

#[test]
fn bottom_processes() {
    let x = vec_t(&[1.0, -2.0, 3.0]);
    let r0 = grad_rel(0, &[2.0, 1.0, -1.0]);
    let gbp = RuleSpec::new(RuleKind::Gbp);
    assert_eq!(bottom(&gbp, &r0, &x).unwrap(), r0.values().clone());
    assert_eq!(bottom(&RuleSpec::new(RuleKind::Grad), &r0, &x).unwrap(), r0.values().clone());
    assert_eq!(bottom(&RuleSpec::new(RuleKind::GradInput), &r0, &x).unwrap().data(), &[2.0, -2.0, -3.0]);
    assert_eq!(bottom(&RuleSpec::new(RuleKind::RectGrad), &r0, &x).unwrap().data(), &[2.0, 0.0, 0.0]);
    let neg = grad_rel(0, &[-1.0, 1.0, -1.0]);
    assert!(bottom(&RuleSpec::new(RuleKind::RectGrad), &neg, &x).unwrap().is_zero());
    let zero_x = Tensor::zeros(Shape::vector(3).unwrap());
    assert!(bottom(&RuleSpec::new(RuleKind::GradInput), &r0, &zero_x).unwrap().is_zero());
    let ratio = ratio_rel(0, &[0.5, 0.5, 0.5]);
    assert_eq!(bottom(&RuleSpec::new(RuleKind::Zplus), &ratio, &x).unwrap(), ratio.values().clone());
    assert!(bottom(&gbp, &ratio, &x).is_err());
    assert!(bottom(&gbp, &grad_rel(1, &[1.0, 1.0, 1.0]), &x).is_err());
}

#[test]
fn attribute_is_the_three_step_pipeline() {
    let net = random_mlp(4, &[6, 9, 3]);
    let x = standard_normal(&Shape::vector(6).unwrap(), 2);
    for kind in RuleKind::ALL {
        let rule = RuleSpec::new(kind);
        let trace = forward(&net, &x).unwrap();
        let r0 = backprop(&net, &trace, &rule, 1, 0).unwrap();
        let manual = apply_bottom(&rule, &r0, &x, 1).unwrap();
        let direct = attribute(&net, &x, &rule, 1).unwrap();
        assert_eq!(manual, direct);
        assert_eq!(direct.values.shape(), x.shape());
    }
}

#[test]
fn invalid_class_and_stop_layer() {
    let net = random_mlp(4, &[6, 9, 3]);
    let trace = forward(&net, &standard_normal(&Shape::vector(6).unwrap(), 2)).unwrap();
    let g = RuleSpec::new(RuleKind::Grad);
    assert!(backprop(&net, &trace, &g, 3, 0).is_err());
    assert!(backprop(&net, &trace, &g, 0, 3).is_err());
    assert_eq!(backprop(&net, &trace, &g, 0, 2).unwrap().layer_index(), 2);
}

#[test]
fn grad_and_lrp_z_agree_on_a_cnn() {
    let specs = vec![
        LayerSpec::Conv2d { out_channels: 3, kernel: 3, stride: 1, padding: 1 },
        LayerSpec::MaxPool2d { size: 2, stride: None },
        LayerSpec::Conv2d { out_channels: 4, kernel: 2, stride: 1, padding: 0 },
        LayerSpec::Flatten,
        LayerSpec::Dense { out: 3 },
    ];
    let dist = DistSpec::new(DistKind::Gaussian, 1.0, 8).unwrap();
    let net = build_random_network(Shape::new(vec![2, 6, 6]).unwrap(), &specs, &dist).unwrap();
    let x = standard_normal(&Shape::new(vec![2, 6, 6]).unwrap(), 3);
    let trace = forward(&net, &x).unwrap();
    let k = trace.predicted_class();
    let z = attribute(&net, &x, &RuleSpec::new(RuleKind::LrpZ), k).unwrap();
    let gi = attribute(&net, &x, &RuleSpec::new(RuleKind::GradInput), k).unwrap();
    assert!(max_rel_dev(z.values.data(), gi.values.data()) <= 1e-8);

    if kink_margin(&net, &trace) > 1e-4 {
        let g = backprop(&net, &trace, &RuleSpec::new(RuleKind::Grad), k, 0).unwrap();
        let fd = finite_difference_gradient(&net, &x, k, 1e-6);
        assert!(max_rel_dev(g.values().data(), &fd) <= 1e-4);
    }
}

#[test]
fn dtd_runs_zb_at_the_input_layer() {
    let net = random_mlp(6, &[5, 8, 3]);
    let x = standard_normal(&Shape::vector(5).unwrap(), 1);
    let trace = forward(&net, &x).unwrap();
    let k = trace.predicted_class();
    let rule = RuleSpec::dtd(vec![-10.0], vec![10.0]).unwrap();
    let r0 = backprop(&net, &trace, &rule, k, 0).unwrap();
    let r1 = backprop(&net, &trace, &rule, k, 1).unwrap();
    let zp1 = backprop(&net, &trace, &RuleSpec::new(RuleKind::Zplus), k, 1).unwrap();
    assert_eq!(r1.values(), zp1.values());
    let ctx = BackstepContext::new(&net, &trace, 1).unwrap();
    let manual = backstep_zb(&ctx, &r1, &[-10.0; 5], &[10.0; 5], rule.epsilon).unwrap();
    assert_eq!(r0.values(), manual.values());
    let a = attribute(&net, &x, &rule, k).unwrap();
    assert_eq!(&a.values, r0.values());
    assert!(attribute(&net, &x, &RuleSpec::dtd(vec![0.0], vec![0.1]).unwrap(), k).is_err());
}

#[test]
fn nfr_hand_fixture() {
    // x = (2, 1): A_1 = (1, 4); readout v = (1, −1) makes r_1 = (1, −1)
    let (net, trace) = two_unit_fixture(&[2.0, 1.0], &[&[1.0, -1.0]]);
    let report = nfr_check(&net, &trace, &RuleSpec::new(RuleKind::Gbp), 0).unwrap();
    assert_eq!(report.layers.len(), 1);
    let rec = &report.layers[0];
    assert_eq!(rec.layer_index, 1);
    // rhs = ⟨x, W r⟩ = ⟨(2,1), (−1,−1)⟩, lhs = ⟨(2,1), W(1,0)⟩ = ⟨(2,1), (1,−1)⟩
    assert_eq!(rec.rhs, -3.0);
    assert_eq!(rec.lhs, 1.0);
    assert_eq!(rec.gain, 4.0);
    assert!(rec.holds && !rec.noop);
    assert_eq!(rec.decomposition_error, 0.0);
}

#[test]
fn nfr_noop_when_relevance_is_positive() {
    let (net, trace) = two_unit_fixture(&[2.0, 1.0], &[&[1.0, 2.0]]);
    let report = nfr_check(&net, &trace, &RuleSpec::new(RuleKind::Gbp), 0).unwrap();
    let rec = &report.layers[0];
    assert!(rec.noop && rec.holds);
    assert_eq!(rec.lhs, rec.rhs);
}

#[test]
fn nfr_rejects_other_rules() {
    let (net, trace) = two_unit_fixture(&[2.0, 1.0], &[&[1.0, 2.0]]);
    for kind in [RuleKind::Grad, RuleKind::LrpZ, RuleKind::Dtd] {
        assert!(matches!(
            nfr_check(&net, &trace, &RuleSpec::new(kind), 0),
            Err(NfrError::UnsupportedRule(_))
        ));
    }
}

#[test]
fn nfr_holds_on_random_nets() {
    let rules = [
        RuleSpec::new(RuleKind::Gbp),
        RuleSpec::new(RuleKind::Zplus),
        RuleSpec::rectgrad_tau(0.0),
        RuleSpec::rectgrad(0.0).unwrap(),
    ];
    for seed in 0..20 {
        let net = random_mlp(seed, &[12, 16, 16, 10, 4]);
        let trace = forward(&net, &standard_normal(&Shape::vector(12).unwrap(), seed + 99)).unwrap();
        let k = trace.logits().argmax();
        assert!(trace.logits().data()[k] > 0.0);
        for rule in &rules {
            let report = nfr_check(&net, &trace, rule, k).unwrap();
            assert_eq!(report.layers.len(), 3);
            assert!(report.all_hold(), "{} seed {seed}: {:?}", rule.label(), report.layers);
            for rec in &report.layers {
                let scale = rec.rhs.abs().max(1.0);
                assert!(rec.decomposition_error <= 1e-12 * scale);
                assert!((rec.lhs - rec.rhs - rec.gain).abs() <= 1e-9 * scale);
            }
        }
    }
}

#[test]
fn nfr_csv_has_header() {
    let (net, trace) = two_unit_fixture(&[2.0, 1.0], &[&[1.0, -1.0]]);
    let report = nfr_check(&net, &trace, &RuleSpec::new(RuleKind::Gbp), 0).unwrap();
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("layer_index,lhs,rhs,noop,holds,"));
    assert!(text.contains("\n1,1.0,-3.0,false,true,"));
}
