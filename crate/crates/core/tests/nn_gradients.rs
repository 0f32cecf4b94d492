use ets_core::gradcheck::{check_layer, layer_suite};
use ets_core::nn::{
    BatchNorm1d, Conv1d, Dense, ForwardCtx, GlobalAvgPool, Layer, Mode, Module, Relu, Sequential, StateRef,
};
use ets_core::rng::rng_for;
use ets_core::Tensor;

#[test]
fn every_layer_kind_matches_finite_differences() {
    for seed in 0..20 {
        for (name, report) in layer_suite(seed).unwrap() {
            assert!(
                report.max_rel_error < 1e-5,
                "seed {seed} {name}: rel err {:.3e} in {}",
                report.max_rel_error,
                report.worst
            );
        }
    }
}

#[test]
fn zero_upstream_gradient_gives_zero_parameter_gradients() {
    let mut rng = rng_for(9, &[]);
    let mut net = Sequential::new(vec![
        Box::new(Conv1d::new(1, 2, 3, 1, (1, 1), &mut rng).unwrap()),
        Box::new(BatchNorm1d::new(2)),
        Box::new(Relu::default()),
        Box::new(GlobalAvgPool::default()),
        Box::new(Dense::new(2, 2, &mut rng)),
    ]);
    let x = Tensor::new(vec![2, 1, 5], (0..10).map(|i| (i as f64).sin()).collect()).unwrap();
    let y = net.forward(&x, &mut ForwardCtx::eval()).unwrap();
    net.zero_grad();
    net.backward(&Tensor::zeros(y.shape())).unwrap();
    net.visit("", &mut |_, s| {
        if let StateRef::Param(p) = s {
            assert!(p.grad.data().iter().all(|&g| g == 0.0));
        }
    });
}

#[test]
fn backward_without_forward_is_an_error() {
    let mut rng = rng_for(9, &[]);
    let mut net = Sequential::new(vec![Box::new(Dense::new(2, 2, &mut rng)) as Box<dyn Layer>]);
    assert!(net.backward(&Tensor::zeros(&[1, 2])).is_err());
}

#[test]
fn frozen_layer_has_zero_gradient_but_propagates() {
    let mut rng = rng_for(10, &[]);
    let mut conv = Conv1d::new(2, 2, 3, 1, (1, 1), &mut rng).unwrap();
    conv.set_frozen(true);
    let before = conv.weight.value.clone();
    let x = Tensor::new(vec![1, 2, 5], (0..10).map(|i| i as f64 * 0.1).collect()).unwrap();
    let report = check_layer(&mut conv, &x, Mode::Train, 3, 1e-5).unwrap();
    assert!(report.max_rel_error < 1e-5);
    assert!(conv.weight.grad.data().iter().all(|&g| g == 0.0));
    assert!(conv.bias.grad.data().iter().all(|&g| g == 0.0));
    assert!(conv.weight.value.bit_eq(&before));

    let y = conv.forward(&x, &mut ForwardCtx::eval()).unwrap();
    let dx = conv.backward(&Tensor::filled(y.shape(), 1.0)).unwrap();
    assert!(dx.data().iter().any(|&g| g != 0.0));
}

#[test]
fn forward_and_backward_are_bit_deterministic() {
    let run = || {
        let mut rng = rng_for(21, &[]);
        let mut net = Sequential::new(vec![
            Box::new(Conv1d::new(2, 3, 5, 2, (2, 2), &mut rng).unwrap()),
            Box::new(BatchNorm1d::new(3)),
            Box::new(Relu::default()),
            Box::new(ets_core::nn::Dropout::new(0.2).unwrap()),
        ]);
        let x = Tensor::new(vec![2, 2, 9], (0..36).map(|i| (i as f64).cos()).collect()).unwrap();
        let mut drng = rng_for(1, &[]);
        let y = net.forward(&x, &mut ForwardCtx::train(&mut drng)).unwrap();
        let dx = net.backward(&Tensor::filled(y.shape(), 0.3)).unwrap();
        let mut grads = Vec::new();
        net.visit("", &mut |_, s| {
            if let StateRef::Param(p) = s {
                grads.extend(p.grad.data().iter().map(|v| v.to_bits()));
            }
        });
        (y, dx, grads)
    };
    let (y1, dx1, g1) = run();
    let (y2, dx2, g2) = run();
    assert!(y1.bit_eq(&y2));
    assert!(dx1.bit_eq(&dx2));
    assert_eq!(g1, g2);
}
