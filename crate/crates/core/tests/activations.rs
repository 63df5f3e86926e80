//! NG wrapper invariants and finite-difference checks of every gradient path.

use ngen_core::activations::{
    ng_backward_input, ng_forward, ng_grad_t, prelu_grad_a, selu_forward, BaseActivation,
    Granularity, NgActivation, SELU_ALPHA, SELU_LAMBDA,
};
use ngen_core::{Error, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn bases() -> Vec<BaseActivation> {
    vec![
        BaseActivation::Identity,
        BaseActivation::Relu,
        BaseActivation::leaky_relu(),
        BaseActivation::Prelu,
        BaseActivation::selu(),
    ]
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Batch-mean probe loss `(1/N) Σ r ⊙ NG(x)`.
fn probe(act: &NgActivation, x: &Tensor, r: &Tensor, slopes: Option<&Tensor>) -> f64 {
    let n = x.shape()[0] as f64;
    let y = ng_forward(act, x, slopes).unwrap();
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>() / n
}

fn far_from_kinks(act: &NgActivation, x: &Tensor) -> bool {
    let c = x.shape()[1];
    let spatial = x.len() / (x.shape()[0] * c);
    x.data().iter().enumerate().all(|(i, &v)| {
        let t = match act.granularity {
            Granularity::LayerWise => act.t.data()[0],
            Granularity::ChannelWise => act.t.data()[(i / spatial) % c],
            Granularity::ElementWise => act.t.data()[i % (c * spatial)],
        };
        (v - t).abs() > 1e-3
    })
}

#[test]
fn all_gradients_match_central_differences() {
    let grans = [Granularity::ElementWise, Granularity::ChannelWise, Granularity::LayerWise];
    let mut checked = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for base in bases() {
            for gran in grans {
                let features = [3, 2, 2];
                let mut act = NgActivation::new(base, gran, &features, 0.0, true).unwrap();
                for t in act.t.data_mut() {
                    *t = rng.random_range(-1.0..1.0);
                }
                let x = random(&mut rng, &[4, 3, 2, 2]);
                if !far_from_kinks(&act, &x) {
                    continue;
                }
                let slopes = Tensor::new(&[3], vec![0.1, 0.25, 0.4]).unwrap();
                let slopes = base.is_prelu().then_some(&slopes);
                let r = random(&mut rng, x.shape());
                let n = x.shape()[0] as f64;

                let gi = ng_backward_input(&act, &x, &r, slopes).unwrap();
                for j in 0..x.len() {
                    let mut p = x.clone();
                    p.data_mut()[j] += H;
                    let mut m = x.clone();
                    m.data_mut()[j] -= H;
                    // per-sample gradient: undo the 1/N of the probe
                    let fd = n * (probe(&act, &p, &r, slopes) - probe(&act, &m, &r, slopes)) / (2.0 * H);
                    assert!(rel_err(gi.data()[j], fd) < 1e-4, "{base:?} {gran:?} input {j}");
                }

                let gt = ng_grad_t(&act, &x, &r, slopes).unwrap();
                for j in 0..act.t.len() {
                    let mut p = act.clone();
                    p.t.data_mut()[j] += H;
                    let mut m = act.clone();
                    m.t.data_mut()[j] -= H;
                    let fd = (probe(&p, &x, &r, slopes) - probe(&m, &x, &r, slopes)) / (2.0 * H);
                    assert!(rel_err(gt.data()[j], fd) < 1e-4, "{base:?} {gran:?} t {j}");
                }

                if let Some(s) = slopes {
                    let ga = prelu_grad_a(&act, &x, &r, s).unwrap();
                    for j in 0..3 {
                        let mut p = s.clone();
                        p.data_mut()[j] += H;
                        let mut m = s.clone();
                        m.data_mut()[j] -= H;
                        let fd = (probe(&act, &x, &r, Some(&p)) - probe(&act, &x, &r, Some(&m))) / (2.0 * H);
                        assert!(rel_err(ga.data()[j], fd) < 1e-4, "{gran:?} slope {j}");
                    }
                }
                checked += 1;
            }
        }
    }
    assert!(checked > 200, "only {checked} configurations away from kinks");
}

#[test]
fn relu_kink_conventions() {
    let act = NgActivation::scalar(BaseActivation::Relu, 0.5, true);
    let x = Tensor::new(&[1, 3], vec![0.5, 0.2, 0.9]).unwrap();
    let ones = Tensor::full(&[1, 3], 1.0);
    let gi = ng_backward_input(&act, &x, &ones, None).unwrap();
    assert_eq!(gi.data(), &[1.0, 0.0, 1.0]);
    // x == t is on the inactive side for the shift
    let gt = ng_grad_t(&act, &x, &ones, None).unwrap();
    assert_eq!(gt.data(), &[2.0]);
}

#[test]
fn frozen_shift_has_zero_gradient() {
    let act = NgActivation::scalar(BaseActivation::Relu, -1.0, false);
    let x = Tensor::new(&[2, 2], vec![-3.0, 0.0, -2.0, 1.0]).unwrap();
    let g = ng_grad_t(&act, &x, &Tensor::full(&[2, 2], 1.0), None).unwrap();
    assert_eq!(g.data(), &[0.0]);
}

#[test]
fn slope_gradient_requires_prelu() {
    let act = NgActivation::scalar(BaseActivation::Relu, 0.0, true);
    let x = Tensor::full(&[1, 2], 1.0);
    let err = prelu_grad_a(&act, &x, &x, &Tensor::full(&[2], 0.25)).unwrap_err();
    assert!(matches!(err, Error::Unsupported(_)));
}

#[test]
fn shift_shape_mismatch_is_rejected() {
    let act = NgActivation::new(BaseActivation::Relu, Granularity::ChannelWise, &[4], -1.0, true).unwrap();
    let x = Tensor::zeros(&[2, 3]);
    assert!(matches!(ng_forward(&act, &x, None), Err(Error::Shape(_))));
}

#[test]
fn selu_constants_and_values() {
    let x = Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
    let y = selu_forward(&x);
    let want_neg = SELU_LAMBDA * SELU_ALPHA * ((-1.0f64).exp() - 1.0);
    assert!((y.data()[0] - want_neg).abs() < 1e-15);
    assert_eq!(y.data()[1], 0.0);
    assert!((y.data()[2] - 2.0 * SELU_LAMBDA).abs() < 1e-15);
    assert!((SELU_LAMBDA * SELU_ALPHA - 1.758_099_340_847_376_6).abs() < 1e-15);
}

fn base_strategy() -> impl Strategy<Value = BaseActivation> {
    prop_oneof![
        Just(BaseActivation::Relu),
        Just(BaseActivation::leaky_relu()),
        Just(BaseActivation::selu()),
        Just(BaseActivation::Identity),
    ]
}

fn single(base: BaseActivation, t: f64, x: f64) -> f64 {
    let act = NgActivation::scalar(base, t, true);
    ng_forward(&act, &Tensor::new(&[1, 1], vec![x]).unwrap(), None).unwrap().data()[0]
}

proptest! {
    #[test]
    fn linear_above_the_shift(base in base_strategy(), t in -5.0..5.0f64, d in 0.0..10.0f64) {
        let x = t + d;
        let slope = match base {
            BaseActivation::Selu { lambda, .. } => lambda,
            _ => 1.0,
        };
        let want = t + slope * d;
        prop_assert!((single(base, t, x) - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn piecewise_linear_region_is_exact(seed in 0u64..1000, t in -3.0..3.0f64, which in 0usize..3) {
        let base = [BaseActivation::Relu, BaseActivation::leaky_relu(), BaseActivation::Prelu][which];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::new(&[3, 2], (0..6).map(|_| t + rng.random_range(1e-6..4.0)).collect()).unwrap();
        let g = random(&mut rng, &[3, 2]);
        let slopes = Tensor::full(&[2], 0.25);
        let slopes = base.is_prelu().then_some(&slopes);
        let act = NgActivation::new(base, Granularity::LayerWise, &[2], t, true).unwrap();
        prop_assert_eq!(&ng_forward(&act, &x, slopes).unwrap(), &x);
        prop_assert_eq!(&ng_backward_input(&act, &x, &g, slopes).unwrap(), &g);
        let gt = ng_grad_t(&act, &x, &g, slopes).unwrap();
        prop_assert_eq!(gt.data(), &[0.0]);
    }

    #[test]
    fn relu_shift_is_max(t in -5.0..5.0f64, x in -10.0..10.0f64) {
        prop_assert_eq!(single(BaseActivation::Relu, t, x), x.max(t));
    }

    #[test]
    fn relu_output_never_below_shift(t in -5.0..5.0f64, x in -10.0..10.0f64) {
        prop_assert!(single(BaseActivation::Relu, t, x) >= t);
    }

    #[test]
    fn continuous_at_the_shift(base in base_strategy(), t in -5.0..5.0f64) {
        let left = single(base, t, t - 1e-9);
        let right = single(base, t, t + 1e-9);
        prop_assert!((left - right).abs() < 1e-8);
        prop_assert!((single(base, t, t) - t).abs() < 1e-12);
    }

    #[test]
    fn translation_equivariance(base in base_strategy(), t in -3.0..3.0f64, x in -5.0..5.0f64, c in -3.0..3.0f64) {
        let shifted = single(base, t + c, x + c);
        prop_assert!((shifted - (single(base, t, x) + c)).abs() < 1e-9);
    }

    #[test]
    fn zero_shift_recovers_base(base in base_strategy(), x in -5.0..5.0f64) {
        prop_assert_eq!(single(base, 0.0, x), base.eval(x, 0.0));
    }

    #[test]
    fn granularities_agree_on_uniform_shift(seed in 0u64..1000, t in -2.0..2.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[2, 3, 2, 2]);
        let r = random(&mut rng, &[2, 3, 2, 2]);
        let mut outs = Vec::new();
        let mut shift_sums = Vec::new();
        for gran in [Granularity::ElementWise, Granularity::ChannelWise, Granularity::LayerWise] {
            let act = NgActivation::new(BaseActivation::Relu, gran, &[3, 2, 2], t, true).unwrap();
            outs.push(ng_forward(&act, &x, None).unwrap());
            shift_sums.push(ng_grad_t(&act, &x, &r, None).unwrap().data().iter().sum::<f64>());
        }
        prop_assert_eq!(&outs[0], &outs[1]);
        prop_assert_eq!(&outs[1], &outs[2]);
        prop_assert!((shift_sums[0] - shift_sums[2]).abs() < 1e-12);
        prop_assert!((shift_sums[1] - shift_sums[2]).abs() < 1e-12);
    }
}
