use patchwork_autograd::{grad, Array, ConvGeom, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array<f64> {
    Array::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn dot(a: &Array<f64>, b: &Array<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Relative gap between an analytic derivative and a central difference of
/// `f` along coordinate `i` of `base`.
fn fd_gap(base: &Array<f64>, i: usize, analytic: f64, f: impl Fn(&Array<f64>) -> f64) -> f64 {
    let h = 1e-6;
    let shifted = |d: f64| {
        let mut a = base.clone();
        a.data_mut()[i] += d;
        f(&a)
    };
    let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-4)
}

#[derive(Debug, Clone)]
struct Case {
    n: usize,
    c: usize,
    o: usize,
    hw: usize,
    k: usize,
    geom: ConvGeom,
    seed: u64,
}

fn cases() -> impl Strategy<Value = Case> {
    (1usize..3, 1usize..4, 1usize..4, 3usize..9, 1usize..4, 1usize..3, 0usize..3, 1usize..3, any::<u64>())
        .prop_filter_map("kernel must fit", |(n, c, o, hw, k, stride, pad, dilation, seed)| {
            let geom = ConvGeom::new(stride, pad, dilation);
            geom.out_size(hw, k).map(|_| Case { n, c, o, hw, k, geom, seed })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn transposed_conv_is_the_adjoint(case in cases()) {
        let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
        let Case { n, c, o, hw, k, geom, .. } = case;
        let x = random(&mut rng, &[n, c, hw, hw]);
        let w = random(&mut rng, &[o, c, k, k]);
        let y = Var::constant(x.clone()).conv2d(&Var::constant(w.clone()), geom);
        let r = random(&mut rng, y.shape());
        let back = Var::constant(r.clone()).conv_transpose2d(&Var::constant(w), geom, (hw, hw));
        let (lhs, rhs) = (dot(y.value(), &r), dot(&x, back.value()));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn conv_gradients_match_finite_differences(case in cases()) {
        let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
        let Case { n, c, o, hw, k, geom, .. } = case;
        let x0 = random(&mut rng, &[n, c, hw, hw]);
        let w0 = random(&mut rng, &[o, c, k, k]);
        let loss = |x: &Var<f64>, w: &Var<f64>| x.conv2d(w, geom).tanh().square().sum();
        let (x, w) = (Var::leaf(x0.clone()), Var::leaf(w0.clone()));
        let g = grad(&loss(&x, &w), &[&x, &w], false);
        let i = rng.random_range(0..x0.len());
        let gap = fd_gap(&x0, i, g[0].value().data()[i], |a| loss(&Var::constant(a.clone()), &Var::constant(w0.clone())).item());
        prop_assert!(gap < 1e-5, "input coordinate {}: {}", i, gap);
        let j = rng.random_range(0..w0.len());
        let gap = fd_gap(&w0, j, g[1].value().data()[j], |a| loss(&Var::constant(x0.clone()), &Var::constant(a.clone())).item());
        prop_assert!(gap < 1e-5, "weight coordinate {}: {}", j, gap);
    }

    #[test]
    fn input_gradient_norm_differentiates_in_the_weights(case in cases()) {
        // the shape of a gradient penalty: d/dw ‖∂f/∂x‖²
        let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
        let Case { n, c, o, hw, k, geom, .. } = case;
        let x0 = random(&mut rng, &[n, c, hw, hw]);
        let w0 = random(&mut rng, &[o, c, k, k]).map(|v| v * 0.5);
        let penalty = |w: &Var<f64>| {
            let x = Var::leaf(x0.clone());
            let f = x.conv2d(w, geom).leaky_relu(0.2).elu().sum();
            grad(&f, &[&x], true).remove(0).square().sum()
        };
        let w = Var::leaf(w0.clone());
        let g = grad(&penalty(&w), &[&w], false).remove(0);
        let j = rng.random_range(0..w0.len());
        let gap = fd_gap(&w0, j, g.value().data()[j], |a| penalty(&Var::leaf(a.clone())).item());
        prop_assert!(gap < 1e-4, "weight coordinate {}: {}", j, gap);
    }

    #[test]
    fn mirror_padding_adjoint(c in 1usize..3, hw in 3usize..9, p in 1usize..3, seed in any::<u64>()) {
        prop_assume!(p < hw);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[1, c, hw, hw]);
        let y = Var::constant(x.clone()).reflect_pad(p);
        let r = random(&mut rng, y.shape());
        let back = Var::constant(r.clone()).reflect_pad_adjoint(p);
        let (lhs, rhs) = (dot(y.value(), &r), dot(&x, back.value()));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }
}
