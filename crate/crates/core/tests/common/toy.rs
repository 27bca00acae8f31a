//! Small f64 bundle and the three training objectives built on it, for
//! finite-difference checks.

use patchwork::batch::ImageBatch;
use patchwork::losses::{self, DiscTerms, LossWeights};
use patchwork::masking::{apply_mask, compose_modified_var, MaskSpec};
use patchwork::networks::{self, init_bundle, ModelBundle, NetConfig};
use patchwork::nn::{Bound, ParamSet};
use patchwork_autograd::{grad, Array, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy() -> (NetConfig, ModelBundle<f64>, ImageBatch, Array<f64>, Array<f64>) {
    let cfg = NetConfig {
        image_size: 16,
        patch_size: 8,
        n_attributes: 2,
        base_channels: 2,
        n_res_blocks: 1,
    };
    let mut bundle = init_bundle::<f64>(&cfg, 4).unwrap();
    // push weights off the tiny-init regime so every term carries signal
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for set in [&mut bundle.r, &mut bundle.g, &mut bundle.d] {
        for v in set.values_mut() {
            for x in v.data_mut() {
                *x += rng.random_range(-0.15..0.15);
            }
        }
    }
    let x = ImageBatch::new(Array::from_fn(&[2, 3, 16, 16], |_| rng.random_range(-0.9f32..0.9))).unwrap();
    let c_orig = Array::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let c_target = Array::from_vec(vec![2, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
    (cfg, bundle, x, c_orig, c_target)
}

#[derive(Clone, Copy, Debug)]
pub enum Which {
    Rec,
    Gen,
    Disc,
}

/// The three objectives, each differentiated with respect to its owner's
/// parameters while the other networks are constants.
fn objective(which: Which, bundle: &ModelBundle<f64>, x: &ImageBatch, c_orig: &Array<f64>, c_target: &Array<f64>) -> (Var<f64>, Bound<f64>) {
    let cfg = &bundle.config;
    let m: MaskSpec = cfg.mask();
    let w = LossWeights::default();
    let x_var = Var::constant(x.cast::<f64>());
    let masked = Var::constant(apply_mask(x, &m).unwrap().cast::<f64>());
    match which {
        Which::Rec => {
            let r = Bound::trainable(&bundle.r);
            let d = Bound::frozen(&bundle.d);
            let recon = networks::reconstruct(cfg, &r, &masked);
            let modified = compose_modified_var(&masked, &recon, &m);
            let ae = losses::loss_ae_terms(&masked, &recon, &x_var, &m);
            let out = networks::discriminate(cfg, &d, &modified);
            let adv = losses::loss_adv_generatorside(&out.adv_g, &out.adv_p);
            let class = losses::loss_class_fake(&out.logits, c_orig);
            (losses::total_rec(&ae.total(w.lambda_p), &adv, &class, &w), r)
        }
        Which::Gen => {
            let g = Bound::trainable(&bundle.g);
            let d = Bound::frozen(&bundle.d);
            let translated = networks::translate(cfg, &g, &x_var, c_target);
            let back = networks::translate(cfg, &g, &translated, c_orig);
            let out = networks::discriminate(cfg, &d, &translated);
            let adv = losses::loss_adv_generatorside(&out.adv_g, &out.adv_p);
            let class = losses::loss_class_fake(&out.logits, c_target);
            let cycle = losses::loss_cycle(&x_var, &back);
            (losses::total_gen(&adv, &class, &cycle, &w), g)
        }
        Which::Disc => {
            let d = Bound::trainable(&bundle.d);
            let fake = networks::translate(cfg, &Bound::frozen(&bundle.g), &x_var, c_target).value().clone();
            let real_out = networks::discriminate(cfg, &d, &x_var);
            let fake_out = networks::discriminate(cfg, &d, &Var::constant(fake.clone()));
            let crop = |a: &Array<f64>| Var::constant(a.clone()).crop(m.top, m.left, m.patch_size, m.patch_size).value().clone();
            // fixed ε so repeated evaluations see the same interpolates
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let gp_g = losses::gradient_penalty(|v| networks::critic_global(cfg, &d, v), x_var.value(), &fake, &mut rng).unwrap();
            let gp_p = losses::gradient_penalty(|v| networks::critic_patch(cfg, &d, v), &crop(x_var.value()), &crop(&fake), &mut rng).unwrap();
            let terms = DiscTerms {
                critic_g: losses::critic_term(&real_out.adv_g, &fake_out.adv_g),
                critic_p: losses::critic_term(&real_out.adv_p, &fake_out.adv_p),
                gp_g,
                gp_p,
                class_real: losses::loss_class_real(&real_out.logits, c_orig),
            };
            (losses::total_disc(&terms, &w), d)
        }
    }
}

fn owner(which: Which, b: &mut ModelBundle<f64>) -> &mut ParamSet<f64> {
    match which {
        Which::Rec => &mut b.r,
        Which::Gen => &mut b.g,
        Which::Disc => &mut b.d,
    }
}

/// Largest relative gap between autodiff and central differences over
/// `coords` random parameter coordinates of `which`'s objective.
pub fn worst_gradient_error(which: Which, coords: usize) -> f64 {
    let (_, bundle, x, c_orig, c_target) = toy();
    let (loss, bound) = objective(which, &bundle, &x, &c_orig, &c_target);
    let wrt: Vec<&Var<f64>> = bound.vars().iter().collect();
    let analytic: Vec<Array<f64>> = grad(&loss, &wrt, false).into_iter().map(|g| g.value().clone()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(which as u64 + 40);
    let sizes: Vec<usize> = analytic.iter().map(Array::len).collect();
    let total: usize = sizes.iter().sum();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let mut flat = rng.random_range(0..total);
        let mut t = 0;
        while flat >= sizes[t] {
            flat -= sizes[t];
            t += 1;
        }
        let eval = |delta: f64| {
            let mut b = bundle.clone();
            owner(which, &mut b).values_mut()[t].data_mut()[flat] += delta;
            objective(which, &b, &x, &c_orig, &c_target).0.item()
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let ad = analytic[t].data()[flat];
        let scale = ad.abs().max(fd.abs()).max(1e-4);
        worst = worst.max((ad - fd).abs() / scale);
    }
    worst
}

/// Largest relative gap between the measured penalty of a linear critic
/// `a·sum(x)` and its closed form `(|a|√N − 1)²`, over `draws` random `a`.
pub fn worst_penalty_law_error(draws: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let a: f64 = rng.random_range(-0.5..0.5);
        let shape = [3, 2, 5, 4];
        let n = 2 * 5 * 4;
        let real = Array::from_fn(&shape, |_| rng.random_range(-1.0..1.0));
        let fake = Array::from_fn(&shape, |_| rng.random_range(-1.0..1.0));
        let gp = losses::gradient_penalty(|x| x.sum_per_sample().mul_scalar(a), &real, &fake, &mut rng).unwrap();
        let expected = (a.abs() * (n as f64).sqrt() - 1.0).powi(2);
        worst = worst.max((gp.item() - expected).abs() / expected.max(1e-12));
    }
    worst
}
