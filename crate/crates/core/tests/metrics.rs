mod common;

use patchwork::batch::{AttrBatch, AttributeCode, ImageBatch};
use patchwork::data::{split, Dataset, DatasetIndex, Entry};
use patchwork::fixture::{self, FaceParams};
use patchwork::imageio;
use patchwork::masking::{centered_mask, extract_patch, MaskSpec};
use patchwork::metrics::{
    self, attribute_flip_rate, evaluate_inpainting, psnr, ssim, AttributeClassifier, Direction, Inpainter, Psnr,
    Transfer,
};
use patchwork::probe::{Probe, ProbeConfig};
use patchwork::{Error, Result};
use patchwork_autograd::Array;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array<f64> {
    Array::from_fn(shape, |_| rng.random::<f64>())
}

#[test]
fn metrics_match_brute_force_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..100 {
        let shape: &[usize] = if k % 2 == 0 { &[1, 16, 16] } else { &[3, 16, 16] };
        let a = random_image(&mut rng, shape);
        let b = random_image(&mut rng, shape);
        let p = psnr(&a, &b).unwrap().db().unwrap();
        assert!((p - common::oracle::psnr(&a, &b)).abs() < 1e-6);
        assert!((ssim(&a, &b).unwrap() - common::oracle::ssim(&a, &b)).abs() < 1e-6);
    }
}

#[test]
fn analytic_cases() {
    let zero = Array::<f64>::zeros(&[3, 16, 16]);
    let one = Array::<f64>::ones(&[3, 16, 16]);
    assert_eq!(psnr(&zero, &zero).unwrap(), Psnr::Identical);
    assert!(psnr(&zero, &one).unwrap().db().unwrap().abs() < 1e-9);
    let half = Array::full(&[3, 16, 16], 0.5);
    assert!((psnr(&zero, &half).unwrap().db().unwrap() - 10.0 * 4f64.log10()).abs() < 1e-9);
    assert!((ssim(&one, &one).unwrap() - 1.0).abs() < 1e-9);
    // constant images: σ terms vanish, leaving C1 / (1 + C1)
    let c1 = 0.01f64 * 0.01;
    assert!((ssim(&zero, &one).unwrap() - c1 / (1.0 + c1)).abs() < 1e-9);
    assert!(matches!(
        ssim(&Array::<f64>::zeros(&[3, 10, 10]), &Array::zeros(&[3, 10, 10])),
        Err(Error::Argument(_))
    ));
}

#[test]
fn ssim_is_continuous_at_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_image(&mut rng, &[3, 16, 16]);
    let mut prev = 0.0;
    for eps in [1e-2, 1e-3, 1e-4] {
        let b = a.map(|v| v + eps);
        let s = ssim(&a, &b).unwrap();
        assert!(s > prev && s <= 1.0);
        prev = s;
    }
    assert!(1.0 - prev < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_image(&mut rng, &[2, 12, 13]);
        let b = random_image(&mut rng, &[2, 12, 13]);
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn psnr_falls_as_uniform_error_grows(e in 0.001f64..0.3, k in 1.01f64..3.0) {
        let a = Array::full(&[3, 8, 8], 0.2);
        let small = psnr(&a, &a.map(|v| v + e)).unwrap().db().unwrap();
        let large = psnr(&a, &a.map(|v| v + e * k)).unwrap().db().unwrap();
        prop_assert!(large < small);
    }
}

fn fixture_test_set() -> Dataset {
    let index = common::fixture_index(24, 3);
    Dataset::new(index, 32)
}

/// Knows every test image and pastes the true hole back.
struct Oracle(Dataset);

impl Inpainter for Oracle {
    fn inpaint(&self, masked: &ImageBatch) -> Result<ImageBatch> {
        let (all, _) = self.0.gather(&(0..self.0.len()).collect::<Vec<_>>())?;
        let m = centered_mask(32, 14)?;
        let keyed: Vec<usize> = (0..masked.len())
            .map(|i| {
                (0..all.len())
                    .find(|&j| {
                        let a = patchwork::masking::apply_mask(&all.image(j), &m).unwrap();
                        a.image_data(0) == masked.image_data(i)
                    })
                    .unwrap()
            })
            .collect();
        Ok(all.select(&keyed))
    }
}

struct Degenerate;

impl Inpainter for Degenerate {
    fn inpaint(&self, masked: &ImageBatch) -> Result<ImageBatch> {
        Ok(masked.clone())
    }
}

#[test]
fn evaluation_degenerate_and_oracle_reconstructors() {
    let test = fixture_test_set();
    let m = centered_mask(32, 14).unwrap();
    let (ours, base) = evaluate_inpainting(&Oracle(fixture_test_set()), &test, &m, 7).unwrap();
    assert_eq!(ours.identical, test.len());
    assert_eq!(ours.psnr_mean, None);
    assert!((ours.ssim_mean - 1.0).abs() < 1e-12);
    assert!(base.psnr_mean.unwrap() < 40.0);

    let (same, base2) = evaluate_inpainting(&Degenerate, &test, &m, 5).unwrap();
    assert_eq!(same, base2);
    assert_eq!(base2, base);

    let empty = Dataset::new(DatasetIndex::new(vec![], fixture::attribute_names()).unwrap(), 32);
    assert!(matches!(
        evaluate_inpainting(&Degenerate, &empty, &m, 4),
        Err(Error::Argument(_))
    ));
}

#[test]
fn hole_psnr_only_sees_the_hole() {
    let test = fixture_test_set();
    let m = MaskSpec::new(32, 14, 9, 9, 0.0).unwrap();
    let (_, base) = evaluate_inpainting(&Degenerate, &test, &m, 8).unwrap();
    let (x, _) = test.gather(&[0]).unwrap();
    let hole = extract_patch(&x, &m).unwrap();
    let unit = metrics::unit_image(&hole, 0);
    let gray = Array::full(unit.shape(), 0.5);
    assert!(base.hole_psnr_mean.unwrap() < base.psnr_mean.unwrap());
    assert!(psnr(&unit, &gray).unwrap().db().unwrap() < base.psnr_mean.unwrap());
}

/// Renders a small labelled fixture whose generating parameters are kept,
/// so a perfect "generator" can re-render any requested attribute set.
struct Rendered {
    params: Vec<FaceParams>,
    dataset: Dataset,
    _dir: tempfile::TempDir,
}

fn rendered(n: usize, seed: u64) -> Rendered {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    let mut entries = Vec::new();
    for i in 0..n {
        let p = FaceParams::sample(&mut rng, i % 2 == 0, (i / 2) % 2 == 0);
        let path = dir.path().join(format!("{i}.png"));
        imageio::save_png(&p.render(), &path).unwrap();
        entries.push(Entry {
            path,
            attributes: AttributeCode::from_bools(&[p.glasses, p.mustache]),
        });
        params.push(p);
    }
    let index = DatasetIndex::new(entries, fixture::attribute_names()).unwrap();
    Rendered {
        params,
        dataset: Dataset::new(index, 32),
        _dir: dir,
    }
}

fn to_batch(img: &image::RgbImage) -> ImageBatch {
    let small = imageio::crop_resize_rgb(img, 32, std::path::Path::new("mem")).unwrap();
    ImageBatch::new(Array::from_vec(vec![1, 3, 32, 32], imageio::rgb_to_chw(&small)).unwrap()).unwrap()
}

struct StrokeOracle<'a>(&'a Rendered);

impl Transfer for StrokeOracle<'_> {
    fn transfer(&self, x: &ImageBatch, target: &AttrBatch) -> Result<ImageBatch> {
        let parts: Vec<ImageBatch> = (0..x.len())
            .map(|i| {
                let k = self
                    .0
                    .params
                    .iter()
                    .position(|p| to_batch(&p.render()).image_data(0) == x.image_data(i))
                    .unwrap();
                let c = &target.codes()[i];
                let p = FaceParams {
                    glasses: c.get(0),
                    mustache: c.get(1),
                    ..self.0.params[k].clone()
                };
                to_batch(&p.render())
            })
            .collect();
        ImageBatch::stack(&parts)
    }
}

struct Identity;

impl Transfer for Identity {
    fn transfer(&self, x: &ImageBatch, _: &AttrBatch) -> Result<ImageBatch> {
        Ok(x.clone())
    }
}

struct Noise(u64);

impl Transfer for Noise {
    fn transfer(&self, x: &ImageBatch, _: &AttrBatch) -> Result<ImageBatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        let [n, c, h, w] = x.shape();
        ImageBatch::new(Array::from_fn(&[n, c, h, w], |_| rng.random_range(-1.0..1.0)))
    }
}

#[test]
fn flip_rate_reference_generators() {
    let train = Dataset::new(common::fixture_index(400, 21), 32);
    let data = rendered(16, 77);
    let (fit_idx, check_idx) = split(train.index(), 100, 0).unwrap();
    let probe = Probe::fit(
        &Dataset::new(fit_idx, 32),
        &Dataset::new(check_idx, 32),
        &ProbeConfig::default(),
    )
    .unwrap();
    let acc = probe.accuracy().unwrap();
    assert!(acc.iter().all(|&a| a >= 0.9), "probe accuracy {acc:?}");
    let test = &data.dataset;

    for attr in 0..2 {
        for dir in [Direction::Add, Direction::Remove] {
            let oracle = attribute_flip_rate(&StrokeOracle(&data), &probe, test, attr, dir, 5).unwrap();
            assert_eq!(oracle.total, 8);
            assert!(oracle.rate().unwrap() >= 0.875, "oracle {attr} {dir:?} {oracle:?}");

            // unchanged images: hits are exactly the probe's mistakes on the source subset
            let same = attribute_flip_rate(&Identity, &probe, test, attr, dir, 5).unwrap();
            let source_bit = dir == Direction::Remove;
            let rows: Vec<usize> = (0..test.len())
                .filter(|&i| test.index().entries[i].attributes.get(attr) == source_bit)
                .collect();
            let (x, _) = test.gather(&rows).unwrap();
            let wrong = probe.predict(&x).unwrap().iter().filter(|c| c.get(attr) != source_bit).count();
            assert_eq!(same.hits, wrong);

            // noise: the rate is the probe's base rate on noise of the same draw
            let noise = attribute_flip_rate(&Noise(9), &probe, test, attr, dir, 64).unwrap();
            let junk = Noise(9)
                .transfer(&x, &AttrBatch::new(vec![AttributeCode::from_bools(&[false, false]); x.len()]).unwrap())
                .unwrap();
            let base = probe.predict(&junk).unwrap().iter().filter(|c| c.get(attr) != source_bit).count();
            assert_eq!(noise.hits, base);
        }
    }

    let untrained = Probe::new(32, 2, &ProbeConfig::default()).unwrap();
    assert!(matches!(
        attribute_flip_rate(&Identity, &untrained, test, 0, Direction::Add, 4),
        Err(Error::State(_))
    ));
}
