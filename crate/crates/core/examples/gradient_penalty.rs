//! Measures the gradient penalty of linear critics `a·sum(x)`, where the
//! input gradient norm is exactly `|a|√N`, and compares it to the closed
//! form `(|a|√N − 1)²`.
//!
//! `cargo run -p patchwork --example gradient_penalty`

use patchwork::losses::gradient_penalty;
use patchwork_autograd::Array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> patchwork::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let shape = [4, 3, 8, 8];
    let n = (3 * 8 * 8) as f64;
    let real = Array::from_fn(&shape, |_| rng.random_range(-1.0..1.0));
    let fake = Array::from_fn(&shape, |_| rng.random_range(-1.0..1.0));
    println!("{:>8} {:>14} {:>14}", "a", "measured", "closed form");
    for a in [0.0, 0.02, 1.0 / n.sqrt(), 0.1, -0.1, 0.5] {
        let gp = gradient_penalty(|x| x.sum_per_sample().mul_scalar(a), &real, &fake, &mut rng)?;
        let expected = (f64::abs(a) * n.sqrt() - 1.0).powi(2);
        println!("{a:>8.4} {:>14.8} {expected:>14.8}", gp.item());
    }
    Ok(())
}
