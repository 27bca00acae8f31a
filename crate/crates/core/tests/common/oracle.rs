//! Brute-force reference metrics, written independently of the library.

use patchwork_autograd::Array;

pub fn psnr(a: &Array<f64>, b: &Array<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    10.0 * (1.0 / (s / a.len() as f64)).log10()
}

/// Literal per-window SSIM with a directly built 2-D Gaussian.
pub fn ssim(a: &Array<f64>, b: &Array<f64>) -> f64 {
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let mut win = [[0.0f64; 11]; 11];
    let mut norm = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            norm += *v;
        }
    }
    let (c1, c2) = (0.01f64 * 0.01, 0.03f64 * 0.03);
    let mut total = 0.0;
    for ch in 0..c {
        let px = |img: &Array<f64>, y: usize, x: usize| img.data()[ch * h * w + y * w + x];
        let mut acc = 0.0;
        let mut count = 0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = win[i][j] / norm;
                        ma += wt * px(a, y0 + i, x0 + j);
                        mb += wt * px(b, y0 + i, x0 + j);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = win[i][j] / norm;
                        let da = px(a, y0 + i, x0 + j) - ma;
                        let db = px(b, y0 + i, x0 + j) - mb;
                        va += wt * da * da;
                        vb += wt * db * db;
                        cov += wt * da * db;
                    }
                }
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    total / c as f64
}
