//! Image-quality metrics for restored system matrices.
//!
//! Complex components are scored as two real channels (real, imaginary).
//! PSNR and SSIM both use the ground-truth dynamic range max|gt| as the
//! peak value L.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shape::Shape3;
use crate::smsim::{Provenance, SystemMatrix};

/// Hard cap so that identical images report a finite score.
pub const PSNR_CAP: f64 = 300.0;

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_WINDOW_STD: f64 = 1.5;
const SSIM_MAX_TAPS: usize = 11;

fn dynamic_range(gt: &[Complex64]) -> f64 {
    gt.iter().map(|c| c.re.abs().max(c.im.abs())).fold(0.0, f64::max)
}

/// Peak signal-to-noise ratio in dB over the stacked (re, im) channels,
/// with peak = max|gt| componentwise. Capped at [`PSNR_CAP`].
pub fn psnr(gt: &[Complex64], test: &[Complex64]) -> Result<f64> {
    if gt.len() != test.len() || gt.is_empty() {
        return Err(Error::Data("psnr inputs must be equal-length, nonempty".into()));
    }
    let range = dynamic_range(gt);
    if range == 0.0 {
        return Err(Error::Numeric("psnr undefined for all-zero ground truth".into()));
    }
    let mse: f64 = gt
        .iter()
        .zip(test)
        .map(|(a, b)| (a.re - b.re).powi(2) + (a.im - b.im).powi(2))
        .sum::<f64>()
        / (2.0 * gt.len() as f64);
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (range * range / mse).log10()).min(PSNR_CAP))
}

/// Normalized Gaussian window, odd tap count ≤ 11 and ≤ the axis length.
fn gaussian_window(axis_len: usize) -> Vec<f64> {
    let mut taps = SSIM_MAX_TAPS.min(axis_len);
    if taps % 2 == 0 {
        taps -= 1;
    }
    let half = (taps / 2) as isize;
    let mut w: Vec<f64> = (-half..=half)
        .map(|i| (-(i as f64).powi(2) / (2.0 * SSIM_WINDOW_STD * SSIM_WINDOW_STD)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian blur with edge-clamped (replicate) boundaries over
/// the active axes.
fn blur(img: &[f64], shape: Shape3) -> Vec<f64> {
    let mut cur = img.to_vec();
    for axis in 0..3 {
        let n = shape.axis_len(axis);
        if n < 2 {
            continue;
        }
        let w = gaussian_window(n);
        let half = (w.len() / 2) as isize;
        let mut next = vec![0.0; cur.len()];
        for z in 0..shape.nz {
            for y in 0..shape.ny {
                for x in 0..shape.nx {
                    let i = match axis {
                        0 => x,
                        1 => y,
                        _ => z,
                    } as isize;
                    let mut acc = 0.0;
                    for (t, &wt) in w.iter().enumerate() {
                        let j = (i + t as isize - half).clamp(0, n as isize - 1) as usize;
                        let idx = match axis {
                            0 => shape.idx(z, y, j),
                            1 => shape.idx(z, j, x),
                            _ => shape.idx(j, y, x),
                        };
                        acc += wt * cur[idx];
                    }
                    next[shape.idx(z, y, x)] = acc;
                }
            }
        }
        cur = next;
    }
    cur
}

fn ssim_real(gt: &[f64], test: &[f64], shape: Shape3, range: f64) -> f64 {
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let mu_x = blur(gt, shape);
    let mu_y = blur(test, shape);
    let xx: Vec<f64> = gt.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = test.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = gt.iter().zip(test).map(|(a, b)| a * b).collect();
    let e_xx = blur(&xx, shape);
    let e_yy = blur(&yy, shape);
    let e_xy = blur(&xy, shape);
    let mut acc = 0.0;
    for i in 0..gt.len() {
        let var_x = e_xx[i] - mu_x[i] * mu_x[i];
        let var_y = e_yy[i] - mu_y[i] * mu_y[i];
        let cov = e_xy[i] - mu_x[i] * mu_y[i];
        acc += ((2.0 * mu_x[i] * mu_y[i] + c1) * (2.0 * cov + c2))
            / ((mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + c1) * (var_x + var_y + c2));
    }
    acc / gt.len() as f64
}

/// Mean structural similarity over the two real channels, Gaussian window
/// (std 1.5, up to 11 taps), L = max|gt|.
pub fn ssim(gt: &[Complex64], test: &[Complex64], shape: Shape3) -> Result<f64> {
    if gt.len() != test.len() || gt.len() != shape.len() || gt.is_empty() {
        return Err(Error::Data("ssim inputs must match the grid".into()));
    }
    let range = dynamic_range(gt);
    if range == 0.0 {
        return Err(Error::Numeric("ssim undefined for all-zero ground truth".into()));
    }
    let gr: Vec<f64> = gt.iter().map(|c| c.re).collect();
    let gi: Vec<f64> = gt.iter().map(|c| c.im).collect();
    let tr: Vec<f64> = test.iter().map(|c| c.re).collect();
    let ti: Vec<f64> = test.iter().map(|c| c.im).collect();
    Ok(0.5 * (ssim_real(&gr, &tr, shape, range) + ssim_real(&gi, &ti, shape, range)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: f64,
    /// Half-width of the 95% normal confidence interval,
    /// 1.96·s/√n with the sample (n−1) standard deviation.
    pub ci95: f64,
}

/// Mean and 95% confidence half-width of a set of scores.
pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::Data("cannot aggregate zero scores".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let ci95 = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        1.96 * (var / n as f64).sqrt()
    } else {
        0.0
    };
    Ok(Aggregate { n, mean, ci95 })
}

/// Scores of one evaluated system matrix pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryScore {
    pub id: u64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub entries: Vec<EntryScore>,
    pub psnr: Aggregate,
    pub ssim: Aggregate,
}

/// Components whose GT max amplitude is below this fraction of the
/// strongest component are numerical residue, not signal, and are skipped.
const SIGNAL_FLOOR: f64 = 1e-6;

/// Scores one (gt, test) pair: per-component PSNR/SSIM in the unit-max GT
/// scale, averaged over components. Test components are mapped back to the
/// GT scale via the corruption record when present; components below
/// [`SIGNAL_FLOOR`] carry no signal and are skipped.
pub fn score_pair(gt: &SystemMatrix, test: &SystemMatrix) -> Result<(f64, f64)> {
    if gt.n_channels != test.n_channels || gt.n_freq != test.n_freq {
        return Err(Error::Data("component counts differ between gt and test".into()));
    }
    if gt.grid != test.grid {
        return Err(Error::Data(format!(
            "grids differ: gt {:?} vs test {:?}",
            gt.grid.xyz(),
            test.grid.xyz()
        )));
    }
    let scales = match test.provenance.corruption() {
        Some(Provenance::Corrupted { gt_max, corrupt_max, .. }) => {
            Some((gt_max.clone(), corrupt_max.clone()))
        }
        _ => None,
    };
    let global_max = gt.data.iter().map(|c| c.norm() as f64).fold(0.0, f64::max);
    if global_max == 0.0 {
        return Err(Error::Data("all-zero ground truth".into()));
    }
    let floor = SIGNAL_FLOOR * global_max;
    let mut psnrs = Vec::new();
    let mut ssims = Vec::new();
    for l in 0..gt.n_channels {
        for k in 0..gt.n_freq {
            let comp = l * gt.n_freq + k;
            let mut g = gt.component_f64(l, k);
            let mut t = test.component_f64(l, k);
            if g.iter().map(|c| c.norm()).fold(0.0, f64::max) < floor {
                continue;
            }
            if let Some((gm, cm)) = &scales {
                for v in &mut g {
                    *v /= gm[comp];
                }
                for v in &mut t {
                    *v *= cm[comp];
                }
            }
            psnrs.push(psnr(&g, &t)?);
            ssims.push(ssim(&g, &t, gt.grid)?);
        }
    }
    if psnrs.is_empty() {
        return Err(Error::Data("no nonzero components to score".into()));
    }
    Ok((
        psnrs.iter().sum::<f64>() / psnrs.len() as f64,
        ssims.iter().sum::<f64>() / ssims.len() as f64,
    ))
}

impl MetricReport {
    pub fn from_entries(entries: Vec<EntryScore>) -> Result<Self> {
        let p: Vec<f64> = entries.iter().map(|e| e.psnr).collect();
        let s: Vec<f64> = entries.iter().map(|e| e.ssim).collect();
        Ok(MetricReport { psnr: aggregate(&p)?, ssim: aggregate(&s)?, entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paramspace::entry_rng;
    use rand::Rng;

    fn randc(rng: &mut impl Rng) -> Complex64 {
        Complex64::new(
            rng.sample(rand_distr::StandardNormal),
            rng.sample(rand_distr::StandardNormal),
        )
    }

    #[test]
    fn psnr_identical_hits_cap() {
        let img = vec![Complex64::new(1.0, -0.5); 16];
        assert_eq!(psnr(&img, &img).unwrap(), PSNR_CAP);
    }

    #[test]
    fn psnr_of_unit_noise_is_minus_20_log_sigma() {
        // unit-range gt, additive gaussian noise of std sigma on both parts:
        // MSE -> sigma^2, PSNR -> -20 log10(sigma)
        let mut rng = entry_rng(30, 0);
        let n = 200_000;
        let sigma = 0.1;
        let gt: Vec<Complex64> = (0..n)
            .map(|i| if i == 0 { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) })
            .collect();
        let test: Vec<Complex64> = gt.iter().map(|c| c + randc(&mut rng) * sigma).collect();
        let p = psnr(&gt, &test).unwrap();
        assert!((p - 20.0).abs() < 0.1, "psnr {p}");
    }

    #[test]
    fn psnr_scale_invariant() {
        let mut rng = entry_rng(31, 0);
        let gt: Vec<Complex64> = (0..64).map(|_| randc(&mut rng)).collect();
        let test: Vec<Complex64> = gt.iter().map(|c| c + randc(&mut rng) * 0.05).collect();
        let p1 = psnr(&gt, &test).unwrap();
        let s = 7.3;
        let gt2: Vec<Complex64> = gt.iter().map(|c| c * s).collect();
        let test2: Vec<Complex64> = test.iter().map(|c| c * s).collect();
        let p2 = psnr(&gt2, &test2).unwrap();
        assert!((p1 - p2).abs() < 1e-9);
    }

    #[test]
    fn ssim_identical_is_one() {
        let shape = Shape3::new(1, 12, 12);
        let mut rng = entry_rng(32, 0);
        let img: Vec<Complex64> = (0..shape.len()).map(|_| randc(&mut rng)).collect();
        let s = ssim(&img, &img, shape).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn ssim_decreases_with_noise() {
        let shape = Shape3::new(1, 16, 16);
        let mut rng = entry_rng(33, 0);
        // smooth gt so structure dominates
        let img: Vec<Complex64> = (0..shape.len())
            .map(|f| {
                let (_, y, x) = shape.coords(f);
                Complex64::new(
                    ((x as f64) * 0.4).sin() + ((y as f64) * 0.3).cos(),
                    ((x as f64) * 0.2).cos(),
                )
            })
            .collect();
        let mut last = 1.0;
        for sigma in [0.05, 0.2, 0.8] {
            let noisy: Vec<Complex64> =
                img.iter().map(|c| c + randc(&mut rng) * sigma).collect();
            let s = ssim(&img, &noisy, shape).unwrap();
            assert!(s < last, "ssim {s} did not drop below {last} at sigma {sigma}");
            last = s;
        }
        assert!(last < 0.5);
    }

    #[test]
    fn ssim_bounded_and_low_for_independent_images() {
        let shape = Shape3::new(1, 10, 10);
        let mut rng = entry_rng(34, 0);
        for _ in 0..20 {
            let a: Vec<Complex64> = (0..shape.len())
                .map(|_| Complex64::new(rng.gen::<f64>(), rng.gen::<f64>()))
                .collect();
            let b: Vec<Complex64> = (0..shape.len())
                .map(|_| Complex64::new(rng.gen::<f64>(), rng.gen::<f64>()))
                .collect();
            let s = ssim(&a, &b, shape).unwrap();
            assert!((-1.0..=1.0).contains(&s), "{s}");
            assert!(s < 0.9, "independent images scored {s}");
        }
    }

    #[test]
    fn aggregate_mean_and_ci() {
        let a = aggregate(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(a.n, 4);
        assert!((a.mean - 2.5).abs() < 1e-12);
        // sample std of 1..4 is sqrt(5/3)
        let want = 1.96 * (5.0f64 / 3.0).sqrt() / 2.0;
        assert!((a.ci95 - want).abs() < 1e-12);
    }

    #[test]
    fn aggregate_single_value() {
        let a = aggregate(&[7.0]).unwrap();
        assert_eq!(a.mean, 7.0);
        assert_eq!(a.ci95, 0.0);
    }

    #[test]
    fn blur_preserves_constants() {
        let shape = Shape3::new(1, 9, 9);
        let img = vec![2.5; shape.len()];
        for v in blur(&img, shape) {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }
}
