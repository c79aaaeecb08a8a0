//! Corruption model: S_corrupt = 𝒜(S_GT) + N.
//!
//! 𝒜 is identity (denoising), regular downsampling (accelerated
//! calibration / upsampling), or masking (inpainting). Noise comes from
//! recorded background frames or a synthetic white/drift/burst mixture.
//! Each component is max-amplitude normalized before 𝒜 and renormalized
//! afterwards; both scale factors are recorded in the provenance.

use num_complex::{Complex32, Complex64};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shape::Shape3;
use crate::smsim::{Provenance, SystemMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSource {
    /// Recorded empty-frame measurements, shape (frames, L, K).
    Background { path: std::path::PathBuf },
    /// White/drift/burst mixture standing in for measured background.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub source: NoiseSource,
    /// Standard deviation of each of the real and imaginary parts,
    /// relative to the unit-max normalized GT component.
    pub sigma: f64,
    /// Synthetic mixture weights (white, drift, burst); must sum to 1.
    pub weights: [f64; 3],
}

impl NoiseConfig {
    pub fn synthetic(sigma: f64) -> Self {
        NoiseConfig {
            source: NoiseSource::Synthetic,
            sigma,
            weights: [0.8, 0.15, 0.05],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma < 0.0 {
            return Err(Error::Config("noise sigma must be nonnegative".into()));
        }
        if self.weights.iter().any(|&w| w < 0.0)
            || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config("noise mixture weights must be nonnegative and sum to 1".into()));
        }
        Ok(())
    }
}

/// In-memory background-frame sequence, shape (frames, L, K).
#[derive(Debug, Clone)]
pub struct BackgroundFrames {
    pub data: Vec<Complex32>,
    pub n_frames: usize,
    pub n_channels: usize,
    pub n_freq: usize,
}

impl BackgroundFrames {
    pub fn frame_value(&self, frame: usize, l: usize, k: usize) -> Complex64 {
        let c = self.data[(frame * self.n_channels + l) * self.n_freq + k];
        Complex64::new(c.re as f64, c.im as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintingMask {
    /// True = missing, row-major over (Nz, Ny, Nx).
    pub mask: Vec<bool>,
    pub shape: Shape3,
    pub ratio: f64,
}

impl InpaintingMask {
    pub fn popcount(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Denoise,
    /// Regular downsampling, per-axis factors in (x, y, z) order,
    /// keeping every factor-th sample starting at index 0.
    Downsample { factors: [usize; 3] },
    /// Zeroes the masked (missing) pixels.
    InpaintMask { mask: InpaintingMask },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionTask {
    pub kind: TaskKind,
    pub noise: NoiseConfig,
    /// Optional global complex-phase rotation applied before 𝒜,
    /// emulating the acquisition chain's transfer-function phase.
    #[serde(default)]
    pub phase_rotate: bool,
}

fn round_half_even(x: f64) -> i64 {
    x.round_ties_even() as i64
}

/// Contiguous-block inpainting mask. Each block is drawn in a randomly
/// permuted flattening of the volume with the last traversal axis
/// reversed with probability 0.5 (meander emulation), then mapped back.
pub fn generate_mask(
    shape: Shape3,
    ratio: f64,
    n_blocks: usize,
    rng: &mut impl Rng,
) -> Result<InpaintingMask> {
    if !(0.0 < ratio && ratio < 1.0) {
        return Err(Error::Config("mask ratio must be in (0, 1)".into()));
    }
    if n_blocks == 0 {
        return Err(Error::Config("n_blocks must be >= 1".into()));
    }
    let total = shape.len();
    let block_len = round_half_even(ratio * total as f64 / n_blocks as f64);
    if block_len < 1 {
        return Err(Error::Config(format!(
            "ratio*total = {} too small for {n_blocks} blocks",
            ratio * total as f64
        )));
    }
    let block_len = (block_len as usize).min(total);

    let dims = [shape.nz, shape.ny, shape.nx];
    let mut mask = vec![false; total];
    for _ in 0..n_blocks {
        // redraw blocks that overlap already-masked cells so the union
        // keeps the exact target popcount
        let mut placed = false;
        'attempts: for _ in 0..1000 {
            let mut perm = [0usize, 1, 2];
            perm.shuffle(rng);
            let reverse_last = rng.gen_bool(0.5);
            let start = rng.gen_range(0..=total - block_len);
            let pd = [dims[perm[0]], dims[perm[1]], dims[perm[2]]];
            let mut indices = Vec::with_capacity(block_len);
            for flat in start..start + block_len {
                // decompose in the permuted traversal, last axis fastest
                let i2 = flat % pd[2];
                let i1 = (flat / pd[2]) % pd[1];
                let i0 = flat / (pd[2] * pd[1]);
                let i2 = if reverse_last { pd[2] - 1 - i2 } else { i2 };
                let mut c = [0usize; 3]; // (z, y, x)
                c[perm[0]] = i0;
                c[perm[1]] = i1;
                c[perm[2]] = i2;
                let idx = shape.idx(c[0], c[1], c[2]);
                if mask[idx] {
                    continue 'attempts;
                }
                indices.push(idx);
            }
            for idx in indices {
                mask[idx] = true;
            }
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Numeric(format!(
                "could not place {n_blocks} disjoint mask blocks at ratio {ratio}"
            )));
        }
    }
    Ok(InpaintingMask { mask, shape, ratio })
}

/// Grid size after regular downsampling: ceil(n / factor).
pub fn downsampled_shape(shape: Shape3, factors: [usize; 3]) -> Shape3 {
    let [fx, fy, fz] = factors;
    Shape3 {
        nz: (shape.nz + fz - 1) / fz,
        ny: (shape.ny + fy - 1) / fy,
        nx: (shape.nx + fx - 1) / fx,
    }
}

/// Applies the linear degradation 𝒜 to one component image.
pub fn apply_operator(
    kind: &TaskKind,
    img: &[Complex64],
    shape: Shape3,
) -> Result<(Vec<Complex64>, Shape3)> {
    match kind {
        TaskKind::Denoise => Ok((img.to_vec(), shape)),
        TaskKind::Downsample { factors } => {
            let [fx, fy, fz] = *factors;
            if fx == 0 || fy == 0 || fz == 0 {
                return Err(Error::Config("downsample factors must be >= 1".into()));
            }
            if fx > shape.nx || fy > shape.ny || fz > shape.nz {
                return Err(Error::Config(format!(
                    "downsample factors {factors:?} exceed grid {:?}",
                    shape.xyz()
                )));
            }
            let out_shape = downsampled_shape(shape, *factors);
            let mut out = Vec::with_capacity(out_shape.len());
            for z in (0..shape.nz).step_by(fz) {
                for y in (0..shape.ny).step_by(fy) {
                    for x in (0..shape.nx).step_by(fx) {
                        out.push(img[shape.idx(z, y, x)]);
                    }
                }
            }
            Ok((out, out_shape))
        }
        TaskKind::InpaintMask { mask } => {
            if mask.shape != shape {
                return Err(Error::Data("mask dims mismatch".into()));
            }
            let out = img
                .iter()
                .zip(&mask.mask)
                .map(|(v, &missing)| if missing { Complex64::new(0.0, 0.0) } else { *v })
                .collect();
            Ok((out, shape))
        }
    }
}

/// Draws one noise tensor, scaled so each of the real and imaginary
/// parts has standard deviation `sigma`.
pub fn sample_noise(
    cfg: &NoiseConfig,
    len: usize,
    component: (usize, usize),
    background: Option<&BackgroundFrames>,
    rng: &mut impl Rng,
) -> Result<Vec<Complex64>> {
    cfg.validate()?;
    if cfg.sigma == 0.0 {
        return Ok(vec![Complex64::new(0.0, 0.0); len]);
    }
    let mut noise = match &cfg.source {
        NoiseSource::Synthetic => synthetic_noise(cfg.weights, len, rng),
        NoiseSource::Background { .. } => {
            let bg = background.ok_or_else(|| {
                Error::Data("background noise requested but no frames loaded".into())
            })?;
            let (l, k) = component;
            if l >= bg.n_channels || k >= bg.n_freq {
                return Err(Error::Data(format!(
                    "background frames have no component ({l}, {k})"
                )));
            }
            if bg.n_frames < len {
                return Err(Error::Data(format!(
                    "background file has {} frames, {len} needed",
                    bg.n_frames
                )));
            }
            let offset = rng.gen_range(0..=bg.n_frames - len);
            (0..len).map(|j| bg.frame_value(offset + j, l, k)).collect::<Vec<_>>()
        }
    };
    rescale_to_std(&mut noise, cfg.sigma);
    Ok(noise)
}

fn randn(rng: &mut impl Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

fn synthetic_noise(weights: [f64; 3], len: usize, rng: &mut impl Rng) -> Vec<Complex64> {
    let [w_white, w_drift, w_burst] = weights;

    let white: Vec<Complex64> = (0..len).map(|_| Complex64::new(randn(rng), randn(rng))).collect();

    // complex random walk along the flattened calibration index
    let mut drift = Vec::with_capacity(len);
    let mut acc = Complex64::new(0.0, 0.0);
    for _ in 0..len {
        acc += Complex64::new(randn(rng), randn(rng));
        drift.push(acc);
    }
    let mean = drift.iter().sum::<Complex64>() / len as f64;
    for d in &mut drift {
        *d -= mean;
    }
    rescale_to_std(&mut drift, 1.0);

    // contiguous block of amplified white noise
    let block = (len / 10).max(1);
    let start = rng.gen_range(0..=len - block);
    let mut burst = vec![Complex64::new(0.0, 0.0); len];
    for b in burst.iter_mut().skip(start).take(block) {
        *b = Complex64::new(randn(rng), randn(rng)) * 5.0;
    }
    rescale_to_std(&mut burst, 1.0);

    (0..len)
        .map(|i| w_white * white[i] + w_drift * drift[i] + w_burst * burst[i])
        .collect()
}

/// Rescales so sqrt(mean(re² + im²)/2) equals `target` exactly.
fn rescale_to_std(v: &mut [Complex64], target: f64) {
    let ms: f64 = v.iter().map(|c| c.norm_sqr()).sum::<f64>() / (2.0 * v.len() as f64);
    if ms > 0.0 {
        let s = target / ms.sqrt();
        for c in v.iter_mut() {
            *c *= s;
        }
    }
}

fn max_abs(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Applies Eq.-(8)-style corruption to every component of a system matrix.
///
/// Per component: normalize GT to unit max amplitude, apply 𝒜, add noise
/// scaled to sigma, renormalize by the corrupted max. Both scale factors
/// are recorded in the provenance so restorations can be mapped back to
/// the GT scale.
pub fn apply(
    task: &CorruptionTask,
    sm: &SystemMatrix,
    background: Option<&BackgroundFrames>,
    seed: u64,
    rng: &mut impl Rng,
) -> Result<SystemMatrix> {
    task.noise.validate()?;
    let (out_grid, task_desc) = match &task.kind {
        TaskKind::Denoise => (sm.grid, "denoise".to_string()),
        TaskKind::Downsample { factors } => {
            let [fx, fy, fz] = *factors;
            if (sm.grid.nx == 1 && fx != 1)
                || (sm.grid.ny == 1 && fy != 1)
                || (sm.grid.nz == 1 && fz != 1)
            {
                return Err(Error::Config("downsample factor must be 1 on inactive axes".into()));
            }
            (downsampled_shape(sm.grid, *factors), format!("downsample{factors:?}"))
        }
        TaskKind::InpaintMask { mask } => {
            if mask.shape != sm.grid {
                return Err(Error::Data("mask dims do not match system matrix grid".into()));
            }
            (sm.grid, format!("inpaint(ratio={})", mask.ratio))
        }
    };

    let n_out = out_grid.len();
    let mut data = vec![Complex32::new(0.0, 0.0); sm.n_channels * sm.n_freq * n_out];
    let mut gt_max = Vec::with_capacity(sm.n_components());
    let mut corrupt_max = Vec::with_capacity(sm.n_components());

    for l in 0..sm.n_channels {
        for k in 0..sm.n_freq {
            let mut img = sm.component_f64(l, k);
            let gmax = max_abs(&img);
            if gmax > 0.0 {
                for v in &mut img {
                    *v /= gmax;
                }
            }
            if task.phase_rotate {
                let theta = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
                let rot = Complex64::from_polar(1.0, theta);
                for v in &mut img {
                    *v *= rot;
                }
            }
            let (mut corrupted, _) = apply_operator(&task.kind, &img, sm.grid)?;
            if task.noise.sigma > 0.0 {
                let noise = sample_noise(&task.noise, n_out, (l, k), background, rng)?;
                for (c, nz) in corrupted.iter_mut().zip(&noise) {
                    *c += nz;
                }
            }
            let cmax = max_abs(&corrupted);
            let scale = if cmax > 0.0 { 1.0 / cmax } else { 1.0 };
            let off = (l * sm.n_freq + k) * n_out;
            for (i, c) in corrupted.iter().enumerate() {
                let v = c * scale;
                data[off + i] = Complex32::new(v.re as f32, v.im as f32);
            }
            gt_max.push(gmax);
            corrupt_max.push(cmax);
        }
    }

    let mut calibration = sm.calibration.clone();
    calibration.grid = out_grid;

    Ok(SystemMatrix {
        data,
        n_channels: sm.n_channels,
        n_freq: sm.n_freq,
        grid: out_grid,
        scanner: sm.scanner.clone(),
        particle: sm.particle.clone(),
        calibration,
        receive: sm.receive.clone(),
        provenance: Provenance::Corrupted {
            task: task_desc,
            sigma: task.noise.sigma,
            seed,
            gt_max,
            corrupt_max,
            parent: Box::new(sm.provenance.clone()),
        },
    })
}
