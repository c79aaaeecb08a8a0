//! Classical restoration baselines, applied independently per
//! (channel, frequency) component.
//!
//! - DCT-F: orthonormal type-II DCT along the spatial axes, magnitude soft
//!   thresholding at ωσ with the complex phase preserved.
//! - Cubic interpolation: separable natural cubic splines through the
//!   source cell centers, evaluated at the target cell centers.
//! - Biharmonic inpainting: fills masked pixels by minimizing the squared
//!   discrete Laplacian with known pixels as Dirichlet data.

use num_complex::{Complex32, Complex64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrupt::InpaintingMask;
use crate::error::{Error, Result};
use crate::shape::Shape3;
use crate::smsim::{Provenance, SystemMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSpec {
    Scalar(f64),
    /// One value per (l, k) component, l-major.
    PerComponent(Vec<f64>),
}

impl SigmaSpec {
    fn get(&self, comp: usize) -> f64 {
        match self {
            SigmaSpec::Scalar(s) => *s,
            SigmaSpec::PerComponent(v) => v[comp],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestoreMethod {
    DctF { omega: f64, sigma: SigmaSpec },
    CubicInterp { target: Shape3 },
    Biharmonic { mask: InpaintingMask },
}

// ---------------------------------------------------------------------------
// DCT-F denoising

/// Orthonormal type-II DCT matrix of size n.
fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for j in 0..n {
            m[k * n + j] =
                s * (std::f64::consts::PI * (2.0 * j as f64 + 1.0) * k as f64 / (2.0 * n as f64)).cos();
        }
    }
    m
}

/// Applies an n×n matrix along `axis` of a complex volume.
fn apply_axis_matrix(img: &[Complex64], shape: Shape3, axis: usize, m: &[f64]) -> Vec<Complex64> {
    let n = shape.axis_len(axis);
    let mut out = vec![Complex64::new(0.0, 0.0); img.len()];
    let (nz, ny, nx) = (shape.nz, shape.ny, shape.nx);
    let line = |z: usize, y: usize, x: usize| shape.idx(z, y, x);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                // only iterate lines once: fix the other two coordinates
                let along = match axis {
                    0 => x,
                    1 => y,
                    _ => z,
                };
                if along != 0 {
                    continue;
                }
                for k in 0..n {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for j in 0..n {
                        let idx = match axis {
                            0 => line(z, y, j),
                            1 => line(z, j, x),
                            _ => line(j, y, x),
                        };
                        acc += m[k * n + j] * img[idx];
                    }
                    let idx = match axis {
                        0 => line(z, y, k),
                        1 => line(z, k, x),
                        _ => line(k, y, x),
                    };
                    out[idx] = acc;
                }
            }
        }
    }
    out
}

fn transpose(m: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = m[i * n + j];
        }
    }
    t
}

/// DCT-F denoising of one complex component. Under the orthonormal DCT the
/// coefficient-domain noise std equals the image-domain sigma, so the
/// threshold is ω·σ directly.
pub fn dctf_denoise(img: &[Complex64], shape: Shape3, omega: f64, sigma: f64) -> Result<Vec<Complex64>> {
    if sigma < 0.0 || omega <= 0.0 {
        return Err(Error::Config("dctf requires omega > 0 and sigma >= 0".into()));
    }
    let mut coeffs = img.to_vec();
    let mut matrices = Vec::new();
    for axis in 0..3 {
        if shape.axis_len(axis) > 1 {
            let m = dct_matrix(shape.axis_len(axis));
            coeffs = apply_axis_matrix(&coeffs, shape, axis, &m);
            matrices.push((axis, m));
        }
    }
    let threshold = omega * sigma;
    for c in &mut coeffs {
        let mag = c.norm();
        if mag <= threshold {
            *c = Complex64::new(0.0, 0.0);
        } else {
            *c *= (mag - threshold) / mag;
        }
    }
    for (axis, m) in matrices.iter().rev() {
        let inv = transpose(m, shape.axis_len(*axis));
        coeffs = apply_axis_matrix(&coeffs, shape, *axis, &inv);
    }
    Ok(coeffs)
}

// ---------------------------------------------------------------------------
// Separable natural cubic spline interpolation

/// Natural cubic spline through (xs, ys); evaluation clamps to the
/// outermost knots (edge value held, no extrapolation).
struct NaturalSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots.
    m2: Vec<f64>,
}

impl NaturalSpline {
    fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        let n = xs.len();
        let mut m2 = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for interior second derivatives
            let mut diag = vec![0.0; n];
            let mut rhs = vec![0.0; n];
            let mut upper = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = xs[i] - xs[i - 1];
                let h1 = xs[i + 1] - xs[i];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
            }
            // Thomas algorithm on indices 1..n-1, natural ends m2 = 0
            for i in 2..n - 1 {
                let h0 = xs[i] - xs[i - 1];
                let w = h0 / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            for i in (1..n - 1).rev() {
                let next = if i + 1 < n - 1 { m2[i + 1] } else { 0.0 };
                m2[i] = (rhs[i] - upper[i] * next) / diag[i];
            }
        }
        NaturalSpline { xs, ys, m2 }
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => return self.ys[i],
            Err(i) => i - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m2[i] + (b * b * b - b) * self.m2[i + 1]) * h * h / 6.0
    }
}

/// Cell-center coordinates of an n-point axis in the unit interval.
fn cell_centers(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()
}

fn interp_axis_real(
    img: &[f64],
    shape: Shape3,
    axis: usize,
    target_n: usize,
) -> Result<(Vec<f64>, Shape3)> {
    let n = shape.axis_len(axis);
    if n < 2 {
        return Err(Error::Config(format!("axis {axis} has {n} samples, need >= 2")));
    }
    let src = cell_centers(n);
    let tgt = cell_centers(target_n);
    let mut out_shape = shape;
    match axis {
        0 => out_shape.nx = target_n,
        1 => out_shape.ny = target_n,
        _ => out_shape.nz = target_n,
    }
    let mut out = vec![0.0; out_shape.len()];
    let (onz, ony, onx) = (out_shape.nz, out_shape.ny, out_shape.nx);
    for z in 0..onz {
        for y in 0..ony {
            for x in 0..onx {
                let along = match axis {
                    0 => x,
                    1 => y,
                    _ => z,
                };
                if along != 0 {
                    continue;
                }
                let line: Vec<f64> = (0..n)
                    .map(|j| {
                        let idx = match axis {
                            0 => shape.idx(z, y, j),
                            1 => shape.idx(z, j, x),
                            _ => shape.idx(j, y, x),
                        };
                        img[idx]
                    })
                    .collect();
                let spline = NaturalSpline::new(src.clone(), line);
                for (k, &t) in tgt.iter().enumerate() {
                    let idx = match axis {
                        0 => out_shape.idx(z, y, k),
                        1 => out_shape.idx(z, k, x),
                        _ => out_shape.idx(k, y, x),
                    };
                    out[idx] = spline.eval(t);
                }
            }
        }
    }
    Ok((out, out_shape))
}

/// Separable natural cubic spline resampling from the source grid's cell
/// centers to the target grid's cell centers, real and imaginary parts
/// independently. Axes with target size equal to 1 are passed through.
pub fn cubic_interp(
    img: &[Complex64],
    source: Shape3,
    target: Shape3,
) -> Result<Vec<Complex64>> {
    if img.len() != source.len() {
        return Err(Error::Data("image length does not match source grid".into()));
    }
    for axis in 0..3 {
        let (s, t) = (source.axis_len(axis), target.axis_len(axis));
        if (s == 1) != (t == 1) {
            return Err(Error::Config(format!(
                "axis {axis} activity mismatch: source {s}, target {t}"
            )));
        }
    }
    let mut re: Vec<f64> = img.iter().map(|c| c.re).collect();
    let mut im: Vec<f64> = img.iter().map(|c| c.im).collect();
    let mut shape = source;
    for axis in 0..3 {
        let t = target.axis_len(axis);
        if shape.axis_len(axis) == t {
            continue;
        }
        let (re2, s2) = interp_axis_real(&re, shape, axis, t)?;
        let (im2, _) = interp_axis_real(&im, shape, axis, t)?;
        re = re2;
        im = im2;
        shape = s2;
    }
    Ok(re.iter().zip(&im).map(|(r, i)| Complex64::new(*r, *i)).collect())
}

// ---------------------------------------------------------------------------
// Biharmonic inpainting

/// Discrete Laplacian summed over active axes. The 1D second difference
/// uses the centered stencil inside and the shifted one-sided 3-point
/// stencil at line ends, so constants and affine fields are annihilated
/// exactly everywhere.
fn laplacian(img: &[f64], shape: Shape3, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for axis in 0..3 {
        let n = shape.axis_len(axis);
        if n < 3 {
            continue;
        }
        for z in 0..shape.nz {
            for y in 0..shape.ny {
                for x in 0..shape.nx {
                    let along = match axis {
                        0 => x,
                        1 => y,
                        _ => z,
                    };
                    if along != 0 {
                        continue;
                    }
                    let at = |j: usize| match axis {
                        0 => shape.idx(z, y, j),
                        1 => shape.idx(z, j, x),
                        _ => shape.idx(j, y, x),
                    };
                    for i in 0..n {
                        let c = i.clamp(1, n - 2); // shift stencil at ends
                        out[at(i)] += img[at(c - 1)] - 2.0 * img[at(c)] + img[at(c + 1)];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`laplacian`].
fn laplacian_adjoint(v: &[f64], shape: Shape3, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for axis in 0..3 {
        let n = shape.axis_len(axis);
        if n < 3 {
            continue;
        }
        for z in 0..shape.nz {
            for y in 0..shape.ny {
                for x in 0..shape.nx {
                    let along = match axis {
                        0 => x,
                        1 => y,
                        _ => z,
                    };
                    if along != 0 {
                        continue;
                    }
                    let at = |j: usize| match axis {
                        0 => shape.idx(z, y, j),
                        1 => shape.idx(z, j, x),
                        _ => shape.idx(j, y, x),
                    };
                    for i in 0..n {
                        let c = i.clamp(1, n - 2);
                        let w = v[at(i)];
                        out[at(c - 1)] += w;
                        out[at(c)] -= 2.0 * w;
                        out[at(c + 1)] += w;
                    }
                }
            }
        }
    }
}

/// L^T L restricted to the masked pixels (x is zero elsewhere).
struct MaskedBilaplacian<'a> {
    shape: Shape3,
    missing: &'a [usize],
    full: Vec<f64>,
    lap: Vec<f64>,
    ltl: Vec<f64>,
}

impl<'a> MaskedBilaplacian<'a> {
    fn new(shape: Shape3, missing: &'a [usize]) -> Self {
        let n = shape.len();
        MaskedBilaplacian {
            shape,
            missing,
            full: vec![0.0; n],
            lap: vec![0.0; n],
            ltl: vec![0.0; n],
        }
    }

    fn apply(&mut self, x: &[f64], out: &mut [f64]) {
        self.full.iter_mut().for_each(|v| *v = 0.0);
        for (xi, &idx) in x.iter().zip(self.missing) {
            self.full[idx] = *xi;
        }
        laplacian(&self.full, self.shape, &mut self.lap);
        laplacian_adjoint(&self.lap, self.shape, &mut self.ltl);
        for (o, &idx) in out.iter_mut().zip(self.missing) {
            *o = self.ltl[idx];
        }
    }
}

fn inpaint_real(img: &[f64], shape: Shape3, mask: &[bool]) -> Result<Vec<f64>> {
    let missing: Vec<usize> =
        mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    if missing.is_empty() {
        return Ok(img.to_vec());
    }
    if missing.len() == img.len() {
        return Err(Error::Data("inpainting mask leaves no known pixels".into()));
    }

    // right-hand side: -(L^T L u_known) on the masked pixels
    let n = shape.len();
    let known: Vec<f64> = img
        .iter()
        .zip(mask)
        .map(|(v, &m)| if m { 0.0 } else { *v })
        .collect();
    let mut lap = vec![0.0; n];
    let mut ltl = vec![0.0; n];
    laplacian(&known, shape, &mut lap);
    laplacian_adjoint(&lap, shape, &mut ltl);
    let b: Vec<f64> = missing.iter().map(|&i| -ltl[i]).collect();

    // conjugate gradient on the SPD masked normal equations
    let m = missing.len();
    let mut op = MaskedBilaplacian::new(shape, &missing);
    let mut x = vec![0.0; m];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; m];
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if b_norm == 0.0 {
        // known data already biharmonic on the mask (e.g. all zeros)
        let mut out = img.to_vec();
        for &i in &missing {
            out[i] = 0.0;
        }
        return Ok(out);
    }
    let tol = 1e-8 * b_norm;
    let max_iter = (10 * m).max(1000).min(200_000);
    let mut rs_old: f64 = r.iter().map(|v| v * v).sum();
    let mut converged = false;
    for _ in 0..max_iter {
        if rs_old.sqrt() <= tol {
            converged = true;
            break;
        }
        op.apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::Numeric("biharmonic system not positive definite".into()));
        }
        let alpha = rs_old / pap;
        for i in 0..m {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rs_new / rs_old;
        for i in 0..m {
            p[i] = r[i] + beta * p[i];
        }
        rs_old = rs_new;
    }
    if !converged && rs_old.sqrt() > tol {
        return Err(Error::Numeric(format!(
            "biharmonic CG did not converge: residual {:e}, tol {:e}",
            rs_old.sqrt(),
            tol
        )));
    }
    let mut out = img.to_vec();
    for (xi, &idx) in x.iter().zip(&missing) {
        out[idx] = *xi;
    }
    Ok(out)
}

/// Fills masked pixels by biharmonic extension; known pixels pass through
/// unchanged. Real and imaginary parts are treated independently.
pub fn biharmonic_inpaint(
    img: &[Complex64],
    shape: Shape3,
    mask: &InpaintingMask,
) -> Result<Vec<Complex64>> {
    if mask.shape != shape || img.len() != shape.len() {
        return Err(Error::Data("mask dims do not match image".into()));
    }
    let re: Vec<f64> = img.iter().map(|c| c.re).collect();
    let im: Vec<f64> = img.iter().map(|c| c.im).collect();
    let re = inpaint_real(&re, shape, &mask.mask)?;
    let im = inpaint_real(&im, shape, &mask.mask)?;
    Ok(re.iter().zip(&im).map(|(r, i)| Complex64::new(*r, *i)).collect())
}

// ---------------------------------------------------------------------------
// Per-component dispatch

/// Applies a restoration method to every (l, k) component of a system
/// matrix. Components are independent work units; output is identical for
/// any parallel schedule.
pub fn restore(sm: &SystemMatrix, method: &RestoreMethod) -> Result<SystemMatrix> {
    let out_grid = match method {
        RestoreMethod::CubicInterp { target } => *target,
        _ => sm.grid,
    };
    if let RestoreMethod::Biharmonic { mask } = method {
        if mask.shape != sm.grid {
            return Err(Error::Data("mask dims do not match system matrix".into()));
        }
    }

    let n_out = out_grid.len();
    let n_comp = sm.n_components();
    let results: Vec<Result<Vec<Complex64>>> = (0..n_comp)
        .into_par_iter()
        .map(|comp| {
            let (l, k) = (comp / sm.n_freq, comp % sm.n_freq);
            let img = sm.component_f64(l, k);
            match method {
                RestoreMethod::DctF { omega, sigma } => {
                    dctf_denoise(&img, sm.grid, *omega, sigma.get(comp))
                }
                RestoreMethod::CubicInterp { target } => cubic_interp(&img, sm.grid, *target),
                RestoreMethod::Biharmonic { mask } => biharmonic_inpaint(&img, sm.grid, mask),
            }
        })
        .collect();

    let mut data = vec![Complex32::new(0.0, 0.0); n_comp * n_out];
    for (comp, res) in results.into_iter().enumerate() {
        let restored = res.map_err(|e| {
            Error::Numeric(format!(
                "component ({}, {}): {e}",
                comp / sm.n_freq,
                comp % sm.n_freq
            ))
        })?;
        let off = comp * n_out;
        for (i, c) in restored.iter().enumerate() {
            data[off + i] = Complex32::new(c.re as f32, c.im as f32);
        }
    }

    let method_desc = match method {
        RestoreMethod::DctF { omega, .. } => format!("dctf(omega={omega})"),
        RestoreMethod::CubicInterp { target } => format!("cubic(target={:?})", target.xyz()),
        RestoreMethod::Biharmonic { .. } => "biharmonic".to_string(),
    };
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
        provenance: Provenance::Restored {
            method: method_desc,
            parent: Box::new(sm.provenance.clone()),
        },
    })
}
