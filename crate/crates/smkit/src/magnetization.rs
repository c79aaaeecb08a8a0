//! Equilibrium magnetization with uniaxial anisotropy.
//!
//! The mean magnetic moment is the Gibbs average of m over the unit sphere
//! with weight exp(βH·m + α_K (n·m)²), evaluated by a Gauss-Legendre ×
//! uniform product quadrature in (cosθ, φ). With α_K = 0 this reduces to
//! the Langevin model.

use serde::{Deserialize, Serialize};

use crate::consts::{KB, MU0};
use crate::error::{Error, Result};
use crate::fieldsim::ScannerSpec;
use crate::smsim::CalibrationSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mobility {
    /// Fluid particles: easy axis follows the selection field, anisotropy
    /// modulated spatially with exponent q.
    Fluid { q: f64 },
    /// Immobilized particles: fixed easy axis, fixed anisotropy.
    Immobilized { easy_axis: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSpec {
    /// Core diameter, meters.
    pub core_diameter: f64,
    /// Saturation magnetization, A/m.
    pub saturation_magnetization: f64,
    /// Particle temperature, kelvin.
    pub temperature: f64,
    /// Anisotropy constant, J/m³.
    pub anisotropy_constant: f64,
    pub mobility: Mobility,
}

impl ParticleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.core_diameter > 0.0) {
            return Err(Error::Config("core diameter must be positive".into()));
        }
        if !(self.saturation_magnetization > 0.0) || !(self.temperature > 0.0) {
            return Err(Error::Config(
                "saturation magnetization and temperature must be positive".into(),
            ));
        }
        if self.anisotropy_constant < 0.0 {
            return Err(Error::Config("anisotropy constant must be nonnegative".into()));
        }
        if let Mobility::Immobilized { easy_axis } = &self.mobility {
            let n2 = dot(*easy_axis, *easy_axis);
            if (n2.sqrt() - 1.0).abs() > 1e-12 {
                return Err(Error::Config("easy axis must have unit norm".into()));
            }
        }
        Ok(())
    }
}

/// Quantities derived deterministically from a [`ParticleSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedParticleParams {
    /// Single-particle moment m0 = π d³ M_S / 6, A·m².
    pub m0: f64,
    /// β = μ₀ m0 / (k_B T_P), m/A.
    pub beta: f64,
    /// Reduced anisotropy α = K_anis V_core / (k_B T_P), dimensionless.
    pub alpha_max: f64,
}

pub fn derive_params(spec: &ParticleSpec) -> Result<DerivedParticleParams> {
    spec.validate()?;
    let v_core = std::f64::consts::PI * spec.core_diameter.powi(3) / 6.0;
    let m0 = v_core * spec.saturation_magnetization;
    let kt = KB * spec.temperature;
    Ok(DerivedParticleParams {
        m0,
        beta: MU0 * m0 / kt,
        alpha_max: spec.anisotropy_constant * v_core / kt,
    })
}

#[inline]
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        // Chebyshev initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Product quadrature over the unit sphere: Gauss-Legendre in cosθ,
/// uniform (trapezoid) in φ with 2·order nodes.
///
/// The node set is symmetric under m → −m, so odd integrands cancel to
/// rounding error.
pub struct SphereQuad {
    /// Unit directions.
    pub nodes: Vec<[f64; 3]>,
    /// Quadrature weights; sum to 4π.
    pub weights: Vec<f64>,
}

impl SphereQuad {
    pub fn new(order: usize) -> Result<Self> {
        if order < 8 {
            return Err(Error::Config("quadrature order must be >= 8".into()));
        }
        let (u, wu) = gauss_legendre(order);
        let n_phi = 2 * order;
        let w_phi = 2.0 * std::f64::consts::PI / n_phi as f64;
        let mut nodes = Vec::with_capacity(order * n_phi);
        let mut weights = Vec::with_capacity(order * n_phi);
        for (ui, wi) in u.iter().zip(&wu) {
            let s = (1.0 - ui * ui).sqrt();
            for j in 0..n_phi {
                let phi = w_phi * j as f64;
                nodes.push([s * phi.cos(), s * phi.sin(), *ui]);
                weights.push(wi * w_phi);
            }
        }
        Ok(SphereQuad { nodes, weights })
    }

    /// log Z and the Gibbs expectation ⟨m⟩ in one pass. The exponent is
    /// shifted by its maximum before exponentiation so large β|H| cannot
    /// overflow.
    pub fn log_partition_and_mean(
        &self,
        beta_h: [f64; 3],
        alpha: f64,
        axis: [f64; 3],
    ) -> (f64, [f64; 3]) {
        let mut shift = f64::NEG_INFINITY;
        for m in &self.nodes {
            let nm = dot(axis, *m);
            let e = dot(beta_h, *m) + alpha * nm * nm;
            if e > shift {
                shift = e;
            }
        }
        let mut zs = 0.0;
        let mut ms = [0.0; 3];
        for (m, w) in self.nodes.iter().zip(&self.weights) {
            let nm = dot(axis, *m);
            let e = dot(beta_h, *m) + alpha * nm * nm - shift;
            let g = w * e.exp();
            zs += g;
            ms[0] += g * m[0];
            ms[1] += g * m[1];
            ms[2] += g * m[2];
        }
        (shift + zs.ln(), [ms[0] / zs, ms[1] / zs, ms[2] / zs])
    }
}

/// Partition function Z(βH; α_K, n) over the unit sphere.
pub fn partition_function(
    beta_h: [f64; 3],
    alpha: f64,
    axis: [f64; 3],
    quad_order: usize,
) -> Result<f64> {
    let quad = SphereQuad::new(quad_order)?;
    let (log_z, _) = quad.log_partition_and_mean(beta_h, alpha, axis);
    let z = log_z.exp();
    if !z.is_finite() {
        return Err(Error::Numeric(format!(
            "partition function overflow: log Z = {log_z}"
        )));
    }
    Ok(z)
}

/// Mean magnetic moment m̄(H) = m0 ⟨m⟩, A·m². The gradient of ln Z is
/// evaluated analytically as the Gibbs expectation of m.
pub fn mean_moment(
    params: &DerivedParticleParams,
    h: [f64; 3],
    alpha: f64,
    axis: [f64; 3],
    quad_order: usize,
) -> Result<[f64; 3]> {
    let quad = SphereQuad::new(quad_order)?;
    Ok(mean_moment_with(&quad, params, h, alpha, axis))
}

/// Same as [`mean_moment`] with a caller-owned quadrature (hot path).
pub fn mean_moment_with(
    quad: &SphereQuad,
    params: &DerivedParticleParams,
    h: [f64; 3],
    alpha: f64,
    axis: [f64; 3],
) -> [f64; 3] {
    let bh = [params.beta * h[0], params.beta * h[1], params.beta * h[2]];
    let (_, m) = quad.log_partition_and_mean(bh, alpha, axis);
    [params.m0 * m[0], params.m0 * m[1], params.m0 * m[2]]
}

/// Langevin function L(ξ) = coth ξ − 1/ξ, the α_K = 0 closed form.
pub fn langevin(xi: f64) -> f64 {
    if xi.abs() < 1e-4 {
        // series: ξ/3 − ξ³/45
        xi / 3.0 - xi * xi * xi / 45.0
    } else {
        1.0 / xi.tanh() - 1.0 / xi
    }
}

/// Spatial anisotropy model: maps position to (α_K(r), n(r)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AnisotropyField {
    /// Immobilized particles: constant strength and axis.
    Constant { alpha: f64, axis: [f64; 3] },
    /// Fluid particles: axis along the selection field,
    /// α_K(r) = alpha_max (|H_SF(r)|/H_max)^q.
    FluidSf {
        gradients: [f64; 3],
        alpha_max: f64,
        q: f64,
        /// Selection-field magnitude at the calibration-FOV corner.
        h_max: f64,
    },
}

impl AnisotropyField {
    pub fn eval(&self, r: [f64; 3]) -> (f64, [f64; 3]) {
        match self {
            AnisotropyField::Constant { alpha, axis } => (*alpha, *axis),
            AnisotropyField::FluidSf { gradients, alpha_max, q, h_max } => {
                let h = [gradients[0] * r[0], gradients[1] * r[1], gradients[2] * r[2]];
                let hn = dot(h, h).sqrt();
                if hn == 0.0 || *h_max == 0.0 {
                    (0.0, [0.0, 0.0, 1.0])
                } else {
                    let axis = [h[0] / hn, h[1] / hn, h[2] / hn];
                    (alpha_max * (hn / h_max).powf(*q), axis)
                }
            }
        }
    }
}

/// Builds the anisotropy field for a particle in a given scanner and
/// calibration geometry. The fluid normalization point H_max is the
/// largest selection-field magnitude over the calibration-FOV corners.
pub fn anisotropy_field(
    spec: &ParticleSpec,
    scanner: &ScannerSpec,
    calib: &CalibrationSpec,
) -> Result<AnisotropyField> {
    let params = derive_params(spec)?;
    match &spec.mobility {
        Mobility::Immobilized { easy_axis } => Ok(AnisotropyField::Constant {
            alpha: params.alpha_max,
            axis: *easy_axis,
        }),
        Mobility::Fluid { q } => {
            let mut h_max = 0.0f64;
            for sz in [-0.5, 0.5] {
                for sy in [-0.5, 0.5] {
                    for sx in [-0.5, 0.5] {
                        let r = [
                            calib.center[0] + sx * calib.fov[0],
                            calib.center[1] + sy * calib.fov[1],
                            calib.center[2] + sz * calib.fov[2],
                        ];
                        let h = scanner.selection_field(r);
                        h_max = h_max.max(dot(h, h).sqrt());
                    }
                }
            }
            Ok(AnisotropyField::FluidSf {
                gradients: scanner.gradients,
                alpha_max: params.alpha_max,
                q: *q,
                h_max,
            })
        }
    }
}
