//! Discrete system-matrix simulation.
//!
//! Per calibration position the mean moment is sampled over one trajectory
//! period; the time derivative inside the system-function integral is
//! applied spectrally as a 2πik/T multiplication of the one-sided DFT
//! coefficients (convention: ĉ_k = (1/n) Σ_j x_j e^{−2πikj/n}).

use num_complex::{Complex32, Complex64};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::consts::MU0;
use crate::error::{Error, Result};
use crate::fieldsim::{ScannerSpec, TrajectoryTiming};
use crate::magnetization::{
    anisotropy_field, derive_params, mean_moment_with, AnisotropyField, DerivedParticleParams,
    ParticleSpec, SphereQuad,
};
use crate::shape::Shape3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    /// Calibration FOV per axis (x, y, z), meters.
    pub fov: [f64; 3],
    /// FOV center, meters.
    pub center: [f64; 3],
    /// Grid size; 1 on inactive axes.
    pub grid: Shape3,
}

impl CalibrationSpec {
    pub fn validate(&self, scanner: &ScannerSpec) -> Result<()> {
        let active = scanner.active_axes();
        for i in 0..3 {
            if active[i] && !(self.fov[i] > 0.0) {
                return Err(Error::Config(format!("calibration fov[{i}] must be positive")));
            }
        }
        if self.grid.len() == 0 {
            return Err(Error::Config("empty calibration grid".into()));
        }
        Ok(())
    }

    /// Cell-center position of grid index (ix, iy, iz), meters:
    /// r_i = center + fov · ((idx + 0.5)/N − 0.5).
    pub fn position(&self, ix: usize, iy: usize, iz: usize) -> [f64; 3] {
        let n = [self.grid.nx, self.grid.ny, self.grid.nz];
        let idx = [ix, iy, iz];
        let mut r = [0.0; 3];
        for i in 0..3 {
            r[i] = self.center[i] + self.fov[i] * ((idx[i] as f64 + 0.5) / n[i] as f64 - 0.5);
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiveChain {
    /// Constant unit sensitivity vector per receive channel.
    pub coil_sensitivities: Vec<[f64; 3]>,
    /// Analog transfer function a_k; `None` means identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer_function: Option<Vec<Complex64>>,
}

impl ReceiveChain {
    /// Ideal axis-aligned coils: x/y for 2D scanners, x/y/z for 3D.
    pub fn ideal(scanner: &ScannerSpec) -> Self {
        let mut coils = vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        if scanner.is_3d() {
            coils.push([0.0, 0.0, 1.0]);
        }
        ReceiveChain { coil_sensitivities: coils, transfer_function: None }
    }

    pub fn n_channels(&self) -> usize {
        self.coil_sensitivities.len()
    }

    pub fn transfer(&self, k: usize) -> Complex64 {
        match &self.transfer_function {
            Some(a) => a[k],
            None => Complex64::new(1.0, 0.0),
        }
    }

    pub fn validate(&self, n_freq: usize) -> Result<()> {
        let l = self.coil_sensitivities.len();
        if !(2..=3).contains(&l) {
            return Err(Error::Config(format!("channel count {l} not in 2..=3")));
        }
        for p in &self.coil_sensitivities {
            let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            if (n - 1.0).abs() > 1e-12 {
                return Err(Error::Config("coil sensitivity must be a unit vector".into()));
            }
        }
        if let Some(a) = &self.transfer_function {
            if a.len() != n_freq {
                return Err(Error::Config("transfer function length != n_freq".into()));
            }
        }
        Ok(())
    }
}

/// Origin of a system matrix, including the per-component scale factors
/// recorded by the corruption step so restorations can be mapped back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Simulated {
        seed: u64,
    },
    Corrupted {
        task: String,
        sigma: f64,
        seed: u64,
        /// Max GT amplitude per (l,k) component before normalization.
        gt_max: Vec<f64>,
        /// Max corrupted amplitude per component before renormalization.
        corrupt_max: Vec<f64>,
        parent: Box<Provenance>,
    },
    Restored {
        method: String,
        parent: Box<Provenance>,
    },
}

impl Provenance {
    /// Innermost corruption record of the chain, if any.
    pub fn corruption(&self) -> Option<&Provenance> {
        match self {
            Provenance::Simulated { .. } => None,
            Provenance::Corrupted { .. } => Some(self),
            Provenance::Restored { parent, .. } => parent.corruption(),
        }
    }
}

/// Complex system matrix over (L, K, Nz, Ny, Nx), row-major in that order.
/// The payload is float32 so the on-disk file round-trips bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrix {
    pub data: Vec<Complex32>,
    pub n_channels: usize,
    pub n_freq: usize,
    pub grid: Shape3,
    pub scanner: ScannerSpec,
    pub particle: ParticleSpec,
    pub calibration: CalibrationSpec,
    pub receive: ReceiveChain,
    pub provenance: Provenance,
}

impl SystemMatrix {
    pub fn n_positions(&self) -> usize {
        self.grid.len()
    }

    pub fn n_components(&self) -> usize {
        self.n_channels * self.n_freq
    }

    #[inline]
    fn comp_offset(&self, l: usize, k: usize) -> usize {
        (l * self.n_freq + k) * self.grid.len()
    }

    /// Spatial image of frequency component (l, k), length N.
    pub fn component(&self, l: usize, k: usize) -> &[Complex32] {
        let o = self.comp_offset(l, k);
        &self.data[o..o + self.grid.len()]
    }

    pub fn component_mut(&mut self, l: usize, k: usize) -> &mut [Complex32] {
        let o = self.comp_offset(l, k);
        let n = self.grid.len();
        &mut self.data[o..o + n]
    }

    pub fn component_f64(&self, l: usize, k: usize) -> Vec<Complex64> {
        self.component(l, k)
            .iter()
            .map(|c| Complex64::new(c.re as f64, c.im as f64))
            .collect()
    }

    /// Zero-filled matrix with placeholder specs, for unit tests that only
    /// exercise the data layout.
    #[cfg(test)]
    pub(crate) fn zeros_for_test(n_channels: usize, n_freq: usize, grid: Shape3) -> Self {
        let scanner = ScannerSpec {
            gradients: [-1.0, -1.0, 2.0],
            df_amplitudes: [0.01, 0.01, 0.0],
            df_dividers: [102, 96, 99],
            f_base: 2.5e6,
            sampling_rate: 5.0e6,
        };
        let particle = ParticleSpec {
            core_diameter: 20e-9,
            saturation_magnetization: 474e3,
            temperature: 293.0,
            anisotropy_constant: 0.0,
            mobility: crate::magnetization::Mobility::Fluid { q: 1.0 },
        };
        let calibration = CalibrationSpec {
            fov: [0.02, 0.02, 0.01],
            center: [0.0; 3],
            grid,
        };
        let receive = ReceiveChain::ideal(&scanner);
        SystemMatrix {
            data: vec![Complex32::new(0.0, 0.0); n_channels * n_freq * grid.len()],
            n_channels,
            n_freq,
            grid,
            scanner,
            particle,
            calibration,
            receive,
            provenance: Provenance::Simulated { seed: 0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.n_channels * self.n_freq * self.grid.len() {
            return Err(Error::Data("system matrix dims inconsistent".into()));
        }
        if self.data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Data("system matrix contains non-finite values".into()));
        }
        Ok(())
    }
}

/// Mean-moment time series m̄(H(r, t_j)) at t_j = j/f_s, j ∈ [0, n).
pub fn magnetization_series(
    scanner: &ScannerSpec,
    params: &DerivedParticleParams,
    aniso: &AnisotropyField,
    timing: &TrajectoryTiming,
    r: [f64; 3],
    quad: &SphereQuad,
) -> Result<Vec<[f64; 3]>> {
    let (alpha, axis) = aniso.eval(r);
    let dt = 1.0 / scanner.sampling_rate;
    let mut out = Vec::with_capacity(timing.n_samples);
    for j in 0..timing.n_samples {
        let h = scanner.total_field(r, j as f64 * dt);
        let m = mean_moment_with(quad, params, h, alpha, axis);
        if m.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite magnetization at r = {r:?}, t index {j}"
            )));
        }
        out.push(m);
    }
    Ok(out)
}

/// One-sided DFT coefficients ĉ_k = (1/n) Σ_j x_j e^{−2πikj/n}, k ∈ [0, K).
pub fn dft_onesided(x: &[f64], n_freq: usize) -> Vec<Complex64> {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.truncate(n_freq);
    for c in &mut buf {
        *c /= n as f64;
    }
    buf
}

/// System-function column s_{l,k}(r) for all (l, k), returned row-major
/// over (L, K) in f64 precision.
pub fn simulate_column(
    scanner: &ScannerSpec,
    params: &DerivedParticleParams,
    aniso: &AnisotropyField,
    receive: &ReceiveChain,
    timing: &TrajectoryTiming,
    r: [f64; 3],
    quad: &SphereQuad,
) -> Result<Vec<Complex64>> {
    let series = magnetization_series(scanner, params, aniso, timing, r, quad)?;
    let k_max = timing.n_freq;

    // one-sided DFT of each moment component
    let mut coeffs = Vec::with_capacity(3);
    for axis in 0..3 {
        let x: Vec<f64> = series.iter().map(|m| m[axis]).collect();
        coeffs.push(dft_onesided(&x, k_max));
    }

    let l_ch = receive.n_channels();
    let mut out = vec![Complex64::new(0.0, 0.0); l_ch * k_max];
    let two_pi_over_t = 2.0 * std::f64::consts::PI / timing.period;
    for k in 0..k_max {
        // spectral time derivative: multiply by 2πik/T
        let ik = Complex64::new(0.0, two_pi_over_t * k as f64);
        let v = [coeffs[0][k] * ik, coeffs[1][k] * ik, coeffs[2][k] * ik];
        let a = receive.transfer(k);
        for (l, p) in receive.coil_sensitivities.iter().enumerate() {
            let proj = v[0] * p[0] + v[1] * p[1] + v[2] * p[2];
            out[l * k_max + k] = -a * MU0 * proj;
        }
    }
    Ok(out)
}

/// Simulates the full system matrix: one column per grid position.
/// Columns are independent; the output is identical for any scheduling.
pub fn simulate_system_matrix(
    scanner: &ScannerSpec,
    particle: &ParticleSpec,
    calibration: &CalibrationSpec,
    receive: &ReceiveChain,
    quad_order: usize,
    seed: u64,
) -> Result<SystemMatrix> {
    scanner.validate()?;
    calibration.validate(scanner)?;
    let timing = scanner.trajectory_timing()?;
    receive.validate(timing.n_freq)?;
    let params = derive_params(particle)?;
    let aniso = anisotropy_field(particle, scanner, calibration)?;
    let quad = SphereQuad::new(quad_order)?;

    let grid = calibration.grid;
    let n = grid.len();
    let columns: Vec<Result<Vec<Complex64>>> = (0..n)
        .into_par_iter()
        .map(|flat| {
            let (z, y, x) = grid.coords(flat);
            let r = calibration.position(x, y, z);
            simulate_column(scanner, &params, &aniso, receive, &timing, r, &quad)
        })
        .collect();

    let l_ch = receive.n_channels();
    let k_max = timing.n_freq;
    let mut data = vec![Complex32::new(0.0, 0.0); l_ch * k_max * n];
    for (flat, col) in columns.into_iter().enumerate() {
        let col = col?;
        for l in 0..l_ch {
            for k in 0..k_max {
                let c = col[l * k_max + k];
                data[(l * k_max + k) * n + flat] = Complex32::new(c.re as f32, c.im as f32);
            }
        }
    }

    Ok(SystemMatrix {
        data,
        n_channels: l_ch,
        n_freq: k_max,
        grid,
        scanner: scanner.clone(),
        particle: particle.clone(),
        calibration: calibration.clone(),
        receive: receive.clone(),
        provenance: Provenance::Simulated { seed },
    })
}

/// Synthesizes a measurement u = S·vec(c) (+ optional additive noise),
/// returned row-major over (L, K).
pub fn simulate_measurement(
    sm: &SystemMatrix,
    concentration: &[f64],
    noise: Option<&[Complex64]>,
) -> Result<Vec<Complex64>> {
    let n = sm.n_positions();
    if concentration.len() != n {
        return Err(Error::Data(format!(
            "concentration has {} entries, system matrix has {n} positions",
            concentration.len()
        )));
    }
    let m = sm.n_components();
    if let Some(nz) = noise {
        if nz.len() != m {
            return Err(Error::Data("noise vector length mismatch".into()));
        }
    }
    let mut u = vec![Complex64::new(0.0, 0.0); m];
    for l in 0..sm.n_channels {
        for k in 0..sm.n_freq {
            let row = sm.component(l, k);
            let mut acc = Complex64::new(0.0, 0.0);
            for (s, c) in row.iter().zip(concentration) {
                acc += Complex64::new(s.re as f64, s.im as f64) * c;
            }
            u[l * sm.n_freq + k] = acc;
        }
    }
    if let Some(nz) = noise {
        for (ui, ni) in u.iter_mut().zip(nz) {
            *ui += ni;
        }
    }
    Ok(u)
}
