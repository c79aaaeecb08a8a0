//! Applied magnetic field for FFP scanners with Lissajous trajectories.
//!
//! The total field is the superposition of a static selection field
//! H_SF(r) = G ⊙ r and a homogeneous sinusoidal drive field
//! H_DF(t) = A ⊙ sin(2π f t). All fields are in A/m internally; table
//! units (T·m⁻¹·μ₀⁻¹, mT·μ₀⁻¹) are converted at the construction boundary.

use serde::{Deserialize, Serialize};

use crate::consts::MU0;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScannerSpec {
    /// Selection-field gradient per axis, A/m².
    pub gradients: [f64; 3],
    /// Drive-field amplitudes per axis, A/m. A zero amplitude marks an
    /// inactive axis (2D: exactly one zero, 1D: two zeros).
    pub df_amplitudes: [f64; 3],
    /// Drive-field frequency dividers; f_i = f_base / d_i.
    pub df_dividers: [u32; 3],
    /// Base frequency, Hz.
    pub f_base: f64,
    /// Receive sampling rate, Hz.
    pub sampling_rate: f64,
}

/// Timing quantities of one Lissajous period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTiming {
    /// Least common period of the active drive frequencies, seconds.
    pub period: f64,
    /// Samples per period at the scanner sampling rate.
    pub n_samples: usize,
    /// One-sided spectrum length including DC: n_samples/2 + 1.
    pub n_freq: usize,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

impl ScannerSpec {
    /// Builds a spec from the parameter-table units: gradients in
    /// T·m⁻¹·μ₀⁻¹, amplitudes in mT·μ₀⁻¹.
    pub fn from_table_units(
        gradients_t_per_m: [f64; 3],
        df_amplitudes_mt: [f64; 3],
        df_dividers: [u32; 3],
        f_base: f64,
        sampling_rate: f64,
    ) -> Self {
        ScannerSpec {
            gradients: gradients_t_per_m.map(|g| g / MU0),
            df_amplitudes: df_amplitudes_mt.map(|a| a * 1e-3 / MU0),
            df_dividers,
            f_base,
            sampling_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let gsum: f64 = self.gradients.iter().sum();
        let gmax = self.gradients.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax == 0.0 {
            return Err(Error::Config("all gradients are zero".into()));
        }
        if gsum.abs() > 1e-12 * gmax {
            return Err(Error::Config(format!(
                "gradients violate Gauss constraint: sum = {gsum:e} A/m^2"
            )));
        }
        if self.df_amplitudes.iter().any(|&a| a < 0.0) {
            return Err(Error::Config("negative drive-field amplitude".into()));
        }
        if self.df_amplitudes.iter().all(|&a| a == 0.0) {
            return Err(Error::Config("no active drive-field axis".into()));
        }
        if self.df_dividers.iter().any(|&d| d == 0) {
            return Err(Error::Config("drive-field dividers must be positive".into()));
        }
        if !(self.f_base > 0.0) || !(self.sampling_rate > 0.0) {
            return Err(Error::Config("f_base and sampling_rate must be positive".into()));
        }
        self.trajectory_timing()?;
        Ok(())
    }

    /// Axis activity mask: an axis is active iff its amplitude is nonzero.
    pub fn active_axes(&self) -> [bool; 3] {
        self.df_amplitudes.map(|a| a > 0.0)
    }

    pub fn is_3d(&self) -> bool {
        self.df_amplitudes.iter().all(|&a| a > 0.0)
    }

    /// Drive frequency on axis i, Hz.
    pub fn df_frequency(&self, i: usize) -> f64 {
        self.f_base / self.df_dividers[i] as f64
    }

    /// Static selection field H_SF(r) = G ⊙ r, A/m.
    pub fn selection_field(&self, r: [f64; 3]) -> [f64; 3] {
        [
            self.gradients[0] * r[0],
            self.gradients[1] * r[1],
            self.gradients[2] * r[2],
        ]
    }

    /// Drive field H_DF(t) = A ⊙ sin(2π f t), A/m. Phases are zero.
    pub fn drive_field(&self, t: f64) -> [f64; 3] {
        let mut h = [0.0; 3];
        for i in 0..3 {
            if self.df_amplitudes[i] > 0.0 {
                h[i] = self.df_amplitudes[i]
                    * (2.0 * std::f64::consts::PI * self.df_frequency(i) * t).sin();
            }
        }
        h
    }

    /// H(r, t) = H_SF(r) + H_DF(t), A/m.
    pub fn total_field(&self, r: [f64; 3], t: f64) -> [f64; 3] {
        let s = self.selection_field(r);
        let d = self.drive_field(t);
        [s[0] + d[0], s[1] + d[1], s[2] + d[2]]
    }

    /// Least common period of active axes and derived sample counts.
    pub fn trajectory_timing(&self) -> Result<TrajectoryTiming> {
        let mut l: u64 = 1;
        for i in 0..3 {
            if self.df_amplitudes[i] > 0.0 {
                l = lcm(l, self.df_dividers[i] as u64);
            }
        }
        let period = l as f64 / self.f_base;
        let ns = self.sampling_rate * period;
        let n_samples = ns.round();
        if (ns - n_samples).abs() > 1e-9 || (n_samples as u64) % 2 != 0 {
            return Err(Error::Config(format!(
                "sampling_rate * period = {ns} is not an even integer"
            )));
        }
        let n_samples = n_samples as usize;
        Ok(TrajectoryTiming {
            period,
            n_samples,
            n_freq: n_samples / 2 + 1,
        })
    }

    /// Drive-field FOV per axis: 2 A_i / |G_i| on active axes, 0 otherwise.
    pub fn df_fov(&self) -> Result<[f64; 3]> {
        let mut fov = [0.0; 3];
        for i in 0..3 {
            if self.df_amplitudes[i] > 0.0 {
                if self.gradients[i] == 0.0 {
                    return Err(Error::Config(format!(
                        "zero gradient on active axis {i}"
                    )));
                }
                fov[i] = 2.0 * self.df_amplitudes[i] / self.gradients[i].abs();
            }
        }
        Ok(fov)
    }

    /// Instantaneous field-free point position, meters.
    pub fn ffp_position(&self, t: f64) -> [f64; 3] {
        let d = self.drive_field(t);
        let mut r = [0.0; 3];
        for i in 0..3 {
            if self.gradients[i] != 0.0 {
                r[i] = -d[i] / self.gradients[i];
            }
        }
        r
    }
}
