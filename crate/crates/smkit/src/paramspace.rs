//! Randomized parameter sampling and dataset manifests.
//!
//! Every manifest entry draws from its own ChaCha8 stream derived from
//! (global seed, entry id), so entries are independently reproducible and
//! independent of generation order. ChaCha8 is a counter-based generator
//! with identical output on all platforms.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fieldsim::ScannerSpec;
use crate::magnetization::{derive_params, Mobility, ParticleSpec};
use crate::shape::Shape3;
use crate::smsim::CalibrationSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimensionality {
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "3d")]
    ThreeD,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Distribution bounds of the sampled parameter space. Defaults follow
/// the simulation-parameter table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingBounds {
    /// Core diameter range, nm; the cubed diameter is sampled uniformly.
    pub d_p_nm: (f64, f64),
    /// log10 of the anisotropy constant in J/m³.
    pub k_anis_log10: (f64, f64),
    /// Fluid spatial modulation exponent.
    pub q: (f64, f64),
    /// Probability of drawing a fluid particle.
    pub p_fluid: f64,
    /// Gradient range, T·m⁻¹·μ₀⁻¹, for G_x and G_y.
    pub gradient_t_per_m: (f64, f64),
    /// Drive-field amplitude range, mT·μ₀⁻¹.
    pub amplitude_mt: (f64, f64),
    /// Calibration-FOV oversize factor relative to the DF FOV.
    pub fov_factor: (f64, f64),
    /// Grid sizing factor applied to FOV/R_FWHM.
    pub grid_factor: (f64, f64),
}

impl Default for SamplingBounds {
    fn default() -> Self {
        SamplingBounds {
            d_p_nm: (15.0, 25.0),
            k_anis_log10: (3.0, 4.0),
            q: (0.3, 1.3),
            p_fluid: 0.5,
            gradient_t_per_m: (0.1, 1.5),
            amplitude_mt: (5.0, 14.0),
            fov_factor: (1.0, 2.0),
            grid_factor: (6.24, 8.32),
        }
    }
}

impl SamplingBounds {
    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("d_p_nm", self.d_p_nm),
            ("k_anis_log10", self.k_anis_log10),
            ("q", self.q),
            ("gradient_t_per_m", self.gradient_t_per_m),
            ("amplitude_mt", self.amplitude_mt),
            ("fov_factor", self.fov_factor),
            ("grid_factor", self.grid_factor),
        ] {
            if !(lo <= hi) {
                return Err(Error::Config(format!("bounds {name} not ordered: {lo} > {hi}")));
            }
        }
        if !(0.0..=1.0).contains(&self.p_fluid) {
            return Err(Error::Config("p_fluid must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub seed: u64,
    pub dimensionality: Dimensionality,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub bounds: SamplingBounds,
    /// Drive-field dividers, fixed per the parameter table.
    pub df_dividers: [u32; 3],
    pub f_base: f64,
    pub sampling_rate: f64,
    /// Grid-size clamp per active axis.
    pub min_grid: usize,
    pub max_grid: usize,
    /// Spherical quadrature order used when entries are simulated.
    pub quad_order: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            seed: 0,
            dimensionality: Dimensionality::TwoD,
            n_train: 1000,
            n_val: 300,
            n_test: 300,
            bounds: SamplingBounds::default(),
            df_dividers: [102, 96, 99],
            f_base: 2.5e6,
            sampling_rate: 5.0e6,
            min_grid: 2,
            max_grid: 64,
            quad_order: 48,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if self.min_grid < 2 || self.max_grid < self.min_grid {
            return Err(Error::Config("grid clamp must satisfy 2 <= min <= max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: u64,
    pub split: Split,
    /// Stream id of the entry's RNG (equals `id`; recorded for replay).
    pub stream: u64,
    pub scanner: ScannerSpec,
    pub particle: ParticleSpec,
    pub calibration: CalibrationSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: SamplingConfig,
    pub entries: Vec<ManifestEntry>,
}

/// ChaCha8 stream for one entry: the 256-bit key is expanded from the
/// global seed with SplitMix64; the entry id selects the stream.
pub fn entry_rng(seed: u64, id: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut s = seed;
    for chunk in key.chunks_exact_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(id);
    rng
}

fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

pub fn sample_particle(rng: &mut impl Rng, bounds: &SamplingBounds) -> ParticleSpec {
    let (lo, hi) = bounds.d_p_nm;
    let d_cubed = uniform(rng, lo.powi(3), hi.powi(3));
    let d_p = d_cubed.cbrt() * 1e-9;
    let k_anis = 10f64.powf(uniform(rng, bounds.k_anis_log10.0, bounds.k_anis_log10.1));
    let fluid = rng.gen::<f64>() < bounds.p_fluid;
    let mobility = if fluid {
        Mobility::Fluid { q: uniform(rng, bounds.q.0, bounds.q.1) }
    } else {
        // uniform on the sphere via normalized standard normals
        loop {
            let v: [f64; 3] = [
                rng.sample(rand_distr::StandardNormal),
                rng.sample(rand_distr::StandardNormal),
                rng.sample(rand_distr::StandardNormal),
            ];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 1e-12 {
                break Mobility::Immobilized { easy_axis: [v[0] / n, v[1] / n, v[2] / n] };
            }
        }
    };
    ParticleSpec {
        core_diameter: d_p,
        saturation_magnetization: 474000.0,
        temperature: 293.0,
        anisotropy_constant: k_anis,
        mobility,
    }
}

pub fn sample_scanner(rng: &mut impl Rng, config: &SamplingConfig) -> ScannerSpec {
    let b = &config.bounds;
    let gx = uniform(rng, b.gradient_t_per_m.0, b.gradient_t_per_m.1);
    let gy = uniform(rng, b.gradient_t_per_m.0, b.gradient_t_per_m.1);
    let gz = -(gx + gy);
    let ax = uniform(rng, b.amplitude_mt.0, b.amplitude_mt.1);
    let ay = uniform(rng, b.amplitude_mt.0, b.amplitude_mt.1);
    let az = match config.dimensionality {
        Dimensionality::TwoD => 0.0,
        Dimensionality::ThreeD => uniform(rng, b.amplitude_mt.0, b.amplitude_mt.1),
    };
    ScannerSpec::from_table_units(
        [gx, gy, gz],
        [ax, ay, az],
        config.df_dividers,
        config.f_base,
        config.sampling_rate,
    )
}

/// FWHM of the 1D MPI convolution kernel: 4.16 / (β |G_i|), meters.
pub fn fwhm_resolution(beta: f64, gradient: f64) -> f64 {
    4.16 / (beta * gradient.abs())
}

pub fn sample_calibration(
    rng: &mut impl Rng,
    scanner: &ScannerSpec,
    particle: &ParticleSpec,
    config: &SamplingConfig,
) -> Result<CalibrationSpec> {
    let params = derive_params(particle)?;
    let df_fov = scanner.df_fov()?;
    let b = &config.bounds;
    let mut fov = [0.0; 3];
    let mut center = [0.0; 3];
    let mut grid = [1usize; 3];
    for i in 0..3 {
        if scanner.df_amplitudes[i] == 0.0 {
            continue;
        }
        fov[i] = df_fov[i] * uniform(rng, b.fov_factor.0, b.fov_factor.1);
        let margin = (fov[i] - df_fov[i]) / 2.0;
        center[i] = uniform(rng, -margin, margin);
        let r_fwhm = fwhm_resolution(params.beta, scanner.gradients[i]);
        let factor = uniform(rng, b.grid_factor.0, b.grid_factor.1);
        let n = (fov[i] / r_fwhm * factor).round_ties_even() as i64;
        grid[i] = (n.max(config.min_grid as i64) as usize).min(config.max_grid);
    }
    Ok(CalibrationSpec {
        fov,
        center,
        grid: Shape3::from_xyz(grid),
    })
}

/// Samples one complete (particle, scanner, calibration) triple.
pub fn sample_entry(
    rng: &mut impl Rng,
    config: &SamplingConfig,
) -> Result<(ParticleSpec, ScannerSpec, CalibrationSpec)> {
    let particle = sample_particle(rng, &config.bounds);
    let scanner = sample_scanner(rng, config);
    let calibration = sample_calibration(rng, &scanner, &particle, config)?;
    Ok((particle, scanner, calibration))
}

pub fn build_manifest(config: &SamplingConfig) -> Result<DatasetManifest> {
    config.validate()?;
    let mut entries = Vec::with_capacity(config.n_train + config.n_val + config.n_test);
    let splits = [
        (Split::Train, config.n_train),
        (Split::Val, config.n_val),
        (Split::Test, config.n_test),
    ];
    let mut id: u64 = 0;
    for (split, count) in splits {
        for _ in 0..count {
            let mut rng = entry_rng(config.seed, id);
            let (particle, scanner, calibration) = sample_entry(&mut rng, config)?;
            entries.push(ManifestEntry {
                id,
                split,
                stream: id,
                scanner,
                particle,
                calibration,
            });
            id += 1;
        }
    }
    Ok(DatasetManifest { config: config.clone(), entries })
}
