//! On-disk formats: raw tensor files, system-matrix directories with a
//! JSON metadata sidecar, and PGM plot emission.
//!
//! Tensor file layout (all integers little-endian u64):
//! magic "SMK1" | dtype | ndim | dims[ndim] | payload. Payloads are
//! little-endian float32; complex values are stored interleaved re, im.

use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::corrupt::{BackgroundFrames, InpaintingMask};
use crate::error::{Error, Result};
use crate::fieldsim::ScannerSpec;
use crate::magnetization::ParticleSpec;
use crate::shape::Shape3;
use crate::smsim::{CalibrationSpec, Provenance, ReceiveChain, SystemMatrix};

pub const SCHEMA_VERSION: u64 = 1;
const MAGIC: &[u8; 4] = b"SMK1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    Complex64,
}

impl Dtype {
    fn code(self) -> u64 {
        match self {
            Dtype::F32 => 0,
            Dtype::Complex64 => 1,
        }
    }

    fn from_code(c: u64) -> Result<Self> {
        match c {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::Complex64),
            other => Err(Error::Data(format!("unknown tensor dtype code {other}"))),
        }
    }

    fn floats_per_elem(self) -> usize {
        match self {
            Dtype::F32 => 1,
            Dtype::Complex64 => 2,
        }
    }
}

/// In-memory tensor: raw f32 values (complex interleaved) plus dims.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dtype: Dtype,
    pub dims: Vec<u64>,
    pub values: Vec<f32>,
}

impl Tensor {
    pub fn n_elems(&self) -> usize {
        self.dims.iter().product::<u64>() as usize
    }

    pub fn from_complex(dims: Vec<u64>, data: &[Complex32]) -> Result<Self> {
        let n: u64 = dims.iter().product();
        if data.len() as u64 != n {
            return Err(Error::Data("tensor dims do not match data length".into()));
        }
        let mut values = Vec::with_capacity(data.len() * 2);
        for c in data {
            values.push(c.re);
            values.push(c.im);
        }
        Ok(Tensor { dtype: Dtype::Complex64, dims, values })
    }

    pub fn to_complex(&self) -> Result<Vec<Complex32>> {
        if self.dtype != Dtype::Complex64 {
            return Err(Error::Data("tensor is not complex".into()));
        }
        Ok(self.values.chunks_exact(2).map(|p| Complex32::new(p[0], p[1])).collect())
    }
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let expect = t.n_elems() * t.dtype.floats_per_elem();
    if t.values.len() != expect {
        return Err(Error::Data(format!(
            "tensor payload has {} floats, dims require {expect}",
            t.values.len()
        )));
    }
    let mut buf =
        Vec::with_capacity(4 + 8 * (2 + t.dims.len()) + 4 * t.values.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&t.dtype.code().to_le_bytes());
    buf.extend_from_slice(&(t.dims.len() as u64).to_le_bytes());
    for &d in &t.dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in &t.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > buf.len() {
            return Err(Error::Data(format!("{}: truncated tensor file", path.display())));
        }
        let s = &buf[*off..*off + n];
        *off += n;
        Ok(s)
    };
    let mut off = 0usize;
    if take(&mut off, 4)? != MAGIC {
        return Err(Error::Data(format!("{}: bad magic, not a tensor file", path.display())));
    }
    let u64_at = |off: &mut usize| -> Result<u64> {
        let s = take(off, 8)?;
        Ok(u64::from_le_bytes(s.try_into().unwrap()))
    };
    let dtype = Dtype::from_code(u64_at(&mut off)?)?;
    let ndim = u64_at(&mut off)? as usize;
    if ndim > 16 {
        return Err(Error::Data(format!("{}: implausible ndim {ndim}", path.display())));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(u64_at(&mut off)?);
    }
    let n_floats = dims.iter().product::<u64>() as usize * dtype.floats_per_elem();
    let payload = take(&mut off, 4 * n_floats)?;
    if off != buf.len() {
        return Err(Error::Data(format!("{}: trailing bytes after payload", path.display())));
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(Tensor { dtype, dims, values })
}

// ---------------------------------------------------------------------------
// System-matrix directories

/// JSON sidecar carrying everything needed to re-simulate the matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataDoc {
    pub schema_version: u64,
    /// Dims of data.bin in declared order (L, K, N_z, N_y, N_x).
    pub dims: [u64; 5],
    pub scanner: ScannerSpec,
    pub particle: ParticleSpec,
    pub calibration: CalibrationSpec,
    pub receive: ReceiveChain,
    pub provenance: Provenance,
    /// Unit annotations for human readers; not interpreted on load.
    pub units: serde_json::Value,
}

fn default_units() -> serde_json::Value {
    serde_json::json!({
        "fields": "A/m",
        "gradients": "A/m^2",
        "lengths": "m",
        "frequencies": "Hz",
        "temperature": "K",
        "saturation_magnetization": "A/m",
        "anisotropy_constant": "J/m^3"
    })
}

pub fn write_sm(dir: &Path, sm: &SystemMatrix) -> Result<()> {
    sm.validate()?;
    fs::create_dir_all(dir)?;
    let dims = [
        sm.n_channels as u64,
        sm.n_freq as u64,
        sm.grid.nz as u64,
        sm.grid.ny as u64,
        sm.grid.nx as u64,
    ];
    let meta = MetadataDoc {
        schema_version: SCHEMA_VERSION,
        dims,
        scanner: sm.scanner.clone(),
        particle: sm.particle.clone(),
        calibration: sm.calibration.clone(),
        receive: sm.receive.clone(),
        provenance: sm.provenance.clone(),
        units: default_units(),
    };
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(dir.join("meta.json"), json)?;
    let t = Tensor::from_complex(dims.to_vec(), &sm.data)?;
    write_tensor(&dir.join("data.bin"), &t)
}

pub fn read_sm(dir: &Path) -> Result<SystemMatrix> {
    let meta_path = dir.join("meta.json");
    let json = fs::read_to_string(&meta_path)?;
    // gate on schema_version before binding the full document shape
    let probe: serde_json::Value = serde_json::from_str(&json)?;
    let version = probe
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Data(format!("{}: missing schema_version", meta_path.display())))?;
    if version > SCHEMA_VERSION {
        return Err(Error::Data(format!(
            "{}: schema_version {version} is newer than supported {SCHEMA_VERSION}",
            meta_path.display()
        )));
    }
    let meta: MetadataDoc = serde_json::from_str(&json)?;
    let t = read_tensor(&dir.join("data.bin"))?;
    if t.dims.len() != 5 || t.dims != meta.dims {
        return Err(Error::Data(format!(
            "{}: data.bin dims {:?} disagree with meta.json dims {:?}",
            dir.display(),
            t.dims,
            meta.dims
        )));
    }
    let grid = Shape3::new(meta.dims[2] as usize, meta.dims[3] as usize, meta.dims[4] as usize);
    if grid != meta.calibration.grid {
        return Err(Error::Data(format!(
            "{}: tensor grid {:?} disagrees with calibration grid {:?}",
            dir.display(),
            grid.xyz(),
            meta.calibration.grid.xyz()
        )));
    }
    let sm = SystemMatrix {
        data: t.to_complex()?,
        n_channels: meta.dims[0] as usize,
        n_freq: meta.dims[1] as usize,
        grid,
        scanner: meta.scanner,
        particle: meta.particle,
        calibration: meta.calibration,
        receive: meta.receive,
        provenance: meta.provenance,
    };
    sm.validate()?;
    Ok(sm)
}

// ---------------------------------------------------------------------------
// Auxiliary tensors: background frames, masks, measurements, images

/// Background noise frames stored as a complex tensor (frames, L, K).
pub fn write_background(path: &Path, bg: &BackgroundFrames) -> Result<()> {
    let dims = vec![bg.n_frames as u64, bg.n_channels as u64, bg.n_freq as u64];
    write_tensor(path, &Tensor::from_complex(dims, &bg.data)?)
}

pub fn read_background(path: &Path) -> Result<BackgroundFrames> {
    let t = read_tensor(path)?;
    if t.dims.len() != 3 {
        return Err(Error::Data(format!(
            "{}: background frames need 3 dims (frames, channels, freq)",
            path.display()
        )));
    }
    Ok(BackgroundFrames {
        data: t.to_complex()?,
        n_frames: t.dims[0] as usize,
        n_channels: t.dims[1] as usize,
        n_freq: t.dims[2] as usize,
    })
}

/// Inpainting mask stored as an f32 0/1 tensor with dims (N_z, N_y, N_x).
pub fn write_mask(path: &Path, mask: &InpaintingMask) -> Result<()> {
    let dims = vec![mask.shape.nz as u64, mask.shape.ny as u64, mask.shape.nx as u64];
    let values: Vec<f32> = mask.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    write_tensor(path, &Tensor { dtype: Dtype::F32, dims, values })
}

pub fn read_mask(path: &Path) -> Result<InpaintingMask> {
    let t = read_tensor(path)?;
    if t.dims.len() != 3 || t.dtype != Dtype::F32 {
        return Err(Error::Data(format!("{}: mask must be a 3-dim f32 tensor", path.display())));
    }
    let shape = Shape3::new(t.dims[0] as usize, t.dims[1] as usize, t.dims[2] as usize);
    let mask: Vec<bool> = t.values.iter().map(|&v| v != 0.0).collect();
    let pop = mask.iter().filter(|&&m| m).count();
    Ok(InpaintingMask { ratio: pop as f64 / mask.len() as f64, mask, shape })
}

/// Measurement spectrum (L, K) as a complex tensor.
pub fn write_measurement(path: &Path, u: &[Complex64], n_channels: usize, n_freq: usize) -> Result<()> {
    let data: Vec<Complex32> =
        u.iter().map(|c| Complex32::new(c.re as f32, c.im as f32)).collect();
    write_tensor(
        path,
        &Tensor::from_complex(vec![n_channels as u64, n_freq as u64], &data)?,
    )
}

pub fn read_measurement(path: &Path) -> Result<(Vec<Complex64>, usize, usize)> {
    let t = read_tensor(path)?;
    if t.dims.len() != 2 {
        return Err(Error::Data(format!("{}: measurement needs dims (L, K)", path.display())));
    }
    let data = t
        .to_complex()?
        .iter()
        .map(|c| Complex64::new(c.re as f64, c.im as f64))
        .collect();
    Ok((data, t.dims[0] as usize, t.dims[1] as usize))
}

/// Real image (N_z, N_y, N_x) as an f32 tensor.
pub fn write_image(path: &Path, img: &[f64], shape: Shape3) -> Result<()> {
    if img.len() != shape.len() {
        return Err(Error::Data("image length does not match shape".into()));
    }
    write_tensor(
        path,
        &Tensor {
            dtype: Dtype::F32,
            dims: vec![shape.nz as u64, shape.ny as u64, shape.nx as u64],
            values: img.iter().map(|&v| v as f32).collect(),
        },
    )
}

pub fn read_image(path: &Path) -> Result<(Vec<f64>, Shape3)> {
    let t = read_tensor(path)?;
    if t.dims.len() != 3 || t.dtype != Dtype::F32 {
        return Err(Error::Data(format!("{}: image must be a 3-dim f32 tensor", path.display())));
    }
    let shape = Shape3::new(t.dims[0] as usize, t.dims[1] as usize, t.dims[2] as usize);
    Ok((t.values.iter().map(|&v| v as f64).collect(), shape))
}

// ---------------------------------------------------------------------------
// Plot emission

/// Writes a binary PGM (P5, maxval 255) of min-max scaled magnitudes.
/// A constant input maps every pixel to 0.
pub fn emit_plot(path: &Path, magnitudes: &[f64], width: usize, height: usize) -> Result<()> {
    if magnitudes.len() != width * height || width == 0 || height == 0 {
        return Err(Error::Data("plot dims do not match pixel count".into()));
    }
    let lo = magnitudes.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = magnitudes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    if hi > lo {
        for &v in magnitudes {
            out.push((255.0 * (v - lo) / (hi - lo)).round() as u8);
        }
    } else {
        out.resize(out.len() + magnitudes.len(), 0);
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}
