//! Command-line front end for the system-matrix simulation, corruption,
//! restoration, reconstruction, and evaluation pipeline.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use smkit::corrupt::{self, CorruptionTask, NoiseConfig, NoiseSource, TaskKind};
use smkit::evalkit::{self, EntryScore};
use smkit::fieldsim::ScannerSpec;
use smkit::magnetization::ParticleSpec;
use smkit::paramspace::{build_manifest, entry_rng, SamplingConfig, Split};
use smkit::recon::{reconstruct, ReconConfig, RowWeighting};
use smkit::restore::{restore, RestoreMethod, SigmaSpec};
use smkit::smsim::{simulate_system_matrix, CalibrationSpec, Provenance, ReceiveChain, SystemMatrix};
use smkit::storage;
use smkit::{Error, Result, Shape3};

#[derive(Parser)]
#[command(name = "smkit", version, about = "Magnetic particle imaging system-matrix toolkit")]
struct Cli {
    /// Worker threads (env SMK_THREADS overrides; default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one system matrix from spec files.
    Simulate(SimulateArgs),
    /// Materialize a sampled dataset manifest and simulate one split.
    Dataset(DatasetArgs),
    /// Apply a corruption task (noise, decimation, or masking).
    Corrupt(CorruptArgs),
    /// Restore a corrupted system matrix with a classical baseline.
    Restore(RestoreArgs),
    /// Reconstruct a concentration image from a measurement.
    Reconstruct(ReconstructArgs),
    /// Score restored matrices against ground truth.
    Evaluate(EvaluateArgs),
    /// Emit a grayscale PGM of a component or reconstruction slice.
    Plot(PlotArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scanner spec JSON (table units: T/m/mu0 gradients, mT/mu0 amplitudes).
    #[arg(long)]
    scanner: PathBuf,
    /// Particle spec JSON (SI units).
    #[arg(long)]
    particle: PathBuf,
    /// Calibration spec JSON (fov/center in meters, grid as [x, y, z]).
    #[arg(long)]
    calib: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 48)]
    quad_order: usize,
}

#[derive(Args)]
struct DatasetArgs {
    /// Sampling config JSON ([`SamplingConfig`]; missing fields default).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_split)]
    split: Split,
}

#[derive(Args)]
struct CorruptArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// denoise | downsample | inpaint
    #[arg(long)]
    task: String,
    /// Noise level sigma on the unit-max normalized components.
    #[arg(long)]
    sigma: f64,
    /// Decimation factors X,Y,Z (downsample only).
    #[arg(long, value_parser = parse_usize3)]
    factors: Option<[usize; 3]>,
    /// Masked fraction (inpaint only).
    #[arg(long)]
    mask_ratio: Option<f64>,
    /// Number of mask blocks (inpaint only).
    #[arg(long, default_value_t = 1)]
    mask_blocks: usize,
    /// synthetic | bg:FILE
    #[arg(long, default_value = "synthetic")]
    noise: String,
    /// Rotate each component by a random global phase before corruption.
    #[arg(long, default_value_t = false)]
    phase_rotate: bool,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RestoreArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// dctf | cubic | biharmonic
    #[arg(long)]
    method: String,
    /// Soft-threshold multiplier for dctf.
    #[arg(long, default_value_t = 2.75)]
    omega: f64,
    /// Noise level for dctf: a number, or "auto" to derive per-component
    /// values from the corruption provenance.
    #[arg(long, default_value = "auto")]
    sigma: String,
    /// Target grid X,Y,Z for cubic.
    #[arg(long, value_parser = parse_usize3)]
    target: Option<[usize; 3]>,
    /// Mask tensor for biharmonic; defaults to IN/mask.bin.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    sm: PathBuf,
    #[arg(long)]
    meas: PathBuf,
    #[arg(long, default_value_t = 1.5)]
    snr_threshold: f64,
    #[arg(long, default_value_t = 0.3)]
    lambda: f64,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    /// Noise level for SNR estimation; defaults to the corruption
    /// provenance sigma when present.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = false)]
    no_nonneg: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Comma-separated subset of psnr,ssim.
    #[arg(long, default_value = "psnr,ssim")]
    metrics: String,
    /// sigma | scale | size
    #[arg(long)]
    group_by: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Frequency component "L,K" of a system-matrix directory.
    #[arg(long)]
    component: Option<String>,
    /// Slice "axis,index" (axis in {x,y,z} or {0,1,2}) of an image tensor.
    #[arg(long)]
    recon_slice: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split {other:?}, expected train|val|test")),
    }
}

fn parse_usize3(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got {s:?}"));
    }
    let mut out = [0usize; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.trim().parse().map_err(|e| format!("bad value {p:?}: {e}"))?;
    }
    Ok(out)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Scanner spec as written in parameter-table units.
#[derive(Deserialize)]
struct ScannerInput {
    /// Selection-field gradients, T·m⁻¹·μ₀⁻¹.
    gradients_t_per_m: [f64; 3],
    /// Drive-field amplitudes, mT·μ₀⁻¹.
    df_amplitudes_mt: [f64; 3],
    df_dividers: [u32; 3],
    f_base: f64,
    sampling_rate: f64,
}

#[derive(Deserialize)]
struct CalibInput {
    /// FOV per axis, meters.
    fov: [f64; 3],
    /// FOV center, meters.
    #[serde(default)]
    center: [f64; 3],
    /// Grid size as [x, y, z].
    grid: [usize; 3],
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let s: ScannerInput = read_json(&args.scanner)?;
    let scanner = ScannerSpec::from_table_units(
        s.gradients_t_per_m,
        s.df_amplitudes_mt,
        s.df_dividers,
        s.f_base,
        s.sampling_rate,
    );
    let particle: ParticleSpec = read_json(&args.particle)?;
    let c: CalibInput = read_json(&args.calib)?;
    let calibration = CalibrationSpec {
        fov: c.fov,
        center: c.center,
        grid: Shape3::from_xyz(c.grid),
    };
    let receive = ReceiveChain::ideal(&scanner);
    let sm = simulate_system_matrix(&scanner, &particle, &calibration, &receive, args.quad_order, 0)?;
    storage::write_sm(&args.out, &sm)?;
    println!("wrote {} ({} channels x {} bins x {:?} grid)",
        args.out.display(), sm.n_channels, sm.n_freq, sm.grid.xyz());
    Ok(())
}

fn cmd_dataset(args: &DatasetArgs) -> Result<()> {
    let config: SamplingConfig = read_json(&args.config)?;
    let manifest = build_manifest(&config)?;
    fs::create_dir_all(&args.out)?;
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(args.out.join("manifest.json"), json)?;
    let mut count = 0usize;
    for entry in &manifest.entries {
        if entry.split != args.split {
            continue;
        }
        let receive = ReceiveChain::ideal(&entry.scanner);
        let sm = simulate_system_matrix(
            &entry.scanner,
            &entry.particle,
            &entry.calibration,
            &receive,
            config.quad_order,
            entry.id,
        )?;
        storage::write_sm(&args.out.join(format!("{:06}", entry.id)), &sm)?;
        count += 1;
    }
    println!("wrote manifest + {count} entries to {}", args.out.display());
    Ok(())
}

fn cmd_corrupt(args: &CorruptArgs) -> Result<()> {
    let sm = storage::read_sm(&args.input)?;
    let background = match args.noise.as_str() {
        "synthetic" => None,
        bg if bg.starts_with("bg:") => Some(storage::read_background(Path::new(&bg[3..]))?),
        other => {
            return Err(Error::Config(format!(
                "unknown noise source {other:?}, expected synthetic or bg:FILE"
            )))
        }
    };
    let mut rng = entry_rng(args.seed, 0);
    let (kind, mask) = match args.task.as_str() {
        "denoise" => (TaskKind::Denoise, None),
        "downsample" => {
            let factors = args.factors.ok_or_else(|| {
                Error::Config("downsample requires --factors X,Y,Z".into())
            })?;
            (TaskKind::Downsample { factors }, None)
        }
        "inpaint" => {
            let ratio = args.mask_ratio.ok_or_else(|| {
                Error::Config("inpaint requires --mask-ratio".into())
            })?;
            let mask = corrupt::generate_mask(sm.grid, ratio, args.mask_blocks, &mut rng)?;
            (TaskKind::InpaintMask { mask: mask.clone() }, Some(mask))
        }
        other => {
            return Err(Error::Config(format!(
                "unknown task {other:?}, expected denoise|downsample|inpaint"
            )))
        }
    };
    let source = if args.noise.starts_with("bg:") {
        NoiseSource::Background { path: PathBuf::from(&args.noise[3..]) }
    } else {
        NoiseSource::Synthetic
    };
    let noise = NoiseConfig { source, ..NoiseConfig::synthetic(args.sigma) };
    let task = CorruptionTask { kind, noise, phase_rotate: args.phase_rotate };
    let out = corrupt::apply(&task, &sm, background.as_ref(), args.seed, &mut rng)?;
    storage::write_sm(&args.out, &out)?;
    if let Some(mask) = &mask {
        storage::write_mask(&args.out.join("mask.bin"), mask)?;
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

/// Per-component sigmas in the stored (corrupted-normalized) scale,
/// derived from the corruption record.
fn sigma_from_provenance(sm: &SystemMatrix) -> Result<SigmaSpec> {
    match sm.provenance.corruption() {
        Some(Provenance::Corrupted { sigma, corrupt_max, .. }) => {
            let per: Vec<f64> = corrupt_max
                .iter()
                .map(|&m| if m > 0.0 { sigma / m } else { 0.0 })
                .collect();
            Ok(SigmaSpec::PerComponent(per))
        }
        _ => Err(Error::Config(
            "--sigma auto requires a corruption record in the input provenance".into(),
        )),
    }
}

fn cmd_restore(args: &RestoreArgs) -> Result<()> {
    let sm = storage::read_sm(&args.input)?;
    let method = match args.method.as_str() {
        "dctf" => {
            let sigma = if args.sigma == "auto" {
                sigma_from_provenance(&sm)?
            } else {
                let s: f64 = args.sigma.parse().map_err(|_| {
                    Error::Config(format!("--sigma must be a number or \"auto\", got {:?}", args.sigma))
                })?;
                SigmaSpec::Scalar(s)
            };
            RestoreMethod::DctF { omega: args.omega, sigma }
        }
        "cubic" => {
            let target = args.target.ok_or_else(|| {
                Error::Config("cubic requires --target X,Y,Z".into())
            })?;
            RestoreMethod::CubicInterp { target: Shape3::from_xyz(target) }
        }
        "biharmonic" => {
            let path = args.mask.clone().unwrap_or_else(|| args.input.join("mask.bin"));
            RestoreMethod::Biharmonic { mask: storage::read_mask(&path)? }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown method {other:?}, expected dctf|cubic|biharmonic"
            )))
        }
    };
    let out = restore(&sm, &method)?;
    storage::write_sm(&args.out, &out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_reconstruct(args: &ReconstructArgs) -> Result<()> {
    let sm = storage::read_sm(&args.sm)?;
    let (u, l, k) = storage::read_measurement(&args.meas)?;
    if l != sm.n_channels || k != sm.n_freq {
        return Err(Error::Data(format!(
            "measurement dims ({l}, {k}) do not match system matrix ({}, {})",
            sm.n_channels, sm.n_freq
        )));
    }
    let sigma = match args.sigma {
        Some(s) => s,
        None => match sm.provenance.corruption() {
            Some(Provenance::Corrupted { sigma, .. }) => *sigma,
            _ => {
                return Err(Error::Config(
                    "--sigma is required when the system matrix has no corruption record".into(),
                ))
            }
        },
    };
    let cfg = ReconConfig {
        snr_threshold: args.snr_threshold,
        lambda: args.lambda,
        iterations: args.iters,
        relaxation: 1.0,
        weighting: RowWeighting::RowNormL2,
        nonnegative: !args.no_nonneg,
    };
    let img = reconstruct(&sm, &u, sigma, &cfg)?;
    storage::write_image(&args.out, &img, sm.grid)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Serialize)]
struct GroupReport {
    psnr: evalkit::Aggregate,
    ssim: evalkit::Aggregate,
}

#[derive(Serialize)]
struct Report {
    metrics: Vec<String>,
    entries: Vec<EntryScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    psnr: Option<evalkit::Aggregate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ssim: Option<evalkit::Aggregate>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    groups: BTreeMap<String, GroupReport>,
}

fn group_key(test: &SystemMatrix, group_by: &str) -> Result<String> {
    match group_by {
        "sigma" => match test.provenance.corruption() {
            Some(Provenance::Corrupted { sigma, .. }) => Ok(format!("{sigma}")),
            _ => Ok("none".into()),
        },
        "scale" => match test.provenance.corruption() {
            Some(Provenance::Corrupted { task, .. }) => Ok(task.clone()),
            _ => Ok("none".into()),
        },
        "size" => Ok(format!("{}", test.grid.len())),
        other => Err(Error::Config(format!(
            "unknown group key {other:?}, expected sigma|scale|size"
        ))),
    }
}

/// Pairs of matching system-matrix directories under gt/test roots, or the
/// roots themselves if they are single matrices.
fn collect_pairs(gt: &Path, test: &Path) -> Result<Vec<(u64, PathBuf, PathBuf)>> {
    if gt.join("meta.json").is_file() {
        return Ok(vec![(0, gt.to_path_buf(), test.to_path_buf())]);
    }
    let mut names = Vec::new();
    for entry in fs::read_dir(gt)? {
        let entry = entry?;
        if entry.path().join("meta.json").is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    let mut pairs = Vec::new();
    for name in names {
        let t = test.join(&name);
        if t.join("meta.json").is_file() {
            let id = name.parse::<u64>().unwrap_or(pairs.len() as u64);
            pairs.push((id, gt.join(&name), t));
        }
    }
    if pairs.is_empty() {
        return Err(Error::Data(format!(
            "no matching system-matrix directories under {} and {}",
            gt.display(),
            test.display()
        )));
    }
    Ok(pairs)
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let metrics: Vec<String> = args
        .metrics
        .split(',')
        .map(|m| m.trim().to_string())
        .filter(|m| !m.is_empty())
        .collect();
    for m in &metrics {
        if m != "psnr" && m != "ssim" {
            return Err(Error::Config(format!("unknown metric {m:?}, expected psnr,ssim")));
        }
    }
    let pairs = collect_pairs(&args.gt, &args.test)?;
    let mut entries = Vec::new();
    let mut grouped: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (id, gt_path, test_path) in &pairs {
        let gt = storage::read_sm(gt_path)?;
        let test = storage::read_sm(test_path)?;
        let (p, s) = evalkit::score_pair(&gt, &test)?;
        entries.push(EntryScore { id: *id, psnr: p, ssim: s });
        if let Some(g) = &args.group_by {
            grouped.entry(group_key(&test, g)?).or_default().push((p, s));
        }
    }
    let p: Vec<f64> = entries.iter().map(|e| e.psnr).collect();
    let s: Vec<f64> = entries.iter().map(|e| e.ssim).collect();
    let mut groups = BTreeMap::new();
    for (key, vals) in grouped {
        let gp: Vec<f64> = vals.iter().map(|v| v.0).collect();
        let gs: Vec<f64> = vals.iter().map(|v| v.1).collect();
        groups.insert(
            key,
            GroupReport { psnr: evalkit::aggregate(&gp)?, ssim: evalkit::aggregate(&gs)? },
        );
    }
    let report = Report {
        psnr: metrics.iter().any(|m| m == "psnr").then(|| evalkit::aggregate(&p)).transpose()?,
        ssim: metrics.iter().any(|m| m == "ssim").then(|| evalkit::aggregate(&s)).transpose()?,
        metrics,
        entries,
        groups,
    };
    fs::write(&args.out, serde_json::to_string_pretty(&report)?)?;
    println!("wrote {} ({} entries)", args.out.display(), report.entries.len());
    Ok(())
}

fn parse_axis(s: &str) -> Result<usize> {
    match s.trim() {
        "x" | "0" => Ok(0),
        "y" | "1" => Ok(1),
        "z" | "2" => Ok(2),
        other => Err(Error::Config(format!("bad axis {other:?}, expected x|y|z"))),
    }
}

fn cmd_plot(args: &PlotArgs) -> Result<()> {
    match (&args.component, &args.recon_slice) {
        (Some(comp), None) => {
            let parts: Vec<&str> = comp.split(',').collect();
            if parts.len() != 2 {
                return Err(Error::Config("--component expects L,K".into()));
            }
            let l: usize = parts[0].trim().parse().map_err(|_| Error::Config("bad L".into()))?;
            let k: usize = parts[1].trim().parse().map_err(|_| Error::Config("bad K".into()))?;
            let sm = storage::read_sm(&args.input)?;
            if l >= sm.n_channels || k >= sm.n_freq {
                return Err(Error::Config(format!(
                    "component ({l}, {k}) out of range ({}, {})",
                    sm.n_channels, sm.n_freq
                )));
            }
            let img = sm.component_f64(l, k);
            // central z slice of 3D grids
            let z = sm.grid.nz / 2;
            let mags: Vec<f64> = (0..sm.grid.ny * sm.grid.nx)
                .map(|i| {
                    let (y, x) = (i / sm.grid.nx, i % sm.grid.nx);
                    img[sm.grid.idx(z, y, x)].norm()
                })
                .collect();
            storage::emit_plot(&args.out, &mags, sm.grid.nx, sm.grid.ny)
        }
        (None, Some(slice)) => {
            let parts: Vec<&str> = slice.split(',').collect();
            if parts.len() != 2 {
                return Err(Error::Config("--recon-slice expects axis,index".into()));
            }
            let axis = parse_axis(parts[0])?;
            let index: usize =
                parts[1].trim().parse().map_err(|_| Error::Config("bad slice index".into()))?;
            let (img, shape) = storage::read_image(&args.input)?;
            if index >= shape.axis_len(axis) {
                return Err(Error::Config(format!(
                    "slice index {index} out of range for axis length {}",
                    shape.axis_len(axis)
                )));
            }
            // remaining two axes in (row, col) order
            let (h, w): (usize, usize) = match axis {
                0 => (shape.ny, shape.nz.max(1)),
                1 => (shape.nz.max(1), shape.nx),
                _ => (shape.ny, shape.nx),
            };
            let mut mags = Vec::with_capacity(h * w);
            for r in 0..h {
                for c in 0..w {
                    let idx = match axis {
                        0 => shape.idx(c, r, index),
                        1 => shape.idx(r, index, c),
                        _ => shape.idx(index, r, c),
                    };
                    mags.push(img[idx].abs());
                }
            }
            storage::emit_plot(&args.out, &mags, w, h)
        }
        _ => Err(Error::Config(
            "plot requires exactly one of --component L,K or --recon-slice axis,index".into(),
        )),
    }?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let threads = std::env::var("SMK_THREADS")
        .ok()
        .map(|v| {
            v.parse::<usize>()
                .map_err(|_| Error::Config(format!("SMK_THREADS={v:?} is not a number")))
        })
        .transpose()?
        .or(cli.threads);
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Dataset(a) => cmd_dataset(a),
        Command::Corrupt(a) => cmd_corrupt(a),
        Command::Restore(a) => cmd_restore(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
