//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use super::grid_file::{read_grid, write_grid, Domain, GridFile};
use super::manifest::{RunManifest, MANIFEST_NAME};
use super::preprocess::{self, Method};
use super::scene::{load_scene, SceneFile};
use crate::error::{Error, Result};
use crate::forward::{synthesize, MediumParams, SensorNoise};
use crate::grid::Grid;
use crate::irls::{DomainEstimate, SolverConfig, PROFILE_AMPLITUDE_KINECT16, PROFILE_PHASE_KINECT16};
use crate::phasor::{wrap_phase, CameraModel, DepthImage, PhasorImage};
use crate::pipeline::defog;
use crate::recon::{evaluate, EvalInputs, ObjectMask};
use crate::simrange::{self, linear_grid};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "TOFDEFOG_THREADS";

#[derive(Debug, Parser)]
#[command(name = "tofdefog", version, about = "Scattering removal for time-of-flight images in fog")]
pub struct Cli {
    /// Report errors as JSON objects on stderr.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a foggy observation and its ground truth from a scene file.
    Synth(SynthArgs),
    /// Estimate and remove scattering from an amplitude/phase pair.
    Defog(DefogArgs),
    /// Compare a defogged depth map against ground truth.
    Eval(EvalArgs),
    /// Sweep depth and write saturation and residual curves.
    Simrange(SimrangeArgs),
    /// Smooth a grid before defogging.
    Preprocess(PreprocessArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Standard deviation of additive noise on the real and imaginary parts.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DefogArgs {
    #[arg(long, required_unless_present = "replay")]
    pub amp: Option<PathBuf>,
    #[arg(long, required_unless_present = "replay")]
    pub phase: Option<PathBuf>,
    #[arg(long, required_unless_present = "replay")]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = PROFILE_AMPLITUDE_KINECT16)]
    pub amp_profile: String,
    #[arg(long, default_value = PROFILE_PHASE_KINECT16)]
    pub phase_profile: String,
    /// JSON file of amplitude solver settings (may name a profile).
    #[arg(long)]
    pub amp_config: Option<PathBuf>,
    #[arg(long)]
    pub phase_config: Option<PathBuf>,
    /// Amplitude solver override, `key=value` with a JSON value.
    #[arg(long = "amp-set", value_name = "KEY=VALUE")]
    pub amp_set: Vec<String>,
    #[arg(long = "phase-set", value_name = "KEY=VALUE")]
    pub phase_set: Vec<String>,
    /// Modulation frequency in Hz.
    #[arg(long, default_value_t = 16e6)]
    pub freq: f64,
    /// Rerun the command recorded in a manifest and check its output hashes.
    #[arg(long, conflicts_with_all = ["amp", "phase", "amp_config", "phase_config", "amp_set", "phase_set"])]
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory written by `defog`.
    #[arg(long)]
    pub est: PathBuf,
    /// Directory written by `synth`, or any directory with the same files.
    #[arg(long)]
    pub gt: PathBuf,
    /// Label grid; defaults to `labels.tofgrid` in the ground-truth directory.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Where to write `report.json` and `report.csv`; defaults to `--est`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimrangeArgs {
    #[arg(long, default_value_t = 3.2e-4)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.9)]
    pub g: f64,
    #[arg(long, default_value_t = 10.0)]
    pub z0: f64,
    #[arg(long, default_value_t = 16e6)]
    pub freq: f64,
    /// Reflectance of the swept surface.
    #[arg(long = "I", default_value_t = 1.0)]
    pub reflectance: f64,
    #[arg(long, default_value_t = 10.0)]
    pub zmin: f64,
    #[arg(long, default_value_t = 10_000.0)]
    pub zmax: f64,
    #[arg(long, default_value_t = 10.0)]
    pub step: f64,
    #[arg(long, default_value_t = simrange::DEFAULT_TOLERANCE)]
    pub sat_tol: f64,
    #[arg(long, default_value_t = simrange::DEFAULT_TOLERANCE)]
    pub bg_tol: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a gnuplot script for the CSV.
    #[arg(long)]
    pub gnuplot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "gaussian")]
    pub method: String,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let json = args.iter().any(|a| a == "--json");
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return 0;
            }
            if json {
                eprintln!("{}", json!({"error": {"kind": "usage", "message": e.to_string(), "exit_code": 2}}));
            } else {
                let _ = e.print();
            }
            return 2;
        }
    };
    let result = init_threads().and_then(|_| run(&cli.command));
    match result {
        Ok(summary) => {
            if !summary.is_empty() {
                println!("{summary}");
            }
            0
        }
        Err(e) => {
            report_error(&e, cli.json);
            e.exit_code()
        }
    }
}

fn report_error(e: &Error, json: bool) {
    if json {
        eprintln!(
            "{}",
            json!({"error": {"kind": e.kind(), "message": e.to_string(), "exit_code": e.exit_code()}})
        );
    } else {
        eprintln!("error: {e}");
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::invalid(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cmd: &Command) -> Result<String> {
    match cmd {
        Command::Synth(a) => cmd_synth(a),
        Command::Defog(a) => cmd_defog(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Simrange(a) => cmd_simrange(a),
        Command::Preprocess(a) => cmd_preprocess(a),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn wrapped(g: &Grid<f64>) -> Grid<f64> {
    g.map(|&p| wrap_phase(p))
}

fn output(m: &mut RunManifest, dir: &Path, role: &str, grid: &Grid<f64>, domain: Domain) -> Result<()> {
    let name = format!("{role}.tofgrid");
    write_grid(&dir.join(&name), grid, domain)?;
    m.add_output(role, dir, &name)
}

fn output_mask(m: &mut RunManifest, dir: &Path, role: &str, mask: &Grid<bool>) -> Result<()> {
    let name = format!("{role}.tofgrid");
    GridFile::from_mask(mask).write(&dir.join(&name))?;
    m.add_output(role, dir, &name)
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn cmd_synth(a: &SynthArgs) -> Result<String> {
    let start = Instant::now();
    let scene_file = SceneFile::load(&a.scene)?;
    let scene = load_scene(&a.scene)?;
    let noise = a.noise.map(|sigma| SensorNoise { sigma, seed: a.seed });
    let syn = synthesize(&scene, noise)?;
    ensure_dir(&a.out)?;
    let config = json!({"scene": scene_file, "noise": a.noise, "seed": a.seed});
    let mut m = RunManifest::new("synth", config);
    m.add_input("scene", &a.scene)?;
    let dir = &a.out;
    output(&mut m, dir, "foggy_amplitude", syn.foggy.amplitude(), Domain::Amplitude)?;
    output(&mut m, dir, "foggy_phase", syn.foggy.phase(), Domain::Phase)?;
    output(&mut m, dir, "direct_amplitude", syn.direct.amplitude(), Domain::Amplitude)?;
    output(&mut m, dir, "direct_phase", syn.direct.phase(), Domain::Phase)?;
    output(&mut m, dir, "clean_depth", &syn.clean_depth.to_depth_with_infinity(), Domain::Depth)?;
    output(&mut m, dir, "scattering_amplitude", &syn.scattering_amplitude.values, Domain::Amplitude)?;
    output(&mut m, dir, "scattering_phase", &wrapped(&syn.scattering_phase.values), Domain::Phase)?;
    output_mask(&mut m, dir, "mask", &syn.mask.mask)?;
    GridFile::from_labels(&syn.labels)?.write(&dir.join("labels.tofgrid"))?;
    m.add_output("labels", dir, "labels.tofgrid")?;
    fs::write(dir.join("labels.json"), serde_json::to_vec_pretty(&scene.names)?)?;
    m.add_output("label_names", dir, "labels.json")?;
    m.timings_ms.insert("total".into(), ms(start));
    m.write(dir)?;
    Ok(format!(
        "synthesised {}x{} scene with {} object pixels into {}",
        scene.cam.rows,
        scene.cam.cols,
        syn.mask.count(),
        dir.display()
    ))
}

fn parse_overrides(sets: &[String]) -> Result<serde_json::Map<String, Value>> {
    let mut map = serde_json::Map::new();
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("override {s:?} is not KEY=VALUE")))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        map.insert(k.trim().to_string(), value);
    }
    Ok(map)
}

fn solver_config(profile: &str, file: Option<&Path>, sets: &[String]) -> Result<SolverConfig> {
    let base = match file {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            // a file without a profile key inherits the command-line profile
            let mut doc: Value = serde_json::from_str(&text)?;
            if let Value::Object(obj) = &mut doc {
                obj.entry("profile").or_insert_with(|| Value::String(profile.into()));
            }
            SolverConfig::from_json(&doc.to_string())?
        }
        None => SolverConfig::profile(profile)?,
    };
    SolverConfig::with_overrides(base, parse_overrides(sets)?)
}

struct DefogPlan {
    amp: PathBuf,
    phase: PathBuf,
    out: PathBuf,
    amp_cfg: SolverConfig,
    phase_cfg: SolverConfig,
    freq: f64,
}

fn plan_from_args(a: &DefogArgs) -> Result<DefogPlan> {
    let missing = |name: &str| Error::invalid(format!("--{name} is required"));
    Ok(DefogPlan {
        amp: a.amp.clone().ok_or_else(|| missing("amp"))?,
        phase: a.phase.clone().ok_or_else(|| missing("phase"))?,
        out: a.out.clone().ok_or_else(|| missing("out"))?,
        amp_cfg: solver_config(&a.amp_profile, a.amp_config.as_deref(), &a.amp_set)?,
        phase_cfg: solver_config(&a.phase_profile, a.phase_config.as_deref(), &a.phase_set)?,
        freq: a.freq,
    })
}

fn plan_from_manifest(m: &RunManifest, out: PathBuf) -> Result<DefogPlan> {
    if m.command != "defog" {
        return Err(Error::invalid(format!("manifest records a {:?} run, not defog", m.command)));
    }
    let input = |role: &str| {
        m.inputs
            .get(role)
            .map(|r| PathBuf::from(&r.path))
            .ok_or_else(|| Error::Format(format!("manifest has no {role} input")))
    };
    let cfg = |key: &str| -> Result<SolverConfig> {
        let v = m.config.get(key).ok_or_else(|| Error::Format(format!("manifest has no {key} config")))?;
        let cfg: SolverConfig = serde_json::from_value(v.clone())?;
        cfg.validate()?;
        Ok(cfg)
    };
    let freq = m
        .config
        .get("modulation_frequency_hz")
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::Format("manifest has no modulation frequency".into()))?;
    Ok(DefogPlan {
        amp: input("amp")?,
        phase: input("phase")?,
        out,
        amp_cfg: cfg("amplitude")?,
        phase_cfg: cfg("phase")?,
        freq,
    })
}

fn record_domain(m: &mut RunManifest, name: &str, d: &DomainEstimate) {
    m.iterations.insert(format!("{name}.coarse"), d.coarse.iterations);
    m.iterations.insert(format!("{name}.fine"), d.fine.iterations);
    m.iterations.insert(
        format!("{name}.linear"),
        d.coarse.linear_iterations.iter().chain(&d.fine.linear_iterations).sum(),
    );
    m.objective_histories
        .insert(format!("{name}.coarse"), d.coarse.objective_history.clone());
    m.objective_histories
        .insert(format!("{name}.fine"), d.fine.objective_history.clone());
}

fn execute_defog(plan: &DefogPlan) -> Result<RunManifest> {
    let start = Instant::now();
    let amp = read_grid(&plan.amp, Domain::Amplitude)?;
    let phase = read_grid(&plan.phase, Domain::Phase)?;
    if amp.shape() != phase.shape() {
        return Err(Error::DimensionMismatch {
            expected_rows: amp.rows(),
            expected_cols: amp.cols(),
            rows: phase.rows(),
            cols: phase.cols(),
        });
    }
    let obs = PhasorImage::new(amp, phase)?;
    let cam = CameraModel::new(plan.freq, obs.rows(), obs.cols())?;
    let config = json!({
        "amplitude": plan.amp_cfg,
        "phase": plan.phase_cfg,
        "modulation_frequency_hz": plan.freq,
    });
    let mut m = RunManifest::new("defog", config);
    m.add_input("amp", &plan.amp)?;
    m.add_input("phase", &plan.phase)?;
    let solve_start = Instant::now();
    let res = defog(&obs, &cam, &plan.amp_cfg, &plan.phase_cfg)?;
    m.timings_ms.insert("solve".into(), ms(solve_start));
    record_domain(&mut m, "amplitude", &res.amplitude);
    record_domain(&mut m, "phase", &res.phase);

    let dir = &plan.out;
    ensure_dir(dir)?;
    output(&mut m, dir, "scattering_amplitude", &res.amplitude.scattering.values, Domain::Amplitude)?;
    output(&mut m, dir, "scattering_phase", &wrapped(&res.phase.scattering.values), Domain::Phase)?;
    output(&mut m, dir, "weight_amplitude", &res.amplitude.weights.weights, Domain::Weight)?;
    output(&mut m, dir, "weight_phase", &res.phase.weights.weights, Domain::Weight)?;
    output_mask(&mut m, dir, "mask", &res.mask.mask)?;
    output(&mut m, dir, "direct_amplitude", res.direct.amplitude(), Domain::Amplitude)?;
    output(&mut m, dir, "direct_phase", res.direct.phase(), Domain::Phase)?;
    output(&mut m, dir, "depth", &res.depth.to_depth_with_infinity(), Domain::Depth)?;
    output(&mut m, dir, "raw_depth", &res.raw_depth.to_depth_with_infinity(), Domain::Depth)?;
    m.timings_ms.insert("total".into(), ms(start));
    m.write(dir)?;
    Ok(m)
}

pub fn cmd_defog(a: &DefogArgs) -> Result<String> {
    if let Some(path) = &a.replay {
        let recorded = RunManifest::load(path)?;
        recorded.verify_inputs()?;
        let out = match &a.out {
            Some(o) => o.clone(),
            None => path.parent().unwrap_or(Path::new(".")).join("replay"),
        };
        if fs::canonicalize(&out).ok() == path.parent().and_then(|p| fs::canonicalize(p).ok()) {
            return Err(Error::invalid("replay output must not overwrite the recorded run"));
        }
        let plan = plan_from_manifest(&recorded, out)?;
        let fresh = execute_defog(&plan)?;
        recorded.compare_outputs(&fresh)?;
        return Ok(format!(
            "replay reproduced {} outputs in {}",
            fresh.outputs.len(),
            plan.out.display()
        ));
    }
    let plan = plan_from_args(a)?;
    let m = execute_defog(&plan)?;
    let flagged = m.outputs.len();
    Ok(format!(
        "wrote {flagged} outputs and {MANIFEST_NAME} to {}",
        plan.out.display()
    ))
}

fn read_depth(path: &Path) -> Result<DepthImage> {
    Ok(DepthImage::from_depth_with_infinity(read_grid(path, Domain::Depth)?))
}

fn read_mask(path: &Path) -> Result<ObjectMask> {
    Ok(ObjectMask {
        mask: GridFile::read(path)?.to_mask()?,
    })
}

pub fn cmd_eval(a: &EvalArgs) -> Result<String> {
    let defogged = read_depth(&a.est.join("depth.tofgrid"))?;
    let raw_path = a.est.join("raw_depth.tofgrid");
    let raw = if raw_path.exists() {
        Some(read_depth(&raw_path)?)
    } else {
        None
    };
    let mask_est = read_mask(&a.est.join("mask.tofgrid"))?;
    let gt = read_depth(&a.gt.join("clean_depth.tofgrid"))?;
    let mask_gt = read_mask(&a.gt.join("mask.tofgrid"))?;
    let labels_path = a.labels.clone().unwrap_or_else(|| a.gt.join("labels.tofgrid"));
    let labels = GridFile::read(&labels_path)?.to_labels()?;
    let names_path = a.gt.join("labels.json");
    let mut names: BTreeMap<u32, String> = if names_path.exists() {
        serde_json::from_slice(&fs::read(&names_path)?)?
    } else {
        BTreeMap::new()
    };
    for &l in labels.iter().filter(|&&l| l > 0) {
        names.entry(l).or_insert_with(|| format!("object{l}"));
    }
    let report = evaluate(&EvalInputs {
        defogged: &defogged,
        raw: raw.as_ref(),
        ground_truth: &gt,
        mask_est: &mask_est,
        mask_gt: &mask_gt,
        labels: &labels,
        names: &names,
    })?;
    let out = a.out.clone().unwrap_or_else(|| a.est.clone());
    ensure_dir(&out)?;
    fs::write(out.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
    let csv = report.to_csv();
    fs::write(out.join("report.csv"), &csv)?;
    Ok(format!("{}mask IoU {:.4}", csv, report.mask_iou))
}

pub fn cmd_simrange(a: &SimrangeArgs) -> Result<String> {
    if !(a.step > 0.0 && a.zmax > a.zmin) {
        return Err(Error::invalid("need zmax > zmin and step > 0"));
    }
    let medium = MediumParams {
        beta: a.beta,
        g: a.g,
        z0: a.z0,
        ..MediumParams::fog()
    };
    let cam = CameraModel::new(a.freq, 1, 1)?;
    let mut s = simrange::sweep(&medium, &cam, a.reflectance, &linear_grid(a.zmin, a.zmax, a.step))?;
    s.range = simrange::find_range(&s, a.sat_tol, a.bg_tol)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    fs::write(&a.out, s.to_csv())?;
    if let Some(script) = &a.gnuplot {
        fs::write(script, s.gnuplot_script(&a.out.display().to_string()))?;
    }
    let fmt = |z: Option<f64>| z.map_or("unbounded".to_string(), |v| format!("{v} mm"));
    Ok(format!(
        "z_saturate {}, z_background {}",
        fmt(s.range.z_saturate),
        fmt(s.range.z_background)
    ))
}

pub fn cmd_preprocess(a: &PreprocessArgs) -> Result<String> {
    let method: Method = a.method.parse()?;
    let file = GridFile::read(&a.input)?;
    let domain = file.header.domain;
    let smoothed = preprocess::apply(&file.to_f64(), method, a.sigma, domain)?;
    let mut out = GridFile::from_f64(&smoothed, domain)?;
    out.header.units = file.header.units.clone();
    out.write(&a.out)?;
    Ok(String::new())
}
