//! Load a scene description, render the foggy observation and write the
//! grids a `tofdefog defog` run needs.
//!
//!     cargo run --release --example synth_scene [scene.json] [out_dir]

use std::path::PathBuf;

use tofdefog::forward::{synthesize, SensorNoise};
use tofdefog::io::{load_scene, write_grid, Domain};

fn main() -> tofdefog::Result<()> {
    let mut args = std::env::args().skip(1);
    let scene_path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/data/demo_scene.json"));
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("tofdefog-synth-example"));

    let scene = load_scene(&scene_path)?;
    let syn = synthesize(&scene, Some(SensorNoise { sigma: 0.5, seed: 1 }))?;
    std::fs::create_dir_all(&out)?;
    write_grid(&out.join("foggy_amplitude.tofgrid"), syn.foggy.amplitude(), Domain::Amplitude)?;
    write_grid(&out.join("foggy_phase.tofgrid"), syn.foggy.phase(), Domain::Phase)?;
    write_grid(&out.join("clean_depth.tofgrid"), &syn.clean_depth.to_depth_with_infinity(), Domain::Depth)?;

    println!("{} objects, {} object pixels", scene.names.len(), syn.mask.count());
    for (label, name) in &scene.names {
        let n = syn.labels.iter().filter(|&&l| l == *label).count();
        println!("  {label}: {name} ({n} px)");
    }
    let amp = syn.scattering_amplitude.values.as_slice();
    let (lo, hi) = amp.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    println!("backscatter amplitude {lo:.1}..{hi:.1}");
    println!("wrote foggy_amplitude, foggy_phase and clean_depth to {}", out.display());
    Ok(())
}
