//! Synthesise a foggy 424x512 frame with three objects, defog it and print
//! the per-object depth errors.
//!
//!     cargo run --release --example defog_pipeline [beta_per_mm]

use std::time::Instant;

use tofdefog::forward::{synthesize, MediumParams, SceneBuilder};
use tofdefog::irls::SolverConfig;
use tofdefog::pipeline::defog;
use tofdefog::recon::{evaluate, EvalInputs};
use tofdefog::CameraModel;

fn main() -> tofdefog::Result<()> {
    let beta: f64 = match std::env::args().nth(1) {
        Some(s) => s.parse().expect("beta must be a number, e.g. 3.2e-4"),
        None => 3.2e-4,
    };
    let cam = CameraModel::kinect_v2_16mhz();
    let scene = SceneBuilder::new(cam, MediumParams::fog().with_beta(beta))
        .rect("box", 120..260, 60..200, 1200.0)
        .disc("ball", (180.0, 350.0), 60.0, 1600.0)
        .rect("board", 300..380, 250..460, 2000.0)
        .build()?;
    let syn = synthesize(&scene, None)?;
    let t = Instant::now();
    let res = defog(&syn.foggy, &cam, &SolverConfig::amplitude_kinect16(), &SolverConfig::phase_kinect16())?;
    println!("defog took {:.1?}", t.elapsed());
    for (name, d) in [("amplitude", &res.amplitude), ("phase", &res.phase)] {
        println!(
            "{name}: coarse {} its (sigma {:.3e}), fine {} its (sigma {:.3e}), mask {}",
            d.coarse.iterations, d.coarse.sigma, d.fine.iterations, d.fine.sigma, d.mask.count()
        );
    }
    let report = evaluate(&EvalInputs {
        defogged: &res.depth,
        raw: Some(&res.raw_depth),
        ground_truth: &syn.clean_depth,
        mask_est: &res.mask,
        mask_gt: &syn.mask,
        labels: &syn.labels,
        names: &scene.names,
    })?;
    print!("{}", report.to_csv());
    println!("mask IoU {:.3}, true {} est {}", report.mask_iou, syn.mask.count(), res.mask.count());
    Ok(())
}
