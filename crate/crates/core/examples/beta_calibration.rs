//! Recover the scattering coefficient from a target imaged with and without
//! fog.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tofdefog::forward::{direct_phasor, estimate_beta, CalibrationSample, MediumParams};
use tofdefog::CameraModel;

fn main() -> tofdefog::Result<()> {
    let cam = CameraModel::kinect_v2_16mhz();
    let planted = 3.2e-4;
    let clear = MediumParams::fog().with_beta(0.0);
    let fog = MediumParams::fog().with_beta(planted);
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    for noise in [0.0, 0.01, 0.05] {
        let samples: Vec<CalibrationSample> = (0..100)
            .map(|_| {
                let d = rng.gen_range(800.0..3000.0);
                let refl = rng.gen_range(0.2..1.0);
                let eps: f64 = rng.sample(StandardNormal);
                CalibrationSample {
                    clean_amplitude: direct_phasor(d, refl, &clear, &cam).unwrap().norm(),
                    foggy_direct_amplitude: direct_phasor(d, refl, &fog, &cam).unwrap().norm() * (1.0 + noise * eps),
                    distance_mm: d,
                }
            })
            .collect();
        let beta = estimate_beta(&samples)?;
        println!(
            "noise {:>4.1}%: beta {beta:.4e} /mm ({:+.2}% from planted)",
            noise * 100.0,
            100.0 * (beta - planted) / planted
        );
    }
    Ok(())
}
