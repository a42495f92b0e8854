//! Scene description files.
//!
//! A scene is a JSON object. Grids are referenced by path relative to the
//! scene file; procedural objects are painted on top of them.
//!
//! ```json
//! {
//!   "camera": {"modulation_frequency_hz": 16e6, "rows": 424, "cols": 512},
//!   "medium": {"beta": 3.2e-4, "g": 0.9, "z0": 10, "z_saturate": 1000},
//!   "objects": [
//!     {"name": "box", "shape": "rect", "top": 100, "left": 80,
//!      "bottom": 220, "right": 200, "depth_mm": 1200}
//!   ]
//! }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid_file::{read_grid, Domain, GridFile};
use crate::error::{Error, Result};
use crate::forward::{
    MediumParams, Profile, ScatteringSource, SceneBuilder, SceneObject, SceneSpec, DEFAULT_AMPLITUDE_GAIN,
};
use crate::grid::Grid;
use crate::phasor::{CameraModel, DepthImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub camera: CameraModel,
    pub medium: MediumParams,
    #[serde(default = "default_gain")]
    pub amplitude_gain: f64,
    /// Symmetry row of the default scattering profiles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip_row: Option<usize>,
    /// Depth grid (mm, +∞ for background).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    /// Reflectance grid; 1 everywhere when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflectance: Option<String>,
    /// Label grid; every valid depth pixel is label 1 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub label_names: BTreeMap<u32, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objects: Vec<SceneObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scattering: Option<ScatteringFile>,
}

fn default_gain() -> f64 {
    DEFAULT_AMPLITUDE_GAIN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScatteringFile {
    Analytic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        amplitude_profile: Option<Profile>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        phase_profile: Option<Profile>,
    },
    /// Amplitude (sensor units) and phase grids of a background-only capture.
    Measured { amplitude: String, phase: String },
}

impl SceneFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("scene file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(Error::file(path))?)
    }

    /// Resolves grid references relative to `dir` and builds the scene.
    pub fn to_spec(&self, dir: &Path) -> Result<SceneSpec> {
        let cam = self.camera;
        cam.validate()?;
        let (rows, cols) = (cam.rows, cam.cols);
        let mut builder = SceneBuilder::new(cam, self.medium).gain(self.amplitude_gain);
        if let Some(f) = self.flip_row {
            builder = builder.flip_row(f);
        }
        if let Some(depth_path) = &self.depth {
            let depth = DepthImage::from_depth_with_infinity(read_grid(&dir.join(depth_path), Domain::Depth)?);
            let refl = match &self.reflectance {
                Some(p) => read_grid(&dir.join(p), Domain::Amplitude)?,
                None => Grid::filled(rows, cols, 1.0),
            };
            let labels = match &self.labels {
                Some(p) => GridFile::read(&dir.join(p))?.to_labels()?,
                None => depth.valid.map(|&v| v as u32),
            };
            let mut names = self.label_names.clone();
            for &l in labels.iter().filter(|&&l| l > 0) {
                names.entry(l).or_insert_with(|| format!("object{l}"));
            }
            builder = builder.base(depth, refl, labels, names);
        } else if self.reflectance.is_some() || self.labels.is_some() {
            return Err(Error::invalid("reflectance and label grids need a depth grid"));
        }
        for obj in &self.objects {
            builder = builder.object(obj.clone());
        }
        let flip = self.flip_row.unwrap_or(rows * 200 / 424);
        builder = match &self.scattering {
            None => builder,
            Some(ScatteringFile::Analytic {
                amplitude_profile,
                phase_profile,
            }) => builder.scattering(ScatteringSource::Analytic {
                amplitude_profile: amplitude_profile
                    .clone()
                    .unwrap_or_else(|| Profile::default_amplitude(rows, cols, flip)),
                phase_profile: phase_profile
                    .clone()
                    .unwrap_or_else(|| Profile::default_phase(rows, cols, flip)),
            }),
            Some(ScatteringFile::Measured { amplitude, phase }) => builder.scattering(ScatteringSource::Measured {
                amplitude: read_grid(&dir.join(amplitude), Domain::Amplitude)?,
                phase: read_grid(&dir.join(phase), Domain::Phase)?,
            }),
        };
        builder.build()
    }
}

/// Loads a scene file and everything it references.
pub fn load_scene(path: &Path) -> Result<SceneSpec> {
    let file = SceneFile::load(path)?;
    file.to_spec(path.parent().unwrap_or(Path::new(".")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::grid_file::write_grid;

    #[test]
    fn procedural_scene() {
        let text = r#"{
            "camera": {"modulation_frequency_hz": 16e6, "rows": 30, "cols": 40},
            "medium": {"beta": 3.2e-4, "g": 0.9, "z0": 10},
            "flip_row": 14,
            "objects": [
                {"name": "box", "shape": "rect", "top": 2, "left": 3, "bottom": 8, "right": 10, "depth_mm": 1200},
                {"name": "ball", "shape": "disc", "center_row": 20, "center_col": 25, "radius": 4,
                 "depth_mm": 1800, "reflectance": 0.5}
            ]
        }"#;
        let spec = SceneFile::from_json(text).unwrap().to_spec(Path::new(".")).unwrap();
        assert_eq!(spec.names[&1], "box");
        assert_eq!(spec.names[&2], "ball");
        assert_eq!(spec.labels[(5, 5)], 1);
        assert_eq!(spec.labels[(20, 25)], 2);
        assert_eq!(spec.reflectance[(20, 25)], 0.5);
        assert_eq!(spec.depth.depth[(5, 5)], 1200.0);
        assert!(!spec.depth.valid[(0, 0)]);
        assert_eq!(spec.medium.z_saturate, 1000.0);
    }

    #[test]
    fn grid_backed_scene() {
        let dir = tempfile::tempdir().unwrap();
        let mut depth = Grid::filled(12, 12, f64::INFINITY);
        depth[(3, 3)] = 1500.0;
        write_grid(&dir.path().join("d.tofgrid"), &depth, Domain::Depth).unwrap();
        let text = r#"{
            "camera": {"modulation_frequency_hz": 16e6, "rows": 12, "cols": 12},
            "medium": {"beta": 1e-4, "g": 0.5, "z0": 10},
            "depth": "d.tofgrid",
            "label_names": {"1": "pole"},
            "objects": [{"name": "wall", "shape": "rect", "top": 8, "left": 0, "bottom": 12, "right": 12, "depth_mm": 2000}],
            "scattering": {"kind": "analytic", "amplitude_profile": {"kind": "uniform"}}
        }"#;
        let path = dir.path().join("scene.json");
        std::fs::write(&path, text).unwrap();
        let spec = load_scene(&path).unwrap();
        assert_eq!(spec.names[&1], "pole");
        assert_eq!(spec.names[&2], "wall");
        assert_eq!(spec.labels[(3, 3)], 1);
        assert_eq!(spec.labels[(9, 0)], 2);
        assert_eq!(spec.depth.valid.count_true(), 1 + 48);
    }

    #[test]
    fn invalid_scenes() {
        let missing_medium = r#"{"camera": {"modulation_frequency_hz": 16e6, "rows": 4, "cols": 4}}"#;
        assert!(SceneFile::from_json(missing_medium).is_err());
        let unknown = r#"{"camera": {"modulation_frequency_hz": 16e6, "rows": 4, "cols": 4},
            "medium": {"beta": 0, "g": 0, "z0": 10}, "colour": "red"}"#;
        assert!(SceneFile::from_json(unknown).is_err());
        let far = r#"{"camera": {"modulation_frequency_hz": 16e6, "rows": 9, "cols": 9},
            "medium": {"beta": 0, "g": 0, "z0": 10},
            "objects": [{"name": "x", "shape": "rect", "top": 0, "left": 0, "bottom": 2, "right": 2, "depth_mm": 99999}]}"#;
        let err = SceneFile::from_json(far).unwrap().to_spec(Path::new(".")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
