//! Scene-directory layout: `gt.txt` (MOT16 ground-truth rows), COLMAP-style
//! `cameras.txt` / `images.txt`, and `scene.json` echoing config and spheres.

use super::colmap::write_colmap_text;
use super::mot16::{format_mot16, Mot16Row};
use super::IoFormatError;
use crate::simulator::{GroundTruthScene, SceneConfig, Sphere};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const GT_FILE: &str = "gt.txt";
pub const CAMERAS_FILE: &str = "cameras.txt";
pub const IMAGES_FILE: &str = "images.txt";
pub const SCENE_FILE: &str = "scene.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub config: SceneConfig,
    pub spheres: Vec<Sphere>,
}

pub fn gt_rows(scene: &GroundTruthScene) -> Vec<Mot16Row> {
    scene.gt_boxes.iter().map(|b| Mot16Row::from_labeled(b, 1.0)).collect()
}

pub fn write_scene_dir(dir: &Path, scene: &GroundTruthScene) -> Result<(), IoFormatError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(GT_FILE), format_mot16(&gt_rows(scene)))?;
    write_colmap_text(
        &dir.join(CAMERAS_FILE),
        &dir.join(IMAGES_FILE),
        &scene.config.intrinsics,
        &scene.cams,
    )?;
    let scene_file = SceneFile { config: scene.config.clone(), spheres: scene.spheres.clone() };
    std::fs::write(dir.join(SCENE_FILE), serde_json::to_string_pretty(&scene_file)?)?;
    Ok(())
}

pub fn read_scene_json(path: &Path) -> Result<SceneFile, IoFormatError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::colmap::read_colmap;
    use crate::io::mot16::read_mot16;
    use crate::simulator::generate_scene;

    #[test]
    fn scene_dir_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SceneConfig { n_spheres: 5, n_frames: 15, seed: 4, ..SceneConfig::default() };
        let scene = generate_scene(&cfg).unwrap();
        write_scene_dir(dir.path(), &scene).unwrap();

        let rows = read_mot16(&dir.path().join(GT_FILE)).unwrap();
        assert_eq!(rows.len(), scene.gt_boxes.len());

        let model = read_colmap(&dir.path().join(CAMERAS_FILE), &dir.path().join(IMAGES_FILE)).unwrap();
        assert_eq!(model.cams.len(), 15);

        let scene_file = read_scene_json(&dir.path().join(SCENE_FILE)).unwrap();
        assert_eq!(scene_file.config, cfg);
        assert_eq!(scene_file.spheres, scene.spheres);
    }
}
