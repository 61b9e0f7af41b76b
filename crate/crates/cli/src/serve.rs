//! `salseg serve-synthetic`: the provider side of the line protocol backed
//! by synthetic scenes, for exercising subprocess providers and oracles
//! end to end without a model.
//!
//! `init.image` is either a scene file (`*.json`) or an image inside a
//! benchmark directory, whose scene is `../scenes/<stem>.json`.

use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clap::Args;
use salseg::evalkit::PaletteFile;
use salseg::provider::{
    serve, ProviderError, ProviderFactory, ProviderInit, SalienceProvider, SyntheticProvider, SyntheticScene,
};
use salseg::tuner::{PaletteOracle, SimilarityOracle};
use salseg::RgbImage;

use crate::common::{read_json, CmdResult, Failure};

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Also answer oracle queries, scoring by these class colours.
    #[arg(long, value_name = "FILE")]
    palette: Option<PathBuf>,
}

struct SceneFactory {
    oracle: Option<PaletteOracle>,
}

impl ProviderFactory for SceneFactory {
    fn create(&mut self, init: &ProviderInit) -> Result<Box<dyn SalienceProvider>, ProviderError> {
        let path = scene_path(Path::new(&init.image));
        let scene: SyntheticScene = read_json(&path).map_err(|e| ProviderError::InvalidInit(format!("{e:#}")))?;
        scene.validate()?;
        if scene.n_classes() != init.classes.len() {
            return Err(ProviderError::InvalidInit(format!(
                "scene plants {} classes but {} were requested",
                scene.n_classes(),
                init.classes.len()
            )));
        }
        if scene.grid() != init.grid {
            return Err(ProviderError::InvalidInit(format!(
                "scene grid is {} but {} was requested",
                scene.grid(),
                init.grid
            )));
        }
        Ok(Box::new(SyntheticProvider::at(scene, init.layer, init.head)))
    }

    fn oracle_input_size(&mut self) -> Result<Option<u32>, ProviderError> {
        match &self.oracle {
            Some(_) => Ok(None),
            None => Err(ProviderError::Protocol("started without --palette; no oracle".into())),
        }
    }

    fn score(&mut self, image: &RgbImage, classes: &[String]) -> Result<Vec<f64>, ProviderError> {
        let oracle = self
            .oracle
            .as_mut()
            .ok_or_else(|| ProviderError::Protocol("started without --palette; no oracle".into()))?;
        oracle
            .score(image, classes)
            .map_err(|e| ProviderError::Remote(e.to_string()))
    }
}

fn scene_path(image: &Path) -> PathBuf {
    if image.extension().is_some_and(|e| e == "json") {
        return image.to_path_buf();
    }
    let stem = image.file_stem().unwrap_or_default();
    let root = image.parent().and_then(Path::parent).unwrap_or(Path::new("."));
    root.join("scenes").join(stem).with_extension("json")
}

pub fn run(args: ServeArgs) -> CmdResult {
    let oracle = match &args.palette {
        None => None,
        Some(path) => {
            let palette: PaletteFile = read_json(path).map_err(|e| Failure::Usage(format!("{e:#}")))?;
            Some(PaletteOracle::new(palette))
        }
    };
    let mut factory = SceneFactory { oracle };
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    serve(
        BufReader::new(stdin.lock()),
        BufWriter::new(stdout.lock()),
        &mut factory,
    )
    .map_err(|e| Failure::Runtime(e.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_beside_images() {
        assert_eq!(
            scene_path(Path::new("d/scenes/a.json")),
            PathBuf::from("d/scenes/a.json")
        );
        assert_eq!(
            scene_path(Path::new("d/images/img_003.ppm")),
            PathBuf::from("d/scenes/img_003.json")
        );
    }
}
