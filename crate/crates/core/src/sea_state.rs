//! Sea-state classification of edited images.
//!
//! Two inference modes share one interface: `learned` runs a trained
//! [`Network`](crate::nn::Network); `synthetic_feature` thresholds a
//! roughness statistic and needs no trained artifact.

use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EditedImage, SeaState};
use crate::nn::{to_tensor, Network};
use crate::texture::ROUGHNESS_GAIN;
use crate::train::{self, argmax_low, ModelSidecar, TrainConfig, TrainReport};

pub const CLASS_ORDER: [&str; 4] = ["SS1", "SS2", "SS3", "SS4"];

/// Probabilities over SS1..SS4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeaStateScores(pub [f64; 4]);

impl SeaStateScores {
    /// Normalises non-negative weights to sum to one.
    pub fn normalized(weights: [f64; 4]) -> Self {
        let sum: f64 = weights.iter().sum();
        Self(weights.map(|w| w / sum))
    }

    /// Highest score; ties resolve to the calmer state.
    pub fn argmax(&self) -> SeaState {
        SeaState::from_index(argmax_low(&self.0)).expect("four scores")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierMode {
    Learned,
    #[default]
    SyntheticFeature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub mode: ClassifierMode,
    pub model_path: Option<PathBuf>,
    pub input_resolution: u32,
    pub seed: u64,
    /// Roughness-statistic thresholds separating SS1|SS2|SS3|SS4.
    pub thresholds: [f64; 3],
    /// Softness of the synthetic-feature scores.
    pub temperature: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            mode: ClassifierMode::default(),
            model_path: None,
            input_resolution: 32,
            seed: 0,
            // Mock roughness quartiles mapped through the texture gain.
            thresholds: [0.25, 0.5, 0.75].map(|r| r * ROUGHNESS_GAIN),
            temperature: 0.01,
        }
    }
}

/// Mean absolute luma difference between 4-neighbours, in `0..=1`.
pub fn roughness_statistic(img: &RgbImage) -> f64 {
    let (w, h) = img.dimensions();
    let luma = |x: u32, y: u32| {
        let p = img.get_pixel(x, y);
        0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
    };
    let mut total = 0.0;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            let here = luma(x, y);
            if x + 1 < w {
                total += (here - luma(x + 1, y)).abs();
                n += 1;
            }
            if y + 1 < h {
                total += (here - luma(x, y + 1)).abs();
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64 / 255.0
    }
}

/// Level = 1 + number of thresholds strictly below `stat`. Scores are a
/// softmax over the distance from `stat` to each level's interval, so the
/// containing interval (distance 0) always wins.
pub fn synthetic_scores(stat: f64, thresholds: &[f64; 3], temperature: f64) -> SeaStateScores {
    let bounds = [f64::NEG_INFINITY, thresholds[0], thresholds[1], thresholds[2], f64::INFINITY];
    let weights = std::array::from_fn(|k| {
        let (lo, hi) = (bounds[k], bounds[k + 1]);
        let d = if stat < lo {
            lo - stat
        } else if stat > hi {
            stat - hi
        } else {
            0.0
        };
        (-d / temperature.max(1e-12)).exp()
    });
    SeaStateScores::normalized(weights)
}

pub enum SeaStateClassifier {
    SyntheticFeature { thresholds: [f64; 3], temperature: f64 },
    Learned { net: Network, resolution: u32 },
}

impl SeaStateClassifier {
    pub fn from_config(cfg: &ClassifierConfig) -> Result<Self> {
        match cfg.mode {
            ClassifierMode::SyntheticFeature => {
                let t = cfg.thresholds;
                if !(t[0] < t[1] && t[1] < t[2]) {
                    return Err(Error::Config("sea-state thresholds must increase".into()));
                }
                Ok(Self::SyntheticFeature {
                    thresholds: t,
                    temperature: cfg.temperature,
                })
            }
            ClassifierMode::Learned => {
                let path = cfg
                    .model_path
                    .as_deref()
                    .ok_or_else(|| Error::ModelMissing(PathBuf::from("<classifier.model_path unset>")))?;
                let (net, sidecar) = train::load_artifact(path)?;
                if sidecar.class_order != CLASS_ORDER {
                    return Err(Error::Config(format!(
                        "{}: class order {:?} is not SS1..SS4",
                        path.display(),
                        sidecar.class_order
                    )));
                }
                Ok(Self::Learned {
                    net,
                    resolution: sidecar.input_resolution,
                })
            }
        }
    }

    pub fn scores(&self, img: &RgbImage) -> SeaStateScores {
        match self {
            Self::SyntheticFeature {
                thresholds,
                temperature,
            } => synthetic_scores(roughness_statistic(img), thresholds, *temperature),
            Self::Learned { net, resolution } => {
                let p = net.predict(&to_tensor(img, *resolution));
                SeaStateScores::normalized([p[0], p[1], p[2], p[3]])
            }
        }
    }

    pub fn classify(&self, img: &RgbImage) -> (SeaState, SeaStateScores) {
        let s = self.scores(img);
        (s.argmax(), s)
    }
}

/// Classifies and records the state on the image.
pub fn classify_sea_state(
    image: &mut EditedImage,
    classifier: &SeaStateClassifier,
) -> (SeaState, SeaStateScores) {
    let (state, scores) = classifier.classify(&image.pixels);
    image.sea_state = Some(state);
    (state, scores)
}

/// Trains on `corpus/SS1..SS4/*.png` and writes the artifact to `out_dir`.
pub fn train_sea_state_classifier(corpus: &Path, cfg: &TrainConfig, out_dir: &Path) -> Result<TrainReport> {
    let dirs: Vec<(&str, PathBuf)> = CLASS_ORDER.iter().map(|c| (*c, corpus.join(c))).collect();
    let samples = train::load_class_dirs(&dirs)?;
    let (train_set, test_set) = train::split(samples, 4, cfg.test_fraction, cfg.seed);
    let (net, report) = train::train(&train_set, &test_set, &CLASS_ORDER, cfg)?;
    train::save_artifact(
        out_dir,
        &net,
        &ModelSidecar {
            task: "sea_state".into(),
            mode: "learned".into(),
            arch: net.arch,
            input_resolution: cfg.resolution,
            class_order: CLASS_ORDER.iter().map(|s| s.to_string()).collect(),
            seed: cfg.seed,
            test_accuracy: report.test_accuracy,
            weights_file: train::WEIGHTS_FILE.into(),
        },
    )?;
    Ok(report)
}
