//! Shared training harness for the two image classifiers.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::error::{Error, Result};
use crate::model::load_rgb;
use crate::nn::{to_tensor, Adam, Arch, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Share of each class held out for testing.
    pub test_fraction: f64,
    pub resolution: u32,
    /// Class indices that get random horizontal flips.
    pub hflip_classes: Vec<usize>,
    /// Class indices that get random blur.
    pub blur_classes: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            test_fraction: 0.2,
            resolution: 32,
            hflip_classes: Vec::new(),
            blur_classes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub classes: Vec<String>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: String,
    pub n_train: usize,
    pub n_test: usize,
    /// Mean training-set loss before the first update.
    pub initial_loss: f64,
    /// Mean training-set loss after the last epoch.
    pub final_loss: f64,
    /// Running mean loss of each epoch, augmentation included.
    pub epoch_losses: Vec<f64>,
    pub test_accuracy: f64,
    pub log: Vec<String>,
}

/// Sidecar written next to the weights file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub task: String,
    pub mode: String,
    pub arch: Arch,
    pub input_resolution: u32,
    pub class_order: Vec<String>,
    pub seed: u64,
    pub test_accuracy: f64,
    pub weights_file: String,
}

pub const SIDECAR_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "model.weights";

pub fn save_artifact(dir: &Path, net: &Network, sidecar: &ModelSidecar) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    net.save(&dir.join(&sidecar.weights_file))?;
    let json = serde_json::to_string_pretty(sidecar).map_err(|e| Error::io(dir, e.into()))?;
    let p = dir.join(SIDECAR_FILE);
    fs::write(&p, json).map_err(|e| Error::io(&p, e))
}

/// Loads from a model directory or directly from its sidecar file.
pub fn load_artifact(path: &Path) -> Result<(Network, ModelSidecar)> {
    let sidecar_path = if path.is_dir() {
        path.join(SIDECAR_FILE)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&sidecar_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::ModelMissing(sidecar_path.clone()),
        _ => Error::io(&sidecar_path, e),
    })?;
    let sidecar: ModelSidecar = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", sidecar_path.display())))?;
    let dir = sidecar_path.parent().unwrap_or(Path::new("."));
    let net = Network::load(sidecar.arch, &dir.join(&sidecar.weights_file))?;
    Ok((net, sidecar))
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub path: PathBuf,
    pub image: RgbImage,
    pub label: usize,
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = match fs::read_dir(dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(dir, e)),
    };
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// One directory per class; every class must contain at least one image.
pub fn load_class_dirs(dirs: &[(&str, PathBuf)]) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for (label, (name, dir)) in dirs.iter().enumerate() {
        let files = image_files(dir)?;
        if files.is_empty() {
            return Err(Error::EmptyClass(name.to_string()));
        }
        for path in files {
            let image = load_rgb(&path)?;
            samples.push(Sample { path, image, label });
        }
    }
    Ok(samples)
}

/// Stratified seeded split. Every class keeps at least one training example.
pub fn split(samples: Vec<Sample>, classes: usize, fraction: f64, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5EED);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut by_class: Vec<Vec<Sample>> = vec![Vec::new(); classes];
    for s in samples {
        by_class[s.label].push(s);
    }
    for mut group in by_class {
        group.shuffle(&mut rng);
        let n = group.len();
        let n_test = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
        let rest = group.split_off(n_test);
        test.extend(group);
        train.extend(rest);
    }
    (train, test)
}

fn hflip(t: &[f64], side: usize) -> Vec<f64> {
    let mut out = t.to_vec();
    for row in out.chunks_mut(side) {
        row.reverse();
    }
    out
}

fn mean_loss(net: &Network, data: &[(Vec<f64>, usize)]) -> f64 {
    let mut scratch = vec![0.0; net.params().len()];
    data.iter()
        .map(|(x, y)| net.accumulate_gradient(x, *y, 0.0, &mut scratch))
        .sum::<f64>()
        / data.len().max(1) as f64
}

pub fn argmax_low(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn train(
    train_set: &[Sample],
    test_set: &[Sample],
    class_names: &[&str],
    cfg: &TrainConfig,
) -> Result<(Network, TrainReport)> {
    if cfg.batch_size == 0 || cfg.epochs == 0 || !cfg.resolution.is_multiple_of(2) {
        return Err(Error::Config(
            "epochs and batch_size must be positive and resolution even".into(),
        ));
    }
    for (i, name) in class_names.iter().enumerate() {
        if !train_set.iter().any(|s| s.label == i) {
            return Err(Error::EmptyClass(name.to_string()));
        }
    }
    let side = cfg.resolution as usize;
    let arch = Arch::new(side, class_names.len());
    let mut net = Network::new(arch, cfg.seed);
    let mut opt = Adam::new(cfg.learning_rate, net.params().len());

    let prep = |s: &Sample| (to_tensor(&s.image, cfg.resolution), s.label);
    let train_data: Vec<(Vec<f64>, usize)> = train_set.iter().map(prep).collect();
    let blurred: Vec<Option<Vec<f64>>> = train_set
        .iter()
        .map(|s| {
            cfg.blur_classes
                .contains(&s.label)
                .then(|| to_tensor(&image::imageops::blur(&s.image, 1.0), cfg.resolution))
        })
        .collect();
    let test_data: Vec<(Vec<f64>, usize)> = test_set.iter().map(prep).collect();
    net.calibrate(train_data.iter().map(|(x, _)| x.as_slice()));

    let augment = |labels: &[usize]| -> String {
        if labels.is_empty() {
            "none".into()
        } else {
            labels.iter().map(|&i| class_names[i]).collect::<Vec<_>>().join(",")
        }
    };
    let mut log = vec![format!(
        "train classes=[{}] n_train={} n_test={} epochs={} batch={} lr={:e} optimizer=Adam decay=none hflip=[{}] blur=[{}] seed={}",
        class_names.join(","),
        train_data.len(),
        test_data.len(),
        cfg.epochs,
        cfg.batch_size,
        cfg.learning_rate,
        augment(&cfg.hflip_classes),
        augment(&cfg.blur_classes),
        cfg.seed
    )];
    info!("{}", log[0]);

    let initial_loss = mean_loss(&net, &train_data);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut grad = vec![0.0; net.params().len()];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (x, y) = &train_data[i];
                let mut input = match &blurred[i] {
                    Some(b) if rng.random_bool(0.5) => b.clone(),
                    _ => x.clone(),
                };
                if cfg.hflip_classes.contains(y) && rng.random_bool(0.5) {
                    input = hflip(&input, side);
                }
                total += net.accumulate_gradient(&input, *y, scale, &mut grad);
            }
            let mut params = net.params().to_vec();
            opt.step(&mut params, &grad);
            net.params_mut().copy_from_slice(&params);
        }
        let loss = total / train_data.len() as f64;
        if !loss.is_finite() {
            return Err(Error::DivergedTraining { epoch, loss });
        }
        epoch_losses.push(loss);
        let line = format!("epoch {epoch}/{} loss={loss:.6}", cfg.epochs);
        info!("{line}");
        log.push(line);
    }

    let final_loss = mean_loss(&net, &train_data);
    if !final_loss.is_finite() {
        return Err(Error::DivergedTraining {
            epoch: cfg.epochs,
            loss: final_loss,
        });
    }
    let correct = test_data
        .iter()
        .filter(|(x, y)| argmax_low(&net.predict(x)) == *y)
        .count();
    let test_accuracy = if test_data.is_empty() {
        0.0
    } else {
        correct as f64 / test_data.len() as f64
    };
    let line = format!(
        "done initial_loss={initial_loss:.6} final_loss={final_loss:.6} test_accuracy={test_accuracy:.4}"
    );
    info!("{line}");
    log.push(line);

    Ok((
        net,
        TrainReport {
            classes: class_names.iter().map(|s| s.to_string()).collect(),
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            optimizer: "Adam".into(),
            n_train: train_data.len(),
            n_test: test_data.len(),
            initial_loss,
            final_loss,
            epoch_losses,
            test_accuracy,
            log,
        },
    ))
}
