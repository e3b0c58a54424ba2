//! Eligible augmentation detector: predicts whether a sub-document combination,
//! seen only through its members' score pairs, is enough for a correct answer.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::DetectorExample;
use super::ReducerError;
use crate::nn::{bce_with_logit, sigmoid, Adam, Mlp};
use crate::seed::stream_rng;

pub trait EligibilityDetector: Send + Sync {
    /// `features` is a zero-padded score-pair vector of width `2 * max_docs`.
    fn accepts(&self, features: &[f64]) -> bool;
}

impl<F: Fn(&[f64]) -> bool + Send + Sync> EligibilityDetector for F {
    fn accepts(&self, features: &[f64]) -> bool {
        self(features)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub net: Mlp,
    pub max_docs: usize,
    pub seed: u64,
}

const MODEL_FORMAT: &str = "fitrag-detector";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    architecture: Vec<usize>,
    params: Vec<f64>,
    max_docs: usize,
    seed: u64,
}

impl DetectorModel {
    pub fn probability(&self, features: &[f64]) -> f64 {
        sigmoid(self.net.forward(features)[0])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ReducerError> {
        let path = path.as_ref();
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: 1,
            architecture: self.net.sizes().to_vec(),
            params: self.net.params().to_vec(),
            max_docs: self.max_docs,
            seed: self.seed,
        };
        let err = |message: String| ReducerError::File {
            path: path.to_path_buf(),
            message,
        };
        fs::write(path, serde_json::to_string(&file).map_err(|e| err(e.to_string()))?).map_err(|e| err(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReducerError> {
        let path = path.as_ref();
        let err = |message: String| ReducerError::File {
            path: path.to_path_buf(),
            message,
        };
        let raw = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let file: ModelFile = serde_json::from_str(&raw).map_err(|e| err(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != 1 {
            return Err(err(format!("unsupported format {} v{}", file.format, file.version)));
        }
        if file.architecture.first() != Some(&(2 * file.max_docs)) || file.architecture.last() != Some(&1) {
            return Err(err("architecture does not match max_docs".into()));
        }
        Ok(Self {
            net: Mlp::from_params(file.architecture, file.params).map_err(err)?,
            max_docs: file.max_docs,
            seed: file.seed,
        })
    }
}

impl EligibilityDetector for DetectorModel {
    fn accepts(&self, features: &[f64]) -> bool {
        self.probability(features) >= 0.5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub holdout_fraction: f64,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            hidden: vec![64, 32, 16],
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedDetector {
    pub model: DetectorModel,
    pub holdout_accuracy: f64,
    pub holdout_size: usize,
}

/// Mean BCE over `examples` and its parameter gradient.
pub fn detector_loss_and_grad(net: &Mlp, examples: &[&DetectorExample]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; net.param_count()];
    let n = examples.len() as f64;
    let mut total = 0.0;
    for ex in examples {
        let trace = net.forward_trace(&ex.features);
        let (l, d) = bce_with_logit(trace.output()[0], f64::from(u8::from(ex.label)));
        net.backward(&trace, &[d / n], &mut grad);
        total += l;
    }
    (total / n, grad)
}

/// Supervised training with Adam on a seeded split; the held-out part is only
/// used for the reported accuracy.
pub fn train_detector(examples: &[DetectorExample], cfg: &DetectorTrainConfig) -> Result<TrainedDetector, ReducerError> {
    let positives = examples.iter().filter(|e| e.label).count();
    if positives == 0 || positives == examples.len() {
        return Err(ReducerError::Degenerate(format!(
            "need both labels, got {positives} positive of {}",
            examples.len()
        )));
    }
    let width = examples[0].features.len();
    if width == 0 || width % 2 != 0 || examples.iter().any(|e| e.features.len() != width) {
        return Err(ReducerError::Config("detector features must share one even width".into()));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(ReducerError::Config("batch size and learning rate must be positive".into()));
    }

    let mut idx: Vec<usize> = (0..examples.len()).collect();
    idx.shuffle(&mut stream_rng(cfg.seed, "detector/split"));
    let n_hold = ((examples.len() as f64 * cfg.holdout_fraction).round() as usize).min(examples.len() - 1);
    let (hold, train) = idx.split_at(n_hold);
    let mut train = train.to_vec();

    let mut sizes = vec![width];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let mut net = Mlp::new(&sizes, &mut stream_rng(cfg.seed, "detector/init"));
    let mut adam = Adam::new(net.param_count(), cfg.learning_rate);
    let mut rng = stream_rng(cfg.seed, "detector/shuffle");
    for _ in 0..cfg.epochs {
        train.shuffle(&mut rng);
        for chunk in train.chunks(cfg.batch_size) {
            let batch: Vec<&DetectorExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let (_, grad) = detector_loss_and_grad(&net, &batch);
            adam.step(net.params_mut(), &grad);
        }
    }
    let model = DetectorModel {
        net,
        max_docs: width / 2,
        seed: cfg.seed,
    };
    let holdout_accuracy = if hold.is_empty() {
        f64::NAN
    } else {
        hold.iter()
            .filter(|&&i| model.accepts(&examples[i].features) == examples[i].label)
            .count() as f64
            / hold.len() as f64
    };
    log::info!("detector holdout accuracy {holdout_accuracy:.3} on {} examples", hold.len());
    Ok(TrainedDetector {
        model,
        holdout_accuracy,
        holdout_size: hold.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn example(features: Vec<f64>, label: bool) -> DetectorExample {
        DetectorExample {
            question_id: String::new(),
            member_subdoc_ids: Vec::new(),
            score_pair: [0.0, 0.0],
            features,
            label,
        }
    }

    fn separable(n: usize, seed: u64) -> Vec<DetectorExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let f: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
                let label = f[0] > 0.7;
                example(f, label)
            })
            .collect()
    }

    fn small_cfg() -> DetectorTrainConfig {
        DetectorTrainConfig {
            learning_rate: 5e-3,
            epochs: 150,
            ..Default::default()
        }
    }

    #[test]
    fn learns_a_separable_rule() {
        let t = train_detector(&separable(600, 1), &small_cfg()).unwrap();
        assert!(t.holdout_accuracy >= 0.95, "{}", t.holdout_accuracy);
    }

    #[test]
    fn deterministic_per_seed() {
        let data = separable(100, 2);
        let cfg = DetectorTrainConfig { epochs: 5, ..small_cfg() };
        assert_eq!(train_detector(&data, &cfg).unwrap().model, train_detector(&data, &cfg).unwrap().model);
    }

    #[test]
    fn single_class_refused() {
        let data: Vec<_> = (0..10).map(|i| example(vec![i as f64, 0.0], true)).collect();
        assert!(matches!(train_detector(&data, &small_cfg()), Err(ReducerError::Degenerate(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = separable(8, 3);
        let refs: Vec<&DetectorExample> = data.iter().collect();
        let net = Mlp::new(&[6, 64, 32, 16, 1], &mut ChaCha8Rng::seed_from_u64(4));
        let (_, g) = detector_loss_and_grad(&net, &refs);
        let h = 1e-5;
        for i in (0..net.param_count()).step_by(7) {
            let mut p = net.clone();
            p.params_mut()[i] += h;
            let mut m = net.clone();
            m.params_mut()[i] -= h;
            let fd = (detector_loss_and_grad(&p, &refs).0 - detector_loss_and_grad(&m, &refs).0) / (2.0 * h);
            let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-4, "param {i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn model_file_round_trip() {
        let t = train_detector(&separable(40, 5), &DetectorTrainConfig { epochs: 2, ..small_cfg() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.json");
        t.model.save(&path).unwrap();
        assert_eq!(DetectorModel::load(&path).unwrap(), t.model);
    }
}
