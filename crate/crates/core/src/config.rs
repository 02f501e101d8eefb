//! Run configuration: a flat `key = value` file with command-line overrides
//! and a fingerprint over every setting that affects results.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::encoder::EncoderKind;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::mdp::RewardMode;
use crate::model::ModelShape;
use crate::train::{LossMode, OptimizerKind, StartPoint, TrainConfig};
use crate::transe::TransEConfig;

pub const SEED_ENV: &str = "REKS_SEED";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub interactions: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub workdir: PathBuf,

    pub min_item_count: usize,
    pub min_session_len: usize,
    pub split: [f64; 3],
    pub user_info: bool,

    pub embed_dim: usize,
    pub session_dim: usize,
    pub state_dim: usize,
    pub encoder: EncoderKind,
    pub dropout: f64,

    pub transe_epochs: usize,
    pub transe_learning_rate: f64,
    pub transe_margin: f64,
    pub transe_negatives: usize,

    pub path_length: usize,
    pub sampling_sizes: Vec<usize>,
    pub gamma: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub baseline_decay: f64,
    pub grad_clip: f64,
    pub optimizer: OptimizerKind,
    pub reward_mode: RewardMode,
    pub loss_mode: LossMode,
    pub start: StartPoint,

    pub beam_widths: Vec<usize>,
    pub topk: Vec<usize>,
    pub exclude_seen: bool,

    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            interactions: None,
            metadata: None,
            workdir: PathBuf::from("work"),
            min_item_count: 5,
            min_session_len: 2,
            split: [0.75, 0.10, 0.15],
            user_info: false,
            embed_dim: 400,
            session_dim: 400,
            state_dim: 400,
            encoder: EncoderKind::Gru,
            dropout: 0.5,
            transe_epochs: 100,
            transe_learning_rate: 0.01,
            transe_margin: 1.0,
            transe_negatives: 1,
            path_length: 2,
            sampling_sizes: vec![100, 1],
            gamma: 0.99,
            beta: 0.2,
            learning_rate: 0.001,
            batch_size: 256,
            epochs: 30,
            baseline_decay: 0.9,
            grad_clip: 0.0,
            optimizer: OptimizerKind::Sgd,
            reward_mode: RewardMode::Full,
            loss_mode: LossMode::Combined,
            start: StartPoint::LastItem,
            beam_widths: vec![100, 1],
            topk: vec![5, 10, 20],
            exclude_seen: false,
            seed: 0,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Small dimensions and a short schedule for the synthetic benchmark.
    pub fn synthetic() -> Self {
        RunConfig {
            embed_dim: 32,
            session_dim: 32,
            state_dim: 32,
            dropout: 0.0,
            transe_epochs: 200,
            learning_rate: 0.01,
            batch_size: 16,
            epochs: 30,
            grad_clip: 1.0,
            optimizer: OptimizerKind::Adam,
            ..RunConfig::default()
        }
    }

    /// Every setting as `(key, value)` in file syntax.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("interactions", opt_path(&self.interactions)),
            ("metadata", opt_path(&self.metadata)),
            ("workdir", self.workdir.display().to_string()),
            ("min_item_count", self.min_item_count.to_string()),
            ("min_session_len", self.min_session_len.to_string()),
            ("split", join(&self.split)),
            ("user_info", self.user_info.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("session_dim", self.session_dim.to_string()),
            ("state_dim", self.state_dim.to_string()),
            ("encoder", self.encoder.to_string()),
            ("dropout", self.dropout.to_string()),
            ("transe_epochs", self.transe_epochs.to_string()),
            ("transe_learning_rate", self.transe_learning_rate.to_string()),
            ("transe_margin", self.transe_margin.to_string()),
            ("transe_negatives", self.transe_negatives.to_string()),
            ("path_length", self.path_length.to_string()),
            ("sampling_sizes", join(&self.sampling_sizes)),
            ("gamma", self.gamma.to_string()),
            ("beta", self.beta.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("baseline_decay", self.baseline_decay.to_string()),
            ("grad_clip", self.grad_clip.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("reward_mode", self.reward_mode.to_string()),
            ("loss_mode", self.loss_mode.to_string()),
            ("start", self.start.to_string()),
            ("beam_widths", join(&self.beam_widths)),
            ("topk", join(&self.topk)),
            ("exclude_seen", self.exclude_seen.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let path = |v: &str| if v.is_empty() { None } else { Some(PathBuf::from(v)) };
        match key.trim() {
            "interactions" => self.interactions = path(v),
            "metadata" => self.metadata = path(v),
            "workdir" => self.workdir = PathBuf::from(v),
            "min_item_count" => self.min_item_count = parse_value(key, v)?,
            "min_session_len" => self.min_session_len = parse_value(key, v)?,
            "split" => {
                let parts: Vec<f64> = parse_list(key, v)?;
                self.split = parts
                    .try_into()
                    .map_err(|_| Error::Config("split needs three ratios".into()))?;
            }
            "user_info" => self.user_info = parse_value(key, v)?,
            "embed_dim" => self.embed_dim = parse_value(key, v)?,
            "session_dim" => self.session_dim = parse_value(key, v)?,
            "state_dim" => self.state_dim = parse_value(key, v)?,
            "encoder" => self.encoder = parse_value(key, v)?,
            "dropout" => self.dropout = parse_value(key, v)?,
            "transe_epochs" => self.transe_epochs = parse_value(key, v)?,
            "transe_learning_rate" => self.transe_learning_rate = parse_value(key, v)?,
            "transe_margin" => self.transe_margin = parse_value(key, v)?,
            "transe_negatives" => self.transe_negatives = parse_value(key, v)?,
            "path_length" => self.path_length = parse_value(key, v)?,
            "sampling_sizes" => self.sampling_sizes = parse_list(key, v)?,
            "gamma" => self.gamma = parse_value(key, v)?,
            "beta" => self.beta = parse_value(key, v)?,
            "learning_rate" => self.learning_rate = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "baseline_decay" => self.baseline_decay = parse_value(key, v)?,
            "grad_clip" => self.grad_clip = parse_value(key, v)?,
            "optimizer" => self.optimizer = parse_value(key, v)?,
            "reward_mode" => self.reward_mode = parse_value(key, v)?,
            "loss_mode" => self.loss_mode = parse_value(key, v)?,
            "start" => self.start = parse_value(key, v)?,
            "beam_widths" => self.beam_widths = parse_list(key, v)?,
            "topk" => self.topk = parse_list(key, v)?,
            "exclude_seen" => self.exclude_seen = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// `k=v` override as given on the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(k, v)
    }

    pub fn apply_seed_env(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.seed = parse_value(SEED_ENV, v)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hash of every setting except file locations.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.to_pairs() {
            if matches!(k, "interactions" | "metadata" | "workdir") {
                continue;
            }
            h.update(format!("{k}={v}\n"));
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.embed_dim == 0 || self.session_dim == 0 || self.state_dim == 0 {
            return fail("dimensions must be positive".into());
        }
        if self.encoder == EncoderKind::Mean && self.session_dim != self.embed_dim {
            return fail("the mean-pool encoder needs session_dim == embed_dim".into());
        }
        let train = self.train_config();
        train.validate()?;
        if train.loss_weights().reward > 0.0 && self.reward_mode.uses_path() && self.session_dim != self.embed_dim {
            return fail(format!(
                "path-level reward needs session_dim == embed_dim, got {} and {}",
                self.session_dim, self.embed_dim
            ));
        }
        self.transe_config().validate()?;
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.beam_widths.len() != self.path_length || self.beam_widths.contains(&0) {
            return fail(format!(
                "need {} positive beam widths, got {:?}",
                self.path_length, self.beam_widths
            ));
        }
        if self.topk.is_empty() || self.topk.contains(&0) {
            return fail("topk values must be positive".into());
        }
        if self.start == StartPoint::User && !self.user_info {
            return fail("starting from the user needs user_info = true".into());
        }
        Ok(())
    }

    pub fn transe_config(&self) -> TransEConfig {
        TransEConfig {
            dim: self.embed_dim,
            margin: self.transe_margin,
            learning_rate: self.transe_learning_rate,
            epochs: self.transe_epochs,
            negatives: self.transe_negatives,
            seed: self.seed,
        }
    }

    pub fn model_shape(&self) -> ModelShape {
        ModelShape {
            encoder: self.encoder,
            embed_dim: self.embed_dim,
            session_dim: self.session_dim,
            state_dim: self.state_dim,
            dropout: self.dropout,
        }
    }

    /// Seed for model initialization; training draws from `seed + 3`.
    pub fn model_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            path_length: self.path_length,
            sampling_sizes: self.sampling_sizes.clone(),
            gamma: self.gamma,
            beta: self.beta,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            baseline_decay: self.baseline_decay,
            grad_clip: self.grad_clip,
            optimizer: self.optimizer,
            reward_mode: self.reward_mode,
            loss_mode: self.loss_mode,
            start: self.start,
            seed: self.seed.wrapping_add(3),
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            widths: self.beam_widths.clone(),
            ks: self.topk.clone(),
            start: self.start,
            exclude_seen: self.exclude_seen,
        }
    }

    /// Sets path length together with matching sampling sizes and beam widths.
    pub fn set_path_length(&mut self, t: usize, widths: &[usize]) {
        self.path_length = t;
        self.sampling_sizes = widths.to_vec();
        self.beam_widths = widths.to_vec();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::synthetic();
        c.interactions = Some("a.tsv".into());
        c.seed = 17;
        let mut d = RunConfig::default();
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
        assert_eq!(c.fingerprint(), d.fingerprint());
    }

    #[test]
    fn overrides_and_errors() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nbeta = 0.4  # trailing\n\ntopk=5,10\n").unwrap();
        assert_eq!(c.beta, 0.4);
        assert_eq!(c.topk, vec![5, 10]);
        c.apply_override("encoder=mean").unwrap();
        assert_eq!(c.encoder, EncoderKind::Mean);
        assert!(c.apply_override("nonsense=1").is_err());
        assert!(c.apply_override("beta").is_err());
        assert!(c.apply_text("epochs = many").is_err());
    }

    #[test]
    fn env_seed_overrides_file_seed() {
        let mut c = RunConfig::default();
        c.apply_text("seed = 3").unwrap();
        c.apply_seed_env(Some("11")).unwrap();
        assert_eq!(c.seed, 11);
        c.apply_seed_env(None).unwrap();
        assert_eq!(c.seed, 11);
        assert!(c.apply_seed_env(Some("x")).is_err());
    }

    #[test]
    fn fingerprint_ignores_locations_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.workdir = "elsewhere".into();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 16);
    }

    #[test]
    fn validation_rules() {
        assert!(RunConfig::default().validate().is_ok());
        assert!(RunConfig::synthetic().validate().is_ok());
        let mut c = RunConfig::default();
        c.session_dim = 100;
        assert!(c.validate().is_err());
        c.reward_mode = RewardMode::NoRank;
        assert!(c.validate().is_err());
        c.reward_mode = RewardMode::ItemOnly;
        assert!(c.validate().is_ok());
        let mut c = RunConfig::default();
        c.start = StartPoint::User;
        assert!(c.validate().is_err());
        c.user_info = true;
        assert!(c.validate().is_ok());
        let mut c = RunConfig::default();
        c.beam_widths = vec![100];
        assert!(c.validate().is_err());
    }
}
