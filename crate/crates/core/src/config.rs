//! Experiment configuration and its plain-text `key = value` format.
//!
//! ```text
//! # comment
//! [data]
//! source = mnist
//! schedule = 0,1; 2,3; 4,5; 6,7; 8,9
//!
//! [model]
//! hidden = 256,128
//!
//! [method]
//! method = supportnet
//! budget = 2000
//!
//! [optimizer]
//! learning_rate = 0.05
//! ```
//!
//! Unknown sections or keys, duplicate keys and malformed values are errors
//! carrying the 1-based line number.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Activation;
use crate::selector::SelectionMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SupportNet,
    SupportNetNoEwc,
    SupportNetNoFeature,
    SupportOnly,
    FineTune,
    AllData,
    RandomGuess,
    RandomRehearsal,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::SupportNet,
        Method::SupportNetNoEwc,
        Method::SupportNetNoFeature,
        Method::SupportOnly,
        Method::FineTune,
        Method::AllData,
        Method::RandomGuess,
        Method::RandomRehearsal,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::SupportNet => "supportnet",
            Method::SupportNetNoEwc => "supportnet_no_ewc",
            Method::SupportNetNoFeature => "supportnet_no_feature",
            Method::SupportOnly => "support_only",
            Method::FineTune => "fine_tune",
            Method::AllData => "all_data",
            Method::RandomGuess => "random_guess",
            Method::RandomRehearsal => "random_rehearsal",
        }
    }

    /// Methods that keep an SVM-selected support set.
    pub fn uses_svm_support(self) -> bool {
        matches!(
            self,
            Method::SupportNet | Method::SupportNetNoEwc | Method::SupportNetNoFeature | Method::SupportOnly
        )
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| format!("unknown method '{s}'"))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DataSource {
    /// IDX files under `dir`; `None` defers to the environment / default.
    Mnist { dir: Option<PathBuf> },
    Synthetic {
        classes: usize,
        dim: usize,
        train_per_class: usize,
        test_per_class: usize,
        separation: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source: DataSource,
    /// `None` means consecutive pairs over all classes.
    pub schedule: Option<Vec<Vec<usize>>>,
    /// Keep only the first `n` training examples of each class.
    pub max_train_per_class: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Mnist { dir: None },
            schedule: None,
            max_train_per_class: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub output_init_stdev: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 128],
            activation: Activation::Relu,
            output_init_stdev: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Per-increment multiplier on the learning rate of incremental methods.
    pub lr_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 64,
            lr_decay: 0.5,
        }
    }
}

/// How rehearsal rounds form minibatches from support and new data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mixing {
    /// Shuffle the merged set and cut it into batches.
    #[default]
    Shuffled,
    /// An epoch is one pass over the new data; every batch of new examples
    /// is paired with an equally sized draw from a reshuffled cycle over the
    /// support set.
    Replay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    /// Methods run by `compare`.
    pub methods: Vec<Method>,
    pub budget: usize,
    pub lambda_f: f64,
    pub lambda_ewc: f64,
    pub epochs: usize,
    pub all_data_epochs: usize,
    pub fisher_samples: usize,
    /// Fisher sample size drawn from the round's data when there is no
    /// support set (budget 0).
    pub fisher_fallback_size: usize,
    pub selection: SelectionMode,
    pub mixing: Mixing,
    pub svm_c: f64,
    pub svm_tolerance: f64,
    pub svm_max_epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            method: Method::SupportNet,
            methods: Vec::new(),
            budget: 2000,
            lambda_f: 1.0,
            lambda_ewc: 1e3,
            epochs: 10,
            all_data_epochs: 20,
            fisher_samples: 1,
            fisher_fallback_size: 1000,
            selection: SelectionMode::SmallestMargin,
            mixing: Mixing::Shuffled,
            svm_c: 1.0,
            svm_tolerance: 1e-4,
            svm_max_epochs: 1000,
            seed: 0,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl MethodConfig {
    /// `(λ_f, λ_ewc)` after the method's ablation zeroes.
    pub fn effective_coefficients(&self) -> (f64, f64) {
        match self.method {
            Method::SupportNet => (self.lambda_f, self.lambda_ewc),
            Method::SupportNetNoEwc => (self.lambda_f, 0.0),
            Method::SupportNetNoFeature => (0.0, self.lambda_ewc),
            _ => (0.0, 0.0),
        }
    }

    pub fn for_method(&self, method: Method) -> Self {
        Self {
            method,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks: [(bool, &str); 8] = [
            (self.lambda_f >= 0.0 && self.lambda_f.is_finite(), "lambda_f must be finite and >= 0"),
            (self.lambda_ewc >= 0.0 && self.lambda_ewc.is_finite(), "lambda_ewc must be finite and >= 0"),
            (self.svm_c > 0.0 && self.svm_c.is_finite(), "svm_c must be positive"),
            (self.optimizer.learning_rate > 0.0, "learning_rate must be positive"),
            ((0.0..1.0).contains(&self.optimizer.momentum), "momentum must lie in [0, 1)"),
            (self.optimizer.batch_size > 0, "batch_size must be positive"),
            (self.optimizer.lr_decay > 0.0, "lr_decay must be positive"),
            (self.fisher_samples > 0, "fisher_samples must be positive"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::param(msg));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub method: MethodConfig,
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut synthetic = SyntheticKeys::default();
        let mut source: Option<(usize, String)> = None;
        let mut mnist_dir: Option<PathBuf> = None;
        let mut section: Option<String> = None;
        let mut seen = HashSet::new();

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = strip_comment(raw).trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(line, "unterminated section header"))?
                    .trim();
                if !["data", "model", "method", "optimizer"].contains(&name) {
                    return Err(err(line, format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(line, "expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section
                .as_deref()
                .ok_or_else(|| err(line, format!("key '{key}' outside any section")))?;
            if !seen.insert(format!("{sec}.{key}")) {
                return Err(err(line, format!("duplicate key '{key}' in [{sec}]")));
            }
            let m = &mut cfg.method;
            match (sec, key) {
                ("data", "source") => source = Some((line, value.to_string())),
                ("data", "dir") => mnist_dir = Some(PathBuf::from(value)),
                ("data", "schedule") => cfg.data.schedule = Some(parse_schedule(line, value)?),
                ("data", "max_train_per_class") => cfg.data.max_train_per_class = Some(num(line, key, value)?),
                ("data", "classes") => synthetic.classes = Some(num(line, key, value)?),
                ("data", "dim") => synthetic.dim = Some(num(line, key, value)?),
                ("data", "train_per_class") => synthetic.train_per_class = Some(num(line, key, value)?),
                ("data", "test_per_class") => synthetic.test_per_class = Some(num(line, key, value)?),
                ("data", "separation") => synthetic.separation = Some(num(line, key, value)?),

                ("model", "hidden") => cfg.model.hidden = list(line, key, value)?,
                ("model", "activation") => cfg.model.activation = parse_activation(line, value)?,
                ("model", "output_init_stdev") => cfg.model.output_init_stdev = num(line, key, value)?,

                ("method", "method") => m.method = num(line, key, value)?,
                ("method", "methods") => m.methods = list(line, key, value)?,
                ("method", "budget") => m.budget = num(line, key, value)?,
                ("method", "lambda_f") => m.lambda_f = num(line, key, value)?,
                ("method", "lambda_ewc") => m.lambda_ewc = num(line, key, value)?,
                ("method", "epochs") => m.epochs = num(line, key, value)?,
                ("method", "all_data_epochs") => m.all_data_epochs = num(line, key, value)?,
                ("method", "fisher_samples") => m.fisher_samples = num(line, key, value)?,
                ("method", "fisher_fallback_size") => m.fisher_fallback_size = num(line, key, value)?,
                ("method", "selection") => m.selection = parse_selection(line, value)?,
                ("method", "mixing") => m.mixing = parse_mixing(line, value)?,
                ("method", "svm_c") => m.svm_c = num(line, key, value)?,
                ("method", "svm_tolerance") => m.svm_tolerance = num(line, key, value)?,
                ("method", "svm_max_epochs") => m.svm_max_epochs = num(line, key, value)?,
                ("method", "seed") => m.seed = num(line, key, value)?,

                ("optimizer", "learning_rate") => m.optimizer.learning_rate = num(line, key, value)?,
                ("optimizer", "momentum") => m.optimizer.momentum = num(line, key, value)?,
                ("optimizer", "batch_size") => m.optimizer.batch_size = num(line, key, value)?,
                ("optimizer", "lr_decay") => m.optimizer.lr_decay = num(line, key, value)?,

                _ => return Err(err(line, format!("unknown key '{key}' in [{sec}]"))),
            }
        }

        cfg.data.source = match source {
            None => DataSource::Mnist { dir: mnist_dir },
            Some((_, s)) if s == "mnist" => DataSource::Mnist { dir: mnist_dir },
            Some((_, s)) if s == "synthetic" => synthetic.build(),
            Some((line, s)) => return Err(err(line, format!("unknown data source '{s}'"))),
        };
        cfg.method.validate().map_err(|e| Error::Config {
            line: 0,
            message: e.to_string(),
        })?;
        if cfg.model.hidden.contains(&0) {
            return Err(Error::Config {
                line: 0,
                message: "hidden widths must be positive".into(),
            });
        }
        Ok(cfg)
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        s.push_str("[data]\n");
        match &self.data.source {
            DataSource::Mnist { dir } => {
                s.push_str("source = mnist\n");
                if let Some(d) = dir {
                    let _ = writeln!(s, "dir = {}", d.display());
                }
            }
            DataSource::Synthetic {
                classes,
                dim,
                train_per_class,
                test_per_class,
                separation,
            } => {
                let _ = writeln!(
                    s,
                    "source = synthetic\nclasses = {classes}\ndim = {dim}\ntrain_per_class = {train_per_class}\n\
                     test_per_class = {test_per_class}\nseparation = {separation:?}"
                );
            }
        }
        if let Some(groups) = &self.data.schedule {
            let g: Vec<String> = groups.iter().map(|g| join(g)).collect();
            let _ = writeln!(s, "schedule = {}", g.join("; "));
        }
        if let Some(n) = self.data.max_train_per_class {
            let _ = writeln!(s, "max_train_per_class = {n}");
        }

        let act = match self.model.activation {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        };
        let _ = writeln!(
            s,
            "\n[model]\nhidden = {}\nactivation = {act}\noutput_init_stdev = {:?}",
            join(&self.model.hidden),
            self.model.output_init_stdev
        );

        let m = &self.method;
        let selection = match m.selection {
            SelectionMode::SmallestMargin => "smallest_margin",
            SelectionMode::UniformCandidates => "uniform_candidates",
        };
        let mixing = match m.mixing {
            Mixing::Shuffled => "shuffled",
            Mixing::Replay => "replay",
        };
        let _ = writeln!(s, "\n[method]\nmethod = {}", m.method);
        if !m.methods.is_empty() {
            let tags: Vec<&str> = m.methods.iter().map(|m| m.tag()).collect();
            let _ = writeln!(s, "methods = {}", tags.join(","));
        }
        let _ = writeln!(
            s,
            "budget = {}\nlambda_f = {:?}\nlambda_ewc = {:?}\nepochs = {}\nall_data_epochs = {}\n\
             fisher_samples = {}\nfisher_fallback_size = {}\nselection = {selection}\nmixing = {mixing}\nsvm_c = {:?}\n\
             svm_tolerance = {:?}\nsvm_max_epochs = {}\nseed = {}",
            m.budget,
            m.lambda_f,
            m.lambda_ewc,
            m.epochs,
            m.all_data_epochs,
            m.fisher_samples,
            m.fisher_fallback_size,
            m.svm_c,
            m.svm_tolerance,
            m.svm_max_epochs,
            m.seed
        );
        let o = &m.optimizer;
        let _ = writeln!(
            s,
            "\n[optimizer]\nlearning_rate = {:?}\nmomentum = {:?}\nbatch_size = {}\nlr_decay = {:?}",
            o.learning_rate, o.momentum, o.batch_size, o.lr_decay
        );
        s
    }
}

#[derive(Default)]
struct SyntheticKeys {
    classes: Option<usize>,
    dim: Option<usize>,
    train_per_class: Option<usize>,
    test_per_class: Option<usize>,
    separation: Option<f64>,
}

impl SyntheticKeys {
    fn build(self) -> DataSource {
        DataSource::Synthetic {
            classes: self.classes.unwrap_or(10),
            dim: self.dim.unwrap_or(20),
            train_per_class: self.train_per_class.unwrap_or(200),
            test_per_class: self.test_per_class.unwrap_or(100),
            separation: self.separation.unwrap_or(4.0),
        }
    }
}

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn num<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| err(line, format!("invalid value '{value}' for '{key}': {e}")))
}

fn list<T: FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|v| num(line, key, v))
        .collect()
}

fn parse_schedule(line: usize, value: &str) -> Result<Vec<Vec<usize>>> {
    let groups: Vec<Vec<usize>> = value
        .split(';')
        .map(|g| list(line, "schedule", g))
        .collect::<Result<_>>()?;
    if groups.is_empty() || groups[0].is_empty() {
        return Err(err(line, "schedule must start with a non-empty group"));
    }
    Ok(groups)
}

fn parse_activation(line: usize, value: &str) -> Result<Activation> {
    match value {
        "relu" => Ok(Activation::Relu),
        "tanh" => Ok(Activation::Tanh),
        "identity" => Ok(Activation::Identity),
        _ => Err(err(line, format!("unknown activation '{value}'"))),
    }
}

fn parse_mixing(line: usize, value: &str) -> Result<Mixing> {
    match value {
        "shuffled" => Ok(Mixing::Shuffled),
        "replay" => Ok(Mixing::Replay),
        _ => Err(err(line, format!("unknown mixing '{value}'"))),
    }
}

fn parse_selection(line: usize, value: &str) -> Result<SelectionMode> {
    match value {
        "smallest_margin" => Ok(SelectionMode::SmallestMargin),
        "uniform_candidates" => Ok(SelectionMode::UniformCandidates),
        _ => Err(err(line, format!("unknown selection mode '{value}'"))),
    }
}
