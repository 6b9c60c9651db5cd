//! INI-style run configuration.
//!
//! ```ini
//! [run]
//! seed = 7
//! out = runs/toy
//!
//! [dataset]
//! kind = hmm            # iid | markov | hmm | synth | mel
//! frames = 6
//! initial = 0.6 0.4
//! transition = 0.8 0.2; 0.3 0.7
//! emission = 0.7 0.2 0.1; 0.1 0.3 0.6
//! ```
//!
//! Rows of a table are separated by `;`, entries by whitespace. `#` and `;`
//! at the start of a line begin comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::datagen::{SynthConfig, ToyDistribution, ToyKind};
use crate::error::{Error, Result};
use crate::model::{GumbelPlacement, HeadKind, NetworkConfig, Temperatures};
use crate::numerics::AdamConfig;
use crate::objective::TrainConfig;
use crate::orders::SwapLog;

/// Parsed sections of an INI file, keys in file order per section.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ini {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self> {
        let mut ini = Ini::default();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                ini.sections.entry(section.clone()).or_default();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            if section.is_empty() {
                return Err(Error::Config(format!(
                    "line {}: key outside any section",
                    n + 1
                )));
            }
            let v = v.split(" #").next().unwrap_or("").trim();
            ini.sections
                .entry(section.clone())
                .or_default()
                .insert(k.trim().to_string(), v.to_string());
        }
        Ok(ini)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }

    fn parsed<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        self.get(section, key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse `{v}`")))
            })
            .transpose()
    }

    fn or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        Ok(self.parsed(section, key)?.unwrap_or(default))
    }

    fn vector(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(section, key)
            .map(|v| parse_row(v).map_err(|m| Error::Config(format!("[{section}] {key}: {m}"))))
            .transpose()
    }

    fn table(&self, section: &str, key: &str) -> Result<Option<Vec<Vec<f64>>>> {
        self.get(section, key)
            .map(|v| {
                v.split(';')
                    .map(parse_row)
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|m| Error::Config(format!("[{section}] {key}: {m}")))
            })
            .transpose()
    }

    fn require_table(&self, section: &str, key: &str) -> Result<Vec<Vec<f64>>> {
        self.table(section, key)?
            .ok_or_else(|| Error::Config(format!("[{section}] {key} is required")))
    }
}

impl std::fmt::Display for Ini {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut first = true;
        for (name, kv) in &self.sections {
            if !first {
                writeln!(f)?;
            }
            first = false;
            writeln!(f, "[{name}]")?;
            for (k, v) in kv {
                writeln!(f, "{k} = {v}")?;
            }
        }
        Ok(())
    }
}

fn parse_row(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split_whitespace()
        .map(|x| {
            x.parse::<f64>()
                .map_err(|_| format!("`{x}` is not a number"))
        })
        .collect()
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn join_table(t: &[Vec<f64>]) -> String {
    t.iter().map(|r| join(r)).collect::<Vec<_>>().join("; ")
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Toy(ToyDistribution),
    Synth(SynthConfig),
    Mel(Vec<PathBuf>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub spec: DatasetSpec,
    pub train_count: usize,
    pub test_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingConfig {
    pub strategy: String,
    pub temperatures: Temperatures,
    pub swap_log: SwapLog,
    pub count: usize,
    /// Generations per Monte Carlo comparison against a toy process.
    pub mc_samples: usize,
    /// Random orders scored by `eval` besides l2r and r2l.
    pub random_orders: usize,
}

/// Everything a run needs, resolved from the INI file and flags.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Record `wall_ms` in sweep tables; off for byte-reproducible output.
    pub timing: bool,
    pub dataset: DatasetConfig,
    pub levels: usize,
    /// Quantiser bounds; `None` fits them to the training grids.
    pub bounds: Option<(f64, f64)>,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub sampling: SamplingConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<(Self, Ini)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let ini = Ini::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok((Self::from_ini(&ini, base)?, ini))
    }

    /// Relative dataset paths resolve against `base`.
    pub fn from_ini(ini: &Ini, base: &Path) -> Result<Self> {
        let seed = ini
            .parsed::<u64>("run", "seed")?
            .ok_or_else(|| Error::Config("[run] seed is required".into()))?;
        let out = PathBuf::from(ini.get("run", "out").unwrap_or("run"));
        let timing = ini.or("run", "timing", true)?;

        let kind = ini.get("dataset", "kind").unwrap_or("hmm");
        let frames = ini.or("dataset", "frames", 6usize)?;
        let bins = ini.or("dataset", "bins", 1usize)?;
        let toy = |k: ToyKind| {
            ToyDistribution::new(k, bins, frames)
                .map_err(|e| Error::Config(format!("[dataset] {e}")))
        };
        let spec = match kind {
            "iid" => DatasetSpec::Toy(toy(ToyKind::Iid {
                marginal: ini
                    .vector("dataset", "marginal")?
                    .ok_or_else(|| Error::Config("[dataset] marginal is required".into()))?,
            })?),
            "markov" => {
                let transition = ini.require_table("dataset", "transition")?;
                let q = transition.len();
                DatasetSpec::Toy(toy(ToyKind::Markov {
                    initial: ini
                        .vector("dataset", "initial")?
                        .unwrap_or(vec![1.0 / q as f64; q]),
                    transition,
                })?)
            }
            "hmm" => {
                let transition = ini.require_table("dataset", "transition")?;
                let s = transition.len();
                DatasetSpec::Toy(toy(ToyKind::Hmm {
                    initial: ini
                        .vector("dataset", "initial")?
                        .unwrap_or(vec![1.0 / s as f64; s]),
                    transition,
                    emission: ini.require_table("dataset", "emission")?,
                })?)
            }
            "synth" => {
                let d = SynthConfig::default();
                DatasetSpec::Synth(SynthConfig {
                    bins: ini.or("dataset", "bins", d.bins)?,
                    frames: ini.or("dataset", "frames", d.frames)?,
                    min_phone: ini.or("dataset", "min_phone", d.min_phone)?,
                    max_phone: ini.or("dataset", "max_phone", d.max_phone)?,
                    noise: ini.or("dataset", "noise", d.noise)?,
                })
            }
            "mel" => {
                let list = ini.get("dataset", "paths").ok_or_else(|| {
                    Error::Config("[dataset] paths is required for kind = mel".into())
                })?;
                let paths: Vec<PathBuf> = list
                    .split(',')
                    .map(|p| p.trim())
                    .filter(|p| !p.is_empty())
                    .map(|p| base.join(p))
                    .collect();
                if paths.is_empty() {
                    return Err(Error::Config("[dataset] paths is empty".into()));
                }
                for p in &paths {
                    if !p.exists() {
                        return Err(Error::Config(format!(
                            "dataset file {} does not exist",
                            p.display()
                        )));
                    }
                }
                DatasetSpec::Mel(paths)
            }
            other => return Err(Error::Config(format!("[dataset] unknown kind `{other}`"))),
        };
        let dataset = DatasetConfig {
            spec,
            train_count: ini.or("dataset", "count", 2000usize)?,
            test_count: ini.or("dataset", "test_count", 16usize)?,
        };

        let toy_levels = match &dataset.spec {
            DatasetSpec::Toy(d) => Some(d.levels()),
            _ => None,
        };
        let levels = ini.or("quantiser", "levels", toy_levels.unwrap_or(16))?;
        if let Some(q) = toy_levels {
            if q != levels {
                return Err(Error::Config(format!(
                    "[quantiser] levels = {levels} but the toy process has {q} symbols"
                )));
            }
        }
        let bounds = match (
            ini.parsed::<f64>("quantiser", "lower")?,
            ini.parsed::<f64>("quantiser", "upper")?,
        ) {
            (Some(a), Some(b)) => Some((a, b)),
            (None, None) => toy_levels.map(|_| (0.0, 1.0)),
            _ => {
                return Err(Error::Config(
                    "[quantiser] set both lower and upper, or neither".into(),
                ))
            }
        };

        let data_bins = match &dataset.spec {
            DatasetSpec::Toy(d) => d.bins(),
            DatasetSpec::Synth(s) => s.bins,
            DatasetSpec::Mel(_) => ini.or("dataset", "bins", 0usize)?,
        };
        let mut head: HeadKind = ini.or("network", "head", HeadKind::Categorical)?;
        if let HeadKind::LogisticMixture { components } = &mut head {
            *components = ini.or("network", "components", *components)?;
        }
        let d = NetworkConfig::default();
        let network = NetworkConfig {
            bins: data_bins,
            levels,
            width: ini.or("network", "width", 32)?,
            layers: ini.or("network", "layers", d.layers)?,
            head,
            positional: ini.or("network", "positional", d.positional)?,
        };

        let a = AdamConfig::<f64>::default();
        let train = TrainConfig {
            steps: ini.or("optim", "steps", 2000)?,
            batch_size: ini.or("optim", "batch_size", 16)?,
            adam: AdamConfig {
                learning_rate: ini.or("optim", "learning_rate", a.learning_rate)?,
                beta1: ini.or("optim", "beta1", a.beta1)?,
                beta2: ini.or("optim", "beta2", a.beta2)?,
                epsilon: ini.or("optim", "epsilon", a.epsilon)?,
            },
            final_lr_fraction: ini.or("optim", "final_lr_fraction", 1.0)?,
        };

        let mut temperatures = Temperatures::new(
            ini.or("sampling", "t1", 1.0)?,
            ini.or("sampling", "t2", 1.0)?,
        )
        .map_err(|e| Error::Config(format!("[sampling] {e}")))?;
        temperatures.placement = match ini.get("sampling", "gumbel").unwrap_or("before") {
            "before" => GumbelPlacement::BeforeNoise,
            "after" => GumbelPlacement::AfterNoise,
            other => {
                return Err(Error::Config(format!(
                    "[sampling] gumbel: unknown placement `{other}`"
                )))
            }
        };
        let swap_log = match ini.get("sampling", "swap_log").unwrap_or("ln") {
            "ln" => SwapLog::Natural,
            "log2" => SwapLog::Base2,
            other => {
                return Err(Error::Config(format!(
                    "[sampling] swap_log: unknown base `{other}`"
                )))
            }
        };
        let sampling = SamplingConfig {
            strategy: ini
                .get("sampling", "strategy")
                .unwrap_or("default")
                .to_string(),
            temperatures,
            swap_log,
            count: ini.or("sampling", "count", 4)?,
            mc_samples: ini.or("sampling", "mc_samples", 40_000)?,
            random_orders: ini.or("sampling", "random_orders", 10)?,
        };

        let cfg = Self {
            seed,
            out,
            timing,
            dataset,
            levels,
            bounds,
            network,
            train,
            sampling,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if let Some((a, b)) = self.bounds {
            if !(a < b) {
                return Err(Error::Config(format!(
                    "[quantiser] lower {a} must be below upper {b}"
                )));
            }
        }
        if self.levels < 2 {
            return Err(Error::Config("[quantiser] levels must be >= 2".into()));
        }
        if self.dataset.train_count == 0 || self.dataset.test_count == 0 {
            return Err(Error::Config(
                "[dataset] count and test_count must be >= 1".into(),
            ));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("[optim] batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.train.final_lr_fraction) {
            return Err(Error::Config(
                "[optim] final_lr_fraction must lie in [0, 1]".into(),
            ));
        }
        if !matches!(self.dataset.spec, DatasetSpec::Mel(_)) {
            self.network.validate()?;
        }
        Ok(())
    }

    /// Fully resolved configuration; loading it back reproduces this value.
    pub fn to_ini(&self) -> Ini {
        let mut ini = Ini::default();
        ini.set("run", "seed", self.seed);
        ini.set("run", "out", self.out.display());
        ini.set("run", "timing", self.timing);
        let ds = &self.dataset;
        ini.set("dataset", "count", ds.train_count);
        ini.set("dataset", "test_count", ds.test_count);
        match &ds.spec {
            DatasetSpec::Toy(d) => {
                ini.set("dataset", "frames", d.frames());
                ini.set("dataset", "bins", d.bins());
                match d.kind() {
                    ToyKind::Iid { marginal } => {
                        ini.set("dataset", "kind", "iid");
                        ini.set("dataset", "marginal", join(marginal));
                    }
                    ToyKind::Markov {
                        initial,
                        transition,
                    } => {
                        ini.set("dataset", "kind", "markov");
                        ini.set("dataset", "initial", join(initial));
                        ini.set("dataset", "transition", join_table(transition));
                    }
                    ToyKind::Hmm {
                        initial,
                        transition,
                        emission,
                    } => {
                        ini.set("dataset", "kind", "hmm");
                        ini.set("dataset", "initial", join(initial));
                        ini.set("dataset", "transition", join_table(transition));
                        ini.set("dataset", "emission", join_table(emission));
                    }
                }
            }
            DatasetSpec::Synth(s) => {
                ini.set("dataset", "kind", "synth");
                ini.set("dataset", "bins", s.bins);
                ini.set("dataset", "frames", s.frames);
                ini.set("dataset", "min_phone", s.min_phone);
                ini.set("dataset", "max_phone", s.max_phone);
                ini.set("dataset", "noise", s.noise);
            }
            DatasetSpec::Mel(paths) => {
                ini.set("dataset", "kind", "mel");
                ini.set("dataset", "bins", self.network.bins);
                let list: Vec<String> = paths
                    .iter()
                    .map(|p| {
                        std::fs::canonicalize(p)
                            .unwrap_or(p.clone())
                            .display()
                            .to_string()
                    })
                    .collect();
                ini.set("dataset", "paths", list.join(", "));
            }
        }
        ini.set("quantiser", "levels", self.levels);
        if let Some((a, b)) = self.bounds {
            ini.set("quantiser", "lower", a);
            ini.set("quantiser", "upper", b);
        }
        let n = &self.network;
        ini.set("network", "width", n.width);
        ini.set("network", "layers", n.layers);
        ini.set("network", "head", n.head.name());
        if let HeadKind::LogisticMixture { components } = n.head {
            ini.set("network", "components", components);
        }
        ini.set("network", "positional", n.positional);
        let t = &self.train;
        ini.set("optim", "steps", t.steps);
        ini.set("optim", "batch_size", t.batch_size);
        ini.set("optim", "learning_rate", t.adam.learning_rate);
        ini.set("optim", "beta1", t.adam.beta1);
        ini.set("optim", "beta2", t.adam.beta2);
        ini.set("optim", "epsilon", t.adam.epsilon);
        ini.set("optim", "final_lr_fraction", t.final_lr_fraction);
        let s = &self.sampling;
        ini.set("sampling", "strategy", &s.strategy);
        ini.set("sampling", "t1", s.temperatures.t1);
        ini.set("sampling", "t2", s.temperatures.t2);
        let placement = match s.temperatures.placement {
            GumbelPlacement::BeforeNoise => "before",
            GumbelPlacement::AfterNoise => "after",
        };
        ini.set("sampling", "gumbel", placement);
        let base = match s.swap_log {
            SwapLog::Natural => "ln",
            SwapLog::Base2 => "log2",
        };
        ini.set("sampling", "swap_log", base);
        ini.set("sampling", "count", s.count);
        ini.set("sampling", "mc_samples", s.mc_samples);
        ini.set("sampling", "random_orders", s.random_orders);
        ini
    }
}

/// Manifest text: the resolved config plus format versions.
pub fn manifest(cfg: &RunConfig, command: &str) -> String {
    let mut ini = cfg.to_ini();
    ini.set("manifest", "command", command);
    ini.set("manifest", "version", crate::cli::VERSION);
    ini.set(
        "manifest",
        "checkpoint_format",
        crate::model::CHECKPOINT_VERSION,
    );
    ini.set("manifest", "mel_format", crate::datagen::MEL_VERSION);
    let mut s = String::new();
    let _ = write!(s, "{ini}");
    s
}
