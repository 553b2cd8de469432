//! Run configuration: reference defaults, `key=value` config files and
//! command-line overrides, echoed into every manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use posekit::augment::SchemeKind;
use posekit::dataset::SplitStrategy;
use posekit::nn::VGG_CUT_POINTS;

/// Parameter overrides shared by every subcommand. Unset flags fall back to
/// the config file, then to the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// key=value file applied before command-line flags
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// target training-set size after augmentation
    #[arg(long, global = true)]
    pub nts: Option<usize>,
    /// augmentation scheme: none, t, tr, ts
    #[arg(long, global = true)]
    pub da: Option<String>,
    /// vgg-X-fc8 with X in 2, 4, 7, 10, 13
    #[arg(long, global = true)]
    pub arch: Option<String>,
    /// base learning rate
    #[arg(long, global = true)]
    pub blr: Option<f64>,
    /// learning-rate multiplier of the VGG layers
    #[arg(long = "vgg-lrm", global = true)]
    pub vgg_lrm: Option<f64>,
    /// learning-rate multiplier of the FC head
    #[arg(long = "fc-lrm", global = true)]
    pub fc_lrm: Option<f64>,
    /// weight archive the VGG layers are loaded from
    #[arg(long, global = true)]
    pub pretrained: Option<PathBuf>,
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    /// train the VGG layers too
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub finetune: Option<bool>,
    /// first-half, interleaved or random-k
    #[arg(long, global = true)]
    pub split: Option<String>,
    /// training frames for the random-k split
    #[arg(long = "train-k", global = true)]
    pub train_k: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long = "data-dir", global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long = "out-dir", global = true)]
    pub out_dir: Option<PathBuf>,
    /// square network input side in pixels
    #[arg(long = "input-size", global = true)]
    pub input_size: Option<usize>,
    /// divide every VGG channel width by this
    #[arg(long = "channel-div", global = true)]
    pub channel_div: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub nts: usize,
    pub da: SchemeKind,
    pub arch: usize,
    pub blr: f64,
    pub vgg_lrm: f64,
    pub fc_lrm: f64,
    pub pretrained: Option<PathBuf>,
    pub iters: usize,
    pub batch: usize,
    pub finetune: bool,
    pub split: SplitName,
    pub train_k: usize,
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub input_size: usize,
    pub channel_div: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            nts: 200_000,
            da: SchemeKind::T,
            arch: 7,
            blr: 1e-12,
            vgg_lrm: 0.0,
            fc_lrm: 100.0,
            pretrained: None,
            iters: 10_000,
            batch: 32,
            finetune: false,
            split: SplitName::FirstHalf,
            train_k: 400,
            seed: 0,
            data_dir: PathBuf::from("."),
            out_dir: PathBuf::from("out"),
            input_size: 224,
            channel_div: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    FirstHalf,
    Interleaved,
    RandomK,
}

impl FromStr for SplitName {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "first-half" => SplitName::FirstHalf,
            "interleaved" => SplitName::Interleaved,
            "random-k" => SplitName::RandomK,
            other => bail!("unknown split {other:?} (first-half, interleaved, random-k)"),
        })
    }
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitName::FirstHalf => "first-half",
            SplitName::Interleaved => "interleaved",
            SplitName::RandomK => "random-k",
        })
    }
}

pub fn parse_arch(s: &str) -> Result<usize> {
    let x = s
        .strip_prefix("vgg-")
        .and_then(|r| r.strip_suffix("-fc8"))
        .and_then(|x| x.parse::<usize>().ok())
        .with_context(|| format!("architecture {s:?} is not of the form vgg-X-fc8"))?;
    if !VGG_CUT_POINTS.contains(&x) {
        bail!("architecture vgg-{x}-fc8 unsupported; X must be one of {VGG_CUT_POINTS:?}");
    }
    Ok(x)
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => bail!("expected a boolean, got {other:?}"),
    }
}

impl RunConfig {
    /// Defaults, then the config file named by `args.config`, then flags.
    pub fn resolve(args: &ConfigArgs) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &args.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            cfg.apply_file(&text)
                .with_context(|| format!("in config file {}", path.display()))?;
        }
        cfg.apply_args(args)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<f64> { v.parse().with_context(|| format!("{key}: bad number {v:?}")) };
        let int = |v: &str| -> Result<usize> { v.parse().with_context(|| format!("{key}: bad integer {v:?}")) };
        match key {
            "nts" => self.nts = int(value)?,
            "da" => self.da = value.parse()?,
            "arch" => self.arch = parse_arch(value)?,
            "blr" => self.blr = num(value)?,
            "vgg-lrm" => self.vgg_lrm = num(value)?,
            "fc-lrm" => self.fc_lrm = num(value)?,
            "pretrained" => self.pretrained = (!value.is_empty()).then(|| PathBuf::from(value)),
            "iters" => self.iters = int(value)?,
            "batch" => self.batch = int(value)?,
            "finetune" => self.finetune = parse_bool(value)?,
            "split" => self.split = value.parse()?,
            "train-k" => self.train_k = int(value)?,
            "seed" => self.seed = value.parse().with_context(|| format!("seed: bad integer {value:?}"))?,
            "data-dir" => self.data_dir = PathBuf::from(value),
            "out-dir" => self.out_dir = PathBuf::from(value),
            "input-size" => self.input_size = int(value)?,
            "channel-div" => self.channel_div = int(value)?,
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key=value", i + 1))?;
            self.set(k.trim(), v.trim()).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(())
    }

    fn apply_args(&mut self, a: &ConfigArgs) -> Result<()> {
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = &a.$field {
                    self.$field = v.clone();
                }
            };
        }
        take!(nts);
        take!(blr);
        take!(vgg_lrm);
        take!(fc_lrm);
        take!(iters);
        take!(batch);
        take!(finetune);
        take!(train_k);
        take!(seed);
        take!(data_dir);
        take!(out_dir);
        take!(input_size);
        take!(channel_div);
        if let Some(v) = &a.da {
            self.da = v.parse()?;
        }
        if let Some(v) = &a.arch {
            self.arch = parse_arch(v)?;
        }
        if let Some(v) = &a.split {
            self.split = v.parse()?;
        }
        if let Some(v) = &a.pretrained {
            self.pretrained = Some(v.clone());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.iters == 0 || self.input_size == 0 || self.channel_div == 0 {
            bail!("batch, iters, input-size and channel-div must be >= 1");
        }
        if !(self.blr > 0.0 && self.blr.is_finite()) {
            bail!("blr must be a positive number, got {}", self.blr);
        }
        if self.vgg_lrm < 0.0 || self.fc_lrm < 0.0 {
            bail!("learning-rate multipliers must be >= 0");
        }
        if !self.finetune && self.vgg_lrm != 0.0 {
            bail!("vgg-lrm {} requires --finetune", self.vgg_lrm);
        }
        Ok(())
    }

    /// Multiplier actually applied to the VGG layers: 0 unless finetuning,
    /// and 1 when finetuning without an explicit value.
    pub fn effective_vgg_lrm(&self) -> f64 {
        match (self.finetune, self.vgg_lrm) {
            (false, _) => 0.0,
            (true, m) if m == 0.0 => 1.0,
            (true, m) => m,
        }
    }

    pub fn split_strategy(&self) -> SplitStrategy {
        match self.split {
            SplitName::FirstHalf => SplitStrategy::FirstHalf,
            SplitName::Interleaved => SplitStrategy::Interleaved,
            SplitName::RandomK => SplitStrategy::random_k(self.train_k, self.seed),
        }
    }

    /// The full effective configuration as `key=value` lines, in a fixed
    /// order, readable back by [`RunConfig::apply_file`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let pretrained = self
            .pretrained
            .as_deref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        let _ = writeln!(s, "nts={}", self.nts);
        let _ = writeln!(s, "da={}", self.da);
        let _ = writeln!(s, "arch=vgg-{}-fc8", self.arch);
        let _ = writeln!(s, "blr={:e}", self.blr);
        let _ = writeln!(s, "vgg-lrm={}", self.vgg_lrm);
        let _ = writeln!(s, "fc-lrm={}", self.fc_lrm);
        let _ = writeln!(s, "pretrained={pretrained}");
        let _ = writeln!(s, "iters={}", self.iters);
        let _ = writeln!(s, "batch={}", self.batch);
        let _ = writeln!(s, "finetune={}", self.finetune);
        let _ = writeln!(s, "split={}", self.split);
        let _ = writeln!(s, "train-k={}", self.train_k);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "data-dir={}", self.data_dir.display());
        let _ = writeln!(s, "out-dir={}", self.out_dir.display());
        let _ = writeln!(s, "input-size={}", self.input_size);
        let _ = writeln!(s, "channel-div={}", self.channel_div);
        s
    }
}

/// Writes `manifest.txt`: the command, its effective configuration, then
/// command-specific `key=value` facts.
pub fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, extra: &[(&str, String)]) -> Result<()> {
    let mut s = format!("command={command}\n");
    s.push_str(&cfg.to_text());
    for (k, v) in extra {
        let _ = writeln!(s, "{k}={v}");
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, s).with_context(|| format!("writing {}", path.display()))
}

/// Looks up `key` in a manifest or other `key=value` file.
pub fn manifest_value(text: &str, key: &str) -> Option<String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == key)
        .map(|(_, v)| v.trim().to_string())
}
