//! Training configuration and its `key=value` text form.
//!
//! ```text
//! # comments start with '#'
//! epochs=200
//! templates_per_class=2
//! dropout=0,0.2        # a list expands into a grid
//! ```

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fgw::CgOptions;
use crate::graph::StructureKind;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TemplateCount {
    /// `K` templates in total.
    Total(usize),
    /// `β · |Y|` templates.
    PerClass(usize),
}

impl TemplateCount {
    pub fn resolve(self, class_count: usize) -> usize {
        match self {
            TemplateCount::Total(k) => k,
            TemplateCount::PerClass(b) => b * class_count,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlphaMode {
    Learned,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightMode {
    Learned,
    Uniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// `0` trains on the whole split at once.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub templates: TemplateCount,
    /// `false` keeps templates at their sampled initial values.
    pub learn_templates: bool,
    pub gin_layers: usize,
    pub hidden: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
    pub template_weights: WeightMode,
    pub structure_kind: StructureKind,
    pub alpha: AlphaMode,
    /// Starting value when `alpha` is learned.
    pub alpha_init: f64,
    pub seed: u64,
    pub validation_period: usize,
    pub cg_max_iterations: usize,
    pub cg_tolerance: f64,
    pub cg_starts: usize,
    pub holdout_fraction: f64,
    pub folds: usize,
    /// Degree-feature cap for datasets without node labels.
    pub max_degree: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 128,
            learning_rate: 0.01,
            templates: TemplateCount::PerClass(2),
            learn_templates: true,
            gin_layers: 2,
            hidden: 16,
            mlp_hidden: 128,
            dropout: 0.0,
            template_weights: WeightMode::Learned,
            structure_kind: StructureKind::Adjacency,
            alpha: AlphaMode::Learned,
            alpha_init: 0.5,
            seed: 0,
            validation_period: 5,
            cg_max_iterations: 1000,
            cg_tolerance: 1e-9,
            cg_starts: 1,
            holdout_fraction: 0.1,
            folds: 10,
            max_degree: None,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "learning_rate",
    "templates",
    "templates_per_class",
    "learn_templates",
    "layers",
    "hidden",
    "mlp_hidden",
    "dropout",
    "template_weights",
    "structure",
    "alpha",
    "alpha_init",
    "seed",
    "validation_period",
    "cg_max_iterations",
    "cg_tolerance",
    "cg_starts",
    "holdout_fraction",
    "folds",
    "max_degree",
];

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key}={value}: expected {what}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, what))
}

impl TrainConfig {
    pub fn cg_options(&self) -> CgOptions {
        CgOptions {
            max_iterations: self.cg_max_iterations,
            relative_tolerance: self.cg_tolerance,
            starts: self.cg_starts,
            ..CgOptions::default()
        }
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "epochs" => self.epochs = num(key, value, "a non-negative integer")?,
            "batch_size" => self.batch_size = num(key, value, "a non-negative integer")?,
            "learning_rate" => self.learning_rate = num(key, value, "a number")?,
            "templates" => self.templates = TemplateCount::Total(num(key, value, "a positive integer")?),
            "templates_per_class" => self.templates = TemplateCount::PerClass(num(key, value, "a positive integer")?),
            "learn_templates" => self.learn_templates = num(key, value, "true or false")?,
            "layers" => self.gin_layers = num(key, value, "a non-negative integer")?,
            "hidden" => self.hidden = num(key, value, "a positive integer")?,
            "mlp_hidden" => self.mlp_hidden = num(key, value, "a positive integer")?,
            "dropout" => self.dropout = num(key, value, "0, 0.2 or 0.5")?,
            "template_weights" => {
                self.template_weights = match value {
                    "learned" => WeightMode::Learned,
                    "uniform" => WeightMode::Uniform,
                    _ => return Err(bad(key, value, "learned or uniform")),
                }
            }
            "structure" => self.structure_kind = StructureKind::parse(value).map_err(|_| bad(key, value, "adj or sp"))?,
            "alpha" => {
                self.alpha = if value == "learned" {
                    AlphaMode::Learned
                } else {
                    AlphaMode::Fixed(num(key, value, "learned or a number in [0, 1]")?)
                }
            }
            "alpha_init" => self.alpha_init = num(key, value, "a number in [0, 1]")?,
            "seed" => self.seed = num(key, value, "a non-negative integer")?,
            "validation_period" => self.validation_period = num(key, value, "a positive integer")?,
            "cg_max_iterations" => self.cg_max_iterations = num(key, value, "a positive integer")?,
            "cg_tolerance" => self.cg_tolerance = num(key, value, "a positive number")?,
            "cg_starts" => self.cg_starts = num(key, value, "a positive integer")?,
            "holdout_fraction" => self.holdout_fraction = num(key, value, "a number in (0, 1)")?,
            "folds" => self.folds = num(key, value, "an integer >= 2")?,
            "max_degree" => self.max_degree = Some(num(key, value, "a non-negative integer")?),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.epochs == 0 {
            return fail("epochs must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if matches!(self.templates, TemplateCount::Total(0) | TemplateCount::PerClass(0)) {
            return fail("at least one template is required");
        }
        if self.hidden == 0 || self.mlp_hidden == 0 {
            return fail("hidden sizes must be positive");
        }
        if ![0.0, 0.2, 0.5].contains(&self.dropout) {
            return fail("dropout must be one of 0, 0.2, 0.5");
        }
        if let AlphaMode::Fixed(a) = self.alpha {
            if !(0.0..=1.0).contains(&a) {
                return fail("alpha must lie in [0, 1]");
            }
        }
        if !(0.0..=1.0).contains(&self.alpha_init) {
            return fail("alpha_init must lie in [0, 1]");
        }
        if self.validation_period == 0 {
            return fail("validation_period must be positive");
        }
        if self.cg_max_iterations == 0 || self.cg_starts == 0 || !(self.cg_tolerance > 0.0) {
            return fail("invalid solver settings");
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return fail("holdout_fraction must lie in (0, 1)");
        }
        if self.folds < 2 {
            return fail("folds must be at least 2");
        }
        Ok(())
    }

    /// Text form accepted by [`parse_config`].
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        line("epochs", self.epochs.to_string());
        line("batch_size", self.batch_size.to_string());
        line("learning_rate", self.learning_rate.to_string());
        match self.templates {
            TemplateCount::Total(k) => line("templates", k.to_string()),
            TemplateCount::PerClass(b) => line("templates_per_class", b.to_string()),
        }
        line("learn_templates", self.learn_templates.to_string());
        line("layers", self.gin_layers.to_string());
        line("hidden", self.hidden.to_string());
        line("mlp_hidden", self.mlp_hidden.to_string());
        line("dropout", self.dropout.to_string());
        line(
            "template_weights",
            match self.template_weights {
                WeightMode::Learned => "learned".into(),
                WeightMode::Uniform => "uniform".into(),
            },
        );
        line("structure", self.structure_kind.as_str().into());
        line(
            "alpha",
            match self.alpha {
                AlphaMode::Learned => "learned".into(),
                AlphaMode::Fixed(a) => a.to_string(),
            },
        );
        line("alpha_init", self.alpha_init.to_string());
        line("seed", self.seed.to_string());
        line("validation_period", self.validation_period.to_string());
        line("cg_max_iterations", self.cg_max_iterations.to_string());
        line("cg_tolerance", self.cg_tolerance.to_string());
        line("cg_starts", self.cg_starts.to_string());
        line("holdout_fraction", self.holdout_fraction.to_string());
        line("folds", self.folds.to_string());
        if let Some(d) = self.max_degree {
            line("max_degree", d.to_string());
        }
        s
    }
}

/// Parsed `key=value` lines in file order. Values may be comma-separated
/// lists.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, Vec<String>)>> {
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key=value", i + 1)));
        };
        let key = k.trim().to_string();
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("line {}: unknown key {key:?}", i + 1)));
        }
        let values: Vec<String> = v.split(',').map(|x| x.trim().to_string()).collect();
        if values.iter().any(String::is_empty) {
            return Err(Error::Config(format!("line {}: empty value for {key}", i + 1)));
        }
        if let Some(slot) = out.iter_mut().find(|(k, _)| *k == key) {
            slot.1 = values;
        } else {
            out.push((key, values));
        }
    }
    Ok(out)
}

/// Expands a config text into the grid of configurations it describes,
/// starting from `base`. The last listed key varies fastest. `overrides`
/// are applied to every grid point after the file values.
pub fn parse_config(text: &str, base: &TrainConfig, overrides: &[(String, String)]) -> Result<Vec<TrainConfig>> {
    let pairs = parse_pairs(text)?;
    let mut grid = vec![base.clone()];
    for (key, values) in &pairs {
        let mut next = Vec::with_capacity(grid.len() * values.len());
        for cfg in &grid {
            for v in values {
                let mut c = cfg.clone();
                c.set(key, v)?;
                next.push(c);
            }
        }
        grid = next;
    }
    for cfg in &mut grid {
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
    }
    Ok(grid)
}
