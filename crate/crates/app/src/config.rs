//! Experiment configuration: a flat `key = value` file, command-line
//! overrides, defaults, and a resolved echo that records where every value
//! came from.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use signms_core::msbasis::CorrectionWeight;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin} line {line}: expected `key = value`, got `{text}`")]
    Syntax { origin: String, line: usize, text: String },
    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("key `{key}`: expected {expected}, got `{value}`")]
    Type {
        key: &'static str,
        expected: &'static str,
        value: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    FlatInterface,
    RandomInclusions,
    NimSlab,
    Custom,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::FlatInterface => "flat_interface",
            Experiment::RandomInclusions => "random_inclusions",
            Experiment::NimSlab => "nim_slab",
            Experiment::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "flat_interface" => Some(Experiment::FlatInterface),
            "random_inclusions" => Some(Experiment::RandomInclusions),
            "nim_slab" => Some(Experiment::NimSlab),
            "custom" => Some(Experiment::Custom),
            _ => None,
        }
    }

    pub fn default_k(self) -> f64 {
        match self {
            Experiment::NimSlab => 2.0 * std::f64::consts::PI * std::f64::consts::PI,
            _ => 4.0,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a resolved value came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Default,
    File,
    Flag,
}

impl Provenance {
    fn label(self) -> &'static str {
        match self {
            Provenance::Default => "default",
            Provenance::File => "file",
            Provenance::Flag => "flag",
        }
    }
}

pub const KEYS: &[&str] = &[
    "experiment",
    "n_fine",
    "n_coarse",
    "m",
    "l_star",
    "k",
    "mu_msh",
    "correction_weight",
    "seed",
    "output_dir",
    "dump_fields",
    "rho_threshold",
    "sigma_plus",
    "sigma_minus",
    "gamma",
    "inclusions",
    "inclusion_min_side",
    "inclusion_max_side",
    "sigma_path",
    "c_path",
    "source_path",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub n_fine: usize,
    pub n_coarse: Vec<usize>,
    pub m: Vec<usize>,
    pub l_star: usize,
    pub k: f64,
    pub mu_msh: f64,
    pub correction_weight: CorrectionWeight,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dump_fields: bool,
    pub rho_threshold: f64,
    pub sigma_plus: f64,
    pub sigma_minus: f64,
    pub gamma: f64,
    pub inclusions: usize,
    pub inclusion_min_side: usize,
    pub inclusion_max_side: usize,
    pub sigma_path: Option<PathBuf>,
    pub c_path: Option<PathBuf>,
    pub source_path: Option<PathBuf>,
    provenance: BTreeMap<&'static str, Provenance>,
}

/// Raw `key -> (value, provenance)` pairs before defaults are applied.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, Provenance)>,
}

impl RawConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parse `key = value` lines; `#` starts a comment.
    pub fn parse_text(&mut self, origin: &str, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    origin: origin.to_string(),
                    line: i + 1,
                    text: raw.trim().to_string(),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    origin: origin.to_string(),
                    line: i + 1,
                    text: raw.trim().to_string(),
                });
            }
            self.entries
                .insert(key.to_string(), (value.trim().to_string(), Provenance::File));
        }
        Ok(())
    }

    pub fn read_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        self.parse_text(&path.display().to_string(), &text)
    }

    /// Command-line override; wins over the file.
    pub fn set(&mut self, key: &str, value: &str) {
        self.entries
            .insert(key.trim().to_string(), (value.trim().to_string(), Provenance::Flag));
    }

    /// `key=value` as given to `--set`.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair.split_once('=').ok_or_else(|| ConfigError::Syntax {
            origin: "--set".into(),
            line: 1,
            text: pair.to_string(),
        })?;
        self.set(k, v);
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&(String, Provenance)> {
        self.entries.get(key)
    }

    pub fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let unknown: Vec<String> = self
            .entries
            .keys()
            .filter(|k| !KEYS.contains(&k.as_str()))
            .cloned()
            .collect();
        if !unknown.is_empty() {
            return Err(ConfigError::UnknownKeys(unknown));
        }
        let mut prov = BTreeMap::new();
        let mut take = |key: &'static str| -> Option<&String> {
            match self.get(key) {
                Some((v, p)) => {
                    prov.insert(key, *p);
                    Some(v)
                }
                None => {
                    prov.insert(key, Provenance::Default);
                    None
                }
            }
        };

        let experiment = match take("experiment") {
            Some(v) => Experiment::parse(v).ok_or_else(|| ConfigError::Type {
                key: "experiment",
                expected: "one of flat_interface, random_inclusions, nim_slab, custom",
                value: v.clone(),
            })?,
            None => Experiment::FlatInterface,
        };
        let n_fine = opt(take("n_fine"), "n_fine", parse_usize)?.unwrap_or(400);
        let n_coarse = opt(take("n_coarse"), "n_coarse", parse_usize_list)?.unwrap_or_else(|| vec![20, 40, 80]);
        let m = opt(take("m"), "m", parse_usize_list)?.unwrap_or_else(|| vec![1, 2, 3, 4]);
        let l_star = opt(take("l_star"), "l_star", parse_usize)?.unwrap_or(3);
        let k = opt(take("k"), "k", parse_f64)?.unwrap_or_else(|| experiment.default_k());
        let mu_msh = opt(take("mu_msh"), "mu_msh", parse_f64)?.unwrap_or(24.0);
        let correction_weight = match take("correction_weight").map(String::as_str) {
            None | Some("signed") => CorrectionWeight::Signed,
            Some("absolute") => CorrectionWeight::Absolute,
            Some(v) => {
                return Err(ConfigError::Type {
                    key: "correction_weight",
                    expected: "`signed` or `absolute`",
                    value: v.to_string(),
                })
            }
        };
        let seed = opt(take("seed"), "seed", |s| s.parse::<u64>().ok())?.unwrap_or(0);
        let output_dir = take("output_dir")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(format!("out/{}", experiment.name())));
        let dump_fields = opt(take("dump_fields"), "dump_fields", parse_bool)?.unwrap_or(false);
        let rho_threshold = opt(take("rho_threshold"), "rho_threshold", parse_f64)?.unwrap_or(1.0);
        let sigma_plus = opt(take("sigma_plus"), "sigma_plus", parse_f64)?.unwrap_or(1.0);
        let sigma_minus = opt(take("sigma_minus"), "sigma_minus", parse_f64)?.unwrap_or(match experiment {
            Experiment::RandomInclusions => 1e3,
            Experiment::NimSlab => 10.0,
            _ => 3.0,
        });
        let gamma = opt(take("gamma"), "gamma", parse_f64)?.unwrap_or(0.5);
        let inclusions = opt(take("inclusions"), "inclusions", parse_usize)?.unwrap_or(40);
        let inclusion_min_side = opt(take("inclusion_min_side"), "inclusion_min_side", parse_usize)?.unwrap_or(4);
        let inclusion_max_side = opt(take("inclusion_max_side"), "inclusion_max_side", parse_usize)?.unwrap_or(12);
        let sigma_path = take("sigma_path").map(PathBuf::from);
        let c_path = take("c_path").map(PathBuf::from);
        let source_path = take("source_path").map(PathBuf::from);

        let cfg = ExperimentConfig {
            experiment,
            n_fine,
            n_coarse,
            m,
            l_star,
            k,
            mu_msh,
            correction_weight,
            seed,
            output_dir,
            dump_fields,
            rho_threshold,
            sigma_plus,
            sigma_minus,
            gamma,
            inclusions,
            inclusion_min_side,
            inclusion_max_side,
            sigma_path,
            c_path,
            source_path,
            provenance: prov,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn opt<T>(
    value: Option<&String>,
    key: &'static str,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<Option<T>, ConfigError> {
    value
        .map(|v| {
            parse(v).ok_or_else(|| ConfigError::Type {
                key,
                expected: expected_type(key),
                value: v.clone(),
            })
        })
        .transpose()
}

fn expected_type(key: &str) -> &'static str {
    match key {
        "n_coarse" | "m" => "list of non-negative integers like [20,40,80]",
        "k" | "mu_msh" | "rho_threshold" | "sigma_plus" | "sigma_minus" | "gamma" => "finite number",
        "dump_fields" => "true or false",
        "seed" => "unsigned 64-bit integer",
        _ => "non-negative integer",
    }
}

fn parse_usize(s: &str) -> Option<usize> {
    s.parse().ok()
}

fn parse_f64(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

fn parse_usize_list(s: &str) -> Option<Vec<usize>> {
    let inner = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')).unwrap_or(s);
    let items: Option<Vec<usize>> = inner
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().ok())
        .collect();
    items.filter(|v| !v.is_empty())
}

impl ExperimentConfig {
    /// Defaults for one experiment.
    pub fn defaults(experiment: Experiment) -> Self {
        let mut raw = RawConfig::new();
        raw.entries
            .insert("experiment".into(), (experiment.name().into(), Provenance::Default));
        raw.resolve().expect("defaults are valid")
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.n_fine == 0 {
            return bad("n_fine must be positive".into());
        }
        for &nc in &self.n_coarse {
            signms_core::mesh::TwoScaleMesh::new(self.n_fine, nc).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            let local = (self.n_fine / nc + 1).pow(2);
            if self.l_star == 0 || self.l_star + 1 > local {
                return bad(format!(
                    "l_star={} needs 1 <= l_star < {local} local nodes at n_coarse={nc}",
                    self.l_star
                ));
            }
        }
        if !(self.k > 0.0) {
            return bad(format!("k must be positive, got {}", self.k));
        }
        if !(self.mu_msh > 0.0) {
            return bad(format!("mu_msh must be positive, got {}", self.mu_msh));
        }
        if !(self.rho_threshold > 0.0) {
            return bad(format!("rho_threshold must be positive, got {}", self.rho_threshold));
        }
        if !(self.sigma_plus > 0.0 && self.sigma_minus > 0.0) {
            return bad("sigma_plus and sigma_minus are magnitudes and must be positive".into());
        }
        if self.experiment == Experiment::Custom && (self.sigma_path.is_none() || self.source_path.is_none()) {
            return bad("custom experiment needs sigma_path and source_path (c_path optional)".into());
        }
        Ok(())
    }

    pub fn provenance(&self, key: &str) -> Provenance {
        self.provenance.get(key).copied().unwrap_or(Provenance::Default)
    }

    fn value_string(&self, key: &str) -> String {
        let list = |v: &[usize]| format!("[{}]", v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","));
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        match key {
            "experiment" => self.experiment.name().into(),
            "n_fine" => self.n_fine.to_string(),
            "n_coarse" => list(&self.n_coarse),
            "m" => list(&self.m),
            "l_star" => self.l_star.to_string(),
            "k" => format!("{:?}", self.k),
            "mu_msh" => format!("{:?}", self.mu_msh),
            "correction_weight" => match self.correction_weight {
                CorrectionWeight::Signed => "signed".into(),
                CorrectionWeight::Absolute => "absolute".into(),
            },
            "seed" => self.seed.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "dump_fields" => self.dump_fields.to_string(),
            "rho_threshold" => format!("{:?}", self.rho_threshold),
            "sigma_plus" => format!("{:?}", self.sigma_plus),
            "sigma_minus" => format!("{:?}", self.sigma_minus),
            "gamma" => format!("{:?}", self.gamma),
            "inclusions" => self.inclusions.to_string(),
            "inclusion_min_side" => self.inclusion_min_side.to_string(),
            "inclusion_max_side" => self.inclusion_max_side.to_string(),
            "sigma_path" => path(&self.sigma_path),
            "c_path" => path(&self.c_path),
            "source_path" => path(&self.source_path),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Resolved configuration, one `key = value  # provenance` line per key.
    /// Parsing the echo reproduces the configuration.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let v = self.value_string(key);
            if v.is_empty() {
                out.push_str(&format!("# {key} unset\n"));
            } else {
                out.push_str(&format!("{key} = {v}  # {}\n", self.provenance(key).label()));
            }
        }
        out
    }
}
