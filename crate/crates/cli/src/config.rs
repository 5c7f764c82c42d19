//! Flat `key=value` run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hetfield::field::{GpFieldModel, KernelSpec, LgpEnergyModel, LinkFunction, Location};
use hetfield::ingest::{FitOptions, SeparableParams};
use hetfield::sblue::GridSpec;
use hetfield::select::CeConfig;
use sha2::{Digest, Sha256};

const DEFAULTS: &[(&str, &str)] = &[
    ("field.mean", "8"),
    ("field.kernel", "se"),
    ("field.sigma2", "10"),
    ("field.length", "1"),
    ("field.sigma2_x", "0.1"),
    ("field.length_x", "0.5"),
    ("field.sigma2_y", "10"),
    ("field.length_y", "0.1"),
    ("energy.mean", "0"),
    ("energy.kernel", "se"),
    ("energy.sigma2", "0.3"),
    ("energy.length", "1"),
    ("energy.sigma2_x", "0.1"),
    ("energy.length_x", "0.5"),
    ("energy.sigma2_y", "0.3"),
    ("energy.length_y", "0.1"),
    ("link", "reciprocal"),
    ("threshold", "8"),
    ("high_noise_sd", "1"),
    ("deployment.file", ""),
    ("deployment.n_high", "4"),
    ("deployment.n_low", "64"),
    ("deployment.pool", "250"),
    ("deployment.geometry_seed", "0"),
    ("region.x_min", "0"),
    ("region.x_max", "5"),
    ("region.y_min", "0"),
    ("region.y_max", "5"),
    ("grid.nx", "50"),
    ("grid.ny", "50"),
    ("ce.samples", "200"),
    ("ce.elite_fraction", "0.1"),
    ("ce.smoothing", "0.7"),
    ("ce.decision_threshold", "0.5"),
    ("ce.max_iters", "50"),
    ("ce.stall_iters", "5"),
    ("ce.cost_high", "150"),
    ("ce.cost_low", "30"),
    ("query.x", "3.5"),
    ("query.y", "3.1"),
    ("query.epsilon", "6"),
    ("sweep.thresholds", "8,10,13,15"),
    ("oracle.mc_samples", "1000000"),
    ("fit.init", "1,1,1,1,0.1"),
    ("fit.max_evaluations", "4000"),
    ("fit.max_points", "400"),
    ("output.pgm", "false"),
];

const INLINE_DEPLOYMENT_KEYS: &[&str] = &[
    "deployment.n_high",
    "deployment.n_low",
    "deployment.pool",
    "deployment.geometry_seed",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Default,
    File { path: PathBuf, line: usize },
    Override,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Default => write!(f, "default"),
            Origin::File { path, line } => write!(f, "{}:{line}", path.display()),
            Origin::Override => write!(f, "command line"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

type Entries = BTreeMap<String, (String, Origin)>;

/// Raw settings before validation, with where each value came from.
#[derive(Debug, Clone)]
pub struct Settings {
    entries: Entries,
}

impl Default for Settings {
    fn default() -> Self {
        let mut entries = Entries::new();
        for (k, v) in DEFAULTS {
            entries.insert(k.to_string(), (v.to_string(), Origin::Default));
        }
        Settings { entries }
    }
}

fn split_pair(text: &str) -> Option<(&str, &str)> {
    let (k, v) = text.split_once('=')?;
    Some((k.trim(), v.trim()))
}

impl Settings {
    fn put(&mut self, key: &str, value: &str, origin: Origin) -> Result<(), ConfigError> {
        if key != "seed" && !self.entries.contains_key(key) {
            return Err(ConfigError(format!("{origin}: unknown key {key:?}")));
        }
        self.entries.insert(key.to_string(), (value.to_string(), origin));
        Ok(())
    }

    /// Applies a config file: one `key = value` per line, `#` comments.
    pub fn load_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        self.load_str(&text, path)
    }

    pub fn load_str(&mut self, text: &str, path: &Path) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let origin = Origin::File {
                path: path.to_path_buf(),
                line: i + 1,
            };
            let (k, v) = split_pair(line).ok_or_else(|| ConfigError(format!("{origin}: expected key=value, got {line:?}")))?;
            self.put(k, v, origin)?;
        }
        Ok(())
    }

    /// Applies a `--set key=value` override.
    pub fn set(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = split_pair(pair).ok_or_else(|| ConfigError(format!("--set expects key=value, got {pair:?}")))?;
        self.put(k, v, Origin::Override)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.entries.insert("seed".into(), (seed.to_string(), Origin::Override));
    }

    fn raw(&self, key: &str) -> (&str, &Origin) {
        let (v, o) = &self.entries[key];
        (v, o)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        let (v, origin) = self.raw(key);
        v.parse()
            .map_err(|_| ConfigError(format!("{key}: cannot parse {v:?} ({origin})")))
    }

    fn list(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let (v, origin) = self.raw(key);
        v.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|_| ConfigError(format!("{key}: expected comma-separated numbers, got {v:?} ({origin})")))
    }

    fn kernel(&self, prefix: &str) -> Result<KernelSpec<f64>, ConfigError> {
        let key = |s: &str| format!("{prefix}.{s}");
        let kind: String = self.get(&key("kernel"))?;
        let spec = match kind.as_str() {
            "se" => KernelSpec::squared_exponential(self.get(&key("sigma2"))?, self.get(&key("length"))?),
            "separable" => KernelSpec::separable_exponential(
                self.get(&key("sigma2_x"))?,
                self.get(&key("length_x"))?,
                self.get(&key("sigma2_y"))?,
                self.get(&key("length_y"))?,
            ),
            other => {
                return Err(ConfigError(format!(
                    "{}: unknown kernel {other:?}, expected se or separable ({})",
                    key("kernel"),
                    self.raw(&key("kernel")).1
                )))
            }
        };
        spec.map_err(|e| ConfigError(format!("{prefix} kernel: {e}")))
    }

    /// sha256 of the sorted resolved settings.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, (v, _)) in &self.entries {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        if !self.entries.contains_key("seed") {
            return Err(ConfigError("seed is mandatory: set it in the config or pass --seed".into()));
        }
        let seed: u64 = self.get("seed")?;
        let field = GpFieldModel::new(self.get("field.mean")?, self.kernel("field")?)
            .map_err(|e| ConfigError(format!("field: {e}")))?;
        let energy = LgpEnergyModel::new(self.get("energy.mean")?, self.kernel("energy")?)
            .map_err(|e| ConfigError(format!("energy: {e}")))?;
        let link: String = self.get("link")?;
        let link = LinkFunction::from_str(&link).map_err(|e| ConfigError(format!("link: {e}")))?;

        let file: String = self.get("deployment.file")?;
        let deployment = if file.is_empty() {
            let d = InlineDeployment {
                n_high: self.get("deployment.n_high")?,
                n_low: self.get("deployment.n_low")?,
                pool: self.get("deployment.pool")?,
                geometry_seed: self.get("deployment.geometry_seed")?,
            };
            if d.n_high + d.n_low == 0 {
                return Err(ConfigError("deployment: needs at least one sensor (n_high + n_low ≥ 1)".into()));
            }
            if d.n_low > d.pool {
                return Err(ConfigError(format!(
                    "deployment.n_low: {} exceeds deployment.pool = {}",
                    d.n_low, d.pool
                )));
            }
            DeploymentSource::Inline(d)
        } else {
            if let Some(k) = INLINE_DEPLOYMENT_KEYS
                .iter()
                .find(|k| self.raw(k).1 != &Origin::Default)
            {
                return Err(ConfigError(format!(
                    "deployment: both deployment.file and {k} ({}) are given; use exactly one source",
                    self.raw(k).1
                )));
            }
            DeploymentSource::File(PathBuf::from(file))
        };

        let region = Region {
            x_min: self.get("region.x_min")?,
            x_max: self.get("region.x_max")?,
            y_min: self.get("region.y_min")?,
            y_max: self.get("region.y_max")?,
        };
        if !(region.x_min < region.x_max && region.y_min < region.y_max) {
            return Err(ConfigError("region: bounds must satisfy min < max".into()));
        }
        let grid = GridSpec::new(
            (region.x_min, region.x_max),
            self.get("grid.nx")?,
            (region.y_min, region.y_max),
            self.get("grid.ny")?,
        )
        .map_err(|e| ConfigError(format!("grid: {e}")))?;

        let ce = CeConfig {
            samples_per_iter: self.get("ce.samples")?,
            elite_fraction: self.get("ce.elite_fraction")?,
            smoothing: self.get("ce.smoothing")?,
            decision_threshold: self.get("ce.decision_threshold")?,
            max_iters: self.get("ce.max_iters")?,
            stall_iters: self.get("ce.stall_iters")?,
            cost_high: self.get("ce.cost_high")?,
            cost_low: self.get("ce.cost_low")?,
        };
        ce.validate().map_err(|e| ConfigError(format!("ce: {e}")))?;

        let init = self.list("fit.init")?;
        let [sigma2_x, len_x, sigma2_y, len_y, nugget] = init[..] else {
            return Err(ConfigError(format!(
                "fit.init: expected sigma2_x,len_x,sigma2_y,len_y,nugget, got {} values",
                init.len()
            )));
        };

        let cfg = RunConfig {
            seed,
            field,
            energy,
            link,
            threshold: self.get("threshold")?,
            high_noise_sd: self.get("high_noise_sd")?,
            deployment,
            region,
            grid,
            ce,
            query: (Location::new(self.get("query.x")?, self.get("query.y")?), self.get("query.epsilon")?),
            sweep_thresholds: self.list("sweep.thresholds")?,
            oracle_mc_samples: self.get("oracle.mc_samples")?,
            fit_init: SeparableParams {
                sigma2_x,
                len_x,
                sigma2_y,
                len_y,
                nugget,
            },
            fit_options: FitOptions {
                max_evaluations: self.get("fit.max_evaluations")?,
                max_points: self.get("fit.max_points")?,
                seed,
                ..FitOptions::default()
            },
            pgm: self.get("output.pgm")?,
            hash: self.hash(),
        };
        if !(cfg.high_noise_sd > 0.0) {
            return Err(ConfigError("high_noise_sd: must be positive".into()));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

/// Synthetic geometry: high sensors on a regular grid (uniform draws when
/// `n_high` is not a perfect square), low sensors the first `n_low` of
/// `pool` uniform draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InlineDeployment {
    pub n_high: usize,
    pub n_low: usize,
    pub pool: usize,
    pub geometry_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeploymentSource {
    Inline(InlineDeployment),
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub field: GpFieldModel<f64>,
    pub energy: LgpEnergyModel<f64>,
    pub link: LinkFunction,
    pub threshold: f64,
    pub high_noise_sd: f64,
    pub deployment: DeploymentSource,
    pub region: Region,
    pub grid: GridSpec<f64>,
    pub ce: CeConfig<f64>,
    pub query: (Location<f64>, f64),
    pub sweep_thresholds: Vec<f64>,
    pub oracle_mc_samples: usize,
    pub fit_init: SeparableParams<f64>,
    pub fit_options: FitOptions,
    pub pgm: bool,
    pub hash: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded() -> Settings {
        let mut s = Settings::default();
        s.set_seed(1);
        s
    }

    #[test]
    fn defaults_resolve_to_reference_setup() {
        let c = seeded().resolve().unwrap();
        assert_eq!(c.field.mean, 8.0);
        assert_eq!(c.threshold, 8.0);
        assert_eq!(c.sweep_thresholds, vec![8.0, 10.0, 13.0, 15.0]);
        assert!(matches!(c.deployment, DeploymentSource::Inline(InlineDeployment { n_high: 4, n_low: 64, .. })));
    }

    #[test]
    fn seed_is_mandatory() {
        assert!(Settings::default().resolve().is_err());
    }

    #[test]
    fn diagnostics_name_line_and_key() {
        let mut s = seeded();
        let err = s.load_str("# comment\nfield.mean = 8\nbogus = 1\n", Path::new("run.cfg")).unwrap_err();
        assert!(err.0.contains("run.cfg:3") && err.0.contains("bogus"), "{err}");
        let mut s = seeded();
        s.load_str("threshold = high\n", Path::new("run.cfg")).unwrap();
        let err = s.resolve().unwrap_err();
        assert!(err.0.contains("threshold") && err.0.contains("run.cfg:1"), "{err}");
    }

    #[test]
    fn empty_network_and_double_source_rejected() {
        let mut s = seeded();
        s.set("deployment.n_high=0").unwrap();
        s.set("deployment.n_low=0").unwrap();
        assert!(s.resolve().is_err());
        let mut s = seeded();
        s.set("deployment.file=d.csv").unwrap();
        s.set("deployment.n_low=3").unwrap();
        assert!(s.resolve().unwrap_err().0.contains("exactly one"));
    }

    #[test]
    fn hash_tracks_values() {
        let a = seeded();
        let mut b = seeded();
        b.set("threshold=9").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), seeded().hash());
        assert_eq!(a.hash().len(), 16);
    }
}
