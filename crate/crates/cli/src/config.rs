//! Experiment configuration: a sectioned TOML file, validated against a fixed
//! schema, with `THERMOFORM_<SECTION>_<KEY>` environment overrides.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thermoform::density::DEFAULT_SEED;
use thermoform::maps::IntervalMap;
use thermoform::stability::{BaseRule, PipelineConfig, SweepConfig};

use crate::error::CliError;

pub const ENV_PREFIX: &str = "THERMOFORM_";
const SECTIONS: &[&str] = &["map", "run", "stability", "output"];

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub map: MapSection,
    #[serde(default)]
    pub run: RunSection,
    pub stability: Option<StabilitySection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSection {
    pub family: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseRuleName {
    Critical,
    Scan,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub t: Vec<f64>,
    /// Base-cylinder depth (the largest depth tried by the critical rule).
    pub k: usize,
    pub base_rule: BaseRuleName,
    pub base_itinerary: Option<Vec<u8>>,
    pub delta: f64,
    pub n_max: usize,
    pub k_max: usize,
    /// Search interval for the pressure root.
    pub bracket: [f64; 2],
    /// Tower height; defaults to `n_max + 2`.
    pub tower_height: Option<usize>,
    /// Depth of the `partition` dump; defaults to `k`.
    pub partition_depth: Option<usize>,
    pub bins: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            t: vec![1.0],
            k: p.base_depth,
            base_rule: BaseRuleName::Critical,
            base_itinerary: None,
            delta: p.delta,
            n_max: p.n_max,
            k_max: p.gibbs.solve.k_max,
            bracket: [p.gibbs.solve.bracket.0, p.gibbs.solve.bracket.1],
            tower_height: None,
            partition_depth: None,
            bins: p.bins,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySection {
    /// Signed offsets from the first map parameter, shrinking in size.
    pub ladder: Vec<f64>,
    #[serde(default = "default_tau_cap")]
    pub tau_cap: usize,
    pub tail_grid: Option<Vec<usize>>,
    #[serde(default = "default_c2_grid")]
    pub c2_grid: usize,
}

fn default_tau_cap() -> usize {
    8
}

fn default_c2_grid() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub seed: u64,
    pub plot: bool,
    pub threads: Option<usize>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), seed: DEFAULT_SEED, plot: false, threads: None }
    }
}

impl ExperimentConfig {
    /// Reads `path`, applies environment overrides and validates.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, std::env::vars())
    }

    /// Parses config text with `vars` as the environment.
    pub fn parse<I: IntoIterator<Item = (String, String)>>(text: &str, vars: I) -> Result<Self, CliError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        let mut overrides: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        overrides.sort();
        for (k, v) in overrides {
            apply_override(&mut table, &k, &v)?;
        }
        let cfg: Self = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        IntervalMap::from_family(&self.map.family, &self.map.params).map_err(|e| CliError::Config(e.to_string()))?;
        let r = &self.run;
        if r.t.is_empty() || r.t.iter().any(|t| !t.is_finite()) {
            return bad(format!("run.t must be a nonempty list of finite values, got {:?}", r.t));
        }
        if !(r.delta > 0.0 && r.delta.is_finite()) {
            return bad(format!("run.delta must be positive, got {}", r.delta));
        }
        if r.k == 0 || r.n_max == 0 || r.k_max == 0 {
            return bad("run.k, run.n_max and run.k_max must be positive".into());
        }
        if !(r.bracket.iter().all(|b| b.is_finite()) && r.bracket[0] < r.bracket[1]) {
            return bad(format!("run.bracket must be a finite interval [lo, hi] with lo < hi, got {:?}", r.bracket));
        }
        if r.bins < 16 {
            return bad(format!("run.bins must be at least 16, got {}", r.bins));
        }
        if self.output.threads == Some(0) {
            return bad("output.threads must be positive".into());
        }
        if let Some(s) = &self.stability {
            if self.map.params.is_empty() {
                return bad(format!("family `{}` has no parameter to perturb", self.map.family));
            }
            if s.ladder.is_empty() || s.ladder.iter().any(|o| !o.is_finite()) {
                return bad("stability.ladder must be a nonempty list of finite offsets".into());
            }
            if s.ladder.windows(2).any(|w| w[1].abs() >= w[0].abs()) {
                return bad(format!("stability.ladder must shrink strictly in absolute value, got {:?}", s.ladder));
            }
            if s.tau_cap == 0 || s.c2_grid < 2 {
                return bad("stability.tau_cap must be positive and stability.c2_grid at least 2".into());
            }
        }
        Ok(())
    }

    pub fn pipeline(&self, t: f64) -> PipelineConfig {
        let r = &self.run;
        let mut p = PipelineConfig {
            t,
            base_depth: r.k,
            base_rule: match r.base_rule {
                BaseRuleName::Critical => BaseRule::Critical,
                BaseRuleName::Scan => BaseRule::Scan,
            },
            base_itinerary: r.base_itinerary.clone(),
            delta: r.delta,
            n_max: r.n_max,
            tower_height: r.tower_height,
            bins: r.bins,
            ..Default::default()
        };
        p.gibbs.solve.k_max = r.k_max;
        p.gibbs.solve.bracket = (r.bracket[0], r.bracket[1]);
        p
    }

    /// The sweep at `t`; `None` without a `[stability]` section.
    pub fn sweep(&self, t: f64) -> Option<SweepConfig> {
        let s = self.stability.as_ref()?;
        let mut cfg = SweepConfig::new(&self.map.family, self.map.params[0], s.ladder.clone(), self.pipeline(t));
        cfg.tau_cap = s.tau_cap;
        cfg.tail_grid = s.tail_grid.clone();
        cfg.c2_grid = s.c2_grid;
        Some(cfg)
    }

    pub fn map(&self) -> IntervalMap {
        IntervalMap::from_family(&self.map.family, &self.map.params).expect("validated family")
    }
}

/// `THERMOFORM_RUN_N_MAX=30` sets `run.n_max = 30`. Values are read as TOML
/// and fall back to plain strings.
fn apply_override(table: &mut toml::Table, var: &str, raw: &str) -> Result<(), CliError> {
    let rest = var[ENV_PREFIX.len()..].to_ascii_lowercase();
    let Some((section, key)) = rest.split_once('_').filter(|(s, k)| SECTIONS.contains(s) && !k.is_empty()) else {
        return Err(CliError::Config(format!("environment override {var} does not name a section ({})", SECTIONS.join(", "))));
    };
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let entry = table.entry(section.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match entry {
        toml::Value::Table(t) => {
            t.insert(key.to_string(), value);
            Ok(())
        }
        _ => Err(CliError::Config(format!("`{section}` is not a section"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
        ExperimentConfig::parse(text, Vec::new())
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse("[map]\nfamily = \"cheb\"\n").unwrap();
        assert_eq!(c.run, RunSection::default());
        assert_eq!(c.output.dir, PathBuf::from("out"));
        assert!(c.stability.is_none());
    }

    #[test]
    fn unknown_key_names_the_key() {
        let err = parse("[map]\nfamily = \"cheb\"\n[run]\nnmax = 3\n").unwrap_err();
        assert!(err.to_string().contains("nmax"), "{err}");
    }

    #[test]
    fn unknown_family_lists_registry() {
        let err = parse("[map]\nfamily = \"henon\"\n").unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        assert!(err.to_string().contains("logistic"), "{err}");
    }

    #[test]
    fn env_overrides_apply_and_validate() {
        let vars = vec![("THERMOFORM_RUN_N_MAX".to_string(), "12".to_string()), ("HOME".to_string(), "/".to_string())];
        let c = ExperimentConfig::parse("[map]\nfamily = \"tent\"\nparams = [2.0]\n", vars).unwrap();
        assert_eq!(c.run.n_max, 12);
        let vars = vec![("THERMOFORM_OUTPUT_DIR".to_string(), "/tmp/x y".to_string())];
        let c = ExperimentConfig::parse("[map]\nfamily = \"cheb\"\n", vars).unwrap();
        assert_eq!(c.output.dir, PathBuf::from("/tmp/x y"));
        let vars = vec![("THERMOFORM_NOPE".to_string(), "1".to_string())];
        assert!(ExperimentConfig::parse("[map]\nfamily = \"cheb\"\n", vars).is_err());
    }

    #[test]
    fn ladder_must_shrink() {
        let text = "[map]\nfamily = \"tent\"\nparams = [1.9]\n[run]\nbracket = [1.0, -1.0]\n";
        assert!(parse(text).is_err());
        let text = "[map]\nfamily = \"tent\"\nparams = [1.9]\n[stability]\nladder = [0.01, 0.02]\n";
        assert!(parse(text).is_err());
        let text = "[map]\nfamily = \"tent\"\nparams = [1.9]\n[stability]\nladder = [0.02, -0.01]\n";
        assert_eq!(parse(text).unwrap().sweep(1.0).unwrap().ladder, vec![0.02, -0.01]);
    }

    #[test]
    fn cheb_cannot_be_swept() {
        assert!(parse("[map]\nfamily = \"cheb\"\n[stability]\nladder = [0.1]\n").is_err());
    }
}
