//! TOML experiment configuration and market resolution.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sessrec::dataset::{InputFormat, MarketDataset};
use sessrec::experiment::{AblationSettings, SimilaritySettings};
use sessrec::report::ReportFormat;
use sessrec::synth::{
    derive_related_market, generate_market, SyntheticMarket, SyntheticMarketConfig,
};
use sessrec::{Error, Result};

/// Environment variable naming the directory relative output paths resolve against.
pub const OUTPUT_ROOT_ENV: &str = "SESSREC_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Where reports go; relative paths resolve against `$SESSREC_OUTPUT_ROOT`.
    pub output_dir: PathBuf,
    pub formats: Vec<ReportFormat>,
    /// Market whose validation set scores every transfer curve.
    pub target: Option<String>,
    /// Re-index all markets over the union catalog before transfer.
    pub align_id_maps: bool,
    pub markets: Vec<MarketSpec>,
    pub ablation: AblationSettings,
    pub similarity: SimilaritySettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: PathBuf::from("results"),
            formats: vec![ReportFormat::Json, ReportFormat::Csv, ReportFormat::Svg],
            target: None,
            align_id_maps: false,
            markets: Vec::new(),
            ablation: AblationSettings::default(),
            similarity: SimilaritySettings::default(),
        }
    }
}

/// One market: a session file, a synthetic market, or a perturbation of
/// another synthetic market. Exactly one of `path`, `synthetic` and
/// `derive_from` must be set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<InputFormat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticMarketConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub derive_from: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<f64>,
    /// Generator seed of a derived market.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        let mut config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // data paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new(""));
        for m in &mut config.markets {
            if let Some(p) = &m.path {
                if p.is_relative() {
                    let joined = base.join(p);
                    let abs = std::path::absolute(&joined)
                        .map_err(|e| Error::io(format!("resolving {}", joined.display()), e))?;
                    m.path = Some(abs);
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for (i, m) in self.markets.iter().enumerate() {
            if m.id.is_empty() {
                return Err(Error::Config(format!("market #{i} has no id")));
            }
            if seen.insert(m.id.as_str(), i).is_some() {
                return Err(Error::Config(format!("duplicate market id {:?}", m.id)));
            }
            let kinds = [
                m.path.is_some(),
                m.synthetic.is_some(),
                m.derive_from.is_some(),
            ];
            if kinds.iter().filter(|&&k| k).count() != 1 {
                return Err(Error::Config(format!(
                    "market {:?} needs exactly one of path, synthetic, derive_from",
                    m.id
                )));
            }
            if let Some(base) = &m.derive_from {
                match seen.get(base.as_str()).map(|&j| &self.markets[j]) {
                    Some(b) if b.path.is_none() => {}
                    Some(_) => {
                        return Err(Error::Config(format!(
                            "market {:?} derives from file market {base:?}",
                            m.id
                        )))
                    }
                    None => {
                        return Err(Error::Config(format!(
                            "market {:?} derives from {base:?}, which must be listed before it",
                            m.id
                        )))
                    }
                }
                if !m.perturbation.is_some_and(|e| (0.0..=1.0).contains(&e)) {
                    return Err(Error::Config(format!(
                        "market {:?} needs a perturbation in [0, 1]",
                        m.id
                    )));
                }
            } else if m.perturbation.is_some() || m.seed.is_some() {
                return Err(Error::Config(format!(
                    "perturbation and seed only apply to derived markets ({:?})",
                    m.id
                )));
            }
        }
        if let Some(t) = &self.target {
            if !seen.contains_key(t.as_str()) {
                return Err(Error::Config(format!(
                    "target {t:?} is not a listed market"
                )));
            }
        }
        Ok(())
    }

    /// Output directory, resolved against the output root when relative.
    pub fn output_dir(&self) -> PathBuf {
        resolve_output(&self.output_dir)
    }
}

pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

/// A loaded market plus, for generated ones, the structure behind it.
pub struct ResolvedMarket {
    pub dataset: MarketDataset,
    pub synthetic: Option<SyntheticMarket>,
    /// Perturbation and base index of a derived market.
    pub derived: Option<(f64, usize)>,
}

/// Loads or generates every market, in config order. All data is read
/// before any training starts.
pub fn resolve_markets(specs: &[MarketSpec]) -> Result<Vec<ResolvedMarket>> {
    let mut out: Vec<ResolvedMarket> = Vec::with_capacity(specs.len());
    for spec in specs {
        let resolved = if let Some(path) = &spec.path {
            let format = spec.format.unwrap_or(InputFormat::NativeCsv);
            ResolvedMarket {
                dataset: MarketDataset::load(spec.id.clone(), path, format)?,
                synthetic: None,
                derived: None,
            }
        } else if let Some(cfg) = &spec.synthetic {
            let cfg = SyntheticMarketConfig {
                market_id: spec.id.clone(),
                ..cfg.clone()
            };
            let market = generate_market(&cfg)?;
            ResolvedMarket {
                dataset: market.dataset.clone(),
                synthetic: Some(market),
                derived: None,
            }
        } else {
            let base_id = spec.derive_from.as_deref().unwrap_or_default();
            let (base_idx, base) = out
                .iter()
                .enumerate()
                .find_map(|(i, r)| match &r.synthetic {
                    Some(s) if r.dataset.market_id == base_id => Some((i, s)),
                    _ => None,
                })
                .ok_or_else(|| Error::Config(format!("unknown base market {base_id:?}")))?;
            let cfg = SyntheticMarketConfig {
                market_id: spec.id.clone(),
                seed: spec.seed.unwrap_or(base.config.seed),
                ..base.config.clone()
            };
            let eps = spec.perturbation.unwrap_or_default();
            let market = derive_related_market(&base.structure, eps, &cfg)?;
            ResolvedMarket {
                dataset: market.dataset.clone(),
                synthetic: Some(market),
                derived: Some((eps, base_idx)),
            }
        };
        out.push(resolved);
    }
    Ok(out)
}

/// Just the datasets of [`resolve_markets`].
pub fn load_datasets(specs: &[MarketSpec]) -> Result<Vec<MarketDataset>> {
    Ok(resolve_markets(specs)?
        .into_iter()
        .map(|r| r.dataset)
        .collect())
}
