//! Experiment driver: paired policy sweeps over market sizes and
//! plot-ready CSV output.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::auction::run_auction;
use crate::error::{invalid, DdaError, Result};
use crate::market::{generate_market, Distributions, MarketConfig, PriceGrid, ValuationMaps};
use crate::metrics::social_welfare;
use crate::policy::{Policy, PolicySpec};
use crate::rl::{CurvePoint, TrainConfig};

/// Declarative experiment description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub market_sizes: Vec<usize>,
    pub episodes_per_cell: usize,
    pub policies: Vec<PolicySpec>,
    pub grid: PriceGrid,
    pub c_b: f64,
    pub k_p: f64,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub maps: ValuationMaps,
    pub distributions: Distributions,
    /// Trainer settings; the market, penalty factor and seed fields are
    /// overridden by the experiment-level values.
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            market_sizes: vec![10, 20, 30, 40, 50],
            episodes_per_cell: 100,
            policies: vec![
                PolicySpec::Vanilla,
                PolicySpec::Random {
                    k_min: 1,
                    k_max: 20,
                    seed: 0,
                },
            ],
            grid: PriceGrid::default(),
            c_b: MarketConfig::default().broadcast_unit_cost,
            k_p: TrainConfig::default().env.penalty_factor,
            master_seed: 0,
            output_dir: PathBuf::from("out"),
            maps: ValuationMaps::default(),
            distributions: Distributions::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| DdaError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| DdaError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| DdaError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.market_sizes.is_empty() {
            return Err(DdaError::Config("market_sizes must not be empty".into()));
        }
        if self.market_sizes.contains(&0) {
            return Err(DdaError::Config("market sizes must be >= 1".into()));
        }
        if self.episodes_per_cell < 1 {
            return Err(DdaError::Config("episodes_per_cell must be >= 1".into()));
        }
        if !(self.c_b >= 0.0 && self.c_b.is_finite()) {
            return Err(DdaError::Config("c_b must be a non-negative number".into()));
        }
        if !(self.k_p >= 0.0 && self.k_p.is_finite()) {
            return Err(DdaError::Config("k_p must be a non-negative number".into()));
        }
        self.market_config().validate()?;
        Ok(())
    }

    pub fn market_config(&self) -> MarketConfig {
        MarketConfig {
            grid: self.grid,
            broadcast_unit_cost: self.c_b,
            maps: self.maps,
            distributions: self.distributions.clone(),
        }
    }

    pub fn train_config(&self, market_size: usize) -> TrainConfig {
        let mut t = self.train.clone();
        t.env.market = self.market_config();
        t.env.market_size = market_size;
        t.env.penalty_factor = self.k_p;
        t.seed = self.master_seed;
        t
    }
}

/// One auction of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub policy: String,
    pub market_size: usize,
    pub seed: u64,
    pub rounds: u32,
    pub pairs: usize,
    pub buyer_utility: f64,
    pub seller_utility: f64,
    pub broadcast_cost: f64,
    pub sw_paper: f64,
    pub sw_econ: f64,
    pub regret: f64,
}

/// Mean and standard error of one metric over a cell's episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        if values.len() < 2 {
            return Self { mean, stderr: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self {
            mean,
            stderr: (var / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub policy: String,
    pub market_size: usize,
    pub episodes: usize,
    pub sw_paper: Stat,
    pub sw_econ: Stat,
    pub cost: Stat,
    pub regret: Stat,
    pub pairs: Stat,
    pub rounds: Stat,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepResults {
    pub rows: Vec<EpisodeRow>,
    pub summary: Vec<CellSummary>,
}

impl SweepResults {
    pub fn cell(&self, policy: &str, market_size: usize) -> Option<&CellSummary> {
        self.summary
            .iter()
            .find(|c| c.policy == policy && c.market_size == market_size)
    }
}

/// Market seeds for one market size, derived from the master seed only so
/// every policy sees the same instances.
pub fn market_seeds(master_seed: u64, market_size: usize, episodes: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(market_size as u64);
    (0..episodes).map(|_| rng.random()).collect()
}

fn policy_seed(market_seed: u64, policy_index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(market_seed);
    rng.set_stream(1 + policy_index as u64);
    rng.random()
}

/// Label used in result tables: the policy kind, suffixed with its index
/// when the same kind appears more than once.
fn policy_labels(specs: &[PolicySpec]) -> Vec<String> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let dup = specs.iter().filter(|o| o.name() == s.name()).count() > 1;
            if dup {
                format!("{}{}", s.name(), i)
            } else {
                s.name().to_string()
            }
        })
        .collect()
}

/// Runs every policy on the same `episodes_per_cell` markets of every size.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResults> {
    config.validate()?;
    if config.policies.is_empty() {
        return Err(DdaError::Config("no policies to sweep".into()));
    }
    let policies: Vec<Policy> = config
        .policies
        .iter()
        .map(Policy::from_spec)
        .collect::<Result<_>>()?;
    let labels = policy_labels(&config.policies);
    let market_cfg = config.market_config();
    let mut rows = Vec::new();
    for &size in &config.market_sizes {
        for seed in market_seeds(config.master_seed, size, config.episodes_per_cell) {
            let market = generate_market(size, seed, &market_cfg)?;
            for (i, (policy, label)) in policies.iter().zip(&labels).enumerate() {
                let mut p = policy.reseeded(policy_seed(seed, i));
                let (outcome, _) = run_auction(&market, &mut p)?;
                let r = social_welfare(&outcome, &market, market.broadcast_unit_cost);
                rows.push(EpisodeRow {
                    policy: label.clone(),
                    market_size: size,
                    seed,
                    rounds: r.rounds,
                    pairs: r.num_pairs,
                    buyer_utility: r.buyer_utility,
                    seller_utility: r.seller_utility,
                    broadcast_cost: r.broadcast_cost,
                    sw_paper: r.social_welfare_paper,
                    sw_econ: r.social_welfare_econ,
                    regret: r.total_regret,
                });
            }
        }
    }
    let summary = summarize(&rows, &labels, &config.market_sizes);
    Ok(SweepResults { rows, summary })
}

fn summarize(rows: &[EpisodeRow], labels: &[String], sizes: &[usize]) -> Vec<CellSummary> {
    let mut out = Vec::new();
    for &size in sizes {
        for label in labels {
            let cell: Vec<&EpisodeRow> = rows
                .iter()
                .filter(|r| r.market_size == size && &r.policy == label)
                .collect();
            let stat = |f: fn(&EpisodeRow) -> f64| {
                Stat::of(&cell.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            out.push(CellSummary {
                policy: label.clone(),
                market_size: size,
                episodes: cell.len(),
                sw_paper: stat(|r| r.sw_paper),
                sw_econ: stat(|r| r.sw_econ),
                cost: stat(|r| r.broadcast_cost),
                regret: stat(|r| r.regret),
                pairs: stat(|r| r.pairs as f64),
                rounds: stat(|r| f64::from(r.rounds)),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
struct SummaryRow<'a> {
    policy: &'a str,
    market_size: usize,
    episodes: usize,
    sw_paper_mean: f64,
    sw_paper_se: f64,
    sw_econ_mean: f64,
    sw_econ_se: f64,
    cost_mean: f64,
    cost_se: f64,
    regret_mean: f64,
    regret_se: f64,
    pairs_mean: f64,
    pairs_se: f64,
    rounds_mean: f64,
    rounds_se: f64,
}

impl<'a> From<&'a CellSummary> for SummaryRow<'a> {
    fn from(c: &'a CellSummary) -> Self {
        Self {
            policy: &c.policy,
            market_size: c.market_size,
            episodes: c.episodes,
            sw_paper_mean: c.sw_paper.mean,
            sw_paper_se: c.sw_paper.stderr,
            sw_econ_mean: c.sw_econ.mean,
            sw_econ_se: c.sw_econ.stderr,
            cost_mean: c.cost.mean,
            cost_se: c.cost.stderr,
            regret_mean: c.regret.mean,
            regret_se: c.regret.stderr,
            pairs_mean: c.pairs.mean,
            pairs_se: c.pairs.stderr,
            rounds_mean: c.rounds.mean,
            rounds_se: c.rounds.stderr,
        }
    }
}

const EPISODE_HEADER: [&str; 11] = [
    "policy",
    "market_size",
    "seed",
    "rounds",
    "pairs",
    "buyer_utility",
    "seller_utility",
    "broadcast_cost",
    "sw_paper",
    "sw_econ",
    "regret",
];

const SUMMARY_HEADER: [&str; 15] = [
    "policy",
    "market_size",
    "episodes",
    "sw_paper_mean",
    "sw_paper_se",
    "sw_econ_mean",
    "sw_econ_se",
    "cost_mean",
    "cost_se",
    "regret_mean",
    "regret_se",
    "pairs_mean",
    "pairs_se",
    "rounds_mean",
    "rounds_se",
];

fn write_csv<T: Serialize>(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = T>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `episodes.csv`, `summary.csv` and `summary.json` into `dir`.
pub fn write_sweep(results: &SweepResults, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("episodes.csv"), &EPISODE_HEADER, &results.rows)?;
    write_csv(
        &dir.join("summary.csv"),
        &SUMMARY_HEADER,
        results.summary.iter().map(SummaryRow::from),
    )?;
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&results.summary)?,
    )?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct SizePoint<'a> {
    policy: &'a str,
    market_size: usize,
    mean: f64,
    stderr: f64,
}

fn point(c: &CellSummary, s: Stat) -> SizePoint<'_> {
    SizePoint {
        policy: &c.policy,
        market_size: c.market_size,
        mean: s.mean,
        stderr: s.stderr,
    }
}

#[derive(Debug, Clone, Serialize)]
struct CurveRow {
    market_size: usize,
    iteration: usize,
    env_steps: u64,
    regret: f64,
    smoothed_regret: f64,
    sw_paper: f64,
    sw_econ: f64,
    cost: f64,
    mean_episode_length: f64,
}

pub const PLOT_FILES: [&str; 4] = [
    "sw_econ_vs_size.csv",
    "sw_paper_vs_size.csv",
    "cost_vs_size.csv",
    "training_curves.csv",
];

/// Per-figure CSVs: welfare and cost against market size for every policy,
/// and training curves keyed by market size.
pub fn emit_plot_data(
    results: &SweepResults,
    curves: &[(usize, Vec<CurvePoint>)],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let header = ["policy", "market_size", "mean", "stderr"];
    let paths: Vec<PathBuf> = PLOT_FILES.iter().map(|f| dir.join(f)).collect();
    write_csv(
        &paths[0],
        &header,
        results.summary.iter().map(|c| point(c, c.sw_econ)),
    )?;
    write_csv(
        &paths[1],
        &header,
        results.summary.iter().map(|c| point(c, c.sw_paper)),
    )?;
    write_csv(
        &paths[2],
        &header,
        results.summary.iter().map(|c| point(c, c.cost)),
    )?;
    write_training_curves(curves, &paths[3])?;
    Ok(paths)
}

/// Reads a curve file written by `write_curves_csv`.
pub fn read_curves_csv(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Training curves keyed by market size, in the plot-file layout.
pub fn write_training_curves(curves: &[(usize, Vec<CurvePoint>)], path: &Path) -> Result<()> {
    let rows = curves.iter().flat_map(|(size, pts)| {
        pts.iter().map(move |p| CurveRow {
            market_size: *size,
            iteration: p.iteration,
            env_steps: p.env_steps,
            regret: p.regret,
            smoothed_regret: p.smoothed_regret,
            sw_paper: p.sw_paper,
            sw_econ: p.sw_econ,
            cost: p.cost,
            mean_episode_length: p.mean_episode_length,
        })
    });
    write_csv(
        path,
        &[
            "market_size",
            "iteration",
            "env_steps",
            "regret",
            "smoothed_regret",
            "sw_paper",
            "sw_econ",
            "cost",
            "mean_episode_length",
        ],
        rows,
    )
}

/// Sweep that compares a checkpoint against both baselines.
pub fn evaluation_config(base: &ExperimentConfig, checkpoint: &Path) -> Result<ExperimentConfig> {
    if !checkpoint.exists() {
        return Err(DdaError::Config(format!(
            "checkpoint {} not found",
            checkpoint.display()
        )));
    }
    let mut cfg = base.clone();
    cfg.policies = vec![
        PolicySpec::Vanilla,
        PolicySpec::Random {
            k_min: 1,
            k_max: 20,
            seed: 0,
        },
        PolicySpec::Learned {
            checkpoint: checkpoint.to_path_buf(),
        },
    ];
    Ok(cfg)
}

/// Ratio of two means, as reported for the learned policy.
pub fn ratio(num: f64, den: f64) -> Result<f64> {
    if den == 0.0 {
        return Err(invalid("ratio with zero denominator"));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            market_sizes: vec![4, 6],
            episodes_per_cell: 5,
            master_seed: 3,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn one_row_per_episode() {
        let cfg = ExperimentConfig {
            market_sizes: vec![10],
            episodes_per_cell: 1,
            policies: vec![PolicySpec::Vanilla],
            ..ExperimentConfig::default()
        };
        let r = run_sweep(&cfg).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.summary.len(), 1);
        assert_eq!(r.summary[0].sw_econ.stderr, 0.0);
    }

    #[test]
    fn policies_share_markets() {
        let r = run_sweep(&tiny()).unwrap();
        assert_eq!(r.rows.len(), 2 * 5 * 2);
        for pair in r.rows.chunks(2) {
            assert_eq!(pair[0].seed, pair[1].seed);
            assert_eq!(pair[0].policy, "vanilla");
            assert_eq!(pair[1].policy, "random");
        }
        assert_eq!(run_sweep(&tiny()).unwrap(), r);
    }

    #[test]
    fn seeds_depend_on_size_and_master_only() {
        assert_eq!(market_seeds(1, 10, 4), market_seeds(1, 10, 4));
        assert_ne!(market_seeds(1, 10, 4), market_seeds(1, 20, 4));
        assert_ne!(market_seeds(1, 10, 4), market_seeds(2, 10, 4));
        assert_eq!(market_seeds(1, 10, 6)[..4], market_seeds(1, 10, 4)[..]);
    }

    #[test]
    fn stat_mean_and_stderr() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((s.stderr - sd / 2.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let bad = ExperimentConfig {
            market_sizes: vec![],
            ..ExperimentConfig::default()
        };
        assert!(matches!(bad.validate(), Err(DdaError::Config(_))));
        let bad = ExperimentConfig {
            episodes_per_cell: 0,
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
        let missing = ExperimentConfig {
            policies: vec![PolicySpec::Learned {
                checkpoint: "/nonexistent/ck.json".into(),
            }],
            ..tiny()
        };
        assert!(matches!(run_sweep(&missing), Err(DdaError::Config(_))));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = tiny();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let partial = ExperimentConfig::from_toml(
            "market_sizes = [10]\nepisodes_per_cell = 3\n[[policies]]\nkind = \"vanilla\"\n",
        )
        .unwrap();
        assert_eq!(partial.policies, vec![PolicySpec::Vanilla]);
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        let nested =
            ExperimentConfig::from_toml("[grid]\np_max = 50.0\n[train.ppo]\nepochs = 3\n").unwrap();
        assert_eq!(nested.grid.p_max, 50.0);
        assert_eq!(nested.grid.p_min, 0.0);
        assert_eq!(nested.train.ppo.epochs, 3);
        assert_eq!(nested.train.ppo.clip_ratio, 0.2);
    }

    #[test]
    fn plot_files_empty_and_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_plot_data(&SweepResults::default(), &[], dir.path()).unwrap();
        for p in &paths {
            assert_eq!(fs::read_to_string(p).unwrap().lines().count(), 1);
        }
        let r = run_sweep(&tiny()).unwrap();
        emit_plot_data(&r, &[], dir.path()).unwrap();
        let first: Vec<String> = paths
            .iter()
            .map(|p| fs::read_to_string(p).unwrap())
            .collect();
        emit_plot_data(&r, &[], dir.path()).unwrap();
        let second: Vec<String> = paths
            .iter()
            .map(|p| fs::read_to_string(p).unwrap())
            .collect();
        assert_eq!(first, second);
        assert_eq!(first[0].lines().count(), 1 + 2 * 2);
    }

    #[test]
    fn five_sizes_three_policies() {
        let cfg = ExperimentConfig {
            market_sizes: vec![2, 3, 4, 5, 6],
            episodes_per_cell: 1,
            policies: vec![
                PolicySpec::Vanilla,
                PolicySpec::Random {
                    k_min: 1,
                    k_max: 20,
                    seed: 0,
                },
                PolicySpec::Random {
                    k_min: 2,
                    k_max: 5,
                    seed: 0,
                },
            ],
            ..ExperimentConfig::default()
        };
        let r = run_sweep(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_plot_data(&r, &[], dir.path()).unwrap();
        for p in &paths[..3] {
            assert_eq!(fs::read_to_string(p).unwrap().lines().count(), 1 + 15);
        }
        assert!(r.cell("random1", 4).is_some());
    }

    #[test]
    fn curves_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let tc = TrainConfig {
            rollout_length: 64,
            iterations: 2,
            hidden: vec![8],
            ..TrainConfig::default()
        };
        let out = crate::rl::train(&tc).unwrap();
        crate::rl::write_curves_csv(&out.curves, &p).unwrap();
        let back = read_curves_csv(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].env_steps, out.curves[1].env_steps);
        assert!(read_curves_csv(&dir.path().join("missing.csv")).is_err());
    }

    #[test]
    fn write_sweep_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_sweep(&tiny()).unwrap();
        write_sweep(&r, dir.path()).unwrap();
        let episodes = fs::read_to_string(dir.path().join("episodes.csv")).unwrap();
        assert!(episodes.starts_with("policy,market_size,seed,rounds,pairs"));
        assert_eq!(episodes.lines().count(), 1 + 20);
        let json: Vec<CellSummary> =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
                .unwrap();
        assert_eq!(json.len(), 4);
    }
}
