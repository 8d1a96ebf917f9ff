//! Experiment driver: configuration, channel pool, seeded multi-run
//! campaigns and variant comparisons.
//!
//! Run `r` of a campaign draws everything (pool permutation, selection
//! randomness) from a ChaCha8 generator seeded with the master seed on
//! stream `RUN_STREAM_TAG << 32 | r`, so results do not depend on how runs
//! are scheduled across threads.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array_codebook::{generate_codebook, ArrayGeometry};
use crate::channel::{ChannelRealization, PairEvaluator, PairTable, Scenario, ScenarioConfig};
use crate::error::{Error, Result};
use crate::metrics::{from_db, mean_trace, moving_average, to_db, StepRecord};
use crate::offline_db::{build_database, OfflineDatabase};
use crate::refinement::RefinementConfig;
use crate::selection::SelectionConfig;
use crate::two_layer::{BeamSpace, BinLearner, RefinePolicy, RefinerKind};

pub const RUN_STREAM_TAG: u64 = 0x52;
/// Gains are clipped to this magnitude before averaging so a dead step
/// cannot swamp a trace.
pub const GAIN_CLAMP_DB: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelMode {
    /// Fresh street-canyon draws from the scenario.
    Street,
    /// The line-of-sight path of the first draw, unblocked, at every step.
    StaticLos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub scenario: ScenarioConfig,
    pub channel_mode: ChannelMode,
    pub array_nx: usize,
    pub array_ny: usize,
    pub offline_n: usize,
    pub screen_c: usize,
    pub budget: usize,
    pub risk_threshold_db: f64,
    pub risk_aware: bool,
    pub refine: bool,
    pub policy: RefinePolicy,
    pub refiner: RefinerKind,
    pub max_depth: usize,
    pub k_min: u64,
    pub k_expand: u64,
    pub alpha_norm: f64,
    pub smoothness_a: f64,
    pub smoothness: bool,
    pub horizon: usize,
    pub n_runs: usize,
    pub window: usize,
    pub pool_size: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sel = SelectionConfig::default();
        let rf = RefinementConfig::default();
        Self {
            scenario: ScenarioConfig::default(),
            channel_mode: ChannelMode::Street,
            array_nx: 16,
            array_ny: 16,
            offline_n: 5,
            screen_c: 200,
            budget: sel.budget,
            risk_threshold_db: sel.risk_threshold_db,
            risk_aware: sel.risk_aware,
            refine: true,
            policy: RefinePolicy::All,
            refiner: RefinerKind::Hoo,
            max_depth: rf.max_depth,
            k_min: rf.k_min,
            k_expand: rf.k_expand,
            alpha_norm: rf.alpha_norm,
            smoothness_a: rf.smoothness_a,
            smoothness: rf.smoothness,
            horizon: 2000,
            n_runs: 100,
            window: 50,
            pool_size: 10_000,
            seed: 1,
            out_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    /// Parses a flat `key = value` file. Unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let known = Self::keys();
        let unknown: Vec<&String> = table.keys().filter(|k| !known.contains(k.as_str())).collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys {unknown:?}")));
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn keys() -> BTreeSet<String> {
        toml::Table::try_from(Self::default()).expect("config serializes").keys().cloned().collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.refinement().validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.horizon < 1 || self.n_runs < 1 || self.window < 1 || self.pool_size < 1 {
            return bad("horizon, n_runs, window and pool_size must be at least 1");
        }
        if self.offline_n < 1 || self.screen_c < 1 || self.budget < 1 {
            return bad("offline_n, screen_c and budget must be at least 1");
        }
        if !(self.risk_threshold_db > 0.0) {
            return bad("risk_threshold_db must be positive");
        }
        ArrayGeometry::half_wave(self.array_nx, self.array_ny)?;
        Ok(())
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig { budget: self.budget, risk_threshold_db: self.risk_threshold_db, risk_aware: self.risk_aware }
    }

    pub fn refinement(&self) -> RefinementConfig {
        RefinementConfig {
            max_depth: self.max_depth,
            k_min: self.k_min,
            k_expand: self.k_expand,
            alpha_norm: self.alpha_norm,
            smoothness_a: self.smoothness_a,
            smoothness: self.smoothness,
        }
    }

    /// Whether two configs can share one environment.
    fn same_environment(&self, other: &Self) -> bool {
        self.scenario == other.scenario
            && self.channel_mode == other.channel_mode
            && (self.array_nx, self.array_ny) == (other.array_nx, other.array_ny)
            && (self.offline_n, self.pool_size) == (other.offline_n, other.pool_size)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), message: e.to_string() }
}

/// A pooled realization with its unrefined exhaustive optimum.
#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub ev: PairEvaluator,
    pub gamma_best: f64,
    pub best_pair: usize,
    pub los_blocked: bool,
}

/// Everything the runs of a campaign share.
#[derive(Debug, Clone)]
pub struct Environment {
    pub space: Arc<BeamSpace>,
    pub pool: Vec<PoolEntry>,
    pub db: OfflineDatabase,
    pub symbol_period_s: f64,
}

impl Environment {
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let geom = ArrayGeometry::half_wave(cfg.array_nx, cfg.array_ny)?;
        let cb = generate_codebook(&geom)?;
        let space = Arc::new(BeamSpace { tx: cb.clone(), rx: cb });
        let scenario = Scenario::new(cfg.scenario.clone())?;
        let t = cfg.scenario.symbol_period_s();
        let entry = |ch: &ChannelRealization| {
            let ev = PairEvaluator::new(ch, &space.tx.geometry, &space.rx.geometry, t);
            let table = PairTable::measure(&ev, &space.tx, &space.rx);
            let (best_pair, gamma_best) = table.best();
            (PoolEntry { ev, gamma_best, best_pair, los_blocked: ch.los_blocked }, table)
        };
        let (pool, db) = match cfg.channel_mode {
            ChannelMode::Street => {
                let pool: Vec<PoolEntry> =
                    (0..cfg.pool_size as u64).into_par_iter().map(|i| entry(&scenario.draw(i)).0).collect();
                let db = build_database(&scenario, &space.tx, &space.rx, cfg.offline_n, cfg.pool_size as u64);
                (pool, db)
            }
            ChannelMode::StaticLos => {
                let mut ch = scenario.draw(0);
                let mut los = ch.paths.remove(0);
                if ch.los_blocked {
                    los.gain *= from_db(cfg.scenario.blockage_loss_db).sqrt();
                }
                let ch = ChannelRealization::new(vec![los], ch.position_m);
                let (e, table) = entry(&ch);
                let rows = vec![table.strengths; cfg.offline_n];
                (vec![e], OfflineDatabase::from_measurements(0, &rows))
            }
        };
        Ok(Self { space, pool, db, symbol_period_s: t })
    }

    pub fn learner(&self, cfg: &ExperimentConfig) -> Result<BinLearner> {
        let mut l = BinLearner::from_database(
            self.space.clone(),
            &self.db,
            cfg.screen_c,
            cfg.selection(),
            cfg.refinement(),
            cfg.policy,
            cfg.refine,
        )?;
        l.kind = cfg.refiner;
        Ok(l)
    }

    /// Fraction of pool draws won by each pair.
    pub fn pool_p_opt(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.space.n_pairs()];
        for e in &self.pool {
            p[e.best_pair] += 1.0 / self.pool.len() as f64;
        }
        p
    }
}

pub fn run_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(RUN_STREAM_TAG << 32 | run as u64);
    rng
}

/// One run: a seeded permutation of the pool fed to a fresh learner.
pub fn run_single(cfg: &ExperimentConfig, env: &Environment, run: usize) -> Result<(Vec<StepRecord>, BinLearner)> {
    let mut rng = run_rng(cfg.seed, run);
    let mut order: Vec<usize> = (0..env.pool.len()).collect();
    order.shuffle(&mut rng);
    let mut learner = env.learner(cfg)?;
    let mut records = Vec::with_capacity(cfg.horizon);
    for n in 0..cfg.horizon {
        let e = &env.pool[order[n % order.len()]];
        records.push(learner.alignment_step(&e.ev, e.gamma_best, &mut rng).record);
    }
    Ok((records, learner))
}

pub fn gain_db(r: &StepRecord) -> f64 {
    (-to_db(r.xi())).clamp(-GAIN_CLAMP_DB, GAIN_CLAMP_DB)
}

/// Run-averaged, smoothed per-step traces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignTrace {
    pub mean_gain_db: Vec<f64>,
    pub p_loss_3db: Vec<f64>,
    pub p_loss_1db: Vec<f64>,
    /// Fraction of runs serving less than the unrefined optimum.
    pub p_miss_best: Vec<f64>,
}

pub const TRACE_COLUMNS: [&str; 4] = ["mean_gain_db", "p_loss_3db", "p_loss_1db", "p_miss_best"];

impl CampaignTrace {
    pub fn from_runs(runs: &[Vec<StepRecord>], window: usize) -> Self {
        let per = |f: &dyn Fn(&StepRecord) -> f64| -> Vec<f64> {
            let traces: Vec<Vec<f64>> = runs.iter().map(|r| r.iter().map(f).collect()).collect();
            moving_average(&mean_trace(&traces), window)
        };
        let (l3, l1) = (from_db(3.0), from_db(1.0));
        Self {
            mean_gain_db: per(&gain_db),
            p_loss_3db: per(&|r| f64::from(u8::from(r.xi() > l3))),
            p_loss_1db: per(&|r| f64::from(u8::from(r.xi() > l1))),
            p_miss_best: per(&|r| f64::from(u8::from(r.xi() > 1.0))),
        }
    }

    pub fn len(&self) -> usize {
        self.mean_gain_db.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_gain_db.is_empty()
    }

    fn columns(&self) -> [&Vec<f64>; 4] {
        [&self.mean_gain_db, &self.p_loss_3db, &self.p_loss_1db, &self.p_miss_best]
    }

    /// `step` (1-based) followed by the trace columns.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,{}", TRACE_COLUMNS.join(","))?;
        for k in 0..self.len() {
            write!(out, "{}", k + 1)?;
            for c in self.columns() {
                write!(out, ",{:.6}", c[k])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

pub struct VariantResult {
    pub trace: CampaignTrace,
    pub runs: Vec<Vec<StepRecord>>,
    pub learners: Vec<BinLearner>,
}

pub fn run_variant(cfg: &ExperimentConfig, env: &Environment) -> Result<VariantResult> {
    cfg.validate()?;
    let results: Vec<(Vec<StepRecord>, BinLearner)> =
        (0..cfg.n_runs).into_par_iter().map(|r| run_single(cfg, env, r)).collect::<Result<_>>()?;
    let (runs, learners): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(VariantResult { trace: CampaignTrace::from_runs(&runs, cfg.window), runs, learners })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub version: &'static str,
    pub config: ExperimentConfig,
    pub master_seed: u64,
    pub run_stream_rule: String,
    pub pool_entries: usize,
    pub candidates: usize,
    pub pairs: usize,
    pub csv: String,
}

pub struct CampaignResult {
    pub trace: CampaignTrace,
    pub manifest: Manifest,
}

pub fn run_campaign(cfg: &ExperimentConfig) -> Result<CampaignResult> {
    let env = Environment::prepare(cfg)?;
    let v = run_variant(cfg, &env)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config: cfg.clone(),
        master_seed: cfg.seed,
        run_stream_rule: format!("ChaCha8(seed).set_stream({RUN_STREAM_TAG:#x} << 32 | run)"),
        pool_entries: env.pool.len(),
        candidates: v.learners.first().map_or(0, |l| l.selection.n_arms()),
        pairs: env.space.n_pairs(),
        csv: "campaign.csv".into(),
    };
    Ok(CampaignResult { trace: v.trace, manifest })
}

impl CampaignResult {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let csv = dir.join(&self.manifest.csv);
        let f = std::fs::File::create(&csv).map_err(|e| io_err(&csv, e))?;
        self.trace.write_csv(std::io::BufWriter::new(f)).map_err(|e| io_err(&csv, e))?;
        let mp = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(&mp, json + "\n").map_err(|e| io_err(&mp, e))
    }
}

/// Named variants side by side on one shared environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub names: Vec<String>,
    pub traces: Vec<CampaignTrace>,
}

impl Comparison {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "step")?;
        for n in &self.names {
            for c in TRACE_COLUMNS {
                write!(out, ",{n}:{c}")?;
            }
        }
        writeln!(out)?;
        let len = self.traces.first().map_or(0, CampaignTrace::len);
        for k in 0..len {
            write!(out, "{}", k + 1)?;
            for t in &self.traces {
                for c in t.columns() {
                    write!(out, ",{:.6}", c[k])?;
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn trace(&self, name: &str) -> Option<&CampaignTrace> {
        self.names.iter().position(|n| n == name).map(|i| &self.traces[i])
    }
}

/// Runs every variant on the first variant's environment. A flat
/// leaf-bandit refiner variant (`flat-mab`) is appended unless one is
/// already present.
pub fn compare_variants(variants: &[(String, ExperimentConfig)]) -> Result<Comparison> {
    let Some((_, base)) = variants.first() else {
        return Err(Error::Invalid("no variants to compare".into()));
    };
    for (name, v) in variants {
        if v.horizon != base.horizon {
            return Err(Error::Invalid(format!("variant {name} has horizon {} instead of {}", v.horizon, base.horizon)));
        }
        if !v.same_environment(base) {
            return Err(Error::Invalid(format!("variant {name} uses a different scenario")));
        }
    }
    let mut all = variants.to_vec();
    if !all.iter().any(|(_, v)| v.refine && v.refiner == RefinerKind::Flat) {
        all.push(("flat-mab".into(), variant("flat", base)?));
    }
    let env = Environment::prepare(base)?;
    let traces = all.iter().map(|(_, v)| run_variant(v, &env).map(|r| r.trace)).collect::<Result<Vec<_>>>()?;
    Ok(Comparison { names: all.into_iter().map(|(n, _)| n).collect(), traces })
}

/// Named preset derived from `base`: `alg1` (plain UCB, no refinement),
/// `alg2` (risk-aware, no refinement), `hoo`, `flat`, or a refinement
/// policy (`all`, `after-reward`, `after-n:<steps>`).
pub fn variant(name: &str, base: &ExperimentConfig) -> Result<ExperimentConfig> {
    let mut c = base.clone();
    match name {
        "alg1" => (c.risk_aware, c.refine) = (false, false),
        "alg2" => (c.risk_aware, c.refine) = (true, false),
        "hoo" => (c.refine, c.refiner) = (true, RefinerKind::Hoo),
        "flat" => (c.refine, c.refiner) = (true, RefinerKind::Flat),
        other => {
            c.policy = other.parse()?;
            c.refine = true;
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            array_nx: 4,
            array_ny: 4,
            screen_c: 10,
            budget: 4,
            horizon: 40,
            n_runs: 3,
            window: 5,
            pool_size: 30,
            ..Default::default()
        }
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let c = small();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
        let partial = ExperimentConfig::from_toml("budget = 12\npolicy = \"after-n:50\"\nrng_seed = 9\n").unwrap();
        assert_eq!(partial.budget, 12);
        assert_eq!(partial.policy, RefinePolicy::AfterN(50));
        assert_eq!(partial.scenario.rng_seed, 9);
        assert!(matches!(ExperimentConfig::from_toml("budgett = 3"), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_toml("horizon = 0").is_err());
        assert!(ExperimentConfig::from_toml("policy = \"never\"").is_err());
    }

    #[test]
    fn single_step_campaign() {
        let c = ExperimentConfig { horizon: 1, n_runs: 1, ..small() };
        let r = run_campaign(&c).unwrap();
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn window_one_is_raw() {
        let c = ExperimentConfig { window: 1, ..small() };
        let env = Environment::prepare(&c).unwrap();
        let v = run_variant(&c, &env).unwrap();
        let raw: Vec<f64> = mean_trace(&v.runs.iter().map(|r| r.iter().map(gain_db).collect()).collect::<Vec<_>>());
        assert_eq!(v.trace.mean_gain_db, raw);
    }

    #[test]
    fn same_seed_same_bytes() {
        let c = small();
        let write = || {
            let mut buf = Vec::new();
            run_campaign(&c).unwrap().trace.write_csv(&mut buf).unwrap();
            buf
        };
        assert_eq!(write(), write());
    }

    #[test]
    fn unrefined_never_beats_exhaustive() {
        let c = ExperimentConfig { refine: false, ..small() };
        let env = Environment::prepare(&c).unwrap();
        let v = run_variant(&c, &env).unwrap();
        assert!(v.runs.iter().flatten().all(|r| r.xi() >= 1.0));
    }

    #[test]
    fn comparison_layout() {
        let base = small();
        let cmp = compare_variants(&[("a".into(), base.clone()), ("b".into(), base.clone())]).unwrap();
        assert_eq!(cmp.names, vec!["a", "b", "flat-mab"]);
        assert_eq!(cmp.traces[0], cmp.traces[1]);
        let mut buf = Vec::new();
        cmp.write_csv(&mut buf).unwrap();
        let head = String::from_utf8(buf).unwrap().lines().next().unwrap().to_string();
        assert!(head.starts_with("step,a:mean_gain_db,a:p_loss_3db"));
        let long = ExperimentConfig { horizon: 41, ..base.clone() };
        assert!(compare_variants(&[("a".into(), base), ("b".into(), long)]).is_err());
    }

    #[test]
    fn presets() {
        let b = small();
        assert!(!variant("alg1", &b).unwrap().risk_aware);
        assert!(!variant("alg2", &b).unwrap().refine);
        assert_eq!(variant("after-reward", &b).unwrap().policy, RefinePolicy::AfterReward);
        assert!(variant("bogus", &b).is_err());
    }

    #[test]
    fn static_mode_has_one_entry() {
        let c = ExperimentConfig { channel_mode: ChannelMode::StaticLos, ..small() };
        let env = Environment::prepare(&c).unwrap();
        assert_eq!(env.pool.len(), 1);
        assert_eq!(env.pool[0].ev.n_paths(), 1);
        assert_eq!(env.db.rows.len(), c.offline_n);
    }
}
