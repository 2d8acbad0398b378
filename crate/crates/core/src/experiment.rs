//! Monte Carlo experiment harness producing CSV result tables.
//!
//! Every trial owns a ChaCha20 stream selected by `(sweep point, trial)`, and
//! trials are collected by index, so tables are byte-identical for a given
//! configuration and seed regardless of thread count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::ar::{fit_ar_from_csi, predict_multi};
use crate::beamforming::{
    average_se, mrt_beamformer, nmse, optimize_phases, pilot_overhead_counts, spectral_efficiency,
    DEFAULT_MAX_SWEEPS, DEFAULT_TOL,
};
use crate::channel::{AgingSampler, CVector, ChannelTrace, PhaseVector};
use crate::classifier::{
    cnn_ar_predict, gen_dataset, predict_with_class, reference_channel, train, Checkpoint,
    CsiWindow, DatasetSpec, DopplerClassBank, NetSpec, TrainingRun,
};
use crate::error::{Error, Result};
use crate::estimation::{split_estimate, PilotEstimator};
use crate::scenario::{doppler_hz_to_normalized, ConfigFile, Geometry, Scenario};

/// Doppler of the single-speed experiments (18 km/h at 3 GHz).
pub const REFERENCE_DOPPLER_HZ: f64 = 50.0;
/// Order of the data-fitted AR baseline in the Doppler and distance sweeps.
pub const BASELINE_ORDER: usize = 8;
/// Orders of the data-fitted AR baselines in the horizon experiment.
pub const HORIZON_BASELINE_ORDERS: [usize; 3] = [8, 16, 24];
/// Horizontal offsets of the distance sweep, in meters.
pub const DISTANCE_GRID_M: [f64; 11] = [
    1.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentId {
    NmseVsHorizon,
    NmseVsDoppler,
    SeVsDistance,
    Overhead,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 4] = [
        ExperimentId::NmseVsHorizon,
        ExperimentId::NmseVsDoppler,
        ExperimentId::SeVsDistance,
        ExperimentId::Overhead,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentId::NmseVsHorizon => "nmse-vs-horizon",
            ExperimentId::NmseVsDoppler => "nmse-vs-doppler",
            ExperimentId::SeVsDistance => "se-vs-distance",
            ExperimentId::Overhead => "overhead",
        }
    }

    pub fn needs_classifier(&self) -> bool {
        !matches!(self, ExperimentId::Overhead)
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

/// What to run and where to put it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub experiment: ExperimentId,
    pub config: Option<PathBuf>,
    pub trials: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Defaults to `<out_dir>/classifier.ckpt`.
    pub checkpoint: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join(CHECKPOINT_FILE))
    }
}

pub const CHECKPOINT_FILE: &str = "classifier.ckpt";

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(u64),
    Real(f64),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Real(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(v) => v.to_string(),
            // shortest representation that round-trips
            Cell::Real(v) => format!("{v:?}"),
        }
    }
}

/// Rectangular table plus run metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Written as `# key=value` lines ahead of the header.
    pub metadata: Vec<(String, String)>,
    /// Kept out of the CSV so reruns stay byte-identical; written to the
    /// `<name>.run.json` sidecar instead.
    pub wall_clock_s: Option<f64>,
}

impl ResultTable {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            metadata: Vec::new(),
            wall_clock_s: None,
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width must match the header"
        );
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Rows whose text cell in `key_col` equals `key`.
    pub fn select<'a>(
        &'a self,
        key_col: &str,
        key: &'a str,
    ) -> impl Iterator<Item = &'a Vec<Cell>> + 'a {
        let idx = self.column(key_col).expect("known column");
        self.rows
            .iter()
            .filter(move |r| r[idx].as_text() == Some(key))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(s, "# {k}={v}");
        }
        let _ = writeln!(s, "{}", self.columns.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(Cell::render).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    pub fn write_csv(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.csv", self.name));
        std::fs::write(&path, self.to_csv())?;
        if let Some(t) = self.wall_clock_s {
            let mut meta: serde_json::Map<String, serde_json::Value> = self
                .metadata
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::from(v.as_str())))
                .collect();
            meta.insert("wall_clock_s".into(), serde_json::Value::from(t));
            let text = serde_json::to_string_pretty(&meta)?;
            std::fs::write(dir.join(format!("{}.run.json", self.name)), text + "\n")?;
        }
        Ok(path)
    }
}

/// Median and interquartile bounds (linear interpolation between order statistics).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Summary {
        median: quantile(&v, 0.5),
        q25: quantile(&v, 0.25),
        q75: quantile(&v, 0.75),
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Hex SHA-256 of the canonical TOML rendering.
pub fn config_hash(cfg: &ConfigFile) -> String {
    let digest = Sha256::digest(cfg.to_toml().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn trial_rng(seed: u64, point: usize, trial: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((point as u64) << 32) | trial as u64);
    rng
}

/// One simulated block: `V` estimated intervals followed by `P` true ones.
struct Block {
    trace: ChannelTrace,
    /// per user, `V` stacked estimates
    history: Vec<Vec<CVector>>,
}

fn simulate_block(
    scenario: &Scenario,
    geom: &Geometry,
    sampler: &AgingSampler,
    estimator: &PilotEstimator,
    rng: &mut ChaCha20Rng,
) -> Result<Block> {
    let cfg = &scenario.system;
    let trace = ChannelTrace::generate(cfg, geom, sampler, rng)?;
    let mut history = vec![Vec::with_capacity(cfg.train_intervals); geom.n_users()];
    for l in 0..cfg.train_intervals {
        for (k, f) in estimator
            .estimate_interval(&trace, l, rng)?
            .into_iter()
            .enumerate()
        {
            history[k].push(f);
        }
    }
    Ok(Block { trace, history })
}

/// Per-horizon NMSE (averaged over users) of stacked predictions, measured
/// on the effective channel under the all-ones reference phase.
fn horizon_nmse(block: &Block, preds: &[Vec<CVector>], v: usize) -> Result<Vec<f64>> {
    let n = block.trace.n_antennas();
    let horizon = preds[0].len();
    let ones = PhaseVector::ones(block.trace.n_groups());
    (0..horizon)
        .map(|p| {
            let mut acc = 0.0;
            for (k, pk) in preds.iter().enumerate() {
                let truth = block.trace.effective(k, v + p, &ones)?;
                let est = reference_channel(&pk[p], n)?;
                acc += nmse(&[est], &[truth])?.value;
            }
            Ok(acc / preds.len() as f64)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Predictor {
    Cnn,
    OracleClass,
    AdjacentClass,
    Fitted(usize),
}

impl Predictor {
    fn label(&self) -> String {
        match self {
            Predictor::Cnn => "CNN-AR".into(),
            Predictor::OracleClass => "CNN-AR (true class)".into(),
            Predictor::AdjacentClass => "CNN-AR (adjacent class)".into(),
            Predictor::Fitted(q) => format!("AR(Q={q})"),
        }
    }
}

fn predict_users(
    block: &Block,
    predictor: Predictor,
    ckpt: &Checkpoint,
    true_class: Option<usize>,
    scenario: &Scenario,
) -> Result<Vec<Vec<CVector>>> {
    let cfg = &scenario.system;
    let horizon = cfg.predict_intervals;
    let n = cfg.n_bs_antennas;
    block
        .history
        .iter()
        .map(|hist| match predictor {
            Predictor::Cnn => {
                Ok(cnn_ar_predict(hist, n, &ckpt.net, &ckpt.bank, horizon)?.predictions)
            }
            Predictor::OracleClass | Predictor::AdjacentClass => {
                let c = true_class.ok_or_else(|| {
                    Error::Config("class-injected prediction needs a grid Doppler".into())
                })?;
                let c = if predictor == Predictor::AdjacentClass {
                    if c + 1 < ckpt.bank.len() {
                        c + 1
                    } else {
                        c.saturating_sub(1)
                    }
                } else {
                    c
                };
                Ok(predict_with_class(hist, &ckpt.bank, c, horizon)?.predictions)
            }
            Predictor::Fitted(q) => {
                predict_multi(hist, &fit_ar_from_csi(hist, q, cfg.loading)?, horizon)
            }
        })
        .collect()
}

fn class_of(ckpt: &Checkpoint, f_n: f64) -> Option<usize> {
    ckpt.bank
        .dopplers()
        .iter()
        .position(|&f| (f - f_n).abs() < 1e-12)
}

fn check_prediction_window(scenario: &Scenario) -> Result<()> {
    if scenario.system.predict_intervals == 0 {
        return Err(Error::Config(
            "predict_intervals must be >= 1 for prediction experiments".into(),
        ));
    }
    Ok(())
}

/// Median NMSE per horizon `1..=P` at 50 Hz for fitted AR baselines and CNN-AR.
pub fn run_nmse_vs_horizon(
    scenario: &Scenario,
    ckpt: &Checkpoint,
    trials: usize,
    seed: u64,
) -> Result<ResultTable> {
    check_prediction_window(scenario)?;
    let cfg = &scenario.system;
    let f_n = doppler_hz_to_normalized(REFERENCE_DOPPLER_HZ, cfg)?;
    let true_class = class_of(ckpt, f_n);
    let mut predictors: Vec<Predictor> = HORIZON_BASELINE_ORDERS
        .iter()
        .filter(|&&q| q < cfg.train_intervals)
        .map(|&q| Predictor::Fitted(q))
        .collect();
    predictors.push(Predictor::Cnn);
    if true_class.is_some() {
        predictors.push(Predictor::OracleClass);
        predictors.push(Predictor::AdjacentClass);
    }
    let sampler = AgingSampler::new(
        f_n,
        cfg.train_intervals + cfg.predict_intervals,
        cfg.loading,
    )?;
    let estimator = PilotEstimator::from_config(cfg)?;
    // per trial: per predictor: per horizon
    let per_trial: Vec<Vec<Vec<f64>>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, 0, t);
            let block =
                simulate_block(scenario, &scenario.geometry, &sampler, &estimator, &mut rng)?;
            predictors
                .iter()
                .map(|&p| {
                    horizon_nmse(
                        &block,
                        &predict_users(&block, p, ckpt, true_class, scenario)?,
                        cfg.train_intervals,
                    )
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut table = ResultTable::new(
        ExperimentId::NmseVsHorizon.name(),
        &[
            "method",
            "horizon",
            "doppler_hz",
            "nmse_median",
            "nmse_q25",
            "nmse_q75",
        ],
    );
    for (i, p) in predictors.iter().enumerate() {
        for h in 0..cfg.predict_intervals {
            let vals: Vec<f64> = per_trial.iter().map(|t| t[i][h]).collect();
            let s = summarize(&vals);
            table.push(vec![
                Cell::Text(p.label()),
                Cell::Int(h as u64 + 1),
                Cell::Real(REFERENCE_DOPPLER_HZ),
                Cell::Real(s.median),
                Cell::Real(s.q25),
                Cell::Real(s.q75),
            ]);
        }
    }
    Ok(table)
}

/// Horizons reported by the Doppler sweep.
pub const DOPPLER_HORIZONS: [usize; 2] = [10, 20];

/// Median NMSE at horizons 10 and 20 across the Doppler grid.
pub fn run_nmse_vs_doppler(
    scenario: &Scenario,
    ckpt: &Checkpoint,
    trials: usize,
    seed: u64,
) -> Result<ResultTable> {
    check_prediction_window(scenario)?;
    let cfg = &scenario.system;
    let horizons: Vec<usize> = DOPPLER_HORIZONS
        .iter()
        .copied()
        .filter(|&h| h <= cfg.predict_intervals)
        .collect();
    let predictors = [Predictor::Fitted(BASELINE_ORDER), Predictor::Cnn];
    let estimator = PilotEstimator::from_config(cfg)?;
    let mut table = ResultTable::new(
        ExperimentId::NmseVsDoppler.name(),
        &[
            "method",
            "doppler_hz",
            "horizon",
            "nmse_median",
            "nmse_q25",
            "nmse_q75",
        ],
    );
    let mut rows: Vec<Vec<Cell>> = Vec::new();
    for (point, &fd) in cfg.doppler_grid_hz.iter().enumerate() {
        let f_n = doppler_hz_to_normalized(fd, cfg)?;
        let sampler = AgingSampler::new(
            f_n,
            cfg.train_intervals + cfg.predict_intervals,
            cfg.loading,
        )?;
        let per_trial: Vec<Vec<Vec<f64>>> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = trial_rng(seed, point, t);
                let block =
                    simulate_block(scenario, &scenario.geometry, &sampler, &estimator, &mut rng)?;
                predictors
                    .iter()
                    .map(|&p| {
                        horizon_nmse(
                            &block,
                            &predict_users(&block, p, ckpt, None, scenario)?,
                            cfg.train_intervals,
                        )
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for (i, p) in predictors.iter().enumerate() {
            for &h in &horizons {
                let vals: Vec<f64> = per_trial.iter().map(|t| t[i][h - 1]).collect();
                let s = summarize(&vals);
                rows.push(vec![
                    Cell::Text(p.label()),
                    Cell::Real(fd),
                    Cell::Int(h as u64),
                    Cell::Real(s.median),
                    Cell::Real(s.q25),
                    Cell::Real(s.q75),
                ]);
            }
        }
    }
    // group by method for readability
    for p in &predictors {
        let label = p.label();
        for r in rows
            .iter()
            .filter(|r| r[0].as_text() == Some(label.as_str()))
        {
            table.push(r.clone());
        }
    }
    Ok(table)
}

/// Average SE of one user over the prediction intervals when phases and
/// beamformer are designed from `(d, G)` pairs and evaluated on the truth.
fn average_se_with(
    block: &Block,
    k: usize,
    designs: Option<&[CVector]>,
    scenario: &Scenario,
) -> Result<f64> {
    let cfg = &scenario.system;
    let v = cfg.train_intervals;
    let n = cfg.n_bs_antennas;
    let mut per_interval = Vec::with_capacity(cfg.predict_intervals);
    for p in 0..cfg.predict_intervals {
        let l = v + p;
        let g_true = block.trace.cascaded(k, l)?;
        let d_true = block.trace.direct(k, l)?;
        let (d_hat, g_hat) = match designs {
            Some(f) => split_estimate(&f[p], n)?,
            None => (d_true.clone(), g_true.clone()),
        };
        let sol = optimize_phases(&g_hat, &d_hat, DEFAULT_TOL, DEFAULT_MAX_SWEEPS)?;
        let u = match designs {
            Some(_) => mrt_beamformer(&(&g_hat * sol.theta.as_vector() + &d_hat))?,
            None => sol.beamformer.clone(),
        };
        per_interval.push(spectral_efficiency(
            &g_true,
            &sol.theta,
            d_true,
            &u,
            cfg.data_power,
            cfg.noise_variance,
        )?);
    }
    average_se(&per_interval)
}

/// Median average SE versus horizontal offset for perfect, CNN-AR and AR CSI.
pub fn run_se_vs_distance(
    scenario: &Scenario,
    ckpt: &Checkpoint,
    trials: usize,
    seed: u64,
) -> Result<ResultTable> {
    check_prediction_window(scenario)?;
    let cfg = &scenario.system;
    let f_n = doppler_hz_to_normalized(REFERENCE_DOPPLER_HZ, cfg)?;
    let sampler = AgingSampler::new(
        f_n,
        cfg.train_intervals + cfg.predict_intervals,
        cfg.loading,
    )?;
    let estimator = PilotEstimator::from_config(cfg)?;
    let methods = ["perfect CSI", "CNN-AR", "AR(Q=8)"];
    let mut table = ResultTable::new(
        ExperimentId::SeVsDistance.name(),
        &["method", "d_h_m", "se_median", "se_q25", "se_q75"],
    );
    let grid: Vec<f64> = DISTANCE_GRID_M
        .iter()
        .copied()
        .filter(|&d| d < scenario.geometry.d_bs_ris)
        .collect();
    let mut rows: Vec<Vec<Cell>> = Vec::new();
    for (point, &d_h) in grid.iter().enumerate() {
        let geom = scenario.geometry.with_common_offset(d_h);
        geom.validate()?;
        let per_trial: Vec<[f64; 3]> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = trial_rng(seed, point, t);
                let block = simulate_block(scenario, &geom, &sampler, &estimator, &mut rng)?;
                let cnn = predict_users(&block, Predictor::Cnn, ckpt, None, scenario)?;
                let ar = predict_users(
                    &block,
                    Predictor::Fitted(BASELINE_ORDER),
                    ckpt,
                    None,
                    scenario,
                )?;
                let mut acc = [0.0; 3];
                for k in 0..geom.n_users() {
                    acc[0] += average_se_with(&block, k, None, scenario)?;
                    acc[1] += average_se_with(&block, k, Some(&cnn[k]), scenario)?;
                    acc[2] += average_se_with(&block, k, Some(&ar[k]), scenario)?;
                }
                Ok(acc.map(|x| x / geom.n_users() as f64))
            })
            .collect::<Result<_>>()?;
        for (i, m) in methods.iter().enumerate() {
            let vals: Vec<f64> = per_trial.iter().map(|t| t[i]).collect();
            let s = summarize(&vals);
            rows.push(vec![
                Cell::Text(m.to_string()),
                Cell::Real(d_h),
                Cell::Real(s.median),
                Cell::Real(s.q25),
                Cell::Real(s.q75),
            ]);
        }
    }
    for m in methods {
        for r in rows.iter().filter(|r| r[0].as_text() == Some(m)) {
            table.push(r.clone());
        }
    }
    Ok(table)
}

/// Training lengths and horizons of the overhead grid.
pub const OVERHEAD_V_GRID: [usize; 4] = [10, 20, 25, 30];
pub const OVERHEAD_P_GRID: [usize; 4] = [0, 10, 20, 30];

/// Pilot counts over a `(V, P)` grid with the configured array sizes.
pub fn run_overhead(scenario: &Scenario) -> Result<ResultTable> {
    let c = &scenario.system;
    let mut table = ResultTable::new(
        ExperimentId::Overhead.name(),
        &[
            "ris_elements_total",
            "ris_groups",
            "n_bs_antennas",
            "n_users",
            "train_intervals",
            "predict_intervals",
            "conventional",
            "proposed",
            "ratio",
        ],
    );
    for &v in &OVERHEAD_V_GRID {
        for &p in &OVERHEAD_P_GRID {
            let r = pilot_overhead_counts(
                c.ris_elements_total,
                c.ris_groups,
                c.n_bs_antennas,
                c.n_users,
                v,
                p,
            );
            table.push(vec![
                Cell::Int(c.ris_elements_total as u64),
                Cell::Int(c.ris_groups as u64),
                Cell::Int(c.n_bs_antennas as u64),
                Cell::Int(c.n_users as u64),
                Cell::Int(v as u64),
                Cell::Int(p as u64),
                Cell::Int(r.conventional),
                Cell::Int(r.proposed),
                Cell::Real(r.ratio()),
            ]);
        }
    }
    Ok(table)
}

/// Sizes of the validation and test splits relative to the training split.
pub const VAL_FRACTION: usize = 4;
pub const TEST_FRACTION: usize = 8;
pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

/// Train, validation and test windows (`per_class`, a quarter and an eighth
/// of it per class), each split drawn from its own seed.
pub fn generate_splits(
    scenario: &Scenario,
    per_class: usize,
    seed: u64,
) -> Result<[Vec<CsiWindow>; 3]> {
    let dopplers = scenario.system.class_dopplers()?;
    let sizes = [
        per_class,
        (per_class / VAL_FRACTION).max(1),
        (per_class / TEST_FRACTION).max(1),
    ];
    let mut out: [Vec<CsiWindow>; 3] = Default::default();
    for (i, (slot, n)) in out.iter_mut().zip(sizes).enumerate() {
        *slot = gen_dataset(
            scenario,
            &dopplers,
            DatasetSpec {
                per_class: n,
                seed: seed.wrapping_add(i as u64),
            },
        )?;
    }
    Ok(out)
}

/// Trains the standard network on the scenario's window shape and pairs it
/// with the AR bank of the configured Doppler grid.
pub fn train_checkpoint(
    scenario: &Scenario,
    train_set: &[CsiWindow],
    val_set: &[CsiWindow],
    run: &mut TrainingRun,
) -> Result<Checkpoint> {
    let cfg = &scenario.system;
    let dopplers = cfg.class_dopplers()?;
    let spec = NetSpec::standard(cfg.n_bs_antennas, cfg.train_intervals, dopplers.len());
    let net = train(train_set, val_set, spec, run)?;
    Checkpoint::new(
        net,
        DopplerClassBank::new(&dopplers, cfg.ar_order, cfg.loading)?,
    )
}

/// Per-epoch training curves.
pub fn training_table(run: &TrainingRun) -> ResultTable {
    let mut t = ResultTable::new(
        "training",
        &["epoch", "train_loss", "val_loss", "val_accuracy", "best"],
    );
    for e in 0..run.loss_history.len() {
        t.push(vec![
            Cell::Int(e as u64),
            Cell::Real(run.loss_history[e]),
            Cell::Real(run.val_loss_history[e]),
            Cell::Real(run.val_accuracy_history[e]),
            Cell::Int(u64::from(run.best_epoch == Some(e))),
        ]);
    }
    t
}

/// Loads the configuration (defaults when absent), runs one experiment and
/// writes `<out_dir>/<experiment>.csv`.
pub fn run(spec: &ExperimentSpec) -> Result<PathBuf> {
    spec.validate()?;
    let started = std::time::Instant::now();
    let cfg_file = match &spec.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let hash = config_hash(&cfg_file);
    let scenario = cfg_file.into_scenario()?;
    let mut table = if spec.experiment.needs_classifier() {
        let ckpt = Checkpoint::load(&spec.checkpoint_path())?;
        check_checkpoint(&scenario, &ckpt)?;
        match spec.experiment {
            ExperimentId::NmseVsHorizon => {
                run_nmse_vs_horizon(&scenario, &ckpt, spec.trials, spec.seed)?
            }
            ExperimentId::NmseVsDoppler => {
                run_nmse_vs_doppler(&scenario, &ckpt, spec.trials, spec.seed)?
            }
            ExperimentId::SeVsDistance => {
                run_se_vs_distance(&scenario, &ckpt, spec.trials, spec.seed)?
            }
            ExperimentId::Overhead => unreachable!("overhead needs no classifier"),
        }
    } else {
        run_overhead(&scenario)?
    };
    table.metadata = vec![
        ("experiment".into(), spec.experiment.name().into()),
        ("config_sha256".into(), hash),
        ("seed".into(), spec.seed.to_string()),
    ];
    // the overhead table is closed-form and ignores the trial count
    if spec.experiment.needs_classifier() {
        table
            .metadata
            .push(("trials".into(), spec.trials.to_string()));
    }
    table
        .metadata
        .push(("version".into(), format!("v{}", env!("CARGO_PKG_VERSION"))));
    table.wall_clock_s = Some(started.elapsed().as_secs_f64());
    table.write_csv(&spec.out_dir)
}

/// The classifier must match the scenario's window shape and Doppler grid.
pub fn check_checkpoint(scenario: &Scenario, ckpt: &Checkpoint) -> Result<()> {
    let cfg = &scenario.system;
    let s = ckpt.net.spec();
    if s.input_rows != 2 * cfg.n_bs_antennas || s.input_cols != cfg.train_intervals {
        return Err(Error::Config(format!(
            "checkpoint expects {}x{} windows, configuration gives {}x{}",
            s.input_rows,
            s.input_cols,
            2 * cfg.n_bs_antennas,
            cfg.train_intervals
        )));
    }
    let grid = cfg.class_dopplers()?;
    let bank = ckpt.bank.dopplers();
    if grid.len() != bank.len() || grid.iter().zip(&bank).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(Error::Config(
            "checkpoint Doppler classes differ from the configured grid".into(),
        ));
    }
    if ckpt.bank.order() > cfg.train_intervals {
        return Err(Error::Config(
            "bank AR order exceeds the training window".into(),
        ));
    }
    Ok(())
}
