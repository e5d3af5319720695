//! Experiment configuration and the generate / train / evaluate workflows.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::data::io::{decode_dataset, encode_dataset, write_atomic};
use crate::data::{split_dataset, FitDomain, Scaler, ScalerKind, SplitSpec};
use crate::deeponet::{DeepOnetConfig, TrunkScaling};
use crate::donlstm::{Stage, LSTM_HIDDEN};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_model, MetricReport, CSV_HEADER};
use crate::model::{Network, Surrogate};
use crate::pde::{
    downsample_time, generate_set, integer_ratio, Equation, EquationKind, Grid, IcConfig,
    IntegratorConfig, Problem, TrajectorySet,
};
use crate::rng::{self, Stream};
use crate::trainer::{
    run_three_stage, train_on, DataSelector, DataSplits, GridData, StageEpochs, TrainingConfig,
    TrainingLog,
};

/// The six benchmark models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    DonLow,
    DonHigh,
    DonMulti,
    LstmHigh,
    DonlstmHigh,
    DonlstmMulti,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::DonLow,
        Variant::DonHigh,
        Variant::DonMulti,
        Variant::LstmHigh,
        Variant::DonlstmHigh,
        Variant::DonlstmMulti,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::DonLow => "don_low",
            Variant::DonHigh => "don_high",
            Variant::DonMulti => "don_multi",
            Variant::LstmHigh => "lstm_high",
            Variant::DonlstmHigh => "donlstm_high",
            Variant::DonlstmMulti => "donlstm_multi",
        }
    }

    pub fn uses_low(self) -> bool {
        matches!(
            self,
            Variant::DonLow | Variant::DonMulti | Variant::DonlstmMulti
        )
    }

    pub fn uses_high(self) -> bool {
        self != Variant::DonLow
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|v| v.name()).collect();
            Error::config(format!(
                "unknown variant `{s}`; expected one of {}",
                names.join(", ")
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthPreset {
    Full,
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub widths: WidthPreset,
    pub lstm_hidden: usize,
    /// Fourier features of `x` in the trunk instead of min-max scaling.
    pub periodic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub equation: EquationKind,
    /// Equation coefficients; the defaults of `equation` when absent.
    pub coefficients: Option<Equation>,
    pub grid: Option<Grid>,
    pub t_final: Option<f64>,
    pub dt_high: Option<f64>,
    pub dt_low: Option<f64>,
    /// Accept `dt_low / dt_high` other than 5.
    pub allow_any_low_ratio: bool,
    pub ic: IcConfig,
    pub integrator: IntegratorConfig,
    pub n_high: usize,
    pub n_low: usize,
    pub n_test: usize,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub seeds: Vec<u64>,
    pub desk: bool,
    pub data_dir: PathBuf,
}

/// Desk-scale LSTM width.
pub const DESK_LSTM_HIDDEN: usize = 20;
/// Desk-scale learning rates for steps 1-2 and step 3.
pub const DESK_LR1: f64 = 1e-3;
pub const DESK_LR2: f64 = 1e-4;

impl ExperimentConfig {
    /// Full-size defaults.
    pub fn full(equation: EquationKind) -> Self {
        ExperimentConfig {
            equation,
            coefficients: None,
            grid: None,
            t_final: None,
            dt_high: None,
            dt_low: None,
            allow_any_low_ratio: false,
            ic: IcConfig::default_for(equation),
            integrator: IntegratorConfig::default(),
            n_high: 250,
            n_low: 1000,
            n_test: 1000,
            model: ModelConfig {
                widths: WidthPreset::Full,
                lstm_hidden: LSTM_HIDDEN,
                periodic: false,
            },
            training: TrainingConfig {
                epochs: StageEpochs {
                    don_pretrain: 25_000,
                    lstm_only: 5_000,
                    joint_finetune: 5_000,
                },
                ..TrainingConfig::default()
            },
            seeds: vec![1, 2, 3, 4, 5],
            desk: false,
            data_dir: PathBuf::from("data"),
        }
    }

    /// Small preset that trains in minutes.
    pub fn desk(equation: EquationKind) -> Self {
        let mut c = Self::full(equation);
        c.n_high = 50;
        c.n_low = 200;
        c.n_test = 50;
        c.model.widths = WidthPreset::Desk;
        c.model.lstm_hidden = DESK_LSTM_HIDDEN;
        c.training.epochs = StageEpochs::uniform(500);
        // 500 epochs is 50x shorter than the full schedule; at the full-scale
        // rates of 1e-4 / 1e-5 the desk networks stay near the mean predictor
        c.training.lr1 = DESK_LR1;
        c.training.lr2 = DESK_LR2;
        c.desk = true;
        c
    }

    /// Parses a JSON config. Missing fields take the full-scale defaults, or the
    /// desk defaults when `desk` is set here or in the file.
    pub fn from_json(text: &str, desk: bool) -> Result<Self> {
        let user: Value = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("config is not valid JSON: {e}")))?;
        let obj = user
            .as_object()
            .ok_or_else(|| Error::config("config must be a JSON object"))?;
        let equation: EquationKind = match obj.get("equation") {
            Some(Value::String(s)) => s
                .parse()
                .map_err(|e: Error| Error::config(format!("equation: {e}")))?,
            Some(_) => return Err(Error::config("equation: expected a string")),
            None => return Err(Error::config("equation: missing field")),
        };
        let desk = desk || obj.get("desk") == Some(&Value::Bool(true));
        let base = if desk {
            Self::desk(equation)
        } else {
            Self::full(equation)
        };
        let mut merged = serde_json::to_value(&base)?;
        merge_json(&mut merged, &user);
        if desk {
            merged["desk"] = Value::Bool(true);
        }
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(merged).map_err(|e| {
            let path = e.path().to_string();
            Error::config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn problem(&self) -> Result<Problem> {
        let mut p = Problem::preset(self.equation);
        if let Some(eq) = self.coefficients {
            if eq.kind() != self.equation {
                return Err(Error::config(format!(
                    "coefficients: given for {} but equation is {}",
                    eq.kind(),
                    self.equation
                )));
            }
            p.equation = eq;
        }
        if let Some(g) = self.grid {
            p.grid = g;
        }
        if let Some(t) = self.t_final {
            p.t_final = t;
        }
        if let Some(dt) = self.dt_high {
            p.dt_high = dt;
        }
        if let Some(dt_low) = self.dt_low {
            let factor = integer_ratio(dt_low, p.dt_high, "dt_low / dt_high")?;
            if factor != 5 && !self.allow_any_low_ratio {
                return Err(Error::config(format!(
                    "dt_low: must be 5 x dt_high (got ratio {factor}); set allow_any_low_ratio to override"
                )));
            }
            p.low_factor = factor;
        }
        p.ic = self.ic;
        p.validate()?;
        Ok(p)
    }

    pub fn deeponet_config(&self, sensors: usize, period: f64) -> DeepOnetConfig {
        let mut c = match self.model.widths {
            WidthPreset::Full => DeepOnetConfig::full(sensors),
            WidthPreset::Desk => DeepOnetConfig::desk(sensors),
        };
        if self.model.periodic {
            c.periodic = Some(period);
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.problem()?;
        self.integrator.validate()?;
        self.training.validate()?;
        if self.model.lstm_hidden == 0 {
            return Err(Error::config("model.lstm_hidden: must be at least 1"));
        }
        if self.n_test == 0 {
            return Err(Error::config("n_test: must be at least 1"));
        }
        Ok(())
    }

    /// Rejects variant/data combinations that cannot be trained.
    pub fn check_variant(&self, variant: Variant) -> Result<()> {
        if variant.uses_high() && self.n_high < 2 {
            return Err(Error::config(format!(
                "n_high: {variant} needs at least 2 high-resolution samples"
            )));
        }
        if variant.uses_low() && self.n_low < 2 {
            return Err(Error::config(format!(
                "n_low: {variant} needs at least 2 low-resolution samples"
            )));
        }
        Ok(())
    }
}

/// Overwrites `base` with `over`, recursing into objects.
fn merge_json(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge_json(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub const HIGH_FILE: &str = "high.bin";
pub const LOW_FILE: &str = "low.bin";
pub const TEST_FILE: &str = "test.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub equation: EquationKind,
    pub problem: Problem,
    pub n_high: usize,
    pub n_low: usize,
    pub n_test: usize,
    /// File name to SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Generates the high-resolution, low-resolution and test files plus a
/// manifest. The training pool holds `max(n_high, n_low)` trajectories: the
/// high file keeps the first `n_high`, the low file the first `n_low`
/// subsampled in time.
pub fn cmd_generate(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let problem = cfg.problem()?;
    let pool_size = cfg.n_high.max(cfg.n_low);
    log::info!(
        "generating {} {pool_size} training and {} test trajectories",
        cfg.equation,
        cfg.n_test
    );
    let pool = generate_set(&problem, &cfg.integrator, seed, Stream::Pool, pool_size)?;
    let high = pool.head(cfg.n_high);
    let low = downsample_time(&pool.head(cfg.n_low), problem.low_factor)?;
    let test = generate_set(&problem, &cfg.integrator, seed, Stream::Test, cfg.n_test)?;
    let mut files = BTreeMap::new();
    for (name, set) in [(HIGH_FILE, &high), (LOW_FILE, &low), (TEST_FILE, &test)] {
        let bytes = encode_dataset(set)?;
        files.insert(name.to_string(), sha256_hex(&bytes));
        write_atomic(&out.join(name), &bytes)?;
    }
    let manifest = Manifest {
        seed,
        equation: cfg.equation,
        problem,
        n_high: cfg.n_high,
        n_low: cfg.n_low,
        n_test: cfg.n_test,
        files,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(data_dir: &Path) -> Result<Manifest> {
    let path = data_dir.join(MANIFEST_FILE);
    let m: Manifest = serde_json::from_str(&read_text(&path)?)?;
    Ok(m)
}

/// Reads a dataset file listed in the manifest, refusing it if its checksum
/// differs.
pub fn load_checked(data_dir: &Path, manifest: &Manifest, name: &str) -> Result<TrajectorySet> {
    let path = data_dir.join(name);
    let expected = manifest
        .files
        .get(name)
        .ok_or_else(|| Error::config(format!("manifest does not list {name}")))?;
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let actual = sha256_hex(&bytes);
    if &actual != expected {
        return Err(Error::Checksum {
            path,
            expected: expected.clone(),
            actual,
        });
    }
    decode_dataset(&bytes)
}

/// A trained model with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub variant: Variant,
    pub seed: u64,
    pub equation: EquationKind,
    pub n_high: usize,
    pub n_low: usize,
    pub surrogate: Surrogate,
}

impl ModelFile {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read_text(path)?)?)
    }
}

pub fn model_path(dir: &Path, variant: Variant, seed: u64) -> PathBuf {
    dir.join(format!("{variant}_seed{seed}.model.json"))
}

pub fn log_path(dir: &Path, variant: Variant, seed: u64) -> PathBuf {
    dir.join(format!("{variant}_seed{seed}.log.csv"))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: ModelFile,
    pub log: TrainingLog,
    pub model_path: PathBuf,
    pub log_path: PathBuf,
}

fn split_indices(n: usize, seed: u64, val_fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    let s = split_dataset(
        n,
        &SplitSpec {
            seed,
            val_fraction,
            test_size: 0,
        },
    )?;
    Ok((s.train, s.val))
}

/// Trains `variant` with `seed` on the datasets in `data_dir` and writes the
/// model and log to `out`.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    variant: Variant,
    seed: u64,
    data_dir: &Path,
    out: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    cfg.check_variant(variant)?;
    let manifest = read_manifest(data_dir)?;
    if manifest.equation != cfg.equation {
        return Err(Error::config(format!(
            "datasets in {} are for {}, config asks for {}",
            data_dir.display(),
            manifest.equation,
            cfg.equation
        )));
    }
    let take = |name: &str, n: usize| -> Result<Option<TrajectorySet>> {
        if n == 0 {
            return Ok(None);
        }
        let set = load_checked(data_dir, &manifest, name)?;
        if set.len() < n {
            return Err(Error::config(format!(
                "{name} holds {} samples, config asks for {n}",
                set.len()
            )));
        }
        Ok(Some(set.head(n)))
    };
    let high = if variant.uses_high() {
        take(HIGH_FILE, cfg.n_high)?
    } else {
        None
    };
    let low = if variant.uses_low() {
        take(LOW_FILE, cfg.n_low)?
    } else {
        None
    };

    let mut training = cfg.training;
    training.seed = seed;
    let high_split = high
        .as_ref()
        .map(|s| split_indices(s.len(), seed, training.val_fraction))
        .transpose()?;
    let low_split = low
        .as_ref()
        .map(|s| split_indices(s.len(), seed ^ 0x9e37_79b9, training.val_fraction))
        .transpose()?;

    // scalers see only the training parts of the sets this variant uses
    let mut initial = Vec::new();
    let mut values = Vec::new();
    for (set, split) in [(&high, &high_split), (&low, &low_split)] {
        if let (Some(set), Some((train, _))) = (set, split) {
            for &s in train {
                initial.extend_from_slice(set.initial(s));
                values.extend_from_slice(set.sample(s));
            }
        }
    }
    let branch_scaler = Scaler::fit(ScalerKind::Standard, FitDomain::BranchInput, &initial)?;
    let target_scaler = Scaler::fit(ScalerKind::Standard, FitDomain::Target, &values)?;

    let build = |set: &Option<TrajectorySet>, idx: Option<&Vec<usize>>| -> Result<Option<GridData>> {
        match (set, idx) {
            (Some(set), Some(idx)) => Ok(Some(GridData::from_set(
                set,
                idx,
                &branch_scaler,
                &target_scaler,
            )?)),
            _ => Ok(None),
        }
    };
    let splits = DataSplits {
        high_train: build(&high, high_split.as_ref().map(|s| &s.0))?,
        high_val: build(&high, high_split.as_ref().map(|s| &s.1))?,
        low_train: build(&low, low_split.as_ref().map(|s| &s.0))?,
        low_val: build(&low, low_split.as_ref().map(|s| &s.1))?,
    };

    let reference = high.as_ref().or(low.as_ref()).expect("variant uses some data");
    let problem = &manifest.problem;
    let n_x = reference.n_x();
    let t_all: Vec<f64> = [0.0, problem.t_final].to_vec();
    let trunk_scaling = TrunkScaling::fit(&reference.xs, &t_all)?;
    let don_config = cfg.deeponet_config(n_x, problem.grid.period);
    let mut init = rng::stream(seed, Stream::Init, 0);
    let mut log = TrainingLog::default();
    let network = match variant {
        Variant::DonLow | Variant::DonHigh | Variant::DonMulti => {
            let mut net = Network::deeponet(don_config, trunk_scaling, &mut init)?;
            let selector = match variant {
                Variant::DonLow => DataSelector::Low,
                Variant::DonHigh => DataSelector::High,
                _ => DataSelector::Both,
            };
            train_on(&mut net, Stage::DonPretrain, selector, &splits, &training, &mut log)?;
            net
        }
        Variant::LstmHigh => {
            let n_t = high.as_ref().expect("high data").n_t();
            let mut net = Network::lstm(n_x, n_t, n_x, cfg.model.lstm_hidden, &mut init);
            train_on(
                &mut net,
                Stage::LstmOnly,
                DataSelector::High,
                &splits,
                &training,
                &mut log,
            )?;
            net
        }
        Variant::DonlstmHigh | Variant::DonlstmMulti => {
            let net = Network::deeponet(don_config, trunk_scaling, &mut init)?;
            let step1 = if variant == Variant::DonlstmMulti {
                DataSelector::Low
            } else {
                DataSelector::High
            };
            run_three_stage(
                net,
                step1,
                &splits,
                &training,
                cfg.model.lstm_hidden,
                &mut log,
            )?
            .network
        }
    };
    let model = ModelFile {
        variant,
        seed,
        equation: cfg.equation,
        n_high: if variant.uses_high() { cfg.n_high } else { 0 },
        n_low: if variant.uses_low() { cfg.n_low } else { 0 },
        surrogate: Surrogate {
            variant: variant.name().to_string(),
            network,
            branch_scaler,
            target_scaler,
        },
    };
    let model_path = model_path(out, variant, seed);
    let log_path = log_path(out, variant, seed);
    write_json(&model_path, &model)?;
    write_atomic(&log_path, log.to_csv().as_bytes())?;
    Ok(TrainOutcome {
        model,
        log,
        model_path,
        log_path,
    })
}

/// Scores every model against the test file and appends one CSV row per
/// model to `csv` (writing the header first if the file is new).
pub fn cmd_evaluate(data_dir: &Path, models: &[PathBuf], csv: &Path) -> Result<Vec<MetricReport>> {
    let manifest = read_manifest(data_dir)?;
    let test = load_checked(data_dir, &manifest, TEST_FILE)?;
    let mut reports = Vec::new();
    for path in models {
        let model = ModelFile::read(path)?;
        if model.equation != test.equation {
            return Err(Error::config(format!(
                "{} was trained on {}, test set is {}",
                path.display(),
                model.equation,
                test.equation
            )));
        }
        let samples = evaluate_model(&model.surrogate, &test)?;
        reports.push(MetricReport {
            model: model.variant.name().to_string(),
            resolution: test.resolution.name().to_string(),
            seed: model.seed,
            n_high: model.n_high,
            n_low: model.n_low,
            samples,
        });
    }
    let mut text = if csv.exists() {
        read_text(csv)?
    } else {
        format!("{CSV_HEADER}\n")
    };
    for r in &reports {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    write_atomic(csv, text.as_bytes())?;
    Ok(reports)
}
