//! Scenario sweeps, the reference catalog, CSV output and scenario files.
//!
//! A scenario fixes the array geometry, precoder, combiner and Monte Carlo
//! sizes, and sweeps either the SNR or (at a fixed SNR) the CSIT error
//! variance. Noise power is 1, so the SNR in dB sets `E_tr`.
//!
//! Scenario files are flat `key = value` text with `#` comments:
//!
//! ```text
//! name = fig3-rbd-rs-mmsec
//! n_tx = 12
//! users = 2,2,2,2,2,2
//! csit = fixed:0.1            # perfect | fixed:<var> | snr-scaled:<xi>,<alpha>
//! precoder = rbd              # rbd | mmse
//! combiner = mmsec            # none | minmax | mrc | mmsec
//! rate_splitting = true
//! sweep = snr:0,5,10,15,20,25,30   # or error-var@<snr dB>:<var>,<var>,...
//! channels = 200
//! errors = 20
//! grid = 41
//! seed = 1
//! ```
//!
//! `streams`, `noise_var` and `aggregation` are optional.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::combining::CombinerKind;
use crate::error::{Error, Result};
use crate::model::{CsitError, SystemConfig};
use crate::precoding::{CommonPowerGrid, PrecoderKind};
use crate::rates::{ergodic_sum_rate, CommonAggregation, EsrEstimate, EsrSetup};

/// Desk-scale Monte Carlo sizes.
pub const DESK_CHANNELS: usize = 200;
pub const DESK_ERRORS: usize = 20;
/// Full-scale Monte Carlo sizes.
pub const PAPER_CHANNELS: usize = 1000;
pub const PAPER_ERRORS: usize = 100;
pub const DEFAULT_GRID: usize = 41;
pub const DEFAULT_SEED: u64 = 1;
/// Suffix selecting the full-scale version of a catalog entry.
pub const PAPER_SUFFIX: &str = ".paper";

#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    /// SNR points in dB.
    Snr(Vec<f64>),
    /// CSIT error variances at a fixed SNR.
    ErrorVar { snr_db: f64, variances: Vec<f64> },
}

impl Sweep {
    pub fn points(&self) -> &[f64] {
        match self {
            Sweep::Snr(p) => p,
            Sweep::ErrorVar { variances, .. } => variances,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Sweep::Snr(_) => "snr_db",
            Sweep::ErrorVar { .. } => "error_var",
        }
    }
}

pub fn default_snr_grid() -> Vec<f64> {
    (0..=6).map(|i| 5.0 * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    /// Geometry, noise and CSIT error model; `total_power` (and, for an error
    /// variance sweep, `csit_error`) is set per sweep point.
    pub config: SystemConfig,
    pub precoder: PrecoderKind,
    pub combiner: CombinerKind,
    /// Off forces `a_c = 0`.
    pub rs_enabled: bool,
    pub sweep: Sweep,
    pub n_channels: usize,
    pub n_errors: usize,
    /// Points of the common-power search.
    pub grid_size: usize,
    pub seed: u64,
    pub aggregation: CommonAggregation,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if !self.rs_enabled && self.combiner != CombinerKind::None {
            return Err(Error::config(format!(
                "{}: a combiner needs rate splitting",
                self.name
            )));
        }
        if self.n_channels == 0 || self.n_errors == 0 {
            return Err(Error::config("channel and error counts must be at least 1"));
        }
        if self.rs_enabled && self.grid_size < 2 {
            return Err(Error::config("power grid needs at least 2 points"));
        }
        let pts = self.sweep.points();
        if pts.windows(2).any(|w| !(w[0] < w[1])) || pts.iter().any(|p| !p.is_finite()) {
            return Err(Error::config("sweep points must be finite and strictly increasing"));
        }
        if let Sweep::ErrorVar { snr_db, variances } = &self.sweep {
            if !snr_db.is_finite() || variances.iter().any(|v| *v < 0.0) {
                return Err(Error::config("error-variance sweep needs a finite SNR and nonnegative variances"));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> CommonPowerGrid {
        if self.rs_enabled {
            CommonPowerGrid::Uniform(self.grid_size)
        } else {
            CommonPowerGrid::off()
        }
    }

    /// Operating point for sweep value `value`.
    pub fn point_config(&self, value: f64) -> SystemConfig {
        let mut cfg = self.config.clone();
        let snr_db = match &self.sweep {
            Sweep::Snr(_) => value,
            Sweep::ErrorVar { snr_db, .. } => {
                cfg.csit_error = CsitError::FixedVariance(value);
                *snr_db
            }
        };
        cfg.total_power = 10f64.powf(snr_db / 10.0) * cfg.noise_var;
        cfg
    }

    pub fn esr_setup(&self, value: f64) -> EsrSetup {
        EsrSetup {
            config: self.point_config(value),
            precoder: self.precoder,
            combiner: self.combiner,
            grid: self.grid(),
            n_channels: self.n_channels,
            n_errors: self.n_errors,
            seed: self.seed,
            aggregation: self.aggregation,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: f64,
    pub esr: f64,
    pub common: f64,
    pub private: f64,
    pub std_error: f64,
    pub seconds: f64,
    pub total_power: f64,
    /// Largest expected transmit power over the outer draws.
    pub max_transmit_power: f64,
    /// Mean `a_c^2 / E_tr` chosen by the search.
    pub mean_common_fraction: f64,
}

impl SweepPoint {
    fn from_estimate(value: f64, total_power: f64, est: &EsrEstimate, seconds: f64) -> Self {
        let n = est.outcomes.len() as f64;
        SweepPoint {
            value,
            esr: est.esr,
            common: est.common,
            private: est.private,
            std_error: est.std_error,
            seconds,
            total_power,
            max_transmit_power: est
                .outcomes
                .iter()
                .map(|o| o.transmit_power)
                .fold(0.0, f64::max),
            mean_common_fraction: est
                .outcomes
                .iter()
                .map(|o| o.alloc.common_power() / total_power)
                .sum::<f64>()
                / n,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub scenario: String,
    pub sweep_label: &'static str,
    pub points: Vec<SweepPoint>,
}

/// Runs every sweep point. `workers` sizes a dedicated thread pool; `None`
/// uses the global one. The numbers do not depend on the worker count.
pub fn run_scenario(scenario: &Scenario, workers: Option<usize>) -> Result<SweepResult> {
    scenario.validate()?;
    let run = || -> Result<SweepResult> {
        let mut points = Vec::with_capacity(scenario.sweep.points().len());
        for &value in scenario.sweep.points() {
            let start = Instant::now();
            let setup = scenario.esr_setup(value);
            let est = ergodic_sum_rate(&setup)?;
            points.push(SweepPoint::from_estimate(
                value,
                setup.config.total_power,
                &est,
                start.elapsed().as_secs_f64(),
            ));
            log::info!("{} {} = {value}: esr {:.4}", scenario.name, scenario.sweep.label(), est.esr);
        }
        Ok(SweepResult {
            scenario: scenario.name.clone(),
            sweep_label: scenario.sweep.label(),
            points,
        })
    };
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

pub const CSV_HEADER: &str = "sweep_value,esr,common,private,stderr,seconds";

/// CSV text; with `timing` off the `seconds` column is written as zero so the
/// file depends only on the inputs.
pub fn csv_string(result: &SweepResult, timing: bool) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for p in &result.points {
        let seconds = if timing { p.seconds } else { 0.0 };
        writeln!(
            out,
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            p.value, p.esr, p.common, p.private, p.std_error, seconds
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn emit_csv(result: &SweepResult, path: &Path, timing: bool) -> Result<()> {
    std::fs::write(path, csv_string(result, timing)).map_err(|e| Error::io(path, e))
}

struct Variant {
    suffix: &'static str,
    precoder: PrecoderKind,
    rs: bool,
    combiner: CombinerKind,
}

const VARIANTS: [Variant; 7] = [
    Variant { suffix: "mmse", precoder: PrecoderKind::Mmse, rs: false, combiner: CombinerKind::None },
    Variant { suffix: "rbd", precoder: PrecoderKind::Rbd, rs: false, combiner: CombinerKind::None },
    Variant { suffix: "mmse-rs", precoder: PrecoderKind::Mmse, rs: true, combiner: CombinerKind::None },
    Variant { suffix: "rbd-rs", precoder: PrecoderKind::Rbd, rs: true, combiner: CombinerKind::None },
    Variant { suffix: "rbd-rs-minmax", precoder: PrecoderKind::Rbd, rs: true, combiner: CombinerKind::MinMax },
    Variant { suffix: "rbd-rs-mrc", precoder: PrecoderKind::Rbd, rs: true, combiner: CombinerKind::Mrc },
    Variant { suffix: "rbd-rs-mmsec", precoder: PrecoderKind::Rbd, rs: true, combiner: CombinerKind::Mmsec },
];

fn figure_setups() -> [(&'static str, CsitError, Sweep); 3] {
    [
        ("fig3", CsitError::FixedVariance(0.1), Sweep::Snr(default_snr_grid())),
        (
            "fig4",
            CsitError::FixedVariance(0.1),
            Sweep::ErrorVar { snr_db: 20.0, variances: vec![0.05, 0.1, 0.2, 0.3] },
        ),
        ("fig5", CsitError::SnrScaled { xi: 0.94, alpha: 0.6 }, Sweep::Snr(default_snr_grid())),
    ]
}

/// Figure presets (`fig3`, `fig4`, `fig5`) for every precoder/combiner
/// variant, at desk scale and, with the `.paper` suffix, at full scale.
/// 12 transmit antennas, 6 users with 2 antennas each.
pub fn reference_scenarios() -> Vec<Scenario> {
    let mut out = Vec::new();
    for (fig, csit, sweep) in figure_setups() {
        for v in &VARIANTS {
            for (suffix, channels, errors) in
                [("", DESK_CHANNELS, DESK_ERRORS), (PAPER_SUFFIX, PAPER_CHANNELS, PAPER_ERRORS)]
            {
                out.push(Scenario {
                    name: format!("{fig}-{}{suffix}", v.suffix),
                    config: SystemConfig::new(12, vec![2; 6], 1.0, 1.0, csit)
                        .expect("reference geometry is valid"),
                    precoder: v.precoder,
                    combiner: v.combiner,
                    rs_enabled: v.rs,
                    sweep: sweep.clone(),
                    n_channels: channels,
                    n_errors: errors,
                    grid_size: DEFAULT_GRID,
                    seed: DEFAULT_SEED,
                    aggregation: CommonAggregation::MeanOfMin,
                });
            }
        }
    }
    out
}

pub fn find_scenario(name: &str) -> Option<Scenario> {
    reference_scenarios().into_iter().find(|s| s.name == name)
}

fn join(values: &[impl ToString]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Scenario file text; parses back to the same scenario.
pub fn scenario_to_string(s: &Scenario) -> String {
    let csit = match s.config.csit_error {
        CsitError::Perfect => "perfect".to_string(),
        CsitError::FixedVariance(v) => format!("fixed:{v}"),
        CsitError::SnrScaled { xi, alpha } => format!("snr-scaled:{xi},{alpha}"),
    };
    let sweep = match &s.sweep {
        Sweep::Snr(p) => format!("snr:{}", join(p)),
        Sweep::ErrorVar { snr_db, variances } => format!("error-var@{snr_db}:{}", join(variances)),
    };
    let mut out = String::new();
    let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").expect("writing to a String cannot fail");
    kv("name", s.name.clone());
    kv("n_tx", s.config.n_tx.to_string());
    kv("users", join(&s.config.users));
    kv("streams", join(&s.config.streams_per_user));
    kv("noise_var", s.config.noise_var.to_string());
    kv("csit", csit);
    kv("precoder", s.precoder.name().to_string());
    kv("combiner", s.combiner.name().to_string());
    kv("rate_splitting", s.rs_enabled.to_string());
    kv("sweep", sweep);
    kv("channels", s.n_channels.to_string());
    kv("errors", s.n_errors.to_string());
    kv("grid", s.grid_size.to_string());
    kv("seed", s.seed.to_string());
    kv("aggregation", s.aggregation.name().to_string());
    out
}

fn parse_list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    v.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| format!("bad list entry {x:?}")))
        .collect()
}

fn parse_value<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>().map_err(|_| format!("bad value {v:?}"))
}

fn parse_csit(v: &str) -> std::result::Result<CsitError, String> {
    if v == "perfect" {
        return Ok(CsitError::Perfect);
    }
    if let Some(x) = v.strip_prefix("fixed:") {
        return Ok(CsitError::FixedVariance(parse_value(x.trim())?));
    }
    if let Some(x) = v.strip_prefix("snr-scaled:") {
        let p: Vec<f64> = parse_list(x)?;
        if let [xi, alpha] = p[..] {
            return Ok(CsitError::SnrScaled { xi, alpha });
        }
        return Err("snr-scaled takes xi,alpha".into());
    }
    Err(format!("unknown CSIT model {v:?}"))
}

fn parse_sweep(v: &str) -> std::result::Result<Sweep, String> {
    if let Some(x) = v.strip_prefix("snr:") {
        return Ok(Sweep::Snr(parse_list(x)?));
    }
    if let Some(x) = v.strip_prefix("error-var@") {
        let (snr, vars) = x.split_once(':').ok_or("error-var sweep is error-var@<snr dB>:<list>")?;
        return Ok(Sweep::ErrorVar {
            snr_db: parse_value(snr.trim())?,
            variances: parse_list(vars)?,
        });
    }
    Err(format!("unknown sweep {v:?}"))
}

/// Parses scenario file text; `path` is only used in error messages.
pub fn parse_scenario(text: &str, path: &Path) -> Result<Scenario> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut name = None;
    let mut n_tx = None;
    let mut users: Option<Vec<usize>> = None;
    let mut streams: Option<Vec<usize>> = None;
    let mut noise_var = 1.0;
    let mut csit = None;
    let mut precoder = None;
    let mut combiner = CombinerKind::None;
    let mut rs = None;
    let mut sweep = None;
    let mut channels = DESK_CHANNELS;
    let mut errors = DESK_ERRORS;
    let mut grid = DEFAULT_GRID;
    let mut seed = DEFAULT_SEED;
    let mut aggregation = CommonAggregation::MeanOfMin;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line_no, "expected key = value".into()))?;
        let (key, value) = (key.trim(), value.trim());
        let res: std::result::Result<(), String> = (|| {
            match key {
                "name" => name = Some(value.to_string()),
                "n_tx" => n_tx = Some(parse_value(value)?),
                "users" => users = Some(parse_list(value)?),
                "streams" => streams = Some(parse_list(value)?),
                "noise_var" => noise_var = parse_value(value)?,
                "csit" => csit = Some(parse_csit(value)?),
                "precoder" => {
                    precoder = Some(PrecoderKind::parse(value).ok_or(format!("unknown precoder {value:?}"))?)
                }
                "combiner" => combiner = CombinerKind::parse(value).ok_or(format!("unknown combiner {value:?}"))?,
                "rate_splitting" => rs = Some(parse_value(value)?),
                "sweep" => sweep = Some(parse_sweep(value)?),
                "channels" => channels = parse_value(value)?,
                "errors" => errors = parse_value(value)?,
                "grid" => grid = parse_value(value)?,
                "seed" => seed = parse_value(value)?,
                "aggregation" => {
                    aggregation = CommonAggregation::parse(value).ok_or(format!("unknown aggregation {value:?}"))?
                }
                _ => return Err(format!("unknown key {key:?}")),
            }
            Ok(())
        })();
        res.map_err(|m| err(line_no, m))?;
    }

    let missing = |k: &str| err(0, format!("missing key {k:?}"));
    let users = users.ok_or_else(|| missing("users"))?;
    let config = SystemConfig::with_streams(
        n_tx.ok_or_else(|| missing("n_tx"))?,
        users.clone(),
        streams.unwrap_or(users),
        1.0,
        noise_var,
        csit.ok_or_else(|| missing("csit"))?,
    )?;
    let scenario = Scenario {
        name: name.unwrap_or_else(|| {
            path.file_stem()
                .map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned())
        }),
        config,
        precoder: precoder.ok_or_else(|| missing("precoder"))?,
        combiner,
        rs_enabled: rs.ok_or_else(|| missing("rate_splitting"))?,
        sweep: sweep.ok_or_else(|| missing("sweep"))?,
        n_channels: channels,
        n_errors: errors,
        grid_size: grid,
        seed,
        aggregation,
    };
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text, path)
}

/// A catalog name, or else a path to a scenario file.
pub fn resolve_scenario(name_or_path: &str) -> Result<Scenario> {
    if let Some(s) = find_scenario(name_or_path) {
        return Ok(s);
    }
    let path = PathBuf::from(name_or_path);
    if path.exists() {
        return load_scenario(&path);
    }
    Err(Error::InvalidArgument(format!(
        "{name_or_path:?} is neither a catalog scenario nor a file"
    )))
}
