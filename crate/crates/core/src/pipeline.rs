//! Config-driven end-to-end run: layout, trap solution, cooling, heating
//! thermometry and noise conversion, with a hashed artifact manifest.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::constants::{self, ConstantsTable, TWO_PI};
use crate::cooling::{
    bose_occupation, lamb_dicke, omega0_for_pi_time, run_cooling, thermal_distribution_auto, CoolingRun,
    CoolingSequence, FockDistribution, RampProfile, DEFAULT_N_MAX, DEFAULT_PI_TIME,
};
use crate::electrostatics::{build_basis, GapTreatment, VoltageSet};
use crate::geometry::{Profile, TrapLayout};
use crate::io::{self, NbarRow, PopulationRow, RateJson, ScanRow};
use crate::noise::{NoiseMeasurement, NoiseModel};
use crate::pseudopotential::{solve_trap, IonSpecies, TrapSolution};
use crate::stats::Estimate;
use crate::thermometry::{measure_heating_rate, HeatingMeasurement, ScanSettings};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

fn default_species() -> String {
    "Sr88".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_species")]
    pub species: String,
    pub trap: TrapConfig,
    #[serde(default)]
    pub cooling: Option<CoolingConfig>,
    #[serde(default)]
    pub heating: Option<HeatingConfig>,
    #[serde(default)]
    pub thermometry: Option<ThermometryConfig>,
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapConfig {
    #[serde(default)]
    pub profile: Option<Profile>,
    #[serde(default)]
    pub layout_file: Option<PathBuf>,
    #[serde(default)]
    pub gap_treatment: GapTreatment,
    #[serde(default = "VoltageSet::operating_point")]
    pub voltages: VoltageSet,
}

fn d_pulses() -> usize {
    150
}
fn d_t_start() -> f64 {
    10e-6
}
fn d_t_end() -> f64 {
    25e-6
}
fn d_pi_time() -> f64 {
    DEFAULT_PI_TIME
}
fn d_doppler() -> f64 {
    0.5e-3
}
fn d_n_max() -> usize {
    DEFAULT_N_MAX
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoolingConfig {
    #[serde(default = "d_pulses")]
    pub pulses: usize,
    #[serde(default = "d_t_start")]
    pub t_start_s: f64,
    #[serde(default = "d_t_end")]
    pub t_end_s: f64,
    #[serde(default)]
    pub ramp: RampProfile,
    /// n = 1 red-sideband π time that fixes Ω₀.
    #[serde(default = "d_pi_time")]
    pub pi_time_s: f64,
    #[serde(default = "d_doppler")]
    pub doppler_temperature_k: f64,
    #[serde(default = "d_n_max")]
    pub n_max: usize,
    /// Angle between the laser k-vector and the mode axis.
    #[serde(default)]
    pub projection_angle_deg: f64,
    /// Overrides the solved axial frequency.
    #[serde(default)]
    pub secular_frequency_hz: Option<f64>,
    #[serde(default)]
    pub heating_during_cooling: bool,
}

impl Default for CoolingConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all cooling fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatingConfig {
    /// quanta/s
    #[serde(default)]
    pub ndot: Option<f64>,
    #[serde(default)]
    pub noise_model: Option<NoiseModel>,
}

fn d_delays() -> Vec<f64> {
    vec![0.0, 0.01, 0.02, 0.04]
}
fn d_shots() -> u32 {
    100
}
fn d_points() -> usize {
    41
}
fn d_linewidth() -> f64 {
    5e3
}
fn d_span() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermometryConfig {
    #[serde(default = "d_delays")]
    pub delays_s: Vec<f64>,
    #[serde(default = "d_shots")]
    pub shots: u32,
    #[serde(default = "d_points")]
    pub points: usize,
    /// Gaussian sigma of the broadened line, Hz.
    #[serde(default = "d_linewidth")]
    pub linewidth_hz: f64,
    /// Scan half-width in linewidths.
    #[serde(default = "d_span")]
    pub span_linewidths: f64,
    /// Defaults to the blue-sideband π time at n = 0.
    #[serde(default)]
    pub probe_time_s: Option<f64>,
}

fn d_temperature() -> f64 {
    6.0
}
fn d_normalize() -> f64 {
    1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "d_temperature")]
    pub temperature_k: f64,
    #[serde(default)]
    pub label: String,
    #[serde(default = "d_normalize")]
    pub normalize_hz: f64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Load and resolve `layout_file` relative to the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let (Some(f), Some(dir)) = (cfg.trap.layout_file.as_mut(), path.parent()) {
            if f.is_relative() {
                *f = dir.join(&*f);
            }
        }
        Ok(cfg)
    }

    /// Fill in defaults for sections implied by others, so the manifest
    /// records every value that was used.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        if c.thermometry.is_some() && c.cooling.is_none() {
            c.cooling = Some(CoolingConfig::default());
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        self.species
            .parse::<IonSpecies>()
            .map_err(|e| Error::Config(e.to_string()))?;
        match (&self.trap.profile, &self.trap.layout_file) {
            (Some(_), Some(_)) => return bad("trap: give either `profile` or `layout_file`, not both".into()),
            (None, None) => return bad("trap: one of `profile` or `layout_file` is required".into()),
            (None, Some(f)) if !f.is_file() => {
                return bad(format!("trap.layout_file `{}` does not exist", f.display()))
            }
            _ => {}
        }
        self.trap
            .voltages
            .validate()
            .map_err(|e| Error::Config(format!("trap.voltages: {e}")))?;
        if let Some(c) = &self.cooling {
            if c.pulses == 0 || !(c.t_start_s > 0.0) || !(c.t_end_s > 0.0) || !(c.pi_time_s > 0.0) {
                return bad("cooling: pulses and durations must be > 0".into());
            }
            if !(c.doppler_temperature_k >= 0.0) || c.n_max < 2 {
                return bad("cooling: need doppler_temperature_k >= 0 and n_max >= 2".into());
            }
            if let Some(f) = c.secular_frequency_hz {
                if !(f > 0.0) {
                    return bad("cooling.secular_frequency_hz must be > 0".into());
                }
            }
            if c.heating_during_cooling && self.heating.is_none() {
                return bad("cooling.heating_during_cooling needs a `heating` section".into());
            }
        }
        if let Some(h) = &self.heating {
            match (h.ndot, &h.noise_model) {
                (Some(n), None) if n >= 0.0 && n.is_finite() => {}
                (Some(_), None) => return bad("heating.ndot must be >= 0".into()),
                (None, Some(m)) => m.validate().map_err(|e| Error::Config(format!("heating.noise_model: {e}")))?,
                _ => return bad("heating: give exactly one of `ndot` or `noise_model`".into()),
            }
        }
        if let Some(t) = &self.thermometry {
            if self.seed.is_none() {
                return bad("`seed` is required when thermometry (a stochastic stage) is enabled".into());
            }
            if self.heating.is_none() {
                return bad("thermometry needs a `heating` section".into());
            }
            if t.delays_s.iter().any(|d| !(*d >= 0.0)) {
                return bad("thermometry.delays_s must be >= 0".into());
            }
            let mut distinct = t.delays_s.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            if distinct.len() < 2 {
                return bad("thermometry needs at least 2 distinct delays".into());
            }
            if t.shots == 0 || t.points < 4 || !(t.linewidth_hz > 0.0) || !(t.span_linewidths > 0.0) {
                return bad("thermometry: need shots >= 1, points >= 4, positive linewidth and span".into());
            }
            if let Some(p) = t.probe_time_s {
                if !(p > 0.0) {
                    return bad("thermometry.probe_time_s must be > 0".into());
                }
            }
        }
        if let Some(n) = &self.noise {
            if self.heating.is_none() {
                return bad("noise needs a `heating` section".into());
            }
            if !(n.temperature_k >= 0.0) || !(n.normalize_hz > 0.0) {
                return bad("noise: need temperature_k >= 0 and normalize_hz > 0".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub stages: Vec<String>,
    pub files: Vec<ManifestFile>,
    pub config: ExperimentConfig,
    pub constants: ConstantsTable,
    pub created_unix_s: u64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes files into one directory and remembers them for the manifest.
struct Outputs {
    dir: PathBuf,
    files: Vec<ManifestFile>,
}

impl Outputs {
    fn record(&mut self, name: &str) -> Result<()> {
        let path = self.dir.join(name);
        let bytes = std::fs::metadata(&path)?.len();
        self.files.push(ManifestFile {
            path: name.into(),
            sha256: io::sha256_file(&path)?,
            bytes,
        });
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, v: &T) -> Result<()> {
        io::write_json(&self.dir.join(name), v)?;
        self.record(name)
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        io::write_csv(&self.dir.join(name), rows)?;
        self.record(name)
    }
}

/// In-memory results of a run.
#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub manifest: Manifest,
    pub layout: TrapLayout,
    pub solution: TrapSolution,
    pub cooling: Option<CoolingRun>,
    pub eta: Option<f64>,
    pub ndot: Option<f64>,
    pub heating: Option<HeatingMeasurement>,
    pub noise: Option<NoiseMeasurement>,
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name.into(),
        source: Box::new(e),
    })
}

/// Run every configured stage and write artifacts to `out_dir`.
///
/// Validation happens before anything is computed or written. On a stage
/// failure the files written so far stay on disk and the manifest is marked
/// partial.
pub fn run_pipeline(config: &ExperimentConfig, out_dir: &Path) -> Result<PipelineResult> {
    config.validate()?;
    let config = config.resolved();
    std::fs::create_dir_all(out_dir)?;
    let mut out = Outputs {
        dir: out_dir.to_path_buf(),
        files: Vec::new(),
    };
    let mut stages = Vec::new();
    let res = run_stages(&config, &mut out, &mut stages);
    let (status, failed_stage, error) = match &res {
        Ok(_) => (RunStatus::Complete, None, None),
        Err(Error::Stage { stage, source }) => (RunStatus::Partial, Some(stage.clone()), Some(source.to_string())),
        Err(e) => (RunStatus::Partial, None, Some(e.to_string())),
    };
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        status,
        failed_stage,
        error,
        stages,
        files: out.files.clone(),
        config: config.clone(),
        constants: constants::table(),
        created_unix_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    io::write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    let mut r = res?;
    r.manifest = manifest;
    Ok(r)
}

fn run_stages(cfg: &ExperimentConfig, out: &mut Outputs, stages: &mut Vec<String>) -> Result<PipelineResult> {
    let species: IonSpecies = cfg.species.parse()?;

    let layout = stage(
        "layout",
        match (&cfg.trap.profile, &cfg.trap.layout_file) {
            (Some(p), _) => p.layout(),
            (None, Some(f)) => std::fs::read_to_string(f)
                .map_err(Error::from)
                .and_then(|s| TrapLayout::from_json(&s)),
            (None, None) => Err(Error::Config("no trap layout".into())),
        },
    )?;
    stage("layout", out.json("layout.json", &layout))?;
    stages.push("layout".into());

    let solution = stage("solve", {
        let basis = build_basis(&layout, cfg.trap.gap_treatment);
        solve_trap(&basis, &cfg.trap.voltages, &species)
    })?;
    stage("solve", out.json("solution.json", &solution))?;
    stages.push("solve".into());

    let d = layout.characteristic_size;
    let ndot = match &cfg.heating {
        None => None,
        Some(h) => Some(match (h.ndot, &h.noise_model) {
            (Some(n), _) => n,
            (None, Some(m)) => stage(
                "heating",
                m.heating_rate(d, mode_omega(cfg, &solution), &species),
            )?,
            (None, None) => unreachable!("validated"),
        }),
    };

    let mut result = PipelineResult {
        manifest: empty_manifest(cfg),
        layout,
        solution,
        cooling: None,
        eta: None,
        ndot,
        heating: None,
        noise: None,
    };

    let Some(cc) = &cfg.cooling else {
        return noise_stage(cfg, &species, out, stages, result);
    };
    let omega = mode_omega(cfg, &result.solution);
    let (run, eta, omega0) = stage("cooling", simulate_cooling(cc, &species, omega, ndot))?;
    let rows: Vec<PopulationRow> = run.trace.iter().map(PopulationRow::from).collect();
    stage("cooling", out.csv("populations.csv", &rows))?;
    stages.push("cooling".into());
    result.eta = Some(eta);

    if let (Some(tc), Some(ndot)) = (&cfg.thermometry, ndot) {
        let seed = cfg.seed.expect("validated");
        let lw = TWO_PI * tc.linewidth_hz;
        let mut settings = ScanSettings::standard(eta, omega0, omega, lw);
        settings.half_span = tc.span_linewidths * lw;
        settings.points = tc.points;
        settings.shots = tc.shots;
        if let Some(t) = tc.probe_time_s {
            settings.probe_time = t;
        }
        let m = stage(
            "thermometry",
            measure_heating_rate(&run.final_state, ndot, &tc.delays_s, &settings, seed),
        )?;
        let mut scans: Vec<ScanRow> = Vec::new();
        for p in &m.points {
            scans.extend(io::scan_rows(&p.red, Some(p.delay)));
            scans.extend(io::scan_rows(&p.blue, Some(p.delay)));
        }
        stage("thermometry", out.csv("scans.csv", &scans))?;
        let series: Vec<NbarRow> = m.points.iter().map(|p| nbar_row(p.delay, &p.fit, p.nbar)).collect();
        stage("thermometry", out.csv("series.csv", &series))?;
        stage("thermometry", out.json("rate.json", &RateJson::from(&m.fit)))?;
        stages.push("thermometry".into());
        result.heating = Some(m);
    }
    result.cooling = Some(run);
    noise_stage(cfg, &species, out, stages, result)
}

fn noise_stage(
    cfg: &ExperimentConfig,
    species: &IonSpecies,
    out: &mut Outputs,
    stages: &mut Vec<String>,
    mut result: PipelineResult,
) -> Result<PipelineResult> {
    let (Some(nc), Some(ndot)) = (&cfg.noise, result.ndot) else {
        return Ok(result);
    };
    // prefer the measured rate when thermometry ran
    let rate = match &result.heating {
        Some(m) => m.fit.ndot,
        None => Estimate::exact(ndot),
    };
    let m = stage(
        "noise",
        NoiseMeasurement::from_heating(
            result.layout.characteristic_size,
            mode_omega(cfg, &result.solution),
            Estimate::new(rate.value.max(0.0), rate.sigma),
            nc.temperature_k,
            nc.label.clone(),
            species,
            TWO_PI * nc.normalize_hz,
        ),
    )?;
    stage("noise", io::write_noise_csv(&out.dir.join("noise.csv"), std::slice::from_ref(&m), nc.normalize_hz))?;
    stage("noise", out.record("noise.csv"))?;
    stages.push("noise".into());
    result.noise = Some(m);
    Ok(result)
}

/// Frequency of the cooled mode: the override if given, else the lowest
/// (axial) secular frequency.
fn mode_omega(cfg: &ExperimentConfig, s: &TrapSolution) -> f64 {
    cfg.cooling
        .as_ref()
        .and_then(|c| c.secular_frequency_hz)
        .map(|f| TWO_PI * f)
        .unwrap_or(s.secular_frequencies[0])
}

/// Cool a Doppler-temperature thermal state of the mode at `omega` (rad/s).
/// Returns the run, η and Ω₀.
pub fn simulate_cooling(
    cc: &CoolingConfig,
    species: &IonSpecies,
    omega: f64,
    ndot: Option<f64>,
) -> Result<(CoolingRun, f64, f64)> {
    let eta = lamb_dicke(species, species.cooling_wavelength, omega, cc.projection_angle_deg.to_radians())?;
    let omega0 = omega0_for_pi_time(eta, cc.pi_time_s);
    let seq = CoolingSequence::ramp(cc.pulses, cc.t_start_s, cc.t_end_s, cc.ramp, eta, omega0)?;
    let nbar = bose_occupation(omega, cc.doppler_temperature_k)?;
    let p: FockDistribution = thermal_distribution_auto(nbar, cc.n_max)?;
    let heat = if cc.heating_during_cooling { ndot } else { None };
    Ok((run_cooling(&p, &seq, heat)?, eta, omega0))
}

fn nbar_row(delay: f64, fit: &crate::thermometry::SidebandPair, nbar: Estimate) -> NbarRow {
    let r = fit.ratio();
    NbarRow {
        delay_s: delay,
        nbar: nbar.value,
        sigma: nbar.sigma,
        ratio: r.value,
        ratio_sigma: r.sigma,
        red_amplitude: fit.red.value,
        red_amplitude_sigma: fit.red.sigma,
        blue_amplitude: fit.blue.amplitude.value,
        blue_amplitude_sigma: fit.blue.amplitude.sigma,
    }
}

/// Public form of the per-delay row, for `thermo fit`.
pub fn sideband_row(delay: f64, fit: &crate::thermometry::SidebandPair) -> Result<NbarRow> {
    let r = fit.ratio();
    let nbar = crate::thermometry::nbar_from_ratio(r.value, r.sigma)?;
    Ok(nbar_row(delay, fit, nbar))
}

fn empty_manifest(cfg: &ExperimentConfig) -> Manifest {
    Manifest {
        schema_version: SCHEMA_VERSION,
        status: RunStatus::Partial,
        failed_stage: None,
        error: None,
        stages: Vec::new(),
        files: Vec::new(),
        config: cfg.clone(),
        constants: constants::table(),
        created_unix_s: 0,
    }
}
