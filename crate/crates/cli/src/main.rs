#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use iontrap::electrostatics::{build_basis, static_potential, GapTreatment, Point, VoltageSet};
use iontrap::geometry::{Profile, Role, TrapLayout};
use iontrap::io::{self, FieldRow, MeasurementRow, PopulationRow, PowerLawJson, RateJson, ScanRow, Table};
use iontrap::noise::{fit_power_law, NoiseMeasurement};
use iontrap::pipeline::{run_pipeline, simulate_cooling, sideband_row, CoolingConfig, ExperimentConfig};
use iontrap::pseudopotential::{solve_trap, IonSpecies};
use iontrap::stats::Estimate;
use iontrap::thermometry::{fit_heating_rate, fit_sideband_pair};

const OUT_DIR_ENV: &str = "IONTRAP_OUT_DIR";

#[derive(Parser)]
#[command(name = "iontrap", version, about = "Surface-electrode ion trap design and heating-rate analysis")]
struct Cli {
    /// Master RNG seed; overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for outputs given without a path.
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Electrode layouts, potentials and trap solutions.
    #[command(subcommand)]
    Trap(TrapCmd),
    /// Sideband cooling simulation.
    #[command(subcommand)]
    Cool(CoolCmd),
    /// Sideband thermometry fits.
    #[command(subcommand)]
    Thermo(ThermoCmd),
    /// Heating rate to field noise conversion and scaling fits.
    #[command(subcommand)]
    Noise(NoiseCmd),
    /// Config-driven end-to-end run.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
}

#[derive(Subcommand)]
enum TrapCmd {
    /// Build and calibrate a named layout.
    Build {
        #[arg(long)]
        profile: Profile,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Potential and field on a y = 0 grid, RF at peak amplitude.
    Field {
        #[arg(long)]
        layout: PathBuf,
        /// x0,x1,nx,z0,z1,nz in meters
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
        #[arg(long)]
        volts: Option<PathBuf>,
        #[arg(long, default_value = "midline")]
        gap_treatment: GapTreatment,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Find the RF null, trap minimum and secular modes.
    Solve {
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        volts: Option<PathBuf>,
        #[arg(long, default_value = "Sr88")]
        ion: IonSpecies,
        #[arg(long, default_value = "midline")]
        gap_treatment: GapTreatment,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CoolCmd {
    /// Pulsed red-sideband cooling from a Doppler-cooled thermal state.
    Simulate {
        /// Cooling settings; `secular_frequency_hz` is required.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "Sr88")]
        ion: IonSpecies,
        /// Heating rate applied during pulses, quanta/s.
        #[arg(long)]
        ndot: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ThermoCmd {
    /// Fit red/blue scans and estimate n̄ per delay.
    Fit {
        #[arg(long)]
        scans: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Weighted line fit of n̄ against delay.
    Heating {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum NoiseCmd {
    /// Heating rates to field noise spectral densities.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "Sr88")]
        ion: IonSpecies,
        /// Reference frequency for the ω⁻¹ normalization, Hz.
        #[arg(long, default_value_t = 1e6)]
        normalize: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Log-log power-law fit between two columns.
    Fit(NoiseFitArgs),
}

#[derive(Args)]
struct NoiseFitArgs {
    /// Noise CSV written by `noise convert`.
    #[arg(long = "in", default_value = "noise.csv")]
    input: PathBuf,
    /// Column or alias: d, omega, T.
    #[arg(long)]
    x: String,
    #[arg(long)]
    y: String,
    /// Column holding σ of y; defaults to `<y>_sigma` when present.
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PipelineCmd {
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; falls back to the config, then the env var.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure class deciding the exit code.
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let validation = e.chain().any(|c| {
            matches!(
                c.downcast_ref::<iontrap::Error>(),
                Some(
                    iontrap::Error::Config(_)
                        | iontrap::Error::InvalidParams(_)
                        | iontrap::Error::InvalidLayout(_)
                        | iontrap::Error::Json(_)
                        | iontrap::Error::Csv(_)
                )
            )
        }) && !e.chain().any(|c| matches!(c.downcast_ref::<iontrap::Error>(), Some(iontrap::Error::Stage { .. })));
        if validation {
            Failure::Validation(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

impl From<iontrap::Error> for Failure {
    fn from(e: iontrap::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn invalid(msg: String) -> Failure {
    Failure::Validation(anyhow!(msg))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    let out_dir = cli.out_dir.clone();
    let output = |given: Option<PathBuf>, default: &str| -> Result<PathBuf, Failure> {
        let p = given.unwrap_or_else(|| PathBuf::from(default));
        let p = match (&out_dir, p.is_relative() && p.parent() == Some(Path::new(""))) {
            (Some(d), true) => d.join(p),
            _ => p,
        };
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))
                .map_err(Failure::Runtime)?;
        }
        Ok(p)
    };

    match cli.cmd {
        Cmd::Trap(TrapCmd::Build { profile, out }) => {
            let layout = profile.layout()?;
            let out = output(out, "layout.json")?;
            io::write_json(&out, &layout)?;
            let p = layout.five_rod.expect("profiles are five-rod layouts");
            println!(
                "{profile:?}: {} electrodes, RF rail width {:.3} um -> {}",
                layout.electrodes.len(),
                p.rf_rail_width * 1e6,
                out.display()
            );
        }
        Cmd::Trap(TrapCmd::Field {
            layout,
            grid,
            volts,
            gap_treatment,
            out,
        }) => {
            let layout = read_layout(&layout)?;
            let volts = read_volts(volts.as_deref())?;
            let g = parse_grid(&grid)?;
            let basis = build_basis(&layout, gap_treatment);
            let mut rows = Vec::with_capacity(g.nx * g.nz);
            for iz in 0..g.nz {
                for ix in 0..g.nx {
                    let x = lerp(g.x0, g.x1, ix, g.nx);
                    let z = lerp(g.z0, g.z1, iz, g.nz);
                    let r = Point::new(x, 0.0, z);
                    let dc = static_potential(&basis, &volts, &r)?;
                    let rf = basis.potential_of_role(Role::Rf, &r)?;
                    let erf = basis.field_of_role(Role::Rf, &r)?;
                    let a = volts.v_rf_amplitude;
                    rows.push(FieldRow {
                        x,
                        y: 0.0,
                        z,
                        phi: dc.phi + a * rf,
                        ex: dc.field.x + a * erf.x,
                        ey: dc.field.y + a * erf.y,
                        ez: dc.field.z + a * erf.z,
                    });
                }
            }
            let out = output(out, "field.csv")?;
            io::write_csv(&out, &rows)?;
            println!("{} grid points -> {}", rows.len(), out.display());
        }
        Cmd::Trap(TrapCmd::Solve {
            layout,
            volts,
            ion,
            gap_treatment,
            out,
        }) => {
            let layout = read_layout(&layout)?;
            let volts = read_volts(volts.as_deref())?;
            let basis = build_basis(&layout, gap_treatment);
            let s = solve_trap(&basis, &volts, &ion)?;
            let out = output(out, "solution.json")?;
            io::write_json(&out, &s)?;
            let f = s.frequencies_hz();
            println!(
                "null z = {:.2} um, minimum z = {:.2} um",
                s.r_null[2] * 1e6,
                s.r_min[2] * 1e6
            );
            println!(
                "secular frequencies {:.3} / {:.3} / {:.3} MHz, tilt {:.2} deg, depth {:.3} eV",
                f[0] / 1e6,
                f[1] / 1e6,
                f[2] / 1e6,
                s.tilt_deg,
                s.depth_ev
            );
        }
        Cmd::Cool(CoolCmd::Simulate { config, ion, ndot, out }) => {
            let text = read_input(&config)?;
            let cc: CoolingConfig = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", config.display()))
                .map_err(Failure::Validation)?;
            let f = cc
                .secular_frequency_hz
                .ok_or_else(|| invalid("cooling config needs `secular_frequency_hz`".into()))?;
            if !(f > 0.0) {
                return Err(invalid("secular_frequency_hz must be > 0".into()));
            }
            if cc.heating_during_cooling && ndot.is_none() {
                return Err(invalid("heating_during_cooling needs --ndot".into()));
            }
            let (runres, eta, _) = simulate_cooling(&cc, &ion, iontrap::constants::TWO_PI * f, ndot)?;
            let rows: Vec<PopulationRow> = runres.trace.iter().map(PopulationRow::from).collect();
            let out = output(out, "populations.csv")?;
            io::write_csv(&out, &rows)?;
            let last = rows.last().expect("trace has the initial state");
            println!(
                "eta = {eta:.4}; after {} pulses p0 = {:.4}, nbar = {:.4} -> {}",
                last.pulse_index,
                last.p0,
                last.nbar,
                out.display()
            );
            if runres.final_state.leakage_flag() {
                eprintln!("warning: truncation leakage {:.2e}", runres.final_state.leakage());
            }
        }
        Cmd::Thermo(ThermoCmd::Fit { scans, out }) => {
            require_file(&scans)?;
            let rows: Vec<ScanRow> = io::read_csv(&scans)?;
            let groups = io::group_scans(&rows)?;
            let mut out_rows = Vec::with_capacity(groups.len());
            for g in &groups {
                let fit = fit_sideband_pair(&g.red, &g.blue)?;
                let row = sideband_row(g.delay.unwrap_or(0.0), &fit)?;
                println!(
                    "delay {:>8.4} s: ratio {:.4} +- {:.4}, nbar {:.4} +- {:.4}",
                    row.delay_s, row.ratio, row.ratio_sigma, row.nbar, row.sigma
                );
                out_rows.push(row);
            }
            let out = output(out, "nbar.csv")?;
            io::write_csv(&out, &out_rows)?;
        }
        Cmd::Thermo(ThermoCmd::Heating { series, out }) => {
            require_file(&series)?;
            let s = io::read_series(&series)?;
            let fit = fit_heating_rate(&s)?;
            let out = output(out, "rate.json")?;
            io::write_json(&out, &RateJson::from(&fit))?;
            println!(
                "ndot = {} quanta/s, intercept = {}, chi2/dof = {:.3}/{}",
                fit.ndot, fit.intercept, fit.chi2, fit.dof
            );
        }
        Cmd::Noise(NoiseCmd::Convert {
            input,
            ion,
            normalize,
            out,
        }) => {
            if !(normalize > 0.0) {
                return Err(invalid("--normalize must be > 0".into()));
            }
            require_file(&input)?;
            let rows: Vec<MeasurementRow> = io::read_csv(&input)?;
            let ms = rows
                .iter()
                .map(|r| {
                    NoiseMeasurement::from_heating(
                        r.d_m,
                        r.omega_rad_s,
                        Estimate::new(r.ndot, r.ndot_sigma),
                        r.t_k,
                        r.label.clone(),
                        &ion,
                        iontrap::constants::TWO_PI * normalize,
                    )
                })
                .collect::<iontrap::Result<Vec<_>>>()?;
            let out = output(out, "noise.csv")?;
            io::write_noise_csv(&out, &ms, normalize)?;
            println!("{} measurements -> {}", ms.len(), out.display());
        }
        Cmd::Noise(NoiseCmd::Fit(a)) => noise_fit(a, &output)?,
        Cmd::Pipeline(PipelineCmd::Run { config, out }) => {
            require_file(&config)?;
            let mut cfg = ExperimentConfig::load(&config)?;
            if cli.seed.is_some() {
                cfg.seed = cli.seed;
            }
            let dir = out
                .or_else(|| cfg.output_dir.clone())
                .or(out_dir)
                .ok_or_else(|| invalid(format!("no output directory: pass --out, set output_dir or {OUT_DIR_ENV}")))?;
            let r = run_pipeline(&cfg, &dir)?;
            println!("stages: {}", r.manifest.stages.join(", "));
            if let Some(m) = &r.heating {
                println!("ndot = {} quanta/s", m.fit.ndot);
            }
            println!("{} files -> {}", r.manifest.files.len(), dir.display());
        }
    }
    Ok(())
}

type OutputFn<'a> = dyn Fn(Option<PathBuf>, &str) -> Result<PathBuf, Failure> + 'a;

fn noise_fit(a: NoiseFitArgs, output: &OutputFn) -> Result<(), Failure> {
    require_file(&a.input)?;
    let t = Table::read(&a.input)?;
    let alias = |s: &str| -> String {
        match s {
            "d" => "d_m".into(),
            "omega" => "omega_rad_s".into(),
            "T" => "T_K".into(),
            other => other.into(),
        }
    };
    let (xc, yc) = (alias(&a.x), alias(&a.y));
    let x = t.column(&xc)?;
    let y = t.column(&yc)?;
    let sc = a.sigma.unwrap_or_else(|| format!("{yc}_sigma"));
    let s = if t.has_column(&sc) {
        t.column(&sc)?
    } else {
        vec![0.0; y.len()]
    };
    let pts: Vec<_> = (0..x.len()).map(|i| (x[i], y[i], s[i])).collect();
    let fit = fit_power_law(&pts)?;
    println!("exponent = {}", fit.exponent);
    println!("amplitude = {}", fit.amplitude);
    if fit.unweighted {
        println!("(no sigma column; unweighted fit, sigma scaled by residual scatter)");
    }
    if let Some(out) = a.out {
        let out = output(Some(out), "fit.json")?;
        io::write_json(
            &out,
            &PowerLawJson {
                x: xc,
                y: yc,
                exponent: fit.exponent,
                amplitude: fit.amplitude,
                chi2: fit.chi2,
                dof: fit.dof,
                points: pts.len(),
            },
        )?;
    }
    Ok(())
}

struct Grid {
    x0: f64,
    x1: f64,
    nx: usize,
    z0: f64,
    z1: f64,
    nz: usize,
}

fn parse_grid(s: &str) -> Result<Grid, Failure> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let err = || invalid(format!("--grid expects x0,x1,nx,z0,z1,nz, got `{s}`"));
    if parts.len() != 6 {
        return Err(err());
    }
    let f = |i: usize| parts[i].parse::<f64>().map_err(|_| err());
    let n = |i: usize| parts[i].parse::<usize>().map_err(|_| err());
    let g = Grid {
        x0: f(0)?,
        x1: f(1)?,
        nx: n(2)?,
        z0: f(3)?,
        z1: f(4)?,
        nz: n(5)?,
    };
    if g.nx == 0 || g.nz == 0 || !(g.z0 > 0.0) || !(g.z1 > 0.0) {
        return Err(invalid("grid needs nx, nz >= 1 and z > 0".into()));
    }
    Ok(g)
}

fn lerp(a: f64, b: f64, i: usize, n: usize) -> f64 {
    if n == 1 {
        a
    } else {
        a + (b - a) * i as f64 / (n - 1) as f64
    }
}

fn require_file(p: &Path) -> Result<(), Failure> {
    if p.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("input file `{}` does not exist", p.display())))
    }
}

fn read_input(p: &Path) -> Result<String, Failure> {
    require_file(p)?;
    std::fs::read_to_string(p)
        .with_context(|| format!("reading {}", p.display()))
        .map_err(Failure::Runtime)
}

fn read_layout(p: &Path) -> Result<TrapLayout, Failure> {
    Ok(TrapLayout::from_json(&read_input(p)?)?)
}

fn read_volts(p: Option<&Path>) -> Result<VoltageSet, Failure> {
    let Some(p) = p else {
        return Ok(VoltageSet::operating_point());
    };
    let v: VoltageSet = serde_json::from_str(&read_input(p)?)
        .with_context(|| format!("parsing {}", p.display()))
        .map_err(Failure::Validation)?;
    v.validate()?;
    Ok(v)
}
