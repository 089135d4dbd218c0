//! Command-line driver.
//!
//! Settings come from three layers: built-in defaults, an optional config
//! file (`--config`, `key = value` lines, `#` comments) and flags, later
//! layers winning. Exit status is 0 on success, 1 when a computation fails
//! or a pipeline check does not pass, 2 on usage errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::{Display, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::error::{CdiiError, Result};
use crate::evaluate::{report, Check, InversionMetrics};
use crate::field::{BoundaryTrace, InclusionGeometry, ScalarField, VectorField};
use crate::forward::{
    convergence_study, current_density, energy, solve_forward, solve_limit, Contrast,
    ConvergenceReport, ForwardProblem, ForwardSolution,
};
use crate::io;
use crate::least_gradient::{
    classify_inclusions, reconstruct, zero_set_decomposition, Init, ReconstructionResult,
    SolverParams, Thresholds,
};
use crate::presets::Preset;
use crate::synthesis::{
    check_admissibility, example_current_field, example_phantom, synthesize_magnitude,
    AdmissibilityReport, AdmissiblePair, Extension, Verdict,
};
use crate::verify::{
    bump_centres, bump_perturbation, coarea_check, minimality_test, plateau_levels,
    reconstruct_from_full_j, sample_levels, CoareaReport, MinimalityReport, TraceOptions,
};

#[derive(Debug, Parser)]
#[command(
    name = "cdii",
    version,
    about = "Conductivity imaging from the magnitude of one interior current density"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write a preset's geometry, conductivity, boundary voltage and data.
    Phantom,
    /// Solve the forward problem for given files.
    Forward {
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long)]
        sigma: PathBuf,
        /// Conductivity on perfect conductors before the contrast factor
        /// (default 1).
        #[arg(long)]
        sigma1: Option<PathBuf>,
        #[arg(long)]
        f: PathBuf,
    },
    /// Build `(f, a)` from a limit solution and check admissibility.
    Synthesize {
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long)]
        sigma: PathBuf,
        #[arg(long)]
        f: PathBuf,
        /// Limit potential; solved for when omitted.
        #[arg(long)]
        u: Option<PathBuf>,
    },
    /// Minimise the weighted gradient energy and recover the conductivity.
    Invert {
        /// Directory with a.cdf, geometry.cdf and f.csv.
        #[arg(long)]
        pair: PathBuf,
    },
    /// Decompose and label the degenerate set of a given potential.
    Classify {
        #[arg(long)]
        pair: PathBuf,
        #[arg(long)]
        u: PathBuf,
    },
    /// Numerical checks on level sets and convergence.
    Verify {
        #[command(subcommand)]
        check: VerifyCommand,
    },
    /// Phantom → forward → synthesize → invert → classify → verify for a
    /// preset, with a pass/fail report.
    Pipeline,
}

#[derive(Debug, Clone, Subcommand)]
pub enum VerifyCommand {
    /// Co-area residual of `∫ a|∇u|` against the integral of level-set areas.
    Coarea {
        #[arg(long)]
        u: PathBuf,
        #[arg(long)]
        a: PathBuf,
    },
    /// Level-set areas of `u` against a trial function or random bumps.
    Minimality {
        #[arg(long)]
        pair: PathBuf,
        #[arg(long)]
        u: PathBuf,
        /// Trial function with the same trace; random bumps when omitted.
        #[arg(long)]
        v: Option<PathBuf>,
    },
    /// Finite-contrast solutions against the limit for the preset.
    Convergence {
        /// Comma-separated ascending contrasts.
        #[arg(long, value_delimiter = ',', default_values_t = [10.0, 100.0, 1000.0])]
        contrasts: Vec<f64>,
    },
    /// Potential on `{α < u < β}` from the preset's full current field.
    Partial {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
    },
}

/// Flags that may also be set in the config file (same names, `-` or `_`).
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Config file with `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub preset: Option<Preset>,
    /// Nodes per side.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Contrast on perfect conductors: a number above 1 or `inf`.
    #[arg(long = "K", global = true)]
    pub contrast: Option<Contrast>,
    /// Interior data on perfect conductors: `finite:<K>`, `analytic` or `none`.
    #[arg(long, global = true)]
    pub extension: Option<Extension>,
    #[arg(long, global = true)]
    pub gap_tol: Option<f64>,
    #[arg(long, global = true)]
    pub max_iters: Option<usize>,
    #[arg(long, global = true)]
    pub theta: Option<f64>,
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    #[arg(long, global = true)]
    pub s: Option<f64>,
    #[arg(long, global = true)]
    pub check_every: Option<usize>,
    /// Starting point: `harmonic` or `midrange`.
    #[arg(long, global = true)]
    pub init: Option<InitKind>,
    #[arg(long, global = true)]
    pub eps_a: Option<f64>,
    #[arg(long, global = true)]
    pub eps_g: Option<f64>,
    #[arg(long, global = true)]
    pub eps_u: Option<f64>,
    /// Levels for the co-area integral.
    #[arg(long, global = true)]
    pub levels: Option<usize>,
    /// Random bump perturbations in minimality checks.
    #[arg(long, global = true)]
    pub bumps: Option<usize>,
    /// Levels sampled per minimality comparison.
    #[arg(long, global = true)]
    pub lambdas: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; the solvers currently run on one.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Harmonic,
    MidRange,
}

impl FromStr for InitKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "harmonic" => Ok(InitKind::Harmonic),
            "midrange" | "mid-range" => Ok(InitKind::MidRange),
            _ => Err(format!("unknown init '{s}' (harmonic, midrange)")),
        }
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub out: Option<PathBuf>,
    pub preset: Preset,
    pub n: usize,
    pub contrast: Contrast,
    pub extension: Extension,
    pub solver: SolverParams,
    pub eps_a: Option<f64>,
    pub eps_g: Option<f64>,
    pub eps_u: Option<f64>,
    pub levels: usize,
    pub bumps: usize,
    pub lambdas: usize,
    pub seed: u64,
    pub threads: usize,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub settings: Settings,
}

/// Bad flags, config entries or missing inputs; exit status 2.
#[derive(Debug)]
pub enum UsageError {
    Clap(clap::Error),
    Message(String),
}

impl Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UsageError::Clap(e) => write!(f, "{e}"),
            UsageError::Message(m) => write!(f, "error: {m}"),
        }
    }
}

const CONFIG_KEYS: [&str; 20] = [
    "out",
    "preset",
    "n",
    "k",
    "extension",
    "gap_tol",
    "max_iters",
    "theta",
    "tau",
    "s",
    "check_every",
    "init",
    "eps_a",
    "eps_g",
    "eps_u",
    "levels",
    "bumps",
    "lambdas",
    "seed",
    "threads",
];

/// Parses config-file text into normalised `key → value`.
pub fn parse_config_file(text: &str) -> std::result::Result<BTreeMap<String, String>, UsageError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            UsageError::Message(format!(
                "config line {}: expected 'key = value', got '{line}'",
                i + 1
            ))
        })?;
        let key = key.trim().replace('-', "_").to_ascii_lowercase();
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(UsageError::Message(format!(
                "config line {}: unknown key '{}'",
                i + 1,
                key
            )));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(UsageError::Message(format!(
                "config line {}: duplicate key '{key}'",
                i + 1
            )));
        }
    }
    Ok(map)
}

fn from_file<T: FromStr>(
    file: &BTreeMap<String, String>,
    key: &str,
) -> std::result::Result<Option<T>, UsageError>
where
    T::Err: Display,
{
    file.get(key)
        .map(|s| {
            s.parse::<T>().map_err(|e| {
                UsageError::Message(format!("config key '{key}': invalid value '{s}': {e}"))
            })
        })
        .transpose()
}

fn positive(name: &str, v: f64) -> std::result::Result<f64, UsageError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(UsageError::Message(format!(
            "--{name} must be positive and finite, got {v}"
        )))
    }
}

/// Merges flags over the config file over defaults and validates ranges.
pub fn resolve(
    o: &Overrides,
    file: &BTreeMap<String, String>,
) -> std::result::Result<Settings, UsageError> {
    macro_rules! pick {
        ($field:ident, $key:literal) => {
            match o.$field.clone() {
                Some(v) => Some(v),
                None => from_file(file, $key)?,
            }
        };
    }
    let defaults = SolverParams::default();
    let solver = SolverParams {
        max_iters: pick!(max_iters, "max_iters").unwrap_or(defaults.max_iters),
        gap_tol: positive(
            "gap-tol",
            pick!(gap_tol, "gap_tol").unwrap_or(defaults.gap_tol),
        )?,
        theta: pick!(theta, "theta").unwrap_or(defaults.theta),
        tau: pick!(tau, "tau").map(|v| positive("tau", v)).transpose()?,
        s: pick!(s, "s").map(|v| positive("s", v)).transpose()?,
        init: match pick!(init, "init").unwrap_or(InitKind::Harmonic) {
            InitKind::Harmonic => Init::Harmonic,
            InitKind::MidRange => Init::MidRange,
        },
        check_every: pick!(check_every, "check_every").unwrap_or(defaults.check_every),
    };
    if !(0.0..=1.0).contains(&solver.theta) {
        return Err(UsageError::Message(format!(
            "--theta must lie in [0, 1], got {}",
            solver.theta
        )));
    }
    if solver.max_iters == 0 || solver.check_every == 0 {
        return Err(UsageError::Message(
            "--max-iters and --check-every must be at least 1".into(),
        ));
    }
    let settings = Settings {
        out: pick!(out, "out"),
        preset: pick!(preset, "preset").unwrap_or(Preset::DiskExample),
        n: pick!(n, "n").unwrap_or(101),
        contrast: pick!(contrast, "k").unwrap_or(Contrast::Infinite),
        extension: pick!(extension, "extension").unwrap_or(Extension::FiniteContrast(1e4)),
        solver,
        eps_a: pick!(eps_a, "eps_a")
            .map(|v| positive("eps-a", v))
            .transpose()?,
        eps_g: pick!(eps_g, "eps_g")
            .map(|v| positive("eps-g", v))
            .transpose()?,
        eps_u: pick!(eps_u, "eps_u")
            .map(|v| positive("eps-u", v))
            .transpose()?,
        levels: pick!(levels, "levels").unwrap_or(200),
        bumps: pick!(bumps, "bumps").unwrap_or(20),
        lambdas: pick!(lambdas, "lambdas").unwrap_or(50),
        seed: pick!(seed, "seed").unwrap_or(0),
        threads: pick!(threads, "threads").unwrap_or(1),
    };
    if settings.n < 5 {
        return Err(UsageError::Message(format!(
            "--n must be at least 5, got {}",
            settings.n
        )));
    }
    if settings.levels < 2 {
        return Err(UsageError::Message(format!(
            "--levels must be at least 2, got {}",
            settings.levels
        )));
    }
    if settings.threads == 0 {
        return Err(UsageError::Message("--threads must be at least 1".into()));
    }
    Ok(settings)
}

/// Flags, then the config file they name, then input-file existence.
pub fn parse_config<I, T>(args: I) -> std::result::Result<RunConfig, UsageError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(UsageError::Clap)?;
    let file = match &cli.overrides.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| UsageError::Message(format!("--config {}: {e}", path.display())))?;
            parse_config_file(&text)?
        }
        None => BTreeMap::new(),
    };
    let settings = resolve(&cli.overrides, &file)?;
    for (flag, path) in input_paths(&cli.command) {
        if !path.exists() {
            return Err(UsageError::Message(format!(
                "--{flag}: {} does not exist",
                path.display()
            )));
        }
    }
    Ok(RunConfig {
        command: cli.command,
        settings,
    })
}

fn input_paths(c: &Command) -> Vec<(&'static str, &Path)> {
    let mut v: Vec<(&'static str, &Path)> = Vec::new();
    match c {
        Command::Phantom | Command::Pipeline => {}
        Command::Forward {
            geometry,
            sigma,
            sigma1,
            f,
        } => {
            v.extend([("geometry", geometry.as_path()), ("sigma", sigma), ("f", f)]);
            v.extend(sigma1.as_deref().map(|p| ("sigma1", p)));
        }
        Command::Synthesize {
            geometry,
            sigma,
            f,
            u,
        } => {
            v.extend([("geometry", geometry.as_path()), ("sigma", sigma), ("f", f)]);
            v.extend(u.as_deref().map(|p| ("u", p)));
        }
        Command::Invert { pair } => v.push(("pair", pair)),
        Command::Classify { pair, u } => v.extend([("pair", pair.as_path()), ("u", u)]),
        Command::Verify { check } => match check {
            VerifyCommand::Coarea { u, a } => v.extend([("u", u.as_path()), ("a", a)]),
            VerifyCommand::Minimality { pair, u, v: trial } => {
                v.extend([("pair", pair.as_path()), ("u", u)]);
                v.extend(trial.as_deref().map(|p| ("v", p)));
            }
            VerifyCommand::Convergence { .. } | VerifyCommand::Partial { .. } => {}
        },
    }
    v
}

/// Files are first written as `<name>.partial` and renamed once the command
/// has succeeded, so a failed run leaves only `.partial` artifacts.
pub struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.dir.join(format!("{name}.partial")), contents)?;
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_pair(&mut self, pair: &AdmissiblePair) -> Result<()> {
        self.write(io::PAIR_A, &io::field_to_cdf(&pair.a))?;
        self.write(io::PAIR_GEOMETRY, &io::geometry_to_cdf(&pair.geometry))?;
        self.write(
            io::PAIR_TRACE,
            &io::trace_to_csv(&pair.geometry.grid, &pair.f),
        )
    }

    pub fn commit(self) -> Result<()> {
        for name in &self.written {
            fs::rename(
                self.dir.join(format!("{name}.partial")),
                self.dir.join(name),
            )?;
        }
        Ok(())
    }
}

/// Entry point for the binary: returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let config = match parse_config(args) {
        Ok(c) => c,
        Err(UsageError::Clap(e)) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    match run(&config) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Executes a command. `Ok(false)` means it ran but some check failed.
pub fn run(config: &RunConfig) -> Result<bool> {
    let s = &config.settings;
    let out_dir = s.out.clone().unwrap_or_else(|| PathBuf::from("."));
    match &config.command {
        Command::Phantom => {
            let mut out = Outputs::new(&out_dir)?;
            write_phantom(&mut out, s.preset, s.n, s.extension)?;
            out.commit()?;
            Ok(true)
        }
        Command::Forward {
            geometry,
            sigma,
            sigma1,
            f,
        } => {
            let p = load_problem(geometry, sigma, sigma1.as_deref(), f, s.contrast)?;
            let mut out = Outputs::new(&out_dir)?;
            let sol = solve_forward(&p)?;
            out.write("u.cdf", &io::field_to_cdf(&sol.u))?;
            let text = forward_summary(&sol);
            out.write("forward.txt", &text)?;
            print!("{text}");
            out.commit()?;
            Ok(true)
        }
        Command::Synthesize {
            geometry,
            sigma,
            f,
            u,
        } => {
            let p = load_problem(geometry, sigma, None, f, Contrast::Infinite)?;
            let sol = match u {
                Some(path) => {
                    let u = io::read_field(path)?;
                    if u.grid != p.geometry.grid {
                        return Err(CdiiError::InconsistentGeometry(
                            "--u grid differs from the geometry".into(),
                        ));
                    }
                    ForwardSolution {
                        energy: energy(&p, &u),
                        u,
                        per_component_flux: Vec::new(),
                        iterations: 0,
                        residual: 0.0,
                    }
                }
                None => solve_limit(&p)?,
            };
            let mut out = Outputs::new(&out_dir)?;
            let pair = synthesize_magnitude(&sol, &p, s.extension)?;
            out.write_pair(&pair)?;
            let rep = check_admissibility(&pair, &p.sigma, &sol.u)?;
            let text = admissibility_summary(&rep);
            out.write("admissibility.txt", &text)?;
            print!("{text}");
            out.commit()?;
            Ok(true)
        }
        Command::Invert { pair } => {
            let pair = io::read_pair(pair)?;
            let th = thresholds(s, &pair);
            let mut out = Outputs::new(&out_dir)?;
            let (res, clipped) = reconstruct(&pair, &s.solver, &th)?;
            write_reconstruction(&mut out, &res, clipped)?;
            print!("{}", io::diagnostics(&res, clipped));
            res.ensure_converged()?;
            out.commit()?;
            Ok(true)
        }
        Command::Classify { pair, u } => {
            let pair = io::read_pair(pair)?;
            let u = io::read_field(u)?;
            if u.grid != pair.geometry.grid {
                return Err(CdiiError::InconsistentGeometry(
                    "--u grid differs from the pair".into(),
                ));
            }
            let th = thresholds(s, &pair);
            let d = zero_set_decomposition(&pair, &u, &th);
            let d = classify_inclusions(&pair, &u, &d, &th);
            let result = ReconstructionResult {
                sigma: ScalarField::from_fn_masked(u.grid, &vec![false; u.grid.len()], |_, _| 0.0),
                u,
                decomposition: d,
                energy_history: Vec::new(),
                final_gap: f64::NAN,
                iterations: 0,
                converged: true,
                max_principle_violation: 0.0,
            };
            let mut out = Outputs::new(&out_dir)?;
            out.write("components.cdf", &io::components_to_cdf(&result))?;
            let mut text = format!(
                "components={}\ngamma_nodes={}\n",
                result.decomposition.components.len(),
                result.decomposition.gamma_nodes.len()
            );
            for (i, c) in result.decomposition.components.iter().enumerate() {
                let _ = writeln!(
                    text,
                    "component_{i}_label={}\ncomponent_{i}_nodes={}",
                    c.label,
                    c.nodes.len()
                );
            }
            out.write("classification.txt", &text)?;
            print!("{text}");
            out.commit()?;
            Ok(true)
        }
        Command::Verify { check } => run_verify(check, s),
        Command::Pipeline => {
            let mut out = Outputs::new(&out_dir)?;
            let checks = pipeline(s, &mut out)?;
            let text = report(&checks);
            out.write("report.txt", &text)?;
            print!("{text}");
            out.commit()?;
            Ok(checks.iter().all(|c| c.passed))
        }
    }
}

fn run_verify(check: &VerifyCommand, s: &Settings) -> Result<bool> {
    let out = |name: &str, text: &str| -> Result<()> {
        if let Some(dir) = &s.out {
            let mut o = Outputs::new(dir)?;
            o.write(name, text)?;
            o.commit()?;
        }
        Ok(())
    };
    match check {
        VerifyCommand::Coarea { u, a } => {
            let u = io::read_field(u)?;
            let a = io::read_field(a)?;
            if u.grid != a.grid {
                return Err(CdiiError::InconsistentGeometry(
                    "--u and --a are on different grids".into(),
                ));
            }
            let rep = coarea_check(&a, &u, s.levels)?;
            let text = coarea_summary(&rep);
            print!("{text}");
            out("coarea.txt", &text)?;
            Ok(true)
        }
        VerifyCommand::Minimality { pair, u, v } => {
            let pair = io::read_pair(pair)?;
            let u = io::read_field(u)?;
            let th = thresholds(s, &pair);
            let reports = match v {
                Some(path) => {
                    let v = io::read_field(path)?;
                    let avoid = plateau_levels(&u, &zero_set_components(&pair, &u, &th));
                    let lambdas = sample_levels(&u, s.lambdas, &avoid, th.eps_u);
                    vec![minimality_test(
                        &pair.a,
                        &u,
                        &v,
                        &lambdas,
                        1e-3,
                        (th.eps_a, th.eps_g),
                    )?]
                }
                None => bump_minimality(&pair, &u, &th, s)?,
            };
            let mut text = String::new();
            let mut csv = String::new();
            for (i, r) in reports.iter().enumerate() {
                let _ = writeln!(text, "trial_{i}_fraction_holding={}", r.fraction_holding());
                let _ = writeln!(
                    text,
                    "trial_{i}_hypothesis_violations={}",
                    r.hypothesis_violations
                );
                csv.push_str(
                    if i == 0 {
                        r.to_csv()
                    } else {
                        r.to_csv()
                            .split_once('\n')
                            .map(|x| x.1.to_string())
                            .unwrap_or_default()
                    }
                    .as_str(),
                );
            }
            let worst = reports
                .iter()
                .map(|r| r.fraction_holding())
                .fold(1.0, f64::min);
            let _ = writeln!(text, "min_fraction_holding={worst}");
            print!("{text}");
            out("minimality.csv", &csv)?;
            Ok(true)
        }
        VerifyCommand::Convergence { contrasts } => {
            let p = s.preset.problem(s.n)?;
            let rep = convergence_study(&p, contrasts)?;
            let text = convergence_summary(&rep);
            print!("{text}");
            out("convergence.csv", &rep.to_csv())?;
            Ok(true)
        }
        VerifyCommand::Partial { alpha, beta } => {
            let (j, geo, f, exact) = preset_current(s.preset, s.n)?;
            let text =
                match reconstruct_from_full_j(&j, &geo, &f, *alpha, *beta, TraceOptions::default())
                {
                    Ok(r) => {
                        let mask: Vec<bool> = (0..geo.grid.len())
                            .map(|k| r.region.region_mask[k] && r.coverage[k])
                            .collect();
                        let err = crate::evaluate::relative_l2(&r.u, &exact, &mask);
                        out("partial_u.cdf", &io::field_to_cdf(&r.u))?;
                        out("partial_sigma.cdf", &io::field_to_cdf(&r.sigma))?;
                        format!(
                            "curves={}\nstalled={}\nregion_nodes={}\nu_rel_err={err}\n",
                            r.curves,
                            r.stalled,
                            r.region.region_mask.iter().filter(|&&b| b).count()
                        )
                    }
                    Err(CdiiError::Stall {
                        stalled,
                        total,
                        partial,
                    }) => {
                        out("partial_u.cdf.partial", &io::field_to_cdf(&partial.u))?;
                        return Err(CdiiError::Stall {
                            stalled,
                            total,
                            partial,
                        });
                    }
                    Err(e) => return Err(e),
                };
            print!("{text}");
            Ok(true)
        }
    }
}

fn load_problem(
    geometry: &Path,
    sigma: &Path,
    sigma1: Option<&Path>,
    f: &Path,
    contrast: Contrast,
) -> Result<ForwardProblem> {
    let geo = io::read_geometry(geometry)?;
    let sigma = io::read_field(sigma)?;
    let sigma1 = match sigma1 {
        Some(p) => io::read_field(p)?,
        None => ScalarField::from_fn_masked(geo.grid, &geo.u_mask, |_, _| 1.0),
    };
    let f = io::read_trace(f, &geo)?;
    // Node values off the background are not the conductivity's business.
    let bg = geo.background();
    let sigma = sigma.restricted(&bg);
    ForwardProblem::new(geo, sigma, sigma1, contrast, f)
}

fn thresholds(s: &Settings, pair: &AdmissiblePair) -> Thresholds {
    let d = Thresholds::defaults(pair);
    Thresholds {
        eps_a: s.eps_a.unwrap_or(d.eps_a),
        eps_g: s.eps_g.unwrap_or(d.eps_g),
        eps_u: s.eps_u.unwrap_or(d.eps_u),
    }
}

fn zero_set_components(pair: &AdmissiblePair, u: &ScalarField, th: &Thresholds) -> Vec<Vec<usize>> {
    zero_set_decomposition(pair, u, th)
        .components
        .into_iter()
        .map(|c| c.nodes)
        .collect()
}

/// Minimality of `u` against seeded bumps of amplitude 0.1 and radius 0.3.
pub fn bump_minimality(
    pair: &AdmissiblePair,
    u: &ScalarField,
    th: &Thresholds,
    s: &Settings,
) -> Result<Vec<MinimalityReport>> {
    let avoid = plateau_levels(u, &zero_set_components(pair, u, th));
    let lambdas = sample_levels(u, s.lambdas, &avoid, th.eps_u);
    let centres = bump_centres(&pair.geometry, s.bumps, 0.3, s.seed);
    if centres.len() < s.bumps {
        return Err(CdiiError::InvalidProblem(
            "domain too small for bumps of radius 0.3".into(),
        ));
    }
    centres
        .into_iter()
        .map(|c| {
            let v = bump_perturbation(&pair.geometry, u, c, 0.1, 0.3);
            minimality_test(&pair.a, u, &v, &lambdas, 1e-3, (th.eps_a, th.eps_g))
        })
        .collect()
}

/// Current field, geometry, trace and potential of a preset's limit problem.
fn preset_current(
    preset: Preset,
    n: usize,
) -> Result<(VectorField, InclusionGeometry, BoundaryTrace, ScalarField)> {
    if preset == Preset::DiskExample {
        let ph = example_phantom(n)?;
        let geo = ph.pair.geometry.clone();
        return Ok((example_current_field(&geo), geo, ph.pair.f, ph.exact_u));
    }
    let p = preset.problem(n)?;
    let sol = solve_limit(&p)?;
    Ok((
        current_density(&p, &sol.u),
        p.geometry.clone(),
        p.f.clone(),
        sol.u,
    ))
}

fn write_phantom(out: &mut Outputs, preset: Preset, n: usize, ext: Extension) -> Result<()> {
    let p = preset.problem(n)?;
    let pair = preset.pair(n, ext)?;
    let truth = match preset {
        Preset::DiskExample => example_phantom(n)?.exact_u,
        _ => solve_limit(&p)?.u,
    };
    out.write_pair(&pair)?;
    out.write("sigma_true.cdf", &io::field_to_cdf(&preset.sigma(n)?))?;
    out.write("u_true.cdf", &io::field_to_cdf(&truth))
}

fn write_reconstruction(
    out: &mut Outputs,
    res: &ReconstructionResult,
    clipped: usize,
) -> Result<()> {
    out.write("u.cdf", &io::field_to_cdf(&res.u))?;
    out.write("sigma.cdf", &io::field_to_cdf(&res.sigma))?;
    out.write("components.cdf", &io::components_to_cdf(res))?;
    out.write("diagnostics.txt", &io::diagnostics(res, clipped))
}

fn forward_summary(sol: &ForwardSolution) -> String {
    let mut s = format!(
        "energy={}\niterations={}\nresidual={:e}\n",
        sol.energy, sol.iterations, sol.residual
    );
    for (i, f) in sol.per_component_flux.iter().enumerate() {
        let _ = writeln!(s, "flux_{i}={f:e}");
    }
    s
}

fn admissibility_summary(r: &AdmissibilityReport) -> String {
    let mut s = format!(
        "verdict={}\ncond_i_residual={:e}\nmax_a_on_v={:e}\ncond_ii_slack={:e}\nface_bound_relaxation={}\nzero_components={}\nzero_gamma_nodes={}\ncovers_v={}\n",
        r.verdict,
        r.cond_i_residual,
        r.max_a_on_v,
        r.cond_ii_slack,
        r.face_bound_relaxation,
        r.cond_iii.open_components.len(),
        r.cond_iii.gamma_nodes.len(),
        r.cond_iii.covers_v
    );
    for (i, f) in r.per_component_net_flux.iter().enumerate() {
        let _ = writeln!(s, "net_flux_{i}={f:e}");
    }
    s
}

fn coarea_summary(r: &CoareaReport) -> String {
    let mut s = format!(
        "coarea_residual={}\nvariation={}\nlevel_integral={}\n",
        r.residual, r.variation, r.level_integral
    );
    for (i, l) in r.lemma.iter().enumerate() {
        let d = l.deviations;
        let _ = writeln!(
            s,
            "lemma_{i}=lambda:{} area:{} deviations:{},{},{} holds:{}",
            l.lambda,
            l.area,
            d[0],
            d[1],
            d[2],
            l.holds()
        );
    }
    s
}

fn convergence_summary(r: &ConvergenceReport) -> String {
    let mut s = String::new();
    for row in &r.rows {
        let flux = row.flux.iter().fold(0.0f64, |m, f| m.max(f.abs()));
        let _ = writeln!(
            s,
            "K={} distance={:e} energy_gap={:e} grad_norm_ratio={} max_flux={:e}",
            row.contrast, row.distance, row.energy_gap, row.grad_norm_ratio, flux
        );
    }
    let _ = writeln!(
        s,
        "strictly_decreasing={}\nbound={}\nbound_holds={}",
        r.strictly_decreasing(),
        r.bound,
        r.bound_holds()
    );
    s
}

/// Seconds of wall time the inversion may take for the preset's acceptance
/// runs (single-threaded).
fn runtime_budget(preset: Preset) -> Option<(f64, &'static str)> {
    match preset {
        Preset::DiskExample => Some((120.0, "120")),
        Preset::NoInclusion => Some((20.0, "20")),
        _ => None,
    }
}

/// Runs the whole chain for the preset, writing artifacts to `out`, and
/// returns the checks for the report.
pub fn pipeline(s: &Settings, out: &mut Outputs) -> Result<Vec<Check>> {
    let (preset, n) = (s.preset, s.n);
    let mut checks = Vec::new();

    // phantom
    let problem = preset.problem(n)?;
    let phantom = if preset == Preset::DiskExample {
        Some(example_phantom(n)?)
    } else {
        None
    };
    out.write(io::PAIR_GEOMETRY, &io::geometry_to_cdf(&problem.geometry))?;
    out.write("sigma_true.cdf", &io::field_to_cdf(&problem.sigma))?;

    // forward (limit)
    let limit = solve_limit(&problem)?;
    out.write("u_limit.cdf", &io::field_to_cdf(&limit.u))?;
    let flux = limit
        .per_component_flux
        .iter()
        .fold(0.0f64, |m, f| m.max(f.abs()));
    checks.push(Check::at_most("limit_flux_max", flux, 1e-10, "1e-10"));

    // synthesize
    let (pair, exact_u, exact_sigma) = match &phantom {
        Some(ph) => (ph.pair.clone(), ph.exact_u.clone(), ph.exact_sigma.clone()),
        None => (
            synthesize_magnitude(&limit, &problem, s.extension)?,
            limit.u.clone(),
            problem.sigma.clone(),
        ),
    };
    out.write_pair(&pair)?;
    out.write("u_true.cdf", &io::field_to_cdf(&exact_u))?;
    let adm = check_admissibility(&pair, &exact_sigma, &exact_u)?;
    out.write("admissibility.txt", &admissibility_summary(&adm))?;
    checks.push(Check::equals(
        "admissibility",
        adm.verdict,
        Verdict::Admissible,
    ));

    // invert + classify
    let th = thresholds(s, &pair);
    let start = Instant::now();
    let (res, clipped) = reconstruct(&pair, &s.solver, &th)?;
    let elapsed = start.elapsed().as_secs_f64();
    write_reconstruction(out, &res, clipped)?;
    checks.push(Check::holds("converged", res.converged));
    checks.push(Check::at_most(
        "max_principle_violation",
        res.max_principle_violation,
        1e-8,
        "1e-8",
    ));
    let m = InversionMetrics::compute(&pair.geometry, &exact_u, &exact_sigma, &res);
    checks.push(Check::at_most("u_rel_err", m.u_rel_err, 0.05, "0.05"));
    checks.push(Check::at_most(
        "sigma_rel_err",
        m.sigma_rel_err,
        0.10,
        "0.10",
    ));
    for (i, mt) in m.matches.iter().enumerate() {
        let label = mt.label.map_or("none".to_string(), |l| l.to_string());
        checks.push(Check::equals(
            &format!("inclusion_{i}_label"),
            label,
            mt.expected_label(),
        ));
        checks.push(Check::at_least(
            &format!("inclusion_{i}_jaccard"),
            mt.jaccard,
            0.9,
            "0.9",
        ));
    }
    checks.push(Check::at_most(
        "spurious_components",
        m.spurious as f64,
        0.0,
        "0",
    ));
    if let Some((budget, text)) = runtime_budget(preset) {
        checks.push(Check::at_most("invert_runtime_s", elapsed, budget, text));
    }

    // verify
    let coarea = coarea_check(&pair.a, &res.u, s.levels)?;
    out.write("coarea.txt", &coarea_summary(&coarea))?;
    checks.push(Check::at_most(
        "coarea_residual",
        coarea.residual,
        0.02,
        "0.02",
    ));
    checks.push(Check::holds("coarea_lemma", coarea.lemma_holds()));

    let reports = bump_minimality(&pair, &res.u, &th, s)?;
    let worst = reports
        .iter()
        .map(|r| r.fraction_holding())
        .fold(1.0, f64::min);
    checks.push(Check::at_least(
        "minimality_min_fraction",
        worst,
        0.95,
        "0.95",
    ));

    if !problem.geometry.u_components.is_empty() {
        let conv = convergence_study(&problem, &[10.0, 100.0, 1000.0])?;
        out.write("convergence.csv", &conv.to_csv())?;
        let e: Vec<f64> = conv.rows.iter().map(|r| r.distance).collect();
        checks.push(Check::holds(
            "convergence_strictly_decreasing",
            conv.strictly_decreasing(),
        ));
        checks.push(Check::at_most(
            "convergence_ratio_1e3_over_10",
            e[2] / e[0],
            0.1,
            "0.1",
        ));
        checks.push(Check::holds("grad_ratio_within_bound", conv.bound_holds()));
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<RunConfig, UsageError> {
        parse_config(std::iter::once("cdii").chain(args.iter().copied()))
    }

    #[test]
    fn phantom_flags() {
        let c = parse(&[
            "phantom",
            "--preset",
            "disk-example",
            "--n",
            "201",
            "--out",
            "ph/",
        ])
        .unwrap();
        assert!(matches!(c.command, Command::Phantom));
        assert_eq!(c.settings.n, 201);
        assert_eq!(c.settings.preset, Preset::DiskExample);
        assert_eq!(c.settings.out.as_deref(), Some(Path::new("ph/")));
    }

    #[test]
    fn bad_number_names_the_flag() {
        let Err(UsageError::Clap(e)) = parse(&["invert", "--gap-tol", "banana"]) else {
            panic!("expected a usage error")
        };
        assert!(e.use_stderr());
        assert!(e.to_string().contains("--gap-tol"), "{e}");
    }

    #[test]
    fn flags_override_file_over_defaults() {
        let file = parse_config_file("# solver\ngap_tol = 1e-5\nmax-iters = 7  # short\n").unwrap();
        let o = Overrides {
            gap_tol: Some(1e-7),
            ..Default::default()
        };
        let s = resolve(&o, &file).unwrap();
        assert_eq!(s.solver.gap_tol, 1e-7);
        assert_eq!(s.solver.max_iters, 7);
        assert_eq!(s.solver.theta, 1.0);
        assert_eq!(s.levels, 200);
    }

    #[test]
    fn unknown_and_malformed_config_entries_are_rejected() {
        assert!(
            matches!(parse_config_file("colour = blue"), Err(UsageError::Message(m)) if m.contains("colour"))
        );
        assert!(parse_config_file("n 5").is_err());
        assert!(parse_config_file("n = 5\nn = 6").is_err());
        let file = parse_config_file("theta = lots").unwrap();
        assert!(
            matches!(resolve(&Overrides::default(), &file), Err(UsageError::Message(m)) if m.contains("theta"))
        );
    }

    #[test]
    fn out_of_range_values_are_usage_errors() {
        for args in [
            &["invert", "--pair", ".", "--theta", "2"][..],
            &["pipeline", "--threads", "0"],
            &["pipeline", "--gap-tol=-1"],
        ] {
            assert!(
                matches!(parse(args), Err(UsageError::Message(_))),
                "{args:?}"
            );
        }
        assert!(
            matches!(parse(&["invert", "--pair", "/nonexistent/pair"]), Err(UsageError::Message(m)) if m.contains("--pair"))
        );
    }
}
