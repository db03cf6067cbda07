//! Run configuration, output formats and the `run` / `verify` / `sweep`
//! commands.
//!
//! Config files hold one `key = value` per line; `#` starts a comment.
//!
//! | key | value | default |
//! |---|---|---|
//! | `model` | `caginalp`, `entropy <ell>`, `penrose_fife`, `decoupled_quadratic` | required |
//! | `potential` | `double_well`, `logarithmic`, `double_obstacle` | required |
//! | `grid` | `<d> <n>` | required |
//! | `tau` | step size | required |
//! | `steps` | number of steps | required |
//! | `eps` | regularization | `0` |
//! | `eps_list` | comma-separated, nonincreasing | none |
//! | `s0`, `chi0` | initial preset | `mode 1 amplitude 0.2 mean 1.5` / `... mean 0.5` |
//! | `tol_s`, `tol_chi` | residual tolerances | `1e-9` |
//! | `max_outer`, `max_inner` | iteration caps | `200`, `100` |
//! | `barrier_fraction` | in `(0, 1)` | `0.9` |
//! | `out` | output directory | `out` |
//! | `snapshot_every` | snapshot period in steps, `0` for first and last only | `0` |
//!
//! Initial presets:
//! `uniform <c>`, `mode <kx> [<ky>] amplitude <a> [mean <c>]`,
//! `random seed <seed> amplitude <a> [mean <c>]` (nodewise
//! `mean + a (2u - 1)` with `u` from [`Lcg`] in node order) and
//! `file <path>` (a snapshot written by `run`).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::energy::State;
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::harness::{self, TrialReport};
use crate::metric::SpectralPlan;
use crate::models::{EnergyModel, Potential};
use crate::par::{with_thread_cap, Exec};
use crate::rng::Lcg;
use crate::stepper::{run, trajectory_distance, StepOptions, Trajectory};

pub const SNAPSHOT_MAGIC: &str = "# entroflow v1";

#[derive(Clone, Debug, PartialEq)]
pub enum InitialSpec {
    Uniform(f64),
    Mode { k: Vec<usize>, amplitude: f64, mean: f64 },
    Random { seed: u64, amplitude: f64, mean: f64 },
    File(PathBuf),
}

impl InitialSpec {
    /// `column` selects the snapshot column read by `file` presets.
    fn build(&self, grid: Grid, column: SnapshotColumn) -> Result<Field> {
        match self {
            InitialSpec::Uniform(c) => Ok(Field::constant(grid, *c)),
            InitialSpec::Mode { k, amplitude, mean } => {
                let q = grid.try_cosine_mode(k)?;
                q.map(|v| mean + amplitude * v)
            }
            InitialSpec::Random { seed, amplitude, mean } => {
                let mut rng = Lcg::new(*seed);
                Field::new(grid, (0..grid.len()).map(|_| rng.next_centered(*mean, *amplitude)).collect())
            }
            InitialSpec::File(path) => read_snapshot_column(path, grid, column),
        }
    }
}

impl fmt::Display for InitialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialSpec::Uniform(c) => write!(f, "uniform {c:?}"),
            InitialSpec::Mode { k, amplitude, mean } => {
                f.write_str("mode")?;
                for ki in k {
                    write!(f, " {ki}")?;
                }
                write!(f, " amplitude {amplitude:?} mean {mean:?}")
            }
            InitialSpec::Random { seed, amplitude, mean } => {
                write!(f, "random seed {seed} amplitude {amplitude:?} mean {mean:?}")
            }
            InitialSpec::File(p) => write!(f, "file {}", p.display()),
        }
    }
}

fn parse_f64(word: &str) -> std::result::Result<f64, String> {
    let v: f64 = word.parse().map_err(|_| format!("`{word}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{word}` is not finite"))
    }
}

pub fn parse_initial(text: &str) -> std::result::Result<InitialSpec, String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    // `amplitude <a> [mean <c>]`; the mean defaults to 0.
    let keyed = |rest: &[&str]| -> std::result::Result<(f64, f64), String> {
        let mut amplitude = None;
        let mut mean = 0.0;
        for pair in rest.chunks(2) {
            match pair {
                ["amplitude", v] => amplitude = Some(parse_f64(v)?),
                ["mean", v] => mean = parse_f64(v)?,
                _ => return Err(format!("unexpected `{}` in initial preset", pair.join(" "))),
            }
        }
        let a = amplitude.ok_or("initial preset needs `amplitude <a>`")?;
        Ok((a, mean))
    };
    match words.as_slice() {
        ["uniform", c] => Ok(InitialSpec::Uniform(parse_f64(c)?)),
        ["mode", rest @ ..] => {
            let split = rest.iter().position(|w| w.parse::<usize>().is_err()).unwrap_or(rest.len());
            let k: Vec<usize> = rest[..split].iter().map(|w| w.parse().unwrap()).collect();
            if k.is_empty() || k.len() > 2 {
                return Err("mode preset needs one or two mode indices".into());
            }
            let (amplitude, mean) = keyed(&rest[split..])?;
            Ok(InitialSpec::Mode { k, amplitude, mean })
        }
        ["random", "seed", seed, rest @ ..] => {
            let seed: u64 = seed.parse().map_err(|_| format!("`{seed}` is not a seed"))?;
            let (amplitude, mean) = keyed(rest)?;
            Ok(InitialSpec::Random { seed, amplitude, mean })
        }
        ["file", _, ..] => Ok(InitialSpec::File(PathBuf::from(text.trim()["file".len()..].trim()))),
        _ => Err(format!("unknown initial preset `{text}`")),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: EnergyModel,
    pub potential: Potential,
    pub dims: usize,
    pub n: usize,
    pub tau: f64,
    pub steps: usize,
    pub eps: f64,
    pub eps_list: Option<Vec<f64>>,
    pub s0: InitialSpec,
    pub chi0: InitialSpec,
    pub tol_s: f64,
    pub tol_chi: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub barrier_fraction: f64,
    pub out: PathBuf,
    pub snapshot_every: usize,
}

const REQUIRED: [&str; 5] = ["model", "potential", "grid", "tau", "steps"];
const KEYS: [&str; 16] = [
    "model",
    "potential",
    "grid",
    "tau",
    "steps",
    "eps",
    "eps_list",
    "s0",
    "chi0",
    "tol_s",
    "tol_chi",
    "max_outer",
    "max_inner",
    "barrier_fraction",
    "out",
    "snapshot_every",
];

impl RunConfig {
    /// Caginalp / double-well on a 1D grid of 32 cells, 20 steps of 0.01.
    pub fn default_caginalp() -> RunConfig {
        let defaults = StepOptions::new(0.01);
        RunConfig {
            model: EnergyModel::Caginalp,
            potential: Potential::DoubleWell,
            dims: 1,
            n: 32,
            tau: 0.01,
            steps: 20,
            eps: 0.0,
            eps_list: None,
            s0: InitialSpec::Mode { k: vec![1], amplitude: 0.2, mean: 1.5 },
            chi0: InitialSpec::Mode { k: vec![1], amplitude: 0.2, mean: 0.5 },
            tol_s: defaults.tol_s,
            tol_chi: defaults.tol_chi,
            max_outer: defaults.max_outer,
            max_inner: defaults.max_inner,
            barrier_fraction: defaults.barrier_fraction,
            out: PathBuf::from("out"),
            snapshot_every: 0,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dims, self.n)
    }

    pub fn step_options(&self) -> StepOptions {
        StepOptions {
            tau: self.tau,
            eps: self.eps,
            tol_s: self.tol_s,
            tol_chi: self.tol_chi,
            max_outer: self.max_outer,
            max_inner: self.max_inner,
            barrier_fraction: self.barrier_fraction,
        }
    }

    pub fn initial_state(&self) -> Result<State> {
        let grid = self.grid()?;
        State::new(self.s0.build(grid, SnapshotColumn::S)?, self.chi0.build(grid, SnapshotColumn::Chi)?)
    }

    /// Assigns one key; `value` is the text after `=`.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        let uint = |w: &str| w.parse::<usize>().map_err(|_| format!("`{w}` is not a nonnegative integer"));
        match key {
            "model" => self.model = v.parse()?,
            "potential" => self.potential = v.parse()?,
            "grid" => {
                let w: Vec<&str> = v.split_whitespace().collect();
                let [d, n] = w.as_slice() else {
                    return Err("grid takes `<d> <n>`".into());
                };
                self.dims = uint(d)?;
                self.n = uint(n)?;
            }
            "tau" => self.tau = parse_f64(v)?,
            "steps" => self.steps = uint(v)?,
            "eps" => self.eps = parse_f64(v)?,
            "eps_list" => {
                let list = v
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|w| !w.is_empty())
                    .map(parse_f64)
                    .collect::<std::result::Result<Vec<f64>, String>>()?;
                if list.is_empty() {
                    return Err("eps_list is empty".into());
                }
                self.eps_list = Some(list);
            }
            "s0" => self.s0 = parse_initial(v)?,
            "chi0" => self.chi0 = parse_initial(v)?,
            "tol_s" => self.tol_s = parse_f64(v)?,
            "tol_chi" => self.tol_chi = parse_f64(v)?,
            "max_outer" => self.max_outer = uint(v)?,
            "max_inner" => self.max_inner = uint(v)?,
            "barrier_fraction" => self.barrier_fraction = parse_f64(v)?,
            "out" => {
                if v.is_empty() {
                    return Err("out needs a directory".into());
                }
                self.out = PathBuf::from(v);
            }
            "snapshot_every" => self.snapshot_every = uint(v)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Range and feasibility checks; presets other than `file` are sampled
    /// and checked against the model and potential domains.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let grid = self.grid().map_err(|e| e.to_string())?;
        self.step_options().validate_for(&self.potential).map_err(|e| e.to_string())?;
        if let Some(list) = &self.eps_list {
            if !list.windows(2).all(|w| w[1] <= w[0]) || list.iter().any(|&e| e < 0.0) {
                return Err("eps_list must be nonincreasing and nonnegative".into());
            }
        }
        let preset = |spec: &InitialSpec, col| -> std::result::Result<Option<Field>, String> {
            match spec {
                InitialSpec::File(_) => Ok(None),
                other => other.build(grid, col).map(Some).map_err(|e| e.to_string()),
            }
        };
        let s = preset(&self.s0, SnapshotColumn::S)?;
        let chi = preset(&self.chi0, SnapshotColumn::Chi)?;
        if let Some(chi) = &chi {
            if let Some(i) = chi.values().iter().position(|&c| !self.potential.in_domain(c)) {
                return Err(format!(
                    "chi0 = {} at node {i} is outside the domain of {}",
                    chi.values()[i],
                    self.potential
                ));
            }
        }
        if let (Some(s), Some(chi)) = (&s, &chi) {
            let u = State::new(s.clone(), chi.clone()).map_err(|e| e.to_string())?;
            if let Some(i) = u.first_infeasible(&self.model, &self.potential) {
                return Err(format!(
                    "initial state infeasible for {} at node {i}: s0 = {}, chi0 = {}",
                    self.model,
                    s.values()[i],
                    chi.values()[i]
                ));
            }
        }
        Ok(())
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model = {}", self.model)?;
        writeln!(f, "potential = {}", self.potential)?;
        writeln!(f, "grid = {} {}", self.dims, self.n)?;
        writeln!(f, "tau = {:?}", self.tau)?;
        writeln!(f, "steps = {}", self.steps)?;
        writeln!(f, "eps = {:?}", self.eps)?;
        if let Some(list) = &self.eps_list {
            let items: Vec<String> = list.iter().map(|e| format!("{e:?}")).collect();
            writeln!(f, "eps_list = {}", items.join(", "))?;
        }
        writeln!(f, "s0 = {}", self.s0)?;
        writeln!(f, "chi0 = {}", self.chi0)?;
        writeln!(f, "tol_s = {:?}", self.tol_s)?;
        writeln!(f, "tol_chi = {:?}", self.tol_chi)?;
        writeln!(f, "max_outer = {}", self.max_outer)?;
        writeln!(f, "max_inner = {}", self.max_inner)?;
        writeln!(f, "barrier_fraction = {:?}", self.barrier_fraction)?;
        writeln!(f, "out = {}", self.out.display())?;
        writeln!(f, "snapshot_every = {}", self.snapshot_every)
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default_caginalp();
    let mut seen: Vec<&str> = Vec::new();
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        last_line = line;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| Error::Config { line, message };
        let (key, value) =
            content.split_once('=').ok_or_else(|| err(format!("expected `key = value`, found `{content}`")))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(err(format!("unknown key `{key}`")));
        }
        if seen.contains(&key) {
            return Err(err(format!("duplicate key `{key}`")));
        }
        seen.push(key);
        cfg.set(key, value).map_err(err)?;
    }
    for key in REQUIRED {
        if !seen.contains(&key) {
            return Err(Error::Config { line: last_line, message: format!("missing required key `{key}`") });
        }
    }
    cfg.validate().map_err(Error::InvalidConfig)?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Output formats

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SnapshotColumn {
    S,
    Chi,
}

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn snapshot_text(u: &State, t: f64) -> String {
    let grid = u.grid();
    let mut out = format!("{SNAPSHOT_MAGIC} d={} n={} t={}\n", grid.dims(), grid.n(), float(t));
    for i in 0..grid.len() {
        let c = grid.coords(i);
        for x in &c[..grid.dims()] {
            out.push_str(&float(*x));
            out.push(',');
        }
        out.push_str(&float(u.s().values()[i]));
        out.push(',');
        out.push_str(&float(u.chi().values()[i]));
        out.push('\n');
    }
    out
}

/// Reads a snapshot; returns its grid and time together with the state.
pub fn parse_snapshot(text: &str) -> Result<(State, f64)> {
    let bad = |line: usize, message: String| Error::Config { line, message };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(1, "empty snapshot".into()))?;
    let rest = header
        .strip_prefix(SNAPSHOT_MAGIC)
        .ok_or_else(|| bad(1, format!("snapshot header must start with `{SNAPSHOT_MAGIC}`")))?;
    let (mut d, mut n, mut t) = (None, None, None);
    for item in rest.split_whitespace() {
        match item.split_once('=') {
            Some(("d", v)) => d = v.parse::<usize>().ok(),
            Some(("n", v)) => n = v.parse::<usize>().ok(),
            Some(("t", v)) => t = v.parse::<f64>().ok(),
            _ => return Err(bad(1, format!("unexpected header item `{item}`"))),
        }
    }
    let (Some(d), Some(n), Some(t)) = (d, n, t) else {
        return Err(bad(1, "header needs d=, n= and t=".into()));
    };
    let grid = Grid::new(d, n)?;
    let (mut s, mut chi) = (Vec::with_capacity(grid.len()), Vec::with_capacity(grid.len()));
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != d + 2 {
            return Err(bad(i + 2, format!("expected {} columns", d + 2)));
        }
        let num = |w: &str| parse_f64(w.trim()).map_err(|m| bad(i + 2, m));
        s.push(num(cols[d])?);
        chi.push(num(cols[d + 1])?);
    }
    if s.len() != grid.len() {
        return Err(Error::InvalidField(format!("snapshot has {} rows, grid needs {}", s.len(), grid.len())));
    }
    Ok((State::new(Field::new(grid, s)?, Field::new(grid, chi)?)?, t))
}

fn read_snapshot_column(path: &Path, grid: Grid, column: SnapshotColumn) -> Result<Field> {
    let (u, _) = parse_snapshot(&fs::read_to_string(path)?)?;
    if u.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let (s, chi) = u.into_parts();
    Ok(match column {
        SnapshotColumn::S => s,
        SnapshotColumn::Chi => chi,
    })
}

// ---------------------------------------------------------------------------
// Commands

/// Worker cap from `ENTROFLOW_THREADS` (default 1).
pub fn thread_cap() -> Result<usize> {
    match std::env::var("ENTROFLOW_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t >= 1 => Ok(t),
            _ => Err(Error::InvalidParameter(format!("ENTROFLOW_THREADS = `{v}` is not a positive integer"))),
        },
    }
}

fn exec_for(threads: usize) -> Exec {
    if threads > 1 {
        Exec::Parallel
    } else {
        Exec::Sequential
    }
}

/// Runs the configured problem once.
pub fn simulate(cfg: &RunConfig) -> Result<(SpectralPlan, Trajectory)> {
    let grid = cfg.grid()?;
    let plan = SpectralPlan::new(grid);
    let u0 = cfg.initial_state()?;
    let traj = run(&cfg.model, &cfg.potential, &plan, &u0, cfg.tau * cfg.steps as f64, cfg.steps, &cfg.step_options())?;
    Ok((plan, traj))
}

fn write_outputs(cfg: &RunConfig, traj: &Trajectory, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("diagnostics.csv"), traj.csv())?;
    let last = traj.states.len() - 1;
    for (n, u) in traj.states.iter().enumerate() {
        let periodic = cfg.snapshot_every > 0 && n % cfg.snapshot_every == 0;
        if n == 0 || n == last || periodic {
            fs::write(dir.join(format!("snapshot_{n:06}.csv")), snapshot_text(u, traj.times[n]))?;
        }
    }
    Ok(())
}

/// `run`: writes `diagnostics.csv` and snapshots into `out` (or the config's
/// output directory).
pub fn cmd_run(cfg: &RunConfig, out: Option<&Path>) -> Result<Trajectory> {
    let (_, traj) = simulate(cfg)?;
    write_outputs(cfg, &traj, out.unwrap_or(&cfg.out))?;
    Ok(traj)
}

pub const SUITES: [&str; 11] = [
    "spectral",
    "prox",
    "dissipation",
    "conservation",
    "feasibility",
    "manufactured",
    "caginalp",
    "continuous_dependence",
    "eps_continuation",
    "chain_rule",
    "estimates",
];

/// Executes a named suite. With a config, the trajectory suites
/// (`dissipation`, `conservation`, `feasibility`, `estimates`) audit the
/// configured run; otherwise they use built-in problems.
pub fn run_suite(suite: &str, cfg: Option<&RunConfig>, exec: Exec) -> Result<TrialReport> {
    let base = cfg.cloned().unwrap_or_else(RunConfig::default_caginalp);
    let audits = || -> Result<Vec<harness::RunAudit>> {
        match cfg {
            Some(c) => {
                let (plan, traj) = simulate(c)?;
                Ok(vec![harness::audit_run(&plan, &traj)?])
            }
            None => harness::combination_audits(Grid::new(1, 32)?, 0.5, 50, &StepOptions::new(0.01), exec),
        }
    };
    let grid32 = Grid::new(1, 32)?;
    let plan32 = SpectralPlan::new(grid32);
    match suite {
        "spectral" => harness::spectral_suite(64, exec),
        "prox" => harness::prox_suite(0x5eed),
        "dissipation" => Ok(harness::dissipation_report(&audits()?)),
        "conservation" => Ok(harness::conservation_report(&audits()?)),
        "feasibility" => Ok(harness::feasibility_report(&audits()?)),
        "manufactured" => {
            let plan = SpectralPlan::new(Grid::new(1, 16)?);
            let opts = StepOptions::new(0.01);
            let mut r = harness::manufactured_heat_decay(&plan, &[1], 1.0, 1.0, 100, 0.0, &opts)?;
            let sup =
                harness::manufactured_superposition(&plan, &[(vec![1], 1.0), (vec![3], -0.5)], 1.0, 100, 0.1, &opts)?;
            r.absorb("superposition_", sup);
            Ok(r)
        }
        "caginalp" => {
            let (theta, chi) = harness::smooth_caginalp_data(grid32, 7);
            let opts = StepOptions::new(0.025).with_tolerances(1e-10, 1e-10);
            harness::caginalp_tolerance_scaling(&plan32, &theta, &chi, 0.5, 20, &opts, exec)
        }
        "continuous_dependence" => {
            let opts = StepOptions::new(0.05);
            let mut r = TrialReport::new("continuous_dependence");
            for m in [EnergyModel::Caginalp, EnergyModel::Entropy { ell: 0.2 }] {
                let t = harness::continuous_dependence_study(
                    &m,
                    &Potential::DoubleWell,
                    grid32,
                    1.0,
                    20,
                    &opts,
                    &[1e-4, 1e-3, 1e-2],
                    exec,
                )?;
                r.absorb(&format!("{}:", m.name()), t);
            }
            Ok(r)
        }
        "eps_continuation" => {
            let (theta, chi) = harness::smooth_caginalp_data(grid32, 7);
            let u0 = State::new(theta.plus_scaled(1.0, &chi)?, chi)?;
            harness::eps_continuation_trial(
                &EnergyModel::Caginalp,
                &Potential::DoubleWell,
                &plan32,
                &u0,
                0.5,
                20,
                &StepOptions::new(0.025),
                &[1e-1, 1e-2, 1e-3],
                exec,
            )
        }
        "chain_rule" => {
            let (theta, chi) = harness::smooth_caginalp_data(grid32, 7);
            let u0 = State::new(theta.plus_scaled(1.0, &chi)?, chi)?;
            harness::chain_rule_trial(
                &EnergyModel::Caginalp,
                &Potential::DoubleWell,
                &plan32,
                &u0,
                0.2,
                20,
                &StepOptions::new(0.01),
                exec,
            )
        }
        "estimates" => {
            let (plan, traj) = simulate(&base)?;
            harness::estimate_suite(&base.model, &base.potential, &plan, &traj)
        }
        other => Err(Error::InvalidParameter(format!("unknown suite `{other}` (known: {}, all)", SUITES.join(", ")))),
    }
}

/// `verify`: returns the output lines and whether every quantity passed.
pub fn cmd_verify(suite: &str, cfg: Option<&RunConfig>) -> Result<(Vec<String>, bool)> {
    let threads = thread_cap()?;
    let exec = exec_for(threads);
    let names: Vec<&str> = if suite == "all" { SUITES.to_vec() } else { vec![suite] };
    with_thread_cap(threads, || {
        let mut lines = Vec::new();
        let mut ok = true;
        for name in names {
            let report = run_suite(name, cfg, exec)?;
            ok &= report.passed();
            lines.extend(report.lines(name));
        }
        Ok((lines, ok))
    })
}

/// One `--vary key=v1,v2,...` axis.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(text: &str) -> std::result::Result<Self, String> {
        let (key, values) = text.split_once('=').ok_or("--vary takes `key=v1,v2,...`")?;
        let key = key.trim().to_string();
        if !KEYS.contains(&key.as_str()) || key == "out" || key == "eps_list" {
            return Err(format!("cannot sweep over `{key}`"));
        }
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(format!("no values given for `{key}`"));
        }
        Ok(SweepAxis { key, values })
    }
}

pub const SUMMARY_FIXED_COLUMNS: &str =
    "steps,final_energy,energy_drop,max_residual_s,max_residual_chi,distance_to_base";

/// `sweep`: runs the unvaried config and every cell of the cross product,
/// writing `cell_XXX/` outputs and `summary.csv` into `out`.
pub fn cmd_sweep(cfg: &RunConfig, axes: &[SweepAxis], out: Option<&Path>) -> Result<Vec<String>> {
    let mut cells: Vec<Vec<&str>> = vec![Vec::new()];
    for axis in axes {
        cells = cells
            .iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push(v.as_str());
                    c
                })
            })
            .collect();
    }
    let mut configs = Vec::with_capacity(cells.len());
    for cell in &cells {
        let mut c = cfg.clone();
        for (axis, v) in axes.iter().zip(cell) {
            c.set(&axis.key, v).map_err(|message| Error::InvalidConfig(format!("{}: {message}", axis.key)))?;
        }
        c.validate().map_err(Error::InvalidConfig)?;
        configs.push(c);
    }
    let dir = out.unwrap_or(&cfg.out).to_path_buf();
    fs::create_dir_all(&dir)?;
    let threads = thread_cap()?;
    let exec = exec_for(threads);
    let (base, results) = with_thread_cap(threads, || {
        let base = simulate(cfg);
        let indexed: Vec<(usize, &RunConfig)> = configs.iter().enumerate().collect();
        let results = exec.map(&indexed, |(i, c)| -> Result<Trajectory> {
            let (_, traj) = simulate(c)?;
            write_outputs(c, &traj, &dir.join(format!("cell_{i:03}")))?;
            Ok(traj)
        });
        (base, results)
    });
    let (plan, base) = base?;
    let mut header = String::from("cell");
    for axis in axes {
        header.push(',');
        header.push_str(&axis.key);
    }
    header.push(',');
    header.push_str(SUMMARY_FIXED_COLUMNS);
    let mut rows = vec![header];
    for (i, (cell, traj)) in cells.iter().zip(results).enumerate() {
        let traj = traj?;
        let d = if traj.states.len() == base.states.len() && traj.states[0].grid() == plan.grid() {
            trajectory_distance(&plan, &traj, &base)?
        } else {
            f64::NAN
        };
        let first = &traj.diagnostics[0];
        let last = traj.diagnostics.last().expect("nonempty");
        let max_rs = traj.certificates.iter().fold(0.0, |m: f64, c| m.max(c.residual_s));
        let max_rc = traj.certificates.iter().fold(0.0, |m: f64, c| m.max(c.residual_chi));
        let mut row = format!("{i}");
        for v in cell {
            row.push(',');
            row.push_str(v);
        }
        row.push_str(&format!(
            ",{},{},{},{},{},{}",
            traj.steps(),
            float(last.energy_eps),
            float(first.energy_eps - last.energy_eps),
            float(max_rs),
            float(max_rc),
            float(d)
        ));
        rows.push(row);
    }
    let mut text = rows.join("\n");
    text.push('\n');
    fs::write(dir.join("summary.csv"), &text)?;
    Ok(rows)
}

/// Process exit status for an error: 3 for solver failures, 2 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_solver_failure() {
        3
    } else {
        2
    }
}
