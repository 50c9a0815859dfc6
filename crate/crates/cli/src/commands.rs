//! The five batch commands and their artifacts.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bbe_core::evolution::{evolve, make_initial_field, EvolveOptions, STABILITY_LIMIT};
use bbe_core::generators::{build_me_generator, build_standard_generator, compare_generators, Generator, StandardVariant};
use bbe_core::kernel::{KernelTensor, RateMode, RateTable, TensorMeta};
use bbe_core::verification::run_suite;
use clap::ValueEnum;

use crate::config::{ConfigError, GeneratorKind, RunSpec};
use crate::plot::{line_chart, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Build (or load from cache) the kernel tensor.
    Kernel,
    /// Tabulate loss rates and relaxation rates per grid node.
    Rates,
    /// Integrate the velocity-resolved density matrix.
    Evolve,
    /// Run the invariant suite.
    Verify,
    /// Compare the master-equation and standard generators.
    Compare,
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Numerical(bbe_core::Error),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(ConfigError::Read { .. }) => 4,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Numerical(e) => write!(f, "numerical failure: {e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<bbe_core::Error> for CliError {
    fn from(e: bbe_core::Error) -> Self {
        match e {
            bbe_core::Error::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Numerical(other),
        }
    }
}

fn io_err(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

/// Run-time switches from the command line.
#[derive(Debug, Clone, Default)]
pub struct Flags {
    pub no_cache: bool,
}

/// Outcome of a command that completed without error.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// 0, or 3 when `verify` found a failing check.
    pub exit_code: u8,
    pub files: Vec<PathBuf>,
}

pub fn run(command: Command, spec: &RunSpec, flags: &Flags) -> Result<Outcome, CliError> {
    let out = &spec.output.dir;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    match command {
        Command::Kernel => kernel(spec, flags),
        Command::Rates => rates(spec, flags),
        Command::Evolve => evolve_cmd(spec, flags),
        Command::Verify => verify(spec, flags),
        Command::Compare => compare(spec, flags),
    }
}

pub struct CachedTensor {
    pub tensor: KernelTensor,
    pub hit: bool,
    pub path: Option<PathBuf>,
}

/// Loads the tensor from the cache when the provenance matches, otherwise
/// builds it and stores it. Unreadable cache files are rebuilt with a warning.
pub fn load_or_build_tensor(spec: &RunSpec, flags: &Flags) -> Result<CachedTensor, CliError> {
    let meta = TensorMeta::new(&spec.gas, &spec.amplitude, &spec.grid, spec.quadrature);
    let use_cache = spec.output.cache && !flags.no_cache;
    let path = spec.output.cache_dir.join(format!("kernel-{}.bbe", meta.cache_key()));
    if use_cache && path.exists() {
        match KernelTensor::load(&path) {
            Ok(t) if *t.meta() == meta => {
                log::info!("kernel cache hit: {}", path.display());
                return Ok(CachedTensor { tensor: t, hit: true, path: Some(path) });
            }
            Ok(_) => log::warn!("cache file {} has foreign provenance; rebuilding", path.display()),
            Err(e) => log::warn!("cache file {} is unreadable ({e}); rebuilding", path.display()),
        }
    }
    log::info!("building kernel tensor on {} nodes", spec.grid.len());
    let tensor = KernelTensor::build(&spec.gas, &spec.amplitude, &spec.grid, spec.quadrature)?;
    if use_cache {
        tensor.save(&path)?;
        Ok(CachedTensor { tensor, hit: false, path: Some(path) })
    } else {
        Ok(CachedTensor { tensor, hit: false, path: None })
    }
}

fn rate_table(spec: &RunSpec, tensor: &KernelTensor) -> Result<RateTable, CliError> {
    Ok(match spec.run.rate_mode {
        RateMode::DiscreteConsistent => RateTable::discrete(tensor, &spec.grid, &spec.gas, &spec.amplitude)?,
        RateMode::Continuum => RateTable::continuum(&spec.grid, &spec.gas, &spec.amplitude)?,
    })
}

fn kernel(spec: &RunSpec, flags: &Flags) -> Result<Outcome, CliError> {
    let c = load_or_build_tensor(spec, flags)?;
    let t = &c.tensor;
    let n = t.levels();
    let mut max_pop = 0.0f64;
    let mut min_pop = f64::INFINITY;
    for i in 0..t.nodes() {
        for l in 0..t.nodes() {
            for m in 0..n {
                for j in 0..n {
                    let x = t.population(i, l, m, j);
                    max_pop = max_pop.max(x);
                    min_pop = min_pop.min(x);
                }
            }
        }
    }
    let mut s = String::new();
    s += &format!("cache_key = {}\n", t.meta().cache_key());
    s += &format!("model_hash = {}\n", t.meta().model_hash);
    s += &format!("grid_hash = {}\n", t.meta().grid_hash);
    s += &format!("levels = {n}\n");
    s += &format!("nodes = {}\n", t.nodes());
    s += &format!("population.max = {max_pop:.16e}\n");
    s += &format!("population.min = {min_pop:.16e}\n");
    let summary = spec.output.dir.join("kernel_summary.txt");
    write_file(&summary, &s)?;
    println!("kernel: {} levels, {} nodes, cache {}", n, t.nodes(), if c.hit { "hit" } else { "miss" });
    if let Some(p) = &c.path {
        println!("tensor: {}", p.display());
    }
    let mut files = vec![summary];
    files.extend(c.path);
    Ok(Outcome { exit_code: 0, files })
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn rates(spec: &RunSpec, flags: &Flags) -> Result<Outcome, CliError> {
    let n = spec.gas.levels();
    let table = match spec.run.rate_mode {
        RateMode::DiscreteConsistent => rate_table(spec, &load_or_build_tensor(spec, flags)?.tensor)?,
        RateMode::Continuum => RateTable::continuum(&spec.grid, &spec.gas, &spec.amplitude)?,
    };
    let path = spec.output.dir.join("rates.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
    let mut header: Vec<String> = ["node", "vx", "vy", "vz", "weight"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=n).map(|m| format!("gamma_tilde_{m}")));
    for m in 1..=n {
        for k in 1..=n {
            header.push(format!("re_gamma_{m}_{k}"));
            header.push(format!("im_gamma_{m}_{k}"));
        }
    }
    w.write_record(&header).map_err(|e| io_err(&path, e))?;
    for l in 0..spec.grid.len() {
        let v = spec.grid.node(l);
        let mut row = vec![l.to_string(), num(v.x), num(v.y), num(v.z), num(spec.grid.weight(l))];
        row.extend((0..n).map(|m| num(table.gamma_tilde(l, m))));
        for m in 0..n {
            for k in 0..n {
                let g = table.gamma(l, m, k);
                row.push(num(g.re));
                row.push(num(g.im));
            }
        }
        w.write_record(&row).map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    println!("rates: {} nodes, {} levels ({:?}) -> {}", spec.grid.len(), n, table.mode(), path.display());
    Ok(Outcome { exit_code: 0, files: vec![path] })
}

fn generator(spec: &RunSpec, tensor: &KernelTensor, rates: &RateTable, kind: GeneratorKind) -> Result<Generator, CliError> {
    Ok(match kind {
        GeneratorKind::Me => build_me_generator(tensor, rates, &spec.grid)?,
        GeneratorKind::Standard => build_standard_generator(tensor, rates, &spec.grid, StandardVariant::Reduced)?,
        GeneratorKind::StandardRaw => build_standard_generator(tensor, rates, &spec.grid, StandardVariant::Raw)?,
    })
}

/// Step size and step count for `t_final`; without an explicit `dt` the step
/// is 0.8 of the stability limit, shortened so that it divides `t_final`.
fn step_size(spec: &RunSpec, g: &Generator) -> Result<f64, CliError> {
    let t_final = spec.run.t_final;
    if let Some(dt) = spec.run.dt {
        return Ok(dt);
    }
    let norm = g.row_norm();
    if t_final == 0.0 || norm == 0.0 {
        return Ok(if t_final > 0.0 { t_final } else { 1.0 });
    }
    let steps = (t_final * norm / (0.8 * STABILITY_LIMIT)).ceil().max(1.0);
    Ok(t_final / steps)
}

fn evolve_cmd(spec: &RunSpec, flags: &Flags) -> Result<Outcome, CliError> {
    let tensor = load_or_build_tensor(spec, flags)?.tensor;
    let rates = rate_table(spec, &tensor)?;
    let g = generator(spec, &tensor, &rates, spec.run.generator)?;
    let rho0 = make_initial_field(&spec.gas, &spec.grid, &spec.run.initial)?;
    let mut opts = EvolveOptions::new(spec.run.t_final, step_size(spec, &g)?);
    opts.sample_every = spec.run.sample_every;
    opts.positivity_tolerance = spec.run.positivity_tolerance;
    opts.on_breach = spec.run.on_breach;
    let traj = evolve(&g, &rho0, &opts)?;

    let dir = &spec.output.dir;
    let csv_path = dir.join("trajectory.csv");
    let mut f = fs::File::create(&csv_path).map_err(|e| io_err(&csv_path, e))?;
    traj.write_csv(&mut f).map_err(|e| io_err(&csv_path, e))?;
    f.flush().map_err(|e| io_err(&csv_path, e))?;
    let mut files = vec![csv_path];

    if spec.output.final_state {
        let p = dir.join("final_state.bbe");
        traj.final_state.save(&p, &spec.grid)?;
        files.push(p);
    }
    if spec.output.plots {
        files.extend(plots(dir, &traj)?);
    }
    println!(
        "evolve: dt = {:.6e}, {} samples, trace drift {:.3e}, min eigenvalue {:.3e}, {} positivity breaches",
        opts.dt,
        traj.samples.len(),
        traj.trace_drift(),
        traj.min_eigenvalue(),
        traj.breaches.len()
    );
    Ok(Outcome { exit_code: 0, files })
}

fn plots(dir: &Path, traj: &bbe_core::Trajectory) -> Result<Vec<PathBuf>, CliError> {
    let n = traj.levels;
    let plot_dir = dir.join("plots");
    fs::create_dir_all(&plot_dir).map_err(|e| io_err(&plot_dir, e))?;
    let column = |label: String, f: &dyn Fn(&bbe_core::evolution::Sample) -> f64| Series {
        label,
        points: traj.samples.iter().map(|s| (s.t, f(s))).collect(),
    };
    let mut charts = vec![(
        "populations.svg",
        "Integrated populations",
        "population",
        (0..n).map(|m| column(format!("level {}", m + 1), &|s| s.populations[m])).collect::<Vec<_>>(),
    )];
    if n > 1 {
        let mut coh = Vec::new();
        let mut p = 0;
        for m in 0..n {
            for k in m + 1..n {
                let idx = p;
                coh.push(column(format!("|rho_{}{}|", m + 1, k + 1), &|s| s.coherences[idx].norm()));
                p += 1;
            }
        }
        charts.push(("coherences.svg", "Integrated coherence magnitudes", "|coherence|", coh));
    }
    charts.push(("trace.svg", "Total trace", "trace", vec![column("trace".into(), &|s| s.trace)]));
    charts.push(("min_eig.svg", "Smallest local eigenvalue", "eigenvalue", vec![column("min eigenvalue".into(), &|s| s.min_eig)]));
    let mut files = Vec::new();
    for (name, title, y, series) in charts {
        let p = plot_dir.join(name);
        line_chart(&p, title, y, &series).map_err(|e| io_err(&p, e))?;
        files.push(p);
    }
    Ok(files)
}

fn verify(spec: &RunSpec, flags: &Flags) -> Result<Outcome, CliError> {
    let tensor = load_or_build_tensor(spec, flags)?.tensor;
    let report = run_suite(&spec.gas, &spec.amplitude, &spec.grid, &tensor, &spec.run.verify)?;
    let kv = spec.output.dir.join("verify_report.txt");
    let text = spec.output.dir.join("verify_summary.txt");
    write_file(&kv, &report.to_key_value())?;
    write_file(&text, &report.summary())?;
    print!("{}", report.summary());
    Ok(Outcome { exit_code: if report.passed() { 0 } else { 3 }, files: vec![kv, text] })
}

fn compare(spec: &RunSpec, flags: &Flags) -> Result<Outcome, CliError> {
    let tensor = load_or_build_tensor(spec, flags)?.tensor;
    let rates = rate_table(spec, &tensor)?;
    let me = generator(spec, &tensor, &rates, GeneratorKind::Me)?;
    let standard = generator(spec, &tensor, &rates, GeneratorKind::Standard)?;
    let report = compare_generators(&me, &standard, &spec.gas, &spec.amplitude, &spec.grid)?;
    let kv = spec.output.dir.join("compare_report.txt");
    let text = spec.output.dir.join("compare_summary.txt");
    write_file(&kv, &report.to_key_value())?;
    write_file(&text, &report.summary())?;
    print!("{}", report.summary());
    Ok(Outcome { exit_code: 0, files: vec![kv, text] })
}
