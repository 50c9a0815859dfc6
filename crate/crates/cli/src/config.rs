//! Run configuration: a TOML file with `[model]`, `[amplitude]`, `[grid]`,
//! `[run]` and `[output]` sections. See `configs/README.md` for the grammar.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use bbe_core::evolution::{BreachPolicy, InitialState, DEFAULT_POSITIVITY_TOLERANCE};
use bbe_core::kernel::{GridSpec, KernelQuadrature, RateMode, VelocityGrid};
use bbe_core::presets::{self, Preset};
use bbe_core::scattering::{AmplitudeTable, PartialWaveSpec, WaveTable};
use bbe_core::verification::VerifyOptions;
use bbe_core::{AmplitudeModel, AmplitudeSpec, AtomGasModel, Complex64, GasParams, Thermal};
use serde::Deserialize;
use toml::{Table, Value};

#[derive(Debug)]
pub enum ConfigError {
    Read { path: PathBuf, source: std::io::Error },
    Parse(String),
    UnknownKey { key: String, line: Option<usize>, suggestion: Option<String> },
    Validation { field: String, message: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Read { path, source } => write!(f, "cannot read {}: {source}", path.display()),
            ConfigError::Parse(msg) => write!(f, "parse error: {msg}"),
            ConfigError::UnknownKey { key, line, suggestion } => {
                write!(f, "unknown key `{key}`")?;
                if let Some(l) = line {
                    write!(f, " at line {l}")?;
                }
                if let Some(s) = suggestion {
                    write!(f, "; did you mean `{s}`?")?;
                }
                Ok(())
            }
            ConfigError::Validation { field, message } => write!(f, "invalid value for `{field}`: {message}"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation { field: field.into(), message: message.into() }
}

const SECTIONS: &[(&str, &[&str])] = &[
    (
        "model",
        &["level_frequencies", "atom_mass", "perturber_mass", "perturber_density", "thermal_speed", "temperature", "degeneracy_tolerance"],
    ),
    ("amplitude", &["kind", "name", "re", "im", "path", "momentum_scale", "waves"]),
    (
        "grid",
        &[
            "kind", "half_width", "half_width_factor", "points_per_axis", "max_speed", "speeds", "polar", "azimuthal",
            "radial_points", "truncation", "near_field_cells",
        ],
    ),
    (
        "run",
        &["t_final", "dt", "sample_every", "rate_mode", "generator", "positivity_tolerance", "on_breach", "initial", "verify"],
    ),
    ("output", &["dir", "cache", "cache_dir", "plots", "final_state"]),
];

const INITIAL_KEYS: &[&str] = &["kind", "level", "levels", "atom_thermal_speed", "seed", "path"];
const VERIFY_KEYS: &[&str] = &[
    "seed", "kossakowski_pairs", "mc_geometries", "mc_samples", "mc_eta", "mc_sigmas", "normalization_nodes",
    "hermitian_fields", "trace_steps", "positivity_fields", "positivity_steps", "step_fraction",
];

fn suggest(key: &str, known: &[&str]) -> Option<String> {
    known
        .iter()
        .map(|k| (strsim::damerau_levenshtein(key, k), *k))
        .filter(|(d, k)| *d <= (k.len() / 3).max(2))
        .min()
        .map(|(_, k)| k.to_string())
}

/// Line (1-based) of the first `key =` after the header of `section`.
fn find_line(text: &str, section: &[&str], key: &str) -> Option<usize> {
    let header = section.join(".");
    let mut inside = section.is_empty();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            let name = line.trim_matches(|c| c == '[' || c == ']').trim();
            inside = name == header;
            continue;
        }
        if !inside {
            continue;
        }
        if let Some(rest) = line.strip_prefix(key) {
            if rest.trim_start().starts_with('=') {
                return Some(i + 1);
            }
        }
    }
    None
}

fn check_keys(text: &str, path: &[&str], table: &Table, known: &[&str]) -> Result<(), ConfigError> {
    for key in table.keys() {
        if !known.contains(&key.as_str()) {
            let mut full: Vec<&str> = path.to_vec();
            full.push(key);
            let line = if path.is_empty() {
                text.lines().position(|l| l.trim().trim_matches(|c| c == '[' || c == ']').trim() == key).map(|i| i + 1)
            } else {
                find_line(text, path, key)
            };
            return Err(ConfigError::UnknownKey { key: full.join("."), line, suggestion: suggest(key, known) });
        }
    }
    Ok(())
}

fn check_schema(text: &str, root: &Table) -> Result<(), ConfigError> {
    let names: Vec<&str> = SECTIONS.iter().map(|(s, _)| *s).collect();
    check_keys(text, &[], root, &names)?;
    for (name, keys) in SECTIONS {
        let Some(value) = root.get(*name) else { continue };
        let table = value.as_table().ok_or_else(|| invalid(name, "expected a table"))?;
        check_keys(text, &[name], table, keys)?;
    }
    if let Some(run) = root.get("run").and_then(Value::as_table) {
        for (sub, keys) in [("initial", INITIAL_KEYS), ("verify", VERIFY_KEYS)] {
            if let Some(v) = run.get(sub) {
                let t = v.as_table().ok_or_else(|| invalid(&format!("run.{sub}"), "expected a table"))?;
                check_keys(text, &["run", sub], t, keys)?;
            }
        }
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: RawModel,
    amplitude: RawAmplitude,
    #[serde(default)]
    grid: RawGrid,
    #[serde(default)]
    run: RawRun,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    level_frequencies: Vec<f64>,
    atom_mass: f64,
    perturber_mass: f64,
    perturber_density: f64,
    thermal_speed: Option<f64>,
    temperature: Option<f64>,
    degeneracy_tolerance: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAmplitude {
    kind: String,
    name: Option<String>,
    re: Option<Vec<Vec<f64>>>,
    im: Option<Vec<Vec<f64>>>,
    path: Option<PathBuf>,
    momentum_scale: Option<f64>,
    waves: Option<Vec<WaveTable>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    kind: Option<String>,
    half_width: Option<f64>,
    half_width_factor: Option<f64>,
    points_per_axis: Option<usize>,
    max_speed: Option<f64>,
    speeds: Option<usize>,
    polar: Option<usize>,
    azimuthal: Option<usize>,
    radial_points: Option<usize>,
    truncation: Option<f64>,
    near_field_cells: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawRun {
    t_final: Option<f64>,
    dt: Option<f64>,
    sample_every: Option<usize>,
    rate_mode: Option<RateMode>,
    generator: Option<GeneratorKind>,
    positivity_tolerance: Option<f64>,
    on_breach: Option<BreachPolicy>,
    initial: Option<RawInitial>,
    verify: Option<VerifyOptions>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    kind: String,
    level: Option<usize>,
    levels: Option<(usize, usize)>,
    atom_thermal_speed: Option<f64>,
    seed: Option<u64>,
    path: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    cache: Option<bool>,
    cache_dir: Option<PathBuf>,
    plots: Option<bool>,
    final_state: Option<bool>,
}

/// Which generator `evolve` integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Master-equation form.
    Me,
    /// Standard form with the collisional shift folded into the free evolution.
    Standard,
    /// Standard form with the kernel taken literally.
    StandardRaw,
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub t_final: f64,
    /// `None` picks the largest step allowed by the stability guard (times 0.8).
    pub dt: Option<f64>,
    pub sample_every: usize,
    pub rate_mode: RateMode,
    pub generator: GeneratorKind,
    pub positivity_tolerance: f64,
    pub on_breach: BreachPolicy,
    pub initial: InitialState,
    pub verify: VerifyOptions,
}

#[derive(Debug, Clone)]
pub struct OutputSettings {
    pub dir: PathBuf,
    pub cache: bool,
    pub cache_dir: PathBuf,
    pub plots: bool,
    pub final_state: bool,
}

/// Fully validated run description.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub gas: AtomGasModel,
    pub amplitude: AmplitudeModel,
    pub grid: VelocityGrid,
    pub quadrature: KernelQuadrature,
    pub run: RunSettings,
    pub output: OutputSettings,
}

impl RunSpec {
    /// Applies `--seed`: the verify seed and the seed of a random initial state.
    pub fn override_seed(&mut self, seed: u64) {
        self.run.verify.seed = seed;
        if let InitialState::RandomPsd { seed: s, .. } = &mut self.run.initial {
            *s = seed;
        }
    }
}

fn positive(field: &str, x: f64) -> Result<f64, ConfigError> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(invalid(field, format!("must be a positive finite number (got {x})")))
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_text(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })
}

fn build_gas(m: RawModel) -> Result<AtomGasModel, ConfigError> {
    if m.level_frequencies.is_empty() {
        return Err(invalid("model.level_frequencies", "needs at least one level"));
    }
    if m.level_frequencies.iter().any(|w| !w.is_finite()) {
        return Err(invalid("model.level_frequencies", "entries must be finite"));
    }
    positive("model.atom_mass", m.atom_mass)?;
    positive("model.perturber_mass", m.perturber_mass)?;
    positive("model.perturber_density", m.perturber_density)?;
    let thermal = match (m.thermal_speed, m.temperature) {
        (Some(u), None) => Thermal::ThermalSpeed(positive("model.thermal_speed", u)?),
        (None, Some(t)) => Thermal::Temperature(positive("model.temperature", t)?),
        _ => return Err(invalid("model.thermal_speed", "give exactly one of `thermal_speed` and `temperature`")),
    };
    if let Some(t) = m.degeneracy_tolerance {
        positive("model.degeneracy_tolerance", t)?;
    }
    AtomGasModel::new(GasParams {
        level_frequencies: m.level_frequencies,
        atom_mass: m.atom_mass,
        perturber_mass: m.perturber_mass,
        perturber_density: m.perturber_density,
        thermal,
        degeneracy_tolerance: m.degeneracy_tolerance,
    })
    .map_err(|e| invalid("model", e.to_string()))
}

fn build_amplitude(a: RawAmplitude, gas: &AtomGasModel, base: &Path) -> Result<AmplitudeModel, ConfigError> {
    let n = gas.levels();
    let spec = match a.kind.as_str() {
        "preset" => {
            let name = a.name.ok_or_else(|| invalid("amplitude.name", "required for kind = \"preset\""))?;
            let preset = Preset::from_name(&name).ok_or_else(|| {
                let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
                invalid("amplitude.name", format!("unknown preset `{name}` (expected one of {})", names.join(", ")))
            })?;
            presets::amplitude_spec(preset, gas).map_err(|e| invalid("amplitude.name", e.to_string()))?
        }
        "constant" => {
            let re = a.re.ok_or_else(|| invalid("amplitude.re", "required for kind = \"constant\""))?;
            let im = a.im.unwrap_or_else(|| vec![vec![0.0; n]; n]);
            for (field, m) in [("amplitude.re", &re), ("amplitude.im", &im)] {
                if m.len() != n || m.iter().any(|r| r.len() != n) {
                    return Err(invalid(field, format!("must be a {n}x{n} matrix")));
                }
            }
            let values = re
                .iter()
                .zip(&im)
                .map(|(r, i)| r.iter().zip(i).map(|(&x, &y)| Complex64::new(x, y)).collect())
                .collect();
            AmplitudeSpec::Constant { values }
        }
        "partial_wave" => {
            let momentum_scale =
                a.momentum_scale.ok_or_else(|| invalid("amplitude.momentum_scale", "required for kind = \"partial_wave\""))?;
            let waves = a.waves.ok_or_else(|| invalid("amplitude.waves", "required for kind = \"partial_wave\""))?;
            AmplitudeSpec::PartialWave(PartialWaveSpec { momentum_scale, waves })
        }
        "tabulated" => {
            let path = a.path.ok_or_else(|| invalid("amplitude.path", "required for kind = \"tabulated\""))?;
            let text = read_text(&resolve(base, &path))?;
            AmplitudeSpec::Tabulated(AmplitudeTable::parse(&text).map_err(|e| invalid("amplitude.path", e.to_string()))?)
        }
        other => {
            return Err(invalid(
                "amplitude.kind",
                format!("unknown kind `{other}` (expected preset, constant, partial_wave or tabulated)"),
            ))
        }
    };
    AmplitudeModel::build(spec, gas).map_err(|e| invalid("amplitude", e.to_string()))
}

fn build_grid(g: &RawGrid, gas: &AtomGasModel) -> Result<(VelocityGrid, KernelQuadrature), ConfigError> {
    let scale = gas.thermal_speed().max(gas.atom_thermal_speed());
    let spec = match g.kind.as_deref().unwrap_or("cartesian") {
        "cartesian" => {
            let half_width = match (g.half_width, g.half_width_factor) {
                (Some(_), Some(_)) => {
                    return Err(invalid("grid.half_width", "give at most one of `half_width` and `half_width_factor`"))
                }
                (Some(h), None) => positive("grid.half_width", h)?,
                (None, f) => positive("grid.half_width_factor", f.unwrap_or(4.0))? * scale,
            };
            let points_per_axis = g.points_per_axis.unwrap_or(7);
            if points_per_axis == 0 {
                return Err(invalid("grid.points_per_axis", "must be at least 1"));
            }
            GridSpec::Cartesian { half_width, points_per_axis }
        }
        "spherical" => {
            let max_speed = positive("grid.max_speed", g.max_speed.unwrap_or(4.0 * scale))?;
            let azimuthal = g.azimuthal.unwrap_or(8);
            if azimuthal == 0 || azimuthal % 2 == 1 {
                return Err(invalid("grid.azimuthal", "must be a positive even number"));
            }
            let (speeds, polar) = (g.speeds.unwrap_or(6), g.polar.unwrap_or(4));
            if speeds == 0 {
                return Err(invalid("grid.speeds", "must be at least 1"));
            }
            if polar == 0 {
                return Err(invalid("grid.polar", "must be at least 1"));
            }
            GridSpec::Spherical { max_speed, speeds, polar, azimuthal }
        }
        other => return Err(invalid("grid.kind", format!("unknown kind `{other}` (expected cartesian or spherical)"))),
    };
    let defaults = KernelQuadrature::default();
    let quadrature = KernelQuadrature {
        radial_points: g.radial_points.unwrap_or(defaults.radial_points),
        truncation: g.truncation.unwrap_or(defaults.truncation),
        near_field_cells: g.near_field_cells.unwrap_or(defaults.near_field_cells),
    };
    if quadrature.radial_points == 0 {
        return Err(invalid("grid.radial_points", "must be at least 1"));
    }
    positive("grid.truncation", quadrature.truncation)?;
    let grid = VelocityGrid::new(spec).map_err(|e| invalid("grid", e.to_string()))?;
    Ok((grid, quadrature))
}

fn build_initial(i: Option<RawInitial>, gas: &AtomGasModel, base: &Path) -> Result<InitialState, ConfigError> {
    let Some(i) = i else {
        return Ok(InitialState::Thermal { level: 1, atom_thermal_speed: None });
    };
    let n = gas.levels();
    if let Some(u) = i.atom_thermal_speed {
        positive("run.initial.atom_thermal_speed", u)?;
    }
    let level_ok = |field: &str, l: usize| {
        if (1..=n).contains(&l) {
            Ok(l)
        } else {
            Err(invalid(field, format!("levels are numbered 1 to {n} (got {l})")))
        }
    };
    Ok(match i.kind.as_str() {
        "thermal" => InitialState::Thermal {
            level: level_ok("run.initial.level", i.level.unwrap_or(1))?,
            atom_thermal_speed: i.atom_thermal_speed,
        },
        "superposition" => {
            let (a, b) = i.levels.unwrap_or((1, 2));
            level_ok("run.initial.levels", a)?;
            level_ok("run.initial.levels", b)?;
            if a == b {
                return Err(invalid("run.initial.levels", "the two levels must differ"));
            }
            InitialState::Superposition { levels: (a, b), atom_thermal_speed: i.atom_thermal_speed }
        }
        "random_psd" => InitialState::RandomPsd { seed: i.seed.unwrap_or(1), atom_thermal_speed: i.atom_thermal_speed },
        "custom" => {
            let path = i.path.ok_or_else(|| invalid("run.initial.path", "required for kind = \"custom\""))?;
            InitialState::Custom { csv: read_text(&resolve(base, &path))? }
        }
        other => {
            return Err(invalid(
                "run.initial.kind",
                format!("unknown kind `{other}` (expected thermal, superposition, random_psd or custom)"),
            ))
        }
    })
}

fn build_run(r: RawRun, gas: &AtomGasModel, base: &Path) -> Result<RunSettings, ConfigError> {
    let t_final = r.t_final.unwrap_or(10.0);
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(invalid("run.t_final", format!("must be a non-negative finite number (got {t_final})")));
    }
    if let Some(dt) = r.dt {
        positive("run.dt", dt)?;
    }
    let sample_every = r.sample_every.unwrap_or(1);
    if sample_every == 0 {
        return Err(invalid("run.sample_every", "must be at least 1"));
    }
    let positivity_tolerance = r.positivity_tolerance.unwrap_or(DEFAULT_POSITIVITY_TOLERANCE);
    if !(positivity_tolerance >= 0.0) {
        return Err(invalid("run.positivity_tolerance", "must be non-negative"));
    }
    let verify = r.verify.unwrap_or_default();
    if !(verify.mc_eta > 0.0) {
        return Err(invalid("run.verify.mc_eta", "must be positive"));
    }
    if !(verify.step_fraction > 0.0 && verify.step_fraction <= 0.5) {
        return Err(invalid("run.verify.step_fraction", "must lie in (0, 0.5]"));
    }
    Ok(RunSettings {
        t_final,
        dt: r.dt,
        sample_every,
        rate_mode: r.rate_mode.unwrap_or(RateMode::DiscreteConsistent),
        generator: r.generator.unwrap_or(GeneratorKind::Me),
        positivity_tolerance,
        on_breach: r.on_breach.unwrap_or(BreachPolicy::Warn),
        initial: build_initial(r.initial, gas, base)?,
        verify,
    })
}

fn build_output(o: RawOutput, base: &Path) -> OutputSettings {
    let dir = resolve(base, o.dir.as_deref().unwrap_or(Path::new("out")));
    let cache_dir = o.cache_dir.map(|p| resolve(base, &p)).unwrap_or_else(|| dir.join("cache"));
    OutputSettings {
        dir,
        cache: o.cache.unwrap_or(true),
        cache_dir,
        plots: o.plots.unwrap_or(true),
        final_state: o.final_state.unwrap_or(true),
    }
}

/// Parses and validates configuration text. Relative paths resolve against `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<RunSpec, ConfigError> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    check_schema(text, &root)?;
    let raw: RawConfig = root.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    let gas = build_gas(raw.model)?;
    let amplitude = build_amplitude(raw.amplitude, &gas, base)?;
    let (grid, quadrature) = build_grid(&raw.grid, &gas)?;
    let run = build_run(raw.run, &gas, base)?;
    let output = build_output(raw.output, base);
    Ok(RunSpec { gas, amplitude, grid, quadrature, run, output })
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunSpec, ConfigError> {
    let text = read_text(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_str(&text, &base)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suggestions_need_a_close_match() {
        assert_eq!(suggest("persturber_density", SECTIONS[0].1).as_deref(), Some("perturber_density"));
        assert_eq!(suggest("colour", SECTIONS[0].1), None);
    }

    #[test]
    fn key_lines_are_found_inside_their_section() {
        let text = "[model]\natom_mass = 1\n\n[grid]\natom_mass = 2\n";
        assert_eq!(find_line(text, &["model"], "atom_mass"), Some(2));
        assert_eq!(find_line(text, &["grid"], "atom_mass"), Some(5));
        assert_eq!(find_line(text, &["run"], "atom_mass"), None);
    }
}
