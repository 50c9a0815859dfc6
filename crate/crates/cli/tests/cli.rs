use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bbe_cli::config::{ConfigError, GeneratorKind};
use bbe_cli::{parse_config, parse_config_str};
use bbe_core::evolution::{BreachPolicy, InitialState};
use bbe_core::kernel::{GridSpec, RateMode};
use bbe_core::verification::VerifyOptions;
use bbe_core::KernelQuadrature;

const MINIMAL: &str = r#"
[model]
level_frequencies = [0.0, 0.5]
atom_mass = 1.0
perturber_mass = 1.0
perturber_density = 0.1
thermal_speed = 1.0

[amplitude]
kind = "preset"
name = "partial_wave"
"#;

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn bbe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bbe")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn minimal_config_gets_documented_defaults() {
    let spec = parse_config_str(MINIMAL, Path::new("/work")).unwrap();
    assert_eq!(spec.gas.levels(), 2);
    assert_eq!(spec.amplitude.kind(), "partial_wave");
    assert_eq!(spec.grid.spec(), &GridSpec::Cartesian { half_width: 4.0, points_per_axis: 7 });
    assert_eq!(spec.quadrature, KernelQuadrature::default());
    assert_eq!(spec.run.t_final, 10.0);
    assert_eq!(spec.run.dt, None);
    assert_eq!(spec.run.sample_every, 1);
    assert_eq!(spec.run.rate_mode, RateMode::DiscreteConsistent);
    assert_eq!(spec.run.generator, GeneratorKind::Me);
    assert_eq!(spec.run.positivity_tolerance, 1e-8);
    assert_eq!(spec.run.on_breach, BreachPolicy::Warn);
    assert_eq!(spec.run.initial, InitialState::Thermal { level: 1, atom_thermal_speed: None });
    assert_eq!(spec.run.verify, VerifyOptions::default());
    assert_eq!(spec.output.dir, Path::new("/work/out"));
    assert_eq!(spec.output.cache_dir, Path::new("/work/out/cache"));
    assert!(spec.output.cache && spec.output.plots && spec.output.final_state);
}

#[test]
fn negative_density_names_the_field() {
    let text = MINIMAL.replace("perturber_density = 0.1", "perturber_density = -0.1");
    match parse_config_str(&text, Path::new(".")) {
        Err(ConfigError::Validation { field, .. }) => assert_eq!(field, "model.perturber_density"),
        other => panic!("expected a validation error, got {other:?}"),
    }
    let dir = tempfile::tempdir().unwrap();
    let o = bbe(&["kernel", "--config", write_config(dir.path(), &text).to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.perturber_density"), "{}", stderr(&o));
}

#[test]
fn misspelled_key_is_reported_with_suggestion_and_line() {
    let text = MINIMAL.replace("perturber_mass", "perturber_mas");
    match parse_config_str(&text, Path::new(".")) {
        Err(ConfigError::UnknownKey { key, line, suggestion }) => {
            assert_eq!(key, "model.perturber_mas");
            assert_eq!(line, Some(5));
            assert_eq!(suggestion.as_deref(), Some("perturber_mass"));
        }
        other => panic!("expected an unknown-key error, got {other:?}"),
    }
    let dir = tempfile::tempdir().unwrap();
    let o = bbe(&["kernel", "--config", write_config(dir.path(), &text).to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("did you mean `perturber_mass`"), "{}", stderr(&o));
}

#[test]
fn unknown_sections_and_nested_keys_are_rejected() {
    let text = format!("{MINIMAL}\n[outptu]\ndir = \"x\"\n");
    match parse_config_str(&text, Path::new(".")) {
        Err(ConfigError::UnknownKey { key, suggestion, .. }) => {
            assert_eq!(key, "outptu");
            assert_eq!(suggestion.as_deref(), Some("output"));
        }
        other => panic!("{other:?}"),
    }
    let text = format!("{MINIMAL}\n[run.verify]\nmc_sample = 10\n");
    match parse_config_str(&text, Path::new(".")) {
        Err(ConfigError::UnknownKey { key, line, suggestion }) => {
            assert_eq!(key, "run.verify.mc_sample");
            assert_eq!(line, Some(MINIMAL.lines().count() + 3));
            assert_eq!(suggestion.as_deref(), Some("mc_samples"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn syntax_errors_and_bad_values_are_config_errors() {
    assert!(matches!(parse_config_str("[model\n", Path::new(".")), Err(ConfigError::Parse(_))));
    let both = MINIMAL.replace("thermal_speed = 1.0", "thermal_speed = 1.0\ntemperature = 0.5");
    assert!(matches!(parse_config_str(&both, Path::new(".")), Err(ConfigError::Validation { .. })));
    let degenerate = MINIMAL.replace("[0.0, 0.5]", "[0.0, 0.5, 1.0]");
    match parse_config_str(&degenerate, Path::new(".")) {
        Err(ConfigError::Validation { field, message }) => {
            assert_eq!(field, "model");
            assert!(message.contains("degenerate"), "{message}");
        }
        other => panic!("{other:?}"),
    }
    let level = format!("{MINIMAL}\n[run.initial]\nkind = \"thermal\"\nlevel = 3\n");
    match parse_config_str(&level, Path::new(".")) {
        Err(ConfigError::Validation { field, .. }) => assert_eq!(field, "run.initial.level"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_config_file_is_an_io_error() {
    let o = bbe(&["kernel", "--config", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(matches!(parse_config(Path::new("/nonexistent/run.toml")), Err(ConfigError::Read { .. })));
}

#[test]
fn bundled_configs_parse() {
    for entry in fs::read_dir(bundled("")).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            parse_config(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        }
    }
}

#[test]
fn second_kernel_run_is_a_byte_identical_cache_hit() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.to_string() + "\n[grid]\npoints_per_axis = 3\n";
    let cfg = write_config(dir.path(), &text);
    let cfg = cfg.to_str().unwrap();
    let first = bbe(&["kernel", "--config", cfg]);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    assert!(String::from_utf8_lossy(&first.stdout).contains("cache miss"));
    let cache: Vec<PathBuf> = fs::read_dir(dir.path().join("out/cache")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(cache.len(), 1);
    let bytes = fs::read(&cache[0]).unwrap();
    let summary = fs::read(dir.path().join("out/kernel_summary.txt")).unwrap();

    let second = bbe(&["kernel", "--config", cfg]);
    assert_eq!(second.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&second.stdout).contains("cache hit"));
    assert_eq!(fs::read(&cache[0]).unwrap(), bytes);
    assert_eq!(fs::read(dir.path().join("out/kernel_summary.txt")).unwrap(), summary);

    // a corrupted cache file is rebuilt with a warning and comes back identical
    let mut broken = bytes.clone();
    let last = broken.len() - 1;
    broken[last] ^= 0xff;
    fs::write(&cache[0], &broken).unwrap();
    let third = bbe(&["kernel", "--config", cfg]);
    assert_eq!(third.status.code(), Some(0));
    assert!(stderr(&third).contains("rebuilding"), "{}", stderr(&third));
    assert_eq!(fs::read(&cache[0]).unwrap(), bytes);

    // any change to the grid produces a different cache entry
    let other = write_config(dir.path(), &text.replace("points_per_axis = 3", "points_per_axis = 2"));
    assert_eq!(bbe(&["kernel", "--config", other.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(fs::read_dir(dir.path().join("out/cache")).unwrap().count(), 2);
}

#[test]
fn no_cache_flag_leaves_cache_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &(MINIMAL.to_string() + "\n[grid]\npoints_per_axis = 2\n"));
    let o = bbe(&["kernel", "--config", cfg.to_str().unwrap(), "--no-cache", "--threads", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(!dir.path().join("out/cache").exists());
}

#[test]
fn verify_on_unitary_reference_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("verify");
    let o = bbe(&["verify", "--config", bundled("unitary_two_level.toml").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}{}", stderr(&o));
    assert!(stdout.contains("0 failed"));
    let report = fs::read_to_string(out.join("verify_report.txt")).unwrap();
    assert!(report.lines().any(|l| l == "passed = true"));
    assert!(!report.contains(".passed = false"));
    assert!(out.join("verify_summary.txt").exists());
}

#[test]
fn failing_verify_exits_with_invariant_code() {
    // a zero-width acceptance band makes the Monte Carlo comparison fail
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{MINIMAL}\n[grid]\npoints_per_axis = 2\n\n[run.verify]\nmc_samples = 2000\nmc_sigmas = 0.0\n");
    let cfg = write_config(dir.path(), &text);
    let o = bbe(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(fs::read_to_string(dir.path().join("out/verify_report.txt")).unwrap().contains("mc_oracle.passed = false"));
}

#[test]
fn compare_on_constant_real_config_flags_optical_theorem_violation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp");
    let o = bbe(&["compare", "--config", bundled("constant_real.toml").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = fs::read_to_string(out.join("compare_report.txt")).unwrap();
    assert!(report.contains("optical_theorem.violated = true"), "{report}");
    assert!(report.contains("rate_identity.passed = false"), "{report}");
    assert!(report.contains("entrywise.passed = true"), "{report}");
}

#[test]
fn evolve_writes_deterministic_trajectory_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{MINIMAL}\n[grid]\npoints_per_axis = 3\n\n[run]\nt_final = 2.0\ndt = 0.1\nsample_every = 4\n\n[run.initial]\nkind = \"random_psd\"\n"
    );
    let cfg = write_config(dir.path(), &text);
    let run = |out: &str, seed: &str| {
        let o = bbe(&["evolve", "--config", cfg.to_str().unwrap(), "--out", dir.path().join(out).to_str().unwrap(), "--seed", seed]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        fs::read_to_string(dir.path().join(out).join("trajectory.csv")).unwrap()
    };
    let a = run("a", "5");
    let b = run("b", "5");
    let c = run("c", "6");
    assert_eq!(a, b);
    assert_ne!(a, c);
    let mut lines = a.lines();
    assert_eq!(lines.next().unwrap(), "t,trace,pop_1,pop_2,abs_coh_1_2,min_eig,herm_residual");
    // samples at steps 0, 4, ..., 20
    assert_eq!(lines.count(), 6);
    for name in ["populations.svg", "coherences.svg", "trace.svg", "min_eig.svg"] {
        let svg = fs::read_to_string(dir.path().join("a/plots").join(name)).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("polyline"), "{name}");
    }
    assert!(dir.path().join("a/final_state.bbe").exists());
}

#[test]
fn evolve_with_oversized_step_fails_the_stability_guard() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{MINIMAL}\n[grid]\npoints_per_axis = 2\n\n[run]\nt_final = 100.0\ndt = 100.0\n");
    let o = bbe(&["evolve", "--config", write_config(dir.path(), &text).to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("stability guard"), "{}", stderr(&o));
}

#[test]
fn rates_table_has_one_row_per_node() {
    let dir = tempfile::tempdir().unwrap();
    for mode in ["discrete_consistent", "continuum"] {
        let text = format!("{MINIMAL}\n[grid]\npoints_per_axis = 3\n\n[run]\nrate_mode = \"{mode}\"\n");
        let o = bbe(&["rates", "--config", write_config(dir.path(), &text).to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let mut r = csv::Reader::from_path(dir.path().join("out/rates.csv")).unwrap();
        let header = r.headers().unwrap().clone();
        assert_eq!(header.len(), 5 + 2 + 8);
        assert_eq!(&header[5], "gamma_tilde_1");
        let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 27);
        for row in &rows {
            let g: f64 = row[5].parse().unwrap();
            let re11: f64 = row[7].parse().unwrap();
            assert!(g > 0.0);
            // full round-trip precision
            assert_eq!(format!("{:.16e}", g), row[5]);
            if mode == "discrete_consistent" {
                assert_eq!(g, re11);
            }
        }
    }
}

#[test]
fn custom_initial_state_and_tabulated_amplitude_resolve_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let gas = bbe_core::presets::reference_gas(2).unwrap();
    let pw = bbe_core::presets::amplitude(bbe_core::presets::Preset::PartialWave, &gas).unwrap();
    let table = bbe_core::presets::sample_table(&pw, 16.0, 33, 17);
    fs::write(dir.path().join("amp.txt"), table.to_text()).unwrap();
    let mut csv = String::from("node,j,k,re,im\n");
    for node in 0..8 {
        csv += &format!("{node},1,1,0.6,0\n{node},2,2,0.4,0\n{node},1,2,0.1,0.2\n");
    }
    fs::write(dir.path().join("rho0.csv"), csv).unwrap();
    let text = MINIMAL.replace("kind = \"preset\"\nname = \"partial_wave\"", "kind = \"tabulated\"\npath = \"amp.txt\"")
        + "\n[grid]\npoints_per_axis = 2\n\n[run]\nt_final = 1.0\n\n[run.initial]\nkind = \"custom\"\npath = \"rho0.csv\"\n\n[output]\nplots = false\n";
    let cfg = write_config(dir.path(), &text);
    let spec = parse_config(&cfg).unwrap();
    assert_eq!(spec.amplitude.kind(), "tabulated");
    assert!(matches!(spec.run.initial, InitialState::Custom { .. }));
    let o = bbe(&["evolve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(!dir.path().join("out/plots").exists());

    let missing = write_config(dir.path(), &text.replace("rho0.csv", "gone.csv"));
    assert_eq!(bbe(&["evolve", "--config", missing.to_str().unwrap()]).status.code(), Some(4));
}

#[test]
fn inline_reaction_matrices_build_a_unitary_model() {
    let text = MINIMAL.replace(
        "kind = \"preset\"\nname = \"partial_wave\"",
        "kind = \"partial_wave\"\nmomentum_scale = 2.0\n\n[[amplitude.waves]]\nenergies = [0.0, 10.0]\ndata = { reaction = [[[0.8, 0.0], [0.1, 0.2], [0.1, -0.2], [-0.3, 0.0]], [[0.4, 0.0], [0.0, 0.1], [0.0, -0.1], [-0.1, 0.0]]] }",
    );
    let spec = parse_config_str(&text, Path::new(".")).unwrap();
    assert!(spec.amplitude.is_unitary());
    let bad = text.replace("[0.1, -0.2]", "[0.1, 0.2]");
    match parse_config_str(&bad, Path::new(".")) {
        Err(ConfigError::Validation { field, message }) => {
            assert_eq!(field, "amplitude");
            assert!(message.contains("not Hermitian"), "{message}");
        }
        other => panic!("{other:?}"),
    }
}
