use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rlvs_core::config::RunConfig;
use rlvs_core::grid::GridSpec;
use rlvs_core::ingest;
use rlvs_core::pipeline::{self, Checkpoint};
use rlvs_core::surface::{self, CellVol, SurfaceFormat, VolSurface};
use rlvs_core::voltools::{self, Market};

fn rlvs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rlvs"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = rlvs(dir, args);
    assert!(
        out.status.success(),
        "rlvs {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn toy_config(dir: &Path) -> String {
    let mut cfg = RunConfig::paper_protocol();
    cfg.synth.n_ticks = 2001;
    cfg.grid.n_time = 6;
    cfg.grid.n_price = 4;
    cfg.grid.auto_price_range = true;
    cfg.model.n_comp = 2;
    cfg.hmc.n_burn = 30;
    cfg.hmc.n_draws = 40;
    cfg.hmc.keep_draws = 20;
    cfg.surface.n_param_draws = 20;
    cfg.surface.n_returns_per_draw = 20;
    let path = dir.join("toy.toml");
    fs::write(&path, cfg.to_toml_string()).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn synth_defaults_to_one_session() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["synth", "--out", "ticks.csv"]);
    assert!(stdout.contains("23401 ticks"), "{stdout}");
    let ticks = ingest::load_ticks(&dir.path().join("ticks.csv"), ingest::SESSION_SECONDS).unwrap();
    assert_eq!(ticks.len(), 23_401);
    assert_eq!(ticks.ticks[0].price, 425.0);
    assert_eq!(ticks.ticks.last().unwrap().time, ingest::SESSION_SECONDS);
}

#[test]
fn zero_sigma_gives_deterministic_drift() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["synth", "--sigma", "0", "--mu", "0", "--n-ticks", "50", "--out", "flat.csv"],
    );
    let ticks = ingest::load_ticks(&dir.path().join("flat.csv"), ingest::SESSION_SECONDS).unwrap();
    assert!(ticks.ticks.iter().all(|t| t.price == 425.0));
}

#[test]
fn same_seed_same_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--seed", "9", "--n-ticks", "500", "--out", "a.csv"]);
    ok(d, &["synth", "--seed", "9", "--n-ticks", "500", "--out", "b.csv"]);
    ok(d, &["synth", "--seed", "10", "--n-ticks", "500", "--out", "c.csv"]);
    let read = |n: &str| fs::read(d.join(n)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));
}

#[test]
fn missing_tick_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = rlvs(dir.path(), &["fit", "--ticks", "nowhere.csv", "--out", "chain.json"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nowhere.csv"), "{stderr}");
    assert!(!dir.path().join("chain.json").exists());
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[grid]\nn_tme = 3\n").unwrap();
    let out = rlvs(dir.path(), &["synth", "--config", "bad.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_tme"));
}

#[test]
fn toy_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = toy_config(d);
    ok(d, &["synth", "--config", &cfg, "--out", "ticks.csv"]);
    let fit = ok(d, &["fit", "--config", &cfg, "--ticks", "ticks.csv", "--out", "chain.json"]);
    assert!(fit.contains("acceptance rate"), "{fit}");

    let ck = Checkpoint::load(&d.join("chain.json")).unwrap();
    assert_eq!(ck.draws.len(), 20);
    assert_eq!(ck.params().unwrap().len(), 20);

    // the checkpoint's embedded config is used when --config is absent
    ok(d, &["surface", "--checkpoint", "chain.json", "--out", "surface.csv"]);
    let s = surface::read_surface(&d.join("surface.csv")).unwrap();
    assert_eq!(s.cells.len(), 6 * 4);
    assert!(s.cells.iter().all(|c| c.vol_mean.is_finite() && c.vol_lo <= c.vol_hi));
    let rows = fs::read_to_string(d.join("surface.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 6 * 4);

    ok(d, &["surface", "--checkpoint", "chain.json", "--format", "svg", "--out", "surface.img"]);
    let svg = fs::read_to_string(d.join("surface.img")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));

    ok(d, &["surface", "--checkpoint", "chain.json", "--out", "surface.json"]);
    let from_json = surface::read_surface(&d.join("surface.json")).unwrap();
    assert_eq!(from_json.cells.len(), s.cells.len());
}

fn flat_surface(vol: f64) -> VolSurface {
    let spec = GridSpec {
        n_time: 4,
        n_price: 10,
        price_min: 400.0,
        price_max: 450.0,
        session_length: ingest::SESSION_SECONDS,
    };
    let cells = (0..spec.n_time)
        .flat_map(|i| (0..spec.n_price).map(move |j| (i, j)))
        .map(|(i, j)| CellVol {
            i,
            j,
            t_norm: spec.time_mid(i),
            price_mid: spec.price_mid(j),
            vol_mean: vol,
            vol_lo: vol * 0.9,
            vol_hi: vol * 1.1,
            masked: false,
        })
        .collect();
    VolSurface { spec, cells }
}

fn write_flat_quotes(path: &Path, vol: f64) {
    let cfg = RunConfig::paper_protocol();
    let strikes: Vec<f64> = (0..9).map(|i| 405.0 + 5.0 * i as f64).collect();
    let quotes = pipeline::quotes_from_flat_vol(&cfg, 0.1, &strikes, vol).unwrap();
    voltools::write_quotes(&quotes, path).unwrap();
}

#[test]
fn implied_recovers_flat_vol() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_flat_quotes(&d.join("quotes.csv"), 0.42);
    ok(d, &["implied", "--quotes", "quotes.csv", "--out", "curve.csv"]);
    let curve = fs::read_to_string(d.join("curve.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some("strike,iv"));
    let ivs: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(ivs.len(), 9);
    assert!(ivs.iter().all(|v| (v - 0.42).abs() < 1e-8), "{ivs:?}");
}

#[test]
fn compare_flat_surface_with_flat_quotes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    surface::export_surface(&flat_surface(0.42), &d.join("surface.csv"), SurfaceFormat::Csv).unwrap();
    write_flat_quotes(&d.join("quotes.csv"), 0.42);
    ok(
        d,
        &[
            "compare", "--surface", "surface.csv", "--quotes", "quotes.csv", "--snapshots", "0.25,0.75", "--out",
            "cmp.csv",
        ],
    );
    let body = fs::read_to_string(d.join("cmp.csv")).unwrap();
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("snapshot_t,strike,iv,realized_vol,diff"));
    let diffs: Vec<f64> = lines.map(|l| l.split(',').nth(4).unwrap().parse().unwrap()).collect();
    assert_eq!(diffs.len(), 2 * 9);
    assert!(diffs.iter().all(|x| x.abs() < 1e-6), "{diffs:?}");
}

#[test]
fn empty_quote_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("q.csv"), "strike,expiry_years,mid,flag\n").unwrap();
    let out = rlvs(dir.path(), &["implied", "--quotes", "q.csv", "--out", "curve.csv"]);
    assert!(!out.status.success());
    assert!(!dir.path().join("curve.csv").exists());
}

#[test]
fn quote_synthesis_matches_market() {
    // guards the helper used above: OTM puts below spot, calls above
    let m = Market {
        spot: 425.0,
        rate: 0.0153,
        dividend_yield: 0.0,
    };
    let q = voltools::synth_otm_quotes(m, 0.1, &[400.0, 450.0], |_| 0.3).unwrap();
    assert_eq!(q[0].kind, voltools::OptionKind::Put);
    assert_eq!(q[1].kind, voltools::OptionKind::Call);
}
