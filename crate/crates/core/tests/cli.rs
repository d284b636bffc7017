use std::path::Path;
use std::process::{Command, Output};

use otfs_ddcl::channel::DdChannel;
use otfs_ddcl::constellation::make_constellation;
use otfs_ddcl::harness::{gen_heldout, write_pair, ExperimentConfig};
use otfs_ddcl::link::{fer_theory, Precoder};

const SMALL: &str = "seed = 3\n\
[grid]\nm = 4\nn = 2\n\
[channel]\nl_max = 3\nk_max = 1\n\
[link]\nstreams = 4\ntau = 2\n\
[data]\ntrain_examples = 12\ntrack_len = 8\ntest_channels = 3\n\
[train]\nbatch_size = 4\nmax_iters = 6\neval_every = 2\n\
[sweep]\nsnr_grid_db = [5.0, 15.0]\nn_frames_per_point = 300\nmax_frames_per_point = 1200\nicsi_iters = 5\n";

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otfs-ddcl"))
        .current_dir(dir)
        .env("OTFS_DDCL_THREADS", "1")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = bin(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.toml"), SMALL).unwrap();
    dir
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn full_pipeline_is_reproducible() {
    let dir = setup();
    let d = dir.path();
    let c = ["--config", "cfg.toml"];
    for tag in ["a", "b"] {
        ok(
            d,
            &[&c[..], &["gen-data", "--out", &format!("data_{tag}.bin")]].concat(),
        );
        ok(
            d,
            &[
                &c[..],
                &[
                    "train",
                    "--data",
                    "data_a.bin",
                    "--out",
                    &format!("model_{tag}.bin"),
                    "--log",
                    &format!("log_{tag}.csv"),
                ],
            ]
            .concat(),
        );
        ok(
            d,
            &[
                &c[..],
                &[
                    "sweep",
                    "--model",
                    "model_a.bin",
                    "--out",
                    &format!("sweep_{tag}.csv"),
                ],
            ]
            .concat(),
        );
    }
    for name in ["data", "model", "log", "sweep"] {
        let ext = if matches!(name, "log" | "sweep") {
            "csv"
        } else {
            "bin"
        };
        assert_eq!(
            read(d, &format!("{name}_a.{ext}")),
            read(d, &format!("{name}_b.{ext}")),
            "{name}"
        );
    }
    let csv = String::from_utf8(read(d, "sweep_a.csv")).unwrap();
    assert!(csv.starts_with("scheme,snr_db,fer,ci95,n_frames,seed\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 5);

    ok(d, &["plot", "--csv", "sweep_a.csv", "--out", "fig.svg"]);
    assert!(String::from_utf8(read(d, "fig.svg"))
        .unwrap()
        .contains("<polyline"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--config", "cfg.toml", "gen-data", "--out", "a.bin"]);
    ok(
        d,
        &[
            "--config", "cfg.toml", "--seed", "7", "gen-data", "--out", "b.bin",
        ],
    );
    ok(
        d,
        &[
            "--config", "cfg.toml", "gen-data", "--seed", "7", "--out", "c.bin",
        ],
    );
    assert_ne!(read(d, "a.bin"), read(d, "b.bin"));
    assert_eq!(read(d, "b.bin"), read(d, "c.bin"));
}

#[test]
fn sweep_without_model_names_the_checkpoint() {
    let dir = setup();
    let out = bin(
        dir.path(),
        &["--config", "cfg.toml", "sweep", "--out", "s.csv"],
    );
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("checkpoint"), "{msg}");
    assert_eq!(msg.trim().lines().count(), 1);
}

#[test]
fn usage_and_config_errors() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(bin(d, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        bin(d, &["gen-data", "--bogus", "--out", "x"]).status.code(),
        Some(2)
    );
    assert_eq!(bin(d, &[]).status.code(), Some(2));
    std::fs::write(d.join("bad.toml"), "[link]\nstreams = 0\n").unwrap();
    let out = bin(d, &["--config", "bad.toml", "gen-data", "--out", "x.bin"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
    let out = bin(
        d,
        &["--config", "missing.toml", "gen-data", "--out", "x.bin"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_theory_matches_library() {
    let dir = setup();
    let d = dir.path();
    let cfg = ExperimentConfig::from_toml_str(SMALL).unwrap();
    let heldout = gen_heldout(&cfg, 1).unwrap();
    let h = heldout.target(0).clone();
    let p = Precoder::scaled_identity(8, 8.0).matrix;
    let mut buf = Vec::new();
    write_pair(&mut buf, &h, &p).unwrap();
    std::fs::write(d.join("pair.bin"), buf).unwrap();

    for order in [4usize, 16] {
        let printed = ok(
            d,
            &[
                "--config",
                "cfg.toml",
                "eval-theory",
                "--pair",
                "pair.bin",
                "--sigma2",
                "0.05",
                "--order",
                &order.to_string(),
            ],
        );
        let got: f64 = printed.trim().parse().unwrap();
        let want = fer_theory(
            &DdChannel::new(cfg.grid, h.clone()).unwrap(),
            None,
            &Precoder::new(p.clone(), 8.0).unwrap(),
            0.05,
            &make_constellation(order).unwrap(),
        )
        .unwrap();
        assert!(
            (got - want).abs() <= 1e-12 * want.max(1e-300),
            "{got} vs {want}"
        );
    }
    let by_db = ok(
        d,
        &[
            "--config",
            "cfg.toml",
            "eval-theory",
            "--pair",
            "pair.bin",
            "--snr-db",
            "10",
        ],
    );
    let by_var = ok(
        d,
        &[
            "--config",
            "cfg.toml",
            "eval-theory",
            "--pair",
            "pair.bin",
            "--sigma2",
            "0.1",
        ],
    );
    assert_eq!(by_db, by_var);
    assert_eq!(
        bin(
            d,
            &["--config", "cfg.toml", "eval-theory", "--pair", "pair.bin"]
        )
        .status
        .code(),
        Some(2)
    );
}
