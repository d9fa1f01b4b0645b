use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use syncore::PairMatrix;

fn syncore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_syncore"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn syncore_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_syncore"))
        .args(args)
        .envs(env.iter().copied())
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(dir: &Path, rel: &str) -> String {
    dir.join(rel).display().to_string()
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

fn synth(dir: &Path, out: &str, extra: &[&str]) {
    let o = path(dir, out);
    let mut args = vec!["synth", "--output-dir", &o];
    args.extend_from_slice(extra);
    ok(syncore(&args));
}

fn phid(dir: &Path, rec: &str, out: &str, extra: &[&str]) {
    let (i, o) = (path(dir, rec), path(dir, out));
    let mut args = vec!["phid", "--input", &i, "--output-dir", &o];
    args.extend_from_slice(extra);
    ok(syncore(&args));
}

#[test]
fn missing_input_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = syncore(&[
        "phid",
        "--input",
        &path(tmp.path(), "absent.phid"),
        "--output-dir",
        &path(tmp.path(), "out"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("absent.phid"));
}

#[test]
fn non_stationary_ar_coefficient_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    for ar in ["1.0", "-1.5"] {
        let out = syncore(&[
            "synth",
            "--kind",
            "redundant_common_driver",
            "--ar",
            ar,
            "--output-dir",
            &path(tmp.path(), "s"),
        ]);
        assert_eq!(out.status.code(), Some(2), "ar {ar}");
    }
}

#[test]
fn malformed_matrix_file_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.phim");
    fs::write(&bad, b"PHIM\x01garbage").unwrap();
    for cmd in ["rank", "graph"] {
        let out = syncore(&[
            cmd,
            "--input",
            &bad.display().to_string(),
            "--output-dir",
            &path(tmp.path(), cmd),
        ]);
        assert_eq!(out.status.code(), Some(2), "{cmd}: {}", stderr(&out));
    }
}

#[test]
fn single_layer_rank_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(
        d,
        "s",
        &[
            "--kind",
            "independent_noise",
            "--n-prompts",
            "4",
            "--timesteps",
            "30",
        ],
    );
    phid(d, "s/recording.phid", "p", &[]);
    let out = syncore(&[
        "rank",
        "--input",
        &path(d, "p/pairs.phim"),
        "--output-dir",
        &path(d, "r"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("layer"), "{}", stderr(&out));
}

#[test]
fn rank_subset_sizes_round_the_fraction() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(
        d,
        "s",
        &[
            "--kind",
            "redundant_common_driver",
            "--n-units",
            "8",
            "--n-layers",
            "2",
            "--n-prompts",
            "6",
            "--timesteps",
            "40",
        ],
    );
    phid(d, "s/recording.phid", "p", &[]);
    ok(syncore(&[
        "rank",
        "--input",
        &path(d, "p/pairs.phim"),
        "--output-dir",
        &path(d, "r"),
        "--fractions",
        "0.25",
        "--seeds",
        "0,1",
    ]));
    for name in [
        "most_synergistic__f0.25.json",
        "most_redundant__f0.25.json",
        "random__f0.25__s0.json",
        "random__f0.25__s1.json",
    ] {
        let v = read_json(d.join("r/subsets").join(name));
        assert_eq!(v["unit_ids"].as_array().unwrap().len(), 2, "{name}");
        assert_eq!(v["fraction"], 0.25);
    }
    let order = read_json(d.join("r/orders/synergistic.json"));
    let mut ids: Vec<u64> = order["unit_ids"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    ids.sort_unstable();
    assert_eq!(ids, (0..8).collect::<Vec<_>>());
    let csv = fs::read_to_string(d.join("r/ranks.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 9);
}

#[test]
fn zero_matrix_graph_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(
        d,
        "s",
        &[
            "--kind",
            "independent_noise",
            "--n-prompts",
            "3",
            "--timesteps",
            "30",
        ],
    );
    phid(d, "s/recording.phid", "p", &[]);
    let mut pm = PairMatrix::load(d.join("p/pairs.phim")).unwrap();
    pm.synergy.iter_mut().for_each(|v| *v = 0.0);
    pm.redundancy.iter_mut().for_each(|v| *v = 0.0);
    pm.save(d.join("zero.phim")).unwrap();
    let out = syncore(&[
        "graph",
        "--input",
        &path(d, "zero.phim"),
        "--output-dir",
        &path(d, "g"),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn common_driver_layers_form_redundancy_modules() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(
        d,
        "s",
        &[
            "--kind",
            "redundant_common_driver",
            "--n-units",
            "16",
            "--n-layers",
            "4",
            "--n-prompts",
            "10",
            "--timesteps",
            "80",
        ],
    );
    phid(d, "s/recording.phid", "p", &[]);
    ok(syncore(&[
        "graph",
        "--input",
        &path(d, "p/pairs.phim"),
        "--output-dir",
        &path(d, "g"),
    ]));
    let m = read_json(d.join("g/graph_metrics.json"));
    let q_red = m["redundancy"]["modularity_q"].as_f64().unwrap();
    let q_syn = m["synergy"]["modularity_q"].as_f64().unwrap();
    assert!(q_red >= q_syn, "redundancy Q {q_red} < synergy Q {q_syn}");
    let edges = fs::read_to_string(d.join("g/redundancy_top.edges")).unwrap();
    assert!(edges.starts_with("# n 16\n# config "));
}

#[test]
fn parity_synth_writes_synthetic_units() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(
        d,
        "s",
        &[
            "--kind",
            "parity_discrete",
            "--n-prompts",
            "2",
            "--timesteps",
            "20",
        ],
    );
    let rec = syncore::load_recording(d.join("s/recording.phid")).unwrap();
    assert_eq!(rec.n_units(), 2);
    assert!(rec
        .units()
        .iter()
        .all(|u| u.kind == syncore::UnitKind::Synthetic));
    let manifest = read_json(d.join("s/synth_manifest.json"));
    assert_eq!(manifest["spec"]["kind"], "parity_discrete");
}

#[test]
fn incomplete_trace_set_names_the_missing_file() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(
        d,
        "t",
        &[
            "--kind",
            "logit_scenario",
            "--n-units",
            "10",
            "--n-prompts",
            "2",
            "--fractions",
            "0,0.5",
            "--seeds",
            "0..5",
        ],
    );
    let missing = syncore::divergence::ablated_file_name("synth-0001", "random", 0.5, 4);
    fs::remove_file(d.join("t").join(&missing)).unwrap();
    let out = syncore(&[
        "divergence",
        "--input",
        &path(d, "t"),
        "--fractions",
        "0,0.5",
        "--seeds",
        "0..5",
        "--output-dir",
        &path(d, "c"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains(&missing), "{}", stderr(&out));
}

#[test]
fn divergence_curve_from_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(
        d,
        "t",
        &[
            "--kind",
            "logit_scenario",
            "--n-units",
            "10",
            "--critical",
            "2,7",
            "--fractions",
            "0,0.2,1",
            "--seeds",
            "0..3",
        ],
    );
    ok(syncore(&[
        "divergence",
        "--input",
        &path(d, "t"),
        "--fractions",
        "0,0.2,1",
        "--seeds",
        "0..3",
        "--output-dir",
        &path(d, "c"),
    ]));
    let csv = fs::read_to_string(d.join("c/curve.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    let mean = |f: &str, order: &str| -> f64 {
        rows.iter()
            .find(|r| r[0] == f && r[1] == order && r[2] == "all")
            .unwrap()[3]
            .parse()
            .unwrap()
    };
    assert_eq!(mean("0", "synergistic"), 0.0);
    assert!(mean("0.2", "synergistic") > mean("0.2", "random"));
    assert!((mean("1", "synergistic") - mean("1", "random")).abs() < 1e-6);
}

#[test]
fn environment_overrides_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out_dir = path(d, "env");
    ok(syncore_env(
        &["synth"],
        &[
            ("SYNCORE_KIND", "independent_noise"),
            ("SYNCORE_N_UNITS", "5"),
            ("SYNCORE_N_PROMPTS", "2"),
            ("SYNCORE_TIMESTEPS", "12"),
            ("SYNCORE_OUTPUT_DIR", &out_dir),
        ],
    ));
    let rec = syncore::load_recording(d.join("env/recording.phid")).unwrap();
    assert_eq!(
        (rec.n_units(), rec.n_prompts(), rec.n_timesteps()),
        (5, 2, 12)
    );
}

#[test]
fn matrices_do_not_depend_on_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(
        d,
        "s",
        &[
            "--kind",
            "synergistic_sum_preserving",
            "--n-prompts",
            "5",
            "--timesteps",
            "50",
        ],
    );
    phid(d, "s/recording.phid", "w1", &["--workers", "1"]);
    phid(d, "s/recording.phid", "w3", &["--workers", "3"]);
    let a = PairMatrix::load(d.join("w1/pairs.phim")).unwrap();
    let b = PairMatrix::load(d.join("w3/pairs.phim")).unwrap();
    assert_eq!(a.synergy, b.synergy);
    assert_eq!(a.redundancy, b.redundancy);
    assert_eq!(
        fs::read(d.join("w1/synergy.csv")).unwrap().len(),
        fs::read(d.join("w3/synergy.csv")).unwrap().len()
    );
}

#[test]
fn checkpointed_run_matches_direct_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(
        d,
        "s",
        &[
            "--kind",
            "layered_inverted_u",
            "--n-prompts",
            "3",
            "--timesteps",
            "30",
        ],
    );
    phid(d, "s/recording.phid", "direct", &[]);
    phid(
        d,
        "s/recording.phid",
        "ckpt",
        &["--checkpoint", "--batch-pairs", "17"],
    );
    let a = PairMatrix::load(d.join("direct/pairs.phim")).unwrap();
    let b = PairMatrix::load(d.join("ckpt/pairs.phim")).unwrap();
    assert_eq!(a.synergy, b.synergy);
    assert_eq!(a.redundancy, b.redundancy);
    assert!(!d.join("ckpt/pairs.checkpoint").exists());
    let report = read_json(d.join("direct/phid_report.json"));
    assert_eq!(report["n_pairs"], 276);
}
