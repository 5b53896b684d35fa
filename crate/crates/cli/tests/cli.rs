use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use coreselect::data::decode_binary;
use coreselect::eval::Comparison;
use coreselect::kmedoids::parse_cluster_report_csv;
use coreselect::pca::PcaModel;
use coreselect::sampler::{allocate_equal, parse_representation_csv, parse_selection_csv};
use coreselect::synthetic::{four_cluster_scenario, generate, ClassSpec, ClusterSpec, MixtureSpec};
use coreselect::{save_embeddings, EmbeddingFormat, EmbeddingMatrix, Manifest, SampleId};
use coreselect_cli::commands::{self, selection_stem};
use coreselect_cli::{PipelineConfig, PipelineState};
use ndarray::Array2;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_coreselect"));
    c.env_remove("RUST_LOG").env_remove("CORESELECT_WORKERS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn write_spec(dir: &Path, spec: &MixtureSpec) -> PathBuf {
    let path = dir.join("spec.json");
    fs::write(&path, serde_json::to_string_pretty(spec).unwrap()).unwrap();
    path
}

fn write_matrix(dir: &Path, m: &EmbeddingMatrix) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    save_embeddings(m, &dir.join("data.csv"), EmbeddingFormat::Csv).unwrap();
    let manifest = Manifest::describe("t", m, "data.csv".into(), EmbeddingFormat::Csv, "test");
    let path = dir.join("manifest.json");
    manifest.save(&path).unwrap();
    path
}

fn matrix(data: Array2<f64>, labels: Vec<u32>, names: &[&str]) -> EmbeddingMatrix {
    let n = data.nrows();
    EmbeddingMatrix::new(
        (0..n as u64).map(SampleId).collect(),
        labels,
        names.iter().map(|s| s.to_string()).collect(),
        data,
    )
    .unwrap()
}

/// Generates the imbalanced four-cluster scenario and returns a config for it.
fn imbalanced_setup(dir: &Path) -> PipelineConfig {
    let spec = write_spec(dir, &four_cluster_scenario(5, 0.5, 10.0));
    let out = run(&["generate", "--spec", spec.to_str().unwrap(), "--out", dir.join("data").to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    PipelineConfig {
        input: dir.join("data/manifest.json"),
        out: dir.join("run"),
        fractions: vec![0.2, 1.0],
        seeds: vec![1, 2],
        ..PipelineConfig::default()
    }
}

#[test]
fn generate_round_trips_through_the_loader() {
    let dir = TempDir::new().unwrap();
    let spec = four_cluster_scenario(11, 0.3, 5.0);
    let spec_path = write_spec(dir.path(), &spec);
    let expected = generate(&spec).unwrap();
    for format in ["binary", "csv"] {
        let out = dir.path().join(format);
        let o = run(&["generate", "--spec", spec_path.to_str().unwrap(), "--out", out.to_str().unwrap(), "--format", format]);
        assert!(o.status.success(), "{}", text(&o.stderr));
        let manifest_path = out.join("manifest.json");
        let m = Manifest::load(&manifest_path).unwrap().load_embeddings(&manifest_path).unwrap();
        assert_eq!(m.n(), 200);
        assert_eq!(m, expected.matrix);
        let truth = parse_selection_csv(&fs::read_to_string(out.join("spec_clusters.csv")).unwrap()).unwrap();
        let planted: Vec<usize> = truth.iter().map(|r| r.cluster).collect();
        assert_eq!(planted, expected.cluster_of);
    }
}

#[test]
fn generate_reports_spec_errors_with_line() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"dim\": 2,\n  \"seed\": oops\n}").unwrap();
    let o = run(&["generate", "--spec", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("line 3"), "{}", text(&o.stderr));

    let mut spec = four_cluster_scenario(1, 0.1, 1.0);
    spec.classes[0].clusters[0].weight = 0.9;
    let path = write_spec(dir.path(), &spec);
    let o = run(&["generate", "--spec", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

fn reduce_line(stderr: &str) -> (usize, usize, f64) {
    let line = stderr.lines().find(|l| l.contains("cumulative variance")).expect("variance line");
    let k = line.split("k=").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
    let d = line.split("d=").nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    let v = line.rsplit(' ').next().unwrap().parse().unwrap();
    (k, d, v)
}

#[test]
fn reduce_prints_k_and_variance() {
    let dir = TempDir::new().unwrap();
    // Rank 1: points on a line in 3-D.
    let line = Array2::from_shape_fn((20, 3), |(i, j)| (i as f64 + 1.0) * [0.6, 0.8, 0.0][j]);
    let labels = (0..20).map(|i| (i % 2) as u32).collect();
    let manifest = write_matrix(&dir.path().join("line"), &matrix(line, labels, &["a", "b"]));
    let out = dir.path().join("run-line");
    let o = run(&["reduce", "--input", manifest.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert_eq!(reduce_line(&text(&o.stderr)).0, 1);

    let mut rng = 1u64;
    let full = Array2::from_shape_fn((40, 4), |_| {
        rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (rng >> 11) as f64 / (1u64 << 53) as f64
    });
    let labels = (0..40).map(|i| (i % 2) as u32).collect();
    let manifest = write_matrix(&dir.path().join("full"), &matrix(full, labels, &["a", "b"]));
    let out = dir.path().join("run-full");
    let o = run(&[
        "reduce",
        "--input",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--pca-threshold",
        "1.0",
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let (k, d, v) = reduce_line(&text(&o.stderr));
    assert_eq!((k, d), (4, 4));
    let state = PipelineState::load(&out).unwrap();
    let model = PcaModel::from_bytes(&state.read_output(&out, "reduce", commands::PCA_SECTION).unwrap()).unwrap();
    assert!((model.cumulative_variance() - v).abs() <= 1e-9);
    assert_eq!(model.retained(), k);
}

#[test]
fn cluster_recovers_planted_clusters_and_sizes_add_up() {
    let dir = TempDir::new().unwrap();
    let cfg = imbalanced_setup(dir.path());
    commands::cmd_reduce(&cfg).unwrap();
    let outcome = commands::cmd_cluster(&cfg).unwrap();
    let rows = parse_cluster_report_csv(&fs::read_to_string(cfg.out.join("clusters.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(outcome.data.as_deref(), Some(fs::read_to_string(cfg.out.join("clusters.csv")).unwrap().as_str()));
    let train = decode_binary(&fs::read(cfg.out.join(commands::TRAIN_SECTION)).unwrap()).unwrap();
    assert_eq!(rows.iter().map(|r| r.size).sum::<usize>(), train.n());
}

#[test]
fn tiny_class_falls_back_with_a_warning() {
    let dir = TempDir::new().unwrap();
    let data = Array2::from_shape_vec((3, 2), vec![0.0, 0.0, 1.0, 0.5, 2.0, 0.1]).unwrap();
    let manifest = write_matrix(&dir.path().join("d"), &matrix(data, vec![0; 3], &["solo"]));
    let out = dir.path().join("run");
    let args = ["--input", manifest.to_str().unwrap(), "--out", out.to_str().unwrap()];
    assert!(run(&[&["reduce"][..], &args].concat()).status.success());
    let o = run(&[&["cluster"][..], &args].concat());
    assert!(o.status.success(), "{}", text(&o.stderr));
    let err = text(&o.stderr);
    assert!(err.contains("WARN"), "{err}");
    assert!(err.contains("k=1"), "{err}");
}

#[test]
fn sample_full_fraction_and_equal_allocation() {
    let dir = TempDir::new().unwrap();
    let cfg = imbalanced_setup(dir.path());
    commands::cmd_reduce(&cfg).unwrap();
    commands::cmd_cluster(&cfg).unwrap();
    commands::cmd_sample(&cfg).unwrap();
    let train = decode_binary(&fs::read(cfg.out.join(commands::TRAIN_SECTION)).unwrap()).unwrap();
    for method in cfg.methods.iter().copied() {
        let stem = selection_stem(method, 1.0, 1);
        let sel = parse_selection_csv(&fs::read_to_string(cfg.out.join(format!("{stem}.csv"))).unwrap()).unwrap();
        let ids: Vec<SampleId> = sel.iter().map(|r| r.id).collect();
        assert_eq!(ids, train.ids());
    }
    let stem = selection_stem(coreselect::SamplingMethod::Intelligent, 0.2, 2);
    let rep = parse_representation_csv(&fs::read_to_string(cfg.out.join(format!("{stem}_representation.csv"))).unwrap())
        .unwrap();
    let sizes: Vec<usize> = rep.iter().map(|r| r.source_size).collect();
    let picked: Vec<usize> = rep.iter().map(|r| r.selected).collect();
    let n = (0.2 * train.n() as f64).round() as usize;
    assert_eq!(picked.iter().sum::<usize>(), n);
    assert_eq!(picked, allocate_equal(n, &sizes));
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cfg.out.join(format!("{stem}.json"))).unwrap()).unwrap();
    assert_eq!(sidecar["spec"]["method"], "intelligent");
    assert_eq!(sidecar["per_cluster"].as_array().unwrap().len(), rep.len());

    // Same config into a fresh directory: identical selection files.
    let again = PipelineConfig { out: dir.path().join("run2"), ..cfg.clone() };
    commands::cmd_reduce(&again).unwrap();
    commands::cmd_cluster(&again).unwrap();
    commands::cmd_sample(&again).unwrap();
    for entry in fs::read_dir(cfg.out.join("selections")).unwrap() {
        let p = entry.unwrap().path();
        let twin = again.out.join("selections").join(p.file_name().unwrap());
        assert_eq!(fs::read(&p).unwrap(), fs::read(twin).unwrap());
    }
}

#[test]
fn pipeline_emits_everything_and_reruns_as_noop() {
    let dir = TempDir::new().unwrap();
    let cfg = imbalanced_setup(dir.path());
    let first = commands::cmd_pipeline(&cfg).unwrap();
    assert!(first.iter().all(|o| !o.skipped));
    for f in ["state.json", "clusters.csv", "evaluation.csv", "evaluation.json", "curve.csv", commands::PCA_SECTION] {
        assert!(cfg.out.join(f).is_file(), "{f} missing");
    }
    let comparison: Comparison = serde_json::from_str(&fs::read_to_string(cfg.out.join("evaluation.json")).unwrap()).unwrap();
    assert_eq!(comparison.rows.len(), 2 * 2 * 2);
    for pair in comparison.rows.chunks(2).filter(|p| p[0].fraction == 1.0) {
        assert_eq!(pair[0].accuracy, pair[1].accuracy);
        assert_eq!(pair[0].f1_macro, pair[1].f1_macro);
    }
    assert_eq!(fs::read_to_string(cfg.out.join("curve.csv")).unwrap().lines().count(), 1 + 2 * 2 * 4);

    let stamp = |p: &Path| fs::metadata(p).unwrap().modified().unwrap();
    let before = (stamp(&cfg.out.join("state.json")), stamp(&cfg.out.join("evaluation.csv")));
    let second = commands::cmd_pipeline(&cfg).unwrap();
    assert!(second.iter().all(|o| o.skipped));
    assert_eq!(before, (stamp(&cfg.out.join("state.json")), stamp(&cfg.out.join("evaluation.csv"))));

    // A changed downstream parameter reruns only what depends on it.
    let changed = PipelineConfig { seeds: vec![1, 3], ..cfg.clone() };
    let third = commands::cmd_pipeline(&changed).unwrap();
    let skipped: Vec<bool> = third.iter().map(|o| o.skipped).collect();
    assert_eq!(skipped, vec![true, true, false, false]);
}

#[test]
fn stale_or_corrupted_state_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = imbalanced_setup(dir.path());
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let c = cfg_path.to_str().unwrap();
    assert!(run(&["reduce", "-c", c]).status.success());
    // Sampling before clustering.
    let o = run(&["sample", "-c", c]);
    assert_eq!(o.status.code(), Some(3));
    assert!(text(&o.stderr).contains("cluster"));
    assert!(run(&["cluster", "-c", c]).status.success());
    // Tampered section.
    let train = cfg.out.join(commands::TRAIN_SECTION);
    let mut bytes = fs::read(&train).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&train, bytes).unwrap();
    assert_eq!(run(&["sample", "-c", c]).status.code(), Some(3));
    // Corrupted index.
    fs::write(cfg.out.join("state.json"), "{\"format\": \"coreselect-state\", \"version\": 1, \"sta").unwrap();
    let o = run(&["pipeline", "-c", c]);
    assert_eq!(o.status.code(), Some(3));
    assert!(text(&o.stderr).contains("version-1"), "{}", text(&o.stderr));
    let o = run(&["inspect", "-c", c]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn exit_codes_by_error_class() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(run(&["pipeline", "--input", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["pipeline", "-c", missing.to_str().unwrap()]).status.code(), Some(5));

    let flat = matrix(Array2::from_elem((10, 2), 3.0), (0..10).map(|i| (i % 2) as u32).collect(), &["a", "b"]);
    let manifest = write_matrix(&dir.path().join("flat"), &flat);
    let out = dir.path().join("run");
    let args = ["reduce", "--input", manifest.to_str().unwrap(), "--out", out.to_str().unwrap()];
    assert_eq!(run(&args).status.code(), Some(4));

    fs::write(dir.path().join("flat/data.csv"), "id,label,f0,f1\n0,a,1.0\n").unwrap();
    assert_eq!(run(&args).status.code(), Some(3));

    let bad = ["reduce", "--input", manifest.to_str().unwrap(), "--pca-threshold", "1.5"];
    assert_eq!(run(&bad).status.code(), Some(2));
}

#[test]
fn stdout_quiet_and_worker_cap() {
    let dir = TempDir::new().unwrap();
    let cfg = imbalanced_setup(dir.path());
    let input = cfg.input.to_str().unwrap().to_owned();
    let out_a = dir.path().join("a");
    let o = run(&["pipeline", "--quiet", "--stdout", "--input", &input, "--out", out_a.to_str().unwrap(), "--fraction", "0.2", "--seed", "4"]);
    assert!(o.status.success());
    assert!(o.stderr.is_empty(), "{}", text(&o.stderr));
    let stdout = text(&o.stdout);
    assert!(stdout.contains("class,cluster,size,medoid_id,mean_silhouette"));
    assert!(stdout.contains(&fs::read_to_string(out_a.join("evaluation.csv")).unwrap()));

    let out_b = dir.path().join("b");
    let o = bin()
        .env("CORESELECT_WORKERS", "1")
        .args(["pipeline", "--input", &input, "--out", out_b.to_str().unwrap(), "--fraction", "0.2", "--seed", "4"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    assert!(!o.stderr.is_empty());
    for f in ["evaluation.json", "state.json", "clusters.csv"] {
        assert_eq!(fs::read(out_a.join(f)).unwrap(), fs::read(out_b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn inspect_summarizes_stages() {
    let dir = TempDir::new().unwrap();
    let cfg = imbalanced_setup(dir.path());
    commands::cmd_reduce(&cfg).unwrap();
    let o = run(&["inspect", "--out", cfg.out.to_str().unwrap()]);
    assert!(o.status.success());
    let s = text(&o.stdout);
    assert!(s.contains("reduce: input"));
    assert!(s.contains("cluster: not run"));
    assert!(s.contains("pca: k="));
}

#[test]
fn multi_class_mixture_runs_end_to_end() {
    let dir = TempDir::new().unwrap();
    let cluster = |c: [f64; 3], w: f64| ClusterSpec { weight: w, center: c.to_vec(), stddev: 0.6 };
    let spec = MixtureSpec {
        dim: 3,
        seed: 2,
        exact_counts: false,
        classes: vec![
            ClassSpec { name: "x".into(), count: 80, clusters: vec![cluster([0.0, 0.0, 0.0], 0.7), cluster([5.0, 0.0, 0.0], 0.3)] },
            ClassSpec { name: "y".into(), count: 50, clusters: vec![cluster([0.0, 5.0, 0.0], 1.0)] },
            ClassSpec { name: "z".into(), count: 30, clusters: vec![cluster([0.0, 0.0, 5.0], 0.5), cluster([5.0, 5.0, 5.0], 0.5)] },
        ],
    };
    let spec_path = write_spec(dir.path(), &spec);
    let data = dir.path().join("data");
    assert!(run(&["generate", "--spec", spec_path.to_str().unwrap(), "--out", data.to_str().unwrap(), "--format", "csv"]).status.success());
    let cfg = PipelineConfig {
        input: data.join("manifest.json"),
        out: dir.path().join("run"),
        fractions: vec![0.25],
        seeds: vec![0],
        classifier: coreselect::ClassifierConfig::NearestMedoid,
        ..PipelineConfig::default()
    };
    let outcomes = commands::cmd_pipeline(&cfg).unwrap();
    assert_eq!(outcomes.len(), 4);
    let comparison: Comparison = serde_json::from_str(&fs::read_to_string(cfg.out.join("evaluation.json")).unwrap()).unwrap();
    assert!(comparison.rows.iter().all(|r| r.accuracy > 0.6), "{:?}", comparison.rows);
}
