use std::collections::HashSet;
use std::fs;
use std::path::Path;

use coreselect::data::{decode_binary, encode_binary};
use coreselect::eval::{self, comparison_csv, curve_csv, ComparisonRow};
use coreselect::kmedoids::{cluster_report, cluster_report_csv};
use coreselect::pca::{self, PcaModel};
use coreselect::sampler::{representation_csv, representation_report, selection_csv, selection_rows, SelectionRow};
use coreselect::synthetic::{generate, MixtureSpec};
use coreselect::{
    build_coreset, cluster_classes, split, ClassClustering, ClusterConfig, CoresetSize, CoresetSpec, EmbeddingFormat,
    EmbeddingMatrix, Manifest, SampleId, SamplingMethod, SplitSpec,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::state::{digest_parts, OutputSet, PipelineState, StageRecord};

pub const PCA_SECTION: &str = "sections/pca.cpca";
pub const TRAIN_SECTION: &str = "sections/train.csel";
pub const TEST_SECTION: &str = "sections/test.csel";
pub const CLUSTERINGS_SECTION: &str = "sections/clusterings.json";
pub const CLUSTER_REPORT: &str = "clusters.csv";
pub const EVALUATION_CSV: &str = "evaluation.csv";
pub const EVALUATION_JSON: &str = "evaluation.json";
pub const CURVE_CSV: &str = "curve.csv";

pub const STAGES: [&str; 4] = ["reduce", "cluster", "sample", "evaluate"];

/// What a command did: status lines for the terminal, plus the main data
/// product for `--stdout`.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub stage: String,
    pub skipped: bool,
    pub messages: Vec<String>,
    pub data: Option<String>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

/// Stem of the files for one coreset, e.g. `intelligent_f0.25_s3`.
pub fn selection_stem(method: SamplingMethod, fraction: f64, seed: u64) -> String {
    format!("selections/{}_f{fraction}_s{seed}", method.as_str())
}

// ---- generate ----

pub fn cmd_generate(spec_path: &Path, out: &Path, format: EmbeddingFormat, name: Option<&str>) -> Result<Outcome> {
    let text = fs::read_to_string(spec_path).map_err(|e| CliError::io(spec_path, e))?;
    let spec: MixtureSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", spec_path.display())))?;
    let data = generate(&spec)?;
    let name = match name {
        Some(n) => n.to_owned(),
        None => spec_path.file_stem().and_then(|s| s.to_str()).unwrap_or("synthetic").to_owned(),
    };
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let file = format!("{name}.{}", format.extension());
    coreselect::save_embeddings(&data.matrix, &out.join(&file), format)?;
    let manifest = Manifest::describe(
        &name,
        &data.matrix,
        file.clone().into(),
        format,
        &format!("synthetic mixture, seed {}", spec.seed),
    );
    manifest.save(&out.join("manifest.json"))?;
    let m = &data.matrix;
    let truth: Vec<SelectionRow> = (0..m.n())
        .map(|r| SelectionRow {
            id: m.ids()[r],
            class: m.class_names()[m.labels()[r] as usize].clone(),
            cluster: data.cluster_of[r],
        })
        .collect();
    let truth_file = format!("{name}_clusters.csv");
    let truth_csv = selection_csv(&truth);
    fs::write(out.join(&truth_file), &truth_csv).map_err(|e| CliError::io(&out.join(&truth_file), e))?;
    Ok(Outcome {
        stage: "generate".into(),
        skipped: false,
        messages: vec![format!(
            "generate: {} rows x {} dims, {} classes -> {}",
            m.n(),
            m.dim(),
            m.num_classes(),
            out.join("manifest.json").display()
        )],
        data: Some(truth_csv),
    })
}

// ---- digests ----

/// Input digest of `stage` under `cfg`, requiring every upstream stage to be
/// current.
fn input_digest(stage: &str, cfg: &PipelineConfig, state: &PipelineState, dataset: &str) -> Result<String> {
    let params = |v: serde_json::Value| v.to_string().into_bytes();
    Ok(match stage {
        "reduce" => digest_parts(&[
            b"reduce",
            dataset.as_bytes(),
            &params(json!({
                "split_fraction": cfg.split_fraction,
                "seed": cfg.seed,
                "pca_threshold": cfg.pca_threshold,
            })),
        ]),
        "cluster" => {
            let up = require_current("reduce", cfg, state, dataset)?.output_digest();
            digest_parts(&[
                b"cluster",
                up.as_bytes(),
                &params(json!({
                    "k_range": cfg.k_range,
                    "metric": cfg.metric,
                    "seed": cfg.seed,
                    "max_iter": cfg.max_iter,
                })),
            ])
        }
        "sample" => {
            let up = require_current("cluster", cfg, state, dataset)?.output_digest();
            digest_parts(&[
                b"sample",
                up.as_bytes(),
                &params(json!({
                    "fractions": cfg.fractions,
                    "methods": cfg.methods,
                    "seeds": cfg.seeds,
                    "cluster_allocation": cfg.cluster_allocation,
                    "class_allocation": cfg.class_allocation,
                })),
            ])
        }
        "evaluate" => {
            let up = require_current("sample", cfg, state, dataset)?.output_digest();
            digest_parts(&[b"evaluate", up.as_bytes(), &params(json!({ "classifier": cfg.classifier }))])
        }
        other => unreachable!("unknown stage {other}"),
    })
}

fn require_current<'s>(
    stage: &str,
    cfg: &PipelineConfig,
    state: &'s PipelineState,
    dataset: &str,
) -> Result<&'s StageRecord> {
    let expected = input_digest(stage, cfg, state, dataset)?;
    if !state.is_current(&cfg.out, stage, &expected) {
        return Err(CliError::State(format!(
            "stage `{stage}` is missing or stale for this config; run `{stage}` first"
        )));
    }
    Ok(&state.stages[stage])
}

fn dataset_digest(cfg: &PipelineConfig) -> Result<(String, Manifest)> {
    let manifest_bytes = read(&cfg.input)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| CliError::Config(format!("{}: {e}", cfg.input.display())))?;
    let embeddings = read(&manifest.resolve_embedding_path(&cfg.input))?;
    Ok((digest_parts(&[&manifest_bytes, &embeddings]), manifest))
}

struct Ctx {
    state: PipelineState,
    dataset: String,
    manifest: Manifest,
}

fn open(cfg: &PipelineConfig) -> Result<Ctx> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    let state = PipelineState::load(&cfg.out)?;
    let (dataset, manifest) = dataset_digest(cfg)?;
    Ok(Ctx { state, dataset, manifest })
}

fn matrix_section(ctx: &Ctx, cfg: &PipelineConfig, rel: &str) -> Result<EmbeddingMatrix> {
    Ok(decode_binary(&ctx.state.read_output(&cfg.out, "reduce", rel)?)?)
}

fn clusterings_section(ctx: &Ctx, cfg: &PipelineConfig) -> Result<Vec<ClassClustering>> {
    let bytes = ctx.state.read_output(&cfg.out, "cluster", CLUSTERINGS_SECTION)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::State(format!("{CLUSTERINGS_SECTION}: {e}")))
}

fn finish(ctx: &mut Ctx, cfg: &PipelineConfig, stage: &str, input: String, files: OutputSet, summary: serde_json::Value) -> Result<()> {
    ctx.state.dataset_digest = Some(ctx.dataset.clone());
    ctx.state.stages.insert(
        stage.into(),
        StageRecord {
            input_digest: input,
            outputs: files.files,
            summary,
        },
    );
    ctx.state.save(&cfg.out)
}

fn skipped(stage: &str, ctx: &Ctx) -> Outcome {
    let summary = &ctx.state.stages[stage].summary;
    Outcome {
        stage: stage.into(),
        skipped: true,
        messages: vec![format!("{stage}: up to date ({summary})")],
        data: None,
    }
}

// ---- stages ----

fn run_reduce(ctx: &mut Ctx, cfg: &PipelineConfig) -> Result<Outcome> {
    let input = input_digest("reduce", cfg, &ctx.state, &ctx.dataset)?;
    if ctx.state.is_current(&cfg.out, "reduce", &input) {
        return Ok(skipped("reduce", ctx));
    }
    let m = ctx.manifest.load_embeddings(&cfg.input)?;
    let spec = SplitSpec {
        train_fraction: cfg.split_fraction,
        seed: cfg.seed,
        stratified: true,
    };
    let (train, test) = split(&m, &spec)?;
    let model = pca::fit(&train, cfg.pca_threshold)?;
    let train_r = pca::transform(&model, &train)?;
    let test_r = pca::transform(&model, &test)?;
    let mut files = OutputSet::new(&cfg.out);
    files.write(PCA_SECTION, &model.to_bytes())?;
    files.write(TRAIN_SECTION, &encode_binary(&train_r))?;
    files.write(TEST_SECTION, &encode_binary(&test_r))?;
    let summary = json!({
        "input_dim": model.input_dim(),
        "retained": model.retained(),
        "cumulative_variance": model.cumulative_variance(),
        "train": train.n(),
        "test": test.n(),
    });
    finish(ctx, cfg, "reduce", input, files, summary)?;
    Ok(Outcome {
        stage: "reduce".into(),
        skipped: false,
        messages: vec![
            format!("reduce: split {} train / {} test", train.n(), test.n()),
            format!(
                "reduce: k={} of d={}, cumulative variance {}",
                model.retained(),
                model.input_dim(),
                model.cumulative_variance()
            ),
        ],
        data: None,
    })
}

fn run_cluster(ctx: &mut Ctx, cfg: &PipelineConfig) -> Result<Outcome> {
    let input = input_digest("cluster", cfg, &ctx.state, &ctx.dataset)?;
    if ctx.state.is_current(&cfg.out, "cluster", &input) {
        return Ok(skipped("cluster", ctx));
    }
    let train = matrix_section(ctx, cfg, TRAIN_SECTION)?;
    let config = ClusterConfig {
        k_min: cfg.k_range[0],
        k_max: cfg.k_range[1],
        metric: cfg.metric,
        seed: cfg.seed,
        max_iter: cfg.max_iter,
    };
    let clusterings = cluster_classes(&train, &config)?;
    let report = cluster_report_csv(&cluster_report(&clusterings));
    let mut files = OutputSet::new(&cfg.out);
    files.write(CLUSTERINGS_SECTION, &json_bytes(&clusterings))?;
    files.write(CLUSTER_REPORT, report.as_bytes())?;
    let per_class: Vec<_> = clusterings
        .iter()
        .map(|c| json!({ "class": c.class_name, "k": c.k, "silhouette": c.silhouette, "fallback": c.fallback }))
        .collect();
    let messages = clusterings
        .iter()
        .map(|c| match c.silhouette {
            Some(s) => format!("cluster: {} k={} sizes {:?} silhouette {s:.4}", c.class_name, c.k, c.cluster_sizes()),
            None => format!("cluster: {} k=1 (too few samples, single cluster)", c.class_name),
        })
        .collect();
    finish(ctx, cfg, "cluster", input, files, json!(per_class))?;
    Ok(Outcome {
        stage: "cluster".into(),
        skipped: false,
        messages,
        data: Some(report),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SelectionEntry {
    method: SamplingMethod,
    fraction: f64,
    seed: u64,
    size: usize,
    file: String,
}

fn run_sample(ctx: &mut Ctx, cfg: &PipelineConfig) -> Result<Outcome> {
    let input = input_digest("sample", cfg, &ctx.state, &ctx.dataset)?;
    if ctx.state.is_current(&cfg.out, "sample", &input) {
        return Ok(skipped("sample", ctx));
    }
    let train = matrix_section(ctx, cfg, TRAIN_SECTION)?;
    let clusterings = clusterings_section(ctx, cfg)?;
    let units: Vec<CoresetSpec> = cfg
        .fractions
        .iter()
        .flat_map(|&f| {
            cfg.seeds.iter().flat_map(move |&s| {
                cfg.methods.iter().map(move |&m| CoresetSpec {
                    size: CoresetSize::Fraction(f),
                    method: m,
                    seed: s,
                    cluster_allocation: cfg.cluster_allocation,
                    class_allocation: cfg.class_allocation,
                })
            })
        })
        .collect();
    let built = units
        .par_iter()
        .map(|spec| {
            let sel = build_coreset(&train, Some(&clusterings), spec)?;
            let rows = selection_csv(&selection_rows(&sel, &clusterings)?);
            let rep = representation_csv(&representation_report(&sel, &clusterings)?);
            Ok((sel, rows, rep))
        })
        .collect::<coreselect::Result<Vec<_>>>()?;
    let mut files = OutputSet::new(&cfg.out);
    let mut entries = Vec::new();
    for (spec, (sel, rows, rep)) in units.iter().zip(&built) {
        let CoresetSize::Fraction(fraction) = spec.size else { unreachable!() };
        let stem = selection_stem(spec.method, fraction, spec.seed);
        files.write(&format!("{stem}.csv"), rows.as_bytes())?;
        files.write(&format!("{stem}.json"), &json_bytes(sel))?;
        files.write(&format!("{stem}_representation.csv"), rep.as_bytes())?;
        entries.push(SelectionEntry {
            method: spec.method,
            fraction,
            seed: spec.seed,
            size: sel.len(),
            file: format!("{stem}.csv"),
        });
    }
    let messages = vec![format!("sample: wrote {} coresets from {} training rows", entries.len(), train.n())];
    finish(ctx, cfg, "sample", input, files, json!(entries))?;
    Ok(Outcome {
        stage: "sample".into(),
        skipped: false,
        messages,
        data: None,
    })
}

fn run_evaluate(ctx: &mut Ctx, cfg: &PipelineConfig) -> Result<Outcome> {
    let input = input_digest("evaluate", cfg, &ctx.state, &ctx.dataset)?;
    if ctx.state.is_current(&cfg.out, "evaluate", &input) {
        return Ok(skipped("evaluate", ctx));
    }
    let train = matrix_section(ctx, cfg, TRAIN_SECTION)?;
    let test = matrix_section(ctx, cfg, TEST_SECTION)?;
    let entries: Vec<SelectionEntry> = serde_json::from_value(ctx.state.stages["sample"].summary.clone())
        .map_err(|e| CliError::State(format!("sample summary: {e}")))?;
    let selections = entries
        .iter()
        .map(|e| {
            let text = ctx.state.read_output(&cfg.out, "sample", &e.file)?;
            let rows = coreselect::sampler::parse_selection_csv(&String::from_utf8_lossy(&text))?;
            Ok(rows.into_iter().map(|r| r.id).collect::<Vec<SampleId>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let results = entries
        .par_iter()
        .zip(&selections)
        .map(|(e, ids)| {
            let unique: HashSet<&SampleId> = ids.iter().collect();
            if unique.len() != ids.len() {
                return Err(coreselect::Error::Consistency(format!("{} repeats an id", e.file)));
            }
            let coreset = train.select_ids(ids)?;
            let spec = CoresetSpec {
                size: CoresetSize::Fraction(e.fraction),
                method: e.method,
                seed: e.seed,
                cluster_allocation: cfg.cluster_allocation,
                class_allocation: cfg.class_allocation,
            };
            let report = eval::evaluate(&coreset, &test, cfg.classifier, Some(spec))?;
            let row = ComparisonRow {
                method: e.method,
                fraction: e.fraction,
                seed: e.seed,
                coreset_size: ids.len(),
                accuracy: report.metrics.accuracy,
                precision_macro: report.metrics.precision_macro,
                recall_macro: report.metrics.recall_macro,
                f1_macro: report.metrics.f1_macro,
            };
            Ok((row, report))
        })
        .collect::<coreselect::Result<Vec<_>>>()?;
    let (rows, reports): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let summary = eval::summarize(&rows, &cfg.fractions, &cfg.methods);
    let comparison = eval::Comparison {
        rows,
        summary,
        reports,
    };
    let table = comparison_csv(&comparison.rows);
    let mut files = OutputSet::new(&cfg.out);
    files.write(EVALUATION_CSV, table.as_bytes())?;
    files.write(EVALUATION_JSON, &json_bytes(&comparison))?;
    files.write(CURVE_CSV, curve_csv(&comparison.summary).as_bytes())?;
    let messages = comparison
        .summary
        .iter()
        .map(|s| {
            format!(
                "evaluate: {} f={} accuracy {:.4} ± {:.4}, macro recall {:.4}, macro F1 {:.4} over {} runs",
                s.method.as_str(),
                s.fraction,
                s.accuracy.mean,
                s.accuracy.stddev,
                s.recall_macro.mean,
                s.f1_macro.mean,
                s.runs
            )
        })
        .collect();
    let cells: Vec<_> = comparison
        .summary
        .iter()
        .map(|s| json!({ "method": s.method, "fraction": s.fraction, "accuracy": s.accuracy.mean }))
        .collect();
    finish(ctx, cfg, "evaluate", input, files, json!(cells))?;
    Ok(Outcome {
        stage: "evaluate".into(),
        skipped: false,
        messages,
        data: Some(table),
    })
}

pub fn cmd_stage(stage: &str, cfg: &PipelineConfig) -> Result<Outcome> {
    let mut ctx = open(cfg)?;
    match stage {
        "reduce" => run_reduce(&mut ctx, cfg),
        "cluster" => run_cluster(&mut ctx, cfg),
        "sample" => run_sample(&mut ctx, cfg),
        "evaluate" => run_evaluate(&mut ctx, cfg),
        other => Err(CliError::Config(format!("unknown stage `{other}`"))),
    }
}

pub fn cmd_reduce(cfg: &PipelineConfig) -> Result<Outcome> {
    cmd_stage("reduce", cfg)
}

pub fn cmd_cluster(cfg: &PipelineConfig) -> Result<Outcome> {
    cmd_stage("cluster", cfg)
}

pub fn cmd_sample(cfg: &PipelineConfig) -> Result<Outcome> {
    cmd_stage("sample", cfg)
}

pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<Outcome> {
    cmd_stage("evaluate", cfg)
}

/// All stages in order; stages whose inputs are unchanged are skipped.
pub fn cmd_pipeline(cfg: &PipelineConfig) -> Result<Vec<Outcome>> {
    let mut ctx = open(cfg)?;
    let mut out = vec![run_reduce(&mut ctx, cfg)?];
    out.push(run_cluster(&mut ctx, cfg)?);
    out.push(run_sample(&mut ctx, cfg)?);
    out.push(run_evaluate(&mut ctx, cfg)?);
    Ok(out)
}

/// Human-readable summary of the state in `out`.
pub fn cmd_inspect(out: &Path) -> Result<String> {
    let state = PipelineState::load(out)?;
    let mut text = format!(
        "state {} (format {} v{})\ndataset {}\n",
        PipelineState::path(out).display(),
        state.format,
        state.version,
        state.dataset_digest.as_deref().unwrap_or("-")
    );
    for stage in STAGES {
        match state.stages.get(stage) {
            None => text.push_str(&format!("{stage}: not run\n")),
            Some(r) => {
                let intact = r
                    .outputs
                    .iter()
                    .all(|(rel, d)| fs::read(out.join(rel)).is_ok_and(|b| crate::state::sha256_hex(&b) == *d));
                text.push_str(&format!(
                    "{stage}: input {} | {} files{} | {}\n",
                    &r.input_digest[..12],
                    r.outputs.len(),
                    if intact { "" } else { " (MODIFIED)" },
                    r.summary
                ));
            }
        }
    }
    if state.stages.contains_key("reduce") {
        if let Ok(b) = state.read_output(out, "reduce", PCA_SECTION) {
            let model = PcaModel::from_bytes(&b)?;
            text.push_str(&format!(
                "pca: k={} of d={}, cumulative variance {}\n",
                model.retained(),
                model.input_dim(),
                model.cumulative_variance()
            ));
        }
    }
    Ok(text)
}
