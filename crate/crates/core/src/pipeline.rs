//! Pipeline wiring: resolved configuration, reproducibility manifests,
//! atomic artifact writes, and one runner per CLI subcommand.
//!
//! Every runner takes the same resolved [`PipelineConfig`], draws all of
//! its randomness from `config.seed`, and writes artifacts atomically
//! (temp file + rename) so a failed run never leaves partial outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{self, Dataset, Label};
use crate::dedup;
use crate::error::{Error, Result};
use crate::eval::{self, ClassCurves};
use crate::fusion::{
    self, CsvScoreEncoder, FusionHead, ModalityEncoder, StubImageEncoder, StubTextEncoder,
    TrainConfig,
};
use crate::prep::{self, SplitSpec};
use crate::simaudit::{self, IndexParams, SimIndex};
use crate::trend::{self, MonthKey, MonthlySeries, PolyFit};

/// LSH-audit knobs.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditParams {
    pub tables: u16,
    pub bits: u32,
    pub k: usize,
    pub flag_min_disagree: usize,
}

impl Default for AuditParams {
    fn default() -> Self {
        AuditParams {
            tables: 8,
            bits: 16,
            k: 5,
            flag_min_disagree: 3,
        }
    }
}

/// Fusion-head training knobs (seed lives at the top level).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainParams {
            learning_rate: d.learning_rate,
            max_epochs: d.max_epochs,
            batch_size: d.batch_size,
            patience: d.patience,
        }
    }
}

impl TrainParams {
    pub fn with_seed(self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            seed,
        }
    }
}

/// Fully resolved run configuration. Loadable from a TOML file; CLI flags
/// override individual fields.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub near_threshold: f64,
    pub fractions: [f64; 3],
    pub trend_from: String,
    pub audit: AuditParams,
    pub train: TrainParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            near_threshold: 0.95,
            fractions: [0.6, 0.2, 0.2],
            trend_from: "2018-01".to_string(),
            audit: AuditParams::default(),
            train: TrainParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.near_threshold) {
            return Err(Error::Config(format!(
                "near_threshold must be within [0, 1], got {}",
                self.near_threshold
            )));
        }
        self.split_spec()?;
        self.index_params().validate()?;
        if self.audit.k == 0 {
            return Err(Error::Config("audit.k must be positive".into()));
        }
        self.train.with_seed(self.seed).validate()?;
        self.trend_from()?;
        Ok(())
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        SplitSpec::new(
            self.fractions[0],
            self.fractions[1],
            self.fractions[2],
            self.seed,
        )
    }

    pub fn index_params(&self) -> IndexParams {
        IndexParams {
            tables: self.audit.tables,
            bits: self.audit.bits,
            seed: self.seed,
        }
    }

    pub fn trend_from(&self) -> Result<MonthKey> {
        self.trend_from
            .parse()
            .map_err(|_| Error::Config(format!("trend_from must be YYYY-MM, got {:?}", self.trend_from)))
    }
}

/// Loads the config file when given, otherwise the defaults.
pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let config = match path {
        None => PipelineConfig::default(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
    };
    config.validate()?;
    Ok(config)
}

/// Everything needed to reproduce a run byte-for-byte: resolved config,
/// input digests, and the tool version. Only `created_at` varies between
/// identical runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: PipelineConfig,
    pub inputs: BTreeMap<String, String>,
    pub created_at: String,
}

pub fn emit_run_manifest(
    command: &str,
    config: &PipelineConfig,
    inputs: &[&Path],
    path: &Path,
) -> Result<RunManifest> {
    let mut digests = BTreeMap::new();
    for input in inputs {
        digests.insert(input.display().to_string(), sha256_file(input)?);
    }
    let manifest = RunManifest {
        tool: "latefuse".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config: config.clone(),
        inputs: digests,
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
    };
    write_atomic(
        path,
        format!("{}\n", serde_json::to_string_pretty(&manifest).unwrap()).as_bytes(),
    )?;
    Ok(manifest)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("sha256:{}", hex::encode(Sha256::digest(&bytes))))
}

/// Writes via a temp file in the same directory plus rename, so readers
/// never observe a partial artifact and failures leave nothing behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a writable path: {}", path.display())))?;
    let mut tmp = path.to_path_buf();
    tmp.set_file_name(format!("{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    let result = (|| -> Result<()> {
        let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("report serializes");
    write_atomic(path, format!("{json}\n").as_bytes())
}

fn load_dataset(path: &Path) -> Result<corpus::Loaded> {
    corpus::load_posts(path)
}

/// `ingest`: load, sanitize text, keep only multimodal posts.
#[derive(Debug, Serialize)]
pub struct IngestReport {
    pub loaded: usize,
    pub skipped_lines: usize,
    pub filter: corpus::FilterReport,
}

pub fn run_ingest(input: &Path, output: &Path, report_path: Option<&Path>) -> Result<IngestReport> {
    let loaded = load_dataset(input)?;
    let sanitized = corpus::sanitize_dataset(&loaded.dataset);
    let (filtered, filter) = corpus::filter_multimodal(&sanitized);
    write_atomic(output, corpus::posts_to_jsonl(&filtered)?.as_bytes())?;
    let report = IngestReport {
        loaded: loaded.dataset.len(),
        skipped_lines: loaded.skipped,
        filter,
    };
    if let Some(path) = report_path {
        write_json_atomic(path, &report)?;
    }
    Ok(report)
}

/// `dedupe`: perceptual plus exact-field duplicate removal.
pub fn run_dedupe(
    input: &Path,
    output: &Path,
    report_path: Option<&Path>,
    threshold: f64,
) -> Result<dedup::DedupReport> {
    let loaded = load_dataset(input)?;
    let (kept, report) = dedup::remove_duplicates(&loaded.dataset, threshold)?;
    write_atomic(output, corpus::posts_to_jsonl(&kept)?.as_bytes())?;
    if let Some(path) = report_path {
        write_json_atomic(path, &report)?;
    }
    Ok(report)
}

/// Builds the audit index from stub embeddings or an external embedding
/// file (record order = dataset order).
fn build_index(
    dataset: &Dataset,
    embeddings: Option<&Path>,
    params: IndexParams,
    seed: u64,
) -> Result<SimIndex> {
    let vectors = match embeddings {
        Some(path) => {
            let vectors = simaudit::read_embeddings(path)?;
            if vectors.len() != dataset.len() {
                return Err(Error::Data(format!(
                    "{} embeddings for {} posts",
                    vectors.len(),
                    dataset.len()
                )));
            }
            vectors
        }
        None => dataset
            .posts
            .iter()
            .map(|p| simaudit::stub_embed(p, seed))
            .collect(),
    };
    let items = dataset
        .posts
        .iter()
        .zip(vectors)
        .map(|(post, vector)| {
            let label = post
                .label
                .ok_or_else(|| Error::Data(format!("post {} is unlabeled", post.id)))?;
            Ok((post.id.clone(), vector, label))
        })
        .collect::<Result<Vec<_>>>()?;
    SimIndex::build(params, items)
}

/// `audit`: emit the flag report; optionally apply an explicit removal
/// list (one post id per line) to produce a cleaned dataset.
pub fn run_audit(
    input: &Path,
    embeddings: Option<&Path>,
    report_path: &Path,
    removals: Option<&Path>,
    output: Option<&Path>,
    config: &PipelineConfig,
) -> Result<simaudit::FlagReport> {
    let loaded = load_dataset(input)?;
    let index = build_index(&loaded.dataset, embeddings, config.index_params(), config.seed)?;
    let report = index.audit_labels(config.audit.k, config.audit.flag_min_disagree)?;
    write_json_atomic(report_path, &report)?;
    if let Some(removals_path) = removals {
        let output = output.ok_or_else(|| {
            Error::Config("applying a removal list requires an output path".into())
        })?;
        let text = fs::read_to_string(removals_path).map_err(|e| Error::io(removals_path, e))?;
        let ids: BTreeSet<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        let cleaned = simaudit::apply_removals(&loaded.dataset, &ids);
        write_atomic(output, corpus::posts_to_jsonl(&cleaned)?.as_bytes())?;
    }
    Ok(report)
}

/// `balance`: undersample every class to the minority size.
pub fn run_balance(input: &Path, output: &Path, seed: u64) -> Result<()> {
    let loaded = load_dataset(input)?;
    let balanced = prep::balance(&loaded.dataset, seed)?;
    write_atomic(output, corpus::posts_to_jsonl(&balanced)?.as_bytes())
}

/// `split`: stratified 60/20/20 membership CSV (id, split).
pub fn run_split(input: &Path, output: &Path, spec: &SplitSpec) -> Result<()> {
    let loaded = load_dataset(input)?;
    let (train, val, test) = prep::split(&loaded.dataset, spec)?;
    let mut csv = String::from("id,split\n");
    for (dataset, name) in [(&train, "train"), (&val, "val"), (&test, "test")] {
        for post in &dataset.posts {
            csv.push_str(&format!("{},{}\n", post.id, name));
        }
    }
    write_atomic(output, csv.as_bytes())
}

/// Split-membership file: id -> train|val|test.
pub fn read_split_csv(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut members = BTreeMap::new();
    for row in reader.deserialize::<(String, String)>() {
        let (id, part) = row.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if !matches!(part.as_str(), "train" | "val" | "test") {
            return Err(Error::Data(format!(
                "{}: unknown split {part:?} for id {id}",
                path.display()
            )));
        }
        members.insert(id, part);
    }
    Ok(members)
}

fn select_split(dataset: &Dataset, members: &BTreeMap<String, String>, part: &str) -> Dataset {
    let posts = dataset
        .posts
        .iter()
        .filter(|p| members.get(&p.id).map(String::as_str) == Some(part))
        .cloned()
        .collect();
    Dataset::new(posts, dataset.provenance.clone())
}

/// Builds the per-modality encoders: precomputed score CSVs when given,
/// otherwise the deterministic stubs.
pub fn make_encoders(
    text_scores: Option<&Path>,
    image_scores: Option<&Path>,
    seed: u64,
) -> Result<(Box<dyn ModalityEncoder>, Box<dyn ModalityEncoder>)> {
    let text: Box<dyn ModalityEncoder> = match text_scores {
        Some(path) => Box::new(CsvScoreEncoder::from_path("text", path)?),
        None => Box::new(StubTextEncoder::new(seed)),
    };
    let image: Box<dyn ModalityEncoder> = match image_scores {
        Some(path) => Box::new(CsvScoreEncoder::from_path("image", path)?),
        None => Box::new(StubImageEncoder::new(seed)),
    };
    Ok((text, image))
}

/// `train`: fit the fusion head on the train split, early-stop on val.
#[allow(clippy::too_many_arguments)]
pub fn run_train(
    input: &Path,
    splits: &Path,
    output: &Path,
    text_scores: Option<&Path>,
    image_scores: Option<&Path>,
    config: &PipelineConfig,
) -> Result<FusionHead> {
    let loaded = load_dataset(input)?;
    let members = read_split_csv(splits)?;
    let (text_encoder, image_encoder) = make_encoders(text_scores, image_scores, config.seed)?;
    let train_set = select_split(&loaded.dataset, &members, "train");
    let val_set = select_split(&loaded.dataset, &members, "val");
    let train_samples = fusion::encode_dataset(&train_set, &*text_encoder, &*image_encoder)?;
    let val_samples = fusion::encode_dataset(&val_set, &*text_encoder, &*image_encoder)?;
    let head = fusion::train_fusion(
        &train_samples,
        &val_samples,
        &config.train.with_seed(config.seed),
    )?;
    write_atomic(output, format!("{}\n", head.to_json()).as_bytes())?;
    Ok(head)
}

fn load_head(path: &Path) -> Result<FusionHead> {
    let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    FusionHead::from_json(&json)
}

fn curves_to_csv(kind: &str, set: &eval::CurveSet) -> String {
    let mut out = String::from("class,threshold,x,y\n");
    let mut push = |class: &str, curves: &ClassCurves| {
        let points = if kind == "roc" { &curves.roc } else { &curves.pr };
        for p in points {
            out.push_str(&format!("{class},{},{},{}\n", p.threshold, p.x, p.y));
        }
    };
    for (c, curves) in set.per_class.iter().enumerate() {
        if let Some(curves) = curves {
            push(&c.to_string(), curves);
        }
    }
    push("macro", &set.macro_avg);
    out
}

/// `eval`: metrics plus ROC/PR plot data on the test split.
#[derive(Debug, Serialize)]
pub struct EvalArtifacts {
    pub confusion: eval::ConfusionMatrix,
    pub metrics: eval::MetricReport,
}

#[allow(clippy::too_many_arguments)]
pub fn run_eval(
    input: &Path,
    splits: &Path,
    head_path: &Path,
    metrics_out: &Path,
    roc_out: Option<&Path>,
    pr_out: Option<&Path>,
    text_scores: Option<&Path>,
    image_scores: Option<&Path>,
    config: &PipelineConfig,
) -> Result<EvalArtifacts> {
    let loaded = load_dataset(input)?;
    let members = read_split_csv(splits)?;
    let head = load_head(head_path)?;
    let (text_encoder, image_encoder) = make_encoders(text_scores, image_scores, config.seed)?;
    let test_set = select_split(&loaded.dataset, &members, "test");
    if test_set.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    let mut preds = Vec::new();
    let mut truth = Vec::new();
    let mut prob_rows = Vec::new();
    for post in &test_set.posts {
        let label = post
            .label
            .ok_or_else(|| Error::Data(format!("post {} is unlabeled", post.id)))?;
        let (predicted, probs) =
            fusion::predict(post, &*text_encoder, &*image_encoder, &head)?;
        preds.push(predicted.code());
        truth.push(label.code());
        prob_rows.push(probs);
    }
    let confusion = eval::confusion(&preds, &truth)?;
    let metrics = eval::metrics(&confusion)?;
    let artifacts = EvalArtifacts { confusion, metrics };
    write_json_atomic(metrics_out, &artifacts)?;
    if roc_out.is_some() || pr_out.is_some() {
        let curves = eval::ovr_curves(&prob_rows, &truth)?;
        if let Some(path) = roc_out {
            write_atomic(path, curves_to_csv("roc", &curves).as_bytes())?;
        }
        if let Some(path) = pr_out {
            write_atomic(path, curves_to_csv("pr", &curves).as_bytes())?;
        }
    }
    Ok(artifacts)
}

/// `classify`: per-post predictions CSV (id, posted_at, predicted, p0..p2).
pub fn run_classify(
    input: &Path,
    head_path: &Path,
    output: &Path,
    text_scores: Option<&Path>,
    image_scores: Option<&Path>,
    config: &PipelineConfig,
) -> Result<usize> {
    let loaded = load_dataset(input)?;
    let head = load_head(head_path)?;
    let (text_encoder, image_encoder) = make_encoders(text_scores, image_scores, config.seed)?;
    let mut csv = String::from("id,posted_at,predicted,p0,p1,p2\n");
    for post in &loaded.dataset.posts {
        let (label, probs) = fusion::predict(post, &*text_encoder, &*image_encoder, &head)?;
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            post.id,
            post.posted_at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            label.code(),
            probs[0],
            probs[1],
            probs[2]
        ));
    }
    write_atomic(output, csv.as_bytes())?;
    Ok(loaded.dataset.len())
}

/// `trend`: classify, aggregate monthly per source, fit the full-window
/// cubic and the restricted linear model, emit plot-data CSVs.
pub struct TrendArtifacts {
    pub series: Vec<(String, MonthlySeries)>,
    pub fits: Vec<(String, PolyFit)>,
}

#[allow(clippy::too_many_arguments)]
pub fn run_trend(
    input: &Path,
    head_path: &Path,
    series_out: &Path,
    fits_out: &Path,
    schedule_out: Option<&Path>,
    text_scores: Option<&Path>,
    image_scores: Option<&Path>,
    config: &PipelineConfig,
) -> Result<TrendArtifacts> {
    let loaded = load_dataset(input)?;
    let head = load_head(head_path)?;
    let (text_encoder, image_encoder) = make_encoders(text_scores, image_scores, config.seed)?;
    let from = config.trend_from()?;

    let mut by_source: BTreeMap<String, Vec<(chrono::DateTime<chrono::Utc>, Label)>> =
        BTreeMap::new();
    for post in &loaded.dataset.posts {
        let (label, _) = fusion::predict(post, &*text_encoder, &*image_encoder, &head)?;
        by_source
            .entry(post.source.clone())
            .or_default()
            .push((post.posted_at, label));
    }

    let mut series_csv = String::from("series_id,year,month,examined,pro_ed,abundance\n");
    let mut fits_csv = String::from("series_id,degree,c0,c1,c2,c3,rss,r2,p_value\n");
    let mut all_series = Vec::new();
    let mut all_fits = Vec::new();
    for (source, items) in &by_source {
        let series = trend::aggregate_monthly(items);
        for point in &series.points {
            series_csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                source,
                point.month.year,
                point.month.month,
                point.examined,
                point.pro_ed,
                point.abundance
            ));
        }
        let xs = trend::series_month_offsets(&series);
        let ys: Vec<f64> = series.points.iter().map(|p| p.abundance).collect();
        if xs.len() > 4 {
            let cubic = trend::polyfit(&xs, &ys, 3)?;
            push_fit_row(&mut fits_csv, source, &cubic);
            all_fits.push((source.clone(), cubic));
        }
        match trend::linear_fit(&series, from) {
            Ok(linear) => {
                push_fit_row(&mut fits_csv, source, &linear);
                all_fits.push((source.clone(), linear));
            }
            Err(Error::Data(_)) => {} // too few post-window points; series row stands alone
            Err(e) => return Err(e),
        }
        all_series.push((source.clone(), series));
    }
    write_atomic(series_out, series_csv.as_bytes())?;
    write_atomic(fits_out, fits_csv.as_bytes())?;

    if let Some(path) = schedule_out {
        let mut csv = String::from("year,month,day1,day2,day3\n");
        let months: BTreeSet<MonthKey> = all_series
            .iter()
            .flat_map(|(_, s)| s.points.iter().map(|p| p.month))
            .collect();
        if let (Some(&first), Some(&last)) = (months.iter().next(), months.iter().last()) {
            let mut current = first;
            loop {
                let [d1, d2, d3] = trend::sampling_schedule(current, config.seed);
                csv.push_str(&format!(
                    "{},{},{d1},{d2},{d3}\n",
                    current.year, current.month
                ));
                if current >= last {
                    break;
                }
                current = if current.month == 12 {
                    MonthKey::new(current.year + 1, 1).unwrap()
                } else {
                    MonthKey::new(current.year, current.month + 1).unwrap()
                };
            }
        }
        write_atomic(path, csv.as_bytes())?;
    }
    Ok(TrendArtifacts {
        series: all_series,
        fits: all_fits,
    })
}

fn push_fit_row(csv: &mut String, source: &str, fit: &PolyFit) {
    let mut coefficients = [0.0f64; 4];
    for (slot, &c) in coefficients.iter_mut().zip(&fit.coefficients) {
        *slot = c;
    }
    csv.push_str(&format!(
        "{},{},{},{},{},{},{},{},{}\n",
        source,
        fit.degree,
        coefficients[0],
        coefficients[1],
        coefficients[2],
        coefficients[3],
        fit.rss,
        fit.r_squared,
        fit.p_value
    ));
}
