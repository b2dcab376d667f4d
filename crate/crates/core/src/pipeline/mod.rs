//! End-to-end augmentation run: web labeling, visual filtering, noise
//! collection, classifier training and prediction, and the final union.
//!
//! Every stage writes its output under the run's output directory and is
//! recorded in a manifest. The manifest holds only deterministic content;
//! per-stage wall-clock times go to a separate timings file.

mod manifest;
mod ops;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use manifest::{
    check_manifest, digest_file, sha256_hex, InputRecord, Manifest, OutputRecord, RunStatus,
    StageRecord, MANIFEST_FILE, MANIFEST_VERSION, TIMINGS_FILE,
};
pub use ops::{
    balance, build_text_sets, compute_stats, estimate_accuracy, train_from_records, union,
    AccuracyEstimate, BalanceCaps, DatasetStats, Histogram, TextSets, HISTOGRAM_BINS,
};

use crate::corpus::{ingest_corpus, read_unlabeled, CorpusIndex, FieldType};
use crate::dataset::{LabeledDataset, Provenance};
use crate::error::{Error, Result};
use crate::jsonl::write_all;
use crate::lexicon::{load_lexicon, Lexicon};
use crate::matcher::{build_automaton, label_by_web, MatchMode, PhraseMatcher};
use crate::scores::{
    collect_noise, filter_by_confidence, label_by_dcnn, ScoreReport, ScoreTable, ThresholdConfig,
};
use crate::textclf::{predict_label_set, save_model, TextClassifier, TrainConfig, TrainTrace};

pub const WEB: &str = crate::matcher::WEB_DATASET;
pub const DCNN: &str = crate::scores::DCNN_DATASET;
pub const WEB_FILTERED: &str = crate::scores::WEB_FILTERED_DATASET;
pub const NOISE: &str = crate::scores::NOISE_DATASET;
pub const TEXTCLF: &str = crate::textclf::TEXTCLF_DATASET;
pub const TEXTCLF_FILTERED: &str = crate::scores::TEXTCLF_FILTERED_DATASET;
pub const ASSEMBLED: &str = "E_VT";
pub const BALANCED: &str = "E_VT_balanced";

/// Output file names inside the run directory.
pub mod files {
    pub const WEB: &str = "e_t.jsonl";
    pub const DCNN: &str = "e_v.jsonl";
    pub const WEB_FILTERED: &str = "e_vtweb.jsonl";
    pub const NOISE: &str = "n_vtweb.jsonl";
    pub const T_PLUS: &str = "t_plus.jsonl";
    pub const T_MINUS: &str = "t_minus.jsonl";
    pub const MODEL: &str = "textclf.model";
    pub const TRACE: &str = "train_trace.json";
    pub const TEXTCLF: &str = "e_tweb_plus.jsonl";
    pub const TEXTCLF_FILTERED: &str = "e_vtweb_plus.jsonl";
    pub const ASSEMBLED: &str = "e_vt.jsonl";
    pub const BALANCED: &str = "e_vt_balanced.jsonl";
    pub const STATS: &str = "stats.json";
}

fn default_predict_threshold() -> f64 {
    crate::textclf::DEFAULT_PREDICT_THRESHOLD
}

fn default_true() -> bool {
    true
}

/// Run configuration. Relative paths in a config file resolve against the
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub corpus: PathBuf,
    #[serde(default)]
    pub lexicon: PathBuf,
    #[serde(default)]
    pub scores: PathBuf,
    /// Optional unlabeled pool; when set, the visual-only dataset is built too.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unlabeled: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: MatchMode,
    /// Disabling the classifier branch leaves `E_VT = E_VTweb`.
    #[serde(default = "default_true")]
    pub textclf: bool,
    #[serde(default = "default_predict_threshold")]
    pub predict_threshold: f64,
    /// Caps noise records at this multiple of the positive records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_ratio: Option<f64>,
    #[serde(default)]
    pub thresholds: ThresholdConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balance: Option<BalanceCaps>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: PathBuf::new(),
            lexicon: PathBuf::new(),
            scores: PathBuf::new(),
            unlabeled: None,
            out_dir: PathBuf::new(),
            seed: 0,
            mode: MatchMode::default(),
            textclf: true,
            predict_threshold: default_predict_threshold(),
            negative_ratio: None,
            thresholds: ThresholdConfig::default(),
            train: TrainConfig::default(),
            balance: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.corpus);
        resolve(&mut config.lexicon);
        resolve(&mut config.scores);
        resolve(&mut config.out_dir);
        if let Some(p) = config.unlabeled.as_mut() {
            resolve(p);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("corpus", &self.corpus),
            ("lexicon", &self.lexicon),
            ("scores", &self.scores),
            ("out_dir", &self.out_dir),
        ] {
            if p.as_os_str().is_empty() {
                return Err(Error::Config(format!("{name} path is not set")));
            }
        }
        self.thresholds.validate()?;
        self.train.validate()?;
        if !(self.predict_threshold > 0.0 && self.predict_threshold <= 1.0) {
            return Err(Error::OutOfRange {
                name: "predict_threshold",
                value: self.predict_threshold,
                range: "(0,1]",
            });
        }
        if let Some(r) = self.negative_ratio {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!(
                    "negative_ratio must be positive, got {r}"
                )));
            }
        }
        if let Some(caps) = &self.balance {
            caps.validate()?;
        }
        Ok(())
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    /// Digest of every setting that affects outputs; paths are excluded.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            for key in ["corpus", "lexicon", "scores", "unlabeled", "out_dir"] {
                map.remove(key);
            }
        }
        sha256_hex(value.to_string().as_bytes())
    }
}

/// Everything a run produced, as held in memory at the end.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub manifest: Manifest,
    pub datasets: BTreeMap<String, LabeledDataset>,
    pub model: Option<TextClassifier>,
    pub trace: Option<TrainTrace>,
    pub stats: Vec<DatasetStats>,
}

impl PipelineRun {
    pub fn dataset(&self, name: &str) -> &LabeledDataset {
        &self.datasets[name]
    }
}

fn report_counters(report: &ScoreReport) -> BTreeMap<String, u64> {
    [
        ("kept", report.kept),
        ("rejected", report.rejected),
        ("unknown", report.unknown),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v as u64))
    .collect()
}

struct Stage<'a> {
    out_dir: &'a Path,
    record: StageRecord,
}

impl Stage<'_> {
    fn output(&mut self, file: &str, dataset: Option<&str>, count: usize) -> Result<()> {
        let (sha256, _) = digest_file(self.out_dir.join(file))?;
        self.record.outputs.push(OutputRecord {
            dataset: dataset.map(str::to_owned),
            path: file.to_owned(),
            count,
            sha256,
        });
        Ok(())
    }

    fn dataset(&mut self, file: &str, ds: &LabeledDataset) -> Result<()> {
        ds.write(self.out_dir.join(file))?;
        self.output(file, Some(ds.name()), ds.len())
    }

    fn count(&mut self, key: &str, value: usize) {
        self.record.counters.insert(key.to_owned(), value as u64);
    }
}

struct Runner<'a> {
    out_dir: &'a Path,
    manifest: Manifest,
    timings: BTreeMap<String, f64>,
}

impl Runner<'_> {
    fn stage<T>(&mut self, name: &str, body: impl FnOnce(&mut Stage) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let mut stage = Stage {
            out_dir: self.out_dir,
            record: StageRecord {
                stage: name.to_owned(),
                outputs: Vec::new(),
                counters: BTreeMap::new(),
            },
        };
        let result = body(&mut stage);
        self.manifest.stages.push(stage.record);
        self.timings
            .insert(name.to_owned(), start.elapsed().as_secs_f64());
        result.map_err(|e| {
            self.manifest.status = RunStatus::Failed;
            self.manifest.failed_stage = Some(name.to_owned());
            self.manifest.error = Some(e.to_string());
            if let Err(write_err) = self.finish() {
                log::error!("could not write failed manifest: {write_err}");
            }
            Error::Stage {
                stage: name.to_owned(),
                source: Box::new(e),
            }
        })
    }

    fn finish(&self) -> Result<()> {
        self.manifest.write(self.out_dir.join(MANIFEST_FILE))?;
        let path = self.out_dir.join(TIMINGS_FILE);
        let text = serde_json::to_string_pretty(&self.timings)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn input_record(path: &Path) -> Result<InputRecord> {
    let (sha256, lines) = digest_file(path)?;
    Ok(InputRecord { lines, sha256 })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Loads the items behind the given datasets' pairs.
fn index_for<'a>(
    corpus: &Path,
    datasets: impl IntoIterator<Item = &'a LabeledDataset>,
) -> Result<CorpusIndex> {
    let wanted: HashSet<&str> = datasets
        .into_iter()
        .flat_map(|d| d.items().iter().map(|i| i.item_id.as_str()))
        .collect();
    CorpusIndex::load_subset(corpus, &wanted)
}

/// Runs every stage in order, persisting outputs and the manifest under
/// `config.out_dir`. A failing stage leaves its predecessors' outputs and a
/// manifest marked failed, and is reported as [`Error::Stage`].
pub fn run_full_pipeline(config: &PipelineConfig) -> Result<PipelineRun> {
    config.validate()?;
    let out_dir = config.out_dir.as_path();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut runner = Runner {
        out_dir,
        manifest: Manifest {
            version: MANIFEST_VERSION,
            status: RunStatus::Ok,
            failed_stage: None,
            error: None,
            config_hash: config.hash(),
            seed: config.seed,
            inputs: BTreeMap::new(),
            stages: Vec::new(),
        },
        timings: BTreeMap::new(),
    };
    let thresholds = config.thresholds;
    let mut datasets = BTreeMap::new();

    let (lexicon, matcher, table, inputs) = runner.stage("load_inputs", |_| {
        let mut inputs = BTreeMap::new();
        let mut named = vec![
            ("corpus", &config.corpus),
            ("lexicon", &config.lexicon),
            ("scores", &config.scores),
        ];
        if let Some(p) = &config.unlabeled {
            named.push(("unlabeled", p));
        }
        for (name, path) in named {
            inputs.insert(name.to_owned(), input_record(path)?);
        }
        let lexicon: Lexicon = load_lexicon(&config.lexicon)?;
        let matcher: PhraseMatcher = build_automaton(&lexicon, config.mode);
        let table = ScoreTable::load(&config.scores)?;
        Ok((lexicon, matcher, table, inputs))
    })?;
    runner.manifest.inputs = inputs;
    let num_categories = lexicon.num_categories() as u32;

    let e_t = runner.stage("label_web", |s| {
        let mut reader = ingest_corpus(&config.corpus)?;
        let labeling = label_by_web(reader.by_ref(), &matcher)?;
        s.count("items_scanned", labeling.items_scanned);
        s.count("skipped_lines", reader.skipped());
        for f in FieldType::ALL {
            s.count(
                &format!("credits_{f}"),
                labeling.field_credits[f.index()] as usize,
            );
        }
        s.dataset(files::WEB, &labeling.dataset)?;
        Ok(labeling.dataset)
    })?;

    if let Some(pool) = &config.unlabeled {
        let e_v = runner.stage("label_dcnn", |s| {
            let unlabeled = read_unlabeled(pool)?;
            let (ds, report) = label_by_dcnn(&unlabeled, &table, thresholds.alpha, num_categories)?;
            s.record.counters = report_counters(&report);
            s.dataset(files::DCNN, &ds)?;
            Ok(ds)
        })?;
        datasets.insert(DCNN.to_owned(), e_v);
    }

    let e_vtweb = runner.stage("filter_web", |s| {
        let (ds, report) =
            filter_by_confidence(&e_t, &table, thresholds.alpha, Provenance::WebFiltered)?;
        s.record.counters = report_counters(&report);
        s.dataset(files::WEB_FILTERED, &ds)?;
        Ok(ds)
    })?;

    let n_vtweb = runner.stage("collect_noise", |s| {
        let (ds, report) = collect_noise(&e_t, &table, thresholds.beta)?;
        s.record.counters = report_counters(&report);
        s.dataset(files::NOISE, &ds)?;
        Ok(ds)
    })?;

    let mut model = None;
    let mut trace = None;
    if config.textclf {
        let sets = runner.stage("build_textsets", |s| {
            let index = index_for(&config.corpus, [&e_vtweb, &n_vtweb])?;
            let sets = build_text_sets(
                &e_vtweb,
                &n_vtweb,
                &index,
                num_categories,
                config.negative_ratio,
                config.seed,
            )?;
            write_all(out_dir.join(files::T_PLUS), &sets.positives)?;
            s.output(files::T_PLUS, None, sets.positives.len())?;
            write_all(out_dir.join(files::T_MINUS), &sets.negatives)?;
            s.output(files::T_MINUS, None, sets.negatives.len())?;
            Ok(sets)
        })?;
        (model, trace) = runner.stage("train_textclf", |s| {
            if sets.positives.is_empty() || sets.negatives.is_empty() {
                // nothing to learn from; the classifier branch contributes nothing
                s.count("skipped_empty_text_set", 1);
                return Ok((None, None));
            }
            let (m, t) = train_from_records(&sets, num_categories, &config.train_config())?;
            save_model(&m, out_dir.join(files::MODEL))?;
            s.output(files::MODEL, None, 1)?;
            write_json(&out_dir.join(files::TRACE), &t)?;
            s.output(files::TRACE, None, t.epoch_loss.len())?;
            Ok((Some(m), Some(t)))
        })?;
    }

    let e_tweb_plus = runner.stage("predict_textclf", |s| {
        let ds = match &model {
            Some(m) => {
                let mut reader = ingest_corpus(&config.corpus)?;
                predict_label_set(reader.by_ref(), m, config.predict_threshold)?
            }
            None => {
                s.count("no_model", 1);
                LabeledDataset::empty(TEXTCLF)
            }
        };
        s.dataset(files::TEXTCLF, &ds)?;
        Ok(ds)
    })?;

    let e_vtweb_plus = runner.stage("filter_textclf", |s| {
        let (ds, report) = filter_by_confidence(
            &e_tweb_plus,
            &table,
            thresholds.alpha_prime,
            Provenance::TextclfFiltered,
        )?;
        s.record.counters = report_counters(&report);
        s.dataset(files::TEXTCLF_FILTERED, &ds)?;
        Ok(ds)
    })?;

    let e_vt = runner.stage("assemble", |s| {
        let ds = union(&e_vtweb, &e_vtweb_plus).with_name(ASSEMBLED);
        s.dataset(files::ASSEMBLED, &ds)?;
        Ok(ds)
    })?;

    if let Some(caps) = config.balance {
        let balanced = runner.stage("balance", |s| {
            let ds = balance(&e_vt, caps, config.seed)?.with_name(BALANCED);
            s.dataset(files::BALANCED, &ds)?;
            Ok(ds)
        })?;
        datasets.insert(BALANCED.to_owned(), balanced);
    }

    for ds in [e_t, e_vtweb, n_vtweb, e_tweb_plus, e_vtweb_plus, e_vt] {
        datasets.insert(ds.name().to_owned(), ds);
    }

    let stats = runner.stage("stats", |s| {
        let index = index_for(&config.corpus, datasets.values())?;
        let stats: Vec<DatasetStats> = datasets
            .values()
            .map(|ds| compute_stats(ds, &index, &matcher, Some(&table)))
            .collect();
        write_json(&out_dir.join(files::STATS), &stats)?;
        s.output(files::STATS, None, stats.len())?;
        Ok(stats)
    })?;

    runner.finish()?;
    Ok(PipelineRun {
        manifest: runner.manifest,
        datasets,
        model,
        trace,
        stats,
    })
}
