use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use webaug::corpus::{ingest_corpus, read_unlabeled, CorpusIndex, FieldType};
use webaug::dataset::{LabeledDataset, Provenance};
use webaug::evalkit::{ndcg, parse_ndcg_query, sweep, sweep_to_tsv, Truth};
use webaug::jsonl::{parse_strict, write_all};
use webaug::lexicon::{load_lexicon, Lexicon};
use webaug::matcher::{build_automaton, label_by_web};
use webaug::pipeline::{
    self, balance, build_text_sets, compute_stats, estimate_accuracy, files, run_full_pipeline,
    train_from_records, union, BalanceCaps, DatasetStats, PipelineConfig, TextSets, MANIFEST_FILE,
};
use webaug::scores::{collect_noise, filter_by_confidence, label_by_dcnn, ScoreReport, ScoreTable};
use webaug::syncorpus::{generate, GeneratorConfig, GroundTruth};
use webaug::textclf::{load_model, parse_labeled_record, predict_label_set, save_model};
use webaug::Error;

use crate::args::{
    AccuracyArgs, Cli, Command, FilterArgs, FilterTarget, GenArgs, NdcgArgs, PipelineArgs,
    SweepArgs, SweepTarget,
};

/// Why a command did not succeed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Stage { stage: String, message: String },
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Stage { .. } => 2,
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure::Usage(message.into())
}

/// Settings problems are usage errors; anything else fails the named stage.
fn classify(stage: &str, err: Error) -> Failure {
    match err {
        Error::Stage { stage, source } => Failure::Stage {
            stage,
            message: source.to_string(),
        },
        Error::OutOfRange { .. } | Error::Thresholds(_) | Error::Config(_) => {
            usage(err.to_string())
        }
        other => Failure::Stage {
            stage: stage.to_owned(),
            message: other.to_string(),
        },
    }
}

trait InStage<T> {
    fn in_stage(self, stage: &str) -> Outcome<T>;
}

impl<T> InStage<T> for webaug::Result<T> {
    fn in_stage(self, stage: &str) -> Outcome<T> {
        self.map_err(|e| classify(stage, e))
    }
}

pub fn dispatch(cli: Cli) -> Outcome {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("could not size the worker pool: {e}")))?;
    }
    match cli.command {
        Command::Gen(a) => gen(&a),
        Command::LabelWeb(a) => label_web(&a),
        Command::LabelDcnn(a) => label_dcnn(&a),
        Command::Filter(a) => filter(&a),
        Command::CollectNoise(a) => collect(&a),
        Command::BuildTextsets(a) => build_textsets(&a),
        Command::TrainTextclf(a) => train_textclf(&a),
        Command::PredictTextclf(a) => predict_textclf(&a),
        Command::Assemble(a) => assemble(&a),
        Command::Balance(a) => balance_cmd(&a),
        Command::Stats(a) => stats(&a),
        Command::Accuracy(a) => accuracy(&a),
        Command::Sweep(a) => sweep_cmd(&a),
        Command::Ndcg(a) => ndcg_cmd(&a),
        Command::Run(a) => run(&a),
    }
}

impl PipelineArgs {
    /// The config file (or defaults) with flag overrides applied and the
    /// threshold and training settings validated.
    fn resolve(&self) -> Outcome<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::load(path).map_err(|e| usage(e.to_string()))?,
            None => PipelineConfig::default(),
        };
        let set = |target: &mut PathBuf, flag: &Option<PathBuf>| {
            if let Some(p) = flag {
                *target = p.clone();
            }
        };
        set(&mut c.corpus, &self.corpus);
        set(&mut c.lexicon, &self.lexicon);
        set(&mut c.scores, &self.scores);
        set(&mut c.out_dir, &self.out_dir);
        if self.unlabeled.is_some() {
            c.unlabeled = self.unlabeled.clone();
        }
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        if let Some(mode) = self.mode {
            c.mode = mode;
        }
        if let Some(a) = self.alpha {
            c.thresholds.alpha = a;
        }
        if let Some(a) = self.alpha_prime {
            c.thresholds.alpha_prime = a;
        }
        if let Some(b) = self.beta {
            c.thresholds.beta = b;
        }
        if self.hard_cap.is_some() || self.target_cap.is_some() {
            let current = c.balance;
            let hard = self
                .hard_cap
                .or(current.map(|b| b.hard_cap))
                .or(self.target_cap);
            let target = self
                .target_cap
                .or(current.map(|b| b.target_cap))
                .or(self.hard_cap);
            c.balance = Some(BalanceCaps {
                hard_cap: hard.unwrap_or_default(),
                target_cap: target.unwrap_or_default(),
            });
        }
        if self.negative_ratio.is_some() {
            c.negative_ratio = self.negative_ratio;
        }
        if self.no_textclf {
            c.textclf = false;
        }
        c.thresholds.validate().map_err(|e| usage(e.to_string()))?;
        c.train.validate().map_err(|e| usage(e.to_string()))?;
        Ok(c)
    }

    fn require_seed(&self) -> Outcome<u64> {
        self.seed
            .ok_or_else(|| usage("this command is randomized and needs an explicit --seed"))
    }
}

fn require<'a>(path: &'a Path, flag: &str) -> Outcome<&'a Path> {
    if path.as_os_str().is_empty() {
        Err(usage(format!(
            "--{flag} is required (or set it in --config)"
        )))
    } else {
        Ok(path)
    }
}

fn out_dir(c: &PipelineConfig) -> Outcome<&Path> {
    let dir = require(&c.out_dir, "out-dir")?;
    std::fs::create_dir_all(dir)
        .map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn read_dataset(dir: &Path, file: &str, name: &str) -> webaug::Result<LabeledDataset> {
    LabeledDataset::read(dir.join(file), name)
}

fn write_dataset(dir: &Path, file: &str, ds: &LabeledDataset) -> webaug::Result<()> {
    ds.write(dir.join(file))?;
    println!(
        "{}\t{} pairs\t{}",
        ds.name(),
        ds.len(),
        dir.join(file).display()
    );
    Ok(())
}

fn print_report(report: &ScoreReport) {
    println!(
        "kept {}\trejected {}\tunscored {}",
        report.kept, report.rejected, report.unknown
    );
}

fn lexicon(c: &PipelineConfig, stage: &str) -> Outcome<Lexicon> {
    let path = require(&c.lexicon, "lexicon")?;
    load_lexicon(path).in_stage(stage)
}

fn gen(a: &GenArgs) -> Outcome {
    let mut config = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?;
            toml::from_str::<GeneratorConfig>(&text).map_err(|e| usage(e.to_string()))?
        }
        None => GeneratorConfig::default(),
    };
    config.seed = a.seed;
    if let Some(v) = a.categories {
        config.categories = v;
    }
    if let Some(v) = a.items {
        config.items = v;
    }
    if let Some(v) = a.noise_rate {
        config.noise_rate = v;
    }
    if let Some(v) = a.popularity_skew {
        config.popularity_skew = v;
    }
    if let Some(v) = a.score_sharpness {
        config.score_sharpness = v;
    }
    if let Some(v) = a.noise_flip_prob {
        config.noise_flip_prob = v;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    let corpus = generate(&config).in_stage("gen")?;
    let paths = corpus.write(&a.out_dir).in_stage("gen")?;

    // a ready-to-run pipeline config next to the generated files
    let name = |p: &Path| PathBuf::from(p.file_name().expect("generated file name"));
    let run_config = PipelineConfig {
        corpus: name(&paths.corpus),
        lexicon: name(&paths.lexicon),
        scores: name(&paths.scores),
        unlabeled: Some(name(&paths.unlabeled)),
        out_dir: "run".into(),
        seed: a.seed,
        ..PipelineConfig::default()
    };
    let text = run_config.to_toml().in_stage("gen")?;
    let config_path = a.out_dir.join("pipeline.toml");
    std::fs::write(&config_path, text).map_err(|e| Failure::Stage {
        stage: "gen".into(),
        message: format!("{}: {e}", config_path.display()),
    })?;
    println!(
        "{} items, {} categories, {} planted matches\t{}",
        corpus.items.len(),
        config.categories,
        corpus.truth.planted_pairs().len(),
        a.out_dir.display()
    );
    Ok(())
}

fn label_web(a: &PipelineArgs) -> Outcome {
    const STAGE: &str = "label_web";
    let c = a.resolve()?;
    let out = out_dir(&c)?;
    let corpus = require(&c.corpus, "corpus")?;
    let matcher = build_automaton(&lexicon(&c, STAGE)?, c.mode);
    let mut reader = ingest_corpus(corpus).in_stage(STAGE)?;
    let labeling = label_by_web(reader.by_ref(), &matcher).in_stage(STAGE)?;
    write_dataset(out, files::WEB, &labeling.dataset).in_stage(STAGE)?;
    let credits: Vec<String> = FieldType::ALL
        .iter()
        .map(|f| format!("{f} {}", labeling.field_credits[f.index()]))
        .collect();
    println!(
        "scanned {} items, skipped {} malformed lines; credits: {}",
        labeling.items_scanned,
        reader.skipped(),
        credits.join(", ")
    );
    Ok(())
}

fn label_dcnn(a: &PipelineArgs) -> Outcome {
    const STAGE: &str = "label_dcnn";
    let c = a.resolve()?;
    let out = out_dir(&c)?;
    let pool = c
        .unlabeled
        .as_deref()
        .ok_or_else(|| usage("--unlabeled is required (or set it in --config)"))?;
    let categories = lexicon(&c, STAGE)?.num_categories() as u32;
    let table = ScoreTable::load(require(&c.scores, "scores")?).in_stage(STAGE)?;
    let unlabeled = read_unlabeled(pool).in_stage(STAGE)?;
    let (ds, report) =
        label_by_dcnn(&unlabeled, &table, c.thresholds.alpha, categories).in_stage(STAGE)?;
    write_dataset(out, files::DCNN, &ds).in_stage(STAGE)?;
    print_report(&report);
    Ok(())
}

fn filter(a: &FilterArgs) -> Outcome {
    let c = a.pipeline.resolve()?;
    let out = out_dir(&c)?;
    let (stage, input, output, threshold, provenance) = match a.target {
        FilterTarget::Web => (
            "filter_web",
            (files::WEB, pipeline::WEB),
            (files::WEB_FILTERED, pipeline::WEB_FILTERED),
            c.thresholds.alpha,
            Provenance::WebFiltered,
        ),
        FilterTarget::Textclf => (
            "filter_textclf",
            (files::TEXTCLF, pipeline::TEXTCLF),
            (files::TEXTCLF_FILTERED, pipeline::TEXTCLF_FILTERED),
            c.thresholds.alpha_prime,
            Provenance::TextclfFiltered,
        ),
    };
    let table = ScoreTable::load(require(&c.scores, "scores")?).in_stage(stage)?;
    let ds = read_dataset(out, input.0, input.1).in_stage(stage)?;
    let (kept, report) =
        filter_by_confidence(&ds, &table, threshold, provenance).in_stage(stage)?;
    write_dataset(out, output.0, &kept.with_name(output.1)).in_stage(stage)?;
    print_report(&report);
    Ok(())
}

fn collect(a: &PipelineArgs) -> Outcome {
    const STAGE: &str = "collect_noise";
    let c = a.resolve()?;
    let out = out_dir(&c)?;
    let table = ScoreTable::load(require(&c.scores, "scores")?).in_stage(STAGE)?;
    let e_t = read_dataset(out, files::WEB, pipeline::WEB).in_stage(STAGE)?;
    let (noise, report) = collect_noise(&e_t, &table, c.thresholds.beta).in_stage(STAGE)?;
    write_dataset(out, files::NOISE, &noise).in_stage(STAGE)?;
    print_report(&report);
    Ok(())
}

/// Loads the items behind the given datasets' pairs.
fn index_for<'a>(
    corpus: &Path,
    datasets: impl IntoIterator<Item = &'a LabeledDataset>,
) -> webaug::Result<CorpusIndex> {
    let wanted: HashSet<&str> = datasets
        .into_iter()
        .flat_map(|d| d.items().iter().map(|i| i.item_id.as_str()))
        .collect();
    CorpusIndex::load_subset(corpus, &wanted)
}

fn build_textsets(a: &PipelineArgs) -> Outcome {
    const STAGE: &str = "build_textsets";
    let seed = a.require_seed()?;
    let c = a.resolve()?;
    let out = out_dir(&c)?;
    let corpus = require(&c.corpus, "corpus")?;
    let categories = lexicon(&c, STAGE)?.num_categories() as u32;
    let body = || -> webaug::Result<TextSets> {
        let filtered = read_dataset(out, files::WEB_FILTERED, pipeline::WEB_FILTERED)?;
        let noise = read_dataset(out, files::NOISE, pipeline::NOISE)?;
        let index = index_for(corpus, [&filtered, &noise])?;
        let sets = build_text_sets(
            &filtered,
            &noise,
            &index,
            categories,
            c.negative_ratio,
            seed,
        )?;
        write_all(out.join(files::T_PLUS), &sets.positives)?;
        write_all(out.join(files::T_MINUS), &sets.negatives)?;
        Ok(sets)
    };
    let sets = body().in_stage(STAGE)?;
    println!(
        "T+ {} records, T- {} records",
        sets.positives.len(),
        sets.negatives.len()
    );
    Ok(())
}

fn read_text_set(path: &Path) -> webaug::Result<Vec<webaug::textclf::LabeledRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    parse_strict(&text, parse_labeled_record)
}

fn train_textclf(a: &PipelineArgs) -> Outcome {
    const STAGE: &str = "train_textclf";
    let seed = a.require_seed()?;
    let mut c = a.resolve()?;
    c.seed = seed;
    let out = out_dir(&c)?;
    let categories = lexicon(&c, STAGE)?.num_categories() as u32;
    let sets = TextSets {
        positives: read_text_set(&out.join(files::T_PLUS)).in_stage(STAGE)?,
        negatives: read_text_set(&out.join(files::T_MINUS)).in_stage(STAGE)?,
    };
    if sets.positives.is_empty() || sets.negatives.is_empty() {
        println!("a text set is empty; no classifier trained");
        return Ok(());
    }
    let (model, trace) =
        train_from_records(&sets, categories, &c.train_config()).in_stage(STAGE)?;
    save_model(&model, out.join(files::MODEL)).in_stage(STAGE)?;
    write_json(&out.join(files::TRACE), &trace).in_stage(STAGE)?;
    let losses: Vec<String> = trace.epoch_loss.iter().map(|l| format!("{l:.4}")).collect();
    println!("loss by epoch: {}", losses.join(" "));
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> webaug::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })
}

fn predict_textclf(a: &PipelineArgs) -> Outcome {
    const STAGE: &str = "predict_textclf";
    let c = a.resolve()?;
    let out = out_dir(&c)?;
    let corpus = require(&c.corpus, "corpus")?;
    let model_path = out.join(files::MODEL);
    let ds = if model_path.is_file() {
        let model = load_model(&model_path).in_stage(STAGE)?;
        let mut reader = ingest_corpus(corpus).in_stage(STAGE)?;
        predict_label_set(reader.by_ref(), &model, c.predict_threshold).in_stage(STAGE)?
    } else {
        println!(
            "no trained classifier in {}; writing an empty set",
            out.display()
        );
        LabeledDataset::empty(pipeline::TEXTCLF)
    };
    write_dataset(out, files::TEXTCLF, &ds).in_stage(STAGE)
}

fn assemble(a: &PipelineArgs) -> Outcome {
    const STAGE: &str = "assemble";
    let c = a.resolve()?;
    let out = out_dir(&c)?;
    let web = read_dataset(out, files::WEB_FILTERED, pipeline::WEB_FILTERED).in_stage(STAGE)?;
    let text =
        read_dataset(out, files::TEXTCLF_FILTERED, pipeline::TEXTCLF_FILTERED).in_stage(STAGE)?;
    let ds = union(&web, &text).with_name(pipeline::ASSEMBLED);
    write_dataset(out, files::ASSEMBLED, &ds).in_stage(STAGE)
}

fn balance_cmd(a: &PipelineArgs) -> Outcome {
    const STAGE: &str = "balance";
    let seed = a.require_seed()?;
    let c = a.resolve()?;
    let caps = c.balance.ok_or_else(|| {
        usage("--hard-cap or --target-cap is required (or set [balance] in --config)")
    })?;
    caps.validate().map_err(|e| usage(e.to_string()))?;
    let out = out_dir(&c)?;
    let e_vt = read_dataset(out, files::ASSEMBLED, pipeline::ASSEMBLED).in_stage(STAGE)?;
    let ds = balance(&e_vt, caps, seed)
        .in_stage(STAGE)?
        .with_name(pipeline::BALANCED);
    write_dataset(out, files::BALANCED, &ds).in_stage(STAGE)
}

/// Every dataset a run can produce, by name and file.
const DATASET_FILES: [(&str, &str); 8] = [
    (pipeline::WEB, files::WEB),
    (pipeline::DCNN, files::DCNN),
    (pipeline::WEB_FILTERED, files::WEB_FILTERED),
    (pipeline::NOISE, files::NOISE),
    (pipeline::TEXTCLF, files::TEXTCLF),
    (pipeline::TEXTCLF_FILTERED, files::TEXTCLF_FILTERED),
    (pipeline::ASSEMBLED, files::ASSEMBLED),
    (pipeline::BALANCED, files::BALANCED),
];

fn stats(a: &PipelineArgs) -> Outcome {
    const STAGE: &str = "stats";
    let c = a.resolve()?;
    let out = out_dir(&c)?;
    let corpus = require(&c.corpus, "corpus")?;
    let matcher = build_automaton(&lexicon(&c, STAGE)?, c.mode);
    let table = ScoreTable::load(require(&c.scores, "scores")?).in_stage(STAGE)?;
    let mut datasets = BTreeMap::new();
    for (name, file) in DATASET_FILES {
        if out.join(file).is_file() {
            datasets.insert(name, read_dataset(out, file, name).in_stage(STAGE)?);
        }
    }
    let index = index_for(corpus, datasets.values()).in_stage(STAGE)?;
    let stats: Vec<DatasetStats> = datasets
        .values()
        .map(|ds| compute_stats(ds, &index, &matcher, Some(&table)))
        .collect();
    write_json(&out.join(files::STATS), &stats).in_stage(STAGE)?;
    for s in &stats {
        println!(
            "{}\t{} pairs\t{} categories",
            s.dataset,
            s.total,
            s.category_counts.len()
        );
    }
    Ok(())
}

fn accuracy(a: &AccuracyArgs) -> Outcome {
    const STAGE: &str = "accuracy";
    let name = a
        .dataset
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ds = LabeledDataset::read(&a.dataset, name).in_stage(STAGE)?;
    let truth = GroundTruth::load(&a.truth).in_stage(STAGE)?;
    let estimate = estimate_accuracy(&ds, &truth, a.per_category, a.seed).in_stage(STAGE)?;
    let text = serde_json::to_string(&estimate).expect("estimate serializes");
    println!("{text}");
    Ok(())
}

fn sweep_cmd(a: &SweepArgs) -> Outcome {
    const STAGE: &str = "sweep";
    let c = a.pipeline.resolve()?;
    for &t in &a.grid {
        webaug::check_unit("threshold", t).map_err(|e| usage(e.to_string()))?;
    }
    let table = ScoreTable::load(require(&c.scores, "scores")?).in_stage(STAGE)?;
    let truth = match &a.truth {
        Some(p) => Some(GroundTruth::load(p).in_stage(STAGE)?),
        None => None,
    };
    let truth_ref = truth.as_ref().map(|t| t as &dyn Truth);
    let points = match a.target {
        SweepTarget::Web => {
            let input = match &a.input {
                Some(p) => p.clone(),
                None => require(&c.out_dir, "out-dir")?.join(files::WEB),
            };
            let e_t = LabeledDataset::read(&input, pipeline::WEB).in_stage(STAGE)?;
            let build = |t| Ok(filter_by_confidence(&e_t, &table, t, Provenance::WebFiltered)?.0);
            sweep(build, &a.grid, truth_ref).in_stage(STAGE)?
        }
        SweepTarget::Visual => {
            let pool = c
                .unlabeled
                .as_deref()
                .ok_or_else(|| usage("--unlabeled is required for --target visual"))?;
            let categories = lexicon(&c, STAGE)?.num_categories() as u32;
            let unlabeled = read_unlabeled(pool).in_stage(STAGE)?;
            let build = |t| Ok(label_by_dcnn(&unlabeled, &table, t, categories)?.0);
            sweep(build, &a.grid, truth_ref).in_stage(STAGE)?
        }
    };
    let tsv = sweep_to_tsv(&points);
    match &a.output {
        Some(path) => std::fs::write(path, tsv).map_err(|e| Failure::Stage {
            stage: STAGE.into(),
            message: format!("{}: {e}", path.display()),
        }),
        None => {
            print!("{tsv}");
            Ok(())
        }
    }
}

fn ndcg_cmd(a: &NdcgArgs) -> Outcome {
    const STAGE: &str = "ndcg";
    let fail = |message: String| Failure::Stage {
        stage: STAGE.into(),
        message,
    };
    let text = std::fs::read_to_string(&a.queries)
        .map_err(|e| fail(format!("{}: {e}", a.queries.display())))?;
    let mut values = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (list, depth) =
            parse_ndcg_query(line).map_err(|reason| fail(format!("line {}: {reason}", idx + 1)))?;
        let value = ndcg(&list, depth).in_stage(STAGE)?;
        println!("{}\t{value}", idx + 1);
        values.push(value);
    }
    if !values.is_empty() {
        println!("mean\t{}", values.iter().sum::<f64>() / values.len() as f64);
    }
    Ok(())
}

fn run(a: &PipelineArgs) -> Outcome {
    let seed = a.require_seed()?;
    let mut c = a.resolve()?;
    c.seed = seed;
    let result = run_full_pipeline(&c).map_err(|e| classify("setup", e))?;
    for stage in &result.manifest.stages {
        for o in &stage.outputs {
            match &o.dataset {
                Some(name) => println!("{name}\t{} pairs\t{}", o.count, o.path),
                None => println!("{}\t{}\t{}", stage.stage, o.count, o.path),
            }
        }
    }
    println!("manifest\t{}", c.out_dir.join(MANIFEST_FILE).display());
    Ok(())
}
