//! Subcommands behind the `recap` binary. Every command that writes into the
//! output directory also writes the resolved configuration there.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::Device;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointMeta};
use crate::config::{apply_override, from_table, read_table, RunConfig};
use crate::dataset::{load_checkins, Dataset, DatasetSummary, InstanceStore, Split};
use crate::error::{Error, Result};
use crate::evaluation::{score_ranks, unique_pair_shares, EvalReport, PairShares};
use crate::graph::{coverage_snr, HopAnalysis, TransitionStore};
use crate::model::{BatchContext, RecapModel};
use crate::synth::{generate, write_checkins, GroundTruth, SyntheticWorldSpec};
use crate::training::{curriculum_state, fit, EpochRecord, FitOutcome, TrainData};

pub const STORE_FILE: &str = "store.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const FIT_FILE: &str = "fit.json";
pub const HOPS_JSON_FILE: &str = "hops.json";
pub const HOPS_TEXT_FILE: &str = "hops.txt";

#[derive(Debug, Parser)]
#[command(name = "recap", version, about = "Long-tail next-POI prediction with graph tokens and revisit calibration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Dotted override such as `training.epochs=2`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalSplit {
    Val,
    Test,
}

impl EvalSplit {
    fn split(self) -> Split {
        match self {
            EvalSplit::Val => Split::Val,
            EvalSplit::Test => Split::Test,
        }
    }

    fn name(self) -> &'static str {
        match self {
            EvalSplit::Val => "val",
            EvalSplit::Test => "test",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load raw check-ins, split, segment and write the instance store.
    Preprocess(RunArgs),
    /// Train under the staged curriculum; writes the best checkpoint and an epoch log.
    Train(RunArgs),
    /// Score a split with a checkpoint; writes overall, head/tail and bin reports.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to the checkpoint in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: EvalSplit,
    },
    /// Coverage and SNR of N-hop candidate sets over unseen test transitions.
    AnalyzeHops(RunArgs),
    /// Generate a synthetic check-in file with planted two-hop structure.
    Synth {
        /// TOML world specification.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output CSV; ground truth goes next to it as `<stem>.truth.json`.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Print the summaries found in the output directory.
    Report {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "test")]
        split: EvalSplit,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(args) => {
            let summary = preprocess(&args.resolve()?)?;
            print!("{}", summary.to_text());
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let out = train(&cfg)?;
            println!(
                "best epoch {} (val MRR {}); checkpoint {}",
                out.best_epoch,
                fmt_opt(out.best_val_mrr),
                cfg.output_dir.join(CHECKPOINT_FILE).display()
            );
        }
        Command::Evaluate { run, checkpoint, split } => {
            let cfg = run.resolve()?;
            let report = evaluate(&cfg, checkpoint.as_deref(), split)?;
            print!("{}", report.to_text());
        }
        Command::AnalyzeHops(args) => {
            let analysis = analyze_hops(&args.resolve()?)?;
            print!("{}", analysis.to_table());
        }
        Command::Synth { spec, overrides, out } => {
            let truth = synth(spec.as_deref(), &overrides, &out)?;
            println!(
                "wrote {} check-ins to {} ({} withheld pairs, {} injected test endings)",
                truth.spec.num_checkins,
                out.display(),
                truth.withheld.len(),
                truth.injected
            );
        }
        Command::Report { run, split } => print!("{}", report(&run.resolve()?, split)?),
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn report_json_file(split: EvalSplit) -> String {
    format!("report_{}.json", split.name())
}

pub fn report_text_file(split: EvalSplit) -> String {
    format!("report_{}.txt", split.name())
}

pub fn bins_file(split: EvalSplit) -> String {
    format!("bins_{}.tsv", split.name())
}

/// Counts over the training trajectories of a stored dataset.
pub fn training_transitions(dataset: &Dataset) -> TransitionStore {
    TransitionStore::count(&dataset.count_sequences(), dataset.vocabulary.num_pois())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    #[serde(flatten)]
    pub dataset: DatasetSummary,
    pub skipped_rows: usize,
    pub eta: u32,
    /// Head/tail shares over distinct test pairs.
    pub test_pairs: PairShares,
}

impl PreprocessSummary {
    pub fn to_text(&self) -> String {
        let d = &self.dataset;
        format!(
            "users          {}\npois           {}\ncategories     {}\ncheck-ins      {}\nskipped rows   {}\n\
             train inst.    {}\nval inst.      {}\ntest inst.     {}\ntest dropped   {} (unknown target) {} (unknown source) {} (single check-in)\n\
             test pairs     {} ({} tail at eta={}, share {})\n",
            d.users,
            d.pois,
            d.categories,
            d.checkins,
            self.skipped_rows,
            d.train_instances,
            d.val_instances,
            d.test_instances,
            d.test_dropped.oov_target,
            d.test_dropped.oov_source,
            d.test_dropped.single_checkin,
            self.test_pairs.pairs,
            self.test_pairs.tail,
            self.eta,
            self.test_pairs
                .tail_share
                .map_or_else(|| "n/a".to_string(), |s| format!("{:.1}%", 100.0 * s)),
        )
    }
}

pub fn preprocess(cfg: &RunConfig) -> Result<PreprocessSummary> {
    let path = cfg
        .data
        .path
        .as_ref()
        .ok_or_else(|| Error::Config("data.path is not set".to_string()))?;
    let loaded = load_checkins(path, &cfg.data.load_options()?)?;
    let dataset = Dataset::build(loaded.records, cfg.dataset)?;
    let transitions = training_transitions(&dataset);
    let store = InstanceStore::from_dataset(dataset);
    let summary = PreprocessSummary {
        dataset: store.summary(),
        skipped_rows: loaded.warnings.len(),
        eta: cfg.eval.eta,
        test_pairs: unique_pair_shares(&store.test.instances, &transitions, cfg.eval.eta),
    };
    let dir = &cfg.output_dir;
    cfg.persist(dir)?;
    store.save(dir.join(STORE_FILE))?;
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// The stored instances, checked against the configured dataset options.
pub fn load_store(cfg: &RunConfig) -> Result<InstanceStore> {
    let path = cfg.output_dir.join(STORE_FILE);
    let store = InstanceStore::load(&path)?;
    if store.options != cfg.dataset {
        return Err(Error::Config(format!(
            "{} was built with dataset options {:?}, configuration has {:?}; rerun preprocess",
            path.display(),
            store.options,
            cfg.dataset
        )));
    }
    Ok(store)
}

fn build_model(cfg: &RunConfig, dataset: &Dataset, transitions: &TransitionStore, device: &Device) -> Result<(RecapModel, String)> {
    let model = RecapModel::new(
        &cfg.model,
        &cfg.revisit,
        &dataset.vocabulary,
        dataset.options.suffix_len,
        transitions,
        cfg.precision.dtype(),
        device,
        cfg.training.seed,
    )?;
    let fp = checkpoint::fingerprint(&cfg.model, &cfg.revisit, &model.dims, &dataset.vocabulary, cfg.precision)?;
    Ok((model, fp))
}

fn context<'a>(cfg: &'a RunConfig, dataset: &'a Dataset, transitions: &'a TransitionStore, device: &'a Device) -> BatchContext<'a> {
    BatchContext {
        sequences: &dataset.sequences,
        vocabulary: &dataset.vocabulary,
        store: transitions,
        revisit: &cfg.revisit,
        dtype: cfg.precision.dtype(),
        device,
    }
}

pub fn train(cfg: &RunConfig) -> Result<FitOutcome> {
    let store = load_store(cfg)?;
    let dir = &cfg.output_dir;
    cfg.persist(dir)?;
    let dataset = store.dataset();
    let transitions = training_transitions(&dataset);
    let device = Device::Cpu;
    let (mut model, fp) = build_model(cfg, &dataset, &transitions, &device)?;
    let data = TrainData {
        ctx: context(cfg, &dataset, &transitions, &device),
        train: &store.train.instances,
        val: &store.val.instances,
    };
    let log_path = dir.join(TRAIN_LOG_FILE);
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let outcome = fit(&mut model, &data, &cfg.training, |r: &EpochRecord| {
        serde_json::to_writer(&mut log, r)?;
        writeln!(log).and_then(|_| log.flush()).map_err(|e| Error::io(&log_path, e))
    })?;
    let stages = curriculum_state(outcome.best_epoch, &cfg.training).stages();
    let meta = CheckpointMeta::new(fp, outcome.best_epoch, outcome.best_val_mrr, stages, cfg.precision);
    checkpoint::save(dir.join(CHECKPOINT_FILE), &model, &meta)?;
    write_json(&dir.join(FIT_FILE), &outcome)?;
    Ok(outcome)
}

pub fn evaluate(cfg: &RunConfig, checkpoint_path: Option<&Path>, split: EvalSplit) -> Result<EvalReport> {
    let store = load_store(cfg)?;
    let dataset = store.dataset();
    let transitions = training_transitions(&dataset);
    let device = Device::Cpu;
    let (model, fp) = build_model(cfg, &dataset, &transitions, &device)?;
    let dir = &cfg.output_dir;
    let path = checkpoint_path.map_or_else(|| dir.join(CHECKPOINT_FILE), Path::to_path_buf);
    let meta = checkpoint::load_into(&path, &model, &fp)?;
    let instances = store.split(split.split());
    let ctx = context(cfg, &dataset, &transitions, &device);
    let ranks = score_ranks(&model, instances, &ctx, meta.stages, cfg.eval.batch_size)?;
    let report = EvalReport::build(instances, &ranks, &transitions, cfg.eval.eta);
    cfg.persist(dir)?;
    write_json(&dir.join(report_json_file(split)), &report)?;
    write_text(&dir.join(report_text_file(split)), &report.to_text())?;
    write_text(&dir.join(bins_file(split)), &report.bins_tsv())?;
    Ok(report)
}

pub fn analyze_hops(cfg: &RunConfig) -> Result<HopAnalysis> {
    let store = load_store(cfg)?;
    let transitions = training_transitions(&store.dataset());
    let unseen = store
        .test
        .instances
        .iter()
        .map(|i| i.transition())
        .filter(|&(s, d)| transitions.count_of(s, d) == 0)
        .collect();
    let analysis = coverage_snr(&unseen, &transitions, &cfg.eval.hop_values);
    let dir = &cfg.output_dir;
    cfg.persist(dir)?;
    write_json(&dir.join(HOPS_JSON_FILE), &analysis)?;
    write_text(&dir.join(HOPS_TEXT_FILE), &analysis.to_table())?;
    Ok(analysis)
}

/// `checkins.csv` → `checkins.truth.json`.
pub fn truth_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "synth".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.truth.json"))
}

pub fn synth(spec_file: Option<&Path>, overrides: &[String], out: &Path) -> Result<GroundTruth> {
    let mut table = match spec_file {
        Some(p) => read_table(p)?,
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let spec: SyntheticWorldSpec = from_table(table)?;
    let world = generate(&spec)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_checkins(out, &world.checkins)?;
    write_json(&truth_path(out), &world.truth)?;
    Ok(world.truth)
}

pub fn report(cfg: &RunConfig, split: EvalSplit) -> Result<String> {
    let dir = &cfg.output_dir;
    let mut out = String::new();
    let summary = dir.join(SUMMARY_FILE);
    if summary.exists() {
        let s: PreprocessSummary = read_json(&summary)?;
        out.push_str("== dataset ==\n");
        out.push_str(&s.to_text());
    }
    let fit_path = dir.join(FIT_FILE);
    if fit_path.exists() {
        let f: FitOutcome = read_json(&fit_path)?;
        out.push_str(&format!(
            "== training ==\nbest epoch {} (val MRR {})\n{:>5}  {:>9}  {:>9}  {:>8}  {:>6}  {:>8}\n",
            f.best_epoch,
            fmt_opt(f.best_val_mrr),
            "epoch",
            "main",
            "warm",
            "lam_warm",
            "graph",
            "val_mrr"
        ));
        for r in &f.records {
            out.push_str(&format!(
                "{:>5}  {:>9.4}  {:>9}  {:>8.3}  {:>6.2}  {:>8}\n",
                r.epoch,
                r.main_loss,
                fmt_opt(r.warm_loss),
                r.lambda_warm,
                r.graph_scale,
                fmt_opt(r.val_mrr)
            ));
        }
    }
    let report_path = dir.join(report_json_file(split));
    if report_path.exists() {
        let r: EvalReport = read_json(&report_path)?;
        out.push_str(&format!("== evaluation ({}) ==\n", split.name()));
        out.push_str(&r.to_text());
    }
    let hops = dir.join(HOPS_TEXT_FILE);
    if hops.exists() {
        out.push_str("== hop analysis ==\n");
        out.push_str(&std::fs::read_to_string(&hops).map_err(|e| Error::io(&hops, e))?);
    }
    if out.is_empty() {
        return Err(Error::InvalidInput(format!("no run artifacts in {}", dir.display())));
    }
    Ok(out)
}
