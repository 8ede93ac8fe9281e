//! The `shiftkt` pipeline: prepare, train, train-gen, eval, sweep-rank,
//! shift-report and ablate, all writing into one output directory.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use shiftkt_core::backbone::{self, Backbone};
use shiftkt_core::checkpoint::Checkpoint;
use shiftkt_core::config::RunConfig;
use shiftkt_core::controller::{score_report, ControllerVariant};
use shiftkt_core::data::{
    filter_short, make_windows, parse_interactions, read_manifest, remap_concept_combinations, split_group,
    split_temporal, write_manifest, ColumnMapping, ConceptMap, Dataset, DatasetSplits, InteractionSequence,
    LearnerId, SplitMode, Window,
};
use shiftkt_core::eval::methods::{eval_reports_tsv, run_method, MethodResult, MethodSetup};
use shiftkt_core::eval::shift::shift_reports_tsv;
use shiftkt_core::eval::{shift_diagnostic, synth_benchmark, thread_count, time_overhead, EvalReport, Method, ShiftConfig};
use shiftkt_core::generator::{self, train_generator, train_joint, Generator, GeneratorVariant};
use shiftkt_core::train::TrainLog;
use shiftkt_core::{Error, Result};

pub const DATASET_FILE: &str = "dataset.csv";
pub const CONCEPT_MAP_FILE: &str = "concept_map.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const BACKBONE_FILE: &str = "backbone.ckpt";
pub const JOINT_BACKBONE_FILE: &str = "backbone_joint.ckpt";
pub const GENERATOR_FILE: &str = "generator.ckpt";

#[derive(Debug, Parser)]
#[command(name = "shiftkt", version, about = "Knowledge tracing under distribution shift")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Interaction CSV (synthetic data when omitted).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Window capacity.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// temporal | group
    #[arg(long, global = true)]
    pub split: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, remap, filter and split; writes the dataset, concept map and manifest.
    Prepare,
    /// Train the backbone on the training split.
    Train,
    /// Train the parameter generator against the trained backbone.
    TrainGen {
        /// Generator variant: full | no-dual | no-sfe | no-saa | sha.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        joint: bool,
    },
    /// Score methods on the test split.
    Eval {
        /// frozen | cuffkt | fft | bitfit | adapter | cuffkt+fft | all
        #[arg(long, default_value = "all")]
        method: String,
        /// Share of test learners receiving generated layers.
        #[arg(long)]
        frequency: Option<f64>,
        /// Controller variant: full | no-kl | no-zpd | no-rel | random.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Train one generator per configured rank and score each.
    SweepRank,
    /// Per-part drift and accuracy of a model trained on the first part.
    ShiftReport,
    /// Generator and controller ablations.
    Ablate {
        #[arg(long)]
        frequency: Option<f64>,
    },
}

/// Process exit code for an error: 1 usage or config, 2 data, 3 numeric.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_data_error() || matches!(e, Error::Degenerate(_)) {
        2
    } else if e.is_numeric_error() || matches!(e, Error::Dimension { .. }) {
        3
    } else {
        1
    }
}

/// Resolved configuration shared by every command.
pub struct Run {
    pub config: RunConfig,
    pub hash: String,
    pub threads: usize,
}

impl Run {
    pub fn resolve(common: &Common, extra: &[(&str, String)]) -> Result<Self> {
        let mut config = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for o in &common.overrides {
            config.apply_override(o)?;
        }
        let flags = [
            ("out", common.out.as_ref().map(|p| p.display().to_string())),
            ("data", common.data.as_ref().map(|p| p.display().to_string())),
            ("seed", common.seed.map(|s| s.to_string())),
            ("k", common.k.map(|k| k.to_string())),
            ("split", common.split.clone()),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                config.set(k, &v)?;
            }
        }
        for (k, v) in extra {
            config.set(k, v)?;
        }
        config.validate()?;
        let hash = config.hash();
        Ok(Run {
            config,
            hash,
            threads: thread_count(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.config.out.join(name)
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, text).map_err(|source| Error::Io { path, source })
    }

    fn read(&self, name: &str) -> Result<String> {
        let path = self.path(name);
        std::fs::read_to_string(&path).map_err(|source| Error::Io { path, source })
    }

    /// Creates the output directory and records the resolved config as
    /// `config.<command>.txt`.
    fn start(&self, command: &str) -> Result<()> {
        let out = &self.config.out;
        std::fs::create_dir_all(out).map_err(|source| Error::Io {
            path: out.clone(),
            source,
        })?;
        let text = format!("# config_hash {}\n{}", self.hash, self.config.to_text());
        self.write(&format!("config.{command}.txt"), &text)
    }

    /// Appends `threads` and `config_hash` columns to a TSV table.
    fn stamp(&self, tsv: &str) -> String {
        let mut out = String::new();
        for (i, line) in tsv.lines().enumerate() {
            if i == 0 {
                let _ = writeln!(out, "{line}\tthreads\tconfig_hash");
            } else {
                let _ = writeln!(out, "{line}\t{}\t{}", self.threads, self.hash);
            }
        }
        out
    }

    fn save(&self, name: &str, ck: Checkpoint) -> Result<()> {
        ck.with_meta("config_hash", &self.hash).save(&self.path(name))
    }

    fn load(&self, name: &str) -> Result<Checkpoint> {
        Checkpoint::load(&self.path(name))
    }
}

pub struct Prepared {
    pub dataset: Dataset,
    pub splits: DatasetSplits,
}

impl Prepared {
    pub fn load(run: &Run) -> Result<Self> {
        let sequences = parse_interactions(&run.path(DATASET_FILE), &ColumnMapping::default())?;
        let map = ConceptMap::from_text(&run.read(CONCEPT_MAP_FILE)?)?;
        let splits = read_manifest(&run.read(MANIFEST_FILE)?)?;
        Ok(Prepared {
            dataset: Dataset {
                sequences,
                num_concepts: map.len(),
            },
            splits,
        })
    }

    /// Windows of the given learners, each learner's list reduced by `pick`.
    pub fn windows(&self, ids: &[LearnerId], k: usize, pick: shiftkt_core::config::WindowSelect) -> Result<Vec<Window>> {
        let mut out = Vec::new();
        for s in self.dataset.select(ids) {
            out.extend(pick.apply(make_windows(s, k)?));
        }
        Ok(out)
    }
}

fn refs(ws: &[Window]) -> Vec<&Window> {
    ws.iter().collect()
}

fn load_sequences(config: &RunConfig) -> Result<Vec<InteractionSequence>> {
    match &config.data {
        Some(path) => parse_interactions(path, &config.columns),
        None => Ok(synth_benchmark(config.seed, config.synth_learners, config.synth_length, &config.synth)?.sequences),
    }
}

fn dataset_csv(sequences: &[InteractionSequence]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Validation(format!("writing dataset: {e}"));
    let m = ColumnMapping::default();
    w.write_record([&m.learner, &m.question, &m.concepts, &m.response, &m.timestamp])
        .map_err(io)?;
    for s in sequences {
        for x in &s.interactions {
            w.write_record([
                s.learner.to_string(),
                x.question.to_string(),
                x.concepts[0].to_string(),
                x.response.to_string(),
                x.timestamp.to_string(),
            ])
            .map_err(io)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(format!("writing dataset: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Validation(e.to_string()))
}

pub fn prepare(run: &Run) -> Result<()> {
    run.start("prepare")?;
    let c = &run.config;
    let raw = load_sequences(c)?;
    let kept = filter_short(raw, c.min_len)?;
    let (sequences, map) = remap_concept_combinations(&kept);
    let splits = match c.split {
        SplitMode::Temporal => split_temporal(&sequences, &c.ratios)?,
        SplitMode::Group => {
            let encoder = train_encoder(run, &sequences, map.len())?;
            split_group(&sequences, &encoder, c.group_distance, &c.ratios)?
        }
    };
    run.write(DATASET_FILE, &dataset_csv(&sequences)?)?;
    run.write(CONCEPT_MAP_FILE, &map.to_text())?;
    let meta = [
        ("config_hash", run.hash.clone()),
        ("num_concepts", map.len().to_string()),
        ("learners", sequences.len().to_string()),
    ];
    run.write(MANIFEST_FILE, &write_manifest(&splits, &meta))?;
    let [tr, va, ad, te] = splits.sizes();
    eprintln!(
        "prepared {} learners, {} concepts; split {tr}/{va}/{ad}/{te} ({}) [{}]",
        sequences.len(),
        map.len(),
        splits.mode,
        run.hash
    );
    Ok(())
}

/// Short backbone run over every learner (ordered by id, last tenth for
/// validation), used only to embed learners for the group split.
fn train_encoder(run: &Run, sequences: &[InteractionSequence], num_concepts: usize) -> Result<Backbone> {
    let c = &run.config;
    let mut ws = Vec::new();
    for s in sequences {
        ws.extend(c.backbone_windows.apply(make_windows(s, c.k)?));
    }
    let cut = ws.len() - ws.len() / 10;
    let (train, valid) = ws.split_at(cut.max(1).min(ws.len().saturating_sub(1)));
    let mut model = Backbone::new(c.backbone_config(num_concepts), c.seed)?;
    let mut tc = c.backbone_train();
    tc.max_epochs = tc.max_epochs.min(10);
    backbone::train(&mut model, &refs(train), &refs(valid), &tc)?;
    run.save("encoder.ckpt", model.to_checkpoint())?;
    Ok(model)
}

pub fn train(run: &Run) -> Result<()> {
    run.start("train")?;
    let c = &run.config;
    let p = Prepared::load(run)?;
    let train = p.windows(&p.splits.train, c.k, c.backbone_windows)?;
    let valid = p.windows(&p.splits.valid, c.k, c.backbone_windows)?;
    let mut model = Backbone::new(c.backbone_config(p.dataset.num_concepts), c.seed)?;
    let log = backbone::train(&mut model, &refs(&train), &refs(&valid), &c.backbone_train())?;
    run.save(BACKBONE_FILE, model.to_checkpoint())?;
    run.write("backbone_log.tsv", &run.stamp(&log.to_tsv()))?;
    report_log("backbone", &log, run);
    Ok(())
}

fn report_log(what: &str, log: &TrainLog, run: &Run) {
    let best = log
        .epochs
        .iter()
        .map(|e| e.valid_score)
        .fold(f64::NEG_INFINITY, f64::max);
    eprintln!("{what}: {} epochs, best validation {best:.4} [{}]", log.epochs.len(), run.hash);
}

fn load_backbone(run: &Run, name: &str) -> Result<Backbone> {
    Backbone::from_checkpoint(&run.load(name)?)
}

/// Generator training on every window of the training learners.
fn fit_generator(run: &Run, p: &Prepared, model: &mut Backbone, variant: GeneratorVariant, rank: usize, joint: bool) -> Result<(Generator, TrainLog)> {
    let c = &run.config;
    let train = p.windows(&p.splits.train, c.k, shiftkt_core::config::WindowSelect::All)?;
    let valid = p.windows(&p.splits.valid, c.k, shiftkt_core::config::WindowSelect::All)?;
    let gc = c.generator_config(model.num_concepts(), rank).with_variant(variant);
    let mut g = Generator::warm_start(gc, model, c.seed)?;
    let log = if joint {
        train_joint(&mut g, model, &refs(&train), &refs(&valid), &c.generator_train())?
    } else {
        train_generator(&mut g, model, &refs(&train), &refs(&valid), &c.generator_train())?
    };
    Ok((g, log))
}

pub fn train_gen(run: &Run) -> Result<()> {
    run.start("train-gen")?;
    let c = &run.config;
    let p = Prepared::load(run)?;
    let mut model = load_backbone(run, BACKBONE_FILE)?;
    let (g, log) = fit_generator(run, &p, &mut model, c.generator_variant, c.rank, c.joint)?;
    run.save(GENERATOR_FILE, g.to_checkpoint())?;
    if c.joint {
        run.save(JOINT_BACKBONE_FILE, model.to_checkpoint())?;
    }
    run.write("generator_log.tsv", &run.stamp(&log.to_tsv()))?;
    report_log("generator", &log, run);
    Ok(())
}

/// Models and evaluation windows for the method harness.
struct EvalInputs {
    backbone: Backbone,
    /// Backbone paired with the generator (the jointly trained one if any).
    generator_backbone: Backbone,
    generator: Option<Generator>,
    adapt: Vec<Window>,
    test: Vec<Window>,
}

impl EvalInputs {
    fn load(run: &Run, p: &Prepared, need_generator: bool) -> Result<Self> {
        let c = &run.config;
        let backbone = load_backbone(run, BACKBONE_FILE)?;
        let generator_backbone = if c.joint {
            load_backbone(run, JOINT_BACKBONE_FILE)?
        } else {
            backbone.clone()
        };
        let generator = if need_generator {
            Some(Generator::from_checkpoint(&run.load(GENERATOR_FILE)?)?)
        } else {
            None
        };
        Ok(EvalInputs {
            backbone,
            generator_backbone,
            generator,
            adapt: p.windows(&p.splits.adapt, c.k, c.eval_windows)?,
            test: p.windows(&p.splits.test, c.k, c.eval_windows)?,
        })
    }
}

fn setup<'a>(
    run: &Run,
    backbone: &'a Backbone,
    generator: Option<&'a Generator>,
    adapt: &'a [&'a Window],
    test: &'a [&'a Window],
) -> MethodSetup<'a> {
    let c = &run.config;
    MethodSetup {
        backbone,
        generator,
        adapt,
        test,
        tuning: c.tuning_config(shiftkt_core::tuning::TuningMethod::Fft),
        controller: c.controller_config(),
        frequency: c.frequency,
        seed: c.seed,
    }
}

fn parse_methods(name: &str) -> Result<Vec<Method>> {
    if name == "all" {
        Ok(Method::ALL.to_vec())
    } else {
        name.split(',').map(|m| m.trim().parse()).collect()
    }
}

pub fn eval(run: &Run, methods: &[Method]) -> Result<()> {
    run.start("eval")?;
    let c = &run.config;
    let p = Prepared::load(run)?;
    let inputs = EvalInputs::load(run, &p, methods.iter().any(|m| m.needs_generator()))?;
    let (adapt, test) = (refs(&inputs.adapt), refs(&inputs.test));
    let plain = setup(run, &inputs.backbone, None, &adapt, &test);
    let paired = setup(run, &inputs.generator_backbone, inputs.generator.as_ref(), &adapt, &test);

    let mut reports = Vec::new();
    let mut controller_tsv = None;
    for &m in methods {
        let s = if m.needs_generator() { &paired } else { &plain };
        let result = run_method(m, s, run.threads)?;
        let overhead = time_overhead(
            || run_method(m, s, 1).map(|_| ()),
            || run_method(Method::Frozen, &plain, 1).map(|_| ()),
            c.repeats,
        )?;
        if let (Some((scores, selected)), None) = (&result.controller, &controller_tsv) {
            controller_tsv = Some(run.stamp(&score_report(scores, selected)));
        }
        let r = report(run, &result, overhead.overhead_ms, variant_label(run, m))?;
        eprintln!("{:<11} auc {:.4}  rmse {:.4}  overhead {:.1} ms", r.method, r.auc, r.rmse, r.time_overhead_ms);
        reports.push(r);
    }
    run.write("eval.tsv", &eval_reports_tsv(&reports))?;
    if let Some(t) = controller_tsv {
        run.write("controller_scores.tsv", &t)?;
    }
    Ok(())
}

fn variant_label(run: &Run, m: Method) -> String {
    let c = &run.config;
    if m.needs_generator() {
        format!("{}/{}", c.generator_variant.name(), c.controller_variant.name())
    } else {
        "-".into()
    }
}

fn report(run: &Run, result: &MethodResult, overhead_ms: f64, variant: String) -> Result<EvalReport> {
    let c = &run.config;
    Ok(EvalReport {
        method: result.method.to_string(),
        split_mode: c.split.to_string(),
        seed: c.seed,
        auc: result.auc()?,
        rmse: result.rmse()?,
        time_overhead_ms: overhead_ms,
        frequency: if result.method.needs_generator() { c.frequency } else { 0.0 },
        variant,
        threads: run.threads,
        config_hash: run.hash.clone(),
    })
}

pub fn sweep_rank(run: &Run) -> Result<()> {
    run.start("sweep-rank")?;
    let c = &run.config;
    let p = Prepared::load(run)?;
    let base = load_backbone(run, BACKBONE_FILE)?;
    let adapt_ws = p.windows(&p.splits.adapt, c.k, c.eval_windows)?;
    let test_ws = p.windows(&p.splits.test, c.k, c.eval_windows)?;
    let (adapt, test) = (refs(&adapt_ws), refs(&test_ws));
    let mut tsv = String::from("rank\tparam_count\tauc\trmse\tepochs\n");
    for &rank in &c.ranks {
        let mut model = base.clone();
        let (g, log) = fit_generator(run, &p, &mut model, c.generator_variant, rank, c.joint)?;
        let r = run_method(Method::CuffKt, &setup(run, &model, Some(&g), &adapt, &test), run.threads)?;
        let (auc, rmse) = (r.auc()?, r.rmse()?);
        let count = generator::param_count(&g.config);
        eprintln!("rank {rank:>2}: {count} parameters, auc {auc:.4}");
        let _ = writeln!(tsv, "{rank}\t{count}\t{auc:.6}\t{rmse:.6}\t{}", log.epochs.len());
    }
    run.write("sweep_rank.tsv", &run.stamp(&tsv))
}

pub fn shift_report(run: &Run) -> Result<()> {
    run.start("shift-report")?;
    let c = &run.config;
    let p = Prepared::load(run)?;
    let config = ShiftConfig {
        parts: c.shift_parts,
        mode: c.split,
        k: c.k,
        threshold: c.shift_threshold,
        backbone: c.backbone_config(p.dataset.num_concepts),
        train: c.backbone_train(),
    };
    let reports = shift_diagnostic(&p.dataset, &config)?;
    for r in &reports {
        eprintln!(
            "part {}: kl {:.5}{} auc {:.4}",
            r.part,
            r.kl_vs_part1,
            if r.shifted() { " (shifted)" } else { "" },
            r.auc
        );
    }
    run.write("shift_report.tsv", &run.stamp(&shift_reports_tsv(&reports)))
}

pub fn ablate(run: &Run) -> Result<()> {
    run.start("ablate")?;
    let c = &run.config;
    let p = Prepared::load(run)?;
    let inputs = EvalInputs::load(run, &p, false)?;
    let (adapt, test) = (refs(&inputs.adapt), refs(&inputs.test));
    let mut tsv = String::from("kind\tvariant\tauc\trmse\tfrequency\n");
    let mut row = |kind: &str, name: &str, r: &MethodResult| -> Result<()> {
        let (auc, rmse) = (r.auc()?, r.rmse()?);
        eprintln!("{kind:<10} {name:<7} auc {auc:.4}");
        let _ = writeln!(tsv, "{kind}\t{name}\t{auc:.6}\t{rmse:.6}\t{}", c.frequency);
        Ok(())
    };

    let mut full = None;
    for v in GeneratorVariant::ALL {
        let mut model = inputs.backbone.clone();
        let (g, _) = fit_generator(run, &p, &mut model, v, c.rank, c.joint)?;
        let r = run_method(Method::CuffKt, &setup(run, &model, Some(&g), &adapt, &test), run.threads)?;
        row("generator", v.name(), &r)?;
        if v == GeneratorVariant::Full {
            full = Some((model, g));
        }
    }
    let (model, g) = full.expect("full variant is always trained");
    for v in ControllerVariant::ALL {
        let mut s = setup(run, &model, Some(&g), &adapt, &test);
        s.controller = shiftkt_core::controller::ControllerConfig {
            divisor: c.zpd_divisor,
            ..v.config()
        };
        row("controller", v.name(), &run_method(Method::CuffKt, &s, run.threads)?)?;
    }
    run.write("ablation.tsv", &run.stamp(&tsv))
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    let mut extra: Vec<(&str, String)> = Vec::new();
    let mut methods = Vec::new();
    match &cli.command {
        Command::TrainGen { variant, joint } => {
            if let Some(v) = variant {
                extra.push(("generator_variant", v.clone()));
            }
            if *joint {
                extra.push(("joint", "true".into()));
            }
        }
        Command::Eval {
            method,
            frequency,
            variant,
        } => {
            methods = parse_methods(method)?;
            if let Some(f) = frequency {
                extra.push(("frequency", f.to_string()));
            }
            if let Some(v) = variant {
                extra.push(("controller_variant", v.clone()));
            }
        }
        Command::Ablate { frequency: Some(f) } => extra.push(("frequency", f.to_string())),
        _ => {}
    }
    let run = Run::resolve(&cli.common, &extra)?;
    match cli.command {
        Command::Prepare => prepare(&run),
        Command::Train => train(&run),
        Command::TrainGen { .. } => train_gen(&run),
        Command::Eval { .. } => eval(&run, &methods),
        Command::SweepRank => sweep_rank(&run),
        Command::ShiftReport => shift_report(&run),
        Command::Ablate { .. } => ablate(&run),
    }
}

