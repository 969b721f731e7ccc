use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use seasynth_client::ReviewClient;
use seasynth_core::annotations::{load_source_dataset, write_coco};
use seasynth_core::config::AppConfig;
use seasynth_core::eval::{evaluate, load_detections};
use seasynth_core::generation::{GenerationBackend, MockBackend, MockOptions, Profile};
use seasynth_core::manifest::{compute_stats, load_manifest};
use seasynth_core::pipeline::{run_pipeline, PipelineConfig, StatsReport, MANIFEST_FILE, SUMMARY_FILE};
use seasynth_core::preservation::{
    build_negative_set, train_checker, CheckerConfig, CheckerMode, CheckerTrainConfig, NegativeSetConfig,
};
use seasynth_core::review::{CreateSession, ManifestFilter, NextItem, RuleFlags, VerdictSubmission};
use seasynth_core::sea_state::{train_sea_state_classifier, ClassifierConfig, ClassifierMode, SeaStateClassifier};
use seasynth_core::stages::{
    check_generated, classify_files, expand_image_paths, generate_images, load_generated, write_masks,
};
use seasynth_core::texture::{write_checker_corpus, write_fixture_sources, write_sea_state_corpus};
use seasynth_core::train::TrainConfig;
use seasynth_core::{SeaState, SourceImage};
use seasynth_service::{generation_router, review_router, serve, ReviewState};

use crate::args::*;

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write;
        writeln!(std::io::stdout(), $($t)*)?;
    }};
}

macro_rules! outp {
    ($($t:tt)*) => {{
        use std::io::Write;
        write!(std::io::stdout(), $($t)*)?;
    }};
}

struct Ctx {
    cfg: AppConfig,
    output: Option<PathBuf>,
}

impl Ctx {
    fn new(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(path) => AppConfig::load(path)?,
            None => AppConfig::default(),
        };
        if let Some(seed) = common.seed {
            cfg.pipeline.seed = seed;
        }
        if let Some(workers) = common.workers {
            cfg.pipeline.workers = workers;
        }
        if let Some(out) = &common.output {
            cfg.pipeline.output_root = out.clone();
        }
        Ok(Self {
            cfg,
            output: common.output.clone(),
        })
    }

    fn seed(&self) -> u64 {
        self.cfg.pipeline.seed
    }

    /// `--output` if given, else `<output_root>/<fallback>`.
    fn output_or(&self, fallback: &str) -> PathBuf {
        self.output
            .clone()
            .unwrap_or_else(|| self.cfg.pipeline.output_root.join(fallback))
    }

    fn output_root(&self) -> PathBuf {
        self.cfg.pipeline.output_root.clone()
    }

    fn sources(&self, data: &DataArgs) -> Result<Vec<SourceImage>> {
        let ann = data
            .annotations
            .clone()
            .or_else(|| self.cfg.data.annotations.clone())
            .ok_or_else(|| anyhow!("no annotation file: pass --annotations or set data.annotations"))?;
        let root = data
            .image_root
            .clone()
            .or_else(|| self.cfg.data.image_root.clone())
            .unwrap_or_else(|| ann.parent().map(Path::to_path_buf).unwrap_or_default());
        let dataset = load_source_dataset(&ann, &root)?;
        for skipped in &dataset.skipped {
            eprintln!("warning: skipped image: {skipped}");
        }
        Ok(dataset.images)
    }

    fn pipeline(&self, b: &BackendArgs) -> PipelineConfig {
        let mut p = self.cfg.pipeline_config();
        if let Some(name) = &b.backend {
            p.backend.name = name.clone();
        }
        if let Some(endpoint) = &b.endpoint {
            p.backend.endpoint = Some(endpoint.clone());
        }
        if let Some(profile) = b.profile {
            p.backend.profile = match profile {
                ProfileArg::BldStyle => Profile::BldStyle,
                ProfileArg::InpaintStyle => Profile::InpaintStyle,
            };
        }
        if let Some(n) = b.batch_size {
            p.backend.batch_size = n;
        }
        if let Some(t) = b.timeout_s {
            p.backend.timeout_s = t;
        }
        if let Some(n) = b.images_per_source {
            p.images_per_source = n;
        }
        if let Some(d) = b.mask_dilation {
            p.mask_dilation = d;
        }
        p
    }

    fn classifier(&self, a: &ClassifierArgs) -> ClassifierConfig {
        let mut c = self.cfg.classifier.clone();
        if let Some(mode) = a.classifier_mode {
            c.mode = match mode {
                ModeArg::Learned => ClassifierMode::Learned,
                ModeArg::SyntheticFeature => ClassifierMode::SyntheticFeature,
            };
        }
        if let Some(path) = &a.classifier_model {
            c.model_path = Some(path.clone());
            if a.classifier_mode.is_none() {
                c.mode = ClassifierMode::Learned;
            }
        }
        c
    }

    fn checker(&self, a: &CheckerArgs) -> CheckerConfig {
        let mut c = self.cfg.checker.clone();
        if let Some(mode) = a.checker_mode {
            c.mode = match mode {
                ModeArg::Learned => CheckerMode::Learned,
                ModeArg::SyntheticFeature => CheckerMode::SyntheticFeature,
            };
        }
        if let Some(path) = &a.checker_model {
            c.model_path = Some(path.clone());
            if a.checker_mode.is_none() {
                c.mode = CheckerMode::Learned;
            }
        }
        if let Some(t) = a.threshold {
            c.threshold = t;
        }
        c.audit |= a.audit;
        c
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    out!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Runtime::new()?)
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let ctx = Ctx::new(&cli.common)?;
    match cli.command {
        Command::Mask(a) => {
            let sources = ctx.sources(&a.data)?;
            let dir = ctx.output_or("masks");
            let dilation = a.dilation.unwrap_or(ctx.cfg.pipeline.mask_dilation);
            let written = write_masks(&sources, dilation, &dir)?;
            out!("wrote {} masks to {}", written.len(), dir.display());
        }
        Command::Generate(a) => {
            let sources = ctx.sources(&a.data)?;
            let cfg = ctx.pipeline(&a.backend);
            let dir = ctx.output_or("generated");
            let report = generate_images(&sources, &cfg, &dir)?;
            for f in &report.failures {
                eprintln!("failed: {} seed {}: {}", f.source_id, f.seed, f.error);
            }
            out!(
                "generated {} images into {} ({} failed)",
                report.entries.len(),
                dir.display(),
                report.failures.len()
            );
        }
        Command::Classify(a) => {
            let clf = SeaStateClassifier::from_config(&ctx.classifier(&a.classifier))?;
            let paths = expand_image_paths(&a.inputs)?;
            for c in classify_files(&paths, &clf)? {
                if a.json {
                    out!("{}", serde_json::to_string(&c)?);
                } else {
                    let scores: Vec<String> = c.scores.0.iter().map(|s| format!("{s:.3}")).collect();
                    out!("{}\t{}\t{}", c.path.display(), c.sea_state, scores.join(" "));
                }
            }
        }
        Command::Check(a) => {
            let sources = ctx.sources(&a.data)?;
            let edited = load_generated(&a.generated)?;
            let outcomes = check_generated(edited, &sources, &ctx.checker(&a.checker))?;
            let kept = outcomes.iter().filter(|o| o.kept).count();
            for o in &outcomes {
                if a.json {
                    out!("{}", serde_json::to_string(o)?);
                } else {
                    let verdicts: Vec<String> = o
                        .verdicts
                        .iter()
                        .map(|v| format!("{}:{:?}({:.2})", v.box_index, v.verdict, v.confidence))
                        .collect();
                    let decision = if o.kept { "keep" } else { "discard" };
                    out!("{}\t{decision}\t{}", o.edited_id, verdicts.join(" "));
                }
            }
            if !a.json {
                out!("kept {kept} of {}", outcomes.len());
            }
        }
        Command::Run(a) => {
            let sources = ctx.sources(&a.data)?;
            let mut cfg = ctx.pipeline(&a.backend);
            cfg.classifier = ctx.classifier(&a.classifier);
            cfg.checker = ctx.checker(&a.checker);
            cfg.keep_discarded |= a.keep_discarded;
            let summary = run_pipeline(&sources, &cfg)?;
            if a.json {
                print_json(&summary)?;
            } else {
                out!(
                    "records: {} total, {} new, {} resumed; kept {}; failed {}",
                    summary.records_total,
                    summary.records_written,
                    summary.records_resumed,
                    summary.kept_total,
                    summary.failed_items
                );
                if let Ok(report) = StatsReport::new(&compute_stats(&summary.manifest)?) {
                    outp!("{}", report.table());
                }
                out!("summary: {}", cfg.output_root.join(SUMMARY_FILE).display());
            }
        }
        Command::Stats(a) => {
            let manifest = a.manifest.unwrap_or_else(|| ctx.output_root().join(MANIFEST_FILE));
            if !manifest.is_file() {
                return Err(anyhow!("manifest {} does not exist", manifest.display()));
            }
            let report = StatsReport::new(&compute_stats(&manifest)?)?;
            if a.json {
                print_json(&report)?;
            } else {
                outp!("{}", report.table());
            }
        }
        Command::TrainSeastate(a) => {
            let cfg = TrainConfig {
                epochs: a.epochs,
                batch_size: a.batch_size,
                learning_rate: a.lr,
                seed: ctx.seed(),
                test_fraction: a.test_fraction,
                resolution: a.resolution,
                hflip_classes: if a.hflip { (0..4).collect() } else { Vec::new() },
                blur_classes: if a.blur { (0..4).collect() } else { Vec::new() },
            };
            let out = ctx.output_or("models/sea_state");
            let report = train_sea_state_classifier(&a.corpus, &cfg, &out)?;
            for l in &report.log {
                out!("{l}");
            }
            out!("test accuracy {:.4}; model written to {}", report.test_accuracy, out.display());
        }
        Command::TrainChecker(a) => {
            let pick = |explicit: Option<PathBuf>, sub: &str| {
                explicit
                    .or_else(|| a.dataset.as_ref().map(|d| d.join(sub)))
                    .ok_or_else(|| anyhow!("pass --{} or --dataset", if sub == "boat" { "positives" } else { "negatives" }))
            };
            let positives = pick(a.positives.clone(), "boat")?;
            let negatives = pick(a.negatives.clone(), "not_boat")?;
            let cfg = CheckerTrainConfig {
                epochs: a.epochs,
                batch_size: a.batch_size,
                learning_rate: a.lr,
                seed: ctx.seed(),
                test_fraction: a.test_fraction,
                resolution: a.resolution,
                blur_augment: a.blur_augment,
            };
            let out = ctx.output_or("models/checker");
            let report = train_checker(&positives, &negatives, &cfg, &out)?;
            for l in &report.log {
                out!("{l}");
            }
            out!("test accuracy {:.4}; model written to {}", report.test_accuracy, out.display());
        }
        Command::BuildNegatives(a) => {
            let sources = ctx.sources(&a.data)?;
            let edited = load_generated(&a.generated)?;
            let cfg = NegativeSetConfig {
                backgrounds_per_image: a.backgrounds_per_image,
                background_size: a.background_size,
                quarter_negatives: !a.no_quarter,
                positives: !a.no_positives,
            };
            let out = ctx.output_or("negatives");
            let report = build_negative_set(&sources, &edited, &cfg, ctx.seed(), &out)?;
            use seasynth_core::model::CropKind::*;
            out!(
                "positives {}, quarter negatives {}, background negatives {}, skipped {} -> {}",
                report.count(Positive),
                report.count(QuarterNegative),
                report.count(BackgroundNegative),
                report.skipped,
                out.display()
            );
        }
        Command::Eval(a) => {
            let run = a.run.clone().unwrap_or_else(|| ctx.output_root());
            let manifest = load_manifest(&run.join(MANIFEST_FILE))?;
            let sources = ctx.sources(&a.data)?;
            let detections = load_detections(&a.detections)?;
            let report = evaluate(&manifest.records, &sources, &detections)?;
            if a.json {
                print_json(&report)?;
            } else {
                outp!("{}", report.chart_table());
                if report.ignored_detections > 0 {
                    out!("ignored {} detections on discarded images", report.ignored_detections);
                }
            }
        }
        Command::Review(cmd) => review(&ctx, cmd)?,
        Command::MakeFixtures(a) => {
            let out = ctx.output_or("fixtures");
            match a.kind {
                FixtureKind::Sources => {
                    let sources = write_fixture_sources(&out, a.count, a.width, a.height, ctx.seed())?;
                    let ann = out.join("annotations.json");
                    write_coco(&ann, &sources, &out)?;
                    out!("wrote {} sources and {}", sources.len(), ann.display());
                }
                FixtureKind::SeaState => {
                    write_sea_state_corpus(&out, a.count, a.width, ctx.seed())?;
                    out!("wrote {} images per state under {}", a.count, out.display());
                }
                FixtureKind::Checker => {
                    write_checker_corpus(&out, a.count, ctx.seed())?;
                    out!("wrote {} crops per class under {}", a.count, out.display());
                }
            }
        }
        Command::MockBackend(MockBackendCommand::Serve(a)) => {
            let backend: Arc<dyn GenerationBackend> = Arc::new(MockBackend::new(MockOptions {
                corrupt_objects: a.corrupt_objects,
                ..ctx.cfg.backend.mock.clone()
            }));
            eprintln!("mock generation service on http://{}", a.addr);
            runtime()?.block_on(serve(a.addr, generation_router(backend)))?;
        }
    }
    Ok(())
}

fn review(ctx: &Ctx, cmd: ReviewCommand) -> Result<()> {
    let rt = runtime()?;
    match cmd {
        ReviewCommand::Serve(a) => {
            let run = a.run.clone().unwrap_or_else(|| ctx.output_root());
            let review_dir = a.review_dir.clone().unwrap_or_else(|| run.join("review"));
            let has_data = a.data.annotations.is_some() || ctx.cfg.data.annotations.is_some();
            let sources = if has_data { ctx.sources(&a.data)? } else { Vec::new() };
            let state = ReviewState::open(&run, &review_dir, sources)
                .with_context(|| format!("opening review state for {}", run.display()))?;
            eprintln!("review service on http://{}", a.addr);
            rt.block_on(serve(a.addr, review_router(Arc::new(state))))?;
        }
        ReviewCommand::Create(a) => {
            let client = ReviewClient::new(&a.url.url);
            let req = CreateSession {
                session_id: a.session_id,
                method: a.method,
                sample_size: a.sample_size,
                seed: ctx.seed(),
                filter: ManifestFilter {
                    kept_only: a.kept_only,
                    sea_state: a.sea_state.and_then(SeaState::from_level),
                    backend_name: a.backend_name,
                    prompt_contains: None,
                },
            };
            let s = rt.block_on(client.create_session(&req))?;
            out!("{}\t{} items", s.session_id, s.items.len());
        }
        ReviewCommand::Next(a) => {
            let client = ReviewClient::new(&a.url.url);
            match rt.block_on(client.next_item(&a.session_id))?.next {
                NextItem::Item { index, total, item } => {
                    out!("{}/{}\t{}\t{}", index + 1, total, item.edited_id, item.sea_state)
                }
                NextItem::Done { total } => out!("done ({total} items)"),
            }
        }
        ReviewCommand::Submit(a) => {
            let client = ReviewClient::new(&a.url.url);
            let sub = VerdictSubmission {
                edited_id: a.edited_id,
                reviewer: a.reviewer,
                rule_flags: RuleFlags {
                    background_valid: a.background_valid,
                    background_realistic: a.background_realistic,
                    boat_preserved: a.boat_preserved,
                },
            };
            let v = rt.block_on(client.submit_verdict(&a.session_id, &sub))?;
            out!("{}\t{}", v.edited_id, if v.good { "good" } else { "bad" });
        }
        ReviewCommand::Stats(a) => {
            let client = ReviewClient::new(&a.url.url);
            let rate = rt.block_on(client.good_image_rate(&a.sessions))?;
            if a.json {
                print_json(&rate)?;
            } else {
                for s in &rate.sessions {
                    out!(
                        "{}\t{}/{} good\t{}",
                        s.session_id,
                        s.n_good,
                        s.n_reviewed,
                        s.good_rate.map_or("n/a".into(), |r| format!("{r:.2}%"))
                    );
                }
                let std = rate.sample_std.map_or("n/a".into(), |s| format!("{s:.2}"));
                out!("good image rate: {:.2}% ± {std}", rate.mean);
            }
        }
    }
    Ok(())
}
