use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use humorscope::corpus::{load_corpus, read_archive, write_archive, Corpus, HqRule, LoadOptions, Split};
use humorscope::evaluation::{
    accuracy_by_type, accuracy_vs_jaccard, compare_models, jaccard_shift_test, lm_pair_outcomes,
    lm_single_outcomes, table_rows, variant_outcomes, MetricsReport, Outcome, StratumResult, TableRow,
    JACCARD_GRID,
};
use humorscope::models::{CausalLm, ModelCache, ModelVariant, VariantConfig};
use humorscope::report::{self, CurvePoint, RunManifest};
use humorscope::training::{self, TrainOverrides};
use serde::Serialize;
use serde_json::json;

use crate::{Cli, Command, EvaluateArgs, FixtureArgs, PrepareArgs, ReportArgs, TrainArgs};

/// Shared settings resolved from flags, the config file and defaults.
pub struct Ctx {
    pub cache: ModelCache,
    pub out: PathBuf,
    pub file: TrainOverrides,
    pub seed: u64,
}

impl Ctx {
    pub fn corpus_path(&self, given: &Option<PathBuf>) -> PathBuf {
        given.clone().unwrap_or_else(|| self.out.join("corpus.jsonl"))
    }

    pub fn load_corpus(&self, given: &Option<PathBuf>) -> Result<Corpus> {
        let path = self.corpus_path(given);
        read_archive(&path).with_context(|| format!("reading prepared corpus {}", path.display()))
    }

    pub fn load_checkpoint(&self, path: &Path) -> Result<ModelVariant> {
        ModelVariant::load_checkpoint(path, &self.cache)
            .with_context(|| format!("loading checkpoint {}", path.display()))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => TrainOverrides::from_file(p).with_context(|| format!("reading config {}", p.display()))?,
        None => TrainOverrides::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let ctx = Ctx { cache: ModelCache::new(&cli.model_cache), out: cli.out.clone(), file, seed };
    std::fs::create_dir_all(&ctx.out).with_context(|| format!("creating {}", ctx.out.display()))?;
    match cli.command {
        Command::Prepare(a) => prepare(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Analyze(a) => crate::analyze::run(&ctx, a),
        Command::Report(a) => render(&ctx, a),
        Command::MakeFixtures(a) => fixtures(a),
    }
}

fn prepare(ctx: &Ctx, args: PrepareArgs) -> Result<()> {
    let options = LoadOptions {
        hq_rule: args.hq_min.map_or(HqRule::MaxObserved, HqRule::AtLeast),
        ordering_seed: ctx.seed,
        ..Default::default()
    };
    let (corpus, load) = load_corpus(&args.input, &options)
        .with_context(|| format!("loading {}", args.input.display()))?;
    for d in &load.rejected {
        eprintln!("rejected row {}: {}", d.row, d.reason);
    }
    if args.strict && !load.rejected.is_empty() {
        let first = &load.rejected[0];
        return Err(humorscope::Error::RejectedRows {
            count: load.rejected.len(),
            first_row: first.row,
            first_reason: first.reason.clone(),
        }
        .into());
    }
    let archive = ctx.corpus_path(&args.archive);
    if let Some(dir) = archive.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_archive(&corpus, &archive)?;
    print!("{load}");
    let hash = report::file_hash(&archive)?;
    println!("archive {} sha256 {hash}", archive.display());
    let mut m = RunManifest::start("prepare", json!({ "input": args.input, "hq_min": args.hq_min, "strict": args.strict }));
    m.seeds.insert("ordering".into(), ctx.seed);
    m.data_hash = Some(hash);
    m.metrics = serde_json::to_value(&load)?;
    m.artifact(&archive);
    m.finish(&ctx.out)?;
    Ok(())
}

fn train(ctx: &Ctx, args: TrainArgs) -> Result<()> {
    let corpus = ctx.load_corpus(&args.corpus)?;
    let flags = TrainOverrides {
        learning_rate: args.lr,
        batch_size: args.batch_size,
        max_epochs: args.epochs,
        early_stop_patience: args.patience,
        seed: Some(ctx.seed),
    };
    let kind = args.encoder.into();
    let frozen = args.frozen || kind == humorscope::models::EncoderKind::BagOfVectors;
    let config = flags.or(ctx.file.clone()).resolve(frozen);
    let variant_config = VariantConfig {
        setup: args.setup.into(),
        encoder_kind: kind,
        encoder_id: args.encoder_id.clone(),
        frozen,
        seed: ctx.seed,
        recurrent_hidden: args.recurrent_hidden,
    };
    let name = args.name.unwrap_or_else(|| format!("{}-seed{}", variant_config.label(), ctx.seed));
    let mut variant = ModelVariant::build(variant_config.clone(), &ctx.cache)?;
    let log = training::train(&mut variant, &corpus, &config)?;
    let dir = ctx.out.join("checkpoints");
    std::fs::create_dir_all(&dir)?;
    let ckpt = dir.join(format!("{name}.safetensors"));
    variant.save_checkpoint(&ckpt)?;
    let log_path = dir.join(format!("{name}.train.json"));
    report::write_json(&log_path, &log)?;
    println!(
        "{name}: best epoch {} of {}, validation accuracy {:.4}",
        log.best_epoch,
        log.epochs.len(),
        log.best_val_accuracy
    );
    println!("checkpoint {}", ckpt.display());
    let mut m = RunManifest::start("train", json!({ "variant": variant_config, "train": config }));
    m.seeds.insert("train".into(), config.seed);
    m.data_hash = Some(report::corpus_hash(&corpus)?);
    m.metrics = json!({ "best_epoch": log.best_epoch, "best_val_accuracy": log.best_val_accuracy, "epochs": log.epochs.len() });
    m.artifact(&ckpt);
    m.artifact(&log_path);
    m.finish(&ctx.out)?;
    Ok(())
}

/// A model's per-item outcomes on the test split.
struct Scored {
    name: String,
    setup: humorscope::corpus::Setup,
    outcomes: Vec<Outcome>,
}

fn score_all(ctx: &Ctx, args: &EvaluateArgs, corpus: &Corpus, test: &Corpus) -> Result<Vec<Scored>> {
    use humorscope::corpus::Setup;
    let mut out = Vec::new();
    for path in &args.checkpoints {
        let v = ctx.load_checkpoint(path)?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| v.config.label());
        out.push(Scored { name, setup: v.config.setup, outcomes: variant_outcomes(&v, test, ctx.seed)? });
    }
    for id in &args.lms {
        let lm = CausalLm::load(&ctx.cache, id).with_context(|| format!("loading language model {id}"))?;
        let norm = args.lm_normalization.into();
        let (threshold, single) = lm_single_outcomes(&lm, &corpus.split(Split::Train), test, norm)?;
        log::info!("{id}: likelihood threshold {threshold:.4}");
        out.push(Scored { name: format!("{id}-lm"), setup: Setup::Single, outcomes: single });
        out.push(Scored { name: format!("{id}-lm"), setup: Setup::Paired, outcomes: lm_pair_outcomes(&lm, test, norm)? });
    }
    if out.is_empty() {
        bail!("nothing to evaluate: pass --checkpoint and/or --lm");
    }
    Ok(out)
}

#[derive(Serialize)]
struct FlatRow {
    model: String,
    setup: String,
    stratum: String,
    n: usize,
    accuracy: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
}

fn flat(model: &str, setup: humorscope::corpus::Setup, stratum: String, n: usize, r: &Option<MetricsReport>) -> FlatRow {
    FlatRow {
        model: model.into(),
        setup: format!("{setup:?}").to_lowercase(),
        stratum,
        n,
        accuracy: r.as_ref().map(|r| r.point_estimate),
        ci_low: r.as_ref().map(|r| r.ci_low),
        ci_high: r.as_ref().map(|r| r.ci_high),
    }
}

fn evaluate(ctx: &Ctx, args: EvaluateArgs) -> Result<()> {
    let corpus = ctx.load_corpus(&args.corpus)?;
    let test = corpus.split(Split::Test);
    if test.is_empty() {
        bail!("the prepared corpus has no test pairs");
    }
    let scored = score_all(ctx, &args, &corpus, &test)?;
    let dir = ctx.out.join("evaluate");
    let mut m = RunManifest::start(
        "evaluate",
        json!({ "checkpoints": args.checkpoints, "lms": args.lms, "table1": args.table1, "by_type": args.by_type, "jaccard": args.jaccard }),
    );
    m.seeds.insert("bootstrap".into(), ctx.seed);
    m.data_hash = Some(report::corpus_hash(&corpus)?);
    let mut metrics = serde_json::Map::new();

    let mut rows: Vec<TableRow> = Vec::new();
    for s in &scored {
        rows.extend(table_rows(&s.name, s.setup, &s.outcomes, &test, ctx.seed)?);
    }
    println!("{:<40} {:<7} {:<5} {:>6} {:>8}  99% CI", "model", "setup", "set", "n", "acc");
    for r in &rows {
        match &r.report {
            Some(x) => println!(
                "{:<40} {:<7} {:<5} {:>6} {:>8.4}  [{:.4}, {:.4}]",
                r.model,
                format!("{:?}", r.setup).to_lowercase(),
                format!("{:?}", r.subset).to_lowercase(),
                x.n,
                x.point_estimate,
                x.ci_low,
                x.ci_high
            ),
            None => println!("{:<40} {:<7} {:<5} {:>6}        -", r.model, format!("{:?}", r.setup).to_lowercase(), format!("{:?}", r.subset).to_lowercase(), 0),
        }
    }
    let name = if args.table1 { "table1" } else { "accuracy" };
    let json_path = dir.join(format!("{name}.json"));
    report::write_json(&json_path, &rows)?;
    let flat_rows: Vec<FlatRow> = rows
        .iter()
        .map(|r| flat(&r.model, r.setup, format!("{:?}", r.subset).to_lowercase(), r.report.as_ref().map_or(0, |x| x.n), &r.report))
        .collect();
    report::write_csv(&dir.join(format!("{name}.csv")), &flat_rows)?;
    m.artifact(&json_path);
    metrics.insert(name.into(), serde_json::to_value(&rows)?);

    // pairwise significance between all models, aligned on pair ids
    let mut tests = Vec::new();
    for (i, a) in scored.iter().enumerate() {
        for b in &scored[i + 1..] {
            if let Ok(t) = compare_models(&a.outcomes, &b.outcomes) {
                tests.push(json!({ "a": format!("{} {:?}", a.name, a.setup), "b": format!("{} {:?}", b.name, b.setup), "test": t }));
            }
        }
    }
    if !tests.is_empty() {
        let p = dir.join(format!("{name}.tests.json"));
        report::write_json(&p, &tests)?;
        m.artifact(p);
    }

    if args.by_type {
        let mut all: Vec<(String, Vec<StratumResult>)> = Vec::new();
        let mut flat_rows = Vec::new();
        for s in &scored {
            let res = accuracy_by_type(&s.name, &s.outcomes, &test, ctx.seed)?;
            for r in &res {
                let label = match &r.stratum {
                    humorscope::evaluation::Stratum::HumorType(t) => t.label().to_string(),
                    other => format!("{other:?}"),
                };
                flat_rows.push(flat(&s.name, s.setup, label, r.pairs, &r.report));
            }
            all.push((format!("{} {:?}", s.name, s.setup), res));
        }
        let p = dir.join("by_type.json");
        report::write_json(&p, &all)?;
        report::write_csv(&dir.join("by_type.csv"), &flat_rows)?;
        m.artifact(p);
        metrics.insert("by_type".into(), serde_json::to_value(&all)?);
    }

    if args.jaccard {
        let mut points = Vec::new();
        let mut curves = Vec::new();
        for s in &scored {
            let series = format!("{} {:?}", s.name, s.setup).to_lowercase();
            let res = accuracy_vs_jaccard(&s.name, &s.outcomes, &test, &JACCARD_GRID, ctx.seed)?;
            for r in &res {
                if let (humorscope::evaluation::Stratum::Jaccard(x), Some(rep)) = (&r.stratum, &r.report) {
                    points.push(CurvePoint { series: series.clone(), x: *x, y: rep.point_estimate, low: Some(rep.ci_low), high: Some(rep.ci_high) });
                }
            }
            let shift = jaccard_shift_test(&s.outcomes, &test, 0.5).ok();
            curves.push(json!({ "model": series, "points": res, "above_0.5_vs_rest": shift }));
        }
        let svg = dir.join("accuracy_vs_jaccard.svg");
        report::line_plot(&svg, "accuracy vs. Jaccard distance", "Jaccard distance >", "accuracy", &points)?;
        let p = dir.join("accuracy_vs_jaccard.json");
        report::write_json(&p, &curves)?;
        m.artifact(svg);
        m.artifact(p);
        metrics.insert("jaccard".into(), serde_json::Value::Array(curves));
    }
    m.metrics = serde_json::Value::Object(metrics);
    m.finish(&ctx.out)?;
    Ok(())
}

/// Figure kinds recognised from CSV headers.
fn render(ctx: &Ctx, args: ReportArgs) -> Result<()> {
    let dir = args.dir.unwrap_or_else(|| ctx.out.clone());
    if !dir.is_dir() {
        return Err(humorscope::Error::MissingArtifact(dir).into());
    }
    let mut rendered = Vec::new();
    let mut summaries = Vec::new();
    for entry in walkdir::WalkDir::new(&dir).sort_by_file_name() {
        let entry = entry?;
        let path = entry.path();
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => {
                let header = std::fs::read_to_string(path)?.lines().next().unwrap_or("").to_string();
                let svg = path.with_extension("svg");
                let title = path.file_stem().unwrap_or_default().to_string_lossy().replace('_', " ");
                match header.as_str() {
                    "layer,head,value" => {
                        report::head_heatmap(&svg, &title, &report::read_head_csv(path)?)?;
                    }
                    "series,x,y,low,high" => {
                        let pts: Vec<CurvePoint> = csv::Reader::from_path(path)?.deserialize().collect::<Result<_, _>>()?;
                        report::line_plot(&svg, &title, "x", "y", &pts)?;
                    }
                    "category,value" => {
                        let bars: Vec<report::BarValue> = csv::Reader::from_path(path)?.deserialize().collect::<Result<_, _>>()?;
                        report::bar_chart(&svg, &title, &bars)?;
                    }
                    _ => continue,
                }
                rendered.push(svg);
            }
            Some("json") if !path.components().any(|c| c.as_os_str() == "manifests") => {
                summaries.push(path.strip_prefix(&dir).unwrap_or(path).display().to_string());
            }
            _ => {}
        }
    }
    let mut md = String::from("# Report\n\n## Figures\n\n");
    for f in &rendered {
        let rel = f.strip_prefix(&dir).unwrap_or(f).display().to_string();
        md.push_str(&format!("- [{rel}]({rel}) (data: {})\n", Path::new(&rel).with_extension("csv").display()));
    }
    md.push_str("\n## Reports\n\n");
    for s in &summaries {
        md.push_str(&format!("- [{s}]({s})\n"));
    }
    let index = dir.join("index.md");
    std::fs::write(&index, md)?;
    println!("rendered {} figure(s); index {}", rendered.len(), index.display());
    let mut m = RunManifest::start("report", json!({ "dir": dir }));
    m.artifacts = rendered;
    m.artifact(index);
    m.finish(&ctx.out)?;
    Ok(())
}

fn fixtures(args: FixtureArgs) -> Result<()> {
    humorscope::models::testing::write_tiny_models(&args.models, 7)?;
    let tsv = humorscope::models::testing::synthetic_corpus_tsv(args.train_pairs, args.val_pairs, args.test_pairs, 7);
    if let Some(dir) = args.corpus.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&args.corpus, tsv)?;
    std::fs::write(
        args.models.join("pos-lexicon.tsv"),
        "announces\tVBZ\nopens\tVBZ\ntakes\tVBZ\nreports\tVBZ\nfinds\tVBZ\nresume\tVB\narrest\tVB\nreturn\tVB\n",
    )?;
    println!("models in {}, corpus at {}", args.models.display(), args.corpus.display());
    Ok(())
}
