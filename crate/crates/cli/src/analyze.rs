use std::path::PathBuf;

use anyhow::{Context, Result};
use humorscope::attention::{
    chunk_attention_maps, funny_serious_distance, layer_distance, localization_report,
    model_head_distance, random_replacement_activation, special_position_attention, AttentionSource,
    HeadId, HeadMatrix, LexiconTagger,
};
use humorscope::corpus::{Corpus, Setup, Split, TokenAlignment};
use humorscope::evaluation::paired_t_test;
use humorscope::models::{CausalLm, EncoderKind, ModelVariant, VariantConfig};
use humorscope::perturbation::{flip_rate_table, sweep_pairs};
use humorscope::report::{self, BarValue, CurvePoint, RunManifest};
use serde_json::json;

use crate::commands::Ctx;
use crate::{AnalysisInput, AnalyzeCommand, BaseModel};

struct Loaded {
    corpus: Corpus,
    variant: ModelVariant,
    data_hash: String,
}

impl Loaded {
    fn open(ctx: &Ctx, input: &AnalysisInput) -> Result<Self> {
        let corpus = ctx.load_corpus(&input.corpus)?.split(Split::Test);
        if corpus.is_empty() {
            anyhow::bail!("the prepared corpus has no test pairs");
        }
        let variant = ctx.load_checkpoint(&input.checkpoint)?;
        Ok(Loaded { data_hash: report::corpus_hash(&corpus)?, corpus, variant })
    }

    fn pairs(&self, limit: Option<usize>) -> Vec<(String, &TokenAlignment)> {
        self.corpus
            .pairs
            .iter()
            .take(limit.unwrap_or(usize::MAX))
            .map(|p| (p.pair_id.clone(), self.corpus.alignment(&p.pair_id)))
            .collect()
    }

    fn sentences(&self, limit: Option<usize>) -> Vec<(String, Vec<String>)> {
        self.pairs(limit)
            .into_iter()
            .flat_map(|(id, al)| {
                [
                    (format!("{id}/funny"), al.funny_tokens.clone()),
                    (format!("{id}/serious"), al.serious_tokens.clone()),
                ]
            })
            .collect()
    }
}

fn base_model(ctx: &Ctx, base: &BaseModel, variant: &ModelVariant) -> Result<ModelVariant> {
    if let Some(p) = &base.base_checkpoint {
        return ctx.load_checkpoint(p);
    }
    let config = VariantConfig {
        setup: Setup::Single,
        encoder_kind: EncoderKind::PretrainedMlm,
        encoder_id: base.base_encoder.clone().unwrap_or_else(|| variant.config.encoder_id.clone()),
        frozen: true,
        seed: variant.config.seed,
        recurrent_hidden: None,
    };
    Ok(ModelVariant::build(config, &ctx.cache)?)
}

fn layer_points(series: &str, m: &HeadMatrix) -> Vec<CurvePoint> {
    layer_distance(m)
        .into_iter()
        .enumerate()
        .map(|(i, y)| CurvePoint { series: series.into(), x: (i + 1) as f64, y, low: None, high: None })
        .collect()
}

fn chunk_head(loaded: &Loaded, limit: Option<usize>) -> Result<HeadId> {
    let maps = chunk_attention_maps(&loaded.variant, &loaded.pairs(limit))?;
    let a = maps.funny_chunk.context("no funny sentence has a modified span")?;
    Ok(a.argmax())
}

pub fn run(ctx: &Ctx, cmd: AnalyzeCommand) -> Result<()> {
    let (name, input) = match &cmd {
        AnalyzeCommand::AttentionDistance { input, .. } => ("attention-distance", input),
        AnalyzeCommand::SpecialPositions { input, .. } => ("special-positions", input),
        AnalyzeCommand::ChunkMaps { input } => ("chunk-maps", input),
        AnalyzeCommand::Localize { input, .. } => ("localize", input),
        AnalyzeCommand::Replace { input, .. } => ("replace", input),
        AnalyzeCommand::MaskSweep { input } => ("mask-sweep", input),
    };
    let loaded = Loaded::open(ctx, input)?;
    let label = input.checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let dir = ctx.out.join("analyze").join(name).join(&label);
    std::fs::create_dir_all(&dir)?;
    let mut manifest = RunManifest::start(
        &format!("analyze {name}"),
        json!({ "checkpoint": input.checkpoint, "limit": input.limit }),
    );
    manifest.data_hash = Some(loaded.data_hash.clone());
    manifest.seeds.insert("top".into(), ctx.seed);
    let limit = input.limit;
    let mut artifacts: Vec<PathBuf> = Vec::new();

    let metrics = match cmd {
        AnalyzeCommand::AttentionDistance { base, .. } => {
            let base = base_model(ctx, &base, &loaded.variant)?;
            let sentences = loaded.sentences(limit);
            let d = model_head_distance(&loaded.variant, &base, &sentences)?;
            let fs = funny_serious_distance(&loaded.variant, &loaded.pairs(limit))?;
            let fs_base = funny_serious_distance(&base, &loaded.pairs(limit))?;
            let p = dir.join("model_vs_base.svg");
            report::head_heatmap(&p, "attention distance to the reference model", &d)?;
            artifacts.push(p);
            let mut points = layer_points("model vs reference", &d);
            if let Some(m) = &fs.matrix {
                let p = dir.join("funny_vs_serious.svg");
                report::head_heatmap(&p, "funny vs serious attention distance", m)?;
                artifacts.push(p);
                points.extend(layer_points("funny vs serious (model)", m));
            }
            if let Some(m) = &fs_base.matrix {
                points.extend(layer_points("funny vs serious (reference)", m));
            }
            let p = dir.join("layer_distance.svg");
            report::line_plot(&p, "mean attention distance per layer", "layer", "JS divergence", &points)?;
            artifacts.push(p);
            println!("layer   model-vs-reference");
            for (i, v) in layer_distance(&d).iter().enumerate() {
                println!("{:>5}   {v:.5}", i + 1);
            }
            println!("funny/serious pairs used {}, excluded for unequal length {}", fs.used, fs.excluded);
            json!({ "model_vs_reference": layer_distance(&d), "funny_vs_serious": fs.matrix.as_ref().map(layer_distance),
                    "funny_vs_serious_reference": fs_base.matrix.as_ref().map(layer_distance), "pairs_used": fs.used, "pairs_excluded": fs.excluded })
        }
        AnalyzeCommand::SpecialPositions { base, .. } => {
            let sentences = loaded.sentences(limit);
            let s = special_position_attention(&loaded.variant, &sentences)?;
            let b = special_position_attention(&base_model(ctx, &base, &loaded.variant)? as &dyn AttentionSource, &sentences)?;
            let names = ["first word", "last word", "start token", "end token"];
            let mut bars = Vec::new();
            let mut tests = serde_json::Map::new();
            for (k, n) in names.iter().enumerate() {
                let a: Vec<f64> = s.per_sentence.iter().map(|v| v[k]).collect();
                let r: Vec<f64> = b.per_sentence.iter().map(|v| v[k]).collect();
                bars.push(BarValue { category: format!("{n} (model)"), value: a.iter().sum::<f64>() / a.len() as f64 });
                bars.push(BarValue { category: format!("{n} (reference)"), value: r.iter().sum::<f64>() / r.len() as f64 });
                let t = paired_t_test(&a, &r).ok();
                println!("{n:<12} model {:>9.3}  reference {:>9.3}  p {}", bars[2 * k].value, bars[2 * k + 1].value,
                    t.and_then(|t| t.p_value).map_or("n/a".into(), |p| format!("{p:.3e}")));
                tests.insert(n.to_string(), json!(t));
            }
            let p = dir.join("special_positions.svg");
            report::bar_chart(&p, "total attention on special positions", &bars)?;
            artifacts.push(p);
            json!({ "model": s, "reference": b, "paired_tests": tests })
        }
        AnalyzeCommand::ChunkMaps { .. } => {
            let maps = chunk_attention_maps(&loaded.variant, &loaded.pairs(limit))?;
            for (file, title, m) in [
                ("a_funny_chunk", "modified chunk (funny)", &maps.funny_chunk),
                ("b_funny_other", "other words (funny)", &maps.funny_other),
                ("c_serious_chunk", "edited chunk (serious)", &maps.serious_chunk),
                ("d_serious_other", "other words (serious)", &maps.serious_other),
            ] {
                if let Some(m) = m {
                    let p = dir.join(format!("{file}.svg"));
                    report::head_heatmap(&p, title, m)?;
                    artifacts.push(p);
                }
            }
            let top = maps.funny_chunk.as_ref().map(|m| m.argmax());
            if let Some(h) = top {
                println!("head attending most to modified chunks: {h}");
            }
            println!("pairs {}, empty serious spans {}", maps.pairs, maps.empty_serious_spans);
            json!({ "top_head": top.map(|h| h.to_string()), "pairs": maps.pairs,
                    "empty_funny_spans": maps.empty_funny_spans, "empty_serious_spans": maps.empty_serious_spans })
        }
        AnalyzeCommand::Localize { head, lm, pos_lexicon, .. } => {
            let head = match head {
                Some(h) => h,
                None => chunk_head(&loaded, limit)?,
            };
            let lexicon = pos_lexicon.unwrap_or_else(|| ctx.cache.root().join("pos-lexicon.tsv"));
            let tagger = LexiconTagger::load(&lexicon).with_context(|| format!("reading POS lexicon {}", lexicon.display()))?;
            let lm = CausalLm::load(&ctx.cache, &lm).with_context(|| format!("loading language model {lm}"))?;
            let scorer = |w: &[String]| lm.word_logprobs(w);
            let r = localization_report(&loaded.variant, head, &loaded.pairs(limit), &tagger, &scorer)?;
            println!("head {head}: {:.4} over {} sentences", r.head_accuracy, r.sentences);
            println!("last word: {:.4}  first verb: {:.4}  lowest likelihood: {:.4}", r.last_word_accuracy, r.first_verb_accuracy, r.lowest_likelihood_accuracy);
            serde_json::to_value(&r)?
        }
        AnalyzeCommand::Replace { head, .. } => {
            let head = match head {
                Some(h) => h,
                None => chunk_head(&loaded, limit)?,
            };
            let vocabulary = loaded.corpus.vocabulary();
            let r = random_replacement_activation(&loaded.variant, head, &loaded.pairs(limit), ctx.seed, &vocabulary)?;
            println!("head {head}: attention after replacement is {:.3} of before ({} sentences)", r.ratio, r.sentences);
            serde_json::to_value(&r)?
        }
        AnalyzeCommand::MaskSweep { .. } => {
            let sweeps = sweep_pairs(&loaded.variant, &loaded.pairs(limit))?;
            let p = dir.join("sweeps.jsonl");
            report::write_jsonl(&p, &sweeps)?;
            artifacts.push(p);
            let table = flip_rate_table(&sweeps)?;
            let mut rows = Vec::new();
            for row in [&table.funny, &table.serious] {
                for (kind, cell) in [("modified", row.modified), ("other", row.other)] {
                    rows.push(json!({ "sentence": format!("{:?}", row.role).to_lowercase(), "words": kind,
                        "flips": cell.flips, "maskings": cell.maskings, "rate": cell.rate(),
                        "p_value": row.test.and_then(|t| t.p_value) }));
                }
                println!(
                    "{:<8} modified {:>7}  other {:>7}  p {}",
                    format!("{:?}", row.role).to_lowercase(),
                    row.modified.rate().map_or("-".into(), |r| format!("{r:.4}")),
                    row.other.rate().map_or("-".into(), |r| format!("{r:.4}")),
                    row.test.and_then(|t| t.p_value).map_or("n/a".into(), |p| format!("{p:.3e}"))
                );
            }
            let csv_rows: Vec<serde_json::Map<String, serde_json::Value>> =
                rows.iter().map(|r| r.as_object().cloned().unwrap_or_default()).collect();
            write_json_rows_csv(&dir.join("flip_table.csv"), &csv_rows)?;
            if sweeps.iter().any(|s| !s.restored) {
                anyhow::bail!("a sweep changed the model's decision on the unmasked input");
            }
            serde_json::to_value(&table)?
        }
    };
    let p = dir.join("report.json");
    report::write_json(&p, &metrics)?;
    artifacts.push(p);
    manifest.artifacts = artifacts;
    manifest.metrics = metrics;
    manifest.finish(&ctx.out)?;
    Ok(())
}

fn write_json_rows_csv(path: &std::path::Path, rows: &[serde_json::Map<String, serde_json::Value>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if let Some(first) = rows.first() {
        w.write_record(first.keys())?;
    }
    for r in rows {
        w.write_record(r.values().map(|v| match v {
            serde_json::Value::Null => String::new(),
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        }))?;
    }
    w.flush()?;
    Ok(())
}
