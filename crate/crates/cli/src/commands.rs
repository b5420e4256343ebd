use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use log::info;
use maftlab_core::corpus::langs::{african_allowlist, parse_language_set};
use maftlab_core::corpus::{
    compute_durations, ingest_directory, read_lang_map, read_manifest, read_transcripts, write_manifest, ManifestEntry, Split,
};
use maftlab_core::experiments::{config_hash, run_recipe, vocab_for, Recipe};
use maftlab_core::heads::{
    cap_slid_data, finetune_grid, language_set, load_labeled, predict_with, predictions_to_tsv, sample_asr_hours, write_grid,
    CharVocab, FinetuneConfig, Task, TaskData,
};
use maftlab_core::metrics::{confusion_analysis, macro_f1, score_asr, ConfusionMatrix};
use maftlab_core::rng::derive_seed;
use maftlab_core::sampler::{build_upsampled_manifest, carve_validation, compute_sampling_probs, realized_plan, SamplingPlan};
use maftlab_core::segmenter::{run_segmenter, VadConfig};
use maftlab_core::ssl::{parse_validation_history, select_checkpoint, train_ssl, write_run, Checkpoint, SslData, TrainRunConfig};
use maftlab_core::textio::{read_text, write_atomic, KeyValues};
use maftlab_core::units::{
    assign_all, extract_manifest_features, read_features, sample_kmeans_corpus, stack_frames, train_kmeans, write_features,
    write_targets, Codebook, FeatureKind, KMeansConfig, KMEANS_CAP_SEC,
};
use maftlab_core::units::read_targets;
use maftlab_core::{Error, Result};

use crate::args::*;
use crate::plots;

pub fn dispatch(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Corpus(c) => corpus(c),
        Command::Segment(SegmentCmd::Run { manifest, vad_config, frame_ms, energy_threshold_db, min_silence_ms, out }) => {
            check_store(&g.store)?;
            let kv = layered(
                vad_config.as_deref(),
                &[
                    ("frame_ms", frame_ms.map(|v| v.to_string())),
                    ("energy_threshold_db", energy_threshold_db.map(|v| v.to_string())),
                    ("min_silence_ms", min_silence_ms.map(|v| v.to_string())),
                ],
            )?;
            let cfg = VadConfig::from_kv(&kv)?;
            let text = format!(
                "frame_ms={}\nenergy_threshold_db={}\nhangover_frames={}\nmin_silence_ms={}\n",
                cfg.frame_ms, cfg.energy_threshold_db, cfg.hangover_frames, cfg.min_silence_ms
            );
            log_config("segment", &text);
            let segments = run_segmenter(&read_manifest(manifest)?, &g.store, out, &cfg)?;
            write_manifest(&out.join("manifest.tsv"), &segments)?;
            write_atomic(&out.join("config.txt"), text.as_bytes())?;
            info!("{} segments kept", segments.len());
            Ok(())
        }
        Command::Sampler(c) => sampler(c, g.seed.unwrap_or(0)),
        Command::Units(c) => units(c, &g.store, g.seed),
        Command::Ssl(c) => ssl(c, &g.store, g.seed),
        Command::Heads(c) => heads(c, &g.store, g.seed),
        Command::Metrics(MetricsCmd::Score { task, pred, reference, african_set, confusion_threshold, out }) => {
            score(*task, pred, reference, &african(african_set.as_deref())?, *confusion_threshold, out)
        }
        Command::Experiments(ExperimentsCmd::Run { recipe, out }) => {
            let mut recipe = Recipe::read(recipe)?;
            if let Some(s) = g.seed {
                recipe.seed = s;
                recipe.text += &format!("# seed overridden on the command line: {s}\n");
            }
            for p in run_recipe(&recipe, out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Plots(PlotsCmd::Emit { input, out, svg }) => plots::emit(input, out, *svg),
    }
}

fn check_store(store: &Path) -> Result<()> {
    let meta = std::fs::metadata(store).map_err(|e| Error::Config(format!("store {}: {e}", store.display())))?;
    if !meta.is_dir() || meta.permissions().readonly() {
        return Err(Error::Config(format!("store {} must be a writable directory", store.display())));
    }
    Ok(())
}

/// Config file (if any) overlaid with the flags that were given.
fn layered(file: Option<&Path>, flags: &[(&str, Option<String>)]) -> Result<KeyValues> {
    let mut kv = match file {
        Some(p) => KeyValues::read(p)?,
        None => KeyValues::default(),
    };
    for (k, v) in flags {
        if let Some(v) = v {
            kv.set(k, v.clone());
        }
    }
    Ok(kv)
}

fn log_config(stage: &str, text: &str) {
    info!("{stage}: config_hash={}", config_hash(text));
}

fn african(path: Option<&Path>) -> Result<BTreeSet<String>> {
    match path {
        Some(p) => parse_language_set(&read_text(p)?, &p.display().to_string()),
        None => Ok(african_allowlist()),
    }
}

fn corpus(c: &CorpusCmd) -> Result<()> {
    match c {
        CorpusCmd::Ingest { input, lang_map, out } => {
            log_config("corpus ingest", &read_text(lang_map)?);
            let map = read_lang_map(lang_map)?;
            let manifest = ingest_directory(input, &map, out)?;
            write_manifest(&out.join("manifest.tsv"), &manifest)?;
            info!("ingested {} files into {}", manifest.len(), out.display());
            Ok(())
        }
        CorpusCmd::Stats { manifest, out } => write_atomic(out, compute_durations(&read_manifest(manifest)?).to_csv().as_bytes()),
    }
}

fn sampler(c: &SamplerCmd, seed: u64) -> Result<()> {
    match c {
        SamplerCmd::Plan { manifest, alpha, exclude, target_hours, out } => {
            let excluded = parse_language_set(&exclude.join(","), "--exclude")?;
            let durations = compute_durations(&read_manifest(manifest)?);
            let mut plan = compute_sampling_probs(&durations, *alpha, &excluded)?;
            if let Some(h) = target_hours {
                plan = plan.with_target(h * 3600.0);
            }
            plan.manifest = Some(manifest.clone());
            let text = plan.to_tsv();
            log_config("sampler plan", &text);
            write_atomic(out, text.as_bytes())
        }
        SamplerCmd::Carve { manifest, out_train, out_valid } => {
            let (train, valid) = carve_validation(&read_manifest(manifest)?, seed);
            info!("carved {} validation segments, {} remain for training", valid.len(), train.len());
            write_manifest(out_train, &train)?;
            write_manifest(out_valid, &valid)
        }
        SamplerCmd::Materialize { plan, manifest, target_hours, out } => {
            let plan = SamplingPlan::read(plan)?;
            let path = manifest
                .clone()
                .or_else(|| plan.manifest.clone())
                .ok_or_else(|| Error::Config("plan names no manifest; pass --manifest".into()))?;
            let target = target_hours.map_or(plan.target_total, |h| h * 3600.0);
            log_config("sampler materialize", &format!("{}seed={seed}\ntarget_total_sec={target}\n", plan.to_tsv()));
            let train = read_manifest(&path)?;
            let upsampled = build_upsampled_manifest(&train, &plan, target, seed)?;
            write_manifest(out, &upsampled)?;
            let realized = realized_plan(&plan, &upsampled, target);
            for r in &realized.rows {
                info!("{}: repetition {:.3}", r.lang, r.repetition);
            }
            Ok(())
        }
    }
}

fn units(c: &UnitsCmd, store: &Path, seed: Option<u64>) -> Result<()> {
    match c {
        UnitsCmd::Features { manifest, kind, teacher, out } => {
            check_store(store)?;
            let kind = FeatureKind::parse(kind)?;
            let teacher = teacher.as_deref().map(Checkpoint::load).transpose()?;
            if matches!(kind, FeatureKind::TeacherLayer(_)) && teacher.is_none() {
                return Err(Error::Config("teacher_layer features need --teacher".into()));
            }
            let feats = extract_manifest_features(&read_manifest(manifest)?, store, kind, teacher.as_ref())?;
            info!("{} segments, {} frames", feats.len(), feats.iter().map(|f| f.data.nrows()).sum::<usize>());
            write_features(out, &feats)
        }
        UnitsCmd::Kmeans { features, config, k, manifest, cap_sec, out } => {
            let kv = layered(config.as_deref(), &[("k", k.map(|v| v.to_string())), ("seed", seed.map(|v| v.to_string()))])?;
            kv.check_known(&KMeansConfig::KEYS)?;
            let cfg = KMeansConfig::from_kv(&kv)?;
            log_config("units kmeans", &cfg.to_kv_string());
            let mut feats = read_features(features)?;
            if let Some(m) = manifest {
                let cap = cap_sec.unwrap_or(KMEANS_CAP_SEC);
                let chosen: BTreeSet<String> =
                    sample_kmeans_corpus(&read_manifest(m)?, cap, derive_seed(cfg.seed, "kmeans-sample")).into_iter().map(|e| e.id).collect();
                feats.retain(|f| chosen.contains(&f.segment_id));
            }
            let kind = feats.first().map(|f| f.kind).ok_or_else(|| Error::Data("no feature frames to cluster".into()))?;
            let run = train_kmeans(stack_frames(&feats)?.view(), kind, &cfg)?;
            if let Some(last) = run.inertia_history.last() {
                info!("inertia {:.4} -> {:.4}", run.init_inertia, last);
            }
            run.codebook.save(out)
        }
        UnitsCmd::Assign { features, codebook, out } => {
            let cb = Codebook::load(codebook)?;
            write_targets(out, &assign_all(&read_features(features)?, &cb)?)
        }
    }
}

fn ssl(c: &SslCmd, store: &Path, seed: Option<u64>) -> Result<()> {
    match c {
        SslCmd::Train { config, manifest, targets, mode, codebook, init, steps, out } => {
            check_store(store)?;
            let path = |p: &Option<std::path::PathBuf>| p.as_ref().map(|p| p.display().to_string());
            let kv = layered(
                config.as_deref(),
                &[
                    ("mode", mode.clone()),
                    ("codebook", path(codebook)),
                    ("init_checkpoint", path(init)),
                    ("total_steps", steps.map(|v| v.to_string())),
                    ("seed", seed.map(|v| v.to_string())),
                ],
            )?;
            let cfg = TrainRunConfig::from_kv(&kv)?;
            log_config("ssl train", &cfg.to_kv_string());
            let cb_path = cfg.codebook.as_ref().ok_or_else(|| Error::Config("missing field `codebook`".into()))?;
            let codebook = Codebook::load(cb_path)?;
            let init = cfg.init_checkpoint.as_deref().map(Checkpoint::load).transpose()?;
            let m = read_manifest(manifest)?;
            let pick = |s: Split| m.iter().filter(|e| e.split == s).cloned().collect::<Vec<_>>();
            let data = SslData::load(&pick(Split::Train), &pick(Split::Valid), store, &read_targets(targets)?)?;
            let outcome = train_ssl(&cfg, &data, init.as_ref(), &codebook, Some(out))?;
            write_run(out, &cfg, &outcome)?;
            info!("selected step {} (validation loss {:.4})", outcome.selected_step, outcome.best.validation_loss);
            Ok(())
        }
        SslCmd::Select { history } => {
            let rows = parse_validation_history(&read_text(history)?, &history.display().to_string())?;
            let step = select_checkpoint(&rows).ok_or_else(|| Error::Data("history has no validation rows".into()))?;
            println!("{step}");
            Ok(())
        }
    }
}

fn finetune_config(a: &FinetuneArgs, task: Task, seed: Option<u64>) -> Result<FinetuneConfig> {
    let lrs = (!a.encoder_lrs.is_empty()).then(|| a.encoder_lrs.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
    let mut kv = layered(
        a.config.as_deref(),
        &[("encoder_lrs", lrs), ("epochs", a.epochs.map(|v| v.to_string())), ("seed", seed.map(|v| v.to_string()))],
    )?;
    kv.set_default("task", task.to_string());
    let cfg = FinetuneConfig::from_kv(&kv, Some(task))?;
    log_config(&format!("heads {task}"), &cfg.to_kv_string());
    Ok(cfg)
}

fn split_of(m: &[ManifestEntry], s: Split) -> Vec<ManifestEntry> {
    m.iter().filter(|e| e.split == s).cloned().collect()
}

fn heads(c: &HeadsCmd, store: &Path, seed: Option<u64>) -> Result<()> {
    check_store(store)?;
    match c {
        HeadsCmd::Slid(a) => {
            let cfg = finetune_config(a, Task::Slid, seed)?;
            let ck = Checkpoint::load(&a.encoder)?;
            let m = read_manifest(&a.data)?;
            let train_entries = cap_slid_data(&split_of(&m, Split::Train), cfg.slid_cap, derive_seed(cfg.seed, "slid-cap"));
            let train = load_labeled(&train_entries, store, None)?;
            let valid = load_labeled(&split_of(&m, Split::Valid), store, None)?;
            let test = load_labeled(&split_of(&m, Split::Test), store, None)?;
            let languages = language_set(&train);
            let data = TaskData { train: &train, valid: &valid, test: &test, languages: &languages, vocab: None };
            let grid = finetune_grid(&ck, &data, &cfg)?;
            let african = african(a.african_set.as_deref())?;
            write_grid(&a.out, &cfg, &grid, &african)?;
            print!("{}", grid.slid_report(&african)?.to_table());
            Ok(())
        }
        HeadsCmd::Asr { common: a, transcripts, vocab } => {
            let cfg = finetune_config(a, Task::Asr, seed)?;
            let ck = Checkpoint::load(&a.encoder)?;
            let m = read_manifest(&a.data)?;
            let t = read_transcripts(transcripts)?;
            let train_entries = sample_asr_hours(&split_of(&m, Split::Train), cfg.asr_hours, derive_seed(cfg.seed, "asr-hours"));
            let train = load_labeled(&train_entries, store, Some(&t))?;
            let valid = load_labeled(&split_of(&m, Split::Valid), store, Some(&t))?;
            let test = load_labeled(&split_of(&m, Split::Test), store, Some(&t))?;
            let v = if vocab.exists() {
                CharVocab::load(vocab)?
            } else {
                let v = vocab_for(train.iter().map(|u| u.text.as_str()), None, 1)?;
                v.save(vocab)?;
                info!("built a {}-symbol vocabulary at {}", v.size(), vocab.display());
                v
            };
            let languages = language_set(&train);
            let data = TaskData { train: &train, valid: &valid, test: &test, languages: &languages, vocab: Some(&v) };
            let grid = finetune_grid(&ck, &data, &cfg)?;
            let african = african(a.african_set.as_deref())?;
            write_grid(&a.out, &cfg, &grid, &african)?;
            print!("{}", grid.asr_report(&african)?.to_table());
            Ok(())
        }
        HeadsCmd::Decode { model, data, split, transcripts, vocab, out } => {
            let model = Checkpoint::load(model)?;
            let task: Task = model.meta.get("task").ok_or_else(|| Error::Config("model lacks task metadata".into()))?.parse()?;
            let split: Split = split.parse().map_err(|_| Error::Config(format!("unknown split `{split}`")))?;
            let t = transcripts.as_deref().map(read_transcripts).transpose()?;
            let utts = load_labeled(&split_of(&read_manifest(data)?, split), store, t.as_ref())?;
            let v = vocab.as_deref().map(CharVocab::load).transpose()?;
            let preds = predict_with(&model, &utts, v.as_ref())?;
            write_atomic(out, predictions_to_tsv(task, &preds).as_bytes())
        }
    }
}

/// Header-addressed TSV: one map per row, keyed by column name.
fn read_tsv(path: &Path) -> Result<Vec<BTreeMap<String, String>>> {
    let ctx = path.display().to_string();
    let text = read_text(path)?;
    let mut lines = text.lines().filter(|l| !l.is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::parse(&ctx, "missing header row"))?.split('\t').collect();
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != header.len() {
                return Err(Error::parse(&ctx, format!("line {}: expected {} fields", i + 2, header.len())));
            }
            Ok(header.iter().zip(f).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        })
        .collect()
}

fn column<'a>(row: &'a BTreeMap<String, String>, names: &[&str], ctx: &Path) -> Result<&'a str> {
    names
        .iter()
        .find_map(|n| row.get(*n))
        .map(String::as_str)
        .ok_or_else(|| Error::parse(ctx.display().to_string(), format!("needs a column named {}", names.join(" or "))))
}

fn score(task: TaskArg, pred: &Path, reference: &Path, african: &BTreeSet<String>, threshold: f64, out: &Path) -> Result<()> {
    let mut hyps = BTreeMap::new();
    for row in read_tsv(pred)? {
        let id = column(&row, &["utterance_id"], pred)?.to_string();
        let h = column(&row, &["predicted", "hypothesis"], pred)?.to_string();
        if hyps.insert(id.clone(), h).is_some() {
            return Err(Error::parse(pred.display().to_string(), format!("duplicate utterance `{id}`")));
        }
    }
    let refs = read_tsv(reference)?;
    let hyp_of = |id: &str| hyps.get(id).cloned().ok_or_else(|| Error::Data(format!("no prediction for utterance `{id}`")));
    let (jsonl, table) = match task {
        TaskArg::Slid => {
            let mut pairs = Vec::new();
            for row in &refs {
                let id = column(row, &["utterance_id"], reference)?;
                pairs.push((column(row, &["label", "lang"], reference)?.to_string(), hyp_of(id)?));
            }
            let languages: Vec<String> =
                pairs.iter().flat_map(|(l, p)| [l.clone(), p.clone()]).collect::<BTreeSet<_>>().into_iter().collect();
            let report = macro_f1(&pairs, &languages, african)?;
            let m = ConfusionMatrix::from_pairs(&pairs, &languages)?;
            write_atomic(&out.join("confusion.csv"), m.to_csv().as_bytes())?;
            let mut notes = String::from("from\tto\trate\treverse_rate\n");
            for c in confusion_analysis(&m, threshold, 10) {
                notes += &format!("{}\t{}\t{:.4}\t{:.4}\n", c.from, c.to, c.rate, c.reverse_rate);
            }
            write_atomic(&out.join("confusions.tsv"), notes.as_bytes())?;
            (report.to_jsonl(), report.to_table())
        }
        TaskArg::Asr => {
            let mut rows = Vec::new();
            for row in &refs {
                let id = column(row, &["utterance_id"], reference)?;
                let lang = column(row, &["lang"], reference)?.to_string();
                rows.push((lang, column(row, &["reference"], reference)?.to_string(), hyp_of(id)?));
            }
            let report = score_asr(&rows, african)?;
            (report.to_jsonl(), report.to_table())
        }
    };
    write_atomic(&out.join("report.jsonl"), jsonl.as_bytes())?;
    write_atomic(&out.join("report.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}
