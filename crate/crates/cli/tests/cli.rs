use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use maftlab_core::synth::{generate, SynthConfig};

fn maftlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maftlab")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = maftlab(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_manifest(dir: &Path) -> std::path::PathBuf {
    let text = "id\tpath\tlang\tduration_sec\tsource\tsplit\n\
                a1\taudio/a1.wav\teng\t7200\tx\ttrain\n\
                b1\taudio/b1.wav\tyor\t30\tx\ttrain\n\
                b2\taudio/b2.wav\tyor\t12.5\tx\ttrain\n\
                c1\taudio/c1.wav\thau\t600\tx\ttrain\n\
                d1\taudio/d1.wav\tswh\t1800\tx\ttrain\n";
    let p = dir.join("manifest.tsv");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn help_and_unknown_commands() {
    let out = maftlab(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("sampler"));
    let out = maftlab(&["frobnicate"]);
    assert_ne!(out.status.code(), Some(0));
    assert!(!out.stderr.is_empty());
}

#[test]
fn sampler_plan_sums_to_one_and_materializes_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path());
    let plan = dir.path().join("plan.tsv");
    ok(&["sampler", "plan", "--manifest", s(&m), "--alpha", "0.8", "--exclude", "eng", "--out", s(&plan)]);
    let text = fs::read_to_string(&plan).unwrap();
    let qs: Vec<f64> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("lang"))
        .filter_map(|l| l.split('\t').nth(3))
        .filter(|q| *q != "-")
        .map(|q| q.parse().unwrap())
        .collect();
    assert_eq!(qs.len(), 3);
    assert!((qs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    assert!(text.lines().any(|l| l.starts_with("eng\t") && l.contains("\t-\t-\t")));

    let (a, b) = (dir.path().join("a.tsv"), dir.path().join("b.tsv"));
    for out in [&a, &b] {
        ok(&["--seed", "5", "sampler", "materialize", "--plan", s(&plan), "--out", s(out)]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let upsampled = fs::read_to_string(&a).unwrap();
    assert_eq!(upsampled.lines().filter(|l| l.contains("\teng\t")).count(), 1);
    assert!(upsampled.lines().filter(|l| l.contains("\tyor\t")).count() > 2);
}

#[test]
fn validation_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path());
    let out = maftlab(&["sampler", "plan", "--manifest", s(&m), "--alpha", "-1", "--out", s(&dir.path().join("p"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let cfg = dir.path().join("vad.txt");
    fs::write(&cfg, "frame_ms=30\nthreshold=4\n").unwrap();
    let out = maftlab(&["--store", s(dir.path()), "segment", "run", "--manifest", s(&m), "--vad-config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("threshold"));

    let out = maftlab(&["--store", "/definitely/not/here", "units", "features", "--manifest", s(&m), "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path());
    let out = maftlab(&["--store", s(dir.path()), "units", "features", "--manifest", s(&m), "--out", s(&dir.path().join("f.bin"))]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn plots_pass_durations_through_and_reshape_reports() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path());
    let stats = dir.path().join("stats.csv");
    ok(&["corpus", "stats", "--manifest", s(&m), "--out", s(&stats)]);
    let from_manifest = dir.path().join("pm");
    let from_csv = dir.path().join("pc");
    ok(&["plots", "emit", "--input", s(&m), "--out", s(&from_manifest), "--svg"]);
    ok(&["plots", "emit", "--input", s(&stats), "--out", s(&from_csv)]);
    let expected = fs::read_to_string(&stats).unwrap();
    assert!(expected.starts_with("lang,total_hours\neng,2.0000\nswh,0.5000\nhau,0.1667\n"));
    assert_eq!(fs::read_to_string(from_manifest.join("durations.csv")).unwrap(), expected);
    assert_eq!(fs::read_to_string(from_csv.join("durations.csv")).unwrap(), expected);
    assert!(fs::read_to_string(from_manifest.join("durations.svg")).unwrap().starts_with("<svg"));

    let report = dir.path().join("report.csv");
    fs::write(&report, "model,budget_min,lang,wer,cer\nscratch,10,yor,0.5,0.25\nscratch,30,yor,0.4,0.2\n").unwrap();
    ok(&["plots", "emit", "--input", s(&report), "--out", s(&dir.path().join("lr")), "--svg"]);
    let long = fs::read_to_string(dir.path().join("lr/low_resource_long.csv")).unwrap();
    assert_eq!(long.lines().count(), 5);
    assert!(long.contains("yor,scratch,30,cer,0.2\n"));

    fs::write(&report, "model,budget_min,lang,wer,cer\n").unwrap();
    ok(&["plots", "emit", "--input", s(&report), "--out", s(&dir.path().join("empty"))]);
    assert_eq!(fs::read_to_string(dir.path().join("empty/low_resource_long.csv")).unwrap(), "lang,model,budget_min,metric,value\n");

    fs::write(&report, "what,is,this\n").unwrap();
    assert_eq!(maftlab(&["plots", "emit", "--input", s(&report), "--out", s(&dir.path().join("bad"))]).status.code(), Some(2));
}

#[test]
fn metrics_score_slid_and_asr() {
    let dir = tempfile::tempdir().unwrap();
    let refs = dir.path().join("ref.tsv");
    let preds = dir.path().join("pred.tsv");
    fs::write(&refs, "utterance_id\tlabel\nu1\tyor\nu2\tyor\nu3\thau\nu4\thau\n").unwrap();
    fs::write(&preds, "utterance_id\tpredicted\nu1\tyor\nu2\thau\nu3\thau\nu4\thau\n").unwrap();
    let out = dir.path().join("slid");
    ok(&["metrics", "score", "--task", "slid", "--pred", s(&preds), "--ref", s(&refs), "--out", s(&out)]);
    let jsonl = fs::read_to_string(out.join("report.jsonl")).unwrap();
    assert!(jsonl.contains(r#"{"f1":0.8,"lang":"hau"}"#), "{jsonl}");
    assert!(fs::read_to_string(out.join("confusion.csv")).unwrap().starts_with("true\\pred,hau,yor\n"));

    fs::write(&refs, "utterance_id\tlang\treference\nu1\tyor\ta b c\nu2\thau\tx y\n").unwrap();
    fs::write(&preds, "utterance_id\thypothesis\nu1\ta c\nu2\tx y\n").unwrap();
    let out = dir.path().join("asr");
    ok(&["metrics", "score", "--task", "asr", "--pred", s(&preds), "--ref", s(&refs), "--out", s(&out)]);
    let table = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(table.contains("yor"), "{table}");
    let jsonl = fs::read_to_string(out.join("report.jsonl")).unwrap();
    assert!(jsonl.contains(r#""lang":"yor""#) && jsonl.contains(r#""wer":0.3333333333333333"#), "{jsonl}");

    fs::write(&preds, "utterance_id\thypothesis\nu1\ta c\n").unwrap();
    let out = maftlab(&["metrics", "score", "--task", "asr", "--pred", s(&preds), "--ref", s(&refs), "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
}

const MICRO_SSL: &str = "mode=scratch\ntotal_steps=6\nwarmup_steps=2\nvalid_every=3\nmax_batch_tokens=64000\n\
encoder.conv_channels=4,8\nencoder.conv_strides=20,16\nencoder.conv_context=2\nencoder.num_blocks=1\n\
encoder.model_dim=8\nencoder.num_heads=2\nencoder.ffn_dim=16\nencoder.dropout=0\n";

#[test]
fn units_ssl_heads_pipeline_on_synthetic_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    generate(&SynthConfig::three_languages(4, 2, 2, 3), &store).unwrap();
    let st = s(&store);
    let m = store.join("manifest.tsv");
    let p = |n: &str| dir.path().join(n);

    ok(&["--store", st, "units", "features", "--manifest", s(&m), "--kind", "mfcc", "--out", s(&p("f.bin"))]);
    ok(&["--store", st, "--seed", "4", "units", "kmeans", "--features", s(&p("f.bin")), "--k", "6", "--out", s(&p("cb.bin"))]);
    ok(&["units", "assign", "--features", s(&p("f.bin")), "--codebook", s(&p("cb.bin")), "--out", s(&p("t.tsv"))]);
    let targets = fs::read_to_string(p("t.tsv")).unwrap();
    assert_eq!(targets.lines().count(), 24);

    fs::write(p("ssl.txt"), MICRO_SSL).unwrap();
    let train = |out: &str| {
        ok(&[
            "--store", st, "--seed", "9", "--threads", "1", "ssl", "train", "--config", s(&p("ssl.txt")), "--manifest", s(&m),
            "--targets", s(&p("t.tsv")), "--codebook", s(&p("cb.bin")), "--out", s(&p(out)),
        ])
    };
    train("ssl_a");
    train("ssl_b");
    for f in ["best.ckpt", "loss.csv", "config.txt"] {
        assert_eq!(fs::read(p("ssl_a").join(f)).unwrap(), fs::read(p("ssl_b").join(f)).unwrap(), "{f}");
    }
    assert!(fs::read_to_string(p("ssl_a/config.txt")).unwrap().contains("seed=9"));
    let sel = ok(&["ssl", "select", "--history", s(&p("ssl_a/loss.csv"))]);
    let step: u64 = String::from_utf8_lossy(&sel.stdout).trim().parse().unwrap();
    assert!(step <= 6 && step.is_multiple_of(3));

    let heads_out = p("slid");
    ok(&[
        "--store", st, "heads", "slid", "--encoder", s(&p("ssl_a/best.ckpt")), "--data", s(&m), "--encoder-lrs", "0.001", "--epochs", "1",
        "--out", s(&heads_out),
    ]);
    assert!(heads_out.join("report.txt").exists());
    let model = heads_out.join("lr0.001_seed0/model.ckpt");
    assert!(model.exists());
    let preds = p("decoded.tsv");
    ok(&["--store", st, "heads", "decode", "--model", s(&model), "--data", s(&m), "--out", s(&preds)]);
    ok(&["metrics", "score", "--task", "slid", "--pred", s(&preds), "--ref", s(&preds), "--out", s(&p("score"))]);

    let vocab = p("vocab.txt");
    ok(&[
        "--store", st, "heads", "asr", "--encoder", s(&p("ssl_a/best.ckpt")), "--data", s(&m), "--transcripts", s(&store.join("transcripts.tsv")),
        "--vocab", s(&vocab), "--encoder-lrs", "0.001", "--epochs", "1", "--out", s(&p("asr")),
    ]);
    assert!(vocab.exists());
    assert!(p("asr/lr0.001_seed0/predictions.tsv").exists());
}
