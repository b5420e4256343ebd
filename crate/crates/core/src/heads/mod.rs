//! Supervised fine-tuning for language identification and speech recognition.

pub mod asr;
pub mod data;
pub mod finetune;
pub mod slid;
pub mod vocab;

pub use asr::{ctc_collapse, decode_ctc_greedy, AsrHead};
pub use data::{cap_slid_data, load_labeled, load_splits, sample_asr_hours, LabeledSplits, LabeledUtterance};
pub use finetune::{
    finetune_grid, finetune_run, language_set, predict_with, predictions_to_tsv, write_grid, FinetuneConfig, GridResult,
    Prediction, RunResult, SkipReport, TaskData, Task,
};
pub use slid::{attentive_pool, SlidHead};
pub use vocab::{build_char_vocab, normalize_text, CharVocab};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{check_gradients, Graph, Mat, ParamSet};
    use crate::rng::stage_rng;
    use crate::ssl::{micro_encoder_config, normalize_waveform, Checkpoint, Encoder};

    fn wave(frames: usize, seed: u64) -> Vec<f32> {
        (0..frames * 320).map(|i| ((i as f64 * 0.013 * (seed + 1) as f64).sin() * 0.3) as f32).collect()
    }

    fn model(head: impl FnOnce(&mut ParamSet, usize)) -> (ParamSet, Encoder) {
        let ck = Checkpoint::random(&micro_encoder_config(), 3, 4).unwrap();
        let mut params = ParamSet::new();
        for (n, v) in ck.params.iter().filter(|(n, _)| n.starts_with("enc.")) {
            params.add(n, v.clone());
        }
        head(&mut params, ck.encoder.model_dim);
        let enc = Encoder::bind(&ck.encoder, &params).unwrap();
        (params, enc)
    }

    #[test]
    fn slid_gradients_match_finite_differences() {
        let (mut params, enc) = model(|p, d| {
            SlidHead::init(p, d, 6, 3, &mut stage_rng(1, "t"));
        });
        let head = SlidHead::bind(&params).unwrap();
        let w = normalize_waveform(&wave(5, 1));
        let report = check_gradients(&mut params, 1e-5, 1e-7, &|g: &mut Graph| {
            let out = enc.forward(g, &w, None, None, None).unwrap();
            let logits = head.forward(g, out.output);
            g.cross_entropy(logits, &[(0, 2)], 1.0)
        });
        assert!(report.max_rel_error() < 1e-3, "{:?}", report.worst());
        assert!(report.fraction_below(1e-4) >= 0.95);
    }

    #[test]
    fn asr_gradients_match_finite_differences() {
        let (mut params, enc) = model(|p, d| {
            AsrHead::init(p, d, 6, 4, &mut stage_rng(2, "t"));
        });
        let head = AsrHead::bind(&params).unwrap();
        let w = normalize_waveform(&wave(6, 2));
        let report = check_gradients(&mut params, 1e-5, 1e-7, &|g: &mut Graph| {
            let out = enc.forward(g, &w, None, None, None).unwrap();
            let logits = head.forward(g, out.output);
            g.ctc_loss(logits, &[1, 3, 3], 3.0).unwrap()
        });
        assert!(report.max_rel_error() < 1e-3, "{:?}", report.worst());
        assert!(report.fraction_below(1e-4) >= 0.95);
    }

    #[test]
    fn pooling_weights_sum_to_one() {
        let (params, enc) = model(|p, d| {
            SlidHead::init(p, d, 6, 3, &mut stage_rng(1, "t"));
        });
        let head = SlidHead::bind(&params).unwrap();
        let mut g = Graph::new(&params);
        let out = enc.forward(&mut g, &wave(9, 3), None, None, None).unwrap();
        let (weights, _) = head.pool(&mut g, out.output);
        let w: &Mat = g.value(weights);
        assert!((w.sum() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn tiny_grid_is_deterministic_and_learns_languages() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = crate::synth::generate(&crate::synth::SynthConfig::three_languages(6, 2, 3, 5), dir.path()).unwrap();
        let splits = load_splits(&corpus.manifest, dir.path(), Some(&corpus.transcripts)).unwrap();
        let languages = language_set(&splits.train);
        let data = TaskData { train: &splits.train, valid: &splits.valid, test: &splits.test, languages: &languages, vocab: None };
        let ck = Checkpoint::random(&micro_encoder_config(), 3, 4).unwrap();
        let cfg = FinetuneConfig { epochs: 8, batch_size: 6, hidden: 16, encoder_lrs: vec![1e-3], ..FinetuneConfig::new(Task::Slid) };
        let a = finetune_grid(&ck, &data, &cfg).unwrap();
        let b = finetune_grid(&ck, &data, &cfg).unwrap();
        assert_eq!(a.runs.len(), 3);
        for (x, y) in a.runs.iter().zip(&b.runs) {
            assert_eq!(x.test_predictions, y.test_predictions);
            assert_eq!(x.model.to_bytes(), y.model.to_bytes());
        }
        let first = a.runs[0].epochs.first().unwrap().train_loss;
        let last = a.runs[0].epochs.last().unwrap().train_loss;
        assert!(last < first, "{first} -> {last}");
        let preds = predict_with(&a.runs[0].model, &splits.test, None).unwrap();
        assert_eq!(preds, a.runs[0].test_predictions);
        let out = dir.path().join("run");
        write_grid(&out, &cfg, &a, &Default::default()).unwrap();
        assert!(out.join("lr0.001_seed0/model.ckpt").exists());
        assert!(out.join("report.jsonl").exists());
    }
}
