//! HuBERT-style masked-prediction pretraining on a small encoder.

pub mod checkpoint;
pub mod encoder;
pub mod mask;
pub mod train;

pub use checkpoint::Checkpoint;
pub use encoder::{normalize_waveform, Encoder, EncoderConfig, EncoderOutput};
pub use mask::{masked_prediction_loss, sample_mask, MaskSpec};
pub use train::{
    check_mode_contract, history_to_csv, masked_loss_var, parse_validation_history, select_checkpoint, train_ssl, validation_loss,
    write_run, HistoryRow, Mode, SslData, SslUtterance, TrainOutcome, TrainRunConfig,
};

/// Encoder small enough for finite-difference checks.
pub fn micro_encoder_config() -> EncoderConfig {
    EncoderConfig {
        conv_channels: vec![4, 6],
        conv_strides: vec![20, 16],
        conv_context: 2,
        num_blocks: 2,
        model_dim: 8,
        num_heads: 2,
        ffn_dim: 12,
        dropout: 0.0,
    }
}
