pub mod codec_cmd;
pub mod latent_cmd;
pub mod metrics_cmd;
pub mod phantom;
pub mod pipeline;
pub mod preprocess;
pub mod ras_cmd;
pub mod reg_cmd;
pub mod seg_cmd;
