use crate::config::Config;
use crate::manifest::{out_parent, Manifest};
use crate::util::{create_dir, file_stem, load_volume_dir, parse_axis};
use crate::{EncodeArgs, TrainCodecArgs};
use slicevol_core::codec::{
    encode_volume, load_codec, save_codec, train_linear_codec, train_vae_codec, CodecModel,
    TrainConfig,
};
use slicevol_core::latent::LatentSequence;
use slicevol_core::{Error, Result, Slice, Volume};
use std::path::Path;

const LINEAR_KEYS: &[&str] = &["axis"];
const VAE_KEYS: &[&str] = &[
    "axis",
    "learning_rates",
    "epochs",
    "batch_size",
    "beta_kl",
    "hidden_width",
    "seed",
];

pub fn train(args: &TrainCodecArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(path) => Config::load(path)?,
        None => Config::empty(),
    };
    let volumes = load_volume_dir(&args.slices)?;

    let mut m = Manifest::new("train-codec");
    m.set("kind", &args.kind);
    m.set("latent", args.latent);
    m.set("slices", args.slices.display());
    if let Some(path) = &args.config {
        m.set("config", path.display());
        m.input(path)?;
    }
    m.set("out", args.out.display());
    for (path, _) in &volumes {
        m.input(path)?;
    }

    let axis = parse_axis(cfg.str_or("axis", "y"))?;
    m.set("axis", cfg.str_or("axis", "y"));
    let slices: Vec<Slice<f64>> = volumes
        .iter()
        .flat_map(|(_, v)| v.slices(axis))
        .map(|s| s.to_f64())
        .collect();

    let model = match args.kind.as_str() {
        "linear" => {
            cfg.check_keys(LINEAR_KEYS)?;
            CodecModel::Linear(train_linear_codec(&slices, args.latent)?)
        }
        "vae" => {
            cfg.check_keys(VAE_KEYS)?;
            let defaults = TrainConfig::default();
            let train_cfg = TrainConfig {
                learning_rates: cfg.f64_list_or("learning_rates", &defaults.learning_rates)?,
                epochs: cfg.usize_or("epochs", defaults.epochs)?,
                batch_size: cfg.usize_or("batch_size", defaults.batch_size)?,
                beta_kl: cfg.f64_or("beta_kl", defaults.beta_kl)?,
                hidden_width: cfg.usize_or("hidden_width", defaults.hidden_width)?,
                seed: cfg.u64_or("seed", defaults.seed)?,
                ..defaults
            };
            let (codec, report) = train_vae_codec(&slices, args.latent, &train_cfg)?;
            for entry in &report.entries {
                println!(
                    "lr={} final_val_recon_mse={} diverged={}",
                    entry.learning_rate, entry.final_val_recon_mse, entry.diverged
                );
            }
            println!("selected lr={}", report.selected_entry().learning_rate);
            CodecModel::Vae(codec)
        }
        other => {
            return Err(Error::validation(format!(
                "codec kind must be linear or vae, got {other:?}"
            )))
        }
    };

    save_codec(&model, &args.out)?;
    m.write(out_parent(&args.out))?;
    println!(
        "trained {} codec on {} slices: latent {}, slice {:?} -> {}",
        model.kind_name(),
        slices.len(),
        model.latent_dim(),
        model.slice_dims(),
        args.out.display()
    );
    Ok(())
}

pub fn encode(args: &EncodeArgs) -> Result<()> {
    let axis = parse_axis(&args.axis)?;
    let codec = load_codec(&args.codec)?;
    let volumes = load_volume_dir(&args.volumes)?;
    create_dir(&args.out)?;

    let mut m = Manifest::new("encode");
    m.set("codec", args.codec.display());
    m.set("volumes", args.volumes.display());
    m.set("axis", &args.axis);
    m.set("out", args.out.display());
    m.input(&args.codec)?;

    for (path, v) in &volumes {
        m.input(path)?;
        let seq = encode_volume(&codec, v, axis)?;
        let out = args.out.join(format!("{}.slat", file_stem(path)));
        save_latent_sequence(&seq, &out)?;
    }
    m.write(&args.out)?;
    println!(
        "encoded {} volumes into {}",
        volumes.len(),
        args.out.display()
    );
    Ok(())
}

/// Latent sequence file (`.slat`): header `SLAT 1`, a `T L` line, then T
/// rows of L values printed losslessly.
pub fn save_latent_sequence(seq: &LatentSequence<f64>, path: &Path) -> Result<()> {
    let mut text = String::from("SLAT 1\n");
    text.push_str(&format!("{} {}\n", seq.t_len(), seq.latent_dim()));
    for t in 0..seq.t_len() {
        let row: Vec<String> = seq.row(t).iter().map(|v| format!("{v:.16e}")).collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
pub fn load_latent_sequence(path: &Path) -> Result<LatentSequence<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("SLAT 1") {
        return Err(Error::format(format!(
            "{}: expected header 'SLAT 1'",
            path.display()
        )));
    }
    let shape = lines.next().unwrap_or("");
    let (t_len, latent_dim) = shape
        .split_once(' ')
        .and_then(|(t, l)| Some((t.trim().parse().ok()?, l.trim().parse().ok()?)))
        .ok_or_else(|| {
            Error::format(format!("{}: bad shape line {shape:?}", path.display()))
        })?;
    let mut values = Vec::with_capacity(t_len * latent_dim);
    for tok in lines.flat_map(str::split_whitespace) {
        values.push(tok.parse::<f64>().map_err(|_| {
            Error::format(format!("{}: {tok:?} is not a number", path.display()))
        })?);
    }
    if values.len() != t_len * latent_dim {
        return Err(Error::length(format!(
            "{}: expected {} values, found {}",
            path.display(),
            t_len * latent_dim,
            values.len()
        )));
    }
    LatentSequence::new(t_len, latent_dim, values)
}

/// Used by the pipeline, which trains from in-memory volumes.
pub fn train_model_on(
    volumes: &[Volume<f32>],
    kind: &str,
    latent: usize,
    axis: slicevol_core::Axis,
    vae_cfg: &TrainConfig,
) -> Result<CodecModel<f64>> {
    let slices: Vec<Slice<f64>> = volumes
        .iter()
        .flat_map(|v| v.slices(axis))
        .map(|s| s.to_f64())
        .collect();
    match kind {
        "linear" => Ok(CodecModel::Linear(train_linear_codec(&slices, latent)?)),
        "vae" => Ok(CodecModel::Vae(
            train_vae_codec(&slices, latent, vae_cfg)?.0,
        )),
        other => Err(Error::validation(format!(
            "codec kind must be linear or vae, got {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_sequence_file_roundtrips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.slat");
        let values = vec![0.1, -2.5e-7, 3.0, f64::MIN_POSITIVE, 1.0 / 3.0, -9.87e12];
        let seq = LatentSequence::new(3, 2, values).unwrap();
        save_latent_sequence(&seq, &path).unwrap();
        let back = load_latent_sequence(&path).unwrap();
        assert_eq!(back.t_len(), 3);
        assert_eq!(back.latent_dim(), 2);
        for t in 0..3 {
            assert_eq!(back.row(t), seq.row(t));
        }
    }

    #[test]
    fn truncated_latent_sequence_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.slat");
        std::fs::write(&path, "SLAT 1\n2 2\n1.0 2.0\n3.0\n").unwrap();
        assert!(load_latent_sequence(&path).is_err());
        std::fs::write(&path, "SLOT 1\n1 1\n1.0\n").unwrap();
        assert!(load_latent_sequence(&path).is_err());
    }
}
