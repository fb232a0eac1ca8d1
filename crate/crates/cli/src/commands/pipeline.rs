use crate::commands::codec_cmd::train_model_on;
use crate::config::Config;
use crate::manifest::Manifest;
use crate::util::{create_dir, fmt_f64, parse_axis, parse_dims, stderr_of};
use crate::PipelineArgs;
use slicevol_core::codec::{save_codec, TrainConfig};
use slicevol_core::codec::encode_volume;
use slicevol_core::io::{save_labels, save_volume};
use slicevol_core::latent::{fit_latent_model, save_latent_model, synthesize_volume};
use slicevol_core::metrics::{mmd2_batch, ms_ssim_diversity, MmdConfig, MmdKernel, MsSsimConfig};
use slicevol_core::phantom::{generate_cohort, PhantomParams};
use slicevol_core::ras::{ras_score, save_segmenter, train_segmenter, RasConfig, ReferenceMode};
use slicevol_core::registration::{Objective, RegConfig};
use slicevol_core::{Error, Result, SplitMix64, Volume};
use std::path::PathBuf;

const PIPELINE_KEYS: &[&str] = &[
    "out",
    "dims",
    "count",
    "classes",
    "phantom_seed",
    "noise_sigma",
    "bias_amplitude",
    "deform_amplitude",
    "normalize_lo",
    "normalize_hi",
    "codec",
    "latent",
    "axis",
    "rank_tol",
    "vae_learning_rates",
    "vae_epochs",
    "vae_batch_size",
    "vae_beta_kl",
    "vae_hidden_width",
    "vae_seed",
    "sample_count",
    "sample_seed",
    "mmd_tests",
    "mmd_batch",
    "mmd_seed",
    "msssim_pairs",
    "msssim_seed",
    "smoothing",
    "ras_pairs",
    "ras_seed",
    "reg_levels",
    "reg_iters",
    "reg_step",
    "reg_objective",
    "reg_tol",
];

fn stage<V>(name: &str, r: Result<V>) -> Result<V> {
    if r.is_err() {
        eprintln!("pipeline stage failed: {name}");
    }
    r
}

pub fn run(args: &PipelineArgs) -> Result<()> {
    let cfg = Config::load(&args.config)?;
    cfg.check_keys(PIPELINE_KEYS)?;

    let out: PathBuf = match (&args.out, cfg.get("out")) {
        (Some(flag), _) => flag.clone(),
        (None, Some(key)) => PathBuf::from(key),
        (None, None) => {
            return Err(Error::validation(
                "no output directory: pass --out or set `out` in the config",
            ))
        }
    };

    let dims = parse_dims(cfg.str_or("dims", "16,16,16"))?;
    let count = cfg.usize_or("count", 30)?;
    let classes = cfg.u16_or("classes", 3)?;
    let phantom_seed = cfg.u64_or("phantom_seed", 0)?;
    let noise_sigma = cfg.f64_or("noise_sigma", 0.02)?;
    let bias_amplitude = cfg.f64_or("bias_amplitude", 0.1)?;
    let deform_amplitude = cfg.f64_or("deform_amplitude", 0.08)?;
    let normalize_lo = cfg.f64_or("normalize_lo", 1.0)?;
    let normalize_hi = cfg.f64_or("normalize_hi", 99.0)?;
    let codec_kind = cfg.str_or("codec", "linear").to_string();
    let latent = cfg.usize_or("latent", 8)?;
    let axis_name = cfg.str_or("axis", "y").to_string();
    let axis = parse_axis(&axis_name)?;
    let rank_tol = cfg.f64_or("rank_tol", 1e-10)?;
    let vae_defaults = TrainConfig::default();
    let vae_cfg = TrainConfig {
        learning_rates: cfg.f64_list_or("vae_learning_rates", &vae_defaults.learning_rates)?,
        epochs: cfg.usize_or("vae_epochs", vae_defaults.epochs)?,
        batch_size: cfg.usize_or("vae_batch_size", vae_defaults.batch_size)?,
        beta_kl: cfg.f64_or("vae_beta_kl", vae_defaults.beta_kl)?,
        hidden_width: cfg.usize_or("vae_hidden_width", vae_defaults.hidden_width)?,
        seed: cfg.u64_or("vae_seed", vae_defaults.seed)?,
        ..vae_defaults
    };
    let sample_count = cfg.usize_or("sample_count", 20)?;
    let sample_seed = cfg.u64_or("sample_seed", 1)?;
    let mmd_tests = cfg.usize_or("mmd_tests", 50)?;
    let mmd_batch = cfg.usize_or("mmd_batch", 8)?;
    let mmd_seed = cfg.u64_or("mmd_seed", 0)?;
    let msssim_pairs = cfg.usize_or("msssim_pairs", 50)?;
    let msssim_seed = cfg.u64_or("msssim_seed", 0)?;
    let smoothing = cfg.usize_or("smoothing", 3)?;
    let ras_pairs = cfg.str_or("ras_pairs", "k:50").to_string();
    let ras_seed = cfg.u64_or("ras_seed", 0)?;
    let reg_defaults = RegConfig::default();
    let reg = RegConfig {
        pyramid_levels: cfg.usize_or("reg_levels", reg_defaults.pyramid_levels)?,
        iters_per_level: cfg.usize_or("reg_iters", reg_defaults.iters_per_level)?,
        step_size: cfg.f64_or("reg_step", reg_defaults.step_size)?,
        objective: match cfg.str_or("reg_objective", "ncc") {
            "ncc" => Objective::Ncc,
            "ssd" => Objective::Ssd,
            other => {
                return Err(Error::validation(format!(
                    "reg_objective must be ncc or ssd, got {other:?}"
                )))
            }
        },
        convergence_tol: cfg.f64_or("reg_tol", reg_defaults.convergence_tol)?,
        ..reg_defaults
    };
    let pairing = super::ras_cmd::parse_pairing(&ras_pairs)?;

    let mut m = Manifest::new("pipeline");
    m.set("config", args.config.display());
    m.set("out", out.display());
    m.set("dims", cfg.str_or("dims", "16,16,16"));
    m.set("count", count);
    m.set("classes", classes);
    m.set("phantom_seed", phantom_seed);
    m.set("noise_sigma", noise_sigma);
    m.set("bias_amplitude", bias_amplitude);
    m.set("deform_amplitude", deform_amplitude);
    m.set("normalize_lo", normalize_lo);
    m.set("normalize_hi", normalize_hi);
    m.set("codec", &codec_kind);
    m.set("latent", latent);
    m.set("axis", &axis_name);
    m.set("rank_tol", rank_tol);
    if codec_kind == "vae" {
        m.set(
            "vae_learning_rates",
            vae_cfg
                .learning_rates
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        m.set("vae_epochs", vae_cfg.epochs);
        m.set("vae_batch_size", vae_cfg.batch_size);
        m.set("vae_beta_kl", vae_cfg.beta_kl);
        m.set("vae_hidden_width", vae_cfg.hidden_width);
        m.set("vae_seed", vae_cfg.seed);
    }
    m.set("sample_count", sample_count);
    m.set("sample_seed", sample_seed);
    m.set("mmd_tests", mmd_tests);
    m.set("mmd_batch", mmd_batch);
    m.set("mmd_seed", mmd_seed);
    m.set("msssim_pairs", msssim_pairs);
    m.set("msssim_seed", msssim_seed);
    m.set("smoothing", smoothing);
    m.set("ras_pairs", &ras_pairs);
    m.set("ras_seed", ras_seed);
    m.set("reg_levels", reg.pyramid_levels);
    m.set("reg_iters", reg.iters_per_level);
    m.set("reg_step", reg.step_size);
    m.set(
        "reg_objective",
        match reg.objective {
            Objective::Ncc => "ncc",
            Objective::Ssd => "ssd",
        },
    );
    m.set("reg_tol", reg.convergence_tol);
    m.input(&args.config)?;

    create_dir(&out)?;
    let phantoms_dir = out.join("phantoms");
    let preprocessed_dir = out.join("preprocessed");
    let samples_dir = out.join("samples");
    create_dir(&phantoms_dir)?;
    create_dir(&preprocessed_dir)?;
    create_dir(&samples_dir)?;

    let mut params = PhantomParams::new(dims, phantom_seed).with_classes(classes);
    params.noise_sigma = noise_sigma;
    params.bias_amplitude = bias_amplitude;
    params.deform_amplitude = deform_amplitude;
    let cohort = stage("phantom", generate_cohort(&params, count))?;
    for (i, (v, l)) in cohort.iter().enumerate() {
        save_volume(v, phantoms_dir.join(format!("phantom_{i:04}.svol")))?;
        save_labels(l, phantoms_dir.join(format!("phantom_{i:04}.slab")))?;
    }

    let mut preprocessed = Vec::with_capacity(count);
    for (i, (v, _)) in cohort.iter().enumerate() {
        let p = stage("preprocess", v.percentile_normalized(normalize_lo, normalize_hi))?;
        save_volume(&p, preprocessed_dir.join(format!("phantom_{i:04}.svol")))?;
        preprocessed.push(p);
    }

    let codec = stage(
        "train-codec",
        train_model_on(&preprocessed, &codec_kind, latent, axis, &vae_cfg),
    )?;
    save_codec(&codec, out.join("codec.scdc"))?;

    let model = stage(
        "fit-latent",
        (|| {
            let mut sequences = Vec::with_capacity(preprocessed.len());
            for v in &preprocessed {
                sequences.push(encode_volume(&codec, v, axis)?);
            }
            fit_latent_model(&sequences, rank_tol)
        })(),
    )?;
    save_latent_model(&model, out.join("model.slgm"))?;

    let mut samples: Vec<Volume<f32>> = Vec::with_capacity(sample_count);
    for i in 0..sample_count {
        let mut rng = SplitMix64::derive(sample_seed, i as u64);
        let v = stage(
            "sample",
            synthesize_volume(&model, &codec, &mut rng, axis, [1.0, 1.0, 1.0]),
        )?;
        save_volume(&v, samples_dir.join(format!("sample_{i:04}.svol")))?;
        samples.push(v);
    }

    let mmd_cfg = MmdConfig {
        kernel: MmdKernel::Dot,
        num_tests: mmd_tests,
        batch_size: mmd_batch,
        seed: mmd_seed,
    };
    let (mmd_mean, mmd_per_test) = stage("metrics mmd", mmd2_batch(&samples, &preprocessed, &mmd_cfg))?;

    let ms_cfg = MsSsimConfig {
        num_pairs: msssim_pairs,
        seed: msssim_seed,
        ..MsSsimConfig::default()
    };
    let (ms_mean, ms_per_pair) = stage("metrics msssim", ms_ssim_diversity(&samples, &ms_cfg))?;

    let training: Vec<_> = preprocessed
        .iter()
        .cloned()
        .zip(cohort.iter().map(|(_, l)| l.clone()))
        .collect();
    let seg = stage(
        "segment-train",
        train_segmenter(&training, classes as usize + 1, smoothing),
    )?;
    save_segmenter(&seg, out.join("segmenter.sseg"))?;

    let real_pairs: Vec<_> = training.into_iter().map(|(v, l)| (v, Some(l))).collect();
    let ras_cfg = RasConfig {
        pairing,
        reference_mode: ReferenceMode::GroundTruth,
        seed: ras_seed,
    };
    let report = stage("ras", ras_score(&samples, &real_pairs, &seg, &reg, &ras_cfg))?;

    let mut ras_text = String::new();
    for rec in &report.pairs {
        let dice = rec.dice.as_ref().map_or(f64::NAN, |d| d.mean);
        let obj = rec.objective.unwrap_or(f64::NAN);
        let status = if rec.ok() { "ok" } else { "fail" };
        ras_text.push_str(&format!(
            "pair g=sample_{:04}.svol r=phantom_{:04}.svol dice={} obj={} status={status}\n",
            rec.generated,
            rec.real,
            fmt_f64(dice),
            fmt_f64(obj)
        ));
    }
    ras_text.push_str(&format!(
        "ras={} pairs={} failed={}\n",
        fmt_f64(report.ras),
        report.pairs.len(),
        report.failed
    ));
    let ras_path = out.join("ras_report.txt");
    std::fs::write(&ras_path, ras_text).map_err(|e| Error::io(&ras_path, e))?;

    let summary = format!(
        "phantoms=phantoms count={count} dims={d0},{d1},{d2} classes={classes}\n\
         preprocessed=preprocessed lo={normalize_lo} hi={normalize_hi}\n\
         codec=codec.scdc kind={codec_kind} latent={latent} axis={axis_name}\n\
         model=model.slgm\n\
         samples=samples count={sample_count}\n\
         segmenter=segmenter.sseg\n\
         ras_report=ras_report.txt\n\
         metric=mmd mean={} stderr={}\n\
         metric=msssim mean={} stderr={}\n\
         ras={} pairs={} failed={}\n",
        fmt_f64(mmd_mean),
        fmt_f64(stderr_of(&mmd_per_test)),
        fmt_f64(ms_mean),
        fmt_f64(stderr_of(&ms_per_pair)),
        fmt_f64(report.ras),
        report.pairs.len(),
        report.failed,
        d0 = dims[0],
        d1 = dims[1],
        d2 = dims[2],
    );
    let summary_path = out.join("summary.txt");
    std::fs::write(&summary_path, &summary).map_err(|e| Error::io(&summary_path, e))?;
    m.write(&out)?;
    print!("{summary}");
    Ok(())
}
