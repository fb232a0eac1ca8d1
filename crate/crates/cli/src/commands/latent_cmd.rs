use crate::manifest::{out_parent, Manifest};
use crate::util::{create_dir, load_volume_dir, parse_axis};
use crate::{FitLatentArgs, SampleArgs};
use slicevol_core::codec::{encode_volume, load_codec};
use slicevol_core::io::save_volume;
use slicevol_core::latent::{
    fit_latent_model, load_latent_model, save_latent_model, synthesize_volume,
};
use slicevol_core::{Result, SplitMix64};

pub fn fit(args: &FitLatentArgs) -> Result<()> {
    let axis = parse_axis(&args.axis)?;
    let codec = load_codec(&args.codec)?;
    let volumes = load_volume_dir(&args.volumes)?;

    let mut m = Manifest::new("fit-latent");
    m.set("codec", args.codec.display());
    m.set("volumes", args.volumes.display());
    m.set("axis", &args.axis);
    m.set("rank-tol", args.rank_tol);
    m.set("out", args.out.display());
    m.input(&args.codec)?;

    let mut sequences = Vec::with_capacity(volumes.len());
    for (path, v) in &volumes {
        m.input(path)?;
        sequences.push(encode_volume(&codec, v, axis)?);
    }
    let model = fit_latent_model(&sequences, args.rank_tol)?;
    save_latent_model(&model, &args.out)?;
    m.write(out_parent(&args.out))?;

    for l in 0..model.latent_dim() {
        println!("dim={} rank={}", l, model.rank(l));
    }
    println!(
        "fitted latent model on {} sequences: T={} L={} ridge={:e} -> {}",
        sequences.len(),
        model.t_len(),
        model.latent_dim(),
        model.ridge_eps(),
        args.out.display()
    );
    Ok(())
}

pub fn sample(args: &SampleArgs) -> Result<()> {
    let axis = parse_axis(&args.axis)?;
    let model = load_latent_model(&args.latent)?;
    let codec = load_codec(&args.codec)?;
    create_dir(&args.out)?;

    let mut m = Manifest::new("sample");
    m.set("latent", args.latent.display());
    m.set("codec", args.codec.display());
    m.set("count", args.count);
    m.set("seed", args.seed);
    m.set("axis", &args.axis);
    m.set("out", args.out.display());
    m.input(&args.latent)?;
    m.input(&args.codec)?;

    for i in 0..args.count {
        let mut rng = SplitMix64::derive(args.seed, i as u64);
        let v = synthesize_volume(&model, &codec, &mut rng, axis, [1.0, 1.0, 1.0])?;
        save_volume(&v, args.out.join(format!("sample_{i:04}.svol")))?;
    }
    m.write(&args.out)?;
    println!("sampled {} volumes into {}", args.count, args.out.display());
    Ok(())
}
