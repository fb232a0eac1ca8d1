use crate::manifest::Manifest;
use crate::util::{file_name, fmt_f64, load_label_dir, load_volume_dir, stderr_of};
use crate::{DiceArgs, MmdArgs, MsssimArgs};
use slicevol_core::metrics::{
    dice as dice_overlap, mmd2_batch, ms_ssim_diversity, Bandwidth, MmdConfig, MmdKernel,
    MsSsimConfig,
};
use slicevol_core::{Error, Result, Volume};
use std::path::Path;

fn summary(name: &str, values: &[f64]) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    println!(
        "metric={name} mean={} stderr={}",
        fmt_f64(mean),
        fmt_f64(stderr_of(values))
    );
}

pub fn mmd(args: &MmdArgs) -> Result<()> {
    let kernel = match args.kernel.as_str() {
        "dot" => MmdKernel::Dot,
        "rbf" => {
            let bw = match args.bandwidth.as_str() {
                "median" => Bandwidth::MedianHeuristic,
                s => {
                    let sigma: f64 = s.parse().map_err(|_| {
                        Error::validation(format!(
                            "bandwidth must be 'median' or a number, got {s:?}"
                        ))
                    })?;
                    Bandwidth::Fixed(sigma)
                }
            };
            MmdKernel::Rbf(bw)
        }
        other => {
            return Err(Error::validation(format!(
                "kernel must be dot or rbf, got {other:?}"
            )))
        }
    };
    let cfg = MmdConfig {
        kernel,
        num_tests: args.tests,
        batch_size: args.batch,
        seed: args.seed,
    };

    let mut m = Manifest::new("metrics mmd");
    m.set("generated", args.generated.display());
    m.set("real", args.real.display());
    m.set("kernel", &args.kernel);
    m.set("bandwidth", &args.bandwidth);
    m.set("tests", args.tests);
    m.set("batch", args.batch);
    m.set("seed", args.seed);

    let gen = load_set(&args.generated, &mut m)?;
    let real = load_set(&args.real, &mut m)?;
    let (_, per_test) = mmd2_batch(&gen, &real, &cfg)?;
    m.write(Path::new("."))?;

    for (i, v) in per_test.iter().enumerate() {
        println!("test={i} mmd2={}", fmt_f64(*v));
    }
    summary("mmd", &per_test);
    Ok(())
}

pub fn msssim(args: &MsssimArgs) -> Result<()> {
    let cfg = MsSsimConfig {
        window_size: args.window,
        window_sigma: args.sigma,
        dynamic_range: args.range,
        num_pairs: args.pairs,
        seed: args.seed,
        ..MsSsimConfig::default()
    };

    let mut m = Manifest::new("metrics msssim");
    m.set("in", args.input.display());
    m.set("pairs", args.pairs);
    m.set("seed", args.seed);
    m.set("window", args.window);
    m.set("sigma", args.sigma);
    m.set("range", args.range);

    let samples = load_set(&args.input, &mut m)?;
    let (_, per_pair) = ms_ssim_diversity(&samples, &cfg)?;
    m.write(Path::new("."))?;

    for (i, v) in per_pair.iter().enumerate() {
        println!("pair={i} msssim={}", fmt_f64(*v));
    }
    summary("msssim", &per_pair);
    Ok(())
}

pub fn dice(args: &DiceArgs) -> Result<()> {
    let mut m = Manifest::new("metrics dice");
    m.set("a", args.a.display());
    m.set("b", args.b.display());

    let a = load_label_dir(&args.a)?;
    let b = load_label_dir(&args.b)?;
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "directories hold {} and {} label maps; pairing by sorted name needs equal counts",
            a.len(),
            b.len()
        )));
    }
    for (path, _) in a.iter().chain(b.iter()) {
        m.input(path)?;
    }

    let mut per_pair = Vec::with_capacity(a.len());
    for ((pa, la), (pb, lb)) in a.iter().zip(&b) {
        let score = dice_overlap(la, lb)?;
        println!(
            "pair a={} b={} dice={}",
            file_name(pa),
            file_name(pb),
            fmt_f64(score.mean)
        );
        per_pair.push(score.mean);
    }
    m.write(Path::new("."))?;
    summary("dice", &per_pair);
    Ok(())
}

fn load_set(dir: &Path, m: &mut Manifest) -> Result<Vec<Volume<f32>>> {
    let loaded = load_volume_dir(dir)?;
    let mut out = Vec::with_capacity(loaded.len());
    for (path, v) in loaded {
        m.input(&path)?;
        out.push(v);
    }
    Ok(out)
}
