use crate::commands::reg_cmd::load_reg_config;
use crate::manifest::{out_parent, Manifest};
use crate::util::{file_name, fmt_f64, load_label_dir, load_volume_dir};
use crate::RasArgs;
use slicevol_core::ras::{load_segmenter, ras_score, Pairing, RasConfig, ReferenceMode};
use slicevol_core::{Error, Result};

pub fn parse_pairing(s: &str) -> Result<Pairing> {
    if s == "all" {
        return Ok(Pairing::AllPairs);
    }
    if let Some(n) = s.strip_prefix("k:") {
        let k: usize = n
            .parse()
            .map_err(|_| Error::validation(format!("pair count {n:?} is not a number")))?;
        if k == 0 {
            return Err(Error::validation("k-random pairing needs at least 1 pair"));
        }
        return Ok(Pairing::KRandom(k));
    }
    Err(Error::validation(format!(
        "pairs must be 'all' or 'k:N', got {s:?}"
    )))
}

pub fn run(args: &RasArgs) -> Result<()> {
    let pairing = parse_pairing(&args.pairs)?;
    let seg = load_segmenter(&args.segmenter)?;
    let reg = load_reg_config(args.reg_config.as_deref())?;
    let generated = load_volume_dir(&args.generated)?;
    let real = load_volume_dir(&args.real)?;

    let mut m = Manifest::new("ras");
    m.set("generated", args.generated.display());
    m.set("real", args.real.display());
    if let Some(path) = &args.labels {
        m.set("labels", path.display());
    }
    m.set("segmenter", args.segmenter.display());
    if let Some(path) = &args.reg_config {
        m.set("reg-config", path.display());
        m.input(path)?;
    }
    m.set("pairs", &args.pairs);
    m.set("seed", args.seed);
    m.set("out", args.out.display());
    m.input(&args.segmenter)?;
    for (path, _) in generated.iter().chain(real.iter()) {
        m.input(path)?;
    }

    let labels = match &args.labels {
        Some(dir) => {
            let labels = load_label_dir(dir)?;
            if labels.len() != real.len() {
                return Err(Error::validation(format!(
                    "{} real volumes but {} label maps; pairing by sorted name needs equal counts",
                    real.len(),
                    labels.len()
                )));
            }
            for (path, _) in &labels {
                m.input(path)?;
            }
            Some(labels)
        }
        None => None,
    };
    let reference_mode = if labels.is_some() {
        ReferenceMode::GroundTruth
    } else {
        ReferenceMode::Predicted
    };
    let real_pairs: Vec<_> = match labels {
        Some(labels) => real
            .iter()
            .zip(labels)
            .map(|((_, v), (_, l))| (v.clone(), Some(l)))
            .collect(),
        None => real.iter().map(|(_, v)| (v.clone(), None)).collect(),
    };
    let gen_vols: Vec<_> = generated.iter().map(|(_, v)| v.clone()).collect();

    let cfg = RasConfig {
        pairing,
        reference_mode,
        seed: args.seed,
    };
    let report = ras_score(&gen_vols, &real_pairs, &seg, &reg, &cfg)?;

    let mut text = String::new();
    for rec in &report.pairs {
        let dice = rec.dice.as_ref().map_or(f64::NAN, |d| d.mean);
        let obj = rec.objective.unwrap_or(f64::NAN);
        let status = if rec.ok() { "ok" } else { "fail" };
        text.push_str(&format!(
            "pair g={} r={} dice={} obj={} status={status}\n",
            file_name(&generated[rec.generated].0),
            file_name(&real[rec.real].0),
            fmt_f64(dice),
            fmt_f64(obj)
        ));
    }
    let tail = format!(
        "ras={} pairs={} failed={}",
        fmt_f64(report.ras),
        report.pairs.len(),
        report.failed
    );
    text.push_str(&tail);
    text.push('\n');
    std::fs::write(&args.out, text).map_err(|e| Error::io(&args.out, e))?;
    m.write(out_parent(&args.out))?;
    println!("{tail}");
    Ok(())
}
