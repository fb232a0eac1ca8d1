use crate::manifest::{out_parent, Manifest};
use crate::util::{fmt_f64, load_label_dir, load_volume_dir};
use crate::{SegmentArgs, SegmentTrainArgs};
use slicevol_core::io::{load_volume, save_labels};
use slicevol_core::ras::{load_segmenter, save_segmenter, segment as segment_volume, train_segmenter};
use slicevol_core::{Error, Result};

pub fn train(args: &SegmentTrainArgs) -> Result<()> {
    let volumes = load_volume_dir(&args.volumes)?;
    let labels = load_label_dir(&args.labels)?;
    if volumes.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} volumes but {} label maps; pairing by sorted name needs equal counts",
            volumes.len(),
            labels.len()
        )));
    }

    let mut m = Manifest::new("segment-train");
    m.set("volumes", args.volumes.display());
    m.set("labels", args.labels.display());
    m.set("classes", args.classes);
    m.set("smoothing", args.smoothing);
    m.set("out", args.out.display());
    for (path, _) in &volumes {
        m.input(path)?;
    }
    for (path, _) in &labels {
        m.input(path)?;
    }

    let training: Vec<_> = volumes
        .into_iter()
        .zip(labels)
        .map(|((_, v), (_, l))| (v, l))
        .collect();
    let seg = train_segmenter(&training, args.classes, args.smoothing)?;
    save_segmenter(&seg, &args.out)?;
    m.write(out_parent(&args.out))?;

    for k in 0..seg.num_classes() {
        println!(
            "class={k} mean={} sigma={} prior={}",
            fmt_f64(seg.class_mean(k)),
            fmt_f64(seg.class_sigma(k)),
            fmt_f64(seg.class_prior(k))
        );
    }
    println!("trained segmenter -> {}", args.out.display());
    Ok(())
}

pub fn segment(args: &SegmentArgs) -> Result<()> {
    let seg = load_segmenter(&args.segmenter)?;
    let v = load_volume(&args.input)?;

    let mut m = Manifest::new("segment");
    m.set("segmenter", args.segmenter.display());
    m.set("in", args.input.display());
    m.set("out", args.out.display());
    m.input(&args.segmenter)?;
    m.input(&args.input)?;

    let labels = segment_volume(&seg, &v)?;
    save_labels(&labels, &args.out)?;
    m.write(out_parent(&args.out))?;
    println!(
        "segmented {} into {} classes -> {}",
        args.input.display(),
        seg.num_classes(),
        args.out.display()
    );
    Ok(())
}
