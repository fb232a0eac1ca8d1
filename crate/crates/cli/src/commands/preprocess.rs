use crate::manifest::Manifest;
use crate::util::{create_dir, file_name, load_volume_dir, parse_dims};
use crate::PreprocessArgs;
use slicevol_core::io::save_volume;
use slicevol_core::Result;

pub fn run(args: &PreprocessArgs) -> Result<()> {
    let target = args.dims.as_deref().map(parse_dims).transpose()?;
    let volumes = load_volume_dir(&args.input)?;
    create_dir(&args.out)?;

    let mut m = Manifest::new("preprocess");
    m.set("in", args.input.display());
    m.set("lo", args.lo);
    m.set("hi", args.hi);
    if let Some(d) = &args.dims {
        m.set("dims", d);
    }
    m.set("out", args.out.display());

    for (path, v) in &volumes {
        m.input(path)?;
        let mut out = v.percentile_normalized(args.lo, args.hi)?;
        if let Some(dims) = target {
            out = out.resampled(dims)?;
        }
        save_volume(&out, args.out.join(file_name(path)))?;
    }
    m.write(&args.out)?;
    println!(
        "preprocessed {} volumes into {}",
        volumes.len(),
        args.out.display()
    );
    Ok(())
}
