use crate::manifest::Manifest;
use crate::util::{create_dir, parse_dims};
use crate::PhantomArgs;
use slicevol_core::io::{save_labels, save_volume};
use slicevol_core::phantom::{generate_cohort, PhantomParams};
use slicevol_core::Result;

pub fn run(args: &PhantomArgs) -> Result<()> {
    let dims = parse_dims(&args.dims)?;
    let mut params = PhantomParams::new(dims, args.seed).with_classes(args.classes);
    params.noise_sigma = args.noise;
    params.bias_amplitude = args.bias;
    params.deform_amplitude = args.deform;

    let cohort = generate_cohort(&params, args.count)?;
    create_dir(&args.out)?;
    for (i, (volume, labels)) in cohort.iter().enumerate() {
        save_volume(volume, args.out.join(format!("phantom_{i:04}.svol")))?;
        save_labels(labels, args.out.join(format!("phantom_{i:04}.slab")))?;
    }

    let mut m = Manifest::new("phantom");
    m.set("dims", &args.dims);
    m.set("count", args.count);
    m.set("seed", args.seed);
    m.set("classes", args.classes);
    m.set("noise", args.noise);
    m.set("bias", args.bias);
    m.set("deform", args.deform);
    m.set("out", args.out.display());
    m.write(&args.out)?;
    println!("wrote {} phantoms to {}", args.count, args.out.display());
    Ok(())
}
