use crate::config::Config;
use crate::manifest::{out_parent, Manifest};
use crate::util::{fmt_f64, parse_dims};
use crate::{RegisterArgs, WarpArgs};
use slicevol_core::io::{load_labels, load_volume, save_labels, save_volume};
use slicevol_core::registration::{
    load_transform, register_affine, save_transform, warp_labels, warp_volume, Objective,
    RegConfig,
};
use slicevol_core::{Error, Result};
use std::path::Path;

const REG_KEYS: &[&str] = &[
    "pyramid_levels",
    "iters_per_level",
    "step_size",
    "beta1",
    "beta2",
    "objective",
    "convergence_tol",
];

/// Shared by `register`, `ras` and the pipeline so one config file drives
/// them all.
pub fn reg_config_from(cfg: &Config) -> Result<RegConfig> {
    cfg.check_keys(REG_KEYS)?;
    let d = RegConfig::default();
    let objective = match cfg.str_or("objective", "ncc") {
        "ncc" => Objective::Ncc,
        "ssd" => Objective::Ssd,
        other => {
            return Err(Error::validation(format!(
                "objective must be ncc or ssd, got {other:?}"
            )))
        }
    };
    Ok(RegConfig {
        pyramid_levels: cfg.usize_or("pyramid_levels", d.pyramid_levels)?,
        iters_per_level: cfg.usize_or("iters_per_level", d.iters_per_level)?,
        step_size: cfg.f64_or("step_size", d.step_size)?,
        beta1: cfg.f64_or("beta1", d.beta1)?,
        beta2: cfg.f64_or("beta2", d.beta2)?,
        objective,
        convergence_tol: cfg.f64_or("convergence_tol", d.convergence_tol)?,
    })
}

pub fn load_reg_config(path: Option<&Path>) -> Result<RegConfig> {
    match path {
        Some(p) => reg_config_from(&Config::load(p)?),
        None => Ok(RegConfig::default()),
    }
}

pub fn register(args: &RegisterArgs) -> Result<()> {
    let cfg = load_reg_config(args.reg_config.as_deref())?;
    let moving = load_volume(&args.moving)?;
    let fixed = load_volume(&args.fixed)?;

    let mut m = Manifest::new("register");
    m.set("moving", args.moving.display());
    m.set("fixed", args.fixed.display());
    if let Some(path) = &args.reg_config {
        m.set("reg-config", path.display());
        m.input(path)?;
    }
    m.set("out", args.out.display());
    m.input(&args.moving)?;
    m.input(&args.fixed)?;

    let (t, objective) = register_affine(&moving, &fixed, &cfg)?;
    save_transform(&t, &args.out)?;
    m.write(out_parent(&args.out))?;
    println!("objective={}", fmt_f64(objective));
    println!("registered {} onto {} -> {}", args.moving.display(), args.fixed.display(), args.out.display());
    Ok(())
}

pub fn warp(args: &WarpArgs) -> Result<()> {
    let t = load_transform(&args.transform)?;
    let ext = args
        .input
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("");

    let mut m = Manifest::new("warp");
    m.set("in", args.input.display());
    m.set("transform", args.transform.display());
    if let Some(dims) = &args.dims {
        m.set("dims", dims);
    }
    m.set("out", args.out.display());
    m.input(&args.input)?;
    m.input(&args.transform)?;

    match ext {
        "svol" => {
            let v = load_volume(&args.input)?;
            let out_dims = match &args.dims {
                Some(s) => parse_dims(s)?,
                None => v.dims(),
            };
            save_volume(&warp_volume(&v, &t, out_dims)?, &args.out)?;
        }
        "slab" => {
            let l = load_labels(&args.input)?;
            let out_dims = match &args.dims {
                Some(s) => parse_dims(s)?,
                None => l.dims(),
            };
            save_labels(&warp_labels(&l, &t, out_dims)?, &args.out)?;
        }
        other => {
            return Err(Error::validation(format!(
                "input must end in .svol or .slab, got {other:?}"
            )))
        }
    }
    m.write(out_parent(&args.out))?;
    println!("warped {} -> {}", args.input.display(), args.out.display());
    Ok(())
}
