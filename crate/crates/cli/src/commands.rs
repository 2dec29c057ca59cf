use std::fs::File;
use std::io::BufWriter;
use std::time::Instant;

use gslm::rasterizer::{render_image, write_pfm, write_png};
use gslm::residuals::{energy, psnr, ssim_score};
use gslm::scene::{
    load_scene, make_synthetic_dataset, perturb, save_scene, DatasetSpec, PerturbScales,
};
use gslm::solver::{
    adam_fit, lm_fit, two_stage_fit, write_convergence_csv, FitConfig, FitResult, GaussianProblem,
    LeastSquaresProblem,
};
use gslm::{Error, Result};

use crate::dataset::{init_path, load_dataset, write_dataset, write_json, Manifest};
use crate::report::{EvalReport, Metrics, RunReport, Timings, ViewMetrics};
use crate::{EvalArgs, FitArgs, GenerateArgs, Mode, RenderArgs};

fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let spec = DatasetSpec {
        seed: args.seed,
        gaussian_count: args.gaussians,
        camera_count: args.cameras,
        width: args.width,
        height: args.height,
        sh_degree: args.sh_degree,
    };
    let data = make_synthetic_dataset(&spec)?;
    let init = perturb(
        &data.truth,
        args.seed.wrapping_add(1),
        args.perturb,
        &PerturbScales::default(),
    )?;
    let manifest = Manifest {
        seed: args.seed,
        spec,
        perturb: args.perturb,
        images: (0..args.cameras)
            .map(|v| crate::dataset::image_name(v, "pfm"))
            .collect(),
    };
    write_dataset(&args.out, &data, &init, &manifest)?;
    println!("wrote {} views to {}", args.cameras, args.out.display());
    Ok(())
}

fn fit_config(args: &FitArgs) -> Result<FitConfig> {
    let mut config = match &args.config {
        Some(path) => FitConfig::load(path)?,
        None => FitConfig::default(),
    };
    if let Some(seed) = args.seed {
        config = config.with_seed(seed);
    }
    if let Some(k) = args.stage1_iters {
        config.stage1_iters = k;
    }
    if let Some(n) = args.adam_iters {
        config.adam.iterations = n;
    }
    if let Some(n) = args.lm_iters {
        config.lm.iterations = n;
    }
    if let Some(n) = args.pcg_iters {
        config.lm.pcg.max_iters = n;
    }
    if let Some(n) = args.batch_size {
        config.lm.schedule.batch_size = n;
    }
    if let Some(n) = args.num_batches {
        config.lm.schedule.num_batches = n;
    }
    if let Some(l) = args.loss {
        config.loss.mode = l.into();
    }
    config.validate()?;
    Ok(config)
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let config = fit_config(args)?;
    let dataset = load_dataset(&args.dataset)?;
    config.lm.validate(dataset.len())?;
    let init = load_scene(
        args.init
            .clone()
            .unwrap_or_else(|| init_path(&args.dataset)),
    )?;

    let start = Instant::now();
    let result = match args.mode {
        Mode::Adam => adam_fit(&init, &dataset, &config.loss, &config.render, &config.adam)?,
        Mode::TwoStage => two_stage_fit(&init, &dataset, &config)?,
        Mode::Lm => {
            let problem = GaussianProblem::new(&init, &dataset, config.loss, config.render)?
                .with_cache_budget(config.cache_budget);
            let out = lm_fit(&problem, &problem.initial_params(), &config.lm)?;
            FitResult {
                scene: problem.scene_from(&out.x)?,
                history: out.history,
                timings: out.timings,
            }
        }
    };
    let total = start.elapsed().as_secs_f64();

    let problem = GaussianProblem::new(&result.scene, &dataset, config.loss, config.render)?;
    let x = problem.initial_params();
    let all: Vec<usize> = (0..dataset.len()).collect();
    let quality = problem.quality(&x)?;
    let final_metrics = Metrics {
        energy: problem.energy(&x, &all)?,
        psnr: quality.psnr,
        ssim: quality.ssim,
    };

    std::fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    save_scene(args.out.join("scene.json"), &result.scene)?;
    let csv_path = args.out.join("convergence.csv");
    let file = File::create(&csv_path).map_err(io_err(&csv_path))?;
    write_convergence_csv(BufWriter::new(file), &result.history)?;
    let mode = match args.mode {
        Mode::Adam => "adam",
        Mode::Lm => "lm",
        Mode::TwoStage => "two-stage",
    };
    let report = RunReport {
        mode: mode.into(),
        config,
        history: result.history,
        final_metrics,
        timings: Timings {
            phases: result.timings,
            total,
        },
    };
    write_json(&args.out.join("report.json"), &report)?;
    println!(
        "{mode}: energy {:.6} psnr {:.3} ssim {:.4} in {:.2}s",
        final_metrics.energy, final_metrics.psnr, final_metrics.ssim, total
    );
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let config = match &args.config {
        Some(path) => FitConfig::load(path)?,
        None => FitConfig::default(),
    };
    let scene = load_scene(&args.scene)?;
    let dataset = load_dataset(&args.dataset)?;
    let per_image = dataset
        .cameras
        .iter()
        .zip(&dataset.images)
        .enumerate()
        .map(|(view, (camera, gt))| {
            let image = render_image(&scene, camera, &config.render)?;
            Ok(ViewMetrics {
                view,
                energy: energy(&image, gt, &config.loss)?,
                psnr: psnr(&image, gt)?,
                ssim: ssim_score(&image, gt, &config.loss.window)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_image.len() as f64;
    let mean = Metrics {
        energy: per_image.iter().map(|m| m.energy).sum::<f64>() / n,
        psnr: per_image.iter().map(|m| m.psnr).sum::<f64>() / n,
        ssim: per_image.iter().map(|m| m.ssim).sum::<f64>() / n,
    };
    let report = EvalReport { per_image, mean };
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("metrics serialize")
    );
    Ok(())
}

pub fn render(args: &RenderArgs) -> Result<()> {
    let scene = load_scene(&args.scene)?;
    let dataset = load_dataset(&args.dataset)?;
    let camera = dataset.cameras.get(args.camera).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "camera {} out of range (dataset has {})",
            args.camera,
            dataset.len()
        ))
    })?;
    let image = render_image(&scene, camera, &Default::default())?;
    match args.out.extension().and_then(|e| e.to_str()) {
        Some("pfm") => write_pfm(&args.out, &image),
        Some("png") => write_png(&args.out, &image),
        _ => Err(Error::InvalidArgument(format!(
            "{}: output must end in .pfm or .png",
            args.out.display()
        ))),
    }
}
