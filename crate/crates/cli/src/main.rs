//! `vesselfit`: run the reconstruction pipeline or any single stage of it.
//!
//! Stages exchange artifacts through the output directory, so running them
//! one after another reproduces `vesselfit pipeline` byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vesselfit::cdm::write_checkpoint;
use vesselfit::contours::{align_chain, ContourSet};
use vesselfit::meshkit::{merge_branches, read_obj, write_obj, write_stl};
use vesselfit::pipeline::{
    compare_baseline, contours_from_masks, evaluate, fit_surface, load_volume, loss_csv, make_centerline, mask_name,
    param_study, read_surface, reference_surface, run_pipeline, segment_masks, slice_planes, train_cdm, write_json,
    write_surface, CdmTrainSpec, CenterlineSource, MetricParams, PipelineConfig, StageFailure,
};
use vesselfit::slicer::extract_slices;
use vesselfit::volume::{header_path_for, Dtype};
use vesselfit::{CenterlinePolyline, Error, PhantomShape, PhantomSpec, Volume};

#[derive(Parser)]
#[command(name = "vesselfit", version, about = "Tubular surface reconstruction from volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Pipeline config JSON (training spec JSON for `cdm train`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; stages also read earlier artifacts from here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use a preset phantom instead of a config file.
    #[arg(long)]
    shape: Option<PhantomShape>,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize the configured phantom.
    Phantom(Common),
    /// Produce `centerline.csv` from the configured source.
    Centerline(Common),
    /// Extract cross-sections along `centerline.csv`.
    Slice(Common),
    /// Segment every cross-section and trace its contour.
    Segment(Common),
    /// Align the traced contours.
    Contours(Common),
    /// Skin a NURBS surface through the aligned contours.
    Fit(Common),
    /// Tessellate `nurbs.json` and validate the mesh.
    Mesh(Common),
    /// Join a branch mesh onto a main mesh.
    Merge {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        main: PathBuf,
        #[arg(long)]
        branch: PathBuf,
    },
    /// Distances between a mesh and a reference surface.
    Metrics {
        #[command(flatten)]
        common: Common,
        /// Defaults to `mesh.obj` in the output directory.
        #[arg(long)]
        mesh: Option<PathBuf>,
        /// Reference mesh; defaults to the configured phantom's surface.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Centerline diffusion model.
    #[command(subcommand)]
    Cdm(CdmCommand),
    /// All stages end to end.
    Pipeline(Common),
    /// Reconstruction quality against the number of centerline points.
    Study(Common),
    /// NURBS reconstruction against marching cubes.
    Compare(Common),
}

#[derive(Subcommand)]
enum CdmCommand {
    Train(Common),
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

enum Failure {
    Config(String),
    Stage(StageFailure),
}

impl From<StageFailure> for Failure {
    fn from(f: StageFailure) -> Self {
        Failure::Stage(f)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn stage<T>(name: &'static str, r: vesselfit::Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(|error| Failure::Stage(StageFailure { stage: name, error }))
}

fn load_config(c: &Common) -> std::result::Result<PipelineConfig, Failure> {
    let mut cfg = match (&c.config, c.shape) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            let mut cfg = PipelineConfig::from_json(&text).map_err(|e| Failure::Config(e.to_string()))?;
            cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
            cfg
        }
        (None, Some(shape)) => PipelineConfig::for_phantom(PhantomSpec::preset(shape)),
        (None, None) => return Err(Failure::Config("give --config or --shape".into())),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn out_dir(c: &Common, cfg: Option<&PipelineConfig>) -> std::result::Result<PathBuf, Failure> {
    let dir = c.out.clone().or_else(|| cfg.map(|c| c.out_dir.clone())).unwrap_or_else(|| PathBuf::from("out"));
    stage("output", fs::create_dir_all(&dir).map_err(Error::from))?;
    Ok(dir)
}

/// The configured volume file, else a phantom volume already written to the
/// output directory, else a fresh rasterization.
fn stage_volume(cfg: &PipelineConfig) -> std::result::Result<Volume, Failure> {
    let stored = cfg.out_dir.join("volume.raw");
    let v = if cfg.volume.is_none() && stored.exists() {
        Volume::load_raw(&stored, &header_path_for(&stored))
    } else {
        load_volume(cfg)
    };
    stage("volume", v)
}

fn stored_centerline(dir: &Path) -> std::result::Result<CenterlinePolyline, Failure> {
    stage("centerline", CenterlinePolyline::read_csv(&dir.join("centerline.csv")))
}

fn phantom(c: &Common) -> Outcome {
    let cfg = load_config(c)?;
    let spec = cfg.phantom.as_ref().ok_or_else(|| Failure::Config("config has no phantom".into()))?;
    let dir = out_dir(c, Some(&cfg))?;
    let v = stage("volume", load_volume(&cfg))?;
    stage("volume", v.store_raw(&dir.join("volume.raw"), &dir.join("volume.json"), Dtype::F32Le))?;
    stage("volume", fs::write(dir.join("phantom.json"), spec.to_json() + "\n").map_err(Error::from))?;
    println!("phantom {}: {:?} voxels at {:?} mm", spec.shape.name(), v.dims(), v.spacing());
    Ok(())
}

fn centerline(c: &Common) -> Outcome {
    let cfg = load_config(c)?;
    let dir = out_dir(c, Some(&cfg))?;
    let v = stage_volume(&cfg)?;
    let line = stage("centerline", make_centerline(&cfg, &v))?;
    stage("centerline", line.write_csv(&dir.join("centerline.csv")))?;
    println!("centerline: {} points, {:.2} mm", line.len(), line.length());
    Ok(())
}

fn slice(c: &Common) -> Outcome {
    let cfg = load_config(c)?;
    let dir = out_dir(c, Some(&cfg))?;
    let v = stage_volume(&cfg)?;
    let line = stored_centerline(&dir)?;
    let planes = stage("slice", slice_planes(&line, &cfg.slice))?;
    let slices_dir = dir.join("slices");
    stage("slice", fs::create_dir_all(&slices_dir).map_err(Error::from))?;
    for (i, s) in extract_slices(&v, &planes).iter().enumerate() {
        stage("slice", s.write_pgm(&slices_dir.join(mask_name(i))))?;
    }
    stage("slice", write_json(&dir.join("planes.json"), &planes))?;
    println!("slice: {} planes of {}² pixels", planes.len(), cfg.slice.n_pix);
    Ok(())
}

fn segment(c: &Common) -> Outcome {
    let cfg = load_config(c)?;
    let dir = out_dir(c, Some(&cfg))?;
    let v = stage_volume(&cfg)?;
    let line = stored_centerline(&dir)?;
    let planes = stage("slice", slice_planes(&line, &cfg.slice))?;
    let masks = stage("segment", segment_masks(&v, &planes, &cfg.slice, cfg.masks_dir.as_deref()))?;
    let masks_dir = dir.join("masks");
    stage("segment", fs::create_dir_all(&masks_dir).map_err(Error::from))?;
    for (i, m) in masks.iter().enumerate() {
        stage("segment", m.write_pgm(&masks_dir.join(mask_name(i))))?;
    }
    let raw = stage("segment", contours_from_masks(&masks, &planes, cfg.m))?;
    let set = stage("segment", ContourSet::from_contours(&raw))?;
    stage("segment", set.write(&dir.join("contours_raw.json")))?;
    let areas: Vec<usize> = masks.iter().map(|m| m.area()).collect();
    println!("segment: {} masks, areas {:?} px", masks.len(), areas);
    Ok(())
}

fn contours(c: &Common) -> Outcome {
    let cfg = load_config(c)?;
    let dir = out_dir(c, Some(&cfg))?;
    let raw = stage("contours", ContourSet::read(&dir.join("contours_raw.json")).and_then(|s| s.contours()))?;
    let aligned = stage("contours", align_chain(&raw))?;
    stage("contours", ContourSet::from_contours(&aligned).and_then(|s| s.write(&dir.join("contours.json"))))?;
    println!("contours: {} stations of {} points aligned", aligned.len(), cfg.m);
    Ok(())
}

fn fit(c: &Common) -> Outcome {
    let cfg = load_config(c)?;
    let dir = out_dir(c, Some(&cfg))?;
    let aligned = stage("fit", ContourSet::read(&dir.join("contours.json")).and_then(|s| s.contours()))?;
    let (surface, info) = stage("fit", fit_surface(&aligned, &cfg.nurbs))?;
    stage("fit", write_surface(&dir.join("nurbs.json"), &surface))?;
    println!("fit: {info:?}");
    Ok(())
}

fn mesh(c: &Common) -> Outcome {
    let cfg = load_config(c)?;
    let dir = out_dir(c, Some(&cfg))?;
    let surface = stage("mesh", read_surface(&dir.join("nurbs.json")))?;
    let m = stage("mesh", surface.tessellate(cfg.nurbs.tess_u, cfg.nurbs.tess_v, cfg.caps))?;
    stage("mesh", write_obj(&m, &dir.join("mesh.obj")))?;
    stage("mesh", write_stl(&m, &dir.join("mesh.stl")))?;
    let t = m.validate();
    stage("mesh", write_json(&dir.join("topology.json"), &t))?;
    println!(
        "mesh: {} vertices, {} triangles, watertight {}, euler {}",
        t.vertex_count, t.triangle_count, t.watertight, t.euler_characteristic
    );
    Ok(())
}

fn merge(c: &Common, main: &Path, branch: &Path) -> Outcome {
    let dir = out_dir(c, None)?;
    let a = stage("merge", read_obj(main))?;
    let b = stage("merge", read_obj(branch))?;
    let (merged, report) = stage("merge", merge_branches(&a, &b))?;
    stage("merge", write_obj(&merged, &dir.join("merged.obj")))?;
    stage("merge", write_json(&dir.join("junction.json"), &report))?;
    println!(
        "merge: removed {} branch triangles, {} bridge triangles, longest bridge {:.3} mm",
        report.removed_triangles, report.bridge_triangles, report.max_bridge_length
    );
    Ok(())
}

fn metrics(c: &Common, mesh: Option<&Path>, reference: Option<&Path>) -> Outcome {
    let cfg = if c.config.is_some() || c.shape.is_some() { Some(load_config(c)?) } else { None };
    let dir = out_dir(c, cfg.as_ref())?;
    let mesh_path = mesh.map(Path::to_path_buf).unwrap_or_else(|| dir.join("mesh.obj"));
    let m = stage("metrics", read_obj(&mesh_path))?;
    let params = cfg.as_ref().map(|c| c.metrics.clone()).unwrap_or_default();
    let reference = match (reference, cfg.as_ref().and_then(|c| c.phantom.as_ref().map(|p| (p, c.caps)))) {
        (Some(path), _) => stage("metrics", read_obj(path))?,
        (None, Some((spec, caps))) => stage("metrics", reference_surface(spec, &params, caps))?,
        (None, None) => return Err(Failure::Config("metrics needs --reference or a phantom config".into())),
    };
    let seed = c.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
    let report = stage("metrics", evaluate(&m, &reference, &params, seed))?;
    stage("metrics", write_json(&dir.join("metrics.json"), &report))?;
    print_metrics("metrics", &report, &params);
    Ok(())
}

fn print_metrics(label: &str, r: &vesselfit::metrics::MetricReport, p: &MetricParams) {
    let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    println!(
        "{label}: CD {} mm, HD {} mm, EMD {} mm ({} samples per surface)",
        f(r.cd_mm),
        f(r.hd_mm),
        f(r.emd_mm),
        p.samples
    );
}

fn cdm_train(c: &Common) -> Outcome {
    let mut spec = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<CdmTrainSpec>(&text).map_err(|e| Failure::Config(e.to_string()))?
        }
        None => CdmTrainSpec::default(),
    };
    if let Some(seed) = c.seed {
        spec.train.seed = seed;
    }
    let dir = out_dir(c, None)?;
    let (header, outcome) = stage("train", train_cdm(&spec))?;
    stage("train", write_checkpoint(&dir.join("model.ckpt"), &header, &outcome.model))?;
    stage("train", fs::write(dir.join("loss.csv"), loss_csv(&outcome)).map_err(Error::from))?;
    println!(
        "cdm train: {} iterations, loss {:.4} -> {:.4} (block means)",
        outcome.losses.len(),
        outcome.smoothed.first().copied().unwrap_or(f64::NAN),
        outcome.smoothed.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cdm_sample(c: &Common, checkpoint: &Path) -> Outcome {
    let mut cfg = load_config(c)?;
    cfg.centerline = CenterlineSource::Cdm { checkpoint: checkpoint.to_path_buf() };
    let dir = out_dir(c, Some(&cfg))?;
    let v = stage_volume(&cfg)?;
    let line = stage("centerline", make_centerline(&cfg, &v))?;
    stage("centerline", line.write_csv(&dir.join("centerline.csv")))?;
    let inside = line.points().iter().filter(|p| v.sample(p).is_ok_and(|x| x >= cfg.slice.threshold)).count();
    println!("cdm sample: {} points, {inside} inside the lumen", line.len());
    Ok(())
}

fn pipeline(c: &Common) -> Outcome {
    let cfg = load_config(c)?;
    let report = run_pipeline(&cfg)?;
    let t = &report.topology;
    println!(
        "pipeline: k={} M={}, {} triangles, watertight {}, euler {}",
        report.k, report.m, t.triangle_count, t.watertight, t.euler_characteristic
    );
    if let Some(m) = &report.metrics {
        print_metrics("pipeline", m, &cfg.metrics);
    }
    if let Some(j) = &report.junction {
        println!("pipeline: junction bridged {} vertices, longest bridge {:.3} mm", j.bridged_vertices, j.max_bridge_length);
    }
    println!("artifacts in {}: {}", cfg.out_dir.display(), report.artifacts.join(", "));
    Ok(())
}

fn study(c: &Common) -> Outcome {
    let cfg = load_config(c)?;
    let dir = out_dir(c, Some(&cfg))?;
    let (rows, csv) = param_study(&cfg)?;
    stage("output", fs::write(dir.join("study.csv"), &csv).map_err(Error::from))?;
    for r in rows {
        println!("k={:>3}  CD {:.4}  HD {:.4}  EMD {:.4}", r.k, r.cd_mm, r.hd_mm, r.emd_mm);
    }
    Ok(())
}

fn compare(c: &Common) -> Outcome {
    let cfg = load_config(c)?;
    let dir = out_dir(c, Some(&cfg))?;
    let (report, nurbs, mc) = compare_baseline(&cfg)?;
    stage("output", write_obj(&nurbs, &dir.join("nurbs_mesh.obj")))?;
    stage("output", write_obj(&mc, &dir.join("mc_mesh.obj")))?;
    stage("output", write_json(&dir.join("compare.json"), &report))?;
    print_metrics("nurbs", &report.nurbs.metrics, &cfg.metrics);
    print_metrics("marching cubes", &report.marching_cubes.metrics, &cfg.metrics);
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match &cli.command {
        Command::Phantom(c) => phantom(c),
        Command::Centerline(c) => centerline(c),
        Command::Slice(c) => slice(c),
        Command::Segment(c) => segment(c),
        Command::Contours(c) => contours(c),
        Command::Fit(c) => fit(c),
        Command::Mesh(c) => mesh(c),
        Command::Merge { common, main, branch } => merge(common, main, branch),
        Command::Metrics { common, mesh, reference } => metrics(common, mesh.as_deref(), reference.as_deref()),
        Command::Cdm(CdmCommand::Train(c)) => cdm_train(c),
        Command::Cdm(CdmCommand::Sample { common, checkpoint }) => cdm_sample(common, checkpoint),
        Command::Pipeline(c) => pipeline(c),
        Command::Study(c) => study(c),
        Command::Compare(c) => compare(c),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("{}", serde_json::json!({ "stage": "config", "message": msg }));
            ExitCode::from(2)
        }
        Err(Failure::Stage(f)) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(3)
        }
    }
}
