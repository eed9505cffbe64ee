//! End-to-end reconstruction: volume → centerline → slices → contours →
//! NURBS surface → mesh, with evaluation against phantom ground truth, the
//! centerline-count study and the marching-cubes comparison.
//!
//! Each stage function consumes exactly what its on-disk artifact stores, so
//! running stages one at a time reproduces [`run_pipeline`] byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cdm::{read_checkpoint, sample, train, CheckpointHeader, Dataset, HandcraftedEncoder, Mlp, NoiseSchedule, TrainConfig, TrainOutcome};
use crate::contours::{align_chain, ContourSet};
use crate::fmt::sig;
use crate::lumenseg::{default_prompt, resample_contour, segment_slice, trace_boundary, Mask};
use crate::meshkit::{marching_cubes, merge_branches, read_obj, write_obj, write_stl, JunctionReport};
use crate::metrics::{MetricReport, VoxelMask};
use crate::nurbs::{skin_surface, SkinInfo};
use crate::slicer::{extract_slices, lift_to_3d};
use crate::volume::{header_path_for, Dtype};
use crate::{
    CenterlinePolyline, Contour, Error, NurbsSurface, PhantomSpec, Result, SlicePlane, TopologyReport, TriMesh,
    Volume,
};

/// Where the centerline comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CenterlineSource {
    /// Uniform arc-length samples of the phantom's own centerline.
    Analytic,
    Csv { path: PathBuf },
    /// Reverse diffusion with a trained checkpoint, seeded by the config seed.
    Cdm { checkpoint: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SliceParams {
    pub half_extent_mm: f64,
    pub n_pix: usize,
    pub threshold: f64,
}

impl Default for SliceParams {
    fn default() -> Self {
        Self { half_extent_mm: 20.0, n_pix: 64, threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NurbsParams {
    pub degree_u: usize,
    pub degree_v: usize,
    pub tess_u: usize,
    pub tess_v: usize,
}

impl Default for NurbsParams {
    fn default() -> Self {
        Self { degree_u: 3, degree_v: 3, tess_u: 128, tess_v: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricParams {
    /// Area-uniform samples per mesh for CD and HD.
    pub samples: usize,
    pub reference_u: usize,
    pub reference_v: usize,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self { samples: 20_000, reference_u: 256, reference_v: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Raw payload path; the JSON header sits next to it.
    pub volume: Option<PathBuf>,
    pub phantom: Option<PhantomSpec>,
    pub centerline: CenterlineSource,
    pub k: usize,
    pub m: usize,
    /// Smooth and resample the centerline to `k` points even when it already
    /// has `k`.
    pub smooth: bool,
    pub slice: SliceParams,
    pub nurbs: NurbsParams,
    pub caps: bool,
    pub metrics: MetricParams,
    /// Directory of per-station PGM masks used instead of the segmenter.
    pub masks_dir: Option<PathBuf>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub k_list: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            volume: None,
            phantom: None,
            centerline: CenterlineSource::Analytic,
            k: 16,
            m: 32,
            smooth: false,
            slice: SliceParams::default(),
            nurbs: NurbsParams::default(),
            caps: true,
            metrics: MetricParams::default(),
            masks_dir: None,
            seed: 0,
            out_dir: PathBuf::from("out"),
            k_list: vec![8, 12, 16, 20, 25],
        }
    }
}

impl PipelineConfig {
    /// Config for a phantom with the analytic centerline and slice extent
    /// scaled to four lumen radii.
    pub fn for_phantom(spec: PhantomSpec) -> Self {
        let slice = SliceParams { half_extent_mm: 4.0 * spec.base_radius, ..SliceParams::default() };
        Self { phantom: Some(spec), slice, ..Self::default() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.volume, &self.phantom) {
            (Some(_), Some(_)) => return Err(Error::Invalid("give either a volume path or a phantom, not both".into())),
            (None, None) => return Err(Error::Invalid("config needs a volume path or a phantom".into())),
            (None, Some(p)) => p.validate()?,
            _ => {}
        }
        if self.centerline == CenterlineSource::Analytic && self.phantom.is_none() {
            return Err(Error::Invalid("analytic centerline needs a phantom".into()));
        }
        if self.k < 4 || self.m < 8 {
            return Err(Error::Invalid(format!("need k >= 4 and M >= 8, got k={} M={}", self.k, self.m)));
        }
        if self.nurbs.tess_u < 16 || self.nurbs.tess_v < 16 {
            return Err(Error::Invalid("tessellation needs at least 16 samples per direction".into()));
        }
        Ok(())
    }

    /// Resolves relative paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.volume.as_mut() {
            fix(p);
        }
        if let Some(p) = self.masks_dir.as_mut() {
            fix(p);
        }
        match &mut self.centerline {
            CenterlineSource::Csv { path } => fix(path),
            CenterlineSource::Cdm { checkpoint } => fix(checkpoint),
            CenterlineSource::Analytic => {}
        }
    }
}

/// A failed stage and its cause.
#[derive(Debug)]
pub struct StageFailure {
    pub stage: &'static str,
    pub error: Error,
}

impl std::fmt::Display for StageFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {} failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageFailure {}

impl StageFailure {
    pub fn to_json(&self) -> String {
        serde_json::json!({ "stage": self.stage, "message": self.error.to_string() }).to_string()
    }
}

pub type StageResult<T> = std::result::Result<T, StageFailure>;

trait InStage<T> {
    fn stage(self, stage: &'static str) -> StageResult<T>;
}

impl<T> InStage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> StageResult<T> {
        self.map_err(|error| StageFailure { stage, error })
    }
}

/// The phantom volume as stored on disk (32-bit payload), or the volume read
/// from the configured path.
pub fn load_volume(cfg: &PipelineConfig) -> Result<Volume> {
    match (&cfg.volume, &cfg.phantom) {
        (Some(path), _) => Volume::load_raw(path, &header_path_for(path)),
        (None, Some(spec)) => Ok(spec.rasterize()?.map(|x| x as f32 as f64)),
        (None, None) => Err(Error::Invalid("no volume source".into())),
    }
}

/// Centerline as it reads back from its CSV artifact.
pub fn make_centerline(cfg: &PipelineConfig, v: &Volume) -> Result<CenterlinePolyline> {
    let raw = match &cfg.centerline {
        CenterlineSource::Analytic => {
            let spec = cfg.phantom.as_ref().ok_or_else(|| Error::Invalid("analytic centerline needs a phantom".into()))?;
            spec.analytic_centerline(cfg.k)?
        }
        CenterlineSource::Csv { path } => CenterlinePolyline::read_csv(path)?,
        CenterlineSource::Cdm { checkpoint } => {
            let (header, model) = read_checkpoint(checkpoint)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let ci = sample(v, &HandcraftedEncoder, &model, &header.schedule, header.k, true, &mut rng)?;
            ci.decode(&v.bounds())?
        }
    };
    let c = if cfg.smooth || raw.len() != cfg.k { raw.smooth_resample(cfg.k)? } else { raw };
    CenterlinePolyline::from_csv(&c.to_csv())
}

pub fn slice_planes(c: &CenterlinePolyline, p: &SliceParams) -> Result<Vec<SlicePlane>> {
    c.frames()?.into_iter().map(|f| SlicePlane::new(f, p.half_extent_mm, p.n_pix)).collect()
}

/// Mask per station: from `masks_dir/station_NNN.pgm` when given, otherwise
/// the prompt-seeded threshold segmenter.
pub fn segment_masks(v: &Volume, planes: &[SlicePlane], p: &SliceParams, masks_dir: Option<&Path>) -> Result<Vec<Mask>> {
    match masks_dir {
        Some(dir) => planes
            .iter()
            .enumerate()
            .map(|(i, pl)| Mask::read_pgm(&dir.join(mask_name(i)), default_prompt(pl.n_pix)))
            .collect(),
        None => extract_slices(v, planes)
            .iter()
            .map(|s| segment_slice(s, default_prompt(s.plane.n_pix), p.threshold))
            .collect(),
    }
}

pub fn mask_name(station: usize) -> String {
    format!("station_{station:03}.pgm")
}

/// World-space contours with `m` points each, before alignment.
pub fn contours_from_masks(masks: &[Mask], planes: &[SlicePlane], m: usize) -> Result<Vec<Contour>> {
    masks
        .iter()
        .zip(planes)
        .map(|(mask, plane)| lift_to_3d(&resample_contour(&trace_boundary(mask, plane)?, m)?, plane))
        .collect()
}

pub fn fit_surface(contours: &[Contour], p: &NurbsParams) -> Result<(NurbsSurface, SkinInfo)> {
    skin_surface(contours, p.degree_u, p.degree_v)
}

pub fn reference_surface(spec: &PhantomSpec, p: &MetricParams, caps: bool) -> Result<TriMesh> {
    spec.analytic_surface(p.reference_u, p.reference_v, caps)
}

pub fn evaluate(mesh: &TriMesh, reference: &TriMesh, p: &MetricParams, seed: u64) -> Result<MetricReport> {
    MetricReport::for_meshes(mesh, reference, p.samples, seed)
}

/// Outputs of a pipeline run, also written as `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub k: usize,
    pub m: usize,
    pub artifacts: Vec<String>,
    pub topology: TopologyReport,
    pub metrics: Option<MetricReport>,
    pub junction: Option<JunctionReport>,
}

/// In-memory results of the reconstruction stages.
pub struct Reconstruction {
    pub volume: Volume,
    pub centerline: CenterlinePolyline,
    pub contours: Vec<Contour>,
    pub surface: NurbsSurface,
    pub mesh: TriMesh,
}

/// Runs every stage without writing files.
pub fn reconstruct(cfg: &PipelineConfig) -> StageResult<Reconstruction> {
    let volume = load_volume(cfg).stage("volume")?;
    let centerline = make_centerline(cfg, &volume).stage("centerline")?;
    let planes = slice_planes(&centerline, &cfg.slice).stage("slice")?;
    let masks = segment_masks(&volume, &planes, &cfg.slice, cfg.masks_dir.as_deref()).stage("segment")?;
    let raw = contours_from_masks(&masks, &planes, cfg.m).stage("segment")?;
    let raw = ContourSet::from_contours(&raw).and_then(|s| s.contours()).stage("segment")?;
    let contours = align_chain(&raw).stage("contours")?;
    let (surface, _) = fit_surface(&contours, &cfg.nurbs).stage("fit")?;
    let mesh = surface.tessellate(cfg.nurbs.tess_u, cfg.nurbs.tess_v, cfg.caps).stage("mesh")?;
    Ok(Reconstruction { volume, centerline, contours, surface, mesh })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn write_topology(path: &Path, t: &TopologyReport) -> Result<()> {
    write_json(path, t)
}

pub fn write_metrics(path: &Path, m: &MetricReport) -> Result<()> {
    write_json(path, m)
}

pub fn write_surface(path: &Path, s: &NurbsSurface) -> Result<()> {
    write_json(path, &s.to_json())
}

pub fn read_surface(path: &Path) -> Result<NurbsSurface> {
    NurbsSurface::from_json(&serde_json::from_str(&crate::error::read_text(path)?)?)
}

/// Runs all stages and writes their artifacts into `cfg.out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> StageResult<PipelineReport> {
    cfg.validate().stage("config")?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(Error::from).stage("output")?;
    let r = reconstruct(cfg)?;
    let mut artifacts = Vec::new();
    let mut record = |name: &str| artifacts.push(name.to_string());

    if cfg.phantom.is_some() {
        r.volume.store_raw(&out.join("volume.raw"), &out.join("volume.json"), Dtype::F32Le).stage("volume")?;
        record("volume.raw");
        record("volume.json");
    }
    r.centerline.write_csv(&out.join("centerline.csv")).stage("centerline")?;
    record("centerline.csv");
    ContourSet::from_contours(&r.contours).and_then(|s| s.write(&out.join("contours.json"))).stage("contours")?;
    record("contours.json");
    write_surface(&out.join("nurbs.json"), &r.surface).stage("fit")?;
    record("nurbs.json");
    write_obj(&r.mesh, &out.join("mesh.obj")).stage("mesh")?;
    write_stl(&r.mesh, &out.join("mesh.stl")).stage("mesh")?;
    record("mesh.obj");
    record("mesh.stl");
    let topology = r.mesh.validate();
    write_topology(&out.join("topology.json"), &topology).stage("mesh")?;
    record("topology.json");

    let mut metrics = None;
    let mut junction = None;
    if let Some(spec) = &cfg.phantom {
        let reference = reference_surface(spec, &cfg.metrics, cfg.caps).stage("metrics")?;
        // measured on the mesh as stored, so a separate metrics stage agrees exactly
        let stored = read_obj(&out.join("mesh.obj")).stage("metrics")?;
        let m = evaluate(&stored, &reference, &cfg.metrics, cfg.seed).stage("metrics")?;
        write_metrics(&out.join("metrics.json"), &m).stage("metrics")?;
        record("metrics.json");
        metrics = Some(m);
        if spec.branch.is_some() && cfg.centerline == CenterlineSource::Analytic {
            let (branch, merged, report) = reconstruct_branch(cfg, spec, &r).stage("merge")?;
            write_obj(&branch, &out.join("branch_mesh.obj")).stage("merge")?;
            write_obj(&merged, &out.join("merged.obj")).stage("merge")?;
            record("branch_mesh.obj");
            write_json(&out.join("junction.json"), &report).stage("merge")?;
            record("merged.obj");
            record("junction.json");
            junction = Some(report);
        }
    }
    let report = PipelineReport { k: cfg.k, m: cfg.m, artifacts, topology, metrics, junction };
    write_json(&out.join("report.json"), &report).stage("output")?;
    Ok(report)
}

/// Branch centerline stations whose slice planes no longer meet the main
/// lumen: the branch axis must be farther from the main axis than the main
/// tube's oblique cross-section plus the branch radius and wall ramp.
pub fn branch_clear_start(spec: &PhantomSpec) -> Option<f64> {
    let b = spec.branch.as_ref()?;
    let a = b.angle_deg.to_radians();
    let reach = spec.base_radius / a.cos() + b.radius + 2.0 * spec.wall_softness();
    Some(reach / a.tan())
}

/// Reconstructs the phantom's side branch from clear stations, extends its
/// first contour back to the junction point, and merges it into the main
/// mesh. Returns the open branch mesh, the merged mesh and the junction
/// report.
pub fn reconstruct_branch(
    cfg: &PipelineConfig,
    spec: &PhantomSpec,
    main: &Reconstruction,
) -> Result<(TriMesh, TriMesh, JunctionReport)> {
    let b = spec.branch.as_ref().ok_or_else(|| Error::Invalid("phantom has no branch".into()))?;
    let start = branch_clear_start(spec).expect("branch present");
    if start >= b.length {
        return Err(Error::Merge("branch never leaves the main lumen".into()));
    }
    let full = spec.branch_centerline(cfg.k)?.expect("branch present");
    let dir = (full.points()[1] - full.points()[0]).normalize();
    let origin = full.points()[0];
    let pts: Vec<_> = (0..cfg.k)
        .map(|i| origin + dir * (start + (b.length - start) * i as f64 / (cfg.k - 1) as f64))
        .collect();
    let c = CenterlinePolyline::new(pts)?;
    let slice = SliceParams { half_extent_mm: 4.0 * b.radius, ..cfg.slice.clone() };
    let planes = slice_planes(&c, &slice)?;
    let masks = segment_masks(&main.volume, &planes, &slice, None)?;
    let mut contours = align_chain(&contours_from_masks(&masks, &planes, cfg.m)?)?;
    let spacing = (b.length - start) / (cfg.k - 1) as f64;
    // carry the first section back toward the junction so the branch enters the main lumen
    let first = contours[0].clone();
    let steps = (start / spacing).ceil() as usize;
    for j in 1..=steps {
        let shift = dir * (-(start * j as f64 / steps as f64));
        let moved = first.points().iter().map(|p| p + shift).collect();
        contours.insert(0, Contour::new(moved, first.space())?);
    }
    let (surface, _) = fit_surface(&contours, &cfg.nurbs)?;
    let branch_mesh = surface.tessellate(cfg.nurbs.tess_u, cfg.nurbs.tess_v, false)?;
    let (merged, report) = merge_branches(&main.mesh, &branch_mesh)?;
    Ok((branch_mesh, merged, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub k: usize,
    pub cd_mm: f64,
    pub hd_mm: f64,
    pub emd_mm: f64,
}

/// Reconstructs once per centerline count and measures against the phantom.
pub fn param_study(cfg: &PipelineConfig) -> StageResult<(Vec<StudyRow>, String)> {
    cfg.validate().stage("config")?;
    let spec = cfg.phantom.as_ref().ok_or(Error::Invalid("study needs a phantom".into())).stage("config")?;
    if cfg.k_list.is_empty() {
        return Err(Error::Invalid("k_list is empty".into())).stage("config");
    }
    let reference = reference_surface(spec, &cfg.metrics, cfg.caps).stage("metrics")?;
    let mut rows = Vec::new();
    for &k in &cfg.k_list {
        let run = PipelineConfig { k, ..cfg.clone() };
        let r = reconstruct(&run)?;
        let m = evaluate(&r.mesh, &reference, &cfg.metrics, cfg.seed).stage("metrics")?;
        rows.push(StudyRow {
            k,
            cd_mm: m.cd_mm.unwrap_or(f64::NAN),
            hd_mm: m.hd_mm.unwrap_or(f64::NAN),
            emd_mm: m.emd_mm.unwrap_or(f64::NAN),
        });
    }
    let best = rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.cd_mm.total_cmp(&b.1.cd_mm))
        .map(|(i, _)| i)
        .expect("nonempty");
    let mut csv = String::from("k,cd_mm,hd_mm,emd_mm,best\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{},{},{}", r.k, sig(r.cd_mm, 9), sig(r.hd_mm, 9), sig(r.emd_mm, 9), i == best);
    }
    Ok((rows, csv))
}

#[derive(Debug, Clone, Serialize)]
pub struct MeshEvaluation {
    pub metrics: MetricReport,
    pub topology: TopologyReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub nurbs: MeshEvaluation,
    pub marching_cubes: MeshEvaluation,
}

/// The NURBS reconstruction against marching cubes on the thresholded
/// volume (segmentation followed by iso-surfacing), both measured against
/// the phantom surface.
pub fn compare_baseline(cfg: &PipelineConfig) -> StageResult<(CompareReport, TriMesh, TriMesh)> {
    cfg.validate().stage("config")?;
    let spec = cfg.phantom.as_ref().ok_or(Error::Invalid("compare needs a phantom".into())).stage("config")?;
    let r = reconstruct(cfg)?;
    let mask = VoxelMask::threshold(&r.volume, cfg.slice.threshold);
    let binary = r.volume.map(|x| if x >= cfg.slice.threshold { 1.0 } else { 0.0 });
    debug_assert_eq!(mask.count(), binary.data().iter().filter(|&&x| x == 1.0).count());
    let mc = marching_cubes(&binary, 0.5).stage("baseline")?;
    let reference = reference_surface(spec, &cfg.metrics, cfg.caps).stage("metrics")?;
    let eval = |m: &TriMesh| -> Result<MeshEvaluation> {
        let topology = m.validate();
        Ok(MeshEvaluation { metrics: evaluate(m, &reference, &cfg.metrics, cfg.seed)?, topology })
    };
    let report = CompareReport {
        nurbs: eval(&r.mesh).stage("metrics")?,
        marching_cubes: eval(&mc).stage("metrics")?,
    };
    Ok((report, r.mesh, mc))
}

/// Training set and hyperparameters for the centerline diffusion model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CdmTrainSpec {
    /// Phantoms rasterized into (volume, analytic centerline) pairs; empty
    /// means [`straight_family`].
    pub phantoms: Vec<PhantomSpec>,
    pub k: usize,
    pub steps: usize,
    pub train: TrainConfig,
}

impl Default for CdmTrainSpec {
    fn default() -> Self {
        Self { phantoms: Vec::new(), k: 16, steps: 200, train: TrainConfig::default() }
    }
}

/// 32 straight tubes: eight lengths by four radii on a 56³ grid at 1 mm.
pub fn straight_family() -> Vec<PhantomSpec> {
    let mut out = Vec::new();
    for i in 0..8 {
        for j in 0..4 {
            out.push(PhantomSpec {
                length: 24.0 + 2.0 * i as f64,
                base_radius: 3.0 + 0.8 * j as f64,
                dims: [56; 3],
                spacing: [1.0; 3],
                ..PhantomSpec::preset(crate::PhantomShape::Straight)
            });
        }
    }
    out
}

pub fn build_dataset(phantoms: &[PhantomSpec], k: usize) -> Result<Dataset> {
    let mut data = Dataset::default();
    for spec in phantoms {
        data.push(spec.rasterize()?, &spec.analytic_centerline(k)?)?;
    }
    Ok(data)
}

/// Trains on the listed phantoms and returns the checkpoint header with the
/// outcome.
pub fn train_cdm(spec: &CdmTrainSpec) -> Result<(CheckpointHeader, TrainOutcome)> {
    let phantoms = if spec.phantoms.is_empty() { straight_family() } else { spec.phantoms.clone() };
    let data = build_dataset(&phantoms, spec.k)?;
    let schedule = NoiseSchedule::scaled(spec.steps)?;
    let outcome = train(&data, &HandcraftedEncoder, &schedule, &spec.train)?;
    let model: &Mlp = &outcome.model;
    let header = CheckpointHeader {
        k: spec.k,
        feature_dim: 5,
        shape: model.shape(),
        schedule,
        seed: spec.train.seed,
        n_params: model.params().len(),
    };
    Ok((header, outcome))
}

/// One `iteration,loss` row per training step.
pub fn loss_csv(outcome: &TrainOutcome) -> String {
    let mut csv = String::from("iteration,loss\n");
    for (i, l) in outcome.losses.iter().enumerate() {
        let _ = writeln!(csv, "{},{}", i + 1, sig(*l, 9));
    }
    csv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::PhantomShape;

    #[test]
    fn config_defaults_and_validation() {
        let cfg = PipelineConfig::from_json(r#"{"phantom": {"shape": "straight", "length": 30, "base_radius": 4, "dims": [48,48,48], "spacing": [0.8,0.8,0.8]}}"#).unwrap();
        assert_eq!((cfg.k, cfg.m), (16, 32));
        assert_eq!(cfg.centerline, CenterlineSource::Analytic);
        assert!(PipelineConfig::from_json("{}").is_err());
        assert!(PipelineConfig::from_json(r#"{"bogus": 1}"#).is_err());
        let csv = PipelineConfig::from_json(r#"{"volume": "v.raw", "centerline": {"kind": "csv", "path": "c.csv"}}"#).unwrap();
        assert_eq!(csv.centerline, CenterlineSource::Csv { path: "c.csv".into() });
    }

    #[test]
    fn missing_volume_fails_in_volume_stage() {
        let cfg = PipelineConfig {
            volume: Some("/nonexistent/volume.raw".into()),
            centerline: CenterlineSource::Csv { path: "c.csv".into() },
            ..PipelineConfig::default()
        };
        let err = reconstruct(&cfg).err().expect("must fail");
        assert_eq!(err.stage, "volume");
        let json: serde_json::Value = serde_json::from_str(&err.to_json()).unwrap();
        assert_eq!(json["stage"], "volume");
    }

    #[test]
    fn straight_tube_reconstruction() {
        let cfg = PipelineConfig::for_phantom(PhantomSpec::preset(PhantomShape::Straight));
        let r = reconstruct(&cfg).unwrap();
        let t = r.mesh.validate();
        assert!(t.watertight && t.euler_characteristic == 2 && t.boundary_loop_count == 0);
        let reference = reference_surface(cfg.phantom.as_ref().unwrap(), &cfg.metrics, true).unwrap();
        let m = evaluate(&r.mesh, &reference, &cfg.metrics, 0).unwrap();
        assert!(m.cd_mm.unwrap() <= 0.8, "{m:?}");
    }
}
