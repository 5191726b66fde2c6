//! End-to-end lesion classification: vessel datasets in, per-fold scores
//! out.
//!
//! Four approaches share one sample bank built from a phantom dataset.
//! `radiomics_gbt` feeds segment-level radiomic features to boosted trees;
//! `rcnn2d_polar` runs the polar-slice recurrent CNN; `rcnn3d_baseline`
//! runs the Cartesian 3D recurrent CNN; `radiomics_gru` runs per-cube
//! shape features through the dense-plus-recurrent path. Image inputs are
//! histogram equalized and scaled to [0, 1]; augmentation is train-time
//! only. Every random choice derives from an explicit seed, so any run is
//! replayable bit for bit.

use crate::eval;
use crate::gbt::{self, BoostConfig};
use crate::mpr::{self, Centerline, Cube, PolarParams};
use crate::nn::model::{
    Array3, ArchitectureConfig, Cart3dRcnn, ModelInput, PolarRcnn, ShapeGru,
};
use crate::nn::train::{self, TrainConfig};
use crate::phantom::{self, LesionRecord, PhantomSpec};
use crate::radiomics::{self, shape, RadiomicsConfig, TransformBank};
use crate::rng;
use crate::volume::{histogram_equalize, Grid, Mask, Volume};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub use crate::nn::train::balanced_batches;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("bad pipeline config: {0}")]
    BadConfig(String),
    #[error("{got} payload does not fit the {expected} approach")]
    PayloadMismatch {
        expected: &'static str,
        got: &'static str,
    },
    #[error(transparent)]
    Phantom(#[from] phantom::PhantomError),
    #[error(transparent)]
    Mpr(#[from] mpr::MprError),
    #[error(transparent)]
    Radiomics(#[from] radiomics::RadiomicsError),
    #[error(transparent)]
    Gbt(#[from] gbt::GbtError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Volume(#[from] crate::volume::VolumeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("score file parse error at line {line}: {message}")]
    ScoreParse { line: usize, message: String },
}

/// Which binary label a run predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Stenosis50,
    Revascularization,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Stenosis50 => "stenosis50",
            Target::Revascularization => "revascularization",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "stenosis50" => Some(Target::Stenosis50),
            "revascularization" | "revasc" => Some(Target::Revascularization),
            _ => None,
        }
    }

    pub fn label(self, r: &LesionRecord) -> bool {
        match self {
            Target::Stenosis50 => r.high_stenosis,
            Target::Revascularization => r.revascularize,
        }
    }

    fn tag(self) -> u64 {
        match self {
            Target::Stenosis50 => 0,
            Target::Revascularization => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproachKind {
    RadiomicsGbt,
    Rcnn2dPolar,
    Rcnn3dBaseline,
    RadiomicsGru,
}

impl ApproachKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ApproachKind::RadiomicsGbt => "radiomics_gbt",
            ApproachKind::Rcnn2dPolar => "rcnn2d_polar",
            ApproachKind::Rcnn3dBaseline => "rcnn3d_baseline",
            ApproachKind::RadiomicsGru => "radiomics_gru",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "radiomics_gbt" => Some(ApproachKind::RadiomicsGbt),
            "rcnn2d_polar" => Some(ApproachKind::Rcnn2dPolar),
            "rcnn3d_baseline" => Some(ApproachKind::Rcnn3dBaseline),
            "radiomics_gru" => Some(ApproachKind::RadiomicsGru),
            _ => None,
        }
    }

    pub const ALL: [ApproachKind; 4] = [
        ApproachKind::RadiomicsGbt,
        ApproachKind::Rcnn2dPolar,
        ApproachKind::Rcnn3dBaseline,
        ApproachKind::RadiomicsGru,
    ];
}

/// Geometry of the centerline-to-cube path, plus image normalization.
///
/// Centerlines are consumed at their native point spacing; phantom data is
/// uniformly spaced by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    /// Side length of the orthogonal slices in pixels, odd.
    pub slice_size: usize,
    /// In-plane pixel spacing of the slices in mm.
    pub in_plane_mm: f64,
    /// Slices per cube.
    pub cube_len: usize,
    /// Slice step between consecutive cubes.
    pub cube_stride: usize,
    pub polar: PolarParams,
    /// Histogram-equalization bin count for image normalization.
    pub normalize_bins: usize,
    /// Intensity clip range mapped to [0, 1].
    pub normalize_clip: [f64; 2],
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            slice_size: 19,
            in_plane_mm: 0.5,
            cube_len: 5,
            cube_stride: 3,
            polar: PolarParams::default(),
            normalize_bins: 256,
            normalize_clip: [-200.0, 1100.0],
        }
    }
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::BadConfig(m));
        if self.slice_size < 3 || self.slice_size % 2 == 0 {
            return bad(format!("slice size {} must be odd and >= 3", self.slice_size));
        }
        if !(self.in_plane_mm > 0.0) {
            return bad("in-plane spacing must be positive".into());
        }
        if self.cube_len == 0 || self.cube_stride == 0 || self.cube_stride > self.cube_len {
            return bad(format!(
                "cube length {} / stride {} invalid",
                self.cube_len, self.cube_stride
            ));
        }
        let half = (self.slice_size - 1) as f64 / 2.0 * self.in_plane_mm;
        if self.polar.r_max > half {
            return bad(format!(
                "polar radius {} exceeds the slice half-width {half}",
                self.polar.r_max
            ));
        }
        if self.normalize_bins < 2 {
            return bad("normalization needs at least 2 bins".into());
        }
        if !(self.normalize_clip[0] < self.normalize_clip[1]) {
            return bad("normalization clip range reversed".into());
        }
        Ok(())
    }
}

/// Train-time image augmentation strengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Additive Gaussian noise sigma, in normalized intensity units.
    pub sigma: f64,
    /// In-plane translation bound in pixels, each axis uniform in +-bound.
    pub max_shift: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            sigma: 0.02,
            max_shift: 2.0,
        }
    }
}

/// Everything one approach needs: the variant plus its sub-configurations.
/// Only the sub-configuration matching the variant is consulted at run
/// time, but all are validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApproachConfig {
    pub variant: ApproachKind,
    pub geometry: GeometryConfig,
    pub radiomics: RadiomicsConfig,
    pub boost: BoostConfig,
    pub arch: ArchitectureConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    /// Mixed into every fold seed, separating approach randomness streams.
    pub seed: u64,
}

impl Default for ApproachConfig {
    fn default() -> Self {
        ApproachConfig {
            variant: ApproachKind::RadiomicsGbt,
            geometry: GeometryConfig::default(),
            radiomics: RadiomicsConfig::default(),
            boost: BoostConfig::default(),
            arch: ArchitectureConfig::default(),
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl ApproachConfig {
    pub fn for_variant(variant: ApproachKind) -> Self {
        ApproachConfig {
            variant,
            ..ApproachConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.geometry.validate()?;
        self.boost.validate()?;
        self.arch.validate()?;
        if self.augment.sigma < 0.0 || self.augment.max_shift < 0.0 {
            return Err(PipelineError::BadConfig(
                "augmentation strengths must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// One lesion as an approach consumes it. The polar payload keeps its
/// Cartesian source cubes because translation augmentation acts before the
/// polar transform.
#[derive(Debug, Clone)]
pub enum Payload {
    Features(Vec<f64>),
    CartSeq(Vec<Array3>),
    PolarSeq { polar: Vec<Array3>, cart: Vec<Cube> },
    ShapeSeq(Vec<Vec<f64>>),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Features(_) => "features",
            Payload::CartSeq(_) => "cartesian cubes",
            Payload::PolarSeq { .. } => "polar cubes",
            Payload::ShapeSeq(_) => "shape sequence",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LesionSample {
    pub patient: String,
    pub segment: u32,
    pub label: bool,
    pub payload: Payload,
}

/// One in-plane rigid transform: translation, optional mirror, rotation.
/// Identity when all fields are zero/false.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidDraw {
    pub theta: f64,
    pub mirror: bool,
    pub shift: [f64; 2],
}

impl RigidDraw {
    pub fn identity() -> Self {
        RigidDraw {
            theta: 0.0,
            mirror: false,
            shift: [0.0, 0.0],
        }
    }
}

/// Samples one augmentation transform. Draw order is fixed (shift x, shift
/// y, mirror, angle) so streams replay identically.
pub fn draw_rigid(aug: &AugmentConfig, rng: &mut ChaCha8Rng) -> RigidDraw {
    let m = aug.max_shift;
    let shift = if m > 0.0 {
        [rng.gen_range(-m..=m), rng.gen_range(-m..=m)]
    } else {
        [0.0, 0.0]
    };
    let mirror = rng.gen_bool(0.5);
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    RigidDraw { theta, mirror, shift }
}

/// Nearest whole angle step below `theta` on an `angles`-spoke grid.
pub fn angle_steps(theta: f64, angles: usize) -> usize {
    let frac = theta.rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU;
    ((frac * angles as f64).floor() as usize) % angles
}

/// Cyclic rotation by `k` steps: content at angle `a` moves to `a + k`.
/// Matches the Cartesian convention where rotating a slice by +theta moves
/// content counterclockwise.
pub fn shift_angles(polar: &[f64], angles: usize, radii: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; polar.len()];
    for a in 0..angles {
        let dst = (a + k) % angles;
        out[dst * radii..(dst + 1) * radii].copy_from_slice(&polar[a * radii..(a + 1) * radii]);
    }
    out
}

/// Angle-axis reversal, the polar form of an in-plane mirror. Combined
/// with the uniform rotation draw this realizes the same augmentation
/// group as a fixed-axis mirror. An involution.
pub fn reverse_angles(polar: &[f64], angles: usize, radii: usize) -> Vec<f64> {
    let mut out = vec![0.0; polar.len()];
    for a in 0..angles {
        let src = (angles - a) % angles;
        out[a * radii..(a + 1) * radii].copy_from_slice(&polar[src * radii..(src + 1) * radii]);
    }
    out
}

fn add_noise(arrays: &mut [Array3], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    for a in arrays {
        for v in &mut a.data {
            *v += normal.sample(rng);
        }
    }
}

/// Augments a Cartesian cube sequence: one rigid transform shared by every
/// slice (mirror, then rotation by `theta`, translation), then additive
/// noise. Slices must be square.
pub fn apply_cart_augment(
    cubes: &[Array3],
    draw: &RigidDraw,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Array3>, PipelineError> {
    let mut out = Vec::with_capacity(cubes.len());
    for cube in cubes {
        let [l, h, w] = cube.dims;
        if h != w {
            return Err(PipelineError::BadConfig(format!(
                "in-plane rotation needs square slices, got {h}x{w}"
            )));
        }
        let mut data = Vec::with_capacity(cube.data.len());
        for s in 0..l {
            let slice = &cube.data[s * h * w..(s + 1) * h * w];
            data.extend(mpr::resample_slice_rigid(
                slice, h, draw.theta, draw.shift, draw.mirror,
            ));
        }
        out.push(Array3::new(cube.dims, data)?);
    }
    add_noise(&mut out, sigma, rng);
    Ok(out)
}

/// Polar cube sequence from Cartesian sources with no augmentation; the
/// payload builder and the evaluation path share this.
pub fn polar_from_cart(
    cart: &[Cube],
    in_plane: f64,
    params: &PolarParams,
) -> Result<Vec<Array3>, PipelineError> {
    cart.iter()
        .map(|cube| {
            let data = mpr::cube_to_polar(cube, in_plane, params)?;
            Ok(Array3::new([cube.len, params.angles, params.radii], data)?)
        })
        .collect()
}

/// Augments a polar cube sequence from its Cartesian sources: translation
/// on the Cartesian slice, polar transform, angle reversal for mirrors,
/// whole-step cyclic rotation, then additive noise.
pub fn apply_polar_augment(
    cart: &[Cube],
    in_plane: f64,
    params: &PolarParams,
    draw: &RigidDraw,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Array3>, PipelineError> {
    let k = angle_steps(draw.theta, params.angles);
    let (na, nr) = (params.angles, params.radii);
    let mut out = Vec::with_capacity(cart.len());
    for cube in cart {
        let area = cube.size * cube.size;
        let mut data = Vec::with_capacity(cube.len * na * nr);
        for s in 0..cube.len {
            let slice = &cube.data[s * area..(s + 1) * area];
            let moved = mpr::resample_slice_rigid(slice, cube.size, 0.0, draw.shift, false);
            let mut pol = mpr::slice_to_polar(&moved, cube.size, in_plane, params)?;
            if draw.mirror {
                pol = reverse_angles(&pol, na, nr);
            }
            if k > 0 {
                pol = shift_angles(&pol, na, nr, k);
            }
            data.extend(pol);
        }
        out.push(Array3::new([cube.len, na, nr], data)?);
    }
    add_noise(&mut out, sigma, rng);
    Ok(out)
}

/// Histogram equalization over the clip range, then a linear map of the
/// range onto [0, 1].
pub fn normalize_volume(
    vol: &Volume,
    bins: usize,
    clip: [f64; 2],
) -> Result<Volume, PipelineError> {
    let eq = histogram_equalize(vol, bins, clip[0], clip[1])?;
    let span = clip[1] - clip[0];
    let data = eq.data.iter().map(|v| (v - clip[0]) / span).collect();
    Ok(Volume::new(eq.grid, data)?)
}

/// Which payload families a bank must carry.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Needs {
    pub features: bool,
    pub images: bool,
    pub shapes: bool,
}

impl Needs {
    pub fn of(variant: ApproachKind) -> Needs {
        match variant {
            ApproachKind::RadiomicsGbt => Needs { features: true, ..Needs::default() },
            ApproachKind::Rcnn2dPolar | ApproachKind::Rcnn3dBaseline => {
                Needs { images: true, ..Needs::default() }
            }
            ApproachKind::RadiomicsGru => Needs { shapes: true, ..Needs::default() },
        }
    }

    pub fn union(self, other: Needs) -> Needs {
        Needs {
            features: self.features || other.features,
            images: self.images || other.images,
            shapes: self.shapes || other.shapes,
        }
    }

    fn any(self) -> bool {
        self.features || self.images || self.shapes
    }
}

/// One lesion's precomputed payload pieces; fields are populated according
/// to the bank's [`Needs`].
#[derive(Debug, Clone)]
pub struct LesionEntry {
    pub record: LesionRecord,
    pub features: Option<Vec<f64>>,
    pub cart: Option<Vec<Cube>>,
    pub polar: Option<Vec<Array3>>,
    pub shapes: Option<Vec<Vec<f64>>>,
}

/// Target-independent per-lesion payloads for a whole dataset, built once
/// and shared by every approach and fold.
#[derive(Debug)]
pub struct SampleBank {
    pub geometry: GeometryConfig,
    pub entries: Vec<LesionEntry>,
    pub feature_names: Vec<String>,
}

/// Width of one per-cube shape feature vector: a presence flag followed by
/// the shape features.
pub const SHAPE_SEQ_DIM: usize = 1 + shape::SHAPE_NAMES.len();

/// Nearest centerline point index for every set voxel of a mask.
fn nearest_indices(mask: &Mask, points: &[[f64; 3]]) -> Vec<(usize, usize)> {
    let [nx, ny, nz] = mask.grid.dims;
    let mut out = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if !mask.at(i, j, k) {
                    continue;
                }
                let w = mask.grid.world(i, j, k);
                let mut best = (f64::INFINITY, 0usize);
                for (idx, p) in points.iter().enumerate() {
                    let d = (w[0] - p[0]).powi(2) + (w[1] - p[1]).powi(2) + (w[2] - p[2]).powi(2);
                    if d < best.0 {
                        best = (d, idx);
                    }
                }
                out.push((mask.grid.index(i, j, k), best.1));
            }
        }
    }
    out
}

/// Full-grid mask of the wall voxels attributed to centerline indices in
/// `[lo, hi]`.
fn clip_wall(grid: &Grid, attrib: &[(usize, usize)], lo: usize, hi: usize) -> Mask {
    let mut data = vec![0u8; grid.voxel_count()];
    for &(vox, cl) in attrib {
        if (lo..=hi).contains(&cl) {
            data[vox] = 1;
        }
    }
    Mask { grid: *grid, data }
}

/// Compact copy of a clipped mask on its bounding box (one-voxel pad), so
/// shape features do not scan the whole patient grid.
fn crop_mask(mask: &Mask) -> Option<Mask> {
    let [nx, ny, nz] = mask.grid.dims;
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if mask.at(i, j, k) {
                    let c = [i, j, k];
                    for a in 0..3 {
                        lo[a] = lo[a].min(c[a]);
                        hi[a] = hi[a].max(c[a]);
                    }
                }
            }
        }
    }
    if lo[0] == usize::MAX {
        return None;
    }
    let start = [lo[0].saturating_sub(1), lo[1].saturating_sub(1), lo[2].saturating_sub(1)];
    let dims = [
        (hi[0] + 2).min(nx) - start[0],
        (hi[1] + 2).min(ny) - start[1],
        (hi[2] + 2).min(nz) - start[2],
    ];
    let grid = Grid {
        dims,
        spacing: mask.grid.spacing,
        origin: [0.0; 3],
    };
    let mut data = vec![0u8; grid.voxel_count()];
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                if mask.at(start[0] + i, start[1] + j, start[2] + k) {
                    data[grid.index(i, j, k)] = 1;
                }
            }
        }
    }
    Some(Mask { grid, data })
}

/// Radiomic feature rows for one patient's lesions, from its volume, wall
/// mask, and centerline points. One row per record, in record order.
pub fn patient_feature_rows(
    volume: &Volume,
    wall: &Mask,
    points: &[[f64; 3]],
    records: &[LesionRecord],
    rad: &RadiomicsConfig,
) -> Result<Vec<Vec<f64>>, PipelineError> {
    let bank = TransformBank::build(volume, rad)?;
    let attrib = nearest_indices(wall, points);
    records
        .iter()
        .map(|r| {
            let mask = clip_wall(&wall.grid, &attrib, r.start_index, r.end_index);
            Ok(radiomics::extract_from_bank(&bank, &mask, rad)?.values())
        })
        .collect()
}

fn patient_entries(
    spec: &PhantomSpec,
    geometry: &GeometryConfig,
    rad: &RadiomicsConfig,
    needs: Needs,
    patient: usize,
) -> Result<Vec<LesionEntry>, PipelineError> {
    let plan = phantom::patient_plan(spec, patient)?;
    if plan.records.is_empty() {
        return Ok(Vec::new());
    }
    let data = phantom::render_patient(spec, &plan, patient)?;
    let norm = if needs.images {
        Some(normalize_volume(
            &data.volume,
            geometry.normalize_bins,
            geometry.normalize_clip,
        )?)
    } else {
        None
    };
    let bank = if needs.features {
        Some(TransformBank::build(&data.volume, rad)?)
    } else {
        None
    };
    let attrib = if needs.features || needs.shapes {
        nearest_indices(&data.wall, &plan.points_mm)
    } else {
        Vec::new()
    };
    let mut entries = Vec::with_capacity(plan.records.len());
    for record in &plan.records {
        let (lo, hi) = (record.start_index, record.end_index);
        let mut entry = LesionEntry {
            record: record.clone(),
            features: None,
            cart: None,
            polar: None,
            shapes: None,
        };
        if let Some(bank) = &bank {
            let mask = clip_wall(&data.wall.grid, &attrib, lo, hi);
            entry.features = Some(radiomics::extract_from_bank(bank, &mask, rad)?.values());
        }
        if needs.images || needs.shapes {
            let cl = Centerline::new(plan.points_mm[lo..=hi].to_vec())?;
            if needs.images {
                let norm = norm.as_ref().expect("normalized volume built with images");
                let frames = mpr::rotation_minimizing_frames(&cl)?;
                let mut stack = mpr::extract_mpr_stack(
                    norm,
                    &cl,
                    &frames,
                    geometry.slice_size,
                    geometry.in_plane_mm,
                )?;
                // Slices reaching outside the volume pad with the scan
                // border value; clamp keeps inputs inside [0, 1].
                for v in &mut stack.slices {
                    *v = v.clamp(0.0, 1.0);
                }
                let cart = mpr::cut_cubes(&stack, geometry.cube_len, geometry.cube_stride)?;
                entry.polar =
                    Some(polar_from_cart(&cart, geometry.in_plane_mm, &geometry.polar)?);
                entry.cart = Some(cart);
            }
            if needs.shapes {
                let starts = mpr::cube_starts(
                    cl.points.len(),
                    geometry.cube_len,
                    geometry.cube_stride,
                )?;
                let mut seq = Vec::with_capacity(starts.len());
                for s in starts {
                    let clip_lo = lo + s;
                    let clip_hi = (lo + s + geometry.cube_len - 1).min(hi);
                    let clipped = clip_wall(&data.wall.grid, &attrib, clip_lo, clip_hi);
                    let mut row = vec![0.0; SHAPE_SEQ_DIM];
                    if let Some(compact) = crop_mask(&clipped) {
                        row[0] = 1.0;
                        let feats = shape::shape_features(&compact)?;
                        row[1..].copy_from_slice(&feats);
                    }
                    seq.push(row);
                }
                entry.shapes = Some(seq);
            }
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Builds the sample bank for a phantom dataset: renders each patient,
/// then per lesion extracts whichever payload families `needs` asks for.
/// Patients are processed in parallel; the result is order-stable and
/// independent of the thread count.
pub fn build_bank(
    spec: &PhantomSpec,
    geometry: &GeometryConfig,
    rad: &RadiomicsConfig,
    needs: Needs,
) -> Result<SampleBank, PipelineError> {
    geometry.validate()?;
    if !needs.any() {
        return Err(PipelineError::BadConfig("bank built with no payload families".into()));
    }
    let per_patient: Vec<Vec<LesionEntry>> = (0..spec.n_patients)
        .into_par_iter()
        .map(|i| patient_entries(spec, geometry, rad, needs, i))
        .collect::<Result<_, _>>()?;
    Ok(SampleBank {
        geometry: geometry.clone(),
        entries: per_patient.into_iter().flatten().collect(),
        feature_names: radiomics::feature_names(rad),
    })
}

/// Assembles the payload an approach consumes from a bank entry.
pub fn make_sample(
    entry: &LesionEntry,
    variant: ApproachKind,
    target: Target,
) -> Result<LesionSample, PipelineError> {
    let missing = |what: &str| {
        PipelineError::BadConfig(format!("bank was built without {what} payloads"))
    };
    let payload = match variant {
        ApproachKind::RadiomicsGbt => {
            Payload::Features(entry.features.clone().ok_or_else(|| missing("feature"))?)
        }
        ApproachKind::Rcnn2dPolar => Payload::PolarSeq {
            polar: entry.polar.clone().ok_or_else(|| missing("image"))?,
            cart: entry.cart.clone().ok_or_else(|| missing("image"))?,
        },
        ApproachKind::Rcnn3dBaseline => {
            let cart = entry.cart.as_ref().ok_or_else(|| missing("image"))?;
            let cubes = cart
                .iter()
                .map(|c| Array3::new([c.len, c.size, c.size], c.data.clone()))
                .collect::<Result<Vec<_>, _>>()?;
            Payload::CartSeq(cubes)
        }
        ApproachKind::RadiomicsGru => {
            Payload::ShapeSeq(entry.shapes.clone().ok_or_else(|| missing("shape"))?)
        }
    };
    Ok(LesionSample {
        patient: entry.record.patient.clone(),
        segment: entry.record.segment,
        label: target.label(&entry.record),
        payload,
    })
}

/// Per-dimension standardization statistics fit on training data.
#[derive(Debug, Clone)]
pub struct ZStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Population mean and standard deviation of every dimension across all
/// sequence elements; near-constant dimensions keep unit scale.
pub fn fit_zscore<'a>(seqs: impl Iterator<Item = &'a Vec<Vec<f64>>>) -> ZStats {
    let mut sum: Vec<f64> = Vec::new();
    let mut sq: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for seq in seqs {
        for row in seq {
            if sum.is_empty() {
                sum = vec![0.0; row.len()];
                sq = vec![0.0; row.len()];
            }
            for (d, &v) in row.iter().enumerate() {
                sum[d] += v;
                sq[d] += v * v;
            }
            n += 1;
        }
    }
    assert!(n > 0, "standardization needs at least one element");
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let sd = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| {
            let var = (s / n as f64 - m * m).max(0.0);
            let sd = var.sqrt();
            if sd < 1e-9 {
                1.0
            } else {
                sd
            }
        })
        .collect();
    ZStats { mean, sd }
}

pub fn apply_zscore(seq: &[Vec<f64>], stats: &ZStats) -> Vec<Vec<f64>> {
    seq.iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(d, &v)| (v - stats.mean[d]) / stats.sd[d])
                .collect()
        })
        .collect()
}

fn patients_of(samples: &[LesionSample]) -> HashSet<&str> {
    samples.iter().map(|s| s.patient.as_str()).collect()
}

/// Hard protocol invariant: the three splits share no patient.
fn assert_no_leakage(train: &[LesionSample], val: &[LesionSample], test: &[LesionSample]) {
    let (tr, va, te) = (patients_of(train), patients_of(val), patients_of(test));
    assert!(
        tr.is_disjoint(&te) && va.is_disjoint(&te) && tr.is_disjoint(&va),
        "patient leakage across train/val/test splits"
    );
}

fn features_of(samples: &[LesionSample]) -> Result<Vec<Vec<f64>>, PipelineError> {
    samples
        .iter()
        .map(|s| match &s.payload {
            Payload::Features(f) => Ok(f.clone()),
            other => Err(PipelineError::PayloadMismatch {
                expected: "radiomics_gbt",
                got: other.kind(),
            }),
        })
        .collect()
}

fn labels_of(samples: &[LesionSample]) -> Vec<bool> {
    samples.iter().map(|s| s.label).collect()
}

/// Trains one approach on the given splits and scores the test lesions, in
/// test order. Probabilities in (0, 1).
pub fn run_approach(
    train_s: &[LesionSample],
    val_s: &[LesionSample],
    test_s: &[LesionSample],
    cfg: &ApproachConfig,
    fold_seed: u64,
) -> Result<Vec<f64>, PipelineError> {
    cfg.validate()?;
    assert_no_leakage(train_s, val_s, test_s);
    for s in train_s.iter().chain(val_s).chain(test_s) {
        let ok = matches!(
            (&s.payload, cfg.variant),
            (Payload::Features(_), ApproachKind::RadiomicsGbt)
                | (Payload::PolarSeq { .. }, ApproachKind::Rcnn2dPolar)
                | (Payload::CartSeq(_), ApproachKind::Rcnn3dBaseline)
                | (Payload::ShapeSeq(_), ApproachKind::RadiomicsGru)
        );
        if !ok {
            return Err(PipelineError::PayloadMismatch {
                expected: cfg.variant.as_str(),
                got: s.payload.kind(),
            });
        }
    }
    match cfg.variant {
        ApproachKind::RadiomicsGbt => {
            // Trees have no epoch-wise selection, so the validation split
            // joins the training rows.
            let mut rows = features_of(train_s)?;
            rows.extend(features_of(val_s)?);
            let mut labels = labels_of(train_s);
            labels.extend(labels_of(val_s));
            let bcfg = BoostConfig {
                seed: rng::stable_hash(fold_seed, "boost", &[0]),
                ..cfg.boost.clone()
            };
            let model = gbt::train(&rows, &labels, &bcfg)?;
            Ok(model.predict_proba(&features_of(test_s)?)?)
        }
        ApproachKind::Rcnn2dPolar => {
            let polar_of = |s: &LesionSample| match &s.payload {
                Payload::PolarSeq { polar, .. } => ModelInput::Cubes(polar.clone()),
                _ => unreachable!("payloads checked above"),
            };
            let carts: Vec<Vec<Cube>> = train_s
                .iter()
                .map(|s| match &s.payload {
                    Payload::PolarSeq { cart, .. } => cart.clone(),
                    _ => unreachable!("payloads checked above"),
                })
                .collect();
            let train: Vec<(ModelInput, bool)> =
                train_s.iter().map(|s| (polar_of(s), s.label)).collect();
            let val: Vec<(ModelInput, bool)> =
                val_s.iter().map(|s| (polar_of(s), s.label)).collect();
            let arch = ArchitectureConfig {
                seed: rng::stable_hash(fold_seed, "arch", &[0]),
                ..cfg.arch.clone()
            };
            let geometry = cfg.geometry.clone();
            let in_shape = [geometry.cube_len, geometry.polar.angles, geometry.polar.radii];
            let mut model = PolarRcnn::new(&arch, in_shape)?;
            let tcfg = TrainConfig {
                seed: rng::stable_hash(fold_seed, "train", &[0]),
                ..cfg.train.clone()
            };
            let aug = cfg.augment.clone();
            let augment = move |x: &ModelInput, i: usize, rng: &mut ChaCha8Rng| {
                if !aug.enabled {
                    return x.clone();
                }
                let draw = draw_rigid(&aug, rng);
                let arrays = apply_polar_augment(
                    &carts[i],
                    geometry.in_plane_mm,
                    &geometry.polar,
                    &draw,
                    aug.sigma,
                    rng,
                )
                .expect("augmenting bank-built payloads cannot fail");
                ModelInput::Cubes(arrays)
            };
            train::train_loop(&mut model, &train, &val, &tcfg, augment)?;
            let test: Vec<ModelInput> = test_s.iter().map(polar_of).collect();
            Ok(train::predict(&mut model, &test)?)
        }
        ApproachKind::Rcnn3dBaseline => {
            let input_of = |s: &LesionSample| match &s.payload {
                Payload::CartSeq(c) => ModelInput::Cubes(c.clone()),
                _ => unreachable!("payloads checked above"),
            };
            let train: Vec<(ModelInput, bool)> =
                train_s.iter().map(|s| (input_of(s), s.label)).collect();
            let val: Vec<(ModelInput, bool)> =
                val_s.iter().map(|s| (input_of(s), s.label)).collect();
            let arch = ArchitectureConfig {
                seed: rng::stable_hash(fold_seed, "arch", &[0]),
                ..cfg.arch.clone()
            };
            let g = &cfg.geometry;
            let mut model =
                Cart3dRcnn::new(&arch, [g.cube_len, g.slice_size, g.slice_size])?;
            let tcfg = TrainConfig {
                seed: rng::stable_hash(fold_seed, "train", &[0]),
                ..cfg.train.clone()
            };
            let aug = cfg.augment.clone();
            let augment = move |x: &ModelInput, _i: usize, rng: &mut ChaCha8Rng| {
                if !aug.enabled {
                    return x.clone();
                }
                let ModelInput::Cubes(cubes) = x else {
                    unreachable!("cube inputs built above");
                };
                let draw = draw_rigid(&aug, rng);
                let arrays = apply_cart_augment(cubes, &draw, aug.sigma, rng)
                    .expect("augmenting bank-built payloads cannot fail");
                ModelInput::Cubes(arrays)
            };
            train::train_loop(&mut model, &train, &val, &tcfg, augment)?;
            let test: Vec<ModelInput> = test_s.iter().map(input_of).collect();
            Ok(train::predict(&mut model, &test)?)
        }
        ApproachKind::RadiomicsGru => {
            fn seq_of(s: &LesionSample) -> &Vec<Vec<f64>> {
                match &s.payload {
                    Payload::ShapeSeq(seq) => seq,
                    _ => unreachable!("payloads checked above"),
                }
            }
            // Standardization is fit on the training split only.
            let stats = fit_zscore(train_s.iter().map(seq_of));
            let to_input =
                |s: &LesionSample| ModelInput::Sequence(apply_zscore(seq_of(s), &stats));
            let train: Vec<(ModelInput, bool)> =
                train_s.iter().map(|s| (to_input(s), s.label)).collect();
            let val: Vec<(ModelInput, bool)> =
                val_s.iter().map(|s| (to_input(s), s.label)).collect();
            let f_in = train
                .first()
                .and_then(|(x, _)| match x {
                    ModelInput::Sequence(rows) => rows.first().map(|r| r.len()),
                    _ => None,
                })
                .ok_or_else(|| {
                    PipelineError::BadConfig("empty shape sequence in training data".into())
                })?;
            let arch = ArchitectureConfig {
                seed: rng::stable_hash(fold_seed, "arch", &[0]),
                ..cfg.arch.clone()
            };
            let mut model = ShapeGru::new(&arch, f_in)?;
            let tcfg = TrainConfig {
                seed: rng::stable_hash(fold_seed, "train", &[0]),
                ..cfg.train.clone()
            };
            // Feature payloads are never augmented.
            train::train_loop(&mut model, &train, &val, &tcfg, |x, _, _| x.clone())?;
            let test: Vec<ModelInput> = test_s.iter().map(to_input).collect();
            Ok(train::predict(&mut model, &test)?)
        }
    }
}

/// Seed for one (approach, target, fold) training run. Mixing the variant
/// name and approach seed keeps every run's randomness stream distinct
/// while staying replayable from the master seed alone.
pub fn fold_seed(master_seed: u64, cfg: &ApproachConfig, target: Target, fold: usize) -> u64 {
    rng::stable_hash(
        master_seed,
        cfg.variant.as_str(),
        &[cfg.seed, target.tag(), fold as u64],
    )
}

/// One scored test lesion.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub patient: String,
    pub segment: u32,
    pub target: bool,
    pub score: f64,
    pub fold: usize,
}

/// Full cross-validation result for one approach and target.
#[derive(Debug, Clone)]
pub struct CrossvalOutcome {
    pub approach: ApproachKind,
    pub target: Target,
    pub rows: Vec<ScoreRow>,
    /// Per-fold AUC; `None` when the fold's test labels are single-class.
    pub fold_aucs: Vec<Option<f64>>,
    pub pooled_auc: f64,
}

/// Patient-stratified k-fold cross-validation of one approach over a bank.
///
/// Folds are stratified on a patient-level flag (any positive lesion) and
/// depend only on (master seed, target), so every approach sees identical
/// splits. Each lesion is scored exactly once, by the fold holding its
/// patient out.
pub fn run_crossval(
    bank: &SampleBank,
    cfg: &ApproachConfig,
    target: Target,
    k: usize,
    master_seed: u64,
) -> Result<CrossvalOutcome, PipelineError> {
    cfg.validate()?;
    let mut order: Vec<String> = Vec::new();
    let mut positive: HashMap<&str, bool> = HashMap::new();
    for e in &bank.entries {
        let id = e.record.patient.as_str();
        if !positive.contains_key(id) {
            order.push(id.to_string());
        }
        let flag = positive.entry(id).or_insert(false);
        *flag = *flag || target.label(&e.record);
    }
    let patients: Vec<(String, bool)> = order
        .iter()
        .map(|id| (id.clone(), positive[id.as_str()]))
        .collect();
    let folds = eval::stratified_patient_kfold(
        &patients,
        k,
        rng::stable_hash(master_seed, "fold_split", &[target.tag()]),
    )?;
    let mut rows = Vec::with_capacity(bank.entries.len());
    let mut fold_aucs = Vec::with_capacity(k);
    let mut scored = vec![false; bank.entries.len()];
    for (f, split) in folds.iter().enumerate() {
        fn member(ids: &[String]) -> HashSet<&str> {
            ids.iter().map(|s| s.as_str()).collect()
        }
        let (tr_ids, va_ids, te_ids) =
            (member(&split.train), member(&split.val), member(&split.test));
        let mut train_s = Vec::new();
        let mut val_s = Vec::new();
        let mut test_s = Vec::new();
        let mut test_idx = Vec::new();
        for (i, e) in bank.entries.iter().enumerate() {
            let id = e.record.patient.as_str();
            if tr_ids.contains(id) {
                train_s.push(make_sample(e, cfg.variant, target)?);
            } else if va_ids.contains(id) {
                val_s.push(make_sample(e, cfg.variant, target)?);
            } else if te_ids.contains(id) {
                test_s.push(make_sample(e, cfg.variant, target)?);
                test_idx.push(i);
            }
        }
        let seed = fold_seed(master_seed, cfg, target, f);
        let scores = run_approach(&train_s, &val_s, &test_s, cfg, seed)?;
        for (&i, (s, score)) in test_idx.iter().zip(test_s.iter().zip(&scores)) {
            assert!(!scored[i], "lesion scored by two folds");
            scored[i] = true;
            rows.push(ScoreRow {
                patient: s.patient.clone(),
                segment: s.segment,
                target: s.label,
                score: *score,
                fold: f,
            });
        }
        let labels: Vec<bool> = test_s.iter().map(|s| s.label).collect();
        fold_aucs.push(eval::roc_auc(&scores, &labels).ok());
    }
    assert!(
        scored.iter().all(|&s| s),
        "every lesion must be scored by exactly one fold"
    );
    let all_scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let all_labels: Vec<bool> = rows.iter().map(|r| r.target).collect();
    let pooled_auc = eval::roc_auc(&all_scores, &all_labels)?;
    Ok(CrossvalOutcome {
        approach: cfg.variant,
        target,
        rows,
        fold_aucs,
        pooled_auc,
    })
}

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<(), PipelineError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "patient,segment,target,score,fold")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{}",
            r.patient, r.segment, r.target, r.score, r.fold
        )?;
    }
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            continue;
        }
        let parse_err = |m: &str| PipelineError::ScoreParse {
            line: lineno + 1,
            message: m.to_string(),
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(parse_err("wrong column count"));
        }
        rows.push(ScoreRow {
            patient: fields[0].to_string(),
            segment: fields[1].parse().map_err(|_| parse_err("bad segment"))?,
            target: fields[2].parse().map_err(|_| parse_err("bad target"))?,
            score: fields[3].parse().map_err(|_| parse_err("bad score"))?,
            fold: fields[4].parse().map_err(|_| parse_err("bad fold"))?,
        });
    }
    Ok(rows)
}
