//! Synthetic coronary-vessel phantoms with exact ground truth.
//!
//! Each patient is one curved tubular vessel in a noisy CT-like volume:
//! a planar arc with a small out-of-plane wobble, a lumen whose radius dips
//! under Gaussian narrowing bumps, and a wall that thickens outward where
//! plaque sits. Generation is split into a cheap deterministic plan
//! (centerline, lesion geometry, labels) and the heavy voxel rendering, so
//! label statistics can be computed without touching voxels.

use crate::eval;
use crate::mpr::Centerline;
use crate::rng;
use crate::volume::{load_mask, load_volume, save_mask, save_volume, Grid, Mask, Volume, VolumeError};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("bad phantom spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("dataset parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaqueComponent {
    Calcified,
    Lipid,
    Mixed,
}

impl PlaqueComponent {
    pub fn as_str(self) -> &'static str {
        match self {
            PlaqueComponent::Calcified => "calcified",
            PlaqueComponent::Lipid => "lipid",
            PlaqueComponent::Mixed => "mixed",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "calcified" => Some(PlaqueComponent::Calcified),
            "lipid" => Some(PlaqueComponent::Lipid),
            "mixed" => Some(PlaqueComponent::Mixed),
            _ => None,
        }
    }

    /// Lipid-bearing components trigger the lipid clause of the
    /// revascularization rule.
    pub fn has_lipid(self) -> bool {
        matches!(self, PlaqueComponent::Lipid | PlaqueComponent::Mixed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntensitySpec {
    pub background: f64,
    pub lumen: f64,
    pub wall: f64,
    pub calcified: f64,
    pub lipid: f64,
}

impl Default for IntensitySpec {
    fn default() -> Self {
        IntensitySpec {
            background: 0.0,
            lumen: 400.0,
            wall: 50.0,
            calcified: 900.0,
            lipid: -50.0,
        }
    }
}

/// Full description of a synthetic dataset; everything downstream is a
/// deterministic function of this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub master_seed: u64,
    pub n_patients: usize,
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    pub path_length_mm: f64,
    pub curvature_radius_mm: [f64; 2],
    pub out_of_plane_amp_mm: f64,
    pub centerline_step_mm: f64,
    pub r_ref_mm: f64,
    pub wall_thickness_mm: f64,
    /// Outward wall displacement per unit narrowing, as a fraction of the
    /// reference radius.
    pub remodeling: f64,
    pub lesions_per_vessel: [usize; 2],
    pub lesion_extent_mm: [f64; 2],
    /// Narrowing fraction ranges for the two lesion populations.
    pub narrowing_low: [f64; 2],
    pub narrowing_high: [f64; 2],
    /// Probability that a lesion is drawn from the high-narrowing range.
    pub high_fraction: f64,
    pub intensities: IntensitySpec,
    pub noise_sigma: f64,
    /// Probability of flipping each branch-level revascularization label.
    pub label_noise: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            master_seed: 42,
            n_patients: 40,
            dims: [96, 96, 144],
            spacing_mm: 0.5,
            path_length_mm: 60.0,
            curvature_radius_mm: [40.0, 80.0],
            out_of_plane_amp_mm: 1.5,
            centerline_step_mm: 0.5,
            r_ref_mm: 2.0,
            wall_thickness_mm: 0.8,
            remodeling: 0.7,
            lesions_per_vessel: [2, 5],
            lesion_extent_mm: [6.0, 12.0],
            narrowing_low: [0.15, 0.48],
            narrowing_high: [0.52, 0.80],
            high_fraction: 0.25,
            intensities: IntensitySpec::default(),
            noise_sigma: 15.0,
            label_noise: 0.05,
        }
    }
}

impl PhantomSpec {
    /// Widest radial footprint any cross-section can reach, lumen included.
    fn max_outer_radius(&self) -> f64 {
        self.r_ref_mm * (1.0 + self.remodeling * MAX_TOTAL_NARROWING) + self.wall_thickness_mm
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::BadSpec(m));
        if self.n_patients == 0 {
            return bad("patient count must be positive".into());
        }
        if self.spacing_mm <= 0.0 || self.centerline_step_mm <= 0.0 {
            return bad("spacings must be positive".into());
        }
        if self.r_ref_mm <= 0.0 || self.wall_thickness_mm <= 0.0 {
            return bad("radii must be positive".into());
        }
        if self.path_length_mm <= 0.0 {
            return bad("path length must be positive".into());
        }
        let [rlo, rhi] = self.curvature_radius_mm;
        if !(0.0 < rlo && rlo <= rhi) {
            return bad("curvature radius range must be positive and ordered".into());
        }
        if rlo < self.path_length_mm / std::f64::consts::PI {
            return bad("arc would bend past a half circle".into());
        }
        let [nlo, nhi] = self.lesions_per_vessel;
        if nlo > nhi {
            return bad("lesion count range reversed".into());
        }
        let [elo, ehi] = self.lesion_extent_mm;
        if !(0.0 < elo && elo <= ehi) {
            return bad("lesion extents must be positive and ordered".into());
        }
        for [lo, hi] in [self.narrowing_low, self.narrowing_high] {
            if !(0.0 <= lo && lo <= hi && hi < 1.0) {
                return bad(format!("narrowing range [{lo}, {hi}] outside [0, 1)"));
            }
        }
        if !(0.0..=1.0).contains(&self.high_fraction) || !(0.0..=1.0).contains(&self.label_noise) {
            return bad("probabilities must lie in [0, 1]".into());
        }
        if self.noise_sigma < 0.0 {
            return bad("noise sigma must be nonnegative".into());
        }
        // Containment: rendering touches nothing farther than the widest
        // cross-section plus the edge blend from the path, so that reach
        // plus one interpolation voxel must clear every volume face.
        let margin = self.max_outer_radius() + 2.0 * self.spacing_mm;
        let half_z = self.dims[2] as f64 * self.spacing_mm / 2.0;
        if self.path_length_mm / 2.0 + margin > half_z {
            return bad(format!(
                "path of {} mm does not fit the volume long axis",
                self.path_length_mm
            ));
        }
        let sagitta = self.path_length_mm.powi(2) / (8.0 * rlo);
        let lateral = sagitta / 2.0 + self.out_of_plane_amp_mm + margin;
        let half_x = self.dims[0] as f64 * self.spacing_mm / 2.0;
        let half_y = self.dims[1] as f64 * self.spacing_mm / 2.0;
        if lateral > half_x || lateral > half_y {
            return bad("arc sagitta does not fit the volume cross-section".into());
        }
        Ok(())
    }

    pub fn patient_id(&self, index: usize) -> String {
        format!("patient_{index:03}")
    }
}

/// Total narrowing is capped so the lumen never fully closes even when
/// bumps overlap.
pub const MAX_TOTAL_NARROWING: f64 = 0.9;

/// One narrowing bump on the lumen radius profile.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionGeom {
    pub center_mm: f64,
    pub extent_mm: f64,
    pub narrowing: f64,
    pub component: PlaqueComponent,
}

impl LesionGeom {
    /// Gaussian bump with sigma at a quarter of the extent, unit peak.
    fn bump(&self, s: f64) -> f64 {
        let sigma = self.extent_mm / 4.0;
        let d = (s - self.center_mm) / sigma;
        (-0.5 * d * d).exp()
    }
}

/// Combined narrowing fraction at arclength `s`, capped.
pub fn total_narrowing(lesions: &[LesionGeom], s: f64) -> f64 {
    let sum: f64 = lesions.iter().map(|l| l.narrowing * l.bump(s)).sum();
    sum.min(MAX_TOTAL_NARROWING)
}

/// Lumen radius at arclength `s`.
pub fn lumen_radius(spec: &PhantomSpec, lesions: &[LesionGeom], s: f64) -> f64 {
    spec.r_ref_mm * (1.0 - total_narrowing(lesions, s))
}

/// Outer wall radius at arclength `s`; plaque remodels outward.
pub fn outer_radius(spec: &PhantomSpec, lesions: &[LesionGeom], s: f64) -> f64 {
    spec.r_ref_mm + spec.wall_thickness_mm
        + spec.remodeling * spec.r_ref_mm * total_narrowing(lesions, s)
}

/// Worst relative lumen loss over one lesion's extent, scanning a fine
/// grid that includes the bump peak.
pub fn stenosis_degree(lesions: &[LesionGeom], index: usize) -> f64 {
    let l = &lesions[index];
    let half = l.extent_mm / 2.0;
    let n = 201;
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let s = l.center_mm - half + l.extent_mm * k as f64 / (n - 1) as f64;
        worst = worst.max(total_narrowing(lesions, s));
    }
    worst
}

/// One annotated lesion; `revascularize` is the branch decision propagated
/// to the branch's most severe lesion.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionRecord {
    pub patient: String,
    pub branch: u32,
    pub segment: u32,
    pub start_index: usize,
    pub end_index: usize,
    pub stenosis_degree: f64,
    pub high_stenosis: bool,
    pub revascularize: bool,
    pub component: PlaqueComponent,
}

/// Branch-level decision: positive when the worst narrowing exceeds 0.5,
/// or exceeds 0.35 with lipid-bearing plaque present; the result is then
/// flipped with probability `label_noise`.
pub fn assign_branch_revascularization(
    degrees: &[f64],
    any_lipid: bool,
    label_noise: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> bool {
    assert!(!degrees.is_empty(), "branch needs at least one lesion");
    let worst = degrees.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut label = worst > 0.5 || (worst > 0.35 && any_lipid);
    if rng.gen_range(0.0..1.0) < label_noise {
        label = !label;
    }
    label
}

/// Everything about a patient except the voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientPlan {
    pub id: String,
    pub points_mm: Vec<[f64; 3]>,
    pub lesions: Vec<LesionGeom>,
    pub records: Vec<LesionRecord>,
}

/// Rendered patient: plan plus volume and geometric masks.
#[derive(Debug)]
pub struct PatientData {
    pub plan: PatientPlan,
    pub volume: Volume,
    pub lumen: Mask,
    pub wall: Mask,
}

/// Deterministic per-patient plan: centerline path, lesion geometry,
/// stenosis degrees, and labels. Cheap; no voxels are touched.
pub fn patient_plan(spec: &PhantomSpec, index: usize) -> Result<PatientPlan, PhantomError> {
    spec.validate()?;
    let id = spec.patient_id(index);
    let pseed = rng::stable_hash(spec.master_seed, "phantom_patient", &[index as u64]);

    // Vessel path: planar arc about the volume center, chord along z,
    // sagitta direction rotated randomly in the x-y plane, plus a small
    // out-of-plane sine wobble.
    let mut path_rng = rng::stream(pseed, "path", &[0]);
    let radius = path_rng.gen_range(spec.curvature_radius_mm[0]..=spec.curvature_radius_mm[1]);
    let psi = path_rng.gen_range(0.0..std::f64::consts::TAU);
    let phase = path_rng.gen_range(0.0..std::f64::consts::TAU);
    let length = spec.path_length_mm;
    let sagitta_end = radius * (1.0 - (length / (2.0 * radius)).cos());
    let e_sag = [psi.cos(), psi.sin(), 0.0];
    let e_out = [-psi.sin(), psi.cos(), 0.0];
    let center = [
        spec.dims[0] as f64 * spec.spacing_mm / 2.0,
        spec.dims[1] as f64 * spec.spacing_mm / 2.0,
        spec.dims[2] as f64 * spec.spacing_mm / 2.0,
    ];
    let n_points = (length / spec.centerline_step_mm).round() as usize + 1;
    let mut points_mm = Vec::with_capacity(n_points);
    for k in 0..n_points {
        let s = length * k as f64 / (n_points - 1) as f64;
        let sp = s - length / 2.0;
        let x = radius * (1.0 - (sp / radius).cos()) - sagitta_end / 2.0;
        let z = radius * (sp / radius).sin();
        let y = spec.out_of_plane_amp_mm
            * (std::f64::consts::TAU * 1.5 * s / length + phase).sin();
        points_mm.push([
            center[0] + e_sag[0] * x + e_out[0] * y,
            center[1] + e_sag[1] * x + e_out[1] * y,
            center[2] + z,
        ]);
    }

    // Lesions: one per equal arclength slot of the interior, jittered, so
    // bumps stay essentially disjoint.
    let mut lesion_rng = rng::stream(pseed, "lesions", &[0]);
    let n_lesions =
        lesion_rng.gen_range(spec.lesions_per_vessel[0]..=spec.lesions_per_vessel[1]);
    let mut lesions = Vec::with_capacity(n_lesions);
    if n_lesions > 0 {
        let inner_lo = 0.12 * length;
        let inner_hi = 0.88 * length;
        let slot = (inner_hi - inner_lo) / n_lesions as f64;
        for i in 0..n_lesions {
            let jitter = lesion_rng.gen_range(0.3..0.7);
            let center_mm = inner_lo + slot * (i as f64 + jitter);
            let extent_mm =
                lesion_rng.gen_range(spec.lesion_extent_mm[0]..=spec.lesion_extent_mm[1]);
            let high = lesion_rng.gen_range(0.0..1.0) < spec.high_fraction;
            let [lo, hi] = if high { spec.narrowing_high } else { spec.narrowing_low };
            let narrowing = if lo == hi { lo } else { lesion_rng.gen_range(lo..hi) };
            let component = match lesion_rng.gen_range(0.0..1.0) {
                u if u < 0.40 => PlaqueComponent::Calcified,
                u if u < 0.75 => PlaqueComponent::Lipid,
                _ => PlaqueComponent::Mixed,
            };
            lesions.push(LesionGeom {
                center_mm,
                extent_mm,
                narrowing,
                component,
            });
        }
    }

    // Records: stenosis degrees from the actual radius profile, branch
    // decision, noise flip, and propagation to the most severe lesion.
    let degrees: Vec<f64> = (0..lesions.len())
        .map(|i| stenosis_degree(&lesions, i))
        .collect();
    let mut records = Vec::with_capacity(lesions.len());
    if !lesions.is_empty() {
        let any_lipid = lesions.iter().any(|l| l.component.has_lipid());
        let mut label_rng = rng::stream(pseed, "labels", &[0]);
        let branch_positive = assign_branch_revascularization(
            &degrees,
            any_lipid,
            spec.label_noise,
            &mut label_rng,
        );
        let revasc = eval::propagate_revascularization(branch_positive, &degrees);
        let step = spec.centerline_step_mm;
        let last = points_mm.len() - 1;
        for (i, l) in lesions.iter().enumerate() {
            let start_index =
                (((l.center_mm - l.extent_mm / 2.0) / step).floor().max(0.0) as usize).min(last);
            let end_index =
                (((l.center_mm + l.extent_mm / 2.0) / step).ceil() as usize).clamp(start_index + 1, last);
            records.push(LesionRecord {
                patient: id.clone(),
                branch: 0,
                segment: i as u32,
                start_index,
                end_index,
                stenosis_degree: degrees[i],
                high_stenosis: degrees[i] > 0.5,
                revascularize: revasc[i],
                component: l.component,
            });
        }
    }

    Ok(PatientPlan {
        id,
        points_mm,
        lesions,
        records,
    })
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Renders the planned vessel into a volume with geometric lumen and wall
/// masks. Voxel values are a pure function of (spec, plan) plus seeded
/// Gaussian noise.
pub fn render_patient(
    spec: &PhantomSpec,
    plan: &PatientPlan,
    patient_index: usize,
) -> Result<PatientData, PhantomError> {
    spec.validate()?;
    let grid = Grid {
        dims: spec.dims,
        spacing: [spec.spacing_mm; 3],
        origin: [0.0; 3],
    };
    let n_voxels = spec.dims[0] * spec.dims[1] * spec.dims[2];
    let reach = spec.max_outer_radius() + 1.5 * spec.spacing_mm;

    // Nearest centerline segment per voxel: minimum distance and its
    // arclength, swept segment by segment over local bounding boxes.
    let mut nearest: Vec<(f32, f32)> = vec![(f32::INFINITY, 0.0); n_voxels];
    let pts = &plan.points_mm;
    let step = spec.centerline_step_mm;
    for j in 0..pts.len() - 1 {
        let a = pts[j];
        let b = pts[j + 1];
        let seg = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let seg_len2 = seg[0] * seg[0] + seg[1] * seg[1] + seg[2] * seg[2];
        let lo = [
            (a[0].min(b[0]) - reach) / spec.spacing_mm,
            (a[1].min(b[1]) - reach) / spec.spacing_mm,
            (a[2].min(b[2]) - reach) / spec.spacing_mm,
        ];
        let hi = [
            (a[0].max(b[0]) + reach) / spec.spacing_mm,
            (a[1].max(b[1]) + reach) / spec.spacing_mm,
            (a[2].max(b[2]) + reach) / spec.spacing_mm,
        ];
        let ilo: Vec<usize> = (0..3).map(|k| lo[k].floor().max(0.0) as usize).collect();
        let ihi: Vec<usize> =
            (0..3).map(|k| (hi[k].ceil() as usize).min(spec.dims[k] - 1)).collect();
        for z in ilo[2]..=ihi[2] {
            for y in ilo[1]..=ihi[1] {
                for x in ilo[0]..=ihi[0] {
                    let w = grid.world(x, y, z);
                    let rel = [w[0] - a[0], w[1] - a[1], w[2] - a[2]];
                    let t = if seg_len2 > 0.0 {
                        ((rel[0] * seg[0] + rel[1] * seg[1] + rel[2] * seg[2]) / seg_len2)
                            .clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    let dx = rel[0] - t * seg[0];
                    let dy = rel[1] - t * seg[1];
                    let dz = rel[2] - t * seg[2];
                    let d = (dx * dx + dy * dy + dz * dz).sqrt();
                    let idx = (z * spec.dims[1] + y) * spec.dims[0] + x;
                    if (d as f32) < nearest[idx].0 {
                        nearest[idx] = (d as f32, (step * (j as f64 + t)) as f32);
                    }
                }
            }
        }
    }

    let ints = &spec.intensities;
    let w_blend = spec.spacing_mm;
    let mut data = vec![ints.background; n_voxels];
    let mut lumen = vec![0u8; n_voxels];
    let mut wall = vec![0u8; n_voxels];
    for idx in 0..n_voxels {
        let (d32, s32) = nearest[idx];
        if !d32.is_finite() || d32 as f64 > reach {
            continue;
        }
        let d = d32 as f64;
        let s = s32 as f64;
        let bump = total_narrowing(&plan.lesions, s);
        let r_lum = spec.r_ref_mm * (1.0 - bump);
        let r_out = spec.r_ref_mm + spec.wall_thickness_mm
            + spec.remodeling * spec.r_ref_mm * bump;
        // Wall intensity: plaque replaces the wall wherever narrowing is
        // active; mixed plaque is lipid on the inner half, calcified on
        // the outer half of the annulus.
        let wall_value = if bump > 0.02 {
            let dominant = plan
                .lesions
                .iter()
                .max_by(|p, q| {
                    let a = p.narrowing * p.bump(s);
                    let b = q.narrowing * q.bump(s);
                    a.partial_cmp(&b).expect("finite bump weights")
                })
                .expect("active bump implies a lesion");
            match dominant.component {
                PlaqueComponent::Calcified => ints.calcified,
                PlaqueComponent::Lipid => ints.lipid,
                PlaqueComponent::Mixed => {
                    if d < (r_lum + r_out) / 2.0 {
                        ints.lipid
                    } else {
                        ints.calcified
                    }
                }
            }
        } else {
            ints.wall
        };
        // Lumen plateau, wall annulus, background, with one-voxel
        // smoothstep transitions at both radii; the sum form stays
        // continuous even if the two transition windows overlap.
        let t_in = smoothstep((d - r_lum) / w_blend + 0.5);
        let t_out = smoothstep((d - r_out) / w_blend + 0.5);
        data[idx] = ints.lumen
            + (wall_value - ints.lumen) * t_in
            + (ints.background - wall_value) * t_out;
        if d <= r_lum {
            lumen[idx] = 1;
        } else if d <= r_out {
            wall[idx] = 1;
        }
    }

    if spec.noise_sigma > 0.0 {
        let pseed = rng::stable_hash(spec.master_seed, "phantom_patient", &[patient_index as u64]);
        let mut noise_rng = rng::stream(pseed, "voxel_noise", &[0]);
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| PhantomError::BadSpec(format!("noise sigma: {e}")))?;
        for v in &mut data {
            *v += normal.sample(&mut noise_rng);
        }
    }

    let volume = Volume::new(grid.clone(), data)?;
    let lumen = Mask {
        grid: grid.clone(),
        data: lumen,
    };
    let wall = Mask { grid, data: wall };
    Ok(PatientData {
        plan: plan.clone(),
        volume,
        lumen,
        wall,
    })
}

/// Plan plus render in one call.
pub fn generate_patient(spec: &PhantomSpec, index: usize) -> Result<PatientData, PhantomError> {
    let plan = patient_plan(spec, index)?;
    render_patient(spec, &plan, index)
}

/// Lumen radius measured from voxels: walk outward from `center` along
/// `dir` and find where the intensity first drops through the half-max
/// between lumen and background. Returns `None` when no crossing exists
/// within `r_max`.
pub fn half_max_radius(
    vol: &Volume,
    center: [f64; 3],
    dir: [f64; 3],
    r_max: f64,
    half_value: f64,
) -> Option<f64> {
    let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    let u = [dir[0] / norm, dir[1] / norm, dir[2] / norm];
    let step = 0.02;
    let mut prev_r = 0.0;
    let mut prev_v = vol.sample_trilinear(center)?;
    let mut r = step;
    while r <= r_max {
        let p = [center[0] + u[0] * r, center[1] + u[1] * r, center[2] + u[2] * r];
        let v = vol.sample_trilinear(p)?;
        if prev_v >= half_value && v < half_value {
            let t = (prev_v - half_value) / (prev_v - v);
            return Some(prev_r + t * step);
        }
        prev_r = r;
        prev_v = v;
        r += step;
    }
    None
}

/// Directory layout of a written dataset.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub patients: Vec<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    /// Human-readable record of the labeling rule baked into generation.
    revascularization_rule: String,
    spec: PhantomSpec,
}

const MANIFEST_VERSION: u32 = 1;
const RULE_TEXT: &str = "branch positive iff max narrowing > 0.5, or > 0.35 with lipid-bearing plaque; label flipped with the configured noise probability; positive branches mark their most severe lesion";

/// Renders every patient and writes the dataset directory: a manifest plus,
/// per patient, the volume, both masks, the centerline, and the lesion
/// table.
pub fn write_dataset(spec: &PhantomSpec, root: &Path) -> Result<DatasetPaths, PhantomError> {
    spec.validate()?;
    std::fs::create_dir_all(root)?;
    let manifest_path = root.join("manifest.toml");
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        revascularization_rule: RULE_TEXT.to_string(),
        spec: spec.clone(),
    };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| PhantomError::BadSpec(format!("manifest serialize: {e}")))?;
    std::fs::write(&manifest_path, text)?;
    let mut patients = Vec::with_capacity(spec.n_patients);
    for i in 0..spec.n_patients {
        let data = generate_patient(spec, i)?;
        let dir = root.join(&data.plan.id);
        std::fs::create_dir_all(&dir)?;
        save_volume(&data.volume, &dir.join("volume"))?;
        save_mask(&data.lumen, &dir.join("lumen"))?;
        save_mask(&data.wall, &dir.join("wall"))?;
        write_centerline_csv(&dir.join("centerline.csv"), &data.plan.points_mm)?;
        write_lesions_csv(&dir.join("lesions.csv"), &data.plan.records)?;
        patients.push(dir);
    }
    Ok(DatasetPaths {
        root: root.to_path_buf(),
        manifest: manifest_path,
        patients,
    })
}

pub fn read_manifest(path: &Path) -> Result<PhantomSpec, PhantomError> {
    let text = std::fs::read_to_string(path)?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| PhantomError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(PhantomError::Parse {
            path: path.to_path_buf(),
            message: format!("unsupported manifest version {}", manifest.format_version),
        });
    }
    Ok(manifest.spec)
}

fn write_centerline_csv(path: &Path, points: &[[f64; 3]]) -> Result<(), PhantomError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "x,y,z")?;
    for p in points {
        writeln!(f, "{},{},{}", p[0], p[1], p[2])?;
    }
    Ok(())
}

pub fn read_centerline_csv(path: &Path) -> Result<Vec<[f64; 3]>, PhantomError> {
    let text = std::fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse_err = || PhantomError::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: bad centerline row", lineno + 1),
        };
        if fields.len() != 3 {
            return Err(parse_err());
        }
        let mut p = [0.0; 3];
        for (k, field) in fields.iter().enumerate() {
            p[k] = field.parse().map_err(|_| parse_err())?;
        }
        points.push(p);
    }
    Ok(points)
}

fn write_lesions_csv(path: &Path, records: &[LesionRecord]) -> Result<(), PhantomError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "patient,branch,segment,start_index,end_index,stenosis_degree,high_stenosis,revascularize,component"
    )?;
    for r in records {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{}",
            r.patient,
            r.branch,
            r.segment,
            r.start_index,
            r.end_index,
            r.stenosis_degree,
            r.high_stenosis,
            r.revascularize,
            r.component.as_str()
        )?;
    }
    Ok(())
}

pub fn read_lesions_csv(path: &Path) -> Result<Vec<LesionRecord>, PhantomError> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse_err = |m: &str| PhantomError::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {m}", lineno + 1),
        };
        if fields.len() != 9 {
            return Err(parse_err("wrong column count"));
        }
        records.push(LesionRecord {
            patient: fields[0].to_string(),
            branch: fields[1].parse().map_err(|_| parse_err("bad branch"))?,
            segment: fields[2].parse().map_err(|_| parse_err("bad segment"))?,
            start_index: fields[3].parse().map_err(|_| parse_err("bad start"))?,
            end_index: fields[4].parse().map_err(|_| parse_err("bad end"))?,
            stenosis_degree: fields[5].parse().map_err(|_| parse_err("bad degree"))?,
            high_stenosis: fields[6].parse().map_err(|_| parse_err("bad label"))?,
            revascularize: fields[7].parse().map_err(|_| parse_err("bad label"))?,
            component: PlaqueComponent::parse(fields[8])
                .ok_or_else(|| parse_err("bad component"))?,
        });
    }
    Ok(records)
}

/// Reads one written patient directory back.
pub fn read_patient(dir: &Path) -> Result<PatientData, PhantomError> {
    let volume = load_volume(&dir.join("volume"))?;
    let lumen = load_mask(&dir.join("lumen"))?;
    let wall = load_mask(&dir.join("wall"))?;
    let points_mm = read_centerline_csv(&dir.join("centerline.csv"))?;
    let records = read_lesions_csv(&dir.join("lesions.csv"))?;
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(PatientData {
        plan: PatientPlan {
            id,
            points_mm,
            // Bump geometry is not persisted; records carry the labels.
            lesions: Vec::new(),
            records,
        },
        volume,
        lumen,
        wall,
    })
}

/// Centerline object for the geometry pipeline.
pub fn plan_centerline(plan: &PatientPlan) -> Centerline {
    Centerline {
        points: plan.points_mm.clone(),
    }
}
