//! Reachability map and the embodied weight.
//!
//! The map discretises the arm workspace (arm mount frame) into voxels and
//! scores each voxel by the fraction of a 26-direction approach bundle an
//! inverse-kinematics solve can realise there. Voxels scoring above 0.95
//! form the high-reachability set; the directional threshold is the member
//! of that set best aligned with the current task-error direction, and the
//! embodied weight is the ratio of its distance to the task-error norm.

use nalgebra::{Matrix6, Vector3, Vector6};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::kinematics::{arm_fk, arm_jacobian, RobotModel, ARM_DOF};
use crate::{Error, Result};

/// Voxel score above which a cell belongs to the high-reachability set.
pub const REACHABLE_THRESHOLD: f32 = 0.95;

/// Omega is capped here when the task error is numerically zero.
pub const OMEGA_MAX: f64 = 10.0;

/// Logistic activation parameters for `sig`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SigParams {
    /// Steepness of the logistic.
    pub k: f64,
    /// Midpoint: `sig(omega0) = 0.5`.
    pub omega0: f64,
}

impl Default for SigParams {
    fn default() -> Self {
        SigParams { k: 8.0, omega0: 1.0 }
    }
}

/// Logistic activation `1 / (1 + exp(-k (omega - omega0)))`.
pub fn sig(omega: f64, params: &SigParams) -> f64 {
    1.0 / (1.0 + (-params.k * (omega - params.omega0)).exp())
}

/// The embodied weight of one control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbodiedWeight {
    /// Ratio of the directional reachability threshold to the error norm.
    pub omega: f64,
    /// Activation `sig(omega)`.
    pub sig_value: f64,
    /// Distance of the best-aligned high-reachability voxel (m).
    pub threshold_norm: f64,
    /// Translational task-error norm (m).
    pub error_norm: f64,
}

/// Map construction knobs beyond the sample count and voxel size.
#[derive(Debug, Clone, Copy)]
pub struct BuildParams {
    /// IK attempts per (voxel, direction): warm starts from FK samples in
    /// the neighbourhood first, random restarts after.
    pub max_attempts: usize,
    /// Damped-least-squares iteration cap per attempt.
    pub max_iterations: usize,
    /// Position tolerance for IK success (m).
    pub position_tol: f64,
    /// Approach-axis angular tolerance for IK success (rad).
    pub axis_tol: f64,
}

impl Default for BuildParams {
    fn default() -> Self {
        BuildParams {
            max_attempts: 50,
            max_iterations: 60,
            position_tol: 0.01,
            // Matches the angular resolution of the 26-direction bundle
            // (nearest-direction cones are 23-31 degrees wide).
            axis_tol: 0.4,
        }
    }
}

/// True when a target point is occluded by the robot's own body: the mobile
/// base volume below the arm mount or the shoulder mast above it. Targets in
/// these regions are unreachable regardless of IK.
pub fn target_self_occluded(model: &RobotModel, p: &Vector3<f64>) -> bool {
    // Mobile base cylinder in the mount frame.
    let base_in_mount = model.t_vb.compose(&model.t_ba).inverse();
    let c = base_in_mount.translation; // virtual-base origin seen from mount
    let top = 0.0;
    let bottom = c.z; // ground plane
    let r_base = model.base_footprint_radius;
    let in_base = p.z >= bottom - 1e-9
        && p.z <= top
        && ((p.x - c.x).powi(2) + (p.y - c.y).powi(2)).sqrt() <= r_base;
    // Shoulder mast: first-link column above the mount.
    let mast_h = model.arm_dh[0].d.abs();
    let r_mast = 1.6 * model.link_radius;
    let in_mast = p.z > 0.0 && p.z <= mast_h && (p.x.powi(2) + p.y.powi(2)).sqrt() <= r_mast;
    in_base || in_mast
}

/// A member of the high-reachability set, cached for queries.
#[derive(Debug, Clone, Copy)]
struct BoundaryVoxel {
    position: Vector3<f64>,
    norm: f64,
    dir: Vector3<f64>,
}

/// Voxelised reachability scores of the arm workspace, arm mount frame.
#[derive(Debug, Clone)]
pub struct ReachabilityMap {
    pub voxel_size: f64,
    /// Corner of voxel (0,0,0).
    pub origin: Vector3<f64>,
    pub dims: [usize; 3],
    /// Row-major (x outermost) scores in [0, 1].
    pub scores: Vec<f32>,
    pub sample_count: u64,
    pub seed: u64,
    boundary: Vec<BoundaryVoxel>,
}

/// The 26 canonical approach directions: unit vectors to the neighbours of
/// the origin cell in a 3x3x3 grid.
pub fn canonical_directions() -> Vec<Vector3<f64>> {
    let mut dirs = Vec::with_capacity(26);
    for i in -1i32..=1 {
        for j in -1i32..=1 {
            for k in -1i32..=1 {
                if i == 0 && j == 0 && k == 0 {
                    continue;
                }
                dirs.push(Vector3::new(i as f64, j as f64, k as f64).normalize());
            }
        }
    }
    dirs
}

impl ReachabilityMap {
    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn flat_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.dims[1] + iy) * self.dims[2] + iz
    }

    pub fn centroid(&self, ix: usize, iy: usize, iz: usize) -> Vector3<f64> {
        self.origin
            + Vector3::new(
                (ix as f64 + 0.5) * self.voxel_size,
                (iy as f64 + 0.5) * self.voxel_size,
                (iz as f64 + 0.5) * self.voxel_size,
            )
    }

    pub fn score_at(&self, ix: usize, iy: usize, iz: usize) -> f32 {
        self.scores[self.flat_index(ix, iy, iz)]
    }

    /// Score of the voxel containing `p`, or 0 outside the grid.
    pub fn score_at_point(&self, p: &Vector3<f64>) -> f32 {
        let rel = (p - self.origin) / self.voxel_size;
        let idx = [rel.x.floor(), rel.y.floor(), rel.z.floor()];
        for (k, v) in idx.iter().enumerate() {
            if *v < 0.0 || *v >= self.dims[k] as f64 {
                return 0.0;
            }
        }
        self.score_at(idx[0] as usize, idx[1] as usize, idx[2] as usize)
    }

    /// Number of voxels in the high-reachability set.
    pub fn boundary_len(&self) -> usize {
        self.boundary.len()
    }

    /// Positions of the high-reachability voxels (test and diagnostics use).
    pub fn boundary_positions(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.boundary.iter().map(|v| v.position)
    }

    fn rebuild_boundary(&mut self) {
        self.boundary.clear();
        for ix in 0..self.dims[0] {
            for iy in 0..self.dims[1] {
                for iz in 0..self.dims[2] {
                    if self.score_at(ix, iy, iz) > REACHABLE_THRESHOLD {
                        let p = self.centroid(ix, iy, iz);
                        let n = p.norm();
                        if n > 1e-9 {
                            self.boundary.push(BoundaryVoxel {
                                position: p,
                                norm: n,
                                dir: p / n,
                            });
                        }
                    }
                }
            }
        }
    }

    /// The high-reachability voxel centroid best aligned with the direction
    /// of `error` (map frame). Ties in angle go to the larger radius, making
    /// the result the outer boundary in that direction.
    pub fn directional_threshold(&self, error: &Vector3<f64>) -> Result<Vector3<f64>> {
        let norm = error.norm();
        if norm <= 1e-12 {
            return Err(Error::invalid("directional threshold needs a nonzero error"));
        }
        if self.boundary.is_empty() {
            return Err(Error::UnusableMap(
                "no voxel exceeds the 0.95 reachability threshold".into(),
            ));
        }
        let dir = error / norm;
        let mut best = &self.boundary[0];
        let mut best_cos = f64::NEG_INFINITY;
        for v in &self.boundary {
            let cos = v.dir.dot(&dir);
            if cos > best_cos + 1e-12 || (cos > best_cos - 1e-12 && v.norm > best.norm) {
                best_cos = best_cos.max(cos);
                best = v;
            }
        }
        Ok(best.position)
    }

    /// The embodied weight for translational task error `error` expressed in
    /// the map (arm mount) frame.
    pub fn omega(&self, error: &Vector3<f64>, params: &SigParams) -> Result<EmbodiedWeight> {
        let error_norm = error.norm();
        if error_norm < 1e-9 {
            return Ok(EmbodiedWeight {
                omega: OMEGA_MAX,
                sig_value: sig(OMEGA_MAX, params),
                threshold_norm: 0.0,
                error_norm,
            });
        }
        let p = self.directional_threshold(error)?;
        let threshold_norm = p.norm();
        let omega = (threshold_norm / error_norm).min(OMEGA_MAX);
        Ok(EmbodiedWeight {
            omega,
            sig_value: sig(omega, params),
            threshold_norm,
            error_norm,
        })
    }
}

/// Builds a reachability map by scoring each voxel against the canonical
/// direction bundle with damped-least-squares IK, warm-started from FK
/// samples binned into the grid. Deterministic for a fixed seed: every
/// voxel owns an RNG stream derived from (seed, voxel index), so the rayon
/// schedule cannot affect the result.
pub fn build_map(
    model: &RobotModel,
    samples: usize,
    voxel_size: f64,
    seed: u64,
    params: &BuildParams,
) -> Result<ReachabilityMap> {
    let reach = model.arm_reach_bound();
    if voxel_size <= 0.0 {
        return Err(Error::invalid("voxel_size must be positive"));
    }
    if voxel_size > reach {
        return Err(Error::invalid(format!(
            "voxel_size {voxel_size} exceeds arm reach bound {reach}"
        )));
    }
    if samples == 0 {
        return Err(Error::invalid("samples must be positive"));
    }

    let half = reach + voxel_size;
    let n = (2.0 * half / voxel_size).ceil() as usize;
    let dims = [n, n, n];
    let origin = Vector3::new(-half, -half, -half);

    // FK sampling pass: positions seed the per-voxel IK warm starts and the
    // max observed radius prunes out-of-reach voxels.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fk_samples: Vec<([f64; ARM_DOF], Vector3<f64>, Vector3<f64>)> =
        Vec::with_capacity(samples);
    let mut max_radius = 0.0f64;
    for _ in 0..samples {
        let mut q = [0.0; ARM_DOF];
        for (i, qi) in q.iter_mut().enumerate() {
            let l = model.joint_limits[3 + i];
            *qi = rng.gen_range(l.min..l.max);
        }
        let t = arm_fk(model, &q);
        max_radius = max_radius.max(t.translation.norm());
        fk_samples.push((q, t.translation, t.z_axis()));
    }

    let flat = |ix: usize, iy: usize, iz: usize| (ix * dims[1] + iy) * dims[2] + iz;
    let voxel_of = |p: &Vector3<f64>| -> Option<(usize, usize, usize)> {
        let rel = (p - origin) / voxel_size;
        let (ix, iy, iz) = (rel.x.floor(), rel.y.floor(), rel.z.floor());
        if ix < 0.0 || iy < 0.0 || iz < 0.0 {
            return None;
        }
        let (ix, iy, iz) = (ix as usize, iy as usize, iz as usize);
        if ix >= dims[0] || iy >= dims[1] || iz >= dims[2] {
            return None;
        }
        Some((ix, iy, iz))
    };
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
    for (si, (_, p, _)) in fk_samples.iter().enumerate() {
        if let Some((ix, iy, iz)) = voxel_of(p) {
            let b = &mut bins[flat(ix, iy, iz)];
            if b.len() < 24 {
                b.push(si as u32);
            }
        }
    }

    let dirs = canonical_directions();
    let prune_radius = max_radius + voxel_size * 0.9;

    let scores: Vec<f32> = (0..dims[0] * dims[1] * dims[2])
        .into_par_iter()
        .map(|fi| {
            let iz = fi % dims[2];
            let iy = (fi / dims[2]) % dims[1];
            let ix = fi / (dims[1] * dims[2]);
            let centroid = origin
                + Vector3::new(
                    (ix as f64 + 0.5) * voxel_size,
                    (iy as f64 + 0.5) * voxel_size,
                    (iz as f64 + 0.5) * voxel_size,
                );
            if centroid.norm() > prune_radius || target_self_occluded(model, &centroid) {
                return 0.0f32;
            }
            // Warm starts: samples in this voxel and its neighbours.
            let mut seeds: Vec<u32> = Vec::new();
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dz in -1i64..=1 {
                        let (jx, jy, jz) = (ix as i64 + dx, iy as i64 + dy, iz as i64 + dz);
                        if jx < 0 || jy < 0 || jz < 0 {
                            continue;
                        }
                        let (jx, jy, jz) = (jx as usize, jy as usize, jz as usize);
                        if jx >= dims[0] || jy >= dims[1] || jz >= dims[2] {
                            continue;
                        }
                        seeds.extend_from_slice(&bins[flat(jx, jy, jz)]);
                    }
                }
            }
            let mut voxel_rng =
                ChaCha8Rng::seed_from_u64(seed ^ (fi as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut reached = 0usize;
            for dir in &dirs {
                // Prefer seeds whose sampled approach axis already agrees.
                let mut ordered = seeds.clone();
                ordered.sort_by(|a, b| {
                    let ca = fk_samples[*a as usize].2.dot(dir);
                    let cb = fk_samples[*b as usize].2.dot(dir);
                    cb.total_cmp(&ca)
                });
                let mut ok = false;
                for attempt in 0..params.max_attempts {
                    let q0 = if attempt < ordered.len() {
                        fk_samples[ordered[attempt] as usize].0
                    } else {
                        let mut q = [0.0; ARM_DOF];
                        for (i, qi) in q.iter_mut().enumerate() {
                            let l = model.joint_limits[3 + i];
                            *qi = voxel_rng.gen_range(l.min..l.max);
                        }
                        q
                    };
                    if solve_approach_ik(model, &centroid, dir, q0, params).is_some() {
                        ok = true;
                        break;
                    }
                }
                if ok {
                    reached += 1;
                }
            }
            reached as f32 / dirs.len() as f32
        })
        .collect();

    let mut map = ReachabilityMap {
        voxel_size,
        origin,
        dims,
        scores,
        sample_count: samples as u64,
        seed,
        boundary: Vec::new(),
    };
    map.rebuild_boundary();
    Ok(map)
}

/// Damped-least-squares IK for the 5-DOF approach task: tool at `target`
/// with its z-axis along `dir` (roll free). Returns the solution joint
/// vector on success.
pub fn solve_approach_ik(
    model: &RobotModel,
    target: &Vector3<f64>,
    dir: &Vector3<f64>,
    q0: [f64; ARM_DOF],
    params: &BuildParams,
) -> Option<[f64; ARM_DOF]> {
    let mut q = q0;
    let damping = 0.05;
    let step_cap = 0.5;
    let mut last_err = f64::INFINITY;
    let mut stall = 0usize;
    for _ in 0..params.max_iterations {
        let t = arm_fk(model, &q);
        let e_lin = target - t.translation;
        let z = t.z_axis();
        // Minimal rotation aligning z with dir; no roll component.
        let cross = z.cross(dir);
        let dot = z.dot(dir).clamp(-1.0, 1.0);
        let angle = dot.acos();
        let e_ang = if cross.norm() > 1e-12 {
            cross.normalize() * angle
        } else if dot < 0.0 {
            let aux = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            (aux - z * z.dot(&aux)).normalize() * angle
        } else {
            Vector3::zeros()
        };
        if e_lin.norm() < params.position_tol && angle < params.axis_tol {
            return Some(q);
        }
        let err = e_lin.norm() + 0.2 * angle;
        if last_err - err < 1e-7 {
            stall += 1;
            if stall > 4 {
                return None;
            }
        } else {
            stall = 0;
        }
        last_err = err;

        let j = arm_jacobian(model, &q);
        let mut e = Vector6::zeros();
        e.fixed_rows_mut::<3>(0).copy_from(&e_lin);
        e.fixed_rows_mut::<3>(3).copy_from(&e_ang);
        let jjt = j * j.transpose() + Matrix6::identity() * damping * damping;
        let Some(inv) = jjt.try_inverse() else {
            return None;
        };
        let dq = j.transpose() * (inv * e);
        for i in 0..ARM_DOF {
            let step = dq[i].clamp(-step_cap, step_cap);
            let l = model.joint_limits[3 + i];
            q[i] = (q[i] + step).clamp(l.min, l.max);
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Persistence: fixed little-endian layout.
//   magic "RMAP" | version u32 | voxel_size f64 | origin 3xf64 |
//   dims 3xu32 | seed u64 | sample_count u64 | scores (row-major f32)
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"RMAP";
const VERSION: u32 = 1;

impl ReachabilityMap {
    pub fn write_to(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.voxel_size.to_le_bytes())?;
        for i in 0..3 {
            w.write_all(&self.origin[i].to_le_bytes())?;
        }
        for d in self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.sample_count.to_le_bytes())?;
        for s in &self.scores {
            w.write_all(&s.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl std::io::Read) -> Result<Self> {
        fn read_exact<const N: usize>(r: &mut impl std::io::Read) -> Result<[u8; N]> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf).map_err(|e| Error::Io {
                path: "<reachability map>".into(),
                source: e,
            })?;
            Ok(buf)
        }
        let magic: [u8; 4] = read_exact(r)?;
        if &magic != MAGIC {
            return Err(Error::invalid("bad reachability map magic"));
        }
        let version = u32::from_le_bytes(read_exact(r)?);
        if version != VERSION {
            return Err(Error::invalid(format!("unsupported map version {version}")));
        }
        let voxel_size = f64::from_le_bytes(read_exact(r)?);
        let origin = Vector3::new(
            f64::from_le_bytes(read_exact(r)?),
            f64::from_le_bytes(read_exact(r)?),
            f64::from_le_bytes(read_exact(r)?),
        );
        let dims = [
            u32::from_le_bytes(read_exact(r)?) as usize,
            u32::from_le_bytes(read_exact(r)?) as usize,
            u32::from_le_bytes(read_exact(r)?) as usize,
        ];
        let seed = u64::from_le_bytes(read_exact(r)?);
        let sample_count = u64::from_le_bytes(read_exact(r)?);
        let count = dims[0] * dims[1] * dims[2];
        let mut scores = Vec::with_capacity(count);
        for _ in 0..count {
            scores.push(f32::from_le_bytes(read_exact(r)?));
        }
        let mut map = ReachabilityMap {
            voxel_size,
            origin,
            dims,
            scores,
            sample_count,
            seed,
            boundary: Vec::new(),
        };
        map.rebuild_boundary();
        Ok(map)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        self.write_to(&mut f).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut f = std::fs::File::open(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::read_from(&mut f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use std::sync::OnceLock;

    /// Shared moderate-quality test map; built once per test binary.
    pub(crate) fn test_map() -> &'static ReachabilityMap {
        static MAP: OnceLock<ReachabilityMap> = OnceLock::new();
        MAP.get_or_init(|| {
            let model = RobotModel::default();
            let params = BuildParams {
                max_attempts: 10,
                ..BuildParams::default()
            };
            build_map(&model, 20_000, 0.12, 9001, &params).expect("test map build")
        })
    }

    #[test]
    fn sig_midpoint_and_closed_form() {
        let p = SigParams::default();
        assert_abs_diff_eq!(sig(1.0, &p), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(sig(0.0, &p), 1.0 / (1.0 + 8.0f64.exp()), epsilon = 1e-15);
        // 1/(1+e^8) ≈ 3.3535e-4
        assert!((sig(0.0, &p) - 3.3535e-4).abs() < 1e-7);
    }

    #[test]
    fn sig_strictly_monotone_on_grid() {
        let p = SigParams::default();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..1000 {
            let omega = i as f64 * 3.0 / 999.0;
            let s = sig(omega, &p);
            assert!(s > prev, "sig not strictly increasing at {omega}");
            assert!(s > 0.0 && s < 1.0);
            prev = s;
        }
    }

    #[test]
    fn build_rejects_bad_inputs() {
        let model = RobotModel::default();
        let p = BuildParams::default();
        assert!(build_map(&model, 100, -0.1, 1, &p).is_err());
        assert!(build_map(&model, 100, 10.0, 1, &p).is_err());
        assert!(build_map(&model, 0, 0.1, 1, &p).is_err());
    }

    #[test]
    fn map_scores_zero_beyond_reach_and_low_at_origin() {
        let map = test_map();
        let model = RobotModel::default();
        let reach = model.arm_reach_bound();
        assert_eq!(map.score_at_point(&Vector3::new(reach + 0.3, 0.0, 0.0)), 0.0);
        // The voxel at the mount origin sits below the first joint and
        // cannot host the full approach bundle.
        assert!(map.score_at_point(&Vector3::zeros()) < 0.5);
    }

    #[test]
    fn high_reachability_set_is_nonempty_and_mid_shell() {
        let map = test_map();
        assert!(map.boundary_len() > 0, "no voxel above 0.95");
        for v in &map.boundary {
            assert!(v.norm > 0.1 && v.norm < 1.1, "boundary voxel at {}", v.norm);
        }
    }

    /// Dense-FK oracle: with a million random configurations, voxels whose
    /// sample coverage spans nearly the whole direction bundle must carry a
    /// high score in the map (IK should find what sampling already proved).
    #[test]
    fn dense_fk_sampling_oracle_agrees_with_map() {
        let map = test_map();
        let model = RobotModel::default();
        let dirs = canonical_directions();
        let mut rng = ChaCha8Rng::seed_from_u64(777);
        let mut coverage: std::collections::HashMap<usize, u32> = std::collections::HashMap::new();
        for _ in 0..1_000_000usize {
            let mut q = [0.0; ARM_DOF];
            for (i, qi) in q.iter_mut().enumerate() {
                let l = model.joint_limits[3 + i];
                *qi = rng.gen_range(l.min..l.max);
            }
            let t = arm_fk(&model, &q);
            let rel = (t.translation - map.origin) / map.voxel_size;
            let (ix, iy, iz) = (rel.x.floor() as i64, rel.y.floor() as i64, rel.z.floor() as i64);
            if ix < 0 || iy < 0 || iz < 0 {
                continue;
            }
            let (ix, iy, iz) = (ix as usize, iy as usize, iz as usize);
            if ix >= map.dims[0] || iy >= map.dims[1] || iz >= map.dims[2] {
                continue;
            }
            let c = map.centroid(ix, iy, iz);
            if target_self_occluded(&model, &c) {
                continue; // same feasibility definition as the map build
            }
            let z = t.z_axis();
            let (best_dir, best_cos) = dirs
                .iter()
                .enumerate()
                .map(|(k, d)| (k, d.dot(&z)))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            // A direction counts as sampled when the observed axis is within
            // the bundle's own angular resolution of it.
            if best_cos > 0.92 {
                let key = map.flat_index(ix, iy, iz) * 32 + best_dir;
                coverage.entry(key).or_insert(0);
            }
        }
        let mut per_voxel: std::collections::HashMap<usize, u32> = std::collections::HashMap::new();
        for key in coverage.keys() {
            *per_voxel.entry(key / 32).or_insert(0) += 1;
        }
        let mut rich = 0usize;
        let mut rich_and_high = 0usize;
        for (voxel, dirs_covered) in per_voxel {
            if dirs_covered >= 25 {
                rich += 1;
                if map.scores[voxel] > REACHABLE_THRESHOLD {
                    rich_and_high += 1;
                }
            }
        }
        assert!(rich > 0, "oracle found no direction-rich voxels");
        assert!(
            rich_and_high * 10 >= rich * 8,
            "map confirms only {rich_and_high}/{rich} oracle-rich voxels"
        );
    }

    /// Hand-built spherically symmetric map: a full shell of unit scores.
    fn synthetic_shell_map(voxel: f64, r_in: f64, r_out: f64) -> ReachabilityMap {
        let half = r_out + 2.0 * voxel;
        let n = (2.0 * half / voxel).ceil() as usize;
        let mut map = ReachabilityMap {
            voxel_size: voxel,
            origin: Vector3::new(-half, -half, -half),
            dims: [n, n, n],
            scores: vec![0.0; n * n * n],
            sample_count: 0,
            seed: 0,
            boundary: Vec::new(),
        };
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    let r = map.centroid(ix, iy, iz).norm();
                    if r >= r_in && r <= r_out {
                        let fi = map.flat_index(ix, iy, iz);
                        map.scores[fi] = 1.0;
                    }
                }
            }
        }
        map.rebuild_boundary();
        map
    }

    #[test]
    fn directional_threshold_symmetric_and_scale_invariant() {
        let map = synthetic_shell_map(0.05, 0.3, 0.6);
        let e1 = Vector3::new(0.8, 0.0, 0.0);
        let p1 = map.directional_threshold(&e1).unwrap();
        let p10 = map.directional_threshold(&(e1 * 10.0)).unwrap();
        assert_eq!(p1, p10, "direction-only dependence violated");
        // Collinear with +x within one voxel's angular width at that radius.
        let cos = p1.normalize().dot(&Vector3::x());
        let angular_width = (map.voxel_size / p1.norm()).atan();
        assert!(cos.acos() <= angular_width + 1e-9);
        // Ties along the axis resolve to the outer shell.
        assert!(p1.norm() > 0.5, "expected outer-boundary pick, got {}", p1.norm());

        // Scale invariance also holds on the real map.
        let real = test_map();
        let e = Vector3::new(0.3, -0.5, 0.2);
        assert_eq!(
            real.directional_threshold(&e).unwrap(),
            real.directional_threshold(&(e * 10.0)).unwrap()
        );
    }

    #[test]
    fn directional_threshold_matches_exhaustive_scan() {
        let map = test_map();
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..200 {
            let e = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if e.norm() < 1e-3 {
                continue;
            }
            let got = map.directional_threshold(&e).unwrap();
            // Oracle: scan the raw grid, ignoring the cached boundary list.
            let dir = e.normalize();
            let mut best: Option<(f64, f64, Vector3<f64>)> = None;
            for ix in 0..map.dims[0] {
                for iy in 0..map.dims[1] {
                    for iz in 0..map.dims[2] {
                        if map.score_at(ix, iy, iz) <= REACHABLE_THRESHOLD {
                            continue;
                        }
                        let p = map.centroid(ix, iy, iz);
                        let n = p.norm();
                        if n < 1e-9 {
                            continue;
                        }
                        let cos = (p / n).dot(&dir);
                        let better = match &best {
                            None => true,
                            Some((bc, bn, _)) => cos > bc + 1e-12 || (cos > bc - 1e-12 && n > *bn),
                        };
                        if better {
                            let bc = best.map(|(bc, _, _)| bc).unwrap_or(f64::NEG_INFINITY);
                            best = Some((cos.max(bc), n, p));
                        }
                    }
                }
            }
            let (_, _, oracle) = best.expect("nonempty set");
            assert_abs_diff_eq!(got, oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn omega_definition_and_arithmetic() {
        let map = test_map();
        let params = SigParams::default();
        let dir = Vector3::new(0.7, 0.3, 0.2).normalize();
        let p = map.directional_threshold(&dir).unwrap();
        // Error exactly at the boundary in its own direction: omega = 1.
        let w = map.omega(&p, &params).unwrap();
        assert_abs_diff_eq!(w.omega, 1.0, epsilon = 1e-9);
        // Twice as far: omega = 0.5.
        let w2 = map.omega(&(p * 2.0), &params).unwrap();
        assert_abs_diff_eq!(w2.omega, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(w2.threshold_norm / w2.error_norm, 0.5, epsilon = 1e-9);
        // Near-zero error: capped.
        let w0 = map.omega(&(dir * 1e-12), &params).unwrap();
        assert_abs_diff_eq!(w0.omega, OMEGA_MAX, epsilon = 1e-12);
    }

    #[test]
    fn build_is_deterministic_for_fixed_seed() {
        let model = RobotModel::default();
        let params = BuildParams {
            max_attempts: 4,
            max_iterations: 30,
            ..BuildParams::default()
        };
        let a = build_map(&model, 2_000, 0.25, 5, &params).unwrap();
        let b = build_map(&model, 2_000, 0.25, 5, &params).unwrap();
        assert_eq!(a.scores, b.scores);
    }

    #[test]
    fn persistence_round_trip_is_exact() {
        let model = RobotModel::default();
        let params = BuildParams {
            max_attempts: 3,
            max_iterations: 25,
            ..BuildParams::default()
        };
        let map = build_map(&model, 1_000, 0.3, 7, &params).unwrap();
        let mut buf = Vec::new();
        map.write_to(&mut buf).unwrap();
        let loaded = ReachabilityMap::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(map.scores, loaded.scores);
        assert_eq!(map.dims, loaded.dims);
        assert_eq!(map.seed, loaded.seed);
        assert_eq!(map.sample_count, loaded.sample_count);
        assert_eq!(map.voxel_size, loaded.voxel_size);
        assert_eq!(map.origin, loaded.origin);
    }

    #[test]
    fn omega_scale_invariance() {
        // Scaling all map distances and the error identically leaves omega
        // unchanged (dimensionless ratio).
        let map = test_map();
        let params = SigParams::default();
        let mut scaled = map.clone();
        let s = 2.5;
        scaled.voxel_size *= s;
        scaled.origin *= s;
        scaled.rebuild_boundary();
        let e = Vector3::new(0.9, -0.4, 0.3);
        let w = map.omega(&e, &params).unwrap();
        let ws = scaled.omega(&(e * s), &params).unwrap();
        assert_abs_diff_eq!(w.omega, ws.omega, epsilon = 1e-9);
    }
}
