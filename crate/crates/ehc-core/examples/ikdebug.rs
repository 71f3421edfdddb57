use ehc_core::kinematics::*;
use ehc_core::reachability::*;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let model = RobotModel::default();
    let dirs = canonical_directions();
    let big = BuildParams { max_attempts: 200, max_iterations: 120, ..BuildParams::default() };
    for c in [
        Vector3::new(0.45, 0.0, 0.05),
        Vector3::new(0.40, 0.0, 0.25),
        Vector3::new(0.35, 0.20, 0.15),
        Vector3::new(0.30, 0.0, 0.40),
        Vector3::new(-0.35, 0.0, 0.15),
    ] {
        let mut vr = ChaCha8Rng::seed_from_u64(99);
        let mut fails = Vec::new();
        for (k, d) in dirs.iter().enumerate() {
            let mut ok = false;
            for _ in 0..big.max_attempts {
                let mut q0 = [0.0; 6];
                for (i, qi) in q0.iter_mut().enumerate() {
                    let l = model.joint_limits[3 + i]; *qi = vr.gen_range(l.min..l.max);
                }
                if solve_approach_ik(&model, &c, d, q0, &big).is_some() { ok = true; break; }
            }
            if !ok { fails.push((d.x, d.y, d.z)); }
        }
        println!("voxel {:.2?}: {}/26 ok; failed dirs: {:?}", (c.x, c.y, c.z), 26 - fails.len(), fails);
    }
}
