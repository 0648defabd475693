//! Serial-arm kinematics: Denavit-Hartenberg link transforms, chain
//! composition, pose inversion, and a damped-least-squares inverse
//! kinematics solver used by the feedforward path.
//!
//! All angles are radians, all lengths metres. A joint variable enters a
//! link transform only through the rotation about the local z axis, so
//! every joint is revolute.

use nalgebra::{Matrix3, Matrix4, Matrix6, Rotation3, Vector3, Vector6};
use thiserror::Error;

/// Orthonormality slack accepted by [`HomogeneousTransform`] validation.
const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("chain has no links")]
    EmptyChain,
    #[error("link parameter {name} is not finite")]
    NonFiniteParameter { name: &'static str },
    #[error("expected {expected} joint angles, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not a rigid transform: {defect}")]
    InvalidTransform { defect: String },
    #[error("no convergence after {iterations} iterations, best residual {best_residual:.3e}")]
    NoConvergence { iterations: usize, best_residual: f64 },
}

/// One Denavit-Hartenberg link. The joint angle is added to
/// `theta_offset` when the link transform is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DhLink {
    /// Link length along the common normal, m.
    pub a: f64,
    /// Twist about the local x axis, rad.
    pub alpha: f64,
    /// Offset along the previous z axis, m.
    pub d: f64,
    /// Constant part of the joint rotation, rad.
    pub theta_offset: f64,
}

impl DhLink {
    pub fn new(a: f64, alpha: f64, d: f64, theta_offset: f64) -> Self {
        DhLink { a, alpha, d, theta_offset }
    }
}

/// Ordered sequence of links from base to end effector.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    links: Vec<DhLink>,
}

impl KinematicChain {
    pub fn new(links: Vec<DhLink>) -> Result<Self, KinematicsError> {
        if links.is_empty() {
            return Err(KinematicsError::EmptyChain);
        }
        for l in &links {
            for (v, name) in [
                (l.a, "a"),
                (l.alpha, "alpha"),
                (l.d, "d"),
                (l.theta_offset, "theta_offset"),
            ] {
                if !v.is_finite() {
                    return Err(KinematicsError::NonFiniteParameter { name });
                }
            }
        }
        Ok(KinematicChain { links })
    }

    pub fn links(&self) -> &[DhLink] {
        &self.links
    }

    pub fn n_joints(&self) -> usize {
        self.links.len()
    }

    /// Total reach: an upper bound on the end-effector distance from the
    /// base, used to reject hopeless inverse-kinematics targets early.
    pub fn reach(&self) -> f64 {
        self.links.iter().map(|l| l.a.abs() + l.d.abs()).sum()
    }

    /// Default six-joint arm: a vertical shoulder column, two in-plane
    /// arm links, and a spherical wrist. The dimensions are plausible
    /// for a mid-size industrial arm but are this crate's own choice;
    /// scenario files can override them.
    pub fn default_six_link() -> Self {
        let hp = std::f64::consts::FRAC_PI_2;
        KinematicChain::new(vec![
            DhLink::new(0.0, hp, 0.495, 0.0),
            DhLink::new(0.9, 0.0, 0.0, 0.0),
            DhLink::new(0.175, hp, 0.0, 0.0),
            DhLink::new(0.0, -hp, 0.96, 0.0),
            DhLink::new(0.0, hp, 0.0, 0.0),
            DhLink::new(0.0, 0.0, 0.125, 0.0),
        ])
        .expect("default chain is valid")
    }
}

/// Rigid transform stored as a 4x4 matrix with bottom row `[0,0,0,1]`
/// and an orthonormal, right-handed rotation block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneousTransform {
    m: Matrix4<f64>,
}

impl HomogeneousTransform {
    pub fn identity() -> Self {
        HomogeneousTransform { m: Matrix4::identity() }
    }

    /// Validates the rigid-transform invariants before accepting `m`.
    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self, KinematicsError> {
        let bottom_ok = m.row(3) == Matrix4::identity().row(3);
        if !bottom_ok {
            return Err(KinematicsError::InvalidTransform {
                defect: "bottom row is not [0,0,0,1]".into(),
            });
        }
        let r = m.fixed_view::<3, 3>(0, 0).into_owned();
        let gram_defect = (r.transpose() * r - Matrix3::identity()).norm();
        if gram_defect > ROTATION_TOL {
            return Err(KinematicsError::InvalidTransform {
                defect: format!("rotation block not orthonormal, defect {gram_defect:.3e}"),
            });
        }
        if (r.determinant() - 1.0).abs() > ROTATION_TOL {
            return Err(KinematicsError::InvalidTransform {
                defect: "rotation block is not right-handed".into(),
            });
        }
        Ok(HomogeneousTransform { m })
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.m
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.m.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.m.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn compose(&self, rhs: &HomogeneousTransform) -> HomogeneousTransform {
        HomogeneousTransform { m: self.m * rhs.m }
    }
}

/// Link transform: rotation about z by `q + theta_offset`, offset `d`
/// along z, length `a` along the new x, then twist `alpha` about x.
pub fn dh_transform(link: &DhLink, q: f64) -> HomogeneousTransform {
    let (sq, cq) = (q + link.theta_offset).sin_cos();
    let (sa, ca) = link.alpha.sin_cos();
    let m = Matrix4::new(
        cq, -sq * ca, sq * sa, link.a * cq,
        sq, cq * ca, -cq * sa, link.a * sq,
        0.0, sa, ca, link.d,
        0.0, 0.0, 0.0, 1.0,
    );
    HomogeneousTransform { m }
}

/// Base-to-end-effector transform: the ordered product of all link
/// transforms evaluated at the given joint angles.
pub fn forward_kinematics(
    chain: &KinematicChain,
    q: &[f64],
) -> Result<HomogeneousTransform, KinematicsError> {
    if q.len() != chain.n_joints() {
        return Err(KinematicsError::DimensionMismatch {
            expected: chain.n_joints(),
            got: q.len(),
        });
    }
    let mut t = HomogeneousTransform::identity();
    for (link, &qi) in chain.links().iter().zip(q) {
        t = t.compose(&dh_transform(link, qi));
    }
    Ok(t)
}

/// Rigid-transform inverse `[R^T, -R^T p]`, cheaper and better
/// conditioned than general 4x4 inversion.
pub fn invert_transform(t: &HomogeneousTransform) -> HomogeneousTransform {
    let rt = t.rotation().transpose();
    let p = -rt * t.translation();
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p);
    HomogeneousTransform { m }
}

/// Applies the transform to a point: homogeneous multiply, then drop
/// the unit coordinate.
pub fn transform_point(t: &HomogeneousTransform, p: &Vector3<f64>) -> Vector3<f64> {
    t.rotation() * p + t.translation()
}

/// Position plus orientation goal for the inverse-kinematics solver.
/// The orientation columns are the end-effector direction unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTarget {
    pub position: Vector3<f64>,
    pub orientation: Matrix3<f64>,
}

impl PoseTarget {
    pub fn new(position: Vector3<f64>, orientation: Matrix3<f64>) -> Result<Self, KinematicsError> {
        let gram_defect = (orientation.transpose() * orientation - Matrix3::identity()).norm();
        if gram_defect > ROTATION_TOL || (orientation.determinant() - 1.0).abs() > ROTATION_TOL {
            return Err(KinematicsError::InvalidTransform {
                defect: format!("target orientation not orthonormal, defect {gram_defect:.3e}"),
            });
        }
        Ok(PoseTarget { position, orientation })
    }

    pub fn from_transform(t: &HomogeneousTransform) -> Self {
        PoseTarget {
            position: t.translation(),
            orientation: t.rotation(),
        }
    }
}

/// Position error stacked over the rotation-vector orientation error.
pub fn pose_error(current: &HomogeneousTransform, target: &PoseTarget) -> Vector6<f64> {
    let e_pos = target.position - current.translation();
    let r_err = target.orientation * current.rotation().transpose();
    let e_rot = Rotation3::from_matrix_unchecked(r_err).scaled_axis();
    let mut e = Vector6::zeros();
    e.fixed_rows_mut::<3>(0).copy_from(&e_pos);
    e.fixed_rows_mut::<3>(3).copy_from(&e_rot);
    e
}

/// Scalar residual: position error in metres plus geodesic orientation
/// error in radians.
pub fn pose_residual(e: &Vector6<f64>) -> f64 {
    e.fixed_rows::<3>(0).norm() + e.fixed_rows::<3>(3).norm()
}

/// Damping of the least-squares step; keeps the iteration bounded near
/// singular Jacobians.
const IK_DAMPING: f64 = 1e-3;
/// Per-component joint step clamp, rad.
const IK_STEP_CLAMP: f64 = 0.2;
/// Finite-difference step for the Jacobian, rad.
const IK_FD_STEP: f64 = 1e-6;

/// Damped-least-squares inverse kinematics on a finite-difference
/// Jacobian. Deterministic: no randomization, fixed damping and step
/// clamp. Returns the joint vector whose forward pose is within `tol`
/// (position error in m plus orientation geodesic error in rad) of the
/// target, or the best residual seen when `max_iter` runs out.
pub fn inverse_kinematics_numeric(
    chain: &KinematicChain,
    target: &PoseTarget,
    q_seed: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, KinematicsError> {
    if q_seed.len() != chain.n_joints() {
        return Err(KinematicsError::DimensionMismatch {
            expected: chain.n_joints(),
            got: q_seed.len(),
        });
    }
    let n = chain.n_joints();
    let mut q = q_seed.to_vec();
    let mut best_residual = f64::INFINITY;
    for iteration in 0..=max_iter {
        let e = pose_error(&forward_kinematics(chain, &q)?, target);
        let residual = pose_residual(&e);
        best_residual = best_residual.min(residual);
        if residual < tol {
            return Ok(q);
        }
        if iteration == max_iter {
            break;
        }
        // Columns: de/dq_j by forward differences.
        let mut jac = Matrix6::<f64>::zeros();
        debug_assert_eq!(n, 6, "finite-difference Jacobian is sized for 6 joints");
        for j in 0..n {
            let mut qp = q.clone();
            qp[j] += IK_FD_STEP;
            let ep = pose_error(&forward_kinematics(chain, &qp)?, target);
            jac.set_column(j, &((ep - e) / IK_FD_STEP));
        }
        // (J^T J + damping^2 I) dq = -J^T e
        let jt = jac.transpose();
        let lhs = jt * jac + Matrix6::identity() * IK_DAMPING * IK_DAMPING;
        let rhs = -jt * e;
        let Some(dq) = lhs.lu().solve(&rhs) else { break };
        // Backtrack: halve the clamped step until the residual drops, so
        // the iteration cannot oscillate around a singular configuration.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..24 {
            let mut trial = q.clone();
            for j in 0..n {
                trial[j] += (scale * dq[j]).clamp(-IK_STEP_CLAMP, IK_STEP_CLAMP);
            }
            let e_trial = pose_error(&forward_kinematics(chain, &trial)?, target);
            if pose_residual(&e_trial) < residual {
                q = trial;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(KinematicsError::NoConvergence { iterations: max_iter, best_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_matrix_eq(got: &Matrix4<f64>, want: &Matrix4<f64>, tol: f64) {
        for i in 0..4 {
            for j in 0..4 {
                assert!(
                    (got[(i, j)] - want[(i, j)]).abs() <= tol,
                    "entry ({i},{j}): got {} want {}",
                    got[(i, j)],
                    want[(i, j)]
                );
            }
        }
    }

    #[test]
    fn dh_all_zero_is_identity() {
        let t = dh_transform(&DhLink::new(0.0, 0.0, 0.0, 0.0), 0.0);
        assert_matrix_eq(t.matrix(), &Matrix4::identity(), 0.0);
    }

    #[test]
    fn dh_quarter_turn_with_unit_length() {
        let t = dh_transform(&DhLink::new(1.0, 0.0, 0.0, 0.0), std::f64::consts::FRAC_PI_2);
        let want = Matrix4::new(
            0.0, -1.0, 0.0, 0.0,
            1.0, 0.0, 0.0, 1.0,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        assert_matrix_eq(t.matrix(), &want, 1e-15);
    }

    #[test]
    fn dh_pure_twist_with_offset() {
        let t = dh_transform(
            &DhLink::new(0.0, std::f64::consts::FRAC_PI_2, 0.5, 0.0),
            0.0,
        );
        let want = Matrix4::new(
            1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, -1.0, 0.0,
            0.0, 1.0, 0.0, 0.5,
            0.0, 0.0, 0.0, 1.0,
        );
        assert_matrix_eq(t.matrix(), &want, 1e-15);
    }

    #[test]
    fn theta_offset_adds_to_joint_angle() {
        let a = dh_transform(&DhLink::new(0.3, 0.2, 0.1, 0.25), 0.5);
        let b = dh_transform(&DhLink::new(0.3, 0.2, 0.1, 0.0), 0.75);
        assert_matrix_eq(a.matrix(), b.matrix(), 1e-15);
    }

    #[test]
    fn forward_of_identity_links_is_identity() {
        let chain =
            KinematicChain::new(vec![DhLink::new(0.0, 0.0, 0.0, 0.0); 6]).unwrap();
        let t = forward_kinematics(&chain, &[0.0; 6]).unwrap();
        assert_matrix_eq(t.matrix(), &Matrix4::identity(), 0.0);
    }

    #[test]
    fn single_link_chain_matches_link_transform() {
        let link = DhLink::new(0.4, -0.3, 0.2, 0.1);
        let chain = KinematicChain::new(vec![link]).unwrap();
        let t = forward_kinematics(&chain, &[0.7]).unwrap();
        assert_matrix_eq(t.matrix(), dh_transform(&link, 0.7).matrix(), 0.0);
    }

    #[test]
    fn forward_rejects_wrong_joint_count() {
        let chain = KinematicChain::default_six_link();
        assert_eq!(
            forward_kinematics(&chain, &[0.0; 5]),
            Err(KinematicsError::DimensionMismatch { expected: 6, got: 5 })
        );
    }

    /// Golden pose for the default chain, frozen from an independent
    /// oracle that multiplies the four basic transforms per link
    /// (rot z, trans z, trans x, rot x) instead of the closed form.
    #[test]
    fn default_chain_golden_pose() {
        let chain = KinematicChain::default_six_link();
        let q: Vec<f64> = [30.0f64, 60.0, -45.0, 15.0, 45.0, 90.0]
            .iter()
            .map(|d| d.to_radians())
            .collect();
        let t = forward_kinematics(&chain, &q).unwrap();
        let want = Matrix4::new(
            0.26645656219842445, -0.50436396268507211, 0.82135126079285259, 0.85394880577655319,
            -0.96151630373780794, -0.079869804220585594, 0.26288250611280473, 0.46661196471360394,
            -0.066987298107780535, -0.85978939718885627, -0.50623600659558243, 0.32914790223698254,
            0.0, 0.0, 0.0, 1.0,
        );
        assert_matrix_eq(t.matrix(), &want, 1e-14);
    }

    #[test]
    fn regrouped_products_agree() {
        let chain = KinematicChain::default_six_link();
        let q: Vec<f64> = (0..6).map(|k| 0.3 * k as f64 - 0.8).collect();
        let left = forward_kinematics(&chain, &q).unwrap();
        // Right-associated product of the same factors.
        let mut right = HomogeneousTransform::identity();
        for (link, &qi) in chain.links().iter().zip(&q).rev() {
            right = dh_transform(link, qi).compose(&right);
        }
        assert_matrix_eq(left.matrix(), right.matrix(), 1e-12);
    }

    #[test]
    fn link_transforms_satisfy_rigid_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let link = DhLink::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-3.14..3.14),
                rng.random_range(-1.0..1.0),
                rng.random_range(-3.14..3.14),
            );
            let q = rng.random_range(-3.14..3.14);
            let t = dh_transform(&link, q);
            assert!(HomogeneousTransform::from_matrix(*t.matrix()).is_ok());
        }
    }

    #[test]
    fn invert_identity_and_translation() {
        let id = HomogeneousTransform::identity();
        assert_matrix_eq(invert_transform(&id).matrix(), &Matrix4::identity(), 0.0);
        let mut m = Matrix4::identity();
        m[(0, 3)] = 1.0;
        m[(1, 3)] = 2.0;
        m[(2, 3)] = 3.0;
        let t = HomogeneousTransform::from_matrix(m).unwrap();
        let inv = invert_transform(&t);
        assert_eq!(inv.translation(), Vector3::new(-1.0, -2.0, -3.0));
    }

    #[test]
    fn inverse_round_trip_on_random_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let chain = KinematicChain::default_six_link();
        for _ in 0..50 {
            let q: Vec<f64> = (0..6).map(|_| rng.random_range(-2.5..2.5)).collect();
            let t = forward_kinematics(&chain, &q).unwrap();
            let prod = t.compose(&invert_transform(&t));
            let defect = (prod.matrix() - Matrix4::identity()).norm();
            assert!(defect < 1e-10, "round trip defect {defect:.3e}");
        }
    }

    #[test]
    fn point_transforms() {
        let id = HomogeneousTransform::identity();
        let p = Vector3::new(0.3, -0.4, 0.9);
        assert_eq!(transform_point(&id, &p), p);

        let mut m = Matrix4::identity();
        m[(2, 3)] = 1.0;
        let lift = HomogeneousTransform::from_matrix(m).unwrap();
        assert_eq!(
            transform_point(&lift, &Vector3::zeros()),
            Vector3::new(0.0, 0.0, 1.0)
        );

        let half_turn = dh_transform(&DhLink::new(0.0, 0.0, 0.0, 0.0), std::f64::consts::PI);
        let q = transform_point(&half_turn, &Vector3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(q.x, -1.0, epsilon = 1e-15);
        assert!(q.y.abs() < 1e-15);
    }

    #[test]
    fn from_matrix_rejects_sheared_block() {
        let mut m = Matrix4::identity();
        m[(0, 1)] = 0.1;
        assert!(matches!(
            HomogeneousTransform::from_matrix(m),
            Err(KinematicsError::InvalidTransform { .. })
        ));
    }

    #[test]
    fn ik_fixed_point_returns_seed() {
        let chain = KinematicChain::default_six_link();
        let q_star: Vec<f64> = vec![0.4, -0.2, 0.6, 0.1, -0.5, 0.9];
        let target =
            PoseTarget::from_transform(&forward_kinematics(&chain, &q_star).unwrap());
        let q = inverse_kinematics_numeric(&chain, &target, &q_star, 1e-9, 50).unwrap();
        assert_eq!(q, q_star);
    }

    #[test]
    fn ik_converges_from_perturbed_seed() {
        let chain = KinematicChain::default_six_link();
        let q_star: Vec<f64> = vec![0.4, -0.2, 0.6, 0.1, -0.5, 0.9];
        let target =
            PoseTarget::from_transform(&forward_kinematics(&chain, &q_star).unwrap());
        let seed: Vec<f64> = q_star.iter().map(|v| v + 0.05).collect();
        let q = inverse_kinematics_numeric(&chain, &target, &seed, 1e-6, 100).unwrap();
        let e = pose_error(&forward_kinematics(&chain, &q).unwrap(), &target);
        assert!(pose_residual(&e) < 1e-6);
    }

    #[test]
    fn ik_reports_unreachable_target() {
        let chain = KinematicChain::default_six_link();
        let far = Vector3::new(chain.reach() + 1.0, 0.0, 0.0);
        let target = PoseTarget::new(far, Matrix3::identity()).unwrap();
        let out = inverse_kinematics_numeric(&chain, &target, &[0.0; 6], 1e-6, 60);
        assert!(matches!(out, Err(KinematicsError::NoConvergence { .. })));
    }

    #[test]
    fn ik_round_trip_over_random_configurations() {
        let chain = KinematicChain::default_six_link();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for case in 0..100 {
            let q_star: Vec<f64> = (0..6).map(|_| rng.random_range(-1.2..1.2)).collect();
            let target =
                PoseTarget::from_transform(&forward_kinematics(&chain, &q_star).unwrap());
            let seed: Vec<f64> = q_star.iter().map(|v| v + 0.05).collect();
            let q = inverse_kinematics_numeric(&chain, &target, &seed, 1e-6, 200)
                .unwrap_or_else(|e| panic!("case {case}: {e}"));
            let e = pose_error(&forward_kinematics(&chain, &q).unwrap(), &target);
            assert!(pose_residual(&e) < 1e-6, "case {case}");
        }
    }
}
