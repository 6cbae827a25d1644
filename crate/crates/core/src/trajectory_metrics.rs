//! Trajectory alignment and error metrics: ATE RMSE (absolute, after closed-form
//! least-squares alignment), ATE normalized by reference path length, and RPE.

use nalgebra::{Isometry3, Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{trajectory_length, Trajectory};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("alignment needs at least 3 pairs, got {0}")]
    InsufficientPairs(usize),
    #[error("degenerate point configuration (collinear or coincident)")]
    DegenerateGeometry,
    #[error("point sets differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("reference trajectory has zero length")]
    ZeroLength,
    #[error("RPE with spacing {delta} needs at least {} pairs, got {pairs}", delta + 1)]
    TooFewPairs { pairs: usize, delta: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentMode {
    /// Rotation and translation.
    #[default]
    Se3,
    /// Rotation, translation and uniform scale (monocular runs).
    Sim3,
}

/// `x -> scale · R x + t`. `scale` is 1 unless aligned in [`AlignmentMode::Sim3`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform { rotation: UnitQuaternion::identity(), translation: Vector3::zeros(), scale: 1.0 }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }
}

/// Least-squares transform mapping `estimate` onto `reference`
/// (minimizing Σ‖s·R·e_i + t − r_i‖²), with a proper rotation.
pub fn align_umeyama(
    estimate: &[Vector3<f64>],
    reference: &[Vector3<f64>],
    mode: AlignmentMode,
) -> Result<RigidTransform, TrajectoryError> {
    if estimate.len() != reference.len() {
        return Err(TrajectoryError::LengthMismatch(estimate.len(), reference.len()));
    }
    let n = estimate.len();
    if n < 3 {
        return Err(TrajectoryError::InsufficientPairs(n));
    }
    let inv_n = 1.0 / n as f64;
    let mu_e = estimate.iter().sum::<Vector3<f64>>() * inv_n;
    let mu_r = reference.iter().sum::<Vector3<f64>>() * inv_n;
    let mut cov = Matrix3::zeros();
    let mut var_e = 0.0;
    for (e, r) in estimate.iter().zip(reference) {
        let de = e - mu_e;
        cov += (r - mu_r) * de.transpose();
        var_e += de.norm_squared();
    }
    cov *= inv_n;
    var_e *= inv_n;

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sv: Vec<(f64, usize)> = svd.singular_values.iter().copied().enumerate().map(|(i, s)| (s, i)).collect();
    sv.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (s_max, s_mid, s_min_idx) = (sv[0].0, sv[1].0, sv[2].1);
    let spread = var_e.sqrt() * (reference.iter().map(|r| (r - mu_r).norm_squared()).sum::<f64>() * inv_n).sqrt();
    if s_max <= 1e-12 * spread.max(f64::MIN_POSITIVE) || s_mid <= 1e-10 * s_max {
        return Err(TrajectoryError::DegenerateGeometry);
    }

    let mut d = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        d[(s_min_idx, s_min_idx)] = -1.0;
    }
    let rot = u * d * v_t;
    let scale = match mode {
        AlignmentMode::Se3 => 1.0,
        AlignmentMode::Sim3 => (Matrix3::from_diagonal(&svd.singular_values) * d).trace() / var_e,
    };
    let rotation = UnitQuaternion::from_matrix(&rot);
    let translation = mu_r - rotation * mu_e * scale;
    Ok(RigidTransform { rotation, translation, scale })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AteResult {
    pub rmse_m: f64,
    /// Per pair, in `pairs` order.
    pub residuals: Vec<f64>,
    pub transform: RigidTransform,
}

/// Aligns estimate translations to the reference over `pairs`, then takes the RMS
/// of the paired translation residuals.
pub fn ate_rmse(
    estimate: &Trajectory,
    reference: &Trajectory,
    pairs: &[(usize, usize)],
    mode: AlignmentMode,
) -> Result<AteResult, TrajectoryError> {
    let est: Vec<_> = pairs.iter().map(|&(i, _)| estimate.poses()[i].translation).collect();
    let refp: Vec<_> = pairs.iter().map(|&(_, j)| reference.poses()[j].translation).collect();
    let transform = align_umeyama(&est, &refp, mode)?;
    let residuals: Vec<f64> = est.iter().zip(&refp).map(|(e, r)| (transform.apply(e) - r).norm()).collect();
    Ok(AteResult { rmse_m: rms(residuals.iter().copied()), residuals, transform })
}

pub fn ate_normalized(ate_rmse_m: f64, reference: &Trajectory) -> Result<f64, TrajectoryError> {
    let len = trajectory_length(reference);
    if len <= 0.0 {
        return Err(TrajectoryError::ZeroLength);
    }
    Ok(ate_rmse_m / len)
}

/// One RPE entry between matched pairs `k - delta` and `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeError {
    pub trans_m: f64,
    pub rot_rad: f64,
}

/// Relative pose error `E = (Q_i⁻¹ Q_j)⁻¹ (P_i⁻¹ P_j)` for `j = i + delta` over
/// consecutive matched pairs (P estimate, Q reference). No alignment is applied.
/// Returns `pairs.len() - delta` entries; entry `i` belongs to pair `i + delta`.
pub fn rpe_series(
    estimate: &Trajectory,
    reference: &Trajectory,
    pairs: &[(usize, usize)],
    delta: usize,
) -> Result<Vec<RelativeError>, TrajectoryError> {
    if delta == 0 || pairs.len() < delta + 1 {
        return Err(TrajectoryError::TooFewPairs { pairs: pairs.len(), delta });
    }
    let est: Vec<Isometry3<f64>> = pairs.iter().map(|&(i, _)| estimate.poses()[i].isometry()).collect();
    let refp: Vec<Isometry3<f64>> = pairs.iter().map(|&(_, j)| reference.poses()[j].isometry()).collect();
    Ok((0..pairs.len() - delta)
        .map(|i| {
            let j = i + delta;
            let rel_est = est[i].inverse() * est[j];
            let rel_ref = refp[i].inverse() * refp[j];
            let e = rel_ref.inverse() * rel_est;
            RelativeError { trans_m: e.translation.vector.norm(), rot_rad: e.rotation.angle() }
        })
        .collect())
}

pub fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (n, s) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v * v));
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub timestamp_ns: u64,
    pub ate_residual_m: f64,
    /// Absent for the first `delta` pairs.
    pub rpe_trans_m: Option<f64>,
    pub rpe_rot_rad: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub ate_rmse_m: f64,
    /// `None` when the reference has zero length.
    pub ate_rmse_normalized: Option<f64>,
    pub rpe_trans_rmse_m: f64,
    pub pair_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub records: Vec<ErrorRecord>,
    pub summary: ErrorSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorOptions {
    pub alignment: AlignmentMode,
    pub rpe_delta: usize,
}

impl Default for ErrorOptions {
    fn default() -> Self {
        ErrorOptions { alignment: AlignmentMode::Se3, rpe_delta: 1 }
    }
}

/// ATE residuals and RPE for every matched pair, timestamped by the estimate.
pub fn error_series(
    estimate: &Trajectory,
    reference: &Trajectory,
    pairs: &[(usize, usize)],
    opts: ErrorOptions,
) -> Result<ErrorSeries, TrajectoryError> {
    let ate = ate_rmse(estimate, reference, pairs, opts.alignment)?;
    let rpe = if pairs.len() > opts.rpe_delta { rpe_series(estimate, reference, pairs, opts.rpe_delta)? } else { Vec::new() };
    let records: Vec<ErrorRecord> = pairs
        .iter()
        .enumerate()
        .map(|(k, &(i, _))| {
            let r = k.checked_sub(opts.rpe_delta).and_then(|m| rpe.get(m));
            ErrorRecord {
                timestamp_ns: estimate.poses()[i].timestamp_ns,
                ate_residual_m: ate.residuals[k],
                rpe_trans_m: r.map(|r| r.trans_m),
                rpe_rot_rad: r.map(|r| r.rot_rad),
            }
        })
        .collect();
    let summary = ErrorSummary {
        ate_rmse_m: ate.rmse_m,
        ate_rmse_normalized: ate_normalized(ate.rmse_m, reference).ok(),
        rpe_trans_rmse_m: rms(records.iter().filter_map(|r| r.rpe_trans_m)),
        pair_count: pairs.len(),
    };
    Ok(ErrorSeries { records, summary })
}

impl ErrorSeries {
    /// CSV body: `timestamp_ns,ate_residual_m,rpe_trans_m,rpe_rot_rad`; missing RPE is an empty field.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp_ns,ate_residual_m,rpe_trans_m,rpe_rot_rad\n");
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}\n", r.timestamp_ns, r.ate_residual_m, opt(r.rpe_trans_m), opt(r.rpe_rot_rad)));
        }
        out
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "ate_rmse_m": self.summary.ate_rmse_m,
            "ate_rmse_normalized": self.summary.ate_rmse_normalized,
            "rpe_trans_rmse_m": self.summary.rpe_trans_rmse_m,
            "pair_count": self.summary.pair_count,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Pose;

    fn traj(points: &[[f64; 3]]) -> Trajectory {
        Trajectory::new(
            points
                .iter()
                .enumerate()
                .map(|(i, p)| Pose::new(i as u64, Vector3::from(*p), UnitQuaternion::identity()))
                .collect(),
        )
        .unwrap()
    }

    fn ident(n: usize) -> Vec<(usize, usize)> {
        (0..n).map(|i| (i, i)).collect()
    }

    const SQUARE: [[f64; 3]; 4] = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]];

    #[test]
    fn identical_sets_give_identity() {
        let pts: Vec<_> = SQUARE.iter().map(|p| Vector3::from(*p)).collect();
        let t = align_umeyama(&pts, &pts, AlignmentMode::Se3).unwrap();
        assert!(t.rotation.angle() < 1e-12);
        assert!(t.translation.norm() < 1e-12);
    }

    #[test]
    fn recovers_quarter_turn_and_shift() {
        let pts: Vec<Vector3<f64>> = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.2, 0.0),
            Vector3::new(0.3, 1.0, 0.5),
            Vector3::new(-0.4, 0.7, 2.0),
        ];
        let rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let shift = Vector3::new(1.0, 2.0, 3.0);
        let moved: Vec<_> = pts.iter().map(|p| rot * p + shift).collect();
        let t = align_umeyama(&pts, &moved, AlignmentMode::Se3).unwrap();
        assert!(t.rotation.angle_to(&rot) < 1e-9);
        assert!((t.translation - shift).norm() < 1e-9);
    }

    #[test]
    fn sim3_recovers_scale() {
        let pts: Vec<Vector3<f64>> = SQUARE.iter().map(|p| Vector3::from(*p)).chain([Vector3::new(0.5, 0.5, 1.0)]).collect();
        let moved: Vec<_> = pts.iter().map(|p| p * 2.5 + Vector3::new(0.0, 1.0, 0.0)).collect();
        let t = align_umeyama(&pts, &moved, AlignmentMode::Sim3).unwrap();
        assert!((t.scale - 2.5).abs() < 1e-9);
        assert_eq!(align_umeyama(&pts, &moved, AlignmentMode::Se3).unwrap().scale, 1.0);
    }

    #[test]
    fn too_few_and_degenerate() {
        let two = [Vector3::zeros(), Vector3::x()];
        assert_eq!(align_umeyama(&two, &two, AlignmentMode::Se3), Err(TrajectoryError::InsufficientPairs(2)));
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(align_umeyama(&line, &line, AlignmentMode::Se3), Err(TrajectoryError::DegenerateGeometry));
        let same = vec![Vector3::new(1.0, 1.0, 1.0); 4];
        assert_eq!(align_umeyama(&same, &same, AlignmentMode::Se3), Err(TrajectoryError::DegenerateGeometry));
    }

    #[test]
    fn ate_unit_square_displaced_corner() {
        // frozen from a brute-force rotation/translation search
        let reference = traj(&SQUARE);
        let mut est = SQUARE;
        est[2][0] += 0.4;
        let r = ate_rmse(&traj(&est), &reference, &ident(4), AlignmentMode::Se3).unwrap();
        assert!((r.rmse_m - 0.159_574_115_323_488_2).abs() < 1e-9, "{}", r.rmse_m);
    }

    #[test]
    fn ate_identical_is_zero() {
        let t = traj(&SQUARE);
        assert!(ate_rmse(&t, &t, &ident(4), AlignmentMode::Se3).unwrap().rmse_m < 1e-12);
    }

    #[test]
    fn normalized_ate() {
        let straight = traj(&[[0.0, 0.0, 0.0], [100.0, 0.0, 0.0]]);
        assert_eq!(ate_normalized(0.5, &straight).unwrap(), 0.005);
        assert_eq!(ate_normalized(0.0, &straight).unwrap(), 0.0);
        let still = traj(&[[1.0, 1.0, 1.0]]);
        assert_eq!(ate_normalized(0.1, &still), Err(TrajectoryError::ZeroLength));
    }

    #[test]
    fn rpe_constant_offset_is_zero() {
        let reference = traj(&SQUARE);
        let shifted: Vec<[f64; 3]> = SQUARE.iter().map(|p| [p[0] + 5.0, p[1] - 1.0, p[2] + 2.0]).collect();
        let r = rpe_series(&traj(&shifted), &reference, &ident(4), 1).unwrap();
        assert_eq!(r.len(), 3);
        assert!(r.iter().all(|e| e.trans_m < 1e-12 && e.rot_rad < 1e-12));
        assert!(rpe_series(&reference, &reference, &ident(1), 1).is_err());
    }

    #[test]
    fn series_summary_matches_columns() {
        let reference = traj(&SQUARE);
        let mut est = SQUARE;
        est[1][1] += 0.2;
        let s = error_series(&traj(&est), &reference, &ident(4), ErrorOptions::default()).unwrap();
        assert_eq!(s.records.len(), 4);
        assert!(s.records[0].rpe_trans_m.is_none());
        let ate = rms(s.records.iter().map(|r| r.ate_residual_m));
        assert!((ate - s.summary.ate_rmse_m).abs() < 1e-12);
        let rpe = rms(s.records.iter().filter_map(|r| r.rpe_trans_m));
        assert!((rpe - s.summary.rpe_trans_rmse_m).abs() < 1e-12);
        let csv = s.to_csv();
        assert!(csv.starts_with("timestamp_ns,ate_residual_m,rpe_trans_m,rpe_rot_rad\n0,"));
        assert!(csv.lines().nth(1).unwrap().ends_with(",,"));
    }
}
