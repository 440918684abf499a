//! Decentralized joint-space PD control with gravity compensation, evaluated
//! against a zero-order-held reference, and its Lyapunov diagnostics.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::robot::{gravity_vector, mass_matrix, RobotError, SerialChainModel};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlError {
    #[error("gain vector has {got} entries, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("gains must be strictly positive")]
    NonPositiveGain,
    #[error(transparent)]
    Robot(#[from] RobotError),
}

/// Diagonal gains. Base axes are in N/m and N·s/m, arm joints in N·m/rad and
/// N·m·s/rad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSet {
    pub kp: Vec<f64>,
    pub kv: Vec<f64>,
}

/// Per-group gains used to build a [`GainSet`] for a mobile manipulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GainSchedule {
    pub base_kp: f64,
    pub base_kv: f64,
    pub arm_kp: f64,
    pub arm_kv: f64,
}

impl Default for GainSchedule {
    fn default() -> Self {
        Self {
            base_kp: 400.0,
            base_kv: 80.0,
            arm_kp: 100.0,
            arm_kv: 20.0,
        }
    }
}

impl GainSchedule {
    pub fn gains_for(&self, model: &SerialChainModel) -> GainSet {
        let n = model.dof();
        let pick = |base: f64, arm: f64| (0..n).map(|i| if i < 2 { base } else { arm }).collect();
        GainSet {
            kp: pick(self.base_kp, self.arm_kp),
            kv: pick(self.base_kv, self.arm_kv),
        }
    }
}

impl GainSet {
    pub fn uniform(n: usize, kp: f64, kv: f64) -> Self {
        Self {
            kp: vec![kp; n],
            kv: vec![kv; n],
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), ControlError> {
        for v in [&self.kp, &self.kv] {
            if v.len() != n {
                return Err(ControlError::Dimension {
                    expected: n,
                    got: v.len(),
                });
            }
            if v.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
                return Err(ControlError::NonPositiveGain);
            }
        }
        Ok(())
    }

    /// `λ_min(K_v)`, the dissipation rate in the Lyapunov derivative bound.
    pub fn min_kv(&self) -> f64 {
        self.kv.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn check(
    model: &SerialChainModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    q_des: &DVector<f64>,
    gains: &GainSet,
) -> Result<(), ControlError> {
    model.check_dim(q)?;
    model.check_dim(qd)?;
    model.check_dim(q_des)?;
    gains.validate(model.dof())
}

/// `τ = −K_p(q − q_des) − K_v q̇ + g(q)`.
pub fn pd_torque(
    model: &SerialChainModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    q_des: &DVector<f64>,
    gains: &GainSet,
    gravity: &Vector3<f64>,
) -> Result<DVector<f64>, ControlError> {
    check(model, q, qd, q_des, gains)?;
    let g = gravity_vector(model, q, gravity)?;
    Ok(DVector::from_fn(q.len(), |i, _| {
        -gains.kp[i] * (q[i] - q_des[i]) - gains.kv[i] * qd[i] + g[i]
    }))
}

/// `V = ½ q̇ᵀM(q)q̇ + ½ eᵀK_p e` with `e = q − q_des`.
pub fn lyapunov_value(
    model: &SerialChainModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    q_des: &DVector<f64>,
    gains: &GainSet,
) -> Result<f64, ControlError> {
    check(model, q, qd, q_des, gains)?;
    let m = mass_matrix(model, q)?;
    let e = q - q_des;
    let potential: f64 = (0..e.len()).map(|i| gains.kp[i] * e[i] * e[i]).sum();
    Ok(0.5 * qd.dot(&(m * qd)) + 0.5 * potential)
}

/// Upper bound `−λ_min(K_v)‖q̇‖² + q̇ᵀw` on `V̇` under a torque disturbance `w`.
pub fn lyapunov_rate_bound(qd: &DVector<f64>, w: &DVector<f64>, gains: &GainSet) -> f64 {
    -gains.min_kv() * qd.norm_squared() + qd.dot(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equilibrium_hold() {
        let m = SerialChainModel::desk_scale();
        let q = DVector::from_vec(vec![0.3, -0.2, 0.4, -0.5, 1.0, -0.3, 0.1, 0.2]);
        let z = DVector::zeros(8);
        let gravity = Vector3::new(0.0, 0.0, -9.81);
        let gains = GainSchedule::default().gains_for(&m);
        let tau = pd_torque(&m, &q, &z, &q, &gains, &gravity).unwrap();
        assert_eq!(tau, gravity_vector(&m, &q, &gravity).unwrap());
    }

    #[test]
    fn unit_error_without_gravity() {
        let m = SerialChainModel::desk_scale();
        let q_des = DVector::zeros(8);
        let mut q = q_des.clone();
        q[3] = 1.0;
        let gains = GainSet::uniform(8, 10.0, 2.0);
        let tau = pd_torque(&m, &q, &DVector::zeros(8), &q_des, &gains, &Vector3::zeros()).unwrap();
        let mut expected = DVector::zeros(8);
        expected[3] = -10.0;
        assert_eq!(tau, expected);
        assert_eq!(lyapunov_value(&m, &q, &DVector::zeros(8), &q_des, &gains).unwrap(), 5.0);
        assert_eq!(
            lyapunov_value(&m, &q_des, &DVector::zeros(8), &q_des, &gains).unwrap(),
            0.0
        );
    }

    #[test]
    fn random_states_match_hand_formula() {
        let m = SerialChainModel::desk_scale();
        let gravity = Vector3::new(0.0, 0.0, -9.81);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gains = GainSet {
            kp: (0..8).map(|_| rng.gen_range(1.0..500.0)).collect(),
            kv: (0..8).map(|_| rng.gen_range(1.0..50.0)).collect(),
        };
        for _ in 0..50 {
            let q = DVector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0));
            let qd = DVector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0));
            let qr = DVector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0));
            let tau = pd_torque(&m, &q, &qd, &qr, &gains, &gravity).unwrap();
            let g = gravity_vector(&m, &q, &gravity).unwrap();
            for i in 0..8 {
                let hand = -gains.kp[i] * (q[i] - qr[i]) - gains.kv[i] * qd[i] + g[i];
                assert!((tau[i] - hand).abs() <= 1e-12 * hand.abs().max(1.0));
            }
            let v = lyapunov_value(&m, &q, &qd, &qr, &gains).unwrap();
            assert!(v > 0.0);
        }
    }

    #[test]
    fn rejects_bad_gains() {
        let m = SerialChainModel::desk_scale();
        let z = DVector::zeros(8);
        let g = GainSet::uniform(7, 1.0, 1.0);
        assert!(matches!(
            pd_torque(&m, &z, &z, &z, &g, &Vector3::zeros()),
            Err(ControlError::Dimension { .. })
        ));
        let g = GainSet::uniform(8, 0.0, 1.0);
        assert!(matches!(
            pd_torque(&m, &z, &z, &z, &g, &Vector3::zeros()),
            Err(ControlError::NonPositiveGain)
        ));
    }
}
