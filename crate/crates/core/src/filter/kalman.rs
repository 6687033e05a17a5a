use nalgebra::{DMatrix, DVector};

use super::belief::{Belief, KinematicLayout, MeasurementMap};
use crate::error::{Error, Result};
use crate::gru::TransitionModel;

/// One-step mean propagation used by the filter's predict step.
pub trait DynamicsModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn initial_hidden(&self) -> Vec<f64>;
    /// Returns `(x', h')`.
    fn step(&self, hidden: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;
}

impl DynamicsModel for TransitionModel {
    fn state_dim(&self) -> usize {
        self.input_dim()
    }

    fn initial_hidden(&self) -> Vec<f64> {
        TransitionModel::initial_hidden(self)
    }

    fn step(&self, hidden: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.predict_next(hidden, x)
    }
}

/// Affine residual dynamics `x' = x + (A - I) x + b` with no recurrent state.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LinearDynamics {
    pub fn identity(dim: usize) -> Self {
        LinearDynamics {
            a: DMatrix::identity(dim, dim),
            b: DVector::zeros(dim),
        }
    }
}

impl DynamicsModel for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.b.len()
    }

    fn initial_hidden(&self) -> Vec<f64> {
        Vec::new()
    }

    fn step(&self, hidden: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let xv = DVector::from_column_slice(x);
        let residual = (&self.a - DMatrix::identity(x.len(), x.len())) * &xv + &self.b;
        Ok(((xv + residual).as_slice().to_vec(), hidden.to_vec()))
    }
}

fn check_square(name: &str, m: &DMatrix<f64>, d: usize) -> Result<()> {
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::contract(format!(
            "{name} is {}x{}, expected {d}x{d}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Predict with the learned mean map and an identity transition Jacobian:
/// `mean' = f(mean, h)`, `P' = P + Q`, `stamp' = stamp + 1`.
pub fn kf_predict(belief: &Belief, model: &dyn DynamicsModel, process_cov: &DMatrix<f64>) -> Result<Belief> {
    let d = belief.dim();
    if model.state_dim() != d {
        return Err(Error::contract(format!(
            "model state dimension {} does not match belief dimension {d}",
            model.state_dim()
        )));
    }
    check_square("process covariance", process_cov, d)?;
    let (mean, hidden) = model.step(&belief.hidden, belief.mean.as_slice()).map_err(|e| match e {
        Error::Numeric(msg) => Error::numeric(format!("predict from stamp {}: {msg}", belief.stamp)),
        other => other,
    })?;
    let mut out = Belief {
        mean: DVector::from_vec(mean),
        cov: &belief.cov + process_cov,
        hidden,
        stamp: belief.stamp + 1,
    };
    out.symmetrize();
    Ok(out)
}

/// Kalman measurement update with a selection map `H`, Joseph-form covariance.
/// The hidden state and stamp are left untouched.
pub fn kf_update(
    belief: &Belief,
    z: &DVector<f64>,
    meas_map: &MeasurementMap,
    meas_cov: &DMatrix<f64>,
) -> Result<Belief> {
    let d = belief.dim();
    let m = meas_map.output_dim();
    if meas_map.state_dim != d {
        return Err(Error::contract("measurement map does not match belief dimension"));
    }
    if z.len() != m {
        return Err(Error::contract(format!("measurement has {} components, H has {m} rows", z.len())));
    }
    check_square("measurement covariance", meas_cov, m)?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("non-finite measurement at stamp {}", belief.stamp)));
    }

    let h = meas_map.matrix();
    let hp = &h * &belief.cov; // m x d
    let s = &hp * h.transpose() + meas_cov;
    // S X = H P  =>  K = Xᵀ = P Hᵀ S⁻¹
    let x = match s.clone().cholesky() {
        Some(ch) => ch.solve(&hp),
        None => s.clone().lu().solve(&hp).ok_or_else(|| {
            Error::numeric(format!("singular innovation covariance at stamp {}", belief.stamp))
        })?,
    };
    let k = x.transpose(); // d x m
    let innovation = z - &h * &belief.mean;
    let mean = &belief.mean + &k * innovation;
    let i_kh = DMatrix::identity(d, d) - &k * &h;
    let cov = &i_kh * &belief.cov * i_kh.transpose() + &k * meas_cov * k.transpose();
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("non-finite update at stamp {}", belief.stamp)));
    }
    let mut out = Belief {
        mean,
        cov,
        hidden: belief.hidden.clone(),
        stamp: belief.stamp,
    };
    out.symmetrize();
    Ok(out)
}

/// Transition matrix of the damped constant-velocity model.
pub fn kinematic_matrix(dim: usize, layout: &KinematicLayout, dt: f64, damping: f64) -> DMatrix<f64> {
    let mut f = DMatrix::identity(dim, dim);
    for &(p, v) in &layout.pairs {
        f[(p, v)] = dt;
        f[(v, v)] = damping;
    }
    f
}

/// Damped first-order kinematic predict: `p' = p + v·dt`, `v' = λ·v`, other components held,
/// `P' = F P Fᵀ + Q`.
pub fn naive_predict(
    belief: &Belief,
    layout: &KinematicLayout,
    dt: f64,
    damping: f64,
    process_cov: &DMatrix<f64>,
) -> Result<Belief> {
    let d = belief.dim();
    layout.validate(d)?;
    check_square("process covariance", process_cov, d)?;
    let f = kinematic_matrix(d, layout, dt, damping);
    let mut out = Belief {
        mean: &f * &belief.mean,
        cov: &f * &belief.cov * f.transpose() + process_cov,
        hidden: belief.hidden.clone(),
        stamp: belief.stamp + 1,
    };
    out.symmetrize();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(mean: f64, var: f64) -> Belief {
        Belief::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var), vec![], 0).unwrap()
    }

    #[test]
    fn hand_solved_scalar_update() {
        let b = scalar(0.0, 1.0);
        let out = kf_update(
            &b,
            &DVector::from_element(1, 2.0),
            &MeasurementMap::identity(1),
            &DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert!((out.mean[0] - 1.0).abs() < 1e-15);
        assert!((out.cov[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn uninformative_and_exact_measurements() {
        let b = Belief::new(
            DVector::from_vec(vec![1.0, -2.0]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, 0.7])),
            vec![],
            3,
        )
        .unwrap();
        let z = DVector::from_vec(vec![4.0, 5.0]);
        let h = MeasurementMap::identity(2);
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, 0.7]));
        let huge = kf_update(&b, &z, &h, &(&q * 1e12)).unwrap();
        assert!((huge.mean - &b.mean).amax() < 1e-6);
        let tiny = kf_update(&b, &z, &h, &(&q * 1e-12)).unwrap();
        assert!((tiny.mean - &z).amax() < 1e-6);
        assert_eq!(tiny.stamp, 3);
    }

    #[test]
    fn partial_measurement_only_moves_correlated_components() {
        let b = Belief::new(
            DVector::from_vec(vec![0.0, 0.0, 0.0]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 1.0])),
            vec![],
            0,
        )
        .unwrap();
        let h = MeasurementMap::select(3, vec![2]).unwrap();
        let out = kf_update(&b, &DVector::from_element(1, 3.0), &h, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(out.mean[0], 0.0);
        assert_eq!(out.mean[1], 0.0);
        assert!((out.mean[2] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn zero_q_and_zero_model_only_advance_the_stamp() {
        let b = scalar(0.4, 0.2);
        let model = TransitionModel::zero_residual(1, 2);
        let mut b1 = Belief { hidden: vec![0.0, 0.0], ..b.clone() };
        b1 = kf_predict(&b1, &model, &DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(b1.mean, b.mean);
        assert_eq!(b1.cov, b.cov);
        assert_eq!(b1.stamp, 1);
    }

    #[test]
    fn covariance_grows_linearly_without_updates() {
        let model = LinearDynamics::identity(2);
        let p0 = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.25]));
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![0.125, 0.0625]));
        let mut b = Belief::new(DVector::zeros(2), p0.clone(), vec![], 0).unwrap();
        for _ in 0..8 {
            b = kf_predict(&b, &model, &q).unwrap();
        }
        assert_eq!(b.cov, p0 + q * 8.0);
    }

    #[test]
    fn naive_kinematics() {
        let layout = KinematicLayout { pairs: vec![(0, 1)] };
        let q = DMatrix::zeros(3, 3);
        let start = |p: f64, v: f64| {
            Belief::new(DVector::from_vec(vec![p, v, 7.0]), DMatrix::identity(3, 3), vec![], 0).unwrap()
        };
        // resting state is a fixed point
        let b = naive_predict(&start(2.0, 0.0), &layout, 0.1, 1.0, &q).unwrap();
        assert_eq!(b.mean.as_slice(), &[2.0, 0.0, 7.0]);
        // pure integration
        let mut b = start(0.0, 1.0);
        for _ in 0..6 {
            b = naive_predict(&b, &layout, 0.1, 1.0, &q).unwrap();
        }
        assert!((b.mean[0] - 0.6).abs() < 1e-15);
        assert_eq!(b.mean[2], 7.0);
        // geometric damping
        let mut b = start(0.0, 1.0);
        for _ in 0..3 {
            b = naive_predict(&b, &layout, 0.1, 0.9, &q).unwrap();
        }
        assert!((b.mean[1] - 0.729).abs() < 1e-15);
    }

    #[test]
    fn naive_requires_a_layout() {
        let b = scalar(0.0, 1.0);
        let err = naive_predict(&b, &KinematicLayout { pairs: vec![] }, 0.1, 0.9, &DMatrix::zeros(1, 1));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn dimension_mismatches_are_contract_errors() {
        let b = scalar(0.0, 1.0);
        let h = MeasurementMap::identity(1);
        let r = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(kf_update(&b, &DVector::zeros(2), &h, &r), Err(Error::Contract(_))));
        assert!(matches!(
            kf_predict(&b, &LinearDynamics::identity(2), &DMatrix::zeros(2, 2)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn collapsed_covariance_with_zero_noise_is_singular() {
        let b = scalar(0.0, 0.0);
        let err = kf_update(&b, &DVector::from_element(1, 1.0), &MeasurementMap::identity(1), &DMatrix::zeros(1, 1));
        assert!(matches!(err, Err(Error::Numeric(_))), "{err:?}");
    }
}
