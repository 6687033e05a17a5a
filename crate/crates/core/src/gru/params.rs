use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights of a single-layer GRU followed by a linear read-out.
///
/// Every matrix is stored row-major. Input-to-hidden matrices are
/// `hidden_dim × input_dim`, hidden-to-hidden matrices `hidden_dim × hidden_dim`,
/// the read-out `input_dim × hidden_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// update gate
    pub w_z: Vec<f64>,
    pub u_z: Vec<f64>,
    pub b_z: Vec<f64>,
    /// reset gate
    pub w_r: Vec<f64>,
    pub u_r: Vec<f64>,
    pub b_r: Vec<f64>,
    /// candidate activation
    pub w_h: Vec<f64>,
    pub u_h: Vec<f64>,
    pub b_h: Vec<f64>,
    /// read-out from hidden state to the normalized residual
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

/// Intermediate values of one cell step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub cand: Vec<f64>,
    pub h: Vec<f64>,
}

pub(crate) const TENSOR_COUNT: usize = 11;

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// `out += m · v` for a row-major `rows × cols` matrix.
pub(crate) fn matvec_acc(out: &mut [f64], m: &[f64], cols: usize, v: &[f64]) {
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += mᵀ · v` for a row-major `rows × cols` matrix.
pub(crate) fn matvec_t_acc(out: &mut [f64], m: &[f64], cols: usize, v: &[f64]) {
    for (row, &vi) in m.chunks_exact(cols).zip(v) {
        if vi == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * vi;
        }
    }
}

/// `m += a ⊗ b` (outer product), `m` row-major `a.len() × b.len()`.
pub(crate) fn outer_acc(m: &mut [f64], a: &[f64], b: &[f64]) {
    for (row, &ai) in m.chunks_exact_mut(b.len()).zip(a) {
        if ai == 0.0 {
            continue;
        }
        for (mij, bj) in row.iter_mut().zip(b) {
            *mij += ai * bj;
        }
    }
}

impl GruParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let ih = hidden_dim * input_dim;
        let hh = hidden_dim * hidden_dim;
        GruParams {
            input_dim,
            hidden_dim,
            w_z: vec![0.0; ih],
            u_z: vec![0.0; hh],
            b_z: vec![0.0; hidden_dim],
            w_r: vec![0.0; ih],
            u_r: vec![0.0; hh],
            b_r: vec![0.0; hidden_dim],
            w_h: vec![0.0; ih],
            u_h: vec![0.0; hh],
            b_h: vec![0.0; hidden_dim],
            w_out: vec![0.0; input_dim * hidden_dim],
            b_out: vec![0.0; input_dim],
        }
    }

    /// Every weight and bias drawn from `U(-1/sqrt(hidden_dim), 1/sqrt(hidden_dim))`.
    pub fn init_uniform<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        for t in p.tensors_mut() {
            for w in t.iter_mut() {
                *w = rng.random_range(-bound..=bound);
            }
        }
        p
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); TENSOR_COUNT] {
        [
            ("w_z", &self.w_z),
            ("u_z", &self.u_z),
            ("b_z", &self.b_z),
            ("w_r", &self.w_r),
            ("u_r", &self.u_r),
            ("b_r", &self.b_r),
            ("w_h", &self.w_h),
            ("u_h", &self.u_h),
            ("b_h", &self.b_h),
            ("w_out", &self.w_out),
            ("b_out", &self.b_out),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; TENSOR_COUNT] {
        [
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_h,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn expected_len(&self, name: &str) -> usize {
        let (i, h) = (self.input_dim, self.hidden_dim);
        match name {
            "w_z" | "w_r" | "w_h" => h * i,
            "u_z" | "u_r" | "u_h" => h * h,
            "b_z" | "b_r" | "b_h" => h,
            "w_out" => i * h,
            "b_out" => i,
            _ => unreachable!("unknown tensor {name}"),
        }
    }

    /// Checks shapes against the declared dimensions and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::contract("GRU dimensions must be positive"));
        }
        for (name, t) in self.tensors() {
            let want = self.expected_len(name);
            if t.len() != want {
                return Err(Error::contract(format!(
                    "tensor {name} has {} entries, expected {want}",
                    t.len()
                )));
            }
            if let Some(k) = t.iter().position(|w| !w.is_finite()) {
                return Err(Error::numeric(format!("tensor {name}[{k}] is not finite")));
            }
        }
        Ok(())
    }

    fn check_step_inputs(&self, hidden: &[f64], x_norm: &[f64]) -> Result<()> {
        if hidden.len() != self.hidden_dim {
            return Err(Error::contract(format!(
                "hidden has length {}, expected {}",
                hidden.len(),
                self.hidden_dim
            )));
        }
        if x_norm.len() != self.input_dim {
            return Err(Error::contract(format!(
                "input has length {}, expected {}",
                x_norm.len(),
                self.input_dim
            )));
        }
        if let Some(k) = hidden.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("hidden[{k}] is not finite")));
        }
        if let Some(k) = x_norm.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("input[{k}] is not finite")));
        }
        Ok(())
    }

    /// One GRU step followed by the read-out.
    ///
    /// ```text
    /// z  = σ(W_z x + U_z h + b_z)
    /// r  = σ(W_r x + U_r h + b_r)
    /// h̃  = tanh(W_h x + U_h (r ⊙ h) + b_h)
    /// h' = (1 - z) ⊙ h + z ⊙ h̃
    /// y  = W_out h' + b_out
    /// ```
    ///
    /// Returns `(h', y)`.
    pub fn cell_step(&self, hidden: &[f64], x_norm: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_step_inputs(hidden, x_norm)?;
        let cache = self.forward_cached(hidden, x_norm);
        let y = self.read_out(&cache.h);
        Ok((cache.h, y))
    }

    pub(crate) fn forward_cached(&self, hidden: &[f64], x: &[f64]) -> StepCache {
        let (n_in, n_h) = (self.input_dim, self.hidden_dim);
        let mut z = self.b_z.clone();
        matvec_acc(&mut z, &self.w_z, n_in, x);
        matvec_acc(&mut z, &self.u_z, n_h, hidden);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));

        let mut r = self.b_r.clone();
        matvec_acc(&mut r, &self.w_r, n_in, x);
        matvec_acc(&mut r, &self.u_r, n_h, hidden);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));

        let rh: Vec<f64> = r.iter().zip(hidden).map(|(a, b)| a * b).collect();
        let mut cand = self.b_h.clone();
        matvec_acc(&mut cand, &self.w_h, n_in, x);
        matvec_acc(&mut cand, &self.u_h, n_h, &rh);
        cand.iter_mut().for_each(|v| *v = v.tanh());

        let h = (0..n_h)
            .map(|k| (1.0 - z[k]) * hidden[k] + z[k] * cand[k])
            .collect();
        StepCache {
            x: x.to_vec(),
            h_prev: hidden.to_vec(),
            z,
            r,
            cand,
            h,
        }
    }

    pub(crate) fn read_out(&self, h: &[f64]) -> Vec<f64> {
        let mut y = self.b_out.clone();
        matvec_acc(&mut y, &self.w_out, self.hidden_dim, h);
        y
    }

    /// Backpropagates one step. `dh` is the gradient flowing into `h'` (from the
    /// read-out and from later steps); returns the gradient with respect to `h`.
    pub(crate) fn backward_step(&self, c: &StepCache, dh: &[f64], grad: &mut GruParams) -> Vec<f64> {
        let (n_in, n_h) = (self.input_dim, self.hidden_dim);
        let mut dh_prev: Vec<f64> = (0..n_h).map(|k| dh[k] * (1.0 - c.z[k])).collect();

        let dz_pre: Vec<f64> = (0..n_h)
            .map(|k| dh[k] * (c.cand[k] - c.h_prev[k]) * c.z[k] * (1.0 - c.z[k]))
            .collect();
        let dcand_pre: Vec<f64> = (0..n_h)
            .map(|k| dh[k] * c.z[k] * (1.0 - c.cand[k] * c.cand[k]))
            .collect();

        let rh: Vec<f64> = c.r.iter().zip(&c.h_prev).map(|(a, b)| a * b).collect();
        outer_acc(&mut grad.w_h, &dcand_pre, &c.x);
        outer_acc(&mut grad.u_h, &dcand_pre, &rh);
        grad.b_h.iter_mut().zip(&dcand_pre).for_each(|(g, d)| *g += d);

        let mut drh = vec![0.0; n_h];
        matvec_t_acc(&mut drh, &self.u_h, n_h, &dcand_pre);
        let dr_pre: Vec<f64> = (0..n_h)
            .map(|k| drh[k] * c.h_prev[k] * c.r[k] * (1.0 - c.r[k]))
            .collect();
        for k in 0..n_h {
            dh_prev[k] += drh[k] * c.r[k];
        }

        outer_acc(&mut grad.w_z, &dz_pre, &c.x);
        outer_acc(&mut grad.u_z, &dz_pre, &c.h_prev);
        grad.b_z.iter_mut().zip(&dz_pre).for_each(|(g, d)| *g += d);
        matvec_t_acc(&mut dh_prev, &self.u_z, n_h, &dz_pre);

        outer_acc(&mut grad.w_r, &dr_pre, &c.x);
        outer_acc(&mut grad.u_r, &dr_pre, &c.h_prev);
        grad.b_r.iter_mut().zip(&dr_pre).for_each(|(g, d)| *g += d);
        matvec_t_acc(&mut dh_prev, &self.u_r, n_h, &dr_pre);

        debug_assert_eq!(c.x.len(), n_in);
        dh_prev
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_parameters_give_zero_outputs() {
        let p = GruParams::zeros(3, 4);
        let (h, y) = p.cell_step(&[0.3, -0.9, 0.5, 0.1], &[1.0, -2.0, 7.0]).unwrap();
        // z = 0.5, candidate = 0, so h' = h / 2 for zero weights; with h = 0 it vanishes.
        assert_eq!(h, vec![0.15, -0.45, 0.25, 0.05]);
        assert!(y.iter().all(|&v| v == 0.0));
        let (h, y) = p.cell_step(&[0.0; 4], &[1.0, -2.0, 7.0]).unwrap();
        assert!(h.iter().chain(&y).all(|&v| v == 0.0));
    }

    #[test]
    fn null_projection_gives_zero_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = GruParams::init_uniform(2, 5, &mut rng);
        p.w_out.iter_mut().for_each(|w| *w = 0.0);
        p.b_out.iter_mut().for_each(|w| *w = 0.0);
        let (h, y) = p.cell_step(&[0.2, -0.1, 0.0, 0.4, 0.9], &[3.0, -1.0]).unwrap();
        assert!(h.iter().any(|&v| v != 0.0));
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn hidden_stays_in_open_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = GruParams::init_uniform(3, 6, &mut rng);
        let mut h = vec![0.0; 6];
        for t in 0..200 {
            let x = [(t as f64).sin() * 3.0, -2.0, 1.5];
            h = p.cell_step(&h, &x).unwrap().0;
            assert!(h.iter().all(|v| v.abs() < 1.0));
        }
        // tanh rounds to exactly ±1 in f64 for huge pre-activations
        for _ in 0..50 {
            h = p.cell_step(&h, &[1e3, -1e3, 1e3]).unwrap().0;
            assert!(h.iter().all(|v| v.abs() <= 1.0));
        }
    }

    /// Hand-set gates evaluated scalar by scalar, written out without loops or helpers.
    #[test]
    fn matches_straight_line_gate_arithmetic() {
        let mut p = GruParams::zeros(1, 2);
        p.w_z = vec![0.5, -0.3];
        p.u_z = vec![0.1, 0.2, -0.4, 0.3];
        p.b_z = vec![0.05, -0.1];
        p.w_r = vec![-0.2, 0.7];
        p.u_r = vec![0.3, -0.1, 0.2, 0.6];
        p.b_r = vec![0.0, 0.2];
        p.w_h = vec![1.1, -0.5];
        p.u_h = vec![-0.3, 0.4, 0.25, -0.2];
        p.b_h = vec![0.1, 0.0];
        p.w_out = vec![0.8, -1.2];
        p.b_out = vec![0.3];
        let h0 = 0.4_f64;
        let h1 = -0.2_f64;
        let x = 0.7_f64;

        let s = |a: f64| 1.0 / (1.0 + (-a).exp());
        let z0 = s(0.5 * x + 0.1 * h0 + 0.2 * h1 + 0.05);
        let z1 = s(-0.3 * x + -0.4 * h0 + 0.3 * h1 - 0.1);
        let r0 = s(-0.2 * x + 0.3 * h0 - 0.1 * h1 + 0.0);
        let r1 = s(0.7 * x + 0.2 * h0 + 0.6 * h1 + 0.2);
        let c0 = (1.1 * x + -0.3 * (r0 * h0) + 0.4 * (r1 * h1) + 0.1).tanh();
        let c1 = (-0.5 * x + 0.25 * (r0 * h0) - 0.2 * (r1 * h1) + 0.0).tanh();
        let n0 = (1.0 - z0) * h0 + z0 * c0;
        let n1 = (1.0 - z1) * h1 + z1 * c1;
        let y = 0.8 * n0 - 1.2 * n1 + 0.3;

        let (h, out) = p.cell_step(&[h0, h1], &[x]).unwrap();
        assert!((h[0] - n0).abs() < 1e-15);
        assert!((h[1] - n1).abs() < 1e-15);
        assert!((out[0] - y).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = GruParams::zeros(2, 3);
        assert!(matches!(p.cell_step(&[0.0; 2], &[0.0; 2]), Err(Error::Contract(_))));
        assert!(matches!(p.cell_step(&[0.0; 3], &[0.0; 3]), Err(Error::Contract(_))));
        assert!(matches!(p.cell_step(&[0.0; 3], &[f64::NAN, 0.0]), Err(Error::Numeric(_))));
        let mut bad = p.clone();
        bad.u_r.pop();
        assert!(bad.validate().is_err());
        let mut bad = p;
        bad.b_out[1] = f64::INFINITY;
        assert!(matches!(bad.validate(), Err(Error::Numeric(_))));
    }
}
