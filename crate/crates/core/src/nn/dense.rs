use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NtfError, Result};
use crate::linalg::Matrix;

/// Affine layer `y = W·x + b` with `W` of shape (out × in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub w: Matrix,
    pub b: Vec<f64>,
}

/// Uniform Glorot bound `√(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn glorot_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let bound = glorot_bound(cols, rows);
    let mut m = Matrix::zeros(rows, cols);
    for x in m.as_mut_slice() {
        *x = rng.random_range(-bound..=bound);
    }
    m
}

impl DenseParams {
    pub fn zeros(input: usize, output: usize) -> Self {
        DenseParams {
            w: Matrix::zeros(output, input),
            b: vec![0.0; output],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        DenseParams {
            w: glorot_matrix(output, input, rng),
            b: vec![0.0; output],
        }
    }

    pub fn new(w: Matrix, b: Vec<f64>) -> Result<Self> {
        if w.rows() != b.len() {
            return Err(NtfError::shape(
                format!("bias of length {}", w.rows()),
                b.len(),
            ));
        }
        Ok(DenseParams { w, b })
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows()
    }

    pub(crate) fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        self.w.matvec_into(x, out);
        for (o, b) in out.iter_mut().zip(&self.b) {
            *o += b;
        }
    }

    /// Accumulates parameter gradients for upstream gradient `dy` at input `x`,
    /// and adds the input gradient into `dx` when given.
    pub(crate) fn backward(
        &self,
        x: &[f64],
        dy: &[f64],
        grads: &mut DenseParams,
        dx: Option<&mut [f64]>,
    ) {
        grads.w.add_outer(dy, x);
        for (g, d) in grads.b.iter_mut().zip(dy) {
            *g += d;
        }
        if let Some(dx) = dx {
            self.w.matvec_t_acc(dy, dx);
        }
    }
}

pub fn dense_forward(p: &DenseParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != p.input_dim() {
        return Err(NtfError::shape(
            format!("input of length {}", p.input_dim()),
            x.len(),
        ));
    }
    let mut out = vec![0.0; p.output_dim()];
    p.forward_into(x, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let zero = DenseParams::new(Matrix::zeros(2, 3), vec![0.3, -1.0]).unwrap();
        assert_eq!(
            dense_forward(&zero, &[5.0, -2.0, 7.0]).unwrap(),
            vec![0.3, -1.0]
        );

        let id = DenseParams::new(Matrix::identity(2), vec![0.0, 0.0]).unwrap();
        assert_eq!(dense_forward(&id, &[2.0, -5.0]).unwrap(), vec![2.0, -5.0]);

        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let p = DenseParams::new(w, vec![1.0, 1.0]).unwrap();
        assert_eq!(dense_forward(&p, &[1.0, 1.0]).unwrap(), vec![4.0, 8.0]);
    }

    #[test]
    fn shape_errors() {
        let p = DenseParams::zeros(3, 2);
        assert!(matches!(
            dense_forward(&p, &[1.0]),
            Err(NtfError::ShapeMismatch { .. })
        ));
        assert!(DenseParams::new(Matrix::zeros(2, 2), vec![0.0]).is_err());
    }

    #[test]
    fn glorot_within_bound() {
        let mut rng = crate::rng::stream(0, "t");
        let p = DenseParams::init(24, 8, &mut rng);
        let bound = glorot_bound(24, 8);
        assert!(p.w.as_slice().iter().all(|x| x.abs() <= bound));
        assert!(p.b.iter().all(|&b| b == 0.0));
    }
}
