//! Transition kernel `s' = ψ(s + aW + b)`.
//!
//! `W` is an `N_a × N_s` row-stochastic matrix and `b` a bias in `[0,1)^N_s`.
//! ψ is the unit-period triangle wave, which maps the uniform measure on the
//! unit cube onto itself for every constant shift `aW + b`.

use crate::config::EnvConfig;
use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::linalg::Matrix;
use crate::rng::RandomStream;

/// Floored `x mod 1`, always in `[0, 1)`.
pub fn unit_mod(x: f64) -> f64 {
    let y = x - x.floor();
    // x - floor(x) can round up to exactly 1.0 for tiny negative x.
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

/// Normalized triangle wave, `(1/π)·arccos(cos(2πx))`, evaluated piecewise.
pub fn triangle_wave(x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::NonFinite("triangle_wave input"));
    }
    if x.is_infinite() {
        return Err(Error::NonFinite("triangle_wave input"));
    }
    Ok(triangle_wave_unchecked(x))
}

#[inline]
pub(crate) fn triangle_wave_unchecked(x: f64) -> f64 {
    let y = unit_mod(x);
    if y <= 0.5 {
        2.0 * y
    } else {
        2.0 * (1.0 - y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    weights: Matrix,
    bias: Vec<f64>,
}

impl TransitionKernel {
    /// Draw `W` row by row from `w_stream` (each row normalized by its sum)
    /// and `b` from `b_stream`.
    pub fn init(cfg: &EnvConfig, w_stream: &mut RandomStream, b_stream: &mut RandomStream) -> Self {
        let (n_a, n_s) = (cfg.n_action, cfg.n_state);
        let mut weights = Matrix::zeros(n_a, n_s);
        for i in 0..n_a {
            let row = loop {
                let row = w_stream.uniform_vec(n_s);
                let sum: f64 = row.iter().sum();
                if sum > 0.0 {
                    break row.into_iter().map(|w| w / sum).collect::<Vec<_>>();
                }
            };
            weights.row_mut(i).copy_from_slice(&row);
        }
        let bias = b_stream.uniform_vec(n_s);
        Self { weights, bias }
    }

    /// Assemble a kernel from explicit parts. No stochasticity check is
    /// performed, so hand-built and deliberately corrupted kernels are
    /// representable; use [`TransitionKernel::check_invariants`] to validate.
    pub fn from_parts(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        ensure_len("kernel bias", weights.cols(), bias.len())?;
        ensure_finite("kernel weights", weights.as_slice())?;
        ensure_finite("kernel bias", &bias)?;
        Ok(Self { weights, bias })
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn n_state(&self) -> usize {
        self.weights.cols()
    }

    pub fn n_action(&self) -> usize {
        self.weights.rows()
    }

    /// Non-negative entries, unit row sums within `1e-12`, bias in `[0,1)`.
    pub fn check_invariants(&self) -> Result<()> {
        if self.weights.as_slice().iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidArgument("negative kernel weight".into()));
        }
        for (i, s) in self.weights.row_sums().iter().enumerate() {
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "kernel row {i} sums to {s}, not 1"
                )));
            }
        }
        if self.bias.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::InvalidArgument("kernel bias outside [0,1)".into()));
        }
        Ok(())
    }

    /// Projected action `aW`.
    pub fn project_action(&self, a: &[f64]) -> Result<Vec<f64>> {
        ensure_len("action", self.n_action(), a.len())?;
        Ok(self.weights.vec_mul(a))
    }

    /// Affine pre-activation `s + aW + b`.
    pub fn pre_activation(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        ensure_len("state", self.n_state(), s.len())?;
        ensure_len("action", self.n_action(), a.len())?;
        ensure_finite("state", s)?;
        ensure_finite("action", a)?;
        let mut x = self.weights.vec_mul(a);
        for ((xj, sj), bj) in x.iter_mut().zip(s).zip(&self.bias) {
            *xj += sj + bj;
        }
        Ok(x)
    }

    /// One transition `ψ(s + aW + b)`.
    pub fn step(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.pre_activation(s, a)?;
        x.iter_mut().for_each(|v| *v = triangle_wave_unchecked(*v));
        Ok(x)
    }
}
