//! Deep uniform network: the ground-truth optimal policy.
//!
//! Each layer computes `Φ(Wx + b)` where `W` is semi-orthogonal scaled to
//! give every pre-activation unit variance under `U(0,1)` inputs, and
//! `b = -0.5·W·1` centres the pre-activations. Depth controls how strongly
//! the input topology is deformed.

use std::f64::consts::SQRT_2;

use crate::config::EnvConfig;
use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::linalg::{householder_qr, Matrix};
use crate::rng::RandomStream;

/// Variance of `U(0,1)` is 1/12; scaling unit rows by √12 restores unit
/// pre-activation variance.
pub const UNIFORM_VARIANCE_SCALE: f64 = 12.0;

const CDF_FLOOR: f64 = f64::MIN_POSITIVE;
const CDF_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

/// Standard normal CDF, clamped to stay strictly inside `(0, 1)`.
pub fn std_normal_cdf(z: f64) -> Result<f64> {
    if z.is_nan() {
        return Err(Error::NonFinite("std_normal_cdf input"));
    }
    Ok(phi(z))
}

#[inline]
fn phi(z: f64) -> f64 {
    (0.5 * libm::erfc(-z / SQRT_2)).clamp(CDF_FLOOR, CDF_CEIL)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformLayer {
    weights: Matrix,
    bias: Vec<f64>,
}

impl UniformLayer {
    /// Build from weights alone; the bias is derived as `-0.5·W·1`.
    pub fn from_weights(weights: Matrix) -> Self {
        let bias = weights.row_sums().into_iter().map(|s| -0.5 * s).collect();
        Self { weights, bias }
    }

    /// Build from explicit weights and bias (e.g. when loading a manifest).
    pub fn from_parts(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        ensure_len("layer bias", weights.rows(), bias.len())?;
        ensure_finite("layer weights", weights.as_slice())?;
        ensure_finite("layer bias", &bias)?;
        Ok(Self { weights, bias })
    }

    /// Draw a fresh semi-orthogonal layer from `stream`.
    pub fn random(n_in: usize, n_out: usize, stream: &mut RandomStream) -> Self {
        Self::from_weights(semi_orthogonal(n_out, n_in, stream))
    }

    pub fn n_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn n_out(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_len("layer input", self.n_in(), x.len())?;
        ensure_finite("layer input", x)?;
        Ok(self.forward_unchecked(x))
    }

    fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.weights.mul_vec(x);
        for (zj, bj) in z.iter_mut().zip(&self.bias) {
            *zj = phi(*zj + bj);
        }
        z
    }
}

/// Semi-orthogonal `n_out × n_in` matrix scaled so every row has squared
/// norm 12.
///
/// Contracting and square shapes get orthogonal rows (`W Wᵀ = 12 I`) from
/// the Q factor of a Gaussian `n_in × n_out` draw. Expanding shapes start
/// from the Q factor of a Gaussian `n_out × n_in` draw and are balanced into
/// an equal-norm tight frame, so rows have equal norm and columns stay
/// orthogonal.
pub fn semi_orthogonal(n_out: usize, n_in: usize, stream: &mut RandomStream) -> Matrix {
    let scale = UNIFORM_VARIANCE_SCALE.sqrt();
    if n_out <= n_in {
        let g = Matrix::from_row_major(n_in, n_out, stream.gaussian_vec(n_in * n_out));
        let (q, _) = householder_qr(&g);
        let mut w = q.transpose();
        w.scale(scale);
        w
    } else {
        let g = Matrix::from_row_major(n_out, n_in, stream.gaussian_vec(n_out * n_in));
        let (q, _) = householder_qr(&g);
        let mut w = equal_norm_tight_frame(q);
        // Rows have squared norm n_in / n_out; rescale to 12.
        w.scale((UNIFORM_VARIANCE_SCALE * n_out as f64 / n_in as f64).sqrt());
        w
    }
}

/// Alternate between normalizing rows to the common norm `sqrt(n_in/n_out)`
/// and projecting onto matrices with orthonormal columns (polar factor via
/// Newton-Schulz). Ends on a row normalization so row norms are exact.
fn equal_norm_tight_frame(mut f: Matrix) -> Matrix {
    let (n_out, n_in) = (f.rows(), f.cols());
    let target = (n_in as f64 / n_out as f64).sqrt();
    let eye = Matrix::identity(n_in);
    for _ in 0..20_000 {
        normalize_rows(&mut f, target);
        if f.gram_cols().max_abs_diff(&eye) < 1e-14 {
            return f;
        }
        polar_orthonormalize(&mut f);
    }
    normalize_rows(&mut f, target);
    f
}

fn normalize_rows(f: &mut Matrix, target: f64) {
    for i in 0..f.rows() {
        let row = f.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v *= target / norm);
        }
    }
}

fn polar_orthonormalize(f: &mut Matrix) {
    let eye = Matrix::identity(f.cols());
    for _ in 0..100 {
        let gram = f.gram_cols();
        if gram.max_abs_diff(&eye) < 1e-15 {
            break;
        }
        // X ← X (3I − XᵀX) / 2
        let mut correction = Matrix::zeros(f.cols(), f.cols());
        for i in 0..f.cols() {
            for j in 0..f.cols() {
                correction[(i, j)] = 0.5 * (3.0 * eye[(i, j)] - gram[(i, j)]);
            }
        }
        *f = f.matmul(&correction);
    }
}

/// Stack of uniform layers mapping `[0,1]^N_s → (0,1)^N_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct DunPolicy {
    layers: Vec<UniformLayer>,
}

/// Layer widths for a policy of the given depth.
///
/// A depth-1 network maps `n_state → n_action` directly; deeper networks
/// keep the state width through every hidden layer and project to
/// `n_action` only in the last one. Widening early (e.g. to `n_action` when
/// `n_state = 1`) embeds a 1-D curve that later orthogonal layers flatten,
/// collapsing the output.
pub fn layer_widths(n_state: usize, n_action: usize, depth: usize) -> Vec<(usize, usize)> {
    if depth <= 1 {
        return vec![(n_state, n_action)];
    }
    let hidden = n_state;
    let mut widths = Vec::with_capacity(depth);
    widths.push((n_state, hidden));
    widths.extend(std::iter::repeat_n((hidden, hidden), depth - 2));
    widths.push((hidden, n_action));
    widths
}

impl DunPolicy {
    /// Build the policy for `cfg`, drawing all layers in order from `stream`.
    pub fn build(cfg: &EnvConfig, stream: &mut RandomStream) -> Self {
        Self::build_with(cfg.n_state, cfg.n_action, cfg.policy_complexity, stream)
    }

    pub fn build_with(
        n_state: usize,
        n_action: usize,
        depth: usize,
        stream: &mut RandomStream,
    ) -> Self {
        let layers = layer_widths(n_state, n_action, depth)
            .into_iter()
            .map(|(n_in, n_out)| UniformLayer::random(n_in, n_out, stream))
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<UniformLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("policy needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            ensure_len("chained layer width", pair[0].n_out(), pair[1].n_in())?;
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[UniformLayer] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out()
    }

    /// Optimal action `π★(s)`. States outside the unit cube are evaluated
    /// as-is unless `clip_input` is set.
    pub fn optimal_action(&self, s: &[f64], clip_input: bool) -> Result<Vec<f64>> {
        ensure_len("policy input", self.input_dim(), s.len())?;
        ensure_finite("policy input", s)?;
        let mut x: Vec<f64> = if clip_input {
            s.iter().map(|v| v.clamp(0.0, 1.0)).collect()
        } else {
            s.to_vec()
        };
        for layer in &self.layers {
            x = layer.forward_unchecked(&x);
        }
        Ok(x)
    }

    /// `π★(s)` without clipping.
    pub fn act(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.optimal_action(s, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamId;

    /// Independent erf via its Maclaurin series (alternating, summed until
    /// terms vanish); adequate for |x| ≤ 3 at 1e-13.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term.abs() > 1e-18 {
            n += 1.0;
            term *= -x * x / n;
            sum += term / (2.0 * n + 1.0);
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    }

    fn phi_oracle(z: f64) -> f64 {
        0.5 * (1.0 + erf_series(z / SQRT_2))
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(std_normal_cdf(0.0).unwrap(), 0.5);
        assert!((std_normal_cdf(1.959964).unwrap() - 0.975).abs() < 1e-6);
        // Oracle value 0.975000000903558 from arbitrary precision.
        assert!((std_normal_cdf(1.959964).unwrap() - 0.975000000903558).abs() < 1e-12);
        assert!(std_normal_cdf(f64::NAN).is_err());
    }

    #[test]
    fn cdf_matches_series_oracle() {
        let mut s = RandomStream::derive(17, 0u64);
        for _ in 0..10_000 {
            let z = s.uniform_range(-4.0, 4.0);
            assert!((std_normal_cdf(z).unwrap() - phi_oracle(z)).abs() < 1e-9, "z={z}");
        }
    }

    #[test]
    fn cdf_symmetry() {
        let mut s = RandomStream::derive(18, 0u64);
        for _ in 0..10_000 {
            let z = s.uniform_range(-8.0, 8.0);
            let sum = std_normal_cdf(z).unwrap() + std_normal_cdf(-z).unwrap();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cdf_strictly_inside_unit_interval() {
        for z in [-1e3, -40.0, 40.0, 1e3, f64::INFINITY, f64::NEG_INFINITY] {
            let p = std_normal_cdf(z).unwrap();
            assert!(p > 0.0 && p < 1.0, "{z} -> {p}");
        }
    }

    #[test]
    fn scalar_layer_examples() {
        let w = UNIFORM_VARIANCE_SCALE.sqrt();
        let layer = UniformLayer::from_weights(Matrix::from_row_major(1, 1, vec![w]));
        assert!((layer.bias()[0] + w / 2.0).abs() < 1e-15);
        assert!((layer.forward(&[0.5]).unwrap()[0] - 0.5).abs() < 1e-15);
        // Φ(−√3) = 0.0416322583317752 (arbitrary precision oracle).
        let y0 = layer.forward(&[0.0]).unwrap()[0];
        assert!((y0 - 0.0416322583317752).abs() < 1e-12);
        assert!((y0 - phi_oracle(-3f64.sqrt())).abs() < 1e-12);
        assert!(layer.forward(&[0.5, 0.5]).is_err());
    }

    fn assert_layer_invariants(layer: &UniformLayer) {
        let w = layer.weights();
        let (n_out, n_in) = (w.rows(), w.cols());
        if n_out <= n_in {
            let mut target = Matrix::identity(n_out);
            target.scale(12.0);
            assert!(w.gram_rows().max_abs_diff(&target) < 1e-9);
        } else {
            for i in 0..n_out {
                let sq: f64 = w.row(i).iter().map(|v| v * v).sum();
                assert!((sq - 12.0).abs() < 1e-9, "row {i} norm² {sq}");
            }
            let g = w.gram_cols();
            for i in 0..n_in {
                for j in 0..n_in {
                    if i != j {
                        assert!(g[(i, j)].abs() < 1e-9, "cols {i},{j}: {}", g[(i, j)]);
                    }
                }
            }
        }
        for (b, s) in layer.bias().iter().zip(w.row_sums()) {
            assert!((b + 0.5 * s).abs() < 1e-12);
        }
    }

    #[test]
    fn layers_satisfy_orthogonality_invariants() {
        for seed in 0..5 {
            let mut s = RandomStream::derive(seed, StreamId::PolicyWeights);
            for n_in in 1..=12 {
                for n_out in 1..=12 {
                    assert_layer_invariants(&UniformLayer::random(n_in, n_out, &mut s));
                }
            }
            for (n_in, n_out) in [(1, 32), (3, 32), (16, 32), (32, 16), (31, 32)] {
                assert_layer_invariants(&UniformLayer::random(n_in, n_out, &mut s));
            }
        }
    }

    #[test]
    fn build_depth_and_widths() {
        let cfg = EnvConfig {
            n_state: 4,
            n_action: 4,
            ..EnvConfig::with_seed(3)
        };
        let p = DunPolicy::build(&cfg, &mut RandomStream::derive(3, StreamId::PolicyWeights));
        assert_eq!(p.depth(), 1);
        assert_layer_invariants(&p.layers()[0]);

        let deep = EnvConfig {
            policy_complexity: 10,
            ..EnvConfig::with_seed(3)
        };
        let a = DunPolicy::build(&deep, &mut RandomStream::derive(3, StreamId::PolicyWeights));
        let b = DunPolicy::build(&deep, &mut RandomStream::derive(3, StreamId::PolicyWeights));
        assert_eq!(a.depth(), 10);
        assert_eq!(a, b);
        assert_eq!(a.input_dim(), 8);
        assert_eq!(a.output_dim(), 4);
        for l in a.layers() {
            assert_layer_invariants(l);
        }
        assert_eq!(layer_widths(2, 5, 3), vec![(2, 2), (2, 2), (2, 5)]);
        assert_eq!(layer_widths(8, 4, 2), vec![(8, 8), (8, 4)]);
    }

    #[test]
    fn from_layers_rejects_broken_chain() {
        let mut s = RandomStream::derive(1, 2u64);
        let l1 = UniformLayer::random(4, 3, &mut s);
        let l2 = UniformLayer::random(4, 2, &mut s);
        assert!(DunPolicy::from_layers(vec![l1, l2]).is_err());
        assert!(DunPolicy::from_layers(vec![]).is_err());
    }

    #[test]
    fn optimal_action_handles_ood_and_errors() {
        let cfg = EnvConfig::with_seed(11);
        let p = DunPolicy::build(&cfg, &mut RandomStream::derive(11, StreamId::PolicyWeights));
        let s = [1.4; 8];
        let a = p.optimal_action(&s, false).unwrap();
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|v| *v > 0.0 && *v < 1.0));
        assert_eq!(a, p.optimal_action(&s, false).unwrap());
        assert_eq!(p.optimal_action(&s, true).unwrap(), p.act(&[1.0; 8]).unwrap());
        let mut bad = [0.5; 8];
        bad[0] = f64::NAN;
        assert!(matches!(p.act(&bad), Err(Error::NonFinite(_))));
        assert!(p.act(&[0.5; 3]).is_err());
    }

    #[test]
    fn outputs_strictly_inside_unit_interval() {
        let mut s = RandomStream::derive(4, 0u64);
        let layer = UniformLayer::random(8, 4, &mut s);
        for _ in 0..100_000 {
            let x = s.uniform_vec(8);
            assert!(layer.forward(&x).unwrap().iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }
}
