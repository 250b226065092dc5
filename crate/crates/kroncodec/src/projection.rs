//! The learned D→d_model linear map: seeded initialization, forward
//! application, the analytic weight gradient, and parameter-accounting
//! arithmetic for comparing this input pathway against a conventional
//! V×d_model embedding table.
//!
//! No training loop lives here; the gradient exists so the
//! differentiability contract can be checked against finite differences.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::io;
use crate::matrix::Matrix;

/// Immutable D×d_model weight matrix plus the seed that initialized it.
#[derive(Debug, Clone)]
pub struct ProjectionMatrix {
    weights: Matrix,
    seed: u64,
}

impl ProjectionMatrix {
    pub fn from_weights(weights: Matrix, seed: u64) -> Self {
        ProjectionMatrix { weights, seed }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn to_file(&self, path: &Path) -> Result<()> {
        io::write_projection(path, self.seed, &self.weights)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let p = io::read_projection(path)?;
        Ok(ProjectionMatrix { weights: p.weights, seed: p.seed })
    }
}

/// Draw a fresh D×d_model matrix with i.i.d. N(0, std = 1/√D) entries.
/// Deterministic in `seed`.
pub fn init_projection(input_dim: usize, output_dim: usize, seed: u64) -> Result<ProjectionMatrix> {
    if input_dim == 0 || output_dim == 0 {
        return Err(Error::InvalidArg("projection dims must be positive".into()));
    }
    let n = input_dim
        .checked_mul(output_dim)
        .ok_or_else(|| Error::InvalidArg("projection dims overflow".into()))?;
    let std = 1.0 / (input_dim as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
    Ok(ProjectionMatrix { weights: Matrix::from_vec(input_dim, output_dim, data)?, seed })
}

/// Forward map: plain matrix product, no bias. Row `i` of the output is
/// `rows[i] · W`. Accumulates in f64; zero input coordinates are skipped,
/// which makes sparse (non-z-normalized) codec rows cheap.
pub fn project(codec_rows: &Matrix, w: &ProjectionMatrix) -> Result<Matrix> {
    if codec_rows.cols() != w.input_dim() {
        return Err(Error::DimMismatch { expected: w.input_dim(), got: codec_rows.cols() });
    }
    let d_model = w.output_dim();
    let mut out = Matrix::zeros(codec_rows.rows(), d_model);

    let fill = |(input, out_row): (&[f32], &mut [f32])| {
        let mut acc = vec![0f64; d_model];
        for (k, &x) in input.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let x = x as f64;
            let w_row = w.weights.row(k);
            for (a, &wv) in acc.iter_mut().zip(w_row) {
                *a += x * wv as f64;
            }
        }
        for (o, &a) in out_row.iter_mut().zip(&acc) {
            *o = a as f32;
        }
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        codec_rows
            .data()
            .par_chunks(codec_rows.cols().max(1))
            .zip(out.data_mut().par_chunks_mut(d_model))
            .for_each(fill);
    }
    #[cfg(not(feature = "parallel"))]
    codec_rows
        .data()
        .chunks(codec_rows.cols().max(1))
        .zip(out.data_mut().chunks_mut(d_model))
        .for_each(fill);

    Ok(out)
}

/// Weight gradient of any scalar loss through the forward map:
/// `codec_rowsᵀ · upstream`, where `upstream[i][j] = ∂loss/∂out[i][j]`.
pub fn grad_projection(codec_rows: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    if codec_rows.rows() != upstream.rows() {
        return Err(Error::DimMismatch { expected: codec_rows.rows(), got: upstream.rows() });
    }
    let d = codec_rows.cols();
    let d_model = upstream.cols();
    let n = codec_rows.rows();
    let mut grad = vec![0f64; d * d_model];

    // each gradient row k consumes column k of the input — rows of the
    // output are independent, so the parallel split is over k
    let fill = |(k, grad_row): (usize, &mut [f64])| {
        for i in 0..n {
            let a = codec_rows.get(i, k) as f64;
            if a == 0.0 {
                continue;
            }
            for (g, &u) in grad_row.iter_mut().zip(upstream.row(i)) {
                *g += a * u as f64;
            }
        }
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        grad.par_chunks_mut(d_model.max(1)).enumerate().for_each(|(k, row)| fill((k, row)));
    }
    #[cfg(not(feature = "parallel"))]
    grad.chunks_mut(d_model.max(1)).enumerate().for_each(|(k, row)| fill((k, row)));

    Matrix::from_vec(d, d_model, grad.into_iter().map(|x| x as f32).collect())
}

/// Input-side parameter arithmetic comparing a V×d_model embedding table
/// against the codec-plus-projection pathway.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ParamAccounting {
    /// V·d_model — the conventional input embedding table.
    pub bpe_input_params: u64,
    /// D·d_model — the projection, the only trainable input-side block.
    pub kron_proj_params: u64,
    /// V·(d_p+2) — the fixed, non-trainable codec buffer.
    pub buffer_bytes: u64,
    /// 1 − proj/bpe.
    pub input_side_reduction: f64,
    /// Against a weight-tied baseline the untied output head cancels the
    /// removed input table, leaving the projection as the net addition.
    pub net_trainable_delta_vs_tied: u64,
}

pub fn param_accounting(
    vocab_size: u64,
    d_model: u64,
    big_d: u64,
    d_p: u64,
) -> Result<ParamAccounting> {
    if vocab_size == 0 || d_model == 0 || big_d == 0 || d_p == 0 {
        return Err(Error::InvalidArg("accounting inputs must be positive".into()));
    }
    let bpe_input_params = vocab_size * d_model;
    let kron_proj_params = big_d * d_model;
    Ok(ParamAccounting {
        bpe_input_params,
        kron_proj_params,
        buffer_bytes: vocab_size * (d_p + 2),
        input_side_reduction: 1.0 - kron_proj_params as f64 / bpe_input_params as f64,
        net_trainable_delta_vs_tied: kron_proj_params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded_matrix(rows: usize, cols: usize, seed: u64, scale: f64) -> Matrix {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> =
            (0..rows * cols).map(|_| (rng.random_range(-1.0..1.0) * scale) as f32).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    /// Naive f64 triple-loop product — the reference for `project`.
    fn naive_product(a: &Matrix, w: &Matrix) -> Vec<f64> {
        let (n, d, m) = (a.rows(), a.cols(), w.cols());
        let mut out = vec![0f64; n * m];
        for i in 0..n {
            for k in 0..d {
                for j in 0..m {
                    out[i * m + j] += a.get(i, k) as f64 * w.get(k, j) as f64;
                }
            }
        }
        out
    }

    // ---- init ---------------------------------------------------------------

    #[test]
    fn init_std_within_two_percent() {
        let p = init_projection(4096, 768, 1337).unwrap();
        let data = p.weights().data();
        let n = data.len() as f64;
        let mean: f64 = data.iter().map(|&x| x as f64).sum::<f64>() / n;
        let var: f64 = data.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!((0.01531..=0.01594).contains(&std), "std {std}");
        assert!(mean.abs() < 1e-4, "mean {mean}");
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_projection(64, 32, 42).unwrap();
        let b = init_projection(64, 32, 42).unwrap();
        assert_eq!(a.weights().data(), b.weights().data());
        let c = init_projection(64, 32, 43).unwrap();
        assert_ne!(a.weights().data(), c.weights().data());
    }

    #[test]
    fn init_full_scale_weight_count() {
        let p = init_projection(8192, 4096, 7).unwrap();
        assert_eq!(p.weights().data().len(), 33_554_432);
    }

    #[test]
    fn init_rejects_zero_dims() {
        assert!(init_projection(0, 4, 1).is_err());
        assert!(init_projection(4, 0, 1).is_err());
    }

    // ---- project --------------------------------------------------------------

    #[test]
    fn identity_weights_pass_input_through() {
        let d = 8;
        let mut w = Matrix::zeros(d, d);
        for i in 0..d {
            w.set(i, i, 1.0);
        }
        let w = ProjectionMatrix::from_weights(w, 0);
        let a = seeded_matrix(3, d, 5, 1.0);
        let out = project(&a, &w).unwrap();
        assert_eq!(out.data(), a.data());
    }

    #[test]
    fn zero_row_maps_to_zero_row() {
        let w = init_projection(16, 4, 9).unwrap();
        let mut a = seeded_matrix(2, 16, 11, 1.0);
        for j in 0..16 {
            a.set(1, j, 0.0);
        }
        let out = project(&a, &w).unwrap();
        assert!(out.row(1).iter().all(|&x| x == 0.0));
        assert!(out.row(0).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn project_matches_naive_triple_loop() {
        let w = init_projection(4096, 32, 1337).unwrap();
        let a = seeded_matrix(4, 4096, 21, 0.5);
        let out = project(&a, &w).unwrap();
        let want = naive_product(&a, w.weights());
        for (got, want) in out.data().iter().zip(&want) {
            let tol = 1e-5 * want.abs().max(1e-3);
            assert!((*got as f64 - want).abs() <= tol, "got {got}, want {want}");
        }
    }

    #[test]
    fn project_rejects_dim_mismatch() {
        let w = init_projection(8, 4, 1).unwrap();
        let a = Matrix::zeros(2, 9);
        assert!(matches!(project(&a, &w), Err(Error::DimMismatch { expected: 8, got: 9 })));
    }

    #[test]
    fn project_empty_batch() {
        let w = init_projection(8, 4, 1).unwrap();
        let out = project(&Matrix::zeros(0, 8), &w).unwrap();
        assert_eq!(out.rows(), 0);
        assert_eq!(out.cols(), 4);
    }

    // ---- grad -------------------------------------------------------------------

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let a = seeded_matrix(3, 8, 2, 1.0);
        let g = grad_projection(&a, &Matrix::zeros(3, 5)).unwrap();
        assert!(g.data().iter().all(|&x| x == 0.0));
        assert_eq!(g.rows(), 8);
        assert_eq!(g.cols(), 5);
    }

    #[test]
    fn single_entry_row_touches_single_gradient_row() {
        let mut a = Matrix::zeros(1, 8);
        a.set(0, 3, 0.5);
        let u = seeded_matrix(1, 5, 13, 1.0);
        let g = grad_projection(&a, &u).unwrap();
        for k in 0..8 {
            if k == 3 {
                for j in 0..5 {
                    assert_eq!(g.get(k, j), 0.5 * u.get(0, j));
                }
            } else {
                assert!(g.row(k).iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn grad_rejects_batch_mismatch() {
        let a = Matrix::zeros(3, 8);
        let u = Matrix::zeros(2, 5);
        assert!(matches!(grad_projection(&a, &u), Err(Error::DimMismatch { .. })));
    }

    /// Central finite differences of loss(W) = Σ_ij (A·W)_ij · M_ij against
    /// the analytic gradient AᵀM, on randomized small instances.
    #[test]
    fn gradient_matches_central_finite_differences() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(0xFD);
        let h = 1e-4f64;
        let mut max_rel = 0f64;
        for trial in 0..120 {
            let n = rng.random_range(1..4usize);
            let d = rng.random_range(2..10usize);
            let m = rng.random_range(1..8usize);
            let a = seeded_matrix(n, d, 1000 + trial, 1.0);
            let upstream = seeded_matrix(n, m, 2000 + trial, 1.0);
            let w0 = seeded_matrix(d, m, 3000 + trial, 0.3);

            let loss = |w: &Matrix| -> f64 {
                let mut total = 0f64;
                for i in 0..n {
                    for j in 0..m {
                        let mut o = 0f64;
                        for k in 0..d {
                            o += a.get(i, k) as f64 * w.get(k, j) as f64;
                        }
                        total += o * upstream.get(i, j) as f64;
                    }
                }
                total
            };

            let analytic = grad_projection(&a, &upstream).unwrap();
            for k in 0..d {
                for j in 0..m {
                    let w_kj = w0.get(k, j) as f64;
                    let up = (w_kj + h) as f32;
                    let down = (w_kj - h) as f32;
                    let mut wp = w0.clone();
                    wp.set(k, j, up);
                    let mut wm = w0.clone();
                    wm.set(k, j, down);
                    // divide by the step as actually realized in f32
                    let fd = (loss(&wp) - loss(&wm)) / (up as f64 - down as f64);
                    let g = analytic.get(k, j) as f64;
                    let rel = (g - fd).abs() / g.abs().max(1.0);
                    max_rel = max_rel.max(rel);
                }
            }
        }
        assert!(max_rel <= 1e-4, "max relative error {max_rel}");
    }

    // ---- accounting ----------------------------------------------------------

    #[test]
    fn accounting_reference_rows() {
        // 50k-vocab, 768-wide configuration
        let r = param_accounting(50272, 768, 4096, 16).unwrap();
        assert_eq!(r.bpe_input_params, 38_608_896);
        assert_eq!(r.kron_proj_params, 3_145_728);
        assert_eq!(r.buffer_bytes, 904_896);
        assert_eq!(r.net_trainable_delta_vs_tied, 3_145_728);
        assert!((r.input_side_reduction - (1.0 - 3_145_728.0 / 38_608_896.0)).abs() < 1e-12);
        assert!((r.input_side_reduction - 0.92).abs() < 0.01);

        // 131k-vocab, 2048-wide configuration
        let r = param_accounting(131072, 2048, 8192, 32).unwrap();
        assert_eq!(r.bpe_input_params, 268_435_456);
        assert_eq!(r.kron_proj_params, 16_777_216);
        assert_eq!(r.buffer_bytes, 4_456_448);
        assert_eq!(r.input_side_reduction, 0.9375);

        // 131k-vocab, 4096-wide configuration
        let r = param_accounting(131072, 4096, 8192, 32).unwrap();
        assert_eq!(r.bpe_input_params, 536_870_912);
        assert_eq!(r.kron_proj_params, 33_554_432);
        assert_eq!(r.buffer_bytes, 4_456_448);
        assert_eq!(r.input_side_reduction, 0.9375);
    }

    #[test]
    fn accounting_unit_case_and_validation() {
        let r = param_accounting(1, 1, 1, 1).unwrap();
        assert_eq!(r.bpe_input_params, 1);
        assert_eq!(r.kron_proj_params, 1);
        assert_eq!(r.input_side_reduction, 0.0);
        assert_eq!(r.buffer_bytes, 3);
        assert!(param_accounting(0, 1, 1, 1).is_err());
    }

    // ---- persistence -----------------------------------------------------------

    #[test]
    fn projection_file_round_trip() {
        let p = init_projection(16, 8, 99).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.kpj");
        p.to_file(&path).unwrap();
        let back = ProjectionMatrix::from_file(&path).unwrap();
        assert_eq!(back.seed(), 99);
        assert_eq!(back.weights().data(), p.weights().data());
    }

    // ---- properties ---------------------------------------------------------------

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn prop_project_is_linear(
            seed in 0u64..1000,
            alpha in -2.0f64..2.0,
            beta in -2.0f64..2.0,
        ) {
            let w = init_projection(12, 6, seed).unwrap();
            let a = seeded_matrix(3, 12, seed.wrapping_add(1), 1.0);
            let b = seeded_matrix(3, 12, seed.wrapping_add(2), 1.0);

            let mut combo = Matrix::zeros(3, 12);
            for i in 0..3 {
                for k in 0..12 {
                    combo.set(i, k, (alpha * a.get(i, k) as f64 + beta * b.get(i, k) as f64) as f32);
                }
            }
            let lhs = project(&combo, &w).unwrap();
            let pa = project(&a, &w).unwrap();
            let pb = project(&b, &w).unwrap();
            for i in 0..lhs.data().len() {
                let want = alpha * pa.data()[i] as f64 + beta * pb.data()[i] as f64;
                let got = lhs.data()[i] as f64;
                prop_assert!(
                    (got - want).abs() <= 1e-5 * want.abs().max(1.0),
                    "got {}, want {}", got, want
                );
            }
        }
    }
}
