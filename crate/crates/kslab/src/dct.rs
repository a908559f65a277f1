//! Dense cosine transforms used to diagonalise the mirrored-ghost Neumann
//! Laplacian on one axis.
//!
//! With cell centers `x_i = (i + 1/2) h`, the vectors
//! `v_k(i) = cos(pi k (i + 1/2) / n)` satisfy the three-point stencil with
//! mirror ghosts exactly, with eigenvalue `-(4/h^2) sin^2(pi k / (2n))`.
//! Forward is an unnormalised DCT-II; the inverse folds in the `2/n` and
//! half-weight of mode 0. Sizes here are small (tens to low hundreds), so
//! plain matrix application beats FFT-based schemes and works for any `n`.

/// Precomputed transform and eigenvalues for one axis.
///
/// Matrices are stored transposed (`[i][k]` layout) so the passes can walk
/// the output contiguously; see [`pass_trailing`].
pub(crate) struct AxisTransform {
    /// `fwd_t[i * n + k] = cos(pi k (i + 1/2) / n)`.
    fwd_t: Vec<f64>,
    /// `inv_t[k * n + i] = (2/n) w_k cos(pi k (i + 1/2) / n)`, `w_0 = 1/2`.
    inv_t: Vec<f64>,
    /// Eigenvalue of the Neumann Laplacian for mode `k`.
    pub eig: Vec<f64>,
}

impl AxisTransform {
    pub fn new(n: usize, h: f64) -> AxisTransform {
        let mut fwd_t = vec![0.0; n * n];
        let mut inv_t = vec![0.0; n * n];
        for k in 0..n {
            for i in 0..n {
                let c = (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n as f64).cos();
                fwd_t[i * n + k] = c;
                let w = if k == 0 { 0.5 } else { 1.0 };
                inv_t[k * n + i] = 2.0 / n as f64 * w * c;
            }
        }
        let eig = (0..n)
            .map(|k| {
                let s = (std::f64::consts::PI * k as f64 / (2.0 * n as f64)).sin();
                -4.0 / (h * h) * s * s
            })
            .collect();
        AxisTransform { fwd_t, inv_t, eig }
    }

    /// Forward matrix, transposed layout: entry `(k, i)` lives at `[i*n + k]`.
    pub fn fwd_matrix(&self) -> &[f64] {
        &self.fwd_t
    }

    /// Inverse matrix, transposed layout: entry `(i, k)` lives at `[k*n + i]`.
    pub fn inv_matrix(&self) -> &[f64] {
        &self.inv_t
    }
}

/// Applies a matrix along the fastest-varying axis:
/// `out[r*n + k] = sum_i mt[i*n + k] * input[r*n + i]` for every row `r`
/// (`mt` is the transposed matrix from [`AxisTransform`]).
///
/// Accumulating whole output rows keeps the inner loop free of reductions,
/// so it vectorises, while the `i`-ordered sums match a plain dot product
/// bit for bit.
pub(crate) fn pass_trailing(input: &[f64], out: &mut [f64], mt: &[f64], n: usize) {
    debug_assert_eq!(input.len(), out.len());
    debug_assert_eq!(input.len() % n, 0);
    for (in_row, out_row) in input.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        out_row.fill(0.0);
        for (i, &v) in in_row.iter().enumerate() {
            let mrow = &mt[i * n..i * n + n];
            for (o, &w) in out_row.iter_mut().zip(mrow) {
                *o += w * v;
            }
        }
    }
}

/// Applies a matrix along the slowest-varying axis of an `[n][inner]` block:
/// `out[k*inner + t] = sum_j mt[j*n + k] * input[j*inner + t]`
/// (`mt` transposed as in [`pass_trailing`]).
pub(crate) fn pass_leading(input: &[f64], out: &mut [f64], mt: &[f64], n: usize, inner: usize) {
    debug_assert_eq!(input.len(), n * inner);
    debug_assert_eq!(out.len(), n * inner);
    out.fill(0.0);
    for (k, out_row) in out.chunks_exact_mut(inner).enumerate() {
        for (j, in_row) in input.chunks_exact(inner).enumerate() {
            let w = mt[j * n + k];
            if w != 0.0 {
                for (o, &v) in out_row.iter_mut().zip(in_row) {
                    *o += w * v;
                }
            }
        }
    }
}
