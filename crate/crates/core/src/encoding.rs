//! RoPE and 3D-RPE encoding kernels.
//!
//! A head vector of width `d` is read as `d/2` complex numbers
//! `z_l = h[l] + i*h[d/2 + l]`. RoPE multiplies each `z_l` by `e^{i*m*theta_l}`.
//! The chunked encoding first mixes `h` with its quarter-turn `perp(h)` by the
//! chunk phase and then applies the same token rotation:
//!
//! ```text
//! h~ = R(m) * (cos(phi_j) * perp(h) + sin(phi_j) * h)
//! ```
//!
//! Since `perp(h)` is `i*h` in the paired-complex view, this collapses to a
//! single phase `e^{i(m*theta_l + pi/2 - phi_j)}` per pair, which is what
//! [`encode_3d_phase`] computes. [`encode_3d`] is the real-arithmetic
//! reference and the two are cross-checked in tests.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;

use crate::angles::{AngleSchedule, ChunkAngles};
use crate::error::{Error, Result};

/// Largest head width for which [`rotation_matrix`] materializes a dense matrix.
pub const MAX_MATRIX_DIM: usize = 256;

/// One attention head's state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadVector(Vec<f64>);

impl HeadVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || !values.len().is_multiple_of(2) {
            return Err(Error::Dimension(format!(
                "head vector length must be even and positive, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("head vector entry {bad}")));
        }
        Ok(Self(values))
    }

    pub fn zeros(d: usize) -> Result<Self> {
        Self::new(vec![0.0; d])
    }

    pub fn d(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn first_half(&self) -> &[f64] {
        &self.0[..self.0.len() / 2]
    }

    pub fn second_half(&self) -> &[f64] {
        &self.0[self.0.len() / 2..]
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// Pair `l` as the complex number `h[l] + i*h[d/2 + l]`.
    pub fn pair(&self, l: usize) -> Complex64 {
        let half = self.0.len() / 2;
        Complex64::new(self.0[l], self.0[half + l])
    }

    pub(crate) fn from_pairs(pairs: impl ExactSizeIterator<Item = Complex64>) -> Self {
        let half = pairs.len();
        let mut values = vec![0.0; 2 * half];
        for (l, z) in pairs.enumerate() {
            values[l] = z.re;
            values[half + l] = z.im;
        }
        Self(values)
    }
}

/// A head vector after positional encoding, tagged with where it was encoded.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedVector {
    pub vector: HeadVector,
    pub chunk: usize,
    pub within: usize,
}

impl EncodedVector {
    pub fn d(&self) -> usize {
        self.vector.d()
    }

    pub fn values(&self) -> &[f64] {
        self.vector.values()
    }

    pub fn norm(&self) -> f64 {
        self.vector.norm()
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Dense row-major matrix, used for verification-sized rotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Mismatch {
                left: self.cols,
                right: other.rows,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    out[(r, c)] += a * other[(k, c)];
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(Error::Mismatch {
                left: self.cols,
                right: v.len(),
            });
        }
        Ok((0..self.rows)
            .map(|r| {
                self.data[r * self.cols..(r + 1) * self.cols]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect())
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

fn check_dims(h: &HeadVector, schedule: &AngleSchedule) -> Result<()> {
    if h.d() != schedule.d() {
        return Err(Error::Mismatch {
            left: h.d(),
            right: schedule.d(),
        });
    }
    Ok(())
}

/// Quarter turn of every pair: `[h1, h2] -> [-h2, h1]`.
pub fn perp(h: &HeadVector) -> HeadVector {
    let mut out = Vec::with_capacity(h.d());
    out.extend(h.second_half().iter().map(|x| -x));
    out.extend_from_slice(h.first_half());
    HeadVector(out)
}

/// Dense rotation for token index `m`: pair `l` couples entries `l` and `d/2 + l`.
pub fn rotation_matrix(m: usize, schedule: &AngleSchedule) -> Result<Matrix> {
    let d = schedule.d();
    if d > MAX_MATRIX_DIM {
        return Err(Error::Dimension(format!(
            "dense rotation is limited to d <= {MAX_MATRIX_DIM}, got {d}"
        )));
    }
    let half = schedule.half();
    let mut r = Matrix::zeros(d, d);
    for (l, theta) in schedule.thetas().iter().enumerate() {
        let (sin, cos) = (m as f64 * theta).sin_cos();
        r[(l, l)] = cos;
        r[(l, half + l)] = -sin;
        r[(half + l, l)] = sin;
        r[(half + l, half + l)] = cos;
    }
    Ok(r)
}

/// Rotates every pair `l` of `values` by `m * theta_l` (the O(d) form of [`rotation_matrix`]).
pub(crate) fn rotate_pairs(values: &[f64], m: f64, thetas: &[f64]) -> Vec<f64> {
    let half = thetas.len();
    let mut out = vec![0.0; 2 * half];
    for (l, theta) in thetas.iter().enumerate() {
        let (sin, cos) = (m * theta).sin_cos();
        let (a, b) = (values[l], values[half + l]);
        out[l] = cos * a - sin * b;
        out[half + l] = sin * a + cos * b;
    }
    out
}

/// Standard RoPE at token position `m`.
pub fn encode_rope(h: &HeadVector, m: usize, schedule: &AngleSchedule) -> Result<EncodedVector> {
    check_dims(h, schedule)?;
    Ok(EncodedVector {
        vector: HeadVector(rotate_pairs(h.values(), m as f64, schedule.thetas())),
        chunk: 0,
        within: m,
    })
}

/// Chunked encoding of `h` at chunk `j`, within-chunk index `m`, in real arithmetic.
pub fn encode_3d(
    h: &HeadVector,
    j: usize,
    m: usize,
    schedule: &AngleSchedule,
    phis: &ChunkAngles,
) -> Result<EncodedVector> {
    check_dims(h, schedule)?;
    let (sin_phi, cos_phi) = phis.phi(j)?.sin_cos();
    let mixed: Vec<f64> = perp(h)
        .values()
        .iter()
        .zip(h.values())
        .map(|(p, x)| cos_phi * p + sin_phi * x)
        .collect();
    Ok(EncodedVector {
        vector: HeadVector(rotate_pairs(&mixed, m as f64, schedule.thetas())),
        chunk: j,
        within: m,
    })
}

/// Unit phase `e^{i(m*theta + pi/2 - phi)}` applied to a pair by the chunked encoding.
///
/// Evaluated as a product of the token and chunk factors rather than from the
/// summed angle, which loses absolute precision once `m * theta` is large.
pub(crate) fn phase_3d(theta: f64, m: usize, phi: f64) -> Complex64 {
    Complex64::cis(m as f64 * theta) * Complex64::cis(FRAC_PI_2 - phi)
}

/// Chunked encoding computed as one complex phase per pair.
pub fn encode_3d_phase(
    h: &HeadVector,
    j: usize,
    m: usize,
    schedule: &AngleSchedule,
    phis: &ChunkAngles,
) -> Result<EncodedVector> {
    check_dims(h, schedule)?;
    let phi = phis.phi(j)?;
    let pairs = schedule
        .thetas()
        .iter()
        .enumerate()
        .map(|(l, &theta)| h.pair(l) * phase_3d(theta, m, phi));
    Ok(EncodedVector {
        vector: HeadVector::from_pairs(pairs),
        chunk: j,
        within: m,
    })
}

/// Applies the transpose (inverse) of the chunked encoding map to `g`.
///
/// The encoding is orthogonal, so this pulls a gradient on the encoded
/// vector back to the raw vector.
pub fn encode_3d_transpose(
    g: &[f64],
    j: usize,
    m: usize,
    schedule: &AngleSchedule,
    phis: &ChunkAngles,
) -> Result<Vec<f64>> {
    if g.len() != schedule.d() {
        return Err(Error::Mismatch {
            left: g.len(),
            right: schedule.d(),
        });
    }
    let phi = phis.phi(j)?;
    let half = schedule.half();
    let mut out = vec![0.0; g.len()];
    for (l, &theta) in schedule.thetas().iter().enumerate() {
        let z = Complex64::new(g[l], g[half + l]) * phase_3d(theta, m, phi).conj();
        out[l] = z.re;
        out[half + l] = z.im;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angles::{phi_schedule, theta_schedule};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn hv(v: &[f64]) -> HeadVector {
        HeadVector::new(v.to_vec()).unwrap()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn head_vector_validation() {
        assert!(matches!(
            HeadVector::new(vec![1.0; 3]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(HeadVector::new(vec![]), Err(Error::Dimension(_))));
        assert!(matches!(
            HeadVector::new(vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn perp_examples() {
        assert_eq!(perp(&hv(&[1.0, 0.0])).values(), &[0.0, 1.0]);
        assert_eq!(perp(&hv(&[2.0, 3.0])).values(), &[-3.0, 2.0]);
        let h = hv(&[1.0, -2.0, 3.5, 0.25]);
        assert_eq!(perp(&h).values(), &[-3.5, -0.25, 1.0, -2.0]);
        let twice: Vec<f64> = h.values().iter().map(|x| -x).collect();
        assert_eq!(perp(&perp(&h)).values(), twice.as_slice());
    }

    #[test]
    fn rotation_matrix_examples() {
        let s = theta_schedule(8, 10_000.0).unwrap();
        assert_eq!(rotation_matrix(0, &s).unwrap(), Matrix::identity(8));

        let quarter = AngleSchedule::from_thetas(vec![FRAC_PI_2]).unwrap();
        let r = rotation_matrix(1, &quarter).unwrap();
        let want = [[0.0, -1.0], [1.0, 0.0]];
        for (i, row) in want.iter().enumerate() {
            for (j, w) in row.iter().enumerate() {
                assert!((r[(i, j)] - w).abs() < 1e-15);
            }
        }

        // m=2, thetas [pi/2, pi]: angles pi and 2pi.
        let s = AngleSchedule::from_thetas(vec![FRAC_PI_2, PI]).unwrap();
        let r = rotation_matrix(2, &s).unwrap();
        let want = [
            [-1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, -1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        for (i, row) in want.iter().enumerate() {
            for (j, w) in row.iter().enumerate() {
                assert!((r[(i, j)] - w).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn rotation_matrix_size_limit() {
        let s = theta_schedule(258, 10_000.0).unwrap();
        assert!(matches!(rotation_matrix(1, &s), Err(Error::Dimension(_))));
        assert!(rotation_matrix(1, &theta_schedule(256, 10_000.0).unwrap()).is_ok());
    }

    #[test]
    fn encode_rope_examples() {
        let s = theta_schedule(4, 10_000.0).unwrap();
        let h = hv(&[0.3, -1.2, 2.0, 0.7]);
        assert_eq!(encode_rope(&h, 0, &s).unwrap().vector, h);

        let quarter = AngleSchedule::from_thetas(vec![FRAC_PI_2]).unwrap();
        let e = encode_rope(&hv(&[1.0, 0.0]), 1, &quarter).unwrap();
        assert_close(e.values(), &[0.0, 1.0], 1e-15);

        let r = rotation_matrix(7, &s).unwrap();
        let want = r.mul_vec(h.values()).unwrap();
        assert_close(encode_rope(&h, 7, &s).unwrap().values(), &want, 1e-14);

        let wide = theta_schedule(8, 10_000.0).unwrap();
        assert!(matches!(
            encode_rope(&h, 1, &wide),
            Err(Error::Mismatch { .. })
        ));
    }

    #[test]
    fn encode_3d_examples() {
        let s = theta_schedule(4, 10_000.0).unwrap();
        let right = ChunkAngles::from_phis(vec![FRAC_PI_2]).unwrap();
        let h = hv(&[0.3, -1.2, 2.0, 0.7]);
        let rope = encode_rope(&h, 5, &s).unwrap();
        assert_close(
            encode_3d(&h, 0, 5, &s, &right).unwrap().values(),
            rope.values(),
            1e-15,
        );
        assert_close(
            encode_3d(&h, 0, 0, &s, &right).unwrap().values(),
            h.values(),
            1e-15,
        );

        let s2 = theta_schedule(2, 10_000.0).unwrap();
        let phis = phi_schedule(1, 10_000.0).unwrap();
        let e = encode_3d(&hv(&[1.0, 0.0]), 0, 0, &s2, &phis).unwrap();
        assert_close(e.values(), &[1f64.sin(), 1f64.cos()], 1e-15);
        assert!((e.values()[0] - 0.84147).abs() < 1e-5);
        assert!((e.values()[1] - 0.54030).abs() < 1e-5);

        assert_eq!(
            encode_3d(&h, 1, 0, &s, &right),
            Err(Error::ChunkIndex {
                index: 1,
                num_chunks: 1
            })
        );
        assert!(encode_3d_phase(&h, 3, 0, &s, &right).is_err());
    }

    #[test]
    fn encode_3d_phase_examples() {
        let s = theta_schedule(4, 10_000.0).unwrap();
        let right = ChunkAngles::from_phis(vec![FRAC_PI_2]).unwrap();
        let h = hv(&[0.3, -1.2, 2.0, 0.7]);
        assert_close(
            encode_3d_phase(&h, 0, 0, &s, &right).unwrap().values(),
            h.values(),
            1e-15,
        );

        // m*theta + pi/2 - phi = pi with theta = pi/2, m = 1, phi = 0.
        let quarter = AngleSchedule::from_thetas(vec![FRAC_PI_2]).unwrap();
        let zero = ChunkAngles::from_phis(vec![0.0]).unwrap();
        let e = encode_3d_phase(&hv(&[0.0, 1.0]), 0, 1, &quarter, &zero).unwrap();
        assert_close(e.values(), &[0.0, -1.0], 1e-15);
    }

    #[test]
    fn transpose_inverts_encoding() {
        let s = theta_schedule(6, 10_000.0).unwrap();
        let phis = phi_schedule(3, 10_000.0).unwrap();
        let h = hv(&[0.3, -1.2, 2.0, 0.7, -0.1, 1.9]);
        let e = encode_3d(&h, 2, 9, &s, &phis).unwrap();
        let back = encode_3d_transpose(e.values(), 2, 9, &s, &phis).unwrap();
        assert_close(&back, h.values(), 1e-14);
    }

    fn head(d_half: usize) -> impl Strategy<Value = HeadVector> {
        proptest::collection::vec(-10.0f64..10.0, 2 * d_half)
            .prop_map(|v| HeadVector::new(v).unwrap())
    }

    proptest! {
        #[test]
        fn isometry_and_form_equivalence(
            (h, d_half) in (1usize..33).prop_flat_map(|k| (head(k), Just(k))),
            j in 0usize..4,
            m in 0usize..5000,
        ) {
            let s = theta_schedule(2 * d_half, 10_000.0).unwrap();
            let phis = phi_schedule(4, 10_000.0).unwrap();
            let real = encode_3d(&h, j, m, &s, &phis).unwrap();
            let phase = encode_3d_phase(&h, j, m, &s, &phis).unwrap();
            for (a, b) in real.values().iter().zip(phase.values()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            let n = h.norm();
            prop_assert!((real.norm() - n).abs() <= 1e-12 * n.max(f64::MIN_POSITIVE));
            prop_assert!(dot(h.values(), perp(&h).values()).abs() <= 1e-12 * n * n.max(1.0));
            prop_assert!((perp(&h).norm() - n).abs() <= 1e-12 * n.max(1.0));
        }

        #[test]
        fn rotation_is_orthogonal_and_composes(d_half in 1usize..9, m1 in 0usize..500, m2 in 0usize..500) {
            let s = theta_schedule(2 * d_half, 10_000.0).unwrap();
            let r1 = rotation_matrix(m1, &s).unwrap();
            let r2 = rotation_matrix(m2, &s).unwrap();
            let gram = r1.transpose().matmul(&r1).unwrap();
            prop_assert!(gram.max_abs_diff(&Matrix::identity(2 * d_half)) <= 1e-12);
            let both = r1.matmul(&r2).unwrap();
            prop_assert!(both.max_abs_diff(&rotation_matrix(m1 + m2, &s).unwrap()) <= 1e-10);
        }
    }
}
