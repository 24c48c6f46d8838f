const LANES: usize = 16;

/// Sixteen running sums, one per lane. The reduction order is fixed so every
/// implementation gives the same bits.
#[cfg_attr(all(target_arch = "x86_64", target_feature = "avx"), allow(dead_code))]
#[derive(Clone, Copy)]
struct Lanes([f32; LANES]);

#[cfg_attr(all(target_arch = "x86_64", target_feature = "avx"), allow(dead_code))]
impl Lanes {
    const ZERO: Self = Lanes([0.0; LANES]);

    #[inline(always)]
    fn add_sq_diff(&mut self, x: &[f32], y: &[f32]) {
        for l in 0..LANES {
            let d = x[l] - y[l];
            self.0[l] += d * d;
        }
    }

    #[inline(always)]
    fn add_prod(&mut self, x: &[f32], y: &[f32]) {
        for l in 0..LANES {
            self.0[l] += x[l] * y[l];
        }
    }

    #[inline(always)]
    fn sum(mut self) -> f32 {
        let mut half = LANES / 2;
        while half > 0 {
            for l in 0..half {
                self.0[l] += self.0[l + half];
            }
            half /= 2;
        }
        self.0[0]
    }
}

#[cfg(all(target_arch = "x86_64", target_feature = "avx"))]
mod simd {
    use std::arch::x86_64::*;

    /// Lanes 0..8 and 8..16 of the scalar layout.
    #[derive(Clone, Copy)]
    pub struct Acc(__m256, __m256);

    impl Acc {
        #[inline(always)]
        pub fn zero() -> Self {
            // SAFETY: avx is enabled at compile time.
            unsafe { Acc(_mm256_setzero_ps(), _mm256_setzero_ps()) }
        }

        #[inline(always)]
        pub fn add_sq_diff(&mut self, x: &[f32], y: &[f32]) {
            assert!(x.len() >= 16 && y.len() >= 16);
            // SAFETY: both slices hold at least 16 floats; loads are unaligned.
            unsafe {
                let d0 = _mm256_sub_ps(_mm256_loadu_ps(x.as_ptr()), _mm256_loadu_ps(y.as_ptr()));
                let d1 = _mm256_sub_ps(_mm256_loadu_ps(x.as_ptr().add(8)), _mm256_loadu_ps(y.as_ptr().add(8)));
                self.0 = _mm256_add_ps(self.0, _mm256_mul_ps(d0, d0));
                self.1 = _mm256_add_ps(self.1, _mm256_mul_ps(d1, d1));
            }
        }

        #[inline(always)]
        pub fn add_prod(&mut self, x: &[f32], y: &[f32]) {
            assert!(x.len() >= 16 && y.len() >= 16);
            // SAFETY: as above.
            unsafe {
                let p0 = _mm256_mul_ps(_mm256_loadu_ps(x.as_ptr()), _mm256_loadu_ps(y.as_ptr()));
                let p1 = _mm256_mul_ps(_mm256_loadu_ps(x.as_ptr().add(8)), _mm256_loadu_ps(y.as_ptr().add(8)));
                self.0 = _mm256_add_ps(self.0, p0);
                self.1 = _mm256_add_ps(self.1, p1);
            }
        }

        /// Same tree as the scalar reduction: halves of 8, 4, 2, 1.
        #[inline(always)]
        pub fn sum(self) -> f32 {
            // SAFETY: avx is enabled at compile time.
            unsafe {
                let s8 = _mm256_add_ps(self.0, self.1);
                let s4 = _mm_add_ps(_mm256_castps256_ps128(s8), _mm256_extractf128_ps(s8, 1));
                let s2 = _mm_add_ps(s4, _mm_movehl_ps(s4, s4));
                let s1 = _mm_add_ss(s2, _mm_movehdup_ps(s2));
                _mm_cvtss_f32(s1)
            }
        }
    }
}

#[cfg(all(target_arch = "x86_64", target_feature = "avx"))]
use simd::Acc;

#[cfg(not(all(target_arch = "x86_64", target_feature = "avx")))]
type Acc = Lanes;

#[cfg(not(all(target_arch = "x86_64", target_feature = "avx")))]
impl Lanes {
    #[inline(always)]
    fn zero() -> Self {
        Self::ZERO
    }
}

/// Squared Euclidean distance accumulated in f32.
///
/// Sixteen independent accumulators let the loop vectorize; the final
/// reduction order is fixed so results are reproducible bit for bit.
#[inline]
pub fn squared_l2(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let full = a.len() / LANES * LANES;
    let mut acc = Acc::zero();
    for j in (0..full).step_by(LANES) {
        acc.add_sq_diff(&a[j..j + LANES], &b[j..j + LANES]);
    }
    acc.sum() + sq_tail(&a[full..], &b[full..])
}

/// Inner product with the same lane layout as [`squared_l2`].
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let full = a.len() / LANES * LANES;
    let mut acc = Acc::zero();
    for j in (0..full).step_by(LANES) {
        acc.add_prod(&a[j..j + LANES], &b[j..j + LANES]);
    }
    let mut tail = 0.0f32;
    for (x, y) in a[full..].iter().zip(&b[full..]) {
        tail += x * y;
    }
    acc.sum() + tail
}

#[inline(always)]
fn sq_tail(a: &[f32], b: &[f32]) -> f32 {
    let mut tail = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        tail += d * d;
    }
    tail
}

const BLOCK: usize = 4;

/// `out[r] = squared_l2(x, row r of rows)` bit for bit, computed several rows
/// at a time.
pub(crate) fn squared_l2_rows(x: &[f32], rows: &[f32], out: &mut [f32]) {
    let dim = x.len();
    debug_assert_eq!(rows.len(), dim * out.len());
    let full = dim / LANES * LANES;
    let mut blocks = rows.chunks_exact(dim * BLOCK);
    let mut outs = out.chunks_exact_mut(BLOCK);
    for (block, o) in (&mut blocks).zip(&mut outs) {
        let mut acc = [Acc::zero(); BLOCK];
        for j in (0..full).step_by(LANES) {
            let xs = &x[j..j + LANES];
            for (r, a) in acc.iter_mut().enumerate() {
                let start = r * dim + j;
                a.add_sq_diff(xs, &block[start..start + LANES]);
            }
        }
        for (r, a) in acc.into_iter().enumerate() {
            o[r] = a.sum() + sq_tail(&x[full..], &block[r * dim + full..(r + 1) * dim]);
        }
    }
    for (row, o) in blocks.remainder().chunks_exact(dim).zip(outs.into_remainder()) {
        *o = squared_l2(x, row);
    }
}

/// `out[r] = dot(x, row r of rows)` bit for bit.
pub(crate) fn dot_rows(x: &[f32], rows: &[f32], out: &mut [f32]) {
    let dim = x.len();
    debug_assert_eq!(rows.len(), dim * out.len());
    let full = dim / LANES * LANES;
    let mut blocks = rows.chunks_exact(dim * BLOCK);
    let mut outs = out.chunks_exact_mut(BLOCK);
    for (block, o) in (&mut blocks).zip(&mut outs) {
        let mut acc = [Acc::zero(); BLOCK];
        for j in (0..full).step_by(LANES) {
            let xs = &x[j..j + LANES];
            for (r, a) in acc.iter_mut().enumerate() {
                let start = r * dim + j;
                a.add_prod(xs, &block[start..start + LANES]);
            }
        }
        for (r, a) in acc.into_iter().enumerate() {
            let mut tail = 0.0f32;
            for (p, q) in x[full..].iter().zip(&block[r * dim + full..(r + 1) * dim]) {
                tail += p * q;
            }
            o[r] = a.sum() + tail;
        }
    }
    for (row, o) in blocks.remainder().chunks_exact(dim).zip(outs.into_remainder()) {
        *o = dot(x, row);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_f64_reference() {
        for len in [1usize, 3, 16, 17, 64, 100] {
            let a: Vec<f32> = (0..len).map(|i| (i as f32 * 0.37).sin()).collect();
            let b: Vec<f32> = (0..len).map(|i| (i as f32 * 0.11).cos()).collect();
            let reference: f64 = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
                .sum();
            let got = squared_l2(&a, &b) as f64;
            assert!((got - reference).abs() <= 1e-5 * reference.max(1.0), "len {len}");
        }
    }

    #[test]
    fn dot_matches_f64_reference() {
        for len in [1usize, 15, 16, 40, 64] {
            let a: Vec<f32> = (0..len).map(|i| (i as f32 * 0.21).sin()).collect();
            let b: Vec<f32> = (0..len).map(|i| (i as f32 * 0.05).cos()).collect();
            let reference: f64 = a.iter().zip(&b).map(|(x, y)| *x as f64 * *y as f64).sum();
            assert!((dot(&a, &b) as f64 - reference).abs() < 1e-5);
        }
    }

    #[test]
    fn rows_match_single_distance_bitwise() {
        for dim in [1usize, 5, 16, 37, 64] {
            for n in [0usize, 1, 3, 4, 9] {
                let x: Vec<f32> = (0..dim).map(|i| (i as f32 * 0.7).sin()).collect();
                let rows: Vec<f32> = (0..dim * n).map(|i| (i as f32 * 0.13).cos()).collect();
                let mut out = vec![0.0; n];
                squared_l2_rows(&x, &rows, &mut out);
                for (r, got) in out.iter().enumerate() {
                    let want = squared_l2(&x, &rows[r * dim..(r + 1) * dim]);
                    assert_eq!(got.to_bits(), want.to_bits(), "dim {dim} row {r}");
                }
            }
        }
    }

    #[test]
    fn simd_matches_scalar_lanes_bitwise() {
        for dim in [16usize, 48, 64, 100] {
            let a: Vec<f32> = (0..dim).map(|i| (i as f32 * 1.3).sin() * 7.0).collect();
            let b: Vec<f32> = (0..dim).map(|i| (i as f32 * 0.3).cos()).collect();
            let full = dim / LANES * LANES;
            let (mut sq, mut pr) = (Lanes::ZERO, Lanes::ZERO);
            for j in (0..full).step_by(LANES) {
                sq.add_sq_diff(&a[j..j + LANES], &b[j..j + LANES]);
                pr.add_prod(&a[j..j + LANES], &b[j..j + LANES]);
            }
            let want = sq.sum() + sq_tail(&a[full..], &b[full..]);
            assert_eq!(squared_l2(&a, &b).to_bits(), want.to_bits());
            let tail: f32 = a[full..].iter().zip(&b[full..]).fold(0.0, |t, (x, y)| t + x * y);
            assert_eq!(dot(&a, &b).to_bits(), (pr.sum() + tail).to_bits());
            let mut out = vec![0.0; 5];
            let rows: Vec<f32> = (0..dim * 5).map(|i| (i as f32 * 0.9).sin()).collect();
            dot_rows(&a, &rows, &mut out);
            for r in 0..5 {
                assert_eq!(out[r].to_bits(), dot(&a, &rows[r * dim..(r + 1) * dim]).to_bits());
            }
        }
    }

    #[test]
    fn zero_for_identical() {
        let v = [1.5f32; 33];
        assert_eq!(squared_l2(&v, &v), 0.0);
    }
}

