//! Counter-based random streams.
//!
//! The generator is Philox4x32-10 (Salmon et al., "Parallel random numbers:
//! as easy as 1, 2, 3", SC 2011): a keyed bijection on 128-bit counters. A
//! row stream is addressed by `(seed, trial, layer, row)` and walks the
//! remaining 32-bit counter word, so every weight can be regenerated
//! independently of evaluation order.
//!
//! Counter layout: `[block, row, layer, trial]`, key: `[seed_lo, seed_hi]`.
//! Each block yields two 52-bit uniforms on `(0, 1)`, each mapped through
//! [`normal_quantile`](crate::special::normal_quantile).

use crate::special::{normal_quantile, normal_quantile_batch, QuantileScratch};

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32 with ten rounds.
#[inline(always)]
pub fn philox4x32(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = ctr;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

const LANES: usize = 8;

/// Philox4x32-10 on `LANES` consecutive counters `c0 + j`, lane by lane.
/// Equal to `LANES` calls of [`philox4x32`].
#[inline(always)]
fn philox_lanes(c0: u32, c1: u32, c2: u32, c3: u32, key: [u32; 2]) -> [[u32; LANES]; 4] {
    let mut x = [[0u32; LANES]; 4];
    for j in 0..LANES {
        x[0][j] = c0.wrapping_add(j as u32);
        x[1][j] = c1;
        x[2][j] = c2;
        x[3][j] = c3;
    }
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let mut y = [[0u32; LANES]; 4];
        for j in 0..LANES {
            let (hi0, lo0) = mulhilo(PHILOX_M0, x[0][j]);
            let (hi1, lo1) = mulhilo(PHILOX_M1, x[2][j]);
            y[0][j] = hi1 ^ x[1][j] ^ k[0];
            y[1][j] = lo1;
            y[2][j] = hi0 ^ x[3][j] ^ k[1];
            y[3][j] = lo0;
        }
        x = y;
    }
    x
}

/// Exact `bits as f64` for `bits < 2^52`, in a form that vectorizes.
#[inline(always)]
fn small_u64_to_f64(bits: u64) -> f64 {
    const MAGIC: u64 = 0x4330_0000_0000_0000; // 2^52
    f64::from_bits(MAGIC | bits) - 4_503_599_627_370_496.0
}

/// Writes `2 * LANES * groups` uniforms from blocks `ctr[0]..` into `out`.
#[inline(always)]
fn uniform_groups(ctr: [u32; 4], key: [u32; 2], out: &mut [f64]) {
    const SCALE: f64 = 1.0 / (1u64 << 52) as f64;
    for (g, chunk) in out.chunks_exact_mut(2 * LANES).enumerate() {
        let c0 = ctr[0].wrapping_add((g * LANES) as u32);
        let x = philox_lanes(c0, ctr[1], ctr[2], ctr[3], key);
        for j in 0..LANES {
            let a = (((x[0][j] as u64) << 32) | x[1][j] as u64) >> 12;
            let b = (((x[2][j] as u64) << 32) | x[3][j] as u64) >> 12;
            chunk[2 * j] = (small_u64_to_f64(a) + 0.5) * SCALE;
            chunk[2 * j + 1] = (small_u64_to_f64(b) + 0.5) * SCALE;
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn uniform_groups_avx2(ctr: [u32; 4], key: [u32; 2], out: &mut [f64]) {
    use std::arch::x86_64::*;

    let lo_mask = _mm256_set1_epi64x(0xFFFF_FFFF);
    let m0 = _mm256_set1_epi64x(PHILOX_M0 as i64);
    let m1 = _mm256_set1_epi64x(PHILOX_M1 as i64);
    let magic = _mm256_set1_epi64x(0x4330_0000_0000_0000);
    let magic_f = _mm256_set1_pd(4_503_599_627_370_496.0);
    let half = _mm256_set1_pd(0.5);
    let scale = _mm256_set1_pd(1.0 / (1u64 << 52) as f64);
    let c1 = _mm256_set1_epi64x(ctr[1] as i64);
    let c2 = _mm256_set1_epi64x(ctr[2] as i64);
    let c3 = _mm256_set1_epi64x(ctr[3] as i64);

    // 64 random bits -> (bits >> 12 + 0.5) / 2^52, exactly as bits_to_open_unit
    let to_unit = |hi: __m256i, lo: __m256i| {
        let bits = _mm256_srli_epi64::<12>(_mm256_or_si256(_mm256_slli_epi64::<32>(hi), lo));
        let f = _mm256_sub_pd(_mm256_castsi256_pd(_mm256_or_si256(bits, magic)), magic_f);
        _mm256_mul_pd(_mm256_add_pd(f, half), scale)
    };

    for (g, chunk) in out.chunks_exact_mut(2 * LANES).enumerate() {
        let base = ctr[0].wrapping_add((g * LANES) as u32);
        let counters = |o: u32| {
            _mm256_setr_epi64x(
                base.wrapping_add(o) as i64,
                base.wrapping_add(o + 1) as i64,
                base.wrapping_add(o + 2) as i64,
                base.wrapping_add(o + 3) as i64,
            )
        };
        let mut xa = [counters(0), c1, c2, c3];
        let mut xb = [counters(4), c1, c2, c3];
        let mut k = key;
        for round in 0..10 {
            if round > 0 {
                k[0] = k[0].wrapping_add(PHILOX_W0);
                k[1] = k[1].wrapping_add(PHILOX_W1);
            }
            let k0 = _mm256_set1_epi64x(k[0] as i64);
            let k1 = _mm256_set1_epi64x(k[1] as i64);
            for x in [&mut xa, &mut xb] {
                let p0 = _mm256_mul_epu32(m0, x[0]);
                let p1 = _mm256_mul_epu32(m1, x[2]);
                *x = [
                    _mm256_xor_si256(_mm256_xor_si256(_mm256_srli_epi64::<32>(p1), x[1]), k0),
                    _mm256_and_si256(p1, lo_mask),
                    _mm256_xor_si256(_mm256_xor_si256(_mm256_srli_epi64::<32>(p0), x[3]), k1),
                    _mm256_and_si256(p0, lo_mask),
                ];
            }
        }
        for (half_idx, x) in [xa, xb].iter().enumerate() {
            let a = to_unit(x[0], x[1]);
            let b = to_unit(x[2], x[3]);
            let ab_lo = _mm256_unpacklo_pd(a, b); // a0 b0 a2 b2
            let ab_hi = _mm256_unpackhi_pd(a, b); // a1 b1 a3 b3
            let first = _mm256_permute2f128_pd::<0x20>(ab_lo, ab_hi);
            let second = _mm256_permute2f128_pd::<0x31>(ab_lo, ab_hi);
            let dst = chunk.as_mut_ptr().add(8 * half_idx);
            _mm256_storeu_pd(dst, first);
            _mm256_storeu_pd(dst.add(4), second);
        }
    }
}

/// Maps 64 random bits to a uniform on the open interval `(0, 1)`.
#[inline(always)]
pub fn bits_to_open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// A stream of standard normals addressed by `(seed, trial, layer, row)`.
#[derive(Debug, Clone)]
pub struct NormalStream {
    key: [u32; 2],
    ctr: [u32; 4],
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64, trial: u32, layer: u32, row: u32) -> Self {
        NormalStream {
            key: [seed as u32, (seed >> 32) as u32],
            ctr: [0, row, layer, trial],
            spare: None,
        }
    }

    #[inline(always)]
    fn next_block(&mut self) -> [u32; 4] {
        let out = philox4x32(self.ctr, self.key);
        self.ctr[0] = self.ctr[0].wrapping_add(1);
        out
    }

    /// Two uniforms on `(0, 1)` from the next block.
    #[inline(always)]
    pub fn next_uniform_pair(&mut self) -> (f64, f64) {
        let b = self.next_block();
        let u0 = bits_to_open_unit(((b[0] as u64) << 32) | b[1] as u64);
        let u1 = bits_to_open_unit(((b[2] as u64) << 32) | b[3] as u64);
        (u0, u1)
    }

    #[inline(always)]
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let (u0, u1) = self.next_uniform_pair();
        self.spare = Some(normal_quantile(u1));
        normal_quantile(u0)
    }

    /// Fills `out` with consecutive normals from the stream.
    pub fn fill_normals(&mut self, out: &mut [f64]) {
        self.fill_normals_with(out, &mut FillBuffers::default());
    }

    /// As [`fill_normals`](Self::fill_normals), reusing `buf` across calls.
    pub fn fill_normals_with(&mut self, out: &mut [f64], buf: &mut FillBuffers) {
        let mut out = out;
        if let Some(z) = self.spare.take() {
            match out.split_first_mut() {
                Some((first, rest)) => {
                    *first = z;
                    out = rest;
                }
                None => {
                    self.spare = Some(z);
                    return;
                }
            }
        }
        let m = out.len();
        let blocks = m.div_ceil(2);
        if buf.uniforms.len() < 2 * blocks {
            buf.uniforms.resize(2 * blocks, 0.0);
        }
        let uniforms = &mut buf.uniforms[..2 * blocks];
        let grouped = blocks / LANES * LANES;
        let (head, rest) = uniforms.split_at_mut(2 * grouped);
        #[cfg(target_arch = "x86_64")]
        let done = if crate::simd::has_avx2() {
            // SAFETY: the CPU supports AVX2.
            unsafe { uniform_groups_avx2(self.ctr, self.key, head) };
            true
        } else {
            false
        };
        #[cfg(not(target_arch = "x86_64"))]
        let done = false;
        if !done {
            uniform_groups(self.ctr, self.key, head);
        }
        self.ctr[0] = self.ctr[0].wrapping_add(grouped as u32);
        for pair in rest.chunks_exact_mut(2) {
            let (u0, u1) = self.next_uniform_pair();
            pair[0] = u0;
            pair[1] = u1;
        }
        normal_quantile_batch(&buf.uniforms[..m], out, &mut buf.quantile);
        if m % 2 == 1 {
            self.spare = Some(normal_quantile(buf.uniforms[m]));
        }
    }
}

/// Scratch space for [`NormalStream::fill_normals_with`].
#[derive(Debug, Clone, Default)]
pub struct FillBuffers {
    uniforms: Vec<f64>,
    quantile: QuantileScratch,
}

#[cfg(test)]
mod tests {
    use super::*;

    // Known-answer vectors from the Random123 distribution (kat_vectors).
    #[test]
    fn philox_known_answers() {
        assert_eq!(
            philox4x32([0, 0, 0, 0], [0, 0]),
            [0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8]
        );
        assert_eq!(
            philox4x32([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd]
        );
        assert_eq!(
            philox4x32(
                [0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344],
                [0xa4093822, 0x299f31d0]
            ),
            [0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1]
        );
    }

    #[test]
    fn lanes_match_scalar_philox() {
        let key = [0xdead_beef, 7];
        let x = philox_lanes(u32::MAX - 3, 1, 2, 3, key);
        for j in 0..LANES {
            let w = philox4x32([(u32::MAX - 3).wrapping_add(j as u32), 1, 2, 3], key);
            assert_eq!([x[0][j], x[1][j], x[2][j], x[3][j]], w);
        }
        #[cfg(target_arch = "x86_64")]
        if crate::simd::has_avx2() {
            let mut fast = vec![0.0; 4 * LANES];
            let mut slow = vec![0.0; 4 * LANES];
            let ctr = [u32::MAX - 9, 4, 5, 6];
            // SAFETY: guarded by the feature check.
            unsafe { uniform_groups_avx2(ctr, key, &mut fast) };
            uniform_groups(ctr, key, &mut slow);
            assert_eq!(fast, slow);
        }
        for bits in [0u64, 1, 12345, (1 << 52) - 1] {
            assert_eq!(small_u64_to_f64(bits), bits as f64);
        }
    }

    #[test]
    fn open_unit_interval() {
        assert!(bits_to_open_unit(0) > 0.0);
        assert!(bits_to_open_unit(u64::MAX) < 1.0);
    }

    #[test]
    fn fill_matches_sequential_draws() {
        let mut a = NormalStream::new(7, 3, 2, 11);
        let mut b = a.clone();
        let mut buf = vec![0.0; 1000];
        let mut work = FillBuffers::default();
        a.fill_normals_with(&mut buf[..1], &mut work);
        a.fill_normals_with(&mut buf[1..8], &mut work);
        a.fill_normals_with(&mut buf[8..8], &mut work);
        a.fill_normals_with(&mut buf[8..], &mut work);
        for &z in &buf {
            assert_eq!(z.to_bits(), b.next_normal().to_bits());
        }
    }

    #[test]
    fn distinct_addresses_give_distinct_streams() {
        let first = |s, t, l, r| NormalStream::new(s, t, l, r).next_normal();
        let base = first(1, 0, 1, 0);
        assert_ne!(base, first(2, 0, 1, 0));
        assert_ne!(base, first(1, 1, 1, 0));
        assert_ne!(base, first(1, 0, 2, 0));
        assert_ne!(base, first(1, 0, 1, 1));
        assert_eq!(base.to_bits(), first(1, 0, 1, 0).to_bits());
    }

    #[test]
    fn moments_of_normals() {
        let mut s = NormalStream::new(42, 0, 1, 0);
        let n = 200_000;
        let (mut m1, mut m2, mut m4) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let z = s.next_normal();
            m1 += z;
            m2 += z * z;
            m4 += z * z * z * z;
        }
        let n = n as f64;
        assert!((m1 / n).abs() < 0.01);
        assert!((m2 / n - 1.0).abs() < 0.015);
        assert!((m4 / n - 3.0).abs() < 0.08);
    }
}
