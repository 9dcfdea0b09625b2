//! Packed single-precision matrix multiply used by the lowered convolution.
//!
//! `c[m×n] += a[m×k] · b[k×n]`, all row-major. Operands are packed into
//! `MR`-row and `NR`-column strips and reduced by a register-blocked micro-kernel.
//! On x86_64 an AVX2+FMA build of the same kernel is selected at runtime.

const MR: usize = 4;
const NR: usize = 16;
const KC: usize = 256;
const MC: usize = 64;
const NC: usize = 1024;

/// Accumulates `a · b` into `c`.
pub fn sgemm_acc(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }

    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: the required target features were detected above.
            unsafe { sgemm_avx2(m, n, k, a, b, c) };
            return;
        }
    }
    sgemm_blocked::<false>(m, n, k, a, b, c);
}

/// Row-partitioned variant: `threads` workers each own a contiguous band of `c` rows.
pub fn sgemm_acc_threaded(
    m: usize,
    n: usize,
    k: usize,
    a: &[f32],
    b: &[f32],
    c: &mut [f32],
    threads: usize,
) {
    let threads = threads.max(1).min(m.div_ceil(MR).max(1));
    if threads == 1 {
        sgemm_acc(m, n, k, a, b, c);
        return;
    }
    let rows = m.div_ceil(threads).div_ceil(MR) * MR;
    std::thread::scope(|scope| {
        for (band, c_band) in c.chunks_mut(rows * n).enumerate() {
            let r0 = band * rows;
            let band_rows = c_band.len() / n;
            let a_band = &a[r0 * k..(r0 + band_rows) * k];
            scope.spawn(move || sgemm_acc(band_rows, n, k, a_band, b, c_band));
        }
    });
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn sgemm_avx2(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    sgemm_blocked::<true>(m, n, k, a, b, c);
}

#[inline(always)]
fn sgemm_blocked<const FMA: bool>(
    m: usize,
    n: usize,
    k: usize,
    a: &[f32],
    b: &[f32],
    c: &mut [f32],
) {
    let mut bpack = vec![0.0f32; KC * NC.min(n.div_ceil(NR) * NR)];
    let mut apack = vec![0.0f32; KC * MC.min(m.div_ceil(MR) * MR)];

    for jc in (0..n).step_by(NC) {
        let nc = NC.min(n - jc);
        for pc in (0..k).step_by(KC) {
            let kc = KC.min(k - pc);
            pack_b(b, n, pc, kc, jc, nc, &mut bpack);
            for ic in (0..m).step_by(MC) {
                let mc = MC.min(m - ic);
                pack_a(a, k, ic, mc, pc, kc, &mut apack);
                for jr in (0..nc).step_by(NR) {
                    let nr = NR.min(nc - jr);
                    let bstrip = &bpack[(jr / NR) * kc * NR..][..kc * NR];
                    for ir in (0..mc).step_by(MR) {
                        let mr = MR.min(mc - ir);
                        let astrip = &apack[(ir / MR) * kc * MR..][..kc * MR];
                        let acc = micro_kernel::<FMA>(kc, astrip, bstrip);
                        for (r, row) in acc.iter().enumerate().take(mr) {
                            let off = (ic + ir + r) * n + jc + jr;
                            for (dst, &v) in c[off..off + nr].iter_mut().zip(row) {
                                *dst += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[inline(always)]
fn micro_kernel<const FMA: bool>(kc: usize, a: &[f32], b: &[f32]) -> [[f32; NR]; MR] {
    let mut acc = [[0.0f32; NR]; MR];
    for (av, bv) in a.chunks_exact(MR).zip(b.chunks_exact(NR)).take(kc) {
        for r in 0..MR {
            let ar = av[r];
            for j in 0..NR {
                acc[r][j] = if FMA {
                    ar.mul_add(bv[j], acc[r][j])
                } else {
                    ar * bv[j] + acc[r][j]
                };
            }
        }
    }
    acc
}

/// Packs `a[ic..ic+mc, pc..pc+kc]` into `MR`-row strips, zero-padded, k-major.
fn pack_a(a: &[f32], lda: usize, ic: usize, mc: usize, pc: usize, kc: usize, out: &mut [f32]) {
    for (s, ir) in (0..mc).step_by(MR).enumerate() {
        let strip = &mut out[s * kc * MR..(s + 1) * kc * MR];
        for r in 0..MR {
            if ir + r < mc {
                let row = &a[(ic + ir + r) * lda + pc..][..kc];
                for (p, &v) in row.iter().enumerate() {
                    strip[p * MR + r] = v;
                }
            } else {
                for p in 0..kc {
                    strip[p * MR + r] = 0.0;
                }
            }
        }
    }
}

/// Packs `b[pc..pc+kc, jc..jc+nc]` into `NR`-column strips, zero-padded, k-major.
fn pack_b(b: &[f32], ldb: usize, pc: usize, kc: usize, jc: usize, nc: usize, out: &mut [f32]) {
    for (s, jr) in (0..nc).step_by(NR).enumerate() {
        let nr = NR.min(nc - jr);
        let strip = &mut out[s * kc * NR..(s + 1) * kc * NR];
        for p in 0..kc {
            let src = &b[(pc + p) * ldb + jc + jr..][..nr];
            let dst = &mut strip[p * NR..(p + 1) * NR];
            dst[..nr].copy_from_slice(src);
            dst[nr..].fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(m: usize, n: usize, k: usize, a: &[f32], b: &[f32]) -> Vec<f64> {
        let mut c = vec![0.0f64; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] as f64 * b[p * n + j] as f64;
                }
            }
        }
        c
    }

    #[test]
    fn matches_naive_on_ragged_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(m, n, k) in &[(1, 1, 1), (3, 17, 5), (5, 33, 300), (70, 1100, 9), (4, 16, 256)] {
            let a: Vec<f32> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f32> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut c = vec![0.0; m * n];
            sgemm_acc(m, n, k, &a, &b, &mut c);
            let want = naive(m, n, k, &a, &b);
            for (got, want) in c.iter().zip(&want) {
                assert!((*got as f64 - want).abs() <= 1e-4 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn threaded_is_identical_to_serial() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (m, n, k) = (37, 50, 40);
        let a: Vec<f32> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut c1 = vec![0.5; m * n];
        let mut c3 = vec![0.5; m * n];
        sgemm_acc(m, n, k, &a, &b, &mut c1);
        sgemm_acc_threaded(m, n, k, &a, &b, &mut c3, 3);
        assert_eq!(c1, c3);
    }
}
