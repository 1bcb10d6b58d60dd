//! Data-parallel kernels with a sequential fallback.
//!
//! Every kernel here produces bitwise-identical output regardless of the
//! worker count: work is split along independent output rows (or fixed-size
//! chunks whose partial results are combined in index order), so the
//! floating-point reduction order never depends on scheduling.
//!
//! With the `parallel` feature disabled, or when the active rayon pool has a
//! single worker, the `*_seq` variants are used directly.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Work below this many multiply-adds is not worth distributing.
const PAR_MIN_WORK: usize = 1 << 15;

/// Fixed chunk length for chunked reductions. Changing it changes results.
pub const REDUCE_CHUNK: usize = 4096;

/// Number of workers the dispatching kernels may use.
pub fn worker_count() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

fn go_parallel(work: usize) -> bool {
    cfg!(feature = "parallel") && work >= PAR_MIN_WORK && worker_count() > 1
}

/// `c[p×r] = a[p×q] · b[q×r]`, row-major.
pub fn gemm_nn(a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    if go_parallel(p * q * r) {
        gemm_nn_par(a, b, p, q, r)
    } else {
        gemm_nn_seq(a, b, p, q, r)
    }
}

/// `c[p×q] = g[p×r] · b[q×r]ᵀ`.
pub fn gemm_nt(g: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    if go_parallel(p * q * r) {
        gemm_nt_par(g, b, p, q, r)
    } else {
        gemm_nt_seq(g, b, p, q, r)
    }
}

/// `c[q×r] = a[p×q]ᵀ · g[p×r]`.
pub fn gemm_tn(a: &[f64], g: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    if go_parallel(p * q * r) {
        gemm_tn_par(a, g, p, q, r)
    } else {
        gemm_tn_seq(a, g, p, q, r)
    }
}

#[inline]
fn nn_row(a_row: &[f64], b: &[f64], r: usize, out: &mut [f64]) {
    for (k, &aik) in a_row.iter().enumerate() {
        if aik == 0.0 {
            continue;
        }
        let b_row = &b[k * r..(k + 1) * r];
        for (o, &bkj) in out.iter_mut().zip(b_row) {
            *o += aik * bkj;
        }
    }
}

#[inline]
fn nt_row(g_row: &[f64], b: &[f64], r: usize, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        let b_row = &b[j * r..(j + 1) * r];
        let mut acc = 0.0;
        for (&x, &y) in g_row.iter().zip(b_row) {
            acc += x * y;
        }
        *o = acc;
    }
}

#[inline]
fn tn_row(a: &[f64], g: &[f64], col: usize, p: usize, q: usize, r: usize, out: &mut [f64]) {
    for i in 0..p {
        let aiq = a[i * q + col];
        if aiq == 0.0 {
            continue;
        }
        let g_row = &g[i * r..(i + 1) * r];
        for (o, &gij) in out.iter_mut().zip(g_row) {
            *o += aiq * gij;
        }
    }
}

pub fn gemm_nn_seq(a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    let mut c = vec![0.0; p * r];
    if r == 0 {
        return c;
    }
    for (i, out) in c.chunks_mut(r).enumerate() {
        nn_row(&a[i * q..(i + 1) * q], b, r, out);
    }
    c
}

pub fn gemm_nt_seq(g: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    let mut c = vec![0.0; p * q];
    if q == 0 {
        return c;
    }
    for (i, out) in c.chunks_mut(q).enumerate() {
        nt_row(&g[i * r..(i + 1) * r], b, r, out);
    }
    c
}

pub fn gemm_tn_seq(a: &[f64], g: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    let mut c = vec![0.0; q * r];
    if r == 0 {
        return c;
    }
    for (col, out) in c.chunks_mut(r).enumerate() {
        tn_row(a, g, col, p, q, r, out);
    }
    c
}

#[cfg(feature = "parallel")]
pub fn gemm_nn_par(a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    let mut c = vec![0.0; p * r];
    if r == 0 {
        return c;
    }
    c.par_chunks_mut(r)
        .enumerate()
        .for_each(|(i, out)| nn_row(&a[i * q..(i + 1) * q], b, r, out));
    c
}

#[cfg(feature = "parallel")]
pub fn gemm_nt_par(g: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    let mut c = vec![0.0; p * q];
    if q == 0 {
        return c;
    }
    c.par_chunks_mut(q)
        .enumerate()
        .for_each(|(i, out)| nt_row(&g[i * r..(i + 1) * r], b, r, out));
    c
}

#[cfg(feature = "parallel")]
pub fn gemm_tn_par(a: &[f64], g: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    let mut c = vec![0.0; q * r];
    if r == 0 {
        return c;
    }
    c.par_chunks_mut(r)
        .enumerate()
        .for_each(|(col, out)| tn_row(a, g, col, p, q, r, out));
    c
}

#[cfg(not(feature = "parallel"))]
pub use self::{
    gemm_nn_seq as gemm_nn_par, gemm_nt_seq as gemm_nt_par, gemm_tn_seq as gemm_tn_par,
};

/// Maps `f` over `0..n` in fixed chunks and returns the per-chunk results in
/// chunk order. The chunk boundaries do not depend on the worker count.
pub fn map_chunks<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    let chunk = chunk.max(1);
    let n_chunks = n.div_ceil(chunk);
    let range = move |c: usize| c * chunk..((c + 1) * chunk).min(n);
    #[cfg(feature = "parallel")]
    {
        if worker_count() > 1 {
            return (0..n_chunks).into_par_iter().map(|c| f(range(c))).collect();
        }
    }
    (0..n_chunks).map(|c| f(range(c))).collect()
}

/// Same as [`map_chunks`] but always sequential; used to check equivalence.
pub fn map_chunks_seq<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    F: Fn(std::ops::Range<usize>) -> T,
{
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk))
        .map(|c| f(c * chunk..((c + 1) * chunk).min(n)))
        .collect()
}

/// Sums `f(i)` over `0..n` with a chunked, order-fixed reduction.
pub fn chunked_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    map_chunks(n, REDUCE_CHUNK, |r| r.map(&f).sum::<f64>())
        .into_iter()
        .sum()
}

/// Installs a global rayon pool with `threads` workers. Returns false if a
/// pool was already installed (the existing one stays in effect).
pub fn init_global_pool(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
        let mut c = vec![0.0; p * r];
        for i in 0..p {
            for j in 0..r {
                for k in 0..q {
                    c[i * r + j] += a[i * q + k] * b[k * r + j];
                }
            }
        }
        c
    }

    fn filled(n: usize, seed: u64) -> Vec<f64> {
        (0..n)
            .map(|i| (((i as u64 * 2654435761 + seed) % 1000) as f64) / 500.0 - 1.0)
            .collect()
    }

    #[test]
    fn gemm_variants_agree_bitwise() {
        let (p, q, r) = (37, 23, 41);
        let a = filled(p * q, 1);
        let b = filled(q * r, 7);
        let g = filled(p * r, 3);
        assert_eq!(gemm_nn_seq(&a, &b, p, q, r), gemm_nn_par(&a, &b, p, q, r));
        assert_eq!(gemm_nt_seq(&g, &b, p, q, r), gemm_nt_par(&g, &b, p, q, r));
        assert_eq!(gemm_tn_seq(&a, &g, p, q, r), gemm_tn_par(&a, &g, p, q, r));
        let c = gemm_nn_seq(&a, &b, p, q, r);
        for (x, y) in c.iter().zip(naive(&a, &b, p, q, r)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_products_match_naive() {
        let (p, q, r) = (5, 3, 4);
        let a = filled(p * q, 11);
        let b = filled(q * r, 5);
        let g = filled(p * r, 9);
        // g·bᵀ
        let mut bt = vec![0.0; r * q];
        for k in 0..q {
            for j in 0..r {
                bt[j * q + k] = b[k * r + j];
            }
        }
        let expect = naive(&g, &bt, p, r, q);
        for (x, y) in gemm_nt(&g, &b, p, q, r).iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
        // aᵀ·g
        let mut at = vec![0.0; q * p];
        for i in 0..p {
            for k in 0..q {
                at[k * p + i] = a[i * q + k];
            }
        }
        let expect = naive(&at, &g, q, p, r);
        for (x, y) in gemm_tn(&a, &g, p, q, r).iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn chunked_sum_is_order_fixed() {
        let f = |i: usize| 1.0 / (1.0 + i as f64);
        let s1 = chunked_sum(100_003, f);
        let s2: f64 = map_chunks_seq(100_003, REDUCE_CHUNK, |r| r.map(f).sum::<f64>())
            .into_iter()
            .sum();
        assert_eq!(s1.to_bits(), s2.to_bits());
    }
}
