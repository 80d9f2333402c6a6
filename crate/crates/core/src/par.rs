//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper splits work into fixed-size chunks and combines partial
//! results in chunk order, so the output does not depend on the number of
//! threads or on whether the `parallel` feature is enabled.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

/// Rows per chunk for row-blocked matrix products.
pub const ROW_CHUNK: usize = 256;

#[cfg(feature = "parallel")]
pub fn map_collect<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Maps `f` over `0..n` and collects in index order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    let idx: Vec<usize> = (0..n).collect();
    map_collect(&idx, |&i| f(i))
}

fn row_chunks(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(ROW_CHUNK))
        .map(|c| (c * ROW_CHUNK, ((c + 1) * ROW_CHUNK).min(n)))
        .collect()
}

/// `a · b`, blocked over rows of `a`.
pub fn matmul(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    let n = a.nrows();
    if n <= ROW_CHUNK {
        return a.dot(b);
    }
    let parts = map_collect(&row_chunks(n), |&(lo, hi)| a.slice(s![lo..hi, ..]).dot(b));
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(0), &views).expect("row blocks share column count")
}

/// `aᵀ · b` where both operands share the (long) row axis.
///
/// Partial products over row chunks are summed in chunk order.
pub fn matmul_tn(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    let n = a.nrows();
    assert_eq!(n, b.nrows(), "row counts differ");
    if n <= ROW_CHUNK {
        return a.t().dot(b);
    }
    let parts = map_collect(&row_chunks(n), |&(lo, hi)| {
        a.slice(s![lo..hi, ..]).t().dot(&b.slice(s![lo..hi, ..]))
    });
    let mut acc = Array2::zeros((a.ncols(), b.ncols()));
    for p in &parts {
        acc += p;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn filled(r: usize, c: usize, k: f64) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |(i, j)| ((i * 31 + j * 17) as f64 * k).sin())
    }

    #[test]
    fn blocked_products_match_direct() {
        let a = filled(700, 40, 0.37);
        let b = filled(40, 30, 0.11);
        let direct = a.dot(&b);
        let blocked = matmul(&a.view(), &b.view());
        assert!((direct - blocked).iter().all(|d| d.abs() < 1e-12));

        let c = filled(700, 30, 0.23);
        let direct = a.t().dot(&c);
        let blocked = matmul_tn(&a.view(), &c.view());
        assert!((direct - blocked).iter().all(|d| d.abs() < 1e-10));
    }

    #[test]
    fn map_range_keeps_order() {
        assert_eq!(map_range(5, |i| i * i), vec![0, 1, 4, 9, 16]);
    }
}
