//! Index and matrix kernels shared by the tape primitives.

/// Row-major strides.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For each element of the permuted output (row-major), the flat index of
/// the source element.
pub(crate) fn permute_index(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n: usize = shape.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut counter = vec![0usize; out_shape.len()];
    let mut src = 0usize;
    for _ in 0..n {
        out.push(src);
        for d in (0..counter.len()).rev() {
            counter[d] += 1;
            src += src_strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            counter[d] = 0;
        }
    }
    out
}

/// For each input element, the flat index of the reduced output element
/// when `axes` are summed away.
pub(crate) fn reduce_index(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let out_shape: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(i, _)| !axes.contains(i))
        .map(|(_, &d)| d)
        .collect();
    let out_strides = strides(&out_shape);
    let mut dst_strides = Vec::with_capacity(shape.len());
    let mut k = 0;
    for i in 0..shape.len() {
        if axes.contains(&i) {
            dst_strides.push(0);
        } else {
            dst_strides.push(out_strides[k]);
            k += 1;
        }
    }
    let n: usize = shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut counter = vec![0usize; shape.len()];
    let mut dst = 0usize;
    for _ in 0..n {
        map.push(dst);
        for d in (0..counter.len()).rev() {
            counter[d] += 1;
            dst += dst_strides[d];
            if counter[d] < shape[d] {
                break;
            }
            dst -= dst_strides[d] * shape[d];
            counter[d] = 0;
        }
    }
    (map, out_shape)
}

/// Strided matrix operand: `m[i, j] = data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rs: isize,
    pub cs: isize,
}

/// `c += a (m x k) * b (k x n)`, with `c` row-major `m x n`.
///
/// Backed by `matrixmultiply::dgemm` without its threading feature; the
/// reduction order depends only on the shapes and the detected CPU kernel,
/// so repeated runs on one machine are bit-identical.
pub(crate) fn gemm_acc(m: usize, k: usize, n: usize, a: MatRef<'_>, b: MatRef<'_>, c: &mut [f64]) {
    assert!(c.len() >= m * n);
    let span = |r: MatRef<'_>, rows: usize, cols: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            ((rows - 1) as isize * r.rs + (cols - 1) as isize * r.cs) as usize + 1
        }
    };
    assert!(a.data.len() >= span(a, m, k));
    assert!(b.data.len() >= span(b, k, n));
    // SAFETY: the asserts above bound every strided access of `a` (m x k),
    // `b` (k x n) and the row-major `c` (m x n) inside their slices; strides
    // are non-negative and `c` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_index_matches_transpose() {
        // 2x3 transposed → 3x2
        assert_eq!(permute_index(&[2, 3], &[1, 0]), vec![0, 3, 1, 4, 2, 5]);
        assert_eq!(permute_index(&[2, 3], &[0, 1]), vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn reduce_index_middle_axis() {
        let (map, out) = reduce_index(&[2, 3, 2], &[1]);
        assert_eq!(out, vec![2, 2]);
        assert_eq!(map, vec![0, 1, 0, 1, 0, 1, 2, 3, 2, 3, 2, 3]);
    }

    #[test]
    fn gemm_against_naive() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5 - 1.0).collect(); // 3x4
        let mut c = vec![0.0; 8];
        gemm_acc(
            2,
            3,
            4,
            MatRef {
                data: &a,
                rs: 3,
                cs: 1,
            },
            MatRef {
                data: &b,
                rs: 4,
                cs: 1,
            },
            &mut c,
        );
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum();
                assert!((c[i * 4 + j] - want).abs() < 1e-12);
            }
        }
    }
}
