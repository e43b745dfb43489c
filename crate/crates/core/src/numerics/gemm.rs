//! Safe strided wrapper over `matrixmultiply::dgemm`.

/// Read-only strided matrix view.
#[derive(Clone, Copy, Debug)]
pub(crate) struct View<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> View<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols)
    }

    /// Row-major view whose rows are `row_stride` apart, e.g. a column block
    /// of a wider matrix.
    pub fn strided(data: &'a [f64], rows: usize, cols: usize, row_stride: usize) -> Self {
        let v = Self {
            data,
            rows,
            cols,
            rs: row_stride,
            cs: 1,
        };
        v.check();
        v
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view exceeds its buffer");
        }
    }
}

/// `c = alpha * a * b + beta * c`, where `c` is row-major with row stride `rsc`.
pub(crate) fn gemm(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: &mut [f64], rsc: usize) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions differ");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!((m - 1) * rsc + n <= c.len(), "gemm output exceeds its buffer");
    if k == 0 {
        for r in 0..m {
            for v in &mut c[r * rsc..r * rsc + n] {
                *v *= beta;
            }
        }
        return;
    }
    a.check();
    b.check();
    // SAFETY: every view was bounds-checked above against its backing slice,
    // and `c` is exclusively borrowed, so the output does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_and_strided_views() {
        // a = [[1,2],[3,4]], b = [[1],[1]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.0, 1.0];
        let mut c = [0.0; 2];
        gemm(1.0, View::new(&a, 2, 2), View::new(&b, 2, 1), 0.0, &mut c, 1);
        assert_eq!(c, [3.0, 7.0]);
        gemm(1.0, View::new(&a, 2, 2).t(), View::new(&b, 2, 1), 0.0, &mut c, 1);
        assert_eq!(c, [4.0, 6.0]);
        // second column of a 2x3 matrix, as a 2x1 view
        let wide = [1.0, 5.0, 0.0, 2.0, 7.0, 0.0];
        let mut d = [0.0; 1];
        gemm(
            1.0,
            View::new(&[1.0, 1.0], 1, 2),
            View::strided(&wide[1..], 2, 1, 3),
            0.0,
            &mut d,
            1,
        );
        assert_eq!(d, [12.0]);
    }
}
