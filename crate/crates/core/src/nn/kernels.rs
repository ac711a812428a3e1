//! Dense row-major helpers. `w` is `rows x cols`.

use super::Scalar;

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `y += W x`
#[inline]
pub fn matvec_acc<T: Scalar>(w: &[T], cols: usize, x: &[T], y: &mut [T]) {
    for (row, yi) in w.chunks_exact(cols).zip(y.iter_mut()) {
        *yi = *yi + dot(row, x);
    }
}

/// `dx += W^T dy`
#[inline]
pub fn matvec_t_acc<T: Scalar>(w: &[T], cols: usize, dy: &[T], dx: &mut [T]) {
    for (row, &d) in w.chunks_exact(cols).zip(dy) {
        if d == T::zero() {
            continue;
        }
        for (xj, &wj) in dx.iter_mut().zip(row) {
            *xj = *xj + d * wj;
        }
    }
}

/// `dw += dy x^T`
#[inline]
pub fn outer_acc<T: Scalar>(dw: &mut [T], cols: usize, dy: &[T], x: &[T]) {
    for (row, &d) in dw.chunks_exact_mut(cols).zip(dy) {
        if d == T::zero() {
            continue;
        }
        for (wj, &xj) in row.iter_mut().zip(x) {
            *wj = *wj + d * xj;
        }
    }
}

#[inline]
pub fn add_assign<T: Scalar>(y: &mut [T], x: &[T]) {
    for (a, &b) in y.iter_mut().zip(x) {
        *a = *a + b;
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Per time step: `out[t] = W in[t] + b` for a `steps x cols` input.
pub fn affine_rows<T: Scalar>(w: &[T], b: &[T], cols: usize, input: &[T], steps: usize) -> Vec<T> {
    let rows = b.len();
    let mut out = Vec::with_capacity(steps * rows);
    for x in input.chunks_exact(cols).take(steps) {
        let start = out.len();
        out.extend_from_slice(b);
        matvec_acc(w, cols, x, &mut out[start..]);
    }
    out
}

/// Backward of [`affine_rows`]: accumulates `dW`, `db` and returns `d input`.
pub fn affine_rows_backward<T: Scalar>(
    w: &[T],
    cols: usize,
    input: &[T],
    d_out: &[T],
    dw: &mut [T],
    db: &mut [T],
    want_input_grad: bool,
) -> Vec<T> {
    let rows = db.len();
    let mut d_in = if want_input_grad {
        vec![T::zero(); input.len()]
    } else {
        Vec::new()
    };
    for (t, dy) in d_out.chunks_exact(rows).enumerate() {
        let x = &input[t * cols..(t + 1) * cols];
        add_assign(db, dy);
        outer_acc(dw, cols, dy, x);
        if want_input_grad {
            matvec_t_acc(w, cols, dy, &mut d_in[t * cols..(t + 1) * cols]);
        }
    }
    d_in
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_products() {
        // W = [[1, 2], [3, 4], [5, 6]]
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut y = [0.0; 3];
        matvec_acc(&w, 2, &[1.0, -1.0], &mut y);
        assert_eq!(y, [-1.0, -1.0, -1.0]);
        let mut dx = [0.0; 2];
        matvec_t_acc(&w, 2, &[1.0, 0.0, 1.0], &mut dx);
        assert_eq!(dx, [6.0, 8.0]);
        let mut dw = [0.0; 6];
        outer_acc(&mut dw, 2, &[1.0, 2.0, 0.0], &[3.0, 4.0]);
        assert_eq!(dw, [3.0, 4.0, 6.0, 8.0, 0.0, 0.0]);
    }
}
