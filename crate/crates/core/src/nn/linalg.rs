//! Dense kernels over row-major slices. Four accumulators keep the inner
//! loops vectorizable while the summation order stays fixed.

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let (ca, ra) = a.split_at(a.len() - a.len() % 4);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `y += alpha * x`
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[r] = bias + W x[r]` for each of `rows` inputs; `W` is `n_out × n_in`.
pub(crate) fn affine(x: &[f64], n_in: usize, w: &[f64], bias: &[f64], out: &mut [f64]) {
    let n_out = bias.len();
    for (xr, or) in x.chunks_exact(n_in).zip(out.chunks_exact_mut(n_out)) {
        for (o, (wo, bo)) in or.iter_mut().zip(w.chunks_exact(n_in).zip(bias)) {
            *o = bo + dot(wo, xr);
        }
    }
}

/// `out[r] += W x[r]`
pub(crate) fn matvec_acc(x: &[f64], n_in: usize, w: &[f64], out: &mut [f64]) {
    let n_out = w.len() / n_in;
    for (xr, or) in x.chunks_exact(n_in).zip(out.chunks_exact_mut(n_out)) {
        for (o, wo) in or.iter_mut().zip(w.chunks_exact(n_in)) {
            *o += dot(wo, xr);
        }
    }
}

/// Accumulates `gw += Σ_r dy[r] x[r]ᵀ` and `gb += Σ_r dy[r]`.
pub(crate) fn outer_acc(x: &[f64], n_in: usize, dy: &[f64], gw: &mut [f64], gb: Option<&mut [f64]>) {
    let n_out = gw.len() / n_in;
    for (xr, dr) in x.chunks_exact(n_in).zip(dy.chunks_exact(n_out)) {
        for (d, gwo) in dr.iter().zip(gw.chunks_exact_mut(n_in)) {
            if *d != 0.0 {
                axpy(*d, xr, gwo);
            }
        }
    }
    if let Some(gb) = gb {
        for dr in dy.chunks_exact(n_out) {
            axpy(1.0, dr, gb);
        }
    }
}

/// `dx[r] += Wᵀ dy[r]`
pub(crate) fn transpose_acc(dy: &[f64], w: &[f64], n_in: usize, dx: &mut [f64]) {
    let n_out = w.len() / n_in;
    for (dr, xr) in dy.chunks_exact(n_out).zip(dx.chunks_exact_mut(n_in)) {
        for (d, wo) in dr.iter().zip(w.chunks_exact(n_in)) {
            if *d != 0.0 {
                axpy(*d, wo, xr);
            }
        }
    }
}
