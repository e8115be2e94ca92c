//! Structured `x ↦ Hx` for `H = Σᵢ Aᵢ ⊗ Sᵢ` without forming `H`.
//!
//! Flattening convention (row-major, used everywhere in this crate): an input
//! row `x` of length `d = n·q` is read as the `n×q` matrix `X[b, c] = x[b·q + c]`
//! and an output row of length `k = n·p` is the `n×p` matrix `Y[a, r]`. Then
//!
//! ```text
//! (A ⊗ S) x  =  vec_row(A · X · Sᵀ)
//! ```
//!
//! which is the column-stacking identity `(A ⊗ S) vec(X') = vec(S X' Aᵀ)`
//! with `X' = Xᵀ`. Each output row needs one `k`-sized scratch buffer for
//! `Zᵢ = X Sᵢᵀ` plus the output itself.

use crate::error::{dim_err, Result};
use crate::kernels::dot;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    /// `k / n`
    pub p: usize,
    /// `d / n`
    pub q: usize,
}

impl Dims {
    pub fn k(&self) -> usize {
        self.n * self.p
    }

    pub fn d(&self) -> usize {
        self.n * self.q
    }

    pub fn from_shapes(rule: &[usize], weights: &[usize]) -> Result<Dims> {
        match (rule, weights) {
            (&[n0, n1, n2], &[n3, p, q]) if n0 == n1 && n1 == n2 && n2 == n3 => {
                Ok(Dims { n: n0, p, q })
            }
            _ => dim_err(format!(
                "rule stack {rule:?} and weight stack {weights:?} are not n×n×n and n×(k/n)×(d/n)"
            )),
        }
    }
}

/// Computes one output row into `out`, using `z` (length `k`) as scratch.
#[inline]
fn apply_row(dims: &Dims, rule: &[f64], weights: &[f64], x: &[f64], z: &mut [f64], out: &mut [f64]) {
    let Dims { n, p, q } = *dims;
    out.iter_mut().for_each(|o| *o = 0.0);
    for i in 0..n {
        let s = &weights[i * p * q..(i + 1) * p * q];
        let a = &rule[i * n * n..(i + 1) * n * n];
        for b in 0..n {
            let xb = &x[b * q..(b + 1) * q];
            for r in 0..p {
                z[b * p + r] = dot(xb, &s[r * q..(r + 1) * q]);
            }
        }
        for ai in 0..n {
            let orow = &mut out[ai * p..(ai + 1) * p];
            for b in 0..n {
                let coef = a[ai * n + b];
                if coef == 0.0 {
                    continue;
                }
                for (o, zv) in orow.iter_mut().zip(&z[b * p..(b + 1) * p]) {
                    *o += coef * zv;
                }
            }
        }
    }
}

/// `batch` rows of `H x`, row-major `batch×k`. Rows are spread over the
/// rayon pool when the `parallel` feature is on and the batch is large.
pub fn forward(dims: &Dims, rule: &[f64], weights: &[f64], x: &[f64], batch: usize) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    if batch > 1 && batch * dims.k() * dims.d() >= crate::kernels::PARALLEL_THRESHOLD {
        return forward_parallel(dims, rule, weights, x, batch);
    }
    forward_sequential(dims, rule, weights, x, batch)
}

pub fn forward_sequential(dims: &Dims, rule: &[f64], weights: &[f64], x: &[f64], batch: usize) -> Vec<f64> {
    let (k, d) = (dims.k(), dims.d());
    let mut out = vec![0.0; batch * k];
    let mut z = vec![0.0; k];
    for (row, orow) in out.chunks_mut(k).enumerate() {
        apply_row(dims, rule, weights, &x[row * d..(row + 1) * d], &mut z, orow);
    }
    out
}

#[cfg(feature = "parallel")]
pub fn forward_parallel(dims: &Dims, rule: &[f64], weights: &[f64], x: &[f64], batch: usize) -> Vec<f64> {
    use rayon::prelude::*;
    let (k, d) = (dims.k(), dims.d());
    let mut out = vec![0.0; batch * k];
    out.par_chunks_mut(k).enumerate().for_each_init(
        || vec![0.0; k],
        |z, (row, orow)| apply_row(dims, rule, weights, &x[row * d..(row + 1) * d], z, orow),
    );
    out
}

/// Single-vector product that writes into caller-provided buffers.
pub fn matvec_into(dims: &Dims, rule: &[f64], weights: &[f64], x: &[f64], z: &mut [f64], out: &mut [f64]) {
    apply_row(dims, rule, weights, x, z, out);
}

pub struct Grads {
    pub a: Vec<f64>,
    pub s: Vec<f64>,
    pub x: Option<Vec<f64>>,
}

/// Gradients of `Σ_rows ⟨g_row, H x_row⟩` with respect to the rule stack,
/// the weight stack and (optionally) the inputs. Rows are reduced in order.
pub fn backward(
    dims: &Dims,
    rule: &[f64],
    weights: &[f64],
    x: &[f64],
    batch: usize,
    g: &[f64],
    with_x: bool,
) -> Grads {
    let Dims { n, p, q } = *dims;
    let (k, d) = (dims.k(), dims.d());
    let mut ga = vec![0.0; n * n * n];
    let mut gs = vec![0.0; n * p * q];
    let mut gx = if with_x { vec![0.0; batch * d] } else { Vec::new() };
    let mut z = vec![0.0; k];
    let mut dz = vec![0.0; k];

    for row in 0..batch {
        let xr = &x[row * d..(row + 1) * d];
        let gr = &g[row * k..(row + 1) * k];
        for i in 0..n {
            let s = &weights[i * p * q..(i + 1) * p * q];
            let a = &rule[i * n * n..(i + 1) * n * n];
            for b in 0..n {
                for r in 0..p {
                    z[b * p + r] = dot(&xr[b * q..(b + 1) * q], &s[r * q..(r + 1) * q]);
                }
            }
            let ga_i = &mut ga[i * n * n..(i + 1) * n * n];
            for ai in 0..n {
                let grow = &gr[ai * p..(ai + 1) * p];
                for b in 0..n {
                    ga_i[ai * n + b] += dot(grow, &z[b * p..(b + 1) * p]);
                }
            }
            dz.iter_mut().for_each(|v| *v = 0.0);
            for ai in 0..n {
                let grow = &gr[ai * p..(ai + 1) * p];
                for b in 0..n {
                    let coef = a[ai * n + b];
                    if coef == 0.0 {
                        continue;
                    }
                    for (dv, gv) in dz[b * p..(b + 1) * p].iter_mut().zip(grow) {
                        *dv += coef * gv;
                    }
                }
            }
            let gs_i = &mut gs[i * p * q..(i + 1) * p * q];
            for b in 0..n {
                let xb = &xr[b * q..(b + 1) * q];
                for r in 0..p {
                    let coef = dz[b * p + r];
                    if coef == 0.0 {
                        continue;
                    }
                    for (o, xv) in gs_i[r * q..(r + 1) * q].iter_mut().zip(xb) {
                        *o += coef * xv;
                    }
                }
            }
            if with_x {
                let gxr = &mut gx[row * d..(row + 1) * d];
                for b in 0..n {
                    for r in 0..p {
                        let coef = dz[b * p + r];
                        if coef == 0.0 {
                            continue;
                        }
                        for (o, sv) in gxr[b * q..(b + 1) * q].iter_mut().zip(&s[r * q..(r + 1) * q]) {
                            *o += coef * sv;
                        }
                    }
                }
            }
        }
    }
    Grads {
        a: ga,
        s: gs,
        x: with_x.then_some(gx),
    }
}
