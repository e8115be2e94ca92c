//! Reference implementations written independently of the library.

#![allow(dead_code)]

use rand::Rng;

use phm_core::{Graph, Param, Result, Tensor, Var};

pub fn rand_vec(rng: &mut phm_core::Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn rand_tensor(rng: &mut phm_core::Rng, shape: &[usize]) -> Tensor {
    Tensor::new(shape.to_vec(), rand_vec(rng, shape.iter().product())).unwrap()
}

/// Row-major `k×d` matrix times vector, plus bias.
pub fn fc(w: &[f64], b: &[f64], k: usize, d: usize, x: &[f64]) -> Vec<f64> {
    (0..k)
        .map(|r| b[r] + (0..d).map(|c| w[r * d + c] * x[c]).sum::<f64>())
        .collect()
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Textbook Hamilton product of `(r, x, y, z)` components.
pub fn hamilton(q: [f64; 4], p: [f64; 4]) -> [f64; 4] {
    let [a1, b1, c1, d1] = q;
    let [a2, b2, c2, d2] = p;
    [
        a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
        a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
        a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
        a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
    ]
}

/// Dense Kronecker product of row-major matrices.
pub fn kron(a: &[f64], (ar, ac): (usize, usize), b: &[f64], (br, bc): (usize, usize)) -> Vec<f64> {
    let cols = ac * bc;
    let mut out = vec![0.0; ar * br * cols];
    for i in 0..ar {
        for j in 0..ac {
            for p in 0..br {
                for q in 0..bc {
                    out[(i * br + p) * cols + j * bc + q] = a[i * ac + j] * b[p * bc + q];
                }
            }
        }
    }
    out
}

/// LSTM step with FC maps; gates ordered forget, input, output, candidate.
pub fn fc_lstm_step(
    wx: &[f64],
    wh: &[f64],
    b: &[f64],
    x: &[f64],
    h: &[f64],
    c: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let hidden = h.len();
    let zero = vec![0.0; 4 * hidden];
    let yx = fc(wx, b, 4 * hidden, x.len(), x);
    let yh = fc(wh, &zero, 4 * hidden, hidden, h);
    let y: Vec<f64> = yx.iter().zip(&yh).map(|(a, b)| a + b).collect();
    let mut h_new = vec![0.0; hidden];
    let mut c_new = vec![0.0; hidden];
    for j in 0..hidden {
        let f = sigmoid(y[j]);
        let i = sigmoid(y[hidden + j]);
        let o = sigmoid(y[2 * hidden + j]);
        let g = y[3 * hidden + j].tanh();
        c_new[j] = f * c[j] + i * g;
        h_new[j] = o * c_new[j].tanh();
    }
    (h_new, c_new)
}

fn softmax(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

/// Multi-head attention of one `len×d` sequence with FC projections:
/// `w_qkv` is `3d×d`, `w_out` is `d×d`. With `w_out = None` the head outputs
/// are returned unmixed.
pub fn fc_attention(
    x: &[f64],
    len: usize,
    d: usize,
    heads: usize,
    (w_qkv, b_qkv): (&[f64], &[f64]),
    out: Option<(&[f64], &[f64])>,
) -> Vec<f64> {
    let qkv: Vec<Vec<f64>> = (0..len).map(|t| fc(w_qkv, b_qkv, 3 * d, d, &x[t * d..(t + 1) * d])).collect();
    let dk = d / heads;
    let mut concat = vec![0.0; len * d];
    for h in 0..heads {
        for t in 0..len {
            let q = &qkv[t][h * dk..(h + 1) * dk];
            let mut scores: Vec<f64> = (0..len)
                .map(|s| {
                    let k = &qkv[s][d + h * dk..d + (h + 1) * dk];
                    q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (dk as f64).sqrt()
                })
                .collect();
            softmax(&mut scores);
            for j in 0..dk {
                concat[t * d + h * dk + j] = (0..len).map(|s| scores[s] * qkv[s][2 * d + h * dk + j]).sum();
            }
        }
    }
    match out {
        None => concat,
        Some((w, b)) => (0..len).flat_map(|t| fc(w, b, d, d, &concat[t * d..(t + 1) * d])).collect(),
    }
}

/// Central-difference gradient of `loss` for every entry of `param`.
pub fn numeric_grad(param: &Param, loss: &dyn Fn() -> f64, step: f64) -> Vec<f64> {
    let base = param.snapshot().into_data();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut probe = base.clone();
        probe[i] = base[i] + step;
        param.set_data(&probe).unwrap();
        let plus = loss();
        probe[i] = base[i] - step;
        param.set_data(&probe).unwrap();
        let minus = loss();
        out.push((plus - minus) / (2.0 * step));
    }
    param.set_data(&base).unwrap();
    out
}

/// Worst `|a − n| / max(|a|, |n|, 1e-6)` between tape and numeric gradients
/// over `params`, for the scalar built by `build`.
pub fn max_grad_rel_err(params: &[Param], build: &dyn Fn(&mut Graph) -> Result<Var>) -> f64 {
    for p in params {
        p.zero_grad();
    }
    let mut g = Graph::new();
    let loss = build(&mut g).unwrap();
    g.backward(loss).unwrap();
    let eval = || {
        let mut g = Graph::new();
        let l = build(&mut g).unwrap();
        g.value(l).item()
    };
    let mut worst = 0.0f64;
    for p in params {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        let numeric = numeric_grad(p, &eval, 1e-5);
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-6));
        }
        p.zero_grad();
    }
    worst
}

/// `Σ out ⊙ R` with a fixed random `R`.
pub fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let r = g.constant(rand_tensor(&mut phm_core::rng(seed), &shape));
    let prod = g.mul(out, r)?;
    g.sum(prod)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
