//! Self-check suite: subsumption, equivalence, parameter and gradient checks.
//!
//! Each check family compares the library against an independent reference
//! and reports the worst error seen against its tolerance.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::experiments::param_audit;
use crate::gradcheck::{check_params, DEFAULT_STEP};
use crate::graph::{sigmoid, Graph, Var};
use crate::hypercomplex::{hamilton, Quaternion, HAMILTON_KRON_BASIS};
use crate::models::{ModelConfig, PhmAttention, PhmFfn, PhmLstmCell, PhmTransformer};
use crate::phm::blockdiffusion::{build_h_blockdiffusion, kron_to_block_mapping};
use crate::phm::{phm_param_count, ForwardPath, PhmParams};
use crate::tensor::{Param, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: String,
    pub status: Status,
    pub max_err: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn judge(check: &str, max_err: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        let status = if max_err <= tolerance { Status::Pass } else { Status::Fail };
        Self {
            check: check.to_owned(),
            status,
            max_err,
            tolerance,
            detail: detail.into(),
        }
    }

    fn errored(check: &str, tolerance: f64, e: crate::PhmError) -> Self {
        Self {
            check: check.to_owned(),
            status: Status::Fail,
            max_err: f64::INFINITY,
            tolerance,
            detail: format!("error: {e}"),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Rule constants the Hamilton subsumption check builds its layer from.
    pub hamilton_basis: [[[f64; 4]; 4]; 4],
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            hamilton_basis: HAMILTON_KRON_BASIS,
        }
    }
}

pub fn run_suite(opts: &VerifyOptions) -> Vec<CheckResult> {
    type Check = fn(&VerifyOptions) -> Result<(f64, String)>;
    let checks: [(&str, f64, Check); 11] = [
        ("hamilton-subsumption", 1e-12, hamilton_subsumption),
        ("fc-degeneracy", 1e-12, fc_degeneracy),
        ("lstm-fc-degeneracy", 1e-12, lstm_fc_degeneracy),
        ("block-diffusion-equivalence", 1e-15, block_diffusion_equivalence),
        ("implicit-dense-agreement", 1e-12, implicit_dense_agreement),
        ("param-formula", 0.0, param_formula),
        ("param-savings", 1.5, param_savings),
        ("grad-phm", 1e-4, grad_phm),
        ("grad-lstm-recurrence", 1e-3, grad_lstm),
        ("grad-attention", 1e-4, grad_attention),
        ("grad-ffn", 1e-4, grad_ffn),
    ];
    checks
        .iter()
        .map(|&(name, tol, f)| match f(opts) {
            Ok((err, detail)) => CheckResult::judge(name, err, tol, detail),
            Err(e) => CheckResult::errored(name, tol, e),
        })
        .collect()
}

fn uniform(rng: &mut crate::Rng, shape: &[usize]) -> Tensor {
    let numel = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

fn random_quaternion(rng: &mut crate::Rng) -> Quaternion {
    Quaternion::from_array(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
}

fn hamilton_subsumption(opts: &VerifyOptions) -> Result<(f64, String)> {
    let mut rng = crate::rng(opts.seed);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (q, p) = (random_quaternion(&mut rng), random_quaternion(&mut rng));
        let blocks = q.to_array().map(|c| Tensor::new(vec![1, 1], vec![c]).expect("1×1"));
        let layer = PhmParams::from_quaternion_with_basis(&blocks, &opts.hamilton_basis)?;
        let y = layer.apply(&Tensor::vector(p.to_array().to_vec()))?;
        let want = hamilton(q, p).to_array();
        worst = y.data().iter().zip(want).fold(worst, |m, (a, b)| m.max((a - b).abs()));
    }
    Ok((worst, "1000 random quaternion pairs".into()))
}

fn fc_apply(w: &Tensor, b: &[f64], x: &[f64]) -> Vec<f64> {
    let (k, d) = (w.shape()[0], w.shape()[1]);
    (0..k)
        .map(|r| b[r] + (0..d).map(|c| w.data()[r * d + c] * x[c]).sum::<f64>())
        .collect()
}

fn fc_degeneracy(opts: &VerifyOptions) -> Result<(f64, String)> {
    let mut rng = crate::rng(opts.seed ^ 1);
    let (d, k) = (7, 5);
    let w = uniform(&mut rng, &[k, d]);
    let b = uniform(&mut rng, &[k]);
    let layer = PhmParams::from_fc(&w, Some(&b))?;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x = uniform(&mut rng, &[d]);
        let want = fc_apply(&w, b.data(), x.data());
        for path in [ForwardPath::Dense, ForwardPath::Implicit] {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let y = layer.forward_with(&mut g, xv, path)?;
            worst = g.value(y).data().iter().zip(&want).fold(worst, |m, (a, b)| m.max((a - b).abs()));
        }
    }
    Ok((worst, "1000 inputs, dense and implicit paths".into()))
}

/// Plain LSTM step with FC maps, gates in the order forget, input, output,
/// candidate.
fn fc_lstm_step(wx: &Tensor, wh: &Tensor, b: &[f64], x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hidden = h.len();
    let zero = vec![0.0; b.len()];
    let y: Vec<f64> = fc_apply(wx, b, x).iter().zip(fc_apply(wh, &zero, h)).map(|(a, b)| a + b).collect();
    let mut h_new = vec![0.0; hidden];
    let mut c_new = vec![0.0; hidden];
    for j in 0..hidden {
        let f = sigmoid(y[j]);
        let i = sigmoid(y[hidden + j]);
        let o = sigmoid(y[2 * hidden + j]);
        let cand = y[3 * hidden + j].tanh();
        c_new[j] = f * c[j] + i * cand;
        h_new[j] = o * c_new[j].tanh();
    }
    (h_new, c_new)
}

fn lstm_fc_degeneracy(opts: &VerifyOptions) -> Result<(f64, String)> {
    let mut rng = crate::rng(opts.seed ^ 2);
    let (d_in, hidden, steps) = (5, 3, 8);
    let wx = uniform(&mut rng, &[4 * hidden, d_in]);
    let wh = uniform(&mut rng, &[4 * hidden, hidden]);
    let b = uniform(&mut rng, &[4 * hidden]);
    let cell = PhmLstmCell::from_parts(
        PhmParams::from_fc(&wx, None)?,
        PhmParams::from_fc(&wh, None)?,
        Param::new(b.clone()),
    )?;
    let xs: Vec<Tensor> = (0..steps).map(|_| uniform(&mut rng, &[1, d_in])).collect();
    let mut g = Graph::new();
    let seq: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
    let hs = cell.forward(&mut g, &seq)?;
    let (mut h, mut c) = (vec![0.0; hidden], vec![0.0; hidden]);
    let mut worst = 0.0f64;
    for (x, hv) in xs.iter().zip(hs) {
        (h, c) = fc_lstm_step(&wx, &wh, b.data(), x.data(), &h, &c);
        worst = g.value(hv).data().iter().zip(&h).fold(worst, |m, (a, b)| m.max((a - b).abs()));
    }
    Ok((worst, format!("{steps}-step recurrence")))
}

fn block_diffusion_equivalence(opts: &VerifyOptions) -> Result<(f64, String)> {
    let mut rng = crate::rng(opts.seed ^ 3);
    let ns = [1, 2, 3, 4, 8];
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = ns[rng.gen_range(0..ns.len())];
        let d = n * rng.gen_range(1..=3);
        let k = n * rng.gen_range(1..=3);
        let layer = PhmParams::random(n, d, k, false, &mut rng)?;
        let bd = kron_to_block_mapping(&layer);
        worst = worst.max(build_h_blockdiffusion(&bd)?.max_abs_diff(&layer.build_h())?);
    }
    Ok((worst, "100 random configurations".into()))
}

fn implicit_dense_agreement(opts: &VerifyOptions) -> Result<(f64, String)> {
    let mut rng = crate::rng(opts.seed ^ 4);
    let mut worst = 0.0f64;
    for (n, d, k) in [(2, 8, 6), (4, 16, 12), (8, 64, 64), (3, 9, 6)] {
        let layer = PhmParams::random(n, d, k, true, &mut rng)?;
        let x = uniform(&mut rng, &[d]);
        let dense = layer.apply(&x)?;
        let implicit = layer.implicit_matvec(&x)?;
        let scale = dense.max_abs().max(f64::MIN_POSITIVE);
        worst = worst.max(dense.max_abs_diff(&implicit)? / scale);
    }
    Ok((worst, "relative to the dense result".into()))
}

fn param_formula(_: &VerifyOptions) -> Result<(f64, String)> {
    let mut worst = 0usize;
    for (n, d, k) in [(1, 6, 4), (2, 8, 6), (4, 16, 12), (8, 64, 32)] {
        let layer = phm_init_nobias(n, d, k)?;
        let counted = layer.parameters().iter().map(Param::numel).sum::<usize>();
        worst = worst.max(counted.abs_diff(k * d / n + n.pow(3)));
        worst = worst.max(counted.abs_diff(phm_param_count(n, d, k, false)?));
    }
    for n in [1, 2, 4] {
        let cfg = ModelConfig { vocab: 3, ..ModelConfig::toy(n) };
        let model = PhmTransformer::new(cfg.clone(), &mut crate::rng(0))?;
        worst = worst.max(model.non_embedding_params().abs_diff(cfg.non_embedding_params()?));
    }
    Ok((worst as f64, "enumerated layer and toy-model counts".into()))
}

fn phm_init_nobias(n: usize, d: usize, k: usize) -> Result<PhmParams> {
    PhmParams::random(n, d, k, false, &mut crate::rng(0))
}

/// Reported change at full scale (4 layers, d=512, d_ff=2048, 8 heads).
pub const REFERENCE_CHANGE: [(usize, f64); 4] = [(2, -50.0), (4, -75.0), (8, -87.5), (16, -93.4)];

fn param_savings(_: &VerifyOptions) -> Result<(f64, String)> {
    let ns: Vec<usize> = REFERENCE_CHANGE.iter().map(|&(n, _)| n).collect();
    let rows = param_audit(&ModelConfig::full_scale(1), &ns)?;
    let worst = rows
        .iter()
        .zip(REFERENCE_CHANGE)
        .map(|(row, (_, want))| (row.change_pct - want).abs())
        .fold(0.0, f64::max);
    let detail = rows
        .iter()
        .map(|r| format!("n={}: {:.2}%", r.n, r.change_pct))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((worst, detail))
}

/// `Σ out ⊙ R` for a fixed random `R`, so no entry's gradient cancels by symmetry.
pub fn probe_loss(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let r = g.constant(uniform(&mut crate::rng(seed), &shape));
    let prod = g.mul(out, r)?;
    g.sum(prod)
}

fn grad_phm(opts: &VerifyOptions) -> Result<(f64, String)> {
    let mut rng = crate::rng(opts.seed ^ 5);
    let mut worst = 0.0f64;
    for path in [ForwardPath::Dense, ForwardPath::Implicit] {
        let layer = PhmParams::random(2, 6, 4, true, &mut rng)?;
        layer.bias().expect("bias").set_data(&[0.1, -0.2, 0.3, -0.4])?;
        let x = uniform(&mut rng, &[3, 6]);
        let loss = |g: &mut Graph| {
            let xv = g.constant(x.clone());
            let y = layer.forward_with(g, xv, path)?;
            probe_loss(g, y, 11)
        };
        worst = worst.max(check_params(&layer.parameters(), &loss, DEFAULT_STEP, 64)?.max_rel_err);
    }
    Ok((worst, "dense and implicit paths".into()))
}

fn grad_lstm(opts: &VerifyOptions) -> Result<(f64, String)> {
    let mut rng = crate::rng(opts.seed ^ 6);
    let cell = PhmLstmCell::new(4, 4, 2, &mut rng)?;
    cell.bias().set_data(&uniform(&mut rng, &[16]).scale(0.5).into_data())?;
    let xs: Vec<Tensor> = (0..10).map(|_| uniform(&mut rng, &[2, 4])).collect();
    let loss = |g: &mut Graph| {
        let seq: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let hs = cell.forward(g, &seq)?;
        probe_loss(g, *hs.last().expect("non-empty"), 12)
    };
    let report = check_params(&cell.parameters(), &loss, DEFAULT_STEP, 64)?;
    Ok((report.max_rel_err, format!("10 steps, {} entries", report.checked)))
}

fn grad_attention(opts: &VerifyOptions) -> Result<(f64, String)> {
    let mut rng = crate::rng(opts.seed ^ 7);
    let attn = PhmAttention::new(2, 8, 2, &mut rng)?;
    let x = uniform(&mut rng, &[6, 8]);
    let loss = |g: &mut Graph| {
        let xv = g.constant(x.clone());
        let y = attn.forward(g, xv, 2, 3, true)?;
        probe_loss(g, y, 13)
    };
    let report = check_params(&attn.parameters(), &loss, DEFAULT_STEP, 64)?;
    Ok((report.max_rel_err, format!("{} entries", report.checked)))
}

fn grad_ffn(opts: &VerifyOptions) -> Result<(f64, String)> {
    let mut rng = crate::rng(opts.seed ^ 8);
    let ffn = PhmFfn::new(2, 4, 8, &mut rng)?;
    let x = uniform(&mut rng, &[3, 4]);
    let loss = |g: &mut Graph| {
        let xv = g.constant(x.clone());
        let y = ffn.forward(g, xv)?;
        probe_loss(g, y, 14)
    };
    let report = check_params(&ffn.parameters(), &loss, DEFAULT_STEP, 64)?;
    Ok((report.max_rel_err, format!("{} entries", report.checked)))
}
