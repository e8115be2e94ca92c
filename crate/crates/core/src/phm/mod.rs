//! The parameterized hypercomplex multiplication layer, `y = Hx + b` with
//! `H = Σᵢ Aᵢ ⊗ Sᵢ`.
//!
//! The `n` rule matrices `Aᵢ` (each `n×n`) are stored stacked as one
//! `n×n×n` parameter and the `n` weight blocks `Sᵢ` (each `k/n × d/n`) as
//! one `n×(k/n)×(d/n)` parameter. `H` has `k·d/n + n³` degrees of freedom.

pub mod blockdiffusion;
pub mod kernel;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, PhmError, Result};
use crate::graph::{Graph, Var};
use crate::hypercomplex;
use crate::tensor::{Param, Tensor};

pub use blockdiffusion::{
    build_h_blockdiffusion, kron_to_block_mapping, psi_flatten, BlockDiffusionParams,
    HAMILTON_DIFFUSION_BASIS,
};

/// Above this many entries of `H` the layer defaults to the implicit product.
pub const IMPLICIT_THRESHOLD: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Uniform rule and weight entries scaled so `Var(H)` matches Glorot.
    VarianceScaledUniform,
    /// Rule fixed to the quaternion basis, weights supplied by the caller.
    Quaternion,
    /// Values supplied by the caller.
    Explicit,
}

/// How [`PhmParams::forward`] evaluates `Hx`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardPath {
    /// Implicit when `k·d > IMPLICIT_THRESHOLD`, dense otherwise.
    #[default]
    Auto,
    Dense,
    Implicit,
}

/// Fails unless `n` divides both `d` and `k`.
pub fn check_divisible(n: usize, d: usize, k: usize) -> Result<()> {
    if n == 0 || d == 0 || k == 0 {
        return dim_err(format!("n={n}, d={d}, k={k} must all be positive"));
    }
    if !d.is_multiple_of(n) || !k.is_multiple_of(n) {
        return dim_err(format!("n={n} must divide d={d} and k={k}"));
    }
    Ok(())
}

/// `k·d/n + n³`, plus `k` with a bias.
pub fn phm_param_count(n: usize, d: usize, k: usize, with_bias: bool) -> Result<usize> {
    check_divisible(n, d, k)?;
    Ok(k * d / n + n * n * n + if with_bias { k } else { 0 })
}

/// Sidecar metadata stored next to serialized layer weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhmMeta {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub seed: Option<u64>,
    pub init: InitScheme,
    pub bias: bool,
    pub rule_trainable: bool,
}

#[derive(Clone, Debug)]
pub struct PhmParams {
    n: usize,
    d: usize,
    k: usize,
    rule: Param,
    weights: Param,
    bias: Option<Param>,
    seed: Option<u64>,
    init: InitScheme,
    path: ForwardPath,
}

/// Seeded layer with a zero bias.
pub fn phm_init(n: usize, d: usize, k: usize, seed: u64) -> Result<PhmParams> {
    if k * d < n.pow(4) {
        warn!("k·d = {} is below n⁴ = {}; the n³ rule term dominates", k * d, n.pow(4));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = PhmParams::random(n, d, k, true, &mut rng)?;
    p.seed = Some(seed);
    Ok(p)
}

impl PhmParams {
    /// Variance-scaled uniform initialization drawn from `rng`.
    ///
    /// Rule entries are `U(±1/√n)`, weight entries `U(±√(18/(d+k)))`, so each
    /// entry of `H` has variance `2/(d+k)`. The bias starts at zero.
    pub fn random(n: usize, d: usize, k: usize, bias: bool, rng: &mut impl Rng) -> Result<Self> {
        check_divisible(n, d, k)?;
        if k * d < n.pow(4) {
            debug!("k·d = {} is below n⁴ = {}; the n³ rule term dominates", k * d, n.pow(4));
        }
        let rule_bound = 1.0 / (n as f64).sqrt();
        let weight_bound = (18.0 / (d + k) as f64).sqrt();
        let rule: Vec<f64> = (0..n * n * n)
            .map(|_| rng.gen_range(-rule_bound..=rule_bound))
            .collect();
        let weights: Vec<f64> = (0..k * d / n)
            .map(|_| rng.gen_range(-weight_bound..=weight_bound))
            .collect();
        Ok(Self {
            n,
            d,
            k,
            rule: Param::new(Tensor::new(vec![n, n, n], rule)?),
            weights: Param::new(Tensor::new(vec![n, k / n, d / n], weights)?),
            bias: bias.then(|| Param::new(Tensor::zeros(&[k]))),
            seed: None,
            init: InitScheme::VarianceScaledUniform,
            path: ForwardPath::Auto,
        })
    }

    /// Builds a layer from a rule stack `n×n×n`, a weight stack
    /// `n×(k/n)×(d/n)` and an optional length-`k` bias.
    pub fn from_parts(rule: Tensor, weights: Tensor, bias: Option<Tensor>) -> Result<Self> {
        let dims = kernel::Dims::from_shapes(rule.shape(), weights.shape())?;
        let (n, k, d) = (dims.n, dims.k(), dims.d());
        if let Some(b) = &bias {
            if b.shape() != [k] {
                return dim_err(format!("bias shape {:?}, expected [{k}]", b.shape()));
            }
        }
        Ok(Self {
            n,
            d,
            k,
            rule: Param::new(rule),
            weights: Param::new(weights),
            bias: bias.map(Param::new),
            seed: None,
            init: InitScheme::Explicit,
            path: ForwardPath::Auto,
        })
    }

    /// Builds a layer from per-summand matrices `Aᵢ` and `Sᵢ`.
    pub fn from_factors(rules: &[Tensor], weights: &[Tensor], bias: Option<Tensor>) -> Result<Self> {
        if rules.len() != weights.len() {
            return dim_err("rule and weight lists differ in length");
        }
        Self::from_parts(Tensor::stack(rules)?, Tensor::stack(weights)?, bias)
    }

    /// Quaternion layer: `n = 4`, rule frozen to the Hamilton basis, weight
    /// blocks `(Q_r, Q_x, Q_y, Q_z)` each `(k/4)×(d/4)`, no bias.
    pub fn from_quaternion(blocks: &[Tensor; 4]) -> Result<Self> {
        Self::from_quaternion_with_basis(blocks, &hypercomplex::HAMILTON_KRON_BASIS)
    }

    /// As [`from_quaternion`](Self::from_quaternion) with a caller-chosen rule.
    pub fn from_quaternion_with_basis(
        blocks: &[Tensor; 4],
        basis: &[[[f64; 4]; 4]; 4],
    ) -> Result<Self> {
        let shape = blocks[0].shape();
        if shape.len() != 2 || blocks.iter().any(|b| b.shape() != shape) {
            return dim_err("quaternion blocks must be equally shaped matrices");
        }
        let rule = Tensor::stack(&hypercomplex::basis_to_tensors(basis))?;
        let mut p = Self::from_parts(rule, Tensor::stack(blocks)?, None)?;
        p.rule.set_trainable(false);
        p.init = InitScheme::Quaternion;
        Ok(p)
    }

    /// `n = 1` layer with `a = 1` and `S₁ = w`, i.e. an FC layer with weights `w`.
    pub fn from_fc(w: &Tensor, bias: Option<&Tensor>) -> Result<Self> {
        let &[k, d] = w.shape() else {
            return Err(PhmError::Rank {
                expected: 2,
                actual: w.rank(),
            });
        };
        Self::from_parts(
            Tensor::new(vec![1, 1, 1], vec![1.0])?,
            w.reshape(&[1, k, d])?,
            bias.cloned(),
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rule(&self) -> &Param {
        &self.rule
    }

    pub fn weights(&self) -> &Param {
        &self.weights
    }

    pub fn bias(&self) -> Option<&Param> {
        self.bias.as_ref()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn init_scheme(&self) -> InitScheme {
        self.init
    }

    pub fn path(&self) -> ForwardPath {
        self.path
    }

    pub fn set_path(&mut self, path: ForwardPath) {
        self.path = path;
    }

    pub fn with_path(mut self, path: ForwardPath) -> Self {
        self.path = path;
        self
    }

    pub fn set_rule_trainable(&self, flag: bool) {
        self.rule.set_trainable(flag);
    }

    /// `Aᵢ` as an `n×n` tensor.
    pub fn rule_matrix(&self, i: usize) -> Result<Tensor> {
        self.rule.value().select(i)
    }

    /// `Sᵢ` as a `(k/n)×(d/n)` tensor.
    pub fn weight_block(&self, i: usize) -> Result<Tensor> {
        self.weights.value().select(i)
    }

    pub fn dims(&self) -> kernel::Dims {
        kernel::Dims {
            n: self.n,
            p: self.k / self.n,
            q: self.d / self.n,
        }
    }

    /// Dense `H = Σᵢ Aᵢ ⊗ Sᵢ`, `k×d`. Summands are accumulated in index order.
    pub fn build_h(&self) -> Tensor {
        let kernel::Dims { n, p, q } = self.dims();
        let rule = self.rule.value();
        let weights = self.weights.value();
        let (a, s) = (rule.data(), weights.data());
        let d = self.d;
        let mut h = vec![0.0; self.k * d];
        for i in 0..n {
            for ai in 0..n {
                for b in 0..n {
                    let coef = a[i * n * n + ai * n + b];
                    for r in 0..p {
                        let srow = &s[i * p * q + r * q..i * p * q + (r + 1) * q];
                        let hrow = &mut h[(ai * p + r) * d + b * q..(ai * p + r) * d + (b + 1) * q];
                        for (hv, sv) in hrow.iter_mut().zip(srow) {
                            *hv += coef * sv;
                        }
                    }
                }
            }
        }
        Tensor::new(vec![self.k, d], h).expect("k×d")
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize)> {
        let (rows, cols) = x.rows_cols();
        if x.rank() == 0 || cols != self.d {
            return dim_err(format!(
                "input shape {:?} does not end in d={}",
                x.shape(),
                self.d
            ));
        }
        Ok((rows, cols))
    }

    fn out_shape(&self, x: &Tensor) -> Vec<usize> {
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("rank ≥ 1") = self.k;
        shape
    }

    fn add_bias(&self, out: &mut [f64]) {
        if let Some(b) = &self.bias {
            let b = b.value();
            for row in out.chunks_mut(self.k) {
                row.iter_mut().zip(b.data()).for_each(|(o, bv)| *o += bv);
            }
        }
    }

    /// Eager `Hx + b` through the dense `H`, batched over leading axes.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (rows, _) = self.check_input(x)?;
        let ht = self.build_h().transpose()?;
        let mut out = crate::kernels::gemm(rows, self.d, self.k, x.data(), ht.data());
        self.add_bias(&mut out);
        Tensor::new(self.out_shape(x), out)
    }

    /// Eager `Hx + b` without materializing `H`. Besides the result this
    /// allocates one `k`-length scratch buffer.
    pub fn implicit_matvec(&self, x: &Tensor) -> Result<Tensor> {
        let (rows, _) = self.check_input(x)?;
        let dims = self.dims();
        let rule = self.rule.value();
        let weights = self.weights.value();
        let mut out = vec![0.0; rows * self.k];
        let mut z = vec![0.0; self.k];
        for (xr, orow) in x.data().chunks(self.d).zip(out.chunks_mut(self.k)) {
            kernel::matvec_into(&dims, rule.data(), weights.data(), xr, &mut z, orow);
        }
        self.add_bias(&mut out);
        Tensor::new(self.out_shape(x), out)
    }

    /// Records `Hx + b` on `g` using the layer's [`ForwardPath`].
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.forward_with(g, x, self.path)
    }

    pub fn forward_with(&self, g: &mut Graph, x: Var, path: ForwardPath) -> Result<Var> {
        let (rows, _) = self.check_input(g.value(x))?;
        let out_shape = self.out_shape(g.value(x));
        let implicit = match path {
            ForwardPath::Auto => self.k * self.d > IMPLICIT_THRESHOLD,
            ForwardPath::Dense => false,
            ForwardPath::Implicit => true,
        };
        let rule = g.param(&self.rule);
        let weights = g.param(&self.weights);
        let y = if implicit {
            g.phm_implicit(rule, weights, x)?
        } else {
            let mut h: Option<Var> = None;
            for i in 0..self.n {
                let a = g.select(rule, i)?;
                let s = g.select(weights, i)?;
                let term = g.kron(a, s)?;
                h = Some(match h {
                    Some(acc) => g.add(acc, term)?,
                    None => term,
                });
            }
            let ht = g.transpose(h.expect("n ≥ 1"))?;
            let x2 = if g.shape(x) == [rows, self.d] {
                x
            } else {
                g.reshape(x, &[rows, self.d])?
            };
            let y = g.matmul(x2, ht)?;
            if out_shape == [rows, self.k] {
                y
            } else {
                g.reshape(y, &out_shape)?
            }
        };
        match &self.bias {
            Some(b) => {
                let bv = g.param(b);
                g.add_bias(y, bv)
            }
            None => Ok(y),
        }
    }

    pub fn parameters(&self) -> Vec<Param> {
        let mut out = vec![self.rule.clone(), self.weights.clone()];
        out.extend(self.bias.clone());
        out
    }

    /// Element count of every stored parameter tensor.
    pub fn num_params(&self) -> usize {
        self.parameters().iter().map(Param::numel).sum()
    }

    pub fn meta(&self) -> PhmMeta {
        PhmMeta {
            n: self.n,
            d: self.d,
            k: self.k,
            seed: self.seed,
            init: self.init,
            bias: self.bias.is_some(),
            rule_trainable: self.rule.trainable(),
        }
    }

    /// Named tensors under `prefix` (`{prefix}rule`, `{prefix}weights`, `{prefix}bias`).
    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = vec![
            (format!("{prefix}rule"), self.rule.snapshot()),
            (format!("{prefix}weights"), self.weights.snapshot()),
        ];
        if let Some(b) = &self.bias {
            out.push((format!("{prefix}bias"), b.snapshot()));
        }
        out
    }

    /// Overwrites values from a named-tensor lookup written by
    /// [`named_tensors`](Self::named_tensors).
    pub fn load_named(&self, prefix: &str, lookup: &dyn Fn(&str) -> Option<Tensor>) -> Result<()> {
        let load = |name: String, p: &Param| -> Result<()> {
            let t = lookup(&name)
                .ok_or_else(|| PhmError::Format(format!("missing array {name}")))?;
            if t.shape() != p.shape().as_slice() {
                return dim_err(format!("array {name} has shape {:?}", t.shape()));
            }
            p.set_data(t.data())
        };
        load(format!("{prefix}rule"), &self.rule)?;
        load(format!("{prefix}weights"), &self.weights)?;
        if let Some(b) = &self.bias {
            load(format!("{prefix}bias"), b)?;
        }
        Ok(())
    }

    /// Rebuilds a layer from sidecar metadata and its arrays.
    pub fn from_named(meta: &PhmMeta, prefix: &str, lookup: &dyn Fn(&str) -> Option<Tensor>) -> Result<Self> {
        check_divisible(meta.n, meta.d, meta.k)?;
        let (n, d, k) = (meta.n, meta.d, meta.k);
        let p = Self {
            n,
            d,
            k,
            rule: Param::new(Tensor::zeros(&[n, n, n])),
            weights: Param::new(Tensor::zeros(&[n, k / n, d / n])),
            bias: meta.bias.then(|| Param::new(Tensor::zeros(&[k]))),
            seed: meta.seed,
            init: meta.init,
            path: ForwardPath::Auto,
        };
        p.rule.set_trainable(meta.rule_trainable);
        p.load_named(prefix, lookup)?;
        Ok(p)
    }
}
