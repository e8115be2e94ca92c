//! LSTM cell whose input and recurrent projections are PHM layers.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::graph::{Graph, Var};
use crate::phm::PhmParams;
use crate::tensor::{Param, Tensor};

/// How the output gate produces `h_t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputGate {
    /// `h = σ(o) ⊙ tanh(c)`.
    #[default]
    Standard,
    /// `h = o ⊙ c`, no activations.
    Literal,
}

#[derive(Clone, Debug)]
pub struct PhmLstmCell {
    phm_x: PhmParams,
    phm_h: PhmParams,
    bias: Param,
    hidden: usize,
    output_gate: OutputGate,
}

impl PhmLstmCell {
    pub fn new(d_in: usize, hidden: usize, n: usize, rng: &mut crate::Rng) -> Result<Self> {
        let phm_x = PhmParams::random(n, d_in, 4 * hidden, false, rng)?;
        let phm_h = PhmParams::random(n, hidden, 4 * hidden, false, rng)?;
        Self::from_parts(phm_x, phm_h, Param::new(Tensor::zeros(&[4 * hidden])))
    }

    pub fn from_parts(phm_x: PhmParams, phm_h: PhmParams, bias: Param) -> Result<Self> {
        if phm_x.bias().is_some() || phm_h.bias().is_some() {
            return dim_err("cell sublayers must not carry their own bias");
        }
        let k = phm_x.k();
        if !k.is_multiple_of(4) || phm_h.k() != k || phm_h.d() != k / 4 || bias.shape() != [k] {
            return dim_err(format!(
                "cell shapes disagree: input → {k}, recurrent {}→{}, bias {:?}",
                phm_h.d(),
                phm_h.k(),
                bias.shape()
            ));
        }
        Ok(Self {
            phm_x,
            phm_h,
            bias,
            hidden: k / 4,
            output_gate: OutputGate::Standard,
        })
    }

    pub fn with_output_gate(mut self, gate: OutputGate) -> Self {
        self.output_gate = gate;
        self
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.phm_x.d()
    }

    pub fn phm_x(&self) -> &PhmParams {
        &self.phm_x
    }

    pub fn phm_h(&self) -> &PhmParams {
        &self.phm_h
    }

    pub fn bias(&self) -> &Param {
        &self.bias
    }

    pub fn output_gate(&self) -> OutputGate {
        self.output_gate
    }

    pub fn parameters(&self) -> Vec<Param> {
        let mut out = self.phm_x.parameters();
        out.extend(self.phm_h.parameters());
        out.push(self.bias.clone());
        out
    }

    /// Pre-activation `y = PHM(x) + PHM(h) + b`, shape `batch×4h`.
    pub fn preactivation(&self, g: &mut Graph, x: Var, h_prev: Var) -> Result<Var> {
        let from_x = self.phm_x.forward(g, x)?;
        let from_h = self.phm_h.forward(g, h_prev)?;
        let y = g.add(from_x, from_h)?;
        let b = g.param(&self.bias);
        g.add_bias(y, b)
    }

    /// Gates from `y`, split in the order forget, input, output, candidate.
    pub fn step_from_preactivation(&self, g: &mut Graph, y: Var, c_prev: Var) -> Result<(Var, Var)> {
        let parts = g.split_lastdim(y, 4)?;
        let (f, i, o, cand) = (parts[0], parts[1], parts[2], parts[3]);
        let f = g.sigmoid(f)?;
        let i = g.sigmoid(i)?;
        let cand = g.tanh(cand)?;
        let keep = g.mul(f, c_prev)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let h = match self.output_gate {
            OutputGate::Standard => {
                let o = g.sigmoid(o)?;
                let tc = g.tanh(c)?;
                g.mul(o, tc)?
            }
            OutputGate::Literal => g.mul(o, c)?,
        };
        Ok((h, c))
    }

    /// One step; `x` is `batch×d_in`, states are `batch×h`. Returns `(h, c)`.
    pub fn step(&self, g: &mut Graph, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
        let (bx, bh, bc) = (g.shape(x).to_vec(), g.shape(h_prev).to_vec(), g.shape(c_prev).to_vec());
        if bx.len() != 2 || bx[1] != self.input_dim() || bh != [bx[0], self.hidden] || bc != bh {
            return dim_err(format!(
                "cell step: x {bx:?}, h {bh:?}, c {bc:?} for input {} hidden {}",
                self.input_dim(),
                self.hidden
            ));
        }
        let y = self.preactivation(g, x, h_prev)?;
        self.step_from_preactivation(g, y, c_prev)
    }

    /// Runs the recurrence from a zero state over `seq` (each `batch×d_in`).
    pub fn forward(&self, g: &mut Graph, seq: &[Var]) -> Result<Vec<Var>> {
        let Some(&first) = seq.first() else {
            return dim_err("empty sequence");
        };
        let batch = g.shape(first).first().copied().unwrap_or(1);
        let mut h = g.constant(Tensor::zeros(&[batch, self.hidden]));
        let mut c = g.constant(Tensor::zeros(&[batch, self.hidden]));
        let mut out = Vec::with_capacity(seq.len());
        for &x in seq {
            (h, c) = self.step(g, x, h, c)?;
            out.push(h);
        }
        Ok(out)
    }
}
