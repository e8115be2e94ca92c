//! Synthetic datasets.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::hypercomplex::{hamilton, Quaternion};
use crate::models::transformer::{BOS, EOS};
use crate::tensor::Tensor;

/// First token id available for content; lower ids are pad, bos and eos.
pub const FIRST_CONTENT_TOKEN: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionData {
    /// `count×d`
    pub inputs: Tensor,
    /// `count×k`
    pub targets: Tensor,
    /// The map that generated the targets, `k×d`.
    pub truth: Tensor,
}

impl RegressionData {
    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `ids` of inputs and targets.
    pub fn batch(&self, ids: &[usize]) -> (Tensor, Tensor) {
        (pick_rows(&self.inputs, ids), pick_rows(&self.targets, ids))
    }
}

fn pick_rows(t: &Tensor, ids: &[usize]) -> Tensor {
    let (_, cols) = t.rows_cols();
    let mut data = Vec::with_capacity(ids.len() * cols);
    for &i in ids {
        data.extend_from_slice(&t.data()[i * cols..(i + 1) * cols]);
    }
    Tensor::new(vec![ids.len(), cols], data).expect("rows×cols")
}

pub fn random_unit_quaternion(rng: &mut crate::Rng) -> Quaternion {
    loop {
        let c: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let q = Quaternion::from_array(c);
        let norm = q.norm();
        if norm > 1e-6 {
            return q.scale(1.0 / norm);
        }
    }
}

/// Uniform sample from the closed unit ball in 3D.
pub fn uniform_ball(rng: &mut crate::Rng) -> [f64; 3] {
    let dir: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let radius = rng.gen::<f64>().cbrt();
    dir.map(|v| v * radius / norm)
}

pub fn random_rotation(rng: &mut crate::Rng) -> [[f64; 3]; 3] {
    random_unit_quaternion(rng).rotation_matrix()
}

/// `y = Wx` for one rotation `W` drawn from `seed`.
pub fn gen_rotation_dataset(seed: u64, count: usize) -> RegressionData {
    let mut rng = crate::rng(seed);
    let w = random_rotation(&mut rng);
    let mut xs = Vec::with_capacity(3 * count);
    let mut ys = Vec::with_capacity(3 * count);
    for _ in 0..count {
        let x = uniform_ball(&mut rng);
        xs.extend_from_slice(&x);
        ys.extend(w.iter().map(|row| row[0] * x[0] + row[1] * x[1] + row[2] * x[2]));
    }
    RegressionData {
        inputs: Tensor::new(vec![count, 3], xs).expect("count×3"),
        targets: Tensor::new(vec![count, 3], ys).expect("count×3"),
        truth: Tensor::from_rows(&w.map(|r| r.to_vec())).expect("3×3"),
    }
}

/// Fixed quaternion `Q` with components in `[-1, 1)` drawn from `seed`.
pub fn hamilton_target(seed: u64) -> Quaternion {
    let mut rng = crate::rng(seed);
    Quaternion::from_array(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
}

/// `y = Q ⊗ p` for random `p`, with `Q` from [`hamilton_target`].
pub fn gen_hamilton_dataset(seed: u64, count: usize) -> RegressionData {
    gen_hamilton_dataset_with(hamilton_target(seed), seed, count)
}

pub fn gen_hamilton_dataset_with(q: Quaternion, seed: u64, count: usize) -> RegressionData {
    let mut rng = crate::rng(seed ^ 0x5eed_da7a);
    let mut xs = Vec::with_capacity(4 * count);
    let mut ys = Vec::with_capacity(4 * count);
    for _ in 0..count {
        let p = Quaternion::from_array(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
        xs.extend_from_slice(&p.to_array());
        ys.extend_from_slice(&hamilton(q, p).to_array());
    }
    RegressionData {
        inputs: Tensor::new(vec![count, 4], xs).expect("count×4"),
        targets: Tensor::new(vec![count, 4], ys).expect("count×4"),
        truth: crate::hypercomplex::hamilton_matrix(q),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeqPair {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

impl SeqPair {
    /// Teacher-forcing decoder input `[BOS, tgt…]` and expected output `[tgt…, EOS]`.
    pub fn decoder_io(&self) -> (Vec<usize>, Vec<usize>) {
        let mut input = Vec::with_capacity(self.tgt.len() + 1);
        input.push(BOS);
        input.extend_from_slice(&self.tgt);
        let mut output = self.tgt.clone();
        output.push(EOS);
        (input, output)
    }
}

/// Copy (or reverse) pairs over content tokens `3..vocab`.
pub fn gen_copy_dataset(seed: u64, vocab: usize, len: usize, count: usize, reverse: bool) -> Vec<SeqPair> {
    let mut rng = crate::rng(seed);
    (0..count).map(|_| sample_pair(&mut rng, vocab, len, reverse)).collect()
}

pub fn sample_pair(rng: &mut crate::Rng, vocab: usize, len: usize, reverse: bool) -> SeqPair {
    assert!(vocab > FIRST_CONTENT_TOKEN, "vocab {vocab} leaves no content tokens");
    let src: Vec<usize> = (0..len).map(|_| rng.gen_range(FIRST_CONTENT_TOKEN..vocab)).collect();
    SeqPair {
        tgt: copy_target(&src, reverse),
        src,
    }
}

pub fn copy_target(src: &[usize], reverse: bool) -> Vec<usize> {
    let mut tgt = src.to_vec();
    if reverse {
        tgt.reverse();
    }
    tgt
}
