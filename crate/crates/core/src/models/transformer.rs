//! Encoder-decoder Transformer with PHM projections and feed-forward blocks.
//!
//! Batches are stacked row-wise: a batch of `B` sequences of length `T` is a
//! `(B·T)×d` matrix. Position-wise layers run on the whole stack at once;
//! attention runs per sequence. Sublayers use post-norm residuals,
//! `x ← LN(x + sublayer(x))`.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::container::{read_json, write_json, NamedArrays};
use crate::error::{dim_err, PhmError, Result};
use crate::graph::{Graph, Var};
use crate::models::{dropout, LayerNorm};
use crate::phm::{check_divisible, phm_param_count, PhmParams};
use crate::tensor::{Param, Tensor};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub d: usize,
    pub d_ff: usize,
    pub heads: usize,
    /// Shared by every PHM sublayer.
    pub n: usize,
    pub vocab: usize,
    pub max_len: usize,
    #[serde(default)]
    pub dropout: f64,
}

impl ModelConfig {
    /// 2 layers, `d = 64`, `d_ff = 256`, 4 heads.
    pub fn toy(n: usize) -> Self {
        Self {
            layers: 2,
            d: 64,
            d_ff: 256,
            heads: 4,
            n,
            vocab: 16,
            max_len: 32,
            dropout: 0.0,
        }
    }

    /// 4 layers, `d = 512`, `d_ff = 2048`, 8 heads.
    pub fn full_scale(n: usize) -> Self {
        Self {
            layers: 4,
            d: 512,
            d_ff: 2048,
            heads: 8,
            n,
            vocab: 32000,
            max_len: 256,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ModelConfig { layers, d, d_ff, heads, n, vocab, max_len, dropout } = *self;
        if layers == 0 || max_len == 0 {
            return dim_err("layers and max_len must be positive");
        }
        if heads == 0 || d % heads != 0 {
            return dim_err(format!("d={d} is not divisible by {heads} heads"));
        }
        check_divisible(n, d, 3 * d)?;
        check_divisible(n, d, 2 * d)?;
        check_divisible(n, d, d_ff)?;
        if vocab < 3 {
            return dim_err(format!("vocab {vocab} leaves no room for pad/bos/eos"));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(PhmError::Contract(format!("dropout {dropout} outside [0, 1)")));
        }
        Ok(())
    }

    /// Closed-form count of everything except embeddings and the output
    /// projection.
    pub fn non_embedding_params(&self) -> Result<usize> {
        let ModelConfig { d, d_ff, n, .. } = *self;
        let pc = |din, dout| phm_param_count(n, din, dout, true);
        let attn = pc(d, 3 * d)? + pc(d, d)?;
        let cross = pc(d, d)? + pc(d, 2 * d)? + pc(d, d)?;
        let ffn = pc(d, d_ff)? + pc(d_ff, d)?;
        let enc = attn + ffn + 2 * 2 * d;
        let dec = attn + cross + ffn + 3 * 2 * d;
        Ok(self.layers * (enc + dec))
    }
}

fn phm(n: usize, d: usize, k: usize, rng: &mut crate::Rng) -> Result<PhmParams> {
    PhmParams::random(n, d, k, true, rng)
}

/// Scaled dot-product attention of one sequence. `q` is `T×d`, `k` and `v`
/// are `S×d`; heads are contiguous column blocks of width `d / heads`.
fn attend(g: &mut Graph, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Result<Var> {
    let d = g.shape(q)[1];
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dk, dk)?,
                g.slice_cols(k, h * dk, dk)?,
                g.slice_cols(v, h * dk, dk)?,
            )
        };
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale)?;
        let weights = if causal {
            g.softmax_causal(scores)?
        } else {
            g.softmax(scores)?
        };
        outs.push(g.matmul(weights, vh)?);
    }
    if heads == 1 {
        Ok(outs[0])
    } else {
        g.concat_cols(&outs)
    }
}

fn per_sequence(
    g: &mut Graph,
    batch: usize,
    (q, t_len): (Var, usize),
    (k, v, s_len): (Var, Var, usize),
    heads: usize,
    causal: bool,
) -> Result<Var> {
    if batch == 1 {
        return attend(g, q, k, v, heads, causal);
    }
    let mut outs = Vec::with_capacity(batch);
    for b in 0..batch {
        let qb = g.slice_rows(q, b * t_len, t_len)?;
        let kb = g.slice_rows(k, b * s_len, s_len)?;
        let vb = g.slice_rows(v, b * s_len, s_len)?;
        outs.push(attend(g, qb, kb, vb, heads, causal)?);
    }
    g.concat_rows(&outs)
}

/// Self-attention: one PHM produces stacked `[Q K V]`, split three ways.
#[derive(Clone, Debug)]
pub struct PhmAttention {
    pub qkv: PhmParams,
    pub out: PhmParams,
    pub heads: usize,
}

impl PhmAttention {
    pub fn new(n: usize, d: usize, heads: usize, rng: &mut crate::Rng) -> Result<Self> {
        Self::from_parts(phm(n, d, 3 * d, rng)?, phm(n, d, d, rng)?, heads)
    }

    pub fn from_parts(qkv: PhmParams, out: PhmParams, heads: usize) -> Result<Self> {
        let d = qkv.d();
        if qkv.k() != 3 * d || out.d() != d || out.k() != d {
            return dim_err(format!(
                "attention projections {}→{} and {}→{} for width {d}",
                qkv.d(),
                qkv.k(),
                out.d(),
                out.k()
            ));
        }
        if heads == 0 || !d.is_multiple_of(heads) {
            return dim_err(format!("d={d} is not divisible by {heads} heads"));
        }
        Ok(Self { qkv, out, heads })
    }

    pub fn d(&self) -> usize {
        self.qkv.d()
    }

    fn qkv(&self, g: &mut Graph, x: Var) -> Result<(Var, Var, Var)> {
        if g.value(x).rows_cols().1 != self.d() {
            return dim_err(format!("attention input width {:?}, expected {}", g.shape(x), self.d()));
        }
        let stacked = self.qkv.forward(g, x)?;
        let parts = g.split_lastdim(stacked, 3)?;
        Ok((parts[0], parts[1], parts[2]))
    }

    /// `softmax(QKᵀ/√d) V` for one `length×d` sequence, no output projection.
    pub fn single_head(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (q, k, v) = self.qkv(g, x)?;
        attend(g, q, k, v, 1, false)
    }

    /// Multi-head attention over one `length×d` sequence.
    pub fn multihead(&self, g: &mut Graph, x: Var, causal: bool) -> Result<Var> {
        let len = g.shape(x)[0];
        self.forward(g, x, 1, len, causal)
    }

    /// Multi-head attention over `batch` stacked sequences of length `len`.
    pub fn forward(&self, g: &mut Graph, x: Var, batch: usize, len: usize, causal: bool) -> Result<Var> {
        let (q, k, v) = self.qkv(g, x)?;
        let heads = per_sequence(g, batch, (q, len), (k, v, len), self.heads, causal)?;
        self.out.forward(g, heads)
    }

    pub fn parameters(&self) -> Vec<Param> {
        let mut out = self.qkv.parameters();
        out.extend(self.out.parameters());
        out
    }

    pub fn num_params(&self) -> usize {
        self.qkv.num_params() + self.out.num_params()
    }

    fn named(&self, prefix: &str, out: &mut Vec<(String, Param)>) {
        named_phm(&format!("{prefix}qkv."), &self.qkv, out);
        named_phm(&format!("{prefix}out."), &self.out, out);
    }
}

/// Decoder-to-encoder attention: queries from one PHM, stacked `[K V]` from
/// another.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub q: PhmParams,
    pub kv: PhmParams,
    pub out: PhmParams,
    pub heads: usize,
}

impl CrossAttention {
    pub fn new(n: usize, d: usize, heads: usize, rng: &mut crate::Rng) -> Result<Self> {
        Ok(Self {
            q: phm(n, d, d, rng)?,
            kv: phm(n, d, 2 * d, rng)?,
            out: phm(n, d, d, rng)?,
            heads,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        memory: Var,
        batch: usize,
        (t_len, s_len): (usize, usize),
    ) -> Result<Var> {
        let q = self.q.forward(g, x)?;
        let kv = self.kv.forward(g, memory)?;
        let parts = g.split_lastdim(kv, 2)?;
        let heads = per_sequence(g, batch, (q, t_len), (parts[0], parts[1], s_len), self.heads, false)?;
        self.out.forward(g, heads)
    }

    pub fn parameters(&self) -> Vec<Param> {
        let mut out = self.q.parameters();
        out.extend(self.kv.parameters());
        out.extend(self.out.parameters());
        out
    }

    fn named(&self, prefix: &str, out: &mut Vec<(String, Param)>) {
        named_phm(&format!("{prefix}q."), &self.q, out);
        named_phm(&format!("{prefix}kv."), &self.kv, out);
        named_phm(&format!("{prefix}out."), &self.out, out);
    }
}

/// `PHM₂(ReLU(PHM₁(x)))`.
#[derive(Clone, Debug)]
pub struct PhmFfn {
    pub inner: PhmParams,
    pub outer: PhmParams,
}

impl PhmFfn {
    pub fn new(n: usize, d: usize, d_ff: usize, rng: &mut crate::Rng) -> Result<Self> {
        Self::from_parts(phm(n, d, d_ff, rng)?, phm(n, d_ff, d, rng)?)
    }

    pub fn from_parts(inner: PhmParams, outer: PhmParams) -> Result<Self> {
        if inner.k() != outer.d() || outer.k() != inner.d() {
            return dim_err(format!(
                "feed-forward {}→{} then {}→{}",
                inner.d(),
                inner.k(),
                outer.d(),
                outer.k()
            ));
        }
        Ok(Self { inner, outer })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.inner.forward(g, x)?;
        let h = g.relu(h)?;
        self.outer.forward(g, h)
    }

    pub fn parameters(&self) -> Vec<Param> {
        let mut out = self.inner.parameters();
        out.extend(self.outer.parameters());
        out
    }

    pub fn num_params(&self) -> usize {
        self.inner.num_params() + self.outer.num_params()
    }

    fn named(&self, prefix: &str, out: &mut Vec<(String, Param)>) {
        named_phm(&format!("{prefix}inner."), &self.inner, out);
        named_phm(&format!("{prefix}outer."), &self.outer, out);
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn: PhmAttention,
    pub ffn: PhmFfn,
    pub ln1: LayerNorm,
    pub ln2: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attn: PhmAttention,
    pub cross: CrossAttention,
    pub ffn: PhmFfn,
    pub ln1: LayerNorm,
    pub ln2: LayerNorm,
    pub ln3: LayerNorm,
}

/// Model-level checkpoint manifest, stored next to the array container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub config: ModelConfig,
    pub keys: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct PhmTransformer {
    config: ModelConfig,
    src_embed: Param,
    tgt_embed: Param,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    out_proj: Param,
    out_bias: Param,
    positions: Tensor,
}

/// Sinusoidal encodings, `max_len×d`.
pub fn sinusoidal_positions(max_len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; max_len * d];
    for pos in 0..max_len {
        for i in 0..d {
            let freq = 10000f64.powf(-((i / 2 * 2) as f64) / d as f64);
            let angle = pos as f64 * freq;
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![max_len, d], data).expect("max_len×d")
}

fn uniform(shape: &[usize], bound: f64, rng: &mut crate::Rng) -> Tensor {
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

fn named_phm(prefix: &str, p: &PhmParams, out: &mut Vec<(String, Param)>) {
    out.push((format!("{prefix}rule"), p.rule().clone()));
    out.push((format!("{prefix}weights"), p.weights().clone()));
    if let Some(b) = p.bias() {
        out.push((format!("{prefix}bias"), b.clone()));
    }
}

fn named_ln(prefix: &str, ln: &LayerNorm, out: &mut Vec<(String, Param)>) {
    out.push((format!("{prefix}gamma"), ln.gamma.clone()));
    out.push((format!("{prefix}beta"), ln.beta.clone()));
}

fn check_batch(seqs: &[Vec<usize>], config: &ModelConfig) -> Result<usize> {
    let Some(first) = seqs.first() else {
        return dim_err("empty batch");
    };
    let len = first.len();
    if len == 0 || seqs.iter().any(|s| s.len() != len) {
        return dim_err("sequences in a batch must share one non-zero length");
    }
    if len > config.max_len {
        return Err(PhmError::Contract(format!(
            "sequence length {len} exceeds max length {}",
            config.max_len
        )));
    }
    if let Some(&bad) = seqs.iter().flatten().find(|&&t| t >= config.vocab) {
        return Err(PhmError::Contract(format!("token {bad} >= vocab {}", config.vocab)));
    }
    Ok(len)
}

impl PhmTransformer {
    pub fn new(config: ModelConfig, rng: &mut crate::Rng) -> Result<Self> {
        config.validate()?;
        let ModelConfig { layers, d, d_ff, heads, n, vocab, max_len, .. } = config;
        let embed_bound = (3.0 / d as f64).sqrt();
        let src_embed = Param::new(uniform(&[vocab, d], embed_bound, rng));
        let tgt_embed = Param::new(uniform(&[vocab, d], embed_bound, rng));
        let mut encoder = Vec::with_capacity(layers);
        for _ in 0..layers {
            encoder.push(EncoderLayer {
                attn: PhmAttention::new(n, d, heads, rng)?,
                ffn: PhmFfn::new(n, d, d_ff, rng)?,
                ln1: LayerNorm::new(d),
                ln2: LayerNorm::new(d),
            });
        }
        let mut decoder = Vec::with_capacity(layers);
        for _ in 0..layers {
            decoder.push(DecoderLayer {
                self_attn: PhmAttention::new(n, d, heads, rng)?,
                cross: CrossAttention::new(n, d, heads, rng)?,
                ffn: PhmFfn::new(n, d, d_ff, rng)?,
                ln1: LayerNorm::new(d),
                ln2: LayerNorm::new(d),
                ln3: LayerNorm::new(d),
            });
        }
        let out_bound = (6.0 / (d + vocab) as f64).sqrt();
        Ok(Self {
            src_embed,
            tgt_embed,
            encoder,
            decoder,
            out_proj: Param::new(uniform(&[d, vocab], out_bound, rng)),
            out_bias: Param::new(Tensor::zeros(&[vocab])),
            positions: sinusoidal_positions(max_len, d),
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &[EncoderLayer] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[DecoderLayer] {
        &self.decoder
    }

    /// Every learnable tensor with a stable dotted name.
    pub fn named_parameters(&self) -> Vec<(String, Param)> {
        let mut out = vec![
            ("src_embed".to_owned(), self.src_embed.clone()),
            ("tgt_embed".to_owned(), self.tgt_embed.clone()),
        ];
        for (l, layer) in self.encoder.iter().enumerate() {
            let p = format!("enc.{l}.");
            layer.attn.named(&format!("{p}attn."), &mut out);
            layer.ffn.named(&format!("{p}ffn."), &mut out);
            named_ln(&format!("{p}ln1."), &layer.ln1, &mut out);
            named_ln(&format!("{p}ln2."), &layer.ln2, &mut out);
        }
        for (l, layer) in self.decoder.iter().enumerate() {
            let p = format!("dec.{l}.");
            layer.self_attn.named(&format!("{p}self_attn."), &mut out);
            layer.cross.named(&format!("{p}cross."), &mut out);
            layer.ffn.named(&format!("{p}ffn."), &mut out);
            named_ln(&format!("{p}ln1."), &layer.ln1, &mut out);
            named_ln(&format!("{p}ln2."), &layer.ln2, &mut out);
            named_ln(&format!("{p}ln3."), &layer.ln3, &mut out);
        }
        out.push(("out_proj".to_owned(), self.out_proj.clone()));
        out.push(("out_bias".to_owned(), self.out_bias.clone()));
        out
    }

    pub fn parameters(&self) -> Vec<Param> {
        self.named_parameters().into_iter().map(|(_, p)| p).collect()
    }

    pub fn is_embedding_name(name: &str) -> bool {
        matches!(name, "src_embed" | "tgt_embed" | "out_proj" | "out_bias")
    }

    /// Enumerated count of non-embedding scalars.
    pub fn non_embedding_params(&self) -> usize {
        self.named_parameters()
            .iter()
            .filter(|(name, _)| !Self::is_embedding_name(name))
            .map(|(_, p)| p.numel())
            .sum()
    }

    fn embed(&self, g: &mut Graph, table: &Param, seqs: &[Vec<usize>]) -> Result<(Var, usize)> {
        let len = check_batch(seqs, &self.config)?;
        let d = self.config.d;
        let ids: Vec<usize> = seqs.iter().flatten().copied().collect();
        let t = g.param(table);
        let e = g.gather(t, &ids)?;
        let e = g.scale(e, (d as f64).sqrt())?;
        let pos = &self.positions.data()[..len * d];
        let tiled = pos.iter().copied().cycle().take(ids.len() * d).collect();
        let pos = g.constant(Tensor::new(vec![ids.len(), d], tiled)?);
        Ok((g.add(e, pos)?, len))
    }

    fn residual(
        &self,
        g: &mut Graph,
        x: Var,
        sub: Var,
        ln: &LayerNorm,
        rng: &mut Option<&mut crate::Rng>,
    ) -> Result<Var> {
        let sub = dropout(g, sub, self.config.dropout, rng)?;
        let sum = g.add(x, sub)?;
        ln.forward(g, sum)
    }

    /// Encoder output, `(B·S)×d`, plus the source length.
    pub fn encode(
        &self,
        g: &mut Graph,
        src: &[Vec<usize>],
        mut rng: Option<&mut crate::Rng>,
    ) -> Result<(Var, usize)> {
        let (mut x, len) = self.embed(g, &self.src_embed, src)?;
        let batch = src.len();
        for layer in &self.encoder {
            let a = layer.attn.forward(g, x, batch, len, false)?;
            x = self.residual(g, x, a, &layer.ln1, &mut rng)?;
            let f = layer.ffn.forward(g, x)?;
            x = self.residual(g, x, f, &layer.ln2, &mut rng)?;
        }
        Ok((x, len))
    }

    /// Logits `(B·T)×vocab` for decoder inputs `tgt` given encoder memory.
    pub fn decode(
        &self,
        g: &mut Graph,
        (memory, s_len): (Var, usize),
        tgt: &[Vec<usize>],
        mut rng: Option<&mut crate::Rng>,
    ) -> Result<Var> {
        let (mut x, t_len) = self.embed(g, &self.tgt_embed, tgt)?;
        let batch = tgt.len();
        if g.shape(memory)[0] != batch * s_len {
            return dim_err("memory and target batch sizes differ");
        }
        for layer in &self.decoder {
            let a = layer.self_attn.forward(g, x, batch, t_len, true)?;
            x = self.residual(g, x, a, &layer.ln1, &mut rng)?;
            let c = layer.cross.forward(g, x, memory, batch, (t_len, s_len))?;
            x = self.residual(g, x, c, &layer.ln2, &mut rng)?;
            let f = layer.ffn.forward(g, x)?;
            x = self.residual(g, x, f, &layer.ln3, &mut rng)?;
        }
        let w = g.param(&self.out_proj);
        let b = g.param(&self.out_bias);
        let logits = g.matmul(x, w)?;
        g.add_bias(logits, b)
    }

    /// Teacher-forced logits, `(B·T)×vocab`. `rng` enables dropout.
    pub fn forward(
        &self,
        g: &mut Graph,
        src: &[Vec<usize>],
        tgt: &[Vec<usize>],
        mut rng: Option<&mut crate::Rng>,
    ) -> Result<Var> {
        if src.len() != tgt.len() {
            return dim_err(format!("{} sources for {} targets", src.len(), tgt.len()));
        }
        let memory = self.encode(g, src, rng.as_deref_mut())?;
        self.decode(g, memory, tgt, rng)
    }

    /// Greedy decoding from `BOS` for `steps` tokens per sequence; each output
    /// is cut after its first `EOS`.
    pub fn greedy_decode(&self, src: &[Vec<usize>], steps: usize) -> Result<Vec<Vec<usize>>> {
        let mut g = Graph::new();
        let memory = self.encode(&mut g, src, None)?;
        let vocab = self.config.vocab;
        let mut prefix: Vec<Vec<usize>> = vec![vec![BOS]; src.len()];
        for _ in 0..steps {
            if prefix[0].len() > self.config.max_len {
                break;
            }
            let logits = self.decode(&mut g, memory, &prefix, None)?;
            let t_len = prefix[0].len();
            let lv = g.value(logits).data();
            for (b, seq) in prefix.iter_mut().enumerate() {
                let row = &lv[((b + 1) * t_len - 1) * vocab..(b + 1) * t_len * vocab];
                seq.push(argmax(row));
            }
        }
        Ok(prefix
            .into_iter()
            .map(|mut seq| {
                seq.remove(0);
                if let Some(end) = seq.iter().position(|&t| t == EOS) {
                    seq.truncate(end + 1);
                }
                seq
            })
            .collect())
    }

    /// Writes `{stem}.bin` (arrays) and `{stem}.json` (manifest).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let named = self.named_parameters();
        let mut arrays = NamedArrays::new();
        let keys = named.iter().map(|(k, _)| k.clone()).collect();
        arrays.extend(named.into_iter().map(|(k, p)| (k, p.snapshot())));
        arrays.write(&stem.with_extension("bin"))?;
        write_json(
            &stem.with_extension("json"),
            &ModelManifest {
                config: self.config.clone(),
                keys,
            },
        )
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let manifest: ModelManifest = read_json(&stem.with_extension("json"))?;
        let arrays = NamedArrays::read(&stem.with_extension("bin"))?;
        let model = Self::new(manifest.config, &mut crate::rng(0))?;
        let named = model.named_parameters();
        if named.len() != manifest.keys.len() || named.iter().zip(&manifest.keys).any(|((a, _), b)| a != b) {
            return Err(PhmError::Format("manifest keys do not match the model layout".into()));
        }
        for (name, p) in &named {
            let t = arrays
                .get(name)
                .ok_or_else(|| PhmError::Format(format!("missing array {name}")))?;
            if t.shape() != p.shape() {
                return Err(PhmError::Format(format!("array {name} has shape {:?}", t.shape())));
            }
            p.set_data(t.data())?;
        }
        Ok(model)
    }
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}
