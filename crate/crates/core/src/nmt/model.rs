use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gru::{GruCell, GruStep};
use super::ops::{add_outer, random_matrix, random_vector, softmax_in_place};
use crate::corpus::{SentencePair, BOS, EOS};
use crate::error::{Error, Result};
use crate::vocab::SentenceVocab;

pub const DEFAULT_INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub emb: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub attn_hidden: usize,
    pub out_hidden: usize,
    /// Number of tanh layers in g before the projection.
    pub out_layers: usize,
}

impl ModelDims {
    /// 64 everywhere, one readout layer.
    pub fn toy(src_vocab: usize, tgt_vocab: usize) -> Self {
        Self::uniform(src_vocab, tgt_vocab, 64)
    }

    pub fn uniform(src_vocab: usize, tgt_vocab: usize, d: usize) -> Self {
        ModelDims {
            src_vocab,
            tgt_vocab,
            emb: d,
            enc_hidden: d,
            dec_hidden: d,
            attn_hidden: d,
            out_hidden: d,
            out_layers: 1,
        }
    }

    pub fn context(&self) -> usize {
        2 * self.enc_hidden
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("src_vocab", self.src_vocab),
            ("tgt_vocab", self.tgt_vocab),
            ("emb", self.emb),
            ("enc_hidden", self.enc_hidden),
            ("dec_hidden", self.dec_hidden),
            ("attn_hidden", self.attn_hidden),
            ("out_hidden", self.out_hidden),
            ("out_layers", self.out_layers),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// Parameters whose gradients are always dense: encoder and decoder cells,
/// the s_0 map, the attention scorer r and the readout g.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub enc_fwd: GruCell,
    pub enc_bwd: GruCell,
    pub init_w: Array2<f64>,
    pub init_b: Array1<f64>,
    pub attn_wh: Array2<f64>,
    pub attn_ws: Array2<f64>,
    pub attn_wy: Array2<f64>,
    pub attn_b: Array1<f64>,
    pub attn_v: Array1<f64>,
    pub dec: GruCell,
    pub out_ws: Array2<f64>,
    pub out_wy: Array2<f64>,
    pub out_wc: Array2<f64>,
    pub out_b: Array1<f64>,
    /// Layers 2.. of g, each `out_hidden × out_hidden`.
    pub out_deep_w: Vec<Array2<f64>>,
    pub out_deep_b: Vec<Array1<f64>>,
}

trait Init {
    fn mat(&mut self, rows: usize, cols: usize) -> Array2<f64>;
    fn vec(&mut self, n: usize) -> Array1<f64>;
    fn cell(&mut self, input: usize, hidden: usize) -> GruCell;
}

struct Zeros;

impl Init for Zeros {
    fn mat(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        Array2::zeros((rows, cols))
    }
    fn vec(&mut self, n: usize) -> Array1<f64> {
        Array1::zeros(n)
    }
    fn cell(&mut self, input: usize, hidden: usize) -> GruCell {
        GruCell::zeros(input, hidden)
    }
}

struct Uniform<'a> {
    scale: f64,
    rng: &'a mut ChaCha8Rng,
}

impl Init for Uniform<'_> {
    fn mat(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        random_matrix(rows, cols, self.scale, self.rng)
    }
    fn vec(&mut self, n: usize) -> Array1<f64> {
        random_vector(n, self.scale, self.rng)
    }
    fn cell(&mut self, input: usize, hidden: usize) -> GruCell {
        GruCell::random(input, hidden, self.scale, self.rng)
    }
}

impl DenseParams {
    fn build(dims: &ModelDims, init: &mut impl Init) -> Self {
        let (e, h, sd, a, o) = (dims.emb, dims.enc_hidden, dims.dec_hidden, dims.attn_hidden, dims.out_hidden);
        let c = dims.context();
        let enc_fwd = init.cell(e, h);
        let enc_bwd = init.cell(e, h);
        let init_w = init.mat(sd, h);
        let init_b = init.vec(sd);
        let attn_wh = init.mat(a, c);
        let attn_ws = init.mat(a, sd);
        let attn_wy = init.mat(a, e);
        let attn_b = init.vec(a);
        let attn_v = init.vec(a);
        let dec = init.cell(e + c, sd);
        let out_ws = init.mat(o, sd);
        let out_wy = init.mat(o, e);
        let out_wc = init.mat(o, c);
        let out_b = init.vec(o);
        let mut out_deep_w = Vec::new();
        let mut out_deep_b = Vec::new();
        for _ in 1..dims.out_layers {
            out_deep_w.push(init.mat(o, o));
            out_deep_b.push(init.vec(o));
        }
        DenseParams {
            enc_fwd,
            enc_bwd,
            init_w,
            init_b,
            attn_wh,
            attn_ws,
            attn_wy,
            attn_b,
            attn_v,
            dec,
            out_ws,
            out_wy,
            out_wc,
            out_b,
            out_deep_w,
            out_deep_b,
        }
    }

    pub fn zeros(dims: &ModelDims) -> Self {
        Self::build(dims, &mut Zeros)
    }

    pub fn tensors(&self) -> Vec<(String, &[usize], &[f64])> {
        let mut out = Vec::new();
        for (prefix, cell) in [("enc_fwd", &self.enc_fwd), ("enc_bwd", &self.enc_bwd)] {
            push_cell(&mut out, prefix, cell);
        }
        push(&mut out, "init_w", &self.init_w);
        push1(&mut out, "init_b", &self.init_b);
        push(&mut out, "attn_wh", &self.attn_wh);
        push(&mut out, "attn_ws", &self.attn_ws);
        push(&mut out, "attn_wy", &self.attn_wy);
        push1(&mut out, "attn_b", &self.attn_b);
        push1(&mut out, "attn_v", &self.attn_v);
        push_cell(&mut out, "dec", &self.dec);
        push(&mut out, "out_ws", &self.out_ws);
        push(&mut out, "out_wy", &self.out_wy);
        push(&mut out, "out_wc", &self.out_wc);
        push1(&mut out, "out_b", &self.out_b);
        for (k, (w, b)) in self.out_deep_w.iter().zip(&self.out_deep_b).enumerate() {
            push(&mut out, &format!("out_w{}", k + 1), w);
            push1(&mut out, &format!("out_b{}", k + 1), b);
        }
        out
    }

    /// Same order as [`DenseParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for cell in [&mut self.enc_fwd, &mut self.enc_bwd] {
            out.extend(cell.tensors_mut().into_iter().map(|(_, t)| t));
        }
        out.push(self.init_w.as_slice_mut().unwrap());
        out.push(self.init_b.as_slice_mut().unwrap());
        out.push(self.attn_wh.as_slice_mut().unwrap());
        out.push(self.attn_ws.as_slice_mut().unwrap());
        out.push(self.attn_wy.as_slice_mut().unwrap());
        out.push(self.attn_b.as_slice_mut().unwrap());
        out.push(self.attn_v.as_slice_mut().unwrap());
        out.extend(self.dec.tensors_mut().into_iter().map(|(_, t)| t));
        out.push(self.out_ws.as_slice_mut().unwrap());
        out.push(self.out_wy.as_slice_mut().unwrap());
        out.push(self.out_wc.as_slice_mut().unwrap());
        out.push(self.out_b.as_slice_mut().unwrap());
        for (w, b) in self.out_deep_w.iter_mut().zip(self.out_deep_b.iter_mut()) {
            out.push(w.as_slice_mut().unwrap());
            out.push(b.as_slice_mut().unwrap());
        }
        out
    }

    pub fn add_assign(&mut self, other: &DenseParams) {
        let others: Vec<&[f64]> = other.tensors().into_iter().map(|(_, _, t)| t).collect();
        for (mine, theirs) in self.tensors_mut().into_iter().zip(others) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

fn push<'a>(out: &mut Vec<(String, &'a [usize], &'a [f64])>, name: &str, m: &'a Array2<f64>) {
    out.push((name.to_string(), m.shape(), m.as_slice().unwrap()));
}

fn push1<'a>(out: &mut Vec<(String, &'a [usize], &'a [f64])>, name: &str, v: &'a Array1<f64>) {
    out.push((name.to_string(), v.shape(), v.as_slice().unwrap()));
}

fn push_cell<'a>(out: &mut Vec<(String, &'a [usize], &'a [f64])>, prefix: &str, cell: &'a GruCell) {
    let shapes = [
        cell.wz.shape(),
        cell.wr.shape(),
        cell.wh.shape(),
        cell.uz.shape(),
        cell.ur.shape(),
        cell.uh.shape(),
        cell.bz.shape(),
        cell.br.shape(),
        cell.bh.shape(),
    ];
    for ((name, data), shape) in cell.tensors().into_iter().zip(shapes) {
        out.push((format!("{prefix}.{name}"), shape, data));
    }
}

/// A named, shaped view of one parameter tensor.
#[derive(Debug, Clone, Copy)]
pub struct TensorRef<'a> {
    pub shape: &'a [usize],
    pub data: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub dims: ModelDims,
    pub src_embed: Array2<f64>,
    pub tgt_embed: Array2<f64>,
    pub dense: DenseParams,
    /// W_o, one row per target id.
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
}

/// Bidirectional encoder output. `h()[i]` is `[backward_i ; forward_i]`.
#[derive(Debug, Clone)]
pub struct EncoderStates {
    h: Vec<Array1<f64>>,
    keys: Vec<Array1<f64>>,
    src: Vec<u32>,
    fwd: Vec<GruStep>,
    bwd: Vec<GruStep>,
}

impl EncoderStates {
    pub fn h(&self) -> &[Array1<f64>] {
        &self.h
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Attention {
    pub alpha: Array1<f64>,
    pub context: Array1<f64>,
    hidden: Vec<Array1<f64>>,
}

/// Decoder state after one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepState {
    pub s: Array1<f64>,
    pub alpha: Array1<f64>,
    pub context: Array1<f64>,
}

/// Deliberate corruption of the backward pass, used as a negative control
/// for gradient checking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientFault {
    #[default]
    None,
    /// Scales the gradient of the attention scores by 0.5.
    HalvedAttentionScores,
}

/// Gradient of one or more sentence losses. Embedding gradients are kept
/// per touched row; W_o/b_o gradients only for the ids of the vocabulary the
/// loss was computed over.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub dense: DenseParams,
    pub src_embed: BTreeMap<u32, Array1<f64>>,
    pub tgt_embed: BTreeMap<u32, Array1<f64>>,
    out_ids: Vec<u32>,
    /// Row k belongs to target id `out_ids()[k]`.
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
}

impl Gradients {
    pub fn new(model: &Model, vocab: &SentenceVocab) -> Self {
        let n = vocab.len();
        Gradients {
            dense: DenseParams::zeros(&model.dims),
            src_embed: BTreeMap::new(),
            tgt_embed: BTreeMap::new(),
            out_ids: vocab.ids().to_vec(),
            proj_w: Array2::zeros((n, model.dims.out_hidden)),
            proj_b: Array1::zeros(n),
        }
    }

    pub fn out_ids(&self) -> &[u32] {
        &self.out_ids
    }

    /// Adds `other`, which must cover the same output ids.
    pub fn add(&mut self, other: &Gradients) {
        assert_eq!(self.out_ids, other.out_ids, "gradients over different vocabularies");
        self.dense.add_assign(&other.dense);
        for (map, theirs) in [
            (&mut self.src_embed, &other.src_embed),
            (&mut self.tgt_embed, &other.tgt_embed),
        ] {
            for (&id, g) in theirs {
                match map.get_mut(&id) {
                    Some(mine) => *mine += g,
                    None => {
                        map.insert(id, g.clone());
                    }
                }
            }
        }
        self.proj_w += &other.proj_w;
        self.proj_b += &other.proj_b;
    }

    pub fn scale(&mut self, factor: f64) {
        self.dense.scale(factor);
        for g in self.src_embed.values_mut().chain(self.tgt_embed.values_mut()) {
            *g *= factor;
        }
        self.proj_w *= factor;
        self.proj_b *= factor;
    }

    /// Scatters into dense buffers laid out like [`Model::tensors`].
    pub fn to_dense(&self, model: &Model) -> Vec<Vec<f64>> {
        let e = model.dims.emb;
        let mut src = vec![0.0; model.src_embed.len()];
        for (&id, g) in &self.src_embed {
            let at = id as usize * e;
            src[at..at + e].copy_from_slice(g.as_slice().unwrap());
        }
        let mut tgt = vec![0.0; model.tgt_embed.len()];
        for (&id, g) in &self.tgt_embed {
            let at = id as usize * e;
            tgt[at..at + e].copy_from_slice(g.as_slice().unwrap());
        }
        let o = model.dims.out_hidden;
        let mut pw = vec![0.0; model.proj_w.len()];
        let mut pb = vec![0.0; model.proj_b.len()];
        for (k, &id) in self.out_ids.iter().enumerate() {
            let at = id as usize * o;
            pw[at..at + o].copy_from_slice(self.proj_w.row(k).as_slice().unwrap());
            pb[id as usize] = self.proj_b[k];
        }
        let mut out = vec![src, tgt];
        out.extend(self.dense.tensors().into_iter().map(|(_, _, t)| t.to_vec()));
        out.push(pw);
        out.push(pb);
        out
    }
}

struct StepCache {
    y_prev: u32,
    ey: Array1<f64>,
    s_prev: Array1<f64>,
    attention: Attention,
    gru: GruStep,
    layers: Vec<Array1<f64>>,
    probs: Vec<f64>,
    gold: usize,
}

struct Forward {
    enc: EncoderStates,
    s0: Array1<f64>,
    steps: Vec<StepCache>,
}

impl Model {
    /// Uniform init in ±0.08.
    pub fn new(dims: ModelDims, seed: u64) -> Result<Self> {
        Self::random(dims, DEFAULT_INIT_SCALE, seed)
    }

    pub fn random(dims: ModelDims, scale: f64, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src_embed = random_matrix(dims.src_vocab, dims.emb, scale, &mut rng);
        let tgt_embed = random_matrix(dims.tgt_vocab, dims.emb, scale, &mut rng);
        let dense = DenseParams::build(&dims, &mut Uniform { scale, rng: &mut rng });
        let proj_w = random_matrix(dims.tgt_vocab, dims.out_hidden, scale, &mut rng);
        let proj_b = random_vector(dims.tgt_vocab, scale, &mut rng);
        Ok(Model {
            dims,
            src_embed,
            tgt_embed,
            dense,
            proj_w,
            proj_b,
        })
    }

    pub fn zeros(dims: ModelDims) -> Result<Self> {
        Self::random(dims, 0.0, 0)
    }

    /// Every parameter tensor with its checkpoint name.
    pub fn tensors(&self) -> Vec<(String, TensorRef<'_>)> {
        let mut out = vec![
            ("src_embed".to_string(), self.src_embed.shape(), self.src_embed.as_slice().unwrap()),
            ("tgt_embed".to_string(), self.tgt_embed.shape(), self.tgt_embed.as_slice().unwrap()),
        ];
        out.extend(self.dense.tensors());
        out.push(("proj_w".to_string(), self.proj_w.shape(), self.proj_w.as_slice().unwrap()));
        out.push(("proj_b".to_string(), self.proj_b.shape(), self.proj_b.as_slice().unwrap()));
        out.into_iter()
            .map(|(n, shape, data)| (n, TensorRef { shape, data }))
            .collect()
    }

    /// Same order as [`Model::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.src_embed.as_slice_mut().unwrap(),
            self.tgt_embed.as_slice_mut().unwrap(),
        ];
        out.extend(self.dense.tensors_mut());
        out.push(self.proj_w.as_slice_mut().unwrap());
        out.push(self.proj_b.as_slice_mut().unwrap());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.data.iter().all(|v| v.is_finite()))
    }

    fn check_target(&self, id: u32) -> Result<()> {
        if (id as usize) < self.dims.tgt_vocab {
            Ok(())
        } else {
            Err(Error::IdOutOfRange {
                id,
                size: self.dims.tgt_vocab,
            })
        }
    }

    fn check_vocab(&self, vocab: &SentenceVocab) -> Result<()> {
        if !vocab.contains(EOS) {
            return Err(Error::MissingEos);
        }
        match vocab.ids().last() {
            Some(&id) => self.check_target(id),
            None => Err(Error::MissingEos),
        }
    }

    pub fn encode(&self, x: &[u32]) -> Result<EncoderStates> {
        if x.is_empty() {
            return Err(Error::InvalidArgument("empty source sentence".into()));
        }
        let mut embeds = Vec::with_capacity(x.len());
        for &id in x {
            if id as usize >= self.dims.src_vocab {
                return Err(Error::IdOutOfRange {
                    id,
                    size: self.dims.src_vocab,
                });
            }
            embeds.push(self.src_embed.row(id as usize));
        }
        let hd = self.dims.enc_hidden;
        let mut fwd: Vec<GruStep> = Vec::with_capacity(x.len());
        let mut state = Array1::zeros(hd);
        for e in &embeds {
            let step = self.dense.enc_fwd.forward(*e, state.view());
            state = step.h.clone();
            fwd.push(step);
        }
        let mut bwd: Vec<GruStep> = Vec::with_capacity(x.len());
        let mut state = Array1::zeros(hd);
        for e in embeds.iter().rev() {
            let step = self.dense.enc_bwd.forward(*e, state.view());
            state = step.h.clone();
            bwd.push(step);
        }
        bwd.reverse();
        let h: Vec<Array1<f64>> = bwd
            .iter()
            .zip(&fwd)
            .map(|(b, f)| ndarray::concatenate(Axis(0), &[b.h.view(), f.h.view()]).unwrap())
            .collect();
        let keys = h.iter().map(|hi| self.dense.attn_wh.dot(hi)).collect();
        Ok(EncoderStates {
            h,
            keys,
            src: x.to_vec(),
            fwd,
            bwd,
        })
    }

    /// s_0 = tanh(W_init · backward_1 + b_init).
    pub fn initial_state(&self, enc: &EncoderStates) -> Array1<f64> {
        let b0 = enc.h[0].slice(s![..self.dims.enc_hidden]);
        (self.dense.init_w.dot(&b0) + &self.dense.init_b).mapv(f64::tanh)
    }

    /// α_i ∝ exp(v · tanh(W_h h_i + W_s s_prev + W_y y_prev + b)).
    pub fn attend(&self, s_prev: ArrayView1<f64>, enc: &EncoderStates, y_prev_embed: ArrayView1<f64>) -> Attention {
        let d = &self.dense;
        let shared = d.attn_ws.dot(&s_prev) + d.attn_wy.dot(&y_prev_embed) + &d.attn_b;
        let hidden: Vec<Array1<f64>> = enc
            .keys
            .iter()
            .map(|k| (k + &shared).mapv(f64::tanh))
            .collect();
        let mut scores: Vec<f64> = hidden.iter().map(|u| d.attn_v.dot(u)).collect();
        softmax_in_place(&mut scores);
        let alpha = Array1::from(scores);
        let mut context = Array1::zeros(self.dims.context());
        for (a, h) in alpha.iter().zip(&enc.h) {
            context.scaled_add(*a, h);
        }
        Attention {
            alpha,
            context,
            hidden,
        }
    }

    fn dec_input(&self, ey: ArrayView1<f64>, context: ArrayView1<f64>) -> Array1<f64> {
        ndarray::concatenate(Axis(0), &[ey, context]).unwrap()
    }

    /// s_t = q(s_{t-1}, y_{t-1}, c_t).
    pub fn decode_step(&self, s_prev: ArrayView1<f64>, y_prev: u32, context: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_target(y_prev)?;
        let x = self.dec_input(self.tgt_embed.row(y_prev as usize), context);
        Ok(self.dense.dec.forward(x.view(), s_prev).h)
    }

    fn readout(&self, s: ArrayView1<f64>, ey: ArrayView1<f64>, c: ArrayView1<f64>) -> Vec<Array1<f64>> {
        let d = &self.dense;
        let first = (d.out_ws.dot(&s) + d.out_wy.dot(&ey) + d.out_wc.dot(&c) + &d.out_b).mapv(f64::tanh);
        let mut layers = vec![first];
        for (w, b) in d.out_deep_w.iter().zip(&d.out_deep_b) {
            let next = (w.dot(layers.last().unwrap()) + b).mapv(f64::tanh);
            layers.push(next);
        }
        layers
    }

    /// o_t = g(s_t, y_{t-1}, c_t).
    pub fn output_state(&self, s: ArrayView1<f64>, y_prev: u32, context: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_target(y_prev)?;
        let ey = self.tgt_embed.row(y_prev as usize);
        Ok(self.readout(s, ey, context).pop().unwrap())
    }

    /// W_o[id]·o + b_o[id] for each id, in order.
    pub fn logits(&self, o: ArrayView1<f64>, ids: &[u32]) -> Vec<f64> {
        ids.iter()
            .map(|&id| self.proj_w.row(id as usize).dot(&o) + self.proj_b[id as usize])
            .collect()
    }

    /// Softmax over the rows of W_o named by `restricted`, aligned with
    /// `restricted.ids()`.
    pub fn output_distribution(
        &self,
        s: ArrayView1<f64>,
        y_prev: u32,
        context: ArrayView1<f64>,
        restricted: &SentenceVocab,
    ) -> Result<Vec<f64>> {
        self.check_vocab(restricted)?;
        let o = self.output_state(s, y_prev, context)?;
        let mut p = self.logits(o.view(), restricted.ids());
        softmax_in_place(&mut p);
        Ok(p)
    }

    /// Softmax over all of V_y.
    pub fn full_distribution(&self, s: ArrayView1<f64>, y_prev: u32, context: ArrayView1<f64>) -> Result<Vec<f64>> {
        let o = self.output_state(s, y_prev, context)?;
        let mut p = (self.proj_w.dot(&o) + &self.proj_b).to_vec();
        softmax_in_place(&mut p);
        Ok(p)
    }

    /// One decoding step from `s_prev` after emitting `y_prev`, returning
    /// the new state and the distribution over `vocab.ids()`.
    pub fn step(
        &self,
        enc: &EncoderStates,
        s_prev: ArrayView1<f64>,
        y_prev: u32,
        vocab: &SentenceVocab,
    ) -> Result<(StepState, Vec<f64>)> {
        self.check_target(y_prev)?;
        self.check_vocab(vocab)?;
        let ey = self.tgt_embed.row(y_prev as usize);
        let att = self.attend(s_prev, enc, ey);
        let x = self.dec_input(ey, att.context.view());
        let s = self.dense.dec.forward(x.view(), s_prev).h;
        let o = self.readout(s.view(), ey, att.context.view()).pop().unwrap();
        let mut p = self.logits(o.view(), vocab.ids());
        softmax_in_place(&mut p);
        Ok((
            StepState {
                s,
                alpha: att.alpha,
                context: att.context,
            },
            p,
        ))
    }

    fn forward(&self, pair: &SentencePair, vocab: &SentenceVocab) -> Result<(f64, Forward)> {
        self.check_vocab(vocab)?;
        let enc = self.encode(&pair.source)?;
        let s0 = self.initial_state(&enc);
        let inputs = std::iter::once(BOS).chain(pair.target.iter().copied());
        let outputs = pair.target.iter().copied().chain(std::iter::once(EOS));
        let mut s = s0.clone();
        let mut loss = 0.0;
        let mut steps = Vec::with_capacity(pair.target.len() + 1);
        for (y_prev, y) in inputs.zip(outputs) {
            self.check_target(y_prev)?;
            let gold = vocab.local(y).ok_or(Error::ReferenceNotInVocab {
                pair_id: pair.pair_id,
                id: y,
            })?;
            let ey = self.tgt_embed.row(y_prev as usize).to_owned();
            let attention = self.attend(s.view(), &enc, ey.view());
            let x = self.dec_input(ey.view(), attention.context.view());
            let gru = self.dense.dec.forward(x.view(), s.view());
            let layers = self.readout(gru.h.view(), ey.view(), attention.context.view());
            let mut probs = self.logits(layers.last().unwrap().view(), vocab.ids());
            let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_z = probs.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
            loss += log_z - probs[gold];
            for p in probs.iter_mut() {
                *p = (*p - log_z).exp();
            }
            let s_prev = std::mem::replace(&mut s, gru.h.clone());
            steps.push(StepCache {
                y_prev,
                ey,
                s_prev,
                attention,
                gru,
                layers,
                probs,
                gold,
            });
        }
        Ok((loss, Forward { enc, s0, steps }))
    }

    /// Teacher-forced −log p(y | x) over `vocab`, with BOS prepended and EOS
    /// appended to the target.
    pub fn sentence_loss(&self, pair: &SentencePair, vocab: &SentenceVocab) -> Result<f64> {
        Ok(self.forward(pair, vocab)?.0)
    }

    /// As [`Model::sentence_loss`], accumulating the gradient into `grads`,
    /// which must have been created for `vocab`.
    pub fn sentence_loss_and_grad(
        &self,
        pair: &SentencePair,
        vocab: &SentenceVocab,
        grads: &mut Gradients,
        fault: GradientFault,
    ) -> Result<f64> {
        debug_assert_eq!(grads.out_ids(), vocab.ids());
        let (loss, fwd) = self.forward(pair, vocab)?;
        self.backward(&fwd, vocab, grads, fault);
        Ok(loss)
    }

    fn backward(&self, fwd: &Forward, vocab: &SentenceVocab, grads: &mut Gradients, fault: GradientFault) {
        let d = &self.dense;
        let dims = &self.dims;
        let (e_dim, hd) = (dims.emb, dims.enc_hidden);
        let l = fwd.enc.len();
        let score_factor = match fault {
            GradientFault::None => 1.0,
            GradientFault::HalvedAttentionScores => 0.5,
        };
        let g = &mut grads.dense;
        let mut ds: Array1<f64> = Array1::zeros(dims.dec_hidden);
        let mut dkeys: Vec<Array1<f64>> = vec![Array1::zeros(dims.attn_hidden); l];
        let mut dh: Vec<Array1<f64>> = vec![Array1::zeros(dims.context()); l];

        for step in fwd.steps.iter().rev() {
            // Projection over the restricted rows.
            let o = step.layers.last().unwrap();
            let mut d_o: Array1<f64> = Array1::zeros(dims.out_hidden);
            for (k, (&id, &p)) in vocab.ids().iter().zip(&step.probs).enumerate() {
                let dz = if k == step.gold { p - 1.0 } else { p };
                grads.proj_w.row_mut(k).scaled_add(dz, o);
                grads.proj_b[k] += dz;
                d_o.scaled_add(dz, &self.proj_w.row(id as usize));
            }

            // Readout g.
            for k in (1..step.layers.len()).rev() {
                let da = &d_o * &step.layers[k].mapv(|v| 1.0 - v * v);
                add_outer(&mut g.out_deep_w[k - 1], da.view(), step.layers[k - 1].view());
                g.out_deep_b[k - 1] += &da;
                d_o = d.out_deep_w[k - 1].t().dot(&da);
            }
            let da = &d_o * &step.layers[0].mapv(|v| 1.0 - v * v);
            let c = &step.attention.context;
            add_outer(&mut g.out_ws, da.view(), step.gru.h.view());
            add_outer(&mut g.out_wy, da.view(), step.ey.view());
            add_outer(&mut g.out_wc, da.view(), c.view());
            g.out_b += &da;
            ds += &d.out_ws.t().dot(&da);
            let mut dey = d.out_wy.t().dot(&da);
            let mut dc = d.out_wc.t().dot(&da);

            // Decoder cell.
            let (dx, mut ds_prev) = d.dec.backward(&step.gru, ds.view(), &mut g.dec);
            dey += &dx.slice(s![..e_dim]);
            dc += &dx.slice(s![e_dim..]);

            // Attention.
            let alpha = &step.attention.alpha;
            let dalpha: Vec<f64> = fwd.enc.h.iter().map(|h| dc.dot(h)).collect();
            for (dhi, &a) in dh.iter_mut().zip(alpha) {
                dhi.scaled_add(a, &dc);
            }
            let mean: f64 = alpha.iter().zip(&dalpha).map(|(a, g)| a * g).sum();
            let mut sum_da: Array1<f64> = Array1::zeros(dims.attn_hidden);
            for i in 0..l {
                let de = alpha[i] * (dalpha[i] - mean) * score_factor;
                if de == 0.0 {
                    continue;
                }
                let u = &step.attention.hidden[i];
                g.attn_v.scaled_add(de, u);
                let da_i = u.mapv(|v| 1.0 - v * v) * &d.attn_v * de;
                dkeys[i] += &da_i;
                sum_da += &da_i;
            }
            add_outer(&mut g.attn_ws, sum_da.view(), step.s_prev.view());
            add_outer(&mut g.attn_wy, sum_da.view(), step.ey.view());
            g.attn_b += &sum_da;
            ds_prev += &d.attn_ws.t().dot(&sum_da);
            dey += &d.attn_wy.t().dot(&sum_da);

            accumulate(&mut grads.tgt_embed, step.y_prev, dey);
            ds = ds_prev;
        }

        // s_0 map.
        let da = &ds * &fwd.s0.mapv(|v| 1.0 - v * v);
        let b0 = fwd.enc.h[0].slice(s![..hd]);
        add_outer(&mut g.init_w, da.view(), b0);
        g.init_b += &da;
        let db0 = d.init_w.t().dot(&da);
        dh[0].slice_mut(s![..hd]).scaled_add(1.0, &db0);

        // Precomputed attention keys.
        for (i, dk) in dkeys.iter().enumerate() {
            add_outer(&mut g.attn_wh, dk.view(), fwd.enc.h[i].view());
            dh[i] += &d.attn_wh.t().dot(dk);
        }

        // Encoder chains.
        let mut dex: Vec<Array1<f64>> = vec![Array1::zeros(e_dim); l];
        let mut carry: Array1<f64> = Array1::zeros(hd);
        for i in (0..l).rev() {
            let dfi = &dh[i].slice(s![hd..]) + &carry;
            let (dx, dprev) = d.enc_fwd.backward(&fwd.enc.fwd[i], dfi.view(), &mut g.enc_fwd);
            dex[i] += &dx;
            carry = dprev;
        }
        let mut carry: Array1<f64> = Array1::zeros(hd);
        for i in 0..l {
            let dbi = &dh[i].slice(s![..hd]) + &carry;
            let (dx, dprev) = d.enc_bwd.backward(&fwd.enc.bwd[i], dbi.view(), &mut g.enc_bwd);
            dex[i] += &dx;
            carry = dprev;
        }
        for (&x, gx) in fwd.enc.src.iter().zip(dex) {
            accumulate(&mut grads.src_embed, x, gx);
        }
    }
}

fn accumulate(map: &mut BTreeMap<u32, Array1<f64>>, id: u32, g: Array1<f64>) {
    match map.get_mut(&id) {
        Some(acc) => *acc += &g,
        None => {
            map.insert(id, g);
        }
    }
}
