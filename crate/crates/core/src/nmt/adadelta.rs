//! AdaDelta with per-row updates for embeddings and the output projection.
//!
//! ```text
//! E[g²]  ← ρ E[g²] + (1-ρ) g²
//! Δ      = -sqrt(E[Δ²] + ε) / sqrt(E[g²] + ε) · g
//! E[Δ²]  ← ρ E[Δ²] + (1-ρ) Δ²
//! ```
//!
//! A row of W_o, b_o or an embedding is touched only when it appears in the
//! gradient; untouched rows keep both their values and their accumulators.

use super::model::{Gradients, Model};

pub const DEFAULT_RHO: f64 = 0.95;
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct AdaDelta {
    pub rho: f64,
    pub epsilon: f64,
    /// Accumulators in [`Model::tensors`] order.
    g2: Vec<Vec<f64>>,
    dx2: Vec<Vec<f64>>,
}

const SRC_EMBED: usize = 0;
const TGT_EMBED: usize = 1;

impl AdaDelta {
    pub fn new(model: &Model, rho: f64, epsilon: f64) -> Self {
        let sizes: Vec<usize> = model.tensors().iter().map(|(_, t)| t.data.len()).collect();
        AdaDelta {
            rho,
            epsilon,
            g2: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            dx2: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    #[inline]
    fn update(&self, param: &mut [f64], grad: &[f64], g2: &mut [f64], dx2: &mut [f64]) {
        let (rho, eps) = (self.rho, self.epsilon);
        for (((p, &g), a), b) in param.iter_mut().zip(grad).zip(g2.iter_mut()).zip(dx2.iter_mut()) {
            *a = rho * *a + (1.0 - rho) * g * g;
            let delta = -((*b + eps).sqrt() / (*a + eps).sqrt()) * g;
            *b = rho * *b + (1.0 - rho) * delta * delta;
            *p += delta;
        }
    }

    /// Applies one update. With `update_embeddings` false the embedding
    /// matrices and their accumulators are left untouched.
    pub fn step(&mut self, model: &mut Model, grads: &Gradients, update_embeddings: bool) {
        let e = model.dims.emb;
        let o = model.dims.out_hidden;
        let n = self.g2.len();
        let mut g2 = std::mem::take(&mut self.g2);
        let mut dx2 = std::mem::take(&mut self.dx2);

        if update_embeddings {
            for (t, rows) in [(SRC_EMBED, &grads.src_embed), (TGT_EMBED, &grads.tgt_embed)] {
                let mut params = model.tensors_mut();
                let param = &mut params[t];
                for (&id, g) in rows {
                    let r = id as usize * e..(id as usize + 1) * e;
                    self.update(&mut param[r.clone()], g.as_slice().unwrap(), &mut g2[t][r.clone()], &mut dx2[t][r]);
                }
            }
        }

        let dense: Vec<&[f64]> = grads.dense.tensors().into_iter().map(|(_, _, g)| g).collect();
        {
            let mut params = model.tensors_mut();
            for (k, g) in dense.iter().enumerate() {
                let t = TGT_EMBED + 1 + k;
                self.update(params[t], g, &mut g2[t], &mut dx2[t]);
            }
            let (pw, pb) = (n - 2, n - 1);
            for (k, &id) in grads.out_ids().iter().enumerate() {
                let id = id as usize;
                let r = id * o..(id + 1) * o;
                let row = grads.proj_w.row(k);
                self.update(&mut params[pw][r.clone()], row.as_slice().unwrap(), &mut g2[pw][r.clone()], &mut dx2[pw][r]);
                let gb = [grads.proj_b[k]];
                self.update(&mut params[pb][id..id + 1], &gb, &mut g2[pb][id..id + 1], &mut dx2[pb][id..id + 1]);
            }
        }
        self.g2 = g2;
        self.dx2 = dx2;
    }
}
