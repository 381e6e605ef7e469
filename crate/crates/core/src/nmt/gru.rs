//! Gated recurrent cell with update and reset gates.
//!
//! ```text
//! z  = σ(Wz x + Uz h + bz)
//! r  = σ(Wr x + Ur h + br)
//! h~ = tanh(Wh x + Uh (r ⊙ h) + bh)
//! h' = z ⊙ h + (1 - z) ⊙ h~
//! ```
//!
//! z = 1 carries the previous state through unchanged.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use super::ops::{add_outer, random_matrix, random_vector, sigmoid};

#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub wz: Array2<f64>,
    pub wr: Array2<f64>,
    pub wh: Array2<f64>,
    pub uz: Array2<f64>,
    pub ur: Array2<f64>,
    pub uh: Array2<f64>,
    pub bz: Array1<f64>,
    pub br: Array1<f64>,
    pub bh: Array1<f64>,
}

/// Values kept from a forward step for backpropagation.
#[derive(Debug, Clone)]
pub struct GruStep {
    pub x: Array1<f64>,
    pub h_prev: Array1<f64>,
    pub z: Array1<f64>,
    pub r: Array1<f64>,
    pub cand: Array1<f64>,
    pub h: Array1<f64>,
}

impl GruCell {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruCell {
            wz: Array2::zeros((hidden, input)),
            wr: Array2::zeros((hidden, input)),
            wh: Array2::zeros((hidden, input)),
            uz: Array2::zeros((hidden, hidden)),
            ur: Array2::zeros((hidden, hidden)),
            uh: Array2::zeros((hidden, hidden)),
            bz: Array1::zeros(hidden),
            br: Array1::zeros(hidden),
            bh: Array1::zeros(hidden),
        }
    }

    pub fn random<R: Rng>(input: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        GruCell {
            wz: random_matrix(hidden, input, scale, rng),
            wr: random_matrix(hidden, input, scale, rng),
            wh: random_matrix(hidden, input, scale, rng),
            uz: random_matrix(hidden, hidden, scale, rng),
            ur: random_matrix(hidden, hidden, scale, rng),
            uh: random_matrix(hidden, hidden, scale, rng),
            bz: random_vector(hidden, scale, rng),
            br: random_vector(hidden, scale, rng),
            bh: random_vector(hidden, scale, rng),
        }
    }

    pub fn input_size(&self) -> usize {
        self.wz.ncols()
    }

    pub fn hidden_size(&self) -> usize {
        self.uz.nrows()
    }

    pub fn forward(&self, x: ArrayView1<f64>, h_prev: ArrayView1<f64>) -> GruStep {
        let z = (self.wz.dot(&x) + self.uz.dot(&h_prev) + &self.bz).mapv(sigmoid);
        let r = (self.wr.dot(&x) + self.ur.dot(&h_prev) + &self.br).mapv(sigmoid);
        let rh = &r * &h_prev;
        let cand = (self.wh.dot(&x) + self.uh.dot(&rh) + &self.bh).mapv(f64::tanh);
        let h = &z * &h_prev + &(1.0 - &z) * &cand;
        GruStep {
            x: x.to_owned(),
            h_prev: h_prev.to_owned(),
            z,
            r,
            cand,
            h,
        }
    }

    /// Accumulates parameter gradients into `grads` and returns
    /// (d input, d previous state).
    pub fn backward(
        &self,
        step: &GruStep,
        dh: ArrayView1<f64>,
        grads: &mut GruCell,
    ) -> (Array1<f64>, Array1<f64>) {
        let dz = &dh * &(&step.h_prev - &step.cand);
        let dcand = &dh * &(1.0 - &step.z);
        let mut dh_prev = &dh * &step.z;

        let da_h = dcand * &step.cand.mapv(|c| 1.0 - c * c);
        let rh = &step.r * &step.h_prev;
        add_outer(&mut grads.wh, da_h.view(), step.x.view());
        add_outer(&mut grads.uh, da_h.view(), rh.view());
        grads.bh += &da_h;
        let mut dx = self.wh.t().dot(&da_h);
        let drh = self.uh.t().dot(&da_h);
        let dr = &drh * &step.h_prev;
        dh_prev += &(&drh * &step.r);

        let da_z = dz * &step.z.mapv(|z| z * (1.0 - z));
        add_outer(&mut grads.wz, da_z.view(), step.x.view());
        add_outer(&mut grads.uz, da_z.view(), step.h_prev.view());
        grads.bz += &da_z;
        dx += &self.wz.t().dot(&da_z);
        dh_prev += &self.uz.t().dot(&da_z);

        let da_r = dr * &step.r.mapv(|r| r * (1.0 - r));
        add_outer(&mut grads.wr, da_r.view(), step.x.view());
        add_outer(&mut grads.ur, da_r.view(), step.h_prev.view());
        grads.br += &da_r;
        dx += &self.wr.t().dot(&da_r);
        dh_prev += &self.ur.t().dot(&da_r);

        (dx, dh_prev)
    }

    pub(crate) fn tensors(&self) -> [(&'static str, &[f64]); 9] {
        [
            ("wz", self.wz.as_slice().unwrap()),
            ("wr", self.wr.as_slice().unwrap()),
            ("wh", self.wh.as_slice().unwrap()),
            ("uz", self.uz.as_slice().unwrap()),
            ("ur", self.ur.as_slice().unwrap()),
            ("uh", self.uh.as_slice().unwrap()),
            ("bz", self.bz.as_slice().unwrap()),
            ("br", self.br.as_slice().unwrap()),
            ("bh", self.bh.as_slice().unwrap()),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 9] {
        [
            ("wz", self.wz.as_slice_mut().unwrap()),
            ("wr", self.wr.as_slice_mut().unwrap()),
            ("wh", self.wh.as_slice_mut().unwrap()),
            ("uz", self.uz.as_slice_mut().unwrap()),
            ("ur", self.ur.as_slice_mut().unwrap()),
            ("uh", self.uh.as_slice_mut().unwrap()),
            ("bz", self.bz.as_slice_mut().unwrap()),
            ("br", self.br.as_slice_mut().unwrap()),
            ("bh", self.bh.as_slice_mut().unwrap()),
        ]
    }
}
