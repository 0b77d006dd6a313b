//! Two-layer patch network.
//!
//! A shared bank of `m` filters is applied to each of the `P` patches of an
//! input, passed through ReLU and averaged over patches, giving an
//! `m`-dimensional embedding. A `C × m` read-out maps the embedding to
//! logits:
//!
//! ```text
//! h_j     = (1/P) Σ_p relu(w_j · x⁽ᵖ⁾)
//! logit_c = Σ_j a_{c,j} h_j
//! ```

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::numerics::{dot, log_sum_exp, softmax, softmax_raw, Mat64, ProbVector, Vec64};
use crate::optim::FlatParams;

/// Logits returned by [`ModelParams::forward`].
pub type Logits = Vec64;

/// An input made of `P` patches of dimension `d`, stored patch-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchInput {
    num_patches: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PatchInput {
    pub fn new(patches: Vec<Vec<f64>>) -> Result<Self> {
        let num_patches = patches.len();
        if num_patches == 0 {
            return Err(Error::Empty("patches"));
        }
        let dim = patches[0].len();
        if dim == 0 {
            return Err(Error::Empty("patch dimension"));
        }
        if patches.iter().any(|p| p.len() != dim) {
            return Err(Error::Shape("patches must share one dimension"));
        }
        Self::from_flat(num_patches, dim, patches.concat())
    }

    pub fn from_flat(num_patches: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if num_patches == 0 || dim == 0 {
            return Err(Error::Empty("patches"));
        }
        if data.len() != num_patches * dim {
            return Err(Error::LengthMismatch { left: data.len(), right: num_patches * dim });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("patch input"));
        }
        Ok(Self { num_patches, dim, data })
    }

    pub fn num_patches(&self) -> usize {
        self.num_patches
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn patch(&self, p: usize) -> &[f64] {
        &self.data[p * self.dim..(p + 1) * self.dim]
    }

    pub fn patches(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }
}

/// Network weights. Both layers live in one buffer (first layer `m × d`,
/// then read-out `C × m`, both row-major) so optimizers can treat the
/// parameters as a flat slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    width: usize,
    input_dim: usize,
    num_classes: usize,
    data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(width: usize, input_dim: usize, num_classes: usize) -> Self {
        Self { width, input_dim, num_classes, data: vec![0.0; width * input_dim + num_classes * width] }
    }

    pub fn from_layers(first_layer: Mat64, second_layer: Mat64) -> Result<Self> {
        if second_layer.cols() != first_layer.rows() {
            return Err(Error::Shape("second layer columns must equal first layer rows"));
        }
        if first_layer.rows() == 0 || first_layer.cols() == 0 || second_layer.rows() == 0 {
            return Err(Error::Empty("model layer"));
        }
        let mut data = first_layer.as_slice().to_vec();
        data.extend_from_slice(second_layer.as_slice());
        Ok(Self {
            width: first_layer.rows(),
            input_dim: first_layer.cols(),
            num_classes: second_layer.rows(),
            data,
        })
    }

    /// Gaussian initialization: filters `N(0, init_std²)`, read-out `N(0, 1/m)`.
    pub fn init<R: rand::Rng + ?Sized>(
        width: usize,
        input_dim: usize,
        num_classes: usize,
        init_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if width == 0 || input_dim == 0 || num_classes == 0 {
            return Err(Error::Empty("model dimensions"));
        }
        if !(init_std >= 0.0 && init_std.is_finite()) {
            return Err(invalid("init_std", "must be finite and non-negative"));
        }
        let mut params = Self::zeros(width, input_dim, num_classes);
        let split = width * input_dim;
        let readout_std = libm::sqrt(1.0 / width as f64);
        let first = Normal::new(0.0, init_std).map_err(|_| invalid("init_std", "bad std"))?;
        let second = Normal::new(0.0, readout_std).map_err(|_| invalid("width", "bad std"))?;
        for v in &mut params.data[..split] {
            *v = first.sample(rng);
        }
        for v in &mut params.data[split..] {
            *v = second.sample(rng);
        }
        Ok(params)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn filter(&self, j: usize) -> &[f64] {
        &self.data[j * self.input_dim..(j + 1) * self.input_dim]
    }

    fn readout(&self) -> &[f64] {
        &self.data[self.width * self.input_dim..]
    }

    pub fn first_layer(&self) -> Mat64 {
        Mat64::new(self.width, self.input_dim, self.data[..self.width * self.input_dim].to_vec())
            .expect("consistent shape")
    }

    pub fn second_layer(&self) -> Mat64 {
        Mat64::new(self.num_classes, self.width, self.readout().to_vec()).expect("consistent shape")
    }

    /// Multiplies every read-out weight by `factor`.
    pub fn scale_second_layer(&mut self, factor: f64) {
        let split = self.width * self.input_dim;
        for v in &mut self.data[split..] {
            *v *= factor;
        }
    }

    fn check_input(&self, x: &PatchInput) -> Result<()> {
        if x.dim != self.input_dim {
            return Err(Error::LengthMismatch { left: x.dim, right: self.input_dim });
        }
        Ok(())
    }

    /// Patch-averaged ReLU features, one per filter.
    pub fn embed(&self, x: &PatchInput) -> Result<Vec64> {
        self.check_input(x)?;
        Ok(Vec64::from_raw(self.hidden(x)))
    }

    fn hidden(&self, x: &PatchInput) -> Vec<f64> {
        let inv_p = 1.0 / x.num_patches as f64;
        (0..self.width)
            .map(|j| {
                let w = self.filter(j);
                x.patches().map(|patch| dot(w, patch).max(0.0)).sum::<f64>() * inv_p
            })
            .collect()
    }

    fn logits_from_hidden(&self, h: &[f64]) -> Vec<f64> {
        self.readout().chunks_exact(self.width).map(|a| dot(a, h)).collect()
    }

    pub fn forward(&self, x: &PatchInput) -> Result<Logits> {
        self.check_input(x)?;
        Ok(Vec64::from_raw(self.logits_from_hidden(&self.hidden(x))))
    }

    pub fn predict_proba(&self, x: &PatchInput) -> Result<ProbVector> {
        softmax(&self.forward(x)?)
    }

    /// Argmax of the predicted distribution, ties to the lowest index.
    pub fn predicted_class(&self, x: &PatchInput) -> Result<usize> {
        Ok(self.predict_proba(x)?.argmax())
    }

    /// Mean cross-entropy over the batch without gradients.
    pub fn loss(&self, batch: &[(&PatchInput, usize)]) -> Result<f64> {
        self.check_batch(batch)?;
        let total: f64 = batch
            .iter()
            .map(|(x, y)| {
                let z = self.logits_from_hidden(&self.hidden(x));
                log_sum_exp(&z) - z[*y]
            })
            .sum();
        Ok(total / batch.len() as f64)
    }

    fn check_batch(&self, batch: &[(&PatchInput, usize)]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        for (x, y) in batch {
            self.check_input(x)?;
            if *y >= self.num_classes {
                return Err(Error::LabelOutOfRange { label: *y, classes: self.num_classes });
            }
        }
        Ok(())
    }

    /// Mean cross-entropy over the batch and its exact gradient.
    pub fn loss_and_grad(&self, batch: &[(&PatchInput, usize)]) -> Result<(f64, ModelParams)> {
        self.check_batch(batch)?;
        let (m, d, c) = (self.width, self.input_dim, self.num_classes);
        let split = m * d;
        let mut grad = ModelParams::zeros(m, d, c);
        let inv_b = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        let mut pre = vec![0.0; m * batch.first().map_or(1, |(x, _)| x.num_patches)];

        for (x, y) in batch {
            let p_count = x.num_patches;
            let inv_p = 1.0 / p_count as f64;
            pre.resize(m * p_count, 0.0);
            let mut h = vec![0.0; m];
            for j in 0..m {
                let w = self.filter(j);
                let mut acc = 0.0;
                for (p, patch) in x.patches().enumerate() {
                    let z = dot(w, patch);
                    pre[j * p_count + p] = z;
                    acc += z.max(0.0);
                }
                h[j] = acc * inv_p;
            }
            let logits = self.logits_from_hidden(&h);
            total += log_sum_exp(&logits) - logits[*y];

            // dL/dlogit = (softmax − onehot) / B
            let mut g = softmax_raw(&logits);
            g[*y] -= 1.0;
            for v in &mut g {
                *v *= inv_b;
            }

            let (g_first, g_second) = grad.data.split_at_mut(split);
            for (ci, gc) in g.iter().enumerate() {
                let row = &mut g_second[ci * m..(ci + 1) * m];
                for (r, hj) in row.iter_mut().zip(&h) {
                    *r += gc * hj;
                }
            }
            let readout = self.readout();
            for j in 0..m {
                let dh: f64 = g.iter().enumerate().map(|(ci, gc)| gc * readout[ci * m + j]).sum();
                if dh == 0.0 {
                    continue;
                }
                let scale = dh * inv_p;
                let gw = &mut g_first[j * d..(j + 1) * d];
                for (p, patch) in x.patches().enumerate() {
                    if pre[j * p_count + p] > 0.0 {
                        for (gi, xi) in gw.iter_mut().zip(patch) {
                            *gi += scale * xi;
                        }
                    }
                }
            }
        }
        Ok((total * inv_b, grad))
    }
}

impl FlatParams for ModelParams {
    fn as_flat(&self) -> &[f64] {
        &self.data
    }

    fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width
            && self.input_dim == other.input_dim
            && self.num_classes == other.num_classes
    }
}

/// Draws a fresh Gaussian vector. Shared by tests and data generation.
pub(crate) fn gaussian_vec<R: rand::Rng + ?Sized>(len: usize, std: f64, rng: &mut R) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let z: f64 = rand_distr::StandardNormal.sample(rng);
            std * z
        })
        .collect()
}
