//! Edge-to-node convolutional classifier for `R x R` connectivity matrices.
//!
//! ```text
//! X (R×R) ─ColumnFeatureConv→ Y1 (R×c1) ─tanh→ ─RowFeatureConv→ Y2 (c2×c1)
//!   ─tanh→ flatten (c2·c1) ─dense+tanh→ H ─dense→ 2 logits
//! ```
//!
//! ColumnFeatureConv is a `1 x R` kernel per output channel that spans a whole
//! row, so each node's edge profile becomes a `c1`-vector of node features.
//! RowFeatureConv is an `R x 1` kernel per output channel that spans all nodes,
//! collapsing node features into a `c2 x c1` global representation. Neither
//! kernel slides: the kernel width equals the input width, leaving one valid
//! position.

use serde::{Deserialize, Serialize};

use crate::dfc::Label;
use crate::error::{Error, Result};
use crate::nn::{gemm_nn, gemm_nt, gemm_tn, softmax, DenseMatrix, ParamTensor, Parameters, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierShape {
    pub regions: usize,
    pub c1: usize,
    pub c2: usize,
    pub hidden: usize,
}

impl ClassifierShape {
    pub fn latent_dim(&self) -> usize {
        self.c1 * self.c2
    }

    pub fn validate(&self) -> Result<()> {
        if self.regions == 0 || self.c1 == 0 || self.c2 == 0 || self.hidden == 0 {
            return Err(Error::invalid(format!(
                "classifier dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvClassifierParams {
    shape: ClassifierShape,
    /// `c1 x R`, one row per output channel.
    pub w1: ParamTensor,
    pub b1: ParamTensor,
    /// `c2 x R`, one row per output channel.
    pub w2: ParamTensor,
    pub b2: ParamTensor,
    /// `(c1·c2) x H`.
    pub mlp_w1: ParamTensor,
    pub mlp_b1: ParamTensor,
    /// `H x 2`.
    pub mlp_w2: ParamTensor,
    pub mlp_b2: ParamTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierOutput {
    pub logits: [f64; 2],
    /// Flattened `tanh(Y2)`, row-major over `(c2, c1)`.
    pub latent: Vec<f64>,
}

impl ClassifierOutput {
    pub fn probabilities(&self) -> [f64; 2] {
        let p = softmax(&self.logits);
        [p[0], p[1]]
    }

    /// Argmax of the logits; exactly equal logits resolve to control.
    pub fn predicted(&self) -> Label {
        if self.logits[1] > self.logits[0] {
            Label::Disease
        } else {
            Label::Control
        }
    }
}

/// Activations kept from the forward pass for the backward pass.
struct Cache {
    a1: DenseMatrix,
    latent: DenseMatrix,
    hidden: DenseMatrix,
}

/// `Y1[i, m] = Σ_n X[i, n]·W1[m, n] + b1[m]`.
pub fn column_feature_conv(x: &DenseMatrix, w1: &DenseMatrix, b1: &DenseMatrix) -> Result<DenseMatrix> {
    let (r, rc) = x.shape();
    if r != rc || w1.cols() != r || b1.shape() != (1, w1.rows()) {
        return Err(Error::invalid(format!(
            "column_feature_conv: X {:?}, W1 {:?}, b1 {:?}",
            x.shape(),
            w1.shape(),
            b1.shape()
        )));
    }
    let mut y1 = broadcast_rows(b1, r);
    gemm_nt(x, w1, &mut y1);
    Ok(y1)
}

/// `Y2[m, j] = Σ_n tanh(Y1[n, j])·W2[m, n] + b2[m]`.
pub fn row_feature_conv(y1: &DenseMatrix, w2: &DenseMatrix, b2: &DenseMatrix) -> Result<DenseMatrix> {
    if w2.cols() != y1.rows() || b2.shape() != (1, w2.rows()) {
        return Err(Error::invalid(format!(
            "row_feature_conv: Y1 {:?}, W2 {:?}, b2 {:?}",
            y1.shape(),
            w2.shape(),
            b2.shape()
        )));
    }
    Ok(row_conv_activated(&y1.map(f64::tanh), w2, b2))
}

fn row_conv_activated(a1: &DenseMatrix, w2: &DenseMatrix, b2: &DenseMatrix) -> DenseMatrix {
    let c1 = a1.cols();
    let mut y2 = DenseMatrix::zeros(w2.rows(), c1);
    for m in 0..w2.rows() {
        y2.row_mut(m).fill(b2.as_slice()[m]);
    }
    gemm_nn(w2, a1, &mut y2);
    y2
}

fn broadcast_rows(bias: &DenseMatrix, rows: usize) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(rows, bias.cols());
    for i in 0..rows {
        out.row_mut(i).copy_from_slice(bias.as_slice());
    }
    out
}

/// `-log softmax(logits)[label]`, stabilised by max-subtraction.
pub fn cross_entropy(logits: &[f64; 2], label: Label) -> f64 {
    let max = logits[0].max(logits[1]);
    let lse = max + ((logits[0] - max).exp() + (logits[1] - max).exp()).ln();
    lse - logits[label.index()]
}

/// Mean cross-entropy over a batch.
pub fn batch_cross_entropy(batch: &[([f64; 2], Label)]) -> f64 {
    batch.iter().map(|(z, y)| cross_entropy(z, *y)).sum::<f64>() / batch.len() as f64
}

impl ConvClassifierParams {
    /// Glorot-uniform weights and zero biases.
    pub fn init(shape: ClassifierShape, rng: &mut Rng) -> Result<Self> {
        shape.validate()?;
        let ClassifierShape {
            regions,
            c1,
            c2,
            hidden,
        } = shape;
        Ok(Self {
            shape,
            w1: ParamTensor::glorot("w1", rng, c1, regions)?,
            b1: ParamTensor::zeros("b1", 1, c1),
            w2: ParamTensor::glorot("w2", rng, c2, regions)?,
            b2: ParamTensor::zeros("b2", 1, c2),
            mlp_w1: ParamTensor::glorot("mlp_w1", rng, c1 * c2, hidden)?,
            mlp_b1: ParamTensor::zeros("mlp_b1", 1, hidden),
            mlp_w2: ParamTensor::glorot("mlp_w2", rng, hidden, 2)?,
            mlp_b2: ParamTensor::zeros("mlp_b2", 1, 2),
        })
    }

    pub fn zeros(shape: ClassifierShape) -> Result<Self> {
        shape.validate()?;
        let ClassifierShape {
            regions,
            c1,
            c2,
            hidden,
        } = shape;
        Ok(Self {
            shape,
            w1: ParamTensor::zeros("w1", c1, regions),
            b1: ParamTensor::zeros("b1", 1, c1),
            w2: ParamTensor::zeros("w2", c2, regions),
            b2: ParamTensor::zeros("b2", 1, c2),
            mlp_w1: ParamTensor::zeros("mlp_w1", c1 * c2, hidden),
            mlp_b1: ParamTensor::zeros("mlp_b1", 1, hidden),
            mlp_w2: ParamTensor::zeros("mlp_w2", hidden, 2),
            mlp_b2: ParamTensor::zeros("mlp_b2", 1, 2),
        })
    }

    /// Rebuilds parameters from raw values, validating every shape.
    pub fn from_values(shape: ClassifierShape, values: [DenseMatrix; 8]) -> Result<Self> {
        let mut p = Self::zeros(shape)?;
        for (param, value) in p.params_mut().into_iter().zip(values) {
            if param.shape() != value.shape() {
                return Err(Error::invalid(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    param.name(),
                    value.shape(),
                    param.shape()
                )));
            }
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "parameter `{}` has non-finite values",
                    param.name()
                )));
            }
            param.value = value;
        }
        Ok(p)
    }

    pub fn shape(&self) -> ClassifierShape {
        self.shape
    }

    fn check_input(&self, x: &DenseMatrix) -> Result<()> {
        let r = self.shape.regions;
        if x.shape() != (r, r) {
            return Err(Error::invalid(format!(
                "classifier expects a {r}x{r} matrix, got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    fn forward_cached(&self, x: &DenseMatrix) -> ([f64; 2], Cache) {
        let mut y1 = broadcast_rows(&self.b1.value, self.shape.regions);
        gemm_nt(x, &self.w1.value, &mut y1);
        let a1 = y1.map(f64::tanh);
        let latent = row_conv_activated(&a1, &self.w2.value, &self.b2.value).map(f64::tanh);
        let flat = DenseMatrix::row_vector(latent.as_slice().to_vec());

        let mut hidden = self.mlp_b1.value.clone();
        gemm_nn(&flat, &self.mlp_w1.value, &mut hidden);
        let hidden = hidden.map(f64::tanh);
        let mut out = self.mlp_b2.value.clone();
        gemm_nn(&hidden, &self.mlp_w2.value, &mut out);
        let logits = [out.as_slice()[0], out.as_slice()[1]];
        (logits, Cache { a1, latent, hidden })
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<ClassifierOutput> {
        self.check_input(x)?;
        let (logits, cache) = self.forward_cached(x);
        Ok(ClassifierOutput {
            logits,
            latent: cache.latent.into_vec(),
        })
    }

    /// Accumulates `scale · ∂loss/∂θ` into the parameter gradients, where
    /// `dlogits` is `∂loss/∂logits`. Returns `scale · ∂loss/∂X` when requested.
    fn backward(
        &mut self,
        x: &DenseMatrix,
        cache: &Cache,
        dlogits: [f64; 2],
        scale: f64,
        want_input_grad: bool,
    ) -> Option<DenseMatrix> {
        let ClassifierShape {
            regions,
            c1,
            c2,
            hidden,
        } = self.shape;
        let dz = DenseMatrix::row_vector(vec![dlogits[0] * scale, dlogits[1] * scale]);

        // logits = hidden · mlp_w2 + mlp_b2
        gemm_tn(&cache.hidden, &dz, &mut self.mlp_w2.grad);
        self.mlp_b2.grad.add_scaled(&dz, 1.0);
        let mut dh = DenseMatrix::zeros(1, hidden);
        gemm_nt(&dz, &self.mlp_w2.value, &mut dh);

        // hidden = tanh(flat · mlp_w1 + mlp_b1)
        for (g, h) in dh.as_mut_slice().iter_mut().zip(cache.hidden.as_slice()) {
            *g *= 1.0 - h * h;
        }
        let flat = DenseMatrix::row_vector(cache.latent.as_slice().to_vec());
        gemm_tn(&flat, &dh, &mut self.mlp_w1.grad);
        self.mlp_b1.grad.add_scaled(&dh, 1.0);
        let mut dflat = DenseMatrix::zeros(1, c1 * c2);
        gemm_nt(&dh, &self.mlp_w1.value, &mut dflat);

        // latent = tanh(W2 · A1 + b2)
        let mut dy2 = DenseMatrix::from_vec(c2, c1, dflat.into_vec()).expect("latent shape");
        for (g, l) in dy2.as_mut_slice().iter_mut().zip(cache.latent.as_slice()) {
            *g *= 1.0 - l * l;
        }
        gemm_nt(&dy2, &cache.a1, &mut self.w2.grad);
        for m in 0..c2 {
            self.b2.grad.as_mut_slice()[m] += dy2.row(m).iter().sum::<f64>();
        }
        let mut da1 = DenseMatrix::zeros(regions, c1);
        gemm_tn(&self.w2.value, &dy2, &mut da1);

        // A1 = tanh(X · W1ᵀ + b1)
        for (g, a) in da1.as_mut_slice().iter_mut().zip(cache.a1.as_slice()) {
            *g *= 1.0 - a * a;
        }
        gemm_tn(&da1, x, &mut self.w1.grad);
        for i in 0..regions {
            for (b, g) in self.b1.grad.as_mut_slice().iter_mut().zip(da1.row(i)) {
                *b += g;
            }
        }

        want_input_grad.then(|| {
            let mut dx = DenseMatrix::zeros(regions, regions);
            gemm_nn(&da1, &self.w1.value, &mut dx);
            dx
        })
    }

    /// Forward plus backward for one sample: adds `scale · ∂CE/∂θ` to the
    /// gradients and returns the unscaled loss and logits.
    pub fn accumulate_loss_grad(&mut self, x: &DenseMatrix, label: Label, scale: f64) -> Result<(f64, [f64; 2])> {
        self.check_input(x)?;
        let (logits, cache) = self.forward_cached(x);
        let loss = cross_entropy(&logits, label);
        self.backward(x, &cache, ce_grad(&logits, label), scale, false);
        Ok((loss, logits))
    }

    /// Like [`accumulate_loss_grad`](Self::accumulate_loss_grad) but also
    /// returns `scale · ∂CE/∂X` for chaining into an upstream generator.
    pub fn accumulate_loss_grad_with_input(
        &mut self,
        x: &DenseMatrix,
        label: Label,
        scale: f64,
    ) -> Result<(f64, [f64; 2], DenseMatrix)> {
        self.check_input(x)?;
        let (logits, cache) = self.forward_cached(x);
        let loss = cross_entropy(&logits, label);
        let dx = self
            .backward(x, &cache, ce_grad(&logits, label), scale, true)
            .expect("input gradient requested");
        Ok((loss, logits, dx))
    }
}

/// `∂CE/∂logits = softmax(logits) − onehot(label)`.
fn ce_grad(logits: &[f64; 2], label: Label) -> [f64; 2] {
    let p = softmax(logits);
    let mut g = [p[0], p[1]];
    g[label.index()] -= 1.0;
    g
}

impl Parameters for ConvClassifierParams {
    fn params(&self) -> Vec<&ParamTensor> {
        vec![
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.mlp_w1,
            &self.mlp_b1,
            &self.mlp_w2,
            &self.mlp_b2,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.mlp_w1,
            &mut self.mlp_b1,
            &mut self.mlp_w2,
            &mut self.mlp_b2,
        ]
    }
}
