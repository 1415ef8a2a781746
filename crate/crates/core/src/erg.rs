//! Enhanced representation generator.
//!
//! Per target subject:
//!
//! 1. The conversion engine keeps the larger pseudo-label set (the disease set
//!    wins ties) and average-pools it into one reconstruction matrix.
//! 2. Its strict upper triangle is vectorised (`R(R−1)/2` values, row-major).
//! 3. An encoder `D → H → D` (tanh, tanh) produces a code of the same length,
//!    which is devectorised into the optimisation matrix that is classified.
//!    A decoder `D → H → D` (tanh, linear) maps the code back to the input.
//!
//! [`joint_train`] fits encoder, decoder and classifier together on
//! `CE + λ_cos·(1 − cos(v, z)) + λ_rec·MSE(decode(z), v)`, the generator with
//! its own learning rate.

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierOutput, ConvClassifierParams};
use crate::dfc::Label;
use crate::error::{Error, Result};
use crate::nn::{dot, gemm_nn, gemm_nt, gemm_tn, DenseMatrix, ParamTensor, Parameters, Rng};
use crate::training::{batches, TrainConfig};
use crate::transfer::PseudoLabeledDfcSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChosenSet {
    Normal,
    Disease,
}

impl ChosenSet {
    pub fn as_str(self) -> &'static str {
        match self {
            ChosenSet::Normal => "normal",
            ChosenSet::Disease => "disease",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionFc {
    pub subject_id: String,
    pub true_label: Label,
    pub matrix: DenseMatrix,
    pub chosen_set: ChosenSet,
    /// `(N1, N2)`: disease-set size, normal-set size.
    pub set_sizes: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationFc {
    pub subject_id: String,
    pub matrix: DenseMatrix,
}

/// Entry-wise mean of equally shaped square matrices, diagonal reset to 1.
pub fn average_pool(matrices: &[DenseMatrix]) -> Result<DenseMatrix> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::invalid("cannot average an empty set"))?;
    let (r, c) = first.shape();
    if r != c || matrices.iter().any(|m| m.shape() != (r, c)) {
        return Err(Error::invalid("average_pool needs equally shaped square matrices"));
    }
    let mut sum = DenseMatrix::zeros(r, c);
    for m in matrices {
        sum.add_scaled(m, 1.0);
    }
    let n = matrices.len() as f64;
    let mut mean = sum.map(|v| v / n);
    for i in 0..r {
        mean[(i, i)] = 1.0;
    }
    Ok(mean)
}

/// Keeps the disease set when `N1 ≥ N2`, the normal set otherwise, and
/// average-pools it.
pub fn conversion_engine(pl: &PseudoLabeledDfcSet) -> Result<ReconstructionFc> {
    let n1 = pl.disease_set.len();
    let n2 = pl.normal_set.len();
    if n1 + n2 == 0 {
        return Err(Error::invalid(format!("subject {} has no windows", pl.subject_id)));
    }
    let (chosen_set, set) = if n1 >= n2 {
        (ChosenSet::Disease, &pl.disease_set)
    } else {
        (ChosenSet::Normal, &pl.normal_set)
    };
    Ok(ReconstructionFc {
        subject_id: pl.subject_id.clone(),
        true_label: pl.true_label,
        matrix: average_pool(set)?,
        chosen_set,
        set_sizes: (n1, n2),
    })
}

/// Strict upper triangle of an `R x R` matrix in `(i, j > i)` row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperTriVector {
    values: Vec<f64>,
}

impl UpperTriVector {
    /// Fails unless the length is `R(R−1)/2` for some `R ≥ 2`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        regions_for_len(values.len())?;
        Ok(Self { values })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn regions(&self) -> usize {
        regions_for_len(self.values.len()).expect("validated at construction")
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

pub fn upper_len(regions: usize) -> usize {
    regions * regions.saturating_sub(1) / 2
}

fn regions_for_len(len: usize) -> Result<usize> {
    let r = ((1.0 + (1.0 + 8.0 * len as f64).sqrt()) / 2.0).round() as usize;
    if r < 2 || upper_len(r) != len {
        return Err(Error::invalid(format!("{len} is not a strict upper-triangle length")));
    }
    Ok(r)
}

pub fn vectorize_upper(fc: &DenseMatrix) -> Result<UpperTriVector> {
    let (r, c) = fc.shape();
    if r != c || r < 2 {
        return Err(Error::invalid(format!(
            "vectorize_upper needs a square matrix, got {r}x{c}"
        )));
    }
    if !fc.is_symmetric(1e-9) {
        return Err(Error::invalid("vectorize_upper needs a symmetric matrix"));
    }
    let mut values = Vec::with_capacity(upper_len(r));
    for i in 0..r {
        values.extend_from_slice(&fc.row(i)[i + 1..]);
    }
    Ok(UpperTriVector { values })
}

/// Fills the strict upper triangle, mirrors it and sets the diagonal to 1.
pub fn devectorize(v: &UpperTriVector) -> DenseMatrix {
    let r = v.regions();
    let mut m = DenseMatrix::identity(r);
    let mut k = 0;
    for i in 0..r {
        for j in i + 1..r {
            m[(i, j)] = v.values[k];
            m[(j, i)] = v.values[k];
            k += 1;
        }
    }
    m
}

/// Cosine similarity, or `None` when either vector has zero norm.
pub fn cosine_similarity(x1: &[f64], x2: &[f64]) -> Option<f64> {
    let n1 = dot(x1, x1).sqrt();
    let n2 = dot(x2, x2).sqrt();
    (n1 > 0.0 && n2 > 0.0).then(|| dot(x1, x2) / (n1 * n2))
}

/// Target of a cosine embedding pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Similarity {
    /// `y = +1`: pull the pair together.
    Similar,
    /// `y = −1`.
    Dissimilar,
}

/// `1 − cos` for similar pairs, `max(0, cos + 1)` for dissimilar ones. A
/// zero-norm vector has cosine 0.
pub fn cosine_embedding_loss(x1: &[f64], x2: &[f64], y: Similarity) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(Error::invalid(format!(
            "cosine_embedding_loss: lengths {} and {} differ",
            x1.len(),
            x2.len()
        )));
    }
    let cos = cosine_similarity(x1, x2).unwrap_or(0.0);
    Ok(match y {
        Similarity::Similar => 1.0 - cos,
        Similarity::Dissimilar => (cos + 1.0).max(0.0),
    })
}

/// Encoder and decoder weights. `D = R(R−1)/2`, `H` the bottleneck width.
#[derive(Debug, Clone, PartialEq)]
pub struct AeParams {
    dim: usize,
    hidden: usize,
    pub enc_w1: ParamTensor,
    pub enc_b1: ParamTensor,
    pub enc_w2: ParamTensor,
    pub enc_b2: ParamTensor,
    pub dec_w1: ParamTensor,
    pub dec_b1: ParamTensor,
    pub dec_w2: ParamTensor,
    pub dec_b2: ParamTensor,
}

struct EncoderCache {
    hidden: DenseMatrix,
    code: DenseMatrix,
}

struct DecoderCache {
    hidden: DenseMatrix,
    output: DenseMatrix,
}

impl AeParams {
    pub fn init(regions: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let dim = upper_len(regions);
        if dim == 0 || hidden == 0 {
            return Err(Error::invalid(format!(
                "autoencoder needs R >= 2 and H >= 1, got R={regions}, H={hidden}"
            )));
        }
        Ok(Self {
            dim,
            hidden,
            enc_w1: ParamTensor::glorot("enc_w1", rng, dim, hidden)?,
            enc_b1: ParamTensor::zeros("enc_b1", 1, hidden),
            enc_w2: ParamTensor::glorot("enc_w2", rng, hidden, dim)?,
            enc_b2: ParamTensor::zeros("enc_b2", 1, dim),
            dec_w1: ParamTensor::glorot("dec_w1", rng, dim, hidden)?,
            dec_b1: ParamTensor::zeros("dec_b1", 1, hidden),
            dec_w2: ParamTensor::glorot("dec_w2", rng, hidden, dim)?,
            dec_b2: ParamTensor::zeros("dec_b2", 1, dim),
        })
    }

    pub fn zeros(regions: usize, hidden: usize) -> Result<Self> {
        let mut p = Self::init(regions, hidden, &mut Rng::new(0))?;
        p.params_mut().into_iter().for_each(|t| t.value.fill(0.0));
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn regions(&self) -> usize {
        regions_for_len(self.dim).expect("dim is an upper-triangle length")
    }

    fn check_len(&self, v: &UpperTriVector) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::invalid(format!(
                "autoencoder expects length {}, got {}",
                self.dim,
                v.len()
            )));
        }
        Ok(())
    }

    fn encode_cached(&self, v: &[f64]) -> EncoderCache {
        let input = DenseMatrix::row_vector(v.to_vec());
        let mut hidden = self.enc_b1.value.clone();
        gemm_nn(&input, &self.enc_w1.value, &mut hidden);
        let hidden = hidden.map(f64::tanh);
        let mut code = self.enc_b2.value.clone();
        gemm_nn(&hidden, &self.enc_w2.value, &mut code);
        EncoderCache {
            hidden,
            code: code.map(f64::tanh),
        }
    }

    fn decode_cached(&self, code: &DenseMatrix) -> DecoderCache {
        let mut hidden = self.dec_b1.value.clone();
        gemm_nn(code, &self.dec_w1.value, &mut hidden);
        let hidden = hidden.map(f64::tanh);
        let mut output = self.dec_b2.value.clone();
        gemm_nn(&hidden, &self.dec_w2.value, &mut output);
        DecoderCache { hidden, output }
    }

    /// `z = tanh(tanh(v·W1 + b1)·W2 + b2)`.
    pub fn encode(&self, v: &UpperTriVector) -> Result<UpperTriVector> {
        self.check_len(v)?;
        Ok(UpperTriVector {
            values: self.encode_cached(&v.values).code.into_vec(),
        })
    }

    /// `x′ = tanh(z·W1 + b1)·W2 + b2`.
    pub fn decode(&self, z: &UpperTriVector) -> Result<UpperTriVector> {
        self.check_len(z)?;
        let code = DenseMatrix::row_vector(z.values.clone());
        Ok(UpperTriVector {
            values: self.decode_cached(&code).output.into_vec(),
        })
    }

    pub fn optimization_fc(&self, recon: &ReconstructionFc) -> Result<OptimizationFc> {
        let z = self.encode(&vectorize_upper(&recon.matrix)?)?;
        Ok(OptimizationFc {
            subject_id: recon.subject_id.clone(),
            matrix: devectorize(&z),
        })
    }
}

impl Parameters for AeParams {
    fn params(&self) -> Vec<&ParamTensor> {
        vec![
            &self.enc_w1,
            &self.enc_b1,
            &self.enc_w2,
            &self.enc_b2,
            &self.dec_w1,
            &self.dec_b1,
            &self.dec_w2,
            &self.dec_b2,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![
            &mut self.enc_w1,
            &mut self.enc_b1,
            &mut self.enc_w2,
            &mut self.enc_b2,
            &mut self.dec_w1,
            &mut self.dec_b1,
            &mut self.dec_w2,
            &mut self.dec_b2,
        ]
    }
}

/// Relative weights of the generator losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub cosine: f64,
    pub reconstruction: f64,
}

/// Per-sample loss decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointLoss {
    pub total: f64,
    pub cross_entropy: f64,
    pub cosine: f64,
    pub reconstruction: f64,
    /// The input or the code had zero norm, so the cosine was taken as 0.
    pub zero_norm: bool,
}

/// Generator and classifier trained as one network.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    pub ae: AeParams,
    pub clf: ConvClassifierParams,
}

impl JointModel {
    pub fn new(ae: AeParams, clf: ConvClassifierParams) -> Result<Self> {
        if ae.regions() != clf.shape().regions {
            return Err(Error::invalid(format!(
                "autoencoder is for R={}, classifier for R={}",
                ae.regions(),
                clf.shape().regions
            )));
        }
        Ok(Self { ae, clf })
    }

    /// Classifies the optimisation matrix generated from `v`.
    pub fn forward(&self, v: &UpperTriVector) -> Result<ClassifierOutput> {
        let z = self.ae.encode(v)?;
        self.clf.forward(&devectorize(&z))
    }

    /// Forward and backward for one subject, accumulating `scale · ∂loss/∂θ`.
    pub fn accumulate_loss_grad(
        &mut self,
        v: &UpperTriVector,
        label: Label,
        weights: LossWeights,
        scale: f64,
    ) -> Result<JointLoss> {
        self.ae.check_len(v)?;
        let dim = self.ae.dim;
        let enc = self.ae.encode_cached(&v.values);
        let code = UpperTriVector {
            values: enc.code.as_slice().to_vec(),
        };

        let (ce, _, dx) = self
            .clf
            .accumulate_loss_grad_with_input(&devectorize(&code), label, scale)?;

        // Each code entry sits at (i, j) and (j, i) of the classified matrix.
        let r = self.ae.regions();
        let mut dz = DenseMatrix::zeros(1, dim);
        {
            let dz = dz.as_mut_slice();
            let mut k = 0;
            for i in 0..r {
                for j in i + 1..r {
                    dz[k] = dx[(i, j)] + dx[(j, i)];
                    k += 1;
                }
            }
        }

        let z = enc.code.as_slice();
        let cos_undefined = cosine_similarity(&v.values, z).is_none();
        let cos_loss = match cosine_similarity(&v.values, z) {
            Some(cos) => {
                if weights.cosine != 0.0 {
                    let nv = dot(&v.values, &v.values).sqrt();
                    let nz = dot(z, z).sqrt();
                    let c = weights.cosine * scale;
                    for ((g, &vi), &zi) in dz.as_mut_slice().iter_mut().zip(&v.values).zip(z) {
                        *g -= c * (vi / (nv * nz) - cos * zi / (nz * nz));
                    }
                }
                1.0 - cos
            }
            None => 1.0,
        };

        let dec = self.ae.decode_cached(&enc.code);
        let rec_loss = dec
            .output
            .as_slice()
            .iter()
            .zip(&v.values)
            .map(|(x, t)| (x - t).powi(2))
            .sum::<f64>()
            / dim as f64;
        if weights.reconstruction != 0.0 {
            let c = weights.reconstruction * scale * 2.0 / dim as f64;
            let dout: Vec<f64> = dec
                .output
                .as_slice()
                .iter()
                .zip(&v.values)
                .map(|(x, t)| c * (x - t))
                .collect();
            let dout = DenseMatrix::row_vector(dout);
            gemm_tn(&dec.hidden, &dout, &mut self.ae.dec_w2.grad);
            self.ae.dec_b2.grad.add_scaled(&dout, 1.0);
            let mut dh = DenseMatrix::zeros(1, self.ae.hidden);
            gemm_nt(&dout, &self.ae.dec_w2.value, &mut dh);
            for (g, h) in dh.as_mut_slice().iter_mut().zip(dec.hidden.as_slice()) {
                *g *= 1.0 - h * h;
            }
            gemm_tn(&enc.code, &dh, &mut self.ae.dec_w1.grad);
            self.ae.dec_b1.grad.add_scaled(&dh, 1.0);
            gemm_nt(&dh, &self.ae.dec_w1.value, &mut dz);
        }

        // z = tanh(h·W2 + b2), h = tanh(v·W1 + b1)
        for (g, zi) in dz.as_mut_slice().iter_mut().zip(z) {
            *g *= 1.0 - zi * zi;
        }
        gemm_tn(&enc.hidden, &dz, &mut self.ae.enc_w2.grad);
        self.ae.enc_b2.grad.add_scaled(&dz, 1.0);
        let mut dh = DenseMatrix::zeros(1, self.ae.hidden);
        gemm_nt(&dz, &self.ae.enc_w2.value, &mut dh);
        for (g, h) in dh.as_mut_slice().iter_mut().zip(enc.hidden.as_slice()) {
            *g *= 1.0 - h * h;
        }
        let input = DenseMatrix::row_vector(v.values.clone());
        gemm_tn(&input, &dh, &mut self.ae.enc_w1.grad);
        self.ae.enc_b1.grad.add_scaled(&dh, 1.0);

        Ok(JointLoss {
            total: ce + weights.cosine * cos_loss + weights.reconstruction * rec_loss,
            cross_entropy: ce,
            cosine: cos_loss,
            reconstruction: rec_loss,
            zero_norm: cos_undefined,
        })
    }
}

impl Parameters for JointModel {
    fn params(&self) -> Vec<&ParamTensor> {
        let mut p = self.ae.params();
        p.extend(self.clf.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut p = self.ae.params_mut();
        p.extend(self.clf.params_mut());
        p
    }
}

/// Mean per-epoch losses over the training set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointTrace {
    pub epochs: Vec<JointLoss>,
    /// Sample evaluations whose cosine term was undefined.
    pub zero_norm_events: usize,
}

/// Trains generator and classifier jointly on one matrix per subject.
pub fn joint_train(
    recon_fcs: &[ReconstructionFc],
    ae: AeParams,
    clf: ConvClassifierParams,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(AeParams, ConvClassifierParams, JointTrace)> {
    cfg.validate()?;
    for class in [Label::Control, Label::Disease] {
        let n = recon_fcs.iter().filter(|r| r.true_label == class).count();
        if n < 2 {
            return Err(Error::invalid(format!(
                "joint training needs at least 2 subjects per class, class {} has {n}",
                class.index()
            )));
        }
    }
    let inputs: Vec<UpperTriVector> = recon_fcs
        .iter()
        .map(|r| vectorize_upper(&r.matrix))
        .collect::<Result<_>>()?;
    let mut model = JointModel::new(ae, clf)?;
    let weights = LossWeights {
        cosine: cfg.lambda_cos,
        reconstruction: cfg.lambda_rec,
    };
    let gen_adam = cfg.generator_adam();
    let clf_adam = cfg.classifier_adam();

    let mut trace = JointTrace::default();
    for _ in 0..cfg.epochs {
        let mut sum = JointLoss::default();
        for batch in batches(inputs.len(), cfg.batch_size, rng) {
            model.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &i in &batch {
                let l = model.accumulate_loss_grad(&inputs[i], recon_fcs[i].true_label, weights, scale)?;
                sum.total += l.total;
                sum.cross_entropy += l.cross_entropy;
                sum.cosine += l.cosine;
                sum.reconstruction += l.reconstruction;
                trace.zero_norm_events += usize::from(l.zero_norm);
            }
            model.ae.adam_step(&gen_adam)?;
            model.clf.adam_step(&clf_adam)?;
        }
        let n = inputs.len() as f64;
        let mean = JointLoss {
            total: sum.total / n,
            cross_entropy: sum.cross_entropy / n,
            cosine: sum.cosine / n,
            reconstruction: sum.reconstruction / n,
            zero_norm: false,
        };
        if !mean.total.is_finite() {
            return Err(Error::Numeric("joint training loss diverged".into()));
        }
        trace.epochs.push(mean);
    }
    Ok((model.ae, model.clf, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ClassifierShape;
    use crate::nn::grad_check;

    fn random_symmetric(rng: &mut Rng, r: usize) -> DenseMatrix {
        let mut m = DenseMatrix::identity(r);
        for i in 0..r {
            for j in i + 1..r {
                let v = rng.uniform(-1.0, 1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    fn pl_set(n_disease: usize, n_normal: usize, rng: &mut Rng) -> PseudoLabeledDfcSet {
        PseudoLabeledDfcSet {
            subject_id: "s".into(),
            true_label: Label::Disease,
            normal_set: (0..n_normal).map(|_| random_symmetric(rng, 4)).collect(),
            disease_set: (0..n_disease).map(|_| random_symmetric(rng, 4)).collect(),
        }
    }

    #[test]
    fn conversion_picks_majority_and_ties_to_disease() {
        let mut rng = Rng::new(0);
        let pl = pl_set(5, 3, &mut rng);
        let out = conversion_engine(&pl).unwrap();
        assert_eq!(out.chosen_set, ChosenSet::Disease);
        assert_eq!(out.set_sizes, (5, 3));
        assert_eq!(out.matrix, average_pool(&pl.disease_set).unwrap());

        let tie = conversion_engine(&pl_set(4, 4, &mut rng)).unwrap();
        assert_eq!(tie.chosen_set, ChosenSet::Disease);

        let normal = conversion_engine(&pl_set(1, 6, &mut rng)).unwrap();
        assert_eq!(normal.chosen_set, ChosenSet::Normal);
    }

    #[test]
    fn conversion_of_single_matrix_is_identity() {
        let mut rng = Rng::new(1);
        let pl = pl_set(0, 1, &mut rng);
        assert_eq!(conversion_engine(&pl).unwrap().matrix, pl.normal_set[0]);
        assert!(conversion_engine(&pl_set(0, 0, &mut rng)).is_err());
    }

    #[test]
    fn vectorize_small_example() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 0.1, 0.2], vec![0.1, 1.0, 0.3], vec![0.2, 0.3, 1.0]]).unwrap();
        let v = vectorize_upper(&m).unwrap();
        assert_eq!(v.as_slice(), &[0.1, 0.2, 0.3]);
        assert_eq!(devectorize(&v), m);
        assert_eq!(upper_len(116), 6670);
    }

    #[test]
    fn vectorize_rejects_asymmetric_and_bad_lengths() {
        let mut m = DenseMatrix::identity(3);
        m[(0, 1)] = 0.5;
        assert!(vectorize_upper(&m).is_err());
        assert!(UpperTriVector::new(vec![0.0; 4]).is_err());
        assert!(UpperTriVector::new(vec![0.0; 6]).is_ok());
    }

    #[test]
    fn cosine_loss_identities() {
        let x = [0.3, -1.2, 2.0];
        assert!(cosine_embedding_loss(&x, &x, Similarity::Similar).unwrap().abs() < 1e-12);
        let y = [1.2, 0.3, 0.0];
        assert!((cosine_embedding_loss(&x[..2], &y[..2], Similarity::Similar).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_embedding_loss(&x, &x, Similarity::Dissimilar).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(cosine_embedding_loss(&x, &[0.0; 3], Similarity::Similar).unwrap(), 1.0);
        assert!(cosine_embedding_loss(&x, &y[..2], Similarity::Similar).is_err());
    }

    #[test]
    fn zero_autoencoder_outputs_zero() {
        let ae = AeParams::zeros(5, 7).unwrap();
        let v = UpperTriVector::new((0..10).map(|i| i as f64 * 0.1).collect()).unwrap();
        assert!(ae.encode(&v).unwrap().as_slice().iter().all(|&z| z == 0.0));
        assert!(ae.decode(&v).unwrap().as_slice().iter().all(|&z| z == 0.0));
        assert!(ae.encode(&UpperTriVector::new(vec![0.0; 6]).unwrap()).is_err());
    }

    #[test]
    fn near_identity_decoder_reproduces_code() {
        // H = D, W1 = s·I, W2 = I/s: tanh(s·z)/s ≈ z for small s.
        let r = 4;
        let d = upper_len(r);
        let s = 1e-3;
        let mut ae = AeParams::zeros(r, d).unwrap();
        for k in 0..d {
            ae.dec_w1.value[(k, k)] = s;
            ae.dec_w2.value[(k, k)] = 1.0 / s;
        }
        let z = UpperTriVector::new(vec![0.5, -0.2, 0.9, 0.0, -0.7, 0.3]).unwrap();
        let out = ae.decode(&z).unwrap();
        for (a, b) in out.as_slice().iter().zip(z.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn decode_matches_naive_product() {
        let mut rng = Rng::new(2);
        let ae = AeParams::init(5, 6, &mut rng).unwrap();
        let z: Vec<f64> = (0..10).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let out = ae.decode(&UpperTriVector::new(z.clone()).unwrap()).unwrap();
        let mut hidden = [0.0; 6];
        for (h, hv) in hidden.iter_mut().enumerate() {
            let mut s = ae.dec_b1.value[(0, h)];
            for (k, zk) in z.iter().enumerate() {
                s += zk * ae.dec_w1.value[(k, h)];
            }
            *hv = s.tanh();
        }
        for k in 0..10 {
            let mut s = ae.dec_b2.value[(0, k)];
            for (h, hv) in hidden.iter().enumerate() {
                s += hv * ae.dec_w2.value[(h, k)];
            }
            assert!((out.as_slice()[k] - s).abs() < 1e-14);
        }
    }

    #[test]
    fn joint_gradients_match_finite_differences() {
        let mut rng = Rng::new(3);
        let r = 8;
        let shape = ClassifierShape {
            regions: r,
            c1: 4,
            c2: 4,
            hidden: 8,
        };
        for _ in 0..2 {
            let ae = AeParams::init(r, 16, &mut rng).unwrap();
            let clf = ConvClassifierParams::init(shape, &mut rng).unwrap();
            let mut model = JointModel::new(ae, clf).unwrap();
            for b in [
                &mut model.ae.enc_b1,
                &mut model.ae.enc_b2,
                &mut model.ae.dec_b1,
                &mut model.ae.dec_b2,
            ] {
                b.value
                    .as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = rng.uniform(-0.3, 0.3));
            }
            let v = vectorize_upper(&random_symmetric(&mut rng, r)).unwrap();
            let weights = LossWeights {
                cosine: 1.0,
                reconstruction: 0.7,
            };
            let err = grad_check(
                &mut model,
                |m| m.accumulate_loss_grad(&v, Label::Disease, weights, 1.0).unwrap().total,
                1e-5,
                300,
                &mut rng,
            );
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn zero_loss_weights_reduce_to_cross_entropy() {
        let mut rng = Rng::new(4);
        let shape = ClassifierShape {
            regions: 6,
            c1: 2,
            c2: 2,
            hidden: 4,
        };
        let mut model = JointModel::new(
            AeParams::init(6, 5, &mut rng).unwrap(),
            ConvClassifierParams::init(shape, &mut rng).unwrap(),
        )
        .unwrap();
        let v = vectorize_upper(&random_symmetric(&mut rng, 6)).unwrap();
        let zero = LossWeights {
            cosine: 0.0,
            reconstruction: 0.0,
        };
        let l = model.accumulate_loss_grad(&v, Label::Control, zero, 1.0).unwrap();
        let direct = crate::classifier::cross_entropy(&model.forward(&v).unwrap().logits, Label::Control);
        assert_eq!(l.total, l.cross_entropy);
        assert_eq!(l.total, direct);
        // The decoder receives no gradient without a reconstruction term.
        assert!(model.ae.dec_w2.grad.as_slice().iter().all(|&g| g == 0.0));
    }
}
