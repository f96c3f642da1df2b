//! Two-layer perceptron with a ReLU hidden layer.
//!
//! The hidden activations double as the feature space in which class
//! prototypes live; the output layer produces one logit per class.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Input-to-feature weights, `d_in x d_f`.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// Feature-to-logit weights, `d_f x C`.
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Gradients share the parameter layout.
pub type ParamGrads = ModelParams;

impl ModelParams {
    pub fn zeros(d_in: usize, d_f: usize, classes: usize) -> Self {
        Self {
            w1: Array2::zeros((d_in, d_f)),
            b1: Array1::zeros(d_f),
            w2: Array2::zeros((d_f, classes)),
            b2: Array1::zeros(classes),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_f: usize, classes: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(d_in, d_f, classes);
        let a1 = (6.0 / (d_in + d_f) as f64).sqrt();
        let u1 = Uniform::new_inclusive(-a1, a1).expect("finite bounds");
        p.w1.mapv_inplace(|_| u1.sample(rng));
        let a2 = (6.0 / (d_f + classes) as f64).sqrt();
        let u2 = Uniform::new_inclusive(-a2, a2).expect("finite bounds");
        p.w2.mapv_inplace(|_| u2.sample(rng));
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.feature_dim(), self.classes())
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn classes(&self) -> usize {
        self.w2.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.b1.len() != self.w1.ncols()
            || self.w2.nrows() != self.w1.ncols()
            || self.b2.len() != self.w2.ncols()
        {
            return Err(FedError::Dimension(format!(
                "inconsistent parameter shapes: w1 {:?}, b1 {}, w2 {:?}, b2 {}",
                self.w1.dim(),
                self.b1.len(),
                self.w2.dim(),
                self.b2.len()
            )));
        }
        if !self.all_finite() {
            return Err(FedError::Domain("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.w1.dim() == other.w1.dim()
            && self.b1.len() == other.b1.len()
            && self.w2.dim() == other.w2.dim()
            && self.b2.len() == other.b2.len()
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// All entries in a fixed order: w1, b1, w2, b2 (row-major).
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .copied()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
    }

    /// `self += alpha * other`.
    pub fn scaled_add(&mut self, alpha: f64, other: &Self) {
        self.w1.scaled_add(alpha, &other.w1);
        self.b1.scaled_add(alpha, &other.b1);
        self.w2.scaled_add(alpha, &other.w2);
        self.b2.scaled_add(alpha, &other.b2);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.iter_mut().for_each(|v| *v *= alpha);
    }
}

/// Output of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    /// Post-ReLU hidden activations, `batch x d_f`.
    pub features: Array2<f64>,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_inputs(params: &ModelParams, inputs: &ArrayView2<f64>) -> Result<()> {
    if inputs.ncols() != params.input_dim() {
        return Err(FedError::Dimension(format!(
            "input width {} does not match model input dimension {}",
            inputs.ncols(),
            params.input_dim()
        )));
    }
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(FedError::Domain("non-finite input value".into()));
    }
    Ok(())
}

pub fn forward(params: &ModelParams, inputs: ArrayView2<f64>) -> Result<ForwardResult> {
    check_inputs(params, &inputs)?;
    let mut features = inputs.dot(&params.w1);
    features += &params.b1;
    features.mapv_inplace(|v| v.max(0.0));
    let mut logits = features.dot(&params.w2);
    logits += &params.b2;
    let probs = logits.mapv(sigmoid);
    Ok(ForwardResult {
        features,
        logits,
        probs,
    })
}

/// Hidden features only; skips the output layer.
pub fn features(params: &ModelParams, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_inputs(params, &inputs)?;
    let mut h = inputs.dot(&params.w1);
    h += &params.b1;
    h.mapv_inplace(|v| v.max(0.0));
    Ok(h)
}

/// Backpropagate a gradient wrt logits to every parameter.
pub fn backward(
    params: &ModelParams,
    inputs: ArrayView2<f64>,
    fwd: &ForwardResult,
    grad_logits: ArrayView2<f64>,
) -> Result<ParamGrads> {
    if grad_logits.dim() != fwd.logits.dim() || inputs.nrows() != fwd.features.nrows() {
        return Err(FedError::Dimension(format!(
            "gradient {:?} vs logits {:?}",
            grad_logits.dim(),
            fwd.logits.dim()
        )));
    }
    let w2 = fwd.features.t().dot(&grad_logits);
    let b2 = grad_logits.sum_axis(Axis(0));
    let mut dh = grad_logits.dot(&params.w2.t());
    // ReLU passes gradient only where the activation is positive.
    ndarray::Zip::from(&mut dh)
        .and(&fwd.features)
        .for_each(|g, &h| {
            if h <= 0.0 {
                *g = 0.0;
            }
        });
    let w1 = inputs.t().dot(&dh);
    let b1 = dh.sum_axis(Axis(0));
    Ok(ModelParams { w1, b1, w2, b2 })
}
