//! Feed-forward decoders and the metric they induce on the latent chart.
//!
//! A decoder `D: ℝ^d → ℝ^n` is an alternating stack of affine maps and
//! element-wise activations. With the ambient space carrying the Euclidean
//! inner product, the induced (pullback) metric is `g = JᵀJ` where `J` is the
//! decoder Jacobian. `J` is computed in forward mode: `d` tangent directions are
//! pushed through the layers alongside the activations, which is the cheap
//! direction when `n ≫ d`.

mod format;

use std::fmt;

use nalgebra::SVD;
use thiserror::Error;

use crate::manifold::{GeometryError, Matrix, MetricEvaluator, Vector};

pub use format::{load_weights, save_weights, PLDW_MAGIC, PLDW_VERSION};

/// Singular values below this fraction of the largest make `J` rank-deficient.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecoderError {
    #[error("bad magic bytes {0:?} (expected \"PLDW\")")]
    BadMagic([u8; 4]),
    #[error("unsupported PLDW version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated stream: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("{0} trailing bytes after the last layer")]
    TrailingBytes(usize),
    #[error("unknown activation code {0}")]
    UnknownActivation(u8),
    #[error("layer {layer}: non-zero padding bytes")]
    BadPadding { layer: usize },
    #[error("network has no layers")]
    Empty,
    #[error("layer {layer} has an empty weight matrix")]
    EmptyLayer { layer: usize },
    #[error("layer {layer} expects {expected} inputs but the previous layer produces {found}")]
    DimensionChain {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("layer {layer}: bias has length {found}, expected {expected}")]
    BiasLength {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("layer {layer} holds non-finite parameters")]
    NonFiniteParameter { layer: usize },
    #[error("input has dimension {found}, decoder expects {expected}")]
    InputDimension { expected: usize, found: usize },
    #[error("non-finite activation in layer {layer}")]
    NonFiniteOutput { layer: usize },
    #[error("rank-deficient Jacobian (σ_min/σ_max = {ratio:e}); pullback metric is degenerate")]
    RankDeficient { ratio: f64 },
    #[error("I/O error: {0}")]
    Io(String),
}

/// Element-wise activation. All variants are C¹, which the geodesic
/// equations need; piecewise-linear activations are rejected at load time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Tanh,
    Gelu,
    Elu,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Gelu => 2,
            Activation::Elu => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, DecoderError> {
        Ok(match code {
            0 => Activation::Identity,
            1 => Activation::Tanh,
            2 => Activation::Gelu,
            3 => Activation::Elu,
            other => return Err(DecoderError::UnknownActivation(other)),
        })
    }

    /// Value and derivative at `x`.
    pub fn eval(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Identity => (x, 1.0),
            Activation::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
            Activation::Gelu => {
                // exact (erf) form
                let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
                let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                (x * cdf, cdf + x * pdf)
            }
            Activation::Elu => {
                if x > 0.0 {
                    (x, 1.0)
                } else {
                    let e = x.exp();
                    (e - 1.0, e)
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Gelu => "gelu",
            Activation::Elu => "elu",
        })
    }
}

/// `x ↦ σ(W x + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vector,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vector, activation: Activation) -> Self {
        Self {
            weights,
            bias,
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

/// A maps from latent coordinates into an ambient Euclidean space whose
/// Jacobian is available.
pub trait Immersion: Send + Sync + fmt::Debug {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn forward(&self, z: &[f64]) -> Result<Vector, DecoderError>;
    fn jacobian(&self, z: &[f64]) -> Result<Matrix, DecoderError>;
}

/// Immutable MLP decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderNet {
    layers: Vec<Layer>,
}

impl DecoderNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self, DecoderError> {
        if layers.is_empty() {
            return Err(DecoderError::Empty);
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.weights.is_empty() {
                return Err(DecoderError::EmptyLayer { layer: l });
            }
            if layer.bias.len() != layer.outputs() {
                return Err(DecoderError::BiasLength {
                    layer: l,
                    expected: layer.outputs(),
                    found: layer.bias.len(),
                });
            }
            if layer.weights.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(DecoderError::NonFiniteParameter { layer: l });
            }
            if l > 0 && layers[l - 1].outputs() != layer.inputs() {
                return Err(DecoderError::DimensionChain {
                    layer: l,
                    expected: layer.inputs(),
                    found: layers[l - 1].outputs(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    fn check_input(&self, z: &[f64]) -> Result<(), DecoderError> {
        if z.len() != self.input_dim() {
            return Err(DecoderError::InputDimension {
                expected: self.input_dim(),
                found: z.len(),
            });
        }
        Ok(())
    }

    /// Decoder output and its Jacobian in one forward-mode pass.
    pub fn forward_with_jacobian(&self, z: &[f64]) -> Result<(Vector, Matrix), DecoderError> {
        self.check_input(z)?;
        let d = z.len();
        let mut a = Vector::from_column_slice(z);
        let mut tangent = Matrix::identity(d, d);
        for (l, layer) in self.layers.iter().enumerate() {
            let pre = &layer.weights * &a + &layer.bias;
            let mut t = &layer.weights * &tangent;
            let mut out = Vector::zeros(pre.len());
            for (r, &x) in pre.iter().enumerate() {
                let (v, dv) = layer.activation.eval(x);
                out[r] = v;
                t.row_mut(r).scale_mut(dv);
            }
            if out.iter().chain(t.iter()).any(|v| !v.is_finite()) {
                return Err(DecoderError::NonFiniteOutput { layer: l });
            }
            a = out;
            tangent = t;
        }
        Ok((a, tangent))
    }
}

impl Immersion for DecoderNet {
    fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    fn forward(&self, z: &[f64]) -> Result<Vector, DecoderError> {
        self.check_input(z)?;
        let mut a = Vector::from_column_slice(z);
        for (l, layer) in self.layers.iter().enumerate() {
            let mut pre = &layer.weights * &a + &layer.bias;
            pre.apply(|x| *x = layer.activation.eval(*x).0);
            if pre.iter().any(|v| !v.is_finite()) {
                return Err(DecoderError::NonFiniteOutput { layer: l });
            }
            a = pre;
        }
        Ok(a)
    }

    fn jacobian(&self, z: &[f64]) -> Result<Matrix, DecoderError> {
        Ok(self.forward_with_jacobian(z)?.1)
    }
}

/// `g(z) = J(z)ᵀ J(z)`, rejecting rank-deficient Jacobians.
pub fn pullback_metric<I: Immersion + ?Sized>(imm: &I, z: &[f64]) -> Result<Matrix, DecoderError> {
    let j = imm.jacobian(z)?;
    let sv = SVD::new(j.clone(), false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if !(smax > 0.0) || smin < RANK_TOL * smax || j.ncols() > j.nrows() {
        let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
        return Err(DecoderError::RankDeficient { ratio });
    }
    let g = j.transpose() * &j;
    Ok((&g + g.transpose()) * 0.5)
}

/// The metric field induced on the chart by an immersion.
#[derive(Debug)]
pub struct PullbackMetric<I> {
    immersion: I,
}

impl<I: Immersion> PullbackMetric<I> {
    pub fn new(immersion: I) -> Self {
        Self { immersion }
    }

    pub fn immersion(&self) -> &I {
        &self.immersion
    }
}

impl<I: Immersion> MetricEvaluator for PullbackMetric<I> {
    fn dim(&self) -> usize {
        self.immersion.input_dim()
    }

    fn name(&self) -> String {
        format!("pullback({}→{})", self.immersion.input_dim(), self.immersion.output_dim())
    }

    fn metric(&self, x: &[f64]) -> Result<Matrix, GeometryError> {
        pullback_metric(&self.immersion, x).map_err(|e| match e {
            DecoderError::RankDeficient { .. } => {
                GeometryError::NotPositiveDefinite { point: x.to_vec() }
            }
            other => GeometryError::Evaluator {
                point: x.to_vec(),
                message: other.to_string(),
            },
        })
    }
}
