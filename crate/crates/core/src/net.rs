//! The forecasting network: a residual MLP with batch normalization.
//!
//! ```text
//! h_0 = x
//! h_k = relu(bn_k(W_k h_{k-1} + b_k))        k = 1..=L
//! y   = W_o h_L + b_o + R x
//! ```
//!
//! All trainable parameters live in one flat vector whose layout is described
//! by [`ParamLayout`]; gradients use the same layout. Weight matrices are
//! stored row-major (`out x in`). Batch-norm running statistics are kept
//! outside the trainable vector.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gaussmath::SIGMA2_FLOOR;
use crate::HOURS_PER_DAY;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("forward cache does not match the current parameters")]
    StaleCache,
    #[error("empty batch")]
    EmptyBatch,
    #[error("need at least two samples per hour, found {0}")]
    InsufficientSamples(usize),
    #[error("unknown tensor {0}")]
    UnknownTensor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl NetConfig {
    /// Three hidden layers of width 250.
    pub fn new(input_dim: usize) -> Self {
        NetConfig {
            input_dim,
            hidden_width: 250,
            hidden_layers: 3,
        }
    }

    pub fn output_dim(&self) -> usize {
        HOURS_PER_DAY
    }
}

/// Name, shape and position of one tensor in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub tensors: Vec<TensorSpec>,
    pub len: usize,
}

impl ParamLayout {
    /// `hidden.k.{weight,bias,bn_scale,bn_shift}` for each hidden layer, then
    /// `output.{weight,bias}` and `residual.weight`.
    pub fn new(cfg: &NetConfig) -> Self {
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let spec = TensorSpec {
                name,
                shape,
                offset,
            };
            offset += spec.len();
            tensors.push(spec);
        };
        let w = cfg.hidden_width;
        for k in 0..cfg.hidden_layers {
            let fan_in = if k == 0 { cfg.input_dim } else { w };
            push(format!("hidden.{k}.weight"), vec![w, fan_in]);
            push(format!("hidden.{k}.bias"), vec![w]);
            push(format!("hidden.{k}.bn_scale"), vec![w]);
            push(format!("hidden.{k}.bn_shift"), vec![w]);
        }
        let last = if cfg.hidden_layers == 0 { cfg.input_dim } else { w };
        push("output.weight".into(), vec![cfg.output_dim(), last]);
        push("output.bias".into(), vec![cfg.output_dim()]);
        push("residual.weight".into(), vec![cfg.output_dim(), cfg.input_dim]);
        ParamLayout {
            tensors,
            len: offset,
        }
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn at(&self, name: &str) -> &TensorSpec {
        self.get(name).expect("layout tensor")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Minibatch statistics; the forward pass reports them for a running
    /// average update.
    Train,
    /// Running statistics; a fixed affine map per feature.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    config: NetConfig,
    layout: ParamLayout,
    theta: Vec<f64>,
    running_mean: Vec<Vec<f64>>,
    running_var: Vec<Vec<f64>>,
    version: u64,
}

impl NetworkParams {
    /// Uniform fan-in scaled initialization from `seed`: `±sqrt(6/fan_in)` for
    /// the ReLU layers, `±sqrt(3/fan_in)` for the linear output and residual
    /// maps. Biases and shifts start at zero, scales at one.
    pub fn init(config: NetConfig, seed: u64) -> Self {
        let layout = ParamLayout::new(&config);
        let mut theta = vec![0.0; layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for spec in &layout.tensors {
            let slot = &mut theta[spec.range()];
            if spec.name.ends_with("weight") {
                let fan_in = spec.shape[1] as f64;
                let gain = if spec.name.starts_with("hidden") { 6.0 } else { 3.0 };
                let bound = libm::sqrt(gain / fan_in);
                for v in slot.iter_mut() {
                    *v = rng.random_range(-bound..bound);
                }
            } else if spec.name.ends_with("bn_scale") {
                slot.fill(1.0);
            }
        }
        let w = config.hidden_width;
        NetworkParams {
            config,
            layout,
            theta,
            running_mean: vec![vec![0.0; w]; config.hidden_layers],
            running_var: vec![vec![1.0; w]; config.hidden_layers],
            version: 0,
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Mutable access to the trainable vector; invalidates earlier caches.
    pub fn theta_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.theta
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn running_mean(&self, layer: usize) -> &[f64] {
        &self.running_mean[layer]
    }

    pub fn running_var(&self, layer: usize) -> &[f64] {
        &self.running_var[layer]
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|s| &self.theta[s.range()])
    }

    /// Every tensor as `(name, shape, values)`, running statistics included
    /// as `hidden.k.running_mean` / `hidden.k.running_var`.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out: Vec<_> = self
            .layout
            .tensors
            .iter()
            .map(|s| (s.name.clone(), s.shape.clone(), self.theta[s.range()].to_vec()))
            .collect();
        let w = self.config.hidden_width;
        for k in 0..self.config.hidden_layers {
            out.push((format!("hidden.{k}.running_mean"), vec![w], self.running_mean[k].clone()));
            out.push((format!("hidden.{k}.running_var"), vec![w], self.running_var[k].clone()));
        }
        out
    }

    /// Overwrite one tensor by name, running statistics included.
    pub fn set_tensor(&mut self, name: &str, values: &[f64]) -> Result<(), NetError> {
        let target: &mut [f64] = if let Some(spec) = self.layout.get(name) {
            let r = spec.range();
            &mut self.theta[r]
        } else {
            let stat = name
                .strip_prefix("hidden.")
                .and_then(|rest| rest.split_once('.'))
                .and_then(|(k, field)| Some((k.parse::<usize>().ok()?, field)));
            match stat {
                Some((k, "running_mean")) if k < self.config.hidden_layers => &mut self.running_mean[k],
                Some((k, "running_var")) if k < self.config.hidden_layers => &mut self.running_var[k],
                _ => return Err(NetError::UnknownTensor(name.into())),
            }
        };
        if target.len() != values.len() {
            return Err(NetError::Dimension {
                expected: target.len(),
                found: values.len(),
            });
        }
        target.copy_from_slice(values);
        self.version += 1;
        Ok(())
    }

    /// Fold minibatch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &BatchStats) {
        for k in 0..self.config.hidden_layers {
            for j in 0..self.config.hidden_width {
                let rm = &mut self.running_mean[k][j];
                *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * stats.mean[k][j];
                let rv = &mut self.running_var[k][j];
                *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * stats.var[k][j];
            }
        }
        self.version += 1;
    }

    /// Replace the running averages with `stats`.
    pub fn set_running_stats(&mut self, stats: &BatchStats) {
        self.running_mean.clone_from(&stats.mean);
        self.running_var.clone_from(&stats.var);
        self.version += 1;
    }

    /// Transposed weight `in x out` as a column-major view of the row-major
    /// `out x in` storage.
    fn weight_t(&self, name: &str) -> DMatrixView<'_, f64> {
        let spec = self.layout.at(name);
        DMatrixView::from_slice(&self.theta[spec.range()], spec.shape[1], spec.shape[0])
    }

    fn vector(&self, name: &str) -> &[f64] {
        &self.theta[self.layout.at(name).range()]
    }
}

/// Per-layer minibatch mean and (population) variance of the pre-norm
/// activations.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: DMatrix<f64>,
    xhat: DMatrix<f64>,
    inv_std: Vec<f64>,
    /// Post-activation output (the next layer's input).
    act: DMatrix<f64>,
}

/// Activations kept by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    mode: Mode,
    version: u64,
    x: DMatrix<f64>,
    layers: Vec<LayerCache>,
    /// Minibatch statistics, present in train mode.
    pub batch_stats: Option<BatchStats>,
}

impl ForwardCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

fn add_row(m: &mut DMatrix<f64>, v: &[f64]) {
    for (j, b) in v.iter().enumerate() {
        m.column_mut(j).add_scalar_mut(*b);
    }
}

/// Network output for the rows of `x` (one sample per row), `N x 24`.
pub fn forward(
    params: &NetworkParams,
    x: &DMatrix<f64>,
    mode: Mode,
) -> Result<(DMatrix<f64>, ForwardCache), NetError> {
    let cfg = params.config;
    if x.ncols() != cfg.input_dim {
        return Err(NetError::Dimension {
            expected: cfg.input_dim,
            found: x.ncols(),
        });
    }
    let n = x.nrows();
    if n == 0 {
        return Err(NetError::EmptyBatch);
    }
    let nf = n as f64;
    let mut layers = Vec::with_capacity(cfg.hidden_layers);
    let mut stats = BatchStats {
        mean: Vec::new(),
        var: Vec::new(),
    };
    let mut h = x.clone();
    for k in 0..cfg.hidden_layers {
        let mut z = &h * params.weight_t(&format!("hidden.{k}.weight"));
        add_row(&mut z, params.vector(&format!("hidden.{k}.bias")));
        let scale = params.vector(&format!("hidden.{k}.bn_scale"));
        let shift = params.vector(&format!("hidden.{k}.bn_shift"));
        let width = z.ncols();
        let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
            Mode::Train => (0..width)
                .map(|j| {
                    let col = z.column(j);
                    let m = col.sum() / nf;
                    let v = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / nf;
                    (m, v)
                })
                .unzip(),
            Mode::Eval => (params.running_mean[k].clone(), params.running_var[k].clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + BN_EPS)).collect();
        let mut xhat = z;
        let mut act = DMatrix::zeros(n, width);
        for j in 0..width {
            for i in 0..n {
                let xh = (xhat[(i, j)] - mean[j]) * inv_std[j];
                xhat[(i, j)] = xh;
                act[(i, j)] = (scale[j] * xh + shift[j]).max(0.0);
            }
        }
        if mode == Mode::Train {
            stats.mean.push(mean);
            stats.var.push(var);
        }
        let next = act.clone();
        layers.push(LayerCache {
            input: h,
            xhat,
            inv_std,
            act,
        });
        h = next;
    }
    let mut y = &h * params.weight_t("output.weight");
    y += x * params.weight_t("residual.weight");
    add_row(&mut y, params.vector("output.bias"));
    let cache = ForwardCache {
        mode,
        version: params.version,
        x: x.clone(),
        layers,
        batch_stats: (mode == Mode::Train).then_some(stats),
    };
    Ok((y, cache))
}

/// Eval-mode output without a cache.
pub fn predict(params: &NetworkParams, x: &DMatrix<f64>) -> Result<DMatrix<f64>, NetError> {
    forward(params, x, Mode::Eval).map(|(y, _)| y)
}

fn weight_grad_t<'a>(grad: &'a mut [f64], spec: &TensorSpec) -> DMatrixViewMut<'a, f64> {
    DMatrixViewMut::from_slice(&mut grad[spec.range()], spec.shape[1], spec.shape[0])
}

fn column_sums(m: &DMatrix<f64>, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        *o = m.column(j).sum();
    }
}

/// Gradient of a scalar loss with respect to every trainable parameter, given
/// `upstream = dLoss/dy` (`N x 24`) and the cache of the matching forward call.
///
/// In train mode the batch-norm statistics are differentiated through; in eval
/// mode they are constants.
pub fn backward(
    params: &NetworkParams,
    cache: &ForwardCache,
    upstream: &DMatrix<f64>,
) -> Result<Vec<f64>, NetError> {
    if cache.version != params.version {
        return Err(NetError::StaleCache);
    }
    let cfg = params.config;
    let n = cache.x.nrows();
    if upstream.nrows() != n || upstream.ncols() != cfg.output_dim() {
        return Err(NetError::Dimension {
            expected: n * cfg.output_dim(),
            found: upstream.len(),
        });
    }
    let layout = &params.layout;
    let mut grad = vec![0.0; layout.len];

    let last = cache.layers.last().map(|l| &l.act).unwrap_or(&cache.x);
    weight_grad_t(&mut grad, layout.at("output.weight")).gemm_tr(1.0, last, upstream, 0.0);
    weight_grad_t(&mut grad, layout.at("residual.weight")).gemm_tr(1.0, &cache.x, upstream, 0.0);
    column_sums(upstream, &mut grad[layout.at("output.bias").range()]);

    let mut d_h = upstream * params.weight_t("output.weight").transpose();
    let nf = n as f64;
    for k in (0..cfg.hidden_layers).rev() {
        let lc = &cache.layers[k];
        let scale = params.vector(&format!("hidden.{k}.bn_scale"));
        // through the ReLU: d_u = d_h where the activation is positive
        let mut d_u = d_h;
        d_u.zip_apply(&lc.act, |d, a| {
            if a <= 0.0 {
                *d = 0.0;
            }
        });
        let width = d_u.ncols();
        let mut d_scale = vec![0.0; width];
        let mut d_shift = vec![0.0; width];
        let mut d_z = DMatrix::zeros(n, width);
        for j in 0..width {
            let du = d_u.column(j);
            let xh = lc.xhat.column(j);
            d_shift[j] = du.sum();
            d_scale[j] = du.dot(&xh);
            let g = scale[j] * lc.inv_std[j];
            match cache.mode {
                Mode::Eval => {
                    for i in 0..n {
                        d_z[(i, j)] = g * du[i];
                    }
                }
                Mode::Train => {
                    let (sum_du, sum_du_xh) = (d_shift[j], d_scale[j]);
                    for i in 0..n {
                        d_z[(i, j)] = g * (du[i] - sum_du / nf - xh[i] * sum_du_xh / nf);
                    }
                }
            }
        }
        grad[layout.at(&format!("hidden.{k}.bn_scale")).range()].copy_from_slice(&d_scale);
        grad[layout.at(&format!("hidden.{k}.bn_shift")).range()].copy_from_slice(&d_shift);
        column_sums(&d_z, &mut grad[layout.at(&format!("hidden.{k}.bias")).range()]);
        weight_grad_t(&mut grad, layout.at(&format!("hidden.{k}.weight")))
            .gemm_tr(1.0, &lc.input, &d_z, 0.0);
        d_h = &d_z * params.weight_t(&format!("hidden.{k}.weight")).transpose();
    }
    Ok(grad)
}

fn check_pair(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(), NetError> {
    if a.shape() != b.shape() {
        return Err(NetError::Dimension {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Err(NetError::EmptyBatch);
    }
    Ok(())
}

/// Mean squared error over every element of the batch.
pub fn prediction_loss(y_hat: &DMatrix<f64>, y_train: &DMatrix<f64>) -> Result<f64, NetError> {
    check_pair(y_hat, y_train)?;
    Ok((y_hat - y_train).norm_squared() / y_hat.len() as f64)
}

/// `d prediction_loss / d y_hat`.
pub fn prediction_loss_grad(
    y_hat: &DMatrix<f64>,
    y_train: &DMatrix<f64>,
) -> Result<DMatrix<f64>, NetError> {
    check_pair(y_hat, y_train)?;
    Ok((y_hat - y_train) * (2.0 / y_hat.len() as f64))
}

/// Per-hour mean squared forecast residual (`N x 24`, one sample per row),
/// floored at [`SIGMA2_FLOOR`]. Residuals are not centered, so a systematic
/// bias counts as spread.
pub fn estimate_variance(residuals: &DMatrix<f64>) -> Result<Vec<f64>, NetError> {
    let n = residuals.nrows();
    if n < 2 {
        return Err(NetError::InsufficientSamples(n));
    }
    let nf = n as f64;
    Ok(residuals
        .column_iter()
        .map(|col| (col.iter().map(|r| r * r).sum::<f64>() / nf).max(SIGMA2_FLOOR))
        .collect())
}

/// Network forecast with its per-hour variance, in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastOutput {
    pub y_hat: Vec<f64>,
    pub sigma2: Vec<f64>,
}
