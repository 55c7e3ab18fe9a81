use crate::{Error, Mode, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LN_EPS: f64 = 1e-5;

/// Running statistics of a batch-norm layer.
///
/// Train mode normalises with the biased batch variance and folds the
/// unbiased variance into the running estimate (momentum 0.1); eval mode
/// normalises with the running estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormStats {
    pub fn new(width: usize) -> Self {
        Self {
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.running_mean.len()
    }
}

#[derive(Debug)]
pub(crate) struct NormSaved {
    /// Normalised input, same layout as x.
    xhat: Vec<f64>,
    /// Per column (batch norm) or per row (layer norm).
    inv_std: Vec<f64>,
    /// Batch statistics were used (train-mode batch norm, always for layer norm).
    batch_stats: bool,
}

pub(crate) struct NormGrads {
    pub dx: Vec<f64>,
    pub dgamma: Vec<f64>,
    pub dbeta: Vec<f64>,
}

pub(crate) fn batch_norm_forward(
    x: &[f64],
    b: usize,
    d: usize,
    gamma: &[f64],
    beta: &[f64],
    stats: &mut BatchNormStats,
    mode: Mode,
) -> Result<(Vec<f64>, NormSaved)> {
    let mut xhat = vec![0.0; b * d];
    let mut inv_std = vec![0.0; d];
    match mode {
        Mode::Train => {
            if b < 2 {
                return Err(Error::BatchSize(b));
            }
            for j in 0..d {
                let mean = (0..b).map(|i| x[i * d + j]).sum::<f64>() / b as f64;
                let ss = (0..b).map(|i| (x[i * d + j] - mean).powi(2)).sum::<f64>();
                let var = ss / b as f64;
                let is = 1.0 / (var + BN_EPS).sqrt();
                inv_std[j] = is;
                for i in 0..b {
                    xhat[i * d + j] = (x[i * d + j] - mean) * is;
                }
                let unbiased = ss / (b - 1) as f64;
                stats.running_mean[j] = (1.0 - BN_MOMENTUM) * stats.running_mean[j] + BN_MOMENTUM * mean;
                stats.running_var[j] = (1.0 - BN_MOMENTUM) * stats.running_var[j] + BN_MOMENTUM * unbiased;
            }
        }
        Mode::Eval => {
            for j in 0..d {
                let is = 1.0 / (stats.running_var[j] + BN_EPS).sqrt();
                inv_std[j] = is;
                for i in 0..b {
                    xhat[i * d + j] = (x[i * d + j] - stats.running_mean[j]) * is;
                }
            }
        }
    }
    let out = affine(&xhat, d, gamma, beta);
    Ok((
        out,
        NormSaved {
            xhat,
            inv_std,
            batch_stats: mode == Mode::Train,
        },
    ))
}

pub(crate) fn batch_norm_backward(g: &[f64], saved: &NormSaved, gamma: &[f64], b: usize, d: usize) -> NormGrads {
    let (dgamma, dbeta) = affine_grads(g, &saved.xhat, d);
    let mut dx = vec![0.0; b * d];
    for j in 0..d {
        let is = saved.inv_std[j];
        if saved.batch_stats {
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for i in 0..b {
                let dxh = g[i * d + j] * gamma[j];
                sum_dxhat += dxh;
                sum_dxhat_xhat += dxh * saved.xhat[i * d + j];
            }
            let n = b as f64;
            for i in 0..b {
                let dxh = g[i * d + j] * gamma[j];
                dx[i * d + j] = is / n * (n * dxh - sum_dxhat - saved.xhat[i * d + j] * sum_dxhat_xhat);
            }
        } else {
            for i in 0..b {
                dx[i * d + j] = g[i * d + j] * gamma[j] * is;
            }
        }
    }
    NormGrads { dx, dgamma, dbeta }
}

pub(crate) fn layer_norm_forward(x: &[f64], m: usize, d: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, NormSaved) {
    let mut xhat = vec![0.0; m * d];
    let mut inv_std = vec![0.0; m];
    for r in 0..m {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = is;
        for (o, v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
    }
    let out = affine(&xhat, d, gamma, beta);
    (
        out,
        NormSaved {
            xhat,
            inv_std,
            batch_stats: true,
        },
    )
}

pub(crate) fn layer_norm_backward(g: &[f64], saved: &NormSaved, gamma: &[f64], m: usize, d: usize) -> NormGrads {
    let (dgamma, dbeta) = affine_grads(g, &saved.xhat, d);
    let mut dx = vec![0.0; m * d];
    let n = d as f64;
    for r in 0..m {
        let is = saved.inv_std[r];
        let xh = &saved.xhat[r * d..(r + 1) * d];
        let gr = &g[r * d..(r + 1) * d];
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for j in 0..d {
            let dxh = gr[j] * gamma[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[j];
        }
        for j in 0..d {
            let dxh = gr[j] * gamma[j];
            dx[r * d + j] = is / n * (n * dxh - sum_dxhat - xh[j] * sum_dxhat_xhat);
        }
    }
    NormGrads { dx, dgamma, dbeta }
}

fn affine(xhat: &[f64], d: usize, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    xhat.chunks(d)
        .flat_map(|row| row.iter().zip(gamma).zip(beta).map(|((x, g), b)| g * x + b))
        .collect()
}

fn affine_grads(g: &[f64], xhat: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    for (grow, xrow) in g.chunks(d).zip(xhat.chunks(d)) {
        for j in 0..d {
            dgamma[j] += grow[j] * xrow[j];
            dbeta[j] += grow[j];
        }
    }
    (dgamma, dbeta)
}
