use super::Tensor;
use crate::error::{Error, Result};

/// Which elements of a `[B,C,L]` batch share normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormAxis {
    /// One statistic per channel, pooled over batch and time.
    PerChannel,
    /// One statistic per (channel, time) cell, pooled over the batch only.
    PerCell,
}

impl NormAxis {
    /// Number of statistics for a `[_, c, l]` input.
    pub fn stat_count(self, c: usize, l: usize) -> usize {
        match self {
            NormAxis::PerChannel => c,
            NormAxis::PerCell => c * l,
        }
    }

    fn stat_index(self, ci: usize, li: usize, l: usize) -> usize {
        match self {
            NormAxis::PerChannel => ci,
            NormAxis::PerCell => ci * l + li,
        }
    }
}

/// Batch statistics observed in a training-mode pass. `var` is the unbiased
/// estimate, ready for running-average updates.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn check(x: &Tensor, gamma: &Tensor, beta: &Tensor, axis: NormAxis) -> Result<(usize, usize, usize, usize)> {
    let &[b, c, l] = x.shape() else {
        return Err(Error::config(format!("batch norm expects [B,C,L], got {:?}", x.shape())));
    };
    let m = axis.stat_count(c, l);
    if gamma.numel() != m || beta.numel() != m {
        return Err(Error::config(format!(
            "batch norm ({axis:?}) needs {m} scale/shift values, got {} and {}",
            gamma.numel(),
            beta.numel()
        )));
    }
    Ok((b, c, l, m))
}

impl Tensor {
    /// Normalizes with the statistics of this batch, then scales and shifts.
    pub fn batch_norm_train(
        &self,
        gamma: &Tensor,
        beta: &Tensor,
        axis: NormAxis,
        eps: f64,
    ) -> Result<(Tensor, BatchNormStats)> {
        let (b, c, l, m) = check(self, gamma, beta, axis)?;
        let per_stat = self.numel() / m.max(1);
        if per_stat < 2 {
            return Err(Error::config(format!(
                "training-mode batch norm needs at least 2 values per statistic, got {per_stat} (batch {b})"
            )));
        }
        let x = self.to_vec();
        let gv = gamma.to_vec();
        let bv = beta.to_vec();
        let idx = move |ci: usize, li: usize| axis.stat_index(ci, li, l);

        let mut mean = vec![0.0; m];
        for bi in 0..b {
            for ci in 0..c {
                for li in 0..l {
                    mean[idx(ci, li)] += x[(bi * c + ci) * l + li];
                }
            }
        }
        let nf = per_stat as f64;
        mean.iter_mut().for_each(|v| *v /= nf);
        let mut var = vec![0.0; m];
        for bi in 0..b {
            for ci in 0..c {
                for li in 0..l {
                    let k = idx(ci, li);
                    let d = x[(bi * c + ci) * l + li] - mean[k];
                    var[k] += d * d;
                }
            }
        }
        var.iter_mut().for_each(|v| *v /= nf);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

        let mut xhat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        for bi in 0..b {
            for ci in 0..c {
                for li in 0..l {
                    let k = idx(ci, li);
                    let i = (bi * c + ci) * l + li;
                    xhat[i] = (x[i] - mean[k]) * inv_std[k];
                    y[i] = gv[k] * xhat[i] + bv[k];
                }
            }
        }
        let stats = BatchNormStats {
            mean: mean.clone(),
            var: var.iter().map(|v| v * nf / (nf - 1.0)).collect(),
        };
        let out = Tensor::from_op(
            y,
            vec![b, c, l],
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g| {
                let mut gg = vec![0.0; m];
                let mut gb = vec![0.0; m];
                // sums of dxhat and dxhat*xhat per statistic
                let mut s1 = vec![0.0; m];
                let mut s2 = vec![0.0; m];
                for bi in 0..b {
                    for ci in 0..c {
                        for li in 0..l {
                            let k = idx(ci, li);
                            let i = (bi * c + ci) * l + li;
                            gg[k] += g[i] * xhat[i];
                            gb[k] += g[i];
                            let dxh = g[i] * gv[k];
                            s1[k] += dxh;
                            s2[k] += dxh * xhat[i];
                        }
                    }
                }
                let mut gx = vec![0.0; b * c * l];
                for bi in 0..b {
                    for ci in 0..c {
                        for li in 0..l {
                            let k = idx(ci, li);
                            let i = (bi * c + ci) * l + li;
                            let dxh = g[i] * gv[k];
                            gx[i] = inv_std[k] / nf * (nf * dxh - s1[k] - xhat[i] * s2[k]);
                        }
                    }
                }
                vec![Some(gx), Some(gg), Some(gb)]
            }),
        );
        Ok((out, stats))
    }

    /// Normalizes with fixed (running) statistics.
    pub fn batch_norm_eval(
        &self,
        gamma: &Tensor,
        beta: &Tensor,
        mean: &[f64],
        var: &[f64],
        axis: NormAxis,
        eps: f64,
    ) -> Result<Tensor> {
        let (b, c, l, m) = check(self, gamma, beta, axis)?;
        if mean.len() != m || var.len() != m {
            return Err(Error::config("batch norm running statistics have the wrong length"));
        }
        let x = self.to_vec();
        let gv = gamma.to_vec();
        let bv = beta.to_vec();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mean = mean.to_vec();
        let idx = move |ci: usize, li: usize| axis.stat_index(ci, li, l);
        let mut xhat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        for bi in 0..b {
            for ci in 0..c {
                for li in 0..l {
                    let k = idx(ci, li);
                    let i = (bi * c + ci) * l + li;
                    xhat[i] = (x[i] - mean[k]) * inv_std[k];
                    y[i] = gv[k] * xhat[i] + bv[k];
                }
            }
        }
        Ok(Tensor::from_op(
            y,
            vec![b, c, l],
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; b * c * l];
                let mut gg = vec![0.0; m];
                let mut gb = vec![0.0; m];
                for bi in 0..b {
                    for ci in 0..c {
                        for li in 0..l {
                            let k = idx(ci, li);
                            let i = (bi * c + ci) * l + li;
                            gx[i] = g[i] * gv[k] * inv_std[k];
                            gg[k] += g[i] * xhat[i];
                            gb[k] += g[i];
                        }
                    }
                }
                vec![Some(gx), Some(gg), Some(gb)]
            }),
        ))
    }
}
