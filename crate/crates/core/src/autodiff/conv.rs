//! Time-axis operators on `[B, C, L]` batches.
//!
//! All of these are cross-correlations: tap `j` of a `K`-tap kernel reads
//! input position `t + j - pad_left`.

use super::Tensor;
use crate::error::{Error, Result};

/// Padding rule for [`Tensor::conv1d_depthwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output length equals input length; `(K-1)/2` zeros on the left and the
    /// remainder on the right.
    SameZero,
    /// All `K-1` zeros on the left, so `out[t]` only reads `x[..=t]`.
    CausalLeft,
}

impl Padding {
    fn left(self, k: usize) -> usize {
        match self {
            Padding::SameZero => (k - 1) / 2,
            Padding::CausalLeft => k - 1,
        }
    }
}

fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        &[a, b, c] => Ok((a, b, c)),
        other => Err(Error::config(format!("{what} expects a rank-3 tensor, got {other:?}"))),
    }
}

impl Tensor {
    /// One kernel row per channel: `x [B,C,S]`, `kernels [C,K]` -> `[B,C,S]`.
    pub fn conv1d_depthwise(&self, kernels: &Tensor, padding: Padding) -> Result<Tensor> {
        let (b, c, s) = dims3(self, "conv1d_depthwise input")?;
        let &[kc, k] = kernels.shape() else {
            return Err(Error::config(format!(
                "conv1d_depthwise kernels must be [C,K], got {:?}",
                kernels.shape()
            )));
        };
        if kc != c {
            return Err(Error::config(format!(
                "conv1d_depthwise: {kc} kernel rows for {c} channels"
            )));
        }
        if k == 0 || k > 2 * s {
            return Err(Error::config(format!(
                "conv1d_depthwise: kernel length {k} invalid for sequence length {s}"
            )));
        }
        let pl = padding.left(k) as isize;
        let x = self.to_vec();
        let w = kernels.to_vec();
        let mut y = vec![0.0; b * c * s];
        for bi in 0..b {
            for ci in 0..c {
                let xr = &x[(bi * c + ci) * s..(bi * c + ci + 1) * s];
                let wr = &w[ci * k..(ci + 1) * k];
                let yr = &mut y[(bi * c + ci) * s..(bi * c + ci + 1) * s];
                for (j, &wv) in wr.iter().enumerate() {
                    // out[t] += w[j] * x[t + j - pl] for valid source indices
                    let shift = j as isize - pl;
                    let t0 = (-shift).max(0) as usize;
                    let t1 = ((s as isize) - shift).min(s as isize).max(0) as usize;
                    if t0 >= t1 {
                        continue;
                    }
                    let src = &xr[(t0 as isize + shift) as usize..(t1 as isize + shift) as usize];
                    for (yv, xv) in yr[t0..t1].iter_mut().zip(src) {
                        *yv += wv * xv;
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            y,
            vec![b, c, s],
            vec![self.clone(), kernels.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; b * c * s];
                let mut gw = vec![0.0; c * k];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * s;
                        let xr = &x[base..base + s];
                        let gr = &g[base..base + s];
                        for j in 0..k {
                            let shift = j as isize - pl;
                            let t0 = (-shift).max(0) as usize;
                            let t1 = ((s as isize) - shift).min(s as isize).max(0) as usize;
                            if t0 >= t1 {
                                continue;
                            }
                            let lo = (t0 as isize + shift) as usize;
                            let hi = (t1 as isize + shift) as usize;
                            let wv = w[ci * k + j];
                            let mut acc = 0.0;
                            for (gv, xv) in gr[t0..t1].iter().zip(&xr[lo..hi]) {
                                acc += gv * xv;
                            }
                            gw[ci * k + j] += acc;
                            for (gxv, gv) in gx[base + lo..base + hi].iter_mut().zip(&gr[t0..t1]) {
                                *gxv += wv * gv;
                            }
                        }
                    }
                }
                vec![Some(gx), Some(gw)]
            }),
        ))
    }

    /// Full-aperture dot products, one kernel per output cell:
    /// `x [B,C,S]`, `kernels [C,T,S]` -> `[B,C,T]`.
    pub fn cell_dot(&self, kernels: &Tensor) -> Result<Tensor> {
        let (b, c, s) = dims3(self, "cell_dot input")?;
        let (kc, t, ks) = dims3(kernels, "cell_dot kernels")?;
        if kc != c || ks != s {
            return Err(Error::config(format!(
                "cell_dot: kernels {:?} do not match input {:?}",
                kernels.shape(),
                self.shape()
            )));
        }
        let x = self.to_vec();
        let w = kernels.to_vec();
        let mut y = vec![0.0; b * c * t];
        for bi in 0..b {
            for ci in 0..c {
                let xr = &x[(bi * c + ci) * s..(bi * c + ci + 1) * s];
                for ti in 0..t {
                    let wr = &w[(ci * t + ti) * s..(ci * t + ti + 1) * s];
                    y[(bi * c + ci) * t + ti] = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
                }
            }
        }
        Ok(Tensor::from_op(
            y,
            vec![b, c, t],
            vec![self.clone(), kernels.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; b * c * s];
                let mut gw = vec![0.0; c * t * s];
                for bi in 0..b {
                    for ci in 0..c {
                        let xoff = (bi * c + ci) * s;
                        for ti in 0..t {
                            let gv = g[(bi * c + ci) * t + ti];
                            if gv == 0.0 {
                                continue;
                            }
                            let woff = (ci * t + ti) * s;
                            for i in 0..s {
                                gx[xoff + i] += gv * w[woff + i];
                                gw[woff + i] += gv * x[xoff + i];
                            }
                        }
                    }
                }
                vec![Some(gx), Some(gw)]
            }),
        ))
    }

    /// Linear interpolation at fractional source coordinates:
    /// `x [B,C,S]`, `coords [C,L]` -> `[B,C,L]`. Samples outside `[0, S-1]`
    /// read as zero.
    pub fn sample_linear(&self, coords: &Tensor) -> Result<Tensor> {
        let (b, c, s) = dims3(self, "sample_linear input")?;
        let &[cc, l] = coords.shape() else {
            return Err(Error::config(format!(
                "sample_linear coordinates must be [C,L], got {:?}",
                coords.shape()
            )));
        };
        if cc != c {
            return Err(Error::config(format!(
                "sample_linear: {cc} coordinate rows for {c} channels"
            )));
        }
        let x = self.to_vec();
        let p = coords.to_vec();
        // per coordinate: lower index and weight of the upper neighbour
        let taps: Vec<(isize, f64)> = p
            .iter()
            .map(|&v| {
                let f = v.floor();
                (f as isize, v - f)
            })
            .collect();
        let read = move |row: &[f64], i: isize| -> f64 {
            if i >= 0 && (i as usize) < row.len() {
                row[i as usize]
            } else {
                0.0
            }
        };
        let mut y = vec![0.0; b * c * l];
        for bi in 0..b {
            for ci in 0..c {
                let xr = &x[(bi * c + ci) * s..(bi * c + ci + 1) * s];
                for li in 0..l {
                    let (i0, w) = taps[ci * l + li];
                    y[(bi * c + ci) * l + li] = (1.0 - w) * read(xr, i0) + w * read(xr, i0 + 1);
                }
            }
        }
        Ok(Tensor::from_op(
            y,
            vec![b, c, l],
            vec![self.clone(), coords.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; b * c * s];
                let mut gp = vec![0.0; c * l];
                for bi in 0..b {
                    for ci in 0..c {
                        let xoff = (bi * c + ci) * s;
                        let xr = &x[xoff..xoff + s];
                        for li in 0..l {
                            let gv = g[(bi * c + ci) * l + li];
                            let (i0, w) = taps[ci * l + li];
                            gp[ci * l + li] += gv * (read(xr, i0 + 1) - read(xr, i0));
                            if i0 >= 0 && (i0 as usize) < s {
                                gx[xoff + i0 as usize] += gv * (1.0 - w);
                            }
                            let i1 = i0 + 1;
                            if i1 >= 0 && (i1 as usize) < s {
                                gx[xoff + i1 as usize] += gv * w;
                            }
                        }
                    }
                }
                vec![Some(gx), Some(gp)]
            }),
        ))
    }

    /// The same affine map applied at every time position:
    /// `x [B,C,L]`, `weight [O,C]`, `bias [O]` -> `[B,O,L]`.
    pub fn channel_linear(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (b, c, l) = dims3(self, "channel_linear input")?;
        let &[o, wc] = weight.shape() else {
            return Err(Error::config(format!(
                "channel_linear weight must be [O,C], got {:?}",
                weight.shape()
            )));
        };
        if wc != c || bias.numel() != o {
            return Err(Error::config(format!(
                "channel_linear: weight {:?} / bias {:?} do not fit {c} input channels",
                weight.shape(),
                bias.shape()
            )));
        }
        let x = self.to_vec();
        let w = weight.to_vec();
        let bv = bias.to_vec();
        let mut y = vec![0.0; b * o * l];
        for bi in 0..b {
            for oi in 0..o {
                let yr = &mut y[(bi * o + oi) * l..(bi * o + oi + 1) * l];
                yr.iter_mut().for_each(|v| *v = bv[oi]);
                for ci in 0..c {
                    let wv = w[oi * c + ci];
                    let xr = &x[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                    for (yv, xv) in yr.iter_mut().zip(xr) {
                        *yv += wv * xv;
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            y,
            vec![b, o, l],
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; b * c * l];
                let mut gw = vec![0.0; o * c];
                let mut gb = vec![0.0; o];
                for bi in 0..b {
                    for oi in 0..o {
                        let gr = &g[(bi * o + oi) * l..(bi * o + oi + 1) * l];
                        gb[oi] += gr.iter().sum::<f64>();
                        for ci in 0..c {
                            let xoff = (bi * c + ci) * l;
                            let xr = &x[xoff..xoff + l];
                            gw[oi * c + ci] += gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
                            let wv = w[oi * c + ci];
                            for (gxv, gv) in gx[xoff..xoff + l].iter_mut().zip(gr) {
                                *gxv += wv * gv;
                            }
                        }
                    }
                }
                vec![Some(gx), Some(gw), Some(gb)]
            }),
        ))
    }

    /// Left-padded multi-channel convolution:
    /// `x [B,Cin,S]`, `weight [Cout,Cin,K]` -> `[B,Cout,S]`.
    pub fn causal_conv(&self, weight: &Tensor) -> Result<Tensor> {
        let (b, ci, s) = dims3(self, "causal_conv input")?;
        let (co, wci, k) = dims3(weight, "causal_conv weight")?;
        if wci != ci || k == 0 {
            return Err(Error::config(format!(
                "causal_conv: weight {:?} does not fit input {:?}",
                weight.shape(),
                self.shape()
            )));
        }
        let x = self.to_vec();
        let w = weight.to_vec();
        let mut y = vec![0.0; b * co * s];
        for bi in 0..b {
            for oc in 0..co {
                let yr = &mut y[(bi * co + oc) * s..(bi * co + oc + 1) * s];
                for ic in 0..ci {
                    let xr = &x[(bi * ci + ic) * s..(bi * ci + ic + 1) * s];
                    for j in 0..k {
                        // tap j reads x[t - (k-1-j)]
                        let lag = k - 1 - j;
                        if lag >= s {
                            continue;
                        }
                        let wv = w[(oc * ci + ic) * k + j];
                        for (yv, xv) in yr[lag..].iter_mut().zip(&xr[..s - lag]) {
                            *yv += wv * xv;
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            y,
            vec![b, co, s],
            vec![self.clone(), weight.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; b * ci * s];
                let mut gw = vec![0.0; co * ci * k];
                for bi in 0..b {
                    for oc in 0..co {
                        let gr = &g[(bi * co + oc) * s..(bi * co + oc + 1) * s];
                        for ic in 0..ci {
                            let xoff = (bi * ci + ic) * s;
                            for j in 0..k {
                                let lag = k - 1 - j;
                                if lag >= s {
                                    continue;
                                }
                                let widx = (oc * ci + ic) * k + j;
                                let wv = w[widx];
                                let mut acc = 0.0;
                                for (gv, xv) in gr[lag..].iter().zip(&x[xoff..xoff + s - lag]) {
                                    acc += gv * xv;
                                }
                                gw[widx] += acc;
                                for (gxv, gv) in
                                    gx[xoff..xoff + s - lag].iter_mut().zip(&gr[lag..])
                                {
                                    *gxv += wv * gv;
                                }
                            }
                        }
                    }
                }
                vec![Some(gx), Some(gw)]
            }),
        ))
    }
}
