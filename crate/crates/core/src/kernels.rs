//! Learnable 1-D filters built from a handful of scalar parameters.
//!
//! Every family is expressed with differentiable tensor operations, so the
//! gradients with respect to the filter parameters come out of the same
//! reverse pass that trains the rest of the network.
//!
//! Offsets follow the cross-correlation convention of
//! [`Tensor::conv1d_depthwise`]: a kernel whose mass sits at offset `o`
//! makes `out[t]` read `x[t + o]`, so a delay of `d` steps is a peak at
//! `o = -d`.

use std::f64::consts::{E, PI};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{ElemOp, Padding, Tensor};
use crate::error::{Error, Result};

/// Gabor bandwidth in octaves.
pub const GABOR_BANDWIDTH: f64 = 2.5;
/// Guard added under the square root of the Gabor magnitude.
pub const GABOR_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Identity,
    Affine,
    Gauss,
    #[serde(alias = "loggauss")]
    LogNormal,
    Gabor,
}

impl KernelFamily {
    /// Names of the scalar parameters a filter of this family learns.
    pub fn fields(self) -> &'static [&'static str] {
        match self {
            KernelFamily::Identity => &[],
            KernelFamily::Affine | KernelFamily::LogNormal => &["s", "t"],
            KernelFamily::Gauss => &["mu", "sigma"],
            KernelFamily::Gabor => &["s", "mu"],
        }
    }

    /// Output channels produced per filter (the Gabor pair yields magnitude
    /// and angle).
    pub fn channel_multiplier(self) -> usize {
        match self {
            KernelFamily::Gabor => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Identity => "identity",
            KernelFamily::Affine => "affine",
            KernelFamily::Gauss => "gauss",
            KernelFamily::LogNormal => "lognormal",
            KernelFamily::Gabor => "gabor",
        }
    }
}

/// Mean and standard deviation of the normal initializer of one field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldInit {
    pub field: &'static str,
    pub mean: f64,
    pub std: f64,
}

/// Initialization distributions of a family for inputs of length `s_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelInit {
    pub family: KernelFamily,
    pub fields: Vec<FieldInit>,
}

impl KernelInit {
    pub fn for_family(family: KernelFamily, s_len: usize) -> KernelInit {
        let s = s_len as f64;
        let f = |field, mean, std| FieldInit { field, mean, std };
        let fields = match family {
            KernelFamily::Identity => vec![],
            KernelFamily::Affine => vec![f("s", 0.0, 0.15), f("t", 0.0, 0.1)],
            KernelFamily::Gauss => vec![f("mu", 0.0, 0.01 * s / 2.0), f("sigma", 0.0, 0.1)],
            KernelFamily::LogNormal => vec![f("s", 0.0, 0.5), f("t", 0.0, 0.1)],
            KernelFamily::Gabor => vec![f("s", 2.0, 1.0), f("mu", 0.0, 0.2 / s)],
        };
        KernelInit { family, fields }
    }

    fn sample<R: Rng + ?Sized>(&self, field: &str, count: usize, rng: &mut R) -> Vec<f64> {
        let spec = self
            .fields
            .iter()
            .find(|fi| fi.field == field)
            .expect("field belongs to family");
        let normal = Normal::new(spec.mean, spec.std).expect("finite std");
        (0..count).map(|_| normal.sample(rng)).collect()
    }
}

/// Learnable parameters of `count` filters of one family. Each field is a
/// `[count]` tensor; fields the family does not use are `None`.
#[derive(Debug, Clone)]
pub struct KernelParams {
    pub family: KernelFamily,
    pub count: usize,
    pub s: Option<Tensor>,
    pub t: Option<Tensor>,
    pub mu: Option<Tensor>,
    pub sigma: Option<Tensor>,
}

impl KernelParams {
    /// Draws `count` filters from the family initializer.
    pub fn init<R: Rng + ?Sized>(family: KernelFamily, count: usize, s_len: usize, rng: &mut R) -> KernelParams {
        let init = KernelInit::for_family(family, s_len);
        let mut p = KernelParams { family, count, s: None, t: None, mu: None, sigma: None };
        for &field in family.fields() {
            let values = init.sample(field, count, rng);
            let tensor = Tensor::param(values, &[count]).expect("length matches count");
            *p.slot_mut(field) = Some(tensor);
        }
        p
    }

    /// Parameters with explicit values; `values` maps field name to `[count]`.
    pub fn from_values(family: KernelFamily, values: &[(&str, Vec<f64>)]) -> Result<KernelParams> {
        let count = values.first().map_or(0, |(_, v)| v.len());
        let mut p = KernelParams { family, count, s: None, t: None, mu: None, sigma: None };
        for &field in family.fields() {
            let v = values
                .iter()
                .find(|(name, _)| *name == field)
                .ok_or_else(|| Error::config(format!("{} filter needs field {field}", family.name())))?;
            if v.1.len() != count {
                return Err(Error::config("kernel parameter fields differ in length"));
            }
            *p.slot_mut(field) = Some(Tensor::param(v.1.clone(), &[count])?);
        }
        Ok(p)
    }

    fn slot_mut(&mut self, field: &str) -> &mut Option<Tensor> {
        match field {
            "s" => &mut self.s,
            "t" => &mut self.t,
            "mu" => &mut self.mu,
            "sigma" => &mut self.sigma,
            other => unreachable!("unknown kernel field {other}"),
        }
    }

    fn field(&self, name: &str) -> Result<&Tensor> {
        let slot = match name {
            "s" => &self.s,
            "t" => &self.t,
            "mu" => &self.mu,
            "sigma" => &self.sigma,
            _ => &None,
        };
        slot.as_ref().ok_or_else(|| {
            Error::config(format!("{} filter has no parameter {name}", self.family.name()))
        })
    }

    /// `(field name, tensor)` for every allocated field.
    pub fn tensors(&self) -> Vec<(&'static str, Tensor)> {
        self.family
            .fields()
            .iter()
            .filter_map(|&f| self.field(f).ok().map(|t| (f, t.clone())))
            .collect()
    }

    /// Human-readable parameter values, used in error messages.
    pub fn describe(&self) -> String {
        let parts: Vec<String> = self
            .tensors()
            .into_iter()
            .map(|(name, t)| {
                let v = t.to_vec();
                let shown: Vec<String> = v.iter().take(6).map(|x| format!("{x:.4}")).collect();
                format!("{name}=[{}{}]", shown.join(", "), if v.len() > 6 { ", ..." } else { "" })
            })
            .collect();
        format!("{} {}", self.family.name(), parts.join(" "))
    }

    fn expect_family(&self, family: KernelFamily) -> Result<()> {
        if self.family != family {
            return Err(Error::config(format!(
                "expected {} parameters, got {}",
                family.name(),
                self.family.name()
            )));
        }
        Ok(())
    }
}

/// Largest odd length not exceeding `s_len`: the full-aperture support.
pub fn full_support(s_len: usize) -> usize {
    if s_len % 2 == 1 {
        s_len
    } else {
        s_len.saturating_sub(1).max(1)
    }
}

/// `[count, k]` grid of centered integer offsets `-(k-1)/2 ..= (k-1)/2`.
pub fn centered_offsets(count: usize, k: usize) -> Result<Tensor> {
    if k % 2 == 0 {
        return Err(Error::config(format!("kernel support must be odd, got {k}")));
    }
    let half = (k as f64 - 1.0) / 2.0;
    let row: Vec<f64> = (0..k).map(|i| i as f64 - half).collect();
    Tensor::new(row.repeat(count), &[count, k])
}

fn check_offsets(p: &KernelParams, offsets: &Tensor) -> Result<usize> {
    match offsets.shape() {
        &[n, k] if n == p.count => Ok(k),
        other => Err(Error::config(format!(
            "offset grid {other:?} does not match {} filters",
            p.count
        ))),
    }
}

/// Gaussian bump `exp(-((o - mu) / e^sigma)^2 / 2)` evaluated at `offsets [N,K]`.
/// `e^sigma` is the standard deviation; the normalizing constant is dropped so
/// the peak value is 1.
pub fn gauss_at(p: &KernelParams, offsets: &Tensor) -> Result<Tensor> {
    p.expect_family(KernelFamily::Gauss)?;
    let k = check_offsets(p, offsets)?;
    let mu = p.field("mu")?.expand_last(k);
    let width = p.field("sigma")?.exp()?.expand_last(k);
    let z = offsets.sub(&mu)?.div(&width)?;
    z.square()?.mul_scalar(-0.5)?.exp()
}

/// `[N, K]` Gaussian kernels on the centered grid.
pub fn gauss_kernel(p: &KernelParams, support: usize) -> Result<Tensor> {
    gauss_at(p, &centered_offsets(p.count, support)?)
}

/// Unshifted log-normal basis `k(x) = exp(-(ln x)^2 / 2) / x`, zero for `x <= 0`.
pub fn lognormal_base(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (-(x.ln().powi(2)) / 2.0).exp() / x
    }
}

const LOG_FLOOR: f64 = 1e-12;

/// Log-normal kernel evaluated at `offsets [N,K]`.
///
/// The basis is shifted so its mode (`x = e^-1`) sits at base coordinate 0,
/// then stretched by `a = e^s + 3` and translated by `a * t`: offset `o`
/// reads the basis at `x = o / a - t + e^-1`.
pub fn lognormal_at(p: &KernelParams, offsets: &Tensor) -> Result<Tensor> {
    p.expect_family(KernelFamily::LogNormal)?;
    let k = check_offsets(p, offsets)?;
    let scale = p.field("s")?.exp()?.add_scalar(3.0)?.expand_last(k);
    let shift = p.field("t")?.expand_last(k);
    let x = offsets.div(&scale)?.sub(&shift)?.add_scalar(E.recip())?;
    // zero outside the support of the basis; the mask carries no gradient
    let mask: Vec<f64> = x.data().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
    let mask = Tensor::new(mask, x.shape())?;
    let safe = x.elementwise(ElemOp::Max, Some(&Tensor::scalar(LOG_FLOOR)))?;
    let log = safe.ln()?;
    let bump = log.square()?.mul_scalar(-0.5)?.exp()?;
    bump.div(&safe)?.mul(&mask)
}

/// `[N, K]` log-normal kernels on the centered grid.
pub fn lognormal_kernel(p: &KernelParams, support: usize) -> Result<Tensor> {
    lognormal_at(p, &centered_offsets(p.count, support)?)
}

/// Center frequency (cycles per step) of a Gabor filter for input length `s_len`.
pub fn gabor_omega(s: f64, s_len: usize) -> f64 {
    let low = 2.0 / s_len as f64;
    (1.0 / (1.0 + (-s).exp())) * (0.5 - low) + low
}

/// Envelope width factor: `sigma = omega * gabor_width_factor(bw)`.
pub fn gabor_width_factor(bw: f64) -> f64 {
    let p = 2f64.powf(bw);
    (2f64.ln() / PI).sqrt() * (p + 1.0) / (p - 1.0)
}

/// Real and imaginary Gabor kernels at `offsets [N,K]`.
pub fn gabor_at(p: &KernelParams, offsets: &Tensor, s_len: usize, bw: f64) -> Result<(Tensor, Tensor)> {
    p.expect_family(KernelFamily::Gabor)?;
    if s_len < 5 {
        return Err(Error::config(format!("Gabor filters need input length >= 5, got {s_len}")));
    }
    if !(bw > 0.0) {
        return Err(Error::config(format!("Gabor bandwidth must be positive, got {bw}")));
    }
    let k = check_offsets(p, offsets)?;
    let low = 2.0 / s_len as f64;
    let omega = p.field("s")?.sigmoid()?.mul_scalar(0.5 - low)?.add_scalar(low)?;
    let width = omega.mul_scalar(gabor_width_factor(bw))?.expand_last(k);
    let omega = omega.expand_last(k);
    let d = offsets.sub(&p.field("mu")?.expand_last(k))?;
    let env = d.div(&width)?.square()?.mul_scalar(-0.5)?.exp()?;
    let phase = d.mul(&omega)?.mul_scalar(2.0 * PI)?;
    Ok((env.mul(&phase.cos()?)?, env.mul(&phase.sin()?)?))
}

/// `[N, K]` real and imaginary Gabor kernels on the centered grid.
pub fn gabor_kernel(p: &KernelParams, s_len: usize, bw: f64, support: usize) -> Result<(Tensor, Tensor)> {
    gabor_at(p, &centered_offsets(p.count, support)?, s_len, bw)
}

/// Magnitude and angle of the complex response of `x [B,C,S]` to kernel
/// pairs `re, im [C,K]`.
pub fn gabor_response(x: &Tensor, re: &Tensor, im: &Tensor, eps: f64) -> Result<(Tensor, Tensor)> {
    if !(eps > 0.0) {
        return Err(Error::config(format!("Gabor magnitude guard must be positive, got {eps}")));
    }
    let o_re = x.conv1d_depthwise(re, Padding::SameZero)?;
    let o_im = x.conv1d_depthwise(im, Padding::SameZero)?;
    gabor_polar(&o_re, &o_im, eps)
}

/// `sqrt(re^2 + im^2 + eps)` and `atan2(im, re)`.
pub fn gabor_polar(o_re: &Tensor, o_im: &Tensor, eps: f64) -> Result<(Tensor, Tensor)> {
    let power = o_re.square()?.add(&o_im.square()?)?.add_scalar(eps)?;
    let mag = power.sqrt()?;
    let ang = o_im.elementwise(ElemOp::Atan2, Some(o_re))?;
    mag.ensure_finite("gabor magnitude")?;
    Ok((mag, ang))
}

/// Source coordinates of the affine time warp for `count` channels.
///
/// `rel [N,L]` holds `u - c` for every output position `u`, with `c` the
/// anchor of the scaling; the result is `a * (u - c) + a * t + c` with
/// `a = e^(5 s)`.
pub fn affine_coords(p: &KernelParams, rel: &Tensor, center: f64) -> Result<Tensor> {
    p.expect_family(KernelFamily::Affine)?;
    let l = check_offsets(p, rel)?;
    let a = p.field("s")?.mul_scalar(5.0)?.exp()?.expand_last(l);
    let t = p.field("t")?.expand_last(l);
    a.mul(&rel.add(&t)?)?.add_scalar(center)
}

/// Affine time warp of `x [B,C,S]` with one filter per channel. Scaling is
/// anchored at the window center `(S-1)/2`; samples falling outside the
/// window read as zero.
pub fn affine_warp(x: &Tensor, p: &KernelParams) -> Result<Tensor> {
    let &[_, c, s] = x.shape() else {
        return Err(Error::config(format!("affine_warp expects [B,C,S], got {:?}", x.shape())));
    };
    if p.count != c {
        return Err(Error::config(format!("affine_warp: {} filters for {c} channels", p.count)));
    }
    let center = (s as f64 - 1.0) / 2.0;
    let row: Vec<f64> = (0..s).map(|u| u as f64 - center).collect();
    let rel = Tensor::new(row.repeat(c), &[c, s])?;
    let coords = affine_coords(p, &rel, center)?;
    x.sample_linear(&coords)
}

/// Single-filter parameters drawn from the family initializer.
pub fn init_params<R: Rng + ?Sized>(family: KernelFamily, s_len: usize, rng: &mut R) -> KernelParams {
    KernelParams::init(family, 1, s_len, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gauss(mu: f64, sigma: f64) -> KernelParams {
        KernelParams::from_values(KernelFamily::Gauss, &[("mu", vec![mu]), ("sigma", vec![sigma])]).unwrap()
    }

    #[test]
    fn gauss_unit_sigma_is_standard_normal_shape() {
        let k = gauss_kernel(&gauss(0.0, 0.0), 7).unwrap().to_vec();
        for (i, v) in k.iter().enumerate() {
            let x = i as f64 - 3.0;
            assert!((v - (-x * x / 2.0).exp()).abs() < 1e-15);
        }
        assert_eq!(k[3], 1.0);
        for i in 0..3 {
            assert_eq!(k[i], k[6 - i]);
        }
    }

    #[test]
    fn gauss_peak_follows_mu() {
        let k = gauss_kernel(&gauss(2.0, 0.0), 9).unwrap().to_vec();
        let argmax = k.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(argmax as isize - 4, 2);
        assert!(k.iter().all(|v| *v > 0.0 && *v <= 1.0));
    }

    #[test]
    fn even_support_rejected() {
        assert!(matches!(gauss_kernel(&gauss(0.0, 0.0), 8), Err(Error::Config(_))));
    }

    #[test]
    fn lognormal_base_mode_and_peak() {
        let peak = lognormal_base(E.recip());
        assert!((peak - 0.5f64.exp()).abs() < 1e-12);
        for dx in [-1e-3, 1e-3] {
            assert!(lognormal_base(E.recip() + dx) < peak);
        }
        assert_eq!(lognormal_base(0.0), 0.0);
        assert_eq!(lognormal_base(-2.0), 0.0);
    }

    #[test]
    fn lognormal_kernel_matches_scalar_formula() {
        let p = KernelParams::from_values(KernelFamily::LogNormal, &[("s", vec![0.3]), ("t", vec![-0.4])]).unwrap();
        let k = lognormal_kernel(&p, 11).unwrap().to_vec();
        let a = 0.3f64.exp() + 3.0;
        for (i, v) in k.iter().enumerate() {
            let o = i as f64 - 5.0;
            let want = lognormal_base(o / a + 0.4 + E.recip());
            assert!((v - want).abs() < 1e-12, "offset {o}: {v} vs {want}");
        }
        // the mode lands at offset a*t
        let p0 = KernelParams::from_values(KernelFamily::LogNormal, &[("s", vec![0.0]), ("t", vec![0.0])]).unwrap();
        let k0 = lognormal_kernel(&p0, 11).unwrap().to_vec();
        assert!((k0[5] - 0.5f64.exp()).abs() < 1e-12);
        assert!(k0[..4].iter().all(|v| *v == 0.0));
        assert!(k0[4] > 0.0 && k0[4] < k0[5]);
    }

    #[test]
    fn lognormal_far_left_is_zero() {
        let p = KernelParams::from_values(KernelFamily::LogNormal, &[("s", vec![-5.0]), ("t", vec![3.0])]).unwrap();
        let k = lognormal_kernel(&p, 9).unwrap().to_vec();
        assert!(k.iter().all(|v| *v == 0.0), "{k:?}");
    }

    #[test]
    fn gabor_omega_limits_and_midpoint() {
        assert!((gabor_omega(0.0, 100) - 0.26).abs() < 1e-15);
        assert!((gabor_omega(-50.0, 100) - 0.02).abs() < 1e-12);
        assert!((gabor_omega(50.0, 100) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gabor_at_mu_is_unit_real() {
        let p = KernelParams::from_values(KernelFamily::Gabor, &[("s", vec![1.3]), ("mu", vec![0.0])]).unwrap();
        let (re, im) = gabor_kernel(&p, 40, GABOR_BANDWIDTH, 9).unwrap();
        assert!((re.to_vec()[4] - 1.0).abs() < 1e-15);
        assert_eq!(im.to_vec()[4], 0.0);
        assert!(matches!(gabor_kernel(&p, 4, GABOR_BANDWIDTH, 3), Err(Error::Config(_))));
    }

    #[test]
    fn gabor_response_on_zero_and_constant_input() {
        let p = KernelParams::from_values(KernelFamily::Gabor, &[("s", vec![2.0]), ("mu", vec![0.3])]).unwrap();
        let (re, im) = gabor_kernel(&p, 20, GABOR_BANDWIDTH, 19).unwrap();
        let zero = Tensor::zeros(&[1, 1, 20]);
        let (mag, ang) = gabor_response(&zero, &re, &im, GABOR_EPS).unwrap();
        assert!(mag.to_vec().iter().all(|v| (*v - GABOR_EPS.sqrt()).abs() < 1e-18));
        assert!(ang.to_vec().iter().all(|v| *v == 0.0));
        let ones = Tensor::new(vec![1.0; 20], &[1, 1, 20]).unwrap();
        let (mag, _) = gabor_response(&ones, &re, &im, GABOR_EPS).unwrap();
        assert!(mag.to_vec().iter().any(|v| *v > 10.0 * GABOR_EPS.sqrt()));
    }

    #[test]
    fn gabor_response_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = KernelParams::init(KernelFamily::Gabor, 2, 16, &mut rng);
        let (re, im) = gabor_kernel(&p, 16, GABOR_BANDWIDTH, 7).unwrap();
        let xv: Vec<f64> = (0..2 * 2 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::new(xv.clone(), &[2, 2, 16]).unwrap();
        let (mag, ang) = gabor_response(&x, &re, &im, GABOR_EPS).unwrap();
        let (rv, iv) = (re.to_vec(), im.to_vec());
        let (mag, ang) = (mag.to_vec(), ang.to_vec());
        for b in 0..2 {
            for c in 0..2 {
                for t in 0..16 {
                    let (mut sr, mut si) = (0.0, 0.0);
                    for j in 0..7 {
                        let src = t as isize + j as isize - 3;
                        if (0..16).contains(&src) {
                            let xv = xv[(b * 2 + c) * 16 + src as usize];
                            sr += rv[c * 7 + j] * xv;
                            si += iv[c * 7 + j] * xv;
                        }
                    }
                    let i = (b * 2 + c) * 16 + t;
                    assert!((mag[i] - (sr * sr + si * si + GABOR_EPS).sqrt()).abs() < 1e-10);
                    assert!((ang[i] - si.atan2(sr)).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn affine_neutral_and_unit_shift() {
        let xv: Vec<f64> = (0..10).map(|v| (v as f64 * 0.9).sin()).collect();
        let x = Tensor::new(xv.clone(), &[1, 1, 10]).unwrap();
        let id = KernelParams::from_values(KernelFamily::Affine, &[("s", vec![0.0]), ("t", vec![0.0])]).unwrap();
        assert_eq!(affine_warp(&x, &id).unwrap().to_vec(), xv);
        let shift = KernelParams::from_values(KernelFamily::Affine, &[("s", vec![0.0]), ("t", vec![1.0])]).unwrap();
        let y = affine_warp(&x, &shift).unwrap().to_vec();
        for u in 0..9 {
            assert!((y[u] - xv[u + 1]).abs() < 1e-15);
        }
        assert_eq!(y[9], 0.0);
    }

    #[test]
    fn affine_matches_interpolation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s_len = 13;
        let xv: Vec<f64> = (0..2 * s_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::new(xv.clone(), &[2, 1, s_len]).unwrap();
        let p = KernelParams::from_values(KernelFamily::Affine, &[("s", vec![0.1]), ("t", vec![0.3])]).unwrap();
        let y = affine_warp(&x, &p).unwrap().to_vec();
        let a = 0.5f64.exp();
        let c = (s_len as f64 - 1.0) / 2.0;
        for b in 0..2 {
            let row = &xv[b * s_len..(b + 1) * s_len];
            let at = |i: i64| if i >= 0 && (i as usize) < s_len { row[i as usize] } else { 0.0 };
            for u in 0..s_len {
                let src = a * (u as f64 - c) + a * 0.3 + c;
                let lo = src.floor();
                let w = src - lo;
                let want = (1.0 - w) * at(lo as i64) + w * at(lo as i64 + 1);
                assert!((y[b * s_len + u] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_matches_distributions() {
        let a = KernelParams::init(KernelFamily::Gauss, 3, 100, &mut ChaCha8Rng::seed_from_u64(5));
        let b = KernelParams::init(KernelFamily::Gauss, 3, 100, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a.mu.as_ref().unwrap().to_vec(), b.mu.as_ref().unwrap().to_vec());

        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let g = KernelParams::init(KernelFamily::Gauss, 10_000, 100, &mut rng);
        let mu = g.mu.unwrap().to_vec();
        let mean = mu.iter().sum::<f64>() / mu.len() as f64;
        let std = (mu.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / mu.len() as f64).sqrt();
        assert!((std - 0.5).abs() < 0.025, "{std}");

        let gb = KernelParams::init(KernelFamily::Gabor, 10_000, 100, &mut rng);
        let s = gb.s.unwrap().to_vec();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert!((mean - 2.0).abs() < 0.1, "{mean}");
        assert!(KernelParams::init(KernelFamily::Identity, 4, 100, &mut rng).tensors().is_empty());
    }

    #[test]
    fn kernel_families_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x = Tensor::new((0..2 * 2 * 15).map(|_| rng.gen_range(-1.0..1.0)).collect(), &[2, 2, 15]).unwrap();
            let w = Tensor::new((0..60).map(|_| rng.gen_range(-1.0..1.0)).collect(), &[2, 2, 15]).unwrap();
            let g = KernelParams::from_values(
                KernelFamily::Gauss,
                &[("mu", vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]), ("sigma", vec![rng.gen_range(-0.5..0.8), rng.gen_range(-0.5..0.8)])],
            )
            .unwrap();
            let params: Vec<Tensor> = g.tensors().into_iter().map(|(_, t)| t).collect();
            let f = || {
                let k = gauss_kernel(&g, 7)?;
                Ok(x.conv1d_depthwise(&k, Padding::SameZero)?.mul(&w)?.sum())
            };
            let err = grad_check(f, &params, 1e-5).unwrap().max_rel_error;
            assert!(err < 1e-4, "gauss {err}");

            let l = KernelParams::from_values(
                KernelFamily::LogNormal,
                &[("s", vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]), ("t", vec![rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)])],
            )
            .unwrap();
            let params: Vec<Tensor> = l.tensors().into_iter().map(|(_, t)| t).collect();
            let f = || {
                let k = lognormal_kernel(&l, 9)?;
                Ok(x.conv1d_depthwise(&k, Padding::SameZero)?.mul(&w)?.sum())
            };
            let err = grad_check(f, &params, 1e-6).unwrap().max_rel_error;
            assert!(err < 1e-4, "lognormal {err}");

            let a = KernelParams::from_values(
                KernelFamily::Affine,
                &[("s", vec![rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)]), ("t", vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])],
            )
            .unwrap();
            let params: Vec<Tensor> = a.tensors().into_iter().map(|(_, t)| t).collect();
            let f = || Ok(affine_warp(&x, &a)?.mul(&w)?.sum());
            let err = grad_check(f, &params, 1e-6).unwrap().max_rel_error;
            assert!(err < 1e-4, "affine {err}");

            let gb = KernelParams::from_values(
                KernelFamily::Gabor,
                &[("s", vec![rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0)]), ("mu", vec![rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)])],
            )
            .unwrap();
            let params: Vec<Tensor> = gb.tensors().into_iter().map(|(_, t)| t).collect();
            let f = || {
                let (re, im) = gabor_kernel(&gb, 15, GABOR_BANDWIDTH, 7)?;
                let (mag, ang) = gabor_response(&x, &re, &im, GABOR_EPS)?;
                Ok(mag.mul(&w)?.sum().add(&ang.mul(&w)?.sum())?)
            };
            let err = grad_check(f, &params, 1e-6).unwrap().max_rel_error;
            assert!(err < 1e-3, "gabor {err}");
        }
    }
}
