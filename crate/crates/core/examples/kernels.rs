//! Print the kernel each family produces for a few parameter values, and
//! the effect of an affine warp on a ramp.
//!
//! cargo run --release --example kernels

use delaynet::kernels::{affine_warp, gabor_kernel, gauss_kernel, lognormal_kernel, KernelFamily, KernelParams, GABOR_BANDWIDTH};
use delaynet::Tensor;

fn show(label: &str, k: &Tensor) {
    let row: Vec<String> = k.to_vec().iter().map(|v| format!("{v:5.2}")).collect();
    println!("{label:<28} {}", row.join(" "));
}

fn main() -> delaynet::Result<()> {
    let support = 11;
    for (mu, sigma) in [(0.0, 0.0), (-3.0, 0.0), (2.0, 0.7)] {
        let p = KernelParams::from_values(KernelFamily::Gauss, &[("mu", vec![mu]), ("sigma", vec![sigma])])?;
        show(&format!("gauss mu={mu} sigma={sigma}"), &gauss_kernel(&p, support)?);
    }
    for (s, t) in [(0.0, 0.0), (0.0, 0.5), (1.0, 0.0)] {
        let p = KernelParams::from_values(KernelFamily::LogNormal, &[("s", vec![s]), ("t", vec![t])])?;
        show(&format!("lognormal s={s} t={t}"), &lognormal_kernel(&p, support)?);
    }
    let p = KernelParams::from_values(KernelFamily::Gabor, &[("s", vec![0.0]), ("mu", vec![0.0])])?;
    let (re, im) = gabor_kernel(&p, 24, GABOR_BANDWIDTH, support)?;
    show("gabor real", &re);
    show("gabor imaginary", &im);

    // shift by two steps, then stretch around the window centre
    let ramp = Tensor::new((0..support).map(|v| v as f64).collect(), &[1, 1, support])?;
    for (s, t) in [(0.0, 0.0), (0.0, -2.0), (0.1, 0.0)] {
        let p = KernelParams::from_values(KernelFamily::Affine, &[("s", vec![s]), ("t", vec![t])])?;
        show(&format!("affine ramp s={s} t={t}"), &affine_warp(&ramp, &p)?);
    }
    Ok(())
}
