//! Image-quality metrics and the per-run metric report.
//!
//! PSNR uses peak 1.0 (the data range of preprocessed scenes). SSIM uses an
//! 11x11 Gaussian window with sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range
//! 1.0, averaged over valid window positions. Identical reconstructions give
//! the +infinity PSNR sentinel, serialized as the string "inf".

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::num::Real;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio in dB: 10 log10(peak^2 / MSE).
pub fn psnr<T: Real>(a: &Array2<T>, b: &Array2<T>, peak: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dim(format!("psnr: {:?} vs {:?}", a.dim(), b.dim())));
    }
    if peak <= 0.0 {
        return Err(Error::Config("psnr peak must be positive".into()));
    }
    let mse: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = x.to_f64x() - y.to_f64x();
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (peak * peak / mse).log10())
    }
}

/// Valid-mode correlation with a 1-D kernel along rows then columns.
fn filter_valid(img: &Array2<f64>, kernel: &[f64]) -> Array2<f64> {
    let k = kernel.len();
    let (h, w) = img.dim();
    let mut rows = Array2::<f64>::zeros((h, w - k + 1));
    for i in 0..h {
        for j in 0..w - k + 1 {
            let mut acc = 0.0;
            for (u, &kv) in kernel.iter().enumerate() {
                acc += kv * img[[i, j + u]];
            }
            rows[[i, j]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h - k + 1, w - k + 1));
    for i in 0..h - k + 1 {
        for j in 0..w - k + 1 {
            let mut acc = 0.0;
            for (u, &kv) in kernel.iter().enumerate() {
                acc += kv * rows[[i + u, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Structural similarity index, mean over valid windows; 1.0 iff identical.
pub fn ssim<T: Real>(a: &Array2<T>, b: &Array2<T>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dim(format!("ssim: {:?} vs {:?}", a.dim(), b.dim())));
    }
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Config(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    // normalized separable Gaussian; the outer product reproduces the
    // normalized 2-D window exactly
    let c = (SSIM_WINDOW / 2) as f64;
    let mut g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|u| (-((u as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);

    let af = a.mapv(|v| v.to_f64x());
    let bf = b.mapv(|v| v.to_f64x());
    let mu_a = filter_valid(&af, &g);
    let mu_b = filter_valid(&bf, &g);
    let e_aa = filter_valid(&(&af * &af), &g);
    let e_bb = filter_valid(&(&bf * &bf), &g);
    let e_ab = filter_valid(&(&af * &bf), &g);

    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    for ((&ma, &mb), ((&aa, &bb), &ab)) in mu_a
        .iter()
        .zip(mu_b.iter())
        .zip(e_aa.iter().zip(e_bb.iter()).zip(e_ab.iter()))
    {
        let va = aa - ma * ma;
        let vb = bb - mb * mb;
        let cov = ab - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// Format with 6 significant digits (the CSV round-trip representation);
/// infinities become "inf".
pub fn fmt_sig(x: f64) -> String {
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0.00000".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-4..=14).contains(&exp) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Parse a value written by [`fmt_sig`].
pub fn parse_sig(s: &str) -> Result<f64> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s
            .parse::<f64>()
            .map_err(|e| Error::Format(format!("bad numeric field {s:?}: {e}"))),
    }
}

/// Quality numbers for one evaluated image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageMetrics {
    pub index: usize,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Aggregate over one metric column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config(
                "aggregate of an empty metric set is undefined".into(),
            ));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        Ok(Aggregate { mean, median, std })
    }
}

/// Per-image metrics plus aggregates and run identity.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub per_image: Vec<ImageMetrics>,
    pub psnr: Aggregate,
    pub ssim: Aggregate,
    pub config_hash: String,
    pub seed: u64,
    /// Images whose initialization degenerated (counted, not fatal).
    pub degenerate_count: usize,
}

impl MetricReport {
    pub fn from_images(
        per_image: Vec<ImageMetrics>,
        config_hash: String,
        seed: u64,
        degenerate_count: usize,
    ) -> Result<Self> {
        let psnr = Aggregate::of(&per_image.iter().map(|m| m.psnr_db).collect::<Vec<_>>())?;
        let ssim_vals: Vec<f64> = per_image.iter().map(|m| m.ssim).collect();
        if ssim_vals.iter().any(|&s| !(-1.0..=1.0 + 1e-9).contains(&s)) {
            return Err(Error::Config("ssim out of [-1, 1]".into()));
        }
        let ssim = Aggregate::of(&ssim_vals)?;
        Ok(MetricReport {
            per_image,
            psnr,
            ssim,
            config_hash,
            seed,
            degenerate_count,
        })
    }

    /// JSON with "inf" strings for infinite PSNR values.
    pub fn to_json(&self) -> serde_json::Value {
        let njson = |x: f64| -> serde_json::Value {
            if x.is_finite() {
                serde_json::json!(x)
            } else {
                serde_json::json!(if x > 0.0 { "inf" } else { "-inf" })
            }
        };
        serde_json::json!({
            "config_hash": self.config_hash,
            "seed": self.seed,
            "count": self.per_image.len(),
            "degenerate_count": self.degenerate_count,
            "psnr": {"mean": njson(self.psnr.mean), "median": njson(self.psnr.median), "std": njson(self.psnr.std)},
            "ssim": {"mean": njson(self.ssim.mean), "median": njson(self.ssim.median), "std": njson(self.ssim.std)},
        })
    }

    /// Write the per-image table as UTF-8 CSV with a header row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("image_index,psnr_db,ssim\n");
        for m in &self.per_image {
            out.push_str(&format!(
                "{},{},{}\n",
                m.index,
                fmt_sig(m.psnr_db),
                fmt_sig(m.ssim)
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Parse a CSV written by [`write_csv`].
    pub fn read_csv(path: &Path) -> Result<Vec<ImageMetrics>> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty CSV".into()))?;
        if header != "image_index,psnr_db,ssim" {
            return Err(Error::Format(format!("unexpected CSV header {header:?}")));
        }
        let mut rows = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let mut next = || {
                fields
                    .next()
                    .ok_or_else(|| Error::Format(format!("CSV row {ln} too short")))
            };
            rows.push(ImageMetrics {
                index: next()?
                    .parse()
                    .map_err(|e| Error::Format(format!("row {ln}: {e}")))?,
                psnr_db: parse_sig(next()?)?,
                ssim: parse_sig(next()?)?,
            });
        }
        Ok(rows)
    }
}
