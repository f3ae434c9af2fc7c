use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean squared difference over all elements.
pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_same_shape(b, "mse")?;
    if a.numel() == 0 {
        return Err(crate::Error::EmptyTensor);
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(sum / a.numel() as f64)
}

/// `10 log10(max^2 / MSE)` in dB; identical inputs give `f64::INFINITY`.
pub fn psnr<T: Scalar>(pred: &Tensor<T>, reference: &Tensor<T>, max_value: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, reference)?, max_value))
}

pub fn psnr_from_mse(mse: f64, max_value: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_value * max_value / mse).log10()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetric {
    pub name: String,
    pub mse: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<ImageMetric>,
}

impl MetricReport {
    pub fn push(&mut self, name: impl Into<String>, mse: f64, max_value: f64) {
        self.rows.push(ImageMetric {
            name: name.into(),
            mse,
            psnr: psnr_from_mse(mse, max_value),
        });
    }

    /// Arithmetic mean of the per-image PSNRs.
    pub fn mean_psnr(&self) -> Option<f64> {
        if self.rows.is_empty() {
            return None;
        }
        Some(self.rows.iter().map(|r| r.psnr).sum::<f64>() / self.rows.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn mse_values() {
        assert_eq!(mse(&t(&[1.0, 2.0]), &t(&[1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(mse(&t(&[1.0, 2.0]), &t(&[2.0, 3.0])).unwrap(), 1.0);
        assert_eq!(mse(&t(&[3.0, -4.0]), &t(&[0.0, 0.0])).unwrap(), 12.5);
        assert!(mse(&t(&[1.0]), &t(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn psnr_values() {
        let a = t(&[10.0, 20.0, 30.0]);
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), f64::INFINITY);
        let b = a.map(|v| v + 1.0);
        assert!((psnr(&a, &b, 255.0).unwrap() - 48.1308).abs() < 1e-3);
        assert!((psnr_from_mse(100.0, 255.0) - 28.1308).abs() < 1e-3);
        assert_eq!(alloc::format!("{}", f64::INFINITY), "inf");
    }

    #[test]
    fn report_mean_is_arithmetic() {
        let mut r = MetricReport::default();
        assert_eq!(r.mean_psnr(), None);
        r.push("a", 1.0, 255.0);
        r.push("b", 100.0, 255.0);
        let expect = (r.rows[0].psnr + r.rows[1].psnr) / 2.0;
        assert_eq!(r.mean_psnr(), Some(expect));
    }
}
