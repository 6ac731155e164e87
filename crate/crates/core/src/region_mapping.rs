//! Region-based mapping: per-region attribute saliency, the concentrate
//! penalty, and the max-pooled semantic prediction. Also holds the global
//! average pooling baseline used by ablations, and saliency map export.

use std::io::Write;

use crate::error::{Result, RsanError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tensor_ops::{self, global_avg_pool, region_linear};

/// Spatial location `(row, col)` of an attribute's saliency peak.
pub type Peak = (usize, usize);

/// C×K map from region features to attribute significance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix<T>(Tensor<T>);

impl<T: Scalar> ProjectionMatrix<T> {
    pub fn new(p: Tensor<T>) -> Result<Self> {
        p.dims2("projection", "projection matrix")?;
        Ok(Self(p.ensure_finite("projection")?))
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn attributes(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor<T> {
        &mut self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyResult<T> {
    /// K×H×W saliency map.
    pub map: Tensor<T>,
    pub peaks: Vec<Peak>,
    /// Peak value per attribute.
    pub a_hat: Tensor<T>,
}

/// Computes the raw (activation-free) saliency map and its per-attribute peaks.
pub fn saliency<T: Scalar>(v: &Tensor<T>, p: &ProjectionMatrix<T>) -> Result<SaliencyResult<T>> {
    let map = region_linear(v, p.tensor())?;
    let max = tensor_ops::max_argmax_trailing(&map, 2)?;
    let peaks = max.locations.iter().map(|l| (l[0], l[1])).collect();
    Ok(SaliencyResult {
        map,
        peaks,
        a_hat: max.values,
    })
}

/// Predicted semantic representation of a feature map.
pub fn predict_semantic<T: Scalar>(v: &Tensor<T>, p: &ProjectionMatrix<T>) -> Result<Tensor<T>> {
    Ok(saliency(v, p)?.a_hat)
}

/// Global average pooling followed by a linear map.
pub fn baseline_predict<T: Scalar>(v: &Tensor<T>, projection: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, _, _) = v.dims3("baseline_predict", "feature map")?;
    let pooled = global_avg_pool(v)?.reshape(&[c, 1, 1])?;
    let out = region_linear(&pooled, projection)?;
    let k = out.shape()[0];
    out.reshape(&[k])
}

fn check_peaks<T: Scalar>(map: &Tensor<T>, peaks: &[Peak]) -> Result<(usize, usize, usize)> {
    let (k, h, w) = map.dims3("concentrate_loss", "saliency map")?;
    if peaks.len() != k {
        return Err(RsanError::Contract {
            op: "concentrate_loss",
            detail: format!("{} peaks for {k} attributes", peaks.len()),
        });
    }
    let max = tensor_ops::max_argmax_trailing(map, 2)?;
    for (ki, (&(pi, pj), loc)) in peaks.iter().zip(&max.locations).enumerate() {
        if (pi, pj) != (loc[0], loc[1]) {
            return Err(RsanError::Contract {
                op: "concentrate_loss",
                detail: format!(
                    "peak ({pi}, {pj}) of attribute {ki} is not the argmax ({}, {})",
                    loc[0], loc[1]
                ),
            });
        }
    }
    Ok((k, h, w))
}

fn squared_distance(i: usize, j: usize, (pi, pj): Peak) -> f64 {
    let di = i as f64 - pi as f64;
    let dj = j as f64 - pj as f64;
    di * di + dj * dj
}

/// `Σ_k Σ_{i,j} M[k,i,j]·((i−ĩ_k)² + (j−j̃_k)²)`, unnormalized.
///
/// `peaks` must be the row-major-first argmax of each attribute map.
pub fn concentrate_loss<T: Scalar>(map: &Tensor<T>, peaks: &[Peak]) -> Result<f64> {
    let (k, h, w) = check_peaks(map, peaks)?;
    let md = map.data();
    let mut total = 0.0;
    for (ki, &peak) in peaks.iter().enumerate().take(k) {
        for i in 0..h {
            for j in 0..w {
                total += md[(ki * h + i) * w + j].to_acc() * squared_distance(i, j, peak);
            }
        }
    }
    if !total.is_finite() {
        return Err(RsanError::NonFinite {
            op: "concentrate_loss",
        });
    }
    Ok(total)
}

/// Gradient of [`concentrate_loss`] with respect to the map, holding the peak
/// coordinates fixed.
pub fn concentrate_loss_grad<T: Scalar>(map: &Tensor<T>, peaks: &[Peak]) -> Result<Tensor<T>> {
    let (k, h, w) = check_peaks(map, peaks)?;
    let mut g = Tensor::zeros(&[k, h, w]);
    let gd = g.data_mut();
    for (ki, &peak) in peaks.iter().enumerate() {
        for i in 0..h {
            for j in 0..w {
                gd[(ki * h + i) * w + j] = T::from_acc(squared_distance(i, j, peak));
            }
        }
    }
    Ok(g)
}

/// Min-max normalization into `[0, 1]`. A constant map normalizes to zeros.
pub fn min_max_normalize<T: Scalar>(map: &Tensor<T>) -> Vec<f64> {
    let vals = map.to_f64_vec();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    vals.iter()
        .map(|&x| if span > 0.0 { (x - lo) / span } else { 0.0 })
        .collect()
}

/// Writes one attribute's H×W map as CSV: H rows of W comma-separated values,
/// preceded by `# ` comment lines for each entry of `header`.
pub fn write_saliency_csv<T: Scalar, W: Write>(
    map: &Tensor<T>,
    header: &[(&str, String)],
    out: &mut W,
) -> Result<()> {
    let (h, w) = map.dims2("write_saliency_csv", "attribute map")?;
    for (k, v) in header {
        writeln!(out, "# {k}={v}")?;
    }
    for i in 0..h {
        let row: Vec<String> = (0..w).map(|j| format!("{}", map.get(&[i, j]))).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Writes one attribute's H×W map as an 8-bit binary PGM (P5) after min-max
/// normalization. `header` entries become comment lines.
pub fn write_saliency_pgm<T: Scalar, W: Write>(
    map: &Tensor<T>,
    header: &[(&str, String)],
    out: &mut W,
) -> Result<()> {
    let (h, w) = map.dims2("write_saliency_pgm", "attribute map")?;
    writeln!(out, "P5")?;
    for (k, v) in header {
        writeln!(out, "# {k}={v}")?;
    }
    write!(out, "{w} {h}\n255\n")?;
    let pixels: Vec<u8> = min_max_normalize(map)
        .into_iter()
        .map(|x| (x * 255.0).round() as u8)
        .collect();
    out.write_all(&pixels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn zero_projection_gives_zero_saliency() {
        let v = Tensor::<f64>::ones(&[3, 2, 4]);
        let p = ProjectionMatrix::new(Tensor::zeros(&[3, 5])).unwrap();
        let r = saliency(&v, &p).unwrap();
        assert!(r.map.data().iter().all(|&x| x == 0.0));
        assert_eq!(r.a_hat, Tensor::zeros(&[5]));
        assert!(r.peaks.iter().all(|&pk| pk == (0, 0)));
    }

    #[test]
    fn pass_through_channel() {
        let v = t(&[1, 2, 2], &[0.0, 2.0, 1.0, 0.0]);
        let p = ProjectionMatrix::new(t(&[1, 1], &[1.0])).unwrap();
        let r = saliency(&v, &p).unwrap();
        assert_eq!(r.a_hat.data(), &[2.0]);
        assert_eq!(r.peaks, vec![(0, 1)]);
    }

    #[test]
    fn concentrate_uniform_map() {
        let m = Tensor::<f64>::ones(&[1, 2, 2]);
        assert_eq!(concentrate_loss(&m, &[(0, 0)]).unwrap(), 4.0);
    }

    #[test]
    fn concentrate_one_hot_is_zero() {
        let mut m = Tensor::<f64>::zeros(&[1, 3, 3]);
        m[&[0, 2, 1][..]] = 5.0;
        assert_eq!(concentrate_loss(&m, &[(2, 1)]).unwrap(), 0.0);
    }

    #[test]
    fn concentrate_rejects_wrong_peak() {
        let m = t(&[1, 2, 2], &[0.0, 3.0, 2.0, 1.0]);
        assert!(matches!(
            concentrate_loss(&m, &[(1, 0)]),
            Err(RsanError::Contract { .. })
        ));
        assert!(matches!(
            concentrate_loss(&m, &[]),
            Err(RsanError::Contract { .. })
        ));
    }

    #[test]
    fn baseline_constant_field() {
        let v = Tensor::<f64>::full(&[2, 3, 3], 2.0);
        let proj = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = baseline_predict(&v, &proj).unwrap();
        assert_eq!(out.data(), &[10.0, 14.0, 18.0]);
    }

    #[test]
    fn pgm_layout() {
        let m = t(&[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let mut buf = Vec::new();
        write_saliency_pgm(&m, &[], &mut buf).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&buf[..header.len()], header);
        assert_eq!(&buf[header.len()..], &[0, 51, 102, 153, 204, 255]);
    }

    #[test]
    fn constant_map_normalizes_to_zero() {
        assert_eq!(min_max_normalize(&Tensor::<f64>::full(&[2, 2], 7.0)), vec![0.0; 4]);
    }
}
