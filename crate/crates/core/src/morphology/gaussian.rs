use crate::error::{Error, Result};
use crate::volume::Volume3D;

fn kernel(sigma_vox: f64) -> Vec<f64> {
    let radius = (3.0 * sigma_vox).ceil() as i64;
    (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma_vox * sigma_vox)).exp())
        .collect()
}

/// Separable Gaussian blur with `sigma` in mm.
///
/// The kernel is truncated at 3 sigma and renormalized over the taps that
/// fall inside the grid, so constant volumes stay constant up to the border.
pub fn gaussian_smooth(vol: &Volume3D, sigma: f64) -> Result<Volume3D> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    let mut cur: Vec<f64> = vol.to_f32().into_iter().map(f64::from).collect();
    if sigma > 0.0 {
        let dims = vol.dims();
        let extents = dims.as_array();
        let strides = [1, dims.nx, dims.nx * dims.ny];
        for axis in 0..3 {
            let sigma_vox = sigma / vol.spacing()[axis];
            let k = kernel(sigma_vox);
            let radius = (k.len() / 2) as i64;
            let n = extents[axis] as i64;
            let stride = strides[axis];
            let mut next = vec![0.0; cur.len()];
            for (i, out) in next.iter_mut().enumerate() {
                let pos = ((i / stride) as i64) % n;
                let lo = (pos - radius).max(0);
                let hi = (pos + radius).min(n - 1);
                let mut acc = 0.0;
                let mut wsum = 0.0;
                for p in lo..=hi {
                    let w = k[(p - pos + radius) as usize];
                    let j = (i as i64 + (p - pos) * stride as i64) as usize;
                    acc += w * cur[j];
                    wsum += w;
                }
                *out = acc / wsum;
            }
            cur = next;
        }
    }
    Ok(vol.with_scalar(cur.into_iter().map(|v| v as f32).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;

    #[test]
    fn zero_sigma_is_identity_cast() {
        let d = Dims::new(3, 2, 2);
        let v = Volume3D::from_mask(d, [1.0; 3], vec![0, 1, 1, 0, 0, 0, 1, 0, 0, 0, 0, 1]).unwrap();
        let s = gaussian_smooth(&v, 0.0).unwrap();
        assert_eq!(s.scalar().unwrap(), v.to_f32().as_slice());
    }

    #[test]
    fn negative_sigma_rejected() {
        let v = Volume3D::empty_mask(Dims::new(2, 2, 2), [1.0; 3]);
        assert!(gaussian_smooth(&v, -1.0).is_err());
        assert!(gaussian_smooth(&v, f64::NAN).is_err());
    }

    #[test]
    fn constant_preserved() {
        let v = Volume3D::constant_scalar(Dims::new(7, 5, 4), [1.0, 0.5, 2.0], 1.0);
        for sigma in [0.3, 1.0, 2.5] {
            let s = gaussian_smooth(&v, sigma).unwrap();
            assert!(s.scalar().unwrap().iter().all(|&x| (x - 1.0).abs() < 1e-6));
        }
    }

    #[test]
    fn impulse_matches_gaussian_peak() {
        let d = Dims::new(15, 15, 15);
        let mut m = vec![0u8; d.len()];
        m[d.index(7, 7, 7)] = 1;
        let v = Volume3D::from_mask(d, [1.0; 3], m).unwrap();
        let s = gaussian_smooth(&v, 1.0).unwrap();
        let center = s.scalar().unwrap()[d.index(7, 7, 7)] as f64;
        // Oracle: product of three truncated, normalized 1D kernels at k = 0.
        let sum1d: f64 = (-3i32..=3).map(|k| (-(k * k) as f64 / 2.0).exp()).sum();
        let discrete = sum1d.powi(-3);
        assert!((center - discrete).abs() < 1e-6);
        let continuous = (2.0 * std::f64::consts::PI).powf(-1.5);
        assert!((center - continuous).abs() < 1e-3);
        let total: f64 = s.scalar().unwrap().iter().map(|&x| x as f64).sum();
        assert!((total - 1.0).abs() < 1e-5);
    }
}
