use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn axis_weights(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|o| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            let pos = o as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Corner-aligned bilinear upsampling of a `C x H x W` image.
pub fn resize_bilinear(image: &Tensor<f32>, height: usize, width: usize) -> Result<Tensor<f32>> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "resize expects C x H x W".into(),
        });
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if h > height || w > width {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: format!("source larger than target {height}x{width}"),
        });
    }
    let ry = axis_weights(h, height);
    let rx = axis_weights(w, width);
    let src = image.data();
    let mut out = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ry {
            for &(x0, x1, fx) in &rx {
                let p = |y: usize, x: usize| plane[y * w + x] as f64;
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    Tensor::new(&[c, height, width], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkerboard_center() {
        let img = Tensor::new(&[1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let out = resize_bilinear(&img, 3, 3).unwrap();
        assert_eq!(out.data()[4], 0.5);
        assert_eq!(out.data()[0], 0.0);
        assert_eq!(out.data()[2], 1.0);
    }

    #[test]
    fn constant_stays_constant() {
        let img = Tensor::full(&[3, 28, 28], 0.3f32).unwrap();
        let out = resize_bilinear(&img, 32, 32).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn corners_preserved() {
        let data: Vec<f32> = (0..28 * 28).map(|i| (i % 17) as f32 / 16.0).collect();
        let img = Tensor::new(&[1, 28, 28], data.clone()).unwrap();
        let out = resize_bilinear(&img, 32, 32).unwrap();
        assert_eq!(out.data()[0], data[0]);
        assert_eq!(out.data()[31], data[27]);
        assert_eq!(out.data()[32 * 32 - 1], data[28 * 28 - 1]);
    }

    #[test]
    fn rejects_downsampling() {
        let img = Tensor::full(&[1, 33, 33], 0.0f32).unwrap();
        assert!(resize_bilinear(&img, 32, 32).is_err());
    }
}
