use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{ImageDataset, Provenance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const SIZE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeClass {
    Circles,
    Crosses,
}

impl ShapeClass {
    pub fn label(self) -> u8 {
        match self {
            ShapeClass::Circles => 0,
            ShapeClass::Crosses => 1,
        }
    }
}

fn coverage(d: f64) -> f64 {
    (d + 0.5).clamp(0.0, 1.0)
}

/// `n` antialiased 32 x 32 shapes with random position and scale.
pub fn synth_shapes(n: usize, class: ShapeClass, seed: u64) -> Result<ImageDataset> {
    if n == 0 {
        return Err(Error::Data("synth_shapes needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * SIZE * SIZE);
    for _ in 0..n {
        let scale: f64 = rng.gen_range(5.0..10.0);
        let cx: f64 = rng.gen_range(scale + 1.0..SIZE as f64 - scale - 1.0);
        let cy: f64 = rng.gen_range(scale + 1.0..SIZE as f64 - scale - 1.0);
        let thick: f64 = rng.gen_range(1.5..2.5);
        for y in 0..SIZE {
            for x in 0..SIZE {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                let v = match class {
                    ShapeClass::Circles => coverage(scale - (dx * dx + dy * dy).sqrt()),
                    ShapeClass::Crosses => {
                        let h = coverage(thick - dy.abs()).min(coverage(scale - dx.abs()));
                        let v = coverage(thick - dx.abs()).min(coverage(scale - dy.abs()));
                        h.max(v)
                    }
                };
                data.push(v as f32);
            }
        }
    }
    ImageDataset::new(
        Tensor::new(&[n, 1, SIZE, SIZE], data)?,
        vec![class.label(); n],
        Provenance::Synthetic,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let a = synth_shapes(8, ShapeClass::Crosses, 5).unwrap();
        assert_eq!(a, synth_shapes(8, ShapeClass::Crosses, 5).unwrap());
        assert_ne!(a, synth_shapes(8, ShapeClass::Crosses, 6).unwrap());
        assert!(a.images().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn shapes_differ() {
        let c = synth_shapes(4, ShapeClass::Circles, 1).unwrap();
        let x = synth_shapes(4, ShapeClass::Crosses, 1).unwrap();
        assert_ne!(c.images(), x.images());
        assert!(c.images().data().iter().any(|&v| v > 0.0 && v < 1.0));
        assert_eq!(x.labels(), &[1, 1, 1, 1]);
    }

    #[test]
    fn zero_count_rejected() {
        assert!(synth_shapes(0, ShapeClass::Circles, 0).is_err());
    }
}
