//! Training-time point-cloud augmentation: random shear, vertical
//! translation, per-point color noise and global value/saturation shifts.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::cloud::PointCloud;

pub const SHEAR_STD: f64 = 0.1;
pub const TRANSLATE_STD: f64 = 0.2;
pub const COLOR_NOISE_STD: f64 = 0.05;
pub const VALUE_SHIFT: f64 = 0.2;
pub const SATURATION_SHIFT: f64 = 0.15;

/// Source of the random draws, so tests can substitute fixed values.
pub trait Draws {
    fn normal(&mut self, std: f64) -> f64;
    fn uniform(&mut self, lo: f64, hi: f64) -> f64;
}

pub struct RngDraws<'a, R>(pub &'a mut R);

impl<R: Rng> Draws for RngDraws<'_, R> {
    fn normal(&mut self, std: f64) -> f64 {
        Normal::new(0.0, std).expect("positive std").sample(self.0)
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.random_range(lo..hi)
    }
}

/// Every draw is zero: augmentation becomes the identity.
pub struct ZeroDraws;

impl Draws for ZeroDraws {
    fn normal(&mut self, _std: f64) -> f64 {
        0.0
    }

    fn uniform(&mut self, _lo: f64, _hi: f64) -> f64 {
        0.0
    }
}

pub type Mat3 = [[f64; 3]; 3];

/// Identity plus the six off-diagonal entries in row-major order.
pub fn shear_matrix(off: [f64; 6]) -> Mat3 {
    [[1.0, off[0], off[1]], [off[2], 1.0, off[3]], [off[4], off[5], 1.0]]
}

pub fn apply(m: &Mat3, p: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|r| m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2])
}

/// Scales the HSV value of `c` by shifting it by `dv` and moves its
/// saturation by `ds`, keeping hue. Zero shifts return `c` unchanged.
pub fn shift_value_saturation(c: [f64; 3], dv: f64, ds: f64) -> [f64; 3] {
    let v = c[0].max(c[1]).max(c[2]);
    if v <= 0.0 {
        return c;
    }
    let min = c[0].min(c[1]).min(c[2]);
    let s = (v - min) / v;
    let c = if s > 0.0 {
        let k = (s + ds).clamp(0.0, 1.0) / s;
        c.map(|x| x * k + v * (1.0 - k))
    } else {
        c
    };
    let scale = (v + dv).clamp(0.0, 1.0) / v;
    c.map(|x| (x * scale).clamp(0.0, 1.0))
}

/// Augments a musician cloud in place. Colors are processed when present.
pub fn augment_cloud(cloud: &mut PointCloud, draws: &mut impl Draws) {
    let mut off = [0.0; 6];
    for o in &mut off {
        *o = draws.normal(SHEAR_STD);
    }
    let m = shear_matrix(off);
    let dy = draws.normal(TRANSLATE_STD);
    for p in &mut cloud.points {
        *p = apply(&m, *p);
        p[1] += dy;
    }
    if let Some(colors) = &mut cloud.colors {
        let dv = draws.uniform(-VALUE_SHIFT, VALUE_SHIFT);
        let ds = draws.uniform(-SATURATION_SHIFT, SATURATION_SHIFT);
        for c in colors.iter_mut() {
            let shifted = shift_value_saturation(*c, dv, ds);
            *c = shifted.map(|x| (x + draws.normal(COLOR_NOISE_STD)).clamp(0.0, 1.0));
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::instrument::Instrument;
    use crate::scene::musician::make_musician_cloud;

    #[test]
    fn zero_draws_are_identity() {
        let c = make_musician_cloud(Instrument::Cello, 1);
        let mut d = c.clone();
        augment_cloud(&mut d, &mut ZeroDraws);
        assert_eq!(c, d);
    }

    #[test]
    fn uniform_shear_of_ones() {
        let m = shear_matrix([0.1; 6]);
        let p = apply(&m, [1.0, 1.0, 1.0]);
        for v in p {
            assert!((v - 1.2).abs() < 1e-12);
        }
    }

    #[test]
    fn colors_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..5 {
            let mut c = make_musician_cloud(Instrument::Saxophone, seed);
            augment_cloud(&mut c, &mut RngDraws(&mut rng));
            assert!(c.colors.unwrap().iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn value_and_saturation_shifts() {
        let c = [0.8, 0.4, 0.2];
        let brighter = shift_value_saturation(c, 0.1, 0.0);
        assert!((brighter[0] - 0.9).abs() < 1e-12);
        assert!((brighter[1] / brighter[0] - 0.5).abs() < 1e-12);
        let greyer = shift_value_saturation(c, 0.0, -0.75);
        assert!(greyer.iter().all(|&x| (x - 0.8).abs() < 1e-12));
    }
}
