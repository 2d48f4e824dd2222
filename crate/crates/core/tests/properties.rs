use std::sync::Arc;

use p2s_core::audio::AudioClip;
use p2s_core::binaural::convolve_truncated;
use p2s_core::cloud::PointCloud;
use p2s_core::metrics::{envelope_distance, stft_distance};
use p2s_core::sparse::{build_kernel_map, voxelize, Coord, CoordSet, FeatureMode};
use p2s_core::tape::Tape;
use p2s_core::tensor::Tensor;
use p2s_core::train::{difference, recover_channels};
use proptest::prelude::*;

fn samples(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, len)
}

fn stereo(min: usize, max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (min..=max).prop_flat_map(|n| (samples(n), samples(n)))
}

fn points() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 1..200)
}

fn coords() -> impl Strategy<Value = Vec<Coord>> {
    prop::collection::btree_set((0i32..2, 0i32..6, 0i32..6, 0i32..6), 1..60)
        .prop_map(|s| s.into_iter().map(|(b, x, y, z)| [b, x, y, z]).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recovery_inverts_sum_and_difference((l, r) in stereo(1, 500)) {
        let clip = AudioClip::binaural(l.clone(), r.clone(), 8000).unwrap();
        let mono: Vec<f64> = l.iter().zip(&r).map(|(a, b)| a + b).collect();
        let out = recover_channels(&mono, &difference(&clip), 8000).unwrap();
        for (got, want) in out.left().iter().chain(out.right()).zip(l.iter().chain(&r)) {
            prop_assert!((got - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn distances_are_symmetric_and_zero_on_identity(
        (a, b, c, d) in (200usize..600).prop_flat_map(|n| (samples(n), samples(n), samples(n), samples(n)))
    ) {
        let x = AudioClip::binaural(a, b, 8000).unwrap();
        let y = AudioClip::binaural(c, d, 8000).unwrap();
        prop_assert_eq!(stft_distance(&x, &x).unwrap(), 0.0);
        prop_assert_eq!(envelope_distance(&x, &x).unwrap(), 0.0);
        let (s1, s2) = (stft_distance(&x, &y).unwrap(), stft_distance(&y, &x).unwrap());
        prop_assert!((s1 - s2).abs() <= 1e-12 * s1.max(1.0));
        let (e1, e2) = (envelope_distance(&x, &y).unwrap(), envelope_distance(&y, &x).unwrap());
        prop_assert!((e1 - e2).abs() <= 1e-12 * e1.max(1.0));
    }

    #[test]
    fn voxelization_ignores_point_order(pts in points(), seed in any::<u64>()) {
        let mut shuffled = pts.clone();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        let a = voxelize::<f64>(&PointCloud::new(pts, None).unwrap(), 0.25, FeatureMode::Depth).unwrap();
        let b = voxelize::<f64>(&PointCloud::new(shuffled, None).unwrap(), 0.25, FeatureMode::Depth).unwrap();
        prop_assert_eq!(a.coords.coords(), b.coords.coords());
        prop_assert_eq!(a.feats.data(), b.feats.data());
    }

    #[test]
    fn voxel_features_lie_in_their_voxel(pts in points()) {
        let v = 0.25;
        let t = voxelize::<f64>(&PointCloud::new(pts, None).unwrap(), v, FeatureMode::Depth).unwrap();
        for (c, f) in t.coords.coords().iter().zip(t.feats.data().chunks_exact(3)) {
            for k in 0..3 {
                let lo = c[k + 1] as f64 * v;
                prop_assert!(f[k] >= lo - 1e-12 && f[k] <= lo + v + 1e-12);
            }
        }
    }

    #[test]
    fn downsampling_floors_onto_the_coarse_grid(cs in coords(), stride in 1i32..4) {
        let set = CoordSet::new(cs.clone(), 1, 2).unwrap();
        let down = set.downsample(stride);
        prop_assert_eq!(down.tensor_stride(), stride);
        for c in &cs {
            let q = [c[0], c[1] / stride * stride, c[2] / stride * stride, c[3] / stride * stride];
            prop_assert!(down.row(&q).is_some());
        }
        for c in down.coords() {
            prop_assert!(c[1..].iter().all(|v| v % stride == 0));
        }
    }

    #[test]
    fn sparse_conv_is_linear_in_features(cs in coords(), seed in any::<u64>(), alpha in -2.0f64..2.0) {
        let set = CoordSet::new(cs, 1, 2).unwrap();
        let (_, map) = build_kernel_map(&set, 2, 3).unwrap();
        let map = Arc::new(map);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let mut draw = |n: usize| (0..n).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect::<Vec<f64>>();
        let (n, ci, co) = (set.len(), 2, 3);
        let (x1, x2, w) = (draw(n * ci), draw(n * ci), draw(27 * ci * co));
        let conv = |x: &[f64]| {
            let mut t = Tape::new();
            let xv = t.constant(Tensor::new(vec![n, ci], x.to_vec()).unwrap());
            let wv = t.constant(Tensor::new(vec![27, ci, co], w.clone()).unwrap());
            let y = t.sparse_conv(xv, wv, None, map.clone()).unwrap();
            t.value(y).data().to_vec()
        };
        let mixed: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| alpha * a + b).collect();
        let (y1, y2, ym) = (conv(&x1), conv(&x2), conv(&mixed));
        for ((a, b), m) in y1.iter().zip(&y2).zip(&ym) {
            prop_assert!((alpha * a + b - m).abs() <= 1e-12);
        }
    }

    #[test]
    fn truncated_convolution_keeps_length_and_is_linear(x in samples(64), y in samples(64), h in samples(9)) {
        let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let (cx, cy, cs) = (convolve_truncated(&x, &h), convolve_truncated(&y, &h), convolve_truncated(&sum, &h));
        prop_assert_eq!(cs.len(), x.len());
        for ((a, b), s) in cx.iter().zip(&cy).zip(&cs) {
            prop_assert!((a + b - s).abs() <= 1e-12);
        }
    }

    #[test]
    fn four_quarter_turns_are_the_identity(pts in points()) {
        let orig = PointCloud::new(pts, None).unwrap();
        let mut c = orig.clone();
        for _ in 0..4 {
            c.rotate_y(std::f64::consts::FRAC_PI_2);
        }
        for (a, b) in c.points.iter().zip(&orig.points) {
            for k in 0..3 {
                prop_assert!((a[k] - b[k]).abs() <= 1e-12);
            }
        }
    }
}
