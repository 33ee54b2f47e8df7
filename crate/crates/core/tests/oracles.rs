mod common;

use common::*;
use geocon::mv_loss::{candidate_set, pca_normal, top_s_sample};
use geocon::{sobel_gradients, Image, RegionLabel, RegionMask, ScalarField, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn sobel_matches_naive_on_all_ternary_3x3_images() {
    let levels = [0.0, 0.5, 1.0];
    for code in 0..3usize.pow(9) {
        let mut c = code;
        let lum: Vec<f64> = (0..9)
            .map(|_| {
                let v = levels[c % 3];
                c /= 3;
                v
            })
            .collect();
        let img = Image::new(3, 3, lum.iter().map(|&v| [v; 3]).collect()).unwrap();
        let (gx, gy) = sobel_gradients(&img).unwrap();
        let (ox, oy) = sobel_naive(&lum, 3, 3);
        assert_eq!(gx.data(), &ox[..], "code {code}");
        assert_eq!(gy.data(), &oy[..], "code {code}");
    }
}

#[test]
fn sobel_matches_naive_on_random_rectangles() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (w, h) in [(3, 7), (8, 3), (11, 9)] {
        let img = Image::from_fn(w, h, |_, _| {
            use rand::Rng;
            [rng.gen(), rng.gen(), rng.gen()]
        });
        let lum: Vec<f64> = (0..w * h).map(|k| img.luminance(k / w, k % w)).collect();
        let (gx, gy) = sobel_gradients(&img).unwrap();
        let (ox, oy) = sobel_naive(&lum, w, h);
        for k in 0..w * h {
            assert!((gx.data()[k] - ox[k]).abs() < 1e-12);
            assert!((gy.data()[k] - oy[k]).abs() < 1e-12);
        }
    }
}

/// Every 3-level assignment of the 5×5 interior (the border only enters through the mean),
/// several border levels, every S from 0 to 10.
#[test]
fn top_s_matches_exhaustive_sort_on_all_three_level_fields() {
    let levels = [0.1, 0.5, 0.9];
    let (w, h) = (5, 5);
    let valid_all = vec![true; w * h];
    let mut valid_some = valid_all.clone();
    valid_some[2 * w + 2] = false;
    valid_some[w + 3] = false;
    for border in [0.0, 0.5, 1.0] {
        for code in 0..3usize.pow(9) {
            let mut field = vec![border; w * h];
            let mut c = code;
            for i in 1..4 {
                for j in 1..4 {
                    field[i * w + j] = levels[c % 3];
                    c /= 3;
                }
            }
            let w_avg = ScalarField::new(w, h, field.clone()).unwrap();
            for valid in [&valid_all, &valid_some] {
                let mask = RegionMask::new(w, h, valid.clone(), RegionLabel::Validity).unwrap();
                let (cands, _) = candidate_set(&w_avg, &mask, 0.3).unwrap();
                for s in 0..=10 {
                    let got = top_s_sample(&cands, &w_avg, s);
                    let want = top_s_oracle(&field, valid, w, h, 0.3, s);
                    assert_eq!(got.pixels, want, "code {code} border {border} s {s}");
                    for (k, &(i, j)) in got.pixels.iter().enumerate() {
                        assert_eq!(got.weights[k], field[i * w + j]);
                    }
                }
            }
        }
    }
}

#[test]
fn pca_normals_match_characteristic_polynomial_solver() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let origin = Vec3::zeros();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let patch = random_patch(&mut rng);
        let got = pca_normal(&patch, &origin).unwrap();
        let (lambda, mut v) = smallest_eigenpair(scatter(&patch));
        let centroid = patch.iter().sum::<Vec3>() / 9.0;
        if v.dot(&(origin - centroid)) < 0.0 {
            v = -v;
        }
        worst = worst.max(angle(&got.normal, &v));
        let scale = got.eigenvalues[0];
        assert!((got.eigenvalues[2] - lambda.max(0.0)).abs() <= 1e-9 * scale);
    }
    assert!(worst <= 1e-9, "worst angle {worst}");
}
