//! Randomized invariants.

use anova_denoise::bilevel::brent_minimize;
use anova_denoise::features::WindowSet;
use anova_denoise::imaging::{decode_pgm, encode_pgm, ssim, GrayImage};
use anova_denoise::kernel::{assemble_dense, KernelOp};
use anova_denoise::linops::{laplacian_apply, BasisForm, ChangeOfBasis};
use proptest::prelude::*;

fn image() -> impl Strategy<Value = GrayImage> {
    (7usize..14, 7usize..14).prop_flat_map(|(h, w)| {
        prop::collection::vec(0u8..=255, h * w).prop_map(move |p| GrayImage::new(h, w, p.into_iter().map(f64::from).collect()).unwrap())
    })
}

fn points() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (2usize..30).prop_flat_map(|n| (Just(n), prop::collection::vec(0.0f64..255.0, n * 3)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pgm_round_trip(img in image()) {
        let back = decode_pgm(&encode_pgm(&img)).unwrap();
        prop_assert_eq!(back, img);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(a in image(), seed in 0u8..=255) {
        let b = a.with_pixels(a.pixels().iter().map(|p| (p + f64::from(seed)) % 256.0).collect()).unwrap();
        let ab = ssim(&a, &b).unwrap();
        prop_assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12 && ab >= -1.0 - 1e-12);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn change_of_basis_inverts(v in prop::collection::vec(0.1f64..5.0, 2..40), seed in 0u64..1000) {
        let x: Vec<f64> = (0..v.len()).map(|i| ((i as u64 * 37 + seed) % 17) as f64 - 8.0).collect();
        for form in [BasisForm::Unitary, BasisForm::Hermitian] {
            let q = ChangeOfBasis::new(&v, form).unwrap();
            let back = q.apply_inverse(&q.apply(&x).unwrap()).unwrap();
            let scale = x.iter().fold(1.0f64, |m, a| m.max(a.abs()));
            for (a, b) in back.iter().zip(&x) {
                prop_assert!((a - b).abs() <= 1e-10 * scale);
            }
            // first basis vector is parallel to v
            let mut e1 = vec![0.0; v.len()];
            e1[0] = 1.0;
            let c = q.apply(&e1).unwrap();
            let r = c[0] / v[0];
            for (a, b) in c.iter().zip(&v) {
                prop_assert!((a - r * b).abs() <= 1e-12 * r.abs() * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn laplacian_is_symmetric_psd_and_kills_constants((n, pts) in points(), sigma in 5.0f64..200.0, x in prop::collection::vec(-1.0f64..1.0, 30)) {
        let ws = WindowSet::from_points(n, 3, pts, vec![vec![0], vec![1, 2]], sigma).unwrap();
        let k = assemble_dense(&ws, 100).unwrap();
        let m = k.matrix();
        prop_assert!((m - m.transpose()).amax() < 1e-14);
        let l1 = laplacian_apply(&k, &vec![1.0; n]).unwrap();
        prop_assert!(l1.iter().all(|v| v.abs() < 1e-12));
        let x = &x[..n];
        let lx = laplacian_apply(&k, x).unwrap();
        let quad: f64 = lx.iter().zip(x).map(|(a, b)| a * b).sum();
        prop_assert!(quad >= -1e-12);
        prop_assert_eq!(k.degree().len(), n);
    }

    #[test]
    fn brent_finds_quadratic_minimum(c in 0.05f64..0.95, s in 0.1f64..10.0) {
        let r = brent_minimize(|x| s * (x - c) * (x - c), 0.0, 1.0, 1e-10, 100).unwrap();
        prop_assert!(r.converged);
        prop_assert!((r.x - c).abs() < 1e-6);
    }
}
