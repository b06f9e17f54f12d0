mod support;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tti_audit::pixel::{colorfulness, RgbImage};

#[test]
fn random_images_match_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..10 {
        let img = support::random_image(&mut rng);
        let got = colorfulness(&img).unwrap();
        let want = support::colorfulness_oracle(&img);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}

#[test]
fn gray_levels_score_zero() {
    for v in [0u8, 1, 77, 128, 255] {
        let img = RgbImage::from_fn(13, 9, |_, _| [v, v, v]);
        assert_eq!(colorfulness(&img).unwrap(), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn channel_swap_r_g_keeps_score(seed in 0u64..u64::MAX) {
        // swapping R and G only flips the sign of rg
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = support::random_image(&mut rng);
        let swapped = RgbImage::from_fn(img.width(), img.height(), |x, y| {
            let [r, g, b] = img.pixel(x, y);
            [g, r, b]
        });
        let (a, b) = (colorfulness(&img).unwrap(), colorfulness(&swapped).unwrap());
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn rotation_keeps_score(seed in 0u64..u64::MAX) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = support::random_image(&mut rng);
        let (a, b) = (colorfulness(&img).unwrap(), colorfulness(&img.rotate90()).unwrap());
        prop_assert!((a - b).abs() < 1e-9);
    }
}
