use nalgebra::Point3;
use proptest::prelude::*;

use skinsynth_core::config::RunConfig;
use skinsynth_core::grid::{Grid, LabelImage, Mask, RgbImage};
use skinsynth_core::placement::Orientation;
use skinsynth_core::procedural::plane;
use skinsynth_core::renderer::{
    rasterize, shade, texture_vjp, Camera, Lights, Material, PointLight,
};
use skinsynth_core::seed::derive_seed;
use skinsynth_core::synthesis::{boxes_from_mask, shades_of_gray};

fn mask(w: usize, h: usize, bits: &[bool]) -> Mask {
    Grid::from_fn(w, h, |x, y| bits[(y * w + x) % bits.len()])
}

fn dot(a: &RgbImage, b: &RgbImage) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(p, q)| p[0] * q[0] + p[1] * q[1] + p[2] * q[2])
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn orientation_preserves_pixels(
        w in 1usize..9,
        h in 1usize..9,
        bits in prop::collection::vec(any::<bool>(), 1..40),
        fh in any::<bool>(),
        fv in any::<bool>(),
        turns in 0u8..4,
    ) {
        let m = mask(w, h, &bits);
        let o = Orientation { flip_horizontal: fh, flip_vertical: fv, quarter_turns: turns };
        let r = o.apply(&m);
        prop_assert_eq!(r.count(), m.count());
        let expect = if turns % 2 == 0 { (w, h) } else { (h, w) };
        prop_assert_eq!(r.dims(), expect);
        let spin = Orientation { quarter_turns: 4, ..Default::default() };
        prop_assert_eq!(spin.apply(&m), m);
    }

    #[test]
    fn boxes_cover_every_lesion_pixel_tightly(
        w in 1usize..16,
        h in 1usize..16,
        ids in prop::collection::vec(0u8..4, 1..64),
    ) {
        let labels: LabelImage = Grid::from_fn(w, h, |x, y| ids[(y * w + x) % ids.len()]);
        let boxes = boxes_from_mask(&labels);
        for y in 0..h {
            for x in 0..w {
                let id = *labels.get(x, y);
                if id != 0 {
                    prop_assert!(boxes.iter().any(|b| b.lesion_id == id && b.x0 <= x && x <= b.x1 && b.y0 <= y && y <= b.y1));
                }
            }
        }
        for b in &boxes {
            let on = |x: usize, y: usize| *labels.get(x, y) == b.lesion_id;
            prop_assert!((b.y0..=b.y1).any(|y| on(b.x0, y)) && (b.y0..=b.y1).any(|y| on(b.x1, y)));
            prop_assert!((b.x0..=b.x1).any(|x| on(x, b.y0)) && (b.x0..=b.x1).any(|x| on(x, b.y1)));
        }
    }

    #[test]
    fn derived_seeds_are_stable_and_separate(seed in any::<u64>(), i in 0u64..1000) {
        prop_assert_eq!(derive_seed(seed, "view", i), derive_seed(seed, "view", i));
        prop_assert_ne!(derive_seed(seed, "view", i), derive_seed(seed, "view", i + 1));
        prop_assert_ne!(derive_seed(seed, "view", i), derive_seed(seed, "paste", i));
    }

    #[test]
    fn gray_world_ignores_global_tint(
        values in prop::collection::vec(0.05f64..0.4, 12..48),
        tint in prop::array::uniform3(0.6f64..1.4),
    ) {
        let img: RgbImage = Grid::from_fn(values.len() / 3, 3, |x, y| {
            let v = values[(x * 3 + y) % values.len()];
            [v, v * 0.9, v * 0.8]
        });
        let tinted = img.map(|p| [p[0] * tint[0], p[1] * tint[1], p[2] * tint[2]]);
        let a = shades_of_gray(&img, 6.0).unwrap();
        let b = shades_of_gray(&tinted, 6.0).unwrap();
        // a per-channel tint only rescales the result by one common factor
        let k = |c: usize| b.as_slice()[0][c] / a.as_slice()[0][c];
        for (p, q) in a.iter().zip(b.iter()) {
            for c in 0..3 {
                prop_assert!((q[c] - p[c] * k(c)).abs() < 1e-9);
            }
        }
        prop_assert!((k(0) - k(1)).abs() < 1e-9 && (k(1) - k(2)).abs() < 1e-9);
    }

    #[test]
    fn texture_vjp_is_adjoint(
        seed_a in prop::collection::vec(0.0f64..1.0, 48),
        seed_g in prop::collection::vec(-1.0f64..1.0, 24),
        ambient in 0.2f64..0.9,
    ) {
        let mesh = plane(1.0, 0.0).unwrap();
        let cam = Camera::new(Point3::new(0.1, -0.05, 2.5), Point3::origin(), 12, 12);
        let lights = Lights::single(PointLight::gray(Point3::new(0.0, 0.0, 3.0), ambient, 0.5, 0.0));
        let mat = Material::new(0.0, 30.0);
        let frags = rasterize(&mesh, &cam);
        let dt: RgbImage = Grid::from_fn(4, 4, |x, y| {
            let i = (y * 4 + x) * 3;
            [seed_a[i], seed_a[i + 1], seed_a[i + 2]]
        });
        let zero: RgbImage = Grid::new(4, 4);
        let base = shade(&frags, &mesh, &zero, &lights, &mat).unwrap();
        let lin = shade(&frags, &mesh, &dt, &lights, &mat).unwrap();
        let g: RgbImage = Grid::from_fn(12, 12, |x, y| {
            let i = (y * 12 + x) % seed_g.len();
            [seed_g[i], -seed_g[(i + 5) % seed_g.len()], 0.5 * seed_g[i]]
        });
        let jdt = lin.unclamped.zip_map(&base.unclamped, |a, b| [a[0] - b[0], a[1] - b[1], a[2] - b[2]]).unwrap();
        let jtg = texture_vjp(&frags, &lin.shade_gain, &g, (4, 4)).unwrap();
        let (lhs, rhs) = (dot(&jdt, &g), dot(&dt, &jtg));
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn config_yaml_roundtrip(
        seed in any::<u64>(),
        k in 0usize..10,
        n in 0usize..100,
        lr in 1e-4f64..0.5,
        threshold in 1e-4f64..0.5,
        power in prop::option::of(1.0f64..12.0),
    ) {
        let mut cfg = RunConfig::from_yaml("version: 1\nmeshes: [{id: m, obj: m.obj}]\nlesions: l.json\n").unwrap();
        cfg.seed = seed;
        cfg.lesions_per_mesh = k;
        cfg.views_per_mesh = n;
        cfg.blend.learning_rate = lr;
        cfg.placement.depth_threshold = threshold;
        cfg.color_constancy_power = power;
        prop_assert_eq!(RunConfig::from_yaml(&cfg.to_yaml().unwrap()).unwrap(), cfg);
    }
}
