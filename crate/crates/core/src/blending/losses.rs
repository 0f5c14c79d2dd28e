//! Blending losses on rendered views. Every `*_grad` function returns the
//! loss and its gradient with respect to the composite `b`.

use super::features::{FeatureExtractor, FeatureMap};
use crate::error::Result;
use crate::grid::{Grid, Mask, RgbImage};

/// `b = m ⊙ blended + (1 − m) ⊙ original`
pub fn composite(mask: &Mask, blended: &RgbImage, original: &RgbImage) -> Result<RgbImage> {
    mask.ensure_same_dims(blended)?;
    mask.ensure_same_dims(original)?;
    Ok(Grid::from_fn(mask.width(), mask.height(), |x, y| {
        if *mask.get(x, y) {
            *blended.get(x, y)
        } else {
            *original.get(x, y)
        }
    }))
}

/// `img ⊙ m`
pub fn apply_mask(img: &RgbImage, mask: &Mask) -> Result<RgbImage> {
    img.zip_map(mask, |&p, &m| if m { p } else { [0.0; 3] })
}

fn masked_grad(grad: RgbImage, mask: &Mask) -> RgbImage {
    grad.zip_map(mask, |&g, &m| if m { g } else { [0.0; 3] })
        .expect("same dims")
}

pub fn content_loss(
    b: &RgbImage,
    target: &RgbImage,
    mask: &Mask,
    fx: &dyn FeatureExtractor,
) -> Result<f64> {
    content_impl(b, target, mask, fx, false).map(|r| r.0)
}

/// `‖F(b ⊙ m) − F(target ⊙ m)‖₂` on the last feature layer.
pub fn content_loss_grad(
    b: &RgbImage,
    target: &RgbImage,
    mask: &Mask,
    fx: &dyn FeatureExtractor,
) -> Result<(f64, RgbImage)> {
    content_impl(b, target, mask, fx, true).map(|(v, g)| (v, g.expect("gradient requested")))
}

fn content_impl(
    b: &RgbImage,
    target: &RgbImage,
    mask: &Mask,
    fx: &dyn FeatureExtractor,
    want_grad: bool,
) -> Result<(f64, Option<RgbImage>)> {
    b.ensure_same_dims(target)?;
    let bm = apply_mask(b, mask)?;
    let tm = apply_mask(target, mask)?;
    let fb = fx.forward(&bm);
    let ft = fx.forward(&tm);
    let (Some(lb), Some(lt)) = (fb.last(), ft.last()) else {
        return Ok((0.0, want_grad.then(|| Grid::new(b.width(), b.height()))));
    };
    let diff: Vec<f64> = lb.data.iter().zip(&lt.data).map(|(x, y)| x - y).collect();
    let value = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    if !want_grad {
        return Ok((value, None));
    }
    let mut grads: Vec<FeatureMap> = fb
        .iter()
        .map(|f| FeatureMap::zeros(f.channels, f.width, f.height))
        .collect();
    if value > 0.0 {
        let last = grads.last_mut().expect("nonempty");
        last.data = diff.iter().map(|d| d / value).collect();
    }
    let g = fx.backward(&bm, &grads)?;
    Ok((value, Some(masked_grad(g, mask))))
}

pub fn style_loss(
    b: &RgbImage,
    reference: &RgbImage,
    mask: &Mask,
    fx: &dyn FeatureExtractor,
) -> Result<f64> {
    style_impl(b, reference, mask, fx, false).map(|r| r.0)
}

/// `(1/L) Σ_l ‖G_l(b ⊙ m) − G_l(reference ⊙ m)‖_F`
pub fn style_loss_grad(
    b: &RgbImage,
    reference: &RgbImage,
    mask: &Mask,
    fx: &dyn FeatureExtractor,
) -> Result<(f64, RgbImage)> {
    style_impl(b, reference, mask, fx, true).map(|(v, g)| (v, g.expect("gradient requested")))
}

fn style_impl(
    b: &RgbImage,
    reference: &RgbImage,
    mask: &Mask,
    fx: &dyn FeatureExtractor,
    want_grad: bool,
) -> Result<(f64, Option<RgbImage>)> {
    b.ensure_same_dims(reference)?;
    let bm = apply_mask(b, mask)?;
    let rm = apply_mask(reference, mask)?;
    let fb = fx.forward(&bm);
    let fr = fx.forward(&rm);
    let layers = fb.len();
    if layers == 0 {
        return Ok((0.0, want_grad.then(|| Grid::new(b.width(), b.height()))));
    }
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(layers);
    for (f, r) in fb.iter().zip(&fr) {
        let d: Vec<f64> = f.gram().iter().zip(r.gram()).map(|(x, y)| x - y).collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        value += norm / layers as f64;
        if want_grad {
            grads.push(gram_backward(f, &d, norm, layers));
        }
    }
    if !want_grad {
        return Ok((value, None));
    }
    let g = fx.backward(&bm, &grads)?;
    Ok((value, Some(masked_grad(g, mask))))
}

/// Gradient of `‖G(F) − G_ref‖_F / L` w.r.t. `F`, given `D = G(F) − G_ref`.
fn gram_backward(f: &FeatureMap, d: &[f64], norm: f64, layers: usize) -> FeatureMap {
    let c = f.channels;
    let n = f.pixels();
    let mut out = FeatureMap::zeros(c, f.width, f.height);
    if norm == 0.0 || n == 0 {
        return out;
    }
    let scale = 2.0 / ((c * n) as f64 * norm * layers as f64);
    for i in 0..c {
        let row = &mut out.data[i * n..(i + 1) * n];
        for j in 0..c {
            let k = d[i * c + j] * scale;
            if k == 0.0 {
                continue;
            }
            for (o, v) in row.iter_mut().zip(f.channel(j)) {
                *o += k * v;
            }
        }
    }
    out
}

/// Five-point Laplacian with zero padding.
pub fn laplacian(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dims();
    let at = |x: isize, y: isize| -> [f64; 3] {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            [0.0; 3]
        } else {
            *img.get(x as usize, y as usize)
        }
    };
    Grid::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        let (c, l, r, u, d) = (
            at(x, y),
            at(x - 1, y),
            at(x + 1, y),
            at(x, y - 1),
            at(x, y + 1),
        );
        [0, 1, 2].map(|k| l[k] + r[k] + u[k] + d[k] - 4.0 * c[k])
    })
}

pub fn gradient_loss(
    b: &RgbImage,
    original: &RgbImage,
    dilated: &RgbImage,
    mask: &Mask,
) -> Result<f64> {
    gradient_loss_grad(b, original, dilated, mask).map(|r| r.0)
}

/// `(1 / 2HW) Σ [∇(b⊙m) − (∇(dilated⊙m) + ∇(original⊙m))]²`
pub fn gradient_loss_grad(
    b: &RgbImage,
    original: &RgbImage,
    dilated: &RgbImage,
    mask: &Mask,
) -> Result<(f64, RgbImage)> {
    b.ensure_same_dims(original)?;
    b.ensure_same_dims(dilated)?;
    let (w, h) = b.dims();
    let hw = (w * h) as f64;
    if hw == 0.0 {
        return Ok((0.0, Grid::new(w, h)));
    }
    let lb = laplacian(&apply_mask(b, mask)?);
    let ld = laplacian(&apply_mask(dilated, mask)?);
    let lo = laplacian(&apply_mask(original, mask)?);
    let residual = Grid::from_fn(w, h, |x, y| {
        let (p, q, r) = (lb.get(x, y), ld.get(x, y), lo.get(x, y));
        [0, 1, 2].map(|k| p[k] - (q[k] + r[k]))
    });
    let value = residual
        .iter()
        .flat_map(|r| r.iter())
        .map(|v| v * v)
        .sum::<f64>()
        / (2.0 * hw);
    // the zero-padded Laplacian is self-adjoint
    let grad = laplacian(&residual).map(|g| g.map(|v| v / hw));
    Ok((value, masked_grad(grad, mask)))
}

pub fn tv_loss(b: &RgbImage, mask: &Mask) -> Result<f64> {
    tv_loss_grad(b, mask).map(|r| r.0)
}

/// Mean over masked pixels and channels of the squared forward differences
/// to the right and lower neighbors (omitted at the image border).
pub fn tv_loss_grad(b: &RgbImage, mask: &Mask) -> Result<(f64, RgbImage)> {
    b.ensure_same_dims(mask)?;
    let (w, h) = b.dims();
    let mut grad: RgbImage = Grid::new(w, h);
    let count = mask.count();
    if count == 0 {
        return Ok((0.0, grad));
    }
    let norm = 3.0 * count as f64;
    let mut value = 0.0;
    for y in 0..h {
        for x in 0..w {
            if !*mask.get(x, y) {
                continue;
            }
            let p = *b.get(x, y);
            let mut neighbors = Vec::with_capacity(2);
            if x + 1 < w {
                neighbors.push((x + 1, y));
            }
            if y + 1 < h {
                neighbors.push((x, y + 1));
            }
            for (nx, ny) in neighbors {
                let q = *b.get(nx, ny);
                for c in 0..3 {
                    let d = q[c] - p[c];
                    value += d * d / norm;
                    grad.get_mut(nx, ny)[c] += 2.0 * d / norm;
                    grad.get_mut(x, y)[c] -= 2.0 * d / norm;
                }
            }
        }
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::super::features::{FilterPyramid, IdentityExtractor};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    fn random_mask(w: usize, h: usize, seed: u64) -> Mask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::from_fn(w, h, |_, _| rng.random_bool(0.6))
    }

    /// First color channel as a one-channel map.
    struct RedOnly;

    impl FeatureExtractor for RedOnly {
        fn layers(&self) -> usize {
            1
        }
        fn forward(&self, image: &RgbImage) -> Vec<FeatureMap> {
            vec![FeatureMap {
                channels: 1,
                width: image.width(),
                height: image.height(),
                data: image.iter().map(|p| p[0]).collect(),
            }]
        }
        fn backward(&self, image: &RgbImage, grads: &[FeatureMap]) -> Result<RgbImage> {
            Grid::from_vec(
                image.width(),
                image.height(),
                grads[0].data.iter().map(|&g| [g, 0.0, 0.0]).collect(),
            )
        }
    }

    #[test]
    fn composite_selects_elementwise() {
        let a = random_image(6, 5, 1);
        let t = random_image(6, 5, 2);
        assert_eq!(composite(&Grid::filled(6, 5, true), &a, &t).unwrap(), a);
        assert_eq!(composite(&Grid::new(6, 5), &a, &t).unwrap(), t);
        let m = random_mask(6, 5, 3);
        let b = composite(&m, &a, &t).unwrap();
        for i in 0..30 {
            let expect = if m.as_slice()[i] {
                a.as_slice()[i]
            } else {
                t.as_slice()[i]
            };
            assert_eq!(b.as_slice()[i], expect);
        }
        assert!(composite(&Grid::new(5, 5), &a, &t).is_err());
    }

    #[test]
    fn content_fixed_points() {
        let fx = FilterPyramid::default();
        let p = random_image(12, 12, 4);
        let m = random_mask(12, 12, 5);
        assert_eq!(content_loss(&p, &p, &m, &fx).unwrap(), 0.0);
        let b = random_image(12, 12, 6);
        assert_eq!(content_loss(&b, &p, &Grid::new(12, 12), &fx).unwrap(), 0.0);
    }

    #[test]
    fn content_identity_is_pixel_l2() {
        let b = random_image(4, 4, 7);
        let p = random_image(4, 4, 8);
        let m = random_mask(4, 4, 9);
        let mut sq = 0.0;
        for i in 0..16 {
            if m.as_slice()[i] {
                for c in 0..3 {
                    sq += (b.as_slice()[i][c] - p.as_slice()[i][c]).powi(2);
                }
            }
        }
        let v = content_loss(&b, &p, &m, &IdentityExtractor).unwrap();
        assert!((v - sq.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn style_single_channel() {
        let b = random_image(5, 3, 10);
        let t = random_image(5, 3, 11);
        let m = Grid::filled(5, 3, true);
        let mean_sq = |img: &RgbImage| img.iter().map(|p| p[0] * p[0]).sum::<f64>() / 15.0;
        let v = style_loss(&b, &t, &m, &RedOnly).unwrap();
        assert!((v - (mean_sq(&b) - mean_sq(&t)).abs()).abs() < 1e-14);
        assert_eq!(
            style_loss(&t, &t, &m, &FilterPyramid::default()).unwrap(),
            0.0
        );
    }

    #[test]
    fn gram_ignores_pixel_order() {
        let f = FeatureMap {
            channels: 2,
            width: 3,
            height: 1,
            data: vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0],
        };
        let permuted = FeatureMap {
            data: vec![3.0, 1.0, 2.0, 4.0, -1.0, 0.5],
            ..f.clone()
        };
        assert_eq!(f.gram(), permuted.gram());
    }

    #[test]
    fn laplacian_by_hand() {
        let img = Grid::from_vec(3, 3, (1..=9).map(|v| [v as f64; 3]).collect()).unwrap();
        let l = laplacian(&img);
        // center: 2 + 4 + 6 + 8 - 4·5
        assert_eq!(l.get(1, 1)[0], 0.0);
        // corner (0,0): 2 + 4 - 4·1
        assert_eq!(l.get(0, 0)[0], 2.0);
        // edge (1,0): 1 + 3 + 5 - 4·2
        assert_eq!(l.get(1, 0)[0], 1.0);
        // corner (2,2): 6 + 8 - 4·9
        assert_eq!(l.get(2, 2)[0], -22.0);
    }

    #[test]
    fn gradient_loss_cases() {
        let flat = Grid::filled(5, 5, [0.4; 3]);
        let zero = Grid::filled(5, 5, [0.0; 3]);
        let full = Grid::filled(5, 5, true);
        // equal constant images on a full mask still differ at the border:
        // b - (d + t) = -t there, so use t = 0
        assert_eq!(gradient_loss(&flat, &zero, &flat, &full).unwrap(), 0.0);
        let d = random_image(5, 5, 12);
        let t = random_image(5, 5, 13);
        let b = Grid::from_fn(5, 5, |x, y| {
            [0, 1, 2].map(|k| d.get(x, y)[k] + t.get(x, y)[k])
        });
        assert!(gradient_loss(&b, &t, &d, &full).unwrap() < 1e-28);
        // single masked pixel, value v: residual is the Laplacian of a spike
        let mut m = Mask::new(3, 3);
        m.set(1, 1, true);
        let spike = Grid::filled(3, 3, [1.0, 0.0, 0.0]);
        let v = gradient_loss(&spike, &Grid::new(3, 3), &Grid::new(3, 3), &m).unwrap();
        assert!((v - (16.0 + 4.0) / 18.0).abs() < 1e-15);
    }

    #[test]
    fn tv_cases() {
        let m = Grid::filled(4, 3, true);
        assert_eq!(tv_loss(&Grid::filled(4, 3, [0.3; 3]), &m).unwrap(), 0.0);
        assert_eq!(
            tv_loss(&random_image(4, 3, 14), &Mask::new(4, 3)).unwrap(),
            0.0
        );
        let h = 0.7;
        let step = Grid::from_fn(4, 3, |x, _| if x >= 2 { [h; 3] } else { [0.0; 3] });
        let v = tv_loss(&step, &m).unwrap();
        assert!((v - 3.0 * h * h / 12.0).abs() < 1e-15);
    }

    fn check_grad(f: &dyn Fn(&RgbImage) -> (f64, RgbImage), b: &RgbImage) {
        let (_, g) = f(b);
        let h = 1e-6;
        for i in (0..b.len()).step_by(3) {
            for c in 0..3 {
                let mut p = b.clone();
                p.as_mut_slice()[i][c] += h;
                let mut m = b.clone();
                m.as_mut_slice()[i][c] -= h;
                let fd = (f(&p).0 - f(&m).0) / (2.0 * h);
                let an = g.as_slice()[i][c];
                assert!(
                    (fd - an).abs() <= 1e-5 * (1e-3 + an.abs().max(fd.abs())),
                    "{i}/{c}: {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn loss_gradients_match_differences() {
        let fx = FilterPyramid::default();
        let b = random_image(9, 8, 15);
        let t = random_image(9, 8, 16);
        let d = random_image(9, 8, 17);
        let m = random_mask(9, 8, 18);
        check_grad(&|x| content_loss_grad(x, &t, &m, &fx).unwrap(), &b);
        check_grad(&|x| style_loss_grad(x, &t, &m, &fx).unwrap(), &b);
        check_grad(&|x| gradient_loss_grad(x, &t, &d, &m).unwrap(), &b);
        check_grad(&|x| tv_loss_grad(x, &m).unwrap(), &b);
    }
}
