use crate::error::{Error, Result};
use crate::grid::{Grid, RgbImage};
use crate::par;

/// A stack of `channels` planes of `width × height` values, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, width: usize, height: usize) -> Self {
        Self {
            channels,
            width,
            height,
            data: vec![0.0; channels * width * height],
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        (self.channels, self.width, self.height) == (other.channels, other.width, other.height)
    }

    /// Normalized Gram matrix `F Fᵀ / (C·N)` as a row-major `C × C` vector.
    pub fn gram(&self) -> Vec<f64> {
        let c = self.channels;
        let norm = (c * self.pixels()) as f64;
        let mut g = vec![0.0; c * c];
        if norm == 0.0 {
            return g;
        }
        let rows: Vec<Vec<f64>> = par::map_range(c, |i| {
            let fi = self.channel(i);
            (0..c)
                .map(|j| {
                    if j < i {
                        0.0
                    } else {
                        dot(fi, self.channel(j)) / norm
                    }
                })
                .collect()
        });
        for i in 0..c {
            for j in i..c {
                g[i * c + j] = rows[i][j];
                g[j * c + i] = rows[i][j];
            }
        }
        g
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maps an RGB image to a list of feature maps and back-propagates
/// gradients through that map.
pub trait FeatureExtractor: Send + Sync {
    /// Number of feature maps `forward` returns.
    fn layers(&self) -> usize;

    fn forward(&self, image: &RgbImage) -> Vec<FeatureMap>;

    /// Vector-Jacobian product of `forward` at `image`: given one upstream
    /// gradient per layer, returns the gradient w.r.t. the image.
    fn backward(&self, image: &RgbImage, grads: &[FeatureMap]) -> Result<RgbImage>;
}

/// Single layer whose three channels are the image channels.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn layers(&self) -> usize {
        1
    }

    fn forward(&self, image: &RgbImage) -> Vec<FeatureMap> {
        vec![split_channels(image)]
    }

    fn backward(&self, image: &RgbImage, grads: &[FeatureMap]) -> Result<RgbImage> {
        let (w, h) = image.dims();
        check_grads(&[(3, w, h)], grads)?;
        Ok(merge_channels(&grads[0]))
    }
}

pub type Kernel = [[i32; 3]; 3];

/// Fixed kernels applied depthwise at every octave.
pub const PYRAMID_KERNELS: [Kernel; 8] = [
    [[0, 0, 0], [0, 1, 0], [0, 0, 0]],
    [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]],
    [[-1, -2, -1], [0, 0, 0], [1, 2, 1]],
    [[-2, -1, 0], [-1, 0, 1], [0, 1, 2]],
    [[0, -1, -2], [1, 0, -1], [2, 1, 0]],
    [[0, 1, 0], [1, -4, 1], [0, 1, 0]],
    [[1, 1, 1], [1, 1, 1], [1, 1, 1]],
    [[-1, -1, -1], [-1, 8, -1], [-1, -1, -1]],
];

/// Deterministic filter pyramid. Octave `k` convolves the image average-pooled
/// `k` times with every kernel in [`PYRAMID_KERNELS`], per RGB channel, and
/// applies ReLU. Output channel `c·K + j` holds kernel `j` on color channel `c`.
#[derive(Debug, Clone)]
pub struct FilterPyramid {
    pub octaves: usize,
    pub kernels: Vec<Kernel>,
}

impl Default for FilterPyramid {
    fn default() -> Self {
        Self {
            octaves: 3,
            kernels: PYRAMID_KERNELS.to_vec(),
        }
    }
}

impl FilterPyramid {
    fn levels(&self, image: &RgbImage) -> Vec<FeatureMap> {
        let mut levels = Vec::with_capacity(self.octaves);
        let mut cur = split_channels(image);
        for k in 0..self.octaves {
            if k > 0 {
                cur = avg_pool(&cur);
            }
            levels.push(cur.clone());
        }
        levels
    }

    /// Pre-activation responses of one octave.
    fn responses(&self, level: &FeatureMap) -> FeatureMap {
        let kcount = self.kernels.len();
        let (w, h) = (level.width, level.height);
        let planes = par::map_range(level.channels * kcount, |ch| {
            conv3(level.channel(ch / kcount), w, h, &self.kernels[ch % kcount])
        });
        FeatureMap {
            channels: level.channels * kcount,
            width: w,
            height: h,
            data: planes.concat(),
        }
    }
}

impl FeatureExtractor for FilterPyramid {
    fn layers(&self) -> usize {
        self.octaves
    }

    fn forward(&self, image: &RgbImage) -> Vec<FeatureMap> {
        self.levels(image)
            .iter()
            .map(|level| {
                let mut r = self.responses(level);
                r.data.iter_mut().for_each(|v| *v = v.max(0.0));
                r
            })
            .collect()
    }

    fn backward(&self, image: &RgbImage, grads: &[FeatureMap]) -> Result<RgbImage> {
        let levels = self.levels(image);
        let kcount = self.kernels.len();
        let shapes: Vec<_> = levels
            .iter()
            .map(|l| (l.channels * kcount, l.width, l.height))
            .collect();
        check_grads(&shapes, grads)?;
        let mut carry: Option<FeatureMap> = None;
        for k in (0..self.octaves).rev() {
            let level = &levels[k];
            let pre = self.responses(level);
            let (w, h) = (level.width, level.height);
            let n = w * h;
            let g = &grads[k];
            let planes = par::map_range(level.channels, |c| {
                let mut acc = vec![0.0; n];
                for j in 0..kcount {
                    let ch = c * kcount + j;
                    let up: Vec<f64> = pre.data[ch * n..(ch + 1) * n]
                        .iter()
                        .zip(&g.data[ch * n..(ch + 1) * n])
                        .map(|(&p, &gv)| if p > 0.0 { gv } else { 0.0 })
                        .collect();
                    conv3_adjoint_into(&up, w, h, &self.kernels[j], &mut acc);
                }
                acc
            });
            let mut here = FeatureMap {
                channels: level.channels,
                width: w,
                height: h,
                data: planes.concat(),
            };
            if let Some(c) = carry.take() {
                let up = avg_pool_adjoint(&c, w, h);
                here.data
                    .iter_mut()
                    .zip(&up.data)
                    .for_each(|(a, b)| *a += b);
            }
            carry = Some(here);
        }
        Ok(match carry {
            Some(c) => merge_channels(&c),
            None => Grid::new(image.width(), image.height()),
        })
    }
}

fn check_grads(shapes: &[(usize, usize, usize)], grads: &[FeatureMap]) -> Result<()> {
    if grads.len() != shapes.len() {
        return Err(Error::Invalid(format!(
            "expected {} feature gradients, got {}",
            shapes.len(),
            grads.len()
        )));
    }
    for (g, &(c, w, h)) in grads.iter().zip(shapes) {
        if (g.channels, g.width, g.height) != (c, w, h) {
            return Err(Error::Invalid(format!(
                "feature gradient is {}x{}x{}, expected {c}x{w}x{h}",
                g.channels, g.width, g.height
            )));
        }
    }
    Ok(())
}

pub fn split_channels(image: &RgbImage) -> FeatureMap {
    let (w, h) = image.dims();
    let n = w * h;
    let mut data = vec![0.0; 3 * n];
    for (i, p) in image.iter().enumerate() {
        for c in 0..3 {
            data[c * n + i] = p[c];
        }
    }
    FeatureMap {
        channels: 3,
        width: w,
        height: h,
        data,
    }
}

pub fn merge_channels(f: &FeatureMap) -> RgbImage {
    let n = f.pixels();
    Grid::from_fn(f.width, f.height, |x, y| {
        let i = y * f.width + x;
        [f.data[i], f.data[n + i], f.data[2 * n + i]]
    })
}

/// 3×3 correlation with zero padding, output the same size as the input.
fn conv3(input: &[f64], w: usize, h: usize, k: &Kernel) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (ky, row) in k.iter().enumerate() {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for (kx, &kv) in row.iter().enumerate() {
                    let sx = x as isize + kx as isize - 1;
                    if kv == 0 || sx < 0 || sx >= w as isize {
                        continue;
                    }
                    s += f64::from(kv) * input[sy as usize * w + sx as usize];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

fn conv3_adjoint_into(grad: &[f64], w: usize, h: usize, k: &Kernel, acc: &mut [f64]) {
    for y in 0..h {
        for x in 0..w {
            let g = grad[y * w + x];
            if g == 0.0 {
                continue;
            }
            for (ky, row) in k.iter().enumerate() {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for (kx, &kv) in row.iter().enumerate() {
                    let sx = x as isize + kx as isize - 1;
                    if kv == 0 || sx < 0 || sx >= w as isize {
                        continue;
                    }
                    acc[sy as usize * w + sx as usize] += f64::from(kv) * g;
                }
            }
        }
    }
}

/// 2×2 average pooling; odd trailing rows and columns are dropped.
pub fn avg_pool(f: &FeatureMap) -> FeatureMap {
    let (w, h) = (f.width / 2, f.height / 2);
    let mut out = FeatureMap::zeros(f.channels, w, h);
    for c in 0..f.channels {
        let src = f.channel(c);
        for y in 0..h {
            for x in 0..w {
                let i = 2 * y * f.width + 2 * x;
                out.data[c * w * h + y * w + x] =
                    0.25 * (src[i] + src[i + 1] + src[i + f.width] + src[i + f.width + 1]);
            }
        }
    }
    out
}

fn avg_pool_adjoint(g: &FeatureMap, width: usize, height: usize) -> FeatureMap {
    let mut out = FeatureMap::zeros(g.channels, width, height);
    let n = width * height;
    for c in 0..g.channels {
        let src = g.channel(c);
        for y in 0..g.height {
            for x in 0..g.width {
                let v = 0.25 * src[y * g.width + x];
                let i = c * n + 2 * y * width + 2 * x;
                out.data[i] += v;
                out.data[i + 1] += v;
                out.data[i + width] += v;
                out.data[i + width + 1] += v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn pyramid_shapes() {
        let fx = FilterPyramid::default();
        let f = fx.forward(&random_image(13, 9, 1));
        assert_eq!(f.len(), 3);
        assert_eq!((f[0].channels, f[0].width, f[0].height), (24, 13, 9));
        assert_eq!((f[1].width, f[1].height), (6, 4));
        assert_eq!((f[2].width, f[2].height), (3, 2));
        assert!(f.iter().all(|m| m.data.iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn identity_kernel_passes_channel_through() {
        let img = random_image(5, 4, 2);
        let f = FilterPyramid::default().forward(&img);
        let n = 20;
        for c in 0..3 {
            for i in 0..n {
                assert_eq!(f[0].data[(c * 8) * n + i], img.as_slice()[i][c]);
            }
        }
    }

    #[test]
    fn sobel_on_ramp() {
        let img = Grid::from_fn(5, 5, |x, _| [x as f64; 3]);
        let f = FilterPyramid::default().forward(&img);
        // interior: Sobel-x of a unit ramp is 8
        assert_eq!(f[0].data[25 + 2 * 5 + 2], 8.0);
    }

    #[test]
    fn backward_is_adjoint() {
        // <J v, g> == <v, Jᵀ g> via central differences of <F(x), g>
        let fx = FilterPyramid::default();
        let img = random_image(10, 8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let grads: Vec<FeatureMap> = fx
            .forward(&img)
            .iter()
            .map(|m| FeatureMap {
                data: (0..m.data.len())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
                ..m.clone()
            })
            .collect();
        let probe = |im: &RgbImage| -> f64 {
            fx.forward(im)
                .iter()
                .zip(&grads)
                .map(|(f, g)| dot(&f.data, &g.data))
                .sum()
        };
        let back = fx.backward(&img, &grads).unwrap();
        let h = 1e-6;
        for &(x, y, c) in &[(0, 0, 0), (4, 3, 1), (9, 7, 2), (5, 5, 0)] {
            let mut p = img.clone();
            p.get_mut(x, y)[c] += h;
            let mut m = img.clone();
            m.get_mut(x, y)[c] -= h;
            let fd = (probe(&p) - probe(&m)) / (2.0 * h);
            let an = back.get(x, y)[c];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "{fd} vs {an}");
        }
    }

    #[test]
    fn gram_of_single_channel() {
        let f = FeatureMap {
            channels: 1,
            width: 2,
            height: 2,
            data: vec![1.0, 2.0, 3.0, 4.0],
        };
        assert_eq!(f.gram(), vec![30.0 / 4.0]);
    }

    #[test]
    fn backward_rejects_wrong_layer_count() {
        let img = random_image(4, 4, 5);
        assert!(FilterPyramid::default().backward(&img, &[]).is_err());
    }
}
