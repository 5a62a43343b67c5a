use super::{Image, ImageError, Result};
use crate::tensor::kernels::{down2x, resize_bilinear, Boundary};
use crate::tensor::Tensor;

/// Two-band Laplacian pyramid with a quarter-resolution Gaussian top.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianPyramid {
    /// `b − up2x(G1)` at full resolution (signed).
    pub band_full: Image,
    /// `G1 − up2x(G2)` at half resolution (signed).
    pub band_half: Image,
    /// `G2` at quarter resolution.
    pub top_quarter: Image,
}

const BINOMIAL: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Separable 5-tap binomial blur with edge replication.
fn blur(img: &Image) -> Image {
    let (w, h) = (img.width(), img.height());
    let mut tmp = img.clone();
    let mut out = img.clone();
    for c in 0..img.channels() {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &wt) in BINOMIAL.iter().enumerate() {
                    let sx = (x as isize + k as isize - 2).clamp(0, w as isize - 1) as usize;
                    acc += wt * img.get(c, y, sx);
                }
                tmp.set(c, y, x, acc);
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &wt) in BINOMIAL.iter().enumerate() {
                    let sy = (y as isize + k as isize - 2).clamp(0, h as isize - 1) as usize;
                    acc += wt * tmp.get(c, sy, x);
                }
                out.set(c, y, x, acc);
            }
        }
    }
    out
}

fn half(img: &Image) -> Image {
    let t = down2x(&img.to_tensor::<f32>()).expect("even dims checked by caller");
    Image::from_tensor(&t, 0).expect("single item")
}

fn double(img: &Image) -> Image {
    let t: Tensor<f32> = img.to_tensor();
    let up = resize_bilinear(&t, img.height() * 2, img.width() * 2, Boundary::Clamp).expect("non-empty image");
    Image::from_tensor(&up, 0).expect("single item")
}

fn sub(a: &Image, b: &Image) -> Image {
    a.zip_map(b, |x, y| x - y).expect("matching dims")
}

fn add(a: &Image, b: &Image) -> Image {
    a.zip_map(b, |x, y| x + y).expect("matching dims")
}

pub fn pyramid_build(b: &Image) -> Result<LaplacianPyramid> {
    if !b.height().is_multiple_of(4) || !b.width().is_multiple_of(4) {
        return Err(ImageError::Dimensions(format!(
            "pyramid needs sides divisible by 4, got {}x{}",
            b.height(),
            b.width()
        )));
    }
    let g1 = half(&blur(b));
    let g2 = half(&blur(&g1));
    Ok(LaplacianPyramid {
        band_full: sub(b, &double(&g1)),
        band_half: sub(&g1, &double(&g2)),
        top_quarter: g2,
    })
}

pub fn pyramid_collapse(p: &LaplacianPyramid) -> Result<Image> {
    let (top, mid, full) = (&p.top_quarter, &p.band_half, &p.band_full);
    let consistent = mid.height() == 2 * top.height()
        && mid.width() == 2 * top.width()
        && full.height() == 2 * mid.height()
        && full.width() == 2 * mid.width()
        && top.channels() == mid.channels()
        && mid.channels() == full.channels();
    if !consistent {
        return Err(ImageError::Dimensions(format!(
            "inconsistent pyramid levels {}x{}, {}x{}, {}x{}",
            full.height(),
            full.width(),
            mid.height(),
            mid.width(),
            top.height(),
            top.width()
        )));
    }
    let g1 = add(&double(top), mid);
    Ok(add(&double(&g1), full).clamped())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::procedural::random_image;

    #[test]
    fn constant_image_has_zero_bands() {
        let img = Image::filled(16, 12, 3, 0.42);
        let p = pyramid_build(&img).unwrap();
        assert!(p.band_full.data().iter().all(|v| v.abs() < 1e-6));
        assert!(p.band_half.data().iter().all(|v| v.abs() < 1e-6));
        assert!(p.top_quarter.data().iter().all(|v| (v - 0.42).abs() < 1e-6));
    }

    #[test]
    fn levels_halve() {
        let p = pyramid_build(&random_image(64, 64, 3, 1)).unwrap();
        assert_eq!((p.band_full.width(), p.band_full.height()), (64, 64));
        assert_eq!((p.band_half.width(), p.band_half.height()), (32, 32));
        assert_eq!((p.top_quarter.width(), p.top_quarter.height()), (16, 16));
    }

    #[test]
    fn collapse_inverts_build() {
        for seed in 0..5 {
            let img = random_image(64, 64, 3, seed);
            let back = pyramid_collapse(&pyramid_build(&img).unwrap()).unwrap();
            let err = img
                .data()
                .iter()
                .zip(back.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f32::max);
            assert!(err < 1e-5, "{err}");
        }
    }

    #[test]
    fn zero_bands_and_constant_top_give_constant() {
        let p = LaplacianPyramid {
            band_full: Image::filled(16, 16, 1, 0.0),
            band_half: Image::filled(8, 8, 1, 0.0),
            top_quarter: Image::filled(4, 4, 1, 0.3),
        };
        let img = pyramid_collapse(&p).unwrap();
        assert!(img.data().iter().all(|v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn dropping_fine_band_lowers_variance() {
        let img = random_image(64, 64, 3, 9);
        let mut p = pyramid_build(&img).unwrap();
        p.band_full = p.band_full.map(|_| 0.0);
        let blurred = pyramid_collapse(&p).unwrap();
        assert!(blurred.variance() < img.variance());
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(pyramid_build(&Image::filled(10, 8, 1, 0.0)).is_err());
        let p = LaplacianPyramid {
            band_full: Image::filled(16, 16, 1, 0.0),
            band_half: Image::filled(6, 8, 1, 0.0),
            top_quarter: Image::filled(4, 4, 1, 0.3),
        };
        assert!(pyramid_collapse(&p).is_err());
    }
}
