//! Pad-crop-flip augmentation for `[C, H, W]` samples. The zero padding is
//! `H / 8` pixels per side (4 for 32×32 inputs).

use rand::Rng;

pub fn pad_for(side: usize) -> usize {
    side / 8
}

/// Crops an `h×w` window at offset `(dy, dx)` from the image zero-padded by
/// `pad` on every side.
pub fn padded_crop(image: &[f64], shape: [usize; 3], pad: usize, dy: usize, dx: usize) -> Vec<f64> {
    let [c, h, w] = shape;
    let mut out = vec![0.0; image.len()];
    for ch in 0..c {
        for y in 0..h {
            let sy = (y + dy) as isize - pad as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let sx = (x + dx) as isize - pad as isize;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                out[(ch * h + y) * w + x] = image[(ch * h + sy as usize) * w + sx as usize];
            }
        }
    }
    out
}

pub fn flip_horizontal(image: &mut [f64], shape: [usize; 3]) {
    let [_, _, w] = shape;
    for row in image.chunks_mut(w) {
        row.reverse();
    }
}

/// Random crop offset in `[0, 2·pad]²` and a fair-coin horizontal flip.
pub fn augment(image: &[f64], shape: [usize; 3], rng: &mut impl Rng) -> Vec<f64> {
    let pad = pad_for(shape[1]);
    let dy = rng.random_range(0..=2 * pad);
    let dx = rng.random_range(0..=2 * pad);
    let mut out = padded_crop(image, shape, pad, dy, dx);
    if rng.random_bool(0.5) {
        flip_horizontal(&mut out, shape);
    }
    out
}
