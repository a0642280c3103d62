//! Row-major raster helpers shared by the mosaic and TTA code paths.
//!
//! Rasters are flat slices with `stride` elements per pixel, so the same
//! permutation code serves 4-channel images, label sets and 9-class scores.

/// Rotates a raster a quarter turn clockwise. Output is `w x h`.
pub fn rotate_cw<T: Copy>(data: &[T], stride: usize, h: usize, w: usize) -> Vec<T> {
    debug_assert_eq!(data.len(), h * w * stride);
    let mut out = Vec::with_capacity(data.len());
    // output has h' = w rows and w' = h columns; out(y', x') = in(h - 1 - x', y')
    for y in 0..w {
        for x in 0..h {
            let src = ((h - 1 - x) * w + y) * stride;
            out.extend_from_slice(&data[src..src + stride]);
        }
    }
    out
}

/// Mirrors a raster left-right.
pub fn hflip<T: Copy>(data: &[T], stride: usize, h: usize, w: usize) -> Vec<T> {
    debug_assert_eq!(data.len(), h * w * stride);
    let mut out = Vec::with_capacity(data.len());
    for y in 0..h {
        for x in (0..w).rev() {
            let src = (y * w + x) * stride;
            out.extend_from_slice(&data[src..src + stride]);
        }
    }
    out
}

/// Applies `rotate_cw^rotation ∘ hflip^flip` (flip first). Returns the new dims.
pub fn apply_d4<T: Copy>(
    data: &[T],
    stride: usize,
    h: usize,
    w: usize,
    rotation: u8,
    flip: bool,
) -> (Vec<T>, usize, usize) {
    let mut cur = if flip {
        hflip(data, stride, h, w)
    } else {
        data.to_vec()
    };
    let (mut ch, mut cw) = (h, w);
    for _ in 0..rotation % 4 {
        cur = rotate_cw(&cur, stride, ch, cw);
        std::mem::swap(&mut ch, &mut cw);
    }
    (cur, ch, cw)
}

/// Exact inverse of [`apply_d4`]; `h`/`w` are the dims of the transformed raster.
pub fn invert_d4<T: Copy>(
    data: &[T],
    stride: usize,
    h: usize,
    w: usize,
    rotation: u8,
    flip: bool,
) -> (Vec<T>, usize, usize) {
    let back = (4 - rotation % 4) % 4;
    let (rotated, rh, rw) = apply_d4(data, stride, h, w, back, false);
    if flip {
        (hflip(&rotated, stride, rh, rw), rh, rw)
    } else {
        (rotated, rh, rw)
    }
}

/// Dims after `rotation` quarter turns.
pub fn rotated_dims(h: usize, w: usize, rotation: u8) -> (usize, usize) {
    if rotation % 2 == 1 {
        (w, h)
    } else {
        (h, w)
    }
}

/// Mean of `n` 8-bit values with sum `sum`, rounded half-up.
pub fn mean_round_half_up(sum: u32, n: u32) -> u8 {
    ((2 * sum + n) / (2 * n)) as u8
}

/// Reduces a (conceptual) `(k*out_h) x (k*out_w)` frame by `k x k` block
/// means per channel. `sample(y, x)` reads the 4 channels of frame pixel `(y, x)`.
pub fn block_mean_rgbn(
    out_h: usize,
    out_w: usize,
    k: usize,
    sample: impl Fn(usize, usize) -> [u8; 4],
) -> Vec<[u8; 4]> {
    let n = (k * k) as u32;
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        for ox in 0..out_w {
            let mut sums = [0u32; 4];
            for dy in 0..k {
                for dx in 0..k {
                    let px = sample(oy * k + dy, ox * k + dx);
                    for (s, v) in sums.iter_mut().zip(px) {
                        *s += v as u32;
                    }
                }
            }
            out.push(sums.map(|s| mean_round_half_up(s, n)));
        }
    }
    out
}

/// Block reduction with an arbitrary fold, e.g. OR over label bits.
pub fn block_fold<T: Copy, A: Copy>(
    out_h: usize,
    out_w: usize,
    k: usize,
    init: A,
    sample: impl Fn(usize, usize) -> T,
    fold: impl Fn(A, T) -> A,
) -> Vec<A> {
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        for ox in 0..out_w {
            let mut acc = init;
            for dy in 0..k {
                for dx in 0..k {
                    acc = fold(acc, sample(oy * k + dy, ox * k + dx));
                }
            }
            out.push(acc);
        }
    }
    out
}

/// Nearest-neighbour up-sampling: each pixel becomes a `k x k` block.
pub fn replicate<T: Copy>(data: &[T], stride: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    debug_assert_eq!(data.len(), h * w * stride);
    let mut out = Vec::with_capacity(data.len() * k * k);
    for y in 0..h * k {
        let sy = y / k;
        for x in 0..w * k {
            let src = (sy * w + x / k) * stride;
            out.extend_from_slice(&data[src..src + stride]);
        }
    }
    out
}
