//! Raw loops behind the spatial operators. Spatial extents are `[z, y, x]`.

use super::tensor::Element;

/// Geometry of a cubic-kernel sliding window over `[C, Z, Y, X]` blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
}

impl Window {
    /// `None` when the padded input is smaller than the kernel.
    pub fn new(input: [usize; 3], kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        let mut output = [0; 3];
        for a in 0..3 {
            let span = input[a] + 2 * pad;
            if span < kernel || stride == 0 || kernel == 0 {
                return None;
            }
            output[a] = (span - kernel) / stride + 1;
        }
        Some(Self {
            kernel,
            stride,
            pad,
            input,
            output,
        })
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output.iter().product()
    }

    pub fn taps(&self) -> usize {
        self.kernel.pow(3)
    }

    /// Input coordinate along axis `a` for output `o` and tap `k`.
    #[inline]
    fn source(&self, a: usize, o: usize, k: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < self.input[a]).then_some(i as usize)
    }

    /// Outputs `o` along axis `a` whose source `o·stride + k - pad` lies
    /// inside the input, as a half-open range.
    #[inline]
    fn valid(&self, a: usize, k: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = self.pad.saturating_sub(k).div_ceil(s);
        let hi = (self.input[a] + self.pad).checked_sub(k).map_or(0, |e| e.div_ceil(s));
        let lo = lo.min(self.output[a]);
        (lo, hi.clamp(lo, self.output[a]))
    }
}

/// Unfolds one `[C, Z, Y, X]` block into a `[C·k³, L]` matrix with rows in
/// `(c, kz, ky, kx)` order. Padding reads as zero.
pub fn im2col<T: Element>(x: &[T], channels: usize, w: &Window, cols: &mut [T]) {
    let [iz, iy, ix] = w.input;
    let [oz, oy, ox] = w.output;
    let l = w.output_len();
    let k = w.kernel;
    debug_assert_eq!(cols.len(), channels * w.taps() * l);
    let mut row = 0;
    for c in 0..channels {
        let plane = &x[c * iz * iy * ix..(c + 1) * iz * iy * ix];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let out = &mut cols[row * l..(row + 1) * l];
                    for z in 0..oz {
                        let sz = w.source(0, z, kz);
                        for y in 0..oy {
                            let dst = &mut out[(z * oy + y) * ox..(z * oy + y + 1) * ox];
                            let (Some(sz), Some(sy)) = (sz, w.source(1, y, ky)) else {
                                dst.fill(T::zero());
                                continue;
                            };
                            let line = &plane[(sz * iy + sy) * ix..(sz * iy + sy + 1) * ix];
                            let (lo, hi) = w.valid(2, kx);
                            dst[..lo].fill(T::zero());
                            dst[hi..].fill(T::zero());
                            let first = lo * w.stride + kx - w.pad;
                            if w.stride == 1 {
                                dst[lo..hi].copy_from_slice(&line[first..first + hi - lo]);
                            } else {
                                for (j, d) in dst[lo..hi].iter_mut().enumerate() {
                                    *d = line[first + j * w.stride];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into a block.
pub fn col2im<T: Element>(cols: &[T], channels: usize, w: &Window, x: &mut [T]) {
    let [iz, iy, ix] = w.input;
    let [oz, oy, ox] = w.output;
    let l = w.output_len();
    let k = w.kernel;
    let mut row = 0;
    for c in 0..channels {
        let plane = &mut x[c * iz * iy * ix..(c + 1) * iz * iy * ix];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let src = &cols[row * l..(row + 1) * l];
                    for z in 0..oz {
                        let Some(sz) = w.source(0, z, kz) else { continue };
                        for y in 0..oy {
                            let Some(sy) = w.source(1, y, ky) else { continue };
                            let base = (sz * iy + sy) * ix;
                            let s = &src[(z * oy + y) * ox..(z * oy + y + 1) * ox];
                            let (lo, hi) = w.valid(2, kx);
                            let first = base + lo * w.stride + kx - w.pad;
                            for (j, &v) in s[lo..hi].iter().enumerate() {
                                plane[first + j * w.stride] += v;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Min,
    Avg,
}

/// Pools one `[Z, Y, X]` plane. Max and min ignore padding; average
/// divides by the full window size. Returns, for max and min, the flat
/// input index chosen for each output (first hit in scan order).
pub fn pool_plane<T: Element>(x: &[T], w: &Window, kind: PoolKind, out: &mut [T], arg: &mut Vec<u32>) {
    let [_, iy, ix] = w.input;
    let [oz, oy, ox] = w.output;
    let k = w.kernel;
    let inv = T::one() / T::of(w.taps() as f64);
    for z in 0..oz {
        for y in 0..oy {
            for xo in 0..ox {
                let mut best: Option<(T, usize)> = None;
                let mut acc = T::zero();
                for kz in 0..k {
                    let Some(sz) = w.source(0, z, kz) else { continue };
                    for ky in 0..k {
                        let Some(sy) = w.source(1, y, ky) else { continue };
                        for kx in 0..k {
                            let Some(sx) = w.source(2, xo, kx) else { continue };
                            let i = (sz * iy + sy) * ix + sx;
                            let v = x[i];
                            match kind {
                                PoolKind::Avg => acc += v,
                                PoolKind::Max => {
                                    if best.is_none_or(|(b, _)| v > b) {
                                        best = Some((v, i));
                                    }
                                }
                                PoolKind::Min => {
                                    if best.is_none_or(|(b, _)| v < b) {
                                        best = Some((v, i));
                                    }
                                }
                            }
                        }
                    }
                }
                let o = (z * oy + y) * ox + xo;
                match kind {
                    PoolKind::Avg => out[o] = acc * inv,
                    _ => {
                        let (v, i) = best.expect("window overlaps the input");
                        out[o] = v;
                        arg.push(i as u32);
                    }
                }
            }
        }
    }
}

/// Adjoint of average pooling for one plane.
pub fn avg_pool_plane_backward<T: Element>(g: &[T], w: &Window, dx: &mut [T]) {
    let [_, iy, ix] = w.input;
    let [oz, oy, ox] = w.output;
    let k = w.kernel;
    let inv = T::one() / T::of(w.taps() as f64);
    for z in 0..oz {
        for y in 0..oy {
            for xo in 0..ox {
                let gv = g[(z * oy + y) * ox + xo] * inv;
                for kz in 0..k {
                    let Some(sz) = w.source(0, z, kz) else { continue };
                    for ky in 0..k {
                        let Some(sy) = w.source(1, y, ky) else { continue };
                        for kx in 0..k {
                            let Some(sx) = w.source(2, xo, kx) else { continue };
                            dx[(sz * iy + sy) * ix + sx] += gv;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_output_sizes() {
        let w = Window::new([8, 8, 8], 4, 2, 1).unwrap();
        assert_eq!(w.output, [4, 4, 4]);
        assert_eq!(Window::new([5, 5, 5], 3, 1, 1).unwrap().output, [5, 5, 5]);
        assert!(Window::new([2, 2, 2], 4, 1, 0).is_none());
    }

    #[test]
    fn col2im_is_the_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let w = Window::new([3, 4, 5], 3, 2, 1).unwrap();
        let ch = 2;
        let x: Vec<f64> = (0..ch * w.input_len()).map(|i| (i as f64 * 0.7).sin()).collect();
        let n = ch * w.taps() * w.output_len();
        let c: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut cols = vec![0.0; n];
        im2col(&x, ch, &w, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&c, ch, &w, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
