//! Winograd F(2x2, 3x3) for the same 3x3 / pad 1 / stride 1 convolution.
//!
//! Each 2x2 output tile comes from a 4x4 input tile: `Y = Aᵀ [Σ_i U_i ⊙ V_i] A`
//! with `U = G g Gᵀ` (kernel) and `V = Bᵀ d B` (input). The channel sum for
//! each of the 16 tile positions is one GEMM, so a layer costs 16 GEMMs of
//! `out_ch x in_ch` by `in_ch x tiles` instead of one `out_ch x 9 in_ch` by
//! `9 in_ch x pixels` product: 2.25x fewer multiplies.
//!
//! Transforms run a whole row of tiles at a time on contiguous arrays (even
//! and odd image columns split apart) so they vectorize.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Scalar;

const POSITIONS: usize = 16;
/// Tiles per GEMM round; keeps the transformed input in cache.
const CHUNK: usize = 256;

/// Transformed kernels, `[position][out][in]`.
pub(crate) struct Filter<T> {
    u: Vec<T>,
    out_ch: usize,
    in_ch: usize,
}

impl<T: Scalar> Filter<T> {
    /// `kernel` is `(out_ch, in_ch, 3, 3)`. With `adjoint` the filter maps
    /// output gradients to input gradients: channels swap and taps flip.
    pub(crate) fn new(kernel: &[T], out_ch: usize, in_ch: usize, adjoint: bool) -> Self {
        let (rows, cols) = if adjoint {
            (in_ch, out_ch)
        } else {
            (out_ch, in_ch)
        };
        let half = T::from_f64(0.5);
        let mut u = vec![T::zero(); POSITIONS * rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let (o, i) = if adjoint { (c, r) } else { (r, c) };
                let src = &kernel[(o * in_ch + i) * 9..(o * in_ch + i + 1) * 9];
                let g = |y: usize, x: usize| {
                    if adjoint {
                        src[(2 - y) * 3 + (2 - x)]
                    } else {
                        src[y * 3 + x]
                    }
                };
                // G g: 4x3
                let mut gg = [[T::zero(); 3]; 4];
                for x in 0..3 {
                    let (g0, g1, g2) = (g(0, x), g(1, x), g(2, x));
                    gg[0][x] = g0;
                    gg[1][x] = (g0 + g1 + g2) * half;
                    gg[2][x] = (g0 - g1 + g2) * half;
                    gg[3][x] = g2;
                }
                for (y, row) in gg.iter().enumerate() {
                    let (a0, a1, a2) = (row[0], row[1], row[2]);
                    let t = [a0, (a0 + a1 + a2) * half, (a0 - a1 + a2) * half, a2];
                    for (x, &v) in t.iter().enumerate() {
                        u[((y * 4 + x) * rows + r) * cols + c] = v;
                    }
                }
            }
        }
        Self {
            u,
            out_ch: rows,
            in_ch: cols,
        }
    }
}

fn zip_map<T: Scalar>(dst: &mut [T], a: &[T], b: &[T], f: impl Fn(T, T) -> T) {
    for ((d, &x), &y) in dst.iter_mut().zip(a).zip(b) {
        *d = f(x, y);
    }
}

/// Scratch for transforming one row of tiles at a time.
struct Rows<T> {
    tw: usize,
    // even and odd columns of up to 4 (padded) image rows
    even: Vec<T>,
    odd: Vec<T>,
    // column-transformed rows, [row][position][tile]
    ct: Vec<T>,
    /// Result, `[position][tile]`.
    tiles: Vec<T>,
}

impl<T: Scalar> Rows<T> {
    fn new(tw: usize) -> Self {
        Self {
            tw,
            even: vec![T::zero(); 4 * (tw + 1)],
            odd: vec![T::zero(); 4 * (tw + 1)],
            ct: vec![T::zero(); 16 * tw],
            tiles: vec![T::zero(); 16 * tw],
        }
    }

    /// `Bᵀ d B` for the 4x4 input windows of tile row `ty` of one plane.
    fn input(&mut self, src: &[T], h: usize, w: usize, ty: usize) {
        let (tw, zero) = (self.tw, T::zero());
        for r in 0..4 {
            let e = &mut self.even[r * (tw + 1)..(r + 1) * (tw + 1)];
            let o = &mut self.odd[r * (tw + 1)..(r + 1) * (tw + 1)];
            // padded row 2ty + r is image row 2ty + r - 1
            let y = 2 * ty + r;
            if y == 0 || y > h {
                e.fill(zero);
                o.fill(zero);
                continue;
            }
            let line = &src[(y - 1) * w..y * w];
            // padded column 2k is image column 2k - 1, 2k + 1 is 2k
            e[0] = zero;
            for (k, slot) in e[1..].iter_mut().enumerate() {
                *slot = line.get(2 * k + 1).copied().unwrap_or(zero);
            }
            for (k, slot) in o.iter_mut().enumerate() {
                *slot = line.get(2 * k).copied().unwrap_or(zero);
            }
        }
        // B along columns: the window is e[k], o[k], e[k+1], o[k+1]
        for r in 0..4 {
            let e = &self.even[r * (tw + 1)..(r + 1) * (tw + 1)];
            let o = &self.odd[r * (tw + 1)..(r + 1) * (tw + 1)];
            let (e0, e1, o0, o1) = (&e[..tw], &e[1..], &o[..tw], &o[1..]);
            let row = &mut self.ct[r * 4 * tw..(r + 1) * 4 * tw];
            let (c0, rest) = row.split_at_mut(tw);
            let (c1, rest) = rest.split_at_mut(tw);
            let (c2, c3) = rest.split_at_mut(tw);
            zip_map(c0, e0, e1, |a, b| a - b);
            zip_map(c1, o0, e1, |a, b| a + b);
            zip_map(c2, e1, o0, |a, b| a - b);
            zip_map(c3, o0, o1, |a, b| a - b);
        }
        // Bᵀ along rows
        for c in 0..4 {
            let row = |r: usize| &self.ct[(r * 4 + c) * tw..(r * 4 + c + 1) * tw];
            let (t0, rest) = self.tiles.split_at_mut(4 * tw);
            let (t1, rest) = rest.split_at_mut(4 * tw);
            let (t2, t3) = rest.split_at_mut(4 * tw);
            zip_map(&mut t0[c * tw..(c + 1) * tw], row(0), row(2), |a, b| a - b);
            zip_map(&mut t1[c * tw..(c + 1) * tw], row(1), row(2), |a, b| a + b);
            zip_map(&mut t2[c * tw..(c + 1) * tw], row(2), row(1), |a, b| a - b);
            zip_map(&mut t3[c * tw..(c + 1) * tw], row(1), row(3), |a, b| a - b);
        }
    }

    /// `A dY Aᵀ` for the 2x2 output-gradient tiles of tile row `ty`.
    fn output_grad(&mut self, src: &[T], h: usize, w: usize, ty: usize) {
        let (tw, zero) = (self.tw, T::zero());
        for a in 0..2 {
            let e = &mut self.even[a * (tw + 1)..a * (tw + 1) + tw];
            let o = &mut self.odd[a * (tw + 1)..a * (tw + 1) + tw];
            let y = 2 * ty + a;
            if y >= h {
                e.fill(zero);
                o.fill(zero);
                continue;
            }
            let line = &src[y * w..(y + 1) * w];
            for (k, slot) in e.iter_mut().enumerate() {
                *slot = line[2 * k];
            }
            for (k, slot) in o.iter_mut().enumerate() {
                *slot = line.get(2 * k + 1).copied().unwrap_or(zero);
            }
        }
        // Aᵀ on the right: columns become e, e + o, e - o, -o
        for a in 0..2 {
            let e = &self.even[a * (tw + 1)..a * (tw + 1) + tw];
            let o = &self.odd[a * (tw + 1)..a * (tw + 1) + tw];
            let row = &mut self.ct[a * 4 * tw..(a + 1) * 4 * tw];
            let (c0, rest) = row.split_at_mut(tw);
            let (c1, rest) = rest.split_at_mut(tw);
            let (c2, c3) = rest.split_at_mut(tw);
            c0.copy_from_slice(e);
            zip_map(c1, e, o, |x, y| x + y);
            zip_map(c2, e, o, |x, y| x - y);
            zip_map(c3, e, o, |_, y| zero - y);
        }
        // A on the left: rows become r0, r0 + r1, r0 - r1, -r1
        for c in 0..4 {
            let r0 = &self.ct[c * tw..(c + 1) * tw];
            let r1 = &self.ct[(4 + c) * tw..(5 + c) * tw];
            let (t0, rest) = self.tiles.split_at_mut(4 * tw);
            let (t1, rest) = rest.split_at_mut(4 * tw);
            let (t2, t3) = rest.split_at_mut(4 * tw);
            t0[c * tw..(c + 1) * tw].copy_from_slice(r0);
            zip_map(&mut t1[c * tw..(c + 1) * tw], r0, r1, |x, y| x + y);
            zip_map(&mut t2[c * tw..(c + 1) * tw], r0, r1, |x, y| x - y);
            zip_map(&mut t3[c * tw..(c + 1) * tw], r0, r1, |_, y| zero - y);
        }
    }

    /// Copies the result into a `[position][channel][cols]` GEMM operand.
    fn scatter(&self, dst: &mut [T], channels: usize, ch: usize, cols: usize, col0: usize) {
        let tw = self.tw;
        for p in 0..POSITIONS {
            let s = (p * channels + ch) * cols + col0;
            dst[s..s + tw].copy_from_slice(&self.tiles[p * tw..(p + 1) * tw]);
        }
    }
}

/// Tile rows per GEMM round and the round count.
fn bands(items: usize, th: usize, tw: usize) -> (usize, usize) {
    let band = (CHUNK / tw).max(1);
    let total = items * th;
    (band.min(total), total)
}

/// Adds the convolution of `items` consecutive `(in_ch, h, w)` inputs into
/// `out` (consecutive `(out_ch, h, w)` items).
pub(crate) fn convolve_add<T: Scalar>(
    filter: &Filter<T>,
    input: &[T],
    items: usize,
    h: usize,
    w: usize,
    out: &mut [T],
) {
    let (in_ch, out_ch) = (filter.in_ch, filter.out_ch);
    let plane = h * w;
    let (th, tw) = (h.div_ceil(2), w.div_ceil(2));
    let (band, rows_total) = bands(items, th, tw);
    let mut v = vec![T::zero(); POSITIONS * in_ch * band * tw];
    let mut m = vec![T::zero(); POSITIONS * out_ch * band * tw];
    let mut rows = Rows::new(tw);
    let mut yt = vec![T::zero(); 8 * tw];

    for first in (0..rows_total).step_by(band) {
        let tile_rows = band.min(rows_total - first);
        let cols = tile_rows * tw;
        for i in 0..in_ch {
            for tr in 0..tile_rows {
                let (j, ty) = ((first + tr) / th, (first + tr) % th);
                rows.input(
                    &input[(j * in_ch + i) * plane..(j * in_ch + i + 1) * plane],
                    h,
                    w,
                    ty,
                );
                rows.scatter(&mut v, in_ch, i, cols, tr * tw);
            }
        }
        for p in 0..POSITIONS {
            T::gemm(
                out_ch,
                in_ch,
                cols,
                T::one(),
                &filter.u[p * out_ch * in_ch..],
                in_ch as isize,
                1,
                &v[p * in_ch * cols..],
                cols as isize,
                1,
                T::zero(),
                &mut m[p * out_ch * cols..],
                cols as isize,
                1,
            );
        }
        for o in 0..out_ch {
            for tr in 0..tile_rows {
                let (j, ty) = ((first + tr) / th, (first + tr) % th);
                let col0 = tr * tw;
                let prod = |p: usize| {
                    let s = (p * out_ch + o) * cols + col0;
                    &m[s..s + tw]
                };
                // Aᵀ along rows: yt[c][a]
                for c in 0..4 {
                    let (m0, m1, m2, m3) = (prod(c), prod(4 + c), prod(8 + c), prod(12 + c));
                    let (t0, t1) = yt[c * 2 * tw..(c + 1) * 2 * tw].split_at_mut(tw);
                    for k in 0..tw {
                        t0[k] = m0[k] + m1[k] + m2[k];
                        t1[k] = m1[k] - m2[k] - m3[k];
                    }
                }
                // A along columns, interleaved back into image rows
                let dst = &mut out[(j * out_ch + o) * plane..(j * out_ch + o + 1) * plane];
                for a in 0..2 {
                    let y = 2 * ty + a;
                    if y >= h {
                        break;
                    }
                    let t = |c: usize| &yt[(c * 2 + a) * tw..(c * 2 + a + 1) * tw];
                    let (t0, t1, t2, t3) = (t(0), t(1), t(2), t(3));
                    let line = &mut dst[y * w..(y + 1) * w];
                    let mut pairs = line.chunks_exact_mut(2);
                    for (k, px) in (&mut pairs).enumerate() {
                        px[0] = px[0] + t0[k] + t1[k] + t2[k];
                        px[1] = px[1] + t1[k] - t2[k] - t3[k];
                    }
                    if let [last] = pairs.into_remainder() {
                        let k = tw - 1;
                        *last = *last + t0[k] + t1[k] + t2[k];
                    }
                }
            }
        }
    }
}

/// Adds the kernel gradient of the same convolution into `grad_kernel`
/// (`(out_ch, in_ch, 3, 3)`), given the inputs and the output gradients.
///
/// The tile products are differentiated directly: `dU = Σ_tiles (A dY Aᵀ) ⊙ V`
/// per position, one GEMM each, then `dg = Gᵀ dU G`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn kernel_grad_add<T: Scalar>(
    input: &[T],
    grad_out: &[T],
    items: usize,
    in_ch: usize,
    out_ch: usize,
    h: usize,
    w: usize,
    grad_kernel: &mut [T],
) {
    let plane = h * w;
    let (th, tw) = (h.div_ceil(2), w.div_ceil(2));
    let (band, rows_total) = bands(items, th, tw);
    let mut v = vec![T::zero(); POSITIONS * in_ch * band * tw];
    let mut dm = vec![T::zero(); POSITIONS * out_ch * band * tw];
    let mut du = vec![T::zero(); POSITIONS * out_ch * in_ch];
    let mut rows = Rows::new(tw);

    for first in (0..rows_total).step_by(band) {
        let tile_rows = band.min(rows_total - first);
        let cols = tile_rows * tw;
        for tr in 0..tile_rows {
            let (j, ty) = ((first + tr) / th, (first + tr) % th);
            for i in 0..in_ch {
                rows.input(
                    &input[(j * in_ch + i) * plane..(j * in_ch + i + 1) * plane],
                    h,
                    w,
                    ty,
                );
                rows.scatter(&mut v, in_ch, i, cols, tr * tw);
            }
            for o in 0..out_ch {
                rows.output_grad(
                    &grad_out[(j * out_ch + o) * plane..(j * out_ch + o + 1) * plane],
                    h,
                    w,
                    ty,
                );
                rows.scatter(&mut dm, out_ch, o, cols, tr * tw);
            }
        }
        for p in 0..POSITIONS {
            T::gemm(
                out_ch,
                cols,
                in_ch,
                T::one(),
                &dm[p * out_ch * cols..],
                cols as isize,
                1,
                &v[p * in_ch * cols..],
                1,
                cols as isize,
                T::one(),
                &mut du[p * out_ch * in_ch..],
                in_ch as isize,
                1,
            );
        }
    }

    // Gᵀ dU G, with G rows (1,0,0), (½,½,½), (½,-½,½), (0,0,1)
    let half = T::from_f64(0.5);
    let gt = |d: [T; 4]| {
        [
            d[0] + (d[1] + d[2]) * half,
            (d[1] - d[2]) * half,
            (d[1] + d[2]) * half + d[3],
        ]
    };
    for oi in 0..out_ch * in_ch {
        let at = |p: usize| du[p * out_ch * in_ch + oi];
        let mut cols = [[T::zero(); 3]; 4];
        for (y, col) in cols.iter_mut().enumerate() {
            *col = gt([at(y * 4), at(y * 4 + 1), at(y * 4 + 2), at(y * 4 + 3)]);
        }
        let dst = &mut grad_kernel[oi * 9..(oi + 1) * 9];
        for x in 0..3 {
            let g = gt([cols[0][x], cols[1][x], cols[2][x], cols[3][x]]);
            for y in 0..3 {
                dst[y * 3 + x] = dst[y * 3 + x] + g[y];
            }
        }
    }
}
