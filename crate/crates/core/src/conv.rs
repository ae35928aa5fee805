//! Same-padded, grouped 1-D convolution kernels (im2col + GEMM).

use crate::real::{gemm, Mat, Real};

/// Left/right zero padding that keeps output width equal to input width.
///
/// Odd `k` pads `k/2` on both sides; even `k` puts the extra column on the right
/// (`k = 2` pads only on the right).
pub fn same_padding(k: usize) -> (usize, usize) {
    let total = k.saturating_sub(1);
    let left = total / 2;
    (left, total - left)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub width: usize,
    pub k: usize,
    pub groups: usize,
}

impl ConvGeom {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }
    fn direct(&self) -> bool {
        self.k == 1
    }
}

fn im2col<T: Real>(x: &[T], cin_g: usize, width: usize, k: usize, cols: &mut [T]) {
    let (pad_left, _) = same_padding(k);
    for i in 0..cin_g {
        let src = &x[i * width..(i + 1) * width];
        for j in 0..k {
            let row = &mut cols[(i * k + j) * width..(i * k + j + 1) * width];
            // row[t] = src[t + j - pad_left]
            let shift = j as isize - pad_left as isize;
            let lo = (-shift).clamp(0, width as isize) as usize;
            let hi = (width as isize - shift).clamp(0, width as isize) as usize;
            row[..lo].fill(T::zero());
            row[hi..].fill(T::zero());
            if lo < hi {
                let s = (lo as isize + shift) as usize;
                row[lo..hi].copy_from_slice(&src[s..s + (hi - lo)]);
            }
        }
    }
}

fn col2im_add<T: Real>(cols: &[T], cin_g: usize, width: usize, k: usize, gx: &mut [T]) {
    let (pad_left, _) = same_padding(k);
    for i in 0..cin_g {
        let dst = &mut gx[i * width..(i + 1) * width];
        for j in 0..k {
            let row = &cols[(i * k + j) * width..(i * k + j + 1) * width];
            let shift = j as isize - pad_left as isize;
            let lo = (-shift).clamp(0, width as isize) as usize;
            let hi = (width as isize - shift).clamp(0, width as isize) as usize;
            if lo < hi {
                let s = (lo as isize + shift) as usize;
                for (d, &r) in dst[s..s + (hi - lo)].iter_mut().zip(&row[lo..hi]) {
                    *d = *d + r;
                }
            }
        }
    }
}

pub(crate) fn forward<T: Real>(x: &[T], w: &[T], bias: Option<&[T]>, g: ConvGeom) -> Vec<T> {
    let (cin_g, cout_g, width) = (g.cin_g(), g.cout_g(), g.width);
    let rows = cin_g * g.k;
    let mut out = vec![T::zero(); g.batch * g.cout * width];
    let mut cols = if g.direct() {
        Vec::new()
    } else {
        vec![T::zero(); rows * width]
    };
    for b in 0..g.batch {
        for grp in 0..g.groups {
            let xs = &x[(b * g.cin + grp * cin_g) * width..][..cin_g * width];
            let ws = &w[grp * cout_g * rows..][..cout_g * rows];
            let os = &mut out[(b * g.cout + grp * cout_g) * width..][..cout_g * width];
            let rhs = if g.direct() {
                xs
            } else {
                im2col(xs, cin_g, width, g.k, &mut cols);
                &cols
            };
            gemm(Mat::new(ws, cout_g, rows), Mat::new(rhs, rows, width), T::zero(), os);
            if let Some(bias) = bias {
                for (o, row) in os.chunks_exact_mut(width).enumerate() {
                    let bv = bias[grp * cout_g + o];
                    row.iter_mut().for_each(|v| *v = *v + bv);
                }
            }
        }
    }
    out
}

/// Accumulates input, weight and bias gradients for `forward`.
pub(crate) fn backward<T: Real>(
    x: &[T],
    w: &[T],
    gout: &[T],
    g: ConvGeom,
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
    mut gbias: Option<&mut [T]>,
) {
    let (cin_g, cout_g, width) = (g.cin_g(), g.cout_g(), g.width);
    let rows = cin_g * g.k;
    let mut cols = if g.direct() {
        Vec::new()
    } else {
        vec![T::zero(); rows * width]
    };
    let mut gcols = if g.direct() || gx.is_none() {
        Vec::new()
    } else {
        vec![T::zero(); rows * width]
    };
    for b in 0..g.batch {
        for grp in 0..g.groups {
            let xs = &x[(b * g.cin + grp * cin_g) * width..][..cin_g * width];
            let ws = &w[grp * cout_g * rows..][..cout_g * rows];
            let gs = &gout[(b * g.cout + grp * cout_g) * width..][..cout_g * width];
            if let Some(gb) = gbias.as_deref_mut() {
                for (o, row) in gs.chunks_exact(width).enumerate() {
                    let s: T = row.iter().copied().sum();
                    gb[grp * cout_g + o] = gb[grp * cout_g + o] + s;
                }
            }
            if let Some(gw) = gw.as_deref_mut() {
                let rhs = if g.direct() {
                    xs
                } else {
                    im2col(xs, cin_g, width, g.k, &mut cols);
                    &cols
                };
                let gws = &mut gw[grp * cout_g * rows..][..cout_g * rows];
                gemm(Mat::new(gs, cout_g, width), Mat::new(rhs, rows, width).t(), T::one(), gws);
            }
            if let Some(gx) = gx.as_deref_mut() {
                let gxs = &mut gx[(b * g.cin + grp * cin_g) * width..][..cin_g * width];
                if g.direct() {
                    gemm(Mat::new(ws, cout_g, rows).t(), Mat::new(gs, cout_g, width), T::one(), gxs);
                } else {
                    gemm(Mat::new(ws, cout_g, rows).t(), Mat::new(gs, cout_g, width), T::zero(), &mut gcols);
                    col2im_add(&gcols, cin_g, width, g.k, gxs);
                }
            }
        }
    }
}
