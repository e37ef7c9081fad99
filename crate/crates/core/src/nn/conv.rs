//! 3x3 same-size convolution kernels on planar `[channel][row][col]` buffers.
//!
//! Layer inputs are extended by one pixel on every side with whole-sample
//! mirroring (`x[-1] = x[1]`, `x[n] = x[n-2]`), the boundary rule the loss
//! filters use, so every output pixel reads a full 3x3 window and the inner
//! loops run over contiguous rows.

/// Copies `cin` planes of `h x w` into a `(h+2m) x (w+2m)` layout with a zero margin `m`.
pub(crate) fn zero_pad(src: &[f64], cin: usize, h: usize, w: usize, m: usize) -> Vec<f64> {
    let pw = w + 2 * m;
    let plane = (h + 2 * m) * pw;
    let mut out = vec![0.0; cin * plane];
    for c in 0..cin {
        for y in 0..h {
            let dst = c * plane + (y + m) * pw + m;
            out[dst..dst + w].copy_from_slice(&src[(c * h + y) * w..(c * h + y + 1) * w]);
        }
    }
    out
}

/// Copies `cin` planes of `h x w` into a `(h+2) x (w+2)` layout, mirroring the border.
pub(crate) fn mirror_pad(src: &[f64], cin: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = zero_pad(src, cin, h, w, 1);
    let pw = w + 2;
    let ph = h + 2;
    for c in 0..cin {
        let p = &mut out[c * ph * pw..(c + 1) * ph * pw];
        for y in 1..=h {
            let row = &mut p[y * pw..(y + 1) * pw];
            row[0] = row[2];
            row[w + 1] = row[w - 1];
        }
        p.copy_within(2 * pw..3 * pw, 0);
        p.copy_within((h - 1) * pw..h * pw, (h + 1) * pw);
    }
    out
}

/// Adjoint of [`mirror_pad`]: folds a `(h+2) x (w+2)` gradient back onto `h x w`.
pub(crate) fn mirror_fold(padded: &[f64], cin: usize, h: usize, w: usize) -> Vec<f64> {
    let pw = w + 2;
    let ph = h + 2;
    let mut out = vec![0.0; cin * h * w];
    let mut p = vec![0.0; ph * pw];
    for c in 0..cin {
        p.copy_from_slice(&padded[c * ph * pw..(c + 1) * ph * pw]);
        for x in 0..pw {
            p[2 * pw + x] += p[x];
            p[(h - 1) * pw + x] += p[(h + 1) * pw + x];
        }
        for y in 1..=h {
            let row = &mut p[y * pw..(y + 1) * pw];
            row[2] += row[0];
            row[w - 1] += row[w + 1];
            out[(c * h + y - 1) * w..(c * h + y) * w].copy_from_slice(&row[1..=w]);
        }
    }
    out
}

/// `out[oc] = bias[oc] + sum_ic corr(padded[ic], weight[oc][ic])`.
///
/// `weight` is `[cout][cin][3][3]`; when `flip_transpose` is set the kernel
/// read for `(oc, ic)` is `weight[ic][oc]` rotated by 180 degrees, which turns
/// the correlation into the transposed convolution used for input gradients.
pub(crate) fn conv3x3(
    padded: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    flip_transpose: bool,
) -> Vec<f64> {
    let pw = w + 2;
    let plane = (h + 2) * pw;
    let mut out = vec![0.0; cout * h * w];
    for oc in 0..cout {
        let b = bias.map_or(0.0, |b| b[oc]);
        let kernels: Vec<[f64; 9]> = (0..cin)
            .map(|ic| {
                let mut k = [0.0; 9];
                if flip_transpose {
                    // weight layout here is [cin_fwd = cout][cout_fwd = cin]
                    let base = (ic * cout + oc) * 9;
                    for (i, slot) in k.iter_mut().enumerate() {
                        *slot = weight[base + 8 - i];
                    }
                } else {
                    k.copy_from_slice(&weight[(oc * cin + ic) * 9..(oc * cin + ic) * 9 + 9]);
                }
                k
            })
            .collect();
        for y in 0..h {
            let row = &mut out[(oc * h + y) * w..(oc * h + y + 1) * w];
            row.fill(b);
            for (ic, k) in kernels.iter().enumerate() {
                let base = ic * plane + y * pw;
                let r0 = &padded[base..base + pw];
                let r1 = &padded[base + pw..base + 2 * pw];
                let r2 = &padded[base + 2 * pw..base + 3 * pw];
                accumulate_row(row, r0, r1, r2, k);
            }
        }
    }
    out
}

#[inline(always)]
fn accumulate_row(row: &mut [f64], r0: &[f64], r1: &[f64], r2: &[f64], k: &[f64; 9]) {
    let w = row.len();
    let (a0, a1, a2) = (&r0[..w], &r0[1..w + 1], &r0[2..w + 2]);
    let (b0, b1, b2) = (&r1[..w], &r1[1..w + 1], &r1[2..w + 2]);
    let (c0, c1, c2) = (&r2[..w], &r2[1..w + 1], &r2[2..w + 2]);
    for x in 0..w {
        row[x] += k[0] * a0[x]
            + k[1] * a1[x]
            + k[2] * a2[x]
            + k[3] * b0[x]
            + k[4] * b1[x]
            + k[5] * b2[x]
            + k[6] * c0[x]
            + k[7] * c1[x]
            + k[8] * c2[x];
    }
}

/// Kernel gradients `dW[oc][ic][ky][kx] = sum_{y,x} g[oc][y][x] * padded[ic][y+ky][x+kx]`
/// and bias gradients `db[oc] = sum g[oc]`.
pub(crate) fn conv3x3_param_grad(
    padded: &[f64],
    grad_out: &[f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) {
    let pw = w + 2;
    let plane = (h + 2) * pw;
    // Per-tap running products, summed once at the end.
    let mut acc = vec![0.0; 9 * w];
    for oc in 0..cout {
        let g_plane = &grad_out[oc * h * w..(oc + 1) * h * w];
        grad_bias[oc] += g_plane.iter().sum::<f64>();
        for ic in 0..cin {
            acc.fill(0.0);
            for y in 0..h {
                let g = &g_plane[y * w..(y + 1) * w];
                for ky in 0..3 {
                    let base = ic * plane + (y + ky) * pw;
                    let r = &padded[base..base + pw];
                    for kx in 0..3 {
                        let tap = &mut acc[(ky * 3 + kx) * w..(ky * 3 + kx + 1) * w];
                        let src = &r[kx..kx + w];
                        for x in 0..w {
                            tap[x] += g[x] * src[x];
                        }
                    }
                }
            }
            let dst = &mut grad_weight[(oc * cin + ic) * 9..(oc * cin + ic) * 9 + 9];
            for (t, d) in dst.iter_mut().enumerate() {
                *d += acc[t * w..(t + 1) * w].iter().sum::<f64>();
            }
        }
    }
}
