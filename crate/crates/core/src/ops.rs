//! Convolution and resampling kernels on `[C,H,W]` tensors.

use crate::tape::ConvSpec;
use crate::{Scalar, Tensor};

pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    spec: ConvSpec,
    ho: usize,
    wo: usize,
    col: &mut [T],
) {
    let hw = ho * wo;
    for c in 0..cin {
        let xc = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    col: &[T],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    spec: ConvSpec,
    ho: usize,
    wo: usize,
    dx: &mut [T],
) {
    let hw = ho * wo;
    for c in 0..cin {
        let dxc = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut dxc[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            drow[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn is_pointwise(k: usize, spec: ConvSpec) -> bool {
    k == 1 && spec.stride == 1 && spec.pad == 0
}

fn is_depthwise(cin: usize, cout: usize, spec: ConvSpec) -> bool {
    spec.groups > 1 && spec.groups == cin && cin == cout
}

/// 2-D convolution of a `[Cin,H,W]` map with `[Cout,Cin/g,k,k]` weights.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
    spec: ConvSpec,
) -> Tensor<T> {
    let (cin, h, w) = x.chw();
    let ws = weight.shape();
    let (cout, cin_g, k) = (ws[0], ws[1], ws[2]);
    assert_eq!(cin_g * spec.groups, cin, "conv input channels {cin} vs weight {ws:?}");
    let ho = conv_out_size(h, k, spec.stride, spec.pad);
    let wo = conv_out_size(w, k, spec.stride, spec.pad);
    let hw = ho * wo;
    let mut out = vec![T::zero(); cout * hw];

    if is_depthwise(cin, cout, spec) {
        depthwise_forward(x.data(), weight.data(), h, w, k, spec, ho, wo, &mut out);
    } else {
        let cout_g = cout / spec.groups;
        let kk = cin_g * k * k;
        let mut col = if is_pointwise(k, spec) {
            Vec::new()
        } else {
            vec![T::zero(); kk * hw]
        };
        for g in 0..spec.groups {
            let xg = &x.data()[g * cin_g * h * w..(g + 1) * cin_g * h * w];
            let wg = &weight.data()[g * cout_g * kk..(g + 1) * cout_g * kk];
            let cols: &[T] = if is_pointwise(k, spec) {
                xg
            } else {
                im2col(xg, cin_g, h, w, k, spec, ho, wo, &mut col);
                &col
            };
            T::gemm(
                cout_g,
                kk,
                hw,
                wg,
                false,
                cols,
                false,
                T::zero(),
                &mut out[g * cout_g * hw..(g + 1) * cout_g * hw],
            );
        }
    }
    if let Some(b) = bias {
        for (c, &bc) in b.iter().enumerate() {
            for v in &mut out[c * hw..(c + 1) * hw] {
                *v += bc;
            }
        }
    }
    Tensor::from_vec(&[cout, ho, wo], out)
}

/// Returns `(dx, dweight, dbias)`; `dx` only when requested.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    gy: &Tensor<T>,
    spec: ConvSpec,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (cin, h, w) = x.chw();
    let ws = weight.shape();
    let (cout, cin_g, k) = (ws[0], ws[1], ws[2]);
    let (_, ho, wo) = gy.chw();
    let hw = ho * wo;

    let mut db = vec![T::zero(); cout];
    for (c, d) in db.iter_mut().enumerate() {
        *d = gy.data()[c * hw..(c + 1) * hw].iter().copied().sum();
    }
    let mut dw = vec![T::zero(); weight.len()];
    let mut dx = need_dx.then(|| vec![T::zero(); cin * h * w]);

    if is_depthwise(cin, cout, spec) {
        depthwise_backward(
            x.data(),
            weight.data(),
            gy.data(),
            h,
            w,
            k,
            spec,
            ho,
            wo,
            &mut dw,
            dx.as_deref_mut(),
        );
    } else {
        let cout_g = cout / spec.groups;
        let kk = cin_g * k * k;
        let pointwise = is_pointwise(k, spec);
        let mut col = if pointwise { Vec::new() } else { vec![T::zero(); kk * hw] };
        let mut dcol = if pointwise || !need_dx {
            Vec::new()
        } else {
            vec![T::zero(); kk * hw]
        };
        for g in 0..spec.groups {
            let xg = &x.data()[g * cin_g * h * w..(g + 1) * cin_g * h * w];
            let wg = &weight.data()[g * cout_g * kk..(g + 1) * cout_g * kk];
            let gyg = &gy.data()[g * cout_g * hw..(g + 1) * cout_g * hw];
            let cols: &[T] = if pointwise {
                xg
            } else {
                im2col(xg, cin_g, h, w, k, spec, ho, wo, &mut col);
                &col
            };
            // dW_g = dY_g · colᵀ
            T::gemm(
                cout_g,
                hw,
                kk,
                gyg,
                false,
                cols,
                true,
                T::zero(),
                &mut dw[g * cout_g * kk..(g + 1) * cout_g * kk],
            );
            if let Some(dx) = dx.as_mut() {
                let dxg = &mut dx[g * cin_g * h * w..(g + 1) * cin_g * h * w];
                if pointwise {
                    T::gemm(kk, cout_g, hw, wg, true, gyg, false, T::one(), dxg);
                } else {
                    T::gemm(kk, cout_g, hw, wg, true, gyg, false, T::zero(), &mut dcol);
                    col2im(&dcol, cin_g, h, w, k, spec, ho, wo, dxg);
                }
            }
        }
    }
    (
        dx.map(|d| Tensor::from_vec(&[cin, h, w], d)),
        Tensor::from_vec(ws, dw),
        Tensor::from_vec(&[cout], db),
    )
}

#[allow(clippy::too_many_arguments)]
fn depthwise_forward<T: Scalar>(
    x: &[T],
    wt: &[T],
    h: usize,
    w: usize,
    k: usize,
    spec: ConvSpec,
    ho: usize,
    wo: usize,
    out: &mut [T],
) {
    let channels = spec.groups;
    for c in 0..channels {
        let xc = &x[c * h * w..(c + 1) * h * w];
        let kc = &wt[c * k * k..(c + 1) * k * k];
        let oc = &mut out[c * ho * wo..(c + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = T::zero();
                for ky in 0..k {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            s += kc[ky * k + kx] * xc[iy as usize * w + ix as usize];
                        }
                    }
                }
                oc[oy * wo + ox] = s;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn depthwise_backward<T: Scalar>(
    x: &[T],
    wt: &[T],
    gy: &[T],
    h: usize,
    w: usize,
    k: usize,
    spec: ConvSpec,
    ho: usize,
    wo: usize,
    dw: &mut [T],
    mut dx: Option<&mut [T]>,
) {
    for c in 0..spec.groups {
        let xc = &x[c * h * w..(c + 1) * h * w];
        let kc = &wt[c * k * k..(c + 1) * k * k];
        let gc = &gy[c * ho * wo..(c + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let g = gc[oy * wo + ox];
                for ky in 0..k {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            let xi = c * h * w + iy as usize * w + ix as usize;
                            dw[c * k * k + ky * k + kx] += g * xc[xi - c * h * w];
                            if let Some(dx) = dx.as_deref_mut() {
                                dx[xi] += g * kc[ky * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn nearest_src(dst: usize, src_len: usize, dst_len: usize) -> usize {
    ((dst * src_len) / dst_len).min(src_len - 1)
}

/// Nearest-neighbour resize to `h×w`.
pub fn resize_nearest<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (c, sh, sw) = x.chw();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let src = x.channel(ch);
        for y in 0..h {
            let sy = nearest_src(y, sh, h);
            for xx in 0..w {
                out.push(src[sy * sw + nearest_src(xx, sw, w)]);
            }
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}

pub fn resize_nearest_backward<T: Scalar>(gy: &Tensor<T>, sh: usize, sw: usize) -> Tensor<T> {
    let (c, h, w) = gy.chw();
    let mut dx = vec![T::zero(); c * sh * sw];
    for ch in 0..c {
        for y in 0..h {
            let sy = nearest_src(y, sh, h);
            for xx in 0..w {
                dx[ch * sh * sw + sy * sw + nearest_src(xx, sw, w)] += gy.at3(ch, y, xx);
            }
        }
    }
    Tensor::from_vec(&[c, sh, sw], dx)
}

/// Source taps for half-pixel-centre bilinear sampling along one axis.
#[inline]
pub(crate) fn bilinear_taps(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (s.floor() as usize).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    let frac = if i0 == src_len - 1 { 0.0 } else { s - i0 as f64 };
    (i0, i1, frac)
}

/// Bilinear resize of one channel (half-pixel centres, edge clamped).
pub fn resize_plane_bilinear<T: Scalar>(src: &[T], sh: usize, sw: usize, h: usize, w: usize) -> Vec<T> {
    let xt: Vec<_> = (0..w).map(|x| bilinear_taps(x, sw, w)).collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let (y0, y1, fy) = bilinear_taps(y, sh, h);
        let fy = T::lit(fy);
        for &(x0, x1, fx) in &xt {
            let fx = T::lit(fx);
            let top = src[y0 * sw + x0] * (T::one() - fx) + src[y0 * sw + x1] * fx;
            let bot = src[y1 * sw + x0] * (T::one() - fx) + src[y1 * sw + x1] * fx;
            out.push(top * (T::one() - fy) + bot * fy);
        }
    }
    out
}

pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (c, sh, sw) = x.chw();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        out.extend(resize_plane_bilinear(x.channel(ch), sh, sw, h, w));
    }
    Tensor::from_vec(&[c, h, w], out)
}

pub fn resize_bilinear_backward<T: Scalar>(gy: &Tensor<T>, sh: usize, sw: usize) -> Tensor<T> {
    let (c, h, w) = gy.chw();
    let xt: Vec<_> = (0..w).map(|x| bilinear_taps(x, sw, w)).collect();
    let mut dx = vec![T::zero(); c * sh * sw];
    for ch in 0..c {
        let d = &mut dx[ch * sh * sw..(ch + 1) * sh * sw];
        let g = gy.channel(ch);
        for y in 0..h {
            let (y0, y1, fy) = bilinear_taps(y, sh, h);
            let fy = T::lit(fy);
            for (x, &(x0, x1, fx)) in xt.iter().enumerate() {
                let fx = T::lit(fx);
                let v = g[y * w + x];
                d[y0 * sw + x0] += v * (T::one() - fy) * (T::one() - fx);
                d[y0 * sw + x1] += v * (T::one() - fy) * fx;
                d[y1 * sw + x0] += v * fy * (T::one() - fx);
                d[y1 * sw + x1] += v * fy * fx;
            }
        }
    }
    Tensor::from_vec(&[c, sh, sw], dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop convolution.
    fn conv_ref(x: &Tensor<f64>, wt: &Tensor<f64>, spec: ConvSpec) -> Tensor<f64> {
        let (cin, h, w) = x.chw();
        let s = wt.shape();
        let (cout, cin_g, k) = (s[0], s[1], s[2]);
        let ho = conv_out_size(h, k, spec.stride, spec.pad);
        let wo = conv_out_size(w, k, spec.stride, spec.pad);
        let cout_g = cout / spec.groups;
        let mut out = Tensor::zeros(&[cout, ho, wo]);
        for o in 0..cout {
            let g = o / cout_g;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..cin_g {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                                let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += wt.data()[((o * cin_g + ci) * k + ky) * k + kx]
                                        * x.at3(g * cin_g + ci, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    out.data_mut()[(o * ho + oy) * wo + ox] = acc;
                }
            }
        }
        let _ = cin;
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let cases = [
            (3, 5, 3, ConvSpec { stride: 1, pad: 1, groups: 1 }),
            (4, 6, 3, ConvSpec { stride: 2, pad: 1, groups: 2 }),
            (4, 4, 3, ConvSpec { stride: 2, pad: 1, groups: 4 }),
            (4, 3, 1, ConvSpec { stride: 1, pad: 0, groups: 1 }),
            (2, 2, 3, ConvSpec { stride: 2, pad: 0, groups: 1 }),
        ];
        for (i, (cin, cout, k, spec)) in cases.into_iter().enumerate() {
            let x = Tensor::from_fn(&[cin, 7, 9], |j| ((j * 7 + i) as f64 * 0.31).sin());
            let wt = Tensor::from_fn(&[cout, cin / spec.groups, k, k], |j| ((j + 3) as f64 * 0.17).cos());
            let got = conv2d_forward(&x, &wt, None, spec);
            let want = conv_ref(&x, &wt, spec);
            assert_eq!(got.shape(), want.shape());
            assert!(got.max_abs_diff(&want) < 1e-12, "case {i}");
        }
    }

    #[test]
    fn stride_two_same_padding_is_ceil() {
        for h in [64usize, 65, 69, 138, 275, 550] {
            assert_eq!(conv_out_size(h, 3, 2, 1), h.div_ceil(2));
        }
    }

    #[test]
    fn bilinear_identity_and_constant() {
        let x = Tensor::from_fn(&[1, 4, 5], |i| i as f64);
        assert_eq!(resize_bilinear(&x, 4, 5), x);
        let c = Tensor::<f64>::full(&[2, 3, 3], 2.5);
        let up = resize_bilinear(&c, 8, 7);
        assert!(up.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn nearest_doubles_pixels() {
        let x = Tensor::from_vec(&[1, 1, 2], vec![1.0, 2.0]);
        let y = resize_nearest(&x, 2, 4);
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }
}
