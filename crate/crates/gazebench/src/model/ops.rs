//! Convolution primitives used by the network, with their exact adjoints.
//!
//! All kernels are 3×3 with zero padding 1. Strided convolutions halve the
//! spatial size; transposed convolutions (stride 2, output padding 1)
//! exactly double it. Layouts are channel-major row-major; transposed
//! weights are stored `[in_ch, out_ch, 3, 3]`.

pub const K: usize = 3;
const PAD: i64 = 1;

/// `out[o,oy,ox] = b[o] + Σ_{c,ky,kx} in[c, oy·s-1+ky, ox·s-1+kx] w[o,c,ky,kx]`
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    inp: &[f64],
    ic: usize,
    ih: usize,
    iw: usize,
    w: &[f64],
    b: &[f64],
    oc: usize,
    stride: usize,
    out: &mut [f64],
    oh: usize,
    ow: usize,
) {
    debug_assert_eq!(inp.len(), ic * ih * iw);
    debug_assert_eq!(w.len(), oc * ic * K * K);
    debug_assert_eq!(out.len(), oc * oh * ow);
    for o in 0..oc {
        let out_o = &mut out[o * oh * ow..(o + 1) * oh * ow];
        out_o.fill(b[o]);
        for c in 0..ic {
            let inp_c = &inp[c * ih * iw..(c + 1) * ih * iw];
            let w_oc = &w[(o * ic + c) * K * K..(o * ic + c + 1) * K * K];
            for oy in 0..oh {
                let iy0 = (oy * stride) as i64 - PAD;
                for (ky, wrow) in w_oc.chunks_exact(K).enumerate() {
                    let iy = iy0 + ky as i64;
                    if iy < 0 || iy >= ih as i64 {
                        continue;
                    }
                    let row = &inp_c[iy as usize * iw..(iy as usize + 1) * iw];
                    let out_row = &mut out_o[oy * ow..(oy + 1) * ow];
                    for (ox, acc) in out_row.iter_mut().enumerate() {
                        let ix0 = (ox * stride) as i64 - PAD;
                        let mut s = 0.0;
                        for (kx, &wv) in wrow.iter().enumerate() {
                            let ix = ix0 + kx as i64;
                            if ix >= 0 && ix < iw as i64 {
                                s += row[ix as usize] * wv;
                            }
                        }
                        *acc += s;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`conv2d`]: accumulates weight/bias gradients and, when
/// `dinp` is given, the gradient with respect to the input.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    inp: &[f64],
    ic: usize,
    ih: usize,
    iw: usize,
    w: &[f64],
    oc: usize,
    stride: usize,
    dout: &[f64],
    oh: usize,
    ow: usize,
    mut dinp: Option<&mut [f64]>,
    dw: &mut [f64],
    db: &mut [f64],
) {
    for o in 0..oc {
        let dout_o = &dout[o * oh * ow..(o + 1) * oh * ow];
        db[o] += dout_o.iter().sum::<f64>();
        for c in 0..ic {
            let inp_c = &inp[c * ih * iw..(c + 1) * ih * iw];
            let w_oc = &w[(o * ic + c) * K * K..(o * ic + c + 1) * K * K];
            let dw_oc = &mut dw[(o * ic + c) * K * K..(o * ic + c + 1) * K * K];
            for oy in 0..oh {
                let iy0 = (oy * stride) as i64 - PAD;
                for ky in 0..K {
                    let iy = iy0 + ky as i64;
                    if iy < 0 || iy >= ih as i64 {
                        continue;
                    }
                    let iy = iy as usize;
                    for ox in 0..ow {
                        let g = dout_o[oy * ow + ox];
                        if g == 0.0 {
                            continue;
                        }
                        let ix0 = (ox * stride) as i64 - PAD;
                        for kx in 0..K {
                            let ix = ix0 + kx as i64;
                            if ix < 0 || ix >= iw as i64 {
                                continue;
                            }
                            let ix = ix as usize;
                            dw_oc[ky * K + kx] += g * inp_c[iy * iw + ix];
                            if let Some(di) = dinp.as_deref_mut() {
                                di[c * ih * iw + iy * iw + ix] += g * w_oc[ky * K + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Transposed convolution, stride 2, padding 1, output padding 1:
/// `out[o, 2y-1+ky, 2x-1+kx] += in[c,y,x] w[c,o,ky,kx]`, output 2·ih × 2·iw.
#[allow(clippy::too_many_arguments)]
pub fn tconv2d(
    inp: &[f64],
    ic: usize,
    ih: usize,
    iw: usize,
    w: &[f64],
    b: &[f64],
    oc: usize,
    out: &mut [f64],
) {
    let (oh, ow) = (2 * ih, 2 * iw);
    debug_assert_eq!(w.len(), ic * oc * K * K);
    debug_assert_eq!(out.len(), oc * oh * ow);
    for o in 0..oc {
        out[o * oh * ow..(o + 1) * oh * ow].fill(b[o]);
    }
    for c in 0..ic {
        let inp_c = &inp[c * ih * iw..(c + 1) * ih * iw];
        for o in 0..oc {
            let w_co = &w[(c * oc + o) * K * K..(c * oc + o + 1) * K * K];
            let out_o = &mut out[o * oh * ow..(o + 1) * oh * ow];
            for y in 0..ih {
                for ky in 0..K {
                    let oy = 2 * y as i64 - PAD + ky as i64;
                    if oy < 0 || oy >= oh as i64 {
                        continue;
                    }
                    let orow = &mut out_o[oy as usize * ow..(oy as usize + 1) * ow];
                    let wrow = &w_co[ky * K..(ky + 1) * K];
                    for x in 0..iw {
                        let v = inp_c[y * iw + x];
                        for (kx, &wv) in wrow.iter().enumerate() {
                            let ox = 2 * x as i64 - PAD + kx as i64;
                            if ox >= 0 && ox < ow as i64 {
                                orow[ox as usize] += v * wv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`tconv2d`].
#[allow(clippy::too_many_arguments)]
pub fn tconv2d_backward(
    inp: &[f64],
    ic: usize,
    ih: usize,
    iw: usize,
    w: &[f64],
    oc: usize,
    dout: &[f64],
    mut dinp: Option<&mut [f64]>,
    dw: &mut [f64],
    db: &mut [f64],
) {
    let (oh, ow) = (2 * ih, 2 * iw);
    for o in 0..oc {
        db[o] += dout[o * oh * ow..(o + 1) * oh * ow].iter().sum::<f64>();
    }
    for c in 0..ic {
        let inp_c = &inp[c * ih * iw..(c + 1) * ih * iw];
        for o in 0..oc {
            let w_co = &w[(c * oc + o) * K * K..(c * oc + o + 1) * K * K];
            let dw_co = &mut dw[(c * oc + o) * K * K..(c * oc + o + 1) * K * K];
            let dout_o = &dout[o * oh * ow..(o + 1) * oh * ow];
            for y in 0..ih {
                for ky in 0..K {
                    let oy = 2 * y as i64 - PAD + ky as i64;
                    if oy < 0 || oy >= oh as i64 {
                        continue;
                    }
                    let drow = &dout_o[oy as usize * ow..(oy as usize + 1) * ow];
                    for x in 0..iw {
                        let v = inp_c[y * iw + x];
                        let mut dv = 0.0;
                        for kx in 0..K {
                            let ox = 2 * x as i64 - PAD + kx as i64;
                            if ox < 0 || ox >= ow as i64 {
                                continue;
                            }
                            let g = drow[ox as usize];
                            dw_co[ky * K + kx] += g * v;
                            dv += g * w_co[ky * K + kx];
                        }
                        if let Some(di) = dinp.as_deref_mut() {
                            di[c * ih * iw + y * iw + x] += dv;
                        }
                    }
                }
            }
        }
    }
}
