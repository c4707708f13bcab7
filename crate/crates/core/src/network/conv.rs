//! Valid-padding NHWC convolution with `[k, k, c_in, c_out]` weights.

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn in_pixel(&self, y: usize, x: usize) -> usize {
        (y * self.w + x) * self.c_in
    }

    fn w_slice(&self, ky: usize, kx: usize) -> usize {
        (ky * self.kernel + kx) * self.c_in * self.c_out
    }

    pub fn in_len(&self) -> usize {
        self.h * self.w * self.c_in
    }

    pub fn out_len(&self) -> usize {
        self.oh * self.ow * self.c_out
    }
}

pub(crate) fn forward(g: &ConvGeom, input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    for (x_img, o_img) in input
        .chunks_exact(g.in_len())
        .zip(out.chunks_exact_mut(g.out_len()))
    {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o = &mut o_img[(oy * g.ow + ox) * g.c_out..][..g.c_out];
                o.copy_from_slice(bias);
                for ky in 0..g.kernel {
                    for kx in 0..g.kernel {
                        let pix = &x_img[g.in_pixel(oy * g.stride + ky, ox * g.stride + kx)..][..g.c_in];
                        let ws = &weight[g.w_slice(ky, kx)..][..g.c_in * g.c_out];
                        for (&xv, wrow) in pix.iter().zip(ws.chunks_exact(g.c_out)) {
                            if xv == 0.0 {
                                continue;
                            }
                            for (ov, &wv) in o.iter_mut().zip(wrow) {
                                *ov += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight/bias gradients and, when `d_input` is given, the input gradient.
pub(crate) fn backward(
    g: &ConvGeom,
    input: &[f64],
    weight: &[f64],
    d_out: &[f64],
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    mut d_input: Option<&mut [f64]>,
) {
    let n = input.len() / g.in_len();
    for b in 0..n {
        let x_img = &input[b * g.in_len()..][..g.in_len()];
        let d_img = &d_out[b * g.out_len()..][..g.out_len()];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let d = &d_img[(oy * g.ow + ox) * g.c_out..][..g.c_out];
                if d.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for (db, &dv) in d_bias.iter_mut().zip(d) {
                    *db += dv;
                }
                for ky in 0..g.kernel {
                    for kx in 0..g.kernel {
                        let p = g.in_pixel(oy * g.stride + ky, ox * g.stride + kx);
                        let pix = &x_img[p..][..g.c_in];
                        let ws = g.w_slice(ky, kx);
                        let dws = &mut d_weight[ws..][..g.c_in * g.c_out];
                        for (&xv, dwrow) in pix.iter().zip(dws.chunks_exact_mut(g.c_out)) {
                            if xv == 0.0 {
                                continue;
                            }
                            for (dw, &dv) in dwrow.iter_mut().zip(d) {
                                *dw += xv * dv;
                            }
                        }
                        if let Some(dx) = d_input.as_deref_mut() {
                            let dpix = &mut dx[b * g.in_len() + p..][..g.c_in];
                            let wrows = &weight[ws..][..g.c_in * g.c_out];
                            for (dxv, wrow) in dpix.iter_mut().zip(wrows.chunks_exact(g.c_out)) {
                                *dxv += wrow.iter().zip(d).map(|(w, dv)| w * dv).sum::<f64>();
                            }
                        }
                    }
                }
            }
        }
    }
}
