use crate::error::{config_err, dim_err, Result};
use crate::float::Float;
use crate::graph::{Accum, Graph, Op, Var};
use crate::tensor::Tensor;

/// Geometry of a 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dCfg {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for Conv2dCfg {
    fn default() -> Self {
        Self { stride: 1, padding: 0, dilation: 1, groups: 1 }
    }
}

impl Conv2dCfg {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Self { stride, padding, dilation: 1, groups }
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn out_len(&self, len: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        let padded = len + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }
}

struct Geom {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    cig: usize,
    cog: usize,
}

/// Output positions `o` in `[lo, hi)` for which `o*stride + k*dil - pad`
/// lands inside `[0, len)`.
#[inline]
fn valid_range(len: usize, out: usize, k: usize, cfg: &Conv2dCfg) -> (usize, usize) {
    let shift = (k * cfg.dilation) as isize - cfg.padding as isize;
    let s = cfg.stride as isize;
    // o*s + shift >= 0  ->  o >= ceil(-shift / s)
    let lo = if shift >= 0 { 0 } else { ((-shift) + s - 1) / s };
    // o*s + shift <= len-1  ->  o <= floor((len-1-shift)/s)
    let top = len as isize - 1 - shift;
    let hi = if top < 0 { 0 } else { (top / s + 1).min(out as isize) };
    let lo = lo.min(out as isize);
    (lo as usize, hi.max(lo) as usize)
}

fn geometry(x: &[usize], w: &[usize], cfg: &Conv2dCfg) -> Result<Geom> {
    if x.len() != 4 || w.len() != 4 {
        return dim_err(format!("conv2d expects 4-D input and kernel, got {x:?} and {w:?}"));
    }
    if cfg.stride == 0 || cfg.dilation == 0 || cfg.groups == 0 {
        return config_err(format!("invalid conv geometry {cfg:?}"));
    }
    let (b, cin, h, wd) = (x[0], x[1], x[2], x[3]);
    let (cout, cig, kh, kw) = (w[0], w[1], w[2], w[3]);
    if cin % cfg.groups != 0 || cout % cfg.groups != 0 {
        return config_err(format!(
            "groups={} must divide input channels {cin} and output channels {cout}",
            cfg.groups
        ));
    }
    if cig * cfg.groups != cin {
        return dim_err(format!(
            "kernel expects {} input channels per group, input has {cin} over {} groups",
            cig, cfg.groups
        ));
    }
    let (Some(oh), Some(ow)) = (cfg.out_len(h, kh), cfg.out_len(wd, kw)) else {
        return dim_err(format!("kernel {kh}x{kw} does not fit input {h}x{wd} with {cfg:?}"));
    };
    Ok(Geom { b, cin, h, w: wd, cout, kh, kw, oh, ow, cig, cog: cout / cfg.groups })
}

/// Direct cross-correlation (no kernel flip) with zero padding.
pub fn conv2d_forward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    cfg: &Conv2dCfg,
) -> Result<Tensor<T>> {
    let gm = geometry(x.shape(), w.shape(), cfg)?;
    if let Some(bias) = b {
        if bias.shape() != [gm.cout] {
            return dim_err(format!("bias shape {:?}, expected [{}]", bias.shape(), gm.cout));
        }
    }
    let (xd, wd) = (x.data(), w.data());
    let plane_out = gm.oh * gm.ow;
    let mut out = vec![T::zero(); gm.b * gm.cout * plane_out];
    for bi in 0..gm.b {
        for oc in 0..gm.cout {
            let grp = oc / gm.cog;
            let dst = &mut out[(bi * gm.cout + oc) * plane_out..][..plane_out];
            if let Some(bias) = b {
                dst.fill(bias.data()[oc]);
            }
            for icl in 0..gm.cig {
                let ic = grp * gm.cig + icl;
                let src = &xd[(bi * gm.cin + ic) * gm.h * gm.w..][..gm.h * gm.w];
                for ky in 0..gm.kh {
                    let (oy0, oy1) = valid_range(gm.h, gm.oh, ky, cfg);
                    for kx in 0..gm.kw {
                        let wv = wd[((oc * gm.cig + icl) * gm.kh + ky) * gm.kw + kx];
                        let (ox0, ox1) = valid_range(gm.w, gm.ow, kx, cfg);
                        if ox0 == ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = oy * cfg.stride + ky * cfg.dilation - cfg.padding;
                            let row = &src[iy * gm.w..][..gm.w];
                            let orow = &mut dst[oy * gm.ow..][..gm.ow];
                            if cfg.stride == 1 {
                                let ix0 = ox0 + kx * cfg.dilation - cfg.padding;
                                for (o, &v) in orow[ox0..ox1].iter_mut().zip(&row[ix0..]) {
                                    *o += wv * v;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = ox * cfg.stride + kx * cfg.dilation - cfg.padding;
                                    orow[ox] += wv * row[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[gm.b, gm.cout, gm.oh, gm.ow], out)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Float>(
    gr: &Graph<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    cfg: Conv2dCfg,
    _y: &Tensor<T>,
    g: &[T],
    acc: &mut Accum<'_, T>,
) {
    let xv = gr.value(x);
    let wv = gr.value(w);
    let gm = geometry(xv.shape(), wv.shape(), &cfg).expect("validated in forward");
    let plane_out = gm.oh * gm.ow;
    if let Some(bv) = b {
        acc.add_with(bv, |d| {
            for bi in 0..gm.b {
                for oc in 0..gm.cout {
                    d[oc] += g[(bi * gm.cout + oc) * plane_out..][..plane_out].iter().copied().sum::<T>();
                }
            }
        });
    }
    let want_x = acc.wants(x);
    let want_w = acc.wants(w);
    if !want_x && !want_w {
        return;
    }
    let mut gx = if want_x { vec![T::zero(); xv.numel()] } else { Vec::new() };
    let mut gw = if want_w { vec![T::zero(); wv.numel()] } else { Vec::new() };
    let (xd, wd) = (xv.data(), wv.data());
    for bi in 0..gm.b {
        for oc in 0..gm.cout {
            let grp = oc / gm.cog;
            let gplane = &g[(bi * gm.cout + oc) * plane_out..][..plane_out];
            for icl in 0..gm.cig {
                let ic = grp * gm.cig + icl;
                let base = (bi * gm.cin + ic) * gm.h * gm.w;
                for ky in 0..gm.kh {
                    let (oy0, oy1) = valid_range(gm.h, gm.oh, ky, &cfg);
                    for kx in 0..gm.kw {
                        let widx = ((oc * gm.cig + icl) * gm.kh + ky) * gm.kw + kx;
                        let wval = wd[widx];
                        let (ox0, ox1) = valid_range(gm.w, gm.ow, kx, &cfg);
                        let mut wacc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * cfg.stride + ky * cfg.dilation - cfg.padding;
                            let grow = &gplane[oy * gm.ow..][..gm.ow];
                            for ox in ox0..ox1 {
                                let ix = ox * cfg.stride + kx * cfg.dilation - cfg.padding;
                                let gi = grow[ox];
                                let xi = base + iy * gm.w + ix;
                                if want_w {
                                    wacc += gi * xd[xi];
                                }
                                if want_x {
                                    gx[xi] += gi * wval;
                                }
                            }
                        }
                        if want_w {
                            gw[widx] += wacc;
                        }
                    }
                }
            }
        }
    }
    if want_x {
        acc.add_slice(x, &gx);
    }
    if want_w {
        acc.add_slice(w, &gw);
    }
}

/// Depthwise causal 1-D convolution over the sequence axis of (B, L, E):
/// `y[t,e] = b[e] + Σ_k w[e,k]·x[t-(K-1)+k, e]`, zero before the start.
pub fn causal_conv1d_forward<T: Float>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 3 || w.rank() != 2 || w.shape()[0] != s[2] {
        return dim_err(format!("causal conv1d: input {s:?} with kernel {:?}", w.shape()));
    }
    let (bsz, l, e, k) = (s[0], s[1], s[2], w.shape()[1]);
    if let Some(bias) = b {
        if bias.shape() != [e] {
            return dim_err(format!("bias shape {:?}, expected [{e}]", bias.shape()));
        }
    }
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![T::zero(); xd.len()];
    for bi in 0..bsz {
        for t in 0..l {
            for c in 0..e {
                let mut acc = b.map_or(T::zero(), |bb| bb.data()[c]);
                for j in 0..k {
                    let src = t as isize - (k - 1) as isize + j as isize;
                    if src >= 0 {
                        acc += wd[c * k + j] * xd[(bi * l + src as usize) * e + c];
                    }
                }
                out[(bi * l + t) * e + c] = acc;
            }
        }
    }
    Tensor::new(s, out)
}

pub(crate) fn causal_conv1d_backward<T: Float>(
    gr: &Graph<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    g: &[T],
    acc: &mut Accum<'_, T>,
) {
    let xv = gr.value(x);
    let wv = gr.value(w);
    let s = xv.shape();
    let (bsz, l, e, k) = (s[0], s[1], s[2], wv.shape()[1]);
    if let Some(bv) = b {
        acc.add_with(bv, |d| {
            for (i, &gi) in g.iter().enumerate() {
                d[i % e] += gi;
            }
        });
    }
    let mut gx = vec![T::zero(); xv.numel()];
    let mut gw = vec![T::zero(); wv.numel()];
    let (xd, wd) = (xv.data(), wv.data());
    for bi in 0..bsz {
        for t in 0..l {
            for c in 0..e {
                let gi = g[(bi * l + t) * e + c];
                for j in 0..k {
                    let src = t as isize - (k - 1) as isize + j as isize;
                    if src >= 0 {
                        let xi = (bi * l + src as usize) * e + c;
                        gw[c * k + j] += gi * xd[xi];
                        gx[xi] += gi * wd[c * k + j];
                    }
                }
            }
        }
    }
    acc.add_slice(x, &gx);
    acc.add_slice(w, &gw);
}

impl<T: Float> Graph<T> {
    /// 2-D cross-correlation of (B, Cin, H, W) with (Cout, Cin/groups, kh, kw).
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, cfg: Conv2dCfg) -> Result<Var> {
        let out = conv2d_forward(self.value(x), self.value(w), b.map(|v| self.value(v)), &cfg)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, cfg }, &inputs))
    }

    /// Depthwise causal convolution over (B, L, E) with kernel (E, K).
    pub fn causal_conv1d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = causal_conv1d_forward(self.value(x), self.value(w), b.map(|v| self.value(v)))?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::CausalConv1d { x, w, b }, &inputs))
    }
}
