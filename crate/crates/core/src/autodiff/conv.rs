//! Same-padded cross-correlation kernels over up to three spatial axes.
//!
//! 2D convolutions run through the same code with a leading spatial axis of
//! length one and kernel depth one. Every output element is owned by a single
//! task and accumulated in a fixed order, so results do not depend on the
//! number of threads.

use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    /// Spatial extent `[a, b, c]`.
    pub size: [usize; 3],
    /// Kernel extent, all odd.
    pub kernel: [usize; 3],
}

impl ConvShape {
    fn pad(&self, axis: usize) -> usize {
        self.kernel[axis] / 2
    }

    fn volume(&self) -> usize {
        self.size.iter().product()
    }

    fn plane(&self) -> usize {
        self.size[1] * self.size[2]
    }

    fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    #[inline]
    fn w_index(&self, co: usize, ci: usize, ka: usize, kb: usize, kc: usize) -> usize {
        (((co * self.c_in + ci) * self.kernel[0] + ka) * self.kernel[1] + kb) * self.kernel[2] + kc
    }

    /// Output range `[lo, hi)` along `axis` for which input index
    /// `o + k - pad` is in bounds.
    #[inline]
    fn valid(&self, axis: usize, k: usize) -> (usize, usize) {
        let n = self.size[axis];
        let p = self.pad(axis);
        let lo = p.saturating_sub(k).min(n);
        let hi = (n + p).saturating_sub(k).min(n);
        (lo, hi.max(lo))
    }

    /// Input range for the transposed direction: `i - k + pad` in bounds.
    #[inline]
    fn valid_t(&self, axis: usize, k: usize) -> (usize, usize) {
        let n = self.size[axis];
        let p = self.pad(axis);
        let lo = k.saturating_sub(p).min(n);
        let hi = (n + k).saturating_sub(p).min(n);
        (lo, hi.max(lo))
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, s: &ConvShape, y: &mut [f64]) {
    let [na, _, nc] = s.size;
    let [ka_n, kb_n, kc_n] = s.kernel;
    let (pa, pb, pc) = (s.pad(0), s.pad(1), s.pad(2));
    let vol = s.volume();
    let plane = s.plane();
    y.par_chunks_mut(plane).enumerate().for_each(|(pi, out)| {
        let co = pi / na;
        let a = pi % na;
        out.fill(bias.map_or(0.0, |b| b[co]));
        for ci in 0..s.c_in {
            let xc = &x[ci * vol..(ci + 1) * vol];
            for ka in 0..ka_n {
                let Some(ai) = (a + ka).checked_sub(pa).filter(|&v| v < na) else {
                    continue;
                };
                let xp = &xc[ai * plane..(ai + 1) * plane];
                for kb in 0..kb_n {
                    let (b_lo, b_hi) = s.valid(1, kb);
                    for kc in 0..kc_n {
                        let wv = w[s.w_index(co, ci, ka, kb, kc)];
                        let (c_lo, c_hi) = s.valid(2, kc);
                        if c_lo == c_hi {
                            continue;
                        }
                        for b in b_lo..b_hi {
                            let bi = b + kb - pb;
                            let src = bi * nc + c_lo + kc - pc;
                            axpy(
                                &mut out[b * nc + c_lo..b * nc + c_hi],
                                wv,
                                &xp[src..src + (c_hi - c_lo)],
                            );
                        }
                    }
                }
            }
        }
    });
}

pub(crate) fn backward_input(gy: &[f64], w: &[f64], s: &ConvShape, gx: &mut [f64]) {
    let [na, _, nc] = s.size;
    let [ka_n, kb_n, kc_n] = s.kernel;
    let (pa, pb, pc) = (s.pad(0), s.pad(1), s.pad(2));
    let vol = s.volume();
    let plane = s.plane();
    gx.par_chunks_mut(plane).enumerate().for_each(|(pi, out)| {
        let ci = pi / na;
        let ai = pi % na;
        out.fill(0.0);
        for co in 0..s.c_out {
            let gc = &gy[co * vol..(co + 1) * vol];
            for ka in 0..ka_n {
                let Some(a) = (ai + pa).checked_sub(ka).filter(|&v| v < na) else {
                    continue;
                };
                let gp = &gc[a * plane..(a + 1) * plane];
                for kb in 0..kb_n {
                    let (b_lo, b_hi) = s.valid_t(1, kb);
                    for kc in 0..kc_n {
                        let wv = w[s.w_index(co, ci, ka, kb, kc)];
                        let (c_lo, c_hi) = s.valid_t(2, kc);
                        if c_lo == c_hi {
                            continue;
                        }
                        for bi in b_lo..b_hi {
                            let b = bi + pb - kb;
                            let src = b * nc + c_lo + pc - kc;
                            axpy(
                                &mut out[bi * nc + c_lo..bi * nc + c_hi],
                                wv,
                                &gp[src..src + (c_hi - c_lo)],
                            );
                        }
                    }
                }
            }
        }
    });
}

pub(crate) fn backward_weight(gy: &[f64], x: &[f64], s: &ConvShape, gw: &mut [f64]) {
    let [_, _, nc] = s.size;
    let [ka_n, kb_n, kc_n] = s.kernel;
    let (pa, pb, pc) = (s.pad(0), s.pad(1), s.pad(2));
    let vol = s.volume();
    let plane = s.plane();
    let kvol = s.kernel_volume();
    gw.par_chunks_mut(kvol).enumerate().for_each(|(pair, out)| {
        let co = pair / s.c_in;
        let ci = pair % s.c_in;
        let gc = &gy[co * vol..(co + 1) * vol];
        let xc = &x[ci * vol..(ci + 1) * vol];
        let mut lanes = vec![0.0; nc];
        for ka in 0..ka_n {
            let (a_lo, a_hi) = s.valid(0, ka);
            for kb in 0..kb_n {
                let (b_lo, b_hi) = s.valid(1, kb);
                for kc in 0..kc_n {
                    let (c_lo, c_hi) = s.valid(2, kc);
                    let len = c_hi - c_lo;
                    if len == 0 {
                        out[(ka * kb_n + kb) * kc_n + kc] = 0.0;
                        continue;
                    }
                    // per-lane partial sums vectorise; lanes are folded in a fixed order
                    lanes[..len].fill(0.0);
                    for a in a_lo..a_hi {
                        let ai = a + ka - pa;
                        for b in b_lo..b_hi {
                            let bi = b + kb - pb;
                            let g0 = a * plane + b * nc + c_lo;
                            let src = ai * plane + bi * nc + c_lo + kc - pc;
                            for ((l, g), v) in lanes[..len].iter_mut().zip(&gc[g0..g0 + len]).zip(&xc[src..src + len]) {
                                *l += g * v;
                            }
                        }
                    }
                    out[(ka * kb_n + kb) * kc_n + kc] = lanes[..len].iter().sum();
                }
            }
        }
    });
}

pub(crate) fn backward_bias(gy: &[f64], s: &ConvShape, gb: &mut [f64]) {
    let vol = s.volume();
    for (co, out) in gb.iter_mut().enumerate() {
        *out = gy[co * vol..(co + 1) * vol].iter().sum();
    }
}
