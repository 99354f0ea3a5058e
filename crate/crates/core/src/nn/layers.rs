//! Dense, GRU and LSTM layers with hand-written backward passes.
//!
//! Layers only hold offsets into a flat parameter vector; gradients are
//! accumulated into a buffer with the same layout.

use super::params::{Init, LayoutBuilder};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out += W x` for a row-major `W` with `out.len()` rows.
#[inline]
pub fn matvec_add(w: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(n)) {
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o += acc;
    }
}

/// `dx += Wᵀ dy`.
#[inline]
pub fn matvec_t_add(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let n = dx.len();
    for (g, row) in dy.iter().zip(w.chunks_exact(n)) {
        if *g == 0.0 {
            continue;
        }
        for (d, a) in dx.iter_mut().zip(row) {
            *d += g * a;
        }
    }
}

/// `gw += dy xᵀ`.
#[inline]
pub fn outer_add(gw: &mut [f64], dy: &[f64], x: &[f64]) {
    let n = x.len();
    for (g, row) in dy.iter().zip(gw.chunks_exact_mut(n)) {
        if *g == 0.0 {
            continue;
        }
        for (d, a) in row.iter_mut().zip(x) {
            *d += g * a;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
    pub inp: usize,
    pub out: usize,
}

impl Dense {
    pub fn declare(lb: &mut LayoutBuilder, name: &str, inp: usize, out: usize, scale: f64) -> Self {
        let w = lb.add(format!("{name}.w"), &[out, inp], Init::Uniform(scale));
        let b = lb.add(format!("{name}.b"), &[out], Init::Zeros);
        Dense { w, b, inp, out }
    }

    fn w<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.w..self.w + self.inp * self.out]
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = p[self.b..self.b + self.out].to_vec();
        matvec_add(self.w(p), x, &mut y);
        y
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
        outer_add(&mut g[self.w..self.w + self.inp * self.out], dy, x);
        for (gb, d) in g[self.b..self.b + self.out].iter_mut().zip(dy) {
            *gb += d;
        }
        if let Some(dx) = dx {
            matvec_t_add(self.w(p), dy, dx);
        }
    }
}

/// Gate order `[reset, update, candidate]`; the reset gate multiplies the
/// hidden-side candidate pre-activation.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_i: usize,
    pub w_h: usize,
    pub b_i: usize,
    pub b_h: usize,
    pub inp: usize,
    pub hid: usize,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    x: Vec<f64>,
    h: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    hn: Vec<f64>,
}

impl GruCell {
    pub fn declare(lb: &mut LayoutBuilder, name: &str, inp: usize, hid: usize) -> Self {
        let a = 1.0 / (hid as f64).sqrt();
        GruCell {
            w_i: lb.add(format!("{name}.w_i"), &[3 * hid, inp], Init::Uniform(a)),
            w_h: lb.add(format!("{name}.w_h"), &[3 * hid, hid], Init::Uniform(a)),
            b_i: lb.add(format!("{name}.b_i"), &[3 * hid], Init::Uniform(a)),
            b_h: lb.add(format!("{name}.b_h"), &[3 * hid], Init::Uniform(a)),
            inp,
            hid,
        }
    }

    pub fn forward(&self, p: &[f64], x: &[f64], h: &[f64]) -> (Vec<f64>, GruCache) {
        let hd = self.hid;
        let mut gi = p[self.b_i..self.b_i + 3 * hd].to_vec();
        matvec_add(&p[self.w_i..self.w_i + 3 * hd * self.inp], x, &mut gi);
        let mut gh = p[self.b_h..self.b_h + 3 * hd].to_vec();
        matvec_add(&p[self.w_h..self.w_h + 3 * hd * hd], h, &mut gh);

        let mut r = vec![0.0; hd];
        let mut z = vec![0.0; hd];
        let mut n = vec![0.0; hd];
        let mut out = vec![0.0; hd];
        for k in 0..hd {
            r[k] = sigmoid(gi[k] + gh[k]);
            z[k] = sigmoid(gi[hd + k] + gh[hd + k]);
            n[k] = (gi[2 * hd + k] + r[k] * gh[2 * hd + k]).tanh();
            out[k] = (1.0 - z[k]) * n[k] + z[k] * h[k];
        }
        let cache = GruCache {
            x: x.to_vec(),
            h: h.to_vec(),
            r,
            z,
            n,
            hn: gh[2 * hd..].to_vec(),
        };
        (out, cache)
    }

    /// Returns `(dx, dh_prev)`; `want_dx = false` skips the input gradient.
    pub fn backward(&self, p: &[f64], g: &mut [f64], c: &GruCache, dh_out: &[f64], want_dx: bool) -> (Vec<f64>, Vec<f64>) {
        let hd = self.hid;
        let mut d_in = vec![0.0; 3 * hd];
        let mut d_hid = vec![0.0; 3 * hd];
        let mut dh = vec![0.0; hd];
        for k in 0..hd {
            let dho = dh_out[k];
            let dn = dho * (1.0 - c.z[k]);
            let dz = dho * (c.h[k] - c.n[k]);
            dh[k] = dho * c.z[k];
            let dan = dn * (1.0 - c.n[k] * c.n[k]);
            let dr = dan * c.hn[k];
            let dar = dr * c.r[k] * (1.0 - c.r[k]);
            let daz = dz * c.z[k] * (1.0 - c.z[k]);
            d_in[k] = dar;
            d_in[hd + k] = daz;
            d_in[2 * hd + k] = dan;
            d_hid[k] = dar;
            d_hid[hd + k] = daz;
            d_hid[2 * hd + k] = dan * c.r[k];
        }
        let wi = 3 * hd * self.inp;
        let wh = 3 * hd * hd;
        outer_add(&mut g[self.w_i..self.w_i + wi], &d_in, &c.x);
        outer_add(&mut g[self.w_h..self.w_h + wh], &d_hid, &c.h);
        for k in 0..3 * hd {
            g[self.b_i + k] += d_in[k];
            g[self.b_h + k] += d_hid[k];
        }
        let mut dx = vec![0.0; self.inp];
        if want_dx {
            matvec_t_add(&p[self.w_i..self.w_i + wi], &d_in, &mut dx);
        }
        matvec_t_add(&p[self.w_h..self.w_h + wh], &d_hid, &mut dh);
        (dx, dh)
    }
}

/// Gate order `[input, forget, cell, output]`.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w_i: usize,
    pub w_h: usize,
    pub b: usize,
    pub inp: usize,
    pub hid: usize,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Vec<f64>,
    h: Vec<f64>,
    c: Vec<f64>,
    gates: Vec<f64>,
    tc: Vec<f64>,
}

impl LstmCell {
    pub fn declare(lb: &mut LayoutBuilder, name: &str, inp: usize, hid: usize) -> Self {
        let a = 1.0 / (hid as f64).sqrt();
        LstmCell {
            w_i: lb.add(format!("{name}.w_i"), &[4 * hid, inp], Init::Uniform(a)),
            w_h: lb.add(format!("{name}.w_h"), &[4 * hid, hid], Init::Uniform(a)),
            b: lb.add(format!("{name}.b"), &[4 * hid], Init::Uniform(a)),
            inp,
            hid,
        }
    }

    pub fn forward(&self, p: &[f64], x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>, LstmCache) {
        let hd = self.hid;
        let mut a = p[self.b..self.b + 4 * hd].to_vec();
        matvec_add(&p[self.w_i..self.w_i + 4 * hd * self.inp], x, &mut a);
        matvec_add(&p[self.w_h..self.w_h + 4 * hd * hd], h, &mut a);
        for k in 0..hd {
            a[k] = sigmoid(a[k]);
            a[hd + k] = sigmoid(a[hd + k]);
            a[2 * hd + k] = a[2 * hd + k].tanh();
            a[3 * hd + k] = sigmoid(a[3 * hd + k]);
        }
        let mut c_new = vec![0.0; hd];
        let mut h_new = vec![0.0; hd];
        let mut tc = vec![0.0; hd];
        for k in 0..hd {
            c_new[k] = a[hd + k] * c[k] + a[k] * a[2 * hd + k];
            tc[k] = c_new[k].tanh();
            h_new[k] = a[3 * hd + k] * tc[k];
        }
        let cache = LstmCache {
            x: x.to_vec(),
            h: h.to_vec(),
            c: c.to_vec(),
            gates: a,
            tc,
        };
        (h_new, c_new, cache)
    }

    /// Returns `(dx, dh_prev, dc_prev)`.
    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        cache: &LstmCache,
        dh_out: &[f64],
        dc_out: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hid;
        let gt = &cache.gates;
        let mut da = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for k in 0..hd {
            let (i, f, gg, o) = (gt[k], gt[hd + k], gt[2 * hd + k], gt[3 * hd + k]);
            let tc = cache.tc[k];
            let d_o = dh_out[k] * tc;
            let dc = dc_out[k] + dh_out[k] * o * (1.0 - tc * tc);
            da[k] = dc * gg * i * (1.0 - i);
            da[hd + k] = dc * cache.c[k] * f * (1.0 - f);
            da[2 * hd + k] = dc * i * (1.0 - gg * gg);
            da[3 * hd + k] = d_o * o * (1.0 - o);
            dc_prev[k] = dc * f;
        }
        let wi = 4 * hd * self.inp;
        let wh = 4 * hd * hd;
        outer_add(&mut g[self.w_i..self.w_i + wi], &da, &cache.x);
        outer_add(&mut g[self.w_h..self.w_h + wh], &da, &cache.h);
        for k in 0..4 * hd {
            g[self.b + k] += da[k];
        }
        let mut dx = vec![0.0; self.inp];
        matvec_t_add(&p[self.w_i..self.w_i + wi], &da, &mut dx);
        let mut dh = vec![0.0; hd];
        matvec_t_add(&p[self.w_h..self.w_h + wh], &da, &mut dh);
        (dx, dh, dc_prev)
    }
}
