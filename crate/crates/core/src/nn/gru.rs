//! Gated recurrent unit: single cell, bidirectional layer, and a stack of
//! bidirectional layers.
//!
//! Update equations per step, with `s` for the logistic function:
//!   z = s(Wz x + Uz h + bz)
//!   r = s(Wr x + Ur h + br)
//!   n = tanh(Wh x + Uh (r . h) + bh)
//!   h' = (1 - z) . h + z . n
//! The initial hidden state is zero. Backward walks the steps in reverse
//! and accumulates parameter gradients in place.

use super::ops::sigmoid;
use super::{init_uniform, Param};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct GruCell {
    pub f_in: usize,
    pub hidden: usize,
    pub wz: Param,
    pub wr: Param,
    pub wh: Param,
    pub uz: Param,
    pub ur: Param,
    pub uh: Param,
    pub bz: Param,
    pub br: Param,
    pub bh: Param,
}

/// Per-step activations kept for backpropagation through time.
#[derive(Debug, Clone, Default)]
pub struct GruCache {
    xs: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    n: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
}

fn matvec(w: &[f64], x: &[f64], n_out: usize) -> Vec<f64> {
    let n_in = x.len();
    (0..n_out)
        .map(|o| w[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// y += W^T g, for W stored n_out x n_in.
fn add_matvec_t(w: &[f64], g: &[f64], n_in: usize, y: &mut [f64]) {
    for (o, &gv) in g.iter().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            y[i] += gv * row[i];
        }
    }
}

/// dW += g x^T (outer product accumulate).
fn add_outer(g: &[f64], x: &[f64], dw: &mut [f64]) {
    let n_in = x.len();
    for (o, &gv) in g.iter().enumerate() {
        let row = &mut dw[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            row[i] += gv * x[i];
        }
    }
}

impl GruCell {
    pub fn new(f_in: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let wf = |r: &mut ChaCha8Rng| Param::new(init_uniform(hidden * f_in, f_in, r));
        let uf = |r: &mut ChaCha8Rng| Param::new(init_uniform(hidden * hidden, hidden, r));
        GruCell {
            f_in,
            hidden,
            wz: wf(rng),
            wr: wf(rng),
            wh: wf(rng),
            uz: uf(rng),
            ur: uf(rng),
            uh: uf(rng),
            bz: Param::zeros(hidden),
            br: Param::zeros(hidden),
            bh: Param::zeros(hidden),
        }
    }

    /// One step from hidden state `h`; returns the gate activations and the
    /// next hidden state.
    fn step(&self, x: &[f64], h: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let hdim = self.hidden;
        let mut z = matvec(&self.wz.w, x, hdim);
        let mut r = matvec(&self.wr.w, x, hdim);
        add_matvec(&self.uz.w, h, &mut z);
        add_matvec(&self.ur.w, h, &mut r);
        for i in 0..hdim {
            z[i] = sigmoid(z[i] + self.bz.w[i]);
            r[i] = sigmoid(r[i] + self.br.w[i]);
        }
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let mut n = matvec(&self.wh.w, x, hdim);
        add_matvec(&self.uh.w, &rh, &mut n);
        for i in 0..hdim {
            n[i] = (n[i] + self.bh.w[i]).tanh();
        }
        let hnext: Vec<f64> = (0..hdim).map(|i| (1.0 - z[i]) * h[i] + z[i] * n[i]).collect();
        (z, r, n, hnext)
    }

    /// Runs the sequence from a zero hidden state; returns all hidden states
    /// (one per step) and the cache backward needs.
    pub fn forward(&self, xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, GruCache) {
        let mut cache = GruCache::default();
        let mut h = vec![0.0; self.hidden];
        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            assert_eq!(x.len(), self.f_in, "gru input width");
            let (z, r, n, hnext) = self.step(x, &h);
            cache.xs.push(x.clone());
            cache.z.push(z);
            cache.r.push(r);
            cache.n.push(n);
            cache.h.push(h.clone());
            h = hnext.clone();
            out.push(hnext);
        }
        (out, cache)
    }

    /// Backpropagation through time. `dh_out[t]` is the upstream gradient on
    /// the hidden state emitted at step `t`. Accumulates into the parameter
    /// gradients and returns the gradients on the inputs.
    pub fn backward(&mut self, cache: &GruCache, dh_out: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let t_len = cache.xs.len();
        assert_eq!(dh_out.len(), t_len, "gru upstream length");
        let hdim = self.hidden;
        let mut dxs = vec![vec![0.0; self.f_in]; t_len];
        let mut dh_next = vec![0.0; hdim];
        for t in (0..t_len).rev() {
            let (x, z, r, n, hprev) =
                (&cache.xs[t], &cache.z[t], &cache.r[t], &cache.n[t], &cache.h[t]);
            let mut dh: Vec<f64> = dh_out[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            // h' = (1 - z) h + z n
            let dz: Vec<f64> = (0..hdim).map(|i| dh[i] * (n[i] - hprev[i])).collect();
            let dn: Vec<f64> = (0..hdim).map(|i| dh[i] * z[i]).collect();
            for i in 0..hdim {
                dh[i] *= 1.0 - z[i];
            }
            // n = tanh(.)
            let dn_pre: Vec<f64> = (0..hdim).map(|i| dn[i] * (1.0 - n[i] * n[i])).collect();
            // Through the Uh (r . h) term.
            let mut drh = vec![0.0; hdim];
            add_matvec_t(&self.uh.w, &dn_pre, hdim, &mut drh);
            let dr: Vec<f64> = (0..hdim).map(|i| drh[i] * hprev[i]).collect();
            for i in 0..hdim {
                dh[i] += drh[i] * r[i];
            }
            let dz_pre: Vec<f64> = (0..hdim).map(|i| dz[i] * z[i] * (1.0 - z[i])).collect();
            let dr_pre: Vec<f64> = (0..hdim).map(|i| dr[i] * r[i] * (1.0 - r[i])).collect();
            let rh: Vec<f64> = r.iter().zip(hprev).map(|(a, b)| a * b).collect();
            add_outer(&dz_pre, x, &mut self.wz.g);
            add_outer(&dr_pre, x, &mut self.wr.g);
            add_outer(&dn_pre, x, &mut self.wh.g);
            add_outer(&dz_pre, hprev, &mut self.uz.g);
            add_outer(&dr_pre, hprev, &mut self.ur.g);
            add_outer(&dn_pre, &rh, &mut self.uh.g);
            for i in 0..hdim {
                self.bz.g[i] += dz_pre[i];
                self.br.g[i] += dr_pre[i];
                self.bh.g[i] += dn_pre[i];
            }
            let dx = &mut dxs[t];
            add_matvec_t(&self.wz.w, &dz_pre, self.f_in, dx);
            add_matvec_t(&self.wr.w, &dr_pre, self.f_in, dx);
            add_matvec_t(&self.wh.w, &dn_pre, self.f_in, dx);
            add_matvec_t(&self.uz.w, &dz_pre, hdim, &mut dh);
            add_matvec_t(&self.ur.w, &dr_pre, hdim, &mut dh);
            dh_next = dh;
        }
        dxs
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.wz,
            &mut self.wr,
            &mut self.wh,
            &mut self.uz,
            &mut self.ur,
            &mut self.uh,
            &mut self.bz,
            &mut self.br,
            &mut self.bh,
        ]
    }

    pub fn param_names(prefix: &str) -> Vec<String> {
        ["wz", "wr", "wh", "uz", "ur", "uh", "bz", "br", "bh"]
            .iter()
            .map(|n| format!("{prefix}.{n}"))
            .collect()
    }
}

/// y += U h where U is hidden x hidden (or hidden x len(h)) row-major.
fn add_matvec(u: &[f64], h: &[f64], y: &mut [f64]) {
    let n_in = h.len();
    for (o, yo) in y.iter_mut().enumerate() {
        let row = &u[o * n_in..(o + 1) * n_in];
        *yo += row.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// One bidirectional layer: a forward cell over the sequence and a backward
/// cell over the reversed sequence, outputs concatenated per step.
#[derive(Debug, Clone)]
pub struct BiGru {
    pub fwd: GruCell,
    pub bwd: GruCell,
}

#[derive(Debug, Clone, Default)]
pub struct BiGruCache {
    fwd: GruCache,
    bwd: GruCache,
    t_len: usize,
}

impl BiGru {
    pub fn new(f_in: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        BiGru {
            fwd: GruCell::new(f_in, hidden, rng),
            bwd: GruCell::new(f_in, hidden, rng),
        }
    }

    /// Output step `t` is `[hf[t], hb[T-1-t]]` where `hb` runs over the
    /// reversed input.
    pub fn forward(&self, xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, BiGruCache) {
        let t_len = xs.len();
        let (hf, cf) = self.fwd.forward(xs);
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let (hb, cb) = self.bwd.forward(&rev);
        let hdim = self.fwd.hidden;
        let mut out = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let mut row = Vec::with_capacity(2 * hdim);
            row.extend_from_slice(&hf[t]);
            row.extend_from_slice(&hb[t_len - 1 - t]);
            out.push(row);
        }
        (
            out,
            BiGruCache {
                fwd: cf,
                bwd: cb,
                t_len,
            },
        )
    }

    pub fn backward(&mut self, cache: &BiGruCache, dys: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let t_len = cache.t_len;
        assert_eq!(dys.len(), t_len, "bigru upstream length");
        let hdim = self.fwd.hidden;
        let mut dhf = vec![vec![0.0; hdim]; t_len];
        let mut dhb = vec![vec![0.0; hdim]; t_len];
        for t in 0..t_len {
            dhf[t].copy_from_slice(&dys[t][..hdim]);
            dhb[t_len - 1 - t].copy_from_slice(&dys[t][hdim..]);
        }
        let dx_f = self.fwd.backward(&cache.fwd, &dhf);
        let dx_b = self.bwd.backward(&cache.bwd, &dhb);
        let mut dxs = dx_f;
        for t in 0..t_len {
            for (a, b) in dxs[t].iter_mut().zip(&dx_b[t_len - 1 - t]) {
                *a += b;
            }
        }
        dxs
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.fwd.params_mut();
        v.extend(self.bwd.params_mut());
        v
    }
}

#[derive(Debug, Clone)]
enum StackLayer {
    Uni(GruCell),
    Bi(BiGru),
}

#[derive(Debug, Clone)]
enum StackLayerCache {
    Uni(GruCache),
    Bi(BiGruCache),
}

/// Stacked recurrent layers, bidirectional by default. Layer k > 0 consumes
/// the output of layer k-1 (width 2*hidden when bidirectional, else hidden).
#[derive(Debug, Clone)]
pub struct GruStack {
    layers: Vec<StackLayer>,
    hidden: usize,
    bidirectional: bool,
}

#[derive(Debug, Clone, Default)]
pub struct GruStackCache {
    layer_caches: Vec<StackLayerCache>,
    t_len: usize,
}

impl GruStack {
    pub fn new(
        f_in: usize,
        hidden: usize,
        n_layers: usize,
        bidirectional: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(n_layers >= 1, "gru stack needs at least one layer");
        let step = if bidirectional { 2 * hidden } else { hidden };
        let mut layers = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let w_in = if k == 0 { f_in } else { step };
            layers.push(if bidirectional {
                StackLayer::Bi(BiGru::new(w_in, hidden, rng))
            } else {
                StackLayer::Uni(GruCell::new(w_in, hidden, rng))
            });
        }
        GruStack {
            layers,
            hidden,
            bidirectional,
        }
    }

    /// Width of the sequence summary `forward` returns.
    pub fn summary_width(&self) -> usize {
        if self.bidirectional {
            2 * self.hidden
        } else {
            self.hidden
        }
    }

    /// Sequence summary from the top layer: the final forward hidden state,
    /// concatenated with the final backward hidden state when bidirectional.
    pub fn forward(&self, xs: &[Vec<f64>]) -> (Vec<f64>, GruStackCache) {
        assert!(!xs.is_empty(), "gru stack needs a nonempty sequence");
        let mut cache = GruStackCache {
            layer_caches: Vec::with_capacity(self.layers.len()),
            t_len: xs.len(),
        };
        let mut seq = xs.to_vec();
        for layer in &self.layers {
            seq = match layer {
                StackLayer::Uni(cell) => {
                    let (ys, c) = cell.forward(&seq);
                    cache.layer_caches.push(StackLayerCache::Uni(c));
                    ys
                }
                StackLayer::Bi(bi) => {
                    let (ys, c) = bi.forward(&seq);
                    cache.layer_caches.push(StackLayerCache::Bi(c));
                    ys
                }
            };
        }
        let t_len = seq.len();
        let h = self.hidden;
        let mut summary = Vec::with_capacity(self.summary_width());
        // The forward direction finishes at the last step; the backward
        // direction finishes at step 0.
        summary.extend_from_slice(&seq[t_len - 1][..h]);
        if self.bidirectional {
            summary.extend_from_slice(&seq[0][h..]);
        }
        (summary, cache)
    }

    pub fn backward(&mut self, cache: &GruStackCache, dsummary: &[f64]) -> Vec<Vec<f64>> {
        let h = self.hidden;
        assert_eq!(dsummary.len(), self.summary_width(), "gru summary gradient width");
        let t_len = cache.t_len;
        let width = self.summary_width();
        let mut dys = vec![vec![0.0; width]; t_len];
        dys[t_len - 1][..h].copy_from_slice(&dsummary[..h]);
        if self.bidirectional {
            for i in 0..h {
                dys[0][h + i] += dsummary[h + i];
            }
        }
        let mut grad = dys;
        for (layer, c) in self.layers.iter_mut().zip(&cache.layer_caches).rev() {
            grad = match (layer, c) {
                (StackLayer::Uni(cell), StackLayerCache::Uni(cc)) => cell.backward(cc, &grad),
                (StackLayer::Bi(bi), StackLayerCache::Bi(cc)) => bi.backward(cc, &grad),
                _ => unreachable!("cache kind follows layer kind"),
            };
        }
        grad
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                StackLayer::Uni(cell) => cell.params_mut(),
                StackLayer::Bi(bi) => bi.params_mut(),
            })
            .collect()
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut names = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            match layer {
                StackLayer::Uni(_) => {
                    names.extend(GruCell::param_names(&format!("{prefix}.l{k}")));
                }
                StackLayer::Bi(_) => {
                    names.extend(GruCell::param_names(&format!("{prefix}.l{k}.fwd")));
                    names.extend(GruCell::param_names(&format!("{prefix}.l{k}.bwd")));
                }
            }
        }
        names
    }
}
