//! Matrix view of weighted layers.
//!
//! A dense layer is an `in × out` matrix. A conv layer is lowered with an
//! im2col table: output unit `j = o·P + p` (channel `o`, spatial position `p`)
//! connects to input unit `cols[q·P + p]` through kernel entry `k[o·Q + q]`,
//! where `q` enumerates `(channel, ky, kx)` and `-1` marks zero padding. Both
//! kinds then expose the same connection-level operations, which is all the
//! relevance rules need.

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// Output extent along one axis, or `None` when the kernel does not fit.
    pub fn out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
        let padded = input + 2 * padding;
        if stride == 0 || padded < kernel {
            return None;
        }
        Some((padded - kernel) / stride + 1)
    }

    pub fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// im2col index table of size `patch_len × positions`.
    pub fn col_table(&self) -> Vec<isize> {
        let positions = self.positions();
        let mut cols = vec![-1isize; self.patch_len() * positions];
        for c in 0..self.in_c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let q = (c * self.kh + ky) * self.kw + kx;
                    for oy in 0..self.out_h {
                        for ox in 0..self.out_w {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if iy >= 0
                                && ix >= 0
                                && (iy as usize) < self.in_h
                                && (ix as usize) < self.in_w
                            {
                                let p = oy * self.out_w + ox;
                                cols[q * positions + p] =
                                    ((c * self.in_h + iy as usize) * self.in_w + ix as usize)
                                        as isize;
                            }
                        }
                    }
                }
            }
        }
        cols
    }
}

pub(crate) enum LinearOp<'a> {
    Dense {
        w: &'a [f64],
        n_in: usize,
        n_out: usize,
    },
    Conv {
        k: &'a [f64],
        geom: ConvGeometry,
        cols: Vec<isize>,
    },
}

impl<'a> LinearOp<'a> {
    pub fn conv(k: &'a [f64], geom: ConvGeometry) -> Self {
        let cols = geom.col_table();
        LinearOp::Conv { k, geom, cols }
    }

    pub fn n_in(&self) -> usize {
        match self {
            LinearOp::Dense { n_in, .. } => *n_in,
            LinearOp::Conv { geom, .. } => geom.in_c * geom.in_h * geom.in_w,
        }
    }

    /// im2col matrix (`patch_len × positions`) of an input activation.
    fn im2col(cols: &[isize], a: &[f64]) -> Vec<f64> {
        cols.iter()
            .map(|&idx| if idx >= 0 { a[idx as usize] } else { 0.0 })
            .collect()
    }

    /// Pre-activations `Wᵀ a`.
    pub fn forward(&self, a: &[f64]) -> Vec<f64> {
        match self {
            LinearOp::Dense { w, n_in, n_out } => {
                let mut out = vec![0.0; *n_out];
                for i in 0..*n_in {
                    let ai = a[i];
                    if ai == 0.0 {
                        continue;
                    }
                    let row = &w[i * n_out..(i + 1) * n_out];
                    for (o, &wij) in out.iter_mut().zip(row) {
                        *o += ai * wij;
                    }
                }
                out
            }
            LinearOp::Conv { k, geom, cols } => {
                let col = Self::im2col(cols, a);
                let (q_len, positions) = (geom.patch_len(), geom.positions());
                let mut out = vec![0.0; geom.out_c * positions];
                for o in 0..geom.out_c {
                    let dst = &mut out[o * positions..(o + 1) * positions];
                    for q in 0..q_len {
                        let kv = k[o * q_len + q];
                        if kv == 0.0 {
                            continue;
                        }
                        let src = &col[q * positions..(q + 1) * positions];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += kv * s;
                        }
                    }
                }
                out
            }
        }
    }

    /// `W r`: maps an output-side vector back to the input side.
    pub fn backward(&self, r: &[f64]) -> Vec<f64> {
        self.distribute(|_, _, w| w, r)
    }

    /// For every output unit `j`, `Σ_i term(i, j, w_ij)` over its connections.
    pub fn column_sums(&self, term: impl Fn(usize, usize, f64) -> f64) -> Vec<f64> {
        match self {
            LinearOp::Dense { w, n_in, n_out } => {
                let mut sums = vec![0.0; *n_out];
                for i in 0..*n_in {
                    let row = &w[i * n_out..(i + 1) * n_out];
                    for (j, (s, &wij)) in sums.iter_mut().zip(row).enumerate() {
                        *s += term(i, j, wij);
                    }
                }
                sums
            }
            LinearOp::Conv { k, geom, cols } => {
                let (q_len, positions) = (geom.patch_len(), geom.positions());
                let mut sums = vec![0.0; geom.out_c * positions];
                for o in 0..geom.out_c {
                    for q in 0..q_len {
                        let kv = k[o * q_len + q];
                        for p in 0..positions {
                            let idx = cols[q * positions + p];
                            if idx >= 0 {
                                let j = o * positions + p;
                                sums[j] += term(idx as usize, j, kv);
                            }
                        }
                    }
                }
                sums
            }
        }
    }

    /// `out_i = Σ_j term(i, j, w_ij) · coef_j`; entries with `coef_j = 0` are skipped.
    pub fn distribute(&self, term: impl Fn(usize, usize, f64) -> f64, coef: &[f64]) -> Vec<f64> {
        match self {
            LinearOp::Dense { w, n_in, n_out } => {
                let active: Vec<usize> = (0..*n_out).filter(|&j| coef[j] != 0.0).collect();
                let mut out = vec![0.0; *n_in];
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &w[i * n_out..(i + 1) * n_out];
                    *o = active.iter().map(|&j| term(i, j, row[j]) * coef[j]).sum();
                }
                out
            }
            LinearOp::Conv { k, geom, cols } => {
                let (q_len, positions) = (geom.patch_len(), geom.positions());
                let mut out = vec![0.0; self.n_in()];
                for o in 0..geom.out_c {
                    for q in 0..q_len {
                        let kv = k[o * q_len + q];
                        for p in 0..positions {
                            let j = o * positions + p;
                            let idx = cols[q * positions + p];
                            if idx >= 0 && coef[j] != 0.0 {
                                out[idx as usize] += term(idx as usize, j, kv) * coef[j];
                            }
                        }
                    }
                }
                out
            }
        }
    }

    /// Weight gradient `∂/∂W` of `⟨δ, Wᵀ a⟩`, laid out like the weights.
    pub fn weight_grad(&self, a: &[f64], delta: &[f64]) -> Vec<f64> {
        match self {
            LinearOp::Dense { n_in, n_out, .. } => {
                let mut g = vec![0.0; n_in * n_out];
                for i in 0..*n_in {
                    if a[i] == 0.0 {
                        continue;
                    }
                    for j in 0..*n_out {
                        g[i * n_out + j] = a[i] * delta[j];
                    }
                }
                g
            }
            LinearOp::Conv { geom, cols, .. } => {
                let col = Self::im2col(cols, a);
                let (q_len, positions) = (geom.patch_len(), geom.positions());
                let mut g = vec![0.0; geom.out_c * q_len];
                for o in 0..geom.out_c {
                    let d = &delta[o * positions..(o + 1) * positions];
                    for q in 0..q_len {
                        let src = &col[q * positions..(q + 1) * positions];
                        g[o * q_len + q] = crate::tensor::dot_slices(src, d);
                    }
                }
                g
            }
        }
    }
}
