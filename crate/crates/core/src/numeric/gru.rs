use rand::Rng;

use super::layers::{Module, Param};
use super::tensor::{gemm, Tensor};
use crate::error::{dim_check, Result};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gated recurrent unit.
///
/// Gate blocks are laid out `[reset | update | candidate]` along the last axis
/// of every parameter:
///
/// ```text
/// r  = σ(x·Wx_r + bx_r + h·Wh_r + bh_r)
/// u  = σ(x·Wx_u + bx_u + h·Wh_u + bh_u)
/// n  = tanh(x·Wx_n + bx_n + r ⊙ (h·Wh_n + bh_n))
/// h' = (1 − u) ⊙ n + u ⊙ h
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_x: Param,
    pub w_h: Param,
    pub b_x: Param,
    pub b_h: Param,
    hidden: usize,
}

/// Saved values of one step for backpropagation through time.
#[derive(Clone, Debug)]
pub struct GruStepCache {
    rows: usize,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    u: Vec<f64>,
    n: Vec<f64>,
    hn: Vec<f64>,
}

impl GruCell {
    pub fn new<R: Rng>(name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        // torch-style bound 1/sqrt(hidden) for every block
        GruCell {
            w_x: Param::uniform(format!("{name}.w_x"), vec![input, 3 * hidden], hidden, rng),
            w_h: Param::uniform(format!("{name}.w_h"), vec![hidden, 3 * hidden], hidden, rng),
            b_x: Param::uniform(format!("{name}.b_x"), vec![3 * hidden], hidden, rng),
            b_h: Param::uniform(format!("{name}.b_h"), vec![3 * hidden], hidden, rng),
            hidden,
        }
    }

    pub fn zeros(name: &str, input: usize, hidden: usize) -> Self {
        GruCell {
            w_x: Param::new(format!("{name}.w_x"), Tensor::zeros(vec![input, 3 * hidden])),
            w_h: Param::new(format!("{name}.w_h"), Tensor::zeros(vec![hidden, 3 * hidden])),
            b_x: Param::new(format!("{name}.b_x"), Tensor::zeros(vec![3 * hidden])),
            b_h: Param::new(format!("{name}.b_h"), Tensor::zeros(vec![3 * hidden])),
            hidden,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.value.rows()
    }

    /// Input half of the gate pre-activations, `x·Wx + bx`, for any number of
    /// rows at once. Row order is preserved.
    pub fn project_input(&self, x: &Tensor) -> Result<Tensor> {
        dim_check("gru input width", self.input_dim(), x.cols())?;
        let rows = x.rows();
        let g = 3 * self.hidden;
        let mut out = Vec::with_capacity(rows * g);
        for _ in 0..rows {
            out.extend_from_slice(self.b_x.value.data());
        }
        gemm(rows, self.input_dim(), g, x.data(), false, self.w_x.value.data(), false, &mut out, true);
        Ok(Tensor::new_unchecked(vec![rows, g], out))
    }

    /// One step from projected input `gx: [rows, 3H]` and hidden `h: [rows, H]`.
    pub fn step_projected(&self, gx: &[f64], h: &[f64]) -> (Vec<f64>, GruStepCache) {
        let hd = self.hidden;
        let g = 3 * hd;
        let rows = h.len() / hd;
        debug_assert_eq!(gx.len(), rows * g);
        let mut gh = Vec::with_capacity(rows * g);
        for _ in 0..rows {
            gh.extend_from_slice(self.b_h.value.data());
        }
        gemm(rows, hd, g, h, false, self.w_h.value.data(), false, &mut gh, true);

        let mut r = vec![0.0; rows * hd];
        let mut u = vec![0.0; rows * hd];
        let mut n = vec![0.0; rows * hd];
        let mut hn = vec![0.0; rows * hd];
        let mut h_new = vec![0.0; rows * hd];
        for row in 0..rows {
            let gxr = &gx[row * g..(row + 1) * g];
            let ghr = &gh[row * g..(row + 1) * g];
            for j in 0..hd {
                let k = row * hd + j;
                r[k] = sigmoid(gxr[j] + ghr[j]);
                u[k] = sigmoid(gxr[hd + j] + ghr[hd + j]);
                hn[k] = ghr[2 * hd + j];
                n[k] = (gxr[2 * hd + j] + r[k] * hn[k]).tanh();
                h_new[k] = (1.0 - u[k]) * n[k] + u[k] * h[k];
            }
        }
        let cache = GruStepCache {
            rows,
            h_prev: h.to_vec(),
            r,
            u,
            n,
            hn,
        };
        (h_new, cache)
    }

    /// Backward through one step. Accumulates hidden-side parameter gradients
    /// and returns `(d gx, d h_prev)`.
    pub fn backward_step(&mut self, cache: &GruStepCache, grad_h_new: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hd = self.hidden;
        let g = 3 * hd;
        let rows = cache.rows;
        let mut dgx = vec![0.0; rows * g];
        let mut dgh = vec![0.0; rows * g];
        let mut dh = vec![0.0; rows * hd];
        for row in 0..rows {
            for j in 0..hd {
                let k = row * hd + j;
                let gnew = grad_h_new[k];
                let (r, u, n, hn) = (cache.r[k], cache.u[k], cache.n[k], cache.hn[k]);
                let dn = gnew * (1.0 - u) * (1.0 - n * n);
                let du = gnew * (cache.h_prev[k] - n) * u * (1.0 - u);
                let dr = dn * hn * r * (1.0 - r);
                dh[k] = gnew * u;
                dgx[row * g + j] = dr;
                dgx[row * g + hd + j] = du;
                dgx[row * g + 2 * hd + j] = dn;
                dgh[row * g + j] = dr;
                dgh[row * g + hd + j] = du;
                dgh[row * g + 2 * hd + j] = dn * r;
            }
        }
        gemm(hd, rows, g, &cache.h_prev, true, &dgh, false, self.w_h.grad.data_mut(), true);
        let bh = self.b_h.grad.data_mut();
        for row in 0..rows {
            for (b, v) in bh.iter_mut().zip(&dgh[row * g..(row + 1) * g]) {
                *b += v;
            }
        }
        gemm(rows, g, hd, &dgh, false, self.w_h.value.data(), true, &mut dh, true);
        (dgx, dh)
    }

    /// Backward through [`GruCell::project_input`]; returns the input gradient.
    pub fn backward_input(&mut self, x: &Tensor, dgx: &[f64]) -> Tensor {
        let rows = x.rows();
        let (input, g) = (self.input_dim(), 3 * self.hidden);
        gemm(input, rows, g, x.data(), true, dgx, false, self.w_x.grad.data_mut(), true);
        let bx = self.b_x.grad.data_mut();
        for row in 0..rows {
            for (b, v) in bx.iter_mut().zip(&dgx[row * g..(row + 1) * g]) {
                *b += v;
            }
        }
        let mut dx = vec![0.0; rows * input];
        gemm(rows, g, input, dgx, false, self.w_x.value.data(), true, &mut dx, false);
        Tensor::new_unchecked(vec![rows, input], dx)
    }
}

impl Module for GruCell {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.w_x);
        f(&self.w_h);
        f(&self.b_x);
        f(&self.b_h);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w_x);
        f(&mut self.w_h);
        f(&mut self.b_x);
        f(&mut self.b_h);
    }
}

/// Single gated-recurrent update of `hidden` given `input`.
pub fn gru_step(cell: &GruCell, input: &Tensor, hidden: &Tensor) -> Result<Tensor> {
    dim_check("gru hidden width", cell.hidden_dim(), hidden.cols())?;
    dim_check("gru batch rows", input.rows(), hidden.rows())?;
    let gx = cell.project_input(input)?;
    let (h, _) = cell.step_projected(gx.data(), hidden.data());
    let out = Tensor::new_unchecked(hidden.shape().to_vec(), h);
    out.check_finite("gru_step")?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gradcheck::check_module;
    use crate::numeric::rng_from_seed;

    #[test]
    fn zero_cell_keeps_zero_hidden() {
        let cell = GruCell::zeros("g", 3, 2);
        let h = gru_step(&cell, &Tensor::zeros(vec![3]), &Tensor::zeros(vec![2])).unwrap();
        assert_eq!(h.data(), &[0.0, 0.0]);
    }

    #[test]
    fn zero_cell_halves_hidden() {
        // update gate σ(0) = 0.5, candidate tanh(0) = 0
        let cell = GruCell::zeros("g", 1, 1);
        let h = gru_step(&cell, &Tensor::from_vec(vec![0.0]), &Tensor::from_vec(vec![1.0])).unwrap();
        assert_eq!(h.data(), &[0.5]);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn unrolled_sequence_passes_gradcheck() {
        let mut rng = rng_from_seed(11);
        let mut cell = GruCell::new("g", 3, 4, &mut rng);
        let steps = 4;
        let rows = 2;
        let xs: Vec<Tensor> = (0..steps)
            .map(|t| Tensor::matrix(rows, 3, (0..rows * 3).map(|i| ((t * 7 + i) as f64 * 0.61).sin()).collect()))
            .collect();
        let h0: Vec<f64> = (0..rows * 4).map(|i| (i as f64 * 0.3).cos() * 0.5).collect();

        let report = check_module(
            &mut cell,
            |c: &mut GruCell| {
                c.zero_grad();
                let mut h = h0.clone();
                let mut caches = Vec::new();
                let mut gxs = Vec::new();
                for x in &xs {
                    let gx = c.project_input(x)?;
                    let (hn, cache) = c.step_projected(gx.data(), &h);
                    caches.push(cache);
                    gxs.push(gx);
                    h = hn;
                }
                // loss = Σ_j w_j h_j with fixed weights
                let w: Vec<f64> = (0..h.len()).map(|i| 1.0 + 0.1 * i as f64).collect();
                let loss = h.iter().zip(&w).map(|(a, b)| a * b).sum();
                let mut dh = w;
                for t in (0..steps).rev() {
                    let (dgx, dprev) = c.backward_step(&caches[t], &dh);
                    c.backward_input(&xs[t], &dgx);
                    dh = dprev;
                }
                Ok(loss)
            },
            1e-5,
            1e-4,
            None,
        )
        .unwrap();
        assert!(report.passed(), "{report}");
    }
}
