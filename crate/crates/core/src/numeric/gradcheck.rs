use std::fmt;

use rand::seq::index::sample;
use serde::Serialize;

use super::layers::Module;
use super::rng_from_seed;
use crate::error::Result;

/// Worst relative error found in one parameter block.
#[derive(Clone, Debug, Serialize)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub tol: f64,
    pub perturb: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_err <= self.tol)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max)
    }

    /// Merge blocks from another report under a name prefix.
    pub fn extend(&mut self, prefix: &str, other: GradReport) {
        for mut b in other.blocks {
            b.name = format!("{prefix}/{}", b.name);
            self.blocks.push(b);
        }
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "gradcheck tol={:e} h={:e}", self.tol, self.perturb)?;
        for b in &self.blocks {
            let status = if b.max_rel_err <= self.tol { "ok" } else { "FAIL" };
            writeln!(
                f,
                "  {status:4} {:<32} n={:<5} max_rel={:.3e} (analytic {:.6e}, numeric {:.6e})",
                b.name, b.checked, b.max_rel_err, b.analytic, b.numeric
            )?;
        }
        Ok(())
    }
}

/// Relative error with an absolute floor so tiny gradients compare sanely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Central-difference check of a plain function of a vector.
pub fn finite_diff_gradcheck<F, G>(f: F, grad: G, x: &[f64], perturb: f64, tol: f64) -> GradReport
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let analytic = grad(x);
    let mut block = BlockReport {
        name: "x".into(),
        checked: x.len(),
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + perturb;
        let fp = f(&xp);
        xp[i] = x[i] - perturb;
        let fm = f(&xp);
        xp[i] = x[i];
        let num = (fp - fm) / (2.0 * perturb);
        let err = relative_error(analytic[i], num);
        if err > block.max_rel_err || i == 0 {
            block.max_rel_err = err;
            block.worst_index = i;
            block.analytic = analytic[i];
            block.numeric = num;
        }
    }
    GradReport {
        tol,
        perturb,
        blocks: vec![block],
    }
}

fn nudge<M: Module + ?Sized>(m: &mut M, block: usize, index: usize, delta: f64) {
    let mut b = 0;
    m.visit_params_mut(&mut |p| {
        if b == block {
            p.value.data_mut()[index] += delta;
        }
        b += 1;
    });
}

fn restore<M: Module + ?Sized>(m: &mut M, block: usize, index: usize, value: f64) {
    let mut b = 0;
    m.visit_params_mut(&mut |p| {
        if b == block {
            p.value.data_mut()[index] = value;
        }
        b += 1;
    });
}

/// Check every parameter block of `module` against central differences.
///
/// `loss` must zero the gradients, run forward and backward, and return the
/// scalar loss. With `sample = Some(k)` at most `k` elements per block are
/// probed, chosen by a fixed seed.
pub fn check_module<M, F>(module: &mut M, mut loss: F, perturb: f64, tol: f64, sample_per_block: Option<usize>) -> Result<GradReport>
where
    M: Module,
    F: FnMut(&mut M) -> Result<f64>,
{
    loss(module)?;
    let mut blocks: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    module.visit_params(&mut |p| blocks.push((p.name.clone(), p.value.data().to_vec(), p.grad.data().to_vec())));

    let mut rng = rng_from_seed(0x6772_6164);
    let mut report = GradReport {
        tol,
        perturb,
        blocks: Vec::new(),
    };
    for (bi, (name, values, analytic)) in blocks.iter().enumerate() {
        let indices: Vec<usize> = match sample_per_block {
            Some(k) if k < values.len() => sample(&mut rng, values.len(), k).into_vec(),
            _ => (0..values.len()).collect(),
        };
        let mut rep = BlockReport {
            name: name.clone(),
            checked: indices.len(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (n, &i) in indices.iter().enumerate() {
            nudge(module, bi, i, perturb);
            let fp = loss(module)?;
            restore(module, bi, i, values[i] - perturb);
            let fm = loss(module)?;
            restore(module, bi, i, values[i]);
            let num = (fp - fm) / (2.0 * perturb);
            let err = relative_error(analytic[i], num);
            if err > rep.max_rel_err || n == 0 {
                rep.max_rel_err = err;
                rep.worst_index = i;
                rep.analytic = analytic[i];
                rep.numeric = num;
            }
        }
        report.blocks.push(rep);
    }
    // leave gradients as the analytic pass produced them
    loss(module)?;
    Ok(report)
}
