//! Central finite-difference verification of analytic gradients.

use super::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// Result for one parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub index: usize,
    pub name: String,
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` in the 2-norm over
    /// the checked entries; 0 when both vanish.
    pub rel_err: f64,
    pub max_abs_err: f64,
    pub entries_checked: usize,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub h: f64,
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> Vec<&ParamCheck> {
        self.params.iter().filter(|p| !p.passed).collect()
    }
}

/// Compares reverse-mode gradients of a scalar loss against
/// `(f(p + h) - f(p - h)) / 2h`.
///
/// `build` records the loss given one leaf per entry of `params`. With
/// `max_entries = Some(k)` only `k` evenly spaced entries of each tensor are
/// perturbed.
pub fn finite_diff_check<T, F>(
    build: F,
    params: &[Tensor<T>],
    names: &[String],
    h: f64,
    tol: f64,
    max_entries: Option<usize>,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    if !(h > 0.0 && h <= 1e-2) {
        return Err(Error::argument(format!("finite-difference step {h} outside (0, 1e-2]")));
    }
    let eval = |ps: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.constant(p.clone())).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.value(loss).data()[0].as_f64())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone().with_grad())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut work: Vec<Tensor<T>> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.tensor(*var);
        let len = params[i].len();
        let picks: Vec<usize> = match max_entries {
            Some(k) if k < len => (0..k).map(|j| j * len / k).collect(),
            _ => (0..len).collect(),
        };
        let (mut diff2, mut a2, mut n2, mut max_abs) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for &e in &picks {
            let orig = work[i].data()[e];
            work[i].data_mut()[e] = orig + T::of(h);
            let fp = eval(&work)?;
            work[i].data_mut()[e] = orig - T::of(h);
            let fm = eval(&work)?;
            work[i].data_mut()[e] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[e].as_f64();
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            max_abs = max_abs.max((a - numeric).abs());
        }
        let denom = a2.sqrt().max(n2.sqrt());
        let rel_err = if denom == 0.0 { 0.0 } else { diff2.sqrt() / denom };
        out.push(ParamCheck {
            index: i,
            name: names.get(i).cloned().unwrap_or_else(|| format!("#{i}")),
            rel_err,
            max_abs_err: max_abs,
            entries_checked: picks.len(),
            passed: rel_err <= tol,
        });
    }
    Ok(GradCheckReport { h, tol, params: out })
}
