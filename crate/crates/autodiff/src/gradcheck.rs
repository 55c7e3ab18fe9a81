use crate::{Error, Graph, Result, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Lower bound on the denominator of the relative error, so that
    /// coordinates whose true gradient is ~0 are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { h: 1e-5, floor: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, flat element index) of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compare reverse-mode gradients of a scalar program against central
/// differences.
///
/// `f` is called once on a fresh graph to obtain the analytic gradient and
/// twice more per input coordinate. It must be deterministic, so any
/// randomness (dropout masks) has to be reseeded inside `f`.
pub fn grad_check<F>(mut f: F, point: &[Tensor], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new();
        let vars: Vec<Var> = point.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let y = g.value(out);
        if y.numel() == 1 && !y.item().is_finite() {
            return Err(Error::NonFinite(format!("objective evaluated to {}", y.item())));
        }
        g.backward(out)?;
        vars.iter().map(|&v| g.grad_tensor(v).into_data()).collect()
    };

    let mut eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = g.value(out);
        if v.numel() != 1 {
            return Err(Error::NonScalarLoss(v.shape().to_vec()));
        }
        let y = v.item();
        if !y.is_finite() {
            return Err(Error::NonFinite(format!("objective evaluated to {y}")));
        }
        Ok(y)
    };

    let mut work: Vec<Tensor> = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    // each probe mutates one entry in place and re-evaluates the whole point
    #[allow(clippy::needless_range_loop)]
    for i in 0..work.len() {
        for j in 0..work[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + opts.h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - opts.h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * opts.h);
            let a = analytic[i][j];
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            let err = (a - numeric).abs() / denom;
            report.checked += 1;
            if err > report.max_rel_error || report.checked == 1 {
                report.max_rel_error = err;
                report.worst = (i, j);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
