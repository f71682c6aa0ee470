//! Central finite-difference oracle for testing backward rules.
//!
//! Independent of the backward pass: it only evaluates forward values.

use crate::{Graph, ParamStore, Result, Tensor, Var};

/// Relative error denominators never drop below this.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

impl CheckReport {
    fn new() -> Self {
        Self {
            checked: 0,
            max_rel_error: 0.0,
            worst: String::new(),
        }
    }

    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        self.checked += 1;
        if rel > self.max_rel_error || rel.is_nan() {
            self.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
            self.worst = format!("{} analytic={analytic:e} numeric={numeric:e}", label());
        }
    }
}

/// Checks d(loss)/d(input) for every element of every input tensor.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], step: f64, train: bool, build: F) -> Result<CheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new(train, 17);
        let vars: Vec<_> = values.iter().map(|t| g.variable(t.clone())).collect();
        let loss = build(&g, &vars)?.value().item();
        loss
    };
    let g = Graph::new(train, 17);
    let vars: Vec<_> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = build(&g, &vars)?;
    let grads = g.backward(loss)?;
    let mut report = CheckReport::new();
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        #[allow(clippy::needless_range_loop)]
        for i in 0..inputs[k].numel() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + step;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = orig - step;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            report.record(|| format!("input {k}[{i}]"), analytic[i], (up - down) / (2.0 * step));
        }
    }
    Ok(report)
}

/// Checks d(loss)/d(parameter) for every element of every parameter.
pub fn check_params<F>(store: &mut ParamStore<f64>, step: f64, train: bool, build: F) -> Result<CheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &ParamStore<f64>) -> Result<Var<'g, f64>>,
{
    store.zero_grad();
    {
        let g = Graph::new(train, 17);
        let loss = build(&g, store)?;
        g.backward_into(loss, store)?;
    }
    let mut report = CheckReport::new();
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        for i in 0..store.value(id).numel() {
            let orig = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + step;
            let up = {
                let g = Graph::new(train, 17);
                let v = build(&g, store)?.value().item()?;
                v
            };
            store.get_mut(id).value.data_mut()[i] = orig - step;
            let down = {
                let g = Graph::new(train, 17);
                let v = build(&g, store)?.value().item()?;
                v
            };
            store.get_mut(id).value.data_mut()[i] = orig;
            let analytic = store.grad(id).data()[i];
            report.record(
                || format!("{}[{i}]", store.get(id).name),
                analytic,
                (up - down) / (2.0 * step),
            );
        }
    }
    Ok(report)
}
