//! Central finite-difference verification of analytic gradients.

use std::fmt;

use crate::graph::{Graph, GraphError, Mode, ParamStore, Tensor, Var};
use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub h: f64,
    pub tol: f64,
    pub mode: Mode,
    /// Skip input coordinates with `|x| <= threshold` (keeps probes off kinks).
    pub min_abs_input: Option<f64>,
    /// Also probe every trainable parameter in the store.
    pub include_params: bool,
}

impl GradCheckOptions {
    pub fn new(h: f64, tol: f64) -> Self {
        Self {
            h,
            tol,
            mode: Mode::Train,
            min_abs_input: None,
            include_params: true,
        }
    }

    pub fn with_min_abs_input(mut self, threshold: f64) -> Self {
        self.min_abs_input = Some(threshold);
        self
    }

    pub fn inputs_only(mut self) -> Self {
        self.include_params = false;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Coordinate {
    Input { input: usize, index: usize },
    Param { name: String, index: usize },
}

impl fmt::Display for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coordinate::Input { input, index } => write!(f, "input {input}[{index}]"),
            Coordinate::Param { name, index } => write!(f, "param {name}[{index}]"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max over probed coordinates of `|analytic - numeric| / max(1, |analytic|)`.
    pub max_rel_error: f64,
    pub worst: Option<Coordinate>,
    pub checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

fn scalar_root<T: Real, E: From<GraphError>>(g: &Graph<'_, T>, root: Var) -> Result<T, E> {
    let t = g.value(root);
    if t.numel() != 1 {
        return Err(GraphError::NonScalarRoot {
            shape: t.shape().to_vec(),
        }
        .into());
    }
    Ok(t.data()[0])
}

fn evaluate<T, E, F>(
    store: &ParamStore<T>,
    inputs: &[Tensor<T>],
    mode: Mode,
    build: &F,
    at: &Coordinate,
) -> Result<f64, E>
where
    T: Real,
    E: From<GraphError>,
    F: for<'g> Fn(&mut Graph<'g, T>, &[Var]) -> Result<Var, E>,
{
    let mut g = Graph::new(store, mode);
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let root = build(&mut g, &vars)?;
    let v = scalar_root::<T, E>(&g, root)?.as_f64();
    if !v.is_finite() {
        return Err(GraphError::NonFinite {
            coordinate: at.to_string(),
        }
        .into());
    }
    Ok(v)
}

/// Compares reverse-mode gradients of a scalar-rooted graph against central
/// differences, over every input coordinate and (optionally) every trainable
/// parameter coordinate in `store`.
///
/// Parameters are perturbed in place and restored afterwards.
pub fn finite_diff_check<T, E, F>(
    store: &mut ParamStore<T>,
    inputs: &[Tensor<T>],
    opts: &GradCheckOptions,
    build: F,
) -> Result<GradCheckReport, E>
where
    T: Real,
    E: From<GraphError>,
    F: for<'g> Fn(&mut Graph<'g, T>, &[Var]) -> Result<Var, E>,
{
    if opts.h <= 0.0 {
        return Err(GraphError::InvalidArgument {
            op: "finite_diff_check",
            msg: format!("step h={} must be positive", opts.h),
        }
        .into());
    }

    // Analytic pass.
    let (input_grads, param_grads) = {
        let mut g = Graph::new(&*store, opts.mode);
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), true)).collect();
        let root = build(&mut g, &vars)?;
        let value = scalar_root::<T, E>(&g, root)?;
        if !value.is_finite() {
            return Err(GraphError::NonFinite {
                coordinate: "root".into(),
            }
            .into());
        }
        g.backward(root)?;
        let input_grads: Vec<Vec<T>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| {
                g.grad(v)
                    .map(<[T]>::to_vec)
                    .unwrap_or_else(|| vec![T::zero(); t.numel()])
            })
            .collect();
        (input_grads, g.finish().param_grads)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        tol: opts.tol,
    };
    let mut record = |analytic: f64, numeric: f64, at: Coordinate| -> Result<(), E> {
        if !analytic.is_finite() {
            return Err(GraphError::NonFinite {
                coordinate: at.to_string(),
            }
            .into());
        }
        let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some(at);
        }
        Ok(())
    };

    let h = T::lit(opts.h);
    let two_h = 2.0 * opts.h;
    let mut probe = inputs.to_vec();
    for (i, t) in inputs.iter().enumerate() {
        for k in 0..t.numel() {
            let x = t.data()[k];
            if let Some(thr) = opts.min_abs_input {
                if x.abs().as_f64() <= thr {
                    continue;
                }
            }
            let at = Coordinate::Input { input: i, index: k };
            probe[i].data_mut()[k] = x + h;
            let fp = evaluate(store, &probe, opts.mode, &build, &at)?;
            probe[i].data_mut()[k] = x - h;
            let fm = evaluate(store, &probe, opts.mode, &build, &at)?;
            probe[i].data_mut()[k] = x;
            record(input_grads[i][k].as_f64(), (fp - fm) / two_h, at)?;
        }
    }

    if opts.include_params {
        let ids: Vec<_> = store
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(id, _)| id)
            .collect();
        for id in ids {
            let name = store.get(id).name.clone();
            let n = store.get(id).tensor.numel();
            let analytic = param_grads
                .iter()
                .find(|(pid, _)| *pid == id)
                .map(|(_, g)| g.clone())
                .unwrap_or_else(|| vec![T::zero(); n]);
            for k in 0..n {
                let at = Coordinate::Param {
                    name: name.clone(),
                    index: k,
                };
                let x = store.get(id).tensor.data()[k];
                store.get_mut(id).tensor.data_mut()[k] = x + h;
                let fp = evaluate(store, inputs, opts.mode, &build, &at);
                store.get_mut(id).tensor.data_mut()[k] = x - h;
                let fm = evaluate(store, inputs, opts.mode, &build, &at);
                store.get_mut(id).tensor.data_mut()[k] = x;
                record(analytic[k].as_f64(), (fp? - fm?) / two_h, at)?;
            }
        }
    }
    Ok(report)
}
