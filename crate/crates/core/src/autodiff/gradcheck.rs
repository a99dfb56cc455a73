use super::{AutodiffError, Graph, ParamStore, Tensor, Var};

/// Step for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// Outcome of comparing backward against central finite differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input or parameter index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

struct Tracker {
    max: f64,
    worst: Option<(usize, usize)>,
    n: usize,
}

impl Tracker {
    fn new() -> Self {
        Self {
            max: 0.0,
            worst: None,
            n: 0,
        }
    }

    fn record(&mut self, which: usize, coord: usize, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.n += 1;
        if e > self.max || self.worst.is_none() {
            self.max = self.max.max(e);
            self.worst = Some((which, coord));
        }
    }

    fn report(self, tolerance: f64) -> GradCheckReport {
        GradCheckReport {
            max_rel_err: self.max,
            worst: self.worst,
            coordinates: self.n,
            tolerance,
        }
    }
}

fn scalar_of(g: &Graph, v: Var) -> Result<f64, AutodiffError> {
    g.value(v).item().ok_or_else(|| AutodiffError::NotScalar {
        shape: g.value(v).shape().to_vec(),
    })
}

/// Checks the gradient of a scalar closure with respect to each input tensor.
pub fn grad_check<F>(f: F, inputs: &[Tensor], tolerance: f64) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |ins: &[Tensor]| -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar_of(&g, out)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let mut tracker = Tracker::new();
    let mut work = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let zeros = vec![0.0; inputs[which].len()];
        let analytic = grads.wrt(*var).unwrap_or(&zeros).to_vec();
        for coord in 0..inputs[which].len() {
            let orig = work[which].data()[coord];
            work[which].data_mut()[coord] = orig + FD_STEP;
            let plus = eval(&work)?;
            work[which].data_mut()[coord] = orig - FD_STEP;
            let minus = eval(&work)?;
            work[which].data_mut()[coord] = orig;
            tracker.record(which, coord, analytic[coord], (plus - minus) / (2.0 * FD_STEP));
        }
    }
    Ok(tracker.report(tolerance))
}

/// Checks the gradient of a scalar network loss with respect to every
/// parameter in `store`.
pub fn grad_check_params<F>(store: &ParamStore, f: F, tolerance: f64) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, AutodiffError>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let grads = g.backward(out)?;
    let mut analytic: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.value(id).len()]).collect();
    for (id, gr) in grads.param_grads() {
        analytic[id.index()].copy_from_slice(gr);
    }
    let eval = |s: &ParamStore| -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let out = f(&mut g, s)?;
        scalar_of(&g, out)
    };
    let mut work = store.clone();
    let mut tracker = Tracker::new();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for coord in 0..store.value(id).len() {
            let base = store.value(id).clone();
            let mut t = base.clone();
            t.data_mut()[coord] += FD_STEP;
            work.set(id, t)?;
            let plus = eval(&work)?;
            let mut t = base.clone();
            t.data_mut()[coord] -= FD_STEP;
            work.set(id, t)?;
            let minus = eval(&work)?;
            work.set(id, base)?;
            tracker.record(id.index(), coord, analytic[id.index()][coord], (plus - minus) / (2.0 * FD_STEP));
        }
    }
    Ok(tracker.report(tolerance))
}
