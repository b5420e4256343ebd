//! Central finite-difference comparison against [`Graph::backward`].

use crate::nn::{Graph, ParamSet, Var};

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn fraction_below(&self, tol: f64) -> f64 {
        if self.entries.is_empty() {
            return 1.0;
        }
        self.entries.iter().filter(|e| e.rel_error < tol).count() as f64 / self.entries.len() as f64
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps entries whose gradient is
/// numerically zero from reporting noise as error.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks every scalar of every parameter of `params` for the scalar loss
/// built by `f`, perturbing by `h` in both directions.
pub fn check_gradients(params: &mut ParamSet, h: f64, floor: f64, f: &dyn Fn(&mut Graph) -> Var) -> GradCheckReport {
    let grads = {
        let mut g = Graph::new(params);
        let out = f(&mut g);
        g.backward(out)
    };
    let eval = |p: &ParamSet| {
        let mut g = Graph::new(p);
        let out = f(&mut g);
        g.scalar(out)
    };
    let mut report = GradCheckReport::default();
    for id in params.ids().collect::<Vec<_>>() {
        let n = params.get(id).len();
        for index in 0..n {
            let orig = params.get(id).as_slice().expect("standard layout")[index];
            params.get_mut(id).as_slice_mut().expect("standard layout")[index] = orig + h;
            let plus = eval(params);
            params.get_mut(id).as_slice_mut().expect("standard layout")[index] = orig - h;
            let minus = eval(params);
            params.get_mut(id).as_slice_mut().expect("standard layout")[index] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads.get(id).map_or(0.0, |g| g.as_slice().expect("standard layout")[index]);
            report.entries.push(GradCheckEntry {
                param: params.name(id).to_string(),
                index,
                analytic,
                numeric,
                rel_error: rel_error(analytic, numeric, floor),
            });
        }
    }
    report
}
