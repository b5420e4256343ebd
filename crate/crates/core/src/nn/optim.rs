//! First-order optimizers and the warmup/decay learning-rate schedule.

use crate::nn::params::{Grads, Mat, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    active: Vec<bool>,
    m: Vec<Option<Mat>>,
    v: Vec<Option<Mat>>,
    t: u64,
}

impl Adam {
    /// Updates only parameters whose name satisfies `select`.
    pub fn new(params: &ParamSet, cfg: AdamConfig, select: impl Fn(&str) -> bool) -> Self {
        let active = params.ids().map(|id| select(params.name(id))).collect();
        Self { cfg, active, m: vec![None; params.len()], v: vec![None; params.len()], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads, lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, weight_decay } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for id in params.ids().collect::<Vec<_>>() {
            if !self.active[id.0] {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            let p = params.get_mut(id);
            let m = self.m[id.0].get_or_insert_with(|| Mat::zeros(g.dim()));
            let v = self.v[id.0].get_or_insert_with(|| Mat::zeros(g.dim()));
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                let g = g + weight_decay * *p;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdadeltaConfig {
    pub rho: f64,
    pub eps: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        Self { rho: 0.95, eps: 1e-6 }
    }
}

pub struct Adadelta {
    cfg: AdadeltaConfig,
    active: Vec<bool>,
    sq_grad: Vec<Option<Mat>>,
    sq_delta: Vec<Option<Mat>>,
}

impl Adadelta {
    pub fn new(params: &ParamSet, cfg: AdadeltaConfig, select: impl Fn(&str) -> bool) -> Self {
        let active = params.ids().map(|id| select(params.name(id))).collect();
        Self { cfg, active, sq_grad: vec![None; params.len()], sq_delta: vec![None; params.len()] }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads, lr: f64) {
        let AdadeltaConfig { rho, eps } = self.cfg;
        for id in params.ids().collect::<Vec<_>>() {
            if !self.active[id.0] {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            let p = params.get_mut(id);
            let eg = self.sq_grad[id.0].get_or_insert_with(|| Mat::zeros(g.dim()));
            let ed = self.sq_delta[id.0].get_or_insert_with(|| Mat::zeros(g.dim()));
            ndarray::Zip::from(p).and(eg).and(ed).and(g).for_each(|p, eg, ed, &g| {
                *eg = rho * *eg + (1.0 - rho) * g * g;
                let delta = ((*ed + eps).sqrt() / (*eg + eps).sqrt()) * g;
                *ed = rho * *ed + (1.0 - rho) * delta * delta;
                *p -= lr * delta;
            });
        }
    }
}

/// Linear warmup to `peak` over `warmup` updates, then linear decay to zero
/// at `total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup: u64,
    pub total: u64,
}

impl LrSchedule {
    pub fn at(&self, step: u64) -> f64 {
        if step < self.warmup {
            return self.peak * (step + 1) as f64 / self.warmup as f64;
        }
        if self.total <= self.warmup {
            return self.peak;
        }
        let rem = self.total.saturating_sub(step) as f64 / (self.total - self.warmup) as f64;
        self.peak * rem.clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn quadratic_descends(iters: usize, mut opt: impl FnMut(&mut ParamSet, &Grads)) {
        let mut p = ParamSet::new();
        let id = p.add("w", Array2::from_elem((1, 2), 3.0));
        for _ in 0..iters {
            let mut g = Grads::zeros_like(&p);
            g.accumulate(id, &(p.get(id) * 2.0));
            opt(&mut p, &g);
        }
        assert!(p.get(id).iter().all(|v| v.abs() < 0.5), "{:?}", p.get(id));
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let p = { let mut p = ParamSet::new(); p.add("w", Array2::zeros((1, 2))); p };
        let mut adam = Adam::new(&p, AdamConfig::default(), |_| true);
        quadratic_descends(500, |p, g| adam.step(p, g, 0.05));
    }

    #[test]
    fn adadelta_minimizes_quadratic() {
        let p = { let mut p = ParamSet::new(); p.add("w", Array2::zeros((1, 2))); p };
        let mut ad = Adadelta::new(&p, AdadeltaConfig { rho: 0.95, eps: 1e-6 }, |_| true);
        quadratic_descends(5000, |p, g| ad.step(p, g, 1.0));
    }

    #[test]
    fn unselected_params_are_frozen() {
        let mut p = ParamSet::new();
        let a = p.add("enc.w", Array2::ones((1, 1)));
        let b = p.add("head.w", Array2::ones((1, 1)));
        let mut g = Grads::zeros_like(&p);
        g.accumulate(a, &Array2::ones((1, 1)));
        g.accumulate(b, &Array2::ones((1, 1)));
        let mut adam = Adam::new(&p, AdamConfig::default(), |n| n.starts_with("head."));
        adam.step(&mut p, &g, 0.1);
        assert_eq!(p.get(a)[[0, 0]], 1.0);
        assert!(p.get(b)[[0, 0]] < 1.0);
    }

    #[test]
    fn schedule_shape() {
        let s = LrSchedule { peak: 1.0, warmup: 4, total: 12 };
        assert_eq!(s.at(0), 0.25);
        assert_eq!(s.at(3), 1.0);
        assert_eq!(s.at(4), 1.0);
        assert_eq!(s.at(8), 0.5);
        assert_eq!(s.at(12), 0.0);
        assert_eq!(s.at(20), 0.0);
    }
}
