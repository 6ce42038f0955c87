use ndarray::{ArrayD, Zip};

use crate::model::{Grads, Model};
use crate::real::Real;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments for the trainable tensors of one model, indexed like its
/// parameter list (`None` for frozen tensors).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub(crate) m: Vec<Option<ArrayD<T>>>,
    pub(crate) v: Vec<Option<ArrayD<T>>>,
    pub(crate) step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(model: &Model<T>) -> Self {
        let zeros = |i: usize| model.is_trainable(i).then(|| ArrayD::zeros(model.params()[i].value.shape()));
        let n = model.params().len();
        Self { m: (0..n).map(zeros).collect(), v: (0..n).map(zeros).collect(), step: 0 }
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> impl Iterator<Item = (usize, &ArrayD<T>, &ArrayD<T>)> {
        self.m.iter().zip(&self.v).enumerate().filter_map(|(i, (m, v))| Some((i, m.as_ref()?, v.as_ref()?)))
    }

    pub(crate) fn from_parts(m: Vec<Option<ArrayD<T>>>, v: Vec<Option<ArrayD<T>>>, step: u64) -> Self {
        Self { m, v, step }
    }

    /// One bias-corrected Adam update of every tensor that has both a
    /// gradient and optimizer state. Frozen tensors are never touched.
    pub fn update(&mut self, model: &mut Model<T>, grads: &Grads<T>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = T::from_f64(1.0 / (1.0 - ADAM_BETA1.powi(t)));
        let c2 = T::from_f64(1.0 / (1.0 - ADAM_BETA2.powi(t)));
        let (b1, b2) = (T::from_f64(ADAM_BETA1), T::from_f64(ADAM_BETA2));
        let (one, eps, lr) = (T::one(), T::from_f64(ADAM_EPS), T::from_f64(lr));
        for (id, g) in grads.slots().iter().enumerate() {
            let (Some(g), Some(m), Some(v)) = (g, &mut self.m[id], &mut self.v[id]) else { continue };
            let p = &mut model.params_mut()[id].value;
            Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p -= lr * (*m * c1) / ((*v * c2).sqrt() + eps);
            });
        }
    }
}

/// Rescale `grads` so its global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut Grads<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(T::from_f64(max_norm / norm));
    }
    norm
}
