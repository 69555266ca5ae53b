//! SGD with momentum and L2 weight decay over a subset of parameters.

use crate::{Gradients, ParamId, ParamStore, Scalar, Tensor};

/// `v ← μ v + (g + λ θ)`, `θ ← θ − η v`, applied only to the given ids.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(params: &ParamStore<T>, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: vec![None; params.len()],
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, active: &[ParamId], lr: f64) {
        let mu = T::lit(self.momentum);
        let wd = T::lit(self.weight_decay);
        let lr = T::lit(lr);
        for &id in active {
            let theta = params.get_mut(id);
            let v = self.velocity[id.index()].get_or_insert_with(|| Tensor::zeros(theta.shape()));
            let g = grads.get(id);
            for (i, (vi, ti)) in v.data_mut().iter_mut().zip(theta.data_mut()).enumerate() {
                let gi = g.map_or(T::zero(), |g| g.data()[i]);
                *vi = mu * *vi + gi + wd * *ti;
                *ti -= lr * *vi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn momentum_recurrence() {
        let mut p = ParamStore::<f64>::new();
        let a = p.add("trunk.a", Tensor::from_vec(&[1], vec![1.0]));
        let b = p.add("motion.b", Tensor::from_vec(&[1], vec![1.0]));
        let mut g = Gradients::new(&p);
        g.accumulate(a, &[1]).data_mut()[0] = 0.5;
        g.accumulate(b, &[1]).data_mut()[0] = 0.5;
        let mut opt = Sgd::new(&p, 0.9, 0.1);
        opt.step(&mut p, &g, &[a], 0.1);
        // v = 0.5 + 0.1 * 1 = 0.6; theta = 1 - 0.06
        assert!((p.get(a).data()[0] - 0.94).abs() < 1e-15);
        opt.step(&mut p, &g, &[a], 0.1);
        // v = 0.9 * 0.6 + 0.5 + 0.1 * 0.94 = 1.134
        assert!((p.get(a).data()[0] - (0.94 - 0.1134)).abs() < 1e-15);
        assert_eq!(p.get(b).data()[0], 1.0);
    }
}
