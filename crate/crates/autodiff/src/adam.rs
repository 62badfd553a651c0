use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamSet, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self { beta1, beta2, eps: 1e-8, steps: 0, first: zeros.clone(), second: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.first, &self.second)
    }

    /// Restores saved state; moment shapes must match the existing ones.
    pub fn restore(&mut self, steps: u64, first: Vec<Tensor>, second: Vec<Tensor>) -> Result<(), String> {
        let same =
            |a: &[Tensor], b: &[Tensor]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.shape() == y.shape());
        if !same(&first, &self.first) || !same(&second, &self.second) {
            return Err("optimizer moments do not match the parameter shapes".into());
        }
        self.steps = steps;
        self.first = first;
        self.second = second;
        Ok(())
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let g = grads[k].data();
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = ParamSet::new();
        let id = params.add("w", Tensor::new(&[2], vec![1.0, -1.0]).unwrap());
        let mut adam = Adam::new(&params, 0.5, 0.999);
        let grads = [Tensor::new(&[2], vec![3.0, -0.5]).unwrap()];
        adam.step(&mut params, &grads, 0.1);
        // bias-corrected first step is lr * sign(g)
        let w = params.get(id).data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut params = ParamSet::new();
        let id = params.add("w", Tensor::new(&[1], vec![5.0]).unwrap());
        let mut adam = Adam::new(&params, 0.9, 0.999);
        for _ in 0..2000 {
            let w = params.get(id).data()[0];
            adam.step(&mut params, &[Tensor::new(&[1], vec![2.0 * (w - 2.0)]).unwrap()], 0.05);
        }
        assert!((params.get(id).data()[0] - 2.0).abs() < 1e-2);
    }
}
