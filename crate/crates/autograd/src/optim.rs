use crate::{Array, Elem};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Array<T>>,
    pub v: Vec<Array<T>>,
}

/// Adam with bias correction. The learning rate is supplied per step so
/// schedules live outside the optimizer.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub state: AdamState<T>,
}

impl<T: Elem> Adam<T> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Array<T>>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Array::zeros(p.shape()), Array::zeros(p.shape())))
            .unzip();
        Self {
            config,
            state: AdamState { step: 0, m, v },
        }
    }

    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Array<T>>,
        grads: &[Array<T>],
        lr: f64,
    ) {
        self.state.step += 1;
        let t = self.state.step as i32;
        let b1 = T::lit(self.config.beta1);
        let b2 = T::lit(self.config.beta2);
        let c1 = T::one() / (T::one() - b1.powi(t));
        let c2 = T::one() / (T::one() - b2.powi(t));
        let eps = T::lit(self.config.eps);
        let lr = T::lit(lr);
        let mut count = 0;
        for (i, p) in params.into_iter().enumerate() {
            let g = &grads[i];
            assert_eq!(p.shape(), g.shape(), "adam: gradient {i} shape mismatch");
            let m = self.state.m[i].data_mut();
            let v = self.state.v[i].data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi * c1;
                let vhat = *vi * c2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
            count += 1;
        }
        assert_eq!(count, grads.len(), "adam: parameter/gradient count mismatch");
    }
}
