use super::ParamStore;

/// Bias-corrected Adam. Moments and the step counter live in the store.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            ..Default::default()
        }
    }

    /// One update from the gradients currently accumulated in `store`.
    pub fn step(&self, store: &mut ParamStore) {
        store.adam_update(self.lr, self.beta1, self.beta2, self.eps);
    }
}
