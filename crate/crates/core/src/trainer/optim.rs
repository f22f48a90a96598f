//! Adaptive moment estimation over a flat parameter vector.

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam { learning_rate, beta1, beta2, epsilon, step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    /// Moves `params` along `grad` (gradient ascent). Both are visited as
    /// the concatenation of their slices.
    pub fn ascend(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut i = 0;
        for (p, g) in params.into_iter().zip(grads) {
            debug_assert_eq!(p.len(), g.len());
            for (x, &gi) in p.iter_mut().zip(g) {
                let m = &mut self.m[i];
                let v = &mut self.v[i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                *x += self.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + self.epsilon);
                i += 1;
            }
        }
        debug_assert_eq!(i, self.m.len());
    }
}
