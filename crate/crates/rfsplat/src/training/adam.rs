//! Adam-style adaptive moment optimizer over a flat parameter group.

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Bias-corrected update for one scalar; returns the delta to add to
    /// the parameter.
    pub fn delta(&mut self, i: usize, grad: f64, lr: f64) -> f64 {
        self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad;
        self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad * grad;
        let m_hat = self.m[i] / (1.0 - self.beta1.powi(self.t as i32));
        let v_hat = self.v[i] / (1.0 - self.beta2.powi(self.t as i32));
        -lr * m_hat / (v_hat.sqrt() + self.eps)
    }

    /// Update a whole slice in place.
    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.begin_step();
        for i in 0..params.len() {
            params[i] += self.delta(i, grads[i], lr);
        }
    }

    /// Keep moment rows whose flag is set; `stride` scalars per row.
    pub fn retain_rows(&mut self, keep: &[bool], stride: usize) {
        debug_assert_eq!(keep.len() * stride, self.m.len());
        let mut w = 0;
        for (r, &k) in keep.iter().enumerate() {
            if k {
                for s in 0..stride {
                    self.m[w * stride + s] = self.m[r * stride + s];
                    self.v[w * stride + s] = self.v[r * stride + s];
                }
                w += 1;
            }
        }
        self.m.truncate(w * stride);
        self.v.truncate(w * stride);
    }

    /// Fresh zero-moment rows for newly created Gaussians.
    pub fn append_rows(&mut self, rows: usize, stride: usize) {
        self.m.extend(std::iter::repeat_n(0.0, rows * stride));
        self.v.extend(std::iter::repeat_n(0.0, rows * stride));
    }

    pub fn zero_moments(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
    }
}
