//! First-order optimizers over flat parameter slices.

/// Heavy-ball momentum: `v <- mu * v - lr * g; x <- x + v`.
#[derive(Debug, Clone)]
pub struct Momentum {
    pub step_size: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Momentum {
    pub fn new(len: usize, step_size: f64, momentum: f64) -> Self {
        Self {
            step_size,
            momentum,
            velocity: vec![0.0; len],
        }
    }

    pub fn step(&mut self, x: &mut [f64], grad: &[f64]) {
        for ((xi, vi), gi) in x.iter_mut().zip(&mut self.velocity).zip(grad) {
            *vi = self.momentum * *vi - self.step_size * gi;
            *xi += *vi;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub step_size: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, step_size: f64) -> Self {
        Self {
            step_size,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step(&mut self, x: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..x.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            x[i] -= self.step_size * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_minimise_a_quadratic() {
        let target = [1.0, -2.0, 0.5];
        let grad = |x: &[f64]| x.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect::<Vec<_>>();
        let mut x = vec![0.0; 3];
        let mut opt = Momentum::new(3, 0.05, 0.9);
        for _ in 0..500 {
            let g = grad(&x);
            opt.step(&mut x, &g);
        }
        assert!(x.iter().zip(&target).all(|(a, b)| (a - b).abs() < 1e-6));
        let mut y = vec![0.0; 3];
        let mut adam = Adam::new(3, 0.05);
        for _ in 0..2000 {
            let g = grad(&y);
            adam.step(&mut y, &g);
        }
        assert!(y.iter().zip(&target).all(|(a, b)| (a - b).abs() < 1e-3));
    }
}
