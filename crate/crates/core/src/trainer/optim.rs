use crate::error::{Error, Result};
use crate::networks::NetworkState;

fn grad_of<'a>(net: &'a NetworkState, i: usize) -> Result<&'a [f64]> {
    net.params()[i]
        .grad()
        .ok_or_else(|| Error::Usage(format!("parameter {i} has no gradient")))
}

/// SGD with heavy-ball momentum: `buf = momentum * buf + g`, `p -= lr * buf`,
/// with the buffer initialised to the first gradient.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    buffers: Vec<Option<Vec<f64>>>,
}

impl Sgd {
    pub fn new(net: &NetworkState, momentum: f64) -> Self {
        Self {
            momentum,
            buffers: vec![None; net.params().len()],
        }
    }

    pub fn step(&mut self, net: &mut NetworkState, lr: f64) -> Result<()> {
        for i in 0..net.params().len() {
            let g = grad_of(net, i)?.to_vec();
            let buf = match &mut self.buffers[i] {
                Some(b) => {
                    for (b, g) in b.iter_mut().zip(&g) {
                        *b = self.momentum * *b + g;
                    }
                    b
                }
                slot @ None => slot.insert(g),
            };
            for (p, b) in net.params_mut()[i].data_mut().iter_mut().zip(buf.iter()) {
                *p -= lr * b;
            }
        }
        Ok(())
    }
}

/// Adaptive-moment optimiser with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(net: &NetworkState) -> Self {
        let zeros: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.numel()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, net: &mut NetworkState, lr: f64) -> Result<()> {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        for i in 0..net.params().len() {
            let g = grad_of(net, i)?.to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = net.params_mut()[i].data_mut();
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
