//! Adam with bias correction, over arbitrary parameter containers.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::gradcheck::ParamBlocks;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: ParamBlocks>(params: &P, config: AdamConfig) -> Self {
        let shapes: Vec<usize> = params.blocks().iter().map(|(_, b)| b.len()).collect();
        Self {
            config,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }

    /// One update. A non-finite gradient aborts the step before anything is
    /// modified, including the step counter.
    pub fn step<P: ParamBlocks>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grad_blocks = grads.blocks();
        if grad_blocks.len() != self.first.len() {
            return Err(Error::Shape {
                what: "adam block count",
                expected: self.first.len(),
                got: grad_blocks.len(),
            });
        }
        for ((name, g), m) in grad_blocks.iter().zip(&self.first) {
            if g.len() != m.len() {
                return Err(Error::Shape {
                    what: "adam block",
                    expected: m.len(),
                    got: g.len(),
                });
            }
            if let Some(index) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    block: name.clone(),
                    index,
                });
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, (_, g)), m), v) in params
            .blocks_mut()
            .into_iter()
            .zip(grad_blocks)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for k in 0..p.len() {
                let gk = g[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
