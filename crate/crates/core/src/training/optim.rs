//! AdamW and the linear learning-rate decay.

use rawdiff_tensor::Tensor;

use crate::nn::{ParamId, ParamStore};

/// `lr0 * max(0, 1 - step / steps)`: `lr0` at step 0, zero at `step = steps`
/// (one past the last update, which runs at `lr0 / steps`).
pub fn lr_at(lr0: f64, step: usize, steps: usize) -> f64 {
    if steps == 0 {
        return 0.0;
    }
    lr0 * (1.0 - step as f64 / steps as f64).max(0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Decoupled-weight-decay Adam. Moments are kept per parameter in `f32`.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub t: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParamStore<f32>) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect::<Vec<_>>();
        AdamW {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update. `grads[i]` is the gradient of parameter `i` (absent
    /// gradients count as zero).
    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &[(ParamId, Tensor<f32>)], lr: f64) {
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let mut by_id: Vec<Option<&Tensor<f32>>> = vec![None; params.len()];
        for (id, g) in grads {
            by_id[id.index()] = Some(g);
        }
        let ids: Vec<ParamId> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            match by_id[i] {
                Some(g) => {
                    for ((mj, vj), &gj) in m.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                        *mj = b1 * *mj + (1.0 - b1) * gj;
                        *vj = b2 * *vj + (1.0 - b2) * gj * gj;
                    }
                }
                None => {
                    m.iter_mut().for_each(|x| *x *= b1);
                    v.iter_mut().for_each(|x| *x *= b2);
                }
            }
            if lr == 0.0 {
                continue;
            }
            let p = params.get_mut(id).data_mut();
            let decay = (lr * c.weight_decay) as f32;
            for ((pj, &mj), &vj) in p.iter_mut().zip(m.iter()).zip(v.iter()) {
                let mhat = mj as f64 / bc1;
                let vhat = vj as f64 / bc2;
                let upd = lr * mhat / (vhat.sqrt() + c.eps);
                *pj -= decay * *pj + upd as f32;
            }
        }
    }
}
