use crate::error::{dim_err, Result};
use crate::numerics::{lit, ParamId, ParamStore, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter moments in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Real> {
    pub hyper: AdamHyper,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let (m, v) = shapes.into_iter().map(|s| (Tensor::zeros(s), Tensor::zeros(s))).unzip();
        Self {
            hyper: AdamHyper::default(),
            step: 0,
            m,
            v,
        }
    }

    pub fn for_store(store: &ParamStore<T>) -> Self {
        Self::new(store.iter().map(|p| p.value.shape()))
    }

    /// One bias-corrected update of every parameter for which `trainable`
    /// holds; the step counter advances once.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &[Tensor<T>],
        lr: f64,
        trainable: impl Fn(ParamId) -> bool,
    ) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return dim_err("adam", &[store.len()], &[grads.len(), self.m.len()]);
        }
        self.step += 1;
        let ids: Vec<ParamId> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            if !trainable(id) {
                continue;
            }
            let p = store.get_mut(id);
            if p.shape() != grads[i].shape() {
                return dim_err("adam", p.shape(), grads[i].shape());
            }
            adam_update(
                p.data_mut(),
                grads[i].data(),
                self.m[i].data_mut(),
                self.v[i].data_mut(),
                self.step,
                lr,
                &self.hyper,
            );
        }
        Ok(())
    }
}

/// Elementwise Adam on flat buffers; `step` is the 1-based update index.
pub fn adam_update<T: Real>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u64,
    lr: f64,
    h: &AdamHyper,
) {
    let t = step as i32;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);
    let (b1, b2) = (lit::<T>(h.beta1), lit::<T>(h.beta2));
    let (one_b1, one_b2) = (lit::<T>(1.0 - h.beta1), lit::<T>(1.0 - h.beta2));
    let (inv_bc1, inv_bc2) = (lit::<T>(1.0 / bc1), lit::<T>(1.0 / bc2));
    let (lr, eps) = (lit::<T>(lr), lit::<T>(h.eps));
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + one_b1 * g;
        v[i] = b2 * v[i] + one_b2 * g * g;
        let m_hat = m[i] * inv_bc1;
        let v_hat = v[i] * inv_bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Step schedule: `base_lr` before `drop_epoch` (0-based), `base_lr / factor` after.
pub fn lr_schedule(epoch: usize, base_lr: f64, drop_epoch: usize, factor: f64) -> f64 {
    if epoch < drop_epoch {
        base_lr
    } else {
        base_lr / factor
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|x| {
            let x = x.as_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = lit::<T>(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= k);
        }
    }
    norm
}
