use crate::{Gradients, NumericsError, ParamId, ParamStore, Real, Result};

/// First and second moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<Real>,
    pub v: Vec<Real>,
    /// Number of updates applied to this parameter.
    pub t: u64,
}

/// AdamW with decoupled weight decay.
///
/// State is kept per parameter, so a frozen parameter's moments stay exactly
/// as they were while it is frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    state: Vec<Option<Moments>>,
}

impl Default for AdamW {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl AdamW {
    pub fn new(beta1: Real, beta2: Real, eps: Real) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            state: Vec::new(),
        }
    }

    pub fn state(&self, id: ParamId) -> Option<&Moments> {
        self.state.get(id.0).and_then(Option::as_ref)
    }

    pub fn set_state(&mut self, id: ParamId, moments: Moments) {
        if self.state.len() <= id.0 {
            self.state.resize(id.0 + 1, None);
        }
        self.state[id.0] = Some(moments);
    }

    pub fn reset(&mut self) {
        self.state.clear();
    }

    /// Applies one update to every trainable parameter.
    ///
    /// Every trainable parameter must have a gradient; frozen parameters are
    /// skipped entirely, whatever `grads` holds for them.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &Gradients,
        lr: Real,
        weight_decay: Real,
    ) -> Result<()> {
        let trainable: Vec<ParamId> = store.ids().filter(|&id| store.is_trainable(id)).collect();
        for &id in &trainable {
            if grads.get(id).is_none() {
                return Err(NumericsError::MissingGrad(store.param(id).name.clone()));
            }
        }
        if self.state.len() < store.len() {
            self.state.resize(store.len(), None);
        }
        for id in trainable {
            let g = grads.get(id).expect("checked above");
            let tensor = store.tensor_mut(id);
            let n = tensor.len();
            let st = self.state[id.0].get_or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            });
            st.t += 1;
            let bc1 = 1.0 - self.beta1.powi(st.t as i32);
            let bc2 = 1.0 - self.beta2.powi(st.t as i32);
            let data = tensor.data_mut();
            for i in 0..n {
                st.m[i] = self.beta1 * st.m[i] + (1.0 - self.beta1) * g[i];
                st.v[i] = self.beta2 * st.v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = st.m[i] / bc1;
                let v_hat = st.v[i] / bc2;
                data[i] -= lr * weight_decay * data[i];
                data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Linear warmup over the first 10% of `total_steps`, then constant.
pub fn lr_at(step: u64, total_steps: u64, base_lr: Real) -> Real {
    let warmup = 0.1 * total_steps as Real;
    if warmup <= 0.0 {
        return base_lr;
    }
    base_lr * (step as Real / warmup).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{ParamGroup, Tensor};

    fn one_param(v: Real) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s
            .add("w", Tensor::new(vec![1], vec![v]).unwrap(), ParamGroup::Slm)
            .unwrap();
        (s, id)
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let (mut s, id) = one_param(0.7);
        let mut g = Gradients::new(1);
        g.accumulate(id, &[0.0]);
        let mut opt = AdamW::default();
        for _ in 0..5 {
            opt.step(&mut s, &g, 1e-2, 0.0).unwrap();
        }
        assert_eq!(s.tensor(id).data(), &[0.7]);
    }

    #[test]
    fn frozen_param_unchanged() {
        let (mut s, id) = one_param(0.7);
        s.set_group_trainable(ParamGroup::Slm, false);
        let mut g = Gradients::new(1);
        g.accumulate(id, &[3.0]);
        let mut opt = AdamW::default();
        opt.step(&mut s, &g, 1e-1, 0.05).unwrap();
        assert_eq!(s.tensor(id).data(), &[0.7]);
        assert!(opt.state(id).is_none());
    }

    #[test]
    fn missing_grad_is_an_error() {
        let (mut s, _) = one_param(0.7);
        let g = Gradients::new(1);
        let err = AdamW::default().step(&mut s, &g, 1e-3, 0.0);
        assert!(matches!(err, Err(NumericsError::MissingGrad(_))));
    }

    #[test]
    fn schedule_points() {
        assert_eq!(lr_at(0, 100, 1e-5), 0.0);
        assert!((lr_at(10, 100, 1e-5) - 1e-5).abs() < 1e-20);
        assert!((lr_at(5, 100, 1e-5) - 0.5e-5).abs() < 1e-20);
        assert_eq!(lr_at(80, 100, 1e-5), 1e-5);
    }
}
