use super::mlp::ParamSet;
use super::tape::Grads;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moments aligned with the entries of one [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub(crate) m: Vec<Tensor>,
    pub(crate) v: Vec<Tensor>,
    pub(crate) step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.entries().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        AdamState { m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    pub(crate) fn from_parts(m: Vec<Tensor>, v: Vec<Tensor>, step: u64) -> Self {
        AdamState { m, v, step }
    }
}

/// One bias-corrected Adam update. Gradients are looked up by qualified
/// name (`net/w0`); every parameter must have one.
pub fn adam_step(
    params: &ParamSet,
    grads: &Grads,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<ParamSet> {
    if state.m.len() != params.entries().len() {
        return Err(Error::contract(format!(
            "optimizer state has {} slots, `{}` has {} tensors",
            state.m.len(),
            params.name(),
            params.entries().len()
        )));
    }
    let mut grad_refs = Vec::with_capacity(params.entries().len());
    for (i, (key, t)) in params.entries().iter().enumerate() {
        let q = params.qualified(key);
        let g = grads
            .get(&q)
            .ok_or_else(|| Error::contract(format!("missing gradient for `{q}`")))?;
        if g.shape() != t.shape() || state.m[i].shape() != t.shape() {
            return Err(Error::dim(format!("gradient/moment shape mismatch for `{q}`")));
        }
        grad_refs.push(g);
    }

    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    let mut out = params.clone();
    for (i, (_, p)) in out.entries_mut().iter_mut().enumerate() {
        let g = grad_refs[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, pv) in p.data_mut().iter_mut().enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *pv -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> ParamSet {
        ParamSet::new("p", vec![("x".into(), Tensor::scalar(v))]).unwrap()
    }

    fn grad(v: f64) -> Grads {
        let mut g = Grads::default();
        g.insert("p/x", Tensor::scalar(v));
        g
    }

    #[test]
    fn first_step_closed_form() {
        let p = one(0.0);
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig { lr: 1e-3, ..Default::default() };
        let out = adam_step(&p, &grad(0.3), &mut st, &cfg).unwrap();
        let want = -1e-3 * 0.3 / (0.3 + 1e-8);
        assert!((out.get("x").unwrap().item() - want).abs() < 1e-18);
        assert!((want - -9.999999666667e-4).abs() < 1e-15);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let p = one(1.25);
        let mut st = AdamState::new(&p);
        let out = adam_step(&p, &grad(0.0), &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(out, p);
        assert_eq!(st.step(), 1);
        let out = adam_step(&out, &grad(0.0), &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(out, p);
        assert_eq!(st.step(), 2);
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let p = one(0.0);
        let mut st = AdamState::new(&p);
        let r = adam_step(&p, &Grads::default(), &mut st, &AdamConfig::default());
        assert!(matches!(r, Err(Error::Contract(_))));
        assert_eq!(st.step(), 0);
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let run = || {
            let mut p = one(0.1);
            let mut st = AdamState::new(&p);
            for k in 0..50 {
                p = adam_step(&p, &grad((k as f64).sin()), &mut st, &AdamConfig::default()).unwrap();
            }
            p.get("x").unwrap().item().to_bits()
        };
        assert_eq!(run(), run());
    }
}
