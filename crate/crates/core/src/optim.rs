//! Named parameter tables, RMSProp and WGAN weight clipping.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Parameters keyed by name (`"enc1.weight"`, ...). Iteration order is the
/// sorted key order, which keeps every traversal deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamTable<E: Element = f32> {
    entries: BTreeMap<String, Tensor<E>>,
}

impl<E: Element> ParamTable<E> {
    pub fn new() -> Self {
        ParamTable { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<E>) -> Option<Tensor<E>> {
        self.entries.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<E>> {
        self.entries.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<E>> {
        self.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<E>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<E>)> {
        self.entries.iter_mut()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn same_keys<F: Element>(&self, other: &ParamTable<F>) -> Result<()> {
        if let Some(k) = self.keys().find(|k| other.get(k).is_none()) {
            return Err(Error::KeyMismatch(k.clone()));
        }
        if let Some(k) = other.keys().find(|k| self.get(k).is_none()) {
            return Err(Error::KeyMismatch(k.clone()));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        ParamTable { entries: self.entries.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape()))).collect() }
    }

    pub fn cast<F: Element>(&self) -> ParamTable<F> {
        ParamTable { entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(Tensor::all_finite)
    }

    /// Record every parameter on `tape`, as differentiable leaves when
    /// `trainable`, otherwise as constants.
    pub fn bind(&self, tape: &mut Tape<E>, trainable: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(k, v)| {
                let var = if trainable { tape.leaf(v.clone()) } else { tape.constant(v.clone()) };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameter names resolved to tape variables for one recording.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    /// Gather the gradient of every bound parameter into a table; parameters
    /// the loss does not reach get zeros.
    pub fn gradients<E: Element>(&self, grads: &Gradients<E>) -> ParamTable<E> {
        let mut out = ParamTable::new();
        for (k, &v) in &self.vars {
            out.insert(k.clone(), grads.wrt(v));
        }
        out
    }
}

/// Running mean of squared gradients per parameter, plus hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<E: Element = f32> {
    pub decay: E,
    pub eps: E,
    pub learning_rate: E,
    pub mean_sq: ParamTable<E>,
}

impl<E: Element> OptimizerState<E> {
    /// Zeroed state whose keys mirror `params`.
    pub fn for_params(params: &ParamTable<E>, learning_rate: E, decay: E, eps: E) -> Self {
        OptimizerState { decay, eps, learning_rate, mean_sq: params.zeros_like() }
    }
}

/// `s <- decay * s + (1 - decay) * g^2;  w <- w - lr * g / (sqrt(s) + eps)`
pub fn rmsprop_step<E: Element>(
    params: &mut ParamTable<E>,
    grads: &ParamTable<E>,
    state: &mut OptimizerState<E>,
) -> Result<()> {
    params.same_keys(grads)?;
    params.same_keys(&state.mean_sq)?;
    let (rho, eps, lr) = (state.decay, state.eps, state.learning_rate);
    let keep = E::one() - rho;
    for ((name, w), (_, s)) in params.iter_mut().zip(state.mean_sq.iter_mut()) {
        let g = grads.require(name)?;
        if g.shape() != w.shape() || s.shape() != w.shape() {
            return Err(Error::ShapeMismatch { left: w.shape().into(), right: g.shape().into() });
        }
        for ((wi, si), &gi) in w.data_mut().iter_mut().zip(s.data_mut()).zip(g.data()) {
            *si = rho * *si + keep * gi * gi;
            *wi = *wi - lr * gi / (si.sqrt() + eps);
        }
    }
    Ok(())
}

/// Clamp every element of every parameter to `[-c, c]`.
pub fn clip_weights<E: Element>(params: &mut ParamTable<E>, c: E) -> Result<()> {
    if !(c > E::zero()) {
        return Err(Error::InvalidArgument(alloc::format!("clip bound {c:?} must be positive")));
    }
    for (_, w) in params.iter_mut() {
        w.data_mut().iter_mut().for_each(|v| *v = v.max(-c).min(c));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn table(v: &[f64]) -> ParamTable<f64> {
        let mut t = ParamTable::new();
        t.insert("w", Tensor::new(&[v.len()], v.to_vec()).unwrap());
        t
    }

    #[test]
    fn rmsprop_single_step() {
        let mut p = table(&[0.0]);
        let g = table(&[1.0]);
        let mut s = OptimizerState::for_params(&p, 0.01, 0.9, 1e-8);
        rmsprop_step(&mut p, &g, &mut s).unwrap();
        // hand evaluation: s = 0.1, w = -0.01 / (sqrt(0.1) + 1e-8)
        let s1 = s.mean_sq.get("w").unwrap().data()[0];
        assert!((s1 - 0.1).abs() < 1e-15);
        let w1 = p.get("w").unwrap().data()[0];
        assert!((w1 - (-0.031_622_776_601_683_8)).abs() < 1e-9, "{w1}");

        rmsprop_step(&mut p, &g, &mut s).unwrap();
        let s2 = s.mean_sq.get("w").unwrap().data()[0];
        assert!((s2 - 0.19).abs() < 1e-15);
        let expect = w1 - 0.01 / (0.19f64.sqrt() + 1e-8);
        assert!((p.get("w").unwrap().data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn rmsprop_zero_grad_is_noop() {
        let mut p = table(&[0.3, -2.0]);
        let before = p.clone();
        let mut s = OptimizerState::for_params(&p, 0.01, 0.9, 1e-8);
        rmsprop_step(&mut p, &table(&[0.0, 0.0]), &mut s).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn rmsprop_key_mismatch() {
        let mut p = table(&[0.0]);
        let mut g = ParamTable::new();
        g.insert("v", Tensor::new(&[1], vec![1.0]).unwrap());
        let mut s = OptimizerState::for_params(&p, 0.01, 0.9, 1e-8);
        assert_eq!(rmsprop_step(&mut p, &g, &mut s).unwrap_err(), Error::KeyMismatch("w".into()));
    }

    #[test]
    fn clip_values() {
        let mut p = table(&[-0.5, 0.005, 0.5]);
        clip_weights(&mut p, 0.01).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[-0.01, 0.005, 0.01]);
        let inside = p.clone();
        clip_weights(&mut p, 0.01).unwrap();
        assert_eq!(p, inside);
        assert!(clip_weights(&mut p, 0.0).is_err());
    }
}
