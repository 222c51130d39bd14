use std::collections::{BTreeMap, HashMap};

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// A named parameter tensor together with its learning-rate group.
pub struct ParamRef<'a, T: Real> {
    pub name: String,
    pub group: &'static str,
    pub tensor: &'a mut Tensor<T>,
}

/// Learning rate per parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct LrGroups(BTreeMap<String, f64>);

impl LrGroups {
    pub fn new() -> Self {
        LrGroups(BTreeMap::new())
    }

    /// Every group trains at the same rate.
    pub fn uniform(groups: &[&str], rate: f64) -> Self {
        LrGroups(groups.iter().map(|g| (g.to_string(), rate)).collect())
    }

    pub fn with(mut self, group: &str, rate: f64) -> Self {
        self.0.insert(group.to_string(), rate);
        self
    }

    pub fn rate(&self, group: &str) -> Option<f64> {
        self.0.get(group).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

impl Default for LrGroups {
    fn default() -> Self {
        Self::new()
    }
}

/// SGD with classical momentum:
/// `v = momentum * v - rate * grad; w += v`.
#[derive(Clone, Debug)]
pub struct Sgd<T: Real> {
    momentum: T,
    velocity: HashMap<String, Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(momentum: f64) -> Self {
        Sgd {
            momentum: T::from_f64(momentum),
            velocity: HashMap::new(),
        }
    }

    /// Applies one update to every parameter and zeroes its gradient.
    pub fn step(&mut self, params: Vec<ParamRef<'_, T>>, rates: &LrGroups) -> Result<()> {
        // Validate everything before mutating anything.
        for p in &params {
            if p.tensor.grad().is_none() {
                return Err(Error::InvalidArgument(format!(
                    "parameter {} has no gradient buffer",
                    p.name
                )));
            }
            if rates.rate(p.group).is_none() {
                return Err(Error::Config(format!(
                    "no learning rate for parameter group {:?}",
                    p.group
                )));
            }
        }
        for p in params {
            let rate = T::from_f64(rates.rate(p.group).unwrap_or_default());
            let len = p.tensor.len();
            let v = self
                .velocity
                .entry(p.name)
                .or_insert_with(|| vec![T::zero(); len]);
            let (data, grad) = p.tensor.data_and_grad_mut();
            let grad = grad.expect("checked above");
            for ((w, g), v) in data.iter_mut().zip(grad.iter_mut()).zip(v.iter_mut()) {
                *v = self.momentum * *v - rate * *g;
                *w += *v;
                *g = T::zero();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_weights() {
        let mut t = Tensor::<f32>::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        t.grad_mut();
        let mut sgd = Sgd::new(0.9);
        sgd.step(
            vec![ParamRef { name: "w".into(), group: "new", tensor: &mut t }],
            &LrGroups::uniform(&["new"], 0.1),
        )
        .unwrap();
        assert_eq!(t.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn scalar_step_by_hand() {
        let mut t = Tensor::<f64>::from_vec(&[1], vec![1.0]).unwrap();
        t.grad_mut()[0] = 1.0;
        let mut sgd = Sgd::new(0.0);
        sgd.step(
            vec![ParamRef { name: "w".into(), group: "new", tensor: &mut t }],
            &LrGroups::uniform(&["new"], 0.1),
        )
        .unwrap();
        assert!((t.data()[0] - 0.9).abs() < 1e-15);
        assert_eq!(t.grad().unwrap(), &[0.0]);
    }

    #[test]
    fn momentum_accumulates() {
        let mut t = Tensor::<f64>::from_vec(&[1], vec![0.0]).unwrap();
        let mut sgd = Sgd::new(0.5);
        let rates = LrGroups::uniform(&["g"], 1.0);
        for _ in 0..2 {
            t.grad_mut()[0] = 1.0;
            sgd.step(vec![ParamRef { name: "w".into(), group: "g", tensor: &mut t }], &rates)
                .unwrap();
        }
        // v1 = -1, w = -1; v2 = -0.5 - 1 = -1.5, w = -2.5
        assert_eq!(t.data()[0], -2.5);
    }

    #[test]
    fn two_groups_use_their_own_rates() {
        let mut a = Tensor::<f64>::from_vec(&[1], vec![1.0]).unwrap();
        let mut b = Tensor::<f64>::from_vec(&[1], vec![1.0]).unwrap();
        a.grad_mut()[0] = 1.0;
        b.grad_mut()[0] = 1.0;
        let rates = LrGroups::new().with("backbone", 0.001).with("new", 0.01);
        Sgd::new(0.0)
            .step(
                vec![
                    ParamRef { name: "a".into(), group: "backbone", tensor: &mut a },
                    ParamRef { name: "b".into(), group: "new", tensor: &mut b },
                ],
                &rates,
            )
            .unwrap();
        assert!((a.data()[0] - 0.999).abs() < 1e-15);
        assert!((b.data()[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut t = Tensor::<f32>::from_vec(&[1], vec![1.0]).unwrap();
        let err = Sgd::new(0.9).step(
            vec![ParamRef { name: "w".into(), group: "new", tensor: &mut t }],
            &LrGroups::uniform(&["new"], 0.1),
        );
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }
}
