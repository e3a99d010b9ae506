use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// `names` label the parameters in error messages. All gradients are checked
/// for finiteness before anything is modified.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    names: &[&str],
    state: &mut AdamState,
    hyper: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || names.len() != params.len() {
        return Err(Error::dim(
            "adam_step",
            &[params.len(), state.m.len()],
            &[grads.len(), names.len()],
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].shape() != p.shape() {
            return Err(Error::dim("adam_step", p.shape(), g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient for parameter {}",
                names[i]
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * gj;
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut state = AdamState::new([&p]);
        state.m[0] = Tensor::full(&[3], 0.2);
        state.v[0] = Tensor::full(&[3], 0.04);
        let g = Tensor::zeros(&[3]);
        // Nonzero moments still move the weights; start from zero moments for
        // the pure fixed point and check decay separately.
        let mut fresh = AdamState::new([&p]);
        adam_step(
            &mut [&mut p],
            &[&g],
            &["w"],
            &mut fresh,
            &AdamConfig::default(),
        )
        .unwrap();
        assert_eq!(p, before);
        let mut q = before.clone();
        adam_step(
            &mut [&mut q],
            &[&g],
            &["w"],
            &mut state,
            &AdamConfig::default(),
        )
        .unwrap();
        assert!(state.m[0].data().iter().all(|&m| (m - 0.18).abs() < 1e-15));
        assert!(state.v[0]
            .data()
            .iter()
            .all(|&v| (v - 0.04 * 0.999).abs() < 1e-15));
    }

    #[test]
    fn first_step_matches_closed_form() {
        let hyper = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        let g = Tensor::new(&[4], vec![0.3, -2.0, 1e-3, 5.0]).unwrap();
        let mut p = Tensor::zeros(&[4]);
        let mut state = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[&g], &["w"], &mut state, &hyper).unwrap();
        // Bias-corrected moments after one step are g and g^2, so the update
        // is -lr * g / (|g| + eps).
        for (w, gj) in p.data().iter().zip(g.data()) {
            let expected = -0.01 * gj / (gj.abs() + 1e-8);
            assert!((w - expected).abs() < 1e-15, "{w} vs {expected}");
        }
    }

    #[test]
    fn nan_gradient_is_a_training_error_naming_the_parameter() {
        let mut p = Tensor::zeros(&[2]);
        let g = Tensor::new(&[2], vec![1.0, f64::NAN]).unwrap();
        let mut state = AdamState::new([&p]);
        let err = adam_step(
            &mut [&mut p],
            &[&g],
            &["blocks.0.fc1.w"],
            &mut state,
            &AdamConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Training(ref m) if m.contains("blocks.0.fc1.w")));
        assert_eq!(p, Tensor::zeros(&[2]));
        assert_eq!(state.step, 0);
    }
}
