//! RMSProp parameter updates with a per-tensor mean-square accumulator:
//!
//! ```text
//! s <- rho * s + (1 - rho) * g^2
//! theta <- theta - lr * g / (sqrt(s) + eps)
//! ```

use crate::error::{Error, Result};

use super::store::{GradMap, ParamStore};

/// Applies one RMSProp step. `grads` must be keyed by exactly the set of
/// unfrozen parameter names: a gradient for a frozen (or unknown)
/// parameter is an error, as is a missing gradient for an unfrozen one.
pub fn rmsprop_step(
    store: &mut ParamStore,
    grads: &GradMap,
    lr: f64,
    rho: f64,
    eps: f64,
) -> Result<()> {
    for name in grads.keys() {
        if !store.contains(name) {
            return Err(Error::invalid_argument(format!(
                "gradient supplied for unknown parameter {name:?}"
            )));
        }
        if store.is_frozen(name) {
            return Err(Error::invalid_argument(format!(
                "gradient supplied for frozen parameter {name:?}"
            )));
        }
    }
    let unfrozen = store.unfrozen_names();
    for name in &unfrozen {
        if !grads.contains_key(name) {
            return Err(Error::invalid_argument(format!(
                "missing gradient for unfrozen parameter {name:?}"
            )));
        }
    }

    for name in &unfrozen {
        let grad = &grads[name];
        {
            let param = store.tensor(name)?;
            if !param.same_shape(grad) {
                return Err(Error::Shape(format!(
                    "gradient shape {:?} does not match parameter {name:?} {:?}",
                    grad.shape(),
                    param.shape()
                )));
            }
        }
        if !grad.all_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for {name:?}")));
        }
        let state = store
            .rms_state_mut(name)
            .expect("parameter registered without rms state");
        for (s, g) in state.data_mut().iter_mut().zip(grad.data()) {
            *s = rho * *s + (1.0 - rho) * g * g;
        }
        let state = state.clone();
        let param = store.tensor_mut(name)?;
        for ((t, g), s) in param.data_mut().iter_mut().zip(grad.data()).zip(state.data()) {
            *t -= lr * g / (s.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::Tensor;

    fn scalar_store(v: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(v));
        store
    }

    fn grad_of(v: f64) -> GradMap {
        let mut g = GradMap::new();
        g.insert("w".into(), Tensor::scalar(v));
        g
    }

    #[test]
    fn zero_gradient_decays_state_only() {
        let mut store = scalar_store(2.0);
        rmsprop_step(&mut store, &grad_of(1.0), 0.0, 0.9, 1e-8).unwrap();
        let s1 = store.rms_state("w").unwrap().data()[0];
        assert!((s1 - 0.1).abs() < 1e-15);
        rmsprop_step(&mut store, &grad_of(0.0), 0.01, 0.9, 1e-8).unwrap();
        assert_eq!(store.tensor("w").unwrap().data()[0], 2.0);
        let s2 = store.rms_state("w").unwrap().data()[0];
        assert!((s2 - 0.09).abs() < 1e-15);
    }

    #[test]
    fn matches_hand_computed_recurrence() {
        // g = 1 twice with rho=0.9, lr=0.01, s0=0:
        //   step 1: s=0.1,  dtheta = -0.01/sqrt(0.1)  ~ -0.031623
        //   step 2: s=0.19, dtheta = -0.01/sqrt(0.19) ~ -0.022942
        let mut store = scalar_store(0.0);
        rmsprop_step(&mut store, &grad_of(1.0), 0.01, 0.9, 0.0).unwrap();
        let w1 = store.tensor("w").unwrap().data()[0];
        assert!((w1 - (-0.031_622_776_601_683_794)).abs() < 1e-12);
        rmsprop_step(&mut store, &grad_of(1.0), 0.01, 0.9, 0.0).unwrap();
        let w2 = store.tensor("w").unwrap().data()[0];
        let expected2 = w1 - 0.01 / 0.19f64.sqrt();
        assert!((w2 - expected2).abs() < 1e-15);
        assert!((w2 - w1 + 0.022_941_573_387_056_174).abs() < 1e-9);
    }

    #[test]
    fn frozen_parameter_with_gradient_is_rejected() {
        let mut store = scalar_store(1.0);
        store.set_frozen("w", true).unwrap();
        assert!(rmsprop_step(&mut store, &grad_of(0.5), 0.01, 0.9, 1e-8).is_err());
    }

    #[test]
    fn missing_gradient_for_unfrozen_parameter_is_rejected() {
        let mut store = scalar_store(1.0);
        store.insert("b", Tensor::scalar(0.0));
        assert!(rmsprop_step(&mut store, &grad_of(0.5), 0.01, 0.9, 1e-8).is_err());
    }

    #[test]
    fn accumulator_stays_non_negative() {
        let mut store = scalar_store(0.0);
        for g in [-3.0, 2.0, -0.5, 0.0, 10.0] {
            rmsprop_step(&mut store, &grad_of(g), 0.01, 0.9, 1e-8).unwrap();
            assert!(store.rms_state("w").unwrap().data()[0] >= 0.0);
        }
    }
}
