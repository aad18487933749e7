//! Adam with bias correction.

use crate::backward::GradientTape;
use crate::error::{PsgError, Result};
use crate::model::ModelParams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f64> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One Adam update. Refuses non-finite gradients before touching anything.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    tape: &GradientTape<T>,
    state: &mut AdamState<T>,
    config: &AdamConfig,
) -> Result<()> {
    let grads = tape.grads.tensors();
    if grads.len() != state.m.tensors().len() || grads.len() != params.tensors().len() {
        return Err(PsgError::Dimension("gradient tape does not match parameters".into()));
    }
    for (name, _, g) in &grads {
        if !g.is_finite() {
            return Err(PsgError::NonFinite(format!("gradient of {name}")));
        }
    }
    let (ps, ms, vs) = (params.tensors(), state.m.tensors(), state.v.tensors());
    for (i, (_, _, g)) in grads.iter().enumerate() {
        let shape = g.shape();
        if ps[i].2.shape() != shape || ms[i].2.shape() != shape || vs[i].2.shape() != shape {
            return Err(PsgError::Dimension("gradient tape does not match parameters".into()));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let b1 = T::lit(config.beta1);
    let b2 = T::lit(config.beta2);
    let one = T::one();
    let bias1 = one - T::lit(config.beta1.powi(t));
    let bias2 = one - T::lit(config.beta2.powi(t));
    let lr = T::lit(config.learning_rate);
    let eps = T::lit(config.eps);

    for ((p, (_, _, g)), (m, v)) in params
        .tensors_mut()
        .into_iter()
        .zip(&grads)
        .zip(state.m.tensors_mut().into_iter().zip(state.v.tensors_mut()))
    {
        let iter = p
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice()));
        for ((w, &gr), (mi, vi)) in iter {
            *mi = b1 * *mi + (one - b1) * gr;
            *vi = b2 * *vi + (one - b2) * gr * gr;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    if !params.is_finite() {
        return Err(PsgError::NonFinite("parameters after Adam step".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::model::{InputKind, ModelConfig};

    fn setup() -> (ModelParams, GradientTape) {
        let g: Graph = Graph::from_edges(2, [(0, 1)]).unwrap();
        let cfg = ModelConfig {
            embed_dim: 2,
            hidden_dim: 2,
            num_classes: 1,
            edge_dim: 1,
            ..ModelConfig::default()
        };
        let mut p = ModelParams::zeros(&cfg, InputKind::for_graph(&g)).unwrap();
        for m in p.tensors_mut() {
            m.as_mut_slice().iter_mut().for_each(|x| *x = 0.5);
        }
        let tape = GradientTape::zeros_for(&p);
        (p, tape)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut p, tape) = setup();
        let before = p.clone();
        let mut state = AdamState::new(&p);
        state.m.readout[0].set(0, 0, 1.0);
        adam_step(&mut p, &tape, &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(state.m.readout[0].get(0, 0), 0.9);
        // only the entry with non-zero momentum moves
        let moved: Vec<_> = p
            .tensors()
            .iter()
            .zip(before.tensors())
            .filter(|(a, b)| a.2 != b.2)
            .map(|(a, _)| a.0.clone())
            .collect();
        assert_eq!(moved, vec!["readout.0".to_string()]);
    }

    #[test]
    fn first_step_closed_form() {
        let (mut p, mut tape) = setup();
        tape.grads.label_head.as_mut_slice()[0] = 0.3;
        tape.grads.readout[1].as_mut_slice()[0] = -2.0;
        tape.grads.readout[1].as_mut_slice()[1] = 1e-9;
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(&p);
        let before = p.clone();
        adam_step(&mut p, &tape, &mut state, &cfg).unwrap();
        for ((_, _, after), ((_, _, b), (_, _, g))) in p
            .tensors()
            .into_iter()
            .zip(before.tensors().into_iter().zip(tape.grads.tensors()))
        {
            for ((&a, &b), &g) in after.as_slice().iter().zip(b.as_slice()).zip(g.as_slice()) {
                // m̂ = g, v̂ = g², step = -lr g / (|g| + eps)
                let expected = b - cfg.learning_rate * g / (g.abs() + cfg.eps);
                assert!((a - expected).abs() < 1e-15, "{a} vs {expected}");
            }
        }
    }

    #[test]
    fn nan_gradient_aborts() {
        let (mut p, mut tape) = setup();
        tape.grads.layers[0].w2.set(0, 1, f64::NAN);
        let mut state = AdamState::new(&p);
        let before = p.clone();
        let err = adam_step(&mut p, &tape, &mut state, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, PsgError::NonFinite(_)));
        assert_eq!(p, before);
        assert_eq!(state.step, 0);
    }
}
