use super::Tensor;
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
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

/// Moment accumulators for a fixed, ordered list of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let zeros: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return shape_err(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.first_moment.len()
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first_moment) {
        if !p.same_shape(g) || !p.same_shape(m) {
            return shape_err(format!(
                "adam: param {:?}, grad {:?}, moment {:?}",
                p.shape(),
                g.shape(),
                m.shape()
            ));
        }
    }
    state.step += 1;
    let AdamConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        epsilon: eps,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook scalar Adam, written independently of the tensor version.
    fn scalar_adam(mut x: f64, grads: &[f64], c: AdamConfig) -> f64 {
        let (mut m, mut v) = (0.0, 0.0);
        for (i, g) in grads.iter().enumerate() {
            let t = (i + 1) as f64;
            m = c.beta1 * m + (1.0 - c.beta1) * g;
            v = c.beta2 * v + (1.0 - c.beta2) * g * g;
            let mh = m / (1.0 - c.beta1.powf(t));
            let vh = v / (1.0 - c.beta2.powf(t));
            x -= c.learning_rate * mh / (vh.sqrt() + c.epsilon);
        }
        x
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::from_fn(&[3], |i| i as f64);
        let before = p.clone();
        let mut st = AdamState::new(AdamConfig::default(), [&p]);
        adam_step(&mut [&mut p], &[Tensor::zeros(&[3])], &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Tensor::zeros(&[4]);
        let g = Tensor::vector(vec![0.5, -2.0, 10.0, 1e-3]);
        let mut st = AdamState::new(AdamConfig::default(), [&p]);
        adam_step(&mut [&mut p], &[g.clone()], &mut st).unwrap();
        for (pv, gv) in p.data().iter().zip(g.data()) {
            assert!((pv.abs() - 1e-3).abs() < 1e-6, "{pv}");
            assert!(pv.signum() == -gv.signum());
        }
    }

    #[test]
    fn matches_scalar_reference() {
        let c = AdamConfig::default();
        let grads = [0.7, -0.7, 0.2, 3.0, -1.5];
        let mut p = Tensor::vector(vec![1.0]);
        let mut st = AdamState::new(c, [&p]);
        for (i, g) in grads.iter().enumerate() {
            adam_step(&mut [&mut p], &[Tensor::vector(vec![*g])], &mut st).unwrap();
            let expected = scalar_adam(1.0, &grads[..=i], c);
            assert!((p.data()[0] - expected).abs() < 1e-15);
        }
        // g then -g steps back toward the start
        let mut q = Tensor::vector(vec![0.0]);
        let mut st = AdamState::new(c, [&q]);
        adam_step(&mut [&mut q], &[Tensor::vector(vec![1.0])], &mut st).unwrap();
        let after_one = q.data()[0];
        adam_step(&mut [&mut q], &[Tensor::vector(vec![-1.0])], &mut st).unwrap();
        assert!(q.data()[0].abs() < after_one.abs());
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let mut p = Tensor::zeros(&[2]);
        let mut st = AdamState::new(AdamConfig::default(), [&p]);
        assert!(adam_step(&mut [&mut p], &[Tensor::zeros(&[3])], &mut st).is_err());
        assert_eq!(st.step, 0);
    }
}
