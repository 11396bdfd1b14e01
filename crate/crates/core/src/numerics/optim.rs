//! First-order optimizers over [`Params`].

use crate::error::{Error, Result};
use crate::numerics::graph::Gradients;
use crate::numerics::matrix::Matrix;
use crate::numerics::params::Params;

/// SGD with momentum or Adam, holding per-parameter state slots.
#[derive(Debug, Clone)]
pub enum OptimizerState {
    SgdMomentum {
        learning_rate: f64,
        momentum: f64,
        velocity: Vec<Matrix>,
    },
    Adam {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        step_count: u64,
        first_moment: Vec<Matrix>,
        second_moment: Vec<Matrix>,
    },
}

impl OptimizerState {
    pub fn sgd_momentum(learning_rate: f64, momentum: f64, params: &Params) -> Result<Self> {
        if learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(OptimizerState::SgdMomentum {
            learning_rate,
            momentum,
            velocity: zeros_like(params),
        })
    }

    /// Adam with the conventional defaults beta1=0.9, beta2=0.999, eps=1e-8.
    pub fn adam(learning_rate: f64, params: &Params) -> Result<Self> {
        Self::adam_with(learning_rate, 0.9, 0.999, 1e-8, params)
    }

    pub fn adam_with(
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        params: &Params,
    ) -> Result<Self> {
        if learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(OptimizerState::Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step_count: 0,
            first_moment: zeros_like(params),
            second_moment: zeros_like(params),
        })
    }

    /// One update over all parameters. Slot shapes must match the parameters.
    pub fn step(&mut self, params: &mut Params, grads: &Gradients) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Dimension(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        match self {
            OptimizerState::SgdMomentum {
                learning_rate,
                momentum,
                velocity,
            } => {
                for i in 0..params.len() {
                    let g = grads.get(i);
                    let v = &mut velocity[i];
                    if v.shape() != g.shape() {
                        return Err(Error::Dimension(format!(
                            "slot/gradient shape mismatch on parameter {}",
                            params.name(i)
                        )));
                    }
                    // v <- mu v + g ; p <- p - lr v
                    for (vv, gg) in v.data_mut().iter_mut().zip(g.data()) {
                        *vv = *momentum * *vv + gg;
                    }
                    params.value_mut(i).add_scaled(v, -*learning_rate)?;
                }
            }
            OptimizerState::Adam {
                learning_rate,
                beta1,
                beta2,
                epsilon,
                step_count,
                first_moment,
                second_moment,
            } => {
                *step_count += 1;
                let t = *step_count as f64;
                let bc1 = 1.0 - beta1.powf(t);
                let bc2 = 1.0 - beta2.powf(t);
                for i in 0..params.len() {
                    let g = grads.get(i);
                    let m = &mut first_moment[i];
                    let v = &mut second_moment[i];
                    if m.shape() != g.shape() {
                        return Err(Error::Dimension(format!(
                            "slot/gradient shape mismatch on parameter {}",
                            params.name(i)
                        )));
                    }
                    let p = params.value_mut(i);
                    for k in 0..g.data().len() {
                        let gk = g.data()[k];
                        m.data_mut()[k] = *beta1 * m.data()[k] + (1.0 - *beta1) * gk;
                        v.data_mut()[k] = *beta2 * v.data()[k] + (1.0 - *beta2) * gk * gk;
                        let mhat = m.data()[k] / bc1;
                        let vhat = v.data()[k] / bc2;
                        p.data_mut()[k] -= *learning_rate * mhat / (vhat.sqrt() + *epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

fn zeros_like(params: &Params) -> Vec<Matrix> {
    (0..params.len())
        .map(|i| {
            let (r, c) = params.value(i).shape();
            Matrix::zeros(r, c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> Params {
        let mut p = Params::new();
        p.add("p", Matrix::from_vec(1, 1, vec![v]).unwrap());
        p
    }

    fn grad_of(params: &Params, v: f64) -> Gradients {
        let mut g = Gradients::zeros_like(params);
        g.get_mut(0).set(0, 0, v);
        g
    }

    #[test]
    fn sgd_no_momentum_is_plain_descent() {
        let mut p = one_param(0.0);
        let mut opt = OptimizerState::sgd_momentum(1.0, 0.0, &p).unwrap();
        let g = grad_of(&p, 3.0);
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p.value(0).at(0, 0), -3.0);
    }

    #[test]
    fn sgd_momentum_hand_recurrence() {
        // mu=0.5, lr=0.1, g=1 twice: v=1 then 1.5; p = -0.1 - 0.15 = -0.25
        let mut p = one_param(0.0);
        let mut opt = OptimizerState::sgd_momentum(0.1, 0.5, &p).unwrap();
        let g = grad_of(&p, 1.0);
        opt.step(&mut p, &g).unwrap();
        opt.step(&mut p, &g).unwrap();
        assert!((p.value(0).at(0, 0) - (-0.25)).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut p = one_param(1.25);
        let mut opt = OptimizerState::adam(0.1, &p).unwrap();
        let g = grad_of(&p, 0.0);
        for _ in 0..5 {
            opt.step(&mut p, &g).unwrap();
        }
        assert_eq!(p.value(0).at(0, 0), 1.25);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // minimize (x-2)^2 from 0
        let mut p = one_param(0.0);
        let mut opt = OptimizerState::adam(0.1, &p).unwrap();
        for _ in 0..500 {
            let x = p.value(0).at(0, 0);
            let g = grad_of(&p, 2.0 * (x - 2.0));
            opt.step(&mut p, &g).unwrap();
        }
        assert!((p.value(0).at(0, 0) - 2.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_nonpositive_learning_rate() {
        let p = one_param(0.0);
        assert!(OptimizerState::sgd_momentum(0.0, 0.5, &p).is_err());
        assert!(OptimizerState::adam(-1.0, &p).is_err());
    }
}
