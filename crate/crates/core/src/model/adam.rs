use serde::{Deserialize, Serialize};

use super::{ModelError, ParamSet};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        AdamState {
            m: vec![0.0; params.values.len()],
            v: vec![0.0; params.values.len()],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, grads: &ParamSet, lr: f64) -> Result<(), ModelError> {
    params.check_same_layout(grads)?;
    let n = params.values.len();
    if state.m.len() != n || state.v.len() != n {
        return Err(ModelError::ShapeMismatch {
            expected: format!("{n} moment entries"),
            found: state.m.len().to_string(),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (((p, &g), m), v) in params
        .values
        .iter_mut()
        .zip(&grads.values)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, FrontendMode, ModelConfig};

    fn small() -> ParamSet {
        let cfg = ModelConfig {
            frontend: FrontendMode::JointMlp,
            hidden: 3,
            frontend_width: 2,
            ..ModelConfig::default()
        };
        init_params(&cfg, 1).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = small();
        let before = p.clone();
        let mut st = AdamState::new(&p);
        let g = p.zeros_like();
        for _ in 0..10 {
            adam_step(&mut p, &mut st, &g, 1e-3).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.t, 10);
    }

    #[test]
    fn constant_gradient_step_approaches_lr() {
        let mut p = small();
        let mut st = AdamState::new(&p);
        let mut g = p.zeros_like();
        g.values.iter_mut().enumerate().for_each(|(i, v)| *v = if i % 2 == 0 { 0.3 } else { -2.0 });
        let lr = 1e-3;
        for _ in 0..5000 {
            let before = p.values.clone();
            adam_step(&mut p, &mut st, &g, lr).unwrap();
            let step = (p.values[0] - before[0]).abs();
            assert!((step - lr).abs() <= 0.1 * lr);
        }
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let mut a = small();
        let mut b = a.clone();
        let mut sa = AdamState::new(&a);
        let mut sb = sa.clone();
        let mut g = a.zeros_like();
        g.values.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64).sin());
        adam_step(&mut a, &mut sa, &g, 1e-2).unwrap();
        adam_step(&mut b, &mut sb, &g, 1e-2).unwrap();
        assert_eq!((a.clone(), sa), (b, sb));
        let mut wrong = g.clone();
        wrong.values.pop();
        let mut st = AdamState::new(&a);
        assert!(adam_step(&mut a, &mut st, &wrong, 1e-2).is_err());
    }
}
