use std::ops::Range;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FrontendMode, ModelConfig, ModelError};
use crate::seed::{derive_seed, rng_from};

/// Shapes and offsets of every block inside the flat parameter vector.
///
/// Blocks, in storage order (matrices row-major):
/// `front_w` F×P, `front_b` F, `lstm_w` 4H×I, `lstm_u` 4H×H, `lstm_b` 4H,
/// `head_w` H, `head_b` 1. P is n_dyn + n_static for the joint front end and
/// n_static for attr-fc; I is F for joint and n_dyn + F for attr-fc. Gate
/// rows are ordered input, forget, cell, output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub mode: FrontendMode,
    pub n_dyn: usize,
    pub n_static: usize,
    pub front: usize,
    pub hidden: usize,
}

impl Layout {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        Layout {
            mode: cfg.frontend,
            n_dyn: cfg.n_dyn,
            n_static: cfg.n_static,
            front: cfg.frontend_width,
            hidden: cfg.hidden,
        }
    }

    pub fn front_in(&self) -> usize {
        match self.mode {
            FrontendMode::JointMlp => self.n_dyn + self.n_static,
            FrontendMode::AttrFc => self.n_static,
        }
    }

    pub fn lstm_in(&self) -> usize {
        match self.mode {
            FrontendMode::JointMlp => self.front,
            FrontendMode::AttrFc => self.n_dyn + self.front,
        }
    }

    fn sizes(&self) -> [usize; 7] {
        let (f, h) = (self.front, self.hidden);
        [f * self.front_in(), f, 4 * h * self.lstm_in(), 4 * h * h, 4 * h, h, 1]
    }

    fn range(&self, block: usize) -> Range<usize> {
        let sizes = self.sizes();
        let start: usize = sizes[..block].iter().sum();
        start..start + sizes[block]
    }

    pub fn len(&self) -> usize {
        self.sizes().iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(name, offset, rows, cols)` for every block.
    pub fn blocks(&self) -> Vec<(&'static str, usize, usize, usize)> {
        let (f, h) = (self.front, self.hidden);
        let shapes = [
            ("front_w", f, self.front_in()),
            ("front_b", f, 1),
            ("lstm_w", 4 * h, self.lstm_in()),
            ("lstm_u", 4 * h, h),
            ("lstm_b", 4 * h, 1),
            ("head_w", h, 1),
            ("head_b", 1, 1),
        ];
        shapes
            .iter()
            .enumerate()
            .map(|(i, &(name, r, c))| (name, self.range(i).start, r, c))
            .collect()
    }
}

const FRONT_W: usize = 0;
const FRONT_B: usize = 1;
const LSTM_W: usize = 2;
const LSTM_U: usize = 3;
const LSTM_B: usize = 4;
const HEAD_W: usize = 5;
const HEAD_B: usize = 6;

/// All network weights in one flat vector, addressed through [`Layout`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl ParamSet {
    pub fn zeros(layout: Layout) -> Self {
        let values = vec![0.0; layout.len()];
        ParamSet { layout, values }
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet::zeros(self.layout.clone())
    }

    fn mat(&self, block: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.values[self.layout.range(block)]).expect("layout shape")
    }

    fn mat_mut(&mut self, block: usize, rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
        let r = self.layout.range(block);
        ArrayViewMut2::from_shape((rows, cols), &mut self.values[r]).expect("layout shape")
    }

    fn vec_mut(&mut self, block: usize) -> ArrayViewMut1<'_, f64> {
        let r = self.layout.range(block);
        ArrayViewMut1::from(&mut self.values[r])
    }

    pub fn front_w(&self) -> ArrayView2<'_, f64> {
        self.mat(FRONT_W, self.layout.front, self.layout.front_in())
    }

    pub fn front_w_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let (r, c) = (self.layout.front, self.layout.front_in());
        self.mat_mut(FRONT_W, r, c)
    }

    pub fn lstm_w(&self) -> ArrayView2<'_, f64> {
        self.mat(LSTM_W, 4 * self.layout.hidden, self.layout.lstm_in())
    }

    pub fn lstm_w_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let (r, c) = (4 * self.layout.hidden, self.layout.lstm_in());
        self.mat_mut(LSTM_W, r, c)
    }

    pub fn lstm_u(&self) -> ArrayView2<'_, f64> {
        self.mat(LSTM_U, 4 * self.layout.hidden, self.layout.hidden)
    }

    pub fn lstm_u_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let (r, c) = (4 * self.layout.hidden, self.layout.hidden);
        self.mat_mut(LSTM_U, r, c)
    }

    pub fn front_b(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.values[self.layout.range(FRONT_B)])
    }

    pub fn front_b_mut(&mut self) -> ArrayViewMut1<'_, f64> {
        self.vec_mut(FRONT_B)
    }

    pub fn lstm_b(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.values[self.layout.range(LSTM_B)])
    }

    pub fn lstm_b_mut(&mut self) -> ArrayViewMut1<'_, f64> {
        self.vec_mut(LSTM_B)
    }

    pub fn head_w(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.values[self.layout.range(HEAD_W)])
    }

    pub fn head_w_mut(&mut self) -> ArrayViewMut1<'_, f64> {
        self.vec_mut(HEAD_W)
    }

    pub fn head_b(&self) -> f64 {
        self.values[self.layout.range(HEAD_B).start]
    }

    pub fn head_b_mut(&mut self) -> &mut f64 {
        let i = self.layout.range(HEAD_B).start;
        &mut self.values[i]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_layout(&self, other: &ParamSet) -> Result<(), ModelError> {
        if self.layout != other.layout || self.values.len() != other.values.len() {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{} parameters ({:?})", self.values.len(), self.layout),
                found: format!("{} parameters ({:?})", other.values.len(), other.layout),
            });
        }
        Ok(())
    }
}

/// Seeded uniform initialisation. Front-end and input weights use
/// ±1/√fan_in of their layer; recurrent weights, LSTM biases and the head use
/// ±1/√H. Forget-gate biases start at exactly +1.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamSet, ModelError> {
    cfg.validate()?;
    let layout = Layout::from_config(cfg);
    let mut p = ParamSet::zeros(layout.clone());
    let mut rng = rng_from(derive_seed(seed, "init"));
    let h = layout.hidden;
    for (name, off, rows, cols) in layout.blocks() {
        let bound = init_bound(&layout, name);
        for v in &mut p.values[off..off + rows * cols] {
            *v = rng.random_range(-bound..=bound);
        }
    }
    p.lstm_b_mut().slice_mut(ndarray::s![h..2 * h]).fill(1.0);
    Ok(p)
}

/// Per-block initialisation bounds, matching [`init_params`].
pub(crate) fn init_bound(layout: &Layout, block: &str) -> f64 {
    let fan = match block {
        "front_w" | "front_b" => layout.front_in(),
        "lstm_w" => layout.lstm_in(),
        _ => layout.hidden,
    };
    1.0 / (fan as f64).sqrt()
}
