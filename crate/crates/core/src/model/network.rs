use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::{FrontendMode, ModelError, ParamSet};

/// One training example: a standardised forcing window (T×n_dyn), the
/// basin's standardised static vector, and the standardised target flow on
/// the window's last day.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub window: ArrayView2<'a, f64>,
    pub statics: ArrayView1<'a, f64>,
    pub target: f64,
}

/// Activations kept for the backward pass.
struct Trace {
    /// LSTM inputs, T×I.
    u: Array2<f64>,
    /// attr-fc static embedding.
    e: Option<Array1<f64>>,
    /// Gate activations per step, T×4H in i, f, g, o order.
    gates: Array2<f64>,
    /// Cell and hidden states, (T+1)×H with row 0 the zero initial state.
    c: Vec<f64>,
    h: Vec<f64>,
    y: f64,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check_inputs(p: &ParamSet, window: ArrayView2<'_, f64>, statics: ArrayView1<'_, f64>) -> Result<(), ModelError> {
    let l = &p.layout;
    if window.ncols() != l.n_dyn || window.nrows() == 0 {
        return Err(ModelError::ShapeMismatch {
            expected: format!("T×{} window", l.n_dyn),
            found: format!("{}×{}", window.nrows(), window.ncols()),
        });
    }
    if statics.len() != l.n_static {
        return Err(ModelError::ShapeMismatch {
            expected: format!("{} static values", l.n_static),
            found: statics.len().to_string(),
        });
    }
    if window.iter().chain(statics.iter()).any(|v| v.is_nan()) {
        return Err(ModelError::MissingForcingInWindow);
    }
    Ok(())
}

fn check_mask(p: &ParamSet, mask: Option<&[f64]>) -> Result<(), ModelError> {
    match mask {
        Some(m) if m.len() != p.layout.hidden => Err(ModelError::ShapeMismatch {
            expected: format!("dropout mask of {}", p.layout.hidden),
            found: m.len().to_string(),
        }),
        _ => Ok(()),
    }
}

/// Front-end output for every row of `x`: the LSTM inputs (rows×I) and, for
/// attr-fc, the static embedding.
fn front_inputs(p: &ParamSet, x: ArrayView2<'_, f64>, statics: ArrayView1<'_, f64>) -> (Array2<f64>, Option<Array1<f64>>) {
    let l = &p.layout;
    let n_dyn = l.n_dyn;
    match l.mode {
        FrontendMode::JointMlp => {
            let fw = p.front_w();
            let static_part = fw.slice(s![.., n_dyn..]).dot(&statics) + p.front_b();
            let mut a = x.dot(&fw.slice(s![.., ..n_dyn]).t());
            a += &static_part;
            a.mapv_inplace(f64::tanh);
            (a, None)
        }
        FrontendMode::AttrFc => {
            let mut e = p.front_w().dot(&statics) + p.front_b();
            e.mapv_inplace(f64::tanh);
            let mut u = Array2::zeros((x.nrows(), l.lstm_in()));
            u.slice_mut(s![.., ..n_dyn]).assign(&x);
            u.slice_mut(s![.., n_dyn..]).assign(&e);
            (u, Some(e))
        }
    }
}

/// Input projection W·u + b for every row, rows×4H.
fn project(p: &ParamSet, u: &Array2<f64>) -> Array2<f64> {
    let mut z = u.dot(&p.lstm_w().t());
    z += &p.lstm_b();
    z
}

/// Recurrent weights transposed to H×4H so a step is a sum of contiguous
/// axpy updates.
fn recurrent_t(p: &ParamSet) -> Vec<f64> {
    let uu = p.lstm_u();
    let (rows, h) = uu.dim();
    let mut ut = vec![0.0; rows * h];
    for j in 0..rows {
        for k in 0..h {
            ut[k * rows + j] = uu[[j, k]];
        }
    }
    ut
}

/// One LSTM step. On entry `z` holds the input projection; on exit it holds
/// the gate activations.
#[inline]
fn step(ut: &[f64], z: &mut [f64], h_prev: &[f64], c_prev: &[f64], c_next: &mut [f64], h_next: &mut [f64]) {
    let h_dim = h_prev.len();
    let rows = 4 * h_dim;
    for (k, &hk) in h_prev.iter().enumerate() {
        if hk != 0.0 {
            for (zj, &w) in z.iter_mut().zip(&ut[k * rows..(k + 1) * rows]) {
                *zj += hk * w;
            }
        }
    }
    for k in 0..h_dim {
        let i = sigmoid(z[k]);
        let f = sigmoid(z[h_dim + k]);
        let g = z[2 * h_dim + k].tanh();
        let o = sigmoid(z[3 * h_dim + k]);
        z[k] = i;
        z[h_dim + k] = f;
        z[2 * h_dim + k] = g;
        z[3 * h_dim + k] = o;
        let ct = f * c_prev[k] + i * g;
        c_next[k] = ct;
        h_next[k] = o * ct.tanh();
    }
}

fn head(p: &ParamSet, h_last: &[f64], mask: Option<&[f64]>) -> f64 {
    let hw = p.head_w();
    let y: f64 = match mask {
        Some(m) => h_last.iter().enumerate().map(|(k, &h)| hw[k] * m[k] * h).sum(),
        None => h_last.iter().enumerate().map(|(k, &h)| hw[k] * h).sum(),
    };
    y + p.head_b()
}

fn run(
    p: &ParamSet,
    window: ArrayView2<'_, f64>,
    statics: ArrayView1<'_, f64>,
    mask: Option<&[f64]>,
) -> Result<Trace, ModelError> {
    check_inputs(p, window, statics)?;
    check_mask(p, mask)?;
    let (t_len, h_dim) = (window.nrows(), p.layout.hidden);
    let (u, e) = front_inputs(p, window, statics);
    let mut gates = project(p, &u);
    let ut = recurrent_t(p);
    let mut c = vec![0.0; (t_len + 1) * h_dim];
    let mut h = vec![0.0; (t_len + 1) * h_dim];
    for t in 0..t_len {
        let mut zrow = gates.row_mut(t);
        let z = zrow.as_slice_mut().expect("contiguous gate row");
        let (h_done, h_next) = h.split_at_mut((t + 1) * h_dim);
        let (c_done, c_next) = c.split_at_mut((t + 1) * h_dim);
        step(&ut, z, &h_done[t * h_dim..], &c_done[t * h_dim..], &mut c_next[..h_dim], &mut h_next[..h_dim]);
    }
    let y = head(p, &h[t_len * h_dim..], mask);
    Ok(Trace { u, e, gates, c, h, y })
}

/// Inference over a long forcing series: one prediction per entry of `ends`,
/// each from the `seq`-day window ending at that row. The front end and input
/// projection are computed once per row and shared between windows.
pub fn forward_series(
    p: &ParamSet,
    x: ArrayView2<'_, f64>,
    statics: ArrayView1<'_, f64>,
    seq: usize,
    ends: &[usize],
) -> Result<Vec<f64>, ModelError> {
    if seq == 0 {
        return Err(ModelError::InvalidConfig("seq_len must be at least 1".into()));
    }
    for &end in ends {
        if end >= x.nrows() || end + 1 < seq {
            return Err(ModelError::ShapeMismatch {
                expected: format!("window end in {}..{}", seq - 1, x.nrows()),
                found: end.to_string(),
            });
        }
        check_inputs(p, x.slice(s![end + 1 - seq..=end, ..]), statics)?;
    }
    let h_dim = p.layout.hidden;
    let (u, _) = front_inputs(p, x, statics);
    let zin = project(p, &u);
    let ut = recurrent_t(p);
    let mut z = vec![0.0; 4 * h_dim];
    let (mut h, mut h2) = (vec![0.0; h_dim], vec![0.0; h_dim]);
    let (mut c, mut c2) = (vec![0.0; h_dim], vec![0.0; h_dim]);
    let mut out = Vec::with_capacity(ends.len());
    for &end in ends {
        h.fill(0.0);
        c.fill(0.0);
        for t in end + 1 - seq..=end {
            z.copy_from_slice(zin.row(t).as_slice().expect("contiguous projection row"));
            step(&ut, &mut z, &h, &c, &mut c2, &mut h2);
            std::mem::swap(&mut h, &mut h2);
            std::mem::swap(&mut c, &mut c2);
        }
        out.push(head(p, &h, None));
    }
    Ok(out)
}

/// Predicted standardised flow on the window's last day. `mask` holds the
/// already-scaled inverted-dropout multipliers for the final hidden state;
/// `None` is the inference path.
pub fn forward(
    p: &ParamSet,
    window: ArrayView2<'_, f64>,
    statics: ArrayView1<'_, f64>,
    mask: Option<&[f64]>,
) -> Result<f64, ModelError> {
    Ok(run(p, window, statics, mask)?.y)
}

/// Accumulates dL/dθ for one sample into `grads`, given dL/dy.
fn backward(p: &ParamSet, tr: &Trace, sample: &Sample<'_>, dy: f64, mask: Option<&[f64]>, grads: &mut ParamSet) {
    let l = &p.layout;
    let (t_len, h_dim, n_dyn) = (sample.window.nrows(), l.hidden, l.n_dyn);
    let h_last = &tr.h[t_len * h_dim..];
    let hw = p.head_w();

    *grads.head_b_mut() += dy;
    let mut dh = vec![0.0; h_dim];
    {
        let mut ghw = grads.head_w_mut();
        for k in 0..h_dim {
            let m = mask.map_or(1.0, |m| m[k]);
            ghw[k] += dy * m * h_last[k];
            dh[k] = dy * hw[k] * m;
        }
    }

    let uu = p.lstm_u();
    let uu = uu.as_slice().expect("contiguous recurrent weights");
    let mut dc = vec![0.0; h_dim];
    let mut dz = Array2::<f64>::zeros((t_len, 4 * h_dim));
    for t in (0..t_len).rev() {
        let gate = tr.gates.row(t);
        let c_t = &tr.c[(t + 1) * h_dim..(t + 2) * h_dim];
        let c_prev = &tr.c[t * h_dim..(t + 1) * h_dim];
        let mut dzrow = dz.row_mut(t);
        let d = dzrow.as_slice_mut().expect("contiguous gate row");
        for k in 0..h_dim {
            let (i, f, g, o) = (gate[k], gate[h_dim + k], gate[2 * h_dim + k], gate[3 * h_dim + k]);
            let tc = c_t[k].tanh();
            let dck = dc[k] + dh[k] * o * (1.0 - tc * tc);
            d[k] = dck * g * i * (1.0 - i);
            d[h_dim + k] = dck * c_prev[k] * f * (1.0 - f);
            d[2 * h_dim + k] = dck * i * (1.0 - g * g);
            d[3 * h_dim + k] = dh[k] * tc * o * (1.0 - o);
            dc[k] = dck * f;
        }
        if t > 0 {
            dh.fill(0.0);
            for (j, &dzj) in d.iter().enumerate() {
                if dzj != 0.0 {
                    for (acc, &w) in dh.iter_mut().zip(&uu[j * h_dim..(j + 1) * h_dim]) {
                        *acc += dzj * w;
                    }
                }
            }
        }
    }

    let h_prev = ArrayView2::from_shape((t_len, h_dim), &tr.h[..t_len * h_dim]).expect("hidden history");
    general_mat_mul(1.0, &dz.t(), &tr.u, 1.0, &mut grads.lstm_w_mut());
    general_mat_mul(1.0, &dz.t(), &h_prev, 1.0, &mut grads.lstm_u_mut());
    grads.lstm_b_mut().scaled_add(1.0, &dz.sum_axis(Axis(0)));

    let du = dz.dot(&p.lstm_w());
    match l.mode {
        FrontendMode::JointMlp => {
            let mut da = du;
            Zip::from(&mut da).and(&tr.u).for_each(|d, &u| *d *= 1.0 - u * u);
            let sum_da = da.sum_axis(Axis(0));
            let mut gfw = grads.front_w_mut();
            general_mat_mul(1.0, &da.t(), &sample.window, 1.0, &mut gfw.slice_mut(s![.., ..n_dyn]));
            let mut g_static = gfw.slice_mut(s![.., n_dyn..]);
            for (r, &a) in sum_da.iter().enumerate() {
                g_static.row_mut(r).scaled_add(a, &sample.statics);
            }
            grads.front_b_mut().scaled_add(1.0, &sum_da);
        }
        FrontendMode::AttrFc => {
            let e = tr.e.as_ref().expect("attr-fc embedding");
            let de = du.slice(s![.., n_dyn..]).sum_axis(Axis(0));
            let da = &de * &e.mapv(|v| 1.0 - v * v);
            let mut gfw = grads.front_w_mut();
            for (r, &a) in da.iter().enumerate() {
                gfw.row_mut(r).scaled_add(a, &sample.statics);
            }
            grads.front_b_mut().scaled_add(1.0, &da);
        }
    }
}

/// Mean squared error over the batch and its exact gradient by
/// backpropagation through time. `masks`, when given, holds one dropout mask
/// per sample.
pub fn loss_and_grad(
    p: &ParamSet,
    batch: &[Sample<'_>],
    masks: Option<&[Vec<f64>]>,
) -> Result<(f64, ParamSet), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if let Some(m) = masks {
        if m.len() != batch.len() {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{} dropout masks", batch.len()),
                found: m.len().to_string(),
            });
        }
    }
    let n = batch.len() as f64;
    let mut grads = p.zeros_like();
    let mut loss = 0.0;
    for (idx, sample) in batch.iter().enumerate() {
        let mask = masks.map(|m| m[idx].as_slice());
        let tr = run(p, sample.window, sample.statics, mask)?;
        let r = tr.y - sample.target;
        loss += r * r;
        backward(p, &tr, sample, 2.0 * r / n, mask, &mut grads);
    }
    Ok((loss / n, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};
    use crate::seed::rng_from;
    use rand::Rng;

    /// Straight-line evaluation of the same network with explicit scalar
    /// loops and no shared code with `run`.
    fn reference_forward(p: &ParamSet, window: &Array2<f64>, statics: &Array1<f64>, mask: Option<&[f64]>) -> f64 {
        let l = &p.layout;
        let hd = l.hidden;
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let fw = p.front_w();
        let fb = p.front_b();
        let w = p.lstm_w();
        let u = p.lstm_u();
        let b = p.lstm_b();
        let embed: Vec<f64> = (0..l.front)
            .map(|r| {
                let mut acc = fb[r];
                for j in 0..l.n_static {
                    acc += fw[[r, j]] * statics[j];
                }
                acc.tanh()
            })
            .collect();
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        for t in 0..window.nrows() {
            let x: Vec<f64> = match l.mode {
                FrontendMode::JointMlp => {
                    let full: Vec<f64> = window.row(t).iter().chain(statics.iter()).copied().collect();
                    (0..l.front)
                        .map(|r| {
                            let mut acc = fb[r];
                            for (j, v) in full.iter().enumerate() {
                                acc += fw[[r, j]] * v;
                            }
                            acc.tanh()
                        })
                        .collect()
                }
                FrontendMode::AttrFc => window.row(t).iter().chain(embed.iter()).copied().collect(),
            };
            let mut pre = vec![0.0; 4 * hd];
            for (j, pj) in pre.iter_mut().enumerate() {
                *pj = b[j];
                for (k, xk) in x.iter().enumerate() {
                    *pj += w[[j, k]] * xk;
                }
                for (k, hk) in h.iter().enumerate() {
                    *pj += u[[j, k]] * hk;
                }
            }
            for k in 0..hd {
                let i = sig(pre[k]);
                let f = sig(pre[hd + k]);
                let g = pre[2 * hd + k].tanh();
                let o = sig(pre[3 * hd + k]);
                c[k] = f * c[k] + i * g;
                h[k] = o * c[k].tanh();
            }
        }
        let hw = p.head_w();
        let mut y = p.head_b();
        for k in 0..hd {
            y += hw[k] * mask.map_or(1.0, |m| m[k]) * h[k];
        }
        y
    }

    fn tiny(mode: FrontendMode, n_static: usize, hidden: usize, front: usize) -> ModelConfig {
        ModelConfig {
            frontend: mode,
            n_static,
            hidden,
            frontend_width: front,
            ..ModelConfig::default()
        }
    }

    fn random_inputs(rng: &mut impl Rng, t: usize, n_static: usize) -> (Array2<f64>, Array1<f64>) {
        let w = Array2::from_shape_fn((t, 7), |_| rng.random_range(-2.0..2.0));
        let s = Array1::from_shape_fn(n_static, |_| rng.random_range(-2.0..2.0));
        (w, s)
    }

    #[test]
    fn zero_weights_collapse_to_head_bias() {
        let cfg = tiny(FrontendMode::JointMlp, 17, 6, 4);
        let mut p = init_params(&cfg, 1).unwrap();
        p.values.fill(0.0);
        *p.head_b_mut() = 0.37;
        let mut rng = rng_from(2);
        for _ in 0..3 {
            let (w, s) = random_inputs(&mut rng, 12, 17);
            assert_eq!(forward(&p, w.view(), s.view(), None).unwrap(), 0.37);
        }
    }

    #[test]
    fn matches_reference_forward() {
        let mut rng = rng_from(11);
        for (mode, n_static) in [(FrontendMode::JointMlp, 17), (FrontendMode::AttrFc, 64)] {
            let cfg = tiny(mode, n_static, 8, 5);
            let p = init_params(&cfg, 5).unwrap();
            let (w, s) = random_inputs(&mut rng, 10, n_static);
            let mask: Vec<f64> = (0..8).map(|k| if k % 3 == 0 { 0.0 } else { 1.0 / 0.6 }).collect();
            for m in [None, Some(mask.as_slice())] {
                let a = forward(&p, w.view(), s.view(), m).unwrap();
                let b = reference_forward(&p, &w, &s, m);
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                assert_eq!(a, forward(&p, w.view(), s.view(), m).unwrap());
            }
        }
    }

    #[test]
    fn series_forward_matches_per_window_forward() {
        let mut rng = rng_from(12);
        for (mode, n_static) in [(FrontendMode::JointMlp, 17), (FrontendMode::AttrFc, 17)] {
            let p = init_params(&tiny(mode, n_static, 6, 4), 2).unwrap();
            let (x, s) = random_inputs(&mut rng, 40, n_static);
            let ends = [9, 10, 25, 39];
            let got = forward_series(&p, x.view(), s.view(), 10, &ends).unwrap();
            for (&end, g) in ends.iter().zip(&got) {
                let w = x.slice(s![end - 9..=end, ..]);
                assert!((g - forward(&p, w, s.view(), None).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hidden_state_stays_in_open_unit_interval() {
        let cfg = tiny(FrontendMode::JointMlp, 17, 8, 5);
        let mut p = init_params(&cfg, 3).unwrap();
        p.values.iter_mut().for_each(|v| *v *= 20.0);
        let mut rng = rng_from(4);
        let (w, s) = random_inputs(&mut rng, 30, 17);
        let tr = run(&p, w.view(), s.view(), None).unwrap();
        assert!(tr.h.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn missing_forcing_rejected() {
        let cfg = tiny(FrontendMode::JointMlp, 17, 4, 3);
        let p = init_params(&cfg, 1).unwrap();
        let mut w = Array2::zeros((5, 7));
        w[[2, 3]] = f64::NAN;
        let s = Array1::zeros(17);
        assert!(matches!(forward(&p, w.view(), s.view(), None), Err(ModelError::MissingForcingInWindow)));
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    /// Max relative error between analytic and central-difference gradients.
    fn fd_check(cfg: &ModelConfig, seq: usize, seed: u64) -> f64 {
        let mut rng = rng_from(seed);
        let p = init_params(cfg, seed).unwrap();
        let inputs: Vec<_> = (0..2).map(|_| random_inputs(&mut rng, seq, cfg.n_static)).collect();
        let targets: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
        let masks: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..cfg.hidden).map(|_| if rng.random::<f64>() < 0.25 { 0.0 } else { 1.0 / 0.75 }).collect())
            .collect();
        let batch: Vec<Sample<'_>> = inputs
            .iter()
            .zip(&targets)
            .map(|((w, s), &target)| Sample { window: w.view(), statics: s.view(), target })
            .collect();
        let (_, grads) = loss_and_grad(&p, &batch, Some(&masks)).unwrap();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        let mut q = p.clone();
        for i in 0..p.values.len() {
            q.values[i] = p.values[i] + eps;
            let (lp, _) = loss_and_grad(&q, &batch, Some(&masks)).unwrap();
            q.values[i] = p.values[i] - eps;
            let (lm, _) = loss_and_grad(&q, &batch, Some(&masks)).unwrap();
            q.values[i] = p.values[i];
            worst = worst.max(rel_err(grads.values[i], (lp - lm) / (2.0 * eps)));
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cases = [
            (FrontendMode::JointMlp, 17, 4, 8),
            (FrontendMode::AttrFc, 64, 4, 8),
        ];
        for (i, &(mode, n_static, hidden, seq)) in cases.iter().enumerate() {
            let cfg = tiny(mode, n_static, hidden, 3);
            let worst = fd_check(&cfg, seq, 100 + i as u64);
            assert!(worst < 1e-4, "{mode} n_static={n_static}: {worst}");
        }
    }

    #[test]
    fn perfect_predictions_give_zero_loss_and_gradient() {
        let cfg = tiny(FrontendMode::AttrFc, 17, 5, 3);
        let p = init_params(&cfg, 9).unwrap();
        let mut rng = rng_from(9);
        let (w, s) = random_inputs(&mut rng, 8, 17);
        let y = forward(&p, w.view(), s.view(), None).unwrap();
        let batch = [Sample { window: w.view(), statics: s.view(), target: y }];
        let (loss, grads) = loss_and_grad(&p, &batch, None).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.values.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn duplicated_batch_leaves_loss_and_grads_unchanged() {
        let cfg = tiny(FrontendMode::JointMlp, 17, 5, 3);
        let p = init_params(&cfg, 4).unwrap();
        let mut rng = rng_from(4);
        let inputs: Vec<_> = (0..3).map(|_| random_inputs(&mut rng, 9, 17)).collect();
        let batch: Vec<Sample<'_>> =
            inputs.iter().map(|(w, s)| Sample { window: w.view(), statics: s.view(), target: 0.5 }).collect();
        let doubled: Vec<Sample<'_>> = batch.iter().chain(batch.iter()).copied().collect();
        let (l1, g1) = loss_and_grad(&p, &batch, None).unwrap();
        let (l2, g2) = loss_and_grad(&p, &doubled, None).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.values.iter().zip(&g2.values) {
            assert!((a - b).abs() < 1e-14 * a.abs().max(1.0));
        }
    }

    #[test]
    fn inference_equals_expected_training_output() {
        // Enumerate every mask over H = 4 units with keep probability 1 - p.
        let cfg = tiny(FrontendMode::JointMlp, 17, 4, 3);
        let p = init_params(&cfg, 6).unwrap();
        let mut rng = rng_from(6);
        let (w, s) = random_inputs(&mut rng, 6, 17);
        let rate: f64 = 0.4;
        let mut expected = 0.0;
        for bits in 0u32..16 {
            let mask: Vec<f64> = (0..4).map(|k| if bits >> k & 1 == 1 { 1.0 / (1.0 - rate) } else { 0.0 }).collect();
            let kept = bits.count_ones() as i32;
            let prob = (1.0 - rate).powi(kept) * rate.powi(4 - kept);
            expected += prob * forward(&p, w.view(), s.view(), Some(&mask)).unwrap();
        }
        let inference = forward(&p, w.view(), s.view(), None).unwrap();
        assert!((expected - inference).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_rejected() {
        let cfg = tiny(FrontendMode::JointMlp, 17, 4, 3);
        let p = init_params(&cfg, 1).unwrap();
        assert!(matches!(loss_and_grad(&p, &[], None), Err(ModelError::EmptyBatch)));
    }
}
