use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::tensor::{NeuralError, Result, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor2>,
    pub v: Vec<Tensor2>,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new<'a>(hyper: AdamHyper, params: impl IntoIterator<Item = &'a Tensor2>) -> Self {
        let m: Vec<Tensor2> = params.into_iter().map(|p| Tensor2::zeros(p.rows, p.cols)).collect();
        Self {
            step: 0,
            v: m.clone(),
            m,
            hyper,
        }
    }
}

/// One Adam step with bias correction. Weight decay is decoupled:
/// parameters shrink by `1 - lr·wd` before the moment-based update.
pub fn adam_step(state: &mut AdamState, params: &mut [&mut Tensor2], grads: &[&Tensor2]) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(NeuralError::Shape {
            op: "adam",
            left: (params.len(), grads.len()),
            right: (state.m.len(), state.m.len()),
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if !p.same_shape(g) || !p.same_shape(m) {
            return Err(NeuralError::Shape {
                op: "adam",
                left: p.shape(),
                right: g.shape(),
            });
        }
    }
    let h = state.hyper;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);
    let shrink = 1.0 - h.lr * h.weight_decay;
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = h.beta1 * m.data[i] + (1.0 - h.beta1) * gi;
            v.data[i] = h.beta2 * v.data[i] + (1.0 - h.beta2) * gi * gi;
            let m_hat = m.data[i] / bc1;
            let v_hat = v.data[i] / bc2;
            p.data[i] = p.data[i] * shrink - h.lr * m_hat / (v_hat.sqrt() + h.eps_hat);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(hyper: AdamHyper, p0: &[f64], grads: &[&[f64]]) -> Vec<f64> {
        let mut p = Tensor2::new(1, p0.len(), p0.to_vec()).unwrap();
        let mut s = AdamState::new(hyper, [&p]);
        for g in grads {
            let g = Tensor2::new(1, g.len(), g.to_vec()).unwrap();
            adam_step(&mut s, &mut [&mut p], &[&g]).unwrap();
        }
        p.data
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let h = AdamHyper {
            weight_decay: 0.0,
            ..AdamHyper::default()
        };
        assert_eq!(run(h, &[1.0, -2.0], &[&[0.0, 0.0]]), [1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let h = AdamHyper {
            weight_decay: 0.0,
            ..AdamHyper::default()
        };
        let p = run(h, &[0.5], &[&[1.0]]);
        let step = 0.5 - p[0];
        assert!((step / h.lr - 1.0).abs() < 1e-6);
    }

    #[test]
    fn two_steps_match_scripted_trace() {
        // Recurrences written out independently for lr=0.1, wd=0.01,
        // g₁ = (0.5, -2), g₂ = (-0.25, 1).
        let h = AdamHyper {
            lr: 0.1,
            weight_decay: 0.01,
            ..AdamHyper::default()
        };
        let got = run(h, &[1.0, -1.0], &[&[0.5, -2.0], &[-0.25, 1.0]]);
        let mut want = [1.0f64, -1.0];
        let g = [[0.5f64, -2.0], [-0.25, 1.0]];
        for k in 0..2 {
            let (mut m, mut v) = (0.0f64, 0.0f64);
            for t in 0..2 {
                m = 0.9 * m + 0.1 * g[t][k];
                v = 0.999 * v + 0.001 * g[t][k] * g[t][k];
                let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
                let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
                want[k] = want[k] * (1.0 - 0.1 * 0.01) - 0.1 * mh / (vh.sqrt() + 1e-8);
            }
        }
        for k in 0..2 {
            assert!((got[k] - want[k]).abs() <= 1e-13 * want[k].abs());
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Tensor2::zeros(2, 2);
        let mut s = AdamState::new(AdamHyper::default(), [&p]);
        let g = Tensor2::zeros(1, 4);
        assert!(adam_step(&mut s, &mut [&mut p], &[&g]).is_err());
    }
}
