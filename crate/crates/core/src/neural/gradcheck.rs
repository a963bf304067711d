//! Central finite-difference checks of tape gradients.

use alloc::vec::Vec;

use super::tape::{Tape, Var};
use super::tensor::{NeuralError, Result, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub h: f64,
    /// Lower bound on the relative-error denominator, as a fraction of
    /// `max(1, |f|)`. Rounding limits a central difference to roughly
    /// `ε·|f|/h` absolute accuracy, so components far below that are
    /// compared in absolute terms instead.
    pub denom_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-6,
            denom_floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Input index and flat element index of the worst component.
    pub worst: (usize, usize),
    pub checked: usize,
    /// Components whose ±h evaluations crossed a kink.
    pub skipped: usize,
    /// Distance of the base point to the nearest kink.
    pub kink_distance: f64,
}

fn eval<F>(inputs: &[Tensor2], f: &F) -> Result<(f64, Vec<usize>, f64)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out)?;
    if v.shape() != (1, 1) {
        return Err(NeuralError::Shape {
            op: "gradcheck",
            left: v.shape(),
            right: (1, 1),
        });
    }
    Ok((v.data[0], tape.kink_signature(), tape.kink_distance()))
}

/// Compares the gradient of the scalar `f(inputs)` against central
/// differences for every element of every input.
///
/// Relative error is `|g - n| / max(|g|, |n|, denom_floor·max(1, |f|))`. A component is
/// skipped when either perturbed evaluation lands on a different smooth
/// piece than the base point, which covers every base point closer than
/// `h` to a kink along that component.
pub fn check_gradients<F>(inputs: &[Tensor2], cfg: &GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let base_sig = tape.kink_signature();
    let floor = cfg.denom_floor * tape.value(out)?.data[0].abs().max(1.0);
    let mut report = GradCheckReport {
        kink_distance: tape.kink_distance(),
        ..GradCheckReport::default()
    };
    let grads = tape.backward(out)?;

    let mut work: Vec<Tensor2> = inputs.to_vec();
    for (ti, v) in vars.iter().enumerate() {
        let g = grads.wrt(*v)?;
        for k in 0..inputs[ti].data.len() {
            let x0 = inputs[ti].data[k];
            work[ti].data[k] = x0 + cfg.h;
            let (fp, sp, _) = eval(&work, &f)?;
            work[ti].data[k] = x0 - cfg.h;
            let (fm, sm, _) = eval(&work, &f)?;
            work[ti].data[k] = x0;
            if sp != base_sig || sm != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * cfg.h);
            let analytic = g.data[k];
            let denom = analytic.abs().max(numeric.abs()).max(floor);
            let err = (analytic - numeric).abs() / denom;
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (ti, k);
            }
        }
    }
    Ok(report)
}
