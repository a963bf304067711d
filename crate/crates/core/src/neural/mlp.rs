use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::{NeuralError, Result, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width, hidden widths, output width.
    pub layer_widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, output_activation: Activation) -> Self {
        Self {
            layer_widths,
            hidden_activation: Activation::Relu,
            output_activation,
        }
    }

    /// `input → hidden × n_hidden → output`, ReLU between layers.
    pub fn uniform(input: usize, hidden: usize, n_hidden: usize, output: usize, out_act: Activation) -> Self {
        let mut w = alloc::vec![input];
        w.extend(core::iter::repeat_n(hidden, n_hidden));
        w.push(output);
        Self::new(w, out_act)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(NeuralError::Spec("an MLP needs at least two widths"));
        }
        if self.layer_widths.contains(&0) {
            return Err(NeuralError::Spec("MLP widths must be positive"));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap_or(&0)
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len().saturating_sub(1)
    }

    /// `(rows, cols)` of each parameter tensor: weight, bias, weight, ...
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.layer_widths
            .windows(2)
            .flat_map(|w| [(w[0], w[1]), (1, w[1])])
            .collect()
    }
}

/// Parameters of one MLP: `[W₀, b₀, W₁, b₁, ...]`, weights `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Vec<Tensor2>,
}

impl Mlp {
    /// Weights from `U(-1/√fan_in, 1/√fan_in)`, zero biases.
    pub fn init<R: Rng>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::new();
        for w in spec.layer_widths.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let data = (0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)).collect();
            params.push(Tensor2::new(w[0], w[1], data)?);
            params.push(Tensor2::zeros(1, w[1]));
        }
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let params = spec
            .param_shapes()
            .into_iter()
            .map(|(r, c)| Tensor2::zeros(r, c))
            .collect();
        Ok(Self { spec, params })
    }

    pub fn check_shapes(&self) -> Result<()> {
        self.spec.validate()?;
        let shapes = self.spec.param_shapes();
        if shapes.len() != self.params.len() {
            return Err(NeuralError::Spec("parameter count does not match spec"));
        }
        for (p, s) in self.params.iter().zip(shapes) {
            if p.shape() != s {
                return Err(NeuralError::Shape {
                    op: "mlp params",
                    left: p.shape(),
                    right: s,
                });
            }
        }
        Ok(())
    }

    pub fn leaves(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }
}

fn activate(tape: &mut Tape, x: Var, act: Activation) -> Result<Var> {
    match act {
        Activation::Identity => Ok(x),
        Activation::Relu => tape.relu(x),
        Activation::Sigmoid => tape.sigmoid(x),
    }
}

/// Records the MLP on `tape` with parameter variables `params`.
pub fn mlp_on_tape(tape: &mut Tape, spec: &MlpSpec, params: &[Var], input: Var) -> Result<Var> {
    let cols = tape.value(input)?.cols;
    if cols != spec.input_width() {
        return Err(NeuralError::Shape {
            op: "mlp input",
            left: tape.value(input)?.shape(),
            right: (tape.value(input)?.rows, spec.input_width()),
        });
    }
    let n = spec.n_layers();
    let mut x = input;
    for l in 0..n {
        x = tape.matmul(x, params[2 * l])?;
        x = tape.add_row(x, params[2 * l + 1])?;
        let act = if l + 1 == n {
            spec.output_activation
        } else {
            spec.hidden_activation
        };
        x = activate(tape, x, act)?;
    }
    Ok(x)
}

/// Plain evaluation: affine then activation per layer.
pub fn mlp_forward(mlp: &Mlp, input: &Tensor2) -> Result<Tensor2> {
    mlp.check_shapes()?;
    let mut tape = Tape::new();
    let params = mlp.leaves(&mut tape)?;
    let x = tape.leaf(input.clone())?;
    let y = mlp_on_tape(&mut tape, &mlp.spec, &params, x)?;
    Ok(tape.value(y)?.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::tape::sigmoid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_emit_activated_bias() {
        let spec = MlpSpec::uniform(3, 4, 1, 2, Activation::Sigmoid);
        let mut m = Mlp::zeros(spec).unwrap();
        m.params[3] = Tensor2::from_rows(&[[0.3, -2.0]], 2).unwrap();
        let x = Tensor2::from_rows(&[[1.0, 2.0, 3.0], [-4.0, 0.0, 9.0]], 3).unwrap();
        let y = mlp_forward(&m, &x).unwrap();
        for r in 0..2 {
            assert_eq!(y.row(r), [sigmoid(0.3), sigmoid(-2.0)]);
        }
    }

    #[test]
    fn identity_layer() {
        let mut m = Mlp::zeros(MlpSpec::new(alloc::vec![3, 3], Activation::Identity)).unwrap();
        m.params[0] = Tensor2::identity(3);
        let x = Tensor2::from_rows(&[[1.0, -2.0, 3.5]], 3).unwrap();
        assert_eq!(mlp_forward(&m, &x).unwrap(), x);
    }

    #[test]
    fn hand_unrolled_relu_net() {
        // 2 → 2 (ReLU) → 1
        let mut m = Mlp::zeros(MlpSpec::uniform(2, 2, 1, 1, Activation::Identity)).unwrap();
        m.params[0] = Tensor2::from_rows(&[[1.0, -1.0], [2.0, 0.5]], 2).unwrap();
        m.params[1] = Tensor2::from_rows(&[[0.1, -0.2]], 2).unwrap();
        m.params[2] = Tensor2::from_rows(&[[3.0], [-1.0]], 1).unwrap();
        m.params[3] = Tensor2::from_rows(&[[0.25]], 1).unwrap();
        let x = Tensor2::from_rows(&[[0.5, 1.0], [1.0, -1.0]], 2).unwrap();
        // row 0: h = relu(0.5 + 2 + 0.1, -0.5 + 0.5 - 0.2) = (2.6, 0)
        //        y = 3·2.6 + 0.25 = 8.05
        // row 1: h = relu(1 - 2 + 0.1, -1 - 0.5 - 0.2) = (0, 0) → y = 0.25
        let y = mlp_forward(&m, &x).unwrap();
        assert!((y.get(0, 0) - 8.05).abs() < 1e-12);
        assert_eq!(y.get(1, 0), 0.25);
    }

    #[test]
    fn shape_error_names_both_shapes() {
        let m = Mlp::zeros(MlpSpec::uniform(3, 4, 1, 2, Activation::Identity)).unwrap();
        let err = mlp_forward(&m, &Tensor2::zeros(5, 2)).unwrap_err();
        assert_eq!(
            err,
            NeuralError::Shape {
                op: "mlp input",
                left: (5, 2),
                right: (5, 3)
            }
        );
    }

    #[test]
    fn init_bounds_and_spec_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Mlp::init(MlpSpec::uniform(16, 8, 2, 1, Activation::Identity), &mut rng).unwrap();
        assert!(m.params[0].data.iter().all(|w| w.abs() < 0.25));
        assert!(m.params[1].data.iter().all(|&b| b == 0.0));
        m.check_shapes().unwrap();
        assert!(MlpSpec::new(alloc::vec![3], Activation::Identity).validate().is_err());
        assert!(MlpSpec::new(alloc::vec![3, 0, 1], Activation::Identity)
            .validate()
            .is_err());
    }
}
