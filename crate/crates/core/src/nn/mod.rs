//! Small fully connected Q-network with hand-written backpropagation.
//!
//! Hidden layers are rectified, the output is affine. An optional dueling
//! head splits the last hidden activation into a scalar state value and a
//! per-action advantage, recombined by mean or max subtraction. Weights are
//! stored `in x out` so a batch forward is `X · W + b`.

mod adam;
mod checkpoint;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError};

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive, NumAssign};
use rand::Rng;
use thiserror::Error;

const HIDDEN_BIAS: f64 = 0.01;

/// Floating-point element type of a network.
pub trait Scalar:
    Float + NumAssign + LinalgScalar + ScalarOperand + FromPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to any scalar")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetError {
    #[error("input has {got} features, network expects {expected}")]
    InputShape { expected: usize, got: usize },
    #[error("target has {got} entries, expected {expected}")]
    TargetShape { expected: usize, got: usize },
    #[error("action {action} out of range for {outputs} outputs")]
    ActionOutOfRange { action: usize, outputs: usize },
    #[error("target contains a non-finite value")]
    NonFiniteTarget,
    #[error("network has no dueling heads")]
    NoDuelingHeads,
}

/// How the dueling head removes the advantage offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// `Q = V + (A - mean(A))`
    Mean,
    /// `Q = V + (A - max(A))`
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Linear,
    Dueling(Aggregation),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub outputs: usize,
    pub head: Head,
}

impl Architecture {
    /// Hidden widths used for the small buildings.
    pub const SMALL_HIDDEN: [usize; 4] = [128, 256, 256, 256];
    /// Hidden widths used for the large building.
    pub const LARGE_HIDDEN: [usize; 4] = [512, 1024, 1024, 1024];

    pub fn new(input: usize, hidden: &[usize], outputs: usize, head: Head) -> Self {
        Architecture {
            input,
            hidden: hidden.to_vec(),
            outputs,
            head,
        }
    }

    /// `(fan_in, fan_out)` of every parameter layer, trunk first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut width = self.input;
        for &h in &self.hidden {
            shapes.push((width, h));
            width = h;
        }
        match self.head {
            Head::Linear => shapes.push((width, self.outputs)),
            Head::Dueling(_) => {
                shapes.push((width, 1));
                shapes.push((width, self.outputs));
            }
        }
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Dense<F> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, limit: f64, bias: f64, rng: &mut R) -> Self {
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || {
            F::of(rng.gen_range(-limit..=limit))
        });
        Dense {
            weight,
            bias: Array1::from_elem(fan_out, F::of(bias)),
        }
    }

    fn affine(&self, x: &ArrayView2<F>) -> Array2<F> {
        let mut z = x.dot(&self.weight);
        z += &self.bias;
        z
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parameter-shaped gradient container, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub layers: Vec<Dense<F>>,
}

/// Regression target for [`Network::loss_and_grad`].
#[derive(Debug, Clone, Copy)]
pub enum Target<'a, F> {
    /// Every output is regressed; loss is the mean over all entries.
    Full(ArrayView2<'a, F>),
    /// Only `actions[i]` of row `i` is regressed onto `values[i]`.
    Action { actions: &'a [usize], values: &'a [F] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<F> {
    arch: Architecture,
    layers: Vec<Dense<F>>,
}

struct Tape<F> {
    /// Input followed by every hidden activation.
    activations: Vec<Array2<F>>,
    /// Raw advantage outputs (dueling only).
    advantage: Option<Array2<F>>,
    output: Array2<F>,
}

impl<F: Scalar> Network<F> {
    /// He-uniform rectifier layers with a small positive bias; heads use
    /// fan-in scaling for a linear unit and start with zero bias.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let shapes = arch.layer_shapes();
        let trunk = arch.hidden.len();
        let layers = shapes
            .iter()
            .enumerate()
            .map(|(i, &(fan_in, fan_out))| {
                let (gain, bias) = if i < trunk { (6.0, HIDDEN_BIAS) } else { (3.0, 0.0) };
                Dense::uniform(fan_in, fan_out, (gain / fan_in.max(1) as f64).sqrt(), bias, rng)
            })
            .collect();
        Network { arch, layers }
    }

    pub fn zeros(arch: Architecture) -> Self {
        let layers = arch
            .layer_shapes()
            .iter()
            .map(|&(i, o)| Dense::zeros(i, o))
            .collect();
        Network { arch, layers }
    }

    /// Build from explicit layers; shapes must match `arch`.
    pub fn from_layers(arch: Architecture, layers: Vec<Dense<F>>) -> Option<Self> {
        let shapes = arch.layer_shapes();
        let ok = shapes.len() == layers.len()
            && shapes
                .iter()
                .zip(&layers)
                .all(|(&(i, o), l)| l.weight.dim() == (i, o) && l.bias.len() == o);
        ok.then_some(Network { arch, layers })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Dense<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<F>] {
        &mut self.layers
    }

    pub fn outputs(&self) -> usize {
        self.arch.outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    pub fn zero_gradients(&self) -> Gradients<F> {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.weight.nrows(), l.weight.ncols()))
                .collect(),
        }
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[F]) -> Result<Vec<F>, NetError> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.forward_batch(view)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass for a `batch x input` matrix.
    pub fn forward_batch(&self, x: ArrayView2<F>) -> Result<Array2<F>, NetError> {
        Ok(self.run(x, self.aggregation())?.output)
    }

    /// Forward with an explicit dueling aggregation.
    pub fn dueling_forward(&self, x: &[F], mode: Aggregation) -> Result<Vec<F>, NetError> {
        if !matches!(self.arch.head, Head::Dueling(_)) {
            return Err(NetError::NoDuelingHeads);
        }
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.run(view, Some(mode))?.output.into_raw_vec_and_offset().0)
    }

    /// State value and raw advantages of the dueling head.
    pub fn dueling_streams(&self, x: &[F]) -> Result<(F, Vec<F>), NetError> {
        if !matches!(self.arch.head, Head::Dueling(_)) {
            return Err(NetError::NoDuelingHeads);
        }
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let tape = self.run(view, Some(Aggregation::Mean))?;
        let h = tape.activations.last().expect("tape holds input").view();
        let k = self.arch.hidden.len();
        let value = self.layers[k].affine(&h)[[0, 0]];
        let adv = tape.advantage.expect("dueling tape").into_raw_vec_and_offset().0;
        Ok((value, adv))
    }

    fn aggregation(&self) -> Option<Aggregation> {
        match self.arch.head {
            Head::Linear => None,
            Head::Dueling(mode) => Some(mode),
        }
    }

    fn run(&self, x: ArrayView2<F>, mode: Option<Aggregation>) -> Result<Tape<F>, NetError> {
        if x.ncols() != self.arch.input {
            return Err(NetError::InputShape {
                expected: self.arch.input,
                got: x.ncols(),
            });
        }
        let k = self.arch.hidden.len();
        let mut activations = Vec::with_capacity(k + 1);
        activations.push(x.to_owned());
        for layer in &self.layers[..k] {
            let mut z = layer.affine(&activations.last().expect("non-empty").view());
            z.mapv_inplace(|v| v.max(F::zero()));
            activations.push(z);
        }
        let h = activations.last().expect("non-empty").view();
        let (output, advantage) = match mode {
            None => (self.layers[k].affine(&h), None),
            Some(mode) => {
                let value = self.layers[k].affine(&h);
                let adv = self.layers[k + 1].affine(&h);
                let mut q = adv.clone();
                for (mut row, v) in q.outer_iter_mut().zip(value.column(0)) {
                    let offset = match mode {
                        Aggregation::Mean => row.sum() / F::of(row.len() as f64),
                        Aggregation::Max => row.fold(F::neg_infinity(), |m, &a| m.max(a)),
                    };
                    let shift = *v - offset;
                    row.mapv_inplace(|a| a + shift);
                }
                (q, Some(adv))
            }
        };
        Ok(Tape {
            activations,
            advantage,
            output,
        })
    }

    /// Half squared error and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, x: ArrayView2<F>, target: Target<'_, F>) -> Result<(F, Gradients<F>), NetError> {
        let batch = x.nrows();
        let outputs = self.arch.outputs;
        let tape = self.run(x, self.aggregation())?;
        let q = &tape.output;

        let mut dq = Array2::<F>::zeros((batch, outputs));
        let half = F::of(0.5);
        let loss = match target {
            Target::Full(y) => {
                if y.dim() != (batch, outputs) {
                    return Err(NetError::TargetShape {
                        expected: outputs,
                        got: y.ncols(),
                    });
                }
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(NetError::NonFiniteTarget);
                }
                let scale = F::of((batch * outputs) as f64);
                Zip::from(&mut dq).and(q).and(y).for_each(|d, &q, &y| *d = (q - y) / scale);
                Zip::from(q).and(y).fold(F::zero(), |acc, &q, &y| acc + half * (q - y) * (q - y)) / scale
            }
            Target::Action { actions, values } => {
                if actions.len() != batch || values.len() != batch {
                    return Err(NetError::TargetShape {
                        expected: batch,
                        got: actions.len().min(values.len()),
                    });
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(NetError::NonFiniteTarget);
                }
                let scale = F::of(batch as f64);
                let mut loss = F::zero();
                for (i, (&a, &y)) in actions.iter().zip(values).enumerate() {
                    if a >= outputs {
                        return Err(NetError::ActionOutOfRange { action: a, outputs });
                    }
                    let err = q[[i, a]] - y;
                    dq[[i, a]] = err / scale;
                    loss += half * err * err;
                }
                loss / scale
            }
        };

        Ok((loss, self.backward(&tape, dq)))
    }

    /// Single-sample full-vector loss, `mean(½(Q - y)²)`.
    pub fn mse_loss_and_grad(&self, x: &[F], target: &[F]) -> Result<(F, Gradients<F>), NetError> {
        let xv = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        if target.len() != self.arch.outputs {
            return Err(NetError::TargetShape {
                expected: self.arch.outputs,
                got: target.len(),
            });
        }
        let yv = ArrayView2::from_shape((1, target.len()), target).expect("row view");
        self.loss_and_grad(xv, Target::Full(yv))
    }

    fn backward(&self, tape: &Tape<F>, dq: Array2<F>) -> Gradients<F> {
        let k = self.arch.hidden.len();
        let mut grads: Vec<Option<Dense<F>>> = vec![None; self.layers.len()];
        let h = tape.activations[k].view();

        let mut dh = match self.aggregation() {
            None => {
                let layer = &self.layers[k];
                grads[k] = Some(Dense {
                    weight: standard(h.t().dot(&dq)),
                    bias: dq.sum_axis(Axis(0)),
                });
                dq.dot(&layer.weight.t())
            }
            Some(mode) => {
                let dv = dq.sum_axis(Axis(1)).insert_axis(Axis(1));
                let mut da = dq;
                let adv = tape.advantage.as_ref().expect("dueling tape");
                let width = F::of(self.arch.outputs as f64);
                for ((mut row, s), a_row) in da.outer_iter_mut().zip(dv.column(0)).zip(adv.outer_iter()) {
                    match mode {
                        Aggregation::Mean => {
                            let shift = *s / width;
                            row.mapv_inplace(|g| g - shift);
                        }
                        Aggregation::Max => {
                            let m = crate::tabular::argmax(a_row.as_slice().expect("contiguous"));
                            row[m] -= *s;
                        }
                    }
                }
                let (value, advantage) = (&self.layers[k], &self.layers[k + 1]);
                grads[k] = Some(Dense {
                    weight: standard(h.t().dot(&dv)),
                    bias: dv.sum_axis(Axis(0)),
                });
                grads[k + 1] = Some(Dense {
                    weight: standard(h.t().dot(&da)),
                    bias: da.sum_axis(Axis(0)),
                });
                let mut dh = dv.dot(&value.weight.t());
                dh += &da.dot(&advantage.weight.t());
                dh
            }
        };

        for l in (0..k).rev() {
            let out = &tape.activations[l + 1];
            Zip::from(&mut dh).and(out).for_each(|g, &a| {
                if a <= F::zero() {
                    *g = F::zero();
                }
            });
            let input = tape.activations[l].view();
            let weight_grad = standard(input.t().dot(&dh));
            let bias_grad = dh.sum_axis(Axis(0));
            if l > 0 {
                dh = dh.dot(&self.layers[l].weight.t());
            }
            grads[l] = Some(Dense {
                weight: weight_grad,
                bias: bias_grad,
            });
        }

        Gradients {
            layers: grads.into_iter().map(|g| g.expect("every layer visited")).collect(),
        }
    }
}

fn standard<F: Scalar>(a: Array2<F>) -> Array2<F> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(weight: f64, bias: f64) -> Network<f64> {
        let arch = Architecture::new(1, &[], 1, Head::Linear);
        Network::from_layers(
            arch,
            vec![Dense {
                weight: arr2(&[[weight]]),
                bias: arr1(&[bias]),
            }],
        )
        .unwrap()
    }

    /// Dueling net with no hidden layers whose streams are pure biases.
    fn fixed_dueling(value: f64, adv: &[f64], mode: Aggregation) -> Network<f64> {
        let arch = Architecture::new(1, &[], adv.len(), Head::Dueling(mode));
        let mut net = Network::zeros(arch);
        net.layers_mut()[0].bias[0] = value;
        net.layers_mut()[1].bias.assign(&Array1::from(adv.to_vec()));
        net
    }

    #[test]
    fn zero_network_outputs_zero() {
        let arch = Architecture::new(3, &[4, 5], 6, Head::Linear);
        let net = Network::<f64>::zeros(arch);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0; 6]);
    }

    #[test]
    fn affine_single_layer() {
        assert_eq!(tiny(2.0, 1.0).forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn rectifier_blocks_negative_preactivation() {
        let arch = Architecture::new(1, &[1], 1, Head::Linear);
        let net = Network::from_layers(
            arch,
            vec![
                Dense { weight: arr2(&[[1.0]]), bias: arr1(&[-5.0]) },
                Dense { weight: arr2(&[[3.0]]), bias: arr1(&[0.5]) },
            ],
        )
        .unwrap();
        assert_eq!(net.forward(&[0.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn shape_errors() {
        let net = tiny(1.0, 0.0);
        assert_eq!(
            net.forward(&[1.0, 2.0]),
            Err(NetError::InputShape { expected: 1, got: 2 })
        );
        assert_eq!(
            net.mse_loss_and_grad(&[1.0], &[1.0, 2.0]).unwrap_err(),
            NetError::TargetShape { expected: 1, got: 2 }
        );
        assert_eq!(
            net.mse_loss_and_grad(&[1.0], &[f64::NAN]).unwrap_err(),
            NetError::NonFiniteTarget
        );
        assert_eq!(
            net.dueling_forward(&[1.0], Aggregation::Mean),
            Err(NetError::NoDuelingHeads)
        );
    }

    #[test]
    fn dueling_examples() {
        let net = fixed_dueling(1.0, &[1.0, 2.0, 3.0], Aggregation::Mean);
        assert_eq!(net.forward(&[0.0]).unwrap(), vec![0.0, 1.0, 2.0]);
        assert_eq!(
            net.dueling_forward(&[0.0], Aggregation::Max).unwrap(),
            vec![-1.0, 0.0, 1.0]
        );
        let flat = fixed_dueling(1.0, &[4.0; 5], Aggregation::Mean);
        assert_eq!(flat.forward(&[0.0]).unwrap(), vec![1.0; 5]);
    }

    #[test]
    fn loss_at_target_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::<f64>::new(Architecture::new(2, &[3], 2, Head::Linear), &mut rng);
        let y = net.forward(&[0.3, -0.2]).unwrap();
        let (loss, grads) = net.mse_loss_and_grad(&[0.3, -0.2], &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.layers.iter().all(|l| l.weight.iter().chain(l.bias.iter()).all(|&g| g == 0.0)));
    }

    #[test]
    fn hand_differentiated_unit() {
        let (loss, grads) = tiny(1.0, 0.0).mse_loss_and_grad(&[1.0], &[3.0]).unwrap();
        assert_eq!(loss, 2.0);
        assert_eq!(grads.layers[0].weight[[0, 0]], -2.0);
        assert_eq!(grads.layers[0].bias[0], -2.0);
    }

    #[test]
    fn masked_loss_touches_one_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::<f64>::new(Architecture::new(2, &[4], 3, Head::Linear), &mut rng);
        let x = arr2(&[[0.5, 0.1]]);
        let q = net.forward(&[0.5, 0.1]).unwrap();
        let (loss, grads) = net
            .loss_and_grad(x.view(), Target::Action { actions: &[1], values: &[q[1] + 2.0] })
            .unwrap();
        assert!((loss - 2.0).abs() < 1e-12);
        let out = &grads.layers[1];
        assert_eq!(out.bias[0], 0.0);
        assert_eq!(out.bias[2], 0.0);
        assert!((out.bias[1] + 2.0).abs() < 1e-12);
        assert_eq!(
            net.loss_and_grad(x.view(), Target::Action { actions: &[3], values: &[0.0] }).unwrap_err(),
            NetError::ActionOutOfRange { action: 3, outputs: 3 }
        );
    }

    #[test]
    fn forward_is_pure_and_batch_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let arch = Architecture::new(3, &[8, 8], 4, Head::Dueling(Aggregation::Mean));
        let net = Network::<f64>::new(arch, &mut rng);
        let rows = [[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]];
        let batch = net.forward_batch(arr2(&rows).view()).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let single = net.forward(r).unwrap();
            assert_eq!(single, net.forward(r).unwrap());
            for (j, v) in single.iter().enumerate() {
                assert!((v - batch[[i, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_shapes_follow_tables() {
        let arch = Architecture::new(5, &Architecture::SMALL_HIDDEN, 25, Head::Linear);
        assert_eq!(
            arch.layer_shapes(),
            vec![(5, 128), (128, 256), (256, 256), (256, 256), (256, 25)]
        );
        let arch = Architecture::new(91, &Architecture::LARGE_HIDDEN, 8281, Head::Dueling(Aggregation::Mean));
        assert_eq!(arch.layer_shapes().last(), Some(&(1024, 8281)));
        assert_eq!(arch.layer_shapes()[4], (1024, 1));
    }
}
