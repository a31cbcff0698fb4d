use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot_bound, Parameters};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => super::sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative at pre-activation `z`, given the output `a = apply(z)`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

/// Affine map followed by an elementwise activation: `act(W·x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    weight: Matrix,
    bias: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::dim("DenseLayer bias", weight.rows(), bias.len()));
        }
        Ok(DenseLayer {
            weight,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = glorot_bound(input, output);
        let data = (0..input * output)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        DenseLayer {
            weight: Matrix::from_vec(output, input, data).expect("finite glorot weights"),
            bias: vec![0.0; output],
            activation,
        }
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        DenseLayer {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Matrix {
        &mut self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.weight.matvec(x);
        for (zi, b) in z.iter_mut().zip(&self.bias) {
            *zi += b;
        }
        z
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("dense layer input", self.input_dim(), x.len()));
        }
        let act = self.activation;
        Ok(self.pre_activation(x).into_iter().map(|z| act.apply(z)).collect())
    }
}

impl Parameters for DenseLayer {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![self.weight.data(), &self.bias]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.data_mut(), &mut self.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        LayerGrad {
            weight: Matrix::zeros(layer.output_dim(), layer.input_dim()),
            bias: vec![0.0; layer.output_dim()],
        }
    }
}

impl Parameters for LayerGrad {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![self.weight.data(), &self.bias]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.data_mut(), &mut self.bias]
    }
}

/// A stack of dense layers applied in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("an MLP needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].input_dim() != pair[0].output_dim() {
                return Err(Error::dim(
                    format!("layer {} input", i + 1),
                    pair[0].output_dim(),
                    pair[1].input_dim(),
                ));
            }
        }
        Ok(Mlp { layers })
    }

    /// Glorot-initialised stack through `dims`, with `hidden` activation on
    /// every layer but the last, which uses `output`.
    pub fn glorot<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument("need at least input and output dims".into()));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                DenseLayer::glorot(w[0], w[1], act, rng)
            })
            .collect();
        Mlp::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn apply(&self, input: &[f64]) -> Result<Vec<f64>> {
        mlp_apply(&self.layers, input)
    }

    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<(MlpGrad, Vec<f64>)> {
        mlp_backward(&self.layers, input, upstream)
    }

    /// Like [`Mlp::backward`] but accumulates into an existing gradient.
    pub fn backward_into(
        &self,
        input: &[f64],
        upstream: &[f64],
        grad: &mut MlpGrad,
    ) -> Result<Vec<f64>> {
        backward_impl(&self.layers, input, upstream, grad)
    }
}

impl Parameters for Mlp {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.param_slices()).collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.param_slices_mut())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<LayerGrad>,
}

impl MlpGrad {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self::zeros_for(mlp.layers())
    }

    fn zeros_for(layers: &[DenseLayer]) -> Self {
        MlpGrad {
            layers: layers.iter().map(LayerGrad::zeros_like).collect(),
        }
    }
}

impl Parameters for MlpGrad {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.param_slices()).collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.param_slices_mut())
            .collect()
    }
}

fn check_input(layers: &[DenseLayer], input: &[f64]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::InvalidArgument("empty layer stack".into()));
    }
    let mut width = input.len();
    for (i, layer) in layers.iter().enumerate() {
        if layer.input_dim() != width {
            return Err(Error::dim(format!("layer {i} input"), layer.input_dim(), width));
        }
        width = layer.output_dim();
    }
    Ok(())
}

/// Applies the layers in order.
pub fn mlp_apply(layers: &[DenseLayer], input: &[f64]) -> Result<Vec<f64>> {
    check_input(layers, input)?;
    let mut x = input.to_vec();
    for layer in layers {
        let act = layer.activation;
        x = layer.pre_activation(&x).into_iter().map(|z| act.apply(z)).collect();
    }
    Ok(x)
}

/// Gradients of `upstream · mlp(input)` with respect to every parameter and
/// to the input.
pub fn mlp_backward(
    layers: &[DenseLayer],
    input: &[f64],
    upstream: &[f64],
) -> Result<(MlpGrad, Vec<f64>)> {
    let mut grad = MlpGrad::zeros_for(layers);
    let dx = backward_impl(layers, input, upstream, &mut grad)?;
    Ok((grad, dx))
}

fn backward_impl(
    layers: &[DenseLayer],
    input: &[f64],
    upstream: &[f64],
    grad: &mut MlpGrad,
) -> Result<Vec<f64>> {
    check_input(layers, input)?;
    let out_dim = layers[layers.len() - 1].output_dim();
    if upstream.len() != out_dim {
        return Err(Error::dim("upstream gradient", out_dim, upstream.len()));
    }
    if grad.layers.len() != layers.len() {
        return Err(Error::dim("gradient layer count", layers.len(), grad.layers.len()));
    }

    // (input, pre-activation, output) per layer
    let mut cache: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::with_capacity(layers.len());
    let mut x = input.to_vec();
    for layer in layers {
        let z = layer.pre_activation(&x);
        let a: Vec<f64> = z.iter().map(|&zi| layer.activation.apply(zi)).collect();
        let next = a.clone();
        cache.push((x, z, a));
        x = next;
    }

    let mut delta = upstream.to_vec();
    for (i, layer) in layers.iter().enumerate().rev() {
        let (x_in, z, a) = &cache[i];
        for ((d, &zi), &ai) in delta.iter_mut().zip(z).zip(a) {
            *d *= layer.activation.derivative(zi, ai);
        }
        let g = &mut grad.layers[i];
        g.weight.add_outer(&delta, x_in);
        for (gb, d) in g.bias.iter_mut().zip(&delta) {
            *gb += d;
        }
        delta = layer.weight.matvec_t(&delta);
    }
    Ok(delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{flatten, grad_check};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(w: &[&[f64]], b: &[f64], act: Activation) -> DenseLayer {
        DenseLayer::new(Matrix::from_rows(w).unwrap(), b.to_vec(), act).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let l = DenseLayer::new(Matrix::identity(2), vec![0.0; 2], Activation::Identity).unwrap();
        assert_eq!(mlp_apply(&[l], &[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
    }

    #[test]
    fn zero_logit_sigmoid_is_half() {
        let l = layer(&[&[0.0, 0.0]], &[0.0], Activation::Sigmoid);
        assert_eq!(mlp_apply(&[l], &[5.0, 7.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn relu_clamps_negative_affine() {
        let l = layer(&[&[1.0, -1.0]], &[-1.0], Activation::Relu);
        assert_eq!(mlp_apply(&[l], &[2.0, 3.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn dimension_error_names_layer() {
        let a = DenseLayer::zeros(3, 4, Activation::Relu);
        let b = DenseLayer::zeros(5, 2, Activation::Identity);
        let err = mlp_apply(&[a, b], &[0.0; 3]).unwrap_err().to_string();
        assert!(err.contains("layer 1"), "{err}");
        assert!(Mlp::new(vec![DenseLayer::zeros(3, 4, Activation::Relu), DenseLayer::zeros(5, 2, Activation::Relu)]).is_err());
    }

    #[test]
    fn identity_layer_gradient_is_outer_product() {
        let l = DenseLayer::new(Matrix::identity(2), vec![0.0; 2], Activation::Identity).unwrap();
        let x = [1.5, -2.0];
        let g = [0.25, 4.0];
        let (grad, dx) = mlp_backward(std::slice::from_ref(&l), &x, &g).unwrap();
        assert_eq!(grad.layers[0].weight.data(), &[0.375, -0.5, 6.0, -8.0]);
        assert_eq!(grad.layers[0].bias, g.to_vec());
        assert_eq!(dx, g.to_vec());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::glorot(&[4, 6, 3], Activation::Tanh, Activation::Sigmoid, &mut rng).unwrap();
        let (grad, dx) = mlp.backward(&[0.1, 0.2, 0.3, 0.4], &[0.0; 3]).unwrap();
        assert!(flatten(&grad).iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences_for_every_activation() {
        for (seed, act) in [Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::Identity]
            .into_iter()
            .enumerate()
        {
            let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
            let mlp = Mlp::glorot(&[3, 5, 4, 2], act, act, &mut rng).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let objective = |flat: &[f64]| {
                let mut m = mlp.clone();
                crate::nn::assign(&mut m, flat).unwrap();
                let y = m.apply(&x).unwrap();
                let value = crate::linalg::dot(&y, &w);
                let (g, _) = m.backward(&x, &w).unwrap();
                (value, flatten(&g))
            };
            let err = grad_check(objective, &flatten(&mlp), 1e-5).unwrap();
            assert!(err < 1e-4, "{act:?}: {err}");
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mlp = Mlp::glorot(&[4, 6, 3], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let w = [0.3, -0.7, 1.1];
        let x0 = [0.2, -0.4, 0.9, 0.05];
        let err = grad_check(
            |x: &[f64]| {
                let y = mlp.apply(x).unwrap();
                let (_, dx) = mlp.backward(x, &w).unwrap();
                (crate::linalg::dot(&y, &w), dx)
            },
            &x0,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
