use histocad_core::Scalar;
use rand_chacha::ChaCha8Rng;

use crate::error::MavitError;
use crate::graph::{ConvGeometry, Graph, Padding, Var};
use crate::params::{uniform, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: ParamId,
    bias: ParamId,
    geo: ConvGeometry,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        geo: ConvGeometry,
    ) -> Self {
        let k = geo.kernel;
        let bound = (6.0 / (k * k * cin) as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(rng, vec![k, k, cin, cout], bound));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![cout]));
        Self { weight, bias, geo }
    }

    pub fn same<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        dilation: usize,
    ) -> Self {
        Self::new(store, rng, name, cin, cout, ConvGeometry::new(kernel, 1, dilation, Padding::Same))
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, MavitError> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv2d(x, w, b, self.geo)
    }
}

/// Affine map over the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize) -> Self {
        let bound = (6.0 / (cin + cout) as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(rng, vec![cin, cout], bound));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![cout]));
        Self { weight, bias }
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, MavitError> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }
}

/// Layer normalization over the last axis (channels), independent of batch.
#[derive(Debug, Clone)]
pub struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::filled(vec![channels], T::one()));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(vec![channels]));
        Self { gamma, beta }
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, MavitError> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, NORM_EPS)
    }
}
