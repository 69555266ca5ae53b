//! Parameterised building blocks shared by the network modules.

use rand_chacha::ChaCha8Rng;

use crate::tape::{ConvSpec, Tape, Var};
use crate::{ParamId, ParamStore, Scalar};

/// Biased 2-D convolution with `same` padding.
#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: ConvSpec,
    pub cin: usize,
    pub cout: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        params: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self::with_gain(params, name, cin, cout, kernel, stride, groups, 1.0, rng)
    }

    /// Like [`Conv::new`] with the init range scaled by `gain`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_gain<T: Scalar>(
        params: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let (weight, bias) = params.add_conv_scaled(name, cin, cout, kernel, groups, gain, rng);
        let mut spec = ConvSpec::same(kernel, stride);
        spec.groups = groups;
        Self {
            weight,
            bias,
            spec,
            cin,
            cout,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Var {
        tape.conv(x, self.weight, Some(self.bias), self.spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Act {
    None,
    Relu,
    Relu6,
    Tanh,
}

impl Act {
    pub fn apply<T: Scalar>(self, tape: &mut Tape<'_, T>, x: Var) -> Var {
        match self {
            Act::None => x,
            Act::Relu => tape.relu(x),
            Act::Relu6 => tape.relu6(x),
            Act::Tanh => tape.tanh(x),
        }
    }
}
