//! Feature pyramid over the three backbone taps, extended to five levels.

use rand_chacha::ChaCha8Rng;

use crate::layers::Conv;
use crate::tape::{Tape, Var};
use crate::{ParamStore, Scalar};

pub const NUM_LEVELS: usize = 5;

/// Strides of P3..P7.
pub const LEVEL_STRIDES: [usize; NUM_LEVELS] = [8, 16, 32, 64, 128];

#[derive(Debug, Clone)]
pub struct Fpn {
    lateral: [Conv; 3],
    smooth: [Conv; 3],
    down: [Conv; 2],
    pub channels: usize,
}

impl Fpn {
    pub fn build<T: Scalar>(
        tap_channels: [usize; 3],
        channels: usize,
        prefix: &str,
        params: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let lateral = std::array::from_fn(|i| {
            Conv::new(params, &format!("{prefix}.lateral{i}"), tap_channels[i], channels, 1, 1, 1, rng)
        });
        let smooth = std::array::from_fn(|i| {
            Conv::new(params, &format!("{prefix}.smooth{i}"), channels, channels, 3, 1, 1, rng)
        });
        let down = std::array::from_fn(|i| {
            Conv::new(params, &format!("{prefix}.down{}", i + 6), channels, channels, 3, 2, 1, rng)
        });
        Self {
            lateral,
            smooth,
            down,
            channels,
        }
    }

    /// Builds P3..P7 from the C3..C5 taps. Coarser levels are upsampled to
    /// the exact size of the finer lateral before adding.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, taps: [Var; 3]) -> [Var; NUM_LEVELS] {
        let lat: Vec<Var> = (0..3).map(|i| self.lateral[i].forward(tape, taps[i])).collect();
        let mut merged = [lat[2]; 3];
        for i in (0..2).rev() {
            let (_, h, w) = tape.value(lat[i]).chw();
            let up = tape.resize_nearest(merged[i + 1], h, w);
            merged[i] = tape.add(lat[i], up);
        }
        let mut out = [taps[0]; NUM_LEVELS];
        for i in 0..3 {
            let s = self.smooth[i].forward(tape, merged[i]);
            out[i] = tape.relu(s);
        }
        out[3] = self.down[0].forward(tape, out[2]);
        out[4] = self.down[1].forward(tape, out[3]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;
    use rand::SeedableRng;

    #[test]
    fn odd_sizes_are_aligned() {
        let mut params = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fpn = Fpn::build([4, 6, 8], 5, "trunk.fpn", &mut params, &mut rng);
        let mut tape = Tape::new(&params);
        let c3 = tape.leaf(Tensor::full(&[4, 9, 13], 0.5), false);
        let c4 = tape.leaf(Tensor::full(&[6, 5, 7], 0.5), false);
        let c5 = tape.leaf(Tensor::full(&[8, 3, 4], 0.5), false);
        let p = fpn.forward(&mut tape, [c3, c4, c5]);
        let shapes: Vec<Vec<usize>> = p.iter().map(|&v| tape.value(v).shape().to_vec()).collect();
        assert_eq!(
            shapes,
            vec![vec![5, 9, 13], vec![5, 5, 7], vec![5, 3, 4], vec![5, 2, 2], vec![5, 1, 1]]
        );
    }
}
