//! Convolutional backbones producing stride-8/16/32 feature taps.

use rand_chacha::ChaCha8Rng;

use crate::config::BackboneName;
use crate::layers::{Act, Conv};
use crate::tape::{Tape, Var};
use crate::{ParamStore, Scalar};

/// Strides of the three feature taps.
pub const TAP_STRIDES: [usize; 3] = [8, 16, 32];

const TINY_CHANNELS: [usize; 5] = [16, 24, 32, 48, 64];

/// Inverted residual settings: expansion, output channels, repeats, first stride.
const MBV2_SETTINGS: [(usize, usize, usize, usize); 7] = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
];
const MBV2_STEM: usize = 32;
/// Settings rows after which a tap is taken.
const MBV2_TAP_ROWS: [usize; 3] = [2, 4, 6];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackboneSpec {
    pub name: BackboneName,
    pub width: f64,
}

fn scaled(c: usize, width: f64) -> usize {
    ((c as f64 * width).round() as usize).max(1)
}

/// Rounds to the nearest multiple of 8, never dropping below 90% of `v`.
fn make_divisible(v: f64) -> usize {
    let d = 8.0;
    let mut out = ((v + d / 2.0) / d).floor() * d;
    out = out.max(d);
    if out < 0.9 * v {
        out += d;
    }
    out as usize
}

impl BackboneSpec {
    /// Output channels of each tap.
    pub fn tap_channels(&self) -> [usize; 3] {
        match self.name {
            BackboneName::TinyConv => {
                let c = TINY_CHANNELS.map(|c| scaled(c, self.width));
                [c[2], c[3], c[4]]
            }
            BackboneName::MobilenetV2Style => {
                MBV2_TAP_ROWS.map(|r| make_divisible(MBV2_SETTINGS[r].1 as f64 * self.width))
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Block {
    Plain { conv: Conv, act: Act },
    InvertedResidual {
        expand: Option<Conv>,
        depthwise: Conv,
        project: Conv,
        residual: bool,
    },
}

impl Block {
    fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Var {
        match self {
            Block::Plain { conv, act } => {
                let y = conv.forward(tape, x);
                act.apply(tape, y)
            }
            Block::InvertedResidual {
                expand,
                depthwise,
                project,
                residual,
            } => {
                let mut h = x;
                if let Some(e) = expand {
                    h = e.forward(tape, h);
                    h = tape.relu6(h);
                }
                h = depthwise.forward(tape, h);
                h = tape.relu6(h);
                h = project.forward(tape, h);
                if *residual {
                    tape.add(h, x)
                } else {
                    h
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub spec: BackboneSpec,
    blocks: Vec<Block>,
    /// Block indices whose outputs are tapped.
    taps: [usize; 3],
}

impl Backbone {
    /// Registers parameters under `prefix` and returns the backbone.
    pub fn build<T: Scalar>(
        spec: BackboneSpec,
        prefix: &str,
        params: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut blocks = Vec::new();
        let mut taps = [0; 3];
        match spec.name {
            BackboneName::TinyConv => {
                let mut cin = 3;
                for (i, &c) in TINY_CHANNELS.iter().enumerate() {
                    let cout = scaled(c, spec.width);
                    let conv = Conv::new(params, &format!("{prefix}.conv{i}"), cin, cout, 3, 2, 1, rng);
                    blocks.push(Block::Plain { conv, act: Act::Relu });
                    cin = cout;
                }
                taps = [2, 3, 4];
            }
            BackboneName::MobilenetV2Style => {
                let stem = make_divisible(MBV2_STEM as f64 * spec.width);
                let conv = Conv::new(params, &format!("{prefix}.stem"), 3, stem, 3, 2, 1, rng);
                blocks.push(Block::Plain { conv, act: Act::Relu6 });
                let mut cin = stem;
                for (row, &(t, c, n, s)) in MBV2_SETTINGS.iter().enumerate() {
                    let cout = make_divisible(c as f64 * spec.width);
                    for i in 0..n {
                        let stride = if i == 0 { s } else { 1 };
                        let hidden = cin * t;
                        let name = format!("{prefix}.block{}", blocks.len());
                        let expand = (t != 1)
                            .then(|| Conv::new(params, &format!("{name}.expand"), cin, hidden, 1, 1, 1, rng));
                        let depthwise =
                            Conv::new(params, &format!("{name}.depthwise"), hidden, hidden, 3, stride, hidden, rng);
                        let project = Conv::new(params, &format!("{name}.project"), hidden, cout, 1, 1, 1, rng);
                        blocks.push(Block::InvertedResidual {
                            expand,
                            depthwise,
                            project,
                            residual: stride == 1 && cin == cout,
                        });
                        cin = cout;
                    }
                    if let Some(k) = MBV2_TAP_ROWS.iter().position(|&r| r == row) {
                        taps[k] = blocks.len() - 1;
                    }
                }
            }
        }
        Self { spec, blocks, taps }
    }

    pub fn tap_channels(&self) -> [usize; 3] {
        self.spec.tap_channels()
    }

    /// Runs the backbone on a `[3, H, W]` input, returning the three taps.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> [Var; 3] {
        let mut out = [x; 3];
        let mut h = x;
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.forward(tape, h);
            if let Some(k) = self.taps.iter().position(|&t| t == i) {
                out[k] = h;
            }
        }
        out
    }
}
