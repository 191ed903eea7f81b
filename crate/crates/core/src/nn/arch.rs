//! Layer descriptors and shape bookkeeping.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel-major tensor shape of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    /// A flat vector shape, `(len, 1, 1)`.
    pub const fn flat(len: usize) -> Self {
        Self::new(len, 1, 1)
    }

    pub const fn volume(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_flat(&self) -> bool {
        self.height == 1 && self.width == 1
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// One layer of a feed-forward network.
///
/// Convolutions always use a 3x3 kernel, stride 1 and zero padding 1, so they
/// preserve the spatial size. Max pooling is 2x2 with stride 2 and floors odd
/// sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layer {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
    },
    MaxPool2,
    Relu,
    Flatten,
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
}

pub const KERNEL: usize = 3;

impl Layer {
    pub fn param_count(&self) -> usize {
        match *self {
            Layer::Conv2d {
                in_channels,
                out_channels,
            } => out_channels * in_channels * KERNEL * KERNEL + out_channels,
            Layer::Dense { in_dim, out_dim } => out_dim * in_dim + out_dim,
            _ => 0,
        }
    }

    /// Number of weights (excluding biases), which precede the biases in the
    /// flattened parameter layout.
    pub fn weight_count(&self) -> usize {
        match *self {
            Layer::Conv2d {
                in_channels,
                out_channels,
            } => out_channels * in_channels * KERNEL * KERNEL,
            Layer::Dense { in_dim, out_dim } => out_dim * in_dim,
            _ => 0,
        }
    }

    /// Fan-in used by the initializer.
    pub fn fan_in(&self) -> usize {
        match *self {
            Layer::Conv2d { in_channels, .. } => in_channels * KERNEL * KERNEL,
            Layer::Dense { in_dim, .. } => in_dim,
            _ => 0,
        }
    }

    fn output_shape(&self, input: Shape) -> Result<Shape> {
        match *self {
            Layer::Conv2d {
                in_channels,
                out_channels,
            } => {
                if input.channels != in_channels {
                    return Err(Error::Config(format!(
                        "conv expects {in_channels} input channels, got shape {input}"
                    )));
                }
                Ok(Shape::new(out_channels, input.height, input.width))
            }
            Layer::MaxPool2 => {
                if input.height < 2 || input.width < 2 {
                    return Err(Error::Config(format!("cannot 2x2-pool shape {input}")));
                }
                Ok(Shape::new(input.channels, input.height / 2, input.width / 2))
            }
            Layer::Relu => Ok(input),
            Layer::Flatten => Ok(Shape::flat(input.volume())),
            Layer::Dense { in_dim, out_dim } => {
                if !input.is_flat() || input.channels != in_dim {
                    return Err(Error::Config(format!(
                        "dense expects a flat input of {in_dim}, got shape {input}"
                    )));
                }
                Ok(Shape::flat(out_dim))
            }
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Layer::Conv2d {
                in_channels,
                out_channels,
            } => write!(f, "conv:{in_channels}:{out_channels}"),
            Layer::MaxPool2 => f.write_str("maxpool"),
            Layer::Relu => f.write_str("relu"),
            Layer::Flatten => f.write_str("flatten"),
            Layer::Dense { in_dim, out_dim } => write!(f, "dense:{in_dim}:{out_dim}"),
        }
    }
}

/// Identity of an architecture, used to reject parameter vectors that were
/// produced for a different network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ArchId(pub u64);

/// A validated feed-forward architecture ending in a softmax over
/// `class_count` outputs. The softmax is implicit and not listed as a layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelArch {
    input: Shape,
    layers: Vec<Layer>,
    shapes: Vec<Shape>,
}

impl ModelArch {
    pub fn new(input: Shape, layers: Vec<Layer>) -> Result<Self> {
        if input.volume() == 0 {
            return Err(Error::Config("input shape has zero volume".into()));
        }
        let mut shapes = Vec::with_capacity(layers.len() + 1);
        shapes.push(input);
        for layer in &layers {
            let next = layer.output_shape(*shapes.last().unwrap())?;
            shapes.push(next);
        }
        let out = *shapes.last().unwrap();
        if !out.is_flat() || out.channels < 2 {
            return Err(Error::Config(format!(
                "network must end in a flat layer with at least 2 classes, got {out}"
            )));
        }
        Ok(Self {
            input,
            layers,
            shapes,
        })
    }

    /// Fully connected network with ReLU between dense layers.
    pub fn mlp(input: Shape, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut layers = Vec::new();
        if !input.is_flat() {
            layers.push(Layer::Flatten);
        }
        let mut width = input.volume();
        for &h in hidden {
            layers.push(Layer::Dense {
                in_dim: width,
                out_dim: h,
            });
            layers.push(Layer::Relu);
            width = h;
        }
        layers.push(Layer::Dense {
            in_dim: width,
            out_dim: classes,
        });
        Self::new(input, layers)
    }

    /// Two conv/pool stages followed by two dense layers. With
    /// `(32, 64, 128)` on a 1x28x28 input this is the MNIST network:
    /// conv(1,32) → pool → conv(32,64) → pool → dense(64·7·7,128) → dense(128,10).
    pub fn conv_net(
        input: Shape,
        channels: (usize, usize),
        hidden: usize,
        classes: usize,
    ) -> Result<Self> {
        let (c1, c2) = channels;
        let pooled = Shape::new(c2, input.height / 2 / 2, input.width / 2 / 2);
        Self::new(
            input,
            vec![
                Layer::Conv2d {
                    in_channels: input.channels,
                    out_channels: c1,
                },
                Layer::Relu,
                Layer::MaxPool2,
                Layer::Conv2d {
                    in_channels: c1,
                    out_channels: c2,
                },
                Layer::Relu,
                Layer::MaxPool2,
                Layer::Flatten,
                Layer::Dense {
                    in_dim: pooled.volume(),
                    out_dim: hidden,
                },
                Layer::Relu,
                Layer::Dense {
                    in_dim: hidden,
                    out_dim: classes,
                },
            ],
        )
    }

    pub fn input(&self) -> Shape {
        self.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Shape entering layer `i`; index `layers().len()` is the output shape.
    pub fn shape_at(&self, i: usize) -> Shape {
        self.shapes[i]
    }

    pub fn class_count(&self) -> usize {
        self.shapes.last().unwrap().channels
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Start offset of each layer's parameters in the flattened vector.
    pub fn param_offsets(&self) -> Vec<usize> {
        let mut offset = 0;
        self.layers
            .iter()
            .map(|l| {
                let start = offset;
                offset += l.param_count();
                start
            })
            .collect()
    }

    /// FNV-1a hash of the textual descriptor.
    pub fn id(&self) -> ArchId {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_string().bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        ArchId(h)
    }
}

/// Textual form: `input=CxHxW;layer;layer;...`, e.g.
/// `input=1x8x8;flatten;dense:64:32;relu;dense:32:10`.
impl fmt::Display for ModelArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "input={}", self.input)?;
        for l in &self.layers {
            write!(f, ";{l}")?;
        }
        Ok(())
    }
}

impl FromStr for ModelArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |what: &str| Error::Config(format!("bad architecture descriptor `{s}`: {what}"));
        let mut parts = s.split(';');
        let input = parts
            .next()
            .and_then(|p| p.strip_prefix("input="))
            .ok_or_else(|| bad("missing input="))?;
        let dims: Vec<usize> = input
            .split('x')
            .map(|d| d.parse().map_err(|_| bad("input dims")))
            .collect::<Result<_>>()?;
        let [c, h, w] = dims[..] else {
            return Err(bad("input must be CxHxW"));
        };
        let mut layers = Vec::new();
        for p in parts {
            let fields: Vec<&str> = p.split(':').collect();
            let num = |i: usize| -> Result<usize> {
                fields
                    .get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(p))
            };
            let layer = match fields[0] {
                "conv" => Layer::Conv2d {
                    in_channels: num(1)?,
                    out_channels: num(2)?,
                },
                "dense" => Layer::Dense {
                    in_dim: num(1)?,
                    out_dim: num(2)?,
                },
                "maxpool" => Layer::MaxPool2,
                "relu" => Layer::Relu,
                "flatten" => Layer::Flatten,
                _ => return Err(bad(p)),
            };
            layers.push(layer);
        }
        ModelArch::new(Shape::new(c, h, w), layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_dense_layer_counts_weights_and_biases() {
        let arch = ModelArch::mlp(Shape::flat(4), &[], 3).unwrap();
        assert_eq!(arch.param_count(), 4 * 3 + 3);
    }

    #[test]
    fn mnist_conv_net_parameter_count() {
        let arch = ModelArch::conv_net(Shape::new(1, 28, 28), (32, 64), 128, 10).unwrap();
        let expected = (32 * 9 + 32) + (64 * 32 * 9 + 64) + (128 * 64 * 7 * 7 + 128) + (10 * 128 + 10);
        assert_eq!(arch.param_count(), expected);
        assert_eq!(arch.class_count(), 10);
    }

    #[test]
    fn inconsistent_dims_are_rejected() {
        let err = ModelArch::new(
            Shape::flat(4),
            vec![
                Layer::Dense { in_dim: 4, out_dim: 5 },
                Layer::Dense { in_dim: 6, out_dim: 2 },
            ],
        );
        assert!(matches!(err, Err(Error::Config(_))));
        // dense directly on an image needs a flatten first
        let err = ModelArch::new(Shape::new(1, 2, 2), vec![Layer::Dense { in_dim: 4, out_dim: 2 }]);
        assert!(err.is_err());
        // single-class output
        assert!(ModelArch::mlp(Shape::flat(4), &[], 1).is_err());
    }

    #[test]
    fn descriptor_round_trips() {
        let arch = ModelArch::conv_net(Shape::new(1, 8, 8), (2, 3), 5, 4).unwrap();
        let text = arch.to_string();
        let parsed: ModelArch = text.parse().unwrap();
        assert_eq!(parsed, arch);
        assert_eq!(parsed.id(), arch.id());
        assert_ne!(arch.id(), ModelArch::mlp(Shape::new(1, 8, 8), &[5], 4).unwrap().id());
    }
}
