use crate::error::{Error, Result};
use crate::layers::conv_output_size;

/// Output channels of the thirteen 3×3 convolutions of VGG-16.
pub const VGG16_CHANNELS: [usize; 13] = [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512];

/// 1-based layers that downsample with stride 2, one at the end of each of the
/// first four VGG blocks in place of the pooling layers.
pub const DOWNSAMPLE_LAYERS: [usize; 4] = [2, 4, 7, 10];

pub const KERNEL: usize = 3;
pub const PADDING: usize = 1;

/// Plain stack of 3×3 conv + BN + ReLU layers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneSpec {
    pub input_channels: usize,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
}

impl BackboneSpec {
    /// The thirteen-layer VGG-16 convolution stack, with strided
    /// convolutions instead of pooling.
    pub fn vgg16(input_channels: usize) -> Self {
        Self::vgg(input_channels, 13).expect("13 is a valid depth")
    }

    /// The first `depth` layers of the VGG-16 stack, `1 ≤ depth ≤ 13`.
    pub fn vgg(input_channels: usize, depth: usize) -> Result<Self> {
        if !(1..=13).contains(&depth) {
            return Err(Error::invalid(format!("VGG depth must be in 1..=13, got {depth}")));
        }
        Ok(Self::plan(input_channels, depth))
    }

    /// A `depth`-layer plain stack: the VGG plan continued with 512-channel
    /// layers, downsampling at the same four positions.
    pub fn deep(input_channels: usize, depth: usize) -> Self {
        Self::plan(input_channels, depth)
    }

    fn plan(input_channels: usize, depth: usize) -> Self {
        let channels = (0..depth)
            .map(|i| VGG16_CHANNELS.get(i).copied().unwrap_or(512))
            .collect();
        let strides = (1..=depth)
            .map(|l| if DOWNSAMPLE_LAYERS.contains(&l) { 2 } else { 1 })
            .collect();
        BackboneSpec {
            input_channels,
            channels,
            strides,
        }
    }

    /// Divides every width by `divisor` (at least one channel per layer).
    pub fn narrowed(mut self, divisor: usize) -> Self {
        assert!(divisor >= 1, "width divisor must be >= 1");
        for c in &mut self.channels {
            *c = (*c / divisor).max(1);
        }
        self
    }

    pub fn depth(&self) -> usize {
        self.channels.len()
    }

    /// Input channel count of 1-based layer `layer`.
    pub fn in_channels(&self, layer: usize) -> usize {
        if layer == 1 {
            self.input_channels
        } else {
            self.channels[layer - 2]
        }
    }

    /// Output channels of 1-based layer `layer`.
    pub fn out_channels(&self, layer: usize) -> usize {
        self.channels[layer - 1]
    }

    /// Spatial extent after every layer, starting with the input size.
    pub fn spatial_trace(&self, input: usize) -> Result<Vec<usize>> {
        let mut trace = vec![input];
        let mut size = input;
        for (i, &s) in self.strides.iter().enumerate() {
            size = conv_output_size(size, KERNEL, s, PADDING)
                .ok_or_else(|| Error::invalid(format!("layer {} leaves no output for input {input}", i + 1)))?;
            trace.push(size);
        }
        Ok(trace)
    }

    /// Weights plus biases of the convolutions, and gamma/beta of the BN layers.
    pub fn parameter_count(&self) -> usize {
        (1..=self.depth())
            .map(|l| {
                let (i, o) = (self.in_channels(l), self.out_channels(l));
                o * i * KERNEL * KERNEL + o + 2 * o
            })
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return Err(Error::invalid("backbone needs one stride per layer and at least one layer"));
        }
        if self.input_channels == 0 || self.channels.contains(&0) || self.strides.contains(&0) {
            return Err(Error::invalid("channels and strides must be >= 1"));
        }
        Ok(())
    }
}
