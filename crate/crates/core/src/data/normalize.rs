use std::str::FromStr;

use crate::data::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormalizeMode {
    /// Pixels in `[0, 1]`; loaders already produce this range.
    UnitRange,
    /// Zero mean and unit std per channel, using training-split statistics.
    PerChannelStandard,
}

impl FromStr for NormalizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit_range" => Ok(NormalizeMode::UnitRange),
            "per_channel_standard" => Ok(NormalizeMode::PerChannelStandard),
            _ => Err(Error::invalid(format!(
                "unknown normalization {s:?} (unit_range or per_channel_standard)"
            ))),
        }
    }
}

/// Per-channel mean and population standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn of(ds: &Dataset) -> Result<Self> {
        let (c, h, w) = ds.image_shape();
        let hw = h * w;
        let count = (ds.len() * hw) as f64;
        let data = ds.images.data();
        let mut mean = vec![0.0; c];
        for (i, chunk) in data.chunks_exact(hw).enumerate() {
            mean[i % c] += chunk.iter().sum::<f64>();
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; c];
        for (i, chunk) in data.chunks_exact(hw).enumerate() {
            let m = mean[i % c];
            var[i % c] += chunk.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
        let std: Vec<f64> = var.iter().map(|v| (v / count).sqrt()).collect();
        if let Some(ch) = std.iter().position(|&s| s == 0.0) {
            return Err(Error::invalid(format!("channel {ch} has zero standard deviation")));
        }
        Ok(ChannelStats { mean, std })
    }

    pub fn apply(&self, ds: &Dataset) -> Dataset {
        let (c, h, w) = ds.image_shape();
        let hw = h * w;
        let mut out = ds.clone();
        for (i, chunk) in out.images.data_mut().chunks_exact_mut(hw).enumerate() {
            let (m, s) = (self.mean[i % c], self.std[i % c]);
            chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        out
    }
}

/// Normalizes a train/test pair. Statistics always come from `train`.
pub fn normalize(train: &Dataset, test: &Dataset, mode: NormalizeMode) -> Result<(Dataset, Dataset)> {
    if train.image_shape().0 != test.image_shape().0 {
        return Err(Error::invalid("train and test splits have different channel counts"));
    }
    match mode {
        NormalizeMode::UnitRange => {
            let data = train.images.data();
            let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo >= 0.0 && hi <= 1.0 {
                return Ok((train.clone(), test.clone()));
            }
            if hi == lo {
                return Err(Error::invalid("constant training images cannot be rescaled"));
            }
            let rescale = |ds: &Dataset| {
                let mut out = ds.clone();
                for v in out.images.data_mut() {
                    *v = ((*v - lo) / (hi - lo)).clamp(0.0, 1.0);
                }
                out
            };
            Ok((rescale(train), rescale(test)))
        }
        NormalizeMode::PerChannelStandard => {
            let stats = ChannelStats::of(train)?;
            Ok((stats.apply(train), stats.apply(test)))
        }
    }
}
