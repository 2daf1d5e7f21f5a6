use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::interflow::attention::AttentionMode;

/// Experiment method: the baseline, one of the ten interflow rows, or an
/// extra-deep plain stack with soft scalar attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Normal,
    S(u8),
    Deep { depth: usize, branches: usize },
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Normal => f.write_str("Normal"),
            Method::S(k) => write!(f, "S{k}"),
            Method::Deep { depth, branches } => write!(f, "deep:{depth}:{branches}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("unknown method {s:?} (expected Normal, S0..S9 or deep:<depth>:<branches>)"));
        if s.eq_ignore_ascii_case("normal") {
            return Ok(Method::Normal);
        }
        if let Some(rest) = s.strip_prefix('S').or_else(|| s.strip_prefix('s')) {
            return match rest.parse::<u8>() {
                Ok(k) if k <= 9 && !rest.starts_with('+') => Ok(Method::S(k)),
                _ => Err(bad()),
            };
        }
        if let Some(rest) = s.strip_prefix("deep:") {
            let (d, b) = rest.split_once(':').ok_or_else(bad)?;
            let depth = d.parse().map_err(|_| bad())?;
            let branches = b.parse().map_err(|_| bad())?;
            return Ok(Method::Deep { depth, branches });
        }
        Err(bad())
    }
}

/// One row of the method table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MethodConfig {
    pub name: String,
    pub interflow: bool,
    /// Zero for the baseline.
    pub branches: usize,
    /// Whether every class in a branch shares one fuse weight.
    pub shared_per_class: bool,
    /// Whether manual initial weights are supplied.
    pub initialization: bool,
    pub learned: bool,
}

impl MethodConfig {
    pub fn attention_mode(&self) -> Option<AttentionMode> {
        if !self.interflow {
            None
        } else if !self.learned {
            Some(AttentionMode::Hard)
        } else if self.shared_per_class {
            Some(AttentionMode::SoftScalar)
        } else {
            Some(AttentionMode::SoftPerClass)
        }
    }

    /// Manual per-branch weights when `initialization` is set.
    pub fn manual_weights(&self) -> Option<Vec<f64>> {
        self.initialization.then(|| initial_weights(self.branches))
    }
}

/// Hand-picked branch weights: increasing towards the deeper stages.
pub fn initial_weights(branches: usize) -> Vec<f64> {
    match branches {
        4 => vec![0.1, 0.2, 0.3, 0.4],
        7 => vec![0.1, 0.1, 0.1, 0.1, 0.2, 0.2, 0.2],
        n => vec![1.0 / n as f64; n],
    }
}

pub fn resolve_method_config(method: Method) -> Result<MethodConfig> {
    let row = |branches, shared, init, learned| MethodConfig {
        name: method.to_string(),
        interflow: true,
        branches,
        shared_per_class: shared,
        initialization: init,
        learned,
    };
    Ok(match method {
        Method::Normal => MethodConfig {
            name: "Normal".into(),
            interflow: false,
            branches: 0,
            shared_per_class: false,
            initialization: false,
            learned: false,
        },
        Method::S(k) if k <= 9 => {
            let branches = if k < 5 { 4 } else { 7 };
            match k % 5 {
                0 => row(branches, true, true, false),
                1 => row(branches, true, false, true),
                2 => row(branches, true, true, true),
                3 => row(branches, false, false, true),
                _ => row(branches, false, true, true),
            }
        }
        Method::S(k) => return Err(Error::invalid(format!("unknown method S{k}"))),
        Method::Deep { branches, .. } => row(branches, true, false, true),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_names() {
        assert_eq!("Normal".parse::<Method>().unwrap(), Method::Normal);
        assert_eq!("S7".parse::<Method>().unwrap(), Method::S(7));
        assert_eq!(
            "deep:30:4".parse::<Method>().unwrap(),
            Method::Deep { depth: 30, branches: 4 }
        );
        for bad in ["S12", "S", "X1", "deep:30", "deep:a:4", "S+1"] {
            assert!(bad.parse::<Method>().is_err(), "{bad}");
        }
    }

    #[test]
    fn modes_follow_columns() {
        let mode = |k| resolve_method_config(Method::S(k)).unwrap().attention_mode();
        assert_eq!(mode(0), Some(AttentionMode::Hard));
        assert_eq!(mode(5), Some(AttentionMode::Hard));
        assert_eq!(mode(1), Some(AttentionMode::SoftScalar));
        assert_eq!(mode(3), Some(AttentionMode::SoftPerClass));
        assert_eq!(resolve_method_config(Method::Normal).unwrap().attention_mode(), None);
    }

    #[test]
    fn display_round_trips() {
        for m in [Method::Normal, Method::S(0), Method::S(9), Method::Deep { depth: 40, branches: 5 }] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
    }
}
