use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a window query restricts the data it looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowStrategy {
    /// Post-processing: search everything, drop out-of-window records after
    /// fetching them.
    Pp,
    /// Temporal partitioning: a fresh search in every partition that
    /// intersects the window.
    Tp,
    /// Skip runs outside the window and filter by timestamp before fetching,
    /// carrying the best-so-far across runs.
    Btp,
}

impl FromStr for WindowStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pp" => Ok(WindowStrategy::Pp),
            "tp" => Ok(WindowStrategy::Tp),
            "btp" => Ok(WindowStrategy::Btp),
            other => Err(Error::Config(format!("unknown window strategy {other:?}"))),
        }
    }
}

impl fmt::Display for WindowStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowStrategy::Pp => "pp",
            WindowStrategy::Tp => "tp",
            WindowStrategy::Btp => "btp",
        })
    }
}

/// The `window` most recent insertions, searched with `strategy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window: u64,
    pub strategy: WindowStrategy,
}

impl WindowSpec {
    pub fn new(window: u64, strategy: WindowStrategy) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        Ok(Self { window, strategy })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        for s in [WindowStrategy::Pp, WindowStrategy::Tp, WindowStrategy::Btp] {
            assert_eq!(s.to_string().parse::<WindowStrategy>().unwrap(), s);
        }
        assert!("BTP".parse::<WindowStrategy>().is_ok());
        assert!("x".parse::<WindowStrategy>().is_err());
        assert!(WindowSpec::new(0, WindowStrategy::Pp).is_err());
    }
}
