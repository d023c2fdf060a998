use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The two V2V service slices of the cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceId {
    /// Traffic safety and efficiency service.
    Safety,
    /// Autonomous-driving related service.
    Autonomous,
}

impl SliceId {
    pub const ALL: [SliceId; 2] = [SliceId::Safety, SliceId::Autonomous];
    pub const COUNT: usize = 2;

    pub fn index(self) -> usize {
        match self {
            SliceId::Safety => 0,
            SliceId::Autonomous => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SliceId::Safety => "safety",
            SliceId::Autonomous => "autonomous",
        }
    }
}

impl fmt::Display for SliceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SliceId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "safety" => Ok(SliceId::Safety),
            "autonomous" => Ok(SliceId::Autonomous),
            other => Err(Error::Config(format!("unknown slice id `{other}`"))),
        }
    }
}
