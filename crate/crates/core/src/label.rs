use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Image origin: camera photograph, rendered graphic, or network-generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OriginLabel {
    Npi,
    Cgg,
    Dgi,
}

impl OriginLabel {
    pub const ALL: [OriginLabel; 3] = [OriginLabel::Npi, OriginLabel::Cgg, OriginLabel::Dgi];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(Error::LabelOutOfRange(i))
    }

    /// Lower-case directory / CSV name.
    pub fn name(self) -> &'static str {
        match self {
            OriginLabel::Npi => "npi",
            OriginLabel::Cgg => "cgg",
            OriginLabel::Dgi => "dgi",
        }
    }
}

impl fmt::Display for OriginLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OriginLabel::Npi => "NPI",
            OriginLabel::Cgg => "CGG",
            OriginLabel::Dgi => "DGI",
        })
    }
}

impl FromStr for OriginLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "npi" => Ok(OriginLabel::Npi),
            "cgg" => Ok(OriginLabel::Cgg),
            "dgi" => Ok(OriginLabel::Dgi),
            other => Err(Error::InvalidArgument(format!("unknown origin label `{other}`"))),
        }
    }
}
