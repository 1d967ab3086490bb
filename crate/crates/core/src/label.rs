use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::error::Error;

/// Binary ground truth. `Pneumonia` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Normal = 0,
    Pneumonia = 1,
}

impl Label {
    pub fn from_bit(positive: bool) -> Self {
        if positive {
            Label::Pneumonia
        } else {
            Label::Normal
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Pneumonia
    }

    pub fn flipped(self) -> Self {
        Label::from_bit(!self.is_positive())
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Normal => "NORMAL",
            Label::Pneumonia => "PNEUMONIA",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = Error;

    /// Accepts `0`/`1` and the class names, case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "0" => Ok(Label::Normal),
            "1" => Ok(Label::Pneumonia),
            t if t.eq_ignore_ascii_case("normal") => Ok(Label::Normal),
            t if t.eq_ignore_ascii_case("pneumonia") => Ok(Label::Pneumonia),
            other => Err(Error::Domain(format!("unknown label {other:?}"))),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.as_u8())
    }
}
