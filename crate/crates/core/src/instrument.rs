use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Instrument classes of the procedural asset bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Instrument {
    Cello,
    Doublebass,
    Guitar,
    Saxophone,
    Violin,
}

impl Instrument {
    pub const ALL: [Instrument; 5] = [
        Instrument::Cello,
        Instrument::Doublebass,
        Instrument::Guitar,
        Instrument::Saxophone,
        Instrument::Violin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Instrument::Cello => "cello",
            Instrument::Doublebass => "doublebass",
            Instrument::Guitar => "guitar",
            Instrument::Saxophone => "saxophone",
            Instrument::Violin => "violin",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Instrument {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Instrument::ALL
            .into_iter()
            .find(|i| i.name() == s)
            .ok_or_else(|| Error::UnknownInstrument(s.to_string()))
    }
}
