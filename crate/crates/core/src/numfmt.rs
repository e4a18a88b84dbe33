//! Serde adapters that write `f64` values as decimal strings with 17
//! significant digits, which round-trips every finite double bit-exactly.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serializer};

pub fn format(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse(s: &str) -> Result<f64, std::num::ParseFloatError> {
    s.parse()
}

pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(values.iter().map(|v| format(*v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter()
            .map(|s| parse(s).map_err(|e| D::Error::custom(format!("bad number `{s}`: {e}"))))
            .collect()
    }
}

pub mod opt {
    use super::*;

    pub fn serialize<S: Serializer>(value: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(v) => s.serialize_some(&format(*v)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|s| parse(&s).map_err(|e| D::Error::custom(format!("bad number `{s}`: {e}"))))
            .transpose()
    }
}
