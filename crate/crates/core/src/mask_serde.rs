//! Serde adapter writing `u128` label masks as hex strings, since JSON
//! numbers cannot hold them.

use serde::{de::Error, Deserialize, Deserializer, Serializer};

pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{v:#x}"))
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
    let text = String::deserialize(d)?;
    let hex = text.strip_prefix("0x").ok_or_else(|| D::Error::custom(format!("expected 0x-prefixed hex, got {text:?}")))?;
    u128::from_str_radix(hex, 16).map_err(D::Error::custom)
}

#[cfg(test)]
mod tests {
    #[derive(serde::Serialize, serde::Deserialize, PartialEq, Debug)]
    struct W(#[serde(with = "super")] u128);

    #[test]
    fn round_trips_through_json() {
        for v in [0u128, 1, u128::MAX, 1 << 127 | 5] {
            let text = serde_json::to_string(&W(v)).unwrap();
            assert_eq!(serde_json::from_str::<W>(&text).unwrap(), W(v));
        }
        assert_eq!(serde_json::to_string(&W(255)).unwrap(), "\"0xff\"");
    }
}
