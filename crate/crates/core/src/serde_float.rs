//! Serde adapter for floats that may be infinite: finite values are plain
//! numbers, others the strings `"inf"`, `"-inf"` and `"nan"`.

use serde::{Deserialize, Deserializer, Serializer};

pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Repr {
    Number(f64),
    Text(String),
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    match Repr::deserialize(d)? {
        Repr::Number(v) => Ok(v),
        Repr::Text(t) => match t.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            other => Err(serde::de::Error::custom(format!("expected a number, got {other:?}"))),
        },
    }
}

#[cfg(test)]
mod tests {
    #[derive(Debug, PartialEq, serde::Serialize, serde::Deserialize)]
    struct W(#[serde(with = "super")] f64);

    #[test]
    fn round_trips_non_finite_values() {
        for v in [1.5, -0.0, f64::INFINITY, f64::NEG_INFINITY] {
            let text = serde_json::to_string(&W(v)).unwrap();
            assert_eq!(serde_json::from_str::<W>(&text).unwrap(), W(v));
        }
        assert_eq!(serde_json::to_string(&W(f64::INFINITY)).unwrap(), "\"inf\"");
        assert!(serde_json::from_str::<W>("\"nan\"").unwrap().0.is_nan());
        assert!(serde_json::from_str::<W>("\"wide\"").is_err());
    }
}
