//! Serde helpers for floats that may be infinite. JSON has no infinity, so
//! `+inf` and `-inf` are written as the strings `"inf"` and `"-inf"`.

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Repr {
    Num(f64),
    Text(String),
}

fn to_repr(v: f64) -> Repr {
    if v == f64::INFINITY {
        Repr::Text("inf".into())
    } else if v == f64::NEG_INFINITY {
        Repr::Text("-inf".into())
    } else {
        Repr::Num(v)
    }
}

fn from_repr<E: de::Error>(r: Repr) -> Result<f64, E> {
    match r {
        Repr::Num(v) => Ok(v),
        Repr::Text(s) => match s.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            other => Err(E::custom(format!("expected a number, \"inf\" or \"-inf\", got \"{other}\""))),
        },
    }
}

pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    to_repr(*v).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    from_repr(Repr::deserialize(d)?)
}

pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|&x| to_repr(x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Repr>::deserialize(d)?.into_iter().map(from_repr).collect()
    }
}

#[cfg(test)]
mod tests {
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct S {
        #[serde(with = "crate::serde_f64")]
        a: f64,
        #[serde(with = "crate::serde_f64::vec")]
        b: Vec<f64>,
    }

    #[test]
    fn infinities_round_trip() {
        let s = S { a: f64::INFINITY, b: vec![1.5, f64::NEG_INFINITY, 0.1 + 0.2] };
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(text, r#"{"a":"inf","b":[1.5,"-inf",0.30000000000000004]}"#);
        assert_eq!(serde_json::from_str::<S>(&text).unwrap(), s);
        assert!(serde_json::from_str::<S>(r#"{"a":"nan","b":[]}"#).is_err());
    }
}
