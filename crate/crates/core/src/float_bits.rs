//! Decimal-free float encoding for persisted parameters.
//!
//! Scalars are written as the 16-digit hex of their IEEE-754 bits; vectors as
//! base64 of their little-endian bytes. Both round-trip exactly.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

pub fn encode_f64(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

pub fn decode_f64(s: &str) -> Option<f64> {
    if s.len() != 16 {
        return None;
    }
    u64::from_str_radix(s, 16).ok().map(f64::from_bits)
}

pub fn encode_vec(xs: &[f64]) -> String {
    let bytes: Vec<u8> = xs.iter().flat_map(|x| x.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_vec(s: &str) -> Option<Vec<f64>> {
    let bytes = STANDARD.decode(s).ok()?;
    if bytes.len() % 8 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    )
}

pub mod scalar {
    use super::*;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&encode_f64(*x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let s = String::deserialize(d)?;
        decode_f64(&s).ok_or_else(|| D::Error::custom(format!("bad float bits `{s}`")))
    }
}

pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&encode_vec(xs))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let s = String::deserialize(d)?;
        decode_vec(&s).ok_or_else(|| D::Error::custom("bad float vector encoding"))
    }
}

pub mod opt_pair_vec {
    use super::*;
    use serde::Serialize;

    pub fn serialize<S: Serializer>(xs: &[Option<(f64, f64)>], s: S) -> Result<S::Ok, S::Error> {
        let enc: Vec<Option<(String, String)>> = xs
            .iter()
            .map(|p| p.map(|(a, b)| (encode_f64(a), encode_f64(b))))
            .collect();
        enc.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Vec<Option<(f64, f64)>>, D::Error> {
        let raw: Vec<Option<(String, String)>> = Vec::deserialize(d)?;
        raw.into_iter()
            .map(|p| match p {
                None => Ok(None),
                Some((a, b)) => match (decode_f64(&a), decode_f64(&b)) {
                    (Some(a), Some(b)) => Ok(Some((a, b))),
                    _ => Err(D::Error::custom("bad float bits in range")),
                },
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn vectors_round_trip_bit_exact(xs in proptest::collection::vec(any::<f64>(), 0..64)) {
            let back = decode_vec(&encode_vec(&xs)).unwrap();
            prop_assert_eq!(back.len(), xs.len());
            for (a, b) in xs.iter().zip(&back) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn scalars_round_trip_bit_exact(x in any::<f64>()) {
            prop_assert_eq!(decode_f64(&encode_f64(x)).unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode_f64("xyz").is_none());
        assert!(decode_vec("AAA=").is_none());
    }
}
