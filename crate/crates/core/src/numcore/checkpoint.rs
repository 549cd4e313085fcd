//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "BLXAM1"
//! u32 parameter count
//!   per parameter: u32 name length, name bytes, u32 rank, u64 × rank dims,
//!                  f64 × product(dims) values
//! u32 optimizer entry count
//!   same layout, names "<param>@adam_m", "<param>@adam_v", "<param>@adam_step"
//! u64 checksum (first 8 bytes of SHA-256 over everything before it)
//! ```

use sha2::{Digest, Sha256};

use super::params::{AdamState, ParameterStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"BLXAM1";
const MAGIC_FAMILY: &[u8; 5] = b"BLXAM";

fn checksum(payload: &[u8]) -> u64 {
    let digest = Sha256::digest(payload);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn put_entry(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f64]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(store: &ParameterStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.num_values() * 24);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        put_entry(&mut out, name, t.shape(), t.data());
    }
    out.extend_from_slice(&((store.len() * 3) as u32).to_le_bytes());
    for (name, t) in store.iter() {
        let st = store.adam_state(name).expect("registered");
        put_entry(&mut out, &format!("{name}@adam_m"), t.shape(), &st.m);
        put_entry(&mut out, &format!("{name}@adam_v"), t.shape(), &st.v);
        put_entry(
            &mut out,
            &format!("{name}@adam_step"),
            &[],
            &[st.step as f64],
        );
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn entry(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("{name}: implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= self.buf.len()))
            .ok_or_else(|| Error::Format(format!("{name}: implausible shape {shape:?}")))?;
        let raw = self.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((name, Tensor::new(shape, data)?))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParameterStore> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC_FAMILY.len()] != MAGIC_FAMILY {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Version {
            expected: String::from_utf8_lossy(MAGIC).into_owned(),
            found: String::from_utf8_lossy(&bytes[..MAGIC.len()]).into_owned(),
        });
    }
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::Format("truncated checkpoint".into()));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let computed = checksum(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut r = Reader {
        buf: payload,
        pos: MAGIC.len(),
    };
    let mut store = ParameterStore::new();
    let count = r.u32()?;
    for _ in 0..count {
        let (name, t) = r.entry()?;
        if name.contains('@') {
            return Err(Error::Format(format!(
                "parameter name {name:?} contains '@'"
            )));
        }
        store.register(name, t)?;
    }
    let opt_count = r.u32()? as usize;
    if opt_count != store.len() * 3 {
        return Err(Error::Format(format!(
            "expected {} optimizer entries, found {opt_count}",
            store.len() * 3
        )));
    }
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let mut part = |suffix: &str| -> Result<Tensor> {
            let (n, t) = r.entry()?;
            if n != format!("{name}@{suffix}") {
                return Err(Error::Format(format!(
                    "expected {name}@{suffix}, found {n}"
                )));
            }
            Ok(t)
        };
        let m = part("adam_m")?.into_data();
        let v = part("adam_v")?.into_data();
        let step = part("adam_step")?;
        if step.len() != 1 || step.item() < 0.0 || step.item().fract() != 0.0 {
            return Err(Error::Format(format!("{name}: bad step count")));
        }
        store.set_adam_state(
            &name,
            AdamState {
                m,
                v,
                step: step.item() as u64,
            },
        )?;
    }
    if r.pos != payload.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes before checksum",
            payload.len() - r.pos
        )));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::params::AdamConfig;

    fn sample() -> ParameterStore {
        let mut s = ParameterStore::new();
        s.register(
            "w",
            Tensor::new(vec![2, 2], vec![1.0, -2.5, 3.25, 0.0]).unwrap(),
        )
        .unwrap();
        s.register("b", Tensor::vector(vec![0.125])).unwrap();
        s.accumulate_grad("w", &[0.1, 0.2, 0.3, 0.4]).unwrap();
        s.accumulate_grad("b", &[-1.0]).unwrap();
        s.adam_step(0.01, &AdamConfig::default(), |_| true).unwrap();
        s
    }

    #[test]
    fn round_trip_is_exact() {
        let s = sample();
        let bytes = encode(&s);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(encode(&back), bytes);
        assert_eq!(back.adam_state("w").unwrap().step, 1);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&sample());
        assert!(matches!(
            decode(&bytes[..bytes.len() - 3]),
            Err(Error::Checksum { .. })
        ));
        assert!(decode(&bytes[..4]).is_err());
        let mut flipped = bytes.clone();
        flipped[20] ^= 1;
        assert!(matches!(decode(&flipped), Err(Error::Checksum { .. })));
        let mut v2 = bytes.clone();
        v2[5] = b'2';
        assert!(matches!(decode(&v2), Err(Error::Version { .. })));
    }
}
