//! Versioned little-endian binary containers.
//!
//! Network layout: `MTRLNET` magic, one version byte, `u32` dim count, `u32`
//! dims, hidden and output activation tags, then every weight matrix
//! row-major followed by every bias vector, all as `f64`. The number of
//! `f64` values written equals the network's parameter count.

use super::mlp::{Activation, Mlp};
use super::params::Parameters;
use crate::error::{Error, Result};

pub const NET_MAGIC: &[u8; 7] = b"MTRLNET";
pub const NET_VERSION: u8 = 1;

#[derive(Debug, Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("length overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn expect_magic(&mut self, magic: &[u8], version: u8) -> Result<()> {
        if self.take(magic.len())? != magic {
            return Err(Error::Format("bad magic header".into()));
        }
        let v = self.u8()?;
        if v != version {
            return Err(Error::Format(format!("unsupported version {v}")));
        }
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format("trailing bytes after payload".into()));
        }
        Ok(())
    }
}

pub fn encode_mlp(net: &Mlp) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(NET_MAGIC);
    w.u8(NET_VERSION);
    w.u32(net.layer_dims().len() as u32);
    for &d in net.layer_dims() {
        w.u32(d as u32);
    }
    w.u8(net.activation().tag());
    w.u8(net.output_activation().tag());
    for m in net.weights() {
        w.f64s(m.data());
    }
    for b in net.biases() {
        w.f64s(b);
    }
    w.finish()
}

pub fn decode_mlp(bytes: &[u8]) -> Result<Mlp> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(NET_MAGIC, NET_VERSION)?;
    let n = r.u32()? as usize;
    let dims = (0..n)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let act =
        Activation::from_tag(r.u8()?).ok_or_else(|| Error::Format("bad activation".into()))?;
    let out =
        Activation::from_tag(r.u8()?).ok_or_else(|| Error::Format("bad activation".into()))?;
    let mut net = Mlp::zeros(&dims, act, out)?;
    for m in net.weights_mut() {
        let len = m.data().len();
        m.data_mut().copy_from_slice(&r.f64s(len)?);
    }
    for b in net.biases_mut() {
        let len = b.len();
        b.copy_from_slice(&r.f64s(len)?);
    }
    r.finish()?;
    Ok(net)
}

/// Number of `f64` payload values in an encoded network.
pub fn encoded_scalar_count(bytes: &[u8]) -> Result<usize> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(NET_MAGIC, NET_VERSION)?;
    let n = r.u32()? as usize;
    let header = NET_MAGIC.len() + 1 + 4 + 4 * n + 2;
    let payload = bytes
        .len()
        .checked_sub(header)
        .ok_or_else(|| Error::Format("truncated header".into()))?;
    Ok(payload / 8)
}

/// Generic tensor list payload shared by the architecture and replay
/// containers.
pub fn write_tensors<P: Parameters + ?Sized>(w: &mut ByteWriter, p: &P) {
    let ts = p.tensors();
    w.u32(ts.len() as u32);
    for t in ts {
        w.u64(t.len() as u64);
        w.f64s(t);
    }
}

pub fn read_tensors_into<P: Parameters + ?Sized>(r: &mut ByteReader<'_>, p: &mut P) -> Result<()> {
    let n = r.u32()? as usize;
    let mut ts = p.tensors_mut();
    if n != ts.len() {
        return Err(Error::Format(format!(
            "payload has {n} tensors, model has {}",
            ts.len()
        )));
    }
    for t in ts.iter_mut() {
        let len = r.u64()? as usize;
        if len != t.len() {
            return Err(Error::Format("tensor length mismatch".into()));
        }
        t.copy_from_slice(&r.f64s(len)?);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn mlp_round_trips_bit_exactly(
            dims in proptest::collection::vec(1usize..6, 2..5),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Mlp::init(&dims, Activation::Tanh, Activation::Identity, &mut rng).unwrap();
            let bytes = encode_mlp(&net);
            let back = decode_mlp(&bytes).unwrap();
            prop_assert_eq!(
                net.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                back.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            prop_assert_eq!(&net, &back);
            prop_assert_eq!(encoded_scalar_count(&bytes).unwrap(), net.param_count());
        }
    }

    #[test]
    fn corrupted_containers_are_rejected() {
        let net = Mlp::zeros(&[2, 3, 1], Activation::ReLU, Activation::Identity).unwrap();
        let mut bytes = encode_mlp(&net);
        assert!(decode_mlp(&bytes[..bytes.len() - 1]).is_err());
        bytes.push(0);
        assert!(decode_mlp(&bytes).is_err());
        let mut bad = encode_mlp(&net);
        bad[0] = b'X';
        assert!(decode_mlp(&bad).is_err());
        let mut ver = encode_mlp(&net);
        ver[7] = 99;
        assert!(decode_mlp(&ver).is_err());
    }
}
