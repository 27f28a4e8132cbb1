//! SGR1 raster stacks.
//!
//! Layout: one JSON header line
//! `{"h":H,"w":W,"dtype":"f32le","channels":C,"names":[...]}` terminated by
//! `\n`, then `H*W*C` little-endian `f32` values, row-major and channel-last.
//! Missing cells are NaN; masks are stored as channels of `0.0`/`1.0`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const DTYPE: &str = "f32le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgrHeader {
    pub h: usize,
    pub w: usize,
    pub dtype: String,
    pub channels: usize,
    pub names: Vec<String>,
}

/// A channel-last stack of `f32` rasters.
#[derive(Clone, Debug, PartialEq)]
pub struct SgrStack {
    h: usize,
    w: usize,
    names: Vec<String>,
    data: Vec<f32>,
}

impl SgrStack {
    /// Wrap an interleaved (channel-last) buffer.
    pub fn new(h: usize, w: usize, names: Vec<String>, data: Vec<f32>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidArgument("SGR1 stack needs a channel".into()));
        }
        if data.len() != h * w * names.len() {
            return Err(Error::shape(h * w * names.len(), data.len()));
        }
        Ok(SgrStack { h, w, names, data })
    }

    pub fn from_channels(names: Vec<String>, channels: &[Grid<f32>]) -> Result<Self> {
        let Some(first) = channels.first() else {
            return Err(Error::InvalidArgument("SGR1 stack needs a channel".into()));
        };
        if names.len() != channels.len() {
            return Err(Error::shape(channels.len(), names.len()));
        }
        let (h, w) = first.dims();
        if channels.iter().any(|c| c.dims() != (h, w)) {
            return Err(Error::shape(format!("{h}x{w}"), "channels of unequal size"));
        }
        let c = channels.len();
        let mut data = vec![0.0; h * w * c];
        for (k, ch) in channels.iter().enumerate() {
            for (i, &v) in ch.as_slice().iter().enumerate() {
                data[i * c + k] = v;
            }
        }
        Ok(SgrStack { h, w, names, data })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, k: usize) -> Grid<f32> {
        let c = self.channels();
        let data = (0..self.h * self.w).map(|i| self.data[i * c + k]).collect();
        Grid::from_vec(self.h, self.w, data).expect("consistent dims")
    }

    pub fn channel_by_name(&self, name: &str) -> Option<Grid<f32>> {
        self.names.iter().position(|n| n == name).map(|k| self.channel(k))
    }

    pub fn header(&self) -> SgrHeader {
        SgrHeader {
            h: self.h,
            w: self.w,
            dtype: DTYPE.to_string(),
            channels: self.channels(),
            names: self.names.clone(),
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header = serde_json::to_string(&self.header()).map_err(std::io::Error::other)?;
        out.write_all(header.as_bytes())?;
        out.write_all(b"\n")?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        out.flush()
    }

    pub fn read_from<R: BufRead>(mut input: R) -> Result<Self> {
        let mut line = Vec::new();
        input
            .read_until(b'\n', &mut line)
            .map_err(|e| Error::Format(e.to_string()))?;
        if line.last() != Some(&b'\n') {
            return Err(Error::Format("missing header terminator".into()));
        }
        let header: SgrHeader = serde_json::from_slice(&line[..line.len() - 1])
            .map_err(|e| Error::Format(format!("bad header: {e}")))?;
        if header.dtype != DTYPE {
            return Err(Error::Format(format!("unsupported dtype {:?}", header.dtype)));
        }
        if header.channels != header.names.len() {
            return Err(Error::Format(format!(
                "{} channels but {} names",
                header.channels,
                header.names.len()
            )));
        }
        let n = header.h * header.w * header.channels;
        let mut bytes = vec![0u8; n * 4];
        input
            .read_exact(&mut bytes)
            .map_err(|e| Error::Format(format!("payload: {e}")))?;
        let mut extra = [0u8; 1];
        if input.read(&mut extra).map_err(|e| Error::Format(e.to_string()))? != 0 {
            return Err(Error::Format("trailing bytes after payload".into()));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        SgrStack::new(header.h, header.w, header.names, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        SgrStack::read_from(BufReader::new(file))
    }
}

/// Mask as a `{0.0, 1.0}` channel.
pub fn mask_channel(mask: &Grid<bool>) -> Grid<f32> {
    mask.map(|&b| if b { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_bit_exact() {
        let s = SgrStack::new(2, 1, vec!["sst".into(), "land".into()], vec![1.0, 0.0, f32::NAN, 1.0])
            .unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        let expected = b"{\"h\":2,\"w\":1,\"dtype\":\"f32le\",\"channels\":2,\"names\":[\"sst\",\"land\"]}\n";
        assert_eq!(&buf[..expected.len()], expected);
        assert_eq!(buf.len(), expected.len() + 16);
        assert_eq!(&buf[expected.len()..expected.len() + 4], &1.0f32.to_le_bytes());
        assert!(f32::from_le_bytes(buf[expected.len() + 8..expected.len() + 12].try_into().unwrap()).is_nan());
    }

    #[test]
    fn channel_extraction_is_channel_last() {
        let a = Grid::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Grid::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
        let s = SgrStack::from_channels(vec!["a".into(), "b".into()], &[a.clone(), b]).unwrap();
        assert_eq!(s.data(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(s.channel(0), a);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let s = SgrStack::new(2, 2, vec!["x".into()], vec![0.0; 4]).unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        buf.pop();
        assert!(SgrStack::read_from(&buf[..]).is_err());
    }

    #[test]
    fn wrong_dtype_is_rejected() {
        let text = b"{\"h\":1,\"w\":1,\"dtype\":\"f64le\",\"channels\":1,\"names\":[\"x\"]}\n\0\0\0\0\0\0\0\0";
        assert!(SgrStack::read_from(&text[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_preserves_bits(h in 1usize..6, w in 1usize..6, c in 1usize..4, seed in any::<u64>()) {
            let mut x = seed;
            let data: Vec<f32> = (0..h * w * c)
                .map(|_| {
                    x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    f32::from_bits((x >> 32) as u32)
                })
                .collect();
            let names = (0..c).map(|k| format!("c{k}")).collect();
            let s = SgrStack::new(h, w, names, data).unwrap();
            let mut buf = Vec::new();
            s.write_to(&mut buf).unwrap();
            let back = SgrStack::read_from(&buf[..]).unwrap();
            let bits = |s: &SgrStack| s.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&s));
            prop_assert_eq!(back.names(), s.names());
        }
    }
}
