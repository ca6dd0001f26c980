//! AVEF binary feature files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "AVEF"  u16 version=1
//! u32 T, u32 d_v, u32 k, u32 d_a, u32 C
//! u32 id_len, id_len bytes of UTF-8 video id
//! T × (d_v·k) f32    visual maps, row-major, regions innermost
//! T × d_a f32        audio vectors
//! T × u16            segment label indices
//! u16                video label index
//! optional extension block:
//!   "AMAP" u32 channels, u32 regions, T × (channels·regions) f32
//! ```
//!
//! Values are stored as `f32` and widened to `f64` on read.

use std::io::{Read, Write};

use super::FeatureSequence;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const AVEF_MAGIC: &[u8; 4] = b"AVEF";
pub const AVEF_VERSION: u16 = 1;
const AUDIO_MAP_TAG: &[u8; 4] = b"AMAP";

fn u32_field(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Contract(format!("{what} = {v} does not fit in u32")))
}

fn u16_field(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::Contract(format!("{what} = {v} does not fit in u16")))
}

pub fn write_features<W: Write>(seq: &FeatureSequence, sink: &mut W) -> Result<()> {
    seq.validate()?;
    let mut buf = Vec::new();
    buf.extend_from_slice(AVEF_MAGIC);
    buf.extend_from_slice(&AVEF_VERSION.to_le_bytes());
    for (v, what) in [
        (seq.len(), "T"),
        (seq.visual_channels(), "d_v"),
        (seq.regions(), "k"),
        (seq.audio_dim(), "d_a"),
        (seq.num_classes, "C"),
        (seq.video_id.len(), "video id length"),
    ] {
        buf.extend_from_slice(&u32_field(v, what)?.to_le_bytes());
    }
    buf.extend_from_slice(seq.video_id.as_bytes());
    let put = |buf: &mut Vec<u8>, values: &[f64]| {
        for &v in values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    };
    for v in &seq.visual {
        put(&mut buf, v.data());
    }
    for a in &seq.audio {
        put(&mut buf, a.data());
    }
    for &l in &seq.segment_labels {
        buf.extend_from_slice(&u16_field(l, "segment label")?.to_le_bytes());
    }
    buf.extend_from_slice(&u16_field(seq.video_label, "video label")?.to_le_bytes());
    if let (Some(maps), Some((c, r))) = (&seq.audio_maps, seq.audio_map_dims()) {
        buf.extend_from_slice(AUDIO_MAP_TAG);
        buf.extend_from_slice(&u32_field(c, "audio map channels")?.to_le_bytes());
        buf.extend_from_slice(&u32_field(r, "audio map regions")?.to_le_bytes());
        for m in maps {
            put(&mut buf, m.data());
        }
    }
    sink.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.pos as u64,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return self.fail(format!("truncated reading {what}: need {n} bytes, {remaining} left"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32s(&mut self, n: usize, shape: Vec<usize>, what: &str) -> Result<Tensor> {
        let start = self.pos;
        let bytes = n.checked_mul(4).ok_or_else(|| Error::Format {
            offset: start as u64,
            message: format!("{what}: size overflow"),
        })?;
        let raw = self.take(bytes, what)?;
        let mut data = Vec::with_capacity(n);
        for (i, c) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if !v.is_finite() {
                return Err(Error::Format {
                    offset: (start + 4 * i) as u64,
                    message: format!("{what}: non-finite value"),
                });
            }
            data.push(v as f64);
        }
        Tensor::new(shape, data).map_err(|e| Error::Format {
            offset: start as u64,
            message: e.to_string(),
        })
    }
}

/// Reads one AVEF sequence from `source`, consuming it to the end.
pub fn read_features<R: Read>(source: &mut R) -> Result<FeatureSequence> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_features(&bytes)
}

pub(crate) fn decode_features(bytes: &[u8]) -> Result<FeatureSequence> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != AVEF_MAGIC {
        cur.pos = 0;
        return cur.fail("bad magic, expected \"AVEF\"");
    }
    let version = cur.u16("version")?;
    if version != AVEF_VERSION {
        cur.pos -= 2;
        return cur.fail(format!("unsupported version {version}"));
    }
    let header_at = cur.pos;
    let t = cur.u32("T")?;
    let d_v = cur.u32("d_v")?;
    let k = cur.u32("k")?;
    let d_a = cur.u32("d_a")?;
    let c = cur.u32("C")?;
    if t == 0 || d_v == 0 || k == 0 || d_a == 0 || c < 2 {
        cur.pos = header_at;
        return cur.fail(format!(
            "invalid header dims T={t} d_v={d_v} k={k} d_a={d_a} C={c}"
        ));
    }
    let id_len = cur.u32("video id length")?;
    let id_at = cur.pos;
    let id_bytes = cur.take(id_len, "video id")?;
    let video_id = String::from_utf8(id_bytes.to_vec()).map_err(|_| Error::Format {
        offset: id_at as u64,
        message: "video id is not UTF-8".into(),
    })?;

    // The remaining fixed payload must be present in full before decoding.
    let payload = t as u128 * (d_v as u128 * k as u128 + d_a as u128) * 4 + (t as u128 + 1) * 2;
    let remaining = (bytes.len() - cur.pos) as u128;
    if payload > remaining {
        return cur.fail(format!(
            "truncated payload: header implies {payload} bytes, {remaining} present"
        ));
    }

    let mut visual = Vec::with_capacity(t);
    for s in 0..t {
        visual.push(cur.f32s(d_v * k, vec![d_v, k], &format!("visual map {s}"))?);
    }
    let mut audio = Vec::with_capacity(t);
    for s in 0..t {
        audio.push(cur.f32s(d_a, vec![d_a], &format!("audio vector {s}"))?);
    }
    let mut segment_labels = Vec::with_capacity(t);
    for s in 0..t {
        let at = cur.pos;
        let l = cur.u16("segment label")? as usize;
        if l >= c {
            cur.pos = at;
            return cur.fail(format!("segment {s} label {l} >= C = {c}"));
        }
        segment_labels.push(l);
    }
    let at = cur.pos;
    let video_label = cur.u16("video label")? as usize;
    if video_label >= c {
        cur.pos = at;
        return cur.fail(format!("video label {video_label} >= C = {c}"));
    }

    let mut audio_maps = None;
    if cur.pos < bytes.len() {
        let tag_at = cur.pos;
        if cur.take(4, "extension tag")? != AUDIO_MAP_TAG {
            cur.pos = tag_at;
            return cur.fail("trailing bytes after payload are not a known extension");
        }
        let mc = cur.u32("audio map channels")?;
        let mr = cur.u32("audio map regions")?;
        if mc == 0 || mr == 0 {
            cur.pos -= 8;
            return cur.fail("audio map dims must be positive");
        }
        let mut maps = Vec::with_capacity(t);
        for s in 0..t {
            maps.push(cur.f32s(mc * mr, vec![mc, mr], &format!("audio map {s}"))?);
        }
        if cur.pos != bytes.len() {
            return cur.fail("trailing bytes after audio map extension");
        }
        audio_maps = Some(maps);
    }

    Ok(FeatureSequence {
        video_id,
        num_classes: c,
        visual,
        audio,
        segment_labels,
        video_label,
        audio_maps,
    })
}
