//! Binary channel-data container (`.aecd`).
//!
//! All fields little-endian:
//!
//! ```text
//! "AECD"  version:u16  m_tx:u16  t:u32  sample_rate:f64  t0:f64  pitch:f64  sos:f64
//! m_tx * t  f32 samples, row-major (event, sample)
//! num_elements:u16
//! per event: num_elements f64 delays (0 for inactive), ceil(num_elements/8) mask bytes (LSB first)
//! "AEXT"  center_frequency:f64  num_cycles:f64  pulse_kind:u8  center_x:f64
//! per event: label_len:u16  label utf-8
//! ```
//!
//! The `AEXT` block carries what reconstruction needs beyond the core header.
//! Readers accept files that end right after the mask tables.

use ndarray::Array2;
use std::io::{Read, Write};

use crate::domain::{ArrayGeometry, Medium, PulseKind, PulseSpec};
use crate::error::{AeError, Result};
use crate::forward::{ChannelDataSet, TransmitEvent};

pub const MAGIC: &[u8; 4] = b"AECD";
pub const EXT_MAGIC: &[u8; 4] = b"AEXT";
pub const VERSION: u16 = 1;

fn fmt_err(msg: impl Into<String>) -> AeError {
    AeError::Format(msg.into())
}

pub fn encode(ds: &ChannelDataSet) -> Result<Vec<u8>> {
    let m_tx = u16::try_from(ds.num_events()).map_err(|_| fmt_err("too many events for u16"))?;
    let t = u32::try_from(ds.num_samples()).map_err(|_| fmt_err("too many samples for u32"))?;
    let m = u16::try_from(ds.geometry.num_elements)
        .map_err(|_| fmt_err("too many elements for u16"))?;
    if ds.events.len() != ds.num_events() {
        return Err(fmt_err("event table length differs from channel count"));
    }
    let mut out =
        Vec::with_capacity(36 + 4 * ds.channels.len() + ds.events.len() * (8 * m as usize + 8));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&m_tx.to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
    for v in [ds.sample_rate, ds.t0, ds.geometry.pitch, ds.medium.sos] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in ds.channels.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&m.to_le_bytes());
    for ev in &ds.events {
        if ev.delays.len() != m as usize {
            return Err(fmt_err(format!(
                "event `{}` has {} delays, expected {m}",
                ev.label,
                ev.delays.len()
            )));
        }
        for d in &ev.delays {
            out.extend_from_slice(&d.unwrap_or(0.0).to_le_bytes());
        }
        let mut mask = vec![0u8; (m as usize).div_ceil(8)];
        for (i, d) in ev.delays.iter().enumerate() {
            if d.is_some() {
                mask[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&mask);
    }
    out.extend_from_slice(EXT_MAGIC);
    out.extend_from_slice(&ds.pulse.center_frequency.to_le_bytes());
    out.extend_from_slice(&ds.pulse.num_cycles.to_le_bytes());
    out.push(match ds.pulse.kind {
        PulseKind::Impulse => 0,
        PulseKind::Tone => 1,
    });
    out.extend_from_slice(&ds.geometry.center_x.to_le_bytes());
    for ev in &ds.events {
        let bytes = ev.label.as_bytes();
        let len =
            u16::try_from(bytes.len()).map_err(|_| fmt_err("label longer than 65535 bytes"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(bytes);
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(fmt_err(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn decode(bytes: &[u8]) -> Result<ChannelDataSet> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(fmt_err("bad magic, not an AECD file"));
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(fmt_err(format!("unsupported version {version}")));
    }
    let m_tx = c.u16("event count")? as usize;
    let t = c.u32("sample count")? as usize;
    let sample_rate = c.f64("sample_rate")?;
    let t0 = c.f64("t0")?;
    let pitch = c.f64("pitch")?;
    let sos = c.f64("sos")?;

    let raw = c.take(
        m_tx.checked_mul(t)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| fmt_err("sample block size overflows"))?,
        "samples",
    )?;
    let samples: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let channels =
        Array2::from_shape_vec((m_tx, t), samples).map_err(|e| fmt_err(e.to_string()))?;

    let m = c.u16("element count")? as usize;
    let mut events = Vec::with_capacity(m_tx);
    for e in 0..m_tx {
        let mut delays = Vec::with_capacity(m);
        for _ in 0..m {
            delays.push(c.f64("delay table")?);
        }
        let mask = c.take(m.div_ceil(8), "active mask")?;
        let delays = delays
            .into_iter()
            .enumerate()
            .map(|(i, d)| (mask[i / 8] >> (i % 8) & 1 == 1).then_some(d))
            .collect();
        events.push(TransmitEvent {
            delays,
            label: format!("event {e}"),
        });
    }

    let mut pulse = PulseSpec {
        center_frequency: sample_rate / 10.0,
        num_cycles: 1.0,
        sample_rate,
        kind: PulseKind::Tone,
    };
    let mut center_x = 0.0;
    if !c.at_end() {
        if c.take(4, "extension magic")? != EXT_MAGIC {
            return Err(fmt_err("unexpected trailing data"));
        }
        pulse.center_frequency = c.f64("center_frequency")?;
        pulse.num_cycles = c.f64("num_cycles")?;
        pulse.kind = match c.u8("pulse kind")? {
            0 => PulseKind::Impulse,
            1 => PulseKind::Tone,
            k => return Err(fmt_err(format!("unknown pulse kind {k}"))),
        };
        center_x = c.f64("center_x")?;
        for ev in events.iter_mut() {
            let len = c.u16("label length")? as usize;
            ev.label = String::from_utf8(c.take(len, "label")?.to_vec())
                .map_err(|e| fmt_err(e.to_string()))?;
        }
        if !c.at_end() {
            return Err(fmt_err("unexpected trailing data after extension block"));
        }
    }

    Ok(ChannelDataSet {
        channels,
        sample_rate,
        t0,
        events,
        geometry: ArrayGeometry {
            num_elements: m,
            pitch,
            center_x,
        },
        medium: Medium {
            sos,
            ..Medium::water()
        },
        pulse,
    })
}

pub fn write_to<W: Write>(ds: &ChannelDataSet, mut w: W) -> std::io::Result<()> {
    let bytes = encode(ds).map_err(std::io::Error::other)?;
    w.write_all(&bytes)
}

pub fn read_from<R: Read>(mut r: R) -> std::io::Result<ChannelDataSet> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode(&buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{focused_sequence, single_element_sequence};

    fn dataset(events: Vec<TransmitEvent>, geometry: ArrayGeometry) -> ChannelDataSet {
        let t = 37;
        let channels = Array2::from_shape_fn((events.len(), t), |(i, j)| {
            (i as f32 - 1.5) * 0.25 + j as f32 * 1e-3
        });
        ChannelDataSet {
            channels,
            sample_rate: 20e6,
            t0: 1.5e-7,
            events,
            geometry,
            medium: Medium::water(),
            pulse: PulseSpec::tone(2e6, 1.0, 20e6).unwrap(),
        }
    }

    #[test]
    fn header_layout() {
        let g = ArrayGeometry::new(3, 0.315e-3).unwrap();
        let ds = dataset(single_element_sequence(&g), g);
        let b = encode(&ds).unwrap();
        assert_eq!(&b[0..4], b"AECD");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!(u16::from_le_bytes([b[6], b[7]]), 3);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 37);
        assert_eq!(f64::from_le_bytes(b[12..20].try_into().unwrap()), 20e6);
        assert_eq!(f64::from_le_bytes(b[36..44].try_into().unwrap()), 1480.0);
        let first = f32::from_le_bytes(b[44..48].try_into().unwrap());
        assert_eq!(first, ds.channels[[0, 0]]);
        // masks: element i only, one byte each
        let table = 44 + 3 * 37 * 4 + 2;
        assert_eq!(b[table + 3 * 8], 0b001);
        assert_eq!(b[table + 2 * (3 * 8 + 1) - 1], 0b010);
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let g = ArrayGeometry {
            num_elements: 11,
            pitch: 0.3e-3,
            center_x: 0.2e-3,
        };
        let fus = focused_sequence(&g, &Medium::water(), 20e-3, &[0.0, 1e-3]).unwrap();
        let mut sa = single_element_sequence(&g);
        sa.truncate(2);
        for events in [fus, sa] {
            let ds = dataset(events, g.clone());
            let bytes = encode(&ds).unwrap();
            let back = decode(&bytes).unwrap();
            assert_eq!(back.channels, ds.channels);
            assert_eq!(back.events, ds.events);
            assert_eq!(back.geometry, ds.geometry);
            assert_eq!(back.pulse, ds.pulse);
            assert_eq!(encode(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"NOPE").is_err());
        let g = ArrayGeometry::new(2, 1e-3).unwrap();
        let bytes = encode(&dataset(single_element_sequence(&g), g)).unwrap();
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode(&bytes[..50]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
    }

    #[test]
    fn core_section_alone_decodes() {
        let g = ArrayGeometry::new(2, 1e-3).unwrap();
        let ds = dataset(single_element_sequence(&g), g);
        let bytes = encode(&ds).unwrap();
        let core_len = 44 + 2 * 37 * 4 + 2 + 2 * (2 * 8 + 1);
        let back = decode(&bytes[..core_len]).unwrap();
        assert_eq!(back.channels, ds.channels);
        assert_eq!(back.events[1].delays, ds.events[1].delays);
    }
}
