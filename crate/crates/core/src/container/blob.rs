use super::{ContainerError, DType, Modality, Payload, StreamHeader};
use crate::annotations::{Contour2D, Mesh3D};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"EXFL";
pub const VERSION: u16 = 1;
const NO_GEOMETRY: u32 = u32::MAX;

/// Bytes taken by a stream header with `ndim` dimensions and `n_ts`
/// timestamps.
pub fn header_len(ndim: usize, n_ts: usize) -> usize {
    4 + 2 + 1 + 1 + 1 + 4 * ndim + 4 + 8 + 4 + 8 * n_ts
}

pub fn encode_stream(h: &StreamHeader, payload: &Payload) -> Vec<u8> {
    let mut out = Vec::with_capacity(header_len(h.shape.len(), h.timestamps.len()) + payload.len() * h.dtype.size());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(h.modality.code());
    out.push(h.dtype.code());
    out.push(h.shape.len() as u8);
    for &d in &h.shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&h.geometry_id.unwrap_or(NO_GEOMETRY).to_le_bytes());
    out.extend_from_slice(&h.nyquist_velocity.unwrap_or(f64::NAN).to_le_bytes());
    out.extend_from_slice(&(h.timestamps.len() as u32).to_le_bytes());
    for t in &h.timestamps {
        out.extend_from_slice(&t.to_le_bytes());
    }
    match payload {
        Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Payload::U8(v) => out.extend_from_slice(v),
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes(b.try_into().unwrap()))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode_stream(bytes: &[u8], path: &Path) -> Result<(StreamHeader, Payload), ContainerError> {
    let header_err = |reason: &str| ContainerError::Header {
        path: path.to_owned(),
        reason: reason.to_owned(),
    };
    let short = || header_err("file ends inside the header");
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4) != Some(&MAGIC[..]) {
        return Err(ContainerError::BadMagic(path.to_owned()));
    }
    let version = c.u16().ok_or_else(short)?;
    if version != VERSION {
        return Err(ContainerError::Version {
            path: path.to_owned(),
            found: version,
        });
    }
    let modality = Modality::from_code(c.u8().ok_or_else(short)?).ok_or_else(|| header_err("unknown modality code"))?;
    let dtype = DType::from_code(c.u8().ok_or_else(short)?).ok_or_else(|| header_err("unknown dtype code"))?;
    let ndim = c.u8().ok_or_else(short)? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(c.u32().ok_or_else(short)? as usize);
    }
    let geometry_id = Some(c.u32().ok_or_else(short)?).filter(|&g| g != NO_GEOMETRY);
    let nyquist_velocity = Some(c.f64().ok_or_else(short)?).filter(|n| !n.is_nan());
    let n_ts = c.u32().ok_or_else(short)? as usize;
    if n_ts.saturating_mul(8) > c.remaining() {
        return Err(short());
    }
    let timestamps = (0..n_ts).map(|_| c.f64().unwrap()).collect();

    let expected = shape
        .iter()
        .try_fold(dtype.size(), |acc: usize, &d| acc.checked_mul(d))
        .ok_or_else(|| header_err("payload size overflows"))?;
    let found = c.remaining();
    if found < expected {
        return Err(ContainerError::Truncated {
            path: path.to_owned(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(ContainerError::TrailingBytes {
            path: path.to_owned(),
            extra: found - expected,
        });
    }
    let body = c.take(expected).unwrap();
    let payload = match dtype {
        DType::F32 => Payload::F32(
            body.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        ),
        DType::U8 => Payload::U8(body.to_vec()),
    };
    Ok((
        StreamHeader {
            modality,
            dtype,
            shape,
            timestamps,
            nyquist_velocity,
            geometry_id,
        },
        payload,
    ))
}

pub fn encode_contours(frames: &[Contour2D]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    for f in frames {
        out.extend_from_slice(&(f.vertices.len() as u32).to_le_bytes());
        for v in f.vertices.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn annotation_err(path: &Path, what: &str) -> ContainerError {
    ContainerError::Header {
        path: path.to_owned(),
        reason: format!("truncated {what} blob"),
    }
}

/// Contour frames; every decoded contour is marked closed (the flag lives
/// in the manifest).
pub fn decode_contours(bytes: &[u8], path: &Path) -> Result<Vec<Contour2D>, ContainerError> {
    let err = || annotation_err(path, "contour");
    let mut c = Cursor { buf: bytes, pos: 0 };
    let n = c.u32().ok_or_else(err)? as usize;
    let mut frames = Vec::with_capacity(n.min(bytes.len()));
    for _ in 0..n {
        let nv = c.u32().ok_or_else(err)? as usize;
        if nv.saturating_mul(16) > c.remaining() {
            return Err(err());
        }
        let vertices = (0..nv).map(|_| [c.f64().unwrap(), c.f64().unwrap()]).collect();
        frames.push(Contour2D::closed(vertices));
    }
    if c.remaining() != 0 {
        return Err(ContainerError::TrailingBytes {
            path: path.to_owned(),
            extra: c.remaining(),
        });
    }
    Ok(frames)
}

pub fn encode_meshes(frames: &[Mesh3D]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    for m in frames {
        out.extend_from_slice(&(m.vertices.len() as u32).to_le_bytes());
        for v in m.vertices.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(m.triangles.len() as u32).to_le_bytes());
        for i in m.triangles.iter().flatten() {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    out
}

pub fn decode_meshes(bytes: &[u8], path: &Path) -> Result<Vec<Mesh3D>, ContainerError> {
    let err = || annotation_err(path, "mesh");
    let mut c = Cursor { buf: bytes, pos: 0 };
    let n = c.u32().ok_or_else(err)? as usize;
    let mut frames = Vec::with_capacity(n.min(bytes.len()));
    for _ in 0..n {
        let nv = c.u32().ok_or_else(err)? as usize;
        if nv.saturating_mul(24) > c.remaining() {
            return Err(err());
        }
        let vertices = (0..nv)
            .map(|_| [c.f64().unwrap(), c.f64().unwrap(), c.f64().unwrap()])
            .collect();
        let nt = c.u32().ok_or_else(err)? as usize;
        if nt.saturating_mul(12) > c.remaining() {
            return Err(err());
        }
        let triangles = (0..nt)
            .map(|_| [c.u32().unwrap(), c.u32().unwrap(), c.u32().unwrap()])
            .collect();
        frames.push(Mesh3D { vertices, triangles });
    }
    if c.remaining() != 0 {
        return Err(ContainerError::TrailingBytes {
            path: path.to_owned(),
            extra: c.remaining(),
        });
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (StreamHeader, Payload) {
        (
            StreamHeader {
                modality: Modality::Tdi2d,
                dtype: DType::F32,
                shape: vec![2, 3, 2],
                timestamps: vec![0.0, 0.033],
                nyquist_velocity: Some(0.6),
                geometry_id: Some(0),
            },
            Payload::F32((0..12).map(|i| i as f32 * 0.5).collect()),
        )
    }

    #[test]
    fn layout_is_byte_exact() {
        let (h, p) = sample();
        let b = encode_stream(&h, &p);
        assert_eq!(&b[..4], &[0x45, 0x58, 0x46, 0x4C]);
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(b[6], 3);
        assert_eq!(b[7], 0);
        assert_eq!(b[8], 3);
        assert_eq!(&b[9..13], &[2, 0, 0, 0]);
        assert_eq!(b.len(), header_len(3, 2) + 12 * 4);
        assert_eq!(header_len(3, 2), 25 + 12 + 16);
    }

    #[test]
    fn decode_inverts_encode() {
        let (h, p) = sample();
        let (h2, p2) = decode_stream(&encode_stream(&h, &p), Path::new("x")).unwrap();
        assert_eq!((h, p), (h2, p2));
    }

    #[test]
    fn absent_fields_use_sentinels() {
        let (mut h, p) = sample();
        h.nyquist_velocity = None;
        h.geometry_id = None;
        let b = encode_stream(&h, &p);
        let (h2, _) = decode_stream(&b, Path::new("x")).unwrap();
        assert_eq!(h2.nyquist_velocity, None);
        assert_eq!(h2.geometry_id, None);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let (h, p) = sample();
        let good = encode_stream(&h, &p);
        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        let e = decode_stream(&bad, Path::new("x")).unwrap_err();
        assert!(e.to_string().contains("bad magic"));

        let e = decode_stream(&good[..good.len() - 1], Path::new("x")).unwrap_err();
        assert!(e.to_string().contains("truncated payload"), "{e}");

        let mut long = good.clone();
        long.push(0);
        assert!(matches!(
            decode_stream(&long, Path::new("x")),
            Err(ContainerError::TrailingBytes { extra: 1, .. })
        ));

        let mut v2 = good;
        v2[4] = 2;
        assert!(matches!(decode_stream(&v2, Path::new("x")), Err(ContainerError::Version { found: 2, .. })));
        assert!(matches!(decode_stream(&[], Path::new("x")), Err(ContainerError::BadMagic(_))));
    }

    #[test]
    fn annotation_blobs_round_trip() {
        let cs = vec![
            Contour2D::closed(vec![[0.0, 0.01], [0.02, 0.03], [-0.01, 0.04]]),
            Contour2D::closed(vec![[0.5, 0.25], [1.0, 2.0], [3.0, 4.0], [1e-9, -7.5]]),
        ];
        let b = encode_contours(&cs);
        assert_eq!(b.len(), 4 + (4 + 3 * 16) + (4 + 4 * 16));
        assert_eq!(decode_contours(&b, Path::new("c")).unwrap(), cs);
        assert!(decode_contours(&b[..b.len() - 3], Path::new("c")).is_err());

        let ms = vec![crate::annotations::box_mesh([0.0; 3], [1.0, 2.0, 3.0])];
        let b = encode_meshes(&ms);
        assert_eq!(b.len(), 4 + 4 + 8 * 24 + 4 + 12 * 12);
        assert_eq!(decode_meshes(&b, Path::new("m")).unwrap(), ms);
    }
}
