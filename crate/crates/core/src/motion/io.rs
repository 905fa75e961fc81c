//! Self-describing binary containers for motion and audio features.
//!
//! Layout: an ASCII header of `key value` lines terminated by `end`, followed
//! by row-major little-endian `f64` values.
//!
//! ```text
//! COGESTURE-MOTION 1
//! frames 34
//! joints 47
//! fps 15
//! names Spine1 Spine2 ...
//! parents -1 0 ...
//! groups body:0,1,2 left_hand:...
//! end
//! <frames * joints * 3 f64>
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use super::{AudioFeatureSequence, GestureSequence, SkeletonSpec};
use crate::error::{Error, Result};

const MOTION_MAGIC: &str = "COGESTURE-MOTION";
const AUDIO_MAGIC: &str = "COGESTURE-AUDIO";
const VERSION: u32 = 1;

fn perr(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

struct Header<'a> {
    fields: Vec<(&'a str, &'a str, usize)>,
    data_offset: usize,
}

impl<'a> Header<'a> {
    fn parse(bytes: &'a [u8], magic: &str) -> Result<Self> {
        let mut offset = 0;
        let mut fields = Vec::new();
        let mut first = true;
        loop {
            let rest = &bytes[offset..];
            let nl = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| perr(offset, "unterminated header line"))?;
            let line = std::str::from_utf8(&rest[..nl]).map_err(|_| perr(offset, "header is not UTF-8"))?;
            let line_start = offset;
            offset += nl + 1;
            if first {
                let mut parts = line.split_whitespace();
                if parts.next() != Some(magic) {
                    return Err(perr(line_start, format!("expected magic {magic}")));
                }
                let version: u32 = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| perr(line_start, "missing version"))?;
                if version != VERSION {
                    return Err(perr(line_start, format!("unknown version {version}")));
                }
                first = false;
                continue;
            }
            if line == "end" {
                return Ok(Header {
                    fields,
                    data_offset: offset,
                });
            }
            let (k, v) = line.split_once(' ').unwrap_or((line, ""));
            fields.push((k, v, line_start));
        }
    }

    fn get(&self, key: &str) -> Result<(&'a str, usize)> {
        self.fields
            .iter()
            .find(|(k, _, _)| *k == key)
            .map(|&(_, v, o)| (v, o))
            .ok_or_else(|| perr(self.data_offset, format!("missing header field {key}")))
    }

    fn number<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let (v, o) = self.get(key)?;
        v.trim().parse().map_err(|_| perr(o, format!("malformed {key}: {v:?}")))
    }
}

fn read_values(bytes: &[u8], offset: usize, count: usize) -> Result<Vec<f64>> {
    let body = &bytes[offset..];
    if body.len() != count * 8 {
        return Err(perr(
            offset,
            format!("expected {} data bytes ({count} values), found {}", count * 8, body.len()),
        ));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn push_values(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_motion(seq: &GestureSequence) -> Vec<u8> {
    let sk = seq.skeleton();
    let mut h = String::new();
    writeln!(h, "{MOTION_MAGIC} {VERSION}").unwrap();
    writeln!(h, "frames {}", seq.frames()).unwrap();
    writeln!(h, "joints {}", sk.joint_count()).unwrap();
    writeln!(h, "fps {}", seq.fps()).unwrap();
    writeln!(h, "names {}", sk.names().join(" ")).unwrap();
    let parents: Vec<String> = sk.parents().iter().map(i32::to_string).collect();
    writeln!(h, "parents {}", parents.join(" ")).unwrap();
    let groups: Vec<String> = sk
        .groups()
        .iter()
        .map(|(k, v)| {
            let idx: Vec<String> = v.iter().map(usize::to_string).collect();
            format!("{k}:{}", idx.join(","))
        })
        .collect();
    writeln!(h, "groups {}", groups.join(" ")).unwrap();
    h.push_str("end\n");
    let mut out = h.into_bytes();
    push_values(&mut out, seq.values());
    out
}

pub fn decode_motion(bytes: &[u8]) -> Result<GestureSequence> {
    let h = Header::parse(bytes, MOTION_MAGIC)?;
    let frames: usize = h.number("frames")?;
    let joints: usize = h.number("joints")?;
    let fps: f64 = h.number("fps")?;
    if frames == 0 {
        return Err(perr(h.get("frames")?.1, "frame count must be at least 1"));
    }
    let (names_line, names_off) = h.get("names")?;
    let names: Vec<String> = names_line.split_whitespace().map(String::from).collect();
    if names.len() != joints {
        return Err(perr(names_off, format!("{} joint names for {joints} joints", names.len())));
    }
    let (parents_line, parents_off) = h.get("parents")?;
    let parents: Vec<i32> = parents_line
        .split_whitespace()
        .map(|p| p.parse().map_err(|_| perr(parents_off, format!("malformed parent {p:?}"))))
        .collect::<Result<_>>()?;
    let mut groups = BTreeMap::new();
    if let Ok((line, off)) = h.get("groups") {
        for item in line.split_whitespace() {
            let (name, idx) = item
                .split_once(':')
                .ok_or_else(|| perr(off, format!("malformed group {item:?}")))?;
            let members = idx
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| perr(off, format!("malformed group index {s:?}"))))
                .collect::<Result<Vec<usize>>>()?;
            groups.insert(name.to_string(), members);
        }
    }
    let skeleton = SkeletonSpec::new(names, parents, groups).map_err(|e| perr(names_off, e.to_string()))?;
    let values = read_values(bytes, h.data_offset, frames * joints * 3)?;
    GestureSequence::new(values, frames, fps, Arc::new(skeleton)).map_err(|e| perr(h.data_offset, e.to_string()))
}

pub fn save_motion(seq: &GestureSequence, path: &Path) -> Result<()> {
    fs::write(path, encode_motion(seq)).map_err(|e| Error::io(path, e))
}

pub fn load_motion(path: &Path) -> Result<GestureSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_motion(&bytes)
}

pub fn encode_audio(a: &AudioFeatureSequence) -> Vec<u8> {
    let mut h = String::new();
    writeln!(h, "{AUDIO_MAGIC} {VERSION}").unwrap();
    writeln!(h, "frames {}", a.frames()).unwrap();
    writeln!(h, "dims {}", a.dim()).unwrap();
    writeln!(h, "rate_hz {}", a.source_rate_hz).unwrap();
    h.push_str("end\n");
    let mut out = h.into_bytes();
    push_values(&mut out, a.values());
    out
}

pub fn decode_audio(bytes: &[u8]) -> Result<AudioFeatureSequence> {
    let h = Header::parse(bytes, AUDIO_MAGIC)?;
    let frames: usize = h.number("frames")?;
    let dims: usize = h.number("dims")?;
    let rate: f64 = h.number("rate_hz")?;
    let values = read_values(bytes, h.data_offset, frames * dims)?;
    AudioFeatureSequence::new(values, frames, dims, rate).map_err(|e| perr(h.data_offset, e.to_string()))
}

pub fn save_audio(a: &AudioFeatureSequence, path: &Path) -> Result<()> {
    fs::write(path, encode_audio(a)).map_err(|e| Error::io(path, e))
}

pub fn load_audio(path: &Path) -> Result<AudioFeatureSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_audio(&bytes)
}

/// One row per frame, columns `joint_<k>_{x,y,z}`.
pub fn motion_to_csv(seq: &GestureSequence) -> String {
    let mut out = String::new();
    let cols: Vec<String> = (0..seq.joint_count())
        .flat_map(|k| ["x", "y", "z"].map(|a| format!("joint_{k}_{a}")))
        .collect();
    out.push_str(&cols.join(","));
    out.push('\n');
    for f in 0..seq.frames() {
        let row: Vec<String> = seq.frame(f).iter().map(f64::to_string).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Imports externally prepared features: one row per frame, comma separated,
/// an optional non-numeric header row.
pub fn audio_from_csv(text: &str, rate_hz: f64) -> Result<AudioFeatureSequence> {
    let mut values = Vec::new();
    let mut dim = None;
    let mut frames = 0;
    let mut offset = 0;
    for (i, line) in text.lines().enumerate() {
        let line_offset = offset;
        offset += line.len() + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        let row = match parsed {
            Ok(r) => r,
            Err(_) if i == 0 => continue,
            Err(_) => return Err(perr(line_offset, format!("non-numeric value on line {}", i + 1))),
        };
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(perr(line_offset, format!("line {} has {} columns, expected {d}", i + 1, row.len())))
            }
            _ => {}
        }
        values.extend(row);
        frames += 1;
    }
    let dim = dim.ok_or_else(|| perr(0, "no feature rows"))?;
    AudioFeatureSequence::new(values, frames, dim, rate_hz)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(frames: usize) -> GestureSequence {
        let sk = Arc::new(SkeletonSpec::upper_body());
        let values = (0..frames * 47 * 3).map(|i| (i as f64 * 0.37).sin() * 1.1).collect();
        GestureSequence::new(values, frames, 15.0, sk).unwrap()
    }

    #[test]
    fn motion_round_trip_is_lossless() {
        let s = seq(5);
        let back = decode_motion(&encode_motion(&s)).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.cogesture");
        let s = seq(3);
        save_motion(&s, &p).unwrap();
        assert_eq!(load_motion(&p).unwrap(), s);
        assert!(matches!(load_motion(&dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn joint_count_mismatch_is_a_parse_error() {
        let s = seq(2);
        let mut bytes = encode_motion(&s);
        // Drop one joint worth of data per frame: J=46 data against a J=47 header.
        bytes.truncate(bytes.len() - 2 * 3 * 8);
        match decode_motion(&bytes) {
            Err(Error::Parse { offset, message }) => {
                assert!(offset > 0);
                assert!(message.contains("data bytes"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_version_and_empty_frames() {
        let s = seq(1);
        let text = String::from_utf8_lossy(&encode_motion(&s)).into_owned();
        let v2 = text.replacen("COGESTURE-MOTION 1", "COGESTURE-MOTION 2", 1);
        assert!(matches!(decode_motion(v2.as_bytes()), Err(Error::Parse { offset: 0, .. })));
        let empty = encode_motion(&s);
        let header_end = empty.windows(4).position(|w| w == b"end\n").unwrap() + 4;
        let mut e = String::from_utf8(empty[..header_end].to_vec()).unwrap();
        e = e.replacen("frames 1", "frames 0", 1);
        let err = decode_motion(e.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("at least 1"), "{err}");
    }

    #[test]
    fn csv_has_one_row_per_frame() {
        let s = seq(4);
        let csv = motion_to_csv(&s);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].starts_with("joint_0_x,joint_0_y,joint_0_z,joint_1_x"));
        let first: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(first.as_slice(), s.frame(0));
    }

    #[test]
    fn audio_round_trip_and_csv_import() {
        let a = AudioFeatureSequence::new(vec![0.1, 0.2, 0.3, 0.4], 2, 2, 50.0).unwrap();
        assert_eq!(decode_audio(&encode_audio(&a)).unwrap(), a);
        let csv = "c0,c1\n0.1,0.2\n0.3,0.4\n";
        assert_eq!(audio_from_csv(csv, 50.0).unwrap(), a);
        assert!(audio_from_csv("1,2\n3\n", 50.0).is_err());
    }
}
