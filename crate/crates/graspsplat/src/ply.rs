//! Gaussian clouds as binary little-endian PLY in the common splatting
//! layout: `x y z nx ny nz f_dc_0..2 f_rest_* opacity scale_0..2 rot_0..3`,
//! all `float`. Scales are stored as logs and opacity as a logit. Clouds
//! with birth bones add a trailing `uint bone_id`.

use std::path::Path;

use graspsplat_core::gaussian::GaussianCloud;
use graspsplat_core::sh;

use crate::error::{Error, Result};
use crate::fsio::read_bytes;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Header {
    count: usize,
    props: Vec<(String, Scalar)>,
    body: usize,
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    let bad = |m: &str| Error::format(path, m.to_string());
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| bad("no end_header line"))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8"))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing `ply` magic"));
    }
    let mut format_ok = false;
    let mut count = None;
    let mut props = Vec::new();
    let mut in_vertex = false;
    for line in lines {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "binary_little_endian", "1.0"] => format_ok = true,
            ["format", other, ..] => return Err(bad(&format!("unsupported format `{other}`"))),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?);
                in_vertex = true;
            }
            ["element", name, _] => {
                if count.is_some() {
                    return Err(bad(&format!("unsupported element `{name}` after vertices")));
                }
                return Err(bad(&format!("unsupported element `{name}`")));
            }
            ["property", "list", ..] => return Err(bad("list properties are not supported")),
            ["property", ty, name] => {
                if !in_vertex {
                    return Err(bad("property before element"));
                }
                let t = Scalar::parse(ty).ok_or_else(|| bad(&format!("unknown property type `{ty}`")))?;
                props.push((name.to_string(), t));
            }
            _ => return Err(bad(&format!("unrecognized header line `{line}`"))),
        }
    }
    if !format_ok {
        return Err(bad("missing binary_little_endian format line"));
    }
    let count = count.ok_or_else(|| bad("no vertex element"))?;
    Ok(Header { count, props, body: end + marker.len() })
}

pub fn read_ply(path: &Path) -> Result<GaussianCloud> {
    decode_ply(path, &read_bytes(path)?)
}

/// Parses PLY bytes; `path` only labels errors.
pub fn decode_ply(path: &Path, bytes: &[u8]) -> Result<GaussianCloud> {
    let h = parse_header(path, bytes)?;
    let stride: usize = h.props.iter().map(|(_, t)| t.size()).sum();
    let body = &bytes[h.body..];
    if body.len() != stride * h.count {
        return Err(Error::format(
            path,
            format!("expected {} bytes of vertex data, found {}", stride * h.count, body.len()),
        ));
    }
    let mut offsets = std::collections::HashMap::new();
    let mut at = 0;
    for (name, t) in &h.props {
        if offsets.insert(name.as_str(), (at, *t)).is_some() {
            return Err(Error::format(path, format!("duplicate property `{name}`")));
        }
        at += t.size();
    }
    let find = |name: &str| {
        offsets.get(name).copied().ok_or_else(|| Error::MissingProperty { path: path.to_path_buf(), name: name.into() })
    };
    let rest = (0..).take_while(|k| offsets.contains_key(format!("f_rest_{k}").as_str())).count();
    let degree = (0..=sh::MAX_DEGREE)
        .find(|d| 3 * (sh::coeff_count(*d) - 1) == rest)
        .ok_or_else(|| Error::format(path, format!("{rest} f_rest properties match no SH degree")))?;
    let coeffs = sh::coeff_count(degree);
    let named = |names: &[String]| names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>();
    let list = |prefix: &str, n: usize| (0..n).map(|k| format!("{prefix}{k}")).collect::<Vec<_>>();
    let pos = named(&["x".into(), "y".into(), "z".into()])?;
    let dc = named(&list("f_dc_", 3))?;
    let rest_cols = named(&list("f_rest_", rest))?;
    let opacity = find("opacity")?;
    let scale = named(&list("scale_", 3))?;
    let rot = named(&list("rot_", 4))?;
    let bone = offsets.get("bone_id").copied();

    let mut cloud = GaussianCloud::empty(degree);
    let mut bones = Vec::new();
    for v in 0..h.count {
        let row = &body[v * stride..(v + 1) * stride];
        let get = |(o, t): (usize, Scalar)| t.read(&row[o..]);
        cloud.positions.push([get(pos[0]), get(pos[1]), get(pos[2])]);
        cloud.rotations.push([get(rot[0]), get(rot[1]), get(rot[2]), get(rot[3])]);
        cloud.log_scales.push([get(scale[0]), get(scale[1]), get(scale[2])]);
        cloud.opacity_logits.push(get(opacity));
        for k in 0..coeffs {
            for c in 0..3 {
                let v = if k == 0 { get(dc[c]) } else { get(rest_cols[c * (coeffs - 1) + k - 1]) };
                cloud.sh.push(v);
            }
        }
        if let Some(b) = bone {
            bones.push(get(b) as u32);
        }
    }
    if bone.is_some() {
        cloud.bone_ids = Some(bones);
    }
    let finite = |v: &f64| v.is_finite();
    if !(cloud.positions.iter().flatten().all(finite)
        && cloud.log_scales.iter().flatten().all(finite)
        && cloud.opacity_logits.iter().all(finite)
        && cloud.sh.iter().all(finite))
    {
        return Err(Error::format(path, "non-finite vertex value"));
    }
    if let Some(i) = cloud.rotations.iter().position(|q| !(q.iter().map(|v| v * v).sum::<f64>() > 0.0)) {
        return Err(Error::format(path, format!("vertex {i} has a zero or non-finite rotation")));
    }
    Ok(cloud)
}

pub fn encode_ply(cloud: &GaussianCloud) -> Vec<u8> {
    let coeffs = cloud.sh_coeffs();
    let rest = 3 * (coeffs - 1);
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header += &format!("element vertex {}\n", cloud.len());
    for name in ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"] {
        header += &format!("property float {name}\n");
    }
    for k in 0..rest {
        header += &format!("property float f_rest_{k}\n");
    }
    for name in ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"] {
        header += &format!("property float {name}\n");
    }
    if cloud.bone_ids.is_some() {
        header += "property uint bone_id\n";
    }
    header += "end_header\n";
    let stride = 4 * (17 + rest) + if cloud.bone_ids.is_some() { 4 } else { 0 };
    let mut out = header.into_bytes();
    out.reserve(stride * cloud.len());
    let put = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
    for i in 0..cloud.len() {
        let s = cloud.sh_of(i);
        for v in cloud.positions[i] {
            put(&mut out, v);
        }
        for _ in 0..3 {
            put(&mut out, 0.0);
        }
        for c in 0..3 {
            put(&mut out, s[c]);
        }
        for c in 0..3 {
            for k in 1..coeffs {
                put(&mut out, s[3 * k + c]);
            }
        }
        put(&mut out, cloud.opacity_logits[i]);
        for v in cloud.log_scales[i] {
            put(&mut out, v);
        }
        for v in cloud.rotations[i] {
            put(&mut out, v);
        }
        if let Some(b) = &cloud.bone_ids {
            out.extend_from_slice(&b[i].to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use graspsplat_core::synthetic::random_splat_scene;
    use std::path::PathBuf;

    fn f32_round(cloud: &GaussianCloud) -> GaussianCloud {
        let r = |v: f64| v as f32 as f64;
        let mut c = cloud.clone();
        c.positions.iter_mut().flatten().for_each(|v| *v = r(*v));
        c.rotations.iter_mut().flatten().for_each(|v| *v = r(*v));
        c.log_scales.iter_mut().flatten().for_each(|v| *v = r(*v));
        c.opacity_logits.iter_mut().for_each(|v| *v = r(*v));
        c.sh.iter_mut().for_each(|v| *v = r(*v));
        c
    }

    #[test]
    fn round_trip_every_degree() {
        let p = PathBuf::from("mem.ply");
        for degree in 0..=3 {
            let scene = random_splat_scene(degree as u64, 7, degree, degree % 2 == 1, 8, 8);
            let mut cloud = scene.cloud;
            if degree == 2 {
                cloud.bone_ids = Some((0..cloud.len() as u32).collect());
            }
            let bytes = encode_ply(&cloud);
            let back = decode_ply(&p, &bytes).unwrap();
            assert_eq!(back, f32_round(&cloud));
            assert_eq!(encode_ply(&back), bytes);
        }
    }

    #[test]
    fn empty_cloud() {
        let bytes = encode_ply(&GaussianCloud::empty(3));
        assert!(std::str::from_utf8(&bytes).unwrap().contains("element vertex 0\n"));
        let back = decode_ply(Path::new("e.ply"), &bytes).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.sh_degree, 3);
    }

    #[test]
    fn missing_property_is_named() {
        let cloud = random_splat_scene(1, 3, 0, false, 8, 8).cloud;
        let bytes = encode_ply(&cloud);
        let text_end = bytes.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
        let header = std::str::from_utf8(&bytes[..text_end]).unwrap().replace("property float opacity\n", "");
        let stride = 4 * 17;
        let mut body = Vec::new();
        for v in 0..3 {
            let row = &bytes[text_end + v * stride..text_end + (v + 1) * stride];
            body.extend_from_slice(&row[..4 * 9]);
            body.extend_from_slice(&row[4 * 10..]);
        }
        let mut corrupt = header.into_bytes();
        corrupt.extend_from_slice(&body);
        match decode_ply(Path::new("c.ply"), &corrupt) {
            Err(Error::MissingProperty { name, .. }) => assert_eq!(name, "opacity"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_body_is_rejected() {
        let cloud = random_splat_scene(2, 3, 1, false, 8, 8).cloud;
        let bytes = encode_ply(&cloud);
        assert!(matches!(decode_ply(Path::new("t.ply"), &bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
        assert!(decode_ply(Path::new("t.ply"), b"not a ply").is_err());
    }
}
