//! ASCII PLY and XYZ point-cloud files.
//!
//! Values are written with 9 significant digits, so write → read → write is
//! byte-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

/// Formats `v` like C's `%.9g`.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        trim_zeros(&fixed).to_string()
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_ply_string(cloud: &PointCloud) -> String {
    ply_string(cloud, format_sig9)
}

/// PLY text with every coordinate in shortest round-trip form, so reading
/// it back reproduces the cloud bit for bit.
pub fn write_ply_exact_string(cloud: &PointCloud) -> String {
    ply_string(cloud, |v| format!("{v:?}"))
}

fn ply_string(cloud: &PointCloud, fmt: fn(f64) -> String) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    for axis in ["x", "y", "z"] {
        let _ = writeln!(out, "property double {axis}");
    }
    if cloud.normals().is_some() {
        for axis in ["nx", "ny", "nz"] {
            let _ = writeln!(out, "property double {axis}");
        }
    }
    out.push_str("end_header\n");
    write_rows(&mut out, cloud, fmt);
    out
}

pub fn write_xyz_string(cloud: &PointCloud) -> String {
    let mut out = String::new();
    write_rows(&mut out, cloud, format_sig9);
    out
}

fn write_rows(out: &mut String, cloud: &PointCloud, fmt: fn(f64) -> String) {
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = write!(
            out,
            "{} {} {}",
            fmt(p.x),
            fmt(p.y),
            fmt(p.z)
        );
        if let Some(n) = cloud.normals() {
            let n = &n[i];
            let _ = write!(
                out,
                " {} {} {}",
                fmt(n.x),
                fmt(n.y),
                fmt(n.z)
            );
        }
        out.push('\n');
    }
}

pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    fs::write(path, write_ply_string(cloud))?;
    Ok(())
}

pub fn write_ply_exact(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    fs::write(path, write_ply_exact_string(cloud))?;
    Ok(())
}

pub fn write_xyz(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    fs::write(path, write_xyz_string(cloud))?;
    Ok(())
}

/// Reads a PLY or XYZ file, chosen by extension (`.ply`, anything else is XYZ).
pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let is_ply = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("ply"))
        .unwrap_or(false);
    if is_ply {
        parse_ply(&text)
    } else {
        parse_xyz(&text)
    }
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<String>,
}

pub fn parse_ply(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(Error::parse("ply header", 1, "missing `ply` magic")),
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut header_end = None;
    for (i, line) in lines.by_ref() {
        let lineno = i + 1;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(Error::parse(
                        "ply header",
                        lineno,
                        "only ascii PLY is supported",
                    ));
                }
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tok
                    .next()
                    .ok_or_else(|| Error::parse("ply header", lineno, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::parse("ply header", lineno, "bad element count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| {
                    Error::parse("ply header", lineno, "property before any element")
                })?;
                let rest: Vec<&str> = tok.collect();
                let name = rest
                    .last()
                    .ok_or_else(|| Error::parse("ply header", lineno, "property without name"))?;
                el.properties.push(name.to_string());
            }
            Some("end_header") => {
                header_end = Some(lineno);
                break;
            }
            Some(other) => {
                return Err(Error::parse(
                    "ply header",
                    lineno,
                    format!("unexpected keyword `{other}`"),
                ))
            }
        }
    }
    let mut lineno = header_end.ok_or_else(|| Error::parse("ply header", 0, "no end_header"))?;

    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut has_normals = false;
    for el in &elements {
        let what = format!("element {}", el.name);
        if el.name != "vertex" {
            for _ in 0..el.count {
                if lines.next().is_none() {
                    return Err(Error::parse(what, lineno + 1, "unexpected end of file"));
                }
                lineno += 1;
            }
            continue;
        }
        let col = |n: &str| el.properties.iter().position(|p| p == n);
        let (x, y, z) = match (col("x"), col("y"), col("z")) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => return Err(Error::parse(what, lineno, "vertex lacks x/y/z properties")),
        };
        let nrm = match (col("nx"), col("ny"), col("nz")) {
            (Some(a), Some(b), Some(c)) => Some((a, b, c)),
            _ => None,
        };
        has_normals = nrm.is_some();
        points.reserve(el.count);
        for row in 0..el.count {
            let (_, line) = lines.next().ok_or_else(|| {
                Error::parse(
                    what.clone(),
                    lineno + 1,
                    format!("element {} expected {} rows, file ends after {row}", el.name, el.count),
                )
            })?;
            lineno += 1;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(what.clone(), lineno, e.to_string()))?;
            if vals.len() < el.properties.len() {
                return Err(Error::parse(
                    what,
                    lineno,
                    format!("expected {} values, found {}", el.properties.len(), vals.len()),
                ));
            }
            points.push(Point::new(vals[x], vals[y], vals[z]));
            if let Some((a, b, c)) = nrm {
                normals.push(unit_normal(Point::new(vals[a], vals[b], vals[c]), &what, lineno)?);
            }
        }
    }
    if has_normals {
        PointCloud::with_normals(points, normals)
    } else {
        PointCloud::new(points)
    }
}

pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut columns = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse("xyz", lineno, e.to_string()))?;
        if vals.len() != 3 && vals.len() != 6 {
            return Err(Error::parse(
                "xyz",
                lineno,
                format!("expected 3 or 6 columns, found {}", vals.len()),
            ));
        }
        match columns {
            None => columns = Some(vals.len()),
            Some(c) if c != vals.len() => {
                return Err(Error::parse("xyz", lineno, "inconsistent column count"))
            }
            _ => {}
        }
        points.push(Point::new(vals[0], vals[1], vals[2]));
        if vals.len() == 6 {
            normals.push(unit_normal(Point::new(vals[3], vals[4], vals[5]), "xyz", lineno)?);
        }
    }
    if columns == Some(6) {
        PointCloud::with_normals(points, normals)
    } else {
        PointCloud::new(points)
    }
}

// Files carry limited precision. Normals already unit to within the cloud
// tolerance are kept verbatim so that rewrites are byte-stable.
fn unit_normal(n: Point, what: &str, line: usize) -> Result<Point> {
    let len = n.norm();
    if !(len > 0.0) || (len - 1.0).abs() > 1e-3 {
        return Err(Error::parse(what, line, format!("normal has length {len}")));
    }
    if (len - 1.0).abs() <= 1e-7 {
        return Ok(n);
    }
    Ok(n / len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(1.0), "1");
        assert_eq!(format_sig9(-0.5), "-0.5");
        assert_eq!(format_sig9(0.1234567891234), "0.123456789");
        assert_eq!(format_sig9(123456789.4), "123456789");
        assert_eq!(format_sig9(1.5e-7), "1.5e-07");
        assert_eq!(format_sig9(2.5e12), "2.5e+12");
    }

    #[test]
    fn ply_with_normals_and_faces() {
        let text = "ply\nformat ascii 1.0\ncomment test\nelement vertex 2\n\
                    property float x\nproperty float y\nproperty float z\n\
                    property float nx\nproperty float ny\nproperty float nz\n\
                    property uchar red\n\
                    element face 1\nproperty list uchar int vertex_indices\nend_header\n\
                    0 0 0 0 0 1 255\n1 2 3 1 0 0 12\n3 0 1 1\n";
        let c = parse_ply(text).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.point(1), &Point::new(1.0, 2.0, 3.0));
        assert_eq!(c.normals().unwrap()[0], Point::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn truncated_ply_names_element() {
        let text = "ply\nformat ascii 1.0\nelement vertex 3\nproperty double x\n\
                    property double y\nproperty double z\nend_header\n0 0 0\n1 1 1\n";
        match parse_ply(text) {
            Err(Error::Parse { what, message, .. }) => {
                assert_eq!(what, "element vertex");
                assert!(message.contains("expected 3 rows"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn binary_ply_rejected() {
        let text = "ply\nformat binary_little_endian 1.0\nend_header\n";
        assert!(matches!(parse_ply(text), Err(Error::Parse { .. })));
    }

    #[test]
    fn xyz_column_errors() {
        assert!(parse_xyz("1 2\n").is_err());
        assert!(parse_xyz("1 2 3\n1 2 3 0 0 1\n").is_err());
        assert_eq!(parse_xyz("# c\n1 2 3\n\n4 5 6\n").unwrap().len(), 2);
    }

    fn cloud_strategy() -> impl Strategy<Value = PointCloud> {
        prop::collection::vec(
            (
                prop::array::uniform3(-1e4f64..1e4),
                prop::array::uniform3(-1.0f64..1.0),
            ),
            1..40,
        )
        .prop_filter_map("nonzero normals", |rows| {
            let mut pts = Vec::new();
            let mut nrm = Vec::new();
            for (p, n) in rows {
                let n = Point::from(n);
                if n.norm() < 1e-3 {
                    return None;
                }
                pts.push(Point::from(p));
                nrm.push(n.normalize());
            }
            PointCloud::with_normals(pts, nrm).ok()
        })
    }

    proptest! {
        #[test]
        fn ply_bytes_round_trip(c in cloud_strategy()) {
            let first = write_ply_string(&c);
            let again = write_ply_string(&parse_ply(&first).unwrap());
            prop_assert_eq!(first, again);
        }

        #[test]
        fn xyz_bytes_round_trip(c in cloud_strategy()) {
            let c = c.without_normals();
            let first = write_xyz_string(&c);
            let again = write_xyz_string(&parse_xyz(&first).unwrap());
            prop_assert_eq!(first, again);
        }
    }
}
