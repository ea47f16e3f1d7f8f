//! ASCII PLY point clouds: `x`, `y`, `z` and optional `red`, `green`, `blue`.
//!
//! Only the `vertex` element is read; any other element is skipped by line
//! count. Color properties are 8-bit and linearized by `/255`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use super::init::ColoredPoint;
use crate::error::{Error, Result};

struct Element {
    name: String,
    count: usize,
    properties: Vec<String>,
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<Vec<ColoredPoint>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text).map_err(|(line, reason)| Error::Malformed {
        path: path.to_path_buf(),
        line,
        reason,
    })
}

pub fn parse_ply(text: &str) -> std::result::Result<Vec<ColoredPoint>, (usize, String)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err((1, "missing 'ply' magic".into())),
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut ended = false;
    for (n, line) in lines.by_ref() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => return Err((n, format!("unsupported format {other}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| (n, format!("bad element count {count}")))?,
                properties: Vec::new(),
            }),
            ["property", "list", ..] => match elements.last_mut() {
                Some(e) => e.properties.push("<list>".into()),
                None => return Err((n, "property before element".into())),
            },
            ["property", _ty, name] => match elements.last_mut() {
                Some(e) => e.properties.push(name.to_string()),
                None => return Err((n, "property before element".into())),
            },
            ["end_header"] => {
                ended = true;
                break;
            }
            _ => return Err((n, format!("unexpected header line {line:?}"))),
        }
    }
    if !ended {
        return Err((0, "missing end_header".into()));
    }
    let mut points = Vec::new();
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                lines.next().ok_or((0, format!("truncated {} element", el.name)))?;
            }
            continue;
        }
        let find = |name: &str| el.properties.iter().position(|p| p == name);
        let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => return Err((0, "vertex element lacks x, y or z".into())),
        };
        let rgb = match (find("red"), find("green"), find("blue")) {
            (Some(r), Some(g), Some(b)) => Some([r, g, b]),
            _ => None,
        };
        for _ in 0..el.count {
            let (n, line) = lines.next().ok_or((0, "truncated vertex element".to_string()))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|w| w.parse::<f64>().map_err(|_| (n, format!("bad number {w:?}"))))
                .collect::<std::result::Result<_, _>>()?;
            if vals.len() < el.properties.len() {
                return Err((n, format!("expected {} values", el.properties.len())));
            }
            points.push(ColoredPoint {
                position: Vector3::new(vals[ix], vals[iy], vals[iz]),
                color: rgb.map(|c| c.map(|i| vals[i] / 255.0)),
            });
        }
    }
    Ok(points)
}

pub fn write_ply(points: &[ColoredPoint], path: impl AsRef<Path>) -> Result<()> {
    let with_color = points.iter().all(|p| p.color.is_some()) && !points.is_empty();
    let mut out = String::new();
    writeln!(out, "ply\nformat ascii 1.0\nelement vertex {}", points.len()).unwrap();
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    if with_color {
        out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    out.push_str("end_header\n");
    for p in points {
        write!(out, "{} {} {}", p.position.x, p.position.y, p.position.z).unwrap();
        if let (true, Some(c)) = (with_color, p.color) {
            let q = c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
            write!(out, " {} {} {}", q[0], q[1], q[2]).unwrap();
        }
        out.push('\n');
    }
    crate::image::write_atomic(path.as_ref(), out.as_bytes())
}
