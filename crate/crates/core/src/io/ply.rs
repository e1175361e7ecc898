use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use nalgebra::{Vector3, Vector4};
use ply_rs::parser::Parser;
use ply_rs::ply::{
    Addable, DefaultElement, ElementDef, Encoding, Ply, Property, PropertyDef, PropertyType, ScalarType,
};
use ply_rs::writer::Writer;

use crate::error::{Error, Result};
use crate::model::{Gaussian, ObjectIds};

/// One imported structure-from-motion point.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub position: Vector3<f64>,
    /// RGB in `[0, 1]`.
    pub color: [f64; 3],
}

fn scalar(p: &Property) -> Option<f64> {
    Some(match *p {
        Property::Char(v) => v as f64,
        Property::UChar(v) => v as f64,
        Property::Short(v) => v as f64,
        Property::UShort(v) => v as f64,
        Property::Int(v) => v as f64,
        Property::UInt(v) => v as f64,
        Property::Float(v) => v as f64,
        Property::Double(v) => v,
        _ => return None,
    })
}

fn field(e: &DefaultElement, names: &[&str]) -> Option<(f64, bool)> {
    names.iter().find_map(|n| {
        e.get(*n).and_then(|p| {
            let integer = !matches!(p, Property::Float(_) | Property::Double(_));
            scalar(p).map(|v| (v, integer))
        })
    })
}

fn parse(path: &Path) -> Result<Vec<DefaultElement>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let ply = Parser::<DefaultElement>::new()
        .read_ply(&mut BufReader::new(file))
        .map_err(|e| Error::format("ply", format!("{}: {e}", path.display())))?;
    ply.payload
        .get("vertex")
        .cloned()
        .ok_or_else(|| Error::format("ply", format!("{}: no vertex element", path.display())))
}

fn require(e: &DefaultElement, names: &[&str], i: usize) -> Result<f64> {
    field(e, names)
        .map(|(v, _)| v)
        .ok_or_else(|| Error::format("ply", format!("vertex {i} lacks property {}", names[0])))
}

/// Points with `x, y, z` and `red, green, blue` (or `r, g, b`). Integer colors are scaled
/// from `0..=255`, float colors taken as-is. Points without color are gray.
pub fn read_point_cloud(path: impl AsRef<Path>) -> Result<Vec<Point>> {
    let path = path.as_ref();
    let mut points = Vec::new();
    for (i, e) in parse(path)?.iter().enumerate() {
        let position = Vector3::new(
            require(e, &["x"], i)?,
            require(e, &["y"], i)?,
            require(e, &["z"], i)?,
        );
        let mut color = [0.5; 3];
        for (c, names) in [["red", "r"], ["green", "g"], ["blue", "b"]].iter().enumerate() {
            if let Some((v, integer)) = field(e, names) {
                color[c] = if integer { v / 255.0 } else { v };
            }
        }
        points.push(Point { position, color });
    }
    Ok(points)
}

fn element_def(name: &str, props: &[(&str, ScalarType)]) -> ElementDef {
    let mut def = ElementDef::new(name.to_string());
    for (p, t) in props {
        def.properties
            .add(PropertyDef::new(p.to_string(), PropertyType::Scalar(t.clone())));
    }
    def
}

fn write_ply(out: &mut impl Write, def: ElementDef, rows: Vec<DefaultElement>) -> Result<()> {
    let mut ply = Ply::<DefaultElement>::new();
    ply.header.encoding = Encoding::BinaryLittleEndian;
    let name = def.name.clone();
    ply.header.elements.add(def);
    ply.payload.insert(name, rows);
    Writer::new()
        .write_ply(out, &mut ply)
        .map_err(|e| Error::format("ply", e.to_string()))?;
    Ok(())
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map_err(|e| Error::io(path, e))
}

/// Binary PLY with float positions and 8-bit colors, as structure-from-motion tools emit.
pub fn write_point_cloud(path: impl AsRef<Path>, points: &[Point]) -> Result<()> {
    let def = element_def(
        "vertex",
        &[
            ("x", ScalarType::Float),
            ("y", ScalarType::Float),
            ("z", ScalarType::Float),
            ("red", ScalarType::UChar),
            ("green", ScalarType::UChar),
            ("blue", ScalarType::UChar),
        ],
    );
    let rows = points
        .iter()
        .map(|p| {
            let mut e = DefaultElement::new();
            for (k, v) in ["x", "y", "z"].iter().zip(p.position.iter()) {
                e.insert(k.to_string(), Property::Float(*v as f32));
            }
            for (k, v) in ["red", "green", "blue"].iter().zip(p.color) {
                e.insert(k.to_string(), Property::UChar((v.clamp(0.0, 1.0) * 255.0).round() as u8));
            }
            e
        })
        .collect();
    write_ply(&mut create(path.as_ref())?, def, rows)
}

const GAUSSIAN_DOUBLES: [&str; 14] = [
    "x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3", "scale_0", "scale_1", "scale_2", "opacity", "red",
    "green", "blue",
];
const GAUSSIAN_IDS: [&str; 3] = ["large_id", "middle_id", "small_id"];

/// Gaussians as binary PLY with double-precision parameters (log-scales, opacity logit,
/// linear RGB) and the three object ids, so a write/read cycle is exact.
pub fn write_gaussians_to(out: &mut impl Write, gaussians: &[Gaussian]) -> Result<()> {
    let mut props: Vec<(&str, ScalarType)> = GAUSSIAN_DOUBLES.iter().map(|n| (*n, ScalarType::Double)).collect();
    props.extend(GAUSSIAN_IDS.iter().map(|n| (*n, ScalarType::UInt)));
    let def = element_def("vertex", &props);
    let rows = gaussians
        .iter()
        .map(|g| {
            let mut e = DefaultElement::new();
            for (k, v) in GAUSSIAN_DOUBLES.iter().zip(g.params()) {
                e.insert(k.to_string(), Property::Double(v));
            }
            for (k, v) in GAUSSIAN_IDS.iter().zip([g.ids.large, g.ids.middle, g.ids.small]) {
                e.insert(k.to_string(), Property::UInt(v));
            }
            e
        })
        .collect();
    write_ply(out, def, rows)
}

pub fn write_gaussians(path: impl AsRef<Path>, gaussians: &[Gaussian]) -> Result<()> {
    write_gaussians_to(&mut create(path.as_ref())?, gaussians)
}

pub fn read_gaussians(path: impl AsRef<Path>) -> Result<Vec<Gaussian>> {
    let mut out = Vec::new();
    for (i, e) in parse(path.as_ref())?.iter().enumerate() {
        let mut p = [0.0; 14];
        for (k, name) in GAUSSIAN_DOUBLES.iter().enumerate() {
            p[k] = require(e, &[name], i)?;
        }
        let id = |name: &str| field(e, &[name]).map_or(0, |(v, _)| v as u32);
        let mut g = Gaussian::new(Vector3::zeros(), Vector3::zeros(), 1.0, 0.5);
        g.rotation = Vector4::new(1.0, 0.0, 0.0, 0.0);
        g.set_params(&p);
        g.ids = ObjectIds::new(id("large_id"), id("middle_id"), id("small_id"));
        out.push(g);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = Gaussian::new(Vector3::new(0.1, -2.0 / 3.0, 1e-9), Vector3::new(0.2, 0.3, 0.7), 0.013, 0.37)
            .with_ids(ObjectIds::new(4, 5, 6));
        g.rotation = Vector4::new(0.5, 0.5, -0.5, 0.5);
        let path = dir.path().join("g.ply");
        write_gaussians(&path, &[g.clone(), g.clone()]).unwrap();
        assert_eq!(read_gaussians(&path).unwrap(), vec![g.clone(), g]);
    }

    #[test]
    fn ascii_cloud_with_uchar_colors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n\
             property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n\
             1 2 3 255 0 51\n-1 0.5 0 0 0 0\n",
        )
        .unwrap();
        let pts = read_point_cloud(&path).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].position, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(pts[0].color, [1.0, 0.0, 0.2]);
    }

    #[test]
    fn missing_coordinate_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ply");
        std::fs::write(&path, "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n").unwrap();
        assert!(matches!(read_point_cloud(&path), Err(Error::Format { .. })));
    }
}
