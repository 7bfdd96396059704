//! Field files, CSV dumps and JSON domain configs.
//!
//! Fields use the AFG1 layout: the 8-byte magic `AFGRID1\0`, then
//! little-endian `u32` dim, `u32` count per axis, `f64` spacing, `f64`
//! origin per axis and the `f64` values in row-major order (last axis
//! fastest).

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::Weights;
use crate::grid::{DomainMask, GridFunction, GridSpec, Shape};

pub const AFG1_MAGIC: &[u8; 8] = b"AFGRID1\0";

/// Serialize `u` as AFG1.
pub fn write_afg1(u: &GridFunction, mut out: impl Write) -> Result<()> {
    let spec = u.spec();
    out.write_all(AFG1_MAGIC)?;
    out.write_all(&(spec.dim() as u32).to_le_bytes())?;
    for &n in spec.shape() {
        let n = u32::try_from(n).map_err(|_| Error::Format(format!("axis count {n} exceeds u32")))?;
        out.write_all(&n.to_le_bytes())?;
    }
    out.write_all(&spec.spacing().to_le_bytes())?;
    for &o in spec.origin() {
        out.write_all(&o.to_le_bytes())?;
    }
    for &v in u.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_array<const N: usize>(input: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated while reading {what}")),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

/// Parse an AFG1 stream. Trailing bytes are an error.
pub fn read_afg1(mut input: impl Read) -> Result<GridFunction> {
    let magic: [u8; 8] = read_array(&mut input, "magic")?;
    if &magic != AFG1_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let dim = u32::from_le_bytes(read_array(&mut input, "dim")?) as usize;
    if !(2..=3).contains(&dim) {
        return Err(Error::Format(format!("unsupported dim {dim}")));
    }
    let shape = (0..dim)
        .map(|_| Ok(u32::from_le_bytes(read_array(&mut input, "axis counts")?) as usize))
        .collect::<Result<Vec<_>>>()?;
    let spacing = f64::from_le_bytes(read_array(&mut input, "spacing")?);
    let origin = (0..dim)
        .map(|_| Ok(f64::from_le_bytes(read_array(&mut input, "origin")?)))
        .collect::<Result<Vec<_>>>()?;
    let spec = GridSpec::new(shape, spacing, origin).map_err(|e| Error::Format(e.to_string()))?;
    let mut values = Vec::with_capacity(spec.len());
    for _ in 0..spec.len() {
        values.push(f64::from_le_bytes(read_array(&mut input, "values")?));
    }
    if input.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes after values".into()));
    }
    GridFunction::new(spec, values).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_afg1(u: &GridFunction, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_afg1(u, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_afg1(path: impl AsRef<Path>) -> Result<GridFunction> {
    read_afg1(BufReader::new(File::open(path)?))
}

/// One line per cell, `i,j[,k],value`, after a header line.
pub fn field_to_csv(u: &GridFunction) -> String {
    let spec = u.spec();
    let dim = spec.dim();
    let axes = ["i", "j", "k"];
    let mut out = format!("{},value\n", axes[..dim].join(","));
    for (idx, v) in u.values().iter().enumerate() {
        let ijk = spec.unravel(idx);
        for c in &ijk[..dim] {
            let _ = write!(out, "{c},");
        }
        let _ = writeln!(out, "{v:e}");
    }
    out
}

/// Domain description read from JSON. Which keys are required depends on
/// `shape`; unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    /// `square`, `disk`, `box`, `ball`, `ellipsoid` or `polygon`.
    pub shape: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Rows of the ellipsoid map.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<[f64; 2]>>,
    /// Full side lengths of a box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extents: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_const: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_const: Option<f64>,
}

fn require<T: Clone>(value: &Option<T>, key: &str, shape: &str) -> Result<T> {
    value.clone().ok_or_else(|| Error::Config(format!("shape '{shape}' requires key '{key}'")))
}

impl DomainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("domain config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Build the shape, checking that exactly the keys it uses are present.
    pub fn to_shape(&self) -> Result<Shape> {
        let s = self.shape.as_str();
        let allowed: &[&str] = match s {
            "square" | "disk" => &["center"],
            "box" => &["center", "extents"],
            "ball" => &["center", "radius"],
            "ellipsoid" => &["center", "matrix"],
            "polygon" => &["vertices"],
            _ => {
                return Err(Error::Config(format!(
                    "unknown shape '{s}' (expected square, disk, box, ball, ellipsoid or polygon)"
                )))
            }
        };
        let present = [
            ("center", self.center.is_some()),
            ("radius", self.radius.is_some()),
            ("matrix", self.matrix.is_some()),
            ("vertices", self.vertices.is_some()),
            ("extents", self.extents.is_some()),
        ];
        if let Some((key, _)) = present.iter().find(|(k, p)| *p && !allowed.contains(k)) {
            return Err(Error::Config(format!("key '{key}' does not apply to shape '{s}'")));
        }
        let shape = match s {
            "square" => Shape::Box {
                center: self.center.clone().unwrap_or_else(|| vec![0.5, 0.5]),
                extents: vec![1.0, 1.0],
            },
            "disk" => Shape::Ball { center: self.center.clone().unwrap_or_else(|| vec![0.0, 0.0]), radius: 1.0 },
            "box" => Shape::Box { center: require(&self.center, "center", s)?, extents: require(&self.extents, "extents", s)? },
            "ball" => Shape::Ball { center: require(&self.center, "center", s)?, radius: require(&self.radius, "radius", s)? },
            "ellipsoid" => Shape::Ellipsoid {
                center: require(&self.center, "center", s)?,
                matrix: require(&self.matrix, "matrix", s)?,
            },
            _ => Shape::Polygon { vertices: require(&self.vertices, "vertices", s)? },
        };
        // surfaces malformed geometry as a config error
        shape.bounding_box().map_err(|e| Error::Config(e.to_string()))?;
        Ok(shape)
    }
}

/// Weights from optional AFG1 fields and constants. A field takes precedence
/// over the constant; `b` on a boundary face is read from the face's inside
/// cell.
pub fn weights_from_sources(
    mask: &DomainMask,
    a_field: Option<&GridFunction>,
    b_field: Option<&GridFunction>,
    a_const: f64,
    b_const: f64,
) -> Result<Weights> {
    for f in [a_field, b_field].into_iter().flatten() {
        if f.spec() != mask.spec() {
            return Err(Error::GridMismatch("weight field grid differs from the domain grid".into()));
        }
    }
    let a = match a_field {
        Some(f) => f.values().to_vec(),
        None => vec![a_const; mask.spec().len()],
    };
    let b = match b_field {
        Some(f) => mask.faces().iter().map(|face| f.values()[face.cell]).collect(),
        None => vec![b_const; mask.faces().len()],
    };
    Weights::new(mask, a, b, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_mask;

    #[test]
    fn afg1_header_layout() {
        let spec = GridSpec::new(vec![4, 5], 0.5, vec![-1.0, 2.0]).unwrap();
        let u = GridFunction::from_fn(&spec, |x| x[0] + 10.0 * x[1]);
        let mut buf = Vec::new();
        write_afg1(&u, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 2 * 4 + 8 + 2 * 8 + 20 * 8);
        assert_eq!(&buf[..8], b"AFGRID1\0");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 5);
        assert_eq!(f64::from_le_bytes(buf[20..28].try_into().unwrap()), 0.5);
        // row-major: value 1 is cell (0, 1)
        let v1 = f64::from_le_bytes(buf[44 + 8..44 + 16].try_into().unwrap());
        assert_eq!(v1, u.values()[spec.ravel([0, 1, 0])]);
    }

    #[test]
    fn afg1_rejects_corruption() {
        let spec = GridSpec::new(vec![4, 4], 1.0, vec![0.0, 0.0]).unwrap();
        let mut buf = Vec::new();
        write_afg1(&GridFunction::zeros(&spec), &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_afg1(&bad[..]), Err(Error::Format(_))));
        assert!(matches!(read_afg1(&buf[..buf.len() - 1]), Err(Error::Format(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_afg1(&long[..]), Err(Error::Format(_))));
    }

    #[test]
    fn csv_lines() {
        let spec = GridSpec::new(vec![4, 4], 1.0, vec![0.0, 0.0]).unwrap();
        let u = GridFunction::new(spec, (0..16).map(|k| k as f64 / 2.0).collect()).unwrap();
        let csv = field_to_csv(&u);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 17);
        assert_eq!(&lines[..3], ["i,j,value", "0,0,0e0", "0,1,5e-1"]);
        assert_eq!(lines[16], "3,3,7.5e0");
    }

    #[test]
    fn config_parsing() {
        let c = DomainConfig::from_json(r#"{"shape": "ball", "center": [0, 0], "radius": 2}"#).unwrap();
        assert_eq!(c.to_shape().unwrap(), Shape::Ball { center: vec![0.0, 0.0], radius: 2.0 });
        let sq = DomainConfig::from_json(r#"{"shape": "square", "a_const": 1.5}"#).unwrap();
        assert_eq!(sq.to_shape().unwrap(), Shape::unit_square());
        assert_eq!(sq.a_const, Some(1.5));

        let unknown = DomainConfig::from_json(r#"{"shape": "square", "colour": 1}"#).unwrap_err();
        assert!(unknown.to_string().contains("colour"), "{unknown}");
        let missing = DomainConfig::from_json(r#"{"shape": "ball", "center": [0, 0]}"#).unwrap();
        assert!(missing.to_shape().unwrap_err().to_string().contains("radius"));
        let stray = DomainConfig::from_json(r#"{"shape": "ball", "center": [0, 0], "radius": 1, "extents": [1]}"#)
            .unwrap();
        assert!(stray.to_shape().unwrap_err().to_string().contains("extents"));
        let singular =
            DomainConfig::from_json(r#"{"shape": "ellipsoid", "center": [0, 0], "matrix": [[1, 0], [0, 0]]}"#)
                .unwrap();
        assert!(matches!(singular.to_shape(), Err(Error::Config(_))));
    }

    #[test]
    fn weights_from_fields_and_constants() {
        let shape = Shape::unit_square();
        let mask = make_mask(&GridSpec::around(&shape, 8).unwrap(), &shape).unwrap();
        let w = weights_from_sources(&mask, None, None, -1.0, 0.5).unwrap();
        assert!(w.a().iter().all(|&a| a == -1.0) && w.b().iter().all(|&b| b == 0.5));

        let field = GridFunction::from_fn(mask.spec(), |x| x[0] - 10.0);
        assert!(weights_from_sources(&mask, None, Some(&field), 0.0, 9.0).is_err());
        let positive = field.map(|v| v.abs());
        let w = weights_from_sources(&mask, Some(&positive), Some(&positive), 0.0, 0.0).unwrap();
        for (face, b) in mask.faces().iter().zip(w.b()) {
            assert_eq!(*b, positive.values()[face.cell]);
        }
        assert_eq!(w.a(), positive.values());
    }
}
