//! Wavefront OBJ output with canonical number formatting.

use std::fmt::Write as _;

use crate::geometry::Mesh;

/// Rounds to 9 significant digits and prints the shortest text that reads
/// back to the rounded value. Negative zero prints as `0`.
pub fn canonical_number(x: f64) -> String {
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        return "0".to_string();
    }
    format!("{rounded}")
}

/// OBJ text: a comment line naming the object, then `v` and `f` records
/// (1-based indices).
pub fn to_obj(mesh: &Mesh, name: &str) -> String {
    let mut out = String::with_capacity(32 * (mesh.vertices.len() + mesh.faces.len()) + 64);
    let _ = writeln!(out, "# {name}");
    let _ = writeln!(out, "o {name}");
    for v in &mesh.vertices {
        let _ = writeln!(
            out,
            "v {} {} {}",
            canonical_number(v[0]),
            canonical_number(v[1]),
            canonical_number(v[2])
        );
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

#[derive(Debug, thiserror::Error)]
#[error("OBJ line {line}: {message}")]
pub struct ObjError {
    pub line: usize,
    pub message: String,
}

/// Reads the `v`/`f` subset written by [`to_obj`]. Polygon faces are fanned.
pub fn parse_obj(text: &str) -> Result<Mesh, ObjError> {
    let mut mesh = Mesh::default();
    for (i, raw) in text.lines().enumerate() {
        let err = |message: &str| ObjError {
            line: i + 1,
            message: message.to_string(),
        };
        let mut parts = raw.split_whitespace();
        match parts.next() {
            Some("v") => {
                let c: Vec<f64> = parts
                    .take(3)
                    .map(|t| t.parse().map_err(|_| err("bad coordinate")))
                    .collect::<Result<_, _>>()?;
                if c.len() != 3 {
                    return Err(err("vertex needs three coordinates"));
                }
                mesh.vertices.push([c[0], c[1], c[2]]);
            }
            Some("f") => {
                let idx: Vec<u32> = parts
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        match head.parse::<u32>() {
                            Ok(k) if k >= 1 => Ok(k - 1),
                            _ => Err(err("bad face index")),
                        }
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(err("face needs at least three vertices"));
                }
                for k in 1..idx.len() - 1 {
                    mesh.faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn number_formatting() {
        assert_eq!(canonical_number(0.5), "0.5");
        assert_eq!(canonical_number(-0.0), "0");
        assert_eq!(canonical_number(0.1 + 0.2), "0.3");
        assert_eq!(canonical_number(1.0 / 3.0), "0.333333333");
        assert_eq!(canonical_number(-0.23000000000000001), "-0.23");
        assert_eq!(canonical_number(1e-12), "0.000000000001");
        assert_eq!(canonical_number(123456789.4), "123456789");
    }

    #[test]
    fn round_trip() {
        let m = crate::geometry::make_cuboid([0.5, 0.04, 0.6]).unwrap();
        let text = to_obj(&m, "board");
        assert!(text.starts_with("# board\no board\nv -0.25 -0.02 -0.3\n"));
        let back = parse_obj(&text).unwrap();
        assert_eq!(back, m);
        assert!(parse_obj("v 1 2\n").is_err());
        assert!(parse_obj("v 0 0 0\nf 0 1 2\n").is_err());
    }

    proptest! {
        #[test]
        fn nine_significant_digits(x in -1e3f64..1e3) {
            let y: f64 = canonical_number(x).parse().unwrap();
            prop_assert!((x - y).abs() <= 5e-9 * x.abs().max(f64::MIN_POSITIVE));
            prop_assert_eq!(canonical_number(y), canonical_number(x));
        }
    }
}
