//! Text readers and writers: XYZ and ASCII PLY clouds, PLY meshes, contour
//! polylines, paths, cost histories and trajectories.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a cloud
//! written and read back is bit-identical.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::mesher::{Polyline, TriangleMesh};
use crate::odometry::trajectory_line;
use crate::planner::Trajectory;
use crate::pose::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointFormat {
    Xyz,
    Ply,
}

impl PointFormat {
    /// `.ply` means PLY; anything else is read as XYZ.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("ply") => PointFormat::Ply,
            _ => PointFormat::Xyz,
        }
    }
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn load_point_cloud(path: &Path, format: PointFormat) -> Result<PointCloud> {
    let reader = BufReader::new(File::open(path)?);
    let mut cloud = match format {
        PointFormat::Xyz => read_xyz(reader)?,
        PointFormat::Ply => read_ply(reader)?,
    };
    cloud.source = Some(path.display().to_string());
    Ok(cloud)
}

/// Whitespace-separated `x y [z]` rows; blank lines and `#` comments are
/// skipped. The first data row fixes the dimension. An empty input is a
/// 3D cloud with no points.
pub fn read_xyz<R: BufRead>(reader: R) -> Result<PointCloud> {
    let mut cloud: Option<PointCloud> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let values = body
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| parse_error(lineno, format!("not a number: {t:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let cloud = match &mut cloud {
            Some(c) => c,
            None => {
                if values.len() != 2 && values.len() != 3 {
                    return Err(parse_error(
                        lineno,
                        format!("expected 2 or 3 coordinates, found {}", values.len()),
                    ));
                }
                cloud.insert(PointCloud::new(values.len())?)
            }
        };
        if values.len() != cloud.dim() {
            return Err(parse_error(
                lineno,
                format!("expected {} coordinates, found {}", cloud.dim(), values.len()),
            ));
        }
        cloud.push(&values).map_err(|e| parse_error(lineno, e.to_string()))?;
    }
    match cloud {
        Some(c) => Ok(c),
        None => PointCloud::new(3),
    }
}

/// ASCII PLY. Vertex `x`, `y` and optional `z` are extracted; other vertex
/// properties and other elements are ignored.
pub fn read_ply<R: BufRead>(reader: R) -> Result<PointCloud> {
    let mut lines = reader.lines().enumerate();
    let mut next = |expect: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, l)) => Ok((i + 1, l?)),
            None => Err(parse_error(0, format!("unexpected end of file, expected {expect}"))),
        }
    };

    let (n, magic) = next("ply magic")?;
    if magic.trim() != "ply" {
        return Err(parse_error(n, "missing 'ply' magic"));
    }

    struct Element {
        name: String,
        count: usize,
        props: Vec<String>,
    }
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (n, line) = next("end_header")?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => {}
            ["format", enc, ..] => return Err(Error::UnsupportedEncoding((*enc).to_string())),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: (*name).to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_error(n, format!("bad element count {count:?}")))?,
                props: Vec::new(),
            }),
            ["property", "list", _, _, name] | ["property", _, name] => match elements.last_mut() {
                Some(e) => e.props.push((*name).to_string()),
                None => return Err(parse_error(n, "property before any element")),
            },
            _ => return Err(parse_error(n, format!("unrecognised header line {line:?}"))),
        }
    }

    let mut cloud = None;
    for element in &elements {
        if element.name != "vertex" {
            for _ in 0..element.count {
                next("element data")?;
            }
            continue;
        }
        let col = |name: &str| element.props.iter().position(|p| p == name);
        let (Some(ix), Some(iy)) = (col("x"), col("y")) else {
            return Err(parse_error(0, "vertex element lacks x/y properties"));
        };
        let iz = col("z");
        let dim = if iz.is_some() { 3 } else { 2 };
        let mut c = PointCloud::new(dim)?;
        for _ in 0..element.count {
            let (n, line) = next("vertex data")?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let get = |i: usize| -> Result<f64> {
                tokens
                    .get(i)
                    .ok_or_else(|| parse_error(n, "too few values on vertex line"))?
                    .parse::<f64>()
                    .map_err(|_| parse_error(n, format!("not a number: {:?}", tokens[i])))
            };
            let mut p = vec![get(ix)?, get(iy)?];
            if let Some(iz) = iz {
                p.push(get(iz)?);
            }
            c.push(&p).map_err(|e| parse_error(n, e.to_string()))?;
        }
        cloud = Some(c);
    }
    cloud.ok_or_else(|| parse_error(0, "no vertex element"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn write_xyz<W: Write>(mut w: W, cloud: &PointCloud) -> Result<()> {
    for p in cloud.iter() {
        writeln!(w, "{}", join(p))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_xyz(create(path)?, cloud)
}

/// ASCII PLY with a single vertex element.
pub fn write_ply_cloud<W: Write>(mut w: W, cloud: &PointCloud) -> Result<()> {
    writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"].iter().take(cloud.dim()) {
        writeln!(w, "property double {axis}")?;
    }
    writeln!(w, "end_header")?;
    write_xyz(w, cloud)
}

pub fn write_mesh_ply<W: Write>(mut w: W, mesh: &TriangleMesh) -> Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z")?;
    writeln!(w, "element face {}", mesh.triangles.len())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    writeln!(w, "end_header")?;
    for v in &mesh.vertices {
        writeln!(w, "{}", join(v))?;
    }
    for t in &mesh.triangles {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_mesh_ply(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    write_mesh_ply(create(path)?, mesh)
}

/// `x y` rows, one block per polyline, blocks separated by a blank line.
pub fn write_polylines<W: Write>(mut w: W, lines: &[Polyline]) -> Result<()> {
    for (i, line) in lines.iter().enumerate() {
        if i > 0 {
            writeln!(w)?;
        }
        for p in line {
            writeln!(w, "{}", join(p))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_polylines(path: &Path, lines: &[Polyline]) -> Result<()> {
    write_polylines(create(path)?, lines)
}

/// One waypoint per line.
pub fn write_path<W: Write>(mut w: W, traj: &Trajectory) -> Result<()> {
    for p in &traj.waypoints {
        writeln!(w, "{}", join(p))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_path(path: &Path, traj: &Trajectory) -> Result<()> {
    write_path(create(path)?, traj)
}

/// `iter,cost` CSV.
pub fn write_cost_csv<W: Write>(mut w: W, history: &[f64]) -> Result<()> {
    writeln!(w, "iter,cost")?;
    for (i, c) in history.iter().enumerate() {
        writeln!(w, "{i},{c}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_cost_csv(path: &Path, history: &[f64]) -> Result<()> {
    write_cost_csv(create(path)?, history)
}

/// `timestamp tx ty tz qx qy qz qw` per pose.
pub fn write_trajectory<W: Write>(mut w: W, poses: &[(f64, Pose)]) -> Result<()> {
    for (t, pose) in poses {
        writeln!(w, "{}", trajectory_line(*t, pose))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trajectory(path: &Path, poses: &[(f64, Pose)]) -> Result<()> {
    write_trajectory(create(path)?, poses)
}
