//! Binary model files.
//!
//! Layout (little endian): magic `GPDF`, `u32` version, `u8` kind, the field
//! configuration, `u8` dimension, then the payload. A field stores its
//! training points and is refitted on load. A submap grid stores its block
//! parameters and every block's raw point list.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::field::{DistanceField, Field, FieldConfig, FieldSample, FieldVariant};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::submap::{SubmapGrid, SubmapParams};

const MAGIC: &[u8; 4] = b"GPDF";
pub const FORMAT_VERSION: u32 = 1;

const KIND_FIELD: u8 = 1;
const KIND_GRID: u8 = 2;

/// A model read from disk.
#[derive(Debug)]
pub enum Model {
    Field(Field),
    Grid(SubmapGrid),
}

impl Model {
    pub fn config(&self) -> &FieldConfig {
        match self {
            Model::Field(f) => f.config(),
            Model::Grid(g) => g.config(),
        }
    }
}

impl DistanceField for Model {
    fn dim(&self) -> usize {
        match self {
            Model::Field(f) => f.dim(),
            Model::Grid(g) => g.dim(),
        }
    }

    fn sample(&self, q: &[f64]) -> Result<FieldSample> {
        match self {
            Model::Field(f) => f.query(q),
            Model::Grid(g) => g.query_fused(q),
        }
    }

    fn distance_gradient(&self, q: &[f64]) -> Result<(f64, Option<Vec<f64>>)> {
        match self {
            Model::Field(f) => f.distance_gradient(q),
            Model::Grid(g) => g.distance_gradient(q),
        }
    }

    fn distance(&self, q: &[f64]) -> Result<f64> {
        match self {
            Model::Field(f) => f.distance(q),
            Model::Grid(g) => DistanceField::distance(g, q),
        }
    }
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn i64(&mut self, v: i64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn floats(&mut self, vs: &[f64]) -> Result<()> {
        vs.iter().try_for_each(|&v| self.f64(v))
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0; N];
        self.0.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format("truncated model file".into()),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflows usize".into()))
    }
}

fn write_header<W: Write>(w: &mut Writer<W>, kind: u8, config: &FieldConfig, dim: usize) -> Result<()> {
    w.0.write_all(MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.u8(kind)?;
    w.u8(match config.variant {
        FieldVariant::LogGpis => 0,
        FieldVariant::Reverting => 1,
    })?;
    w.u8(config.kernel.family.code())?;
    w.floats(&[
        config.kernel.length_scale,
        config.kernel.signal_variance,
        config.kernel.logpis_rate,
        config.noise_variance,
        config.uncertainty_beta,
    ])?;
    w.u8(dim as u8)
}

fn read_header<R: Read>(r: &mut Reader<R>) -> Result<(u8, FieldConfig, usize)> {
    if &r.bytes::<4>()? != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let kind = r.u8()?;
    let variant = match r.u8()? {
        0 => FieldVariant::LogGpis,
        1 => FieldVariant::Reverting,
        v => return Err(Error::Format(format!("unknown variant code {v}"))),
    };
    let family = KernelFamily::from_code(r.u8()?).ok_or_else(|| Error::Format("unknown kernel code".into()))?;
    let kernel = KernelSpec {
        family,
        length_scale: r.f64()?,
        signal_variance: r.f64()?,
        logpis_rate: r.f64()?,
    };
    let config = FieldConfig {
        variant,
        kernel,
        noise_variance: r.f64()?,
        uncertainty_beta: r.f64()?,
    };
    config.validate()?;
    let dim = r.u8()? as usize;
    crate::error::check_dim(dim)?;
    Ok((kind, config, dim))
}

pub fn write_field<W: Write>(w: W, field: &Field) -> Result<()> {
    let mut w = Writer(w);
    write_header(&mut w, KIND_FIELD, field.config(), field.dim())?;
    let points = field.points();
    w.u64(points.len() as u64)?;
    w.floats(points.as_flat())?;
    w.0.flush()?;
    Ok(())
}

pub fn write_grid<W: Write>(w: W, grid: &SubmapGrid) -> Result<()> {
    let mut w = Writer(w);
    write_header(&mut w, KIND_GRID, grid.config(), grid.dim())?;
    let p = grid.params();
    w.floats(&[p.block_size, p.halo_margin, p.downsample_resolution])?;
    w.u64(p.max_points_per_block as u64)?;
    w.u64(grid.block_count() as u64)?;
    for (key, points) in grid.raw_blocks() {
        key.iter().try_for_each(|&k| w.i64(k))?;
        w.u64((points.len() / grid.dim()) as u64)?;
        w.floats(points)?;
    }
    w.0.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(r: R) -> Result<Model> {
    let mut r = Reader(r);
    let (kind, config, dim) = read_header(&mut r)?;
    match kind {
        KIND_FIELD => {
            let n = r.len()?;
            let cloud = PointCloud::from_flat(dim, r.floats(n * dim)?)?;
            Ok(Model::Field(Field::build(&cloud, config)?))
        }
        KIND_GRID => {
            let params = SubmapParams {
                block_size: r.f64()?,
                halo_margin: r.f64()?,
                downsample_resolution: r.f64()?,
                max_points_per_block: r.len()?,
            };
            let mut grid = SubmapGrid::new(dim, config, params)?;
            let blocks = r.len()?;
            for _ in 0..blocks {
                let key = [r.i64()?, r.i64()?, r.i64()?];
                let n = r.len()?;
                let points = r.floats(n * dim)?;
                if points.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Format("non-finite point in block".into()));
                }
                grid.restore_block(key, points);
            }
            Ok(Model::Grid(grid))
        }
        k => Err(Error::Format(format!("unknown model kind {k}"))),
    }
}

pub fn save_field(path: &Path, field: &Field) -> Result<()> {
    write_field(BufWriter::new(File::create(path)?), field)
}

pub fn save_grid(path: &Path, grid: &SubmapGrid) -> Result<()> {
    write_grid(BufWriter::new(File::create(path)?), grid)
}

pub fn load_model(path: &Path) -> Result<Model> {
    read_model(BufReader::new(File::open(path)?))
}

pub fn load_field(path: &Path) -> Result<Field> {
    match load_model(path)? {
        Model::Field(f) => Ok(f),
        Model::Grid(_) => Err(Error::Format("file holds a submap grid, not a field".into())),
    }
}

pub fn load_grid(path: &Path) -> Result<SubmapGrid> {
    match load_model(path)? {
        Model::Grid(g) => Ok(g),
        Model::Field(_) => Err(Error::Format("file holds a field, not a submap grid".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::Pose;
    use crate::scenes;

    #[test]
    fn field_round_trip_answers_identically() {
        let cloud = scenes::circle(128, 1.0, [0.0, 0.0]);
        let field = Field::build_default(&cloud, FieldVariant::LogGpis).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &field).unwrap();
        let Model::Field(back) = read_model(buf.as_slice()).unwrap() else {
            panic!("wrong kind");
        };
        assert_eq!(back.config(), field.config());
        assert_eq!(back.points(), field.points());
        for q in [[0.3, 0.2], [1.4, -0.3], [0.0, 1.0]] {
            assert_eq!(back.query(&q).unwrap(), field.query(&q).unwrap());
        }
        let mut again = Vec::new();
        write_field(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn grid_round_trip_is_bit_exact() {
        let cfg = FieldConfig::reverting(KernelSpec::new(KernelFamily::SquaredExponential, 0.1, 1.0).unwrap());
        let mut grid = SubmapGrid::new(
            2,
            cfg,
            SubmapParams {
                block_size: 1.2,
                halo_margin: 0.4,
                max_points_per_block: 400,
                downsample_resolution: 0.005,
            },
        )
        .unwrap();
        grid.insert_points(&scenes::circle(256, 1.0, [0.0, 0.0]), &Pose::identity(2))
            .unwrap();
        let mut buf = Vec::new();
        write_grid(&mut buf, &grid).unwrap();
        let Model::Grid(back) = read_model(buf.as_slice()).unwrap() else {
            panic!("wrong kind");
        };
        assert_eq!(back.params(), grid.params());
        let keys: Vec<_> = grid.block_keys().copied().collect();
        assert_eq!(back.block_keys().copied().collect::<Vec<_>>(), keys);
        for k in &keys {
            assert_eq!(back.block_points(k), grid.block_points(k));
        }
        let mut again = Vec::new();
        write_grid(&mut again, &back).unwrap();
        assert_eq!(buf, again);
        assert_eq!(
            back.query_fused(&[0.7, 0.7]).unwrap(),
            grid.query_fused(&[0.7, 0.7]).unwrap()
        );
    }

    #[test]
    fn corrupt_files_are_rejected() {
        assert!(matches!(read_model(&b"NOPE"[..]), Err(Error::Format(_))));
        let cloud = scenes::circle(16, 1.0, [0.0, 0.0]);
        let field = Field::build_default(&cloud, FieldVariant::Reverting).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &field).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_model(buf.as_slice()), Err(Error::Format(_))));
        let mut bad_version = Vec::new();
        write_field(&mut bad_version, &field).unwrap();
        bad_version[4] = 9;
        assert!(matches!(read_model(bad_version.as_slice()), Err(Error::Format(_))));
    }
}
