//! Versioned little-endian container for [`ReducedModel`]s.
//!
//! Layout: magic `HRBM`, format version, style, domain, mesh, dimensions,
//! then every matrix column-major as `f64`, then the greedy history.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fem::{Domain2D, FemSpace, Grading, MeshSpec, Q_A};
use crate::params::Style;
use crate::rbm::model::{GreedyRecord, ReducedModel};

const MAGIC: &[u8; 4] = b"HRBM";
pub const FORMAT_VERSION: u32 = 1;

fn write_matrix<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<()> {
    for v in m.iter() {
        w.write_f64::<LE>(*v)?;
    }
    Ok(())
}

fn write_vector<W: Write>(w: &mut W, v: &DVector<f64>) -> Result<()> {
    for x in v.iter() {
        w.write_f64::<LE>(*x)?;
    }
    Ok(())
}

fn write_grading<W: Write>(w: &mut W, g: &Grading) -> Result<()> {
    let (tag, a, b) = match *g {
        Grading::Uniform => (0u8, 0.0, 0.0),
        Grading::Sinh { focus, width } => (1u8, focus, width),
    };
    w.write_u8(tag)?;
    w.write_f64::<LE>(a)?;
    w.write_f64::<LE>(b)?;
    Ok(())
}

pub fn write_model<W: Write>(mut w: W, model: &ReducedModel) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(FORMAT_VERSION)?;
    w.write_u8(match model.style {
        Style::European => 0,
        Style::American => 1,
    })?;
    let d = model.domain();
    for v in [d.nu_min, d.nu_max, d.x_min, d.x_max] {
        w.write_f64::<LE>(v)?;
    }
    let mesh = model.mesh();
    w.write_u64::<LE>(mesh.n_nu as u64)?;
    w.write_u64::<LE>(mesh.n_x as u64)?;
    write_grading(&mut w, &mesh.nu_grading)?;
    write_grading(&mut w, &mesh.x_grading)?;
    for n in [model.basis.nrows(), model.dim(), model.dual_dim(), model.blocks.len()] {
        w.write_u64::<LE>(n as u64)?;
    }
    write_matrix(&mut w, &model.basis)?;
    write_matrix(&mut w, &model.dual)?;
    for &a in &model.dual_added_at {
        w.write_u64::<LE>(a as u64)?;
    }
    write_matrix(&mut w, &model.mass)?;
    for b in &model.blocks {
        write_matrix(&mut w, b)?;
    }
    write_matrix(&mut w, &model.pairing)?;
    for wall in 0..2 {
        write_vector(&mut w, &model.wall_mass[wall])?;
        for v in &model.wall_blocks[wall] {
            write_vector(&mut w, v)?;
        }
    }
    write_vector(&mut w, &model.obstacle)?;
    write_vector(&mut w, &model.initial)?;
    w.write_f64::<LE>(model.training_error)?;
    w.write_u8(u8::from(model.stagnated))?;
    w.write_u64::<LE>(model.history.len() as u64)?;
    for h in &model.history {
        for v in h.mu {
            w.write_f64::<LE>(v)?;
        }
        w.write_f64::<LE>(h.error)?;
        w.write_u64::<LE>(h.n_primal as u64)?;
        w.write_u64::<LE>(h.n_dual as u64)?;
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    r: R,
}

impl<R: Read> Reader<R> {
    fn f64(&mut self) -> Result<f64> {
        Ok(self.r.read_f64::<LE>()?)
    }

    fn size(&mut self, what: &str, limit: usize) -> Result<usize> {
        let n = self.r.read_u64::<LE>()?;
        if n > limit as u64 {
            return Err(Error::Container(format!("{what} = {n} exceeds {limit}")));
        }
        Ok(n as usize)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Ok(DMatrix::from_vec(rows, cols, data))
    }

    fn vector(&mut self, n: usize) -> Result<DVector<f64>> {
        Ok(DVector::from_column_slice(self.matrix(n, 1)?.as_slice()))
    }

    fn grading(&mut self) -> Result<Grading> {
        let tag = self.r.read_u8()?;
        let (a, b) = (self.f64()?, self.f64()?);
        match tag {
            0 => Ok(Grading::Uniform),
            1 => Ok(Grading::Sinh { focus: a, width: b }),
            t => Err(Error::Container(format!("unknown grading tag {t}"))),
        }
    }
}

const MAX_MESH: usize = 1 << 14;
const MAX_DIM: usize = 1 << 16;

pub fn read_model<R: Read>(r: R) -> Result<ReducedModel> {
    let mut rd = Reader { r };
    let mut magic = [0u8; 4];
    rd.r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Container("not a reduced-model file".into()));
    }
    let version = rd.r.read_u32::<LE>()?;
    if version != FORMAT_VERSION {
        return Err(Error::Container(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let style = match rd.r.read_u8()? {
        0 => Style::European,
        1 => Style::American,
        t => return Err(Error::Container(format!("unknown style tag {t}"))),
    };
    let domain = Domain2D::new(rd.f64()?, rd.f64()?, rd.f64()?, rd.f64()?)?;
    let n_nu = rd.size("n_nu", MAX_MESH)?;
    let n_x = rd.size("n_x", MAX_MESH)?;
    let spec = MeshSpec { n_nu, n_x, nu_grading: rd.grading()?, x_grading: rd.grading()? };
    let space = FemSpace::new(domain, spec)?;
    let n_free = rd.size("n_free", MAX_MESH * MAX_MESH)?;
    if n_free != space.n_free() {
        return Err(Error::Container(format!("{n_free} free DOFs stored, mesh has {}", space.n_free())));
    }
    let n = rd.size("N", MAX_DIM)?;
    let nw = rd.size("N_W", MAX_DIM)?;
    let q = rd.size("block count", Q_A)?;
    if q != Q_A {
        return Err(Error::Container(format!("{q} affine blocks, expected {Q_A}")));
    }
    let basis = rd.matrix(n_free, n)?;
    let dual = rd.matrix(n_free, nw)?;
    let dual_added_at = (0..nw).map(|_| rd.size("dual position", n)).collect::<Result<Vec<_>>>()?;
    let mass = rd.matrix(n, n)?;
    let blocks = (0..q).map(|_| rd.matrix(n, n)).collect::<Result<Vec<_>>>()?;
    let pairing = rd.matrix(nw, n)?;
    let mut wall_mass = [DVector::zeros(0), DVector::zeros(0)];
    let mut wall_blocks = [Vec::new(), Vec::new()];
    for wall in 0..2 {
        wall_mass[wall] = rd.vector(n)?;
        wall_blocks[wall] = (0..q).map(|_| rd.vector(n)).collect::<Result<Vec<_>>>()?;
    }
    let obstacle = rd.vector(nw)?;
    let initial = rd.vector(n)?;
    let training_error = rd.f64()?;
    let stagnated = rd.r.read_u8()? != 0;
    let len = rd.size("history length", MAX_DIM)?;
    let mut history = Vec::with_capacity(len);
    for _ in 0..len {
        let mu = [rd.f64()?, rd.f64()?, rd.f64()?, rd.f64()?, rd.f64()?];
        let error = rd.f64()?;
        let n_primal = rd.size("history n_primal", n)?;
        let n_dual = rd.size("history n_dual", nw)?;
        history.push(GreedyRecord { mu, error, n_primal, n_dual });
    }
    Ok(ReducedModel {
        style,
        space,
        basis,
        dual,
        dual_added_at,
        mass,
        blocks,
        pairing,
        wall_mass,
        wall_blocks,
        obstacle,
        initial,
        history,
        training_error,
        stagnated,
    })
}

pub fn write_model_file(path: &Path, model: &ReducedModel) -> Result<()> {
    write_model(std::io::BufWriter::new(std::fs::File::create(path)?), model)
}

pub fn read_model_file(path: &Path) -> Result<ReducedModel> {
    read_model(std::io::BufReader::new(std::fs::File::open(path)?))
}
