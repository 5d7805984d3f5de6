use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComposerVariant {
    Baseline,
    DeltaShift,
    Tirg,
    Film,
}

impl ComposerVariant {
    fn tag(self) -> u8 {
        match self {
            ComposerVariant::Baseline => 0,
            ComposerVariant::DeltaShift => 1,
            ComposerVariant::Tirg => 2,
            ComposerVariant::Film => 3,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => ComposerVariant::Baseline,
            1 => ComposerVariant::DeltaShift,
            2 => ComposerVariant::Tirg,
            3 => ComposerVariant::Film,
            other => return Err(binio::corrupt(format!("unknown variant tag {other}"))),
        })
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "baseline" => Ok(ComposerVariant::Baseline),
            "delta_shift" | "delta-shift" | "delta" => Ok(ComposerVariant::DeltaShift),
            "tirg" => Ok(ComposerVariant::Tirg),
            "film" => Ok(ComposerVariant::Film),
            other => Err(Error::Config(format!("unknown composer variant `{other}`"))),
        }
    }
}

/// Parameters of the gated composers. Matrices are dense, row-major,
/// `dim × dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposerParams {
    pub variant: ComposerVariant,
    pub w0: Vec<f64>,
    pub w1: Vec<f64>,
    pub bias: Vec<f64>,
    /// Loss after each accepted training epoch, starting with the initial
    /// loss. Not persisted.
    #[serde(default)]
    pub loss_curve: Vec<f64>,
}

impl ComposerParams {
    /// `w0 = I`, `w1 = 0`, `bias = 0`.
    pub fn identity(variant: ComposerVariant, dim: usize) -> Self {
        let mut w0 = vec![0.0; dim * dim];
        for i in 0..dim {
            w0[i * dim + i] = 1.0;
        }
        Self {
            variant,
            w0,
            w1: vec![0.0; dim * dim],
            bias: vec![0.0; dim],
            loss_curve: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.w0.len() != d * d {
            return Err(Error::dim(d * d, self.w0.len()));
        }
        if self.w1.len() != d * d {
            return Err(Error::dim(d * d, self.w1.len()));
        }
        if self
            .w0
            .iter()
            .chain(&self.w1)
            .chain(&self.bias)
            .any(|x| !x.is_finite())
        {
            return Err(Error::Config("composer params contain non-finite entries".into()));
        }
        Ok(())
    }

    fn mat_vec(m: &[f64], x: &[f64]) -> Vec<f64> {
        let d = x.len();
        m.chunks_exact(d)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn w0_times(&self, x: &[f64]) -> Vec<f64> {
        Self::mat_vec(&self.w0, x)
    }

    pub fn w1_times(&self, x: &[f64]) -> Vec<f64> {
        Self::mat_vec(&self.w1, x)
    }

    pub fn gate(&self, t: &[f64]) -> Vec<f64> {
        super::gate_values(self, t)
    }

    pub fn to_writer<W: Write>(&self, w: &mut W) -> Result<()> {
        self.validate()?;
        binio::write_header(w, PARAMS_MAGIC, PARAMS_VERSION)?;
        w.write_u8(self.variant.tag()).map_err(binio::io_err)?;
        w.write_u32::<LittleEndian>(self.dim() as u32)
            .map_err(binio::io_err)?;
        binio::write_f64s(w, &self.w0)?;
        binio::write_f64s(w, &self.w1)?;
        binio::write_f64s(w, &self.bias)
    }

    pub fn from_reader<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_header(r, PARAMS_MAGIC, PARAMS_VERSION)?;
        let variant = ComposerVariant::from_tag(r.read_u8().map_err(binio::io_err)?)?;
        let d = r.read_u32::<LittleEndian>().map_err(binio::io_err)? as usize;
        if d == 0 || d > 4096 {
            return Err(binio::corrupt(format!("implausible dimension {d}")));
        }
        let params = Self {
            variant,
            w0: binio::read_f64s(r, d * d)?,
            w1: binio::read_f64s(r, d * d)?,
            bias: binio::read_f64s(r, d)?,
            loss_curve: Vec::new(),
        };
        binio::expect_eof(r)?;
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.to_writer(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(&mut BufReader::new(file))
    }
}

const PARAMS_MAGIC: &[u8; 7] = b"AMMRCMP";
const PARAMS_VERSION: u16 = 1;
