//! In-memory datasets and the `AOTD` file format (little-endian):
//!
//! ```text
//! "AOTD" u32 version=1 u32 n u32 d u8 layout (0 tabular, 1 image)
//! [u32 h u32 w u32 c when image] u8 has_labels f32[n·d] u32[n] labels
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Tabular,
    /// Channel-last image: feature index `(row·w + col)·c + channel`.
    Image { h: usize, w: usize, c: usize },
}

impl Layout {
    pub fn check(&self, d: usize) -> Result<()> {
        match *self {
            Layout::Tabular => Ok(()),
            Layout::Image { h, w, c } if h * w * c == d && h > 0 && w > 0 && c > 0 => Ok(()),
            Layout::Image { h, w, c } => Err(Error::input(format!(
                "image layout {h}x{w}x{c} incompatible with {d} features"
            ))),
        }
    }
}

/// Row-major `n × d` features held as `f64`, with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n: usize,
    d: usize,
    labels: Option<Vec<usize>>,
    layout: Layout,
}

impl Dataset {
    pub fn new(features: Vec<f64>, d: usize, labels: Option<Vec<usize>>, layout: Layout) -> Result<Self> {
        if d == 0 || features.is_empty() || features.len() % d != 0 {
            return Err(Error::input("feature matrix must be a nonempty n×d block"));
        }
        let n = features.len() / d;
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("features must be finite"));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::input(format!("{} labels for {n} samples", l.len())));
            }
        }
        layout.check(d)?;
        Ok(Self {
            features,
            n,
            d,
            labels,
            layout,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.d)
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Mean over every stored feature value.
    pub fn mean_value(&self) -> f64 {
        self.features.iter().sum::<f64>() / self.features.len() as f64
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| l.iter().max().map_or(0, |m| m + 1))
    }

    /// New dataset holding `indices` in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut feats = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n {
                return Err(Error::input(format!("index {i} out of range")));
            }
            feats.extend_from_slice(self.row(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Dataset::new(feats, self.d, labels, self.layout)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let u = |v: usize| {
            u32::try_from(v).map_err(|_| Error::input(format!("{v} does not fit in u32")))
        };
        w.write_all(b"AOTD")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&u(self.n)?.to_le_bytes())?;
        w.write_all(&u(self.d)?.to_le_bytes())?;
        match self.layout {
            Layout::Tabular => w.write_all(&[0])?,
            Layout::Image { h, w: width, c } => {
                w.write_all(&[1])?;
                for v in [h, width, c] {
                    w.write_all(&u(v)?.to_le_bytes())?;
                }
            }
        }
        w.write_all(&[self.labels.is_some() as u8])?;
        for &v in &self.features {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        if let Some(labels) = &self.labels {
            for &l in labels {
                w.write_all(&u(l)?.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"AOTD" {
            return Err(Error::Format("not a dataset file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let n = read_u32(&mut r)? as usize;
        let d = read_u32(&mut r)? as usize;
        let layout = match read_u8(&mut r)? {
            0 => Layout::Tabular,
            1 => Layout::Image {
                h: read_u32(&mut r)? as usize,
                w: read_u32(&mut r)? as usize,
                c: read_u32(&mut r)? as usize,
            },
            code => return Err(Error::Format(format!("unknown layout code {code}"))),
        };
        let has_labels = match read_u8(&mut r)? {
            0 => false,
            1 => true,
            v => return Err(Error::Format(format!("bad has_labels flag {v}"))),
        };
        let mut features = Vec::with_capacity(n.saturating_mul(d).min(1 << 28));
        let mut b4 = [0u8; 4];
        for _ in 0..n * d {
            r.read_exact(&mut b4)?;
            features.push(f32::from_le_bytes(b4) as f64);
        }
        let labels = if has_labels {
            Some((0..n).map(|_| read_u32(&mut r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        if r.read(&mut b4)? != 0 {
            return Err(Error::Format("trailing bytes in dataset file".into()));
        }
        Dataset::new(features, d, labels, layout).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}
