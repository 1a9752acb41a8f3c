//! Planar multi-channel rasters and their on-disk forms: the MCR container
//! and 8-bit PPM/PGM.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::data_err;
use crate::{Error, Result};

const MCR_MAGIC: &[u8; 4] = b"MCR1";
const NAME_LEN: usize = 16;

/// Channel roles understood by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Ir,
    R,
    G,
    B,
    Dsm,
    Ndvi,
    Label,
}

impl Role {
    pub const ALL: [Role; 7] = [
        Role::Ir,
        Role::R,
        Role::G,
        Role::B,
        Role::Dsm,
        Role::Ndvi,
        Role::Label,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Role::Ir => "IR",
            Role::R => "R",
            Role::G => "G",
            Role::B => "B",
            Role::Dsm => "DSM",
            Role::Ndvi => "NDVI",
            Role::Label => "LABEL",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Plane {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl Plane {
    pub fn len(&self) -> usize {
        match self {
            Plane::F32(v) => v.len(),
            Plane::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype_code(&self) -> u8 {
        match self {
            Plane::F32(_) => 1,
            Plane::U8(_) => 2,
        }
    }

    pub fn get_f64(&self, i: usize) -> f64 {
        match self {
            Plane::F32(v) => v[i] as f64,
            Plane::U8(v) => v[i] as f64,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.get_f64(i)).collect()
    }

    fn empty_like(&self, len: usize) -> Plane {
        match self {
            Plane::F32(_) => Plane::F32(vec![0.0; len]),
            Plane::U8(_) => Plane::U8(vec![0; len]),
        }
    }

    /// Builds a plane of the same dtype by picking source indices; `None`
    /// yields zero.
    pub fn gather(&self, len: usize, index: impl Fn(usize) -> Option<usize>) -> Plane {
        let mut out = self.empty_like(len);
        match (&mut out, self) {
            (Plane::F32(o), Plane::F32(s)) => {
                for (i, v) in o.iter_mut().enumerate() {
                    if let Some(j) = index(i) {
                        *v = s[j];
                    }
                }
            }
            (Plane::U8(o), Plane::U8(s)) => {
                for (i, v) in o.iter_mut().enumerate() {
                    if let Some(j) = index(i) {
                        *v = s[j];
                    }
                }
            }
            _ => unreachable!(),
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub plane: Plane,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: Vec<Channel>,
}

impl Raster {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            channels: Vec::new(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn push(&mut self, name: impl Into<String>, plane: Plane) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.len() > NAME_LEN || !name.is_ascii() || name.contains('\0') {
            return Err(data_err!(
                "channel name `{name}` must be 1-{NAME_LEN} ASCII characters"
            ));
        }
        if plane.len() != self.height * self.width {
            return Err(data_err!(
                "channel {name}: {} values for a {}x{} raster",
                plane.len(),
                self.height,
                self.width
            ));
        }
        if self.get(&name).is_some() {
            return Err(data_err!("duplicate channel {name}"));
        }
        self.channels.push(Channel { name, plane });
        Ok(())
    }

    /// Inserts or replaces a channel.
    pub fn set(&mut self, name: &str, plane: Plane) -> Result<()> {
        self.channels.retain(|c| c.name != name);
        self.push(name, plane)
    }

    pub fn get(&self, name: &str) -> Option<&Plane> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .map(|c| &c.plane)
    }

    pub fn role(&self, role: Role) -> Option<&Plane> {
        self.get(role.name())
    }

    pub fn require(&self, role: Role) -> Result<&Plane> {
        self.role(role)
            .ok_or_else(|| data_err!("raster has no {} channel", role.name()))
    }

    /// The LABEL plane as class indices, checked against `num_classes`.
    pub fn labels(&self, num_classes: usize) -> Result<&[u8]> {
        match self.require(Role::Label)? {
            Plane::U8(v) => {
                if let Some(i) = v.iter().position(|&l| l as usize >= num_classes) {
                    return Err(data_err!(
                        "label {} at row {}, column {} is not below {num_classes}",
                        v[i],
                        i / self.width,
                        i % self.width
                    ));
                }
                Ok(v)
            }
            Plane::F32(_) => Err(data_err!("LABEL channel must be 8-bit")),
        }
    }

    /// Copies a `size`-square window at `(y, x)`, zero-filling outside.
    pub fn window(&self, y: usize, x: usize, size_h: usize, size_w: usize) -> Raster {
        let (h, w) = (self.height, self.width);
        let channels = self
            .channels
            .iter()
            .map(|c| Channel {
                name: c.name.clone(),
                plane: c.plane.gather(size_h * size_w, |i| {
                    let (r, col) = (y + i / size_w, x + i % size_w);
                    (r < h && col < w).then_some(r * w + col)
                }),
            })
            .collect();
        Raster {
            height: size_h,
            width: size_w,
            channels,
        }
    }

    /// Remaps every plane with `index(out_row, out_col) -> (src_row, src_col)`.
    pub fn remap(
        &self,
        height: usize,
        width: usize,
        index: impl Fn(usize, usize) -> (usize, usize),
    ) -> Raster {
        let src_w = self.width;
        let channels = self
            .channels
            .iter()
            .map(|c| Channel {
                name: c.name.clone(),
                plane: c.plane.gather(height * width, |i| {
                    let (r, col) = index(i / width, i % width);
                    Some(r * src_w + col)
                }),
            })
            .collect();
        Raster {
            height,
            width,
            channels,
        }
    }

    pub fn write_mcr_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        out.write_all(MCR_MAGIC)?;
        for v in [self.channels.len(), self.height, self.width] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
        for c in &self.channels {
            let mut name = [0u8; NAME_LEN];
            name[..c.name.len()].copy_from_slice(c.name.as_bytes());
            out.write_all(&name)?;
            out.write_all(&[c.plane.dtype_code()])?;
        }
        for c in &self.channels {
            match &c.plane {
                Plane::F32(v) => {
                    let mut buf = Vec::with_capacity(v.len() * 4);
                    for x in v {
                        buf.extend_from_slice(&x.to_le_bytes());
                    }
                    out.write_all(&buf)?;
                }
                Plane::U8(v) => out.write_all(v)?,
            }
        }
        Ok(())
    }

    pub fn to_mcr_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_mcr_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_mcr_bytes(bytes: &[u8]) -> Result<Raster> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MCR_MAGIC {
            return Err(data_err!("not an MCR1 container"));
        }
        let count = read_u32(&mut r)? as usize;
        let height = read_u32(&mut r)? as usize;
        let width = read_u32(&mut r)? as usize;
        let plane = height
            .checked_mul(width)
            .ok_or_else(|| data_err!("raster extent {height}x{width} overflows"))?;
        let mut headers = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let mut name = [0u8; NAME_LEN];
            read_exact(&mut r, &mut name)?;
            let end = name.iter().position(|&b| b == 0).unwrap_or(NAME_LEN);
            let name = std::str::from_utf8(&name[..end])
                .ok()
                .filter(|s| s.is_ascii())
                .ok_or_else(|| data_err!("channel name is not ASCII"))?
                .to_string();
            let mut dtype = [0u8; 1];
            read_exact(&mut r, &mut dtype)?;
            headers.push((name, dtype[0]));
        }
        let mut raster = Raster::new(height, width);
        for (name, dtype) in headers {
            let p = match dtype {
                1 => {
                    let bytes = take(
                        &mut r,
                        plane
                            .checked_mul(4)
                            .ok_or_else(|| data_err!("size overflow"))?,
                    )?;
                    Plane::F32(
                        bytes
                            .chunks_exact(4)
                            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                            .collect(),
                    )
                }
                2 => Plane::U8(take(&mut r, plane)?.to_vec()),
                other => return Err(data_err!("channel {name}: unknown dtype code {other}")),
            };
            raster.push(name, p)?;
        }
        if !r.is_empty() {
            return Err(data_err!("{} trailing bytes after MCR payload", r.len()));
        }
        Ok(raster)
    }

    pub fn save_mcr(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_mcr_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load_mcr(path: &Path) -> Result<Raster> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_mcr_bytes(&bytes).map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| data_err!("truncated MCR header"))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(data_err!("truncated MCR payload"));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

/// An 8-bit image read from PPM (3 planes) or PGM (1 plane).
#[derive(Debug, Clone, PartialEq)]
pub struct Pnm {
    pub height: usize,
    pub width: usize,
    pub planes: Vec<Vec<u8>>,
}

pub fn read_pnm(path: &Path) -> Result<Pnm> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| data_err!("{}: {e}", path.display()))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let planes = match img {
        image::DynamicImage::ImageLuma8(b) => vec![b.into_raw()],
        image::DynamicImage::ImageRgb8(b) => {
            let raw = b.into_raw();
            (0..3)
                .map(|c| raw.iter().skip(c).step_by(3).copied().collect())
                .collect()
        }
        other => {
            return Err(data_err!(
                "{}: expected an 8-bit PPM or PGM, got {:?}",
                path.display(),
                other.color()
            ))
        }
    };
    Ok(Pnm {
        height,
        width,
        planes,
    })
}

/// Writes one plane as PGM or three as PPM.
pub fn write_pnm(path: &Path, width: usize, height: usize, planes: &[&[u8]]) -> Result<()> {
    let (buf, color) = match planes {
        [g] => (g.to_vec(), image::ExtendedColorType::L8),
        [r, g, b] => (
            (0..width * height)
                .flat_map(|i| [r[i], g[i], b[i]])
                .collect(),
            image::ExtendedColorType::Rgb8,
        ),
        _ => {
            return Err(Error::Usage(format!(
                "cannot write {} planes as PNM",
                planes.len()
            )))
        }
    };
    image::save_buffer_with_format(
        path,
        &buf,
        width as u32,
        height as u32,
        color,
        image::ImageFormat::Pnm,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => data_err!("{}: {other}", path.display()),
    })
}
