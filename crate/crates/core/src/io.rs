//! Binary and text file formats: sample maps (MAPC), vertex tensors (VTXT),
//! float images (PFM) and meshes (Wavefront OBJ). All binary data is
//! little-endian.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::icosphere::IcosphereMesh;
use crate::mapped_conv::Tensor;
use crate::sample_map::{SampleMap, SampleMapBuilder, SampleTap, MAX_TAPS};

pub const MAPC_MAGIC: &[u8; 4] = b"MAPC";
pub const VTXT_MAGIC: &[u8; 4] = b"VTXT";
const VERSION: u32 = 1;

fn read_array<const N: usize>(r: &mut impl Read, format: &'static str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(format, "unexpected end of data"),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_u8(r: &mut impl Read, f: &'static str) -> Result<u8> {
    Ok(read_array::<1>(r, f)?[0])
}

fn read_u32(r: &mut impl Read, f: &'static str) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r, f)?))
}

fn read_u64(r: &mut impl Read, f: &'static str) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r, f)?))
}

fn read_f64(r: &mut impl Read, f: &'static str) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r, f)?))
}

fn to_usize(v: u64, format: &'static str, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::format(format, format!("{what} {v} does not fit in memory")))
}

fn expect_magic(r: &mut impl Read, magic: &[u8; 4], format: &'static str) -> Result<()> {
    let m: [u8; 4] = read_array(r, format)?;
    if &m != magic {
        return Err(Error::format(format, format!("bad magic {m:?}")));
    }
    let v = read_u32(r, format)?;
    if v != VERSION {
        return Err(Error::format(format, format!("unsupported version {v}")));
    }
    Ok(())
}

fn expect_eof(r: &mut impl Read, format: &'static str) -> Result<()> {
    let mut extra = [0u8; 1];
    match r.read(&mut extra)? {
        0 => Ok(()),
        _ => Err(Error::format(format, "trailing data after payload")),
    }
}

/// Writes a map in MAPC form. The descriptor string is not stored.
pub fn write_map(w: &mut impl Write, map: &SampleMap) -> Result<()> {
    w.write_all(MAPC_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(map.n_in() as u64).to_le_bytes())?;
    w.write_all(&(map.n_out() as u64).to_le_bytes())?;
    w.write_all(&(map.k() as u32).to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    for s in map.samples() {
        w.write_all(&[s.len() as u8])?;
        for t in s {
            w.write_all(&(t.index as u64).to_le_bytes())?;
            w.write_all(&t.weight.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_map(r: &mut impl Read) -> Result<SampleMap> {
    const F: &str = "MAPC";
    expect_magic(r, MAPC_MAGIC, F)?;
    let n_in = to_usize(read_u64(r, F)?, F, "n_in")?;
    let n_out = to_usize(read_u64(r, F)?, F, "n_out")?;
    let k = read_u32(r, F)? as usize;
    if read_u32(r, F)? != 0 {
        return Err(Error::format(F, "reserved header field is not zero"));
    }
    let total = n_out
        .checked_mul(k)
        .ok_or_else(|| Error::format(F, "n_out * k overflows"))?;
    let mut builder = SampleMapBuilder::new(n_in, n_out, k);
    let mut taps = Vec::with_capacity(MAX_TAPS);
    for _ in 0..total {
        let count = read_u8(r, F)? as usize;
        if count > MAX_TAPS {
            return Err(Error::format(F, format!("tap count {count} exceeds {MAX_TAPS}")));
        }
        taps.clear();
        for _ in 0..count {
            let index = to_usize(read_u64(r, F)?, F, "tap index")?;
            taps.push(SampleTap {
                index,
                weight: read_f64(r, F)?,
            });
        }
        builder.push_taps(&taps);
    }
    expect_eof(r, F)?;
    builder.finish("loaded from MAPC")
}

pub fn save_map(path: impl AsRef<Path>, map: &SampleMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_map(&mut w, map)?;
    w.flush()?;
    Ok(())
}

pub fn load_map(path: impl AsRef<Path>) -> Result<SampleMap> {
    read_map(&mut BufReader::new(File::open(path)?))
}

/// Writes a `(channels, count)` signal in VTXT form; higher-rank tensors are
/// flattened after the first dimension.
pub fn write_vtxt(w: &mut impl Write, t: &Tensor<f64>) -> Result<()> {
    w.write_all(VTXT_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(t.channels() as u32).to_le_bytes())?;
    w.write_all(&(t.spatial_len() as u64).to_le_bytes())?;
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_vtxt(r: &mut impl Read) -> Result<Tensor<f64>> {
    const F: &str = "VTXT";
    expect_magic(r, VTXT_MAGIC, F)?;
    let c = read_u32(r, F)? as usize;
    let n = to_usize(read_u64(r, F)?, F, "count")?;
    let len = c.checked_mul(n).ok_or_else(|| Error::format(F, "size overflows"))?;
    let mut data = Vec::with_capacity(len.min(1 << 24));
    for _ in 0..len {
        data.push(read_f64(r, F)?);
    }
    expect_eof(r, F)?;
    Tensor::new(vec![c, n], data)
}

pub fn save_vtxt(path: impl AsRef<Path>, t: &Tensor<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_vtxt(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_vtxt(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    read_vtxt(&mut BufReader::new(File::open(path)?))
}

/// Writes a 1- or 3-channel `(c, h, w)` image as little-endian PFM. Values
/// are stored as `f32`; rows go bottom to top as the format requires.
pub fn write_pfm(w: &mut impl Write, image: &Tensor<f64>) -> Result<()> {
    let (c, h, wd) = match image.shape() {
        &[c, h, w] if c == 1 || c == 3 => (c, h, w),
        s => return Err(Error::dim("PFM image", "(1 or 3, H, W)", format!("{s:?}"))),
    };
    let tag = if c == 3 { "PF" } else { "Pf" };
    write!(w, "{tag}\n{wd} {h}\n-1.0\n")?;
    let plane = h * wd;
    let mut row = Vec::with_capacity(wd * c * 4);
    for y in (0..h).rev() {
        row.clear();
        for x in 0..wd {
            for ch in 0..c {
                row.extend_from_slice(&(image.data()[ch * plane + y * wd + x] as f32).to_le_bytes());
            }
        }
        w.write_all(&row)?;
    }
    Ok(())
}

fn pfm_token(r: &mut impl BufRead) -> Result<String> {
    const F: &str = "PFM";
    let mut tok = Vec::new();
    loop {
        let b = read_u8(r, F)?;
        if b.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(b);
        if tok.len() > 64 {
            return Err(Error::format(F, "header token too long"));
        }
    }
    String::from_utf8(tok).map_err(|_| Error::format(F, "non-ASCII header"))
}

pub fn read_pfm(r: &mut impl BufRead) -> Result<Tensor<f64>> {
    const F: &str = "PFM";
    let c = match pfm_token(r)?.as_str() {
        "PF" => 3,
        "Pf" => 1,
        t => return Err(Error::format(F, format!("bad magic {t:?}"))),
    };
    let parse = |s: String, what: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(F, format!("bad {what} {s:?}")))
    };
    let w = parse(pfm_token(r)?, "width")?;
    let h = parse(pfm_token(r)?, "height")?;
    let scale_tok = pfm_token(r)?;
    let scale: f64 = scale_tok
        .parse()
        .map_err(|_| Error::format(F, format!("bad scale {scale_tok:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(F, "scale must be non-zero"));
    }
    let little = scale < 0.0;
    let plane = h.checked_mul(w).ok_or_else(|| Error::format(F, "size overflows"))?;
    let mut data = vec![0.0f64; c * plane];
    for y in (0..h).rev() {
        for x in 0..w {
            for ch in 0..c {
                let b: [u8; 4] = read_array(r, F)?;
                let v = if little {
                    f32::from_le_bytes(b)
                } else {
                    f32::from_be_bytes(b)
                };
                data[ch * plane + y * w + x] = v as f64;
            }
        }
    }
    expect_eof(r, F)?;
    Tensor::new(vec![c, h, w], data)
}

pub fn save_pfm(path: impl AsRef<Path>, image: &Tensor<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pfm(&mut w, image)?;
    w.flush()?;
    Ok(())
}

pub fn load_pfm(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    read_pfm(&mut BufReader::new(File::open(path)?))
}

/// Wavefront OBJ with `v` and `f` records (1-based indices).
pub fn write_obj(w: &mut impl Write, mesh: &IcosphereMesh) -> Result<()> {
    for v in mesh.vertices() {
        writeln!(w, "v {:.17} {:.17} {:.17}", v[0], v[1], v[2])?;
    }
    for f in mesh.faces() {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

pub fn save_obj(path: impl AsRef<Path>, mesh: &IcosphereMesh) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_obj(&mut w, mesh)?;
    w.flush()?;
    Ok(())
}
