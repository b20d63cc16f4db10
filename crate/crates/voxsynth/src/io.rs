//! File formats.
//!
//! A field is stored as a bundle directory: a UTF-8 `meta` file of
//! `key = value` lines plus raw little-endian f32 arrays in C order
//! (`density.bin`, `feature.bin`, `mlp.bin`). Images are binary PPM (RGB)
//! and single-channel PFM (depth / shading). All readers validate shapes
//! and reject non-finite values up front.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::column::{ChannelLattice, ColumnImage};
use crate::field::{Camera, ColorHead, VoxelField};
use crate::grid::{Grid3, Grid4};
use crate::math::{Aabb, Vec3};
use crate::shading::ShadingMap;
use crate::{Error, Result};

/// Single-channel float image, row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl ImageF {
    pub fn new(width: usize, height: usize, fill: f32) -> ImageF {
        ImageF { width, height, data: vec![fill; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }
}

// ---------------------------------------------------------------- key/value

/// Parse `key = value` lines. Blank lines and `#` comments are skipped;
/// duplicate keys are rejected.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::InvalidData(format!("line {}: expected `key = value`", ln + 1)));
        };
        let k = k.trim().to_string();
        let v = v.trim().to_string();
        if out.iter().any(|(ek, _)| ek == &k) {
            return Err(Error::InvalidData(format!("duplicate key `{}`", k)));
        }
        out.push((k, v));
    }
    Ok(out)
}

pub struct KvMap {
    entries: Vec<(String, String)>,
    used: std::cell::RefCell<Vec<bool>>,
}

impl KvMap {
    pub fn parse(text: &str) -> Result<KvMap> {
        let entries = parse_kv(text)?;
        let used = std::cell::RefCell::new(vec![false; entries.len()]);
        Ok(KvMap { entries, used })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        for (i, (k, v)) in self.entries.iter().enumerate() {
            if k == key {
                self.used.borrow_mut()[i] = true;
                return Some(v.as_str());
            }
        }
        None
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::InvalidData(format!("missing key `{}`", key)))
    }

    pub fn parse_num<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.require(key)?;
        v.parse::<T>().map_err(|_| Error::InvalidData(format!("key `{}`: bad value `{}`", key, v)))
    }

    pub fn parse_list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let v = self.require(key)?;
        v.split_whitespace()
            .map(|t| {
                t.parse::<T>()
                    .map_err(|_| Error::InvalidData(format!("key `{}`: bad entry `{}`", key, t)))
            })
            .collect()
    }

    /// Error if any key was never read; catches typos in hand-edited files.
    pub fn reject_unknown(&self) -> Result<()> {
        for (i, (k, _)) in self.entries.iter().enumerate() {
            if !self.used.borrow()[i] {
                return Err(Error::InvalidData(format!("unknown key `{}`", k)));
            }
        }
        Ok(())
    }
}

// ------------------------------------------------------------- f32 arrays

pub fn write_f32_array(path: &Path, data: &[f32]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_f32_array(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() != expected * 4 {
        return Err(Error::SizeMismatch(format!(
            "{}: expected {} f32 values ({} bytes), file has {} bytes",
            path.display(),
            expected,
            expected * 4,
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(expected);
    for ch in bytes.chunks_exact(4) {
        let v = f32::from_le_bytes([ch[0], ch[1], ch[2], ch[3]]);
        if !v.is_finite() {
            return Err(Error::NonFinite(path.display().to_string()));
        }
        out.push(v);
    }
    Ok(out)
}

// ----------------------------------------------------------------- bundles

/// Write a field bundle directory. `shift` is the render-time softplus
/// shift recorded alongside the grids.
pub fn save_bundle(dir: &Path, field: &VoxelField, shift: f64) -> Result<()> {
    field.validate()?;
    fs::create_dir_all(dir)?;
    let (nx, ny, nz) = field.shape();
    let b = &field.bbox;
    let sizes: Vec<String> = field.head.sizes.iter().map(|s| s.to_string()).collect();
    let meta = format!(
        "nx = {}\nny = {}\nnz = {}\nchannels = {}\n\
         bbox_min = {} {} {}\nbbox_max = {} {} {}\n\
         shift = {}\npe_x = {}\npe_d = {}\nlayers = {}\n",
        nx,
        ny,
        nz,
        field.features.channels,
        b.min.x,
        b.min.y,
        b.min.z,
        b.max.x,
        b.max.y,
        b.max.z,
        shift,
        field.head.pe_x,
        field.head.pe_d,
        sizes.join(" "),
    );
    fs::write(dir.join("meta"), meta)?;
    write_f32_array(&dir.join("density.bin"), &field.density.data)?;
    write_f32_array(&dir.join("feature.bin"), &field.features.data)?;
    write_f32_array(&dir.join("mlp.bin"), &field.head.params)?;
    Ok(())
}

/// Load a field bundle. Returns the field and its recorded shift.
pub fn load_bundle(dir: &Path) -> Result<(VoxelField, f64)> {
    let meta_text = fs::read_to_string(dir.join("meta"))?;
    let kv = KvMap::parse(&meta_text)?;
    let nx: usize = kv.parse_num("nx")?;
    let ny: usize = kv.parse_num("ny")?;
    let nz: usize = kv.parse_num("nz")?;
    let channels: usize = kv.parse_num("channels")?;
    let bmin: Vec<f64> = kv.parse_list("bbox_min")?;
    let bmax: Vec<f64> = kv.parse_list("bbox_max")?;
    if bmin.len() != 3 || bmax.len() != 3 {
        return Err(Error::InvalidData("bbox_min/bbox_max need 3 components".into()));
    }
    let shift: f64 = kv.parse_num("shift")?;
    let pe_x: usize = kv.parse_num("pe_x")?;
    let pe_d: usize = kv.parse_num("pe_d")?;
    let sizes: Vec<usize> = kv.parse_list("layers")?;
    kv.reject_unknown()?;

    let density = Grid3::from_data(nx, ny, nz, read_f32_array(&dir.join("density.bin"), nx * ny * nz)?)?;
    let features = Grid4::from_data(
        channels,
        nx,
        ny,
        nz,
        read_f32_array(&dir.join("feature.bin"), channels * nx * ny * nz)?,
    )?;
    let params = read_f32_array(&dir.join("mlp.bin"), ColorHead::param_count(&sizes))?;
    let head = ColorHead::new(sizes, params, pe_x, pe_d)?;
    let bbox = Aabb::new(Vec3::new(bmin[0], bmin[1], bmin[2]), Vec3::new(bmax[0], bmax[1], bmax[2]));
    let field = VoxelField::new(density, features, bbox, head)?;
    Ok((field, shift))
}

/// Column-image bundle: the flattened form, same array conventions.
pub fn save_columns(dir: &Path, ci: &ColumnImage) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = format!(
        "nx = {}\nny = {}\nnz = {}\nchannels = {}\n",
        ci.density.nx, ci.density.ny, ci.nz, ci.channels
    );
    fs::write(dir.join("meta"), meta)?;
    write_f32_array(&dir.join("density.bin"), &ci.density.data)?;
    write_f32_array(&dir.join("feature.bin"), &ci.feature.data)?;
    Ok(())
}

pub fn load_columns(dir: &Path) -> Result<ColumnImage> {
    let kv = KvMap::parse(&fs::read_to_string(dir.join("meta"))?)?;
    let nx: usize = kv.parse_num("nx")?;
    let ny: usize = kv.parse_num("ny")?;
    let nz: usize = kv.parse_num("nz")?;
    let channels: usize = kv.parse_num("channels")?;
    kv.reject_unknown()?;
    let density = ChannelLattice::from_data(nx, ny, nz, read_f32_array(&dir.join("density.bin"), nx * ny * nz)?)?;
    let feature = ChannelLattice::from_data(
        nx,
        ny,
        channels * nz,
        read_f32_array(&dir.join("feature.bin"), nx * ny * channels * nz)?,
    )?;
    ColumnImage::from_parts(density, feature, nz, channels)
}

// ------------------------------------------------------------ shading maps

pub fn save_shading_map(dir: &Path, map: &ShadingMap) -> Result<()> {
    fs::create_dir_all(dir)?;
    let order: Vec<String> = map.view_order.iter().map(|v| v.to_string()).collect();
    let meta = format!(
        "nx = {}\nny = {}\nchannels = {}\nview_order = {}\n",
        map.lat.nx,
        map.lat.ny,
        map.lat.ch,
        order.join(" ")
    );
    fs::write(dir.join("meta"), meta)?;
    write_f32_array(&dir.join("shading.bin"), &map.lat.data)?;
    let valid_bytes: Vec<u8> = map.valid.iter().map(|&v| v as u8).collect();
    fs::write(dir.join("valid.bin"), valid_bytes)?;
    Ok(())
}

pub fn load_shading_map(dir: &Path) -> Result<ShadingMap> {
    let kv = KvMap::parse(&fs::read_to_string(dir.join("meta"))?)?;
    let nx: usize = kv.parse_num("nx")?;
    let ny: usize = kv.parse_num("ny")?;
    let ch: usize = kv.parse_num("channels")?;
    let view_order: Vec<u32> = kv.parse_list("view_order")?;
    kv.reject_unknown()?;
    if view_order.len() != ch {
        return Err(Error::SizeMismatch("view_order length must equal channel count".into()));
    }
    let lat = ChannelLattice::from_data(nx, ny, ch, read_f32_array(&dir.join("shading.bin"), nx * ny * ch)?)?;
    let valid_bytes = fs::read(dir.join("valid.bin"))?;
    if valid_bytes.len() != nx * ny * ch {
        return Err(Error::SizeMismatch("valid.bin length mismatch".into()));
    }
    Ok(ShadingMap { lat, valid: valid_bytes.iter().map(|&b| b != 0).collect(), view_order })
}

// ------------------------------------------------------------------ images

/// Binary PPM (P6), 8 bits per channel. Input values are clamped to [0,1].
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[f32]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::SizeMismatch("rgb buffer does not match dimensions".into()));
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    write!(w, "P6\n{} {}\n255\n", width, height)?;
    let bytes: Vec<u8> = rgb
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Single-channel PFM (`Pf`), little-endian, rows written bottom-up per the
/// format convention.
pub fn write_pfm(path: &Path, img: &ImageF) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write!(w, "Pf\n{} {}\n-1.0\n", img.width, img.height)?;
    for y in (0..img.height).rev() {
        for x in 0..img.width {
            w.write_all(&img.get(x, y).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<ImageF> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut header = Vec::new();
    // Three whitespace-separated header tokens: magic, "w h", scale.
    let mut tokens: Vec<String> = Vec::new();
    while tokens.len() < 4 {
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)?;
        if byte[0].is_ascii_whitespace() {
            if !header.is_empty() {
                tokens.push(String::from_utf8_lossy(&header).to_string());
                header.clear();
            }
        } else {
            header.push(byte[0]);
        }
    }
    if tokens[0] != "Pf" {
        return Err(Error::InvalidData(format!("{}: not a single-channel PFM", path.display())));
    }
    let width: usize =
        tokens[1].parse().map_err(|_| Error::InvalidData("bad PFM width".into()))?;
    let height: usize =
        tokens[2].parse().map_err(|_| Error::InvalidData("bad PFM height".into()))?;
    let scale: f64 = tokens[3].parse().map_err(|_| Error::InvalidData("bad PFM scale".into()))?;
    let little = scale < 0.0;
    let mut bytes = vec![0u8; width * height * 4];
    r.read_exact(&mut bytes)?;
    let mut img = ImageF::new(width, height, 0.0);
    for (i, ch) in bytes.chunks_exact(4).enumerate() {
        let arr = [ch[0], ch[1], ch[2], ch[3]];
        let v = if little { f32::from_le_bytes(arr) } else { f32::from_be_bytes(arr) };
        if !v.is_finite() {
            return Err(Error::NonFinite(path.display().to_string()));
        }
        let (x, row) = (i % width, i / width);
        img.set(x, height - 1 - row, v);
    }
    Ok(img)
}

// -------------------------------------------------------- correspondences

/// Text file of `dx dy dz cx cy cz` lines: deformed point, canonical point.
pub fn save_correspondences(path: &Path, pairs: &[(Vec3, Vec3)]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (d, c) in pairs {
        writeln!(w, "{} {} {} {} {} {}", d.x, d.y, d.z, c.x, c.y, c.z)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_correspondences(path: &Path) -> Result<Vec<(Vec3, Vec3)>> {
    let mut pairs = Vec::new();
    for (ln, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let nums: Vec<f64> = t
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::InvalidData(format!("line {}: bad number", ln + 1)))
            })
            .collect::<Result<_>>()?;
        if nums.len() != 6 {
            return Err(Error::InvalidData(format!("line {}: expected 6 numbers", ln + 1)));
        }
        let d = Vec3::new(nums[0], nums[1], nums[2]);
        let c = Vec3::new(nums[3], nums[4], nums[5]);
        if !d.is_finite() || !c.is_finite() {
            return Err(Error::NonFinite(format!("{} line {}", path.display(), ln + 1)));
        }
        pairs.push((d, c));
    }
    Ok(pairs)
}

// ----------------------------------------------------------- view manifest

/// One captured view: an id, a depth/shading PFM, and its camera.
#[derive(Debug, Clone)]
pub struct ViewEntry {
    pub id: u32,
    pub image_path: PathBuf,
    pub camera: Camera,
}

/// Lines of the form:
/// `view <id> <pfm-path> <focal> <w> <h> <px> <py> <pz> <tx> <ty> <tz>`
/// The camera looks from p to t with +Z as the up hint; the principal point
/// is the image center.
pub fn read_view_manifest(path: &Path) -> Result<Vec<ViewEntry>> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    for (ln, line) in fs::read_to_string(path)?.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        if parts.len() != 12 || parts[0] != "view" {
            return Err(Error::InvalidData(format!(
                "{} line {}: expected `view id path focal w h px py pz tx ty tz`",
                path.display(),
                ln + 1
            )));
        }
        let bad = |what: &str| Error::InvalidData(format!("line {}: bad {}", ln + 1, what));
        let id: u32 = parts[1].parse().map_err(|_| bad("id"))?;
        let image_path = base.join(parts[2]);
        let focal: f64 = parts[3].parse().map_err(|_| bad("focal"))?;
        let w: usize = parts[4].parse().map_err(|_| bad("width"))?;
        let h: usize = parts[5].parse().map_err(|_| bad("height"))?;
        let mut nums = [0.0f64; 6];
        for (i, p) in parts[6..12].iter().enumerate() {
            nums[i] = p.parse().map_err(|_| bad("camera number"))?;
        }
        let pos = Vec3::new(nums[0], nums[1], nums[2]);
        let target = Vec3::new(nums[3], nums[4], nums[5]);
        let camera = Camera::look_at(pos, target, Vec3::new(0.0, 0.0, 1.0), focal, w, h);
        out.push(ViewEntry { id, image_path, camera });
    }
    Ok(out)
}

pub fn write_view_manifest(path: &Path, entries: &[(u32, &Path, &Camera, Vec3)]) -> Result<()> {
    // The stored pose is (position, target); `target` is passed explicitly
    // since a Camera does not retain it.
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (id, img, cam, target) in entries {
        writeln!(
            w,
            "view {} {} {} {} {} {} {} {} {} {} {}",
            id,
            img.display(),
            cam.focal,
            cam.width,
            cam.height,
            cam.pos.x,
            cam.pos.y,
            cam.pos.z,
            target.x,
            target.y,
            target.z
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_parses_and_rejects() {
        let kv = KvMap::parse("a = 1\n# note\nb = two words\n").unwrap();
        assert_eq!(kv.parse_num::<i32>("a").unwrap(), 1);
        assert_eq!(kv.get("b"), Some("two words"));
        assert!(kv.reject_unknown().is_ok());
        assert!(parse_kv("a = 1\na = 2").is_err());
        assert!(parse_kv("just words").is_err());
        let kv2 = KvMap::parse("a = 1\nzz = 3").unwrap();
        let _ = kv2.get("a");
        assert!(kv2.reject_unknown().is_err());
    }

    #[test]
    fn pfm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = ImageF::new(3, 2, 0.0);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = i as f32 * 0.5 - 1.0;
        }
        let p = dir.path().join("x.pfm");
        write_pfm(&p, &img).unwrap();
        let back = read_pfm(&p).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn ppm_has_expected_header_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ppm");
        write_ppm(&p, 2, 2, &[0.0; 12]).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P6\n2 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 12);
    }

    #[test]
    fn f32_array_rejects_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        let mut w = fs::File::create(&p).unwrap();
        w.write_all(&f32::NAN.to_le_bytes()).unwrap();
        drop(w);
        assert!(matches!(read_f32_array(&p, 1), Err(Error::NonFinite(_))));
    }
}
