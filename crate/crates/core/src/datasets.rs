//! Image datasets, IDX files, the synthetic calorimeter generator and
//! batching.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::tensor::{ImageShape, Tensor};

pub const IDX_IMAGES_U8: u32 = 0x0000_0803;
pub const IDX_LABELS_U8: u32 = 0x0000_0801;
pub const IDX_IMAGES_F64: u32 = 0x0000_0E03;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Normalization {
    /// Bytes divided by 255.
    UnitInterval,
    /// Values stored as-is.
    Raw,
}

/// Binary pixel masks, one row of `masks` per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMasks {
    /// `[channels, pixels]`, entries 0 or 1.
    pub masks: Tensor,
    pub overlapping: bool,
}

impl ChannelMasks {
    pub fn new(masks: Tensor) -> Result<Self> {
        if masks.shape().len() != 2 {
            return Err(Error::invalid("masks must be a [channels, pixels] matrix"));
        }
        if masks.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("mask entries must be 0 or 1"));
        }
        let (c, p) = (masks.rows(), masks.cols());
        let overlapping = (0..p).any(|k| (0..c).filter(|&ch| masks.get2(ch, k) == 1.0).count() > 1);
        Ok(ChannelMasks { masks, overlapping })
    }

    pub fn channels(&self) -> usize {
        self.masks.rows()
    }

    /// Parses one line per channel; rows of `0`/`1` characters are
    /// separated by `/`.
    pub fn parse(text: &str, shape: ImageShape) -> Result<Self> {
        let mut data = Vec::new();
        let mut channels = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let rows: Vec<&str> = line.split('/').collect();
            if rows.len() != shape.height || rows.iter().any(|r| r.len() != shape.width) {
                return Err(Error::Format(format!(
                    "mask line {}: expected {} rows of {} characters",
                    lineno + 1,
                    shape.height,
                    shape.width
                )));
            }
            for ch in rows.concat().chars() {
                data.push(match ch {
                    '0' => 0.0,
                    '1' => 1.0,
                    other => {
                        return Err(Error::Format(format!(
                            "mask line {}: unexpected character `{other}`",
                            lineno + 1
                        )))
                    }
                });
            }
            channels += 1;
        }
        if channels == 0 {
            return Err(Error::Format("mask file has no channels".into()));
        }
        ChannelMasks::new(Tensor::matrix(channels, shape.pixels(), data)?)
    }

    pub fn to_text(&self, shape: ImageShape) -> String {
        let mut out = String::new();
        for c in 0..self.channels() {
            let row = self.masks.row(c);
            let lines: Vec<String> = row
                .chunks(shape.width)
                .map(|r| r.iter().map(|&v| if v == 1.0 { '1' } else { '0' }).collect())
                .collect();
            out.push_str(&lines.join("/"));
            out.push('\n');
        }
        out
    }

    pub fn read(path: &Path, shape: ImageShape) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ChannelMasks::parse(&text, shape)
    }

    pub fn write(&self, path: &Path, shape: ImageShape) -> Result<()> {
        fs::write(path, self.to_text(shape)).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub shape: ImageShape,
    /// `[n, pixels]`
    pub images: Tensor,
    /// `[n, k]`, aligned with `images`.
    pub conditions: Option<Tensor>,
    pub labels: Option<Vec<usize>>,
    pub channel_masks: Option<ChannelMasks>,
    /// Expected channel sums given each example's conditions.
    pub reference_channels: Option<Tensor>,
    pub normalization: Normalization,
}

impl Dataset {
    pub fn new(shape: ImageShape, images: Tensor, normalization: Normalization) -> Result<Self> {
        let ds = Dataset {
            shape,
            images,
            conditions: None,
            labels: None,
            channel_masks: None,
            reference_channels: None,
            normalization,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.images.rows();
        if self.images.shape().len() != 2 || self.images.cols() != self.shape.pixels() {
            return Err(Error::invalid(format!(
                "images {:?} do not match {}×{} pixels",
                self.images.shape(),
                self.shape.height,
                self.shape.width
            )));
        }
        if let Some(q) = &self.conditions {
            if q.rows() != n {
                return Err(Error::invalid(format!("{} condition rows for {n} images", q.rows())));
            }
        }
        if let Some(l) = &self.labels {
            if l.len() != n {
                return Err(Error::invalid(format!("{} labels for {n} images", l.len())));
            }
        }
        if let Some(m) = &self.channel_masks {
            if m.masks.cols() != self.shape.pixels() {
                return Err(Error::invalid("mask size differs from image size"));
            }
        }
        if let Some(r) = &self.reference_channels {
            if r.rows() != n {
                return Err(Error::invalid("reference channels are not aligned with images"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn condition_dim(&self) -> usize {
        self.conditions.as_ref().map_or(0, Tensor::cols)
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            shape: self.shape,
            images: self.images.select_rows(idx),
            conditions: self.conditions.as_ref().map(|q| q.select_rows(idx)),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            channel_masks: self.channel_masks.clone(),
            reference_channels: self.reference_channels.as_ref().map(|r| r.select_rows(idx)),
            normalization: self.normalization,
        }
    }

    /// Seeded split into `(train, holdout)` with `round(n·holdout)` held out.
    pub fn split(&self, holdout: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        let n = self.len();
        let k = (n as f64 * holdout).round() as usize;
        if !(0.0..1.0).contains(&holdout) || k == 0 || k >= n {
            return Err(Error::invalid(format!("holdout {holdout} leaves an empty side of {n} examples")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (test, train) = idx.split_at(k);
        Ok((self.subset(train), self.subset(test)))
    }

    /// Shuffled full batches for one epoch.
    pub fn batches(&self, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Batch>> {
        Ok(batch_indices(self.len(), batch_size, seed, epoch)?
            .into_iter()
            .map(|idx| Batch {
                images: self.images.select_rows(&idx),
                conditions: self.conditions.as_ref().map(|q| q.select_rows(&idx)),
                indices: idx,
            })
            .collect())
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub images: Tensor,
    pub conditions: Option<Tensor>,
}

/// Index sets of the full batches of a seeded permutation of `0..n`. The
/// last partial batch is dropped.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 || batch_size > n {
        return Err(Error::invalid(format!("batch size {batch_size} with {n} examples")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch)));
    Ok(idx.chunks_exact(batch_size).map(<[usize]>::to_vec).collect())
}

// ---------------------------------------------------------------- IDX

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format("truncated IDX header".into()))
}

/// Header of an IDX file: magic and declared dimensions, plus payload offset.
fn idx_header(bytes: &[u8], expected: &[u32]) -> Result<(u32, Vec<usize>, usize)> {
    let magic = read_u32(bytes, 0)?;
    if !expected.contains(&magic) {
        return Err(Error::BadMagic {
            expected: expected[0],
            found: magic,
        });
    }
    let ndim = (magic & 0xFF) as usize;
    let mut dims = Vec::with_capacity(ndim);
    for k in 0..ndim {
        dims.push(read_u32(bytes, 4 + 4 * k)? as usize);
    }
    Ok((magic, dims, 4 + 4 * ndim))
}

fn payload_len(dims: &[usize], elem: usize) -> Result<usize> {
    dims.iter()
        .try_fold(elem, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("IDX dimensions {dims:?} overflow")))
}

/// Parses an IDX image file (`u8` scaled to `[0, 1]`, or raw `f64`).
pub fn parse_idx_images(bytes: &[u8]) -> Result<(ImageShape, Tensor, Normalization)> {
    let (magic, dims, off) = idx_header(bytes, &[IDX_IMAGES_U8, IDX_IMAGES_F64])?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::Format(format!("empty IDX image dimensions {dims:?}")));
    }
    let elem = if magic == IDX_IMAGES_U8 { 1 } else { 8 };
    let len = payload_len(&dims, elem)?;
    let payload = bytes
        .get(off..)
        .filter(|p| p.len() >= len)
        .ok_or_else(|| Error::Format(format!("truncated IDX payload: need {len} bytes after header")))?;
    if payload.len() != len {
        return Err(Error::Format(format!(
            "IDX payload has {} bytes, header declares {len}",
            payload.len()
        )));
    }
    let (data, norm) = if magic == IDX_IMAGES_U8 {
        (payload.iter().map(|&b| f64::from(b) / 255.0).collect(), Normalization::UnitInterval)
    } else {
        (
            payload
                .chunks_exact(8)
                .map(|c| f64::from_be_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            Normalization::Raw,
        )
    };
    Ok((ImageShape::new(h, w), Tensor::matrix(n, h * w, data)?, norm))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let (_, dims, off) = idx_header(bytes, &[IDX_LABELS_U8])?;
    let n = dims[0];
    let payload = &bytes[off.min(bytes.len())..];
    if payload.len() != n {
        return Err(Error::Format(format!(
            "IDX label payload has {} bytes, header declares {n}",
            payload.len()
        )));
    }
    Ok(payload.iter().map(|&b| b as usize).collect())
}

fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        data[i * classes + l] = 1.0;
    }
    Tensor::from_parts(vec![labels.len(), classes], data)
}

/// Loads IDX images and, optionally, labels (one-hot encoded into conditions).
pub fn load_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<Dataset> {
    let bytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let (shape, images, norm) = parse_idx_images(&bytes)?;
    let mut ds = Dataset::new(shape, images, norm)?;
    if let Some(lp) = labels_path {
        let lb = fs::read(lp).map_err(|e| Error::io(lp, e))?;
        let labels = parse_idx_labels(&lb)?;
        if labels.len() != ds.len() {
            return Err(Error::Format(format!("{} labels for {} images", labels.len(), ds.len())));
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        ds.conditions = Some(one_hot(&labels, classes));
        ds.labels = Some(labels);
    }
    Ok(ds)
}

fn idx_dims(magic: u32, dims: &[usize]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out
}

/// IDX image bytes. With `Normalization::UnitInterval` values are rounded
/// to bytes, otherwise written as `f64`.
pub fn encode_idx_images(images: &Tensor, shape: ImageShape, norm: Normalization) -> Vec<u8> {
    let n = images.rows();
    match norm {
        Normalization::UnitInterval => {
            let mut out = idx_dims(IDX_IMAGES_U8, &[n, shape.height, shape.width]);
            out.extend(images.data().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
            out
        }
        Normalization::Raw => {
            let mut out = idx_dims(IDX_IMAGES_F64, &[n, shape.height, shape.width]);
            for v in images.data() {
                out.extend_from_slice(&v.to_be_bytes());
            }
            out
        }
    }
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = idx_dims(IDX_LABELS_U8, &[labels.len()]);
    for &l in labels {
        out.push(u8::try_from(l).map_err(|_| Error::invalid(format!("label {l} exceeds a byte")))?);
    }
    Ok(out)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------- synthetic calorimeter

pub const HEP_ATTRIBUTES: [&str; 9] = [
    "mass", "px", "py", "pz", "charge", "energy", "pos_x", "pos_y", "width",
];
pub const HEP_CHANNELS: [&str; 5] = ["q_top_left", "q_top_right", "q_bottom_left", "q_bottom_right", "center"];

/// One particle's attributes, in [`HEP_ATTRIBUTES`] order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HepAttributes {
    pub mass: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub charge: f64,
    pub energy: f64,
    pub pos_x: f64,
    pub pos_y: f64,
    pub width: f64,
}

impl HepAttributes {
    pub fn to_array(&self) -> [f64; 9] {
        [
            self.mass, self.px, self.py, self.pz, self.charge, self.energy, self.pos_x, self.pos_y, self.width,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 9 {
            return Err(Error::invalid(format!("expected 9 attributes, got {}", v.len())));
        }
        Ok(HepAttributes {
            mass: v[0],
            px: v[1],
            py: v[2],
            pz: v[3],
            charge: v[4],
            energy: v[5],
            pos_x: v[6],
            pos_y: v[7],
            width: v[8],
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthHepConfig {
    pub n_examples: usize,
    pub image_side: usize,
    pub seed: u64,
    /// Standard deviation of the folded-normal pixel noise.
    pub noise_level: f64,
    /// Deposited intensity per unit of `energy·|charge|`.
    pub intensity_scale: f64,
    pub energy_range: (f64, f64),
    pub mass_range: (f64, f64),
    pub width_range: (f64, f64),
    /// `pos_x`, `pos_y` are uniform on `[-1, 1]` and place the blob at
    /// `side/2 + pos·position_spread·side`.
    pub position_spread: f64,
    /// Radius of the center channel as a fraction of the side.
    pub disk_radius: f64,
}

impl Default for SynthHepConfig {
    fn default() -> Self {
        SynthHepConfig {
            n_examples: 5000,
            image_side: 16,
            seed: 0,
            noise_level: 0.05,
            intensity_scale: 10.0,
            energy_range: (0.5, 1.5),
            mass_range: (0.5, 1.5),
            width_range: (0.6, 1.4),
            position_spread: 0.3,
            disk_radius: 0.22,
        }
    }
}

impl SynthHepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_side < 8 {
            return Err(Error::invalid("image_side must be at least 8"));
        }
        if self.n_examples == 0 {
            return Err(Error::invalid("n_examples must be at least 1"));
        }
        let ranges = [self.energy_range, self.mass_range, self.width_range];
        if ranges.iter().any(|&(lo, hi)| !(lo > 0.0 && hi >= lo)) {
            return Err(Error::invalid("attribute ranges must be positive and ordered"));
        }
        if !(self.noise_level >= 0.0 && self.intensity_scale > 0.0) {
            return Err(Error::invalid("noise_level ≥ 0 and intensity_scale > 0 required"));
        }
        if !(self.position_spread >= 0.0 && self.disk_radius > 0.0 && self.disk_radius < 0.5) {
            return Err(Error::invalid("position_spread ≥ 0 and disk_radius in (0, 0.5) required"));
        }
        Ok(())
    }

    pub fn shape(&self) -> ImageShape {
        ImageShape::square(self.image_side)
    }

    /// Four quadrants with the center disk removed, then the disk.
    pub fn masks(&self) -> ChannelMasks {
        let s = self.image_side;
        let c = s as f64 / 2.0;
        let r = self.disk_radius * s as f64;
        let mut data = vec![0.0; 5 * s * s];
        for y in 0..s {
            for x in 0..s {
                let (fx, fy) = (x as f64 + 0.5 - c, y as f64 + 0.5 - c);
                let ch = if fx * fx + fy * fy <= r * r {
                    4
                } else {
                    usize::from(fx >= 0.0) + 2 * usize::from(fy >= 0.0)
                };
                data[ch * s * s + y * s + x] = 1.0;
            }
        }
        ChannelMasks::new(Tensor::from_parts(vec![5, s * s], data)).expect("0/1 masks")
    }

    /// Noise-free deposit: an anisotropic Gaussian, truncated at three
    /// standard deviations and normalized over the grid, carrying
    /// `intensity_scale·energy·|charge|` in total. Its long axis follows
    /// `(px, py)`; elongation grows with transverse momentum.
    pub fn render(&self, a: &HepAttributes) -> Vec<f64> {
        let s = self.image_side;
        let sf = s as f64;
        let (cx, cy) = (
            sf / 2.0 + a.pos_x * self.position_spread * sf,
            sf / 2.0 + a.pos_y * self.position_spread * sf,
        );
        let pt = a.px.hypot(a.py);
        let elong = 1.0 + 0.5 * pt / (1.0 + pt);
        let base = a.width * sf / 16.0;
        let (s_major, s_minor) = (base * elong, base / elong);
        let theta = a.py.atan2(a.px);
        let (ct, st) = (theta.cos(), theta.sin());
        let mut w = vec![0.0; s * s];
        for y in 0..s {
            for x in 0..s {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let u = (ct * dx + st * dy) / s_major;
                let v = (-st * dx + ct * dy) / s_minor;
                let r2 = u * u + v * v;
                if r2 <= 9.0 {
                    w[y * s + x] = (-0.5 * r2).exp();
                }
            }
        }
        let total: f64 = w.iter().sum();
        let intensity = self.intensity_scale * a.energy * a.charge.abs();
        if total > 0.0 {
            for v in &mut w {
                *v *= intensity / total;
            }
        }
        w
    }

    /// Expected channel sums given the attributes: deposit plus the mean of
    /// the folded-normal noise over each mask.
    pub fn expected_channels(&self, a: &HepAttributes, masks: &ChannelMasks) -> Vec<f64> {
        let img = self.render(a);
        let noise_mean = self.noise_level * (2.0 / std::f64::consts::PI).sqrt();
        (0..masks.channels())
            .map(|c| {
                let m = masks.masks.row(c);
                let dep: f64 = img.iter().zip(m).map(|(v, k)| v * k).sum();
                dep + noise_mean * m.iter().sum::<f64>()
            })
            .collect()
    }

    pub fn sample_attributes(&self, rng: &mut ChaCha8Rng) -> HepAttributes {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let u = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
        HepAttributes {
            mass: u(rng, self.mass_range),
            px: normal.sample(rng),
            py: normal.sample(rng),
            pz: normal.sample(rng),
            charge: if rng.random_bool(0.5) { 1.0 } else { -1.0 },
            energy: u(rng, self.energy_range),
            pos_x: rng.random_range(-1.0..1.0),
            pos_y: rng.random_range(-1.0..1.0),
            width: u(rng, self.width_range),
        }
    }
}

/// Synthetic calorimeter-like dataset. Conditions are the 9 attributes,
/// labels the dominant expected channel.
pub fn synth_hep(cfg: &SynthHepConfig) -> Result<Dataset> {
    cfg.validate()?;
    let s = cfg.image_side;
    let masks = cfg.masks();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_level).map_err(|e| Error::invalid(e.to_string()))?;
    let mut images = Vec::with_capacity(cfg.n_examples * s * s);
    let mut conds = Vec::with_capacity(cfg.n_examples * 9);
    let mut refs = Vec::with_capacity(cfg.n_examples * 5);
    let mut labels = Vec::with_capacity(cfg.n_examples);
    for _ in 0..cfg.n_examples {
        let a = cfg.sample_attributes(&mut rng);
        let img = cfg.render(&a);
        if cfg.noise_level > 0.0 {
            images.extend(img.iter().map(|v| v + noise.sample(&mut rng).abs()));
        } else {
            images.extend_from_slice(&img);
        }
        let ch = cfg.expected_channels(&a, &masks);
        let dominant = (0..ch.len())
            .max_by(|&i, &j| ch[i].total_cmp(&ch[j]))
            .expect("5 channels");
        labels.push(dominant);
        refs.extend(ch);
        conds.extend(a.to_array());
    }
    let n = cfg.n_examples;
    let mut ds = Dataset::new(cfg.shape(), Tensor::matrix(n, s * s, images)?, Normalization::Raw)?;
    ds.conditions = Some(Tensor::matrix(n, 9, conds)?);
    ds.labels = Some(labels);
    ds.channel_masks = Some(masks);
    ds.reference_channels = Some(Tensor::matrix(n, 5, refs)?);
    Ok(ds)
}

/// Attributes CSV with a header of attribute names.
pub fn attributes_csv(names: &[&str], values: &Tensor) -> String {
    let mut out = names.join(",");
    out.push('\n');
    for i in 0..values.rows() {
        let row: Vec<String> = values.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Reads a numeric CSV whose first line is a header.
pub fn parse_attributes_csv(text: &str) -> Result<(Vec<String>, Tensor)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Format("empty attributes CSV".into()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Format(format!("attributes CSV row {}: {e}", k + 1)))?;
        if row.len() != header.len() {
            return Err(Error::Format(format!(
                "attributes CSV row {} has {} fields, header has {}",
                k + 1,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format("attributes CSV has no rows".into()));
    }
    Ok((header, Tensor::from_rows(&rows)?))
}

/// Writes `images.idx`, `labels.idx`, `attributes.csv`, `channels.csv` and
/// `masks.txt` into `dir`.
pub fn export_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("images.idx"), &encode_idx_images(&ds.images, ds.shape, ds.normalization))?;
    if let Some(l) = &ds.labels {
        write_file(&dir.join("labels.idx"), &encode_idx_labels(l)?)?;
    }
    if let Some(q) = &ds.conditions {
        let names: Vec<String> = if q.cols() == 9 {
            HEP_ATTRIBUTES.iter().map(|s| s.to_string()).collect()
        } else {
            (0..q.cols()).map(|k| format!("q{k}")).collect()
        };
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        write_file(&dir.join("attributes.csv"), attributes_csv(&names, q).as_bytes())?;
    }
    if let Some(r) = &ds.reference_channels {
        let names: Vec<String> = (0..r.cols())
            .map(|c| HEP_CHANNELS.get(c).map_or(format!("ch{c}"), |s| s.to_string()))
            .collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        write_file(&dir.join("channels.csv"), attributes_csv(&names, r).as_bytes())?;
    }
    if let Some(m) = &ds.channel_masks {
        m.write(&dir.join("masks.txt"), ds.shape)?;
    }
    Ok(())
}

// ------------------------------------------------------ toy cluster data

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterConfig {
    pub n_examples: usize,
    pub image_side: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            n_examples: 2000,
            image_side: 8,
            noise: 0.1,
            seed: 0,
        }
    }
}

/// Two well separated image clusters: a bright square in the upper-left
/// quadrant and a bright bar along the lower edge, each with Gaussian pixel
/// noise clipped to `[0, 1]`. Labels and one-hot conditions give the cluster.
pub fn gaussian_clusters(cfg: &ClusterConfig) -> Result<Dataset> {
    let s = cfg.image_side;
    if s < 4 || cfg.n_examples < 2 {
        return Err(Error::invalid("cluster data needs side ≥ 4 and at least 2 examples"));
    }
    let mut templates = [vec![0.1; s * s], vec![0.1; s * s]];
    for y in 0..s {
        for x in 0..s {
            if x < s / 2 && y < s / 2 {
                templates[0][y * s + x] = 0.9;
            }
            if y >= s - s / 4 {
                templates[1][y * s + x] = 0.9;
            }
        }
    }
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut images = Vec::with_capacity(cfg.n_examples * s * s);
    let mut labels = Vec::with_capacity(cfg.n_examples);
    for _ in 0..cfg.n_examples {
        let k = usize::from(rng.random_bool(0.5));
        images.extend(templates[k].iter().map(|t| (t + noise.sample(&mut rng)).clamp(0.0, 1.0)));
        labels.push(k);
    }
    let mut ds = Dataset::new(
        ImageShape::square(s),
        Tensor::matrix(cfg.n_examples, s * s, images)?,
        Normalization::UnitInterval,
    )?;
    ds.conditions = Some(one_hot(&labels, 2));
    ds.labels = Some(labels);
    Ok(ds)
}
