//! Procedural multi-domain liveness dataset.
//!
//! A real sample is a shaded elliptical "face" with an analytic dome depth
//! map. A spoof reuses the same content and adds one presentation artifact
//! (moiré stripes, print flatness, or a colour cast) and gets an all-zero
//! depth label. Each domain then applies its own capture style: background
//! level, per-channel colour shift, contrast, blur and sensor noise.
//!
//! # File format
//!
//! ```text
//! "IADG" | version: u16 LE | header_len: u32 LE | header: UTF-8 JSON | data
//! ```
//!
//! The JSON header lists the domains, counts, image and depth sizes and one
//! record per sample with byte offsets into `data`, which holds raw `f32` LE
//! tensors (image `3×S×S`, then depth `D×D`, per sample).

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Class;
use crate::numcore::{Rng, Tensor};

pub const DATASET_MAGIC: &[u8; 4] = b"IADG";
pub const DATASET_VERSION: u16 = 1;
const PREAMBLE: usize = 4 + 2 + 4;

const CONTENT_STREAM: u64 = 1;
const ATTACK_STREAM: u64 = 2;
const STYLE_STREAM: u64 = 3;

/// Capture conditions of one domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub id: String,
    /// Additive per-channel colour offset.
    pub hue_shift: [f64; 3],
    pub contrast: f64,
    pub blur_sigma: f64,
    pub noise_std: f64,
    pub background_level: f64,
}

impl DomainSpec {
    /// `count` domains named `D1…`. The first four are hand-set to differ in
    /// every parameter; further ones are drawn from the same ranges.
    pub fn defaults(count: usize) -> Vec<DomainSpec> {
        let table = [
            ([0.06, 0.0, -0.06], 1.0, 0.0, 0.01, 0.25),
            ([-0.05, 0.03, 0.08], 0.6, 0.8, 0.04, 0.55),
            ([0.0, -0.07, 0.03], 1.35, 0.4, 0.07, 0.1),
            ([-0.1, 0.06, -0.02], 0.8, 1.4, 0.02, 0.7),
        ];
        let mut rng = Rng::new(0xD0_4A1);
        (0..count)
            .map(|i| {
                let (hue_shift, contrast, blur_sigma, noise_std, background_level) = match table.get(i) {
                    Some(&row) => row,
                    None => (
                        [rng.range(-0.1, 0.1), rng.range(-0.1, 0.1), rng.range(-0.1, 0.1)],
                        rng.range(0.6, 1.4),
                        rng.range(0.0, 1.5),
                        rng.range(0.01, 0.08),
                        rng.range(0.1, 0.7),
                    ),
                };
                DomainSpec {
                    id: format!("D{}", i + 1),
                    hue_shift,
                    contrast,
                    blur_sigma,
                    noise_std,
                    background_level,
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    /// `3×S×S`, values in `[0, 1]`, exactly representable as `f32`.
    pub image: Tensor,
    /// `1×D×D` in `[0, 1]`; all zero for spoofs.
    pub depth: Tensor,
    pub class: Class,
    pub domain: String,
    pub seed: u64,
}

/// Domain-independent part of a sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Content {
    /// `3×S×S` face colour before compositing.
    pub face: Vec<f64>,
    /// `S×S` face coverage in `[0, 1]`.
    pub alpha: Vec<f64>,
    pub depth: Vec<f64>,
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Face geometry and appearance for `seed`, with the spoof artifact applied
/// when `class` is spoof.
pub fn render_content(seed: u64, class: Class, size: usize, depth_size: usize) -> Content {
    let root = Rng::new(seed);
    let mut rng = root.split(CONTENT_STREAM);
    let s = size as f64;
    let cx = s * (0.5 + rng.range(-0.08, 0.08));
    let cy = s * (0.5 + rng.range(-0.06, 0.06));
    let r = s * rng.range(0.27, 0.35);
    let aspect = rng.range(1.0, 1.2);
    let red = rng.range(0.55, 0.8);
    let skin = [red, red * rng.range(0.7, 0.85), red * rng.range(0.55, 0.7)];
    let light = [rng.range(-0.4, 0.4), rng.range(-0.4, 0.1)];
    let gratings: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.range(0.0, std::f64::consts::PI), rng.range(0.15, 0.45), rng.range(0.0, 6.3)))
        .collect();

    let dome = |x: f64, y: f64| -> (f64, f64, f64) {
        let (u, v) = ((x - cx) / r, (y - cy) / (r * aspect));
        let rho2 = u * u + v * v;
        (rho2.sqrt(), (1.0 - rho2).max(0.0).sqrt(), u * light[0] + v * light[1])
    };
    let eyes = [(cx - 0.38 * r, cy - 0.25 * r * aspect), (cx + 0.38 * r, cy - 0.25 * r * aspect)];

    let mut attack_rng = root.split(ATTACK_STREAM);
    let attack = attack_rng.below(3);
    let stripe_angle = attack_rng.range(0.0, std::f64::consts::PI);
    let stripe_period = attack_rng.range(2.2, 3.5);
    let mut cast = [attack_rng.range(1.08, 1.25), attack_rng.range(0.92, 1.0), attack_rng.range(0.72, 0.88)];
    let rot = attack_rng.below(3);
    cast.rotate_left(rot);
    let spoof = class == Class::Spoof;

    let mut face = vec![0.0; 3 * size * size];
    let mut alpha = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (rho, height, tilt) = dome(px, py);
            let a = smoothstep((1.0 - rho) / 0.08);
            let mut shade = 0.35 + 0.65 * height + 0.25 * tilt * height;
            let mut texture: f64 = gratings
                .iter()
                .map(|&(th, f, ph)| 0.025 * (f * (px * th.cos() + py * th.sin()) + ph).sin())
                .sum();
            for &(ex, ey) in &eyes {
                let d2 = ((px - ex) / (0.13 * r)).powi(2) + ((py - ey) / (0.08 * r)).powi(2);
                if d2 < 1.0 {
                    shade *= 0.45 + 0.55 * d2;
                }
            }
            let mouth = ((px - cx) / (0.3 * r)).powi(2) + ((py - (cy + 0.45 * r * aspect)) / (0.05 * r)).powi(2);
            if mouth < 1.0 {
                shade *= 0.6 + 0.4 * mouth;
            }
            let mut rgb = [0.0; 3];
            if spoof {
                match attack {
                    0 => {
                        let phase = (px * stripe_angle.cos() + py * stripe_angle.sin()) / stripe_period;
                        texture += 0.1 * (2.0 * std::f64::consts::PI * phase).sin();
                    }
                    1 => {
                        shade = 0.72 + 0.05 * tilt + 0.1 * (shade - 0.7);
                        texture *= 0.3;
                    }
                    _ => texture *= 0.5,
                }
            }
            for (ch, out) in rgb.iter_mut().enumerate() {
                let mut v = skin[ch] * shade + texture;
                if spoof && attack == 2 {
                    v = v * cast[ch] + 0.03;
                }
                *out = v;
            }
            for ch in 0..3 {
                face[(ch * size + y) * size + x] = rgb[ch];
            }
            alpha[y * size + x] = a;
        }
    }

    let mut depth = vec![0.0; depth_size * depth_size];
    if !spoof {
        let cell = s / depth_size as f64;
        for y in 0..depth_size {
            for x in 0..depth_size {
                depth[y * depth_size + x] = dome((x as f64 + 0.5) * cell, (y as f64 + 0.5) * cell).1;
            }
        }
    }
    Content { face, alpha, depth }
}

fn gaussian_blur(img: &mut [f64], size: usize, sigma: f64) {
    if sigma < 0.1 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.into_iter().map(|t| t / norm).collect();
    let n = size as isize;
    let mut tmp = vec![0.0; size * size];
    for plane in img.chunks_mut(size * size) {
        for y in 0..n {
            for x in 0..n {
                tmp[(y * n + x) as usize] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * plane[(y * n + (x + k as isize - radius).clamp(0, n - 1)) as usize])
                    .sum();
            }
        }
        for y in 0..n {
            for x in 0..n {
                plane[(y * n + x) as usize] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * tmp[((y + k as isize - radius).clamp(0, n - 1) * n + x) as usize])
                    .sum();
            }
        }
    }
}

/// Composites content onto the domain background and applies the domain's
/// capture style. Output values are clamped to `[0, 1]` and rounded to `f32`.
pub fn apply_domain_style(content: &Content, domain: &DomainSpec, seed: u64, size: usize) -> Vec<f64> {
    let mut rng = Rng::new(seed).split(STYLE_STREAM);
    let jitter = |rng: &mut Rng, v: f64, rel: f64| v * (1.0 + rng.range(-rel, rel));
    let contrast = jitter(&mut rng, domain.contrast, 0.1);
    let blur = jitter(&mut rng, domain.blur_sigma, 0.2);
    let noise = jitter(&mut rng, domain.noise_std, 0.2);
    let bg = (domain.background_level + rng.range(-0.05, 0.05)).clamp(0.0, 1.0);
    let hue: Vec<f64> = domain.hue_shift.iter().map(|&h| h + rng.range(-0.02, 0.02)).collect();
    let gradient = [rng.range(-0.1, 0.1), rng.range(-0.1, 0.1)];

    let plane = size * size;
    let mut img = vec![0.0; 3 * plane];
    for ch in 0..3 {
        for y in 0..size {
            for x in 0..size {
                let i = y * size + x;
                let back = bg + gradient[0] * (x as f64 / size as f64 - 0.5) + gradient[1] * (y as f64 / size as f64 - 0.5);
                let a = content.alpha[i];
                let v = a * content.face[ch * plane + i] + (1.0 - a) * back + hue[ch];
                img[ch * plane + i] = (v - 0.5) * contrast + 0.5;
            }
        }
    }
    gaussian_blur(&mut img, size, blur);
    for v in &mut img {
        *v = ((*v + noise * rng.normal()).clamp(0.0, 1.0) as f32) as f64;
    }
    img
}

/// Deterministic sample for `(seed, domain, class, size)`. Depth labels are
/// `size/8` on a side.
pub fn gen_sample(seed: u64, domain: &DomainSpec, class: Class, size: usize) -> Result<SyntheticSample> {
    if size < 16 || size % 8 != 0 {
        return Err(Error::InvalidArgument(format!("image size {size} must be ≥ 16 and divisible by 8")));
    }
    let depth_size = size / 8;
    let content = render_content(seed, class, size, depth_size);
    let image = apply_domain_style(&content, domain, seed, size);
    let depth = content.depth.iter().map(|&d| (d as f32) as f64).collect();
    Ok(SyntheticSample {
        image: Tensor::new(&[3, size, size], image)?,
        depth: Tensor::new(&[1, depth_size, depth_size], depth)?,
        class,
        domain: domain.id.clone(),
        seed,
    })
}

/// A generated or loaded collection of samples across domains.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub size: usize,
    pub depth_size: usize,
    pub domains: Vec<DomainSpec>,
    pub samples: Vec<SyntheticSample>,
}

fn sample_seed(base: u64, domain: usize, class: Class, index: usize) -> u64 {
    use rand::RngCore;
    Rng::new(base)
        .split_path(&[domain as u64, class.is_real() as u64, index as u64])
        .next_u64()
}

impl Dataset {
    /// `per_class` samples of each class for each domain.
    pub fn generate(domains: &[DomainSpec], per_class: usize, size: usize, seed: u64) -> Result<Dataset> {
        let mut samples = Vec::with_capacity(domains.len() * per_class * 2);
        for (d, domain) in domains.iter().enumerate() {
            for class in Class::BOTH {
                for i in 0..per_class {
                    samples.push(gen_sample(sample_seed(seed, d, class, i), domain, class, size)?);
                }
            }
        }
        Ok(Dataset {
            size,
            depth_size: size / 8,
            domains: domains.to_vec(),
            samples,
        })
    }

    pub fn domain_ids(&self) -> Vec<String> {
        self.domains.iter().map(|d| d.id.clone()).collect()
    }

    fn check_domain(&self, id: &str) -> Result<()> {
        if self.domains.iter().any(|d| d.id == id) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("unknown domain {id:?}; have {:?}", self.domain_ids())))
        }
    }

    pub fn in_domains(&self, ids: &[&str]) -> Vec<SyntheticSample> {
        self.samples.iter().filter(|s| ids.contains(&s.domain.as_str())).cloned().collect()
    }

    /// Leave-one-domain-out split: `(all other domains, holdout)`.
    pub fn split_holdout(&self, holdout: &str) -> Result<(Vec<SyntheticSample>, Vec<SyntheticSample>)> {
        self.check_domain(holdout)?;
        if self.domains.len() < 2 {
            return Err(Error::InvalidArgument("leave-one-out needs at least two domains".into()));
        }
        let (test, train): (Vec<_>, Vec<_>) = self.samples.iter().cloned().partition(|s| s.domain == holdout);
        Ok((train, test))
    }

    /// Training samples from `sources` and test samples from `target`.
    pub fn split_sources(&self, sources: &[&str], target: &str) -> Result<(Vec<SyntheticSample>, Vec<SyntheticSample>)> {
        for id in sources.iter().chain(std::iter::once(&target)) {
            self.check_domain(id)?;
        }
        if sources.contains(&target) {
            return Err(Error::InvalidArgument(format!("target {target} is also a source")));
        }
        Ok((self.in_domains(sources), self.in_domains(&[target])))
    }
}

/// Generates the domains and returns the leave-`holdout`-out split.
pub fn build_split(
    domains: &[DomainSpec],
    per_class: usize,
    holdout: &str,
    size: usize,
    seed: u64,
) -> Result<(Vec<SyntheticSample>, Vec<SyntheticSample>)> {
    if !domains.iter().any(|d| d.id == holdout) {
        return Err(Error::InvalidArgument(format!("unknown holdout domain {holdout:?}")));
    }
    Dataset::generate(domains, per_class, size, seed)?.split_holdout(holdout)
}

pub fn stack_images(samples: &[&SyntheticSample]) -> Result<Tensor> {
    let parts: Vec<Tensor> = samples.iter().map(|s| s.image.clone()).collect();
    Tensor::stack(&parts)
}

pub fn stack_depths(samples: &[&SyntheticSample]) -> Result<Tensor> {
    let parts: Vec<Tensor> = samples.iter().map(|s| s.depth.clone()).collect();
    let d = samples.first().map_or(0, |s| s.depth.shape()[1]);
    Tensor::stack(&parts)?.reshape(&[samples.len(), 1, d, d])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub domain: String,
    pub class: Class,
    pub seed: u64,
    pub image_offset: u64,
    pub depth_offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub real: usize,
    pub spoof: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub size: usize,
    pub depth_size: usize,
    pub domains: Vec<DomainSpec>,
    pub total: usize,
    pub per_domain: BTreeMap<String, ClassCounts>,
    pub data_bytes: u64,
    pub samples: Vec<SampleRecord>,
}

fn push_f32(buf: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let (s, d) = (dataset.size, dataset.depth_size);
    let image_bytes = (3 * s * s * 4) as u64;
    let depth_bytes = (d * d * 4) as u64;
    let mut per_domain: BTreeMap<String, ClassCounts> = dataset
        .domains
        .iter()
        .map(|dm| (dm.id.clone(), ClassCounts { real: 0, spoof: 0 }))
        .collect();
    let mut records = Vec::with_capacity(dataset.samples.len());
    let mut data = Vec::with_capacity(dataset.samples.len() * (image_bytes + depth_bytes) as usize);
    for sample in &dataset.samples {
        if sample.image.shape() != [3, s, s] || sample.depth.shape() != [1, d, d] {
            return Err(Error::shape("write_dataset", format!("sample {} has unexpected tensor shapes", sample.seed)));
        }
        let counts = per_domain
            .get_mut(&sample.domain)
            .ok_or_else(|| Error::InvalidArgument(format!("sample from undeclared domain {}", sample.domain)))?;
        match sample.class {
            Class::Real => counts.real += 1,
            Class::Spoof => counts.spoof += 1,
        }
        let image_offset = data.len() as u64;
        push_f32(&mut data, sample.image.data());
        let depth_offset = data.len() as u64;
        push_f32(&mut data, sample.depth.data());
        records.push(SampleRecord {
            domain: sample.domain.clone(),
            class: sample.class,
            seed: sample.seed,
            image_offset,
            depth_offset,
        });
    }
    let header = DatasetHeader {
        size: s,
        depth_size: d,
        domains: dataset.domains.clone(),
        total: dataset.samples.len(),
        per_domain,
        data_bytes: data.len() as u64,
        samples: records,
    };
    write_container(path, DATASET_MAGIC, DATASET_VERSION, &serde_json::to_vec(&header)?, &data)
}

/// `magic | version | header_len | header | data`, written in one go.
pub(crate) fn write_container(path: &Path, magic: &[u8], version: u16, header: &[u8], data: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(magic.len() + 6 + header.len() + data.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(data);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Parses the preamble and returns the JSON header length.
fn parse_preamble(bytes: &[u8], magic: &[u8], expected_version: u16) -> Result<usize> {
    if bytes.len() < magic.len() || &bytes[..magic.len()] != magic {
        return Err(Error::Format {
            offset: 0,
            detail: "bad magic bytes".into(),
        });
    }
    let m = magic.len();
    if bytes.len() < m + 6 {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            detail: "file ends inside the preamble".into(),
        });
    }
    let version = u16::from_le_bytes([bytes[m], bytes[m + 1]]);
    if version != expected_version {
        return Err(Error::Version {
            found: version,
            expected: expected_version,
        });
    }
    Ok(u32::from_le_bytes(bytes[m + 2..m + 6].try_into().expect("four bytes")) as usize)
}

pub(crate) fn read_preamble_and_header<T: serde::de::DeserializeOwned>(
    reader: &mut impl Read,
    magic: &[u8],
    version: u16,
) -> Result<(T, usize)> {
    let mut pre = vec![0u8; magic.len() + 6];
    let mut got = 0;
    while got < pre.len() {
        let n = reader.read(&mut pre[got..])?;
        if n == 0 {
            break;
        }
        got += n;
    }
    pre.truncate(got);
    let header_len = parse_preamble(&pre, magic, version)?;
    // `take` bounds the read without trusting the length for an allocation.
    let mut header = Vec::new();
    reader.by_ref().take(header_len as u64).read_to_end(&mut header)?;
    if header.len() < header_len {
        return Err(Error::Format {
            offset: (pre.len() + header.len()) as u64,
            detail: format!("header truncated: expected {header_len} bytes"),
        });
    }
    let parsed = serde_json::from_slice(&header).map_err(|e| Error::Format {
        offset: pre.len() as u64,
        detail: format!("header is not valid JSON: {e}"),
    })?;
    Ok((parsed, pre.len() + header_len))
}

/// Reads only the header (counts, domains, offsets).
pub fn probe_dataset(path: &Path) -> Result<DatasetHeader> {
    let mut f = fs::File::open(path)?;
    Ok(read_preamble_and_header(&mut f, DATASET_MAGIC, DATASET_VERSION)?.0)
}

fn read_f32s(bytes: &[u8], at: usize, count: usize, data_start: usize) -> Result<Vec<f64>> {
    let end = at + count * 4;
    if end > bytes.len() {
        return Err(Error::Format {
            offset: (data_start + bytes.len()) as u64,
            detail: format!("tensor at data offset {at} runs past end of file"),
        });
    }
    Ok(bytes[at..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64)
        .collect())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let (header, data_start): (DatasetHeader, usize) =
        read_preamble_and_header(&mut &bytes[..], DATASET_MAGIC, DATASET_VERSION)?;
    let data = &bytes[data_start..];
    if (data.len() as u64) != header.data_bytes {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            detail: format!("expected {} data bytes, found {}", header.data_bytes, data.len()),
        });
    }
    if header.samples.len() != header.total {
        return Err(Error::Format {
            offset: PREAMBLE as u64,
            detail: format!("header declares {} samples but lists {}", header.total, header.samples.len()),
        });
    }
    let (s, d) = (header.size, header.depth_size);
    let samples = header
        .samples
        .iter()
        .map(|r| {
            let image = read_f32s(data, r.image_offset as usize, 3 * s * s, data_start)?;
            let depth = read_f32s(data, r.depth_offset as usize, d * d, data_start)?;
            Ok(SyntheticSample {
                image: Tensor::new(&[3, s, s], image)?,
                depth: Tensor::new(&[1, d, d], depth)?,
                class: r.class,
                domain: r.domain.clone(),
                seed: r.seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        size: s,
        depth_size: d,
        domains: header.domains,
        samples,
    })
}
