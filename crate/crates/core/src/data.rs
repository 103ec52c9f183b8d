//! Synthetic volumetric benchmark data and file I/O.
//!
//! Volumes are stacks of 2D slices containing per-class ellipses whose
//! center, axes and rotation follow a clamped random walk across slices, so
//! adjacent slices are strongly correlated (the property the siamese
//! adjustment exploits). Intensities get per-class contrast, Gaussian noise
//! and a box blur, which makes single-slice boundaries genuinely ambiguous.
//!
//! Everything is bit-deterministic given the corpus seed and volume index;
//! see [`crate::rng`] for the documented generator.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::LgsaError;
use crate::rng::{mix64, SplitMix64};
use crate::tensor::Tensor;
use crate::Elem;

#[derive(Clone, Debug)]
pub struct Volume {
    pub id: u32,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    /// Raw intensities, depth-major row-major.
    pub voxels: Vec<f32>,
    /// Class labels in `0..=num_classes` (0 = background).
    pub labels: Vec<u8>,
    /// Physical scale per axis (z, y, x).
    pub spacing: [f32; 3],
    pub num_classes: usize,
}

impl Volume {
    pub fn slice_voxels(&self, z: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.voxels[z * plane..][..plane]
    }

    pub fn slice_labels(&self, z: usize) -> &[u8] {
        let plane = self.height * self.width;
        &self.labels[z * plane..][..plane]
    }

    pub fn intensity_range(&self) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in &self.voxels {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Generation parameters for a synthetic corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub volumes: usize,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// Ellipses per class, inclusive range.
    pub ellipses: (usize, usize),
    /// Random-walk step for centers/axes per slice, as a fraction of height.
    pub drift: f64,
    /// Foreground intensity offset of the highest class.
    pub contrast: f64,
    pub noise_std: f64,
    pub blur_radius: usize,
    pub spacing: [f32; 3],
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            volumes: 40,
            depth: 12,
            height: 64,
            width: 64,
            classes: 1,
            ellipses: (1, 1),
            drift: 0.01,
            contrast: 0.55,
            noise_std: 0.35,
            blur_radius: 1,
            spacing: [1.0, 1.0, 1.0],
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), LgsaError> {
        let err = |m: String| Err(LgsaError::InvalidConfig(m));
        if self.depth < 3 {
            return err(format!("volume depth must be >= 3, got {}", self.depth));
        }
        if self.height < 8 || self.width < 8 {
            return err(format!(
                "slice size must be at least 8x8, got {}x{}",
                self.height, self.width
            ));
        }
        if self.classes == 0 || self.classes > 254 {
            return err(format!("class count must be in 1..=254, got {}", self.classes));
        }
        if self.ellipses.0 == 0 || self.ellipses.0 > self.ellipses.1 {
            return err(format!("bad ellipse count range {:?}", self.ellipses));
        }
        if !(0.0..0.2).contains(&self.drift) {
            return err(format!("drift must be in [0, 0.2), got {}", self.drift));
        }
        if self.noise_std < 0.0 || self.contrast <= 0.0 {
            return err("noise_std must be >= 0 and contrast > 0".into());
        }
        Ok(())
    }

    /// Canonical key=value form; part of run hashes.
    pub fn descriptor(&self) -> String {
        format!(
            "volumes={}\ndepth={}\nheight={}\nwidth={}\nclasses={}\nellipses={}..{}\ndrift={}\ncontrast={}\nnoise_std={}\nblur_radius={}\nspacing={},{},{}\ndata_seed={}\n",
            self.volumes,
            self.depth,
            self.height,
            self.width,
            self.classes,
            self.ellipses.0,
            self.ellipses.1,
            self.drift,
            self.contrast,
            self.noise_std,
            self.blur_radius,
            self.spacing[0],
            self.spacing[1],
            self.spacing[2],
            self.seed
        )
    }
}

struct EllipseState {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    rot: f64,
    class: u8,
}

/// Generates one volume, deterministic in `(spec.seed, volume_seed)`.
pub fn generate_volume(spec: &SynthSpec, volume_seed: u64) -> Result<Volume, LgsaError> {
    spec.validate()?;
    let mut rng = SplitMix64::new(mix64(spec.seed, volume_seed));
    let (h, w, d) = (spec.height, spec.width, spec.depth);
    let plane = h * w;
    let hf = h as f64;
    let wf = w as f64;
    let min_dim = hf.min(wf);

    // One state per (class, ellipse); walked across slices.
    let mut ellipses: Vec<EllipseState> = Vec::new();
    for class in 1..=spec.classes {
        let count = rng.next_range(spec.ellipses.0, spec.ellipses.1);
        for _ in 0..count {
            ellipses.push(EllipseState {
                cy: rng.uniform(0.3 * hf, 0.7 * hf),
                cx: rng.uniform(0.3 * wf, 0.7 * wf),
                ry: rng.uniform(0.12, 0.24) * min_dim,
                rx: rng.uniform(0.12, 0.24) * min_dim,
                rot: rng.uniform(0.0, std::f64::consts::PI),
                class: class as u8,
            });
        }
    }

    let step = spec.drift * hf;
    let mut labels = vec![0u8; d * plane];
    let mut clean = vec![0.0f64; d * plane];
    let background = 0.15;

    for z in 0..d {
        if z > 0 {
            // Steps are clamped at two sigma so shapes drift smoothly and
            // stay in-frame.
            for e in ellipses.iter_mut() {
                e.cy = (e.cy + step * rng.next_normal_clamped(2.0)).clamp(0.2 * hf, 0.8 * hf);
                e.cx = (e.cx + step * rng.next_normal_clamped(2.0)).clamp(0.2 * wf, 0.8 * wf);
                e.ry = (e.ry + 0.5 * step * rng.next_normal_clamped(2.0)).clamp(3.0, 0.3 * min_dim);
                e.rx = (e.rx + 0.5 * step * rng.next_normal_clamped(2.0)).clamp(3.0, 0.3 * min_dim);
                e.rot += 0.5 * spec.drift * std::f64::consts::PI * rng.next_normal_clamped(2.0);
            }
        }
        let zl = &mut labels[z * plane..][..plane];
        for e in &ellipses {
            let (sin, cos) = e.rot.sin_cos();
            for y in 0..h {
                for x in 0..w {
                    let dy = y as f64 + 0.5 - e.cy;
                    let dx = x as f64 + 0.5 - e.cx;
                    let u = (dx * cos + dy * sin) / e.rx;
                    let v = (-dx * sin + dy * cos) / e.ry;
                    if u * u + v * v <= 1.0 {
                        // Higher class indices overwrite on overlap.
                        let i = y * w + x;
                        if e.class > zl[i] {
                            zl[i] = e.class;
                        }
                    }
                }
            }
        }
        let zc = &mut clean[z * plane..][..plane];
        for i in 0..plane {
            let c = zl[i];
            zc[i] = if c == 0 {
                background
            } else {
                background + spec.contrast * c as f64 / spec.classes as f64
            };
        }
    }

    // Noise on the clean image, then per-slice box blur.
    let mut noisy = clean;
    for v in noisy.iter_mut() {
        *v += spec.noise_std * rng.next_normal();
    }
    let mut voxels = vec![0.0f32; d * plane];
    for z in 0..d {
        let src = &noisy[z * plane..][..plane];
        let blurred = box_blur(src, h, w, spec.blur_radius);
        for (o, v) in voxels[z * plane..][..plane].iter_mut().zip(blurred) {
            *o = v as f32;
        }
    }

    Ok(Volume {
        id: volume_seed as u32,
        depth: d,
        height: h,
        width: w,
        voxels,
        labels,
        spacing: spec.spacing,
        num_classes: spec.classes,
    })
}

/// Edge-clamped box blur with a (2r+1)^2 window.
fn box_blur(src: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    if r == 0 {
        return src.to_vec();
    }
    let mut out = vec![0.0; h * w];
    let norm = 1.0 / ((2 * r + 1) * (2 * r + 1)) as f64;
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for dy in -(r as isize)..=(r as isize) {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                for dx in -(r as isize)..=(r as isize) {
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    s += src[yy * w + xx];
                }
            }
            out[y * w + x] = s * norm;
        }
    }
    out
}

pub fn generate_corpus(spec: &SynthSpec) -> Result<Vec<Volume>, LgsaError> {
    (0..spec.volumes as u64)
        .map(|i| generate_volume(spec, i))
        .collect()
}

/// Min-max normalization with a per-volume range: `(I - Imin)/(Imax - Imin)`.
/// A constant volume maps to all zeros.
pub fn minmax_normalize(slice: &[f32], vmin: f32, vmax: f32) -> Vec<Elem> {
    let range = vmax - vmin;
    if range <= 0.0 {
        return vec![0.0; slice.len()];
    }
    let inv = 1.0 / range as Elem;
    slice
        .iter()
        .map(|&v| ((v - vmin) as Elem) * inv)
        .collect()
}

/// Three consecutive normalized slices with their label planes.
#[derive(Clone, Debug)]
pub struct SliceTriplet {
    pub volume_id: u32,
    /// Index of the center slice.
    pub center_z: usize,
    /// Normalized intensities, `[3][H*W]`, values in [0, 1].
    pub x: [Vec<Elem>; 3],
    /// Label planes, `[3][H*W]`.
    pub labels: [Vec<u8>; 3],
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub spacing: (f64, f64),
}

impl SliceTriplet {
    /// One-hot ground truth `[C, H, W]` for slice `i` of the triplet.
    pub fn one_hot(&self, i: usize) -> Tensor {
        let plane = self.height * self.width;
        let c = self.num_classes;
        let mut data = vec![0.0 as Elem; c * plane];
        for (j, &l) in self.labels[i].iter().enumerate() {
            if l > 0 && (l as usize) <= c {
                data[(l as usize - 1) * plane + j] = 1.0;
            }
        }
        Tensor::new(vec![c, self.height, self.width], data)
    }
}

/// One triplet per interior center slice: `z in [1, D-2]`, giving `D-2`
/// triplets. Head and tail slices never appear as centers.
pub fn make_triplets(v: &Volume) -> Vec<SliceTriplet> {
    let (vmin, vmax) = v.intensity_range();
    let mut out = Vec::with_capacity(v.depth.saturating_sub(2));
    for z in 1..v.depth - 1 {
        let x = [
            minmax_normalize(v.slice_voxels(z - 1), vmin, vmax),
            minmax_normalize(v.slice_voxels(z), vmin, vmax),
            minmax_normalize(v.slice_voxels(z + 1), vmin, vmax),
        ];
        let labels = [
            v.slice_labels(z - 1).to_vec(),
            v.slice_labels(z).to_vec(),
            v.slice_labels(z + 1).to_vec(),
        ];
        out.push(SliceTriplet {
            volume_id: v.id,
            center_z: z,
            x,
            labels,
            height: v.height,
            width: v.width,
            num_classes: v.num_classes,
            spacing: (v.spacing[1] as f64, v.spacing[2] as f64),
        });
    }
    out
}

/// Volume-granular split (no slice leakage), deterministic in `seed`.
/// Ratios are integer parts, e.g. (7, 1, 2).
pub fn split_dataset<T>(
    mut volumes: Vec<T>,
    ratios: (usize, usize, usize),
    seed: u64,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let total_ratio = ratios.0 + ratios.1 + ratios.2;
    assert!(total_ratio > 0, "split_dataset: zero ratios");
    let n = volumes.len();
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::derive(seed, 0x5714).shuffle(&mut order);
    let n_train = n * ratios.0 / total_ratio;
    let n_val = n * ratios.1 / total_ratio;
    // Drain in shuffled order.
    let mut by_slot: Vec<Option<T>> = volumes.drain(..).map(Some).collect();
    let mut train = Vec::with_capacity(n_train);
    let mut val = Vec::with_capacity(n_val);
    let mut test = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        let item = by_slot[i].take().unwrap();
        if rank < n_train {
            train.push(item);
        } else if rank < n_train + n_val {
            val.push(item);
        } else {
            test.push(item);
        }
    }
    (train, val, test)
}

// ---------------------------------------------------------------------------
// LGSV volume format
// ---------------------------------------------------------------------------

const LGSV_MAGIC: &[u8; 4] = b"LGSV";
const LGSV_VERSION: u32 = 1;

/// Writes the little-endian LGSV layout: magic, version, D/H/W u32, spacing
/// 3xf32, class count u32, f32 voxels, u8 labels.
pub fn write_volume(v: &Volume, path: &Path) -> Result<(), LgsaError> {
    let file = File::create(path).map_err(|e| LgsaError::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io = |e| LgsaError::io(path.display().to_string(), e);
    w.write_all(LGSV_MAGIC).map_err(io)?;
    w.write_all(&LGSV_VERSION.to_le_bytes()).map_err(io)?;
    for d in [v.depth as u32, v.height as u32, v.width as u32] {
        w.write_all(&d.to_le_bytes()).map_err(io)?;
    }
    for s in v.spacing {
        w.write_all(&s.to_le_bytes()).map_err(io)?;
    }
    w.write_all(&(v.num_classes as u32).to_le_bytes()).map_err(io)?;
    for &x in &v.voxels {
        w.write_all(&x.to_le_bytes()).map_err(io)?;
    }
    w.write_all(&v.labels).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_volume(path: &Path, id: u32) -> Result<Volume, LgsaError> {
    let file = File::open(path).map_err(|e| LgsaError::io(path.display().to_string(), e))?;
    let total = file
        .metadata()
        .map_err(|e| LgsaError::io(path.display().to_string(), e))?
        .len();
    let mut r = BufReader::new(file);
    let mut read_n = |buf: &mut [u8]| -> Result<(), LgsaError> {
        r.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                LgsaError::Truncated {
                    path: path.display().to_string(),
                    expected: 0,
                    actual: total,
                }
            } else {
                LgsaError::io(path.display().to_string(), e)
            }
        })
    };
    let mut magic = [0u8; 4];
    read_n(&mut magic)?;
    if &magic != LGSV_MAGIC {
        return Err(LgsaError::Format {
            what: "volume file".into(),
            detail: format!("bad magic {magic:?}, expected \"LGSV\""),
        });
    }
    let mut u32buf = [0u8; 4];
    read_n(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != LGSV_VERSION {
        return Err(LgsaError::Format {
            what: "volume file".into(),
            detail: format!("unsupported version {version}"),
        });
    }
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        read_n(&mut u32buf)?;
        *d = u32::from_le_bytes(u32buf) as usize;
    }
    let (depth, height, width) = (dims[0], dims[1], dims[2]);
    let mut spacing = [0.0f32; 3];
    for s in spacing.iter_mut() {
        read_n(&mut u32buf)?;
        *s = f32::from_le_bytes(u32buf);
    }
    read_n(&mut u32buf)?;
    let num_classes = u32::from_le_bytes(u32buf) as usize;
    let n = depth * height * width;
    // magic + version + dims + spacing + class count, then f32 voxels + u8 labels
    let expected = (4 + 4 + 12 + 12 + 4) + 4 * n as u64 + n as u64;
    if total != expected {
        return Err(LgsaError::Truncated {
            path: path.display().to_string(),
            expected,
            actual: total,
        });
    }
    let mut voxels = Vec::with_capacity(n);
    for _ in 0..n {
        read_n(&mut u32buf)?;
        voxels.push(f32::from_le_bytes(u32buf));
    }
    let mut labels = vec![0u8; n];
    read_n(&mut labels)?;
    Ok(Volume {
        id,
        depth,
        height,
        width,
        voxels,
        labels,
        spacing,
        num_classes,
    })
}

// ---------------------------------------------------------------------------
// PGM mask export
// ---------------------------------------------------------------------------

/// 8-bit binary PGM (P5) with the exact header `P5\n{W} {H}\n255\n`.
pub fn write_pgm(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<(), LgsaError> {
    assert_eq!(bytes.len(), width * height, "pgm: pixel count mismatch");
    let mut f = File::create(path).map_err(|e| LgsaError::io(path.display().to_string(), e))?;
    let io = |e| LgsaError::io(path.display().to_string(), e);
    f.write_all(format!("P5\n{width} {height}\n255\n").as_bytes())
        .map_err(io)?;
    f.write_all(bytes).map_err(io)
}

/// Binary mask → 0/255 PGM.
pub fn export_mask(mask: &crate::metrics::Mask, path: &Path) -> Result<(), LgsaError> {
    let bytes: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_pgm(path, mask.w, mask.h, &bytes)
}

/// [0,1] intensities → 8-bit PGM.
pub fn export_intensity(vals: &[Elem], width: usize, height: usize, path: &Path) -> Result<(), LgsaError> {
    let bytes: Vec<u8> = vals
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_pgm(path, width, height, &bytes)
}
