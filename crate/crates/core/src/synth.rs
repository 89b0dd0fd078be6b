//! Deterministic synthetic multi-domain dataset generation.
//!
//! A *domain* is a family of 4-band high-resolution multispectral (HRMS)
//! textures with a characteristic spectral signature, panchromatic response
//! and noise level. Every sample triple is derived from the HRMS alone:
//!
//! - `pan = simulate_pan(hrms)`: spectral-response weighted band average plus
//!   optional seeded Gaussian sensor noise, clipped to `[0,1]`;
//! - `lrms = wald_degrade(hrms)`: Gaussian blur followed by decimation
//!   (see [`crate::resample::wald_degrade`]).
//!
//! Textures are multi-octave value noise on an integer lattice: lattice
//! values come from a `splitmix64`-style avalanche hash of the cell
//! coordinates, interpolated with a quintic fade, summed over octaves with
//! halving amplitude. Each band mixes a shared structure field with a
//! band-private detail field and is then shifted/scaled by per-band spectral
//! offsets and gains, so bands are strongly correlated (as in real
//! multispectral imagery) yet spectrally distinct across domains.
//!
//! Determinism: generation is a pure function of `(spec, seed)`. Per-sample
//! seeds are derived as `seed XOR hash(index)`, so samples are independent
//! and generation order is irrelevant. Texture synthesis uses only integer
//! hashing and basic f32 arithmetic (IEEE-exact on every platform). The
//! Gaussian noise path draws from a seeded ChaCha8 stream through a
//! Box-Muller transform whose `ln`/`cos` calls round within 1 ULP across
//! platforms; a platform change can therefore flip individual noise samples
//! by 1 ULP, which is the only permitted source of cross-platform deviation.
//!
//! On-disk layout of a generated domain:
//!
//! ```text
//! <dir>/manifest.txt        UTF-8, `key = value` lines plus one
//!                           `sample = <lrms>,<pan>,<hrms>` line per sample
//! <dir>/train/s00000.*.ptrs train split (first `num_train` samples)
//! <dir>/test/s00200.*.ptrs  test split (remaining `num_test` samples)
//! ```

use crate::raster::{RasterError, RasterImage};
use crate::resample::{wald_degrade, ResampleError};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MANIFEST_VERSION: u32 = 1;
pub const MS_BANDS: usize = 4;

/// Weight of the shared structure field in each band (the remainder is the
/// band-private detail field). High values make the panchromatic band highly
/// informative about every band's spatial detail.
const COMMON_MIX: f32 = 0.75;
const DETAIL_MIX: f32 = 1.0 - COMMON_MIX;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Resample(#[from] ResampleError),
    #[error("invalid domain spec `{name}`: {msg}")]
    InvalidSpec { name: String, msg: String },
    #[error("manifest {path}: {msg}")]
    Manifest { path: String, msg: String },
    #[error("sample {index} of domain `{domain}`: {msg}")]
    Sample { domain: String, index: usize, msg: String },
    #[error("expected a {MS_BANDS}-band image, got {0} bands")]
    BandCount(usize),
    #[error("sampler needs at least one dataset")]
    EmptyDatasetList,
    #[error("batch size must be >= 1")]
    ZeroBatch,
    #[error("datasets disagree on {what}: {a} vs {b}")]
    DatasetMismatch { what: &'static str, a: String, b: String },
}

// ---------------------------------------------------------------------------
// Domain specification
// ---------------------------------------------------------------------------

/// Full description of one synthetic domain. Generation is a pure function
/// of a spec plus a seed.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub name: String,
    /// Number of value-noise octaves (>= 1).
    pub octaves: usize,
    /// Lattice cells across the patch at the first octave; doubles per octave.
    pub base_freq: f32,
    /// Per-band mean level: centres each band's values around this offset.
    pub band_offsets: [f32; MS_BANDS],
    /// Per-band contrast applied to the noise field.
    pub band_gains: [f32; MS_BANDS],
    /// Spectral response of the panchromatic sensor; non-negative, sums to 1.
    pub pan_weights: [f32; MS_BANDS],
    /// Std-dev of additive Gaussian noise on the panchromatic band (0 = none).
    pub noise_sigma: f32,
    /// Gaussian sigma of the Wald degradation filter (default `ratio / 2`).
    pub blur_sigma: f32,
    /// Resolution ratio between PAN and LRMS (>= 2).
    pub ratio: usize,
    pub num_train: usize,
    pub num_test: usize,
    /// PAN/HRMS patch edge in pixels; must be divisible by `ratio`.
    pub patch: usize,
}

impl DomainSpec {
    /// Desk-scale defaults shared by the built-in domains.
    fn base(name: &str) -> Self {
        DomainSpec {
            name: name.to_string(),
            octaves: 4,
            base_freq: 3.0,
            band_offsets: [0.5; MS_BANDS],
            band_gains: [0.25; MS_BANDS],
            pan_weights: [0.25; MS_BANDS],
            noise_sigma: 0.0,
            blur_sigma: 2.0,
            ratio: 4,
            num_train: 200,
            num_test: 32,
            patch: 64,
        }
    }

    /// Vegetated lowland look: bright near-infrared band, response weighted
    /// toward the visible bands, very low sensor noise.
    pub fn synth_a() -> Self {
        DomainSpec {
            octaves: 4,
            base_freq: 3.0,
            band_offsets: [0.45, 0.55, 0.40, 0.62],
            band_gains: [0.25, 0.27, 0.30, 0.30],
            pan_weights: [0.30, 0.30, 0.25, 0.15],
            noise_sigma: 0.004,
            ..Self::base("synthA")
        }
    }

    /// Built-up area look: high-contrast flat spectrum, response weighted
    /// toward the red/NIR end, noisiest sensor.
    pub fn synth_b() -> Self {
        DomainSpec {
            octaves: 5,
            base_freq: 6.0,
            band_offsets: [0.52, 0.50, 0.48, 0.45],
            band_gains: [0.33, 0.33, 0.32, 0.30],
            pan_weights: [0.10, 0.25, 0.35, 0.30],
            noise_sigma: 0.010,
            ..Self::base("synthB")
        }
    }

    /// Water-and-rock look: blue-heavy spectrum with a dark NIR band,
    /// response concentrated on the outer bands.
    pub fn synth_c() -> Self {
        DomainSpec {
            octaves: 3,
            base_freq: 2.0,
            band_offsets: [0.35, 0.45, 0.55, 0.28],
            band_gains: [0.22, 0.24, 0.26, 0.28],
            pan_weights: [0.40, 0.15, 0.15, 0.30],
            noise_sigma: 0.006,
            ..Self::base("synthC")
        }
    }

    /// The three built-in domains with deliberately distinct spectral and
    /// noise characteristics.
    pub fn presets() -> Vec<DomainSpec> {
        vec![Self::synth_a(), Self::synth_b(), Self::synth_c()]
    }

    /// Look up a built-in domain by name.
    pub fn preset(name: &str) -> Option<DomainSpec> {
        Self::presets().into_iter().find(|s| s.name == name)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |msg: String| Err(SynthError::InvalidSpec { name: self.name.clone(), msg });
        if self.name.is_empty()
            || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return fail(format!(
                "name `{}` must be non-empty ASCII alphanumeric/underscore/hyphen",
                self.name
            ));
        }
        if self.octaves == 0 {
            return fail("octaves must be >= 1".into());
        }
        if !(self.base_freq > 0.0) || !self.base_freq.is_finite() {
            return fail(format!("base_freq must be positive and finite, got {}", self.base_freq));
        }
        for (what, arr) in [("band_offsets", &self.band_offsets), ("band_gains", &self.band_gains)] {
            if arr.iter().any(|v| !v.is_finite()) {
                return fail(format!("{what} must be finite, got {arr:?}"));
            }
        }
        if self.pan_weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return fail(format!("pan_weights must be non-negative, got {:?}", self.pan_weights));
        }
        let sum: f64 = self.pan_weights.iter().map(|&w| w as f64).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return fail(format!("pan_weights must sum to 1 within 1e-6, got {sum}"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return fail(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !(self.blur_sigma > 0.0) || !self.blur_sigma.is_finite() {
            return fail(format!("blur_sigma must be positive, got {}", self.blur_sigma));
        }
        if self.ratio < 2 {
            return fail(format!("ratio must be >= 2, got {}", self.ratio));
        }
        if self.patch == 0 || self.patch % self.ratio != 0 {
            return fail(format!(
                "patch {} must be positive and divisible by ratio {}",
                self.patch, self.ratio
            ));
        }
        if self.num_train + self.num_test == 0 {
            return fail("num_train + num_test must be >= 1".into());
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Seeding and value-noise texture synthesis
// ---------------------------------------------------------------------------

/// splitmix64 avalanche: uniformly mixes a 64-bit value.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a named sub-stream from a seed.
fn mix(seed: u64, salt: u64) -> u64 {
    splitmix64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Per-sample seed: `seed XOR hash(index)`. Samples are mutually independent
/// and may be generated in any order (or in parallel).
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    seed ^ splitmix64(index as u64)
}

const SALT_TEXTURE: u64 = 0x7E87;
const SALT_PAN_NOISE: u64 = 0xA4;
const SALT_COMMON: u64 = 0xC0;
const SALT_DETAIL: u64 = 0xDE7A_11;

/// Hash of a lattice point into `[-1, 1)`.
fn lattice_value(seed: u64, x: i64, y: i64) -> f32 {
    let h = splitmix64(
        seed ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F),
    );
    ((h >> 32) as u32) as f32 * (2.0 / 4_294_967_296.0) - 1.0
}

/// Quintic fade `6t^5 - 15t^4 + 10t^3`: C2-continuous across lattice cells.
fn fade(t: f32) -> f32 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// Value noise at a point: lattice corner hashes blended with a quintic fade.
fn value_noise(seed: u64, fx: f32, fy: f32) -> f32 {
    let x0 = fx.floor();
    let y0 = fy.floor();
    let (xi, yi) = (x0 as i64, y0 as i64);
    let ux = fade(fx - x0);
    let uy = fade(fy - y0);
    let v00 = lattice_value(seed, xi, yi);
    let v10 = lattice_value(seed, xi + 1, yi);
    let v01 = lattice_value(seed, xi, yi + 1);
    let v11 = lattice_value(seed, xi + 1, yi + 1);
    lerp(lerp(v00, v10, ux), lerp(v01, v11, ux), uy)
}

/// Multi-octave value noise over a `size x size` patch, roughly in `[-1, 1]`.
/// Octave `o` runs at frequency `base_freq * 2^o` with amplitude `0.5^o`;
/// the sum is normalized by the total amplitude.
fn fbm_field(seed: u64, octaves: usize, base_freq: f32, size: usize) -> Vec<f32> {
    let mut field = vec![0.0f32; size * size];
    let mut amp = 1.0f32;
    let mut freq = base_freq;
    let mut norm = 0.0f32;
    for o in 0..octaves {
        let oct_seed = mix(seed, o as u64);
        let step = freq / size as f32;
        for y in 0..size {
            let fy = (y as f32 + 0.5) * step;
            for x in 0..size {
                let fx = (x as f32 + 0.5) * step;
                field[y * size + x] += amp * value_noise(oct_seed, fx, fy);
            }
        }
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    for v in field.iter_mut() {
        *v /= norm;
    }
    field
}

/// Synthesize one HRMS patch: a shared structure field plus per-band detail,
/// shifted and scaled by the band's spectral offset/gain, clamped to `[0,1]`.
pub fn generate_hrms(spec: &DomainSpec, texture_seed: u64) -> RasterImage {
    let p = spec.patch;
    let common = fbm_field(mix(texture_seed, SALT_COMMON), spec.octaves, spec.base_freq, p);
    let mut img = RasterImage::zeros(MS_BANDS, p, p);
    for b in 0..MS_BANDS {
        let detail = fbm_field(
            mix(texture_seed, SALT_DETAIL + b as u64),
            spec.octaves,
            spec.base_freq,
            p,
        );
        let (off, gain) = (spec.band_offsets[b], spec.band_gains[b]);
        let dst = img.band_mut(b);
        for i in 0..p * p {
            let v = off + gain * (COMMON_MIX * common[i] + DETAIL_MIX * detail[i]);
            dst[i] = v.clamp(0.0, 1.0);
        }
    }
    img
}

// ---------------------------------------------------------------------------
// Panchromatic simulation
// ---------------------------------------------------------------------------

/// One standard-normal draw (Box-Muller) from a seeded stream.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    // 1 - u1 is in (0, 1], so the log never sees zero.
    (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Simulate the panchromatic band: per pixel the f64 dot product of the
/// spectral response with the bands, rounded once to f32. With
/// `noise_sigma > 0`, adds seeded Gaussian noise and clips to `[0,1]`;
/// with `noise_sigma == 0` the output is the exact linear combination.
pub fn simulate_pan(
    hrms: &RasterImage,
    pan_weights: &[f32; MS_BANDS],
    noise_sigma: f32,
    noise_seed: u64,
) -> Result<RasterImage, SynthError> {
    if hrms.bands != MS_BANDS {
        return Err(SynthError::BandCount(hrms.bands));
    }
    let plane = hrms.plane();
    let mut data = vec![0.0f32; plane];
    for (i, out) in data.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for (b, &w) in pan_weights.iter().enumerate() {
            acc += w as f64 * hrms.band(b)[i] as f64;
        }
        *out = acc as f32;
    }
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        for v in data.iter_mut() {
            let noisy = *v as f64 + noise_sigma as f64 * standard_normal(&mut rng);
            *v = noisy.clamp(0.0, 1.0) as f32;
        }
    }
    Ok(RasterImage::new(1, hrms.h, hrms.w, data)?)
}

// ---------------------------------------------------------------------------
// Sample triples and dataset generation
// ---------------------------------------------------------------------------

/// One training/evaluation triple. `lrms` and `pan` are pure functions of
/// `hrms`, the domain spec and the sample's derived seed.
#[derive(Clone, Debug)]
pub struct SamplePair {
    pub lrms: RasterImage,
    pub pan: RasterImage,
    pub hrms: RasterImage,
    pub domain: String,
}

/// Relative paths of one stored sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleEntry {
    pub lrms: String,
    pub pan: String,
    pub hrms: String,
}

/// Parsed `manifest.txt`: the generating spec, seed, and sample file list
/// (train entries first, then test entries).
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub spec: DomainSpec,
    pub samples: Vec<SampleEntry>,
}

/// Produce one sample of a domain from its global seed and sample index.
pub fn generate_sample(spec: &DomainSpec, seed: u64, index: usize) -> Result<SamplePair, SynthError> {
    let s = sample_seed(seed, index);
    let hrms = generate_hrms(spec, mix(s, SALT_TEXTURE));
    let pan = simulate_pan(&hrms, &spec.pan_weights, spec.noise_sigma, mix(s, SALT_PAN_NOISE))?;
    let lrms = wald_degrade(&hrms, spec.ratio, spec.blur_sigma as f64)?;
    Ok(SamplePair { lrms, pan, hrms, domain: spec.name.clone() })
}

/// Generate a full domain dataset on disk: `num_train + num_test` sample
/// triples as `PTRS` rasters under `train/` and `test/`, plus `manifest.txt`.
/// Samples are seeded independently, so the result is a pure function of
/// `(spec, seed)` regardless of generation order.
pub fn generate_domain(spec: &DomainSpec, seed: u64, dir: &Path) -> Result<DatasetManifest, SynthError> {
    spec.validate()?;
    fs::create_dir_all(dir.join("train"))?;
    fs::create_dir_all(dir.join("test"))?;
    let total = spec.num_train + spec.num_test;
    let mut samples = Vec::with_capacity(total);
    for index in 0..total {
        let split = if index < spec.num_train { "train" } else { "test" };
        let pair = generate_sample(spec, seed, index)?;
        let entry = SampleEntry {
            lrms: format!("{split}/s{index:05}.lrms.ptrs"),
            pan: format!("{split}/s{index:05}.pan.ptrs"),
            hrms: format!("{split}/s{index:05}.hrms.ptrs"),
        };
        pair.lrms.write_ptrs(&dir.join(&entry.lrms))?;
        pair.pan.write_ptrs(&dir.join(&entry.pan))?;
        pair.hrms.write_ptrs(&dir.join(&entry.hrms))?;
        samples.push(entry);
    }
    let manifest = DatasetManifest { version: MANIFEST_VERSION, seed, spec: spec.clone(), samples };
    fs::write(dir.join("manifest.txt"), manifest.to_text())?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// Manifest text format
// ---------------------------------------------------------------------------

fn fmt_f32s(vals: &[f32]) -> String {
    vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl DatasetManifest {
    /// Serialize as UTF-8 text: one `key = value` line per field, then one
    /// `sample = <lrms>,<pan>,<hrms>` line per sample. Float values use the
    /// shortest representation that parses back to the identical bits.
    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let mut out = String::new();
        let _ = writeln!(out, "version = {}", self.version);
        let _ = writeln!(out, "name = {}", s.name);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "octaves = {}", s.octaves);
        let _ = writeln!(out, "base_freq = {}", s.base_freq);
        let _ = writeln!(out, "band_offsets = {}", fmt_f32s(&s.band_offsets));
        let _ = writeln!(out, "band_gains = {}", fmt_f32s(&s.band_gains));
        let _ = writeln!(out, "pan_weights = {}", fmt_f32s(&s.pan_weights));
        let _ = writeln!(out, "noise_sigma = {}", s.noise_sigma);
        let _ = writeln!(out, "blur_sigma = {}", s.blur_sigma);
        let _ = writeln!(out, "ratio = {}", s.ratio);
        let _ = writeln!(out, "num_train = {}", s.num_train);
        let _ = writeln!(out, "num_test = {}", s.num_test);
        let _ = writeln!(out, "patch = {}", s.patch);
        for e in &self.samples {
            let _ = writeln!(out, "sample = {},{},{}", e.lrms, e.pan, e.hrms);
        }
        out
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self, SynthError> {
        let err = |msg: String| SynthError::Manifest { path: origin.to_string(), msg };
        let mut version = None;
        let mut seed = None;
        let mut samples = Vec::new();
        // Spec fields start from an obviously-invalid skeleton; validate() at
        // the end catches anything the file failed to set sensibly, and the
        // `require` closure catches anything missing entirely.
        let mut name = None;
        let mut octaves = None;
        let mut base_freq = None;
        let mut band_offsets = None;
        let mut band_gains = None;
        let mut pan_weights = None;
        let mut noise_sigma = None;
        let mut blur_sigma = None;
        let mut ratio = None;
        let mut num_train = None;
        let mut num_test = None;
        let mut patch = None;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| err(format!("line {}: bad {what} `{value}`", lineno + 1));
            match key {
                "version" => version = Some(value.parse::<u32>().map_err(|_| bad("version"))?),
                "name" => name = Some(value.to_string()),
                "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad("seed"))?),
                "octaves" => octaves = Some(value.parse::<usize>().map_err(|_| bad("octaves"))?),
                "base_freq" => base_freq = Some(value.parse::<f32>().map_err(|_| bad("base_freq"))?),
                "band_offsets" => band_offsets = Some(parse_f32s(value).map_err(|_| bad("band_offsets"))?),
                "band_gains" => band_gains = Some(parse_f32s(value).map_err(|_| bad("band_gains"))?),
                "pan_weights" => pan_weights = Some(parse_f32s(value).map_err(|_| bad("pan_weights"))?),
                "noise_sigma" => noise_sigma = Some(value.parse::<f32>().map_err(|_| bad("noise_sigma"))?),
                "blur_sigma" => blur_sigma = Some(value.parse::<f32>().map_err(|_| bad("blur_sigma"))?),
                "ratio" => ratio = Some(value.parse::<usize>().map_err(|_| bad("ratio"))?),
                "num_train" => num_train = Some(value.parse::<usize>().map_err(|_| bad("num_train"))?),
                "num_test" => num_test = Some(value.parse::<usize>().map_err(|_| bad("num_test"))?),
                "patch" => patch = Some(value.parse::<usize>().map_err(|_| bad("patch"))?),
                "sample" => {
                    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                    if parts.len() != 3 || parts.iter().any(|p| p.is_empty()) {
                        return Err(bad("sample (want `<lrms>,<pan>,<hrms>`)"));
                    }
                    samples.push(SampleEntry {
                        lrms: parts[0].to_string(),
                        pan: parts[1].to_string(),
                        hrms: parts[2].to_string(),
                    });
                }
                other => return Err(err(format!("line {}: unknown key `{other}`", lineno + 1))),
            }
        }

        macro_rules! require {
            ($opt:ident) => {
                $opt.ok_or_else(|| err(format!("missing key `{}`", stringify!($opt))))?
            };
        }
        let version = require!(version);
        if version != MANIFEST_VERSION {
            return Err(err(format!("unsupported version {version}")));
        }
        let spec = DomainSpec {
            name: require!(name),
            octaves: require!(octaves),
            base_freq: require!(base_freq),
            band_offsets: require!(band_offsets),
            band_gains: require!(band_gains),
            pan_weights: require!(pan_weights),
            noise_sigma: require!(noise_sigma),
            blur_sigma: require!(blur_sigma),
            ratio: require!(ratio),
            num_train: require!(num_train),
            num_test: require!(num_test),
            patch: require!(patch),
        };
        spec.validate()?;
        let manifest = DatasetManifest { version, seed: require!(seed), spec, samples };
        if manifest.samples.len() != manifest.spec.num_train + manifest.spec.num_test {
            return Err(err(format!(
                "sample count {} does not match num_train {} + num_test {}",
                manifest.samples.len(),
                manifest.spec.num_train,
                manifest.spec.num_test
            )));
        }
        Ok(manifest)
    }
}

fn parse_f32s(value: &str) -> Result<[f32; MS_BANDS], ()> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != MS_BANDS {
        return Err(());
    }
    let mut out = [0.0f32; MS_BANDS];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse::<f32>().map_err(|_| ())?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------------

/// A loaded domain dataset: manifest plus all sample triples in memory,
/// split into train and test.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
    pub train: Vec<SamplePair>,
    pub test: Vec<SamplePair>,
}

impl Dataset {
    /// Load a dataset from its `manifest.txt`. Every referenced file must
    /// exist, parse as `PTRS` and match the shapes implied by the spec.
    pub fn load(manifest_path: &Path) -> Result<Self, SynthError> {
        let text = fs::read_to_string(manifest_path).map_err(|e| SynthError::Manifest {
            path: manifest_path.display().to_string(),
            msg: e.to_string(),
        })?;
        let manifest = DatasetManifest::from_text(&text, &manifest_path.display().to_string())?;
        let root = manifest_path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        let spec = &manifest.spec;
        let (p, low) = (spec.patch, spec.patch / spec.ratio);
        let mut pairs = Vec::with_capacity(manifest.samples.len());
        for (index, entry) in manifest.samples.iter().enumerate() {
            let sample_err = |msg: String| SynthError::Sample {
                domain: spec.name.clone(),
                index,
                msg,
            };
            let read = |rel: &str| -> Result<RasterImage, SynthError> {
                RasterImage::read_ptrs(&root.join(rel))
                    .map_err(|e| sample_err(format!("{rel}: {e}")))
            };
            let lrms = read(&entry.lrms)?;
            let pan = read(&entry.pan)?;
            let hrms = read(&entry.hrms)?;
            for (img, want, what) in [
                (&lrms, (MS_BANDS, low, low), "lrms"),
                (&pan, (1, p, p), "pan"),
                (&hrms, (MS_BANDS, p, p), "hrms"),
            ] {
                if (img.bands, img.h, img.w) != want {
                    return Err(sample_err(format!(
                        "{what} shape ({},{},{}) does not match spec ({},{},{})",
                        img.bands, img.h, img.w, want.0, want.1, want.2
                    )));
                }
            }
            pairs.push(SamplePair { lrms, pan, hrms, domain: spec.name.clone() });
        }
        let test = pairs.split_off(spec.num_train.min(pairs.len()));
        Ok(Dataset { manifest, root, train: pairs, test })
    }

    /// Regenerate every sample's `lrms` and `pan` from its stored `hrms` and
    /// the manifest's seed; error on the first bit mismatch. Guards against
    /// corrupted or hand-edited datasets.
    pub fn verify_consistency(&self) -> Result<(), SynthError> {
        let spec = &self.manifest.spec;
        for (index, pair) in self.train.iter().chain(self.test.iter()).enumerate() {
            let s = sample_seed(self.manifest.seed, index);
            let pan = simulate_pan(&pair.hrms, &spec.pan_weights, spec.noise_sigma, mix(s, SALT_PAN_NOISE))?;
            let lrms = wald_degrade(&pair.hrms, spec.ratio, spec.blur_sigma as f64)?;
            let mismatch = |what: &str| {
                Err(SynthError::Sample {
                    domain: spec.name.clone(),
                    index,
                    msg: format!("stored {what} does not match regeneration from hrms"),
                })
            };
            if !bit_equal(&pan.data, &pair.pan.data) {
                return mismatch("pan");
            }
            if !bit_equal(&lrms.data, &pair.lrms.data) {
                return mismatch("lrms");
            }
        }
        Ok(())
    }
}

fn bit_equal(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

// ---------------------------------------------------------------------------
// Domain-gap statistic
// ---------------------------------------------------------------------------

/// Mean HRMS value per band over a set of samples.
pub fn band_mean_spectrum(samples: &[SamplePair]) -> [f64; MS_BANDS] {
    let mut sums = [0.0f64; MS_BANDS];
    let mut count = 0.0f64;
    for s in samples {
        for (b, sum) in sums.iter_mut().enumerate() {
            *sum += s.hrms.band(b).iter().map(|&v| v as f64).sum::<f64>();
        }
        count += s.hrms.plane() as f64;
    }
    sums.map(|s| s / count.max(1.0))
}

/// Euclidean distance between two band-mean spectra: a scalar summary of the
/// spectral gap between domains.
pub fn domain_gap(a: &[f64; MS_BANDS], b: &[f64; MS_BANDS]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// All-in-one batch sampler
// ---------------------------------------------------------------------------

/// Reference to one train sample: `(domain index, sample index)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleRef {
    pub domain: usize,
    pub index: usize,
}

/// Deterministic epoch sampler over the union of several domains' train
/// splits. Each epoch is a seeded shuffle of the concatenation; batches are
/// consecutive chunks with the final short batch kept.
#[derive(Clone, Debug)]
pub struct AllInOneSampler {
    sizes: Vec<usize>,
    batch: usize,
    seed: u64,
}

impl AllInOneSampler {
    pub fn new(sizes: Vec<usize>, batch: usize, seed: u64) -> Result<Self, SynthError> {
        if sizes.is_empty() {
            return Err(SynthError::EmptyDatasetList);
        }
        if batch == 0 {
            return Err(SynthError::ZeroBatch);
        }
        Ok(AllInOneSampler { sizes, batch, seed })
    }

    /// Build from loaded datasets, checking that they agree on band count and
    /// resolution ratio (one fixed-width model must serve every domain).
    pub fn from_datasets(datasets: &[Dataset], batch: usize, seed: u64) -> Result<Self, SynthError> {
        let first = datasets.first().ok_or(SynthError::EmptyDatasetList)?;
        for d in datasets {
            if d.manifest.spec.ratio != first.manifest.spec.ratio {
                return Err(SynthError::DatasetMismatch {
                    what: "ratio",
                    a: first.manifest.spec.ratio.to_string(),
                    b: d.manifest.spec.ratio.to_string(),
                });
            }
            if d.manifest.spec.patch != first.manifest.spec.patch {
                return Err(SynthError::DatasetMismatch {
                    what: "patch",
                    a: first.manifest.spec.patch.to_string(),
                    b: d.manifest.spec.patch.to_string(),
                });
            }
        }
        Self::new(datasets.iter().map(|d| d.train.len()).collect(), batch, seed)
    }

    /// Total samples across all domains (one epoch's worth).
    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.total().div_ceil(self.batch)
    }

    /// The batches of one epoch: a seeded Fisher-Yates shuffle of every
    /// `(domain, index)` pair, chunked by batch size. Same `(seed, epoch)`
    /// always yields the same order.
    pub fn epoch(&self, epoch: u64) -> Vec<Vec<SampleRef>> {
        let mut order: Vec<SampleRef> = self
            .sizes
            .iter()
            .enumerate()
            .flat_map(|(domain, &n)| (0..n).map(move |index| SampleRef { domain, index }))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, epoch));
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        order.chunks(self.batch).map(|c| c.to_vec()).collect()
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_spec(name: &str) -> DomainSpec {
        DomainSpec {
            num_train: 3,
            num_test: 1,
            patch: 16,
            ..DomainSpec::base(name)
        }
    }

    #[test]
    fn presets_validate_and_weights_sum_to_one() {
        let presets = DomainSpec::presets();
        assert_eq!(presets.len(), 3);
        for spec in &presets {
            spec.validate().unwrap();
            let sum: f64 = spec.pan_weights.iter().map(|&w| w as f64).sum();
            assert!((sum - 1.0).abs() <= 1e-6, "{}: pan weights sum {sum}", spec.name);
        }
        // Names are unique and resolvable.
        for spec in &presets {
            assert_eq!(DomainSpec::preset(&spec.name).unwrap(), spec.clone());
        }
        assert!(DomainSpec::preset("nonesuch").is_none());
    }

    #[test]
    fn spec_validation_rejects_bad_fields() {
        let ok = tiny_spec("ok");
        ok.validate().unwrap();
        let cases: Vec<(&str, DomainSpec)> = vec![
            ("weights sum", DomainSpec { pan_weights: [0.3, 0.3, 0.3, 0.3], ..ok.clone() }),
            ("negative weight", DomainSpec { pan_weights: [-0.1, 0.4, 0.4, 0.3], ..ok.clone() }),
            ("ratio 1", DomainSpec { ratio: 1, ..ok.clone() }),
            ("patch not divisible", DomainSpec { patch: 18, ..ok.clone() }),
            ("zero octaves", DomainSpec { octaves: 0, ..ok.clone() }),
            ("bad name", DomainSpec { name: "has space".into(), ..ok.clone() }),
            ("negative noise", DomainSpec { noise_sigma: -0.1, ..ok.clone() }),
            ("zero blur", DomainSpec { blur_sigma: 0.0, ..ok.clone() }),
            ("empty", DomainSpec { num_train: 0, num_test: 0, ..ok.clone() }),
        ];
        for (what, spec) in cases {
            assert!(
                matches!(spec.validate(), Err(SynthError::InvalidSpec { .. })),
                "expected {what} to be rejected"
            );
        }
    }

    #[test]
    fn hrms_is_deterministic_in_unit_range_and_seed_sensitive() {
        let spec = tiny_spec("det");
        let a = generate_hrms(&spec, 7);
        let b = generate_hrms(&spec, 7);
        assert!(bit_equal(&a.data, &b.data));
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
        let c = generate_hrms(&spec, 8);
        assert!(!bit_equal(&a.data, &c.data));
    }

    #[test]
    fn hrms_bands_are_correlated_but_distinct() {
        // The shared structure field should dominate: band 0 and band 1
        // fluctuations must correlate strongly, yet not be identical.
        let spec = DomainSpec { patch: 32, ..tiny_spec("corr") };
        let img = generate_hrms(&spec, 11);
        let (b0, b1) = (img.band(0), img.band(1));
        let n = b0.len() as f64;
        let (m0, m1) = (
            b0.iter().map(|&v| v as f64).sum::<f64>() / n,
            b1.iter().map(|&v| v as f64).sum::<f64>() / n,
        );
        let (mut cov, mut v0, mut v1) = (0.0, 0.0, 0.0);
        for (&x, &y) in b0.iter().zip(b1) {
            let (dx, dy) = (x as f64 - m0, y as f64 - m1);
            cov += dx * dy;
            v0 += dx * dx;
            v1 += dy * dy;
        }
        let corr = cov / (v0.sqrt() * v1.sqrt());
        assert!(corr > 0.8, "inter-band correlation {corr}");
        assert!(corr < 0.999, "bands must not be clones, correlation {corr}");
    }

    #[test]
    fn simulate_pan_single_band_weights_select_that_band() {
        let spec = tiny_spec("sel");
        let hrms = generate_hrms(&spec, 3);
        let pan = simulate_pan(&hrms, &[1.0, 0.0, 0.0, 0.0], 0.0, 0).unwrap();
        assert!(bit_equal(&pan.data, hrms.band(0)));
    }

    #[test]
    fn simulate_pan_uniform_weights_average_constant_bands() {
        let (a, b, c, d) = (0.2f32, 0.4, 0.6, 0.8);
        let mut data = Vec::new();
        for v in [a, b, c, d] {
            data.extend(std::iter::repeat(v).take(9));
        }
        let hrms = RasterImage::new(4, 3, 3, data).unwrap();
        let pan = simulate_pan(&hrms, &[0.25; 4], 0.0, 0).unwrap();
        let want = ((a as f64 + b as f64 + c as f64 + d as f64) / 4.0) as f32;
        for &v in &pan.data {
            assert_eq!(v.to_bits(), want.to_bits());
        }
    }

    #[test]
    fn simulate_pan_matches_f64_reference() {
        // Noise-free path: exact linearity against an independently written
        // f64 accumulation loop.
        let spec = tiny_spec("lin");
        let hrms = generate_hrms(&spec, 91);
        let w = [0.13f32, 0.27, 0.33, 0.27];
        let pan = simulate_pan(&hrms, &w, 0.0, 0).unwrap();
        for i in 0..hrms.plane() {
            let mut acc = 0.0f64;
            for b in 0..4 {
                acc += w[b] as f64 * hrms.band(b)[i] as f64;
            }
            assert_eq!(pan.data[i].to_bits(), (acc as f32).to_bits(), "pixel {i}");
        }
    }

    #[test]
    fn simulate_pan_noise_is_seeded_and_clipped() {
        let spec = tiny_spec("noise");
        let hrms = generate_hrms(&spec, 5);
        let w = [0.25f32; 4];
        let a = simulate_pan(&hrms, &w, 0.05, 42).unwrap();
        let b = simulate_pan(&hrms, &w, 0.05, 42).unwrap();
        let c = simulate_pan(&hrms, &w, 0.05, 43).unwrap();
        let clean = simulate_pan(&hrms, &w, 0.0, 0).unwrap();
        assert!(bit_equal(&a.data, &b.data));
        assert!(!bit_equal(&a.data, &c.data));
        assert!(!bit_equal(&a.data, &clean.data));
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn simulate_pan_rejects_wrong_band_count() {
        let img = RasterImage::zeros(3, 4, 4);
        assert!(matches!(
            simulate_pan(&img, &[0.25; 4], 0.0, 0),
            Err(SynthError::BandCount(3))
        ));
    }

    #[test]
    fn generated_domain_has_contract_shapes_and_loads() {
        let dir = tempdir().unwrap();
        let spec = DomainSpec {
            num_train: 8,
            num_test: 2,
            patch: 64,
            noise_sigma: 0.01,
            ..DomainSpec::base("shapes")
        };
        let manifest = generate_domain(&spec, 42, dir.path()).unwrap();
        assert_eq!(manifest.samples.len(), 10);
        let ds = Dataset::load(&dir.path().join("manifest.txt")).unwrap();
        assert_eq!(ds.train.len(), 8);
        assert_eq!(ds.test.len(), 2);
        for pair in ds.train.iter().chain(ds.test.iter()) {
            assert_eq!((pair.lrms.bands, pair.lrms.h, pair.lrms.w), (4, 16, 16));
            assert_eq!((pair.pan.bands, pair.pan.h, pair.pan.w), (1, 64, 64));
            assert_eq!((pair.hrms.bands, pair.hrms.h, pair.hrms.w), (4, 64, 64));
            assert_eq!(pair.domain, "shapes");
        }
        assert_eq!(ds.manifest, manifest);
    }

    #[test]
    fn generation_is_bit_identical_across_runs() {
        let spec = DomainSpec { noise_sigma: 0.02, ..tiny_spec("twice") };
        let (d1, d2) = (tempdir().unwrap(), tempdir().unwrap());
        let m1 = generate_domain(&spec, 9, d1.path()).unwrap();
        let m2 = generate_domain(&spec, 9, d2.path()).unwrap();
        assert_eq!(m1, m2);
        let manifest_bytes_1 = fs::read(d1.path().join("manifest.txt")).unwrap();
        let manifest_bytes_2 = fs::read(d2.path().join("manifest.txt")).unwrap();
        assert_eq!(manifest_bytes_1, manifest_bytes_2);
        for e in &m1.samples {
            for rel in [&e.lrms, &e.pan, &e.hrms] {
                let b1 = fs::read(d1.path().join(rel)).unwrap();
                let b2 = fs::read(d2.path().join(rel)).unwrap();
                assert_eq!(b1, b2, "{rel} differs between runs");
            }
        }
        // A different seed must change the data.
        let d3 = tempdir().unwrap();
        let m3 = generate_domain(&spec, 10, d3.path()).unwrap();
        let b1 = fs::read(d1.path().join(&m1.samples[0].hrms)).unwrap();
        let b3 = fs::read(d3.path().join(&m3.samples[0].hrms)).unwrap();
        assert_ne!(b1, b3);
    }

    #[test]
    fn stored_samples_regenerate_from_hrms_bit_exactly() {
        let dir = tempdir().unwrap();
        let spec = DomainSpec { noise_sigma: 0.015, ..tiny_spec("consist") };
        generate_domain(&spec, 77, dir.path()).unwrap();
        let ds = Dataset::load(&dir.path().join("manifest.txt")).unwrap();
        ds.verify_consistency().unwrap();
    }

    #[test]
    fn corrupted_sample_fails_consistency() {
        let dir = tempdir().unwrap();
        let spec = tiny_spec("corrupt");
        let manifest = generate_domain(&spec, 1, dir.path()).unwrap();
        // Flip one payload value in a stored pan file.
        let path = dir.path().join(&manifest.samples[0].pan);
        let mut img = RasterImage::read_ptrs(&path).unwrap();
        img.data[0] = (img.data[0] + 0.25).clamp(0.0, 1.0) * 0.5 + 0.1;
        img.write_ptrs(&path).unwrap();
        let ds = Dataset::load(&dir.path().join("manifest.txt")).unwrap();
        assert!(matches!(ds.verify_consistency(), Err(SynthError::Sample { index: 0, .. })));
    }

    #[test]
    fn manifest_text_round_trips() {
        let spec = DomainSpec { noise_sigma: 0.0125, base_freq: 2.5, ..tiny_spec("round") };
        let manifest = DatasetManifest {
            version: MANIFEST_VERSION,
            seed: 123456789,
            spec,
            samples: vec![SampleEntry {
                lrms: "train/s00000.lrms.ptrs".into(),
                pan: "train/s00000.pan.ptrs".into(),
                hrms: "train/s00000.hrms.ptrs".into(),
            }; 4],
        };
        let text = manifest.to_text();
        let back = DatasetManifest::from_text(&text, "test").unwrap();
        assert_eq!(back, manifest);
    }

    #[test]
    fn manifest_rejects_malformed_input() {
        let spec = tiny_spec("bad");
        let manifest = DatasetManifest {
            version: MANIFEST_VERSION,
            seed: 5,
            spec,
            samples: vec![SampleEntry {
                lrms: "a".into(),
                pan: "b".into(),
                hrms: "c".into(),
            }; 4],
        };
        let good = manifest.to_text();
        for (what, mutate) in [
            ("unknown key", good.clone() + "bogus = 1\n"),
            ("missing seed", good.replace("seed = 5\n", "")),
            ("bad version", good.replace("version = 1", "version = 9")),
            ("short sample", good.replace("sample = a,b,c", "sample = a,b")),
            ("no equals", good.replace("ratio = 4", "ratio 4")),
            ("sample count", good.replace("num_test = 1", "num_test = 2")),
        ] {
            assert!(
                matches!(DatasetManifest::from_text(&mutate, "t"), Err(SynthError::Manifest { .. })),
                "expected `{what}` to be rejected"
            );
        }
    }

    #[test]
    fn load_reports_missing_sample_file() {
        let dir = tempdir().unwrap();
        let spec = tiny_spec("missing");
        let manifest = generate_domain(&spec, 3, dir.path()).unwrap();
        fs::remove_file(dir.path().join(&manifest.samples[1].lrms)).unwrap();
        assert!(matches!(
            Dataset::load(&dir.path().join("manifest.txt")),
            Err(SynthError::Sample { index: 1, .. })
        ));
    }

    #[test]
    fn preset_domains_have_distinct_band_spectra() {
        // Domain-gap statistic: the built-in domains differ in per-band mean
        // spectrum by a healthy margin, measured on generated data. The 0.1
        // floor was frozen from observed gaps (~0.2 or more for every pair).
        let mut spectra = Vec::new();
        for preset in DomainSpec::presets() {
            let spec = DomainSpec { num_train: 4, num_test: 0, patch: 32, ..preset };
            let samples: Vec<SamplePair> = (0..spec.num_train)
                .map(|i| generate_sample(&spec, 1000, i).unwrap())
                .collect();
            spectra.push((spec.name.clone(), band_mean_spectrum(&samples)));
        }
        for i in 0..spectra.len() {
            for j in i + 1..spectra.len() {
                let gap = domain_gap(&spectra[i].1, &spectra[j].1);
                assert!(
                    gap >= 0.1,
                    "domains {} and {} too similar: gap {gap}",
                    spectra[i].0,
                    spectra[j].0
                );
            }
        }
    }

    #[test]
    fn sampler_epoch_is_a_seeded_permutation_in_batches() {
        let sampler = AllInOneSampler::new(vec![8, 8, 8], 16, 7).unwrap();
        assert_eq!(sampler.total(), 24);
        assert_eq!(sampler.batches_per_epoch(), 2);
        let batches = sampler.epoch(0);
        assert_eq!(batches.len(), 2);
        assert_eq!(batches[0].len(), 16);
        assert_eq!(batches[1].len(), 8);
        // Permutation: every (domain, index) pair exactly once.
        let mut seen: Vec<SampleRef> = batches.iter().flatten().copied().collect();
        seen.sort_by_key(|r| (r.domain, r.index));
        let want: Vec<SampleRef> = (0..3)
            .flat_map(|d| (0..8).map(move |i| SampleRef { domain: d, index: i }))
            .collect();
        assert_eq!(seen, want);
        // Determinism within and divergence across seeds/epochs.
        let again = AllInOneSampler::new(vec![8, 8, 8], 16, 7).unwrap().epoch(0);
        assert_eq!(batches, again);
        assert_ne!(batches, sampler.epoch(1));
        assert_ne!(batches, AllInOneSampler::new(vec![8, 8, 8], 16, 8).unwrap().epoch(0));
    }

    #[test]
    fn sampler_rejects_degenerate_inputs() {
        assert!(matches!(
            AllInOneSampler::new(vec![], 4, 0),
            Err(SynthError::EmptyDatasetList)
        ));
        assert!(matches!(
            AllInOneSampler::new(vec![4], 0, 0),
            Err(SynthError::ZeroBatch)
        ));
    }

    #[test]
    fn sampler_from_datasets_requires_matching_ratio() {
        let (d1, d2) = (tempdir().unwrap(), tempdir().unwrap());
        let a = tiny_spec("a");
        let b = DomainSpec { ratio: 2, ..tiny_spec("b") };
        generate_domain(&a, 1, d1.path()).unwrap();
        generate_domain(&b, 1, d2.path()).unwrap();
        let da = Dataset::load(&d1.path().join("manifest.txt")).unwrap();
        let db = Dataset::load(&d2.path().join("manifest.txt")).unwrap();
        assert!(matches!(
            AllInOneSampler::from_datasets(&[da.clone(), db], 4, 0),
            Err(SynthError::DatasetMismatch { what: "ratio", .. })
        ));
        let sampler = AllInOneSampler::from_datasets(&[da], 2, 3).unwrap();
        assert_eq!(sampler.total(), 3);
    }

    #[test]
    fn sample_seeds_are_unique_per_index() {
        let mut seeds: Vec<u64> = (0..1000).map(|i| sample_seed(42, i)).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 1000);
    }
}

