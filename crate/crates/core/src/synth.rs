//! Deterministic Lambertian multi-illuminant scene synthesis and the on-disk
//! dataset format.
//!
//! A scene is `I_c(x) = (R_c(x) · k(x)) · ℓ_c(x)` with `ℓ(x) = Σ_i α_i(x) ℓ_i`.
//! Every random draw comes from a ChaCha8 stream seeded by the scene seed, so
//! generation is a pure function of `(seed, config)`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AidError, Result};
use crate::imaging::{compose_illumination, ChromaticityRB, IlluminationMap, RawImage, WeightMaps};
use crate::metrics::angular_error;
use crate::tensor::Tensor;

pub const DEFAULT_MIN_SEPARATION_DEG: f64 = 5.0;
pub const MAX_SAMPLE_RETRIES: usize = 1000;
/// Retries spent looking for weight maps in which every illuminant dominates somewhere.
pub const MAX_WEIGHT_RETRIES: usize = 64;
/// Each generated map must reach at least this weight at some pixel (when retries allow).
pub const WEIGHT_DOMINANCE: f64 = 0.6;
pub const MAX_ILLUMINANTS: usize = 3;
pub const REFLECTANCE_RANGE: (f64, f64) = (0.05, 1.0);
pub const SHADING_RANGE: (f64, f64) = (0.2, 1.0);
/// Exponent applied to each raw weight field before per-pixel normalization;
/// larger values narrow the mixing bands between lights.
pub const WEIGHT_SHARPNESS: f64 = 3.0;
pub const DEFAULT_POOL_SIZE: usize = 200;
pub const DEFAULT_POOL_SEED: u64 = 0x5eed_1e55;

/// `(r, b)` centres of [`ChromaticityPool::corners`].
pub const CORNER_CENTERS: [(f64, f64); 4] = [(0.9, 0.4), (0.45, 0.85), (0.5, 0.45), (0.85, 0.8)];

/// Finite set of illuminant chromaticities that ground truth is drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]

pub struct ChromaticityPool {
    entries: Vec<ChromaticityRB>,
    r_range: (f64, f64),
    b_range: (f64, f64),
}

impl ChromaticityPool {
    pub fn new(entries: Vec<ChromaticityRB>) -> Result<Self> {
        if entries.is_empty() {
            return Err(AidError::Config("chromaticity pool is empty".into()));
        }
        let bounds = |f: fn(&ChromaticityRB) -> f64| {
            entries
                .iter()
                .map(f)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let r_range = bounds(|c| c.r);
        let b_range = bounds(|c| c.b);
        Ok(ChromaticityPool {
            entries,
            r_range,
            b_range,
        })
    }

    /// Entries along a black-body-like locus running from warm `(0.4, 0.9)`
    /// to cool `(1.0, 0.35)` in log space, with small multiplicative jitter.
    pub fn locus(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(AidError::Config("chromaticity pool needs at least one entry".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r0, r1) = (0.4f64.ln(), 1.0f64.ln());
        let (b0, b1) = (0.9f64.ln(), 0.35f64.ln());
        let entries = (0..n)
            .map(|i| {
                let t = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
                let jr = rng.random_range(-0.03..=0.03);
                let jb = rng.random_range(-0.03..=0.03);
                ChromaticityRB::new((r0 + t * (r1 - r0) + jr).exp(), (b0 + t * (b1 - b0) + jb).exp())
            })
            .collect::<Result<Vec<_>>>()?;
        ChromaticityPool::new(entries)
    }

    /// `n` entries split evenly between `centers`, each jittered by up to
    /// `spread` in log space.
    pub fn clustered(centers: &[ChromaticityRB], n: usize, spread: f64, seed: u64) -> Result<Self> {
        if centers.is_empty() || n < centers.len() {
            return Err(AidError::Config(format!(
                "clustered pool needs at least one entry per centre, got {n} entries for {} centres",
                centers.len()
            )));
        }
        if !(spread >= 0.0 && spread.is_finite()) {
            return Err(AidError::Config(format!("pool spread must be non-negative, got {spread}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..n)
            .map(|i| {
                let c = centers[i * centers.len() / n];
                let jr = rng.random_range(-spread..=spread);
                let jb = rng.random_range(-spread..=spread);
                ChromaticityRB::new(c.r * jr.exp(), c.b * jb.exp())
            })
            .collect::<Result<Vec<_>>>()?;
        ChromaticityPool::new(entries)
    }

    /// Four tight clusters (warm, cool, greenish, magenta) at the corners of a
    /// quadrilateral, so no two-light mixture imitates a third cluster.
    pub fn corners(n: usize, seed: u64) -> Result<Self> {
        let centers = CORNER_CENTERS
            .iter()
            .map(|&(r, b)| ChromaticityRB::new(r, b))
            .collect::<Result<Vec<_>>>()?;
        ChromaticityPool::clustered(&centers, n, 0.03, seed)
    }

    pub fn entries(&self) -> &[ChromaticityRB] {
        &self.entries
    }

    pub fn r_range(&self) -> (f64, f64) {
        self.r_range
    }

    pub fn b_range(&self) -> (f64, f64) {
        self.b_range
    }

    pub fn contains(&self, c: &ChromaticityRB) -> bool {
        (self.r_range.0..=self.r_range.1).contains(&c.r) && (self.b_range.0..=self.b_range.1).contains(&c.b)
    }
}

impl Default for ChromaticityPool {
    fn default() -> Self {
        ChromaticityPool::corners(DEFAULT_POOL_SIZE, DEFAULT_POOL_SEED).expect("default pool is valid")
    }
}

/// `n` distinct pool entries with pairwise angular separation `>= min_sep_deg`.
pub fn sample_chromaticities(
    pool: &ChromaticityPool,
    n: usize,
    min_sep_deg: f64,
    rng: &mut impl Rng,
) -> Result<Vec<ChromaticityRB>> {
    if n == 0 {
        return Err(AidError::Argument("must sample at least one chromaticity".into()));
    }
    if n > pool.entries.len() {
        return Err(AidError::Generation(format!(
            "pool of {} entries cannot supply {n} distinct chromaticities",
            pool.entries.len()
        )));
    }
    for _ in 0..MAX_SAMPLE_RETRIES {
        let picked: Vec<ChromaticityRB> = index::sample(rng, pool.entries.len(), n)
            .into_iter()
            .map(|i| pool.entries[i])
            .collect();
        let separated = picked
            .iter()
            .enumerate()
            .all(|(i, a)| picked[i + 1..].iter().all(|b| angular_error(a, b) >= min_sep_deg));
        if separated {
            return Ok(picked);
        }
    }
    Err(AidError::Generation(format!(
        "no {n} pool entries {min_sep_deg} degrees apart after {MAX_SAMPLE_RETRIES} draws"
    )))
}

/// Sum of `bumps` random isotropic Gaussians on the unit square.
fn bump_field(h: usize, w: usize, bumps: usize, sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut field = vec![0.0; h * w];
    for _ in 0..bumps {
        let cy: f64 = rng.random();
        let cx: f64 = rng.random();
        let s = sigma * rng.random_range(0.7..1.3);
        let amp = rng.random_range(0.5..1.0);
        let inv = 1.0 / (2.0 * s * s);
        for y in 0..h {
            let dy = (y as f64 + 0.5) / h as f64 - cy;
            for x in 0..w {
                let dx = (x as f64 + 0.5) / w as f64 - cx;
                field[y * w + x] += amp * (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    field
}

/// Affinely maps a field onto `[lo, hi]`; a flat field maps to the midpoint.
fn rescale(field: &mut [f64], lo: f64, hi: f64) {
    let (min, max) = field
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = max - min;
    for v in field {
        *v = if span > 0.0 {
            lo + (hi - lo) * (*v - min) / span
        } else {
            0.5 * (lo + hi)
        };
    }
}

/// `n` per-pixel-normalized weight maps from random Gaussian-bump fields.
///
/// `smoothness` is the bump width as a fraction of the image side.
pub fn gen_weight_maps(n: usize, h: usize, w: usize, smoothness: f64, rng: &mut impl Rng) -> Result<WeightMaps> {
    if n == 0 || h == 0 || w == 0 {
        return Err(AidError::Argument(format!("weight maps need n, h, w >= 1, got {n}, {h}, {w}")));
    }
    if n == 1 {
        return WeightMaps::new(Tensor::ones(&[1, h, w]));
    }
    let hw = h * w;
    let mut maps = Vec::new();
    for _ in 0..MAX_WEIGHT_RETRIES {
        let mut fields: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let bumps = rng.random_range(1..=2);
                let mut f = bump_field(h, w, bumps, smoothness, rng);
                f.iter_mut().for_each(|v| *v = (*v + 1e-3).powf(WEIGHT_SHARPNESS));
                f
            })
            .collect();
        for px in 0..hw {
            let total: f64 = fields.iter().map(|f| f[px]).sum();
            fields.iter_mut().for_each(|f| f[px] /= total);
        }
        let dominant = fields
            .iter()
            .all(|f| f.iter().copied().fold(0.0, f64::max) >= WEIGHT_DOMINANCE);
        maps = fields.concat();
        if dominant {
            break;
        }
    }
    WeightMaps::new(Tensor::new(&[n, h, w], maps)?)
}

/// Scene-generation knobs shared by every scene of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub min_separation_deg: f64,
    /// Weight-map bump width relative to the image side.
    pub weight_smoothness: f64,
    /// Per-channel reflectance modulation depth; 0 gives gray reflectance.
    pub reflectance_saturation: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 64,
            width: 64,
            min_separation_deg: DEFAULT_MIN_SEPARATION_DEG,
            weight_smoothness: 0.25,
            reflectance_saturation: 0.03,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: usize,
    pub image: RawImage,
    pub gt_chromas: Vec<ChromaticityRB>,
    pub gt_weights: WeightMaps,
    /// Scalar shading `k`, shape `[H, W]`; any exposure rescale is folded in.
    pub shading: Tensor,
    /// Linear reflectance, shape `[3, H, W]`.
    pub reflectance: Tensor,
    pub seed: u64,
    pub domain_id: usize,
}

impl Scene {
    pub fn n_illuminants(&self) -> usize {
        self.gt_chromas.len()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn gt_map(&self) -> Result<IlluminationMap> {
        compose_illumination(&self.gt_chromas, &self.gt_weights)
    }
}

/// `I_c = (R_c · k) · ℓ_c` with the green illuminant component fixed at 1.
pub fn assemble_image(reflectance: &Tensor, shading: &Tensor, map: &IlluminationMap) -> Result<RawImage> {
    let (h, w) = (map.height(), map.width());
    if reflectance.shape() != [3, h, w] || shading.shape() != [h, w] {
        return Err(AidError::dim("assemble_image", reflectance.shape(), shading.shape()));
    }
    let hw = h * w;
    let refl = reflectance.data();
    let k = shading.data();
    let mut data = vec![0.0; 3 * hw];
    for px in 0..hw {
        let ill = [map.r_plane().data()[px], 1.0, map.b_plane().data()[px]];
        for c in 0..3 {
            data[c * hw + px] = (refl[c * hw + px] * k[px]) * ill[c];
        }
    }
    RawImage::new(Tensor::new(&[3, h, w], data)?)
}

/// Generates one scene with `n` illuminants from its own seeded stream.
pub fn gen_scene(
    cfg: &SceneConfig,
    n: usize,
    pool: &ChromaticityPool,
    seed: u64,
    domain_id: usize,
) -> Result<Scene> {
    if !(1..=MAX_ILLUMINANTS).contains(&n) {
        return Err(AidError::Argument(format!("illuminant count {n} outside 1..={MAX_ILLUMINANTS}")));
    }
    let (h, w) = (cfg.height, cfg.width);
    if h == 0 || w == 0 {
        return Err(AidError::Argument(format!("scene size {h}x{w} is empty")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt_chromas = sample_chromaticities(pool, n, cfg.min_separation_deg, &mut rng)?;
    let gt_weights = gen_weight_maps(n, h, w, cfg.weight_smoothness, &mut rng)?;
    let map = compose_illumination(&gt_chromas, &gt_weights)?;

    let hw = h * w;
    let mut albedo = bump_field(h, w, 12, 0.12, &mut rng);
    rescale(&mut albedo, 0.2, 1.0);
    let mut reflectance = vec![0.0; 3 * hw];
    for c in 0..3 {
        let mut tint = bump_field(h, w, 12, 0.08, &mut rng);
        rescale(&mut tint, -1.0, 1.0);
        for px in 0..hw {
            let v = albedo[px] * (1.0 + cfg.reflectance_saturation * tint[px]);
            reflectance[c * hw + px] = v.clamp(REFLECTANCE_RANGE.0, REFLECTANCE_RANGE.1);
        }
    }
    let reflectance = Tensor::new(&[3, h, w], reflectance)?;

    let mut shading = bump_field(h, w, 3, 0.3, &mut rng);
    rescale(&mut shading, SHADING_RANGE.0, SHADING_RANGE.1);
    let mut shading = Tensor::new(&[h, w], shading)?;

    let mut image = assemble_image(&reflectance, &shading, &map)?;
    let peak = image.planes().data().iter().copied().fold(0.0, f64::max);
    if peak > 1.0 {
        let s = 1.0 / (peak * (1.0 + 1e-12));
        shading = shading.map(|v| v * s);
        image = assemble_image(&reflectance, &shading, &map)?;
    }

    Ok(Scene {
        id: 0,
        image,
        gt_chromas,
        gt_weights,
        shading,
        reflectance,
        seed,
        domain_id,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = AidError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(AidError::Argument(format!("unknown split '{other}' (train, val, test)"))),
        }
    }
}

/// Recipe for a whole dataset; scene `i` is a pure function of `(seed, i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub scenes: usize,
    pub scene: SceneConfig,
    pub min_illum: usize,
    pub max_illum: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_domains: usize,
    pub pool_shape: PoolShape,
    pub pool_size: usize,
    pub pool_seed: u64,
}

/// Layout of the chromaticity pool a dataset draws from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolShape {
    /// [`ChromaticityPool::corners`].
    #[default]
    Corners,
    /// [`ChromaticityPool::locus`].
    Locus,
}

impl DatasetSpec {
    /// All scenes in the training split, sizes `size × size`.
    pub fn new(scenes: usize, size: usize, max_illum: usize, seed: u64) -> Self {
        DatasetSpec {
            scenes,
            scene: SceneConfig {
                height: size,
                width: size,
                ..SceneConfig::default()
            },
            min_illum: 1,
            max_illum,
            seed,
            n_train: scenes,
            n_val: 0,
            n_domains: 1,
            pool_shape: PoolShape::default(),
            pool_size: DEFAULT_POOL_SIZE,
            pool_seed: DEFAULT_POOL_SEED,
        }
    }

    pub fn split_of(&self, i: usize) -> Split {
        if i < self.n_train {
            Split::Train
        } else if i < self.n_train + self.n_val {
            Split::Val
        } else {
            Split::Test
        }
    }

    pub fn pool(&self) -> Result<ChromaticityPool> {
        match self.pool_shape {
            PoolShape::Corners => ChromaticityPool::corners(self.pool_size, self.pool_seed),
            PoolShape::Locus => ChromaticityPool::locus(self.pool_size, self.pool_seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub n: usize,
    pub seed: u64,
    pub domain_id: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub scenes: Vec<ManifestEntry>,
    pub split_counts: BTreeMap<Split, usize>,
}

impl Manifest {
    pub const VERSION: u32 = 1;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    /// Aligned with `manifest.scenes`.
    pub scenes: Vec<Scene>,
}

impl Dataset {
    pub fn new(scenes: Vec<(Scene, Split)>) -> Result<Self> {
        let (height, width) = scenes.first().map_or((0, 0), |(s, _)| (s.height(), s.width()));
        let mut split_counts = BTreeMap::new();
        let mut entries = Vec::with_capacity(scenes.len());
        for (scene, split) in &scenes {
            if scene.height() != height || scene.width() != width {
                return Err(AidError::dim(
                    "dataset scene size",
                    &[height, width],
                    &[scene.height(), scene.width()],
                ));
            }
            *split_counts.entry(*split).or_insert(0) += 1;
            entries.push(ManifestEntry {
                id: scene.id,
                n: scene.n_illuminants(),
                seed: scene.seed,
                domain_id: scene.domain_id,
                split: *split,
            });
        }
        Ok(Dataset {
            manifest: Manifest {
                version: Manifest::VERSION,
                height,
                width,
                scenes: entries,
                split_counts,
            },
            scenes: scenes.into_iter().map(|(s, _)| s).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&Scene> {
        self.scenes
            .iter()
            .zip(&self.manifest.scenes)
            .filter(|(_, e)| e.split == split)
            .map(|(s, _)| s)
            .collect()
    }
}

/// Generates every scene of `spec`; scene seeds and counts come from one master stream.
pub fn gen_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    if spec.min_illum < 1 || spec.min_illum > spec.max_illum || spec.max_illum > MAX_ILLUMINANTS {
        return Err(AidError::Config(format!(
            "illuminant range {}..={} must lie in 1..={MAX_ILLUMINANTS}",
            spec.min_illum, spec.max_illum
        )));
    }
    if spec.n_domains == 0 {
        return Err(AidError::Config("n_domains must be at least 1".into()));
    }
    let pool = spec.pool()?;
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut scenes = Vec::with_capacity(spec.scenes);
    for i in 0..spec.scenes {
        let seed = master.next_u64();
        let n = master.random_range(spec.min_illum..=spec.max_illum);
        let domain = i % spec.n_domains;
        let mut scene = gen_scene(&spec.scene, n, &pool, seed, domain)?;
        scene.id = i;
        scenes.push((scene, spec.split_of(i)));
    }
    Dataset::new(scenes)
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    dtype: String,
    shape: Vec<usize>,
}

/// Writes a JSON header line `{"dtype":"f64","shape":[..]}` followed by little-endian f64 data.
pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let header = serde_json::to_string(&TensorHeader {
        dtype: "f64".into(),
        shape: t.shape().to_vec(),
    })
    .expect("header serializes");
    let mut buf = Vec::with_capacity(header.len() + 1 + 8 * t.len());
    buf.extend_from_slice(header.as_bytes());
    buf.push(b'\n');
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| AidError::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| AidError::io(path, e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| AidError::format(path, "missing header line"))?;
    let header: TensorHeader = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| AidError::format(path, format!("bad header: {e}")))?;
    if header.dtype != "f64" {
        return Err(AidError::format(path, format!("unsupported dtype '{}'", header.dtype)));
    }
    let count: usize = header.shape.iter().product();
    let blob = &bytes[nl + 1..];
    if blob.len() != 8 * count {
        return Err(AidError::format(
            path,
            format!("blob holds {} bytes, shape {:?} needs {}", blob.len(), header.shape, 8 * count),
        ));
    }
    let data = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(&header.shape, data).map_err(|e| AidError::format(path, e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct SceneMeta {
    id: usize,
    n: usize,
    chromas: Vec<[f64; 2]>,
    seed: u64,
    domain_id: usize,
    split: Split,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| AidError::io(path, e))?;
    serde_json::to_writer_pretty(&mut f, value)
        .map_err(|e| AidError::io(path, std::io::Error::other(e)))?;
    f.write_all(b"\n").map_err(|e| AidError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| AidError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| AidError::format(path, e.to_string()))
}

fn scene_dir(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("scene_{id}"))
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AidError::io(dir, e))?;
    for (scene, entry) in dataset.scenes.iter().zip(&dataset.manifest.scenes) {
        let sd = scene_dir(dir, scene.id);
        fs::create_dir_all(&sd).map_err(|e| AidError::io(&sd, e))?;
        write_tensor(&sd.join("image.tns"), scene.image.planes())?;
        write_tensor(&sd.join("weights.tns"), scene.gt_weights.maps())?;
        write_tensor(&sd.join("reflectance.tns"), &scene.reflectance)?;
        write_tensor(&sd.join("shading.tns"), &scene.shading)?;
        let meta = SceneMeta {
            id: scene.id,
            n: scene.n_illuminants(),
            chromas: scene.gt_chromas.iter().map(|c| [c.r, c.b]).collect(),
            seed: scene.seed,
            domain_id: scene.domain_id,
            split: entry.split,
        };
        write_json(&sd.join("meta.json"), &meta)?;
    }
    write_json(&dir.join("manifest.json"), &dataset.manifest)
}

fn read_scene(dir: &Path, entry: &ManifestEntry, h: usize, w: usize) -> Result<Scene> {
    let sd = scene_dir(dir, entry.id);
    let meta_path = sd.join("meta.json");
    let meta: SceneMeta = read_json(&meta_path)?;
    if meta.id != entry.id || meta.n != entry.n || meta.seed != entry.seed || meta.split != entry.split {
        return Err(AidError::format(&meta_path, "metadata disagrees with manifest"));
    }
    if meta.chromas.len() != meta.n {
        return Err(AidError::format(&meta_path, "chromaticity count differs from n"));
    }
    let expect = |path: PathBuf, t: Tensor, shape: &[usize]| {
        if t.shape() == shape {
            Ok(t)
        } else {
            Err(AidError::format(path, format!("shape {:?}, expected {shape:?}", t.shape())))
        }
    };
    let p = sd.join("image.tns");
    let image = expect(p.clone(), read_tensor(&p)?, &[3, h, w])?;
    let p = sd.join("weights.tns");
    let weights = expect(p.clone(), read_tensor(&p)?, &[meta.n, h, w])?;
    let p = sd.join("reflectance.tns");
    let reflectance = expect(p.clone(), read_tensor(&p)?, &[3, h, w])?;
    let p = sd.join("shading.tns");
    let shading = expect(p.clone(), read_tensor(&p)?, &[h, w])?;
    let gt_chromas = meta
        .chromas
        .iter()
        .map(|&[r, b]| ChromaticityRB::new(r, b))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| AidError::format(&meta_path, e.to_string()))?;
    Ok(Scene {
        id: meta.id,
        image: RawImage::new(image).map_err(|e| AidError::format(sd.join("image.tns"), e.to_string()))?,
        gt_chromas,
        gt_weights: WeightMaps::new(weights).map_err(|e| AidError::format(sd.join("weights.tns"), e.to_string()))?,
        shading,
        reflectance,
        seed: meta.seed,
        domain_id: meta.domain_id,
    })
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = read_json(&manifest_path)?;
    if manifest.version != Manifest::VERSION {
        return Err(AidError::format(
            &manifest_path,
            format!("manifest version {} (expected {})", manifest.version, Manifest::VERSION),
        ));
    }
    let total: usize = manifest.split_counts.values().sum();
    if total != manifest.scenes.len() {
        return Err(AidError::format(&manifest_path, "split counts do not sum to scene count"));
    }
    let scenes = manifest
        .scenes
        .iter()
        .map(|e| read_scene(dir, e, manifest.height, manifest.width))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { manifest, scenes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_illuminant_maps_are_exactly_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = gen_weight_maps(1, 5, 7, 0.25, &mut rng).unwrap();
        assert!(w.maps().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn weight_maps_sum_to_one_and_dominate() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 2 + (seed as usize % 2);
            let w = gen_weight_maps(n, 16, 16, 0.25, &mut rng).unwrap();
            assert!(w.max_sum_deviation() <= 1e-9);
            assert!((0..n).all(|k| w.max_weight(k) >= WEIGHT_DOMINANCE), "seed {seed}");
        }
    }

    #[test]
    fn separation_is_enforced_or_reported() {
        let pool = ChromaticityPool::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let cs = sample_chromaticities(&pool, 3, 5.0, &mut rng).unwrap();
            for i in 0..3 {
                for j in i + 1..3 {
                    assert!(angular_error(&cs[i], &cs[j]) >= 5.0);
                }
            }
        }
        let tight = ChromaticityPool::new(vec![
            ChromaticityRB::new(0.5, 0.5).unwrap(),
            ChromaticityRB::new(0.51, 0.5).unwrap(),
        ])
        .unwrap();
        assert!(matches!(
            sample_chromaticities(&tight, 2, 5.0, &mut rng),
            Err(AidError::Generation(_))
        ));
    }

    #[test]
    fn locus_bounds_hold() {
        let pool = ChromaticityPool::default();
        assert_eq!(pool.entries().len(), 200);
        assert!(pool.entries().iter().all(|c| pool.contains(c)));
        assert!(pool.r_range().0 > 0.35 && pool.r_range().1 < 1.1);
    }
}
