//! Deterministic synthetic worlds: planted slum disks rasterized at sub-pixel
//! resolution, embeddings driven by the resulting density, auxiliary bands
//! correlated with it, and a per-city affine representation drift.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use slumscope_core::features::{Category, FeatureBlock};
use slumscope_core::grid::{CityCode, CityYear, Geometry, Grid, BLOCK_BANDS, DEFAULT_CELL_SIZE_M, DEFAULT_NODATA};
use slumscope_core::labels::{aggregate, LabelPair, SubpixelMask, SUBFACTOR, SUBPIXELS_PER_CELL};
use thiserror::Error;

const AEF_DIM: usize = 64;
const ZERO_SHARE_TOLERANCE: f64 = 0.005;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid world spec: {0}")]
    Invalid(String),
    #[error("zero-pixel share {target} is unreachable (achievable range {lo:.4}..={hi:.4})")]
    InfeasibleZeroShare { target: f64, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticWorldSpec {
    pub cities: usize,
    /// Years that get label masks.
    pub years: Vec<i32>,
    /// Years with features only.
    pub unlabeled_years: Vec<i32>,
    pub width: usize,
    pub height: usize,
    /// Planted disks per city, spread round-robin over the 3×3 blocks.
    pub clusters: usize,
    /// Disk radius in cells; ignored when `zero_share` is set.
    pub cluster_radius: f64,
    /// Fraction of the radius with density 1 before the cosine fall-off.
    pub core_fraction: f64,
    /// Relative radius growth per year step.
    pub radius_growth: f64,
    /// Target share of zero-count cells in the first year; the radius is
    /// solved for it per city.
    pub zero_share: Option<f64>,
    /// Embedding dimensions carrying density signal.
    pub signal_rank: usize,
    /// Standard deviation of each whitened signal direction.
    pub signal_amplitude: f64,
    /// Magnitude of a per-cluster appearance vector added in proportion to
    /// density; spatial hold-outs see clusters whose appearance never
    /// occurred in training.
    pub cluster_style: f64,
    pub noise_sd: f64,
    /// Share of noise variance that is spatially smooth.
    pub noise_spatial_share: f64,
    /// Box-blur radius (cells) of the smooth noise component.
    pub noise_corr_radius: usize,
    /// Share of noise variance redrawn every year.
    pub noise_year_share: f64,
    /// Per-city affine drift magnitude; 0 makes cities exchangeable.
    pub drift: f64,
    pub nodata_share: f64,
    pub seed: u64,
}

impl Default for SyntheticWorldSpec {
    fn default() -> Self {
        SyntheticWorldSpec {
            cities: 3,
            years: vec![2020, 2021],
            unlabeled_years: Vec::new(),
            width: 45,
            height: 45,
            clusters: 9,
            cluster_radius: 4.0,
            core_fraction: 0.5,
            radius_growth: 0.0,
            zero_share: Some(0.893),
            signal_rank: 8,
            signal_amplitude: 1.0,
            cluster_style: 3.0,
            noise_sd: 1.0,
            noise_spatial_share: 0.8,
            noise_corr_radius: 3,
            noise_year_share: 0.2,
            drift: 0.8,
            nodata_share: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticWorldSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Invalid(m.to_string()));
        if self.cities == 0 || self.cities > 26 * 26 {
            return bad("cities must be in 1..=676");
        }
        if self.years.is_empty() {
            return bad("at least one labeled year is required");
        }
        let mut all: Vec<i32> = self.years.iter().chain(&self.unlabeled_years).copied().collect();
        all.sort_unstable();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return bad("years must be distinct");
        }
        if self.width < BLOCK_BANDS || self.height < BLOCK_BANDS {
            return bad("grid must be at least 3×3");
        }
        if !(1..=AEF_DIM).contains(&self.signal_rank) {
            return bad("signal_rank must be in 1..=64");
        }
        for (name, v) in [
            ("core_fraction", self.core_fraction),
            ("noise_spatial_share", self.noise_spatial_share),
            ("noise_year_share", self.noise_year_share),
            ("nodata_share", self.nodata_share),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SynthError::Invalid(format!("{name} must be in [0, 1]")));
            }
        }
        if let Some(z) = self.zero_share {
            if !(0.0..=1.0).contains(&z) {
                return bad("zero_share must be in [0, 1]");
            }
        }
        for (name, v) in [
            ("cluster_radius", self.cluster_radius),
            ("signal_amplitude", self.signal_amplitude),
            ("cluster_style", self.cluster_style),
            ("noise_sd", self.noise_sd),
            ("drift", self.drift),
            ("radius_growth", self.radius_growth),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SynthError::Invalid(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    pub fn city_codes(&self) -> Vec<CityCode> {
        (0..self.cities)
            .map(|i| {
                let code = [b'C', b'A' + (i / 26) as u8, b'A' + (i % 26) as u8];
                std::str::from_utf8(&code).expect("ASCII").parse().expect("valid code")
            })
            .collect()
    }
}

/// One generated city-year.
#[derive(Debug, Clone)]
pub struct CityYearData {
    pub key: CityYear,
    pub blocks: Vec<FeatureBlock>,
    /// Present for labeled years.
    pub mask: Option<SubpixelMask>,
}

#[derive(Debug, Clone)]
pub struct World {
    pub spec: SyntheticWorldSpec,
    pub entries: Vec<CityYearData>,
}

impl World {
    /// Label counts of every labeled entry.
    pub fn labels(&self) -> Vec<(CityYear, LabelPair)> {
        self.entries
            .iter()
            .filter_map(|e| e.mask.as_ref().map(|m| (e.key, aggregate(m).expect("generated mask is well-formed"))))
            .collect()
    }
}

// Random-stream purposes.
const STREAM_WORLD: u64 = 0;
const STREAM_CITY: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_YEAR: u64 = 3;

fn rng_for(seed: u64, purpose: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 48) | (a << 24) | b);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform dither threshold in [0, 1) for one sub-pixel.
fn dither(seed: u64, city: usize, sub: usize) -> f64 {
    let h = splitmix64(splitmix64(seed ^ 0xD1B5_4A32_D192_ED03) ^ ((city as u64) << 40) ^ sub as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Clone, Copy)]
struct Disk {
    row: f64,
    col: f64,
    /// Multiplier on the common radius.
    scale: f64,
}

fn plant_disks(spec: &SyntheticWorldSpec, rng: &mut ChaCha8Rng) -> Vec<Disk> {
    let (w, h) = (spec.width, spec.height);
    (0..spec.clusters)
        .map(|i| {
            let b = i % (BLOCK_BANDS * BLOCK_BANDS);
            let (rb, cb) = (b / BLOCK_BANDS, b % BLOCK_BANDS);
            let (r0, r1) = (rb * h / BLOCK_BANDS, (rb + 1) * h / BLOCK_BANDS);
            let (c0, c1) = (cb * w / BLOCK_BANDS, (cb + 1) * w / BLOCK_BANDS);
            Disk {
                row: r0 as f64 + rng.random::<f64>() * (r1 - r0) as f64,
                col: c0 as f64 + rng.random::<f64>() * (c1 - c0) as f64,
                scale: 0.7 + 0.6 * rng.random::<f64>(),
            }
        })
        .collect()
}

/// Density at a point (cell units): 1 inside the core, cosine fall-off to 0 at the rim.
fn profile(dist: f64, radius: f64, core: f64) -> f64 {
    if radius <= 0.0 || dist >= radius {
        return 0.0;
    }
    let inner = core * radius;
    if dist <= inner {
        return 1.0;
    }
    0.5 * (1.0 + (std::f64::consts::PI * (dist - inner) / (radius - inner)).cos())
}

/// Sub-pixel mask: a sub-pixel is slum when the disk density at its centre
/// exceeds its dither threshold.
fn rasterize(geometry: Geometry, disks: &[Disk], radius: f64, core: f64, seed: u64, city: usize) -> SubpixelMask {
    let s = SUBFACTOR;
    let mut mask = SubpixelMask::empty(geometry, s);
    let (sw, sh) = (geometry.width * s, geometry.height * s);
    let mut density = vec![0.0f64; sw * sh];
    for d in disks {
        let r = radius * d.scale;
        if r <= 0.0 {
            continue;
        }
        let lo_r = (((d.row - r) * s as f64).floor().max(0.0)) as usize;
        let hi_r = (((d.row + r) * s as f64).ceil() as usize).min(sh);
        let lo_c = (((d.col - r) * s as f64).floor().max(0.0)) as usize;
        let hi_c = (((d.col + r) * s as f64).ceil() as usize).min(sw);
        for sr in lo_r..hi_r {
            let y = (sr as f64 + 0.5) / s as f64;
            for sc in lo_c..hi_c {
                let x = (sc as f64 + 0.5) / s as f64;
                let v = profile((y - d.row).hypot(x - d.col), r, core);
                let slot = &mut density[sr * sw + sc];
                *slot = slot.max(v);
            }
        }
    }
    for (i, &v) in density.iter().enumerate() {
        if v > 0.0 && v > dither(seed, city, i) {
            mask.set(i / sw, i % sw, true);
        }
    }
    mask
}

fn zero_share(labels: &LabelPair, valid: &[bool]) -> f64 {
    let (mut zeros, mut n) = (0usize, 0usize);
    for (c, &ok) in valid.iter().enumerate() {
        if ok {
            n += 1;
            zeros += usize::from(labels.count()[c] == 0);
        }
    }
    if n == 0 {
        1.0
    } else {
        zeros as f64 / n as f64
    }
}

/// Bisects the common radius so the realized zero share meets `target`.
fn solve_radius(
    spec: &SyntheticWorldSpec,
    geometry: Geometry,
    disks: &[Disk],
    valid: &[bool],
    target: f64,
    city: usize,
) -> Result<f64, SynthError> {
    let share = |r: f64| {
        let m = rasterize(geometry, disks, r, spec.core_fraction, spec.seed, city);
        zero_share(&aggregate(&m).expect("well-formed"), valid)
    };
    let (mut lo, mut hi) = (0.0, (spec.width + spec.height) as f64);
    let (s_lo, s_hi) = (share(lo), share(hi));
    if target > s_lo + ZERO_SHARE_TOLERANCE || target < s_hi - ZERO_SHARE_TOLERANCE {
        return Err(SynthError::InfeasibleZeroShare { target, lo: s_hi, hi: s_lo });
    }
    let mut best = (lo, (s_lo - target).abs());
    for _ in 0..48 {
        let mid = 0.5 * (lo + hi);
        let s = share(mid);
        if (s - target).abs() < best.1 {
            best = (mid, (s - target).abs());
        }
        if s > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.1 > ZERO_SHARE_TOLERANCE {
        return Err(SynthError::InfeasibleZeroShare { target, lo: s_hi, hi: s_lo });
    }
    Ok(best.0)
}

/// Unit-variance spatially smooth field: two passes of a separable box blur
/// over white noise.
fn smooth_field(rng: &mut ChaCha8Rng, w: usize, h: usize, radius: usize) -> Vec<f64> {
    let mut f: Vec<f64> = (0..w * h).map(|_| rng.sample(StandardNormal)).collect();
    if radius > 0 {
        for _ in 0..2 {
            f = box_blur(&f, w, h, radius);
        }
    }
    standardize(&mut f);
    f
}

fn box_blur(f: &[f64], w: usize, h: usize, radius: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let (a, b) = (c.saturating_sub(radius), (c + radius + 1).min(w));
            tmp[r * w + c] = f[r * w + a..r * w + b].iter().sum::<f64>() / (b - a) as f64;
        }
    }
    let mut out = vec![0.0; w * h];
    for c in 0..w {
        for r in 0..h {
            let (a, b) = (r.saturating_sub(radius), (r + radius + 1).min(h));
            out[r * w + c] = (a..b).map(|k| tmp[k * w + c]).sum::<f64>() / (b - a) as f64;
        }
    }
    out
}

fn standardize(f: &mut [f64]) {
    let n = f.len() as f64;
    let mean = f.iter().sum::<f64>() / n;
    let sd = (f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    for v in f.iter_mut() {
        *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
    }
}

/// Density basis: ρ, √ρ, then sin(jπρ/2) harmonics.
fn basis(rho: f64, rank: usize) -> DVector<f64> {
    DVector::from_fn(rank, |j, _| match j {
        0 => rho,
        1 => rho.sqrt(),
        _ => (j as f64 * std::f64::consts::FRAC_PI_2 * rho).sin(),
    })
}

/// Mean and inverse Cholesky factor of the pooled basis covariance.
fn whitening(densities: &[f64], rank: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = densities.len().max(1) as f64;
    let mut mean = DVector::zeros(rank);
    for &r in densities {
        mean += basis(r, rank);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(rank, rank);
    for &r in densities {
        let d = basis(r, rank) - &mean;
        cov += &d * d.transpose();
    }
    cov /= n;
    let ridge = 1e-9 * (cov.trace() / rank as f64).max(1e-12);
    for i in 0..rank {
        cov[(i, i)] += ridge;
    }
    let l = cov.cholesky().expect("ridged covariance is positive definite").l();
    let inv = l.try_inverse().expect("triangular factor is invertible");
    (mean, inv)
}

fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    // Fix column signs so the factorization is unique.
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Auxiliary band loading on smoothed density, by category.
fn aux_loading(category: Category) -> f64 {
    match category {
        Category::Aef => 0.0,
        Category::Ntl => 0.8,
        Category::Rs => 0.5,
        Category::Spatial => 0.3,
        Category::Poi => -0.6,
    }
}

struct CityParams {
    code: CityCode,
    disks: Vec<Disk>,
    /// Per-disk appearance vectors in latent space.
    styles: Vec<DVector<f64>>,
    radius: f64,
    drift_matrix: DMatrix<f64>,
    drift_shift: DVector<f64>,
    static_noise: Vec<Vec<f64>>,
    nodata: Vec<bool>,
}

fn noise_field(spec: &SyntheticWorldSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (w, h) = (spec.width, spec.height);
    let smooth = smooth_field(rng, w, h, spec.noise_corr_radius);
    let (a, b) = (spec.noise_spatial_share.sqrt(), (1.0 - spec.noise_spatial_share).sqrt());
    smooth.into_iter().map(|s| a * s + b * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn geometry_for(spec: &SyntheticWorldSpec, key: CityYear) -> Geometry {
    Geometry { width: spec.width, height: spec.height, cell_size_m: DEFAULT_CELL_SIZE_M, key }
}

/// Generates the world described by `spec`; the same spec always yields the
/// same values.
pub fn synth_world(spec: &SyntheticWorldSpec) -> Result<World, SynthError> {
    spec.validate()?;
    let (w, h, n) = (spec.width, spec.height, spec.width * spec.height);
    let mut world_rng = rng_for(spec.seed, STREAM_WORLD, 0, 0);
    let rotation = random_orthogonal(&mut world_rng, AEF_DIM);
    let aux_weights: Vec<Vec<f64>> =
        Category::ALL[1..].iter().map(|c| (0..c.dim()).map(|_| 0.5 + world_rng.random::<f64>()).collect()).collect();

    let mut years: Vec<(i32, bool)> = spec.years.iter().map(|&y| (y, true)).collect();
    years.extend(spec.unlabeled_years.iter().map(|&y| (y, false)));
    years.sort_unstable();
    let first_year = years[0].0;

    let mut cities = Vec::with_capacity(spec.cities);
    for (ci, code) in spec.city_codes().into_iter().enumerate() {
        let mut rng = rng_for(spec.seed, STREAM_CITY, ci as u64, 0);
        let disks = plant_disks(spec, &mut rng);
        let nodata: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < spec.nodata_share).collect();
        let valid: Vec<bool> = nodata.iter().map(|&x| !x).collect();
        let geometry = geometry_for(spec, CityYear::new(code, first_year));
        let radius = match spec.zero_share {
            Some(target) if spec.clusters > 0 => solve_radius(spec, geometry, &disks, &valid, target, ci)?,
            Some(target) if target < 1.0 - ZERO_SHARE_TOLERANCE => {
                return Err(SynthError::InfeasibleZeroShare { target, lo: 1.0, hi: 1.0 });
            }
            _ => spec.cluster_radius,
        };
        let drift_matrix = DMatrix::identity(AEF_DIM, AEF_DIM)
            + DMatrix::from_fn(AEF_DIM, AEF_DIM, |_, _| {
                spec.drift * rng.sample::<f64, _>(StandardNormal) / (AEF_DIM as f64).sqrt()
            });
        let drift_shift =
            DVector::from_fn(AEF_DIM, |_, _| spec.drift * spec.signal_amplitude * rng.sample::<f64, _>(StandardNormal));
        let styles = disks
            .iter()
            .map(|_| DVector::from_fn(AEF_DIM, |_, _| rng.sample::<f64, _>(StandardNormal) / (AEF_DIM as f64).sqrt()))
            .collect();
        let mut noise_rng = rng_for(spec.seed, STREAM_NOISE, ci as u64, 0);
        let static_noise = (0..AEF_DIM + aux_weights.iter().map(Vec::len).sum::<usize>())
            .map(|_| noise_field(spec, &mut noise_rng))
            .collect();
        cities.push(CityParams { code, disks, styles, radius, drift_matrix, drift_shift, static_noise, nodata });
    }

    // Masks and densities first: the signal whitening pools every city-year.
    let mut staged = Vec::new();
    for (ci, city) in cities.iter().enumerate() {
        for (yi, &(year, labeled)) in years.iter().enumerate() {
            let geometry = geometry_for(spec, CityYear::new(city.code, year));
            let radius = city.radius * (1.0 + spec.radius_growth).powi((year - first_year).max(0));
            let mask = rasterize(geometry, &city.disks, radius, spec.core_fraction, spec.seed, ci);
            let labels = aggregate(&mask).expect("well-formed");
            staged.push((ci, yi, labeled, geometry, mask, labels));
        }
    }
    let pooled: Vec<f64> = staged
        .iter()
        .flat_map(|(ci, _, _, _, _, labels)| {
            let nodata = &cities[*ci].nodata;
            (0..n).filter(|&c| !nodata[c]).map(move |c| labels.density(c))
        })
        .collect();
    let (basis_mean, whiten) = whitening(&pooled, spec.signal_rank);
    let smoothed_mean_sd = {
        let mut all: Vec<f64> =
            staged.iter().flat_map(|(_, _, _, _, _, labels)| box_blur(&labels.densities(), w, h, 2)).collect();
        let n_all = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n_all;
        all.iter_mut().for_each(|v| *v = (*v - mean).powi(2));
        let sd = (all.iter().sum::<f64>() / n_all).sqrt();
        (mean, if sd > 0.0 { sd } else { 1.0 })
    };

    let year_share = spec.noise_year_share;
    let mut entries = Vec::with_capacity(staged.len());
    for (ci, yi, labeled, geometry, mask, labels) in staged {
        let city = &cities[ci];
        let mut year_rng = rng_for(spec.seed, STREAM_YEAR, ci as u64, yi as u64);
        let n_fields = city.static_noise.len();
        let year_noise: Vec<Vec<f64>> = if year_share > 0.0 {
            (0..n_fields).map(|_| noise_field(spec, &mut year_rng)).collect()
        } else {
            Vec::new()
        };
        let noise = |field: usize, cell: usize| {
            let s = city.static_noise[field][cell];
            let y = year_noise.get(field).map_or(0.0, |f| f[cell]);
            spec.noise_sd * ((1.0 - year_share).sqrt() * s + year_share.sqrt() * y)
        };

        let mut aef = vec![vec![0.0f32; n]; AEF_DIM];
        let mut latent = DVector::zeros(AEF_DIM);
        for c in 0..n {
            let rho = labels.density(c);
            let signal = &whiten * (basis(rho, spec.signal_rank) - &basis_mean);
            for d in 0..AEF_DIM {
                let s = if d < spec.signal_rank { spec.signal_amplitude * signal[d] } else { 0.0 };
                latent[d] = s + noise(d, c);
            }
            if spec.cluster_style > 0.0 && rho > 0.0 {
                let (row, col) = (c / w, c % w);
                let nearest = (0..city.disks.len()).min_by(|&a, &b| {
                    let da = (city.disks[a].row - row as f64 - 0.5).hypot(city.disks[a].col - col as f64 - 0.5);
                    let db = (city.disks[b].row - row as f64 - 0.5).hypot(city.disks[b].col - col as f64 - 0.5);
                    da.total_cmp(&db)
                });
                if let Some(k) = nearest {
                    latent.axpy(spec.cluster_style * spec.signal_amplitude * rho, &city.styles[k], 1.0);
                }
            }
            let x = &city.drift_matrix * (&rotation * &latent) + &city.drift_shift;
            for d in 0..AEF_DIM {
                aef[d][c] = x[d] as f32;
            }
        }
        let smoothed = box_blur(&labels.densities(), w, h, 2);
        let (sm, ss) = smoothed_mean_sd;
        let mut blocks = Vec::with_capacity(Category::ALL.len());
        let to_grids = |bands: Vec<Vec<f32>>| -> Vec<Grid> {
            bands
                .into_iter()
                .map(|mut v| {
                    for (c, x) in v.iter_mut().enumerate() {
                        if city.nodata[c] {
                            *x = DEFAULT_NODATA;
                        }
                    }
                    Grid::new(geometry, DEFAULT_NODATA, v).expect("sized to the geometry")
                })
                .collect()
        };
        blocks.push(FeatureBlock::new(Category::Aef, to_grids(aef)).expect("64 bands"));
        let mut field = AEF_DIM;
        for (k, &category) in Category::ALL[1..].iter().enumerate() {
            let loading = aux_loading(category);
            let bands: Vec<Vec<f32>> = aux_weights[k]
                .iter()
                .map(|&wt| {
                    let f = field;
                    field += 1;
                    (0..n).map(|c| (loading * wt * (smoothed[c] - sm) / ss + noise(f, c)) as f32).collect()
                })
                .collect();
            blocks.push(FeatureBlock::new(category, to_grids(bands)).expect("category-sized"));
        }
        debug_assert!(labels.count().iter().all(|&v| v <= SUBPIXELS_PER_CELL));
        entries.push(CityYearData { key: geometry.key, blocks, mask: labeled.then_some(mask) });
    }
    Ok(World { spec: spec.clone(), entries })
}
