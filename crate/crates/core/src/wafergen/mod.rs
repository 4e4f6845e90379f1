//! Synthetic photoluminescence wafers with chip-wise ground truth.
//!
//! A wafer is a disc of chips embedded in a rectangular grid. Brightness is a
//! per-wafer base level modulated by a smooth field; alignment markers and defects
//! darken chips. Markers are labelled background, defects are labelled class 2.

mod config;
mod dataset;

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use config::{BrightnessField, ClusterShape, WaferGenConfig};
pub use dataset::{generate_dataset, Dataset, ManifestEntry, Split, DEFAULT_VAL_FRACTION};

use crate::error::{Error, Result};
use crate::grid::{Image, LabelMap, CLASS_BACKGROUND, CLASS_DEFECT, CLASS_IN_SPEC};

const PLACEMENT_RETRIES: usize = 200;
/// Brightness multiplier range of a defect chip.
pub const DEFECT_FACTOR: (f64, f64) = (0.1, 0.6);
const MARKER_FACTOR: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DefectKind {
    Single,
    Linear,
    Void,
    Cluster,
}

impl DefectKind {
    pub fn name(self) -> &'static str {
        match self {
            DefectKind::Single => "single",
            DefectKind::Linear => "linear",
            DefectKind::Void => "void",
            DefectKind::Cluster => "cluster",
        }
    }
}

impl fmt::Display for DefectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DefectKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Self::Single),
            "linear" => Ok(Self::Linear),
            "void" => Ok(Self::Void),
            "cluster" => Ok(Self::Cluster),
            other => Err(Error::Config(format!("unknown defect kind `{other}`"))),
        }
    }
}

/// Ground truth of one stamped defect as sorted flat pixel indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DefectGeometry {
    pub kind: DefectKind,
    /// Pixels labelled defective.
    pub label: Vec<u32>,
    /// Pixels darkened on the photoluminescence image.
    pub visible: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaferMeta {
    pub config: WaferGenConfig,
    pub defects: Vec<DefectGeometry>,
    /// Clockwise rotation applied after generation, in degrees.
    pub rotation: u32,
}

/// One generated wafer: brightness image, chip labels and generation record.
#[derive(Clone, Debug, PartialEq)]
pub struct WaferSample {
    pub image: Image,
    pub labels: LabelMap,
    pub meta: WaferMeta,
}

impl WaferSample {
    pub fn is_cluster(&self) -> bool {
        self.meta.config.cluster_count > 0
    }

    pub fn seed(&self) -> u64 {
        self.meta.config.seed
    }
}

struct Disc {
    cy: f64,
    cx: f64,
    radius: f64,
}

impl Disc {
    fn contains(&self, r: f64, c: f64) -> bool {
        (r - self.cy).powi(2) + (c - self.cx).powi(2) <= self.radius * self.radius
    }
}

/// Separable box blur applied `passes` times, with clamped borders.
fn box_blur(field: &mut [f64], h: usize, w: usize, radius: usize, passes: usize) {
    if radius == 0 {
        return;
    }
    let mut tmp = vec![0.0; field.len()];
    for _ in 0..passes {
        for r in 0..h {
            for c in 0..w {
                let (lo, hi) = (c.saturating_sub(radius), (c + radius).min(w - 1));
                tmp[r * w + c] =
                    field[r * w + lo..=r * w + hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
            }
        }
        for c in 0..w {
            for r in 0..h {
                let (lo, hi) = (r.saturating_sub(radius), (r + radius).min(h - 1));
                field[r * w + c] =
                    (lo..=hi).map(|rr| tmp[rr * w + c]).sum::<f64>() / (hi - lo + 1) as f64;
            }
        }
    }
}

/// Smooth random field rescaled to `[0, 1]`.
fn smooth_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, radius: usize) -> Vec<f64> {
    let mut f: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
    box_blur(&mut f, h, w, radius, 3);
    let (lo, hi) = f
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let span = (hi - lo).max(1e-12);
    f.iter_mut().for_each(|v| *v = (*v - lo) / span);
    f
}

/// Pixels of a filled ellipse with semi-axes `a` (along `theta`) and `b`.
fn ellipse(cy: f64, cx: f64, a: f64, b: f64, theta: f64, h: usize, w: usize) -> Option<Vec<u32>> {
    let ext = a.max(b).ceil() as isize + 1;
    let (s, co) = theta.sin_cos();
    let mut px = Vec::new();
    for r in (cy.round() as isize - ext)..=(cy.round() as isize + ext) {
        for c in (cx.round() as isize - ext)..=(cx.round() as isize + ext) {
            let (dy, dx) = (r as f64 - cy, c as f64 - cx);
            let u = dx * co + dy * s;
            let v = -dx * s + dy * co;
            if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                if r < 0 || c < 0 || r as usize >= h || c as usize >= w {
                    return None;
                }
                px.push((r as usize * w + c as usize) as u32);
            }
        }
    }
    px.sort_unstable();
    Some(px)
}

/// 8-connected raster line from `(r0, c0)` to `(r1, c1)`.
fn bresenham(r0: isize, c0: isize, r1: isize, c1: isize) -> Vec<(isize, isize)> {
    let (dr, dc) = ((r1 - r0).abs(), -(c1 - c0).abs());
    let (sr, sc) = (if r0 < r1 { 1 } else { -1 }, if c0 < c1 { 1 } else { -1 });
    let (mut r, mut c, mut err) = (r0, c0, dr + dc);
    let mut out = Vec::new();
    loop {
        out.push((r, c));
        if r == r1 && c == c1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dc {
            err += dc;
            r += sr;
        }
        if e2 <= dr {
            err += dr;
            c += sc;
        }
    }
    out
}

struct Canvas<'a> {
    cfg: &'a WaferGenConfig,
    disc: Disc,
    /// Pixels unavailable to new defects (markers, placed defects and their halo).
    blocked: Vec<bool>,
    in_disc: Vec<bool>,
}

impl Canvas<'_> {
    fn h(&self) -> usize {
        self.cfg.height
    }

    fn w(&self) -> usize {
        self.cfg.width
    }

    fn free(&self, px: &[u32]) -> bool {
        !px.is_empty()
            && px
                .iter()
                .all(|&p| self.in_disc[p as usize] && !self.blocked[p as usize])
    }

    /// Blocks `px` and its 8-neighbourhood so defects never touch.
    fn block(&mut self, px: &[u32]) {
        let (h, w) = (self.h() as isize, self.w() as isize);
        for &p in px {
            let (r, c) = (
                (p as usize / self.w()) as isize,
                (p as usize % self.w()) as isize,
            );
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr >= 0 && cc >= 0 && rr < h && cc < w {
                        self.blocked[(rr * w + cc) as usize] = true;
                    }
                }
            }
        }
    }

    fn random_point(&self, rng: &mut ChaCha8Rng, max_frac: f64) -> (f64, f64) {
        let rad = self.disc.radius * max_frac * rng.random::<f64>().sqrt();
        let ang = rng.random::<f64>() * 2.0 * PI;
        (
            self.disc.cy + rad * ang.sin(),
            self.disc.cx + rad * ang.cos(),
        )
    }
}

/// A placed defect plus per-pixel brightness multipliers for the pixels it darkens.
struct Stamp {
    geometry: DefectGeometry,
    darken: Vec<(u32, f64)>,
}

fn place_cluster(canvas: &Canvas<'_>, rng: &mut ChaCha8Rng) -> Option<Stamp> {
    let (h, w) = (canvas.h(), canvas.w());
    let radius = canvas.disc.radius;
    let sigma = radius * rng.random_range(0.09..0.16);
    let (cy, cx) = canvas.random_point(rng, 0.6);
    let half = (2.0 * sigma).ceil() as usize + 2;
    let side = 2 * half + 1;
    let noise = smooth_noise(rng, side, side, ((sigma / 4.0).round() as usize).max(1));
    let shade = smooth_noise(rng, side, side, ((sigma / 3.0).round() as usize).max(1));
    let sharp = smooth_noise(rng, side, side, 1);
    let theta = rng.random::<f64>() * PI;
    let (s, co) = theta.sin_cos();
    let shape = canvas.cfg.cluster_shape;
    let mut score = vec![f64::NEG_INFINITY; side * side];
    for i in 0..side {
        for j in 0..side {
            let (dy, dx) = (i as f64 - half as f64, j as f64 - half as f64);
            let envelope = match shape {
                ClusterShape::Blob => 1.0 - (dy * dy + dx * dx) / (sigma * sigma),
                ClusterShape::Elongated => {
                    let u = dx * co + dy * s;
                    let v = -dx * s + dy * co;
                    1.0 - (u / (1.8 * sigma)).powi(2) - (v / (0.4 * sigma)).powi(2)
                }
                ClusterShape::Ring => {
                    let d = (dy * dy + dx * dx).sqrt();
                    1.0 - ((d - 0.65 * sigma) / (0.3 * sigma)).powi(2)
                }
            };
            score[i * side + j] = envelope + 0.9 * (noise[i * side + j] - 0.5);
        }
    }
    // Keep the 4-connected component of above-threshold cells around the best seed.
    let threshold = 0.25;
    let seed = (0..side * side).max_by(|&a, &b| score[a].total_cmp(&score[b]))?;
    if score[seed] <= threshold {
        return None;
    }
    let mut inside = vec![false; side * side];
    let mut queue = VecDeque::from([seed]);
    inside[seed] = true;
    while let Some(k) = queue.pop_front() {
        let (i, j) = (k / side, k % side);
        let neighbours = [
            (i.wrapping_sub(1), j),
            (i + 1, j),
            (i, j.wrapping_sub(1)),
            (i, j + 1),
        ];
        for (ni, nj) in neighbours {
            if ni < side
                && nj < side
                && !inside[ni * side + nj]
                && score[ni * side + nj] > threshold
            {
                inside[ni * side + nj] = true;
                queue.push_back(ni * side + nj);
            }
        }
    }
    let (r0, c0) = (
        cy.round() as isize - half as isize,
        cx.round() as isize - half as isize,
    );
    let mut darken = Vec::new();
    for k in (0..side * side).filter(|&k| inside[k]) {
        let (r, c) = (r0 + (k / side) as isize, c0 + (k % side) as isize);
        if r < 0 || c < 0 || r as usize >= h || c as usize >= w {
            return None;
        }
        // Smooth shading interrupted by sharp dark patches.
        let f = if sharp[k] > 0.7 {
            DEFECT_FACTOR.0
        } else {
            DEFECT_FACTOR.0 + 0.5 * shade[k]
        };
        darken.push((
            (r as usize * w + c as usize) as u32,
            f.clamp(DEFECT_FACTOR.0, DEFECT_FACTOR.1),
        ));
    }
    if darken.len() < 12 {
        return None;
    }
    darken.sort_unstable_by_key(|d| d.0);
    let label: Vec<u32> = darken.iter().map(|d| d.0).collect();
    Some(Stamp {
        geometry: DefectGeometry {
            kind: DefectKind::Cluster,
            visible: label.clone(),
            label,
        },
        darken,
    })
}

fn place_void(canvas: &Canvas<'_>, rng: &mut ChaCha8Rng) -> Option<Stamp> {
    let radius = canvas.disc.radius;
    let a = rng.random_range(2.0..(0.07 * radius).max(3.0));
    let b = a * rng.random_range(0.6..1.0);
    let theta = rng.random::<f64>() * PI;
    let (cy, cx) = canvas.random_point(rng, 0.8);
    let inflation = canvas.cfg.void_label_inflation;
    let visible = ellipse(cy, cx, a, b, theta, canvas.h(), canvas.w())?;
    let label = ellipse(
        cy,
        cx,
        a * inflation,
        b * inflation,
        theta,
        canvas.h(),
        canvas.w(),
    )?;
    let factor = rng.random_range(DEFECT_FACTOR.0..0.35);
    let dark = if canvas.cfg.ultrasonic_embedding {
        &label
    } else {
        &visible
    };
    let darken = dark.iter().map(|&p| (p, factor)).collect();
    let visible = if canvas.cfg.ultrasonic_embedding {
        label.clone()
    } else {
        visible
    };
    Some(Stamp {
        geometry: DefectGeometry {
            kind: DefectKind::Void,
            label,
            visible,
        },
        darken,
    })
}

fn place_linear(canvas: &Canvas<'_>, rng: &mut ChaCha8Rng) -> Option<Stamp> {
    let radius = canvas.disc.radius;
    let (mut r, mut c) = canvas.random_point(rng, 0.85);
    let segments = rng.random_range(1..=3);
    let mut heading = rng.random::<f64>() * 2.0 * PI;
    let mut px: Vec<u32> = Vec::new();
    for _ in 0..segments {
        let len = radius * rng.random_range(0.15..0.45);
        let (r1, c1) = (r + len * heading.sin(), c + len * heading.cos());
        for (pr, pc) in bresenham(
            r.round() as isize,
            c.round() as isize,
            r1.round() as isize,
            c1.round() as isize,
        ) {
            if pr < 0 || pc < 0 || pr as usize >= canvas.h() || pc as usize >= canvas.w() {
                return None;
            }
            px.push((pr as usize * canvas.w() + pc as usize) as u32);
        }
        (r, c) = (r1, c1);
        heading += rng.random_range(-1.2..1.2);
    }
    px.sort_unstable();
    px.dedup();
    let factor = rng.random_range(DEFECT_FACTOR.0..0.5);
    let darken = px.iter().map(|&p| (p, factor)).collect();
    Some(Stamp {
        geometry: DefectGeometry {
            kind: DefectKind::Linear,
            label: px.clone(),
            visible: px,
        },
        darken,
    })
}

/// Regular lattice of plus-shaped marker glyphs, evenly subsampled to `count`.
fn marker_pixels(canvas: &Canvas<'_>, count: usize) -> Result<Vec<Vec<u32>>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let (h, w) = (canvas.h(), canvas.w());
    let spacing = (h.min(w) / 8).max(4);
    let glyph: [(isize, isize); 5] = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)];
    let mut candidates = Vec::new();
    let mut r = spacing / 2;
    while r < h {
        let mut c = spacing / 2;
        while c < w {
            let fits = [(-2isize, -2isize), (-2, 2), (2, -2), (2, 2)]
                .iter()
                .all(|&(dr, dc)| {
                    canvas
                        .disc
                        .contains(r as f64 + dr as f64, c as f64 + dc as f64)
                });
            if fits {
                let px: Vec<u32> = glyph
                    .iter()
                    .map(|&(dr, dc)| {
                        ((r as isize + dr) as usize * w + (c as isize + dc) as usize) as u32
                    })
                    .collect();
                candidates.push(px);
            }
            c += spacing;
        }
        r += spacing;
    }
    if count > candidates.len() {
        return Err(Error::Placement(format!(
            "{count} alignment markers requested but only {} lattice sites fit the disc",
            candidates.len()
        )));
    }
    Ok((0..count)
        .map(|k| candidates[k * candidates.len() / count].clone())
        .collect())
}

fn brightness_field(cfg: &WaferGenConfig, disc: &Disc, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (h, w) = (cfg.height, cfg.width);
    let amp = cfg.brightness_amplitude;
    match cfg.brightness_field {
        BrightnessField::Uniform => vec![1.0; h * w],
        BrightnessField::RadialGradient => (0..h * w)
            .map(|i| {
                let (r, c) = ((i / w) as f64, (i % w) as f64);
                let d2 =
                    ((r - disc.cy).powi(2) + (c - disc.cx).powi(2)) / (disc.radius * disc.radius);
                1.0 - amp * d2.min(1.0)
            })
            .collect(),
        BrightnessField::LinearGradient => {
            let theta = rng.random::<f64>() * 2.0 * PI;
            let (s, co) = theta.sin_cos();
            (0..h * w)
                .map(|i| {
                    let (r, c) = ((i / w) as f64, (i % w) as f64);
                    let t =
                        (((r - disc.cy) * s + (c - disc.cx) * co) / disc.radius).clamp(-1.0, 1.0);
                    1.0 - amp * (t + 1.0) / 2.0
                })
                .collect()
        }
        BrightnessField::Blotchy => {
            let noise = smooth_noise(rng, h, w, (h.min(w) / 10).max(1));
            noise.iter().map(|n| 1.0 - amp * n).collect()
        }
    }
}

fn placement_error(kind: DefectKind, index: usize, cfg: &WaferGenConfig) -> Error {
    Error::Placement(format!(
        "could not place {kind} defect #{} on a {}x{} wafer without overlapping markers or other defects \
         after {PLACEMENT_RETRIES} attempts (linear={}, voids={}, clusters={})",
        index + 1,
        cfg.height,
        cfg.width,
        cfg.linear_defect_count,
        cfg.void_count,
        cfg.cluster_count
    ))
}

/// Generates one wafer; the result depends only on `config` (including its seed).
pub fn generate_wafer(config: &WaferGenConfig) -> Result<WaferSample> {
    config.validate()?;
    let (h, w) = (config.height, config.width);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let disc = Disc {
        cy: (h as f64 - 1.0) / 2.0,
        cx: (w as f64 - 1.0) / 2.0,
        radius: h.min(w) as f64 / 2.0 * (1.0 - config.disc_margin_frac),
    };
    let in_disc: Vec<bool> = (0..h * w)
        .map(|i| disc.contains((i / w) as f64, (i % w) as f64))
        .collect();
    let base = rng.random_range(0.6..0.9);
    let field = brightness_field(config, &disc, &mut rng);
    let clean: Vec<f64> = (0..h * w)
        .map(|i| if in_disc[i] { base * field[i] } else { 0.0 })
        .collect();

    let mut canvas = Canvas {
        cfg: config,
        disc,
        blocked: vec![false; h * w],
        in_disc,
    };
    let markers = marker_pixels(&canvas, config.marker_count)?;
    for m in &markers {
        canvas.block(m);
    }

    let mut stamps: Vec<Stamp> = Vec::new();
    let plan = [
        (DefectKind::Cluster, config.cluster_count),
        (DefectKind::Void, config.void_count),
        (DefectKind::Linear, config.linear_defect_count),
    ];
    for (kind, count) in plan {
        for index in 0..count {
            let mut placed = None;
            for _ in 0..PLACEMENT_RETRIES {
                let candidate = match kind {
                    DefectKind::Cluster => place_cluster(&canvas, &mut rng),
                    DefectKind::Void => place_void(&canvas, &mut rng),
                    _ => place_linear(&canvas, &mut rng),
                };
                if let Some(s) = candidate {
                    let all_free =
                        canvas.free(&s.geometry.label) && canvas.free(&s.geometry.visible);
                    if all_free {
                        placed = Some(s);
                        break;
                    }
                }
            }
            let stamp = placed.ok_or_else(|| placement_error(kind, index, config))?;
            canvas.block(&stamp.geometry.label);
            stamps.push(stamp);
        }
    }
    if config.single_defect_rate > 0.0 {
        for p in 0..h * w {
            let roll = rng.random::<f64>();
            if roll < config.single_defect_rate && canvas.free(&[p as u32]) {
                let factor = rng.random_range(DEFECT_FACTOR.0..DEFECT_FACTOR.1);
                let px = alloc::vec![p as u32];
                canvas.block(&px);
                stamps.push(Stamp {
                    geometry: DefectGeometry {
                        kind: DefectKind::Single,
                        label: px.clone(),
                        visible: px,
                    },
                    darken: alloc::vec![(p as u32, factor)],
                });
            }
        }
    }

    let mut labels = LabelMap::filled(h, w, CLASS_BACKGROUND);
    let mut image = clean.clone();
    for (i, &inside) in canvas.in_disc.iter().enumerate() {
        if inside {
            labels.data_mut()[i] = CLASS_IN_SPEC;
        }
    }
    for m in &markers {
        for &p in m {
            labels.data_mut()[p as usize] = CLASS_BACKGROUND;
            image[p as usize] = clean[p as usize] * MARKER_FACTOR;
        }
    }
    for s in &stamps {
        for &p in &s.geometry.label {
            labels.data_mut()[p as usize] = CLASS_DEFECT;
        }
        for &(p, f) in &s.darken {
            let v = clean[p as usize];
            image[p as usize] = (v * f).min(v - config.min_contrast).max(0.0);
        }
    }
    if config.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, config.noise_sigma)
            .map_err(|e| Error::Config(format!("noise: {e}")))?;
        for v in &mut image {
            *v += normal.sample(&mut rng);
        }
    }
    let image = Image::from_vec(
        h,
        w,
        image.iter().map(|v| v.clamp(0.0, 1.0) as f32).collect(),
    )?;
    Ok(WaferSample {
        image,
        labels,
        meta: WaferMeta {
            config: config.clone(),
            defects: stamps.into_iter().map(|s| s.geometry).collect(),
            rotation: 0,
        },
    })
}
