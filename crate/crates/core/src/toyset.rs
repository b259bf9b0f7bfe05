//! Procedural shapes-and-captions data.
//!
//! Each sample is one coloured, optionally striped shape on a textured
//! background, rasterized with integer arithmetic, captioned from a handful of
//! templates that mention the shape, its colour and its pattern (never the
//! background). Boundary maps come from a Sobel filter on luminance.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MimError, Result};
use crate::pnm::Raster;
use crate::text::{tokenize, Vocabulary};

pub const SHAPES: [&str; 3] = ["circle", "square", "triangle"];
pub const COLORS: [&str; 6] = ["red", "green", "blue", "yellow", "purple", "orange"];
pub const PATTERNS: [&str; 2] = ["solid", "striped"];
pub const BACKGROUNDS: [&str; 4] = ["plain", "checker", "dots", "gradient"];
pub const COMBINATIONS: usize = SHAPES.len() * COLORS.len() * PATTERNS.len() * BACKGROUNDS.len();

/// Fill colours in `[0, 255]`.
const COLOR_TABLE: [[u8; 3]; 6] = [
    [220, 40, 40],
    [40, 180, 60],
    [40, 80, 220],
    [235, 215, 40],
    [150, 50, 190],
    [245, 140, 30],
];

const TEMPLATES: [&str; 5] = [
    "a {pattern} {color} {shape}",
    "the {shape} is {color} and {pattern}",
    "this {color} {shape} has a {pattern} fill",
    "picture of a {color} {pattern} {shape}",
    "a {shape} colored {color} with {pattern} texture",
];

const TEMPLATE_WORDS: [&str; 12] = [
    "a", "the", "is", "and", "this", "has", "fill", "picture", "of", "colored", "with", "texture",
];

/// Render variants per attribute combination; half go to training.
pub const VARIANTS: usize = 64;

/// Bounds on the object's share of the image.
pub const MIN_AREA: f64 = 0.25;
pub const MAX_AREA: f64 = 0.60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Attributes {
    pub shape: usize,
    pub color: usize,
    pub pattern: usize,
    pub background: usize,
}

impl Attributes {
    pub fn from_index(i: usize) -> Self {
        assert!(i < COMBINATIONS);
        Attributes {
            shape: i % 3,
            color: (i / 3) % 6,
            pattern: (i / 18) % 2,
            background: i / 36,
        }
    }

    pub fn index(&self) -> usize {
        self.shape + 3 * self.color + 18 * self.pattern + 36 * self.background
    }

    /// The attributes a caption names; the background is never mentioned.
    pub fn caption_key(&self) -> usize {
        self.index() % 36
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape >= 3 || self.color >= 6 || self.pattern >= 2 || self.background >= 4 {
            return Err(MimError::Input(format!("attribute out of range: {self:?}")));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        format!(
            "{} {} {} on {}",
            COLORS[self.color], PATTERNS[self.pattern], SHAPES[self.shape], BACKGROUNDS[self.background]
        )
    }
}

/// The fixed caption vocabulary.
pub fn vocabulary() -> Vocabulary {
    let words = TEMPLATE_WORDS.iter().chain(&SHAPES).chain(&COLORS).chain(&PATTERNS);
    Vocabulary::from_tokens(words.copied()).expect("distinct words")
}

pub fn caption(attrs: &Attributes, template: usize) -> String {
    TEMPLATES[template % TEMPLATES.len()]
        .replace("{shape}", SHAPES[attrs.shape])
        .replace("{color}", COLORS[attrs.color])
        .replace("{pattern}", PATTERNS[attrs.pattern])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySample {
    pub id: usize,
    pub attrs: Attributes,
    pub size: usize,
    /// `3×S×S` planar, in `[−1, 1]`.
    pub image: Vec<f64>,
    /// `1×S×S`, in `[0, 1]`.
    pub boundary: Vec<f64>,
    /// `1×S×S`, 1 on object pixels. Evaluation only.
    pub mask: Vec<f64>,
    pub caption: String,
}

impl ToySample {
    pub fn object_fraction(&self) -> f64 {
        self.mask.iter().sum::<f64>() / self.mask.len() as f64
    }
}

fn inside(shape: usize, x: i64, y: i64, cx: i64, cy: i64, r: i64) -> bool {
    let (dx, dy) = (x - cx, y - cy);
    match shape {
        0 => 4 * (dx * dx + dy * dy) + 4 * (dx + dy) + 2 <= 4 * r * r,
        1 => dx >= -r && dx < r && dy >= -r && dy < r,
        _ => {
            // Apex at (cx, cy − r), base on y = cy + r − 1, width 2r at the base.
            let h = 2 * r;
            let row = dy + r;
            row >= 0 && row < h && 2 * dx.abs() * h <= (row + 1) * 2 * r
        }
    }
}

fn background(kind: usize, x: usize, y: usize, size: usize, phase: usize) -> [u8; 3] {
    match kind {
        0 => [128, 128, 128],
        1 => {
            let cell = (size / 8).max(1);
            if ((x + phase) / cell + (y / cell)).is_multiple_of(2) {
                [170, 170, 170]
            } else {
                [90, 90, 90]
            }
        }
        2 => {
            let cell = (size / 8).max(2);
            if (x + phase).is_multiple_of(cell) && y.is_multiple_of(cell) {
                [230, 230, 230]
            } else {
                [60, 60, 70]
            }
        }
        _ => {
            let v = (40 + 160 * ((x + y + phase) % (2 * size)) / (2 * size)) as u8;
            [v, v, (v as u16 * 3 / 4) as u8]
        }
    }
}

/// Deterministic raster of one attribute combination and variant seed.
pub fn render_sample(attrs: Attributes, seed: u64, size: usize) -> Result<ToySample> {
    attrs.validate()?;
    if size < 8 {
        return Err(MimError::Input(format!("image size {size} below 8")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(attrs.index() as u64);
    let plane = size * size;
    let s = size as i64;
    let mut mask = vec![false; plane];
    let mut tries = 0;
    loop {
        tries += 1;
        // Half extent: a third of the image, jittered.
        let lo = ((s as f64) * 0.26).ceil() as i64;
        let hi = ((s as f64) * 0.44).floor() as i64;
        let r = rng.gen_range(lo.min(hi)..=hi);
        let cx = rng.gen_range(r.min(s - r)..=(s - r).max(r));
        let cy = rng.gen_range(r.min(s - r)..=(s - r).max(r));
        let mut count = 0;
        for y in 0..size {
            for x in 0..size {
                let hit = inside(attrs.shape, x as i64, y as i64, cx, cy, r);
                mask[y * size + x] = hit;
                count += hit as usize;
            }
        }
        let frac = count as f64 / plane as f64;
        if (MIN_AREA..=MAX_AREA).contains(&frac) {
            break;
        }
        if tries > 1000 {
            return Err(MimError::Contract(format!("cannot place a {} at size {size}", SHAPES[attrs.shape])));
        }
    }
    let phase = rng.gen_range(0..size);
    let fill = COLOR_TABLE[attrs.color];
    let dark = fill.map(|c| c / 2);
    let stripe = (size / 8).max(2);
    let mut pixels = vec![[0u8; 3]; plane];
    for y in 0..size {
        for x in 0..size {
            let i = y * size + x;
            pixels[i] = if mask[i] {
                if attrs.pattern == 1 && ((x + y) / stripe) % 2 == 1 {
                    dark
                } else {
                    fill
                }
            } else {
                background(attrs.background, x, y, size, phase)
            };
        }
    }
    let mut image = vec![0.0; 3 * plane];
    for (i, px) in pixels.iter().enumerate() {
        for c in 0..3 {
            image[c * plane + i] = px[c] as f64 / 127.5 - 1.0;
        }
    }
    let template = rng.gen_range(0..TEMPLATES.len());
    Ok(ToySample {
        id: 0,
        attrs,
        size,
        boundary: boundary_extract(&image, size),
        image,
        mask: mask.iter().map(|&m| m as u8 as f64).collect(),
        caption: caption(&attrs, template),
    })
}

/// Normalizer: the largest Sobel magnitude a `[−1, 1]` luminance can reach.
pub const SOBEL_MAX: f64 = 8.0 * std::f64::consts::SQRT_2;

/// Sobel gradient magnitude of the luminance, replicate border, divided by
/// [`SOBEL_MAX`] and clamped to `[0, 1]`.
pub fn boundary_extract(image: &[f64], size: usize) -> Vec<f64> {
    let plane = size * size;
    assert_eq!(image.len(), 3 * plane);
    let lum: Vec<f64> = (0..plane)
        .map(|i| 0.299 * image[i] + 0.587 * image[plane + i] + 0.114 * image[2 * plane + i])
        .collect();
    let at = |x: isize, y: isize| {
        let cx = x.clamp(0, size as isize - 1) as usize;
        let cy = y.clamp(0, size as isize - 1) as usize;
        lum[cy * size + cx]
    };
    let mut out = vec![0.0; plane];
    for y in 0..size as isize {
        for x in 0..size as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            out[y as usize * size + x as usize] = ((gx * gx + gy * gy).sqrt() / SOBEL_MAX).clamp(0.0, 1.0);
        }
    }
    out
}

/// Train and test samples plus the combinations kept out of training.
#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub size: usize,
    pub train: Vec<ToySample>,
    pub test: Vec<ToySample>,
    pub held_out: BTreeSet<usize>,
}

/// Share of combinations never shown in training.
const HELD_OUT: usize = COMBINATIONS / 8;

fn every_value_covered(combos: &[usize]) -> bool {
    let attrs: Vec<Attributes> = combos.iter().map(|&i| Attributes::from_index(i)).collect();
    (0..3).all(|v| attrs.iter().any(|a| a.shape == v))
        && (0..6).all(|v| attrs.iter().any(|a| a.color == v))
        && (0..2).all(|v| attrs.iter().any(|a| a.pattern == v))
        && (0..4).all(|v| attrs.iter().any(|a| a.background == v))
}

/// Sample id of variant `v` of combination `c`.
pub fn sample_id(combination: usize, variant: usize) -> usize {
    combination * VARIANTS + variant
}

/// Round-robin over shuffled combinations, so attribute values stay
/// balanced. Training uses variants `0..VARIANTS/2` of the non-held-out
/// combinations; testing uses the other half of every combination, held-out
/// ones first.
pub fn make_split(count_train: usize, count_test: usize, seed: u64, size: usize) -> Result<ToyDataset> {
    if count_train == 0 || count_test == 0 {
        return Err(MimError::Input("split counts must be at least 1".into()));
    }
    let half = VARIANTS / 2;
    let train_capacity = (COMBINATIONS - HELD_OUT) * half;
    let test_capacity = COMBINATIONS * half;
    if count_train > train_capacity || count_test > test_capacity {
        return Err(MimError::Input(format!(
            "requested {count_train}/{count_test} samples, capacity is {train_capacity}/{test_capacity}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..COMBINATIONS).collect();
    loop {
        order.shuffle(&mut rng);
        if every_value_covered(&order[HELD_OUT..]) {
            break;
        }
    }
    let held_out: BTreeSet<usize> = order[..HELD_OUT].iter().copied().collect();
    let train_combos = &order[HELD_OUT..];

    let build = |combos: &[usize], count: usize, offset: usize| -> Result<Vec<ToySample>> {
        (0..count)
            .map(|k| {
                let combo = combos[k % combos.len()];
                let variant = offset + k / combos.len();
                let id = sample_id(combo, variant);
                let mut s = render_sample(Attributes::from_index(combo), seed ^ (id as u64).wrapping_mul(0x9e37_79b9), size)?;
                s.id = id;
                Ok(s)
            })
            .collect()
    };
    Ok(ToyDataset {
        size,
        train: build(train_combos, count_train, 0)?,
        test: build(&order, count_test, half)?,
        held_out,
    })
}

impl ToyDataset {
    /// Writes `images/`, `boundary/`, `masks/`, `captions.txt`, `manifest.txt`
    /// and `vocab.txt` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for sub in ["images", "boundary", "masks"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| MimError::io(&p, e))?;
        }
        let mut manifest = String::from("# id split shape color pattern background held_out\n");
        let mut captions = String::new();
        let s = self.size;
        for (split, samples) in [("train", &self.train), ("test", &self.test)] {
            for x in samples {
                let a = x.attrs;
                let held = self.held_out.contains(&a.index()) as u8;
                writeln!(
                    manifest,
                    "{} {split} {} {} {} {} {held}",
                    x.id, SHAPES[a.shape], COLORS[a.color], PATTERNS[a.pattern], BACKGROUNDS[a.background]
                )
                .expect("string write");
                captions.push_str(&x.caption);
                captions.push('\n');
                let name = format!("{:06}", x.id);
                Raster::from_planar(3, s, s, &x.image, -1.0, 1.0).save(&dir.join("images").join(format!("{name}.ppm")))?;
                Raster::from_planar(1, s, s, &x.boundary, 0.0, 1.0)
                    .save(&dir.join("boundary").join(format!("{name}.pgm")))?;
                Raster::from_planar(1, s, s, &x.mask, 0.0, 1.0).save(&dir.join("masks").join(format!("{name}.pgm")))?;
            }
        }
        let write = |name: &str, text: &str| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| MimError::io(&p, e))
        };
        write("manifest.txt", &manifest)?;
        write("captions.txt", &captions)?;
        write("vocab.txt", &vocabulary().to_text())
    }

    /// Reads a directory written by [`ToyDataset::save`]. Pixels come back
    /// quantized to 8 bits.
    pub fn load(dir: &Path) -> Result<(Self, Vocabulary)> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| MimError::io(&p, e))
        };
        let vocab = Vocabulary::parse(&read("vocab.txt")?)?;
        let manifest = read("manifest.txt")?;
        let captions = read("captions.txt")?;
        let mut captions = captions.lines();
        let lookup = |table: &[&str], v: &str| {
            table
                .iter()
                .position(|t| *t == v)
                .ok_or_else(|| MimError::format("manifest", format!("unknown attribute `{v}`")))
        };
        let mut data = ToyDataset {
            size: 0,
            train: Vec::new(),
            test: Vec::new(),
            held_out: BTreeSet::new(),
        };
        for (lineno, line) in manifest.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 7 {
                return Err(MimError::format("manifest", format!("line {}: expected 7 fields", lineno + 1)));
            }
            let id: usize = f[0]
                .parse()
                .map_err(|_| MimError::format("manifest", format!("line {}: bad id", lineno + 1)))?;
            let attrs = Attributes {
                shape: lookup(&SHAPES, f[2])?,
                color: lookup(&COLORS, f[3])?,
                pattern: lookup(&PATTERNS, f[4])?,
                background: lookup(&BACKGROUNDS, f[5])?,
            };
            if f[6] == "1" {
                data.held_out.insert(attrs.index());
            }
            let caption = captions
                .next()
                .ok_or_else(|| MimError::format("captions", "fewer captions than manifest rows"))?
                .to_string();
            tokenize(&caption, &vocab)?;
            let name = format!("{id:06}");
            let image = Raster::load(&dir.join("images").join(format!("{name}.ppm")))?;
            let boundary = Raster::load(&dir.join("boundary").join(format!("{name}.pgm")))?;
            let mask = Raster::load(&dir.join("masks").join(format!("{name}.pgm")))?;
            let size = image.width;
            if image.height != size || image.channels != 3 {
                return Err(MimError::format("dataset", format!("{name}.ppm is not a square RGB image")));
            }
            for (r, what) in [(&boundary, "boundary"), (&mask, "mask")] {
                if r.width != size || r.height != size || r.channels != 1 {
                    return Err(MimError::format("dataset", format!("{what} {name} does not match its image")));
                }
            }
            if data.size != 0 && data.size != size {
                return Err(MimError::format("dataset", "images of different sizes"));
            }
            data.size = size;
            let sample = ToySample {
                id,
                attrs,
                size,
                image: image.to_planar(-1.0, 1.0),
                boundary: boundary.to_planar(0.0, 1.0),
                mask: mask.to_planar(0.0, 1.0),
                caption,
            };
            match f[1] {
                "train" => data.train.push(sample),
                "test" => data.test.push(sample),
                other => return Err(MimError::format("manifest", format!("unknown split `{other}`"))),
            }
        }
        if data.train.is_empty() {
            return Err(MimError::Input(format!("{} has no training samples", dir.display())));
        }
        Ok((data, vocab))
    }
}
