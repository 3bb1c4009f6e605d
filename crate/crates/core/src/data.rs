//! Synthetic long-range cue task and dataset directories.
//!
//! Every cue-task sample has three kinds of cells:
//!
//! * background (class 0): dark gray noise;
//! * one square *ambiguous region*: light noise drawn from a single sampler
//!   regardless of its class;
//! * one square *cue block*: a saturated colour that encodes the class.
//!
//! The ambiguous region and the cue block share a class drawn uniformly from
//! `1..classes`, so the region's label can only be recovered from the distant
//! cue. The two block centres are at least half the grid diagonal apart.
//!
//! Dataset directories hold `images/NNNN.ppm`, `labels/NNNN.pgm` (class id
//! per pixel) and `meta.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::LabelGrid;
use crate::grid_dag::{Coord, GridShape};
use crate::numerics::rng_from_seed;
use crate::pnm::{load_labels, load_ppm, save_pgm, save_ppm, RgbImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CueTaskConfig {
    pub grid: GridShape,
    pub classes: usize,
    /// Pixels per cell side.
    pub patch: usize,
    /// Side of the ambiguous region, in cells.
    pub region: usize,
    /// Side of the cue block, in cells.
    pub cue: usize,
}

impl CueTaskConfig {
    /// Blocks of a quarter of the shorter grid side.
    pub fn new(grid: GridShape, classes: usize, patch: usize) -> Self {
        let side = (grid.height.min(grid.width) / 4).max(1);
        CueTaskConfig {
            grid,
            classes,
            patch,
            region: side,
            cue: side,
        }
    }

    pub fn min_distance(&self) -> f64 {
        0.5 * ((self.grid.height.pow(2) + self.grid.width.pow(2)) as f64).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.height < 6 || self.grid.width < 6 {
            return Err(Error::InvalidArgument(format!("cue task needs a grid of at least 6x6, got {}", self.grid)));
        }
        if self.classes < 3 || self.classes > 255 {
            return Err(Error::InvalidArgument(format!(
                "cue task needs 3..=255 classes, got {}",
                self.classes
            )));
        }
        if self.patch == 0 || self.region == 0 || self.cue == 0 {
            return Err(Error::InvalidArgument("patch and block sizes must be positive".into()));
        }
        if placements(self).is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no region/cue placement is {:.2} cells apart on {}",
                self.min_distance(),
                self.grid
            )));
        }
        Ok(())
    }
}

/// Axis-aligned square block of cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Block {
    pub row: usize,
    pub col: usize,
    pub size: usize,
}

impl Block {
    pub fn contains(&self, c: Coord) -> bool {
        (self.row..self.row + self.size).contains(&c.row) && (self.col..self.col + self.size).contains(&c.col)
    }

    pub fn cells(&self) -> impl Iterator<Item = Coord> + '_ {
        (self.row..self.row + self.size)
            .flat_map(move |r| (self.col..self.col + self.size).map(move |c| Coord::new(r, c)))
    }

    fn center(&self) -> (f64, f64) {
        let half = self.size as f64 / 2.0;
        (self.row as f64 + half, self.col as f64 + half)
    }

    fn distance(&self, other: &Block) -> f64 {
        let (a, b) = (self.center(), other.center());
        ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleMeta {
    /// Dataset generator seed.
    pub seed: u64,
    pub task_id: usize,
    pub region: Block,
    pub cue: Block,
    pub cue_class: u8,
}

/// One image with per-pixel labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    pub labels: LabelGrid,
    pub meta: SampleMeta,
}

impl Sample {
    pub fn ambiguous_cells(&self) -> Vec<Coord> {
        self.meta.region.cells().collect()
    }

    pub fn cue_cells(&self) -> Vec<Coord> {
        self.meta.cue.cells().collect()
    }
}

/// Every valid (region, cue) pair, grouped by region position.
fn placements(cfg: &CueTaskConfig) -> Vec<(Block, Vec<Block>)> {
    let blocks = |size: usize| -> Vec<Block> {
        if size > cfg.grid.height || size > cfg.grid.width {
            return Vec::new();
        }
        (0..=cfg.grid.height - size)
            .flat_map(|row| (0..=cfg.grid.width - size).map(move |col| Block { row, col, size }))
            .collect()
    };
    let cues = blocks(cfg.cue);
    let min = cfg.min_distance();
    blocks(cfg.region)
        .into_iter()
        .filter_map(|region| {
            let valid: Vec<Block> = cues.iter().copied().filter(|c| region.distance(c) >= min).collect();
            (!valid.is_empty()).then_some((region, valid))
        })
        .collect()
}

/// Evenly spaced saturated hues, one per foreground class.
pub fn cue_color(class: u8, classes: usize) -> [u8; 3] {
    let hue = (class as f64 - 1.0) / (classes as f64 - 1.0) * 6.0;
    let x = 1.0 - ((hue % 2.0) - 1.0).abs();
    let (r, g, b) = match hue as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [(r * 215.0 + 20.0) as u8, (g * 215.0 + 20.0) as u8, (b * 215.0 + 20.0) as u8]
}

fn sample_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Light noise used for every ambiguous cell, whatever its class.
fn ambiguous_pixel(rng: &mut impl Rng) -> [u8; 3] {
    [rng.gen_range(140..=220), rng.gen_range(140..=220), rng.gen_range(140..=220)]
}

fn background_pixel(rng: &mut impl Rng) -> [u8; 3] {
    let v = rng.gen_range(20..=90);
    [v, v, v]
}

fn generate_one(cfg: &CueTaskConfig, table: &[(Block, Vec<Block>)], seed: u64, task_id: usize) -> Sample {
    let mut rng = rng_from_seed(sample_seed(seed, task_id));
    let (region, cues) = &table[rng.gen_range(0..table.len())];
    let cue = cues[rng.gen_range(0..cues.len())];
    let cue_class = rng.gen_range(1..cfg.classes) as u8;
    let base = cue_color(cue_class, cfg.classes);

    let k = cfg.patch;
    let mut image = RgbImage::new(cfg.grid.width * k, cfg.grid.height * k);
    let mut labels = LabelGrid::filled(GridShape::new(image.height, image.width), 0);
    for r in 0..image.height {
        for c in 0..image.width {
            let cell = Coord::new(r / k, c / k);
            let (px, label) = if region.contains(cell) {
                (ambiguous_pixel(&mut rng), cue_class)
            } else if cue.contains(cell) {
                let jitter = |v: u8, rng: &mut rand_chacha::ChaCha8Rng| (v as i32 + rng.gen_range(-15..=15)).clamp(0, 255) as u8;
                ([jitter(base[0], &mut rng), jitter(base[1], &mut rng), jitter(base[2], &mut rng)], cue_class)
            } else {
                (background_pixel(&mut rng), 0)
            };
            image.put(r, c, px);
            labels.set(Coord::new(r, c), label);
        }
    }
    Sample {
        image,
        labels,
        meta: SampleMeta {
            seed,
            task_id,
            region: *region,
            cue,
            cue_class,
        },
    }
}

/// `count` samples, each determined by `(seed, index)`.
pub fn generate_cue_task(seed: u64, count: usize, cfg: &CueTaskConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let table = placements(cfg);
    Ok((0..count).map(|i| generate_one(cfg, &table, seed, i)).collect())
}

/// Accuracy of the best classifier of the ambiguous region that sees one
/// cell at a time: the classes are equiprobable and share one appearance
/// distribution.
pub fn ambiguous_bayes_bound(classes: usize) -> f64 {
    1.0 / (classes as f64 - 1.0)
}

/// Plug-in estimate of per-cell Bayes accuracy on ambiguous cells, using the
/// cell's mean intensity quantized into `bins` buckets as the local
/// appearance.
pub fn empirical_local_bayes(samples: &[Sample], patch: usize, bins: usize) -> f64 {
    let mut counts = vec![[0usize; 256]; bins];
    let mut total = 0usize;
    for s in samples {
        for cell in s.ambiguous_cells() {
            let mut sum = 0u64;
            for r in cell.row * patch..(cell.row + 1) * patch {
                for c in cell.col * patch..(cell.col + 1) * patch {
                    sum += s.image.pixel(r, c).iter().map(|&v| v as u64).sum::<u64>();
                }
            }
            let mean = sum as f64 / (3 * patch * patch) as f64;
            let bin = ((mean / 256.0) * bins as f64) as usize;
            counts[bin.min(bins - 1)][s.meta.cue_class as usize] += 1;
            total += 1;
        }
    }
    let correct: usize = counts.iter().map(|c| *c.iter().max().unwrap_or(&0)).sum();
    correct as f64 / total.max(1) as f64
}

/// Seeded permutation split into `(train, rest)` with
/// `round(train_fraction * len)` training samples.
pub fn split<S: Clone>(dataset: &[S], train_fraction: f64, seed: u64) -> Result<(Vec<S>, Vec<S>)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::InvalidArgument(format!("train fraction {train_fraction} outside [0, 1]")));
    }
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let cut = (train_fraction * dataset.len() as f64).round() as usize;
    let pick = |ids: &[usize]| ids.iter().map(|&i| dataset[i].clone()).collect();
    Ok((pick(&idx[..cut]), pick(&idx[cut..])))
}

const META_HEADER: &str = "id,seed,task_id,region_row,region_col,region_size,cue_row,cue_col,cue_size,cue_class";

pub fn save_dataset(dir: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("labels"))?;
    let mut meta = String::from(META_HEADER);
    meta.push('\n');
    for (i, s) in samples.iter().enumerate() {
        save_ppm(&s.image, dir.join("images").join(format!("{i:04}.ppm")))?;
        save_pgm(&s.labels, dir.join("labels").join(format!("{i:04}.pgm")))?;
        let m = &s.meta;
        writeln!(
            meta,
            "{i:04},{},{},{},{},{},{},{},{},{}",
            m.seed, m.task_id, m.region.row, m.region.col, m.region.size, m.cue.row, m.cue.col, m.cue.size, m.cue_class
        )
        .expect("write to String");
    }
    fs::write(dir.join("meta.csv"), meta)?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join("meta.csv"))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(META_HEADER) {
        return Err(Error::format("meta.csv", "unexpected header"));
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::format("meta.csv", format!("line {}: `{line}`", n + 2));
        if fields.len() != 10 {
            return Err(bad());
        }
        let num = |k: usize| fields[k].parse::<u64>().map_err(|_| bad());
        let id = fields[0];
        let meta = SampleMeta {
            seed: num(1)?,
            task_id: num(2)? as usize,
            region: Block {
                row: num(3)? as usize,
                col: num(4)? as usize,
                size: num(5)? as usize,
            },
            cue: Block {
                row: num(6)? as usize,
                col: num(7)? as usize,
                size: num(8)? as usize,
            },
            cue_class: u8::try_from(num(9)?).map_err(|_| bad())?,
        };
        let image = load_ppm(dir.join("images").join(format!("{id}.ppm")))?;
        let labels = load_labels(dir.join("labels").join(format!("{id}.pgm")))?;
        if labels.shape() != image.shape() {
            return Err(Error::shape("load_dataset", image.shape(), labels.shape()));
        }
        out.push(Sample { image, labels, meta });
    }
    Ok(out)
}
