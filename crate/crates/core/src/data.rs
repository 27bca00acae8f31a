//! Dataset index over an image directory plus attribute file, deterministic
//! splitting, and seeded per-epoch batch sampling with optional prefetch.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use image::RgbImage;
use patchwork_autograd::Array;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{AttrBatch, AttributeCode, ImageBatch};
use crate::error::{Error, Result};
use crate::imageio;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub path: PathBuf,
    pub attributes: AttributeCode,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    pub entries: Vec<Entry>,
    pub selected_attributes: Vec<String>,
    pub split_seed: u64,
    /// Rows skipped while loading (missing images, duplicates).
    pub warnings: Vec<String>,
}

impl DatasetIndex {
    pub fn new(entries: Vec<Entry>, selected_attributes: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.attributes.len() != selected_attributes.len() {
                return Err(Error::Argument(format!(
                    "{} has {} attribute bits, expected {}",
                    e.path.display(),
                    e.attributes.len(),
                    selected_attributes.len()
                )));
            }
            if !seen.insert(&e.path) {
                return Err(Error::Argument(format!(
                    "{} appears twice in the index",
                    e.path.display()
                )));
            }
        }
        Ok(Self {
            entries,
            selected_attributes,
            split_seed: 0,
            warnings: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn attribute_position(&self, name: &str) -> Option<usize> {
        self.selected_attributes
            .iter()
            .position(|a| a.eq_ignore_ascii_case(name))
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            entries: idx.iter().map(|&i| self.entries[i].clone()).collect(),
            selected_attributes: self.selected_attributes.clone(),
            split_seed: self.split_seed,
            warnings: Vec::new(),
        }
    }
}

/// Reads an attribute file in CelebA `list_attr_celeba.txt` layout (count
/// line, header line of names, then `file flag flag ...` rows) or, when the
/// first line contains a comma, a CSV with a header whose first column is
/// the file name. Flags `+1`/`1` mean present, `-1`/`0` absent.
pub fn load_index(
    root_dir: &Path,
    attr_file: &Path,
    selected_attributes: &[String],
) -> Result<DatasetIndex> {
    let text = std::fs::read_to_string(attr_file).map_err(|e| Error::io(attr_file, e))?;
    let (header, rows) = if text.lines().next().is_some_and(|l| l.contains(',')) {
        parse_csv(&text, attr_file)?
    } else {
        parse_celeba(&text, attr_file)?
    };

    let columns: Vec<usize> = selected_attributes
        .iter()
        .map(|name| {
            header.iter().position(|h| h == name).ok_or_else(|| {
                Error::Config(format!(
                    "attribute column '{name}' not found in {}",
                    attr_file.display()
                ))
            })
        })
        .collect::<Result<_>>()?;

    let mut entries = Vec::with_capacity(rows.len());
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    for (line, (file, flags)) in rows.into_iter().enumerate() {
        if flags.len() != header.len() {
            return Err(Error::data(
                attr_file,
                format!(
                    "row {} ('{file}') has {} flags for {} columns",
                    line + 1,
                    flags.len(),
                    header.len()
                ),
            ));
        }
        let path = root_dir.join(&file);
        if !path.is_file() {
            log::warn!("skipping {}: image not found", path.display());
            warnings.push(format!("missing image {}", path.display()));
            continue;
        }
        if !seen.insert(path.clone()) {
            warnings.push(format!("duplicate row for {}", path.display()));
            continue;
        }
        let bits = columns.iter().map(|&c| flags[c]).collect();
        entries.push(Entry {
            path,
            attributes: AttributeCode::new(bits)?,
        });
    }
    let mut index = DatasetIndex::new(entries, selected_attributes.to_vec())?;
    index.warnings = warnings;
    Ok(index)
}

type Rows = Vec<(String, Vec<u8>)>;

fn parse_flag(tok: &str, path: &Path) -> Result<u8> {
    match tok.trim() {
        "1" | "+1" => Ok(1),
        "-1" | "0" => Ok(0),
        other => Err(Error::data(path, format!("unrecognized attribute flag '{other}'"))),
    }
}

fn parse_celeba(text: &str, path: &Path) -> Result<(Vec<String>, Rows)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let count_line = lines
        .next()
        .ok_or_else(|| Error::data(path, "empty attribute file"))?;
    let declared: usize = count_line
        .trim()
        .parse()
        .map_err(|_| Error::data(path, "first line must be the row count"))?;
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::data(path, "missing attribute header line"))?
        .split_whitespace()
        .map(String::from)
        .collect();
    let mut rows = Vec::with_capacity(declared);
    for l in lines {
        let mut toks = l.split_whitespace();
        let file = toks.next().unwrap().to_string();
        let flags = toks.map(|t| parse_flag(t, path)).collect::<Result<_>>()?;
        rows.push((file, flags));
    }
    if rows.len() != declared {
        log::warn!(
            "{} declares {declared} rows but has {}",
            path.display(),
            rows.len()
        );
    }
    Ok((header, rows))
}

fn parse_csv(text: &str, path: &Path) -> Result<(Vec<String>, Rows)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::data(path, e.to_string()))?
        .iter()
        .skip(1)
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::data(path, e.to_string()))?;
        let file = rec.get(0).unwrap_or_default().to_string();
        let flags = rec
            .iter()
            .skip(1)
            .map(|t| parse_flag(t, path))
            .collect::<Result<_>>()?;
        rows.push((file, flags));
    }
    Ok((header, rows))
}

/// Seeded disjoint partition into `(train, test)`; each side keeps the
/// index order.
pub fn split(index: &DatasetIndex, n_test: usize, seed: u64) -> Result<(DatasetIndex, DatasetIndex)> {
    if n_test > index.len() {
        return Err(Error::Argument(format!(
            "cannot hold out {n_test} of {} entries",
            index.len()
        )));
    }
    let mut order: Vec<usize> = (0..index.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test: Vec<usize> = order[..n_test].to_vec();
    let mut train: Vec<usize> = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    let mut tr = index.subset(&train);
    let mut te = index.subset(&test);
    tr.split_seed = seed;
    te.split_seed = seed;
    Ok((tr, te))
}

/// Index plus decoded-image cache at a fixed training resolution.
///
/// Decoded pixels are cached as 8-bit crops, so the cache is shareable
/// between a prefetch thread and the consumer.
pub struct Dataset {
    index: DatasetIndex,
    image_size: u32,
    cache: Mutex<Vec<Option<Arc<RgbImage>>>>,
}

impl Dataset {
    pub fn new(index: DatasetIndex, image_size: usize) -> Self {
        let n = index.len();
        Self {
            index,
            image_size: image_size as u32,
            cache: Mutex::new(vec![None; n]),
        }
    }

    pub fn index(&self) -> &DatasetIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.image_size as usize
    }

    pub fn rgb(&self, i: usize) -> Result<Arc<RgbImage>> {
        if let Some(img) = &self.cache.lock().unwrap()[i] {
            return Ok(Arc::clone(img));
        }
        let path = &self.index.entries[i].path;
        let img = Arc::new(imageio::crop_resize_rgb(
            &imageio::load_rgb(path)?,
            self.image_size,
            path,
        )?);
        self.cache.lock().unwrap()[i] = Some(Arc::clone(&img));
        Ok(img)
    }

    /// Images and attribute rows for `indices`, row-aligned.
    pub fn gather(&self, indices: &[usize]) -> Result<(ImageBatch, AttrBatch)> {
        let s = self.image_size();
        let mut data = Vec::with_capacity(indices.len() * 3 * s * s);
        for &i in indices {
            let img = self.rgb(i)?;
            data.extend(imageio::rgb_to_chw(&img));
        }
        let images = ImageBatch::new(Array::from_vec(vec![indices.len(), 3, s, s], data).unwrap())?;
        let attrs = AttrBatch::new(
            indices
                .iter()
                .map(|&i| self.index.entries[i].attributes.clone())
                .collect(),
        )?;
        Ok((images, attrs))
    }

    /// The whole dataset in index order, chunked.
    pub fn chunks(&self, chunk: usize) -> impl Iterator<Item = Result<(ImageBatch, AttrBatch)>> + '_ {
        let n = self.len();
        (0..n)
            .step_by(chunk.max(1))
            .map(move |start| self.gather(&(start..(start + chunk).min(n)).collect::<Vec<_>>()))
    }
}

/// Position of a [`BatchSampler`]; enough to resume the exact sample order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerState {
    pub epoch: u64,
    pub cursor: usize,
}

/// Walks a fresh seeded permutation each epoch. Batches straddle epoch
/// boundaries, so every batch has exactly `batch_size` rows.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    seed: u64,
    len: usize,
    state: SamplerState,
    perm: Vec<usize>,
}

impl BatchSampler {
    pub fn new(len: usize, seed: u64) -> Result<Self> {
        Self::resume(len, seed, SamplerState::default())
    }

    pub fn resume(len: usize, seed: u64, state: SamplerState) -> Result<Self> {
        if len == 0 {
            return Err(Error::State("cannot sample from an empty dataset".into()));
        }
        if state.cursor > len {
            return Err(Error::State(format!(
                "sampler cursor {} beyond dataset of {len}",
                state.cursor
            )));
        }
        let perm = Self::permutation(seed, state.epoch, len);
        Ok(Self {
            seed,
            len,
            state,
            perm,
        })
    }

    fn permutation(seed: u64, epoch: u64, len: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        let mut p: Vec<usize> = (0..len).collect();
        p.shuffle(&mut rng);
        p
    }

    pub fn state(&self) -> SamplerState {
        self.state
    }

    pub fn next_indices(&mut self, batch_size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch_size);
        while out.len() < batch_size {
            if self.state.cursor == self.len {
                self.state.epoch += 1;
                self.state.cursor = 0;
                self.perm = Self::permutation(self.seed, self.state.epoch, self.len);
            }
            out.push(self.perm[self.state.cursor]);
            self.state.cursor += 1;
        }
        out
    }
}

/// Draws the next `batch_size` samples.
pub fn next_batch(
    dataset: &Dataset,
    sampler: &mut BatchSampler,
    batch_size: usize,
) -> Result<(ImageBatch, AttrBatch)> {
    if dataset.is_empty() {
        return Err(Error::State("cannot draw a batch from an empty dataset".into()));
    }
    dataset.gather(&sampler.next_indices(batch_size))
}

/// A batch together with the sampler position right after it.
pub struct Prefetched {
    pub images: ImageBatch,
    pub attrs: AttrBatch,
    pub state_after: SamplerState,
}

/// Decodes batches on a worker thread, in exactly the order the sampler
/// would produce them inline.
pub struct Prefetcher {
    rx: Option<Receiver<Result<Prefetched>>>,
    handle: Option<JoinHandle<()>>,
}

impl Prefetcher {
    pub fn spawn(
        dataset: Arc<Dataset>,
        mut sampler: BatchSampler,
        batch_size: usize,
        depth: usize,
    ) -> Self {
        let (tx, rx) = sync_channel(depth.max(1));
        let handle = std::thread::spawn(move || loop {
            let indices = sampler.next_indices(batch_size);
            let item = dataset.gather(&indices).map(|(images, attrs)| Prefetched {
                images,
                attrs,
                state_after: sampler.state(),
            });
            let failed = item.is_err();
            if tx.send(item).is_err() || failed {
                break;
            }
        });
        Self {
            rx: Some(rx),
            handle: Some(handle),
        }
    }

    pub fn recv(&mut self) -> Result<Prefetched> {
        self.rx
            .as_ref()
            .and_then(|rx| rx.recv().ok())
            .unwrap_or_else(|| Err(Error::State("prefetch worker stopped".into())))
    }
}

impl Drop for Prefetcher {
    fn drop(&mut self) {
        // closing the channel unblocks the worker's pending send
        self.rx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
